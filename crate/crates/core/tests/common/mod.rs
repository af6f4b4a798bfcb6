//! Independent reference computations shared by the integration tests.
//! Everything here uses nalgebra or plain enumeration, never the library's
//! own recursions.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use snica_core::expfam::GaussianNat;
use snica_core::numerics::Matrix;

pub fn rng(seed: u64) -> ChaCha8Rng {
    use rand::SeedableRng;
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn to_na(m: &Matrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.as_slice())
}

pub fn from_na(m: &DMatrix<f64>) -> Matrix {
    Matrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

pub fn randn(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// Random SPD matrix with eigenvalues roughly in `[lo, lo + spread]`.
pub fn random_spd(rng: &mut ChaCha8Rng, d: usize, lo: f64) -> Matrix {
    let a = randn(rng, d, d);
    a.matmul_t(&a).scale(1.0 / d as f64).add(&Matrix::identity(d).scale(lo))
}

/// Random matrix rescaled to spectral norm `radius`.
pub fn random_contraction(rng: &mut ChaCha8Rng, d: usize, radius: f64) -> Matrix {
    let a = randn(rng, d, d);
    let sv = to_na(&a).singular_values();
    a.scale(radius / sv.max())
}

/// Brute-force HMM posterior: enumerates all `K^T` paths of the chain with
/// weights `π(u₁)·Π A(u_{t−1}, u_t)·exp(Σ_t ρ_t(u_t))`.
/// Returns `(γ, ξ, log Z)`.
pub fn hmm_enumerate(rho: &Matrix, init: &[f64], trans: &Matrix) -> (Matrix, Vec<Matrix>, f64) {
    let (t_len, k) = rho.shape();
    let total = k.pow(t_len as u32);
    let mut weights = Vec::with_capacity(total);
    let mut paths = Vec::with_capacity(total);
    for code in 0..total {
        let mut path = vec![0; t_len];
        let mut c = code;
        for p in path.iter_mut() {
            *p = c % k;
            c /= k;
        }
        let mut lw = init[path[0]].ln() + rho[(0, path[0])];
        for t in 1..t_len {
            lw += trans[(path[t - 1], path[t])].ln() + rho[(t, path[t])];
        }
        weights.push(lw);
        paths.push(path);
    }
    let max = weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = weights.iter().map(|w| (w - max).exp()).sum();
    let log_z = max + z.ln();
    let mut gamma = Matrix::zeros(t_len, k);
    let mut xi = vec![Matrix::zeros(k, k); t_len - 1];
    for (w, path) in weights.iter().zip(&paths) {
        let p = (w - log_z).exp();
        for t in 0..t_len {
            gamma[(t, path[t])] += p;
            if t + 1 < t_len {
                xi[t][(path[t], path[t + 1])] += p;
            }
        }
    }
    (gamma, xi, log_z)
}

/// Dense Gaussian-chain oracle: assembles the full `Td × Td` quadratic form
/// of `init(y₁) + Σ node_t(y_t) + Σ pair_t(y_t, y_{t+1})` and inverts it.
pub struct DenseChain {
    pub means: Vec<DVector<f64>>,
    pub covs: Vec<DMatrix<f64>>,
    /// `Cov(y_t, y_{t+1})`.
    pub cross: Vec<DMatrix<f64>>,
    pub log_z: f64,
}

pub fn dense_chain(init: &GaussianNat, nodes: &[GaussianNat], pairs: &[GaussianNat]) -> DenseChain {
    let t_len = nodes.len();
    let d = nodes[0].h.len();
    let n = t_len * d;
    let mut jm = DMatrix::<f64>::zeros(n, n);
    let mut h = DVector::<f64>::zeros(n);
    let mut c = init.c;
    let mut add = |g: &GaussianNat, offset: usize| {
        let m = g.h.len();
        for i in 0..m {
            h[offset + i] += g.h[i];
            for j in 0..m {
                jm[(offset + i, offset + j)] += g.j[(i, j)];
            }
        }
    };
    add(init, 0);
    for (t, g) in nodes.iter().enumerate() {
        add(g, t * d);
        c += g.c;
    }
    for (t, g) in pairs.iter().enumerate() {
        add(g, t * d);
        c += g.c;
    }
    let prec = -2.0 * jm;
    let chol = prec.clone().cholesky().expect("dense precision must be SPD");
    let cov = chol.inverse();
    let mean = &cov * &h;
    let logdet: f64 = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let log_z = c + 0.5 * h.dot(&mean) + 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln() - 0.5 * logdet;
    DenseChain {
        means: (0..t_len).map(|t| mean.rows(t * d, d).into_owned()).collect(),
        covs: (0..t_len).map(|t| cov.view((t * d, t * d), (d, d)).into_owned()).collect(),
        cross: (0..t_len - 1)
            .map(|t| cov.view((t * d, (t + 1) * d), (d, d)).into_owned())
            .collect(),
        log_z,
    }
}

/// Linear-Gaussian state-space model in standard form:
/// `z₁ ~ N(m₀, P₀)`, `z_t = F z_{t−1} + c + w`, `w ~ N(0, W)`,
/// `x_t = H z_t + e + v`, `v ~ N(0, V)`.
pub struct Lgssm {
    pub m0: DVector<f64>,
    pub p0: DMatrix<f64>,
    pub f: DMatrix<f64>,
    pub c: DVector<f64>,
    pub w: DMatrix<f64>,
    pub h: DMatrix<f64>,
    pub e: DVector<f64>,
    pub v: DMatrix<f64>,
}

/// Exact `log p(x_{1:T})` by the Kalman filter prediction-error decomposition.
pub fn kalman_log_likelihood(model: &Lgssm, x: &Matrix) -> f64 {
    let mut m = model.m0.clone();
    let mut p = model.p0.clone();
    let mut ll = 0.0;
    let dim = x.cols() as f64;
    for t in 0..x.rows() {
        if t > 0 {
            m = &model.f * &m + &model.c;
            p = &model.f * &p * model.f.transpose() + &model.w;
        }
        let xt = DVector::from_row_slice(x.row(t));
        let resid = xt - (&model.h * &m + &model.e);
        let s = &model.h * &p * model.h.transpose() + &model.v;
        let s_chol = s.clone().cholesky().expect("innovation covariance SPD");
        let s_inv = s_chol.inverse();
        let logdet: f64 = 2.0 * s_chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        ll += -0.5 * (dim * (2.0 * std::f64::consts::PI).ln() + logdet + resid.dot(&(&s_inv * &resid)));
        let gain = &p * model.h.transpose() * &s_inv;
        m = &m + &gain * resid;
        p = &p - &gain * &model.h * &p;
        p = 0.5 * (&p + p.transpose());
    }
    ll
}

/// Central difference of `f` along coordinate `idx` of a parameter tensor.
pub fn central_diff(f: &mut dyn FnMut(f64) -> f64, step: f64) -> f64 {
    (f(step) - f(-step)) / (2.0 * step)
}
