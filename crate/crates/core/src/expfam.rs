//! Gaussians in natural-parameter form and the block operations used by the
//! chain recursions.
//!
//! A [`GaussianNat`] represents the unnormalized log-density
//! `⟨h, y⟩ + yᵀ J y + c`. `J` is symmetric negative (semi-)definite. The
//! scalar `c` is carried explicitly so that chain log-partitions and ELBO
//! terms can be evaluated exactly rather than up to proportionality.

use crate::numerics::{
    cholesky, cholesky_solve, cholesky_solve_vec, dot, inverse_from_cholesky,
    logdet_from_cholesky, Matrix, NumericsError,
};

const LN_PI: f64 = 1.144_729_885_849_400_2;
const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianNat {
    pub h: Vec<f64>,
    pub j: Matrix,
    /// Additive log-constant.
    pub c: f64,
}

/// Log-potentials of a categorical variable.
#[derive(Debug, Clone, PartialEq)]
pub struct CategoricalNat {
    pub log_weights: Vec<f64>,
}

impl CategoricalNat {
    pub fn from_probs(p: &[f64]) -> Self {
        Self {
            log_weights: p.iter().map(|v| v.ln()).collect(),
        }
    }

    pub fn log_normalizer(&self) -> f64 {
        log_sum_exp(&self.log_weights)
    }

    pub fn probs(&self) -> Vec<f64> {
        let z = self.log_normalizer();
        self.log_weights.iter().map(|w| (w - z).exp()).collect()
    }
}

pub fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

impl GaussianNat {
    pub fn new(h: Vec<f64>, j: Matrix) -> Self {
        assert_eq!(h.len(), j.rows(), "h/J dimension mismatch");
        Self { h, j, c: 0.0 }
    }

    /// The zero potential (flat, unnormalized) over `dim` variables.
    pub fn zero(dim: usize) -> Self {
        Self::new(vec![0.0; dim], Matrix::zeros(dim, dim))
    }

    pub fn dim(&self) -> usize {
        self.h.len()
    }

    /// `⟨h, y⟩ + yᵀJy + c`.
    pub fn eval(&self, y: &[f64]) -> f64 {
        dot(&self.h, y) + dot(y, &self.j.matvec(y)) + self.c
    }

    /// Sum of two potentials over the same variables.
    pub fn add(&self, other: &GaussianNat) -> GaussianNat {
        assert_eq!(self.dim(), other.dim(), "potential dimension mismatch");
        GaussianNat {
            h: self.h.iter().zip(&other.h).map(|(a, b)| a + b).collect(),
            j: self.j.add(&other.j).symmetrize(),
            c: self.c + other.c,
        }
    }

    pub fn scale(&self, w: f64) -> GaussianNat {
        GaussianNat {
            h: self.h.iter().map(|v| v * w).collect(),
            j: self.j.scale(w),
            c: self.c * w,
        }
    }

    /// `self += w · other`, used for responsibility-weighted blending.
    pub fn add_scaled(&mut self, w: f64, other: &GaussianNat) {
        for (a, b) in self.h.iter_mut().zip(&other.h) {
            *a += w * b;
        }
        self.j.axpy(w, &other.j);
        self.c += w * other.c;
    }

    /// Adds a potential on the sub-block starting at `offset`.
    pub fn add_on_block(&mut self, offset: usize, other: &GaussianNat) {
        for (i, v) in other.h.iter().enumerate() {
            self.h[offset + i] += v;
        }
        self.j.add_block(offset, offset, &other.j);
        self.c += other.c;
    }

    /// Expectation of the potential (including `c`) under a Gaussian with the
    /// given mean and covariance: `hᵀm + tr(JΣ) + mᵀJm + c`.
    pub fn expected_value(&self, mean: &[f64], cov: &Matrix) -> f64 {
        let mut tr = 0.0;
        for i in 0..self.dim() {
            for k in 0..self.dim() {
                tr += self.j[(i, k)] * cov[(k, i)];
            }
        }
        dot(&self.h, mean) + tr + dot(mean, &self.j.matvec(mean)) + self.c
    }

    /// Precision `−2J`.
    pub fn precision(&self) -> Matrix {
        self.j.scale(-2.0)
    }
}

/// Natural parameters of `N(mean, cov)` as a normalized log-density.
///
/// `h = cov⁻¹·mean`, `J = −½·cov⁻¹`, and `c` set so that the potential equals
/// the log-density.
pub fn nat_from_moments(mean: &[f64], cov: &Matrix) -> Result<GaussianNat, NumericsError> {
    let l = cholesky(cov)?;
    let prec = inverse_from_cholesky(&l);
    let h = cholesky_solve_vec(&l, mean);
    let mut g = GaussianNat::new(h, prec.scale(-0.5));
    g.c = -log_normalizer(&g)?;
    Ok(g)
}

/// Mean and covariance of a proper natural-parameter Gaussian: `cov = (−2J)⁻¹`,
/// `mean = cov·h`.
pub fn moments_from_nat(g: &GaussianNat) -> Result<(Vec<f64>, Matrix), NumericsError> {
    let l = cholesky(&g.precision())?;
    let cov = inverse_from_cholesky(&l);
    let mean = cholesky_solve_vec(&l, &g.h);
    Ok((mean, cov))
}

/// `log ∫ exp(⟨h,y⟩ + yᵀJy) dy = ¼hᵀ(−J)⁻¹h + ½·logdet(π·(−J)⁻¹)`.
///
/// The carried constant `c` is not included.
pub fn log_normalizer(g: &GaussianNat) -> Result<f64, NumericsError> {
    let neg_j = g.j.scale(-1.0);
    let l = cholesky(&neg_j)?;
    let x = cholesky_solve_vec(&l, &g.h);
    let d = g.dim() as f64;
    Ok(0.25 * dot(&g.h, &x) + 0.5 * (d * LN_PI - logdet_from_cholesky(&l)))
}

/// `log ∫ exp(potential)`, including the carried constant.
pub fn log_partition(g: &GaussianNat) -> Result<f64, NumericsError> {
    Ok(log_normalizer(g)? + g.c)
}

/// Log-normalizer of the conditional `N(y′; By + b, Q⁻¹)` written as an
/// unnormalized pair potential: `½bᵀQb − ½logdet Q + (d/2)log 2π`.
pub fn pair_log_normalizer(b: &[f64], q: &Matrix) -> Result<f64, NumericsError> {
    let l = cholesky(q)?;
    let d = b.len() as f64;
    Ok(0.5 * dot(b, &q.matvec(b)) - 0.5 * logdet_from_cholesky(&l) + 0.5 * d * LN_2PI)
}

/// Potential over the stacked pair `(y, y′)` equal to `log N(y′; By + b, Q⁻¹)`.
///
/// `J = −½·[[BᵀQB, −BᵀQ], [−QB, Q]]`, `h = (−BᵀQb, Qb)`, and `c` is minus
/// [`pair_log_normalizer`].
pub fn pair_potential(
    b_mat: &Matrix,
    b: &[f64],
    q: &Matrix,
) -> Result<GaussianNat, NumericsError> {
    let d = b.len();
    if b_mat.shape() != (d, d) || q.shape() != (d, d) {
        return Err(NumericsError::DimensionMismatch {
            expected: (d, d),
            found: if b_mat.shape() != (d, d) {
                b_mat.shape()
            } else {
                q.shape()
            },
        });
    }
    let qb_mat = q.matmul(b_mat);
    let btqb = b_mat.t_matmul(&qb_mat);
    let mut j = Matrix::zeros(2 * d, 2 * d);
    j.set_block(0, 0, &btqb);
    j.set_block(0, d, &qb_mat.transpose().scale(-1.0));
    j.set_block(d, 0, &qb_mat.scale(-1.0));
    j.set_block(d, d, q);
    let j = j.scale(-0.5).symmetrize();
    let qb = q.matvec(b);
    let mut h = b_mat.t_matvec(&qb).iter().map(|v| -v).collect::<Vec<_>>();
    h.extend_from_slice(&qb);
    let mut g = GaussianNat::new(h, j);
    g.c = -pair_log_normalizer(b, q)?;
    Ok(g)
}

/// Integrates `y₁` out of `joint(y₁, y₂) + incoming(y₁)`.
///
/// Returns the potential over `y₂` with
/// `η₂ = h² − J²¹(J¹¹+P₁)⁻¹(h¹+η₁)`, `P₂ = J²² − J²¹(J¹¹+P₁)⁻¹J¹²`, and the
/// constant absorbed during elimination added to `c`.
pub fn block_marginalize(
    joint: &GaussianNat,
    incoming: &GaussianNat,
) -> Result<GaussianNat, NumericsError> {
    let d1 = incoming.dim();
    let n = joint.dim();
    if d1 > n {
        return Err(NumericsError::DimensionMismatch {
            expected: (d1, d1),
            found: (n, n),
        });
    }
    let d2 = n - d1;
    let p = joint.j.block(0, 0, d1, d1).add(&incoming.j);
    let a: Vec<f64> = joint.h[..d1]
        .iter()
        .zip(&incoming.h)
        .map(|(x, y)| x + y)
        .collect();
    let j21 = joint.j.block(d1, 0, d2, d1);
    let j22 = joint.j.block(d1, d1, d2, d2);

    // Work with −P, which is positive definite for a proper elimination.
    let neg_p = p.scale(-1.0);
    let l = cholesky(&neg_p)?;
    let sol_a = cholesky_solve_vec(&l, &a);
    let sol_j12 = cholesky_solve(&l, &j21.transpose());

    let h2: Vec<f64> = joint.h[d1..]
        .iter()
        .zip(j21.matvec(&sol_a))
        .map(|(h, v)| h + v)
        .collect();
    let j2 = j22.add(&j21.matmul(&sol_j12)).symmetrize();
    let absorbed = 0.25 * dot(&a, &sol_a) + 0.5 * (d1 as f64 * LN_PI - logdet_from_cholesky(&l));
    Ok(GaussianNat {
        h: h2,
        j: j2,
        c: joint.c + incoming.c + absorbed,
    })
}

/// Reorders a pair potential over `(y₁, y₂)` into `(y₂, y₁)`.
pub fn swap_blocks(g: &GaussianNat, d1: usize) -> GaussianNat {
    let n = g.dim();
    let d2 = n - d1;
    let perm: Vec<usize> = (d1..n).chain(0..d1).collect();
    debug_assert_eq!(perm.len(), d1 + d2);
    GaussianNat {
        h: perm.iter().map(|&i| g.h[i]).collect(),
        j: Matrix::from_fn(n, n, |r, c| g.j[(perm[r], perm[c])]),
        c: g.c,
    }
}
