//! Structured mean-field inference.
//!
//! For every component the posterior is `q(u⁽ⁱ⁾)·q(y⁽ⁱ⁾)`, with both chains
//! kept exact. The two factors are updated alternately:
//!
//! * `q(y)` is a Gaussian chain whose pair potentials are the per-state
//!   dynamics potentials weighted by the current state marginals, and whose
//!   node potentials are the encoder's surrogate terms on the first
//!   coordinate. It is solved with a forward pass of natural-parameter
//!   messages and a mirror-image backward pass.
//! * `q(u)` is an HMM whose emission log-potentials `ρ_t(k)` are the expected
//!   per-state dynamics log-densities under `q(y)`; it is solved by log-space
//!   forward–backward.
//!
//! Components never share state, so they are processed independently.

use crate::expfam::{
    block_marginalize, log_partition, log_sum_exp, moments_from_nat, nat_from_moments,
    pair_potential, swap_blocks, GaussianNat,
};
use crate::genmodel::{ComponentParams, SnicaParams};
use crate::nets::EncoderBatch;
use crate::numerics::{cholesky, logdet_from_cholesky, Matrix};
use crate::{Result, SnicaError};

const LN_2PI_E: f64 = 2.837_877_066_409_345_5;

/// Default number of mean-field rounds.
pub const DEFAULT_INNER_ITERS: usize = 5;
/// Default relative improvement below which the rounds stop early.
pub const DEFAULT_INNER_TOL: f64 = 1e-6;

/// Exact posterior marginals of one discrete chain.
#[derive(Debug, Clone, PartialEq)]
pub struct HmmPosterior {
    /// `T × K` singleton marginals.
    pub gamma: Matrix,
    /// `T − 1` pairwise marginals `ξ_t(j, k) = q(u_t = j, u_{t+1} = k)`.
    pub xi: Vec<Matrix>,
    pub log_z: f64,
}

impl HmmPosterior {
    pub fn len(&self) -> usize {
        self.gamma.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.gamma.rows() == 0
    }

    pub fn k(&self) -> usize {
        self.gamma.cols()
    }

    /// Uniform singleton marginals with independent uniform pairs.
    pub fn uniform(t_len: usize, k: usize) -> Self {
        let p = 1.0 / k as f64;
        Self {
            gamma: Matrix::filled(t_len, k, p),
            xi: vec![Matrix::filled(k, k, p * p); t_len.saturating_sub(1)],
            log_z: 0.0,
        }
    }
}

/// Exact posterior marginals of one Gaussian chain.
#[derive(Debug, Clone, PartialEq)]
pub struct LdsPosterior {
    /// `T × d` means.
    pub means: Matrix,
    /// `T` covariances, `d × d`.
    pub covs: Vec<Matrix>,
    /// `T − 1` cross-covariances `Cov(y_t, y_{t+1})`.
    pub cross: Vec<Matrix>,
    /// Log-partition of the chain's potentials, constants included.
    pub log_z: f64,
    /// Expectation under the posterior of the sum of all chain potentials.
    pub expected_potential: f64,
}

impl LdsPosterior {
    pub fn len(&self) -> usize {
        self.means.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.means.rows() == 0
    }

    pub fn d(&self) -> usize {
        self.means.cols()
    }

    /// Differential entropy `H[q(y₁:T)] = log Z − E_q[Σ potentials]`.
    pub fn entropy(&self) -> f64 {
        self.log_z - self.expected_potential
    }

    /// Mean and covariance of the stacked pair `(y_t, y_{t+1})`.
    pub fn pair_moments(&self, t: usize) -> (Vec<f64>, Matrix) {
        let d = self.d();
        let mut mean = self.means.row(t).to_vec();
        mean.extend_from_slice(self.means.row(t + 1));
        let mut cov = Matrix::zeros(2 * d, 2 * d);
        cov.set_block(0, 0, &self.covs[t]);
        cov.set_block(d, d, &self.covs[t + 1]);
        cov.set_block(0, d, &self.cross[t]);
        cov.set_block(d, 0, &self.cross[t].transpose());
        (mean, cov)
    }

    /// Posterior mean of the source (first coordinate) at each time.
    pub fn source_means(&self) -> Vec<f64> {
        self.means.col_vec(0)
    }

    /// Posterior variance of the source at each time.
    pub fn source_vars(&self) -> Vec<f64> {
        self.covs.iter().map(|c| c[(0, 0)]).collect()
    }
}

/// Per-state potentials of one component, with log-normalizers folded into
/// the constants so that each potential evaluates to a log-density.
#[derive(Debug, Clone)]
pub struct StatePotentials {
    /// `log N(y₁; b̄_k, Q̄_k⁻¹)` over `y₁`.
    pub init: Vec<GaussianNat>,
    /// `log N(y_t; B_k y_{t−1} + b_k, Q_k⁻¹)` over `(y_{t−1}, y_t)`.
    pub pair: Vec<GaussianNat>,
    pub log_init_dist: Vec<f64>,
    pub log_trans: Matrix,
}

impl StatePotentials {
    pub fn new(comp: &ComponentParams) -> Result<Self> {
        let mut init = Vec::with_capacity(comp.k());
        let mut pair = Vec::with_capacity(comp.k());
        for st in &comp.states {
            let cov = crate::numerics::inverse_spd(&st.init_prec)?;
            init.push(nat_from_moments(&st.init_mean, &cov)?);
            pair.push(pair_potential(&st.dyn_matrix, &st.dyn_offset, &st.dyn_prec)?);
        }
        Ok(Self {
            init,
            pair,
            log_init_dist: comp.init_dist.iter().map(|p| p.ln()).collect(),
            log_trans: comp.trans.map(f64::ln),
        })
    }

    pub fn k(&self) -> usize {
        self.init.len()
    }
}

/// Responsibility-weighted dynamics potentials of one chain.
#[derive(Debug, Clone, PartialEq)]
pub struct BlendedDynamics {
    pub init: GaussianNat,
    /// `pairs[t]` couples `y_t` and `y_{t+1}`.
    pub pairs: Vec<GaussianNat>,
}

/// Lifts the encoder outputs of component `i` into `d`-dimensional node
/// potentials: `v` and `w` sit in the first coordinate, zeros elsewhere.
pub fn surrogate_potentials(enc: &EncoderBatch, i: usize, d: usize) -> Vec<GaussianNat> {
    (0..enc.len())
        .map(|t| {
            let mut g = GaussianNat::zero(d);
            g.h[0] = enc.v[(t, i)];
            g.j[(0, 0)] = enc.w[(t, i)];
            g
        })
        .collect()
}

/// `h̃_t = Σ_k γ_t(k)·h_k`, `J̃_t = Σ_k γ_t(k)·J_k`, and likewise for the
/// log-normalizer constants.
pub fn blend_dynamics(q_u: &HmmPosterior, pots: &StatePotentials) -> BlendedDynamics {
    let t_len = q_u.len();
    let blend = |t: usize, src: &[GaussianNat]| {
        let mut g = GaussianNat::zero(src[0].dim());
        for (k, p) in src.iter().enumerate() {
            let w = q_u.gamma[(t, k)];
            if w != 0.0 {
                g.add_scaled(w, p);
            }
        }
        g.j = g.j.symmetrize();
        g
    };
    BlendedDynamics {
        init: blend(0, &pots.init),
        pairs: (1..t_len).map(|t| blend(t, &pots.pair)).collect(),
    }
}

fn improper(_: crate::numerics::NumericsError) -> SnicaError {
    SnicaError::ImproperMessage("Gaussian chain")
}

/// Exact smoothing of the Gaussian chain defined by `dynamics` and node
/// potentials `nodes` (one per time step).
pub fn update_q_y(nodes: &[GaussianNat], dynamics: &BlendedDynamics) -> Result<LdsPosterior> {
    let t_len = nodes.len();
    assert!(t_len >= 1, "empty chain");
    assert_eq!(dynamics.pairs.len(), t_len - 1, "pair potential count mismatch");
    let d = nodes[0].dim();

    // Forward messages α_t include the node potential at t.
    let mut alpha = Vec::with_capacity(t_len);
    alpha.push(dynamics.init.add(&nodes[0]));
    for t in 1..t_len {
        let msg = block_marginalize(&dynamics.pairs[t - 1], &alpha[t - 1]).map_err(improper)?;
        alpha.push(msg.add(&nodes[t]));
    }
    let log_z = log_partition(&alpha[t_len - 1]).map_err(improper)?;

    // Backward messages β_t exclude the node potential at t.
    let mut beta = vec![GaussianNat::zero(d); t_len];
    for t in (0..t_len.saturating_sub(1)).rev() {
        let ahead = nodes[t + 1].add(&beta[t + 1]);
        let flipped = swap_blocks(&dynamics.pairs[t], d);
        beta[t] = block_marginalize(&flipped, &ahead).map_err(improper)?;
    }

    let mut means = Matrix::zeros(t_len, d);
    let mut covs = Vec::with_capacity(t_len);
    let mut cross = Vec::with_capacity(t_len.saturating_sub(1));
    let mut expected = 0.0;

    if t_len == 1 {
        let (m, c) = moments_from_nat(&alpha[0]).map_err(improper)?;
        means.row_mut(0).copy_from_slice(&m);
        covs.push(c);
    } else {
        for t in 0..t_len - 1 {
            let mut joint = dynamics.pairs[t].clone();
            joint.add_on_block(0, &GaussianNat { c: 0.0, ..alpha[t].clone() });
            joint.add_on_block(d, &GaussianNat { c: 0.0, ..nodes[t + 1].add(&beta[t + 1]) });
            let (m, c) = moments_from_nat(&joint).map_err(improper)?;
            means.row_mut(t).copy_from_slice(&m[..d]);
            covs.push(c.block(0, 0, d, d));
            cross.push(c.block(0, d, d, d));
            expected += dynamics.pairs[t].expected_value(&m, &c);
            if t == t_len - 2 {
                means.row_mut(t + 1).copy_from_slice(&m[d..]);
                covs.push(c.block(d, d, d, d));
            }
        }
    }
    expected += dynamics.init.expected_value(means.row(0), &covs[0]);
    for (t, node) in nodes.iter().enumerate() {
        expected += node.expected_value(means.row(t), &covs[t]);
    }

    Ok(LdsPosterior {
        means,
        covs,
        cross,
        log_z,
        expected_potential: expected,
    })
}

/// `ρ_t(k)`: expected log-density of the state-`k` dynamics under `q(y)`.
/// Row 0 uses the initial-state potential.
pub fn expected_state_potentials(q_y: &LdsPosterior, pots: &StatePotentials) -> Matrix {
    let t_len = q_y.len();
    let k = pots.k();
    let mut rho = Matrix::zeros(t_len, k);
    for (kk, p) in pots.init.iter().enumerate() {
        rho[(0, kk)] = p.expected_value(q_y.means.row(0), &q_y.covs[0]);
    }
    for t in 1..t_len {
        let (m, c) = q_y.pair_moments(t - 1);
        for (kk, p) in pots.pair.iter().enumerate() {
            rho[(t, kk)] = p.expected_value(&m, &c);
        }
    }
    rho
}

/// Exact log-space forward–backward over `log π + ρ₁` and `log A + ρ_t`.
pub fn update_q_u(rho: &Matrix, log_init: &[f64], log_trans: &Matrix) -> HmmPosterior {
    let (t_len, k) = rho.shape();
    let mut la = Matrix::zeros(t_len, k);
    for j in 0..k {
        la[(0, j)] = log_init[j] + rho[(0, j)];
    }
    let mut buf = vec![0.0; k];
    for t in 1..t_len {
        for kk in 0..k {
            for j in 0..k {
                buf[j] = la[(t - 1, j)] + log_trans[(j, kk)];
            }
            la[(t, kk)] = log_sum_exp(&buf) + rho[(t, kk)];
        }
    }
    let log_z = log_sum_exp(la.row(t_len - 1));

    let mut lb = Matrix::zeros(t_len, k);
    for t in (0..t_len.saturating_sub(1)).rev() {
        for j in 0..k {
            for kk in 0..k {
                buf[kk] = log_trans[(j, kk)] + rho[(t + 1, kk)] + lb[(t + 1, kk)];
            }
            lb[(t, j)] = log_sum_exp(&buf);
        }
    }

    let mut gamma = Matrix::zeros(t_len, k);
    for t in 0..t_len {
        let row = gamma.row_mut(t);
        for j in 0..k {
            row[j] = (la[(t, j)] + lb[(t, j)] - log_z).exp();
        }
        let s: f64 = row.iter().sum();
        row.iter_mut().for_each(|v| *v /= s);
    }
    let xi = (0..t_len.saturating_sub(1))
        .map(|t| {
            let mut m = Matrix::from_fn(k, k, |j, kk| {
                (la[(t, j)] + log_trans[(j, kk)] + rho[(t + 1, kk)] + lb[(t + 1, kk)] - log_z).exp()
            });
            let s = m.sum();
            m.as_mut_slice().iter_mut().for_each(|v| *v /= s);
            m
        })
        .collect();
    HmmPosterior { gamma, xi, log_z }
}

/// `KL[q(u) ‖ p(u)]` for a Markov-chain posterior given by its marginals.
pub fn hmm_kl(q_u: &HmmPosterior, log_init: &[f64], log_trans: &Matrix) -> f64 {
    let xlogy = |x: f64, y: f64| if x > 0.0 { x * y } else { 0.0 };
    let k = q_u.k();
    let mut kl = 0.0;
    for j in 0..k {
        let g = q_u.gamma[(0, j)];
        kl += xlogy(g, g.ln() - log_init[j]);
    }
    for (t, xi) in q_u.xi.iter().enumerate() {
        for j in 0..k {
            let gj = q_u.gamma[(t, j)];
            for kk in 0..k {
                let x = xi[(j, kk)];
                kl += xlogy(x, x.ln() - gj.ln() - log_trans[(j, kk)]);
            }
        }
    }
    kl
}

/// `Σ_t Σ_k γ_t(k)·ρ_t(k)`: the expected dynamics log-density `E_q[log p(y | u)]`.
pub fn expected_dynamics(q_u: &HmmPosterior, rho: &Matrix) -> f64 {
    q_u.gamma
        .as_slice()
        .iter()
        .zip(rho.as_slice())
        .map(|(g, r)| g * r)
        .sum()
}

/// `E_q[Σ_t node_t(y_t)]`.
pub fn expected_node_potentials(q_y: &LdsPosterior, nodes: &[GaussianNat]) -> f64 {
    nodes
        .iter()
        .enumerate()
        .map(|(t, n)| n.expected_value(q_y.means.row(t), &q_y.covs[t]))
        .sum()
}

/// Gaussian chain entropy from marginals alone:
/// `Σ_t H(y_t, y_{t+1}) − Σ_{interior t} H(y_t)`.
pub fn chain_entropy_from_marginals(q_y: &LdsPosterior) -> Result<f64> {
    let gauss_h = |c: &Matrix| -> Result<f64> {
        let l = cholesky(c)?;
        Ok(0.5 * (c.rows() as f64 * LN_2PI_E + logdet_from_cholesky(&l)))
    };
    let t_len = q_y.len();
    if t_len == 1 {
        return gauss_h(&q_y.covs[0]);
    }
    let mut h = 0.0;
    for t in 0..t_len - 1 {
        h += gauss_h(&q_y.pair_moments(t).1)?;
    }
    for t in 1..t_len - 1 {
        h -= gauss_h(&q_y.covs[t])?;
    }
    Ok(h)
}

/// Posterior of one component after mean-field rounds.
#[derive(Debug, Clone)]
pub struct ComponentPosterior {
    pub q_u: HmmPosterior,
    pub q_y: LdsPosterior,
    /// Dynamics potentials `q_y` was computed with.
    pub dynamics: BlendedDynamics,
    /// `ρ` from the final `q_y`.
    pub rho: Matrix,
    /// Surrogate objective after each completed round.
    pub trace: Vec<f64>,
}

impl ComponentPosterior {
    /// Surrogate ELBO contribution `E[surrogate] + E[log p(y|u)] + H[q(y)] − KL[q(u)‖p(u)]`.
    pub fn surrogate_objective(&self, nodes: &[GaussianNat], pots: &StatePotentials) -> f64 {
        expected_node_potentials(&self.q_y, nodes) + expected_dynamics(&self.q_u, &self.rho)
            + self.q_y.entropy()
            - hmm_kl(&self.q_u, &pots.log_init_dist, &pots.log_trans)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanFieldOptions {
    pub inner_iters: usize,
    pub tol: f64,
}

impl Default for MeanFieldOptions {
    fn default() -> Self {
        Self {
            inner_iters: DEFAULT_INNER_ITERS,
            tol: DEFAULT_INNER_TOL,
        }
    }
}

/// Alternates `q(y)` and `q(u)` updates for one component, starting from
/// uniform state marginals.
pub fn mean_field_component(
    nodes: &[GaussianNat],
    pots: &StatePotentials,
    opts: MeanFieldOptions,
) -> Result<ComponentPosterior> {
    let t_len = nodes.len();
    let k = pots.k();
    if opts.inner_iters == 0 {
        // Prior only: state marginals of p(u), and the chain under the
        // blended prior dynamics without surrogate terms.
        let q_u = update_q_u(&Matrix::zeros(t_len, k), &pots.log_init_dist, &pots.log_trans);
        let dynamics = blend_dynamics(&q_u, pots);
        let zero_nodes = vec![GaussianNat::zero(nodes[0].dim()); t_len];
        let q_y = update_q_y(&zero_nodes, &dynamics)?;
        let rho = expected_state_potentials(&q_y, pots);
        return Ok(ComponentPosterior {
            q_u,
            q_y,
            dynamics,
            rho,
            trace: Vec::new(),
        });
    }

    let mut q_u = HmmPosterior::uniform(t_len, k);
    let mut trace = Vec::with_capacity(opts.inner_iters);
    let mut last = None;
    for _ in 0..opts.inner_iters {
        let dynamics = blend_dynamics(&q_u, pots);
        let q_y = update_q_y(nodes, &dynamics)?;
        let rho = expected_state_potentials(&q_y, pots);
        q_u = update_q_u(&rho, &pots.log_init_dist, &pots.log_trans);
        let post = ComponentPosterior {
            q_u: q_u.clone(),
            q_y,
            dynamics,
            rho,
            trace: Vec::new(),
        };
        let obj = post.surrogate_objective(nodes, pots);
        let converged = trace
            .last()
            .is_some_and(|&prev: &f64| (obj - prev).abs() < opts.tol * prev.abs().max(1.0));
        trace.push(obj);
        last = Some(post);
        if converged {
            break;
        }
    }
    // Close with a q(y) update so that q(y) is optimal for the returned q(u)
    // and ρ is taken from that q(y).
    let prev = last.expect("at least one round");
    let dynamics = blend_dynamics(&prev.q_u, pots);
    let q_y = update_q_y(nodes, &dynamics)?;
    let rho = expected_state_potentials(&q_y, pots);
    let mut post = ComponentPosterior {
        q_u: prev.q_u,
        q_y,
        dynamics,
        rho,
        trace: Vec::new(),
    };
    trace.push(post.surrogate_objective(nodes, pots));
    post.trace = trace;
    Ok(post)
}

/// Mean-field inference for every component of `params` given encoder
/// outputs. Components run in parallel when the feature is enabled.
pub fn mean_field_cycle(
    enc: &EncoderBatch,
    params: &SnicaParams,
    opts: MeanFieldOptions,
) -> Result<Vec<ComponentPosterior>> {
    let d = params.d();
    let results = crate::par::map_indices(params.n(), |i| {
        let pots = StatePotentials::new(&params.components[i])?;
        let nodes = surrogate_potentials(enc, i, d);
        mean_field_component(&nodes, &pots, opts)
    });
    results.into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::genmodel::StateDynamics;

    fn comp_k1(b: f64) -> ComponentParams {
        ComponentParams {
            init_dist: vec![1.0],
            trans: Matrix::identity(1),
            states: vec![StateDynamics::isotropic(1, b)],
        }
    }

    #[test]
    fn surrogate_lifting() {
        let enc = EncoderBatch {
            v: Matrix::from_rows(&[&[3.0]]),
            w: Matrix::from_rows(&[&[-1.0]]),
        };
        let g = &surrogate_potentials(&enc, 0, 2)[0];
        assert_eq!(g.h, vec![3.0, 0.0]);
        assert_eq!(g.j, Matrix::from_rows(&[&[-1.0, 0.0], &[0.0, 0.0]]));
        let g1 = &surrogate_potentials(&enc, 0, 1)[0];
        assert_eq!((g1.h[0], g1.j[(0, 0)]), (3.0, -1.0));
    }

    #[test]
    fn blend_examples() {
        let comp = ComponentParams {
            init_dist: vec![0.5, 0.5],
            trans: Matrix::filled(2, 2, 0.5),
            states: vec![StateDynamics::isotropic(1, 0.2), StateDynamics::isotropic(1, -0.6)],
        };
        let pots = StatePotentials::new(&comp).unwrap();
        let half = HmmPosterior::uniform(3, 2);
        let b = blend_dynamics(&half, &pots);
        let expect = pots.pair[0].j.add(&pots.pair[1].j).scale(0.5);
        assert!(b.pairs[0].j.max_abs_diff(&expect) < 1e-15);

        let mut delta = HmmPosterior::uniform(3, 2);
        for t in 0..3 {
            delta.gamma.row_mut(t).copy_from_slice(&[0.0, 1.0]);
        }
        let b = blend_dynamics(&delta, &pots);
        assert_eq!(b.pairs[1], pots.pair[1]);
        assert_eq!(b.init, pots.init[1]);
    }

    #[test]
    fn single_step_posterior_is_normalized_product() {
        let pots = StatePotentials::new(&comp_k1(0.5)).unwrap();
        let q_u = HmmPosterior::uniform(1, 1);
        let dyn1 = blend_dynamics(&q_u, &pots);
        let node = GaussianNat::new(vec![2.0], Matrix::from_diag(&[-1.5]));
        let post = update_q_y(std::slice::from_ref(&node), &dyn1).unwrap();
        // Prior N(0,1) times exp(2y − 1.5y²): precision 1 + 3 = 4, mean 2/4.
        assert!((post.means[(0, 0)] - 0.5).abs() < 1e-14);
        assert!((post.covs[0][(0, 0)] - 0.25).abs() < 1e-14);
    }

    #[test]
    fn zero_dynamics_factorizes() {
        let pots = StatePotentials::new(&comp_k1(0.0)).unwrap();
        let q_u = HmmPosterior::uniform(5, 1);
        let dynamics = blend_dynamics(&q_u, &pots);
        let nodes: Vec<GaussianNat> = (0..5)
            .map(|t| GaussianNat::new(vec![t as f64], Matrix::from_diag(&[-0.5 - t as f64])))
            .collect();
        let post = update_q_y(&nodes, &dynamics).unwrap();
        for c in &post.cross {
            assert!(c.max_abs() < 1e-10);
        }
    }

    #[test]
    fn absorbing_chain_posterior() {
        let rho = Matrix::from_fn(6, 3, |t, k| (t as f64 - k as f64).sin());
        let log_init = vec![0.0, f64::NEG_INFINITY, f64::NEG_INFINITY];
        let log_trans = Matrix::identity(3).map(f64::ln);
        let q = update_q_u(&rho, &log_init, &log_trans);
        for t in 0..6 {
            assert_eq!(q.gamma.row(t), &[1.0, 0.0, 0.0]);
        }
    }

    #[test]
    fn uniform_single_step() {
        let q = update_q_u(&Matrix::zeros(1, 4), &[0.25f64.ln(); 4], &Matrix::filled(4, 4, 0.25f64.ln()));
        for &g in q.gamma.row(0) {
            assert!((g - 0.25).abs() < 1e-15);
        }
        assert!(q.log_z.abs() < 1e-14);
    }

    #[test]
    fn entropy_matches_marginal_formula() {
        let comp = ComponentParams {
            init_dist: vec![0.3, 0.7],
            trans: Matrix::from_rows(&[&[0.9, 0.1], &[0.2, 0.8]]),
            states: vec![
                crate::genmodel::default_regime(2, 0),
                crate::genmodel::default_regime(2, 1),
            ],
        };
        let pots = StatePotentials::new(&comp).unwrap();
        let q_u = HmmPosterior::uniform(4, 2);
        let dynamics = blend_dynamics(&q_u, &pots);
        let enc = EncoderBatch {
            v: Matrix::from_rows(&[&[0.1], &[-0.4], &[1.0], &[0.3]]),
            w: Matrix::from_rows(&[&[-0.5], &[-0.2], &[-1.0], &[-0.7]]),
        };
        let nodes = surrogate_potentials(&enc, 0, 2);
        let post = update_q_y(&nodes, &dynamics).unwrap();
        let h_direct = chain_entropy_from_marginals(&post).unwrap();
        assert!((post.entropy() - h_direct).abs() < 1e-10);
    }
}
