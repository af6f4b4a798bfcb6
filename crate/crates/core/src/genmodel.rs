//! The generative model: parameters, validation and ancestral sampling.
//!
//! Component `i` has a discrete chain `u⁽ⁱ⁾` with initial distribution `π⁽ⁱ⁾`
//! and transitions `A⁽ⁱ⁾`, and a continuous chain
//! `y_t⁽ⁱ⁾ = B_{u_t} y_{t−1}⁽ⁱ⁾ + b_{u_t} + ε_t`, `ε_t ~ N(0, Q_{u_t}⁻¹)`.
//! The source `s_t⁽ⁱ⁾` is the first coordinate of `y_t⁽ⁱ⁾`, and observations
//! are `x_t = f(s_t) + ε_t` with `ε_t ~ N(0, R)`, `R` diagonal.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal, WeightedIndex};

use crate::nets::{layer_dims, Activation, Init, MlpWeights};
use crate::numerics::{cholesky, inverse_spd, Matrix};
use crate::rng::SeedTree;
use crate::{Result, SnicaError};

const STOCHASTIC_TOL: f64 = 1e-12;

/// Dynamics of one discrete state of one component.
#[derive(Debug, Clone, PartialEq)]
pub struct StateDynamics {
    pub init_mean: Vec<f64>,
    pub init_prec: Matrix,
    pub dyn_matrix: Matrix,
    pub dyn_offset: Vec<f64>,
    pub dyn_prec: Matrix,
}

impl StateDynamics {
    pub fn dim(&self) -> usize {
        self.init_mean.len()
    }

    /// `B = scale·I`, zero offsets, identity precisions.
    pub fn isotropic(d: usize, scale: f64) -> Self {
        Self::with_matrix(Matrix::identity(d).scale(scale))
    }

    /// Given dynamics matrix, zero offsets, identity precisions.
    pub fn with_matrix(dyn_matrix: Matrix) -> Self {
        let d = dyn_matrix.rows();
        Self {
            init_mean: vec![0.0; d],
            init_prec: Matrix::identity(d),
            dyn_matrix,
            dyn_offset: vec![0.0; d],
            dyn_prec: Matrix::identity(d),
        }
    }
}

/// Discrete chain plus per-state dynamics for one independent component.
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentParams {
    pub init_dist: Vec<f64>,
    pub trans: Matrix,
    pub states: Vec<StateDynamics>,
}

impl ComponentParams {
    pub fn k(&self) -> usize {
        self.init_dist.len()
    }

    pub fn d(&self) -> usize {
        self.states[0].dim()
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.k();
        if k == 0 || self.states.len() != k || self.trans.shape() != (k, k) {
            return Err(SnicaError::ShapeMismatch(format!(
                "component has {k} initial probabilities, {} states and a {:?} transition matrix",
                self.states.len(),
                self.trans.shape()
            )));
        }
        check_simplex(&self.init_dist, "initial distribution")?;
        for r in 0..k {
            check_simplex(self.trans.row(r), "transition row")?;
        }
        let d = self.d();
        for s in &self.states {
            if s.dim() != d
                || s.init_prec.shape() != (d, d)
                || s.dyn_matrix.shape() != (d, d)
                || s.dyn_offset.len() != d
                || s.dyn_prec.shape() != (d, d)
            {
                return Err(SnicaError::ShapeMismatch("state dynamics dimensions".into()));
            }
            cholesky(&s.init_prec)?;
            cholesky(&s.dyn_prec)?;
        }
        Ok(())
    }
}

fn check_simplex(p: &[f64], what: &str) -> Result<()> {
    if p.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
        return Err(SnicaError::ConfigInvalid(format!("{what} has negative entries")));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > STOCHASTIC_TOL {
        return Err(SnicaError::ConfigInvalid(format!("{what} sums to {s}, not 1")));
    }
    Ok(())
}

/// All generative parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SnicaParams {
    pub components: Vec<ComponentParams>,
    pub decoder: MlpWeights,
    /// Diagonal of the observation noise covariance `R`.
    pub obs_noise: Vec<f64>,
}

impl SnicaParams {
    pub fn n(&self) -> usize {
        self.components.len()
    }

    pub fn d(&self) -> usize {
        self.components[0].d()
    }

    pub fn k(&self) -> usize {
        self.components[0].k()
    }

    pub fn m(&self) -> usize {
        self.obs_noise.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.components.is_empty() {
            return Err(SnicaError::ConfigInvalid("no components".into()));
        }
        for c in &self.components {
            c.validate()?;
        }
        let (n, m) = (self.n(), self.m());
        if m < n {
            return Err(SnicaError::ConfigInvalid(format!("M = {m} must be at least N = {n}")));
        }
        if self.decoder.in_dim() != n || self.decoder.out_dim() != m {
            return Err(SnicaError::ShapeMismatch(format!(
                "decoder maps {} -> {}, model needs {n} -> {m}",
                self.decoder.in_dim(),
                self.decoder.out_dim()
            )));
        }
        if self.obs_noise.iter().any(|r| !(*r > 0.0)) {
            return Err(SnicaError::ConfigInvalid("observation noise must be positive".into()));
        }
        Ok(())
    }
}

/// Simulated latent variables and noise-free observations.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    /// Sources, `T × N`.
    pub s: Matrix,
    /// Discrete states, `T × N`, stored as floats.
    pub u: Matrix,
    /// Noise-free observations `f(s_t)`, `T × M`.
    pub f_s: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// Observations, `T × M`.
    pub x: Matrix,
    pub truth: Option<GroundTruth>,
    pub seed: u64,
    pub meta: String,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.x.cols()
    }

    /// Contiguous slice of time steps `[start, end)`.
    pub fn window(&self, start: usize, end: usize) -> Dataset {
        Dataset {
            x: self.x.row_range(start, end),
            truth: self.truth.as_ref().map(|g| GroundTruth {
                s: g.s.row_range(start, end),
                u: g.u.row_range(start, end),
                f_s: g.f_s.row_range(start, end),
            }),
            seed: self.seed,
            meta: self.meta.clone(),
        }
    }
}

/// Samples `u₁ ~ init`, `u_t | u_{t−1} ~ trans[u_{t−1}]`.
pub fn sample_hmm_chain(init: &[f64], trans: &Matrix, t_len: usize, rng: &mut impl Rng) -> Vec<usize> {
    assert!(t_len >= 1, "chain length must be positive");
    let k = init.len();
    if k == 1 {
        return vec![0; t_len];
    }
    let first = WeightedIndex::new(init).expect("valid initial distribution");
    let rows: Vec<WeightedIndex<f64>> = (0..k)
        .map(|r| WeightedIndex::new(trans.row(r)).expect("valid transition row"))
        .collect();
    let mut u = Vec::with_capacity(t_len);
    u.push(first.sample(rng));
    for t in 1..t_len {
        let prev = u[t - 1];
        u.push(rows[prev].sample(rng));
    }
    u
}

fn cov_factor(prec: &Matrix) -> Matrix {
    let cov = inverse_spd(prec).expect("precision must be SPD");
    cholesky(&cov).expect("covariance must be SPD")
}

fn gaussian_draw(mean: &[f64], factor: &Matrix, rng: &mut impl Rng) -> Vec<f64> {
    let z: Vec<f64> = (0..mean.len()).map(|_| rng.sample(StandardNormal)).collect();
    factor
        .matvec(&z)
        .iter()
        .zip(mean)
        .map(|(a, m)| a + m)
        .collect()
}

/// Samples the continuous chain of one component given its state sequence.
/// Returns `T × d`.
pub fn sample_slds(comp: &ComponentParams, u: &[usize], rng: &mut impl Rng) -> Matrix {
    let d = comp.d();
    let init_f: Vec<Matrix> = comp.states.iter().map(|s| cov_factor(&s.init_prec)).collect();
    let dyn_f: Vec<Matrix> = comp.states.iter().map(|s| cov_factor(&s.dyn_prec)).collect();
    let mut y = Matrix::zeros(u.len(), d);
    for (t, &k) in u.iter().enumerate() {
        let st = &comp.states[k];
        let row = if t == 0 {
            gaussian_draw(&st.init_mean, &init_f[k], rng)
        } else {
            let mean: Vec<f64> = st
                .dyn_matrix
                .matvec(y.row(t - 1))
                .iter()
                .zip(&st.dyn_offset)
                .map(|(a, b)| a + b)
                .collect();
            gaussian_draw(&mean, &dyn_f[k], rng)
        };
        y.row_mut(t).copy_from_slice(&row);
    }
    y
}

/// Sources `s_t⁽ⁱ⁾` = first coordinate of `y_t⁽ⁱ⁾`. Returns `T × N`.
pub fn extract_components(ys: &[Matrix]) -> Matrix {
    let t_len = ys.first().map_or(0, |y| y.rows());
    Matrix::from_fn(t_len, ys.len(), |t, i| ys[i][(t, 0)])
}

/// `f_s = f(s_t)` and `x_t = f_s + ε_t` with `ε_t ~ N(0, diag(r_diag))`.
pub fn mix_and_noise(
    s: &Matrix,
    decoder: &MlpWeights,
    r_diag: &[f64],
    rng: &mut impl Rng,
) -> (Matrix, Matrix) {
    let f_s = decoder.forward_batch(s);
    let sd: Vec<f64> = r_diag.iter().map(|r| r.sqrt()).collect();
    let mut x = f_s.clone();
    for t in 0..x.rows() {
        for (v, s) in x.row_mut(t).iter_mut().zip(&sd) {
            let z: f64 = rng.sample(StandardNormal);
            *v += s * z;
        }
    }
    (x, f_s)
}

/// Simulator settings.
#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub t: usize,
    pub n: usize,
    pub m: usize,
    pub d: usize,
    pub k: usize,
    /// Number of affine layers in the mixing MLP.
    pub mixing_layers: usize,
    /// Hidden width of the mixing MLP; defaults to `M`.
    pub mixing_hidden: Option<usize>,
    pub stay_prob: f64,
    pub obs_noise: f64,
    /// Per-state dynamics overriding the defaults; length `K` when present.
    pub regimes: Option<Vec<StateDynamics>>,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            t: 100_000,
            n: 3,
            m: 12,
            d: 2,
            k: 2,
            mixing_layers: 1,
            mixing_hidden: None,
            stay_prob: 0.99,
            obs_noise: 0.1,
            regimes: None,
            seed: 0,
        }
    }
}

/// 2-D rotation by `angle` scaled by `radius`.
pub fn scaled_rotation(angle: f64, radius: f64) -> Matrix {
    let (s, c) = angle.sin_cos();
    Matrix::from_rows(&[&[radius * c, -radius * s], &[radius * s, radius * c]])
}

/// Default regime `k`: even states mean-revert (`B = 0.5·I`), odd states
/// oscillate (rotation by `0.3·(1 + ⌊k/2⌋)` rad scaled by 0.99 in the first
/// two coordinates, `0.5` elsewhere; `B = −0.9` when `d = 1`).
pub fn default_regime(d: usize, k: usize) -> StateDynamics {
    if k.is_multiple_of(2) {
        return StateDynamics::isotropic(d, 0.5);
    }
    if d == 1 {
        return StateDynamics::isotropic(1, -0.9);
    }
    let mut b = Matrix::identity(d).scale(0.5);
    b.set_block(0, 0, &scaled_rotation(0.3 * (1 + k / 2) as f64, 0.99));
    StateDynamics::with_matrix(b)
}

/// `K × K` matrix with `stay` on the diagonal and the rest spread evenly.
pub fn sticky_transitions(k: usize, stay: f64) -> Matrix {
    if k == 1 {
        return Matrix::identity(1);
    }
    let off = (1.0 - stay) / (k - 1) as f64;
    Matrix::from_fn(k, k, |i, j| if i == j { stay } else { off })
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(SnicaError::ConfigInvalid(m));
        if self.t == 0 || self.n == 0 || self.m == 0 || self.d == 0 || self.k == 0 {
            return bad("T, N, M, d and K must be positive".into());
        }
        if self.m < self.n {
            return bad(format!("M = {} must be at least N = {}", self.m, self.n));
        }
        if self.mixing_layers == 0 {
            return bad("mixing depth L must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.stay_prob) {
            return bad(format!("stay probability {} outside [0, 1]", self.stay_prob));
        }
        if !(self.obs_noise >= 0.0) {
            return bad("observation noise must be non-negative".into());
        }
        if let Some(r) = &self.regimes {
            if r.len() != self.k || r.iter().any(|s| s.dim() != self.d) {
                return bad(format!("expected {} regimes of dimension {}", self.k, self.d));
            }
        }
        Ok(())
    }

    /// Component parameters shared by every component under this config.
    pub fn component_params(&self) -> ComponentParams {
        let states = match &self.regimes {
            Some(r) => r.clone(),
            None => (0..self.k).map(|k| default_regime(self.d, k)).collect(),
        };
        ComponentParams {
            init_dist: vec![1.0 / self.k as f64; self.k],
            trans: sticky_transitions(self.k, self.stay_prob),
            states,
        }
    }
}

/// Generative parameters of a simulation together with the sampled data.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub params: SnicaParams,
    pub dataset: Dataset,
}

/// Samples a full dataset with ground truth.
///
/// The mixing MLP has column-normalized random weights and leaky-tanh hidden
/// units; its first-layer columns are divided by the empirical standard
/// deviation of the matching source so pre-activations are order one.
pub fn simulate(config: &SimConfig) -> Result<Simulation> {
    config.validate()?;
    let seeds = SeedTree::new(config.seed).child("simulate");
    let comp = config.component_params();
    comp.validate()?;

    let sampled: Vec<(Vec<usize>, Matrix)> = crate::par::map_indices(config.n, |i| {
        let mut rng_u = seeds.indexed("states", i as u64);
        let mut rng_y = seeds.indexed("dynamics", i as u64);
        let u = sample_hmm_chain(&comp.init_dist, &comp.trans, config.t, &mut rng_u);
        let y = sample_slds(&comp, &u, &mut rng_y);
        (u, y)
    });
    let ys: Vec<Matrix> = sampled.iter().map(|(_, y)| y.clone()).collect();
    let s = extract_components(&ys);
    let u = Matrix::from_fn(config.t, config.n, |t, i| sampled[i].0[t] as f64);

    let hidden = config.mixing_hidden.unwrap_or(config.m);
    let dims = layer_dims(config.n, hidden, config.m, config.mixing_layers);
    let mut mix_rng = seeds.stream("mixing");
    let mut decoder = MlpWeights::random(&dims, Activation::LeakyTanh, Init::ColumnNormalized, &mut mix_rng);
    for i in 0..config.n {
        let col = s.col_vec(i);
        let sd = std_dev(&col);
        if sd > 0.0 {
            let w = &mut decoder.layers[0].weight;
            for r in 0..w.rows() {
                w[(r, i)] /= sd;
            }
        }
    }

    let r_diag = vec![config.obs_noise; config.m];
    let mut noise_rng = seeds.stream("noise");
    let (x, f_s) = mix_and_noise(&s, &decoder, &r_diag, &mut noise_rng);
    let params = SnicaParams {
        components: vec![comp; config.n],
        decoder,
        // A zero-noise simulation still needs a valid R for inference.
        obs_noise: r_diag.iter().map(|r| r.max(1e-12)).collect(),
    };
    let meta = format!(
        "simulated T={} N={} M={} d={} K={} L={} stay={} noise={}",
        config.t, config.n, config.m, config.d, config.k, config.mixing_layers, config.stay_prob, config.obs_noise
    );
    Ok(Simulation {
        params,
        dataset: Dataset {
            x,
            truth: Some(GroundTruth { s, u, f_s }),
            seed: config.seed,
            meta,
        },
    })
}

pub(crate) fn std_dev(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    if v.len() < 2 {
        return 0.0;
    }
    let mean = v.iter().sum::<f64>() / n;
    (v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)).sqrt()
}
