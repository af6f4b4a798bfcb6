//! ELBO assembly and stochastic-gradient learning.
//!
//! Parameters live in an unconstrained space ([`RawModel`]): logits for the
//! initial and transition distributions, lower-triangular factors with
//! log-diagonals for precisions, and a log-diagonal for `R`. Each step runs
//! mean-field inference, draws one reparameterized source sample, and
//! collects gradients of the ELBO from three routes:
//!
//! * decoder weights and `log R`: reverse mode through the reconstruction term;
//! * dynamics and chain parameters: closed-form expected-statistics gradients
//!   with the posterior held fixed;
//! * encoder weights: the surrogate natural parameters `η = (v, w)` shape
//!   `q(y)`, and `∂ELBO/∂η = F·(∂recon/∂μ − η)` where `μ = (E[s], E[s²])` and
//!   `F = ∂μ/∂η` is the (symmetric) covariance of the sufficient statistics.
//!   `F` is applied by a central difference of the smoother along that
//!   direction, then pulled back through the encoder by reverse mode.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::expfam::GaussianNat;
use crate::genmodel::{ComponentParams, SnicaParams, StateDynamics};
use crate::inference::{
    expected_dynamics, hmm_kl, mean_field_cycle, update_q_y, ComponentPosterior, MeanFieldOptions,
    StatePotentials,
};
use crate::nets::{
    layer_dims, record_encoder, Activation, EncoderBatch, Init, MlpWeights,
    DEFAULT_DECODER_HIDDEN, DEFAULT_ENCODER_HIDDEN,
};
use crate::numerics::{inverse_spd, spectral_radius, Matrix, Tape};
use crate::rng::SeedTree;
use crate::{Result, SnicaError};

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// The four ELBO terms and their sum.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ElboBreakdown {
    pub recon: f64,
    pub kl_u: f64,
    pub entropy_y: f64,
    pub cross_y: f64,
    pub total: f64,
}

impl ElboBreakdown {
    pub fn new(recon: f64, kl_u: f64, entropy_y: f64, cross_y: f64) -> Self {
        Self {
            recon,
            kl_u,
            entropy_y,
            cross_y,
            total: recon - kl_u + entropy_y + cross_y,
        }
    }
}

/// Draws `s_t⁽ⁱ⁾ = m_t⁽ⁱ⁾ + √(c_t⁽ⁱ⁾)·ζ` from the marginal posteriors.
/// Returns the samples and the standard-normal draws `ζ`, both `T × N`.
pub fn reparam_sample_s(posts: &[ComponentPosterior], rng: &mut impl Rng) -> (Matrix, Matrix) {
    let n = posts.len();
    let t_len = posts.first().map_or(0, |p| p.q_y.len());
    let zeta = Matrix::from_fn(t_len, n, |_, _| rng.sample(StandardNormal));
    let s = Matrix::from_fn(t_len, n, |t, i| {
        let q = &posts[i].q_y;
        q.means[(t, 0)] + q.covs[t][(0, 0)].max(0.0).sqrt() * zeta[(t, i)]
    });
    (s, zeta)
}

/// `Σ_t log N(x_t; f(s_t), R)`.
pub fn reconstruction_log_lik(x: &Matrix, decoder: &MlpWeights, r_diag: &[f64], s: &Matrix) -> f64 {
    let f = decoder.forward_batch(s);
    let mut total = 0.0;
    for t in 0..x.rows() {
        for ((&xv, &fv), &r) in x.row(t).iter().zip(f.row(t)).zip(r_diag) {
            let e = xv - fv;
            total += -HALF_LN_2PI - 0.5 * r.ln() - 0.5 * e * e / r;
        }
    }
    total
}

/// Exact `E_q[Σ_t log N(x_t; W s_t + c, R)]` for a single-layer linear decoder.
pub fn expected_recon_linear(
    x: &Matrix,
    decoder: &MlpWeights,
    r_diag: &[f64],
    posts: &[ComponentPosterior],
) -> f64 {
    assert_eq!(decoder.depth(), 1, "expected_recon_linear needs a linear decoder");
    assert_eq!(decoder.output_activation, Activation::Identity);
    let layer = &decoder.layers[0];
    let mut total = 0.0;
    for t in 0..x.rows() {
        let m: Vec<f64> = posts.iter().map(|p| p.q_y.means[(t, 0)]).collect();
        let var: Vec<f64> = posts.iter().map(|p| p.q_y.covs[t][(0, 0)]).collect();
        let mean_out = layer.weight.matvec(&m);
        for (row, (&r, &xv)) in r_diag.iter().zip(x.row(t)).enumerate() {
            let e = xv - mean_out[row] - layer.bias[row];
            let spread: f64 = (0..m.len()).map(|i| layer.weight[(row, i)].powi(2) * var[i]).sum();
            total += -HALF_LN_2PI - 0.5 * r.ln() - 0.5 * (e * e + spread) / r;
        }
    }
    total
}

/// ELBO terms given posteriors and a source sample for the reconstruction term.
pub fn elbo(
    x: &Matrix,
    params: &SnicaParams,
    posts: &[ComponentPosterior],
    s_samples: &Matrix,
) -> Result<ElboBreakdown> {
    let recon = reconstruction_log_lik(x, &params.decoder, &params.obs_noise, s_samples);
    latent_terms(params, posts, recon)
}

/// ELBO with the reconstruction term supplied by the caller.
pub fn latent_terms(params: &SnicaParams, posts: &[ComponentPosterior], recon: f64) -> Result<ElboBreakdown> {
    if posts.len() != params.n() {
        return Err(SnicaError::ShapeMismatch(format!(
            "{} posteriors for {} components",
            posts.len(),
            params.n()
        )));
    }
    let (mut kl_u, mut entropy_y, mut cross_y) = (0.0, 0.0, 0.0);
    for (post, comp) in posts.iter().zip(&params.components) {
        let log_init: Vec<f64> = comp.init_dist.iter().map(|p| p.ln()).collect();
        kl_u += hmm_kl(&post.q_u, &log_init, &comp.trans.map(f64::ln));
        entropy_y += post.q_y.entropy();
        cross_y += expected_dynamics(&post.q_u, &post.rho);
    }
    Ok(ElboBreakdown::new(recon, kl_u, entropy_y, cross_y))
}

/// Adam optimizer state over a list of parameter tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct OptState {
    pub m: Vec<Matrix>,
    pub v: Vec<Matrix>,
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl OptState {
    pub fn new(shapes: &[Matrix], lr: f64) -> Self {
        let zeros: Vec<Matrix> = shapes.iter().map(|p| Matrix::zeros(p.rows(), p.cols())).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            step: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam step, descending along `grads`.
pub fn adam_step(params: &mut [Matrix], grads: &[Matrix], opt: &mut OptState) {
    assert_eq!(params.len(), grads.len(), "parameter/gradient count mismatch");
    assert_eq!(params.len(), opt.m.len(), "optimizer state does not match parameters");
    opt.step += 1;
    let bc1 = 1.0 - opt.beta1.powi(opt.step as i32);
    let bc2 = 1.0 - opt.beta2.powi(opt.step as i32);
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(opt.m.iter_mut().zip(opt.v.iter_mut()))
    {
        assert_eq!(p.shape(), g.shape(), "gradient shape mismatch");
        for (((pi, &gi), mi), vi) in p
            .as_mut_slice()
            .iter_mut()
            .zip(g.as_slice())
            .zip(m.as_mut_slice())
            .zip(v.as_mut_slice())
        {
            *mi = opt.beta1 * *mi + (1.0 - opt.beta1) * gi;
            *vi = opt.beta2 * *vi + (1.0 - opt.beta2) * gi * gi;
            let mh = *mi / bc1;
            let vh = *vi / bc2;
            *pi -= opt.lr * mh / (vh.sqrt() + opt.eps);
        }
    }
}

/// Unconstrained parameters of one component. Per-state blocks are stacked:
/// `K × d` for vectors and `(K·d) × d` for matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentRaw {
    pub pi_logits: Matrix,
    pub trans_logits: Matrix,
    pub init_mean: Matrix,
    pub init_prec_raw: Matrix,
    pub dyn_matrix: Matrix,
    pub dyn_offset: Matrix,
    pub dyn_prec_raw: Matrix,
}

pub const COMPONENT_GROUPS: [&str; 7] = [
    "pi_logits",
    "trans_logits",
    "init_mean",
    "init_prec_raw",
    "dyn_matrix",
    "dyn_offset",
    "dyn_prec_raw",
];

fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

/// `L` with `exp` on the diagonal and the strict lower triangle copied; the
/// upper triangle of `raw` is ignored.
pub fn prec_factor(raw: &Matrix) -> Matrix {
    let d = raw.rows();
    Matrix::from_fn(d, d, |i, j| match i.cmp(&j) {
        std::cmp::Ordering::Greater => raw[(i, j)],
        std::cmp::Ordering::Equal => raw[(i, i)].exp(),
        std::cmp::Ordering::Less => 0.0,
    })
}

/// Inverse of [`prec_factor`] applied to `L·Lᵀ`.
pub fn prec_raw_from(prec: &Matrix) -> Result<Matrix> {
    let l = crate::numerics::cholesky(prec)?;
    let d = l.rows();
    Ok(Matrix::from_fn(d, d, |i, j| match i.cmp(&j) {
        std::cmp::Ordering::Greater => l[(i, j)],
        std::cmp::Ordering::Equal => l[(i, i)].ln(),
        std::cmp::Ordering::Less => 0.0,
    }))
}

/// Chain rule from `∂/∂Q` (symmetric) to the raw factor of `Q = L·Lᵀ`.
fn prec_raw_grad(raw: &Matrix, grad_q: &Matrix) -> Matrix {
    let l = prec_factor(raw);
    let g = grad_q.symmetrize();
    let gl = g.matmul(&l).scale(2.0);
    let d = raw.rows();
    Matrix::from_fn(d, d, |i, j| match i.cmp(&j) {
        std::cmp::Ordering::Greater => gl[(i, j)],
        std::cmp::Ordering::Equal => gl[(i, i)] * l[(i, i)],
        std::cmp::Ordering::Less => 0.0,
    })
}

impl ComponentRaw {
    pub fn k(&self) -> usize {
        self.pi_logits.cols()
    }

    pub fn d(&self) -> usize {
        self.init_mean.cols()
    }

    pub fn groups(&self) -> [&Matrix; 7] {
        [
            &self.pi_logits,
            &self.trans_logits,
            &self.init_mean,
            &self.init_prec_raw,
            &self.dyn_matrix,
            &self.dyn_offset,
            &self.dyn_prec_raw,
        ]
    }

    pub fn from_groups(g: &[Matrix]) -> Self {
        Self {
            pi_logits: g[0].clone(),
            trans_logits: g[1].clone(),
            init_mean: g[2].clone(),
            init_prec_raw: g[3].clone(),
            dyn_matrix: g[4].clone(),
            dyn_offset: g[5].clone(),
            dyn_prec_raw: g[6].clone(),
        }
    }

    pub fn from_params(comp: &ComponentParams) -> Result<Self> {
        let (k, d) = (comp.k(), comp.d());
        let mut out = Self {
            pi_logits: Matrix::from_vec(1, k, comp.init_dist.iter().map(|p| p.ln()).collect()),
            trans_logits: comp.trans.map(f64::ln),
            init_mean: Matrix::zeros(k, d),
            init_prec_raw: Matrix::zeros(k * d, d),
            dyn_matrix: Matrix::zeros(k * d, d),
            dyn_offset: Matrix::zeros(k, d),
            dyn_prec_raw: Matrix::zeros(k * d, d),
        };
        for (kk, st) in comp.states.iter().enumerate() {
            out.init_mean.row_mut(kk).copy_from_slice(&st.init_mean);
            out.dyn_offset.row_mut(kk).copy_from_slice(&st.dyn_offset);
            out.init_prec_raw.set_block(kk * d, 0, &prec_raw_from(&st.init_prec)?);
            out.dyn_prec_raw.set_block(kk * d, 0, &prec_raw_from(&st.dyn_prec)?);
            out.dyn_matrix.set_block(kk * d, 0, &st.dyn_matrix);
        }
        Ok(out)
    }

    pub fn to_params(&self) -> ComponentParams {
        let (k, d) = (self.k(), self.d());
        let states = (0..k)
            .map(|kk| {
                let li = prec_factor(&self.init_prec_raw.block(kk * d, 0, d, d));
                let ld = prec_factor(&self.dyn_prec_raw.block(kk * d, 0, d, d));
                StateDynamics {
                    init_mean: self.init_mean.row(kk).to_vec(),
                    init_prec: li.matmul_t(&li),
                    dyn_matrix: self.dyn_matrix.block(kk * d, 0, d, d),
                    dyn_offset: self.dyn_offset.row(kk).to_vec(),
                    dyn_prec: ld.matmul_t(&ld),
                }
            })
            .collect();
        let mut trans = Matrix::zeros(k, k);
        for r in 0..k {
            trans.row_mut(r).copy_from_slice(&softmax(self.trans_logits.row(r)));
        }
        ComponentParams {
            init_dist: softmax(self.pi_logits.row(0)),
            trans,
            states,
        }
    }

    /// Random initialization: stay probability `stay`, dynamics matrices with
    /// spectral radius `radius`, zero offsets and identity precisions.
    pub fn init(k: usize, d: usize, stay: f64, radius: f64, rng: &mut impl Rng) -> Self {
        let trans = crate::genmodel::sticky_transitions(k, stay);
        let mut dyn_matrix = Matrix::zeros(k * d, d);
        for kk in 0..k {
            let b = Matrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
            let rho = spectral_radius(&b).unwrap_or(1.0).max(1e-6);
            dyn_matrix.set_block(kk * d, 0, &b.scale(radius / rho));
        }
        Self {
            pi_logits: Matrix::zeros(1, k),
            trans_logits: trans.map(f64::ln),
            init_mean: Matrix::zeros(k, d),
            init_prec_raw: Matrix::zeros(k * d, d),
            dyn_matrix,
            dyn_offset: Matrix::zeros(k, d),
            dyn_prec_raw: Matrix::zeros(k * d, d),
        }
    }
}

/// Gradients of `−KL[q(u)‖p(u)] + E_q[log p(y | u)]` with respect to the raw
/// parameters of one component, holding the posterior fixed.
pub fn component_gradients(raw: &ComponentRaw, post: &ComponentPosterior) -> Result<ComponentRaw> {
    let (k, d) = (raw.k(), raw.d());
    let comp = raw.to_params();
    let gamma = &post.q_u.gamma;
    let q_y = &post.q_y;
    let t_len = gamma.rows();

    let mut g = ComponentRaw {
        pi_logits: Matrix::zeros(1, k),
        trans_logits: Matrix::zeros(k, k),
        init_mean: Matrix::zeros(k, d),
        init_prec_raw: Matrix::zeros(k * d, d),
        dyn_matrix: Matrix::zeros(k * d, d),
        dyn_offset: Matrix::zeros(k, d),
        dyn_prec_raw: Matrix::zeros(k * d, d),
    };

    for kk in 0..k {
        g.pi_logits[(0, kk)] = gamma[(0, kk)] - comp.init_dist[kk];
    }
    let mut counts = Matrix::zeros(k, k);
    for xi in &post.q_u.xi {
        counts.add_assign(xi);
    }
    for j in 0..k {
        let row_total: f64 = counts.row(j).iter().sum();
        for kk in 0..k {
            g.trans_logits[(j, kk)] = counts[(j, kk)] - comp.trans[(j, kk)] * row_total;
        }
    }

    let m0 = q_y.means.row(0);
    for (kk, st) in comp.states.iter().enumerate() {
        let w0 = gamma[(0, kk)];
        // Initial state.
        let r: Vec<f64> = m0.iter().zip(&st.init_mean).map(|(a, b)| a - b).collect();
        let grad_mean = st.init_prec.matvec(&r);
        for (dst, v) in g.init_mean.row_mut(kk).iter_mut().zip(&grad_mean) {
            *dst = w0 * v;
        }
        let mut s = q_y.covs[0].clone();
        for i in 0..d {
            for j in 0..d {
                s[(i, j)] += r[i] * r[j];
            }
        }
        let grad_q = inverse_spd(&st.init_prec)?.sub(&s).scale(0.5 * w0);
        let raw_blk = raw.init_prec_raw.block(kk * d, 0, d, d);
        g.init_prec_raw.set_block(kk * d, 0, &prec_raw_grad(&raw_blk, &grad_q));

        // Transitions: weighted statistics with z = (y_{t−1}, 1).
        let mut n = 0.0;
        let mut szz = Matrix::zeros(d + 1, d + 1);
        let mut syz = Matrix::zeros(d, d + 1);
        let mut syy = Matrix::zeros(d, d);
        for t in 1..t_len {
            let w = gamma[(t, kk)];
            if w == 0.0 {
                continue;
            }
            n += w;
            let (mp, mc) = (q_y.means.row(t - 1), q_y.means.row(t));
            let (cp, cc, cr) = (&q_y.covs[t - 1], &q_y.covs[t], &q_y.cross[t - 1]);
            for i in 0..d {
                for j in 0..d {
                    szz[(i, j)] += w * (cp[(i, j)] + mp[i] * mp[j]);
                    // E[y_t y_{t−1}ᵀ] = Cov(y_{t−1}, y_t)ᵀ + m_t m_{t−1}ᵀ.
                    syz[(i, j)] += w * (cr[(j, i)] + mc[i] * mp[j]);
                    syy[(i, j)] += w * (cc[(i, j)] + mc[i] * mc[j]);
                }
                szz[(i, d)] += w * mp[i];
                szz[(d, i)] += w * mp[i];
                syz[(i, d)] += w * mc[i];
            }
            szz[(d, d)] += w;
        }
        let mut a_aug = Matrix::zeros(d, d + 1);
        a_aug.set_block(0, 0, &st.dyn_matrix);
        for i in 0..d {
            a_aug[(i, d)] = st.dyn_offset[i];
        }
        let a_szz = a_aug.matmul(&szz);
        let resid = syy
            .sub(&a_aug.matmul_t(&syz))
            .sub(&syz.matmul_t(&a_aug))
            .add(&a_szz.matmul_t(&a_aug));
        let grad_a = st.dyn_prec.matmul(&syz.sub(&a_szz));
        g.dyn_matrix.set_block(kk * d, 0, &grad_a.block(0, 0, d, d));
        for i in 0..d {
            g.dyn_offset[(kk, i)] = grad_a[(i, d)];
        }
        let grad_q = inverse_spd(&st.dyn_prec)?.scale(n).sub(&resid).scale(0.5);
        let raw_blk = raw.dyn_prec_raw.block(kk * d, 0, d, d);
        g.dyn_prec_raw.set_block(kk * d, 0, &prec_raw_grad(&raw_blk, &grad_q));
    }
    Ok(g)
}

/// Everything that is learned.
#[derive(Debug, Clone, PartialEq)]
pub struct RawModel {
    pub components: Vec<ComponentRaw>,
    pub decoder: MlpWeights,
    pub encoder: MlpWeights,
    /// `1 × M` log-diagonal of `R`.
    pub log_r: Matrix,
}

impl RawModel {
    pub fn n(&self) -> usize {
        self.components.len()
    }

    pub fn to_params(&self) -> SnicaParams {
        SnicaParams {
            components: self.components.iter().map(ComponentRaw::to_params).collect(),
            decoder: self.decoder.clone(),
            obs_noise: self.log_r.as_slice().iter().map(|l| l.exp()).collect(),
        }
    }

    pub fn from_params(params: &SnicaParams, encoder: MlpWeights) -> Result<Self> {
        Ok(Self {
            components: params
                .components
                .iter()
                .map(ComponentRaw::from_params)
                .collect::<Result<_>>()?,
            decoder: params.decoder.clone(),
            encoder,
            log_r: Matrix::from_vec(1, params.m(), params.obs_noise.iter().map(|r| r.ln()).collect()),
        })
    }

    /// Parameter tensors in a fixed order: decoder, encoder, `log_r`, then
    /// the seven groups of each component.
    pub fn pack(&self) -> Vec<Matrix> {
        let mut out = self.decoder.params();
        out.extend(self.encoder.params());
        out.push(self.log_r.clone());
        for c in &self.components {
            out.extend(c.groups().into_iter().cloned());
        }
        out
    }

    pub fn unpack(&mut self, groups: &[Matrix]) {
        let nd = 2 * self.decoder.depth();
        let ne = 2 * self.encoder.depth();
        self.decoder.set_params(&groups[..nd]);
        self.encoder.set_params(&groups[nd..nd + ne]);
        self.log_r = groups[nd + ne].clone();
        let rest = &groups[nd + ne + 1..];
        for (c, chunk) in self.components.iter_mut().zip(rest.chunks(COMPONENT_GROUPS.len())) {
            *c = ComponentRaw::from_groups(chunk);
        }
    }

    /// Names matching [`pack`](Self::pack).
    pub fn group_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for (prefix, net) in [("decoder", &self.decoder), ("encoder", &self.encoder)] {
            for l in 0..net.depth() {
                names.push(format!("{prefix}.{l}.weight"));
                names.push(format!("{prefix}.{l}.bias"));
            }
        }
        names.push("log_r".into());
        for i in 0..self.n() {
            for g in COMPONENT_GROUPS {
                names.push(format!("comp{i}.{g}"));
            }
        }
        names
    }

    pub fn is_finite(&self) -> bool {
        self.pack().iter().all(Matrix::is_finite)
    }
}

/// Training settings.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub n: usize,
    pub d: usize,
    pub k: usize,
    /// Decoder depth `L`; the encoder gets `L + 1` layers.
    pub decoder_layers: usize,
    pub decoder_hidden: usize,
    pub encoder_hidden: usize,
    pub lr: f64,
    pub steps: usize,
    pub restarts: usize,
    pub inner_iters: usize,
    pub inner_tol: f64,
    /// Contiguous window length per step; `None` uses the full sequence.
    pub window: Option<usize>,
    pub init_stay: f64,
    pub init_radius: f64,
    pub init_obs_noise: f64,
    /// Steps averaged for the smoothed ELBO used in restart selection.
    pub smoothing: usize,
    /// Stop when the smoothed per-step ELBO improves by less than this over
    /// one smoothing window.
    pub plateau_tol: Option<f64>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            n: 3,
            d: 2,
            k: 2,
            decoder_layers: 1,
            decoder_hidden: DEFAULT_DECODER_HIDDEN,
            encoder_hidden: DEFAULT_ENCODER_HIDDEN,
            lr: 1e-2,
            steps: 1000,
            restarts: 20,
            inner_iters: crate::inference::DEFAULT_INNER_ITERS,
            inner_tol: crate::inference::DEFAULT_INNER_TOL,
            window: None,
            init_stay: 0.9,
            init_radius: 0.7,
            init_obs_noise: 0.1,
            smoothing: 100,
            plateau_tol: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, m: usize) -> Result<()> {
        let bad = |s: String| Err(SnicaError::ConfigInvalid(s));
        if self.n == 0 || self.d == 0 || self.k == 0 || self.decoder_layers == 0 {
            return bad("N, d, K and L must be positive".into());
        }
        if m < self.n {
            return bad(format!("observation dimension {m} is smaller than N = {}", self.n));
        }
        if self.restarts == 0 {
            return bad("at least one restart is required".into());
        }
        if !(self.lr > 0.0) {
            return bad("learning rate must be positive".into());
        }
        if self.window == Some(0) {
            return bad("window must be positive".into());
        }
        if !(0.0 < self.init_stay && self.init_stay < 1.0) && self.k > 1 {
            return bad("initial stay probability must lie in (0, 1)".into());
        }
        Ok(())
    }

    pub fn mean_field(&self) -> MeanFieldOptions {
        MeanFieldOptions {
            inner_iters: self.inner_iters,
            tol: self.inner_tol,
        }
    }

    pub fn encoder_layers(&self) -> usize {
        self.decoder_layers + 1
    }
}

/// Freshly initialized model for observation dimension `m`.
pub fn init_model(cfg: &TrainConfig, m: usize, rng: &mut impl Rng) -> RawModel {
    let dec_dims = layer_dims(cfg.n, cfg.decoder_hidden, m, cfg.decoder_layers);
    let enc_dims = layer_dims(m, cfg.encoder_hidden, 2 * cfg.n, cfg.encoder_layers());
    let decoder = MlpWeights::random(&dec_dims, Activation::LeakyTanh, Init::Glorot, rng);
    let encoder = MlpWeights::random(&enc_dims, Activation::Relu, Init::Glorot, rng);
    let components = (0..cfg.n)
        .map(|_| ComponentRaw::init(cfg.k, cfg.d, cfg.init_stay, cfg.init_radius, rng))
        .collect();
    RawModel {
        components,
        decoder,
        encoder,
        log_r: Matrix::filled(1, m, cfg.init_obs_noise.ln()),
    }
}

/// Model plus optimizer state; everything needed to resume.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub model: RawModel,
    pub opt: OptState,
}

impl TrainState {
    pub fn new(model: RawModel, lr: f64) -> Self {
        let opt = OptState::new(&model.pack(), lr);
        Self { model, opt }
    }

    pub fn step(&self) -> u64 {
        self.opt.step
    }
}

/// Gradient of the ELBO with respect to every packed parameter tensor, plus
/// the ELBO itself, for one data window and one source sample.
#[derive(Debug, Clone)]
pub struct StepResult {
    pub elbo: ElboBreakdown,
    pub grads: Vec<Matrix>,
}

/// Runs inference on `x` and returns the encoder batch with posteriors.
pub fn infer(model: &RawModel, x: &Matrix, opts: MeanFieldOptions) -> Result<(EncoderBatch, Vec<ComponentPosterior>)> {
    let params = model.to_params();
    let enc = crate::nets::encoder_forward_batch(&model.encoder, x);
    let posts = mean_field_cycle(&enc, &params, opts)?;
    Ok((enc, posts))
}

/// `F·g` for one component: directional derivative of `(E[s_t], E[s_t²])`
/// along surrogate direction `g = (g_v, g_w)`, by central differences.
fn fisher_vector_product(
    post: &ComponentPosterior,
    enc: &EncoderBatch,
    i: usize,
    g_v: &[f64],
    g_w: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let t_len = enc.len();
    let d = post.q_y.d();
    let gmax = g_v.iter().chain(g_w).fold(0.0f64, |m, v| m.max(v.abs()));
    if gmax == 0.0 {
        return Ok((vec![0.0; t_len], vec![0.0; t_len]));
    }
    let wmax = (0..t_len).fold(0.0f64, |m, t| m.max(enc.w[(t, i)].abs()));
    let eps = 1e-5 * wmax.max(1e-2) / gmax;
    let moments = |sign: f64| -> Result<(Vec<f64>, Vec<f64>)> {
        let nodes: Vec<GaussianNat> = (0..t_len)
            .map(|t| {
                let mut g = GaussianNat::zero(d);
                g.h[0] = enc.v[(t, i)] + sign * eps * g_v[t];
                g.j[(0, 0)] = enc.w[(t, i)] + sign * eps * g_w[t];
                g
            })
            .collect();
        let q = update_q_y(&nodes, &post.dynamics)?;
        let m1 = q.source_means();
        let m2 = q
            .source_vars()
            .iter()
            .zip(&m1)
            .map(|(v, m)| v + m * m)
            .collect();
        Ok((m1, m2))
    };
    let (p1, p2) = moments(1.0)?;
    let (n1, n2) = moments(-1.0)?;
    let scale = 0.5 / eps;
    Ok((
        p1.iter().zip(&n1).map(|(a, b)| (a - b) * scale).collect(),
        p2.iter().zip(&n2).map(|(a, b)| (a - b) * scale).collect(),
    ))
}

/// ELBO and its gradient for one window. `rng` supplies the source sample.
pub fn elbo_gradients(
    model: &RawModel,
    x: &Matrix,
    opts: MeanFieldOptions,
    rng: &mut impl Rng,
) -> Result<StepResult> {
    let params = model.to_params();
    let n = model.n();

    // Encoder on a tape so its weights can receive gradients later.
    let mut enc_tape = Tape::new();
    let x_leaf = enc_tape.leaf(x.clone());
    let rec = record_encoder(&model.encoder, &mut enc_tape, x_leaf);
    let enc = EncoderBatch {
        v: enc_tape.value(rec.v).clone(),
        w: enc_tape.value(rec.w).clone(),
    };
    let posts = mean_field_cycle(&enc, &params, opts)?;
    let (s, zeta) = reparam_sample_s(&posts, rng);

    // Reconstruction through the decoder.
    let mut dec_tape = Tape::new();
    let s_leaf = dec_tape.leaf(s.clone());
    let (f_out, dec_params) = model.decoder.record(&mut dec_tape, s_leaf);
    let log_r = dec_tape.leaf(model.log_r.clone());
    let recon_var = dec_tape.gaussian_log_density(x.clone(), f_out, log_r);
    let recon = dec_tape.scalar(recon_var);
    let dec_grads = dec_tape.backward(recon_var)?;
    let grad_s = dec_grads.get_or_zeros(&dec_tape, s_leaf);

    // Surrogate-parameter gradients per component.
    let t_len = x.rows();
    let fvp: Vec<Result<(Vec<f64>, Vec<f64>)>> = crate::par::map_indices(n, |i| {
        let q = &posts[i].q_y;
        let mut g_v = vec![0.0; t_len];
        let mut g_w = vec![0.0; t_len];
        for t in 0..t_len {
            let m = q.means[(t, 0)];
            let c = q.covs[t][(0, 0)].max(1e-300);
            let r_m = grad_s[(t, i)];
            let r_c = r_m * zeta[(t, i)] / (2.0 * c.sqrt());
            g_v[t] = r_m - 2.0 * m * r_c - enc.v[(t, i)];
            g_w[t] = r_c - enc.w[(t, i)];
        }
        fisher_vector_product(&posts[i], &enc, i, &g_v, &g_w)
    });
    let mut grad_v = Matrix::zeros(t_len, n);
    let mut grad_w = Matrix::zeros(t_len, n);
    for (i, r) in fvp.into_iter().enumerate() {
        let (gv, gw) = r?;
        for t in 0..t_len {
            grad_v[(t, i)] = gv[t];
            grad_w[(t, i)] = gw[t];
        }
    }
    let pv = enc_tape.mul_const(rec.v, grad_v);
    let pw = enc_tape.mul_const(rec.w, grad_w);
    let sv = enc_tape.sum(pv);
    let sw = enc_tape.sum(pw);
    let surrogate_obj = enc_tape.add(sv, sw);
    let enc_grads = enc_tape.backward(surrogate_obj)?;

    let mut grads: Vec<Matrix> = dec_params
        .iter()
        .map(|&p| dec_grads.get_or_zeros(&dec_tape, p))
        .collect();
    grads.extend(rec.params.iter().map(|&p| enc_grads.get_or_zeros(&enc_tape, p)));
    grads.push(dec_grads.get_or_zeros(&dec_tape, log_r));
    let comp_grads: Vec<Result<ComponentRaw>> = crate::par::map_indices(n, |i| {
        component_gradients(&model.components[i], &posts[i])
    });
    for g in comp_grads {
        grads.extend(g?.groups().into_iter().cloned());
    }

    let elbo = latent_terms(&params, &posts, recon)?;
    Ok(StepResult { elbo, grads })
}

/// One row of the ELBO trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub step: u64,
    /// Number of time steps the ELBO was computed over.
    pub len: usize,
    pub elbo: ElboBreakdown,
}

impl TraceRow {
    pub fn per_step(&self) -> f64 {
        self.elbo.total / self.len as f64
    }

    pub const CSV_HEADER: &'static str = "step,elbo,recon,kl_u,entropy_y,cross_y,len";

    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.step, self.elbo.total, self.elbo.recon, self.elbo.kl_u, self.elbo.entropy_y, self.elbo.cross_y, self.len
        )
    }
}

fn window_for(cfg: &TrainConfig, t_len: usize, rng: &mut impl Rng) -> (usize, usize) {
    match cfg.window {
        Some(w) if w < t_len => {
            let start = rng.gen_range(0..=t_len - w);
            (start, start + w)
        }
        _ => (0, t_len),
    }
}

/// Performs one optimizer step in place and returns the ELBO observed before
/// the update. Randomness comes from the `sample-<step>` stream of `seeds`.
pub fn train_step(state: &mut TrainState, x: &Matrix, cfg: &TrainConfig, seeds: &SeedTree) -> Result<TraceRow> {
    let step = state.opt.step;
    let mut rng = seeds.indexed("sample", step);
    let (a, b) = window_for(cfg, x.rows(), &mut rng);
    let xw = if (a, b) == (0, x.rows()) { x.clone() } else { x.row_range(a, b) };
    let res = elbo_gradients(&state.model, &xw, cfg.mean_field(), &mut rng)?;
    if !res.elbo.total.is_finite() || res.grads.iter().any(|g| !g.is_finite()) {
        return Err(SnicaError::ImproperMessage("non-finite ELBO or gradient"));
    }
    let mut packed = state.model.pack();
    let neg: Vec<Matrix> = res.grads.iter().map(|g| g.scale(-1.0)).collect();
    adam_step(&mut packed, &neg, &mut state.opt);
    state.model.unpack(&packed);
    Ok(TraceRow {
        step,
        len: b - a,
        elbo: res.elbo,
    })
}

/// Mean per-time-step ELBO over the last `window` trace rows.
pub fn smoothed_elbo(trace: &[TraceRow], window: usize) -> f64 {
    let w = window.max(1).min(trace.len());
    if w == 0 {
        return f64::NEG_INFINITY;
    }
    trace[trace.len() - w..].iter().map(TraceRow::per_step).sum::<f64>() / w as f64
}

/// Result of one restart.
#[derive(Debug, Clone)]
pub struct RestartResult {
    pub restart: usize,
    pub state: TrainState,
    pub trace: Vec<TraceRow>,
    pub score: f64,
}

/// Continues training `state` until `cfg.steps` total steps or a plateau.
pub fn run_training(
    mut state: TrainState,
    x: &Matrix,
    cfg: &TrainConfig,
    seeds: &SeedTree,
    mut on_step: impl FnMut(&TraceRow),
) -> Result<(TrainState, Vec<TraceRow>)> {
    let mut trace = Vec::with_capacity(cfg.steps);
    while (state.opt.step as usize) < cfg.steps {
        let row = train_step(&mut state, x, cfg, seeds)?;
        on_step(&row);
        trace.push(row);
        if let Some(tol) = cfg.plateau_tol {
            let w = cfg.smoothing.max(1);
            if trace.len() >= 2 * w && trace.len() % w == 0 {
                let recent = smoothed_elbo(&trace, w);
                let before = smoothed_elbo(&trace[..trace.len() - w], w);
                if recent - before < tol {
                    log::info!("plateau at step {}", state.opt.step);
                    break;
                }
            }
        }
    }
    Ok((state, trace))
}

/// Fitted models returned by [`train`].
#[derive(Debug, Clone)]
pub struct TrainOutput {
    /// Restarts that finished, in restart order.
    pub runs: Vec<RestartResult>,
    /// Index into `runs` of the highest smoothed ELBO.
    pub best: usize,
    /// `(restart, smoothed ELBO)` for every restart, `NaN` if it failed.
    pub restart_scores: Vec<(usize, f64)>,
}

impl TrainOutput {
    pub fn best(&self) -> &RestartResult {
        &self.runs[self.best]
    }

    pub fn model(&self) -> &RawModel {
        &self.best().state.model
    }

    pub fn params(&self) -> SnicaParams {
        self.model().to_params()
    }
}

/// Trains `cfg.restarts` independently initialized models and keeps the one
/// with the highest smoothed ELBO. Restarts that fail are logged and dropped.
pub fn train(x: &Matrix, cfg: &TrainConfig) -> Result<TrainOutput> {
    cfg.validate(x.cols())?;
    let root = SeedTree::new(cfg.seed);
    let results: Vec<Result<RestartResult>> = crate::par::map_indices(cfg.restarts, |r| {
        let seeds = root.child(&format!("restart-{r}"));
        let mut init_rng = seeds.stream("init");
        let model = init_model(cfg, x.cols(), &mut init_rng);
        let (state, trace) = run_training(TrainState::new(model, cfg.lr), x, cfg, &seeds, |_| {})?;
        let score = smoothed_elbo(&trace, cfg.smoothing);
        Ok(RestartResult {
            restart: r,
            state,
            trace,
            score,
        })
    });
    let mut scores = Vec::with_capacity(cfg.restarts);
    let mut runs: Vec<RestartResult> = Vec::new();
    let mut last_err = None;
    for (r, res) in results.into_iter().enumerate() {
        match res {
            Ok(rr) => {
                scores.push((r, rr.score));
                runs.push(rr);
            }
            Err(e) => {
                log::warn!("restart {r} failed: {e}");
                scores.push((r, f64::NAN));
                last_err = Some(e);
            }
        }
    }
    let best = (0..runs.len()).fold(None, |acc: Option<usize>, i| match acc {
        Some(b) if runs[b].score >= runs[i].score => Some(b),
        _ => Some(i),
    });
    match best {
        Some(best) => Ok(TrainOutput {
            runs,
            best,
            restart_scores: scores,
        }),
        None => Err(last_err.unwrap_or(SnicaError::ConfigInvalid("no restarts".into()))),
    }
}

/// Posterior source means for a fitted model over the whole sequence.
pub fn posterior_source_means(model: &RawModel, x: &Matrix, opts: MeanFieldOptions) -> Result<Matrix> {
    let (_, posts) = infer(model, x, opts)?;
    let t_len = x.rows();
    Ok(Matrix::from_fn(t_len, posts.len(), |t, i| posts[i].q_y.means[(t, 0)]))
}

/// Helper for tests and diagnostics: the component potentials of a model.
pub fn state_potentials(params: &SnicaParams) -> Result<Vec<StatePotentials>> {
    params.components.iter().map(StatePotentials::new).collect()
}
