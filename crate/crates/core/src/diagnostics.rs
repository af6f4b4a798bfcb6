//! Numerical checks of the identifiability conditions.
//!
//! Every check returns an [`AssumptionReport`] with a tri-state verdict and
//! named evidence. Thresholds are fixed constants and are echoed in the notes.

use std::fmt;

use crate::genmodel::{ComponentParams, SnicaParams};
use crate::nets::{Activation, MlpWeights};
use crate::numerics::{
    inverse_spd, logdet_spd, singular_values, solve_general, spectral_radius, symmetric_eigen, Matrix,
};
use crate::{Result, SnicaError};

pub const RANK_TOL: f64 = 1e-8;
pub const MIN_PROB: f64 = 1e-8;
pub const GRAM_TOL: f64 = 1e-8;
pub const FLAT_RELATIVE: f64 = 1e-10;
pub const FLAT_RUN_FRACTION: f64 = 0.05;
pub const TAIL_EXPONENT: f64 = 1.5;
pub const TAIL_SLACK: f64 = 0.1;
pub const MIN_TAIL_POINTS: usize = 50;
pub const CROSS_DERIV_STEP: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Pass,
    Fail,
    Inconclusive,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Pass => "pass",
            Verdict::Fail => "fail",
            Verdict::Inconclusive => "inconclusive",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssumptionReport {
    /// `A1`, `A2-HMM`, `A3` or `B-2state`.
    pub name: String,
    pub pass: Verdict,
    pub evidence: Vec<(String, f64)>,
    pub notes: String,
}

impl AssumptionReport {
    fn new(name: &str, pass: Verdict, evidence: Vec<(&str, f64)>, notes: String) -> Self {
        Self {
            name: name.to_string(),
            pass,
            evidence: evidence.into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
            notes,
        }
    }

    pub fn evidence(&self, key: &str) -> Option<f64> {
        self.evidence.iter().find(|(k, _)| k == key).map(|(_, v)| *v)
    }

    /// `key = value` lines terminated by a blank line.
    pub fn to_record(&self) -> String {
        let mut out = format!("check = {}\nresult = {}\n", self.name, self.pass);
        for (k, v) in &self.evidence {
            out.push_str(&format!("{k} = {v}\n"));
        }
        out.push_str(&format!("notes = {}\n\n", self.notes));
        out
    }
}

/// Multivariate Gaussian emission density.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianEmission {
    pub mean: Vec<f64>,
    pub cov: Matrix,
}

/// `∫ N(z; m₁, S₁) N(z; m₂, S₂) dz = N(m₁; m₂, S₁ + S₂)`.
fn gaussian_overlap(a: &GaussianEmission, b: &GaussianEmission) -> Result<f64> {
    let s = a.cov.add(&b.cov);
    let diff: Vec<f64> = a.mean.iter().zip(&b.mean).map(|(x, y)| x - y).collect();
    let prec = inverse_spd(&s)?;
    let quad = crate::numerics::dot(&diff, &prec.matvec(&diff));
    let d = diff.len() as f64;
    Ok((-0.5 * quad - 0.5 * logdet_spd(&s)? - 0.5 * d * (2.0 * std::f64::consts::PI).ln()).exp())
}

/// Transition rank, positive initial mass, linear independence of the
/// emissions (normalized Gram matrix of `L²` inner products) and absence of
/// simultaneous MGF zeros (analytic for Gaussians).
///
/// Evidence: `min_singular_trans`, `min_pi`, `min_eig_gram`, `mgf_no_common_zeros`
/// and one `*_ok` flag per sub-check.
pub fn check_a2_hmm(pi: &[f64], trans: &Matrix, emissions: &[GaussianEmission]) -> AssumptionReport {
    let k = pi.len();
    let min_sv = singular_values(trans)
        .map(|s| s.into_iter().fold(f64::INFINITY, f64::min))
        .unwrap_or(0.0);
    let min_pi = pi.iter().copied().fold(f64::INFINITY, f64::min);
    let min_eig = (|| -> Result<f64> {
        let mut gram = Matrix::zeros(k, k);
        for i in 0..k {
            for j in 0..=i {
                let v = gaussian_overlap(&emissions[i], &emissions[j])?;
                gram[(i, j)] = v;
                gram[(j, i)] = v;
            }
        }
        let norms: Vec<f64> = gram.diag().iter().map(|v| v.sqrt()).collect();
        let corr = Matrix::from_fn(k, k, |i, j| gram[(i, j)] / (norms[i] * norms[j]));
        Ok(symmetric_eigen(&corr)?.0[0])
    })()
    .unwrap_or(f64::NAN);
    let rank_ok = min_sv > RANK_TOL;
    let pi_ok = min_pi > MIN_PROB;
    let gram_ok = min_eig > GRAM_TOL;
    let verdict = if emissions.len() != k {
        Verdict::Inconclusive
    } else if rank_ok && pi_ok && gram_ok {
        Verdict::Pass
    } else {
        Verdict::Fail
    };
    let flag = |b: bool| if b { 1.0 } else { 0.0 };
    AssumptionReport::new(
        "A2-HMM",
        verdict,
        vec![
            ("min_singular_trans", min_sv),
            ("min_pi", min_pi),
            ("min_eig_gram", min_eig),
            ("mgf_no_common_zeros", 1.0),
            ("rank_ok", flag(rank_ok)),
            ("pi_ok", flag(pi_ok)),
            ("independence_ok", flag(gram_ok)),
        ],
        format!(
            "thresholds: singular value > {RANK_TOL:e}, pi > {MIN_PROB:e}, Gram eigenvalue > {GRAM_TOL:e}; \
             Gaussian MGFs never vanish"
        ),
    )
}

/// One-dimensional density with a derivative.
#[derive(Debug, Clone, PartialEq)]
pub enum Density1d {
    Gaussian { mean: f64, var: f64 },
    /// `(weight, mean, var)` triples.
    Mixture(Vec<(f64, f64, f64)>),
}

impl Density1d {
    /// `(γ(a), γ′(a))`.
    pub fn eval(&self, a: f64) -> (f64, f64) {
        match self {
            Density1d::Gaussian { mean, var } => {
                let g = (-0.5 * (a - mean).powi(2) / var).exp() / (2.0 * std::f64::consts::PI * var).sqrt();
                (g, -g * (a - mean) / var)
            }
            Density1d::Mixture(parts) => parts.iter().fold((0.0, 0.0), |(g, dg), &(w, mean, var)| {
                let (p, dp) = Density1d::Gaussian { mean, var }.eval(a);
                (g + w * p, dg + w * dp)
            }),
        }
    }

    /// Evaluated at `scale·a`, with the chain rule applied.
    pub fn rescaled(&self, scale: f64) -> Density1d {
        let map = |mean: f64, var: f64| (mean / scale, var / (scale * scale));
        match self {
            Density1d::Gaussian { mean, var } => {
                let (mean, var) = map(*mean, *var);
                Density1d::Gaussian { mean, var }
            }
            Density1d::Mixture(parts) => Density1d::Mixture(
                parts
                    .iter()
                    .map(|&(w, m, v)| {
                        let (m, v) = map(m, v);
                        (w, m, v)
                    })
                    .collect(),
            ),
        }
    }

    /// Rough support: smallest interval covering every part ± 6 sd.
    pub fn span(&self) -> (f64, f64) {
        let parts: Vec<(f64, f64)> = match self {
            Density1d::Gaussian { mean, var } => vec![(*mean, *var)],
            Density1d::Mixture(p) => p.iter().map(|&(_, m, v)| (m, v)).collect(),
        };
        parts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &(m, v)| {
            (lo.min(m - 6.0 * v.sqrt()), hi.max(m + 6.0 * v.sqrt()))
        })
    }
}

/// `h(a) = γ₀(a)γ₁′(a) − γ₀′(a)γ₁(a)`.
pub fn wronskian(g0: &Density1d, g1: &Density1d, a: f64) -> f64 {
    let (p0, d0) = g0.eval(a);
    let (p1, d1) = g1.eval(a);
    p0 * d1 - d0 * p1
}

/// Evenly spaced grid over the joint span of two densities.
pub fn default_grid(g0: &Density1d, g1: &Density1d, points: usize) -> Vec<f64> {
    let (a0, b0) = g0.span();
    let (a1, b1) = g1.span();
    let (lo, hi) = (a0.min(a1), b0.max(b1));
    let n = points.max(2);
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

/// Fails when `h` cancels to relative precision [`FLAT_RELATIVE`] on a run of
/// consecutive grid points longer than [`FLAT_RUN_FRACTION`] of the grid.
/// Relative means compared with `γ₀|γ₁′| + |γ₀′|γ₁` at the same point.
///
/// Evidence: `longest_flat_fraction`, `max_abs_h`, `grid_points`.
pub fn check_b_two_state(g0: &Density1d, g1: &Density1d, grid: &[f64]) -> AssumptionReport {
    let mut longest = 0usize;
    let mut run = 0usize;
    let mut max_h = 0.0f64;
    let mut positive = true;
    for &a in grid {
        let (p0, d0) = g0.eval(a);
        let (p1, d1) = g1.eval(a);
        positive &= p0 > 0.0 && p1 > 0.0;
        let h = p0 * d1 - d0 * p1;
        max_h = max_h.max(h.abs());
        let scale = p0 * d1.abs() + d0.abs() * p1;
        if h.abs() <= FLAT_RELATIVE * scale {
            run += 1;
            longest = longest.max(run);
        } else {
            run = 0;
        }
    }
    let frac = if grid.is_empty() { 0.0 } else { longest as f64 / grid.len() as f64 };
    let verdict = if grid.len() < 2 || !positive {
        Verdict::Inconclusive
    } else if frac >= FLAT_RUN_FRACTION {
        Verdict::Fail
    } else {
        Verdict::Pass
    };
    AssumptionReport::new(
        "B-2state",
        verdict,
        vec![
            ("longest_flat_fraction", frac),
            ("max_abs_h", max_h),
            ("grid_points", grid.len() as f64),
        ],
        format!("flat means |h| <= {FLAT_RELATIVE:e} relative; fail on a run >= {FLAT_RUN_FRACTION} of the grid"),
    )
}

/// Density of two consecutive observations of a stationary two-state chain
/// with switch probabilities `p` (0→1) and `q` (1→0).
pub fn two_step_density(p: f64, q: f64, g0: &Density1d, g1: &Density1d, a: f64, b: f64) -> f64 {
    let (a0, _) = g0.eval(a);
    let (a1, _) = g1.eval(a);
    let (b0, _) = g0.eval(b);
    let (b1, _) = g1.eval(b);
    let s = p + q;
    (q * (1.0 - p) * a0 * b0 + q * p * a0 * b1 + p * q * a1 * b0 + p * (1.0 - q) * a1 * b1) / s
}

/// `∂²log p₂/∂a∂b` from the closed form and from central differences with
/// step [`CROSS_DERIV_STEP`]; returns `(closed_form, numeric)`.
pub fn cross_derivative_identity(p: f64, q: f64, g0: &Density1d, g1: &Density1d, a: f64, b: f64) -> (f64, f64) {
    let p2 = two_step_density(p, q, g0, g1, a, b);
    let closed = p * q * (1.0 - p - q) * wronskian(g0, g1, a) * wronskian(g0, g1, b) / ((p + q).powi(2) * p2 * p2);
    let e = CROSS_DERIV_STEP;
    let lp = |x: f64, y: f64| two_step_density(p, q, g0, g1, x, y).ln();
    let numeric = (lp(a + e, b + e) - lp(a + e, b - e) - lp(a - e, b + e) + lp(a - e, b - e)) / (4.0 * e * e);
    (closed, numeric)
}

/// Tail exponent fit: slope of `log(−log S(t))` against `log t` over the
/// upper quartile of the sample norms, `S` the empirical survival function.
/// Passes when the slope is at least `rho_tilde − 0.1`.
///
/// Evidence: `slope`, `tail_points`, `threshold`.
pub fn check_a1_tail(samples: &Matrix, rho_tilde: f64) -> AssumptionReport {
    let n = samples.rows();
    let mut norms: Vec<f64> = (0..n).map(|r| samples.row(r).iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
    norms.sort_by(f64::total_cmp);
    let start = (3 * n) / 4;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    // Survival at the k-th order statistic is (n − k)/n; the last point has
    // S = 0 and is dropped.
    for (k, &t) in norms.iter().enumerate().skip(start) {
        let surv = (n - k) as f64 / n as f64;
        if surv >= 1.0 || k + 1 >= n || t <= 0.0 {
            continue;
        }
        xs.push(t.ln());
        ys.push((-surv.ln()).ln());
    }
    let threshold = rho_tilde - TAIL_SLACK;
    let notes = format!("slope threshold {threshold}; at least {MIN_TAIL_POINTS} tail points required");
    if xs.len() < MIN_TAIL_POINTS {
        return AssumptionReport::new(
            "A1",
            Verdict::Inconclusive,
            vec![("slope", f64::NAN), ("tail_points", xs.len() as f64), ("threshold", threshold)],
            notes,
        );
    }
    let mx = xs.iter().sum::<f64>() / xs.len() as f64;
    let my = ys.iter().sum::<f64>() / ys.len() as f64;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { f64::NAN };
    let verdict = if !slope.is_finite() {
        Verdict::Inconclusive
    } else if slope >= threshold {
        Verdict::Pass
    } else {
        Verdict::Fail
    };
    AssumptionReport::new(
        "A1",
        verdict,
        vec![("slope", slope), ("tail_points", xs.len() as f64), ("threshold", threshold)],
        notes,
    )
}

/// Domain of the components for the range check; `None` bounds are infinite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DomainBox {
    pub lo: Option<f64>,
    pub hi: Option<f64>,
}

impl DomainBox {
    pub const UNBOUNDED: DomainBox = DomainBox { lo: None, hi: None };

    pub fn bounded(lo: f64, hi: f64) -> Self {
        Self { lo: Some(lo), hi: Some(hi) }
    }

    pub fn is_bounded(&self) -> bool {
        self.lo.is_some() && self.hi.is_some()
    }
}

/// Compactness of the decoder image over the component domain.
///
/// A bounded output activation or a bounded domain passes. Otherwise the
/// decoder is probed along `n_probe` rays at radii 10³ and 10⁴: growth ratio
/// above 5 on any ray fails, saturation on all rays is inconclusive.
///
/// Evidence: `max_norm_box`, `max_growth_ratio`, `bounded_output`.
pub fn check_a3_range(decoder: &MlpWeights, domain: DomainBox, n_probe: usize) -> AssumptionReport {
    let n = decoder.in_dim();
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let probes = n_probe.max(1);
    let direction = |p: usize| -> Vec<f64> {
        // Deterministic low-discrepancy directions.
        let v: Vec<f64> = (0..n)
            .map(|i| {
                let phase = (p as f64 + 0.5) * (i as f64 + 1.0) * 0.618_033_988_749_895;
                (2.0 * std::f64::consts::PI * phase.fract()).cos()
            })
            .collect();
        let l = norm(&v).max(1e-12);
        v.iter().map(|x| x / l).collect()
    };
    let (lo, hi) = (domain.lo.unwrap_or(-1.0), domain.hi.unwrap_or(1.0));
    let max_norm_box = (0..probes)
        .map(|p| {
            let x: Vec<f64> = direction(p)
                .iter()
                .map(|d| lo + (hi - lo) * 0.5 * (d + 1.0))
                .collect();
            norm(&decoder.forward(&x))
        })
        .fold(0.0, f64::max);
    let bounded_output = decoder.output_activation.is_bounded();
    let mut max_growth = 0.0f64;
    if !domain.is_bounded() {
        for p in 0..probes {
            let dir: Vec<f64> = direction(p)
                .iter()
                .map(|&d| match (domain.lo, domain.hi) {
                    (Some(_), None) => d.abs(),
                    (None, Some(_)) => -d.abs(),
                    _ => d,
                })
                .collect();
            let at = |r: f64| norm(&decoder.forward(&dir.iter().map(|d| r * d).collect::<Vec<_>>()));
            let (near, far) = (at(1e3), at(1e4));
            max_growth = max_growth.max(far / near.max(1e-300));
        }
    }
    let verdict = if bounded_output || domain.is_bounded() {
        if max_norm_box.is_finite() {
            Verdict::Pass
        } else {
            Verdict::Fail
        }
    } else if max_growth > 5.0 {
        Verdict::Fail
    } else {
        Verdict::Inconclusive
    };
    AssumptionReport::new(
        "A3",
        verdict,
        vec![
            ("max_norm_box", max_norm_box),
            ("max_growth_ratio", max_growth),
            ("bounded_output", if bounded_output { 1.0 } else { 0.0 }),
        ],
        format!(
            "output activation {}; domain {}",
            decoder.output_activation.name(),
            if domain.is_bounded() { "bounded" } else { "unbounded" }
        ),
    )
}

/// Stationary distribution of each state's dynamics, `Σ = BΣBᵀ + Q⁻¹`,
/// `μ = (I − B)⁻¹b`.
pub fn stationary_emissions(comp: &ComponentParams) -> Result<Vec<GaussianEmission>> {
    comp.states
        .iter()
        .map(|st| {
            let d = st.dim();
            let b = &st.dyn_matrix;
            if spectral_radius(b)? >= 1.0 {
                return Err(SnicaError::ConfigInvalid("dynamics are not stable".into()));
            }
            let noise = inverse_spd(&st.dyn_prec)?;
            // (I − B⊗B) vec(Σ) = vec(Q⁻¹), row-major vec.
            let dd = d * d;
            let lhs = Matrix::from_fn(dd, dd, |r, c| {
                let (i, j) = (r / d, r % d);
                let (k, l) = (c / d, c % d);
                let id = if r == c { 1.0 } else { 0.0 };
                id - b[(i, k)] * b[(j, l)]
            });
            let rhs = Matrix::from_vec(dd, 1, noise.as_slice().to_vec());
            let cov = Matrix::from_vec(d, d, solve_general(&lhs, &rhs)?.into_vec()).symmetrize();
            let i_minus_b = Matrix::identity(d).sub(b);
            let mean = solve_general(&i_minus_b, &Matrix::column(&st.dyn_offset))?.into_vec();
            Ok(GaussianEmission { mean, cov })
        })
        .collect()
}

/// Source-coordinate marginals of [`stationary_emissions`].
pub fn source_emissions(comp: &ComponentParams) -> Result<Vec<Density1d>> {
    Ok(stationary_emissions(comp)?
        .into_iter()
        .map(|e| Density1d::Gaussian {
            mean: e.mean[0],
            var: e.cov[(0, 0)],
        })
        .collect())
}

pub const DEFAULT_GRID_POINTS: usize = 2001;

/// A2-HMM and B-2state checks for one component, using the stationary
/// source emissions. B-2state is inconclusive unless `K = 2`.
pub fn check_component(comp: &ComponentParams) -> Vec<AssumptionReport> {
    let source = match source_emissions(comp) {
        Ok(s) => s,
        Err(e) => {
            let note = format!("no stationary emissions: {e}");
            return vec![
                AssumptionReport::new("A2-HMM", Verdict::Inconclusive, vec![], note.clone()),
                AssumptionReport::new("B-2state", Verdict::Inconclusive, vec![], note),
            ];
        }
    };
    let gaussians: Vec<GaussianEmission> = source
        .iter()
        .map(|g| match g {
            Density1d::Gaussian { mean, var } => GaussianEmission {
                mean: vec![*mean],
                cov: Matrix::filled(1, 1, *var),
            },
            Density1d::Mixture(_) => unreachable!(),
        })
        .collect();
    let a2 = check_a2_hmm(&comp.init_dist, &comp.trans, &gaussians);
    let b = if comp.k() == 2 {
        let grid = default_grid(&source[0], &source[1], DEFAULT_GRID_POINTS);
        check_b_two_state(&source[0], &source[1], &grid)
    } else {
        AssumptionReport::new(
            "B-2state",
            Verdict::Inconclusive,
            vec![("k", comp.k() as f64)],
            "only two-state components are audited".into(),
        )
    };
    vec![a2, b]
}

/// All checks for a model; A1 runs only when noise-free samples are given.
pub fn diagnose(
    params: &SnicaParams,
    noise_free: Option<&Matrix>,
    domain: DomainBox,
    n_probe: usize,
) -> Vec<(Option<usize>, AssumptionReport)> {
    let mut out = Vec::new();
    for (i, comp) in params.components.iter().enumerate() {
        for r in check_component(comp) {
            out.push((Some(i), r));
        }
    }
    if let Some(z) = noise_free {
        out.push((None, check_a1_tail(z, TAIL_EXPONENT)));
    }
    out.push((None, check_a3_range(&params.decoder, domain, n_probe)));
    out
}

/// Activation check helper: a purely affine decoder.
pub fn is_affine(decoder: &MlpWeights) -> bool {
    decoder.depth() == 1 && decoder.output_activation == Activation::Identity
}
