//! Acceptance suite. Prints one line per criterion and exits nonzero if any
//! criterion fails. Pass criterion numbers as arguments to run a subset:
//!
//! ```text
//! cargo test -p snica-core --test acceptance -- 1 2 10
//! ```
//!
//! Criteria 6 to 9 train full desk-scale models and take hours on one core.

mod common;

use std::cell::OnceCell;
use std::time::Instant;

use rand::Rng;
use rand_distr::StandardNormal;

use common::*;
use snica_core::diagnostics::{check_component, cross_derivative_identity, Density1d, Verdict};
use snica_core::evaluation::{brute_force_max, denoise_score, hungarian_max, mcc, model_mcc, pearson};
use snica_core::expfam::{nat_from_moments, pair_potential, GaussianNat};
use snica_core::genmodel::{
    sample_hmm_chain, sample_slds, simulate, sticky_transitions, ComponentParams, Dataset, SimConfig,
    StateDynamics,
};
use snica_core::inference::{
    expected_dynamics, expected_state_potentials, hmm_kl, mean_field_component, surrogate_potentials,
    update_q_u, update_q_y, BlendedDynamics, MeanFieldOptions, StatePotentials,
};
use snica_core::nets::{encoder_forward_batch, MlpWeights};
use snica_core::numerics::tape::softplus_inv;
use snica_core::numerics::{inverse_spd, Matrix};
use snica_core::training::{
    component_gradients, elbo_gradients, expected_recon_linear, infer, init_model, latent_terms,
    reconstruction_log_lik, reparam_sample_s, state_potentials, train, ComponentRaw, RawModel, TrainConfig,
    TrainOutput, COMPONENT_GROUPS,
};

// Tolerances.
const HMM_TOL: f64 = 1e-12;
const CHAIN_TOL: f64 = 1e-8;
const KALMAN_REL_TOL: f64 = 1e-6;
const FD_STEP: f64 = 1e-5;
const FD_FLOOR: f64 = 1e-4;
const FD_TOL: f64 = 1e-5;
/// The encoder path goes through a finite-difference Fisher-vector product.
const FD_TOL_ENCODER: f64 = 1e-4;
const CROSS_TOL: f64 = 1e-5;
const MONOTONE_SLACK: f64 = 1e-10;
const MCC_L1_MIN: f64 = 0.90;
const MCC_L2_MIN: f64 = 0.70;
const DENOISE_MIN: f64 = 0.95;
const DESK_MINUTES: f64 = 30.0;
const SIZE_STUDY_MINUTES: f64 = 120.0;
const ARBITRARY_SCALE_TOL: f64 = 1e-14;
const STAY_TOL: f64 = 0.005;
const AR_TOL: f64 = 0.01;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

// ---------------------------------------------------------------- 1

fn random_log_probs(rng: &mut rand_chacha::ChaCha8Rng, k: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..k).map(|_| rng.gen_range(0.1..1.0)).collect();
    let s: f64 = w.iter().sum();
    w.iter().map(|v| v / s).collect()
}

fn random_node(rng: &mut rand_chacha::ChaCha8Rng, d: usize) -> GaussianNat {
    let p = random_spd(rng, d, 0.2);
    let h = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let mut g = GaussianNat::new(h, p.scale(-0.5));
    g.c = rng.gen_range(-1.0..1.0);
    g
}

fn random_blended(rng: &mut rand_chacha::ChaCha8Rng, t_len: usize, d: usize) -> BlendedDynamics {
    let pair = |rng: &mut rand_chacha::ChaCha8Rng| {
        let b = random_contraction(rng, d, 0.9);
        let off: Vec<f64> = (0..d).map(|_| rng.gen_range(-0.5..0.5)).collect();
        pair_potential(&b, &off, &random_spd(rng, d, 0.5)).unwrap()
    };
    let init = |rng: &mut rand_chacha::ChaCha8Rng| {
        let mean: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        nat_from_moments(&mean, &random_spd(rng, d, 0.5)).unwrap()
    };
    let (p0, p1) = (pair(rng), pair(rng));
    let (i0, i1) = (init(rng), init(rng));
    let blend = |a: &GaussianNat, b: &GaussianNat, w: f64| {
        let mut g = a.scale(w);
        g.add_scaled(1.0 - w, b);
        g.j = g.j.symmetrize();
        g
    };
    let w0 = rng.gen_range(0.0..1.0);
    BlendedDynamics {
        init: blend(&i0, &i1, w0),
        pairs: (1..t_len).map(|_| blend(&p0, &p1, rng.gen_range(0.0..1.0))).collect(),
    }
}

fn criterion_1() -> Outcome {
    let mut rng = rng(101);
    let mut hmm_err = 0.0f64;
    for _ in 0..20 {
        let (t_len, k) = (5, 2);
        let rho = randn(&mut rng, t_len, k).scale(3.0);
        let init = random_log_probs(&mut rng, k);
        let trans = Matrix::from_fn(k, k, |_, _| rng.gen_range(0.05..1.0));
        let trans = Matrix::from_fn(k, k, |i, j| trans[(i, j)] / trans.row(i).iter().sum::<f64>());
        let (gamma, xi, log_z) = hmm_enumerate(&rho, &init, &trans);
        let log_init: Vec<f64> = init.iter().map(|p| p.ln()).collect();
        let post = update_q_u(&rho, &log_init, &trans.map(f64::ln));
        hmm_err = hmm_err.max(post.gamma.max_abs_diff(&gamma));
        for (a, b) in post.xi.iter().zip(&xi) {
            hmm_err = hmm_err.max(a.max_abs_diff(b));
        }
        hmm_err = hmm_err.max(rel_err(post.log_z, log_z, 1.0));
    }

    let mut chain_err = 0.0f64;
    for _ in 0..20 {
        let (t_len, d) = (6, 2);
        let nodes: Vec<GaussianNat> = (0..t_len).map(|_| random_node(&mut rng, d)).collect();
        let dynamics = random_blended(&mut rng, t_len, d);
        let q = update_q_y(&nodes, &dynamics).unwrap();
        let oracle = dense_chain(&dynamics.init, &nodes, &dynamics.pairs);
        for t in 0..t_len {
            chain_err = chain_err.max(q.means.row(t).iter().zip(oracle.means[t].iter()).fold(0.0, |m, (a, b)| m.max((a - b).abs())));
            chain_err = chain_err.max(q.covs[t].max_abs_diff(&from_na(&oracle.covs[t])));
            if t + 1 < t_len {
                chain_err = chain_err.max(q.cross[t].max_abs_diff(&from_na(&oracle.cross[t])));
            }
        }
        chain_err = chain_err.max(rel_err(q.log_z, oracle.log_z, 1.0));
    }
    outcome(
        hmm_err <= HMM_TOL && chain_err <= CHAIN_TOL,
        format!("q(u) vs enumeration max err {hmm_err:.2e} (tol {HMM_TOL:e}); q(y) vs dense Gaussian max err {chain_err:.2e} (tol {CHAIN_TOL:e})"),
    )
}

// ---------------------------------------------------------------- 2

fn criterion_2() -> Outcome {
    let mut rng = rng(202);
    let (n, d, t_len) = (2, 2, 200);
    let w = [1.3, -0.7];
    let b = [0.2, -0.1];
    let r = [0.3, 0.5];
    let components: Vec<ComponentRaw> = (0..n).map(|_| ComponentRaw::init(1, d, 0.9, 0.8, &mut rng)).collect();
    // Nontrivial initial state so the oracle's prior is not centred.
    let mut components = components;
    for c in &mut components {
        c.init_mean = Matrix::from_fn(1, d, |_, _| rng.gen_range(-1.0..1.0));
        c.dyn_offset = Matrix::from_fn(1, d, |_, _| rng.gen_range(-0.3..0.3));
    }
    let decoder = MlpWeights::linear(Matrix::from_diag(&w), b.to_vec());
    // Encoder producing the exact Gaussian likelihood potentials of s given x.
    let mut enc_w = Matrix::zeros(2 * n, n);
    let mut enc_b = vec![0.0; 2 * n];
    for i in 0..n {
        enc_w[(i, i)] = w[i] / r[i];
        enc_b[i] = -w[i] * b[i] / r[i];
        enc_b[n + i] = softplus_inv(w[i] * w[i] / (2.0 * r[i]) - 1e-4);
    }
    let model = RawModel {
        components,
        decoder,
        encoder: MlpWeights::linear(enc_w, enc_b),
        log_r: Matrix::from_vec(1, n, r.iter().map(|v: &f64| v.ln()).collect()),
    };
    let params = model.to_params();

    let mut s = Matrix::zeros(t_len, n);
    for i in 0..n {
        let y = sample_slds(&params.components[i], &vec![0; t_len], &mut rng);
        for t in 0..t_len {
            s[(t, i)] = y[(t, 0)];
        }
    }
    let x = Matrix::from_fn(t_len, n, |t, i| {
        w[i] * s[(t, i)] + b[i] + r[i].sqrt() * rng.sample::<f64, _>(StandardNormal)
    });

    let (_, posts) = infer(&model, &x, MeanFieldOptions::default()).unwrap();
    let recon = expected_recon_linear(&x, &params.decoder, &params.obs_noise, &posts);
    let elbo = latent_terms(&params, &posts, recon).unwrap().total;

    let dim = n * d;
    let mut lg = Lgssm {
        m0: nalgebra::DVector::zeros(dim),
        p0: nalgebra::DMatrix::zeros(dim, dim),
        f: nalgebra::DMatrix::zeros(dim, dim),
        c: nalgebra::DVector::zeros(dim),
        w: nalgebra::DMatrix::zeros(dim, dim),
        h: nalgebra::DMatrix::zeros(n, dim),
        e: nalgebra::DVector::from_row_slice(&b),
        v: nalgebra::DMatrix::from_diagonal(&nalgebra::DVector::from_row_slice(&params.obs_noise)),
    };
    for (i, comp) in params.components.iter().enumerate() {
        let st = &comp.states[0];
        let o = i * d;
        lg.m0.rows_mut(o, d).copy_from(&nalgebra::DVector::from_row_slice(&st.init_mean));
        lg.p0.view_mut((o, o), (d, d)).copy_from(&to_na(&inverse_spd(&st.init_prec).unwrap()));
        lg.f.view_mut((o, o), (d, d)).copy_from(&to_na(&st.dyn_matrix));
        lg.c.rows_mut(o, d).copy_from(&nalgebra::DVector::from_row_slice(&st.dyn_offset));
        lg.w.view_mut((o, o), (d, d)).copy_from(&to_na(&inverse_spd(&st.dyn_prec).unwrap()));
        lg.h[(i, o)] = w[i];
    }
    let log_px = kalman_log_likelihood(&lg, &x);
    let err = rel_err(elbo, log_px, 0.0);
    outcome(
        err <= KALMAN_REL_TOL,
        format!("ELBO {elbo:.10} vs Kalman log p(x) {log_px:.10}, relative error {err:.2e} (tol {KALMAN_REL_TOL:e})"),
    )
}

// ---------------------------------------------------------------- 3

struct GradCheck {
    worst: f64,
    count: usize,
}

impl GradCheck {
    fn new() -> Self {
        Self { worst: 0.0, count: 0 }
    }

    fn add(&mut self, analytic: f64, numeric: f64) {
        self.worst = self.worst.max(rel_err(analytic, numeric, FD_FLOOR));
        self.count += 1;
    }
}

fn fd_over_entries(base: &Matrix, mut f: impl FnMut(&Matrix) -> f64, mut visit: impl FnMut(usize, usize, f64)) {
    for i in 0..base.rows() {
        for j in 0..base.cols() {
            let mut plus = base.clone();
            plus[(i, j)] += FD_STEP;
            let mut minus = base.clone();
            minus[(i, j)] -= FD_STEP;
            visit(i, j, (f(&plus) - f(&minus)) / (2.0 * FD_STEP));
        }
    }
}

/// ELBO as a function of the encoder with `q(u)`, the blended dynamics and
/// the standard-normal draws held fixed; the KL term is constant and dropped.
fn encoder_objective(
    model: &RawModel,
    x: &Matrix,
    posts: &[snica_core::inference::ComponentPosterior],
    pots: &[StatePotentials],
    zeta: &Matrix,
) -> f64 {
    let params = model.to_params();
    let enc = encoder_forward_batch(&model.encoder, x);
    let d = params.d();
    let mut s = Matrix::zeros(x.rows(), posts.len());
    let mut total = 0.0;
    for (i, post) in posts.iter().enumerate() {
        let nodes = surrogate_potentials(&enc, i, d);
        let q_y = update_q_y(&nodes, &post.dynamics).unwrap();
        let rho = expected_state_potentials(&q_y, &pots[i]);
        total += q_y.entropy() + expected_dynamics(&post.q_u, &rho);
        for t in 0..x.rows() {
            s[(t, i)] = q_y.means[(t, 0)] + q_y.covs[t][(0, 0)].sqrt() * zeta[(t, i)];
        }
    }
    total + reconstruction_log_lik(x, &params.decoder, &params.obs_noise, &s)
}

fn slds_objective(raw: &ComponentRaw, post: &snica_core::inference::ComponentPosterior) -> f64 {
    let pots = StatePotentials::new(&raw.to_params()).unwrap();
    -hmm_kl(&post.q_u, &pots.log_init_dist, &pots.log_trans)
        + expected_dynamics(&post.q_u, &expected_state_potentials(&post.q_y, &pots))
}

fn criterion_3() -> Outcome {
    let (m, t_len) = (3, 8);
    let opts = MeanFieldOptions::default();
    let mut dec = GradCheck::new();
    let mut enc = GradCheck::new();
    let mut slds = GradCheck::new();
    for depth in 1..=4 {
        let mut rng = rng(300 + depth as u64);
        let cfg = TrainConfig {
            n: 2,
            d: 2,
            k: 2,
            decoder_layers: depth,
            decoder_hidden: 5,
            encoder_hidden: 6,
            ..TrainConfig::default()
        };
        let mut model = init_model(&cfg, m, &mut rng);
        // Move the dynamics and noise away from their symmetric initial values.
        for c in &mut model.components {
            c.init_mean = randn(&mut rng, 2, 2).scale(0.5);
            c.dyn_offset = randn(&mut rng, 2, 2).scale(0.3);
            c.pi_logits = randn(&mut rng, 1, 2).scale(0.3);
        }
        model.log_r = Matrix::from_fn(1, m, |_, _| rng.gen_range(-1.0..0.0));
        // Zero biases behind a dead ReLU layer put pre-activations exactly on
        // the kink, where finite differences are meaningless.
        for layer in model.encoder.layers.iter_mut().chain(model.decoder.layers.iter_mut()) {
            for b in &mut layer.bias {
                *b = rng.gen_range(-0.2..0.2);
            }
        }
        let x = randn(&mut rng, t_len, m);
        let sample_seed = 900 + depth as u64;
        let res = elbo_gradients(&model, &x, opts, &mut common::rng(sample_seed)).unwrap();
        let packed = model.pack();
        let n_dec = 2 * model.decoder.depth();
        let n_enc = 2 * model.encoder.depth();

        // Decoder weights and log R through the full ELBO.
        let elbo_at = |g: usize, value: &Matrix| {
            let mut p = packed.clone();
            p[g] = value.clone();
            let mut mm = model.clone();
            mm.unpack(&p);
            elbo_gradients(&mm, &x, opts, &mut common::rng(sample_seed)).unwrap().elbo.total
        };
        for g in (0..n_dec).chain([n_dec + n_enc]) {
            fd_over_entries(&packed[g], |v| elbo_at(g, v), |i, j, fd| dec.add(res.grads[g][(i, j)], fd));
        }

        // Encoder weights with q(u) and the sample noise fixed.
        let (_, posts) = infer(&model, &x, opts).unwrap();
        let pots = state_potentials(&model.to_params()).unwrap();
        let (_, zeta) = reparam_sample_s(&posts, &mut common::rng(sample_seed));
        for g in n_dec..n_dec + n_enc {
            fd_over_entries(
                &packed[g],
                |v| {
                    let mut p = packed.clone();
                    p[g] = v.clone();
                    let mut mm = model.clone();
                    mm.unpack(&p);
                    encoder_objective(&mm, &x, &posts, &pots, &zeta)
                },
                |i, j, fd| enc.add(res.grads[g][(i, j)], fd),
            );
        }

        // SLDS parameters with the posterior fixed.
        for (ci, raw) in model.components.iter().enumerate() {
            let analytic = component_gradients(raw, &posts[ci]).unwrap();
            let groups: Vec<Matrix> = raw.groups().into_iter().cloned().collect();
            let a_groups = analytic.groups();
            for g in 0..COMPONENT_GROUPS.len() {
                fd_over_entries(
                    &groups[g],
                    |v| {
                        let mut gg = groups.clone();
                        gg[g] = v.clone();
                        slds_objective(&ComponentRaw::from_groups(&gg), &posts[ci])
                    },
                    |i, j, fd| slds.add(a_groups[g][(i, j)], fd),
                );
            }
        }
    }
    outcome(
        dec.worst <= FD_TOL && slds.worst <= FD_TOL && enc.worst <= FD_TOL_ENCODER,
        format!(
            "depths 1-4: decoder+logR max rel err {:.2e} over {} entries, SLDS {:.2e} over {}, encoder {:.2e} over {} (tol {FD_TOL:e}, encoder {FD_TOL_ENCODER:e})",
            dec.worst, dec.count, slds.worst, slds.count, enc.worst, enc.count
        ),
    )
}

// ---------------------------------------------------------------- 4

fn criterion_4() -> Outcome {
    let mut rng = rng(404);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let p = rng.gen_range(0.05..0.45);
        let q = rng.gen_range(0.05..0.45);
        let g0 = Density1d::Gaussian {
            mean: rng.gen_range(-1.0..1.0),
            var: rng.gen_range(0.3..2.0),
        };
        let g1 = Density1d::Gaussian {
            mean: rng.gen_range(-1.0..1.0),
            var: rng.gen_range(0.3..2.0),
        };
        let a = rng.gen_range(-1.5..1.5);
        let b = rng.gen_range(-1.5..1.5);
        let (closed, numeric) = cross_derivative_identity(p, q, &g0, &g1, a, b);
        worst = worst.max((closed - numeric).abs() / closed.abs().max(1.0));
    }
    outcome(worst <= CROSS_TOL, format!("100 instances, max scaled err {worst:.2e} (tol {CROSS_TOL:e})"))
}

// ---------------------------------------------------------------- 5

fn criterion_5() -> Outcome {
    let mut rng = rng(505);
    let mut worst_drop = 0.0f64;
    let mut rounds = 0;
    for inst in 0..20 {
        let k = 2 + inst % 2;
        let d = 1 + inst % 3;
        let t_len = 50;
        let comp = ComponentRaw::init(k, d, rng.gen_range(0.6..0.95), rng.gen_range(0.5..0.95), &mut rng).to_params();
        let pots = StatePotentials::new(&comp).unwrap();
        let nodes: Vec<GaussianNat> = (0..t_len)
            .map(|_| {
                let mut g = GaussianNat::zero(d);
                g.h[0] = 2.0 * rng.sample::<f64, _>(StandardNormal);
                g.j[(0, 0)] = -(0.1 + rng.sample::<f64, _>(StandardNormal).exp());
                g
            })
            .collect();
        let post = mean_field_component(&nodes, &pots, MeanFieldOptions { inner_iters: 30, tol: 0.0 }).unwrap();
        for w in post.trace.windows(2) {
            worst_drop = worst_drop.max((w[0] - w[1]) / w[0].abs().max(1.0));
            rounds += 1;
        }
    }
    outcome(
        worst_drop <= MONOTONE_SLACK,
        format!("20 instances, {rounds} consecutive pairs, largest relative decrease {worst_drop:.2e} (slack {MONOTONE_SLACK:e})"),
    )
}

// ---------------------------------------------------------------- 6 to 8

fn desk_sim(layers: usize, seed: u64) -> SimConfig {
    SimConfig {
        t: 20_000,
        n: 3,
        m: 12,
        d: 2,
        k: 2,
        mixing_layers: layers,
        seed,
        ..SimConfig::default()
    }
}

fn desk_train(layers: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        n: 3,
        d: 2,
        k: 2,
        decoder_layers: layers,
        steps: 2000,
        restarts: 5,
        window: Some(1000),
        seed,
        ..TrainConfig::default()
    }
}

struct DeskRun {
    data: Dataset,
    out: TrainOutput,
    selected_mcc: f64,
    restart_mcc: Vec<f64>,
    minutes: f64,
}

fn desk_run(layers: usize) -> DeskRun {
    let seed = 1;
    let started = Instant::now();
    let data = simulate(&desk_sim(layers, seed)).unwrap().dataset;
    let cfg = desk_train(layers, seed);
    let out = train(&data.x, &cfg).unwrap();
    let minutes = started.elapsed().as_secs_f64() / 60.0;
    let opts = cfg.mean_field();
    let restart_mcc: Vec<f64> = out
        .runs
        .iter()
        .map(|r| model_mcc(&data, &r.state.model, opts).unwrap().score)
        .collect();
    let selected_mcc = restart_mcc[out.best];
    eprintln!("desk run L={layers}: restart MCC {restart_mcc:.3?}, selected {}, {minutes:.1} min", out.best);
    DeskRun {
        data,
        out,
        selected_mcc,
        restart_mcc,
        minutes,
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn criterion_6(l1: &DeskRun) -> Outcome {
    outcome(
        l1.selected_mcc >= MCC_L1_MIN && l1.minutes <= DESK_MINUTES,
        format!(
            "L=1 selected-restart MCC {:.4} (min {MCC_L1_MIN}), training {:.1} min (max {DESK_MINUTES})",
            l1.selected_mcc, l1.minutes
        ),
    )
}

fn criterion_7(l1: &DeskRun, l2: &DeskRun, l3: &DeskRun) -> Outcome {
    let means = [mean(&l1.restart_mcc), mean(&l2.restart_mcc), mean(&l3.restart_mcc)];
    let ordered = means[0] >= means[1] && means[1] >= means[2];
    let best2 = l2.restart_mcc.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    outcome(
        l2.selected_mcc >= MCC_L2_MIN && ordered,
        format!(
            "L=2 selected-restart MCC {:.4} (min {MCC_L2_MIN}, max over restarts {best2:.4}); mean MCC L1 {:.4} L2 {:.4} L3 {:.4}",
            l2.selected_mcc, means[0], means[1], means[2]
        ),
    )
}

fn criterion_8(l1: &DeskRun) -> Outcome {
    let score = denoise_score(&l1.data, l1.out.model(), MeanFieldOptions::default()).unwrap();
    outcome(score >= DENOISE_MIN, format!("L=1 denoising correlation {score:.4} (min {DENOISE_MIN})"))
}

// ---------------------------------------------------------------- 9

fn criterion_9() -> Outcome {
    let sizes = [2_000, 10_000, 50_000];
    let seeds = 1..=5u64;
    let started = Instant::now();
    let mut per_size = vec![Vec::new(); sizes.len()];
    for seed in seeds {
        let sim = SimConfig { seed, ..desk_sim(1, seed) };
        let cfg = TrainConfig {
            steps: 1500,
            restarts: 2,
            ..desk_train(1, seed)
        };
        let rows = snica_core::evaluation::data_size_study(&sim, &cfg, &sizes).unwrap();
        for (i, r) in rows.iter().enumerate() {
            per_size[i].push(r.mcc);
        }
        eprintln!("size study seed {seed}: {:?}", rows.iter().map(|r| r.mcc).collect::<Vec<_>>());
    }
    let minutes = started.elapsed().as_secs_f64() / 60.0;
    let means: Vec<f64> = per_size.iter().map(|v| mean(v)).collect();
    let monotone = means.windows(2).all(|w| w[1] >= w[0]);
    outcome(
        monotone && minutes <= SIZE_STUDY_MINUTES,
        format!(
            "mean MCC at T=2000/10000/50000: {:.4} {:.4} {:.4}; {minutes:.0} min (max {SIZE_STUDY_MINUTES})",
            means[0], means[1], means[2]
        ),
    )
}

// ---------------------------------------------------------------- 10

fn criterion_10() -> Outcome {
    let mut rng = rng(1010);
    let (t_len, n) = (500, 4);
    let s_true = randn(&mut rng, t_len, n);
    let s_est = Matrix::from_fn(t_len, n, |t, i| s_true[(t, (i + 1) % n)] + 0.7 * rng.sample::<f64, _>(StandardNormal));
    let base = mcc(&s_true, &s_est).unwrap().score;
    let perm = [2usize, 0, 3, 1];
    let signs = [1.0, -1.0, -1.0, 1.0];
    let pow2 = [0.25, 8.0, 1.0, 0.5];
    let arbitrary = [3.7, 0.013, 250.0, 1.9];
    let col_map = |f: &dyn Fn(usize, f64) -> f64| Matrix::from_fn(t_len, n, |t, i| f(i, s_est[(t, perm[i])]));
    let permuted = mcc(&s_true, &col_map(&|_, v| v)).unwrap().score;
    let flipped = mcc(&s_true, &col_map(&|i, v| signs[i] * v)).unwrap().score;
    let scaled2 = mcc(&s_true, &col_map(&|i, v| pow2[i] * v)).unwrap().score;
    let scaled = mcc(&s_true, &col_map(&|i, v| arbitrary[i] * v)).unwrap().score;
    let exact = permuted == base && flipped == base && scaled2 == base;
    let scale_err = (scaled - base).abs();

    let mut hungarian_ok = true;
    for size in 1..=5 {
        for _ in 0..40 {
            let score = Matrix::from_fn(size, size, |_, _| rng.gen_range(0.0..1.0));
            let total = |a: &[usize]| a.iter().enumerate().map(|(i, &j)| score[(i, j)]).sum::<f64>();
            let h = hungarian_max(&score);
            let b = brute_force_max(&score);
            hungarian_ok &= h == b && (total(&h) - total(&b)).abs() <= 1e-12;
        }
    }
    outcome(
        exact && scale_err <= ARBITRARY_SCALE_TOL && hungarian_ok,
        format!(
            "base {base:.6}; permutation/sign/power-of-2 exact: {exact}; arbitrary scaling err {scale_err:.1e} (tol {ARBITRARY_SCALE_TOL:e}); Hungarian = brute force for N<=5: {hungarian_ok}"
        ),
    )
}

// ---------------------------------------------------------------- 11

fn criterion_11() -> Outcome {
    let mut rng = rng(1111);
    let t_len = 100_000;
    let stay = 0.99;
    let u = sample_hmm_chain(&[0.5, 0.5], &sticky_transitions(2, stay), t_len, &mut rng);
    let stays = u.windows(2).filter(|w| w[0] == w[1]).count() as f64 / (t_len - 1) as f64;

    let b = 0.8;
    let comp = ComponentParams {
        init_dist: vec![1.0],
        trans: Matrix::identity(1),
        states: vec![StateDynamics::with_matrix(Matrix::filled(1, 1, b))],
    };
    let y = sample_slds(&comp, &vec![0; t_len], &mut rng).col_vec(0);
    let lag1 = pearson(&y[..t_len - 1], &y[1..]);
    outcome(
        (stays - stay).abs() <= STAY_TOL && (lag1 - b).abs() <= AR_TOL,
        format!("empirical stay {stays:.4} vs {stay} (tol {STAY_TOL}); AR(1) lag-1 autocorrelation {lag1:.4} vs {b} (tol {AR_TOL})"),
    )
}

// ---------------------------------------------------------------- 12

fn criterion_12() -> Outcome {
    let flag = |r: &snica_core::diagnostics::AssumptionReport, k: &str| r.evidence(k) == Some(1.0);
    let default = check_component(&SimConfig::default().component_params());
    let identical = check_component(
        &SimConfig {
            regimes: Some(vec![StateDynamics::isotropic(2, 0.5); 2]),
            ..SimConfig::default()
        }
        .component_params(),
    );
    let rank1 = check_component(
        &SimConfig {
            stay_prob: 0.5,
            ..SimConfig::default()
        }
        .component_params(),
    );
    let default_ok = default[0].pass == Verdict::Pass && default[1].pass == Verdict::Pass;
    let identical_ok = identical[0].pass == Verdict::Fail
        && flag(&identical[0], "rank_ok")
        && flag(&identical[0], "pi_ok")
        && !flag(&identical[0], "independence_ok")
        && identical[1].pass == Verdict::Fail;
    let rank1_ok = rank1[0].pass == Verdict::Fail
        && !flag(&rank1[0], "rank_ok")
        && flag(&rank1[0], "pi_ok")
        && flag(&rank1[0], "independence_ok")
        && rank1[1].pass == Verdict::Pass;
    outcome(
        default_ok && identical_ok && rank1_ok,
        format!(
            "default A2 {} B {}; identical emissions A2 {} B {}; rank-1 transitions A2 {} B {}",
            default[0].pass, default[1].pass, identical[0].pass, identical[1].pass, rank1[0].pass, rank1[1].pass
        ),
    )
}

// ---------------------------------------------------------------- driver

const NAMES: [&str; 12] = [
    "exact inference vs brute force",
    "ELBO equals Kalman log-likelihood (K=1, linear)",
    "gradients vs finite differences",
    "cross-derivative identity",
    "mean-field objective monotone",
    "L=1 desk MCC",
    "L=2 MCC and depth ordering",
    "denoising correlation",
    "MCC grows with data size",
    "MCC invariances and assignment",
    "simulator statistics",
    "diagnostics on default and degenerate models",
];

fn main() {
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let wanted = |c: usize| selected.is_empty() || selected.contains(&c);
    let l1 = OnceCell::new();
    let mut failures = 0;
    for c in 1..=12 {
        if !wanted(c) {
            continue;
        }
        let started = Instant::now();
        let result = match c {
            1 => criterion_1(),
            2 => criterion_2(),
            3 => criterion_3(),
            4 => criterion_4(),
            5 => criterion_5(),
            6 => criterion_6(l1.get_or_init(|| desk_run(1))),
            7 => {
                let l2 = desk_run(2);
                let l3 = desk_run(3);
                criterion_7(l1.get_or_init(|| desk_run(1)), &l2, &l3)
            }
            8 => criterion_8(l1.get_or_init(|| desk_run(1))),
            9 => criterion_9(),
            10 => criterion_10(),
            11 => criterion_11(),
            12 => criterion_12(),
            _ => unreachable!(),
        };
        if !result.pass {
            failures += 1;
        }
        println!(
            "criterion {c:>2} {} [{:.1}s] {}: {}",
            if result.pass { "PASS" } else { "FAIL" },
            started.elapsed().as_secs_f64(),
            NAMES[c - 1],
            result.detail
        );
    }
    if failures > 0 {
        println!("{failures} acceptance criteria failed");
        std::process::exit(1);
    }
}
