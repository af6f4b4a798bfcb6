//! The five commands. Each takes a parsed configuration, an optional seed
//! override and an output directory, and returns a short text summary.
//!
//! Configuration keys (required keys in bold in the README):
//!
//! | command  | keys |
//! |----------|------|
//! | simulate | T N M d K L; stay_prob obs_noise mixing_hidden seed |
//! | train    | data N d K L steps restarts; lr inner_iters inner_tol window decoder_hidden encoder_hidden init_stay init_radius init_obs_noise smoothing plateau_tol seed resume |
//! | eval     | checkpoint data |
//! | diagnose | checkpoint, or N M d K L [stay_prob degenerate]; data domain_lo domain_hi n_probe seed |
//! | datasize | simulation keys, training keys (no data), sizes |

use std::fmt::Write as _;
use std::path::Path;

use snica_core::diagnostics::{diagnose, AssumptionReport, DomainBox, TAIL_EXPONENT};
use snica_core::evaluation::{data_size_study, denoise_score, model_mcc, MccReport};
use snica_core::genmodel::{simulate, SimConfig, SnicaParams, StateDynamics};
use snica_core::inference::{MeanFieldOptions, DEFAULT_INNER_ITERS, DEFAULT_INNER_TOL};
use snica_core::nets::{DEFAULT_DECODER_HIDDEN, DEFAULT_ENCODER_HIDDEN};
use snica_core::numerics::Matrix;
use snica_core::rng::SeedTree;
use snica_core::training::{init_model, run_training, train, TraceRow, TrainConfig, TrainState};
use snica_core::SnicaError;

use crate::checkpoint::{read_dataset, write_dataset, Checkpoint};
use crate::config::RunConfig;
use crate::error::{CliError, Result};

fn seed_of(cfg: &RunConfig, seed: Option<u64>) -> Result<u64> {
    match seed {
        Some(s) => Ok(s),
        None => cfg.get_or("seed", 0),
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

pub fn sim_config(cfg: &RunConfig, seed: u64) -> Result<SimConfig> {
    let d = SimConfig::default();
    let sim = SimConfig {
        t: cfg.positive("T")?,
        n: cfg.positive("N")?,
        m: cfg.positive("M")?,
        d: cfg.positive("d")?,
        k: cfg.positive("K")?,
        mixing_layers: cfg.positive("L")?,
        mixing_hidden: cfg.get_opt("mixing_hidden")?,
        stay_prob: cfg.get_or("stay_prob", d.stay_prob)?,
        obs_noise: cfg.get_or("obs_noise", d.obs_noise)?,
        regimes: None,
        seed,
    };
    if sim.m < sim.n {
        return Err(CliError::ConfigInvalid(format!("M = {} must be at least N = {}", sim.m, sim.n)));
    }
    sim.validate()?;
    Ok(sim)
}

/// Training settings; `T` is not needed here.
pub fn train_config(cfg: &RunConfig, seed: u64) -> Result<TrainConfig> {
    let d = TrainConfig::default();
    Ok(TrainConfig {
        n: cfg.positive("N")?,
        d: cfg.positive("d")?,
        k: cfg.positive("K")?,
        decoder_layers: cfg.positive("L")?,
        decoder_hidden: cfg.get_or("decoder_hidden", DEFAULT_DECODER_HIDDEN)?,
        encoder_hidden: cfg.get_or("encoder_hidden", DEFAULT_ENCODER_HIDDEN)?,
        lr: cfg.get_or("lr", d.lr)?,
        steps: cfg.get("steps")?,
        restarts: cfg.positive("restarts")?,
        inner_iters: cfg.get_or("inner_iters", DEFAULT_INNER_ITERS)?,
        inner_tol: cfg.get_or("inner_tol", DEFAULT_INNER_TOL)?,
        window: cfg.get_opt("window")?,
        init_stay: cfg.get_or("init_stay", d.init_stay)?,
        init_radius: cfg.get_or("init_radius", d.init_radius)?,
        init_obs_noise: cfg.get_or("init_obs_noise", d.init_obs_noise)?,
        smoothing: cfg.get_or("smoothing", d.smoothing)?,
        plateau_tol: cfg.get_opt("plateau_tol")?,
        seed,
    })
}

pub fn cmd_simulate(cfg: &RunConfig, seed: Option<u64>, out: &Path) -> Result<String> {
    let sim = sim_config(cfg, seed_of(cfg, seed)?)?;
    let data = simulate(&sim)?.dataset;
    let files = write_dataset(out, &data)?;
    Ok(format!(
        "simulated T={} N={} M={} L={} seed={}; wrote {} files to {}",
        sim.t,
        sim.n,
        sim.m,
        sim.mixing_layers,
        sim.seed,
        files.len(),
        out.display()
    ))
}

fn trace_csv(trace: &[TraceRow]) -> String {
    let mut s = format!("{}\n", TraceRow::CSV_HEADER);
    for r in trace {
        s.push_str(&r.to_csv());
        s.push('\n');
    }
    s
}

pub fn cmd_train(cfg: &RunConfig, seed: Option<u64>, out: &Path) -> Result<String> {
    let data_dir: String = cfg.get("data")?;
    let data = read_dataset(Path::new(&data_dir))?;
    ensure_dir(out)?;
    if let Some(resume) = cfg.get_opt::<String>("resume")? {
        let ck = Checkpoint::load(Path::new(&resume))?;
        let tcfg = train_config(cfg, ck.seed)?;
        tcfg.validate(data.dim())?;
        let seeds = SeedTree::new(ck.seed).child(&format!("restart-{}", ck.restart));
        let (state, trace) = run_training(ck.state, &data.x, &tcfg, &seeds, |_| {})?;
        let saved = Checkpoint {
            state,
            seed: ck.seed,
            restart: ck.restart,
            config: cfg.clone(),
        };
        saved.save(out)?;
        write_text(&out.join("trace.csv"), &trace_csv(&trace))?;
        return Ok(format!(
            "resumed restart {} to step {}; checkpoint in {}",
            ck.restart,
            saved.state.step(),
            out.display()
        ));
    }
    let tcfg = train_config(cfg, seed_of(cfg, seed)?)?;
    let result = train(&data.x, &tcfg)?;
    let best = result.best();
    Checkpoint {
        state: best.state.clone(),
        seed: tcfg.seed,
        restart: best.restart,
        config: cfg.clone(),
    }
    .save(out)?;
    write_text(&out.join("trace.csv"), &trace_csv(&best.trace))?;
    let mut scores = String::from("restart,smoothed_elbo\n");
    for (r, s) in &result.restart_scores {
        let _ = writeln!(scores, "{r},{s}");
    }
    write_text(&out.join("restarts.csv"), &scores)?;
    Ok(format!(
        "trained {} restarts; best restart {} with smoothed ELBO/step {:.6}; checkpoint in {}",
        tcfg.restarts,
        best.restart,
        best.score,
        out.display()
    ))
}

pub fn mean_field_of(cfg: &RunConfig) -> Result<MeanFieldOptions> {
    Ok(MeanFieldOptions {
        inner_iters: cfg.get_or("inner_iters", DEFAULT_INNER_ITERS)?,
        tol: cfg.get_or("inner_tol", DEFAULT_INNER_TOL)?,
    })
}

/// Results of `eval`.
#[derive(Debug)]
pub struct EvalOutput {
    pub mcc: Option<MccReport>,
    pub denoise: std::result::Result<f64, SnicaError>,
}

pub fn evaluate(checkpoint: &Path, data_dir: &Path) -> Result<EvalOutput> {
    let ck = Checkpoint::load(checkpoint)?;
    let data = read_dataset(data_dir)?;
    let opts = mean_field_of(&ck.config)?;
    let model = &ck.state.model;
    let mcc = match model_mcc(&data, model, opts) {
        Ok(r) => Some(r),
        Err(SnicaError::MissingGroundTruth) => None,
        Err(e) => return Err(e.into()),
    };
    let denoise = match denoise_score(&data, model, opts) {
        Err(SnicaError::MissingGroundTruth) => Err(SnicaError::MissingGroundTruth),
        Err(e) => return Err(e.into()),
        Ok(v) => Ok(v),
    };
    Ok(EvalOutput { mcc, denoise })
}

pub fn cmd_eval(cfg: &RunConfig, _seed: Option<u64>, out: &Path) -> Result<String> {
    let ck: String = cfg.get("checkpoint")?;
    let data: String = cfg.get("data")?;
    let res = evaluate(Path::new(&ck), Path::new(&data))?;
    ensure_dir(out)?;
    let mut text = String::new();
    let mut csv = String::from("metric,value\n");
    match &res.mcc {
        Some(r) => {
            text.push_str(&r.to_text());
            let _ = writeln!(csv, "mcc,{}", r.score);
            write_text(&out.join("mcc.csv"), &r.to_csv())?;
        }
        None => text.push_str("MCC skipped: no ground-truth sources\n"),
    }
    match &res.denoise {
        Ok(v) => {
            let _ = writeln!(text, "denoise {v:.4}");
            let _ = writeln!(csv, "denoise,{v}");
        }
        Err(e) => {
            let _ = writeln!(text, "denoise unavailable: {e}");
        }
    }
    write_text(&out.join("eval.csv"), &csv)?;
    write_text(&out.join("eval.txt"), &text)?;
    Ok(text.trim_end().to_string())
}

/// Model for `diagnose` built from simulation keys, with optional
/// `degenerate = identical_emissions | rank1_transitions`.
pub fn spec_model(cfg: &RunConfig, seed: u64) -> Result<(SnicaParams, Matrix)> {
    let mut c = cfg.clone();
    if !c.contains("T") {
        c.set("T", 10_000);
    }
    let mut sim = sim_config(&c, seed)?;
    match cfg.raw("degenerate").unwrap_or("none") {
        "none" => {}
        "identical_emissions" => {
            sim.regimes = Some(vec![StateDynamics::isotropic(sim.d, 0.5); sim.k]);
        }
        "rank1_transitions" => sim.stay_prob = 1.0 / sim.k as f64,
        other => {
            return Err(CliError::ConfigInvalid(format!(
                "key `degenerate`: unknown value `{other}` (none, identical_emissions, rank1_transitions)"
            )))
        }
    }
    let s = simulate(&sim)?;
    let f_s = s.dataset.truth.expect("simulation has ground truth").f_s;
    Ok((s.params, f_s))
}

pub fn run_diagnostics(cfg: &RunConfig, seed: u64) -> Result<Vec<(Option<usize>, AssumptionReport)>> {
    let (params, noise_free) = if let Some(ck) = cfg.get_opt::<String>("checkpoint")? {
        let ck = Checkpoint::load(Path::new(&ck))?;
        let params = ck.state.model.to_params();
        let noise_free = match cfg.get_opt::<String>("data")? {
            Some(d) => read_dataset(Path::new(&d))?.truth.map(|g| g.f_s),
            None => None,
        };
        (params, noise_free)
    } else {
        let (p, f) = spec_model(cfg, seed)?;
        (p, Some(f))
    };
    let domain = DomainBox {
        lo: cfg.get_opt("domain_lo")?,
        hi: cfg.get_opt("domain_hi")?,
    };
    let n_probe: usize = cfg.get_or("n_probe", 64)?;
    Ok(diagnose(&params, noise_free.as_ref(), domain, n_probe))
}

pub fn cmd_diagnose(cfg: &RunConfig, seed: Option<u64>, out: &Path) -> Result<String> {
    let reports = run_diagnostics(cfg, seed_of(cfg, seed)?)?;
    let mut text = String::new();
    let mut summary = String::new();
    for (comp, r) in &reports {
        if let Some(i) = comp {
            let _ = writeln!(text, "component = {i}");
        }
        text.push_str(&r.to_record());
        let who = comp.map_or_else(|| "model".to_string(), |i| format!("component {i}"));
        let _ = writeln!(summary, "{} ({who}): {}", r.name, r.pass);
    }
    let _ = writeln!(text, "# A1 slope threshold uses exponent {TAIL_EXPONENT}");
    ensure_dir(out)?;
    write_text(&out.join("diagnostics.txt"), &text)?;
    Ok(summary.trim_end().to_string())
}

pub fn cmd_datasize(cfg: &RunConfig, seed: Option<u64>, out: &Path) -> Result<String> {
    let seed = seed_of(cfg, seed)?;
    let mut c = cfg.clone();
    let sizes: Vec<usize> = cfg.get_list("sizes")?;
    if !c.contains("T") {
        c.set("T", sizes.first().copied().unwrap_or(1));
    }
    let sim = sim_config(&c, seed)?;
    let tcfg = train_config(cfg, seed)?;
    let rows = data_size_study(&sim, &tcfg, &sizes)?;
    let mut csv = String::from("T,mcc\n");
    for r in &rows {
        let _ = writeln!(csv, "{},{}", r.t, r.mcc);
    }
    ensure_dir(out)?;
    write_text(&out.join("datasize.csv"), &csv)?;
    Ok(csv.trim_end().to_string())
}

/// Fresh untrained state, used by tests of the resume path.
pub fn initial_state(tcfg: &TrainConfig, m: usize, restart: usize) -> TrainState {
    let seeds = SeedTree::new(tcfg.seed).child(&format!("restart-{restart}"));
    TrainState::new(init_model(tcfg, m, &mut seeds.stream("init")), tcfg.lr)
}
