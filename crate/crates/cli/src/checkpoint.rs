//! Checkpoints and dataset directories.
//!
//! A checkpoint is a directory holding `manifest.txt` and one tensor file per
//! parameter group, plus the two Adam moment tensors of each group. The
//! manifest lists the format version, model structure, training position,
//! the groups with shapes, and a snapshot of the run configuration.

use std::path::{Path, PathBuf};

use snica_core::genmodel::{Dataset, GroundTruth};
use snica_core::nets::{Activation, Layer, MlpWeights};
use snica_core::numerics::Matrix;
use snica_core::training::{ComponentRaw, OptState, RawModel, TrainState, COMPONENT_GROUPS};

use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::tensor_file::{read_matrix, write_matrix, Tensor};

pub const CHECKPOINT_VERSION: u32 = 1;
pub const MANIFEST: &str = "manifest.txt";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub state: TrainState,
    pub seed: u64,
    /// Restart whose seed stream the state follows.
    pub restart: usize,
    pub config: RunConfig,
}

fn group_file(prefix: &str, name: &str) -> String {
    format!("{prefix}.{name}.snic")
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

impl Checkpoint {
    pub fn save(&self, dir: &Path) -> Result<()> {
        ensure_dir(dir)?;
        let model = &self.state.model;
        let names = model.group_names();
        let params = model.pack();
        let opt = &self.state.opt;
        let meta = format!("seed={} step={}", self.seed, opt.step);
        let mut manifest = format!("format_version = {CHECKPOINT_VERSION}\n");
        let mut kv = |k: &str, v: String| manifest.push_str(&format!("{k} = {v}\n"));
        kv("seed", self.seed.to_string());
        kv("restart", self.restart.to_string());
        kv("step", opt.step.to_string());
        kv("lr", format!("{:?}", opt.lr));
        kv("beta1", format!("{:?}", opt.beta1));
        kv("beta2", format!("{:?}", opt.beta2));
        kv("eps", format!("{:?}", opt.eps));
        kv("n", model.n().to_string());
        kv("decoder_activation", model.decoder.activation.name().into());
        kv("decoder_output", model.decoder.output_activation.name().into());
        kv("encoder_activation", model.encoder.activation.name().into());
        kv("encoder_output", model.encoder.output_activation.name().into());
        kv("decoder_depth", model.decoder.depth().to_string());
        kv("encoder_depth", model.encoder.depth().to_string());
        for (i, (name, p)) in names.iter().zip(&params).enumerate() {
            manifest.push_str(&format!("group = {name} {} {}\n", p.rows(), p.cols()));
            write_matrix(&dir.join(group_file("param", name)), p, &meta)?;
            write_matrix(&dir.join(group_file("adam_m", name)), &opt.m[i], &meta)?;
            write_matrix(&dir.join(group_file("adam_v", name)), &opt.v[i], &meta)?;
        }
        for (k, v) in self.config.iter() {
            manifest.push_str(&format!("config.{k} = {v}\n"));
        }
        let path = dir.join(MANIFEST);
        std::fs::write(&path, manifest).map_err(|e| CliError::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST);
        let text = std::fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
        let mut header = RunConfig::default();
        let mut config = RunConfig::default();
        let mut groups = Vec::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| CliError::Format(format!("manifest line `{line}`")))?;
            if k == "group" {
                let parts: Vec<&str> = v.split_whitespace().collect();
                let [name, r, c] = parts[..] else {
                    return Err(CliError::Format(format!("manifest group `{v}`")));
                };
                let shape = (
                    r.parse::<usize>().map_err(|_| CliError::Format(format!("group shape `{v}`")))?,
                    c.parse::<usize>().map_err(|_| CliError::Format(format!("group shape `{v}`")))?,
                );
                groups.push((name.to_string(), shape));
            } else if let Some(ck) = k.strip_prefix("config.") {
                config.set(ck, v);
            } else {
                header.set(k, v);
            }
        }
        let fmt = |e: CliError| match e {
            CliError::ConfigInvalid(m) => CliError::Format(format!("manifest: {m}")),
            other => other,
        };
        let version: u32 = header.get("format_version").map_err(fmt)?;
        if version != CHECKPOINT_VERSION {
            return Err(CliError::Format(format!(
                "checkpoint version {version} is not supported (this build reads version {CHECKPOINT_VERSION})"
            )));
        }
        let act = |key: &str| -> Result<Activation> {
            let name: String = header.get(key).map_err(fmt)?;
            Activation::from_name(&name).ok_or_else(|| CliError::Format(format!("unknown activation `{name}`")))
        };
        let n: usize = header.get("n").map_err(fmt)?;
        let dec_depth: usize = header.get("decoder_depth").map_err(fmt)?;
        let enc_depth: usize = header.get("encoder_depth").map_err(fmt)?;
        let expected = 2 * (dec_depth + enc_depth) + 1 + n * COMPONENT_GROUPS.len();
        if groups.len() != expected {
            return Err(CliError::Format(format!("manifest lists {} groups, expected {expected}", groups.len())));
        }
        let read = |prefix: &str, name: &str, shape: (usize, usize)| -> Result<Matrix> {
            let m = read_matrix(&dir.join(group_file(prefix, name)))?;
            if m.shape() != shape {
                return Err(CliError::Format(format!("{prefix}.{name}: shape {:?}, manifest {shape:?}", m.shape())));
            }
            Ok(m)
        };
        let mut params = Vec::with_capacity(groups.len());
        let mut m = Vec::with_capacity(groups.len());
        let mut v = Vec::with_capacity(groups.len());
        for (name, shape) in &groups {
            params.push(read("param", name, *shape)?);
            m.push(read("adam_m", name, *shape)?);
            v.push(read("adam_v", name, *shape)?);
        }
        let net = |slice: &[Matrix], activation, output_activation| MlpWeights {
            layers: slice
                .chunks(2)
                .map(|p| Layer {
                    weight: p[0].clone(),
                    bias: p[1].as_slice().to_vec(),
                })
                .collect(),
            activation,
            output_activation,
        };
        let nd = 2 * dec_depth;
        let ne = 2 * enc_depth;
        let decoder = net(&params[..nd], act("decoder_activation")?, act("decoder_output")?);
        let encoder = net(&params[nd..nd + ne], act("encoder_activation")?, act("encoder_output")?);
        let log_r = params[nd + ne].clone();
        let components = params[nd + ne + 1..]
            .chunks(COMPONENT_GROUPS.len())
            .map(ComponentRaw::from_groups)
            .collect();
        let model = RawModel {
            components,
            decoder,
            encoder,
            log_r,
        };
        let opt = OptState {
            m,
            v,
            step: header.get("step").map_err(fmt)?,
            lr: header.get("lr").map_err(fmt)?,
            beta1: header.get("beta1").map_err(fmt)?,
            beta2: header.get("beta2").map_err(fmt)?,
            eps: header.get("eps").map_err(fmt)?,
        };
        Ok(Self {
            state: TrainState { model, opt },
            seed: header.get("seed").map_err(fmt)?,
            restart: header.get("restart").map_err(fmt)?,
            config,
        })
    }
}

/// File names of a dataset directory.
pub const DATASET_FILES: [&str; 4] = ["x.snic", "s.snic", "u.snic", "f_s.snic"];

pub fn write_dataset(dir: &Path, data: &Dataset) -> Result<Vec<PathBuf>> {
    ensure_dir(dir)?;
    let meta = format!("seed={}; {}", data.seed, data.meta);
    let mut written = vec![dir.join(DATASET_FILES[0])];
    write_matrix(&written[0], &data.x, &meta)?;
    if let Some(g) = &data.truth {
        for (name, m) in DATASET_FILES[1..].iter().zip([&g.s, &g.u, &g.f_s]) {
            let p = dir.join(name);
            write_matrix(&p, m, &meta)?;
            written.push(p);
        }
    }
    Ok(written)
}

/// Reads `x` and, when all three are present, the ground-truth tensors.
pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let xt = Tensor::read(&dir.join(DATASET_FILES[0]))?;
    let x = xt.to_matrix()?;
    let seed = xt
        .metadata
        .split(';')
        .next()
        .and_then(|s| s.trim().strip_prefix("seed="))
        .and_then(|s| s.parse().ok())
        .unwrap_or(0);
    let present = DATASET_FILES[1..].iter().all(|f| dir.join(f).exists());
    let truth = if present {
        let s = read_matrix(&dir.join(DATASET_FILES[1]))?;
        let u = read_matrix(&dir.join(DATASET_FILES[2]))?;
        let f_s = read_matrix(&dir.join(DATASET_FILES[3]))?;
        if s.rows() != x.rows() || u.shape() != s.shape() || f_s.shape() != x.shape() {
            return Err(CliError::Format("dataset tensors have inconsistent shapes".into()));
        }
        Some(GroundTruth { s, u, f_s })
    } else {
        None
    };
    let meta = xt.metadata.split_once(';').map(|(_, m)| m.trim().to_string()).unwrap_or_default();
    Ok(Dataset { x, truth, seed, meta })
}
