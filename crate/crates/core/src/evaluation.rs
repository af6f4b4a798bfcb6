//! Source-recovery and denoising metrics.

use crate::genmodel::{simulate, Dataset, SimConfig};
use crate::inference::MeanFieldOptions;
use crate::numerics::Matrix;
use crate::training::{posterior_source_means, train, RawModel, TrainConfig};
use crate::{Result, SnicaError};

/// Correlation flavour used by [`mcc_with`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Correlation {
    #[default]
    Pearson,
    Spearman,
}

/// Pearson correlation; `0` when either input has zero variance.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let n = a.len() as f64;
    if a.is_empty() {
        return 0.0;
    }
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return 0.0;
    }
    (sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0)
}

/// Ranks starting at 1 with ties sharing their average rank.
pub fn ranks(a: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..a.len()).collect();
    idx.sort_by(|&i, &j| a[i].total_cmp(&a[j]));
    let mut out = vec![0.0; a.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && a[idx[j + 1]] == a[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = r;
        }
        i = j + 1;
    }
    out
}

pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    pearson(&ranks(a), &ranks(b))
}

/// Assignment maximizing `Σ_i score[i][perm[i]]` by the Hungarian method.
pub fn hungarian_max(score: &Matrix) -> Vec<usize> {
    let n = score.rows();
    assert_eq!(n, score.cols(), "assignment needs a square matrix");
    if n == 0 {
        return Vec::new();
    }
    let big = score.as_slice().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    // Minimize cost = max − score with 1-based potentials.
    let cost = |i: usize, j: usize| big - score[(i - 1, j - 1)];
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost(i0, j) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut perm = vec![0; n];
    for j in 1..=n {
        perm[p[j] - 1] = j - 1;
    }
    perm
}

fn assignment_total(score: &Matrix, perm: &[usize]) -> f64 {
    perm.iter().enumerate().map(|(i, &j)| score[(i, j)]).sum()
}

/// Exhaustive search; returns the lexicographically smallest optimal permutation.
pub fn brute_force_max(score: &Matrix) -> Vec<usize> {
    let n = score.rows();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = perm.clone();
    let mut best_total = assignment_total(score, &perm);
    // Lexicographic next-permutation walk.
    while let Some(i) = (1..n).rev().find(|&i| perm[i - 1] < perm[i]) {
        let j = (i..n).rev().find(|&j| perm[j] > perm[i - 1]).unwrap();
        perm.swap(i - 1, j);
        perm[i..].reverse();
        let total = assignment_total(score, &perm);
        if total > best_total {
            best_total = total;
            best = perm.clone();
        }
    }
    best
}

/// Largest N for which assignments are re-derived exhaustively so that ties
/// resolve to the lexicographically smallest permutation.
pub const EXHAUSTIVE_MAX_N: usize = 8;

/// Optimal assignment with deterministic tie-breaking.
pub fn best_assignment(score: &Matrix) -> Vec<usize> {
    if score.rows() <= EXHAUSTIVE_MAX_N {
        brute_force_max(score)
    } else {
        hungarian_max(score)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MccReport {
    pub score: f64,
    /// `assignment[i]` is the estimated column matched to true column `i`.
    pub assignment: Vec<usize>,
    pub per_pair: Vec<f64>,
    /// `|r|` between true column `i` and estimated column `j`.
    pub corr_matrix: Matrix,
}

impl MccReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("true,estimated,abs_corr\n");
        for (i, (&j, &r)) in self.assignment.iter().zip(&self.per_pair).enumerate() {
            out.push_str(&format!("{i},{j},{r}\n"));
        }
        out.push_str(&format!("mcc,,{}\n", self.score));
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("MCC {:.4}\n", self.score);
        for (i, (&j, &r)) in self.assignment.iter().zip(&self.per_pair).enumerate() {
            out.push_str(&format!("  source {i} <- estimate {j}: |r| = {r:.4}\n"));
        }
        out
    }
}

pub fn mcc(s_true: &Matrix, s_est: &Matrix) -> Result<MccReport> {
    mcc_with(s_true, s_est, Correlation::Pearson)
}

pub fn mcc_with(s_true: &Matrix, s_est: &Matrix, kind: Correlation) -> Result<MccReport> {
    if s_true.shape() != s_est.shape() {
        return Err(SnicaError::ShapeMismatch(format!(
            "true sources {:?} vs estimates {:?}",
            s_true.shape(),
            s_est.shape()
        )));
    }
    if s_true.rows() < 3 {
        return Err(SnicaError::ShapeMismatch(format!("MCC needs T >= 3, got {}", s_true.rows())));
    }
    let n = s_true.cols();
    let a: Vec<Vec<f64>> = (0..n).map(|i| s_true.col_vec(i)).collect();
    let b: Vec<Vec<f64>> = (0..n).map(|j| s_est.col_vec(j)).collect();
    let corr = match kind {
        Correlation::Pearson => pearson,
        Correlation::Spearman => spearman,
    };
    let corr_matrix = Matrix::from_fn(n, n, |i, j| corr(&a[i], &b[j]).abs());
    let assignment = best_assignment(&corr_matrix);
    let per_pair: Vec<f64> = assignment.iter().enumerate().map(|(i, &j)| corr_matrix[(i, j)]).collect();
    // Sorted so the score does not depend on column order.
    let mut sorted = per_pair.clone();
    sorted.sort_by(f64::total_cmp);
    let score = if n == 0 { 0.0 } else { sorted.iter().sum::<f64>() / n as f64 };
    Ok(MccReport {
        score,
        assignment,
        per_pair,
        corr_matrix,
    })
}

/// Mean over output coordinates of `r(f̂_m, f(s)_m)` where `f̂` is the fitted
/// decoder applied to posterior source means.
pub fn denoise_score(data: &Dataset, model: &RawModel, opts: MeanFieldOptions) -> Result<f64> {
    let truth = data.truth.as_ref().ok_or(SnicaError::MissingGroundTruth)?;
    let means = posterior_source_means(model, &data.x, opts)?;
    let f_hat = model.decoder.forward_batch(&means);
    Ok(denoise_from_outputs(&f_hat, &truth.f_s))
}

/// Mean column-wise Pearson correlation.
pub fn denoise_from_outputs(f_hat: &Matrix, f_true: &Matrix) -> f64 {
    let m = f_true.cols();
    if m == 0 {
        return 0.0;
    }
    (0..m).map(|c| pearson(&f_hat.col_vec(c), &f_true.col_vec(c))).sum::<f64>() / m as f64
}

/// Trained-model MCC on a dataset with ground truth.
pub fn model_mcc(data: &Dataset, model: &RawModel, opts: MeanFieldOptions) -> Result<MccReport> {
    let truth = data.truth.as_ref().ok_or(SnicaError::MissingGroundTruth)?;
    let means = posterior_source_means(model, &data.x, opts)?;
    mcc(&truth.s, &means)
}

/// One row of a data-size study.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SizeRow {
    pub t: usize,
    pub mcc: f64,
}

/// Simulates a dataset of each length (same seed, so the same mixing and
/// dynamics) and trains with the same step budget on each.
pub fn data_size_study(sim: &SimConfig, cfg: &TrainConfig, sizes: &[usize]) -> Result<Vec<SizeRow>> {
    sizes
        .iter()
        .map(|&t| {
            let sim_t = SimConfig { t, ..sim.clone() };
            let data = simulate(&sim_t)?.dataset;
            let out = train(&data.x, cfg)?;
            let report = model_mcc(&data, out.model(), cfg.mean_field())?;
            Ok(SizeRow { t, mcc: report.score })
        })
        .collect()
}
