//! Training losses: global-statistics SSIM, the average pairwise frame
//! similarity of a feature grid, the inconsistency loss that supervises it,
//! binary cross-entropy for the classifier and their weighted sum.
//!
//! SSIM here uses whole-array statistics rather than a sliding window, on
//! inputs jointly min-max normalised to `[0, 1]`, with population variances.

use ndarray::{s, Array2, ArrayView2, ArrayView4, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autograd::{softplus, Graph, Var};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error("shape mismatch: {0:?} vs {1:?}")]
    ShapeMismatch(Vec<usize>, Vec<usize>),
    #[error("need at least 2 frames for pairwise similarity, got {0}")]
    TooFewFrames(usize),
    #[error("label {0} is not 0 or 1")]
    LabelOutOfRange(f64),
    #[error("invalid loss config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    /// Weight of the classification loss.
    pub lambda_cls: f64,
    /// Weight of the inconsistency loss.
    pub lambda_il: f64,
    pub ssim_c1: f64,
    pub ssim_c2: f64,
    pub clamp_eps: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda_cls: 1.0,
            lambda_il: 5.0,
            ssim_c1: 0.01 * 0.01,
            ssim_c2: 0.03 * 0.03,
            clamp_eps: 1e-6,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<(), LossError> {
        if !(self.lambda_cls >= 0.0 && self.lambda_il >= 0.0) {
            return Err(LossError::Config("loss weights must be non-negative".into()));
        }
        if !(self.clamp_eps > 0.0 && self.clamp_eps < 0.5) {
            return Err(LossError::Config("clamp_eps must lie in (0, 0.5)".into()));
        }
        if !(self.ssim_c1 > 0.0 && self.ssim_c2 > 0.0) {
            return Err(LossError::Config("SSIM constants must be positive".into()));
        }
        Ok(())
    }
}

/// Floor on the joint value range used for normalisation, so that constant
/// inputs stay finite.
const MIN_RANGE: f64 = 1e-12;

/// SSIM from raw moments after joint min-max normalisation, which maps
/// `μ → (μ - lo) / r`, `σ² → σ² / r²` and `σ_ab → σ_ab / r²`.
fn ssim_from_moments(mu: (f64, f64), var: (f64, f64), cov: f64, lo: f64, range: f64, c1: f64, c2: f64) -> f64 {
    let r = range.max(MIN_RANGE);
    let (ma, mb) = ((mu.0 - lo) / r, (mu.1 - lo) / r);
    let (va, vb, cv) = (var.0 / (r * r), var.1 / (r * r), cov / (r * r));
    ((2.0 * ma * mb + c1) * (2.0 * cv + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
}

pub fn ssim_with(a: ArrayView2<f64>, b: ArrayView2<f64>, c1: f64, c2: f64) -> Result<f64, LossError> {
    if a.shape() != b.shape() || a.is_empty() {
        return Err(LossError::ShapeMismatch(a.shape().to_vec(), b.shape().to_vec()));
    }
    let n = a.len() as f64;
    let (ma, mb) = (a.sum() / n, b.sum() / n);
    let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for (&x, &y) in a.iter().zip(b.iter()) {
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
        cov += (x - ma) * (y - mb);
        lo = lo.min(x).min(y);
        hi = hi.max(x).max(y);
    }
    Ok(ssim_from_moments((ma, mb), (va / n, vb / n), cov / n, lo, hi - lo, c1, c2))
}

/// Global-statistics SSIM with the default constants.
pub fn ssim(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Result<f64, LossError> {
    let d = LossConfig::default();
    ssim_with(a, b, d.ssim_c1, d.ssim_c2)
}

/// Per-frame channel statistics of a feature grid held as an `(X, C)` block:
/// all values are `C×1` columns.
struct FrameStats {
    centred: Var,
    mean: Var,
    var: Var,
    min: Var,
    max: Var,
}

fn frame_stats(g: &mut Graph, block: Var) -> FrameStats {
    let t = g.transpose(block);
    let mean = g.mean_rows(t);
    let centred = g.sub(t, mean);
    let sq = g.square(centred);
    let var = g.mean_rows(sq);
    let min = g.min_rows(t);
    let max = g.max_rows(t);
    FrameStats { centred, mean, var, min, max }
}

/// Channel-wise SSIM of two frames as a `C×1` column.
fn pair_ssim(g: &mut Graph, a: &FrameStats, b: &FrameStats, cfg: &LossConfig) -> Var {
    let prod = g.mul(a.centred, b.centred);
    let cov = g.mean_rows(prod);
    let lo = g.minimum(a.min, b.min);
    let hi = g.maximum(a.max, b.max);
    let range = g.sub(hi, lo);
    let floor = g.scalar_constant(MIN_RANGE);
    let r = g.maximum(range, floor);
    let r2 = g.square(r);

    let da = g.sub(a.mean, lo);
    let ma = g.div(da, r);
    let db = g.sub(b.mean, lo);
    let mb = g.div(db, r);
    let va = g.div(a.var, r2);
    let vb = g.div(b.var, r2);
    let cv = g.div(cov, r2);

    let mab = g.mul(ma, mb);
    let l_num = g.scale(mab, 2.0);
    let l_num = g.add_scalar(l_num, cfg.ssim_c1);
    let c_num = g.scale(cv, 2.0);
    let c_num = g.add_scalar(c_num, cfg.ssim_c2);
    let ma2 = g.square(ma);
    let mb2 = g.square(mb);
    let l_den = g.add(ma2, mb2);
    let l_den = g.add_scalar(l_den, cfg.ssim_c1);
    let c_den = g.add(va, vb);
    let c_den = g.add_scalar(c_den, cfg.ssim_c2);
    let num = g.mul(l_num, c_num);
    let den = g.mul(l_den, c_den);
    g.div(num, den)
}

/// AvgS of a feature grid stored as an `(N·X, C)` matrix, frame-major: frame
/// `n` occupies rows `n·X .. (n+1)·X`. Returns a `1×1` node in
/// `[clamp_eps, 1 - clamp_eps]`.
pub fn avg_similarity_graph(g: &mut Graph, grid: Var, frames: usize, cfg: &LossConfig) -> Result<Var, LossError> {
    if frames < 2 {
        return Err(LossError::TooFewFrames(frames));
    }
    let (rows, _) = g.shape(grid);
    if rows % frames != 0 {
        return Err(LossError::ShapeMismatch(vec![rows], vec![frames]));
    }
    let x = rows / frames;
    let stats: Vec<FrameStats> = (0..frames)
        .map(|n| {
            let block = g.slice_rows(grid, n * x, (n + 1) * x);
            frame_stats(g, block)
        })
        .collect();
    let mut total: Option<Var> = None;
    for i in 0..frames {
        for j in i + 1..frames {
            let s = pair_ssim(g, &stats[i], &stats[j], cfg);
            let m = g.mean_all(s);
            total = Some(match total {
                Some(t) => g.add(t, m),
                None => m,
            });
        }
    }
    let pairs = frames * (frames - 1) / 2;
    let mean = g.scale(total.expect("at least one pair"), 1.0 / pairs as f64);
    let mapped = g.add_scalar(mean, 1.0);
    let mapped = g.scale(mapped, 0.5);
    Ok(g.clamp(mapped, cfg.clamp_eps, 1.0 - cfg.clamp_eps))
}

/// AvgS of a feature grid shaped `(N, H, W, C)`.
pub fn avg_similarity(grid: ArrayView4<f64>, cfg: &LossConfig) -> Result<f64, LossError> {
    let (n, h, w, c) = grid.dim();
    let flat = grid
        .as_standard_layout()
        .into_owned()
        .into_shape_with_order((n * h * w, c))
        .expect("standard layout reshape");
    let mut g = Graph::new();
    let v = g.constant(flat);
    let out = avg_similarity_graph(&mut g, v, n, cfg)?;
    Ok(g.scalar(out))
}

fn check_labels(labels: &[f64]) -> Result<(), LossError> {
    match labels.iter().find(|&&y| y != 0.0 && y != 1.0) {
        Some(&y) => Err(LossError::LabelOutOfRange(y)),
        None => Ok(()),
    }
}

/// Cross-entropy of similarity scores against labels (1 = real),
/// `-(1/M) Σ [y log s + (1 - y) log(1 - s)]`.
pub fn inconsistency_loss(scores: &[f64], labels: &[f64]) -> Result<f64, LossError> {
    if scores.len() != labels.len() || scores.is_empty() {
        return Err(LossError::ShapeMismatch(vec![scores.len()], vec![labels.len()]));
    }
    check_labels(labels)?;
    let sum: f64 = scores
        .iter()
        .zip(labels)
        .map(|(&s, &y)| y * s.ln() + (1.0 - y) * (1.0 - s).ln())
        .sum();
    Ok(-sum / scores.len() as f64)
}

/// Graph form of [`inconsistency_loss`] for an `M×1` column of scores.
pub fn inconsistency_loss_graph(g: &mut Graph, scores: Var, labels: &[f64]) -> Result<Var, LossError> {
    let (m, _) = g.shape(scores);
    if m != labels.len() || m == 0 {
        return Err(LossError::ShapeMismatch(vec![m], vec![labels.len()]));
    }
    check_labels(labels)?;
    let y = Array2::from_shape_vec((m, 1), labels.to_vec()).unwrap();
    let not_y = y.mapv(|v| 1.0 - v);
    let log_s = g.ln(scores);
    let neg = g.scale(scores, -1.0);
    let one_minus = g.add_scalar(neg, 1.0);
    let log_1ms = g.ln(one_minus);
    let a = g.mask(log_s, y);
    let b = g.mask(log_1ms, not_y);
    let sum = g.add(a, b);
    let mean = g.mean_all(sum);
    Ok(g.scale(mean, -1.0))
}

/// Binary cross-entropy of `sigmoid(logit)` against `y`, computed stably.
pub fn bce_with_logits(logit: f64, y: f64) -> f64 {
    softplus(logit) - y * logit
}

pub fn bce_with_logits_graph(g: &mut Graph, logit: Var, y: f64) -> Var {
    let sp = g.softplus(logit);
    let yz = g.scale(logit, y);
    g.sub(sp, yz)
}

pub fn total_loss(l_cls: f64, l_il: f64, cfg: &LossConfig) -> f64 {
    cfg.lambda_cls * l_cls + cfg.lambda_il * l_il
}

pub fn total_loss_graph(g: &mut Graph, l_cls: Var, l_il: Var, cfg: &LossConfig) -> Var {
    let a = g.scale(l_cls, cfg.lambda_cls);
    let b = g.scale(l_il, cfg.lambda_il);
    g.add(a, b)
}

/// Mean SSIM between consecutive frames of a greyscale-converted clip, used
/// to compare temporal coherence of mouth crops.
pub fn mean_consecutive_ssim(frames: &[Array2<f64>]) -> Result<f64, LossError> {
    if frames.len() < 2 {
        return Err(LossError::TooFewFrames(frames.len()));
    }
    let mut sum = 0.0;
    for w in frames.windows(2) {
        sum += ssim(w[0].view(), w[1].view())?;
    }
    Ok(sum / (frames.len() - 1) as f64)
}

/// Channel `c` of frame `n` of an `(N, H, W, C)` grid.
pub fn grid_channel(grid: ArrayView4<f64>, n: usize, c: usize) -> ArrayView2<f64> {
    grid.slice_move(s![n, .., .., c])
}

/// Frame `n` of an `(N, H, W, C)` grid, as `(H·W, C)`.
pub fn grid_frame(grid: ArrayView4<f64>, n: usize) -> Array2<f64> {
    let f = grid.index_axis(Axis(0), n);
    let (h, w, c) = f.dim();
    f.to_owned().into_shape_with_order((h * w, c)).unwrap()
}
