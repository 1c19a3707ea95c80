//! Two-branch vision temporal transformer with cross-attention fusion.
//!
//! The RGB mouth sequence `R` (N frames) and the delta sequence `D` (N-1
//! frames) are each cut into `P×P` patches, linearly embedded with a learned
//! positional table, encoded per frame by self-attention blocks, averaged to
//! one vector per frame, then encoded across frames. The RGB branch is
//! aligned to the delta timeline by averaging neighbouring frames. Each
//! branch then attends to the other:
//!
//! ```text
//! rgb_out   = MHA(q = v_D,  kv = v'_R) + v'_R
//! delta_out = MHA(q = v'_R, kv = v_D)  + v_D
//! fused     = MHA(q = delta_out, kv = rgb_out) + delta_out
//! ```
//!
//! and a small classifier head maps the mean of `fused` to the probability
//! that the video is real.

mod checkpoint;
mod config;
mod layers;
mod params;

use ndarray::{Array2, Array4, ArrayView4, Axis};
use thiserror::Error;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointMeta, OptimizerSnapshot, FORMAT_VERSION};
pub use config::ModelConfig;
pub use layers::{AttentionRecord, Ctx};
pub use params::{init_params, ParamStore};

use crate::autograd::{sigmoid, Var};
use crate::ingest::Label;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("non-finite activation in {0}")]
    NonFiniteActivation(String),
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("checkpoint i/o on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// First-layer RGB token grid, `(N, H/P, W/P, e)`.
pub type FeatureGrid = Array4<f64>;

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionResult {
    pub probability_real: f64,
    pub label: Label,
    pub feature_grid: Option<FeatureGrid>,
}

impl DetectionResult {
    pub fn from_probability(p: f64) -> Self {
        Self {
            probability_real: p,
            label: if p >= 0.5 { Label::Real } else { Label::Fake },
            feature_grid: None,
        }
    }
}

/// Flattens `(T, H, W, 3)` frames into `(T·X, P²·3)` patch rows. Row
/// `t·X + py·(W/P) + px` holds patch `(py, px)` of frame `t`, flattened in
/// `(row, column, channel)` order.
pub fn patchify(frames: ArrayView4<f64>, patch: usize) -> Result<Array2<f64>, ModelError> {
    let (t, h, w, c) = frames.dim();
    if patch == 0 || h % patch != 0 || w % patch != 0 || c != 3 {
        return Err(ModelError::DimensionMismatch(format!(
            "frames {h}x{w}x{c} do not split into {patch}x{patch} RGB patches"
        )));
    }
    let (gh, gw) = (h / patch, w / patch);
    let x = gh * gw;
    let mut out = Array2::zeros((t * x, patch * patch * 3));
    for f in 0..t {
        for py in 0..gh {
            for px in 0..gw {
                let row = f * x + py * gw + px;
                for iy in 0..patch {
                    for ix in 0..patch {
                        for ch in 0..3 {
                            out[[row, (iy * patch + ix) * 3 + ch]] =
                                frames[[f, py * patch + iy, px * patch + ix, ch]];
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Patch tokens of one branch: projection plus spatial positional table,
/// `(T·X, e)`.
pub fn embed_patches(ctx: &mut Ctx, cfg: &ModelConfig, branch: &str, frames: ArrayView4<f64>) -> Result<Var, ModelError> {
    let (t, h, w, _) = frames.dim();
    if (h, w) != (cfg.crop_height, cfg.crop_width) {
        return Err(ModelError::DimensionMismatch(format!(
            "frames are {h}x{w}, model expects {}x{}",
            cfg.crop_height, cfg.crop_width
        )));
    }
    let patches = ctx.graph.constant(patchify(frames, cfg.patch)?);
    let proj = ctx.linear(patches, &format!("{branch}.patch"));
    let pos = ctx.param(&format!("{branch}.pos"));
    let tiled = if t == 1 { pos } else { ctx.graph.concat_rows(&vec![pos; t]) };
    Ok(ctx.graph.add(proj, tiled))
}

/// Per-frame self-attention blocks then mean pooling over each frame's
/// tokens: `(T·X, e)` to `(T, e)`.
pub fn spatial_encode(ctx: &mut Ctx, cfg: &ModelConfig, branch: &str, tokens: Var, frames: usize) -> Var {
    let mut x = tokens;
    for k in 0..cfg.spatial_layers {
        x = ctx.block(x, &format!("{branch}.spatial.{k}"), cfg.heads_self, frames);
    }
    let per = ctx.graph.shape(x).0 / frames;
    let mut pool = Array2::zeros((frames, frames * per));
    for f in 0..frames {
        pool.slice_mut(ndarray::s![f, f * per..(f + 1) * per]).fill(1.0 / per as f64);
    }
    let pool = ctx.graph.constant(pool);
    ctx.graph.matmul(pool, x)
}

/// Temporal positional rows `0..T` added, then self-attention blocks over
/// the frame axis.
pub fn temporal_encode(ctx: &mut Ctx, cfg: &ModelConfig, branch: &str, seq: Var) -> Result<Var, ModelError> {
    let t = ctx.graph.shape(seq).0;
    if t == 0 || t > cfg.max_frames {
        return Err(ModelError::DimensionMismatch(format!(
            "sequence length {t} outside 1..={}",
            cfg.max_frames
        )));
    }
    let table = ctx.param(&format!("{branch}.tpos"));
    let pos = ctx.graph.slice_rows(table, 0, t);
    let mut x = ctx.graph.add(seq, pos);
    for k in 0..cfg.temporal_layers {
        x = ctx.block(x, &format!("{branch}.temporal.{k}"), cfg.heads_self, 1);
    }
    Ok(x)
}

/// Averages neighbouring rows: `(N, e)` to `(N-1, e)`.
pub fn align_to_delta(ctx: &mut Ctx, v: Var) -> Var {
    let n = ctx.graph.shape(v).0;
    let mut a = Array2::zeros((n - 1, n));
    for t in 0..n - 1 {
        a[[t, t]] = 0.5;
        a[[t, t + 1]] = 0.5;
    }
    let a = ctx.graph.constant(a);
    ctx.graph.matmul(a, v)
}

/// Multi-head attention of `query` over `keyvalue` (no residual).
pub fn cross_attend(ctx: &mut Ctx, prefix: &str, query: Var, keyvalue: Var, heads: usize) -> Result<Var, ModelError> {
    let (qe, ke) = (ctx.graph.shape(query).1, ctx.graph.shape(keyvalue).1);
    if qe != ke {
        return Err(ModelError::DimensionMismatch(format!("query width {qe}, key width {ke}")));
    }
    Ok(ctx.attention(prefix, query, keyvalue, heads, 1))
}

/// `MHA(q = delta_out, kv = rgb_out) + delta_out`.
pub fn fuse(ctx: &mut Ctx, rgb_out: Var, delta_out: Var, heads: usize) -> Result<Var, ModelError> {
    let a = cross_attend(ctx, "fuse", delta_out, rgb_out, heads)?;
    Ok(ctx.graph.add(a, delta_out))
}

/// Mean over the sequence, hidden layer, logit (`1×1`).
pub fn classify(ctx: &mut Ctx, fused: Var) -> Var {
    let pooled = ctx.graph.mean_cols(fused);
    let h = ctx.linear(pooled, "head.fc1");
    let h = ctx.graph.gelu(h);
    let h = ctx.dropout(h);
    ctx.linear(h, "head.fc2")
}

/// Graph nodes of one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct Trace {
    pub frames: usize,
    pub rgb_tokens: Var,
    pub delta_tokens: Var,
    pub rgb_frames: Var,
    pub delta_frames: Var,
    pub rgb_embed: Var,
    pub delta_embed: Var,
    pub rgb_aligned: Var,
    pub rgb_out: Var,
    pub delta_out: Var,
    pub fused: Var,
    pub logit: Var,
}

fn check_finite(ctx: &Ctx, v: Var, what: &str) -> Result<(), ModelError> {
    if ctx.graph.value(v).iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(ModelError::NonFiniteActivation(what.to_string()))
    }
}

/// Full forward pass on `rgb` `(N, H, W, 3)` in `[0, 1]` and `delta`
/// `(N-1, H, W, 3)` in `[-1, 1]`.
pub fn forward(ctx: &mut Ctx, cfg: &ModelConfig, rgb: ArrayView4<f64>, delta: ArrayView4<f64>) -> Result<Trace, ModelError> {
    let n = rgb.len_of(Axis(0));
    let frame_shape = |d: (usize, usize, usize, usize)| (d.1, d.2, d.3);
    if n < 2 || delta.len_of(Axis(0)) + 1 != n || frame_shape(rgb.dim()) != frame_shape(delta.dim()) {
        return Err(ModelError::DimensionMismatch(format!(
            "rgb {:?} and delta {:?} are not N and N-1 frames of one size",
            rgb.dim(),
            delta.dim()
        )));
    }
    let rgb_tokens = embed_patches(ctx, cfg, "rgb", rgb)?;
    let delta_tokens = embed_patches(ctx, cfg, "delta", delta)?;
    let rgb_frames = spatial_encode(ctx, cfg, "rgb", rgb_tokens, n);
    let delta_frames = spatial_encode(ctx, cfg, "delta", delta_tokens, n - 1);
    check_finite(ctx, rgb_frames, "RGB spatial encoder")?;
    check_finite(ctx, delta_frames, "delta spatial encoder")?;
    let rgb_embed = temporal_encode(ctx, cfg, "rgb", rgb_frames)?;
    let delta_embed = temporal_encode(ctx, cfg, "delta", delta_frames)?;
    check_finite(ctx, rgb_embed, "RGB temporal encoder")?;
    check_finite(ctx, delta_embed, "delta temporal encoder")?;

    let rgb_aligned = align_to_delta(ctx, rgb_embed);
    let a_r = cross_attend(ctx, "cross.rgb", delta_embed, rgb_aligned, cfg.heads_cross)?;
    let rgb_out = ctx.graph.add(a_r, rgb_aligned);
    let a_d = cross_attend(ctx, "cross.delta", rgb_aligned, delta_embed, cfg.heads_cross)?;
    let delta_out = ctx.graph.add(a_d, delta_embed);
    let fused = fuse(ctx, rgb_out, delta_out, cfg.heads_cross)?;
    let logit = classify(ctx, fused);
    check_finite(ctx, logit, "classifier")?;
    Ok(Trace {
        frames: n,
        rgb_tokens,
        delta_tokens,
        rgb_frames,
        delta_frames,
        rgb_embed,
        delta_embed,
        rgb_aligned,
        rgb_out,
        delta_out,
        fused,
        logit,
    })
}

/// Token matrix `(N·X, e)` reshaped to `(N, H/P, W/P, e)`.
pub fn feature_grid(tokens: &Array2<f64>, cfg: &ModelConfig, frames: usize) -> FeatureGrid {
    let (gh, gw) = cfg.grid();
    tokens
        .clone()
        .into_shape_with_order((frames, gh, gw, cfg.embed))
        .expect("token count matches grid")
}

/// Configuration plus weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    config: ModelConfig,
    params: ParamStore,
}

impl Model {
    pub fn new(config: ModelConfig) -> Result<Self, ModelError> {
        config.validate()?;
        Ok(Self {
            params: init_params(&config),
            config,
        })
    }

    /// Pairs `params` with `config`, rejecting missing, extra or misshapen
    /// weights.
    pub fn from_parts(config: ModelConfig, params: ParamStore) -> Result<Self, ModelError> {
        config.validate()?;
        let reference = init_params(&config);
        if reference.len() != params.len() {
            return Err(ModelError::Checkpoint(format!(
                "expected {} weight arrays, found {}",
                reference.len(),
                params.len()
            )));
        }
        for (name, r) in reference.iter() {
            match params.get(name) {
                None => return Err(ModelError::Checkpoint(format!("missing weight {name}"))),
                Some(p) if p.dim() != r.dim() => {
                    return Err(ModelError::Checkpoint(format!(
                        "weight {name} has shape {:?}, config implies {:?}",
                        p.dim(),
                        r.dim()
                    )))
                }
                Some(_) => {}
            }
        }
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Evaluation-mode prediction with the first-layer feature grid.
    pub fn predict(&self, rgb: ArrayView4<f64>, delta: ArrayView4<f64>) -> Result<DetectionResult, ModelError> {
        let mut ctx = Ctx::eval(&self.params);
        let trace = forward(&mut ctx, &self.config, rgb, delta)?;
        let logit = ctx.graph.scalar(trace.logit);
        let mut result = DetectionResult::from_probability(sigmoid(logit));
        result.feature_grid = Some(feature_grid(ctx.graph.value(trace.rgb_tokens), &self.config, trace.frames));
        Ok(result)
    }
}
