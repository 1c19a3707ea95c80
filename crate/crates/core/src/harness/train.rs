use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use ndarray::ArrayView4;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::data::{prepare_manifest, Clip, LandmarkSource, Skipped};
use super::eval::score_clips;
use super::metrics::{auc, average_precision};
use super::optim::Adam;
use super::HarnessError;
use crate::autograd::Var;
use crate::ingest::toy::mix_seed;
use crate::ingest::{DatasetManifest, RobustnessTransform};
use crate::losses::{avg_similarity_graph, bce_with_logits_graph, inconsistency_loss_graph, total_loss_graph, LossConfig};
use crate::mstie::{
    forward, load_checkpoint, save_checkpoint, Checkpoint, CheckpointMeta, Ctx, Model, ModelConfig, ModelError, ParamStore,
};
use crate::selector::SelectorConfig;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    #[default]
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub optimizer: Optimizer,
    pub learning_rate: f64,
    pub epsilon: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub checkpoint_dir: PathBuf,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            optimizer: Optimizer::Adam,
            learning_rate: 0.001,
            epsilon: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            epochs: 100,
            batch_size: 64,
            seed: 0,
            checkpoint_dir: PathBuf::from("checkpoints"),
        }
    }
}

impl TrainConfig {
    /// Defaults sized for the synthetic toy dataset. The small model sees
    /// only a few dozen updates, so epsilon is the conventional `1e-8`.
    pub fn toy() -> Self {
        Self {
            epsilon: 1e-8,
            epochs: 30,
            batch_size: 8,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: &str| Err(HarnessError::Invalid(m.to_string()));
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if !(self.epsilon > 0.0) {
            return bad("epsilon must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("beta1 and beta2 must lie in [0, 1)");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        Ok(())
    }
}

/// Loss terms of one sample or the mean over a batch.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SampleLoss {
    pub l_cls: f64,
    pub l_il: f64,
    pub l_total: f64,
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LogRecord {
    Step {
        epoch: usize,
        step: u64,
        l_cls: f64,
        l_il: f64,
        l_total: f64,
        grad_norm: f64,
    },
    Epoch {
        epoch: usize,
        step: u64,
        l_cls: f64,
        l_il: f64,
        l_total: f64,
        val_ap: Option<f64>,
        val_auc: Option<f64>,
    },
}

/// Builds the per-sample objective `λ1·BCE + λ2·L_IL` on `ctx` and returns
/// the total node with the three loss values.
pub fn sample_objective(
    ctx: &mut Ctx,
    cfg: &ModelConfig,
    loss: &LossConfig,
    rgb: ArrayView4<f64>,
    delta: ArrayView4<f64>,
    label: f64,
) -> Result<(Var, SampleLoss), HarnessError> {
    let trace = forward(ctx, cfg, rgb, delta)?;
    let g = &mut ctx.graph;
    let l_cls = bce_with_logits_graph(g, trace.logit, label);
    let avgs = avg_similarity_graph(g, trace.rgb_tokens, trace.frames, loss).map_err(|e| HarnessError::Invalid(e.to_string()))?;
    let l_il = inconsistency_loss_graph(g, avgs, &[label]).map_err(|e| HarnessError::Invalid(e.to_string()))?;
    let total = total_loss_graph(g, l_cls, l_il, loss);
    let values = SampleLoss {
        l_cls: g.scalar(l_cls),
        l_il: g.scalar(l_il),
        l_total: g.scalar(total),
    };
    Ok((total, values))
}

fn sample_gradients(
    params: &ParamStore,
    cfg: &ModelConfig,
    loss: &LossConfig,
    clip: &Clip,
    seed: u64,
) -> Result<(ParamStore, SampleLoss), HarnessError> {
    let mut ctx = Ctx::train(params, cfg.dropout, seed);
    let rgb = clip.rgb_tensor();
    let delta = clip.delta_tensor();
    let (total, values) = sample_objective(&mut ctx, cfg, loss, rgb.view(), delta.view(), clip.label.as_f64())?;
    if !values.l_total.is_finite() {
        return Err(HarnessError::Model(ModelError::NonFiniteActivation(format!(
            "loss {:?} on {}",
            values,
            clip.path.display()
        ))));
    }
    let mut grads = ctx.graph.backward(total);
    let mut out = ParamStore::new();
    for (name, var) in ctx.bound() {
        if let Some(g) = grads.take(*var) {
            out.insert(name.clone(), g);
        }
    }
    Ok((out, values))
}

/// Mean gradient and mean losses over `batch`. Sample `i` draws dropout
/// from `seeds[i]`.
pub fn batch_gradients(
    params: &ParamStore,
    cfg: &ModelConfig,
    loss: &LossConfig,
    batch: &[&Clip],
    seeds: &[u64],
) -> Result<(ParamStore, SampleLoss), HarnessError> {
    assert_eq!(batch.len(), seeds.len());
    let per_sample: Vec<_> = batch
        .par_iter()
        .zip(seeds.par_iter())
        .map(|(clip, &seed)| sample_gradients(params, cfg, loss, clip, seed))
        .collect();
    let k = 1.0 / batch.len() as f64;
    let mut sum = params.zeros_like();
    let mut mean = SampleLoss::default();
    for r in per_sample {
        let (g, v) = r?;
        sum.add_scaled(&g, k);
        mean.l_cls += v.l_cls * k;
        mean.l_il += v.l_il * k;
        mean.l_total += v.l_total * k;
    }
    Ok((sum, mean))
}

/// Model, optimizer and progress counters.
pub struct Trainer {
    pub model: Model,
    pub loss: LossConfig,
    pub config: TrainConfig,
    adam: Adam,
    /// Completed epochs.
    pub epoch: usize,
    pub step: u64,
    pub best_val_auc: Option<f64>,
}

impl Trainer {
    pub fn new(model: Model, loss: LossConfig, config: TrainConfig) -> Result<Self, HarnessError> {
        config.validate()?;
        loss.validate().map_err(|e| HarnessError::Invalid(e.to_string()))?;
        let adam = Adam::new(model.params(), config.learning_rate, config.epsilon, config.beta1, config.beta2);
        Ok(Self {
            model,
            loss,
            config,
            adam,
            epoch: 0,
            step: 0,
            best_val_auc: None,
        })
    }

    /// Continues from a checkpoint, restoring optimizer state and counters.
    pub fn from_checkpoint(ckpt: Checkpoint, loss: LossConfig, config: TrainConfig) -> Result<Self, HarnessError> {
        let mut t = Self::new(ckpt.model, loss, config)?;
        if let Some(state) = ckpt.optimizer {
            t.adam = t.adam.with_state(state);
        }
        t.epoch = ckpt.meta.epoch;
        t.step = ckpt.meta.step;
        t.best_val_auc = ckpt.meta.best_val_auc;
        Ok(t)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            model: self.model.clone(),
            meta: CheckpointMeta {
                epoch: self.epoch,
                step: self.step,
                train_seed: self.config.seed,
                best_val_auc: self.best_val_auc,
                settings: serde_json::json!({ "train": self.config, "loss": self.loss }),
            },
            optimizer: Some(self.adam.state().clone()),
        }
    }

    /// Sample order for the given epoch.
    pub fn epoch_order(&self, epoch: usize, n: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(self.config.seed, epoch as u64)));
        order
    }

    /// One optimizer update on `batch`; returns the step's log record.
    pub fn step_on(&mut self, batch: &[&Clip]) -> Result<LogRecord, HarnessError> {
        let seeds: Vec<u64> = (0..batch.len())
            .map(|i| mix_seed(mix_seed(self.config.seed ^ 0xD0, self.step), i as u64))
            .collect();
        let cfg = *self.model.config();
        let (grads, mean) = batch_gradients(self.model.params(), &cfg, &self.loss, batch, &seeds).map_err(|e| match e {
            HarnessError::Model(ModelError::NonFiniteActivation(detail)) => HarnessError::NonFiniteLoss {
                epoch: self.epoch,
                step: self.step,
                detail,
            },
            other => other,
        })?;
        let grad_norm = grads.squared_norm().sqrt();
        if !grad_norm.is_finite() {
            return Err(HarnessError::NonFiniteLoss {
                epoch: self.epoch,
                step: self.step,
                detail: format!("gradient norm {grad_norm}"),
            });
        }
        self.adam.step(self.model.params_mut(), &grads);
        self.step += 1;
        Ok(LogRecord::Step {
            epoch: self.epoch,
            step: self.step,
            l_cls: mean.l_cls,
            l_il: mean.l_il,
            l_total: mean.l_total,
            grad_norm,
        })
    }

    /// One pass over `clips` in shuffled order; returns the step records.
    pub fn run_epoch(&mut self, clips: &[Clip]) -> Result<Vec<LogRecord>, HarnessError> {
        let order = self.epoch_order(self.epoch, clips.len());
        let mut records = Vec::new();
        for chunk in order.chunks(self.config.batch_size) {
            let batch: Vec<&Clip> = chunk.iter().map(|&i| &clips[i]).collect();
            records.push(self.step_on(&batch)?);
        }
        self.epoch += 1;
        Ok(records)
    }
}

fn validation_metrics(model: &Model, val: &[Clip]) -> Result<(Option<f64>, Option<f64>), HarnessError> {
    if val.is_empty() {
        return Ok((None, None));
    }
    let scores = score_clips(model, val)?;
    let labels: Vec<bool> = val.iter().map(|c| !c.label.is_fake()).collect();
    match (average_precision(&scores, &labels), auc(&scores, &labels)) {
        (Ok(ap), Ok(a)) => Ok((Some(ap), Some(a))),
        (Err(HarnessError::SingleClassManifest), _) => Ok((None, None)),
        (Err(e), _) | (_, Err(e)) => Err(e),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub best_checkpoint: Option<PathBuf>,
    pub last_checkpoint: Option<PathBuf>,
    pub log: Vec<LogRecord>,
    pub skipped: Vec<Skipped>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Trains until `trainer.config.epochs` epochs are complete. With an output
/// directory, appends to `train_log.jsonl` and writes `last.json` after
/// every epoch and `best.json` whenever validation AUC matches or beats the
/// best so far (or, with no usable validation set, after every epoch).
pub fn fit(trainer: &mut Trainer, clips: &[Clip], val: &[Clip], out_dir: Option<&Path>) -> Result<TrainOutcome, HarnessError> {
    if clips.is_empty() {
        return Err(HarnessError::AllVideosSkipped(0));
    }
    if clips.iter().all(|c| c.label == clips[0].label) {
        return Err(HarnessError::SingleClassManifest);
    }
    let mut writer = match out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(io_err(dir))?;
            let path = dir.join("train_log.jsonl");
            let file: File = OpenOptions::new()
                .create(true)
                .append(trainer.epoch > 0)
                .write(true)
                .truncate(trainer.epoch == 0)
                .open(&path)
                .map_err(io_err(&path))?;
            Some((BufWriter::new(file), path))
        }
        None => None,
    };
    let mut outcome = TrainOutcome {
        best_checkpoint: None,
        last_checkpoint: None,
        log: Vec::new(),
        skipped: Vec::new(),
    };
    while trainer.epoch < trainer.config.epochs {
        let steps = trainer.run_epoch(clips)?;
        let n = steps.len() as f64;
        let mut mean = SampleLoss::default();
        for r in &steps {
            if let LogRecord::Step { l_cls, l_il, l_total, .. } = r {
                mean.l_cls += l_cls / n;
                mean.l_il += l_il / n;
                mean.l_total += l_total / n;
            }
        }
        let (val_ap, val_auc) = validation_metrics(&trainer.model, val)?;
        let improved = match (val_auc, trainer.best_val_auc) {
            (Some(a), Some(b)) => a >= b,
            (Some(_), None) => true,
            (None, _) => trainer.best_val_auc.is_none(),
        };
        if improved && val_auc.is_some() {
            trainer.best_val_auc = val_auc;
        }
        let epoch_record = LogRecord::Epoch {
            epoch: trainer.epoch,
            step: trainer.step,
            l_cls: mean.l_cls,
            l_il: mean.l_il,
            l_total: mean.l_total,
            val_ap,
            val_auc,
        };
        log::info!("{}", serde_json::to_string(&epoch_record).unwrap());
        outcome.log.extend(steps);
        outcome.log.push(epoch_record);
        if let (Some((w, path)), Some(dir)) = (writer.as_mut(), out_dir) {
            for r in &outcome.log[outcome.log.len() - (n as usize + 1)..] {
                writeln!(w, "{}", serde_json::to_string(r).unwrap()).map_err(io_err(path))?;
            }
            w.flush().map_err(io_err(path))?;
            let ckpt = trainer.checkpoint();
            let last = dir.join("last.json");
            save_checkpoint(&ckpt, &last)?;
            outcome.last_checkpoint = Some(last);
            if improved {
                let best = dir.join("best.json");
                save_checkpoint(&ckpt, &best)?;
                outcome.best_checkpoint = Some(best);
            }
        }
    }
    if let Some(dir) = out_dir {
        let best = dir.join("best.json");
        if outcome.best_checkpoint.is_none() && best.exists() {
            outcome.best_checkpoint = Some(best);
        }
    }
    Ok(outcome)
}

/// Everything [`train`] needs.
#[derive(Debug, Clone)]
pub struct TrainJob<'a> {
    pub train: &'a DatasetManifest,
    pub val: Option<&'a DatasetManifest>,
    pub model: ModelConfig,
    pub selector: SelectorConfig,
    pub loss: LossConfig,
    pub config: TrainConfig,
    pub landmarks: LandmarkSource,
    /// Checkpoint to continue from.
    pub resume: Option<PathBuf>,
}

/// Prepares the manifests and trains into `config.checkpoint_dir`. Without
/// a validation manifest the training clips are scored for model selection.
pub fn train(job: &TrainJob) -> Result<TrainOutcome, HarnessError> {
    job.config.validate()?;
    job.selector.validate().map_err(|e| HarnessError::Invalid(e.to_string()))?;
    if !job.train.has_both_classes() {
        return Err(HarnessError::SingleClassManifest);
    }
    let identity = RobustnessTransform::Identity;
    let (clips, mut skipped) = prepare_manifest(job.train, &job.selector, &identity, &job.landmarks);
    if clips.is_empty() {
        return Err(HarnessError::AllVideosSkipped(job.train.len()));
    }
    let val = match job.val {
        Some(m) => {
            let (v, s) = prepare_manifest(m, &job.selector, &identity, &job.landmarks);
            skipped.extend(s);
            v
        }
        None => clips.clone(),
    };
    let mut trainer = match &job.resume {
        Some(path) => Trainer::from_checkpoint(load_checkpoint(path)?, job.loss, job.config.clone())?,
        None => Trainer::new(Model::new(job.model)?, job.loss, job.config.clone())?,
    };
    let mut outcome = fit(&mut trainer, &clips, &val, Some(&job.config.checkpoint_dir))?;
    outcome.skipped = skipped;
    Ok(outcome)
}
