use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::data::{prepare_manifest, Clip, LandmarkSource, Skipped};
use super::metrics::{auc, average_precision};
use super::HarnessError;
use crate::ingest::{DatasetManifest, Label, RobustnessTransform};
use crate::mstie::Model;
use crate::selector::SelectorConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoScore {
    pub path: String,
    pub label: Label,
    pub probability_real: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset: String,
    /// Absent for the untransformed data.
    pub transform: Option<String>,
    pub ap: f64,
    pub auc: f64,
    pub scores: Vec<VideoScore>,
    pub skipped: Vec<Skipped>,
}

impl EvalReport {
    /// AP and AUC recomputed from the stored scores.
    pub fn recompute(&self) -> Result<(f64, f64), HarnessError> {
        let s: Vec<f64> = self.scores.iter().map(|v| v.probability_real).collect();
        let l: Vec<bool> = self.scores.iter().map(|v| !v.label.is_fake()).collect();
        Ok((average_precision(&s, &l)?, auc(&s, &l)?))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }

    pub fn save(&self, path: &Path) -> Result<(), HarnessError> {
        std::fs::write(path, self.to_json() + "\n").map_err(|source| HarnessError::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}

/// Evaluation-mode `probability_real` for each clip, in order.
pub fn score_clips(model: &Model, clips: &[Clip]) -> Result<Vec<f64>, HarnessError> {
    clips
        .par_iter()
        .map(|c| {
            let rgb = c.rgb_tensor();
            let delta = c.delta_tensor();
            Ok(model.predict(rgb.view(), delta.view())?.probability_real)
        })
        .collect()
}

/// Scores prepared clips and computes AP/AUC with real as the positive class.
pub fn evaluate_clips(
    model: &Model,
    clips: &[Clip],
    skipped: Vec<Skipped>,
    dataset: &str,
    transform: &RobustnessTransform,
) -> Result<EvalReport, HarnessError> {
    let probs = score_clips(model, clips)?;
    let labels: Vec<bool> = clips.iter().map(|c| !c.label.is_fake()).collect();
    let ap = average_precision(&probs, &labels)?;
    let auc = auc(&probs, &labels)?;
    let scores = clips
        .iter()
        .zip(probs)
        .map(|(c, p)| VideoScore {
            path: c.path.display().to_string(),
            label: c.label,
            probability_real: p,
        })
        .collect();
    Ok(EvalReport {
        dataset: dataset.to_string(),
        transform: (*transform != RobustnessTransform::Identity).then(|| transform.to_string()),
        ap,
        auc,
        scores,
        skipped,
    })
}

/// Prepares `manifest` under `transform` and evaluates `model` on it.
/// Videos failing selection are listed in the report and excluded.
pub fn evaluate(
    manifest: &DatasetManifest,
    dataset: &str,
    model: &Model,
    selector: &SelectorConfig,
    landmarks: &LandmarkSource,
    transform: &RobustnessTransform,
) -> Result<EvalReport, HarnessError> {
    if !manifest.has_both_classes() {
        return Err(HarnessError::SingleClassManifest);
    }
    selector.validate().map_err(|e| HarnessError::Invalid(e.to_string()))?;
    transform.validate().map_err(|e| HarnessError::Invalid(e.to_string()))?;
    let (clips, skipped) = prepare_manifest(manifest, selector, transform, landmarks);
    if clips.is_empty() {
        return Err(HarnessError::AllVideosSkipped(manifest.len()));
    }
    evaluate_clips(model, &clips, skipped, dataset, transform)
}

/// One [`evaluate`] per transform.
pub fn robustness_sweep(
    manifest: &DatasetManifest,
    dataset: &str,
    model: &Model,
    selector: &SelectorConfig,
    landmarks: &LandmarkSource,
    transforms: &[RobustnessTransform],
) -> Result<Vec<EvalReport>, HarnessError> {
    for t in transforms {
        t.validate().map_err(|e| HarnessError::Invalid(e.to_string()))?;
    }
    transforms
        .iter()
        .map(|t| evaluate(manifest, dataset, model, selector, landmarks, t))
        .collect()
}

/// Plain-text table of AP and AUC per transform.
pub fn comparison_table(reports: &[EvalReport]) -> String {
    let mut out = String::from("transform\tAP\tAUC\tscored\tskipped\n");
    for r in reports {
        let _ = writeln!(
            out,
            "{}\t{:.4}\t{:.4}\t{}\t{}",
            r.transform.as_deref().unwrap_or("identity"),
            r.ap,
            r.auc,
            r.scores.len(),
            r.skipped.len()
        );
    }
    out
}
