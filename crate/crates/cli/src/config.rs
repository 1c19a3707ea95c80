//! Run configuration: one TOML file with a section per module.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use lipinc::harness::TrainConfig;
use lipinc::ingest::ToySpec;
use lipinc::localize::LocalizeConfig;
use lipinc::losses::LossConfig;
use lipinc::mstie::ModelConfig;
use lipinc::selector::SelectorConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// Full-size model and training schedule.
    #[default]
    Paper,
    /// Small model and short schedule for the synthetic dataset.
    Toy,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LandmarkSettings {
    /// Directory of `<video stem>.landmarks` files; `LIPINC_CACHE` wins.
    pub cache_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub preset: Preset,
    pub toy: ToySpec,
    pub landmarks: LandmarkSettings,
    pub selector: SelectorConfig,
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub train: TrainConfig,
    pub localize: LocalizeConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::preset(Preset::Paper)
    }
}

impl RunConfig {
    pub fn preset(preset: Preset) -> Self {
        let (model, train) = match preset {
            Preset::Paper => (ModelConfig::default(), TrainConfig::default()),
            Preset::Toy => (ModelConfig::toy(), TrainConfig::toy()),
        };
        Self {
            preset,
            toy: ToySpec::default(),
            landmarks: LandmarkSettings::default(),
            selector: SelectorConfig::default(),
            model,
            loss: LossConfig::default(),
            train,
            localize: LocalizeConfig::default(),
        }
    }

    /// Reads `path` over the defaults of its preset. `preset` from the
    /// command line replaces the file's choice.
    pub fn load(path: Option<&Path>, preset: Option<Preset>) -> Result<Self> {
        let file: toml::Table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("cannot read config {}", p.display()))?;
                text.parse().with_context(|| format!("config {}", p.display()))?
            }
            None => toml::Table::new(),
        };
        let chosen = match (preset, file.get("preset")) {
            (Some(p), _) => p,
            (None, Some(v)) => v.clone().try_into().context("config key preset")?,
            (None, None) => Preset::Paper,
        };
        let mut merged = toml::Table::try_from(Self::preset(chosen)).context("serialising defaults")?;
        merge(&mut merged, file);
        merged.insert("preset".into(), toml::Value::try_from(chosen)?);
        let cfg: RunConfig = toml::Value::Table(merged)
            .try_into()
            .map_err(|e: toml::de::Error| anyhow::anyhow!("invalid config: {}", e.message()))?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.selector.validate()?;
        self.model.validate()?;
        self.loss.validate()?;
        self.train.validate()?;
        self.localize.validate()?;
        let crop = &self.selector.crop;
        if (crop.height as usize, crop.width as usize) != (self.model.crop_height, self.model.crop_width) {
            bail!(
                "selector crop {}x{} differs from model input {}x{}",
                crop.height,
                crop.width,
                self.model.crop_height,
                self.model.crop_width
            );
        }
        if self.selector.sequence_len() > self.model.max_frames {
            bail!(
                "selector yields {} frames but model.max_frames is {}",
                self.selector.sequence_len(),
                self.model.max_frames
            );
        }
        Ok(())
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.toy.seed = seed;
        self.model.seed = seed;
        self.train.seed = seed;
    }
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// `section.key = default` lines for the given sections of the paper preset.
pub fn key_listing(sections: &[&str]) -> String {
    let value = serde_json::to_value(RunConfig::default()).expect("config serialises");
    let mut out = String::from("Config keys (--config FILE, TOML):\n  preset = \"paper\" | \"toy\"\n");
    for s in sections {
        flatten(s, &value[*s], &mut out);
    }
    out
}

fn flatten(prefix: &str, v: &serde_json::Value, out: &mut String) {
    match v {
        serde_json::Value::Object(map) => {
            for (k, v) in map {
                flatten(&format!("{prefix}.{k}"), v, out);
            }
        }
        serde_json::Value::Null => out.push_str(&format!("  {prefix} = (unset)\n")),
        other => out.push_str(&format!("  {prefix} = {other}\n")),
    }
}
