use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::Args;
use lipinc::harness::{
    comparison_table, evaluate, robustness_sweep, train, LandmarkSource, LogRecord, TrainJob,
};
use lipinc::ingest::{
    load_manifest, read_video, save_manifest, synthesize_concat_video, synthesize_toy_dataset, write_video, Codec,
    DatasetManifest, Label, ManifestEntry, RobustnessTransform,
};
use lipinc::landmarks::write_landmark_cache;
use lipinc::localize::{emit_report, fake_mask, localize, ModelScorer};
use lipinc::mstie::{load_checkpoint, Model};
use lipinc::selector::{dump_selection, select_and_build};

use crate::config::RunConfig;
use crate::{Cli, Command};

pub const CACHE_ENV: &str = "LIPINC_CACHE";

#[derive(Debug, Args)]
pub struct ToyArgs {
    /// Number of videos (alternating real and fake).
    #[arg(long)]
    pub count: Option<usize>,
    /// Seconds per video.
    #[arg(long)]
    pub duration: Option<f64>,
    /// Fake mouth perturbation strength in [0, 1].
    #[arg(long)]
    pub strength: Option<f64>,
    #[arg(long)]
    pub fps: Option<f64>,
    /// Render concatenated videos instead, one segment per letter
    /// (R real, F fake), e.g. `RFFRF`.
    #[arg(long, value_name = "PATTERN")]
    pub concat: Option<String>,
    /// Number of concatenated videos to render.
    #[arg(long, default_value_t = 1)]
    pub concat_videos: usize,
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    #[arg(long)]
    pub manifest: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Manifest used for per-epoch validation and model selection.
    #[arg(long)]
    pub val_manifest: Option<PathBuf>,
    /// Continue from this checkpoint.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub epsilon: Option<f64>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// `identity`, `CF_<crf>` or `SR_<scale>`.
    #[arg(long, default_value = "identity")]
    pub transform: RobustnessTransform,
    /// Dataset name recorded in the report; defaults to the manifest's
    /// parent directory name.
    #[arg(long)]
    pub dataset: Option<String>,
}

#[derive(Debug, Args)]
pub struct RobustnessArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "identity,CF_23,CF_40,SR_0.5,SR_0.75")]
    pub transforms: Vec<RobustnessTransform>,
    #[arg(long)]
    pub dataset: Option<String>,
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(required = true)]
    pub videos: Vec<PathBuf>,
}

#[derive(Debug, Args)]
pub struct LocalizeArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Localize every entry; per-frame masks become the ground truth.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    pub videos: Vec<PathBuf>,
}

pub fn run(cli: Cli) -> Result<ExitCode> {
    let g = cli.global;
    if let Some(n) = g.workers {
        if n == 0 {
            bail!("--workers must be at least 1");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let mut cfg = RunConfig::load(g.config.as_deref(), g.preset)?;
    if let Some(seed) = g.seed {
        cfg.set_seed(seed);
    }
    let out = g.out;
    match cli.command {
        Command::MakeToyData(a) => make_toy_data(cfg, a, out),
        Command::Preprocess(a) => preprocess(cfg, a, out),
        Command::Train(a) => run_train(cfg, a, out),
        Command::Evaluate(a) => run_evaluate(cfg, a, out),
        Command::Robustness(a) => run_robustness(cfg, a, out),
        Command::Detect(a) => detect(cfg, a),
        Command::Localize(a) => run_localize(cfg, a, out),
    }
}

fn landmark_source(cfg: &RunConfig) -> LandmarkSource {
    let dir = std::env::var_os(CACHE_ENV)
        .filter(|v| !v.is_empty())
        .map(PathBuf::from)
        .or_else(|| cfg.landmarks.cache_dir.clone());
    LandmarkSource::new(dir)
}

fn load_model(cfg: &RunConfig, path: &Path) -> Result<Model> {
    let ckpt = load_checkpoint(path)?;
    let m = ckpt.model.config();
    let crop = &cfg.selector.crop;
    if (m.crop_height, m.crop_width) != (crop.height as usize, crop.width as usize) {
        bail!(
            "checkpoint expects {}x{} crops but selector.crop is {}x{}",
            m.crop_height,
            m.crop_width,
            crop.height,
            crop.width
        );
    }
    Ok(ckpt.model)
}

fn dataset_name(explicit: Option<String>, manifest: &Path) -> String {
    explicit.unwrap_or_else(|| {
        manifest
            .canonicalize()
            .ok()
            .and_then(|p| p.parent().and_then(|d| d.file_name()).map(|n| n.to_string_lossy().into_owned()))
            .unwrap_or_else(|| "dataset".into())
    })
}

fn make_toy_data(mut cfg: RunConfig, a: ToyArgs, out: Option<PathBuf>) -> Result<ExitCode> {
    let out = out.unwrap_or_else(|| PathBuf::from("toy_data"));
    let spec = &mut cfg.toy;
    spec.count = a.count.unwrap_or(spec.count);
    spec.duration = a.duration.unwrap_or(spec.duration);
    spec.inconsistency_strength = a.strength.unwrap_or(spec.inconsistency_strength);
    spec.fps = a.fps.unwrap_or(spec.fps);
    let manifest_path = out.join("manifest.tsv");
    match a.concat {
        None => {
            spec.validate()?;
            let m = synthesize_toy_dataset(spec, &out)?;
            println!("{}\t{} videos", manifest_path.display(), m.len());
        }
        Some(pattern) => {
            let segments = pattern
                .chars()
                .map(|c| match c.to_ascii_uppercase() {
                    'R' => Ok(Label::Real),
                    'F' => Ok(Label::Fake),
                    other => bail!("concat pattern letter {other:?} is not R or F"),
                })
                .collect::<Result<Vec<_>>>()?;
            std::fs::create_dir_all(&out).with_context(|| out.display().to_string())?;
            let mut entries = Vec::new();
            for k in 0..a.concat_videos {
                let v = synthesize_concat_video(
                    &segments,
                    1.0,
                    spec.fps,
                    spec.inconsistency_strength,
                    spec.seed.wrapping_add(k as u64),
                )?;
                let path = out.join(format!("concat_{k:03}.avi"));
                write_video(&path, &v.stream, Codec::Png)?;
                entries.push(ManifestEntry {
                    path,
                    label: v.label,
                    mask: Some(v.mask),
                });
            }
            save_manifest(&DatasetManifest { entries, split: None }, &manifest_path)?;
            println!("{}\t{} videos", manifest_path.display(), a.concat_videos);
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn preprocess(cfg: RunConfig, a: PreprocessArgs, out: Option<PathBuf>) -> Result<ExitCode> {
    cfg.selector.validate()?;
    let out = out.unwrap_or_else(|| PathBuf::from("preprocessed"));
    let manifest = load_manifest(&a.manifest)?;
    let mut source = landmark_source(&cfg);
    let cache_dir = source.cache_dir.clone().unwrap_or_else(|| out.join("landmarks"));
    source.cache_dir = Some(cache_dir.clone());
    let dumps = out.join("selections");
    std::fs::create_dir_all(&cache_dir).with_context(|| cache_dir.display().to_string())?;
    for e in &manifest.entries {
        let video = read_video(&e.path)?;
        let landmarks = source.landmarks(&e.path, &video, 1.0).map_err(anyhow::Error::msg)?;
        let found: Vec<_> = landmarks.iter().flatten().cloned().collect();
        let cache = LandmarkSource::cache_path(&cache_dir, &e.path);
        if !cache.exists() {
            write_landmark_cache(&cache, &found)?;
        }
        match select_and_build(&video, &landmarks, &cfg.selector) {
            Ok(sel) => {
                let stem = e.path.file_stem().unwrap_or_default().to_string_lossy();
                dump_selection(&sel, &dumps, &stem).with_context(|| dumps.display().to_string())?;
                println!("{}\t{}/{}\t{:?}", e.path.display(), found.len(), video.len(), sel.indices());
            }
            Err(err) => println!("{}\t{}/{}\tskipped: {err}", e.path.display(), found.len(), video.len()),
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn run_train(mut cfg: RunConfig, a: TrainArgs, out: Option<PathBuf>) -> Result<ExitCode> {
    let t = &mut cfg.train;
    t.epochs = a.epochs.unwrap_or(t.epochs);
    t.batch_size = a.batch_size.unwrap_or(t.batch_size);
    t.learning_rate = a.learning_rate.unwrap_or(t.learning_rate);
    t.epsilon = a.epsilon.unwrap_or(t.epsilon);
    if let Some(dir) = out {
        t.checkpoint_dir = dir;
    }
    cfg.validate()?;
    let manifest = load_manifest(&a.manifest)?;
    let val = a.val_manifest.as_deref().map(load_manifest).transpose()?;
    let job = TrainJob {
        train: &manifest,
        val: val.as_ref(),
        model: cfg.model,
        selector: cfg.selector,
        loss: cfg.loss,
        config: cfg.train.clone(),
        landmarks: landmark_source(&cfg),
        resume: a.resume,
    };
    let outcome = train(&job)?;
    for s in &outcome.skipped {
        println!("skipped\t{}\t{}", s.path, s.reason);
    }
    if let Some(LogRecord::Epoch { epoch, l_total, val_auc, .. }) =
        outcome.log.iter().rev().find(|r| matches!(r, LogRecord::Epoch { .. }))
    {
        let auc = val_auc.map_or("-".into(), |v| format!("{v:.4}"));
        println!("epoch {epoch}\tloss {l_total:.4}\tval_auc {auc}");
    }
    if let Some(best) = &outcome.best_checkpoint {
        println!("best\t{}", best.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn run_evaluate(cfg: RunConfig, a: EvaluateArgs, out: Option<PathBuf>) -> Result<ExitCode> {
    cfg.selector.validate()?;
    let model = load_model(&cfg, &a.checkpoint)?;
    let manifest = load_manifest(&a.manifest)?;
    let name = dataset_name(a.dataset, &a.manifest);
    let report = evaluate(&manifest, &name, &model, &cfg.selector, &landmark_source(&cfg), &a.transform)?;
    if let Some(path) = out {
        report.save(&path)?;
    }
    println!(
        "{}\t{}\tAP {:.4}\tAUC {:.4}\tscored {}\tskipped {}",
        report.dataset,
        a.transform,
        report.ap,
        report.auc,
        report.scores.len(),
        report.skipped.len()
    );
    Ok(ExitCode::SUCCESS)
}

fn run_robustness(cfg: RunConfig, a: RobustnessArgs, out: Option<PathBuf>) -> Result<ExitCode> {
    cfg.selector.validate()?;
    let model = load_model(&cfg, &a.checkpoint)?;
    let manifest = load_manifest(&a.manifest)?;
    let name = dataset_name(a.dataset, &a.manifest);
    let reports = robustness_sweep(&manifest, &name, &model, &cfg.selector, &landmark_source(&cfg), &a.transforms)?;
    if let Some(dir) = out {
        std::fs::create_dir_all(&dir).with_context(|| dir.display().to_string())?;
        for (r, t) in reports.iter().zip(&a.transforms) {
            r.save(&dir.join(format!("{name}_{t}.json")))?;
        }
        std::fs::write(dir.join(format!("{name}_table.tsv")), comparison_table(&reports))?;
    }
    print!("{}", comparison_table(&reports));
    Ok(ExitCode::SUCCESS)
}

fn detect(cfg: RunConfig, a: DetectArgs) -> Result<ExitCode> {
    cfg.selector.validate()?;
    let model = load_model(&cfg, &a.checkpoint)?;
    let source = landmark_source(&cfg);
    let mut failed = false;
    for path in &a.videos {
        let result = (|| -> Result<f64> {
            let video = read_video(path)?;
            let landmarks = source.landmarks(path, &video, 1.0).map_err(anyhow::Error::msg)?;
            let sel = select_and_build(&video, &landmarks, &cfg.selector)?;
            let (rgb, delta) = (sel.rgb.tensor(), sel.delta.tensor());
            Ok(model.predict(rgb.view(), delta.view())?.probability_real)
        })();
        match result {
            Ok(p) => {
                let label = if p >= 0.5 { Label::Real } else { Label::Fake };
                println!("{}\t{p:.6}\t{label}", path.display());
            }
            Err(e) => {
                failed = true;
                println!("{}\t-\tunscorable: {e:#}", path.display());
            }
        }
    }
    Ok(if failed { ExitCode::from(1) } else { ExitCode::SUCCESS })
}

fn run_localize(cfg: RunConfig, a: LocalizeArgs, out: Option<PathBuf>) -> Result<ExitCode> {
    cfg.selector.validate()?;
    cfg.localize.validate()?;
    let model = load_model(&cfg, &a.checkpoint)?;
    let out = out.unwrap_or_else(|| PathBuf::from("localization"));
    let mut jobs: Vec<(PathBuf, Option<Vec<bool>>)> = Vec::new();
    if let Some(m) = &a.manifest {
        for e in load_manifest(m)?.entries {
            jobs.push((e.path, e.mask.map(|m| fake_mask(&m))));
        }
    }
    jobs.extend(a.videos.into_iter().map(|p| (p, None)));
    if jobs.is_empty() {
        bail!("no videos given (pass paths or --manifest)");
    }
    let source = landmark_source(&cfg);
    let scorer = ModelScorer {
        model: &model,
        selector: cfg.selector,
    };
    for (path, truth) in jobs {
        let video = read_video(&path)?;
        let landmarks = source.landmarks(&path, &video, 1.0).map_err(anyhow::Error::msg)?;
        let name = path.display().to_string();
        let report = localize(&name, &video, &landmarks, &scorer, truth.as_deref(), &cfg.localize)?;
        let (text, _) = emit_report(&report, &out)?;
        let inherited = report.segments.iter().filter(|s| s.inherited).count();
        let iou = report.iou.map_or("-".into(), |v| format!("{v:.4}"));
        println!(
            "{name}\tsegments {}\tinherited {inherited}\tiou {iou}\t{}",
            report.segments.len(),
            text.display()
        );
    }
    Ok(ExitCode::SUCCESS)
}
