mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};

use config::{key_listing, Preset};

#[derive(Debug, Parser)]
#[command(name = "lipinc", version, about = "Lip-sync deepfake detection and localization")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// TOML run configuration; flags given on the command line win.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Default set the configuration file starts from.
    #[arg(long, global = true, value_enum)]
    pub preset: Option<Preset>,
    /// Worker threads for preprocessing, training and scoring.
    #[arg(long, global = true, value_name = "N")]
    pub workers: Option<usize>,
    /// Seed for data generation, weight initialisation and training order.
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// Output directory (or file, for `evaluate`).
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render the synthetic talking-face dataset with a manifest.
    MakeToyData(commands::ToyArgs),
    /// Detect landmarks, fill the landmark cache and dump frame selections.
    Preprocess(commands::PreprocessArgs),
    /// Train a model; writes checkpoints and a JSON-lines log.
    Train(commands::TrainArgs),
    /// Score a manifest and report AP and AUC.
    Evaluate(commands::EvaluateArgs),
    /// Evaluate one checkpoint on compressed and rescaled copies.
    Robustness(commands::RobustnessArgs),
    /// Print `path  prob_real  label` for each video.
    Detect(commands::DetectArgs),
    /// Score one-second segments and write probability timelines.
    Localize(commands::LocalizeArgs),
}

fn command_with_key_help() -> clap::Command {
    let sections: [(&str, &[&str]); 7] = [
        ("make-toy-data", &["toy"]),
        ("preprocess", &["landmarks", "selector"]),
        ("train", &["landmarks", "selector", "model", "loss", "train"]),
        ("evaluate", &["landmarks", "selector"]),
        ("robustness", &["landmarks", "selector"]),
        ("detect", &["landmarks", "selector"]),
        ("localize", &["landmarks", "selector", "localize"]),
    ];
    let mut cmd = Cli::command();
    for (name, keys) in sections {
        let text = key_listing(keys);
        cmd = cmd.mut_subcommand(name, |c| c.after_help(text));
    }
    cmd
}

fn main() -> ExitCode {
    let cli = match command_with_key_help()
        .try_get_matches()
        .and_then(|m| Cli::from_arg_matches(&m))
    {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.global.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match commands::run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
