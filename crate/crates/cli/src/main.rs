use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use apgnet_core::config::{parse_ladder, AblationId, ExperimentConfig, Profile, DETERMINISTIC_ENV};
use apgnet_core::experiment::{ablate, ablation_markdown, enhance_dir, evaluate, predict, train};
use apgnet_core::fixtures::write_fixture_set;
use apgnet_core::metrics::evaluate_dataset;
use apgnet_core::Split;
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "apgnet", version, about = "Prior-guided Siamese segmentation for underwater camouflaged objects")]
struct Cli {
    /// Experiment config file (TOML); keys override the profile defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    profile: Option<ProfileArg>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProfileArg {
    Desk,
    Paper,
}

impl From<ProfileArg> for Profile {
    fn from(p: ProfileArg) -> Self {
        match p {
            ProfileArg::Desk => Profile::Desk,
            ProfileArg::Paper => Profile::Paper,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train one ablation variant and write a checkpoint and log.
    Train {
        #[arg(long)]
        out: PathBuf,
        /// Dataset root; overrides data.root.
        #[arg(long)]
        data: Option<PathBuf>,
        /// M1..M5 or full; overrides ablation_id.
        #[arg(long)]
        ablation: Option<AblationId>,
        #[arg(long)]
        seed: Option<u64>,
        /// Stop after this many optimizer steps.
        #[arg(long)]
        max_steps: Option<usize>,
    },
    /// Predict every image of a dataset split and score it.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum)]
        split: Option<SplitArg>,
    },
    /// Write a probability map and a binary mask for one image.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        image: PathBuf,
        /// Probability map path; the mask goes next to it.
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a directory of predictions against a directory of masks.
    Score {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        json: Option<PathBuf>,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Apply MSRCR to every image in a directory.
    Enhance {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a synthetic camouflage dataset.
    Fixtures {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 8)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 128)]
        size: usize,
    },
    /// Train and evaluate a ladder of variants and tabulate the results.
    Ablate {
        /// Comma list or range, e.g. `M1..M5` or `M1,M5`.
        #[arg(long, default_value = "M1..M5")]
        ladder: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        max_steps: Option<usize>,
    },
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let config = ExperimentConfig::load(cli.config.as_deref(), cli.profile.map(Profile::from))
        .with_context(|| match &cli.config {
            Some(p) => format!("loading config {}", p.display()),
            None => "building default config".into(),
        })?;
    if config.deterministic() {
        log::info!("deterministic mode ({DETERMINISTIC_ENV} or train.deterministic)");
    }
    Ok(config)
}

fn apply_overrides(
    config: &mut ExperimentConfig,
    data: &Option<PathBuf>,
    seed: Option<u64>,
    max_steps: Option<usize>,
) -> Result<()> {
    if let Some(d) = data {
        config.data.root = Some(d.clone());
    }
    if let Some(s) = seed {
        config.seed = s;
    }
    if max_steps.is_some() {
        config.train.max_steps = max_steps;
    }
    config.validate()?;
    Ok(())
}

fn ensure_dir(path: &Path, what: &str) -> Result<()> {
    if !path.is_dir() {
        bail!("{what} {} is not a directory", path.display());
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Train { out, data, ablation, seed, max_steps } => {
            let mut config = load_config(&cli)?;
            if let Some(id) = ablation {
                config.ablation_id = *id;
            }
            apply_overrides(&mut config, data, *seed, *max_steps)?;
            let outcome = train(&config, out)?;
            println!(
                "trained {} for {} steps ({} params), final loss {:.5}",
                config.ablation_id, outcome.steps, outcome.params, outcome.final_loss.l_total
            );
            println!("checkpoint: {}", outcome.checkpoint.display());
            println!("log: {}", outcome.log.display());
        }
        Command::Evaluate { checkpoint, data, out, split } => {
            ensure_dir(data, "dataset root")?;
            let report = evaluate(checkpoint, data, out, split.map(Split::from))?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Predict { checkpoint, image, out } => {
            let mask = predict(checkpoint, image, out)?;
            println!("probability map: {}", out.display());
            println!("mask: {}", mask.display());
        }
        Command::Score { pred, gt, json, csv } => {
            ensure_dir(pred, "prediction directory")?;
            ensure_dir(gt, "mask directory")?;
            let config = load_config(&cli)?;
            let report = evaluate_dataset(pred, gt, &config.metric)?;
            if let Some(p) = json {
                report.write_json(p)?;
            }
            if let Some(p) = csv {
                report.write_csv(p)?;
            }
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Enhance { input, out } => {
            ensure_dir(input, "input")?;
            let config = load_config(&cli)?;
            let n = enhance_dir(input, out, &config.msrcr)?;
            println!("enhanced {n} images into {}", out.display());
        }
        Command::Fixtures { out, count, seed, size } => {
            write_fixture_set(out, *count, *seed, *size)?;
            println!("wrote {count} fixtures to {}", out.display());
        }
        Command::Ablate { ladder, out, data, seed, max_steps } => {
            let mut config = load_config(&cli)?;
            apply_overrides(&mut config, data, *seed, *max_steps)?;
            let ladder = parse_ladder(ladder)?;
            let rows = ablate(&config, &ladder, out)?;
            print!("{}", ablation_markdown(&rows));
        }
    }
    Ok(())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
