//! `relmol` command-line tool.
//!
//! Tables go to `--out` (or stdout) as CSV; summaries are printed as JSON.
//! Failures exit with status 1 and one JSON line `{"error": "..."}` on stderr.

mod commands;
mod config;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use relmol::pipeline::{FusionMode, MetricKind, RunManifest};
use relmol::similarity::Modality;

use crate::config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "relmol", version, about = "Relational-learning pretraining and multimodal fusion for molecules")]
struct Cli {
    /// Seed for every random choice in the run (overrides the config file).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Write a run manifest (arguments, config, input hashes, metrics) here.
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
    /// Repeat the run recorded in a manifest and check its metrics.
    #[arg(long, conflicts_with = "manifest")]
    from_manifest: Option<PathBuf>,
    /// More log output on stderr (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Atom and bond summary as JSON (JSON lines for a dataset).
    Parse(MolInput),
    /// Hex-encoded Morgan fingerprints as CSV `id,fingerprint`.
    Fingerprint {
        #[command(flatten)]
        input: MolInput,
        #[arg(long)]
        radius: Option<usize>,
        /// Bit width, a power of two.
        #[arg(long)]
        width: Option<usize>,
    },
    /// Row-stochastic target similarity matrix for one modality.
    Similarity {
        #[arg(long)]
        modality: Modality,
        /// Embedding file, or for `fingerprint` also a dataset with a smiles column.
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Relational pretraining, one encoder per modality.
    Pretrain {
        /// Dataset CSV `id,smiles[,labels...]`.
        #[arg(long)]
        data: PathBuf,
        /// Comma-separated modalities, or `all` for every available one.
        #[arg(long, default_value = "fingerprint")]
        modalities: String,
        /// `modality=path`; fingerprints are computed from SMILES when absent.
        #[arg(long = "embeddings", value_name = "MODALITY=PATH")]
        embeddings: Vec<String>,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Fine-tune on a scaffold split and report the test metric.
    Finetune {
        #[arg(long)]
        data: PathBuf,
        /// none | early | unimodal:<m> | intermediate:<m>,<m> | late:<m>,<m>
        #[arg(long, default_value = "none")]
        mode: FusionMode,
        /// Directory holding `<name>.ckpt` files from `pretrain`.
        #[arg(long)]
        checkpoints: Option<PathBuf>,
        /// Test-set predictions CSV.
        #[arg(long)]
        pred: PathBuf,
        /// Late mode: per-branch contributions on the test set.
        #[arg(long)]
        contributions: Option<PathBuf>,
        #[arg(long)]
        model_out: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Recompute a metric from a predictions file.
    Evaluate {
        #[arg(long)]
        pred: PathBuf,
        /// CSV with an `id` column and one column per task.
        #[arg(long)]
        labels: PathBuf,
        /// roc_auc | rmse | pearson
        #[arg(long)]
        metric: MetricKind,
    },
    /// Per-modality linear-fit correlations and a fusion recommendation.
    Sensitivity {
        #[arg(long)]
        data: PathBuf,
        #[arg(long = "embeddings", value_name = "MODALITY=PATH", required = true)]
        embeddings: Vec<String>,
        /// Task column; the first one by default.
        #[arg(long)]
        task: Option<String>,
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Late-fusion gates and branch predictions for a saved model.
    FuseReport {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a synthetic corpus with a planted property and modality embeddings.
    Synthesize {
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long)]
        molecules: Option<usize>,
    },
}

#[derive(Debug, Args)]
struct MolInput {
    #[arg(long, required_unless_present = "input", conflicts_with = "input")]
    smiles: Option<String>,
    /// Dataset CSV `id,smiles[,labels...]`.
    #[arg(long = "in")]
    input: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// What a command reports back for the manifest.
#[derive(Debug, Default)]
pub struct Outcome {
    pub inputs: Vec<PathBuf>,
    pub metrics: BTreeMap<String, f64>,
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    // Built without reading the environment: all state comes from flags and config.
    let _ = env_logger::Builder::new().filter_level(level).format_timestamp(None).try_init();
}

/// Arguments as given, minus `--manifest` so a replay does not overwrite the original.
fn recorded_args(raw: &[String]) -> Vec<String> {
    let mut out = Vec::new();
    let mut skip = false;
    for a in raw {
        if skip {
            skip = false;
        } else if a == "--manifest" {
            skip = true;
        } else if !a.starts_with("--manifest=") {
            out.push(a.clone());
        }
    }
    out
}

fn run_command(cli: &Cli, raw: &[String]) -> Result<RunManifest> {
    let Some(command) = &cli.command else {
        bail!("no command given; see --help");
    };
    let (mut cfg, text) = match &cli.config {
        Some(path) => {
            let (c, t) = RunConfig::load(path)?;
            (c, Some(t))
        }
        None => (RunConfig::default(), None),
    };
    let seed = cfg.apply_seed(cli.seed);
    let outcome = commands::run(command, &mut cfg)?;
    let mut manifest = RunManifest::new(commands::name(command), recorded_args(raw), seed);
    manifest.config_text = text;
    manifest.config = serde_json::to_value(&cfg)?;
    if let Some(path) = &cli.config {
        manifest.add_input(path)?;
    }
    for path in &outcome.inputs {
        manifest.add_input(path)?;
    }
    manifest.metrics = outcome.metrics;
    Ok(manifest)
}

fn replay(path: &PathBuf) -> Result<()> {
    let recorded = RunManifest::load(path).with_context(|| format!("reading manifest {}", path.display()))?;
    let changed = recorded.changed_inputs();
    if !changed.is_empty() {
        bail!("inputs changed since the manifest was written: {}", changed.join(", "));
    }
    let mut argv = vec!["relmol".to_string()];
    argv.extend(recorded.args.iter().cloned());
    let cli = Cli::try_parse_from(&argv).context("recorded arguments no longer parse")?;
    init_logging(cli.verbose);
    let again = run_command(&cli, &recorded.args)?;
    let differing: Vec<&String> = recorded
        .metrics
        .iter()
        .filter(|(k, v)| again.metrics.get(*k).map(|w| w.to_bits()) != Some(v.to_bits()))
        .map(|(k, _)| k)
        .collect();
    if !differing.is_empty() || again.metrics.len() != recorded.metrics.len() {
        bail!("replay metrics differ from the manifest: {differing:?}");
    }
    eprintln!("{}", serde_json::json!({ "replayed": path, "metrics": again.metrics.len() }));
    Ok(())
}

fn main_inner() -> Result<()> {
    let raw: Vec<String> = std::env::args().skip(1).collect();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion) => {
            e.exit()
        }
        Err(e) => bail!("{}", e.render().to_string().lines().next().unwrap_or("invalid arguments")),
    };
    if let Some(path) = &cli.from_manifest {
        if cli.command.is_some() {
            bail!("--from-manifest takes no command");
        }
        return replay(path);
    }
    init_logging(cli.verbose);
    let manifest = run_command(&cli, &raw)?;
    if let Some(path) = &cli.manifest {
        manifest.save(path)?;
    }
    Ok(())
}

fn broken_pipe(e: &anyhow::Error) -> bool {
    e.chain()
        .any(|c| c.downcast_ref::<std::io::Error>().is_some_and(|io| io.kind() == std::io::ErrorKind::BrokenPipe))
}

fn main() -> ExitCode {
    match main_inner() {
        Ok(()) => ExitCode::SUCCESS,
        // downstream closed the pipe (`| head`); not our failure
        Err(e) if broken_pipe(&e) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", serde_json::json!({ "error": format!("{e:#}") }));
            ExitCode::FAILURE
        }
    }
}
