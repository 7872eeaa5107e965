use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use trec_qc::cli;
use trec_qc::config::RunConfig;
use trec_qc::Result;

#[derive(Parser)]
#[command(
    name = "trec-qc",
    version,
    about = "Ensemble question classifier for TREC-6"
)]
struct Cli {
    #[command(flatten)]
    common: Common,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Config file of `key = value` lines
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override one config key, e.g. `--set ensemble.epochs=5` (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,

    #[arg(long, global = true)]
    seed: Option<u64>,

    #[arg(long, global = true)]
    train: Option<PathBuf>,

    #[arg(long, global = true)]
    test: Option<PathBuf>,

    /// GloVe vectors file
    #[arg(long, global = true)]
    vectors: Option<PathBuf>,

    /// Pretrained generator/discriminator checkpoint
    #[arg(long, global = true)]
    electra_checkpoint: Option<PathBuf>,

    /// Ensemble checkpoint
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,

    /// Per-epoch metrics CSV written by `train`
    #[arg(long, global = true)]
    metrics: Option<PathBuf>,

    /// Metrics CSV written by `evaluate`
    #[arg(long, global = true)]
    eval_metrics: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Train GloVe vectors on the training file
    PretrainGlove,
    /// Pretrain the generator/discriminator pair on the training file
    PretrainElectra,
    /// Train the ensemble classifier
    Train,
    /// Evaluate a trained checkpoint on the test file
    Evaluate,
    /// Classify questions given as arguments, or one per stdin line
    Predict { text: Vec<String> },
}

fn build_config(c: &Common) -> Result<RunConfig> {
    let mut cfg = match &c.config {
        Some(path) => {
            cli::require_input(path)?;
            RunConfig::load(path)?
        }
        None => RunConfig::default(),
    };
    for kv in &c.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| trec_qc::Error::Usage(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        cfg.set(k, v)?;
    }
    if let Some(seed) = c.seed {
        cfg.set("seed", &seed.to_string())?;
    }
    let paths = [
        ("path.train", &c.train),
        ("path.test", &c.test),
        ("path.vectors", &c.vectors),
        ("path.electra_checkpoint", &c.electra_checkpoint),
        ("path.checkpoint", &c.checkpoint),
        ("path.metrics", &c.metrics),
        ("path.eval_metrics", &c.eval_metrics),
    ];
    for (key, value) in paths {
        if let Some(p) = value {
            cfg.set(key, &p.to_string_lossy())?;
        }
    }
    Ok(cfg)
}

fn run(args: &Cli) -> Result<()> {
    let cfg = build_config(&args.common)?;
    let stdout = io::stdout();
    let mut out = stdout.lock();
    match &args.command {
        Command::PretrainGlove => cli::cmd_pretrain_glove(&cfg, &mut out),
        Command::PretrainElectra => cli::cmd_pretrain_electra(&cfg, &mut out),
        Command::Train => cli::cmd_train(&cfg, &mut out).map(drop),
        Command::Evaluate => cli::cmd_evaluate(&cfg, &mut out).map(drop),
        Command::Predict { text } => {
            cli::cmd_predict(&cfg, text, &mut io::stdin().lock(), &mut out).map(drop)
        }
    }?;
    out.flush()
        .map_err(|e| trec_qc::Error::Usage(format!("cannot write output: {e}")))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args = Cli::parse();
    match run(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
