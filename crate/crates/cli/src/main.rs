mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use wsvad_core::ErrorKind;

use config::RunConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] wsvad_core::Error),
    /// A check that ran to completion but did not pass.
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Core(e) => match e.kind() {
                ErrorKind::Usage => 1,
                ErrorKind::Data => 2,
                ErrorKind::Numerical => 3,
            },
            CliError::Failed(_) => 3,
        }
    }
}

/// Weakly supervised anomaly scoring with batch clustering guidance.
///
/// Exit status: 0 success, 1 usage error, 2 data error, 3 numerical failure.
/// WSVAD_THREADS caps the worker threads (0 or unset = one per core).
#[derive(Parser, Debug)]
#[command(name = "wsvad", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic train/test dataset (manifests + feature files).
    Synth(SynthArgs),
    /// Train a model; writes model.ckpt and metrics.csv.
    Train(TrainArgs),
    /// Score a dataset with a checkpoint; prints the AUC and writes scores.csv.
    Eval(EvalArgs),
    /// Compare component and memory-strategy configurations over several seeds.
    Ablate(AblateArgs),
    /// Sensitivity of the full model to mu and lambda1.
    Sweep(SweepArgs),
    /// Finite-difference check of every gradient on a tiny random instance.
    Gradcheck(GradcheckArgs),
    /// List every configuration key with its default value.
    Keys,
}

#[derive(Args, Debug, Default)]
struct ConfigArgs {
    /// key=value configuration file (see `wsvad keys`).
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override one configuration key; repeatable. Dedicated flags win.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug, Default)]
struct ModelArgs {
    #[arg(long, value_parser = ["none", "way1", "way2", "way3", "way4"])]
    strategy: Option<String>,
    /// Disable the batch clustering loss (and the memory unless --strategy is given).
    #[arg(long)]
    no_bc_loss: bool,
    /// Disable cluster-guided score rectification.
    #[arg(long)]
    no_bcg: bool,
    /// Layer whose output is clustered.
    #[arg(long, value_parser = ["fc", "gcn1", "gcn2"])]
    tap: Option<String>,
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long)]
    lambda1: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Rectify scores of abnormal videos at evaluation.
    #[arg(long, value_name = "on|off", value_parser = ["on", "off"])]
    rectify_eval: Option<String>,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    separation: Option<f64>,
    #[arg(long)]
    feature_dim: Option<usize>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[command(flatten)]
    model: ModelArgs,
    /// Training manifest.
    #[arg(long, value_name = "MANIFEST")]
    train: Option<PathBuf>,
    /// Validation manifest, evaluated after every epoch.
    #[arg(long, value_name = "MANIFEST")]
    val: Option<PathBuf>,
    /// Output directory for model.ckpt and metrics.csv.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Continue from a checkpoint; its stored configuration is the base layer.
    #[arg(long, value_name = "CHECKPOINT")]
    resume: Option<PathBuf>,
    /// Start from all-zero parameters instead of Glorot initialization.
    #[arg(long)]
    zero_init: bool,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long, value_name = "CHECKPOINT")]
    checkpoint: PathBuf,
    /// Manifest to score.
    #[arg(long, value_name = "MANIFEST")]
    data: Option<PathBuf>,
    /// Per-frame CSV output (default: scores.csv next to the checkpoint).
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
    #[arg(long, value_name = "on|off", value_parser = ["on", "off"])]
    rectify_eval: Option<String>,
    #[arg(long)]
    alpha: Option<f64>,
}

#[derive(Args, Debug)]
struct AblateArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[command(flatten)]
    model: ModelArgs,
    /// Number of seeds, starting at --seed.
    #[arg(long, default_value_t = 5)]
    seeds: usize,
    #[arg(long, default_value = "all", value_parser = ["all", "components", "strategies"])]
    family: String,
    /// Training manifest; without it a synthetic set is generated per seed.
    #[arg(long, value_name = "MANIFEST", requires = "test")]
    train: Option<PathBuf>,
    #[arg(long, value_name = "MANIFEST", requires = "train")]
    test: Option<PathBuf>,
    /// Directory for ablation.csv and summary.txt.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, value_delimiter = ',', default_value = "0.5,1,2")]
    mu_values: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "0.01,0.1,1")]
    lambda1_values: Vec<f64>,
    #[arg(long, default_value_t = 3)]
    seeds: usize,
    #[arg(long, value_name = "MANIFEST", requires = "test")]
    train: Option<PathBuf>,
    #[arg(long, value_name = "MANIFEST", requires = "train")]
    test: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-6)]
    tolerance: f64,
    /// Central-difference step.
    #[arg(long, default_value_t = 1e-6)]
    step: f64,
}

impl ConfigArgs {
    /// Layers the file, `--set` pairs and `extra` flag values over `base`.
    fn resolve(&self, mut base: RunConfig, extra: &[(&str, String)]) -> Result<RunConfig, CliError> {
        if let Some(path) = &self.config {
            base.apply_file(path)?;
        }
        for pair in &self.set {
            let (k, v) = pair
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got {pair:?}")))?;
            base.set(k.trim(), v.trim())?;
        }
        if let Some(seed) = self.seed {
            base.set("seed", &seed.to_string())?;
        }
        for (k, v) in extra {
            base.set(k, v)?;
        }
        base.finish()?;
        Ok(base)
    }
}

impl ModelArgs {
    fn pairs(&self) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        if self.no_bc_loss {
            out.push(("bc_loss", "off".to_string()));
        }
        if let Some(s) = &self.strategy {
            out.push(("strategy", s.clone()));
        }
        if self.no_bcg {
            out.push(("bcg", "off".to_string()));
        }
        let mut push = |k: &'static str, v: Option<String>| {
            if let Some(v) = v {
                out.push((k, v));
            }
        };
        push("tap", self.tap.clone());
        push("mu", self.mu.map(|v| v.to_string()));
        push("lambda1", self.lambda1.map(|v| v.to_string()));
        push("alpha", self.alpha.map(|v| v.to_string()));
        push("epochs", self.epochs.map(|v| v.to_string()));
        push("rectify_eval", self.rectify_eval.clone());
        out
    }
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(value) = std::env::var("WSVAD_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .map_err(|_| CliError::Usage(format!("WSVAD_THREADS must be a non-negative integer, got {value:?}")))?;
    if n > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(format!("cannot configure {n} threads: {e}")))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    configure_threads()?;
    match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Ablate(a) => commands::ablate(a),
        Command::Sweep(a) => commands::sweep(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
        Command::Keys => {
            commands::keys();
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
