//! `sgvqa`: prepare data, train, evaluate, perturb and analyze scene graphs.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use sgvqa::curriculum::Regime;

#[derive(Debug, Parser)]
#[command(name = "sgvqa", version, about = "Scene-graph question answering experiments")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Global {
    /// Run configuration (TOML); defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, env = "SGVQA_SEED")]
    pub seed: Option<u64>,
    #[arg(long, global = true, env = "SGVQA_OUT_DIR")]
    pub out_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    pub epochs: Option<usize>,
    #[arg(long, global = true)]
    pub batch_size: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build the dataset, vocabularies and manifest.
    Prepare {
        /// Output directory [default: <out-dir>/data].
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Train a model under a regime.
    Train {
        #[arg(long)]
        data: Option<PathBuf>,
        /// e.g. gt, noisy, gt+noisy, probabilistic, "probabilistic (complete)".
        #[arg(long)]
        regime: Option<Regime>,
        /// Run directory [default: <out-dir>/train].
        #[arg(long)]
        run: Option<PathBuf>,
        /// Train on ablated ground-truth graphs.
        #[arg(long, value_enum)]
        ablate: Option<AblationArg>,
    },
    /// Score a checkpoint, or compare saved reports.
    Eval(EvalArgs),
    /// Apply a perturbation to a scene-graph file.
    Perturb(PerturbArgs),
    /// Overlap reports and statistics of scene-graph files.
    Analyze {
        /// Ground-truth scene graphs.
        #[arg(long)]
        gt: PathBuf,
        /// Generated or degraded graphs to compare against the ground truth.
        #[arg(long)]
        generated: Option<PathBuf>,
        /// Write the report here instead of stdout.
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Checkpoint blob [default: <out-dir>/train/model.bin].
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, default_value = "gt")]
    pub graphs: GraphArg,
    /// Corrupt the evaluation graphs at this level first.
    #[arg(long)]
    pub corrupt: Option<f64>,
    #[arg(long)]
    pub ablate: Option<AblationArg>,
    /// Split to score [default: from the config].
    #[arg(long)]
    pub split: Option<String>,
    /// Regime label written into the report [default: the configured regime].
    #[arg(long)]
    pub label: Option<String>,
    /// Compare these metrics reports instead of scoring a checkpoint.
    #[arg(long, num_args = 2.., conflicts_with_all = ["checkpoint", "corrupt", "ablate"])]
    pub compare: Vec<PathBuf>,
    /// Output directory [default: <out-dir>/eval].
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PerturbArgs {
    #[arg(long)]
    pub mode: PerturbMode,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    /// Corruption level for `corrupt`.
    #[arg(long, default_value_t = 0.0)]
    pub level: f64,
    #[arg(long, default_value = "relations")]
    pub ablation: AblationArg,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum GraphArg {
    Gt,
    Noisy,
    Filtered,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum AblationArg {
    Relations,
    Attributes,
    RelationNames,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PerturbMode {
    Corrupt,
    Filter,
    Ablate,
    Degrade,
}

fn fail(kind: &str, message: &str, code: u8) -> ExitCode {
    let doc = serde_json::json!({ "error": kind, "message": message });
    eprintln!("{doc}");
    ExitCode::from(code)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => return fail("usage", e.to_string().trim(), 2),
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => match e.downcast_ref::<sgvqa::Error>() {
            Some(sgvqa::Error::Config(_)) => fail("config", &format!("{e:#}"), 2),
            _ => fail("runtime", &format!("{e:#}"), 1),
        },
    }
}
