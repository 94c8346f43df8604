mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use camforge_core::forge::{Effect, SceneStyle};

#[derive(Debug, Parser)]
#[command(name = "camforge", version, about = "Synthetic camera-control data, toy adapter training and drift diagnostics")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Global {
    /// TOML run configuration; flags override its keys.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Run directory (or output file for single-artifact commands).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, short, global = true)]
    pub quiet: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a dataset and its manifest.
    Forge(ForgeArgs),
    /// Train LoRA + adapters on a forged dataset with FEP monitoring.
    Train(TrainArgs),
    /// Prune shallow LoRA deltas (clean) or copy verbatim (dirty).
    Surgery(SurgeryArgs),
    /// SSF / SS-FD between two checkpoints.
    Fep(FepArgs),
    /// Intruder sweep and principal showdown between two checkpoints.
    Spectra(SpectraArgs),
    /// Pivot externally computed metric scores into a comparison table.
    SvpIngest(SvpArgs),
}

#[derive(Debug, Args)]
pub struct ForgeArgs {
    #[arg(long, value_parser = parse_effect)]
    pub effect: Option<Effect>,
    /// Seven-condition single-layer plan instead of the pyramid.
    #[arg(long)]
    pub one_shot: bool,
    #[arg(long)]
    pub canvas: Option<usize>,
    #[arg(long, value_enum)]
    pub style: Option<StyleArg>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum StyleArg {
    Primitives,
    NoiseTexture,
}

impl From<StyleArg> for SceneStyle {
    fn from(s: StyleArg) -> Self {
        match s {
            StyleArg::Primitives => SceneStyle::Primitives,
            StyleArg::NoiseTexture => SceneStyle::NoiseTexture,
        }
    }
}

fn parse_effect(s: &str) -> Result<Effect, String> {
    s.parse::<Effect>().map_err(|e| e.to_string())
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset directory containing dataset-manifest.json.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub steps: Option<u64>,
    #[arg(long)]
    pub cadence: Option<u64>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Train only the conditional adapters.
    #[arg(long)]
    pub adapter_only: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SurgeryMode {
    Clean,
    Dirty,
}

#[derive(Debug, Args)]
pub struct SurgeryArgs {
    pub input: PathBuf,
    pub output: PathBuf,
    #[arg(long, value_enum, default_value = "clean")]
    pub mode: SurgeryMode,
}

#[derive(Debug, Args)]
pub struct FepArgs {
    pub checkpoint_a: PathBuf,
    pub checkpoint_b: PathBuf,
    /// Prompt file, one per line.
    #[arg(long)]
    pub prompts: Option<PathBuf>,
    /// Latent seed for checkpoint B (baseline mode when it differs from --seed).
    #[arg(long)]
    pub seed_b: Option<u64>,
}

#[derive(Debug, Args)]
pub struct SpectraArgs {
    pub checkpoint_pre: PathBuf,
    pub checkpoint_post: PathBuf,
    #[arg(long, default_value_t = camforge_core::spectra::DEFAULT_TOP_K)]
    pub k: usize,
    #[arg(long, default_value_t = camforge_core::spectra::DEFAULT_EPSILON)]
    pub eps: f64,
    #[arg(long, default_value_t = camforge_core::spectra::DEFAULT_TAU)]
    pub tau: f64,
    #[arg(long, default_value_t = 1.0)]
    pub c_strong: f64,
}

#[derive(Debug, Args)]
pub struct SvpArgs {
    /// CSV with columns metric,variant,value.
    pub scores: PathBuf,
}

pub const EXIT_USAGE: u8 = 1;
pub const EXIT_IO: u8 = 2;
pub const EXIT_NUMERICAL: u8 = 3;

fn exit_code(err: &anyhow::Error) -> u8 {
    use camforge_core::Error;
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e {
                Error::Io { .. } | Error::Format { .. } => EXIT_IO,
                Error::Numerical(_) | Error::Training { .. } => EXIT_NUMERICAL,
                Error::Domain(_) | Error::Config(_) | Error::Contract(_) => EXIT_USAGE,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return EXIT_IO;
        }
    }
    EXIT_USAGE
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    let level = if cli.global.quiet { "warn" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
