#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::path::PathBuf;
use std::process::ExitCode;

use auif_core::{Ablation, Error, MergeStrategy};
use clap::{Parser, Subcommand, ValueEnum};

mod commands;

#[derive(Parser, Debug)]
#[command(
    name = "auif",
    version,
    about = "Unrolled two-scale decomposition network for infrared/visible fusion"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a network on stem-paired infrared/visible directories.
    Train(TrainArgs),
    /// Fuse one infrared/visible pair with a trained checkpoint.
    Fuse(FuseArgs),
    /// Split one image into base and detail layers with a classical method.
    Decompose(DecomposeArgs),
    /// Compute EN, SD, SF, VIF, AG and SCD over a directory of fused images.
    Eval(EvalArgs),
    /// Run the finite-difference gradient suite.
    Gradcheck(GradcheckArgs),
    /// Print the number of learnable parameters.
    Params(ParamsArgs),
}

#[derive(clap::Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub data_ir: Option<PathBuf>,
    #[arg(long)]
    pub data_vis: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// One flag name, or several joined by commas.
    #[arg(long, value_parser = parse_ablation)]
    pub ablation: Option<Ablation>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum StrategyName {
    Addition,
    Average,
    L1att,
}

#[derive(clap::Args, Debug)]
pub struct FuseArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub ir: PathBuf,
    #[arg(long)]
    pub vis: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "addition")]
    pub strategy: StrategyName,
    #[arg(long)]
    pub avg_weight: Option<f64>,
    /// Write every channel of the merged base and detail maps here.
    #[arg(long)]
    pub dump_maps: Option<PathBuf>,
}

impl FuseArgs {
    fn merge_strategy(&self) -> auif_core::Result<MergeStrategy> {
        let name = match self.strategy {
            StrategyName::Addition => "addition",
            StrategyName::Average => "average",
            StrategyName::L1att => "l1att",
        };
        if self.avg_weight.is_some() && self.strategy != StrategyName::Average {
            return Err(Error::InvalidInput(
                "--avg-weight only applies to --strategy average".into(),
            ));
        }
        MergeStrategy::from_name(name, self.avg_weight)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Filter,
    Optim,
    GdBase,
    GdDetail,
}

#[derive(clap::Args, Debug)]
pub struct DecomposeArgs {
    #[arg(long, value_enum)]
    pub method: Method,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out_base: PathBuf,
    /// Saved as `0.5 + detail`.
    #[arg(long)]
    pub out_detail: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    pub theta: f64,
    #[arg(long, default_value_t = 0.01)]
    pub eta: f64,
    #[arg(long, default_value_t = 200)]
    pub iters: usize,
    #[arg(long, default_value_t = auif_core::network::OPTIM_DECOMP_LAMBDA)]
    pub lambda: f64,
}

#[derive(clap::Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub ir_dir: PathBuf,
    #[arg(long)]
    pub vis_dir: PathBuf,
    #[arg(long)]
    pub fused_dir: PathBuf,
    #[arg(long)]
    pub csv: PathBuf,
}

#[derive(clap::Args, Debug)]
pub struct GradcheckArgs {
    /// Single tolerance for every check (default: 1e-5 primitives, 1e-4 composites).
    #[arg(long)]
    pub tolerance: Option<f64>,
    #[arg(long, default_value_t = 5)]
    pub seeds: u64,
    /// Coordinates sampled per seed in the whole-network check after the first seed.
    #[arg(long, default_value_t = 500)]
    pub network_coords: usize,
    /// Seeds whose whole-network check covers every coordinate.
    #[arg(long, default_value_t = 1)]
    pub full_network_seeds: usize,
}

#[derive(clap::Args, Debug)]
pub struct ParamsArgs {
    /// Without a checkpoint, counts a default-initialized network.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

fn parse_ablation(s: &str) -> Result<Ablation, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn configure_threads() -> auif_core::Result<()> {
    let Ok(v) = std::env::var("AUIF_THREADS") else {
        return Ok(());
    };
    let n: usize = v.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| {
        Error::InvalidInput(format!(
            "AUIF_THREADS must be a positive integer, got {v:?}"
        ))
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Internal(e.to_string()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = configure_threads().and_then(|()| match cli.command {
        Command::Train(a) => commands::train(a),
        Command::Fuse(a) => commands::fuse(a),
        Command::Decompose(a) => commands::decompose(a),
        Command::Eval(a) => commands::eval(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
        Command::Params(a) => commands::params(a),
    });
    match result {
        Ok(code) => code,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error: {}: {msg}", e.kind());
            ExitCode::from(1)
        }
    }
}
