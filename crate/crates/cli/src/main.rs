use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod cmd;
mod config;
mod error;
mod manifest;

use error::{CliError, CliResult};

#[derive(Parser, Debug)]
#[command(name = "curate", version, about = "Build, rewrite, filter and pack instruction-tuning corpora")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct GlobalArgs {
    /// TOML configuration file
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Root of every random draw in the run
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads (and maximum in-flight endpoint requests)
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// JSON stub table standing in for every scorer
    #[arg(long, global = true, conflicts_with = "scorer_endpoint")]
    pub stub_scorers: Option<PathBuf>,
    /// Base URL of the scoring service
    #[arg(long, global = true)]
    pub scorer_endpoint: Option<String>,
    #[arg(long, global = true)]
    pub sts_threshold: Option<f64>,
    #[arg(long, global = true)]
    pub clipscore_threshold: Option<f64>,
    #[arg(long, global = true)]
    pub min_chars: Option<usize>,
    #[arg(long, global = true)]
    pub max_chars: Option<usize>,
    /// Packed sequence length in tokens
    #[arg(long, global = true)]
    pub budget: Option<usize>,
    /// Image cap per packed sequence
    #[arg(long, global = true)]
    pub max_images: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Map raw source records onto the unified sample schema
    Convert(cmd::convert::ConvertArgs),
    /// Check a corpus file and write a validation report
    Validate(cmd::validate::ValidateArgs),
    /// Build the (original, distorted) rewriter training set
    Distort(cmd::distort::DistortArgs),
    /// Rewrite raw annotations through the generation endpoint or its cache
    Rewrite(cmd::rewrite::RewriteArgs),
    /// Run the quality filters over a rewritten corpus
    Filter(cmd::filter::FilterArgs),
    /// Pack samples into fixed-length multi-turn training sequences
    Pack(cmd::pack::PackArgs),
    /// Emit the three-stage training plan and its data mixes
    Plan(cmd::plan::PlanArgs),
    /// Evaluation metrics
    Eval(cmd::eval::EvalArgs),
}

fn run(cli: Cli) -> CliResult<()> {
    let mut cfg = config::CurateConfig::load(cli.global.config.as_deref())?;
    cfg.apply_flags(&cli.global);
    if let Some(jobs) = cli.global.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build_global()
            .map_err(|e| CliError::invalid(format!("--jobs: {e}")))?;
    }
    let ctx = cmd::Ctx::new(cli.global, cfg);
    match cli.command {
        Command::Convert(a) => cmd::convert::run(&ctx, a),
        Command::Validate(a) => cmd::validate::run(&ctx, a),
        Command::Distort(a) => cmd::distort::run(&ctx, a),
        Command::Rewrite(a) => cmd::rewrite::run(&ctx, a),
        Command::Filter(a) => cmd::filter::run(&ctx, a),
        Command::Pack(a) => cmd::pack::run(&ctx, a),
        Command::Plan(a) => cmd::plan::run(&ctx, a),
        Command::Eval(a) => cmd::eval::run(&ctx, a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            e.exit_code()
        }
    }
}
