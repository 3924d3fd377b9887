use std::path::PathBuf;
use std::process::ExitCode;

use ckpd_core::{Error, ExperimentConfig, Strategy};
use clap::{Args, Parser, Subcommand};

mod commands;

#[derive(Debug, Parser)]
#[command(name = "ckpd", version, about = "Covariance-aware adapter decomposition for few-shot class-incremental learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Overrides applied on top of the JSON config.
#[derive(Debug, Clone, Args)]
struct Common {
    /// JSON config; missing keys take their defaults
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (defaults to `output_dir` from the config)
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    strategy: Option<Strategy>,
    /// Adapter rank r
    #[arg(long)]
    rank: Option<usize>,
    /// Number of layers adapted per session
    #[arg(long)]
    k: Option<usize>,
}

impl Common {
    fn resolve(&self) -> ckpd_core::Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(o) = &self.out {
            cfg.output_dir = o.clone();
        }
        if let Some(s) = self.strategy {
            cfg.strategy = s;
        }
        if let Some(r) = self.rank {
            cfg.rank_r = r;
        }
        if let Some(k) = self.k {
            cfg.k_layers = k;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write the synthetic train/test splits of every session
    GenData {
        #[command(flatten)]
        common: Common,
    },
    /// Run one strategy over all sessions
    Run {
        #[command(flatten)]
        common: Common,
    },
    /// Split a single weight matrix against the covariance of some activations
    Decompose {
        /// CKPD-MAT weight, d_out × d_in
        #[arg(long)]
        weight: PathBuf,
        /// CKPD-MAT activations, one sample per row (M × d_in)
        #[arg(long)]
        activations: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Per-layer ASR of a checkpoint against an exemplar buffer
    AsrReport {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        buffer: PathBuf,
        /// Session id recorded in the report
        #[arg(long, default_value_t = 0)]
        session: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Run a strategy and probe adapter dropout before the merge of one session
    ProbeDropout {
        #[arg(long, default_value_t = 0.7)]
        rate: f64,
        #[arg(long, default_value_t = 1)]
        session: usize,
        /// Seed of the dropout masks (defaults to the run seed)
        #[arg(long)]
        mask_seed: Option<u64>,
        #[command(flatten)]
        common: Common,
    },
    /// Recompute AVG and PD from a metrics CSV
    Metrics {
        #[arg(long)]
        input: PathBuf,
    },
}

fn exit_code(e: &Error) -> u8 {
    if e.is_numerical() {
        3
    } else {
        2
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("CKPD_LOG", "error")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData { common } => common.resolve().and_then(|c| commands::gen_data(&c)),
        Command::Run { common } => common.resolve().and_then(|c| commands::run(&c)),
        Command::Decompose { weight, activations, common } => common
            .resolve()
            .and_then(|c| commands::decompose(&c, &weight, &activations)),
        Command::AsrReport { checkpoint, buffer, session, common } => common
            .resolve()
            .and_then(|c| commands::asr_report(&c, &checkpoint, &buffer, session)),
        Command::ProbeDropout { rate, session, mask_seed, common } => common
            .resolve()
            .and_then(|c| commands::probe_dropout(&c, rate, session, mask_seed)),
        Command::Metrics { input } => commands::metrics(&input),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
