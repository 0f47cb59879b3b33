//! `cutlayer`: run split-learning privacy experiments from TOML configs.
//!
//! Exit codes: 0 success, 2 configuration error, 3 every seed failed,
//! 4 I/O error, 1 anything else.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use cutlayer_core::defense::{generate_soft_label_map, BinningRule, LabObfSecret, DEFAULT_ATTRIBUTE_MAX};
use cutlayer_core::harness::{self, ExperimentConfig, SweepAxis};
use cutlayer_core::rng::{stream, Stream};
use cutlayer_core::{Error, Result};

#[derive(Parser)]
#[command(name = "cutlayer", version, about = "Split neural network label-leakage simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every seed of an experiment and write report.json / report.csv.
    Run {
        config: PathBuf,
        /// Overrides `output_dir` from the config.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Repeat an experiment along one axis.
    Sweep {
        config: PathBuf,
        /// aux_size, soft_label_count or lambda
        #[arg(long)]
        axis: String,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Train one seed and dump cut-layer embeddings of validation rows as CSV.
    DumpEmbeddings {
        config: PathBuf,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 500)]
        limit: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Parse and check a config without running it.
    ValidateConfig { config: PathBuf },
    /// Generate a label-obfuscation secret (soft-label map plus thresholds).
    GenSoftmap {
        #[arg(long)]
        classes: usize,
        #[arg(long, default_value_t = 2)]
        bins: usize,
        /// Soft-label range `lo,hi`; defaults to `0,classes-1`.
        #[arg(long, value_delimiter = ',', num_args = 2)]
        range: Option<Vec<f64>>,
        #[arg(long, default_value_t = DEFAULT_ATTRIBUTE_MAX)]
        attribute_max: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load(path: &Path, output: Option<PathBuf>) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(dir) = output {
        cfg.output_dir = dir;
    }
    Ok(cfg)
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Run { config, output } => {
            let cfg = load(&config, output)?;
            let report = harness::run_experiment(&cfg)?;
            let (json, csv) = harness::emit_report(&report, &cfg.output_dir)?;
            for (metric, agg) in &report.aggregates {
                let std = agg.std.map(|s| format!(" ± {s:.4}")).unwrap_or_default();
                println!("{metric:<20} {:.4}{std}  (n={})", agg.mean, agg.n);
            }
            if report.failed_seeds > 0 {
                eprintln!("{} of {} seeds failed", report.failed_seeds, report.seeds.len());
            }
            println!("wrote {} and {}", json.display(), csv.display());
        }
        Command::Sweep { config, axis, values, output } => {
            let cfg = load(&config, output)?;
            let axis: SweepAxis = axis.parse()?;
            let report = harness::sweep(&cfg, axis, &values)?;
            for p in &report.points {
                let summary: Vec<String> =
                    p.report.aggregates.iter().map(|(k, a)| format!("{k}={:.4}", a.mean)).collect();
                println!("{}={}  {}", axis.as_str(), p.value, summary.join(" "));
            }
            let (json, csv) = harness::emit_sweep(&report, &cfg.output_dir)?;
            println!("wrote {} and {}", json.display(), csv.display());
        }
        Command::DumpEmbeddings { config, seed, limit, out } => {
            let cfg = load(&config, None)?;
            let rows = harness::dump_embeddings(&cfg, seed, limit, &out)?;
            println!("wrote {rows} rows to {}", out.display());
        }
        Command::ValidateConfig { config } => {
            let cfg = load(&config, None)?;
            println!("ok: {} seed(s), config hash {}", cfg.seeds.len(), cfg.hash());
        }
        Command::GenSoftmap { classes, bins, range, attribute_max, seed, out } => {
            let range = match range.as_deref() {
                Some([lo, hi]) => (*lo, *hi),
                _ => (0.0, classes.saturating_sub(1) as f64),
            };
            let map = generate_soft_label_map(classes, bins, range, &mut stream(seed, Stream::SoftLabels))
                .map_err(|e| Error::Config(e.to_string()))?;
            let rule = BinningRule::quantile(attribute_max, bins).map_err(|e| Error::Config(e.to_string()))?;
            LabObfSecret::new(map, rule)?.save(&out)?;
            println!("wrote {}", out.display());
        }
    }
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Parse { .. } => 2,
        Error::AllSeedsFailed { .. } => 3,
        Error::Io(_) => 4,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
