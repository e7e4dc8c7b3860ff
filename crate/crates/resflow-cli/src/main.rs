use clap::{Args, Parser, Subcommand};
use resflow_cli::error::CliError;
use resflow_cli::run::{self, GridSpec, Product};
use resflow_cli::RunConfig;
use resflow_core::DomainBox;
use std::path::PathBuf;

/// Train, analyze, and compare flow-based spiral classifiers.
#[derive(Parser)]
#[command(name = "resflow", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one variant; writes manifest, dataset, epoch log, checkpoint.
    Train {
        /// Config file (flat TOML); defaults apply for omitted keys.
        /// Without a file, the built-in defaults run (variant=shared).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory for the run artifacts.
        #[arg(long)]
        out: PathBuf,
        /// Override the training seed from the config.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Evaluate analysis products of a trained checkpoint.
    Analyze {
        /// Path to a checkpoint written by `train`.
        checkpoint: PathBuf,
        /// Output directory; defaults to the checkpoint's directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Comma-separated subset of jacobian,boundary,trajectories.
        #[arg(long, value_delimiter = ',')]
        products: Option<Vec<String>>,
        #[command(flatten)]
        grid: GridArgs,
        /// Dataset CSV for trajectories; defaults to dataset.csv beside
        /// the checkpoint.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Summarize completed runs (one row per run) into summary.csv.
    Compare {
        /// Run directories produced by `train`, typically the four variants.
        runs: Vec<PathBuf>,
        /// Output directory for summary.csv (default: current directory).
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        grid: GridArgs,
    },
}

#[derive(Args)]
struct GridArgs {
    /// Analysis grid resolution as NX,NY.
    #[arg(long, default_value = "200,200")]
    grid: String,
    /// Analysis window as X0,X1,Y0,Y1.
    #[arg(long = "box", default_value = "-6,6,-6,6", allow_hyphen_values = true)]
    window: String,
}

impl GridArgs {
    fn parse(&self) -> Result<GridSpec, CliError> {
        let dims: Vec<usize> = self
            .grid
            .split(',')
            .map(|s| s.trim().parse::<usize>())
            .collect::<Result<_, _>>()
            .map_err(|e| CliError::Config(format!("--grid expects NX,NY: {e}")))?;
        let [nx, ny] = dims[..] else {
            return Err(CliError::Config("--grid expects exactly NX,NY".into()));
        };
        if nx < 2 || ny < 2 {
            return Err(CliError::Config("--grid needs at least 2,2".into()));
        }
        let coords: Vec<f64> = self
            .window
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| CliError::Config(format!("--box expects X0,X1,Y0,Y1: {e}")))?;
        let [x0, x1, y0, y1] = coords[..] else {
            return Err(CliError::Config("--box expects exactly X0,X1,Y0,Y1".into()));
        };
        let domain = DomainBox::new(x0, x1, y0, y1)
            .map_err(|e| CliError::Config(format!("--box: {e}")))?;
        Ok(GridSpec { nx, ny, domain })
    }
}

fn main() {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train { config, out, seed } => {
            let mut cfg = match config {
                Some(path) => RunConfig::from_file(&path)?,
                None => RunConfig::default(),
            };
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            let report = run::cmd_train(&cfg, &out)?;
            println!(
                "train variant={} epochs={} final_accuracy={}",
                cfg.variant,
                report.epochs_run,
                resflow_cli::csvio::fmt_f64(report.final_accuracy)
            );
            Ok(())
        }
        Command::Analyze {
            checkpoint,
            out,
            products,
            grid,
            data,
        } => {
            let grid = grid.parse()?;
            let products = match products {
                Some(names) => names
                    .iter()
                    .map(|s| s.parse::<Product>())
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(CliError::Config)?,
                None => Product::ALL.to_vec(),
            };
            let out_dir = out.unwrap_or_else(|| {
                checkpoint
                    .parent()
                    .map(PathBuf::from)
                    .unwrap_or_else(|| PathBuf::from("."))
            });
            let report = run::cmd_analyze(&checkpoint, &out_dir, &products, &grid, data.as_deref())?;
            for line in report.lines {
                println!("{line}");
            }
            Ok(())
        }
        Command::Compare { runs, out, grid } => {
            let grid = grid.parse()?;
            let out_dir = out.unwrap_or_else(|| PathBuf::from("."));
            let rows = run::cmd_compare(&runs, &out_dir, &grid)?;
            println!("{}", resflow_cli::csvio::SUMMARY_HEADER);
            for r in rows {
                println!(
                    "{},{},{},{},{},{},{}",
                    r.variant,
                    resflow_cli::csvio::fmt_f64(r.accuracy),
                    resflow_cli::csvio::fmt_f64(r.j_min),
                    resflow_cli::csvio::fmt_f64(r.j_max),
                    resflow_cli::csvio::fmt_f64(r.negative_fraction),
                    r.boundary_edges,
                    resflow_cli::csvio::fmt_f64(r.mean_roundtrip_error)
                );
            }
            Ok(())
        }
    }
}
