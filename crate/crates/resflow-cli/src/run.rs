//! The train / analyze / compare commands, written as an in-process API
//! so integration tests can drive them without spawning the binary.

use crate::checkpoint::{self, Checkpoint};
use crate::config::RunConfig;
use crate::csvio::{self, SummaryRow};
use crate::error::CliError;
use crate::raster;
use resflow_core::{
    accuracy, boundary_edge_count, decision_boundary, jacobian_map, make_spiral, run_training,
    trajectories, DomainBox, JacobianStats, LabeledSet, LossError,
};
use std::path::{Path, PathBuf};
use std::str::FromStr;

pub const MANIFEST_FILE: &str = "manifest.toml";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const LOG_FILE: &str = "training_log.csv";
pub const DATASET_FILE: &str = "dataset.csv";
pub const SUMMARY_FILE: &str = "summary.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Product {
    Jacobian,
    Boundary,
    Trajectories,
}

impl Product {
    pub const ALL: [Product; 3] = [Product::Jacobian, Product::Boundary, Product::Trajectories];
}

impl FromStr for Product {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "jacobian" => Ok(Product::Jacobian),
            "boundary" => Ok(Product::Boundary),
            "trajectories" => Ok(Product::Trajectories),
            other => Err(format!(
                "unknown product '{other}' (expected jacobian, boundary, trajectories)"
            )),
        }
    }
}

/// Grid/box settings shared by analyze and compare.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub nx: usize,
    pub ny: usize,
    pub domain: DomainBox,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            nx: 200,
            ny: 200,
            domain: DomainBox::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainReport {
    pub final_accuracy: f64,
    pub epochs_run: usize,
}

/// Train one variant and write the run directory: manifest, dataset,
/// per-epoch log, checkpoint. On divergence the last-good checkpoint and
/// log still land on disk before the error is returned.
pub fn cmd_train(config: &RunConfig, out_dir: &Path) -> Result<TrainReport, CliError> {
    config.validate()?;
    std::fs::create_dir_all(out_dir)?;

    std::fs::write(out_dir.join(MANIFEST_FILE), config.to_toml())?;
    let dataset = make_spiral(&config.spiral_config());
    csvio::write_dataset(&out_dir.join(DATASET_FILE), &dataset)?;

    let outcome = run_training(
        &dataset,
        &config.model_config(),
        &config.loss_config()?,
        &config.train_config(),
    )
    .map_err(|e| CliError::Config(e.to_string()))?;

    csvio::write_epoch_log(&out_dir.join(LOG_FILE), &outcome.log)?;
    let ckpt = Checkpoint {
        model: outcome.model,
        head: outcome.head,
        variant: config.variant,
    };
    checkpoint::save(&out_dir.join(CHECKPOINT_FILE), &ckpt)?;

    if let Some(abort) = outcome.abort {
        return Err(CliError::Divergence(format!(
            "aborted in epoch {} ({}); last good checkpoint written to {}",
            abort.epoch,
            abort.error,
            out_dir.display()
        )));
    }
    Ok(TrainReport {
        final_accuracy: outcome.log.last().map_or(f64::NAN, |r| r.accuracy),
        epochs_run: outcome.log.len(),
    })
}

/// Machine-parseable one-line summaries printed by `cmd_analyze`.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalyzeReport {
    pub lines: Vec<String>,
    pub jacobian: Option<JacobianStats>,
    pub boundary_edges: Option<usize>,
}

/// Evaluate the requested products of a checkpoint into `out_dir`.
pub fn cmd_analyze(
    checkpoint_path: &Path,
    out_dir: &Path,
    products: &[Product],
    grid: &GridSpec,
    dataset_path: Option<&Path>,
) -> Result<AnalyzeReport, CliError> {
    let ckpt = checkpoint::load(checkpoint_path)?;
    std::fs::create_dir_all(out_dir)?;

    let mut report = AnalyzeReport {
        lines: Vec::new(),
        jacobian: None,
        boundary_edges: None,
    };

    for product in products {
        match product {
            Product::Jacobian => {
                let (jac_grid, stats) = jacobian_map(&ckpt.model, &grid.domain, (grid.nx, grid.ny))
                    .map_err(flow_error)?;
                csvio::write_grid(&out_dir.join("jacobian.csv"), &jac_grid)?;
                raster::write_diverging_ppm(
                    &out_dir.join("jacobian.ppm"),
                    &jac_grid,
                    raster::JAC_WINDOW,
                )?;
                report.lines.push(format!(
                    "jacobian j_min={} j_max={} negative_fraction={} divergent_cells={}",
                    csvio::fmt_f64(stats.j_min),
                    csvio::fmt_f64(stats.j_max),
                    csvio::fmt_f64(stats.negative_fraction),
                    stats.divergent_cells
                ));
                report.jacobian = Some(stats);
            }
            Product::Boundary => {
                let prob_grid =
                    decision_boundary(&ckpt.model, &ckpt.head, &grid.domain, (grid.nx, grid.ny))
                        .map_err(flow_error)?;
                let edges = boundary_edge_count(&prob_grid);
                csvio::write_grid(&out_dir.join("boundary.csv"), &prob_grid)?;
                raster::write_pgm(&out_dir.join("boundary.pgm"), &prob_grid, 0.0, 1.0)?;
                report.lines.push(format!("boundary edge_count={edges}"));
                report.boundary_edges = Some(edges);
            }
            Product::Trajectories => {
                let default_path = checkpoint_path
                    .parent()
                    .unwrap_or_else(|| Path::new("."))
                    .join(DATASET_FILE);
                let data_file: PathBuf =
                    dataset_path.map(Path::to_path_buf).unwrap_or(default_path);
                let dataset = csvio::read_dataset(&data_file)?;
                let points: Vec<Vec<f64>> =
                    dataset.points.iter().map(|p| vec![p[0], p[1]]).collect();
                let trajs = trajectories(&ckpt.model, &points).map_err(flow_error)?;
                let snapshots = ckpt.model.steps() + 1;
                for step in 0..snapshots {
                    let positions: Vec<[f64; 2]> = trajs
                        .iter()
                        .map(|t| {
                            let s = &t.states()[step];
                            [s[0], s[1]]
                        })
                        .collect();
                    let name = format!("trajectory_{step:03}.csv");
                    csvio::write_snapshot(&out_dir.join(name), &positions, &dataset.labels)?;
                }
                report
                    .lines
                    .push(format!("trajectories snapshots={snapshots}"));
            }
        }
    }
    Ok(report)
}

/// Cross-variant comparison of completed runs over one dataset. Produces
/// one summary row per run directory, in argument order.
pub fn cmd_compare(run_dirs: &[PathBuf], out_dir: &Path, grid: &GridSpec) -> Result<Vec<SummaryRow>, CliError> {
    if run_dirs.is_empty() {
        return Err(CliError::Input("compare needs at least one run directory".into()));
    }
    let mut configs = Vec::new();
    for dir in run_dirs {
        if !dir.is_dir() {
            return Err(CliError::Input(format!(
                "run directory {} does not exist",
                dir.display()
            )));
        }
        let manifest = dir.join(MANIFEST_FILE);
        configs.push(RunConfig::from_file(&manifest)?);
    }
    if let Some(first) = configs.first() {
        for (dir, cfg) in run_dirs.iter().zip(&configs) {
            if cfg.dataset_signature() != first.dataset_signature() {
                return Err(CliError::Input(format!(
                    "dataset seeds differ: {} trained on data_seed={}, {} on data_seed={}; comparison would be invalid",
                    run_dirs[0].display(),
                    first.data_seed,
                    dir.display(),
                    cfg.data_seed
                )));
            }
        }
    }

    let mut rows = Vec::new();
    for (dir, cfg) in run_dirs.iter().zip(&configs) {
        let ckpt = checkpoint::load(&dir.join(CHECKPOINT_FILE))?;
        let dataset = csvio::read_dataset(&dir.join(DATASET_FILE))?;

        let acc = accuracy(&ckpt.model, &ckpt.head, &dataset).map_err(loss_error)?;
        let (_, stats) =
            jacobian_map(&ckpt.model, &grid.domain, (grid.nx, grid.ny)).map_err(flow_error)?;
        let prob_grid = decision_boundary(&ckpt.model, &ckpt.head, &grid.domain, (grid.nx, grid.ny))
            .map_err(flow_error)?;
        let edges = boundary_edge_count(&prob_grid);
        let rt = mean_roundtrip_error(&ckpt, &dataset)?;

        rows.push(SummaryRow {
            variant: cfg.variant.as_str().to_string(),
            accuracy: acc,
            j_min: stats.j_min,
            j_max: stats.j_max,
            negative_fraction: stats.negative_fraction,
            boundary_edges: edges,
            mean_roundtrip_error: rt,
        });
    }

    std::fs::create_dir_all(out_dir)?;
    csvio::write_summary(&out_dir.join(SUMMARY_FILE), &rows)?;
    Ok(rows)
}

/// Mean Euclidean round-trip displacement of the training points.
pub fn mean_roundtrip_error(ckpt: &Checkpoint, dataset: &LabeledSet) -> Result<f64, CliError> {
    let mut sum = 0.0;
    for p in &dataset.points {
        let fwd = ckpt.model.forward(&[p[0], p[1]]).map_err(flow_error)?;
        let back = ckpt.model.backward_flow(fwd.end()).map_err(flow_error)?;
        let dx = p[0] - back.end()[0];
        let dy = p[1] - back.end()[1];
        sum += (dx * dx + dy * dy).sqrt();
    }
    Ok(sum / dataset.len() as f64)
}

fn flow_error(e: resflow_core::FlowError) -> CliError {
    match e {
        resflow_core::FlowError::Divergence { .. } => CliError::Divergence(e.to_string()),
        other => CliError::Internal(other.to_string()),
    }
}

fn loss_error(e: LossError) -> CliError {
    match e {
        LossError::Flow(f) => flow_error(f),
        other => CliError::Internal(other.to_string()),
    }
}
