//! Experiment driver: configuration, reference generation, training,
//! evaluation and paired comparisons.

pub mod config;
mod experiment;

pub use config::RunConfig;
pub use experiment::{
    generate_reference, initial_condition, predict_grid, run_comparison, write_arm_outputs, Arm, ArmResult, ArmSummary,
    ComparisonReport, Experiment, SeedComparison, REPORT_HEADER,
};

use std::fs;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::network::{read_checkpoint, NetworkError};
use crate::refsolve::{mse, pointwise_error, read_grid, relative_l2, write_grid, GridError, GridSolution, SolverError};
use crate::training::TrainError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("reference grid {0} not found; run `stpinn gen-ref` with the same config first")]
    MissingReference(PathBuf),
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Network(#[from] NetworkError),
}

impl CliError {
    pub fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        CliError::Io { path: path.to_path_buf(), message: e.to_string() }
    }
}

pub fn load_config(path: &Path) -> Result<RunConfig, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    RunConfig::parse(&text)
}

pub fn save_config(path: &Path, cfg: &RunConfig) -> Result<(), CliError> {
    fs::write(path, cfg.to_text()).map_err(|e| CliError::io(path, e))
}

pub fn load_grid(path: &Path) -> Result<GridSolution, CliError> {
    let f = fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    Ok(read_grid(BufReader::new(f))?)
}

pub fn save_grid(path: &Path, grid: &GridSolution) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    let f = fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    Ok(write_grid(BufWriter::new(f), grid)?)
}

fn load_reference(cfg: &RunConfig) -> Result<GridSolution, CliError> {
    let path = cfg.reference_path();
    if !path.exists() {
        return Err(CliError::MissingReference(path));
    }
    load_grid(&path)
}

/// Solves the reference problem and writes it to the reference path.
pub fn cmd_gen_ref(cfg: &RunConfig) -> Result<(PathBuf, GridSolution), CliError> {
    let grid = generate_reference(cfg)?;
    let path = cfg.reference_path();
    save_grid(&path, &grid)?;
    Ok((path, grid))
}

/// Trains one arm with `cfg.run.seed` and writes its checkpoint and history
/// into the output directory.
pub fn cmd_train(cfg: &RunConfig, baseline: bool) -> Result<(ArmResult, PathBuf, PathBuf), CliError> {
    let exp = Experiment::new(cfg.clone(), load_reference(cfg)?)?;
    let arm = if baseline { Arm::Baseline } else { Arm::SelfTrain };
    let dumps = cfg.run.dump_events.then(|| cfg.run.out_dir.join("events"));
    let result = exp.run_arm(cfg.run.seed, arm, dumps.as_deref())?;
    let (ckpt, hist) = write_arm_outputs(&cfg.run.out_dir, arm, &exp.spec, &result)?;
    Ok((result, ckpt, hist))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub rel_l2: f64,
    pub mse: f64,
    pub error_grid: PathBuf,
}

/// Evaluates a checkpoint on every node of `grid_path` (the reference by
/// default) and writes the point-wise absolute error grid.
pub fn cmd_eval(cfg: &RunConfig, checkpoint: &Path, grid_path: Option<&Path>) -> Result<EvalReport, CliError> {
    let f = fs::File::open(checkpoint).map_err(|e| CliError::io(checkpoint, e))?;
    let (spec, params) = read_checkpoint(BufReader::new(f))?;
    if spec.input_dim != 2 || spec.output_dim != 1 {
        return Err(CliError::DimMismatch(format!(
            "checkpoint maps {} inputs to {} outputs; 1D problems need 2 -> 1",
            spec.input_dim, spec.output_dim
        )));
    }
    let reference = match grid_path {
        Some(p) => load_grid(p)?,
        None => load_reference(cfg)?,
    };
    let pred = predict_grid(&cfg.pde_problem(), &spec, &params, &reference)?;
    let err = pointwise_error(&pred, &reference)?;
    let error_grid = cfg.run.out_dir.join("pointwise_error.grid");
    save_grid(&error_grid, &err)?;
    Ok(EvalReport { rel_l2: relative_l2(&pred, &reference)?, mse: mse(&pred, &reference)?, error_grid })
}

/// Paired baseline / self-training runs for `n_seeds` consecutive seeds
/// starting at `cfg.run.seed`. Generates the reference if it is missing.
pub fn cmd_compare(cfg: &RunConfig, n_seeds: u64, progress: impl FnMut(&str)) -> Result<ComparisonReport, CliError> {
    if n_seeds == 0 {
        return Err(CliError::Config("--seeds must be at least 1".into()));
    }
    let reference = match load_reference(cfg) {
        Ok(r) => r,
        Err(CliError::MissingReference(_)) => cmd_gen_ref(cfg)?.1,
        Err(e) => return Err(e),
    };
    let exp = Experiment::new(cfg.clone(), reference)?;
    let seeds: Vec<u64> = (0..n_seeds).map(|k| cfg.run.seed + k).collect();
    run_comparison(&exp, &seeds, &cfg.run.out_dir, progress)
}
