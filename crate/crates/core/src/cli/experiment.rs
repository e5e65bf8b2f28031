use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::network::{forward_batch, init_params, write_checkpoint, MlpSpec, ParamVector};
use crate::pde::{boundary_terms, DataTerm, InitialCondition, PdeProblem, ProblemName, SinusoidIc};
use crate::refsolve::{mse, relative_l2, solve, GridSolution};
use crate::selftrain::write_pseudo_dump;
use crate::training::{train, write_history, EventInfo, TrainOutcome, TrainSetup};

use super::{CliError, RunConfig};

/// Points per forward pass when predicting a full grid.
const PREDICT_CHUNK: usize = 8192;

const POOL_STREAM: u64 = 1;
const DATA_STREAM: u64 = 2;

pub(crate) fn batch_seed(seed: u64) -> u64 {
    seed ^ 0x9E37_79B9_7F4A_7C15
}

fn stream(seed: u64, k: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(k);
    r
}

/// The initial condition drawn from `ic_seed`.
pub fn initial_condition(cfg: &RunConfig) -> InitialCondition {
    let p = &cfg.problem;
    let mut rng = ChaCha8Rng::seed_from_u64(p.ic_seed);
    match p.name {
        ProblemName::Burgers | ProblemName::DiffReact => InitialCondition::Sinusoid(SinusoidIc::sample(&mut rng, p.x_hi - p.x_lo)),
        ProblemName::DiffSorb => InitialCondition::uniform_cells(&mut rng, cfg.grid.nx, p.x_lo, p.x_hi),
    }
}

pub fn generate_reference(cfg: &RunConfig) -> Result<GridSolution, CliError> {
    cfg.validate()?;
    let ic = initial_condition(cfg);
    Ok(solve(&cfg.pde_problem().equation, &|x| ic.eval(x), cfg.grid_dims(), cfg.solver_options())?)
}

#[derive(Debug, Clone)]
pub struct ArmResult {
    pub outcome: TrainOutcome,
    pub rel_l2: f64,
    pub mse: f64,
    pub runtime_ms: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arm {
    Baseline,
    SelfTrain,
}

impl Arm {
    pub fn as_str(&self) -> &'static str {
        match self {
            Arm::Baseline => "baseline",
            Arm::SelfTrain => "selftrain",
        }
    }
}

/// A configured problem with its reference solution.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: RunConfig,
    pub problem: PdeProblem,
    pub spec: MlpSpec,
    pub reference: GridSolution,
}

impl Experiment {
    pub fn new(config: RunConfig, reference: GridSolution) -> Result<Self, CliError> {
        config.validate()?;
        if reference.dims != config.grid_dims() {
            return Err(CliError::DimMismatch(format!(
                "reference grid {:?} does not match the configured grid {:?}",
                reference.dims,
                config.grid_dims()
            )));
        }
        Ok(Self { problem: config.pde_problem(), spec: config.mlp_spec(), config, reference })
    }

    /// Initial labels from the first grid row, intra-domain labels from the
    /// remaining nodes, then boundary terms.
    pub fn data_terms(&self, seed: u64) -> Vec<DataTerm> {
        let mut rng = stream(seed, DATA_STREAM);
        let d = self.reference.dims;
        let pts = &self.config.points;
        let initial: Vec<usize> = if pts.n_initial == d.nx {
            (0..d.nx).collect()
        } else {
            let mut v = rand::seq::index::sample(&mut rng, d.nx, pts.n_initial).into_vec();
            v.sort_unstable();
            v
        };
        let mut terms: Vec<DataTerm> =
            initial.iter().map(|&i| DataTerm::Value { t: 0.0, x: d.x_coord(i), label: self.reference.at(0, i) }).collect();
        let mut interior = rand::seq::index::sample(&mut rng, d.nx * (d.nt - 1), pts.n_data).into_vec();
        interior.sort_unstable();
        terms.extend(interior.iter().map(|&k| {
            let (j, i) = (1 + k / d.nx, k % d.nx);
            DataTerm::Value { t: d.t_coord(j), x: d.x_coord(i), label: self.reference.at(j, i) }
        }));
        terms.extend(boundary_terms(&self.problem, pts.n_boundary, &mut rng));
        terms
    }

    /// Candidate pool drawn uniformly over the space-time domain.
    pub fn pool(&self, seed: u64) -> Vec<[f64; 2]> {
        use rand::Rng;
        let mut rng = stream(seed, POOL_STREAM);
        let p = &self.problem;
        (0..self.config.points.pool_size).map(|_| [rng.gen_range(0.0..=p.t_hi), rng.gen_range(p.x_lo..=p.x_hi)]).collect()
    }

    pub fn predict_grid(&self, params: &ParamVector) -> Result<GridSolution, CliError> {
        predict_grid(&self.problem, &self.spec, params, &self.reference)
    }

    /// Trains one arm. With `dump_dir` set, every generation event writes
    /// `<arm>_event_<iter>.ckpt` and `<arm>_event_<iter>.csv` there.
    pub fn run_arm(&self, seed: u64, arm: Arm, dump_dir: Option<&Path>) -> Result<ArmResult, CliError> {
        let started = Instant::now();
        let data = self.data_terms(seed);
        let pool = self.pool(seed);
        let setup = TrainSetup { problem: &self.problem, spec: &self.spec, data: &data, pool: &pool };
        let cfg = self.config.train_config(seed, arm == Arm::Baseline);
        if let Some(dir) = dump_dir {
            fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        }
        let spec = self.spec;
        let mut hook = |e: &EventInfo<'_>| -> Result<(), String> {
            let Some(dir) = dump_dir else { return Ok(()) };
            let stem = format!("{}_event_{:06}", arm.as_str(), e.iter);
            let ckpt = fs::File::create(dir.join(format!("{stem}.ckpt"))).map_err(|e| e.to_string())?;
            write_checkpoint(BufWriter::new(ckpt), &spec, e.params).map_err(|e| e.to_string())?;
            let csv = fs::File::create(dir.join(format!("{stem}.csv"))).map_err(|e| e.to_string())?;
            write_pseudo_dump(BufWriter::new(csv), e.iter, e.pseudo, e.pool).map_err(|e| e.to_string())
        };
        let outcome = train(&setup, init_params(&self.spec, seed), &cfg, &mut hook)?;
        let pred = self.predict_grid(&outcome.params)?;
        let rel = relative_l2(&pred, &self.reference)?;
        let err = mse(&pred, &self.reference)?;
        let runtime_ms = if self.config.run.record_wall_clock { started.elapsed().as_millis() as u64 } else { 0 };
        Ok(ArmResult { outcome, rel_l2: rel, mse: err, runtime_ms })
    }
}

pub fn predict_grid(
    problem: &PdeProblem,
    spec: &MlpSpec,
    params: &ParamVector,
    like: &GridSolution,
) -> Result<GridSolution, CliError> {
    let nodes = like.dims.nodes();
    let mut values = Vec::with_capacity(nodes.len());
    for chunk in nodes.chunks(PREDICT_CHUNK) {
        let inputs: Vec<f64> = chunk.iter().flat_map(|n| problem.network_input(n[0], n[1])).collect();
        values.extend(forward_batch(params, spec, &inputs)?.into_iter().step_by(spec.output_dim));
    }
    Ok(GridSolution::new(like.dims, values)?)
}

/// Writes `<dir>/<arm>.ckpt` and `<dir>/<arm>_history.csv`.
pub fn write_arm_outputs(dir: &Path, arm: Arm, spec: &MlpSpec, result: &ArmResult) -> Result<(PathBuf, PathBuf), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let ckpt = dir.join(format!("{}.ckpt", arm.as_str()));
    let f = fs::File::create(&ckpt).map_err(|e| CliError::io(&ckpt, e))?;
    write_checkpoint(BufWriter::new(f), spec, &result.outcome.params)?;
    let hist = dir.join(format!("{}_history.csv", arm.as_str()));
    let f = fs::File::create(&hist).map_err(|e| CliError::io(&hist, e))?;
    write_history(BufWriter::new(f), &result.outcome.history).map_err(|e| CliError::io(&hist, e))?;
    Ok((ckpt, hist))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArmSummary {
    pub rel_l2: f64,
    pub mse: f64,
    pub runtime_ms: u64,
}

impl From<&ArmResult> for ArmSummary {
    fn from(r: &ArmResult) -> Self {
        Self { rel_l2: r.rel_l2, mse: r.mse, runtime_ms: r.runtime_ms }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedComparison {
    pub seed: u64,
    pub baseline: ArmSummary,
    pub selftrain: ArmSummary,
}

impl SeedComparison {
    /// Baseline error over self-training error.
    pub fn improvement(&self) -> f64 {
        self.baseline.rel_l2 / self.selftrain.rel_l2
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonReport {
    pub rows: Vec<SeedComparison>,
}

pub const REPORT_HEADER: &str = "seed,arm,rel_l2,mse,improvement,runtime_ms";

impl ComparisonReport {
    pub fn geomean_improvement(&self) -> f64 {
        let n = self.rows.len() as f64;
        (self.rows.iter().map(|r| r.improvement().ln()).sum::<f64>() / n).exp()
    }

    /// Seeds where self-training is at least as accurate as the baseline.
    pub fn wins(&self) -> usize {
        self.rows.iter().filter(|r| r.selftrain.rel_l2 <= r.baseline.rel_l2).count()
    }

    pub fn total_runtime_ms(&self) -> u64 {
        self.rows.iter().map(|r| r.baseline.runtime_ms + r.selftrain.runtime_ms).sum()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{REPORT_HEADER}")?;
        for r in &self.rows {
            let b = &r.baseline;
            let s = &r.selftrain;
            writeln!(w, "{},baseline,{:e},{:e},,{}", r.seed, b.rel_l2, b.mse, b.runtime_ms)?;
            writeln!(w, "{},selftrain,{:e},{:e},{:e},{}", r.seed, s.rel_l2, s.mse, r.improvement(), s.runtime_ms)?;
        }
        writeln!(w, "summary,geomean,,,{:e},{}", self.geomean_improvement(), self.total_runtime_ms())?;
        w.flush()
    }

    pub fn table(&self) -> String {
        let mut s = format!("{:>6}  {:>12}  {:>12}  {:>8}\n", "seed", "baseline", "selftrain", "factor");
        for r in &self.rows {
            s += &format!("{:>6}  {:>12.4e}  {:>12.4e}  {:>8.3}\n", r.seed, r.baseline.rel_l2, r.selftrain.rel_l2, r.improvement());
        }
        s += &format!("geometric-mean improvement: {:.4}  (self-training wins {}/{})\n", self.geomean_improvement(), self.wins(), self.rows.len());
        s
    }
}

/// Trains both arms for every seed. Outputs for seed `s` go to
/// `<out>/seed_<s>/`; event dumps, when enabled, to `<out>/seed_<s>/events/`.
pub fn run_comparison(
    exp: &Experiment,
    seeds: &[u64],
    out: &Path,
    mut progress: impl FnMut(&str),
) -> Result<ComparisonReport, CliError> {
    let mut rows = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let dir = out.join(format!("seed_{seed}"));
        let dumps = exp.config.run.dump_events.then(|| dir.join("events"));
        let mut arm_result = |arm: Arm| -> Result<ArmSummary, CliError> {
            let r = exp.run_arm(seed, arm, dumps.as_deref())?;
            write_arm_outputs(&dir, arm, &exp.spec, &r)?;
            progress(&format!("seed {seed} {:<9} relative L2 {:.4e}", arm.as_str(), r.rel_l2));
            Ok(ArmSummary::from(&r))
        };
        let baseline = arm_result(Arm::Baseline)?;
        let selftrain = arm_result(Arm::SelfTrain)?;
        rows.push(SeedComparison { seed, baseline, selftrain });
    }
    let report = ComparisonReport { rows };
    fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    let path = out.join("report.csv");
    let f = fs::File::create(&path).map_err(|e| CliError::io(&path, e))?;
    report.write_csv(BufWriter::new(f)).map_err(|e| CliError::io(&path, e))?;
    Ok(report)
}
