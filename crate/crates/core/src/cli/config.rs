//! Run configuration: flat `key = value` lines under `[section]` headers.
//!
//! `#` starts a comment. Keys left out take the defaults of the selected
//! problem, so `[problem]` / `name` is read before anything else.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::PathBuf;

use crate::network::MlpSpec;
use crate::pde::{BoundaryKind, Equation, PdeProblem, ProblemName, Sorption};
use crate::refsolve::{GridDims, SolverOptions};
use crate::selftrain::SelfTrainConfig;
use crate::training::{LossWeights, LrSchedule, TrainConfig, DEFAULT_CHUNK};

use super::CliError;

#[derive(Debug, Clone, PartialEq)]
pub struct ProblemConfig {
    pub name: ProblemName,
    pub nu: f64,
    pub rho: f64,
    pub diffusivity: f64,
    pub sorption: Sorption,
    pub x_lo: f64,
    pub x_hi: f64,
    pub t_hi: f64,
    pub periodic_derivative: bool,
    pub input_scale: [f64; 2],
    /// Seed of the initial-condition draw; shared by every training seed.
    pub ic_seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridConfig {
    pub nx: usize,
    pub nt: usize,
    pub refine: usize,
    pub cfl: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkConfig {
    pub hidden_layers: usize,
    pub hidden_width: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointsConfig {
    pub n_boundary: usize,
    pub n_initial: usize,
    pub n_data: usize,
    pub pool_size: usize,
    pub batch_size: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerConfig {
    pub adam_iters: usize,
    pub lr: LrSchedule,
    pub lbfgs_iters: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSection {
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Reference grid; `<out_dir>/reference.grid` when unset.
    pub reference: Option<PathBuf>,
    pub record_wall_clock: bool,
    /// Write a checkpoint and pseudo-set CSV at every generation event.
    pub dump_events: bool,
    pub chunk: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub problem: ProblemConfig,
    pub grid: GridConfig,
    pub network: NetworkConfig,
    pub points: PointsConfig,
    pub optimizer: OptimizerConfig,
    pub loss: LossWeights,
    pub selftrain: SelfTrainConfig,
    pub run: RunSection,
}

impl RunConfig {
    /// Full-scale defaults for `name`.
    pub fn defaults(name: ProblemName) -> Self {
        let (nu, rho, t_hi, nt, refine, lbfgs, scale) = match name {
            ProblemName::Burgers => (0.01, 1.0, 2.0, 256, 4, 0, [1.0, 1.0]),
            ProblemName::DiffReact => (0.5, 1.0, 1.0, 256, 1, 5000, [1.0, 1.0]),
            ProblemName::DiffSorb => (0.01, 1.0, 500.0, 101, 1, 0, [1.0 / 500.0, 1.0]),
        };
        Self {
            problem: ProblemConfig {
                name,
                nu,
                rho,
                diffusivity: 5e-4,
                sorption: Sorption::default(),
                x_lo: 0.0,
                x_hi: 1.0,
                t_hi,
                periodic_derivative: false,
                input_scale: scale,
                ic_seed: 0,
            },
            grid: GridConfig { nx: 1024, nt, refine, cfl: 0.9 },
            network: NetworkConfig { hidden_layers: 4, hidden_width: 32 },
            points: PointsConfig { n_boundary: 512, n_initial: 1024, n_data: 1000, pool_size: 100_000, batch_size: 20_000 },
            optimizer: OptimizerConfig { adam_iters: 20_000, lr: LrSchedule::constant(1e-3), lbfgs_iters: lbfgs },
            loss: LossWeights::default(),
            selftrain: SelfTrainConfig { enabled: true, period: 100, max_rate: 0.2, stable: 10, warmup: 0, exclude_pseudo_from_residual: false },
            run: RunSection {
                seed: 0,
                out_dir: PathBuf::from("out"),
                reference: None,
                record_wall_clock: true,
                dump_events: false,
                chunk: DEFAULT_CHUNK,
            },
        }
    }

    pub fn pde_problem(&self) -> PdeProblem {
        let p = &self.problem;
        let mut problem = match p.name {
            ProblemName::Burgers => PdeProblem::burgers(p.nu),
            ProblemName::DiffReact => PdeProblem::diff_react(p.nu, p.rho),
            ProblemName::DiffSorb => {
                let mut d = PdeProblem::diff_sorb(p.diffusivity);
                d.equation = Equation::DiffSorb { diffusivity: p.diffusivity, sorption: p.sorption };
                d.boundary = BoundaryKind::DirichletRobin { left_value: 1.0, robin_coeff: p.diffusivity };
                d
            }
        };
        problem.x_lo = p.x_lo;
        problem.x_hi = p.x_hi;
        problem.t_hi = p.t_hi;
        problem.periodic_derivative = p.periodic_derivative;
        problem.input_scale = p.input_scale;
        problem
    }

    pub fn grid_dims(&self) -> GridDims {
        GridDims { nx: self.grid.nx, nt: self.grid.nt, x_lo: self.problem.x_lo, x_hi: self.problem.x_hi, t_hi: self.problem.t_hi }
    }

    pub fn solver_options(&self) -> SolverOptions {
        SolverOptions { refine: self.grid.refine, cfl: self.grid.cfl, ..SolverOptions::default() }
    }

    pub fn mlp_spec(&self) -> MlpSpec {
        MlpSpec::new(2, self.network.hidden_layers, self.network.hidden_width, 1).expect("validated network shape")
    }

    pub fn reference_path(&self) -> PathBuf {
        self.run.reference.clone().unwrap_or_else(|| self.run.out_dir.join("reference.grid"))
    }

    /// Training settings for seed `seed`; `baseline` turns pseudo-labeling off.
    pub fn train_config(&self, seed: u64, baseline: bool) -> TrainConfig {
        TrainConfig {
            adam_iters: self.optimizer.adam_iters,
            lr: self.optimizer.lr.clone(),
            lbfgs_iters: self.optimizer.lbfgs_iters,
            batch_size: self.points.batch_size,
            weights: self.loss,
            selftrain: SelfTrainConfig { enabled: self.selftrain.enabled && !baseline, ..self.selftrain },
            batch_seed: super::experiment::batch_seed(seed),
            record_wall_clock: self.run.record_wall_clock,
            chunk: self.run.chunk,
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        let p = &self.problem;
        if let Err(m) = self.pde_problem().validate() {
            return bad(format!("[problem] {m}"));
        }
        let positive = [("nu", p.nu), ("diffusivity", p.diffusivity)];
        for (k, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("[problem] {k} must be positive, got {v}"));
            }
        }
        if !p.rho.is_finite() {
            return bad(format!("[problem] rho must be finite, got {}", p.rho));
        }
        let s = &p.sorption;
        if !(s.porosity > 0.0 && s.porosity < 1.0) || !(s.bulk_density > 0.0) || !(s.freundlich_k >= 0.0) || !s.freundlich_n.is_finite() {
            return bad("[problem] sorption needs 0 < porosity < 1, bulk_density > 0, freundlich_k >= 0".into());
        }
        if self.grid.nx < 16 || self.grid.nt < 2 {
            return bad(format!("[grid] need nx >= 16 and nt >= 2, got nx={} nt={}", self.grid.nx, self.grid.nt));
        }
        if self.grid.refine == 0 || !(self.grid.cfl > 0.0 && self.grid.cfl <= 1.0) {
            return bad("[grid] refine must be >= 1 and cfl in (0, 1]".into());
        }
        if self.network.hidden_layers == 0 || self.network.hidden_width == 0 {
            return bad("[network] hidden_layers and hidden_width must be >= 1".into());
        }
        let pts = &self.points;
        if pts.pool_size == 0 || pts.batch_size == 0 {
            return bad("[points] pool_size and batch_size must be >= 1".into());
        }
        if pts.batch_size > pts.pool_size {
            return bad(format!("[points] batch_size ({}) exceeds pool_size ({})", pts.batch_size, pts.pool_size));
        }
        if pts.n_initial > self.grid.nx {
            return bad(format!("[points] n_initial ({}) exceeds the grid's nx ({})", pts.n_initial, self.grid.nx));
        }
        if pts.n_data > self.grid.nx * (self.grid.nt - 1) {
            return bad(format!("[points] n_data ({}) exceeds the grid's interior nodes", pts.n_data));
        }
        if let Err(m) = self.optimizer.lr.validate() {
            return bad(format!("[optimizer] {m}"));
        }
        if let Err(m) = self.loss.validate() {
            return bad(format!("[loss] {m}"));
        }
        if let Err(m) = self.selftrain.validate() {
            return bad(format!("[selftrain] {m}"));
        }
        if self.run.chunk == 0 {
            return bad("[run] chunk must be >= 1".into());
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let p = &self.problem;
        let so = &p.sorption;
        let f = |v: f64| format!("{v:?}");
        let sections: Vec<(&str, Vec<(&str, String)>)> = vec![
            (
                "problem",
                vec![
                    ("name", p.name.as_str().into()),
                    ("nu", f(p.nu)),
                    ("rho", f(p.rho)),
                    ("diffusivity", f(p.diffusivity)),
                    ("porosity", f(so.porosity)),
                    ("bulk_density", f(so.bulk_density)),
                    ("freundlich_k", f(so.freundlich_k)),
                    ("freundlich_n", f(so.freundlich_n)),
                    ("x_lo", f(p.x_lo)),
                    ("x_hi", f(p.x_hi)),
                    ("t_hi", f(p.t_hi)),
                    ("periodic_derivative", p.periodic_derivative.to_string()),
                    ("input_scale_t", f(p.input_scale[0])),
                    ("input_scale_x", f(p.input_scale[1])),
                    ("ic_seed", p.ic_seed.to_string()),
                ],
            ),
            (
                "grid",
                vec![
                    ("nx", self.grid.nx.to_string()),
                    ("nt", self.grid.nt.to_string()),
                    ("refine", self.grid.refine.to_string()),
                    ("cfl", f(self.grid.cfl)),
                ],
            ),
            (
                "network",
                vec![
                    ("hidden_layers", self.network.hidden_layers.to_string()),
                    ("hidden_width", self.network.hidden_width.to_string()),
                ],
            ),
            (
                "points",
                vec![
                    ("n_boundary", self.points.n_boundary.to_string()),
                    ("n_initial", self.points.n_initial.to_string()),
                    ("n_data", self.points.n_data.to_string()),
                    ("pool_size", self.points.pool_size.to_string()),
                    ("batch_size", self.points.batch_size.to_string()),
                ],
            ),
            (
                "optimizer",
                vec![
                    ("adam_iters", self.optimizer.adam_iters.to_string()),
                    ("lr", format_lr(&self.optimizer.lr)),
                    ("lbfgs_iters", self.optimizer.lbfgs_iters.to_string()),
                ],
            ),
            ("loss", vec![("w_f", f(self.loss.w_f)), ("w_d", f(self.loss.w_d)), ("w_p", f(self.loss.w_p))]),
            (
                "selftrain",
                vec![
                    ("enabled", self.selftrain.enabled.to_string()),
                    ("period", self.selftrain.period.to_string()),
                    ("max_rate", f(self.selftrain.max_rate)),
                    ("stable", self.selftrain.stable.to_string()),
                    ("warmup", self.selftrain.warmup.to_string()),
                    ("exclude_pseudo_from_residual", self.selftrain.exclude_pseudo_from_residual.to_string()),
                ],
            ),
            (
                "run",
                vec![
                    ("seed", self.run.seed.to_string()),
                    ("out_dir", self.run.out_dir.display().to_string()),
                    ("reference", self.run.reference.as_ref().map(|r| r.display().to_string()).unwrap_or_default()),
                    ("record_wall_clock", self.run.record_wall_clock.to_string()),
                    ("dump_events", self.run.dump_events.to_string()),
                    ("chunk", self.run.chunk.to_string()),
                ],
            ),
        ];
        for (i, (name, kv)) in sections.iter().enumerate() {
            if i > 0 {
                s.push('\n');
            }
            let _ = writeln!(s, "[{name}]");
            for (k, v) in kv {
                let _ = writeln!(s, "{k} = {v}");
            }
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut entries = Vec::new();
        let mut section = String::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(h) = line.strip_prefix('[') {
                section = h
                    .strip_suffix(']')
                    .ok_or_else(|| CliError::Config(format!("line {}: unterminated section header", n + 1)))?
                    .trim()
                    .to_string();
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("line {}: expected `key = value`, got {line:?}", n + 1)))?;
            if section.is_empty() {
                return Err(CliError::Config(format!("line {}: key {:?} appears before any [section]", n + 1, k.trim())));
            }
            entries.push((n + 1, section.clone(), k.trim().to_string(), v.trim().to_string()));
        }
        let name = entries
            .iter()
            .rev()
            .find(|(_, s, k, _)| s == "problem" && k == "name")
            .map(|(n, _, _, v)| {
                ProblemName::parse(v).ok_or_else(|| {
                    CliError::Config(format!("line {n}: unknown problem {v:?} (expected burgers, diff_react or diff_sorb)"))
                })
            })
            .transpose()?
            .unwrap_or(ProblemName::Burgers);
        let mut cfg = Self::defaults(name);
        let mut seen = BTreeSet::new();
        for (n, section, key, value) in &entries {
            if !seen.insert((section.clone(), key.clone())) {
                return Err(CliError::Config(format!("line {n}: duplicate key [{section}] {key}")));
            }
            cfg.set(section, key, value).map_err(|m| CliError::Config(format!("line {n}: [{section}] {key}: {m}")))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn set(&mut self, section: &str, key: &str, v: &str) -> Result<(), String> {
        fn num<T: std::str::FromStr>(v: &str) -> Result<T, String> {
            v.parse().map_err(|_| format!("cannot parse {v:?}"))
        }
        fn flag(v: &str) -> Result<bool, String> {
            match v {
                "true" => Ok(true),
                "false" => Ok(false),
                _ => Err(format!("expected true or false, got {v:?}")),
            }
        }
        let p = &mut self.problem;
        match (section, key) {
            ("problem", "name") => {}
            ("problem", "nu") => p.nu = num(v)?,
            ("problem", "rho") => p.rho = num(v)?,
            ("problem", "diffusivity") => p.diffusivity = num(v)?,
            ("problem", "porosity") => p.sorption.porosity = num(v)?,
            ("problem", "bulk_density") => p.sorption.bulk_density = num(v)?,
            ("problem", "freundlich_k") => p.sorption.freundlich_k = num(v)?,
            ("problem", "freundlich_n") => p.sorption.freundlich_n = num(v)?,
            ("problem", "x_lo") => p.x_lo = num(v)?,
            ("problem", "x_hi") => p.x_hi = num(v)?,
            ("problem", "t_hi") => p.t_hi = num(v)?,
            ("problem", "periodic_derivative") => p.periodic_derivative = flag(v)?,
            ("problem", "input_scale_t") => p.input_scale[0] = num(v)?,
            ("problem", "input_scale_x") => p.input_scale[1] = num(v)?,
            ("problem", "ic_seed") => p.ic_seed = num(v)?,
            ("grid", "nx") => self.grid.nx = num(v)?,
            ("grid", "nt") => self.grid.nt = num(v)?,
            ("grid", "refine") => self.grid.refine = num(v)?,
            ("grid", "cfl") => self.grid.cfl = num(v)?,
            ("network", "hidden_layers") => self.network.hidden_layers = num(v)?,
            ("network", "hidden_width") => self.network.hidden_width = num(v)?,
            ("points", "n_boundary") => self.points.n_boundary = num(v)?,
            ("points", "n_initial") => self.points.n_initial = num(v)?,
            ("points", "n_data") => self.points.n_data = num(v)?,
            ("points", "pool_size") => self.points.pool_size = num(v)?,
            ("points", "batch_size") => self.points.batch_size = num(v)?,
            ("optimizer", "adam_iters") => self.optimizer.adam_iters = num(v)?,
            ("optimizer", "lr") => self.optimizer.lr = parse_lr(v)?,
            ("optimizer", "lbfgs_iters") => self.optimizer.lbfgs_iters = num(v)?,
            ("loss", "w_f") => self.loss.w_f = num(v)?,
            ("loss", "w_d") => self.loss.w_d = num(v)?,
            ("loss", "w_p") => self.loss.w_p = num(v)?,
            ("selftrain", "enabled") => self.selftrain.enabled = flag(v)?,
            ("selftrain", "period") => self.selftrain.period = num(v)?,
            ("selftrain", "max_rate") => self.selftrain.max_rate = num(v)?,
            ("selftrain", "stable") => self.selftrain.stable = num(v)?,
            ("selftrain", "warmup") => self.selftrain.warmup = num(v)?,
            ("selftrain", "exclude_pseudo_from_residual") => self.selftrain.exclude_pseudo_from_residual = flag(v)?,
            ("run", "seed") => self.run.seed = num(v)?,
            ("run", "out_dir") => self.run.out_dir = PathBuf::from(v),
            ("run", "reference") => self.run.reference = if v.is_empty() { None } else { Some(PathBuf::from(v)) },
            ("run", "record_wall_clock") => self.run.record_wall_clock = flag(v)?,
            ("run", "dump_events") => self.run.dump_events = flag(v)?,
            ("run", "chunk") => self.run.chunk = num(v)?,
            _ => return Err("unknown key".into()),
        }
        Ok(())
    }
}

/// A single rate, or `start:lr` stages separated by commas.
fn parse_lr(v: &str) -> Result<LrSchedule, String> {
    if !v.contains(':') {
        let lr: f64 = v.parse().map_err(|_| format!("cannot parse learning rate {v:?}"))?;
        return Ok(LrSchedule::constant(lr));
    }
    let stages = v
        .split(',')
        .map(|s| {
            let (a, b) = s.trim().split_once(':').ok_or_else(|| format!("expected start:lr, got {s:?}"))?;
            let start = a.trim().parse().map_err(|_| format!("bad stage start {a:?}"))?;
            let lr = b.trim().parse().map_err(|_| format!("bad stage rate {b:?}"))?;
            Ok((start, lr))
        })
        .collect::<Result<Vec<_>, String>>()?;
    let s = LrSchedule { stages };
    s.validate()?;
    Ok(s)
}

fn format_lr(lr: &LrSchedule) -> String {
    if lr.stages.len() == 1 && lr.stages[0].0 == 0 {
        return format!("{:?}", lr.stages[0].1);
    }
    lr.stages.iter().map(|(s, r)| format!("{s}:{r:?}")).collect::<Vec<_>>().join(",")
}
