//! Loss assembly, optimizers and the training loop.

mod loss;
mod optim;
mod run;

pub use loss::{data_sum, loss_d, loss_f, loss_p, residual_sum, total_loss, Batch, Component, LossModel, LossValue, DEFAULT_CHUNK};
pub use optim::{lbfgs_minimize, Adam, Evaluation, LbfgsOptions, LbfgsResult, LbfgsStop};
pub use run::{sample_batch, train, EventInfo, TrainOutcome, TrainSetup};

use std::io::Write;

use thiserror::Error;

use crate::autodiff::AutodiffError;
use crate::network::NetworkError;
use crate::selftrain::SelfTrainConfig;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("residual batch is empty")]
    EmptyBatch,
    #[error("batch size {n_f} exceeds the candidate pool ({pool})")]
    BatchTooLarge { n_f: usize, pool: usize },
    #[error("non-finite loss at iteration {iter} ({phase}): total={total} f={f} d={d} p={p}")]
    NonFinite { iter: usize, phase: &'static str, total: f64, f: f64, d: f64, p: f64 },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("event hook failed: {0}")]
    Hook(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub w_f: f64,
    pub w_d: f64,
    pub w_p: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { w_f: 1.0, w_d: 1.0, w_p: 1.0 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), String> {
        let w = [self.w_f, self.w_d, self.w_p];
        if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(format!("loss weights must be finite and nonnegative, got {w:?}"));
        }
        if w.iter().all(|v| *v == 0.0) {
            return Err("loss weights cannot all be zero".into());
        }
        Ok(())
    }
}

/// Piecewise-constant learning rate: `stages[k] = (first_iter, lr)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LrSchedule {
    pub stages: Vec<(usize, f64)>,
}

impl LrSchedule {
    pub fn constant(lr: f64) -> Self {
        Self { stages: vec![(0, lr)] }
    }

    pub fn at(&self, iter: usize) -> f64 {
        self.stages.iter().take_while(|(start, _)| *start <= iter).last().map_or(self.stages[0].1, |s| s.1)
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.stages.is_empty() || self.stages[0].0 != 0 {
            return Err("learning-rate schedule must start at iteration 0".into());
        }
        if self.stages.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err("learning-rate stages must have increasing start iterations".into());
        }
        if self.stages.iter().any(|(_, lr)| !(lr.is_finite() && *lr > 0.0)) {
            return Err("learning rates must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub adam_iters: usize,
    pub lr: LrSchedule,
    pub lbfgs_iters: usize,
    /// Residual points drawn from the pool per iteration.
    pub batch_size: usize,
    pub weights: LossWeights,
    pub selftrain: SelfTrainConfig,
    /// Seed of the mini-batch stream.
    pub batch_seed: u64,
    /// Write elapsed time into the history; zero otherwise.
    pub record_wall_clock: bool,
    pub chunk: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            adam_iters: 1000,
            lr: LrSchedule::constant(1e-3),
            lbfgs_iters: 0,
            batch_size: 2048,
            weights: LossWeights::default(),
            selftrain: SelfTrainConfig::default(),
            batch_seed: 0,
            record_wall_clock: false,
            chunk: DEFAULT_CHUNK,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), String> {
        self.lr.validate()?;
        self.weights.validate()?;
        self.selftrain.validate()?;
        if self.batch_size == 0 {
            return Err("batch size must be at least 1".into());
        }
        if self.chunk == 0 {
            return Err("chunk size must be at least 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Adam,
    Lbfgs,
}

impl Phase {
    pub fn as_str(&self) -> &'static str {
        match self {
            Phase::Adam => "adam",
            Phase::Lbfgs => "lbfgs",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "adam" => Some(Phase::Adam),
            "lbfgs" => Some(Phase::Lbfgs),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HistoryRow {
    pub iter: usize,
    pub loss_total: f64,
    pub loss_f: f64,
    pub loss_d: f64,
    pub loss_p: f64,
    pub n_pseudo: usize,
    pub phase: Phase,
    pub wall_ms: u64,
}

pub const HISTORY_HEADER: &str = "iter,loss_total,loss_f,loss_d,loss_p,n_pseudo,phase,wall_ms";

pub fn write_history<W: Write>(mut w: W, rows: &[HistoryRow]) -> std::io::Result<()> {
    writeln!(w, "{HISTORY_HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{},{:e},{:e},{:e},{:e},{},{},{}",
            r.iter,
            r.loss_total,
            r.loss_f,
            r.loss_d,
            r.loss_p,
            r.n_pseudo,
            r.phase.as_str(),
            r.wall_ms
        )?;
    }
    w.flush()
}

pub fn read_history(text: &str) -> Result<Vec<HistoryRow>, String> {
    let mut lines = text.lines();
    if lines.next() != Some(HISTORY_HEADER) {
        return Err("missing history header".into());
    }
    lines
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 8 {
                return Err(format!("expected 8 fields, got {l:?}"));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| format!("bad number {s:?}"));
            let int = |s: &str| s.parse::<u64>().map_err(|_| format!("bad integer {s:?}"));
            Ok(HistoryRow {
                iter: int(f[0])? as usize,
                loss_total: num(f[1])?,
                loss_f: num(f[2])?,
                loss_d: num(f[3])?,
                loss_p: num(f[4])?,
                n_pseudo: int(f[5])? as usize,
                phase: Phase::parse(f[6]).ok_or_else(|| format!("bad phase {:?}", f[6]))?,
                wall_ms: int(f[7])?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_lookup() {
        let s = LrSchedule { stages: vec![(0, 5e-3), (100, 1e-3), (250, 5e-4)] };
        assert_eq!(s.at(0), 5e-3);
        assert_eq!(s.at(99), 5e-3);
        assert_eq!(s.at(100), 1e-3);
        assert_eq!(s.at(10_000), 5e-4);
        assert!(s.validate().is_ok());
        assert!(LrSchedule { stages: vec![(5, 1e-3)] }.validate().is_err());
        assert!(LrSchedule { stages: vec![(0, 1e-3), (0, 1e-4)] }.validate().is_err());
    }

    #[test]
    fn weight_validation() {
        assert!(LossWeights::default().validate().is_ok());
        assert!(LossWeights { w_f: 0.0, w_d: 0.0, w_p: 0.0 }.validate().is_err());
        assert!(LossWeights { w_f: -1.0, w_d: 1.0, w_p: 1.0 }.validate().is_err());
        assert!(LossWeights { w_f: 1.0, w_d: f64::NAN, w_p: 1.0 }.validate().is_err());
    }

    #[test]
    fn history_round_trip() {
        let rows = vec![
            HistoryRow { iter: 0, loss_total: 0.1, loss_f: 1e-20, loss_d: 3.0, loss_p: 0.0, n_pseudo: 0, phase: Phase::Adam, wall_ms: 0 },
            HistoryRow { iter: 1, loss_total: 1.0 / 3.0, loss_f: 2.5, loss_d: 1e300, loss_p: 7.0, n_pseudo: 12, phase: Phase::Lbfgs, wall_ms: 41 },
        ];
        let mut buf = Vec::new();
        write_history(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("iter,loss_total,loss_f,loss_d,loss_p,n_pseudo,phase,wall_ms\n"));
        assert_eq!(read_history(&text).unwrap(), rows);
    }
}
