//! Residual-ranked pseudo-labeling.
//!
//! At each generation event every candidate is scored by its squared PDE
//! residual, the lowest `⌊N·q⌋` are selected, and per-point flags count
//! consecutive selections. Points whose flag exceeds `r` become pseudo points
//! labeled with the network's current prediction; the pseudo set is rebuilt
//! from scratch every event.

use std::cmp::Ordering;
use std::io::Write;

use rayon::prelude::*;

use crate::autodiff::Values;
use crate::network::{eval_jets, forward_batch, DerivOrder, MlpSpec, NetworkError, ParamVector};
use crate::pde::{DataTerm, PdeProblem};

/// Points per evaluation chunk when scoring.
const SCORE_CHUNK: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelfTrainConfig {
    pub enabled: bool,
    /// Iterations between generation events.
    pub period: usize,
    /// Largest fraction of the pool that can be selected.
    pub max_rate: f64,
    /// A point is pseudo-labeled once its flag exceeds this.
    pub stable: u32,
    /// Iterations before the first event.
    pub warmup: usize,
    /// Drop pseudo points from the residual term while they are pseudo-labeled.
    pub exclude_pseudo_from_residual: bool,
}

impl Default for SelfTrainConfig {
    fn default() -> Self {
        Self { enabled: true, period: 100, max_rate: 0.2, stable: 10, warmup: 0, exclude_pseudo_from_residual: false }
    }
}

impl SelfTrainConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.period == 0 {
            return Err("selftrain period p must be at least 1".into());
        }
        if !(self.max_rate > 0.0 && self.max_rate <= 1.0) {
            return Err(format!("selftrain max rate q must be in (0, 1], got {}", self.max_rate));
        }
        Ok(())
    }
}

/// True iff `iter >= warmup` and `(iter - warmup) % p == 0`.
pub fn generation_event(iter: usize, config: &SelfTrainConfig) -> bool {
    iter >= config.warmup && (iter - config.warmup) % config.period == 0
}

/// Fixed candidate coordinates `(t, x)` with per-point selection flags.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidatePool {
    coords: Vec<[f64; 2]>,
    flags: Vec<u32>,
}

impl CandidatePool {
    pub fn new(coords: Vec<[f64; 2]>) -> Self {
        let flags = vec![0; coords.len()];
        Self { coords, flags }
    }

    pub fn coords(&self) -> &[[f64; 2]] {
        &self.coords
    }

    pub fn flags(&self) -> &[u32] {
        &self.flags
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    /// Increments the flags of `selected` and zeroes every other flag.
    /// `selected` must hold distinct in-range indices.
    pub fn update_flags(&mut self, selected: &[usize]) {
        let mut next = vec![0; self.flags.len()];
        for &i in selected {
            next[i] = self.flags[i] + 1;
        }
        self.flags = next;
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PseudoPoint {
    pub index: usize,
    pub t: f64,
    pub x: f64,
    pub label: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PseudoSet {
    pub points: Vec<PseudoPoint>,
}

impl PseudoSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn indices(&self) -> Vec<usize> {
        self.points.iter().map(|p| p.index).collect()
    }

    pub fn data_terms(&self) -> Vec<DataTerm> {
        self.points.iter().map(|p| DataTerm::Value { t: p.t, x: p.x, label: p.label }).collect()
    }
}

fn network_inputs(problem: &PdeProblem, coords: &[[f64; 2]]) -> Vec<f64> {
    coords.iter().flat_map(|c| problem.network_input(c[0], c[1])).collect()
}

/// Squared residual at every coordinate, evaluated without a tape.
pub fn score_candidates(
    params: &ParamVector,
    spec: &MlpSpec,
    problem: &PdeProblem,
    coords: &[[f64; 2]],
) -> Result<Vec<f64>, NetworkError> {
    let chunks: Vec<Result<Vec<f64>, NetworkError>> = coords
        .par_chunks(SCORE_CHUNK)
        .map(|chunk| {
            let jets = eval_jets(params, spec, &network_inputs(problem, chunk), DerivOrder::Second)?;
            Ok(jets
                .iter()
                .step_by(spec.output_dim)
                .map(|j| {
                    let r = problem.residual(&mut Values, j);
                    r * r
                })
                .collect())
        })
        .collect();
    let mut out = Vec::with_capacity(coords.len());
    for c in chunks {
        out.extend(c?);
    }
    Ok(out)
}

/// Ascending scores, NaN after every number.
fn score_order(a: f64, b: f64) -> Ordering {
    a.is_nan().cmp(&b.is_nan()).then_with(|| a.partial_cmp(&b).unwrap_or(Ordering::Equal))
}

/// Number of points selected from `n` at rate `q`.
pub fn selection_size(n: usize, q: f64) -> usize {
    (n as f64 * q).floor() as usize
}

/// The `⌊N·q⌋` indices with the smallest scores, ties to the lower index,
/// returned in ascending index order.
pub fn select_top_q(scores: &[f64], q: f64) -> Vec<usize> {
    let k = selection_size(scores.len(), q).min(scores.len());
    if k == 0 {
        return Vec::new();
    }
    let cmp = |&i: &usize, &j: &usize| score_order(scores[i], scores[j]).then(i.cmp(&j));
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    if k < idx.len() {
        idx.select_nth_unstable_by(k - 1, cmp);
        idx.truncate(k);
    }
    idx.sort_unstable();
    idx
}

/// Rebuilds the pseudo set from the points with flag above `stable`,
/// labeled by the current network.
pub fn harvest_pseudo(
    params: &ParamVector,
    spec: &MlpSpec,
    problem: &PdeProblem,
    pool: &CandidatePool,
    stable: u32,
) -> Result<PseudoSet, NetworkError> {
    let chosen: Vec<usize> = (0..pool.len()).filter(|&i| pool.flags[i] > stable).collect();
    let coords: Vec<[f64; 2]> = chosen.iter().map(|&i| pool.coords[i]).collect();
    let labels = forward_batch(params, spec, &network_inputs(problem, &coords))?;
    let points = chosen
        .iter()
        .zip(&coords)
        .zip(labels.iter().step_by(spec.output_dim))
        .map(|((&index, c), &label)| PseudoPoint { index, t: c[0], x: c[1], label })
        .collect();
    Ok(PseudoSet { points })
}

/// One full generation event: score, select, update flags, harvest.
pub fn run_event(
    params: &ParamVector,
    spec: &MlpSpec,
    problem: &PdeProblem,
    pool: &mut CandidatePool,
    config: &SelfTrainConfig,
) -> Result<PseudoSet, NetworkError> {
    let scores = score_candidates(params, spec, problem, &pool.coords)?;
    let selected = select_top_q(&scores, config.max_rate);
    pool.update_flags(&selected);
    harvest_pseudo(params, spec, problem, pool, config.stable)
}

pub const PSEUDO_DUMP_HEADER: &str = "event_iter,index,t,x,label,flag";

/// Writes the pseudo set of one event as CSV rows (header included).
pub fn write_pseudo_dump<W: Write>(
    mut w: W,
    event_iter: usize,
    set: &PseudoSet,
    pool: &CandidatePool,
) -> std::io::Result<()> {
    writeln!(w, "{PSEUDO_DUMP_HEADER}")?;
    for p in &set.points {
        writeln!(w, "{},{},{:?},{:?},{:?},{}", event_iter, p.index, p.t, p.x, p.label, pool.flags[p.index])?;
    }
    w.flush()
}

/// Parses a dump written by [`write_pseudo_dump`] into `(index, t, x, label, flag)` rows.
pub fn read_pseudo_dump(text: &str) -> Result<Vec<(usize, f64, f64, f64, u32)>, String> {
    let mut lines = text.lines();
    if lines.next() != Some(PSEUDO_DUMP_HEADER) {
        return Err("missing pseudo dump header".into());
    }
    lines
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 6 {
                return Err(format!("expected 6 fields, got {l:?}"));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| format!("bad number {s:?}"));
            let int = |s: &str| s.parse::<usize>().map_err(|_| format!("bad integer {s:?}"));
            Ok((int(f[1])?, num(f[2])?, num(f[3])?, num(f[4])?, int(f[5])? as u32))
        })
        .collect()
}
