use rayon::prelude::*;

use crate::autodiff::{pairwise_reduce, Arith, JetVar, Tape, Var};
use crate::network::{forward_jet_batch, DerivOrder, MlpSpec, ParamVector};
use crate::pde::{periodic_penalty, robin_penalty, value_penalty, DataTerm, PdeProblem};

use super::{LossWeights, TrainError};

/// Points per tape when evaluating a loss in chunks.
pub const DEFAULT_CHUNK: usize = 256;

/// One training batch; coordinates are physical `(t, x)`.
#[derive(Debug, Clone, Copy)]
pub struct Batch<'a> {
    pub sample: &'a [[f64; 2]],
    pub data: &'a [DataTerm],
    pub pseudo: &'a [DataTerm],
}

fn inputs(problem: &PdeProblem, pts: impl Iterator<Item = (f64, f64)>) -> Vec<f64> {
    pts.flat_map(|(t, x)| problem.network_input(t, x)).collect()
}

fn sum_vars(tape: &mut Tape<'_>, terms: impl IntoIterator<Item = Var>) -> Option<Var> {
    terms.into_iter().fold(None, |acc, v| Some(match acc {
        None => v,
        Some(a) => tape.add(a, v),
    }))
}

/// `Σ |f(t, x)|²` over `pts`.
pub fn residual_sum<'a>(
    tape: &mut Tape<'a>,
    params: &'a ParamVector,
    spec: &MlpSpec,
    problem: &PdeProblem,
    pts: &[[f64; 2]],
) -> Result<Option<Var>, TrainError> {
    let inp = inputs(problem, pts.iter().map(|p| (p[0], p[1])));
    let jets = forward_jet_batch(params, spec, &inp, DerivOrder::Second, tape)?;
    let mut sq = Vec::with_capacity(pts.len());
    for j in jets.iter().step_by(spec.output_dim) {
        let r = problem.residual(tape, j);
        sq.push(tape.square(r));
    }
    Ok(sum_vars(tape, sq))
}

/// `Σ` of the squared data mismatches over `terms`.
pub fn data_sum<'a>(
    tape: &mut Tape<'a>,
    params: &'a ParamVector,
    spec: &MlpSpec,
    problem: &PdeProblem,
    terms: &[DataTerm],
) -> Result<Option<Var>, TrainError> {
    // Points needing only values go through one block, points needing u_x
    // through another.
    let mut plain = Vec::new();
    let mut deriv = Vec::new();
    for term in terms {
        match *term {
            DataTerm::Value { t, x, .. } => plain.push((t, x)),
            DataTerm::Periodic { t } => {
                let dst = if problem.periodic_derivative { &mut deriv } else { &mut plain };
                dst.push((t, problem.x_lo));
                dst.push((t, problem.x_hi));
            }
            DataTerm::Robin { t, .. } => deriv.push((t, problem.x_hi)),
        }
    }
    let out = spec.output_dim;
    let eval = |tape: &mut Tape<'a>, pts: &[(f64, f64)], order| -> Result<Vec<JetVar>, TrainError> {
        if pts.is_empty() {
            return Ok(Vec::new());
        }
        let jets = forward_jet_batch(params, spec, &inputs(problem, pts.iter().copied()), order, tape)?;
        Ok(jets.into_iter().step_by(out).collect())
    };
    let plain_jets = eval(tape, &plain, DerivOrder::Value)?;
    let deriv_jets = eval(tape, &deriv, DerivOrder::First)?;
    let (mut pi, mut di) = (0, 0);
    let mut pens = Vec::with_capacity(terms.len());
    for term in terms {
        let pen = match *term {
            DataTerm::Value { label, .. } => {
                pi += 1;
                value_penalty(tape, plain_jets[pi - 1].val(), label)
            }
            DataTerm::Periodic { .. } => {
                let (lo, hi) = if problem.periodic_derivative {
                    di += 2;
                    let lo = problem.physical_jet(tape, &deriv_jets[di - 2]);
                    let hi = problem.physical_jet(tape, &deriv_jets[di - 1]);
                    (lo, hi)
                } else {
                    pi += 2;
                    (plain_jets[pi - 2], plain_jets[pi - 1])
                };
                periodic_penalty(tape, &lo, &hi, problem.periodic_derivative)
            }
            DataTerm::Robin { coeff, .. } => {
                di += 1;
                let u = problem.physical_jet(tape, &deriv_jets[di - 1]);
                robin_penalty(tape, &u, coeff)
            }
        };
        pens.push(pen);
    }
    Ok(sum_vars(tape, pens))
}

/// Mean squared residual over `pts`.
pub fn loss_f<'a>(
    tape: &mut Tape<'a>,
    params: &'a ParamVector,
    spec: &MlpSpec,
    problem: &PdeProblem,
    pts: &[[f64; 2]],
) -> Result<Var, TrainError> {
    let s = residual_sum(tape, params, spec, problem, pts)?.ok_or(TrainError::EmptyBatch)?;
    Ok(tape.scale(s, 1.0 / pts.len() as f64))
}

/// Mean data mismatch over `terms`; zero with zero gradient when empty.
pub fn loss_d<'a>(
    tape: &mut Tape<'a>,
    params: &'a ParamVector,
    spec: &MlpSpec,
    problem: &PdeProblem,
    terms: &[DataTerm],
) -> Result<Var, TrainError> {
    match data_sum(tape, params, spec, problem, terms)? {
        Some(s) => Ok(tape.scale(s, 1.0 / terms.len() as f64)),
        None => Ok(tape.leaf(0.0)),
    }
}

/// Pseudo-label loss; same form as [`loss_d`].
pub fn loss_p<'a>(
    tape: &mut Tape<'a>,
    params: &'a ParamVector,
    spec: &MlpSpec,
    problem: &PdeProblem,
    pseudo: &[DataTerm],
) -> Result<Var, TrainError> {
    loss_d(tape, params, spec, problem, pseudo)
}

pub fn total_loss(tape: &mut Tape<'_>, w: &LossWeights, l_f: Var, l_d: Var, l_p: Var) -> Var {
    let a = tape.scale(l_f, w.w_f);
    let b = tape.scale(l_d, w.w_d);
    let c = tape.scale(l_p, w.w_p);
    let ab = tape.add(a, b);
    tape.add(ab, c)
}

/// Value and parameter gradient of one loss component.
#[derive(Debug, Clone, PartialEq)]
pub struct Component {
    pub value: f64,
    pub grad: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub total: f64,
    pub f: f64,
    pub d: f64,
    pub p: f64,
    pub grad: Vec<f64>,
}

/// Chunked loss evaluator.
///
/// Each component is split into fixed-size chunks, each chunk recorded on its
/// own tape and scaled by the global `1/N`; partials are combined with
/// [`pairwise_reduce`], so the result does not depend on the worker count.
#[derive(Debug, Clone)]
pub struct LossModel<'a> {
    pub problem: &'a PdeProblem,
    pub spec: &'a MlpSpec,
    pub weights: LossWeights,
    pub chunk: usize,
}

impl<'a> LossModel<'a> {
    pub fn new(problem: &'a PdeProblem, spec: &'a MlpSpec, weights: LossWeights) -> Self {
        Self { problem, spec, weights, chunk: DEFAULT_CHUNK }
    }

    fn chunked<T: Sync>(
        &self,
        params: &ParamVector,
        items: &[T],
        sum: impl for<'t> Fn(&mut Tape<'t>, &'t ParamVector, &[T]) -> Result<Option<Var>, TrainError> + Sync,
    ) -> Result<Component, TrainError> {
        let n = params.len();
        if items.is_empty() {
            return Ok(Component { value: 0.0, grad: vec![0.0; n] });
        }
        let scale = 1.0 / items.len() as f64;
        let parts: Vec<Result<(f64, Vec<f64>), TrainError>> = items
            .par_chunks(self.chunk.max(1))
            .map(|c| {
                let mut tape = Tape::new(n);
                let s = sum(&mut tape, params, c)?.expect("chunk is nonempty");
                let v = tape.scale(s, scale);
                Ok((tape.val(v), tape.param_grad(v)?))
            })
            .collect();
        let parts = parts.into_iter().collect::<Result<Vec<_>, _>>()?;
        let (value, grad) = pairwise_reduce(parts, n);
        Ok(Component { value, grad })
    }

    pub fn residual_component(&self, params: &ParamVector, pts: &[[f64; 2]]) -> Result<Component, TrainError> {
        if pts.is_empty() {
            return Err(TrainError::EmptyBatch);
        }
        self.chunked(params, pts, |tape, p, c| residual_sum(tape, p, self.spec, self.problem, c))
    }

    pub fn data_component(&self, params: &ParamVector, terms: &[DataTerm]) -> Result<Component, TrainError> {
        self.chunked(params, terms, |tape, p, c| data_sum(tape, p, self.spec, self.problem, c))
    }

    /// All components and the weighted total. A zero weight leaves its
    /// component out of the total gradient entirely.
    pub fn evaluate(&self, params: &ParamVector, batch: &Batch<'_>) -> Result<LossValue, TrainError> {
        let f = self.residual_component(params, batch.sample)?;
        let d = self.data_component(params, batch.data)?;
        let p = self.data_component(params, batch.pseudo)?;
        let w = &self.weights;
        let mut grad = vec![0.0; params.len()];
        let mut total = 0.0;
        for (wi, c) in [(w.w_f, &f), (w.w_d, &d), (w.w_p, &p)] {
            if wi != 0.0 {
                total += wi * c.value;
                for (g, ci) in grad.iter_mut().zip(&c.grad) {
                    *g += wi * ci;
                }
            }
        }
        Ok(LossValue { total, f: f.value, d: d.value, p: p.value, grad })
    }
}
