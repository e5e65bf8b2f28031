use std::cell::RefCell;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::network::{MlpSpec, ParamVector};
use crate::pde::{DataTerm, PdeProblem};
use crate::selftrain::{generation_event, run_event, CandidatePool, PseudoSet};

use super::{
    lbfgs_minimize, Adam, Batch, Evaluation, HistoryRow, LbfgsOptions, LbfgsStop, LossModel, LossValue, Phase,
    TrainConfig, TrainError,
};

/// Indices of `n_f` pool points drawn uniformly without replacement, sorted.
/// Drawing the whole pool returns it in order without touching `rng`.
pub fn sample_batch<R: rand::Rng>(pool: usize, n_f: usize, rng: &mut R) -> Result<Vec<usize>, TrainError> {
    if n_f > pool {
        return Err(TrainError::BatchTooLarge { n_f, pool });
    }
    if n_f == pool {
        return Ok((0..pool).collect());
    }
    let mut idx = rand::seq::index::sample(rng, pool, n_f).into_vec();
    idx.sort_unstable();
    Ok(idx)
}

/// Everything fixed for a run: the problem, the network shape, supervised
/// data and the candidate pool.
#[derive(Debug, Clone)]
pub struct TrainSetup<'a> {
    pub problem: &'a PdeProblem,
    pub spec: &'a MlpSpec,
    pub data: &'a [DataTerm],
    pub pool: &'a [[f64; 2]],
}

/// State handed to the event hook right after a generation event.
pub struct EventInfo<'a> {
    pub iter: usize,
    pub params: &'a ParamVector,
    pub pool: &'a CandidatePool,
    pub pseudo: &'a PseudoSet,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ParamVector,
    pub history: Vec<HistoryRow>,
    pub pool: CandidatePool,
    pub pseudo: PseudoSet,
    pub lbfgs_stop: Option<LbfgsStop>,
}

fn row(iter: usize, v: &LossValue, n_pseudo: usize, phase: Phase, wall_ms: u64) -> HistoryRow {
    HistoryRow { iter, loss_total: v.total, loss_f: v.f, loss_d: v.d, loss_p: v.p, n_pseudo, phase, wall_ms }
}

fn sample_points(
    setup: &TrainSetup<'_>,
    config: &TrainConfig,
    pseudo_mask: &[bool],
    rng: &mut ChaCha8Rng,
) -> Result<Vec<[f64; 2]>, TrainError> {
    let idx = sample_batch(setup.pool.len(), config.batch_size, rng)?;
    let exclude = config.selftrain.exclude_pseudo_from_residual;
    Ok(idx.into_iter().filter(|&i| !(exclude && pseudo_mask[i])).map(|i| setup.pool[i]).collect())
}

/// Adam on mini-batches with optional generation events, then an optional
/// full-batch L-BFGS phase with the batch and pseudo set frozen.
///
/// Each Adam iteration: run the event if one is due, draw the batch, record
/// the loss at the current parameters, take the step. Only the batch draw
/// consumes randomness.
pub fn train(
    setup: &TrainSetup<'_>,
    init: ParamVector,
    config: &TrainConfig,
    on_event: &mut dyn FnMut(&EventInfo<'_>) -> Result<(), String>,
) -> Result<TrainOutcome, TrainError> {
    config.validate().map_err(TrainError::InvalidConfig)?;
    setup.problem.validate().map_err(TrainError::InvalidConfig)?;
    if setup.spec.output_dim != 1 {
        return Err(TrainError::InvalidConfig("scalar PDEs need output_dim = 1".into()));
    }
    init.check_len(setup.spec)?;
    if config.batch_size > setup.pool.len() {
        return Err(TrainError::BatchTooLarge { n_f: config.batch_size, pool: setup.pool.len() });
    }
    let started = Instant::now();
    let wall = || if config.record_wall_clock { started.elapsed().as_millis() as u64 } else { 0 };
    let model = LossModel { chunk: config.chunk, ..LossModel::new(setup.problem, setup.spec, config.weights) };
    let mut rng = ChaCha8Rng::seed_from_u64(config.batch_seed);
    let mut params = init;
    let mut adam = Adam::new(params.len());
    let mut pool = CandidatePool::new(setup.pool.to_vec());
    let mut pseudo = PseudoSet::default();
    let mut pseudo_terms: Vec<DataTerm> = Vec::new();
    let mut pseudo_mask = vec![false; setup.pool.len()];
    let mut history = Vec::with_capacity(config.adam_iters + config.lbfgs_iters);

    for it in 0..config.adam_iters {
        if config.selftrain.enabled && generation_event(it, &config.selftrain) {
            pseudo = run_event(&params, setup.spec, setup.problem, &mut pool, &config.selftrain)?;
            pseudo_terms = pseudo.data_terms();
            pseudo_mask.iter_mut().for_each(|m| *m = false);
            for p in &pseudo.points {
                pseudo_mask[p.index] = true;
            }
            on_event(&EventInfo { iter: it, params: &params, pool: &pool, pseudo: &pseudo }).map_err(TrainError::Hook)?;
        }
        let sample = sample_points(setup, config, &pseudo_mask, &mut rng)?;
        let batch = Batch { sample: &sample, data: setup.data, pseudo: &pseudo_terms };
        let v = model.evaluate(&params, &batch)?;
        if !v.total.is_finite() {
            return Err(TrainError::NonFinite { iter: it, phase: "adam", total: v.total, f: v.f, d: v.d, p: v.p });
        }
        adam.update(&mut params.values, &v.grad, config.lr.at(it));
        history.push(row(it, &v, pseudo.len(), Phase::Adam, wall()));
    }

    let mut lbfgs_stop = None;
    if config.lbfgs_iters > 0 {
        let sample = sample_points(setup, config, &pseudo_mask, &mut rng)?;
        let batch = Batch { sample: &sample, data: setup.data, pseudo: &pseudo_terms };
        let failure: RefCell<Option<TrainError>> = RefCell::new(None);
        let objective = |x: &[f64]| {
            let p = ParamVector { values: x.to_vec() };
            match model.evaluate(&p, &batch) {
                Ok(v) => Evaluation { value: v.total, grad: v.grad.clone(), extra: v },
                Err(e) => {
                    failure.borrow_mut().get_or_insert(e);
                    let nan = f64::NAN;
                    let v = LossValue { total: nan, f: nan, d: nan, p: nan, grad: vec![nan; x.len()] };
                    Evaluation { value: nan, grad: v.grad.clone(), extra: v }
                }
            }
        };
        let opts = LbfgsOptions { max_iters: config.lbfgs_iters, ..LbfgsOptions::default() };
        let base = config.adam_iters;
        let n_pseudo = pseudo.len();
        let result = lbfgs_minimize(params.values.clone(), objective, &opts, |k, _, e| {
            history.push(row(base + k - 1, &e.extra, n_pseudo, Phase::Lbfgs, wall()));
        });
        if let Some(e) = failure.into_inner() {
            return Err(e);
        }
        if result.stop == LbfgsStop::NonFinite {
            let v = &result.at.extra;
            return Err(TrainError::NonFinite { iter: base, phase: "lbfgs", total: v.total, f: v.f, d: v.d, p: v.p });
        }
        params.values = result.x;
        lbfgs_stop = Some(result.stop);
    }

    Ok(TrainOutcome { params, history, pool, pseudo, lbfgs_stop })
}
