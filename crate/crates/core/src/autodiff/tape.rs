use std::sync::atomic::{AtomicU32, Ordering};

use super::{Arith, AutodiffError};

static NEXT_TAPE_ID: AtomicU32 = AtomicU32::new(1);

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var {
    index: u32,
    tape: u32,
}

impl Var {
    pub fn index(&self) -> usize {
        self.index as usize
    }
}

#[derive(Debug, Clone, Copy)]
enum Op {
    Leaf,
    Param(u32),
    Add(u32, u32),
    Sub(u32, u32),
    Mul(u32, u32),
    Scale(u32, f64),
    AddConst(u32, f64),
    Tanh(u32),
    Powf(u32, f64),
    Recip(u32),
    MaxConst(u32, f64),
    /// Marker preceding `n_out` outputs produced by block `block`.
    Block { block: u32, n_out: u32 },
    BlockOut,
}

/// A fused multi-output operation recorded as a single tape entry.
///
/// Its outputs depend only on trainable parameters (never on other tape
/// values), so the reverse sweep hands it the output adjoints and it adds its
/// contribution straight into the parameter adjoints.
pub trait TapeBlock {
    fn backward(&self, out_adj: &[f64], param_adj: &mut [f64]);
    /// Recomputes the outputs from scratch, for replay checks.
    fn recompute(&self) -> Vec<f64>;
}

/// Wengert list over scalar values.
///
/// One tape per loss evaluation: record, call [`Tape::param_grad`], drop.
pub struct Tape<'a> {
    id: u32,
    n_params: usize,
    ops: Vec<Op>,
    vals: Vec<f64>,
    params: Vec<Option<Var>>,
    blocks: Vec<Box<dyn TapeBlock + 'a>>,
}

impl<'a> Tape<'a> {
    pub fn new(n_params: usize) -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            n_params,
            ops: Vec::new(),
            vals: Vec::new(),
            params: vec![None; n_params],
            blocks: Vec::new(),
        }
    }

    pub fn n_params(&self) -> usize {
        self.n_params
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    fn push(&mut self, op: Op, val: f64) -> Var {
        let index = self.ops.len() as u32;
        self.ops.push(op);
        self.vals.push(val);
        Var { index, tape: self.id }
    }

    fn check(&self, v: Var) -> Result<usize, AutodiffError> {
        if v.tape != self.id {
            return Err(AutodiffError::ForeignVar);
        }
        let i = v.index as usize;
        if i >= self.ops.len() {
            return Err(AutodiffError::VarOutOfRange { index: i, len: self.ops.len() });
        }
        Ok(i)
    }

    pub fn leaf(&mut self, val: f64) -> Var {
        self.push(Op::Leaf, val)
    }

    /// Leaf bound to trainable parameter `k`; repeated calls return the same handle.
    pub fn param(&mut self, k: usize, val: f64) -> Result<Var, AutodiffError> {
        if k >= self.n_params {
            return Err(AutodiffError::ParamOutOfRange { index: k, count: self.n_params });
        }
        if let Some(v) = self.params[k] {
            return Ok(v);
        }
        let v = self.push(Op::Param(k as u32), val);
        self.params[k] = Some(v);
        Ok(v)
    }

    /// Records a fused block; returns handles for its outputs in order.
    pub fn push_block(&mut self, block: Box<dyn TapeBlock + 'a>, outputs: &[f64]) -> Vec<Var> {
        let b = self.blocks.len() as u32;
        self.blocks.push(block);
        self.push(Op::Block { block: b, n_out: outputs.len() as u32 }, 0.0);
        outputs.iter().map(|&o| self.push(Op::BlockOut, o)).collect()
    }

    pub fn val(&self, v: Var) -> f64 {
        debug_assert_eq!(v.tape, self.id);
        self.vals[v.index as usize]
    }

    /// Gradient of `result` with respect to every trainable parameter.
    ///
    /// Does not modify the tape; adjoint storage lives for this call only.
    pub fn param_grad(&self, result: Var) -> Result<Vec<f64>, AutodiffError> {
        let r = self.check(result)?;
        let mut adj = vec![0.0; r + 1];
        let mut grad = vec![0.0; self.n_params];
        adj[r] = 1.0;
        for i in (0..=r).rev() {
            let g = adj[i];
            match self.ops[i] {
                Op::Leaf | Op::BlockOut => {}
                Op::Param(k) => grad[k as usize] += g,
                Op::Block { block, n_out } => {
                    let start = i + 1;
                    let end = (start + n_out as usize).min(r + 1);
                    if start < end {
                        let mut out_adj = adj[start..end].to_vec();
                        out_adj.resize(n_out as usize, 0.0);
                        if out_adj.iter().any(|&a| a != 0.0) {
                            self.blocks[block as usize].backward(&out_adj, &mut grad);
                        }
                    }
                }
                _ if g == 0.0 => {}
                Op::Add(a, b) => {
                    adj[a as usize] += g;
                    adj[b as usize] += g;
                }
                Op::Sub(a, b) => {
                    adj[a as usize] += g;
                    adj[b as usize] -= g;
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (self.vals[a as usize], self.vals[b as usize]);
                    adj[a as usize] += g * vb;
                    adj[b as usize] += g * va;
                }
                Op::Scale(a, c) => adj[a as usize] += g * c,
                Op::AddConst(a, _) => adj[a as usize] += g,
                Op::Tanh(a) => {
                    let s = self.vals[i];
                    adj[a as usize] += g * (1.0 - s * s);
                }
                Op::Powf(a, e) => {
                    let x = self.vals[a as usize];
                    adj[a as usize] += g * e * x.powf(e - 1.0);
                }
                Op::Recip(a) => {
                    let y = self.vals[i];
                    adj[a as usize] -= g * y * y;
                }
                Op::MaxConst(a, lo) => {
                    if self.vals[a as usize] >= lo {
                        adj[a as usize] += g;
                    }
                }
            }
        }
        Ok(grad)
    }

    /// Recomputes every recorded value from its inputs and reports whether the
    /// result reproduces the recording bit for bit.
    pub fn replay_matches(&self) -> bool {
        let mut vals = self.vals.clone();
        let mut i = 0;
        while i < self.ops.len() {
            let v = |k: u32| vals[k as usize];
            let new = match self.ops[i] {
                Op::Leaf | Op::Param(_) | Op::BlockOut => vals[i],
                Op::Add(a, b) => v(a) + v(b),
                Op::Sub(a, b) => v(a) - v(b),
                Op::Mul(a, b) => v(a) * v(b),
                Op::Scale(a, c) => v(a) * c,
                Op::AddConst(a, c) => v(a) + c,
                Op::Tanh(a) => v(a).tanh(),
                Op::Powf(a, e) => v(a).powf(e),
                Op::Recip(a) => 1.0 / v(a),
                Op::MaxConst(a, lo) => {
                    if v(a) >= lo {
                        v(a)
                    } else {
                        lo
                    }
                }
                Op::Block { block, n_out } => {
                    let out = self.blocks[block as usize].recompute();
                    if out.len() != n_out as usize {
                        return false;
                    }
                    vals[i + 1..i + 1 + out.len()].copy_from_slice(&out);
                    0.0
                }
            };
            vals[i] = new;
            i += 1;
        }
        vals.iter()
            .zip(&self.vals)
            .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

impl Arith for Tape<'_> {
    type Scalar = Var;

    fn constant(&mut self, c: f64) -> Var {
        self.leaf(c)
    }
    fn value(&self, a: Var) -> f64 {
        self.val(a)
    }
    fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.val(a) + self.val(b);
        self.push(Op::Add(a.index, b.index), v)
    }
    fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.val(a) - self.val(b);
        self.push(Op::Sub(a.index, b.index), v)
    }
    fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.val(a) * self.val(b);
        self.push(Op::Mul(a.index, b.index), v)
    }
    fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.val(a) * c;
        self.push(Op::Scale(a.index, c), v)
    }
    fn add_const(&mut self, a: Var, c: f64) -> Var {
        let v = self.val(a) + c;
        self.push(Op::AddConst(a.index, c), v)
    }
    fn tanh(&mut self, a: Var) -> Var {
        let v = self.val(a).tanh();
        self.push(Op::Tanh(a.index), v)
    }
    fn powf(&mut self, a: Var, exponent: f64) -> Var {
        let v = self.val(a).powf(exponent);
        self.push(Op::Powf(a.index, exponent), v)
    }
    fn recip(&mut self, a: Var) -> Var {
        let v = 1.0 / self.val(a);
        self.push(Op::Recip(a.index), v)
    }
    fn max_const(&mut self, a: Var, lo: f64) -> Var {
        let x = self.val(a);
        let v = if x >= lo { x } else { lo };
        self.push(Op::MaxConst(a.index, lo), v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{jet_add, jet_mul, jet_scale, jet_tanh, Jet};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn square_of_single_param() {
        let mut tape = Tape::new(1);
        let w = tape.param(0, 1.5).unwrap();
        let y = tape.mul(w, w);
        assert_eq!(tape.param_grad(y).unwrap(), vec![3.0]);
    }

    #[test]
    fn unused_param_has_zero_gradient() {
        let mut tape = Tape::new(3);
        let a = tape.param(0, 2.0).unwrap();
        let _b = tape.param(1, 5.0).unwrap();
        let y = tape.tanh(a);
        let g = tape.param_grad(y).unwrap();
        assert_eq!(g[1], 0.0);
        assert_eq!(g[2], 0.0);
        assert!((g[0] - (1.0 - 2.0f64.tanh().powi(2))).abs() < 1e-15);
    }

    #[test]
    fn foreign_and_out_of_range_handles_are_rejected() {
        let mut t1 = Tape::new(1);
        let mut t2 = Tape::new(1);
        let a = t1.leaf(1.0);
        let _ = t2.leaf(1.0);
        assert_eq!(t2.param_grad(a), Err(AutodiffError::ForeignVar));
        assert!(matches!(t1.param(4, 0.0), Err(AutodiffError::ParamOutOfRange { .. })));
        let bogus = Var { index: 10, tape: t1.id };
        assert!(matches!(t1.param_grad(bogus), Err(AutodiffError::VarOutOfRange { .. })));
    }

    #[test]
    fn param_grad_leaves_tape_unchanged() {
        let mut tape = Tape::new(1);
        let w = tape.param(0, 0.3).unwrap();
        let y = tape.tanh(w);
        let before = tape.len();
        let g1 = tape.param_grad(y).unwrap();
        let g2 = tape.param_grad(y).unwrap();
        assert_eq!(g1, g2);
        assert_eq!(tape.len(), before);
        assert!(tape.replay_matches());
    }

    #[test]
    fn power_reciprocal_and_clamp_rules() {
        let mut tape = Tape::new(2);
        let a = tape.param(0, 2.0).unwrap();
        let b = tape.param(1, -3.0).unwrap();
        let p = tape.powf(a, -0.125);
        let r = tape.recip(a);
        let c = tape.max_const(b, 1e-6);
        let s = tape.add(p, r);
        let y = tape.add(s, c);
        let g = tape.param_grad(y).unwrap();
        let expect = -0.125 * 2.0f64.powf(-1.125) - 0.25;
        assert!((g[0] - expect).abs() < 1e-15);
        assert_eq!(g[1], 0.0);
    }

    struct Affine {
        w: Vec<f64>,
    }
    impl TapeBlock for Affine {
        fn backward(&self, out_adj: &[f64], param_adj: &mut [f64]) {
            // outputs: o_k = w_k^2
            for (k, a) in out_adj.iter().enumerate() {
                param_adj[k] += a * 2.0 * self.w[k];
            }
        }
        fn recompute(&self) -> Vec<f64> {
            self.w.iter().map(|w| w * w).collect()
        }
    }

    #[test]
    fn block_outputs_feed_parameter_gradients() {
        let w = vec![0.5, -1.0, 2.0];
        let mut tape = Tape::new(3);
        let outs = tape.push_block(Box::new(Affine { w: w.clone() }), &[0.25, 1.0, 4.0]);
        let s = tape.add(outs[0], outs[2]);
        let y = tape.scale(s, 3.0);
        let g = tape.param_grad(y).unwrap();
        assert_eq!(g, vec![3.0, 0.0, 12.0]);
        assert!(tape.replay_matches());
    }

    // f(w) = sum of a random chain of tape operations on jets seeded from params
    fn random_composition(seed: u64, w: &[f64]) -> (f64, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tape = Tape::new(w.len());
        let vars: Vec<Var> = w.iter().enumerate().map(|(k, &x)| tape.param(k, x).unwrap()).collect();
        let zero = tape.constant(0.0);
        let mut jets: Vec<Jet<Var>> = vars
            .chunks(3)
            .map(|c| Jet::from_parts(2, c[0], &[c[1], c[2]], &[zero, zero, zero]))
            .collect();
        for _ in 0..6 {
            let i = rng.gen_range(0..jets.len());
            let j = rng.gen_range(0..jets.len());
            let next = match rng.gen_range(0..4) {
                0 => jet_mul(&mut tape, &jets[i], &jets[j]),
                1 => jet_tanh(&mut tape, &jets[i]),
                2 => {
                    let c = rng.gen_range(-2.0..2.0);
                    jet_scale(&mut tape, &jets[i], c)
                }
                _ => jet_add(&mut tape, &jets[i], &jets[j]),
            };
            jets.push(next);
        }
        let last = *jets.last().unwrap();
        let mut acc = last.val();
        for &g in last.grads() {
            let g2 = tape.square(g);
            acc = tape.add(acc, g2);
        }
        for &h in last.hess_packed() {
            acc = tape.add(acc, h);
        }
        let v = tape.val(acc);
        assert!(tape.replay_matches());
        (v, tape.param_grad(acc).unwrap())
    }

    #[test]
    fn reverse_mode_matches_finite_differences_on_random_compositions() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for seed in 0..120 {
            let w: Vec<f64> = (0..9).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let (_, g) = random_composition(seed, &w);
            for k in 0..w.len() {
                let mut wp = w.clone();
                let mut wm = w.clone();
                wp[k] += h;
                wm[k] -= h;
                let fd = (random_composition(seed, &wp).0 - random_composition(seed, &wm).0) / (2.0 * h);
                let err = (g[k] - fd).abs() / g[k].abs().max(fd.abs()).max(1.0);
                worst = worst.max(err);
            }
        }
        assert!(worst < 1e-5, "worst relative error {worst}");
    }
}
