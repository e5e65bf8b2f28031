//! Batched jet propagation through the network.
//!
//! Activations for a batch of `n` points are stored component-major: row
//! `c * n + p` holds component `c` (value, then input gradient entries, then
//! packed Hessian entries) of point `p`, one column per neuron. Affine maps
//! are linear in every component, so a layer is one matrix product over all
//! rows plus a bias on the value rows. The tanh rule couples components
//! pointwise.
//!
//! Every path (plain forward, jets, tape blocks) goes through [`ForwardPass`],
//! so the value component is bitwise identical across them.

use crate::autodiff::{hess_len, Jet, Jet2, JetVar, Tape, TapeBlock};

use super::{LayerShape, MlpSpec, NetworkError, ParamVector};

/// Highest input derivative carried through the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum DerivOrder {
    Value,
    First,
    Second,
}

impl DerivOrder {
    fn n_comps(self, dim: usize) -> usize {
        match self {
            DerivOrder::Value => 1,
            DerivOrder::First => 1 + dim,
            DerivOrder::Second => 1 + dim + hess_len(dim),
        }
    }
}

/// C = A·B + beta·C with explicit strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: isize,
    csa: isize,
    b: &[f64],
    rsb: isize,
    csb: isize,
    beta: f64,
    c: &mut [f64],
    rsc: isize,
    csc: isize,
) {
    if m == 0 || n == 0 {
        return;
    }
    let a_need = if k == 0 { 0 } else { (m as isize - 1) * rsa + (k as isize - 1) * csa + 1 };
    let b_need = if k == 0 { 0 } else { (k as isize - 1) * rsb + (n as isize - 1) * csb + 1 };
    let c_need = (m as isize - 1) * rsc + (n as isize - 1) * csc + 1;
    assert!(a.len() as isize >= a_need && b.len() as isize >= b_need && c.len() as isize >= c_need);
    // SAFETY: the asserts above bound every strided access inside the slices,
    // and `c` is uniquely borrowed.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            rsc,
            csc,
        );
    }
}

struct Layout {
    n: usize,
    dim: usize,
    comps: usize,
    pairs: Vec<(usize, usize)>,
}

impl Layout {
    fn new(n: usize, dim: usize, order: DerivOrder) -> Self {
        let pairs = if order == DerivOrder::Second {
            (0..dim).flat_map(|i| (i..dim).map(move |j| (i, j))).collect()
        } else {
            Vec::new()
        };
        Self { n, dim, comps: order.n_comps(dim), pairs }
    }

    fn n_grad(&self) -> usize {
        if self.comps > 1 {
            self.dim
        } else {
            0
        }
    }

    fn rows(&self) -> usize {
        self.comps * self.n
    }
}

pub(crate) struct ForwardPass {
    layout: Layout,
    shapes: Vec<LayerShape>,
    input: Vec<f64>,
    /// Pre-activation per affine map.
    z: Vec<Vec<f64>>,
    /// Post-activation per hidden layer.
    a: Vec<Vec<f64>>,
}

impl ForwardPass {
    fn run(params: &[f64], spec: &MlpSpec, inputs: &[f64], order: DerivOrder) -> Result<Self, NetworkError> {
        let dim = spec.input_dim;
        if inputs.len() % dim != 0 {
            return Err(NetworkError::DimMismatch { expected: dim, got: inputs.len() % dim });
        }
        if params.len() != spec.param_count() {
            return Err(NetworkError::DimMismatch { expected: spec.param_count(), got: params.len() });
        }
        let layout = Layout::new(inputs.len() / dim, dim, order);
        let n = layout.n;
        let mut input = vec![0.0; layout.rows() * dim];
        input[..n * dim].copy_from_slice(inputs);
        for i in 0..layout.n_grad() {
            let base = (1 + i) * n * dim;
            for p in 0..n {
                input[base + p * dim + i] = 1.0;
            }
        }

        let shapes = spec.layers();
        let rows = layout.rows();
        let mut z = Vec::with_capacity(shapes.len());
        let mut a: Vec<Vec<f64>> = Vec::with_capacity(shapes.len() - 1);
        for (l, shape) in shapes.iter().enumerate() {
            let prev = if l == 0 { &input } else { &a[l - 1] };
            let (fi, fo) = (shape.fan_in, shape.fan_out);
            let w = &params[shape.weight_offset..shape.bias_offset];
            let bias = &params[shape.bias_offset..shape.bias_offset + fo];
            let mut zl = vec![0.0; rows * fo];
            gemm(rows, fi, fo, prev, fi as isize, 1, w, 1, fi as isize, 0.0, &mut zl, fo as isize, 1);
            for row in zl[..n * fo].chunks_exact_mut(fo) {
                for (v, b) in row.iter_mut().zip(bias) {
                    *v += *b;
                }
            }
            if l + 1 < shapes.len() {
                a.push(tanh_forward(&layout, &zl, fo));
            }
            z.push(zl);
        }
        Ok(Self { layout, shapes, input, z, a })
    }

    fn outputs(&self) -> &[f64] {
        self.z.last().unwrap()
    }

    /// Accumulates the parameter gradient for output adjoints laid out like [`Self::outputs`].
    fn backward(&self, params: &[f64], out_adj: &[f64], param_adj: &mut [f64]) {
        let rows = self.layout.rows();
        let n = self.layout.n;
        let mut zbar = out_adj.to_vec();
        for l in (0..self.shapes.len()).rev() {
            let shape = self.shapes[l];
            let (fi, fo) = (shape.fan_in, shape.fan_out);
            let prev = if l == 0 { &self.input } else { &self.a[l - 1] };
            let wgrad = &mut param_adj[shape.weight_offset..shape.bias_offset];
            gemm(fo, rows, fi, &zbar, 1, fo as isize, prev, fi as isize, 1, 1.0, wgrad, fi as isize, 1);
            let bgrad = &mut param_adj[shape.bias_offset..shape.bias_offset + fo];
            for row in zbar[..n * fo].chunks_exact(fo) {
                for (g, v) in bgrad.iter_mut().zip(row) {
                    *g += *v;
                }
            }
            if l == 0 {
                break;
            }
            let w = &params[shape.weight_offset..shape.bias_offset];
            let mut abar = vec![0.0; rows * fi];
            gemm(rows, fo, fi, &zbar, fo as isize, 1, w, fi as isize, 1, 0.0, &mut abar, fi as isize, 1);
            zbar = tanh_backward(&self.layout, &abar, &self.z[l - 1], &self.a[l - 1], fi);
        }
    }
}

fn tanh_forward(lay: &Layout, z: &[f64], width: usize) -> Vec<f64> {
    let n = lay.n;
    let ng = lay.n_grad();
    let at = |c: usize, p: usize, j: usize| (c * n + p) * width + j;
    let mut out = vec![0.0; z.len()];
    for p in 0..n {
        for j in 0..width {
            let s = z[at(0, p, j)].tanh();
            let d1 = 1.0 - s * s;
            let d2 = -2.0 * (s * d1);
            out[at(0, p, j)] = s;
            for i in 0..ng {
                out[at(1 + i, p, j)] = d1 * z[at(1 + i, p, j)];
            }
            for (h, &(i, k)) in lay.pairs.iter().enumerate() {
                let c = 1 + lay.dim + h;
                let gg = z[at(1 + i, p, j)] * z[at(1 + k, p, j)];
                out[at(c, p, j)] = d1 * z[at(c, p, j)] + d2 * gg;
            }
        }
    }
    out
}

/// Pulls adjoints of tanh outputs back to its pre-activation components.
fn tanh_backward(lay: &Layout, abar: &[f64], z: &[f64], a: &[f64], width: usize) -> Vec<f64> {
    let n = lay.n;
    let ng = lay.n_grad();
    let at = |c: usize, p: usize, j: usize| (c * n + p) * width + j;
    let mut zbar = vec![0.0; z.len()];
    for p in 0..n {
        for j in 0..width {
            let s = a[at(0, p, j)];
            let d1 = 1.0 - s * s;
            let d2 = -2.0 * (s * d1);
            let mut d1bar = 0.0;
            let mut d2bar = 0.0;
            for i in 0..ng {
                let g = abar[at(1 + i, p, j)];
                zbar[at(1 + i, p, j)] = d1 * g;
                d1bar += g * z[at(1 + i, p, j)];
            }
            for (h, &(i, k)) in lay.pairs.iter().enumerate() {
                let c = 1 + lay.dim + h;
                let g = abar[at(c, p, j)];
                let (zi, zk) = (z[at(1 + i, p, j)], z[at(1 + k, p, j)]);
                zbar[at(c, p, j)] = d1 * g;
                d1bar += g * z[at(c, p, j)];
                d2bar += g * zi * zk;
                zbar[at(1 + i, p, j)] += d2 * g * zk;
                zbar[at(1 + k, p, j)] += d2 * g * zi;
            }
            let sbar = abar[at(0, p, j)] - 2.0 * s * d1bar + (6.0 * s * s - 2.0) * d2bar;
            zbar[at(0, p, j)] = sbar * d1;
        }
    }
    zbar
}

/// Network outputs for `inputs` (points concatenated, `input_dim` each), point-major.
pub fn forward_batch(params: &ParamVector, spec: &MlpSpec, inputs: &[f64]) -> Result<Vec<f64>, NetworkError> {
    Ok(ForwardPass::run(&params.values, spec, inputs, DerivOrder::Value)?.outputs().to_vec())
}

fn jets_from<S: Copy>(lay: &Layout, n_out: usize, outs: &[S], zero: S) -> Vec<Jet<S>> {
    let n = lay.n;
    let d = lay.dim;
    let hl = hess_len(d);
    let at = |c: usize, p: usize, o: usize| (c * n + p) * n_out + o;
    let mut jets = Vec::with_capacity(n * n_out);
    let mut g = vec![zero; d];
    let mut h = vec![zero; hl];
    for p in 0..n {
        for o in 0..n_out {
            for (i, gi) in g.iter_mut().enumerate() {
                *gi = if i < lay.n_grad() { outs[at(1 + i, p, o)] } else { zero };
            }
            for (k, hk) in h.iter_mut().enumerate() {
                *hk = if lay.pairs.is_empty() { zero } else { outs[at(1 + d + k, p, o)] };
            }
            jets.push(Jet::from_parts(d, outs[at(0, p, o)], &g, &h));
        }
    }
    jets
}

/// Value-only jets (no tape) for every point; index `p * output_dim + o`.
/// Components above `order` are zero.
pub fn eval_jets(
    params: &ParamVector,
    spec: &MlpSpec,
    inputs: &[f64],
    order: DerivOrder,
) -> Result<Vec<Jet2>, NetworkError> {
    let pass = ForwardPass::run(&params.values, spec, inputs, order)?;
    Ok(jets_from(&pass.layout, spec.output_dim, pass.outputs(), 0.0))
}

struct MlpBlock<'a> {
    params: &'a [f64],
    spec: MlpSpec,
    inputs: Vec<f64>,
    order: DerivOrder,
    pass: ForwardPass,
}

impl TapeBlock for MlpBlock<'_> {
    fn backward(&self, out_adj: &[f64], param_adj: &mut [f64]) {
        self.pass.backward(self.params, out_adj, param_adj);
    }

    fn recompute(&self) -> Vec<f64> {
        ForwardPass::run(self.params, &self.spec, &self.inputs, self.order)
            .map(|p| p.outputs().to_vec())
            .unwrap_or_default()
    }
}

/// Jets for every point, recorded on `tape` as one fused block whose reverse
/// rule feeds the parameter gradient. Index `p * output_dim + o`.
pub fn forward_jet_batch<'a>(
    params: &'a ParamVector,
    spec: &MlpSpec,
    inputs: &[f64],
    order: DerivOrder,
    tape: &mut Tape<'a>,
) -> Result<Vec<JetVar>, NetworkError> {
    if tape.n_params() != params.len() {
        return Err(NetworkError::DimMismatch { expected: params.len(), got: tape.n_params() });
    }
    let pass = ForwardPass::run(&params.values, spec, inputs, order)?;
    let outputs = pass.outputs().to_vec();
    let layout = Layout::new(pass.layout.n, pass.layout.dim, order);
    let block = MlpBlock { params: &params.values, spec: *spec, inputs: inputs.to_vec(), order, pass };
    let vars = tape.push_block(Box::new(block), &outputs);
    if vars.is_empty() {
        return Ok(Vec::new());
    }
    let zero = if order == DerivOrder::Second { vars[0] } else { tape.leaf(0.0) };
    Ok(jets_from(&layout, spec.output_dim, &vars, zero))
}
