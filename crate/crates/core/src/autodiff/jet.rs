use super::{Arith, AutodiffError, Values, Var};

pub const MAX_DIM: usize = 3;
const MAX_HESS: usize = MAX_DIM * (MAX_DIM + 1) / 2;

/// Number of stored Hessian entries for `dim` inputs (upper triangle).
pub const fn hess_len(dim: usize) -> usize {
    dim * (dim + 1) / 2
}

/// Packed upper-triangle index of Hessian entry `(i, j)`; symmetric in its arguments.
pub fn hess_index(dim: usize, i: usize, j: usize) -> usize {
    let (i, j) = if i <= j { (i, j) } else { (j, i) };
    debug_assert!(j < dim);
    i * (2 * dim - i + 1) / 2 + (j - i)
}

/// Value with exact gradient and Hessian with respect to `dim` inputs.
///
/// The Hessian is stored as its upper triangle, so `hess(i, j)` and
/// `hess(j, i)` read the same slot and symmetry holds exactly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jet<S> {
    dim: usize,
    val: S,
    grad: [S; MAX_DIM],
    hess: [S; MAX_HESS],
}

pub type Jet2 = Jet<f64>;
pub type JetVar = Jet<Var>;

impl<S: Copy> Jet<S> {
    /// Builds a jet from its components. `hess` holds the packed upper triangle.
    pub fn from_parts(dim: usize, val: S, grad: &[S], hess: &[S]) -> Self {
        assert!((1..=MAX_DIM).contains(&dim), "jet dimension {dim} unsupported");
        assert_eq!(grad.len(), dim);
        assert_eq!(hess.len(), hess_len(dim));
        // unused slots are never read; any value works as filler
        let mut g = [val; MAX_DIM];
        let mut h = [val; MAX_HESS];
        g[..dim].copy_from_slice(grad);
        h[..hess.len()].copy_from_slice(hess);
        Self { dim, val, grad: g, hess: h }
    }

    pub fn constant_with(dim: usize, val: S, zero: S) -> Self {
        Self::from_parts(dim, val, &[zero; MAX_DIM][..dim], &[zero; MAX_HESS][..hess_len(dim)])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn val(&self) -> S {
        self.val
    }
    pub fn grad(&self, i: usize) -> S {
        assert!(i < self.dim);
        self.grad[i]
    }
    pub fn hess(&self, i: usize, j: usize) -> S {
        assert!(i < self.dim && j < self.dim);
        self.hess[hess_index(self.dim, i, j)]
    }
    pub fn grads(&self) -> &[S] {
        &self.grad[..self.dim]
    }
    pub fn hess_packed(&self) -> &[S] {
        &self.hess[..hess_len(self.dim)]
    }
}

impl Jet2 {
    pub fn constant(dim: usize, val: f64) -> Self {
        Self::constant_with(dim, val, 0.0)
    }
}

/// Seeds one jet per input: jet `i` has value `values[i]`, gradient `e_i`, zero Hessian.
pub fn jet_seed(values: &[f64]) -> Result<Vec<Jet2>, AutodiffError> {
    let d = values.len();
    if !(2..=3).contains(&d) {
        return Err(AutodiffError::UnsupportedDim(d));
    }
    Ok(values
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let mut g = [0.0; MAX_DIM];
            g[i] = 1.0;
            Jet::from_parts(d, v, &g[..d], &[0.0; MAX_HESS][..hess_len(d)])
        })
        .collect())
}

fn check_same_basis<S>(a: &Jet<S>, b: &Jet<S>) {
    assert_eq!(a.dim, b.dim, "jets over different input bases");
}

pub fn jet_add<A: Arith>(ar: &mut A, a: &Jet<A::Scalar>, b: &Jet<A::Scalar>) -> Jet<A::Scalar> {
    check_same_basis(a, b);
    let mut out = *a;
    out.val = ar.add(a.val, b.val);
    for i in 0..a.dim {
        out.grad[i] = ar.add(a.grad[i], b.grad[i]);
    }
    for k in 0..hess_len(a.dim) {
        out.hess[k] = ar.add(a.hess[k], b.hess[k]);
    }
    out
}

pub fn jet_scale<A: Arith>(ar: &mut A, a: &Jet<A::Scalar>, c: f64) -> Jet<A::Scalar> {
    let mut out = *a;
    out.val = ar.scale(a.val, c);
    for i in 0..a.dim {
        out.grad[i] = ar.scale(a.grad[i], c);
    }
    for k in 0..hess_len(a.dim) {
        out.hess[k] = ar.scale(a.hess[k], c);
    }
    out
}

/// Product rule to second order:
/// `H = Ha·b + ga⊗gb + gb⊗ga + Hb·a`.
pub fn jet_mul<A: Arith>(ar: &mut A, a: &Jet<A::Scalar>, b: &Jet<A::Scalar>) -> Jet<A::Scalar> {
    check_same_basis(a, b);
    let d = a.dim;
    let mut out = *a;
    out.val = ar.mul(a.val, b.val);
    for i in 0..d {
        let l = ar.mul(a.grad[i], b.val);
        let r = ar.mul(a.val, b.grad[i]);
        out.grad[i] = ar.add(l, r);
    }
    for i in 0..d {
        for j in i..d {
            let k = hess_index(d, i, j);
            let t1 = ar.mul(a.hess[k], b.val);
            let t2 = ar.mul(a.grad[i], b.grad[j]);
            let t3 = ar.mul(b.grad[i], a.grad[j]);
            let t4 = ar.mul(b.hess[k], a.val);
            let s = ar.add(t1, t2);
            let s = ar.add(s, t3);
            out.hess[k] = ar.add(s, t4);
        }
    }
    out
}

/// `tanh` lifted to jets: with `s = tanh(a)`, `s' = 1 - s²`, `s'' = -2 s s'`.
pub fn jet_tanh<A: Arith>(ar: &mut A, a: &Jet<A::Scalar>) -> Jet<A::Scalar> {
    let d = a.dim;
    let s = ar.tanh(a.val);
    let s2 = ar.square(s);
    let neg = ar.scale(s2, -1.0);
    let d1 = ar.add_const(neg, 1.0);
    let sd1 = ar.mul(s, d1);
    let d2 = ar.scale(sd1, -2.0);
    let mut out = *a;
    out.val = s;
    for i in 0..d {
        out.grad[i] = ar.mul(d1, a.grad[i]);
    }
    for i in 0..d {
        for j in i..d {
            let k = hess_index(d, i, j);
            let lin = ar.mul(d1, a.hess[k]);
            let gg = ar.mul(a.grad[i], a.grad[j]);
            let quad = ar.mul(d2, gg);
            out.hess[k] = ar.add(lin, quad);
        }
    }
    out
}

impl Jet2 {
    pub fn tanh(&self) -> Self {
        jet_tanh(&mut Values, self)
    }
    pub fn mul(&self, other: &Self) -> Self {
        jet_mul(&mut Values, self, other)
    }
}
