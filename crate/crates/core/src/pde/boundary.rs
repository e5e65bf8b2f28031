use rand::Rng;

use crate::autodiff::{Arith, Jet};

use super::{BoundaryKind, PdeProblem, X};

/// One supervised term of the data loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DataTerm {
    /// Labeled value: initial, intra-domain or Dirichlet sample.
    Value { t: f64, x: f64, label: f64 },
    /// `u(t, x_lo)` against `u(t, x_hi)`.
    Periodic { t: f64 },
    /// Outflow condition `u(t, x_hi) + coeff · u_x(t, x_hi) = 0`.
    Robin { t: f64, coeff: f64 },
}

/// Boundary samples for `problem`; `n_boundary` counts boundary points, so a
/// periodic problem gets `n_boundary / 2` endpoint pairs.
pub fn boundary_terms<R: Rng>(problem: &PdeProblem, n_boundary: usize, rng: &mut R) -> Vec<DataTerm> {
    let mut t = || rng.gen_range(0.0..=problem.t_hi);
    match problem.boundary {
        BoundaryKind::Periodic => (0..n_boundary / 2).map(|_| DataTerm::Periodic { t: t() }).collect(),
        BoundaryKind::DirichletRobin { left_value, robin_coeff } => {
            let n_left = n_boundary / 2;
            let mut terms: Vec<DataTerm> = (0..n_left)
                .map(|_| DataTerm::Value { t: t(), x: problem.x_lo, label: left_value })
                .collect();
            terms.extend((n_left..n_boundary).map(|_| DataTerm::Robin { t: t(), coeff: robin_coeff }));
            terms
        }
    }
}

pub fn value_penalty<A: Arith>(ar: &mut A, u: A::Scalar, label: f64) -> A::Scalar {
    let d = ar.add_const(u, -label);
    ar.square(d)
}

/// Squared value mismatch across the periodic endpoints, plus the `u_x`
/// mismatch when `match_derivative` is set.
pub fn periodic_penalty<A: Arith>(
    ar: &mut A,
    lo: &Jet<A::Scalar>,
    hi: &Jet<A::Scalar>,
    match_derivative: bool,
) -> A::Scalar {
    let d = ar.sub(lo.val(), hi.val());
    let p = ar.square(d);
    if !match_derivative {
        return p;
    }
    let dx = ar.sub(lo.grad(X), hi.grad(X));
    let q = ar.square(dx);
    ar.add(p, q)
}

/// `|u + coeff · u_x|²` for a jet in physical units: the boundary value
/// equals the diffusive flux leaving through `x_hi`.
pub fn robin_penalty<A: Arith>(ar: &mut A, u: &Jet<A::Scalar>, coeff: f64) -> A::Scalar {
    let flux = ar.scale(u.grad(X), coeff);
    let d = ar.add(u.val(), flux);
    ar.square(d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{Jet2, Values};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn periodic_field_has_zero_penalty() {
        let f = |x: f64| (2.0 * std::f64::consts::PI * x).sin() + 0.3;
        let lo = Jet2::constant(2, f(0.0));
        let hi = Jet2::constant(2, f(1.0));
        assert!(periodic_penalty(&mut Values, &lo, &hi, false) < 1e-30);
        let lo = Jet::from_parts(2, 1.0, &[0.0, 2.0], &[0.0; 3]);
        let hi = Jet::from_parts(2, 1.0, &[0.0, 2.0], &[0.0; 3]);
        assert_eq!(periodic_penalty(&mut Values, &lo, &hi, true), 0.0);
        let hi = Jet::from_parts(2, 1.0, &[0.0, 3.0], &[0.0; 3]);
        assert_eq!(periodic_penalty(&mut Values, &lo, &hi, true), 1.0);
        assert_eq!(periodic_penalty(&mut Values, &lo, &hi, false), 0.0);
    }

    #[test]
    fn constant_one_field_on_sorption_boundaries() {
        let one = Jet2::constant(2, 1.0);
        assert_eq!(value_penalty(&mut Values, one.val(), 1.0), 0.0);
        assert_eq!(robin_penalty(&mut Values, &one, 5e-4), 1.0);
        // decaying profile with u = -D u_x
        let out = Jet::from_parts(2, 0.2, &[0.0, -400.0], &[0.0; 3]);
        assert!(robin_penalty(&mut Values, &out, 5e-4).abs() < 1e-30);
    }

    #[test]
    fn boundary_sample_layout() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let per = boundary_terms(&PdeProblem::burgers(0.01), 512, &mut rng);
        assert_eq!(per.len(), 256);
        assert!(per.iter().all(|t| matches!(t, DataTerm::Periodic { t } if (0.0..=2.0).contains(t))));
        let ds = boundary_terms(&PdeProblem::diff_sorb(5e-4), 512, &mut rng);
        assert_eq!(ds.len(), 512);
        let left = ds.iter().filter(|t| matches!(t, DataTerm::Value { x, label, .. } if *x == 0.0 && *label == 1.0)).count();
        let robin = ds.iter().filter(|t| matches!(t, DataTerm::Robin { coeff, .. } if *coeff == 5e-4)).count();
        assert_eq!((left, robin), (256, 256));
    }
}
