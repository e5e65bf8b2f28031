//! Benchmark problems: residual operators, coefficients, initial and boundary conditions.
//!
//! Jets passed to residuals are taken with respect to `(t, x)` in that order.

mod boundary;

pub use boundary::{boundary_terms, periodic_penalty, robin_penalty, value_penalty, DataTerm};

use std::f64::consts::PI;

use rand::Rng;

use crate::autodiff::{Arith, Jet};

pub const T: usize = 0;
pub const X: usize = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProblemName {
    Burgers,
    DiffReact,
    DiffSorb,
}

impl ProblemName {
    pub fn as_str(&self) -> &'static str {
        match self {
            ProblemName::Burgers => "burgers",
            ProblemName::DiffReact => "diff_react",
            ProblemName::DiffSorb => "diff_sorb",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "burgers" => Some(ProblemName::Burgers),
            "diff_react" => Some(ProblemName::DiffReact),
            "diff_sorb" => Some(ProblemName::DiffSorb),
            _ => None,
        }
    }
}

/// Freundlich sorption constants of the retardation factor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sorption {
    pub porosity: f64,
    pub bulk_density: f64,
    pub freundlich_k: f64,
    pub freundlich_n: f64,
}

impl Default for Sorption {
    fn default() -> Self {
        Self { porosity: 0.29, bulk_density: 2888.0, freundlich_k: 3.5e-4, freundlich_n: 0.875 }
    }
}

/// Lower clamp on `u` inside the retardation factor; `u^(n_f - 1)` is singular at 0.
pub const RETARDATION_U_MIN: f64 = 1e-6;

impl Sorption {
    fn prefactor(&self) -> f64 {
        (1.0 - self.porosity) / self.porosity * self.bulk_density * self.freundlich_k * self.freundlich_n
    }

    /// `R(u) = 1 + (1-φ)/φ · ρ_s · k · n_f · max(u, 1e-6)^(n_f - 1)`.
    pub fn retardation(&self, u: f64) -> f64 {
        1.0 + self.prefactor() * u.max(RETARDATION_U_MIN).powf(self.freundlich_n - 1.0)
    }

    pub fn retardation_on<A: Arith>(&self, ar: &mut A, u: A::Scalar) -> A::Scalar {
        let clamped = ar.max_const(u, RETARDATION_U_MIN);
        let pw = ar.powf(clamped, self.freundlich_n - 1.0);
        let scaled = ar.scale(pw, self.prefactor());
        ar.add_const(scaled, 1.0)
    }
}

/// Retardation factor with the default sorption constants.
pub fn retardation(u: f64) -> f64 {
    Sorption::default().retardation(u)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Equation {
    /// `u_t + u u_x - (ν/π) u_xx`
    Burgers { nu: f64 },
    /// `u_t - ν u_xx - ρ u (1 - u)`
    DiffReact { nu: f64, rho: f64 },
    /// `u_t - D / R(u) · u_xx`
    DiffSorb { diffusivity: f64, sorption: Sorption },
}

pub fn burgers_residual<A: Arith>(ar: &mut A, u: &Jet<A::Scalar>, nu: f64) -> A::Scalar {
    let adv = ar.mul(u.val(), u.grad(X));
    let visc = ar.scale(u.hess(X, X), nu / PI);
    let s = ar.add(u.grad(T), adv);
    ar.sub(s, visc)
}

pub fn diff_react_residual<A: Arith>(ar: &mut A, u: &Jet<A::Scalar>, nu: f64, rho: f64) -> A::Scalar {
    let diff = ar.scale(u.hess(X, X), nu);
    let neg = ar.scale(u.val(), -1.0);
    let one_minus = ar.add_const(neg, 1.0);
    let uu = ar.mul(u.val(), one_minus);
    let react = ar.scale(uu, rho);
    let s = ar.sub(u.grad(T), diff);
    ar.sub(s, react)
}

pub fn diff_sorb_residual<A: Arith>(ar: &mut A, u: &Jet<A::Scalar>, diffusivity: f64, sorption: &Sorption) -> A::Scalar {
    let r = sorption.retardation_on(ar, u.val());
    let inv = ar.recip(r);
    let k = ar.scale(inv, diffusivity);
    let flux = ar.mul(k, u.hess(X, X));
    ar.sub(u.grad(T), flux)
}

impl Equation {
    pub fn residual<A: Arith>(&self, ar: &mut A, u: &Jet<A::Scalar>) -> A::Scalar {
        match *self {
            Equation::Burgers { nu } => burgers_residual(ar, u, nu),
            Equation::DiffReact { nu, rho } => diff_react_residual(ar, u, nu, rho),
            Equation::DiffSorb { diffusivity, ref sorption } => diff_sorb_residual(ar, u, diffusivity, sorption),
        }
    }

    pub fn name(&self) -> ProblemName {
        match self {
            Equation::Burgers { .. } => ProblemName::Burgers,
            Equation::DiffReact { .. } => ProblemName::DiffReact,
            Equation::DiffSorb { .. } => ProblemName::DiffSorb,
        }
    }

    /// Named coefficient map (the fixed `λ` of a forward problem).
    pub fn coefficients(&self) -> Vec<(&'static str, f64)> {
        match *self {
            Equation::Burgers { nu } => vec![("nu", nu)],
            Equation::DiffReact { nu, rho } => vec![("nu", nu), ("rho", rho)],
            Equation::DiffSorb { diffusivity, sorption } => vec![
                ("diffusivity", diffusivity),
                ("porosity", sorption.porosity),
                ("bulk_density", sorption.bulk_density),
                ("freundlich_k", sorption.freundlich_k),
                ("freundlich_n", sorption.freundlich_n),
            ],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BoundaryKind {
    Periodic,
    /// `u(t, x_lo) = left_value`; outflow `u(t, x_hi) = -coeff · u_x(t, x_hi)`.
    DirichletRobin { left_value: f64, robin_coeff: f64 },
}

/// Superposition of sinusoids `Σ A_i sin(2π n_i x / L_x + φ_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SinusoidIc {
    pub amplitudes: Vec<f64>,
    pub modes: Vec<u32>,
    pub phases: Vec<f64>,
    pub length: f64,
}

pub const SINUSOID_TERMS: usize = 2;

impl SinusoidIc {
    /// `A_i ~ U[0,1]`, `n_i ~ U{1..8}`, `φ_i ~ U(0, 2π)`.
    pub fn sample<R: Rng>(rng: &mut R, length: f64) -> Self {
        assert!(length > 0.0, "domain length must be positive");
        let mut ic = Self { amplitudes: Vec::new(), modes: Vec::new(), phases: Vec::new(), length };
        for _ in 0..SINUSOID_TERMS {
            ic.amplitudes.push(rng.gen_range(0.0..=1.0));
            ic.modes.push(rng.gen_range(1..=8));
            let mut phi = 0.0;
            while phi == 0.0 {
                phi = rng.gen_range(0.0..2.0 * PI);
            }
            ic.phases.push(phi);
        }
        ic
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.amplitudes
            .iter()
            .zip(&self.modes)
            .zip(&self.phases)
            .map(|((a, &n), phi)| a * (2.0 * PI * n as f64 / self.length * x + phi).sin())
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitialCondition {
    Sinusoid(SinusoidIc),
    /// Piecewise constant over `values.len()` equal cells of `[x_lo, x_hi]`.
    Cells { values: Vec<f64>, x_lo: f64, x_hi: f64 },
    Constant(f64),
}

impl InitialCondition {
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            InitialCondition::Sinusoid(s) => s.eval(x),
            InitialCondition::Constant(c) => *c,
            InitialCondition::Cells { values, x_lo, x_hi } => {
                let n = values.len();
                let i = ((x - x_lo) / (x_hi - x_lo) * n as f64).floor();
                values[(i.max(0.0) as usize).min(n - 1)]
            }
        }
    }

    /// I.i.d. `U(0,1)` cell values.
    pub fn uniform_cells<R: Rng>(rng: &mut R, n: usize, x_lo: f64, x_hi: f64) -> Self {
        InitialCondition::Cells { values: (0..n).map(|_| rng.gen_range(0.0..1.0)).collect(), x_lo, x_hi }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PdeProblem {
    pub equation: Equation,
    pub x_lo: f64,
    pub x_hi: f64,
    pub t_hi: f64,
    pub boundary: BoundaryKind,
    /// Also penalize `u_x` mismatch across periodic endpoints.
    pub periodic_derivative: bool,
    /// Network input is `(t · s_t, x · s_x)`; residuals are formed in physical units.
    pub input_scale: [f64; 2],
}

impl PdeProblem {
    pub fn burgers(nu: f64) -> Self {
        Self {
            equation: Equation::Burgers { nu },
            x_lo: 0.0,
            x_hi: 1.0,
            t_hi: 2.0,
            boundary: BoundaryKind::Periodic,
            periodic_derivative: false,
            input_scale: [1.0, 1.0],
        }
    }

    pub fn diff_react(nu: f64, rho: f64) -> Self {
        Self {
            equation: Equation::DiffReact { nu, rho },
            x_lo: 0.0,
            x_hi: 1.0,
            t_hi: 1.0,
            boundary: BoundaryKind::Periodic,
            periodic_derivative: false,
            input_scale: [1.0, 1.0],
        }
    }

    pub fn diff_sorb(diffusivity: f64) -> Self {
        Self {
            equation: Equation::DiffSorb { diffusivity, sorption: Sorption::default() },
            x_lo: 0.0,
            x_hi: 1.0,
            t_hi: 500.0,
            boundary: BoundaryKind::DirichletRobin { left_value: 1.0, robin_coeff: diffusivity },
            periodic_derivative: false,
            input_scale: [1.0 / 500.0, 1.0],
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.x_lo < self.x_hi) {
            return Err(format!("x_lo ({}) must be below x_hi ({})", self.x_lo, self.x_hi));
        }
        if !(self.t_hi > 0.0) {
            return Err(format!("t_hi must be positive, got {}", self.t_hi));
        }
        if self.input_scale.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err("input scales must be positive and finite".into());
        }
        Ok(())
    }

    pub fn network_input(&self, t: f64, x: f64) -> [f64; 2] {
        [t * self.input_scale[0], x * self.input_scale[1]]
    }

    /// Converts a jet taken with respect to the network inputs into one taken
    /// with respect to physical `(t, x)`.
    pub fn physical_jet<A: Arith>(&self, ar: &mut A, u: &Jet<A::Scalar>) -> Jet<A::Scalar> {
        if self.input_scale == [1.0, 1.0] {
            return *u;
        }
        let s = self.input_scale;
        let g: Vec<_> = (0..2).map(|i| ar.scale(u.grad(i), s[i])).collect();
        let h = [
            ar.scale(u.hess(0, 0), s[0] * s[0]),
            ar.scale(u.hess(0, 1), s[0] * s[1]),
            ar.scale(u.hess(1, 1), s[1] * s[1]),
        ];
        Jet::from_parts(2, u.val(), &g, &h)
    }

    /// PDE residual at a point, from the network's output jet.
    pub fn residual<A: Arith>(&self, ar: &mut A, net_jet: &Jet<A::Scalar>) -> A::Scalar {
        let u = self.physical_jet(ar, net_jet);
        self.equation.residual(ar, &u)
    }

    pub fn contains(&self, t: f64, x: f64) -> bool {
        (0.0..=self.t_hi).contains(&t) && (self.x_lo..=self.x_hi).contains(&x)
    }
}
