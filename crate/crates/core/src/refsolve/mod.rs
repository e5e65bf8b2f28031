//! Finite-difference / finite-volume reference solutions.
//!
//! All grids are cell centered in space, `x_i = x_lo + (i + ½) Δx`, and
//! include both time endpoints, `t_j = j · t_hi / (nt - 1)`. Solvers run on
//! an internal grid `refine` times finer than the output and average back
//! down, with explicit SSP-RK2 (Heun) steps sized by a CFL bound.

mod grid;

pub use grid::{read_grid, write_grid, GridDims, GridError, GridSolution, GRID_MAGIC};

use thiserror::Error;

use crate::pde::{Equation, Sorption};

#[derive(Debug, Error, PartialEq)]
pub enum SolverError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("invalid coefficient: {0}")]
    InvalidCoefficient(String),
    #[error("unstable configuration: {needed} substeps per output interval exceed the cap of {cap}")]
    Unstable { needed: u64, cap: u64 },
    #[error("solution became non-finite at output row {row}")]
    NonFinite { row: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Internal cells per output cell.
    pub refine: usize,
    /// Fraction of the explicit stability limit used per step.
    pub cfl: f64,
    /// Upper bound on substeps per output interval.
    pub max_substeps: u64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { refine: 1, cfl: 0.9, max_substeps: 2_000_000 }
    }
}

impl SolverOptions {
    pub fn with_refine(refine: usize) -> Self {
        Self { refine, ..Self::default() }
    }
}

fn check_grid(dims: &GridDims, opts: &SolverOptions) -> Result<(), SolverError> {
    if dims.nx < 16 || dims.nt < 2 {
        return Err(SolverError::InvalidGrid(format!(
            "need nx >= 16 and nt >= 2, got {}x{}",
            dims.nx, dims.nt
        )));
    }
    if !(dims.x_lo < dims.x_hi) || !(dims.t_hi > 0.0) {
        return Err(SolverError::InvalidGrid("empty space or time extent".into()));
    }
    if opts.refine == 0 || !(opts.cfl > 0.0 && opts.cfl <= 1.0) {
        return Err(SolverError::InvalidGrid("refine must be >= 1 and cfl in (0, 1]".into()));
    }
    Ok(())
}

/// Explicit integrator shared by the three solvers.
struct Integrator<'a> {
    dims: GridDims,
    opts: SolverOptions,
    n: usize,
    /// Largest stable step for the current state.
    dt_limit: &'a dyn Fn(&[f64]) -> f64,
    rhs: &'a dyn Fn(&[f64], &mut [f64]),
}

impl Integrator<'_> {
    fn run(&self, ic: &dyn Fn(f64) -> f64) -> Result<GridSolution, SolverError> {
        let dims = self.dims;
        let dx = (dims.x_hi - dims.x_lo) / self.n as f64;
        let mut u: Vec<f64> = (0..self.n).map(|i| ic(dims.x_lo + (i as f64 + 0.5) * dx)).collect();
        let mut values = Vec::with_capacity(dims.nx * dims.nt);
        self.emit(&u, &mut values, 0)?;
        let interval = dims.t_hi / (dims.nt - 1) as f64;
        let mut k1 = vec![0.0; self.n];
        let mut u1 = vec![0.0; self.n];
        for row in 1..dims.nt {
            let limit = (self.dt_limit)(&u);
            let needed = if limit.is_finite() && limit > 0.0 { (interval / limit).ceil().max(1.0) } else { 1.0 };
            if needed > self.opts.max_substeps as f64 {
                return Err(SolverError::Unstable { needed: needed as u64, cap: self.opts.max_substeps });
            }
            let steps = needed as u64;
            let dt = interval / steps as f64;
            for _ in 0..steps {
                (self.rhs)(&u, &mut k1);
                for i in 0..self.n {
                    u1[i] = u[i] + dt * k1[i];
                }
                (self.rhs)(&u1, &mut k1);
                for i in 0..self.n {
                    u[i] = 0.5 * u[i] + 0.5 * (u1[i] + dt * k1[i]);
                }
            }
            self.emit(&u, &mut values, row)?;
        }
        Ok(GridSolution::new(dims, values).expect("solver produced a full grid"))
    }

    fn emit(&self, u: &[f64], out: &mut Vec<f64>, row: usize) -> Result<(), SolverError> {
        let r = self.opts.refine;
        for cell in u.chunks_exact(r) {
            let mean = cell.iter().sum::<f64>() / r as f64;
            if !mean.is_finite() {
                return Err(SolverError::NonFinite { row });
            }
            out.push(mean);
        }
        Ok(())
    }
}

/// Viscous Burgers `u_t + (u²/2)_x = (ν/π) u_xx`, periodic.
///
/// Conservative finite volumes with a local Lax-Friedrichs flux and a
/// central viscous term.
pub fn solve_burgers(
    ic: &dyn Fn(f64) -> f64,
    nu: f64,
    dims: GridDims,
    opts: SolverOptions,
) -> Result<GridSolution, SolverError> {
    check_grid(&dims, &opts)?;
    if !(nu > 0.0) {
        return Err(SolverError::InvalidCoefficient(format!("nu must be positive, got {nu}")));
    }
    let n = dims.nx * opts.refine;
    let dx = (dims.x_hi - dims.x_lo) / n as f64;
    let kappa = nu / std::f64::consts::PI;
    let cfl = opts.cfl;
    let dt_limit = move |u: &[f64]| {
        let a = u.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        cfl / (a / dx + 2.0 * kappa / (dx * dx))
    };
    let rhs = move |u: &[f64], out: &mut [f64]| {
        let flux = |l: f64, r: f64| 0.5 * (0.5 * l * l + 0.5 * r * r) - 0.5 * l.abs().max(r.abs()) * (r - l);
        let mut f_left = flux(u[n - 1], u[0]);
        for i in 0..n {
            let next = u[(i + 1) % n];
            let prev = u[(i + n - 1) % n];
            let f_right = flux(u[i], next);
            out[i] = -(f_right - f_left) / dx + kappa * (next - 2.0 * u[i] + prev) / (dx * dx);
            f_left = f_right;
        }
    };
    Integrator { dims, opts, n, dt_limit: &dt_limit, rhs: &rhs }.run(ic)
}

/// Diffusion-reaction `u_t = ν u_xx + ρ u (1 - u)`, periodic.
pub fn solve_diff_react(
    ic: &dyn Fn(f64) -> f64,
    nu: f64,
    rho: f64,
    dims: GridDims,
    opts: SolverOptions,
) -> Result<GridSolution, SolverError> {
    check_grid(&dims, &opts)?;
    if !(nu > 0.0) || !rho.is_finite() {
        return Err(SolverError::InvalidCoefficient(format!("need nu > 0 and finite rho, got {nu}, {rho}")));
    }
    let n = dims.nx * opts.refine;
    let dx = (dims.x_hi - dims.x_lo) / n as f64;
    let cfl = opts.cfl;
    let dt_limit = move |u: &[f64]| {
        let umax = u.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        cfl / (2.0 * nu / (dx * dx) + rho.abs() * (1.0 + 2.0 * umax))
    };
    let rhs = move |u: &[f64], out: &mut [f64]| {
        for i in 0..n {
            let next = u[(i + 1) % n];
            let prev = u[(i + n - 1) % n];
            out[i] = nu * (next - 2.0 * u[i] + prev) / (dx * dx) + rho * u[i] * (1.0 - u[i]);
        }
    };
    Integrator { dims, opts, n, dt_limit: &dt_limit, rhs: &rhs }.run(ic)
}

/// Value of the right boundary face implied by the Robin condition, given
/// the adjacent cell value: `u_b = D (u_c - u_b) / (Δx/2)`.
pub fn robin_face_value(cell: f64, diffusivity: f64, dx: f64) -> f64 {
    2.0 * diffusivity * cell / (dx + 2.0 * diffusivity)
}

/// Diffusion-sorption `u_t = D / R(u) · u_xx` with `u(t, x_lo) = left` and a
/// Robin outflow face at `x_hi`.
pub fn solve_diff_sorb(
    ic: &dyn Fn(f64) -> f64,
    diffusivity: f64,
    sorption: &Sorption,
    left: f64,
    dims: GridDims,
    opts: SolverOptions,
) -> Result<GridSolution, SolverError> {
    check_grid(&dims, &opts)?;
    if !(diffusivity > 0.0) {
        return Err(SolverError::InvalidCoefficient(format!("diffusivity must be positive, got {diffusivity}")));
    }
    let n = dims.nx * opts.refine;
    let dx = (dims.x_hi - dims.x_lo) / n as f64;
    let cfl = opts.cfl;
    let s = *sorption;
    let dt_limit = move |u: &[f64]| {
        // R decreases in u, so the fastest diffusion sits at the largest value
        let umax = u.iter().fold(left, |m, v| m.max(*v));
        let kmax = diffusivity / s.retardation(umax);
        cfl * dx * dx / (3.0 * kmax)
    };
    let rhs = move |u: &[f64], out: &mut [f64]| {
        let inv = 1.0 / (dx * dx);
        for i in 0..n {
            let k = diffusivity / s.retardation(u[i]);
            let lap = if i == 0 {
                u[1] - 3.0 * u[0] + 2.0 * left
            } else if i == n - 1 {
                let ub = robin_face_value(u[i], diffusivity, dx);
                u[i - 1] - 3.0 * u[i] + 2.0 * ub
            } else {
                u[i + 1] - 2.0 * u[i] + u[i - 1]
            };
            out[i] = k * lap * inv;
        }
    };
    Integrator { dims, opts, n, dt_limit: &dt_limit, rhs: &rhs }.run(ic)
}

/// Dispatches on the equation. Diffusion-sorption pins the left boundary at 1.
pub fn solve(
    equation: &Equation,
    ic: &dyn Fn(f64) -> f64,
    dims: GridDims,
    opts: SolverOptions,
) -> Result<GridSolution, SolverError> {
    match *equation {
        Equation::Burgers { nu } => solve_burgers(ic, nu, dims, opts),
        Equation::DiffReact { nu, rho } => solve_diff_react(ic, nu, rho, dims, opts),
        Equation::DiffSorb { diffusivity, ref sorption } => solve_diff_sorb(ic, diffusivity, sorption, 1.0, dims, opts),
    }
}

/// `‖pred - ref‖₂ / ‖ref‖₂` over every grid value.
pub fn relative_l2(pred: &GridSolution, reference: &GridSolution) -> Result<f64, GridError> {
    pred.check_same_dims(reference)?;
    let mut num = 0.0;
    let mut den = 0.0;
    for (p, r) in pred.values.iter().zip(&reference.values) {
        num += (p - r) * (p - r);
        den += r * r;
    }
    if den == 0.0 {
        return Err(GridError::ZeroReference);
    }
    Ok((num / den).sqrt())
}

pub fn mse(pred: &GridSolution, reference: &GridSolution) -> Result<f64, GridError> {
    pred.check_same_dims(reference)?;
    let sum: f64 = pred.values.iter().zip(&reference.values).map(|(p, r)| (p - r) * (p - r)).sum();
    Ok(sum / pred.values.len() as f64)
}

/// `|pred - ref|` on the same grid.
pub fn pointwise_error(pred: &GridSolution, reference: &GridSolution) -> Result<GridSolution, GridError> {
    pred.check_same_dims(reference)?;
    let values = pred.values.iter().zip(&reference.values).map(|(p, r)| (p - r).abs()).collect();
    GridSolution::new(pred.dims, values)
}
