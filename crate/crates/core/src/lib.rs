//! Physics-informed neural networks with residual-ranked pseudo-labeling
//! for 1D time-dependent PDEs.

pub mod autodiff;
pub mod cli;
pub mod network;
pub mod pde;
pub mod refsolve;
pub mod selftrain;
pub mod training;
