//! Low-rank tensor solvers for high-dimensional linear kinetic equations.

pub mod basis;
pub mod cp;
pub mod config;
pub mod cp_als;
pub mod diagnostics;
pub mod error;
pub mod explicit;
pub mod ht;
pub mod implicit;
pub mod lsqr;
pub mod models;
pub mod operator;
pub mod quadrature;
pub mod runner;
pub mod serialize;

pub use basis::{BasisSpec, FactorKind, KernelCache, Pairing, C64};
pub use cp::CPTensor;
pub use error::{Error, Result};
pub use ht::HTTensor;
