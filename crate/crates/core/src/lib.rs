//! Wide-network Gaussian-process limits and their leading finite-width
//! corrections.
//!
//! The crate covers NNGP kernels of fully connected networks
//! ([`kernels`]), the fourth cumulant of the output prior ([`cumulants`]),
//! GP regression with its `1/N` corrections ([`gp_inference`]), the
//! large-`n` Equivalent Kernel ([`equivalent_kernel`]) and a Langevin
//! trainer used to check all of it empirically ([`langevin`]).

pub mod cumulants;
pub mod equivalent_kernel;
pub mod error;
pub mod gp_inference;
pub mod io;
pub mod kernels;
pub mod langevin;
pub mod linalg;
pub mod quadrature;
pub mod rng;

pub use error::{Error, Result};
