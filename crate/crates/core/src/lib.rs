//! Twisted Dirac operators along maps from flat spin tori into embedded
//! targets, kernel projections, constraint spinors and the alpha-regularized
//! Dirac-harmonic map heat flow.
//!
//! The crate is organized bottom-up:
//!
//! - [`target`]: closed-form geometry of the embedded targets (round spheres,
//!   Clifford tori).
//! - [`domain`]: the flat torus with its four spin structures, plain spinors,
//!   Clifford multiplication and the untwisted Dirac operator.
//! - [`twisted`]: maps, twisted spinors, the Dirac operator along a map, its
//!   spectrum and kernel projections.
//! - [`transport`]: parallel transport of twisted spinors between maps and
//!   the constraint spinor.
//! - [`flow`]: the heat flow itself with its energy diagnostics.
//! - [`index`]: exact integer index arithmetic and spectral flow along
//!   homotopies.
//! - [`config`], [`cli`], [`verify`]: configuration files, file outputs and
//!   the self-check suite behind the `dhm` binary.

pub mod cli;
pub mod config;
pub mod domain;
pub mod error;
pub mod flow;
pub mod index;
pub mod linalg;
pub mod lobpcg;
pub mod target;
pub mod transport;
pub mod twisted;
pub mod verify;

pub use error::{Error, Result};
pub use num_complex::Complex64 as C64;
