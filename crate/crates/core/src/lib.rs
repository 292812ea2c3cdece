//! Simulation and analysis of superbunching pseudothermal light.
//!
//! - [`coherence`]: closed-form g3 of `n` cascaded pseudothermal stages, the
//!   `(N!)^n` zero-delay law and a permutation-sum cross-check.
//! - [`source`] and [`simulation`]: Monte-Carlo photon streams for three
//!   detectors behind a 1:1:1 splitter.
//! - [`coincidence`]: three-fold coincidence histograms over
//!   `(t1 − t2, t2 − t3)`, normalization to g3 and slicing.
//! - [`fitting`]: least-squares extraction of `g3(0)` and bandwidth from slices.

pub mod analysis;
pub mod coherence;
pub mod coincidence;
pub mod error;
pub mod fitting;
pub mod io;
pub mod model;
pub mod parallel;
pub mod simulation;
pub mod source;

pub use error::{Error, Result};
pub use model::{PhotonStream, SliceDirection, SliceSpec, SourceConfig, TimeTuple};
pub use parallel::Execution;
