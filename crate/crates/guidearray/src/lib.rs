// SPDX-License-Identifier: Apache-2.0

//! Light dynamics in finite arrays of evanescently coupled waveguides
//! with a tunable, parity-symmetric coupling profile.
//!
//! The crate simulates tight-binding propagation under three disorder
//! classes (Hermitian on-site, Hermitian tunneling-rate, and balanced
//! gain/loss on-site), averages intensities over large disorder
//! ensembles, and extracts localization and intensity-correlation
//! observables. The [`runner`] module drives complete experiments from a
//! TOML description and writes CSV observables; the `guidearray` binary
//! is a thin CLI over it.
//!
//! Determinism is a design constraint throughout: every realization draws
//! from a counter-based random stream keyed by `(master_seed,
//! realization_index)`, and ensemble reductions run in a fixed order, so
//! results are bit-identical for any worker count.

pub mod disorder;
pub mod ensemble;
mod error;
pub mod evolve;
pub mod lattice;
mod linalg;
pub mod runner;

pub use error::{Error, Result};
