// SPDX-License-Identifier: Apache-2.0

use thiserror::Error;

/// Errors produced by lattice construction, propagation, ensemble
/// averaging, and the experiment runner.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("no couplings in single-waveguide array")]
    NoCouplings,

    #[error("tunneling sign flip: 1 + delta[{index}] = {value} is not positive")]
    TunnelingSignFlip { index: usize, value: f64 },

    #[error("sign flip possible: uniform half-width sqrt(3)*{sigma} = {half_width} reaches 1")]
    SignFlipPossible { sigma: f64, half_width: f64 },

    #[error("degenerate spectrum: zero bandwidth, characteristic time undefined")]
    DegenerateBandwidth,

    #[error("Box-Muller input {name} = {value} outside its domain")]
    BoxMullerDomain { name: &'static str, value: f64 },

    #[error("eigensolver failed to converge: {0}")]
    EigenNonConvergence(String),

    #[error("matrix exponential failed: {0}")]
    Expm(String),

    #[error("Taylor propagator tail {tail:.3e} after {terms} terms exceeds 1e-12")]
    TaylorNonConvergence { terms: usize, tail: f64 },

    #[error(
        "PT-broken runaway: state norm {norm:.3e} exceeded cap {cap:.3e} at t = {time:.6}; \
         max |Im E| = {max_imag:.6e}"
    )]
    PtBrokenRunaway {
        norm: f64,
        cap: f64,
        time: f64,
        max_imag: f64,
    },

    #[error("waveguide index {index} out of range 1..={n}")]
    IndexOutOfRange { index: usize, n: usize },

    #[error("localized fraction requires a single-waveguide input")]
    FractionNeedsSingleInput,

    #[error("vanishing mean intensity in waveguide {waveguide}: correlation matrix undefined")]
    VanishingDenominator { waveguide: usize },

    #[error(
        "{rejected} of {total} realizations rejected ({percent:.2}%), exceeding the 1% budget; \
         last failure: {last}"
    )]
    TooManyRejections {
        rejected: usize,
        total: usize,
        percent: f64,
        last: String,
    },

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
