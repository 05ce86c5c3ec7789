// SPDX-License-Identifier: Apache-2.0

//! Waveguide-array lattices with a parity-symmetric tunneling profile.
//!
//! An array of N coupled single-mode waveguides maps onto a tridiagonal
//! tight-binding Hamiltonian: on-site propagation constants beta_j on the
//! diagonal and nearest-neighbour couplings C(j) off it. The clean coupling
//! profile used throughout is
//!
//! ```text
//! C_alpha(j) = C0 * [j (N - j)]^(alpha/2),   j = 1..N-1
//! ```
//!
//! which is symmetric under j -> N - j. Energies are measured in units of
//! C0 and hbar is set to 1, so the spectral bandwidth fixes the natural
//! time-scale tau = 1/bandwidth.

use ndarray::Array2;
use num_complex::Complex64;

use crate::disorder::Realization;
use crate::error::{Error, Result};
use crate::linalg;

/// Static description of a clean array: site count, tunneling exponent,
/// and the base tunneling rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArrayConfig {
    /// Number of waveguides N.
    pub waveguides: usize,
    /// Tunneling exponent alpha; 0 gives a uniform array.
    pub alpha: f64,
    /// Base tunneling rate C0 > 0, in units of inverse time.
    pub c0: f64,
}

impl ArrayConfig {
    pub fn new(waveguides: usize, alpha: f64, c0: f64) -> Result<Self> {
        if waveguides < 1 {
            return Err(Error::InvalidConfig(
                "array needs at least one waveguide".into(),
            ));
        }
        if !alpha.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "tunneling exponent alpha = {alpha} is not finite"
            )));
        }
        if !(c0 > 0.0 && c0.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "base tunneling rate c0 = {c0} must be positive and finite"
            )));
        }
        Ok(Self {
            waveguides,
            alpha,
            c0,
        })
    }
}

/// Clean nearest-neighbour coupling rates, `rates[j-1] = C_alpha(j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TunnelingProfile {
    pub rates: Vec<f64>,
}

/// Evaluate the parity-symmetric tunneling profile.
///
/// Mirror entries are assigned from one evaluation so the parity symmetry
/// `rates[j] == rates[N-j]` holds bitwise.
pub fn build_tunneling(config: &ArrayConfig) -> Result<TunnelingProfile> {
    let n = config.waveguides;
    if n < 2 {
        return Err(Error::NoCouplings);
    }
    let mut rates = vec![0.0f64; n - 1];
    for j in 1..=n / 2 {
        let rate = config.c0 * ((j * (n - j)) as f64).powf(config.alpha / 2.0);
        rates[j - 1] = rate;
        rates[n - j - 1] = rate;
    }
    Ok(TunnelingProfile { rates })
}

/// One realization's tridiagonal Hamiltonian.
///
/// The off-diagonal couplings are real and symmetric; the diagonal is
/// complex to accommodate balanced gain/loss terms. `hermitian` is false
/// exactly when any gain/loss entry is nonzero.
#[derive(Debug, Clone)]
pub struct HamiltonianMatrix {
    pub dim: usize,
    pub diag: Vec<Complex64>,
    pub offdiag: Vec<f64>,
    pub hermitian: bool,
}

impl HamiltonianMatrix {
    /// Dense representation, used by the matrix-exponential path and tests.
    pub fn dense(&self) -> Array2<Complex64> {
        let n = self.dim;
        let mut m = Array2::zeros((n, n));
        for i in 0..n {
            m[[i, i]] = self.diag[i];
            if i < n - 1 {
                m[[i, i + 1]] = Complex64::new(self.offdiag[i], 0.0);
                m[[i + 1, i]] = Complex64::new(self.offdiag[i], 0.0);
            }
        }
        m
    }

    /// Real tridiagonal view (diagonal, couplings); only for Hermitian
    /// matrices, whose diagonal has no imaginary part by construction.
    pub fn real_tridiagonal(&self) -> Option<(Vec<f64>, Vec<f64>)> {
        if !self.hermitian {
            return None;
        }
        let diag = self.diag.iter().map(|z| z.re).collect();
        Some((diag, self.offdiag.clone()))
    }
}

/// Assemble the Hamiltonian for one disorder realization.
///
/// `realization` carries up to three lists: on-site shifts `beta` (length
/// N), tunneling scale factors minus one `delta` (length N-1), and gain
/// magnitudes `gamma` (length floor(N/2)) applied as +i*gamma_m on site m
/// and -i*gamma_m on its mirror N+1-m. Lists not used by the active
/// disorder model are empty.
pub fn build_hamiltonian(
    config: &ArrayConfig,
    realization: &Realization,
) -> Result<HamiltonianMatrix> {
    let n = config.waveguides;
    if !realization.beta.is_empty() && realization.beta.len() != n {
        return Err(Error::InvalidConfig(format!(
            "on-site list has {} entries for {} waveguides",
            realization.beta.len(),
            n
        )));
    }
    if !realization.delta.is_empty() && realization.delta.len() != n.saturating_sub(1) {
        return Err(Error::InvalidConfig(format!(
            "tunneling-disorder list has {} entries for {} couplings",
            realization.delta.len(),
            n.saturating_sub(1)
        )));
    }
    if !realization.gamma.is_empty() && realization.gamma.len() != n / 2 {
        return Err(Error::InvalidConfig(format!(
            "gain/loss list has {} entries for {} mirror pairs",
            realization.gamma.len(),
            n / 2
        )));
    }

    let mut offdiag = if n >= 2 {
        build_tunneling(config)?.rates
    } else {
        Vec::new()
    };
    if !realization.delta.is_empty() {
        for (j, (rate, delta)) in offdiag.iter_mut().zip(&realization.delta).enumerate() {
            let factor = 1.0 + delta;
            if factor <= 0.0 {
                return Err(Error::TunnelingSignFlip {
                    index: j,
                    value: factor,
                });
            }
            *rate *= factor;
        }
    }

    let mut diag = vec![Complex64::new(0.0, 0.0); n];
    for (site, beta) in realization.beta.iter().enumerate() {
        diag[site].re = *beta;
    }
    for (m, gamma) in realization.gamma.iter().enumerate() {
        // site m (0-based) gains, its mirror N-1-m loses
        diag[m].im += gamma;
        diag[n - 1 - m].im -= gamma;
    }
    let hermitian = realization.gamma.iter().all(|g| *g == 0.0);

    Ok(HamiltonianMatrix {
        dim: n,
        diag,
        offdiag,
        hermitian,
    })
}

/// Eigenvalues of one Hamiltonian, real for the Hermitian path and
/// complex for the gain/loss path.
#[derive(Debug, Clone)]
pub enum Eigenvalues {
    Real(Vec<f64>),
    Complex(Vec<Complex64>),
}

impl Eigenvalues {
    pub fn real_parts(&self) -> Vec<f64> {
        match self {
            Eigenvalues::Real(v) => v.clone(),
            Eigenvalues::Complex(v) => v.iter().map(|z| z.re).collect(),
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Eigenvalues::Real(v) => v.len(),
            Eigenvalues::Complex(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Spectral summary: eigenvalues sorted ascending by real part (then
/// imaginary part), the bandwidth of the real parts, and the
/// characteristic time tau = 1/bandwidth.
///
/// `tau` is `None` for a degenerate (zero-bandwidth) spectrum such as the
/// single-waveguide array. `max_imag` is the largest eigenvalue imaginary
/// magnitude; a value materially above rounding noise marks a broken
/// gain/loss-symmetric phase, where the bandwidth of real parts is no
/// longer a meaningful time-scale.
#[derive(Debug, Clone)]
pub struct SpectrumInfo {
    pub eigenvalues: Eigenvalues,
    pub bandwidth: f64,
    pub tau: Option<f64>,
    pub max_imag: f64,
}

impl SpectrumInfo {
    pub fn is_degenerate(&self) -> bool {
        self.tau.is_none()
    }

    /// Characteristic time, or an error for degenerate spectra.
    pub fn tau_checked(&self) -> Result<f64> {
        self.tau.ok_or(Error::DegenerateBandwidth)
    }
}

/// Diagonalize one Hamiltonian.
///
/// Hermitian matrices go through the symmetric-tridiagonal QL solver;
/// non-Hermitian ones through the complex Hessenberg QR solver (a complex
/// tridiagonal matrix is already upper Hessenberg).
pub fn spectrum(h: &HamiltonianMatrix) -> Result<SpectrumInfo> {
    if let Some((diag, offdiag)) = h.real_tridiagonal() {
        let (evals, _) = linalg::tridiagonal_eigen(&diag, &offdiag, false)?;
        let bandwidth = evals.last().unwrap() - evals.first().unwrap();
        Ok(SpectrumInfo {
            eigenvalues: Eigenvalues::Real(evals),
            bandwidth,
            tau: (bandwidth > 0.0).then(|| 1.0 / bandwidth),
            max_imag: 0.0,
        })
    } else {
        let evals = linalg::hessenberg_eigenvalues(h.dense())?;
        let re_min = evals.iter().map(|z| z.re).fold(f64::INFINITY, f64::min);
        let re_max = evals.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max);
        let max_imag = evals.iter().map(|z| z.im.abs()).fold(0.0, f64::max);
        let bandwidth = re_max - re_min;
        Ok(SpectrumInfo {
            eigenvalues: Eigenvalues::Complex(evals),
            bandwidth,
            tau: (bandwidth > 0.0).then(|| 1.0 / bandwidth),
            max_imag,
        })
    }
}

/// Full spectral decomposition of a Hermitian Hamiltonian: eigenvalues
/// ascending and orthonormal eigenvectors in matching columns.
#[derive(Debug, Clone)]
pub struct SpectralDecomposition {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: Array2<f64>,
}

pub fn eigh(h: &HamiltonianMatrix) -> Result<SpectralDecomposition> {
    let (diag, offdiag) = h.real_tridiagonal().ok_or_else(|| {
        Error::InvalidConfig("spectral decomposition requires a Hermitian matrix".into())
    })?;
    let (eigenvalues, vectors) = linalg::tridiagonal_eigen(&diag, &offdiag, true)?;
    Ok(SpectralDecomposition {
        eigenvalues,
        eigenvectors: vectors.expect("vectors requested"),
    })
}

/// Clean spectrum of a configuration (no disorder).
pub fn clean_spectrum(config: &ArrayConfig) -> Result<SpectrumInfo> {
    spectrum(&build_hamiltonian(config, &Realization::clean())?)
}

/// Fitted exponent of the clean bandwidth against array size.
///
/// Doubles the array size four times starting from `config.waveguides`
/// and least-squares fits log(bandwidth) against log(N). Diagnostic: a
/// uniform array saturates (exponent near 0), alpha = 1 grows linearly,
/// and negative exponents shrink like N^(-|alpha|/2).
pub fn clean_bandwidth_scaling_check(config: &ArrayConfig) -> Result<f64> {
    if config.waveguides < 4 {
        return Err(Error::InvalidConfig(
            "bandwidth scaling sweep needs at least 4 waveguides".into(),
        ));
    }
    let sizes: Vec<usize> = (0..5).map(|k| config.waveguides << k).collect();
    let mut log_n = Vec::with_capacity(sizes.len());
    let mut log_bw = Vec::with_capacity(sizes.len());
    for n in sizes {
        let cfg = ArrayConfig::new(n, config.alpha, config.c0)?;
        let info = clean_spectrum(&cfg)?;
        log_n.push((n as f64).ln());
        log_bw.push(info.bandwidth.ln());
    }
    let k = log_n.len() as f64;
    let mean_x: f64 = log_n.iter().sum::<f64>() / k;
    let mean_y: f64 = log_bw.iter().sum::<f64>() / k;
    let sxy: f64 = log_n
        .iter()
        .zip(&log_bw)
        .map(|(x, y)| (x - mean_x) * (y - mean_y))
        .sum();
    let sxx: f64 = log_n.iter().map(|x| (x - mean_x).powi(2)).sum();
    Ok(sxy / sxx)
}
