// SPDX-License-Identifier: Apache-2.0

//! Time evolution of input states under one Hamiltonian realization.
//!
//! Hermitian matrices are propagated spectrally: one eigendecomposition
//! per realization, reused for every output time. Non-Hermitian gain/loss
//! matrices go through the scaling-and-squaring matrix exponential; on a
//! uniform time grid the one-step propagator U(dt) is built once and
//! applied repeatedly.
//!
//! Intensities are I(j, t) = |<j|psi(t)>|^2. Hermitian evolution conserves
//! their sum; gain/loss evolution in general does not, and a state norm
//! beyond [`DEFAULT_NORM_CAP`] is reported as a broken-symmetry runaway
//! rather than silently overflowing.

use ndarray::{Array1, Array2};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::lattice::{self, HamiltonianMatrix, SpectralDecomposition};
use crate::linalg;

/// Norm bound beyond which gain/loss propagation is treated as a
/// broken-symmetry runaway.
pub const DEFAULT_NORM_CAP: f64 = 1e12;

/// Complex amplitudes over the waveguides.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    pub amps: Array1<Complex64>,
}

impl StateVector {
    pub fn len(&self) -> usize {
        self.amps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.amps.is_empty()
    }

    /// Total intensity sum_j |amps_j|^2.
    pub fn norm_sqr(&self) -> f64 {
        self.amps.iter().map(|z| z.norm_sqr()).sum()
    }

    /// Overlap magnitude |<self|other>|.
    pub fn overlap_magnitude(&self, other: &StateVector) -> f64 {
        let inner: Complex64 = self
            .amps
            .iter()
            .zip(other.amps.iter())
            .map(|(a, b)| a.conj() * b)
            .sum();
        inner.norm()
    }
}

/// Which light is launched into the array. Indices are 1-based waveguide
/// labels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InputSpec {
    /// All light in waveguide m0.
    Single { m0: usize },
    /// (|p> + e^{i theta} |q>)/sqrt(2).
    Pair { p: usize, q: usize, theta: f64 },
}

impl InputSpec {
    pub fn validate(&self, n: usize) -> Result<()> {
        let check = |index: usize| {
            if index < 1 || index > n {
                Err(Error::IndexOutOfRange { index, n })
            } else {
                Ok(())
            }
        };
        match *self {
            InputSpec::Single { m0 } => check(m0),
            InputSpec::Pair { p, q, .. } => {
                check(p)?;
                check(q)?;
                if p == q {
                    return Err(Error::InvalidConfig(
                        "pair input needs two distinct waveguides".into(),
                    ));
                }
                Ok(())
            }
        }
    }

    /// Same input with the relative phase replaced; no-op for single-site
    /// inputs.
    pub fn with_theta(&self, theta: f64) -> Self {
        match *self {
            InputSpec::Single { m0 } => InputSpec::Single { m0 },
            InputSpec::Pair { p, q, .. } => InputSpec::Pair { p, q, theta },
        }
    }

    pub fn single_site(&self) -> Option<usize> {
        match *self {
            InputSpec::Single { m0 } => Some(m0),
            InputSpec::Pair { .. } => None,
        }
    }
}

/// Squared amplitudes per waveguide.
#[derive(Debug, Clone, PartialEq)]
pub struct IntensityProfile {
    pub values: Vec<f64>,
}

/// Build the launch state for an N-waveguide array.
pub fn make_input(spec: &InputSpec, n: usize) -> Result<StateVector> {
    spec.validate(n)?;
    let mut amps = Array1::from_elem(n, Complex64::new(0.0, 0.0));
    match *spec {
        InputSpec::Single { m0 } => {
            amps[m0 - 1] = Complex64::new(1.0, 0.0);
        }
        InputSpec::Pair { p, q, theta } => {
            let w = 1.0 / 2.0f64.sqrt();
            amps[p - 1] = Complex64::new(w, 0.0);
            amps[q - 1] = Complex64::from_polar(w, theta);
        }
    }
    Ok(StateVector { amps })
}

/// I(j) = |<j|psi>|^2.
pub fn intensity(psi: &StateVector) -> IntensityProfile {
    IntensityProfile {
        values: psi.amps.iter().map(|z| z.norm_sqr()).collect(),
    }
}

/// Spectral propagator for a Hermitian realization: psi(t) =
/// V exp(-i E t) V^T psi(0), with (E, V) computed once and reused.
#[derive(Debug, Clone)]
pub struct SpectralPropagator {
    decomposition: SpectralDecomposition,
}

impl SpectralPropagator {
    pub fn new(h: &HamiltonianMatrix) -> Result<Self> {
        Ok(Self {
            decomposition: lattice::eigh(h)?,
        })
    }

    pub fn from_decomposition(decomposition: SpectralDecomposition) -> Self {
        Self { decomposition }
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.decomposition.eigenvalues
    }

    /// Spectral bandwidth of this realization.
    pub fn bandwidth(&self) -> f64 {
        let e = &self.decomposition.eigenvalues;
        e.last().unwrap() - e.first().unwrap()
    }

    /// Evolve to a single time. `t = 0` returns the input unchanged.
    pub fn propagate(&self, psi0: &StateVector, t: f64) -> StateVector {
        if t == 0.0 {
            return psi0.clone();
        }
        let v = &self.decomposition.eigenvectors;
        let e = &self.decomposition.eigenvalues;
        let n = e.len();
        let mut modal = Array1::from_elem(n, Complex64::new(0.0, 0.0));
        for k in 0..n {
            let mut acc = Complex64::new(0.0, 0.0);
            for j in 0..n {
                acc += v[[j, k]] * psi0.amps[j];
            }
            modal[k] = acc * Complex64::from_polar(1.0, -e[k] * t);
        }
        let mut amps = Array1::from_elem(n, Complex64::new(0.0, 0.0));
        for j in 0..n {
            let mut acc = Complex64::new(0.0, 0.0);
            for k in 0..n {
                acc += v[[j, k]] * modal[k];
            }
            amps[j] = acc;
        }
        StateVector { amps }
    }

    /// Intensity map I(j, t_i) over a whole time grid, exploiting the
    /// shared eigenbasis: modal phases advance per time sample and the
    /// site amplitudes come from two real matrix products.
    pub fn intensity_map(&self, psi0: &StateVector, times: &[f64]) -> Array2<f64> {
        let v = &self.decomposition.eigenvectors;
        let e = &self.decomposition.eigenvalues;
        let n = e.len();
        let t_len = times.len();

        let psi_re = psi0.amps.mapv(|z| z.re);
        let psi_im = psi0.amps.mapv(|z| z.im);
        let c_re = v.t().dot(&psi_re);
        let c_im = v.t().dot(&psi_im);

        let mut w_re = Array2::<f64>::zeros((n, t_len));
        let mut w_im = Array2::<f64>::zeros((n, t_len));
        let step = uniform_step(times);
        for k in 0..n {
            let (cr, ci) = (c_re[k], c_im[k]);
            match step {
                Some(dt) => {
                    let (sr, si) = phase(-e[k] * times[0]);
                    let (dr, di) = phase(-e[k] * dt);
                    let (mut zr, mut zi) = (sr, si);
                    for ti in 0..t_len {
                        w_re[[k, ti]] = cr * zr - ci * zi;
                        w_im[[k, ti]] = cr * zi + ci * zr;
                        let next = zr * dr - zi * di;
                        zi = zr * di + zi * dr;
                        zr = next;
                    }
                }
                None => {
                    for (ti, t) in times.iter().enumerate() {
                        let (zr, zi) = phase(-e[k] * t);
                        w_re[[k, ti]] = cr * zr - ci * zi;
                        w_im[[k, ti]] = cr * zi + ci * zr;
                    }
                }
            }
        }

        let site_re = v.dot(&w_re);
        let site_im = v.dot(&w_im);
        let mut map = site_re.mapv(|x| x * x);
        map.zip_mut_with(&site_im, |a, b| *a += b * b);
        map
    }
}

fn phase(angle: f64) -> (f64, f64) {
    let (s, c) = angle.sin_cos();
    (c, s)
}

/// Common spacing of a uniform grid, or `None` if the grid is too short
/// or non-uniform.
fn uniform_step(times: &[f64]) -> Option<f64> {
    if times.len() < 2 {
        return None;
    }
    let dt = times[1] - times[0];
    let tol = 1e-9 * dt.abs().max(1e-300);
    for pair in times.windows(2) {
        if ((pair[1] - pair[0]) - dt).abs() > tol {
            return None;
        }
    }
    Some(dt)
}

/// One-shot propagation psi(t) = exp(-i H t) psi(0) through the dense
/// matrix exponential; works for Hermitian and gain/loss matrices alike.
///
/// A final norm above `norm_cap` is reported as a broken-symmetry
/// runaway, carrying the largest eigenvalue imaginary part.
pub fn propagate_pt(
    h: &HamiltonianMatrix,
    psi0: &StateVector,
    t: f64,
    norm_cap: f64,
) -> Result<StateVector> {
    if t == 0.0 {
        return Ok(psi0.clone());
    }
    let generator = h.dense().mapv(|z| z * Complex64::new(0.0, -t));
    let u = linalg::expm(&generator)?;
    let amps = u.dot(&psi0.amps);
    let state = StateVector { amps };
    let norm = state.norm_sqr().sqrt();
    if norm > norm_cap {
        return Err(Error::PtBrokenRunaway {
            norm,
            cap: norm_cap,
            time: t,
            max_imag: max_imag_eigenvalue(h),
        });
    }
    Ok(state)
}

/// Hermitian-path convenience mirroring [`propagate_pt`]: spectral
/// propagation from a precomputed decomposition.
pub fn propagate_hermitian(
    decomposition: &SpectralPropagator,
    psi0: &StateVector,
    t: f64,
) -> StateVector {
    decomposition.propagate(psi0, t)
}

fn max_imag_eigenvalue(h: &HamiltonianMatrix) -> f64 {
    linalg::hessenberg_eigenvalues(h.dense())
        .map(|evals| evals.iter().map(|z| z.im.abs()).fold(0.0, f64::max))
        .unwrap_or(f64::NAN)
}

/// Stepped propagator for a uniform time grid: U(dt) is built once by
/// scaling-and-squaring and applied repeatedly.
#[derive(Debug, Clone)]
pub struct SteppedPropagator {
    u_step: Array2<Complex64>,
    dt: f64,
    norm_cap: f64,
    hamiltonian: HamiltonianMatrix,
}

impl SteppedPropagator {
    pub fn new(h: &HamiltonianMatrix, dt: f64, norm_cap: f64) -> Result<Self> {
        let generator = h.dense().mapv(|z| z * Complex64::new(0.0, -dt));
        Ok(Self {
            u_step: linalg::expm(&generator)?,
            dt,
            norm_cap,
            hamiltonian: h.clone(),
        })
    }

    /// Amplitudes over the grid t = t0 + k dt for k = 0..=steps, as an
    /// N x (steps+1) complex matrix. `psi0` is the state at the first
    /// grid point.
    pub fn amplitude_map(&self, psi0: &StateVector, steps: usize) -> Result<Array2<Complex64>> {
        let n = psi0.len();
        let cap_sq = self.norm_cap * self.norm_cap;
        let mut map = Array2::from_elem((n, steps + 1), Complex64::new(0.0, 0.0));
        let mut psi = psi0.amps.clone();
        map.column_mut(0).assign(&psi);
        for k in 1..=steps {
            psi = self.u_step.dot(&psi);
            let norm_sq: f64 = psi.iter().map(|z| z.norm_sqr()).sum();
            if norm_sq > cap_sq {
                return Err(Error::PtBrokenRunaway {
                    norm: norm_sq.sqrt(),
                    cap: self.norm_cap,
                    time: k as f64 * self.dt,
                    max_imag: max_imag_eigenvalue(&self.hamiltonian),
                });
            }
            map.column_mut(k).assign(&psi);
        }
        Ok(map)
    }

    /// Intensity map for the same grid.
    pub fn intensity_map(&self, psi0: &StateVector, steps: usize) -> Result<Array2<f64>> {
        Ok(self.amplitude_map(psi0, steps)?.mapv(|z| z.norm_sqr()))
    }
}

/// Brute-force reference propagator: the truncated series
/// sum_{k<=terms} (-i H t)^k / k!.
///
/// This is the independent oracle the fast propagators are tested
/// against; it shares no code with the spectral or Padé paths. The caller
/// keeps ||H|| t small enough for the series to converge; a relative tail
/// above 1e-12 is an error.
pub mod oracle {
    use super::*;

    pub fn taylor_propagator(
        h: &HamiltonianMatrix,
        t: f64,
        terms: usize,
    ) -> Result<Array2<Complex64>> {
        let n = h.dim;
        let a = h.dense().mapv(|z| z * Complex64::new(0.0, -t));
        let mut acc = Array2::<Complex64>::eye(n);
        let mut term = Array2::<Complex64>::eye(n);
        for k in 1..=terms {
            term = term.dot(&a).mapv(|z| z / k as f64);
            acc += &term;
        }
        let tail = linalg::one_norm(&term) / linalg::one_norm(&acc).max(f64::MIN_POSITIVE);
        if tail > 1e-12 {
            return Err(Error::TaylorNonConvergence { terms, tail });
        }
        Ok(acc)
    }
}
