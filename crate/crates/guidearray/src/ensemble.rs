// SPDX-License-Identifier: Apache-2.0

//! Disorder-ensemble Monte Carlo driver.
//!
//! Realizations are independent work items: each draws its own disorder
//! from a counter-based stream, builds the Hamiltonian, propagates the
//! input over the time grid, and contributes to compensated accumulators
//! for the mean intensity map and (optionally) the steady-window
//! intensity-intensity sums behind the correlation matrix
//!
//! ```text
//! Gamma_jk(t) = <I(j,t) I(k,t)> / (<I(j,t)> <I(k,t)>)
//! ```
//!
//! where `< >` averages over realizations and input phases; the reported
//! matrix is the average of Gamma(t) over the steady window. The lag
//! trace g(dr) averages Gamma_{j,j+dr} over the N-dr valid pairs.
//!
//! Determinism: work is split into a fixed number of batches derived from
//! the realization count alone, each batch accumulates sequentially in
//! realization order, and batches merge in index order. Results are
//! bit-identical for any rayon worker count. The same batches provide
//! Monte Carlo standard errors from batch means.
//!
//! Time is measured in units of the clean-system characteristic time
//! tau0 = 1/bandwidth by default; an optional mode rescales the grid by
//! each realization's own bandwidth instead.

use ndarray::Array2;
use rayon::prelude::*;

use crate::disorder::{self, DisorderModel, DisorderSpec, SeedPolicy};
use crate::error::{Error, Result};
use crate::evolve::{self, InputSpec, SpectralPropagator, SteppedPropagator, StateVector};
use crate::lattice::{self, ArrayConfig};

/// Number of accumulation batches; also the sample count behind the
/// batch-means standard errors.
pub const STDERR_BATCHES: usize = 16;

/// Default saturation-detector tolerance (window std over window mean).
pub const DEFAULT_SATURATION_TOL: f64 = 0.05;

/// Width of the saturation detector's sliding window, in grid time units.
pub const SATURATION_WINDOW: f64 = 50.0;

/// How grid times map onto absolute times.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimeScale {
    /// Grid times are multiples of the clean-system tau (default).
    Clean,
    /// Grid times are rescaled by each realization's own bandwidth.
    PerRealization,
}

/// Ensemble parameters.
#[derive(Debug, Clone)]
pub struct EnsembleConfig {
    /// Number of disorder realizations.
    pub realizations: usize,
    /// Sample times in units of the clean tau; strictly increasing.
    pub time_grid: Vec<f64>,
    /// Steady-state averaging window (T1, T2) in the same units.
    pub steady_window: (f64, f64),
    /// Input phases averaged per realization (pair inputs only).
    pub phase_samples: usize,
    pub seed_policy: SeedPolicy,
    pub time_scale: TimeScale,
    /// Accumulate the steady-window correlation matrix and g(dr).
    pub accumulate_correlations: bool,
    /// Norm bound that flags gain/loss runaways.
    pub norm_cap: f64,
}

/// Uniform grid of `samples` points covering [0, max].
pub fn uniform_time_grid(max: f64, samples: usize) -> Vec<f64> {
    if samples <= 1 {
        return vec![0.0];
    }
    let dt = max / (samples - 1) as f64;
    (0..samples).map(|k| k as f64 * dt).collect()
}

/// Default grid: 601 samples spanning 600 clean tau.
pub fn default_time_grid() -> Vec<f64> {
    uniform_time_grid(600.0, 601)
}

impl EnsembleConfig {
    pub fn validate(&self, input: &InputSpec) -> Result<()> {
        if self.realizations < 1 {
            return Err(Error::InvalidConfig(
                "ensemble needs at least one realization".into(),
            ));
        }
        if self.phase_samples < 1 {
            return Err(Error::InvalidConfig(
                "phase_samples must be at least 1".into(),
            ));
        }
        if self.phase_samples > 1 && matches!(input, InputSpec::Single { .. }) {
            return Err(Error::InvalidConfig(
                "phase averaging requires a pair input".into(),
            ));
        }
        if self.time_grid.is_empty() {
            return Err(Error::InvalidConfig("time grid is empty".into()));
        }
        if self
            .time_grid
            .windows(2)
            .any(|pair| !(pair[1] > pair[0]))
        {
            return Err(Error::InvalidConfig(
                "time grid must be strictly increasing".into(),
            ));
        }
        if self.time_grid[0] < 0.0 {
            return Err(Error::InvalidConfig("time grid starts before 0".into()));
        }
        let (t1, t2) = self.steady_window;
        let t_max = *self.time_grid.last().unwrap();
        if !(t1 < t2 && t2 <= t_max) {
            return Err(Error::InvalidConfig(format!(
                "steady window ({t1}, {t2}) must satisfy T1 < T2 <= {t_max}"
            )));
        }
        if !(self.norm_cap > 0.0) {
            return Err(Error::InvalidConfig("norm cap must be positive".into()));
        }
        Ok(())
    }

    /// Indices of the grid times inside the steady window.
    fn window_indices(&self) -> Vec<usize> {
        let (t1, t2) = self.steady_window;
        let eps = 1e-9 * t2.abs().max(1.0);
        self.time_grid
            .iter()
            .enumerate()
            .filter(|(_, t)| **t >= t1 - eps && **t <= t2 + eps)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Saturation diagnostic from [`detect_steady_state`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SaturationReport {
    /// Earliest grid time at which the window statistic passed, if any.
    pub time: Option<f64>,
    /// Standard deviation over the last evaluated window.
    pub window_std: f64,
    /// Mean over the last evaluated window.
    pub window_mean: f64,
}

/// Counts and scales describing one finished ensemble.
#[derive(Debug, Clone)]
pub struct RunMetadata {
    pub realizations_requested: usize,
    pub realizations_used: usize,
    pub rejected: usize,
    pub trajectories: usize,
    pub batches: usize,
    pub clean_bandwidth: f64,
    pub clean_tau: f64,
    pub sigma_abs: f64,
    pub steady_window_samples: usize,
    pub saturation: Option<SaturationReport>,
}

/// Disorder-averaged observables of one ensemble.
#[derive(Debug, Clone)]
pub struct EnsembleResult {
    /// Grid times in clean-tau units (config echo).
    pub times: Vec<f64>,
    /// Mean intensity <I(j, t)>, waveguides x times.
    pub mean_intensity: Array2<f64>,
    /// Time average of <I(j, t)> over the steady window.
    pub steady_profile: Vec<f64>,
    pub steady_profile_stderr: Vec<f64>,
    /// Steady intensity fraction in the input waveguide (single inputs).
    pub localized_fraction: Option<f64>,
    pub localized_fraction_stderr: Option<f64>,
    /// Window-averaged correlation matrix, when requested.
    pub gamma_matrix: Option<Array2<f64>>,
    /// Lag-averaged correlation g(dr), dr = 0..N-1, when requested.
    pub g_function: Option<Vec<f64>>,
    pub g_function_stderr: Option<Vec<f64>>,
    pub metadata: RunMetadata,
}

#[inline]
fn kahan_add(sum: &mut f64, comp: &mut f64, value: f64) {
    let y = value - *comp;
    let t = *sum + y;
    *comp = (t - *sum) - y;
    *sum = t;
}

/// Packed index of the unordered pair (j, k), j <= k, in an N-site array.
#[inline]
fn pair_index(n: usize, j: usize, k: usize) -> usize {
    debug_assert!(j <= k && k < n);
    j * n - j * (j + 1) / 2 + k
}

/// Per-batch compensated accumulator.
struct BatchAccumulator {
    trajectories: usize,
    used: usize,
    rejected: usize,
    last_failure: Option<String>,
    map_sum: Array2<f64>,
    map_comp: Array2<f64>,
    /// <I_j> sums on the window (possibly renormalized), n_sites x n_window.
    win_i: Vec<f64>,
    win_i_comp: Vec<f64>,
    /// <I_j I_k> sums on the window, packed pairs x n_window.
    win_ii: Vec<f64>,
    win_ii_comp: Vec<f64>,
}

impl BatchAccumulator {
    fn new(n: usize, t_len: usize, window_len: usize, correlations: bool) -> Self {
        let (wi, wii) = if correlations {
            (n * window_len, n * (n + 1) / 2 * window_len)
        } else {
            (0, 0)
        };
        Self {
            trajectories: 0,
            used: 0,
            rejected: 0,
            last_failure: None,
            map_sum: Array2::zeros((n, t_len)),
            map_comp: Array2::zeros((n, t_len)),
            win_i: vec![0.0; wi],
            win_i_comp: vec![0.0; wi],
            win_ii: vec![0.0; wii],
            win_ii_comp: vec![0.0; wii],
        }
    }

    /// Fold one trajectory's intensity map into the running sums.
    fn add_trajectory(&mut self, map: &Array2<f64>, window: &[usize], renormalize: bool) {
        let n = map.nrows();
        for ((idx, sum), comp) in self
            .map_sum
            .iter_mut()
            .enumerate()
            .zip(self.map_comp.iter_mut())
        {
            let value = map.as_slice().expect("contiguous map")[idx];
            kahan_add(sum, comp, value);
        }
        self.trajectories += 1;

        if self.win_i.is_empty() {
            return;
        }
        let window_len = window.len();
        let mut column = vec![0.0f64; n];
        for (wi, &ti) in window.iter().enumerate() {
            let mut total = 0.0;
            for j in 0..n {
                column[j] = map[[j, ti]];
                total += column[j];
            }
            if renormalize && total > 0.0 {
                for value in column.iter_mut() {
                    *value /= total;
                }
            }
            for j in 0..n {
                let at = j * window_len + wi;
                kahan_add(&mut self.win_i[at], &mut self.win_i_comp[at], column[j]);
                let row_base = pair_index(n, j, j);
                for k in j..n {
                    let at = (row_base + (k - j)) * window_len + wi;
                    kahan_add(
                        &mut self.win_ii[at],
                        &mut self.win_ii_comp[at],
                        column[j] * column[k],
                    );
                }
            }
        }
    }

    /// Merge `other` into `self`; called in fixed batch order.
    fn merge(&mut self, other: &BatchAccumulator) {
        self.trajectories += other.trajectories;
        self.used += other.used;
        self.rejected += other.rejected;
        if other.last_failure.is_some() {
            self.last_failure = other.last_failure.clone();
        }
        for ((idx, sum), comp) in self
            .map_sum
            .iter_mut()
            .enumerate()
            .zip(self.map_comp.iter_mut())
        {
            kahan_add(sum, comp, other.map_sum.as_slice().unwrap()[idx]);
            kahan_add(sum, comp, -other.map_comp.as_slice().unwrap()[idx]);
        }
        for i in 0..self.win_i.len() {
            kahan_add(&mut self.win_i[i], &mut self.win_i_comp[i], other.win_i[i]);
            kahan_add(
                &mut self.win_i[i],
                &mut self.win_i_comp[i],
                -other.win_i_comp[i],
            );
        }
        for i in 0..self.win_ii.len() {
            kahan_add(
                &mut self.win_ii[i],
                &mut self.win_ii_comp[i],
                other.win_ii[i],
            );
            kahan_add(
                &mut self.win_ii[i],
                &mut self.win_ii_comp[i],
                -other.win_ii_comp[i],
            );
        }
    }

    /// Steady profile of this accumulator alone (batch mean).
    fn steady_profile(&self, window_len_grid: &[usize]) -> Option<Vec<f64>> {
        if self.trajectories == 0 {
            return None;
        }
        let n = self.map_sum.nrows();
        let count = (self.trajectories * window_len_grid.len()) as f64;
        let mut profile = vec![0.0; n];
        for j in 0..n {
            let mut acc = 0.0;
            for &ti in window_len_grid {
                acc += self.map_sum[[j, ti]];
            }
            profile[j] = acc / count;
        }
        Some(profile)
    }

    /// Window-averaged correlation matrix of this accumulator alone.
    fn gamma(&self, n: usize, window_len: usize) -> Option<Array2<f64>> {
        if self.trajectories == 0 || self.win_i.is_empty() {
            return None;
        }
        finalize_gamma(
            n,
            window_len,
            &self.win_i,
            &self.win_ii,
            self.trajectories as f64,
        )
        .ok()
    }
}

/// Correlation matrix from accumulated second moments and means:
/// Gamma_jk = <I_j I_k> / (<I_j> <I_k>).
///
/// Errors when any mean intensity vanishes, naming the waveguide.
pub fn correlation_matrix(mean_ii: &Array2<f64>, mean_i: &[f64]) -> Result<Array2<f64>> {
    let n = mean_i.len();
    assert_eq!(mean_ii.nrows(), n);
    assert_eq!(mean_ii.ncols(), n);
    for (j, m) in mean_i.iter().enumerate() {
        if !(*m > 0.0) {
            return Err(Error::VanishingDenominator { waveguide: j + 1 });
        }
    }
    let mut gamma = Array2::zeros((n, n));
    for j in 0..n {
        for k in j..n {
            let value = mean_ii[[j, k]] / (mean_i[j] * mean_i[k]);
            gamma[[j, k]] = value;
            gamma[[k, j]] = value;
        }
    }
    Ok(gamma)
}

/// Lag trace of the correlation matrix: g(dr) averages Gamma_{j,j+dr}
/// over the N-dr pairs that exist at that lag.
pub fn correlation_function(gamma: &Array2<f64>) -> Vec<f64> {
    let n = gamma.nrows();
    (0..n)
        .map(|dr| {
            let sum: f64 = (0..n - dr).map(|j| gamma[[j, j + dr]]).sum();
            sum / (n - dr) as f64
        })
        .collect()
}

/// Steady fraction of intensity in the input waveguide, normalized by the
/// total steady intensity (the total differs from 1 for gain/loss runs).
pub fn localized_fraction(steady_profile: &[f64], input: &InputSpec) -> Result<f64> {
    let m0 = input
        .single_site()
        .ok_or(Error::FractionNeedsSingleInput)?;
    let total: f64 = steady_profile.iter().sum();
    Ok(steady_profile[m0 - 1] / total)
}

/// Earliest grid time at which the trailing window (width
/// [`SATURATION_WINDOW`] in grid units) of the input-site mean intensity
/// has standard deviation below `tol` times its window mean.
pub fn detect_steady_state(
    mean_intensity: &Array2<f64>,
    times: &[f64],
    m0: usize,
    tol: f64,
) -> SaturationReport {
    let row = mean_intensity.row(m0 - 1);
    let mut last_std = f64::NAN;
    let mut last_mean = f64::NAN;
    let mut start = 0usize;
    for (i, t_end) in times.iter().enumerate() {
        if *t_end - times[0] < SATURATION_WINDOW {
            continue;
        }
        while times[start] < t_end - SATURATION_WINDOW {
            start += 1;
        }
        let window = &row.as_slice().expect("contiguous row")[start..=i];
        if window.len() < 2 {
            continue;
        }
        let mean = window.iter().sum::<f64>() / window.len() as f64;
        let var = window
            .iter()
            .map(|x| (x - mean) * (x - mean))
            .sum::<f64>()
            / (window.len() - 1) as f64;
        let std = var.sqrt();
        last_std = std;
        last_mean = mean;
        if std <= tol * mean {
            return SaturationReport {
                time: Some(*t_end),
                window_std: std,
                window_mean: mean,
            };
        }
    }
    SaturationReport {
        time: None,
        window_std: last_std,
        window_mean: last_mean,
    }
}

fn finalize_gamma(
    n: usize,
    window_len: usize,
    win_i: &[f64],
    win_ii: &[f64],
    trajectories: f64,
) -> Result<Array2<f64>> {
    let mut gamma_sum = Array2::<f64>::zeros((n, n));
    let mut mean_i = vec![0.0f64; n];
    let mut mean_ii = Array2::<f64>::zeros((n, n));
    for wi in 0..window_len {
        for j in 0..n {
            mean_i[j] = win_i[j * window_len + wi] / trajectories;
        }
        for j in 0..n {
            for k in j..n {
                let value = win_ii[pair_index(n, j, k) * window_len + wi] / trajectories;
                mean_ii[[j, k]] = value;
                mean_ii[[k, j]] = value;
            }
        }
        let gamma_t = correlation_matrix(&mean_ii, &mean_i)?;
        gamma_sum += &gamma_t;
    }
    Ok(gamma_sum / window_len as f64)
}

/// Run a full disorder ensemble.
pub fn run_ensemble(
    array: &ArrayConfig,
    spec: &DisorderSpec,
    input: &InputSpec,
    cfg: &EnsembleConfig,
) -> Result<EnsembleResult> {
    input.validate(array.waveguides)?;
    cfg.validate(input)?;

    let n = array.waveguides;
    let clean = lattice::clean_spectrum(array)?;
    let clean_tau = clean.tau_checked()?;
    let sigma_abs = match spec.model {
        DisorderModel::None => 0.0,
        DisorderModel::TunnelingUniform => {
            // dimensionless strength; fail fast on the sign-flip guard
            let half = 3.0f64.sqrt() * spec.strength;
            if half >= 1.0 {
                return Err(Error::SignFlipPossible {
                    sigma: spec.strength,
                    half_width: half,
                });
            }
            spec.strength
        }
        _ => disorder::resolve_sigma(spec, &clean)?,
    };

    let window = cfg.window_indices();
    if cfg.accumulate_correlations && window.is_empty() {
        return Err(Error::InvalidConfig(
            "steady window contains no grid samples".into(),
        ));
    }
    let t_len = cfg.time_grid.len();
    let renormalize = spec.model == DisorderModel::PtOnSite;

    // Fixed batch structure: depends only on the realization count, so
    // accumulation order (and hence every bit of the output) is
    // independent of the worker count.
    let n_batches = cfg.realizations.min(STDERR_BATCHES);
    let ranges: Vec<(usize, usize)> = (0..n_batches)
        .map(|b| {
            (
                b * cfg.realizations / n_batches,
                (b + 1) * cfg.realizations / n_batches,
            )
        })
        .collect();

    let batch_results: Vec<Result<BatchAccumulator>> = ranges
        .par_iter()
        .map(|&(lo, hi)| {
            let mut acc =
                BatchAccumulator::new(n, t_len, window.len(), cfg.accumulate_correlations);
            for r in lo..hi {
                process_realization(
                    array,
                    spec,
                    input,
                    cfg,
                    sigma_abs,
                    clean_tau,
                    r as u64,
                    &window,
                    renormalize,
                    &mut acc,
                )?;
            }
            Ok(acc)
        })
        .collect();

    // Merge in batch order; surface the lowest-indexed hard error.
    let mut merged: Option<BatchAccumulator> = None;
    let mut batch_profiles: Vec<Vec<f64>> = Vec::with_capacity(n_batches);
    let mut batch_gammas: Vec<Array2<f64>> = Vec::new();
    for result in batch_results {
        let acc = result?;
        if let Some(profile) = acc.steady_profile(&window) {
            batch_profiles.push(profile);
        }
        if cfg.accumulate_correlations {
            if let Some(gamma) = acc.gamma(n, window.len()) {
                batch_gammas.push(gamma);
            }
        }
        match merged.as_mut() {
            Some(m) => m.merge(&acc),
            None => merged = Some(acc),
        }
    }
    let merged = merged.expect("at least one batch");

    let rejected = merged.rejected;
    if rejected as f64 > 0.01 * cfg.realizations as f64 {
        return Err(Error::TooManyRejections {
            rejected,
            total: cfg.realizations,
            percent: 100.0 * rejected as f64 / cfg.realizations as f64,
            last: merged
                .last_failure
                .unwrap_or_else(|| "unknown".into()),
        });
    }
    if merged.trajectories == 0 {
        return Err(Error::InvalidConfig(
            "no trajectories survived accumulation".into(),
        ));
    }

    let trajectories = merged.trajectories as f64;
    let mean_intensity = merged.map_sum.mapv(|s| s / trajectories);

    let window_count = (merged.trajectories * window.len()) as f64;
    let steady_profile: Vec<f64> = (0..n)
        .map(|j| {
            window
                .iter()
                .map(|&ti| merged.map_sum[[j, ti]])
                .sum::<f64>()
                / window_count
        })
        .collect();
    let steady_profile_stderr = column_stderr(&batch_profiles, n);

    let (localized, localized_stderr) = match input.single_site() {
        Some(_) => {
            let fraction = localized_fraction(&steady_profile, input)?;
            let batch_fractions: Vec<f64> = batch_profiles
                .iter()
                .filter_map(|p| localized_fraction(p, input).ok())
                .collect();
            (Some(fraction), Some(scalar_stderr(&batch_fractions)))
        }
        None => (None, None),
    };

    let (gamma_matrix, g_function, g_stderr) = if cfg.accumulate_correlations {
        let gamma = finalize_gamma(
            n,
            window.len(),
            &merged.win_i,
            &merged.win_ii,
            trajectories,
        )?;
        let g = correlation_function(&gamma);
        let batch_gs: Vec<Vec<f64>> = batch_gammas.iter().map(correlation_function).collect();
        let g_err = column_stderr(&batch_gs, n);
        (Some(gamma), Some(g), Some(g_err))
    } else {
        (None, None, None)
    };

    let saturation = input.single_site().map(|m0| {
        detect_steady_state(&mean_intensity, &cfg.time_grid, m0, DEFAULT_SATURATION_TOL)
    });

    Ok(EnsembleResult {
        times: cfg.time_grid.clone(),
        mean_intensity,
        steady_profile,
        steady_profile_stderr,
        localized_fraction: localized,
        localized_fraction_stderr: localized_stderr,
        gamma_matrix,
        g_function,
        g_function_stderr: g_stderr,
        metadata: RunMetadata {
            realizations_requested: cfg.realizations,
            realizations_used: merged.used,
            rejected,
            trajectories: merged.trajectories,
            batches: n_batches,
            clean_bandwidth: clean.bandwidth,
            clean_tau,
            sigma_abs,
            steady_window_samples: window.len(),
            saturation,
        },
    })
}

#[allow(clippy::too_many_arguments)]
fn process_realization(
    array: &ArrayConfig,
    spec: &DisorderSpec,
    input: &InputSpec,
    cfg: &EnsembleConfig,
    sigma_abs: f64,
    clean_tau: f64,
    r: u64,
    window: &[usize],
    renormalize: bool,
    acc: &mut BatchAccumulator,
) -> Result<()> {
    let n = array.waveguides;
    let realization =
        disorder::sample_realization(spec, array, sigma_abs, &cfg.seed_policy, r)?;
    let h = lattice::build_hamiltonian(array, &realization)?;

    let inputs: Vec<StateVector> = (0..cfg.phase_samples)
        .map(|i| {
            let spec_i = if cfg.phase_samples == 1 {
                *input
            } else {
                input.with_theta(std::f64::consts::TAU * i as f64 / cfg.phase_samples as f64)
            };
            evolve::make_input(&spec_i, n)
        })
        .collect::<Result<_>>()?;

    if h.hermitian {
        let propagator = SpectralPropagator::new(&h)?;
        let tau = match cfg.time_scale {
            TimeScale::Clean => clean_tau,
            TimeScale::PerRealization => {
                let bw = propagator.bandwidth();
                if !(bw > 0.0) {
                    return Err(Error::DegenerateBandwidth);
                }
                1.0 / bw
            }
        };
        let times_abs: Vec<f64> = cfg.time_grid.iter().map(|t| t * tau).collect();
        for psi0 in &inputs {
            let map = propagator.intensity_map(psi0, &times_abs);
            acc.add_trajectory(&map, window, renormalize);
        }
        acc.used += 1;
    } else {
        let tau = match cfg.time_scale {
            TimeScale::Clean => clean_tau,
            TimeScale::PerRealization => lattice::spectrum(&h)?.tau_checked()?,
        };
        let times_abs: Vec<f64> = cfg.time_grid.iter().map(|t| t * tau).collect();
        let steps = times_abs.len() - 1;
        let maps = (|| -> Result<Vec<Array2<f64>>> {
            let mut maps = Vec::with_capacity(inputs.len());
            if steps == 0 {
                for psi0 in &inputs {
                    let state = evolve::propagate_pt(&h, psi0, times_abs[0], cfg.norm_cap)?;
                    let mut map = Array2::zeros((n, 1));
                    for j in 0..n {
                        map[[j, 0]] = state.amps[j].norm_sqr();
                    }
                    maps.push(map);
                }
                return Ok(maps);
            }
            let dt = times_abs[1] - times_abs[0];
            let stepper = SteppedPropagator::new(&h, dt, cfg.norm_cap)?;
            for psi0 in &inputs {
                let start = if times_abs[0] == 0.0 {
                    psi0.clone()
                } else {
                    evolve::propagate_pt(&h, psi0, times_abs[0], cfg.norm_cap)?
                };
                maps.push(stepper.intensity_map(&start, steps)?);
            }
            Ok(maps)
        })();
        match maps {
            Ok(maps) => {
                for map in &maps {
                    acc.add_trajectory(map, window, renormalize);
                }
                acc.used += 1;
            }
            Err(err @ Error::PtBrokenRunaway { .. }) => {
                // excluded realization; the budget check runs at merge time
                acc.rejected += 1;
                acc.last_failure = Some(err.to_string());
            }
            Err(other) => return Err(other),
        }
    }
    Ok(())
}

/// Batch-means standard error per column of a set of equal-length rows.
fn column_stderr(batch_rows: &[Vec<f64>], n: usize) -> Vec<f64> {
    let b = batch_rows.len();
    if b < 2 {
        return vec![0.0; n];
    }
    (0..n)
        .map(|j| {
            let mean = batch_rows.iter().map(|row| row[j]).sum::<f64>() / b as f64;
            let var = batch_rows
                .iter()
                .map(|row| (row[j] - mean) * (row[j] - mean))
                .sum::<f64>()
                / (b - 1) as f64;
            (var / b as f64).sqrt()
        })
        .collect()
}

fn scalar_stderr(batch_values: &[f64]) -> f64 {
    let b = batch_values.len();
    if b < 2 {
        return 0.0;
    }
    let mean = batch_values.iter().sum::<f64>() / b as f64;
    let var = batch_values
        .iter()
        .map(|x| (x - mean) * (x - mean))
        .sum::<f64>()
        / (b - 1) as f64;
    (var / b as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::disorder::Realization;
    use ndarray::array;

    fn base_config(realizations: usize, seed: u64) -> EnsembleConfig {
        EnsembleConfig {
            realizations,
            time_grid: uniform_time_grid(20.0, 41),
            steady_window: (10.0, 20.0),
            phase_samples: 1,
            seed_policy: SeedPolicy { master_seed: seed },
            time_scale: TimeScale::Clean,
            accumulate_correlations: false,
            norm_cap: evolve::DEFAULT_NORM_CAP,
        }
    }

    fn array_cfg(n: usize, alpha: f64) -> ArrayConfig {
        ArrayConfig::new(n, alpha, 1.0).unwrap()
    }

    #[test]
    fn single_clean_realization_reproduces_the_trajectory() {
        let array = array_cfg(7, 0.0);
        let input = InputSpec::Single { m0: 3 };
        let cfg = base_config(1, 0);
        let result = run_ensemble(&array, &DisorderSpec::none(), &input, &cfg).unwrap();

        let h = lattice::build_hamiltonian(&array, &Realization::clean()).unwrap();
        let propagator = SpectralPropagator::new(&h).unwrap();
        let clean_tau = lattice::clean_spectrum(&array).unwrap().tau.unwrap();
        let times_abs: Vec<f64> = cfg.time_grid.iter().map(|t| t * clean_tau).collect();
        let psi0 = evolve::make_input(&input, 7).unwrap();
        let expect = propagator.intensity_map(&psi0, &times_abs);

        assert_eq!(result.mean_intensity, expect);
        assert_eq!(result.metadata.trajectories, 1);
        assert_eq!(result.metadata.rejected, 0);
    }

    #[test]
    fn deterministic_run_yields_all_ones_correlations() {
        let array = array_cfg(3, 0.0);
        let input = InputSpec::Single { m0 : 1 };
        let mut cfg = base_config(1, 0);
        cfg.accumulate_correlations = true;
        let result = run_ensemble(&array, &DisorderSpec::none(), &input, &cfg).unwrap();
        let gamma = result.gamma_matrix.unwrap();
        for value in gamma.iter() {
            assert!((value - 1.0).abs() < 1e-12, "gamma entry {value}");
        }
        let g = result.g_function.unwrap();
        for value in g {
            assert!((value - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn correlation_matrix_matches_hand_computed_two_sample_average() {
        // realizations I1 = (1, 0), I2 = (0, 1):
        // <I_1> = <I_2> = 0.5, <I_1 I_1> = 0.5, <I_1 I_2> = 0.
        let mean_ii = array![[0.5, 0.0], [0.0, 0.5]];
        let mean_i = [0.5, 0.5];
        let gamma = correlation_matrix(&mean_ii, &mean_i).unwrap();
        assert!((gamma[[0, 0]] - 2.0).abs() < 1e-15);
        assert!((gamma[[1, 1]] - 2.0).abs() < 1e-15);
        assert_eq!(gamma[[0, 1]], 0.0);
        assert_eq!(gamma[[1, 0]], 0.0);
    }

    #[test]
    fn correlation_matrix_rejects_vanishing_means() {
        let mean_ii = array![[1.0, 0.0], [0.0, 0.0]];
        let err = correlation_matrix(&mean_ii, &[0.5, 0.0]).unwrap_err();
        assert!(matches!(err, Error::VanishingDenominator { waveguide: 2 }));
    }

    #[test]
    fn correlation_function_handles_uniform_and_diagonal_matrices() {
        let ones = Array2::from_elem((4, 4), 1.0);
        assert!(correlation_function(&ones).iter().all(|g| (g - 1.0).abs() < 1e-15));

        let diag = Array2::from_diag_elem(4, 2.0);
        let g = correlation_function(&diag);
        assert_eq!(g[0], 2.0);
        assert!(g[1..].iter().all(|v| *v == 0.0));

        // the largest lag averages exactly one pair, (1, N)
        let mut m = Array2::from_elem((3, 3), 1.0);
        m[[0, 2]] = 7.0;
        let g = correlation_function(&m);
        assert_eq!(g[2], 7.0);
    }

    #[test]
    fn localized_fraction_requires_single_input_and_normalizes() {
        let profile = [0.2, 0.6, 0.2];
        let f = localized_fraction(&profile, &InputSpec::Single { m0: 2 }).unwrap();
        assert!((f - 0.6).abs() < 1e-15);

        // gain/loss profiles need not sum to one
        let profile = [0.4, 1.2, 0.4];
        let f = localized_fraction(&profile, &InputSpec::Single { m0: 2 }).unwrap();
        assert!((f - 0.6).abs() < 1e-15);

        let err = localized_fraction(
            &profile,
            &InputSpec::Pair {
                p: 1,
                q: 2,
                theta: 0.0,
            },
        )
        .unwrap_err();
        assert!(matches!(err, Error::FractionNeedsSingleInput));
    }

    #[test]
    fn time_zero_grid_gives_unit_fraction() {
        let array = array_cfg(9, 0.0);
        let input = InputSpec::Single { m0 : 5 };
        let cfg = EnsembleConfig {
            time_grid: vec![0.0, 1e-9],
            steady_window: (0.0, 1e-9),
            ..base_config(4, 3)
        };
        let spec = DisorderSpec::new(DisorderModel::OnSiteGaussian, 0.1).unwrap();
        let result = run_ensemble(&array, &spec, &input, &cfg).unwrap();
        assert!((result.localized_fraction.unwrap() - 1.0).abs() < 1e-8);
    }

    #[test]
    fn clean_uniform_array_spreads_ballistically() {
        let array = array_cfg(60, 0.0);
        let input = InputSpec::Single { m0 : 30 };
        let cfg = EnsembleConfig {
            time_grid: uniform_time_grid(600.0, 301),
            steady_window: (500.0, 600.0),
            ..base_config(1, 0)
        };
        let result = run_ensemble(&array, &DisorderSpec::none(), &input, &cfg).unwrap();
        let fraction = result.localized_fraction.unwrap();
        assert!(fraction < 5.0 / 60.0, "clean fraction {fraction} not ballistic");
    }

    #[test]
    fn hermitian_ensembles_conserve_total_intensity() {
        let array = array_cfg(10, 1.0);
        let input = InputSpec::Single { m0 : 4 };
        let spec = DisorderSpec::new(DisorderModel::OnSiteGaussian, 0.3).unwrap();
        let result = run_ensemble(&array, &spec, &input, &base_config(25, 11)).unwrap();
        for ti in 0..result.times.len() {
            let total: f64 = result.mean_intensity.column(ti).sum();
            assert!((total - 1.0).abs() < 1e-10, "t index {ti}: {total}");
        }
    }

    #[test]
    fn results_are_bitwise_identical_across_worker_counts() {
        let array = array_cfg(10, 0.5);
        let input = InputSpec::Pair {
            p: 4,
            q: 7,
            theta: 0.0,
        };
        let spec = DisorderSpec::new(DisorderModel::OnSiteGaussian, 0.2).unwrap();
        let mut cfg = base_config(37, 123);
        cfg.phase_samples = 4;
        cfg.accumulate_correlations = true;

        let run_with_threads = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap();
            pool.install(|| run_ensemble(&array, &spec, &input, &cfg).unwrap())
        };
        let serial = run_with_threads(1);
        let parallel = run_with_threads(8);

        assert_eq!(serial.mean_intensity, parallel.mean_intensity);
        assert_eq!(serial.steady_profile, parallel.steady_profile);
        assert_eq!(serial.gamma_matrix.unwrap(), parallel.gamma_matrix.unwrap());
        assert_eq!(serial.g_function.unwrap(), parallel.g_function.unwrap());
    }

    #[test]
    fn gamma_is_exactly_symmetric_with_unit_floor_diagonal() {
        let array = array_cfg(8, 0.0);
        let input = InputSpec::Pair {
            p: 4,
            q: 5,
            theta: 0.0,
        };
        let spec = DisorderSpec::new(DisorderModel::TunnelingUniform, 0.05).unwrap();
        let mut cfg = base_config(64, 7);
        cfg.phase_samples = 4;
        cfg.accumulate_correlations = true;
        let result = run_ensemble(&array, &spec, &input, &cfg).unwrap();
        let gamma = result.gamma_matrix.unwrap();
        for j in 0..8 {
            assert!(gamma[[j, j]] >= 1.0 - 1e-12, "diagonal {}", gamma[[j, j]]);
            for k in 0..8 {
                assert_eq!(gamma[[j, k]].to_bits(), gamma[[k, j]].to_bits());
            }
        }
    }

    #[test]
    fn mirrored_inputs_give_mirrored_statistics() {
        let array = array_cfg(12, 1.0);
        let spec = DisorderSpec::new(DisorderModel::OnSiteGaussian, 0.1).unwrap();
        let cfg_a = EnsembleConfig {
            time_grid: uniform_time_grid(100.0, 101),
            steady_window: (60.0, 100.0),
            ..base_config(200, 5)
        };
        let a = run_ensemble(&array, &spec, &InputSpec::Single { m0: 3 }, &cfg_a).unwrap();
        let cfg_b = EnsembleConfig {
            seed_policy: SeedPolicy { master_seed: 6 },
            ..cfg_a
        };
        let b = run_ensemble(&array, &spec, &InputSpec::Single { m0: 10 }, &cfg_b).unwrap();
        for j in 0..12 {
            let diff = (a.steady_profile[j] - b.steady_profile[11 - j]).abs();
            let tol = 3.0
                * (a.steady_profile_stderr[j].powi(2) + b.steady_profile_stderr[11 - j].powi(2))
                    .sqrt()
                + 1e-9;
            assert!(diff < tol, "j={j}: diff {diff} tol {tol}");
        }
    }

    #[test]
    fn rabi_oscillation_never_saturates() {
        let array = array_cfg(2, 0.0);
        let input = InputSpec::Single { m0: 1 };
        let cfg = EnsembleConfig {
            time_grid: uniform_time_grid(400.0, 801),
            steady_window: (300.0, 400.0),
            ..base_config(1, 0)
        };
        let result = run_ensemble(&array, &DisorderSpec::none(), &input, &cfg).unwrap();
        let report = result.metadata.saturation.unwrap();
        assert!(report.time.is_none(), "undamped oscillation saturated");
        assert!(report.window_std > DEFAULT_SATURATION_TOL * report.window_mean);
    }

    #[test]
    fn strong_disorder_freezes_immediately() {
        let array = array_cfg(30, 0.0);
        let input = InputSpec::Single { m0: 15 };
        let spec = DisorderSpec::new(DisorderModel::OnSiteGaussian, 5.0).unwrap();
        let cfg = EnsembleConfig {
            time_grid: uniform_time_grid(400.0, 401),
            steady_window: (300.0, 400.0),
            ..base_config(300, 17)
        };
        let result = run_ensemble(&array, &spec, &input, &cfg).unwrap();
        let report = result.metadata.saturation.unwrap();
        let time = report.time.expect("strong disorder should saturate");
        assert!(
            time <= 120.0,
            "saturation at {time}, expected close to the window width"
        );
        assert!(result.localized_fraction.unwrap() > 0.3);
    }

    #[test]
    fn broken_gain_loss_realizations_fail_the_rejection_budget() {
        let array = array_cfg(2, 0.0);
        let input = InputSpec::Single { m0: 1 };
        // sigma >> C0: almost every draw has |gamma| > C0 and runs away
        let spec = DisorderSpec::new(DisorderModel::PtOnSite, 5.0).unwrap();
        let cfg = EnsembleConfig {
            time_grid: uniform_time_grid(40.0, 81),
            steady_window: (20.0, 40.0),
            ..base_config(50, 2)
        };
        let err = run_ensemble(&array, &spec, &input, &cfg).unwrap_err();
        assert!(matches!(err, Error::TooManyRejections { .. }), "{err:?}");
    }

    #[test]
    fn phase_samples_demand_pair_inputs() {
        let array = array_cfg(5, 0.0);
        let input = InputSpec::Single { m0: 2 };
        let mut cfg = base_config(2, 0);
        cfg.phase_samples = 4;
        let err = run_ensemble(&array, &DisorderSpec::none(), &input, &cfg).unwrap_err();
        assert!(matches!(err, Error::InvalidConfig(_)));
    }

    #[test]
    fn per_realization_rescaling_runs_and_differs_from_clean() {
        let array = array_cfg(10, 0.0);
        let input = InputSpec::Single { m0: 5 };
        let spec = DisorderSpec::new(DisorderModel::OnSiteGaussian, 0.5).unwrap();
        let clean_cfg = base_config(20, 9);
        let rescaled_cfg = EnsembleConfig {
            time_scale: TimeScale::PerRealization,
            ..clean_cfg.clone()
        };
        let a = run_ensemble(&array, &spec, &input, &clean_cfg).unwrap();
        let b = run_ensemble(&array, &spec, &input, &rescaled_cfg).unwrap();
        assert_ne!(a.mean_intensity, b.mean_intensity);
    }
}
