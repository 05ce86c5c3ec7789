// SPDX-License-Identifier: Apache-2.0

//! Disorder models and their deterministic random-number streams.
//!
//! Three models are supported:
//!
//! - `OnSiteGaussian`: Hermitian on-site shifts beta_j drawn i.i.d. from
//!   N(0, sigma^2), generated through the Box-Muller transform,
//! - `TunnelingUniform`: Hermitian scale factors 1 + delta_j on the
//!   couplings, delta_j uniform and zero-mean with std equal to the
//!   (dimensionless) strength,
//! - `PtOnSite`: balanced gain/loss magnitudes gamma_m, uniform and
//!   zero-mean on [-sqrt(3) sigma, sqrt(3) sigma] so their variance is
//!   sigma^2, mirrored onto sites m and N+1-m.
//!
//! All strengths are quoted relative to the clean-system bandwidth; see
//! [`resolve_sigma`].
//!
//! Reproducibility contract: realization r of a run draws from a
//! counter-based stream derived only from `(master_seed, r)` plus a
//! fixed per-model tag, so results do not depend on thread count or
//! execution order. The derivation is documented in the README and in
//! [`stream_rng`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::lattice::{ArrayConfig, SpectrumInfo};

/// Which disorder enters the Hamiltonian.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DisorderModel {
    None,
    OnSiteGaussian,
    TunnelingUniform,
    PtOnSite,
}

/// Disorder model plus its dimensionless strength s.
///
/// For the on-site models, s is hbar*sigma in units of the clean
/// bandwidth. For `TunnelingUniform`, s is directly the standard
/// deviation of the dimensionless scale factors delta_j.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DisorderSpec {
    pub model: DisorderModel,
    pub strength: f64,
}

impl DisorderSpec {
    pub fn new(model: DisorderModel, strength: f64) -> Result<Self> {
        if !(strength >= 0.0 && strength.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "disorder strength {strength} must be a finite nonnegative number"
            )));
        }
        if model == DisorderModel::None && strength != 0.0 {
            return Err(Error::InvalidConfig(
                "disorder strength must be 0 when no disorder model is selected".into(),
            ));
        }
        Ok(Self { model, strength })
    }

    pub fn none() -> Self {
        Self {
            model: DisorderModel::None,
            strength: 0.0,
        }
    }
}

/// One concrete disorder draw. Lists not used by the active model are
/// empty.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Realization {
    /// On-site shifts, length N.
    pub beta: Vec<f64>,
    /// Tunneling scale factors minus one, length N-1.
    pub delta: Vec<f64>,
    /// Gain magnitudes for mirror pairs, length floor(N/2).
    pub gamma: Vec<f64>,
}

impl Realization {
    /// The clean (disorder-free) realization.
    pub fn clean() -> Self {
        Self::default()
    }
}

/// Master seed for a run; per-realization streams are derived from it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedPolicy {
    pub master_seed: u64,
}

/// Sub-stream tags keeping the beta, delta, and gamma draws independent:
/// sampling one model never perturbs the stream of another.
#[derive(Debug, Clone, Copy)]
pub enum StreamKind {
    OnSite = 1,
    Tunneling = 2,
    GainLoss = 3,
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Counter-based stream for `(master_seed, realization, kind)`.
///
/// The 256-bit ChaCha seed is the output of four SplitMix64 steps, after
/// absorbing the realization index and the sub-stream tag into the
/// SplitMix state with one scrambling step each. Identical inputs give a
/// bit-identical stream on every platform, run, and thread schedule.
pub fn stream_rng(policy: &SeedPolicy, realization: u64, kind: StreamKind) -> ChaCha8Rng {
    let mut state = policy.master_seed;
    state = splitmix64(&mut state) ^ realization;
    state = splitmix64(&mut state) ^ (kind as u64);
    let mut seed = [0u8; 32];
    for chunk in seed.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    ChaCha8Rng::from_seed(seed)
}

/// Box-Muller transform: two uniform variates to two independent
/// standard-normal variates.
///
/// `u1` must lie in (0, 1] (the log diverges at 0) and `u2` in [0, 1).
pub fn box_muller(u1: f64, u2: f64) -> Result<(f64, f64)> {
    if !(u1 > 0.0 && u1 <= 1.0) {
        return Err(Error::BoxMullerDomain {
            name: "u1",
            value: u1,
        });
    }
    if !(0.0..1.0).contains(&u2) {
        return Err(Error::BoxMullerDomain {
            name: "u2",
            value: u2,
        });
    }
    let radius = (-2.0 * u1.ln()).sqrt();
    let angle = std::f64::consts::TAU * u2;
    Ok((radius * angle.cos(), radius * angle.sin()))
}

/// Convert the dimensionless strength into an absolute sigma (hbar = 1)
/// using the clean-system bandwidth.
///
/// Not meaningful for `TunnelingUniform`, whose strength is already the
/// dimensionless spread of the scale factors.
pub fn resolve_sigma(spec: &DisorderSpec, clean: &SpectrumInfo) -> Result<f64> {
    let bandwidth = clean.bandwidth;
    if !(bandwidth > 0.0) {
        return Err(Error::DegenerateBandwidth);
    }
    Ok(spec.strength * bandwidth)
}

/// Draw one realization from the per-realization streams.
///
/// `sigma_abs` is the absolute on-site scale from [`resolve_sigma`]; the
/// tunneling model ignores it and uses the dimensionless `spec.strength`
/// as std(delta) directly.
pub fn sample_realization(
    spec: &DisorderSpec,
    config: &ArrayConfig,
    sigma_abs: f64,
    policy: &SeedPolicy,
    realization: u64,
) -> Result<Realization> {
    if sigma_abs < 0.0 {
        return Err(Error::InvalidConfig(format!(
            "absolute disorder scale {sigma_abs} is negative"
        )));
    }
    let n = config.waveguides;
    match spec.model {
        DisorderModel::None => Ok(Realization::clean()),
        DisorderModel::OnSiteGaussian => {
            let mut rng = stream_rng(policy, realization, StreamKind::OnSite);
            let mut beta = Vec::with_capacity(n);
            while beta.len() < n {
                let u1 = 1.0 - rng.random::<f64>(); // (0, 1]
                let u2 = rng.random::<f64>(); // [0, 1)
                let (z1, z2) = box_muller(u1, u2)?;
                beta.push(sigma_abs * z1);
                if beta.len() < n {
                    beta.push(sigma_abs * z2);
                }
            }
            Ok(Realization {
                beta,
                ..Realization::clean()
            })
        }
        DisorderModel::TunnelingUniform => {
            let half_width = 3.0f64.sqrt() * spec.strength;
            if half_width >= 1.0 {
                return Err(Error::SignFlipPossible {
                    sigma: spec.strength,
                    half_width,
                });
            }
            let mut rng = stream_rng(policy, realization, StreamKind::Tunneling);
            let delta = (0..n.saturating_sub(1))
                .map(|_| (2.0 * rng.random::<f64>() - 1.0) * half_width)
                .collect();
            Ok(Realization {
                delta,
                ..Realization::clean()
            })
        }
        DisorderModel::PtOnSite => {
            let half_width = 3.0f64.sqrt() * sigma_abs;
            let mut rng = stream_rng(policy, realization, StreamKind::GainLoss);
            let gamma = (0..n / 2)
                .map(|_| (2.0 * rng.random::<f64>() - 1.0) * half_width)
                .collect();
            Ok(Realization {
                gamma,
                ..Realization::clean()
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice;

    fn cfg(n: usize, alpha: f64) -> ArrayConfig {
        ArrayConfig::new(n, alpha, 1.0).unwrap()
    }

    #[test]
    fn box_muller_unit_u1_gives_zero() {
        let (z1, z2) = box_muller(1.0, 0.37).unwrap();
        assert_eq!(z1, 0.0);
        assert_eq!(z2, 0.0);
    }

    #[test]
    fn box_muller_half_log_radius() {
        let (z1, z2) = box_muller((-0.5f64).exp(), 0.0).unwrap();
        assert!((z1 - 1.0).abs() < 1e-15);
        assert_eq!(z2, 0.0);
    }

    #[test]
    fn box_muller_quarter_turn() {
        let (z1, z2) = box_muller((-2.0f64).exp(), 0.25).unwrap();
        assert!(z1.abs() < 1e-15);
        assert!((z2 - 2.0).abs() < 1e-15);
    }

    #[test]
    fn box_muller_rejects_zero_u1() {
        assert!(matches!(
            box_muller(0.0, 0.5),
            Err(Error::BoxMullerDomain { name: "u1", .. })
        ));
        assert!(matches!(
            box_muller(0.5, 1.0),
            Err(Error::BoxMullerDomain { name: "u2", .. })
        ));
    }

    #[test]
    fn sigma_resolves_against_clean_bandwidth() {
        let spec = DisorderSpec::new(DisorderModel::OnSiteGaussian, 3.0).unwrap();
        let clean = lattice::clean_spectrum(&cfg(2, 0.0)).unwrap();
        // N=2 uniform chain has eigenvalues +-C0, bandwidth 2.
        assert!((resolve_sigma(&spec, &clean).unwrap() - 6.0).abs() < 1e-12);

        let zero = DisorderSpec::none();
        assert_eq!(resolve_sigma(&zero, &clean).unwrap(), 0.0);
    }

    #[test]
    fn sigma_for_large_uniform_array_tracks_diagonalized_bandwidth() {
        let clean = lattice::clean_spectrum(&cfg(100, 0.0)).unwrap();
        let expected_bw = 4.0 * (std::f64::consts::PI / 101.0).cos();
        assert!((clean.bandwidth - expected_bw).abs() < 1e-10);
        let spec = DisorderSpec::new(DisorderModel::OnSiteGaussian, 0.05).unwrap();
        let sigma = resolve_sigma(&spec, &clean).unwrap();
        assert!((sigma - 0.05 * expected_bw).abs() < 1e-12);
    }

    #[test]
    fn degenerate_bandwidth_is_an_error() {
        let clean = lattice::clean_spectrum(&cfg(1, 0.0)).unwrap();
        let spec = DisorderSpec::none();
        assert!(matches!(
            resolve_sigma(&spec, &clean),
            Err(Error::DegenerateBandwidth)
        ));
    }

    #[test]
    fn none_model_yields_empty_lists() {
        let policy = SeedPolicy { master_seed: 9 };
        let r = sample_realization(&DisorderSpec::none(), &cfg(8, 0.0), 0.0, &policy, 0).unwrap();
        assert!(r.beta.is_empty() && r.delta.is_empty() && r.gamma.is_empty());
    }

    #[test]
    fn realizations_are_bit_reproducible() {
        let spec = DisorderSpec::new(DisorderModel::OnSiteGaussian, 1.0).unwrap();
        let policy = SeedPolicy { master_seed: 1234 };
        let a = sample_realization(&spec, &cfg(31, 0.0), 2.5, &policy, 7).unwrap();
        let b = sample_realization(&spec, &cfg(31, 0.0), 2.5, &policy, 7).unwrap();
        assert_eq!(a, b);
        let c = sample_realization(&spec, &cfg(31, 0.0), 2.5, &policy, 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn sub_streams_are_independent() {
        let policy = SeedPolicy { master_seed: 77 };
        let mut a = stream_rng(&policy, 3, StreamKind::OnSite);
        let mut b = stream_rng(&policy, 3, StreamKind::Tunneling);
        let mut c = stream_rng(&policy, 3, StreamKind::GainLoss);
        let xa: Vec<u64> = (0..4).map(|_| a.random()).collect();
        let xb: Vec<u64> = (0..4).map(|_| b.random()).collect();
        let xc: Vec<u64> = (0..4).map(|_| c.random()).collect();
        assert_ne!(xa, xb);
        assert_ne!(xa, xc);
        assert_ne!(xb, xc);
    }

    #[test]
    fn pt_draw_has_mirror_pair_count_and_bounded_range() {
        let spec = DisorderSpec::new(DisorderModel::PtOnSite, 0.1).unwrap();
        let policy = SeedPolicy { master_seed: 5 };
        let sigma = 0.4;
        let r = sample_realization(&spec, &cfg(6, 0.0), sigma, &policy, 0).unwrap();
        assert_eq!(r.gamma.len(), 3);
        let half = 3.0f64.sqrt() * sigma;
        assert!(r.gamma.iter().all(|g| g.abs() <= half));
        // the assembled diagonal is mirror antisymmetric
        let h = lattice::build_hamiltonian(&cfg(6, 0.0), &r).unwrap();
        for m in 0..3 {
            assert_eq!(h.diag[m].im, -h.diag[5 - m].im);
        }
    }

    #[test]
    fn tunneling_sign_flip_guard_fires_on_wide_distributions() {
        let spec = DisorderSpec::new(DisorderModel::TunnelingUniform, 0.6).unwrap();
        let policy = SeedPolicy { master_seed: 5 };
        let err = sample_realization(&spec, &cfg(6, 0.0), 0.6, &policy, 0).unwrap_err();
        assert!(matches!(err, Error::SignFlipPossible { .. }));
    }

    #[test]
    fn gaussian_moments_converge_to_target() {
        let spec = DisorderSpec::new(DisorderModel::OnSiteGaussian, 1.0).unwrap();
        let policy = SeedPolicy { master_seed: 2024 };
        let n_draws = 1_000_000usize;
        let cfg_big = cfg(1000, 0.0);
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for r in 0..(n_draws / 1000) as u64 {
            let real = sample_realization(&spec, &cfg_big, 1.0, &policy, r).unwrap();
            for b in &real.beta {
                sum += b;
                sum_sq += b * b;
            }
        }
        let mean = sum / n_draws as f64;
        let var = sum_sq / n_draws as f64 - mean * mean;
        // 5-sigma statistical windows for sigma = 1
        let mean_tol = 5.0 / (n_draws as f64).sqrt();
        let var_tol = 5.0 * (2.0 / n_draws as f64).sqrt();
        assert!(mean.abs() < mean_tol, "mean {mean} vs tol {mean_tol}");
        assert!((var - 1.0).abs() < var_tol, "variance {var} vs tol {var_tol}");
    }

    #[test]
    fn gaussian_draws_pass_kolmogorov_smirnov() {
        use statrs::distribution::{ContinuousCDF, Normal};
        let sigma = 0.7;
        let spec = DisorderSpec::new(DisorderModel::OnSiteGaussian, 1.0).unwrap();
        let policy = SeedPolicy { master_seed: 31337 };
        let n_draws = 100_000usize;
        let cfg_big = cfg(1000, 0.0);
        let mut draws = Vec::with_capacity(n_draws);
        for r in 0..(n_draws / 1000) as u64 {
            let real = sample_realization(&spec, &cfg_big, sigma, &policy, r).unwrap();
            draws.extend(real.beta);
        }
        draws.sort_by(f64::total_cmp);
        let normal = Normal::new(0.0, sigma).unwrap();
        let n = draws.len() as f64;
        let mut d_stat = 0.0f64;
        for (i, x) in draws.iter().enumerate() {
            let cdf = normal.cdf(*x);
            d_stat = d_stat.max(cdf - i as f64 / n).max((i + 1) as f64 / n - cdf);
        }
        // Kolmogorov critical value at significance 1e-3:
        // K = sqrt(ln(2/alpha)/2) = 1.9495
        let critical = (2.0f64 / 1e-3).ln().sqrt() / 2.0f64.sqrt() / n.sqrt();
        assert!(d_stat < critical, "KS statistic {d_stat} vs {critical}");
    }

    #[test]
    fn uniform_draws_pass_range_and_moment_checks() {
        let spec = DisorderSpec::new(DisorderModel::TunnelingUniform, 0.02).unwrap();
        let policy = SeedPolicy { master_seed: 99 };
        let cfg_big = cfg(1001, 0.0);
        let n_draws = 1_000_000usize;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        let half = 3.0f64.sqrt() * 0.02;
        for r in 0..(n_draws / 1000) as u64 {
            let real = sample_realization(&spec, &cfg_big, 0.0, &policy, r).unwrap();
            for d in &real.delta {
                assert!(d.abs() <= half);
                sum += d;
                sum_sq += d * d;
            }
        }
        let mean = sum / n_draws as f64;
        let var = sum_sq / n_draws as f64 - mean * mean;
        let target = 0.02f64 * 0.02;
        assert!(mean.abs() < 5.0 * 0.02 / (n_draws as f64).sqrt());
        assert!((var - target).abs() / target < 0.01, "variance off by >1%");
    }
}
