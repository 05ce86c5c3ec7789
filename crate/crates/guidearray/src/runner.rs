// SPDX-License-Identifier: Apache-2.0

//! Config-driven experiment runner.
//!
//! A run is described by a TOML document (see the README for the schema),
//! parsed into a validated [`RunConfig`], executed as one ensemble or an
//! alpha sweep, and written out as one CSV per selected observable plus a
//! `meta` sidecar. The sidecar echoes the fully resolved configuration
//! under a `[config]` table -- feeding the sidecar back through
//! [`parse_config`] reproduces the run bit for bit -- and records
//! provenance (seed, version, wall time, rejection counts, standard
//! errors) under `[provenance]`.
//!
//! Five built-in presets cover the bundled experiment families at either
//! `paper` scale (full ensemble sizes) or the much faster `desk` scale.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use serde::Deserialize;

use crate::disorder::{DisorderModel, DisorderSpec, SeedPolicy};
use crate::ensemble::{
    self, EnsembleConfig, EnsembleResult, TimeScale, STDERR_BATCHES,
};
use crate::error::{Error, Result};
use crate::evolve::{InputSpec, DEFAULT_NORM_CAP};
use crate::lattice::ArrayConfig;

/// Which observables a run emits.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputSelection {
    pub intensity_map: bool,
    pub steady_profile: bool,
    pub gamma_matrix: bool,
    pub g_function: bool,
    /// Alpha grid for a localized-fraction sweep, when selected.
    pub sweep_alphas: Option<Vec<f64>>,
}

impl OutputSelection {
    pub fn any(&self) -> bool {
        self.intensity_map
            || self.steady_profile
            || self.gamma_matrix
            || self.g_function
            || self.sweep_alphas.is_some()
    }

    fn wants_correlations(&self) -> bool {
        self.gamma_matrix || self.g_function
    }
}

/// Fully resolved and validated description of one run.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub array: ArrayConfig,
    pub disorder: DisorderSpec,
    pub input: InputSpec,
    pub ensemble: EnsembleConfig,
    pub outputs: OutputSelection,
    /// Output directory from the config document; the CLI may override.
    pub out_dir: Option<PathBuf>,
    /// Echo of the uniform-grid parameters for the meta sidecar.
    time_max: f64,
    time_samples: usize,
}

impl RunConfig {
    pub fn set_master_seed(&mut self, seed: u64) {
        self.ensemble.seed_policy = SeedPolicy { master_seed: seed };
    }
}

// ---------------------------------------------------------------------
// raw TOML layer

fn default_c0() -> f64 {
    1.0
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    array: RawArray,
    #[serde(default)]
    disorder: RawDisorder,
    input: RawInput,
    #[serde(default)]
    ensemble: RawEnsemble,
    #[serde(default)]
    output: RawOutput,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawArray {
    waveguides: usize,
    alpha: f64,
    #[serde(default = "default_c0")]
    c0: f64,
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "snake_case")]
enum RawModel {
    None,
    OnSiteGaussian,
    TunnelingUniform,
    PtOnSite,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawDisorder {
    model: RawModel,
    strength: f64,
}

impl Default for RawDisorder {
    fn default() -> Self {
        Self {
            model: RawModel::None,
            strength: 0.0,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "snake_case")]
enum RawKind {
    Single,
    Pair,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawInput {
    kind: RawKind,
    m0: Option<usize>,
    p: Option<usize>,
    q: Option<usize>,
    theta: Option<f64>,
}

#[derive(Debug, Deserialize, Clone, Copy, PartialEq)]
#[serde(rename_all = "snake_case")]
enum RawTimeScale {
    Clean,
    PerRealization,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawEnsemble {
    realizations: usize,
    time_max: f64,
    time_samples: usize,
    steady_window: [f64; 2],
    phase_samples: usize,
    master_seed: u64,
    time_scale: RawTimeScale,
    norm_cap: f64,
}

impl Default for RawEnsemble {
    fn default() -> Self {
        Self {
            realizations: 1000,
            time_max: 600.0,
            time_samples: 601,
            steady_window: [500.0, 600.0],
            phase_samples: 1,
            master_seed: 0,
            time_scale: RawTimeScale::Clean,
            norm_cap: DEFAULT_NORM_CAP,
        }
    }
}

#[derive(Debug, Deserialize, Clone, Copy, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
enum RawObservable {
    IntensityMap,
    SteadyProfile,
    LocalizedFractionSweep,
    GammaMatrix,
    GFunction,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawOutput {
    observables: Vec<RawObservable>,
    alphas: Vec<f64>,
    directory: Option<String>,
}

impl Default for RawOutput {
    fn default() -> Self {
        Self {
            observables: vec![RawObservable::IntensityMap, RawObservable::SteadyProfile],
            alphas: Vec::new(),
            directory: None,
        }
    }
}

fn config_err(path: &str, message: impl Into<String>) -> Error {
    Error::Config {
        path: path.into(),
        message: message.into(),
    }
}

/// Parse and validate a run description.
///
/// Accepts either a bare config document or a `meta` sidecar (whose
/// resolved config lives under a top-level `[config]` table).
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let table: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| config_err("<document>", e.to_string()))?;
    let raw: RawConfig = if table.contains_key("config") {
        for key in table.keys() {
            if key != "config" && key != "provenance" {
                return Err(config_err(key, "unknown top-level key in a meta document"));
            }
        }
        let sub = toml::to_string(&table["config"])
            .map_err(|e| config_err("config", e.to_string()))?;
        toml::from_str(&sub).map_err(|e| config_err("config", e.to_string()))?
    } else {
        toml::from_str(text).map_err(|e| config_err("<document>", e.to_string()))?
    };
    resolve_config(raw)
}

fn resolve_config(raw: RawConfig) -> Result<RunConfig> {
    let array = ArrayConfig::new(raw.array.waveguides, raw.array.alpha, raw.array.c0)
        .map_err(|e| config_err("array", e.to_string()))?;

    let model = match raw.disorder.model {
        RawModel::None => DisorderModel::None,
        RawModel::OnSiteGaussian => DisorderModel::OnSiteGaussian,
        RawModel::TunnelingUniform => DisorderModel::TunnelingUniform,
        RawModel::PtOnSite => DisorderModel::PtOnSite,
    };
    let disorder = DisorderSpec::new(model, raw.disorder.strength)
        .map_err(|e| config_err("disorder", e.to_string()))?;

    let input = match raw.input.kind {
        RawKind::Single => {
            if raw.input.p.is_some() || raw.input.q.is_some() || raw.input.theta.is_some() {
                return Err(config_err(
                    "input",
                    "p, q, and theta are only valid for pair inputs",
                ));
            }
            let m0 = raw
                .input
                .m0
                .ok_or_else(|| config_err("input.m0", "required for single inputs"))?;
            InputSpec::Single { m0 }
        }
        RawKind::Pair => {
            if raw.input.m0.is_some() {
                return Err(config_err("input.m0", "only valid for single inputs"));
            }
            let p = raw
                .input
                .p
                .ok_or_else(|| config_err("input.p", "required for pair inputs"))?;
            let q = raw
                .input
                .q
                .ok_or_else(|| config_err("input.q", "required for pair inputs"))?;
            InputSpec::Pair {
                p,
                q,
                theta: raw.input.theta.unwrap_or(0.0),
            }
        }
    };
    input
        .validate(array.waveguides)
        .map_err(|e| config_err("input", e.to_string()))?;

    let mut outputs = OutputSelection {
        intensity_map: false,
        steady_profile: false,
        gamma_matrix: false,
        g_function: false,
        sweep_alphas: None,
    };
    for observable in &raw.output.observables {
        match observable {
            RawObservable::IntensityMap => outputs.intensity_map = true,
            RawObservable::SteadyProfile => outputs.steady_profile = true,
            RawObservable::GammaMatrix => outputs.gamma_matrix = true,
            RawObservable::GFunction => outputs.g_function = true,
            RawObservable::LocalizedFractionSweep => {
                if raw.output.alphas.is_empty() {
                    return Err(config_err(
                        "output.alphas",
                        "localized_fraction_sweep needs a non-empty alpha grid",
                    ));
                }
                outputs.sweep_alphas = Some(raw.output.alphas.clone());
            }
        }
    }
    if !raw.output.alphas.is_empty() && outputs.sweep_alphas.is_none() {
        return Err(config_err(
            "output.alphas",
            "alpha grid given without selecting localized_fraction_sweep",
        ));
    }
    if !outputs.any() {
        return Err(config_err("output.observables", "no observable selected"));
    }
    if outputs.sweep_alphas.is_some() && !matches!(input, InputSpec::Single { .. }) {
        return Err(config_err(
            "output.observables",
            "localized_fraction_sweep requires a single-waveguide input",
        ));
    }

    if raw.ensemble.time_samples < 1 {
        return Err(config_err("ensemble.time_samples", "must be at least 1"));
    }
    let ensemble = EnsembleConfig {
        realizations: raw.ensemble.realizations,
        time_grid: ensemble::uniform_time_grid(raw.ensemble.time_max, raw.ensemble.time_samples),
        steady_window: (raw.ensemble.steady_window[0], raw.ensemble.steady_window[1]),
        phase_samples: raw.ensemble.phase_samples,
        seed_policy: SeedPolicy {
            master_seed: raw.ensemble.master_seed,
        },
        time_scale: match raw.ensemble.time_scale {
            RawTimeScale::Clean => TimeScale::Clean,
            RawTimeScale::PerRealization => TimeScale::PerRealization,
        },
        accumulate_correlations: outputs.wants_correlations(),
        norm_cap: raw.ensemble.norm_cap,
    };
    ensemble
        .validate(&input)
        .map_err(|e| config_err("ensemble", e.to_string()))?;

    Ok(RunConfig {
        array,
        disorder,
        input,
        ensemble,
        outputs,
        out_dir: raw.output.directory.map(PathBuf::from),
        time_max: raw.ensemble.time_max,
        time_samples: raw.ensemble.time_samples,
    })
}

// ---------------------------------------------------------------------
// presets

/// Built-in experiment families.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FigurePreset {
    /// Localized-fraction alpha sweep, strong disorder, center input.
    Fig1Left,
    /// Localized-fraction alpha sweep, moderate disorder, edge input.
    Fig1Right,
    /// Single-site input in a large uniform array, weak disorder.
    Fig2,
    /// Phase-encoded two-site input in a linear-ramp array.
    Fig3,
    /// Correlation matrix under balanced gain/loss disorder.
    Fig4,
}

impl FromStr for FigurePreset {
    type Err = Error;

    fn from_str(name: &str) -> Result<Self> {
        match name {
            "fig1_left" => Ok(Self::Fig1Left),
            "fig1_right" => Ok(Self::Fig1Right),
            "fig2" => Ok(Self::Fig2),
            "fig3" => Ok(Self::Fig3),
            "fig4" => Ok(Self::Fig4),
            other => Err(Error::InvalidConfig(format!(
                "unknown preset `{other}` (expected fig1_left, fig1_right, fig2, fig3, or fig4)"
            ))),
        }
    }
}

/// Preset size: full published ensemble sizes, or reduced sizes that
/// finish in minutes on a laptop.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scale {
    Paper,
    Desk,
}

impl FromStr for Scale {
    type Err = Error;

    fn from_str(name: &str) -> Result<Self> {
        match name {
            "paper" => Ok(Self::Paper),
            "desk" => Ok(Self::Desk),
            other => Err(Error::InvalidConfig(format!(
                "unknown scale `{other}` (expected paper or desk)"
            ))),
        }
    }
}

/// 17-point alpha grid on [-2, 2] used by the sweep presets.
fn sweep_grid() -> Vec<f64> {
    (0..17).map(|k| -2.0 + 0.25 * k as f64).collect()
}

/// Expand a preset into a full run description.
pub fn preset_config(preset: FigurePreset, scale: Scale) -> RunConfig {
    let desk = scale == Scale::Desk;
    let toml = match preset {
        FigurePreset::Fig1Left => format!(
            "[array]\nwaveguides = {n}\nalpha = 0.0\n\
             [disorder]\nmodel = \"on_site_gaussian\"\nstrength = 3.0\n\
             [input]\nkind = \"single\"\nm0 = {m0}\n\
             [ensemble]\nrealizations = {nr}\n\
             [output]\nobservables = [\"localized_fraction_sweep\"]\nalphas = {alphas}\n",
            n = if desk { 50 } else { 100 },
            m0 = if desk { 25 } else { 50 },
            nr = if desk { 1_000 } else { 1_000_000 },
            alphas = alpha_list(&sweep_grid()),
        ),
        FigurePreset::Fig1Right => format!(
            "[array]\nwaveguides = 37\nalpha = 0.0\n\
             [disorder]\nmodel = \"on_site_gaussian\"\nstrength = 1.0\n\
             [input]\nkind = \"single\"\nm0 = 5\n\
             [ensemble]\nrealizations = {nr}\n\
             [output]\nobservables = [\"localized_fraction_sweep\"]\nalphas = {alphas}\n",
            nr = if desk { 1_000 } else { 100_000 },
            alphas = alpha_list(&sweep_grid()),
        ),
        FigurePreset::Fig2 => format!(
            "[array]\nwaveguides = 100\nalpha = 0.0\n\
             [disorder]\nmodel = \"on_site_gaussian\"\nstrength = 0.05\n\
             [input]\nkind = \"single\"\nm0 = 15\n\
             [ensemble]\nrealizations = {nr}\n\
             [output]\nobservables = [\"intensity_map\", \"steady_profile\"]\n",
            nr = if desk { 10_000 } else { 1_000_000 },
        ),
        FigurePreset::Fig3 => format!(
            "[array]\nwaveguides = 60\nalpha = 1.0\n\
             [disorder]\nmodel = \"on_site_gaussian\"\nstrength = 0.05\n\
             [input]\nkind = \"pair\"\np = 20\nq = 40\ntheta = 0.0\n\
             [ensemble]\nrealizations = {nr}\n\
             [output]\nobservables = [\"intensity_map\", \"steady_profile\"]\n",
            nr = if desk { 5_000 } else { 100_000 },
        ),
        FigurePreset::Fig4 => format!(
            "[array]\nwaveguides = 20\nalpha = 0.0\n\
             [disorder]\nmodel = \"pt_on_site\"\nstrength = 0.02\n\
             [input]\nkind = \"pair\"\np = 9\nq = 10\n\
             [ensemble]\nrealizations = {nr}\nphase_samples = 8\n\
             [output]\nobservables = [\"gamma_matrix\", \"g_function\"]\n",
            nr = if desk { 1_000 } else { 10_000 },
        ),
    };
    parse_config(&toml).expect("preset descriptions are valid")
}

fn alpha_list(alphas: &[f64]) -> String {
    let entries: Vec<String> = alphas.iter().map(|a| format!("{a:?}")).collect();
    format!("[{}]", entries.join(", "))
}

// ---------------------------------------------------------------------
// execution and file output

/// One row of an alpha sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub alpha: f64,
    pub clean_bandwidth: f64,
    pub fraction: f64,
    pub stderr: f64,
}

/// Localized fraction against alpha, re-anchoring the disorder strength
/// to each alpha's clean bandwidth.
pub fn sweep_alpha(config: &RunConfig, alphas: &[f64]) -> Result<Vec<SweepRow>> {
    if config.input.single_site().is_none() {
        return Err(Error::FractionNeedsSingleInput);
    }
    alphas
        .iter()
        .map(|&alpha| {
            let array = ArrayConfig::new(config.array.waveguides, alpha, config.array.c0)?;
            let result =
                ensemble::run_ensemble(&array, &config.disorder, &config.input, &config.ensemble)?;
            Ok(SweepRow {
                alpha,
                clean_bandwidth: result.metadata.clean_bandwidth,
                fraction: result.localized_fraction.expect("single input"),
                stderr: result.localized_fraction_stderr.unwrap_or(0.0),
            })
        })
        .collect()
}

/// What a finished run produced.
#[derive(Debug)]
pub struct RunSummary {
    pub files: Vec<PathBuf>,
    pub wall_seconds: f64,
    pub result: Option<EnsembleResult>,
    pub sweep: Option<Vec<SweepRow>>,
}

/// Execute a run and write its outputs into `out_dir`.
///
/// `threads` limits the rayon pool (`None` uses the global default); it
/// changes wall time only, never a single output bit. On error, files
/// written so far are removed.
pub fn run(config: &RunConfig, out_dir: &Path, threads: Option<usize>) -> Result<RunSummary> {
    fs::create_dir_all(out_dir)?;
    let started = Instant::now();
    let mut files: Vec<PathBuf> = Vec::new();

    let outcome = execute(config, out_dir, threads, started, &mut files);
    if outcome.is_err() {
        for file in &files {
            let _ = fs::remove_file(file);
        }
    }
    outcome
}

fn execute(
    config: &RunConfig,
    out_dir: &Path,
    threads: Option<usize>,
    started: Instant,
    files: &mut Vec<PathBuf>,
) -> Result<RunSummary> {
    let mut write = |name: &str, content: String| -> Result<PathBuf> {
        let path = out_dir.join(name);
        fs::write(&path, content)?;
        files.push(path.clone());
        Ok(path)
    };

    let (result, sweep) = match &config.outputs.sweep_alphas {
        Some(alphas) => {
            let rows = with_pool(threads, || sweep_alpha(config, alphas))?;
            write("localized_fraction.csv", sweep_csv(&rows))?;
            (None, Some(rows))
        }
        None => {
            let result = with_pool(threads, || {
                ensemble::run_ensemble(&config.array, &config.disorder, &config.input, &config.ensemble)
            })?;
            if config.outputs.intensity_map {
                write("intensity_map.csv", intensity_map_csv(&result))?;
            }
            if config.outputs.steady_profile {
                write("steady_profile.csv", steady_profile_csv(&result))?;
            }
            if config.outputs.gamma_matrix {
                write("gamma_matrix.csv", gamma_csv(&result))?;
            }
            if config.outputs.g_function {
                write("g_function.csv", g_function_csv(&result))?;
            }
            (Some(result), None)
        }
    };

    let wall_seconds = started.elapsed().as_secs_f64();
    write(
        "meta",
        meta_document(config, result.as_ref(), sweep.as_deref(), wall_seconds, threads),
    )?;

    Ok(RunSummary {
        files: files.clone(),
        wall_seconds,
        result,
        sweep,
    })
}

fn with_pool<T: Send>(threads: Option<usize>, task: impl FnOnce() -> T + Send) -> T {
    match threads {
        Some(n) if n > 0 => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .expect("rayon pool")
            .install(task),
        _ => task(),
    }
}

/// CSV float format: 17 significant digits, enough for an exact f64
/// round trip.
fn csv_float(value: f64) -> String {
    format!("{value:.16e}")
}

fn intensity_map_csv(result: &EnsembleResult) -> String {
    let n = result.mean_intensity.nrows();
    let mut out = String::from("t_over_tau");
    for j in 1..=n {
        let _ = write!(out, ",I_{j}");
    }
    out.push('\n');
    for (ti, t) in result.times.iter().enumerate() {
        out.push_str(&csv_float(*t));
        for j in 0..n {
            out.push(',');
            out.push_str(&csv_float(result.mean_intensity[[j, ti]]));
        }
        out.push('\n');
    }
    out
}

fn steady_profile_csv(result: &EnsembleResult) -> String {
    let mut out = String::from("j,intensity,stderr\n");
    for (j, (value, err)) in result
        .steady_profile
        .iter()
        .zip(&result.steady_profile_stderr)
        .enumerate()
    {
        let _ = writeln!(out, "{},{},{}", j + 1, csv_float(*value), csv_float(*err));
    }
    out
}

fn gamma_csv(result: &EnsembleResult) -> String {
    let gamma = result
        .gamma_matrix
        .as_ref()
        .expect("gamma requested but not computed");
    let n = gamma.nrows();
    let mut out = String::from("j");
    for k in 1..=n {
        let _ = write!(out, ",{k}");
    }
    out.push('\n');
    for j in 0..n {
        let _ = write!(out, "{}", j + 1);
        for k in 0..n {
            out.push(',');
            out.push_str(&csv_float(gamma[[j, k]]));
        }
        out.push('\n');
    }
    out
}

fn g_function_csv(result: &EnsembleResult) -> String {
    let g = result.g_function.as_ref().expect("g requested");
    let err = result.g_function_stderr.as_ref().expect("g stderr");
    let mut out = String::from("dr,g,stderr\n");
    for (dr, (value, stderr)) in g.iter().zip(err).enumerate() {
        let _ = writeln!(out, "{dr},{},{}", csv_float(*value), csv_float(*stderr));
    }
    out
}

fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("alpha,clean_bandwidth,fraction,stderr\n");
    for row in rows {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            csv_float(row.alpha),
            csv_float(row.clean_bandwidth),
            csv_float(row.fraction),
            csv_float(row.stderr)
        );
    }
    out
}

/// The meta sidecar: the resolved config (re-runnable through
/// [`parse_config`]) plus provenance, with a stable key order.
fn meta_document(
    config: &RunConfig,
    result: Option<&EnsembleResult>,
    sweep: Option<&[SweepRow]>,
    wall_seconds: f64,
    threads: Option<usize>,
) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "[config.array]");
    let _ = writeln!(out, "waveguides = {}", config.array.waveguides);
    let _ = writeln!(out, "alpha = {:?}", config.array.alpha);
    let _ = writeln!(out, "c0 = {:?}", config.array.c0);
    let _ = writeln!(out, "\n[config.disorder]");
    let model = match config.disorder.model {
        DisorderModel::None => "none",
        DisorderModel::OnSiteGaussian => "on_site_gaussian",
        DisorderModel::TunnelingUniform => "tunneling_uniform",
        DisorderModel::PtOnSite => "pt_on_site",
    };
    let _ = writeln!(out, "model = \"{model}\"");
    let _ = writeln!(out, "strength = {:?}", config.disorder.strength);
    let _ = writeln!(out, "\n[config.input]");
    match config.input {
        InputSpec::Single { m0 } => {
            let _ = writeln!(out, "kind = \"single\"");
            let _ = writeln!(out, "m0 = {m0}");
        }
        InputSpec::Pair { p, q, theta } => {
            let _ = writeln!(out, "kind = \"pair\"");
            let _ = writeln!(out, "p = {p}");
            let _ = writeln!(out, "q = {q}");
            let _ = writeln!(out, "theta = {theta:?}");
        }
    }
    let _ = writeln!(out, "\n[config.ensemble]");
    let _ = writeln!(out, "realizations = {}", config.ensemble.realizations);
    let _ = writeln!(out, "time_max = {:?}", config.time_max);
    let _ = writeln!(out, "time_samples = {}", config.time_samples);
    let _ = writeln!(
        out,
        "steady_window = [{:?}, {:?}]",
        config.ensemble.steady_window.0, config.ensemble.steady_window.1
    );
    let _ = writeln!(out, "phase_samples = {}", config.ensemble.phase_samples);
    let _ = writeln!(out, "master_seed = {}", config.ensemble.seed_policy.master_seed);
    let scale = match config.ensemble.time_scale {
        TimeScale::Clean => "clean",
        TimeScale::PerRealization => "per_realization",
    };
    let _ = writeln!(out, "time_scale = \"{scale}\"");
    let _ = writeln!(out, "norm_cap = {:?}", config.ensemble.norm_cap);
    let _ = writeln!(out, "\n[config.output]");
    let mut observables: Vec<&str> = Vec::new();
    if config.outputs.intensity_map {
        observables.push("intensity_map");
    }
    if config.outputs.steady_profile {
        observables.push("steady_profile");
    }
    if config.outputs.sweep_alphas.is_some() {
        observables.push("localized_fraction_sweep");
    }
    if config.outputs.gamma_matrix {
        observables.push("gamma_matrix");
    }
    if config.outputs.g_function {
        observables.push("g_function");
    }
    let quoted: Vec<String> = observables.iter().map(|o| format!("\"{o}\"")).collect();
    let _ = writeln!(out, "observables = [{}]", quoted.join(", "));
    if let Some(alphas) = &config.outputs.sweep_alphas {
        let _ = writeln!(out, "alphas = {}", alpha_list(alphas));
    }

    let _ = writeln!(out, "\n[provenance]");
    let _ = writeln!(out, "version = \"{}\"", env!("CARGO_PKG_VERSION"));
    let _ = writeln!(out, "threads_requested = {}", threads.unwrap_or(0));
    let _ = writeln!(out, "wall_seconds = {wall_seconds:?}");
    let _ = writeln!(out, "stderr_batches = {STDERR_BATCHES}");
    if let Some(result) = result {
        let meta = &result.metadata;
        let _ = writeln!(out, "realizations_used = {}", meta.realizations_used);
        let _ = writeln!(out, "rejected_realizations = {}", meta.rejected);
        let _ = writeln!(out, "trajectories = {}", meta.trajectories);
        let _ = writeln!(out, "clean_bandwidth = {:?}", meta.clean_bandwidth);
        let _ = writeln!(out, "clean_tau = {:?}", meta.clean_tau);
        let _ = writeln!(out, "sigma_abs = {:?}", meta.sigma_abs);
        let _ = writeln!(
            out,
            "steady_window_samples = {}",
            meta.steady_window_samples
        );
        let max_profile_err = result
            .steady_profile_stderr
            .iter()
            .fold(0.0f64, |a, b| a.max(*b));
        let _ = writeln!(out, "max_steady_profile_stderr = {max_profile_err:?}");
        if let Some(fraction) = result.localized_fraction {
            let _ = writeln!(out, "localized_fraction = {fraction:?}");
            let _ = writeln!(
                out,
                "localized_fraction_stderr = {:?}",
                result.localized_fraction_stderr.unwrap_or(0.0)
            );
        }
        if let Some(saturation) = &meta.saturation {
            let _ = writeln!(out, "saturated = {}", saturation.time.is_some());
            if let Some(time) = saturation.time {
                let _ = writeln!(out, "saturation_time = {time:?}");
            }
            let _ = writeln!(out, "saturation_window_std = {:?}", saturation.window_std);
            let _ = writeln!(out, "saturation_window_mean = {:?}", saturation.window_mean);
        }
    }
    if let Some(rows) = sweep {
        let _ = writeln!(out, "sweep_points = {}", rows.len());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "\
[array]
waveguides = 20
alpha = 0.0
c0 = 1.0

[input]
kind = \"single\"
m0 = 10
";

    #[test]
    fn minimal_document_resolves_defaults() {
        let config = parse_config(MINIMAL).unwrap();
        assert_eq!(config.array.waveguides, 20);
        assert_eq!(config.disorder.model, DisorderModel::None);
        assert_eq!(config.ensemble.realizations, 1000);
        assert_eq!(config.ensemble.time_grid.len(), 601);
        assert_eq!(config.ensemble.steady_window, (500.0, 600.0));
        assert!(config.outputs.intensity_map && config.outputs.steady_profile);
        assert!(!config.ensemble.accumulate_correlations);
    }

    #[test]
    fn unknown_keys_are_rejected_with_a_path() {
        let doc = format!("{MINIMAL}\n[array.extra]\nx = 1\n");
        assert!(parse_config(&doc).is_err());
        let doc = format!("{MINIMAL}\ntypo_section = 3\n");
        let err = parse_config(&doc).unwrap_err();
        assert!(err.to_string().contains("typo_section"), "{err}");
    }

    #[test]
    fn sweep_with_pair_input_is_rejected_naming_the_invariant() {
        let doc = "\
[array]
waveguides = 10
alpha = 0.0

[input]
kind = \"pair\"
p = 4
q = 7

[output]
observables = [\"localized_fraction_sweep\"]
alphas = [0.0, 1.0]
";
        let err = parse_config(doc).unwrap_err();
        let text = err.to_string();
        assert!(
            text.contains("single-waveguide input"),
            "unexpected message: {text}"
        );
    }

    #[test]
    fn pair_fields_on_single_inputs_are_rejected() {
        let doc = "\
[array]
waveguides = 10
alpha = 0.0

[input]
kind = \"single\"
m0 = 3
theta = 1.0
";
        assert!(parse_config(doc).is_err());
    }

    #[test]
    fn fig4_desk_preset_matches_published_parameters() {
        let config = preset_config(FigurePreset::Fig4, Scale::Desk);
        assert_eq!(config.array.waveguides, 20);
        assert_eq!(config.array.alpha, 0.0);
        assert_eq!(config.disorder.model, DisorderModel::PtOnSite);
        assert_eq!(config.disorder.strength, 0.02);
        assert_eq!(config.ensemble.realizations, 1_000);
        assert_eq!(config.ensemble.phase_samples, 8);
        assert_eq!(
            config.input,
            InputSpec::Pair {
                p: 9,
                q: 10,
                theta: 0.0
            }
        );
        assert!(config.outputs.gamma_matrix && config.outputs.g_function);
        assert!(config.ensemble.accumulate_correlations);
    }

    #[test]
    fn fig1_presets_sweep_seventeen_alphas() {
        for (preset, n, m0, nr) in [
            (FigurePreset::Fig1Left, 50usize, 25usize, 1_000usize),
            (FigurePreset::Fig1Right, 37, 5, 1_000),
        ] {
            let config = preset_config(preset, Scale::Desk);
            assert_eq!(config.array.waveguides, n);
            assert_eq!(config.input, InputSpec::Single { m0 });
            assert_eq!(config.ensemble.realizations, nr);
            let alphas = config.outputs.sweep_alphas.unwrap();
            assert_eq!(alphas.len(), 17);
            assert_eq!(alphas[0], -2.0);
            assert_eq!(*alphas.last().unwrap(), 2.0);
        }
    }

    #[test]
    fn paper_scale_presets_use_published_ensemble_sizes() {
        assert_eq!(
            preset_config(FigurePreset::Fig2, Scale::Paper)
                .ensemble
                .realizations,
            1_000_000
        );
        assert_eq!(
            preset_config(FigurePreset::Fig3, Scale::Paper)
                .ensemble
                .realizations,
            100_000
        );
        assert_eq!(
            preset_config(FigurePreset::Fig1Right, Scale::Paper)
                .ensemble
                .realizations,
            100_000
        );
    }

    #[test]
    fn csv_floats_round_trip_bitwise() {
        for value in [
            0.0,
            -0.0,
            1.0 / 3.0,
            0.05,
            1e-300,
            2.5e17,
            -7.123456789012345e-5,
            f64::MIN_POSITIVE,
        ] {
            let text = csv_float(value);
            let back: f64 = text.parse().unwrap();
            assert_eq!(value.to_bits(), back.to_bits(), "{text}");
        }
    }

    #[test]
    fn preset_names_parse() {
        assert_eq!(
            "fig1_left".parse::<FigurePreset>().unwrap(),
            FigurePreset::Fig1Left
        );
        assert!("fig5".parse::<FigurePreset>().is_err());
        assert_eq!("desk".parse::<Scale>().unwrap(), Scale::Desk);
        assert!("poster".parse::<Scale>().is_err());
    }
}
