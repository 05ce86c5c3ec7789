// SPDX-License-Identifier: Apache-2.0

//! Command-line front end: run a TOML-described experiment or one of the
//! built-in presets, writing CSV observables plus a `meta` sidecar.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Parser;

use guidearray::runner::{self, FigurePreset, RunConfig, Scale};

#[derive(Parser, Debug)]
#[command(
    name = "guidearray",
    version,
    about = "Disorder-averaged light dynamics in tunable waveguide arrays"
)]
struct Cli {
    /// TOML run description (or a `meta` sidecar from an earlier run)
    #[arg(long, value_name = "path", conflicts_with = "preset")]
    config: Option<PathBuf>,

    /// Built-in preset: fig1_left, fig1_right, fig2, fig3, fig4
    #[arg(long, value_name = "name")]
    preset: Option<String>,

    /// Preset scale: `paper` (published ensemble sizes) or `desk`
    #[arg(long, value_name = "paper|desk", default_value = "desk")]
    scale: String,

    /// Master seed override
    #[arg(long, value_name = "u64")]
    seed: Option<u64>,

    /// Worker threads (default: all cores; outputs are identical either way)
    #[arg(long, value_name = "n")]
    threads: Option<usize>,

    /// Output directory (default: the config's `output.directory`, else `out`)
    #[arg(long, value_name = "dir")]
    out: Option<PathBuf>,
}

fn main() -> Result<()> {
    let cli = Cli::parse();

    let mut config: RunConfig = match (&cli.config, &cli.preset) {
        (Some(path), None) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?;
            runner::parse_config(&text)
                .with_context(|| format!("parsing {}", path.display()))?
        }
        (None, Some(name)) => {
            let preset: FigurePreset = name.parse()?;
            let scale: Scale = cli.scale.parse()?;
            runner::preset_config(preset, scale)
        }
        _ => bail!("exactly one of --config or --preset is required"),
    };

    if let Some(seed) = cli.seed {
        config.set_master_seed(seed);
    }
    let out_dir = cli
        .out
        .clone()
        .or_else(|| config.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));

    let summary = runner::run(&config, &out_dir, cli.threads)?;

    let names: Vec<String> = summary
        .files
        .iter()
        .filter_map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
        .collect();
    println!(
        "wrote {} to {} in {:.1} s",
        names.join(", "),
        out_dir.display(),
        summary.wall_seconds
    );
    if let Some(result) = &summary.result {
        println!(
            "realizations: {} used, {} rejected; trajectories: {}",
            result.metadata.realizations_used,
            result.metadata.rejected,
            result.metadata.trajectories
        );
        if let Some(fraction) = result.localized_fraction {
            println!(
                "localized fraction: {fraction:.6} +- {:.6}",
                result.localized_fraction_stderr.unwrap_or(0.0)
            );
        }
    }
    if let Some(rows) = &summary.sweep {
        println!("alpha sweep: {} points", rows.len());
    }
    Ok(())
}
