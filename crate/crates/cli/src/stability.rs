use std::path::PathBuf;

use anyhow::Context;
use clap::{Args, ValueEnum};
use exdiff::examples::reference_setting;
use exdiff::stability::{example1_characteristic_poly, linear_grid, log_grid};
use exdiff::{jury_stability_test, sweep_rho, CombinationPolicy};
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::config::{self, emit, OneOrMany};
use crate::error::{Classify, CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Spacing {
    Log,
    Linear,
}

/// Sweep the spectral radius of the exact diffusion error dynamics over
/// step sizes, or run the Jury test on the first reference polynomial.
#[derive(Debug, Args)]
pub struct StabilityArgs {
    /// JSON config with the same keys as the long flags (snake_case).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in reference setting, 1 or 2.
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
    example: Option<u8>,
    /// Custom policy JSON `{"A": [[...]], "p": [...]}`.
    #[arg(long)]
    matrix: Option<PathBuf>,
    /// Comma-separated Hessian diagonal, one entry per agent.
    #[arg(long, value_delimiter = ',')]
    h: Option<Vec<f64>>,
    #[arg(long)]
    mu_min: Option<f64>,
    #[arg(long)]
    mu_max: Option<f64>,
    #[arg(long)]
    points: Option<usize>,
    #[arg(long)]
    spacing: Option<Spacing>,
    /// Write the sweep CSV here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Run the Jury test at `--mu` instead of sweeping.
    #[arg(long)]
    jury: bool,
    #[arg(long)]
    mu: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct StabilityConfig {
    example: Option<u8>,
    matrix: Option<PathBuf>,
    h: Option<OneOrMany<f64>>,
    mu_min: Option<f64>,
    mu_max: Option<f64>,
    points: Option<usize>,
    spacing: Option<Spacing>,
    out: Option<PathBuf>,
    jury: Option<bool>,
    mu: Option<f64>,
}

#[derive(Serialize)]
struct SweepSummary {
    points: usize,
    stable: usize,
    first_unstable: Option<f64>,
    min_rho: f64,
    max_rho: f64,
    file: PathBuf,
}

pub fn run(args: StabilityArgs) -> CliResult<()> {
    let file: StabilityConfig = config::load(args.config.as_deref())?;
    let (example, matrix) = if args.example.is_some() || args.matrix.is_some() {
        (args.example, args.matrix)
    } else {
        (file.example, file.matrix)
    };
    let h = args.h.or(file.h.map(OneOrMany::into_vec));
    let out = args.out.or(file.out);

    if args.jury || file.jury.unwrap_or(false) {
        if matrix.is_some() || example.is_some_and(|e| e != 1) || h.is_some() {
            return Err(CliError::usage("the Jury test applies to the first reference setting only"));
        }
        let mu = args
            .mu
            .or(file.mu)
            .ok_or_else(|| CliError::usage("--jury needs --mu"))?;
        if !mu.is_finite() {
            return Err(CliError::usage(format!("mu must be finite, got {mu}")));
        }
        let verdict = jury_stability_test(&example1_characteristic_poly(mu)).invalid()?;
        let json = serde_json::to_string_pretty(&verdict).invalid()? + "\n";
        return emit(out.as_ref(), &json);
    }
    if args.mu.or(file.mu).is_some() {
        return Err(CliError::usage("--mu is only used with --jury; sweeps take --mu-min/--mu-max"));
    }

    let (a, perron, default_h) = match (example, matrix) {
        (Some(_), Some(_)) => return Err(CliError::usage("give either --example or --matrix, not both")),
        (None, None) => return Err(CliError::usage("a sweep needs --example or --matrix")),
        (Some(id), None) => {
            let (a, d) = reference_setting(id).ok_or_else(|| CliError::usage(format!("no reference setting {id}")))?;
            (a, None, Some(d))
        }
        (None, Some(path)) => {
            let policy = CombinationPolicy::load(&path)
                .with_context(|| format!("loading policy {}", path.display()))
                .invalid()?;
            (policy.a, Some(policy.perron), None)
        }
    };
    let h = match (h, default_h) {
        (Some(h), _) => DVector::from_vec(h),
        (None, Some(d)) => d,
        (None, None) => return Err(CliError::usage("a custom matrix needs --h")),
    };

    let mu_min = args.mu_min.or(file.mu_min).unwrap_or(1e-6);
    let mu_max = args.mu_max.or(file.mu_max).unwrap_or(3.0);
    let points = args.points.or(file.points).unwrap_or(300);
    let spacing = args.spacing.or(file.spacing).unwrap_or(Spacing::Log);
    if !(mu_min > 0.0 && mu_min <= mu_max && mu_max.is_finite()) || points == 0 {
        return Err(CliError::usage(format!(
            "need 0 < mu_min <= mu_max and points >= 1, got [{mu_min}, {mu_max}] with {points} points"
        )));
    }
    let grid = match spacing {
        Spacing::Log => log_grid(mu_min, mu_max, points),
        Spacing::Linear => linear_grid(mu_min, mu_max, points),
    };
    let report = sweep_rho(&a, perron.as_ref(), &h, &grid).invalid()?;
    let mut csv = Vec::new();
    report.write_csv(&mut csv).invalid()?;
    let csv = String::from_utf8(csv).invalid()?;
    emit(out.as_ref(), &csv)?;
    if let Some(path) = out {
        let summary = SweepSummary {
            points: report.len(),
            stable: report.stable.iter().filter(|&&s| s).count(),
            first_unstable: report.first_unstable(),
            min_rho: report.rho.iter().copied().fold(f64::INFINITY, f64::min),
            max_rho: report.rho.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            file: path,
        };
        emit(None, &(serde_json::to_string_pretty(&summary).invalid()? + "\n"))?;
    }
    Ok(())
}
