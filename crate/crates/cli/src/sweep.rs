//! `sweep`: one `evolve` per grid point in parallel, then per-point fits and
//! a collapse of all curves in x.

use std::path::PathBuf;

use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;
use toa_lab_core::engine::SurvivalSeries;
use toa_lab_core::lattice::Boundary;
use toa_lab_core::perturb::ring_plateau;
use toa_lab_core::stats::{fit_power_law, scaling_collapse, FitWindow, PowerLawFit};

use crate::compare::DEFAULT_EXPONENT_TOL;
use crate::error::{CliError, CliResult};
use crate::output::{write_json, Cell, Csv};
use crate::run::{run, write_run};
use crate::settings::{default_out, parse_list, RunConfig, Settings};
use crate::Outcome;

pub const DEFAULT_COLLAPSE_WINDOW: FitWindow = FitWindow { lo: 1.0, hi: 100.0 };

#[derive(Debug, Clone, Copy, PartialEq)]
enum FitRegime {
    Bulk,
    Tail,
    Fixed(FitWindow),
}

impl FitRegime {
    fn parse(s: &str) -> CliResult<Self> {
        match s.trim() {
            "bulk" => Ok(FitRegime::Bulk),
            "tail" => Ok(FitRegime::Tail),
            w => w
                .parse()
                .map(FitRegime::Fixed)
                .map_err(|e: toa_lab_core::Error| CliError::config("fit-window", e.to_string())),
        }
    }

    fn window(self, site: Option<usize>) -> Option<FitWindow> {
        match (self, site) {
            (FitRegime::Fixed(w), _) => Some(w),
            (FitRegime::Bulk, Some(l)) => Some(FitWindow::bulk(l)),
            (FitRegime::Tail, Some(l)) => Some(FitWindow::boundary_tail(l)),
            _ => None,
        }
    }
}

/// The grid, resolved and validated before anything runs.
pub fn grid(settings: &Settings) -> CliResult<Vec<RunConfig>> {
    let boundary: Boundary = match &settings.boundary {
        Some(b) => b.parse().map_err(|e: toa_lab_core::Error| CliError::config("boundary", e.to_string()))?,
        None => Boundary::Open,
    };
    let sites: Vec<usize> = match (&settings.sites_list, settings.sites) {
        (Some(list), _) => parse_list("sites-list", list)?,
        (None, Some(n)) => vec![n],
        (None, None) => return Err(CliError::config("sites-list", "required (or --sites)")),
    };
    let taus: Vec<f64> = match (&settings.tau_list, settings.tau) {
        (Some(list), _) => parse_list("tau-list", list)?,
        (None, Some(t)) => vec![t],
        (None, None) => return Err(CliError::config("tau-list", "required (or --tau)")),
    };
    let initials: Vec<String> = match (&settings.initial_list, &settings.initial) {
        (Some(list), _) => parse_list("initial-list", list)?,
        (None, Some(i)) => vec![i.clone()],
        (None, None) => vec!["pos:1".into()],
    };
    let mut points = Vec::new();
    match settings.pairing.as_deref().unwrap_or("product") {
        "product" => {
            for &n in &sites {
                for &tau in &taus {
                    for init in &initials {
                        points.push((n, tau, init.clone()));
                    }
                }
            }
        }
        "zip" => {
            let len = sites.len().max(taus.len()).max(initials.len());
            let pick = |k: usize, i: usize| if k == 1 { 0 } else { i };
            for (name, k) in [("sites-list", sites.len()), ("tau-list", taus.len()), ("initial-list", initials.len())] {
                if k != 1 && k != len {
                    return Err(CliError::config(name, format!("zip pairing needs length 1 or {len}, got {k}")));
                }
            }
            for i in 0..len {
                points.push((sites[pick(sites.len(), i)], taus[pick(taus.len(), i)], initials[pick(initials.len(), i)].clone()));
            }
        }
        other => return Err(CliError::config("pairing", format!("`{other}` (expected product|zip)"))),
    }
    points
        .into_iter()
        .map(|(n, tau, init)| settings.resolve_point(boundary, n, tau, &init))
        .collect()
}

#[derive(Debug, Serialize)]
struct PointSummary {
    label: String,
    status: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    terminal_reason: Option<toa_lab_core::engine::TerminalReason>,
    #[serde(skip_serializing_if = "Option::is_none")]
    final_survival: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    exponent: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    fit_points: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    fit_note: Option<String>,
}

fn point_plateau(config: &RunConfig, fixed: Option<f64>) -> Option<f64> {
    fixed.or_else(|| match config.boundary {
        Boundary::Open => Some(0.0),
        Boundary::Ring => config.start_site().and_then(|s| ring_plateau(config.sites, s).ok()),
    })
}

pub fn cmd_sweep(settings: &Settings) -> CliResult<Outcome> {
    let points = grid(settings)?;
    let jobs = settings.jobs()?;
    let fit_regime = settings.fit_window.as_deref().map(FitRegime::parse).transpose()?;
    let collapse_window = settings.window()?.unwrap_or(DEFAULT_COLLAPSE_WINDOW);
    let exponent_tol = settings.exponent_tol.unwrap_or(DEFAULT_EXPONENT_TOL);
    let out_dir: PathBuf = settings.out.clone().unwrap_or_else(|| default_out("sweep"));

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.unwrap_or(0))
        .build()
        .map_err(|e| CliError::config("jobs", e.to_string()))?;
    let results: Vec<CliResult<SurvivalSeries>> = pool.install(|| {
        points
            .par_iter()
            .map(|config| {
                let echo = config.as_settings();
                let out = run(config, &echo, false)?;
                write_run(&out, &out_dir.join(format!("{}.csv", config.label())))?;
                Ok(out.series)
            })
            .collect()
    });

    let mut summaries = Vec::new();
    let mut table = Csv::new(&[
        "label", "sites", "tau", "initial", "status", "terminal_reason", "final_P", "exponent", "fit_points",
    ]);
    let mut finished: Vec<(&RunConfig, &SurvivalSeries)> = Vec::new();
    let mut any_failed = false;
    let mut exponents_ok = true;
    for (config, result) in points.iter().zip(&results) {
        let mut summary = PointSummary {
            label: config.label(),
            status: "ok",
            error: None,
            terminal_reason: None,
            final_survival: None,
            exponent: None,
            fit_points: None,
            fit_note: None,
        };
        match result {
            Err(e) => {
                any_failed = true;
                summary.status = "failed";
                summary.error = Some(e.to_string());
            }
            Ok(series) => {
                finished.push((config, series));
                summary.terminal_reason = Some(series.terminal_reason);
                summary.final_survival = Some(series.final_survival());
                if let Some(regime) = fit_regime {
                    let window = regime.window(config.start_site().map(|s| s.0));
                    let plateau = point_plateau(config, settings.plateau);
                    match (window, plateau) {
                        (Some(w), Some(p)) => match fit_power_law(series, w, p) {
                            Ok(PowerLawFit { exponent, n_points, .. }) => {
                                summary.exponent = Some(exponent);
                                summary.fit_points = Some(n_points);
                            }
                            Err(e) => summary.fit_note = Some(format!("inconclusive: {e}")),
                        },
                        _ => summary.fit_note = Some("inconclusive: no window or plateau for this point".into()),
                    }
                    if let Some(target) = settings.expect_exponent {
                        exponents_ok &= summary.exponent.is_some_and(|a| (a - target).abs() <= exponent_tol);
                    }
                }
            }
        }
        table.row(vec![
            summary.label.clone().into(),
            config.sites.into(),
            config.tau.into(),
            config.initial.clone().into(),
            summary.status.into(),
            summary
                .terminal_reason
                .map(|r| serde_json::to_value(r).unwrap().as_str().unwrap_or("").to_owned())
                .unwrap_or_default()
                .into(),
            summary.final_survival.into(),
            summary.exponent.into(),
            summary.fit_points.map_or(Cell::Empty, Cell::from),
        ]);
        summaries.push(summary);
    }

    let collapse_plateau = match settings.plateau {
        Some(p) => Some(p),
        None => {
            let plateaus: Vec<Option<f64>> = finished.iter().map(|(c, _)| point_plateau(c, None)).collect();
            match plateaus.first() {
                Some(&Some(p)) if plateaus.iter().all(|q| *q == Some(p)) => Some(p),
                _ => None,
            }
        }
    };
    let mut collapse_csv = Csv::new(&["label", "sites", "tau", "x", "P_minus_plateau"]);
    let collapse = match collapse_plateau {
        _ if finished.len() < 2 => json!({ "status": "inconclusive", "reason": "fewer than two finished points" }),
        None => json!({ "status": "inconclusive", "reason": "points disagree on the plateau; pass --plateau" }),
        Some(plateau) => {
            let series: Vec<SurvivalSeries> = finished.iter().map(|(_, s)| (*s).clone()).collect();
            match scaling_collapse(&series, collapse_window, plateau) {
                Ok(c) => {
                    for curve in &c.curves {
                        for &(x, p) in &curve.points {
                            collapse_csv.row(vec![
                                curve.label.clone().into(),
                                curve.n_sites.into(),
                                curve.tau.into(),
                                x.into(),
                                p.into(),
                            ]);
                        }
                    }
                    let status = match settings.collapse_tol {
                        Some(tol) if c.max_log_deviation <= tol => "pass",
                        Some(_) => "fail",
                        None => "reported",
                    };
                    json!({
                        "status": status,
                        "window": collapse_window.to_string(),
                        "plateau": plateau,
                        "max_log_deviation": c.max_log_deviation,
                        "compared_points": c.compared_points,
                        "tolerance": settings.collapse_tol,
                    })
                }
                Err(e) => json!({ "status": "inconclusive", "reason": e.to_string() }),
            }
        }
    };

    table.write(&out_dir.join("points.csv"))?;
    collapse_csv.write(&out_dir.join("collapse.csv"))?;
    let collapse_ok = match collapse["status"].as_str() {
        Some("fail") => false,
        Some("inconclusive") => settings.collapse_tol.is_none(),
        _ => true,
    };
    let passed = !any_failed && exponents_ok && collapse_ok;
    write_json(
        &out_dir.join("summary.json"),
        &json!({
            "config": settings,
            "points": summaries,
            "collapse": collapse,
            "expected_exponent": settings.expect_exponent,
            "exponent_tolerance": settings.expect_exponent.map(|_| exponent_tol),
            "status": if passed { "pass" } else { "fail" },
        }),
    )?;
    let failed = summaries.iter().filter(|s| s.status == "failed").count();
    eprintln!("sweep: {} points, {} failed, output in {}", summaries.len(), failed, out_dir.display());
    for s in summaries.iter().filter(|s| s.status == "failed") {
        eprintln!("  {}: {}", s.label, s.error.as_deref().unwrap_or(""));
    }
    Ok(Outcome { passed })
}
