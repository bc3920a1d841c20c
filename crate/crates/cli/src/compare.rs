//! `compare`: run the engine once and grade it against the small-τ model,
//! the regime exponents, the ring plateau and exact closed forms.

use serde::Serialize;
use serde_json::json;
use toa_lab_core::engine::{InitialState, SurvivalSeries};
use toa_lab_core::lattice::{Boundary, Site};
use toa_lab_core::perturb::{decay_rates, ring_plateau};
use toa_lab_core::stats::{estimate_plateau, fit_power_law, toa_distribution, FitWindow};
use toa_lab_core::Error as CoreError;

use crate::error::{CliError, CliResult};
use crate::output::write_json;
use crate::run::run;
use crate::settings::{default_out, parse_list, RunConfig, Settings};
use crate::Outcome;

pub const DEFAULT_MODEL_TOL: f64 = 0.05;
pub const DEFAULT_MIN_SURVIVAL: f64 = 1e-8;
pub const DEFAULT_EXPONENT_TOL: f64 = 0.05;
pub const DEFAULT_PLATEAU_TOL: f64 = 0.01;
pub const PLATEAU_TAIL_FRACTION: f64 = 0.2;
pub const CLOSED_FORM_TOL: f64 = 1e-12;
pub const CONSERVATION_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Pass,
    Fail,
    Inconclusive,
    NotApplicable,
}

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub status: Status,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,
    pub detail: serde_json::Value,
}

impl Check {
    fn skipped(name: &'static str, why: impl Into<String>) -> Self {
        Self {
            name,
            status: Status::NotApplicable,
            value: None,
            target: None,
            tolerance: None,
            detail: json!({ "reason": why.into() }),
        }
    }

    fn inconclusive(name: &'static str, why: impl Into<String>) -> Self {
        Self {
            status: Status::Inconclusive,
            ..Self::skipped(name, why)
        }
    }

    fn graded(name: &'static str, value: f64, target: f64, tolerance: f64, detail: serde_json::Value) -> Self {
        let ok = (value - target).abs() <= tolerance;
        Self {
            name,
            status: if ok { Status::Pass } else { Status::Fail },
            value: Some(value),
            target: Some(target),
            tolerance: Some(tolerance),
            detail,
        }
    }
}

#[derive(Debug, Default, Serialize)]
struct Deviation {
    points: usize,
    max_relative: f64,
    mean_relative: f64,
    worst_t: Option<f64>,
}

impl Deviation {
    fn push(&mut self, t: f64, rel: f64) {
        if rel > self.max_relative || self.worst_t.is_none() {
            self.max_relative = self.max_relative.max(rel);
            self.worst_t = Some(t);
        }
        self.mean_relative += rel;
        self.points += 1;
    }

    fn finish(mut self) -> Self {
        if self.points > 0 {
            self.mean_relative /= self.points as f64;
        }
        self
    }
}

fn model_check(config: &RunConfig, series: &SurvivalSeries, tol: f64, min_survival: f64) -> Check {
    const NAME: &str = "model-deviation";
    let model = match decay_rates(&config.spec(), config.tau) {
        Ok(m) => m,
        Err(e) => return Check::skipped(NAME, e.to_string()),
    };
    let predict = |t: f64| -> Result<f64, CoreError> {
        match config.initial_state() {
            InitialState::Position(site) => model.survival_position_sum(site, t).map(|e| e.value),
            InitialState::ReducedMode(mode) => model.survival_eigenstate(mode, t).map(|e| e.value),
            other => Err(CoreError::NotApplicable(format!("no prediction for `{other}`"))),
        }
    };
    if let Err(e) = predict(0.0) {
        return Check::skipped(NAME, e.to_string());
    }
    let site = config.start_site();
    let bulk = site.map(|s| FitWindow::bulk(s.0));
    let tail = site.map(|s| FitWindow::boundary_tail(s.0));
    let (mut all, mut in_bulk, mut in_tail) = (Deviation::default(), Deviation::default(), Deviation::default());
    for r in series.records.iter().filter(|r| r.survival >= min_survival) {
        let Ok(p) = predict(r.t) else { continue };
        let rel = (r.survival - p).abs() / r.survival;
        let x = series.scaling_variable(r.t);
        all.push(r.t, rel);
        if bulk.is_some_and(|w| w.contains(x)) {
            in_bulk.push(r.t, rel);
        }
        if tail.is_some_and(|w| w.contains(x)) {
            in_tail.push(r.t, rel);
        }
    }
    let all = all.finish();
    if all.points == 0 {
        return Check::inconclusive(NAME, format!("no records with P >= {min_survival}"));
    }
    let worst = all.max_relative;
    let detail = json!({
        "min_survival": min_survival,
        "all": all,
        "bulk": in_bulk.finish(),
        "boundary_tail": in_tail.finish(),
    });
    let mut check = Check::graded(NAME, worst, 0.0, tol, detail);
    check.target = None;
    check
}

fn exponent_check(
    name: &'static str,
    series: &SurvivalSeries,
    window: FitWindow,
    plateau: f64,
    target: f64,
    tol: f64,
) -> Check {
    match fit_power_law(series, window, plateau) {
        Ok(fit) => Check::graded(
            name,
            fit.exponent,
            target,
            tol,
            json!({
                "window": window.to_string(),
                "plateau": plateau,
                "points": fit.n_points,
                "amplitude": fit.amplitude,
                "residual": fit.residual,
            }),
        ),
        Err(CoreError::Insufficient(why)) => Check::inconclusive(name, format!("window {window}: {why}")),
        Err(e) => Check::inconclusive(name, format!("window {window}: {e}")),
    }
}

/// Plateau implied by the boundary and start site, when there is one.
fn predicted_plateau(config: &RunConfig, override_value: Option<f64>) -> Option<f64> {
    if let Some(p) = override_value {
        return Some(p);
    }
    match (config.boundary, config.start_site()) {
        (Boundary::Open, _) => Some(0.0),
        (Boundary::Ring, Some(site)) if config.detector == config.sites && config.sites % 2 == 0 => {
            ring_plateau(config.sites, site).ok()
        }
        _ => None,
    }
}

fn closed_form_check(config: &RunConfig, series: &SurvivalSeries) -> Check {
    const NAME: &str = "two-site-closed-form";
    let applies = config.sites == 2
        && config.boundary == Boundary::Open
        && config.start_site().is_some_and(|s| s.0 != config.detector);
    if !applies {
        return Check::skipped(NAME, "only for the open two-site chain started off the detector");
    }
    let cos2 = config.tau.cos().powi(2);
    let worst = series
        .records
        .iter()
        .map(|r| (r.survival - cos2.powf(r.n as f64)).abs())
        .fold(0.0, f64::max);
    Check::graded(NAME, worst, 0.0, CLOSED_FORM_TOL, json!({ "formula": "cos^(2n)(tau)" }))
}

fn conservation_check(series: &SurvivalSeries) -> Check {
    const NAME: &str = "conservation";
    if !series.is_stride_one() {
        return Check::skipped(NAME, "needs every measurement recorded");
    }
    match toa_distribution(series) {
        Ok(d) => Check::graded(
            NAME,
            d.total_mass(),
            1.0,
            CONSERVATION_TOL,
            json!({ "detected_mass": d.detected_mass, "undetected_mass": d.undetected_mass }),
        ),
        Err(e) => Check::inconclusive(NAME, e.to_string()),
    }
}

pub const CHECK_NAMES: [&str; 6] = [
    "model-deviation",
    "bulk-exponent",
    "tail-exponent",
    "plateau",
    "two-site-closed-form",
    "conservation",
];

fn selected_checks(settings: &Settings) -> CliResult<Option<Vec<String>>> {
    let Some(list) = &settings.checks else { return Ok(None) };
    let names: Vec<String> = parse_list("checks", list)?;
    for name in &names {
        if !CHECK_NAMES.contains(&name.as_str()) {
            return Err(CliError::config(
                "checks",
                format!("unknown check `{name}` (expected one of {})", CHECK_NAMES.join(", ")),
            ));
        }
    }
    Ok(Some(names))
}

pub fn grade(config: &RunConfig, settings: &Settings, series: &SurvivalSeries) -> CliResult<Vec<Check>> {
    let model_tol = settings.model_tol.unwrap_or(DEFAULT_MODEL_TOL);
    let min_survival = settings.min_survival.unwrap_or(DEFAULT_MIN_SURVIVAL);
    let exponent_tol = settings.exponent_tol.unwrap_or(DEFAULT_EXPONENT_TOL);
    let plateau_tol = settings.plateau_tol.unwrap_or(DEFAULT_PLATEAU_TOL);
    let user_window = settings.window()?;

    let mut checks = vec![model_check(config, series, model_tol, min_survival)];
    let plateau = predicted_plateau(config, settings.plateau);
    let continuum = decay_rates(&config.spec(), config.tau);
    match (config.start_site(), plateau, continuum) {
        (_, _, Err(e)) => {
            checks.push(Check::skipped("bulk-exponent", e.to_string()));
            checks.push(Check::skipped("tail-exponent", e.to_string()));
        }
        (Some(Site(l)), Some(plateau), Ok(_)) => {
            let bulk = user_window.unwrap_or(FitWindow::bulk(l));
            if bulk.hi > bulk.lo {
                checks.push(exponent_check("bulk-exponent", series, bulk, plateau, -0.5, exponent_tol));
            } else {
                checks.push(Check::inconclusive("bulk-exponent", format!("start site {l} has no bulk window")));
            }
            checks.push(exponent_check(
                "tail-exponent",
                series,
                FitWindow::boundary_tail(l),
                plateau,
                -1.5,
                exponent_tol,
            ));
        }
        _ => {
            checks.push(Check::skipped("bulk-exponent", "needs a localized start and a known plateau"));
            checks.push(Check::skipped("tail-exponent", "needs a localized start and a known plateau"));
        }
    }
    checks.push(match (config.boundary, plateau) {
        (Boundary::Ring, Some(want)) => match estimate_plateau(series, PLATEAU_TAIL_FRACTION) {
            Ok(est) => Check::graded(
                "plateau",
                est.value,
                want,
                plateau_tol,
                json!({ "spread": est.spread, "points": est.n_points, "t_start": est.t_start, "t_end": est.t_end }),
            ),
            Err(e) => Check::inconclusive("plateau", e.to_string()),
        },
        (Boundary::Ring, None) => Check::skipped("plateau", "no predicted plateau; pass --plateau"),
        (Boundary::Open, _) => Check::skipped("plateau", "open chains decay completely"),
    });
    checks.push(closed_form_check(config, series));
    checks.push(conservation_check(series));
    if let Some(names) = selected_checks(settings)? {
        checks.retain(|c| names.iter().any(|n| n == c.name));
    }
    Ok(checks)
}

/// Fail beats inconclusive beats pass; skipped checks do not count.
pub fn overall(checks: &[Check]) -> Status {
    let mut status = Status::Pass;
    for c in checks {
        match c.status {
            Status::Fail => return Status::Fail,
            Status::Inconclusive => status = Status::Inconclusive,
            _ => {}
        }
    }
    status
}

pub fn cmd_compare(settings: &Settings) -> CliResult<Outcome> {
    let config = settings.resolve()?;
    settings.window()?;
    selected_checks(settings)?;
    let echo = config.as_settings().over(settings.clone());
    let out = run(&config, &echo, false)?;
    let checks = grade(&config, settings, &out.series)?;
    let status = overall(&checks);
    let report = json!({
        "config": echo,
        "terminal_reason": out.series.terminal_reason,
        "records": out.series.records.len(),
        "final_survival": out.series.final_survival(),
        "checks": checks,
        "status": status,
    });
    let path = settings
        .out
        .clone()
        .unwrap_or_else(|| default_out(&format!("compare_{}.json", config.label())));
    write_json(&path, &report)?;
    for c in &checks {
        eprintln!(
            "{:<22} {:<14} {}",
            c.name,
            serde_json::to_value(c.status).unwrap().as_str().unwrap_or(""),
            c.value.map(|v| format!("{v:.6e}")).unwrap_or_default()
        );
    }
    eprintln!("wrote {}", path.display());
    Ok(Outcome {
        passed: status == Status::Pass,
    })
}
