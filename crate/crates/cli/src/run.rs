//! `evolve` and `oracle-check`: one engine run written as CSV plus sidecar.

use std::path::{Path, PathBuf};

use serde_json::{json, Value};
use toa_lab_core::engine::{simulate, SurvivalSeries};
use toa_lab_core::oracle::dense_oracle_evolve;
use toa_lab_core::stats::toa_distribution;

use crate::error::{CliError, CliResult};
use crate::output::{sidecar_path, write_json, Cell, Csv};
use crate::settings::{default_out, RunConfig, Settings};
use crate::Outcome;

pub const DEFAULT_ORACLE_TOL: f64 = 1e-9;

pub struct RunOutput {
    pub series: SurvivalSeries,
    pub csv: Csv,
    pub sidecar: Value,
    pub oracle_delta: Option<f64>,
}

pub fn run(config: &RunConfig, echo: &Settings, with_oracle: bool) -> CliResult<RunOutput> {
    let spec = config.spec();
    let schedule = config.schedule()?;
    let initial = config.initial_state();
    let series = simulate(&spec, &initial, &schedule, config.propagation())?;
    let oracle = if with_oracle {
        Some(dense_oracle_evolve(&spec, &initial, &schedule)?)
    } else {
        None
    };

    let n_sites = config.sites as f64;
    let mut csv = match oracle {
        Some(_) => Csv::new(&["n", "t", "x", "P", "P_oracle", "delta"]),
        None => Csv::new(&["n", "t", "x", "P"]),
    };
    let mut max_delta: Option<f64> = None;
    for (i, r) in series.records.iter().enumerate() {
        let mut row: Vec<Cell> = vec![r.n.into(), r.t.into(), (r.t * config.tau / n_sites).into(), r.survival.into()];
        if let Some(o) = &oracle {
            let reference = o.records[i].survival;
            let delta = r.survival - reference;
            max_delta = Some(max_delta.unwrap_or(0.0).max(delta.abs()));
            row.push(reference.into());
            row.push(delta.into());
        }
        csv.row(row);
    }

    let mut sidecar = json!({
        "config": echo,
        "terminal_reason": series.terminal_reason,
        "records": series.records.len(),
        "final_survival": series.final_survival(),
        "clamped": series.clamped,
    });
    if let Ok(d) = toa_distribution(&series) {
        sidecar["first_detection"] = json!({
            "detected_mass": d.detected_mass,
            "undetected_mass": d.undetected_mass,
            "conditional_mean_toa": d.conditional_mean_toa,
            "conditional_variance": d.conditional_variance(),
            "approximate": d.approximate,
        });
    }
    if let Some(delta) = max_delta {
        sidecar["oracle_max_delta"] = json!(delta);
    }
    Ok(RunOutput {
        series,
        csv,
        sidecar,
        oracle_delta: max_delta,
    })
}

pub fn output_path(settings: &Settings, config: &RunConfig, prefix: &str) -> PathBuf {
    settings
        .out
        .clone()
        .unwrap_or_else(|| default_out(&format!("{prefix}_{}.csv", config.label())))
}

pub fn write_run(out: &RunOutput, path: &Path) -> CliResult<()> {
    out.csv.write(path)?;
    write_json(&sidecar_path(path), &out.sidecar)
}

fn oracle_tol(settings: &Settings) -> CliResult<f64> {
    match settings.oracle_tol {
        Some(t) if !(t >= 0.0) => Err(CliError::config("oracle-tol", "must be non-negative")),
        Some(t) => Ok(t),
        None => Ok(DEFAULT_ORACLE_TOL),
    }
}

fn check_oracle_size(config: &RunConfig) -> CliResult<()> {
    if config.sites > toa_lab_core::oracle::ORACLE_MAX_SITES {
        return Err(CliError::config(
            "sites",
            format!(
                "the dense reference handles at most {} sites",
                toa_lab_core::oracle::ORACLE_MAX_SITES
            ),
        ));
    }
    Ok(())
}

pub fn cmd_evolve(settings: &Settings) -> CliResult<Outcome> {
    let config = settings.resolve()?;
    let with_oracle = settings.oracle.unwrap_or(false);
    let tol = oracle_tol(settings)?;
    if with_oracle {
        check_oracle_size(&config)?;
    }
    let echo = config.as_settings().over(settings.clone());
    let out = run(&config, &echo, with_oracle)?;
    let path = output_path(settings, &config, "evolve");
    write_run(&out, &path)?;
    let passed = out.oracle_delta.is_none_or(|d| d <= tol);
    eprintln!(
        "wrote {} ({} records, {:?})",
        path.display(),
        out.series.records.len(),
        out.series.terminal_reason
    );
    Ok(Outcome { passed })
}

pub fn cmd_oracle_check(settings: &Settings) -> CliResult<Outcome> {
    let config = settings.resolve()?;
    check_oracle_size(&config)?;
    let tol = oracle_tol(settings)?;
    let echo = config.as_settings().over(settings.clone());
    let out = run(&config, &echo, true)?;
    let delta = out.oracle_delta.unwrap_or(0.0);
    let passed = delta <= tol;
    if let Some(path) = &settings.out {
        write_run(&out, path)?;
    }
    let report = json!({
        "config": echo,
        "max_delta": delta,
        "tolerance": tol,
        "records": out.series.records.len(),
        "status": if passed { "pass" } else { "fail" },
    });
    println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
    Ok(Outcome { passed })
}
