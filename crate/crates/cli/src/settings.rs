//! Flag/config-file layer. Every flag has a kebab-case key of the same name
//! in the config file; flags given on the command line win.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::Args;
use serde::{Deserialize, Serialize};
use toa_lab_core::engine::{default_stop_survival, InitialState, MeasurementSchedule, Propagation, Recording};
use toa_lab_core::lattice::{Boundary, LatticeSpec, Site};
use toa_lab_core::stats::FitWindow;

use crate::error::{CliError, CliResult};

pub const DEFAULT_STEPS: u64 = 100_000;
pub const OUT_DIR_ENV: &str = "TOA_LAB_OUT_DIR";

#[derive(Debug, Clone, Default, PartialEq, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct Settings {
    /// open | ring
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub boundary: Option<String>,

    /// Number of lattice sites N.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sites: Option<usize>,

    /// Time between measurements.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,

    /// Detector site, 1-based (default N).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detector: Option<usize>,

    /// pos:L | mode:S | reduced-mode:S; `pos:mid` means L = N/2.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub initial: Option<String>,

    /// Maximum number of measurements.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub steps: Option<u64>,

    /// Stop once P drops below this (0 disables).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stop_survival: Option<f64>,

    /// log | log:K | every | stride:K
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub record: Option<String>,

    /// step | spectral | auto
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub engine: Option<String>,

    /// x-window XLO:XHI for fits and collapse.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub window: Option<String>,

    /// Output file (evolve, perturb, compare, oracle-check) or directory (sweep).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,

    /// Worker threads for sweeps.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub jobs: Option<usize>,

    /// Also run the dense reference evolution and report the difference.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle: Option<bool>,

    /// Tolerance for engine/oracle agreement.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle_tol: Option<f64>,

    /// Relative tolerance for engine vs mode sum.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model_tol: Option<f64>,

    /// Compare engine and model only where P is at least this.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min_survival: Option<f64>,

    /// Allowed distance from the target power-law exponent.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub exponent_tol: Option<f64>,

    /// Allowed distance of the plateau estimate from its prediction.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub plateau_tol: Option<f64>,

    /// Survival level subtracted before fits and collapse.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub plateau: Option<f64>,

    /// Compare: comma-separated subset of model-deviation, bulk-exponent,
    /// tail-exponent, plateau, two-site-closed-form, conservation.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checks: Option<String>,

    /// Sweep: comma-separated N values.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sites_list: Option<String>,

    /// Sweep: comma-separated τ values.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau_list: Option<String>,

    /// Sweep: comma-separated initial states.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub initial_list: Option<String>,

    /// Sweep: product | zip
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pairing: Option<String>,

    /// Sweep: per-point power-law fit window, bulk | tail | XLO:XHI.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fit_window: Option<String>,

    /// Sweep: expected exponent of every per-point fit.
    #[arg(long, allow_hyphen_values = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub expect_exponent: Option<f64>,

    /// Sweep: largest allowed collapse log-deviation.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub collapse_tol: Option<f64>,
}

macro_rules! overlay {
    ($top:ident, $base:ident; $($field:ident),* $(,)?) => {
        Settings { $($field: $top.$field.or($base.$field)),* }
    };
}

impl Settings {
    /// Fields set in `self` win over those in `base`.
    pub fn over(self, base: Settings) -> Settings {
        let top = self;
        overlay!(top, base;
            boundary, sites, tau, detector, initial, steps, stop_survival, record, engine,
            window, out, jobs, oracle, oracle_tol, model_tol, min_survival, exponent_tol,
            plateau_tol, plateau, checks, sites_list, tau_list, initial_list, pairing, fit_window,
            expect_exponent, collapse_tol,
        )
    }

    /// TOML, or JSON; a JSON sidecar is accepted and its `config` echo used.
    pub fn from_file(path: &Path) -> CliResult<Settings> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let file_err = |message: String| CliError::ConfigFile {
            path: path.to_path_buf(),
            message,
        };
        if path.extension().is_some_and(|e| e == "json") {
            let mut value: serde_json::Value = serde_json::from_str(&text).map_err(|e| file_err(e.to_string()))?;
            if let Some(config) = value.get_mut("config") {
                value = config.take();
            }
            serde_json::from_value(value).map_err(|e| file_err(e.to_string()))
        } else {
            toml::from_str(&text).map_err(|e| file_err(e.to_string()))
        }
    }

    #[cfg(test)]
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("settings serialize to TOML")
    }

    pub fn resolve(&self) -> CliResult<RunConfig> {
        let boundary = match &self.boundary {
            Some(b) => parse_field("boundary", b)?,
            None => Boundary::Open,
        };
        let sites = self.sites.ok_or_else(|| CliError::config("sites", "required"))?;
        let tau = self.tau.ok_or_else(|| CliError::config("tau", "required"))?;
        let initial = self.initial.as_deref().unwrap_or("pos:1");
        self.resolve_point(boundary, sites, tau, initial)
    }

    /// Resolve one run with the lattice size, τ and initial state given.
    pub fn resolve_point(&self, boundary: Boundary, sites: usize, tau: f64, initial: &str) -> CliResult<RunConfig> {
        let detector = self.detector.unwrap_or(sites);
        let spec = LatticeSpec::with_detector(sites, boundary, Site(detector))
            .map_err(|e| CliError::config("sites/detector", e.to_string()))?;
        if !(tau.is_finite() && tau > 0.0) {
            return Err(CliError::config("tau", format!("must be positive and finite, got {tau}")));
        }
        let initial = parse_initial(initial, sites)?;
        initial
            .site_amplitudes(&spec)
            .map_err(|e| CliError::config("initial", e.to_string()))?;
        let steps = self.steps.unwrap_or(DEFAULT_STEPS);
        let stop_survival = self.stop_survival.unwrap_or(default_stop_survival(boundary));
        let record: Recording = match &self.record {
            Some(r) => parse_field("record", r)?,
            None => Recording::log(),
        };
        let engine: Propagation = match &self.engine {
            Some(e) => parse_field("engine", e)?,
            None => Propagation::Auto,
        };
        let config = RunConfig {
            boundary,
            sites,
            detector,
            tau,
            initial: initial.to_string(),
            steps,
            stop_survival,
            record: record.to_string(),
            engine: engine.to_string(),
        };
        config.schedule().map_err(|e| CliError::config("steps/stop-survival/record", e.to_string()))?;
        Ok(config)
    }

    pub fn window(&self) -> CliResult<Option<FitWindow>> {
        self.window.as_deref().map(|w| parse_field("window", w)).transpose()
    }

    pub fn jobs(&self) -> CliResult<Option<usize>> {
        match self.jobs {
            Some(0) => Err(CliError::config("jobs", "must be at least 1")),
            j => Ok(j),
        }
    }
}

/// Fully resolved single run; serializes to the same keys as [`Settings`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct RunConfig {
    pub boundary: Boundary,
    pub sites: usize,
    pub detector: usize,
    pub tau: f64,
    pub initial: String,
    pub steps: u64,
    pub stop_survival: f64,
    pub record: String,
    pub engine: String,
}

impl RunConfig {
    pub fn spec(&self) -> LatticeSpec {
        LatticeSpec::with_detector(self.sites, self.boundary, Site(self.detector)).expect("validated")
    }

    pub fn initial_state(&self) -> InitialState {
        self.initial.parse().expect("validated")
    }

    pub fn recording(&self) -> Recording {
        self.record.parse().expect("validated")
    }

    pub fn propagation(&self) -> Propagation {
        self.engine.parse().expect("validated")
    }

    pub fn schedule(&self) -> toa_lab_core::Result<MeasurementSchedule> {
        MeasurementSchedule::new(self.tau, self.steps)?
            .with_stop_survival(self.stop_survival)?
            .with_recording(self.recording())
    }

    /// Initial site when the run starts localized.
    pub fn start_site(&self) -> Option<Site> {
        match self.initial_state() {
            InitialState::Position(site) => Some(site),
            _ => None,
        }
    }

    /// File stem such as `open_N100_tau0.1_pos50`.
    pub fn label(&self) -> String {
        let initial: String = self.initial.chars().filter(|c| c.is_ascii_alphanumeric() || *c == '-').collect();
        let detector = if self.detector == self.sites {
            String::new()
        } else {
            format!("_det{}", self.detector)
        };
        format!("{}_N{}{}_tau{}_{}", self.boundary, self.sites, detector, self.tau, initial)
    }

    /// Settings that reproduce exactly this run.
    pub fn as_settings(&self) -> Settings {
        Settings {
            boundary: Some(self.boundary.to_string()),
            sites: Some(self.sites),
            tau: Some(self.tau),
            detector: Some(self.detector),
            initial: Some(self.initial.clone()),
            steps: Some(self.steps),
            stop_survival: Some(self.stop_survival),
            record: Some(self.record.clone()),
            engine: Some(self.engine.clone()),
            ..Settings::default()
        }
    }
}

fn parse_field<T>(field: &'static str, value: &str) -> CliResult<T>
where
    T: FromStr,
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e: T::Err| CliError::config(field, e.to_string()))
}

fn parse_initial(value: &str, sites: usize) -> CliResult<InitialState> {
    let value = value.trim();
    if value == "pos:mid" {
        return Ok(InitialState::Position(Site((sites / 2).max(1))));
    }
    parse_field("initial", value)
}

/// Comma-separated list; empty entries are an error.
pub fn parse_list<T>(field: &'static str, value: &str) -> CliResult<Vec<T>>
where
    T: FromStr,
    T::Err: std::fmt::Display,
{
    value
        .split(',')
        .map(|item| {
            let item = item.trim();
            if item.is_empty() {
                Err(CliError::config(field, format!("empty entry in `{value}`")))
            } else {
                item.parse().map_err(|e: T::Err| CliError::config(field, format!("`{item}`: {e}")))
            }
        })
        .collect()
}

/// Where an output goes when `--out` is absent.
pub fn default_out(file_name: &str) -> PathBuf {
    let root = std::env::var_os(OUT_DIR_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("."));
    root.join(file_name)
}
