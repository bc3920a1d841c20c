//! Stroboscopic evolution: free evolution for τ, then a projective
//! measurement at the detector site, repeated until detection.
//!
//! The un-normalized post-measurement state |ψ⁺_n⟩ is carried as
//! coefficients in the full-lattice eigenbasis, so the survival probability
//! P_n is its squared norm. One cycle costs O(N): multiply every coefficient
//! by e^{-iε_s τ}, read the detector amplitude a = Σ_s V[d,s] c_s, and
//! subtract a·V[d,·]. Since V[d,·] has unit norm this removes exactly |a|².

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fast_forward::SpectralPropagator;
use crate::lattice::{Boundary, LatticeSpec, Mode, Site};
use crate::numeric::CompensatedSum;
use crate::spectral::{reduced_open_basis, SpectralBasis};

/// Explicit initial vectors must have unit norm to within this.
pub const EXPLICIT_NORM_TOL: f64 = 1e-9;

/// Survival increases smaller than this are rounding and get clamped.
const MONOTONE_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub enum InitialState {
    /// Particle localized on one site.
    Position(Site),
    /// Eigenmode of the full lattice Hamiltonian.
    Mode(Mode),
    /// Eigenmode of the chain with site N removed, extended by 0 on site N.
    ReducedMode(Mode),
    /// Site amplitudes; renormalized exactly after the unit-norm check.
    Amplitudes(Vec<Complex64>),
}

impl fmt::Display for InitialState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InitialState::Position(site) => write!(f, "pos:{}", site.0),
            InitialState::Mode(mode) => write!(f, "mode:{}", mode.0),
            InitialState::ReducedMode(mode) => write!(f, "reduced-mode:{}", mode.0),
            InitialState::Amplitudes(v) => write!(f, "explicit[{}]", v.len()),
        }
    }
}

impl FromStr for InitialState {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, value) = s
            .trim()
            .split_once(':')
            .ok_or_else(|| Error::InvalidState(format!("`{s}`: expected KIND:INDEX")))?;
        let index: usize = value
            .trim()
            .parse()
            .map_err(|_| Error::InvalidState(format!("`{s}`: index is not a positive integer")))?;
        match kind.trim() {
            "pos" | "position" => Ok(InitialState::Position(Site(index))),
            "mode" => Ok(InitialState::Mode(Mode(index))),
            "reduced-mode" | "reduced" => Ok(InitialState::ReducedMode(Mode(index))),
            other => Err(Error::InvalidState(format!(
                "unknown initial-state kind `{other}` (expected pos|mode|reduced-mode)"
            ))),
        }
    }
}

impl InitialState {
    /// Position-basis amplitudes of the state on `spec`.
    pub fn site_amplitudes(&self, spec: &LatticeSpec) -> Result<Vec<Complex64>> {
        let n = spec.n_sites();
        match self {
            InitialState::Position(site) => {
                spec.check_site(*site)?;
                let mut v = vec![Complex64::ZERO; n];
                v[site.index0()] = Complex64::ONE;
                Ok(v)
            }
            InitialState::Mode(mode) => {
                let basis = SpectralBasis::for_lattice(spec)?;
                basis.check_mode(*mode)?;
                Ok(basis
                    .eigenvectors()
                    .column(mode.index0())
                    .iter()
                    .map(|&a| Complex64::from(a))
                    .collect())
            }
            InitialState::ReducedMode(mode) => {
                let reduced = reduced_open_basis(n, Boundary::Open)?;
                reduced.check_mode(*mode)?;
                let mut v: Vec<Complex64> = reduced
                    .eigenvectors()
                    .column(mode.index0())
                    .iter()
                    .map(|&a| Complex64::from(a))
                    .collect();
                v.push(Complex64::ZERO);
                Ok(v)
            }
            InitialState::Amplitudes(v) => {
                if v.len() != n {
                    return Err(Error::InvalidState(format!(
                        "explicit vector has {} entries for {n} sites",
                        v.len()
                    )));
                }
                let norm_sqr: f64 = v.iter().map(|z| z.norm_sqr()).sum();
                if norm_sqr == 0.0 || !norm_sqr.is_finite() {
                    return Err(Error::InvalidState("explicit vector is zero".into()));
                }
                let norm = norm_sqr.sqrt();
                if (norm - 1.0).abs() > EXPLICIT_NORM_TOL {
                    return Err(Error::InvalidState(format!(
                        "explicit vector has norm {norm}, expected 1"
                    )));
                }
                Ok(v.iter().map(|z| z / norm).collect())
            }
        }
    }
}

/// Which measurements end up in a [`SurvivalSeries`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Recording {
    Every,
    Stride(u64),
    Log { per_decade: u32 },
}

impl Recording {
    pub const DEFAULT_PER_DECADE: u32 = 50;

    pub fn log() -> Self {
        Recording::Log {
            per_decade: Self::DEFAULT_PER_DECADE,
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            Recording::Stride(0) => Err(Error::InvalidSchedule("stride must be >= 1".into())),
            Recording::Log { per_decade: 0 } => Err(Error::InvalidSchedule(
                "log grid needs at least 1 point per decade".into(),
            )),
            _ => Ok(()),
        }
    }

    /// Recorded step numbers after `start`, ending with `max_steps`.
    pub fn cursor(&self, start: u64, max_steps: u64) -> GridCursor {
        GridCursor {
            recording: *self,
            max_steps,
            last: start,
            k: 0,
            done: start >= max_steps,
        }
    }
}

impl fmt::Display for Recording {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Recording::Every => f.write_str("every"),
            Recording::Stride(k) => write!(f, "stride:{k}"),
            Recording::Log { per_decade } if *per_decade == Self::DEFAULT_PER_DECADE => {
                f.write_str("log")
            }
            Recording::Log { per_decade } => write!(f, "log:{per_decade}"),
        }
    }
}

impl FromStr for Recording {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || Error::InvalidSchedule(format!("bad recording `{s}` (log|log:K|every|stride:K)"));
        let rec = match s.split_once(':') {
            None if s == "every" => Recording::Every,
            None if s == "log" => Recording::log(),
            Some(("stride", k)) => Recording::Stride(k.parse().map_err(|_| bad())?),
            Some(("log", k)) => Recording::Log {
                per_decade: k.parse().map_err(|_| bad())?,
            },
            _ => return Err(bad()),
        };
        rec.validate()?;
        Ok(rec)
    }
}

/// Strictly increasing step numbers of a recording grid.
#[derive(Debug, Clone)]
pub struct GridCursor {
    recording: Recording,
    max_steps: u64,
    last: u64,
    k: u64,
    done: bool,
}

impl Iterator for GridCursor {
    type Item = u64;

    fn next(&mut self) -> Option<u64> {
        if self.done {
            return None;
        }
        let candidate = match self.recording {
            Recording::Every => self.last + 1,
            Recording::Stride(k) => (self.last / k + 1) * k,
            Recording::Log { per_decade } => loop {
                let n = 10f64.powf(self.k as f64 / per_decade as f64).round() as u64;
                self.k += 1;
                if n > self.last {
                    break n;
                }
            },
        };
        let n = candidate.min(self.max_steps);
        self.done = n == self.max_steps;
        self.last = n;
        Some(n)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeasurementSchedule {
    pub tau: f64,
    pub max_steps: u64,
    /// Stop once survival drops strictly below this; 0 never stops early.
    pub stop_survival: f64,
    pub recording: Recording,
}

impl MeasurementSchedule {
    pub fn new(tau: f64, max_steps: u64) -> Result<Self> {
        let schedule = Self {
            tau,
            max_steps,
            stop_survival: 0.0,
            recording: Recording::log(),
        };
        schedule.validate()?;
        Ok(schedule)
    }

    pub fn with_stop_survival(mut self, stop: f64) -> Result<Self> {
        self.stop_survival = stop;
        self.validate()?;
        Ok(self)
    }

    pub fn with_recording(mut self, recording: Recording) -> Result<Self> {
        self.recording = recording;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::InvalidSchedule(format!(
                "tau must be positive and finite, got {}",
                self.tau
            )));
        }
        if self.max_steps == 0 {
            return Err(Error::InvalidSchedule("max_steps must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.stop_survival) {
            return Err(Error::InvalidSchedule(format!(
                "stop_survival must lie in [0, 1), got {}",
                self.stop_survival
            )));
        }
        self.recording.validate()
    }
}

/// Default early-stop threshold: open chains decay to zero, rings keep a
/// plateau and must run to `max_steps`.
pub fn default_stop_survival(boundary: Boundary) -> f64 {
    match boundary {
        Boundary::Open => 1e-12,
        Boundary::Ring => 0.0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminalReason {
    MaxSteps,
    Threshold,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub n: u64,
    pub t: f64,
    /// P_n, probability of no detection in the first n measurements.
    pub survival: f64,
    /// Σ_m |a_m|² accumulated directly. Equal to 1 - P_n, but keeps
    /// relative accuracy when 1 - P_n is far below machine epsilon.
    pub detected: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalSeries {
    pub spec: LatticeSpec,
    pub tau: f64,
    pub initial: String,
    pub recording: Recording,
    pub records: Vec<Record>,
    pub terminal_reason: TerminalReason,
    /// Set if a rounding-negative survival was clamped to zero.
    pub clamped: bool,
}

impl SurvivalSeries {
    /// Scaling variable x = tτ/N.
    pub fn scaling_variable(&self, t: f64) -> f64 {
        t * self.tau / self.spec.n_sites() as f64
    }

    /// (x, P) pairs.
    pub fn scaled_points(&self) -> Vec<(f64, f64)> {
        self.records
            .iter()
            .map(|r| (self.scaling_variable(r.t), r.survival))
            .collect()
    }

    pub fn final_survival(&self) -> f64 {
        self.records.last().map_or(1.0, |r| r.survival)
    }

    /// Records are exactly n = 1, 2, 3, ...
    pub fn is_stride_one(&self) -> bool {
        self.records
            .iter()
            .enumerate()
            .all(|(i, r)| r.n == i as u64 + 1)
    }
}

/// Accumulates records, keeping survival non-increasing.
pub(crate) struct SeriesBuilder {
    series: SurvivalSeries,
}

impl SeriesBuilder {
    pub(crate) fn new(spec: LatticeSpec, schedule: &MeasurementSchedule, initial: String) -> Self {
        Self {
            series: SurvivalSeries {
                spec,
                tau: schedule.tau,
                initial,
                recording: schedule.recording,
                records: Vec::new(),
                terminal_reason: TerminalReason::MaxSteps,
                clamped: false,
            },
        }
    }

    pub(crate) fn push(&mut self, n: u64, survival: f64, detected: f64) {
        let mut survival = survival.clamp(0.0, 1.0);
        if let Some(last) = self.series.records.last() {
            if n == last.n {
                return;
            }
            debug_assert!(
                survival <= last.survival + MONOTONE_SLACK,
                "survival rose from {} to {survival}",
                last.survival
            );
            survival = survival.min(last.survival);
        }
        self.series.records.push(Record {
            n,
            t: n as f64 * self.series.tau,
            survival,
            detected,
        });
    }

    pub(crate) fn finish(mut self, reason: TerminalReason, clamped: bool) -> SurvivalSeries {
        self.series.terminal_reason = reason;
        self.series.clamped = clamped;
        self.series
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    /// Conditional probability of no detection in this measurement.
    pub survival_factor: f64,
    /// Amplitude found on the detector site just before projection.
    pub detector_amplitude: Complex64,
}

/// Un-normalized post-measurement state in the full-lattice eigenbasis.
#[derive(Debug, Clone)]
pub struct WaveState {
    spec: LatticeSpec,
    basis: Arc<SpectralBasis>,
    detector_row: Vec<f64>,
    coeffs: Vec<Complex64>,
    survival: f64,
    detected: CompensatedSum,
    step_count: u64,
    clamped: bool,
    label: String,
    phases: Option<(f64, Vec<Complex64>)>,
}

/// Prepare `initial` on `spec`, expanding it in `basis` (which must be the
/// full-lattice eigenbasis of `spec`).
pub fn init_state(
    spec: &LatticeSpec,
    basis: Arc<SpectralBasis>,
    initial: &InitialState,
) -> Result<WaveState> {
    let n = spec.n_sites();
    if basis.dimension() != n {
        return Err(Error::InvalidSpec(format!(
            "basis has dimension {} for {n} sites",
            basis.dimension()
        )));
    }
    let coeffs = match initial {
        InitialState::Position(site) => {
            spec.check_site(*site)?;
            basis.site_row(*site).into_iter().map(Complex64::from).collect()
        }
        InitialState::Mode(mode) => {
            basis.check_mode(*mode)?;
            let mut c = vec![Complex64::ZERO; n];
            c[mode.index0()] = Complex64::ONE;
            c
        }
        _ => {
            let psi = initial.site_amplitudes(spec)?;
            let v = basis.eigenvectors();
            (0..n)
                .map(|s| {
                    v.column(s)
                        .iter()
                        .zip(&psi)
                        .map(|(&a, &z)| z * a)
                        .sum::<Complex64>()
                })
                .collect()
        }
    };
    Ok(WaveState {
        spec: *spec,
        detector_row: basis.site_row(spec.detector()),
        basis,
        coeffs,
        survival: 1.0,
        detected: CompensatedSum::new(),
        step_count: 0,
        clamped: false,
        label: initial.to_string(),
        phases: None,
    })
}

impl WaveState {
    /// Builds the full-lattice basis for `spec` and prepares `initial`.
    pub fn new(spec: &LatticeSpec, initial: &InitialState) -> Result<Self> {
        init_state(spec, Arc::new(SpectralBasis::for_lattice(spec)?), initial)
    }

    pub fn spec(&self) -> &LatticeSpec {
        &self.spec
    }

    pub fn basis(&self) -> &Arc<SpectralBasis> {
        &self.basis
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn survival(&self) -> f64 {
        self.survival
    }

    /// Accumulated detection probability Σ|a|².
    pub fn detected(&self) -> f64 {
        self.detected.value()
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn clamped(&self) -> bool {
        self.clamped
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// Σ|c_s|², recomputed from the coefficients.
    pub fn norm_sqr(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm_sqr()).sum()
    }

    fn phases(&mut self, tau: f64) -> &[Complex64] {
        let stale = !matches!(&self.phases, Some((t, _)) if *t == tau);
        if stale {
            let phases = self
                .basis
                .eigenvalues()
                .iter()
                .map(|e| Complex64::from_polar(1.0, -e * tau))
                .collect();
            self.phases = Some((tau, phases));
        }
        &self.phases.as_ref().expect("phases just set").1
    }

    /// One free evolution over `tau` followed by a null measurement.
    pub fn step(&mut self, tau: f64) -> Result<StepOutcome> {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::InvalidSchedule(format!(
                "tau must be positive and finite, got {tau}"
            )));
        }
        self.phases(tau);
        let phases = &self.phases.as_ref().expect("phases cached").1;

        let mut amplitude = Complex64::ZERO;
        for ((c, p), &v) in self.coeffs.iter_mut().zip(phases).zip(&self.detector_row) {
            *c *= p;
            amplitude += *c * v;
        }
        for (c, &v) in self.coeffs.iter_mut().zip(&self.detector_row) {
            *c -= amplitude * v;
        }

        let removed = amplitude.norm_sqr();
        let before = self.survival;
        let mut after = before - removed;
        if after < 0.0 {
            after = 0.0;
            self.clamped = true;
        }
        self.survival = after;
        self.detected.add(removed);
        self.step_count += 1;
        Ok(StepOutcome {
            survival_factor: if before > 0.0 { after / before } else { 0.0 },
            detector_amplitude: amplitude,
        })
    }

    /// Site amplitudes V·c of the current (un-normalized) state.
    pub fn position_amplitudes(&self) -> Vec<Complex64> {
        let v = self.basis.eigenvectors();
        (0..self.spec.n_sites())
            .map(|l| {
                v.row(l)
                    .iter()
                    .zip(&self.coeffs)
                    .map(|(&a, &c)| c * a)
                    .sum::<Complex64>()
            })
            .collect()
    }
}

/// Step `state` on the schedule's grid until `max_steps` or until survival
/// drops below `stop_survival`. Step numbers continue from the state's
/// current count.
pub fn evolve(state: &mut WaveState, schedule: &MeasurementSchedule) -> Result<SurvivalSeries> {
    schedule.validate()?;
    let mut builder = SeriesBuilder::new(state.spec, schedule, state.label.clone());
    let start = state.step_count;
    let mut reason = TerminalReason::MaxSteps;
    for target in schedule.recording.cursor(start, start + schedule.max_steps) {
        while state.step_count < target {
            state.step(schedule.tau)?;
            if state.survival < schedule.stop_survival {
                break;
            }
        }
        builder.push(state.step_count, state.survival, state.detected());
        if state.survival < schedule.stop_survival {
            reason = TerminalReason::Threshold;
            break;
        }
    }
    Ok(builder.finish(reason, state.clamped))
}

/// How [`simulate`] advances the state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Propagation {
    /// O(N) per measurement; exact to rounding.
    Stepping,
    /// Diagonalize the measured propagator once, then O(N²) per record.
    Spectral,
    /// Spectral for long log-recorded runs, stepping otherwise.
    Auto,
}

impl fmt::Display for Propagation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Propagation::Stepping => "step",
            Propagation::Spectral => "spectral",
            Propagation::Auto => "auto",
        })
    }
}

impl FromStr for Propagation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "step" | "stepping" => Ok(Propagation::Stepping),
            "spectral" => Ok(Propagation::Spectral),
            "auto" => Ok(Propagation::Auto),
            other => Err(Error::InvalidSchedule(format!(
                "unknown engine `{other}` (step|spectral|auto)"
            ))),
        }
    }
}

/// Sites × steps above which `Auto` switches to the spectral propagator.
pub const AUTO_SPECTRAL_WORK: f64 = 1e9;

/// Run one experiment from a fresh state.
pub fn simulate(
    spec: &LatticeSpec,
    initial: &InitialState,
    schedule: &MeasurementSchedule,
    propagation: Propagation,
) -> Result<SurvivalSeries> {
    let state = WaveState::new(spec, initial)?;
    simulate_state(state, schedule, propagation)
}

/// Like [`simulate`] but starting from a prepared state.
pub fn simulate_state(
    mut state: WaveState,
    schedule: &MeasurementSchedule,
    propagation: Propagation,
) -> Result<SurvivalSeries> {
    let use_spectral = match propagation {
        Propagation::Stepping => false,
        Propagation::Spectral => true,
        Propagation::Auto => {
            matches!(schedule.recording, Recording::Log { .. })
                && schedule.max_steps as f64 * state.spec.n_sites() as f64 >= AUTO_SPECTRAL_WORK
        }
    };
    if !use_spectral {
        return evolve(&mut state, schedule);
    }
    match SpectralPropagator::new(&state.spec, &state.basis, schedule.tau) {
        Ok(propagator) => match propagator.evolve(&state, schedule) {
            Err(Error::Propagator(_)) if propagation == Propagation::Auto => evolve(&mut state, schedule),
            other => other,
        },
        Err(err) if propagation == Propagation::Spectral => Err(err),
        Err(_) => evolve(&mut state, schedule),
    }
}
