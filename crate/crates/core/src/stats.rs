//! Time-of-arrival observables derived from survival series.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::engine::SurvivalSeries;
use crate::error::{Error, Result};
use crate::lattice::Boundary;
use crate::numeric::{fit_line, CompensatedSum};

/// Negative first-detection masses down to this are rounding and get clamped.
pub const NEGATIVE_MASS_CLAMP: f64 = 1e-14;
pub const MIN_FIT_POINTS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToaEntry {
    pub n: u64,
    pub t: f64,
    /// Probability of first detection in the measurements (n - width, n].
    pub p: f64,
    pub width: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToaDistribution {
    pub entries: Vec<ToaEntry>,
    pub detected_mass: f64,
    pub undetected_mass: f64,
    /// Mean arrival time given detection; `None` when nothing was detected.
    pub conditional_mean_toa: Option<f64>,
    pub conditional_second_moment: Option<f64>,
    /// True when the series skipped steps and masses are lumped per interval.
    pub approximate: bool,
}

impl ToaDistribution {
    /// Σ p_n + undetected mass; 1 up to rounding.
    pub fn total_mass(&self) -> f64 {
        self.detected_mass + self.undetected_mass
    }

    pub fn conditional_variance(&self) -> Option<f64> {
        let m = self.conditional_mean_toa?;
        Some(self.conditional_second_moment? - m * m)
    }
}

/// First-detection probabilities p_n = P_{n-1} - P_n with P_0 = 1.
pub fn toa_distribution(series: &SurvivalSeries) -> Result<ToaDistribution> {
    if series.records.is_empty() {
        return Err(Error::Insufficient("empty survival series".into()));
    }
    let tau = series.tau;
    let mut entries = Vec::with_capacity(series.records.len());
    let mut detected = CompensatedSum::new();
    let mut first = CompensatedSum::new();
    let mut second = CompensatedSum::new();
    let (mut prev_n, mut prev_p) = (0u64, 1.0f64);
    let mut approximate = false;
    for r in &series.records {
        if r.n <= prev_n {
            return Err(Error::Data(format!("step numbers not increasing at n = {}", r.n)));
        }
        let raw = prev_p - r.survival;
        if raw < -NEGATIVE_MASS_CLAMP {
            return Err(Error::Data(format!(
                "survival rises by {} at n = {}",
                -raw, r.n
            )));
        }
        let p = raw.max(0.0);
        let width = r.n - prev_n;
        approximate |= width > 1;
        // lumped mass sits at the interval midpoint
        let t_mid = 0.5 * (prev_n + 1 + r.n) as f64 * tau;
        detected.add(p);
        first.add(p * t_mid);
        second.add(p * t_mid * t_mid);
        entries.push(ToaEntry { n: r.n, t: r.t, p, width });
        prev_n = r.n;
        prev_p = r.survival;
    }
    let detected_mass = detected.value();
    let (mean, m2) = if detected_mass > 0.0 {
        (Some(first.value() / detected_mass), Some(second.value() / detected_mass))
    } else {
        (None, None)
    };
    Ok(ToaDistribution {
        entries,
        detected_mass,
        undetected_mass: prev_p,
        conditional_mean_toa: mean,
        conditional_second_moment: m2,
        approximate,
    })
}

/// Closed x-interval used for fits and collapse checks; `hi` may be infinite.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitWindow {
    pub lo: f64,
    pub hi: f64,
}

impl FitWindow {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo >= 0.0 && hi > lo) || lo.is_nan() || hi.is_nan() {
            return Err(Error::InvalidSchedule(format!("bad window [{lo}, {hi}]")));
        }
        Ok(Self { lo, hi })
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lo && x <= self.hi
    }

    /// 10 ≤ x ≤ min(10³, ℓ²/10), where the x^{-1/2} law holds.
    pub fn bulk(site: usize) -> Self {
        let l2 = (site * site) as f64;
        Self {
            lo: 10.0,
            hi: (l2 / 10.0).min(1e3).max(10.0),
        }
    }

    /// x ≥ 50ℓ², well past the crossover to x^{-3/2}.
    pub fn boundary_tail(site: usize) -> Self {
        Self {
            lo: 50.0 * (site * site) as f64,
            hi: f64::INFINITY,
        }
    }
}

impl fmt::Display for FitWindow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.hi.is_infinite() {
            write!(f, "{}:", self.lo)
        } else {
            write!(f, "{}:{}", self.lo, self.hi)
        }
    }
}

impl FromStr for FitWindow {
    type Err = Error;

    /// `XLO:XHI`; an empty or `inf` upper bound means unbounded.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidSchedule(format!("bad window `{s}` (XLO:XHI)"));
        let (lo, hi) = s.trim().split_once(':').ok_or_else(bad)?;
        let lo: f64 = lo.trim().parse().map_err(|_| bad())?;
        let hi = match hi.trim() {
            "" | "inf" => f64::INFINITY,
            v => v.parse().map_err(|_| bad())?,
        };
        Self::new(lo, hi)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerLawFit {
    pub exponent: f64,
    pub amplitude: f64,
    pub fit_window: FitWindow,
    /// Max absolute deviation from the fitted line in (ln x, ln P).
    pub residual: f64,
    pub n_points: usize,
}

impl PowerLawFit {
    pub fn eval(&self, x: f64) -> f64 {
        self.amplitude * x.powf(self.exponent)
    }
}

/// Least-squares line through (ln x, ln(P - plateau)) for x inside `window`.
pub fn fit_power_law_points(points: &[(f64, f64)], window: FitWindow, plateau: f64) -> Result<PowerLawFit> {
    let mut logs = Vec::new();
    for &(x, p) in points.iter().filter(|(x, _)| window.contains(*x)) {
        let v = p - plateau;
        if !(v > 0.0) || x <= 0.0 {
            return Err(Error::Data(format!(
                "nonpositive value {v} at x = {x} after removing plateau {plateau}"
            )));
        }
        logs.push((x.ln(), v.ln()));
    }
    if logs.len() < MIN_FIT_POINTS {
        return Err(Error::Insufficient(format!(
            "{} points in window {window}, need {MIN_FIT_POINTS}",
            logs.len()
        )));
    }
    let line = fit_line(&logs).ok_or_else(|| Error::Data("degenerate fit".into()))?;
    Ok(PowerLawFit {
        exponent: line.slope,
        amplitude: line.intercept.exp(),
        fit_window: window,
        residual: line.max_residual,
        n_points: logs.len(),
    })
}

pub fn fit_power_law(series: &SurvivalSeries, window: FitWindow, plateau: f64) -> Result<PowerLawFit> {
    fit_power_law_points(&series.scaled_points(), window, plateau)
}

/// x where two fitted power laws cross; `None` for parallel fits.
pub fn crossover(early: &PowerLawFit, late: &PowerLawFit) -> Option<f64> {
    let de = early.exponent - late.exponent;
    if de.abs() < 1e-12 {
        return None;
    }
    let x = (late.amplitude / early.amplitude).powf(1.0 / de);
    x.is_finite().then_some(x)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExponentialFit {
    pub rate: f64,
    pub amplitude: f64,
    pub residual: f64,
    pub n_points: usize,
}

/// Rate from ln P versus t on [t_min, end].
pub fn fit_late_exponential_points(points: &[(f64, f64)], t_min: f64) -> Result<ExponentialFit> {
    let logs: Vec<(f64, f64)> = points
        .iter()
        .filter(|(t, p)| *t >= t_min && *p > 0.0)
        .map(|&(t, p)| (t, p.ln()))
        .collect();
    if logs.len() < MIN_FIT_POINTS {
        return Err(Error::Insufficient(format!(
            "{} positive points after t = {t_min}, need {MIN_FIT_POINTS}",
            logs.len()
        )));
    }
    let line = fit_line(&logs).ok_or_else(|| Error::Data("degenerate fit".into()))?;
    Ok(ExponentialFit {
        rate: -line.slope,
        amplitude: line.intercept.exp(),
        residual: line.max_residual,
        n_points: logs.len(),
    })
}

pub fn fit_late_exponential(series: &SurvivalSeries, t_min: f64) -> Result<ExponentialFit> {
    let points: Vec<(f64, f64)> = series.records.iter().map(|r| (r.t, r.survival)).collect();
    fit_late_exponential_points(&points, t_min)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlateauEstimate {
    pub value: f64,
    /// max - min of P over the tail.
    pub spread: f64,
    pub n_points: usize,
    pub t_start: f64,
    pub t_end: f64,
}

/// Mean of P over the trailing `tail_fraction` of the recorded time span,
/// measured in decades of t. The tail must cover at least one decade.
pub fn estimate_plateau(series: &SurvivalSeries, tail_fraction: f64) -> Result<PlateauEstimate> {
    if !(tail_fraction > 0.0 && tail_fraction <= 1.0) {
        return Err(Error::InvalidSchedule(format!(
            "tail fraction must lie in (0, 1], got {tail_fraction}"
        )));
    }
    let (first, last) = match (series.records.first(), series.records.last()) {
        (Some(f), Some(l)) => (f.t, l.t),
        _ => return Err(Error::Insufficient("empty survival series".into())),
    };
    let decades = (last / first).log10();
    let t_start = last / 10f64.powf(tail_fraction * decades);
    if !(last / t_start >= 10.0 * (1.0 - 1e-12)) {
        return Err(Error::Insufficient(format!(
            "tail [{t_start}, {last}] spans less than a decade"
        )));
    }
    let tail: Vec<f64> = series
        .records
        .iter()
        .filter(|r| r.t >= t_start)
        .map(|r| r.survival)
        .collect();
    if tail.is_empty() {
        return Err(Error::Insufficient("no records in the tail".into()));
    }
    let sum: CompensatedSum = tail.iter().copied().collect();
    let lo = tail.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = tail.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(PlateauEstimate {
        value: sum.value() / tail.len() as f64,
        spread: hi - lo,
        n_points: tail.len(),
        t_start,
        t_end: last,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaledCurve {
    pub label: String,
    pub n_sites: usize,
    pub tau: f64,
    /// (x, P - plateau).
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Collapse {
    pub boundary: Boundary,
    pub plateau: f64,
    pub curves: Vec<ScaledCurve>,
    /// Max over curve pairs and common x in the window of |ln(P_a/P_b)|.
    pub max_log_deviation: f64,
    pub compared_points: usize,
}

/// Rescale each series to x = tτ/N, subtract `plateau`, and measure how far
/// apart the curves lie inside `window`. Curve b is interpolated linearly in
/// (ln x, ln P) at the recorded x of curve a.
pub fn scaling_collapse(series: &[SurvivalSeries], window: FitWindow, plateau: f64) -> Result<Collapse> {
    let first = series
        .first()
        .ok_or_else(|| Error::Insufficient("no series to collapse".into()))?;
    let boundary = first.spec.boundary();
    if series.iter().any(|s| s.spec.boundary() != boundary) {
        return Err(Error::Data("series mix open and ring boundaries".into()));
    }
    let curves: Vec<ScaledCurve> = series
        .iter()
        .map(|s| ScaledCurve {
            label: s.initial.clone(),
            n_sites: s.spec.n_sites(),
            tau: s.tau,
            points: s.scaled_points().into_iter().map(|(x, p)| (x, p - plateau)).collect(),
        })
        .collect();

    let mut worst = 0.0f64;
    let mut compared = 0usize;
    for (i, a) in curves.iter().enumerate() {
        for b in curves.iter().skip(i + 1) {
            for (pa, pb) in [(a, b), (b, a)] {
                for &(x, va) in pa.points.iter().filter(|(x, _)| window.contains(*x)) {
                    let Some(vb) = log_interpolate(&pb.points, x) else {
                        continue;
                    };
                    if !(va > 0.0 && vb > 0.0) {
                        return Err(Error::Data(format!("nonpositive value at x = {x}")));
                    }
                    worst = worst.max((va / vb).ln().abs());
                    compared += 1;
                }
            }
        }
    }
    if curves.len() > 1 && compared == 0 {
        return Err(Error::Insufficient(format!("no overlapping points in window {window}")));
    }
    Ok(Collapse {
        boundary,
        plateau,
        curves,
        max_log_deviation: worst,
        compared_points: compared,
    })
}

/// Value at `x` by linear interpolation in (ln x, ln v); `None` outside the
/// sampled range.
fn log_interpolate(points: &[(f64, f64)], x: f64) -> Option<f64> {
    let k = points.partition_point(|(px, _)| *px < x);
    if k < points.len() && points[k].0 == x {
        return Some(points[k].1);
    }
    if k == 0 || k == points.len() {
        return None;
    }
    let (x0, v0) = points[k - 1];
    let (x1, v1) = points[k];
    if v0 <= 0.0 || v1 <= 0.0 {
        return Some(v0 + (v1 - v0) * (x - x0) / (x1 - x0));
    }
    let w = (x.ln() - x0.ln()) / (x1.ln() - x0.ln());
    Some((v0.ln() + w * (v1.ln() - v0.ln())).exp())
}
