//! Closed-form powers of the measured propagator B̃ = B U^τ.
//!
//! In the Hamiltonian eigenbasis U^τ = Λ = diag(λ_s), λ_s = e^{-iε_s τ}, and
//! the null-measurement projector is B = I - u uᵀ with u_s = V[d, s]. So
//! B̃ = (I - u uᵀ) Λ is a rank-one modification of a unitary diagonal
//! matrix. Its nonzero eigenvalues z solve the secular equation
//!
//! ```text
//!     Σ_s u_s² λ_s / (λ_s - z) = 1,
//! ```
//!
//! with right eigenvectors x_s = u_s / (λ_s - z) and left eigenvectors
//! y_s = λ_s u_s / (λ_s - z). Writing λ_s = e^{iφ_s} and z = e^{iζ}, the
//! equation becomes Σ_s u_s² cot((φ_s - ζ)/2) = i. On the real axis the left
//! side increases monotonically between consecutive poles, and for small τ
//! each gap but one holds a root with small positive Im ζ, half the
//! per-measurement decay exponent. The real zeros seed Newton on the
//! deflated form Σ u_s²/(λ_s - z) = 0, which drops the z = 0 solution;
//! a dense eigenvalue solve covers the cases where that seeding misses.
//!
//! Degenerate Hamiltonian levels are deflated first: within a level only
//! the direction along u couples to the detector; the orthogonal
//! complement consists of exact dark eigenvectors of B̃.
//!
//! Once the roots are known, P_n costs O(N²) for any n, independent of n.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::engine::{MeasurementSchedule, SeriesBuilder, SurvivalSeries, TerminalReason, WaveState};
use crate::error::{Error, Result};
use crate::lattice::LatticeSpec;
use crate::spectral::SpectralBasis;

/// Levels whose detector overlap is below this are treated as dark.
const DARK_TOL: f64 = 1e-12;
/// Cap on Im ζ during the iteration.
const MAX_DECAY_EXPONENT: f64 = 40.0;
/// Roots with Im ζ beyond this (|z| < 1e-13) cannot be told apart from the
/// zero eigenvalue; their modes are gone after one step and are dropped.
const ESCAPE_DECAY_EXPONENT: f64 = 30.0;
/// Allowed gap between the reconstructed and the stepped anchor survival.
const ANCHOR_TOL: f64 = 1e-11;

#[derive(Debug, Clone)]
struct BrightSector {
    /// Zero-based full-basis modes spanning the degenerate level.
    modes: Vec<usize>,
    /// Unit vector along the detector overlap within the level.
    direction: Vec<f64>,
    /// Norm of the detector overlap.
    weight: f64,
    phase_angle: f64,
}

#[derive(Debug, Clone)]
pub struct SpectralPropagator {
    tau: f64,
    n_modes: usize,
    sectors: Vec<BrightSector>,
    /// ζ_k with z_k = e^{iζ_k}.
    roots: Vec<Complex64>,
    /// Row-major `sectors × roots`: 1 / (λ_j - z_k).
    cauchy: Vec<Complex64>,
    /// y_kᵀ x_k.
    pair_norms: Vec<Complex64>,
}

/// cot and 1/(2 sin²) of (δ - iy)/2, from the real offset δ = φ - Re ζ.
fn kernel(delta: f64, y: f64) -> (Complex64, Complex64) {
    let w = Complex64::new(0.5 * delta, -0.5 * y);
    let s = w.sin();
    let c = w.cos();
    (c / s, Complex64::from(0.5) / (s * s))
}

impl SpectralPropagator {
    pub fn new(spec: &LatticeSpec, basis: &SpectralBasis, tau: f64) -> Result<Self> {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::InvalidSchedule(format!(
                "tau must be positive and finite, got {tau}"
            )));
        }
        let row = basis.site_row(spec.detector());
        let mut sectors = Vec::new();
        for class in basis.degeneracy_classes() {
            let modes: Vec<usize> = class.iter().map(|m| m.index0()).collect();
            let weight = modes.iter().map(|&s| row[s] * row[s]).sum::<f64>().sqrt();
            if weight <= DARK_TOL {
                continue;
            }
            let energy = modes.iter().map(|&s| basis.eigenvalues()[s]).sum::<f64>() / modes.len() as f64;
            sectors.push(BrightSector {
                direction: modes.iter().map(|&s| row[s] / weight).collect(),
                modes,
                weight,
                phase_angle: -energy * tau,
            });
        }
        sectors.sort_by(|a, b| a.phase_angle.total_cmp(&b.phase_angle));
        if let (Some(first), Some(last)) = (sectors.first(), sectors.last()) {
            if last.phase_angle - first.phase_angle >= 2.0 * PI - 1e-6 {
                return Err(Error::Propagator(format!(
                    "tau = {tau} wraps the spectrum around the unit circle"
                )));
            }
        }

        let angles: Vec<f64> = sectors.iter().map(|s| s.phase_angle).collect();
        let weights: Vec<f64> = sectors.iter().map(|s| s.weight * s.weight).collect();
        // n bright levels give n - 1 nonzero eigenvalues; for small τ they sit
        // one per gap between adjacent phases, with one gap left empty
        let mut roots = Vec::with_capacity(angles.len());
        if angles.len() > 1 {
            for gap in 0..angles.len() {
                let lo = angles[gap];
                let hi = angles.get(gap + 1).copied().unwrap_or(angles[0] + 2.0 * PI);
                if let Some(root) = solve_gap(&angles, &weights, lo, hi) {
                    roots.push(root);
                }
            }
        }
        // large τ can push roots deep into the disk, two to a gap
        if roots.len() + 1 != angles.len().max(1) {
            roots = dense_roots(&angles, &weights)?;
        }

        let m = roots.len();
        let mut cauchy = Vec::with_capacity(sectors.len() * m);
        for &phi in &angles {
            for zeta in &roots {
                // λ - z = 2i e^{i(φ+ζ)/2} sin((φ-ζ)/2), accurate when λ ≈ z
                let half_sum = Complex64::new(0.5 * (phi + zeta.re), 0.5 * zeta.im);
                let half_diff = Complex64::new(0.5 * (phi - zeta.re), -0.5 * zeta.im);
                let diff = Complex64::new(0.0, 2.0) * (Complex64::i() * half_sum).exp() * half_diff.sin();
                cauchy.push(diff.inv());
            }
        }
        let pair_norms = (0..m)
            .map(|k| {
                sectors
                    .iter()
                    .zip(&angles)
                    .enumerate()
                    .map(|(j, (sector, &phi))| {
                        let c = cauchy[j * m + k];
                        Complex64::from_polar(sector.weight * sector.weight, phi) * c * c
                    })
                    .sum()
            })
            .collect();

        Ok(Self {
            tau,
            n_modes: basis.dimension(),
            sectors,
            roots,
            cauchy,
            pair_norms,
        })
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    /// Nonzero eigenvalues of B̃ outside the dark sector.
    pub fn bright_eigenvalues(&self) -> Vec<Complex64> {
        self.roots.iter().map(|z| (Complex64::i() * z).exp()).collect()
    }

    /// Decay rates -2 ln|z_k| / τ, ascending.
    pub fn decay_rates(&self) -> Vec<f64> {
        let mut rates: Vec<f64> = self.roots.iter().map(|z| 2.0 * z.im / self.tau).collect();
        rates.sort_by(f64::total_cmp);
        rates
    }

    /// Survival series for `state` under `schedule`, matching
    /// [`crate::engine::evolve`] on the same grid.
    pub fn evolve(&self, state: &WaveState, schedule: &MeasurementSchedule) -> Result<SurvivalSeries> {
        schedule.validate()?;
        if (schedule.tau - self.tau).abs() > 0.0 {
            return Err(Error::InvalidSchedule(format!(
                "propagator built for tau = {}, schedule has {}",
                self.tau, schedule.tau
            )));
        }
        if state.coeffs().len() != self.n_modes {
            return Err(Error::InvalidState("state and propagator sizes differ".into()));
        }

        let start = state.step_count();
        let end = start + schedule.max_steps;
        let mut builder = SeriesBuilder::new(*state.spec(), schedule, state.label().to_string());

        // one explicit measurement removes the component along the zero eigenvalue
        let mut first = state.clone();
        first.step(self.tau)?;
        let anchor = first.step_count();
        let prepared = self.prepare(&first);
        let anchor_survival = prepared.survival(self, 0);
        let mismatch = (anchor_survival - first.survival()).abs();
        if mismatch > ANCHOR_TOL {
            return Err(Error::Propagator(format!(
                "eigen-expansion misses the stepped state by {mismatch:e}"
            )));
        }
        let detected_at = |survival: f64| first.detected() + (anchor_survival - survival);

        if first.survival() < schedule.stop_survival {
            builder.push(anchor, first.survival(), first.detected());
            return Ok(builder.finish(TerminalReason::Threshold, first.clamped()));
        }
        let mut prev_n = start;
        let mut reason = TerminalReason::MaxSteps;
        for target in schedule.recording.cursor(start, end) {
            let (n, survival) = if target == anchor {
                (anchor, first.survival())
            } else {
                (target, prepared.survival(self, target - anchor))
            };
            if survival < schedule.stop_survival {
                let (n_stop, p_stop) = if n == anchor {
                    (n, survival)
                } else {
                    self.first_below(&prepared, anchor, prev_n.max(anchor), n, schedule.stop_survival)
                };
                builder.push(n_stop, p_stop, detected_at(p_stop));
                reason = TerminalReason::Threshold;
                break;
            }
            builder.push(n, survival, detected_at(survival));
            prev_n = n;
        }
        Ok(builder.finish(reason, first.clamped()))
    }

    /// First n in (lo, hi] with survival below `stop`; survival at `hi` is
    /// known to be below it.
    fn first_below(&self, prepared: &Prepared, anchor: u64, mut lo: u64, mut hi: u64, stop: f64) -> (u64, f64) {
        let mut p_hi = prepared.survival(self, hi - anchor);
        while hi - lo > 1 {
            let mid = lo + (hi - lo) / 2;
            let p = prepared.survival(self, mid - anchor);
            if p < stop {
                hi = mid;
                p_hi = p;
            } else {
                lo = mid;
            }
        }
        (hi, p_hi)
    }

    fn prepare(&self, state: &WaveState) -> Prepared {
        let coeffs = state.coeffs();
        let mut bright_norm = 0.0;
        let bright: Vec<Complex64> = self
            .sectors
            .iter()
            .map(|sector| {
                let c: Complex64 = sector
                    .modes
                    .iter()
                    .zip(&sector.direction)
                    .map(|(&s, &b)| coeffs[s] * b)
                    .sum();
                for (&s, &b) in sector.modes.iter().zip(&sector.direction) {
                    bright_norm += (coeffs[s] - c * b).norm_sqr();
                }
                c
            })
            .collect();
        let in_sectors: usize = self.sectors.iter().map(|s| s.modes.len()).sum();
        let mut covered = vec![false; self.n_modes];
        for sector in &self.sectors {
            for &s in &sector.modes {
                covered[s] = true;
            }
        }
        debug_assert_eq!(covered.iter().filter(|c| **c).count(), in_sectors);
        let dark: f64 = coeffs
            .iter()
            .zip(&covered)
            .filter(|(_, c)| !**c)
            .map(|(z, _)| z.norm_sqr())
            .sum::<f64>()
            + bright_norm;

        let m = self.roots.len();
        let amplitudes = (0..m)
            .map(|k| {
                let projection: Complex64 = self
                    .sectors
                    .iter()
                    .enumerate()
                    .map(|(j, sector)| {
                        Complex64::from_polar(sector.weight, sector.phase_angle)
                            * self.cauchy[j * m + k]
                            * bright[j]
                    })
                    .sum();
                projection / self.pair_norms[k]
            })
            .collect();
        Prepared { amplitudes, dark }
    }
}

struct Prepared {
    /// Expansion coefficients along the right eigenvectors x_k.
    amplitudes: Vec<Complex64>,
    /// Constant survival carried by dark states.
    dark: f64,
}

impl Prepared {
    /// Survival `steps` measurements after the anchor state.
    fn survival(&self, prop: &SpectralPropagator, steps: u64) -> f64 {
        let m = prop.roots.len();
        let p = steps as f64;
        let weighted: Vec<Complex64> = self
            .amplitudes
            .iter()
            .zip(&prop.roots)
            .map(|(a, zeta)| {
                let decay = (-p * zeta.im).exp();
                if decay == 0.0 {
                    Complex64::ZERO
                } else {
                    a * Complex64::from_polar(decay, p * zeta.re)
                }
            })
            .collect();
        let mut bright = 0.0;
        for (j, sector) in prop.sectors.iter().enumerate() {
            let row = &prop.cauchy[j * m..(j + 1) * m];
            let v: Complex64 = row.iter().zip(&weighted).map(|(c, w)| c * w).sum();
            bright += sector.weight * sector.weight * v.norm_sqr();
        }
        self.dark + bright
    }
}

/// Deflated secular function 2Σ w_j/(λ_j - z) in the ζ variable, with its
/// ζ-derivative.
fn deflated(angles: &[f64], weights: &[f64], zeta: Complex64) -> (Complex64, Complex64) {
    let mut h = Complex64::ZERO;
    let mut dh = Complex64::ZERO;
    for (&phi, &w) in angles.iter().zip(weights) {
        let (cot, dcot) = kernel(phi - zeta.re, zeta.im);
        let a = Complex64::from_polar(w, -phi);
        h += a * (Complex64::ONE - Complex64::i() * cot);
        dh -= a * Complex64::i() * dcot;
    }
    (h, dh)
}

/// Newton on the deflated secular function keeping Im ζ > 0 and, when
/// bounds are given, Re ζ inside them. `None` if it does not settle.
fn polish(angles: &[f64], weights: &[f64], mut zeta: Complex64, bounds: Option<(f64, f64)>) -> Option<Complex64> {
    let inside = |z: Complex64| z.im > 0.0 && bounds.is_none_or(|(l, r)| z.re > l && z.re < r);
    for _ in 0..100 {
        let (h, dh) = deflated(angles, weights, zeta);
        let mut delta = h / dh;
        if !delta.is_finite() {
            return None;
        }
        let mut next = zeta - delta;
        let mut halvings = 0;
        while !inside(next) {
            if halvings == 60 {
                return None;
            }
            delta *= 0.5;
            next = zeta - delta;
            halvings += 1;
        }
        next.im = next.im.min(MAX_DECAY_EXPONENT);
        let settled = halvings == 0
            && delta.re.abs() <= 8.0 * f64::EPSILON * next.re.abs().max(1.0)
            && delta.im.abs() <= 1e-12 * next.im;
        zeta = next;
        if settled {
            return Some(zeta);
        }
    }
    None
}

/// Root with Re ζ between the adjacent poles `left < right`, started from
/// the real zero of Σ w_j cot((φ_j - x)/2) in that gap.
fn solve_gap(angles: &[f64], weights: &[f64], left: f64, right: f64) -> Option<Complex64> {
    let (mut lo, mut hi) = (left, right);
    let eval_real = |x: f64| {
        let mut g = 0.0;
        let mut dg = 0.0;
        for (&phi, &w) in angles.iter().zip(weights) {
            let h = 0.5 * (phi - x);
            let (s, c) = h.sin_cos();
            g += w * c / s;
            dg += 0.5 * w / (s * s);
        }
        (g, dg)
    };
    let mut x = 0.5 * (lo + hi);
    for _ in 0..300 {
        let (g, dg) = eval_real(x);
        if g > 0.0 {
            hi = x;
        } else {
            lo = x;
        }
        let mut next = x - g / dg;
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        let done = next == x || (next - x).abs() <= 2.0 * f64::EPSILON * x.abs();
        x = next;
        if done || hi - lo <= 4.0 * f64::EPSILON * x.abs().max(1e-300) {
            break;
        }
    }
    let (_, dg) = eval_real(x);
    let start = Complex64::new(x, (1.0 / dg).min(MAX_DECAY_EXPONENT));
    polish(angles, weights, start, Some((left, right))).filter(|z| z.im < ESCAPE_DECAY_EXPONENT)
}

/// All nonzero eigenvalues from a dense Schur decomposition of the
/// deflated B̃, each polished on the secular function.
fn dense_roots(angles: &[f64], weights: &[f64]) -> Result<Vec<Complex64>> {
    let n = angles.len();
    let u: Vec<f64> = weights.iter().map(|w| w.sqrt()).collect();
    let m = DMatrix::from_fn(n, n, |i, j| {
        let b = if i == j { 1.0 } else { 0.0 } - u[i] * u[j];
        Complex64::from_polar(b, angles[j])
    });
    let eigenvalues = m
        .schur()
        .eigenvalues()
        .ok_or_else(|| Error::Propagator("Schur form is not triangular".into()))?;
    let mut roots = Vec::new();
    for z in eigenvalues.iter() {
        if z.norm() < (-ESCAPE_DECAY_EXPONENT).exp() {
            continue;
        }
        let guess = Complex64::new(z.arg(), -z.norm().ln());
        let zeta = polish(angles, weights, guess, None).unwrap_or(guess);
        if zeta.im < ESCAPE_DECAY_EXPONENT {
            roots.push(zeta);
        }
    }
    roots.sort_by(|a, b| a.re.total_cmp(&b.re));
    Ok(roots)
}
