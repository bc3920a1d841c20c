//! Small-τ predictions in the reduced basis (the lattice minus the detector).
//!
//! Each reduced mode φ_s decays at a rate set by τ times its weight on the
//! site(s) bonded to the detector. Position states are superpositions of
//! modes, so their survival is a sum of exponentials; for large N the sum
//! becomes an integral over quasi-momentum, and for x = tτ/N ≫ 1 only the
//! band edges contribute, giving an x^{-1/2} law that crosses over to
//! x^{-3/2} once x exceeds ℓ².

use std::f64::consts::PI;
use std::fmt;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{Boundary, LatticeSpec, Mode, Site};
use crate::numeric::CompensatedSum;
use crate::quad;
use crate::spectral::{reduced_open_basis, ModeTag, SpectralBasis};

/// Absolute tolerance of the continuum integral.
pub const INTEGRAL_TOL: f64 = 1e-10;
/// x below which the band-edge asymptotic form is flagged.
pub const ASYMPTOTIC_MIN_X: f64 = 100.0;
/// tτ/N³ above which the continuum integral is flagged.
pub const CONTINUUM_MAX_T_TAU_OVER_N3: f64 = 0.01;
/// τ·bandwidth above which the small-τ expansion is flagged.
pub const SMALL_TAU_MAX: f64 = 1.0;

/// Soft regime annotations attached to perturbative estimates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Validity {
    /// τ is not small against the inverse bandwidth.
    LargeTau,
    /// Late enough that the discreteness of the spectrum matters.
    DiscreteSpectrum,
    /// x too small for the band-edge expansion.
    BelowAsymptotic,
}

impl fmt::Display for Validity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Validity::LargeTau => "large-tau",
            Validity::DiscreteSpectrum => "discrete-spectrum",
            Validity::BelowAsymptotic => "below-asymptotic",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub flags: Vec<Validity>,
}

impl Estimate {
    fn new(value: f64, flags: Vec<Validity>) -> Self {
        Self { value, flags }
    }

    /// `ok` or the flags joined by `;`.
    pub fn flag_string(&self) -> String {
        if self.flags.is_empty() {
            "ok".into()
        } else {
            self.flags.iter().map(|f| f.to_string()).collect::<Vec<_>>().join(";")
        }
    }
}

#[derive(Debug, Clone)]
pub struct PerturbativePrediction {
    spec: LatticeSpec,
    tau: f64,
    basis: SpectralBasis,
    /// Indexed by reduced mode s - 1.
    alphas: Vec<f64>,
    mode_energies: Vec<f64>,
    mu: Vec<Complex64>,
}

/// Per-mode decay rates for a detector on the last site.
pub fn decay_rates(spec: &LatticeSpec, tau: f64) -> Result<PerturbativePrediction> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::InvalidSchedule(format!(
            "tau must be positive and finite, got {tau}"
        )));
    }
    let n = spec.n_sites();
    if spec.detector() != Site(n) {
        return Err(Error::Unsupported(format!(
            "detector must sit on site {n}, got {}",
            spec.detector().0
        )));
    }
    if spec.boundary() == Boundary::Ring && n % 2 != 0 {
        return Err(Error::Unsupported(format!("odd ring with {n} sites")));
    }
    if n < 3 {
        return Err(Error::Unsupported(format!("needs at least 3 sites, got {n}")));
    }
    let basis = reduced_open_basis(n, spec.boundary())?;
    let alphas: Vec<f64> = (1..n)
        .map(|s| {
            let edge = basis.amplitude(Site(1), Mode(s));
            match basis.tag(Mode(s)) {
                None => tau * edge * edge,
                Some(ModeTag::Dark) => 0.0,
                Some(ModeTag::Bright) => 4.0 * tau * edge * edge,
            }
        })
        .collect();
    let mode_energies = basis.eigenvalues().to_vec();
    let mu = mode_energies
        .iter()
        .zip(&alphas)
        .map(|(&e, &a)| Complex64::from_polar((-0.5 * a * tau).exp(), -tau * e))
        .collect();
    Ok(PerturbativePrediction {
        spec: *spec,
        tau,
        basis,
        alphas,
        mode_energies,
        mu,
    })
}

/// Survival left on the ring after the bright modes have decayed:
/// 1/2, except 0 for ℓ = N/2 and ℓ = N.
pub fn ring_plateau(n_sites: usize, site: Site) -> Result<f64> {
    if n_sites % 2 != 0 {
        return Err(Error::Unsupported(format!("odd ring with {n_sites} sites")));
    }
    if site.0 == 0 || site.0 > n_sites {
        return Err(Error::OutOfRange {
            what: "site",
            index: site.0,
            max: n_sites,
        });
    }
    Ok(if site.0 == n_sites / 2 || site.0 == n_sites { 0.0 } else { 0.5 })
}

/// Large-x form of the position survival; on the ring, the excess over the
/// plateau. Both band edges q = 0 and q = π contribute equally.
pub fn survival_asymptotic(boundary: Boundary, site: Site, x: f64) -> Result<Estimate> {
    if !(x > 0.0) {
        return Err(Error::InvalidSchedule(format!("x must be positive, got {x}")));
    }
    let l = site.0 as f64;
    let value = match boundary {
        Boundary::Open => (1.0 - (-l * l / (2.0 * x)).exp()) / (2.0 * PI * x).sqrt(),
        Boundary::Ring => (1.0 - (-l * l / (8.0 * x)).exp()) / (4.0 * (2.0 * PI * x).sqrt()),
    };
    let flags = if x < ASYMPTOTIC_MIN_X {
        vec![Validity::BelowAsymptotic]
    } else {
        Vec::new()
    };
    Ok(Estimate::new(value, flags))
}

impl PerturbativePrediction {
    pub fn spec(&self) -> &LatticeSpec {
        &self.spec
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    /// Number of reduced modes, N - 1.
    pub fn n_modes(&self) -> usize {
        self.alphas.len()
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn alpha(&self, mode: Mode) -> Result<f64> {
        self.basis.check_mode(mode)?;
        Ok(self.alphas[mode.index0()])
    }

    pub fn mode_energies(&self) -> &[f64] {
        &self.mode_energies
    }

    pub fn mu(&self) -> &[Complex64] {
        &self.mu
    }

    pub fn tag(&self, mode: Mode) -> Option<ModeTag> {
        self.basis.tag(mode)
    }

    pub fn reduced_basis(&self) -> &SpectralBasis {
        &self.basis
    }

    pub fn scaling_variable(&self, t: f64) -> f64 {
        t * self.tau / self.spec.n_sites() as f64
    }

    fn tau_flags(&self) -> Vec<Validity> {
        if self.tau * 4.0 > SMALL_TAU_MAX {
            vec![Validity::LargeTau]
        } else {
            Vec::new()
        }
    }

    fn continuum_flags(&self, t: f64) -> Vec<Validity> {
        let mut flags = self.tau_flags();
        if t * self.tau / (self.spec.n_sites() as f64).powi(3) > CONTINUUM_MAX_T_TAU_OVER_N3 {
            flags.push(Validity::DiscreteSpectrum);
        }
        flags
    }

    fn check_time(t: f64) -> Result<()> {
        if t >= 0.0 && t.is_finite() {
            Ok(())
        } else {
            Err(Error::InvalidSchedule(format!("time must be finite and >= 0, got {t}")))
        }
    }

    fn check_position(&self, site: Site) -> Result<()> {
        let n = self.spec.n_sites();
        if site.0 == 0 || site.0 >= n {
            return Err(Error::OutOfRange {
                what: "initial site (detector excluded)",
                index: site.0,
                max: n - 1,
            });
        }
        Ok(())
    }

    /// e^{-α_s t}; dark ring modes stay at 1.
    pub fn survival_eigenstate(&self, mode: Mode, t: f64) -> Result<Estimate> {
        Self::check_time(t)?;
        let alpha = self.alpha(mode)?;
        Ok(Estimate::new((-alpha * t).exp(), self.tau_flags()))
    }

    /// Σ_s φ_s(ℓ)² e^{-α_s t} over all reduced modes; on the ring the dark
    /// modes supply the plateau.
    pub fn survival_position_sum(&self, site: Site, t: f64) -> Result<Estimate> {
        Self::check_time(t)?;
        self.check_position(site)?;
        let row = self.basis.site_row(site);
        let total: CompensatedSum = row
            .iter()
            .zip(&self.alphas)
            .map(|(&phi, &alpha)| phi * phi * (-alpha * t).exp())
            .collect();
        Ok(Estimate::new(total.value(), self.tau_flags()))
    }

    /// Continuum form of [`Self::survival_position_sum`], evaluated by
    /// adaptive quadrature; ring values include the plateau.
    pub fn survival_position_integral(&self, site: Site, t: f64) -> Result<Estimate> {
        Self::check_time(t)?;
        self.check_position(site)?;
        let x = self.scaling_variable(t);
        let l = site.0 as f64;
        let panels = 64 + 8 * site.0;
        let value = match self.spec.boundary() {
            Boundary::Open => {
                let f = |q: f64| (q * l).sin().powi(2) * (-2.0 * x * q.sin().powi(2)).exp();
                2.0 / PI * quad::integrate(f, 0.0, PI, panels, 0.5 * PI * INTEGRAL_TOL)
            }
            Boundary::Ring => {
                let f = |q: f64| (q * l).sin().powi(2) * (-8.0 * x * q.sin().powi(2)).exp();
                let excess = quad::integrate(f, 0.0, PI, panels, PI * INTEGRAL_TOL) / PI;
                excess + ring_plateau(self.spec.n_sites(), site)?
            }
        };
        Ok(Estimate::new(value, self.continuum_flags(t)))
    }

    /// [`survival_asymptotic`] at this prediction's x, plus the plateau on
    /// the ring.
    pub fn survival_position_asymptotic(&self, site: Site, t: f64) -> Result<Estimate> {
        Self::check_time(t)?;
        self.check_position(site)?;
        let x = self.scaling_variable(t);
        if x == 0.0 {
            return Ok(Estimate::new(1.0, vec![Validity::BelowAsymptotic]));
        }
        let mut est = survival_asymptotic(self.spec.boundary(), site, x)?;
        if self.spec.boundary() == Boundary::Ring {
            est.value += ring_plateau(self.spec.n_sites(), site)?;
        }
        let mut flags = self.continuum_flags(t);
        flags.extend(est.flags);
        flags.sort();
        Ok(Estimate::new(est.value, flags))
    }

    /// First-order correction to reduced mode `s` from the detector
    /// coupling, as coefficients over the reduced modes (zero at s).
    pub fn perturbed_eigenvector_correction(&self, mode: Mode) -> Result<Vec<f64>> {
        self.basis.check_mode(mode)?;
        if self.spec.boundary() == Boundary::Ring {
            return Err(Error::NotApplicable(
                "ring modes split into dark and bright sectors instead".into(),
            ));
        }
        let edge = Site(self.n_modes());
        let s = mode.index0();
        let prefactor = -0.5 * self.tau * self.tau * self.basis.amplitude(edge, mode);
        let energies = &self.mode_energies;
        if let Some(k) = (0..energies.len())
            .find(|&k| k != s && (energies[k] - energies[s]).abs() < crate::spectral::DEGENERACY_TOL)
        {
            return Err(Error::NotApplicable(format!(
                "modes {} and {} are degenerate",
                s + 1,
                k + 1
            )));
        }
        Ok((0..energies.len())
            .map(|k| {
                if k == s {
                    0.0
                } else {
                    prefactor * self.basis.amplitude(edge, Mode(k + 1)) / (energies[s] - energies[k])
                }
            })
            .collect())
    }
}
