//! Brute-force reference for the stroboscopic engine.
//!
//! Works in the position basis with a dense U^τ built from the dense
//! Hamiltonian by [`crate::expm::propagator`]; it never touches the analytic
//! eigenbasis except to prepare eigenmode initial states. Survival is the
//! squared norm of the projected vector, recomputed after every measurement.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::engine::{InitialState, MeasurementSchedule, SeriesBuilder, SurvivalSeries, TerminalReason};
use crate::error::{Error, Result};
use crate::expm::propagator;
use crate::lattice::{dense_hamiltonian, LatticeSpec};
use crate::numeric::CompensatedSum;

pub const ORACLE_MAX_SITES: usize = 64;

pub fn dense_oracle_evolve(
    spec: &LatticeSpec,
    initial: &InitialState,
    schedule: &MeasurementSchedule,
) -> Result<SurvivalSeries> {
    let n = spec.n_sites();
    if n > ORACLE_MAX_SITES {
        return Err(Error::OracleTooLarge(n));
    }
    schedule.validate()?;
    let psi0 = initial.site_amplitudes(spec)?;

    let u: DMatrix<Complex64> = propagator(&dense_hamiltonian(spec), schedule.tau);
    let d = spec.detector().index0();
    let mut psi = DVector::from_vec(psi0);
    let mut detected = CompensatedSum::new();
    let mut builder = SeriesBuilder::new(*spec, schedule, initial.to_string());
    let mut step = 0u64;
    let mut survival = 1.0;
    let mut reason = TerminalReason::MaxSteps;
    for target in schedule.recording.cursor(0, schedule.max_steps) {
        while step < target {
            psi = &u * &psi;
            detected.add(psi[d].norm_sqr());
            psi[d] = Complex64::ZERO;
            survival = psi.norm_squared();
            step += 1;
            if survival < schedule.stop_survival {
                break;
            }
        }
        builder.push(step, survival, detected.value());
        if survival < schedule.stop_survival {
            reason = TerminalReason::Threshold;
            break;
        }
    }
    Ok(builder.finish(reason, false))
}
