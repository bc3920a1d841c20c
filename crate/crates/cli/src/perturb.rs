//! `perturb`: tabulate the small-τ predictions on the run's time grid.

use serde_json::json;
use toa_lab_core::engine::InitialState;
use toa_lab_core::lattice::Mode;
use toa_lab_core::perturb::{decay_rates, Estimate, Validity};
use toa_lab_core::spectral::ModeTag;

use crate::error::{CliError, CliResult};
use crate::output::{sidecar_path, suffixed, write_json, Cell, Csv};
use crate::run::output_path;
use crate::settings::Settings;
use crate::Outcome;

fn merged_flags(estimates: &[&Estimate]) -> String {
    let mut flags: Vec<Validity> = estimates.iter().flat_map(|e| e.flags.iter().copied()).collect();
    flags.sort();
    flags.dedup();
    if flags.is_empty() {
        "ok".into()
    } else {
        flags.iter().map(|f| f.to_string()).collect::<Vec<_>>().join(";")
    }
}

pub fn cmd_perturb(settings: &Settings) -> CliResult<Outcome> {
    let config = settings.resolve()?;
    let spec = config.spec();
    let model = decay_rates(&spec, config.tau).map_err(|e| CliError::config("sites/detector/boundary", e.to_string()))?;
    let initial = config.initial_state();
    match &initial {
        InitialState::Position(site) => {
            model
                .survival_position_sum(*site, 0.0)
                .map_err(|e| CliError::config("initial", e.to_string()))?;
        }
        InitialState::ReducedMode(mode) => {
            model.alpha(*mode).map_err(|e| CliError::config("initial", e.to_string()))?;
        }
        other => {
            return Err(CliError::config(
                "initial",
                format!("`{other}` has no small-τ prediction (use pos:L or reduced-mode:S)"),
            ))
        }
    }

    let mut csv = Csv::new(&["t", "x", "P_sum", "P_integral", "P_asymptotic", "validity_flags"]);
    let steps = std::iter::once(0).chain(config.recording().cursor(0, config.steps));
    for n in steps {
        let t = n as f64 * config.tau;
        let x = model.scaling_variable(t);
        let row: Vec<Cell> = match &initial {
            InitialState::Position(site) => {
                let sum = model.survival_position_sum(*site, t)?;
                let integral = model.survival_position_integral(*site, t)?;
                let asym = model.survival_position_asymptotic(*site, t)?;
                vec![
                    t.into(),
                    x.into(),
                    sum.value.into(),
                    integral.value.into(),
                    asym.value.into(),
                    merged_flags(&[&sum, &integral, &asym]).into(),
                ]
            }
            InitialState::ReducedMode(mode) => {
                let single = model.survival_eigenstate(*mode, t)?;
                vec![t.into(), x.into(), single.value.into(), Cell::Empty, Cell::Empty, single.flag_string().into()]
            }
            _ => unreachable!(),
        };
        csv.row(row);
    }

    let mut rates = Csv::new(&["s", "e_s", "alpha_s", "tag"]);
    for s in 1..=model.n_modes() {
        let mode = Mode(s);
        let tag = match model.tag(mode) {
            Some(ModeTag::Dark) => "dark",
            _ => "bright",
        };
        rates.row(vec![
            s.into(),
            model.mode_energies()[s - 1].into(),
            model.alphas()[s - 1].into(),
            tag.into(),
        ]);
    }

    let path = output_path(settings, &config, "perturb");
    let rates_path = suffixed(&path, "_rates");
    csv.write(&path)?;
    rates.write(&rates_path)?;
    write_json(
        &sidecar_path(&path),
        &json!({
            "config": config.as_settings().over(settings.clone()),
            "rates_file": rates_path.file_name().map(|f| f.to_string_lossy().into_owned()),
            "modes": model.n_modes(),
        }),
    )?;
    eprintln!("wrote {} and {}", path.display(), rates_path.display());
    Ok(Outcome { passed: true })
}
