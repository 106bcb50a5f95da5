//! The four top-level commands, each turning a config into a [`Bundle`].

use rayon::prelude::*;

use crate::config::{ConfigDocument, SweepVariable};
use crate::error::{Error, Result};
use crate::lhv::{forgeable_scale_search, lhv_feasibility, Alphabet, FeasibilityResult, TargetMatrix};
use crate::lp::LpError;
use crate::protocol::{run_session, Decision};
use crate::report::{
    Agreement, Bundle, CommandReport, GFactorReport, SweepReport, SweepRow, ThresholdEntry, ThresholdReport,
};
use crate::spatial::{
    classify_detectability, g_analytic, g_monte_carlo, g_quadrature, particle_masses, FORGEABILITY_THRESHOLD,
};

/// Allowed gap between closed form and quadrature on boxes.
pub const QUADRATURE_AGREEMENT_TOL: f64 = 1e-6;
/// Floor added to the 3σ Monte Carlo band so exact 0 or 1 still agree.
pub const MC_AGREEMENT_FLOOR: f64 = 1e-9;
/// Offset above the threshold at which the separating certificate is reported.
pub const CERTIFICATE_OFFSET: f64 = 1e-3;

pub const EXIT_OK: i32 = 0;
pub const EXIT_DISAGREEMENT: i32 = 3;
pub const EXIT_INCONCLUSIVE: i32 = 5;

/// g by every applicable estimator, cross-checked.
pub fn cmd_gfactor(doc: &ConfigDocument) -> Result<Bundle> {
    let (packet, region_a, region_b) = doc.spatial()?;
    let order = doc.gfactor.quadrature_order;
    let analytic = g_analytic(&packet, &region_a, &region_b)
        .ok()
        .map(|value| crate::spatial::GEstimate {
            value,
            std_error: 0.0,
            method: crate::spatial::GMethod::Analytic,
            samples_or_order: 0,
            chunk_size: None,
        });
    let quadrature = g_quadrature(&packet, &region_a, &region_b, order)?;
    let monte_carlo = g_monte_carlo(&packet, &region_a, &region_b, doc.gfactor.mc_samples, doc.seed)?;
    let (g_alice, g_bob) = particle_masses(&packet, &region_a, &region_b, order);

    let mut warnings = Vec::new();
    let reference = analytic.as_ref().map_or(quadrature.value, |a| a.value);
    let quadrature_deviation = analytic.as_ref().map(|a| (a.value - quadrature.value).abs());
    let monte_carlo_deviation = (reference - monte_carlo.value).abs();
    let monte_carlo_tolerance = 3.0 * monte_carlo.std_error
        + MC_AGREEMENT_FLOOR
        + if analytic.is_some() { 0.0 } else { quadrature.delta };
    let mut agree = monte_carlo_deviation <= monte_carlo_tolerance;
    if let Some(d) = quadrature_deviation {
        agree &= d <= QUADRATURE_AGREEMENT_TOL;
    }
    if !quadrature.converged {
        warnings.push(format!(
            "quadrature differs from the half-order rule by {:.3e}",
            quadrature.delta
        ));
    }
    let report = GFactorReport {
        packet,
        region_a,
        region_b,
        g: reference,
        detectability: classify_detectability(reference),
        threshold: FORGEABILITY_THRESHOLD,
        analytic,
        quadrature,
        monte_carlo,
        g_alice,
        g_bob,
        agreement: Agreement {
            quadrature_deviation,
            quadrature_tolerance: QUADRATURE_AGREEMENT_TOL,
            monte_carlo_deviation,
            monte_carlo_tolerance,
            agree,
        },
        warnings,
    };
    Ok(Bundle {
        report: CommandReport::Gfactor(report),
        trials: None,
        exit_code: if agree { EXIT_OK } else { EXIT_DISAGREEMENT },
    })
}

fn threshold_entry(
    settings: &crate::spin::SettingSet,
    alphabet: Alphabet,
    rate: Option<f64>,
) -> Result<ThresholdEntry> {
    let search = forgeable_scale_search(settings, alphabet, rate)?;
    let mut entry = ThresholdEntry {
        alphabet,
        rate_constraint: rate,
        search: search.clone(),
        certificate_scale: None,
        certificate: None,
        binding_pairs: Vec::new(),
    };
    let above = search.scale + CERTIFICATE_OFFSET;
    if search.infeasible_above.is_none() || above > 1.0 {
        return Ok(entry);
    }
    let targets = TargetMatrix::from(&settings.singlet_correlations().scaled(above));
    match lhv_feasibility(&targets, settings, alphabet, rate)? {
        FeasibilityResult::Infeasible { certificate } => {
            for (i, row) in certificate.coefficients.iter().enumerate() {
                for (j, c) in row.iter().enumerate() {
                    if c.abs() > 1e-9 {
                        entry.binding_pairs.push([i, j]);
                    }
                }
            }
            entry.certificate_scale = Some(above);
            entry.certificate = Some(certificate);
            Ok(entry)
        }
        FeasibilityResult::Feasible { .. } => Err(LpError::Numerical(format!(
            "scale {above} above the threshold {} is feasible",
            search.scale
        ))
        .into()),
    }
}

/// Largest forgeable scale of the singlet correlations, per alphabet.
pub fn cmd_lhv_threshold(doc: &ConfigDocument) -> Result<Bundle> {
    let settings = doc.settings()?;
    let entries = doc
        .lhv
        .alphabets
        .iter()
        .map(|&alphabet| {
            let rate = match alphabet {
                Alphabet::PlusMinus => None,
                Alphabet::PlusMinusNull => doc.lhv.rate_constraint,
            };
            threshold_entry(&settings, alphabet, rate)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Bundle {
        report: CommandReport::LhvThreshold(ThresholdReport { settings, entries }),
        trials: None,
        exit_code: EXIT_OK,
    })
}

/// One protocol session.
pub fn cmd_run(doc: &ConfigDocument) -> Result<Bundle> {
    let session = run_session(&doc.session_config()?)?;
    let exit_code = if session.report.decision == Decision::Inconclusive {
        EXIT_INCONCLUSIVE
    } else {
        EXIT_OK
    };
    Ok(Bundle {
        report: CommandReport::Run(Box::new(session.report)),
        trials: Some(session.trials),
        exit_code,
    })
}

fn sweep_point(doc: &ConfigDocument, variable: SweepVariable, value: f64) -> Result<ConfigDocument> {
    let mut d = doc.clone();
    match variable {
        SweepVariable::GOverride => d.g_override = Some(value),
        SweepVariable::Time => {
            d.packet
                .as_mut()
                .ok_or_else(|| Error::config("packet", "required to sweep time"))?
                .time = value;
        }
        SweepVariable::RegionHalfwidth => {
            let r = d
                .regions
                .as_mut()
                .ok_or_else(|| Error::config("regions", "required to sweep region_halfwidth"))?;
            r.a = r.a.with_size(value)?;
            r.b = r.b.with_size(value)?;
        }
    }
    d.validate()?;
    Ok(d)
}

/// One session per grid point; row `k` uses seed `seed + k`.
pub fn cmd_sweep(doc: &ConfigDocument) -> Result<Bundle> {
    let sweep = doc
        .sweep
        .as_ref()
        .ok_or_else(|| Error::config("sweep", "section required"))?;
    if sweep.grid.is_empty() {
        return Err(Error::config("sweep.grid", "must not be empty"));
    }
    if sweep.variable != SweepVariable::GOverride && doc.g_override.is_some() {
        return Err(Error::config(
            "g_override",
            "fixes g, so sweeping a spatial variable has no effect",
        ));
    }
    let results: Vec<(SweepRow, Option<Error>)> = sweep
        .grid
        .par_iter()
        .enumerate()
        .map(|(index, &value)| {
            let seed = doc.seed.wrapping_add(index as u64);
            let mut row = SweepRow {
                index,
                value,
                seed,
                g: None,
                s: None,
                std_error: None,
                qber: None,
                decision: None,
                error: None,
            };
            let outcome = sweep_point(doc, sweep.variable, value).and_then(|mut d| {
                d.seed = seed;
                run_session(&d.session_config()?)
            });
            match outcome {
                Ok(session) => {
                    let r = session.report;
                    row.g = Some(r.g.g);
                    row.s = r.chsh.as_ref().map(|c| c.s);
                    row.std_error = r.chsh.as_ref().map(|c| c.std_error);
                    row.qber = r.key.as_ref().map(|k| k.qber);
                    row.decision = Some(r.decision);
                    (row, None)
                }
                Err(e) => {
                    row.error = Some(e.to_string());
                    (row, Some(e))
                }
            }
        })
        .collect();
    let exit_code = if results.iter().any(|(_, e)| e.is_none()) {
        EXIT_OK
    } else {
        results
            .iter()
            .find_map(|(_, e)| e.as_ref())
            .map_or(1, Error::exit_code)
    };
    let report = SweepReport {
        variable: sweep.variable,
        base_seed: doc.seed,
        g_threshold: FORGEABILITY_THRESHOLD,
        chsh_bound: 2.0,
        rows: results.into_iter().map(|(row, _)| row).collect(),
    };
    Ok(Bundle {
        report: CommandReport::Sweep(report),
        trials: None,
        exit_code,
    })
}
