//! Command implementations.

use std::io::Write;
use std::path::Path;

use effbound_core::bounds::{
    bound_decon, bound_levy, bound_white_noise, BoundReport, Functional, FunctionalKind,
    WnFunctional,
};
use effbound_core::models::{BuiltModel, ModelSpec, WhiteNoiseKind, WhiteNoiseOp, BUILTIN_MODELS};
use effbound_core::operators::ScoreOperator;
use effbound_core::oracle::{cr_ladder, lan_check_white_noise, SubmodelBasis};
use effbound_core::simulate::{
    estimate_white_noise, mc_compare, select_cutoff, Decompounder, InfluenceAverage, MCReport,
    SpectralLevyEstimator, CUTOFF_LADDER,
};
use effbound_core::{EffError, GridFunction};
use serde_json::{json, Value};

use crate::config::{Format, RunConfig};
use crate::{EstimatorKind, Failure, SCHEMA};

/// Nondecreasing slack for the oracle ladder.
const LADDER_SLACK: f64 = 1e-8;
/// Pilot replications for the spectral cutoff sweep.
const PILOT_REPS: usize = 20;

fn sink(out: Option<&Path>) -> Result<Box<dyn Write>, Failure> {
    Ok(match out {
        Some(p) => Box::new(
            std::fs::File::create(p)
                .map_err(|e| Failure::Usage(format!("{}: {e}", p.display())))?,
        ),
        None => Box::new(std::io::stdout().lock()),
    })
}

/// Write the JSON envelope, or the CSV view produced by `csv`.
fn emit(
    cfg: &RunConfig,
    out: Option<&Path>,
    result: Value,
    csv: impl FnOnce(&mut dyn Write) -> Result<(), EffError>,
) -> Result<(), Failure> {
    let mut w = sink(out)?;
    let io = |e: std::io::Error| Failure::Usage(format!("write: {e}"));
    match cfg.format {
        Format::Json => {
            let doc = json!({ "schema": SCHEMA, "config": cfg, "result": result });
            serde_json::to_writer_pretty(&mut w, &doc)
                .map_err(|e| Failure::Usage(format!("write: {e}")))?;
            writeln!(w).map_err(io)?;
        }
        Format::Csv => csv(&mut w)?,
    }
    w.flush().map_err(io)
}

fn sigma_csv(w: &mut dyn Write, sigma: &[Vec<f64>]) -> Result<(), EffError> {
    let mut wr = csv::Writer::from_writer(w);
    let err = |e: csv::Error| EffError::Io(e.to_string());
    wr.write_record(["i", "j", "sigma"]).map_err(err)?;
    for (i, row) in sigma.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            wr.write_record([i.to_string(), j.to_string(), format!("{v:.17e}")])
                .map_err(err)?;
        }
    }
    wr.flush().map_err(|e| EffError::Io(e.to_string()))
}

/// Matrix functionals, defaulting to the all-ones vector.
fn wn_vectors(cfg: &RunConfig, op: &WhiteNoiseOp) -> Result<Vec<Vec<f64>>, Failure> {
    let p = match &op.kind {
        WhiteNoiseKind::Matrix { k } => k.ncols(),
        _ => {
            return Err(Failure::Usage(
                "vector functionals need the wn-matrix model".into(),
            ))
        }
    };
    let z = if cfg.zeta.is_empty() {
        vec![vec![1.0; p]]
    } else {
        cfg.zeta.clone()
    };
    if z.iter().any(|v| v.len() != p) {
        return Err(Failure::Usage(format!("each --zeta needs {p} coordinates")));
    }
    Ok(z)
}

/// Smooth functionals `exp(-(x - t)²/2)` for the operator white-noise model.
fn wn_functions(cfg: &RunConfig, theta: &GridFunction) -> Result<Functional, Failure> {
    if cfg.t.is_empty() {
        return Err(Failure::Usage("at least one --t is required".into()));
    }
    let comps = cfg
        .t
        .iter()
        .map(|&t| FunctionalKind::Grid {
            zeta: GridFunction::from_fn(theta.grid, |x| (-0.5 * (x - t).powi(2)).exp()),
            smoothness: None,
        })
        .collect();
    Ok(Functional::new(comps)?)
}

fn slim(mut r: BoundReport) -> BoundReport {
    r.influence.clear();
    if let Some(l) = r.diagnostics.law.as_mut() {
        l.measure.density = None;
    }
    r
}

pub fn compute_bound(
    cfg: &RunConfig,
    known_lambda: bool,
    full: bool,
    out: Option<&Path>,
) -> Result<(), Failure> {
    let report = match cfg.build()? {
        BuiltModel::Levy(t) => bound_levy(&t, &cfg.functional(true)?, known_lambda)?,
        BuiltModel::Decon(p) => {
            if known_lambda {
                return Err(Failure::Usage(
                    "--known-lambda applies to compound Poisson models".into(),
                ));
            }
            bound_decon(&p, &cfg.functional(false)?)?
        }
        BuiltModel::WhiteNoise(op) => match &op.kind {
            WhiteNoiseKind::Matrix { .. } => {
                bound_white_noise(&op, &WnFunctional::Vectors(wn_vectors(cfg, &op)?))?
            }
            WhiteNoiseKind::DiffeqNonlinear { theta } => {
                bound_white_noise(&op, &WnFunctional::Functions(wn_functions(cfg, theta)?))?
            }
            WhiteNoiseKind::FourierMultiplier { .. } => {
                return Err(Failure::Usage(
                    "no built-in functional for multiplier models".into(),
                ));
            }
        },
    };
    let report = if full { report } else { slim(report) };
    let sigma = report.sigma.clone();
    emit(cfg, out, json!({ "bound": report }), |w| {
        sigma_csv(w, &sigma)
    })
}

pub fn oracle(
    cfg: &RunConfig,
    dims: &[usize],
    half_width: f64,
    out: Option<&Path>,
) -> Result<(), Failure> {
    if dims.is_empty() {
        return Err(Failure::Usage("empty dimension ladder".into()));
    }
    let tol = cfg.tolerance.unwrap_or(0.02);
    let (a, zeta, sigma_ref, nu) = match cfg.build()? {
        BuiltModel::Levy(t) => {
            let f = cfg.functional(true)?;
            let s = bound_levy(&t, &Functional::new(vec![f.components[0].clone()])?, false)?;
            (
                ScoreOperator::levy(&t)?,
                f.components[0].clone(),
                s.sigma[0][0],
                None,
            )
        }
        BuiltModel::Decon(p) => {
            let f = cfg.functional(false)?;
            let s = bound_decon(&p, &Functional::new(vec![f.components[0].clone()])?)?;
            (
                ScoreOperator::decon(&p)?,
                f.components[0].clone(),
                s.sigma[0][0],
                Some(p.nu.clone()),
            )
        }
        BuiltModel::WhiteNoise(_) => {
            return Err(Failure::Usage(
                "the oracle needs a Lévy or deconvolution model".into(),
            ))
        }
    };
    let grid = a.grid();
    let center = zeta.threshold().unwrap_or(0.0);
    let rep = cr_ladder(&a, &zeta, dims, sigma_ref, |d| {
        let b = SubmodelBasis::piecewise_linear(&grid, center, half_width, d)?;
        match &nu {
            Some(m) => b.centered(m),
            None => Ok(b),
        }
    })?;
    let monotone = rep.max_decrease <= LADDER_SLACK;
    let close = (rep.final_ratio - 1.0).abs() <= tol;
    let rows: Vec<(usize, f64)> = rep
        .dims
        .iter()
        .copied()
        .zip(rep.values.iter().copied())
        .collect();
    emit(
        cfg,
        out,
        json!({ "oracle": rep, "monotone": monotone, "within_tolerance": close, "tolerance": tol }),
        |w| {
            let mut wr = csv::Writer::from_writer(w);
            let err = |e: csv::Error| EffError::Io(e.to_string());
            wr.write_record(["dim", "value"]).map_err(err)?;
            for (d, v) in rows {
                wr.write_record([d.to_string(), format!("{v:.17e}")])
                    .map_err(err)?;
            }
            wr.flush().map_err(|e| EffError::Io(e.to_string()))
        },
    )?;
    if !monotone {
        return Err(Failure::Verification(format!(
            "ladder decreases by {:e}",
            rep.max_decrease
        )));
    }
    if !close {
        return Err(Failure::Verification(format!(
            "final ratio {:.4} outside 1 ± {tol}",
            rep.final_ratio
        )));
    }
    Ok(())
}

pub struct SimOptions {
    pub n: usize,
    pub reps: usize,
    pub estimator: EstimatorKind,
    pub cutoff: Option<f64>,
    pub compare: bool,
}

fn within(rep: &MCReport, band: f64) -> bool {
    rep.ratio.iter().all(|r| (r - 1.0).abs() <= band)
}

pub fn simulate(cfg: &RunConfig, o: &SimOptions, out: Option<&Path>) -> Result<(), Failure> {
    let band = cfg.tolerance.unwrap_or(0.15);
    let mut extra = serde_json::Map::new();
    let rep = match cfg.build()? {
        BuiltModel::Levy(t) => {
            let f = cfg.functional(true)?;
            let kind = match o.estimator {
                EstimatorKind::Auto if t.nu.is_finite_activity() => EstimatorKind::Decompound,
                EstimatorKind::Auto => EstimatorKind::Spectral,
                k => k,
            };
            let spectral = |sigma: Vec<Vec<f64>>,
                            truth: Vec<f64>,
                            extra: &mut serde_json::Map<String, Value>| {
                let grid = t.grid();
                let cutoff = match o.cutoff {
                    Some(c) => c,
                    None => {
                        let ch = select_cutoff(
                            &t,
                            &f,
                            grid,
                            &CUTOFF_LADDER,
                            &truth,
                            o.n,
                            PILOT_REPS,
                            cfg.seed ^ 0x5eed,
                        )?;
                        extra.insert("cutoff_choice".into(), json!(ch));
                        ch.cutoff
                    }
                };
                let est = SpectralLevyEstimator::new(&t, &f, grid, cutoff)?;
                mc_compare(&t, &est, o.n, o.reps, cfg.seed, sigma, Some(truth))
            };
            match kind {
                EstimatorKind::Decompound => {
                    let b = bound_levy(&t, &f, true)?;
                    let truth = b.diagnostics.functional_values.clone();
                    let est = Decompounder::new(&t, &f)?;
                    let rep = mc_compare(
                        &t,
                        &est,
                        o.n,
                        o.reps,
                        cfg.seed,
                        b.sigma.clone(),
                        Some(truth.clone()),
                    )?;
                    let kl = b
                        .diagnostics
                        .known_lambda
                        .clone()
                        .expect("known-lambda bound");
                    extra.insert("sigma_unknown_lambda".into(), json!(kl.sigma_unknown));
                    extra.insert("projection_bound".into(), json!(kl.projection_bound));
                    let below: Vec<bool> = (0..rep.ratio.len())
                        .map(|i| rep.scaled_var[i][i] < kl.sigma_unknown[i][i])
                        .collect();
                    extra.insert("below_unknown_lambda_bound".into(), json!(below));
                    if o.compare {
                        if f.components.iter().any(|c| c.contains_origin()) {
                            return Err(Failure::Usage(
                                "--compare needs functionals away from the origin".into(),
                            ));
                        }
                        let mut sub = serde_json::Map::new();
                        let s = spectral(kl.sigma_unknown.clone(), truth, &mut sub)?;
                        let smaller =
                            (0..rep.ratio.len()).all(|i| rep.scaled_var[i][i] < s.scaled_var[i][i]);
                        extra.insert(
                            "comparison".into(),
                            json!({ "spectral": s, "pilot": sub, "decompound_smaller": smaller }),
                        );
                    }
                    rep
                }
                EstimatorKind::Spectral => {
                    let b = bound_levy(&t, &f, false)?;
                    let truth = b.diagnostics.functional_values.clone();
                    spectral(b.sigma, truth, &mut extra)?
                }
                _ => {
                    return Err(Failure::Usage(
                        "influence-average applies to deconvolution models".into(),
                    ))
                }
            }
        }
        BuiltModel::Decon(p) => {
            if !matches!(
                o.estimator,
                EstimatorKind::Auto | EstimatorKind::InfluenceAverage
            ) {
                return Err(Failure::Usage(
                    "deconvolution models use the influence-average estimator".into(),
                ));
            }
            let f = cfg.functional(false)?;
            let b = bound_decon(&p, &f)?;
            let est = InfluenceAverage::decon(&p, &f)?;
            mc_compare(
                &p,
                &est,
                o.n,
                o.reps,
                cfg.seed,
                b.sigma,
                Some(b.diagnostics.functional_values),
            )?
        }
        BuiltModel::WhiteNoise(op) => {
            estimate_white_noise(&op, &wn_vectors(cfg, &op)?, o.reps, cfg.seed)?
        }
    };
    let ok = within(&rep, band);
    let csv_rep = rep.clone();
    emit(
        cfg,
        out,
        json!({ "report": rep, "band": band, "within_band": ok, "extra": extra }),
        |w| csv_rep.write_csv(w),
    )?;
    if !ok {
        return Err(Failure::Verification(format!(
            "scaled variance ratios {:?} outside 1 ± {band}",
            csv_rep.ratio
        )));
    }
    Ok(())
}

pub fn white_noise_demo(cfg: &RunConfig, reps: usize, out: Option<&Path>) -> Result<(), Failure> {
    let tol = cfg.tolerance.unwrap_or(0.05);
    let op = match cfg.build()? {
        BuiltModel::WhiteNoise(op) if matches!(op.kind, WhiteNoiseKind::Matrix { .. }) => op,
        _ => {
            return Err(Failure::Usage(
                "white-noise-demo needs the wn-matrix model".into(),
            ))
        }
    };
    let zetas = wn_vectors(cfg, &op)?;
    let b = vec![1.0; zetas[0].len()];
    let lan = lan_check_white_noise(&op, &b, reps, cfg.seed)?;
    let rep = estimate_white_noise(&op, &zetas, reps, cfg.seed)?;
    let lan_ok = lan.max_discrepancy <= 1e-10;
    let var_ok = within(&rep, tol);
    let bias_ok = rep
        .bias_z
        .as_ref()
        .is_some_and(|z| z.iter().all(|v| v.abs() < 3.0));
    let csv_rep = rep.clone();
    emit(
        cfg,
        out,
        json!({ "lan": lan, "estimator": rep, "tolerance": tol, "lan_ok": lan_ok, "variance_ok": var_ok, "bias_ok": bias_ok }),
        |w| csv_rep.write_csv(w),
    )?;
    if !(lan_ok && var_ok && bias_ok) {
        return Err(Failure::Verification(format!(
            "lan discrepancy {:e}, variance ratios {:?}, bias z {:?}",
            lan.max_discrepancy, csv_rep.ratio, csv_rep.bias_z
        )));
    }
    Ok(())
}

pub fn list_models() -> Result<(), Failure> {
    let models: Vec<Value> = BUILTIN_MODELS
        .iter()
        .map(|n| {
            let spec = ModelSpec::default_for(n)?;
            let (span, size) = spec.default_grid();
            Ok(json!({ "name": n, "defaults": spec, "grid": { "span": span, "n": size } }))
        })
        .collect::<Result<_, EffError>>()?;
    let doc = json!({ "schema": SCHEMA, "models": models });
    let mut out = std::io::stdout().lock();
    writeln!(out, "{}", serde_json::to_string_pretty(&doc).expect("json"))
        .map_err(|e| Failure::Usage(format!("write: {e}")))
}
