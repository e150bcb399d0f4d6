//! One function per subcommand: compute, then write CSV + JSON artifacts.

use kplab_core::ensemble::{sample_stream, DisorderModel};
use kplab_core::exec::Runner;
use kplab_core::lyapunov::{
    self, default_steps, idos_from_rotation, Budget, ScalingFit, ScanBudget,
};
use kplab_core::prufer::CriticalEnergy;
use kplab_core::spectral::vanhove_fit;
use kplab_core::transfer::{band_edges, ComplexEnergy};
use kplab_core::transport::{
    self, coupled_epsilon, envelope_shape, fit_envelope, growth_exponent, martingale_deviation,
    moment_estimate, norm_control_check, MomentCurve, MomentParams, Schedule,
};
use kplab_core::weyl::{WeylLine, WeylOptions};
use kplab_core::Error;
use serde::Serialize;

use crate::acceptance;
use crate::config::*;
use crate::error::CliError;
use crate::output::{OutputDir, Table};

/// A model usable at a critical energy, with its constants.
fn critical(model: &str, l: u32) -> Result<(DisorderModel, CriticalEnergy), CliError> {
    let model = parse_model(model)?;
    let ce = CriticalEnergy::new(l, &model)?;
    Ok((model, ce))
}

pub fn bands(cfg: &BandsConfig, out: &OutputDir) -> Result<(), CliError> {
    out.write_manifest("bands", cfg)?;
    let mut t = Table::new(&["l", "e_low", "e_high", "width"]);
    for b in band_edges(cfg.v, cfg.l_max)? {
        t.push(vec![
            b.l.into(),
            b.e_low.into(),
            b.e_high.into(),
            b.width().into(),
        ]);
    }
    out.write_csv("bands.csv", &t)?;
    Ok(())
}

#[derive(Serialize)]
struct FitReport<'a> {
    fit: &'a ScalingFit,
    exponent_error: f64,
    coefficient_rel_error: f64,
    coefficient_at_theory_rel_error: f64,
}

impl<'a> FitReport<'a> {
    fn new(fit: &'a ScalingFit) -> Self {
        Self {
            fit,
            exponent_error: fit.exponent_error(),
            coefficient_rel_error: fit.coefficient_rel_error(),
            coefficient_at_theory_rel_error: fit.coefficient_at_theory_rel_error(),
        }
    }
}

pub fn lyapunov<R: Runner>(
    runner: &R,
    cfg: &LyapunovConfig,
    out: &OutputDir,
) -> Result<ScalingFit, CliError> {
    out.write_manifest("lyapunov", cfg)?;
    let (model, ce) = critical(&cfg.model, cfg.l)?;
    let grid = parse_grid(&cfg.eps_grid, true)?;
    let side = match cfg.side {
        SideArg::Below => lyapunov::Side::Below,
        SideArg::Above => lyapunov::Side::Above,
    };
    let budget = ScanBudget {
        n: cfg.n,
        samples: cfg.samples,
        seed: cfg.seed,
    };
    let (fit, points) = lyapunov::fit_scaling(runner, side, &ce, &model, &grid, &budget)?;
    let mut t = Table::new(&[
        "epsilon",
        "gamma",
        "gamma_stderr",
        "gamma_direct",
        "gamma_direct_stderr",
        "steps",
    ]);
    for p in &points {
        t.push(vec![
            p.epsilon.into(),
            p.gamma.value.into(),
            p.gamma.std_error.into(),
            p.gamma_direct.value.into(),
            p.gamma_direct.std_error.into(),
            p.gamma.n.into(),
        ]);
    }
    out.write_csv("lyapunov.csv", &t)?;
    out.write_json("lyapunov.json", &FitReport::new(&fit))?;
    Ok(fit)
}

pub fn idos<R: Runner>(
    runner: &R,
    cfg: &IdosConfig,
    out: &OutputDir,
) -> Result<ScalingFit, CliError> {
    out.write_manifest("idos", cfg)?;
    let (model, ce) = critical(&cfg.model, cfg.l)?;
    let grid = parse_grid(&cfg.eps_grid, true)?;
    let mut t = Table::new(&["epsilon", "energy", "idos", "idos_stderr", "deficit"]);
    let l = ce.l as f64;
    let fit = match cfg.method {
        IdosMethod::Direct => {
            let (fit, curve) =
                vanhove_fit(runner, &ce, &model, &grid, cfg.n, cfg.samples, cfg.seed)?;
            for (eps, p) in grid.iter().zip(&curve) {
                t.push(vec![
                    (*eps).into(),
                    p.energy.into(),
                    p.value.into(),
                    p.std_error.into(),
                    (l - p.value).into(),
                ]);
            }
            fit
        }
        IdosMethod::Rotation => {
            let mut values = Vec::new();
            let mut errors = Vec::new();
            for &eps in &grid {
                let b = Budget {
                    n: cfg.n.max(default_steps(eps)),
                    samples: cfg.samples,
                    seed: cfg.seed,
                };
                let (v, se) = idos_from_rotation(runner, eps, &model, &b, &ce)?;
                t.push(vec![
                    eps.into(),
                    (ce.e_l - eps).into(),
                    v.into(),
                    se.into(),
                    (l - v).into(),
                ]);
                values.push(l - v);
                errors.push(se);
            }
            ScalingFit::from_points(
                grid.clone(),
                values,
                errors,
                (0.5, ce.d_plus / std::f64::consts::PI),
            )?
        }
    };
    out.write_csv("idos.csv", &t)?;
    out.write_json("idos.json", &FitReport::new(&fit))?;
    Ok(fit)
}

pub fn green(cfg: &GreenConfig, out: &OutputDir) -> Result<(), CliError> {
    out.write_manifest("green", cfg)?;
    let model = parse_model(&cfg.model)?;
    let z = ComplexEnergy::new(cfg.energy, cfg.eta)?;
    if !(cfg.eta > 0.0) {
        return Err(CliError::Config("eta must be positive".into()));
    }
    let xs = parse_grid(&cfg.x_grid, false)?;
    let opts = WeylOptions::for_energy(z, cfg.tol);
    let reach = xs.iter().fold(cfg.y.abs(), |m, x| m.max(x.abs()));
    // Room for a few cap doublings on each side.
    let r = (reach + 16.0 * opts.l0).ceil() as i64;
    let real = sample_stream(&model, cfg.seed, cfg.stream, -r, r)?;
    let line = WeylLine::new(z, &real, cut_point(cfg.y), &opts)?;
    let mut t = Table::new(&["x", "y", "re", "im", "abs"]);
    for x in xs {
        let g = line.green(x, cfg.y)?.value;
        t.push(vec![
            x.into(),
            cfg.y.into(),
            g.re.into(),
            g.im.into(),
            g.norm().into(),
        ]);
    }
    out.write_csv("green.csv", &t)?;
    Ok(())
}

/// A non-integer reference point next to `y`.
fn cut_point(y: f64) -> f64 {
    y.floor() + 0.5
}

fn schedule(cfg: &TransportConfig) -> Schedule {
    match cfg.schedule {
        ScheduleArg::Critical => Schedule::Critical {
            alpha: cfg.alpha,
            c8: cfg.c8,
        },
        ScheduleArg::Ballistic => Schedule::Ballistic {
            eps0: cfg.eps0,
            span: cfg.span,
        },
    }
}

#[derive(Serialize)]
struct TransportReport {
    q: f64,
    exponent: Option<f64>,
    exponent_stderr: Option<f64>,
    bound_exponent: f64,
    /// `exponent ≥ bound − 0.3`; only meaningful with disorder.
    passes_lower_bound: Option<bool>,
    points: usize,
}

pub fn transport<R: Runner>(
    runner: &R,
    cfg: &TransportConfig,
    out: &OutputDir,
) -> Result<MomentCurve, CliError> {
    out.write_manifest("transport", cfg)?;
    let model = parse_optional_model(&cfg.model)?;
    let grid = parse_grid(&cfg.t_grid, true)?;
    let params = MomentParams {
        q: cfg.q,
        a: cfg.a,
        schedule: schedule(cfg),
        energies: cfg.energies,
        samples: cfg.samples,
        seed: cfg.seed,
        m_tol: cfg.m_tol,
        refinement_tol: cfg.refinement_tol,
    };
    let mut curve = MomentCurve {
        q: cfg.q,
        a: cfg.a,
        l: cfg.l,
        e_l: (cfg.l as f64 * std::f64::consts::PI).powi(2),
        model: model.clone(),
        schedule: params.schedule,
        samples: if model.is_some() { cfg.samples } else { 1 },
        points: Vec::new(),
    };
    let write = |curve: &MomentCurve| -> Result<(), CliError> {
        let mut t = Table::new(&["T", "q", "moment_mean", "moment_stderr", "x_max", "eps0"]);
        for p in &curve.points {
            t.push(vec![
                p.t.into(),
                cfg.q.into(),
                p.value.into(),
                p.std_error.into(),
                p.x_max.into(),
                p.eps0.into(),
            ]);
        }
        out.write_csv("transport.csv", &t)?;
        Ok(())
    };
    for &t in &grid {
        match moment_estimate(runner, t, cfg.l, model.as_ref(), &params) {
            Ok(p) => curve.points.push(p),
            Err(e) => {
                // Keep what was computed before the failure.
                write(&curve)?;
                return Err(e.into());
            }
        }
    }
    write(&curve)?;
    let fit = growth_exponent(&curve).ok();
    let bound = transport::bound_exponent(cfg.q);
    let report = TransportReport {
        q: cfg.q,
        exponent: fit.map(|f| f.exponent),
        exponent_stderr: fit.map(|f| f.exponent_se),
        bound_exponent: bound,
        passes_lower_bound: match (&model, fit) {
            (Some(_), Some(f)) => Some(f.exponent >= bound - 0.3),
            _ => None,
        },
        points: curve.points.len(),
    };
    out.write_json("transport.json", &report)?;
    Ok(curve)
}

pub fn deviations<R: Runner>(
    runner: &R,
    cfg: &DeviationsConfig,
    out: &OutputDir,
) -> Result<(), CliError> {
    out.write_manifest("deviations", cfg)?;
    let (model, ce) = critical(&cfg.model, cfg.l)?;
    if cfg.n_grid.is_empty() {
        return Err(CliError::Config("n_grid is empty".into()));
    }
    match cfg.kind {
        DeviationKind::Martingale => {
            let reports = cfg
                .n_grid
                .iter()
                .map(|&n| {
                    martingale_deviation(
                        runner,
                        &ce,
                        &model,
                        coupled_epsilon(n, cfg.alpha),
                        n,
                        cfg.alpha,
                        cfg.samples,
                        cfg.seed,
                    )
                })
                .collect::<Result<Vec<_>, Error>>()?;
            let c = fit_envelope(&reports).unwrap_or(0.0);
            let mut t = Table::new(&[
                "N",
                "epsilon",
                "level",
                "empirical_tail",
                "envelope",
                "endpoint_variance",
                "variance_bound",
            ]);
            for r in &reports {
                t.push(vec![
                    r.n.into(),
                    r.epsilon.into(),
                    r.level.into(),
                    r.empirical_tail.into(),
                    (c * envelope_shape(r.n, r.alpha)).min(1.0).into(),
                    r.endpoint_variance.into(),
                    r.variance_bound.into(),
                ]);
            }
            out.write_csv("deviations.csv", &t)?;
            out.write_json("deviations.json", &reports)?;
        }
        DeviationKind::Norm => {
            let mut threshold = None;
            let mut reports = Vec::new();
            for &n in &cfg.n_grid {
                let r = norm_control_check(
                    runner,
                    &ce,
                    &model,
                    coupled_epsilon(n, cfg.alpha),
                    n,
                    cfg.alpha,
                    cfg.samples,
                    cfg.seed,
                    threshold,
                )?;
                threshold.get_or_insert(r.threshold);
                reports.push(r);
            }
            let mut t = Table::new(&[
                "N",
                "epsilon",
                "median_scaled_sup",
                "threshold",
                "exceedance",
                "stride",
            ]);
            for r in &reports {
                t.push(vec![
                    r.n.into(),
                    r.epsilon.into(),
                    r.median_scaled.into(),
                    r.threshold.into(),
                    r.exceedance.into(),
                    r.stride.into(),
                ]);
            }
            out.write_csv("deviations.csv", &t)?;
            out.write_json("deviations.json", &reports)?;
        }
    }
    Ok(())
}

/// Runs a suite, prints the table and writes `verify.csv`.
pub fn verify<R: Runner>(
    runner: &R,
    cfg: &VerifyConfig,
    out: &OutputDir,
) -> Result<Vec<acceptance::Outcome>, CliError> {
    out.write_manifest("verify", cfg)?;
    let outcomes = acceptance::run_suite(runner, cfg.suite, cfg.seed, |o| println!("{}", o.line()));
    let mut t = Table::new(&["id", "passed", "measured", "target"]);
    for o in &outcomes {
        t.push(vec![
            o.id.into(),
            o.passed.into(),
            o.measured.clone().into(),
            o.target.into(),
        ]);
    }
    out.write_csv("verify.csv", &t)?;
    let failed = outcomes
        .iter()
        .filter(|o| !o.passed && !o.supplementary)
        .count();
    if failed > 0 {
        return Err(CliError::Acceptance(failed));
    }
    Ok(outcomes)
}
