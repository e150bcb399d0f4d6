//! Acceptance criteria AC-1 … AC-10 with pinned tolerances.
//!
//! Each criterion returns an [`Outcome`]; numerical errors become failures
//! carrying the error text. Supplementary checks are reported but never gate.

use std::f64::consts::PI;

use kplab_core::ensemble::{sample_stream, DisorderModel};
use kplab_core::exec::Runner;
use kplab_core::linalg::RMat2;
use kplab_core::lyapunov::{fit_scaling, log_grid, ScanBudget, Side};
use kplab_core::prufer::{act_on_circle, birkhoff_sum, trajectory, CriticalEnergy, Regime};
use kplab_core::spectral::{count_nodes, eigen_green, vanhove_fit, EigenGreenOptions, FiniteBox};
use kplab_core::transfer::{band_edges, position_propagator, site_matrix, ComplexEnergy, Coupling};
use kplab_core::transport::{
    coupled_epsilon, envelope_shape, fit_envelope, growth_exponent, m_pair_ratio,
    martingale_deviation, moment_curve, MomentParams, Schedule,
};
use kplab_core::weyl::{m_function_adaptive, Side as WeylSide, WeylLine, WeylOptions};
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::Suite;

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub id: &'static str,
    pub passed: bool,
    pub measured: String,
    pub target: &'static str,
    /// Reported alongside the criteria without gating.
    pub supplementary: bool,
}

impl Outcome {
    fn new(id: &'static str, target: &'static str, passed: bool, measured: String) -> Self {
        Self {
            id,
            passed,
            measured,
            target,
            supplementary: false,
        }
    }

    fn error(id: &'static str, target: &'static str, e: impl std::fmt::Display) -> Self {
        Self::new(id, target, false, format!("error: {e}"))
    }

    pub fn line(&self) -> String {
        let status = match (self.passed, self.supplementary) {
            (true, false) => "PASS",
            (false, false) => "FAIL",
            (true, true) => "pass (supplementary)",
            (false, true) => "fail (supplementary)",
        };
        format!(
            "{:<10} {status:<5} {} | target: {}",
            self.id, self.measured, self.target
        )
    }
}

fn uniform() -> (DisorderModel, CriticalEnergy) {
    let m = DisorderModel::default_uniform();
    let ce = CriticalEnergy::new(1, &m).expect("default model has a positive mean");
    (m, ce)
}

fn uniform01(rng: &mut ChaCha8Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64
}

pub const AC1_TARGET: &str = "slope 1.00 ± 0.10, prefactor within 15% of 5.277e-4";

pub fn ac1<R: Runner>(runner: &R, seed: u64) -> Outcome {
    let (model, ce) = uniform();
    let grid = log_grid(1e-3, 1e-2, 8);
    let budget = ScanBudget {
        n: Some(1_000_000),
        samples: 32,
        seed,
    };
    match fit_scaling(runner, Side::Below, &ce, &model, &grid, &budget) {
        Ok((fit, _)) => Outcome::new(
            "AC-1",
            AC1_TARGET,
            (fit.exponent - 1.0).abs() <= 0.10 && fit.coefficient_rel_error().abs() <= 0.15,
            format!(
                "slope {:.4} ± {:.4}, prefactor {:.4e} ({:+.2}%), at fixed slope {:.4e}",
                fit.exponent,
                fit.exponent_se,
                fit.coefficient,
                100.0 * fit.coefficient_rel_error(),
                fit.coefficient_at_theory
            ),
        ),
        Err(e) => Outcome::error("AC-1", AC1_TARGET, e),
    }
}

pub const AC2_TARGET: &str = "slope 0.50 ± 0.05, prefactor within 10% of 0.22508";

pub fn ac2<R: Runner>(runner: &R, seed: u64) -> Outcome {
    let (model, ce) = uniform();
    let grid = log_grid(1e-4, 1e-2, 8);
    let budget = ScanBudget {
        n: Some(1_000_000),
        samples: 32,
        seed,
    };
    match fit_scaling(runner, Side::Above, &ce, &model, &grid, &budget) {
        Ok((fit, _)) => Outcome::new(
            "AC-2",
            AC2_TARGET,
            (fit.exponent - 0.5).abs() <= 0.05 && fit.coefficient_rel_error().abs() <= 0.10,
            format!(
                "slope {:.4} ± {:.4}, prefactor {:.5} ({:+.2}%), at fixed slope {:.5}",
                fit.exponent,
                fit.exponent_se,
                fit.coefficient,
                100.0 * fit.coefficient_rel_error(),
                fit.coefficient_at_theory
            ),
        ),
        Err(e) => Outcome::error("AC-2", AC2_TARGET, e),
    }
}

pub const AC3_TARGET: &str = "N = 200, 200 boxes: coefficient within 10% of 0.071638";
pub const AC3_SUPP_TARGET: &str = "N = 2·10⁴, 32 boxes: coefficient within 10% of 0.071638";

fn vanhove_outcome<R: Runner>(
    runner: &R,
    seed: u64,
    id: &'static str,
    target: &'static str,
    n: usize,
    samples: usize,
) -> Outcome {
    let (model, ce) = uniform();
    let grid = log_grid(1e-4, 1e-2, 8);
    match vanhove_fit(runner, &ce, &model, &grid, n, samples, seed) {
        Ok((fit, _)) => Outcome::new(
            id,
            target,
            fit.coefficient_rel_error().abs() <= 0.10,
            format!(
                "slope {:.3}, coefficient {:.5} ({:+.1}%)",
                fit.exponent,
                fit.coefficient,
                100.0 * fit.coefficient_rel_error()
            ),
        ),
        Err(e) => Outcome::error(id, target, e),
    }
}

pub fn ac3<R: Runner>(runner: &R, seed: u64) -> Outcome {
    vanhove_outcome(runner, seed, "AC-3", AC3_TARGET, 200, 200)
}

/// The same fit on boxes large enough to resolve the deficit.
pub fn ac3_large_box<R: Runner>(runner: &R, seed: u64) -> Outcome {
    let mut o = vanhove_outcome(runner, seed, "AC-3 (box)", AC3_SUPP_TARGET, 20_000, 32);
    o.supplementary = true;
    o
}

pub const AC4_TARGET: &str =
    "count_nodes(E_l) = N·l exactly, 100 boxes × N ∈ {50,100,200} × l ∈ {1,2,3} × 2 models";

pub fn ac4<R: Runner>(runner: &R, seed: u64) -> Outcome {
    let models = [
        DisorderModel::default_uniform(),
        DisorderModel::default_two_point(),
    ];
    let mut checked = 0usize;
    let mut mismatches = 0usize;
    for model in &models {
        for n in [50usize, 100, 200] {
            let res = runner.run(100, |r| -> Result<usize, kplab_core::Error> {
                let bx = FiniteBox::sample(model, seed, r, n)?;
                Ok((1..=3u64)
                    .filter(|&l| count_nodes((l as f64 * PI).powi(2), &bx) != n as u64 * l)
                    .count())
            });
            for r in res {
                match r {
                    Ok(bad) => {
                        checked += 3;
                        mismatches += bad;
                    }
                    Err(e) => return Outcome::error("AC-4", AC4_TARGET, e),
                }
            }
        }
    }
    Outcome::new(
        "AC-4",
        AC4_TARGET,
        mismatches == 0,
        format!("{mismatches} mismatches in {checked} counts"),
    )
}

pub const AC5_TARGET: &str = "z = E_1 − 0.01 + 0.05i, 20 pairs: relative error ≤ 1e-6";

/// Box length, in units of `1/im √z`.
pub const AC5_BOX_FACTOR: f64 = 10.0;

pub fn ac5(seed: u64) -> Outcome {
    match ac5_max_error(seed) {
        Ok((err, n)) => Outcome::new(
            "AC-5",
            AC5_TARGET,
            err <= 1e-6,
            format!("max relative error {err:.2e} (box {n})"),
        ),
        Err(e) => Outcome::error("AC-5", AC5_TARGET, e),
    }
}

fn ac5_max_error(seed: u64) -> Result<(f64, usize), kplab_core::Error> {
    let (model, ce) = uniform();
    let z = ComplexEnergy::new(ce.e_l - 0.01, 0.05)?;
    let n = (AC5_BOX_FACTOR / z.sqrt().im).ceil() as usize;
    let opts = WeylOptions::for_energy(z, 1e-12);
    let reach = (16.0 * opts.l0).ceil() as i64;
    let line = sample_stream(&model, seed, 0, -reach, n as i64 + reach)?;
    let bx = FiniteBox::new(n, line.clone())?;
    let mid = (n / 2) as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pairs: Vec<(f64, f64)> = (0..20)
        .map(|_| {
            (
                mid - 50.0 + 100.0 * uniform01(&mut rng),
                mid - 50.0 + 100.0 * uniform01(&mut rng),
            )
        })
        .collect();
    let weyl = WeylLine::new(z, &line, mid + 0.5, &opts)?;
    let references = vec![
        ComplexEnergy::new(z.re, 0.5)?,
        ComplexEnergy::new(z.re + 0.5, 0.8)?,
    ];
    let eig = eigen_green(
        &bx,
        z,
        &pairs,
        &EigenGreenOptions {
            cutoff: 400.0,
            references,
            tol: 1e-12,
        },
    )?;
    let mut worst: f64 = 0.0;
    for (g, &(x, y)) in eig.iter().zip(&pairs) {
        let w = weyl.green(x, y)?.value;
        worst = worst.max((w - g).norm() / g.norm());
    }
    Ok((worst, n))
}

pub const AC6_TARGET: &str = "(|m₊|²+|m₋|²+2)/|m₊+m₋|² ≥ ½ on 1000 m-pairs";

pub fn ac6<R: Runner>(runner: &R, seed: u64) -> Outcome {
    let models = [
        DisorderModel::default_uniform(),
        DisorderModel::default_two_point(),
    ];
    let res = runner.run(1000, |i| -> Result<f64, kplab_core::Error> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (i << 20));
        let z = ComplexEnergy::new(
            60.0 * uniform01(&mut rng) - 5.0,
            0.05 + 0.95 * uniform01(&mut rng),
        )?;
        let a = 0.5;
        let opts = WeylOptions::for_energy(z, 1e-10);
        let reach = (8.0 * opts.l0).ceil() as i64;
        let real = sample_stream(&models[(i % 2) as usize], seed, i, -reach, reach)?;
        let mp = m_function_adaptive(z, &real, WeylSide::Plus, a, &opts)?.value;
        let mm = m_function_adaptive(z, &real, WeylSide::Minus, a, &opts)?.value;
        Ok(m_pair_ratio(mp, mm))
    });
    let mut min = f64::INFINITY;
    for r in res {
        match r {
            Ok(x) => min = min.min(x),
            Err(e) => return Outcome::error("AC-6", AC6_TARGET, e),
        }
    }
    Outcome::new(
        "AC-6",
        AC6_TARGET,
        min >= 0.5,
        format!("minimum ratio {min:.4}"),
    )
}

pub const AC7_TARGET: &str = "q = 4, T = 10²..10⁴ (7 points): growth exponent ≥ 0.7";

pub fn ac7<R: Runner>(runner: &R, seed: u64) -> Outcome {
    let (model, _) = uniform();
    let params = MomentParams {
        seed,
        ..MomentParams::new(4.0, Schedule::critical())
    };
    let grid = log_grid(1e2, 1e4, 7);
    match moment_curve(runner, &grid, 1, Some(&model), &params).and_then(|c| growth_exponent(&c)) {
        Ok(fit) => Outcome::new(
            "AC-7",
            AC7_TARGET,
            fit.exponent >= 0.7,
            format!(
                "exponent {:.3} ± {:.3} (bound exponent {})",
                fit.exponent, fit.exponent_se, fit.bound_exponent
            ),
        ),
        Err(e) => Outcome::error("AC-7", AC7_TARGET, e),
    }
}

pub const AC8_TARGET: &str =
    "α = 0.2, N ∈ {10³,10⁴,10⁵}: tail non-increasing and ≤ min(1, C·N²e^{−N^α})";

pub fn ac8<R: Runner>(runner: &R, seed: u64) -> Outcome {
    let (model, ce) = uniform();
    let alpha = 0.2;
    let reports = match [1_000usize, 10_000, 100_000]
        .iter()
        .map(|&n| {
            martingale_deviation(
                runner,
                &ce,
                &model,
                coupled_epsilon(n, alpha),
                n,
                alpha,
                200,
                seed,
            )
        })
        .collect::<Result<Vec<_>, _>>()
    {
        Ok(r) => r,
        Err(e) => return Outcome::error("AC-8", AC8_TARGET, e),
    };
    let c = fit_envelope(&reports).unwrap_or(0.0);
    let tails: Vec<f64> = reports.iter().map(|r| r.empirical_tail).collect();
    let monotone = tails.windows(2).all(|w| w[1] <= w[0]);
    let enveloped = reports
        .iter()
        .all(|r| r.empirical_tail <= (c * envelope_shape(r.n, alpha)).min(1.0));
    let sups: Vec<String> = reports
        .iter()
        .map(|r| {
            format!(
                "{:.1}/{:.0}",
                r.sup_z_values.iter().cloned().fold(0.0, f64::max),
                r.level
            )
        })
        .collect();
    Outcome::new(
        "AC-8",
        AC8_TARGET,
        monotone && enveloped,
        format!(
            "tails {tails:?}, largest sup |Z| / level [{}], C = {c:.3e}",
            sups.join(", ")
        ),
    )
}

pub const AC9_TARGET: &str =
    "det 1 (1e-12), concatenation (1e-10), sign invariance, Birkhoff envelope, Herglotz, band edges (1e-10)";

pub fn ac9(seed: u64) -> Outcome {
    let mut failed = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = DisorderModel::default_two_point();
    let real = match sample_stream(&model, seed, 0, -40, 40) {
        Ok(r) => r,
        Err(e) => return Outcome::error("AC-9", AC9_TARGET, e),
    };

    let mut det_err: f64 = 0.0;
    for _ in 0..1000 {
        let e = 60.0 * uniform01(&mut rng) - 5.0;
        let v = 4.0 * uniform01(&mut rng) - 2.0;
        let kind = if rng.next_u32() % 2 == 0 {
            Coupling::Delta
        } else {
            Coupling::DeltaPrime
        };
        det_err = det_err.max((site_matrix(e, v, kind).det() - 1.0).abs());
    }
    if det_err > 1e-12 {
        failed.push(format!("det {det_err:.1e}"));
    }

    let mut cat_err: f64 = 0.0;
    for _ in 0..200 {
        let e = 40.0 * uniform01(&mut rng) + 0.5;
        let p = [0, 1, 2].map(|_| 30.0 * uniform01(&mut rng) - 15.0);
        let t = |x: f64, y: f64| {
            position_propagator(e, &real, Coupling::Delta, x, y).map(|p| p.unscaled())
        };
        match (t(p[0], p[2]), t(p[0], p[1]), t(p[1], p[2])) {
            (Ok(a), Ok(b), Ok(c)) => {
                cat_err = cat_err.max(a.max_abs_diff(&(b * c)) / (b.norm() * c.norm()))
            }
            _ => failed.push("concatenation: propagator error".into()),
        }
    }
    if cat_err > 1e-10 {
        failed.push(format!("concatenation {cat_err:.1e}"));
    }

    let mut sign_bad = 0;
    for _ in 0..1000 {
        let (a, b, c) = (
            6.0 * uniform01(&mut rng) - 3.0,
            6.0 * uniform01(&mut rng) - 3.0,
            6.0 * uniform01(&mut rng) - 3.0,
        );
        if a.abs() < 0.1 {
            continue;
        }
        let m = RMat2::new(a, b, c, (1.0 + b * c) / a);
        let theta = 2.0 * PI * uniform01(&mut rng);
        if act_on_circle(&m, theta).ok() != act_on_circle(&(-m), theta).ok() {
            sign_bad += 1;
        }
    }
    if sign_bad > 0 {
        failed.push(format!("sign invariance {sign_bad}"));
    }

    match birkhoff_worst_ratio(seed) {
        Ok(k) if k <= 3.0 => {}
        Ok(k) => failed.push(format!("Birkhoff K {k:.2}")),
        Err(e) => failed.push(format!("Birkhoff: {e}")),
    }

    let mut herglotz_bad = 0;
    for i in 0..200u64 {
        let z = match ComplexEnergy::new(
            60.0 * uniform01(&mut rng) - 5.0,
            0.05 + 2.0 * uniform01(&mut rng),
        ) {
            Ok(z) => z,
            Err(_) => continue,
        };
        let opts = WeylOptions::for_energy(z, 1e-10);
        let reach = (8.0 * opts.l0).ceil() as i64;
        let ok = sample_stream(&model, seed, i + 1, -reach, reach).and_then(|r| {
            let mp = m_function_adaptive(z, &r, WeylSide::Plus, 0.5, &opts)?.value;
            let mm = m_function_adaptive(z, &r, WeylSide::Minus, 0.5, &opts)?.value;
            Ok(mp.im > 0.0 && mm.im > 0.0)
        });
        if ok != Ok(true) {
            herglotz_bad += 1;
        }
    }
    if herglotz_bad > 0 {
        failed.push(format!("Herglotz {herglotz_bad}"));
    }

    let mut edge_err: f64 = 0.0;
    for v in [0.5, 1.0, 2.0] {
        match band_edges(v, 3) {
            Ok(bands) => {
                for b in bands {
                    edge_err = edge_err.max((b.e_high - (b.l as f64 * PI).powi(2)).abs());
                }
            }
            Err(e) => failed.push(format!("band edges: {e}")),
        }
    }
    if edge_err > 1e-10 {
        failed.push(format!("band edge {edge_err:.1e}"));
    }

    let measured = format!(
        "det {det_err:.1e}, concatenation {cat_err:.1e}, band edge {edge_err:.1e}{}",
        if failed.is_empty() {
            String::new()
        } else {
            format!("; failed: {}", failed.join(", "))
        }
    );
    Outcome::new("AC-9", AC9_TARGET, failed.is_empty(), measured)
}

/// Largest `|I_N(f)| / (√ε + 1/(N√ε))` over a grid of `ε`, `N` and
/// `f ∈ {sin 2θ, cos 2θ, sin 4θ, cos 4θ}`.
fn birkhoff_worst_ratio(seed: u64) -> Result<f64, kplab_core::Error> {
    let (model, ce) = uniform();
    let real = sample_stream(&model, seed, 7, 1, 400_000)?;
    let fs: [fn(f64) -> f64; 4] = [
        |t| (2.0 * t).sin(),
        |t| (2.0 * t).cos(),
        |t| (4.0 * t).sin(),
        |t| (4.0 * t).cos(),
    ];
    let mut worst: f64 = 0.0;
    for eps in [1e-2, 1e-3, 1e-4] {
        for n in [20_000usize, 400_000] {
            let tr = trajectory(&ce, Regime::Elliptic, eps, &real, 1, n, 0.0)?;
            let env = eps.sqrt() + 1.0 / (n as f64 * eps.sqrt());
            for f in fs {
                worst = worst.max(birkhoff_sum(f, &tr)?.abs() / env);
            }
        }
    }
    Ok(worst)
}

pub const AC10_TARGET: &str = "v ≡ 0, q = 2, T = 10..10³: exponent 2.0 ± 0.1";

pub fn ac10<R: Runner>(runner: &R) -> Outcome {
    let params = MomentParams {
        energies: 16,
        samples: 1,
        ..MomentParams::new(2.0, Schedule::ballistic())
    };
    let grid = log_grid(10.0, 1e3, 7);
    match moment_curve(runner, &grid, 1, None, &params).and_then(|c| growth_exponent(&c)) {
        Ok(fit) => Outcome::new(
            "AC-10",
            AC10_TARGET,
            (fit.exponent - 2.0).abs() <= 0.1,
            format!("exponent {:.4} ± {:.4}", fit.exponent, fit.exponent_se),
        ),
        Err(e) => Outcome::error("AC-10", AC10_TARGET, e),
    }
}

/// Runs the criteria of a suite in order, reporting each as it finishes.
pub fn run_suite<R: Runner>(
    runner: &R,
    suite: Suite,
    seed: u64,
    mut report: impl FnMut(&Outcome),
) -> Vec<Outcome> {
    type Check<'a, R> = Box<dyn Fn(&R, u64) -> Outcome + 'a>;
    let mut checks: Vec<Check<R>> = Vec::new();
    let all = suite == Suite::All;
    if all || suite == Suite::CriticalScaling {
        checks.push(Box::new(|r, s| ac1(r, s)));
        checks.push(Box::new(|r, s| ac2(r, s)));
        checks.push(Box::new(|r, s| ac3(r, s)));
        checks.push(Box::new(|r, s| ac3_large_box(r, s)));
    }
    if all || suite == Suite::Spectral {
        checks.push(Box::new(|r, s| ac4(r, s)));
        checks.push(Box::new(|_, s| ac5(s)));
    }
    if all || suite == Suite::Transport {
        checks.push(Box::new(|r, s| ac6(r, s)));
        checks.push(Box::new(|r, s| ac7(r, s)));
        checks.push(Box::new(|r, s| ac8(r, s)));
    }
    if all || suite == Suite::Invariants {
        checks.push(Box::new(|_, s| ac9(s)));
    }
    if all || suite == Suite::Transport {
        checks.push(Box::new(|r, _| ac10(r)));
    }
    checks
        .iter()
        .map(|c| {
            let o = c(runner, seed);
            report(&o);
            o
        })
        .collect()
}
