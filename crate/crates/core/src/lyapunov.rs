//! Monte Carlo Lyapunov exponents and rotation numbers, and ε-scaling fits.

use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::ensemble::{DisorderModel, SiteStream};
use crate::error::{Error, Result};
use crate::exec::Runner;
use crate::linalg::{Scalar, Vec2};
use crate::prufer::{phase_increment_to, reduce_phase, ConjugatedCocycle, CriticalEnergy, Regime};
use crate::stats::{weighted_linear_fit, Welford};
use crate::transfer::{ComplexEnergy, Coupling, Energy, SiteKernel};

/// Side of `E_l` probed by a scan.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(
    feature = "serde",
    derive(serde::Serialize, serde::Deserialize),
    serde(rename_all = "snake_case")
)]
pub enum Side {
    Below,
    Above,
}

impl Side {
    pub fn regime(self) -> Regime {
        match self {
            Side::Below => Regime::Elliptic,
            Side::Above => Regime::Hyperbolic,
        }
    }

    /// Theoretical `(exponent, coefficient)` of `γ^{E_l ∓ ε}`.
    pub fn theory(self, ce: &CriticalEnergy) -> (f64, f64) {
        match self {
            Side::Below => (1.0, ce.d_minus),
            Side::Above => (0.5, ce.d_plus),
        }
    }
}

/// Monte Carlo size of one estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Budget {
    /// Accumulated steps per realization (after burn-in).
    pub n: usize,
    pub samples: usize,
    pub seed: u64,
}

/// Smallest admissible chain length for a Lyapunov estimate.
pub const MIN_STEPS: usize = 1_000;
/// Required `N√ε` near a critical energy.
pub const MIN_MIXING: f64 = 50.0;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LyapunovEstimate {
    pub value: f64,
    /// Across realizations.
    pub std_error: f64,
    pub n: usize,
    pub samples: usize,
    pub z: ComplexEnergy,
}

impl LyapunovEstimate {
    fn from_welford(w: &Welford, n: usize, z: ComplexEnergy) -> Self {
        Self {
            value: w.mean,
            std_error: w.std_error(),
            n,
            samples: w.count as usize,
            z,
        }
    }
}

fn check_budget(b: &Budget) -> Result<()> {
    if b.n < MIN_STEPS {
        return Err(Error::Budget(alloc::format!(
            "N = {} below the minimum {MIN_STEPS}",
            b.n
        )));
    }
    if b.samples < 2 {
        return Err(Error::Budget(
            "at least two realizations are needed for an error bar".into(),
        ));
    }
    Ok(())
}

/// `(1/N) log ‖T(B + N, B) e‖` averaged over realizations, with `e = e_{θ₀}`
/// propagated through `B = burn_in` discarded sites first. No conjugation.
pub fn estimate_lyapunov<R: Runner>(
    runner: &R,
    z: ComplexEnergy,
    model: &DisorderModel,
    budget: &Budget,
    theta0: f64,
    burn_in: usize,
) -> Result<LyapunovEstimate> {
    check_budget(budget)?;
    model.validate()?;
    let per = |r: u64| -> f64 {
        if z.im == 0.0 {
            realization_log_growth(z.re, model, budget, r, theta0, burn_in)
        } else {
            realization_log_growth(z, model, budget, r, theta0, burn_in)
        }
    };
    let w: Welford = runner.run(budget.samples, per).into_iter().collect();
    Ok(LyapunovEstimate::from_welford(&w, budget.n, z))
}

fn realization_log_growth<En: Energy>(
    e: En,
    model: &DisorderModel,
    budget: &Budget,
    stream: u64,
    theta0: f64,
    burn_in: usize,
) -> f64 {
    let kernel = SiteKernel::<En::S>::new(e, Coupling::Delta);
    let mut draws = SiteStream::new(model, budget.seed, stream, 1);
    let (s, c) = libm::sincos(theta0);
    let mut x = Vec2::new(En::S::from_real(c), En::S::from_real(s));
    let mut log = 0.0;
    for i in 0..burn_in + budget.n {
        let v = draws.next().unwrap_or_default();
        x = kernel.at(v).apply(x);
        let nrm = x.norm();
        x = x.scale(1.0 / nrm);
        if i >= burn_in {
            log += libm::log(nrm);
        }
    }
    log / budget.n as f64
}

/// Per-point result of the conjugated Prüfer chain near `E_l`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CriticalEstimate {
    pub epsilon: f64,
    pub regime: Regime,
    /// Conditional estimator `(1/N) Σ 𝐄_v γ(θ_{n−1}, v)`.
    pub gamma: LyapunovEstimate,
    /// Plain estimator `(1/N) Σ γ_n` from the same chains.
    pub gamma_direct: LyapunovEstimate,
    /// `(1/πN) Σ (θ_n − θ_{n−1})`.
    pub rotation: f64,
    pub rotation_std_error: f64,
    pub burn_in: usize,
}

/// Default chain length near `E_l`: `max(10⁶, ⌈100/√ε⌉)`.
pub fn default_steps(epsilon: f64) -> usize {
    (libm::ceil(100.0 / libm::sqrt(epsilon)) as usize).max(1_000_000)
}

/// Default burn-in `⌈10/√ε⌉`.
pub fn default_burn_in(epsilon: f64) -> usize {
    libm::ceil(10.0 / libm::sqrt(epsilon)) as usize
}

/// Runs the conjugated chain from `θ₀ = 0` at `E_l ∓ ε`.
///
/// Both γ estimators and the rotation number share one pass. The conditional
/// estimator replaces each `γ_n` by its expectation over `v_n` given
/// `θ_{n−1}`, which removes the `O(√ε)` martingale noise from the mean.
pub fn critical_chain<R: Runner>(
    runner: &R,
    ce: &CriticalEnergy,
    regime: Regime,
    epsilon: f64,
    model: &DisorderModel,
    budget: &Budget,
) -> Result<CriticalEstimate> {
    check_budget(budget)?;
    let cc = ConjugatedCocycle::new(ce, regime, epsilon)?;
    if (budget.n as f64) * libm::sqrt(epsilon) < MIN_MIXING {
        return Err(Error::Budget(alloc::format!(
            "N√ε = {:.1} below {MIN_MIXING} at ε = {epsilon}",
            budget.n as f64 * libm::sqrt(epsilon)
        )));
    }
    let burn_in = default_burn_in(epsilon);
    let rule = model.expectation_rule();
    let per = |r: u64| chain_sums(&cc, &rule, model, budget, r, burn_in);
    let sums = runner.run(budget.samples, per);
    let wc: Welford = sums.iter().map(|s| s.0).collect();
    let wd: Welford = sums.iter().map(|s| s.1).collect();
    let wr: Welford = sums.iter().map(|s| s.2).collect();
    let z = ComplexEnergy::real(ce.energy(regime, epsilon));
    Ok(CriticalEstimate {
        epsilon,
        regime,
        gamma: LyapunovEstimate::from_welford(&wc, budget.n, z),
        gamma_direct: LyapunovEstimate::from_welford(&wd, budget.n, z),
        rotation: wr.mean,
        rotation_std_error: wr.std_error(),
        burn_in,
    })
}

fn chain_sums(
    cc: &ConjugatedCocycle,
    rule: &[(f64, f64)],
    model: &DisorderModel,
    budget: &Budget,
    stream: u64,
    burn_in: usize,
) -> (f64, f64, f64) {
    let mut draws = SiteStream::new(model, budget.seed, stream, 1);
    let (u, w, b) = (cc.u, cc.w, cc.free);
    let u2 = u.norm_sqr();
    let mut theta = 0.0;
    let (mut gc, mut gd, mut rot) = (0.0, 0.0, 0.0);
    for i in 0..burn_in + budget.n {
        let v = draws.next().unwrap_or_default();
        let (s, c) = libm::sincos(theta);
        let p = b.apply(Vec2::new(c, s));
        let sc = w.x * p.x + w.y * p.y;
        let y = Vec2::new(p.x + v * sc * u.x, p.y + v * sc * u.y);
        let d = phase_increment_to((c, s), y);
        if i >= burn_in {
            let q0 = p.norm_sqr();
            let q1 = 2.0 * sc * (p.x * u.x + p.y * u.y) / q0;
            let q2 = sc * sc * u2 / q0;
            let mut acc = 0.0;
            for (vi, wi) in rule {
                acc += wi * libm::log1p(vi * (q1 + vi * q2));
            }
            gc += 0.5 * (libm::log(q0) + acc);
            gd += 0.5 * libm::log(y.norm_sqr());
            rot += d;
        }
        theta = reduce_phase(theta + d);
    }
    let n = budget.n as f64;
    (gc / n, gd / n, rot / (PI * n))
}

/// Rotation number `R^ε` below `E_l`, with its standard error.
pub fn rotation_number<R: Runner>(
    runner: &R,
    epsilon: f64,
    model: &DisorderModel,
    budget: &Budget,
    ce: &CriticalEnergy,
) -> Result<(f64, f64)> {
    let est = critical_chain(runner, ce, Regime::Elliptic, epsilon, model, budget)?;
    Ok((est.rotation, est.rotation_std_error))
}

/// `𝒩^{E_l − ε} = l + R^ε`, with the standard error of `R^ε`.
pub fn idos_from_rotation<R: Runner>(
    runner: &R,
    epsilon: f64,
    model: &DisorderModel,
    budget: &Budget,
    ce: &CriticalEnergy,
) -> Result<(f64, f64)> {
    let (r, se) = rotation_number(runner, epsilon, model, budget, ce)?;
    Ok((ce.l as f64 + r, se))
}

/// A power law `y ≈ coefficient · ε^exponent` fitted in log–log coordinates.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ScalingFit {
    pub exponent: f64,
    pub exponent_se: f64,
    /// `exp(intercept)` of the free fit.
    pub coefficient: f64,
    /// Weighted mean of `y / ε^{p}` with `p` fixed at the theoretical exponent.
    pub coefficient_at_theory: f64,
    pub coefficient_at_theory_se: f64,
    /// Largest `|y − fit| / fit` over the grid.
    pub residual: f64,
    pub epsilon_grid: Vec<f64>,
    pub values: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub theory_exponent: f64,
    pub theory_coefficient: f64,
}

impl ScalingFit {
    /// Fits `values ± std_errors` against `epsilon_grid`.
    pub fn from_points(
        epsilon_grid: Vec<f64>,
        values: Vec<f64>,
        std_errors: Vec<f64>,
        theory: (f64, f64),
    ) -> Result<Self> {
        let x: Vec<f64> = epsilon_grid.iter().map(|e| libm::log(*e)).collect();
        let y: Vec<f64> = values.iter().map(|v| libm::log(*v)).collect();
        // Zero error bars (e.g. integer counts that agree across realizations)
        // carry no weighting information, so such grids are fitted unweighted.
        let weighted = std_errors.iter().all(|s| *s > 0.0);
        let sigma: Vec<f64> = values.iter().zip(&std_errors).map(|(v, s)| s / v).collect();
        let fit = weighted_linear_fit(&x, &y, weighted.then_some(&sigma[..]))?;
        let coefficient = libm::exp(fit.intercept);
        let residual = epsilon_grid
            .iter()
            .zip(&values)
            .map(|(e, v)| {
                let f = coefficient * libm::pow(*e, fit.slope);
                ((v - f) / f).abs()
            })
            .fold(0.0, f64::max);
        // Inverse-variance mean of y/ε^p.
        let (mut num, mut den, mut var) = (0.0, 0.0, 0.0);
        for ((e, v), s) in epsilon_grid.iter().zip(&values).zip(&std_errors) {
            let scale = libm::pow(*e, theory.0);
            let (c, cs) = (v / scale, s / scale);
            let w = if weighted { 1.0 / (cs * cs) } else { 1.0 };
            num += w * c;
            den += w;
            var += w * w * cs * cs;
        }
        Ok(Self {
            exponent: fit.slope,
            exponent_se: fit.slope_se,
            coefficient,
            coefficient_at_theory: num / den,
            coefficient_at_theory_se: libm::sqrt(var) / den,
            residual,
            epsilon_grid,
            values,
            std_errors,
            theory_exponent: theory.0,
            theory_coefficient: theory.1,
        })
    }

    pub fn exponent_error(&self) -> f64 {
        self.exponent - self.theory_exponent
    }

    /// `coefficient / theory − 1`.
    pub fn coefficient_rel_error(&self) -> f64 {
        self.coefficient / self.theory_coefficient - 1.0
    }

    pub fn coefficient_at_theory_rel_error(&self) -> f64 {
        self.coefficient_at_theory / self.theory_coefficient - 1.0
    }
}

/// Minimum span of an ε-grid, in decades.
pub const MIN_DECADES: f64 = 1.0;

pub fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.len() < 3 || grid.iter().any(|e| !(*e > 0.0) || !e.is_finite()) {
        return Err(Error::InvalidParameter(
            "ε-grid needs at least 3 positive points".into(),
        ));
    }
    let lo = grid.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = grid.iter().cloned().fold(0.0, f64::max);
    let decades = libm::log10(hi / lo);
    if decades + 1e-9 < MIN_DECADES {
        return Err(Error::GridTooNarrow {
            decades,
            required: MIN_DECADES,
        });
    }
    Ok(())
}

/// Per-point steps for a scaling scan; `None` selects [`default_steps`].
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ScanBudget {
    pub n: Option<usize>,
    pub samples: usize,
    pub seed: u64,
}

/// Scans the grid on one side of `E_l` and fits the γ power law.
///
/// The same disorder streams are reused at every ε, which correlates the
/// points and sharpens the fitted exponent.
pub fn fit_scaling<R: Runner>(
    runner: &R,
    side: Side,
    ce: &CriticalEnergy,
    model: &DisorderModel,
    epsilon_grid: &[f64],
    budget: &ScanBudget,
) -> Result<(ScalingFit, Vec<CriticalEstimate>)> {
    check_grid(epsilon_grid)?;
    let mut points = Vec::with_capacity(epsilon_grid.len());
    for &eps in epsilon_grid {
        let b = Budget {
            n: budget.n.unwrap_or_else(|| default_steps(eps)),
            samples: budget.samples,
            seed: budget.seed,
        };
        let est = critical_chain(runner, ce, side.regime(), eps, model, &b)?;
        let g = est.gamma;
        if !(g.value > 2.0 * g.std_error) {
            let needed = libm::ceil(
                b.samples as f64 * libm::pow(3.0 * g.std_error / g.value.abs().max(1e-300), 2.0),
            );
            return Err(Error::StatisticalNoise {
                epsilon: eps,
                value: g.value,
                stderr: g.std_error,
                required_samples: needed.min(usize::MAX as f64) as usize,
            });
        }
        points.push(est);
    }
    let fit = ScalingFit::from_points(
        points.iter().map(|p| p.epsilon).collect(),
        points.iter().map(|p| p.gamma.value).collect(),
        points.iter().map(|p| p.gamma.std_error).collect(),
        side.theory(ce),
    )?;
    Ok((fit, points))
}

/// Log-spaced grid of `count` points from `lo` to `hi`.
pub fn log_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return alloc::vec![lo];
    }
    let (a, b) = (libm::log(lo), libm::log(hi));
    // Endpoints are returned exactly so range checks at `hi` hold.
    (0..count)
        .map(|i| match i {
            0 => lo,
            i if i == count - 1 => hi,
            i => libm::exp(a + (b - a) * i as f64 / (count - 1) as f64),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exec::Sequential;

    fn ce1() -> CriticalEnergy {
        CriticalEnergy::new(1, &DisorderModel::default_uniform()).unwrap()
    }

    #[test]
    fn gamma_vanishes_at_critical_energy() {
        let model = DisorderModel::default_uniform();
        let b = Budget {
            n: 20_000,
            samples: 8,
            seed: 1,
        };
        let z = ComplexEnergy::real(PI * PI);
        for theta0 in [0.0, PI / 2.0] {
            let est = estimate_lyapunov(&Sequential, z, &model, &b, theta0, 0).unwrap();
            // Jordan-block products grow at most polynomially.
            let slack = 2.0 * libm::log(b.n as f64) / b.n as f64;
            assert!(
                est.value.abs() <= (3.0 * est.std_error).max(slack),
                "{est:?}"
            );
        }
    }

    #[test]
    fn gamma_is_nonnegative_and_vanishes_toward_critical_energy() {
        let model = DisorderModel::default_uniform();
        let ce = ce1();
        let b = Budget {
            n: 200_000,
            samples: 8,
            seed: 3,
        };
        let mut prev = f64::INFINITY;
        for eps in [1e-1, 3e-2, 1e-2] {
            let est =
                critical_chain(&Sequential, &ce, Regime::Hyperbolic, eps, &model, &b).unwrap();
            assert!(est.gamma.value + 3.0 * est.gamma.std_error >= 0.0);
            assert!(est.gamma.value < prev);
            prev = est.gamma.value;
        }
        let mut prev = f64::INFINITY;
        for eps in [1e-1, 3e-2, 1e-2] {
            let est = critical_chain(&Sequential, &ce, Regime::Elliptic, eps, &model, &b).unwrap();
            assert!(est.gamma.value + 3.0 * est.gamma.std_error >= 0.0);
            assert!(est.gamma.value < prev, "{eps}: {:?}", est.gamma);
            prev = est.gamma.value;
        }
    }

    #[test]
    fn conjugation_and_initial_vector_invariance() {
        // Above E_l the signal is large enough for a short test.
        let model = DisorderModel::default_uniform();
        let ce = ce1();
        let eps = 1e-2;
        let b = Budget {
            n: 100_000,
            samples: 16,
            seed: 5,
        };
        let conj = critical_chain(&Sequential, &ce, Regime::Hyperbolic, eps, &model, &b).unwrap();
        let z = ComplexEnergy::real(ce.e_l + eps);
        let burn = default_burn_in(eps);
        for theta0 in [0.0, PI / 2.0] {
            let plain = estimate_lyapunov(&Sequential, z, &model, &b, theta0, burn).unwrap();
            let se = libm::sqrt(plain.std_error.powi(2) + conj.gamma.std_error.powi(2));
            assert!(
                (plain.value - conj.gamma.value).abs() < 3.0 * se + 2e-5,
                "{plain:?} vs {:?}",
                conj.gamma
            );
        }
        assert!(
            (conj.gamma.value - conj.gamma_direct.value).abs()
                < 3.0 * conj.gamma_direct.std_error + 1e-6
        );
    }

    #[test]
    fn rotation_number_near_band_edge() {
        let model = DisorderModel::default_uniform();
        let ce = ce1();
        let eps = 1e-4;
        let b = Budget {
            n: 200_000,
            samples: 8,
            seed: 9,
        };
        let (r, se) = rotation_number(&Sequential, eps, &model, &b, &ce).unwrap();
        let want = -ce.eta / PI * libm::sqrt(eps);
        assert!((want + 7.164e-4).abs() < 1e-6);
        // O(ε) correction plus statistics.
        assert!((r - want).abs() < 3.0 * se + 2.0 * eps, "{r} vs {want}");
        let (idos, _) = idos_from_rotation(&Sequential, eps, &model, &b, &ce).unwrap();
        assert!((idos - 1.0 - r).abs() < 1e-15);
    }

    #[test]
    fn scaling_fit_recovers_exact_power_law() {
        let grid = log_grid(1e-3, 1e-2, 5);
        let vals: Vec<f64> = grid.iter().map(|e| 0.3 * e.powf(0.75)).collect();
        let se = vec![1e-9; 5];
        let fit = ScalingFit::from_points(grid, vals, se, (0.75, 0.3)).unwrap();
        assert!(fit.exponent_error().abs() < 1e-10);
        assert!(fit.coefficient_rel_error().abs() < 1e-9);
        assert!(fit.coefficient_at_theory_rel_error().abs() < 1e-12);
        assert!(fit.residual < 1e-9);
    }

    #[test]
    fn grid_checks() {
        assert!(matches!(
            check_grid(&[1e-3, 2e-3, 5e-3]),
            Err(Error::GridTooNarrow { .. })
        ));
        assert!(check_grid(&log_grid(1e-3, 1e-2, 8)).is_ok());
        let g = log_grid(1e-4, 1e-2, 3);
        assert!((g[1] - 1e-3).abs() < 1e-18);
    }

    #[test]
    fn budget_gates() {
        let model = DisorderModel::default_uniform();
        let ce = ce1();
        let small = Budget {
            n: 100,
            samples: 4,
            seed: 0,
        };
        assert!(matches!(
            critical_chain(&Sequential, &ce, Regime::Elliptic, 1e-3, &model, &small),
            Err(Error::Budget(_))
        ));
        let unmixed = Budget {
            n: 1000,
            samples: 4,
            seed: 0,
        };
        assert!(matches!(
            critical_chain(&Sequential, &ce, Regime::Elliptic, 1e-4, &model, &unmixed),
            Err(Error::Budget(_))
        ));
        assert!(matches!(
            critical_chain(&Sequential, &ce, Regime::Elliptic, 0.5, &model, &unmixed),
            Err(Error::Regime { .. })
        ));
        let zero = DisorderModel::Uniform { lo: -1.0, hi: 1.0 };
        assert_eq!(CriticalEnergy::new(1, &zero), Err(Error::ZeroMean));
    }
}
