//! Modified Prüfer phases near a critical energy `E_l = (πl)²`.
//!
//! The cocycle is conjugated by `Mᵋ = M₂M₁`, after which a site matrix is
//! close to a rotation by `−η√ε` (below `E_l`) or to `diag(1 − η√ε, 1 + η√ε)`
//! (above `E_l`). Phases live on the projective line: `M` and `−M` act the
//! same way, which is how odd `l` (site matrices `≈ −J`) is handled.

use alloc::vec::Vec;
use core::f64::consts::{FRAC_PI_2, PI, TAU};

use crate::ensemble::{Couplings, DisorderModel, Moments};
use crate::error::{Error, Result};
use crate::linalg::{RMat2, Vec2};
use crate::transfer::{free_propagator_real, Coupling, ScaledProduct};

/// Side of the critical energy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(
    feature = "serde",
    derive(serde::Serialize, serde::Deserialize),
    serde(rename_all = "snake_case")
)]
pub enum Regime {
    /// `E = E_l − ε`, inside the band.
    Elliptic,
    /// `E = E_l + ε`, inside the gap.
    Hyperbolic,
}

impl Regime {
    /// Signed offset of the energy from `E_l`.
    pub fn offset(self, epsilon: f64) -> f64 {
        match self {
            Regime::Elliptic => -epsilon,
            Regime::Hyperbolic => epsilon,
        }
    }
}

/// Critical energy `E_l` with the constants of the scaling laws.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CriticalEnergy {
    pub l: u32,
    pub e_l: f64,
    /// `v̄`.
    pub mean: f64,
    /// `𝐄(ṽ²)`.
    pub variance: f64,
    /// `η = (v̄ / 2E_l)^{1/2}`.
    pub eta: f64,
    /// `b = (v̄ E_l / 2)^{1/4}`.
    pub b: f64,
    /// `D₋ = 𝐄(ṽ²) / (16 v̄ E_l)`.
    pub d_minus: f64,
    /// `D₊ = η`.
    pub d_plus: f64,
}

impl CriticalEnergy {
    pub fn new(l: u32, model: &DisorderModel) -> Result<Self> {
        Self::from_moments(l, &model.critical_moments()?)
    }

    pub fn from_moments(l: u32, m: &Moments) -> Result<Self> {
        if l == 0 {
            return Err(Error::InvalidParameter("l must be positive".into()));
        }
        if m.mean == 0.0 {
            return Err(Error::ZeroMean);
        }
        if !(m.mean > 0.0) {
            return Err(Error::NonPositiveMean(m.mean));
        }
        if !(m.variance > 0.0) {
            return Err(Error::Degenerate);
        }
        let e_l = libm::pow(PI * l as f64, 2.0);
        let eta = libm::sqrt(m.mean / (2.0 * e_l));
        Ok(Self {
            l,
            e_l,
            mean: m.mean,
            variance: m.variance,
            eta,
            b: libm::pow(m.mean * e_l / 2.0, 0.25),
            d_minus: m.variance / (16.0 * m.mean * e_l),
            d_plus: eta,
        })
    }

    /// `1 / (2√(2 v̄ E_l))`, the weight of `ṽ` in the normal form.
    #[inline]
    pub fn kappa(&self) -> f64 {
        0.5 / libm::sqrt(2.0 * self.mean * self.e_l)
    }

    /// The energy `E_l ∓ ε`.
    pub fn energy(&self, regime: Regime, epsilon: f64) -> f64 {
        self.e_l + regime.offset(epsilon)
    }

    /// Largest ε admitted by the expansion entry points, `0.1·min(1, 4πl/v̄)`.
    pub fn max_epsilon(&self) -> f64 {
        0.1 * (4.0 * PI * self.l as f64 / self.mean).min(1.0)
    }

    pub fn check_epsilon(&self, epsilon: f64) -> Result<()> {
        if !(epsilon > 0.0) || !epsilon.is_finite() {
            return Err(Error::InvalidParameter(alloc::format!(
                "epsilon must be positive, got {epsilon}"
            )));
        }
        let max = self.max_epsilon();
        if epsilon > max {
            return Err(Error::Regime { epsilon, max });
        }
        Ok(())
    }
}

/// Wraps an angle into `(−π/2, π/2]`.
#[inline]
pub fn wrap_half(mut d: f64) -> f64 {
    while d > FRAC_PI_2 {
        d -= PI;
    }
    while d <= -FRAC_PI_2 {
        d += PI;
    }
    d
}

/// Reduces an angle into `[0, 2π)`.
#[inline]
pub fn reduce_phase(theta: f64) -> f64 {
    let r = libm::fmod(theta, TAU);
    let t = if r < 0.0 { r + TAU } else { r };
    if t >= TAU {
        0.0
    } else {
        t
    }
}

/// Signed angle from `e_θ` to `y`, on the branch nearest to zero.
///
/// `e^{2iS} = ⟨u|y⟩/⟨ū|y⟩` fixes `S` modulo π only, so the image phase is the
/// representative closest to `θ`. Steps of the modified cocycle are `O(√ε)`,
/// far below the π/2 ambiguity.
#[inline]
pub fn phase_increment_to(theta_cs: (f64, f64), y: Vec2<f64>) -> f64 {
    let (c, s) = theta_cs;
    let mut cross = c * y.y - s * y.x;
    let mut dot = c * y.x + s * y.y;
    // Fold y into the half-plane of e_θ so that y and −y give identical bits.
    if dot < 0.0 {
        cross = -cross;
        dot = -dot;
    }
    wrap_half(libm::atan2(cross, dot))
}

/// Projective action `e_{S_M(θ)} ∝ M e_θ`, returned in `[0, 2π)`.
pub fn act_on_circle(m: &RMat2, theta: f64) -> Result<f64> {
    Ok(reduce_phase(theta + circle_increment(m, theta)?))
}

/// `S_M(θ) − θ` on the nearest branch, in `(−π/2, π/2]`.
pub fn circle_increment(m: &RMat2, theta: f64) -> Result<f64> {
    if m.det() == 0.0 || !m.det().is_finite() {
        return Err(Error::Singular);
    }
    let (s, c) = libm::sincos(theta);
    let y = m.apply(Vec2::new(c, s));
    Ok(phase_increment_to((c, s), y))
}

/// `M₁ = diag(ε^{1/2}, 1)`.
pub fn m1(epsilon: f64) -> RMat2 {
    RMat2::new(libm::sqrt(epsilon), 0.0, 0.0, 1.0)
}

/// `M₂ = [[1/2b, −b], [1/2b, b]]`, determinant 1.
pub fn m2(ce: &CriticalEnergy) -> RMat2 {
    let b = ce.b;
    RMat2::new(0.5 / b, -b, 0.5 / b, b)
}

/// The conjugation `Mᵋ = M₂M₁` with its inverse.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BasisChange {
    pub m: RMat2,
    pub inverse: RMat2,
    /// `max(‖M₂‖, ‖M₂⁻¹‖)`; then `‖Mᵋ‖ ≤ C₃` and `‖(Mᵋ)⁻¹‖ ≤ C₃ ε^{−1/2}`.
    pub c3: f64,
}

pub fn basis_change(regime: Regime, epsilon: f64, ce: &CriticalEnergy) -> Result<BasisChange> {
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(Error::InvalidParameter(alloc::format!(
            "epsilon must be positive, got {epsilon}"
        )));
    }
    if regime == Regime::Elliptic && epsilon * ce.mean > 4.0 * PI * ce.l as f64 {
        return Err(Error::Regime {
            epsilon,
            max: 4.0 * PI * ce.l as f64 / ce.mean,
        });
    }
    let m2 = m2(ce);
    let m = m2 * m1(epsilon);
    let inverse = RMat2::new(1.0 / libm::sqrt(epsilon), 0.0, 0.0, 1.0) * m2.adjugate();
    Ok(BasisChange {
        m,
        inverse,
        c3: m2.norm().max(m2.adjugate().norm()),
    })
}

/// Conjugated site map `A(v) = Mᵋ T^{E_l ∓ ε}(v) (Mᵋ)⁻¹`, split as
/// `A(v) e = p + v (w·p) u` with `p = B e` for the conjugated free part `B`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConjugatedCocycle {
    pub ce: CriticalEnergy,
    pub regime: Regime,
    pub epsilon: f64,
    pub basis: BasisChange,
    /// `Mᵋ P(1) (Mᵋ)⁻¹`.
    pub free: RMat2,
    /// `Mᵋ e₁`.
    pub u: Vec2<f64>,
    /// `e₂ᵀ (Mᵋ)⁻¹`.
    pub w: Vec2<f64>,
}

impl ConjugatedCocycle {
    pub fn new(ce: &CriticalEnergy, regime: Regime, epsilon: f64) -> Result<Self> {
        ce.check_epsilon(epsilon)?;
        Self::unchecked(ce, regime, epsilon)
    }

    /// As [`Self::new`] without the expansion-regime cap on ε.
    pub fn unchecked(ce: &CriticalEnergy, regime: Regime, epsilon: f64) -> Result<Self> {
        let basis = basis_change(regime, epsilon, ce)?;
        let p = free_propagator_real(ce.energy(regime, epsilon), 1.0);
        let free = basis.m * p * basis.inverse;
        Ok(Self {
            ce: *ce,
            regime,
            epsilon,
            basis,
            free,
            u: Vec2::new(basis.m.a, basis.m.c),
            w: Vec2::new(basis.inverse.c, basis.inverse.d),
        })
    }

    /// Full conjugated site matrix for coupling `v`.
    pub fn matrix(&self, v: f64) -> RMat2 {
        let jump = RMat2::new(
            1.0 + v * self.u.x * self.w.x,
            v * self.u.x * self.w.y,
            v * self.u.y * self.w.x,
            1.0 + v * self.u.y * self.w.y,
        );
        jump * self.free
    }

    /// Image of `e_θ`, returned with `(cos θ, sin θ)`.
    #[inline]
    pub fn image(&self, theta: f64, v: f64) -> ((f64, f64), Vec2<f64>) {
        let (s, c) = libm::sincos(theta);
        let p = self.free.apply(Vec2::new(c, s));
        let sc = self.w.x * p.x + self.w.y * p.y;
        (
            (c, s),
            Vec2::new(p.x + v * sc * self.u.x, p.y + v * sc * self.u.y),
        )
    }

    /// One exact step: `(θ_n unreduced increment, γ_n)`.
    #[inline]
    pub fn step(&self, theta: f64, v: f64) -> (f64, f64) {
        let (cs, y) = self.image(theta, v);
        (phase_increment_to(cs, y), 0.5 * libm::log(y.norm_sqr()))
    }

    /// The coefficients of `‖A(v) e_θ‖² = q₀ + q₁ v + q₂ v²`.
    #[inline]
    pub fn norm_quadratic(&self, theta: f64) -> (f64, f64, f64) {
        let (s, c) = libm::sincos(theta);
        let p = self.free.apply(Vec2::new(c, s));
        let sc = self.w.x * p.x + self.w.y * p.y;
        let pu = p.x * self.u.x + p.y * self.u.y;
        (p.norm_sqr(), 2.0 * sc * pu, sc * sc * self.u.norm_sqr())
    }
}

fn cocycle_for(regime: Regime, epsilon: f64, ce: &CriticalEnergy) -> Result<ConjugatedCocycle> {
    ConjugatedCocycle::new(ce, regime, epsilon)
}

/// Exact phase step `S_{ε,n}(θ)` for the centered coupling `ṽ`.
pub fn phase_step(
    regime: Regime,
    theta: f64,
    v_tilde: f64,
    epsilon: f64,
    ce: &CriticalEnergy,
) -> Result<f64> {
    let cc = cocycle_for(regime, epsilon, ce)?;
    let (d, _) = cc.step(theta, ce.mean + v_tilde);
    Ok(reduce_phase(theta + d))
}

/// Exact log-norm increment `γ_n = log ‖A(v) e_θ‖` for the coupling `v`.
pub fn gamma_increment(
    regime: Regime,
    theta: f64,
    v: f64,
    epsilon: f64,
    ce: &CriticalEnergy,
) -> Result<f64> {
    let cc = cocycle_for(regime, epsilon, ce)?;
    Ok(cc.step(theta, v).1)
}

/// Truncated expansions of the conjugated dynamics, for testing the exact maps.
pub mod expansions {
    use super::*;

    /// Leading-order phase step.
    pub fn phase_step_truncated(
        regime: Regime,
        theta: f64,
        v_tilde: f64,
        epsilon: f64,
        ce: &CriticalEnergy,
    ) -> f64 {
        let se = libm::sqrt(epsilon);
        let noise = (libm::sin(2.0 * theta) - 1.0) * v_tilde * ce.kappa() * se;
        match regime {
            Regime::Elliptic => theta - ce.eta * se + noise,
            Regime::Hyperbolic => theta + se * ce.eta * libm::sin(2.0 * theta) + noise,
        }
    }

    /// Log-norm increment through order ε (elliptic) or order √ε (hyperbolic).
    pub fn gamma_increment_truncated(
        regime: Regime,
        theta: f64,
        v: f64,
        epsilon: f64,
        ce: &CriticalEnergy,
    ) -> f64 {
        let vt = v - ce.mean;
        let (s2, c2) = libm::sincos(2.0 * theta);
        let se = libm::sqrt(epsilon);
        match regime {
            Regime::Elliptic => {
                let c4 = libm::cos(4.0 * theta);
                // The ε·sin 2θ terms enter with a minus sign, as the normal form
                // below dictates (e·[[0,1],[1,0]]e = sin 2θ).
                -vt * ce.kappa() * c2 * se
                    - vt / (2.0 * ce.e_l) * s2 * epsilon
                    - ce.mean / (4.0 * ce.e_l) * s2 * epsilon
                    + vt * vt / (16.0 * ce.mean * ce.e_l) * (1.0 - 2.0 * s2 - c4) * epsilon
            }
            Regime::Hyperbolic => -(ce.eta + vt * ce.kappa()) * c2 * se,
        }
    }

    /// `𝐄_v γ_n` at fixed θ below `E_l` through order ε.
    pub fn mean_gamma_truncated(theta: f64, epsilon: f64, ce: &CriticalEnergy) -> f64 {
        let s2 = libm::sin(2.0 * theta);
        let c4 = libm::cos(4.0 * theta);
        (-ce.mean * s2 / (4.0 * ce.e_l)
            + ce.variance * (1.0 - 2.0 * s2 - c4) / (16.0 * ce.mean * ce.e_l))
            * epsilon
    }

    /// Normal form of the conjugated site matrix below `E_l` through order ε.
    pub fn elliptic_normal_form(v_tilde: f64, epsilon: f64, ce: &CriticalEnergy) -> RMat2 {
        let se = libm::sqrt(epsilon);
        let k = v_tilde * ce.kappa() * se;
        let off = epsilon * (ce.mean / (4.0 * ce.e_l) + v_tilde / (2.0 * ce.e_l));
        let inner = RMat2::new(1.0 - k, k - off, -k - off, 1.0 + k);
        RMat2::rotation(-ce.eta * se) * inner
    }

    /// Leading part of the conjugated site matrix above `E_l` through order ε.
    pub fn hyperbolic_normal_form(v: f64, epsilon: f64, ce: &CriticalEnergy) -> RMat2 {
        let se = libm::sqrt(epsilon);
        let vt = v - ce.mean;
        let k = vt * ce.kappa() * se;
        let e = epsilon * v / (4.0 * ce.e_l);
        RMat2::new(
            1.0 - ce.eta * se - k + e,
            k + e,
            -k + e,
            1.0 + ce.eta * se + k + e,
        )
    }
}

/// Phases and log-norm increments of one modified Prüfer chain.
#[derive(Debug, Clone, PartialEq)]
pub struct PruferTrajectory {
    /// `θ_0, …, θ_N` in `[0, 2π)`.
    pub theta: Vec<f64>,
    /// `γ_1, …, γ_N`.
    pub gamma_increments: Vec<f64>,
    /// Unwrapped `θ_n − θ_{n−1}`.
    pub phase_increments: Vec<f64>,
    pub epsilon: f64,
    pub regime: Regime,
}

impl PruferTrajectory {
    pub fn len(&self) -> usize {
        self.gamma_increments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gamma_increments.is_empty()
    }

    /// `Σ γ_n`.
    pub fn log_growth(&self) -> f64 {
        self.gamma_increments.iter().sum()
    }

    /// Unwrapped total rotation `Σ (θ_n − θ_{n−1})`.
    pub fn total_rotation(&self) -> f64 {
        self.phase_increments.iter().sum()
    }
}

/// Runs the chain over sites `first..first + n` from `θ₀`.
pub fn trajectory<C: Couplings + ?Sized>(
    ce: &CriticalEnergy,
    regime: Regime,
    epsilon: f64,
    couplings: &C,
    first: i64,
    n: usize,
    theta0: f64,
) -> Result<PruferTrajectory> {
    let cc = ConjugatedCocycle::new(ce, regime, epsilon)?;
    if n > 0 {
        couplings.check_covers(first, first + n as i64 - 1)?;
    }
    let mut theta = Vec::with_capacity(n + 1);
    let mut gamma = Vec::with_capacity(n);
    let mut dphi = Vec::with_capacity(n);
    let mut t = reduce_phase(theta0);
    theta.push(t);
    for site in first..first + n as i64 {
        let (d, g) = cc.step(t, couplings.coupling(site));
        t = reduce_phase(t + d);
        theta.push(t);
        gamma.push(g);
        dphi.push(d);
    }
    Ok(PruferTrajectory {
        theta,
        gamma_increments: gamma,
        phase_increments: dphi,
        epsilon,
        regime,
    })
}

/// `log ‖Mᵋ T(first + n − 1, first − 1) (Mᵋ)⁻¹ e_{θ₀}‖` by direct multiplication.
pub fn conjugated_log_norm<C: Couplings + ?Sized>(
    ce: &CriticalEnergy,
    regime: Regime,
    epsilon: f64,
    couplings: &C,
    first: i64,
    n: usize,
    theta0: f64,
) -> Result<f64> {
    let cc = ConjugatedCocycle::new(ce, regime, epsilon)?;
    let mut p = ScaledProduct::<f64>::identity();
    let kernel =
        crate::transfer::SiteKernel::<f64>::new(ce.energy(regime, epsilon), Coupling::Delta);
    for site in first..first + n as i64 {
        p.push(kernel.at(couplings.coupling(site)));
    }
    let conj = cc.basis.m * p.matrix * cc.basis.inverse;
    let (s, c) = libm::sincos(theta0);
    Ok(p.log_scale + libm::log(conj.apply(Vec2::new(c, s)).norm()))
}

/// Empirical average `(1/N) Σ_{n=0}^{N−1} f(θ_n)`.
pub fn birkhoff_sum(f: impl Fn(f64) -> f64, trajectory: &PruferTrajectory) -> Result<f64> {
    let n = trajectory.len();
    if n == 0 {
        return Err(Error::InvalidParameter("empty trajectory".into()));
    }
    Ok(trajectory.theta[..n].iter().map(|t| f(*t)).sum::<f64>() / n as f64)
}

#[cfg(test)]
mod tests {
    use super::expansions::*;
    use super::*;
    use crate::ensemble::sample;
    use crate::stats::linear_fit;
    use proptest::prelude::*;

    fn uniform_ce(l: u32) -> CriticalEnergy {
        CriticalEnergy::new(l, &DisorderModel::default_uniform()).unwrap()
    }

    #[test]
    fn constants() {
        let ce = uniform_ce(1);
        assert!((ce.d_minus - 5.277e-4).abs() < 5e-7);
        assert!((ce.d_plus - 0.22508).abs() < 1e-5);
        assert_eq!(ce.d_plus, ce.eta);
        let tp = CriticalEnergy::new(1, &DisorderModel::default_two_point()).unwrap();
        assert!((tp.d_minus - 3.166e-3).abs() < 1e-6);
        assert!((tp.d_plus - 1.0 / PI).abs() < 1e-15);
        assert!(CriticalEnergy::new(1, &DisorderModel::Uniform { lo: -1.0, hi: 1.0 }).is_err());
    }

    #[test]
    fn act_on_circle_examples() {
        for theta in [0.0, 0.3, 2.0, 5.9] {
            assert!((act_on_circle(&RMat2::identity(), theta).unwrap() - theta).abs() < 1e-15);
            for beta in [0.4, -1.2, 1.5] {
                let got = act_on_circle(&RMat2::rotation(beta), theta).unwrap();
                let want = reduce_phase(theta + beta);
                let d = (got - want).abs();
                assert!(d < 1e-13 || (d - TAU).abs() < 1e-13, "θ={theta} β={beta}");
            }
            // Larger rotations agree modulo π.
            let got = act_on_circle(&RMat2::rotation(2.5), theta).unwrap();
            assert!(wrap_half(got - theta - 2.5).abs() < 1e-13);
        }
        assert_eq!(
            act_on_circle(&RMat2::new(2.0, 0.0, 0.0, 0.5), 0.0).unwrap(),
            0.0
        );
        assert_eq!(
            act_on_circle(&RMat2::new(1.0, 2.0, 2.0, 4.0), 0.0),
            Err(Error::Singular)
        );
    }

    #[test]
    fn basis_change_norms() {
        let ce = uniform_ce(1);
        let eps = 1e-4;
        assert!((m1(eps).norm() - 1.0).abs() < 1e-15);
        assert!((m1(eps).inverse().unwrap().norm() - 1.0 / eps.sqrt()).abs() < 1e-9);
        let bc = basis_change(Regime::Elliptic, eps, &ce).unwrap();
        assert!(bc.m.det() != 0.0);
        assert!(bc.m.norm() <= bc.c3 * (1.0 + 1e-12));
        assert!(bc.inverse.norm() <= bc.c3 / eps.sqrt() * (1.0 + 1e-12));
        assert!((bc.m * bc.inverse).max_abs_diff(&RMat2::identity()) < 1e-12);
        assert!((m2(&ce).det() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn conjugated_matrix_matches_normal_form() {
        let eps = 1e-4;
        for l in [1, 2, 3] {
            let ce = uniform_ce(l);
            let cc = ConjugatedCocycle::new(&ce, Regime::Elliptic, eps).unwrap();
            let sign = if l % 2 == 0 { 1.0 } else { -1.0 };
            for vt in [-0.5, 0.0, 0.3] {
                let exact = cc.matrix(ce.mean + vt).scale(sign);
                let nf = elliptic_normal_form(vt, eps, &ce);
                // Agreement through order ε leaves an O(ε^{3/2}) residue.
                assert!(
                    exact.max_abs_diff(&nf) < 10.0 * eps.powf(1.5),
                    "l={l} vt={vt}"
                );
                assert!(
                    exact.max_abs_diff(&RMat2::rotation(-ce.eta * eps.sqrt())) < 5.0 * eps.sqrt()
                );
            }
            let ch = ConjugatedCocycle::new(&ce, Regime::Hyperbolic, eps).unwrap();
            for v in [0.6, 1.0, 1.4] {
                let exact = ch.matrix(v).scale(sign);
                assert!(
                    exact.max_abs_diff(&hyperbolic_normal_form(v, eps, &ce)) < 10.0 * eps.powf(1.5)
                );
            }
        }
    }

    #[test]
    fn sign_of_conjugated_matrix_is_invisible() {
        let ce = uniform_ce(1);
        let cc = ConjugatedCocycle::new(&ce, Regime::Elliptic, 1e-3).unwrap();
        let m = cc.matrix(1.2);
        for theta in [0.0, 1.0, 3.0, 6.0] {
            let a = act_on_circle(&m, theta).unwrap();
            let b = act_on_circle(&(-m), theta).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn elliptic_phase_step_remainder_is_order_epsilon() {
        let ce = uniform_ce(1);
        let theta = PI / 4.0;
        let mut ratios = Vec::new();
        for eps in [1e-4, 1e-5, 1e-6] {
            let exact = phase_step(Regime::Elliptic, theta, 0.0, eps, &ce).unwrap();
            let lead = theta - ce.eta * eps.sqrt();
            ratios.push((exact - lead).abs() / eps);
        }
        // K fitted at the largest ε bounds the remainder at the smaller ones.
        let k = ratios[0];
        assert!(k < 1.0, "{ratios:?}");
        assert!(ratios.iter().all(|r| *r <= k * (1.0 + 1e-9)), "{ratios:?}");
    }

    #[test]
    fn exact_vs_truncated_phase_step() {
        let ce = uniform_ce(2);
        let mut worst: f64 = 0.0;
        for eps in [1e-6, 1e-5, 1e-4, 1e-3] {
            for i in 0..32 {
                let theta = i as f64 * TAU / 32.0;
                for vt in [-0.5, -0.1, 0.25, 0.5] {
                    for regime in [Regime::Elliptic, Regime::Hyperbolic] {
                        let exact = phase_step(regime, theta, vt, eps, &ce).unwrap();
                        let trunc = phase_step_truncated(regime, theta, vt, eps, &ce);
                        worst = worst.max(wrap_half(exact - trunc).abs() / eps);
                    }
                }
            }
        }
        assert!(worst < 1.0, "K = {worst}");
    }

    #[test]
    fn hyperbolic_fixed_points() {
        let ce = uniform_ce(1);
        let eps = 1e-5;
        let up = phase_step(Regime::Hyperbolic, FRAC_PI_2, 0.0, eps, &ce).unwrap();
        assert!((up - FRAC_PI_2).abs() < 10.0 * eps);
        let zero = phase_step(Regime::Hyperbolic, 0.0, 0.0, eps, &ce).unwrap();
        assert!(wrap_half(zero).abs() < 10.0 * eps);
        // Stability: a small displacement shrinks near π/2 and grows near 0.
        let d = 1e-2;
        let near_up =
            phase_step(Regime::Hyperbolic, FRAC_PI_2 + d, 0.0, eps, &ce).unwrap() - FRAC_PI_2;
        assert!(near_up.abs() < d);
        let near_zero = phase_step(Regime::Hyperbolic, d, 0.0, eps, &ce).unwrap();
        assert!(near_zero > d);
    }

    #[test]
    fn gamma_increment_without_disorder_is_order_epsilon() {
        let ce = uniform_ce(1);
        for eps in [1e-3, 1e-4, 1e-5] {
            let worst = (0..64)
                .map(|i| {
                    gamma_increment(Regime::Elliptic, i as f64 * TAU / 64.0, ce.mean, eps, &ce)
                        .unwrap()
                        .abs()
                })
                .fold(0.0, f64::max);
            assert!(worst < 0.05 * eps, "eps {eps}: {worst}");
        }
    }

    #[test]
    fn gamma_expansion_remainder_is_order_three_halves() {
        let ce = uniform_ce(1);
        let mut worst: f64 = 0.0;
        for eps in [1e-5, 1e-4, 1e-3] {
            for i in 0..16 {
                let theta = i as f64 * TAU / 16.0;
                for v in [0.5, 0.9, 1.3, 1.5] {
                    let exact = gamma_increment(Regime::Elliptic, theta, v, eps, &ce).unwrap();
                    let trunc = gamma_increment_truncated(Regime::Elliptic, theta, v, eps, &ce);
                    worst = worst.max((exact - trunc).abs() / eps.powf(1.5));
                }
            }
        }
        assert!(worst < 1.0, "K = {worst}");
    }

    #[test]
    fn mean_gamma_matches_expansion() {
        // Exact 𝐄_v γ by 16-point Gauss-Legendre on the uniform law.
        let ce = uniform_ce(1);
        let (x, w) = crate::quadrature::gauss_legendre::<16>();
        for eps in [1e-4, 1e-3] {
            for theta in [0.1, 0.9, 2.0, 4.4] {
                let cc = ConjugatedCocycle::new(&ce, Regime::Elliptic, eps).unwrap();
                let exact: f64 = x
                    .iter()
                    .zip(w.iter())
                    .map(|(xi, wi)| 0.5 * wi * cc.step(theta, 1.0 + 0.5 * xi).1)
                    .sum();
                let trunc = mean_gamma_truncated(theta, eps, &ce);
                assert!(
                    (exact - trunc).abs() < 0.5 * eps.powf(1.5),
                    "eps {eps} θ {theta}: {exact} vs {trunc}"
                );
            }
        }
        // Plain Monte Carlo cross-check at fixed θ.
        let eps = 1e-2;
        let theta = 0.7;
        let cc = ConjugatedCocycle::new(&ce, Regime::Elliptic, eps).unwrap();
        let r = sample(&DisorderModel::default_uniform(), 77, 1, 1_000_000).unwrap();
        let g: Vec<f64> = r.values.iter().map(|v| cc.step(theta, *v).1).collect();
        let mean = g.iter().sum::<f64>() / g.len() as f64;
        let var = g.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (g.len() - 1) as f64;
        let se = (var / g.len() as f64).sqrt();
        let trunc = mean_gamma_truncated(theta, eps, &ce);
        assert!(
            (mean - trunc).abs() < 5.0 * se + eps.powf(1.5),
            "{mean} vs {trunc} (se {se})"
        );
    }

    #[test]
    fn telescoping_over_ten_thousand_steps() {
        let ce = uniform_ce(1);
        let r = sample(&DisorderModel::default_uniform(), 5, 1, 10_000).unwrap();
        for regime in [Regime::Elliptic, Regime::Hyperbolic] {
            let tr = trajectory(&ce, regime, 1e-3, &r, 1, 10_000, 0.4).unwrap();
            let direct = conjugated_log_norm(&ce, regime, 1e-3, &r, 1, 10_000, 0.4).unwrap();
            let sum = tr.log_growth();
            assert!(
                (sum - direct).abs() <= 1e-8 * direct.abs().max(1.0),
                "{regime:?}: {sum} vs {direct}"
            );
            // Markov property: each phase is the exact image of the previous one.
            let cc = ConjugatedCocycle::new(&ce, regime, 1e-3).unwrap();
            for n in [1usize, 500, 9999] {
                let want =
                    act_on_circle(&cc.matrix(r.coupling(n as i64)), tr.theta[n - 1]).unwrap();
                assert!((tr.theta[n] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn birkhoff_of_constant() {
        let ce = uniform_ce(1);
        let r = sample(&DisorderModel::default_uniform(), 1, 1, 100).unwrap();
        let tr = trajectory(&ce, Regime::Elliptic, 1e-3, &r, 1, 100, 0.0).unwrap();
        assert_eq!(birkhoff_sum(|_| 2.5, &tr).unwrap(), 2.5);
    }

    #[test]
    fn birkhoff_equidistribution_envelope() {
        // |I_N(f)| ≤ K(√ε + 1/(N√ε)) for f ∈ {sin 2θ, cos 4θ}, K fitted once.
        let ce = uniform_ce(1);
        let r = sample(&DisorderModel::default_uniform(), 99, 1, 400_000).unwrap();
        let mut ratios = Vec::new();
        for eps in [1e-2, 1e-3, 1e-4] {
            for n in [20_000usize, 400_000] {
                let tr = trajectory(&ce, Regime::Elliptic, eps, &r, 1, n, 0.0).unwrap();
                let env = eps.sqrt() + 1.0 / (n as f64 * eps.sqrt());
                for f in [|t: f64| (2.0 * t).sin(), |t: f64| (4.0 * t).cos()] {
                    ratios.push(birkhoff_sum(f, &tr).unwrap().abs() / env);
                }
            }
        }
        let k = ratios.iter().cloned().fold(0.0, f64::max);
        assert!(k < 3.0, "{ratios:?}");
    }

    #[test]
    fn remainder_order_by_regression() {
        // log|exact − leading| vs log ε has slope 1 for the elliptic phase step.
        let ce = uniform_ce(1);
        let eps: Vec<f64> = (0..7).map(|i| 10f64.powf(-6.0 + 0.5 * i as f64)).collect();
        let y: Vec<f64> = eps
            .iter()
            .map(|e| {
                let exact = phase_step(Regime::Elliptic, 0.3, 0.2, *e, &ce).unwrap();
                (exact - phase_step_truncated(Regime::Elliptic, 0.3, 0.2, *e, &ce))
                    .abs()
                    .ln()
            })
            .collect();
        let x: Vec<f64> = eps.iter().map(|e| e.ln()).collect();
        let fit = linear_fit(&x, &y).unwrap();
        assert!((fit.slope - 1.0).abs() < 0.1, "slope {}", fit.slope);
    }

    proptest! {
        #[test]
        fn projective_sign_invariance(a in -3.0f64..3.0, b in -3.0f64..3.0, c in -3.0f64..3.0, theta in 0.0f64..TAU) {
            let d = (1.0 + b * c) / a;
            prop_assume!(a.abs() > 0.1 && d.is_finite());
            let m = RMat2::new(a, b, c, d);
            prop_assert_eq!(act_on_circle(&m, theta).unwrap(), act_on_circle(&(-m), theta).unwrap());
            let img = act_on_circle(&m, theta).unwrap();
            prop_assert!((0.0..TAU).contains(&img));
            // The image direction is parallel to M e_θ.
            let y = m.apply(Vec2::new(theta.cos(), theta.sin()));
            let cross = img.cos() * y.y - img.sin() * y.x;
            prop_assert!(cross.abs() < 1e-12 * y.norm());
        }
    }
}
