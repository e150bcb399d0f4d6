//! Half-line Weyl–Titchmarsh functions and the full-line Green kernel.
//!
//! With the cut point `a`, `f_±` are the solutions that are square
//! integrable at `±∞` with `f_±(a) = 1`, and `m_± = ±f_±'(a)`. Both are
//! Herglotz functions of `z`, and `G(x, y) = f_−(x) f_+(y) / (m_+ + m_−)` for
//! `x ≤ y` is the kernel of `(z − H)^{-1}`.

use num_complex::Complex64;

use crate::ensemble::Couplings;
use crate::error::{Error, Result};
use crate::linalg::Vec2;
use crate::transfer::{position_propagator, ComplexEnergy, Coupling, ScaledProduct};

/// Half-line selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(
    feature = "serde",
    derive(serde::Serialize, serde::Deserialize),
    serde(rename_all = "snake_case")
)]
pub enum Side {
    Plus,
    Minus,
}

impl Side {
    fn sign(self) -> f64 {
        match self {
            Side::Plus => 1.0,
            Side::Minus => -1.0,
        }
    }
}

/// Default cut point.
pub const DEFAULT_CUT: f64 = 0.5;

/// Truncation control for the adaptive m-function.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct WeylOptions {
    /// Starting cap distance.
    pub l0: f64,
    /// Largest cap distance tried.
    pub l_max: f64,
    /// Relative stability target `|m(2L) − m(L)| ≤ tol · max(1, |m|)`.
    pub tol: f64,
}

impl Default for WeylOptions {
    fn default() -> Self {
        Self {
            l0: 32.0,
            l_max: 1.0e7,
            tol: 1e-12,
        }
    }
}

impl WeylOptions {
    /// Starts at a cap distance matched to the decay rate `im √z`, so that
    /// few doublings are needed.
    pub fn for_energy(z: ComplexEnergy, tol: f64) -> Self {
        let rate = z.sqrt().im.max(1e-300);
        let l0 = (libm::log(1.0 / tol) / (2.0 * rate)).clamp(16.0, 1.0e7);
        Self {
            l0,
            l_max: 1.0e8_f64.max(4.0 * l0),
            tol,
        }
    }
}

fn check_z(z: ComplexEnergy) -> Result<()> {
    if z.im > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(alloc::format!(
            "im z = {} must be positive",
            z.im
        )))
    }
}

fn check_cut(a: f64) -> Result<()> {
    if a.is_finite() && libm::floor(a) != a {
        Ok(())
    } else {
        Err(Error::InvalidParameter(alloc::format!(
            "cut point {a} must not be an integer"
        )))
    }
}

/// The Dirichlet cap solution `(1, 0)` at `a ± L`, carried to `x`.
fn cap_state<C: Couplings + ?Sized>(
    z: ComplexEnergy,
    c: &C,
    side: Side,
    a: f64,
    l: f64,
    x: f64,
) -> Result<(Vec2<Complex64>, f64)> {
    let cap = a + side.sign() * l;
    let p: ScaledProduct<Complex64> = position_propagator(z, c, Coupling::Delta, x, cap)?;
    let one = Complex64::new(1.0, 0.0);
    Ok((
        p.matrix.apply(Vec2::new(one, Complex64::new(0.0, 0.0))),
        p.log_scale,
    ))
}

/// `m_±(z)` with the Dirichlet cap at distance `L` from `a`.
pub fn m_function<C: Couplings + ?Sized>(
    z: ComplexEnergy,
    c: &C,
    side: Side,
    a: f64,
    l: f64,
) -> Result<Complex64> {
    check_z(z)?;
    check_cut(a)?;
    if !(l > 0.0) {
        return Err(Error::InvalidParameter(alloc::format!("cap distance {l}")));
    }
    let (v, _) = cap_state(z, c, side, a, l, a)?;
    Ok(v.x / v.y * side.sign())
}

/// A converged m-function value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MValue {
    pub value: Complex64,
    /// Cap distance of the returned value.
    pub l: f64,
    /// `|m(L) − m(L/2)|` at the returned `L`.
    pub change: f64,
}

/// Doubles the cap distance until two successive values agree.
pub fn m_function_adaptive<C: Couplings + ?Sized>(
    z: ComplexEnergy,
    c: &C,
    side: Side,
    a: f64,
    opts: &WeylOptions,
) -> Result<MValue> {
    let (lo, hi) = c.coverage();
    let room = match side {
        Side::Plus => hi as f64 + 1.0 - a,
        Side::Minus => a - lo as f64 + 1.0,
    };
    let l_max = opts.l_max.min(room - 1e-9);
    let mut l = opts.l0.min(0.5 * l_max);
    let mut prev = m_function(z, c, side, a, l)?;
    let mut change = f64::INFINITY;
    while 2.0 * l <= l_max {
        l *= 2.0;
        let m = m_function(z, c, side, a, l)?;
        change = (m - prev).norm();
        prev = m;
        if change <= opts.tol * m.norm().max(1.0) {
            return Ok(MValue {
                value: m,
                l,
                change,
            });
        }
    }
    Err(Error::NonConvergence {
        achieved: change / prev.norm().max(1.0),
        target: opts.tol,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MFunctionPair {
    pub m_plus: Complex64,
    pub m_minus: Complex64,
    pub z: ComplexEnergy,
    pub a: f64,
    /// Cap distance used on each side.
    pub l_plus: f64,
    pub l_minus: f64,
}

impl MFunctionPair {
    pub fn compute<C: Couplings + ?Sized>(
        z: ComplexEnergy,
        c: &C,
        a: f64,
        opts: &WeylOptions,
    ) -> Result<Self> {
        let p = m_function_adaptive(z, c, Side::Plus, a, opts)?;
        let m = m_function_adaptive(z, c, Side::Minus, a, opts)?;
        Ok(Self {
            m_plus: p.value,
            m_minus: m.value,
            z,
            a,
            l_plus: p.l,
            l_minus: m.l,
        })
    }

    pub fn is_herglotz(&self) -> bool {
        self.m_plus.im > 0.0 && self.m_minus.im > 0.0
    }

    /// `G(a, a) = 1/(m_+ + m_−)`.
    pub fn diagonal_green(&self) -> Complex64 {
        (self.m_plus + self.m_minus).inv()
    }
}

/// `f_±(x) = (0 1) T(x, a) (±m_±, 1)`.
pub fn solution_eval<C: Couplings + ?Sized>(
    z: ComplexEnergy,
    c: &C,
    side: Side,
    m: Complex64,
    a: f64,
    x: f64,
) -> Result<Complex64> {
    check_z(z)?;
    let p = position_propagator(z, c, Coupling::Delta, x, a)?;
    let v = p
        .matrix
        .apply(Vec2::new(m * side.sign(), Complex64::new(1.0, 0.0)));
    Ok(v.y * libm::exp(p.log_scale))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GreenEvaluation {
    pub value: Complex64,
    pub x: f64,
    pub y: f64,
    pub z: ComplexEnergy,
}

/// The line operator at one energy, with its m-functions resolved.
#[derive(Debug, Clone, Copy)]
pub struct WeylLine<'c, C: Couplings + ?Sized> {
    pub couplings: &'c C,
    pub pair: MFunctionPair,
}

impl<'c, C: Couplings + ?Sized> WeylLine<'c, C> {
    pub fn new(z: ComplexEnergy, couplings: &'c C, a: f64, opts: &WeylOptions) -> Result<Self> {
        check_z(z)?;
        check_cut(a)?;
        Ok(Self {
            couplings,
            pair: MFunctionPair::compute(z, couplings, a, opts)?,
        })
    }

    /// `f_±(x)`, evaluated as the cap solution normalized at `a`. Every
    /// propagation runs away from the cap, the direction in which `f_±`
    /// grows, so this is stable at any distance.
    pub fn decaying(&self, side: Side, x: f64) -> Result<Complex64> {
        let l = match side {
            Side::Plus => self.pair.l_plus,
            Side::Minus => self.pair.l_minus,
        };
        let (va, sa) = cap_state(
            self.pair.z,
            self.couplings,
            side,
            self.pair.a,
            l,
            self.pair.a,
        )?;
        let (vx, sx) = cap_state(self.pair.z, self.couplings, side, self.pair.a, l, x)?;
        Ok(vx.y / va.y * libm::exp(sx - sa))
    }

    /// `G(x, y) = f_−(min) f_+(max) / (m_+ + m_−)`.
    pub fn green(&self, x: f64, y: f64) -> Result<GreenEvaluation> {
        let (lo, hi) = if x <= y { (x, y) } else { (y, x) };
        let value = self.decaying(Side::Minus, lo)?
            * self.decaying(Side::Plus, hi)?
            * self.pair.diagonal_green();
        Ok(GreenEvaluation {
            value,
            x,
            y,
            z: self.pair.z,
        })
    }
}

/// One-shot kernel evaluation.
pub fn green_kernel<C: Couplings + ?Sized>(
    z: ComplexEnergy,
    c: &C,
    x: f64,
    y: f64,
    a: f64,
    opts: &WeylOptions,
) -> Result<GreenEvaluation> {
    WeylLine::new(z, c, a, opts)?.green(x, y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::{sample_stream, Constant, DisorderModel};
    use crate::quadrature::gauss_legendre;
    use crate::spectral::free_green;
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn free_m_function_at_i() {
        let z = ComplexEnergy::new(0.0, 1.0).unwrap();
        let opts = WeylOptions::default();
        for side in [Side::Plus, Side::Minus] {
            let m = m_function_adaptive(z, &Constant(0.0), side, DEFAULT_CUT, &opts).unwrap();
            let want = c(-libm::sqrt(0.5), libm::sqrt(0.5));
            assert!((m.value - want).norm() < 1e-12, "{side:?} {m:?}");
        }
    }

    #[test]
    fn free_m_function_is_i_sqrt_z() {
        let opts = WeylOptions::default();
        for (re, im) in [(5.0, 0.3), (-2.0, 0.1), (40.0, 2.0)] {
            let z = ComplexEnergy::new(re, im).unwrap();
            let want = c(0.0, 1.0) * z.sqrt();
            let p = MFunctionPair::compute(z, &Constant(0.0), 0.25, &opts).unwrap();
            assert!((p.m_plus - want).norm() < 1e-10 * want.norm());
            assert!((p.m_minus - want).norm() < 1e-10 * want.norm());
        }
    }

    #[test]
    fn free_solution_values() {
        let z = ComplexEnergy::new(0.0, 1.0).unwrap();
        let m = c(0.0, 1.0) * z.sqrt();
        let a = DEFAULT_CUT;
        let f = solution_eval(z, &Constant(0.0), Side::Plus, m, a, a).unwrap();
        assert!((f - 1.0).norm() < 1e-15);
        let f1 = solution_eval(z, &Constant(0.0), Side::Plus, m, a, a + 1.0).unwrap();
        // e^{i√i} = e^{−1/√2}(cos(1/√2) + i sin(1/√2)).
        let r = libm::sqrt(0.5);
        let want = c(libm::exp(-r) * libm::cos(r), libm::exp(-r) * libm::sin(r));
        assert!((f1 - want).norm() < 1e-13, "{f1}");
        assert!((f1 - c(0.37486, 0.32031)).norm() < 1e-5);
        let line = WeylLine::new(z, &Constant(0.0), a, &WeylOptions::default()).unwrap();
        assert!((line.decaying(Side::Plus, a + 1.0).unwrap() - f1).norm() < 1e-12);
        let mut prev = f64::INFINITY;
        for k in 1..20 {
            let v = line.decaying(Side::Plus, a + k as f64).unwrap().norm();
            assert!(v < prev);
            prev = v;
        }
    }

    #[test]
    fn free_green_diagonal() {
        let z = ComplexEnergy::new(0.0, 1.0).unwrap();
        let g = green_kernel(z, &Constant(0.0), 0.5, 0.5, 0.5, &WeylOptions::default()).unwrap();
        assert!((g.value - c(-0.35355, -0.35355)).norm() < 1e-5);
        let line = WeylLine::new(z, &Constant(0.0), 0.5, &WeylOptions::default()).unwrap();
        for (x, y) in [(0.1, 3.7), (-4.2, 2.5), (7.0, 7.0)] {
            let g = line.green(x, y).unwrap().value;
            assert!((g - free_green(z, x, y)).norm() < 1e-12);
        }
    }

    #[test]
    fn herglotz_near_band_edge() {
        let model = DisorderModel::default_uniform();
        let r = sample_stream(&model, 1, 0, -20_000, 20_000).unwrap();
        let z = ComplexEnergy::new(core::f64::consts::PI.powi(2) - 0.01, 0.01).unwrap();
        let p = MFunctionPair::compute(z, &r, 0.5, &WeylOptions::for_energy(z, 1e-10)).unwrap();
        assert!(p.is_herglotz(), "{p:?}");
    }

    #[test]
    fn truncation_converges_geometrically() {
        let model = DisorderModel::default_two_point();
        let r = sample_stream(&model, 2, 0, -400, 400).unwrap();
        let z = ComplexEnergy::new(12.0, 0.5).unwrap();
        let exact = m_function(z, &r, Side::Plus, 0.5, 390.0).unwrap();
        let rate = z.sqrt().im;
        for l in [10.0, 20.0, 40.0] {
            let err = (m_function(z, &r, Side::Plus, 0.5, l).unwrap() - exact).norm();
            // Reflection off the cap returns with factor e^{−2 im√z L}, up
            // to the local fluctuations of the disordered solution.
            assert!(
                err < 50.0 * libm::exp(-2.0 * rate * l) + 1e-13,
                "L={l}: {err}"
            );
        }
    }

    #[test]
    fn adaptive_reports_nonconvergence() {
        let r = sample_stream(&DisorderModel::default_uniform(), 0, 0, -50, 50).unwrap();
        let z = ComplexEnergy::new(10.0, 0.001).unwrap();
        let e = m_function_adaptive(z, &r, Side::Plus, 0.5, &WeylOptions::default());
        assert!(matches!(e, Err(Error::NonConvergence { .. })), "{e:?}");
        assert!(m_function(ComplexEnergy::real(1.0), &r, Side::Plus, 0.5, 5.0).is_err());
        assert!(m_function(z, &r, Side::Plus, 1.0, 5.0).is_err());
    }

    #[test]
    fn resolvent_equation() {
        // u = ∫ G(·, y) φ(y) dy must solve u'' + z u = φ between lattice
        // points and jump by u'(n⁺) − u'(n⁻) = v_n u(n) at integers.
        let r = sample_stream(&DisorderModel::default_uniform(), 3, 0, -300, 300).unwrap();
        let z = ComplexEnergy::new(6.0, 1.0).unwrap();
        let line = WeylLine::new(z, &r, 0.5, &WeylOptions::default()).unwrap();
        let (xq, wq) = gauss_legendre::<24>();
        let phi = |y: f64| {
            if (1.0..2.0).contains(&y) {
                libm::sin(core::f64::consts::PI * (y - 1.0)).powi(2)
            } else {
                0.0
            }
        };
        let u = |x: f64| -> Complex64 {
            let mut s = c(0.0, 0.0);
            // Split at x so each piece is smooth.
            for (lo, hi) in [(1.0, x.clamp(1.0, 2.0)), (x.clamp(1.0, 2.0), 2.0)] {
                if hi <= lo {
                    continue;
                }
                for (t, w) in xq.iter().zip(&wq) {
                    let y = lo + 0.5 * (hi - lo) * (t + 1.0);
                    s += line.green(x, y).unwrap().value * (0.5 * (hi - lo) * w * phi(y));
                }
            }
            s
        };
        let h = 1e-3;
        for x in [1.3, 1.71, 2.6, 0.4] {
            let d2 = (u(x + h) - 2.0 * u(x) + u(x - h)) / (h * h);
            let res = d2 + z.z() * u(x) - phi(x);
            assert!(res.norm() < 1e-5, "x={x}: {res}");
        }
        for n in [1i64, 2, 3] {
            let x = n as f64;
            let right = (-3.0 * u(x) + 4.0 * u(x + h) - u(x + 2.0 * h)) / (2.0 * h);
            let left = (3.0 * u(x) - 4.0 * u(x - h) + u(x - 2.0 * h)) / (2.0 * h);
            let jump = right - left - r.coupling(n) * u(x);
            assert!(jump.norm() < 1e-5, "n={n}: {jump}");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn herglotz_positivity(seed in 0u64..10_000, two_point in any::<bool>(), re in -5.0f64..60.0, lim in -2.0f64..0.5) {
            // A Dirichlet cap at any distance keeps the Herglotz property.
            let model = if two_point { DisorderModel::default_two_point() } else { DisorderModel::default_uniform() };
            let r = sample_stream(&model, seed, 0, -1000, 1000).unwrap();
            let z = ComplexEnergy::new(re, libm::pow(10.0, lim)).unwrap();
            for side in [Side::Plus, Side::Minus] {
                prop_assert!(m_function(z, &r, side, 0.5, 999.0).unwrap().im > 0.0);
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn green_is_symmetric(seed in 0u64..1000, x in -20.0f64..20.0, y in -20.0f64..20.0) {
            let r = sample_stream(&DisorderModel::default_uniform(), seed, 0, -1500, 1500).unwrap();
            let z = ComplexEnergy::new(9.0, 0.4).unwrap();
            let line = WeylLine::new(z, &r, 0.5, &WeylOptions::default()).unwrap();
            let g1 = line.green(x, y).unwrap().value;
            let g2 = line.green(y, x).unwrap().value;
            prop_assert!((g1 - g2).norm() <= 1e-10 * g1.norm().max(1e-300));
        }

        #[test]
        fn green_is_continuous_across_lattice_points(seed in 0u64..1000, n in -10i64..10, y in -10.0f64..10.0) {
            let r = sample_stream(&DisorderModel::default_two_point(), seed, 0, -500, 500).unwrap();
            let z = ComplexEnergy::new(4.0, 0.7).unwrap();
            let line = WeylLine::new(z, &r, 0.5, &WeylOptions::default()).unwrap();
            let x = n as f64;
            let g0 = line.green(x, y).unwrap().value;
            let gl = line.green(x - 1e-9, y).unwrap().value;
            let gr = line.green(x + 1e-9, y).unwrap().value;
            prop_assert!((g0 - gl).norm() < 1e-7 && (g0 - gr).norm() < 1e-7);
        }
    }
}
