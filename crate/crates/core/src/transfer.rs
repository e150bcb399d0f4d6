//! Fundamental-solution cocycle of the Kronig-Penney operator.
//!
//! Solution vectors are `(ψ', ψ)`. Between lattice points the free propagator
//! acts; at an integer `n` the jump matrix of the point interaction acts, and
//! transfer matrices are right-continuous: `T(x, y)` contains the jumps at all
//! integers `n` with `y < n ≤ x`.

use alloc::vec::Vec;
use core::f64::consts::PI;

use num_complex::Complex64;

use crate::ensemble::Couplings;
use crate::error::{Error, Result};
use crate::linalg::{CMat2, Mat2, RMat2, Scalar};

/// Complex energy in the closed upper half-plane.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ComplexEnergy {
    pub re: f64,
    pub im: f64,
}

impl ComplexEnergy {
    pub fn new(re: f64, im: f64) -> Result<Self> {
        if !re.is_finite() || !im.is_finite() || im < 0.0 {
            return Err(Error::InvalidParameter(alloc::format!(
                "energy {re} + {im}i is not in the closed upper half-plane"
            )));
        }
        // Normalize -0.0 so the principal root stays in the upper half-plane.
        Ok(Self { re, im: im + 0.0 })
    }

    pub const fn real(re: f64) -> Self {
        Self { re, im: 0.0 }
    }

    #[inline]
    pub fn z(&self) -> Complex64 {
        Complex64::new(self.re, self.im)
    }

    /// Principal square root; its imaginary part is nonnegative.
    #[inline]
    pub fn sqrt(&self) -> Complex64 {
        self.z().sqrt()
    }
}

/// Point interaction placed at each integer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(
    feature = "serde",
    derive(serde::Serialize, serde::Deserialize),
    serde(rename_all = "snake_case")
)]
pub enum Coupling {
    /// `δ`: jump `[[1, v], [0, 1]]` in `ψ'`.
    #[default]
    Delta,
    /// `δ'`: jump `[[1, 0], [w, 1]]` in `ψ`.
    DeltaPrime,
}

/// An energy at which the cocycle can be evaluated, real or complex.
pub trait Energy: Copy {
    type S: Scalar;
    fn as_complex(&self) -> Complex64;
    /// Free propagator over `len`, i.e. the solution matrix of `-ψ'' = zψ`.
    fn propagator(&self, len: f64) -> Mat2<Self::S>;
}

impl Energy for f64 {
    type S = f64;
    fn as_complex(&self) -> Complex64 {
        Complex64::new(*self, 0.0)
    }
    #[inline]
    fn propagator(&self, len: f64) -> RMat2 {
        free_propagator_real(*self, len)
    }
}

impl Energy for ComplexEnergy {
    type S = Complex64;
    fn as_complex(&self) -> Complex64 {
        self.z()
    }
    #[inline]
    fn propagator(&self, len: f64) -> CMat2 {
        free_propagator(*self, len)
    }
}

/// Below this `|z L²|` the series form of `sin(kL)/k` is used.
const SERIES_CUTOFF: f64 = 1e-6;

/// `(cos kL, sin(kL)/k)` for real `E = k²`, continued analytically to `E ≤ 0`.
#[inline]
pub fn cos_sinc_real(e: f64, len: f64) -> (f64, f64) {
    let w = e * len * len;
    if w.abs() < SERIES_CUTOFF {
        let c = 1.0 - w / 2.0 + w * w / 24.0;
        let s = len * (1.0 - w / 6.0 + w * w / 120.0);
        return (c, s);
    }
    if e > 0.0 {
        let k = libm::sqrt(e);
        let (s, c) = libm::sincos(k * len);
        (c, s / k)
    } else {
        let k = libm::sqrt(-e);
        (libm::cosh(k * len), libm::sinh(k * len) / k)
    }
}

/// `(cos kL, sin(kL)/k)` for complex `z = k²`; both are entire in `z`.
#[inline]
pub fn cos_sinc(z: Complex64, len: f64) -> (Complex64, Complex64) {
    let w = z * (len * len);
    if w.norm() < SERIES_CUTOFF {
        let c = Complex64::new(1.0, 0.0) - w / 2.0 + w * w / 24.0;
        let s = (Complex64::new(1.0, 0.0) - w / 6.0 + w * w / 120.0) * len;
        return (c, s);
    }
    let k = z.sqrt();
    let kl = k * len;
    (kl.cos(), kl.sin() / k)
}

/// Free propagator at real energy.
#[inline]
pub fn free_propagator_real(e: f64, len: f64) -> RMat2 {
    let (c, s) = cos_sinc_real(e, len);
    RMat2::new(c, -e * s, s, c)
}

/// Free propagator `[[cos kL, −k sin kL], [sin(kL)/k, cos kL]]`, `k = z^{1/2}`.
pub fn free_propagator(z: ComplexEnergy, len: f64) -> CMat2 {
    if z.im == 0.0 {
        return free_propagator_real(z.re, len).to_complex();
    }
    let zc = z.z();
    let (c, s) = cos_sinc(zc, len);
    CMat2::new(c, -(zc * s), s, c)
}

/// Left-multiplies `m` by the jump matrix of coupling `v`.
#[inline]
pub fn apply_jump<S: Scalar>(m: Mat2<S>, v: f64, kind: Coupling) -> Mat2<S> {
    match kind {
        Coupling::Delta => Mat2::new(m.a + m.c.scale(v), m.b + m.d.scale(v), m.c, m.d),
        Coupling::DeltaPrime => Mat2::new(m.a, m.b, m.a.scale(v) + m.c, m.b.scale(v) + m.d),
    }
}

/// Jump matrix alone.
pub fn jump_matrix(v: f64, kind: Coupling) -> RMat2 {
    apply_jump(RMat2::identity(), v, kind)
}

/// Site matrix `T_n = J(v_n) P(1)` from `n − 1` to `n`.
pub fn site_matrix<En: Energy>(e: En, v: f64, kind: Coupling) -> Mat2<En::S> {
    apply_jump(e.propagator(1.0), v, kind)
}

/// Caches the unit free propagator so that site matrices cost a few flops.
#[derive(Debug, Clone, Copy)]
pub struct SiteKernel<S> {
    pub free: Mat2<S>,
    pub kind: Coupling,
}

impl<S: Scalar> SiteKernel<S> {
    pub fn new<En: Energy<S = S>>(e: En, kind: Coupling) -> Self {
        Self {
            free: e.propagator(1.0),
            kind,
        }
    }

    #[inline]
    pub fn at(&self, v: f64) -> Mat2<S> {
        apply_jump(self.free, v, self.kind)
    }
}

/// A product stored as `e^{log_scale} · matrix` with `‖matrix‖ = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaledProduct<S> {
    pub matrix: Mat2<S>,
    pub log_scale: f64,
}

impl<S: Scalar> ScaledProduct<S> {
    pub fn identity() -> Self {
        Self {
            matrix: Mat2::identity(),
            log_scale: 0.0,
        }
    }

    /// Normalizes an arbitrary nonzero matrix.
    pub fn from_matrix(m: Mat2<S>) -> Self {
        let mut p = Self {
            matrix: m,
            log_scale: 0.0,
        };
        p.renormalize();
        p
    }

    #[inline]
    fn renormalize(&mut self) {
        let n = self.matrix.norm();
        self.matrix = self.matrix.scale(1.0 / n);
        self.log_scale += libm::log(n);
    }

    /// `self ← m · self`.
    #[inline]
    pub fn push(&mut self, m: Mat2<S>) {
        self.matrix = m * self.matrix;
        self.renormalize();
    }

    /// `self · other` (apply `other` first).
    pub fn compose(&self, other: &Self) -> Self {
        let mut p = Self {
            matrix: self.matrix * other.matrix,
            log_scale: self.log_scale + other.log_scale,
        };
        p.renormalize();
        p
    }

    /// Inverse of a unimodular product: the adjugate keeps the operator norm.
    pub fn inverse(&self) -> Self {
        Self {
            matrix: self.matrix.adjugate(),
            log_scale: self.log_scale,
        }
    }

    /// The product itself; overflows for long chains.
    pub fn unscaled(&self) -> Mat2<S> {
        self.matrix.scale(libm::exp(self.log_scale))
    }

    /// `log ‖product‖`.
    #[inline]
    pub fn log_norm(&self) -> f64 {
        self.log_scale
    }
}

/// `T(n, m) = T_n ⋯ T_{m+1}`; for `m > n` the inverse `T(m, n)^{-1}`.
pub fn interval_product<En: Energy, C: Couplings + ?Sized>(
    e: En,
    couplings: &C,
    from: i64,
    to: i64,
) -> Result<ScaledProduct<En::S>> {
    interval_product_with(e, couplings, Coupling::Delta, from, to)
}

pub fn interval_product_with<En: Energy, C: Couplings + ?Sized>(
    e: En,
    couplings: &C,
    kind: Coupling,
    from: i64,
    to: i64,
) -> Result<ScaledProduct<En::S>> {
    let (lo, hi) = if from <= to { (from, to) } else { (to, from) };
    couplings.check_covers(lo + 1, hi)?;
    let kernel = SiteKernel::new(e, kind);
    let mut p = ScaledProduct::identity();
    for n in lo + 1..=hi {
        p.push(kernel.at(couplings.coupling(n)));
    }
    Ok(if from <= to { p } else { p.inverse() })
}

/// Continuous-position transfer matrix `T(x, y)` between arbitrary reals.
pub fn position_propagator<En: Energy, C: Couplings + ?Sized>(
    e: En,
    couplings: &C,
    kind: Coupling,
    x: f64,
    y: f64,
) -> Result<ScaledProduct<En::S>> {
    if !x.is_finite() || !y.is_finite() {
        return Err(Error::InvalidParameter(alloc::format!(
            "positions {x}, {y}"
        )));
    }
    let (lo, hi) = if y <= x { (y, x) } else { (x, y) };
    let first = libm::floor(lo) as i64 + 1;
    let last = libm::floor(hi) as i64;
    couplings.check_covers(first, last)?;
    let kernel = SiteKernel::new(e, kind);
    let mut p = ScaledProduct::identity();
    let mut t = lo;
    for n in first..=last {
        let step = if t == (n - 1) as f64 {
            kernel.at(couplings.coupling(n))
        } else {
            apply_jump(e.propagator(n as f64 - t), couplings.coupling(n), kind)
        };
        p.push(step);
        t = n as f64;
    }
    if hi > t {
        p.push(e.propagator(hi - t));
    }
    Ok(if y <= x { p } else { p.inverse() })
}

/// Trace of the periodic site matrix, `2 cos k + (v/k) sin k`.
pub fn discriminant(e: f64, v: f64) -> f64 {
    let (c, s) = cos_sinc_real(e, 1.0);
    2.0 * c + v * s
}

/// One band `[e_low, e_high]` of the periodic δ operator.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Band {
    pub l: u32,
    pub e_low: f64,
    pub e_high: f64,
}

impl Band {
    pub fn width(&self) -> f64 {
        self.e_high - self.e_low
    }
}

/// Root tolerance in energy for band edges.
pub const BAND_EDGE_TOL: f64 = 1e-10;
const BAND_SCAN: usize = 2048;

/// The first `l_max` bands of the periodic operator with coupling `v > 0`.
///
/// Upper edges are the critical energies `(lπ)²`. The lower edge of band `l`
/// is the root of `(−1)^{l−1} D(k) = 2` in `((l−1)π, lπ)` nearest `lπ`.
pub fn band_edges(v: f64, l_max: u32) -> Result<Vec<Band>> {
    if !(v > 0.0) || !v.is_finite() {
        return Err(Error::InvalidParameter(alloc::format!(
            "band edges need v > 0, got {v}"
        )));
    }
    let mut bands = Vec::with_capacity(l_max as usize);
    for l in 1..=l_max {
        let sign = if l % 2 == 1 { 1.0 } else { -1.0 };
        let g = |k: f64| sign * (2.0 * libm::cos(k) + v * libm::sin(k) / k) - 2.0;
        let k_hi = l as f64 * PI;
        let k_lo = (l - 1) as f64 * PI;
        let h = (k_hi - k_lo) / BAND_SCAN as f64;
        // Walk left from lπ (g = −4) to the first point where g > 0.
        let mut b = k_hi;
        let mut a = k_hi - h;
        let mut found = false;
        for i in 1..BAND_SCAN {
            a = k_hi - i as f64 * h;
            if g(a) > 0.0 {
                found = true;
                break;
            }
            b = a;
        }
        if !found {
            // Gap thinner than the scan step: it starts right above (l−1)π.
            a = k_lo + h * 1e-6;
            if l == 1 {
                a = 0.0;
            }
            if !(g_at(&g, a, v) > 0.0) {
                return Err(Error::NonConvergence {
                    achieved: h,
                    target: BAND_EDGE_TOL,
                });
            }
        }
        while b * b - a * a > BAND_EDGE_TOL * 1e-2 {
            let mid = 0.5 * (a + b);
            if mid <= a || mid >= b {
                break;
            }
            if g_at(&g, mid, v) > 0.0 {
                a = mid;
            } else {
                b = mid;
            }
        }
        let k = 0.5 * (a + b);
        bands.push(Band {
            l,
            e_low: k * k,
            e_high: k_hi * k_hi,
        });
    }
    Ok(bands)
}

#[inline]
fn g_at(g: &impl Fn(f64) -> f64, k: f64, v: f64) -> f64 {
    if k == 0.0 {
        v
    } else {
        g(k)
    }
}

/// Measured constants and outcome of the complex-energy perturbation bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerturbationCheck {
    /// `sup ‖T^E(n, m)‖` over `0 ≤ m ≤ n ≤ N`.
    pub c1: f64,
    /// `sup_n ‖(T_n^{E+κ} − T_n^E)/κ‖`.
    pub c2: f64,
    pub kappa_abs: f64,
    pub n: usize,
    /// `sup ‖T^{E+κ}(n, m)‖` over the same pairs.
    pub sup_perturbed: f64,
    /// `c1 / (1 − |κ| c1 c2 N)` when `|κ| c1 c2 N < 1`.
    pub bound: Option<f64>,
}

impl PerturbationCheck {
    pub fn holds(&self) -> bool {
        match self.bound {
            Some(b) => self.sup_perturbed <= b * (1.0 + 1e-12),
            None => true,
        }
    }

    pub fn applicable(&self) -> bool {
        self.bound.is_some()
    }
}

/// Evaluates both sides of the perturbation bound on sites `1..=N` (O(N²)).
pub fn perturbation_check<C: Couplings + ?Sized>(
    e: f64,
    kappa: Complex64,
    couplings: &C,
    n: usize,
) -> Result<PerturbationCheck> {
    if kappa.norm() == 0.0 {
        return Err(Error::InvalidParameter("kappa must be nonzero".into()));
    }
    couplings.check_covers(1, n as i64)?;
    let z = e_plus(e, kappa);
    let real_kernel = SiteKernel::<f64>::new(e, Coupling::Delta);
    let cx_kernel = CMat2::new(z.0, z.1, z.2, z.3);
    let site_c = |v: f64| apply_jump(cx_kernel, v, Coupling::Delta);
    let mut c2: f64 = 0.0;
    for s in 1..=n as i64 {
        let v = couplings.coupling(s);
        let diff = site_c(v) - real_kernel.at(v).to_complex();
        let r = CMat2::new(
            diff.a / kappa,
            diff.b / kappa,
            diff.c / kappa,
            diff.d / kappa,
        );
        c2 = c2.max(r.norm());
    }
    let mut c1: f64 = 1.0;
    let mut sup: f64 = 1.0;
    for m in 0..n as i64 {
        let mut pr = RMat2::identity();
        let mut pc = CMat2::identity();
        for s in m + 1..=n as i64 {
            let v = couplings.coupling(s);
            pr = real_kernel.at(v) * pr;
            pc = site_c(v) * pc;
            c1 = c1.max(pr.norm());
            sup = sup.max(pc.norm());
        }
    }
    let x = kappa.norm() * c1 * c2 * n as f64;
    Ok(PerturbationCheck {
        c1,
        c2,
        kappa_abs: kappa.norm(),
        n,
        sup_perturbed: sup,
        bound: (x < 1.0).then(|| c1 / (1.0 - x)),
    })
}

// Unit propagator entries at `E + κ` for arbitrary complex κ (either half-plane).
fn e_plus(e: f64, kappa: Complex64) -> (Complex64, Complex64, Complex64, Complex64) {
    let z = Complex64::new(e, 0.0) + kappa;
    let (c, s) = cos_sinc(z, 1.0);
    (c, -(z * s), s, c)
}
