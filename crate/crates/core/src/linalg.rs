//! Fixed-size 2×2 matrices and 2-vectors over `f64` or `Complex64`.

use core::ops::{Add, Mul, Neg, Sub};

use num_complex::Complex64;

/// Field element usable as a matrix entry.
pub trait Scalar:
    Copy
    + PartialEq
    + core::fmt::Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Neg<Output = Self>
{
    const ZERO: Self;
    const ONE: Self;
    fn from_real(x: f64) -> Self;
    fn abs_sqr(self) -> f64;
    fn scale(self, s: f64) -> Self;
    fn recip(self) -> Self;
    fn conj(self) -> Self;
}

impl Scalar for f64 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;
    #[inline]
    fn from_real(x: f64) -> Self {
        x
    }
    #[inline]
    fn abs_sqr(self) -> f64 {
        self * self
    }
    #[inline]
    fn scale(self, s: f64) -> Self {
        self * s
    }
    #[inline]
    fn recip(self) -> Self {
        1.0 / self
    }
    #[inline]
    fn conj(self) -> Self {
        self
    }
}

impl Scalar for Complex64 {
    const ZERO: Self = Complex64::new(0.0, 0.0);
    const ONE: Self = Complex64::new(1.0, 0.0);
    #[inline]
    fn from_real(x: f64) -> Self {
        Complex64::new(x, 0.0)
    }
    #[inline]
    fn abs_sqr(self) -> f64 {
        self.norm_sqr()
    }
    #[inline]
    fn scale(self, s: f64) -> Self {
        self * s
    }
    #[inline]
    fn recip(self) -> Self {
        Complex64::ONE / self
    }
    #[inline]
    fn conj(self) -> Self {
        Complex64::conj(&self)
    }
}

/// Column vector `(first, second)`; for solution vectors this is `(ψ', ψ)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Vec2<T> {
    pub x: T,
    pub y: T,
}

impl<T: Scalar> Vec2<T> {
    #[inline]
    pub const fn new(x: T, y: T) -> Self {
        Self { x, y }
    }

    #[inline]
    pub fn norm_sqr(&self) -> f64 {
        self.x.abs_sqr() + self.y.abs_sqr()
    }

    #[inline]
    pub fn norm(&self) -> f64 {
        libm::sqrt(self.norm_sqr())
    }

    #[inline]
    pub fn scale(self, s: f64) -> Self {
        Self::new(self.x.scale(s), self.y.scale(s))
    }
}

impl<T: Scalar> Add for Vec2<T> {
    type Output = Self;
    #[inline]
    fn add(self, o: Self) -> Self {
        Self::new(self.x + o.x, self.y + o.y)
    }
}

impl<T: Scalar> Sub for Vec2<T> {
    type Output = Self;
    #[inline]
    fn sub(self, o: Self) -> Self {
        Self::new(self.x - o.x, self.y - o.y)
    }
}

/// Row-major 2×2 matrix `[[a, b], [c, d]]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mat2<T> {
    pub a: T,
    pub b: T,
    pub c: T,
    pub d: T,
}

pub type RMat2 = Mat2<f64>;
pub type CMat2 = Mat2<Complex64>;

impl<T: Scalar> Mat2<T> {
    #[inline]
    pub const fn new(a: T, b: T, c: T, d: T) -> Self {
        Self { a, b, c, d }
    }

    #[inline]
    pub fn identity() -> Self {
        Self::new(T::ONE, T::ZERO, T::ZERO, T::ONE)
    }

    #[inline]
    pub fn det(&self) -> T {
        self.a * self.d - self.b * self.c
    }

    #[inline]
    pub fn trace(&self) -> T {
        self.a + self.d
    }

    /// Adjugate; equals the inverse when `det == 1`.
    #[inline]
    pub fn adjugate(&self) -> Self {
        Self::new(self.d, -self.b, -self.c, self.a)
    }

    pub fn inverse(&self) -> Option<Self> {
        let det = self.det();
        if det.abs_sqr() == 0.0 {
            return None;
        }
        let r = det.recip();
        let adj = self.adjugate();
        Some(Self::new(adj.a * r, adj.b * r, adj.c * r, adj.d * r))
    }

    #[inline]
    pub fn apply(&self, v: Vec2<T>) -> Vec2<T> {
        Vec2::new(self.a * v.x + self.b * v.y, self.c * v.x + self.d * v.y)
    }

    #[inline]
    pub fn scale(&self, s: f64) -> Self {
        Self::new(
            self.a.scale(s),
            self.b.scale(s),
            self.c.scale(s),
            self.d.scale(s),
        )
    }

    #[inline]
    pub fn frobenius_sqr(&self) -> f64 {
        self.a.abs_sqr() + self.b.abs_sqr() + self.c.abs_sqr() + self.d.abs_sqr()
    }

    /// Largest singular value.
    pub fn norm(&self) -> f64 {
        let f = self.frobenius_sqr();
        let det = self.det().abs_sqr();
        let disc = (f * f - 4.0 * det).max(0.0);
        libm::sqrt(0.5 * (f + libm::sqrt(disc)))
    }

    pub fn max_abs_diff(&self, o: &Self) -> f64 {
        let d = *self - *o;
        libm::sqrt(
            d.a.abs_sqr()
                .max(d.b.abs_sqr())
                .max(d.c.abs_sqr())
                .max(d.d.abs_sqr()),
        )
    }

    pub fn max_abs(&self) -> f64 {
        libm::sqrt(
            self.a
                .abs_sqr()
                .max(self.b.abs_sqr())
                .max(self.c.abs_sqr())
                .max(self.d.abs_sqr()),
        )
    }
}

impl RMat2 {
    pub fn to_complex(&self) -> CMat2 {
        CMat2::new(
            Complex64::from_real(self.a),
            Complex64::from_real(self.b),
            Complex64::from_real(self.c),
            Complex64::from_real(self.d),
        )
    }

    /// Rotation `R_β = [[cos β, −sin β], [sin β, cos β]]`.
    pub fn rotation(beta: f64) -> Self {
        let (s, c) = libm::sincos(beta);
        Self::new(c, -s, s, c)
    }
}

impl CMat2 {
    /// Largest modulus of an imaginary part.
    pub fn max_imag(&self) -> f64 {
        self.a
            .im
            .abs()
            .max(self.b.im.abs())
            .max(self.c.im.abs())
            .max(self.d.im.abs())
    }

    pub fn re(&self) -> RMat2 {
        RMat2::new(self.a.re, self.b.re, self.c.re, self.d.re)
    }
}

impl<T: Scalar> Mul for Mat2<T> {
    type Output = Self;
    #[inline]
    fn mul(self, o: Self) -> Self {
        Self::new(
            self.a * o.a + self.b * o.c,
            self.a * o.b + self.b * o.d,
            self.c * o.a + self.d * o.c,
            self.c * o.b + self.d * o.d,
        )
    }
}

impl<T: Scalar> Add for Mat2<T> {
    type Output = Self;
    #[inline]
    fn add(self, o: Self) -> Self {
        Self::new(self.a + o.a, self.b + o.b, self.c + o.c, self.d + o.d)
    }
}

impl<T: Scalar> Sub for Mat2<T> {
    type Output = Self;
    #[inline]
    fn sub(self, o: Self) -> Self {
        Self::new(self.a - o.a, self.b - o.b, self.c - o.c, self.d - o.d)
    }
}

impl<T: Scalar> Neg for Mat2<T> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        Self::new(-self.a, -self.b, -self.c, -self.d)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn operator_norm_of_diagonal() {
        let m = RMat2::new(2.0, 0.0, 0.0, 0.5);
        assert!((m.norm() - 2.0).abs() < 1e-15);
        let r = RMat2::rotation(0.3);
        assert!((r.norm() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn adjugate_inverts_unimodular() {
        let m = RMat2::new(2.0, 3.0, 1.0, 2.0);
        let p = m * m.adjugate();
        assert!(p.max_abs_diff(&RMat2::identity()) < 1e-15);
        assert!(RMat2::new(1.0, 2.0, 2.0, 4.0).inverse().is_none());
    }

    #[test]
    fn norm_is_sign_and_adjugate_invariant() {
        let m = CMat2::new(
            Complex64::new(1.0, 0.5),
            Complex64::new(-2.0, 0.1),
            Complex64::new(0.3, 0.0),
            Complex64::new(0.7, -0.2),
        );
        assert!((m.norm() - (-m).norm()).abs() < 1e-14);
        assert!((m.norm() - m.adjugate().norm()).abs() < 1e-14);
    }
}
