//! Dirichlet boxes `[0, N]`: node counting, eigenpairs, IDOS and resolvents.

use alloc::vec::Vec;
use core::f64::consts::PI;

use num_complex::Complex64;

use crate::ensemble::{sample_stream, Couplings, DisorderModel, Realization};
use crate::error::{Error, Result};
use crate::exec::Runner;
use crate::linalg::Vec2;
use crate::lyapunov::{check_grid, ScalingFit};
use crate::prufer::CriticalEnergy;
use crate::quadrature::gauss_legendre;
use crate::stats::Welford;
use crate::transfer::{cos_sinc_real, position_propagator, ComplexEnergy, Coupling};

/// Phases within this distance of a multiple of π count as a zero of `ψ(N)`.
pub const NODE_SNAP: f64 = 1e-9;

/// `δ`-couplings on `[0, N]` with Dirichlet ends; sites `0` and `N` carry no jump.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteBox {
    pub n: usize,
    /// Couplings of sites `1..N`.
    pub realization: Realization,
}

impl FiniteBox {
    pub fn new(n: usize, realization: Realization) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidParameter(
                "box length must be positive".into(),
            ));
        }
        realization.check_covers(1, n as i64 - 1)?;
        Ok(Self { n, realization })
    }

    /// Box of length `n` filled with realization `stream` of the model.
    pub fn sample(model: &DisorderModel, seed: u64, stream: u64, n: usize) -> Result<Self> {
        if n < 2 {
            return Self::new(n, Realization::from_values(0, Vec::new()));
        }
        Self::new(n, sample_stream(model, seed, stream, 1, n as i64 - 1)?)
    }

    /// Constant coupling `v` at every interior site.
    pub fn constant(n: usize, v: f64) -> Result<Self> {
        Self::new(
            n,
            Realization::from_values(0, alloc::vec![v; n.saturating_sub(1)]),
        )
    }

    pub fn len(&self) -> f64 {
        self.n as f64
    }
}

impl Couplings for FiniteBox {
    #[inline]
    fn coupling(&self, site: i64) -> f64 {
        if site <= 0 || site >= self.n as i64 {
            0.0
        } else {
            self.realization.coupling(site)
        }
    }
    fn coverage(&self) -> (i64, i64) {
        (0, self.n as i64)
    }
}

/// Scaled Prüfer angle `Φ = jπ + ρ` of the Dirichlet solution at `x = N`,
/// for `E > 0`, with `ψ = r sin Φ`, `ψ'/k = r cos Φ`.
fn prufer_end(e: f64, bx: &FiniteBox) -> (u64, f64) {
    let k = libm::sqrt(e);
    let (mut j, mut rho) = (0u64, 0.0f64);
    for n in 1..=bx.n {
        rho += k;
        let turns = libm::floor(rho / PI);
        j += turns as u64;
        rho -= turns * PI;
        if n < bx.n {
            let v = bx.realization.coupling(n as i64);
            if v != 0.0 && rho != 0.0 {
                // ψ is continuous at the jump, so ρ stays in [0, π).
                let (s, c) = libm::sincos(rho);
                rho = libm::atan2(s, c + v / k * s);
            }
        }
    }
    (j, rho)
}

/// Total Prüfer phase `Φ_N(E)`; continuous and increasing for `E > 0`.
pub fn prufer_phase(e: f64, bx: &FiniteBox) -> f64 {
    let (j, rho) = prufer_end(e, bx);
    j as f64 * PI + rho
}

/// Zeros in `(0, N]` of the Dirichlet solution by sign changes of `ψ`. Used
/// for `E ≤ 0`, where each unit cell holds at most one zero.
fn count_nonpositive(e: f64, bx: &FiniteBox) -> u64 {
    let (c, s) = cos_sinc_real(e, 1.0);
    let (mut dpsi, mut psi) = (1.0f64, 0.0f64);
    let mut count = 0;
    for n in 1..=bx.n {
        let prev = psi;
        let nd = c * dpsi - e * s * psi;
        let np = s * dpsi + c * psi;
        dpsi = nd;
        psi = np;
        if prev != 0.0 && (psi == 0.0 || (psi > 0.0) != (prev > 0.0)) {
            count += 1;
        }
        if n < bx.n {
            dpsi += bx.realization.coupling(n as i64) * psi;
        }
        let r = libm::hypot(dpsi, psi);
        dpsi /= r;
        psi /= r;
    }
    // ψ(N) about to vanish: E sits on an eigenvalue.
    if psi != 0.0 && psi.abs() < NODE_SNAP && dpsi * psi < 0.0 {
        count += 1;
    }
    count
}

/// `#{eigenvalues of H_N ≤ E}`, counted as the zeros of the Dirichlet
/// solution in `(0, N]` by Prüfer winding.
///
/// Eigenvalues closer to `E` than the phase resolution [`NODE_SNAP`] count as
/// `≤ E`, which makes the identity `count_nodes(E_l) = N·l` exact in floating
/// point.
pub fn count_nodes(e: f64, bx: &FiniteBox) -> u64 {
    if e <= 0.0 {
        return count_nonpositive(e, bx);
    }
    let (j, rho) = prufer_end(e, bx);
    j + u64::from(PI - rho < NODE_SNAP)
}

/// Mean `count_nodes(E)/N` with its standard error across realizations.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct IdosEstimate {
    pub energy: f64,
    pub value: f64,
    pub std_error: f64,
    pub n: usize,
    pub samples: usize,
}

/// Smallest box length accepted by the IDOS estimators.
pub const MIN_BOX: usize = 50;

/// Direct IDOS at one energy.
pub fn idos_direct<R: Runner>(
    runner: &R,
    e: f64,
    model: &DisorderModel,
    n: usize,
    samples: usize,
    seed: u64,
) -> Result<IdosEstimate> {
    Ok(idos_curve(runner, &[e], model, n, samples, seed)?.remove(0))
}

/// Direct IDOS on an energy grid; every energy sees the same boxes.
pub fn idos_curve<R: Runner>(
    runner: &R,
    energies: &[f64],
    model: &DisorderModel,
    n: usize,
    samples: usize,
    seed: u64,
) -> Result<Vec<IdosEstimate>> {
    if n < MIN_BOX {
        return Err(Error::Budget(alloc::format!(
            "box length {n} below {MIN_BOX}"
        )));
    }
    if samples == 0 {
        return Err(Error::Budget("no realizations requested".into()));
    }
    model.validate()?;
    let counts: Vec<Vec<u64>> =
        runner.run(samples, |r| match FiniteBox::sample(model, seed, r, n) {
            Ok(bx) => energies.iter().map(|&e| count_nodes(e, &bx)).collect(),
            Err(_) => Vec::new(),
        });
    Ok(energies
        .iter()
        .enumerate()
        .map(|(i, &e)| {
            let w: Welford = counts.iter().map(|c| c[i] as f64 / n as f64).collect();
            IdosEstimate {
                energy: e,
                value: w.mean,
                std_error: w.std_error(),
                n,
                samples,
            }
        })
        .collect())
}

/// Fits `l − 𝒩^{E_l − ε} ≈ c ε^{1/2}` with `𝒩` from [`idos_curve`].
pub fn vanhove_fit<R: Runner>(
    runner: &R,
    ce: &CriticalEnergy,
    model: &DisorderModel,
    epsilon_grid: &[f64],
    n: usize,
    samples: usize,
    seed: u64,
) -> Result<(ScalingFit, Vec<IdosEstimate>)> {
    check_grid(epsilon_grid)?;
    let energies: Vec<f64> = epsilon_grid.iter().map(|e| ce.e_l - e).collect();
    let curve = idos_curve(runner, &energies, model, n, samples, seed)?;
    let l = ce.l as f64;
    for (eps, p) in epsilon_grid.iter().zip(&curve) {
        let deficit = l - p.value;
        if !(deficit > 2.0 * p.std_error) {
            let needed = libm::ceil(
                samples as f64 * libm::pow(3.0 * p.std_error / deficit.abs().max(1e-300), 2.0),
            );
            return Err(Error::StatisticalNoise {
                epsilon: *eps,
                value: deficit,
                stderr: p.std_error,
                required_samples: needed.min(usize::MAX as f64) as usize,
            });
        }
    }
    let fit = ScalingFit::from_points(
        epsilon_grid.to_vec(),
        curve.iter().map(|p| l - p.value).collect(),
        curve.iter().map(|p| p.std_error).collect(),
        (0.5, ce.d_plus / PI),
    )?;
    Ok((fit, curve))
}

/// A point below the spectrum of the box.
pub fn spectrum_floor(bx: &FiniteBox) -> f64 {
    let mut e = -1.0;
    while count_nodes(e, bx) > 0 {
        e *= 2.0;
    }
    e
}

/// Eigenvalues in `(a, b]` to absolute accuracy `tol`, ascending.
///
/// Each eigenvalue is isolated by bisection on the node count and then
/// refined on the continuous phase `Φ_N(E) = mπ`.
pub fn eigenvalues(bx: &FiniteBox, a: f64, b: f64, tol: f64) -> Result<Vec<f64>> {
    if !(a < b) || !a.is_finite() || !b.is_finite() || !(tol > 0.0) {
        return Err(Error::InvalidParameter(alloc::format!(
            "window ({a}, {b}], tol {tol}"
        )));
    }
    let (ca, cb) = (count_nodes(a, bx), count_nodes(b, bx));
    let mut out = Vec::with_capacity((cb - ca) as usize);
    isolate(bx, (a, ca), (b, cb), tol, &mut out);
    Ok(out)
}

fn isolate(bx: &FiniteBox, lo: (f64, u64), hi: (f64, u64), tol: f64, out: &mut Vec<f64>) {
    if hi.1 == lo.1 {
        return;
    }
    if hi.1 == lo.1 + 1 {
        out.push(refine(bx, lo.0, hi.0, hi.1, tol));
        return;
    }
    let mid = 0.5 * (lo.0 + hi.0);
    if hi.0 - lo.0 <= tol {
        // Degenerate to within tolerance.
        for _ in lo.1..hi.1 {
            out.push(mid);
        }
        return;
    }
    let m = (mid, count_nodes(mid, bx));
    isolate(bx, lo, m, tol, out);
    isolate(bx, m, hi, tol, out);
}

/// The `m`-th eigenvalue in `(lo, hi]`.
fn refine(bx: &FiniteBox, mut lo: f64, mut hi: f64, m: u64, tol: f64) -> f64 {
    if lo <= 0.0 {
        while hi - lo > tol && lo <= 0.0 {
            let mid = 0.5 * (lo + hi);
            if count_nodes(mid, bx) >= m {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        if hi - lo <= tol {
            return hi;
        }
    }
    // Illinois false position on Φ_N(E) − mπ.
    let target = m as f64 * PI;
    let mut flo = prufer_phase(lo, bx) - target;
    let mut fhi = prufer_phase(hi, bx) - target;
    if fhi <= 0.0 {
        return hi;
    }
    if flo >= 0.0 {
        return lo;
    }
    let mut side = 0i8;
    for _ in 0..200 {
        if hi - lo <= tol {
            break;
        }
        let mut x = (lo * fhi - hi * flo) / (fhi - flo);
        if !(x > lo && x < hi) {
            x = 0.5 * (lo + hi);
        }
        let fx = prufer_phase(x, bx) - target;
        if fx == 0.0 {
            return x;
        }
        if fx < 0.0 {
            lo = x;
            flo = fx;
            if side == -1 {
                fhi *= 0.5;
            }
            side = -1;
        } else {
            hi = x;
            fhi = fx;
            if side == 1 {
                flo *= 0.5;
            }
            side = 1;
        }
        // Stop once the interpolation has pinned the root to rounding level.
        if fx.abs() < 4.0 * f64::EPSILON * target.max(1.0) {
            return x;
        }
    }
    0.5 * (lo + hi)
}

/// `(∫₀¹ c², ∫₀¹ c s, ∫₀¹ s²)` for the free solutions `c = cos kt`,
/// `s = sin(kt)/k`, so that `∫ cell ψ² = a² I_cc + 2ab I_cs + b² I_ss` for
/// `ψ(0) = a`, `ψ'(0) = b`.
fn cell_integrals(e: f64) -> (f64, f64, f64) {
    if e >= 1.0 {
        let k = libm::sqrt(e);
        let (s2, _) = libm::sincos(2.0 * k);
        let sk = libm::sin(k);
        let icc = 0.5 + s2 / (4.0 * k);
        let ics = sk * sk / (2.0 * e);
        let iss = (0.5 - s2 / (4.0 * k)) / e;
        return (icc, ics, iss);
    }
    let (x, w) = gauss_legendre::<16>();
    let (mut icc, mut ics, mut iss) = (0.0, 0.0, 0.0);
    for (xi, wi) in x.iter().zip(&w) {
        let t = 0.5 * (xi + 1.0);
        let (c, s) = cos_sinc_real(e, t);
        icc += 0.5 * wi * c * c;
        ics += 0.5 * wi * c * s;
        iss += 0.5 * wi * s * s;
    }
    (icc, ics, iss)
}

/// The Dirichlet solution at eigenvalue `e`: states `(ψ', ψ)` at `n⁺` for
/// each cell start `n = 0..N`, normalized in `L²(0, N)`.
///
/// A localized state shot from one end picks up the growing solution past
/// its peak, so it is shot from both ends and the halves are joined at the
/// cell maximizing `log|u_L| + log|u_R|`, which sits at the localization
/// centre where both are accurate.
fn eigenstates(e: f64, bx: &FiniteBox) -> Vec<Vec2<f64>> {
    let n = bx.n;
    let (c, s) = cos_sinc_real(e, 1.0);
    let w = 1.0 / libm::sqrt(e.abs()).max(1.0);
    let size = |x: Vec2<f64>| libm::sqrt(x.x * x.x * w * w + x.y * x.y);
    // Left: forward from (ψ', ψ)(0) = (1, 0).
    let mut left = Vec::with_capacity(n);
    let mut left_log = Vec::with_capacity(n);
    let mut x = Vec2::new(1.0f64, 0.0);
    let mut scale = 0.0;
    for i in 0..n {
        let r = size(x);
        x = x.scale(1.0 / r);
        scale += libm::log(r);
        left.push(x);
        left_log.push(scale);
        x = Vec2::new(c * x.x - e * s * x.y, s * x.x + c * x.y);
        if i + 1 < n {
            x.x += bx.realization.coupling(i as i64 + 1) * x.y;
        }
    }
    // Right: backward from (ψ', ψ)(N) = (1, 0); the state at n⁺ is reached
    // by the inverse free step, then the jump at n is undone.
    let mut right = alloc::vec![Vec2::new(0.0, 0.0); n];
    let mut right_log = alloc::vec![0.0; n];
    let mut x = Vec2::new(1.0f64, 0.0);
    let mut scale = 0.0;
    for i in (0..n).rev() {
        x = Vec2::new(c * x.x + e * s * x.y, -s * x.x + c * x.y);
        let r = size(x);
        x = x.scale(1.0 / r);
        scale += libm::log(r);
        right[i] = x;
        right_log[i] = scale;
        if i > 0 {
            x.x -= bx.realization.coupling(i as i64) * x.y;
        }
    }
    let m = (0..n)
        .max_by(|&a, &b| (left_log[a] + right_log[a]).total_cmp(&(left_log[b] + right_log[b])))
        .unwrap_or(0);
    // λ u_R(m) ≈ u_L(m) in least squares; both are unit vectors there.
    let dot = left[m].x * right[m].x * w * w + left[m].y * right[m].y;
    let sign = if dot < 0.0 { -1.0 } else { 1.0 };
    let peak = left_log[m];
    let mut states = Vec::with_capacity(n);
    for i in 0..n {
        let st = if i <= m {
            left[i].scale(libm::exp(left_log[i] - peak))
        } else {
            right[i].scale(sign * libm::exp(right_log[i] - right_log[m]))
        };
        states.push(st);
    }
    let (icc, ics, iss) = cell_integrals(e);
    let norm2: f64 = states
        .iter()
        .map(|st| {
            let (b, a) = (st.x, st.y);
            a * a * icc + 2.0 * a * b * ics + b * b * iss
        })
        .sum();
    let inv = 1.0 / libm::sqrt(norm2);
    for st in states.iter_mut() {
        *st = st.scale(inv);
    }
    states
}

/// `ψ(x)` from the stored cell states.
fn eval_state(e: f64, states: &[Vec2<f64>], x: f64) -> f64 {
    let n = (libm::floor(x).max(0.0) as usize).min(states.len() - 1);
    let t = x - n as f64;
    let (c, s) = cos_sinc_real(e, t);
    let st = states[n];
    s * st.x + c * st.y
}

/// Eigenpairs of a box sampled at Gauss–Legendre nodes.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EigenData {
    pub eigenvalues: Vec<f64>,
    /// Quadrature nodes in `[0, N]`: [`EIGEN_NODES`] per unit cell.
    pub grid: Vec<f64>,
    pub weights: Vec<f64>,
    /// `eigenfunctions[k][i] = ψ_k(grid[i])`, normalized in `L²(0, N)`.
    pub eigenfunctions: Vec<Vec<f64>>,
    /// Shooting residual `|ψ_k(N)|` of each normalized eigenfunction.
    pub residuals: Vec<f64>,
}

pub const EIGEN_NODES: usize = 16;

impl EigenData {
    /// `∫ ψ_i ψ_j` by grid quadrature.
    pub fn overlap(&self, i: usize, j: usize) -> f64 {
        let (a, b) = (&self.eigenfunctions[i], &self.eigenfunctions[j]);
        self.weights
            .iter()
            .zip(a.iter().zip(b))
            .map(|(w, (x, y))| w * x * y)
            .sum()
    }
}

/// Whether an eigenvalue lies within the node-count resolution of `e`.
fn on_eigenvalue(e: f64, bx: &FiniteBox, tol: f64) -> bool {
    if e > 0.0 {
        let r = prufer_phase(e, bx) % PI;
        r < NODE_SNAP || PI - r < NODE_SNAP
    } else {
        count_nodes(e - tol, bx) != count_nodes(e + tol, bx)
    }
}

/// All eigenpairs of the box with eigenvalue in `[a, b]`.
///
/// The count is certified by `count_nodes(b) − count_nodes(a)`. An end of the
/// window that sits on an eigenvalue is moved outward in steps starting at
/// `tol`, so that eigenvalue is included.
pub fn eigen_solve(bx: &FiniteBox, window: (f64, f64), tol: f64) -> Result<EigenData> {
    let (mut a, mut b) = window;
    if !(a < b) {
        return Err(Error::InvalidParameter(alloc::format!(
            "empty window ({a}, {b}]"
        )));
    }
    let mut step = tol;
    while on_eigenvalue(a, bx, tol) {
        a -= step;
        step *= 2.0;
    }
    let mut step = tol;
    while on_eigenvalue(b, bx, tol) {
        b += step;
        step *= 2.0;
    }
    let eigenvalues = eigenvalues(bx, a, b, tol)?;
    let (xq, wq) = gauss_legendre::<EIGEN_NODES>();
    let mut grid = Vec::with_capacity(bx.n * EIGEN_NODES);
    let mut weights = Vec::with_capacity(bx.n * EIGEN_NODES);
    for n in 0..bx.n {
        for (x, w) in xq.iter().zip(&wq) {
            grid.push(n as f64 + 0.5 * (x + 1.0));
            weights.push(0.5 * w);
        }
    }
    let mut eigenfunctions = Vec::with_capacity(eigenvalues.len());
    let mut residuals = Vec::with_capacity(eigenvalues.len());
    for &e in &eigenvalues {
        let st = eigenstates(e, bx);
        eigenfunctions.push(grid.iter().map(|&x| eval_state(e, &st, x)).collect());
        residuals.push(eval_state(e, &st, bx.len()).abs());
    }
    Ok(EigenData {
        eigenvalues,
        grid,
        weights,
        eigenfunctions,
        residuals,
    })
}

/// `(z − H_N)^{-1}(x, y)` by the two Dirichlet shooting solutions.
pub fn box_green(bx: &FiniteBox, z: ComplexEnergy, x: f64, y: f64) -> Result<Complex64> {
    let len = bx.len();
    if !(0.0..=len).contains(&x) || !(0.0..=len).contains(&y) {
        return Err(Error::InvalidParameter(alloc::format!(
            "({x}, {y}) outside [0, {len}]"
        )));
    }
    let (lo, hi) = if x <= y { (x, y) } else { (y, x) };
    let start = Vec2::new(Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0));
    let left = position_propagator(z, bx, Coupling::Delta, lo, 0.0)?;
    let right = position_propagator(z, bx, Coupling::Delta, hi, len)?;
    // Both solutions are carried to `lo` to form the Wronskian there.
    let mid = position_propagator(z, bx, Coupling::Delta, lo, hi)?;
    let ul = left.matrix.apply(start);
    let ur_hi = right.matrix.apply(start);
    let ur_lo = mid.matrix.apply(ur_hi);
    let w = ul.y * ur_lo.x - ul.x * ur_lo.y;
    // The scale factors cancel except for the one carrying u_R from hi to lo.
    Ok(ul.y * ur_hi.y / w * libm::exp(-mid.log_scale))
}

/// Eigen-expansion oracle for the box resolvent.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenGreenOptions {
    /// Eigenvalues up to this energy are summed.
    pub cutoff: f64,
    /// Reference energies whose resolvents absorb the tail of the sum.
    pub references: Vec<ComplexEnergy>,
    pub tol: f64,
}

/// `Σ_k ψ_k(x) ψ_k(y) / (z − E_k)` at each pair, with the tail beyond the
/// cutoff resummed around reference energies `r_1, …, r_p`.
///
/// `G(z)` is the Newton interpolant of `G` at the references plus
/// `(−1)^p Π(z − r_i) Σ_k ψ_k(x) ψ_k(y) / ((z − E_k) Π(r_i − E_k))`, whose
/// summand decays like `E_k^{−1−p}`. `G(r_i)` comes from [`box_green`].
pub fn eigen_green(
    bx: &FiniteBox,
    z: ComplexEnergy,
    pairs: &[(f64, f64)],
    opts: &EigenGreenOptions,
) -> Result<Vec<Complex64>> {
    let refs: Vec<Complex64> = opts.references.iter().map(|r| r.z()).collect();
    if refs.is_empty() {
        return Err(Error::InvalidParameter("no reference energy".into()));
    }
    let zc = z.z();
    let floor = spectrum_floor(bx);
    let evs = eigenvalues(bx, floor, opts.cutoff, opts.tol)?;
    let mut acc = Vec::with_capacity(pairs.len());
    for &(x, y) in pairs {
        // Divided differences of G over the references, then Newton form.
        let mut dd: Vec<Complex64> = opts
            .references
            .iter()
            .map(|r| box_green(bx, *r, x, y))
            .collect::<Result<_>>()?;
        let mut newton = dd[0];
        let mut w = Complex64::new(1.0, 0.0);
        for j in 1..refs.len() {
            for i in (j..refs.len()).rev() {
                dd[i] = (dd[i] - dd[i - 1]) / (refs[i] - refs[i - j]);
            }
            w *= zc - refs[j - 1];
            newton += w * dd[j];
        }
        acc.push(newton);
    }
    let mut lead = Complex64::new(1.0, 0.0);
    for r in &refs {
        lead *= r - zc;
    }
    for &e in &evs {
        let st = eigenstates(e, bx);
        let mut den = zc - e;
        for r in &refs {
            den *= r - e;
        }
        let f = lead / den;
        for (g, &(x, y)) in acc.iter_mut().zip(pairs) {
            *g += f * (eval_state(e, &st, x) * eval_state(e, &st, y));
        }
    }
    Ok(acc)
}

/// Free-line kernel `(z − H₀)^{-1}(x, y) = e^{ik|x−y|}/(2ik)`.
pub fn free_green(z: ComplexEnergy, x: f64, y: f64) -> Complex64 {
    let k = z.sqrt();
    let i = Complex64::new(0.0, 1.0);
    (i * k * (x - y).abs()).exp() / (2.0 * i * k)
}
