//! Disorder models for the couplings `v_n` and site-keyed reproducible sampling.

use alloc::format;
use alloc::vec::Vec;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Tolerance on `Σ weights = 1` for atomic models.
pub const WEIGHT_TOLERANCE: f64 = 1e-15;

/// An i.i.d. compactly supported coupling distribution.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(
    feature = "serde",
    derive(serde::Serialize, serde::Deserialize),
    serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)
)]
pub enum DisorderModel {
    Uniform {
        lo: f64,
        hi: f64,
    },
    /// `a` with probability `p_a`, otherwise `b`.
    TwoPoint {
        a: f64,
        p_a: f64,
        b: f64,
    },
    Discrete {
        values: Vec<f64>,
        weights: Vec<f64>,
    },
}

/// Exact moments and support hull of a [`DisorderModel`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments {
    pub mean: f64,
    pub variance: f64,
    pub support: (f64, f64),
}

impl Moments {
    /// Second moment of `ṽ = v − v̄`; alias kept for readability at call sites.
    #[inline]
    pub fn centered_second(&self) -> f64 {
        self.variance
    }

    /// Largest `|ṽ|` over the support.
    #[inline]
    pub fn max_centered(&self) -> f64 {
        (self.support.1 - self.mean).max(self.mean - self.support.0)
    }
}

impl DisorderModel {
    /// The default continuous model, `Uniform(0.5, 1.5)`.
    pub fn default_uniform() -> Self {
        DisorderModel::Uniform { lo: 0.5, hi: 1.5 }
    }

    /// The default atomic model, `TwoPoint(1, ½, 3)`.
    pub fn default_two_point() -> Self {
        DisorderModel::TwoPoint {
            a: 1.0,
            p_a: 0.5,
            b: 3.0,
        }
    }

    /// Checks the structural invariants. Degeneracy is reported by [`Self::moments`].
    pub fn validate(&self) -> Result<()> {
        match self {
            DisorderModel::Uniform { lo, hi } => {
                if !lo.is_finite() || !hi.is_finite() {
                    return Err(Error::InvalidModel(format!(
                        "non-finite bounds [{lo}, {hi}]"
                    )));
                }
                if lo > hi {
                    return Err(Error::InvalidModel(format!("lo {lo} exceeds hi {hi}")));
                }
            }
            DisorderModel::TwoPoint { a, p_a, b } => {
                if !a.is_finite() || !b.is_finite() {
                    return Err(Error::InvalidModel(format!("non-finite atoms {a}, {b}")));
                }
                if !(0.0..=1.0).contains(p_a) {
                    return Err(Error::InvalidModel(format!("p_a = {p_a} not in [0, 1]")));
                }
            }
            DisorderModel::Discrete { values, weights } => {
                if values.is_empty() {
                    return Err(Error::InvalidModel("no atoms".into()));
                }
                if values.len() != weights.len() {
                    return Err(Error::InvalidModel(format!(
                        "{} values but {} weights",
                        values.len(),
                        weights.len()
                    )));
                }
                if values.iter().any(|v| !v.is_finite()) {
                    return Err(Error::InvalidModel("non-finite atom".into()));
                }
                if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
                    return Err(Error::InvalidModel(
                        "weights must be finite and nonnegative".into(),
                    ));
                }
                let total: f64 = weights.iter().sum();
                if (total - 1.0).abs() > WEIGHT_TOLERANCE {
                    return Err(Error::InvalidModel(format!(
                        "weights sum to {total}, not 1"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Closed-form mean, variance and support hull. Degenerate models are rejected.
    pub fn moments(&self) -> Result<Moments> {
        self.validate()?;
        let m = match self {
            DisorderModel::Uniform { lo, hi } => {
                let w = hi - lo;
                Moments {
                    mean: 0.5 * (lo + hi),
                    variance: w * w / 12.0,
                    support: (*lo, *hi),
                }
            }
            DisorderModel::TwoPoint { a, p_a, b } => {
                let q = 1.0 - p_a;
                let d = b - a;
                let (lo, hi) = if *p_a == 0.0 {
                    (*b, *b)
                } else if *p_a == 1.0 {
                    (*a, *a)
                } else {
                    (a.min(*b), a.max(*b))
                };
                Moments {
                    mean: p_a * a + q * b,
                    variance: p_a * q * d * d,
                    support: (lo, hi),
                }
            }
            DisorderModel::Discrete { values, weights } => {
                let mean: f64 = values.iter().zip(weights).map(|(v, w)| v * w).sum();
                let variance: f64 = values
                    .iter()
                    .zip(weights)
                    .map(|(v, w)| w * (v - mean) * (v - mean))
                    .sum();
                let (lo, hi) = values
                    .iter()
                    .zip(weights)
                    .filter(|(_, w)| **w > 0.0)
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (v, _)| {
                        (lo.min(*v), hi.max(*v))
                    });
                Moments {
                    mean,
                    variance,
                    support: (lo, hi),
                }
            }
        };
        if !(m.variance > 0.0) {
            return Err(Error::Degenerate);
        }
        Ok(m)
    }

    /// Moments for critical-energy analysis, which needs `v̄ > 0`.
    pub fn critical_moments(&self) -> Result<Moments> {
        let m = self.moments()?;
        if m.mean == 0.0 {
            return Err(Error::ZeroMean);
        }
        if m.mean < 0.0 {
            return Err(Error::NonPositiveMean(m.mean));
        }
        Ok(m)
    }

    /// Maps a uniform variate `u ∈ [0, 1)` to a coupling.
    #[inline]
    pub fn quantile(&self, u: f64) -> f64 {
        match self {
            DisorderModel::Uniform { lo, hi } => lo + (hi - lo) * u,
            DisorderModel::TwoPoint { a, p_a, b } => {
                if u < *p_a {
                    *a
                } else {
                    *b
                }
            }
            DisorderModel::Discrete { values, weights } => {
                let mut acc = 0.0;
                for (v, w) in values.iter().zip(weights) {
                    acc += w;
                    if u < acc {
                        return *v;
                    }
                }
                // Rounding in the cumulative sum; fall back to the last atom with weight.
                let last = weights
                    .iter()
                    .rposition(|w| *w > 0.0)
                    .unwrap_or(values.len() - 1);
                values[last]
            }
        }
    }

    /// Nodes and weights computing `𝐄 f(v)`: the atoms themselves, or an
    /// 8-point Gauss-Legendre rule for `Uniform` (exact for degree ≤ 15).
    pub fn expectation_rule(&self) -> Vec<(f64, f64)> {
        match self {
            DisorderModel::Uniform { lo, hi } => {
                let (x, w) = crate::quadrature::gauss_legendre::<8>();
                let (mid, half) = (0.5 * (lo + hi), 0.5 * (hi - lo));
                x.iter()
                    .zip(w.iter())
                    .map(|(x, w)| (mid + half * x, 0.5 * w))
                    .collect()
            }
            _ => self
                .atoms()
                .unwrap_or_default()
                .into_iter()
                .filter(|(_, w)| *w > 0.0)
                .collect(),
        }
    }

    /// Atoms and weights for models with finite support, `None` for `Uniform`.
    pub fn atoms(&self) -> Option<Vec<(f64, f64)>> {
        match self {
            DisorderModel::Uniform { .. } => None,
            DisorderModel::TwoPoint { a, p_a, b } => Some(alloc::vec![(*a, *p_a), (*b, 1.0 - p_a)]),
            DisorderModel::Discrete { values, weights } => Some(
                values
                    .iter()
                    .copied()
                    .zip(weights.iter().copied())
                    .collect(),
            ),
        }
    }
}

/// Sequential coupling draws starting at a given site.
///
/// Site `n` of stream `s` under master seed `seed` always consumes the same
/// ChaCha8 output word, so any window of sites can be regenerated on its own.
#[derive(Clone)]
pub struct SiteStream<'a> {
    model: &'a DisorderModel,
    rng: ChaCha8Rng,
}

const SITE_BIAS: i128 = 1 << 63;

#[inline]
fn word_pos(site: i64) -> u128 {
    ((site as i128 + SITE_BIAS) as u128) * 2
}

impl<'a> SiteStream<'a> {
    pub fn new(model: &'a DisorderModel, seed: u64, stream: u64, first_site: i64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        rng.set_word_pos(word_pos(first_site));
        Self { model, rng }
    }

    /// Uniform variate on `[0, 1)` with 53 random bits.
    #[inline]
    pub fn next_uniform(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}

impl Iterator for SiteStream<'_> {
    type Item = f64;

    #[inline]
    fn next(&mut self) -> Option<f64> {
        let u = self.next_uniform();
        Some(self.model.quantile(u))
    }
}

/// Anything that assigns a coupling to integer sites.
pub trait Couplings {
    fn coupling(&self, site: i64) -> f64;
    /// Inclusive site range on which [`Self::coupling`] is defined.
    fn coverage(&self) -> (i64, i64);

    fn check_covers(&self, lo: i64, hi: i64) -> Result<()> {
        let (have_lo, have_hi) = self.coverage();
        if lo > hi || (lo >= have_lo && hi <= have_hi) {
            Ok(())
        } else {
            Err(Error::RangeMismatch {
                have_lo,
                have_hi,
                need_lo: lo,
                need_hi: hi,
            })
        }
    }
}

/// The same coupling at every site; `Constant(0.0)` is the free operator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Constant(pub f64);

impl Couplings for Constant {
    #[inline]
    fn coupling(&self, _site: i64) -> f64 {
        self.0
    }
    fn coverage(&self) -> (i64, i64) {
        (i64::MIN, i64::MAX)
    }
}

/// A concrete finite sample of couplings `v_{m+1}, …, v_n` (`site_offset = m`).
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Realization {
    pub seed: u64,
    pub stream: u64,
    pub site_offset: i64,
    pub values: Vec<f64>,
}

impl Realization {
    /// Explicit couplings for sites `site_offset + 1 ..`.
    pub fn from_values(site_offset: i64, values: Vec<f64>) -> Self {
        Self {
            seed: 0,
            stream: 0,
            site_offset,
            values,
        }
    }

    pub fn first_site(&self) -> i64 {
        self.site_offset + 1
    }

    pub fn last_site(&self) -> i64 {
        self.site_offset + self.values.len() as i64
    }
}

impl Couplings for Realization {
    #[inline]
    fn coupling(&self, site: i64) -> f64 {
        self.values[(site - self.site_offset - 1) as usize]
    }
    fn coverage(&self) -> (i64, i64) {
        (self.first_site(), self.last_site())
    }
}

/// Draws sites `lo..=hi` of stream 0.
pub fn sample(model: &DisorderModel, seed: u64, lo: i64, hi: i64) -> Result<Realization> {
    sample_stream(model, seed, 0, lo, hi)
}

/// Draws sites `lo..=hi` of the given stream; realizations use stream = index.
pub fn sample_stream(
    model: &DisorderModel,
    seed: u64,
    stream: u64,
    lo: i64,
    hi: i64,
) -> Result<Realization> {
    if lo > hi {
        return Err(Error::InvalidRange { lo, hi });
    }
    model.validate()?;
    let len =
        usize::try_from(hi as i128 - lo as i128 + 1).map_err(|_| Error::InvalidRange { lo, hi })?;
    let values = SiteStream::new(model, seed, stream, lo).take(len).collect();
    Ok(Realization {
        seed,
        stream,
        site_offset: lo - 1,
        values,
    })
}
