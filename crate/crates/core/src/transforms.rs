//! Distribution transforms from raw uniform words, and the target
//! distributions every sample stream is audited against.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prng::{raw_to_unit_interval, PrngError, WordSource};
use crate::stats::special::normal_cdf;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TransformError {
    #[error("invalid range: require a < b, got a = {a}, b = {b}")]
    InvalidRange { a: f64, b: f64 },
    #[error("invalid scale {0}: must be positive and finite")]
    InvalidScale(f64),
    #[error("input {0} outside the transform's domain")]
    DomainError(f64),
    #[error("cannot parse distribution {0:?}; expected e.g. normal:0,1 uniform:0,1 int:0,10 laplace:0,1")]
    Parse(String),
}

/// A target distribution.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum DistributionSpec {
    /// Continuous uniform on `[a, b)`.
    UniformReal { a: f64, b: f64 },
    /// Discrete uniform on `{a, ..., b - 1}`.
    UniformInt { a: i64, b: i64 },
    Normal { mu: f64, sigma: f64 },
    Laplace { mu: f64, b: f64 },
}

impl DistributionSpec {
    pub fn standard_normal() -> Self {
        DistributionSpec::Normal { mu: 0.0, sigma: 1.0 }
    }

    pub fn unit_uniform() -> Self {
        DistributionSpec::UniformReal { a: 0.0, b: 1.0 }
    }

    pub fn validate(&self) -> Result<(), TransformError> {
        match *self {
            DistributionSpec::UniformReal { a, b } => {
                if a.is_finite() && b.is_finite() && a < b {
                    Ok(())
                } else {
                    Err(TransformError::InvalidRange { a, b })
                }
            }
            DistributionSpec::UniformInt { a, b } if a >= b => {
                Err(TransformError::InvalidRange { a: a as f64, b: b as f64 })
            }
            DistributionSpec::UniformInt { .. } => Ok(()),
            DistributionSpec::Normal { mu, sigma: scale } | DistributionSpec::Laplace { mu, b: scale } => {
                if !mu.is_finite() {
                    Err(TransformError::DomainError(mu))
                } else if !(scale > 0.0 && scale.is_finite()) {
                    Err(TransformError::InvalidScale(scale))
                } else {
                    Ok(())
                }
            }
        }
    }

    pub fn is_discrete(&self) -> bool {
        matches!(self, DistributionSpec::UniformInt { .. })
    }

    pub fn mean(&self) -> f64 {
        match *self {
            DistributionSpec::UniformReal { a, b } => 0.5 * (a + b),
            DistributionSpec::UniformInt { a, b } => 0.5 * (a as f64 + b as f64 - 1.0),
            DistributionSpec::Normal { mu, .. } | DistributionSpec::Laplace { mu, .. } => mu,
        }
    }

    pub fn std_dev(&self) -> f64 {
        match *self {
            DistributionSpec::UniformReal { a, b } => (b - a) / 12f64.sqrt(),
            DistributionSpec::UniformInt { a, b } => {
                let m = (b as f64) - (a as f64);
                ((m * m - 1.0) / 12.0).sqrt()
            }
            DistributionSpec::Normal { sigma, .. } => sigma,
            DistributionSpec::Laplace { b, .. } => b * 2f64.sqrt(),
        }
    }

    /// Cumulative distribution function.
    pub fn cdf(&self, x: f64) -> f64 {
        match *self {
            DistributionSpec::UniformReal { a, b } => ((x - a) / (b - a)).clamp(0.0, 1.0),
            DistributionSpec::UniformInt { a, b } => {
                let k = (x.floor() - a as f64 + 1.0) / (b as f64 - a as f64);
                k.clamp(0.0, 1.0)
            }
            DistributionSpec::Normal { mu, sigma } => normal_cdf((x - mu) / sigma),
            DistributionSpec::Laplace { mu, b } => {
                let z = (x - mu) / b;
                if z < 0.0 {
                    0.5 * z.exp()
                } else {
                    1.0 - 0.5 * (-z).exp()
                }
            }
        }
    }

    /// Inverse CDF for `p` in `(0, 1)`.
    pub fn quantile(&self, p: f64) -> f64 {
        match *self {
            DistributionSpec::UniformReal { a, b } => a + p * (b - a),
            DistributionSpec::UniformInt { a, b } => {
                (a as f64 + (p * (b as f64 - a as f64)).ceil() - 1.0).max(a as f64)
            }
            DistributionSpec::Normal { mu, sigma } => mu + sigma * standard_normal_quantile(p),
            DistributionSpec::Laplace { mu, b } => {
                if p < 0.5 {
                    mu + b * (2.0 * p).ln()
                } else {
                    mu - b * (2.0 - 2.0 * p).ln()
                }
            }
        }
    }
}

/// Standard normal quantile by bisection on the CDF followed by Newton
/// polishing; accurate to a few ulps over `(1e-300, 1 - 1e-16)`.
fn standard_normal_quantile(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    let (mut lo, mut hi) = (-40.0f64, 40.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if normal_cdf(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-12 {
            break;
        }
    }
    let mut x = 0.5 * (lo + hi);
    for _ in 0..3 {
        let pdf = (-0.5 * x * x).exp() / (2.0 * PI).sqrt();
        if pdf <= 0.0 {
            break;
        }
        x -= (normal_cdf(x) - p) / pdf;
    }
    x
}

impl fmt::Display for DistributionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DistributionSpec::UniformReal { a, b } => write!(f, "uniform:{a},{b}"),
            DistributionSpec::UniformInt { a, b } => write!(f, "int:{a},{b}"),
            DistributionSpec::Normal { mu, sigma } => write!(f, "normal:{mu},{sigma}"),
            DistributionSpec::Laplace { mu, b } => write!(f, "laplace:{mu},{b}"),
        }
    }
}

impl FromStr for DistributionSpec {
    type Err = TransformError;

    /// `normal:MU,SIGMA`, `uniform:A,B`, `int:A,B` (or `uniform-int:A,B`),
    /// `laplace:MU,B`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || TransformError::Parse(s.to_string());
        let (family, params) = s.split_once(':').ok_or_else(err)?;
        let (p0, p1) = params.split_once(',').ok_or_else(err)?;
        let real = |t: &str| t.trim().parse::<f64>().map_err(|_| err());
        let int = |t: &str| t.trim().parse::<i64>().map_err(|_| err());
        let spec = match family.trim() {
            "normal" | "gaussian" => DistributionSpec::Normal { mu: real(p0)?, sigma: real(p1)? },
            "uniform" | "uniform-real" => DistributionSpec::UniformReal { a: real(p0)?, b: real(p1)? },
            "int" | "uniform-int" => DistributionSpec::UniformInt { a: int(p0)?, b: int(p1)? },
            "laplace" => DistributionSpec::Laplace { mu: real(p0)?, b: real(p1)? },
            _ => return Err(err()),
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// `u / 2^64 * (b - a) + a`, kept inside `[a, b)`.
pub fn to_uniform_real(u: u64, a: f64, b: f64) -> Result<f64, TransformError> {
    if !(a < b) || !a.is_finite() || !b.is_finite() {
        return Err(TransformError::InvalidRange { a, b });
    }
    let z = raw_to_unit_interval(u) * (b - a) + a;
    // Rounding in the affine map can land exactly on b for wide ranges.
    Ok(if z >= b { prev_float(b) } else { z })
}

fn prev_float(x: f64) -> f64 {
    if x > 0.0 {
        f64::from_bits(x.to_bits() - 1)
    } else if x < 0.0 {
        f64::from_bits(x.to_bits() + 1)
    } else {
        -f64::from_bits(1)
    }
}

/// `u mod (b - a) + a`.
pub fn to_uniform_int(u: u64, a: i64, b: i64) -> Result<i64, TransformError> {
    if a >= b {
        return Err(TransformError::InvalidRange { a: a as f64, b: b as f64 });
    }
    let width = (b as i128 - a as i128) as u128;
    Ok((a as i128 + (u as u128 % width) as i128) as i64)
}

/// Box-Muller: two independent standard normals from `u0` in `(0, 1]` and
/// `u1` in `[0, 1)`.
pub fn box_muller(u0: f64, u1: f64) -> Result<(f64, f64), TransformError> {
    if !(u0 > 0.0 && u0 <= 1.0) {
        return Err(TransformError::DomainError(u0));
    }
    if !(0.0..1.0).contains(&u1) {
        return Err(TransformError::DomainError(u1));
    }
    let r = (-2.0 * u0.ln()).sqrt();
    let (s, c) = (2.0 * PI * u1).sin_cos();
    Ok((r * c, r * s))
}

/// `sigma * z + mu`.
pub fn scale_normal(z: f64, mu: f64, sigma: f64) -> Result<f64, TransformError> {
    if !(sigma > 0.0) {
        return Err(TransformError::InvalidScale(sigma));
    }
    Ok(sigma * z + mu)
}

/// Inverse-CDF Laplace sample, `mu - b sgn(u) ln(1 - |u|)` for `u` in `(-1, 1)`.
pub fn to_laplace(u: f64, mu: f64, b: f64) -> Result<f64, TransformError> {
    if !(u.abs() < 1.0) {
        return Err(TransformError::DomainError(u));
    }
    if !(b > 0.0) {
        return Err(TransformError::InvalidScale(b));
    }
    if u == 0.0 {
        return Ok(mu);
    }
    Ok(mu - b * u.signum() * (-u.abs()).ln_1p())
}

/// The unit-interval value Box-Muller uses for its radius: raw word 0 is
/// moved to the smallest positive value of the mapping, `2^-53`.
#[inline]
fn radius_uniform(word: u64) -> f64 {
    let u = raw_to_unit_interval(word);
    if u == 0.0 {
        raw_to_unit_interval(1 << 11)
    } else {
        u
    }
}

/// Symmetric map of a raw word onto `(-1, 1)`: the top 53 bits `m` give
/// `(2m + 1) / 2^53 - 1`, which is never 0 or ±1.
#[inline]
fn signed_unit(word: u64) -> f64 {
    // Centred on zero first so `m + 1/2` stays exact in 53 bits.
    let m = (word >> 11) as i64 - (1 << 52);
    (m as f64 + 0.5) * (1.0 / (1u64 << 52) as f64)
}

/// Draws samples of one distribution from a word source. Stateless apart
/// from the cached second Box-Muller normal.
#[derive(Clone, Debug)]
pub struct Sampler {
    spec: DistributionSpec,
    spare_normal: Option<f64>,
}

impl Sampler {
    pub fn new(spec: DistributionSpec) -> Result<Self, TransformError> {
        spec.validate()?;
        Ok(Self { spec, spare_normal: None })
    }

    pub fn spec(&self) -> &DistributionSpec {
        &self.spec
    }

    /// Forgets any cached Box-Muller partner.
    pub fn reset(&mut self) {
        self.spare_normal = None;
    }

    #[inline]
    pub fn sample<W: WordSource + ?Sized>(&mut self, source: &mut W) -> Result<f64, PrngError> {
        // Parameters were validated at construction, so the transform calls
        // below cannot fail.
        Ok(match self.spec {
            DistributionSpec::UniformReal { a, b } => {
                let z = raw_to_unit_interval(source.next_word()?) * (b - a) + a;
                if z >= b {
                    prev_float(b)
                } else {
                    z
                }
            }
            DistributionSpec::UniformInt { a, b } => {
                let width = (b as i128 - a as i128) as u128;
                (a as i128 + (source.next_word()? as u128 % width) as i128) as f64
            }
            DistributionSpec::Normal { mu, sigma } => {
                if let Some(z) = self.spare_normal.take() {
                    return Ok(sigma * z + mu);
                }
                let u0 = radius_uniform(source.next_word()?);
                let u1 = raw_to_unit_interval(source.next_word()?);
                let r = (-2.0 * u0.ln()).sqrt();
                let (s, c) = (2.0 * PI * u1).sin_cos();
                self.spare_normal = Some(r * s);
                sigma * (r * c) + mu
            }
            DistributionSpec::Laplace { mu, b } => {
                let u = signed_unit(source.next_word()?);
                mu - b * u.signum() * (-u.abs()).ln_1p()
            }
        })
    }

    pub fn fill<W: WordSource + ?Sized>(&mut self, source: &mut W, out: &mut [f64]) -> Result<(), PrngError> {
        for slot in out {
            *slot = self.sample(source)?;
        }
        Ok(())
    }
}
