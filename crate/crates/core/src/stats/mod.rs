//! Goodness-of-fit battery: Z, Kolmogorov-Smirnov, Pearson chi-square and
//! the MonoBit frequency test.

pub mod special;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::transforms::DistributionSpec;
use special::{chi2_sf, erfc, kolmogorov_sf, normal_cdf};

/// Default significance level below which a report is a warning.
pub const DEFAULT_WARN_THRESHOLD: f64 = 0.01;
/// Reported p-values never go below this.
pub const P_VALUE_FLOOR: f64 = 1e-300;
/// Smallest sample the KS test accepts.
pub const KS_MIN_SAMPLES: usize = 20;
/// Chi-square validity rule: expected count per bin and total sample size.
pub const CHI2_MIN_EXPECTED: f64 = 5.0;
pub const CHI2_MIN_SAMPLES: u64 = 13;
pub const MONOBIT_MIN_BITS: usize = 100;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("empty sample")]
    EmptySample,
    #[error("sample of size {got} is below the minimum of {min}")]
    SampleTooSmall { got: u64, min: u64 },
    #[error("sample contains a non-finite value at index {0}")]
    NonFiniteSample(usize),
    #[error("bin {bin} has expected count {expected}, below the minimum of 5")]
    BinTooSparse { bin: usize, expected: f64 },
    #[error("observed total {observed} does not match expected total {expected}")]
    CountMismatch { observed: u64, expected: f64 },
    #[error("need at least two bins, got {0}")]
    TooFewBins(usize),
    #[error("invalid scale {0}")]
    InvalidScale(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TestKind {
    Z,
    #[serde(rename = "KS")]
    Ks,
    ChiSquare,
    MonoBit,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Verdict {
    Pass,
    Warn,
}

/// What a test compared the sample against.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TestTarget {
    Distribution { spec: DistributionSpec },
    BitUniform,
    /// Caller-supplied expected counts or CDF with no named distribution.
    Unspecified,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub test: TestKind,
    pub statistic: f64,
    pub p_value: f64,
    pub sample_size: u64,
    pub target: TestTarget,
    pub verdict: Verdict,
    pub warn_threshold: f64,
}

impl TestReport {
    fn new(test: TestKind, statistic: f64, p_value: f64, sample_size: u64, target: TestTarget) -> Self {
        let p_value = if p_value.is_nan() { P_VALUE_FLOOR } else { p_value.clamp(P_VALUE_FLOOR, 1.0) };
        let mut report = Self {
            test,
            statistic,
            p_value,
            sample_size,
            target,
            verdict: Verdict::Pass,
            warn_threshold: DEFAULT_WARN_THRESHOLD,
        };
        report.verdict = report.judge();
        report
    }

    fn judge(&self) -> Verdict {
        if self.p_value < self.warn_threshold {
            Verdict::Warn
        } else {
            Verdict::Pass
        }
    }

    /// Re-judges the report at a different significance level.
    pub fn with_threshold(mut self, threshold: f64) -> Self {
        self.warn_threshold = threshold;
        self.verdict = self.judge();
        self
    }

    pub fn with_target(mut self, target: TestTarget) -> Self {
        self.target = target;
        self
    }

    pub fn is_warn(&self) -> bool {
        self.verdict == Verdict::Warn
    }
}

fn check_finite(samples: &[f64]) -> Result<(), StatsError> {
    match samples.iter().position(|x| !x.is_finite()) {
        Some(i) => Err(StatsError::NonFiniteSample(i)),
        None => Ok(()),
    }
}

/// Two-sided one-sample Z test of the mean against a known `mu`, `sigma`.
pub fn z_test(samples: &[f64], mu: f64, sigma: f64) -> Result<TestReport, StatsError> {
    if samples.is_empty() {
        return Err(StatsError::EmptySample);
    }
    if !(sigma > 0.0) {
        return Err(StatsError::InvalidScale(sigma));
    }
    check_finite(samples)?;
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let z = (mean - mu) / (sigma / n.sqrt());
    // 2 (1 - Phi(|z|)) computed on the lower tail to keep precision.
    let p = 2.0 * normal_cdf(-z.abs());
    Ok(TestReport::new(TestKind::Z, z, p, samples.len() as u64, TestTarget::Unspecified))
}

/// Two-sided one-sample Kolmogorov-Smirnov test against `cdf`.
pub fn ks_test<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> Result<TestReport, StatsError> {
    let n = samples.len();
    if n < KS_MIN_SAMPLES {
        return Err(StatsError::SampleTooSmall { got: n as u64, min: KS_MIN_SAMPLES as u64 });
    }
    check_finite(samples)?;
    let mut sorted = samples.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    let d = ks_statistic_sorted(&sorted, cdf);
    Ok(TestReport::new(TestKind::Ks, d, kolmogorov_sf(d, n), n as u64, TestTarget::Unspecified))
}

/// `max_i max(i/n - F(x_i), F(x_i) - (i-1)/n)` over sorted samples.
pub fn ks_statistic_sorted<F: Fn(f64) -> f64>(sorted: &[f64], cdf: F) -> f64 {
    let n = sorted.len() as f64;
    sorted.iter().enumerate().fold(0.0f64, |d, (i, &x)| {
        let f = cdf(x);
        let above = (i as f64 + 1.0) / n - f;
        let below = f - i as f64 / n;
        d.max(above).max(below)
    })
}

/// Pearson chi-square goodness-of-fit with `k - 1` degrees of freedom.
pub fn chi_square_test(observed: &[u64], expected: &[f64]) -> Result<TestReport, StatsError> {
    let k = observed.len();
    if k != expected.len() {
        return Err(StatsError::CountMismatch {
            observed: observed.iter().sum(),
            expected: expected.iter().sum(),
        });
    }
    if k < 2 {
        return Err(StatsError::TooFewBins(k));
    }
    if let Some((bin, &e)) = expected.iter().enumerate().find(|(_, e)| !(**e >= CHI2_MIN_EXPECTED)) {
        return Err(StatsError::BinTooSparse { bin, expected: e });
    }
    let total: u64 = observed.iter().sum();
    if total < CHI2_MIN_SAMPLES {
        return Err(StatsError::SampleTooSmall { got: total, min: CHI2_MIN_SAMPLES });
    }
    let expected_total: f64 = expected.iter().sum();
    if total as f64 != expected_total.round() {
        return Err(StatsError::CountMismatch { observed: total, expected: expected_total });
    }
    let stat: f64 = observed
        .iter()
        .zip(expected)
        .map(|(&o, &e)| {
            let diff = o as f64 - e;
            diff * diff / e
        })
        .sum();
    let p = chi2_sf(stat, (k - 1) as u32);
    Ok(TestReport::new(TestKind::ChiSquare, stat, p, total, TestTarget::Unspecified))
}

/// Counts samples into `bins` cells of equal probability under `cdf`.
pub fn equiprobable_counts<F: Fn(f64) -> f64>(samples: &[f64], cdf: F, bins: usize) -> Vec<u64> {
    let mut counts = vec![0u64; bins];
    for &x in samples {
        let cell = ((cdf(x) * bins as f64) as usize).min(bins - 1);
        counts[cell] += 1;
    }
    counts
}

/// Chi-square test of continuous samples using equal-probability bins.
pub fn chi_square_continuous(samples: &[f64], spec: &DistributionSpec, bins: usize) -> Result<TestReport, StatsError> {
    check_finite(samples)?;
    let counts = equiprobable_counts(samples, |x| spec.cdf(x), bins);
    let expected = vec![samples.len() as f64 / bins as f64; bins];
    Ok(chi_square_test(&counts, &expected)?
        .with_target(TestTarget::Distribution { spec: *spec }))
}

/// Chi-square test of integer samples from `{a, ..., b-1}`. Values are
/// grouped into `min(bins, b - a)` cells of (near) equal width; expected
/// counts are proportional to the number of values per cell. Samples
/// outside the support land in the nearest edge cell, which the test then
/// flags through the inflated count.
pub fn chi_square_uniform_int(samples: &[f64], a: i64, b: i64, bins: usize) -> Result<TestReport, StatsError> {
    check_finite(samples)?;
    let width = (b as i128 - a as i128) as f64;
    let k = (bins as f64).min(width) as usize;
    let cell_of = |v: f64| -> usize {
        let off = (v.floor() - a as f64).clamp(0.0, width - 1.0);
        ((off * k as f64 / width) as usize).min(k - 1)
    };
    let mut counts = vec![0u64; k];
    for &x in samples {
        counts[cell_of(x)] += 1;
    }
    // Values per cell: cell j holds offsets with floor(off * k / width) = j.
    let n = samples.len() as f64;
    let expected: Vec<f64> = (0..k)
        .map(|j| {
            let lo = (j as f64 * width / k as f64).ceil();
            let hi = ((j + 1) as f64 * width / k as f64).ceil();
            n * (hi - lo) / width
        })
        .collect();
    Ok(chi_square_test(&counts, &expected)?
        .with_target(TestTarget::Distribution { spec: DistributionSpec::UniformInt { a, b } }))
}

/// NIST SP 800-22 frequency (MonoBit) test over individual bits.
pub fn monobit_test(bits: &[bool]) -> Result<TestReport, StatsError> {
    let ones = bits.iter().filter(|&&b| b).count() as u64;
    monobit_from_counts(ones, bits.len() as u64)
}

/// MonoBit over all 64 bits of each word.
pub fn monobit_test_words(words: &[u64]) -> Result<TestReport, StatsError> {
    let ones: u64 = words.iter().map(|w| w.count_ones() as u64).sum();
    monobit_from_counts(ones, 64 * words.len() as u64)
}

fn monobit_from_counts(ones: u64, n: u64) -> Result<TestReport, StatsError> {
    if n < MONOBIT_MIN_BITS as u64 {
        return Err(StatsError::SampleTooSmall { got: n, min: MONOBIT_MIN_BITS as u64 });
    }
    let sum = 2.0 * ones as f64 - n as f64;
    let s = sum.abs() / (n as f64).sqrt();
    let p = erfc(s / std::f64::consts::SQRT_2);
    Ok(TestReport::new(TestKind::MonoBit, s, p, n, TestTarget::BitUniform))
}
