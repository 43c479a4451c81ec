//! Pseudorandom generators, seed provenance, and the OS-keyed CSPRNG.
//!
//! Every generator is driven through a [`GeneratorHandle`], which carries the
//! algorithm, where its seed came from, and the resulting security class.
//! The security class is never declared; it is derived from
//! `(algorithm, seed_source)` so that the policy engine and the runtime agree.

mod csprng;
mod entropy;
mod lcg;
mod mt19937;
mod philox;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use csprng::{CsprngCtr, RESEED_INTERVAL};
pub use entropy::{Clock, EntropySource, FixedClock, OsEntropy, SystemClock};
pub use lcg::WeakLcg;
pub use mt19937::{Mt19937, Mt19937Prefix};
pub use philox::{philox4x32_10, word_at as philox_word_at, Philox4x32};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PrngError {
    #[error("OS entropy device unavailable: {0}")]
    OsEntropyUnavailable(String),
    #[error("system clock unavailable: {0}")]
    ClockUnavailable(String),
    #[error("insecure seed source {0} for a cryptographic generator; only OS entropy is accepted")]
    InsecureSeed(SeedSource),
    #[error("invalid seed source: {0}")]
    InvalidSeedSource(String),
    #[error("replayed word stream exhausted")]
    StreamExhausted,
    #[error("operation requires a {expected} generator, handle is {actual}")]
    WrongAlgorithm { expected: Algorithm, actual: Algorithm },
}

/// Where a seed comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SeedSource {
    OsEntropy,
    SystemTime { resolution_us: u64 },
    Constant { value: u64 },
    /// Uniform in `[lo, hi)`.
    BoundedRange { lo: u64, hi: u64 },
    UserProvided { value: u64 },
}

impl SeedSource {
    pub fn validate(&self) -> Result<(), PrngError> {
        match *self {
            SeedSource::BoundedRange { lo, hi } if lo >= hi => Err(PrngError::InvalidSeedSource(
                format!("bounded range requires lo < hi, got [{lo}, {hi})"),
            )),
            SeedSource::SystemTime { resolution_us: 0 } => Err(PrngError::InvalidSeedSource(
                "system time resolution must be at least 1 us".into(),
            )),
            _ => Ok(()),
        }
    }

    /// Bits of entropy an attacker has to search.
    ///
    /// `window_s` is the attacker's uncertainty about the clock and is only
    /// consulted for `SystemTime`. `UserProvided` seeds have unknown
    /// provenance and yield `None`.
    pub fn effective_entropy_bits(&self, window_s: f64) -> Option<f64> {
        match *self {
            SeedSource::OsEntropy => Some(64.0),
            SeedSource::SystemTime { resolution_us } => {
                Some((window_s * 1e6 / resolution_us as f64).log2().max(0.0))
            }
            SeedSource::Constant { .. } => Some(0.0),
            SeedSource::BoundedRange { lo, hi } => Some(((hi - lo) as f64).log2()),
            SeedSource::UserProvided { .. } => None,
        }
    }
}

impl fmt::Display for SeedSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SeedSource::OsEntropy => write!(f, "os"),
            SeedSource::SystemTime { resolution_us } => write!(f, "time:{resolution_us}"),
            SeedSource::Constant { value } => write!(f, "constant:{value}"),
            SeedSource::BoundedRange { lo, hi } => write!(f, "range:{lo},{hi}"),
            SeedSource::UserProvided { value } => write!(f, "user:{value}"),
        }
    }
}

impl FromStr for SeedSource {
    type Err = PrngError;

    /// Parses `os`, `time[:resolution_us]`, `constant:V`, `range:LO,HI`, `user:V`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = |msg: &str| PrngError::InvalidSeedSource(format!("{msg}: {s:?}"));
        let num = |t: &str| t.trim().parse::<u64>().map_err(|_| bad("expected an unsigned integer"));
        let (kind, arg) = match s.split_once(':') {
            Some((k, a)) => (k, Some(a)),
            None => (s, None),
        };
        let source = match (kind, arg) {
            ("os", None) => SeedSource::OsEntropy,
            ("time", None) => SeedSource::SystemTime { resolution_us: 1 },
            ("time", Some(a)) => SeedSource::SystemTime { resolution_us: num(a)? },
            ("constant", Some(a)) => SeedSource::Constant { value: num(a)? },
            ("user", Some(a)) => SeedSource::UserProvided { value: num(a)? },
            ("range", Some(a)) => {
                let (lo, hi) = a.split_once(',').ok_or_else(|| bad("expected range:LO,HI"))?;
                SeedSource::BoundedRange { lo: num(lo)?, hi: num(hi)? }
            }
            _ => return Err(bad("unknown seed source")),
        };
        source.validate()?;
        Ok(source)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    #[serde(alias = "mt")]
    Mt19937,
    #[serde(alias = "philox")]
    PhiloxCounter,
    #[serde(alias = "lcg")]
    WeakLcg,
    #[serde(alias = "csprng")]
    CsprngCtr,
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Algorithm::Mt19937 => "mt19937",
            Algorithm::PhiloxCounter => "philox",
            Algorithm::WeakLcg => "lcg",
            Algorithm::CsprngCtr => "csprng",
        })
    }
}

impl FromStr for Algorithm {
    type Err = PrngError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mt19937" | "mt" => Ok(Algorithm::Mt19937),
            "philox" | "philox_counter" => Ok(Algorithm::PhiloxCounter),
            "lcg" | "weak_lcg" => Ok(Algorithm::WeakLcg),
            "csprng" | "csprng_ctr" => Ok(Algorithm::CsprngCtr),
            _ => Err(PrngError::InvalidSeedSource(format!("unknown algorithm {s:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SecurityClass {
    Cryptographic,
    Statistical,
    Weak,
}

impl SecurityClass {
    pub fn of(algorithm: Algorithm, seed_source: &SeedSource) -> Self {
        match (algorithm, seed_source) {
            (Algorithm::CsprngCtr, SeedSource::OsEntropy) => SecurityClass::Cryptographic,
            (Algorithm::WeakLcg, _) => SecurityClass::Weak,
            _ => SecurityClass::Statistical,
        }
    }
}

/// Resolves a seed source to a concrete 64-bit seed using the OS entropy
/// device and the system clock.
pub fn seed_from_source(source: &SeedSource) -> Result<u64, PrngError> {
    seed_from_source_with(source, &mut OsEntropy, &SystemClock)
}

/// Like [`seed_from_source`] with injectable entropy and clock.
pub fn seed_from_source_with(
    source: &SeedSource,
    entropy: &mut dyn EntropySource,
    clock: &dyn Clock,
) -> Result<u64, PrngError> {
    source.validate()?;
    match *source {
        SeedSource::OsEntropy => entropy.next_u64(),
        SeedSource::SystemTime { resolution_us } => {
            let now = clock.now_us()?;
            Ok(now - now % resolution_us)
        }
        SeedSource::Constant { value } | SeedSource::UserProvided { value } => Ok(value),
        SeedSource::BoundedRange { lo, hi } => Ok(lo + entropy.next_u64()? % (hi - lo)),
    }
}

/// Maps a raw word onto `[0, 1)` by keeping its top 53 bits, i.e.
/// `floor(word / 2^11) / 2^53`. This is `word / 2^64` rounded down to the
/// nearest double, so `2^64 - 1` stays strictly below one.
#[inline]
pub fn raw_to_unit_interval(word: u64) -> f64 {
    (word >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Anything that yields raw 64-bit words.
pub trait WordSource {
    fn next_word(&mut self) -> Result<u64, PrngError>;
}

/// Replays a recorded word stream, e.g. raw words read back from a file.
#[derive(Debug)]
pub struct ReplayWords<I> {
    words: I,
}

impl<I: Iterator<Item = u64>> ReplayWords<I> {
    pub fn new(words: impl IntoIterator<IntoIter = I>) -> Self {
        Self { words: words.into_iter() }
    }
}

impl<I: Iterator<Item = u64>> WordSource for ReplayWords<I> {
    fn next_word(&mut self) -> Result<u64, PrngError> {
        self.words.next().ok_or(PrngError::StreamExhausted)
    }
}

enum Engine {
    Mt(Box<Mt19937>),
    Philox(Philox4x32),
    Lcg(WeakLcg),
    Csprng(Box<CsprngCtr>),
}

/// A stateful generator together with its seed provenance.
pub struct GeneratorHandle {
    engine: Engine,
    algorithm: Algorithm,
    seed_source: SeedSource,
    seed: Option<u64>,
    draws_emitted: u64,
}

impl GeneratorHandle {
    /// Builds a generator, resolving the seed from the OS entropy device or
    /// the system clock as the source dictates.
    pub fn new(algorithm: Algorithm, seed_source: SeedSource) -> Result<Self, PrngError> {
        Self::with_entropy(algorithm, seed_source, Box::new(OsEntropy), &SystemClock)
    }

    pub fn with_entropy(
        algorithm: Algorithm,
        seed_source: SeedSource,
        mut entropy: Box<dyn EntropySource>,
        clock: &dyn Clock,
    ) -> Result<Self, PrngError> {
        seed_source.validate()?;
        if algorithm == Algorithm::CsprngCtr {
            if seed_source != SeedSource::OsEntropy {
                return Err(PrngError::InsecureSeed(seed_source));
            }
            let engine = Engine::Csprng(Box::new(CsprngCtr::new(entropy)?));
            return Ok(Self { engine, algorithm, seed_source, seed: None, draws_emitted: 0 });
        }
        let seed = seed_from_source_with(&seed_source, entropy.as_mut(), clock)?;
        Ok(Self::seeded(algorithm, seed_source, seed))
    }

    /// Deterministic construction from a concrete seed; provenance is
    /// recorded as user-provided. Refused for the CSPRNG.
    pub fn from_seed(algorithm: Algorithm, seed: u64) -> Result<Self, PrngError> {
        let source = SeedSource::UserProvided { value: seed };
        if algorithm == Algorithm::CsprngCtr {
            return Err(PrngError::InsecureSeed(source));
        }
        Ok(Self::seeded(algorithm, source, seed))
    }

    fn seeded(algorithm: Algorithm, seed_source: SeedSource, seed: u64) -> Self {
        let engine = match algorithm {
            Algorithm::Mt19937 => Engine::Mt(Box::new(Mt19937::from_seed(seed))),
            Algorithm::PhiloxCounter => Engine::Philox(Philox4x32::new(seed)),
            Algorithm::WeakLcg => Engine::Lcg(WeakLcg::new(seed)),
            Algorithm::CsprngCtr => unreachable!("csprng is keyed from OS entropy"),
        };
        Self { engine, algorithm, seed_source, seed: Some(seed), draws_emitted: 0 }
    }

    /// Replaces the seed in place with one resolved from `source`. The
    /// algorithm is kept; a CSPRNG is rekeyed from OS entropy.
    pub fn reseed(&mut self, source: SeedSource) -> Result<(), PrngError> {
        let fresh = GeneratorHandle::new(self.algorithm, source)?;
        let emitted = self.draws_emitted;
        *self = fresh;
        self.draws_emitted = emitted;
        Ok(())
    }

    pub fn algorithm(&self) -> Algorithm {
        self.algorithm
    }

    pub fn seed_source(&self) -> &SeedSource {
        &self.seed_source
    }

    /// The concrete seed, when one exists (never for the CSPRNG).
    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn security_class(&self) -> SecurityClass {
        SecurityClass::of(self.algorithm, &self.seed_source)
    }

    /// Raw words produced so far (32-bit words for MT19937, 64-bit otherwise).
    pub fn draws_emitted(&self) -> u64 {
        self.draws_emitted
    }

    pub fn mt19937_next(&mut self) -> Result<u32, PrngError> {
        match &mut self.engine {
            Engine::Mt(mt) => {
                self.draws_emitted += 1;
                Ok(mt.next_u32())
            }
            _ => Err(self.wrong(Algorithm::Mt19937)),
        }
    }

    pub fn philox_next(&mut self) -> Result<u64, PrngError> {
        match &mut self.engine {
            Engine::Philox(p) => {
                self.draws_emitted += 1;
                Ok(p.next_u64())
            }
            _ => Err(self.wrong(Algorithm::PhiloxCounter)),
        }
    }

    pub fn csprng_next(&mut self) -> Result<u64, PrngError> {
        match &mut self.engine {
            Engine::Csprng(c) => {
                let w = c.next_u64()?;
                self.draws_emitted += 1;
                Ok(w)
            }
            _ => Err(self.wrong(Algorithm::CsprngCtr)),
        }
    }

    /// Next canonical 64-bit word, whatever the algorithm.
    #[inline]
    pub fn next_u64(&mut self) -> Result<u64, PrngError> {
        match &mut self.engine {
            Engine::Mt(mt) => {
                self.draws_emitted += 2;
                Ok(mt.next_u64())
            }
            Engine::Philox(p) => {
                self.draws_emitted += 1;
                Ok(p.next_u64())
            }
            Engine::Lcg(l) => {
                self.draws_emitted += 1;
                Ok(l.next_u64())
            }
            Engine::Csprng(c) => {
                let w = c.next_u64()?;
                self.draws_emitted += 1;
                Ok(w)
            }
        }
    }

    fn wrong(&self, expected: Algorithm) -> PrngError {
        PrngError::WrongAlgorithm { expected, actual: self.algorithm }
    }
}

impl WordSource for GeneratorHandle {
    #[inline]
    fn next_word(&mut self) -> Result<u64, PrngError> {
        self.next_u64()
    }
}

impl fmt::Debug for GeneratorHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GeneratorHandle")
            .field("algorithm", &self.algorithm)
            .field("seed_source", &self.seed_source)
            .field("security_class", &self.security_class())
            .field("draws_emitted", &self.draws_emitted)
            .finish()
    }
}
