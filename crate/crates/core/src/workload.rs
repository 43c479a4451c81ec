//! Synthetic sampling workload used to compare the cost of the execution
//! modes: plain draws, statically enforced draws, and the three audited
//! modes layered on top of enforcement.

use std::fmt;
use std::hint::black_box;
use std::str::FromStr;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::auditor::{AuditError, AuditMode, AuditorConfig, SlotRegistry};
use crate::prng::{Algorithm, GeneratorHandle, SeedSource};
use crate::transforms::{DistributionSpec, Sampler};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorkloadMode {
    /// Host-default generator (MT19937), no checks.
    Unwrapped,
    /// CSPRNG keyed from OS entropy, no runtime tests.
    #[serde(rename = "static")]
    StaticEnforced,
    Blocking,
    Asn,
    Rasn,
}

impl WorkloadMode {
    pub const ALL: [WorkloadMode; 5] =
        [WorkloadMode::Unwrapped, WorkloadMode::StaticEnforced, WorkloadMode::Rasn, WorkloadMode::Asn, WorkloadMode::Blocking];

    pub fn name(self) -> &'static str {
        match self {
            WorkloadMode::Unwrapped => "unwrapped",
            WorkloadMode::StaticEnforced => "static",
            WorkloadMode::Blocking => "blocking",
            WorkloadMode::Asn => "asn",
            WorkloadMode::Rasn => "rasn",
        }
    }
}

impl fmt::Display for WorkloadMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for WorkloadMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        WorkloadMode::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s.trim()) || (s.trim() == "static-enforced" && *m == WorkloadMode::StaticEnforced))
            .ok_or_else(|| format!("unknown workload mode {s:?}"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Workload {
    pub draws: u64,
    /// Samples requested per simulated framework call.
    pub call_size: usize,
    pub stride: u64,
    pub spec: DistributionSpec,
    pub seed: u64,
}

impl Default for Workload {
    fn default() -> Self {
        Self { draws: 1_000_000, call_size: 1000, stride: 10, spec: DistributionSpec::standard_normal(), seed: 2024 }
    }
}

impl Workload {
    pub fn with_draws(draws: u64) -> Self {
        Self { draws, ..Self::default() }
    }

    fn calls(&self) -> impl Iterator<Item = usize> {
        let full = self.draws / self.call_size as u64;
        let rest = (self.draws % self.call_size as u64) as usize;
        std::iter::repeat(self.call_size).take(full as usize).chain((rest > 0).then_some(rest))
    }

    /// Wall time of one run, including auditor start-up and the wait for
    /// the last report.
    pub fn run(&self, mode: WorkloadMode) -> Result<Duration, AuditError> {
        let mut buf = vec![0.0f64; self.call_size];
        let start = Instant::now();
        match mode {
            WorkloadMode::Unwrapped => {
                let mut g = GeneratorHandle::from_seed(Algorithm::Mt19937, self.seed)?;
                let mut s = Sampler::new(self.spec)?;
                for n in self.calls() {
                    s.fill(&mut g, &mut buf[..n])?;
                    black_box(&buf);
                }
            }
            WorkloadMode::StaticEnforced => {
                let mut g = GeneratorHandle::new(Algorithm::CsprngCtr, SeedSource::OsEntropy)?;
                let mut s = Sampler::new(self.spec)?;
                for n in self.calls() {
                    s.fill(&mut g, &mut buf[..n])?;
                    black_box(&buf);
                }
            }
            WorkloadMode::Blocking | WorkloadMode::Asn | WorkloadMode::Rasn => {
                let audit_mode = match mode {
                    WorkloadMode::Blocking => AuditMode::Blocking,
                    WorkloadMode::Asn => AuditMode::Asn,
                    _ => AuditMode::Rasn { stride: self.stride },
                };
                let mut reg = SlotRegistry::new(AuditorConfig::with_mode(audit_mode))?;
                let g = GeneratorHandle::new(Algorithm::CsprngCtr, SeedSource::OsEntropy)?;
                reg.register("workload", g, self.spec)?;
                for n in self.calls() {
                    let out = reg.draw_batch("workload", n)?;
                    black_box(&out);
                }
                black_box(reg.collect_reports(Duration::from_secs(600))?);
                reg.stop();
            }
        }
        Ok(start.elapsed())
    }

    /// Median over `runs` runs.
    pub fn median(&self, mode: WorkloadMode, runs: usize) -> Result<Duration, AuditError> {
        let mut times = (0..runs.max(1)).map(|_| self.run(mode)).collect::<Result<Vec<_>, _>>()?;
        times.sort_unstable();
        Ok(times[times.len() / 2])
    }
}
