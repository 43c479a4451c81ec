//! Runtime auditing. Generators are wrapped so that every batch of samples
//! they hand out can be copied to a background worker, which runs a
//! goodness-of-fit test against the declared distribution and publishes a
//! report.
//!
//! Three modes trade latency for coverage: `Blocking` waits for each
//! batch's verdict, `Asn` queues every batch and returns at once, and
//! `Rasn` queues only every `stride`-th batch.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{self, Write};
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use crossbeam_channel::{bounded, unbounded, Receiver, RecvTimeoutError, Sender};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::policy::{RemediationAction, RemediationDirective};
use crate::prng::{Algorithm, GeneratorHandle, PrngError, SecurityClass, SeedSource};
use crate::stats::{
    self, chi_square_continuous, chi_square_uniform_int, ks_test, z_test, StatsError, TestReport, TestTarget,
    Verdict, CHI2_MIN_EXPECTED, CHI2_MIN_SAMPLES, KS_MIN_SAMPLES,
};
use crate::transforms::{DistributionSpec, Sampler, TransformError};

pub const DEFAULT_BATCH_SIZE: usize = 100;
pub const DEFAULT_STRIDE: u64 = 10;
pub const DEFAULT_QUEUE_CAPACITY: usize = 1024;
pub const DEFAULT_CHI2_BINS: usize = 10;

#[derive(Debug, Error)]
pub enum AuditError {
    #[error("invalid auditor configuration: {0}")]
    InvalidConfig(String),
    #[error("auditor has been stopped")]
    AuditorStopped,
    #[error("timed out with {pending} reports outstanding")]
    Timeout { pending: u64 },
    #[error("no generator registered under {0:?}")]
    UnknownSlot(String),
    #[error("slot {0:?} is already registered")]
    DuplicateSlot(String),
    #[error(transparent)]
    Prng(#[from] PrngError),
    #[error(transparent)]
    Transform(#[from] TransformError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AuditMode {
    Blocking,
    Asn,
    Rasn { stride: u64 },
}

impl AuditMode {
    pub fn rasn() -> Self {
        AuditMode::Rasn { stride: DEFAULT_STRIDE }
    }

    /// Whether the batch with 1-based index `seq` is sent to the auditor.
    /// RASN keeps a plain counter: batches whose index is a multiple of the
    /// stride are audited, everything else is dropped unexamined.
    pub fn audits(&self, seq: u64) -> bool {
        match *self {
            AuditMode::Blocking | AuditMode::Asn => true,
            AuditMode::Rasn { stride } => seq % stride == 0,
        }
    }
}

impl fmt::Display for AuditMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AuditMode::Blocking => f.write_str("blocking"),
            AuditMode::Asn => f.write_str("asn"),
            AuditMode::Rasn { stride } => write!(f, "rasn:{stride}"),
        }
    }
}

impl FromStr for AuditMode {
    type Err = AuditError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (name, arg) = match s.split_once(':') {
            Some((n, a)) => (n, Some(a)),
            None => (s, None),
        };
        match (name.to_ascii_lowercase().as_str(), arg) {
            ("blocking", None) => Ok(AuditMode::Blocking),
            ("asn", None) => Ok(AuditMode::Asn),
            ("rasn", None) => Ok(AuditMode::rasn()),
            ("rasn", Some(a)) => a
                .trim()
                .parse()
                .map(|stride| AuditMode::Rasn { stride })
                .map_err(|_| AuditError::InvalidConfig(format!("bad RASN stride {a:?}"))),
            _ => Err(AuditError::InvalidConfig(format!("unknown audit mode {s:?}"))),
        }
    }
}

/// Test applied to continuous specs. Discrete specs always use chi-square.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContinuousTest {
    #[default]
    Ks,
    ChiSquare,
    Z,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditorConfig {
    pub mode: AuditMode,
    pub batch_size: usize,
    pub warn_threshold: f64,
    pub queue_capacity: usize,
    pub continuous_test: ContinuousTest,
    pub chi2_bins: usize,
}

impl Default for AuditorConfig {
    fn default() -> Self {
        Self {
            mode: AuditMode::Asn,
            batch_size: DEFAULT_BATCH_SIZE,
            warn_threshold: stats::DEFAULT_WARN_THRESHOLD,
            queue_capacity: DEFAULT_QUEUE_CAPACITY,
            continuous_test: ContinuousTest::Ks,
            chi2_bins: DEFAULT_CHI2_BINS,
        }
    }
}

impl AuditorConfig {
    pub fn with_mode(mode: AuditMode) -> Self {
        Self { mode, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), AuditError> {
        let bad = |m: String| Err(AuditError::InvalidConfig(m));
        if let AuditMode::Rasn { stride } = self.mode {
            if stride == 0 {
                return bad("RASN stride must be at least 1".into());
            }
        }
        if self.batch_size < KS_MIN_SAMPLES {
            return bad(format!("batch size {} is below the KS minimum of {KS_MIN_SAMPLES}", self.batch_size));
        }
        if (self.batch_size as u64) < CHI2_MIN_SAMPLES {
            return bad(format!("batch size {} is below the chi-square minimum", self.batch_size));
        }
        if self.chi2_bins < 2 {
            return bad("chi-square needs at least 2 bins".into());
        }
        if (self.batch_size as f64 / self.chi2_bins as f64) < CHI2_MIN_EXPECTED {
            return bad(format!(
                "{} samples over {} bins leaves fewer than {CHI2_MIN_EXPECTED} expected per bin",
                self.batch_size, self.chi2_bins
            ));
        }
        if !(self.warn_threshold > 0.0 && self.warn_threshold < 1.0) {
            return bad(format!("warn threshold {} is outside (0, 1)", self.warn_threshold));
        }
        if self.queue_capacity == 0 {
            return bad("queue capacity must be at least 1".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditEvent {
    pub source_tag: String,
    pub spec: DistributionSpec,
    pub samples: Vec<f64>,
    pub sequence_index: u64,
}

/// Outcome of auditing one event. A batch that cannot be tested at all
/// (non-finite values, say) is reported as a warning with `error` set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub source_tag: String,
    pub sequence_index: u64,
    pub spec: DistributionSpec,
    pub verdict: Verdict,
    pub report: Option<TestReport>,
    pub error: Option<String>,
}

impl AuditReport {
    pub fn is_warn(&self) -> bool {
        self.verdict == Verdict::Warn
    }
}

/// Runs the configured test on one batch. Continuous samples are first
/// mapped onto the standard member of their family so that one reference
/// CDF serves every parameterization.
pub fn evaluate_event(event: &AuditEvent, config: &AuditorConfig) -> AuditReport {
    let result = test_batch(&event.samples, &event.spec, config);
    let (verdict, report, error) = match result {
        Ok(r) => (r.verdict, Some(r), None),
        Err(e) => (Verdict::Warn, None, Some(e.to_string())),
    };
    AuditReport {
        source_tag: event.source_tag.clone(),
        sequence_index: event.sequence_index,
        spec: event.spec,
        verdict,
        report,
        error,
    }
}

pub fn test_batch(samples: &[f64], spec: &DistributionSpec, config: &AuditorConfig) -> Result<TestReport, StatsError> {
    let report = match (*spec, config.continuous_test) {
        (DistributionSpec::UniformInt { a, b }, _) => chi_square_uniform_int(samples, a, b, config.chi2_bins)?,
        (_, ContinuousTest::ChiSquare) => chi_square_continuous(samples, spec, config.chi2_bins)?,
        (_, ContinuousTest::Z) => z_test(samples, spec.mean(), spec.std_dev())?,
        (DistributionSpec::Normal { mu, sigma }, ContinuousTest::Ks) => {
            let z: Vec<f64> = samples.iter().map(|x| (x - mu) / sigma).collect();
            ks_test(&z, stats::special::normal_cdf)?
        }
        (DistributionSpec::UniformReal { a, b }, ContinuousTest::Ks) => {
            let u: Vec<f64> = samples.iter().map(|x| (x - a) / (b - a)).collect();
            ks_test(&u, |x| x.clamp(0.0, 1.0))?
        }
        (DistributionSpec::Laplace { .. }, ContinuousTest::Ks) => {
            // Probability integral transform onto U(0, 1).
            let u: Vec<f64> = samples.iter().map(|&x| if x.is_finite() { spec.cdf(x) } else { x }).collect();
            ks_test(&u, |x| x.clamp(0.0, 1.0))?
        }
    };
    Ok(report
        .with_target(TestTarget::Distribution { spec: *spec })
        .with_threshold(config.warn_threshold))
}

struct Job {
    event: AuditEvent,
    reply: Option<Sender<AuditReport>>,
}

/// Owner of the auditor worker thread and its result queue.
pub struct Auditor {
    config: AuditorConfig,
    handle: AuditorHandle,
    results: Receiver<AuditReport>,
    received: u64,
    stash: Vec<AuditReport>,
    worker: Option<JoinHandle<()>>,
}

/// Cheap, cloneable submission side of an [`Auditor`].
#[derive(Clone)]
pub struct AuditorHandle {
    mode: AuditMode,
    work: Arc<RwLock<Option<Sender<Job>>>>,
    submitted: Arc<AtomicU64>,
}

impl Auditor {
    pub fn start(config: AuditorConfig) -> Result<Self, AuditError> {
        config.validate()?;
        let (work_tx, work_rx) = bounded::<Job>(config.queue_capacity);
        let (result_tx, results) = unbounded();
        let worker_config = config;
        let worker = thread::Builder::new()
            .name("rng-sentinel-auditor".into())
            .spawn(move || {
                for job in work_rx.iter() {
                    let report = evaluate_event(&job.event, &worker_config);
                    if let Some(reply) = job.reply {
                        let _ = reply.send(report.clone());
                    }
                    if result_tx.send(report).is_err() {
                        break;
                    }
                }
            })?;
        Ok(Self {
            config,
            handle: AuditorHandle {
                mode: config.mode,
                work: Arc::new(RwLock::new(Some(work_tx))),
                submitted: Arc::new(AtomicU64::new(0)),
            },
            results,
            received: 0,
            stash: Vec::new(),
            worker: Some(worker),
        })
    }

    pub fn config(&self) -> &AuditorConfig {
        &self.config
    }

    pub fn handle(&self) -> AuditorHandle {
        self.handle.clone()
    }

    pub fn submit(&self, event: AuditEvent) -> Result<Option<AuditReport>, AuditError> {
        self.handle.submit(event)
    }

    pub fn submitted(&self) -> u64 {
        self.handle.submitted.load(Ordering::Acquire)
    }

    /// Waits until every submitted event has been reported, then returns
    /// the reports in completion order. On timeout the reports gathered so
    /// far are kept for the next call.
    pub fn drain_reports(&mut self, timeout: Duration) -> Result<Vec<AuditReport>, AuditError> {
        let deadline = Instant::now() + timeout;
        loop {
            while let Ok(r) = self.results.try_recv() {
                self.received += 1;
                self.stash.push(r);
            }
            let pending = self.submitted().saturating_sub(self.received);
            if pending == 0 {
                return Ok(std::mem::take(&mut self.stash));
            }
            let now = Instant::now();
            if now >= deadline {
                return Err(AuditError::Timeout { pending });
            }
            match self.results.recv_timeout(deadline - now) {
                Ok(r) => {
                    self.received += 1;
                    self.stash.push(r);
                }
                Err(RecvTimeoutError::Timeout) => return Err(AuditError::Timeout { pending }),
                Err(RecvTimeoutError::Disconnected) => return Err(AuditError::AuditorStopped),
            }
        }
    }

    /// Refuses further submissions, lets the worker finish what is queued
    /// and joins it. Idempotent.
    pub fn stop(&mut self) {
        if let Ok(mut slot) = self.handle.work.write() {
            slot.take();
        }
        if let Some(worker) = self.worker.take() {
            let _ = worker.join();
        }
    }
}

impl Drop for Auditor {
    fn drop(&mut self) {
        self.stop();
    }
}

impl AuditorHandle {
    pub fn mode(&self) -> AuditMode {
        self.mode
    }

    /// Queues an event, blocking while the queue is full. In blocking mode
    /// the call also waits for, and returns, the event's report.
    pub fn submit(&self, event: AuditEvent) -> Result<Option<AuditReport>, AuditError> {
        let (reply_tx, reply_rx) = match self.mode {
            AuditMode::Blocking => {
                let (tx, rx) = bounded(1);
                (Some(tx), Some(rx))
            }
            _ => (None, None),
        };
        {
            let guard = self.work.read().map_err(|_| AuditError::AuditorStopped)?;
            let sender = guard.as_ref().ok_or(AuditError::AuditorStopped)?;
            self.submitted.fetch_add(1, Ordering::AcqRel);
            if sender.send(Job { event, reply: reply_tx }).is_err() {
                self.submitted.fetch_sub(1, Ordering::AcqRel);
                return Err(AuditError::AuditorStopped);
            }
        }
        match reply_rx {
            Some(rx) => rx.recv().map(Some).map_err(|_| AuditError::AuditorStopped),
            None => Ok(None),
        }
    }
}

#[derive(Clone, Debug)]
enum Tamper {
    /// Samples come from a different distribution than the one declared.
    Substitute(Sampler),
    /// Every draw is shifted by a constant.
    MeanShift(f64),
}

/// A generator whose draws are copied, batch by batch, to the auditor.
/// The values handed back are exactly what the unwrapped generator and
/// sampler would have produced.
pub struct AuditedGenerator {
    tag: String,
    inner: GeneratorHandle,
    sampler: Sampler,
    tamper: Option<Tamper>,
    buffer: Vec<f64>,
    batch_fill: usize,
    batch_size: usize,
    sequence_counter: u64,
    auditor: AuditorHandle,
    last_report: Option<AuditReport>,
}

impl AuditedGenerator {
    pub fn wrap(
        tag: impl Into<String>,
        inner: GeneratorHandle,
        spec: DistributionSpec,
        config: &AuditorConfig,
        auditor: AuditorHandle,
    ) -> Result<Self, AuditError> {
        config.validate()?;
        Ok(Self {
            tag: tag.into(),
            inner,
            sampler: Sampler::new(spec)?,
            tamper: None,
            buffer: Vec::with_capacity(config.batch_size),
            batch_fill: 0,
            batch_size: config.batch_size,
            sequence_counter: 0,
            auditor,
            last_report: None,
        })
    }

    pub fn tag(&self) -> &str {
        &self.tag
    }

    pub fn spec(&self) -> &DistributionSpec {
        self.sampler.spec()
    }

    pub fn inner(&self) -> &GeneratorHandle {
        &self.inner
    }

    /// Completed batches so far, audited or not.
    pub fn sequence_counter(&self) -> u64 {
        self.sequence_counter
    }

    /// Most recent report returned synchronously (blocking mode only).
    pub fn last_report(&self) -> Option<&AuditReport> {
        self.last_report.as_ref()
    }

    pub fn draw(&mut self) -> Result<f64, AuditError> {
        let x = match &mut self.tamper {
            None => self.sampler.sample(&mut self.inner)?,
            Some(Tamper::Substitute(actual)) => actual.sample(&mut self.inner)?,
            Some(Tamper::MeanShift(delta)) => self.sampler.sample(&mut self.inner)? + *delta,
        };
        let seq = self.sequence_counter + 1;
        if self.auditor.mode.audits(seq) {
            self.buffer.push(x);
        }
        self.batch_fill += 1;
        if self.batch_fill == self.batch_size {
            self.batch_fill = 0;
            self.sequence_counter = seq;
            if self.auditor.mode.audits(seq) {
                let samples = std::mem::replace(&mut self.buffer, Vec::with_capacity(self.batch_size));
                let event = AuditEvent { source_tag: self.tag.clone(), spec: *self.sampler.spec(), samples, sequence_index: seq };
                if let Some(report) = self.auditor.submit(event)? {
                    self.last_report = Some(report);
                }
            }
        }
        Ok(x)
    }

    pub fn fill(&mut self, out: &mut [f64]) -> Result<(), AuditError> {
        for slot in out {
            *slot = self.draw()?;
        }
        Ok(())
    }

    pub fn draw_batch(&mut self, n: usize) -> Result<Vec<f64>, AuditError> {
        let mut out = vec![0.0; n];
        self.fill(&mut out)?;
        Ok(out)
    }

    /// Swaps the sampling transform for `actual` while the declared spec,
    /// and therefore the audit target, stays the same.
    pub fn substitute(&mut self, actual: DistributionSpec) -> Result<(), AuditError> {
        self.tamper = Some(Tamper::Substitute(Sampler::new(actual)?));
        Ok(())
    }

    /// Shifts every draw by `bias` standard deviations of the declared spec.
    pub fn bias(&mut self, bias: f64) {
        self.tamper = Some(Tamper::MeanShift(bias * self.sampler.spec().std_dev()));
    }

    /// Replaces the underlying generator, restores the declared transform
    /// and discards the partly filled batch.
    fn rebind(&mut self, inner: GeneratorHandle) {
        self.inner = inner;
        self.restart();
        self.tamper = None;
    }

    fn reseed(&mut self, source: SeedSource) -> Result<(), AuditError> {
        self.inner.reseed(source)?;
        self.restart();
        Ok(())
    }

    fn restart(&mut self) {
        self.sampler.reset();
        if let Some(Tamper::Substitute(s)) = &mut self.tamper {
            s.reset();
        }
        self.buffer.clear();
        self.batch_fill = 0;
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RebindRecord {
    pub slot: String,
    pub action: RemediationAction,
    pub algorithm: Algorithm,
    pub seed_source: SeedSource,
    pub security_class: SecurityClass,
    pub batches_before: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum LogRecord {
    Report(AuditReport),
    Rebind(RebindRecord),
}

/// Append-only log of reports and rebinds, serialized one JSON object per
/// line with a `record` field of `report` or `rebind`.
#[derive(Clone, Debug, Default)]
pub struct AuditLog {
    records: Vec<LogRecord>,
}

impl AuditLog {
    pub fn push(&mut self, record: LogRecord) {
        self.records.push(record);
    }

    pub fn records(&self) -> &[LogRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn rebinds(&self) -> impl Iterator<Item = &RebindRecord> {
        self.records.iter().filter_map(|r| match r {
            LogRecord::Rebind(b) => Some(b),
            LogRecord::Report(_) => None,
        })
    }

    pub fn write_ndjson<W: Write>(&self, out: &mut W) -> io::Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut *out, r)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Named generator slots sharing one auditor. This is where static
/// remediation is enforced at run time.
pub struct SlotRegistry {
    config: AuditorConfig,
    auditor: Auditor,
    slots: BTreeMap<String, AuditedGenerator>,
    log: AuditLog,
}

impl SlotRegistry {
    pub fn new(config: AuditorConfig) -> Result<Self, AuditError> {
        Ok(Self { config, auditor: Auditor::start(config)?, slots: BTreeMap::new(), log: AuditLog::default() })
    }

    pub fn config(&self) -> &AuditorConfig {
        &self.config
    }

    pub fn register(&mut self, tag: &str, inner: GeneratorHandle, spec: DistributionSpec) -> Result<(), AuditError> {
        if self.slots.contains_key(tag) {
            return Err(AuditError::DuplicateSlot(tag.to_string()));
        }
        let generator = AuditedGenerator::wrap(tag, inner, spec, &self.config, self.auditor.handle())?;
        self.slots.insert(tag.to_string(), generator);
        Ok(())
    }

    pub fn slot(&self, tag: &str) -> Result<&AuditedGenerator, AuditError> {
        self.slots.get(tag).ok_or_else(|| AuditError::UnknownSlot(tag.to_string()))
    }

    fn slot_mut(&mut self, tag: &str) -> Result<&mut AuditedGenerator, AuditError> {
        self.slots.get_mut(tag).ok_or_else(|| AuditError::UnknownSlot(tag.to_string()))
    }

    pub fn security_class(&self, tag: &str) -> Result<SecurityClass, AuditError> {
        Ok(self.slot(tag)?.inner.security_class())
    }

    pub fn draw(&mut self, tag: &str) -> Result<f64, AuditError> {
        self.slot_mut(tag)?.draw()
    }

    pub fn draw_batch(&mut self, tag: &str, n: usize) -> Result<Vec<f64>, AuditError> {
        self.slot_mut(tag)?.draw_batch(n)
    }

    pub fn substitute(&mut self, tag: &str, actual: DistributionSpec) -> Result<(), AuditError> {
        self.slot_mut(tag)?.substitute(actual)
    }

    pub fn bias(&mut self, tag: &str, bias: f64) -> Result<(), AuditError> {
        self.slot_mut(tag)?.bias(bias);
        Ok(())
    }

    /// Applies remediation directives. Every slot is checked before any is
    /// touched, so an unknown slot leaves the registry unchanged.
    pub fn enforce(&mut self, directives: &[RemediationDirective]) -> Result<(), AuditError> {
        if let Some(d) = directives.iter().find(|d| !self.slots.contains_key(&d.function_id)) {
            return Err(AuditError::UnknownSlot(d.function_id.clone()));
        }
        for d in directives {
            let slot = self.slots.get_mut(&d.function_id).expect("checked above");
            match d.action {
                RemediationAction::ReseedFromOsEntropy => slot.reseed(SeedSource::OsEntropy)?,
                RemediationAction::ReplaceWithCsprng => {
                    slot.rebind(GeneratorHandle::new(Algorithm::CsprngCtr, SeedSource::OsEntropy)?)
                }
            }
            self.log.push(LogRecord::Rebind(RebindRecord {
                slot: d.function_id.clone(),
                action: d.action,
                algorithm: slot.inner.algorithm(),
                seed_source: *slot.inner.seed_source(),
                security_class: slot.inner.security_class(),
                batches_before: slot.sequence_counter,
            }));
        }
        Ok(())
    }

    /// Drains the auditor and appends the reports to the log.
    pub fn collect_reports(&mut self, timeout: Duration) -> Result<Vec<AuditReport>, AuditError> {
        let reports = self.auditor.drain_reports(timeout)?;
        for r in &reports {
            self.log.push(LogRecord::Report(r.clone()));
        }
        Ok(reports)
    }

    pub fn log(&self) -> &AuditLog {
        &self.log
    }

    pub fn stop(&mut self) {
        self.auditor.stop();
    }
}
