use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::time::Duration;

use rng_sentinel::attacks::{simulate, AttackError, AttackScenario};
use rng_sentinel::auditor::{AuditError, AuditEvent, AuditReport, Auditor, AuditorConfig};
use rng_sentinel::policy::{evaluate_policies, remediation_plan, PolicyError, RandomnessManifest, Ruleset, Severity};
use rng_sentinel::prng::{GeneratorHandle, PrngError};
use rng_sentinel::stream::{write_raw_words, write_text_samples, RawWordSource, StreamError, TextSampleReader};
use rng_sentinel::transforms::Sampler;
use rng_sentinel::workload::{Workload, WorkloadMode};
use serde::Serialize;
use thiserror::Error;

use crate::cli::{AuditArgs, BenchArgs, Format, GenerateArgs, PolicyArgs, SimulateArgs};

const DRAIN_TIMEOUT: Duration = Duration::from_secs(3600);

/// Anything that ends a command with exit status 2.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    File { path: String, source: io::Error },
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Stream(#[from] StreamError),
    #[error(transparent)]
    Audit(#[from] AuditError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Attack(#[from] AttackError),
    #[error(transparent)]
    Prng(#[from] PrngError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Outcome of a command that ran to completion.
#[derive(Debug, PartialEq, Eq)]
pub enum Status {
    Clean,
    Flagged,
}

fn open(path: &Path) -> Result<File, CliError> {
    File::open(path).map_err(|source| CliError::File { path: path.display().to_string(), source })
}

fn read_to_string(path: &Path) -> Result<String, CliError> {
    let mut s = String::new();
    open(path)?.read_to_string(&mut s).map_err(|source| CliError::File { path: path.display().to_string(), source })?;
    Ok(s)
}

fn input(path: Option<&Path>) -> Result<Box<dyn BufRead>, CliError> {
    match path {
        None => Ok(Box::new(BufReader::new(io::stdin()))),
        Some(p) if p.as_os_str() == "-" => Ok(Box::new(BufReader::new(io::stdin()))),
        Some(p) => Ok(Box::new(BufReader::new(open(p)?))),
    }
}

fn write_json_line<W: Write, T: Serialize>(out: &mut W, value: &T) -> Result<(), CliError> {
    serde_json::to_writer(&mut *out, value)?;
    out.write_all(b"\n")?;
    Ok(())
}

pub fn audit<W: Write>(args: &AuditArgs, out: &mut W) -> Result<Status, CliError> {
    let config = AuditorConfig {
        mode: args.effective_mode(),
        batch_size: args.batch_size,
        warn_threshold: args.threshold,
        continuous_test: args.test.into(),
        chi2_bins: args.bins,
        ..AuditorConfig::default()
    };
    let mut auditor = Auditor::start(config)?;
    let tag = match &args.input {
        Some(p) if p.as_os_str() != "-" => p.display().to_string(),
        _ => "stdin".to_string(),
    };
    let reader = input(args.input.as_deref())?;

    let mut warns = 0u64;
    let mut emit = |out: &mut W, r: &AuditReport| -> Result<(), CliError> {
        warns += u64::from(r.is_warn());
        write_json_line(out, r)
    };
    let mut batch = Vec::with_capacity(args.batch_size);
    let mut seq = 0u64;
    let mut flush = |batch: &mut Vec<f64>, out: &mut W| -> Result<(), CliError> {
        seq += 1;
        let samples = std::mem::replace(batch, Vec::with_capacity(args.batch_size));
        if config.mode.audits(seq) {
            let event = AuditEvent { source_tag: tag.clone(), spec: args.spec, samples, sequence_index: seq };
            if let Some(r) = auditor.submit(event)? {
                emit(out, &r)?;
            }
        }
        Ok(())
    };

    if args.raw {
        let mut source = RawWordSource::new(reader);
        let mut sampler = Sampler::new(args.spec).map_err(|e| CliError::Usage(e.to_string()))?;
        loop {
            match sampler.sample(&mut source) {
                Ok(x) => batch.push(x),
                Err(PrngError::StreamExhausted) => break,
                Err(e) => return Err(e.into()),
            }
            if batch.len() == args.batch_size {
                flush(&mut batch, out)?;
            }
        }
        if let Some(e) = source.take_error() {
            return Err(e.into());
        }
    } else {
        for x in TextSampleReader::new(reader) {
            batch.push(x?);
            if batch.len() == args.batch_size {
                flush(&mut batch, out)?;
            }
        }
    }
    let leftover = batch.len();
    let batches = seq;
    for r in auditor.drain_reports(DRAIN_TIMEOUT)? {
        emit(out, &r)?;
    }
    auditor.stop();
    out.flush()?;
    eprintln!("{batches} batches, {warns} warnings, {leftover} trailing samples not audited");
    Ok(if args.strict && warns > 0 { Status::Flagged } else { Status::Clean })
}

pub fn policy<W: Write>(args: &PolicyArgs, out: &mut W) -> Result<Status, CliError> {
    let manifest = RandomnessManifest::from_json(&read_to_string(&args.manifest)?)?;
    let ruleset: Ruleset = match &args.ruleset {
        Some(p) => serde_json::from_str(&read_to_string(p)?)?,
        None => Ruleset::default(),
    };
    let violations = evaluate_policies(&manifest, &ruleset)?;
    if args.plan {
        serde_json::to_writer_pretty(&mut *out, &remediation_plan(&violations))?;
    } else {
        serde_json::to_writer_pretty(&mut *out, &violations)?;
    }
    out.write_all(b"\n")?;
    let errors = violations.iter().filter(|v| v.severity == Severity::Error).count();
    eprintln!("{} violations, {errors} errors", violations.len());
    Ok(if args.strict && errors > 0 { Status::Flagged } else { Status::Clean })
}

pub fn simulate_cmd<W: Write>(args: &SimulateArgs, out: &mut W) -> Result<Status, CliError> {
    let scenario: AttackScenario = serde_json::from_str(&read_to_string(&args.scenario)?)?;
    let transcript = simulate(&scenario)?;
    match &args.out {
        Some(path) => {
            let file = File::create(path).map_err(|source| CliError::File { path: path.display().to_string(), source })?;
            let mut w = BufWriter::new(file);
            for entry in &transcript {
                write_json_line(&mut w, entry)?;
            }
            w.flush()?;
        }
        None => {
            for entry in &transcript {
                write_json_line(out, entry)?;
            }
        }
    }
    Ok(Status::Clean)
}

#[derive(Serialize)]
struct BenchRow {
    mode: WorkloadMode,
    draws: u64,
    runs: usize,
    median_ms: f64,
    /// Relative to the unwrapped median: 0.5 means 50% slower.
    overhead_vs_unwrapped: f64,
}

pub fn bench<W: Write>(args: &BenchArgs, out: &mut W) -> Result<Status, CliError> {
    if args.batches == 0 || args.modes.is_empty() {
        return Ok(Status::Clean);
    }
    if args.stride == 0 {
        return Err(CliError::Usage("stride must be at least 1".into()));
    }
    let workload = Workload { draws: args.batches * 100, stride: args.stride, ..Workload::default() };
    let baseline = workload.median(WorkloadMode::Unwrapped, args.runs)?;
    for &mode in &args.modes {
        let t = if mode == WorkloadMode::Unwrapped { baseline } else { workload.median(mode, args.runs)? };
        let row = BenchRow {
            mode,
            draws: workload.draws,
            runs: args.runs.max(1),
            median_ms: t.as_secs_f64() * 1e3,
            overhead_vs_unwrapped: t.as_secs_f64() / baseline.as_secs_f64() - 1.0,
        };
        write_json_line(out, &row)?;
    }
    Ok(Status::Clean)
}

pub fn generate<W: Write>(args: &GenerateArgs, out: &mut W) -> Result<Status, CliError> {
    let mut g = match args.seed {
        Some(seed) => GeneratorHandle::from_seed(args.algorithm, seed)?,
        None => GeneratorHandle::new(args.algorithm, args.seed_source)?,
    };
    const CHUNK: u64 = 4096;
    let mut left = args.count;
    match args.format {
        Format::Raw => {
            let mut words = Vec::with_capacity(CHUNK as usize);
            while left > 0 {
                words.clear();
                for _ in 0..left.min(CHUNK) {
                    words.push(g.next_u64()?);
                }
                write_raw_words(out, &words)?;
                left -= words.len() as u64;
            }
        }
        Format::Text => {
            let mut sampler = Sampler::new(args.spec).map_err(|e| CliError::Usage(e.to_string()))?;
            let mut buf = Vec::with_capacity(CHUNK as usize);
            while left > 0 {
                buf.resize(left.min(CHUNK) as usize, 0.0);
                sampler.fill(&mut g, &mut buf)?;
                write_text_samples(out, &buf)?;
                left -= buf.len() as u64;
            }
        }
    }
    out.flush()?;
    Ok(Status::Clean)
}
