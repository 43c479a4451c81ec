use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rng_sentinel::auditor::{AuditMode, ContinuousTest};
use rng_sentinel::prng::{Algorithm, SeedSource};
use rng_sentinel::transforms::DistributionSpec;
use rng_sentinel::workload::WorkloadMode;

#[derive(Parser, Debug)]
#[command(name = "rng-sentinel")]
#[command(about = "Audit randomness in ML pipelines: seed policy, distribution tests and attack drills")]
#[command(version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Batch a sample stream and test each batch against a distribution
    Audit(AuditArgs),
    /// Evaluate a randomness manifest against the security rules
    Policy(PolicyArgs),
    /// Run an attack scenario and write its transcript
    Simulate(SimulateArgs),
    /// Time the execution modes on a synthetic workload
    Bench(BenchArgs),
    /// Emit raw words or samples from a generator
    Generate(GenerateArgs),
}

#[derive(Args, Debug)]
pub struct AuditArgs {
    /// Input file; stdin when omitted or "-"
    pub input: Option<PathBuf>,

    /// Input is little-endian 64-bit raw words, transformed through --spec
    #[arg(long, conflicts_with = "text")]
    pub raw: bool,

    /// Input is one decimal real per line (the default)
    #[arg(long)]
    pub text: bool,

    /// Declared distribution, e.g. normal:0,1 or int:0,10
    #[arg(long)]
    pub spec: DistributionSpec,

    /// blocking, asn or rasn[:stride]
    #[arg(long, default_value = "asn")]
    pub mode: AuditMode,

    /// RASN stride; implies --mode rasn
    #[arg(long)]
    pub stride: Option<u64>,

    #[arg(long, default_value_t = 100)]
    pub batch_size: usize,

    /// p-value below which a batch is reported as a warning
    #[arg(long, env = "RNG_SENTINEL_THRESHOLD", default_value_t = 0.01)]
    pub threshold: f64,

    /// Test for continuous specs; discrete specs always use chi-square
    #[arg(long, value_enum, default_value_t = TestChoice::Ks)]
    pub test: TestChoice,

    /// Chi-square bin count
    #[arg(long, default_value_t = 10)]
    pub bins: usize,

    /// Exit 1 when any batch warns
    #[arg(long)]
    pub strict: bool,
}

impl AuditArgs {
    pub fn effective_mode(&self) -> AuditMode {
        match self.stride {
            Some(stride) => AuditMode::Rasn { stride },
            None => self.mode,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum TestChoice {
    Ks,
    ChiSquare,
    Z,
}

impl From<TestChoice> for ContinuousTest {
    fn from(t: TestChoice) -> Self {
        match t {
            TestChoice::Ks => ContinuousTest::Ks,
            TestChoice::ChiSquare => ContinuousTest::ChiSquare,
            TestChoice::Z => ContinuousTest::Z,
        }
    }
}

#[derive(Args, Debug)]
pub struct PolicyArgs {
    /// Manifest JSON file
    pub manifest: PathBuf,

    /// Ruleset JSON with expected distributions and entropy floor
    #[arg(long)]
    pub ruleset: Option<PathBuf>,

    /// Print the remediation plan instead of the violations
    #[arg(long)]
    pub plan: bool,

    /// Exit 1 when any violation has Error severity
    #[arg(long)]
    pub strict: bool,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// Scenario JSON file
    pub scenario: PathBuf,

    /// Write the transcript here instead of stdout
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    /// Modes to time (comma-separated)
    #[arg(long, value_delimiter = ',', default_value = "unwrapped,static,rasn,asn,blocking")]
    pub modes: Vec<WorkloadMode>,

    /// Workload size in batches of 100 draws
    #[arg(long, default_value_t = 10_000)]
    pub batches: u64,

    /// Runs per mode; the median is reported
    #[arg(long, default_value_t = 5)]
    pub runs: usize,

    #[arg(long, default_value_t = 10)]
    pub stride: u64,
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    /// mt19937, philox, lcg or csprng
    #[arg(long, default_value = "mt19937")]
    pub algorithm: Algorithm,

    /// Concrete seed (recorded as user provided)
    #[arg(long, conflicts_with = "seed_source")]
    pub seed: Option<u64>,

    /// os, time[:res], constant:V, range:LO,HI or user:V
    #[arg(long, default_value = "os")]
    pub seed_source: SeedSource,

    /// Distribution for text output
    #[arg(long, default_value = "uniform:0,1")]
    pub spec: DistributionSpec,

    #[arg(long)]
    pub count: u64,

    #[arg(long, value_enum, default_value_t = Format::Text)]
    pub format: Format,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    /// Generator words as little-endian u64
    Raw,
    /// Samples of --spec, one per line
    Text,
}
