//! Randomness security for ML pipelines: generators with explicit seed
//! provenance, distribution transforms, a statistical test battery, static
//! policy checks over randomness manifests, a background auditor, and attack
//! harnesses that show what goes wrong when the checks are skipped.

// `!(x > 0.0)` style guards are used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attacks;
pub mod auditor;
pub mod policy;
pub mod prng;
pub mod stats;
pub mod stream;
pub mod transforms;
pub mod workload;

pub use auditor::{
    AuditError, AuditEvent, AuditLog, AuditMode, AuditReport, AuditedGenerator, Auditor, AuditorConfig, LogRecord,
    SlotRegistry,
};
pub use policy::{
    evaluate_policies, remediation_plan, transitive_rng_closure, FunctionContext, FunctionFact, GeneratorFact,
    PolicyError, PolicyRule, PolicyViolation, RandomnessManifest, RemediationAction, RemediationDirective, Ruleset,
    Severity,
};
pub use prng::{Algorithm, GeneratorHandle, PrngError, SecurityClass, SeedSource, WordSource};
pub use stats::{StatsError, TestKind, TestReport, Verdict};
pub use transforms::{DistributionSpec, Sampler, TransformError};
