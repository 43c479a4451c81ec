//! Attack simulations: recovering predictable seeds, stripping DP noise
//! once the seed is known, and tampering with sampling transforms or
//! generator bias to check that the auditor notices.

use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::auditor::{AuditError, AuditMode, AuditorConfig, ContinuousTest, SlotRegistry};
use crate::policy::{
    evaluate_policies, remediation_plan, FunctionFact, GeneratorFact, PolicyError, RandomnessManifest, Ruleset,
};
use crate::prng::{philox_word_at, Algorithm, GeneratorHandle, Mt19937Prefix, PrngError, SeedSource, WeakLcg};
use crate::transforms::{DistributionSpec, Sampler};

const DRAIN_TIMEOUT: Duration = Duration::from_secs(600);

#[derive(Debug, Error)]
pub enum AttackError {
    #[error("invalid time window: {0}")]
    InvalidWindow(String),
    #[error("no output words observed")]
    EmptyObservation,
    #[error("seed search is not possible against {0}")]
    Unsupported(Algorithm),
    #[error("noise spec mismatch: {0}")]
    SpecMismatch(String),
    #[error(transparent)]
    Audit(#[from] AuditError),
    #[error(transparent)]
    Prng(#[from] PrngError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AttackKind {
    ConstantSeed {
        #[serde(default)]
        value: u64,
    },
    TimeWindowSeed {
        window_s: f64,
        resolution_us: u64,
    },
    TransformSubstitution {
        claimed: DistributionSpec,
        actual: DistributionSpec,
    },
    BiasedGenerator {
        bias: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackScenario {
    pub target_slot: String,
    #[serde(flatten)]
    pub kind: AttackKind,
    /// Audited batches per phase for the detection scenarios.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batches: Option<u64>,
}

/// `log2(window_s * 1e6 / resolution_us)`: bits of uncertainty in a seed
/// taken from a clock known to lie in the window.
pub fn entropy_bits(window_s: f64, resolution_us: u64) -> Result<f64, AttackError> {
    if !(window_s > 0.0 && window_s.is_finite()) {
        return Err(AttackError::InvalidWindow(format!("window of {window_s} s")));
    }
    if resolution_us == 0 {
        return Err(AttackError::InvalidWindow("resolution must be at least 1 us".into()));
    }
    Ok((window_s * 1e6 / resolution_us as f64).log2())
}

/// Number of distinct clock readings in the window.
pub fn window_candidates(window_s: f64, resolution_us: u64) -> Result<u64, AttackError> {
    entropy_bits(window_s, resolution_us)?;
    Ok(((window_s * 1e6 / resolution_us as f64).round() as u64).max(1))
}

/// Predicate telling whether a seed reproduces the observed words.
struct SeedMatcher<'a> {
    observed: &'a [u64],
    algorithm: Algorithm,
    prefix: Option<(Mt19937Prefix, Vec<u32>)>,
}

impl<'a> SeedMatcher<'a> {
    fn new(observed: &'a [u64], algorithm: Algorithm) -> Result<Self, AttackError> {
        if observed.is_empty() {
            return Err(AttackError::EmptyObservation);
        }
        let prefix = match algorithm {
            Algorithm::Mt19937 => {
                let halves = observed
                    .iter()
                    .flat_map(|w| [*w as u32, (*w >> 32) as u32])
                    .take(Mt19937Prefix::MAX_WORDS & !1)
                    .collect();
                Some((Mt19937Prefix::new(), halves))
            }
            Algorithm::PhiloxCounter | Algorithm::WeakLcg => None,
            Algorithm::CsprngCtr => return Err(AttackError::Unsupported(algorithm)),
        };
        Ok(Self { observed, algorithm, prefix })
    }

    fn matches(&self, seed: u64) -> bool {
        match self.algorithm {
            Algorithm::Mt19937 => {
                let (prefix, expect) = self.prefix.as_ref().expect("built for MT");
                let mut scratch = [0u32; Mt19937Prefix::MAX_WORDS];
                if !prefix.outputs(seed, &mut scratch[..expect.len()], Some(expect)) {
                    return false;
                }
                if 2 * self.observed.len() <= expect.len() {
                    return true;
                }
                let mut g = GeneratorHandle::from_seed(Algorithm::Mt19937, seed).expect("MT accepts any seed");
                self.observed.iter().all(|&w| g.next_u64().ok() == Some(w))
            }
            Algorithm::PhiloxCounter => {
                self.observed.iter().enumerate().all(|(i, &w)| philox_word_at(seed, i as u64) == w)
            }
            Algorithm::WeakLcg => {
                let mut g = WeakLcg::new(seed);
                self.observed.iter().all(|&w| g.next_u64() == w)
            }
            Algorithm::CsprngCtr => false,
        }
    }
}

/// First candidate whose generator reproduces every observed word, in
/// candidate order.
pub fn brute_force_seed<I>(observed: &[u64], algorithm: Algorithm, candidates: I) -> Result<Option<u64>, AttackError>
where
    I: IntoIterator<Item = u64>,
{
    let m = SeedMatcher::new(observed, algorithm)?;
    Ok(candidates.into_iter().find(|&s| m.matches(s)))
}

/// Parallel search over `start + i * step` for `i` in `0..count`. Returns the
/// match with the smallest `i`, as the sequential search would.
pub fn brute_force_seed_range(
    observed: &[u64],
    algorithm: Algorithm,
    start: u64,
    count: u64,
    step: u64,
) -> Result<Option<u64>, AttackError> {
    let m = SeedMatcher::new(observed, algorithm)?;
    Ok((0..count)
        .into_par_iter()
        .map(|i| start.wrapping_add(i.wrapping_mul(step)))
        .find_first(|&s| m.matches(s)))
}

/// Regenerates `n` noise values drawn from `noise_spec` by a fresh
/// generator seeded with `seed`.
pub fn regenerate_noise(
    algorithm: Algorithm,
    seed: u64,
    noise_spec: &DistributionSpec,
    n: usize,
) -> Result<Vec<f64>, AttackError> {
    if noise_spec.is_discrete() {
        return Err(AttackError::SpecMismatch(format!("{noise_spec} is not an additive noise distribution")));
    }
    if algorithm == Algorithm::CsprngCtr {
        return Err(AttackError::Unsupported(algorithm));
    }
    let mut g = GeneratorHandle::from_seed(algorithm, seed)?;
    let mut s = Sampler::new(*noise_spec).map_err(|e| AttackError::SpecMismatch(e.to_string()))?;
    let mut out = vec![0.0; n];
    s.fill(&mut g, &mut out)?;
    Ok(out)
}

/// Subtracts the regenerated noise from the published values.
pub fn denoise_dp_updates(
    noisy: &[f64],
    algorithm: Algorithm,
    seed: u64,
    noise_spec: &DistributionSpec,
) -> Result<Vec<f64>, AttackError> {
    let noise = regenerate_noise(algorithm, seed, noise_spec, noisy.len())?;
    Ok(noisy.iter().zip(noise).map(|(y, n)| y - n).collect())
}

/// Least-squares regression problem whose per-round gradients stand in for
/// a model's updates.
#[derive(Clone, Debug)]
pub struct GradientFixture {
    x: Vec<Vec<f64>>,
    y: Vec<f64>,
    weights: Vec<f64>,
    learning_rate: f64,
}

impl GradientFixture {
    pub fn new(rows: usize, dim: usize, fixture_seed: u64) -> Self {
        let mut g = GeneratorHandle::from_seed(Algorithm::PhiloxCounter, fixture_seed).expect("philox accepts any seed");
        let mut normal = Sampler::new(DistributionSpec::standard_normal()).expect("valid spec");
        let mut draw = || normal.sample(&mut g).expect("philox never fails");
        let truth: Vec<f64> = (0..dim).map(|_| draw()).collect();
        let x: Vec<Vec<f64>> = (0..rows).map(|_| (0..dim).map(|_| draw()).collect()).collect();
        let y = x.iter().map(|row| dot(row, &truth) + 0.1 * draw()).collect();
        Self { x, y, weights: vec![0.0; dim], learning_rate: 0.05 }
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    /// Mean-squared-error gradient at the current weights.
    pub fn gradient(&self) -> Vec<f64> {
        let m = self.x.len() as f64;
        let mut grad = vec![0.0; self.dim()];
        for (row, y) in self.x.iter().zip(&self.y) {
            let residual = dot(row, &self.weights) - y;
            for (g, xi) in grad.iter_mut().zip(row) {
                *g += residual * xi / m;
            }
        }
        grad
    }

    pub fn step(&mut self, update: &[f64]) {
        for (w, u) in self.weights.iter_mut().zip(update) {
            *w -= self.learning_rate * u;
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KillChainConfig {
    pub window_s: f64,
    pub resolution_us: u64,
    /// Earliest clock reading the attacker considers.
    pub window_start_us: u64,
    /// Index of the true reading within the window.
    pub true_offset: u64,
    pub observed_words: usize,
    pub rounds: u64,
    pub dim: usize,
    pub noise_sigma: f64,
}

impl Default for KillChainConfig {
    fn default() -> Self {
        Self {
            window_s: 10.0,
            resolution_us: 1,
            window_start_us: 1_700_000_000_000_000,
            true_offset: 7_654_321,
            observed_words: 4,
            rounds: 5,
            dim: 16,
            noise_sigma: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KillChainOutcome {
    pub entropy_bits: f64,
    pub search_size: u64,
    pub true_seed: u64,
    pub recovered_seed: Option<u64>,
    pub recovery_secs: f64,
    pub rounds: u64,
    /// Largest elementwise gap between recovered and true gradients.
    pub max_abs_error: Option<f64>,
}

/// Simulates a federated server that seeds MT19937 with its start time in
/// microseconds. The generator seeded with the start time itself is used
/// once in public (its first words leak); round `r` noise comes from the
/// generator seeded with `start + r`. The attacker searches the window,
/// regenerates each round's noise and subtracts it.
pub fn run_time_window_kill_chain(cfg: &KillChainConfig) -> Result<KillChainOutcome, AttackError> {
    let bits = entropy_bits(cfg.window_s, cfg.resolution_us)?;
    let search_size = window_candidates(cfg.window_s, cfg.resolution_us)?;
    if cfg.true_offset >= search_size {
        return Err(AttackError::InvalidWindow(format!(
            "true offset {} lies outside the {search_size} candidate window",
            cfg.true_offset
        )));
    }
    let seed = cfg.window_start_us + cfg.true_offset * cfg.resolution_us;

    // Server side.
    let mut public = GeneratorHandle::from_seed(Algorithm::Mt19937, seed)?;
    let leaked = (0..cfg.observed_words).map(|_| public.next_u64()).collect::<Result<Vec<_>, _>>()?;
    let noise_spec = DistributionSpec::Normal { mu: 0.0, sigma: cfg.noise_sigma };
    let mut fixture = GradientFixture::new(64, cfg.dim, 7);
    let mut true_grads = Vec::new();
    let mut published = Vec::new();
    for r in 1..=cfg.rounds {
        let grad = fixture.gradient();
        let noise = regenerate_noise(Algorithm::Mt19937, seed.wrapping_add(r), &noise_spec, grad.len())?;
        let noisy: Vec<f64> = grad.iter().zip(&noise).map(|(g, n)| g + n).collect();
        fixture.step(&noisy);
        true_grads.push(grad);
        published.push(noisy);
    }

    // Attacker side.
    let started = Instant::now();
    let recovered =
        brute_force_seed_range(&leaked, Algorithm::Mt19937, cfg.window_start_us, search_size, cfg.resolution_us)?;
    let recovery_secs = started.elapsed().as_secs_f64();
    let max_abs_error = match recovered {
        Some(s) => {
            let mut worst = 0.0f64;
            for (r, (noisy, truth)) in (1..).zip(published.iter().zip(&true_grads)) {
                let clean = denoise_dp_updates(noisy, Algorithm::Mt19937, s.wrapping_add(r), &noise_spec)?;
                for (a, b) in clean.iter().zip(truth) {
                    worst = worst.max((a - b).abs());
                }
            }
            Some(worst)
        }
        None => None,
    };
    Ok(KillChainOutcome {
        entropy_bits: bits,
        search_size,
        true_seed: seed,
        recovered_seed: recovered,
        recovery_secs,
        rounds: cfg.rounds,
        max_abs_error,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseStats {
    pub batches: u64,
    pub warns: u64,
    pub warn_rate: f64,
    /// Sequence index of the earliest warning.
    pub first_warn: Option<u64>,
}

impl PhaseStats {
    fn from_reports(reports: &[crate::auditor::AuditReport]) -> Self {
        let warns = reports.iter().filter(|r| r.is_warn()).count() as u64;
        let batches = reports.len() as u64;
        Self {
            batches,
            warns,
            warn_rate: if batches == 0 { 0.0 } else { warns as f64 / batches as f64 },
            first_warn: reports.iter().filter(|r| r.is_warn()).map(|r| r.sequence_index).min(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionOutcome {
    pub attack: PhaseStats,
    /// Set when the attack phase warned and the slot was rebound.
    pub after_enforce: Option<PhaseStats>,
}

/// Warning rate above which a phase is treated as a detection. Honest
/// streams warn at about the threshold (1%), so five times that over 100
/// batches is far outside chance.
pub const DETECTION_RATE: f64 = 0.05;

fn tamper_experiment(
    spec: DistributionSpec,
    batches: u64,
    after_batches: u64,
    config: AuditorConfig,
    tamper: impl FnOnce(&mut SlotRegistry, &str) -> Result<(), AuditError>,
) -> Result<DetectionOutcome, AttackError> {
    const SLOT: &str = "target";
    let mut reg = SlotRegistry::new(config)?;
    reg.register(SLOT, GeneratorHandle::new(Algorithm::Mt19937, SeedSource::OsEntropy)?, spec)?;
    tamper(&mut reg, SLOT)?;
    let n = (batches as usize) * config.batch_size;
    reg.draw_batch(SLOT, n)?;
    let attack = PhaseStats::from_reports(&reg.collect_reports(DRAIN_TIMEOUT)?);
    let after_enforce = if attack.warns > 0 {
        let plan = vec![crate::policy::RemediationDirective {
            function_id: SLOT.into(),
            action: crate::policy::RemediationAction::ReplaceWithCsprng,
        }];
        reg.enforce(&plan)?;
        reg.draw_batch(SLOT, after_batches as usize * config.batch_size)?;
        Some(PhaseStats::from_reports(&reg.collect_reports(DRAIN_TIMEOUT)?))
    } else {
        None
    };
    reg.stop();
    Ok(DetectionOutcome { attack, after_enforce })
}

/// Draws `batches` audited batches from a slot that declares `claimed` but
/// samples `actual`. If anything warned, the slot is then replaced with a
/// CSPRNG and the declared transform, and `after_batches` more are drawn.
pub fn substitution_experiment(
    claimed: DistributionSpec,
    actual: DistributionSpec,
    batches: u64,
    after_batches: u64,
    config: AuditorConfig,
) -> Result<DetectionOutcome, AttackError> {
    tamper_experiment(claimed, batches, after_batches, config, |reg, slot| reg.substitute(slot, actual))
}

/// Like [`substitution_experiment`], with every draw shifted by `bias`
/// standard deviations and the Z test auditing continuous specs.
pub fn bias_experiment(
    spec: DistributionSpec,
    bias: f64,
    batches: u64,
    after_batches: u64,
    config: AuditorConfig,
) -> Result<DetectionOutcome, AttackError> {
    let config = AuditorConfig { continuous_test: ContinuousTest::Z, ..config };
    tamper_experiment(spec, batches, after_batches, config, |reg, slot| reg.bias(slot, bias))
}

/// Runs a scenario end to end and returns its transcript, one JSON object
/// per step.
pub fn simulate(scenario: &AttackScenario) -> Result<Vec<Value>, AttackError> {
    let batches = scenario.batches.unwrap_or(100);
    let config = AuditorConfig::with_mode(AuditMode::Asn);
    let mut t = vec![json!({ "event": "scenario", "scenario": scenario })];
    let slot = scenario.target_slot.as_str();
    match scenario.kind {
        AttackKind::ConstantSeed { value } => {
            let mut f = FunctionFact::new(slot);
            f.generator = Some(GeneratorFact::new(Algorithm::Mt19937, SeedSource::Constant { value }));
            let manifest =
                RandomnessManifest { core_rng_ids: [slot.to_string()].into(), functions: vec![f], edges: vec![] };
            let violations = evaluate_policies(&manifest, &Ruleset::default())?;
            t.push(json!({ "event": "policy", "violations": violations }));
            t.push(json!({ "event": "remediation", "plan": remediation_plan(&violations) }));

            let mut g = GeneratorHandle::from_seed(Algorithm::Mt19937, value)?;
            let leaked = (0..4).map(|_| g.next_u64()).collect::<Result<Vec<_>, _>>()?;
            let recovered = brute_force_seed(&leaked, Algorithm::Mt19937, [value])?;
            t.push(json!({ "event": "seed_recovery", "search_size": 1, "recovered_seed": recovered }));
            let detected = !violations.is_empty();
            t.push(outcome(detected, "constant seed flagged before any draw"));
        }
        AttackKind::TimeWindowSeed { window_s, resolution_us } => {
            let search_size = window_candidates(window_s, resolution_us)?;
            let cfg = KillChainConfig {
                window_s,
                resolution_us,
                true_offset: search_size * 3 / 4,
                ..KillChainConfig::default()
            };
            let out = run_time_window_kill_chain(&cfg)?;
            t.push(json!({
                "event": "seed_recovery",
                "entropy_bits": out.entropy_bits,
                "search_size": out.search_size,
                "true_seed": out.true_seed,
                "recovered_seed": out.recovered_seed,
                "recovery_secs": out.recovery_secs,
            }));
            t.push(json!({ "event": "denoise", "rounds": out.rounds, "max_abs_error": out.max_abs_error }));
            t.push(outcome(out.recovered_seed.is_some(), "seed recovered and noise stripped"));
        }
        AttackKind::TransformSubstitution { claimed, actual } => {
            let out = substitution_experiment(claimed, actual, batches, batches, config)?;
            push_detection(&mut t, &out);
        }
        AttackKind::BiasedGenerator { bias } => {
            let out = bias_experiment(DistributionSpec::standard_normal(), bias, batches, batches, config)?;
            push_detection(&mut t, &out);
        }
    }
    Ok(t)
}

fn push_detection(t: &mut Vec<Value>, out: &DetectionOutcome) {
    t.push(json!({ "event": "audit", "phase": "attack", "stats": out.attack }));
    if let Some(after) = out.after_enforce {
        t.push(json!({ "event": "enforce", "action": crate::policy::RemediationAction::ReplaceWithCsprng }));
        t.push(json!({ "event": "audit", "phase": "after_enforce", "stats": after }));
    }
    t.push(outcome(out.attack.warn_rate > DETECTION_RATE, "audit warnings above the calibration band"));
}

fn outcome(detected: bool, what: &str) -> Value {
    json!({
        "event": "outcome",
        "detected": detected,
        "summary": if detected { format!("violation: {what}") } else { "no violation".to_string() },
    })
}
