//! Static policy phase: randomness manifests, transitive RNG dependence and
//! the security rules evaluated over them.
//!
//! A manifest declares a call graph and, per function, what is known about
//! its randomness: the distribution it is meant to produce, the generator it
//! draws from, and whether it runs inside a differential-privacy mechanism.
//! Rules are evaluated only for functions that can reach a core RNG
//! primitive; anything else carrying RNG facts is reported as unreachable.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prng::{Algorithm, SecurityClass, SeedSource};
use crate::transforms::DistributionSpec;

/// Seeds drawn from a range narrower than this many bits are flagged.
pub const DEFAULT_ENTROPY_FLOOR_BITS: f64 = 32.0;

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("malformed manifest: {0}")]
    MalformedManifest(String),
    #[error("manifest is not valid JSON: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FunctionContext {
    #[default]
    General,
    /// Epsilon and delta are labels; no privacy guarantee is checked.
    DifferentialPrivacy { epsilon: f64, delta: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorFact {
    pub algorithm: Algorithm,
    pub seed_source: SeedSource,
    /// Optional in manifests; when present it must agree with the class
    /// derived from algorithm and seed source.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub security_class: Option<SecurityClass>,
}

impl GeneratorFact {
    pub fn new(algorithm: Algorithm, seed_source: SeedSource) -> Self {
        Self { algorithm, seed_source, security_class: None }
    }

    pub fn derived_class(&self) -> SecurityClass {
        SecurityClass::of(self.algorithm, &self.seed_source)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FunctionFact {
    pub id: String,
    #[serde(default, rename = "distribution", skip_serializing_if = "Option::is_none")]
    pub declared_distribution: Option<DistributionSpec>,
    /// `None` means the function draws from the host framework's default
    /// generator, which is never cryptographic.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<GeneratorFact>,
    #[serde(default)]
    pub context: FunctionContext,
}

impl FunctionFact {
    pub fn new(id: impl Into<String>) -> Self {
        Self { id: id.into(), declared_distribution: None, generator: None, context: FunctionContext::General }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RandomnessManifest {
    pub functions: Vec<FunctionFact>,
    #[serde(default)]
    pub edges: Vec<(String, String)>,
    #[serde(default)]
    pub core_rng_ids: BTreeSet<String>,
}

impl RandomnessManifest {
    pub fn from_json(text: &str) -> Result<Self, PolicyError> {
        let manifest: Self = serde_json::from_str(text)?;
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    pub fn validate(&self) -> Result<(), PolicyError> {
        let malformed = |m: String| Err(PolicyError::MalformedManifest(m));
        let mut ids = BTreeSet::new();
        for f in &self.functions {
            if !ids.insert(f.id.as_str()) {
                return malformed(format!("duplicate function id {:?}", f.id));
            }
            if let FunctionContext::DifferentialPrivacy { epsilon, delta } = f.context {
                if !(epsilon > 0.0) || !(0.0..1.0).contains(&delta) {
                    return malformed(format!(
                        "{:?}: differential privacy labels need epsilon > 0 and delta in [0, 1)",
                        f.id
                    ));
                }
            }
            if let Some(g) = &f.generator {
                if let Err(e) = g.seed_source.validate() {
                    return malformed(format!("{:?}: {e}", f.id));
                }
                if let Some(declared) = g.security_class {
                    if declared != g.derived_class() {
                        return malformed(format!(
                            "{:?}: declared security class {declared:?} contradicts {:?} derived from {} seeded by {}",
                            f.id,
                            g.derived_class(),
                            g.algorithm,
                            g.seed_source
                        ));
                    }
                }
            }
            if let Some(d) = &f.declared_distribution {
                if let Err(e) = d.validate() {
                    return malformed(format!("{:?}: {e}", f.id));
                }
            }
        }
        for (caller, callee) in &self.edges {
            for end in [caller, callee] {
                if !ids.contains(end.as_str()) {
                    return malformed(format!("edge {caller:?} -> {callee:?} references unknown function {end:?}"));
                }
            }
        }
        for core in &self.core_rng_ids {
            if !ids.contains(core.as_str()) {
                return malformed(format!("core RNG id {core:?} is not a declared function"));
            }
        }
        Ok(())
    }

    pub fn function(&self, id: &str) -> Option<&FunctionFact> {
        self.functions.iter().find(|f| f.id == id)
    }
}

/// Every function from which some core RNG function is reachable along call
/// edges, core functions included.
pub fn transitive_rng_closure(manifest: &RandomnessManifest) -> Result<BTreeSet<String>, PolicyError> {
    manifest.validate()?;
    let mut callers: HashMap<&str, Vec<&str>> = HashMap::new();
    for (caller, callee) in &manifest.edges {
        callers.entry(callee.as_str()).or_default().push(caller.as_str());
    }
    let mut reached: BTreeSet<String> = BTreeSet::new();
    let mut queue: VecDeque<&str> = VecDeque::new();
    for core in &manifest.core_rng_ids {
        if reached.insert(core.clone()) {
            queue.push_back(core);
        }
    }
    while let Some(node) = queue.pop_front() {
        for &caller in callers.get(node).into_iter().flatten() {
            if reached.insert(caller.to_string()) {
                queue.push_back(caller);
            }
        }
    }
    Ok(reached)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PolicyRule {
    InsecureSeedSource,
    LowSeedEntropy,
    NonCsprngInDpContext,
    UnexpectedDistribution,
    UnreachableGeneratorFacts,
}

impl fmt::Display for PolicyRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyViolation {
    pub rule: PolicyRule,
    pub function_id: String,
    pub severity: Severity,
    pub detail: String,
}

/// Per-deployment expectations layered on top of the built-in rules.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ruleset {
    /// Distribution each function id is expected to declare. Matching is on
    /// family and exact parameter equality.
    #[serde(default)]
    pub expected_distributions: BTreeMap<String, DistributionSpec>,
    #[serde(default = "default_floor")]
    pub entropy_floor_bits: f64,
}

fn default_floor() -> f64 {
    DEFAULT_ENTROPY_FLOOR_BITS
}

impl Default for Ruleset {
    fn default() -> Self {
        Self { expected_distributions: BTreeMap::new(), entropy_floor_bits: DEFAULT_ENTROPY_FLOOR_BITS }
    }
}

/// Evaluates every rule. Output is sorted by `(function_id, rule)` and holds
/// at most one violation per pair.
pub fn evaluate_policies(
    manifest: &RandomnessManifest,
    ruleset: &Ruleset,
) -> Result<Vec<PolicyViolation>, PolicyError> {
    let closure = transitive_rng_closure(manifest)?;
    let mut out = Vec::new();
    for f in &manifest.functions {
        if !closure.contains(&f.id) {
            if f.generator.is_some() || f.declared_distribution.is_some() {
                out.push(PolicyViolation {
                    rule: PolicyRule::UnreachableGeneratorFacts,
                    function_id: f.id.clone(),
                    severity: Severity::Warning,
                    detail: "declares randomness facts but cannot reach any core RNG function".into(),
                });
            }
            continue;
        }
        check_function(f, ruleset, &mut out);
    }
    out.sort_by(|a, b| (&a.function_id, a.rule).cmp(&(&b.function_id, b.rule)));
    out.dedup_by(|a, b| a.function_id == b.function_id && a.rule == b.rule);
    Ok(out)
}

fn check_function(f: &FunctionFact, ruleset: &Ruleset, out: &mut Vec<PolicyViolation>) {
    let violation = |rule, severity, detail: String| PolicyViolation {
        rule,
        function_id: f.id.clone(),
        severity,
        detail,
    };

    if let FunctionContext::DifferentialPrivacy { epsilon, delta } = f.context {
        let class = f.generator.as_ref().map(GeneratorFact::derived_class);
        if class != Some(SecurityClass::Cryptographic) {
            let what = match &f.generator {
                Some(g) => format!("{} seeded by {}", g.algorithm, g.seed_source),
                None => "the host default generator".to_string(),
            };
            out.push(violation(
                PolicyRule::NonCsprngInDpContext,
                Severity::Error,
                format!("DP mechanism (epsilon={epsilon}, delta={delta}) draws from {what}; a CSPRNG is required"),
            ));
        }
    }

    if let Some(g) = &f.generator {
        match g.seed_source {
            SeedSource::SystemTime { resolution_us } => out.push(violation(
                PolicyRule::InsecureSeedSource,
                Severity::Error,
                format!("seeded from system time at {resolution_us} us resolution, which is predictable"),
            )),
            SeedSource::Constant { value } => out.push(violation(
                PolicyRule::InsecureSeedSource,
                Severity::Error,
                format!("seeded with the constant {value}"),
            )),
            SeedSource::UserProvided { .. } => out.push(violation(
                PolicyRule::InsecureSeedSource,
                Severity::Warning,
                "seed is user provided; its secrecy is the caller's responsibility".into(),
            )),
            SeedSource::BoundedRange { lo, hi } => {
                let bits = ((hi - lo) as f64).log2();
                if bits < ruleset.entropy_floor_bits {
                    out.push(violation(
                        PolicyRule::LowSeedEntropy,
                        Severity::Warning,
                        format!(
                            "seed drawn from [{lo}, {hi}) carries {bits:.2} bits, below the {} bit floor",
                            ruleset.entropy_floor_bits
                        ),
                    ));
                }
            }
            SeedSource::OsEntropy => {}
        }
    }

    if let (Some(expected), Some(declared)) = (ruleset.expected_distributions.get(&f.id), &f.declared_distribution) {
        if expected != declared {
            out.push(violation(
                PolicyRule::UnexpectedDistribution,
                Severity::Warning,
                format!("declares {declared}, expected {expected}"),
            ));
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RemediationAction {
    ReseedFromOsEntropy,
    ReplaceWithCsprng,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RemediationDirective {
    pub function_id: String,
    pub action: RemediationAction,
}

/// One directive per affected function, sorted by function id. Replacing
/// the generator with a CSPRNG also fixes its seed, so it subsumes a
/// reseed.
pub fn remediation_plan(violations: &[PolicyViolation]) -> Vec<RemediationDirective> {
    let mut plan: BTreeMap<&str, RemediationAction> = BTreeMap::new();
    for v in violations {
        let action = match v.rule {
            PolicyRule::InsecureSeedSource | PolicyRule::LowSeedEntropy => RemediationAction::ReseedFromOsEntropy,
            PolicyRule::NonCsprngInDpContext => RemediationAction::ReplaceWithCsprng,
            PolicyRule::UnexpectedDistribution | PolicyRule::UnreachableGeneratorFacts => continue,
        };
        let slot = plan.entry(v.function_id.as_str()).or_insert(action);
        *slot = (*slot).max(action);
    }
    plan.into_iter()
        .map(|(id, action)| RemediationDirective { function_id: id.to_string(), action })
        .collect()
}

/// The manifest as it would look after the directives have been enforced.
pub fn apply_remediation(manifest: &RandomnessManifest, plan: &[RemediationDirective]) -> RandomnessManifest {
    let mut out = manifest.clone();
    for d in plan {
        let Some(f) = out.functions.iter_mut().find(|f| f.id == d.function_id) else {
            continue;
        };
        match d.action {
            RemediationAction::ReseedFromOsEntropy => {
                if let Some(g) = f.generator.as_mut() {
                    g.seed_source = SeedSource::OsEntropy;
                    g.security_class = None;
                }
            }
            RemediationAction::ReplaceWithCsprng => {
                f.generator = Some(GeneratorFact::new(Algorithm::CsprngCtr, SeedSource::OsEntropy));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn chain() -> RandomnessManifest {
        RandomnessManifest {
            functions: ["A", "B", "rand", "C"].into_iter().map(FunctionFact::new).collect(),
            edges: vec![("A".into(), "B".into()), ("B".into(), "rand".into())],
            core_rng_ids: ["rand".to_string()].into(),
        }
    }

    fn set(ids: &[&str]) -> BTreeSet<String> {
        ids.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn closure_follows_call_chain() {
        assert_eq!(transitive_rng_closure(&chain()).unwrap(), set(&["A", "B", "rand"]));
    }

    #[test]
    fn closure_of_isolated_core() {
        let mut m = chain();
        m.edges = vec![("A".into(), "B".into())];
        assert_eq!(transitive_rng_closure(&m).unwrap(), set(&["rand"]));
    }

    #[test]
    fn dangling_edges_are_malformed() {
        let mut m = chain();
        m.edges.push(("A".into(), "ghost".into()));
        assert!(matches!(transitive_rng_closure(&m), Err(PolicyError::MalformedManifest(_))));
        let mut m = chain();
        m.core_rng_ids.insert("ghost".into());
        assert!(matches!(m.validate(), Err(PolicyError::MalformedManifest(_))));
    }

    fn one(f: FunctionFact) -> RandomnessManifest {
        RandomnessManifest {
            core_rng_ids: [f.id.clone()].into(),
            functions: vec![f],
            edges: vec![],
        }
    }

    #[test]
    fn dp_context_with_mt_is_an_error() {
        let mut f = FunctionFact::new("noise");
        f.generator = Some(GeneratorFact::new(Algorithm::Mt19937, SeedSource::OsEntropy));
        f.context = FunctionContext::DifferentialPrivacy { epsilon: 1.0, delta: 1e-5 };
        let v = evaluate_policies(&one(f), &Ruleset::default()).unwrap();
        assert_eq!(v.len(), 1);
        assert_eq!((v[0].rule, v[0].severity), (PolicyRule::NonCsprngInDpContext, Severity::Error));
    }

    #[test]
    fn system_time_seed_is_an_error() {
        let mut f = FunctionFact::new("init");
        f.generator = Some(GeneratorFact::new(Algorithm::Mt19937, SeedSource::SystemTime { resolution_us: 1 }));
        let v = evaluate_policies(&one(f), &Ruleset::default()).unwrap();
        assert_eq!(v.len(), 1);
        assert_eq!((v[0].rule, v[0].severity), (PolicyRule::InsecureSeedSource, Severity::Error));
    }

    #[test]
    fn user_seed_is_a_warning() {
        let mut f = FunctionFact::new("jax_like");
        f.generator = Some(GeneratorFact::new(Algorithm::PhiloxCounter, SeedSource::UserProvided { value: 0 }));
        let v = evaluate_policies(&one(f), &Ruleset::default()).unwrap();
        assert_eq!((v[0].rule, v[0].severity), (PolicyRule::InsecureSeedSource, Severity::Warning));
    }

    #[test]
    fn clean_manifest_has_no_violations() {
        let mut m = chain();
        for f in &mut m.functions {
            f.generator = Some(GeneratorFact::new(Algorithm::CsprngCtr, SeedSource::OsEntropy));
        }
        m.functions[0].context = FunctionContext::DifferentialPrivacy { epsilon: 8.0, delta: 0.0 };
        m.edges.push(("C".into(), "rand".into()));
        assert!(evaluate_policies(&m, &Ruleset::default()).unwrap().is_empty());
    }

    #[test]
    fn unexpected_distribution_and_unreachable_facts() {
        let mut m = chain();
        m.functions[0].declared_distribution = Some(DistributionSpec::UniformReal { a: 0.0, b: 1.0 });
        m.functions[3].declared_distribution = Some(DistributionSpec::standard_normal());
        let mut rules = Ruleset::default();
        rules.expected_distributions.insert("A".into(), DistributionSpec::standard_normal());
        let v = evaluate_policies(&m, &rules).unwrap();
        let got: Vec<_> = v.iter().map(|v| (v.function_id.as_str(), v.rule)).collect();
        assert_eq!(
            got,
            vec![("A", PolicyRule::UnexpectedDistribution), ("C", PolicyRule::UnreachableGeneratorFacts)]
        );
    }

    #[test]
    fn security_class_contradiction_is_malformed() {
        let json = r#"{"functions":[{"id":"f","generator":{"algorithm":"mt19937",
            "seed_source":{"kind":"os_entropy"},"security_class":"cryptographic"}}],
            "edges":[],"core_rng_ids":["f"]}"#;
        assert!(matches!(RandomnessManifest::from_json(json), Err(PolicyError::MalformedManifest(_))));
    }

    #[test]
    fn remediation_examples() {
        let v = |rule, id: &str| PolicyViolation {
            rule,
            function_id: id.into(),
            severity: Severity::Error,
            detail: String::new(),
        };
        assert!(remediation_plan(&[]).is_empty());
        assert_eq!(
            remediation_plan(&[v(PolicyRule::NonCsprngInDpContext, "f")]),
            vec![RemediationDirective { function_id: "f".into(), action: RemediationAction::ReplaceWithCsprng }]
        );
        assert_eq!(
            remediation_plan(&[v(PolicyRule::InsecureSeedSource, "g")]),
            vec![RemediationDirective { function_id: "g".into(), action: RemediationAction::ReseedFromOsEntropy }]
        );
        let both = remediation_plan(&[v(PolicyRule::InsecureSeedSource, "h"), v(PolicyRule::NonCsprngInDpContext, "h")]);
        assert_eq!(both.len(), 1);
        assert_eq!(both[0].action, RemediationAction::ReplaceWithCsprng);
    }

    fn arb_seed_source() -> impl Strategy<Value = SeedSource> {
        prop_oneof![
            Just(SeedSource::OsEntropy),
            (1u64..1000).prop_map(|r| SeedSource::SystemTime { resolution_us: r }),
            any::<u64>().prop_map(|v| SeedSource::Constant { value: v }),
            (0u64..1 << 40, 1u64..1 << 40).prop_map(|(lo, w)| SeedSource::BoundedRange { lo, hi: lo + w }),
            any::<u64>().prop_map(|v| SeedSource::UserProvided { value: v }),
        ]
    }

    fn arb_manifest() -> impl Strategy<Value = RandomnessManifest> {
        (2usize..20).prop_flat_map(|n| {
            let fact = (
                proptest::option::of((0usize..4, arb_seed_source())),
                any::<bool>(),
            );
            (
                proptest::collection::vec(fact, n),
                proptest::collection::vec((0..n, 0..n), 0..3 * n),
                proptest::collection::btree_set(0..n, 1..3),
            )
                .prop_map(move |(facts, edges, cores)| {
                    let algs = [Algorithm::Mt19937, Algorithm::PhiloxCounter, Algorithm::WeakLcg, Algorithm::CsprngCtr];
                    let functions = facts
                        .into_iter()
                        .enumerate()
                        .map(|(i, (g, dp))| FunctionFact {
                            id: format!("f{i}"),
                            declared_distribution: None,
                            generator: g.map(|(a, s)| GeneratorFact::new(algs[a], s)),
                            context: if dp {
                                FunctionContext::DifferentialPrivacy { epsilon: 1.0, delta: 1e-5 }
                            } else {
                                FunctionContext::General
                            },
                        })
                        .collect();
                    RandomnessManifest {
                        functions,
                        edges: edges.into_iter().map(|(a, b)| (format!("f{a}"), format!("f{b}"))).collect(),
                        core_rng_ids: cores.into_iter().map(|c| format!("f{c}")).collect(),
                    }
                })
        })
    }

    proptest! {
        #[test]
        fn remediation_is_a_one_pass_fixpoint(m in arb_manifest()) {
            let rules = Ruleset::default();
            let before = evaluate_policies(&m, &rules).unwrap();
            let fixed = apply_remediation(&m, &remediation_plan(&before));
            let after = evaluate_policies(&fixed, &rules).unwrap();
            prop_assert!(after.iter().all(|v| v.severity != Severity::Error), "{after:?}");
        }

        #[test]
        fn evaluation_ignores_list_order(m in arb_manifest(), seed in any::<u64>()) {
            let rules = Ruleset::default();
            let base = evaluate_policies(&m, &rules).unwrap();
            let mut shuffled = m.clone();
            let k = (seed as usize) % shuffled.functions.len().max(1);
            shuffled.functions.rotate_left(k);
            shuffled.functions.reverse();
            shuffled.edges.reverse();
            prop_assert_eq!(base, evaluate_policies(&shuffled, &rules).unwrap());
        }

        #[test]
        fn adding_edges_never_shrinks_closure(m in arb_manifest(), a in 0usize..20, b in 0usize..20) {
            let n = m.functions.len();
            let before = transitive_rng_closure(&m).unwrap();
            let mut grown = m.clone();
            grown.edges.push((format!("f{}", a % n), format!("f{}", b % n)));
            let after = transitive_rng_closure(&grown).unwrap();
            prop_assert!(before.is_subset(&after));
        }

        #[test]
        fn isolated_function_leaves_others_untouched(m in arb_manifest(), src in arb_seed_source()) {
            let rules = Ruleset::default();
            let before = evaluate_policies(&m, &rules).unwrap();
            let mut grown = m.clone();
            let mut extra = FunctionFact::new("isolated");
            extra.generator = Some(GeneratorFact::new(Algorithm::Mt19937, src));
            grown.functions.push(extra);
            let after: Vec<_> = evaluate_policies(&grown, &rules)
                .unwrap()
                .into_iter()
                .filter(|v| v.function_id != "isolated")
                .collect();
            prop_assert_eq!(before, after);
        }
    }
}
