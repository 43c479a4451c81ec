//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails or runs over its time budget.

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{self, AssertUnwindSafe};
use std::time::{Duration, Instant};

use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};

use rng_sentinel::attacks::{entropy_bits, run_time_window_kill_chain, substitution_experiment, KillChainConfig};
use rng_sentinel::auditor::{AuditMode, AuditorConfig, SlotRegistry};
use rng_sentinel::policy::{
    evaluate_policies, transitive_rng_closure, FunctionFact, PolicyRule, RandomnessManifest, Ruleset, Severity,
};
use rng_sentinel::prng::{Algorithm, GeneratorHandle, Mt19937};
use rng_sentinel::stats::special::{chi2_sf, erfc, kolmogorov_sf, normal_cdf};
use rng_sentinel::stats::{
    chi_square_test, chi_square_uniform_int, ks_test, monobit_test_words, z_test, StatsError, TestReport,
};
use rng_sentinel::transforms::{to_uniform_real, DistributionSpec, Sampler};
use rng_sentinel::workload::{Workload, WorkloadMode};

type Outcome = Result<String, String>;

const BAND: (f64, f64) = (0.006, 0.014);

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn data(name: &str) -> Vec<String> {
    let path = format!("{}/tests/data/{name}", env!("CARGO_MANIFEST_DIR"));
    std::fs::read_to_string(&path)
        .unwrap_or_else(|e| panic!("{path}: {e}"))
        .lines()
        .filter(|l| !l.starts_with('#') && !l.trim().is_empty())
        .map(str::to_string)
        .collect()
}

fn philox(seed: u64) -> GeneratorHandle {
    GeneratorHandle::from_seed(Algorithm::PhiloxCounter, seed).unwrap()
}

fn samples(g: &mut GeneratorHandle, spec: DistributionSpec, n: usize) -> Vec<f64> {
    let mut s = Sampler::new(spec).unwrap();
    let mut out = vec![0.0; n];
    s.fill(g, &mut out).unwrap();
    out
}

fn mt_conformance() -> Outcome {
    let expected: Vec<u32> = data("mt19937_seed5489.txt").iter().map(|l| l.parse().unwrap()).collect();
    ensure(expected.len() == 1000, "reference file should hold 1000 words")?;
    let mut mt = Mt19937::new(5489);
    for (i, &e) in expected.iter().enumerate() {
        let got = mt.next_u32();
        ensure(got == e, format!("output {i}: got {got}, want {e}"))?;
    }
    Ok("1000/1000 outputs bit-exact".into())
}

fn special_functions() -> Outcome {
    let mut worst: BTreeMap<&str, (usize, f64)> = BTreeMap::new();
    for row in data("special_functions.txt") {
        let t: Vec<&str> = row.split_whitespace().collect();
        let num = |i: usize| t[i].parse::<f64>().unwrap();
        let (name, got, want) = match t[0] {
            "normal_cdf" => ("normal_cdf", normal_cdf(num(1)), num(2)),
            "erfc" => ("erfc", erfc(num(1)), num(2)),
            "chi2_sf" => ("chi2_sf", chi2_sf(num(1), t[2].parse().unwrap()), num(3)),
            "kolmogorov_sf" => ("kolmogorov_sf", kolmogorov_sf(num(1), t[2].parse().unwrap()), num(3)),
            _ => continue,
        };
        let e = worst.entry(name).or_insert((0, 0.0));
        e.0 += 1;
        e.1 = e.1.max((got - want).abs());
    }
    ensure(worst.len() == 4, format!("expected 4 functions, found {worst:?}"))?;
    for (name, (n, err)) in &worst {
        ensure(*n == 100, format!("{name}: {n} grid points"))?;
        ensure(*err <= 1e-8, format!("{name}: max error {err:e}"))?;
    }
    let detail: Vec<String> = worst.iter().map(|(k, (_, e))| format!("{k} {e:.1e}")).collect();
    Ok(format!("max abs error: {}", detail.join(", ")))
}

fn warn_rate(batches: usize, mut run: impl FnMut(usize) -> TestReport) -> f64 {
    (0..batches).filter(|&i| run(i).is_warn()).count() as f64 / batches as f64
}

fn calibration() -> Outcome {
    const BATCHES: usize = 10_000;
    let normal = DistributionSpec::standard_normal();
    let mut rates = Vec::new();

    let mut g = philox(101);
    rates.push(("KS vs N(0,1)", warn_rate(BATCHES, |_| ks_test(&samples(&mut g, normal, 100), normal_cdf).unwrap())));

    let mut g = philox(202);
    rates.push((
        "KS vs U(0,1)",
        warn_rate(BATCHES, |_| {
            ks_test(&samples(&mut g, DistributionSpec::unit_uniform(), 100), |x| x.clamp(0.0, 1.0)).unwrap()
        }),
    ));

    let mut g = philox(303);
    let ints = DistributionSpec::UniformInt { a: 0, b: 10 };
    rates.push((
        "chi2 uniform 10-bin",
        warn_rate(BATCHES, |_| chi_square_uniform_int(&samples(&mut g, ints, 100), 0, 10, 10).unwrap()),
    ));

    let mut g = philox(404);
    rates.push(("Z", warn_rate(BATCHES, |_| z_test(&samples(&mut g, normal, 100), 0.0, 1.0).unwrap())));

    let mut g = philox(505);
    rates.push((
        "MonoBit",
        warn_rate(BATCHES, |_| {
            let words: Vec<u64> = (0..100).map(|_| g.next_u64().unwrap()).collect();
            monobit_test_words(&words).unwrap()
        }),
    ));

    let detail: Vec<String> = rates.iter().map(|(n, r)| format!("{n} {r:.4}")).collect();
    for (name, r) in &rates {
        ensure((BAND.0..=BAND.1).contains(r), format!("{name}: warn rate {r} outside {BAND:?}; {}", detail.join(", ")))?;
    }
    Ok(detail.join(", "))
}

fn validity_rules() -> Outcome {
    let mut runner = TestRunner::new(Config { cases: 256, failure_persistence: None, ..Config::default() });

    // Any bin with expected count below 5 is rejected.
    runner
        .run(&(2usize..20, 0.0f64..4.999, 0usize..20), |(k, sparse, at)| {
            let at = at % k;
            let mut expected = vec![50.0; k];
            expected[at] = sparse;
            let total = expected.iter().sum::<f64>().round() as u64;
            let mut observed = vec![0u64; k];
            observed[0] = total;
            let r = chi_square_test(&observed, &expected);
            prop_assert!(matches!(r, Err(StatsError::BinTooSparse { bin, .. }) if bin == at), "{r:?}");
            Ok(())
        })
        .map_err(|e| format!("chi2 sparse bins: {e}"))?;

    // Fewer than 13 observations is rejected even when bins look dense.
    runner
        .run(&(0u64..13, 2usize..4), |(n, k)| {
            let expected = vec![n as f64 / k as f64; k];
            let mut observed = vec![0u64; k];
            observed[0] = n;
            let r = chi_square_test(&observed, &expected);
            prop_assert!(
                matches!(r, Err(StatsError::SampleTooSmall { min: 13, .. }) | Err(StatsError::BinTooSparse { .. })),
                "{r:?}"
            );
            Ok(())
        })
        .map_err(|e| format!("chi2 small samples: {e}"))?;
    // The sample-size rule on its own, with bins that satisfy the count rule.
    let r = chi_square_test(&[6, 6], &[6.0, 6.0]);
    ensure(matches!(r, Err(StatsError::SampleTooSmall { got: 12, min: 13 })), format!("n=12: {r:?}"))?;
    ensure(chi_square_test(&[7, 6], &[6.5, 6.5]).is_ok(), "n=13 with 6.5 per bin should be accepted")?;

    // KS needs 20 samples.
    runner
        .run(&proptest::collection::vec(-5.0f64..5.0, 0..40), |xs| {
            let r = ks_test(&xs, normal_cdf);
            if xs.len() < 20 {
                prop_assert!(matches!(r, Err(StatsError::SampleTooSmall { min: 20, .. })), "{r:?}");
            } else {
                prop_assert!(r.is_ok());
            }
            Ok(())
        })
        .map_err(|e| format!("KS minimum: {e}"))?;
    Ok("chi2 E<5 and n<13, KS n<20 rejected over 768 generated cases".into())
}

fn attack_detection() -> Outcome {
    // Kaiming normal for a fan-in of 64, replaced by a uniform draw.
    let claimed = DistributionSpec::Normal { mu: 0.0, sigma: (2.0f64 / 64.0).sqrt() };
    let out = substitution_experiment(
        claimed,
        DistributionSpec::unit_uniform(),
        1000,
        10_000,
        AuditorConfig::with_mode(AuditMode::Asn),
    )
    .map_err(|e| e.to_string())?;
    ensure(out.attack.batches == 1000, format!("{} attack batches audited", out.attack.batches))?;
    ensure(out.attack.warn_rate >= 0.99, format!("attack warn rate {}", out.attack.warn_rate))?;
    let after = out.after_enforce.ok_or("no enforcement phase ran")?;
    ensure(
        (BAND.0..=BAND.1).contains(&after.warn_rate),
        format!("post-enforce warn rate {} over {} batches", after.warn_rate, after.batches),
    )?;
    Ok(format!(
        "attack: {}/{} batches warned; after enforce: rate {:.4} over {} batches",
        out.attack.warns, out.attack.batches, after.warn_rate, after.batches
    ))
}

fn kill_chain() -> Outcome {
    let bits = entropy_bits(10.0, 1).map_err(|e| e.to_string())?;
    ensure((bits - 23.2535).abs() < 1e-3, format!("entropy {bits}"))?;
    let cfg = KillChainConfig::default();
    ensure(cfg.observed_words == 4, "attacker observes 4 words")?;
    let out = run_time_window_kill_chain(&cfg).map_err(|e| e.to_string())?;
    ensure(out.search_size == 10_000_000, format!("search size {}", out.search_size))?;
    ensure(out.recovered_seed == Some(out.true_seed), format!("recovered {:?}, true {}", out.recovered_seed, out.true_seed))?;
    let err = out.max_abs_error.ok_or("no denoising ran")?;
    ensure(err <= 1e-9, format!("gradient error {err:e}"))?;
    Ok(format!(
        "{bits:.2} bits, seed {} recovered in {:.1}s, {} rounds denoised, max error {err:.1e}",
        out.true_seed, out.recovery_secs, out.rounds
    ))
}

fn rasn_exactness() -> Outcome {
    let mut reg =
        SlotRegistry::new(AuditorConfig::with_mode(AuditMode::Rasn { stride: 10 })).map_err(|e| e.to_string())?;
    reg.register("w", philox(7), DistributionSpec::standard_normal()).map_err(|e| e.to_string())?;
    reg.draw_batch("w", 1000 * 100).map_err(|e| e.to_string())?;
    let reports = reg.collect_reports(Duration::from_secs(60)).map_err(|e| e.to_string())?;
    ensure(reports.len() == 100, format!("{} reports", reports.len()))?;
    let seq: BTreeSet<u64> = reports.iter().map(|r| r.sequence_index).collect();
    ensure(seq == (1..=100).map(|i| 10 * i).collect(), "audited indices are not the multiples of 10")?;
    Ok("1000 batches -> 100 reports at indices 10, 20, ..., 1000".into())
}

fn mode_ordering() -> Outcome {
    let w = Workload::with_draws(1_000_000);
    let mut t = BTreeMap::new();
    for m in WorkloadMode::ALL {
        t.insert(m, w.median(m, 5).map_err(|e| e.to_string())?);
    }
    use WorkloadMode::*;
    let detail = WorkloadMode::ALL
        .iter()
        .map(|m| format!("{m} {:.1}ms", t[m].as_secs_f64() * 1e3))
        .collect::<Vec<_>>()
        .join(", ");
    ensure(t[&Unwrapped] <= t[&StaticEnforced], format!("unwrapped > static: {detail}"))?;
    ensure(t[&StaticEnforced] < t[&Rasn], format!("static >= rasn: {detail}"))?;
    ensure(t[&Rasn] <= t[&Asn], format!("rasn > asn: {detail}"))?;
    ensure(t[&Asn] <= t[&Blocking], format!("asn > blocking: {detail}"))?;
    Ok(detail)
}

/// Node-by-node depth-first reachability, independent of the library's
/// reverse breadth-first closure.
fn reachability_oracle(m: &RandomnessManifest) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    for f in &m.functions {
        let mut seen = BTreeSet::new();
        let mut stack = vec![f.id.as_str()];
        while let Some(node) = stack.pop() {
            if !seen.insert(node) {
                continue;
            }
            if m.core_rng_ids.contains(node) {
                out.insert(f.id.clone());
                break;
            }
            stack.extend(m.edges.iter().filter(|(a, _)| a == node).map(|(_, b)| b.as_str()));
        }
    }
    out
}

fn policy_golden() -> Outcome {
    let path = format!("{}/tests/data/policy_fixture.json", env!("CARGO_MANIFEST_DIR"));
    let manifest = RandomnessManifest::from_json(&std::fs::read_to_string(path).unwrap()).map_err(|e| e.to_string())?;
    let got: BTreeSet<(String, PolicyRule, Severity)> = evaluate_policies(&manifest, &Ruleset::default())
        .map_err(|e| e.to_string())?
        .into_iter()
        .map(|v| (v.function_id, v.rule, v.severity))
        .collect();
    let want: BTreeSet<(String, PolicyRule, Severity)> = [
        ("dp_noise", PolicyRule::NonCsprngInDpContext, Severity::Error),
        ("init_weights", PolicyRule::InsecureSeedSource, Severity::Error),
        ("shuffle", PolicyRule::LowSeedEntropy, Severity::Warning),
    ]
    .into_iter()
    .map(|(f, r, s)| (f.to_string(), r, s))
    .collect();
    ensure(got == want, format!("violations {got:?}"))?;

    let mut g = philox(909);
    let mut below = |n: u64| g.next_u64().unwrap() % n;
    for trial in 0..200 {
        let n = 1 + below(50) as usize;
        let functions = (0..n).map(|i| FunctionFact::new(format!("f{i}"))).collect();
        let edges = (0..below(3 * n as u64 + 1))
            .map(|_| (format!("f{}", below(n as u64)), format!("f{}", below(n as u64))))
            .collect();
        let core_rng_ids = (0..1 + below(3)).map(|_| format!("f{}", below(n as u64))).collect();
        let m = RandomnessManifest { functions, edges, core_rng_ids };
        let closure = transitive_rng_closure(&m).map_err(|e| e.to_string())?;
        ensure(closure == reachability_oracle(&m), format!("closure mismatch on trial {trial}"))?;
    }
    Ok("golden violations exact; closure matches DFS oracle on 200 random manifests".into())
}

fn transform_correctness() -> Outcome {
    const N: usize = 100_000;
    let mut detail = Vec::new();
    let cases = [
        ("UniformReal", DistributionSpec::UniformReal { a: -3.0, b: 5.0 }),
        ("Normal", DistributionSpec::Normal { mu: 1.0, sigma: 2.0 }),
        ("Laplace", DistributionSpec::Laplace { mu: 0.5, b: 1.5 }),
    ];
    for (i, (name, spec)) in cases.into_iter().enumerate() {
        let xs = samples(&mut philox(1000 + i as u64), spec, N);
        let r = ks_test(&xs, |x| spec.cdf(x)).map_err(|e| e.to_string())?;
        ensure(r.p_value > 0.001, format!("{name}: p = {}", r.p_value))?;
        detail.push(format!("{name} p={:.3}", r.p_value));
    }

    // The inverse CDF with ln(1 + |u|) in place of ln(1 - |u|).
    let (mu, b) = (0.5, 1.5);
    let mut g = philox(2000);
    let printed: Vec<f64> = (0..N)
        .map(|_| {
            let u = to_uniform_real(g.next_u64().unwrap(), -1.0, 1.0).unwrap();
            mu - b * u.signum() * (1.0 + u.abs()).ln()
        })
        .collect();
    let laplace = DistributionSpec::Laplace { mu, b };
    let r = ks_test(&printed, |x| laplace.cdf(x)).map_err(|e| e.to_string())?;
    ensure(r.p_value <= 0.001, format!("ln(1+|u|) variant unexpectedly passes, p = {}", r.p_value))?;
    detail.push(format!("ln(1+|u|) variant rejected, D={:.3} p={:.1e}", r.statistic, r.p_value));
    Ok(detail.join(", "))
}

type Criterion = (u32, &'static str, fn() -> Outcome, Duration);

fn main() {
    let criteria: [Criterion; 10] = [
        (1, "MT19937 conformance", mt_conformance, Duration::from_secs(1)),
        (2, "special-function oracle agreement", special_functions, Duration::from_secs(1)),
        (3, "calibration", calibration, Duration::from_secs(120)),
        (4, "chi-square and KS validity rules", validity_rules, Duration::from_secs(1)),
        (5, "transform substitution detection", attack_detection, Duration::from_secs(30)),
        (6, "time-window seed kill chain", kill_chain, Duration::from_secs(300)),
        (7, "RASN exactness", rasn_exactness, Duration::from_secs(10)),
        (8, "mode runtime ordering", mode_ordering, Duration::from_secs(120)),
        (9, "policy golden and closure oracle", policy_golden, Duration::from_secs(10)),
        (10, "transform distributional correctness", transform_correctness, Duration::from_secs(30)),
    ];
    // Keep panic messages out of the report; they are captured as failures.
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (id, name, run, budget) in criteria {
        let start = Instant::now();
        let result = panic::catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(format!("panicked: {msg}"))
        });
        let elapsed = start.elapsed();
        let result = match result {
            Ok(_) if elapsed > budget => Err(format!("took {elapsed:.2?}, budget {budget:?}")),
            other => other,
        };
        match result {
            Ok(detail) => println!("AC{id} PASS {name} ({elapsed:.2?}): {detail}"),
            Err(why) => {
                failed += 1;
                println!("AC{id} FAIL {name} ({elapsed:.2?}): {why}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", 10 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
