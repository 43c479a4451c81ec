use std::collections::BTreeMap;
use std::time::Duration;

use rng_sentinel::attacks::{brute_force_seed, substitution_experiment};
use rng_sentinel::auditor::{AuditEvent, AuditMode, Auditor, AuditorConfig};
use rng_sentinel::prng::{Algorithm, GeneratorHandle};
use rng_sentinel::stats::ks_test;
use rng_sentinel::stats::special::normal_cdf;
use rng_sentinel::transforms::{DistributionSpec, Sampler};

fn philox(seed: u64) -> GeneratorHandle {
    GeneratorHandle::from_seed(Algorithm::PhiloxCounter, seed).unwrap()
}

#[test]
fn every_event_yields_exactly_one_report() {
    let mut auditor = Auditor::start(AuditorConfig::with_mode(AuditMode::Asn)).unwrap();
    let mut g = philox(1);
    let mut s = Sampler::new(DistributionSpec::standard_normal()).unwrap();
    for i in 1..=10_000u64 {
        let mut samples = vec![0.0; 100];
        s.fill(&mut g, &mut samples).unwrap();
        let event = AuditEvent {
            source_tag: format!("slot{}", i % 3),
            spec: DistributionSpec::standard_normal(),
            samples,
            sequence_index: i,
        };
        auditor.submit(event).unwrap();
    }
    let reports = auditor.drain_reports(Duration::from_secs(120)).unwrap();
    let mut counts = BTreeMap::new();
    for r in &reports {
        *counts.entry(r.sequence_index).or_insert(0) += 1;
    }
    assert_eq!(reports.len(), 10_000);
    assert_eq!(counts.len(), 10_000);
    assert!(counts.values().all(|&c| c == 1));
    auditor.stop();
    assert!(auditor.drain_reports(Duration::ZERO).unwrap().is_empty());
}

#[test]
fn honest_substitution_stays_in_calibration() {
    let spec = DistributionSpec::standard_normal();
    let out = substitution_experiment(spec, spec, 2000, 0, AuditorConfig::default()).unwrap();
    assert!(out.attack.warn_rate < 0.025, "{:?}", out.attack);
}

// A uniform draw rescaled to the claimed variance is only 0.057 away from the
// normal CDF in KS distance; 100-sample batches see it rarely.
#[test]
fn variance_matched_uniform_is_weakly_detected() {
    let claimed = DistributionSpec::standard_normal();
    let a = 3f64.sqrt();
    let actual = DistributionSpec::UniformReal { a: -a, b: a };
    let out = substitution_experiment(claimed, actual, 2000, 0, AuditorConfig::default()).unwrap();
    assert!(out.attack.warn_rate > 0.03 && out.attack.warn_rate < 0.2, "{:?}", out.attack);
}

// Mean shift of 0.55 sigma: KS distance 2 * Phi(0.275) - 1 = 0.217.
#[test]
fn large_ks_distance_is_flagged_within_three_batches() {
    let mut g = philox(3);
    let mut s = Sampler::new(DistributionSpec::Normal { mu: 0.55, sigma: 1.0 }).unwrap();
    let mut missed = 0;
    for _ in 0..3000 {
        let flagged = (0..3).any(|_| {
            let mut xs = vec![0.0; 100];
            s.fill(&mut g, &mut xs).unwrap();
            ks_test(&xs, normal_cdf).unwrap().is_warn()
        });
        missed += usize::from(!flagged);
    }
    assert!(missed <= 3, "{missed} of 3000 trials missed");
}

#[test]
fn four_words_identify_the_seed_uniquely() {
    let mut picker = philox(4);
    for _ in 0..100 {
        let base = picker.next_u64().unwrap() % (u32::MAX as u64 - (1 << 14));
        let seed = base + picker.next_u64().unwrap() % (1 << 14);
        let mut g = GeneratorHandle::from_seed(Algorithm::Mt19937, seed).unwrap();
        let observed: Vec<u64> = (0..4).map(|_| g.next_u64().unwrap()).collect();
        let matches: Vec<u64> = (base..base + (1 << 14))
            .filter(|&c| brute_force_seed(&observed, Algorithm::Mt19937, [c]).unwrap().is_some())
            .collect();
        assert_eq!(matches, vec![seed]);
    }
}

#[test]
fn recovers_seed_in_a_two_to_the_twenty_window() {
    let seed = 1_700_000_000_123_456u64;
    let mut g = GeneratorHandle::from_seed(Algorithm::Mt19937, seed).unwrap();
    let observed: Vec<u64> = (0..4).map(|_| g.next_u64().unwrap()).collect();
    let start = seed - 700_000;
    let found = brute_force_seed(&observed, Algorithm::Mt19937, start..start + (1 << 20)).unwrap();
    assert_eq!(found, Some(seed));
    let outside = brute_force_seed(&observed, Algorithm::Mt19937, seed + 1..seed + 1000).unwrap();
    assert_eq!(outside, None);
}
