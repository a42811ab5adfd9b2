use std::collections::HashSet;
use std::fs;

use proptest::prelude::*;

use ccl_core::metrics::gini;
use ccl_core::simulator::{generate, SimConfig};

fn files(dir: &std::path::Path) -> Vec<(String, Vec<u8>)> {
    ["train.txt", "test.txt", "truth.txt", "propensity.txt"]
        .iter()
        .map(|name| (name.to_string(), fs::read(dir.join(name)).unwrap()))
        .collect()
}

#[test]
fn same_seed_writes_identical_bundles() {
    let cfg = SimConfig {
        m: 80,
        n: 40,
        seed: 9,
        ..SimConfig::default()
    };
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    generate(&cfg).unwrap().write(a.path(), 0.05).unwrap();
    generate(&cfg).unwrap().write(b.path(), 0.05).unwrap();
    assert_eq!(files(a.path()), files(b.path()));

    let c = tempfile::tempdir().unwrap();
    generate(&SimConfig { seed: 10, ..cfg })
        .unwrap()
        .write(c.path(), 0.05)
        .unwrap();
    assert_ne!(files(a.path())[0], files(c.path())[0]);
}

fn exposure_gini(skew: f64, seed: u64) -> f64 {
    let sim = generate(&SimConfig {
        exposure_skew: skew,
        seed,
        ..SimConfig::default()
    })
    .unwrap();
    gini(&sim.bundle.exposure.item_counts()).unwrap()
}

#[test]
fn skewed_exposure_is_more_concentrated() {
    for seed in 0..3 {
        let flat = exposure_gini(0.0, seed);
        let skewed = exposure_gini(3.0, seed);
        assert!(flat < 0.1, "seed {seed}: {flat}");
        assert!(skewed > flat, "seed {seed}: {skewed} vs {flat}");
    }
}

#[test]
fn test_exposure_is_label_independent() {
    let sim = generate(&SimConfig {
        m: 2000,
        seed: 5,
        ..SimConfig::default()
    })
    .unwrap();
    let n = sim.config.n;
    let test: HashSet<(usize, usize)> = sim.bundle.test.iter().map(|r| (r.user, r.item)).collect();
    // counts[label][exposed]
    let mut counts = [[0usize; 2]; 2];
    for u in 0..sim.config.m {
        for i in 0..n {
            if sim.bundle.exposure.is_exposed(u, i) {
                continue;
            }
            let label = sim.labels[u * n + i] as usize;
            counts[label][usize::from(test.contains(&(u, i)))] += 1;
        }
    }
    let rate = |c: [usize; 2]| c[1] as f64 / (c[0] + c[1]) as f64;
    let gap = rate(counts[1]) - rate(counts[0]);
    assert!(gap.abs() < 0.01, "gap {gap}");
}

#[test]
fn test_labels_come_from_the_label_matrix() {
    let sim = generate(&SimConfig::default()).unwrap();
    let n = sim.config.n;
    for r in sim.bundle.test.iter().chain(sim.bundle.train.iter()) {
        assert_eq!(r.label, sim.labels[r.user * n + r.item]);
        assert_eq!(r.rating, if r.label == 1 { 5 } else { 1 });
    }
}

#[test]
fn oracle_propensity_tracks_exposure_frequency() {
    let sim = generate(&SimConfig {
        m: 2000,
        seed: 2,
        ..SimConfig::default()
    })
    .unwrap();
    let counts = sim.bundle.exposure.item_counts();
    for (i, &p) in sim.inclusion.iter().enumerate() {
        let empirical = counts[i] as f64 / sim.config.m as f64;
        assert!((empirical - p).abs() < 0.05, "item {i}: {empirical} vs {p}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn splits_are_disjoint_and_sized(
        m in 2usize..30,
        n in 6usize..30,
        k in 1usize..4,
        t in 1usize..3,
        skew in 0.0f64..4.0,
        seed in any::<u64>(),
    ) {
        let cfg = SimConfig {
            m,
            n,
            exposures_per_user: k,
            test_exposures_per_user: t,
            exposure_skew: skew,
            seed,
            ..SimConfig::default()
        };
        let sim = generate(&cfg).unwrap();
        prop_assert_eq!(sim.bundle.train.len(), m * k);
        prop_assert_eq!(sim.bundle.test.len(), m * t);
        let train: HashSet<(usize, usize)> = sim.bundle.train.iter().map(|r| (r.user, r.item)).collect();
        prop_assert_eq!(train.len(), m * k);
        for r in sim.bundle.test.iter() {
            prop_assert!(!train.contains(&(r.user, r.item)));
        }
        let total: f64 = sim.inclusion.iter().sum();
        prop_assert!((total - k as f64).abs() < 1e-9);
        prop_assert!(sim.preference.iter().all(|p| *p > 0.0 && *p < 1.0));
    }
}
