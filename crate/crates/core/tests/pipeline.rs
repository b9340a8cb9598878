use std::collections::BTreeMap;

use otb_core::baseline::{threshold_verdict, ThresholdConfig};
use otb_core::clustering::ClusteringConfig;
use otb_core::dumps::{read_dump, write_dump, ActivationRecord};
use otb_core::evaluation::synthetic::{generate, SyntheticConfig, FEATURES, MIXED};
use otb_core::evaluation::{
    compare_abstractions, evaluate_monitor, is_novel, run_experiment, train_experiment_monitor, ExperimentConfig,
    Outcome,
};
use otb_core::geometry::{Abstraction, DomainKind};
use otb_core::monitor::{train_monitor, Monitor};
use otb_core::network::{argmax, NetworkModel};
use otb_core::LayerIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

fn small(seed: u64) -> otb_core::evaluation::synthetic::SyntheticData {
    generate(&SyntheticConfig { train_per_class: 150, test_per_class: 40, seed, ..Default::default() }).unwrap()
}

fn single_cluster() -> ClusteringConfig {
    ClusteringConfig { max_k: 1, ..Default::default() }
}

#[test]
fn more_training_data_never_shrinks_single_cluster_monitors() {
    let data = small(1);
    let half = &data.train[..data.train.len() / 2];
    for domain in [DomainKind::Box, DomainKind::Octagon] {
        let small_m = train_monitor(half, &[FEATURES], 2, domain, &single_cluster()).unwrap();
        let big_m = train_monitor(&data.train, &[FEATURES], 2, domain, &single_cluster()).unwrap();
        for (class, list) in &small_m.layers()[0].classes {
            let big = &big_m.layers()[0].classes[class];
            if let ([Abstraction::Box(a)], [Abstraction::Box(b)]) = (list.as_slice(), big.as_slice()) {
                assert!(b.includes(a));
            }
        }
        for r in &data.test {
            if small_m.verdict_record(r).unwrap().accepted {
                assert!(big_m.verdict_record(r).unwrap().accepted, "{domain}: record {}", r.id);
            }
        }
    }
}

#[test]
fn include_test_training_only_adds_acceptance_for_single_clusters() {
    let data = small(2);
    for domain in [DomainKind::Box, DomainKind::Octagon] {
        let base = ExperimentConfig { domain, clustering: single_cluster(), ..ExperimentConfig::new(2, 4, vec![FEATURES]) };
        let plain = run_experiment(&data.train, &data.test, &base).unwrap();
        let conv = run_experiment(&data.train, &data.test, &ExperimentConfig { include_test_training: true, ..base }).unwrap();
        for (a, b) in plain.records.iter().zip(&conv.records) {
            if !is_novel(a.truth, 2) && a.accepted {
                assert!(b.accepted);
            }
        }
        assert!(conv.counts.false_pos <= plain.counts.false_pos);
    }
}

fn elongated_records(rng: &mut ChaCha8Rng, n: usize) -> Vec<ActivationRecord> {
    // Known classes stretch along the first axis; the novel class sits off
    // the side of class 0, inside its circumscribed ball but outside its box.
    let centers = [[0.0, 0.0, 0.0], [100.0, 0.0, 0.0], [0.0, 12.0, 0.0]];
    let mut out = Vec::new();
    for (class, c) in centers.iter().enumerate() {
        for _ in 0..n {
            let v: Vec<f64> = c
                .iter()
                .enumerate()
                .map(|(i, m)| m + rng.random_range(-1.0..1.0) * if i == 0 && class < 2 { 20.0 } else { 1.0 })
                .collect();
            let pred = usize::from((v[0] - 100.0).abs() < v[0].abs());
            out.push(ActivationRecord {
                id: out.len() as u64,
                truth: class,
                pred,
                layers: BTreeMap::from([(FEATURES, v)]),
            });
        }
    }
    out
}

#[test]
fn balls_miss_more_novelties_on_elongated_classes() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let train: Vec<_> = elongated_records(&mut rng, 300).into_iter().filter(|r| r.truth < 2).collect();
    let test = elongated_records(&mut rng, 100);
    let config = ExperimentConfig { clustering: single_cluster(), ..ExperimentConfig::new(2, 3, vec![FEATURES]) };
    let res = compare_abstractions(&train, &test, &config, &[DomainKind::Box, DomainKind::Ball], false).unwrap();
    let (bx, ball) = (&res[0].1.counts, &res[1].1.counts);
    assert!(ball.false_neg > bx.false_neg, "ball FN {} vs box FN {}", ball.false_neg, bx.false_neg);
}

#[test]
fn enlargement_grows_acceptance() {
    let data = small(5);
    let m = train_experiment_monitor(&data.train, &data.test, &ExperimentConfig::new(2, 4, vec![FEATURES, MIXED])).unwrap();
    let at = |g: f64| evaluate_monitor(&m.enlarge(g).unwrap(), &data.test, 2).unwrap();
    assert_eq!(at(0.0), evaluate_monitor(&m, &data.test, 2).unwrap());
    let (a, b) = (at(0.1), at(0.2));
    for (x, y) in a.records.iter().zip(&b.records) {
        assert!(!x.accepted || y.accepted);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..500 {
        let pick = &data.test[rng.random_range(0..data.test.len())];
        let mut layers = pick.layers.clone();
        for v in layers.values_mut() {
            for x in v.iter_mut() {
                *x += rng.random_range(-2.0..2.0);
            }
        }
        let pred = pick.pred;
        if m.enlarge(0.1).unwrap().verdict(pred, &layers).unwrap().accepted {
            assert!(m.enlarge(0.2).unwrap().verdict(pred, &layers).unwrap().accepted);
        }
    }
}

#[test]
fn monitors_are_deterministic_across_thread_counts() {
    let data = small(6);
    let train = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| train_monitor(&data.train, &[FEATURES, MIXED], 2, DomainKind::Box, &ClusteringConfig::default()))
            .unwrap()
            .to_json()
            .unwrap()
    };
    let one = train(1);
    assert_eq!(one, train(4));
    assert_eq!(Monitor::from_json(&one).unwrap().to_json().unwrap(), one);
}

#[test]
fn dump_files_feed_training_unchanged() {
    let data = small(7);
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("synthetic.train.jsonl");
    write_dump(&path, &data.meta(), &data.train).unwrap();
    let (meta, records) = read_dump(&path).unwrap();
    assert_eq!(meta, data.meta());
    let from_disk = train_monitor(&records, &[FEATURES], 2, DomainKind::Octagon, &ClusteringConfig::default()).unwrap();
    let in_memory = train_monitor(&data.train, &[FEATURES], 2, DomainKind::Octagon, &ClusteringConfig::default()).unwrap();
    assert_eq!(from_disk, in_memory);
}

#[test]
fn threshold_detector_on_network_outputs() {
    let model = NetworkModel::from_json(include_str!("../fixtures/toy_network.json")).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let config = ThresholdConfig::new(0.9, false, 2).unwrap();
    let mut records = Vec::new();
    for id in 0..200 {
        let x = vec![rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)];
        let out = model.forward(&x).unwrap().pop().unwrap();
        if out.iter().sum::<f64>() == 0.0 {
            continue;
        }
        let pred = argmax(&out);
        records.push(ActivationRecord {
            id,
            truth: usize::from(x[0] > x[1]),
            pred,
            layers: BTreeMap::from([(LayerIndex::OUTPUT, out)]),
        });
    }
    let test: Vec<ActivationRecord> = records
        .iter()
        .cloned()
        .map(|mut r| {
            if r.id % 5 == 0 {
                r.truth = 2;
            }
            r
        })
        .collect();
    let exp = ExperimentConfig {
        detector: otb_core::evaluation::Detector::Threshold { alpha: 0.9, normalize: false },
        ..ExperimentConfig::new(2, 3, vec![])
    };
    let res = run_experiment(&[], &test, &exp).unwrap();
    for (r, o) in test.iter().zip(&res.records) {
        let v = threshold_verdict(r.layer(LayerIndex::OUTPUT).unwrap(), r.pred, &config).unwrap();
        assert_eq!(o.accepted, v.accepted);
        if r.truth == 2 {
            assert!(matches!(o.outcome, Outcome::TruePositive | Outcome::FalseNegative));
        }
    }
}
