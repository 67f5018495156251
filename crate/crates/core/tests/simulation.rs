use std::collections::BTreeMap;

use fdpb::attacks::{AttackKind, LocalDistill};
use fdpb::cli::render_run;
use fdpb::data::{class_proportions, dirichlet_partition, save_dataset, gen_blobs, PartitionSpec};
use fdpb::knowledge::{aggregate, leave_one_out_class_means, KnowledgeRecord, Protocol};
use fdpb::sim::{AttackSetup, DatasetSpec, Experiment, PartitionSetup, Role, RunOptions, RunSetup};
use fdpb::{run_experiment, ExperimentConfig};
use rand::seq::SliceRandom;

fn small(kind: AttackKind, fraction: f64) -> ExperimentConfig {
    ExperimentConfig {
        dataset: DatasetSpec::Blobs {
            n_classes: 5,
            samples_per_class: 40,
            test_samples_per_class: 20,
            dim: 8,
            spread: 1.0,
            seed: None,
        },
        partition: PartitionSetup { n_clients: 5, alpha: 1.0, seed: None },
        attack: AttackSetup { kind, fraction, ..AttackSetup::default() },
        run: RunSetup { rounds: 4, seed: 9, probe_size: 10, misdirection_class: 0 },
        ..ExperimentConfig::default()
    }
}

#[test]
fn huge_alpha_gives_near_uniform_shards() {
    let labels: Vec<usize> = (0..10_000).map(|i| i / 1000).collect();
    for seed in 0..20 {
        let shards = dirichlet_partition(&labels, &PartitionSpec { n_clients: 10, alpha: 1e6, seed }).unwrap();
        for s in &shards {
            let l1: f64 = class_proportions(s, &labels, 10).iter().map(|p| (p - 0.1).abs()).sum();
            assert!(l1 < 0.15, "seed {seed}: L1 {l1}");
        }
    }
}

#[test]
fn single_round_gives_single_report() {
    let mut cfg = small(AttackKind::Fdla, 0.2);
    cfg.run.rounds = 1;
    let out = run_experiment(&cfg, RunOptions::default()).unwrap();
    assert_eq!(out.reports.len(), 1);
    assert_eq!(out.reports[0].round, 1);
}

#[test]
fn honest_peer_of_zero_poisoner_distills_toward_zeros() {
    let mut cfg = small(AttackKind::ZeroPoison, 0.5);
    cfg.partition.n_clients = 2;
    cfg.partition.alpha = 100.0;
    let mut exp = Experiment::build(&cfg, RunOptions::default()).unwrap();
    exp.run_round().unwrap();
    let honest = &exp.clients()[1];
    assert_eq!(honest.role, Role::Honest);
    assert!(!honest.targets().is_empty());
    for target in honest.targets().values() {
        assert!(target.iter().all(|&v| v == 0.0), "{target:?}");
    }
}

#[test]
fn zero_fraction_matches_no_attack() {
    let base = run_experiment(&small(AttackKind::None, 0.0), RunOptions::default()).unwrap();
    for kind in AttackKind::ALL {
        let out = run_experiment(&small(kind, 0.0), RunOptions::default()).unwrap();
        assert_eq!(out.reports, base.reports, "{kind}");
        assert_eq!(render_run(&out, false).unwrap(), render_run(&base, false).unwrap());
    }
}

#[test]
fn attacks_never_touch_local_data() {
    for kind in [AttackKind::Fdla, AttackKind::Pcfdla, AttackKind::RandomPoison] {
        let mut exp = Experiment::build(&small(kind, 0.4), RunOptions::default()).unwrap();
        let features: Vec<Vec<u64>> = exp
            .train_set()
            .features()
            .iter()
            .map(|r| r.iter().map(|v| v.to_bits()).collect())
            .collect();
        let labels = exp.train_set().labels().to_vec();
        let shards: Vec<Vec<usize>> = exp.clients().iter().map(|c| c.shard.clone()).collect();
        for _ in 0..3 {
            exp.run_round().unwrap();
        }
        let after: Vec<Vec<u64>> = exp
            .train_set()
            .features()
            .iter()
            .map(|r| r.iter().map(|v| v.to_bits()).collect())
            .collect();
        assert_eq!(after, features);
        assert_eq!(exp.train_set().labels(), labels.as_slice());
        let now: Vec<Vec<usize>> = exp.clients().iter().map(|c| c.shard.clone()).collect();
        assert_eq!(now, shards);
    }
}

#[test]
fn clean_local_distill_attacker_trains_like_a_baseline_client_in_round_one() {
    let mut attacked = Experiment::build(&small(AttackKind::Pcfdla, 0.2), RunOptions::default()).unwrap();
    let mut clean = Experiment::build(&small(AttackKind::None, 0.0), RunOptions::default()).unwrap();
    assert_eq!(attacked.config().attack.local_distill(), LocalDistill::Clean);
    attacked.run_round().unwrap();
    clean.run_round().unwrap();
    assert!(attacked.clients()[0].is_malicious());
    assert_eq!(attacked.clients()[0].params, clean.clients()[0].params);
}

#[test]
fn learning_progresses_on_separable_blobs() {
    let mut cfg = small(AttackKind::None, 0.0);
    if let DatasetSpec::Blobs { spread, .. } = &mut cfg.dataset {
        *spread = 0.3;
    }
    cfg.run.rounds = 10;
    let out = run_experiment(&cfg, RunOptions::default()).unwrap();
    let first = out.reports[0].tol_avg_acc;
    let last = out.final_report().tol_avg_acc;
    assert!(last > first, "{first} -> {last}");
}

#[test]
fn every_protocol_runs() {
    for protocol in [Protocol::SampleAvg, Protocol::LabelAvg, Protocol::CacheLite] {
        let mut cfg = small(AttackKind::Pcfdla, 0.2);
        cfg.protocol.kind = protocol;
        let out = run_experiment(&cfg, RunOptions::default()).unwrap();
        assert_eq!(out.reports.len(), 4);
        assert!(out.final_report().tol_avg_acc > 0.0);
    }
}

#[test]
fn csv_dataset_runs_like_the_generated_one() {
    let dir = tempfile::tempdir().unwrap();
    let train = gen_blobs(4, 30, 5, 1.0, 1).unwrap();
    let test = gen_blobs(4, 10, 5, 1.0, 1).unwrap();
    save_dataset(&train, dir.path().join("train.csv")).unwrap();
    save_dataset(&test, dir.path().join("test.csv")).unwrap();
    let mut cfg = small(AttackKind::Fdla, 0.2);
    cfg.dataset = DatasetSpec::Csv { train: dir.path().join("train.csv"), test: dir.path().join("test.csv") };
    let out = run_experiment(&cfg, RunOptions::default()).unwrap();
    assert_eq!(out.n_classes, 4);
    assert_eq!(out.pca.len(), 5);
}

fn rec(client: usize, sample: usize, logits: Vec<f64>) -> KnowledgeRecord {
    KnowledgeRecord { client_id: client, sample_id: sample, logits }
}

/// Four clients, one record per class each; sample `4 * class + client`.
fn one_per_class() -> (Vec<KnowledgeRecord>, Vec<usize>) {
    let mut records = Vec::new();
    let mut labels = vec![0; 12];
    for class in 0..3 {
        for client in 0..4 {
            let s = 4 * class + client;
            labels[s] = class;
            let logits = (0..3).map(|j| ((s * 7 + j * 3) % 11) as f64 * 0.37 - 1.1).collect();
            records.push(rec(client, s, logits));
        }
    }
    (records, labels)
}

#[test]
fn aggregation_ignores_arrival_order() {
    let (records, labels) = one_per_class();
    let mut rng = fdpb::rng::stream(5, "shuffle", 0);
    for protocol in [Protocol::SampleAvg, Protocol::LabelAvg] {
        let base = aggregate(&records, &labels, 3, protocol).unwrap();
        for _ in 0..10 {
            let mut shuffled = records.clone();
            shuffled.shuffle(&mut rng);
            assert_eq!(aggregate(&shuffled, &labels, 3, protocol).unwrap(), base);
        }
    }
}

#[test]
fn label_avg_targets_reconstruct_class_totals() {
    let (records, labels) = one_per_class();
    let gk = aggregate(&records, &labels, 3, Protocol::LabelAvg).unwrap();
    let k_y = 4.0;
    for client in 0..4 {
        let targets = leave_one_out_class_means(&gk, client, &labels);
        for class in 0..3 {
            let own = &records.iter().find(|r| r.client_id == client && labels[r.sample_id] == class).unwrap().logits;
            for j in 0..3 {
                let rebuilt = targets[&class][j] * (k_y - 1.0) + own[j];
                let total = k_y * gk.entries[&class][j];
                assert!((rebuilt - total).abs() < 1e-12, "{rebuilt} vs {total}");
            }
        }
    }
}

#[test]
fn poisoned_records_shift_peer_targets_linearly() {
    let (records, labels) = one_per_class();
    let delta = 0.75;
    let poisoned: Vec<KnowledgeRecord> = records
        .iter()
        .map(|r| {
            if r.client_id == 0 && labels[r.sample_id] == 1 {
                rec(r.client_id, r.sample_id, r.logits.iter().map(|v| v + delta).collect())
            } else {
                r.clone()
            }
        })
        .collect();
    let clean = aggregate(&records, &labels, 3, Protocol::LabelAvg).unwrap();
    let dirty = aggregate(&poisoned, &labels, 3, Protocol::LabelAvg).unwrap();
    for client in 1..4 {
        let before: BTreeMap<_, _> = leave_one_out_class_means(&clean, client, &labels);
        let after = leave_one_out_class_means(&dirty, client, &labels);
        for class in 0..3 {
            let shift = if class == 1 { delta / 3.0 } else { 0.0 };
            for j in 0..3 {
                assert!((after[&class][j] - before[&class][j] - shift).abs() < 1e-12);
            }
        }
    }
    // The poisoner's own target excludes its records, so it does not move.
    assert_eq!(
        leave_one_out_class_means(&clean, 0, &labels),
        leave_one_out_class_means(&dirty, 0, &labels)
    );
}
