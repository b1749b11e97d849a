use fedbal_core::augment::{augment_device, FillMode, OracleGenerator};
use fedbal_core::config::ExperimentConfig;
use fedbal_core::engine::{evaluate, run_experiment, run_experiment_with_workers, write_round_log, Simulation};
use fedbal_core::learner::{local_loss, HyperParams, LocalObjective, LocalSession, ModelParams};
use fedbal_core::rng;
use fedbal_core::sampling::{
    class_proportions, distance_to_iid, select_devices, ClassProportions, DistanceMetric, SelectionStrategy,
};
use fedbal_core::taskgen::{dirichlet_partition, generate_task, LabeledSample, TaskSpec};

fn small(overrides: &[(&str, &str)]) -> ExperimentConfig {
    let mut all = vec![
        ("n", "20"),
        ("k", "4"),
        ("g", "5"),
        ("train_size", "1000"),
        ("test_size", "300"),
    ];
    all.extend_from_slice(overrides);
    ExperimentConfig::default().with_overrides(all).unwrap()
}

fn jsonl(cfg: &ExperimentConfig, workers: usize) -> Vec<u8> {
    let out = run_experiment_with_workers(cfg, workers).unwrap();
    let mut buf = Vec::new();
    write_round_log(&out.records, &mut buf).unwrap();
    buf
}

#[test]
fn one_record_per_round() {
    let cfg = small(&[]);
    let out = run_experiment(&cfg).unwrap();
    assert_eq!(out.records.len(), 5);
    for (i, r) in out.records.iter().enumerate() {
        assert_eq!(r.epoch, i);
        assert_eq!(r.chosen.len(), 4);
        assert_eq!(r.local_epochs.len(), 4);
        assert!(r.local_epochs.iter().all(|&l| (1..=5).contains(&l)));
        assert_eq!(r.distances.len(), 20);
        assert!((r.global_dist.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!((0.0..=1.0).contains(&r.test_accuracy));
        assert_eq!(r.config_hash, cfg.config_hash());
    }
    assert_eq!(out.summary.rounds, 5);
    assert_eq!(out.summary.final_accuracy, out.records[4].test_accuracy);
}

#[test]
fn identical_logs_across_runs_and_pools() {
    for plugin in ["on", "off"] {
        let cfg = small(&[("plugin", plugin), ("algorithm", "fedrs")]);
        let reference = jsonl(&cfg, 1);
        assert_eq!(reference, jsonl(&cfg, 1));
        assert_eq!(reference, jsonl(&cfg, 3));
        assert_eq!(reference, jsonl(&cfg, 8));
    }
}

#[test]
fn only_selected_devices_change_and_augmentation_keeps_originals() {
    let cfg = small(&[]);
    let mut sim = Simulation::new(&cfg).unwrap();
    let before: Vec<_> = sim.devices().to_vec();
    let record = sim.step().unwrap();
    for (old, new) in before.iter().zip(sim.devices()) {
        assert_eq!(old.id, new.id);
        assert_eq!(old.local_data, new.local_data);
        assert_eq!(&new.augmented_data[..old.local_data.len()], &old.local_data[..]);
    }
    let after_first: Vec<_> = sim.devices().to_vec();
    sim.step().unwrap();
    // one-shot augmentation: nothing on the devices moves after round 0
    assert_eq!(after_first, sim.devices());
    assert!(record.synthetic_samples > 0);
}

#[test]
fn augmenting_every_round_redraws_synthetic_data() {
    let cfg = small(&[("augment_every_round", "true")]);
    let mut sim = Simulation::new(&cfg).unwrap();
    sim.step().unwrap();
    let first: Vec<_> = sim.devices().to_vec();
    sim.step().unwrap();
    assert_ne!(first, sim.devices());
    for (a, b) in first.iter().zip(sim.devices()) {
        assert_eq!(a.local_data, b.local_data);
    }
}

#[test]
fn balanced_selection_is_stable_with_one_shot_augmentation() {
    let cfg = small(&[]);
    let out = run_experiment(&cfg).unwrap();
    let first = &out.records[0].chosen;
    assert!(out.records.iter().all(|r| &r.chosen == first));
    let d = &out.records[0].distances;
    let worst_chosen = first.iter().map(|&i| d[i]).fold(f64::MIN, f64::max);
    let best_other = (0..d.len())
        .filter(|i| !first.contains(i))
        .map(|i| d[i])
        .fold(f64::MAX, f64::min);
    assert!(worst_chosen <= best_other);
}

#[test]
fn balanced_selection_on_iid_devices_takes_lowest_ids() {
    let iid = ClassProportions {
        p: vec![0.25; 4],
        source_size: 40,
    };
    let all = vec![iid; 12];
    let r = select_devices(
        &all,
        5,
        SelectionStrategy::Balanced,
        DistanceMetric::L2,
        &mut rng::stream(0, "x", 0, 0),
    )
    .unwrap();
    assert_eq!(r.chosen, vec![0, 1, 2, 3, 4]);
}

#[test]
fn fedprox_with_zero_mu_reproduces_fedavg() {
    for plugin in ["on", "off"] {
        let avg = run_experiment(&small(&[("plugin", plugin)])).unwrap();
        let prox = run_experiment(&small(&[("plugin", plugin), ("algorithm", "fedprox"), ("mu", "0.0")])).unwrap();
        assert_eq!(avg.final_model.as_flat(), prox.final_model.as_flat());
        for (a, b) in avg.records.iter().zip(&prox.records) {
            assert_eq!(a.test_accuracy.to_bits(), b.test_accuracy.to_bits());
            assert_eq!(a.train_loss.to_bits(), b.train_loss.to_bits());
            assert_eq!(a.chosen, b.chosen);
        }
    }
}

#[test]
fn errors_identify_the_round_and_device() {
    // A learning rate this large overflows the parameters.
    let cfg = small(&[("lr_local", "1e300"), ("weight_decay", "10.0")]);
    let err = run_experiment(&cfg).unwrap_err();
    let text = err.to_string();
    assert!(text.starts_with("round 0, device"), "{text}");
}

#[test]
fn zero_variance_separable_task_is_learned_perfectly() {
    let cfg = small(&[
        ("class_scale", "0.0"),
        ("alpha_dir", "100.0"),
        ("g", "15"),
        ("plugin", "off"),
    ]);
    let out = run_experiment(&cfg).unwrap();
    assert_eq!(out.summary.final_accuracy, 1.0);
}

#[test]
fn zero_model_scores_class_zero_share() {
    let sim = Simulation::new(&small(&[])).unwrap();
    let test = sim.test_set();
    let share = test.iter().filter(|s| s.label == 0).count() as f64 / test.len() as f64;
    let (acc, _) = evaluate(&ModelParams::zeros(8, 16), test).unwrap();
    assert_eq!(acc, share);
    assert!((acc - 0.125).abs() < 0.05);
}

/// One default-sized device (train_size / n samples).
#[test]
fn local_training_loss_decreases() {
    let spec = TaskSpec::with_layout(8, 16, 2.0, 0.2, 1.0, 100, 10, 3).unwrap();
    let (train, _) = generate_task(&spec).unwrap();
    let hp = HyperParams::default();
    let global = ModelParams::zeros(8, 16);
    let objective = LocalObjective::FedAvg;
    let mut session = LocalSession::new(&global, &objective, &hp);
    let mut rng = rng::stream(3, "train", 0, 0);
    let mut losses = vec![local_loss(&global, &train, &objective, &global).unwrap()];
    for _ in 0..50 {
        session.run_epoch(&train, &mut rng).unwrap();
        losses.push(local_loss(session.params(), &train, &objective, &global).unwrap());
    }
    for w in losses[..11].windows(2) {
        assert!(w[1] < w[0], "{losses:?}");
    }
}

#[test]
fn max_fill_moves_devices_toward_uniform_on_present_classes() {
    let classes = 8;
    for seed in 0..10 {
        let spec = TaskSpec::with_layout(classes, 4, 2.0, 0.1, 1.0, 2000, 10, seed).unwrap();
        let (train, _) = generate_task(&spec).unwrap();
        let devices = dirichlet_partition(&train, classes, 40, 0.3, seed).unwrap();
        let generator = OracleGenerator::new(spec.clone());
        for d in &devices {
            let aug = augment_device(
                d,
                classes,
                &generator,
                FillMode::Max,
                &mut rng::stream(seed, "aug", d.id as u64, 0),
            )
            .unwrap();
            let present: Vec<usize> = (0..classes)
                .filter(|&y| d.local_data.iter().any(|s| s.label == y))
                .collect();
            let restrict = |data: &[LabeledSample]| {
                let p = class_proportions(data, classes).unwrap();
                ClassProportions {
                    p: present.iter().map(|&y| p.p[y]).collect(),
                    source_size: p.source_size,
                }
            };
            let before = distance_to_iid(&restrict(&d.local_data), DistanceMetric::L2);
            let after = distance_to_iid(&restrict(&aug.augmented_data), DistanceMetric::L2);
            assert!(
                after <= before + 1e-12,
                "seed {seed} device {}: {after} > {before}",
                d.id
            );
            assert!(after < 1e-12);
            let full_before = distance_to_iid(&class_proportions(&d.local_data, classes).unwrap(), DistanceMetric::L2);
            let full_after = distance_to_iid(
                &class_proportions(&aug.augmented_data, classes).unwrap(),
                DistanceMetric::L2,
            );
            assert!(full_after <= full_before + 1e-12);
        }
    }
}

/// Plugin-off FedAvg accuracy should not improve as label skew grows.
#[test]
fn plugin_off_accuracy_degrades_with_skew() {
    let mean_final = |alpha: &str| {
        (0..5u64)
            .map(|seed| {
                let cfg = ExperimentConfig::default()
                    .with_overrides([
                        ("plugin", "off"),
                        ("alpha_dir", alpha),
                        ("seed", seed.to_string().as_str()),
                    ])
                    .unwrap();
                run_experiment(&cfg).unwrap().summary.final_accuracy
            })
            .sum::<f64>()
            / 5.0
    };
    let accs: Vec<f64> = ["100.0", "1.0", "0.1", "0.01"].iter().map(|a| mean_final(a)).collect();
    for w in accs.windows(2) {
        assert!(w[1] <= w[0], "{accs:?}");
    }
}
