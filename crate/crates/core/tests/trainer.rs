use farnet::dataset::{LabeledSample, Split, SynthSpec};
use farnet::trainer::{
    evaluate, mean_std, run_ablation, steps_per_epoch, train_and_evaluate, train_run, train_step, AblationSuite,
    FarNet, GtDomainMode, Optimizers, SgdMomentum, TrainConfig, TrainPool, Variant,
};
use farnet::nn::ParamStore;
use farnet::{Error, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Two source domains of small four-class signals.
fn sources<T: farnet::Scalar>(h: usize, per_cell: usize) -> Vec<LabeledSample<T>> {
    let spec = SynthSpec {
        shape: [1, h, 1],
        n_domains: 2,
        domain_speed_factors: vec![1.0, 1.1],
        domain_amplitude_scales: vec![1.0, 2.0],
        sample_rate_hz: 512.0,
        resonance_hz: 120.0,
        decay: 150.0,
        ..SynthSpec::default()
    };
    let mut out = Vec::new();
    for d in 0..2 {
        for c in 0..4 {
            for i in 0..per_cell {
                out.push(LabeledSample {
                    signal: spec.synthesize(c, d, Split::Train, i).cast(),
                    class_id: c,
                    domain_id: d as u32,
                });
            }
        }
    }
    out
}

fn tiny_config() -> TrainConfig {
    TrainConfig {
        epochs: 1,
        batch_p: 4,
        batch_k: 4,
        runs: 1,
        aug_width: 2,
        rec_widths: vec![4, 8],
        workers: 1,
        ..TrainConfig::default()
    }
}

#[test]
fn augmented_count_and_recognition_batch() {
    let samples = sources::<f32>(32, 16);
    let pool = TrainPool::new(&samples, 4).unwrap();
    let config = TrainConfig {
        gt_domain_mode: GtDomainMode::Fixed(0),
        ..tiny_config()
    };
    let mut models = FarNet::new(1, 4, &config, 0).unwrap();
    let mut opt = Optimizers::new(&config);
    // 4 classes x 32: 16 from each domain per class.
    let batch: Vec<usize> = (0..4).flat_map(|c| (0..16).flat_map(move |i| [c * 16 + i, 64 + c * 16 + i])).collect();
    assert_eq!(batch.len(), 128);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let log = train_step(&mut models, &mut opt, &pool, &batch, 0, &config, &mut rng).unwrap();
    assert_eq!(log.gt_domain, 0);
    assert_eq!(log.augmented, 64);
    assert_eq!(log.recognition_batch, 192);
    assert_eq!(log.originals, 128);

    let m1 = TrainConfig {
        variant: Variant::M1,
        ..config
    };
    let log = train_step(&mut models, &mut Optimizers::new(&m1), &pool, &batch, 0, &m1, &mut rng).unwrap();
    assert_eq!((log.augmented, log.recognition_batch, log.l_aug), (0, 128, 0.0));
}

#[test]
fn rotation_alternates_and_pairs_stay_in_class() {
    let samples = sources::<f32>(32, 3);
    let pool = TrainPool::new(&samples, 4).unwrap();
    for step in 0..6 {
        assert_eq!(pool.gt_domain(GtDomainMode::Rotate, step).unwrap(), (step % 2) as u32);
        assert_eq!(pool.gt_domain(GtDomainMode::Fixed(1), step).unwrap(), 1);
    }
    assert!(pool.gt_domain(GtDomainMode::Fixed(7), 0).is_err());
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..50 {
        let j = pool.pair(1, 2, &mut rng).unwrap();
        assert_eq!((samples[j].domain_id, samples[j].class_id), (1, 2));
    }
    assert!(matches!(pool.pair(1, 9, &mut rng), Err(Error::MissingPairing { .. })));

    let (_, history) = train_run(&samples, 4, &tiny_config(), 3).unwrap();
    for (i, s) in history.steps.iter().enumerate() {
        assert_eq!(s.gt_domain, (i % 2) as u32);
    }
}

#[test]
fn pool_rejects_bad_sources() {
    let mut samples = sources::<f32>(32, 2);
    assert!(TrainPool::new(&samples[..8], 4).is_err());
    samples.retain(|s| !(s.domain_id == 1 && s.class_id == 3));
    assert!(matches!(TrainPool::new(&samples, 4), Err(Error::ClassMismatch(_))));
    assert!(TrainPool::new(&sources::<f32>(32, 2), 3).is_err());
}

#[test]
fn histories_are_deterministic_and_compose() {
    let samples = sources::<f32>(32, 6);
    let config = TrainConfig {
        epochs: 2,
        ..tiny_config()
    };
    let (_, a) = train_run(&samples, 4, &config, 11).unwrap();
    let (_, b) = train_run(&samples, 4, &config, 11).unwrap();
    assert_eq!(a, b);
    let bits = |h: &farnet::trainer::RunHistory| h.steps.iter().map(|s| s.l_total.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a), bits(&b));
    assert_eq!(a.epochs.len(), 2);
    assert_eq!(a.steps.len(), 2 * steps_per_epoch(48, 4, 4));
    for s in &a.steps {
        let aug = config.lambda1 * s.l_amp + config.lambda2 * s.l_pha;
        assert!((s.l_aug - aug).abs() <= 1e-5 * aug.abs().max(1.0));
        let total = s.l_aug + s.l_clf + config.alpha * s.l_triplet;
        assert!((s.l_total - total).abs() <= 1e-5 * total.abs().max(1.0));
    }
    let (_, c) = train_run(&samples, 4, &config, 12).unwrap();
    assert_ne!(bits(&a), bits(&c));
}

fn delta(after: &ParamStore<f64>, before: &ParamStore<f64>) -> Vec<Vec<f64>> {
    after
        .entries()
        .iter()
        .zip(before.entries())
        .filter(|(a, _)| a.trainable)
        .map(|(a, b)| a.value.data().iter().zip(b.value.data()).map(|(x, y)| x - y).collect())
        .collect()
}

#[test]
fn parameter_groups_use_their_own_rates() {
    let samples = sources::<f64>(32, 4);
    let pool = TrainPool::new(&samples, 4).unwrap();
    let batch: Vec<usize> = (0..32).collect();
    let run = |lr_aug: f64, lr_rec: f64| {
        let config = TrainConfig {
            lr_aug,
            lr_rec,
            ..tiny_config()
        };
        let before = FarNet::<f64>::new(1, 4, &config, 5).unwrap();
        let mut models = before.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        train_step(&mut models, &mut Optimizers::new(&config), &pool, &batch, 0, &config, &mut rng).unwrap();
        (delta(&models.aug.store, &before.aug.store), delta(&models.rec.store, &before.rec.store))
    };
    let (aug_a, rec_a) = run(0.001, 0.01);
    let (aug_b, rec_b) = run(0.004, 0.005);
    let mut moved = 0;
    for (x, y) in aug_a.iter().flatten().zip(aug_b.iter().flatten()) {
        assert!((y - 4.0 * x).abs() <= 1e-9 * x.abs().max(1e-9) + 1e-15, "{x} {y}");
        moved += (*x != 0.0) as usize;
    }
    assert!(moved > 0);
    for (x, y) in rec_a.iter().flatten().zip(rec_b.iter().flatten()) {
        assert!((y - 0.5 * x).abs() <= 1e-9 * x.abs().max(1e-9) + 1e-15, "{x} {y}");
    }
}

#[test]
fn momentum_update_by_hand() {
    let mut store = ParamStore::<f64>::new();
    store.add("w", Tensor::from_vec(&[2], vec![1.0, -2.0]).unwrap());
    let mut opt = SgdMomentum::new(0.1, 0.9);
    let g1 = Tensor::from_vec(&[2], vec![0.5, 1.0]).unwrap();
    let g2 = Tensor::from_vec(&[2], vec![-1.0, 2.0]).unwrap();
    opt.step(&mut store, vec![Some(g1)]);
    assert_eq!(store.entries()[0].value.data(), &[1.0 - 0.05, -2.0 - 0.1]);
    opt.step(&mut store, vec![Some(g2)]);
    // v = 0.9 * g1 + g2 = (-0.55, 2.9)
    let want = [0.95 + 0.055, -2.1 - 0.29];
    for (a, b) in store.entries()[0].value.data().iter().zip(want) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn evaluation_never_touches_the_augmenter() {
    let samples = sources::<f32>(32, 4);
    let (models, _) = train_run(&samples, 4, &tiny_config(), 0).unwrap();
    assert!(models.aug.calls() > 0);
    let before = models.aug.calls();
    let report = evaluate(&models, &samples, 7).unwrap();
    assert_eq!(models.aug.calls(), before);
    assert_eq!(report.predictions.len(), samples.len());
    assert_eq!(report.confusion.iter().flatten().sum::<usize>(), samples.len());
    assert!(evaluate(&models, &samples[..0], 7).is_err());
}

#[test]
fn euclidean_variant_equals_unit_scale_manifold() {
    let samples = sources::<f32>(32, 4);
    let m3 = TrainConfig {
        variant: Variant::M3,
        k: 3.0,
        epochs: 2,
        ..tiny_config()
    };
    let m4 = TrainConfig {
        variant: Variant::M4,
        k: 1.0,
        ..m3.clone()
    };
    let (_, a) = train_run(&samples, 4, &m3, 2).unwrap();
    let (_, b) = train_run(&samples, 4, &m4, 2).unwrap();
    assert_eq!(a.steps, b.steps);
}

#[test]
fn configuration_preconditions() {
    let samples = sources::<f32>(32, 2);
    for bad in [
        TrainConfig { epochs: 0, ..tiny_config() },
        TrainConfig { lr_rec: 0.0, ..tiny_config() },
        TrainConfig { k: 0.5, ..tiny_config() },
        TrainConfig { batch_k: 0, ..tiny_config() },
    ] {
        assert!(train_run(&samples, 4, &bad, 0).is_err());
    }
    assert!("nonsense".parse::<AblationSuite>().is_err());
    assert!(TrainConfig::from_toml("epochs = 3\nbogus = 1\n").is_err());
    assert_eq!(TrainConfig::from_toml("epochs = 3\n").unwrap().epochs, 3);
}

#[test]
fn ablation_suites_have_the_documented_rows() {
    let base = TrainConfig::default();
    assert_eq!(AblationSuite::Modules.rows(&base).len(), 4);
    let lambdas: Vec<f64> = AblationSuite::LambdaSweep.rows(&base).iter().map(|(_, c)| c.lambda2).collect();
    assert_eq!(lambdas, [1.0, 2.0, 3.0, 4.0, 5.0].map(|r| r * base.lambda1));
    let ks: Vec<f64> = AblationSuite::KSweep.rows(&base).iter().map(|(_, c)| c.k).collect();
    assert_eq!(ks, vec![1.0, 1.5, 2.0, 2.5, 3.0]);
    assert_eq!(mean_std(&[1.0, 2.0, 3.0]), (2.0, 1.0));
    assert_eq!(mean_std(&[0.5]), (0.5, 0.0));

    let samples = sources::<f32>(32, 2);
    let rows = run_ablation(AblationSuite::KSweep, &tiny_config(), &samples, &samples, 4).unwrap();
    assert_eq!(rows.len(), 5);
    assert!(rows.iter().all(|r| r.accuracies.len() == 1));
}

#[test]
fn worker_count_does_not_change_results() {
    let samples = sources::<f32>(32, 3);
    let serial = TrainConfig { runs: 3, ..tiny_config() };
    let parallel = TrainConfig { workers: 3, ..serial.clone() };
    let mut seen = Vec::new();
    let a = train_and_evaluate(&samples, &samples, 4, &serial, |run, o| {
        seen.push((run, o.seed));
        Ok(())
    })
    .unwrap();
    let b = train_and_evaluate(&samples, &samples, 4, &parallel, |_, _| Ok(())).unwrap();
    assert_eq!(a, b);
    seen.sort();
    assert_eq!(seen, vec![(0, 0), (1, 1), (2, 2)]);
    let failing = train_and_evaluate(&samples, &samples, 4, &parallel, |_, _| Err(Error::InvalidArgument("stop".into())));
    assert!(failing.is_err());
}

#[test]
fn short_training_learns_the_sources() {
    let samples = sources::<f32>(512, 20);
    let config = TrainConfig {
        epochs: 5,
        batch_k: 8,
        rec_widths: vec![16, 32, 64, 128],
        aug_width: 16,
        ..tiny_config()
    };
    let (models, history) = train_run(&samples, 4, &config, 0).unwrap();
    let first = history.epochs[0].l_total;
    let last = history.epochs[4].l_total;
    assert!(last < first, "{first} -> {last}");
    let acc = history.epochs[4].train_accuracy;
    assert!(acc > 0.9, "train accuracy {acc}");
    assert!(evaluate(&models, &samples, 64).unwrap().accuracy > 0.9);
}
