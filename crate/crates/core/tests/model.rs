use medfront::autodiff::{stream_rng, Tape, Tensor};
use medfront::datasets::{
    assign_partitions, generate_synthetic, Fractions, Label, Partition, Preprocessor, SplitMode, SyntheticConfig,
};
use medfront::frontends::{FrontendConfig, FrontendKind};
use medfront::model::{
    sidecar_path, train, Classifier, Example, ModelConfig, ModelError, Sidecar, TrainConfig, LOG_HEADER,
};
use medfront::signal::Waveform;

const SAMPLES: usize = 4000;

fn small_frontend() -> FrontendConfig {
    FrontendConfig {
        n_filters: 32,
        ..FrontendConfig::default()
    }
}

/// One-second synthetic segments at 4 kHz split 75/15/10.
fn synthetic(count: usize, seed: u64) -> [Vec<Example>; 3] {
    let cfg = SyntheticConfig {
        count,
        seed,
        duration_s: 1.0,
        ..SyntheticConfig::default()
    };
    let mut pre = Preprocessor::new(12, cfg.band_hz, 4000, 1.0);
    let examples: Vec<Example> = generate_synthetic(&cfg)
        .into_iter()
        .enumerate()
        .map(|(i, s)| Example {
            id: format!("seg{i:04}"),
            waveform: pre.process(&s.waveform).unwrap(),
            label: s.label,
        })
        .collect();
    let labels: Vec<Label> = examples.iter().map(|e| e.label).collect();
    let groups = vec![String::new(); labels.len()];
    let parts = assign_partitions(&labels, &groups, seed, Fractions::default(), SplitMode::PerSegment).unwrap();
    Partition::ALL.map(|p| {
        examples
            .iter()
            .zip(&parts)
            .filter(|(_, &q)| q == p)
            .map(|(e, _)| e.clone())
            .collect()
    })
}

fn waves(examples: &[Example]) -> Vec<&Waveform> {
    examples.iter().map(|e| &e.waveform).collect()
}

fn config(kind: FrontendKind, epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        lr: 1e-3,
        seed: 5,
        frontend: kind,
        ..TrainConfig::default()
    }
}

#[test]
fn zero_weights_give_zero_logits_and_even_probabilities() {
    let mut clf = Classifier::new(FrontendKind::Mel, &small_frontend(), &ModelConfig::compact(), SAMPLES, 1).unwrap();
    for id in clf.model.param_ids() {
        clf.store.value_mut(id).data_mut().fill(0.0);
    }
    let w = Waveform::new(vec![0.1; SAMPLES], 4000, "flat");
    let mut tape = Tape::new();
    let x = clf.frontend.forward(&mut tape, &clf.store, &[&w]).unwrap();
    let logits = clf
        .model
        .forward(&mut tape, &clf.store, x, false, &mut stream_rng(0, 0))
        .unwrap();
    assert_eq!(tape.value(logits).data(), &[0.0, 0.0]);
    let p = clf.predict(&[&w]).unwrap();
    assert_eq!(p[0].probabilities, vec![0.5, 0.5]);
}

#[test]
fn fixed_frontend_registers_no_parameters() {
    let clf = Classifier::new(FrontendKind::Mel, &small_frontend(), &ModelConfig::compact(), SAMPLES, 1).unwrap();
    assert!(clf.frontend.param_ids().is_empty());
    assert_eq!(clf.trainable_ids(), clf.model.param_ids());
    assert_eq!(clf.store.numel(), clf.model.plan().num_parameters(clf.model.config()));
}

#[test]
fn vgg_style_builds_on_the_default_frame_grid() {
    let clf = Classifier::new(
        FrontendKind::Mel,
        &FrontendConfig::default(),
        &ModelConfig::vgg_style(),
        8000,
        1,
    )
    .unwrap();
    assert_eq!(clf.model.plan().input, (198, 128));
    assert_eq!(clf.model.param_ids().len(), 2 * (13 + 3));
}

#[test]
fn one_epoch_takes_ceil_n_over_batch_steps_and_logs_one_row() {
    let [tr, va, _] = synthetic(120, 2);
    assert_eq!(tr.len(), 90);
    let mut clf = Classifier::new(FrontendKind::Mel, &small_frontend(), &ModelConfig::compact(), SAMPLES, 3).unwrap();
    let report = train(&mut clf, &tr, &va, &config(FrontendKind::Mel, 1)).unwrap();
    assert_eq!(report.steps, 2);
    let csv = report.log_csv();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], LOG_HEADER);
    assert_eq!(lines.len(), 2);
    assert!(lines[1].starts_with("1,"));

    let mut clf = Classifier::new(FrontendKind::Mel, &small_frontend(), &ModelConfig::compact(), SAMPLES, 3).unwrap();
    let tc = TrainConfig {
        batch_size: 7,
        ..config(FrontendKind::Mel, 2)
    };
    assert_eq!(train(&mut clf, &tr, &va, &tc).unwrap().steps, 2 * 13);
}

#[test]
fn loss_on_a_fixed_batch_decreases_for_every_frontend() {
    let [tr, _, _] = synthetic(40, 4);
    let batch: Vec<&Example> = tr.iter().take(16).collect();
    let labels: Vec<usize> = batch.iter().map(|e| e.label.index()).collect();
    let bw: Vec<&Waveform> = batch.iter().map(|e| &e.waveform).collect();
    let model = ModelConfig {
        dropout_p: 0.0,
        ..ModelConfig::compact()
    };
    for kind in FrontendKind::ALL {
        let mut clf = Classifier::new(kind, &small_frontend(), &model, SAMPLES, 6).unwrap();
        clf.fit_standardization(&bw).unwrap();
        let mut adam = medfront::autodiff::AdamState::new(
            medfront::autodiff::AdamConfig {
                lr: 1e-3,
                ..Default::default()
            },
            &clf.store,
            clf.trainable_ids(),
        );
        let mut losses = Vec::new();
        for _ in 0..6 {
            let mut tape = Tape::new();
            let x = clf.frontend.forward(&mut tape, &clf.store, &bw).unwrap();
            let logits = clf
                .model
                .forward(&mut tape, &clf.store, x, true, &mut stream_rng(0, 0))
                .unwrap();
            let loss = tape.softmax_cross_entropy(logits, &labels).unwrap();
            losses.push(tape.value(loss).item());
            tape.backward(loss, &mut clf.store).unwrap();
            adam.step(&mut clf.store).unwrap();
            clf.frontend.constrain(&mut clf.store);
        }
        for w in losses.windows(2) {
            assert!(w[1] < w[0], "{kind:?}: {losses:?}");
        }
    }
}

#[test]
fn leaf_centers_move_during_one_epoch() {
    let [tr, va, _] = synthetic(200, 8);
    let mut clf = Classifier::new(FrontendKind::Leaf, &small_frontend(), &ModelConfig::compact(), SAMPLES, 2).unwrap();
    let ids = clf.frontend.leaf_ids().unwrap();
    let before = clf.store.value(ids.center_hz).clone();
    train(&mut clf, &tr, &va, &config(FrontendKind::Leaf, 1)).unwrap();
    let after = clf.store.value(ids.center_hz);
    let moved = before
        .data()
        .iter()
        .zip(after.data())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(moved > 1e-6, "largest center change {moved}");
}

#[test]
fn eval_passes_are_deterministic_and_normalized() {
    let [tr, _, te] = synthetic(60, 9);
    let mut clf = Classifier::new(FrontendKind::NnAudio, &small_frontend(), &ModelConfig::compact(), SAMPLES, 4).unwrap();
    clf.fit_standardization(&waves(&tr)).unwrap();
    let a = clf.predict(&waves(&te)).unwrap();
    let b = clf.predict(&waves(&te)).unwrap();
    assert_eq!(a, b);
    for p in &a {
        assert!((p.probabilities.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(p.probability() >= 0.5);
    }
}

#[test]
fn checkpoint_round_trip_reproduces_predictions_bitwise() {
    let [tr, va, te] = synthetic(80, 10);
    let kind = FrontendKind::Leaf;
    let mut clf = Classifier::new(kind, &small_frontend(), &ModelConfig::compact(), SAMPLES, 4).unwrap();
    let tc = config(kind, 1);
    let report = train(&mut clf, &tr, &va, &tc).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.mfck");
    let mut side = clf.sidecar(&tc, report.best_epoch);
    side.test_digest = Some("abc".into());
    clf.save(&path, &side).unwrap();
    assert!(sidecar_path(&path).exists());
    let (loaded, side2): (Classifier, Sidecar) = Classifier::load(&path).unwrap();
    assert_eq!(side2, side);
    assert_eq!(loaded.store.to_bytes(), clf.store.to_bytes());
    assert_eq!(loaded.predict(&waves(&te)).unwrap(), clf.predict(&waves(&te)).unwrap());
}

#[test]
fn wrong_input_length_is_rejected() {
    let clf = Classifier::new(FrontendKind::Mel, &small_frontend(), &ModelConfig::compact(), SAMPLES, 1).unwrap();
    let w = Waveform::new(vec![0.0; SAMPLES + 400], 4000, "long");
    assert!(matches!(clf.predict(&[&w]), Err(ModelError::InputShape { .. })));
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::zeros(&[1, 10, 32]));
    let err = clf.model.forward(&mut tape, &clf.store, x, false, &mut stream_rng(0, 0));
    assert!(matches!(err, Err(ModelError::InputShape { .. })));
}

#[test]
fn nan_loss_names_the_batch() {
    let [tr, va, _] = synthetic(40, 11);
    let mut clf = Classifier::new(FrontendKind::Mel, &small_frontend(), &ModelConfig::compact(), SAMPLES, 1).unwrap();
    let w = clf.model.param_ids()[0];
    clf.store.value_mut(w).data_mut()[0] = f64::NAN;
    match train(&mut clf, &tr, &va, &config(FrontendKind::Mel, 1)) {
        Err(ModelError::NonFinite { epoch, batch, segments, op }) => {
            assert_eq!(op, "conv2d");
            assert_eq!((epoch, batch), (1, 0));
            assert_eq!(segments.len(), tr.len().min(64));
            assert!(segments.iter().all(|s| s.starts_with("seg")));
        }
        other => panic!("expected a non-finite loss error, got {other:?}"),
    }
}

#[test]
fn mismatched_frontend_in_train_config_is_rejected() {
    let [tr, va, _] = synthetic(40, 12);
    let mut clf = Classifier::new(FrontendKind::Mel, &small_frontend(), &ModelConfig::compact(), SAMPLES, 1).unwrap();
    assert!(matches!(
        train(&mut clf, &tr, &va, &config(FrontendKind::Leaf, 1)),
        Err(ModelError::Config(_))
    ));
}

#[test]
fn trained_model_generalizes_to_the_test_split() {
    let [tr, va, te] = synthetic(300, 13);
    let mut clf = Classifier::new(FrontendKind::Mel, &small_frontend(), &ModelConfig::compact(), SAMPLES, 7).unwrap();
    let tc = TrainConfig {
        target_val_ba: Some(0.95),
        ..config(FrontendKind::Mel, 15)
    };
    let report = train(&mut clf, &tr, &va, &tc).unwrap();
    let val = report.best_val.unwrap().balanced_accuracy;
    assert!(val >= 0.95, "{}", report.log_csv());
    let test = clf.evaluate(&te).unwrap().balanced_accuracy;
    assert!((test - val).abs() <= 0.10, "val {val} test {test}");
}
