use wsvad_core::data::{load_dataset, save_dataset};
use wsvad_core::losses::kmax_loss;
use wsvad_core::model::{backward, forward};
use wsvad_core::training::{
    batch_gradients, load_checkpoint, make_batches, metrics_csv, save_checkpoint, train_until, Batch,
    Checkpoint, TrainingSet,
};
use wsvad_core::{
    evaluate, generate_synthetic, train, CenterMemory, EvalConfig, LayerWidths, ModelParams, Rng, Strategy,
    SynthConfig, TrainConfig, TrainState,
};

fn small_data(seed: u64) -> (wsvad_core::Dataset, wsvad_core::Dataset) {
    generate_synthetic(&SynthConfig {
        feature_dim: 8,
        train_per_class: 6,
        test_per_class: 3,
        frames: (320, 640),
        seed,
        ..SynthConfig::default()
    })
    .unwrap()
}

fn small_config(strategy: Strategy) -> TrainConfig {
    let mut c = TrainConfig {
        strategy,
        widths: LayerWidths { fc: 16, gcn1: 8, gcn2: 4 },
        epochs: 4,
        segments: 16,
        seed: 11,
        ..TrainConfig::default()
    };
    c.hp.batch_size = 4;
    c
}

#[test]
fn identical_seeds_give_identical_metrics() {
    let (tr, te) = small_data(1);
    for strategy in Strategy::ALL {
        let cfg = TrainConfig {
            enable_bc: true,
            ..small_config(strategy)
        };
        let (sa, ma) = train(&cfg, &tr, Some(&te)).unwrap();
        let (sb, mb) = train(&cfg, &tr, Some(&te)).unwrap();
        assert_eq!(metrics_csv(&ma), metrics_csv(&mb), "{strategy}");
        assert_eq!(sa, sb);
    }
    let (_, a) = train(&small_config(Strategy::Way1), &tr, None).unwrap();
    let (_, b) = train(&TrainConfig { seed: 12, ..small_config(Strategy::Way1) }, &tr, None).unwrap();
    assert_ne!(metrics_csv(&a), metrics_csv(&b));
}

#[test]
fn resume_matches_uninterrupted_run() {
    let (tr, te) = small_data(2);
    let dir = tempfile::tempdir().unwrap();
    for strategy in [Strategy::Way1, Strategy::Way3, Strategy::Way4] {
        let cfg = small_config(strategy);
        let (full, full_metrics) = train(&cfg, &tr, Some(&te)).unwrap();

        let set = TrainingSet::new(&tr, &cfg).unwrap();
        let mut state = TrainState::new(&cfg, set.feature_dim()).unwrap();
        let half = TrainConfig { epochs: 2, ..cfg.clone() };
        let mut metrics = train_until(&mut state, &set, &half, Some(&te), |_, _| Ok(())).unwrap();
        let path = dir.path().join(format!("{strategy}.ckpt"));
        save_checkpoint(&path, &Checkpoint::from_state(&state, Some("epochs=2\n".into()))).unwrap();
        drop(state);

        let mut resumed = load_checkpoint(&path).unwrap().into_state().unwrap();
        assert_eq!(resumed.epoch, 2);
        metrics.extend(train_until(&mut resumed, &set, &cfg, Some(&te), |_, _| Ok(())).unwrap());
        assert_eq!(resumed, full, "{strategy}");
        assert_eq!(metrics_csv(&metrics), metrics_csv(&full_metrics));
    }
}

#[test]
fn backbone_objective_is_mean_kmax() {
    let (tr, _) = small_data(3);
    let cfg = TrainConfig {
        hp: wsvad_core::HyperParams { dropout_p: 0.0, batch_size: 4, ..Default::default() },
        ..TrainConfig { widths: LayerWidths { fc: 16, gcn1: 8, gcn2: 4 }, segments: 16, ..TrainConfig::backbone() }
    };
    let set = TrainingSet::new(&tr, &cfg).unwrap();
    let params = TrainState::new(&cfg, set.feature_dim()).unwrap().params;
    let batch = make_batches(&tr, 4, &mut Rng::new(0)).unwrap().remove(0);
    let out = batch_gradients(&params, &set, &batch, &mut CenterMemory::new(Strategy::None), &cfg, &Rng::new(5))
        .unwrap();
    assert!(out.loss_bc_normal.is_none() && out.loss_bc_abnormal.is_none());

    // independent recomputation: per-video forward, k-max, backward, average
    let n = batch.len() as f64;
    let mut loss = 0.0;
    let mut grads = params.zeros_like();
    for vi in batch.videos() {
        let v = &set.videos[vi];
        let trace = forward(&params, &v.features, &v.adjacency, false, 0.0, &mut Rng::new(0)).unwrap();
        let k = kmax_loss(trace.scores(), v.label).unwrap();
        loss += k.value / n;
        let g = backward(&trace, &params, &k.grad_scores, None).unwrap();
        grads.add_scaled(&g, 1.0 / n).unwrap();
    }
    assert!((out.loss_total - loss).abs() < 1e-12);
    assert_eq!(out.loss_total, out.loss_kmax);
    for (a, b) in out.grads.blocks().iter().zip(grads.blocks()) {
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() < 1e-12 * y.abs().max(1.0));
        }
    }
}

#[test]
fn clustering_terms_only_touch_layers_up_to_the_tap() {
    let (tr, _) = small_data(4);
    let mut cfg = small_config(Strategy::None);
    cfg.enable_bcg = false;
    cfg.hp.dropout_p = 0.0;
    let set = TrainingSet::new(&tr, &cfg).unwrap();
    let params = TrainState::new(&cfg, set.feature_dim()).unwrap().params;
    let batch = Batch { normal: vec![0, 1], abnormal: vec![6, 7] };
    let with_bc =
        batch_gradients(&params, &set, &batch, &mut CenterMemory::new(Strategy::None), &cfg, &Rng::new(1)).unwrap();
    let without = batch_gradients(
        &params,
        &set,
        &batch,
        &mut CenterMemory::new(Strategy::None),
        &TrainConfig { enable_bc: false, ..cfg.clone() },
        &Rng::new(1),
    )
    .unwrap();
    let (a, b) = (with_bc.grads.blocks(), without.grads.blocks());
    // fc and gcn1 blocks change, gcn2 and the scoring layer do not
    assert_ne!(a[0], b[0]);
    assert_ne!(a[2], b[2]);
    for i in 4..8 {
        assert_eq!(a[i], b[i], "block {i}");
    }
}

#[test]
fn zero_model_scores_half_everywhere() {
    let (_, te) = small_data(5);
    let params = ModelParams::zeros(te.feature_dim(), LayerWidths::default());
    for rectify in [false, true] {
        let cfg = EvalConfig { rectify, ..EvalConfig::default() };
        let report = evaluate(&params, &te, &cfg).unwrap();
        assert_eq!(report.auc, 0.5);
        assert!(report.videos.iter().all(|v| v.frame_scores.iter().all(|&s| s == 0.5)));
    }
}

#[test]
fn training_from_disk_matches_memory() {
    let (tr, te) = small_data(6);
    let dir = tempfile::tempdir().unwrap();
    let tm = save_dataset(&tr, dir.path(), "train").unwrap();
    let em = save_dataset(&te, dir.path(), "test").unwrap();
    let (tr2, te2) = (load_dataset(&tm).unwrap(), load_dataset(&em).unwrap());
    assert_eq!(tr2, tr);
    assert_eq!(te2, te);
    let cfg = small_config(Strategy::Way2);
    assert_eq!(train(&cfg, &tr, Some(&te)).unwrap(), train(&cfg, &tr2, Some(&te2)).unwrap());
}
