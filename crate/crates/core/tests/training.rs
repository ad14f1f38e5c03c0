use lawnmeter::dataset::{write_synthetic_dataset, Manifest, SceneConfig};
use lawnmeter::neuralnet::{init_parameters, Architecture, LayerSpec, ModelSpec};
use lawnmeter::training::{
    load_checkpoint, save_checkpoint, train, Checkpoint, InputPipeline, Optimizer, Pipeline, TrainConfig,
};
use lawnmeter::Error;

fn scenes(dir: &std::path::Path, count: usize, seed: u64) -> Manifest {
    let cfg = SceneConfig {
        size: 32,
        meters_per_pixel: 0.5,
        seed,
        ..Default::default()
    };
    write_synthetic_dataset(&cfg, count, dir).unwrap()
}

fn tiny_spec(channels: usize) -> ModelSpec {
    Architecture {
        base_filters: 4,
        dense_units: [16, 8],
        ..Default::default()
    }
    .build([32, 32, channels])
    .unwrap()
}

fn quick_cfg(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 4,
        target_standardize: true,
        seed: 3,
        ..Default::default()
    }
}

#[test]
fn zero_epochs_returns_initial_parameters() {
    let dir = tempfile::tempdir().unwrap();
    let m = scenes(dir.path(), 6, 1);
    let spec = tiny_spec(3);
    let cfg = quick_cfg(0);
    let out = train(&spec, &m, Some(&m), &cfg, &InputPipeline::new(Pipeline::Cnn)).unwrap();
    assert!(out.history.epochs.is_empty());
    assert_eq!(out.model.params, init_parameters(&spec, cfg.seed).unwrap());
    assert_eq!(out.history.to_csv(), "epoch,train_mse,val_mse\n");
}

#[test]
fn training_is_reproducible_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let m = scenes(dir.path(), 10, 2);
    let (tr, va) = (m.subset(&[0, 1, 2, 3, 4, 5, 6]), m.subset(&[7, 8, 9]));
    let run = |threads: usize, pipeline: Pipeline| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            let spec = tiny_spec(pipeline.input_channels());
            let out = train(&spec, &tr, Some(&va), &quick_cfg(3), &InputPipeline::new(pipeline)).unwrap();
            (out.history.to_csv(), out.model.params)
        })
    };
    for p in [Pipeline::Cnn, Pipeline::Contour] {
        let a = run(1, p);
        assert_eq!(a, run(1, p));
        assert_eq!(a, run(4, p));
        assert_eq!(a.0.lines().count(), 4);
    }
}

#[test]
fn early_stopping_returns_best_epoch() {
    let dir = tempfile::tempdir().unwrap();
    let m = scenes(dir.path(), 10, 3);
    let (tr, va) = (m.subset(&[0, 1, 2, 3, 4, 5, 6]), m.subset(&[7, 8, 9]));
    let cfg = TrainConfig {
        early_stop_patience: Some(2),
        learning_rate: 3e-2,
        ..quick_cfg(12)
    };
    let out = train(&tiny_spec(3), &tr, Some(&va), &cfg, &InputPipeline::new(Pipeline::Cnn)).unwrap();
    let best = out.history.best_epoch.unwrap();
    let vals: Vec<f64> = out.history.epochs.iter().map(|e| e.val_mse.unwrap()).collect();
    let min = vals.iter().cloned().fold(f64::INFINITY, f64::min);
    assert_eq!(vals[best - 1], min);
    let last = out.history.epochs.len();
    assert!(last == 12 || last - best == 2, "stopped at {last}, best {best}");
    // the returned parameters reproduce the best epoch's validation error
    let preds = out.model.predict(&va).unwrap();
    let mse = preds
        .iter()
        .zip(va.targets())
        .map(|(p, t)| (p - t).powi(2))
        .sum::<f64>()
        / 3.0;
    assert!((mse - min).abs() <= 1e-9 * min.max(1.0));
}

#[test]
fn loss_drops_after_one_small_step() {
    let dir = tempfile::tempdir().unwrap();
    let m = scenes(dir.path(), 4, 4);
    let spec = ModelSpec {
        input: [32, 32, 3],
        layers: vec![LayerSpec::Flatten, LayerSpec::Dense { out_features: 1 }],
        l2_lambda: 0.0,
    };
    let input = InputPipeline::new(Pipeline::Cnn);
    let cfg = TrainConfig {
        optimizer: Optimizer::Sgd { momentum: 0.0 },
        learning_rate: 1e-4,
        shuffle: false,
        batch_size: 4,
        early_stop_patience: None,
        ..quick_cfg(1)
    };
    let before = train(
        &spec,
        &m,
        None,
        &TrainConfig {
            epochs: 0,
            ..cfg.clone()
        },
        &input,
    )
    .unwrap();
    let after = train(&spec, &m, None, &cfg, &input).unwrap();
    let mse = |p: Vec<f64>| p.iter().zip(m.targets()).map(|(p, t)| (p - t).powi(2)).sum::<f64>();
    assert!(mse(after.model.predict(&m).unwrap()) < mse(before.model.predict(&m).unwrap()));
}

#[test]
fn standardization_only_rescales_the_solution() {
    // a linear model on constant images has a closed-form optimum: the
    // target mean; both target encodings must land on it
    let dir = tempfile::tempdir().unwrap();
    let m = scenes(dir.path(), 6, 5);
    let spec = ModelSpec {
        input: [1, 1, 1],
        layers: vec![LayerSpec::Flatten, LayerSpec::Dense { out_features: 1 }],
        l2_lambda: 0.0,
    };
    // one black pixel per record makes every input identical
    let black = tempfile::tempdir().unwrap();
    let mut recs = m.records.clone();
    for (i, r) in recs.iter_mut().enumerate() {
        let name = format!("p{i}.pgm");
        std::fs::write(black.path().join(&name), b"P5\n1 1\n255\n\x00").unwrap();
        r.image_path = name;
    }
    let m = Manifest::new(black.path(), recs);
    let mean = m.targets().iter().sum::<f64>() / 6.0;
    let input = InputPipeline::new(Pipeline::Threshold);
    let mut preds = Vec::new();
    for standardize in [false, true] {
        let lr = if standardize { 0.05 } else { 20.0 };
        let cfg = TrainConfig {
            epochs: 400,
            batch_size: 6,
            learning_rate: lr,
            target_standardize: standardize,
            early_stop_patience: None,
            ..quick_cfg(0)
        };
        let out = train(&spec, &m, None, &cfg, &input).unwrap();
        preds.push(out.model.predict(&m).unwrap()[0]);
    }
    for p in &preds {
        assert!((p - mean).abs() <= 1e-3 * mean, "{p} vs {mean}");
    }
    assert!((preds[0] - preds[1]).abs() <= 1e-3 * mean);
}

#[test]
fn divergence_and_missing_images_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let m = scenes(dir.path(), 6, 6);
    let cfg = TrainConfig {
        optimizer: Optimizer::Sgd { momentum: 0.9 },
        learning_rate: 1e12,
        target_standardize: false,
        ..quick_cfg(5)
    };
    let err = train(&tiny_spec(3), &m, None, &cfg, &InputPipeline::new(Pipeline::Cnn)).unwrap_err();
    assert!(matches!(err, Error::Diverged { .. }), "{err}");
    assert_eq!(err.exit_code(), 1);

    std::fs::remove_file(m.path_of(&m.records[2])).unwrap();
    let err = train(
        &tiny_spec(3),
        &m,
        None,
        &quick_cfg(1),
        &InputPipeline::new(Pipeline::Cnn),
    )
    .unwrap_err();
    assert!(err.to_string().contains("scene_002.ppm"), "{err}");
}

#[test]
fn checkpoint_roundtrip_preserves_predictions() {
    let dir = tempfile::tempdir().unwrap();
    let m = scenes(dir.path(), 6, 7);
    let out = train(
        &tiny_spec(1),
        &m,
        None,
        &quick_cfg(2),
        &InputPipeline::new(Pipeline::Edges),
    )
    .unwrap();
    let before = out.model.predict(&m).unwrap();
    let ck = Checkpoint {
        model: out.model,
        config: quick_cfg(2),
        optimizer: out.optimizer,
    };
    let path = dir.path().join("model.lawn");
    save_checkpoint(&ck, &path).unwrap();
    let back = load_checkpoint(&path).unwrap();
    let after = back.model.predict(&m).unwrap();
    assert_eq!(
        before.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
        after.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    );
}
