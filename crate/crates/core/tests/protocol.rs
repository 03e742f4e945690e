use treecnn::data::{stratified_split, Split, SplitRatios};
use treecnn::init::InitializerKind;
use treecnn::layers::softmax_cross_entropy;
use treecnn::metrics::ConfusionMatrix;
use treecnn::model::{backward_into, build, forward_traced, ModelSpec};
use treecnn::optim::{init_state, Hyper, OptimizerKind};
use treecnn::synthetic::{black_and_white, separable_images};
use treecnn::train::{cross_validate, evaluate, sweep, train, Dataset, SweepGrid, TrainConfig};
use treecnn::{Error, SeedStream};

fn small_spec(n: usize, side: usize, k: usize) -> ModelSpec {
    let mut spec = ModelSpec::new(n, [side, side, 3], k);
    spec.filters_per_block = vec![4, 8, 16][..n].to_vec();
    spec.fc_width = 16;
    spec
}

fn three_way(data: &Dataset<f32>, seed: u64) -> [Dataset<f32>; 3] {
    let s = stratified_split(&data.labels, SplitRatios::default(), SeedStream::new(seed)).unwrap();
    Split::ALL.map(|p| data.subset(&(0..data.len()).filter(|&i| s.splits[i] == p).collect::<Vec<_>>()))
}

#[test]
fn black_and_white_is_learned() {
    let data = black_and_white::<f32>(10, 8, 8).unwrap();
    let [tr, va, _] = three_way(&data, 1);
    let mut cfg = TrainConfig::new(small_spec(1, 8, 2), OptimizerKind::Adam, 3);
    cfg.batch_size = 4;
    let out = train(&cfg, &tr, &va, None).unwrap();
    assert!(out.history.epochs.iter().any(|e| e.val_accuracy == 1.0));
    let report = evaluate(&out.checkpoint, &va, None).unwrap();
    assert_eq!(report.accuracy, 1.0);
}

#[test]
fn small_set_is_memorized() {
    let data = separable_images::<f32>(6, 10, 12, 12, 5).unwrap();
    let mut spec = small_spec(3, 12, 6);
    spec.initializer = InitializerKind::HeNormal;
    let mut cfg = TrainConfig::new(spec, OptimizerKind::Adamax, 9);
    cfg.max_epochs = 60;
    cfg.batch_size = 10;
    let out = train(&cfg, &data, &data, None).unwrap();
    let report = evaluate(&out.checkpoint, &data, None).unwrap();
    assert!(report.accuracy >= 0.99, "train accuracy {}", report.accuracy);
}

#[test]
fn full_batch_sgd_loss_strictly_decreases() {
    let data = separable_images::<f64>(3, 6, 8, 8, 2).unwrap();
    let spec = small_spec(1, 8, 3);
    let mut params = build::<f64>(&spec, SeedStream::new(4)).unwrap();
    let hyper = Hyper::defaults(OptimizerKind::Sgd);
    assert_eq!(hyper.learning_rate, 0.01);
    let mut states: Vec<_> =
        params.tensors().map(|t| init_state::<f64>(OptimizerKind::Sgd, hyper, t.shape()).unwrap()).collect();
    let mut losses = Vec::new();
    for _ in 0..6 {
        let mut grads = params.zeros_like();
        let mut loss = 0.0;
        for (img, &label) in data.images.iter().zip(&data.labels) {
            let trace = forward_traced(&spec, &params, img, true, &mut SeedStream::new(0).rng()).unwrap();
            let (l, d) = softmax_cross_entropy(&trace.logits, label, None).unwrap();
            loss += l;
            backward_into(&spec, &params, trace, d, &mut grads).unwrap();
        }
        grads.scale(1.0 / data.len() as f64);
        losses.push(loss / data.len() as f64);
        for ((p, g), s) in params.tensors_mut().zip(grads.tensors()).zip(&mut states) {
            s.update(p, g).unwrap();
        }
    }
    assert!(losses.windows(2).all(|w| w[1] < w[0]), "{losses:?}");
}

#[test]
fn evaluation_metrics_example() {
    let cm = ConfusionMatrix::from_rows(&[vec![5, 0], vec![2, 3]]).unwrap();
    assert!((cm.accuracy() - 0.8).abs() < 1e-12);
    assert!((cm.avg_class_recall() - 0.8).abs() < 1e-12);
    assert!((cm.avg_class_precision() - (5.0 / 7.0 + 1.0) / 2.0).abs() < 1e-12);
}

#[test]
fn evaluate_rejects_mismatched_classes() {
    let data = black_and_white::<f32>(4, 8, 8).unwrap();
    let mut cfg = TrainConfig::new(small_spec(1, 8, 2), OptimizerKind::Sgd, 1);
    cfg.max_epochs = 1;
    let out = train(&cfg, &data, &data, None).unwrap();
    let three =
        Dataset::new(data.images.clone(), data.labels.clone(), vec!["a".into(), "b".into(), "c".into()]).unwrap();
    assert!(evaluate(&out.checkpoint, &three, None).is_err());
}

#[test]
fn non_finite_loss_aborts_with_diagnostics() {
    let data = black_and_white::<f32>(4, 8, 8).unwrap();
    let mut cfg = TrainConfig::new(small_spec(1, 8, 2), OptimizerKind::Sgd, 1);
    cfg.hyper = Some(Hyper::defaults(OptimizerKind::Sgd).with_learning_rate(1e30));
    cfg.max_epochs = 5;
    cfg.batch_size = 2;
    match train(&cfg, &data, &data, None) {
        Err(Error::NonFinite { context }) => assert!(context.contains("epoch"), "{context}"),
        other => panic!("expected a non-finite abort, got {:?}", other.map(|o| o.history)),
    }
}

#[test]
fn cross_validation_covers_every_record_and_averages_folds() {
    let data = separable_images::<f32>(3, 10, 8, 8, 6).unwrap();
    let mut cfg = TrainConfig::new(small_spec(1, 8, 3), OptimizerKind::Adamax, 2);
    cfg.max_epochs = 2;
    let cv = cross_validate(&cfg, &data, 5).unwrap();
    assert_eq!(cv.folds.len(), 5);
    let tested: u64 = cv.folds.iter().map(|f| f.confusion.total()).sum();
    assert_eq!(tested, data.len() as u64);
    let mean = cv.folds.iter().map(|f| f.accuracy).sum::<f64>() / 5.0;
    assert!((cv.aggregate.accuracy - mean).abs() < 1e-12);
    assert_eq!(cv.aggregate.loss, None);
}

#[test]
fn fold_errors_carry_the_fold_index() {
    let data = separable_images::<f32>(2, 10, 8, 8, 6).unwrap();
    let mut cfg = TrainConfig::new(small_spec(1, 8, 2), OptimizerKind::Sgd, 2);
    cfg.max_epochs = 1;
    cfg.model.input_shape = [9, 9, 3];
    match cross_validate(&cfg, &data, 5) {
        Err(Error::Fold { fold: 0, .. }) => {}
        other => panic!("expected a fold error, got {:?}", other.map(|c| c.aggregate)),
    }
}

#[test]
fn single_cell_sweep_matches_direct_run() {
    let data = separable_images::<f32>(3, 10, 8, 8, 7).unwrap();
    let [tr, va, te] = three_way(&data, 2);
    let mut cfg = TrainConfig::new(small_spec(1, 8, 3), OptimizerKind::Adamax, 5);
    cfg.max_epochs = 3;
    let runs = sweep(&SweepGrid::default(), &cfg, &tr, &va, &te).unwrap();
    assert_eq!(runs.len(), 1);
    let direct = evaluate(&train(&cfg, &tr, &va, None).unwrap().checkpoint, &te, None).unwrap();
    assert_eq!(runs[0].outcome.as_ref().unwrap(), &direct);
}

#[test]
fn failed_sweep_rows_are_kept() {
    let data = separable_images::<f32>(3, 10, 8, 8, 7).unwrap();
    let [tr, va, te] = three_way(&data, 2);
    let mut cfg = TrainConfig::new(small_spec(1, 8, 3), OptimizerKind::Sgd, 5);
    cfg.max_epochs = 1;
    // Four blocks cannot fit an 8x8 input.
    let grid = SweepGrid { n_blocks: vec![1, 4], ..SweepGrid::default() };
    let runs = sweep(&grid, &cfg, &tr, &va, &te).unwrap();
    assert_eq!(runs.len(), 2);
    assert!(runs[0].outcome.is_ok());
    assert!(runs[1].outcome.as_ref().unwrap_err().contains("N=4"));
}
