use proptest::prelude::*;
use rand::Rng;
use treecnn::augment::{augment, oversample_plan, AugmentParams};
use treecnn::data::geo::ground_resolution;
use treecnn::data::{largest_remainder, stratified_kfold, stratified_split, Split, SplitRatios};
use treecnn::init::{initialize, InitializerKind};
use treecnn::layers::{maxpool2d_forward, relu_forward, softmax_cross_entropy};
use treecnn::metrics::{ConfusionMatrix, EvalReport};
use treecnn::optim::{init_state, Hyper, OptimizerKind};
use treecnn::{SeedStream, Tensor};

fn labels_strategy() -> impl Strategy<Value = Vec<u8>> {
    prop::collection::vec(0u8..5, 1..120)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn largest_remainder_is_exact_and_within_one(total in 0usize..500, weights in prop::collection::vec(0.0f64..10.0, 1..8)) {
        prop_assume!(weights.iter().sum::<f64>() > 0.0);
        let seats = largest_remainder(total, &weights);
        prop_assert_eq!(seats.iter().sum::<usize>(), total);
        let sum: f64 = weights.iter().sum();
        for (s, w) in seats.iter().zip(&weights) {
            prop_assert!((*s as f64 - total as f64 * w / sum).abs() < 1.0 + 1e-9);
        }
    }

    #[test]
    fn split_is_partition_within_one(labels in labels_strategy(), seed in any::<u64>()) {
        let ratios = SplitRatios::default();
        let a = stratified_split(&labels, ratios, SeedStream::new(seed)).unwrap();
        prop_assert_eq!(a.splits.len(), labels.len());
        let b = stratified_split(&labels, ratios, SeedStream::new(seed)).unwrap();
        prop_assert_eq!(&a, &b);
        for class in 0u8..5 {
            let members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
            if members.len() < 3 {
                prop_assert!(members.iter().all(|&i| a.splits[i] == Split::Train));
                continue;
            }
            for (split, r) in Split::ALL.into_iter().zip(ratios.as_array()) {
                let n = members.iter().filter(|&&i| a.splits[i] == split).count();
                prop_assert!((n as f64 - r * members.len() as f64).abs() <= 1.0);
            }
        }
    }

    #[test]
    fn kfold_partitions_and_balances(labels in labels_strategy(), k in 2usize..6, seed in any::<u64>()) {
        let smallest = (0u8..5).map(|c| labels.iter().filter(|&&l| l == c).count()).filter(|&n| n > 0).min().unwrap();
        let folds = stratified_kfold(&labels, k, SeedStream::new(seed));
        if smallest < k {
            prop_assert!(folds.is_err());
            return Ok(());
        }
        let folds = folds.unwrap();
        prop_assert_eq!(folds.len(), k);
        let mut seen = vec![0; labels.len()];
        for f in &folds {
            for &i in f {
                seen[i] += 1;
            }
        }
        prop_assert!(seen.iter().all(|&s| s == 1));
        for class in 0u8..5 {
            let sizes: Vec<usize> = folds.iter().map(|f| f.iter().filter(|&&i| labels[i] == class).count()).collect();
            prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        }
    }

    #[test]
    fn metrics_are_functions_of_confusion(rows in prop::collection::vec(prop::collection::vec(0u64..20, 4), 4)) {
        let cm = ConfusionMatrix::from_rows(&rows).unwrap();
        let total: u64 = rows.iter().flatten().sum();
        let trace: u64 = (0..4).map(|i| rows[i][i]).sum();
        let acc = if total == 0 { 0.0 } else { trace as f64 / total as f64 };
        prop_assert!((cm.accuracy() - acc).abs() < 1e-12);
        for c in 0..4 {
            let row: u64 = rows[c].iter().sum();
            let col: u64 = rows.iter().map(|r| r[c]).sum();
            let recall = if row == 0 { 0.0 } else { rows[c][c] as f64 / row as f64 };
            let precision = if col == 0 { 0.0 } else { rows[c][c] as f64 / col as f64 };
            prop_assert!((cm.recall()[c] - recall).abs() < 1e-12);
            prop_assert!((cm.precision()[c] - precision).abs() < 1e-12);
        }
        let report = EvalReport::from_confusion(cm.clone(), Some(1.0), 3);
        let agg = EvalReport::aggregate(&[report.clone(), report.clone()]).unwrap();
        prop_assert!((agg.accuracy - report.accuracy).abs() < 1e-12);
        prop_assert_eq!(agg.loss, None);
    }

    #[test]
    fn augment_preserves_shape_and_range(seed in any::<u64>(), h in 1usize..12, w in 1usize..12,
                                         rotation in 0.0f64..90.0, shift in 0.0f64..0.5, flip in 0.0f64..1.0,
                                         zlo in 0.5f64..1.0, zhi in 1.0f64..1.6, blo in 0.1f64..1.0, bhi in 1.0f64..3.0) {
        let mut rng = SeedStream::new(seed).rng();
        let img = Tensor::<f32>::new(&[h, w, 3], (0..h * w * 3).map(|_| rng.random::<f32>()).collect()).unwrap();
        let params = AugmentParams { rotation, width_shift: shift, height_shift: shift, horizontal_flip: flip, zoom: (zlo, zhi), brightness: (blo, bhi) };
        let a = augment(&img, &params, &mut SeedStream::new(seed ^ 1).rng()).unwrap();
        let b = augment(&img, &params, &mut SeedStream::new(seed ^ 1).rng()).unwrap();
        prop_assert_eq!(a.shape(), img.shape());
        prop_assert!(a.data().iter().all(|v| (0.0..=1.0).contains(v)));
        prop_assert_eq!(a, b);
    }

    #[test]
    fn oversample_hits_target(counts in prop::collection::vec(1usize..80, 1..8), extra in 0usize..100) {
        let target = counts.iter().max().unwrap() + extra;
        let plan = oversample_plan(&counts, target).unwrap();
        for (c, p) in counts.iter().zip(&plan) {
            prop_assert_eq!(p.len(), *c);
            prop_assert_eq!(c + p.iter().sum::<usize>(), target);
            prop_assert!(p.iter().max().unwrap() - p.iter().min().unwrap() <= 1);
        }
        prop_assert!(oversample_plan(&counts, counts.iter().max().unwrap() - 1).is_err() || counts.iter().max() == Some(&0));
    }

    #[test]
    fn initializer_is_deterministic(seed in any::<u64>(), kind in prop::sample::select(InitializerKind::all_default().to_vec())) {
        let a: Tensor<f32> = initialize(kind, &[3, 3, 2, 4], &mut SeedStream::new(seed).rng()).unwrap();
        let b: Tensor<f32> = initialize(kind, &[3, 3, 2, 4], &mut SeedStream::new(seed).rng()).unwrap();
        prop_assert_eq!(a.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }

    #[test]
    fn optimizer_step_is_pure_and_zero_gradient_is_noop(theta in -5.0f64..5.0, g in -5.0f64..5.0,
                                                       kind in prop::sample::select(OptimizerKind::ALL.to_vec())) {
        let state = init_state::<f64>(kind, Hyper::defaults(kind), &[2]).unwrap();
        let p = Tensor::from_f64(&[2], &[theta, -theta]).unwrap();
        let grad = Tensor::from_f64(&[2], &[g, 0.5 * g]).unwrap();
        let (p1, s1) = state.apply_step(&p, &grad).unwrap();
        let (p2, s2) = state.apply_step(&p, &grad).unwrap();
        prop_assert_eq!(&p1, &p2);
        prop_assert_eq!(s1.slots, s2.slots);
        let (p0, _) = state.apply_step(&p, &Tensor::zeros(&[2])).unwrap();
        prop_assert_eq!(p0, p);
        if g != 0.0 {
            // Adam-family first steps all move against the gradient.
            prop_assert!((p1.data()[0] - theta) * g < 0.0);
        }
    }

    #[test]
    fn ground_resolution_monotone(lat in -85.0f64..85.0, zoom in 0u8..22) {
        let here = ground_resolution(lat, zoom).unwrap();
        prop_assert!(ground_resolution(lat, zoom + 1).unwrap() < here);
        let further = if lat >= 0.0 { (lat + 1.0).min(85.04) } else { (lat - 1.0).max(-85.04) };
        prop_assert!(ground_resolution(further, zoom).unwrap() < here);
    }

    #[test]
    fn layer_shapes_and_loss_bounds(h in 1usize..9, w in 1usize..9, c in 1usize..4, seed in any::<u64>(), k in 2usize..8) {
        let mut rng = SeedStream::new(seed).rng();
        let x = Tensor::<f64>::new(&[h, w, c], (0..h * w * c).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let relu = relu_forward(&x).output;
        prop_assert!(relu.data().iter().all(|&v| v >= 0.0));
        if h >= 2 && w >= 2 {
            let pooled = maxpool2d_forward(&x).unwrap().output;
            prop_assert_eq!(pooled.shape(), &[h / 2, w / 2, c][..]);
        }
        let logits = Tensor::<f64>::new(&[k], (0..k).map(|_| rng.random_range(-50.0..50.0)).collect()).unwrap();
        let (loss, grad) = softmax_cross_entropy(&logits, 0, None).unwrap();
        prop_assert!(loss.is_finite() && loss >= 0.0);
        prop_assert!(grad.data().iter().sum::<f64>().abs() < 1e-9);
    }
}
