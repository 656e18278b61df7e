use proptest::prelude::*;
use stma_core::caption::{preprocess_text, Stopwords, Vocabulary};
use stma_core::data::checkpoint::{decode_checkpoint, encode_checkpoint};
use stma_core::data::{Checkpoint, Sample, TrainingMeta};
use stma_core::tensor::matmul_plain;
use stma_core::train::{flip_horizontal, roc_auc, rotate, MetricsReport, Rotation};
use stma_core::vision::{extract_patches, reassemble_patches, PatchGrid};
use stma_core::{AblationMode, Graph, ModelConfig, StmaModel, Tensor};

fn tensor(shape: Vec<usize>, seed: u64) -> Tensor<f64> {
    let mut s = seed
        .wrapping_mul(6364136223846793005)
        .wrapping_add(1442695040888963407);
    Tensor::from_fn(shape, |_| {
        s = s
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        ((s >> 33) as f64 / (1u64 << 31) as f64) * 4.0 - 2.0
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_rows_are_distributions(rows in 1usize..6, cols in 1usize..9, seed in any::<u64>()) {
        let mut g = Graph::<f64>::new();
        let x = g.constant(tensor(vec![rows, cols], seed)).unwrap();
        let y = g.softmax(x, 1).unwrap();
        for r in g.value(y).data().chunks(cols) {
            prop_assert!(r.iter().all(|&p| p > 0.0 && p <= 1.0));
            prop_assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn matmul_is_associative(m in 1usize..5, k in 1usize..5, n in 1usize..5, p in 1usize..5, seed in any::<u64>()) {
        let a = tensor(vec![m, k], seed);
        let b = tensor(vec![k, n], seed ^ 1);
        let c = tensor(vec![n, p], seed ^ 2);
        let left = matmul_plain(&matmul_plain(&a, &b).unwrap(), &c).unwrap();
        let right = matmul_plain(&a, &matmul_plain(&b, &c).unwrap()).unwrap();
        for (l, r) in left.data().iter().zip(right.data()) {
            prop_assert!((l - r).abs() < 1e-10);
        }
    }

    #[test]
    fn sum_backward_is_all_ones(len in 1usize..40, seed in any::<u64>()) {
        let mut g = Graph::<f64>::new();
        let x = g.param(tensor(vec![len], seed)).unwrap();
        let s = g.sum(x).unwrap();
        g.backward(s).unwrap();
        prop_assert!(g.grad(x).unwrap().iter().all(|&d| d == 1.0));
    }

    #[test]
    fn patches_reassemble_exactly(rows in 1usize..5, cols in 1usize..5, patch in 1usize..5, seed in any::<u64>()) {
        let img = tensor(vec![3, rows * patch, cols * patch], seed);
        let grid = PatchGrid::new(3, rows * patch, cols * patch, patch).unwrap();
        let p = extract_patches(&img, patch).unwrap();
        prop_assert_eq!(p.shape(), &[rows * cols, 3 * patch * patch][..]);
        prop_assert_eq!(reassemble_patches(&p, grid).unwrap(), img);
    }

    #[test]
    fn flip_twice_and_four_quarter_turns_are_identity(side in 1usize..9, seed in any::<u64>()) {
        let img = tensor(vec![3, side, side], seed).cast::<f32>();
        prop_assert_eq!(&flip_horizontal(&flip_horizontal(&img)), &img);
        let mut r = img.clone();
        for _ in 0..4 {
            r = rotate(&r, Rotation::R90);
        }
        prop_assert_eq!(&r, &img);
        prop_assert_eq!(rotate(&rotate(&img, Rotation::R90), Rotation::R270), img);
    }

    #[test]
    fn metrics_stay_in_unit_range(labels in prop::collection::vec(0usize..2, 1..60), seed in any::<u64>()) {
        let scores: Vec<f64> = tensor(vec![labels.len()], seed).data().iter().map(|v| (v + 2.0) / 4.0).collect();
        let r = MetricsReport::from_scores(&scores, &labels);
        for v in [r.accuracy, r.precision, r.recall, r.f1] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        prop_assert_eq!(r.confusion.total(), labels.len());
        let both = labels.contains(&0) && labels.contains(&1);
        prop_assert_eq!(r.auc.is_some(), both);
        if let Some(a) = roc_auc(&scores, &labels) {
            // Flipping every score mirrors the curve.
            let flipped: Vec<f64> = scores.iter().map(|s| -s).collect();
            let b = roc_auc(&flipped, &labels).unwrap();
            prop_assert!((a + b - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn reprocessing_never_adds_tokens(words in prop::collection::vec("[A-Za-z]{1,8}", 0..12)) {
        let sw = Stopwords::default();
        let once = preprocess_text(&words.join(" "), &sw);
        prop_assert!(preprocess_text(&once.join(" "), &sw).len() <= once.len());
    }
}

#[test]
fn checkpoint_round_trip_for_every_mode() {
    let caption: Vec<String> = ["cat", "dog", "bird"].map(String::from).to_vec();
    let vocab = Vocabulary::build([caption.as_slice()], 4).unwrap();
    for mode in AblationMode::ALL {
        let mut cfg = ModelConfig::tiny(vocab.len());
        cfg.max_len = vocab.max_len();
        let cfg = cfg.with_ablation(mode);
        let model = StmaModel::new(cfg.clone(), 11).unwrap();
        let ckpt = Checkpoint {
            config: cfg,
            vocab: vocab.clone(),
            params: model.params().clone(),
            channel_mean: [0.25, 0.5, 0.75],
            meta: TrainingMeta {
                seed: 11,
                epoch: 3,
                val_accuracy: Some(0.5),
            },
        };
        let bytes = encode_checkpoint(&ckpt).unwrap();
        let back = decode_checkpoint(&bytes).unwrap();
        assert_eq!(encode_checkpoint(&back).unwrap(), bytes, "{mode}");
        let restored = StmaModel::from_parameters(back.config, back.params).unwrap();
        let mut ids = vec![0; restored.config().max_len];
        ids[..2].copy_from_slice(&[4, 5]);
        let sample = Sample {
            id: "s".into(),
            image: stma_core::model::blank_image(restored.config()),
            token_ids: ids,
            label: 1,
        };
        assert_eq!(
            model.predict(&sample).unwrap(),
            restored.predict(&sample).unwrap()
        );
    }
}
