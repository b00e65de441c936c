use mgnma_core::eval::{ensemble, evaluate, pearson, PredictionSet};
use mgnma_core::features::{
    align_sample, subsample_indices, uniform_subsample, FeatureTrack, Modality, Rate, Split, VideoRecord,
};
use mgnma_core::fusion::{FusionConfig, FusionKind, ModalFusion};
use mgnma_core::netvlad::{NetVlad, NetVladConfig};
use mgnma_core::nn::{bce_loss, sigmoid, softmax, Mode};
use mgnma_core::synth::{generate, SynthSpec};
use mgnma_core::{Matrix, NUM_CLASSES};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Matrix<f64> {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-scale..scale))
}

fn fusion(seed: u64, dims: &[usize], dropout: f64) -> (ModalFusion<f64>, ChaCha8Rng) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut f = ModalFusion::new(
        FusionConfig {
            dims: dims.to_vec(),
            fused_dim: 5,
            modal_dropout: dropout,
            kind: FusionKind::Attention,
        },
        &mut rng,
    )
    .unwrap();
    for w in f.attention.iter_mut() {
        w.value = random_matrix(&mut rng, 1, w.value.cols(), 1.0);
    }
    (f, rng)
}

fn inputs(rng: &mut ChaCha8Rng, batch: usize, dims: &[usize]) -> Vec<Matrix<f64>> {
    dims.iter().map(|&d| random_matrix(rng, batch, d, 2.0)).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pearson_affine_invariance(
        xs in prop::collection::vec(-100.0f64..100.0, 3..60),
        a in 0.01f64..50.0,
        b in -50.0f64..50.0,
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ys: Vec<f64> = xs.iter().map(|x| 0.3 * x + rng.random_range(-20.0..20.0)).collect();
        let base = pearson(&xs, &ys).unwrap();
        prop_assume!(!base.degenerate);
        let up: Vec<f64> = xs.iter().map(|x| a * x + b).collect();
        let down: Vec<f64> = xs.iter().map(|x| -a * x + b).collect();
        prop_assert!((pearson(&up, &ys).unwrap().r - base.r).abs() < 1e-6);
        prop_assert!((pearson(&down, &ys).unwrap().r + base.r).abs() < 1e-6);
        prop_assert!(base.r.abs() <= 1.0);
    }

    #[test]
    fn evaluate_ignores_video_order(seed in any::<u64>(), n in 2usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut videos = Vec::new();
        let mut preds = PredictionSet::new();
        for i in 0..n {
            let t = rng.random_range(2..12);
            let labels = Matrix::from_fn(t, NUM_CLASSES, |_, _| rng.random::<f32>());
            let track = FeatureTrack::new(Modality::Labels, Rate::FRAME, labels).unwrap();
            let id = format!("v{i}");
            preds.insert(id.clone(), Matrix::from_fn(t, NUM_CLASSES, |_, _| rng.random::<f32>()));
            videos.push(VideoRecord::new(id, Split::Validation, track, []).unwrap());
        }
        let forward = evaluate(&preds, &videos).unwrap();
        videos.reverse();
        prop_assert_eq!(forward, evaluate(&preds, &videos).unwrap());
    }

    #[test]
    fn ensemble_stays_in_open_unit_interval(seed in any::<u64>(), k in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sets: Vec<PredictionSet> = (0..k)
            .map(|_| {
                let mut s = PredictionSet::new();
                s.insert("v".into(), Matrix::from_fn(4, 3, |_, _| rng.random_range(1e-6f32..0.999_999)));
                s
            })
            .collect();
        let e = ensemble(&sets).unwrap();
        prop_assert!(e["v"].data().iter().all(|&p| p > 0.0 && p < 1.0));
    }

    #[test]
    fn sigmoid_and_bce_bounds(z in -200.0f64..200.0, y in 0.0f64..1.0) {
        let p = sigmoid(z);
        prop_assert!((0.0..=1.0).contains(&p));
        let (loss, grad) = bce_loss(&Matrix::filled(1, 1, p), &Matrix::filled(1, 1, y)).unwrap();
        prop_assert!(loss.is_finite() && loss >= 0.0);
        prop_assert!(grad.is_finite());
    }

    #[test]
    fn attention_rows_sum_to_one_and_ignore_score_shifts(seed in any::<u64>(), shift in -30.0f64..30.0) {
        let dims = [3, 1, 4];
        let (mut f, mut rng) = fusion(seed, &dims, 0.0);
        let x = inputs(&mut rng, 6, &dims);
        let out = f.forward(&x, Mode::Eval, &mut rng).unwrap();
        let alpha = out.alpha.unwrap();
        for b in 0..6 {
            let row = alpha.row(b);
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            prop_assert!(row.iter().all(|&a| a >= 0.0));
            let mut shifted: Vec<f64> = (0..dims.len())
                .map(|i| mgnma_core::tensor::dot(f.attention[i].value.row(0), x[i].row(b)) + shift)
                .collect();
            softmax(&mut shifted);
            for (a, s) in row.iter().zip(&shifted) {
                prop_assert!((a - s).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn dropped_modalities_contribute_nothing(seed in any::<u64>()) {
        let dims = [2, 3];
        let (mut f, mut rng) = fusion(seed, &dims, 0.5);
        let x = inputs(&mut rng, 8, &dims);
        let out = f.forward(&x, Mode::Train, &mut rng).unwrap();
        // the same sample with dropped modalities zeroed by hand, through eval mode
        let mut zeroed = x.clone();
        for b in 0..8 {
            for (i, m) in zeroed.iter_mut().enumerate() {
                if out.is_dropped(b, i, dims.len()) {
                    m.row_mut(b).iter_mut().for_each(|v| *v = 0.0);
                }
            }
        }
        let reference = f.forward(&zeroed, Mode::Eval, &mut rng).unwrap();
        prop_assert_eq!(out.fused, reference.fused);
    }

    #[test]
    fn zero_input_makes_its_attention_vector_irrelevant(seed in any::<u64>()) {
        let dims = [3, 2];
        let (mut f, mut rng) = fusion(seed, &dims, 0.0);
        let mut x = inputs(&mut rng, 4, &dims);
        x[1].fill(0.0);
        let a = f.forward(&x, Mode::Eval, &mut rng).unwrap().fused;
        f.attention[1].value = random_matrix(&mut rng, 1, 2, 10.0);
        let b = f.forward(&x, Mode::Eval, &mut rng).unwrap().fused;
        prop_assert_eq!(a, b);
    }

    #[test]
    fn train_equals_eval_without_dropout(seed in any::<u64>()) {
        let dims = [4, 2];
        let (mut f, mut rng) = fusion(seed, &dims, 0.0);
        let x = inputs(&mut rng, 5, &dims);
        let t = f.forward(&x, Mode::Train, &mut rng).unwrap().fused;
        let e = f.forward(&x, Mode::Eval, &mut rng).unwrap().fused;
        prop_assert_eq!(t, e);
    }

    #[test]
    fn netvlad_ignores_frame_order(seed in any::<u64>(), frames in 1usize..20) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pool = NetVlad::<f64>::new(NetVladConfig { dim: 5, clusters: 3, pooled_dim: 4 }, &mut rng).unwrap();
        let x = random_matrix(&mut rng, frames, 5, 3.0);
        let mut order: Vec<usize> = (0..frames).collect();
        for i in (1..frames).rev() {
            order.swap(i, rng.random_range(0..=i));
        }
        let rows: Vec<&[f64]> = order.iter().map(|&i| x.row(i)).collect();
        let shuffled = Matrix::from_rows(&rows).unwrap();
        let a = pool.forward(std::slice::from_ref(&x)).unwrap();
        let b = pool.forward(std::slice::from_ref(&shuffled)).unwrap();
        for (u, v) in a.data().iter().zip(b.data()) {
            prop_assert!((u - v).abs() < 1e-9);
        }
    }

    #[test]
    fn subsample_keeps_endpoints(len in 1usize..300, n in 1usize..120) {
        let idx = subsample_indices(len, n);
        prop_assert_eq!(idx.len(), n);
        prop_assert!(idx.iter().all(|&i| i < len));
        prop_assert!(idx.windows(2).all(|w| w[0] <= w[1]));
        if n >= 2 {
            prop_assert_eq!(idx[0], 0);
            prop_assert_eq!(idx[n - 1], len - 1);
        }
        let track = FeatureTrack::new(Modality::Image, Rate::FRAME, Matrix::from_fn(len, 2, |r, c| (r * 2 + c) as f32)).unwrap();
        prop_assert_eq!(uniform_subsample(&track, n).unwrap().len(), n);
    }

    #[test]
    fn subsample_matches_rounded_formula(len in 2usize..400, n in 2usize..100) {
        let idx = subsample_indices(len, n);
        for (i, &got) in idx.iter().enumerate() {
            let exact = i as f64 * (len - 1) as f64 / (n - 1) as f64;
            // round half up, in exact rational arithmetic
            let want = (2 * i * (len - 1) + (n - 1)) / (2 * (n - 1));
            prop_assert_eq!(got, want);
            prop_assert!((got as f64 - exact).abs() <= 0.5 + 1e-12);
        }
    }

    #[test]
    fn alignment_preserves_requested_order(seed in any::<u64>(), t in 1usize..30) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let labels = FeatureTrack::new(Modality::Labels, Rate::FRAME, Matrix::from_fn(t, NUM_CLASSES, |_, _| rng.random::<f32>())).unwrap();
        let image = FeatureTrack::new(Modality::Image, Rate::FRAME, Matrix::from_fn(t, 3, |_, _| rng.random::<f32>())).unwrap();
        let audio = FeatureTrack::new(Modality::Audio, Rate::FRAME, Matrix::from_fn(t, 2, |_, _| rng.random::<f32>())).unwrap();
        let theme = FeatureTrack::new(Modality::VideoTheme, Rate::new(6, t as u32).unwrap(), Matrix::from_fn(1, 4, |_, _| rng.random::<f32>())).unwrap();
        let record = VideoRecord::new("v", Split::Train, labels, [image, audio, theme]).unwrap();
        let frame = rng.random_range(0..t);
        let order = [Modality::VideoTheme, Modality::Image, Modality::Audio];
        let s = align_sample(&record, frame, &order).unwrap();
        prop_assert_eq!(s.features.len(), 3);
        prop_assert_eq!(s.features[0], record.track(&Modality::VideoTheme).unwrap().row(0));
        prop_assert_eq!(s.features[1], record.track(&Modality::Image).unwrap().row(frame));
        prop_assert_eq!(s.features[2], record.track(&Modality::Audio).unwrap().row(frame));
        prop_assert_eq!(s.labels, record.labels().row(frame));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn synthetic_labels_stay_in_unit_interval(
        seed in any::<u64>(),
        image in 0.0f64..0.35,
        audio in 0.0f64..0.35,
        noise in 0.0f64..2.0,
        salience in 0.0f64..3.0,
    ) {
        let mut spec = SynthSpec { seed, n_videos: 3, frames_per_video: 40, noise_floor: noise, salience, ..SynthSpec::small() };
        spec.signal_strength.insert(Modality::Image, image);
        spec.signal_strength.insert(Modality::Audio, audio);
        spec.signal_strength.insert(Modality::Subtitle, 0.0);
        let ds = generate(&spec).unwrap();
        for v in &ds.videos {
            prop_assert!(v.labels().values().data().iter().all(|&y| (0.0..=1.0).contains(&y)));
        }
        prop_assert_eq!(ds, generate(&spec).unwrap());
    }
}
