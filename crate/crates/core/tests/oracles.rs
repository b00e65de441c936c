//! Closed-form ridge probes on synthetic data, and an independent Pearson routine.

use mgnma_core::eval::{evaluate, pearson, PredictionSet};
use mgnma_core::features::{Dataset, Modality, Split, VideoRecord};
use mgnma_core::synth::{generate, SynthSpec};
use mgnma_core::video_level::video_target;
use mgnma_core::{Matrix, NUM_CLASSES};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const RIDGE: f64 = 1.0;

/// Feature row for one frame: the requested tracks side by side plus a bias.
fn features(v: &VideoRecord, t: usize, modalities: &[Modality]) -> Vec<f64> {
    let mut row = vec![1.0];
    for m in modalities {
        let track = v.track(m).unwrap();
        let r = if track.len() == 1 { 0 } else { t };
        row.extend(track.row(r).iter().map(|&x| x as f64));
    }
    row
}

fn design<'a>(videos: impl Iterator<Item = &'a VideoRecord>, modalities: &[Modality]) -> (DMatrix<f64>, DMatrix<f64>) {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for v in videos {
        for t in 0..v.frames() {
            xs.push(features(v, t, modalities));
            ys.push(v.labels().row(t).iter().map(|&y| y as f64).collect::<Vec<_>>());
        }
    }
    let p = xs[0].len();
    let x = DMatrix::from_fn(xs.len(), p, |r, c| xs[r][c]);
    let y = DMatrix::from_fn(ys.len(), NUM_CLASSES, |r, c| ys[r][c]);
    (x, y)
}

/// Fits ridge on the training split and returns the evaluator's overall
/// correlation on the validation split.
fn ridge_probe(ds: &Dataset, modalities: &[Modality]) -> f64 {
    let (x, y) = design(ds.split(Split::Train), modalities);
    let mut gram = x.transpose() * &x;
    for i in 1..gram.nrows() {
        gram[(i, i)] += RIDGE;
    }
    let w = gram.cholesky().expect("ridge system is positive definite").solve(&(x.transpose() * y));

    let mut preds = PredictionSet::new();
    for v in ds.split(Split::Validation) {
        let (xv, _) = design(std::iter::once(v), modalities);
        let p = xv * &w;
        let m = Matrix::from_fn(p.nrows(), p.ncols(), |r, c| p[(r, c)] as f32);
        preds.insert(v.video_id().to_owned(), m);
    }
    evaluate(&preds, ds.split(Split::Validation)).unwrap().overall
}

fn spec_with(strengths: &[(Modality, f64)], noise_floor: f64, seed: u64) -> SynthSpec {
    let mut spec = SynthSpec {
        seed,
        noise_floor,
        ..SynthSpec::small()
    };
    for s in spec.signal_strength.values_mut() {
        *s = 0.0;
    }
    for (m, s) in strengths {
        spec.signal_strength.insert(m.clone(), *s);
    }
    spec
}

fn all_features() -> Vec<Modality> {
    let mut ms = Modality::LADDER.to_vec();
    ms.push(Modality::Title);
    ms
}

#[test]
fn stronger_audio_signal_gives_the_better_single_modality_probe() {
    for seed in 0..3 {
        let ds = generate(&spec_with(&[(Modality::Image, 0.1), (Modality::Audio, 0.3)], 0.1, seed)).unwrap();
        let image = ridge_probe(&ds, &[Modality::Image]);
        let audio = ridge_probe(&ds, &[Modality::Audio]);
        assert!(audio > image, "seed {seed}: audio {audio} vs image {image}");
    }
}

#[test]
fn full_ridge_recovers_planted_signal() {
    for seed in 0..3 {
        let spec = SynthSpec {
            noise_floor: 0.2,
            seed,
            ..SynthSpec::small()
        };
        assert!(spec.signal_strength.values().sum::<f64>() >= 0.6);
        let r = ridge_probe(&generate(&spec).unwrap(), &all_features());
        assert!(r >= 0.5, "seed {seed}: ridge correlation {r}");
    }
}

#[test]
fn zero_signal_leaves_nothing_to_recover() {
    let mut total = 0.0;
    for seed in 0..3 {
        let ds = generate(&spec_with(&[], 0.1, seed)).unwrap();
        total += ridge_probe(&ds, &all_features());
    }
    let mean = total / 3.0;
    assert!(mean.abs() < 0.1, "mean no-signal correlation {mean}");
}

/// Textbook single-pass formula, sharing nothing with the library routine.
fn reference_pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mut sx, mut sy, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sx += a;
        sy += b;
        sxx += a * a;
        syy += b * b;
        sxy += a * b;
    }
    (n * sxy - sx * sy) / ((n * sxx - sx * sx).sqrt() * (n * syy - sy * sy).sqrt())
}

#[test]
fn pearson_agrees_with_reference_on_random_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..1000 {
        let t = rng.random_range(2..=500);
        let x: Vec<f64> = (0..t).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mix = rng.random_range(-1.0..1.0);
        let y: Vec<f64> = x.iter().map(|a| mix * a + rng.random_range(-1.0..1.0)).collect();
        let got = pearson(&x, &y).unwrap().r;
        let want = reference_pearson(&x, &y);
        assert!((got - want).abs() < 1e-6, "T={t}: {got} vs {want}");
    }
}

#[test]
fn pearson_textbook_cases() {
    let x = [1.0, 2.0, 3.0, 4.0];
    assert!((pearson(&x, &[2.0, 4.0, 6.0, 8.0]).unwrap().r - 1.0).abs() < 1e-12);
    assert!((pearson(&x, &[4.0, 3.0, 2.0, 1.0]).unwrap().r + 1.0).abs() < 1e-12);
    assert!((pearson(&x, &[1.0, 3.0, 2.0, 4.0]).unwrap().r - 0.8).abs() < 1e-12);
    let flat = pearson(&x, &[5.0; 4]).unwrap();
    assert!(flat.degenerate);
    assert_eq!(flat.r, 0.0);
}

#[test]
fn video_target_matches_direct_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let labels = Matrix::from_fn(7, NUM_CLASSES, |_, _| rng.random::<f32>());
    let mean = video_target(&labels);
    for c in 0..NUM_CLASSES {
        let direct = (0..7).map(|r| labels.row(r)[c] as f64).sum::<f64>() / 7.0;
        assert!((mean[c] as f64 - direct).abs() < 1e-6);
    }
    let alternating = Matrix::from_fn(6, NUM_CLASSES, |r, _| (r % 2) as f32);
    assert!(video_target(&alternating).iter().all(|&m| m == 0.5));
}
