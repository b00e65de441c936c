use std::fs;

use mgnma::checkpoint::{self, AnyModel};
use mgnma::format::{decode, decode_track, encode, encode_track, read_track, write_track, RawTensor};
use mgnma::manifest::{load_dataset, write_dataset, Manifest};
use mgnma::Error;
use mgnma_core::features::{FeatureTrack, Modality, Rate};
use mgnma_core::synth::{generate, SynthSpec};
use mgnma_core::trainer::{train, TrainConfig};
use mgnma_core::Matrix;
use proptest::prelude::*;

fn modality() -> impl Strategy<Value = Modality> {
    prop_oneof![
        Just(Modality::Image),
        Just(Modality::Audio),
        Just(Modality::Action),
        Just(Modality::Subtitle),
        Just(Modality::Title),
        Just(Modality::VideoTheme),
        "[a-z][a-z0-9_]{0,11}".prop_map(|s| s.parse::<Modality>().unwrap()),
    ]
}

fn feature_track() -> impl Strategy<Value = FeatureTrack> {
    (modality(), 1usize..20, 1usize..12, 1u32..10, 1u32..10).prop_flat_map(|(m, rows, cols, num, den)| {
        prop::collection::vec(-1e6f32..1e6, rows * cols).prop_map(move |data| {
            FeatureTrack::new(m.clone(), Rate::new(num, den).unwrap(), Matrix::new(rows, cols, data).unwrap()).unwrap()
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn tracks_round_trip_bit_exactly(track in feature_track()) {
        let bytes = encode_track(&track).unwrap();
        let back = decode_track(&bytes).unwrap();
        prop_assert_eq!(back.modality(), track.modality());
        prop_assert_eq!(back.rate(), track.rate());
        let a: Vec<u32> = back.values().data().iter().map(|x| x.to_bits()).collect();
        let b: Vec<u32> = track.values().data().iter().map(|x| x.to_bits()).collect();
        prop_assert_eq!(a, b);
        prop_assert_eq!(encode_track(&back).unwrap(), bytes);
    }

    #[test]
    fn every_strict_prefix_is_truncated(track in feature_track(), cut in 0.0f64..1.0) {
        let bytes = encode_track(&track).unwrap();
        let len = (cut * bytes.len() as f64) as usize;
        let truncated = matches!(decode(&bytes[..len]), Err(Error::Truncated { .. }));
        prop_assert!(truncated);
    }
}

#[test]
fn documented_errors_are_distinct() {
    let labels = FeatureTrack::new(Modality::Labels, Rate::FRAME, Matrix::filled(1, 15, 0.5)).unwrap();
    let good = encode_track(&labels).unwrap();
    assert_eq!(good.len(), 90);

    let mut bad_magic = good.clone();
    bad_magic[..4].copy_from_slice(b"MGF2");
    assert!(matches!(decode(&bad_magic), Err(Error::BadMagic { found }) if &found == b"MGF2"));

    assert!(matches!(decode(&good[..3]), Err(Error::Truncated { what: "magic", .. })));
    assert!(matches!(decode(&good[..6]), Err(Error::Truncated { what: "header", .. })));
    assert!(matches!(decode(&good[..10]), Err(Error::Truncated { what: "name", .. })));
    assert!(matches!(decode(&good[..20]), Err(Error::Truncated { what: "header", .. })));
    assert!(matches!(decode(&good[..89]), Err(Error::Truncated { what: "payload", .. })));

    let mut extra = good.clone();
    extra.push(0);
    assert!(matches!(decode(&extra), Err(Error::TrailingBytes { extra: 1 })));

    let mut nan = good.clone();
    let at = good.len() - 4 * 15 + 4 * 3;
    nan[at..at + 4].copy_from_slice(&f32::NAN.to_le_bytes());
    assert!(matches!(decode(&nan), Err(Error::NonFinite { row: 0, col: 3 })));

    let mut high = good.clone();
    high[at..at + 4].copy_from_slice(&1.5f32.to_le_bytes());
    assert!(matches!(decode_track(&high), Err(Error::LabelOutOfRange { row: 0, col: 3, .. })));
    // out-of-range values are fine outside probability tracks
    let raw = RawTensor {
        name: "image".into(),
        rate: (6, 1),
        values: Matrix::filled(2, 2, 1.5),
    };
    assert!(decode_track(&encode(&raw)).is_ok());
}

#[test]
fn nine_of_ten_declared_rows_is_truncation() {
    let track = FeatureTrack::new(Modality::Audio, Rate::FRAME, Matrix::filled(10, 4, 0.25)).unwrap();
    let bytes = encode_track(&track).unwrap();
    let err = decode(&bytes[..bytes.len() - 16]).unwrap_err();
    assert!(matches!(err, Error::Truncated { what: "payload", .. }), "{err}");
}

#[test]
fn files_round_trip_and_missing_files_are_not_found() {
    let dir = tempfile::tempdir().unwrap();
    let track = FeatureTrack::new(Modality::Subtitle, Rate::FRAME, Matrix::from_fn(5, 3, |r, c| (r * 3 + c) as f32)).unwrap();
    let path = dir.path().join("nested/deeper/subtitle.mgf");
    write_track(&track, &path).unwrap();
    assert_eq!(read_track(&path).unwrap(), track);
    assert!(matches!(read_track(&dir.path().join("absent.mgf")), Err(Error::NotFound { .. })));
}

#[test]
fn datasets_round_trip_through_a_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SynthSpec {
        n_videos: 4,
        frames_per_video: 20,
        ..SynthSpec::small()
    };
    let ds = generate(&spec).unwrap();
    let manifest = write_dataset(&ds, dir.path()).unwrap();
    let (m, back) = load_dataset(&manifest).unwrap();
    assert_eq!(back.videos, ds.videos);
    assert_eq!(m.entries.len(), 4);
    assert!(m.entries.iter().all(|e| e.tracks.contains_key("labels")));
}

#[test]
fn manifest_problems_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let ds = generate(&SynthSpec {
        n_videos: 4,
        frames_per_video: 20,
        ..SynthSpec::small()
    })
    .unwrap();
    let path = write_dataset(&ds, dir.path()).unwrap();
    let original = Manifest::load(&path).unwrap();

    let mut wrong_dim = original.clone();
    wrong_dim.entries[0].tracks.get_mut("image").unwrap().dim += 1;
    fs::write(&path, serde_json::to_string(&wrong_dim).unwrap()).unwrap();
    assert!(matches!(load_dataset(&path), Err(Error::Manifest { .. })));

    let mut no_labels = original.clone();
    no_labels.entries[0].tracks.remove("labels");
    fs::write(&path, serde_json::to_string(&no_labels).unwrap()).unwrap();
    assert!(matches!(Manifest::load(&path), Err(Error::Manifest { .. })));

    let mut bad_id = original.clone();
    bad_id.entries[0].video_id = "../escape".into();
    fs::write(&path, serde_json::to_string(&bad_id).unwrap()).unwrap();
    assert!(matches!(Manifest::load(&path), Err(Error::Manifest { .. })));

    original.save(&path).unwrap();
    fs::remove_file(dir.path().join("videos").join(&original.entries[1].video_id).join("audio.mgf")).unwrap();
    assert!(matches!(Manifest::load(&path), Err(Error::NotFound { .. })));

    assert!(matches!(load_dataset(&dir.path().join("nope.json")), Err(Error::NotFound { .. })));
}

#[test]
fn checkpoints_restore_model_and_optimizer() {
    let ds = generate(&SynthSpec::small()).unwrap();
    let cfg = TrainConfig {
        epochs: 2,
        ..TrainConfig::small()
    };
    let outcome = train(&ds, &cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let mut model = AnyModel::Frame(outcome.model);
    let index = checkpoint::save(dir.path(), &mut model, Some(&outcome.optimizer)).unwrap();
    assert!(index.optimizer.is_some());

    let restored = checkpoint::load(dir.path()).unwrap();
    assert_eq!(restored.optimizer.as_ref(), Some(&outcome.optimizer));
    let (AnyModel::Frame(mut a), AnyModel::Frame(mut b)) = (model, restored.model) else {
        panic!("frame checkpoint restored as a different kind");
    };
    let val: Vec<_> = ds.split(mgnma_core::features::Split::Validation).collect();
    let pa = mgnma_core::trainer::predict(&mut a, val.iter().copied()).unwrap();
    let pb = mgnma_core::trainer::predict(&mut b, val.iter().copied()).unwrap();
    assert_eq!(pa, pb);

    // a second save of the restored state is byte-identical
    let again = tempfile::tempdir().unwrap();
    checkpoint::save(again.path(), &mut AnyModel::Frame(b), restored.optimizer.as_ref()).unwrap();
    for entry in &index.tensors {
        let x = fs::read(dir.path().join(&entry.file)).unwrap();
        let y = fs::read(again.path().join(&entry.file)).unwrap();
        assert_eq!(x, y, "{}", entry.name);
    }
}

#[test]
fn checkpoint_shape_mismatch_is_rejected() {
    let ds = generate(&SynthSpec::small()).unwrap();
    let outcome = train(&ds, &TrainConfig { epochs: 1, ..TrainConfig::small() }).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let index = checkpoint::save(dir.path(), &mut AnyModel::Frame(outcome.model), None).unwrap();
    let victim = &index.tensors[0];
    let raw = RawTensor {
        name: victim.name.clone(),
        rate: (1, 1),
        values: Matrix::zeros(victim.shape[0] + 1, victim.shape[1]),
    };
    fs::write(dir.path().join(&victim.file), encode(&raw)).unwrap();
    assert!(matches!(checkpoint::load(dir.path()), Err(Error::Checkpoint(_))));
}
