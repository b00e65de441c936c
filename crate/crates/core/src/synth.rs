//! Synthetic datasets with planted, modality-specific signal.
//!
//! Every modality encodes its own latent process: image and audio carry
//! fast per-frame latents, action and subtitle carry slow latents smoothed
//! over ±16 frames, and the single-row video theme and title tracks carry a
//! per-video theme vector drawn around one of a few genre prototypes. A
//! label logit is the sum of
//!
//! * `sqrt(s_m) · L_m u_m(t)` for each frame-aligned modality,
//! * a genre-dependent read-out of the fast latents scaled by the theme
//!   strength, which only a model that sees the theme can resolve,
//! * a per-video offset derived from the theme,
//! * unexplained noise `sqrt(1 − Σ s) ε` and noise-floor noise,
//!
//! squashed as `y = (1 + tanh(κ z)) / 2`. Optionally each frame also draws
//! a salience logit per frame-aligned modality; a softmax over those logits
//! reweights the modalities' contributions on that frame, and each track
//! encodes its own salience alongside its latent. Each track is an affine map of its
//! latent followed by pure-noise distractor dimensions.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{Dataset, FeatureTrack, Modality, Rate, Split, VideoRecord};
use crate::tensor::Matrix;
use crate::NUM_CLASSES;

/// Half-width of the moving average that produces slow latents.
pub const CLIP_RADIUS: usize = 16;
/// Slope of the label squash.
pub const SQUASH: f64 = 0.5;
pub const GENRES: usize = 3;
const THEME_SPREAD: f64 = 0.3;

/// Modalities with a planted signal strength.
pub const SIGNAL_MODALITIES: [Modality; 5] = Modality::LADDER;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub n_videos: usize,
    pub frames_per_video: usize,
    pub seed: u64,
    /// Track widths; modalities not listed use their reference dimension.
    pub dims: BTreeMap<Modality, usize>,
    /// Fraction of label-logit variance explained by each modality.
    pub signal_strength: BTreeMap<Modality, f64>,
    pub noise_floor: f64,
    /// Share of videos (rounded) placed in the validation split; the rest train.
    pub validation_fraction: f64,
    /// Spread of the per-frame salience logits; 0 makes every modality
    /// equally relevant on every frame.
    pub salience: f64,
}

impl Default for SynthSpec {
    /// Reference dimensions with the small preset's sizes and strengths.
    fn default() -> Self {
        let dims = [
            Modality::Image,
            Modality::Audio,
            Modality::Action,
            Modality::Subtitle,
            Modality::VideoTheme,
            Modality::Title,
        ]
        .into_iter()
        .map(|m| {
            let d = m.canonical_dim().unwrap_or(1);
            (m, d)
        })
        .collect();
        Self {
            dims,
            ..Self::small()
        }
    }
}

impl SynthSpec {
    /// 40 videos × 120 frames with 16/8/8/8/16-d tracks and an 8-d title.
    pub fn small() -> Self {
        let dims = [
            (Modality::Image, 16),
            (Modality::Audio, 8),
            (Modality::Action, 8),
            (Modality::Subtitle, 8),
            (Modality::VideoTheme, 16),
            (Modality::Title, 8),
        ]
        .into_iter()
        .collect();
        let signal_strength = [
            (Modality::Image, 0.10),
            (Modality::Audio, 0.15),
            (Modality::Action, 0.15),
            (Modality::Subtitle, 0.20),
            (Modality::VideoTheme, 0.15),
        ]
        .into_iter()
        .collect();
        Self {
            n_videos: 40,
            frames_per_video: 120,
            seed: 0,
            dims,
            signal_strength,
            noise_floor: 0.1,
            validation_fraction: 0.25,
            salience: 1.5,
        }
    }

    pub fn dim(&self, modality: &Modality) -> usize {
        self.dims
            .get(modality)
            .copied()
            .or_else(|| modality.canonical_dim())
            .unwrap_or(1)
    }

    pub fn strength(&self, modality: &Modality) -> f64 {
        self.signal_strength.get(modality).copied().unwrap_or(0.0)
    }

    pub fn validation_videos(&self) -> usize {
        libm::round(self.n_videos as f64 * self.validation_fraction) as usize
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.n_videos == 0 {
            return bad(String::from("n_videos must be at least 1"));
        }
        if self.frames_per_video < 2 {
            return bad(String::from("frames_per_video must be at least 2"));
        }
        for (m, &d) in &self.dims {
            if d == 0 {
                return bad(format!("dim of {m} must be at least 1"));
            }
        }
        let mut total = 0.0;
        for (m, &s) in &self.signal_strength {
            if !SIGNAL_MODALITIES.contains(m) {
                return bad(format!("{m} carries no planted signal"));
            }
            if !(s >= 0.0 && s.is_finite()) {
                return bad(format!("signal strength of {m} must be non-negative"));
            }
            total += s;
        }
        if total > 1.0 + 1e-9 {
            return bad(format!("signal strengths sum to {total}, above 1"));
        }
        if !(self.noise_floor >= 0.0 && self.noise_floor.is_finite()) {
            return bad(String::from("noise_floor must be non-negative"));
        }
        if !(self.salience >= 0.0 && self.salience.is_finite()) {
            return bad(String::from("salience must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.validation_fraction) {
            return bad(String::from("validation_fraction must lie in [0, 1]"));
        }
        Ok(())
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Matrix<f64> {
    Matrix::from_fn(rows, cols, |_, _| scale * normal(rng))
}

/// Gaussian matrix whose rows have unit Euclidean norm.
fn unit_rows(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix<f64> {
    let mut m = gaussian(rng, rows, cols, 1.0);
    for r in 0..rows {
        let row = m.row_mut(r);
        let norm = libm::sqrt(row.iter().map(|v| v * v).sum::<f64>()).max(1e-12);
        row.iter_mut().for_each(|v| *v /= norm);
    }
    m
}

fn latent_dim(dim: usize) -> usize {
    (dim / 2).max(1)
}

/// Affine encoding of a latent into the leading columns of a track.
struct Encoder {
    mix: Matrix<f64>,
    bias: Vec<f64>,
    dim: usize,
}

impl Encoder {
    fn new(rng: &mut ChaCha8Rng, latent: usize, dim: usize) -> Self {
        let signal = latent.min(dim);
        Self {
            mix: gaussian(rng, signal, latent, 1.0 / libm::sqrt(latent as f64)),
            bias: (0..signal).map(|_| 0.5 * normal(rng)).collect(),
            dim,
        }
    }

    /// `[A u + b ; distractors]` for every row of `latents`.
    fn encode(&self, rng: &mut ChaCha8Rng, latents: &Matrix<f64>) -> Matrix<f32> {
        let signal = self.mix.rows();
        Matrix::from_fn(latents.rows(), self.dim, |t, j| {
            let v = if j < signal {
                crate::tensor::dot(self.mix.row(j), latents.row(t)) + self.bias[j]
            } else {
                normal(rng)
            };
            v as f32
        })
    }
}

/// Parameters shared by every video.
struct World {
    frame_modalities: Vec<(Modality, usize, bool)>,
    encoders: BTreeMap<Modality, Encoder>,
    loadings: BTreeMap<Modality, Matrix<f64>>,
    prototypes: Matrix<f64>,
    interaction: Vec<Matrix<f64>>,
    offset: Matrix<f64>,
    theme_dim: usize,
    fast_dim: usize,
    /// Rescales softmax salience gains to unit mean square.
    gain_scale: f64,
}

impl World {
    fn new(spec: &SynthSpec) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(0);
        let frame_modalities: Vec<_> = [
            (Modality::Image, false),
            (Modality::Audio, false),
            (Modality::Action, true),
            (Modality::Subtitle, true),
        ]
        .into_iter()
        .map(|(m, slow)| {
            let k = latent_dim(spec.dim(&m));
            (m, k, slow)
        })
        .collect();
        let theme_dim = latent_dim(spec.dim(&Modality::VideoTheme));
        let mut encoders = BTreeMap::new();
        let mut loadings = BTreeMap::new();
        let salient = usize::from(spec.salience > 0.0);
        for (m, k, _) in &frame_modalities {
            encoders.insert(m.clone(), Encoder::new(&mut rng, *k + salient, spec.dim(m)));
            loadings.insert(m.clone(), unit_rows(&mut rng, NUM_CLASSES, *k));
        }
        for m in [Modality::VideoTheme, Modality::Title] {
            encoders.insert(m.clone(), Encoder::new(&mut rng, theme_dim, spec.dim(&m)));
        }
        let fast_dim = frame_modalities.iter().filter(|f| !f.2).map(|f| f.1).sum();
        let prototypes = gaussian(&mut rng, GENRES, theme_dim, 1.0);
        let interaction = (0..GENRES).map(|_| unit_rows(&mut rng, NUM_CLASSES, fast_dim)).collect();
        let offset = unit_rows(&mut rng, NUM_CLASSES, theme_dim);
        let gain_scale = if spec.salience > 0.0 {
            let n = frame_modalities.len();
            let draws = 20_000;
            let mut square = 0.0;
            for _ in 0..draws {
                let logits: Vec<f64> = (0..n).map(|_| spec.salience * normal(&mut rng)).collect();
                square += softmax(&logits).iter().map(|g| g * g).sum::<f64>() / n as f64;
            }
            libm::sqrt(draws as f64 / square)
        } else {
            1.0
        };
        Self {
            frame_modalities,
            encoders,
            loadings,
            prototypes,
            interaction,
            offset,
            theme_dim,
            fast_dim,
            gain_scale,
        }
    }

    /// Per-frame weight of each frame-aligned modality's contribution.
    fn gains(&self, spec: &SynthSpec, salience: &Matrix<f64>) -> Matrix<f64> {
        if spec.salience == 0.0 {
            return Matrix::filled(salience.rows(), salience.cols(), 1.0);
        }
        let mut out = Matrix::zeros(salience.rows(), salience.cols());
        for t in 0..salience.rows() {
            let logits: Vec<f64> = salience.row(t).iter().map(|e| spec.salience * e).collect();
            for (o, g) in out.row_mut(t).iter_mut().zip(softmax(&logits)) {
                *o = self.gain_scale * g;
            }
        }
        out
    }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = logits.iter().map(|l| libm::exp(l - max)).collect();
    let total: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / total).collect()
}

/// `T×k` latents: iid standard normal, or a unit-variance moving average.
fn latents(rng: &mut ChaCha8Rng, frames: usize, k: usize, slow: bool) -> Matrix<f64> {
    if !slow {
        return gaussian(rng, frames, k, 1.0);
    }
    let width = 2 * CLIP_RADIUS + 1;
    let raw = gaussian(rng, frames + 2 * CLIP_RADIUS, k, 1.0);
    let norm = libm::sqrt(width as f64);
    Matrix::from_fn(frames, k, |t, j| (t..t + width).map(|s| raw.get(s, j)).sum::<f64>() / norm)
}

fn generate_video(spec: &SynthSpec, world: &World, index: usize, split: Split) -> Result<VideoRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index as u64 + 1);
    let frames = spec.frames_per_video;

    let genre = index % GENRES;
    let theme: Vec<f64> = (0..world.theme_dim)
        .map(|j| world.prototypes.get(genre, j) + THEME_SPREAD * normal(&mut rng))
        .collect();

    let n_frame = world.frame_modalities.len();
    let all_latents: Vec<Matrix<f64>> = world
        .frame_modalities
        .iter()
        .map(|(_, k, slow)| latents(&mut rng, frames, *k, *slow))
        .collect();
    let salience = gaussian(&mut rng, frames, n_frame, 1.0);
    let gains = world.gains(spec, &salience);

    let mut z = Matrix::<f64>::zeros(frames, NUM_CLASSES);
    let mut fast = Matrix::<f64>::zeros(frames, world.fast_dim);
    let mut fast_col = 0;
    let mut tracks = Vec::new();
    for (i, ((m, k, slow), u)) in world.frame_modalities.iter().zip(&all_latents).enumerate() {
        let weight = libm::sqrt(spec.strength(m));
        let loading = &world.loadings[m];
        for t in 0..frames {
            let w = weight * gains.get(t, i);
            for c in 0..NUM_CLASSES {
                let v = z.get(t, c) + w * crate::tensor::dot(loading.row(c), u.row(t));
                z.set(t, c, v);
            }
            if !slow {
                fast.row_mut(t)[fast_col..fast_col + k].copy_from_slice(u.row(t));
            }
        }
        if !slow {
            fast_col += k;
        }
        let encoded = if spec.salience > 0.0 {
            Matrix::from_fn(frames, k + 1, |t, j| if j < *k { u.get(t, j) } else { salience.get(t, i) })
        } else {
            u.clone()
        };
        let values = world.encoders[m].encode(&mut rng, &encoded);
        tracks.push(FeatureTrack::new(m.clone(), Rate::FRAME, values)?);
    }

    let theme_weight = libm::sqrt(spec.strength(&Modality::VideoTheme));
    let interaction = &world.interaction[genre];
    let offsets: Vec<f64> = (0..NUM_CLASSES)
        .map(|c| theme_weight * crate::tensor::dot(world.offset.row(c), &theme))
        .collect();
    let explained: f64 = spec.signal_strength.values().sum();
    let residual = libm::sqrt((1.0 - explained).max(0.0));
    let labels = Matrix::from_fn(frames, NUM_CLASSES, |t, c| {
        let mixed = theme_weight * crate::tensor::dot(interaction.row(c), fast.row(t));
        let logit = z.get(t, c)
            + mixed
            + offsets[c]
            + residual * normal(&mut rng)
            + spec.noise_floor * normal(&mut rng);
        (0.5 + 0.5 * libm::tanh(SQUASH * logit)) as f32
    });

    let theme_row = Matrix::new(1, world.theme_dim, theme)?;
    let video_rate = Rate::new(Rate::FRAME.num, frames as u32 * Rate::FRAME.den)?;
    for m in [Modality::VideoTheme, Modality::Title] {
        let values = world.encoders[&m].encode(&mut rng, &theme_row);
        tracks.push(FeatureTrack::new(m, video_rate, values)?);
    }

    let labels = FeatureTrack::new(Modality::Labels, Rate::FRAME, labels)?;
    VideoRecord::new(video_id(index), split, labels, tracks)
}

pub fn video_id(index: usize) -> String {
    format!("synth_{index:05}")
}

/// Builds the dataset. Videos are independent given the seed and their index.
pub fn generate(spec: &SynthSpec) -> Result<Dataset> {
    spec.validate()?;
    let world = World::new(spec);
    let n_val = spec.validation_videos();
    let n_train = spec.n_videos - n_val;
    let videos = (0..spec.n_videos)
        .map(|i| {
            let split = if i < n_train { Split::Train } else { Split::Validation };
            generate_video(spec, &world, i, split)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        name: format!("synthetic_{}", spec.seed),
        videos,
    })
}

/// Genre index of a generated video.
pub fn genre_of(index: usize) -> usize {
    index % GENRES
}
