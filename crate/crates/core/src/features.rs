//! Feature tracks, video records and frame alignment.
//!
//! A [`FeatureTrack`] is one modality's `T×dim` embedding sequence for one
//! video. Frame-aligned modalities share the label track's length; tracks at
//! other rates (a single-row video theme, say) are mapped onto label frames
//! by nearest timestamp.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Matrix;
use crate::NUM_CLASSES;

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Modality {
    Image,
    Audio,
    Action,
    Subtitle,
    Title,
    VideoTheme,
    Labels,
    Prediction,
    Custom(String),
}

impl Modality {
    /// The frame-level model's full modality ladder, in accumulation order.
    pub const LADDER: [Modality; 5] = [
        Modality::Image,
        Modality::Audio,
        Modality::Action,
        Modality::Subtitle,
        Modality::VideoTheme,
    ];

    pub fn as_str(&self) -> &str {
        match self {
            Modality::Image => "image",
            Modality::Audio => "audio",
            Modality::Action => "action",
            Modality::Subtitle => "subtitle",
            Modality::Title => "title",
            Modality::VideoTheme => "video_theme",
            Modality::Labels => "labels",
            Modality::Prediction => "prediction",
            Modality::Custom(name) => name,
        }
    }

    /// Dimension produced by the reference extractor for this modality.
    pub fn canonical_dim(&self) -> Option<usize> {
        match self {
            Modality::Image => Some(1536),
            Modality::Audio => Some(128),
            Modality::Action => Some(512),
            Modality::Subtitle | Modality::Title => Some(768),
            Modality::VideoTheme => Some(1024),
            Modality::Labels | Modality::Prediction => Some(NUM_CLASSES),
            Modality::Custom(_) => None,
        }
    }

    /// Tracks sampled at the label rate, one row per annotated frame.
    pub fn is_frame_aligned(&self) -> bool {
        matches!(
            self,
            Modality::Image | Modality::Audio | Modality::Action | Modality::Subtitle | Modality::Labels
        )
    }

    /// Tracks whose values are probabilities in `[0, 1]`.
    pub fn is_probability(&self) -> bool {
        matches!(self, Modality::Labels | Modality::Prediction)
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "image" => Modality::Image,
            "audio" => Modality::Audio,
            "action" => Modality::Action,
            "subtitle" => Modality::Subtitle,
            "title" => Modality::Title,
            "video_theme" => Modality::VideoTheme,
            "labels" => Modality::Labels,
            "prediction" => Modality::Prediction,
            other => {
                let valid = !other.is_empty()
                    && other.len() <= 64
                    && other
                        .bytes()
                        .all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'_');
                if !valid {
                    return Err(Error::InvalidModality(other.to_string()));
                }
                Modality::Custom(other.to_string())
            }
        })
    }
}

impl Serialize for Modality {
    fn serialize<S: serde::Serializer>(&self, s: S) -> core::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for Modality {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> core::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Sampling rate as a positive rational number of rows per second.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Rate {
    pub num: u32,
    pub den: u32,
}

impl Rate {
    /// The annotation rate: 6 frames per second.
    pub const FRAME: Rate = Rate { num: 6, den: 1 };

    pub fn new(num: u32, den: u32) -> Result<Self> {
        if num == 0 || den == 0 {
            return Err(Error::InvalidRate { num, den });
        }
        Ok(Self { num, den })
    }

    /// Row of a track at `self` nearest to row `index` of a track at `reference`.
    /// Exact ties round down.
    pub fn nearest_row(self, reference: Rate, index: usize) -> usize {
        // index / reference seconds, times self rows per second
        let n = index as u128 * self.num as u128 * reference.den as u128;
        let d = self.den as u128 * reference.num as u128;
        let q = n / d;
        let rem = n % d;
        (if 2 * rem > d { q + 1 } else { q }) as usize
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureTrack {
    modality: Modality,
    rate: Rate,
    values: Matrix<f32>,
}

impl FeatureTrack {
    pub fn new(modality: Modality, rate: Rate, values: Matrix<f32>) -> Result<Self> {
        let track = Self { modality, rate, values };
        track.validate()?;
        Ok(track)
    }

    pub fn validate(&self) -> Result<()> {
        Rate::new(self.rate.num, self.rate.den)?;
        if self.values.rows() == 0 || self.values.cols() == 0 {
            return Err(Error::EmptyTrack);
        }
        if !self.values.is_finite() {
            return Err(Error::NonFinite("feature track"));
        }
        if self.modality == Modality::Labels && self.values.cols() != NUM_CLASSES {
            return Err(Error::ShapeMismatch {
                what: "label track",
                expected: (self.values.rows(), NUM_CLASSES),
                found: self.values.shape(),
            });
        }
        if self.modality.is_probability() {
            for r in 0..self.values.rows() {
                for (c, &v) in self.values.row(r).iter().enumerate() {
                    if !(0.0..=1.0).contains(&v) {
                        return Err(Error::LabelOutOfRange { row: r, col: c, value: v });
                    }
                }
            }
        }
        Ok(())
    }

    pub fn modality(&self) -> &Modality {
        &self.modality
    }

    pub fn rate(&self) -> Rate {
        self.rate
    }

    pub fn values(&self) -> &Matrix<f32> {
        &self.values
    }

    pub fn into_values(self) -> Matrix<f32> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.values.cols()
    }

    pub fn row(&self, t: usize) -> &[f32] {
        self.values.row(t)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "validation" | "val" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidConfig(alloc::format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VideoRecord {
    video_id: String,
    split: Split,
    tracks: BTreeMap<Modality, FeatureTrack>,
    labels: FeatureTrack,
}

impl VideoRecord {
    pub fn new(
        video_id: impl Into<String>,
        split: Split,
        labels: FeatureTrack,
        tracks: impl IntoIterator<Item = FeatureTrack>,
    ) -> Result<Self> {
        if labels.modality() != &Modality::Labels {
            return Err(Error::InvalidModality(labels.modality().to_string()));
        }
        let mut record = Self {
            video_id: video_id.into(),
            split,
            tracks: BTreeMap::new(),
            labels,
        };
        for track in tracks {
            record.insert_track(track)?;
        }
        Ok(record)
    }

    /// Adds or replaces a feature track.
    pub fn insert_track(&mut self, track: FeatureTrack) -> Result<()> {
        if track.modality() == &Modality::Labels {
            return Err(Error::InvalidModality(String::from("labels")));
        }
        if track.modality().is_frame_aligned() && track.len() != self.frames() {
            return Err(Error::ShapeMismatch {
                what: "frame-aligned track length",
                expected: (self.frames(), track.dim()),
                found: (track.len(), track.dim()),
            });
        }
        self.tracks.insert(track.modality().clone(), track);
        Ok(())
    }

    pub fn video_id(&self) -> &str {
        &self.video_id
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn labels(&self) -> &FeatureTrack {
        &self.labels
    }

    pub fn frames(&self) -> usize {
        self.labels.len()
    }

    pub fn tracks(&self) -> impl Iterator<Item = &FeatureTrack> {
        self.tracks.values()
    }

    pub fn track(&self, modality: &Modality) -> Result<&FeatureTrack> {
        if modality == &Modality::Labels {
            return Ok(&self.labels);
        }
        self.tracks
            .get(modality)
            .ok_or_else(|| Error::MissingModality(modality.to_string()))
    }
}

/// Modal vectors of one frame in the requested order, plus its label row.
#[derive(Clone, Debug, PartialEq)]
pub struct AlignedSample<'a> {
    pub features: Vec<&'a [f32]>,
    pub labels: &'a [f32],
}

pub fn align_sample<'a>(
    record: &'a VideoRecord,
    frame_index: usize,
    modalities: &[Modality],
) -> Result<AlignedSample<'a>> {
    let frames = record.frames();
    if frame_index >= frames {
        return Err(Error::FrameOutOfRange { index: frame_index, len: frames });
    }
    let reference = record.labels.rate();
    let features = modalities
        .iter()
        .map(|m| {
            let track = record.track(m)?;
            let row = if track.rate() == reference && track.len() == frames {
                frame_index
            } else {
                track.rate().nearest_row(reference, frame_index).min(track.len() - 1)
            };
            Ok(track.row(row))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AlignedSample {
        features,
        labels: record.labels.row(frame_index),
    })
}

/// Row indices `round(i·(len−1)/(n−1))`, or the middle row when `n = 1`.
pub fn subsample_indices(len: usize, n: usize) -> Vec<usize> {
    let last = len.saturating_sub(1);
    if n == 1 {
        return alloc::vec![last.div_ceil(2)];
    }
    (0..n)
        .map(|i| (2 * i * last + (n - 1)) / (2 * (n - 1)))
        .collect()
}

/// `n` rows spread uniformly over the track, repeating rows when `T < n`.
pub fn uniform_subsample(track: &FeatureTrack, n: usize) -> Result<FeatureTrack> {
    if n == 0 {
        return Err(Error::InvalidConfig(String::from("subsample size must be at least 1")));
    }
    let rows: Vec<&[f32]> = subsample_indices(track.len(), n)
        .into_iter()
        .map(|i| track.row(i))
        .collect();
    FeatureTrack::new(track.modality.clone(), track.rate, Matrix::from_rows(&rows)?)
}

/// An in-memory collection of videos.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub videos: Vec<VideoRecord>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &VideoRecord> {
        self.videos.iter().filter(move |v| v.split() == split)
    }

    pub fn require_split(&self, split: Split) -> Result<Vec<&VideoRecord>> {
        let videos: Vec<_> = self.split(split).collect();
        if videos.is_empty() {
            return Err(Error::MissingSplit(split));
        }
        Ok(videos)
    }

    pub fn get(&self, video_id: &str) -> Option<&VideoRecord> {
        self.videos.iter().find(|v| v.video_id() == video_id)
    }

    pub fn get_mut(&mut self, video_id: &str) -> Option<&mut VideoRecord> {
        self.videos.iter_mut().find(|v| v.video_id() == video_id)
    }
}
