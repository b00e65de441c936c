//! Dataset manifests: a JSON index of videos, splits and track files.
//!
//! Track paths are relative to the manifest's directory. Loading checks
//! that every referenced file exists and that each decoded track matches
//! the declared modality, dimension and rate.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use mgnma_core::features::{Dataset, FeatureTrack, Modality, Rate, Split, VideoRecord};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::format::{read_track, write_track};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackEntry {
    pub path: String,
    pub dim: usize,
    pub rate: Rate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub video_id: String,
    pub split: Split,
    /// Keyed by modality name; must include `labels`.
    pub tracks: BTreeMap<String, TrackEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub dataset_name: String,
    pub entries: Vec<ManifestEntry>,
}

fn manifest_error(path: &Path, message: impl Into<String>) -> Error {
    Error::Manifest {
        path: path.to_owned(),
        message: message.into(),
    }
}

/// Ids double as directory names, so path separators and dot-only ids are refused.
pub fn check_video_id(id: &str) -> Result<(), String> {
    let ok = !id.is_empty()
        && id != "."
        && id != ".."
        && !id.contains(['/', '\\', '\0'])
        && id.len() <= 255;
    if ok {
        Ok(())
    } else {
        Err(format!("invalid video id {id:?}"))
    }
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_owned(),
        source,
    })
}

pub(crate) fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|source| Error::Json {
        path: path.to_owned(),
        source,
    })?;
    text.push('\n');
    crate::format::write_bytes(path, text.as_bytes())
}

impl Manifest {
    /// Parses and checks structure and file existence; does not read tracks.
    pub fn load(path: &Path) -> Result<Self> {
        let manifest: Manifest = read_json(path)?;
        manifest.check(path)?;
        let root = base_dir(path);
        for entry in &manifest.entries {
            for track in entry.tracks.values() {
                let file = root.join(&track.path);
                if !file.is_file() {
                    return Err(Error::NotFound { path: file });
                }
            }
        }
        Ok(manifest)
    }

    fn check(&self, path: &Path) -> Result<()> {
        let mut seen = BTreeSet::new();
        for entry in &self.entries {
            check_video_id(&entry.video_id).map_err(|m| manifest_error(path, m))?;
            if !seen.insert(entry.video_id.as_str()) {
                return Err(manifest_error(path, format!("duplicate video id {}", entry.video_id)));
            }
            if !entry.tracks.contains_key(Modality::Labels.as_str()) {
                return Err(manifest_error(path, format!("video {} has no labels track", entry.video_id)));
            }
            for (name, track) in &entry.tracks {
                name.parse::<Modality>().map_err(|e| manifest_error(path, e.to_string()))?;
                if track.dim == 0 {
                    return Err(manifest_error(path, format!("{}/{name}: dim must be positive", entry.video_id)));
                }
                Rate::new(track.rate.num, track.rate.den).map_err(|e| manifest_error(path, e.to_string()))?;
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.check(path)?;
        write_json(self, path)
    }

    pub fn entry(&self, video_id: &str) -> Option<&ManifestEntry> {
        self.entries.iter().find(|e| e.video_id == video_id)
    }
}

fn base_dir(manifest_path: &Path) -> PathBuf {
    manifest_path.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn load_entry_track(root: &Path, manifest_path: &Path, video_id: &str, name: &str, entry: &TrackEntry) -> Result<FeatureTrack> {
    let track = read_track(&root.join(&entry.path))?;
    let mismatch = |what: String| manifest_error(manifest_path, format!("{video_id}/{name}: {what}"));
    if track.modality().as_str() != name {
        return Err(mismatch(format!("file holds a {} track", track.modality())));
    }
    if track.dim() != entry.dim {
        return Err(mismatch(format!("declared dim {} but file has {}", entry.dim, track.dim())));
    }
    if track.rate() != entry.rate {
        return Err(mismatch(format!(
            "declared rate {}/{} but file has {}/{}",
            entry.rate.num,
            entry.rate.den,
            track.rate().num,
            track.rate().den
        )));
    }
    Ok(track)
}

/// Loads every track of every video.
pub fn load_dataset(manifest_path: &Path) -> Result<(Manifest, Dataset)> {
    let manifest = Manifest::load(manifest_path)?;
    let root = base_dir(manifest_path);
    let mut videos = Vec::with_capacity(manifest.entries.len());
    for entry in &manifest.entries {
        let labels_entry = &entry.tracks[Modality::Labels.as_str()];
        let labels = load_entry_track(&root, manifest_path, &entry.video_id, "labels", labels_entry)?;
        let mut tracks = Vec::new();
        for (name, t) in &entry.tracks {
            if name != Modality::Labels.as_str() {
                tracks.push(load_entry_track(&root, manifest_path, &entry.video_id, name, t)?);
            }
        }
        videos.push(VideoRecord::new(entry.video_id.clone(), entry.split, labels, tracks)?);
    }
    Ok((
        manifest.clone(),
        Dataset {
            name: manifest.dataset_name,
            videos,
        },
    ))
}

fn track_path(video_id: &str, modality: &Modality) -> String {
    format!("videos/{video_id}/{}.mgf", modality.as_str())
}

fn entry_for(record: &VideoRecord) -> ManifestEntry {
    let mut tracks = BTreeMap::new();
    for t in std::iter::once(record.labels()).chain(record.tracks()) {
        tracks.insert(
            t.modality().as_str().to_owned(),
            TrackEntry {
                path: track_path(record.video_id(), t.modality()),
                dim: t.dim(),
                rate: t.rate(),
            },
        );
    }
    ManifestEntry {
        video_id: record.video_id().to_owned(),
        split: record.split(),
        tracks,
    }
}

/// Writes every track under `dir/videos/` and `dir/manifest.json`.
pub fn write_dataset(dataset: &Dataset, dir: &Path) -> Result<PathBuf> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let mut entries = Vec::with_capacity(dataset.videos.len());
    for record in &dataset.videos {
        check_video_id(record.video_id()).map_err(|m| manifest_error(&manifest_path, m))?;
        for t in std::iter::once(record.labels()).chain(record.tracks()) {
            write_track(t, &dir.join(track_path(record.video_id(), t.modality())))?;
        }
        entries.push(entry_for(record));
    }
    let manifest = Manifest {
        dataset_name: dataset.name.clone(),
        entries,
    };
    manifest.save(&manifest_path)?;
    Ok(manifest_path)
}

/// Writes new tracks next to the dataset and references them from the manifest.
/// Existing tracks of the same modality are replaced.
pub fn add_tracks(manifest_path: &Path, tracks: &[(String, FeatureTrack)]) -> Result<Manifest> {
    let mut manifest = Manifest::load(manifest_path)?;
    let root = base_dir(manifest_path);
    for (video_id, track) in tracks {
        let entry = manifest
            .entries
            .iter_mut()
            .find(|e| &e.video_id == video_id)
            .ok_or_else(|| manifest_error(manifest_path, format!("unknown video {video_id}")))?;
        let rel = track_path(video_id, track.modality());
        write_track(track, &root.join(&rel))?;
        entry.tracks.insert(
            track.modality().as_str().to_owned(),
            TrackEntry {
                path: rel,
                dim: track.dim(),
                rate: track.rate(),
            },
        );
    }
    manifest.save(manifest_path)?;
    Ok(manifest)
}
