//! Prediction directories and evaluation reports on disk.

use std::fs;
use std::path::{Path, PathBuf};

use mgnma_core::eval::{EvalReport, PredictionSet};
use mgnma_core::features::{FeatureTrack, Modality, Rate};

use crate::error::{Error, Result};
use crate::format::{read_track, write_track};
use crate::manifest::{check_video_id, write_json};

pub const REPORT_JSON: &str = "eval_report.json";
pub const REPORT_CSV: &str = "eval_report.csv";

fn prediction_path(dir: &Path, video_id: &str) -> PathBuf {
    dir.join(format!("{video_id}.mgf"))
}

/// One `prediction` track per video, named `<video_id>.mgf`.
pub fn write_predictions(predictions: &PredictionSet, dir: &Path) -> Result<()> {
    for (id, probs) in predictions {
        check_video_id(id).map_err(Error::Config)?;
        let track = FeatureTrack::new(Modality::Prediction, Rate::FRAME, probs.clone())?;
        write_track(&track, &prediction_path(dir, id))?;
    }
    Ok(())
}

/// Reads every `.mgf` file of a directory. Label tracks are accepted too,
/// so ground truth can be scored against itself.
pub fn read_predictions(dir: &Path) -> Result<PredictionSet> {
    let listing = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths = Vec::new();
    for entry in listing {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().is_some_and(|e| e == "mgf") {
            paths.push(path);
        }
    }
    paths.sort();
    let mut out = PredictionSet::new();
    for path in paths {
        let track = read_track(&path)?;
        if !track.modality().is_probability() {
            return Err(Error::Config(format!("{}: holds a {} track, not predictions", path.display(), track.modality())));
        }
        let id = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_owned();
        out.insert(id, track.into_values());
    }
    Ok(out)
}

pub fn expression_name(index: usize) -> String {
    format!("expression_{index:02}")
}

/// Per-video rows of per-expression correlations, then a row of expression means.
pub fn report_csv(report: &EvalReport) -> String {
    let classes = report.videos.first().map_or(0, |v| v.correlations.len());
    let mut out = String::from("video_id");
    for c in 0..classes {
        out.push(',');
        out.push_str(&expression_name(c));
    }
    out.push_str(",mean\n");
    for v in &report.videos {
        out.push_str(&v.video_id);
        for r in &v.correlations {
            out.push_str(&format!(",{r}"));
        }
        out.push_str(&format!(",{}\n", v.mean));
    }
    out.push_str("mean");
    for r in report.per_expression_means() {
        out.push_str(&format!(",{r}"));
    }
    out.push_str(&format!(",{}\n", report.overall));
    out
}

pub fn write_report(report: &EvalReport, dir: &Path) -> Result<()> {
    write_json(report, &dir.join(REPORT_JSON))?;
    crate::format::write_bytes(&dir.join(REPORT_CSV), report_csv(report).as_bytes())
}
