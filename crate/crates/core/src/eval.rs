//! Per-video correlation metric and probability ensembling.
//!
//! The score is the Pearson correlation between predicted and annotated
//! series, computed for every (video, expression) pair, averaged over the
//! expressions of a video and then over videos. A pair where either series
//! is constant has no defined correlation; it scores 0, still counts in the
//! average, and is flagged.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::VideoRecord;
use crate::tensor::{Matrix, Real};

/// Predictions keyed by video id, each `T×classes`.
pub type PredictionSet = BTreeMap<String, Matrix<f32>>;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub r: f64,
    pub degenerate: bool,
}

fn is_constant<T: Real>(v: &[T]) -> bool {
    v.iter().all(|&x| x == v[0])
}

/// Pearson correlation, accumulated in 64-bit.
pub fn pearson<T: Real>(x: &[T], y: &[T]) -> Result<Correlation> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch { left: x.len(), right: y.len() });
    }
    let n = x.len();
    if n < 2 {
        return Err(Error::SeriesTooShort(n));
    }
    let degenerate = Correlation { r: 0.0, degenerate: true };
    if is_constant(x) || is_constant(y) {
        return Ok(degenerate);
    }
    let mx = x.iter().map(|v| v.as_f64()).sum::<f64>() / n as f64;
    let my = y.iter().map(|v| v.as_f64()).sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        let dx = a.as_f64() - mx;
        let dy = b.as_f64() - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Ok(degenerate);
    }
    let r = sxy / libm::sqrt(sxx * syy);
    Ok(Correlation {
        r: r.clamp(-1.0, 1.0),
        degenerate: false,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VideoScore {
    pub video_id: String,
    /// One entry per expression.
    pub correlations: Vec<f64>,
    pub degenerate: Vec<bool>,
    pub mean: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Sorted by video id.
    pub videos: Vec<VideoScore>,
    pub overall: f64,
    pub degenerate_pairs: usize,
}

impl EvalReport {
    /// Mean correlation of each expression across videos.
    pub fn per_expression_means(&self) -> Vec<f64> {
        let classes = self.videos.first().map_or(0, |v| v.correlations.len());
        let mut sums = alloc::vec![0.0; classes];
        for v in &self.videos {
            for (s, r) in sums.iter_mut().zip(&v.correlations) {
                *s += r;
            }
        }
        let n = self.videos.len().max(1) as f64;
        sums.into_iter().map(|s| s / n).collect()
    }
}

/// Scores one video's predictions against its label track.
pub fn score_video(video_id: &str, predictions: &Matrix<f32>, labels: &Matrix<f32>) -> Result<VideoScore> {
    if predictions.shape() != labels.shape() {
        return Err(Error::ShapeMismatch {
            what: "prediction track",
            expected: labels.shape(),
            found: predictions.shape(),
        });
    }
    let (t, classes) = labels.shape();
    let mut correlations = Vec::with_capacity(classes);
    let mut degenerate = Vec::with_capacity(classes);
    let mut xs = Vec::with_capacity(t);
    let mut ys = Vec::with_capacity(t);
    for c in 0..classes {
        xs.clear();
        ys.clear();
        for r in 0..t {
            xs.push(predictions.get(r, c));
            ys.push(labels.get(r, c));
        }
        let corr = pearson(&xs, &ys)?;
        correlations.push(corr.r);
        degenerate.push(corr.degenerate);
    }
    let mean = correlations.iter().sum::<f64>() / classes.max(1) as f64;
    Ok(VideoScore {
        video_id: String::from(video_id),
        correlations,
        degenerate,
        mean,
    })
}

/// Evaluates predictions over the given videos. Order of `videos` is irrelevant.
pub fn evaluate<'a>(
    predictions: &PredictionSet,
    videos: impl IntoIterator<Item = &'a VideoRecord>,
) -> Result<EvalReport> {
    let mut scores = Vec::new();
    for video in videos {
        let pred = predictions
            .get(video.video_id())
            .ok_or_else(|| Error::MissingVideo(String::from(video.video_id())))?;
        scores.push(score_video(video.video_id(), pred, video.labels().values())?);
    }
    if scores.is_empty() {
        return Err(Error::InvalidConfig(String::from("nothing to evaluate")));
    }
    scores.sort_by(|a, b| a.video_id.cmp(&b.video_id));
    let overall = scores.iter().map(|s| s.mean).sum::<f64>() / scores.len() as f64;
    let degenerate_pairs = scores
        .iter()
        .map(|s| s.degenerate.iter().filter(|&&d| d).count())
        .sum();
    Ok(EvalReport {
        videos: scores,
        overall,
        degenerate_pairs,
    })
}

/// Elementwise mean of probabilities across prediction sets.
pub fn ensemble(sets: &[PredictionSet]) -> Result<PredictionSet> {
    let first = sets
        .first()
        .ok_or_else(|| Error::CoverageMismatch(String::from("no prediction sets")))?;
    for (i, set) in sets.iter().enumerate().skip(1) {
        if set.len() != first.len() {
            return Err(Error::CoverageMismatch(format!(
                "set {i} covers {} videos, set 0 covers {}",
                set.len(),
                first.len()
            )));
        }
        for (id, m) in first {
            match set.get(id) {
                None => return Err(Error::CoverageMismatch(format!("set {i} lacks video {id}"))),
                Some(other) if other.shape() != m.shape() => {
                    return Err(Error::CoverageMismatch(format!("set {i} has a different frame count for {id}")))
                }
                Some(_) => {}
            }
        }
    }
    let k = sets.len() as f64;
    let mut out = PredictionSet::new();
    for (id, m) in first {
        let mut acc: Vec<f64> = m.data().iter().map(|&v| v as f64).collect();
        for set in &sets[1..] {
            for (a, &v) in acc.iter_mut().zip(set[id].data()) {
                *a += v as f64;
            }
        }
        let data = acc.into_iter().map(|a| (a / k) as f32).collect();
        out.insert(id.clone(), Matrix::new(m.rows(), m.cols(), data)?);
    }
    Ok(out)
}
