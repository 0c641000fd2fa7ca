//! Videos as segment-feature matrices: synthetic generation, uniform segment
//! sampling, and the on-disk manifest / feature-file formats.

mod io;
mod synth;

pub use io::{
    decode_features, encode_features, load_dataset, save_dataset, FEATURE_MAGIC, FEATURE_VERSION,
};
pub use synth::{generate_synthetic, SynthConfig};

use crate::error::{Error, Result};
use crate::numcore::Matrix;

/// Frames covered by one raw segment.
pub const FRAMES_PER_SEGMENT: usize = 16;

#[derive(Clone, Debug, PartialEq)]
pub struct VideoSample {
    pub id: String,
    /// `T_raw × D`, one row per raw segment.
    pub features: Matrix,
    pub label: u8,
    pub frame_count: usize,
    /// Half-open frame ranges `[start, end)`; empty for normal videos.
    pub anomaly_intervals: Vec<(usize, usize)>,
}

impl VideoSample {
    pub fn num_segments(&self) -> usize {
        self.features.rows()
    }

    /// Per-frame ground truth derived from the intervals.
    pub fn frame_labels(&self) -> Vec<u8> {
        let mut labels = vec![0u8; self.frame_count];
        for &(s, e) in &self.anomaly_intervals {
            for l in &mut labels[s.min(self.frame_count)..e.min(self.frame_count)] {
                *l = 1;
            }
        }
        labels
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(format!("video {}: {msg}", self.id)));
        if self.label > 1 {
            return bad(format!("label must be 0 or 1, got {}", self.label));
        }
        if self.features.rows() == 0 || self.features.cols() == 0 {
            return bad("empty feature matrix".into());
        }
        if self.frame_count == 0 {
            return bad("zero frames".into());
        }
        if self.label == 0 && !self.anomaly_intervals.is_empty() {
            return bad("normal video with anomaly intervals".into());
        }
        let mut sorted = self.anomaly_intervals.clone();
        sorted.sort_unstable();
        for (i, &(s, e)) in sorted.iter().enumerate() {
            if s >= e || e > self.frame_count {
                return bad(format!("interval [{s}, {e}) outside [0, {})", self.frame_count));
            }
            if i > 0 && sorted[i - 1].1 > s {
                return bad("overlapping anomaly intervals".into());
            }
        }
        if !self.features.is_finite() {
            return Err(Error::NonFinite(format!("features of video {}", self.id)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub videos: Vec<VideoSample>,
}

impl Dataset {
    pub fn new(videos: Vec<VideoSample>) -> Result<Self> {
        let ds = Self { videos };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        let Some(first) = self.videos.first() else {
            return Err(Error::EmptyDataset);
        };
        let d = first.features.cols();
        for v in &self.videos {
            v.validate()?;
            if v.features.cols() != d {
                return Err(Error::InvalidArgument(format!(
                    "video {} has feature dimension {}, expected {d}",
                    v.id,
                    v.features.cols()
                )));
            }
        }
        Ok(())
    }

    pub fn feature_dim(&self) -> usize {
        self.videos.first().map_or(0, |v| v.features.cols())
    }

    pub fn len(&self) -> usize {
        self.videos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.videos.is_empty()
    }

    /// Indices of videos with the given label.
    pub fn indices_with_label(&self, label: u8) -> Vec<usize> {
        (0..self.videos.len())
            .filter(|&i| self.videos[i].label == label)
            .collect()
    }
}

/// Picks `t` rows spread uniformly over the raw segments: row `i` is raw
/// segment `⌊i·T_raw/t⌋`.
pub fn uniform_sample_segments(sample: &VideoSample, t: usize) -> Result<Matrix> {
    let raw = sample.num_segments();
    if t == 0 || raw == 0 {
        return Err(Error::InvalidArgument(format!(
            "cannot sample {t} segments from {raw} for video {}",
            sample.id
        )));
    }
    let rows: Vec<&[f64]> = sample_indices(raw, t)
        .into_iter()
        .map(|i| sample.features.row(i))
        .collect();
    Matrix::from_rows(&rows)
}

pub fn sample_indices(raw: usize, t: usize) -> Vec<usize> {
    (0..t).map(|i| i * raw / t).collect()
}
