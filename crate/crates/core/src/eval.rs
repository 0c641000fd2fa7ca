//! Frame-level evaluation.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use crate::clustering::{kmeans2_restarts, prepare_points, KMeansParams};
use crate::data::{uniform_sample_segments, Dataset, VideoSample};
use crate::error::{Error, Result};
use crate::graph::GraphParams;
use crate::guidance::{orient_pseudo_labels, rectify_scores};
use crate::model::{forward, ModelParams, TapLayer};
use crate::numcore::{Rng, NORM_EPSILON};

/// Frame `f` takes the score of segment `⌊f·T/frame_count⌋`.
pub fn expand_to_frames(segment_scores: &[f64], frame_count: usize) -> Vec<f64> {
    let t = segment_scores.len();
    (0..frame_count)
        .map(|f| segment_scores[f * t / frame_count])
        .collect()
}

/// Area under the ROC curve as the Mann–Whitney statistic:
/// `(#concordant + ½·#tied) / (#pos · #neg)` over positive/negative pairs.
pub fn roc_auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::shape(
            "roc_auc",
            format!("{} scores, {} labels", scores.len(), labels.len()),
        ));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::NonFinite("roc_auc scores".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // Walk groups of equal scores in ascending order; counts stay integral.
    let (mut neg_below, mut concordant, mut tied) = (0u64, 0u128, 0u128);
    let (mut n_pos, mut n_neg) = (0u64, 0u64);
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        let (mut pos, mut neg) = (0u64, 0u64);
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            match labels[order[j]] {
                0 => neg += 1,
                1 => pos += 1,
                l => return Err(Error::InvalidArgument(format!("label must be 0 or 1, got {l}"))),
            }
            j += 1;
        }
        concordant += u128::from(pos) * u128::from(neg_below);
        tied += u128::from(pos) * u128::from(neg);
        neg_below += neg;
        n_pos += pos;
        n_neg += neg;
        i = j;
    }
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::InvalidArgument(
            "ROC AUC needs both positive and negative labels".into(),
        ));
    }
    Ok((concordant as f64 + 0.5 * tied as f64) / (n_pos as f64 * n_neg as f64))
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalConfig {
    /// Expand pseudo-positive segments of abnormal videos before scoring.
    pub rectify: bool,
    pub alpha: f64,
    pub tap: TapLayer,
    pub graph: GraphParams,
    /// Segments fed to the model per video; `None` keeps every raw segment.
    pub segments: Option<usize>,
    pub kmeans: KMeansParams,
    pub restarts: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            rectify: true,
            alpha: 1.3,
            tap: TapLayer::Gcn1,
            graph: GraphParams::default(),
            segments: None,
            kmeans: KMeansParams::default(),
            restarts: 3,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VideoScores {
    pub id: String,
    pub label: u8,
    pub segment_scores: Vec<f64>,
    pub frame_scores: Vec<f64>,
    pub frame_labels: Vec<u8>,
    /// AUC within this video; `None` unless it has both frame classes.
    pub auc: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub auc: f64,
    pub videos: Vec<VideoScores>,
}

impl EvalReport {
    pub fn per_video_auc(&self) -> Vec<Option<f64>> {
        self.videos.iter().map(|v| v.auc).collect()
    }

    /// `video_id,frame_index,score,label` rows with a header line.
    pub fn scores_csv(&self) -> String {
        let mut out = String::from("video_id,frame_index,score,label\n");
        for v in &self.videos {
            for (f, (s, l)) in v.frame_scores.iter().zip(&v.frame_labels).enumerate() {
                let _ = writeln!(out, "{},{f},{s},{l}", v.id);
            }
        }
        out
    }

    pub fn write_scores_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.scores_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Segment scores for one video, optionally rectified with per-video clustering.
pub fn score_video(
    params: &ModelParams,
    video: &VideoSample,
    config: &EvalConfig,
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    let features = match config.segments {
        Some(t) => uniform_sample_segments(video, t)?,
        None => video.features.clone(),
    };
    let adj = config.graph.build(&features)?;
    let trace = forward(params, &features, &adj, false, 0.0, rng)?;
    let scores = trace.scores().to_vec();
    if !(config.rectify && video.label == 1 && trace.len() >= 2) {
        return Ok(scores);
    }
    let points = prepare_points(&[trace.tap(config.tap)], NORM_EPSILON)?;
    let clusters = kmeans2_restarts(&points, None, config.kmeans, config.restarts, rng)?;
    if clusters.center_distance == 0.0 {
        // a single point cloud carries no pseudo labels
        return Ok(scores);
    }
    let pseudo = orient_pseudo_labels(&scores, &clusters.assignments)?;
    rectify_scores(&scores, video.label, &pseudo.labels, config.alpha)
}

/// Scores every video (dropout off) and computes the AUC over the
/// concatenation of all frames.
pub fn evaluate(params: &ModelParams, dataset: &Dataset, config: &EvalConfig) -> Result<EvalReport> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if dataset.feature_dim() != params.feature_dim() {
        return Err(Error::Incompatible(format!(
            "model expects {} features, data has {}",
            params.feature_dim(),
            dataset.feature_dim()
        )));
    }
    let base = Rng::new(config.seed);
    let videos = dataset
        .videos
        .par_iter()
        .enumerate()
        .map(|(i, video)| {
            let mut rng = base.derive(i as u64);
            let segment_scores = score_video(params, video, config, &mut rng)?;
            let frame_scores = expand_to_frames(&segment_scores, video.frame_count);
            let frame_labels = video.frame_labels();
            let auc = roc_auc(&frame_scores, &frame_labels).ok();
            Ok(VideoScores {
                id: video.id.clone(),
                label: video.label,
                segment_scores,
                frame_scores,
                frame_labels,
                auc,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let all_scores: Vec<f64> = videos.iter().flat_map(|v| v.frame_scores.iter().copied()).collect();
    let all_labels: Vec<u8> = videos.iter().flat_map(|v| v.frame_labels.iter().copied()).collect();
    let auc = roc_auc(&all_scores, &all_labels)?;
    Ok(EvalReport { auc, videos })
}
