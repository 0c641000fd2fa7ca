use super::{Dataset, VideoSample, FRAMES_PER_SEGMENT};
use crate::error::{Error, Result};
use crate::numcore::{Matrix, Rng};

/// Parameters of the synthetic feature generator.
///
/// Normal segments are Gaussian around a fixed mean `μₙ`; abnormal videos get
/// one to three contiguous intervals whose segments are drawn around
/// `μₐ = μₙ + separation·u` for a fixed unit direction `u`. Every video also
/// carries a slowly varying AR(1) drift.
///
/// `μₙ` has i.i.d. `N(0, mean_scale²)` coordinates. Keep it small: a large
/// common offset makes every pair of segments nearly collinear, which flattens
/// the feature-similarity branch of the graph and smears scores across whole
/// videos.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub feature_dim: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    /// Inclusive frame-count range per video.
    pub frames: (usize, usize),
    pub separation: f64,
    pub mean_scale: f64,
    pub noise_sigma: f64,
    /// Inclusive anomaly-interval length range, in segments.
    pub interval_segments: (usize, usize),
    pub drift_sigma: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            feature_dim: 32,
            train_per_class: 60,
            test_per_class: 20,
            frames: (320, 1600),
            separation: 2.0,
            mean_scale: 0.0,
            noise_sigma: 0.5,
            interval_segments: (16, 40),
            drift_sigma: 0.3,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(format!("synthetic config: {m}")));
        if self.feature_dim == 0 {
            return bad("feature dimension must be positive");
        }
        if self.train_per_class == 0 || self.test_per_class == 0 {
            return bad("need at least one video per class and split");
        }
        if self.frames.0 == 0 || self.frames.0 > self.frames.1 {
            return bad("frame range is empty");
        }
        if self.interval_segments.0 == 0 || self.interval_segments.0 > self.interval_segments.1 {
            return bad("interval length range is empty");
        }
        if self.frames.0.div_ceil(FRAMES_PER_SEGMENT) < self.interval_segments.0 + 1 {
            return bad("shortest video cannot hold an anomaly interval");
        }
        if !(self.separation >= 0.0) || !self.separation.is_finite() {
            return bad("separation must be finite and non-negative");
        }
        if !(self.mean_scale >= 0.0) || !(self.noise_sigma >= 0.0) || !(self.drift_sigma >= 0.0) {
            return bad("noise levels must be non-negative");
        }
        Ok(())
    }
}

const DRIFT_AR: f64 = 0.95;

struct Generator<'a> {
    cfg: &'a SynthConfig,
    normal_mean: Vec<f64>,
    anomaly_mean: Vec<f64>,
}

impl Generator<'_> {
    fn video(&self, id: String, label: u8, rng: &mut Rng, keep_intervals: bool) -> VideoSample {
        let cfg = self.cfg;
        let d = cfg.feature_dim;
        let frame_count = rng.range_inclusive(cfg.frames.0, cfg.frames.1);
        let raw = frame_count.div_ceil(FRAMES_PER_SEGMENT);

        let segments = if label == 1 { self.place_intervals(raw, rng) } else { Vec::new() };
        let mut anomalous = vec![false; raw];
        for &(s, e) in &segments {
            anomalous[s..e].fill(true);
        }

        // stationary AR(1) drift with marginal std drift_sigma
        let innovation = cfg.drift_sigma * (1.0 - DRIFT_AR * DRIFT_AR).sqrt();
        let mut drift: Vec<f64> = (0..d).map(|_| cfg.drift_sigma * rng.normal()).collect();
        let mut features = Matrix::zeros(raw, d);
        for t in 0..raw {
            let mean = if anomalous[t] { &self.anomaly_mean } else { &self.normal_mean };
            let row = features.row_mut(t);
            for k in 0..d {
                if t > 0 {
                    drift[k] = DRIFT_AR * drift[k] + innovation * rng.normal();
                }
                let v = mean[k] + drift[k] + cfg.noise_sigma * rng.normal();
                // stored as f32 on disk; keep memory and disk bit-identical
                row[k] = f64::from(v as f32);
            }
        }

        let anomaly_intervals = if keep_intervals {
            segments
                .iter()
                .map(|&(s, e)| {
                    (
                        s * FRAMES_PER_SEGMENT,
                        (e * FRAMES_PER_SEGMENT).min(frame_count),
                    )
                })
                .collect()
        } else {
            Vec::new()
        };
        VideoSample {
            id,
            features,
            label,
            frame_count,
            anomaly_intervals,
        }
    }

    /// One to three disjoint, non-adjacent segment intervals, sorted.
    fn place_intervals(&self, raw: usize, rng: &mut Rng) -> Vec<(usize, usize)> {
        let (lo, hi) = self.cfg.interval_segments;
        let wanted = rng.range_inclusive(1, 3);
        let mut out: Vec<(usize, usize)> = Vec::new();
        let mut attempts = 0;
        while out.len() < wanted && attempts < 50 {
            attempts += 1;
            let len = rng.range_inclusive(lo, hi.min(raw - 1).max(lo));
            if len >= raw {
                continue;
            }
            let start = rng.range_inclusive(0, raw - len);
            let end = start + len;
            if out.iter().all(|&(s, e)| end < s || start > e) {
                out.push((start, end));
            }
        }
        if out.is_empty() {
            out.push((0, lo.min(raw)));
        }
        out.sort_unstable();
        out
    }
}

fn unit_vector(d: usize, rng: &mut Rng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
        let n = crate::numcore::l2_norm(&v);
        if n > 1e-9 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Generates `(train, test)`. Intervals are recorded for test videos only,
/// as in the weakly supervised setting.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<(Dataset, Dataset)> {
    cfg.validate()?;
    let mut rng = Rng::new(cfg.seed);
    let d = cfg.feature_dim;
    let normal_mean: Vec<f64> = (0..d).map(|_| cfg.mean_scale * rng.normal()).collect();
    let direction = unit_vector(d, &mut rng);
    let anomaly_mean = normal_mean
        .iter()
        .zip(&direction)
        .map(|(m, u)| m + cfg.separation * u)
        .collect();
    let generator = Generator {
        cfg,
        normal_mean,
        anomaly_mean,
    };

    let split = |name: &str, per_class: usize, keep: bool, stream: u64| {
        let mut r = rng.derive(stream);
        let mut videos = Vec::with_capacity(2 * per_class);
        for i in 0..per_class {
            videos.push(generator.video(format!("{name}_normal_{i:04}"), 0, &mut r, keep));
        }
        for i in 0..per_class {
            videos.push(generator.video(format!("{name}_abnormal_{i:04}"), 1, &mut r, keep));
        }
        Dataset::new(videos)
    };
    let train = split("train", cfg.train_per_class, false, 1)?;
    let test = split("test", cfg.test_per_class, true, 2)?;
    Ok((train, test))
}
