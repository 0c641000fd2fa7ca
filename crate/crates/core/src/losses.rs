//! Training objectives: the batch-clustering loss on center distance, the
//! k-max multiple-instance loss, and their weighted sum.

use crate::clustering::ClusterResult;
use crate::crossbatch::VideoClass;
use crate::error::{Error, Result};

/// Scalar knobs of the objective and the optimizer.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HyperParams {
    /// Cap on the normal-class center distance.
    pub mu: f64,
    /// Weight of the clustering loss.
    pub lambda1: f64,
    /// Score expansion factor for pseudo-positive segments.
    pub alpha: f64,
    /// Videos per batch, split evenly between the classes.
    pub batch_size: usize,
    pub dropout_p: f64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Guard added to the abnormal-class center distance.
    pub epsilon_d: f64,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            mu: 1.0,
            lambda1: 0.1,
            alpha: 1.3,
            batch_size: 64,
            dropout_p: 0.6,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            epsilon_d: 1e-6,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidArgument(msg));
        if !(self.mu > 0.0) {
            return fail(format!("mu must be positive, got {}", self.mu));
        }
        if !(self.lambda1 >= 0.0) {
            return fail(format!("lambda1 must be non-negative, got {}", self.lambda1));
        }
        if !(self.alpha >= 1.0) {
            return fail(format!("alpha must be at least 1, got {}", self.alpha));
        }
        if self.batch_size < 2 || self.batch_size % 2 != 0 {
            return fail(format!("batch size must be even and at least 2, got {}", self.batch_size));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return fail(format!("dropout must lie in [0, 1), got {}", self.dropout_p));
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return fail(format!("learning rate must be finite and non-negative, got {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return fail("Adam betas must lie in [0, 1)".into());
        }
        if !(self.adam_eps > 0.0) || !(self.epsilon_d > 0.0) {
            return fail("epsilons must be positive".into());
        }
        Ok(())
    }
}

/// Value of the clustering loss and its cotangents on the two centers.
#[derive(Clone, Debug, PartialEq)]
pub struct CenterLoss {
    pub value: f64,
    pub grad_centers: [Vec<f64>; 2],
}

/// `min(d, μ)` for a normal batch, `1/(d + ε)` for an abnormal one, with
/// `d = ‖c₁ − c₂‖`.
pub fn batch_cluster_loss(result: &ClusterResult, class: VideoClass, hp: &HyperParams) -> CenterLoss {
    center_distance_loss(&result.centers, class, hp)
}

pub fn center_distance_loss(centers: &[Vec<f64>; 2], class: VideoClass, hp: &HyperParams) -> CenterLoss {
    let diff: Vec<f64> = centers[0].iter().zip(&centers[1]).map(|(a, b)| a - b).collect();
    let d = diff.iter().map(|v| v * v).sum::<f64>().sqrt();
    let (value, dl_dd) = match class {
        VideoClass::Normal if d < hp.mu => (d, 1.0),
        VideoClass::Normal => (hp.mu, 0.0),
        VideoClass::Abnormal => {
            let denom = d + hp.epsilon_d;
            (1.0 / denom, -1.0 / (denom * denom))
        }
    };
    // ∂d/∂c₁ = (c₁ − c₂)/d; zero subgradient at d = 0
    let g1: Vec<f64> = if d > 0.0 && dl_dd != 0.0 {
        diff.iter().map(|v| dl_dd * v / d).collect()
    } else {
        vec![0.0; diff.len()]
    };
    let g2 = g1.iter().map(|v| -v).collect();
    CenterLoss {
        value,
        grad_centers: [g1, g2],
    }
}

/// Number of segments averaged by the k-max loss: `⌊T/8 + 1⌋`.
pub fn kmax_k(t: usize) -> usize {
    t / 8 + 1
}

/// Score clamp used inside the logarithms.
pub const SCORE_CLAMP: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct KmaxLoss {
    pub value: f64,
    pub grad_scores: Vec<f64>,
    /// Indices of the k selected segments, highest score first.
    pub selected: Vec<usize>,
}

/// Indices of the `k` largest scores; ties go to the lower index.
pub fn top_k_indices(scores: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

/// Binary cross-entropy averaged over the `⌊T/8 + 1⌋` highest scores.
pub fn kmax_loss(scores: &[f64], label: u8) -> Result<KmaxLoss> {
    if scores.is_empty() {
        return Err(Error::InvalidArgument("k-max loss of an empty score vector".into()));
    }
    if label > 1 {
        return Err(Error::InvalidArgument(format!("video label must be 0 or 1, got {label}")));
    }
    let k = kmax_k(scores.len()).min(scores.len());
    let selected = top_k_indices(scores, k);
    let y = f64::from(label);
    let mut value = 0.0;
    let mut grad = vec![0.0; scores.len()];
    for &j in &selected {
        let s = scores[j].clamp(SCORE_CLAMP, 1.0 - SCORE_CLAMP);
        value -= y * s.ln() + (1.0 - y) * (1.0 - s).ln();
        grad[j] = (-y / s + (1.0 - y) / (1.0 - s)) / k as f64;
    }
    Ok(KmaxLoss {
        value: value / k as f64,
        grad_scores: grad,
        selected,
    })
}

/// `kmax + λ₁·bc`.
pub fn total_loss(kmax: f64, bc: f64, hp: &HyperParams) -> f64 {
    kmax + hp.lambda1 * bc
}

#[cfg(test)]
mod tests {
    use super::*;

    fn centers_at(d: f64) -> [Vec<f64>; 2] {
        [vec![d, 0.0], vec![0.0, 0.0]]
    }

    #[test]
    fn normal_branch() {
        let hp = HyperParams::default();
        let l = center_distance_loss(&centers_at(0.3), VideoClass::Normal, &hp);
        assert!((l.value - 0.3).abs() < 1e-15);
        assert_eq!(l.grad_centers[0], vec![1.0, 0.0]);
        assert_eq!(l.grad_centers[1], vec![-1.0, 0.0]);

        let l = center_distance_loss(&centers_at(1.5), VideoClass::Normal, &hp);
        assert_eq!(l.value, 1.0);
        assert!(l.grad_centers.iter().flatten().all(|&g| g == 0.0));
    }

    #[test]
    fn abnormal_branch() {
        let hp = HyperParams::default();
        let l = center_distance_loss(&centers_at(2.0), VideoClass::Abnormal, &hp);
        assert!((l.value - 1.0 / (2.0 + 1e-6)).abs() < 1e-15);
        assert!((l.value - 0.5).abs() < 1e-6);
        // pushing the centers apart lowers the loss
        assert!(l.grad_centers[0][0] < 0.0);
        let zero = center_distance_loss(&centers_at(0.0), VideoClass::Abnormal, &hp);
        assert!((zero.value - 1e6).abs() < 1e-6);
        assert!(zero.grad_centers.iter().flatten().all(|&g| g == 0.0));
    }

    #[test]
    fn center_gradient_matches_finite_differences() {
        let hp = HyperParams { mu: 5.0, ..HyperParams::default() };
        let c = [vec![0.3, -0.2, 0.9], vec![-0.4, 0.5, 0.1]];
        for class in [VideoClass::Normal, VideoClass::Abnormal] {
            let an = center_distance_loss(&c, class, &hp);
            let flat: Vec<f64> = c.iter().flatten().copied().collect();
            let analytic: Vec<f64> = an.grad_centers.iter().flatten().copied().collect();
            let f = |x: &[f64]| Ok(center_distance_loss(&[x[..3].to_vec(), x[3..].to_vec()], class, &hp).value);
            let err = crate::numcore::finite_diff_check(f, &flat, &analytic, 1e-6).unwrap();
            assert!(err < 1e-8, "{class:?}: {err}");
        }
    }

    #[test]
    fn k_values() {
        assert_eq!(kmax_k(150), 19);
        assert_eq!(kmax_k(100), 13);
        assert_eq!(kmax_k(20), 3);
        assert_eq!(kmax_k(1), 1);
        assert_eq!(kmax_k(8), 2);
    }

    #[test]
    fn kmax_half_scores() {
        let l = kmax_loss(&[0.5; 10], 1).unwrap();
        assert!((l.value - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(l.selected, vec![0, 1]);
        assert_eq!(l.grad_scores.iter().filter(|&&g| g != 0.0).count(), 2);
    }

    #[test]
    fn kmax_gradient_matches_finite_differences() {
        let s = [0.2, 0.9, 0.55, 0.31, 0.77, 0.05, 0.6, 0.42, 0.88, 0.13];
        for y in [0, 1] {
            let l = kmax_loss(&s, y).unwrap();
            let f = |x: &[f64]| Ok(kmax_loss(x, y)?.value);
            let err = crate::numcore::finite_diff_check(f, &s, &l.grad_scores, 1e-7).unwrap();
            assert!(err < 1e-7, "{err}");
        }
    }

    #[test]
    fn kmax_handles_saturated_scores() {
        let l = kmax_loss(&[1.0, 0.0], 0).unwrap();
        assert!(l.value.is_finite());
        assert!(l.grad_scores.iter().all(|g| g.is_finite()));
        assert!(kmax_loss(&[], 0).is_err());
        assert!(kmax_loss(&[0.5], 2).is_err());
    }

    #[test]
    fn total() {
        let hp = HyperParams { lambda1: 0.0, ..HyperParams::default() };
        assert_eq!(total_loss(0.7, 3.0, &hp), 0.7);
        let hp = HyperParams { lambda1: 1.0, ..HyperParams::default() };
        assert!((total_loss(0.7, 0.3, &hp) - 1.0).abs() < 1e-15);
        let hp = HyperParams { lambda1: 0.1, ..HyperParams::default() };
        assert!((total_loss(0.5, 2.0, &hp) - 0.7).abs() < 1e-15);
    }

    #[test]
    fn validation() {
        assert!(HyperParams::default().validate().is_ok());
        for bad in [
            HyperParams { mu: 0.0, ..Default::default() },
            HyperParams { lambda1: -1.0, ..Default::default() },
            HyperParams { alpha: 0.9, ..Default::default() },
            HyperParams { batch_size: 3, ..Default::default() },
            HyperParams { dropout_p: 1.0, ..Default::default() },
        ] {
            assert!(bad.validate().is_err());
        }
    }
}
