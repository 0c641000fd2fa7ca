//! Cluster-guided score rectification.
//!
//! Cluster labels carry no orientation: either cluster may hold the anomalous
//! segments. They are oriented against the predicted scores by cosine
//! similarity, and segments labelled anomalous in an abnormal video have their
//! score expanded by `α`, capped at 1.

use crate::error::{Error, Result};
use crate::numcore::{dot, l2_norm};

#[derive(Clone, Debug, PartialEq)]
pub struct PseudoLabels {
    pub cluster_labels: Vec<u8>,
    pub labels: Vec<u8>,
    /// cos(scores, cluster labels)
    pub s1: f64,
    /// cos(scores, inverted cluster labels)
    pub s2: f64,
}

impl PseudoLabels {
    pub fn flipped(&self) -> bool {
        self.labels != self.cluster_labels
    }
}

/// Cosine similarity; zero when either vector is all-zero.
pub fn cosine(u: &[f64], v: &[f64]) -> f64 {
    let nu = l2_norm(u);
    let nv = l2_norm(v);
    if nu == 0.0 || nv == 0.0 {
        0.0
    } else {
        dot(u, v) / (nu * nv)
    }
}

pub fn orient_pseudo_labels(scores: &[f64], cluster_labels: &[u8]) -> Result<PseudoLabels> {
    if scores.len() != cluster_labels.len() {
        return Err(Error::shape(
            "orient_pseudo_labels",
            format!("{} scores, {} labels", scores.len(), cluster_labels.len()),
        ));
    }
    let yc: Vec<f64> = cluster_labels.iter().map(|&l| f64::from(l)).collect();
    let inverted: Vec<f64> = yc.iter().map(|v| 1.0 - v).collect();
    let s1 = cosine(scores, &yc);
    let s2 = cosine(scores, &inverted);
    let labels = if s1 >= s2 {
        cluster_labels.to_vec()
    } else {
        cluster_labels.iter().map(|&l| 1 - l).collect()
    };
    Ok(PseudoLabels {
        cluster_labels: cluster_labels.to_vec(),
        labels,
        s1,
        s2,
    })
}

/// `min(α·s̃, 1)` on pseudo-positive segments of abnormal videos; identity otherwise.
pub fn rectify_scores(raw: &[f64], video_label: u8, pseudo: &[u8], alpha: f64) -> Result<Vec<f64>> {
    if raw.len() != pseudo.len() {
        return Err(Error::shape(
            "rectify_scores",
            format!("{} scores, {} pseudo labels", raw.len(), pseudo.len()),
        ));
    }
    if video_label != 1 {
        return Ok(raw.to_vec());
    }
    Ok(raw
        .iter()
        .zip(pseudo)
        .map(|(&s, &p)| if p == 1 { (alpha * s).min(1.0) } else { s })
        .collect())
}
