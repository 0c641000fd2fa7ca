//! Per-video segment graph.
//!
//! Two affinity branches are averaged and a self-loop is added:
//!
//! * feature branch: `max(0, cos(fᵢ, fⱼ) − θ) / (1 − θ)`, zero when either row is zero;
//! * temporal branch: `exp(−|i − j| / σₜ)`.
//!
//! The result is row-normalized so that every row sums to one.

use crate::error::{Error, Result};
use crate::numcore::{dot, l2_norm, Matrix};

/// Row-stochastic propagation matrix for one video.
#[derive(Clone, Debug, PartialEq)]
pub struct Adjacency {
    matrix: Matrix,
    self_loops: bool,
}

/// Construction parameters. `sigma_t = None` selects `max(T/10, 1)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GraphParams {
    pub sigma_t: Option<f64>,
    pub sim_threshold: f64,
}

impl Default for GraphParams {
    fn default() -> Self {
        Self {
            sigma_t: None,
            sim_threshold: 0.0,
        }
    }
}

impl GraphParams {
    pub fn sigma_for(&self, t: usize) -> f64 {
        self.sigma_t.unwrap_or_else(|| (t as f64 / 10.0).max(1.0))
    }

    pub fn build(&self, features: &Matrix) -> Result<Adjacency> {
        build_adjacency(features, self.sigma_for(features.rows()), self.sim_threshold)
    }
}

impl Adjacency {
    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn self_loops(&self) -> bool {
        self.self_loops
    }

    pub fn len(&self) -> usize {
        self.matrix.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.matrix.rows() == 0
    }

    /// Wraps an arbitrary non-negative row-stochastic matrix.
    pub fn from_matrix(matrix: Matrix) -> Result<Self> {
        if matrix.rows() != matrix.cols() {
            return Err(Error::shape("Adjacency", "matrix must be square"));
        }
        for (i, row) in matrix.row_iter().enumerate() {
            let sum: f64 = row.iter().sum();
            if row.iter().any(|&v| v < 0.0 || !v.is_finite()) || (sum - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidArgument(format!(
                    "adjacency row {i} is not a probability vector"
                )));
            }
        }
        let self_loops = (0..matrix.rows()).all(|i| matrix[(i, i)] > 0.0);
        Ok(Self { matrix, self_loops })
    }
}

pub fn build_adjacency(features: &Matrix, sigma_t: f64, sim_threshold: f64) -> Result<Adjacency> {
    let t = features.rows();
    if t == 0 || features.cols() == 0 {
        return Err(Error::InvalidArgument(
            "adjacency needs at least one segment and one feature".into(),
        ));
    }
    // +inf is allowed: the temporal branch becomes constant.
    if !(sigma_t > 0.0) {
        return Err(Error::InvalidArgument(format!("sigma_t must be positive, got {sigma_t}")));
    }
    if !(-1.0..1.0).contains(&sim_threshold) {
        return Err(Error::InvalidArgument(format!(
            "similarity threshold must lie in [-1, 1), got {sim_threshold}"
        )));
    }
    features.ensure_finite("adjacency features")?;

    let norms: Vec<f64> = features.row_iter().map(l2_norm).collect();
    let mut a = Matrix::zeros(t, t);
    for i in 0..t {
        for j in 0..t {
            let feat = if norms[i] == 0.0 || norms[j] == 0.0 {
                0.0
            } else {
                let cos = dot(features.row(i), features.row(j)) / (norms[i] * norms[j]);
                (cos - sim_threshold).max(0.0) / (1.0 - sim_threshold)
            };
            let temp = (-(i.abs_diff(j) as f64) / sigma_t).exp();
            a[(i, j)] = 0.5 * (feat + temp) + if i == j { 1.0 } else { 0.0 };
        }
    }
    for i in 0..t {
        let row = a.row_mut(i);
        let sum: f64 = row.iter().sum();
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    Ok(Adjacency {
        matrix: a,
        self_loops: true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::Rng;

    fn random(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = Rng::new(seed);
        Matrix::from_fn(rows, cols, |_, _| rng.normal())
    }

    #[test]
    fn single_segment() {
        let f = Matrix::from_rows(&[[0.3, -1.0]]).unwrap();
        let a = build_adjacency(&f, 1.0, 0.0).unwrap();
        assert_eq!(a.matrix().as_slice(), &[1.0]);
        assert!(a.self_loops());
    }

    #[test]
    fn identical_rows_are_symmetric() {
        let f = Matrix::from_rows(&[[1.0, 2.0], [1.0, 2.0]]).unwrap();
        let a = build_adjacency(&f, 1.0, 0.0).unwrap();
        let m = a.matrix();
        assert_eq!(m[(0, 0)], m[(1, 1)]);
        assert_eq!(m[(0, 1)], m[(1, 0)]);
    }

    #[test]
    fn matches_direct_formula() {
        let f = random(5, 8, 21);
        let a = build_adjacency(&f, 2.0, 0.0).unwrap();
        // Re-evaluate entry by entry, unnormalized, then normalize.
        let mut raw = vec![vec![0.0; 5]; 5];
        for i in 0..5 {
            for j in 0..5 {
                let (mut ij, mut ii, mut jj) = (0.0, 0.0, 0.0);
                for k in 0..8 {
                    ij += f[(i, k)] * f[(j, k)];
                    ii += f[(i, k)] * f[(i, k)];
                    jj += f[(j, k)] * f[(j, k)];
                }
                let cos = ij / (ii.sqrt() * jj.sqrt());
                let feat = cos.max(0.0);
                let temp = (-((i as f64) - (j as f64)).abs() / 2.0).exp();
                raw[i][j] = (feat + temp) / 2.0 + if i == j { 1.0 } else { 0.0 };
            }
        }
        for i in 0..5 {
            let s: f64 = raw[i].iter().sum();
            for j in 0..5 {
                assert!((a.matrix()[(i, j)] - raw[i][j] / s).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_rows_have_no_feature_affinity() {
        let f = Matrix::from_rows(&[[0.0, 0.0], [1.0, 0.0]]).unwrap();
        let a = build_adjacency(&f, f64::INFINITY, -0.5).unwrap();
        // temporal branch is 1 everywhere, feature branch 0 off the zero row
        let m = a.matrix();
        assert!((m[(0, 1)] - 0.5 / 2.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_input() {
        let f = Matrix::from_rows(&[[f64::NAN, 0.0]]).unwrap();
        assert!(build_adjacency(&f, 1.0, 0.0).is_err());
        let f = Matrix::from_rows(&[[1.0, 0.0]]).unwrap();
        assert!(build_adjacency(&f, 0.0, 0.0).is_err());
        assert!(build_adjacency(&f, 1.0, 1.0).is_err());
        assert!(build_adjacency(&Matrix::zeros(0, 3), 1.0, 0.0).is_err());
    }

    #[test]
    fn default_sigma() {
        let p = GraphParams::default();
        assert_eq!(p.sigma_for(5), 1.0);
        assert_eq!(p.sigma_for(64), 6.4);
    }
}
