//! Two-way K-means (Lloyd's algorithm) over L2-normalized segment features.

use crate::error::{Error, Result};
use crate::numcore::{dot, l2_norm, squared_distance, Matrix, Rng};

/// How the two starting centers are chosen.
#[derive(Clone, Debug, PartialEq)]
pub enum InitStrategy {
    /// Two distinct participating points drawn from the rng.
    RandomPair,
    GivenCenters(Vec<f64>, Vec<f64>),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KMeansParams {
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for KMeansParams {
    fn default() -> Self {
        Self {
            max_iter: 100,
            tol: 1e-6,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClusterResult {
    /// Cluster index (0 or 1) of each primary point.
    pub assignments: Vec<u8>,
    pub centers: [Vec<f64>; 2],
    /// Euclidean distance between the two centers.
    pub center_distance: f64,
    /// Sum of squared distances of all participating points to their centers.
    pub objective: f64,
    pub iterations: usize,
    /// Objective after every center update, in order.
    pub objective_history: Vec<f64>,
    /// Number of participating points (primary and extra) in each cluster.
    pub cluster_sizes: [usize; 2],
}

impl ClusterResult {
    /// Maps center cotangents to cotangents on the primary points through the
    /// mean map, with assignments held fixed: each point receives the gradient
    /// of its center divided by the cluster size.
    pub fn pull_back(&self, grad_centers: &[Vec<f64>; 2]) -> Matrix {
        let h = self.centers[0].len();
        let mut out = Matrix::zeros(self.assignments.len(), h);
        for (i, &a) in self.assignments.iter().enumerate() {
            let a = a as usize;
            let n = self.cluster_sizes[a] as f64;
            for (o, g) in out.row_mut(i).iter_mut().zip(&grad_centers[a]) {
                *o = g / n;
            }
        }
        out
    }

    /// Labels of primary points `start..end`.
    pub fn labels(&self, start: usize, end: usize) -> &[u8] {
        &self.assignments[start..end]
    }
}

/// Vertically concatenates per-video feature blocks and L2-normalizes each row.
pub fn prepare_points(blocks: &[&Matrix], epsilon: f64) -> Result<Matrix> {
    if blocks.is_empty() {
        return Err(Error::InvalidArgument("no feature blocks to cluster".into()));
    }
    Ok(Matrix::vstack(blocks)?.l2_normalize_rows(epsilon))
}

/// Adjoint of [`prepare_points`]'s normalization: given the raw stacked rows and
/// a cotangent on the normalized rows, returns the cotangent on the raw rows.
pub fn normalize_rows_backward(raw: &Matrix, grad: &Matrix, epsilon: f64) -> Result<Matrix> {
    if raw.shape() != grad.shape() {
        return Err(Error::shape(
            "normalize_rows_backward",
            format!("{:?} vs {:?}", raw.shape(), grad.shape()),
        ));
    }
    let mut out = Matrix::zeros(raw.rows(), raw.cols());
    for i in 0..raw.rows() {
        let x = raw.row(i);
        let g = grad.row(i);
        let norm = l2_norm(x);
        let o = out.row_mut(i);
        if norm > epsilon {
            // d(x/‖x‖) = (I − x̂x̂ᵀ)/‖x‖
            let proj = dot(x, g) / (norm * norm);
            for ((o, &gv), &xv) in o.iter_mut().zip(g).zip(x) {
                *o = (gv - proj * xv) / norm;
            }
        } else {
            for (o, &gv) in o.iter_mut().zip(g) {
                *o = gv / epsilon;
            }
        }
    }
    Ok(out)
}

fn nearest(points: &Matrix, centers: &[Vec<f64>; 2]) -> Vec<u8> {
    points
        .row_iter()
        .map(|p| {
            let d0 = squared_distance(p, &centers[0]);
            let d1 = squared_distance(p, &centers[1]);
            u8::from(d1 < d0)
        })
        .collect()
}

/// Gives an empty cluster the point farthest from its current center.
fn repair_empty(points: &Matrix, centers: &[Vec<f64>; 2], assign: &mut [u8]) {
    for k in 0..2u8 {
        if assign.iter().any(|&a| a == k) {
            continue;
        }
        let mut best = 0;
        let mut best_d = f64::NEG_INFINITY;
        for (i, p) in points.row_iter().enumerate() {
            let d = squared_distance(p, &centers[assign[i] as usize]);
            if d > best_d {
                best_d = d;
                best = i;
            }
        }
        assign[best] = k;
    }
}

/// Per-cluster means. Both clusters must be non-empty.
pub fn cluster_means(points: &Matrix, assign: &[u8]) -> ([Vec<f64>; 2], [usize; 2]) {
    let h = points.cols();
    let mut sums = [vec![0.0; h], vec![0.0; h]];
    let mut counts = [0usize; 2];
    for (p, &a) in points.row_iter().zip(assign) {
        let a = a as usize;
        counts[a] += 1;
        for (s, v) in sums[a].iter_mut().zip(p) {
            *s += v;
        }
    }
    for (sum, &n) in sums.iter_mut().zip(&counts) {
        if n > 0 {
            for s in sum.iter_mut() {
                *s /= n as f64;
            }
        }
    }
    (sums, counts)
}

fn objective(points: &Matrix, assign: &[u8], centers: &[Vec<f64>; 2]) -> f64 {
    points
        .row_iter()
        .zip(assign)
        .map(|(p, &a)| squared_distance(p, &centers[a as usize]))
        .sum()
}

/// Two-way Lloyd iteration.
///
/// `extra_samples` take part in assignment and in the center means, but only
/// the primary points' assignments are reported.
pub fn kmeans2(
    points: &Matrix,
    init: &InitStrategy,
    extra_samples: Option<&Matrix>,
    params: KMeansParams,
    rng: &mut Rng,
) -> Result<ClusterResult> {
    let n_primary = points.rows();
    let all = match extra_samples {
        Some(extra) if extra.rows() > 0 => Matrix::vstack(&[points, extra])?,
        _ => points.clone(),
    };
    let h = all.cols();
    if all.rows() < 2 {
        return Err(Error::InvalidArgument(format!(
            "K-means needs at least 2 points, got {}",
            all.rows()
        )));
    }
    if h == 0 {
        return Err(Error::InvalidArgument("K-means on zero-dimensional points".into()));
    }
    all.ensure_finite("K-means input")?;

    let mut centers = match init {
        InitStrategy::RandomPair => {
            let (a, b) = rng.distinct_pair(all.rows());
            [all.row(a).to_vec(), all.row(b).to_vec()]
        }
        InitStrategy::GivenCenters(c1, c2) => {
            if c1.len() != h || c2.len() != h {
                return Err(Error::shape(
                    "kmeans2",
                    format!("initial centers of length {}/{} for {h}-d points", c1.len(), c2.len()),
                ));
            }
            if !c1.iter().chain(c2).all(|v| v.is_finite()) {
                return Err(Error::NonFinite("initial centers".into()));
            }
            [c1.clone(), c2.clone()]
        }
    };

    let mut assign: Option<Vec<u8>> = None;
    let mut sizes = [0usize; 2];
    let mut history = Vec::new();
    let mut iterations = 0;
    while iterations < params.max_iter {
        let mut next = nearest(&all, &centers);
        repair_empty(&all, &centers, &mut next);
        if assign.as_ref() == Some(&next) {
            break;
        }
        let (means, counts) = cluster_means(&all, &next);
        let movement = (0..2)
            .map(|k| squared_distance(&centers[k], &means[k]).sqrt())
            .fold(0.0, f64::max);
        history.push(objective(&all, &next, &means));
        centers = means;
        sizes = counts;
        assign = Some(next);
        iterations += 1;
        if movement < params.tol {
            // Report only a state whose assignments are stable under the final centers.
            let mut check = nearest(&all, &centers);
            repair_empty(&all, &centers, &mut check);
            if assign.as_ref() == Some(&check) {
                break;
            }
        }
    }
    let assign = match assign {
        Some(a) => a,
        // max_iter == 0: report the initial assignment without updating centers.
        None => {
            let mut a = nearest(&all, &centers);
            repair_empty(&all, &centers, &mut a);
            sizes = [a.iter().filter(|&&v| v == 0).count(), a.iter().filter(|&&v| v == 1).count()];
            a
        }
    };
    let obj = objective(&all, &assign, &centers);
    let center_distance = squared_distance(&centers[0], &centers[1]).sqrt();
    Ok(ClusterResult {
        assignments: assign[..n_primary].to_vec(),
        centers,
        center_distance,
        objective: obj,
        iterations,
        objective_history: history,
        cluster_sizes: sizes,
    })
}

/// Best of `restarts` random-pair runs by objective (earliest wins ties).
pub fn kmeans2_restarts(
    points: &Matrix,
    extra_samples: Option<&Matrix>,
    params: KMeansParams,
    restarts: usize,
    rng: &mut Rng,
) -> Result<ClusterResult> {
    let mut best: Option<ClusterResult> = None;
    for _ in 0..restarts.max(1) {
        let r = kmeans2(points, &InitStrategy::RandomPair, extra_samples, params, rng)?;
        if best.as_ref().is_none_or(|b| r.objective < b.objective) {
            best = Some(r);
        }
    }
    Ok(best.unwrap())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pts(rows: &[[f64; 2]]) -> Matrix {
        Matrix::from_rows(rows).unwrap()
    }

    #[test]
    fn separates_two_pairs() {
        let p = pts(&[[0.0, 0.0], [0.0, 0.1], [5.0, 5.0], [5.0, 5.1]]);
        let r = kmeans2(&p, &InitStrategy::RandomPair, None, KMeansParams::default(), &mut Rng::new(3)).unwrap();
        assert_eq!(r.assignments[0], r.assignments[1]);
        assert_eq!(r.assignments[2], r.assignments[3]);
        assert_ne!(r.assignments[0], r.assignments[2]);
        let expected = (25.0f64 + 25.0).sqrt();
        assert!((r.center_distance - expected).abs() < 1e-12);
        assert!((r.objective - 4.0 * 0.05 * 0.05).abs() < 1e-12);
    }

    #[test]
    fn identical_points_are_degenerate() {
        let p = pts(&[[1.0, 2.0]; 5]);
        let r = kmeans2(&p, &InitStrategy::RandomPair, None, KMeansParams::default(), &mut Rng::new(0)).unwrap();
        assert_eq!(r.centers[0], vec![1.0, 2.0]);
        assert_eq!(r.centers[1], vec![1.0, 2.0]);
        assert_eq!(r.center_distance, 0.0);
        assert_eq!(r.cluster_sizes[0] + r.cluster_sizes[1], 5);
        assert!(r.cluster_sizes.iter().all(|&n| n > 0));
    }

    #[test]
    fn given_centers_are_used() {
        let p = pts(&[[0.0, 0.0], [1.0, 0.0], [10.0, 0.0], [11.0, 0.0]]);
        let init = InitStrategy::GivenCenters(vec![10.0, 0.0], vec![0.0, 0.0]);
        let r = kmeans2(&p, &init, None, KMeansParams::default(), &mut Rng::new(0)).unwrap();
        assert_eq!(r.assignments, vec![1, 1, 0, 0]);
        assert_eq!(r.centers[0], vec![10.5, 0.0]);
    }

    #[test]
    fn empty_cluster_is_repaired() {
        // both initial centers far on one side: everything lands in cluster 0
        let p = pts(&[[0.0, 0.0], [1.0, 0.0], [3.0, 0.0]]);
        let init = InitStrategy::GivenCenters(vec![-10.0, 0.0], vec![-20.0, 0.0]);
        let r = kmeans2(&p, &init, None, KMeansParams::default(), &mut Rng::new(0)).unwrap();
        assert!(r.cluster_sizes.iter().all(|&n| n > 0));
        assert_eq!(r.assignments, vec![0, 0, 1]);
    }

    #[test]
    fn extra_samples_participate() {
        let p = pts(&[[0.0, 0.0], [4.0, 0.0]]);
        let extra = pts(&[[0.0, 0.0], [0.0, 0.0], [4.0, 0.0]]);
        let init = InitStrategy::GivenCenters(vec![0.0, 0.0], vec![4.0, 0.0]);
        let r = kmeans2(&p, &init, Some(&extra), KMeansParams::default(), &mut Rng::new(0)).unwrap();
        assert_eq!(r.assignments.len(), 2);
        assert_eq!(r.cluster_sizes, [3, 2]);
        // a single primary point becomes clusterable with extras
        let one = pts(&[[1.0, 1.0]]);
        assert!(kmeans2(&one, &InitStrategy::RandomPair, Some(&extra), KMeansParams::default(), &mut Rng::new(0)).is_ok());
        assert!(kmeans2(&one, &InitStrategy::RandomPair, None, KMeansParams::default(), &mut Rng::new(0)).is_err());
    }

    #[test]
    fn rejects_bad_input() {
        let p = pts(&[[0.0, f64::NAN], [1.0, 1.0]]);
        assert!(kmeans2(&p, &InitStrategy::RandomPair, None, KMeansParams::default(), &mut Rng::new(0)).is_err());
        let p = pts(&[[0.0, 0.0], [1.0, 1.0]]);
        let bad = InitStrategy::GivenCenters(vec![0.0], vec![1.0, 1.0]);
        assert!(kmeans2(&p, &bad, None, KMeansParams::default(), &mut Rng::new(0)).is_err());
    }

    #[test]
    fn prepare_points_concatenates_and_normalizes() {
        let a = Matrix::from_rows(&[[2.0, 0.0, 0.0, 0.0], [0.0, 3.0, 4.0, 0.0]]).unwrap();
        let b = Matrix::from_fn(5, 4, |i, j| (i + j + 1) as f64);
        let p = prepare_points(&[&a, &b], 1e-12).unwrap();
        assert_eq!(p.shape(), (7, 4));
        assert_eq!(p.row(0), &[1.0, 0.0, 0.0, 0.0]);
        for row in p.row_iter() {
            assert!((l2_norm(row) - 1.0).abs() < 1e-12);
        }
        assert!(prepare_points(&[&a, &Matrix::zeros(1, 3)], 1e-12).is_err());
        assert!(prepare_points(&[], 1e-12).is_err());
    }

    #[test]
    fn normalization_backward_matches_finite_differences() {
        let mut rng = Rng::new(5);
        let raw = Matrix::from_fn(3, 4, |_, _| rng.normal());
        let g = Matrix::from_fn(3, 4, |_, _| rng.normal());
        let analytic = normalize_rows_backward(&raw, &g, 1e-12).unwrap();
        let f = |x: &[f64]| {
            let m = Matrix::new(3, 4, x.to_vec())?.l2_normalize_rows(1e-12);
            Ok(dot(m.as_slice(), g.as_slice()))
        };
        let err = crate::numcore::finite_diff_check(f, raw.as_slice(), analytic.as_slice(), 1e-6).unwrap();
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn pull_back_divides_by_cluster_size() {
        let p = pts(&[[0.0, 0.0], [0.0, 1.0], [5.0, 5.0]]);
        let init = InitStrategy::GivenCenters(vec![0.0, 0.5], vec![5.0, 5.0]);
        let r = kmeans2(&p, &init, None, KMeansParams::default(), &mut Rng::new(0)).unwrap();
        let g = r.pull_back(&[vec![2.0, 4.0], vec![1.0, -1.0]]);
        assert_eq!(g.row(0), &[1.0, 2.0]);
        assert_eq!(g.row(2), &[1.0, -1.0]);
    }
}
