//! The segment scoring network: a fully connected layer followed by three
//! graph convolutions,
//!
//! ```text
//! X₀ = relu(F·W_fc + b_fc)
//! H₁ = drop(relu(Â·X₀·W₁ + b₁))
//! H₂ = drop(relu(Â·H₁·W₂ + b₂))
//! s̃  = sigmoid(Â·H₂·W₃ + b₃)
//! ```
//!
//! with hand-written reverse-mode gradients. [`backward`] accepts an extra
//! cotangent at the clustering tap (by default `H₁`) so that losses defined on
//! intermediate features flow into the weights.

mod persist;

pub use persist::{decode_params, encode_params, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::graph::Adjacency;
use crate::numcore::{Matrix, Rng};

/// Hidden widths of the network. The output width is always 1.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerWidths {
    pub fc: usize,
    pub gcn1: usize,
    pub gcn2: usize,
}

impl Default for LayerWidths {
    fn default() -> Self {
        Self {
            fc: 512,
            gcn1: 128,
            gcn2: 32,
        }
    }
}

/// Which intermediate representation feeds the batch clustering.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum TapLayer {
    Fc,
    #[default]
    Gcn1,
    Gcn2,
}

impl fmt::Display for TapLayer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TapLayer::Fc => "fc",
            TapLayer::Gcn1 => "gcn1",
            TapLayer::Gcn2 => "gcn2",
        })
    }
}

impl FromStr for TapLayer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fc" => Ok(TapLayer::Fc),
            "gcn1" => Ok(TapLayer::Gcn1),
            "gcn2" => Ok(TapLayer::Gcn2),
            _ => Err(Error::InvalidArgument(format!(
                "unknown tap layer {s:?} (expected fc, gcn1 or gcn2)"
            ))),
        }
    }
}

/// Weight `fan_in × fan_out` and bias `fan_out`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl Dense {
    fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            weight: Matrix::zeros(fan_in, fan_out),
            bias: vec![0.0; fan_out],
        }
    }

    fn glorot(fan_in: usize, fan_out: usize, rng: &mut Rng) -> Self {
        let bound = glorot_bound(fan_in, fan_out);
        Self {
            weight: Matrix::from_fn(fan_in, fan_out, |_, _| rng.uniform(-bound, bound)),
            bias: vec![0.0; fan_out],
        }
    }

    fn fan_in(&self) -> usize {
        self.weight.rows()
    }

    fn fan_out(&self) -> usize {
        self.weight.cols()
    }
}

pub fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Network weights. Gradients share the same layout, see [`ParamGrads`].
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub fc: Dense,
    pub gcn1: Dense,
    pub gcn2: Dense,
    pub gcn3: Dense,
}

pub type ParamGrads = ModelParams;

/// Names of the eight parameter blocks, in storage order.
pub const BLOCK_NAMES: [&str; 8] = [
    "fc.weight",
    "fc.bias",
    "gcn1.weight",
    "gcn1.bias",
    "gcn2.weight",
    "gcn2.bias",
    "gcn3.weight",
    "gcn3.bias",
];

impl ModelParams {
    pub fn zeros(feature_dim: usize, widths: LayerWidths) -> Self {
        Self {
            fc: Dense::zeros(feature_dim, widths.fc),
            gcn1: Dense::zeros(widths.fc, widths.gcn1),
            gcn2: Dense::zeros(widths.gcn1, widths.gcn2),
            gcn3: Dense::zeros(widths.gcn2, 1),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.feature_dim(), self.widths())
    }

    pub fn feature_dim(&self) -> usize {
        self.fc.fan_in()
    }

    pub fn widths(&self) -> LayerWidths {
        LayerWidths {
            fc: self.fc.fan_out(),
            gcn1: self.gcn1.fan_out(),
            gcn2: self.gcn2.fan_out(),
        }
    }

    pub fn same_layout(&self, other: &ModelParams) -> bool {
        self.feature_dim() == other.feature_dim() && self.widths() == other.widths()
    }

    pub fn blocks(&self) -> [&[f64]; 8] {
        [
            self.fc.weight.as_slice(),
            &self.fc.bias,
            self.gcn1.weight.as_slice(),
            &self.gcn1.bias,
            self.gcn2.weight.as_slice(),
            &self.gcn2.bias,
            self.gcn3.weight.as_slice(),
            &self.gcn3.bias,
        ]
    }

    pub fn blocks_mut(&mut self) -> [&mut [f64]; 8] {
        [
            self.fc.weight.as_mut_slice(),
            &mut self.fc.bias,
            self.gcn1.weight.as_mut_slice(),
            &mut self.gcn1.bias,
            self.gcn2.weight.as_mut_slice(),
            &mut self.gcn2.bias,
            self.gcn3.weight.as_mut_slice(),
            &mut self.gcn3.bias,
        ]
    }

    pub fn num_params(&self) -> usize {
        self.blocks().iter().map(|b| b.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.blocks().iter().all(|b| b.iter().all(|v| v.is_finite()))
    }

    /// `self += factor · other`, block by block.
    pub fn add_scaled(&mut self, other: &ModelParams, factor: f64) -> Result<()> {
        if !self.same_layout(other) {
            return Err(Error::shape("add_scaled", "parameter layouts differ"));
        }
        for (dst, src) in self.blocks_mut().into_iter().zip(other.blocks()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += factor * s;
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        for b in self.blocks_mut() {
            for v in b.iter_mut() {
                *v *= factor;
            }
        }
    }
}

/// Glorot-uniform weights, zero biases.
pub fn init_params(feature_dim: usize, widths: LayerWidths, rng: &mut Rng) -> Result<ModelParams> {
    if feature_dim == 0 || widths.fc == 0 || widths.gcn1 == 0 || widths.gcn2 == 0 {
        return Err(Error::InvalidArgument(
            "feature dimension and layer widths must be positive".into(),
        ));
    }
    Ok(ModelParams {
        fc: Dense::glorot(feature_dim, widths.fc, rng),
        gcn1: Dense::glorot(widths.fc, widths.gcn1, rng),
        gcn2: Dense::glorot(widths.gcn1, widths.gcn2, rng),
        gcn3: Dense::glorot(widths.gcn2, 1, rng),
    })
}

/// Everything the backward pass needs from one forward evaluation.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    adj: Matrix,
    input: Matrix,
    z0: Matrix,
    x0: Matrix,
    z1: Matrix,
    h1: Matrix,
    mask1: Option<Matrix>,
    z2: Matrix,
    h2: Matrix,
    mask2: Option<Matrix>,
    scores: Vec<f64>,
}

impl ForwardTrace {
    /// Raw anomaly scores s̃, one per segment.
    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    /// Output of the first graph convolution, after ReLU and dropout.
    pub fn h1(&self) -> &Matrix {
        &self.h1
    }

    pub fn tap(&self, layer: TapLayer) -> &Matrix {
        match layer {
            TapLayer::Fc => &self.x0,
            TapLayer::Gcn1 => &self.h1,
            TapLayer::Gcn2 => &self.h2,
        }
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

fn relu(m: &Matrix) -> Matrix {
    m.map(|v| v.max(0.0))
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn dropout_mask(rows: usize, cols: usize, p: f64, rng: &mut Rng) -> Matrix {
    let keep = 1.0 / (1.0 - p);
    Matrix::from_fn(rows, cols, |_, _| if rng.bernoulli(p) { 0.0 } else { keep })
}

/// `Â·X·W + b`.
fn graph_conv(adj: &Matrix, x: &Matrix, layer: &Dense) -> Result<Matrix> {
    let mut z = adj.matmul(&x.matmul(&layer.weight)?)?;
    z.add_row_broadcast(&layer.bias)?;
    Ok(z)
}

pub fn forward(
    params: &ModelParams,
    features: &Matrix,
    adj: &Adjacency,
    training: bool,
    dropout_p: f64,
    rng: &mut Rng,
) -> Result<ForwardTrace> {
    let t = features.rows();
    if features.cols() != params.feature_dim() {
        return Err(Error::shape(
            "forward",
            format!(
                "features have {} columns, model expects {}",
                features.cols(),
                params.feature_dim()
            ),
        ));
    }
    if adj.len() != t {
        return Err(Error::shape(
            "forward",
            format!("{t} segments but adjacency of size {}", adj.len()),
        ));
    }
    if !(0.0..1.0).contains(&dropout_p) {
        return Err(Error::InvalidArgument(format!(
            "dropout probability must lie in [0, 1), got {dropout_p}"
        )));
    }
    let a = adj.matrix();
    let use_dropout = training && dropout_p > 0.0;

    let mut z0 = features.matmul(&params.fc.weight)?;
    z0.add_row_broadcast(&params.fc.bias)?;
    let x0 = relu(&z0);

    let z1 = graph_conv(a, &x0, &params.gcn1)?;
    let mut h1 = relu(&z1);
    let mask1 = use_dropout.then(|| dropout_mask(t, h1.cols(), dropout_p, rng));
    if let Some(m) = &mask1 {
        h1 = h1.hadamard(m)?;
    }

    let z2 = graph_conv(a, &h1, &params.gcn2)?;
    let mut h2 = relu(&z2);
    let mask2 = use_dropout.then(|| dropout_mask(t, h2.cols(), dropout_p, rng));
    if let Some(m) = &mask2 {
        h2 = h2.hadamard(m)?;
    }

    let z3 = graph_conv(a, &h2, &params.gcn3)?;
    z3.ensure_finite("output logits")?;
    let scores = z3.as_slice().iter().map(|&z| sigmoid(z)).collect();

    Ok(ForwardTrace {
        adj: a.clone(),
        input: features.clone(),
        z0,
        x0,
        z1,
        h1,
        mask1,
        z2,
        h2,
        mask2,
        scores,
    })
}

/// Gradient through `relu` (derivative 0 at the kink) and an optional dropout mask.
fn gate(grad: &Matrix, pre: &Matrix, mask: Option<&Matrix>) -> Matrix {
    let mut out = grad.zip_with(pre, "gate", |g, z| if z > 0.0 { g } else { 0.0 }).unwrap();
    if let Some(m) = mask {
        out = out.hadamard(m).unwrap();
    }
    out
}

fn add_tap(grad: &mut Matrix, tap: Option<&Matrix>) -> Result<()> {
    if let Some(g) = tap {
        grad.add_assign(g)?;
    }
    Ok(())
}

/// Reverse-mode gradients of `⟨grad_scores, s̃⟩ + ⟨grad_tap, tap⟩` with
/// respect to every parameter. Dropout masks are replayed from `trace`.
pub fn backward(
    trace: &ForwardTrace,
    params: &ModelParams,
    grad_scores: &[f64],
    grad_tap: Option<(TapLayer, &Matrix)>,
) -> Result<ParamGrads> {
    let t = trace.len();
    if trace.input.cols() != params.feature_dim()
        || trace.x0.cols() != params.widths().fc
        || trace.h1.cols() != params.widths().gcn1
        || trace.h2.cols() != params.widths().gcn2
    {
        return Err(Error::shape("backward", "trace was produced by a different model"));
    }
    if grad_scores.len() != t {
        return Err(Error::shape(
            "backward",
            format!("{} score cotangents for {t} segments", grad_scores.len()),
        ));
    }
    if let Some((layer, g)) = grad_tap {
        if g.shape() != trace.tap(layer).shape() {
            return Err(Error::shape(
                "backward",
                format!("tap cotangent {:?} vs {:?}", g.shape(), trace.tap(layer).shape()),
            ));
        }
    }
    let tap_at = |layer: TapLayer| match grad_tap {
        Some((l, g)) if l == layer => Some(g),
        _ => None,
    };
    let a = &trace.adj;

    let dz3 = Matrix::column(
        &grad_scores
            .iter()
            .zip(&trace.scores)
            .map(|(g, s)| g * s * (1.0 - s))
            .collect::<Vec<_>>(),
    );
    let u3 = a.t_matmul(&dz3)?;
    let gcn3 = Dense {
        weight: trace.h2.t_matmul(&u3)?,
        bias: dz3.column_sums(),
    };
    let mut dh2 = u3.matmul_t(&params.gcn3.weight)?;
    add_tap(&mut dh2, tap_at(TapLayer::Gcn2))?;

    let dz2 = gate(&dh2, &trace.z2, trace.mask2.as_ref());
    let u2 = a.t_matmul(&dz2)?;
    let gcn2 = Dense {
        weight: trace.h1.t_matmul(&u2)?,
        bias: dz2.column_sums(),
    };
    let mut dh1 = u2.matmul_t(&params.gcn2.weight)?;
    add_tap(&mut dh1, tap_at(TapLayer::Gcn1))?;

    let dz1 = gate(&dh1, &trace.z1, trace.mask1.as_ref());
    let u1 = a.t_matmul(&dz1)?;
    let gcn1 = Dense {
        weight: trace.x0.t_matmul(&u1)?,
        bias: dz1.column_sums(),
    };
    let mut dx0 = u1.matmul_t(&params.gcn1.weight)?;
    add_tap(&mut dx0, tap_at(TapLayer::Fc))?;

    let dz0 = gate(&dx0, &trace.z0, None);
    let fc = Dense {
        weight: trace.input.t_matmul(&dz0)?,
        bias: dz0.column_sums(),
    };

    Ok(ModelParams {
        fc,
        gcn1,
        gcn2,
        gcn3,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::GraphParams;
    use crate::numcore::finite_diff_check;

    const SMALL: LayerWidths = LayerWidths {
        fc: 8,
        gcn1: 6,
        gcn2: 4,
    };

    fn instance(t: usize, d: usize, seed: u64) -> (ModelParams, Matrix, Adjacency) {
        let mut rng = Rng::new(seed);
        let mut params = init_params(d, SMALL, &mut rng).unwrap();
        // non-zero biases so every bias gradient is exercised
        for b in [&mut params.fc.bias, &mut params.gcn1.bias, &mut params.gcn2.bias, &mut params.gcn3.bias] {
            for v in b.iter_mut() {
                *v = rng.uniform(-0.1, 0.3);
            }
        }
        let f = Matrix::from_fn(t, d, |_, _| rng.normal());
        let adj = GraphParams::default().build(&f).unwrap();
        (params, f, adj)
    }

    fn flatten(p: &ModelParams) -> Vec<f64> {
        p.blocks().iter().flat_map(|b| b.iter().copied()).collect()
    }

    fn unflatten(template: &ModelParams, flat: &[f64]) -> ModelParams {
        let mut p = template.clone();
        let mut off = 0;
        for b in p.blocks_mut() {
            b.copy_from_slice(&flat[off..off + b.len()]);
            off += b.len();
        }
        p
    }

    #[test]
    fn zero_weights_give_half() {
        let params = ModelParams::zeros(3, SMALL);
        let f = Matrix::from_fn(5, 3, |i, j| (i + j) as f64);
        let adj = GraphParams::default().build(&f).unwrap();
        let tr = forward(&params, &f, &adj, true, 0.5, &mut Rng::new(0)).unwrap();
        assert!(tr.scores().iter().all(|&s| s == 0.5));
    }

    #[test]
    fn eval_mode_ignores_dropout() {
        let (params, f, adj) = instance(6, 10, 1);
        let a = forward(&params, &f, &adj, false, 0.6, &mut Rng::new(3)).unwrap();
        let b = forward(&params, &f, &adj, false, 0.0, &mut Rng::new(4)).unwrap();
        assert_eq!(a.scores(), b.scores());
    }

    #[test]
    fn shapes_and_range() {
        let mut rng = Rng::new(2);
        let params = init_params(10, LayerWidths::default(), &mut rng).unwrap();
        let f = Matrix::from_fn(6, 10, |_, _| rng.normal());
        let adj = GraphParams::default().build(&f).unwrap();
        let tr = forward(&params, &f, &adj, true, 0.6, &mut rng).unwrap();
        assert_eq!(tr.len(), 6);
        assert!(tr.scores().iter().all(|&s| s > 0.0 && s < 1.0));
        assert_eq!(tr.h1().shape(), (6, 128));
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let a = init_params(2048, LayerWidths::default(), &mut Rng::new(9)).unwrap();
        let b = init_params(2048, LayerWidths::default(), &mut Rng::new(9)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.fc.weight.shape(), (2048, 512));
        let layers = [&a.fc, &a.gcn1, &a.gcn2, &a.gcn3];
        for l in layers {
            let bound = glorot_bound(l.fan_in(), l.fan_out());
            assert!(l.weight.as_slice().iter().all(|w| w.abs() <= bound));
            assert!(l.bias.iter().all(|&b| b == 0.0));
        }
    }

    #[test]
    fn zero_cotangent_gives_zero_gradient() {
        let (params, f, adj) = instance(4, 5, 3);
        let tr = forward(&params, &f, &adj, false, 0.0, &mut Rng::new(0)).unwrap();
        let g = backward(&tr, &params, &[0.0; 4], None).unwrap();
        assert!(g.blocks().iter().all(|b| b.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn tap_gradient_stays_upstream() {
        let (params, f, adj) = instance(4, 5, 4);
        let tr = forward(&params, &f, &adj, false, 0.0, &mut Rng::new(0)).unwrap();
        let gh = Matrix::from_fn(4, SMALL.gcn1, |i, j| (i as f64 - j as f64) * 0.1);
        let g = backward(&tr, &params, &[0.0; 4], Some((TapLayer::Gcn1, &gh))).unwrap();
        assert!(g.gcn2.weight.as_slice().iter().all(|&v| v == 0.0));
        assert!(g.gcn3.weight.as_slice().iter().all(|&v| v == 0.0));
        assert!(g.gcn1.weight.as_slice().iter().any(|&v| v != 0.0));
    }

    #[test]
    fn gradients_match_finite_differences() {
        for tap in [TapLayer::Fc, TapLayer::Gcn1, TapLayer::Gcn2] {
            let (params, f, adj) = instance(4, 5, 10);
            let tr = forward(&params, &f, &adj, false, 0.0, &mut Rng::new(0)).unwrap();
            let mut rng = Rng::new(77);
            let gs: Vec<f64> = (0..4).map(|_| rng.normal()).collect();
            let tap_shape = tr.tap(tap).shape();
            let gh = Matrix::from_fn(tap_shape.0, tap_shape.1, |_, _| rng.normal());
            let grads = backward(&tr, &params, &gs, Some((tap, &gh))).unwrap();

            let objective = |flat: &[f64]| {
                let p = unflatten(&params, flat);
                let tr = forward(&p, &f, &adj, false, 0.0, &mut Rng::new(0))?;
                let s: f64 = tr.scores().iter().zip(&gs).map(|(a, b)| a * b).sum();
                let h: f64 = tr.tap(tap).as_slice().iter().zip(gh.as_slice()).map(|(a, b)| a * b).sum();
                Ok(s + h)
            };
            let err = finite_diff_check(objective, &flatten(&params), &flatten(&grads), 1e-6).unwrap();
            assert!(err < 1e-6, "{tap}: {err}");
        }
    }

    #[test]
    fn backward_is_linear_in_cotangents() {
        let (params, f, adj) = instance(5, 5, 12);
        let tr = forward(&params, &f, &adj, true, 0.3, &mut Rng::new(1)).unwrap();
        let gs = [0.3, -0.2, 0.9, 0.1, -0.5];
        let gh = Matrix::from_fn(5, SMALL.gcn1, |i, j| ((i * 7 + j) % 5) as f64 - 2.0);
        let one = backward(&tr, &params, &gs, Some((TapLayer::Gcn1, &gh))).unwrap();
        let gs2: Vec<f64> = gs.iter().map(|v| 2.0 * v).collect();
        let two = backward(&tr, &params, &gs2, Some((TapLayer::Gcn1, &gh.scale(2.0)))).unwrap();
        for (a, b) in one.blocks().iter().zip(two.blocks()) {
            for (x, y) in a.iter().zip(b) {
                assert!((2.0 * x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn mismatched_trace_is_rejected() {
        let (params, f, adj) = instance(4, 5, 5);
        let tr = forward(&params, &f, &adj, false, 0.0, &mut Rng::new(0)).unwrap();
        let other = ModelParams::zeros(5, LayerWidths::default());
        assert!(backward(&tr, &other, &[0.0; 4], None).is_err());
        assert!(backward(&tr, &params, &[0.0; 3], None).is_err());
    }

    #[test]
    fn forward_rejects_bad_shapes() {
        let (params, f, adj) = instance(4, 5, 6);
        let short = Matrix::zeros(3, 5);
        assert!(forward(&params, &short, &adj, false, 0.0, &mut Rng::new(0)).is_err());
        assert!(forward(&params, &f, &adj, true, 1.0, &mut Rng::new(0)).is_err());
    }
}
