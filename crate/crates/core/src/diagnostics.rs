//! Finite-difference verification of every hand-written gradient.
//!
//! Two families of checks run on a tiny random instance:
//!
//! * `model/<tap>`: the network alone, with random cotangents on the scores
//!   and on the tap layer;
//! * `objective`: the complete batch objective (k-max loss plus both
//!   clustering terms) with K-means assignments frozen at the base point, so
//!   the clustering gradient travels through the centers, the row
//!   normalization and the GCN-1 features.

use crate::clustering::cluster_means;
use crate::crossbatch::{CenterMemory, Strategy, VideoClass};
use crate::data::{Dataset, VideoSample};
use crate::error::Result;
use crate::graph::GraphParams;
use crate::losses::{center_distance_loss, kmax_loss, total_loss, HyperParams};
use crate::model::{backward, forward, LayerWidths, ModelParams, TapLayer, BLOCK_NAMES};
use crate::numcore::{finite_diff_check, Matrix, Rng, NORM_EPSILON};
use crate::training::{batch_gradients, Batch, TrainConfig, TrainingSet};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradcheckConfig {
    pub segments: usize,
    pub feature_dim: usize,
    pub widths: LayerWidths,
    pub step: f64,
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            segments: 4,
            feature_dim: 5,
            widths: LayerWidths {
                fc: 8,
                gcn1: 6,
                gcn2: 4,
            },
            step: 1e-6,
            tolerance: 1e-6,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlockCheck {
    pub check: String,
    pub block: &'static str,
    pub max_rel_error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckReport {
    pub tolerance: f64,
    pub blocks: Vec<BlockCheck>,
}

impl GradcheckReport {
    pub fn max_error(&self) -> f64 {
        self.blocks.iter().map(|b| b.max_rel_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.blocks.iter().all(|b| b.max_rel_error < self.tolerance)
    }
}

fn random_params(cfg: &GradcheckConfig, rng: &mut Rng) -> ModelParams {
    let mut p = ModelParams::zeros(cfg.feature_dim, cfg.widths);
    for block in p.blocks_mut() {
        for v in block.iter_mut() {
            *v = rng.uniform(-0.6, 0.6);
        }
    }
    // keep most units active so the checks see non-trivial paths
    for b in [&mut p.fc.bias, &mut p.gcn1.bias, &mut p.gcn2.bias] {
        for v in b.iter_mut() {
            *v = rng.uniform(0.05, 0.4);
        }
    }
    p
}

fn with_block(params: &ModelParams, block: usize, values: &[f64]) -> ModelParams {
    let mut p = params.clone();
    p.blocks_mut()[block].copy_from_slice(values);
    p
}

/// Runs `finite_diff_check` block by block.
fn check_blocks(
    name: &str,
    params: &ModelParams,
    grads: &ModelParams,
    step: f64,
    objective: impl Fn(&ModelParams) -> Result<f64>,
) -> Result<Vec<BlockCheck>> {
    let mut out = Vec::new();
    for (b, block) in BLOCK_NAMES.iter().enumerate() {
        let err = finite_diff_check(
            |x| objective(&with_block(params, b, x)),
            params.blocks()[b],
            grads.blocks()[b],
            step,
        )?;
        out.push(BlockCheck {
            check: name.to_string(),
            block,
            max_rel_error: err,
        });
    }
    Ok(out)
}

fn random_matrix(rows: usize, cols: usize, rng: &mut Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.normal())
}

pub fn run_gradcheck(cfg: &GradcheckConfig) -> Result<GradcheckReport> {
    let mut rng = Rng::new(cfg.seed);
    let params = random_params(cfg, &mut rng);
    let t = cfg.segments;
    let mut blocks = Vec::new();

    // The network with cotangents on scores and each tap layer.
    let features = random_matrix(t, cfg.feature_dim, &mut rng);
    let adj = GraphParams::default().build(&features)?;
    for tap in [TapLayer::Fc, TapLayer::Gcn1, TapLayer::Gcn2] {
        let trace = forward(&params, &features, &adj, false, 0.0, &mut Rng::new(0))?;
        let gs: Vec<f64> = (0..t).map(|_| rng.normal()).collect();
        let (r, c) = trace.tap(tap).shape();
        let gh = random_matrix(r, c, &mut rng);
        let grads = backward(&trace, &params, &gs, Some((tap, &gh)))?;
        let objective = |p: &ModelParams| {
            let tr = forward(p, &features, &adj, false, 0.0, &mut Rng::new(0))?;
            let s: f64 = tr.scores().iter().zip(&gs).map(|(a, b)| a * b).sum();
            let h: f64 = tr.tap(tap).as_slice().iter().zip(gh.as_slice()).map(|(a, b)| a * b).sum();
            Ok(s + h)
        };
        blocks.extend(check_blocks(&format!("model/{tap}"), &params, &grads, cfg.step, objective)?);
    }

    // Full objective on a batch of two normal and two abnormal videos.
    let videos: Vec<VideoSample> = (0..4)
        .map(|i| VideoSample {
            id: format!("g{i}"),
            features: random_matrix(t, cfg.feature_dim, &mut rng)
                .map(|v| if i >= 2 { v + 0.8 } else { v }),
            label: u8::from(i >= 2),
            frame_count: t * 16,
            anomaly_intervals: vec![],
        })
        .collect();
    let dataset = Dataset { videos };
    let hp = HyperParams {
        mu: 10.0,
        lambda1: 1.0,
        dropout_p: 0.0,
        batch_size: 4,
        ..HyperParams::default()
    };
    let config = TrainConfig {
        hp,
        widths: cfg.widths,
        strategy: Strategy::None,
        enable_bc: true,
        enable_bcg: false,
        segments: t,
        ..TrainConfig::default()
    };
    let set = TrainingSet::new(&dataset, &config)?;
    let batch = Batch {
        normal: vec![0, 1],
        abnormal: vec![2, 3],
    };
    let mut memory = CenterMemory::new(Strategy::None);
    let outcome = batch_gradients(&params, &set, &batch, &mut memory, &config, &Rng::new(cfg.seed))?;
    let frozen = [
        outcome.assignments_normal.clone().unwrap_or_default(),
        outcome.assignments_abnormal.clone().unwrap_or_default(),
    ];
    let objective = |p: &ModelParams| {
        let traces = batch
            .videos()
            .map(|vi| {
                let v = &set.videos[vi];
                forward(p, &v.features, &v.adjacency, false, 0.0, &mut Rng::new(0))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut kmax = 0.0;
        for (tr, vi) in traces.iter().zip(batch.videos()) {
            kmax += kmax_loss(tr.scores(), set.videos[vi].label)?.value / traces.len() as f64;
        }
        let mut bc = 0.0;
        for (k, class) in [VideoClass::Normal, VideoClass::Abnormal].into_iter().enumerate() {
            let taps: Vec<&Matrix> = traces[2 * k..2 * k + 2].iter().map(|tr| tr.tap(config.tap)).collect();
            let points = Matrix::vstack(&taps)?.l2_normalize_rows(NORM_EPSILON);
            let (centers, _) = cluster_means(&points, &frozen[k]);
            bc += center_distance_loss(&centers, class, &config.hp).value;
        }
        Ok(total_loss(kmax, bc, &config.hp))
    };
    blocks.extend(check_blocks("objective", &params, &outcome.grads, cfg.step, objective)?);

    Ok(GradcheckReport {
        tolerance: cfg.tolerance,
        blocks,
    })
}
