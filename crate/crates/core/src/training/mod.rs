//! The training loop: balanced batches, batch clustering, the combined
//! objective, manual backpropagation and Adam, organized in epochs that feed
//! the cross-batch center memory.

mod adam;
mod batches;
mod checkpoint;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use batches::{make_batches, Batch};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::clustering::{kmeans2, normalize_rows_backward, ClusterResult, KMeansParams};
use crate::crossbatch::{CenterMemory, Strategy, VideoClass};
use crate::data::{uniform_sample_segments, Dataset};
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalConfig};
use crate::graph::{Adjacency, GraphParams};
use crate::guidance::{orient_pseudo_labels, rectify_scores};
use crate::losses::{batch_cluster_loss, kmax_loss, total_loss, HyperParams};
use crate::model::{backward, forward, init_params, LayerWidths, ModelParams, ParamGrads, TapLayer};
use crate::numcore::{Matrix, Rng, NORM_EPSILON};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub hp: HyperParams,
    pub widths: LayerWidths,
    pub graph: GraphParams,
    /// Layer whose output is clustered.
    pub tap: TapLayer,
    /// Cross-batch strategy; anything but `None` enables cross-batch learning.
    pub strategy: Strategy,
    /// Batch-clustering loss.
    pub enable_bc: bool,
    /// Cluster-guided score rectification during training.
    pub enable_bcg: bool,
    /// Cluster-guided rectification when computing validation AUC.
    pub rectify_eval: bool,
    pub epochs: usize,
    pub seed: u64,
    /// Segments sampled uniformly from every training video.
    pub segments: usize,
    pub kmeans: KMeansParams,
    /// Segments per validation video; `None` keeps all raw segments.
    pub eval_segments: Option<usize>,
    pub eval_restarts: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hp: HyperParams::default(),
            widths: LayerWidths::default(),
            graph: GraphParams::default(),
            tap: TapLayer::Gcn1,
            strategy: Strategy::Way1,
            enable_bc: true,
            enable_bcg: true,
            rectify_eval: true,
            epochs: 50,
            seed: 0,
            segments: 64,
            kmeans: KMeansParams::default(),
            eval_segments: None,
            eval_restarts: 3,
        }
    }
}

impl TrainConfig {
    /// Backbone only: no clustering loss, no memory, no guidance.
    pub fn backbone() -> Self {
        Self {
            strategy: Strategy::None,
            enable_bc: false,
            enable_bcg: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.hp.validate()?;
        if self.strategy != Strategy::None && !self.enable_bc {
            return Err(Error::InvalidArgument(format!(
                "cross-batch strategy {} requires the batch clustering loss",
                self.strategy
            )));
        }
        if self.segments == 0 {
            return Err(Error::InvalidArgument("segments per video must be positive".into()));
        }
        if self.eval_segments == Some(0) {
            return Err(Error::InvalidArgument("evaluation segments must be positive".into()));
        }
        if self.kmeans.max_iter == 0 {
            return Err(Error::InvalidArgument("K-means needs at least one iteration".into()));
        }
        if let Some(s) = self.graph.sigma_t {
            if !(s > 0.0) {
                return Err(Error::InvalidArgument(format!("sigma_t must be positive, got {s}")));
            }
        }
        if !(-1.0..1.0).contains(&self.graph.sim_threshold) {
            return Err(Error::InvalidArgument(format!(
                "similarity threshold must lie in [-1, 1), got {}",
                self.graph.sim_threshold
            )));
        }
        Ok(())
    }

    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig {
            rectify: self.enable_bcg && self.rectify_eval,
            alpha: self.hp.alpha,
            tap: self.tap,
            graph: self.graph,
            segments: self.eval_segments,
            kmeans: self.kmeans,
            restarts: self.eval_restarts,
            seed: self.seed,
        }
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.hp.learning_rate,
            beta1: self.hp.beta1,
            beta2: self.hp.beta2,
            eps: self.hp.adam_eps,
        }
    }
}

/// Everything that evolves during training.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub params: ModelParams,
    pub adam: AdamState,
    pub memory: CenterMemory,
    /// Completed epochs.
    pub epoch: usize,
}

const INIT_STREAM: u64 = 0;
const EPOCH_STREAM: u64 = 1_000;

impl TrainState {
    pub fn new(config: &TrainConfig, feature_dim: usize) -> Result<Self> {
        let mut rng = Rng::new(config.seed).derive(INIT_STREAM);
        let params = init_params(feature_dim, config.widths, &mut rng)?;
        Ok(Self {
            adam: AdamState::new(&params),
            params,
            memory: CenterMemory::new(config.strategy),
            epoch: 0,
        })
    }
}

/// A training video after segment sampling, with its graph.
#[derive(Clone, Debug)]
pub struct PreparedVideo {
    pub features: Matrix,
    pub adjacency: Adjacency,
    pub label: u8,
}

/// Training videos sampled to a fixed length, plus the dataset for batching.
#[derive(Clone, Debug)]
pub struct TrainingSet {
    pub dataset: Dataset,
    pub videos: Vec<PreparedVideo>,
}

impl TrainingSet {
    pub fn new(dataset: &Dataset, config: &TrainConfig) -> Result<Self> {
        dataset.validate()?;
        let videos = dataset
            .videos
            .par_iter()
            .map(|v| {
                let features = uniform_sample_segments(v, config.segments)?;
                let adjacency = config.graph.build(&features)?;
                Ok(PreparedVideo {
                    features,
                    adjacency,
                    label: v.label,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            dataset: dataset.clone(),
            videos,
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.dataset.feature_dim()
    }
}

/// Loss components and gradient of one batch.
#[derive(Clone, Debug)]
pub struct BatchOutcome {
    pub loss_total: f64,
    pub loss_kmax: f64,
    pub loss_bc_normal: Option<f64>,
    pub loss_bc_abnormal: Option<f64>,
    pub d_normal: Option<f64>,
    pub d_abnormal: Option<f64>,
    /// Cluster index of every pooled segment, when the class was clustered.
    pub assignments_normal: Option<Vec<u8>>,
    pub assignments_abnormal: Option<Vec<u8>>,
    pub grads: ParamGrads,
}

/// Per-epoch averages over batches. Components that were not computed are NaN.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub loss_total: f64,
    pub loss_kmax: f64,
    pub loss_bc_normal: f64,
    pub loss_bc_abnormal: f64,
    pub d_normal_mean: f64,
    pub d_abnormal_mean: f64,
    pub val_auc: Option<f64>,
}

pub const METRICS_HEADER: &str =
    "epoch,loss_total,loss_kmax,loss_bc_normal,loss_bc_abnormal,d_normal_mean,d_abnormal_mean,val_auc";

impl EpochMetrics {
    pub fn csv_row(&self) -> String {
        let mut s = format!(
            "{},{},{},{},{},{},{},",
            self.epoch,
            self.loss_total,
            self.loss_kmax,
            self.loss_bc_normal,
            self.loss_bc_abnormal,
            self.d_normal_mean,
            self.d_abnormal_mean
        );
        if let Some(auc) = self.val_auc {
            let _ = write!(s, "{auc}");
        }
        s
    }
}

pub fn metrics_csv(rows: &[EpochMetrics]) -> String {
    let mut out = format!("{METRICS_HEADER}\n");
    for r in rows {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

struct ClassClustering {
    result: ClusterResult,
    raw: Matrix,
    /// Row offset of each pooled video.
    offsets: Vec<usize>,
}

fn cluster_class(
    traces: &[crate::model::ForwardTrace],
    positions: &[usize],
    class: VideoClass,
    memory: &mut CenterMemory,
    config: &TrainConfig,
    rng: &mut Rng,
) -> Result<ClassClustering> {
    let blocks: Vec<&Matrix> = positions.iter().map(|&p| traces[p].tap(config.tap)).collect();
    let mut offsets = Vec::with_capacity(blocks.len() + 1);
    let mut acc = 0;
    for b in &blocks {
        offsets.push(acc);
        acc += b.rows();
    }
    offsets.push(acc);
    let raw = Matrix::vstack(&blocks)?;
    let points = raw.l2_normalize_rows(NORM_EPSILON);
    let (init, extra) = memory.derive_init(class, rng)?;
    let result = kmeans2(&points, &init, extra.as_ref(), config.kmeans, rng)?;
    if config.strategy != Strategy::None {
        memory.push_centers(class, result.centers[0].clone(), result.centers[1].clone())?;
    }
    Ok(ClassClustering { result, raw, offsets })
}

/// Forward pass, clustering, losses and backward pass for one batch. Updates
/// the center memory but not the parameters.
pub fn batch_gradients(
    params: &ModelParams,
    set: &TrainingSet,
    batch: &Batch,
    memory: &mut CenterMemory,
    config: &TrainConfig,
    rng: &Rng,
) -> Result<BatchOutcome> {
    let hp = &config.hp;
    let members: Vec<usize> = batch.videos().collect();
    let n = members.len();
    let traces = members
        .par_iter()
        .enumerate()
        .map(|(pos, &vi)| {
            let v = &set.videos[vi];
            let mut drop_rng = rng.derive(100 + pos as u64);
            forward(params, &v.features, &v.adjacency, true, hp.dropout_p, &mut drop_rng)
        })
        .collect::<Result<Vec<_>>>()?;

    let normal_pos: Vec<usize> = (0..batch.normal.len()).collect();
    let abnormal_pos: Vec<usize> = (batch.normal.len()..n).collect();

    let mut cluster_rng = rng.derive(1);
    let normal = if config.enable_bc {
        Some(cluster_class(&traces, &normal_pos, VideoClass::Normal, memory, config, &mut cluster_rng)?)
    } else {
        None
    };
    let abnormal = if config.enable_bc || config.enable_bcg {
        Some(cluster_class(&traces, &abnormal_pos, VideoClass::Abnormal, memory, config, &mut cluster_rng)?)
    } else {
        None
    };

    // Tap cotangents from the clustering loss.
    let mut tap_grads: Vec<Option<Matrix>> = vec![None; n];
    let mut bc = [None, None];
    if config.enable_bc {
        for (slot, (class, clustering, positions)) in [
            (VideoClass::Normal, normal.as_ref().unwrap(), &normal_pos),
            (VideoClass::Abnormal, abnormal.as_ref().unwrap(), &abnormal_pos),
        ]
        .into_iter()
        .enumerate()
        {
            let loss = batch_cluster_loss(&clustering.result, class, hp);
            bc[slot] = Some(loss.value);
            let scaled = [
                loss.grad_centers[0].iter().map(|g| g * hp.lambda1).collect(),
                loss.grad_centers[1].iter().map(|g| g * hp.lambda1).collect(),
            ];
            let on_points = clustering.result.pull_back(&scaled);
            let on_raw = normalize_rows_backward(&clustering.raw, &on_points, NORM_EPSILON)?;
            for (k, &pos) in positions.iter().enumerate() {
                let (s, e) = (clustering.offsets[k], clustering.offsets[k + 1]);
                tap_grads[pos] = Some(on_raw.row_range(s, e));
            }
        }
    }

    // k-max loss, on rectified scores for abnormal videos when guidance is on.
    let mut loss_kmax = 0.0;
    let mut score_grads = Vec::with_capacity(n);
    for (pos, trace) in traces.iter().enumerate() {
        let label = set.videos[members[pos]].label;
        let mut scores = trace.scores().to_vec();
        if config.enable_bcg && label == 1 {
            let clustering = abnormal.as_ref().unwrap();
            if clustering.result.center_distance > 0.0 {
                let k = pos - batch.normal.len();
                let labels = clustering.result.labels(clustering.offsets[k], clustering.offsets[k + 1]);
                let pseudo = orient_pseudo_labels(&scores, labels)?;
                scores = rectify_scores(&scores, label, &pseudo.labels, hp.alpha)?;
            }
        }
        let l = kmax_loss(&scores, label)?;
        loss_kmax += l.value / n as f64;
        // straight-through: the rectification factor is treated as detached
        score_grads.push(l.grad_scores.into_iter().map(|g| g / n as f64).collect::<Vec<_>>());
    }

    let bc_sum = bc[0].unwrap_or(0.0) + bc[1].unwrap_or(0.0);
    let loss_total = total_loss(loss_kmax, bc_sum, hp);
    if !loss_total.is_finite() {
        return Err(Error::NonFinite(format!(
            "training loss (k-max {loss_kmax}, clustering {bc_sum})"
        )));
    }

    let per_video = traces
        .par_iter()
        .enumerate()
        .map(|(pos, trace)| {
            let tap = tap_grads[pos].as_ref().map(|g| (config.tap, g));
            backward(trace, params, &score_grads[pos], tap)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut grads = params.zeros_like();
    for g in &per_video {
        grads.add_scaled(g, 1.0)?;
    }

    Ok(BatchOutcome {
        loss_total,
        loss_kmax,
        loss_bc_normal: bc[0],
        loss_bc_abnormal: bc[1],
        d_normal: normal.as_ref().map(|c| c.result.center_distance),
        d_abnormal: abnormal.as_ref().map(|c| c.result.center_distance),
        assignments_normal: normal.map(|c| c.result.assignments),
        assignments_abnormal: abnormal.map(|c| c.result.assignments),
        grads,
    })
}

fn mean_of(values: &[Option<f64>]) -> f64 {
    let present: Vec<f64> = values.iter().flatten().copied().collect();
    if present.is_empty() {
        f64::NAN
    } else {
        present.iter().sum::<f64>() / present.len() as f64
    }
}

/// Runs one epoch and advances `state.epoch`.
pub fn train_epoch(
    state: &mut TrainState,
    set: &TrainingSet,
    config: &TrainConfig,
    val: Option<&Dataset>,
) -> Result<EpochMetrics> {
    let epoch_rng = Rng::new(config.seed).derive(EPOCH_STREAM + state.epoch as u64);
    let batches = make_batches(&set.dataset, config.hp.batch_size, &mut epoch_rng.derive(0))?;
    let mut outcomes = Vec::with_capacity(batches.len());
    for (b, batch) in batches.iter().enumerate() {
        let batch_rng = epoch_rng.derive(1 + b as u64);
        let out = batch_gradients(&state.params, set, batch, &mut state.memory, config, &batch_rng)?;
        adam_step(&mut state.params, &out.grads, &mut state.adam, config.adam())?;
        if !state.params.is_finite() {
            return Err(Error::NonFinite(format!(
                "parameters after epoch {} batch {b}",
                state.epoch
            )));
        }
        outcomes.push(out);
    }
    state.memory.rollover_epoch();
    state.epoch += 1;

    let collect = |f: fn(&BatchOutcome) -> Option<f64>| outcomes.iter().map(f).collect::<Vec<_>>();
    let val_auc = match val {
        Some(ds) => Some(evaluate(&state.params, ds, &config.eval_config())?.auc),
        None => None,
    };
    Ok(EpochMetrics {
        epoch: state.epoch,
        loss_total: mean_of(&collect(|o| Some(o.loss_total))),
        loss_kmax: mean_of(&collect(|o| Some(o.loss_kmax))),
        loss_bc_normal: mean_of(&collect(|o| o.loss_bc_normal)),
        loss_bc_abnormal: mean_of(&collect(|o| o.loss_bc_abnormal)),
        d_normal_mean: mean_of(&collect(|o| o.d_normal)),
        d_abnormal_mean: mean_of(&collect(|o| o.d_abnormal)),
        val_auc,
    })
}

/// Trains until `config.epochs` epochs are complete, calling `on_epoch` after each.
pub fn train_until(
    state: &mut TrainState,
    set: &TrainingSet,
    config: &TrainConfig,
    val: Option<&Dataset>,
    mut on_epoch: impl FnMut(&TrainState, &EpochMetrics) -> Result<()>,
) -> Result<Vec<EpochMetrics>> {
    config.validate()?;
    if state.params.feature_dim() != set.feature_dim() {
        return Err(Error::Incompatible(format!(
            "model expects {} features, data has {}",
            state.params.feature_dim(),
            set.feature_dim()
        )));
    }
    let mut metrics = Vec::new();
    while state.epoch < config.epochs {
        let m = train_epoch(state, set, config, val)?;
        on_epoch(state, &m)?;
        metrics.push(m);
    }
    Ok(metrics)
}

/// Fresh training run.
pub fn train(
    config: &TrainConfig,
    train_set: &Dataset,
    val: Option<&Dataset>,
) -> Result<(TrainState, Vec<EpochMetrics>)> {
    config.validate()?;
    let set = TrainingSet::new(train_set, config)?;
    let mut state = TrainState::new(config, set.feature_dim())?;
    let metrics = train_until(&mut state, &set, config, val, |_, _| Ok(()))?;
    Ok((state, metrics))
}
