//! Weakly supervised anomaly scoring of segment sequences.
//!
//! A small graph-convolutional network scores every segment of a video. It is
//! trained from video-level labels only, with
//!
//! * a k-max multiple-instance loss over the highest-scoring segments,
//! * a batch-clustering loss that pulls the two K-means centers of normal
//!   segments together and pushes those of abnormal segments apart,
//! * a cross-batch memory of past centers that seeds the clustering, and
//! * cluster-guided expansion of the scores of likely anomalous segments.
//!
//! Evaluation expands segment scores to frames and reports ROC-AUC.

pub mod ablation;
pub mod clustering;
mod codec;
pub mod crossbatch;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod eval;
pub mod graph;
pub mod guidance;
pub mod losses;
pub mod model;
pub mod numcore;
pub mod training;

pub use clustering::{kmeans2, kmeans2_restarts, prepare_points, ClusterResult, InitStrategy, KMeansParams};
pub use crossbatch::{CenterMemory, Strategy, VideoClass};
pub use data::{generate_synthetic, load_dataset, save_dataset, Dataset, SynthConfig, VideoSample};
pub use error::{Error, ErrorKind, Result};
pub use eval::{evaluate, roc_auc, EvalConfig, EvalReport};
pub use graph::{Adjacency, GraphParams};
pub use losses::HyperParams;
pub use model::{LayerWidths, ModelParams, ParamGrads, TapLayer};
pub use numcore::{Matrix, Rng};
pub use training::{train, EpochMetrics, TrainConfig, TrainState};
