//! Multi-seed comparisons of training configurations.
//!
//! Two standard families are provided: the component ladder (backbone, then
//! adding the clustering loss, the cross-batch memory and score guidance one
//! at a time) and the strategy family (full model with each memory strategy).
//! [`sensitivity_variants`] builds a μ × λ₁ grid of the full model.

use std::fmt::Write as _;

use crate::crossbatch::Strategy;
use crate::data::{generate_synthetic, Dataset, SynthConfig};
use crate::error::{Error, Result};
use crate::eval::evaluate;
use crate::training::{train, TrainConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct Variant {
    pub name: String,
    pub config: TrainConfig,
}

impl Variant {
    /// Names a configuration after its enabled components, e.g. `bc+way1+bcg`.
    pub fn from_config(config: TrainConfig) -> Self {
        let mut parts = Vec::new();
        if config.enable_bc {
            parts.push("bc".to_string());
        }
        if config.strategy != Strategy::None {
            parts.push(config.strategy.to_string());
        }
        if config.enable_bcg {
            parts.push("bcg".to_string());
        }
        let name = if parts.is_empty() { "backbone".to_string() } else { parts.join("+") };
        Self { name, config }
    }
}

fn with(base: &TrainConfig, strategy: Strategy, bc: bool, bcg: bool) -> Variant {
    Variant::from_config(TrainConfig {
        strategy,
        enable_bc: bc,
        enable_bcg: bcg,
        ..base.clone()
    })
}

/// Backbone, +clustering loss, +cross-batch memory (way1), +guidance.
pub fn component_variants(base: &TrainConfig) -> Vec<Variant> {
    vec![
        with(base, Strategy::None, false, false),
        with(base, Strategy::None, true, false),
        with(base, Strategy::Way1, true, false),
        with(base, Strategy::Way1, true, true),
    ]
}

/// The full model under every memory strategy, `none` included.
pub fn strategy_variants(base: &TrainConfig) -> Vec<Variant> {
    Strategy::ALL.iter().map(|&s| with(base, s, true, true)).collect()
}

/// Union of both families, without duplicates, in presentation order.
pub fn default_variants(base: &TrainConfig) -> Vec<Variant> {
    let mut out = component_variants(base);
    for v in strategy_variants(base) {
        if !out.iter().any(|o| o.name == v.name) {
            out.push(v);
        }
    }
    out
}

/// Full model over a μ × λ₁ grid.
pub fn sensitivity_variants(base: &TrainConfig, mus: &[f64], lambdas: &[f64]) -> Vec<Variant> {
    let mut out = Vec::new();
    for &mu in mus {
        for &lambda1 in lambdas {
            let mut config = base.clone();
            config.hp.mu = mu;
            config.hp.lambda1 = lambda1;
            out.push(Variant {
                name: format!("mu={mu} lambda1={lambda1}"),
                config,
            });
        }
    }
    out
}

/// Where each seed's data comes from.
#[derive(Clone, Debug)]
pub enum DataSource<'a> {
    /// One fixed train/test pair for every seed.
    Fixed { train: &'a Dataset, test: &'a Dataset },
    /// A fresh synthetic set per seed, generated with that seed.
    Synthetic(SynthConfig),
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRun {
    pub variant: String,
    pub seed: u64,
    pub auc: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VariantSummary {
    pub variant: String,
    pub aucs: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation; zero for a single seed.
    pub stdev: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationReport {
    pub seeds: Vec<u64>,
    pub runs: Vec<AblationRun>,
    pub summary: Vec<VariantSummary>,
}

impl AblationReport {
    pub fn get(&self, variant: &str) -> Option<&VariantSummary> {
        self.summary.iter().find(|s| s.variant == variant)
    }

    pub fn table(&self) -> String {
        let width = self.summary.iter().map(|s| s.variant.len()).max().unwrap_or(0).max(13);
        let mut out = format!("{:<width$}  {:>16}  seeds\n", "configuration", "AUC mean ± sd");
        for s in &self.summary {
            let _ = writeln!(
                out,
                "{:<width$}  {:>7.4} ± {:<6.4}  {}",
                s.variant,
                s.mean,
                s.stdev,
                s.aucs.len()
            );
        }
        out
    }

    pub fn runs_csv(&self) -> String {
        let mut out = String::from("configuration,seed,auc\n");
        for r in &self.runs {
            let _ = writeln!(out, "{},{},{}", r.variant, r.seed, r.auc);
        }
        out
    }
}

fn mean_stdev(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Trains and evaluates every variant for every seed. The seed drives both the
/// training run and, for [`DataSource::Synthetic`], the data.
pub fn run_ablation(
    variants: &[Variant],
    seeds: &[u64],
    data: &DataSource<'_>,
    mut on_run: impl FnMut(&AblationRun),
) -> Result<AblationReport> {
    if variants.is_empty() || seeds.is_empty() {
        return Err(Error::InvalidArgument("ablation needs at least one configuration and one seed".into()));
    }
    let mut runs = Vec::new();
    for &seed in seeds {
        let generated;
        let (train_set, test_set) = match data {
            DataSource::Fixed { train, test } => (*train, *test),
            DataSource::Synthetic(cfg) => {
                generated = generate_synthetic(&SynthConfig { seed, ..cfg.clone() })?;
                (&generated.0, &generated.1)
            }
        };
        for v in variants {
            let config = TrainConfig { seed, ..v.config.clone() };
            let (state, _) = train(&config, train_set, None)?;
            let auc = evaluate(&state.params, test_set, &config.eval_config())?.auc;
            let run = AblationRun {
                variant: v.name.clone(),
                seed,
                auc,
            };
            on_run(&run);
            runs.push(run);
        }
    }
    let summary = variants
        .iter()
        .map(|v| {
            let aucs: Vec<f64> = runs.iter().filter(|r| r.variant == v.name).map(|r| r.auc).collect();
            let (mean, stdev) = mean_stdev(&aucs);
            VariantSummary {
                variant: v.name.clone(),
                aucs,
                mean,
                stdev,
            }
        })
        .collect();
    Ok(AblationReport {
        seeds: seeds.to_vec(),
        runs,
        summary,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_follow_components() {
        let base = TrainConfig::default();
        let names: Vec<String> = default_variants(&base).into_iter().map(|v| v.name).collect();
        assert_eq!(
            names,
            [
                "backbone",
                "bc",
                "bc+way1",
                "bc+way1+bcg",
                "bc+bcg",
                "bc+way2+bcg",
                "bc+way3+bcg",
                "bc+way4+bcg"
            ]
        );
        assert_eq!(component_variants(&base)[0].config, TrainConfig::backbone());
        assert_eq!(component_variants(&base)[3].config, base);
    }

    #[test]
    fn summary_statistics() {
        assert_eq!(mean_stdev(&[0.5]), (0.5, 0.0));
        let (m, s) = mean_stdev(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 1.0).abs() < 1e-15);
    }

    #[test]
    fn tiny_run_is_deterministic() {
        let synth = SynthConfig {
            feature_dim: 6,
            train_per_class: 3,
            test_per_class: 2,
            frames: (320, 400),
            ..SynthConfig::default()
        };
        let mut base = TrainConfig::default();
        base.epochs = 1;
        base.hp.batch_size = 4;
        base.widths = crate::model::LayerWidths { fc: 8, gcn1: 6, gcn2: 4 };
        let variants = strategy_variants(&base);
        let a = run_ablation(&variants, &[0, 1], &DataSource::Synthetic(synth.clone()), |_| {}).unwrap();
        let b = run_ablation(&variants, &[0, 1], &DataSource::Synthetic(synth), |_| {}).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.runs.len(), 10);
        assert!(a.table().contains("bc+way4+bcg"));
        assert!(a.runs_csv().starts_with("configuration,seed,auc\nbc+bcg,0,"));
    }
}
