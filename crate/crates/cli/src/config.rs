//! The run configuration: every training, evaluation and generator setting
//! plus data paths, as flat `key = value` text.
//!
//! Sources are layered: built-in defaults, then a `--config` file, then
//! `--set key=value` pairs, then dedicated flags. Unknown keys are rejected.
//! [`RunConfig::to_text`] emits every key, so the printed header can be fed
//! back through `--config` to reproduce a run.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use wsvad_core::{LayerWidths, Strategy, SynthConfig, TapLayer, TrainConfig};

use crate::CliError;

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub synth: SynthConfig,
    pub train_data: Option<PathBuf>,
    pub test_data: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    /// Whether `strategy` was given explicitly rather than left at its default.
    strategy_explicit: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            synth: SynthConfig::default(),
            train_data: None,
            test_data: None,
            out_dir: None,
            strategy_explicit: false,
        }
    }
}

/// Every accepted key with a one-line description, in output order.
pub const KEYS: &[(&str, &str)] = &[
    ("seed", "seed for training, evaluation and the generator"),
    ("epochs", "training epochs"),
    ("segments", "segments sampled per training video"),
    ("batch_size", "videos per batch, half normal and half abnormal"),
    ("learning_rate", "Adam step size"),
    ("beta1", "Adam first-moment decay"),
    ("beta2", "Adam second-moment decay"),
    ("adam_eps", "Adam denominator epsilon"),
    ("dropout", "dropout probability after both hidden graph layers"),
    ("mu", "margin on the normal-class center distance"),
    ("lambda1", "weight of the batch clustering loss"),
    ("alpha", "score expansion factor of the guidance step"),
    ("epsilon_d", "stabilizer of the abnormal-class 1/(d+eps) term"),
    ("bc_loss", "batch clustering loss on|off"),
    ("strategy", "cross-batch memory strategy: none|way1|way2|way3|way4"),
    ("bcg", "cluster-guided score rectification during training on|off"),
    ("rectify_eval", "cluster-guided rectification at evaluation on|off (needs bcg)"),
    ("tap", "clustered layer: fc|gcn1|gcn2"),
    ("width_fc", "width of the input projection"),
    ("width_gcn1", "width of the first graph layer"),
    ("width_gcn2", "width of the second graph layer"),
    ("sigma_t", "temporal kernel width in segments, or auto for max(T/10, 1)"),
    ("sim_threshold", "cosine threshold of the similarity branch"),
    ("kmeans_max_iter", "K-means iteration cap"),
    ("kmeans_tol", "K-means center-movement tolerance"),
    ("eval_segments", "segments per evaluation video, or all"),
    ("eval_restarts", "K-means restarts per evaluation video"),
    ("feature_dim", "generator: feature dimension"),
    ("train_per_class", "generator: training videos per class"),
    ("test_per_class", "generator: test videos per class"),
    ("frames_min", "generator: shortest video in frames"),
    ("frames_max", "generator: longest video in frames"),
    ("separation", "generator: distance between normal and anomaly means"),
    ("mean_scale", "generator: per-coordinate scale of the random normal mean"),
    ("noise_sigma", "generator: per-segment noise"),
    ("drift_sigma", "generator: slow per-video drift"),
    ("interval_min", "generator: shortest anomaly interval in segments"),
    ("interval_max", "generator: longest anomaly interval in segments"),
    ("train_data", "training manifest"),
    ("test_data", "test or validation manifest"),
    ("out_dir", "output directory"),
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, CliError> {
    value
        .parse()
        .map_err(|_| CliError::Usage(format!("invalid value {value:?} for {key}")))
}

fn parse_switch(key: &str, value: &str) -> Result<bool, CliError> {
    match value {
        "on" | "true" | "1" | "yes" => Ok(true),
        "off" | "false" | "0" | "no" => Ok(false),
        _ => Err(CliError::Usage(format!("{key} expects on or off, got {value:?}"))),
    }
}

fn switch(v: bool) -> &'static str {
    if v {
        "on"
    } else {
        "off"
    }
}

fn path_or_none(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let t = &mut self.train;
        let s = &mut self.synth;
        match key {
            "seed" => {
                t.seed = parse(key, value)?;
                s.seed = t.seed;
            }
            "epochs" => t.epochs = parse(key, value)?,
            "segments" => t.segments = parse(key, value)?,
            "batch_size" => t.hp.batch_size = parse(key, value)?,
            "learning_rate" => t.hp.learning_rate = parse(key, value)?,
            "beta1" => t.hp.beta1 = parse(key, value)?,
            "beta2" => t.hp.beta2 = parse(key, value)?,
            "adam_eps" => t.hp.adam_eps = parse(key, value)?,
            "dropout" => t.hp.dropout_p = parse(key, value)?,
            "mu" => t.hp.mu = parse(key, value)?,
            "lambda1" => t.hp.lambda1 = parse(key, value)?,
            "alpha" => t.hp.alpha = parse(key, value)?,
            "epsilon_d" => t.hp.epsilon_d = parse(key, value)?,
            "bc_loss" => t.enable_bc = parse_switch(key, value)?,
            "strategy" => {
                t.strategy = parse::<Strategy>(key, value)?;
                self.strategy_explicit = true;
            }
            "bcg" => t.enable_bcg = parse_switch(key, value)?,
            "rectify_eval" => t.rectify_eval = parse_switch(key, value)?,
            "tap" => t.tap = parse::<TapLayer>(key, value)?,
            "width_fc" => t.widths.fc = parse(key, value)?,
            "width_gcn1" => t.widths.gcn1 = parse(key, value)?,
            "width_gcn2" => t.widths.gcn2 = parse(key, value)?,
            "sigma_t" => t.graph.sigma_t = if value == "auto" { None } else { Some(parse(key, value)?) },
            "sim_threshold" => t.graph.sim_threshold = parse(key, value)?,
            "kmeans_max_iter" => t.kmeans.max_iter = parse(key, value)?,
            "kmeans_tol" => t.kmeans.tol = parse(key, value)?,
            "eval_segments" => t.eval_segments = if value == "all" { None } else { Some(parse(key, value)?) },
            "eval_restarts" => t.eval_restarts = parse(key, value)?,
            "feature_dim" => s.feature_dim = parse(key, value)?,
            "train_per_class" => s.train_per_class = parse(key, value)?,
            "test_per_class" => s.test_per_class = parse(key, value)?,
            "frames_min" => s.frames.0 = parse(key, value)?,
            "frames_max" => s.frames.1 = parse(key, value)?,
            "separation" => s.separation = parse(key, value)?,
            "mean_scale" => s.mean_scale = parse(key, value)?,
            "noise_sigma" => s.noise_sigma = parse(key, value)?,
            "drift_sigma" => s.drift_sigma = parse(key, value)?,
            "interval_min" => s.interval_segments.0 = parse(key, value)?,
            "interval_max" => s.interval_segments.1 = parse(key, value)?,
            "train_data" => self.train_data = path_or_none(value),
            "test_data" => self.test_data = path_or_none(value),
            "out_dir" => self.out_dir = path_or_none(value),
            _ => return Err(CliError::Usage(format!("unknown configuration key {key:?}"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines; `#` starts a comment line.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<(), CliError> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("{origin}:{}: expected key=value, got {line:?}", n + 1)))?;
            self.set(k.trim(), v.trim())
                .map_err(|e| CliError::Usage(format!("{origin}:{}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        self.apply_text(&text, &path.display().to_string())
    }

    /// Turning the clustering loss off without naming a strategy also turns the
    /// memory off, since the memory only feeds that loss.
    pub fn finish(&mut self) -> Result<(), CliError> {
        if !self.train.enable_bc && !self.strategy_explicit {
            self.train.strategy = Strategy::None;
        }
        self.train.validate().map_err(CliError::from)?;
        Ok(())
    }

    pub fn get(&self, key: &str) -> String {
        let t = &self.train;
        let s = &self.synth;
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        match key {
            "seed" => t.seed.to_string(),
            "epochs" => t.epochs.to_string(),
            "segments" => t.segments.to_string(),
            "batch_size" => t.hp.batch_size.to_string(),
            "learning_rate" => t.hp.learning_rate.to_string(),
            "beta1" => t.hp.beta1.to_string(),
            "beta2" => t.hp.beta2.to_string(),
            "adam_eps" => t.hp.adam_eps.to_string(),
            "dropout" => t.hp.dropout_p.to_string(),
            "mu" => t.hp.mu.to_string(),
            "lambda1" => t.hp.lambda1.to_string(),
            "alpha" => t.hp.alpha.to_string(),
            "epsilon_d" => t.hp.epsilon_d.to_string(),
            "bc_loss" => switch(t.enable_bc).into(),
            "strategy" => t.strategy.to_string(),
            "bcg" => switch(t.enable_bcg).into(),
            "rectify_eval" => switch(t.rectify_eval).into(),
            "tap" => t.tap.to_string(),
            "width_fc" => t.widths.fc.to_string(),
            "width_gcn1" => t.widths.gcn1.to_string(),
            "width_gcn2" => t.widths.gcn2.to_string(),
            "sigma_t" => t.graph.sigma_t.map_or("auto".into(), |v| v.to_string()),
            "sim_threshold" => t.graph.sim_threshold.to_string(),
            "kmeans_max_iter" => t.kmeans.max_iter.to_string(),
            "kmeans_tol" => t.kmeans.tol.to_string(),
            "eval_segments" => t.eval_segments.map_or("all".into(), |v| v.to_string()),
            "eval_restarts" => t.eval_restarts.to_string(),
            "feature_dim" => s.feature_dim.to_string(),
            "train_per_class" => s.train_per_class.to_string(),
            "test_per_class" => s.test_per_class.to_string(),
            "frames_min" => s.frames.0.to_string(),
            "frames_max" => s.frames.1.to_string(),
            "separation" => s.separation.to_string(),
            "mean_scale" => s.mean_scale.to_string(),
            "noise_sigma" => s.noise_sigma.to_string(),
            "drift_sigma" => s.drift_sigma.to_string(),
            "interval_min" => s.interval_segments.0.to_string(),
            "interval_max" => s.interval_segments.1.to_string(),
            "train_data" => path(&self.train_data),
            "test_data" => path(&self.test_data),
            "out_dir" => path(&self.out_dir),
            _ => unreachable!("key table and getter disagree on {key}"),
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, _) in KEYS {
            let _ = writeln!(out, "{k}={}", self.get(k));
        }
        out
    }

    pub fn widths(&self) -> LayerWidths {
        self.train.widths
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let mut c = RunConfig::default();
        c.apply_text("seed=7\nmu = 0.25\n# comment\n\nstrategy=way3\nsigma_t=2.5\neval_segments=32\ntrain_data=a/b.manifest\n", "t")
            .unwrap();
        c.finish().unwrap();
        let mut back = RunConfig::default();
        back.apply_text(&c.to_text(), "t").unwrap();
        back.finish().unwrap();
        assert_eq!(back, c);
        assert_eq!(c.train.seed, 7);
        assert_eq!(c.synth.seed, 7);
        assert_eq!(c.train.graph.sigma_t, Some(2.5));
        assert_eq!(c.train_data.as_deref(), Some(Path::new("a/b.manifest")));
    }

    #[test]
    fn defaults_round_trip_exactly() {
        let c = RunConfig::default();
        let mut back = RunConfig::default();
        back.apply_text(&c.to_text(), "t").unwrap();
        assert_eq!(back.train, c.train);
        assert_eq!(back.synth, c.synth);
    }

    #[test]
    fn every_key_is_settable() {
        let reference = RunConfig::default();
        for (k, _) in KEYS {
            let mut c = RunConfig::default();
            c.set(k, &reference.get(k)).unwrap();
        }
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        let mut c = RunConfig::default();
        assert!(matches!(c.set("nope", "1"), Err(CliError::Usage(_))));
        assert!(c.set("mu", "abc").is_err());
        assert!(c.set("bcg", "maybe").is_err());
        assert!(c.set("strategy", "way9").is_err());
        let err = c.apply_text("seed=1\nbogus\n", "f.cfg").unwrap_err().to_string();
        assert!(err.contains("f.cfg:2"), "{err}");
    }

    #[test]
    fn disabling_bc_disables_an_implicit_strategy() {
        let mut c = RunConfig::default();
        c.set("bc_loss", "off").unwrap();
        c.finish().unwrap();
        assert_eq!(c.train.strategy, Strategy::None);

        let mut c = RunConfig::default();
        c.set("bc_loss", "off").unwrap();
        c.set("strategy", "way2").unwrap();
        assert!(c.finish().is_err());
    }
}
