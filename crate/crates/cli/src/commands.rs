use std::fs;
use std::path::{Path, PathBuf};

use wsvad_core::ablation::{
    component_variants, default_variants, run_ablation, sensitivity_variants, strategy_variants,
    AblationReport, DataSource, Variant,
};
use wsvad_core::diagnostics::{run_gradcheck, GradcheckConfig};
use wsvad_core::training::{
    load_checkpoint, save_checkpoint, train_until, Checkpoint, EpochMetrics, TrainingSet, METRICS_HEADER,
};
use wsvad_core::{evaluate, generate_synthetic, load_dataset, save_dataset, Dataset, ModelParams, TrainState};

use crate::config::{RunConfig, KEYS};
use crate::{AblateArgs, CliError, EvalArgs, GradcheckArgs, SweepArgs, SynthArgs, TrainArgs};

fn print_header(command: &str, cfg: &RunConfig) {
    println!("# wsvad {command}: resolved configuration");
    print!("{}", cfg.to_text());
    println!("#");
}

fn path_pair(key: &'static str, p: &Option<PathBuf>) -> Option<(&'static str, String)> {
    p.as_ref().map(|p| (key, p.display().to_string()))
}

fn require<'a>(p: &'a Option<PathBuf>, what: &str) -> Result<&'a Path, CliError> {
    p.as_deref().ok_or_else(|| CliError::Usage(format!("missing {what}")))
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir)
        .map_err(|e| CliError::Core(wsvad_core::Error::Io { path: dir.to_path_buf(), source: e }))
}

fn write_file(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    fs::write(path, contents)
        .map_err(|e| CliError::Core(wsvad_core::Error::Io { path: path.to_path_buf(), source: e }))
}

pub fn synth(args: SynthArgs) -> Result<(), CliError> {
    let mut extra: Vec<(&str, String)> = path_pair("out_dir", &args.out).into_iter().collect();
    if let Some(s) = args.separation {
        extra.push(("separation", s.to_string()));
    }
    if let Some(d) = args.feature_dim {
        extra.push(("feature_dim", d.to_string()));
    }
    let cfg = args.config.resolve(RunConfig::default(), &extra)?;
    print_header("synth", &cfg);
    let out = require(&cfg.out_dir, "output directory (--out)")?;
    let (train, test) = generate_synthetic(&cfg.synth)?;
    create_dir(out)?;
    for (ds, name) in [(&train, "train"), (&test, "test")] {
        let manifest = save_dataset(ds, out, name)?;
        println!("wrote {} videos to {}", ds.len(), manifest.display());
    }
    Ok(())
}

/// Rows of an earlier metrics.csv up to and including `epoch`, so a resumed
/// run continues the same file.
fn previous_rows(path: &Path, epoch: usize) -> Vec<String> {
    let Ok(text) = fs::read_to_string(path) else {
        return Vec::new();
    };
    text.lines()
        .skip(1)
        .filter(|l| l.split(',').next().and_then(|e| e.parse::<usize>().ok()).is_some_and(|e| e <= epoch))
        .map(str::to_string)
        .collect()
}

fn metrics_text(rows: &[String]) -> String {
    let mut out = format!("{METRICS_HEADER}\n");
    for r in rows {
        out.push_str(r);
        out.push('\n');
    }
    out
}

/// Writes next to the target and renames, so an interrupted run never leaves
/// a truncated checkpoint behind.
fn save_atomically(path: &Path, ck: &Checkpoint) -> Result<(), CliError> {
    let tmp = path.with_extension("ckpt.tmp");
    save_checkpoint(&tmp, ck)?;
    fs::rename(&tmp, path).map_err(|e| CliError::Core(wsvad_core::Error::Io { path: path.to_path_buf(), source: e }))
}

fn fmt_opt(v: f64) -> String {
    if v.is_nan() {
        "-".into()
    } else {
        format!("{v:.4}")
    }
}

pub fn train(args: TrainArgs) -> Result<(), CliError> {
    let resumed = args.resume.as_deref().map(load_checkpoint).transpose()?;
    if resumed.is_some() && args.zero_init {
        return Err(CliError::Usage("--zero-init cannot be combined with --resume".into()));
    }
    let mut base = RunConfig::default();
    if let Some(text) = resumed.as_ref().and_then(|c| c.config_text.as_deref()) {
        base.apply_text(text, "checkpoint configuration")?;
    }
    let mut extra = args.model.pairs();
    extra.extend(path_pair("train_data", &args.train));
    extra.extend(path_pair("test_data", &args.val));
    extra.extend(path_pair("out_dir", &args.out));
    let cfg = args.config.resolve(base, &extra)?;
    print_header("train", &cfg);

    let out = require(&cfg.out_dir, "output directory (--out)")?.to_path_buf();
    let train_set = load_dataset(require(&cfg.train_data, "training manifest (--train)")?)?;
    let val = cfg.test_data.as_deref().map(load_dataset).transpose()?;
    let set = TrainingSet::new(&train_set, &cfg.train)?;

    let mut state = match resumed {
        Some(ck) => ck
            .into_state()
            .ok_or_else(|| CliError::Usage("checkpoint holds no training state".into()))?,
        None => TrainState::new(&cfg.train, set.feature_dim())?,
    };
    if args.zero_init {
        state.params = ModelParams::zeros(set.feature_dim(), cfg.widths());
    }
    if state.params.widths() != cfg.widths() {
        return Err(CliError::Usage("layer widths differ from the checkpoint".into()));
    }
    if state.memory.strategy() != cfg.train.strategy {
        return Err(CliError::Usage(format!(
            "checkpoint was trained with strategy {}, not {}",
            state.memory.strategy(),
            cfg.train.strategy
        )));
    }

    create_dir(&out)?;
    let metrics_path = out.join("metrics.csv");
    let ckpt_path = out.join("model.ckpt");
    let config_text = cfg.to_text();
    let mut rows = if state.epoch > 0 { previous_rows(&metrics_path, state.epoch) } else { Vec::new() };
    if state.epoch > 0 {
        println!("resuming after epoch {}", state.epoch);
    }
    let epochs = cfg.train.epochs;
    train_until(&mut state, &set, &cfg.train, val.as_ref(), |st, m: &EpochMetrics| {
        println!(
            "epoch {:>3}/{epochs}  loss {:.4}  kmax {:.4}  bc_normal {}  bc_abnormal {}  val_auc {}",
            m.epoch,
            m.loss_total,
            m.loss_kmax,
            fmt_opt(m.loss_bc_normal),
            fmt_opt(m.loss_bc_abnormal),
            m.val_auc.map_or("-".into(), |a| format!("{a:.4}"))
        );
        rows.push(m.csv_row());
        let ck = Checkpoint::from_state(st, Some(config_text.clone()));
        save_atomically(&ckpt_path, &ck).map_err(|e| match e {
            CliError::Core(c) => c,
            other => wsvad_core::Error::InvalidArgument(other.to_string()),
        })?;
        fs::write(&metrics_path, metrics_text(&rows))
            .map_err(|e| wsvad_core::Error::Io { path: metrics_path.clone(), source: e })
    })?;
    // also covers runs with nothing left to train
    save_atomically(&ckpt_path, &Checkpoint::from_state(&state, Some(config_text)))?;
    write_file(&metrics_path, metrics_text(&rows).as_bytes())?;
    println!("wrote {} and {}", ckpt_path.display(), metrics_path.display());
    Ok(())
}

pub fn eval(args: EvalArgs) -> Result<(), CliError> {
    let ck = load_checkpoint(&args.checkpoint)?;
    let mut base = RunConfig::default();
    if let Some(text) = &ck.config_text {
        base.apply_text(text, "checkpoint configuration")?;
    }
    let mut extra: Vec<(&str, String)> = path_pair("test_data", &args.data).into_iter().collect();
    if let Some(r) = &args.rectify_eval {
        extra.push(("rectify_eval", r.clone()));
    }
    if let Some(a) = args.alpha {
        extra.push(("alpha", a.to_string()));
    }
    let cfg = args.config.resolve(base, &extra)?;
    print_header("eval", &cfg);

    let data = load_dataset(require(&cfg.test_data, "dataset to score (--data)")?)?;
    let report = evaluate(&ck.params, &data, &cfg.train.eval_config())?;
    let per_video: Vec<f64> = report.per_video_auc().into_iter().flatten().collect();
    println!("videos {}  frames {}", report.videos.len(), report.videos.iter().map(|v| v.frame_scores.len()).sum::<usize>());
    if !per_video.is_empty() {
        println!(
            "mean per-video AUC {:.6} over {} videos with both classes",
            per_video.iter().sum::<f64>() / per_video.len() as f64,
            per_video.len()
        );
    }
    println!("AUC {:.6}", report.auc);

    let out = match (&args.out, &cfg.out_dir) {
        (Some(p), _) => p.clone(),
        (None, Some(dir)) => dir.join("scores.csv"),
        (None, None) => args.checkpoint.parent().unwrap_or(Path::new(".")).join("scores.csv"),
    };
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    report.write_scores_csv(&out)?;
    println!("wrote {}", out.display());
    Ok(())
}

fn comparison_data(cfg: &RunConfig) -> Result<Option<(Dataset, Dataset)>, CliError> {
    match (&cfg.train_data, &cfg.test_data) {
        (Some(tr), Some(te)) => Ok(Some((load_dataset(tr)?, load_dataset(te)?))),
        (None, None) => Ok(None),
        _ => Err(CliError::Usage("give both a training and a test manifest, or neither".into())),
    }
}

fn run_comparison(
    cfg: &RunConfig,
    variants: &[Variant],
    seeds: usize,
    out: Option<&Path>,
) -> Result<AblationReport, CliError> {
    if seeds == 0 {
        return Err(CliError::Usage("--seeds must be at least 1".into()));
    }
    let seeds: Vec<u64> = (0..seeds as u64).map(|i| cfg.train.seed + i).collect();
    let loaded = comparison_data(cfg)?;
    let data = match &loaded {
        Some((train, test)) => DataSource::Fixed { train, test },
        None => DataSource::Synthetic(cfg.synth.clone()),
    };
    for v in variants {
        v.config.validate()?;
    }
    let width = variants.iter().map(|v| v.name.len()).max().unwrap_or(0);
    let report = run_ablation(variants, &seeds, &data, |r| {
        println!("  {:<width$}  seed {:>3}  AUC {:.4}", r.variant, r.seed, r.auc)
    })?;
    println!();
    print!("{}", report.table());
    if let Some(dir) = out {
        create_dir(dir)?;
        write_file(&dir.join("ablation.csv"), report.runs_csv().as_bytes())?;
        write_file(&dir.join("summary.txt"), report.table().as_bytes())?;
        println!("wrote {}", dir.join("ablation.csv").display());
    }
    Ok(report)
}

pub fn ablate(args: AblateArgs) -> Result<(), CliError> {
    let mut extra = args.model.pairs();
    extra.extend(path_pair("train_data", &args.train));
    extra.extend(path_pair("test_data", &args.test));
    extra.extend(path_pair("out_dir", &args.out));
    let cfg = args.config.resolve(RunConfig::default(), &extra)?;
    print_header("ablate", &cfg);
    let variants = match args.family.as_str() {
        "components" => component_variants(&cfg.train),
        "strategies" => strategy_variants(&cfg.train),
        _ => default_variants(&cfg.train),
    };
    run_comparison(&cfg, &variants, args.seeds, cfg.out_dir.as_deref())?;
    Ok(())
}

pub fn sweep(args: SweepArgs) -> Result<(), CliError> {
    let mut extra = args.model.pairs();
    extra.extend(path_pair("train_data", &args.train));
    extra.extend(path_pair("test_data", &args.test));
    extra.extend(path_pair("out_dir", &args.out));
    let cfg = args.config.resolve(RunConfig::default(), &extra)?;
    print_header("sweep", &cfg);
    if args.mu_values.is_empty() || args.lambda1_values.is_empty() {
        return Err(CliError::Usage("the sweep needs at least one mu and one lambda1 value".into()));
    }
    let variants = sensitivity_variants(&cfg.train, &args.mu_values, &args.lambda1_values);
    run_comparison(&cfg, &variants, args.seeds, cfg.out_dir.as_deref())?;
    Ok(())
}

pub fn gradcheck(args: GradcheckArgs) -> Result<(), CliError> {
    let cfg = GradcheckConfig {
        seed: args.seed,
        tolerance: args.tolerance,
        step: args.step,
        ..GradcheckConfig::default()
    };
    let w = cfg.widths;
    println!("# wsvad gradcheck: resolved configuration");
    println!("seed={}\ntolerance={}\nstep={}", cfg.seed, cfg.tolerance, cfg.step);
    println!(
        "segments={}\nfeature_dim={}\nwidths={}/{}/{}/1\n#",
        cfg.segments, cfg.feature_dim, w.fc, w.gcn1, w.gcn2
    );
    let report = run_gradcheck(&cfg)?;
    println!("{:<12} {:<12} max_rel_error", "check", "block");
    for b in &report.blocks {
        let flag = if b.max_rel_error < report.tolerance { "" } else { "  FAIL" };
        println!("{:<12} {:<12} {:.3e}{flag}", b.check, b.block, b.max_rel_error);
    }
    println!("max relative error {:.3e} (tolerance {:e})", report.max_error(), report.tolerance);
    if report.passed() {
        Ok(())
    } else {
        Err(CliError::Failed(format!(
            "gradient check failed: max relative error {:.3e} exceeds {:e}",
            report.max_error(),
            report.tolerance
        )))
    }
}

pub fn keys() {
    let defaults = RunConfig::default();
    for (k, desc) in KEYS {
        println!("{:<28} # {desc}", format!("{k}={}", defaults.get(k)));
    }
}
