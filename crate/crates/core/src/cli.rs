//! Command implementations behind the `addnet` binary.
//!
//! Every command seeds all randomness from a single `--seed` flag and
//! writes a `manifest.json` beside its artifacts, so reruns with the same
//! flags reproduce every output byte for byte.

use crate::compress::{
    compression_rate, forward_quantized, fraction_for_rate, prune_sign_retain, quantize_q8,
    write_compressed, ReplacementMagnitude,
};
use crate::data::drift::{load_drift_batches, NUM_BATCHES};
use crate::data::ir_synth::{gen_ir_dataset, read_ir_csv, IrSynthConfig};
use crate::data::mixtures::{
    extract_single_analyte_segments, load_mixture_series, normalize_instance, MixtureSchema,
};
use crate::data::{signed_sqrt_transform, LabeledSet};
use crate::error::{err_fmt, Error, Result};
use crate::gan::{
    adversarial_phase, multiclass_adversarial_phase, GanConfig, OutputSquash,
};
use crate::layers::{forward_eval, init_network, LayerState, NetworkSpec};
use crate::metrics::MetricsReport;
use crate::model_io::{load_model, save_model};
use crate::presets;
use crate::rng::Rng;
use crate::training::{evaluate, logits_to_predictions, pseudo_label_adapt, train, TrainConfig};
use clap::ValueEnum;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

pub const DATA_DIR_ENV: &str = "ADDNET_DATA_DIR";

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    IrSynth,
    Mixtures,
    Drift,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Model {
    Convnet,
    Addnet,
    Mlp,
    Discgan,
    AddnetDiscgan,
}

impl Model {
    pub fn uses_md(self) -> bool {
        matches!(self, Model::Addnet | Model::AddnetDiscgan)
    }

    pub fn is_gan(self) -> bool {
        matches!(self, Model::Discgan | Model::AddnetDiscgan)
    }
}

fn task_name(task: Task) -> &'static str {
    match task {
        Task::IrSynth => "ir-synth",
        Task::Mixtures => "mixtures",
        Task::Drift => "drift",
    }
}

fn model_name(model: Model) -> &'static str {
    match model {
        Model::Convnet => "convnet",
        Model::Addnet => "addnet",
        Model::Mlp => "mlp",
        Model::Discgan => "discgan",
        Model::AddnetDiscgan => "addnet-discgan",
    }
}

fn write_manifest<A: Serialize>(out_dir: &Path, command: &str, seed: u64, args: &A) -> Result<()> {
    #[derive(Serialize)]
    struct Manifest<'a, A> {
        command: &'a str,
        version: String,
        seed: u64,
        config: &'a A,
    }
    let manifest = Manifest {
        command,
        version: format!("addnet {}", env!("CARGO_PKG_VERSION")),
        seed,
        config: args,
    };
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| err_fmt!(Codec, "manifest to json: {e}"))?;
    std::fs::write(out_dir.join("manifest.json"), json)?;
    Ok(())
}

fn ensure_out_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("cannot create output directory {}: {e}", path.display()),
        ))
    })
}

fn resolve_data_dir(flag: &Option<PathBuf>) -> Result<PathBuf> {
    if let Some(dir) = flag {
        return Ok(dir.clone());
    }
    if let Ok(dir) = std::env::var(DATA_DIR_ENV) {
        return Ok(PathBuf::from(dir));
    }
    Err(Error::Argument(format!(
        "no data directory given; pass --data-dir or set {DATA_DIR_ENV}"
    )))
}

// ---------------------------------------------------------------------------
// gen-data
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, clap::Args, Serialize, Deserialize)]
pub struct GenDataArgs {
    #[arg(long, value_enum)]
    pub task: Task,
    /// Number of leak instances (label 1).
    #[arg(long, default_value_t = 8000)]
    pub leak: usize,
    /// Number of clean-air instances (label 0).
    #[arg(long, default_value_t = 8000)]
    pub clean: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "out")]
    pub out_dir: PathBuf,
    /// Output file name inside the output directory.
    #[arg(long, default_value = "ir_synth.csv")]
    pub file_name: String,
}

pub fn cmd_gen_data(args: &GenDataArgs) -> Result<PathBuf> {
    if args.task != Task::IrSynth {
        return Err(Error::Argument(
            "gen-data synthesizes the ir-synth task only; mixtures and drift load real files".into(),
        ));
    }
    if args.leak == 0 {
        eprintln!("warning: generating a clean-only dataset (--leak 0)");
    }
    ensure_out_dir(&args.out_dir)?;
    let cfg = IrSynthConfig { seed: args.seed, ..IrSynthConfig::default() };
    let set = gen_ir_dataset(&cfg, args.leak, args.clean)?;
    let path = args.out_dir.join(&args.file_name);
    std::fs::write(&path, set.to_csv())?;
    write_manifest(&args.out_dir, "gen-data", args.seed, args)?;
    Ok(path)
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, clap::Args, Serialize, Deserialize)]
pub struct TrainArgs {
    #[arg(long, value_enum)]
    pub task: Task,
    #[arg(long, value_enum)]
    pub model: Model,
    /// Training CSV for the ir-synth task (from gen-data).
    #[arg(long)]
    pub train_data: Option<PathBuf>,
    /// Held-out CSV for the ir-synth task.
    #[arg(long)]
    pub val_data: Option<PathBuf>,
    /// Directory with mixture .txt files or drift batch .dat files.
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    /// Drift: training batches, e.g. "1,2".
    #[arg(long, value_delimiter = ',')]
    pub train_batches: Vec<usize>,
    /// Drift: test batches, e.g. "3..10" or "3,4,5".
    #[arg(long)]
    pub test_batches: Option<String>,
    /// Mixtures: number of repeated holdout trials.
    #[arg(long, default_value_t = 4)]
    pub holdout_trials: usize,
    /// Mixtures: validation instances per trial.
    #[arg(long, default_value_t = 35)]
    pub holdout_size: usize,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long, default_value_t = 1e-3)]
    pub learning_rate: f64,
    /// Dropout rate override; presets default to 0.5 (ir) and 0.2 (drift).
    #[arg(long)]
    pub dropout: Option<f32>,
    #[arg(long)]
    pub noise_std: Option<f64>,
    /// Adversarial warm-up epochs for the GAN models.
    #[arg(long, default_value_t = 15)]
    pub adversarial_epochs: usize,
    /// Run pseudo-label domain adaptation on each drift test batch before
    /// scoring it.
    #[arg(long, default_value_t = false)]
    pub domain_adapt: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "out")]
    pub out_dir: PathBuf,
}

/// Expand "3..10" or "3,4,5" into batch ids.
pub fn parse_batch_range(text: &str) -> Result<Vec<usize>> {
    let text = text.trim();
    let parse_one = |s: &str| -> Result<usize> {
        s.trim()
            .parse::<usize>()
            .map_err(|e| Error::Argument(format!("bad batch id {s:?}: {e}")))
    };
    let ids: Vec<usize> = if let Some((a, b)) = text.split_once("..") {
        let (a, b) = (parse_one(a)?, parse_one(b)?);
        if a > b {
            return Err(err_fmt!(Argument, "empty batch range {text:?}"));
        }
        (a..=b).collect()
    } else {
        text.split(',').map(parse_one).collect::<Result<_>>()?
    };
    for &id in &ids {
        if !(1..=NUM_BATCHES).contains(&id) {
            return Err(err_fmt!(Argument, "batch id {id} outside 1..{NUM_BATCHES}"));
        }
    }
    Ok(ids)
}

fn base_train_config(args: &TrainArgs) -> TrainConfig {
    TrainConfig {
        epochs: args.epochs.unwrap_or(10),
        batch_size: args.batch_size.unwrap_or(64),
        learning_rate: args.learning_rate,
        dropout_override: args.dropout,
        noise_std: args.noise_std.unwrap_or(0.0),
        seed: args.seed,
        ..TrainConfig::default()
    }
}

pub struct TrainOutputs {
    pub model_file: PathBuf,
    pub metrics_files: Vec<PathBuf>,
    pub report: MetricsReport,
    /// Drift task only: (batch id, accuracy) per test batch.
    pub batch_accuracies: Vec<(usize, f64)>,
}

pub fn cmd_train(args: &TrainArgs) -> Result<TrainOutputs> {
    ensure_out_dir(&args.out_dir)?;
    let outputs = match args.task {
        Task::IrSynth => train_ir(args)?,
        Task::Mixtures => train_mixtures(args)?,
        Task::Drift => train_drift(args)?,
    };
    write_manifest(&args.out_dir, "train", args.seed, args)?;
    Ok(outputs)
}

fn write_metrics(
    out_dir: &Path,
    stem: &str,
    report: &MetricsReport,
    class_names: &[String],
) -> Result<Vec<PathBuf>> {
    let json_path = out_dir.join(format!("{stem}.json"));
    std::fs::write(&json_path, report.to_json()?)?;
    let csv_path = out_dir.join(format!("{stem}_confusion.csv"));
    std::fs::write(&csv_path, report.confusion_csv(class_names))?;
    let mut files = vec![json_path, csv_path];
    if !report.loss_history.is_empty() {
        let loss_path = out_dir.join(format!("{stem}_loss.csv"));
        let mut csv = String::from("epoch,loss\n");
        for (e, l) in report.loss_history.iter().enumerate() {
            csv.push_str(&format!("{e},{l}\n"));
        }
        std::fs::write(&loss_path, csv)?;
        files.push(loss_path);
    }
    Ok(files)
}

fn tag(report: &mut MetricsReport, task: Task, model: Model) {
    report.task = Some(task_name(task).into());
    report.model = Some(model_name(model).into());
}

fn load_ir_data(args: &TrainArgs) -> Result<(LabeledSet, LabeledSet)> {
    let hint = "generate one with `addnet gen-data --task ir-synth`";
    let train_path = args
        .train_data
        .as_ref()
        .ok_or_else(|| err_fmt!(Argument, "--train-data is required for ir-synth; {hint}"))?;
    if !train_path.exists() {
        return Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("training data {} not found; {hint}", train_path.display()),
        )));
    }
    let train_set = read_ir_csv(train_path)?;
    let val_set = match &args.val_data {
        Some(path) => {
            if !path.exists() {
                return Err(Error::Io(std::io::Error::new(
                    std::io::ErrorKind::NotFound,
                    format!("validation data {} not found; {hint}", path.display()),
                )));
            }
            read_ir_csv(path)?
        }
        None => train_set.clone(),
    };
    Ok((train_set, val_set))
}

/// Train a DiscGAN: adversarial warm-up on the minority class, then
/// supervised training on everything.
#[allow(clippy::too_many_arguments)]
fn train_discgan(
    spec: &NetworkSpec,
    state: &mut LayerState<f32>,
    train_set: &LabeledSet,
    val_set: &LabeledSet,
    cfg: &TrainConfig,
    adversarial_epochs: usize,
    squash: OutputSquash,
    seed: u64,
) -> Result<MetricsReport> {
    let sample_len = spec.input_len();
    let mut gan_cfg = GanConfig::new(sample_len, cfg.clone());
    gan_cfg.adversarial_epochs = adversarial_epochs;
    gan_cfg.supervised_epochs = cfg.epochs;
    gan_cfg.generator_output = squash;
    let mut rng = Rng::new(seed ^ 0x6a4e_9d1f);
    let gen_spec = gan_cfg.generator_spec.clone();
    let mut gen_state: LayerState<f32> = init_network(&gen_spec, &mut rng)?;

    if spec.output_units == 1 {
        let minority = train_set.of_class(gan_cfg.minority_class)?;
        adversarial_phase(spec, state, &gen_spec, &mut gen_state, &minority, &gan_cfg, &mut rng)?;
    } else {
        // Attack every class in turn.
        for k in 0..spec.output_units {
            let class_data = train_set.of_class(k)?;
            if class_data.is_empty() {
                continue;
            }
            gan_cfg.attack_class = Some(k);
            multiclass_adversarial_phase(
                spec,
                state,
                &gen_spec,
                &mut gen_state,
                &class_data,
                &gan_cfg,
                &mut rng,
            )?;
        }
    }
    crate::gan::supervised_phase(spec, state, train_set, val_set, &gan_cfg)
}

fn train_ir(args: &TrainArgs) -> Result<TrainOutputs> {
    if matches!(args.model, Model::Mlp) {
        return Err(Error::Argument(
            "the ir-synth task uses conv presets; valid models: convnet, addnet, discgan, addnet-discgan".into(),
        ));
    }
    let (train_set, val_set) = load_ir_data(args)?;
    let spec = presets::ir_table1(args.model.uses_md(), args.dropout);
    let mut cfg = base_train_config(args);
    cfg.crop_length = Some(32);
    let mut rng = Rng::new(args.seed);
    let mut state: LayerState<f32> = init_network(&spec, &mut rng)?;

    let mut report = if args.model.is_gan() {
        train_discgan(
            &spec,
            &mut state,
            &train_set,
            &val_set,
            &cfg,
            args.adversarial_epochs,
            OutputSquash::Sigmoid,
            args.seed,
        )?
    } else {
        train(&spec, &mut state, &train_set, &val_set, &cfg)?
    };
    tag(&mut report, args.task, args.model);

    let model_file = args.out_dir.join("model.bin");
    save_model(&model_file, &spec, &state)?;
    let metrics_files = write_metrics(&args.out_dir, "metrics", &report, train_set.class_names())?;
    Ok(TrainOutputs { model_file, metrics_files, report, batch_accuracies: Vec::new() })
}

/// Split off `n_val` instances chosen without replacement.
pub fn split_holdout(set: &LabeledSet, n_val: usize, rng: &mut Rng) -> Result<(LabeledSet, LabeledSet)> {
    if n_val == 0 || n_val >= set.len() {
        return Err(err_fmt!(Argument, "holdout size {n_val} must be in (0, {})", set.len()));
    }
    let mut order: Vec<usize> = (0..set.len()).collect();
    rng.shuffle(&mut order);
    let val_idx = &order[..n_val];
    let train_idx = &order[n_val..];
    Ok((set.select(train_idx)?, set.select(val_idx)?))
}

/// Load and segment the mixture recordings found in a directory. Files are
/// matched by name: anything containing "co" pairs the CO set-point with
/// ethylene, anything containing "methane" pairs methane with ethylene.
pub fn load_mixture_sets(dir: &Path) -> Result<LabeledSet> {
    let mut sets = Vec::new();
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "txt"))
        .collect();
    entries.sort();
    if entries.is_empty() {
        return Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("no mixture .txt files in {}", dir.display()),
        )));
    }
    for path in &entries {
        let name = path
            .file_name()
            .and_then(|n| n.to_str())
            .unwrap_or_default()
            .to_ascii_lowercase();
        let schema = if name.contains("methane") {
            MixtureSchema::new("methane", "ethylene")?
        } else if name.contains("co") {
            MixtureSchema::new("co", "ethylene")?
        } else {
            eprintln!("warning: skipping unrecognized mixture file {name}");
            continue;
        };
        let series = load_mixture_series(path, schema)?;
        let extracted = extract_single_analyte_segments(&series)?;
        for w in &extracted.warnings {
            eprintln!("warning: {w}");
        }
        eprintln!(
            "{name}: class counts {:?}",
            extracted.class_counts
        );
        sets.push(extracted.set);
    }
    let refs: Vec<&LabeledSet> = sets.iter().collect();
    let merged = LabeledSet::concat(&refs)?;
    Ok(merged.map_instances(normalize_instance))
}

fn train_mixtures(args: &TrainArgs) -> Result<TrainOutputs> {
    if !matches!(args.model, Model::Convnet | Model::Addnet) {
        return Err(Error::Argument(
            "the mixtures task supports convnet and addnet".into(),
        ));
    }
    let dir = resolve_data_dir(&args.data_dir)?;
    let full = load_mixture_sets(&dir)?;
    run_mixture_holdouts(args, &full)
}

/// Repeated-holdout training shared by the CLI and the test fixtures.
pub fn run_mixture_holdouts(args: &TrainArgs, full: &LabeledSet) -> Result<TrainOutputs> {
    let spec = presets::mixtures_table4(args.model.uses_md());
    let mut cfg = base_train_config(args);
    cfg.crop_length = Some(40);
    cfg.epochs = args.epochs.unwrap_or(20);
    cfg.batch_size = args.batch_size.unwrap_or(32);

    let mut master = Rng::new(args.seed);
    let mut merged: Option<MetricsReport> = None;
    let mut last_state: Option<(NetworkSpec, LayerState<f32>)> = None;
    for trial in 0..args.holdout_trials.max(1) {
        let mut trial_rng = master.split();
        let (train_set, val_set) = split_holdout(full, args.holdout_size, &mut trial_rng)?;
        let mut state: LayerState<f32> = init_network(&spec, &mut trial_rng)?;
        let trial_cfg = TrainConfig { seed: trial_rng.next_u64(), ..cfg.clone() };
        let report = train(&spec, &mut state, &train_set, &val_set, &trial_cfg)?;
        merged = Some(match merged.take() {
            None => report,
            Some(mut acc) => {
                // Aggregate the confusion matrices over trials.
                for (r, row) in report.confusion_matrix.iter().enumerate() {
                    for (c, v) in row.iter().enumerate() {
                        acc.confusion_matrix[r][c] += v;
                    }
                }
                acc.loss_history.extend(report.loss_history.iter());
                acc
            }
        });
        last_state = Some((spec.clone(), state));
        eprintln!("holdout trial {trial}: done");
    }
    let mut report = merged.expect("at least one trial");
    // Recompute the aggregate accuracies from the merged confusion matrix.
    let total: u64 = report.confusion_matrix.iter().flatten().sum();
    let trace: u64 = (0..report.confusion_matrix.len())
        .map(|c| report.confusion_matrix[c][c])
        .sum();
    report.total_accuracy = trace as f64 / total as f64;
    for (c, name) in full.class_names().iter().enumerate() {
        let row: u64 = report.confusion_matrix[c].iter().sum();
        if row > 0 {
            report
                .per_class_accuracy
                .insert(name.clone(), report.confusion_matrix[c][c] as f64 / row as f64);
        }
    }
    tag(&mut report, Task::Mixtures, args.model);

    ensure_out_dir(&args.out_dir)?;
    let (spec, state) = last_state.expect("at least one trial");
    let model_file = args.out_dir.join("model.bin");
    save_model(&model_file, &spec, &state)?;
    let metrics_files = write_metrics(&args.out_dir, "metrics", &report, full.class_names())?;
    Ok(TrainOutputs { model_file, metrics_files, report, batch_accuracies: Vec::new() })
}

fn train_drift(args: &TrainArgs) -> Result<TrainOutputs> {
    let dir = resolve_data_dir(&args.data_dir)?;
    let batches = load_drift_batches(&dir)?;
    run_drift(args, &batches)
}

/// Drift protocol shared by the CLI and the fixtures: train on the chosen
/// early batches, evaluate every later batch separately.
pub fn run_drift(args: &TrainArgs, batches: &[LabeledSet]) -> Result<TrainOutputs> {
    if !matches!(args.model, Model::Mlp | Model::Addnet | Model::Discgan | Model::AddnetDiscgan) {
        return Err(Error::Argument(
            "the drift task supports mlp, addnet, discgan and addnet-discgan".into(),
        ));
    }
    let train_ids = if args.train_batches.is_empty() {
        vec![1, 2]
    } else {
        args.train_batches.clone()
    };
    let test_ids = match &args.test_batches {
        Some(text) => parse_batch_range(text)?,
        None => (3..=NUM_BATCHES).collect(),
    };
    for &id in &train_ids {
        if !(1..=batches.len()).contains(&id) {
            return Err(err_fmt!(Argument, "train batch {id} outside 1..{}", batches.len()));
        }
    }
    let overlap: BTreeSet<usize> = train_ids.iter().copied().collect();
    if test_ids.iter().any(|id| overlap.contains(id)) {
        return Err(Error::Argument("train and test batches overlap".into()));
    }

    let transformed: Vec<LabeledSet> = batches.iter().map(signed_sqrt_transform).collect();
    let train_refs: Vec<&LabeledSet> = train_ids.iter().map(|&id| &transformed[id - 1]).collect();
    let train_set = LabeledSet::concat(&train_refs)?;

    let spec = presets::drift_mlp(args.model.uses_md(), args.dropout.unwrap_or(0.2));
    let mut cfg = base_train_config(args);
    cfg.epochs = args.epochs.unwrap_or(100);
    cfg.batch_size = args.batch_size.unwrap_or(128);
    cfg.noise_std = args.noise_std.unwrap_or(0.1);

    let mut rng = Rng::new(args.seed);
    let mut state: LayerState<f32> = init_network(&spec, &mut rng)?;
    let mut report = if args.model.is_gan() {
        train_discgan(
            &spec,
            &mut state,
            &train_set,
            &train_set,
            &cfg,
            args.adversarial_epochs,
            OutputSquash::Linear,
            args.seed,
        )?
    } else {
        train(&spec, &mut state, &train_set, &train_set, &cfg)?
    };
    tag(&mut report, Task::Drift, args.model);

    ensure_out_dir(&args.out_dir)?;
    let model_file = args.out_dir.join("model.bin");
    save_model(&model_file, &spec, &state)?;
    let mut metrics_files = write_metrics(&args.out_dir, "metrics", &report, train_set.class_names())?;

    // Per-batch test records.
    let mut batch_accuracies = Vec::new();
    let mut summary = String::from("batch,accuracy\n");
    for &id in &test_ids {
        let test_set = &transformed[id - 1];
        let batch_state = if args.domain_adapt {
            let mut adapted = state.clone();
            let adapt_cfg = TrainConfig { epochs: 5, seed: cfg.seed ^ id as u64, ..cfg.clone() };
            pseudo_label_adapt(&spec, &mut adapted, test_set.instances(), &adapt_cfg)?;
            adapted
        } else {
            state.clone()
        };
        let mut batch_report = evaluate(&spec, &batch_state, test_set)?;
        tag(&mut batch_report, Task::Drift, args.model);
        summary.push_str(&format!("{id},{}\n", batch_report.total_accuracy));
        batch_accuracies.push((id, batch_report.total_accuracy));
        metrics_files.extend(write_metrics(
            &args.out_dir,
            &format!("batch{id}"),
            &batch_report,
            test_set.class_names(),
        )?);
    }
    let summary_path = args.out_dir.join("drift_accuracy.csv");
    std::fs::write(&summary_path, summary)?;
    metrics_files.push(summary_path);
    Ok(TrainOutputs { model_file, metrics_files, report, batch_accuracies })
}

// ---------------------------------------------------------------------------
// prune
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, clap::Args, Serialize, Deserialize)]
pub struct PruneArgs {
    /// Trained model file written by `train`.
    #[arg(long)]
    pub model_file: PathBuf,
    /// Evaluation CSV (ir-synth format).
    #[arg(long)]
    pub eval_data: PathBuf,
    /// Target compression rates to sweep (fractions of the 32-bit store).
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.0, 0.161, 0.197, 0.674, 0.768, 0.866])]
    pub rates: Vec<f64>,
    /// Reconstruction magnitude for binarized weights.
    #[arg(long, value_enum, default_value = "mean-binarized")]
    pub magnitude: MagnitudeFlag,
    /// Also evaluate int8 quantized inference and report agreement.
    #[arg(long, default_value_t = false)]
    pub quantized: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "out")]
    pub out_dir: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MagnitudeFlag {
    MeanBinarized,
    Unit,
}

impl From<MagnitudeFlag> for ReplacementMagnitude {
    fn from(f: MagnitudeFlag) -> Self {
        match f {
            MagnitudeFlag::MeanBinarized => ReplacementMagnitude::MeanBinarized,
            MagnitudeFlag::Unit => ReplacementMagnitude::Unit,
        }
    }
}

pub struct PruneOutputs {
    pub sweep_csv: PathBuf,
    /// (target rate, fraction binarized, accuracy) per sweep row.
    pub rows: Vec<(f64, f64, f64)>,
    /// Fraction of predictions where int8 inference agrees with float.
    pub quantized_agreement: Option<f64>,
}

pub fn cmd_prune(args: &PruneArgs) -> Result<PruneOutputs> {
    if !args.model_file.exists() {
        return Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("model file {} not found", args.model_file.display()),
        )));
    }
    let (spec, state) = load_model(&args.model_file)?;
    let eval_set = read_ir_csv(&args.eval_data)?;
    ensure_out_dir(&args.out_dir)?;

    let mut rows = Vec::new();
    let mut csv = String::from("rate,fraction,accuracy\n");
    for &rate in &args.rates {
        let fraction = fraction_for_rate(rate)?;
        let compressed = prune_sign_retain(&state, fraction, args.magnitude.into())?;
        let pruned_state = crate::compress::reconstruct(&compressed, &spec)?;
        let report = evaluate(&spec, &pruned_state, &eval_set)?;
        let achieved = compression_rate(fraction);
        rows.push((achieved, fraction, report.total_accuracy));
        csv.push_str(&format!("{achieved},{fraction},{}\n", report.total_accuracy));

        let file = args.out_dir.join(format!("compressed_{:.3}.adnc", rate));
        let mut buf = Vec::new();
        write_compressed(&mut buf, &spec, &compressed)?;
        std::fs::write(file, buf)?;
    }
    let sweep_csv = args.out_dir.join("prune_sweep.csv");
    std::fs::write(&sweep_csv, csv)?;

    let quantized_agreement = if args.quantized {
        let q = quantize_q8(&spec, &state)?;
        let mut agree = 0usize;
        let mut total = 0usize;
        for chunk in eval_set.instances().chunks(256) {
            let rows: Vec<crate::tensor::Tensor<f32>> = chunk
                .iter()
                .map(|inst| {
                    if inst.shape()[0] != spec.input_shape[0] {
                        crate::data::center_crop(inst, spec.input_shape[0])
                    } else {
                        Ok(inst.clone())
                    }
                })
                .collect::<Result<_>>()?;
            let refs: Vec<&crate::tensor::Tensor<f32>> = rows.iter().collect();
            let batch = crate::tensor::Tensor::stack(&refs)?;
            let float_preds = logits_to_predictions(&forward_eval(&spec, &state, &batch)?);
            let q_preds = logits_to_predictions(&forward_quantized(&spec, &q, &batch)?);
            agree += float_preds.iter().zip(&q_preds).filter(|(a, b)| a == b).count();
            total += float_preds.len();
        }
        let ratio = agree as f64 / total as f64;
        std::fs::write(
            args.out_dir.join("quantized_agreement.csv"),
            format!("agreement\n{ratio}\n"),
        )?;
        Some(ratio)
    } else {
        None
    };

    write_manifest(&args.out_dir, "prune", args.seed, args)?;
    Ok(PruneOutputs { sweep_csv, rows, quantized_agreement })
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, clap::Args, Serialize, Deserialize)]
pub struct ReportArgs {
    /// Metrics JSON files produced by `train`.
    #[arg(long, required = true, num_args = 1..)]
    pub inputs: Vec<PathBuf>,
    #[arg(long, default_value = "out")]
    pub out_dir: PathBuf,
}

pub fn cmd_report(args: &ReportArgs) -> Result<PathBuf> {
    if args.inputs.is_empty() {
        return Err(Error::Argument("report needs at least one metrics file".into()));
    }
    let mut reports = Vec::new();
    for path in &args.inputs {
        let text = std::fs::read_to_string(path)?;
        if text.trim().is_empty() {
            return Err(Error::Parse {
                line: 0,
                msg: format!("empty metrics file {}", path.display()),
            });
        }
        let report = MetricsReport::from_json(&text).map_err(|e| match e {
            Error::Parse { line, msg } => Error::Parse {
                line,
                msg: format!("{}: {msg}", path.display()),
            },
            other => other,
        })?;
        reports.push(report);
    }
    let tasks: BTreeSet<String> = reports
        .iter()
        .map(|r| r.task.clone().unwrap_or_else(|| "untagged".into()))
        .collect();
    if tasks.len() > 1 {
        return Err(err_fmt!(
            Argument,
            "metrics files mix tasks: {}",
            tasks.into_iter().collect::<Vec<_>>().join(" vs ")
        ));
    }

    let mut classes = BTreeSet::new();
    for r in &reports {
        classes.extend(r.per_class_accuracy.keys().cloned());
    }
    let mut md = String::new();
    md.push_str(&format!(
        "# {} results\n\n| model |",
        tasks.iter().next().cloned().unwrap_or_default()
    ));
    for c in &classes {
        md.push_str(&format!(" {c} |"));
    }
    md.push_str(" total |\n|---|");
    for _ in &classes {
        md.push_str("---|");
    }
    md.push_str("---|\n");
    for r in &reports {
        md.push_str(&format!("| {} |", r.model.clone().unwrap_or_else(|| "?".into())));
        for c in &classes {
            match r.per_class_accuracy.get(c) {
                Some(acc) => md.push_str(&format!(" {:.1}% |", acc * 100.0)),
                None => md.push_str(" - |"),
            }
        }
        md.push_str(&format!(" {:.1}% |\n", r.total_accuracy * 100.0));
    }

    ensure_out_dir(&args.out_dir)?;
    let md_path = args.out_dir.join("report.md");
    std::fs::write(&md_path, &md)?;
    let json = serde_json::to_string_pretty(&reports)
        .map_err(|e| err_fmt!(Codec, "report to json: {e}"))?;
    std::fs::write(args.out_dir.join("report.json"), json)?;
    Ok(md_path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batch_range_parsing() {
        assert_eq!(parse_batch_range("3..10").unwrap(), vec![3, 4, 5, 6, 7, 8, 9, 10]);
        assert_eq!(parse_batch_range("3,5,7").unwrap(), vec![3, 5, 7]);
        assert!(parse_batch_range("0..4").is_err());
        assert!(parse_batch_range("8..3").is_err());
        assert!(parse_batch_range("a,b").is_err());
    }

    #[test]
    fn gen_data_writes_rows_and_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let args = GenDataArgs {
            task: Task::IrSynth,
            leak: 5,
            clean: 7,
            seed: 3,
            out_dir: dir.path().to_path_buf(),
            file_name: "ir.csv".into(),
        };
        let path = cmd_gen_data(&args).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 12);
        assert!(dir.path().join("manifest.json").exists());
        // rerun is byte-identical
        let before = std::fs::read(&path).unwrap();
        cmd_gen_data(&args).unwrap();
        assert_eq!(before, std::fs::read(&path).unwrap());
    }

    #[test]
    fn gen_data_rejects_other_tasks() {
        let dir = tempfile::tempdir().unwrap();
        let args = GenDataArgs {
            task: Task::Drift,
            leak: 1,
            clean: 1,
            seed: 0,
            out_dir: dir.path().to_path_buf(),
            file_name: "x.csv".into(),
        };
        assert!(matches!(cmd_gen_data(&args), Err(Error::Argument(_))));
    }

    #[test]
    fn report_merges_and_detects_conflicts() {
        let dir = tempfile::tempdir().unwrap();
        let mk = |name: &str, task: &str, model: &str, acc: f64| {
            let mut r = MetricsReport::from_predictions(&[0, 1], &[0, 1], 2, &["a".into(), "b".into()])
                .unwrap();
            r.task = Some(task.into());
            r.model = Some(model.into());
            r.total_accuracy = acc;
            let p = dir.path().join(name);
            std::fs::write(&p, r.to_json().unwrap()).unwrap();
            p
        };
        let a = mk("a.json", "ir-synth", "convnet", 0.9);
        let b = mk("b.json", "ir-synth", "addnet", 0.95);
        let args = ReportArgs {
            inputs: vec![a.clone(), b],
            out_dir: dir.path().join("rep"),
        };
        let md = cmd_report(&args).unwrap();
        let text = std::fs::read_to_string(md).unwrap();
        assert!(text.contains("convnet"));
        assert!(text.contains("addnet"));

        let c = mk("c.json", "drift", "mlp", 0.5);
        let args = ReportArgs { inputs: vec![a, c], out_dir: dir.path().join("rep2") };
        let err = cmd_report(&args).unwrap_err();
        match err {
            Error::Argument(msg) => assert!(msg.contains("ir-synth") && msg.contains("drift")),
            other => panic!("unexpected {other:?}"),
        }

        let empty = dir.path().join("empty.json");
        std::fs::write(&empty, "").unwrap();
        let args = ReportArgs { inputs: vec![empty], out_dir: dir.path().join("rep3") };
        assert!(matches!(cmd_report(&args), Err(Error::Parse { .. })));
    }

    #[test]
    fn prune_requires_model_file() {
        let dir = tempfile::tempdir().unwrap();
        let args = PruneArgs {
            model_file: dir.path().join("missing.bin"),
            eval_data: dir.path().join("missing.csv"),
            rates: vec![0.0],
            magnitude: MagnitudeFlag::MeanBinarized,
            quantized: false,
            seed: 0,
            out_dir: dir.path().to_path_buf(),
        };
        assert!(matches!(cmd_prune(&args), Err(Error::Io(_))));
    }

    #[test]
    fn prune_rejects_impossible_rates() {
        // fraction_for_rate guards the sweep
        assert!(fraction_for_rate(0.97).is_err());
        assert!(fraction_for_rate(31.0 / 32.0).is_ok());
    }
}
