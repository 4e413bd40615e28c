//! Command-line interface.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error (missing or malformed
//! files, dimension mismatches between data and checkpoint), 3 runtime or
//! numeric failure.
//!
//! Output tables are comma-separated with a header row:
//!
//! * `eval`: `context_mode,num_context,frames,windows,mean_ccc,mean_icc,mean_mse,mean_nll`
//!   followed by per-dimension `ccc_d`, `icc_d`, `mse_d` columns. The raw
//!   pseudo-label baseline row uses mode `pseudo_label` and an empty NLL.
//! * `sweep`: `num_context,context_mode,mean_ccc,mean_icc,mean_mse,mean_nll`.
//! * `ablate`: `model_variant,loss_variant,mean_ccc,mean_icc,mean_mse,mean_nll`.
//! * `traces`: `frame,dim,label,pseudo_label,context,mean,sample_0..`.
//! * `train` metrics log: `epoch,lr,loss,nll,kl,reg,skipped,val_ccc,val_icc,val_mse,val_nll`.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint;
use crate::config::{defaults, ContextMode, LossVariant, LossWeights, ModelConfig, ModelVariant, RegPooling, RunConfig, Task};
use crate::data::{generate_synthetic, load_dataset, save_dataset, Sequence, SyntheticSpec};
use crate::error::Error;
use crate::eval::{context_sweep, evaluate, pseudo_label_report, sample_traces, sweep_csv, EvalConfig, EvalReport};
use crate::model::ApModel;
use crate::training::{metrics_log_csv, train};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

pub const CHECKPOINT_FILE: &str = "checkpoint.apck";
pub const METRICS_FILE: &str = "metrics.csv";

#[derive(Debug, Parser)]
#[command(name = "affect-np", version, about = "Affective Processes: neural-process affect regression")]
pub struct Cli {
    /// Only print warnings and errors.
    #[arg(long, short, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset directory.
    GenData(GenDataArgs),
    /// Train a model and write the best checkpoint plus a metrics log.
    Train(TrainCmd),
    /// Evaluate a checkpoint on a dataset.
    Eval(EvalCmd),
    /// Train and evaluate every (model variant, loss variant) pair.
    Ablate(AblateCmd),
    /// Evaluate a checkpoint over a grid of context counts and selection modes.
    Sweep(SweepCmd),
    /// Export mean and sampled predictive traces for one sequence.
    Traces(TracesCmd),
    /// Print parameter names, shapes and the embedded run config.
    InspectCheckpoint(InspectCmd),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    /// Output dataset directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = defaults::SEED)]
    pub seed: u64,
    #[arg(long, default_value_t = SyntheticSpec::default().num_sequences)]
    pub num_sequences: usize,
    #[arg(long, default_value_t = SyntheticSpec::default().min_len)]
    pub min_len: usize,
    #[arg(long, default_value_t = SyntheticSpec::default().max_len)]
    pub max_len: usize,
    #[arg(long, default_value_t = SyntheticSpec::default().feature_dim)]
    pub feature_dim: usize,
    #[arg(long, default_value_t = SyntheticSpec::default().label_dim)]
    pub label_dim: usize,
    #[arg(long, default_value_t = SyntheticSpec::default().fourier_components)]
    pub fourier_components: usize,
    #[arg(long, default_value_t = SyntheticSpec::default().max_frequency)]
    pub max_frequency: f64,
    #[arg(long, default_value_t = SyntheticSpec::default().trajectory_scale)]
    pub trajectory_scale: f64,
    #[arg(long, default_value_t = SyntheticSpec::default().sequence_offset_std)]
    pub sequence_offset_std: f64,
    #[arg(long, default_value_t = SyntheticSpec::default().label_correlation)]
    pub label_correlation: f64,
    #[arg(long, default_value_t = SyntheticSpec::default().pseudo_noise_std)]
    pub pseudo_noise_std: f64,
    #[arg(long, default_value_t = SyntheticSpec::default().uninformative_noise_scale)]
    pub uninformative_noise_scale: f64,
    #[arg(long, default_value_t = SyntheticSpec::default().pseudo_bias_amplitude)]
    pub pseudo_bias_amplitude: f64,
    #[arg(long, default_value_t = SyntheticSpec::default().informative_fraction)]
    pub informative_fraction: f64,
    #[arg(long, default_value_t = SyntheticSpec::default().feature_noise_std)]
    pub feature_noise_std: f64,
    #[arg(long, default_value_t = SyntheticSpec::default().feature_map_seed)]
    pub feature_map_seed: u64,
}

impl GenDataArgs {
    pub fn spec(&self) -> SyntheticSpec {
        SyntheticSpec {
            num_sequences: self.num_sequences,
            min_len: self.min_len,
            max_len: self.max_len,
            feature_dim: self.feature_dim,
            label_dim: self.label_dim,
            fourier_components: self.fourier_components,
            max_frequency: self.max_frequency,
            trajectory_scale: self.trajectory_scale,
            sequence_offset_std: self.sequence_offset_std,
            label_correlation: self.label_correlation,
            pseudo_noise_std: self.pseudo_noise_std,
            uninformative_noise_scale: self.uninformative_noise_scale,
            pseudo_bias_amplitude: self.pseudo_bias_amplitude,
            informative_fraction: self.informative_fraction,
            feature_noise_std: self.feature_noise_std,
            feature_map_seed: self.feature_map_seed,
        }
    }
}

/// Run configuration flags shared by `train` and `ablate`.
#[derive(Debug, Args, Clone)]
pub struct TrainArgs {
    #[arg(long, default_value_t = Task::ValenceArousal)]
    pub task: Task,
    #[arg(long, default_value_t = ModelVariant::Latent)]
    pub variant: ModelVariant,
    #[arg(long, default_value_t = LossVariant::NllRegKl)]
    pub loss: LossVariant,
    #[arg(long, default_value_t = defaults::LAMBDA_KL)]
    pub lambda_kl: f64,
    #[arg(long, default_value_t = defaults::LAMBDA_REG)]
    pub lambda_reg: f64,
    #[arg(long, default_value_t = RegPooling::Mean)]
    pub reg_pooling: RegPooling,
    #[arg(long, default_value_t = defaults::SEQ_LEN_MIN)]
    pub seq_len_min: usize,
    #[arg(long, default_value_t = defaults::SEQ_LEN_MAX)]
    pub seq_len_max: usize,
    #[arg(long, default_value_t = defaults::MIN_CONTEXT)]
    pub min_context: usize,
    /// Evaluation window length.
    #[arg(long, default_value_t = defaults::TEST_SEQ_LEN)]
    pub test_seq_len: usize,
    /// Default: 16 for va, 6 for au.
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Default: 0.00025 for va, 0.0001 for au.
    #[arg(long)]
    pub lr: Option<f64>,
    /// Default: 0.0001 for va, 0.0005 for au.
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long, default_value_t = defaults::ADAM_BETA1)]
    pub adam_beta1: f64,
    #[arg(long, default_value_t = defaults::ADAM_BETA2)]
    pub adam_beta2: f64,
    #[arg(long, default_value_t = defaults::ADAM_EPS)]
    pub adam_eps: f64,
    #[arg(long, default_value_t = defaults::EPOCHS)]
    pub epochs: usize,
    /// Iterations per epoch.
    #[arg(long, default_value_t = defaults::ITERS_PER_EPOCH)]
    pub iters: usize,
    /// Probability of using pseudo-labels as context labels during training.
    #[arg(long, default_value_t = defaults::MIX_PROB)]
    pub mix_prob: f64,
    /// Context count used for validation.
    #[arg(long, default_value_t = defaults::NUM_CONTEXT_EVAL)]
    pub num_context: usize,
    /// Context selection used for validation.
    #[arg(long, default_value_t = ContextMode::Lowest)]
    pub context_mode: ContextMode,
    #[arg(long, default_value_t = defaults::SEED)]
    pub seed: u64,
    /// Default: the feature dimension.
    #[arg(long)]
    pub label_proj_dim: Option<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = defaults::ENCODER_HIDDEN)]
    pub encoder_hidden: Vec<usize>,
    #[arg(long, default_value_t = defaults::REPR_DIM)]
    pub repr_dim: usize,
    #[arg(long, default_value_t = defaults::LATENT_DIM)]
    pub latent_dim: usize,
    #[arg(long, value_delimiter = ',', default_values_t = defaults::DECODER_HIDDEN)]
    pub decoder_hidden: Vec<usize>,
    #[arg(long, default_value_t = defaults::ATTENTION_HEADS)]
    pub attention_heads: usize,
    #[arg(long, default_value_t = defaults::ATTENTION_HEAD_DIM)]
    pub attention_head_dim: usize,
    #[arg(long, default_value_t = defaults::STD_FLOOR)]
    pub std_floor: f64,
}

impl TrainArgs {
    /// Builds the run config for data with the given dimensions.
    pub fn run_config(&self, feature_dim: usize, label_dim: usize) -> RunConfig {
        let base = RunConfig::for_task(self.task);
        RunConfig {
            task: self.task,
            model: ModelConfig {
                feature_dim,
                label_dim,
                label_proj_dim: self.label_proj_dim.unwrap_or(feature_dim),
                encoder_hidden: self.encoder_hidden.clone(),
                repr_dim: self.repr_dim,
                latent_dim: self.latent_dim,
                decoder_hidden: self.decoder_hidden.clone(),
                attention_heads: self.attention_heads,
                attention_head_dim: self.attention_head_dim,
                std_floor: self.std_floor,
            },
            variant: self.variant,
            loss: LossWeights {
                lambda_kl: self.lambda_kl,
                lambda_reg: self.lambda_reg,
                variant: self.loss,
                reg_pooling: self.reg_pooling,
            },
            seq_len_min: self.seq_len_min,
            seq_len_max: self.seq_len_max,
            min_context: self.min_context,
            test_seq_len: self.test_seq_len,
            batch_size: self.batch_size.unwrap_or(base.batch_size),
            lr: self.lr.unwrap_or(base.lr),
            weight_decay: self.weight_decay.unwrap_or(base.weight_decay),
            adam_beta1: self.adam_beta1,
            adam_beta2: self.adam_beta2,
            adam_eps: self.adam_eps,
            epochs: self.epochs,
            iters_per_epoch: self.iters,
            mix_prob: self.mix_prob,
            num_context_eval: self.num_context,
            eval_context_mode: self.context_mode,
            seed: self.seed,
        }
    }
}

/// Training and validation data sources.
#[derive(Debug, Args, Clone)]
pub struct DataArgs {
    /// Training dataset directory.
    #[arg(long)]
    pub data: PathBuf,
    /// Validation dataset directory; when absent a seeded fraction of the
    /// training data is held out.
    #[arg(long)]
    pub val_data: Option<PathBuf>,
    /// Fraction held out for validation when no validation directory is given
    /// (0 disables validation).
    #[arg(long, default_value_t = 0.1)]
    pub val_fraction: f64,
}

#[derive(Debug, Args)]
pub struct TrainCmd {
    #[command(flatten)]
    pub data: DataArgs,
    /// Output directory for the checkpoint and metrics log.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub run: TrainArgs,
}

/// Evaluation protocol flags.
#[derive(Debug, Args, Clone)]
pub struct EvalArgs {
    #[arg(long, default_value_t = ContextMode::Lowest)]
    pub context_mode: ContextMode,
    #[arg(long, default_value_t = defaults::NUM_CONTEXT_EVAL)]
    pub num_context: usize,
    #[arg(long, default_value_t = defaults::TEST_SEQ_LEN)]
    pub window_len: usize,
    /// Windows shorter than this are dropped.
    #[arg(long, default_value_t = defaults::MIN_CONTEXT)]
    pub min_window: usize,
    /// Seeds random context placement.
    #[arg(long, default_value_t = defaults::SEED)]
    pub seed: u64,
}

impl EvalArgs {
    pub fn config(&self) -> EvalConfig {
        EvalConfig {
            window_len: self.window_len,
            num_context: self.num_context,
            mode: self.context_mode,
            min_window: self.min_window,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Args)]
pub struct EvalCmd {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Evaluation dataset directory.
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub eval: EvalArgs,
    /// Also report the raw pseudo-labels as predictions.
    #[arg(long)]
    pub baseline: bool,
    /// Write the report table here as well as to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AblateCmd {
    #[command(flatten)]
    pub data: DataArgs,
    /// Held-out dataset the variants are compared on.
    #[arg(long)]
    pub test_data: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = ModelVariant::ALL.to_vec())]
    pub variants: Vec<ModelVariant>,
    #[arg(long, value_delimiter = ',', default_values_t = LossVariant::ALL.to_vec())]
    pub losses: Vec<LossVariant>,
    /// Comparison table path.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub run: TrainArgs,
}

#[derive(Debug, Args)]
pub struct SweepCmd {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = vec![3usize, 5, 10, 20, 30, 40, 50, 60, 70])]
    pub counts: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = ContextMode::ALL.to_vec())]
    pub modes: Vec<ContextMode>,
    #[arg(long, default_value_t = defaults::TEST_SEQ_LEN)]
    pub window_len: usize,
    #[arg(long, default_value_t = defaults::MIN_CONTEXT)]
    pub min_window: usize,
    #[arg(long, default_value_t = defaults::SEED)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TracesCmd {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Sequence id, or its position in the manifest.
    #[arg(long, default_value = "0")]
    pub sequence: String,
    /// First frame of the exported window.
    #[arg(long, default_value_t = 0)]
    pub start: usize,
    #[arg(long, default_value_t = defaults::TEST_SEQ_LEN)]
    pub window_len: usize,
    #[arg(long, default_value_t = defaults::NUM_CONTEXT_EVAL)]
    pub num_context: usize,
    #[arg(long, default_value_t = ContextMode::Lowest)]
    pub context_mode: ContextMode,
    /// Number of sampled latent draws.
    #[arg(long, default_value_t = 10)]
    pub samples: usize,
    #[arg(long, default_value_t = defaults::SEED)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct InspectCmd {
    #[arg(long)]
    pub checkpoint: PathBuf,
}

/// Failure of a command, classified for the exit code.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Data(String),
    Runtime(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Usage(_) => EXIT_USAGE,
            Failure::Data(_) => EXIT_DATA,
            Failure::Runtime(_) => EXIT_RUNTIME,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Data(m) | Failure::Runtime(m) => m,
        }
    }

    /// Classifies a library error raised while handling `what` (a flag and
    /// its value, or a file).
    fn from_error(what: &str, e: Error) -> Self {
        let msg = format!("{what}: {e}");
        if e.is_data_error() {
            Failure::Data(msg)
        } else {
            Failure::Runtime(msg)
        }
    }
}

type CmdResult<T = ()> = std::result::Result<T, Failure>;

fn flag(name: &str, path: &Path) -> String {
    format!("--{name} {}", path.display())
}

fn load_data(name: &str, path: &Path) -> CmdResult<Vec<Sequence>> {
    load_dataset(path).map_err(|e| Failure::from_error(&flag(name, path), e))
}

fn load_checkpoint(path: &Path) -> CmdResult<(RunConfig, ApModel)> {
    checkpoint::load(path).map_err(|e| Failure::from_error(&flag("checkpoint", path), e))
}

fn write_text(path: &Path, text: &str) -> CmdResult {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Failure::Runtime(format!("{}: {e}", dir.display())))?;
    }
    fs::write(path, text).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))
}

/// Data and checkpoint must agree on feature and label dimensions.
fn check_compatible(config: &RunConfig, data: &[Sequence], name: &str, path: &Path) -> CmdResult {
    for s in data {
        if s.feature_dim() != config.model.feature_dim || s.label_dim() != config.model.label_dim {
            return Err(Failure::Data(format!(
                "{}: sequence `{}` has dimensions ({}, {}), checkpoint expects ({}, {})",
                flag(name, path),
                s.id(),
                s.feature_dim(),
                s.label_dim(),
                config.model.feature_dim,
                config.model.label_dim
            )));
        }
    }
    Ok(())
}

fn check_eval_flags(cfg: &EvalConfig) -> CmdResult {
    for (name, v) in [
        ("--window-len", cfg.window_len),
        ("--num-context", cfg.num_context),
        ("--min-window", cfg.min_window),
    ] {
        if v == 0 {
            return Err(Failure::Usage(format!("{name} must be positive")));
        }
    }
    Ok(())
}

fn runtime(what: &str) -> impl FnOnce(Error) -> Failure + '_ {
    move |e| Failure::from_error(what, e)
}

/// Loads training and validation sequences.
fn training_sets(args: &DataArgs, seed: u64) -> CmdResult<(Vec<Sequence>, Vec<Sequence>)> {
    let all = load_data("data", &args.data)?;
    if let Some(v) = &args.val_data {
        return Ok((all, load_data("val-data", v)?));
    }
    if !(0.0..1.0).contains(&args.val_fraction) {
        return Err(Failure::Usage(format!(
            "--val-fraction {} must lie in [0, 1)",
            args.val_fraction
        )));
    }
    if args.val_fraction == 0.0 || all.len() < 2 {
        return Ok((all, Vec::new()));
    }
    let mut order: Vec<usize> = (0..all.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_val = ((all.len() as f64 * args.val_fraction).round() as usize).clamp(1, all.len() - 1);
    let val = order[..n_val].iter().map(|&i| all[i].clone()).collect();
    let train = order[n_val..].iter().map(|&i| all[i].clone()).collect();
    Ok((train, val))
}

fn validated_config(run: &TrainArgs, data: &[Sequence]) -> CmdResult<RunConfig> {
    let first = data
        .first()
        .ok_or_else(|| Failure::Data("--data: dataset is empty".into()))?;
    let config = run.run_config(first.feature_dim(), first.label_dim());
    config
        .validate()
        .map_err(|e| Failure::Usage(format!("invalid training flags: {e}")))?;
    Ok(config)
}

fn cmd_gen_data(args: &GenDataArgs) -> CmdResult {
    let spec = args.spec();
    spec.validate()
        .map_err(|e| Failure::Usage(format!("invalid gen-data flags: {e}")))?;
    println!("seed: {}", args.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let data = generate_synthetic(&spec, &mut rng).map_err(runtime("gen-data"))?;
    save_dataset(&args.out, &data).map_err(|e| Failure::from_error(&flag("out", &args.out), e))?;
    println!(
        "wrote {} sequences ({} frames) to {}",
        data.len(),
        data.iter().map(Sequence::len).sum::<usize>(),
        args.out.display()
    );
    Ok(())
}

fn cmd_train(args: &TrainCmd) -> CmdResult {
    println!("seed: {}", args.run.seed);
    let (train_set, val_set) = training_sets(&args.data, args.run.seed)?;
    let config = validated_config(&args.run, &train_set)?;
    check_compatible(&config, &val_set, "val-data", args.data.val_data.as_deref().unwrap_or(&args.data.data))?;
    info!(
        "training {} on {} sequences ({} validation)",
        config.variant,
        train_set.len(),
        val_set.len()
    );
    let outcome = train(&config, &train_set, &val_set).map_err(runtime("train"))?;
    let ckpt = args.out.join(CHECKPOINT_FILE);
    checkpoint::save(&ckpt, &outcome.best, &config).map_err(|e| Failure::from_error(&flag("out", &args.out), e))?;
    write_text(&args.out.join(METRICS_FILE), &metrics_log_csv(&outcome.log))?;
    println!(
        "best epoch {} of {}; checkpoint {}",
        outcome.best_epoch,
        config.epochs,
        ckpt.display()
    );
    Ok(())
}

fn cmd_eval(args: &EvalCmd) -> CmdResult {
    let requested = args.eval.config();
    check_eval_flags(&requested)?;
    println!("seed: {}", requested.seed);
    let (config, model) = load_checkpoint(&args.checkpoint)?;
    let cfg = fallback_mode(&requested, config.variant);
    let data = load_data("data", &args.data)?;
    check_compatible(&config, &data, "data", &args.data)?;
    let report = evaluate(&model, &data, &cfg).map_err(runtime("eval"))?;
    let mut table = report.to_csv();
    if args.baseline {
        let base = pseudo_label_report(&data, &cfg).map_err(runtime("eval"))?;
        table.push_str(&base.csv_row());
        table.push('\n');
    }
    print!("{table}");
    if let Some(out) = &args.out {
        write_text(out, &table)?;
    }
    Ok(())
}

/// Applies [`EvalConfig::for_variant`] and says so when the mode changes.
fn fallback_mode(cfg: &EvalConfig, variant: ModelVariant) -> EvalConfig {
    let used = cfg.for_variant(variant);
    if used.mode != cfg.mode {
        warn!("variant {variant} cannot rank frames by uncertainty; using {} context", used.mode);
    }
    used
}

fn ablate_header() -> &'static str {
    "model_variant,loss_variant,context_mode,mean_ccc,mean_icc,mean_mse,mean_nll"
}

fn ablate_row(variant: ModelVariant, loss: LossVariant, r: &EvalReport) -> String {
    format!(
        "{variant},{loss},{},{},{},{},{}",
        r.mode.map_or("pseudo_label", |m| m.as_str()),
        r.mean_ccc,
        r.mean_icc,
        r.mean_mse,
        r.mean_nll.map(|v| v.to_string()).unwrap_or_default()
    )
}

fn cmd_ablate(args: &AblateCmd) -> CmdResult {
    if args.variants.is_empty() || args.losses.is_empty() {
        return Err(Failure::Usage("--variants and --losses must not be empty".into()));
    }
    println!("seed: {}", args.run.seed);
    let (train_set, val_set) = training_sets(&args.data, args.run.seed)?;
    let test_set = load_data("test-data", &args.test_data)?;
    let base = validated_config(&args.run, &train_set)?;
    check_compatible(&base, &test_set, "test-data", &args.test_data)?;
    let eval_cfg = EvalConfig::from_run(&base);
    let mut table = String::from(ablate_header());
    table.push('\n');
    for &variant in &args.variants {
        for &loss in &args.losses {
            let mut config = base.clone();
            config.variant = variant;
            config.loss.variant = loss;
            info!("ablation: {variant} with {loss}");
            let what = format!("ablate {variant} {loss}");
            let outcome = train(&config, &train_set, &val_set).map_err(runtime(&what))?;
            let report = evaluate(&outcome.best, &test_set, &fallback_mode(&eval_cfg, variant))
                .map_err(runtime(&what))?;
            let _ = writeln!(table, "{}", ablate_row(variant, loss, &report));
        }
    }
    print!("{table}");
    write_text(&args.out, &table)
}

fn cmd_sweep(args: &SweepCmd) -> CmdResult {
    if args.counts.is_empty() || args.modes.is_empty() || args.counts.contains(&0) {
        return Err(Failure::Usage("--counts must be positive and --modes non-empty".into()));
    }
    println!("seed: {}", args.seed);
    let (config, model) = load_checkpoint(&args.checkpoint)?;
    let data = load_data("data", &args.data)?;
    check_compatible(&config, &data, "data", &args.data)?;
    let mut modes = args.modes.clone();
    if !config.variant.has_latent_sample() {
        modes.retain(|m| !m.ranks_by_uncertainty());
        if modes.len() < args.modes.len() {
            warn!("variant {} cannot rank frames by uncertainty; sweeping random context only", config.variant);
        }
        if modes.is_empty() {
            return Err(Failure::Usage(format!(
                "--modes: variant {} supports only random context",
                config.variant
            )));
        }
    }
    let base = EvalConfig {
        window_len: args.window_len,
        num_context: args.counts[0],
        mode: modes[0],
        min_window: args.min_window,
        seed: args.seed,
    };
    check_eval_flags(&base)?;
    let rows = context_sweep(&model, &data, &base, &args.counts, &modes).map_err(runtime("sweep"))?;
    let table = sweep_csv(&rows);
    print!("{table}");
    write_text(&args.out, &table)
}

fn cmd_traces(args: &TracesCmd) -> CmdResult {
    if args.window_len == 0 || args.num_context == 0 {
        return Err(Failure::Usage("--window-len and --num-context must be positive".into()));
    }
    println!("seed: {}", args.seed);
    let (config, model) = load_checkpoint(&args.checkpoint)?;
    let data = load_data("data", &args.data)?;
    check_compatible(&config, &data, "data", &args.data)?;
    let seq = data
        .iter()
        .find(|s| s.id() == args.sequence)
        .or_else(|| args.sequence.parse::<usize>().ok().and_then(|i| data.get(i)))
        .ok_or_else(|| Failure::Data(format!("--sequence {}: no such sequence in {}", args.sequence, args.data.display())))?;
    if args.start >= seq.len() {
        return Err(Failure::Usage(format!(
            "--start {} is beyond the {}-frame sequence `{}`",
            args.start,
            seq.len(),
            seq.id()
        )));
    }
    let len = args.window_len.min(seq.len() - args.start);
    let window = seq.window(args.start, len).map_err(runtime("--start"))?;
    let mode = if args.context_mode.ranks_by_uncertainty() && !config.variant.has_latent_sample() {
        warn!("variant {} cannot rank frames by uncertainty; using random context", config.variant);
        ContextMode::Random
    } else {
        args.context_mode
    };
    let traces = sample_traces(&model, &window, args.num_context, mode, args.samples, args.seed)
        .map_err(runtime("traces"))?;
    write_text(&args.out, &traces.to_csv())?;
    println!("wrote {} frames × {} samples to {}", len, args.samples, args.out.display());
    Ok(())
}

fn cmd_inspect(args: &InspectCmd) -> CmdResult {
    let (config, model) = load_checkpoint(&args.checkpoint)?;
    println!("format version: {}", checkpoint::VERSION);
    println!(
        "parameters: {} tensors, {} values",
        model.params().len(),
        model.params().num_values()
    );
    for (name, t) in model.params().iter() {
        println!("  {name} {:?}", t.shape());
    }
    let json = serde_json::to_string_pretty(&config).map_err(|e| Failure::Runtime(e.to_string()))?;
    println!("run config:\n{json}");
    Ok(())
}

fn init_logging(quiet: bool) {
    let level = if quiet { log::LevelFilter::Warn } else { log::LevelFilter::Info };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .try_init();
}

pub fn execute(cli: &Cli) -> CmdResult {
    match &cli.command {
        Command::GenData(a) => cmd_gen_data(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Ablate(a) => cmd_ablate(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Traces(a) => cmd_traces(a),
        Command::InspectCheckpoint(a) => cmd_inspect(a),
    }
}

/// Parses `argv` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    init_logging(cli.quiet);
    match execute(&cli) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("error: {}", f.message());
            f.exit_code()
        }
    }
}
