//! `motionforge` command line: training, prediction, evaluation and
//! pose interpolation, each run recorded in a JSON manifest.
//!
//! Exit codes: 0 success, 2 usage/config, 3 checkpoint incompatibility,
//! 4 data error, 1 anything else.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, CommandFactory, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ad::{checkpoint::format_value, rng::derive_seed, Array, Checkpoint, RandomSource};
use crate::config::KeyValue;
use crate::data::{load_sequences, pool_frames, synthetic_dataset, SkeletonSpec, SynthSpec};
use crate::error::{Error, Result};
use crate::eval::{
    critic_accuracy, generate_continuations, min_err_metric, r_prime_metric, run_ablation, classifier_score,
    export_sequence, train_action_classifier, ClassifierConfig, ExportFormat, RBank, Report, BANK_SIZE, METRICS,
};
use crate::gan::{GanModel, PoseMap};
use crate::motion::{MotionSequence, PoseVector};
use crate::pose::{format_pose_log, interpolate_poses, train_pose_embedding, PoseAae, PoseTrainConfig, POSE_LOG_HEADER};
use crate::training::{train, format_log, TrainConfig, LOG_HEADER};

pub const LOG_ENV: &str = "MOTIONFORGE_LOG";

#[derive(Parser, Debug)]
#[command(name = "motionforge", version, about = "Probabilistic human motion prediction")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train the adversarial pose embedding.
    TrainPose(TrainPoseArgs),
    /// Train the sequence GAN on top of a pose embedding.
    TrainGan(TrainGanArgs),
    /// Sample continuations of a seed sequence.
    Predict(PredictArgs),
    /// Score a GAN checkpoint on held-out motion.
    Evaluate(EvaluateArgs),
    /// Decode a straight line between two poses in embedding space.
    Interpolate(InterpolateArgs),
}

#[derive(Args, Debug, Clone)]
pub struct DataArgs {
    /// Sequence file or directory of `.csv`/`.jsonl` files.
    #[arg(long, conflicts_with = "synthetic")]
    pub data: Option<PathBuf>,
    /// Use the built-in sinusoidal motion family instead of files.
    #[arg(long)]
    pub synthetic: bool,
    /// `auto`, `human36m`, `passthrough` or a channel-index file.
    #[arg(long, default_value = "auto")]
    pub skeleton: String,
    #[arg(long = "synth_per_category", default_value_t = 8)]
    pub synth_per_category: usize,
    #[arg(long = "synth_length", default_value_t = 120)]
    pub synth_length: usize,
    #[arg(long = "synth_noise", default_value_t = 0.01)]
    pub synth_noise: f64,
}

#[derive(Args, Debug)]
pub struct TrainPoseArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long = "batch_size")]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long = "embed_dim")]
    pub embed_dim: Option<usize>,
    #[arg(long = "pose_hidden")]
    pub pose_hidden: Option<usize>,
    #[arg(long = "pose_layers")]
    pub pose_layers: Option<usize>,
    #[arg(long = "disc_hidden")]
    pub disc_hidden: Option<usize>,
    #[arg(long = "checkpoint_every")]
    pub checkpoint_every: Option<usize>,
}

/// Every [`TrainConfig`] key as a flag of the same name.
#[derive(Args, Debug, Clone, Default)]
pub struct TrainFlags {
    #[arg(long = "batch_size")]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long = "past_len", alias = "T")]
    pub past_len: Option<usize>,
    #[arg(long = "pred_len")]
    pub pred_len: Option<usize>,
    #[arg(long)]
    pub tau: Option<usize>,
    #[arg(long)]
    pub alpha: Option<usize>,
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long = "lambda_r")]
    pub lambda_r: Option<f64>,
    #[arg(long = "lambda_c")]
    pub lambda_c: Option<f64>,
    #[arg(long = "gp_weight")]
    pub gp_weight: Option<f64>,
    #[arg(long = "no_pose_embedding", num_args = 0..=1, default_missing_value = "true")]
    pub no_pose_embedding: Option<bool>,
    #[arg(long = "no_encoder_chaining", num_args = 0..=1, default_missing_value = "true")]
    pub no_encoder_chaining: Option<bool>,
    #[arg(long = "no_recursive", num_args = 0..=1, default_missing_value = "true")]
    pub no_recursive: Option<bool>,
    #[arg(long = "embed_dim")]
    pub embed_dim: Option<usize>,
    #[arg(long = "r_dim")]
    pub r_dim: Option<usize>,
    #[arg(long = "enc_hidden")]
    pub enc_hidden: Option<usize>,
    #[arg(long = "dec_hidden")]
    pub dec_hidden: Option<usize>,
    #[arg(long = "disc_hidden")]
    pub disc_hidden: Option<usize>,
    #[arg(long = "head_hidden")]
    pub head_hidden: Option<usize>,
    #[arg(long = "checkpoint_every")]
    pub checkpoint_every: Option<usize>,
}

macro_rules! overrides {
    ($cfg:expr, $flags:expr; $($name:ident),* $(,)?) => {{
        let mut pairs: Vec<(&str, String)> = Vec::new();
        $(if let Some(v) = &$flags.$name {
            pairs.push((stringify!($name), v.to_string()));
        })*
        for (k, v) in pairs {
            $cfg.set(k, &v)?;
        }
    }};
}

impl TrainFlags {
    fn apply(&self, cfg: &mut TrainConfig) -> Result<()> {
        overrides!(cfg, self; batch_size, lr, past_len, pred_len, tau, alpha, m, k, lambda_r, lambda_c,
            gp_weight, no_pose_embedding, no_encoder_chaining, no_recursive, embed_dim, r_dim, enc_hidden,
            dec_hidden, disc_hidden, head_hidden, checkpoint_every);
        Ok(())
    }
}

#[derive(Args, Debug)]
pub struct TrainGanArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Pose checkpoint from `train-pose` (not needed with no_pose_embedding).
    #[arg(long)]
    pub pose: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Ablation variant: no_pose_embedding, no_encoder_chaining or no_recursive.
    #[arg(long)]
    pub ablation: Option<String>,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub train: TrainFlags,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Seed sequence; its last T frames condition the prediction.
    #[arg(long)]
    pub input: PathBuf,
    /// `sample`, `zeros` or a file with one r vector per line.
    #[arg(long, default_value = "sample")]
    pub r: String,
    #[arg(long = "n_samples", alias = "n-samples", default_value_t = 1)]
    pub n_samples: usize,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "csv")]
    pub format: String,
    #[arg(long, default_value = "auto")]
    pub skeleton: String,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Held-out data (windows of T + pred_len frames are cut from it).
    #[command(flatten)]
    pub data: DataArgs,
    /// Classifier / ablation training data when not synthetic.
    #[arg(long = "train_data")]
    pub train_data: Option<PathBuf>,
    /// Comma-separated subset of euler_r_prime,min_err,critic,classifier,ablation.
    #[arg(long, default_value = "euler_r_prime,min_err,critic,classifier,ablation")]
    pub metrics: String,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long = "bank_size", alias = "bank-size", default_value_t = BANK_SIZE)]
    pub bank_size: usize,
    /// Test windows per category.
    #[arg(long = "test_seeds", alias = "test-seeds", default_value_t = 64)]
    pub test_seeds: usize,
    #[arg(long = "classifier_iterations", default_value_t = 150)]
    pub classifier_iterations: usize,
    /// Base training config for the ablation retrains.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub train: TrainFlags,
}

#[derive(Args, Debug)]
pub struct InterpolateArgs {
    #[arg(long)]
    pub pose: PathBuf,
    #[arg(long = "pose_a", alias = "pose-a")]
    pub pose_a: PathBuf,
    #[arg(long = "pose_b", alias = "pose-b")]
    pub pose_b: PathBuf,
    #[arg(long, default_value_t = 11)]
    pub steps: usize,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "csv")]
    pub format: String,
    #[arg(long, default_value = "auto")]
    pub skeleton: String,
}

/// Everything needed to rerun a command.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    pub config: BTreeMap<String, String>,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub input_sha256: String,
    pub version: String,
}

impl RunManifest {
    fn new(command: &str, args: &[String]) -> Self {
        Self {
            command: command.to_string(),
            args: args.to_vec(),
            config: BTreeMap::new(),
            seeds: BTreeMap::new(),
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            input_sha256: String::new(),
            version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }

    fn with_config(mut self, cfg: &dyn KeyValue) -> Self {
        self.config = cfg.entries().into_iter().map(|(k, v)| (k.to_string(), v)).collect();
        self
    }

    fn seed_fanout(mut self, seed: u64, labels: &[&str]) -> Self {
        self.seeds.insert("base".into(), seed);
        for l in labels {
            self.seeds.insert((*l).to_string(), derive_seed(seed, l));
        }
        self
    }

    fn input(mut self, role: &str, path: &Path) -> Self {
        self.inputs.insert(role.to_string(), path.display().to_string());
        self
    }

    fn output(mut self, role: &str, path: &Path) -> Self {
        self.outputs.insert(role.to_string(), path.display().to_string());
        self
    }

    /// Hashes config, seeds and the bytes of every input path.
    fn seal(mut self) -> Result<Self> {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&self.config)?);
        h.update(serde_json::to_vec(&self.seeds)?);
        for (role, p) in &self.inputs {
            h.update(role.as_bytes());
            hash_path(&mut h, Path::new(p))?;
        }
        self.input_sha256 = h.finalize().iter().map(|b| format!("{b:02x}")).collect();
        Ok(self)
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    pub fn read(dir: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?)
    }
}

fn hash_path(h: &mut Sha256, p: &Path) -> Result<()> {
    if p.is_dir() {
        let mut entries: Vec<PathBuf> = fs::read_dir(p)?.filter_map(|e| e.ok().map(|e| e.path())).collect();
        entries.sort();
        for e in entries {
            h.update(e.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default().as_bytes());
            hash_path(h, &e)?;
        }
    } else if p.is_file() {
        h.update(fs::read(p)?);
    }
    Ok(())
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => 2,
        Error::Checkpoint(_) | Error::Incompatible(_) => 3,
        Error::Data(_) | Error::Parse { .. } => 4,
        _ => 1,
    }
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit code.
pub fn run(argv: Vec<String>) -> i32 {
    let _ = env_logger::Builder::from_env(env_logger::Env::new().filter_or(LOG_ENV, "info"))
        .format_timestamp(None)
        .try_init();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let args = argv.get(1..).unwrap_or_default().to_vec();
    let result = match cli.command {
        Command::TrainPose(a) => cmd_train_pose(&a, &args),
        Command::TrainGan(a) => cmd_train_gan(&a, &args),
        Command::Predict(a) => cmd_predict(&a, &args),
        Command::Evaluate(a) => cmd_evaluate(&a, &args),
        Command::Interpolate(a) => cmd_interpolate(&a, &args),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            let code = exit_code(&e);
            eprintln!("error: {e}");
            if code == 2 {
                eprintln!("{}", Cli::command().render_usage());
            }
            code
        }
    }
}

fn read_config(path: &Option<PathBuf>, cfg: &mut dyn KeyValue) -> Result<()> {
    if let Some(p) = path {
        let text = fs::read_to_string(p).map_err(|e| Error::Config(format!("cannot read config {}: {e}", p.display())))?;
        cfg.apply_text(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
    }
    Ok(())
}

fn config_error(e: Error) -> Error {
    match e {
        Error::Config(_) => e,
        other => Error::Config(other.to_string()),
    }
}

fn resolve_skeleton(name: &str, data: &Path) -> Result<SkeletonSpec> {
    match name {
        "human36m" => Ok(SkeletonSpec::human36m()),
        "passthrough" | "auto" => {
            let file = if data.is_dir() {
                let mut files: Vec<PathBuf> = fs::read_dir(data)
                    .map_err(|e| Error::Data(format!("{}: {e}", data.display())))?
                    .filter_map(|e| e.ok().map(|e| e.path()))
                    .filter(|p| p.extension().is_some_and(|x| x == "csv" || x == "jsonl"))
                    .collect();
                files.sort();
                files.into_iter().next().ok_or_else(|| Error::Data(format!("{}: no sequence files", data.display())))?
            } else {
                data.to_path_buf()
            };
            let channels = first_row_channels(&file)?;
            if name == "auto" && channels == 62 {
                Ok(SkeletonSpec::human36m())
            } else {
                Ok(SkeletonSpec::passthrough(channels))
            }
        }
        path => SkeletonSpec::load(Path::new(path)).map_err(|e| Error::Config(format!("skeleton {path}: {e}"))),
    }
}

fn first_row_channels(file: &Path) -> Result<usize> {
    let text = fs::read_to_string(file).map_err(|e| Error::Data(format!("{}: {e}", file.display())))?;
    let line = text
        .lines()
        .map(str::trim)
        .find(|l| !l.is_empty() && !l.starts_with('#'))
        .ok_or_else(|| Error::Data(format!("{}: no frames", file.display())))?;
    if line.starts_with('{') {
        let v: serde_json::Value = serde_json::from_str(line).map_err(|e| Error::Data(format!("{}: {e}", file.display())))?;
        Ok(v["values"].as_array().map_or(0, Vec::len))
    } else {
        Ok(line.split(',').count())
    }
}

fn load_path(path: &Path, skeleton: &str, min_len: usize) -> Result<Vec<MotionSequence<f64>>> {
    if !path.exists() {
        return Err(Error::Data(format!("{} does not exist", path.display())));
    }
    let spec = resolve_skeleton(skeleton, path)?;
    let rep = load_sequences(path, &spec, min_len)?;
    if rep.sequences.is_empty() {
        return Err(Error::Data(format!("{}: no sequences of at least {min_len} frames", path.display())));
    }
    Ok(rep.sequences)
}

fn synth(args: &DataArgs, per_category: usize, length: usize, rng: &RandomSource, label: &str) -> Result<Vec<MotionSequence<f64>>> {
    synthetic_dataset(&SynthSpec::default(), per_category, length, args.synth_noise, &mut rng.fork(label))
}

fn load_data(args: &DataArgs, rng: &RandomSource, min_len: usize) -> Result<Vec<MotionSequence<f64>>> {
    match (&args.data, args.synthetic) {
        (_, true) => synth(args, args.synth_per_category, args.synth_length.max(min_len), rng, "data"),
        (Some(p), false) => load_path(p, &args.skeleton, min_len),
        (None, false) => Err(Error::Config("one of --data or --synthetic is required".into())),
    }
}

fn data_input(m: RunManifest, args: &DataArgs) -> RunManifest {
    match &args.data {
        Some(p) if !args.synthetic => m.input("data", p),
        _ => {
            let mut m = m;
            m.config.insert("synthetic".into(), format!(
                "per_category={} length={} noise={}",
                args.synth_per_category, args.synth_length, args.synth_noise
            ));
            m
        }
    }
}

fn prepare_out(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", dir.display()))))
}

fn load_pose(path: &Path) -> Result<PoseAae<f64>> {
    let ck = Checkpoint::load(path).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    PoseAae::from_checkpoint(&ck)
}

fn load_gan(path: &Path) -> Result<GanModel<f64>> {
    let ck = Checkpoint::load(path).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    GanModel::from_checkpoint(&ck).map_err(|e| match e {
        Error::Incompatible(_) | Error::Checkpoint(_) => e,
        other => Error::Checkpoint(other.to_string()),
    })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

pub fn cmd_train_pose(a: &TrainPoseArgs, argv: &[String]) -> Result<()> {
    let mut cfg = PoseTrainConfig::default();
    read_config(&a.config, &mut cfg)?;
    overrides!(cfg, a; iterations, batch_size, lr, lambda, embed_dim, pose_hidden, pose_layers, disc_hidden, checkpoint_every);
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    cfg.validate().map_err(config_error)?;
    let rng = RandomSource::new(cfg.seed);
    let seqs = load_data(&a.data, &rng, 1)?;
    let poses = pool_frames(&seqs)?;
    prepare_out(&a.out)?;
    let ckpt = a.out.join("pose.ckpt");
    let log_path = a.out.join("pose_loss.tsv");
    let mut m = RunManifest::new("train-pose", argv).with_config(&cfg).seed_fanout(cfg.seed, &["data", "pose.init", "pose.batch", "pose.prior"]);
    if let Some(c) = &a.config {
        m = m.input("config", c);
    }
    let m = data_input(m, &a.data).output("checkpoint", &ckpt).output("loss_log", &log_path).seal()?;
    m.write(&a.out)?;
    log::info!("train-pose: {} poses of dim {}", poses.rows(), poses.cols());
    let out = train_pose_embedding(&poses, &cfg, &rng, &mut |_, model| model.save(&ckpt))?;
    out.model.save(&ckpt)?;
    write_text(&log_path, &format!("{POSE_LOG_HEADER}\n{}", format_pose_log(&out.log)))?;
    if let (Some(first), Some(last)) = (out.log.first(), out.log.last()) {
        log::info!("train-pose: l_cyc {:.6} -> {:.6}", first.l_cyc, last.l_cyc);
    }
    Ok(())
}

fn train_config(config: &Option<PathBuf>, flags: &TrainFlags, seed: Option<u64>, ablation: Option<&str>) -> Result<TrainConfig> {
    let mut cfg = TrainConfig::default();
    read_config(config, &mut cfg)?;
    flags.apply(&mut cfg)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(v) = ablation {
        cfg.set_ablation(v)?;
    }
    cfg.validate().map_err(config_error)?;
    Ok(cfg)
}

pub fn cmd_train_gan(a: &TrainGanArgs, argv: &[String]) -> Result<()> {
    let cfg = train_config(&a.config, &a.train, a.seed, a.ablation.as_deref())?;
    let pose = if cfg.no_pose_embedding {
        PoseMap::Identity
    } else {
        let p = a.pose.as_ref().ok_or_else(|| Error::Config("--pose is required unless no_pose_embedding".into()))?;
        let aae = load_pose(p)?;
        if aae.spec.embed_dim != cfg.embed_dim {
            return Err(Error::Incompatible(format!(
                "pose checkpoint {} has {}-dim embeddings, config expects embed_dim={}",
                p.display(),
                aae.spec.embed_dim,
                cfg.embed_dim
            )));
        }
        PoseMap::Learned(aae)
    };
    let rng = RandomSource::new(cfg.seed);
    let seqs = load_data(&a.data, &rng, cfg.window_len())?;
    if let PoseMap::Learned(aae) = &pose {
        if aae.spec.pose_dim != seqs[0].dim() {
            return Err(Error::Data(format!(
                "data has {} channels, pose checkpoint expects {}",
                seqs[0].dim(),
                aae.spec.pose_dim
            )));
        }
    }
    prepare_out(&a.out)?;
    let ckpt = a.out.join("gan.ckpt");
    let log_path = a.out.join("loss.tsv");
    let mut m = RunManifest::new("train-gan", argv)
        .with_config(&cfg)
        .seed_fanout(cfg.seed, &["data", "init", "train.data", "train.r", "train.gp"]);
    if let Some(c) = &a.config {
        m = m.input("config", c);
    }
    if let (Some(p), false) = (&a.pose, cfg.no_pose_embedding) {
        m = m.input("pose", p);
    }
    let m = data_input(m, &a.data).output("checkpoint", &ckpt).output("loss_log", &log_path).seal()?;
    m.write(&a.out)?;
    log::info!("train-gan: {} sequences, k={} m={} alpha={}", seqs.len(), cfg.k, cfg.m, cfg.alpha);
    let out = train(&seqs, pose, &cfg, &rng, &mut |_, model, log| {
        model.save(&ckpt)?;
        write_text(&log_path, &format!("{LOG_HEADER}\n{}", format_log(log)))
    })?;
    out.model.save(&ckpt)?;
    write_text(&log_path, &format!("{LOG_HEADER}\n{}", format_log(&out.log)))?;
    if let (Some(first), Some(last)) = (out.log.first(), out.log.last()) {
        log::info!("train-gan: l_content {:.6} -> {:.6}", first.l_content, last.l_content);
    }
    Ok(())
}

fn parse_r_file(path: &Path, r_dim: usize, n: usize) -> Result<Array<f64>> {
    let text = fs::read_to_string(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row: Vec<f64> = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|t| !t.is_empty())
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                detail: format!("bad r value: {e}"),
            })?;
        if row.len() != r_dim {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                detail: format!("r has {} values, model expects {r_dim}", row.len()),
            });
        }
        rows.push(row);
    }
    if rows.len() < n {
        return Err(Error::Data(format!("{}: {} r vectors for {n} samples", path.display(), rows.len())));
    }
    rows.truncate(n);
    Array::from_rows(&rows)
}

pub fn cmd_predict(a: &PredictArgs, argv: &[String]) -> Result<()> {
    let format: ExportFormat = a.format.parse()?;
    if a.n_samples == 0 {
        return Err(Error::Config("n_samples must be >= 1".into()));
    }
    let model = load_gan(&a.checkpoint)?;
    let t = model.spec.past_len;
    let seq = load_path(&a.input, &a.skeleton, 1)?.remove(0);
    if seq.len() < t {
        return Err(Error::Data(format!("seed sequence has {} frames, model needs at least T = {t}", seq.len())));
    }
    if seq.dim() != model.pose_dim {
        return Err(Error::Data(format!("seed has {} channels, model expects {}", seq.dim(), model.pose_dim)));
    }
    let past = seq.window(seq.len() - t, t)?;
    let rd = model.spec.r_dim;
    let rs = match a.r.as_str() {
        "sample" => RandomSource::new(a.seed).fork("r").sample_normal(vec![a.n_samples, rd])?,
        "zeros" => Array::zeros(vec![a.n_samples, rd])?,
        file => parse_r_file(Path::new(file), rd, a.n_samples)?,
    };
    prepare_out(&a.out)?;
    let mut m = RunManifest::new("predict", argv)
        .seed_fanout(a.seed, &["r"])
        .input("checkpoint", &a.checkpoint)
        .input("seed_sequence", &a.input);
    if !matches!(a.r.as_str(), "sample" | "zeros") {
        m = m.input("r", Path::new(&a.r));
    }
    m.config.insert("r".into(), a.r.clone());
    m.config.insert("n_samples".into(), a.n_samples.to_string());
    m.config.insert("format".into(), a.format.clone());
    let names: Vec<PathBuf> = (0..a.n_samples)
        .map(|i| a.out.join(format!("sample_{i:03}.{}", format.extension())))
        .collect();
    for (i, p) in names.iter().enumerate() {
        m = m.output(&format!("sample_{i:03}"), p);
    }
    let r_path = a.out.join("r.tsv");
    let m = m.output("r", &r_path).seal()?;
    m.write(&a.out)?;
    let preds = model.predict_many(&past, &rs)?;
    let mut r_text = String::from("sample");
    for j in 0..rd {
        r_text.push_str(&format!("\tr{j}"));
    }
    r_text.push('\n');
    for (i, (pred, path)) in preds.iter().zip(&names).enumerate() {
        export_sequence(pred, path, format)?;
        let vals: Vec<String> = rs.row(i).iter().map(|v| format_value(*v)).collect();
        r_text.push_str(&format!("{i}\t{}\n", vals.join("\t")));
    }
    write_text(&r_path, &r_text)?;
    log::info!("predict: wrote {} samples of {} frames", preds.len(), model.spec.pred_len);
    Ok(())
}

/// Up to `per_category` evenly spaced windows of `len` frames per label.
pub fn evaluation_windows(seqs: &[MotionSequence<f64>], len: usize, per_category: usize) -> Result<Vec<MotionSequence<f64>>> {
    let mut by_cat: BTreeMap<String, Vec<MotionSequence<f64>>> = BTreeMap::new();
    for s in seqs.iter().filter(|s| s.len() >= len) {
        let cat = s.label.clone().unwrap_or_else(|| crate::eval::UNLABELED.into());
        let starts = s.len() - len + 1;
        let want = per_category.min(starts);
        let bucket = by_cat.entry(cat).or_default();
        for i in 0..want {
            if bucket.len() >= per_category {
                break;
            }
            let start = if want == 1 { 0 } else { i * (starts - 1) / (want - 1) };
            bucket.push(s.window(start, len)?);
        }
    }
    let out: Vec<MotionSequence<f64>> = by_cat.into_values().flatten().collect();
    if out.is_empty() {
        return Err(Error::Data(format!("no test sequence has {len} frames")));
    }
    Ok(out)
}

pub fn parse_metrics(list: &str) -> Result<Vec<String>> {
    let mut out = Vec::new();
    for m in list.split(',').map(str::trim).filter(|m| !m.is_empty()) {
        if !METRICS.contains(&m) {
            return Err(Error::Config(format!("unknown metric `{m}`; valid metrics: {}", METRICS.join(", "))));
        }
        if !out.iter().any(|x| x == m) {
            out.push(m.to_string());
        }
    }
    if out.is_empty() {
        return Err(Error::Config(format!("no metrics requested; valid metrics: {}", METRICS.join(", "))));
    }
    Ok(out)
}

pub fn cmd_evaluate(a: &EvaluateArgs, argv: &[String]) -> Result<()> {
    let metrics = parse_metrics(&a.metrics)?;
    if a.bank_size == 0 || a.test_seeds == 0 {
        return Err(Error::Config("bank_size and test_seeds must be >= 1".into()));
    }
    let model = load_gan(&a.checkpoint)?;
    let (t, p) = (model.spec.past_len, model.spec.pred_len);
    let rng = RandomSource::new(a.seed);
    let tests = if a.data.synthetic {
        synth(&a.data, a.test_seeds, t + p, &rng, "test")?
    } else {
        evaluation_windows(&load_data(&a.data, &rng, t + p)?, t + p, a.test_seeds)?
    };
    let needs_training = metrics.iter().any(|m| m == "classifier" || m == "ablation");
    let train_seqs = if !needs_training {
        Vec::new()
    } else if a.data.synthetic {
        synth(&a.data, a.data.synth_per_category, a.data.synth_length.max(t + 2 * p), &rng, "train")?
    } else {
        let path = a.train_data.as_ref().ok_or_else(|| Error::Config("--train_data is required for classifier/ablation on file data".into()))?;
        load_path(path, &a.data.skeleton, t + p)?
    };
    let mut base = train_config(&a.config, &a.train, Some(a.seed), None)?;
    let spec = &model.spec;
    base.embed_dim = spec.embed_dim;
    base.r_dim = spec.r_dim;
    base.enc_hidden = spec.enc_hidden;
    base.dec_hidden = spec.dec_hidden;
    base.disc_hidden = spec.disc_hidden;
    base.head_hidden = spec.head_hidden;
    base.past_len = t;
    base.pred_len = p;
    base.tau = spec.tau;
    base.validate().map_err(config_error)?;

    prepare_out(&a.out)?;
    let report_path = a.out.join("report.tsv");
    let mut m = RunManifest::new("evaluate", argv)
        .seed_fanout(a.seed, &["test", "train", "eval.bank", "eval.r", "cls.init", "cls.data"])
        .input("checkpoint", &a.checkpoint);
    if metrics.iter().any(|x| x == "ablation") {
        m = m.with_config(&base);
    }
    if let Some(c) = &a.config {
        m = m.input("config", c);
    }
    if let (Some(d), false) = (&a.train_data, a.data.synthetic) {
        m = m.input("train_data", d);
    }
    m.config.insert("metrics".into(), metrics.join(","));
    m.config.insert("bank_size".into(), a.bank_size.to_string());
    m.config.insert("test_seeds".into(), a.test_seeds.to_string());
    let m = data_input(m, &a.data).output("report", &report_path).seal()?;
    m.write(&a.out)?;

    let mut report = Report::default();
    let bank = RBank::sample(a.bank_size, spec.r_dim, a.seed)?;
    for metric in &metrics {
        log::info!("evaluate: {metric}");
        match metric.as_str() {
            "euler_r_prime" => report.add_horizons("euler_r_prime", &r_prime_metric(&model, &tests)?),
            "min_err" => {
                report.add_horizons("min_err", &min_err_metric(&model, &bank, &tests, false)?);
                report.push("all", None, "min_err.bank_size", bank.len() as f64);
            }
            "critic" => {
                let generated = generate_continuations(&model, &tests, &mut rng.fork("eval.r"))?;
                report.add_critic(&critic_accuracy(&model, &tests, &generated)?);
            }
            "classifier" => {
                let cfg = ClassifierConfig {
                    iterations: a.classifier_iterations,
                    seed: a.seed,
                    ..ClassifierConfig::default()
                };
                let clf = train_action_classifier(&train_seqs, t, p, spec.tau, &cfg, &rng)?;
                report.push("all", None, "classifier.real", clf.accuracy(&tests)?);
                report.push("all", None, "classifier.generated", classifier_score(&clf, &tests, &model, &mut rng.fork("eval.r"))?);
                report.push("all", None, "classifier.chance", 1.0 / clf.labels.len() as f64);
            }
            "ablation" => {
                let rows = run_ablation(&train_seqs, &tests, &model.pose, &base, &bank, &rng)?;
                report.add_ablation(&rows);
            }
            _ => unreachable!("validated metric"),
        }
    }
    write_text(&report_path, &report.to_tsv())?;
    log::info!("evaluate: wrote {} rows to {}", report.rows.len(), report_path.display());
    Ok(())
}

fn load_pose_file(path: &Path, skeleton: &str) -> Result<PoseVector<f64>> {
    let seq = load_path(path, skeleton, 1)?.remove(0);
    if seq.len() > 1 {
        log::warn!("{}: {} frames, using the first", path.display(), seq.len());
    }
    PoseVector::new(seq.frame(0).to_vec()).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

pub fn cmd_interpolate(a: &InterpolateArgs, argv: &[String]) -> Result<()> {
    let format: ExportFormat = a.format.parse()?;
    if a.steps < 2 {
        return Err(Error::Config(format!("steps must be >= 2, got {}", a.steps)));
    }
    let aae = load_pose(&a.pose)?;
    let pa = load_pose_file(&a.pose_a, &a.skeleton)?;
    let pb = load_pose_file(&a.pose_b, &a.skeleton)?;
    for (p, path) in [(&pa, &a.pose_a), (&pb, &a.pose_b)] {
        if p.dim() != aae.spec.pose_dim {
            return Err(Error::Data(format!("{} has {} channels, embedding expects {}", path.display(), p.dim(), aae.spec.pose_dim)));
        }
    }
    prepare_out(&a.out)?;
    let out_path = a.out.join(format!("interpolation.{}", format.extension()));
    let mut m = RunManifest::new("interpolate", argv)
        .input("pose", &a.pose)
        .input("pose_a", &a.pose_a)
        .input("pose_b", &a.pose_b)
        .output("interpolation", &out_path);
    m.config.insert("steps".into(), a.steps.to_string());
    let m = m.seal()?;
    m.write(&a.out)?;
    let poses = interpolate_poses(&aae, &pa, &pb, a.steps)?;
    let frames: Vec<Vec<f64>> = poses.iter().map(|p| p.angles().to_vec()).collect();
    export_sequence(&MotionSequence::from_frames(&frames, None)?, &out_path, format)?;
    log::info!("interpolate: wrote {} poses", poses.len());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_code_mapping() {
        assert_eq!(exit_code(&Error::Config("x".into())), 2);
        assert_eq!(exit_code(&Error::Incompatible("x".into())), 3);
        assert_eq!(exit_code(&Error::Checkpoint("x".into())), 3);
        assert_eq!(exit_code(&Error::Data("x".into())), 4);
        assert_eq!(exit_code(&Error::Invalid("x".into())), 1);
    }

    #[test]
    fn metric_names() {
        assert_eq!(parse_metrics("min_err,critic").unwrap(), vec!["min_err", "critic"]);
        let err = parse_metrics("min_err,bogus").unwrap_err();
        assert!(err.to_string().contains("euler_r_prime, min_err, critic, classifier, ablation"));
        assert_eq!(exit_code(&err), 2);
    }

    #[test]
    fn flags_override_file_and_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.cfg");
        fs::write(&path, "k=7\nm=3\nT=12\n").unwrap();
        let flags = TrainFlags {
            m: Some(1),
            no_recursive: Some(true),
            ..TrainFlags::default()
        };
        let c = train_config(&Some(path), &flags, Some(9), Some("no_encoder_chaining")).unwrap();
        assert_eq!((c.k, c.m, c.past_len, c.seed), (7, 1, 12, 9));
        assert!(c.no_recursive && c.no_encoder_chaining && !c.no_pose_embedding);
        assert_eq!(c.batch_size, TrainConfig::default().batch_size);
        let missing = train_config(&Some(dir.path().join("nope")), &TrainFlags::default(), None, None).unwrap_err();
        assert_eq!(exit_code(&missing), 2);
    }

    #[test]
    fn cli_parses_key_named_flags() {
        let cli = Cli::try_parse_from([
            "motionforge", "train-gan", "--out", "o", "--synthetic", "--batch_size", "4", "--no_recursive", "--ablation",
            "no_pose_embedding", "--past_len", "10",
        ])
        .unwrap();
        let Command::TrainGan(a) = cli.command else { panic!() };
        assert_eq!(a.train.batch_size, Some(4));
        assert_eq!(a.train.no_recursive, Some(true));
        assert_eq!(a.train.past_len, Some(10));
        assert_eq!(a.ablation.as_deref(), Some("no_pose_embedding"));
    }

    #[test]
    fn windows_per_category() {
        let seqs = synthetic_dataset::<f64>(
            &SynthSpec {
                channels: 2,
                categories: 2,
                ..SynthSpec::default()
            },
            2,
            20,
            0.0,
            &mut RandomSource::new(0),
        )
        .unwrap();
        let w = evaluation_windows(&seqs, 10, 5).unwrap();
        assert_eq!(w.len(), 10);
        assert!(w.iter().all(|s| s.len() == 10));
        assert!(evaluation_windows(&seqs, 30, 5).is_err());
    }

    #[test]
    fn manifest_hash_tracks_inputs() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("d.csv");
        fs::write(&f, "0.1,0.2\n").unwrap();
        let a = RunManifest::new("x", &[]).input("data", &f).seal().unwrap();
        let b = RunManifest::new("x", &[]).input("data", &f).seal().unwrap();
        assert_eq!(a, b);
        fs::write(&f, "0.1,0.3\n").unwrap();
        let c = RunManifest::new("x", &[]).input("data", &f).seal().unwrap();
        assert_ne!(a.input_sha256, c.input_sha256);
        a.write(dir.path()).unwrap();
        assert_eq!(RunManifest::read(dir.path()).unwrap(), a);
    }
}
