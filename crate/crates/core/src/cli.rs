//! Command-line front end.
//!
//! Every subcommand accepts `--config FILE` with `key=value` lines whose
//! keys are long flag names. Flags on the command line win over the file,
//! and the file wins over built-in defaults. Exit codes: 0 success,
//! 2 usage, 3 data, 4 numeric.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::parser::ValueSource;
use clap::{ArgMatches, Args, CommandFactory, FromArgMatches, Parser, Subcommand};

use crate::dataio::{read_cloud, write_ply, Checkpoint, Dataset, Split, SynthSpec};
use crate::error::{Error, Result};
use crate::geom::{mix, normalize_unit_sphere, subsample, AugmentParams, PointCloud};
use crate::model::{encode_cls, encode_seg, onehot, Branch, DecoderConfig, EncoderConfig, MdModel};
use crate::train::config::{encoder_from_map, lookup, parse_list};
use crate::train::{
    derive_rng, evaluate, finetune_cls, finetune_seg, label_ratio_split, reconstruct, stream, Init, ModelConfig,
    PreparedSample, Pretrainer, TrainConfig,
};

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

#[derive(Parser, Debug)]
#[command(name = "pointmix", version, about = "Mixing-and-disentangling pre-training for point clouds")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Pre-train encoder and decoder on mixed pairs
    Pretrain(PretrainArgs),
    /// Fine-tune for shape classification
    FinetuneCls(FinetuneClsArgs),
    /// Fine-tune for part segmentation
    FinetuneSeg(FinetuneSegArgs),
    /// Recompute metrics of a fine-tuned checkpoint
    Eval(EvalArgs),
    /// Export one embedding row per cloud as CSV
    Embed(EmbedArgs),
    /// Mix two clouds and write PLY files
    Mix(MixArgs),
}

#[derive(Args, Debug, Clone)]
pub struct DataArgs {
    /// Dataset directory (categories.txt plus train/val/test)
    #[arg(long, value_name = "DIR", conflicts_with = "synthetic")]
    pub data: Option<PathBuf>,
    /// Synthetic dataset: `default` or `classes=6,train=600,test=200,points=256,variation=0.2,seed=0`
    #[arg(long, value_name = "SPEC")]
    pub synthetic: Option<String>,
}

#[derive(Args, Debug, Clone)]
pub struct EncoderArgs {
    /// Neighbors per point in every EdgeConv layer
    #[arg(long, default_value_t = 20)]
    pub k: usize,
    /// EdgeConv widths of the classification branch
    #[arg(long, default_value = "64,64,128,256")]
    pub cls_channels: String,
    /// EdgeConv widths of the segmentation branch
    #[arg(long, default_value = "64,64,64")]
    pub seg_channels: String,
    /// Embedding width
    #[arg(long, default_value_t = 1024)]
    pub emb_dim: usize,
    /// Category count of the segmentation one-hot; 0 takes it from the data
    #[arg(long, default_value_t = 0)]
    pub categories: usize,
}

#[derive(Args, Debug, Clone)]
pub struct OptimArgs {
    /// Minibatch size
    #[arg(long, default_value_t = 12)]
    pub batch: usize,
    /// Initial learning rate of the cosine schedule
    #[arg(long, default_value_t = 0.1)]
    pub lr: f64,
    /// Adam beta1
    #[arg(long, default_value_t = 0.9)]
    pub beta1: f64,
    /// Adam beta2
    #[arg(long, default_value_t = 0.99)]
    pub beta2: f64,
    /// Points sampled per cloud
    #[arg(long, default_value_t = 1024)]
    pub points: usize,
    /// Seed of every random stream
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Single-threaded, bit-reproducible run
    #[arg(long)]
    pub deterministic: bool,
    /// Worker threads for batch assembly [default: number of cores]
    #[arg(long)]
    pub threads: Option<usize>,
    /// Gaussian jitter sigma
    #[arg(long, default_value_t = 0.01)]
    pub jitter_sigma: f64,
    /// Jitter clip
    #[arg(long, default_value_t = 0.05)]
    pub jitter_clip: f64,
    /// Lower bound of the random scale
    #[arg(long, default_value_t = 0.8)]
    pub scale_lo: f64,
    /// Upper bound of the random scale
    #[arg(long, default_value_t = 1.25)]
    pub scale_hi: f64,
}

#[derive(Args, Debug, Clone)]
pub struct PretrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub encoder: EncoderArgs,
    #[command(flatten)]
    pub optim: OptimArgs,
    /// Encoder branch: cls or seg
    #[arg(long, default_value = "cls")]
    pub branch: String,
    /// Widths of the three decoder units
    #[arg(long, default_value = "512,256,128")]
    pub decoder_widths: String,
    /// Decoder dropout probability
    #[arg(long, default_value_t = 0.5)]
    pub dropout: f64,
    /// Hidden width of the denoise block
    #[arg(long, default_value_t = 64)]
    pub denoise_hidden: usize,
    /// Training epochs
    #[arg(long, default_value_t = 200)]
    pub epochs: usize,
    /// Weight of the contrastive loss
    #[arg(long, default_value_t = 1.0)]
    pub lambda: f64,
    /// Epochs between intermediate checkpoints; 0 keeps only the final one
    #[arg(long, default_value_t = 0)]
    pub save_interval: usize,
    /// Output checkpoint
    #[arg(long, value_name = "CKPT")]
    pub out: PathBuf,
    /// Step log [default: <out>.log]
    #[arg(long, value_name = "FILE")]
    pub log: Option<PathBuf>,
    /// key=value file of flag defaults
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct FinetuneArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub encoder: EncoderArgs,
    #[command(flatten)]
    pub optim: OptimArgs,
    /// Encoder initialization: a pre-training checkpoint or `scratch`
    #[arg(long, value_name = "CKPT|scratch", default_value = "scratch")]
    pub init: String,
    /// Fraction of training clouds kept labelled, stratified by category
    #[arg(long, default_value_t = 1.0)]
    pub label_ratio: f64,
    /// Output checkpoint
    #[arg(long, value_name = "CKPT")]
    pub out: PathBuf,
    /// Metrics CSV [default: <out>.csv]
    #[arg(long, value_name = "FILE")]
    pub csv: Option<PathBuf>,
    /// Step log [default: <out>.log]
    #[arg(long, value_name = "FILE")]
    pub log: Option<PathBuf>,
    /// key=value file of flag defaults
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct FinetuneClsArgs {
    #[command(flatten)]
    pub common: FinetuneArgs,
    /// Training epochs
    #[arg(long, default_value_t = 250)]
    pub epochs: usize,
}

#[derive(Args, Debug, Clone)]
pub struct FinetuneSegArgs {
    #[command(flatten)]
    pub common: FinetuneArgs,
    /// Training epochs
    #[arg(long, default_value_t = 200)]
    pub epochs: usize,
}

#[derive(Args, Debug, Clone)]
pub struct EvalArgs {
    /// Fine-tuned checkpoint
    #[arg(long, value_name = "CKPT")]
    pub ckpt: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    /// Split to evaluate: train, val, test
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Also write the metrics as CSV
    #[arg(long, value_name = "FILE")]
    pub csv: Option<PathBuf>,
    /// key=value file of flag defaults
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct EmbedArgs {
    /// Checkpoint holding an encoder
    #[arg(long, value_name = "CKPT")]
    pub ckpt: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    /// Output CSV
    #[arg(long, value_name = "CSV")]
    pub out: PathBuf,
    /// key=value file of flag defaults
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct MixArgs {
    /// First source cloud (.pcd text or .pcdb)
    #[arg(long, value_name = "FILE")]
    pub a: PathBuf,
    /// Second source cloud
    #[arg(long, value_name = "FILE")]
    pub b: PathBuf,
    /// Mixed cloud PLY; reconstructions go next to it
    #[arg(long, value_name = "PLY")]
    pub out: PathBuf,
    /// Pre-training checkpoint used for the reconstructions
    #[arg(long, value_name = "CKPT")]
    pub ckpt: Option<PathBuf>,
    /// Color reconstructions by denoise weight (needs --ckpt)
    #[arg(long, requires = "ckpt")]
    pub weights: bool,
    /// Points per source [default: size of the smaller cloud]
    #[arg(long)]
    pub points: Option<usize>,
    /// Seed of sampling and mixing
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// key=value file of flag defaults
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
}

/// The clap command with every subcommand letting a later flag replace an earlier one.
pub fn command() -> clap::Command {
    Cli::command().mut_subcommands(|s| s.args_override_self(true))
}

fn read_config_file(path: &Path, sub: &clap::Command) -> std::result::Result<Vec<OsString>, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| format!("{}:{}: expected key=value", path.display(), n + 1))?;
        let key = key.trim().replace('_', "-");
        let value = value.trim();
        let arg = sub
            .get_arguments()
            .find(|a| a.get_long() == Some(key.as_str()) && key != "config")
            .ok_or_else(|| format!("{}:{}: unknown config key `{key}`", path.display(), n + 1))?;
        if arg.get_action().takes_values() {
            out.push(OsString::from(format!("--{key}")));
            out.push(OsString::from(value));
        } else {
            match value {
                "true" | "1" | "yes" => out.push(OsString::from(format!("--{key}"))),
                "false" | "0" | "no" => {}
                _ => return Err(format!("{}:{}: `{key}` takes true or false", path.display(), n + 1)),
            }
        }
    }
    Ok(out)
}

fn config_path(args: &[OsString]) -> Option<PathBuf> {
    let mut it = args.iter();
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--config" {
            return it.next().map(PathBuf::from);
        }
        if let Some(p) = s.strip_prefix("--config=") {
            return Some(PathBuf::from(p));
        }
    }
    None
}

/// Splices config-file flags in front of the command-line flags.
fn merge_config(args: Vec<OsString>) -> std::result::Result<Vec<OsString>, String> {
    let Some(name) = args.get(1).map(|s| s.to_string_lossy().into_owned()) else {
        return Ok(args);
    };
    let Some(path) = config_path(&args[2..]) else {
        return Ok(args);
    };
    let cmd = command();
    let Some(sub) = cmd.find_subcommand(&name) else {
        return Ok(args);
    };
    let file_args = read_config_file(&path, sub)?;
    let mut merged = args[..2].to_vec();
    merged.extend(file_args);
    merged.extend_from_slice(&args[2..]);
    Ok(merged)
}

fn source_name(s: Option<ValueSource>) -> &'static str {
    match s {
        Some(ValueSource::DefaultValue) => "default",
        Some(ValueSource::EnvVariable) => "env",
        Some(_) => "set",
        None => "unset",
    }
}

/// Writes every effective value as `config <key>=<value>` lines.
fn echo_config(m: &ArgMatches, sub: &clap::Command, threads: Option<usize>, err: &mut dyn Write) -> Result<()> {
    for arg in sub.get_arguments() {
        let id = arg.get_id().as_str();
        if id == "help" || id == "version" {
            continue;
        }
        let long = arg.get_long().unwrap_or(id);
        let value = match m.get_raw(id) {
            Some(vals) => vals.map(|v| v.to_string_lossy()).collect::<Vec<_>>().join(","),
            None if id == "threads" && threads.is_some() => {
                writeln!(err, "config {long}={} (resolved)", threads.unwrap_or(1))?;
                continue;
            }
            None => "-".to_string(),
        };
        writeln!(err, "config {long}={value} ({})", source_name(m.value_source(id)))?;
    }
    Ok(())
}

fn usage(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

fn load_data(d: &DataArgs) -> Result<Dataset> {
    match (&d.data, &d.synthetic) {
        (Some(dir), None) => Dataset::load_dir(dir),
        (None, Some(spec)) => SynthSpec::parse(spec)?.generate(),
        _ => Err(usage("give exactly one of --data or --synthetic")),
    }
}

fn train_config(o: &OptimArgs, epochs: usize, lambda: f64, save_interval: usize) -> TrainConfig {
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    TrainConfig {
        batch_size: o.batch,
        epochs,
        lr0: o.lr,
        beta1: o.beta1,
        beta2: o.beta2,
        points_per_cloud: o.points,
        seed: o.seed,
        lambda,
        deterministic: o.deterministic,
        threads: o.threads.unwrap_or(cores),
        augment: AugmentParams {
            jitter_sigma: o.jitter_sigma,
            jitter_clip: o.jitter_clip,
            scale_lo: o.scale_lo,
            scale_hi: o.scale_hi,
        },
        save_interval,
        ..TrainConfig::default()
    }
}

fn encoder_config(e: &EncoderArgs, branch: Branch, data: &Dataset) -> Result<EncoderConfig> {
    let cfg = EncoderConfig {
        branch,
        k: e.k,
        cls_channels: parse_list("cls-channels", &e.cls_channels)?,
        seg_channels: parse_list("seg-channels", &e.seg_channels)?,
        embedding_dim: e.emb_dim,
        num_categories: if e.categories == 0 {
            data.num_categories()
        } else {
            e.categories
        },
    };
    cfg.validate()?;
    Ok(cfg)
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn run_pretrain(a: &PretrainArgs, err: &mut dyn Write) -> Result<()> {
    let all = load_data(&a.data)?;
    let train_idx = all.indices(Split::Train);
    let data = if train_idx.is_empty() { all } else { all.subset(&train_idx)? };
    let branch = Branch::parse(&a.branch)?;
    let model = ModelConfig {
        encoder: encoder_config(&a.encoder, branch, &data)?,
        decoder: DecoderConfig {
            unit_widths: parse_list("decoder-widths", &a.decoder_widths)?,
            dropout: a.dropout,
            denoise_hidden: a.denoise_hidden,
        },
    };
    model.validate()?;
    let config = train_config(&a.optim, a.epochs, a.lambda, a.save_interval);
    writeln!(err, "pretrain: {} clouds, {} threads", data.len(), config.effective_threads())?;
    let mut trainer = Pretrainer::new(&data, model, config)?;
    let mut log = create(&a.log.clone().unwrap_or_else(|| with_suffix(&a.out, ".log")))?;
    let checkpoint = trainer.run(&mut log, Some(&a.out))?;
    checkpoint.save(&a.out)?;
    writeln!(err, "pretrain: wrote {}", a.out.display())?;
    Ok(())
}

fn run_finetune(a: &FinetuneArgs, epochs: usize, branch: Branch, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    let data = load_data(&a.data)?;
    let train_all = data.indices(Split::Train);
    let mut test_idx = data.indices(Split::Test);
    if test_idx.is_empty() {
        test_idx = data.indices(Split::Val);
    }
    if train_all.is_empty() || test_idx.is_empty() {
        return Err(Error::MissingLabels("fine-tuning needs a train split and a test or val split".into()));
    }
    let train_idx = if a.label_ratio < 1.0 {
        let split = label_ratio_split(&data, &train_all, a.label_ratio, a.optim.seed)?;
        for w in &split.warnings {
            writeln!(err, "warning: {w}")?;
        }
        split.labeled
    } else if a.label_ratio == 1.0 {
        train_all
    } else {
        return Err(usage(format!("label ratio must lie in (0, 1], got {}", a.label_ratio)));
    };
    writeln!(err, "finetune: {} labelled clouds, {} test clouds", train_idx.len(), test_idx.len())?;
    let encoder = encoder_config(&a.encoder, branch, &data)?;
    let config = train_config(&a.optim, epochs, 0.0, 0);
    let pretrained;
    let init = if a.init == "scratch" {
        Init::Scratch
    } else {
        pretrained = Checkpoint::load(Path::new(&a.init))?;
        Init::Pretrained(&pretrained)
    };
    let mut log = create(&a.log.clone().unwrap_or_else(|| with_suffix(&a.out, ".log")))?;
    let outcome = match branch {
        Branch::Classification => finetune_cls(&data, &train_idx, &test_idx, &encoder, &init, &config, &mut log)?,
        Branch::Segmentation => finetune_seg(&data, &train_idx, &test_idx, &encoder, &init, &config, &mut log)?,
    };
    outcome.checkpoint.save(&a.out)?;
    let csv = a.csv.clone().unwrap_or_else(|| with_suffix(&a.out, ".csv"));
    fs::write(&csv, outcome.report.to_csv())?;
    out.write_all(outcome.report.render().as_bytes())?;
    writeln!(err, "finetune: wrote {} and {}", a.out.display(), csv.display())?;
    Ok(())
}

fn parse_split(s: &str) -> Result<Split> {
    match s {
        "train" => Ok(Split::Train),
        "val" => Ok(Split::Val),
        "test" => Ok(Split::Test),
        _ => Err(usage(format!("unknown split {s:?}; use train, val or test"))),
    }
}

fn run_eval(a: &EvalArgs, out: &mut dyn Write) -> Result<()> {
    let checkpoint = Checkpoint::load(&a.ckpt)?;
    let data = load_data(&a.data)?;
    let idx = data.indices(parse_split(&a.split)?);
    if idx.is_empty() {
        return Err(Error::MissingLabels(format!("dataset has no {} split", a.split)));
    }
    let (report, _) = evaluate(&checkpoint, &data, &idx)?;
    if let Some(csv) = &a.csv {
        fs::write(csv, report.to_csv())?;
    }
    out.write_all(report.render().as_bytes())?;
    Ok(())
}

fn eval_cloud(cloud: &PointCloud, points: usize, seed: u64, index: usize) -> Result<PointCloud> {
    let picked = if cloud.len() > points {
        subsample(cloud, points, &mut derive_rng(seed, stream::EVAL, index as u64, 0))?
    } else {
        cloud.clone()
    };
    Ok(normalize_unit_sphere(&picked).cloud)
}

fn run_embed(a: &EmbedArgs, err: &mut dyn Write) -> Result<()> {
    let checkpoint = Checkpoint::load(&a.ckpt)?;
    let encoder = encoder_from_map(&checkpoint.config)?;
    let points: usize = lookup(&checkpoint.config, "train.points")?;
    let seed: u64 = lookup(&checkpoint.config, "train.seed")?;
    let data = load_data(&a.data)?;
    let mut w = create(&a.out)?;
    write!(w, "index,split,category")?;
    for j in 0..encoder.embedding_dim {
        write!(w, ",e{j}")?;
    }
    writeln!(w)?;
    for i in 0..data.len() {
        let cloud = eval_cloud(data.cloud(i), points, seed, i)?;
        let emb = match encoder.branch {
            Branch::Classification => encode_cls(&cloud.points, &encoder, &checkpoint.params)?,
            Branch::Segmentation => {
                let cat = data.category_of(i, "segmentation embedding")?;
                encode_seg(&cloud.points, &onehot(cat, encoder.num_categories)?, &encoder, &checkpoint.params)?.1
            }
        };
        let category = data.cloud(i).category.map_or_else(String::new, |c| c.to_string());
        write!(w, "{i},{},{category}", data.split(i).dir_name())?;
        for v in emb {
            write!(w, ",{v}")?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    writeln!(err, "embed: wrote {} rows to {}", data.len(), a.out.display())?;
    Ok(())
}

fn sibling(out: &Path, tag: &str) -> PathBuf {
    let stem = out.file_stem().map_or_else(|| "mix".into(), |s| s.to_string_lossy().into_owned());
    out.with_file_name(format!("{stem}_{tag}.ply"))
}

fn run_mix(a: &MixArgs, err: &mut dyn Write) -> Result<()> {
    let ca = read_cloud(&a.a)?;
    let cb = read_cloud(&a.b)?;
    let n = a.points.unwrap_or(ca.len().min(cb.len()));
    let mut rng = derive_rng(a.seed, stream::SAMPLE, 0, 0);
    let sa = normalize_unit_sphere(&subsample(&ca, n, &mut rng)?).cloud;
    let sb = normalize_unit_sphere(&subsample(&cb, n, &mut rng)?).cloud;
    let sample = mix(&sa, &sb, &mut rng)?;
    write_ply(&a.out, &sample.mixed.points, None)?;
    writeln!(err, "mix: wrote {} ({} points)", a.out.display(), n)?;
    let Some(ckpt) = &a.ckpt else {
        return Ok(());
    };
    let checkpoint = Checkpoint::load(ckpt)?;
    if checkpoint.config_value("task")? != "pretrain" {
        return Err(Error::ShapeTableMismatch("mix reconstructions need a pre-training checkpoint".into()));
    }
    let cfg = ModelConfig::from_map(&checkpoint.config)?;
    let model = MdModel::new(cfg.encoder.clone(), cfg.decoder.clone())?;
    let onehot = match cfg.encoder.branch {
        Branch::Classification => None,
        Branch::Segmentation => {
            let cat = ca
                .category
                .ok_or_else(|| Error::MissingLabels("segmentation checkpoint needs the category of --a".into()))?;
            Some(onehot(cat as usize, cfg.encoder.num_categories)?)
        }
    };
    let rec = reconstruct(&model, &checkpoint.params, &PreparedSample { sample, onehot })?;
    let pa = sibling(&a.out, "recon_a");
    let pb = sibling(&a.out, "recon_b");
    write_ply(&pa, &rec.points_a, a.weights.then_some(rec.weights_a.as_slice()))?;
    write_ply(&pb, &rec.points_b, a.weights.then_some(rec.weights_b.as_slice()))?;
    writeln!(err, "mix: wrote {} and {}", pa.display(), pb.display())?;
    Ok(())
}

/// Exit code for a library error.
pub fn exit_code(e: &Error) -> i32 {
    if e.is_numeric() {
        EXIT_NUMERIC
    } else if e.is_data() {
        EXIT_DATA
    } else {
        EXIT_USAGE
    }
}

/// Parses `args` (program name first), runs the subcommand and returns the exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let merged = match merge_config(args) {
        Ok(m) => m,
        Err(msg) => {
            let _ = writeln!(err, "error: {msg}");
            return EXIT_USAGE;
        }
    };
    let cmd = command();
    let matches = match cmd.clone().try_get_matches_from(merged) {
        Ok(m) => m,
        Err(e) => {
            let text = e.render().to_string();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
                    let _ = out.write_all(text.as_bytes());
                    0
                }
                _ => {
                    let _ = err.write_all(text.as_bytes());
                    EXIT_USAGE
                }
            };
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = write!(err, "{}", e.render());
            return EXIT_USAGE;
        }
    };
    let (name, sub_m) = matches.subcommand().expect("subcommand is required");
    let sub = cmd.find_subcommand(name).expect("parsed subcommand exists");
    let threads = match &cli.command {
        Command::Pretrain(a) => Some(&a.optim),
        Command::FinetuneCls(a) => Some(&a.common.optim),
        Command::FinetuneSeg(a) => Some(&a.common.optim),
        _ => None,
    }
    .map(|o| train_config(o, 1, 0.0, 0).effective_threads());
    if echo_config(sub_m, sub, threads, err).is_err() {
        return EXIT_DATA;
    }
    let result = match &cli.command {
        Command::Pretrain(a) => run_pretrain(a, err),
        Command::FinetuneCls(a) => run_finetune(&a.common, a.epochs, Branch::Classification, out, err),
        Command::FinetuneSeg(a) => run_finetune(&a.common, a.epochs, Branch::Segmentation, out, err),
        Command::Eval(a) => run_eval(a, out),
        Command::Embed(a) => run_embed(a, err),
        Command::Mix(a) => run_mix(a, err),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}
