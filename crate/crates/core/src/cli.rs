//! The `schgan` command line: `synth`, `train`, `eval`, `encode`.
//!
//! Every command is fully determined by its config file and seed, and
//! writes a `run_meta.json` next to its outputs recording the resolved
//! configuration (hashed) and the checksums of all inputs. Exit codes:
//! 0 success, 2 config error, 3 data error, 4 runtime error.

use crate::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use crate::config::ExperimentConfig;
use crate::data::{
    load_dataset, read_feature_file, save_dataset, sha256_hex, synth_generate, write_code_file,
    Dataset,
};
use crate::eval::{default_k_grid, evaluate, pr_curve_csv, topk_csv};
use crate::model::{Direction, Modality, ModelConfig};
use crate::trainer::{DirectionChoice, TrainMode, Trainer};
use crate::discriminator::LossMode;
use crate::{Error, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};

#[derive(Parser, Debug)]
#[command(
    name = "schgan",
    version,
    about = "Semi-supervised cross-modal hashing: synthetic data, adversarial training, Hamming-ranking evaluation"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic two-modality dataset
    Synth(SynthArgs),
    /// Train the adversarial hashing model (or the discriminator-only ablation)
    Train(TrainArgs),
    /// Evaluate a checkpoint: MAP, PR curve, top-K precision
    Eval(EvalArgs),
    /// Encode a feature file into binary hash codes
    Encode(EncodeArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug)]
pub enum ModeArg {
    #[value(name = "schgan")]
    Schgan,
    #[value(name = "dis_only")]
    DisOnly,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
pub enum LossArg {
    #[value(name = "triplet")]
    Triplet,
    #[value(name = "literal")]
    Literal,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
pub enum DirectionArg {
    #[value(name = "both")]
    Both,
    #[value(name = "t2i")]
    T2i,
    #[value(name = "i2t")]
    I2t,
}

impl DirectionArg {
    fn choice(self) -> DirectionChoice {
        match self {
            DirectionArg::Both => DirectionChoice::Both,
            DirectionArg::T2i => DirectionChoice::T2i,
            DirectionArg::I2t => DirectionChoice::I2t,
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug)]
pub enum ModalityArg {
    #[value(name = "image")]
    Image,
    #[value(name = "text")]
    Text,
}

impl ModalityArg {
    fn modality(self) -> Modality {
        match self {
            ModalityArg::Image => Modality::Image,
            ModalityArg::Text => Modality::Text,
        }
    }
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Experiment config with a `synth` section
    #[arg(long)]
    pub config: PathBuf,
    /// Override the synth seed
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory (overrides the config's out_dir)
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Experiment config with `model`, `train` and `dataset`
    #[arg(long)]
    pub config: PathBuf,
    /// Override the training seed
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads for evaluation passes; training updates are a single
    /// writer and results do not depend on this
    #[arg(long)]
    pub threads: Option<usize>,
    /// Training mode
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    /// Discriminator loss flavor
    #[arg(long, value_enum)]
    pub loss: Option<LossArg>,
    /// Retrieval directions to train
    #[arg(long, value_enum)]
    pub direction: Option<DirectionArg>,
    /// Hash code length in bits
    #[arg(long)]
    pub bits: Option<usize>,
    /// Output directory (overrides the config's out_dir)
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Resume from a checkpoint carrying trainer state
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dataset manifest to evaluate against
    #[arg(long)]
    pub manifest: PathBuf,
    /// Direction(s) to evaluate
    #[arg(long, value_enum, default_value = "both")]
    pub direction: DirectionArg,
    /// Optional experiment config supplying eval_k_grid
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub threads: Option<usize>,
    /// Output directory
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EncodeArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Binary feature file to encode
    #[arg(long)]
    pub features: PathBuf,
    /// Which pathway the features belong to
    #[arg(long, value_enum)]
    pub modality: ModalityArg,
    /// Output directory
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(args) => cmd_synth(args),
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Encode(args) => cmd_encode(args),
    }
}

// ---------------------------------------------------------------------------
// run metadata
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct FileMeta {
    path: String,
    sha256: String,
}

#[derive(Serialize)]
struct RunMeta {
    command: String,
    config_sha256: String,
    config: serde_json::Value,
    inputs: Vec<FileMeta>,
    outputs: Vec<String>,
}

fn sha256_of_str(s: &str) -> String {
    let digest = Sha256::digest(s.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

fn write_run_meta(
    out_dir: &Path,
    command: &str,
    config: serde_json::Value,
    input_paths: &[&Path],
    outputs: Vec<String>,
) -> Result<()> {
    let inputs = input_paths
        .iter()
        .map(|p| {
            Ok(FileMeta {
                path: p.display().to_string(),
                sha256: sha256_hex(p)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let meta = RunMeta {
        command: command.to_string(),
        config_sha256: sha256_of_str(&serde_json::to_string(&config)?),
        config,
        inputs,
        outputs,
    };
    let path = out_dir.join("run_meta.json");
    let mut json = serde_json::to_string_pretty(&meta)?;
    json.push('\n');
    std::fs::write(&path, json).map_err(|e| Error::io(path.display().to_string(), e))
}

fn ensure_out_dir(explicit: Option<PathBuf>, from_cfg: Option<PathBuf>) -> Result<PathBuf> {
    let dir = explicit
        .or(from_cfg)
        .ok_or_else(|| Error::Config("no output directory: set out_dir in the config or pass --out".into()))?;
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    Ok(dir)
}

fn with_thread_pool<T>(threads: Option<usize>, f: impl FnOnce() -> Result<T> + Send) -> Result<T>
where
    T: Send,
{
    match threads {
        Some(n) if n >= 1 => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::Runtime(format!("thread pool: {e}")))?;
            pool.install(f)
        }
        Some(0) => Err(Error::Config("--threads must be >= 1".into())),
        _ => f(),
    }
}

// ---------------------------------------------------------------------------
// commands
// ---------------------------------------------------------------------------

fn cmd_synth(args: SynthArgs) -> Result<()> {
    let cfg = ExperimentConfig::load(&args.config)?;
    let mut synth_cfg = cfg
        .synth
        .clone()
        .ok_or_else(|| Error::Config("synth requires a `synth` section in the config".into()))?;
    if let Some(seed) = args.seed {
        synth_cfg.seed = seed;
    }
    synth_cfg.validate()?;
    let out_dir = ensure_out_dir(args.out, cfg.out_dir.clone())?;

    let output = synth_generate(&synth_cfg)?;
    save_dataset(&output.dataset, &out_dir)?;
    log::info!(
        "wrote dataset `{}`: {} labeled / {} unlabeled / {} queries → {}",
        output.dataset.name(),
        output.dataset.labeled().len(),
        output.dataset.unlabeled().len(),
        output.dataset.queries().len(),
        out_dir.display()
    );
    write_run_meta(
        &out_dir,
        "synth",
        serde_json::to_value(&synth_cfg)?,
        &[&args.config],
        vec![
            "manifest.json".into(),
            "images.feat".into(),
            "texts.feat".into(),
        ],
    )
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let cfg = ExperimentConfig::load(&args.config)?;
    let mut train_cfg = cfg.train.clone();
    if let Some(seed) = args.seed {
        train_cfg.seed = seed;
    }
    if let Some(mode) = args.mode {
        train_cfg.train_mode = match mode {
            ModeArg::Schgan => TrainMode::Schgan,
            ModeArg::DisOnly => TrainMode::DisOnly,
        };
    }
    if let Some(loss) = args.loss {
        train_cfg.loss_mode = match loss {
            LossArg::Triplet => LossMode::Triplet,
            LossArg::Literal => LossMode::Literal,
        };
    }
    if let Some(direction) = args.direction {
        train_cfg.directions = direction.choice();
    }
    let dataset_path = cfg
        .dataset
        .clone()
        .ok_or_else(|| Error::Config("train requires a `dataset` manifest path".into()))?;
    let dataset = load_dataset(&dataset_path)?;
    let out_dir = ensure_out_dir(args.out, cfg.out_dir.clone())?;

    let mut model_cfg = cfg
        .model
        .clone()
        .ok_or_else(|| Error::Config("train requires a `model` section".into()))?;
    if let Some(bits) = args.bits {
        model_cfg.code_len = bits;
    }
    model_cfg.validate()?;

    let resume_ckpt = args
        .resume
        .as_ref()
        .map(|p| load_checkpoint(p))
        .transpose()?;
    let mut trainer = match resume_ckpt {
        Some(ckpt) => {
            let state = ckpt.state.ok_or_else(|| {
                Error::Data("checkpoint has no trainer state; cannot resume from it".into())
            })?;
            if ckpt.model.config() != &model_cfg {
                return Err(Error::Config(format!(
                    "checkpoint model shape {:?} does not match configured shape {:?}",
                    ckpt.model.config(),
                    model_cfg
                )));
            }
            Trainer::resume(&dataset, train_cfg.clone(), ckpt.model, &state)?
        }
        None => Trainer::new(&dataset, &model_cfg, train_cfg.clone())?,
    };

    let mut epoch_outputs: Vec<String> = Vec::new();
    with_thread_pool(args.threads, || {
        let every = train_cfg.checkpoint_every;
        trainer.run(|t| {
            if every > 0 && (t.epoch() as usize).is_multiple_of(every) {
                let name = format!("model_epoch_{}.ckpt", t.epoch());
                save_checkpoint(
                    &out_dir.join(&name),
                    &Checkpoint {
                        model: t.model().clone(),
                        state: Some(t.state()),
                    },
                )?;
                epoch_outputs.push(name);
            }
            Ok(())
        })
    })?;

    save_checkpoint(
        &out_dir.join("model.ckpt"),
        &Checkpoint {
            model: trainer.model().clone(),
            state: Some(trainer.state()),
        },
    )?;
    let log_text = trainer.log().to_ldjson()?;
    let log_path = out_dir.join("train_log.jsonl");
    std::fs::write(&log_path, log_text).map_err(|e| Error::io(log_path.display().to_string(), e))?;
    log::info!(
        "trained {} epochs ({} updates) → {}",
        trainer.epoch(),
        trainer.log().records.len(),
        out_dir.display()
    );

    let mut outputs = vec!["model.ckpt".to_string(), "train_log.jsonl".to_string()];
    outputs.extend(epoch_outputs);
    let mut effective = serde_json::json!({
        "model": model_cfg,
        "train": train_cfg,
        "dataset": dataset_path.display().to_string(),
    });
    if let Some(resume) = &args.resume {
        effective["resume"] = serde_json::json!(resume.display().to_string());
    }
    let mut inputs: Vec<&Path> = vec![&args.config, &dataset_path];
    if let Some(r) = &args.resume {
        inputs.push(r);
    }
    write_run_meta(&out_dir, "train", effective, &inputs, outputs)
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let ckpt = load_checkpoint(&args.checkpoint)?;
    let dataset = load_dataset(&args.manifest)?;
    check_dims(ckpt.model.config(), &dataset)?;
    let directions = args.direction.choice().directions();

    let mut k_grid = match &args.config {
        Some(p) => ExperimentConfig::load(p)?.eval_k_grid.unwrap_or_else(default_k_grid),
        None => default_k_grid(),
    };
    let db = dataset.database_size();
    let before = k_grid.len();
    k_grid.retain(|&k| k <= db);
    if k_grid.len() < before {
        log::warn!("dropped {} top-K points beyond database size {db}", before - k_grid.len());
    }
    if k_grid.is_empty() {
        return Err(Error::Config(format!(
            "eval_k_grid has no usable K for database size {db}"
        )));
    }

    let out_dir = ensure_out_dir(args.out, None)?;
    let report = with_thread_pool(args.threads, || {
        evaluate(&ckpt.model.discriminator, &dataset, &directions, &k_grid)
    })?;

    let mut outputs = vec!["metrics.json".to_string()];
    let metrics_path = out_dir.join("metrics.json");
    std::fs::write(&metrics_path, report.to_json()?)
        .map_err(|e| Error::io(metrics_path.display().to_string(), e))?;
    for dir_report in &report.directions {
        let name = dir_report.direction.name();
        let pr_name = format!("pr_{name}.csv");
        let topk_name = format!("topk_{name}.csv");
        std::fs::write(out_dir.join(&pr_name), pr_curve_csv(&dir_report.pr_curve))
            .map_err(|e| Error::io(pr_name.clone(), e))?;
        std::fs::write(out_dir.join(&topk_name), topk_csv(&dir_report.topk_precision))
            .map_err(|e| Error::io(topk_name.clone(), e))?;
        outputs.push(pr_name);
        outputs.push(topk_name);
        println!("{} MAP {:.4}", name, dir_report.map);
    }

    let effective = serde_json::json!({
        "checkpoint": args.checkpoint.display().to_string(),
        "manifest": args.manifest.display().to_string(),
        "directions": directions,
        "k_grid": k_grid,
        "code_len": report.code_len,
    });
    let mut inputs: Vec<&Path> = vec![&args.checkpoint, &args.manifest];
    if let Some(c) = &args.config {
        inputs.push(c);
    }
    write_run_meta(&out_dir, "eval", effective, &inputs, outputs)
}

fn cmd_encode(args: EncodeArgs) -> Result<()> {
    let ckpt = load_checkpoint(&args.checkpoint)?;
    let modality = args.modality.modality();
    let (dim, rows) = read_feature_file(&args.features)?;
    let expected = ckpt.model.config().input_dim(modality);
    if dim != expected {
        return Err(Error::Data(format!(
            "{}: feature dim {dim} does not match the checkpoint's {} input dim {expected}",
            args.features.display(),
            modality.name()
        )));
    }
    let out_dir = ensure_out_dir(args.out, None)?;
    let entries: Vec<(u32, &[f64])> = rows
        .iter()
        .enumerate()
        .map(|(i, r)| (i as u32, r.as_slice()))
        .collect();
    let codes: Vec<_> =
        crate::eval::encode_features(&ckpt.model.discriminator, modality, &entries)?
            .into_iter()
            .map(|(_, code)| code)
            .collect();
    let code_path = out_dir.join("codes.bin");
    write_code_file(&code_path, &codes)?;
    log::info!(
        "encoded {} items at {} bits → {}",
        codes.len(),
        ckpt.model.config().code_len,
        code_path.display()
    );

    let effective = serde_json::json!({
        "checkpoint": args.checkpoint.display().to_string(),
        "features": args.features.display().to_string(),
        "modality": modality.name(),
        "code_len": ckpt.model.config().code_len,
    });
    write_run_meta(
        &out_dir,
        "encode",
        effective,
        &[&args.checkpoint, &args.features],
        vec!["codes.bin".to_string()],
    )
}

/// Checks that a checkpoint and dataset agree on feature dimensions before
/// evaluation; exposed for reuse by the FFI layer.
pub fn check_dims(ckpt_cfg: &ModelConfig, dataset: &Dataset) -> Result<()> {
    if ckpt_cfg.image_input_dim != dataset.image_dim()
        || ckpt_cfg.text_input_dim != dataset.text_dim()
    {
        return Err(Error::Data(format!(
            "checkpoint dims ({}, {}) do not match dataset dims ({}, {})",
            ckpt_cfg.image_input_dim,
            ckpt_cfg.text_input_dim,
            dataset.image_dim(),
            dataset.text_dim()
        )));
    }
    Ok(())
}

/// Directions helper shared with the FFI layer.
pub fn parse_directions(s: &str) -> Result<Vec<Direction>> {
    match s {
        "both" => Ok(DirectionChoice::Both.directions()),
        "t2i" => Ok(DirectionChoice::T2i.directions()),
        "i2t" => Ok(DirectionChoice::I2t.directions()),
        other => Err(Error::Config(format!("unknown direction `{other}`"))),
    }
}
