//! `vora` command-line entry point.
//!
//! Exit codes: 0 ok, 1 I/O or other failure, 2 configuration error,
//! 3 numeric abort (NaN/Inf loss), 4 state misuse (e.g. merging twice),
//! 5 gradient check failure.

mod runconfig;

use std::fmt;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::{info, warn};
use serde_json::json;

use vora::data::{dump::dump_dataset, heldout};
use vora::gradcheck::{check_all, REL_TOL};
use vora::model::{Checkpoint, Model};
use vora::train::{
    direction_checks, eval_metrics, finetune, pretrain, pretrain_base, run_ablation, to_csv, warm_teacher,
    AblationCell, AblationConfig, DataSource, TrainConfig, TrainMode,
};
use vora::vision::Teacher;
use vora::VoraError;

use runconfig::{ConfigError, RunConfig};

#[derive(Parser)]
#[command(name = "vora", version, about = "Encoder-free vision-language training: pre-train, merge, fine-tune, evaluate and ablate")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Stage one: frozen base, adapters + vision embedding + AuxHeads.
    Pretrain {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Stage two: merge adapters, drop AuxHeads, train the LLM on the LM loss.
    Finetune {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fold adapters into the base weights.
    Merge {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Held-out caption accuracy, text perplexity and distillation alignment (JSON on stdout).
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference check of every op and the end-to-end objective.
    Gradcheck {
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Mask mode × distillation mode × rank sweep; writes ablation.csv.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Writes the first training batches as manifest.jsonl + raw RGB images.
    DumpData {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        batches: usize,
    },
    /// Prints every config key with its documented default.
    ConfigTemplate,
}

#[derive(Debug)]
enum CliError {
    Config(ConfigError),
    Core(VoraError),
    Io(PathBuf, io::Error),
    GradCheck(usize),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Core(VoraError::Config(_) | VoraError::Layout(_)) => 2,
            CliError::Core(VoraError::NumericAbort { .. }) => 3,
            CliError::Core(VoraError::State(_)) => 4,
            CliError::GradCheck(_) => 5,
            CliError::Core(_) | CliError::Io(..) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(e) => write!(f, "config error: {e}"),
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Io(p, e) => write!(f, "{}: {e}", p.display()),
            CliError::GradCheck(n) => write!(f, "{n} gradient check(s) failed"),
        }
    }
}

impl From<VoraError> for CliError {
    fn from(e: VoraError) -> Self {
        CliError::Core(e)
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e)
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn io_at<T>(path: &Path, r: io::Result<T>) -> Result<T> {
    r.map_err(|e| CliError::Io(path.to_path_buf(), e))
}

fn load_config(path: &Path) -> Result<RunConfig> {
    let text = io_at(path, fs::read_to_string(path))?;
    Ok(RunConfig::parse(&text)?)
}

fn prepare_out(out: &Path, cfg: &RunConfig) -> Result<()> {
    io_at(out, fs::create_dir_all(out))?;
    let p = out.join("config.resolved");
    io_at(&p, fs::write(&p, cfg.normalized()))
}

fn base_model(cfg: &RunConfig) -> Result<Model> {
    let mut model = Model::init(cfg.model.clone(), cfg.seed)?;
    if cfg.base_pretrain_steps > 0 {
        let base = TrainConfig {
            lr: cfg.base_pretrain_lr,
            warmup_steps: cfg.base_pretrain_warmup,
            total_steps: cfg.base_pretrain_steps,
            ..cfg.train.clone()
        };
        let out = pretrain_base(&mut model, &cfg.data, &base)?;
        info!("base pre-training final lm loss {:?}", out.lm_curve().last());
    }
    Ok(model)
}

fn teacher(cfg: &RunConfig) -> Result<Teacher> {
    let mut t = Teacher::init(&cfg.model, cfg.seed)?;
    if cfg.teacher_warmup_steps > 0 {
        let losses = warm_teacher(
            &mut t,
            &cfg.data,
            cfg.teacher_warmup_steps,
            cfg.teacher_warmup_batch,
            cfg.teacher_warmup_lr,
            cfg.seed,
        )?;
        info!("teacher warm-up loss {:?} -> {:?}", losses.first(), losses.last());
    }
    Ok(t)
}

fn metrics_writer(out: &Path) -> Result<(PathBuf, BufWriter<File>)> {
    let p = out.join("metrics.jsonl");
    let f = io_at(&p, File::create(&p))?;
    Ok((p, BufWriter::new(f)))
}

fn cmd_pretrain(config: &Path, out: &Path) -> Result<()> {
    let cfg = load_config(config)?;
    if cfg.train.mode == TrainMode::Finetune {
        return Err(ConfigError {
            line: None,
            key: Some("mode".into()),
            msg: "pretrain needs mode pretrain or full_llm_unstable".into(),
        }
        .into());
    }
    prepare_out(out, &cfg)?;
    let mut model = base_model(&cfg)?;
    let teacher = teacher(&cfg)?;
    let (mp, mut w) = metrics_writer(out)?;
    let outcome = pretrain(
        &mut model,
        Some(&teacher),
        &DataSource::Stream(cfg.data.clone()),
        &cfg.train,
        Some(&mut w),
    )?;
    io_at(&mp, w.flush())?;
    Checkpoint::from_model(&model, Some(&teacher)).save(out.join("checkpoint.vora"))?;
    if cfg.train.mode == TrainMode::FullLlmUnstable {
        let p = out.join("spikes.json");
        let report = json!({ "spike": !outcome.spikes.is_empty(), "steps": outcome.spikes });
        io_at(&p, fs::write(&p, format!("{report}\n")))?;
        info!("loss spikes at steps {:?}", outcome.spikes);
    }
    println!(
        "pretrain: {} steps, final total loss {}",
        outcome.state.step,
        outcome.state.history.last().map_or(f32::NAN, |m| m.total_loss)
    );
    Ok(())
}

fn cmd_finetune(ckpt: &Path, config: &Path, out: &Path) -> Result<()> {
    let cfg = load_config(config)?;
    let (mut model, _teacher) = Checkpoint::load(ckpt)?.into_parts();
    prepare_out(out, &cfg)?;
    let (mp, mut w) = metrics_writer(out)?;
    let outcome = finetune(&mut model, &DataSource::Stream(cfg.data.clone()), &cfg.train, Some(&mut w))?;
    io_at(&mp, w.flush())?;
    Checkpoint::from_model(&model, None).save(out.join("checkpoint.vora"))?;
    println!(
        "finetune: {} steps, final lm loss {}",
        outcome.state.step,
        outcome.state.history.last().map_or(f32::NAN, |m| m.lm_loss)
    );
    Ok(())
}

fn cmd_merge(input: &Path, output: &Path) -> Result<()> {
    let (mut model, _teacher) = Checkpoint::load(input)?.into_parts();
    let n = model.merge_lora()?;
    model.strip_aux();
    Checkpoint::from_model(&model, None).save(output)?;
    println!("merge: folded {n} adapters");
    Ok(())
}

fn cmd_eval(ckpt: &Path, config: &Path, out: Option<&Path>) -> Result<()> {
    let cfg = load_config(config)?;
    let (model, teacher) = Checkpoint::load(ckpt)?.into_parts();
    let data = vora::data::DataConfig {
        patch: model.config.patch,
        ..cfg.data.clone()
    };
    let samples = heldout(cfg.seed, cfg.eval_samples, &data)?;
    let m = eval_metrics(&model, teacher.as_ref(), &samples, cfg.train.mask_mode)?;
    let probe = model.logits(&samples[0].input(), cfg.train.mask_mode)?;
    let probe_row = probe.row(probe.rows() - 1).to_vec();
    let report = json!({
        "caption_token_accuracy": m.caption_token_accuracy,
        "text_perplexity": m.text_perplexity,
        "distill_alignment": m.distill_alignment,
        "image_samples": m.image_samples,
        "text_samples": m.text_samples,
        "probe_logits": probe_row,
    });
    let text = format!("{report}\n");
    print!("{text}");
    if let Some(p) = out {
        io_at(p, fs::write(p, &text))?;
    }
    Ok(())
}

fn cmd_gradcheck(config: Option<&Path>) -> Result<()> {
    let cfg = match config {
        Some(p) => load_config(p)?,
        None => RunConfig::with_seed(0),
    };
    let reports = check_all(cfg.gradcheck_trials, cfg.seed)?;
    let mut failed = 0;
    for r in &reports {
        let verdict = if r.passed() { "ok" } else { "FAIL" };
        println!("{:<14} trials={:<3} max_rel_err={:.3e} {verdict}", r.name, r.trials, r.max_rel_err);
        failed += usize::from(!r.passed());
    }
    println!("tolerance {REL_TOL:e}");
    if failed > 0 {
        return Err(CliError::GradCheck(failed));
    }
    Ok(())
}

fn cmd_ablate(config: &Path, out: &Path) -> Result<()> {
    let cfg = load_config(config)?;
    prepare_out(out, &cfg)?;
    let mut cells = Vec::new();
    for &mask_mode in &cfg.ablate_mask_modes {
        for &distill_mode in &cfg.ablate_distill_modes {
            for &rank in &cfg.ablate_ranks {
                cells.push(AblationCell {
                    mask_mode,
                    distill_mode,
                    rank,
                });
            }
        }
    }
    let grid = AblationConfig {
        cells,
        budget_steps: cfg.ablate_steps,
        thresholds: cfg.ablate_thresholds.clone(),
    };
    let model = base_model(&cfg)?;
    let teacher = teacher(&cfg)?;
    let (rows, curves) = run_ablation(&grid, &model, Some(&teacher), &DataSource::Stream(cfg.data.clone()), &cfg.train)?;
    let p = out.join("ablation.csv");
    io_at(&p, fs::write(&p, to_csv(&rows)))?;
    let p = out.join("curves.jsonl");
    let mut w = BufWriter::new(io_at(&p, File::create(&p))?);
    for c in &curves {
        let rec = json!({
            "mask_mode": c.cell.mask_mode.as_str(),
            "distill_mode": c.cell.distill_mode.as_str(),
            "rank": c.cell.rank,
            "lm_loss": c.lm_loss,
            "smoothed": c.smoothed,
        });
        io_at(&p, writeln!(w, "{rec}"))?;
    }
    io_at(&p, w.flush())?;
    for d in direction_checks(&rows, &grid.thresholds) {
        match d.block_wise_holds() {
            Some(true) => info!(
                "{} rank {}: block_wise {:?} <= none {:?} steps at threshold {:?}",
                d.mask_mode.as_str(),
                d.rank,
                d.block_wise,
                d.none,
                d.threshold
            ),
            Some(false) => warn!(
                "{} rank {}: block_wise needed {:?} steps, none {:?}, at threshold {:?}",
                d.mask_mode.as_str(),
                d.rank,
                d.block_wise,
                d.none,
                d.threshold
            ),
            None => warn!("{} rank {}: no threshold reached", d.mask_mode.as_str(), d.rank),
        }
    }
    println!("ablate: {} cells, {} rows", grid.cells.len(), rows.len());
    Ok(())
}

fn cmd_dump(config: &Path, out: &Path, batches: usize) -> Result<()> {
    let cfg = load_config(config)?;
    let n = dump_dataset(out, cfg.seed, batches, cfg.train.batch_size, &cfg.data)?;
    println!("dump-data: {n} samples");
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Pretrain { config, out } => cmd_pretrain(&config, &out),
        Cmd::Finetune { checkpoint, config, out } => cmd_finetune(&checkpoint, &config, &out),
        Cmd::Merge { input, output } => cmd_merge(&input, &output),
        Cmd::Eval { checkpoint, config, out } => cmd_eval(&checkpoint, &config, out.as_deref()),
        Cmd::Gradcheck { config } => cmd_gradcheck(config.as_deref()),
        Cmd::Ablate { config, out } => cmd_ablate(&config, &out),
        Cmd::DumpData { config, out, batches } => cmd_dump(&config, &out, batches),
        Cmd::ConfigTemplate => {
            print!("{}", RunConfig::template());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("VORA_LOG", "warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
