//! The `fsr` command line.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::checkpoint::Checkpoint;
use crate::config::ExperimentConfig;
use crate::data::{Dataset, Generator, Split};
use crate::decoder::{DecodeMode, SkipConfig};
use crate::error::{Error, Result};
use crate::eval::{decode_dataset, evaluate};
use crate::losses::FsrConfig;
use crate::metrics::{EvalReport, UtteranceResult};
use crate::model::TinyTransducer;
use crate::train::{train, StepRecord};

pub const CONFIG_FILE: &str = "config.txt";
pub const CHECKPOINT_FILE: &str = "checkpoint.fsrckpt";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";
pub const REPORT_FILE: &str = "report.txt";
pub const REPORT_CSV_FILE: &str = "report.csv";
pub const UTTERANCE_CSV_FILE: &str = "utterances.csv";
pub const ALIGN_SUMMARY_FILE: &str = "summary.txt";

pub const LAMBDA_GRID: [f64; 6] = [0.0, 0.001, 0.003, 0.005, 0.01, 0.02];
pub const WINDOW_GRID: [(usize, usize); 6] = [(0, 0), (1, 0), (0, 1), (1, 1), (2, 1), (1, 2)];
pub const DELTA_GRID: [f64; 9] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];

pub fn split_file(split: Split) -> String {
    format!("{}.fsrdata", split.name())
}

pub fn manifest_file(split: Split) -> String {
    format!("{}.manifest", split.name())
}

#[derive(Debug, Parser)]
#[command(name = "fsr", version, about = "Transducer training with fast-skip regularization")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone, Default)]
pub struct ConfigArgs {
    /// Experiment config file (key = value lines); defaults apply otherwise.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override a config key, e.g. `--set lambda=0.01`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

impl ConfigArgs {
    pub fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        for o in &self.overrides {
            cfg.apply_override(o)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the train, dev and test splits with manifests.
    Gen {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Output directory (overrides `data_dir`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a model on the train split.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Dataset directory (overrides `data_dir`).
        #[arg(long)]
        data: Option<PathBuf>,
        /// Run directory (overrides `out_dir`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Continue from the checkpoint in the run directory.
        #[arg(long)]
        resume: bool,
        /// Save a checkpoint every this many steps.
        #[arg(long, default_value_t = 500)]
        checkpoint_every: u64,
    },
    /// Decode a dataset and report CER, counters and speed.
    Eval {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset file.
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "greedy")]
        mode: DecodeMode,
        /// Report directory.
        #[arg(long)]
        out: PathBuf,
        /// Decode utterances concurrently; timing numbers are only meaningful with 1.
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Write per-frame alignment records for every utterance.
    Align {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "greedy")]
        mode: DecodeMode,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one of the experiment grids.
    Sweep {
        #[command(subcommand)]
        kind: SweepKind,
    },
}

#[derive(Debug, Subcommand)]
pub enum SweepKind {
    /// Train one model per lambda and evaluate each greedy and fast-skip.
    Lambda {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fast-skip with each spike-window on one checkpoint.
    Window {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fast-skip with each skip-trigger threshold on one checkpoint.
    Delta {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Regularization on/off crossed with fast-skip on/off.
    Ablation {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Checkpoint trained without regularization.
        #[arg(long)]
        baseline: PathBuf,
        /// Checkpoint trained with regularization.
        #[arg(long)]
        regularized: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

/// `error kind=<kind> message="<text>"`, one line.
pub fn error_line(err: &Error) -> String {
    let msg = err.to_string().replace('\\', "\\\\").replace('"', "\\\"").replace('\n', " ");
    format!("error kind={} message=\"{}\"", err.kind(), msg)
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen { cfg, out } => {
            let cfg = cfg.resolve()?;
            let dir = out.unwrap_or_else(|| PathBuf::from(&cfg.data_dir));
            cmd_gen(&cfg, &dir)
        }
        Command::Train {
            cfg,
            data,
            out,
            resume,
            checkpoint_every,
        } => {
            let cfg = cfg.resolve()?;
            let data = data.unwrap_or_else(|| PathBuf::from(&cfg.data_dir));
            let out = out.unwrap_or_else(|| PathBuf::from(&cfg.out_dir));
            cmd_train(&cfg, &data, &out, resume, checkpoint_every).map(|_| ())
        }
        Command::Eval {
            cfg,
            checkpoint,
            data,
            mode,
            out,
            threads,
        } => {
            let mut cfg = cfg.resolve()?;
            if let Some(t) = threads {
                cfg.train.threads = t;
            }
            let report = cmd_eval(&cfg, &checkpoint, &data, mode, &out)?;
            print!("{}", report.to_key_values());
            Ok(())
        }
        Command::Align {
            cfg,
            checkpoint,
            data,
            mode,
            out,
        } => {
            let cfg = cfg.resolve()?;
            let mean = cmd_align(&cfg, &checkpoint, &data, mode, &out)?;
            println!("mean_agreement={}", fmt_opt(mean));
            Ok(())
        }
        Command::Sweep { kind } => match kind {
            SweepKind::Lambda { cfg, data, out } => {
                let cfg = cfg.resolve()?;
                let data = data.unwrap_or_else(|| PathBuf::from(&cfg.data_dir));
                sweep_lambda(&cfg, &data, &out)
            }
            SweepKind::Window {
                cfg,
                checkpoint,
                data,
                out,
            } => sweep_window(&cfg.resolve()?, &checkpoint, &data, &out),
            SweepKind::Delta {
                cfg,
                checkpoint,
                data,
                out,
            } => sweep_delta(&cfg.resolve()?, &checkpoint, &data, &out),
            SweepKind::Ablation {
                cfg,
                baseline,
                regularized,
                data,
                out,
            } => sweep_ablation(&cfg.resolve()?, &baseline, &regularized, &data, &out),
        },
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |a| format!("{a:.6}"))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    crate::io::write_atomically(path, |w| w.write_all(text.as_bytes()))
}

fn prepare_dir(dir: &Path, cfg: &ExperimentConfig) -> Result<()> {
    fs::create_dir_all(dir)?;
    cfg.save(&dir.join(CONFIG_FILE))
}

pub fn cmd_gen(cfg: &ExperimentConfig, dir: &Path) -> Result<()> {
    prepare_dir(dir, cfg)?;
    let generator = Generator::new(cfg.task.clone())?;
    for (split, n) in [
        (Split::Train, cfg.train_utterances),
        (Split::Dev, cfg.dev_utterances),
        (Split::Test, cfg.test_utterances),
    ] {
        let data = generator.generate(split, n)?;
        data.save(&dir.join(split_file(split)))?;
        write_text(&dir.join(manifest_file(split)), &data.manifest())?;
    }
    Ok(())
}

/// Train into `out`, returning the final checkpoint. On a non-finite step the
/// last good parameters are saved before the error is returned.
pub fn cmd_train(
    cfg: &ExperimentConfig,
    data_dir: &Path,
    out: &Path,
    resume: bool,
    checkpoint_every: u64,
) -> Result<Checkpoint> {
    let data = Dataset::load(&data_dir.join(split_file(Split::Train)))?;
    let ckpt_path = out.join(CHECKPOINT_FILE);
    let log_path = out.join(TRAIN_LOG_FILE);
    let (mut model, start) = if resume {
        let ckpt = Checkpoint::load(&ckpt_path)?;
        if ckpt.model.config != cfg.model_config() {
            return Err(Error::Config(format!(
                "checkpoint model {:?} does not match config {:?}",
                ckpt.model.config,
                cfg.model_config()
            )));
        }
        (ckpt.model, ckpt.step)
    } else {
        (TinyTransducer::init(cfg.model_config(), cfg.init_seed)?, 0)
    };
    prepare_dir(out, cfg)?;

    let mut log = if resume {
        let text = fs::read_to_string(&log_path).unwrap_or_default();
        let kept: Vec<&str> = text
            .lines()
            .filter(|l| {
                l.split(',')
                    .next()
                    .and_then(|s| s.parse::<u64>().ok())
                    .is_some_and(|s| s <= start)
            })
            .collect();
        let mut f = fs::File::create(&log_path)?;
        writeln!(f, "{}", StepRecord::CSV_HEADER)?;
        for l in kept {
            writeln!(f, "{l}")?;
        }
        f
    } else {
        let mut f = fs::File::create(&log_path)?;
        writeln!(f, "{}", StepRecord::CSV_HEADER)?;
        f
    };

    let total = cfg.train.steps;
    let result = train(&mut model, &data, &cfg.fsr, &cfg.train, start, |m, r| {
        writeln!(log, "{}", r.csv_row())?;
        if r.step % 100 == 0 || r.step == total {
            eprintln!(
                "step {}/{} transducer {:.4} ctc {:.4} fsr {:.4} grad_norm {:.3}",
                r.step, total, r.transducer, r.ctc, r.fsr_surrogate, r.grad_norm
            );
        }
        if checkpoint_every > 0 && r.step % checkpoint_every == 0 {
            log.flush()?;
            Checkpoint { model: m.clone(), step: r.step }.save(&ckpt_path)?;
        }
        Ok(())
    });
    log.flush()?;
    match result {
        Ok(records) => {
            let step = records.last().map_or(start, |r| r.step);
            let ckpt = Checkpoint { model, step };
            ckpt.save(&ckpt_path)?;
            Ok(ckpt)
        }
        Err(err @ Error::NonFinite { step, .. }) => {
            Checkpoint { model, step: step - 1 }.save(&ckpt_path)?;
            Err(err)
        }
        Err(err) => Err(err),
    }
}

fn load_for_eval(cfg: &ExperimentConfig, checkpoint: &Path, data: &Path) -> Result<(ExperimentConfig, TinyTransducer, Dataset)> {
    let model = Checkpoint::load(checkpoint)?.model;
    let data = Dataset::load(data)?;
    let mut cfg = cfg.clone();
    let m = model.config;
    cfg.task.vocab_size = m.vocab_size;
    cfg.task.feat_dim = m.feat_dim;
    cfg.hidden = m.hidden;
    cfg.context = m.context;
    cfg.subsample = m.subsample;
    Ok((cfg, model, data))
}

fn write_report(dir: &Path, report: &EvalReport, results: &[UtteranceResult]) -> Result<()> {
    write_text(&dir.join(REPORT_FILE), &report.to_key_values())?;
    write_text(
        &dir.join(REPORT_CSV_FILE),
        &format!("{}\n{}\n", EvalReport::csv_header(), report.csv_row()),
    )?;
    let mut csv = format!("{}\n", UtteranceResult::csv_header());
    for r in results {
        csv.push_str(&r.csv_row());
        csv.push('\n');
    }
    write_text(&dir.join(UTTERANCE_CSV_FILE), &csv)
}

pub fn cmd_eval(
    cfg: &ExperimentConfig,
    checkpoint: &Path,
    data: &Path,
    mode: DecodeMode,
    out: &Path,
) -> Result<EvalReport> {
    let (cfg, model, data) = load_for_eval(cfg, checkpoint, data)?;
    let (decoded, report) = evaluate(&model, &data, mode, &cfg.skip, cfg.train.threads)?;
    prepare_dir(out, &cfg)?;
    let results: Vec<UtteranceResult> = decoded.into_iter().map(|d| d.result).collect();
    write_report(out, &report, &results)?;
    Ok(report)
}

/// Writes `<id>.align` per utterance plus a summary; returns the mean
/// per-utterance agreement over utterances that emitted anything.
pub fn cmd_align(
    cfg: &ExperimentConfig,
    checkpoint: &Path,
    data: &Path,
    mode: DecodeMode,
    out: &Path,
) -> Result<Option<f64>> {
    let (cfg, model, data) = load_for_eval(cfg, checkpoint, data)?;
    let decoded = decode_dataset(&model, &data, mode, &cfg.skip, cfg.train.threads)?;
    prepare_dir(out, &cfg)?;
    let mut summary = String::from("# id\tframes\temissions\tagreement\n");
    let mut sum = 0.0;
    let mut counted = 0usize;
    for (utt, d) in data.utterances.iter().zip(&decoded) {
        write_text(&out.join(format!("{}.align", utt.id)), &d.alignment.to_records())?;
        let agreement = d.alignment.agreement();
        if let Some(a) = agreement {
            sum += a;
            counted += 1;
        }
        summary.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            utt.id,
            d.alignment.frames.len(),
            d.alignment.emissions,
            fmt_opt(agreement)
        ));
    }
    let mean = (counted > 0).then(|| sum / counted as f64);
    summary.push_str(&format!("# mode={} mean_agreement={}\n", mode.name(), fmt_opt(mean)));
    write_text(&out.join(ALIGN_SUMMARY_FILE), &summary)?;
    Ok(mean)
}

fn sweep_table(label_header: &str, rows: &[(String, EvalReport)]) -> String {
    let mut text = format!("{label_header},{}\n", EvalReport::csv_header());
    for (label, report) in rows {
        text.push_str(&format!("{label},{}\n", report.csv_row()));
    }
    text
}

fn sweep_lambda(cfg: &ExperimentConfig, data_dir: &Path, out: &Path) -> Result<()> {
    prepare_dir(out, cfg)?;
    let test = data_dir.join(split_file(Split::Test));
    let mut rows = Vec::new();
    for lambda in LAMBDA_GRID {
        let mut run = cfg.clone();
        run.fsr = FsrConfig { lambda, ..cfg.fsr };
        let dir = out.join(format!("lambda_{lambda}"));
        cmd_train(&run, data_dir, &dir, false, 0)?;
        let ckpt = dir.join(CHECKPOINT_FILE);
        for mode in [DecodeMode::Greedy, DecodeMode::FastSkip] {
            let report = cmd_eval(&run, &ckpt, &test, mode, &dir.join(mode.name()))?;
            rows.push((format!("{lambda},{}", mode.name()), report));
        }
    }
    write_text(&out.join("sweep_lambda.csv"), &sweep_table("lambda,mode", &rows))
}

fn sweep_window(cfg: &ExperimentConfig, checkpoint: &Path, data: &Path, out: &Path) -> Result<()> {
    prepare_dir(out, cfg)?;
    let mut rows = Vec::new();
    for (w_left, w_right) in WINDOW_GRID {
        let mut run = cfg.clone();
        run.skip = SkipConfig { w_left, w_right, ..cfg.skip };
        let dir = out.join(format!("window_{w_left}_{w_right}"));
        let report = cmd_eval(&run, checkpoint, data, DecodeMode::FastSkip, &dir)?;
        rows.push((format!("{w_left},{w_right}"), report));
    }
    write_text(&out.join("sweep_window.csv"), &sweep_table("w_left,w_right", &rows))
}

fn sweep_delta(cfg: &ExperimentConfig, checkpoint: &Path, data: &Path, out: &Path) -> Result<()> {
    prepare_dir(out, cfg)?;
    let mut rows = Vec::new();
    for delta in DELTA_GRID {
        let mut run = cfg.clone();
        run.skip = SkipConfig { delta, ..cfg.skip };
        let report = cmd_eval(&run, checkpoint, data, DecodeMode::FastSkip, &out.join(format!("delta_{delta}")))?;
        rows.push((delta.to_string(), report));
    }
    write_text(&out.join("sweep_delta.csv"), &sweep_table("delta", &rows))
}

fn sweep_ablation(
    cfg: &ExperimentConfig,
    baseline: &Path,
    regularized: &Path,
    data: &Path,
    out: &Path,
) -> Result<()> {
    prepare_dir(out, cfg)?;
    let mut rows = Vec::new();
    for (name, ckpt) in [("off", baseline), ("on", regularized)] {
        for mode in [DecodeMode::Greedy, DecodeMode::FastSkip] {
            let dir = out.join(format!("fsr_{name}_{}", mode.name()));
            let report = cmd_eval(cfg, ckpt, data, mode, &dir)?;
            rows.push((format!("{name},{}", mode.name()), report));
        }
    }
    write_text(&out.join("ablation.csv"), &sweep_table("fsr,mode", &rows))
}
