//! `gen`, `train`, `eval` and `report`.
//!
//! Run directory layout (`<output_dir>/<run_id>/`):
//!
//! | file            | content                                         |
//! |-----------------|-------------------------------------------------|
//! | `config.toml`   | the resolved experiment configuration           |
//! | `train.corpus`  | training corpus container                       |
//! | `eval.corpus`   | evaluation corpus container                     |
//! | `manifest.toml` | seeds and corpus statistics                     |
//! | `checkpoint.bin`| latest training checkpoint                      |
//! | `loss.tsv`      | `step, loss, mean_loss` per logging interval    |
//! | `report.toml`   | evaluation report                               |
//! | `curve.tsv`     | offset vs error plot data                       |
//! | `absolute.tsv`  | error binned by absolute target control         |

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use vasb::bottleneck::BottleneckKind;
use vasb::container;
use vasb::eval::{comparison_table, evaluate, EvalReport};
use vasb::model::{TrainConfig, Trainer};
use vasb::ndcore::Rng;
use vasb::synthdata::{make_corpus, Corpus, CorpusStats, Mix};
use vasb::{Error, Result};

use crate::config::ExperimentConfig;

pub const TRAIN_CORPUS: &str = "train.corpus";
pub const EVAL_CORPUS: &str = "eval.corpus";
pub const CHECKPOINT: &str = "checkpoint.bin";

/// Desk-scale budget for a NOBO run before a warning is printed.
const NOBO_BUDGET_SECS: f64 = 300.0;

#[derive(Serialize)]
struct Manifest {
    run_id: String,
    seed: u64,
    train: CorpusEntry,
    eval: CorpusEntry,
}

#[derive(Serialize)]
struct CorpusEntry {
    file: String,
    /// Hex: derived seeds span all 64 bits, beyond TOML's signed integers.
    seed: String,
    mix: Mix,
    fingerprint: String,
    stats: CorpusStats,
}

fn entry(file: &str, seed: u64, corpus: &Corpus, bytes: &[u8]) -> CorpusEntry {
    CorpusEntry {
        file: file.into(),
        seed: format!("{seed:016x}"),
        mix: corpus.mix,
        fingerprint: format!("{:016x}", container::fingerprint(bytes)),
        stats: corpus.stats(),
    }
}

/// Writes `bytes` to `path`, creating parent directories.
pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, bytes)?;
    Ok(())
}

/// Claims the run directory: fails when it already holds a different config.
fn claim_run_dir(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let dir = cfg.run_dir();
    let text = cfg.to_toml()?;
    let path = dir.join("config.toml");
    if path.exists() {
        let existing = std::fs::read_to_string(&path)?;
        if existing != text {
            return Err(Error::Config(format!(
                "run_id: `{}` already exists in {} with a different configuration",
                cfg.run_id,
                cfg.output_dir.display()
            )));
        }
    }
    write_file(&path, text.as_bytes())?;
    Ok(dir)
}

pub fn make_corpora(cfg: &ExperimentConfig, mix: Mix) -> Result<(Corpus, Corpus)> {
    let c = &cfg.corpus;
    let train = make_corpus(
        mix,
        c.n_samples,
        c.frames_per_sample,
        &c.params,
        &mut Rng::new(cfg.train_corpus_seed()),
    )?;
    let eval = make_corpus(
        mix,
        cfg.eval.n_samples,
        cfg.eval.frames_per_sample,
        &c.params,
        &mut Rng::new(cfg.eval_corpus_seed()),
    )?;
    Ok((train, eval))
}

/// Generates both corpora and the manifest into `dir`.
pub fn write_corpora(cfg: &ExperimentConfig, mix: Mix, dir: &Path) -> Result<CorpusStats> {
    let (train, eval) = make_corpora(cfg, mix)?;
    let tb = train.to_bytes()?;
    let eb = eval.to_bytes()?;
    write_file(&dir.join(TRAIN_CORPUS), &tb)?;
    write_file(&dir.join(EVAL_CORPUS), &eb)?;
    let manifest = Manifest {
        run_id: cfg.run_id.clone(),
        seed: cfg.seed,
        train: entry(TRAIN_CORPUS, cfg.train_corpus_seed(), &train, &tb),
        eval: entry(EVAL_CORPUS, cfg.eval_corpus_seed(), &eval, &eb),
    };
    let text = toml::to_string(&manifest).map_err(|e| Error::Format(e.to_string()))?;
    write_file(&dir.join("manifest.toml"), text.as_bytes())?;
    Ok(train.stats())
}

pub fn cmd_gen(cfg: &ExperimentConfig) -> Result<()> {
    let dir = claim_run_dir(cfg)?;
    let stats = write_corpora(cfg, cfg.corpus.mix, &dir)?;
    println!(
        "gen: {} samples, speech fraction {:.4}, high-pitch fraction {:.4}, voiced fraction {:.4} -> {}",
        stats.n_samples,
        stats.speech_fraction,
        stats.high_pitch_fraction,
        stats.voiced_fraction,
        dir.display()
    );
    Ok(())
}

fn load_corpus(path: &Path) -> Result<Corpus> {
    if !path.exists() {
        return Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("missing corpus {}; run `vasb gen` first", path.display()),
        )));
    }
    Corpus::load(path)
}

/// `step  loss  mean_loss` every `every` steps; `loss` is the pre-step loss of
/// the record's last step and `mean_loss` the interval mean.
pub fn loss_trace(losses: &[f64], every: u64) -> String {
    let mut out = String::from("step\tloss\tmean_loss\n");
    for chunk in losses.chunks(every as usize).enumerate() {
        let (i, c) = chunk;
        let step = i * every as usize + c.len();
        let mean = c.iter().sum::<f64>() / c.len() as f64;
        out.push_str(&format!("{step}\t{:.9e}\t{mean:.9e}\n", c[c.len() - 1]));
    }
    out
}

/// Trains in `dir`, checkpointing every `checkpoint_every` steps.
pub fn train_in(cfg: &ExperimentConfig, dir: &Path, corpus: &Corpus, resume: bool) -> Result<Trainer> {
    let ckpt = dir.join(CHECKPOINT);
    let train_cfg = cfg.train_config();
    let mut trainer = if resume && ckpt.exists() {
        let mut t = Trainer::load(&ckpt)?;
        let same_run = TrainConfig {
            steps: train_cfg.steps,
            ..t.config.clone()
        } == train_cfg;
        if !same_run || t.model.config != cfg.model_config() || t.corpus_params != corpus.params.fingerprint() {
            return Err(Error::Compatibility(format!(
                "checkpoint {} was written by a different configuration",
                ckpt.display()
            )));
        }
        if t.step > train_cfg.steps {
            return Err(Error::Config(format!(
                "train.steps: checkpoint is already at step {}, beyond {}",
                t.step, train_cfg.steps
            )));
        }
        // Extending a finished run only changes the step budget.
        t.config.steps = train_cfg.steps;
        t
    } else {
        Trainer::new(cfg.model_config(), train_cfg, corpus)?
    };
    let start = Instant::now();
    let every = cfg.train.checkpoint_every;
    let mut saved = false;
    while !trainer.is_done() {
        let next = (trainer.step / every + 1) * every;
        trainer.run(corpus, next)?;
        trainer.save(&ckpt)?;
        write_file(&dir.join("loss.tsv"), loss_trace(&trainer.losses, cfg.train.log_every).as_bytes())?;
        saved = true;
    }
    if !saved {
        trainer.save(&ckpt)?;
        write_file(&dir.join("loss.tsv"), loss_trace(&trainer.losses, cfg.train.log_every).as_bytes())?;
    }
    let secs = start.elapsed().as_secs_f64();
    if cfg.train.kind == BottleneckKind::Nobo && secs > NOBO_BUDGET_SECS {
        eprintln!("warning: NOBO training took {secs:.0} s, above the {NOBO_BUDGET_SECS:.0} s desk-scale budget");
    }
    Ok(trainer)
}

pub fn cmd_train(cfg: &ExperimentConfig, resume: bool) -> Result<()> {
    let dir = cfg.run_dir();
    let corpus = load_corpus(&dir.join(TRAIN_CORPUS))?;
    let trainer = train_in(cfg, &dir, &corpus, resume)?;
    let (first, last) = vasb::model::loss_trend(&trainer.losses);
    println!(
        "train: {} steps, median loss {first:.6} -> {last:.6}, {} parameters -> {}",
        trainer.step,
        trainer.model.param_count(),
        dir.join(CHECKPOINT).display()
    );
    Ok(())
}

/// Evaluates the checkpoint in `dir` on `corpus` and writes the report files.
pub fn eval_in(cfg: &ExperimentConfig, dir: &Path, corpus: &Corpus) -> Result<EvalReport> {
    let ckpt = dir.join(CHECKPOINT);
    if !ckpt.exists() {
        return Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("missing checkpoint {}; run `vasb train` first", ckpt.display()),
        )));
    }
    let bytes = std::fs::read(&ckpt)?;
    let trainer = Trainer::from_bytes(&bytes)?;
    if trainer.corpus_params != corpus.params.fingerprint() {
        return Err(Error::Compatibility(format!(
            "checkpoint {} was trained on a corpus with different generator parameters",
            ckpt.display()
        )));
    }
    let report = evaluate(&trainer.model, corpus, &cfg.eval.metrics, container::fingerprint(&bytes))?;
    write_file(&dir.join("report.toml"), report.to_toml()?.as_bytes())?;
    write_file(&dir.join("curve.tsv"), report.curve_tsv().as_bytes())?;
    write_file(&dir.join("absolute.tsv"), report.absolute_tsv().as_bytes())?;
    Ok(report)
}

pub fn cmd_eval(cfg: &ExperimentConfig) -> Result<()> {
    let dir = cfg.run_dir();
    let corpus = load_corpus(&dir.join(EVAL_CORPUS))?;
    let report = eval_in(cfg, &dir, &corpus)?;
    let s = &report.summary;
    println!(
        "eval: error@0 {}, leakage_r2 {:.4}, discretization {}, recon_mse {:.6}{} -> {}",
        vasb::eval::fmt_opt(report.curve.error_at(0.0)),
        s.leakage_r2,
        vasb::eval::fmt_opt(s.discretization_index),
        s.recon_mse,
        if s.collapsed { " (collapse flagged)" } else { "" },
        dir.join("report.toml").display()
    );
    Ok(())
}

/// Offsets of the summary and comparison tables.
pub const SUMMARY_OFFSETS: [f64; 5] = [-1600.0, -800.0, 0.0, 800.0, 1600.0];

/// Comparison table of several report files, keyed by their run directory.
pub fn cmd_report(reports: &[PathBuf], output: Option<&Path>) -> Result<()> {
    if reports.is_empty() {
        return Err(Error::Config("report: give at least one report.toml".into()));
    }
    let mut table = BTreeMap::new();
    for path in reports {
        let text = std::fs::read_to_string(path)?;
        let report = EvalReport::from_toml(&text)?;
        let name = path
            .parent()
            .and_then(|p| p.file_name())
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        table.insert(name, report);
    }
    let text = comparison_table(&table, &SUMMARY_OFFSETS);
    match output {
        Some(p) => write_file(p, text.as_bytes())?,
        None => print!("{text}"),
    }
    Ok(())
}
