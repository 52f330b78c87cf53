//! Cartesian sweeps over bottleneck kind, latent size, `p_g` and corpus mix.
//!
//! NOBO has no dropout for the global branch to replace, so NOBO cells are
//! canonicalized to `p_g = 0` and duplicates removed; the default grid of
//! 3 × 2 × 4 × 3 = 72 points therefore runs 54 cells.
//!
//! Corpora are shared by all cells of a mix (`corpora/<mix>/`); each cell
//! trains with its own seed and writes into `cells/<name>/`. Cells run on a
//! pool of `workers` threads and never share mutable state, so the worker
//! count does not affect any result. A failed cell is recorded in the summary
//! and the sweep continues.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use vasb::bottleneck::BottleneckKind;
use vasb::eval::fmt_opt;
use vasb::ndcore::derive_seed;
use vasb::synthdata::{Corpus, Mix};
use vasb::{Error, Result};

use crate::commands::{eval_in, train_in, write_corpora, write_file, EVAL_CORPUS, SUMMARY_OFFSETS, TRAIN_CORPUS};
use crate::config::ExperimentConfig;

#[derive(Clone, Debug, PartialEq)]
pub struct Cell {
    pub kind: BottleneckKind,
    pub latent_size: usize,
    pub p_global: f64,
    pub mix: Mix,
}

impl Cell {
    pub fn name(&self) -> String {
        format!("{}-nl{}-pg{:.2}-{}", self.kind.name(), self.latent_size, self.p_global, self.mix.name())
    }

    /// Training seed of the cell, kept within 63 bits so it fits a TOML integer.
    pub fn seed(&self, base: u64) -> u64 {
        derive_seed(
            base,
            &format!("cell/{}/{}/{}/{}", self.kind.name(), self.latent_size, self.p_global, self.mix.name()),
        ) >> 1
    }

    /// The base configuration specialised to this cell.
    pub fn config(&self, base: &ExperimentConfig) -> ExperimentConfig {
        let mut c = base.clone();
        c.run_id = self.name();
        c.output_dir = base.run_dir().join("cells");
        c.corpus.mix = self.mix;
        c.train.kind = self.kind;
        c.train.latent_size = self.latent_size;
        c.train.p_global = self.p_global;
        c.train.seed = Some(self.seed(base.seed));
        c.train.checkpoint_every = base.train.steps;
        c
    }
}

/// Grid size before and after NOBO canonicalization, and the unique cells.
pub fn cells(cfg: &ExperimentConfig) -> (usize, Vec<Cell>) {
    let s = &cfg.sweep;
    let total = s.kinds.len() * s.latent_sizes.len() * s.p_globals.len() * s.mixes.len();
    let mut out: Vec<Cell> = Vec::new();
    for &kind in &s.kinds {
        for &latent_size in &s.latent_sizes {
            for &p in &s.p_globals {
                for &mix in &s.mixes {
                    let p_global = if kind == BottleneckKind::Nobo { 0.0 } else { p };
                    let cell = Cell {
                        kind,
                        latent_size,
                        p_global,
                        mix,
                    };
                    if !out.contains(&cell) {
                        out.push(cell);
                    }
                }
            }
        }
    }
    (total, out)
}

#[derive(Clone, Debug)]
pub struct CellResult {
    pub cell: Cell,
    pub seed: u64,
    pub outcome: std::result::Result<Row, String>,
}

#[derive(Clone, Debug)]
pub struct Row {
    pub errors: Vec<Option<f64>>,
    pub leakage_r2: f64,
    pub discretization_index: Option<f64>,
    pub recon_mse: f64,
    pub collapsed: bool,
}

fn run_cell(base: &ExperimentConfig, cell: &Cell, corpora: &Path) -> std::result::Result<Row, String> {
    let run = || -> Result<Row> {
        let cfg = cell.config(base);
        let dir = cfg.run_dir();
        let mix_dir = corpora.join(cell.mix.name());
        let train = Corpus::load(&mix_dir.join(TRAIN_CORPUS))?;
        let eval = Corpus::load(&mix_dir.join(EVAL_CORPUS))?;
        write_file(&dir.join("config.toml"), cfg.to_toml()?.as_bytes())?;
        train_in(&cfg, &dir, &train, false)?;
        let report = eval_in(&cfg, &dir, &eval)?;
        Ok(Row {
            errors: SUMMARY_OFFSETS.iter().map(|&o| report.curve.error_at(o)).collect(),
            leakage_r2: report.summary.leakage_r2,
            discretization_index: report.summary.discretization_index,
            recon_mse: report.summary.recon_mse,
            collapsed: report.summary.collapsed,
        })
    };
    run().map_err(|e| e.to_string())
}

pub fn summary_tsv(results: &[CellResult]) -> String {
    let mut out = String::from("kind\tlatent_size\tp_global\tmix\tseed\tstatus");
    for o in SUMMARY_OFFSETS {
        out.push_str(&format!("\terr@{o}"));
    }
    out.push_str("\tleakage_r2\tdiscretization_index\trecon_mse\tcollapsed\terror\n");
    for r in results {
        let c = &r.cell;
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}",
            c.kind.name(),
            c.latent_size,
            c.p_global,
            c.mix.name(),
            r.seed
        ));
        match &r.outcome {
            Ok(row) => {
                out.push_str("\tok");
                for e in &row.errors {
                    out.push_str(&format!("\t{}", fmt_opt(*e)));
                }
                out.push_str(&format!(
                    "\t{:.6}\t{}\t{:.6e}\t{}\t\n",
                    row.leakage_r2,
                    fmt_opt(row.discretization_index),
                    row.recon_mse,
                    row.collapsed as u8
                ));
            }
            Err(msg) => {
                out.push_str("\tfailed");
                for _ in 0..SUMMARY_OFFSETS.len() + 4 {
                    out.push_str("\tnan");
                }
                out.push_str(&format!("\t{}\n", msg.replace(['\t', '\n'], " ")));
            }
        }
    }
    out
}

/// Runs every unique cell and writes `summary.tsv`; returns its path.
pub fn cmd_sweep(cfg: &ExperimentConfig, workers: usize) -> Result<PathBuf> {
    let (total, cells) = cells(cfg);
    eprintln!(
        "sweep: {total} grid points, {} unique cells (NOBO cells canonicalized to p_g = 0), {workers} worker(s)",
        cells.len()
    );
    let root = cfg.run_dir();
    write_file(&root.join("config.toml"), cfg.to_toml()?.as_bytes())?;
    let corpora = root.join("corpora");
    let mut mixes: Vec<Mix> = cells.iter().map(|c| c.mix).collect();
    mixes.sort();
    mixes.dedup();
    for mix in mixes {
        write_corpora(cfg, mix, &corpora.join(mix.name()))?;
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("sweep.workers: {e}")))?;
    let results: Vec<CellResult> = pool.install(|| {
        cells
            .par_iter()
            .map(|cell| CellResult {
                cell: cell.clone(),
                seed: cell.seed(cfg.seed),
                outcome: run_cell(cfg, cell, &corpora),
            })
            .collect()
    });
    let path = root.join("summary.tsv");
    write_file(&path, summary_tsv(&results).as_bytes())?;
    let failed = results.iter().filter(|r| r.outcome.is_err()).count();
    eprintln!("sweep: {} cells done, {failed} failed -> {}", results.len(), path.display());
    Ok(path)
}
