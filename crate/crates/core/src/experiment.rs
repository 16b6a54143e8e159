//! Multi-seed runs, ablations and re-reporting from checkpoints.
//!
//! Output layout under the run directory:
//!
//! ```text
//! <out>/seed-<n>/checkpoint.json   state after the latest finished task
//! <out>/seed-<n>/timing.json       wall-clock seconds (kept out of the summary)
//! <out>/{accuracy,trajectory,gating,params}.csv, summary.json
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::checkpoint::Checkpoint;
use crate::config::ExperimentConfig;
use crate::continual::{finalize, resume_sequence, ContinualState, GatingMode, RunResult};
use crate::report::{write_bundle, write_comparison, ComparisonRow, Summary};
use crate::{Error, Result};

pub fn seed_dir(out: &Path, seed: u64) -> PathBuf {
    out.join(format!("seed-{seed}"))
}

/// One seed end to end, checkpointing after each task when `out` is given.
pub fn run_seed(cfg: &ExperimentConfig, seed: u64, out: Option<&Path>, resume: bool) -> Result<RunResult> {
    let strategy = cfg.strategy(seed);
    let backbone = cfg.backbone(seed);
    let seq = cfg.sequence(&backbone, seed)?;
    let dir = out.map(|o| seed_dir(o, seed));
    let ckpt_path = dir.as_ref().map(|d| d.join("checkpoint.json"));

    let mut state = None;
    if let (true, Some(path)) = (resume, &ckpt_path) {
        if path.exists() {
            let ckpt = Checkpoint::load(path)?;
            if ckpt.strategy != strategy || !same_experiment(cfg, &ckpt.experiment)? {
                return Err(Error::Checkpoint(format!(
                    "{} was written by a different configuration",
                    path.display()
                )));
            }
            log::info!("seed {seed}: resuming after {} tasks", ckpt.state.tasks_learned);
            state = Some(ckpt.state);
        }
    }
    let state = match state {
        Some(s) => s,
        None => ContinualState::new(backbone, &strategy, seq.len())?,
    };
    if let Some(d) = &dir {
        fs::create_dir_all(d)?;
    }
    let mut hook = |s: &ContinualState, _t: usize| -> Result<()> {
        match &ckpt_path {
            Some(p) => Checkpoint::new(cfg, &strategy, s).save(p),
            None => Ok(()),
        }
    };
    let result = resume_sequence(&strategy, &seq, state, &mut hook)?;
    if let Some(d) = &dir {
        fs::write(
            d.join("timing.json"),
            format!("{{\"wall_clock_secs\": {}}}\n", result.wall_clock_secs),
        )?;
    }
    Ok(result)
}

// Compares the echoed forms, which leave out the output directory.
fn same_experiment(a: &ExperimentConfig, b: &ExperimentConfig) -> Result<bool> {
    Ok(serde_json::to_value(a)? == serde_json::to_value(b)?)
}

/// All seeds in parallel; writes the bundle when `out` is given.
pub fn run_experiment(cfg: &ExperimentConfig, out: Option<&Path>, resume: bool) -> Result<(Vec<RunResult>, Summary)> {
    let mut results: Vec<RunResult> = cfg
        .seeds
        .par_iter()
        .map(|&s| run_seed(cfg, s, out, resume))
        .collect::<Result<Vec<_>>>()?;
    results.sort_by_key(|r| r.seed);
    let summary = match out {
        Some(dir) => write_bundle(dir, cfg, &results)?,
        None => Summary::new(cfg, &results),
    };
    Ok((results, summary))
}

/// Runs each gating variant into `<out>/<variant>/` and writes `comparison.csv`.
pub fn ablate(cfg: &ExperimentConfig, variants: &[GatingMode], out: Option<&Path>) -> Result<Vec<ComparisonRow>> {
    let mut rows = Vec::with_capacity(variants.len());
    for &v in variants {
        let vcfg = cfg.with_mode(v);
        vcfg.validate()?;
        let dir = out.map(|o| o.join(v.name()));
        let (_, summary) = run_experiment(&vcfg, dir.as_deref(), false)?;
        log::info!(
            "variant {v}: AP {:.2}, FT {:?}",
            summary.ap.mean,
            summary.ft.map(|s| s.mean)
        );
        rows.push(ComparisonRow::new(v, &summary));
    }
    if let Some(o) = out {
        fs::create_dir_all(o)?;
        write_comparison(&o.join("comparison.csv"), &rows)?;
    }
    Ok(rows)
}

/// Rebuilds the bundle in `dir` from its seed checkpoints.
pub fn report(dir: &Path) -> Result<Summary> {
    let mut ckpts = Vec::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path().join("checkpoint.json");
        if path.is_file() {
            ckpts.push(Checkpoint::load(&path)?);
        }
    }
    if ckpts.is_empty() {
        return Err(Error::Checkpoint(format!(
            "no seed-*/checkpoint.json under {}",
            dir.display()
        )));
    }
    ckpts.sort_by_key(|c| c.seed);
    let cfg = ckpts[0].experiment.clone();
    let mut results = Vec::with_capacity(ckpts.len());
    for c in &ckpts {
        if c.experiment != cfg {
            return Err(Error::Checkpoint(
                "checkpoints come from different configurations".into(),
            ));
        }
        let seq = cfg.sequence(&cfg.backbone(c.seed), c.seed)?;
        if c.state.tasks_learned != seq.len() {
            return Err(Error::Checkpoint(format!(
                "seed {} stopped after {} of {} tasks; resume it first",
                c.seed,
                c.state.tasks_learned,
                seq.len()
            )));
        }
        results.push(finalize(&c.strategy, &seq, &c.state, 0.0)?);
    }
    let seeds: Vec<u64> = results.iter().map(|r| r.seed).collect();
    let cfg = ExperimentConfig { seeds, ..cfg };
    write_bundle(dir, &cfg, &results)
}
