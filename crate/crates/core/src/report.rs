//! Result bundles: CSV tables plus a summary JSON.
//!
//! | file             | columns                                   |
//! |------------------|-------------------------------------------|
//! | `accuracy.csv`   | `seed,after_task,task,accuracy`           |
//! | `trajectory.csv` | `seed,after_task,ap`                      |
//! | `gating.csv`     | `seed,gate,task,sample,value`             |
//! | `params.csv`     | `strategy,rank,trainable_params`          |
//! | `summary.json`   | per-seed AP/FT and their mean/std         |
//!
//! Tasks, gates and seeds are 0-based. Accuracy and AP are percentages.
//! `summary.json` holds no timings or paths, so it depends only on the
//! configuration and seeds.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::continual::{GatingMode, ParamStrategy, RunResult};
use crate::Result;

pub const SUMMARY_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single value.
    pub std: f64,
}

impl Stat {
    pub fn of(xs: &[f64]) -> Option<Self> {
        if xs.is_empty() {
            return None;
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let std = if xs.len() > 1 {
            (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Some(Self { mean, std })
    }
}

pub fn median(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    })
}

/// Median |g| of the final gate on old-task and on new-task test inputs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GateMedians {
    pub old: Option<f64>,
    pub new: Option<f64>,
}

impl GateMedians {
    pub fn of(run: &RunResult) -> Option<Self> {
        let (old, new) = run.final_gate_split()?;
        let abs = |v: Vec<f64>| v.into_iter().map(f64::abs).collect::<Vec<_>>();
        Some(Self {
            old: median(&abs(old)),
            new: median(&abs(new)),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub ap: f64,
    pub ft: Option<f64>,
    pub trajectory: Vec<f64>,
    pub accuracy: Vec<Vec<f64>>,
    pub final_gate: Option<GateMedians>,
    pub trainable_params: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub version: u32,
    pub seeds: Vec<u64>,
    pub config: ExperimentConfig,
    pub runs: Vec<SeedSummary>,
    pub ap: Stat,
    /// `None` when any run has a single task.
    pub ft: Option<Stat>,
}

impl Summary {
    pub fn new(cfg: &ExperimentConfig, results: &[RunResult]) -> Self {
        let runs: Vec<SeedSummary> = results
            .iter()
            .map(|r| SeedSummary {
                seed: r.seed,
                ap: r.ap,
                ft: r.ft,
                trajectory: r.trajectory.clone(),
                accuracy: r.matrix.rows.clone(),
                final_gate: GateMedians::of(r),
                trainable_params: r.trainable_params,
            })
            .collect();
        let aps: Vec<f64> = runs.iter().map(|r| r.ap).collect();
        let fts: Option<Vec<f64>> = runs.iter().map(|r| r.ft).collect();
        Self {
            version: SUMMARY_VERSION,
            seeds: runs.iter().map(|r| r.seed).collect(),
            config: cfg.clone(),
            ap: Stat::of(&aps).expect("at least one run"),
            ft: fts.as_deref().and_then(Stat::of),
            runs,
        }
    }
}

/// Writes every bundle file into `dir`; results must be sorted by seed.
pub fn write_bundle(dir: &Path, cfg: &ExperimentConfig, results: &[RunResult]) -> Result<Summary> {
    fs::create_dir_all(dir)?;

    let mut w = csv::Writer::from_path(dir.join("accuracy.csv"))?;
    w.write_record(["seed", "after_task", "task", "accuracy"])?;
    for r in results {
        for (j, row) in r.matrix.rows.iter().enumerate() {
            for (i, a) in row.iter().enumerate() {
                w.write_record([r.seed.to_string(), j.to_string(), i.to_string(), a.to_string()])?;
            }
        }
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join("trajectory.csv"))?;
    w.write_record(["seed", "after_task", "ap"])?;
    for r in results {
        for (j, ap) in r.trajectory.iter().enumerate() {
            w.write_record([r.seed.to_string(), j.to_string(), ap.to_string()])?;
        }
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join("gating.csv"))?;
    w.write_record(["seed", "gate", "task", "sample", "value"])?;
    for r in results {
        for s in &r.gating {
            for (k, v) in s.values.iter().enumerate() {
                w.write_record([
                    r.seed.to_string(),
                    s.gate.to_string(),
                    s.task.to_string(),
                    k.to_string(),
                    v.to_string(),
                ])?;
            }
        }
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join("params.csv"))?;
    w.write_record(["strategy", "rank", "trainable_params"])?;
    if let Some(r) = results.first() {
        let strategy = ParamStrategy {
            branch: r.config.branch,
            gain: r.config.gating != GatingMode::FixedOne,
        };
        w.write_record([
            strategy.to_string(),
            r.config.rank.to_string(),
            r.trainable_params.to_string(),
        ])?;
    }
    w.flush()?;

    let summary = Summary::new(cfg, results);
    let mut json = serde_json::to_string_pretty(&summary)?;
    json.push('\n');
    fs::write(dir.join("summary.json"), json)?;
    Ok(summary)
}

/// One row per ablation variant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub variant: String,
    pub ap_mean: f64,
    pub ap_std: f64,
    pub ft_mean: Option<f64>,
    pub ft_std: Option<f64>,
    pub old_gate_median: Option<f64>,
    pub new_gate_median: Option<f64>,
}

impl ComparisonRow {
    pub fn new(variant: GatingMode, summary: &Summary) -> Self {
        let mean_of = |f: fn(&GateMedians) -> Option<f64>| {
            let xs: Option<Vec<f64>> = summary.runs.iter().map(|r| r.final_gate.as_ref().and_then(f)).collect();
            xs.as_deref().and_then(Stat::of).map(|s| s.mean)
        };
        Self {
            variant: variant.name().into(),
            ap_mean: summary.ap.mean,
            ap_std: summary.ap.std,
            ft_mean: summary.ft.map(|s| s.mean),
            ft_std: summary.ft.map(|s| s.std),
            old_gate_median: mean_of(|g| g.old),
            new_gate_median: mean_of(|g| g.new),
        }
    }
}

pub fn write_comparison(path: &Path, rows: &[ComparisonRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
