//! TOML experiment configuration.
//!
//! Every section is optional; missing keys take the defaults below. Unknown
//! keys are rejected. `--set section.key=value` overrides are applied to the
//! parsed TOML tree before validation, with `value` read as a TOML literal
//! (falling back to a bare string).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::adapter::BranchStrategy;
use crate::continual::{GatingMode, StrategyConfig};
use crate::gating::GateFn;
use crate::model::{
    generate_suite, ingest_dataset, BackboneShape, DataFormat, SuiteSpec, TaskData, TaskSequence, ToyBackbone,
};
use crate::numerics::AdamWConfig;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seeds: Vec<u64>,
    /// Output root; not part of the echoed config so reruns elsewhere stay byte-identical.
    #[serde(skip_serializing)]
    pub out_dir: Option<PathBuf>,
    pub model: ModelSection,
    pub gating: GatingSection,
    pub strategy: StrategySection,
    pub train: TrainSection,
    pub tasks: TasksSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub vocab: usize,
    pub embed_dim: usize,
    pub hidden: usize,
    /// Size of the shared label space; defaults to tasks × classes_per_task.
    pub classes: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GatingSection {
    pub mode: GatingMode,
    pub gate_fn: GateFn,
    pub hidden: usize,
    pub layers: usize,
    pub init_std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StrategySection {
    pub branch: BranchStrategy,
    pub rank: usize,
    pub lambda: f64,
    pub eps_th: f64,
    pub trace_samples: usize,
    pub lora_init_std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

/// Task files for one task; the format follows the extension.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskFiles {
    pub train: PathBuf,
    pub test: PathBuf,
}

/// Synthetic-suite keys plus an optional `files` list, all in one table.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct TasksSection {
    #[serde(flatten)]
    pub suite: SuiteSpec,
    /// Read tasks from files instead of generating them.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub files: Option<Vec<TaskFiles>>,
}

// serde cannot combine `flatten` with `deny_unknown_fields`, so split the table by hand.
impl<'de> Deserialize<'de> for TasksSection {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let mut table = toml::Table::deserialize(d)?;
        let files = table
            .remove("files")
            .map(|v| v.try_into())
            .transpose()
            .map_err(D::Error::custom)?;
        let suite = toml::Value::Table(table).try_into().map_err(D::Error::custom)?;
        Ok(Self { suite, files })
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seeds: vec![0, 1, 2],
            out_dir: None,
            model: ModelSection::default(),
            gating: GatingSection::default(),
            strategy: StrategySection::default(),
            train: TrainSection::default(),
            tasks: TasksSection::default(),
        }
    }
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            vocab: 256,
            embed_dim: 64,
            hidden: 64,
            classes: None,
        }
    }
}

impl Default for GatingSection {
    fn default() -> Self {
        let s = StrategyConfig::default();
        Self {
            mode: s.gating,
            gate_fn: s.gate_fn,
            hidden: s.gate_hidden,
            layers: s.gate_layers,
            init_std: s.gate_init_std,
        }
    }
}

impl Default for StrategySection {
    fn default() -> Self {
        let s = StrategyConfig::default();
        Self {
            branch: s.branch,
            rank: s.rank,
            lambda: s.lambda,
            eps_th: s.eps_th,
            trace_samples: s.trace_samples,
            lora_init_std: s.lora_init_std,
        }
    }
}

impl Default for TrainSection {
    fn default() -> Self {
        let s = StrategyConfig::default();
        let o = s.optimizer;
        Self {
            epochs: s.epochs,
            batch_size: s.batch_size,
            lr: o.lr,
            beta1: o.beta1,
            beta2: o.beta2,
            eps: o.eps,
            weight_decay: o.weight_decay,
        }
    }
}

fn parse_literal(raw: &str) -> toml::Value {
    // Parse as the value of a one-key document so arrays, numbers and booleans work.
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

/// Sets `dotted.key` in `root` to `raw`.
pub fn apply_override(root: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{assignment}` is not of the form key=value")))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("override key `{key}` is malformed")));
    }
    let (last, parents) = path.split_last().expect("non-empty");
    let mut table = root;
    for p in parents {
        let entry = table
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override key `{key}`: `{p}` is not a section")))?;
    }
    table.insert(last.to_string(), parse_literal(raw.trim()));
    Ok(())
}

impl ExperimentConfig {
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: Self = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path`; relative task file paths resolve against its directory.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text, overrides)?;
        if let (Some(files), Some(dir)) = (cfg.tasks.files.as_mut(), path.parent()) {
            for f in files {
                f.train = dir.join(&f.train);
                f.test = dir.join(&f.test);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must list at least one seed".into()));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return Err(Error::Config("seeds must be distinct".into()));
        }
        let m = &self.model;
        if m.vocab == 0 || m.embed_dim == 0 || m.hidden == 0 {
            return Err(Error::Config("model sizes must be positive".into()));
        }
        if self.tasks.suite.tasks == 0 {
            return Err(Error::Config("tasks.tasks must be at least 1".into()));
        }
        if self.tasks.suite.classes_per_task < 2 {
            return Err(Error::Config("tasks.classes_per_task must be at least 2".into()));
        }
        if let Some(files) = &self.tasks.files {
            if files.len() != self.tasks.suite.tasks {
                return Err(Error::Config(format!(
                    "tasks.files lists {} tasks but tasks.tasks = {}",
                    files.len(),
                    self.tasks.suite.tasks
                )));
            }
        } else {
            self.tasks.suite.task_windows(m.vocab)?;
        }
        if self.num_classes() < self.tasks.suite.classes_per_task {
            return Err(Error::Config("model.classes is smaller than one task's classes".into()));
        }
        self.strategy(self.seeds[0]).validate()
    }

    pub fn num_classes(&self) -> usize {
        self.model.classes.unwrap_or_else(|| self.tasks.suite.num_classes())
    }

    pub fn backbone_shape(&self) -> BackboneShape {
        BackboneShape {
            vocab: self.model.vocab,
            embed_dim: self.model.embed_dim,
            hidden: self.model.hidden,
            classes: self.num_classes(),
        }
    }

    pub fn strategy(&self, seed: u64) -> StrategyConfig {
        let t = &self.train;
        StrategyConfig {
            branch: self.strategy.branch,
            gating: self.gating.mode,
            gate_fn: self.gating.gate_fn,
            gate_hidden: self.gating.hidden,
            gate_layers: self.gating.layers,
            gate_init_std: self.gating.init_std,
            rank: self.strategy.rank,
            lora_init_std: self.strategy.lora_init_std,
            lambda: self.strategy.lambda,
            eps_th: self.strategy.eps_th,
            trace_samples: self.strategy.trace_samples,
            optimizer: AdamWConfig {
                lr: t.lr,
                beta1: t.beta1,
                beta2: t.beta2,
                eps: t.eps,
                weight_decay: t.weight_decay,
            },
            epochs: t.epochs,
            batch_size: t.batch_size,
            seed,
        }
    }

    pub fn backbone(&self, seed: u64) -> ToyBackbone {
        ToyBackbone::random(self.backbone_shape(), seed)
    }

    /// The task sequence for `seed`: generated, or read from the configured files.
    pub fn sequence(&self, backbone: &ToyBackbone, seed: u64) -> Result<TaskSequence> {
        let classes = self.num_classes();
        match &self.tasks.files {
            None => generate_suite(&self.tasks.suite, backbone.embed(), seed),
            Some(files) => {
                let vocab = self.model.vocab;
                let read = |p: &Path| ingest_dataset(p, DataFormat::from_path(p)?, vocab, classes);
                let tasks = files
                    .iter()
                    .enumerate()
                    .map(|(t, f)| {
                        let (train, test) = (read(&f.train)?, read(&f.test)?);
                        if (train.task_id != t || test.task_id != t) && !(train.is_empty() && test.is_empty()) {
                            return Err(Error::Schema(format!("files for task {t} carry another task_id")));
                        }
                        if train.is_empty() || test.is_empty() {
                            return Err(Error::Schema(format!("task {t} has an empty split")));
                        }
                        Ok(TaskData { train, test })
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(TaskSequence {
                    tasks,
                    num_classes: classes,
                })
            }
        }
    }

    /// Same experiment with a different gating mode.
    pub fn with_mode(&self, mode: GatingMode) -> Self {
        let mut c = self.clone();
        c.gating.mode = mode;
        c
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_default() {
        assert_eq!(
            ExperimentConfig::from_toml("", &[]).unwrap(),
            ExperimentConfig::default()
        );
    }

    #[test]
    fn unknown_key_is_named() {
        let err = ExperimentConfig::from_toml("[train]\nepoch = 3\n", &[]).unwrap_err();
        assert!(err.is_config());
        assert!(err.to_string().contains("epoch"), "{err}");
    }

    #[test]
    fn overrides() {
        let cfg = ExperimentConfig::from_toml(
            "[train]\nepochs = 3\n",
            &[
                "train.epochs=7".into(),
                "gating.mode=fixed_one".into(),
                "seeds=[4]".into(),
                "train.lr=0.01".into(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.train.epochs, 7);
        assert_eq!(cfg.gating.mode, GatingMode::FixedOne);
        assert_eq!(cfg.seeds, vec![4]);
        assert_eq!(cfg.train.lr, 0.01);
        assert!(ExperimentConfig::from_toml("", &["nokey".into()]).is_err());
        assert!(ExperimentConfig::from_toml("", &["bogus.key=1".into()]).is_err());
    }

    #[test]
    fn seq_with_gain_is_rejected() {
        let err = ExperimentConfig::from_toml("[strategy]\nbranch = \"seq\"\n", &[]).unwrap_err();
        assert!(err.is_config());
    }

    #[test]
    fn suite_keys_flatten_into_tasks() {
        let cfg = ExperimentConfig::from_toml("[tasks]\ntasks = 2\ntrain = 50\n", &[]).unwrap();
        assert_eq!(cfg.tasks.suite.tasks, 2);
        assert_eq!(cfg.tasks.suite.train, 50);
    }
}
