//! Task sequences: synthetic generation and file ingestion.
//!
//! ## File schema
//!
//! JSONL, one object per line:
//!
//! ```text
//! {"tokens": [3, 17, 4], "label": 1, "task_id": 0}
//! ```
//!
//! CSV with header `tokens,label,task_id`, tokens space separated:
//!
//! ```text
//! tokens,label,task_id
//! 3 17 4,1,0
//! ```
//!
//! Every row of one file must carry the same `task_id`. Labels index the
//! global class union and token ids must be below the vocabulary size.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::gating::pool_embed;
use crate::numerics::{gaussian_init, Mat, Rng};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    pub tokens: Vec<u32>,
    pub label: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub task_id: usize,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskData {
    pub train: Dataset,
    pub test: Dataset,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSequence {
    pub tasks: Vec<TaskData>,
    pub num_classes: usize,
}

impl TaskSequence {
    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }
}

/// Everything needed to draw one synthetic task.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskSpec {
    pub task_id: usize,
    /// Half-open token id range `[start, end)` the task draws from.
    pub window: (u32, u32),
    pub class_offset: usize,
    pub n_classes: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub seq_len: usize,
    /// Probability that a sample's tokens are drawn without regard to its label.
    pub noise: f64,
}

/// Linear teacher over the centred pooled embedding.
#[derive(Clone, Debug)]
pub struct Teacher {
    weights: Mat,
    centre: Vec<f64>,
}

impl Teacher {
    pub fn classify(&self, pooled: &[f64]) -> usize {
        let centred: Vec<f64> = pooled.iter().zip(&self.centre).map(|(p, c)| p - c).collect();
        super::backbone::argmax(&self.weights.matvec(&centred))
    }
}

const MAX_DRAWS_PER_SAMPLE: usize = 10_000;

/// Draws the teacher for `spec` from `rng`; [`generate_task`] calls this first.
pub fn draw_teacher(rng: &mut Rng, spec: &TaskSpec, embed: &Mat) -> Teacher {
    let weights = gaussian_init(rng, spec.n_classes, embed.cols(), 1.0);
    let (start, end) = spec.window;
    let mut centre = vec![0.0; embed.cols()];
    for t in start..end {
        for (c, e) in centre.iter_mut().zip(embed.row(t as usize)) {
            *c += e;
        }
    }
    let n = f64::from(end - start).max(1.0);
    centre.iter_mut().for_each(|c| *c /= n);
    Teacher { weights, centre }
}

/// Draws a task's train and test sets.
///
/// Labels follow a balanced, shuffled schedule. For each scheduled label,
/// token sequences are drawn from the task window until the teacher agrees,
/// except that with probability `noise` the first draw is kept regardless.
pub fn generate_task(rng: &mut Rng, spec: &TaskSpec, embed: &Mat) -> Result<TaskData> {
    if spec.n_classes < 2 {
        return Err(Error::Config(format!("task {} needs at least 2 classes", spec.task_id)));
    }
    let (start, end) = spec.window;
    if start >= end || end as usize > embed.rows() {
        return Err(Error::Config(format!(
            "window [{start}, {end}) invalid for vocabulary {}",
            embed.rows()
        )));
    }
    if spec.seq_len == 0 {
        return Err(Error::EmptyInput);
    }
    let teacher = draw_teacher(rng, spec, embed);
    let width = (end - start) as usize;

    let draw = |rng: &mut Rng, want: Option<usize>| -> Result<Vec<u32>> {
        for _ in 0..MAX_DRAWS_PER_SAMPLE {
            let tokens: Vec<u32> = (0..spec.seq_len).map(|_| start + rng.below(width) as u32).collect();
            match want {
                None => return Ok(tokens),
                Some(c) if teacher.classify(&pool_embed(&tokens, embed)?) == c => return Ok(tokens),
                Some(_) => {}
            }
        }
        Err(Error::GenerationStalled(spec.task_id, want.unwrap_or(0)))
    };

    let split = |rng: &mut Rng, n: usize| -> Result<Dataset> {
        let mut schedule: Vec<usize> = (0..n).map(|i| i % spec.n_classes).collect();
        rng.shuffle(&mut schedule);
        let mut samples = Vec::with_capacity(n);
        for local in schedule {
            let noisy = spec.noise > 0.0 && rng.uniform() < spec.noise;
            let tokens = draw(rng, if noisy { None } else { Some(local) })?;
            samples.push(Sample {
                tokens,
                label: spec.class_offset + local,
            });
        }
        Ok(Dataset {
            task_id: spec.task_id,
            samples,
        })
    };

    let train = split(rng, spec.n_train)?;
    let test = split(rng, spec.n_test)?;
    Ok(TaskData { train, test })
}

/// Parameters of a synthetic task suite.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SuiteSpec {
    pub tasks: usize,
    /// Tokens per task window.
    pub window: u32,
    /// Fraction of each window shared with the next task's window.
    pub overlap: f64,
    /// Explicit `[start, end)` windows; overrides `window`/`overlap` when set.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub windows: Option<Vec<[u32; 2]>>,
    pub seq_len: usize,
    pub classes_per_task: usize,
    pub train: usize,
    pub test: usize,
    pub noise: f64,
}

impl Default for SuiteSpec {
    fn default() -> Self {
        Self {
            tasks: 5,
            window: 8,
            overlap: 0.0,
            windows: None,
            seq_len: 8,
            classes_per_task: 2,
            train: 500,
            test: 200,
            noise: 0.0,
        }
    }
}

impl SuiteSpec {
    pub fn num_classes(&self) -> usize {
        self.tasks * self.classes_per_task
    }

    /// Per-task windows; explicit windows must be pairwise disjoint.
    pub fn task_windows(&self, vocab: usize) -> Result<Vec<(u32, u32)>> {
        let windows: Vec<(u32, u32)> = match &self.windows {
            Some(ws) => {
                if ws.len() != self.tasks {
                    return Err(Error::Config(format!("{} windows for {} tasks", ws.len(), self.tasks)));
                }
                let ws: Vec<(u32, u32)> = ws.iter().map(|w| (w[0], w[1])).collect();
                for i in 0..ws.len() {
                    for j in i + 1..ws.len() {
                        if ws[i].0 < ws[j].1 && ws[j].0 < ws[i].1 {
                            return Err(Error::WindowOverlap(i, j));
                        }
                    }
                }
                ws
            }
            None => {
                if !(0.0..1.0).contains(&self.overlap) {
                    return Err(Error::Config(format!(
                        "overlap must lie in [0, 1), got {}",
                        self.overlap
                    )));
                }
                let stride = (f64::from(self.window) * (1.0 - self.overlap)).round().max(1.0) as u32;
                (0..self.tasks as u32)
                    .map(|t| (t * stride, t * stride + self.window))
                    .collect()
            }
        };
        for (i, &(s, e)) in windows.iter().enumerate() {
            if s >= e || e as usize > vocab {
                return Err(Error::Config(format!(
                    "window {i} = [{s}, {e}) does not fit vocabulary {vocab}"
                )));
            }
        }
        Ok(windows)
    }
}

/// Generates every task of the suite from one seed.
pub fn generate_suite(spec: &SuiteSpec, embed: &Mat, seed: u64) -> Result<TaskSequence> {
    if spec.tasks == 0 {
        return Err(Error::Config("a task sequence needs at least one task".into()));
    }
    let windows = spec.task_windows(embed.rows())?;
    let mut tasks = Vec::with_capacity(spec.tasks);
    for (t, window) in windows.into_iter().enumerate() {
        let task = TaskSpec {
            task_id: t,
            window,
            class_offset: t * spec.classes_per_task,
            n_classes: spec.classes_per_task,
            n_train: spec.train,
            n_test: spec.test,
            seq_len: spec.seq_len,
            noise: spec.noise,
        };
        let mut rng = Rng::stream(seed, crate::numerics::Stream::Data, t as u64);
        tasks.push(generate_task(&mut rng, &task, embed)?);
    }
    Ok(TaskSequence {
        tasks,
        num_classes: spec.num_classes(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataFormat {
    Jsonl,
    Csv,
}

impl DataFormat {
    pub fn from_path(path: &Path) -> Result<Self> {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl") | Some("json") => Ok(DataFormat::Jsonl),
            Some("csv") => Ok(DataFormat::Csv),
            _ => Err(Error::Config(format!(
                "cannot infer dataset format of {}",
                path.display()
            ))),
        }
    }
}

impl FromStr for DataFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "jsonl" => Ok(DataFormat::Jsonl),
            "csv" => Ok(DataFormat::Csv),
            other => Err(Error::Config(format!("unknown dataset format `{other}`"))),
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonRecord {
    tokens: Vec<u32>,
    label: usize,
    task_id: usize,
}

#[derive(Deserialize)]
struct CsvRecord {
    tokens: String,
    label: usize,
    task_id: usize,
}

/// Reads and validates one task's samples, in file order.
pub fn ingest_dataset(path: &Path, format: DataFormat, vocab: usize, num_classes: usize) -> Result<Dataset> {
    let parse_err = |line: usize, message: String| Error::Parse {
        path: PathBuf::from(path),
        line,
        message,
    };
    let mut rows: Vec<(usize, JsonRecord)> = Vec::new();
    match format {
        DataFormat::Jsonl => {
            let reader = BufReader::new(File::open(path)?);
            for (i, line) in reader.lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let rec: JsonRecord = serde_json::from_str(&line).map_err(|e| parse_err(i + 1, e.to_string()))?;
                rows.push((i + 1, rec));
            }
        }
        DataFormat::Csv => {
            let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
            for (i, rec) in reader.deserialize::<CsvRecord>().enumerate() {
                // header is line 1
                let line = i + 2;
                let rec = rec.map_err(|e| parse_err(line, e.to_string()))?;
                let tokens = rec
                    .tokens
                    .split_whitespace()
                    .map(|t| {
                        t.parse::<u32>()
                            .map_err(|e| parse_err(line, format!("token `{t}`: {e}")))
                    })
                    .collect::<Result<Vec<_>>>()?;
                rows.push((
                    line,
                    JsonRecord {
                        tokens,
                        label: rec.label,
                        task_id: rec.task_id,
                    },
                ));
            }
        }
    }

    let Some(task_id) = rows.first().map(|(_, r)| r.task_id) else {
        log::warn!("{} contains no samples", path.display());
        return Ok(Dataset {
            task_id: 0,
            samples: Vec::new(),
        });
    };
    let mut samples = Vec::with_capacity(rows.len());
    for (line, rec) in rows {
        if rec.task_id != task_id {
            return Err(Error::Schema(format!(
                "{}:{line}: task_id {} differs from the file's task_id {task_id}",
                path.display(),
                rec.task_id
            )));
        }
        if rec.label >= num_classes {
            return Err(Error::Schema(format!(
                "{}:{line}: label {} outside the {num_classes}-class union",
                path.display(),
                rec.label
            )));
        }
        if rec.tokens.is_empty() {
            return Err(Error::Schema(format!(
                "{}:{line}: empty token sequence",
                path.display()
            )));
        }
        if let Some(&t) = rec.tokens.iter().find(|&&t| t as usize >= vocab) {
            return Err(Error::IdOutOfRange { id: t as usize, vocab });
        }
        samples.push(Sample {
            tokens: rec.tokens,
            label: rec.label,
        });
    }
    Ok(Dataset { task_id, samples })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn embed() -> Mat {
        gaussian_init(&mut Rng::new(9), 64, 16, 1.0)
    }

    fn spec(noise: f64) -> TaskSpec {
        TaskSpec {
            task_id: 0,
            window: (0, 8),
            class_offset: 4,
            n_classes: 3,
            n_train: 50,
            n_test: 20,
            seq_len: 6,
            noise,
        }
    }

    #[test]
    fn deterministic() {
        let e = embed();
        let a = generate_task(&mut Rng::new(1), &spec(0.1), &e).unwrap();
        let b = generate_task(&mut Rng::new(1), &spec(0.1), &e).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn teacher_agrees_without_noise() {
        let e = embed();
        let s = spec(0.0);
        let mut rng = Rng::new(3);
        let data = generate_task(&mut rng, &s, &e).unwrap();
        let teacher = draw_teacher(&mut Rng::new(3), &s, &e);
        for sample in data.train.samples.iter().chain(&data.test.samples) {
            let pooled = pool_embed(&sample.tokens, &e).unwrap();
            assert_eq!(teacher.classify(&pooled) + s.class_offset, sample.label);
            assert!(sample.tokens.iter().all(|&t| t < 8));
        }
    }

    #[test]
    fn classes_balanced() {
        let data = generate_task(&mut Rng::new(2), &spec(0.3), &embed()).unwrap();
        let mut counts = [0usize; 3];
        for s in &data.train.samples {
            counts[s.label - 4] += 1;
        }
        let (lo, hi) = (counts.iter().min().unwrap(), counts.iter().max().unwrap());
        assert!(hi - lo <= 1, "{counts:?}");
    }

    #[test]
    fn explicit_windows_must_be_disjoint() {
        let spec = SuiteSpec {
            tasks: 2,
            windows: Some(vec![[0, 8], [4, 12]]),
            ..Default::default()
        };
        assert!(matches!(spec.task_windows(64), Err(Error::WindowOverlap(0, 1))));
        let spec = SuiteSpec {
            tasks: 2,
            windows: Some(vec![[0, 8], [8, 12]]),
            ..Default::default()
        };
        assert_eq!(spec.task_windows(64).unwrap(), vec![(0, 8), (8, 12)]);
    }

    #[test]
    fn overlap_shrinks_stride() {
        let spec = SuiteSpec {
            tasks: 3,
            window: 8,
            overlap: 0.5,
            ..Default::default()
        };
        assert_eq!(spec.task_windows(64).unwrap(), vec![(0, 8), (4, 12), (8, 16)]);
        let too_big = SuiteSpec {
            tasks: 10,
            window: 8,
            ..Default::default()
        };
        assert!(too_big.task_windows(64).is_err());
    }

    fn write(contents: &str, ext: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::Builder::new().suffix(ext).tempfile().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn ingest_jsonl() {
        let f = write(
            "{\"tokens\":[1,2],\"label\":1,\"task_id\":3}\n{\"tokens\":[4],\"label\":0,\"task_id\":3}\n",
            ".jsonl",
        );
        let d = ingest_dataset(f.path(), DataFormat::Jsonl, 8, 2).unwrap();
        assert_eq!(d.task_id, 3);
        assert_eq!(
            d.samples,
            vec![
                Sample {
                    tokens: vec![1, 2],
                    label: 1
                },
                Sample {
                    tokens: vec![4],
                    label: 0
                }
            ]
        );
    }

    #[test]
    fn ingest_errors() {
        let f = write("{\"tokens\":[1],\"label\":5,\"task_id\":0}\n", ".jsonl");
        assert!(matches!(
            ingest_dataset(f.path(), DataFormat::Jsonl, 8, 2),
            Err(Error::Schema(_))
        ));
        let f = write("{\"tokens\":[9],\"label\":0,\"task_id\":0}\n", ".jsonl");
        assert!(matches!(
            ingest_dataset(f.path(), DataFormat::Jsonl, 8, 2),
            Err(Error::IdOutOfRange { id: 9, .. })
        ));
        let f = write("{\"tokens\":[1],\"label\":0,\"task_id\":0}\nnot json\n", ".jsonl");
        assert!(matches!(
            ingest_dataset(f.path(), DataFormat::Jsonl, 8, 2),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn ingest_empty_and_csv() {
        let f = write("", ".jsonl");
        assert!(ingest_dataset(f.path(), DataFormat::Jsonl, 8, 2).unwrap().is_empty());
        let f = write("tokens,label,task_id\n1 2 3,1,0\n7,0,0\n", ".csv");
        let d = ingest_dataset(f.path(), DataFormat::Csv, 8, 2).unwrap();
        assert_eq!(d.samples[0].tokens, vec![1, 2, 3]);
        assert_eq!(d.len(), 2);
        let f = write("tokens,label,task_id\n1 x,1,0\n", ".csv");
        assert!(matches!(
            ingest_dataset(f.path(), DataFormat::Csv, 8, 2),
            Err(Error::Parse { line: 2, .. })
        ));
    }
}
