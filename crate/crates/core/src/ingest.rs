//! Run-log data model and on-disk manifest format.
//!
//! A run is stored as one JSON manifest plus two sibling CSV files:
//!
//! ```text
//! run_0001.json          {"run_id": ..., "arch": {...}, "steps_file": "run_0001.steps.csv", ...}
//! run_0001.steps.csv     step,tokens,train_loss
//! run_0001.vals.csv      tokens,loss,subsample_std
//! ```
//!
//! Token counts are cumulative. Unknown manifest keys are ignored with a
//! warning.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub const DEFAULT_VOCAB: u64 = 50_432;
pub const DEFAULT_SEQ_LEN: u64 = 2048;
pub const DEFAULT_LOG_INTERVAL: u64 = 20;

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed manifest {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("malformed csv {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("invalid run {run_id}: {reason}")]
    Invalid { run_id: String, reason: String },
    #[error("duplicate run_id {0}")]
    DuplicateRunId(String),
    #[error("no run manifests found in {0}")]
    EmptyDirectory(PathBuf),
}

type Result<T> = std::result::Result<T, IngestError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModelArch {
    pub depth: u64,
    pub width: u64,
    #[serde(default = "default_vocab")]
    pub vocab: u64,
    #[serde(default = "default_seq_len")]
    pub seq_len: u64,
    pub heads: u64,
}

fn default_vocab() -> u64 {
    DEFAULT_VOCAB
}
fn default_seq_len() -> u64 {
    DEFAULT_SEQ_LEN
}

impl ModelArch {
    /// Architecture with the default vocabulary and sequence length.
    pub fn new(depth: u64, width: u64, heads: u64) -> Self {
        Self {
            depth,
            width,
            vocab: DEFAULT_VOCAB,
            seq_len: DEFAULT_SEQ_LEN,
            heads,
        }
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.depth == 0 || self.width == 0 || self.vocab == 0 || self.seq_len == 0 {
            return Err("depth, width, vocab and seq_len must be positive".into());
        }
        if self.heads == 0 || self.width % self.heads != 0 {
            return Err(format!(
                "width {} not divisible by heads {}",
                self.width, self.heads
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    Constant,
    Cosine,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub kind: ScheduleKind,
    pub warmup_tokens: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decay_end_tokens: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_lr_fraction: Option<f64>,
}

impl Schedule {
    pub fn constant(warmup_tokens: u64) -> Self {
        Self {
            kind: ScheduleKind::Constant,
            warmup_tokens,
            decay_end_tokens: None,
            final_lr_fraction: None,
        }
    }

    pub fn cosine(warmup_tokens: u64, decay_end_tokens: u64, final_lr_fraction: f64) -> Self {
        Self {
            kind: ScheduleKind::Cosine,
            warmup_tokens,
            decay_end_tokens: Some(decay_end_tokens),
            final_lr_fraction: Some(final_lr_fraction),
        }
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.kind == ScheduleKind::Cosine {
            let end = self
                .decay_end_tokens
                .ok_or("cosine schedule requires decay_end_tokens")?;
            if end == 0 || self.warmup_tokens >= end {
                return Err(format!(
                    "cosine schedule needs warmup_tokens < decay_end_tokens ({} >= {end})",
                    self.warmup_tokens
                ));
            }
            let f = self
                .final_lr_fraction
                .ok_or("cosine schedule requires final_lr_fraction")?;
            if !(0.0..=1.0).contains(&f) {
                return Err(format!("final_lr_fraction {f} outside [0, 1]"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    #[serde(rename = "lr")]
    pub learning_rate: f64,
    pub batch_size_seqs: u64,
    pub beta2: f64,
    pub seed: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub tokens: u64,
    pub train_loss: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValRecord {
    pub tokens: u64,
    pub loss: f64,
    pub subsample_std: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingRun {
    pub run_id: String,
    pub dataset: String,
    pub arch: ModelArch,
    pub hparams: HyperParams,
    pub schedule: Schedule,
    pub log_interval: u64,
    pub steps: Vec<StepRecord>,
    pub vals: Vec<ValRecord>,
}

impl TrainingRun {
    /// Batch size in tokens.
    pub fn batch_tokens(&self) -> u64 {
        self.hparams.batch_size_seqs * self.arch.seq_len
    }

    pub fn total_tokens(&self) -> u64 {
        self.steps.last().map_or(0, |s| s.tokens)
    }

    /// Checks every invariant of the run; the error names the offending record.
    pub fn validate(&self) -> std::result::Result<(), IngestError> {
        let invalid = |reason: String| IngestError::Invalid {
            run_id: self.run_id.clone(),
            reason,
        };
        self.arch.validate().map_err(invalid)?;
        self.schedule.validate().map_err(invalid)?;
        let hp = &self.hparams;
        if !(hp.learning_rate > 0.0 && hp.learning_rate.is_finite()) {
            return Err(invalid(format!("learning rate {} not positive", hp.learning_rate)));
        }
        if hp.batch_size_seqs == 0 {
            return Err(invalid("batch_size_seqs must be positive".into()));
        }
        if !(hp.beta2 > 0.0 && hp.beta2 < 1.0) {
            return Err(invalid(format!("beta2 {} outside (0, 1)", hp.beta2)));
        }
        if self.log_interval == 0 {
            return Err(invalid("log_interval must be positive".into()));
        }
        if self.steps.is_empty() {
            return Err(invalid("no step records".into()));
        }

        let batch = self.batch_tokens();
        let last = self.steps.len() - 1;
        for (i, rec) in self.steps.iter().enumerate() {
            if !(rec.train_loss.is_finite() && rec.train_loss >= 0.0) {
                return Err(invalid(format!("non-finite or negative loss at record {i}")));
            }
            if i == 0 {
                continue;
            }
            let prev = &self.steps[i - 1];
            if rec.tokens <= prev.tokens {
                return Err(invalid(format!("non-monotone tokens at record {i}")));
            }
            if rec.step <= prev.step {
                return Err(invalid(format!("non-monotone step at record {i}")));
            }
            let dstep = rec.step - prev.step;
            if rec.tokens - prev.tokens != batch * dstep {
                return Err(invalid(format!(
                    "token delta {} at record {i} does not match batch size {batch} x {dstep} steps",
                    rec.tokens - prev.tokens
                )));
            }
            // The first and last intervals may be partial.
            if i != 1 && i != last && dstep != self.log_interval {
                return Err(invalid(format!(
                    "step delta {dstep} at record {i} differs from log_interval {}",
                    self.log_interval
                )));
            }
        }

        let horizon = self.total_tokens() + self.log_interval * batch;
        for (i, v) in self.vals.iter().enumerate() {
            if !(v.loss.is_finite() && v.loss >= 0.0) {
                return Err(invalid(format!("non-finite validation loss at record {i}")));
            }
            if v.tokens > horizon {
                return Err(invalid(format!(
                    "validation record {i} at {} tokens is beyond the run duration",
                    v.tokens
                )));
            }
            if let Some(s) = v.subsample_std {
                if !(s >= 0.0 && s.is_finite()) {
                    return Err(invalid(format!("invalid subsample_std at validation record {i}")));
                }
            }
            if i > 0 && v.tokens <= self.vals[i - 1].tokens {
                return Err(invalid(format!("non-monotone validation tokens at record {i}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    run_id: String,
    dataset: String,
    arch: ModelArch,
    hparams: HyperParams,
    schedule: Schedule,
    #[serde(default = "default_log_interval")]
    log_interval: u64,
    steps_file: String,
    vals_file: String,
    #[serde(flatten, skip_serializing)]
    extra: BTreeMap<String, serde_json::Value>,
}

fn default_log_interval() -> u64 {
    DEFAULT_LOG_INTERVAL
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IngestError + '_ {
    move |source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn read_csv<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let csv_err = |source| IngestError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    reader
        .deserialize()
        .collect::<std::result::Result<Vec<T>, _>>()
        .map_err(csv_err)
}

/// Loads and validates one run from its manifest.
pub fn load_run(manifest_path: impl AsRef<Path>) -> Result<TrainingRun> {
    let path = manifest_path.as_ref();
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|source| IngestError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    if !manifest.extra.is_empty() {
        let keys: Vec<&str> = manifest.extra.keys().map(String::as_str).collect();
        log::warn!("{}: ignoring unknown manifest keys {:?}", path.display(), keys);
    }
    let dir = path.parent().unwrap_or(Path::new("."));
    let steps = read_csv(&dir.join(&manifest.steps_file))?;
    let vals = read_csv(&dir.join(&manifest.vals_file))?;
    let run = TrainingRun {
        run_id: manifest.run_id,
        dataset: manifest.dataset,
        arch: manifest.arch,
        hparams: manifest.hparams,
        schedule: manifest.schedule,
        log_interval: manifest.log_interval,
        steps,
        vals,
    };
    run.validate()?;
    Ok(run)
}

/// Loads every `*.json` manifest below `dir`, in path order.
pub fn load_sweep(dir: impl AsRef<Path>) -> Result<Vec<TrainingRun>> {
    let dir = dir.as_ref();
    if !dir.is_dir() {
        return Err(IngestError::Io {
            path: dir.to_path_buf(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "not a directory"),
        });
    }
    let mut runs = Vec::new();
    let mut seen = HashSet::new();
    for entry in walkdir::WalkDir::new(dir).sort_by_file_name() {
        let entry = entry.map_err(|e| IngestError::Io {
            path: dir.to_path_buf(),
            source: e.into(),
        })?;
        let path = entry.path();
        if !entry.file_type().is_file() || path.extension().is_none_or(|e| e != "json") {
            continue;
        }
        let run = load_run(path)?;
        if !seen.insert(run.run_id.clone()) {
            return Err(IngestError::DuplicateRunId(run.run_id));
        }
        runs.push(run);
    }
    if runs.is_empty() {
        return Err(IngestError::EmptyDirectory(dir.to_path_buf()));
    }
    Ok(runs)
}

/// Writes `<run_id>.json`, `<run_id>.steps.csv` and `<run_id>.vals.csv` into
/// `dir`, returning the manifest path.
pub fn write_run(run: &TrainingRun, dir: impl AsRef<Path>) -> Result<PathBuf> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let steps_file = format!("{}.steps.csv", run.run_id);
    let vals_file = format!("{}.vals.csv", run.run_id);

    let mut steps_csv = String::from("step,tokens,train_loss\n");
    for s in &run.steps {
        steps_csv.push_str(&format!("{},{},{}\n", s.step, s.tokens, s.train_loss));
    }
    let mut vals_csv = String::from("tokens,loss,subsample_std\n");
    for v in &run.vals {
        let std = v.subsample_std.map(|s| s.to_string()).unwrap_or_default();
        vals_csv.push_str(&format!("{},{},{}\n", v.tokens, v.loss, std));
    }
    let steps_path = dir.join(&steps_file);
    fs::write(&steps_path, steps_csv).map_err(io_err(&steps_path))?;
    let vals_path = dir.join(&vals_file);
    fs::write(&vals_path, vals_csv).map_err(io_err(&vals_path))?;

    let manifest = Manifest {
        run_id: run.run_id.clone(),
        dataset: run.dataset.clone(),
        arch: run.arch,
        hparams: run.hparams,
        schedule: run.schedule,
        log_interval: run.log_interval,
        steps_file,
        vals_file,
        extra: BTreeMap::new(),
    };
    let manifest_path = dir.join(format!("{}.json", run.run_id));
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&manifest_path, json + "\n").map_err(io_err(&manifest_path))?;
    Ok(manifest_path)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn sample_run(id: &str) -> TrainingRun {
        let batch = 4 * DEFAULT_SEQ_LEN;
        TrainingRun {
            run_id: id.to_string(),
            dataset: "rw".into(),
            arch: ModelArch::new(3, 96, 4),
            hparams: HyperParams {
                learning_rate: 3e-3,
                batch_size_seqs: 4,
                beta2: 0.95,
                seed: 0,
            },
            schedule: Schedule::constant(1000),
            log_interval: 20,
            steps: (1..=5)
                .map(|i| StepRecord {
                    step: 20 * i,
                    tokens: 20 * i * batch,
                    train_loss: 5.0 - 0.1 * i as f64,
                })
                .collect(),
            vals: vec![ValRecord {
                tokens: 40 * batch,
                loss: 4.75,
                subsample_std: None,
            }],
        }
    }

    #[test]
    fn validation_names_record() {
        let mut run = sample_run("a");
        run.steps[1].tokens = run.steps[0].tokens;
        let err = run.validate().unwrap_err().to_string();
        assert!(err.contains("non-monotone tokens at record 1"), "{err}");
    }

    #[test]
    fn rejects_indivisible_heads() {
        let mut run = sample_run("a");
        run.arch.heads = 5;
        assert!(run.validate().is_err());
    }

    #[test]
    fn rejects_token_batch_mismatch() {
        let mut run = sample_run("a");
        run.steps[2].tokens += 1;
        run.steps[3].tokens += 1;
        run.steps[4].tokens += 1;
        let err = run.validate().unwrap_err().to_string();
        assert!(err.contains("record 2"), "{err}");
    }

    #[test]
    fn cosine_needs_decay_end() {
        let mut run = sample_run("a");
        run.schedule = Schedule {
            kind: ScheduleKind::Cosine,
            warmup_tokens: 10,
            decay_end_tokens: None,
            final_lr_fraction: Some(0.01),
        };
        assert!(run.validate().is_err());
        run.schedule = Schedule::cosine(10, 10, 0.01);
        assert!(run.validate().is_err());
        run.schedule = Schedule::cosine(10, 11, 0.01);
        assert!(run.validate().is_ok());
    }

    #[test]
    fn unknown_keys_are_ignored() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_run(&sample_run("x"), dir.path()).unwrap();
        let mut v: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
        v["logger_version"] = serde_json::json!("2.1");
        fs::write(&path, v.to_string()).unwrap();
        let run = load_run(&path).unwrap();
        assert_eq!(run, sample_run("x"));
    }

    #[test]
    fn malformed_json_is_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.json");
        fs::write(&path, "{\"run_id\": ").unwrap();
        assert!(matches!(load_run(&path), Err(IngestError::Json { .. })));
    }
}
