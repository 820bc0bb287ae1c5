//! Training-loss smoothing and loss lookup at a target FLOP count.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::accounting::{model_size, AccountingError, SizeScheme};
use crate::ingest::TrainingRun;

/// Half-width of the smoothing window as a fraction of the step index.
pub const DEFAULT_WINDOW_FRACTION: f64 = 0.05;
/// Maximum relative distance between the target step and the nearest sample.
pub const MAX_RELATIVE_STEP_GAP: f64 = 0.10;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SignalError {
    #[error("loss series is empty")]
    EmptySeries,
    #[error("loss series is already smoothed")]
    AlreadySmoothed,
    #[error("window fraction {0} outside [0, 1)")]
    InvalidWindow(f64),
    #[error("log interval must be at least 1")]
    InvalidInterval,
    #[error("loss series is not strictly increasing in tokens at entry {0}")]
    NonMonotone(usize),
    #[error("non-finite or non-positive loss at entry {0}")]
    BadLoss(usize),
    #[error("run {run_id} has no {kind} samples")]
    NoSamples { run_id: String, kind: LossSource },
    #[error(transparent)]
    Accounting(#[from] AccountingError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossEntry {
    pub step: f64,
    pub tokens: f64,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossSeries {
    pub entries: Vec<LossEntry>,
    pub smoothed: bool,
    /// Tokens consumed per optimizer step (constant within a run).
    pub tokens_per_step: f64,
}

impl LossSeries {
    pub fn new(entries: Vec<LossEntry>, tokens_per_step: f64) -> Result<Self, SignalError> {
        for (i, e) in entries.iter().enumerate() {
            if !(e.loss.is_finite() && e.loss > 0.0) {
                return Err(SignalError::BadLoss(i));
            }
            if i > 0 && e.tokens <= entries[i - 1].tokens {
                return Err(SignalError::NonMonotone(i));
            }
        }
        Ok(Self {
            entries,
            smoothed: false,
            tokens_per_step,
        })
    }

    /// Raw training-loss series of a run.
    pub fn from_run(run: &TrainingRun) -> Result<Self, SignalError> {
        let entries = run
            .steps
            .iter()
            .map(|s| LossEntry {
                step: s.step as f64,
                tokens: s.tokens as f64,
                loss: s.train_loss,
            })
            .collect();
        Self::new(entries, run.batch_tokens() as f64)
    }
}

/// A single IsoFLOP observation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossPoint {
    /// Model size under the active scheme.
    pub n: f64,
    pub flops: f64,
    pub loss: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossSource {
    #[default]
    Validation,
    #[serde(rename = "train")]
    SmoothedTrain,
}

impl fmt::Display for LossSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Validation => "validation",
            Self::SmoothedTrain => "smoothed-train",
        })
    }
}

impl FromStr for LossSource {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "v" | "val" | "validation" => Ok(Self::Validation),
            "t" | "train" | "smoothed-train" => Ok(Self::SmoothedTrain),
            _ => Err(format!("unknown loss source {s:?} (expected v or t)")),
        }
    }
}

/// Variable-window moving average with logging-lag compensation.
///
/// Entry `i` becomes the mean of raw entries `i - floor(p i) ..= i + floor(p i)`
/// (clamped to the series), and every coordinate moves back by `k / 2` steps.
pub fn smooth_loss(series: &LossSeries, p: f64, k: u64) -> Result<LossSeries, SignalError> {
    if series.entries.is_empty() {
        return Err(SignalError::EmptySeries);
    }
    if series.smoothed {
        return Err(SignalError::AlreadySmoothed);
    }
    if !(0.0..1.0).contains(&p) {
        return Err(SignalError::InvalidWindow(p));
    }
    if k == 0 {
        return Err(SignalError::InvalidInterval);
    }
    let n = series.entries.len();
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(0.0);
    let mut acc = 0.0;
    for e in &series.entries {
        acc += e.loss;
        prefix.push(acc);
    }
    let lag_steps = k as f64 / 2.0;
    let lag_tokens = lag_steps * series.tokens_per_step;
    let entries = series
        .entries
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let half = (p * i as f64).floor() as usize;
            let lo = i.saturating_sub(half);
            let hi = (i + half).min(n - 1);
            let loss = if lo == hi {
                e.loss
            } else {
                (prefix[hi + 1] - prefix[lo]) / (hi - lo + 1) as f64
            };
            LossEntry {
                step: e.step - lag_steps,
                tokens: e.tokens - lag_tokens,
                loss,
            }
        })
        .collect();
    Ok(LossSeries {
        entries,
        smoothed: true,
        tokens_per_step: series.tokens_per_step,
    })
}

/// `(step, loss)` samples of a run for the requested source, ascending in step.
pub fn loss_samples(run: &TrainingRun, source: LossSource) -> Result<Vec<(f64, f64)>, SignalError> {
    let batch = run.batch_tokens() as f64;
    let samples: Vec<(f64, f64)> = match source {
        LossSource::Validation => run
            .vals
            .iter()
            .map(|v| (v.tokens as f64 / batch, v.loss))
            .collect(),
        LossSource::SmoothedTrain => {
            let raw = LossSeries::from_run(run)?;
            smooth_loss(&raw, DEFAULT_WINDOW_FRACTION, run.log_interval)?
                .entries
                .into_iter()
                .map(|e| (e.step, e.loss))
                .collect()
        }
    };
    if samples.is_empty() {
        return Err(SignalError::NoSamples {
            run_id: run.run_id.clone(),
            kind: source,
        });
    }
    Ok(samples)
}

/// Linear interpolation of log-loss between two `(step, loss)` samples.
pub fn interpolate_log_loss(a: (f64, f64), b: (f64, f64), target: f64) -> f64 {
    let w = (target - a.0) / (b.0 - a.0);
    (a.1.ln() + w * (b.1.ln() - a.1.ln())).exp()
}

/// Loss at `target` step from ascending samples, or `None` when the nearest
/// sample is more than 10% away.
///
/// A bracketing pair is used when the target lies inside the sampled range;
/// otherwise the two samples nearest the target are extended linearly.
pub fn fetch_loss(samples: &[(f64, f64)], target: f64) -> Option<f64> {
    let n = samples.len();
    if n == 0 || !(target > 0.0) {
        return None;
    }
    let idx = samples.partition_point(|s| s.0 < target);
    let nearest = match (idx.checked_sub(1), (idx < n).then_some(idx)) {
        (Some(i), Some(j)) => {
            if target - samples[i].0 <= samples[j].0 - target {
                i
            } else {
                j
            }
        }
        (Some(i), None) => i,
        (None, Some(j)) => j,
        (None, None) => unreachable!(),
    };
    let gap = (samples[nearest].0 - target).abs() / target;
    if gap > MAX_RELATIVE_STEP_GAP {
        return None;
    }
    // Exact hits, and lone samples within tolerance, are returned as-is.
    if samples[nearest].0 == target || n == 1 {
        return Some(samples[nearest].1);
    }
    let (a, b) = if idx == 0 {
        (samples[0], samples[1])
    } else if idx == n {
        (samples[n - 2], samples[n - 1])
    } else {
        (samples[idx - 1], samples[idx])
    };
    Some(interpolate_log_loss(a, b, target))
}

/// Loss of `run` after spending `flops` under `scheme`.
///
/// The target step is `C / (6 N B)` with `B` the batch size in tokens.
pub fn loss_at_flops(
    run: &TrainingRun,
    flops: f64,
    scheme: SizeScheme,
    source: LossSource,
) -> Result<Option<f64>, SignalError> {
    let n = model_size(&run.arch, scheme)?;
    let target = flops / (6.0 * n * run.batch_tokens() as f64);
    let samples = loss_samples(run, source)?;
    Ok(fetch_loss(&samples, target))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(losses: &[f64]) -> LossSeries {
        let entries = losses
            .iter()
            .enumerate()
            .map(|(i, &loss)| LossEntry {
                step: 20.0 * (i + 1) as f64,
                tokens: 20.0 * 100.0 * (i + 1) as f64,
                loss,
            })
            .collect();
        LossSeries::new(entries, 100.0).unwrap()
    }

    #[test]
    fn constant_series_is_unchanged() {
        let s = smooth_loss(&series(&[3.0; 50]), 0.05, 20).unwrap();
        assert!(s.smoothed);
        assert!(s.entries.iter().all(|e| e.loss == 3.0));
    }

    #[test]
    fn zero_window_only_shifts() {
        let raw = series(&[5.0, 4.0, 3.5, 3.2]);
        let s = smooth_loss(&raw, 0.0, 20).unwrap();
        for (a, b) in raw.entries.iter().zip(&s.entries) {
            assert_eq!(a.loss, b.loss);
            assert_eq!(b.step, a.step - 10.0);
            assert_eq!(b.tokens, a.tokens - 1000.0);
        }
    }

    #[test]
    fn window_average_matches_brute_force() {
        let losses: Vec<f64> = (0..100).map(|j| j as f64 + 1.0).collect();
        let s = smooth_loss(&series(&losses), 0.05, 20).unwrap();
        // Brute force: mean of indices 38..=42 of loss[j] = j + 1.
        let brute: f64 = (38..=42).map(|j| losses[j]).sum::<f64>() / 5.0;
        assert_eq!(s.entries[40].loss, brute);
        assert_eq!(brute - 1.0, 40.0);
        // The last entries are clamped to the available tail.
        let i = 99;
        let half = (0.05 * i as f64).floor() as usize;
        let tail: Vec<f64> = losses[i - half..].to_vec();
        let expect = tail.iter().sum::<f64>() / tail.len() as f64;
        assert!((s.entries[i].loss - expect).abs() < 1e-12);
    }

    #[test]
    fn smoothing_errors() {
        let empty = LossSeries::new(vec![], 1.0).unwrap();
        assert_eq!(smooth_loss(&empty, 0.05, 20), Err(SignalError::EmptySeries));
        let s = smooth_loss(&series(&[1.0, 2.0]), 0.05, 20).unwrap();
        assert_eq!(smooth_loss(&s, 0.05, 20), Err(SignalError::AlreadySmoothed));
        assert_eq!(
            smooth_loss(&series(&[1.0]), 1.0, 20),
            Err(SignalError::InvalidWindow(1.0))
        );
    }

    #[test]
    fn interpolation_rule() {
        let v = interpolate_log_loss((100.0, 4.0), (200.0, 2.5), 141.42);
        // log-loss = ln 4 + 0.4142 * (ln 2.5 - ln 4)
        let expect = (4f64.ln() + 0.4142 * (2.5f64.ln() - 4f64.ln())).exp();
        assert!((v - expect).abs() < 1e-9, "{v}");
        assert!((v - 3.2922).abs() < 5e-4, "{v}");
    }

    #[test]
    fn exact_hit_and_gap_rule() {
        let samples = [(100.0, 4.0), (200.0, 3.25), (400.0, 3.0)];
        assert_eq!(fetch_loss(&samples, 200.0), Some(3.25));
        assert_eq!(fetch_loss(&[(100.0, 4.0)], 115.0), None);
        assert_eq!(fetch_loss(&[(100.0, 4.0), (300.0, 3.0)], 115.0), None);
        assert!(fetch_loss(&samples, 105.0).is_some());
        assert!(fetch_loss(&samples, 435.0).is_some());
        assert!(fetch_loss(&samples, 450.0).is_none());
    }

    #[test]
    fn interior_fetch_interpolates_bracket() {
        let samples = [(100.0, 4.0), (105.0, 3.9), (200.0, 3.0)];
        let v = fetch_loss(&samples, 104.0).unwrap();
        let expect = interpolate_log_loss(samples[0], samples[1], 104.0);
        assert_eq!(v, expect);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn smoothing_stays_within_window_range(
                losses in prop::collection::vec(0.5f64..10.0, 1..200),
                p in 0.0f64..0.5,
            ) {
                let s = smooth_loss(&series(&losses), p, 20).unwrap();
                let n = losses.len();
                for (i, e) in s.entries.iter().enumerate() {
                    let half = (p * i as f64).floor() as usize;
                    let w = &losses[i.saturating_sub(half)..=(i + half).min(n - 1)];
                    let lo = w.iter().cloned().fold(f64::INFINITY, f64::min);
                    let hi = w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    prop_assert!(e.loss >= lo - 1e-12 && e.loss <= hi + 1e-12);
                }
            }
        }
    }
}
