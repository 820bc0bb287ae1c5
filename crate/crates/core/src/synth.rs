//! Synthetic training runs drawn from `L(N, D) = E + A N^-alpha + B D^-beta`,
//! whose compute-optimal allocation is known in closed form.

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::accounting::{model_size, AccountingError, SizeScheme};
use crate::estimator::NoiseProfile;
use crate::ingest::{IngestError, StepRecord, TrainingRun, ValRecord, DEFAULT_LOG_INTERVAL};
use crate::planner::{warmup_tokens, ExperimentPlan, PlanError, PlannedRun, WarmupStyle};
use crate::rng::{derive_seed, stream_id, substream};

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Accounting(#[from] AccountingError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
}

/// Multiplicative excess loss `m * (1 - D/W)+` while `D` is below the
/// warmup length `W`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WarmupPenalty {
    /// Warmup rule defining `W`; the run's own schedule when absent.
    #[serde(default)]
    pub style: Option<WarmupStyle>,
    pub magnitude: f64,
}

fn default_dataset() -> String {
    "synthetic".into()
}

fn default_log_interval() -> u64 {
    DEFAULT_LOG_INTERVAL
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    #[serde(rename = "E")]
    pub e: f64,
    #[serde(rename = "A")]
    pub a: f64,
    pub alpha: f64,
    #[serde(rename = "B")]
    pub b: f64,
    pub beta: f64,
    #[serde(default)]
    pub warmup_penalty: Option<WarmupPenalty>,
    #[serde(default)]
    pub noise: Option<NoiseProfile>,
    #[serde(default)]
    pub seed: u64,
    /// How the surface counts `N`; plan budgets use the plan's own scheme.
    #[serde(default)]
    pub size_scheme: SizeScheme,
    #[serde(default = "default_log_interval")]
    pub log_interval: u64,
    #[serde(default = "default_dataset")]
    pub dataset: String,
}

impl SynthSpec {
    pub fn new(e: f64, a: f64, alpha: f64, b: f64, beta: f64) -> Self {
        Self {
            e,
            a,
            alpha,
            b,
            beta,
            warmup_penalty: None,
            noise: None,
            seed: 0,
            size_scheme: SizeScheme::Linear,
            log_interval: DEFAULT_LOG_INTERVAL,
            dataset: default_dataset(),
        }
    }

    /// Fitted constants of the Chinchilla parametric loss (alpha 0.34, beta 0.28).
    pub fn chinchilla() -> Self {
        Self::new(1.69, 406.4, 0.34, 410.7, 0.28)
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let positive = [self.a, self.alpha, self.b, self.beta];
        if !(self.e >= 0.0 && positive.iter().all(|v| *v > 0.0 && v.is_finite())) {
            return Err(SynthError::InvalidSpec(format!(
                "need E >= 0 and positive A, alpha, B, beta; got {self:?}"
            )));
        }
        if self.log_interval == 0 {
            return Err(SynthError::InvalidSpec("log_interval must be positive".into()));
        }
        if let Some(p) = &self.noise {
            p.validate().map_err(|e| SynthError::InvalidSpec(e.to_string()))?;
        }
        if let Some(p) = &self.warmup_penalty {
            if !(p.magnitude >= 0.0 && p.magnitude.is_finite()) {
                return Err(SynthError::InvalidSpec("warmup penalty magnitude must be >= 0".into()));
            }
        }
        Ok(())
    }

    pub fn surface(&self, n: f64, d: f64) -> f64 {
        self.e + self.a * n.powf(-self.alpha) + self.b * d.powf(-self.beta)
    }

    /// Surface loss with the warmup penalty for warmup length `warmup`.
    pub fn loss(&self, n: f64, d: f64, warmup: f64) -> f64 {
        let base = self.surface(n, d);
        match &self.warmup_penalty {
            Some(p) if warmup > 0.0 => base * (1.0 + p.magnitude * (1.0 - d / warmup).max(0.0)),
            _ => base,
        }
    }
}

/// Closed-form compute-optimal allocation of a penalty-free surface.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Optimum {
    pub n_star: f64,
    pub d_star: f64,
    pub a_true: f64,
    pub coeff_true: f64,
}

/// `N*(C) = (alpha A / (beta B 6^beta))^(1/(alpha+beta)) * C^(beta/(alpha+beta))`.
pub fn analytic_optimum(spec: &SynthSpec, flops: f64) -> Optimum {
    let s = spec.alpha + spec.beta;
    let coeff_true = (spec.alpha * spec.a / (spec.beta * spec.b * 6f64.powf(spec.beta))).powf(1.0 / s);
    let a_true = spec.beta / s;
    let n_star = coeff_true * flops.powf(a_true);
    Optimum {
        n_star,
        d_star: flops / (6.0 * n_star),
        a_true,
        coeff_true,
    }
}

/// Generates one training run per planned run. Every run draws noise from
/// its own stream keyed by `(seed, run_id)`, so the output does not depend
/// on how work is scheduled.
pub fn generate_runs(spec: &SynthSpec, plan: &ExperimentPlan) -> Result<Vec<TrainingRun>, SynthError> {
    spec.validate()?;
    plan.validate()?;
    plan.runs
        .par_iter()
        .map(|planned| generate_run(spec, plan, planned))
        .collect()
}

fn generate_run(spec: &SynthSpec, plan: &ExperimentPlan, planned: &PlannedRun) -> Result<TrainingRun, SynthError> {
    let arch = planned.arch;
    let n_plan = model_size(&arch, plan.scheme)?;
    let n_true = model_size(&arch, spec.size_scheme)?;
    let batch = planned.hparams.batch_size_seqs * arch.seq_len;
    let k = spec.log_interval;

    let mut targets: Vec<u64> = planned
        .targets
        .iter()
        .map(|c| (c / (6.0 * n_plan)).round().max(1.0) as u64)
        .collect();
    targets.sort_unstable();
    targets.dedup();
    let end_tokens = *targets.last().expect("validated plan has targets");
    let total_steps = end_tokens.div_ceil(batch);

    let warmup = match spec.warmup_penalty.and_then(|p| p.style) {
        Some(style) => warmup_tokens(n_true, style, Some(end_tokens as f64))?,
        None => planned.schedule.warmup_tokens,
    } as f64;

    let mut step_rng = substream(spec.seed, stream_id(&planned.run_id));
    let mut val_rng = substream(derive_seed(spec.seed, 1), stream_id(&planned.run_id));
    let noisy = |loss: f64, rng: &mut rand_chacha::ChaCha8Rng| match &spec.noise {
        Some(p) => {
            let z: f64 = StandardNormal.sample(rng);
            (loss + p.sigma(loss) * z).max(1e-6)
        }
        None => loss,
    };

    let mut step_ids: Vec<u64> = (1..=total_steps / k).map(|i| i * k).collect();
    if step_ids.last() != Some(&total_steps) {
        step_ids.push(total_steps);
    }
    let mut prev_tokens = 0u64;
    let mut steps = Vec::with_capacity(step_ids.len());
    for step in step_ids {
        let tokens = step * batch;
        // Logged loss averages the interval; its midpoint stands in for it.
        let mid = 0.5 * (prev_tokens + tokens) as f64;
        let loss = noisy(spec.loss(n_true, mid, warmup), &mut step_rng);
        steps.push(StepRecord {
            step,
            tokens,
            train_loss: loss,
        });
        prev_tokens = tokens;
    }

    let vals = targets
        .iter()
        .map(|&tokens| ValRecord {
            tokens,
            loss: noisy(spec.loss(n_true, tokens as f64, warmup), &mut val_rng),
            subsample_std: None,
        })
        .collect();

    let run = TrainingRun {
        run_id: planned.run_id.clone(),
        dataset: spec.dataset.clone(),
        arch,
        hparams: planned.hparams,
        schedule: planned.schedule,
        log_interval: k,
        steps,
        vals,
    };
    run.validate()?;
    Ok(run)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::accounting::canonical_model_grid;
    use crate::planner::{plan_experiment, FlopGrid, PlanOptions};
    use crate::signal::{loss_at_flops, LossSource};

    #[test]
    fn symmetric_exponent_is_half() {
        let spec = SynthSpec::new(1.7, 150.0, 0.3, 300.0, 0.3);
        assert_eq!(analytic_optimum(&spec, 1e18).a_true, 0.5);
    }

    #[test]
    fn chinchilla_exponent() {
        let opt = analytic_optimum(&SynthSpec::chinchilla(), 1e20);
        assert!((opt.a_true - 0.451613).abs() < 1e-6);
        assert!((opt.d_star * 6.0 * opt.n_star / 1e20 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn first_order_condition() {
        for spec in [SynthSpec::chinchilla(), SynthSpec::new(1.7, 150.0, 0.3, 368.0, 0.3)] {
            for c in [1e16, 1e19, 1e22] {
                let n = analytic_optimum(&spec, c).n_star;
                let along = |n: f64| spec.surface(n, c / (6.0 * n));
                // Central difference in ln N, relative to the loss scale.
                let h = 1e-4;
                let grad = (along(n * f64::exp(h)) - along(n * f64::exp(-h))) / (2.0 * h);
                assert!(grad.abs() < 1e-9 * along(n), "{grad:e}");
            }
        }
    }

    fn small_plan() -> ExperimentPlan {
        let grid = FlopGrid::new(1.25e16, 2.0, 4).unwrap();
        plan_experiment(&grid, &canonical_model_grid(), &PlanOptions::default()).unwrap()
    }

    #[test]
    fn noiseless_runs_match_surface() {
        let spec = SynthSpec::new(1.7, 150.0, 0.3, 368.0, 0.3);
        let plan = small_plan();
        let runs = generate_runs(&spec, &plan).unwrap();
        assert_eq!(runs.len(), plan.runs.len());
        for (run, planned) in runs.iter().zip(&plan.runs) {
            let n = model_size(&run.arch, SizeScheme::Linear).unwrap();
            for &c in &planned.targets {
                let got = loss_at_flops(run, c, SizeScheme::Linear, LossSource::Validation)
                    .unwrap()
                    .unwrap();
                let want = spec.surface(n, c / (6.0 * n));
                assert!((got - want).abs() < 1e-6, "{got} vs {want}");
            }
        }
    }

    #[test]
    fn same_seed_same_records() {
        let mut spec = SynthSpec::chinchilla();
        spec.noise = Some(NoiseProfile::refined_web());
        spec.seed = 5;
        let plan = small_plan();
        let a = generate_runs(&spec, &plan).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| generate_runs(&spec, &plan).unwrap());
        assert_eq!(a, b);
        spec.seed = 6;
        let c = generate_runs(&spec, &plan).unwrap();
        assert_ne!(a[0].steps, c[0].steps);
    }

    #[test]
    fn fixed_warmup_inflates_early_loss() {
        let mut spec = SynthSpec::chinchilla();
        spec.warmup_penalty = Some(WarmupPenalty {
            style: Some(WarmupStyle::KaplanFixed),
            magnitude: 0.5,
        });
        let plan = small_plan();
        let runs = generate_runs(&spec, &plan).unwrap();
        let run = &runs[0];
        let n = model_size(&run.arch, SizeScheme::Linear).unwrap();
        let early = run.vals[0];
        assert!((early.tokens as f64) < 1.57e9);
        assert!(early.loss > spec.surface(n, early.tokens as f64));
        let late = spec.loss(n, 2e9, 1.572864e9);
        assert_eq!(late, spec.surface(n, 2e9));
    }

    #[test]
    fn invalid_spec_rejected() {
        let spec = SynthSpec::new(1.0, -1.0, 0.3, 1.0, 0.3);
        assert!(generate_runs(&spec, &small_plan()).is_err());
    }
}
