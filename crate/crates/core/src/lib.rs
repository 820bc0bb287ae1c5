//! Compute-optimal scaling-law analysis.
//!
//! The crate turns raw training-run logs into IsoFLOP curves, estimates the
//! compute-optimal model size `N*(C)` at every budget with a
//! noise-and-interpolate bootstrap, and fits power laws `N*(C) = N0 * C^a`
//! with quantile confidence intervals. Around that core sit FLOP accounting
//! under several model-size conventions, hyperparameter scaling-law fitting,
//! saturating optimal-loss fits, experiment planning and cost accounting, and
//! a synthetic loss-surface generator with closed-form optima that the test
//! suites use as ground truth.

pub mod accounting;
pub mod estimator;
pub mod hparam;
pub mod ingest;
pub mod interp;
pub mod lawfit;
pub mod pipeline;
pub mod planner;
pub mod rng;
pub mod signal;
pub mod stats;
pub mod synth;

pub use accounting::{
    canonical_model_grid, ffn_dim, model_size, tokens_for_budget, train_flops, ComputeBudget,
    SizeScheme,
};
pub use estimator::{
    build_isoflop_curves, calibrate_noise, estimate_nstar, min_loss_at, CurveOptions,
    IsoFlopCurve, LossStarEstimate, NStarEstimate, NoiseProfile,
};
pub use hparam::{
    fit_hparam_laws, ideal_tuning_adjust, optimal_hparams, optimal_lr_per_batch, round_hparams,
    select_beta2, HParamLaws, HParamOptimum, SweepPoint,
};
pub use ingest::{
    load_run, load_sweep, write_run, HyperParams, ModelArch, Schedule, ScheduleKind, StepRecord,
    TrainingRun, ValRecord,
};
pub use interp::{akima_fit, minimize_interpolant, Interpolant, InterpMode, Minimum};
pub use lawfit::{
    derive_ratio_law, derive_token_law, fit_power_law, fit_power_law_ci, fit_saturating, parametric_samples,
    PowerLaw, PowerLawFit, SaturatingFit, CHINCHILLA_FLOPS,
};
pub use planner::{
    accuracy_vs_compute, cosine_lr, design_cost, experiment_cost, select_isoflop_models, warmup_tokens,
    ExperimentPlan, FlopGrid, ScheduleStyle, WarmupStyle,
};
pub use signal::{loss_at_flops, smooth_loss, LossPoint, LossSeries, LossSource};
pub use synth::{analytic_optimum, generate_runs, SynthSpec};

/// Crate-wide error, one variant per analysis stage.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Ingest(#[from] ingest::IngestError),
    #[error(transparent)]
    Accounting(#[from] accounting::AccountingError),
    #[error(transparent)]
    Signal(#[from] signal::SignalError),
    #[error(transparent)]
    Interp(#[from] interp::InterpError),
    #[error(transparent)]
    Estimator(#[from] estimator::EstimatorError),
    #[error(transparent)]
    Fit(#[from] lawfit::FitError),
    #[error(transparent)]
    HParam(#[from] hparam::HParamError),
    #[error(transparent)]
    Planner(#[from] planner::PlanError),
    #[error(transparent)]
    Synth(#[from] synth::SynthError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
