//! IsoFLOP experiment planning: FLOP grids, per-budget model selection,
//! warmup and schedule rules, compute-cost accounting and the
//! accuracy-versus-compute truncation study.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::accounting::{canonical_model_grid, model_size, AccountingError, SizeScheme};
use crate::estimator::{estimate_nstar, IsoFlopCurve};
use crate::ingest::{HyperParams, ModelArch, Schedule, ScheduleKind};
use crate::lawfit::{bootstrap_fits, fit_power_law, FitError, PowerLawFit};
use crate::rng::derive_seed;

/// Fixed warmup of `3000 * 2^19` tokens.
pub const KAPLAN_WARMUP_TOKENS: u64 = 3000 * (1 << 19);
/// Cosine decay horizon of `2.5e5 * 2^19` tokens used with the fixed warmup.
pub const KAPLAN_DECAY_TOKENS: u64 = 250_000 * (1 << 19);

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum PlanError {
    #[error("invalid FLOP grid: {0}")]
    InvalidGrid(String),
    #[error("no model has a token-to-parameter ratio in [{lo}, {hi}] at C={flops:e}")]
    NoQualifyingModels { flops: f64, lo: f64, hi: f64 },
    #[error("cosine-capped warmup requires a token budget")]
    MissingBudget,
    #[error("invalid plan: {0}")]
    InvalidPlan(String),
    #[error("unknown plan style {0:?}")]
    UnknownStyle(String),
    #[error("need at least 3 IsoFLOP curves, got {0}")]
    TooFewCurves(usize),
    #[error(transparent)]
    Accounting(#[from] AccountingError),
    #[error(transparent)]
    Fit(#[from] FitError),
}

/// Budgets `base * factor^k` for `k = 0..count`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlopGrid {
    pub base: f64,
    pub factor: f64,
    pub count: usize,
}

impl Default for FlopGrid {
    fn default() -> Self {
        Self {
            base: 1.25e16,
            factor: 2.0,
            count: 12,
        }
    }
}

impl FlopGrid {
    pub fn new(base: f64, factor: f64, count: usize) -> Result<Self, PlanError> {
        let g = Self { base, factor, count };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<(), PlanError> {
        if !(self.base > 0.0 && self.base.is_finite()) {
            return Err(PlanError::InvalidGrid(format!("base must be positive, got {}", self.base)));
        }
        if !(self.factor > 1.0 && self.factor.is_finite()) {
            return Err(PlanError::InvalidGrid(format!("factor must exceed 1, got {}", self.factor)));
        }
        if self.count == 0 {
            return Err(PlanError::InvalidGrid("count must be positive".into()));
        }
        Ok(())
    }

    /// `C_k = base * factor^k`, each computed directly rather than by
    /// repeated multiplication.
    pub fn value(&self, k: usize) -> f64 {
        self.base * self.factor.powi(k as i32)
    }

    pub fn values(&self) -> Vec<f64> {
        (0..self.count).map(|k| self.value(k)).collect()
    }
}

impl FromStr for FlopGrid {
    type Err = PlanError;

    /// Parses `base,factor,count`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        let bad = || PlanError::InvalidGrid(format!("expected base,factor,count, got {s:?}"));
        if parts.len() != 3 {
            return Err(bad());
        }
        let base = parts[0].parse().map_err(|_| bad())?;
        let factor = parts[1].parse().map_err(|_| bad())?;
        let count = parts[2].parse().map_err(|_| bad())?;
        Self::new(base, factor, count)
    }
}

impl fmt::Display for FlopGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:e},{},{}", self.base, self.factor, self.count)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleStyle {
    /// One run per model; every budget it crosses is read off the same run.
    ConstantReuse,
    /// A separate decaying run for every (model, budget) pair.
    CosinePerBudget,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WarmupStyle {
    /// Warmup tokens equal to the model size.
    MatchModelSize,
    /// `3000 * 2^19` tokens regardless of model size.
    KaplanFixed,
    /// The smaller of the model size and 20% of the token budget.
    CosineCapped,
}

/// Warmup length in tokens.
pub fn warmup_tokens(n: f64, style: WarmupStyle, budget_tokens: Option<f64>) -> Result<u64, PlanError> {
    let tokens = match style {
        WarmupStyle::MatchModelSize => n,
        WarmupStyle::KaplanFixed => return Ok(KAPLAN_WARMUP_TOKENS),
        WarmupStyle::CosineCapped => n.min(0.2 * budget_tokens.ok_or(PlanError::MissingBudget)?),
    };
    Ok(tokens.round() as u64)
}

/// Learning-rate multiplier after `tokens_seen` tokens: a linear ramp over
/// warmup, then constant or cosine decay to `final_lr_fraction`.
pub fn cosine_lr(schedule: &Schedule, tokens_seen: f64) -> f64 {
    let warmup = schedule.warmup_tokens as f64;
    if tokens_seen < warmup {
        return (tokens_seen / warmup).max(0.0);
    }
    match schedule.kind {
        ScheduleKind::Constant => 1.0,
        ScheduleKind::Cosine => {
            let f = schedule.final_lr_fraction.unwrap_or(0.0);
            let end = schedule.decay_end_tokens.map_or(warmup, |e| e as f64);
            let t = if end > warmup {
                ((tokens_seen - warmup) / (end - warmup)).clamp(0.0, 1.0)
            } else {
                1.0
            };
            f + (1.0 - f) * 0.5 * (1.0 + (PI * t).cos())
        }
    }
}

/// Token-to-parameter ratio `C / (6 N^2)`.
pub fn token_ratio(flops: f64, n: f64) -> f64 {
    flops / (6.0 * n * n)
}

/// Picks up to `count` models whose ratio at `flops` lies in `rho_range`,
/// preferring those closest in `ln rho` to the range's geometric centre.
/// Returned in the input order.
pub fn select_isoflop_models(
    flops: f64,
    grid_models: &[ModelArch],
    scheme: SizeScheme,
    rho_range: (f64, f64),
    count: usize,
) -> Result<Vec<ModelArch>, PlanError> {
    if grid_models.is_empty() {
        return Err(PlanError::InvalidPlan("empty model grid".into()));
    }
    let (lo, hi) = rho_range;
    let centre = 0.5 * (lo.ln() + hi.ln());
    let mut qualifying = Vec::new();
    for (i, arch) in grid_models.iter().enumerate() {
        let rho = token_ratio(flops, model_size(arch, scheme)?);
        if rho >= lo && rho <= hi {
            qualifying.push((i, (rho.ln() - centre).abs()));
        }
    }
    if qualifying.is_empty() {
        return Err(PlanError::NoQualifyingModels { flops, lo, hi });
    }
    qualifying.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    qualifying.truncate(count);
    qualifying.sort_by_key(|q| q.0);
    Ok(qualifying.into_iter().map(|(i, _)| grid_models[i]).collect())
}

/// Run-exclusion heuristic applied when building IsoFLOP curves: skip runs
/// with more than `max_rho` tokens per parameter or whose loss exceeds the
/// budget's best by more than `max_excess_loss` nats.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExclusionFilter {
    pub max_rho: Option<f64>,
    pub max_excess_loss: Option<f64>,
}

impl ExclusionFilter {
    pub fn standard() -> Self {
        Self {
            max_rho: Some(100.0),
            max_excess_loss: Some(1.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannedRun {
    pub run_id: String,
    pub arch: ModelArch,
    pub hparams: HyperParams,
    pub schedule: Schedule,
    /// Budgets this run is evaluated at, increasing.
    pub targets: Vec<f64>,
}

impl PlannedRun {
    pub fn max_target(&self) -> f64 {
        self.targets.iter().copied().fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub grid: FlopGrid,
    pub scheme: SizeScheme,
    pub schedule_style: ScheduleStyle,
    pub warmup: WarmupStyle,
    pub runs: Vec<PlannedRun>,
    #[serde(default)]
    pub exclusion: Option<ExclusionFilter>,
}

impl ExperimentPlan {
    pub fn validate(&self) -> Result<(), PlanError> {
        self.grid.validate()?;
        for run in &self.runs {
            if run.targets.is_empty() {
                return Err(PlanError::InvalidPlan(format!("run {} has no target budget", run.run_id)));
            }
            if self.schedule_style == ScheduleStyle::CosinePerBudget && run.targets.len() != 1 {
                return Err(PlanError::InvalidPlan(format!(
                    "cosine run {} must have exactly one target",
                    run.run_id
                )));
            }
            if run.targets.iter().any(|c| !(*c > 0.0)) {
                return Err(PlanError::InvalidPlan(format!("run {} has a non-positive target", run.run_id)));
            }
        }
        Ok(())
    }

    /// Number of runs evaluated at each grid budget.
    pub fn models_per_budget(&self) -> Vec<usize> {
        self.grid
            .values()
            .iter()
            .map(|c| self.runs.iter().filter(|r| r.targets.iter().any(|t| same_budget(*t, *c))).count())
            .collect()
    }
}

fn same_budget(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs())
}

/// Total training FLOPs. Cosine plans pay for every (run, target) pair;
/// constant plans pay once per run, for its largest target.
pub fn experiment_cost(plan: &ExperimentPlan) -> f64 {
    match plan.schedule_style {
        ScheduleStyle::CosinePerBudget => plan.runs.iter().flat_map(|r| r.targets.iter()).sum(),
        ScheduleStyle::ConstantReuse => plan.runs.iter().map(PlannedRun::max_target).sum(),
    }
}

/// Cost of a design given how many runs end at each grid budget:
/// `sum_k m_k C_k`. With a cosine schedule every (model, budget) pair is its
/// own run; with constant reuse `m_k` counts the models whose longest
/// target is `C_k`.
pub fn design_cost(grid: &FlopGrid, runs_ending_at: &[usize]) -> Result<f64, PlanError> {
    grid.validate()?;
    if runs_ending_at.len() != grid.count {
        return Err(PlanError::InvalidPlan(format!(
            "{} run counts for a grid of {} budgets",
            runs_ending_at.len(),
            grid.count
        )));
    }
    Ok(runs_ending_at.iter().enumerate().map(|(k, &m)| m as f64 * grid.value(k)).sum())
}

/// Hyperparameter assignment for planned runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HParamPolicy {
    Fixed(HyperParams),
    /// Per-size values from [`TUNED_HPARAMS`], nearest row in `ln N`.
    Tuned,
}

/// Baseline hyperparameters: batch 256 sequences, learning rate 3e-3, beta2 0.95.
pub fn fixed_hparams() -> HyperParams {
    HyperParams {
        learning_rate: 3e-3,
        batch_size_seqs: 256,
        beta2: 0.95,
        seed: 0,
    }
}

/// Tuned per-size settings: (N in millions, learning rate, batch size, beta2).
/// Rows 28, 37 and 57 carry the learning rates that were actually run.
pub const TUNED_HPARAMS: [(f64, f64, u64, f64); 16] = [
    (5.0, 0.013, 20, 0.99),
    (7.0, 0.011, 28, 0.99),
    (9.0, 0.011, 32, 0.99),
    (15.0, 0.009, 44, 0.99),
    (22.0, 0.008, 56, 0.99),
    (28.0, 0.0051, 64, 0.99),
    (37.0, 0.0051, 80, 0.99),
    (57.0, 0.0047, 104, 0.99),
    (84.0, 0.0051, 128, 0.99),
    (108.0, 0.0047, 160, 0.99),
    (149.0, 0.0043, 192, 0.99),
    (220.0, 0.0038, 256, 0.95),
    (347.0, 0.0032, 320, 0.95),
    (455.0, 0.003, 448, 0.95),
    (611.0, 0.0027, 512, 0.95),
    (901.0, 0.0024, 640, 0.95),
];

pub fn tuned_hparams(n: f64) -> HyperParams {
    let row = TUNED_HPARAMS
        .iter()
        .min_by(|a, b| {
            let da = (a.0 * 1e6 / n).ln().abs();
            let db = (b.0 * 1e6 / n).ln().abs();
            da.total_cmp(&db)
        })
        .expect("table is non-empty");
    HyperParams {
        learning_rate: row.1,
        batch_size_seqs: row.2,
        beta2: row.3,
        seed: 0,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanOptions {
    pub scheme: SizeScheme,
    pub schedule_style: ScheduleStyle,
    pub warmup: WarmupStyle,
    pub hparams: HParamPolicy,
    /// Cosine horizon for constant-reuse runs; `None` means a constant schedule.
    pub long_decay_tokens: Option<u64>,
    pub rho_range: (f64, f64),
    pub models_per_budget: usize,
    pub final_lr_fraction: f64,
    pub exclusion: Option<ExclusionFilter>,
}

impl Default for PlanOptions {
    fn default() -> Self {
        Self {
            scheme: SizeScheme::Linear,
            schedule_style: ScheduleStyle::ConstantReuse,
            warmup: WarmupStyle::MatchModelSize,
            hparams: HParamPolicy::Fixed(fixed_hparams()),
            long_decay_tokens: None,
            rho_range: (1.0, 100.0),
            models_per_budget: 7,
            final_lr_fraction: 0.01,
            exclusion: None,
        }
    }
}

/// Builds a plan selecting models per budget from `models`. Budgets where
/// no model qualifies are skipped.
pub fn plan_experiment(grid: &FlopGrid, models: &[ModelArch], opts: &PlanOptions) -> Result<ExperimentPlan, PlanError> {
    grid.validate()?;
    let budgets = grid.values();
    let mut per_model: Vec<Vec<f64>> = vec![Vec::new(); models.len()];
    for &c in &budgets {
        let chosen = match select_isoflop_models(c, models, opts.scheme, opts.rho_range, opts.models_per_budget) {
            Ok(chosen) => chosen,
            Err(PlanError::NoQualifyingModels { .. }) => continue,
            Err(e) => return Err(e),
        };
        for arch in chosen {
            let i = models.iter().position(|m| *m == arch).expect("selected from grid");
            per_model[i].push(c);
        }
    }

    let mut runs = Vec::new();
    for (i, (arch, targets)) in models.iter().zip(per_model).enumerate() {
        if targets.is_empty() {
            continue;
        }
        let n = model_size(arch, opts.scheme)?;
        let hparams = match &opts.hparams {
            HParamPolicy::Fixed(h) => *h,
            HParamPolicy::Tuned => tuned_hparams(model_size(arch, SizeScheme::Linear)?),
        };
        let groups: Vec<Vec<f64>> = match opts.schedule_style {
            ScheduleStyle::ConstantReuse => vec![targets],
            ScheduleStyle::CosinePerBudget => targets.into_iter().map(|c| vec![c]).collect(),
        };
        for group in groups {
            let max_c = group.iter().copied().fold(0.0, f64::max);
            let budget_tokens = max_c / (6.0 * n);
            let warmup = warmup_tokens(n, opts.warmup, Some(budget_tokens))?;
            let schedule = match opts.schedule_style {
                ScheduleStyle::CosinePerBudget => Schedule {
                    kind: ScheduleKind::Cosine,
                    warmup_tokens: warmup,
                    decay_end_tokens: Some(budget_tokens.round() as u64),
                    final_lr_fraction: Some(opts.final_lr_fraction),
                },
                ScheduleStyle::ConstantReuse => match opts.long_decay_tokens {
                    Some(end) => Schedule {
                        kind: ScheduleKind::Cosine,
                        warmup_tokens: warmup,
                        decay_end_tokens: Some(end),
                        final_lr_fraction: Some(0.0),
                    },
                    None => Schedule {
                        kind: ScheduleKind::Constant,
                        warmup_tokens: warmup,
                        decay_end_tokens: None,
                        final_lr_fraction: None,
                    },
                },
            };
            let run_id = match opts.schedule_style {
                ScheduleStyle::ConstantReuse => format!("m{:02}_l{}_d{}", i, arch.depth, arch.width),
                ScheduleStyle::CosinePerBudget => {
                    format!("m{:02}_l{}_d{}_c{:.3e}", i, arch.depth, arch.width, max_c)
                }
            };
            runs.push(PlannedRun {
                run_id,
                arch: *arch,
                hparams,
                schedule,
                targets: group,
            });
        }
    }
    let plan = ExperimentPlan {
        grid: *grid,
        scheme: opts.scheme,
        schedule_style: opts.schedule_style,
        warmup: opts.warmup,
        runs,
        exclusion: opts.exclusion,
    };
    plan.validate()?;
    Ok(plan)
}

/// The five configurations moving from the fixed-warmup, head-excluded
/// setup to per-size tuned hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PlanStyle {
    Kaplan,
    HeadCounted,
    WarmupFixed,
    Cosine,
    TunedConstant,
}

impl PlanStyle {
    pub const ALL: [PlanStyle; 5] = [
        Self::Kaplan,
        Self::HeadCounted,
        Self::WarmupFixed,
        Self::Cosine,
        Self::TunedConstant,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Kaplan => "kaplan",
            Self::HeadCounted => "head-counted",
            Self::WarmupFixed => "warmup-fixed",
            Self::Cosine => "cosine",
            Self::TunedConstant => "tuned-constant",
        }
    }

    pub fn options(self) -> PlanOptions {
        let base = PlanOptions {
            exclusion: Some(ExclusionFilter::standard()),
            ..PlanOptions::default()
        };
        match self {
            Self::Kaplan => PlanOptions {
                scheme: SizeScheme::KaplanNoHead,
                warmup: WarmupStyle::KaplanFixed,
                long_decay_tokens: Some(KAPLAN_DECAY_TOKENS),
                ..base
            },
            Self::HeadCounted => PlanOptions {
                warmup: WarmupStyle::KaplanFixed,
                long_decay_tokens: Some(KAPLAN_DECAY_TOKENS),
                ..base
            },
            Self::WarmupFixed => PlanOptions {
                long_decay_tokens: Some(KAPLAN_DECAY_TOKENS),
                ..base
            },
            Self::Cosine => PlanOptions {
                schedule_style: ScheduleStyle::CosinePerBudget,
                warmup: WarmupStyle::CosineCapped,
                ..base
            },
            Self::TunedConstant => PlanOptions {
                hparams: HParamPolicy::Tuned,
                ..base
            },
        }
    }
}

impl FromStr for PlanStyle {
    type Err = PlanError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|p| p.as_str() == s.to_ascii_lowercase())
            .ok_or_else(|| PlanError::UnknownStyle(s.to_string()))
    }
}

impl fmt::Display for PlanStyle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A plan for one of the [`PlanStyle`] configurations on the canonical grid.
pub fn style_plan(style: PlanStyle, grid: &FlopGrid) -> Result<ExperimentPlan, PlanError> {
    plan_experiment(grid, &canonical_model_grid(), &style.options())
}

/// One truncation point of the accuracy-versus-compute study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyPoint {
    /// Largest budget kept.
    pub max_flops: f64,
    pub budgets: usize,
    /// Cost of the truncated experiment with one run per model.
    pub cost_constant: f64,
    /// Cost with a separate run per (model, budget).
    pub cost_cosine: f64,
    pub exponent: f64,
    pub ci_exponent: Option<(f64, f64)>,
    pub ci_width: f64,
    /// RMS relative error of `N*(C)` against the reference over all budgets.
    pub rms_rel_err: f64,
}

/// Refits the law on growing prefixes of the budget-sorted curves and
/// compares each fit with `reference` across every curve's budget.
///
/// Curve `i` is bootstrapped with `derive_seed(seed, i)`, as in
/// [`crate::lawfit::fit_power_law_ci`], so the full prefix reproduces that
/// fit exactly.
pub fn accuracy_vs_compute(
    curves: &[IsoFlopCurve],
    reference: &PowerLawFit,
    bootstrap: usize,
    seed: u64,
) -> Result<Vec<AccuracyPoint>, PlanError> {
    if curves.len() < 3 {
        return Err(PlanError::TooFewCurves(curves.len()));
    }
    let mut order: Vec<usize> = (0..curves.len()).collect();
    order.sort_by(|&a, &b| curves[a].flops.total_cmp(&curves[b].flops));
    let estimates = curves
        .iter()
        .enumerate()
        .map(|(i, c)| estimate_nstar(c, bootstrap, derive_seed(seed, i as u64)))
        .collect::<Result<Vec<_>, _>>()
        .map_err(FitError::from)?;

    let mut out = Vec::new();
    for k in 2..=curves.len() {
        let idx = &order[..k];
        let mut subset: Vec<_> = idx.iter().map(|&i| estimates[i].clone()).collect();
        subset.sort_by(|a, b| a.flops.total_cmp(&b.flops));
        let fit = match fit_power_law(&subset) {
            Ok(f) => f.with_bootstrap(bootstrap_fits(&subset, bootstrap)),
            Err(e) => {
                log::debug!("skipping truncation at {k} budgets: {e}");
                continue;
            }
        };
        let sq: f64 = curves
            .iter()
            .map(|c| {
                let e = fit.predict(c.flops) / reference.predict(c.flops) - 1.0;
                e * e
            })
            .sum();
        let (cost_constant, cost_cosine) = truncated_cost(idx.iter().map(|&i| &curves[i]));
        let ci_width = fit.ci_exponent.map_or(f64::INFINITY, |(lo, hi)| hi - lo);
        out.push(AccuracyPoint {
            max_flops: curves[idx[k - 1]].flops,
            budgets: k,
            cost_constant,
            cost_cosine,
            exponent: fit.exponent,
            ci_exponent: fit.ci_exponent,
            ci_width,
            rms_rel_err: (sq / curves.len() as f64).sqrt(),
        });
    }
    Ok(out)
}

fn truncated_cost<'a>(curves: impl Iterator<Item = &'a IsoFlopCurve>) -> (f64, f64) {
    let mut cosine = 0.0;
    let mut longest: std::collections::BTreeMap<u64, f64> = std::collections::BTreeMap::new();
    for c in curves {
        cosine += c.flops * c.points.len() as f64;
        for p in &c.points {
            let e = longest.entry(p.n.to_bits()).or_insert(0.0);
            *e = e.max(c.flops);
        }
    }
    (longest.values().sum(), cosine)
}
