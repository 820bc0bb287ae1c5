//! Noise model and the noise-and-interpolate bootstrap that turns an IsoFLOP
//! curve into estimates of the optimal model size `N*` and minimum loss `L*`.
//!
//! Each bootstrap replicate perturbs every observed loss with independent
//! Gaussian noise of its assigned standard deviation, fits a log-log Akima
//! spline of loss against model size, and records the spline's minimiser and
//! minimum. Replicate `b` draws from ChaCha stream `b` of the caller's seed,
//! so results do not depend on the worker count.

use std::collections::BTreeMap;
use std::str::FromStr;

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::accounting::{model_size, SizeScheme};
use crate::ingest::{ScheduleKind, TrainingRun};
use crate::interp::{akima_fit, InterpError, InterpMode};
use crate::planner::ExclusionFilter;
use crate::rng::substream;
use crate::signal::{loss_at_flops, smooth_loss, LossPoint, LossSeries, LossSource, SignalError};
use crate::stats::{median, sample_std};

/// Lower bound on the log-space standard deviation of `N*`: one third of
/// the grid's log-spacing, `ln(sqrt 2) / 3`.
pub const LOG_STD_FLOOR: f64 = std::f64::consts::LN_2 / 6.0;
pub const MIN_BOOTSTRAP: usize = 100;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum EstimatorError {
    #[error("IsoFLOP curve at C={flops:e} has {count} points; need at least 3")]
    TooFewPoints { flops: f64, count: usize },
    #[error("bootstrap count {0} below minimum {MIN_BOOTSTRAP}")]
    BootstrapTooSmall(usize),
    #[error("invalid noise profile: {0}")]
    InvalidProfile(String),
    #[error("seed group {0} has fewer than 2 runs")]
    GroupTooSmall(usize),
    #[error("seed group {0} has no post-warmup token overlap")]
    NoOverlap(usize),
    #[error("invalid point in IsoFLOP curve: {0}")]
    InvalidPoint(String),
    #[error(transparent)]
    Interp(#[from] InterpError),
    #[error(transparent)]
    Signal(#[from] SignalError),
}

/// Loss-dependent noise level: constant below `loss_lo` and above `loss_hi`,
/// log-linear in loss in between.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseProfile {
    pub loss_lo: f64,
    pub sigma_lo: f64,
    pub loss_hi: f64,
    pub sigma_hi: f64,
}

impl NoiseProfile {
    pub fn new(loss_lo: f64, sigma_lo: f64, loss_hi: f64, sigma_hi: f64) -> Result<Self, EstimatorError> {
        let p = Self {
            loss_lo,
            sigma_lo,
            loss_hi,
            sigma_hi,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), EstimatorError> {
        let ok = self.loss_lo < self.loss_hi
            && self.sigma_lo > 0.0
            && self.sigma_lo <= self.sigma_hi
            && self.sigma_hi.is_finite()
            && self.loss_hi.is_finite()
            && self.loss_lo.is_finite();
        if ok {
            Ok(())
        } else {
            Err(EstimatorError::InvalidProfile(format!("{self:?}")))
        }
    }

    /// RefinedWeb: 0.002 at loss <= 3 up to 0.05 at loss >= 7.
    pub fn refined_web() -> Self {
        Self {
            loss_lo: 3.0,
            sigma_lo: 0.002,
            loss_hi: 7.0,
            sigma_hi: 0.05,
        }
    }

    /// OpenWebText2: 0.01 at loss <= 3 up to 0.1 at loss >= 6.
    pub fn open_web_text2() -> Self {
        Self {
            loss_lo: 3.0,
            sigma_lo: 0.01,
            loss_hi: 6.0,
            sigma_hi: 0.1,
        }
    }

    pub fn sigma(&self, loss: f64) -> f64 {
        noise_sigma(loss, self)
    }
}

impl FromStr for NoiseProfile {
    type Err = EstimatorError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "refinedweb" | "rw" => Ok(Self::refined_web()),
            "openwebtext2" | "owt2" => Ok(Self::open_web_text2()),
            _ => Err(EstimatorError::InvalidProfile(format!("unknown profile name {s:?}"))),
        }
    }
}

pub fn noise_sigma(loss: f64, profile: &NoiseProfile) -> f64 {
    if loss <= profile.loss_lo {
        profile.sigma_lo
    } else if loss >= profile.loss_hi {
        profile.sigma_hi
    } else {
        let t = (loss - profile.loss_lo) / (profile.loss_hi - profile.loss_lo);
        (profile.sigma_lo.ln() + t * (profile.sigma_hi.ln() - profile.sigma_lo.ln())).exp()
    }
}

/// Fits a [`NoiseProfile`] to groups of runs that differ only in seed.
///
/// Cross-seed standard deviations of the smoothed training loss at matched
/// post-warmup token counts are regressed as `ln sigma = c0 + c1 * loss`;
/// the profile endpoints are the fitted values at the observed loss
/// extremes, floored at `sigma_floor`.
pub fn calibrate_noise(
    groups: &[Vec<TrainingRun>],
    sigma_floor: f64,
) -> Result<NoiseProfile, EstimatorError> {
    let mut pairs = Vec::new();
    for (gi, group) in groups.iter().enumerate() {
        if group.len() < 2 {
            return Err(EstimatorError::GroupTooSmall(gi));
        }
        let mut by_token: BTreeMap<i64, Vec<f64>> = BTreeMap::new();
        for run in group {
            let smoothed = smooth_loss(&LossSeries::from_run(run)?, 0.05, run.log_interval)?;
            let warmup = run.schedule.warmup_tokens as f64;
            for e in smoothed.entries.iter().filter(|e| e.tokens > warmup) {
                by_token.entry(e.tokens.round() as i64).or_default().push(e.loss);
            }
        }
        let before = pairs.len();
        for losses in by_token.values().filter(|l| l.len() == group.len()) {
            pairs.push((crate::stats::mean(losses), sample_std(losses)));
        }
        if pairs.len() == before {
            return Err(EstimatorError::NoOverlap(gi));
        }
    }
    if pairs.is_empty() {
        return Err(EstimatorError::InvalidProfile("no seed groups".into()));
    }

    let lo = pairs.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let mut hi = pairs.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    if hi <= lo {
        hi = lo + 1.0;
    }
    let positive: Vec<(f64, f64)> = pairs.iter().filter(|p| p.1 > 0.0).map(|p| (p.0, p.1.ln())).collect();
    let floor = sigma_floor.max(f64::MIN_POSITIVE);
    let (mut sigma_lo, mut sigma_hi) = (floor, floor);
    if !positive.is_empty() {
        let xs: Vec<f64> = positive.iter().map(|p| p.0).collect();
        let ys: Vec<f64> = positive.iter().map(|p| p.1).collect();
        let ws = vec![1.0; xs.len()];
        match crate::stats::weighted_line(&xs, &ys, &ws) {
            Some(line) if line.slope >= 0.0 => {
                sigma_lo = (line.intercept + line.slope * lo).exp().max(floor);
                sigma_hi = (line.intercept + line.slope * hi).exp().max(floor);
            }
            _ => {
                // No usable trend: a flat profile at the geometric-mean level.
                let level = crate::stats::mean(&ys).exp().max(floor);
                sigma_lo = level;
                sigma_hi = level;
            }
        }
    }
    NoiseProfile::new(lo, sigma_lo, hi, sigma_hi)
}

/// Observations of loss against model size at one compute budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsoFlopCurve {
    pub flops: f64,
    /// Sorted by strictly increasing `n`.
    pub points: Vec<LossPoint>,
}

impl IsoFlopCurve {
    /// Sorts the points and checks the curve invariants. Zero `sigma` is
    /// allowed and makes every bootstrap replicate identical.
    pub fn new(flops: f64, mut points: Vec<LossPoint>) -> Result<Self, EstimatorError> {
        points.sort_by(|a, b| a.n.total_cmp(&b.n));
        for w in points.windows(2) {
            if w[0].n == w[1].n {
                return Err(EstimatorError::InvalidPoint(format!("duplicate model size {}", w[0].n)));
            }
        }
        for p in &points {
            if !(p.n > 0.0 && p.loss > 0.0 && p.loss.is_finite() && p.sigma >= 0.0 && p.sigma.is_finite()) {
                return Err(EstimatorError::InvalidPoint(format!("{p:?}")));
            }
        }
        Ok(Self { flops, points })
    }

    /// Builds a curve from `(n, loss)` pairs with sigma taken from `profile`.
    pub fn from_losses(flops: f64, data: &[(f64, f64)], profile: &NoiseProfile) -> Result<Self, EstimatorError> {
        let points = data
            .iter()
            .map(|&(n, loss)| LossPoint {
                n,
                flops,
                loss,
                sigma: profile.sigma(loss),
            })
            .collect();
        Self::new(flops, points)
    }

    pub fn sizes(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.n).collect()
    }
}

/// Optimal-size estimate at one budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NStarEstimate {
    pub flops: f64,
    /// Median of the kept bootstrap minimisers.
    pub n_star: f64,
    pub log_std: f64,
    /// Kept (non-edge) bootstrap minimisers in replicate order.
    pub samples: Vec<f64>,
    pub omitted_fraction: f64,
    pub loss_star: f64,
    pub valid: bool,
}

/// Minimum-loss estimate at one budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossStarEstimate {
    pub flops: f64,
    pub loss_star: f64,
    pub std: f64,
    pub samples: Vec<f64>,
    pub valid: bool,
}

struct Replicate {
    argmin: f64,
    minimum: f64,
    at_edge: bool,
}

fn run_bootstrap(curve: &IsoFlopCurve, bootstrap: usize, seed: u64) -> Result<Vec<Replicate>, EstimatorError> {
    if curve.points.len() < 3 {
        return Err(EstimatorError::TooFewPoints {
            flops: curve.flops,
            count: curve.points.len(),
        });
    }
    if bootstrap < MIN_BOOTSTRAP {
        return Err(EstimatorError::BootstrapTooSmall(bootstrap));
    }
    let ln_n: Vec<f64> = curve.points.iter().map(|p| p.n.ln()).collect();
    let k = ln_n.len();
    let left_edge = ln_n[0] + 0.5 * (ln_n[1] - ln_n[0]);
    let right_edge = ln_n[k - 1] - 0.5 * (ln_n[k - 1] - ln_n[k - 2]);

    (0..bootstrap)
        .into_par_iter()
        .map(|b| {
            let mut rng = substream(seed, b as u64);
            let noisy: Vec<(f64, f64)> = curve
                .points
                .iter()
                .map(|p| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    (p.n, (p.loss + p.sigma * z).max(1e-12))
                })
                .collect();
            let spline = akima_fit(&noisy, InterpMode::LogXLogY)?;
            let m = spline.minimize();
            let u = m.x.ln();
            Ok(Replicate {
                argmin: m.x,
                minimum: m.value,
                at_edge: u <= left_edge || u >= right_edge,
            })
        })
        .collect()
}

fn summarize(curve: &IsoFlopCurve, reps: &[Replicate]) -> (NStarEstimate, LossStarEstimate) {
    let total = reps.len();
    let kept: Vec<&Replicate> = reps.iter().filter(|r| !r.at_edge).collect();
    let omitted_fraction = (total - kept.len()) as f64 / total as f64;
    let valid = omitted_fraction <= 0.5;
    // With every replicate at the edge there is nothing to keep; report the
    // full population so the (invalid) estimate still lies on the grid.
    let pool: Vec<&Replicate> = if kept.is_empty() { reps.iter().collect() } else { kept };

    let argmins: Vec<f64> = pool.iter().map(|r| r.argmin).collect();
    let minima: Vec<f64> = pool.iter().map(|r| r.minimum).collect();
    let ln_argmins: Vec<f64> = argmins.iter().map(|x| x.ln()).collect();
    let spread = sample_std(&ln_argmins).max(LOG_STD_FLOOR);
    let inflation = if omitted_fraction < 1.0 { 1.0 / (1.0 - omitted_fraction) } else { 1.0 };
    let loss_star = median(&minima);

    let nstar = NStarEstimate {
        flops: curve.flops,
        n_star: median(&argmins),
        log_std: spread * inflation,
        samples: argmins,
        omitted_fraction,
        loss_star,
        valid,
    };
    let lstar = LossStarEstimate {
        flops: curve.flops,
        loss_star,
        std: sample_std(&minima),
        samples: minima,
        valid,
    };
    (nstar, lstar)
}

/// Bootstrap estimates of both `N*` and `L*` from one set of replicates.
pub fn estimate_curve(
    curve: &IsoFlopCurve,
    bootstrap: usize,
    seed: u64,
) -> Result<(NStarEstimate, LossStarEstimate), EstimatorError> {
    let reps = run_bootstrap(curve, bootstrap, seed)?;
    Ok(summarize(curve, &reps))
}

/// Bootstrap estimate of the compute-optimal model size on `curve`.
pub fn estimate_nstar(curve: &IsoFlopCurve, bootstrap: usize, seed: u64) -> Result<NStarEstimate, EstimatorError> {
    estimate_curve(curve, bootstrap, seed).map(|(n, _)| n)
}

/// Bootstrap estimate of the minimum loss on `curve`.
pub fn min_loss_at(curve: &IsoFlopCurve, bootstrap: usize, seed: u64) -> Result<LossStarEstimate, EstimatorError> {
    estimate_curve(curve, bootstrap, seed).map(|(_, l)| l)
}

/// Options for extracting IsoFLOP curves from runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveOptions {
    pub scheme: SizeScheme,
    pub source: LossSource,
    pub profile: NoiseProfile,
    #[serde(default)]
    pub exclusion: Option<ExclusionFilter>,
}

impl Default for CurveOptions {
    fn default() -> Self {
        Self {
            scheme: SizeScheme::Linear,
            source: LossSource::Validation,
            profile: NoiseProfile::refined_web(),
            exclusion: None,
        }
    }
}

/// Extracts one IsoFLOP curve per budget from a set of runs.
///
/// Constant-schedule runs contribute to every budget they reach. A cosine
/// run contributes only to the budget its decay was planned for (within
/// 10% in tokens), unless it stopped long before its decay end. Budgets with fewer than three points are skipped;
/// repeated model sizes are averaged.
pub fn build_isoflop_curves(
    runs: &[TrainingRun],
    budgets: &[f64],
    opts: &CurveOptions,
) -> Result<Vec<IsoFlopCurve>, EstimatorError> {
    let mut curves = Vec::new();
    for &flops in budgets {
        let mut by_size: BTreeMap<u64, (f64, Vec<f64>)> = BTreeMap::new();
        for run in runs {
            let n = model_size(&run.arch, opts.scheme).map_err(SignalError::from)?;
            let tokens = flops / (6.0 * n);
            if run.schedule.kind == ScheduleKind::Cosine {
                let end = run.schedule.decay_end_tokens.unwrap_or(0) as f64;
                // A run stopped well before its decay horizon barely decayed
                // and is read at every budget, like a constant schedule.
                let stopped_early = end > 1.1 * run.total_tokens() as f64;
                if !stopped_early && (tokens - end).abs() > 0.1 * end {
                    continue;
                }
            }
            if let Some(ex) = &opts.exclusion {
                if ex.max_rho.is_some_and(|r| tokens / n > r) {
                    continue;
                }
            }
            if let Some(loss) = loss_at_flops(run, flops, opts.scheme, opts.source)? {
                by_size.entry(n.to_bits()).or_insert((n, Vec::new())).1.push(loss);
            }
        }
        let mut data: Vec<(f64, f64)> = by_size
            .into_values()
            .map(|(n, losses)| (n, crate::stats::mean(&losses)))
            .collect();
        if let Some(max_excess) = opts.exclusion.and_then(|e| e.max_excess_loss) {
            let best = data.iter().map(|d| d.1).fold(f64::INFINITY, f64::min);
            data.retain(|d| d.1 <= best + max_excess);
        }
        if data.len() < 3 {
            log::debug!("skipping C={flops:e}: only {} points", data.len());
            continue;
        }
        curves.push(IsoFlopCurve::from_losses(flops, &data, &opts.profile)?);
    }
    Ok(curves)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bowl(vertex: f64, sigma: f64, sizes: &[f64], f: impl Fn(f64) -> f64) -> IsoFlopCurve {
        let points = sizes
            .iter()
            .map(|&n| LossPoint {
                n,
                flops: 1e18,
                loss: f((n / vertex).ln()),
                sigma,
            })
            .collect();
        IsoFlopCurve::new(1e18, points).unwrap()
    }

    fn sqrt2_grid(center: f64) -> Vec<f64> {
        (-3..=3).map(|i| center * 2f64.powf(0.5 * i as f64)).collect()
    }

    #[test]
    fn profile_examples() {
        let rw = NoiseProfile::refined_web();
        assert_eq!(rw.sigma(8.0), 0.05);
        assert_eq!(rw.sigma(2.5), 0.002);
        assert!((rw.sigma(5.0) - 0.01).abs() < 1e-12);
        let owt = NoiseProfile::open_web_text2();
        assert!((owt.sigma(4.5) - (0.01f64 * 0.1).sqrt()).abs() < 1e-12);
        assert!((owt.sigma(4.5) - 0.0316).abs() < 1e-4);
    }

    #[test]
    fn noiseless_vertex_at_knot() {
        let curve = bowl(2e7, 0.0, &sqrt2_grid(2e7), |u| 3.0 + 0.1 * u * u);
        let est = estimate_nstar(&curve, 200, 1).unwrap();
        assert_eq!(est.n_star, 2e7);
        assert_eq!(est.log_std, LOG_STD_FLOOR);
        assert!((LOG_STD_FLOOR - 0.11552).abs() < 1e-5);
        assert!(est.valid);
        let l = min_loss_at(&curve, 200, 1).unwrap();
        assert_eq!(l.loss_star, 3.0);
    }

    #[test]
    fn noiseless_loss_star_at_knot() {
        let curve = bowl(2e7, 0.0, &sqrt2_grid(2e7), |u| 3.5 + 0.05 * u * u);
        assert_eq!(min_loss_at(&curve, 100, 0).unwrap().loss_star, 3.5);
    }

    #[test]
    fn monotone_curve_is_invalid() {
        let curve = bowl(1e7, 0.001, &sqrt2_grid(1e8), |u| 3.0 - 0.1 * u);
        let est = estimate_nstar(&curve, 100, 3).unwrap();
        assert!(!est.valid);
        assert_eq!(est.omitted_fraction, 1.0);
        let l = min_loss_at(&curve, 100, 3).unwrap();
        assert!(!l.valid);
    }

    #[test]
    fn deterministic_across_pools() {
        let curve = bowl(3e7, 0.01, &sqrt2_grid(2.5e7), |u| 3.0 + 0.08 * u * u);
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let a = one.install(|| estimate_nstar(&curve, 300, 42).unwrap());
        let b = four.install(|| estimate_nstar(&curve, 300, 42).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn scale_and_shift_invariance() {
        let sizes = sqrt2_grid(2.5e7);
        let base = bowl(3e7, 0.01, &sizes, |u| 3.0 + 0.08 * u * u);
        let est = estimate_nstar(&base, 200, 9).unwrap();

        let mut scaled = base.clone();
        scaled.points.iter_mut().for_each(|p| p.n *= 7.0);
        let es = estimate_nstar(&scaled, 200, 9).unwrap();
        // Golden-section search on a flat minimum resolves ln N to about sqrt(eps).
        assert!((es.n_star / (7.0 * est.n_star) - 1.0).abs() < 1e-7);
        assert!((es.log_std - est.log_std).abs() < 1e-7);
    }

    #[test]
    fn errors() {
        let curve = bowl(1e7, 0.01, &[1e7, 2e7], |u| 3.0 + u * u);
        assert!(matches!(
            estimate_nstar(&curve, 100, 0),
            Err(EstimatorError::TooFewPoints { count: 2, .. })
        ));
        let curve = bowl(1e7, 0.01, &sqrt2_grid(1e7), |u| 3.0 + u * u);
        assert_eq!(estimate_nstar(&curve, 10, 0), Err(EstimatorError::BootstrapTooSmall(10)));
    }
}
