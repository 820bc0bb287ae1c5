//! End-to-end analysis: runs (loaded or synthesised) to IsoFLOP curves,
//! per-budget estimates, the fitted law and optionally the saturating
//! optimal-loss fit.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::accounting::SizeScheme;
use crate::estimator::{
    build_isoflop_curves, estimate_curve, CurveOptions, IsoFlopCurve, LossStarEstimate, NStarEstimate,
    NoiseProfile,
};
use crate::ingest::{load_sweep, TrainingRun};
use crate::lawfit::{
    bootstrap_fits, derive_ratio_law, derive_token_law, fit_power_law, fit_saturating, format_with_ci, PowerLaw,
    PowerLawFit, SaturatingFit, CHINCHILLA_FLOPS,
};
use crate::planner::{style_plan, ExclusionFilter, ExperimentPlan, FlopGrid, PlanStyle};
use crate::rng::derive_seed;
use crate::signal::LossSource;
use crate::synth::{generate_runs, SynthSpec};
use crate::Error;

/// Synthetic input: a surface and either a plan or a named plan style.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSource {
    pub spec: SynthSpec,
    #[serde(default)]
    pub style: Option<PlanStyle>,
    #[serde(default)]
    pub plan: Option<ExperimentPlan>,
}

fn default_bootstrap() -> usize {
    1000
}

fn default_reference() -> f64 {
    CHINCHILLA_FLOPS
}

fn default_true() -> bool {
    true
}

fn default_profile() -> NoiseProfile {
    NoiseProfile::refined_web()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    #[serde(default)]
    pub runs_dir: Option<PathBuf>,
    #[serde(default)]
    pub synth: Option<SynthSource>,
    #[serde(default)]
    pub grid: FlopGrid,
    #[serde(default)]
    pub scheme: SizeScheme,
    #[serde(default)]
    pub source: LossSource,
    #[serde(default = "default_profile")]
    pub profile: NoiseProfile,
    #[serde(default = "default_bootstrap")]
    pub bootstrap: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub exclusion: Option<ExclusionFilter>,
    #[serde(default = "default_true")]
    pub saturating_fit: bool,
    /// Budget at which the fit reports `N*` and its interval.
    #[serde(default = "default_reference")]
    pub reference_flops: f64,
    /// Per-stage patches merged over the top-level settings, keyed by
    /// stage name (`ingest`, `isoflop`, `estimate`, `fit`, `loss-fit`).
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub stage_overrides: BTreeMap<String, serde_json::Value>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            runs_dir: None,
            synth: None,
            grid: FlopGrid::default(),
            scheme: SizeScheme::Linear,
            source: LossSource::Validation,
            profile: default_profile(),
            bootstrap: default_bootstrap(),
            seed: 0,
            exclusion: None,
            saturating_fit: true,
            reference_flops: CHINCHILLA_FLOPS,
            stage_overrides: BTreeMap::new(),
        }
    }
}

pub const STAGES: [&str; 5] = ["ingest", "isoflop", "estimate", "fit", "loss-fit"];

/// A failure tagged with the stage that produced it.
#[derive(Debug, thiserror::Error)]
#[error("{stage}: {source}")]
pub struct PipelineError {
    pub stage: String,
    #[source]
    pub source: Error,
}

impl PipelineError {
    fn at(stage: &str, e: impl Into<Error>) -> Self {
        Self {
            stage: stage.to_string(),
            source: e.into(),
        }
    }

    fn config(stage: &str, msg: String) -> Self {
        Self::at(stage, crate::synth::SynthError::InvalidSpec(msg))
    }
}

fn merge(base: &mut serde_json::Value, patch: &serde_json::Value) {
    match (base, patch) {
        (serde_json::Value::Object(b), serde_json::Value::Object(p)) => {
            for (k, v) in p {
                merge(b.entry(k.clone()).or_insert(serde_json::Value::Null), v);
            }
        }
        (b, p) => *b = p.clone(),
    }
}

impl PipelineConfig {
    /// Settings for `stage` with its override applied.
    pub fn for_stage(&self, stage: &str) -> Result<PipelineConfig, PipelineError> {
        let Some(patch) = self.stage_overrides.get(stage) else {
            return Ok(self.clone());
        };
        let mut value = serde_json::to_value(self).map_err(|e| PipelineError::config(stage, e.to_string()))?;
        merge(&mut value, patch);
        let mut cfg: PipelineConfig =
            serde_json::from_value(value).map_err(|e| PipelineError::config(stage, e.to_string()))?;
        cfg.stage_overrides.clear();
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        for key in self.stage_overrides.keys() {
            if !STAGES.contains(&key.as_str()) {
                return Err(PipelineError::config("config", format!("unknown stage {key:?}")));
            }
        }
        if self.runs_dir.is_some() == self.synth.is_some() {
            return Err(PipelineError::config(
                "config",
                "exactly one of runs_dir and synth must be set".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineOutput {
    pub run_count: usize,
    pub curves: Vec<IsoFlopCurve>,
    pub estimates: Vec<NStarEstimate>,
    pub loss_estimates: Vec<LossStarEstimate>,
    pub fit: PowerLawFit,
    pub token_law: PowerLaw,
    pub ratio_law: PowerLaw,
    pub loss_fit: Option<SaturatingFit>,
}

/// Loads or generates the runs.
pub fn ingest_runs(cfg: &PipelineConfig) -> Result<Vec<TrainingRun>, PipelineError> {
    let stage = "ingest";
    let cfg = cfg.for_stage(stage)?;
    if let Some(dir) = &cfg.runs_dir {
        return load_sweep(dir).map_err(|e| PipelineError::at(stage, e));
    }
    let synth = cfg
        .synth
        .as_ref()
        .ok_or_else(|| PipelineError::config(stage, "no run source".into()))?;
    let plan = match (&synth.plan, synth.style) {
        (Some(p), _) => p.clone(),
        (None, Some(style)) => style_plan(style, &cfg.grid).map_err(|e| PipelineError::at(stage, e))?,
        (None, None) => style_plan(PlanStyle::TunedConstant, &cfg.grid).map_err(|e| PipelineError::at(stage, e))?,
    };
    generate_runs(&synth.spec, &plan).map_err(|e| PipelineError::at(stage, e))
}

/// Runs every stage.
pub fn run(cfg: &PipelineConfig) -> Result<PipelineOutput, PipelineError> {
    cfg.validate()?;
    let runs = ingest_runs(cfg)?;

    let c = cfg.for_stage("isoflop")?;
    let opts = CurveOptions {
        scheme: c.scheme,
        source: c.source,
        profile: c.profile,
        exclusion: c.exclusion,
    };
    let curves = build_isoflop_curves(&runs, &c.grid.values(), &opts).map_err(|e| PipelineError::at("isoflop", e))?;

    analyze(cfg, curves, runs.len())
}

/// The estimate, fit and loss-fit stages over prepared curves.
pub fn analyze(cfg: &PipelineConfig, curves: Vec<IsoFlopCurve>, run_count: usize) -> Result<PipelineOutput, PipelineError> {
    let c = cfg.for_stage("estimate")?;
    let pairs = curves
        .iter()
        .enumerate()
        .map(|(i, curve)| estimate_curve(curve, c.bootstrap, derive_seed(c.seed, i as u64)))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| PipelineError::at("estimate", e))?;
    let (estimates, loss_estimates): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();

    let c = cfg.for_stage("fit")?;
    let mut fit = fit_power_law(&estimates).map_err(|e| PipelineError::at("fit", e))?;
    fit.reference_flops = c.reference_flops;
    let fit = fit.with_bootstrap(bootstrap_fits(&estimates, c.bootstrap));

    let c = cfg.for_stage("loss-fit")?;
    let loss_fit = if c.saturating_fit {
        let pts: Vec<(f64, f64)> = loss_estimates
            .iter()
            .filter(|l| l.valid)
            .map(|l| (l.flops, l.loss_star))
            .collect();
        Some(fit_saturating(&pts).map_err(|e| PipelineError::at("loss-fit", e))?)
    } else {
        None
    };

    Ok(PipelineOutput {
        run_count,
        token_law: derive_token_law(&fit),
        ratio_law: derive_ratio_law(&fit),
        curves,
        estimates,
        loss_estimates,
        fit,
        loss_fit,
    })
}

/// CSV of per-budget estimates: `C,n_star,log_std,loss_star,valid,omitted_fraction`.
pub fn estimates_csv(estimates: &[NStarEstimate]) -> String {
    let mut s = String::from("C,n_star,log_std,loss_star,valid,omitted_fraction\n");
    for e in estimates {
        let _ = writeln!(
            s,
            "{:e},{},{},{},{},{}",
            e.flops, e.n_star, e.log_std, e.loss_star, e.valid, e.omitted_fraction
        );
    }
    s
}

/// CSV of curve points: `C,N,loss,sigma`.
pub fn curves_csv(curves: &[IsoFlopCurve]) -> String {
    let mut s = String::from("C,N,loss,sigma\n");
    for c in curves {
        for p in &c.points {
            let _ = writeln!(s, "{:e},{},{},{}", c.flops, p.n, p.loss, p.sigma);
        }
    }
    s
}

/// CSV of per-budget minimum losses: `C,loss_star,std,valid`.
pub fn opt_loss_csv(estimates: &[LossStarEstimate]) -> String {
    let mut s = String::from("C,loss_star,std,valid\n");
    for e in estimates {
        let _ = writeln!(s, "{:e},{},{},{}", e.flops, e.loss_star, e.std, e.valid);
    }
    s
}

/// Summary JSON of a law fit with its derived token and ratio laws.
pub fn fit_json(fit: &PowerLawFit) -> serde_json::Value {
    let d = derive_token_law(fit);
    let r = derive_ratio_law(fit);
    serde_json::json!({
        "N0": fit.coefficient,
        "a": fit.exponent,
        "r2": fit.r_squared,
        "r2_unweighted": fit.r_squared_unweighted,
        "ci_a": fit.ci_exponent,
        "a_text": fit.ci_exponent.map_or_else(|| format!("{:.3}", fit.exponent), |ci| format_with_ci(fit.exponent, ci)),
        "ci_ref": fit.ci_at_reference,
        "reference_flops": fit.reference_flops,
        "n_star_ref": fit.predict(fit.reference_flops),
        "n_points": fit.n_points,
        "D0": d.coefficient,
        "b": d.exponent,
        "rho0": r.coefficient,
        "r": r.exponent,
    })
}

/// Writes `isoflop.csv`, `estimates.csv`, `opt_loss.csv`, `fit.json` and,
/// when present, `loss_fit.json` into `dir`.
pub fn write_outputs(out: &PipelineOutput, dir: &Path) -> std::io::Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut files = vec![
        (dir.join("isoflop.csv"), curves_csv(&out.curves)),
        (dir.join("estimates.csv"), estimates_csv(&out.estimates)),
        (dir.join("opt_loss.csv"), opt_loss_csv(&out.loss_estimates)),
        (dir.join("fit.json"), pretty(&fit_json(&out.fit))),
    ];
    if let Some(lf) = &out.loss_fit {
        files.push((dir.join("loss_fit.json"), pretty(&serde_json::to_value(lf).expect("plain data"))));
    }
    for (path, body) in &files {
        std::fs::write(path, body)?;
    }
    Ok(files.into_iter().map(|f| f.0).collect())
}

pub fn pretty(v: &serde_json::Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("plain data");
    s.push('\n');
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_override_merges() {
        let mut cfg = PipelineConfig {
            bootstrap: 200,
            ..Default::default()
        };
        cfg.stage_overrides
            .insert("estimate".into(), serde_json::json!({"bootstrap": 300, "seed": 4}));
        let est = cfg.for_stage("estimate").unwrap();
        assert_eq!((est.bootstrap, est.seed), (300, 4));
        assert_eq!(cfg.for_stage("fit").unwrap().bootstrap, 200);
    }

    #[test]
    fn rejects_ambiguous_source() {
        let cfg = PipelineConfig::default();
        assert!(cfg.validate().is_err());
        let mut cfg = PipelineConfig {
            runs_dir: Some("x".into()),
            ..Default::default()
        };
        cfg.stage_overrides.insert("bogus".into(), serde_json::json!({}));
        assert!(cfg.validate().is_err());
    }
}
