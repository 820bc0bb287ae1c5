use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use serde::Serialize;

use scalelaw::hparam::{sweep_points, tuned_table, HParamOptimum};
use scalelaw::lawfit::{bootstrap_fits, parametric_samples};
use scalelaw::pipeline::{self, curves_csv, estimates_csv, fit_json, opt_loss_csv, pretty, PipelineConfig};
use scalelaw::planner::{design_cost, style_plan, ExclusionFilter, ExperimentPlan, PlanStyle};
use scalelaw::{
    accuracy_vs_compute, build_isoflop_curves, canonical_model_grid, experiment_cost, fit_hparam_laws,
    fit_power_law, fit_power_law_ci, fit_saturating, generate_runs, load_run, load_sweep, loss_at_flops,
    model_size, optimal_hparams, write_run, CurveOptions, IsoFlopCurve, LossPoint, NStarEstimate, NoiseProfile,
    PowerLawFit, SaturatingFit, SizeScheme, SweepPoint, SynthSpec,
};

use crate::figures::{self, AccuracyRow, CurveRow, EstimateRow, FitSummary, HParamReport, OptLossRow, OptimumRow};
use crate::{Cli, Command, Formats, Global, Output};

/// An error tagged with the stage that raised it.
#[derive(Debug)]
pub struct Failure {
    pub stage: String,
    pub error: anyhow::Error,
}

impl Failure {
    pub fn new(stage: &str, error: anyhow::Error) -> Self {
        Self {
            stage: stage.to_string(),
            error,
        }
    }
}

trait Stage<T> {
    fn stage(self, stage: &str) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> Stage<T> for Result<T, E> {
    fn stage(self, stage: &str) -> Result<T, Failure> {
        self.map_err(|e| Failure::new(stage, e.into()))
    }
}

type Outcome = Result<(), Failure>;

pub fn run(cli: &Cli) -> Outcome {
    let g = &cli.global;
    match &cli.command {
        Command::Grid { format } => grid(g, format),
        Command::Plan { style, grid, out } => {
            let plan = style_plan(*style, grid).stage("plan")?;
            emit(out.as_deref(), &pretty(&serde_json::to_value(&plan).stage("plan")?)).stage("plan")
        }
        Command::Synth {
            spec,
            plan,
            style,
            grid,
            noise,
            out,
        } => synth(g, spec.as_deref(), plan.as_deref(), *style, grid, noise.as_deref(), out),
        Command::Isoflop {
            runs,
            grid,
            source,
            exclude,
            out,
        } => {
            let loaded = load_sweep(runs).stage("ingest")?;
            let opts = CurveOptions {
                scheme: g.scheme(),
                source: *source,
                profile: g.profile(),
                exclusion: exclude.then(ExclusionFilter::standard),
            };
            let curves = build_isoflop_curves(&loaded, &grid.values(), &opts).stage("isoflop")?;
            emit(out.as_deref(), &curves_csv(&curves)).stage("isoflop")
        }
        Command::Fit {
            curves,
            estimates,
            reference_flops,
            output,
        } => match (curves, estimates) {
            (Some(path), _) => fit_curves(g, path, *reference_flops, output),
            (None, Some(path)) => fit_estimates(g, path, *reference_flops, output),
            (None, None) => Err(Failure::new("fit", anyhow!("one of --curves and --estimates is required"))),
        },
        Command::LossFit { opt_loss, out } => {
            let rows: Vec<OptLossRow> = figures::read_csv(opt_loss).stage("loss-fit")?;
            let pts: Vec<(f64, f64)> = rows.iter().filter(|r| r.valid).map(|r| (r.c, r.loss_star)).collect();
            let fit = fit_saturating(&pts).stage("loss-fit")?;
            emit(out.as_deref(), &pretty(&serde_json::to_value(fit).stage("loss-fit")?)).stage("loss-fit")
        }
        Command::LossAt { run, flops, source } => {
            let r = load_run(run).stage("ingest")?;
            let loss = loss_at_flops(&r, *flops, g.scheme(), *source)
                .stage("loss-at")?
                .ok_or_else(|| anyhow!("run {} has no sample within 10% of the step reaching {flops:e} FLOPs", r.run_id))
                .stage("loss-at")?;
            let body = serde_json::json!({ "run_id": r.run_id, "flops": flops, "loss": loss });
            emit(None, &pretty(&body)).stage("loss-at")
        }
        Command::Hparams {
            sweep,
            runs,
            rho,
            gpus,
            table_sizes,
            output,
        } => hparams(g, sweep.as_deref(), runs.as_deref(), *rho, *gpus, table_sizes, output),
        Command::Cost {
            style,
            plan,
            counts,
            all,
            grid,
        } => cost(*style, plan.as_deref(), counts, *all, grid),
        Command::Accuracy {
            curves,
            reference,
            output,
        } => accuracy(g, curves, reference.as_deref(), output),
        Command::Report { input, output_dir } => report(g, input, output_dir.as_deref().unwrap_or(input)),
        Command::Pipeline {
            config,
            reference_flops,
            output,
        } => run_pipeline(g, config, *reference_flops, output),
    }
}

/// Writes `body` to `path`, or to stdout when no path is given.
fn emit(path: Option<&Path>, body: &str) -> anyhow::Result<()> {
    match path {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            }
            fs::write(p, body).with_context(|| format!("writing {}", p.display()))
        }
        None => {
            print!("{body}");
            Ok(())
        }
    }
}

fn stamp(g: &Global) -> Option<String> {
    if g.deterministic {
        return None;
    }
    let secs = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    Some(format!("generated by scalelaw {} at unix time {secs}", env!("CARGO_PKG_VERSION")))
}

fn wanted(name: &str, f: Formats) -> bool {
    match Path::new(name).extension().and_then(|e| e.to_str()) {
        Some("csv") => f.csv,
        Some("json") => f.json,
        Some("svg") => f.svg,
        _ => true,
    }
}

fn write_filtered(files: &[(String, String)], dir: &Path, formats: Formats) -> anyhow::Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut written = Vec::new();
    for (name, body) in files.iter().filter(|f| wanted(&f.0, formats)) {
        let path = dir.join(name);
        fs::write(&path, body).with_context(|| format!("writing {}", path.display()))?;
        println!("{}", path.display());
        written.push(path);
    }
    Ok(written)
}

/// Tables a report can draw from; every field is optional.
#[derive(Default)]
struct Tables {
    curves: Option<Vec<CurveRow>>,
    estimates: Option<Vec<EstimateRow>>,
    fit: Option<FitSummary>,
    opt_loss: Option<Vec<OptLossRow>>,
    loss_fit: Option<SaturatingFit>,
    hparams: Option<HParamReport>,
    accuracy: Option<Vec<AccuracyRow>>,
}

impl Tables {
    /// Parses the named in-memory artifacts.
    fn from_artifacts(files: &[(String, String)]) -> anyhow::Result<Self> {
        let mut t = Tables::default();
        for (name, body) in files {
            match name.as_str() {
                "isoflop.csv" => t.curves = Some(figures::parse_csv(body)?),
                "estimates.csv" => t.estimates = Some(figures::parse_csv(body)?),
                "opt_loss.csv" => t.opt_loss = Some(figures::parse_csv(body)?),
                "accuracy.csv" => t.accuracy = Some(figures::parse_csv(body)?),
                "fit.json" => t.fit = Some(serde_json::from_str(body)?),
                "loss_fit.json" => t.loss_fit = Some(serde_json::from_str(body)?),
                "hparams.json" => t.hparams = Some(serde_json::from_str(body)?),
                _ => {}
            }
        }
        Ok(t)
    }

    fn from_dir(dir: &Path) -> anyhow::Result<Self> {
        let mut files = Vec::new();
        for name in [
            "isoflop.csv",
            "estimates.csv",
            "opt_loss.csv",
            "accuracy.csv",
            "fit.json",
            "loss_fit.json",
            "hparams.json",
        ] {
            let path = dir.join(name);
            if path.exists() {
                let body = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
                files.push((name.to_string(), body));
            }
        }
        Self::from_artifacts(&files).with_context(|| format!("reading tables in {}", dir.display()))
    }

    /// Renders every figure whose tables are present.
    fn figures(&self, stamp: Option<&str>) -> anyhow::Result<Vec<(String, String)>> {
        let mut out = Vec::new();
        if let Some(curves) = &self.curves {
            let est = self.estimates.as_deref().unwrap_or(&[]);
            out.push(("isoflop.svg".into(), figures::svg(&[figures::isoflop(curves, est)], stamp)?));
        }
        if let Some(est) = &self.estimates {
            let panel = figures::nstar_fit(est, self.fit.as_ref());
            out.push(("nstar_fit.svg".into(), figures::svg(&[panel], stamp)?));
        }
        if let Some(rows) = &self.opt_loss {
            let panel = figures::opt_loss(rows, self.loss_fit.as_ref());
            out.push(("opt_loss.svg".into(), figures::svg(&[panel], stamp)?));
        }
        if let Some(h) = &self.hparams {
            out.push(("hparam_fit.svg".into(), figures::svg(&figures::hparam_fit(h), stamp)?));
        }
        if let Some(rows) = &self.accuracy {
            let panel = figures::accuracy_vs_compute(rows);
            out.push(("accuracy_vs_compute.svg".into(), figures::svg(&[panel], stamp)?));
        }
        Ok(out)
    }
}

/// Adds the figures drawn from `files` when SVG output is requested.
fn with_figures(g: &Global, mut files: Vec<(String, String)>, formats: Formats) -> anyhow::Result<Vec<(String, String)>> {
    if formats.svg {
        let tables = Tables::from_artifacts(&files)?;
        let figs = tables.figures(stamp(g).as_deref())?;
        files.extend(figs);
    }
    Ok(files)
}

#[derive(Serialize)]
struct GridRow {
    depth: u64,
    width: u64,
    heads: u64,
    #[serde(rename = "N")]
    n: f64,
    #[serde(rename = "N_eff")]
    n_eff: f64,
    #[serde(rename = "N_Kaplan")]
    n_kaplan: f64,
}

fn grid(_g: &Global, format: &str) -> Outcome {
    let rows = canonical_model_grid()
        .iter()
        .map(|a| {
            Ok(GridRow {
                depth: a.depth,
                width: a.width,
                heads: a.heads,
                n: model_size(a, SizeScheme::Linear)?,
                n_eff: model_size(a, SizeScheme::Effective)?,
                n_kaplan: model_size(a, SizeScheme::KaplanNoHead)?,
            })
        })
        .collect::<Result<Vec<_>, scalelaw::accounting::AccountingError>>()
        .stage("grid")?;
    let body = match format {
        "csv" => figures::write_csv(&rows).stage("grid")?,
        "json" => pretty(&serde_json::to_value(&rows).stage("grid")?),
        other => return Err(Failure::new("grid", anyhow!("unknown format {other:?} (expected csv or json)"))),
    };
    emit(None, &body).stage("grid")
}

fn synth(
    g: &Global,
    spec: Option<&Path>,
    plan: Option<&Path>,
    style: Option<PlanStyle>,
    grid: &scalelaw::planner::FlopGrid,
    noise: Option<&str>,
    out: &Path,
) -> Outcome {
    let mut spec: SynthSpec = match spec {
        Some(p) => figures::read_json(p).stage("synth")?,
        None => SynthSpec::chinchilla(),
    };
    if let Some(seed) = g.seed {
        spec.seed = seed;
    }
    if let Some(n) = noise {
        spec.noise = match n {
            "none" => None,
            name => Some(name.parse::<NoiseProfile>().stage("synth")?),
        };
    }
    let plan: ExperimentPlan = match plan {
        Some(p) => figures::read_json(p).stage("plan")?,
        None => style_plan(style.unwrap_or(PlanStyle::TunedConstant), grid).stage("plan")?,
    };
    let runs = generate_runs(&spec, &plan).stage("synth")?;
    for run in &runs {
        write_run(run, out).stage("synth")?;
    }
    println!("{} runs written to {}", runs.len(), out.display());
    Ok(())
}

fn read_curves(path: &Path, stage: &str) -> Result<Vec<IsoFlopCurve>, Failure> {
    let rows: Vec<CurveRow> = figures::read_csv(path).stage("ingest")?;
    let mut by_budget: BTreeMap<u64, (f64, Vec<LossPoint>)> = BTreeMap::new();
    for r in rows {
        by_budget.entry(r.c.to_bits()).or_insert((r.c, Vec::new())).1.push(LossPoint {
            n: r.n,
            flops: r.c,
            loss: r.loss,
            sigma: r.sigma,
        });
    }
    let mut curves = by_budget
        .into_values()
        .map(|(c, pts)| IsoFlopCurve::new(c, pts))
        .collect::<Result<Vec<_>, _>>()
        .stage(stage)?;
    curves.sort_by(|a, b| a.flops.total_cmp(&b.flops));
    if curves.is_empty() {
        return Err(Failure::new("ingest", anyhow!("{} has no curve points", path.display())));
    }
    Ok(curves)
}

fn base_config(g: &Global) -> PipelineConfig {
    PipelineConfig {
        seed: g.seed(),
        bootstrap: g.bootstrap(),
        scheme: g.scheme(),
        profile: g.profile(),
        ..PipelineConfig::default()
    }
}

fn fit_curves(g: &Global, path: &Path, reference_flops: f64, output: &Output) -> Outcome {
    let curves = read_curves(path, "isoflop")?;
    let cfg = PipelineConfig {
        saturating_fit: curves.len() >= 4,
        reference_flops,
        ..base_config(g)
    };
    let out = pipeline::analyze(&cfg, curves, 0).map_err(|e| Failure::new(&e.stage.clone(), e.into()))?;
    let mut files = vec![
        ("isoflop.csv".to_string(), curves_csv(&out.curves)),
        ("estimates.csv".to_string(), estimates_csv(&out.estimates)),
        ("opt_loss.csv".to_string(), opt_loss_csv(&out.loss_estimates)),
        ("fit.json".to_string(), pretty(&fit_json(&out.fit))),
    ];
    if let Some(lf) = &out.loss_fit {
        files.push(("loss_fit.json".into(), pretty(&serde_json::to_value(lf).stage("fit")?)));
    }
    let files = with_figures(g, files, output.formats).stage("report")?;
    write_filtered(&files, &output.output_dir, output.formats).stage("fit")?;
    Ok(())
}

fn fit_estimates(g: &Global, path: &Path, reference_flops: f64, output: &Output) -> Outcome {
    let rows: Vec<EstimateRow> = figures::read_csv(path).stage("ingest")?;
    let mut estimates: Vec<NStarEstimate> = rows
        .iter()
        .map(|r| NStarEstimate {
            flops: r.c,
            n_star: r.n_star,
            log_std: r.log_std,
            samples: Vec::new(),
            omitted_fraction: r.omitted_fraction,
            loss_star: r.loss_star,
            valid: r.valid,
        })
        .collect();
    parametric_samples(&mut estimates, g.bootstrap(), g.seed());
    let mut fit = fit_power_law(&estimates).stage("fit")?;
    fit.reference_flops = reference_flops;
    let fit = fit.with_bootstrap(bootstrap_fits(&estimates, g.bootstrap()));
    let files = vec![
        ("estimates.csv".to_string(), estimates_csv(&estimates)),
        ("fit.json".to_string(), pretty(&fit_json(&fit))),
    ];
    let files = with_figures(g, files, output.formats).stage("report")?;
    write_filtered(&files, &output.output_dir, output.formats).stage("fit")?;
    Ok(())
}

fn hparams(
    g: &Global,
    sweep: Option<&Path>,
    runs: Option<&Path>,
    rho: Option<f64>,
    gpus: u64,
    table_sizes: &[f64],
    output: &Output,
) -> Outcome {
    let points: Vec<SweepPoint> = match (sweep, runs) {
        (Some(p), _) => figures::read_csv(p).stage("ingest")?,
        (None, Some(dir)) => {
            let loaded = load_sweep(dir).stage("ingest")?;
            sweep_points(&loaded, g.scheme(), scalelaw::LossSource::Validation, rho).stage("hparams")?
        }
        (None, None) => return Err(Failure::new("hparams", anyhow!("one of --sweep and --runs is required"))),
    };
    let mut sizes: Vec<f64> = points.iter().map(|p| p.n).collect();
    sizes.sort_by(f64::total_cmp);
    sizes.dedup_by(|a, b| (*a - *b).abs() <= 1e-9 * a.abs().max(b.abs()));
    let mut optima: Vec<HParamOptimum> = Vec::new();
    for &n in &sizes {
        match optimal_hparams(&points, n) {
            Ok(o) => optima.push(o),
            Err(e) => log::warn!("skipping N = {n:e}: {e}"),
        }
    }
    if optima.is_empty() {
        return Err(Failure::new("hparams", anyhow!("no model size has a usable sweep")));
    }
    let usable: Vec<(f64, f64, f64)> = optima
        .iter()
        .filter(|o| !o.bs_at_edge && !o.lr_at_edge)
        .map(|o| (o.n, o.bs_star, o.lr_star))
        .collect();
    let laws = match fit_hparam_laws(&usable) {
        Ok(l) => Some(l),
        Err(e) => {
            log::warn!("no hyperparameter laws: {e}");
            None
        }
    };
    let table_sizes: Vec<f64> = if table_sizes.is_empty() {
        sizes.clone()
    } else {
        table_sizes.to_vec()
    };
    let table = laws.map(|l| tuned_table(&l, &table_sizes, gpus)).unwrap_or_default();
    let report = HParamReport {
        optima: optima
            .iter()
            .map(|o| OptimumRow {
                n: o.n,
                bs_star: o.bs_star,
                lr_star: o.lr_star,
                loss_star: o.loss_star,
                bs_at_edge: o.bs_at_edge,
                lr_at_edge: o.lr_at_edge,
            })
            .collect(),
        trends_ok: laws.map(|l| l.check_trends()),
        laws,
        gpu_count: gpus,
        table,
    };
    let mut files = vec![(
        "hparams.json".to_string(),
        pretty(&serde_json::to_value(&report).stage("hparams")?),
    )];
    files.push(("hparam_optima.csv".into(), figures::write_csv(&report.optima).stage("hparams")?));
    let files = with_figures(g, files, output.formats).stage("report")?;
    write_filtered(&files, &output.output_dir, output.formats).stage("hparams")?;
    Ok(())
}

fn cost(
    style: Option<PlanStyle>,
    plan: Option<&Path>,
    counts: &[usize],
    all: bool,
    grid: &scalelaw::planner::FlopGrid,
) -> Outcome {
    let summary = |name: &str, p: &ExperimentPlan| {
        serde_json::json!({
            "plan": name,
            "schedule": p.schedule_style,
            "runs": p.runs.len(),
            "flops": experiment_cost(p),
        })
    };
    let body = if all {
        let rows = PlanStyle::ALL
            .iter()
            .map(|s| Ok(summary(s.as_str(), &style_plan(*s, grid)?)))
            .collect::<Result<Vec<_>, scalelaw::planner::PlanError>>()
            .stage("cost")?;
        serde_json::Value::Array(rows)
    } else if let Some(s) = style {
        summary(s.as_str(), &style_plan(s, grid).stage("cost")?)
    } else if let Some(p) = plan {
        let plan: ExperimentPlan = figures::read_json(p).stage("cost")?;
        plan.validate().stage("cost")?;
        summary(&p.display().to_string(), &plan)
    } else if !counts.is_empty() {
        let flops = design_cost(grid, counts).stage("cost")?;
        serde_json::json!({ "grid": grid.to_string(), "counts": counts, "runs": counts.iter().sum::<usize>(), "flops": flops })
    } else {
        return Err(Failure::new("cost", anyhow!("one of --style, --plan, --counts or --all is required")));
    };
    emit(None, &pretty(&body)).stage("cost")
}

fn accuracy(g: &Global, curves_path: &Path, reference: Option<&Path>, output: &Output) -> Outcome {
    let curves = read_curves(curves_path, "accuracy")?;
    let reference: PowerLawFit = match reference {
        Some(p) => {
            let f: FitSummary = figures::read_json(p).stage("accuracy")?;
            PowerLawFit {
                coefficient: f.n0,
                exponent: f.a,
                r_squared: f64::NAN,
                r_squared_unweighted: f64::NAN,
                n_points: 0,
                reference_flops: f.reference_flops,
                ci_exponent: None,
                ci_at_reference: None,
                bootstrap_params: Vec::new(),
            }
        }
        None => fit_power_law_ci(&curves, g.bootstrap(), g.seed()).stage("accuracy")?,
    };
    let points = accuracy_vs_compute(&curves, &reference, g.bootstrap(), g.seed()).stage("accuracy")?;
    let rows: Vec<AccuracyRow> = points.iter().map(AccuracyRow::from).collect();
    let files = vec![("accuracy.csv".to_string(), figures::write_csv(&rows).stage("accuracy")?)];
    let files = with_figures(g, files, output.formats).stage("report")?;
    write_filtered(&files, &output.output_dir, output.formats).stage("accuracy")?;
    Ok(())
}

fn report(g: &Global, input: &Path, out: &Path) -> Outcome {
    let tables = Tables::from_dir(input).stage("report")?;
    let figs = tables.figures(stamp(g).as_deref()).stage("report")?;
    if figs.is_empty() {
        return Err(Failure::new("report", anyhow!("no report tables in {}", input.display())));
    }
    let formats = Formats {
        csv: false,
        json: false,
        svg: true,
    };
    write_filtered(&figs, out, formats).stage("report")?;
    Ok(())
}

fn run_pipeline(g: &Global, config: &Path, reference_flops: Option<f64>, output: &Output) -> Outcome {
    let mut cfg: PipelineConfig = figures::read_json(config).stage("config")?;
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    if let Some(b) = g.bootstrap {
        cfg.bootstrap = b;
    }
    if let Some(s) = g.scheme {
        cfg.scheme = s;
    }
    if let Some(p) = g.profile {
        cfg.profile = p;
    }
    if let Some(r) = reference_flops {
        cfg.reference_flops = r;
    }
    // Relative run directories resolve against the config file.
    if let (Some(dir), Some(base)) = (&cfg.runs_dir, config.parent()) {
        if dir.is_relative() {
            cfg.runs_dir = Some(base.join(dir));
        }
    }
    let out = pipeline::run(&cfg).map_err(|e| Failure::new(&e.stage.clone(), e.into()))?;

    let mut files = vec![
        ("isoflop.csv".to_string(), curves_csv(&out.curves)),
        ("estimates.csv".to_string(), estimates_csv(&out.estimates)),
        ("opt_loss.csv".to_string(), opt_loss_csv(&out.loss_estimates)),
        ("fit.json".to_string(), pretty(&fit_json(&out.fit))),
    ];
    if let Some(lf) = &out.loss_fit {
        files.push(("loss_fit.json".into(), pretty(&serde_json::to_value(lf).stage("loss-fit")?)));
    }
    let files = with_figures(g, files, output.formats).stage("report")?;
    write_filtered(&files, &output.output_dir, output.formats).stage("report")?;
    log::info!(
        "{} runs, {} curves, a = {:.4}",
        out.run_count,
        out.curves.len(),
        out.fit.exponent
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn format_filter() {
        let only_csv = Formats {
            csv: true,
            json: false,
            svg: false,
        };
        assert!(wanted("a.csv", only_csv));
        assert!(!wanted("a.svg", only_csv));
        assert!(!wanted("fit.json", only_csv));
    }
}
