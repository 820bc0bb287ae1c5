//! Report tables as read back from the CSV/JSON artifacts, and the figures
//! drawn from them. Figures only plot values present in the tables.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use scalelaw::hparam::{HParamLaws, TunedRow};
use scalelaw::planner::AccuracyPoint;
use scalelaw::SaturatingFit;

use crate::svg::{color, render, Axis, Panel, Series, SvgError};

#[derive(Debug, Clone, Deserialize)]
pub struct CurveRow {
    #[serde(rename = "C")]
    pub c: f64,
    #[serde(rename = "N")]
    pub n: f64,
    pub loss: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, Deserialize)]
pub struct EstimateRow {
    #[serde(rename = "C")]
    pub c: f64,
    pub n_star: f64,
    pub log_std: f64,
    pub loss_star: f64,
    pub valid: bool,
    pub omitted_fraction: f64,
}

#[derive(Debug, Clone, Deserialize)]
pub struct OptLossRow {
    #[serde(rename = "C")]
    pub c: f64,
    pub loss_star: f64,
    pub std: f64,
    pub valid: bool,
}

/// The subset of `fit.json` the figures use.
#[derive(Debug, Clone, Deserialize)]
pub struct FitSummary {
    #[serde(rename = "N0")]
    pub n0: f64,
    pub a: f64,
    pub a_text: String,
    pub reference_flops: f64,
    pub n_star_ref: f64,
    pub ci_ref: Option<(f64, f64)>,
}

/// Contents of `hparams.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HParamReport {
    pub optima: Vec<OptimumRow>,
    pub laws: Option<HParamLaws>,
    pub trends_ok: Option<bool>,
    pub gpu_count: u64,
    pub table: Vec<TunedRow>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptimumRow {
    #[serde(rename = "N")]
    pub n: f64,
    pub bs_star: f64,
    pub lr_star: f64,
    pub loss_star: f64,
    pub bs_at_edge: bool,
    pub lr_at_edge: bool,
}

/// A row of `accuracy.csv`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AccuracyRow {
    pub max_flops: f64,
    pub budgets: usize,
    pub cost_constant: f64,
    pub cost_cosine: f64,
    pub exponent: f64,
    pub ci_lo: Option<f64>,
    pub ci_hi: Option<f64>,
    pub ci_width: f64,
    pub rms_rel_err: f64,
}

impl From<&AccuracyPoint> for AccuracyRow {
    fn from(p: &AccuracyPoint) -> Self {
        Self {
            max_flops: p.max_flops,
            budgets: p.budgets,
            cost_constant: p.cost_constant,
            cost_cosine: p.cost_cosine,
            exponent: p.exponent,
            ci_lo: p.ci_exponent.map(|c| c.0),
            ci_hi: p.ci_exponent.map(|c| c.1),
            ci_width: p.ci_width,
            rms_rel_err: p.rms_rel_err,
        }
    }
}

pub fn parse_csv<T: for<'de> Deserialize<'de>>(text: &str) -> Result<Vec<T>> {
    csv::Reader::from_reader(text.as_bytes())
        .deserialize()
        .collect::<Result<Vec<T>, _>>()
        .context("malformed CSV table")
}

pub fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_csv(&text).with_context(|| format!("parsing {}", path.display()))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

pub fn write_csv<T: Serialize>(rows: &[T]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}

fn budget_label(c: f64) -> String {
    format!("C = {c:.2e}")
}

/// Loss against model size, one series per budget, with the estimated
/// optimum of each budget marked when `estimates` is given.
pub fn isoflop(curves: &[CurveRow], estimates: &[EstimateRow]) -> Panel {
    let mut by_budget: BTreeMap<u64, (f64, Vec<(f64, f64)>)> = BTreeMap::new();
    for r in curves {
        by_budget.entry(r.c.to_bits()).or_insert((r.c, Vec::new())).1.push((r.n, r.loss));
    }
    let mut p = Panel::new("IsoFLOP curves", Axis::log("model size N"), Axis::log("loss"));
    p.legend_right = true;
    for (i, (c, pts)) in by_budget.into_values().enumerate() {
        p.series.push(Series::markers(budget_label(c), color(i), pts).joined());
    }
    let opt: Vec<(f64, f64)> = estimates.iter().filter(|e| e.valid).map(|e| (e.n_star, e.loss_star)).collect();
    if !opt.is_empty() {
        p.series.push(Series::markers("N* estimate", "#000000", opt));
    }
    p
}

/// `N*` against compute with `exp(+-log_std)` bars and the fitted law.
pub fn nstar_fit(estimates: &[EstimateRow], fit: Option<&FitSummary>) -> Panel {
    let mut p = Panel::new("Compute-optimal model size", Axis::log("compute C (FLOPs)"), Axis::log("N*"));
    let valid: Vec<&EstimateRow> = estimates.iter().filter(|e| e.valid).collect();
    let pts = valid.iter().map(|e| (e.c, e.n_star)).collect();
    let errs = valid
        .iter()
        .map(|e| (e.n_star * (-e.log_std).exp(), e.n_star * e.log_std.exp()))
        .collect();
    p.series.push(Series::markers("estimates", color(0), pts).with_errors(errs));
    let invalid: Vec<(f64, f64)> = estimates.iter().filter(|e| !e.valid).map(|e| (e.c, e.n_star)).collect();
    if !invalid.is_empty() {
        p.series.push(Series::markers("excluded (edge)", "#aaaaaa", invalid));
    }
    if let Some(fit) = fit {
        if valid.len() >= 2 {
            let lo = valid.iter().map(|e| e.c).fold(f64::INFINITY, f64::min);
            let hi = valid.iter().map(|e| e.c).fold(0.0, f64::max);
            let line = [lo, hi].iter().map(|&c| (c, fit.n0 * c.powf(fit.a))).collect();
            p.series.push(Series::line(format!("a = {}", fit.a_text), color(3), line));
        }
        p.notes.push(format!("N*({:.2e}) = {:.3e}", fit.reference_flops, fit.n_star_ref));
        if let Some((lo, hi)) = fit.ci_ref {
            p.notes.push(format!("95% CI ({lo:.3e}, {hi:.3e})"));
        }
    }
    p
}

/// Minimum loss against compute with `+-std` bars and the saturating fit.
pub fn opt_loss(rows: &[OptLossRow], fit: Option<&SaturatingFit>) -> Panel {
    let mut p = Panel::new("Optimal loss", Axis::log("compute C (FLOPs)"), Axis::log("L*"));
    let valid: Vec<&OptLossRow> = rows.iter().filter(|r| r.valid).collect();
    let pts = valid.iter().map(|r| (r.c, r.loss_star)).collect();
    let errs = valid.iter().map(|r| (r.loss_star - r.std, r.loss_star + r.std)).collect();
    p.series.push(Series::markers("estimates", color(0), pts).with_errors(errs));
    if let Some(f) = fit {
        if valid.len() >= 2 {
            let lo = valid.iter().map(|r| r.c).fold(f64::INFINITY, f64::min).ln();
            let hi = valid.iter().map(|r| r.c).fold(0.0, f64::max).ln();
            let line = (0..=40)
                .map(|i| {
                    let c = (lo + (hi - lo) * i as f64 / 40.0).exp();
                    (c, f.predict(c))
                })
                .collect();
            p.series.push(Series::line(
                format!("E = {:.3}, L0 = {:.3}, ell = {:.3}", f.e, f.l0, f.ell),
                color(3),
                line,
            ));
        }
    }
    p
}

/// Batch size and learning rate optima against model size with their laws.
pub fn hparam_fit(report: &HParamReport) -> [Panel; 2] {
    let mut bs = Panel::new("Optimal batch size", Axis::log("model size N"), Axis::log("batch size (sequences)"));
    let mut lr = Panel::new("Optimal learning rate", Axis::log("model size N"), Axis::log("learning rate"));
    let ok: Vec<&OptimumRow> = report.optima.iter().filter(|o| !o.bs_at_edge).collect();
    bs.series.push(Series::markers("optima", color(0), ok.iter().map(|o| (o.n, o.bs_star)).collect()));
    let ok: Vec<&OptimumRow> = report.optima.iter().filter(|o| !o.lr_at_edge).collect();
    lr.series.push(Series::markers("optima", color(0), ok.iter().map(|o| (o.n, o.lr_star)).collect()));
    let edge: Vec<&OptimumRow> = report.optima.iter().filter(|o| o.bs_at_edge || o.lr_at_edge).collect();
    if !edge.is_empty() {
        bs.series.push(Series::markers("at sweep edge", "#aaaaaa", edge.iter().filter(|o| o.bs_at_edge).map(|o| (o.n, o.bs_star)).collect()));
        lr.series.push(Series::markers("at sweep edge", "#aaaaaa", edge.iter().filter(|o| o.lr_at_edge).map(|o| (o.n, o.lr_star)).collect()));
    }
    if let Some(laws) = &report.laws {
        let ns: Vec<f64> = report.optima.iter().map(|o| o.n).chain(report.table.iter().map(|r| r.n)).collect();
        let lo = ns.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = ns.iter().copied().fold(0.0, f64::max);
        if lo < hi {
            bs.series.push(Series::line(
                format!("bs = {:.3e} N^{:.3}", laws.bs_law.coefficient, laws.bs_law.exponent),
                color(3),
                [lo, hi].iter().map(|&n| (n, laws.bs_law.eval(n))).collect(),
            ));
            lr.series.push(Series::line(
                format!("lr = {:.3e} N^{:.3}", laws.lr_law.coefficient, laws.lr_law.exponent),
                color(3),
                [lo, hi].iter().map(|&n| (n, laws.lr_law.eval(n))).collect(),
            ));
        }
    }
    if !report.table.is_empty() {
        bs.series.push(Series::markers(
            format!("rounded (gpu count {})", report.gpu_count),
            color(2),
            report.table.iter().map(|r| (r.n, r.batch_size_seqs as f64)).collect(),
        ));
        lr.series.push(Series::markers(
            "rounded",
            color(2),
            report.table.iter().map(|r| (r.n, r.lr)).collect(),
        ));
    }
    [bs, lr]
}

/// Fit error against experiment cost for the two schedule styles.
pub fn accuracy_vs_compute(rows: &[AccuracyRow]) -> Panel {
    let mut p = Panel::new("Accuracy versus experiment cost", Axis::log("total training FLOPs"), Axis::log("RMS relative error of N*"));
    p.series.push(Series::markers("constant reuse", color(0), rows.iter().map(|r| (r.cost_constant, r.rms_rel_err)).collect()).joined());
    p.series.push(Series::markers("cosine per budget", color(1), rows.iter().map(|r| (r.cost_cosine, r.rms_rel_err)).collect()).joined().dashed());
    if let Some(last) = rows.last() {
        p.notes.push(format!(
            "cost ratio at {} budgets: {:.3}",
            last.budgets,
            last.cost_constant / last.cost_cosine
        ));
    }
    p
}

pub fn svg(panels: &[Panel], stamp: Option<&str>) -> Result<String, SvgError> {
    render(panels, stamp)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fit() -> FitSummary {
        FitSummary {
            n0: 0.1,
            a: 0.5,
            a_text: "0.500 (0.49, 0.51)".into(),
            reference_flops: 5.88e23,
            n_star_ref: 0.1 * 5.88e23f64.sqrt(),
            ci_ref: Some((7e10, 8e10)),
        }
    }

    fn est(c: f64) -> EstimateRow {
        EstimateRow {
            c,
            n_star: 0.1 * c.sqrt(),
            log_std: 0.2,
            loss_star: 3.0,
            valid: true,
            omitted_fraction: 0.0,
        }
    }

    #[test]
    fn slope_annotation_matches_fit_string() {
        let rows = [est(1e18), est(1e19), est(1e20)];
        let doc = svg(&[nstar_fit(&rows, Some(&fit()))], None).unwrap();
        assert!(doc.contains("a = 0.500 (0.49, 0.51)"));
        roxmltree::Document::parse(&doc).unwrap();
    }

    #[test]
    fn single_estimate_has_no_fit_line() {
        let doc = svg(&[nstar_fit(&[est(1e18)], Some(&fit()))], None).unwrap();
        assert!(!doc.contains("<polyline"));
    }

    #[test]
    fn empty_table_is_an_error() {
        assert!(svg(&[nstar_fit(&[], None)], None).is_err());
        assert!(svg(&[opt_loss(&[], None)], None).is_err());
    }

    #[test]
    fn csv_round_trip_of_accuracy_rows() {
        let rows = vec![AccuracyRow {
            max_flops: 1e18,
            budgets: 3,
            cost_constant: 1e19,
            cost_cosine: 2e19,
            exponent: 0.5,
            ci_lo: None,
            ci_hi: Some(0.6),
            ci_width: f64::INFINITY,
            rms_rel_err: 0.01,
        }];
        let text = write_csv(&rows).unwrap();
        let back: Vec<AccuracyRow> = parse_csv(&text).unwrap();
        assert_eq!(back[0].ci_lo, None);
        assert_eq!(back[0].ci_hi, Some(0.6));
        assert!(back[0].ci_width.is_infinite());
    }
}
