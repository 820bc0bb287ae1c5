//! `scalelaw`: IsoFLOP scaling-law analysis from the command line.
//!
//! Failures exit with status 2 and print `{"stage": ..., "error": ...}` on
//! stderr. `SCALELAW_THREADS` caps the worker pool.

mod commands;
mod figures;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use scalelaw::planner::{FlopGrid, PlanStyle};
use scalelaw::{LossSource, NoiseProfile, SizeScheme};

#[derive(Parser, Debug)]
#[command(name = "scalelaw", version, about = "Compute-optimal scaling-law analysis")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Global {
    /// Root seed for every stochastic stage.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Bootstrap replicates (at least 100).
    #[arg(long, global = true)]
    pub bootstrap: Option<usize>,
    /// Model-size convention: linear, effective or kaplan.
    #[arg(long, global = true)]
    pub scheme: Option<SizeScheme>,
    /// Loss-noise profile: refinedweb or owt2.
    #[arg(long, global = true)]
    pub profile: Option<NoiseProfile>,
    /// Omit the generator timestamp from SVG output.
    #[arg(long, global = true)]
    pub deterministic: bool,
}

impl Global {
    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn bootstrap(&self) -> usize {
        self.bootstrap.unwrap_or(1000)
    }

    pub fn scheme(&self) -> SizeScheme {
        self.scheme.unwrap_or_default()
    }

    pub fn profile(&self) -> NoiseProfile {
        self.profile.unwrap_or_else(NoiseProfile::refined_web)
    }
}

/// Which artifact kinds to write.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Formats {
    pub csv: bool,
    pub json: bool,
    pub svg: bool,
}

impl Default for Formats {
    fn default() -> Self {
        Self {
            csv: true,
            json: true,
            svg: true,
        }
    }
}

fn parse_formats(s: &str) -> Result<Formats, String> {
    let mut f = Formats {
        csv: false,
        json: false,
        svg: false,
    };
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        match part.to_ascii_lowercase().as_str() {
            "csv" => f.csv = true,
            "json" => f.json = true,
            "svg" => f.svg = true,
            other => return Err(format!("unknown format {other:?} (expected csv, json or svg)")),
        }
    }
    if !(f.csv || f.json || f.svg) {
        return Err("at least one format is required".into());
    }
    Ok(f)
}

#[derive(Args, Debug, Clone)]
pub struct Output {
    /// Directory for the artifacts.
    #[arg(long, short = 'o')]
    pub output_dir: PathBuf,
    /// Comma-separated subset of csv,json,svg.
    #[arg(long, value_parser = parse_formats, default_value = "csv,json,svg")]
    pub formats: Formats,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Canonical model shapes and their size under every convention.
    Grid {
        /// Output format: csv or json.
        #[arg(long, default_value = "csv")]
        format: String,
    },
    /// Experiment plan for a named configuration, as JSON.
    Plan {
        /// Named plan style: kaplan, head-counted, warmup-fixed, cosine or tuned-constant.
        #[arg(long)]
        style: PlanStyle,
        /// FLOP budgets as base,factor,count.
        #[arg(long, default_value_t = FlopGrid::default())]
        grid: FlopGrid,
        /// Output path; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Synthetic training runs from a loss surface and a plan.
    Synth {
        /// Surface JSON; the Chinchilla constants when absent.
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Plan JSON; otherwise built from --style and --grid.
        #[arg(long, conflicts_with = "style")]
        plan: Option<PathBuf>,
        /// Named plan style: kaplan, head-counted, warmup-fixed, cosine or tuned-constant.
        #[arg(long)]
        style: Option<PlanStyle>,
        /// FLOP budgets as base,factor,count.
        #[arg(long, default_value_t = FlopGrid::default())]
        grid: FlopGrid,
        /// Noise: none, or a profile name (overrides the surface noise).
        #[arg(long)]
        noise: Option<String>,
        /// Directory for the generated runs.
        #[arg(long)]
        out: PathBuf,
    },
    /// IsoFLOP curves (`C,N,loss,sigma`) from a directory of runs.
    Isoflop {
        /// Directory of run manifests, searched recursively.
        #[arg(long)]
        runs: PathBuf,
        /// FLOP budgets as base,factor,count.
        #[arg(long, default_value_t = FlopGrid::default())]
        grid: FlopGrid,
        /// Loss source: v (validation) or t (smoothed train).
        #[arg(long, default_value = "v")]
        source: LossSource,
        /// Drop runs above 100 tokens per parameter or 1 nat above the best.
        #[arg(long)]
        exclude: bool,
        /// Output path; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-budget N* estimates and the power-law fit.
    Fit {
        /// IsoFLOP curve table.
        #[arg(long, required_unless_present = "estimates", conflicts_with = "estimates")]
        curves: Option<PathBuf>,
        /// Saved estimates table; samples are redrawn from n_star and log_std.
        #[arg(long)]
        estimates: Option<PathBuf>,
        /// Budget at which the fit reports N* and its interval.
        #[arg(long, default_value_t = scalelaw::CHINCHILLA_FLOPS)]
        reference_flops: f64,
        #[command(flatten)]
        output: Output,
    },
    /// Saturating power law `E + L0 C^-ell` through the optimal losses.
    LossFit {
        /// Optimal-loss table (`C,loss_star,std,valid`).
        #[arg(long)]
        opt_loss: PathBuf,
        /// Output path; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Loss of one run after a given compute.
    LossAt {
        /// Run manifest.
        #[arg(long)]
        run: PathBuf,
        /// Training compute in FLOPs.
        #[arg(long)]
        flops: f64,
        #[arg(long, default_value = "v")]
        source: LossSource,
    },
    /// Two-stage hyperparameter optima, their laws and a rounded table.
    Hparams {
        /// Sweep table (`N,batch_size_seqs,lr,beta2,final_loss`).
        #[arg(long, required_unless_present = "runs", conflicts_with = "runs")]
        sweep: Option<PathBuf>,
        /// Directory of sweep runs.
        #[arg(long)]
        runs: Option<PathBuf>,
        /// Read run losses after rho * N tokens instead of at the end.
        #[arg(long)]
        rho: Option<f64>,
        /// GPU count that the rounded batch size must divide.
        #[arg(long, default_value_t = 1)]
        gpus: u64,
        /// Sizes for the rounded table; the swept sizes when absent.
        #[arg(long, value_delimiter = ',')]
        table_sizes: Vec<f64>,
        #[command(flatten)]
        output: Output,
    },
    /// Training FLOPs of a plan or a design.
    Cost {
        /// Named plan style: kaplan, head-counted, warmup-fixed, cosine or tuned-constant.
        #[arg(long, conflicts_with_all = ["plan", "counts", "all"])]
        style: Option<PlanStyle>,
        /// Plan JSON.
        #[arg(long, conflicts_with_all = ["counts", "all"])]
        plan: Option<PathBuf>,
        /// Runs ending at each grid budget.
        #[arg(long, value_delimiter = ',', conflicts_with = "all")]
        counts: Vec<usize>,
        /// Every named plan style.
        #[arg(long)]
        all: bool,
        /// FLOP budgets as base,factor,count.
        #[arg(long, default_value_t = FlopGrid::default())]
        grid: FlopGrid,
    },
    /// Fit accuracy and cost as budgets are added.
    Accuracy {
        /// IsoFLOP curve table.
        #[arg(long)]
        curves: PathBuf,
        /// Reference fit JSON; the fit on every curve when absent.
        #[arg(long)]
        reference: Option<PathBuf>,
        #[command(flatten)]
        output: Output,
    },
    /// SVG figures from previously written tables.
    Report {
        /// Directory holding previously written tables.
        #[arg(long)]
        input: PathBuf,
        /// Defaults to the input directory.
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Every stage from a JSON config.
    Pipeline {
        /// Pipeline configuration (JSON).
        #[arg(long)]
        config: PathBuf,
        /// Budget at which the fit reports N* and its interval.
        #[arg(long)]
        reference_flops: Option<f64>,
        #[command(flatten)]
        output: Output,
    },
}

fn configure_threads() -> Result<(), commands::Failure> {
    let Ok(raw) = std::env::var("SCALELAW_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .map_err(|_| commands::Failure::new("config", anyhow::anyhow!("SCALELAW_THREADS={raw:?} is not a count")))?;
    if n > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| commands::Failure::new("config", e.into()))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = configure_threads().and_then(|_| commands::run(&cli));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let body = serde_json::json!({ "stage": f.stage, "error": format!("{:#}", f.error) });
            eprintln!("{body}");
            ExitCode::from(2)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn formats_parse() {
        let f = parse_formats("csv").unwrap();
        assert!(f.csv && !f.json && !f.svg);
        assert_eq!(parse_formats("svg,json,csv").unwrap(), Formats::default());
        assert!(parse_formats("").is_err());
        assert!(parse_formats("png").is_err());
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
