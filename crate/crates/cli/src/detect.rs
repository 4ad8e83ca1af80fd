use std::collections::BTreeSet;
use std::fs::File;
use std::path::PathBuf;

use clap::Args;
use serde::Serialize;

use stream_etm::changepoint::{
    alerts_at, default_grid, evaluate_roc, read_series_csv, series_probabilities, write_roc_csv, ChangepointAlert,
    OcpdPrior, SeriesSet, DEFAULT_GRID_POINTS,
};
use stream_etm::{Error, Result};

use crate::files::{absolute, create_dir, read_json, write_atomic, write_json};

#[derive(Debug, Args)]
pub struct DetectArgs {
    /// `step,topic_id,proportion` CSV, as written by `run`.
    #[arg(long)]
    pub series: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    /// Prior mean; the first observation of each series when omitted.
    #[arg(long)]
    pub mu0: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    pub kappa0: f64,
    #[arg(long, default_value_t = 1.0)]
    pub alpha0: f64,
    #[arg(long, default_value_t = 0.01)]
    pub beta0: f64,
    /// Expected steps between change points.
    #[arg(long, default_value_t = 10.0)]
    pub hazard_lambda: f64,
    #[arg(long)]
    pub max_run: Option<usize>,
    /// JSON array of true change steps; enables the ROC sweep.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_GRID_POINTS)]
    pub grid_points: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Serialize)]
struct Metadata {
    series: PathBuf,
    threshold: f64,
    prior: OcpdPrior,
    steps: usize,
    topics: usize,
}

#[derive(Serialize)]
struct AlertReport {
    metadata: Metadata,
    alerts: Vec<ChangepointAlert>,
    /// Change-point probability per topic and step.
    probabilities: SeriesSet,
}

pub fn run(args: DetectArgs) -> Result<()> {
    if !(0.0..=1.0).contains(&args.threshold) {
        return Err(Error::InvalidConfig(format!("threshold {} is outside [0, 1]", args.threshold)));
    }
    let prior = OcpdPrior {
        mu0: args.mu0,
        kappa0: args.kappa0,
        alpha0: args.alpha0,
        beta0: args.beta0,
        hazard_lambda: args.hazard_lambda,
        max_run: args.max_run,
    };
    prior.validate()?;
    let file = File::open(&args.series).map_err(|e| Error::io(&args.series, e))?;
    let series = read_series_csv(file)?;
    let steps = series.values().map(Vec::len).max().unwrap_or(0);
    let probs = series_probabilities(&series, &prior)?;
    create_dir(&args.out)?;

    let alerts = alerts_at(&probs, args.threshold);
    let report = AlertReport {
        metadata: Metadata {
            series: absolute(&args.series)?,
            threshold: args.threshold,
            prior,
            steps,
            topics: series.len(),
        },
        alerts,
        probabilities: probs.clone(),
    };
    write_json(&args.out.join("alerts.json"), &report)?;

    if let Some(path) = &args.truth {
        if args.grid_points < 2 {
            return Err(Error::InvalidConfig("the threshold grid needs at least two points".into()));
        }
        let truth: BTreeSet<usize> = read_json(path)?;
        let roc = evaluate_roc(&truth, |th| alerts_at(&probs, th), &default_grid(args.grid_points), steps)?;
        let mut csv = Vec::new();
        write_roc_csv(&roc, &mut csv)?;
        write_atomic(&args.out.join("roc.csv"), &csv)?;
    }
    println!("{} alerts over {} topics at threshold {}", report.alerts.len(), report.metadata.topics, args.threshold);
    Ok(())
}
