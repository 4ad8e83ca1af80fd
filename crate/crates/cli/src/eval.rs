use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::Args;
use serde::Serialize;

use stream_etm::bench::{default_methods, run_benchmark, BenchConfig, MethodSummary};
use stream_etm::etm::{Checkpoint, EtmModel};
use stream_etm::metrics::{harmonic_mean, merge_discovery_accuracy, step_metrics, MergeTruth, StepMetrics, DEFAULT_TOP_N};
use stream_etm::stream::StreamResult;
use stream_etm::{Error, Result};

use crate::files::{create_dir, read_json, step_dir, write_json, RUN_MANIFEST};
use crate::run::{load_inputs, RunManifest};

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Output directory of `run`; reports coherence and diversity per step.
    #[arg(long)]
    pub run: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_TOP_N)]
    pub top_n: usize,
    /// JSON map from step to `{common: {j: k}, novel: [j]}`; scores the run's merges.
    #[arg(long, requires = "run")]
    pub merge_truth: Option<PathBuf>,
    /// Runs the merge/discovery benchmark over `--bench-seeds`.
    #[arg(long)]
    pub table1: bool,
    #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4")]
    pub bench_seeds: Vec<u64>,
    #[arg(long, default_value_t = BenchConfig::default().trials)]
    pub trials: usize,
    /// Cosine cutoff shared by the discovery rule and the distance baselines.
    #[arg(long, default_value_t = BenchConfig::default().cutoff)]
    pub cutoff: f64,
    #[arg(long, default_value_t = BenchConfig::default().minkowski_p)]
    pub minkowski_p: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Serialize)]
struct MergeScore {
    step: usize,
    ma: f64,
    da: f64,
}

#[derive(Serialize)]
struct RunReport {
    run: PathBuf,
    top_n: usize,
    registry_size: usize,
    steps: Vec<StepMetrics>,
    mean_td: f64,
    mean_tc: Option<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    merges: Vec<MergeScore>,
}

fn evaluate_run(dir: &Path, top_n: usize, truth: Option<&Path>) -> Result<RunReport> {
    let manifest: RunManifest = read_json(&dir.join(RUN_MANIFEST))?;
    let result: StreamResult = read_json(&dir.join("stream_result.json"))?;
    let inputs = load_inputs(&manifest)?;
    let hash = inputs.vocab.hash();
    let mut steps = Vec::with_capacity(result.steps.len());
    for rec in &result.steps {
        let ckpt: Checkpoint = read_json(&step_dir(dir, rec.step).join("model.json"))?;
        if ckpt.vocab_hash != hash {
            return Err(Error::Dimension(format!("step {} was trained on another vocabulary", rec.step)));
        }
        let model = EtmModel::from_checkpoint(&ckpt, inputs.rho.clone())?;
        let batch = inputs
            .batches
            .get(rec.step)
            .ok_or_else(|| Error::Dimension(format!("no batch for step {}", rec.step)))?;
        steps.push(step_metrics(rec.step, &model.beta(), &inputs.vocab, &batch.docs, top_n));
    }
    let merges = match truth {
        Some(path) => {
            let truth: BTreeMap<usize, MergeTruth> = read_json(path)?;
            truth
                .iter()
                .map(|(&step, t)| {
                    let report = result
                        .steps
                        .get(step)
                        .and_then(|r| r.merge.as_ref())
                        .ok_or_else(|| Error::Dimension(format!("step {step} has no merge report")))?;
                    let (ma, da) = merge_discovery_accuracy(report, t);
                    Ok(MergeScore { step, ma, da })
                })
                .collect::<Result<_>>()?
        }
        None => Vec::new(),
    };
    let n = steps.len().max(1) as f64;
    let tcs: Vec<f64> = steps.iter().filter_map(|s| s.tc).collect();
    Ok(RunReport {
        run: dir.to_path_buf(),
        top_n,
        registry_size: result.registry.len(),
        mean_td: steps.iter().map(|s| s.td).sum::<f64>() / n,
        mean_tc: (!tcs.is_empty()).then(|| tcs.iter().sum::<f64>() / tcs.len() as f64),
        steps,
        merges,
    })
}

#[derive(Serialize)]
struct SeedRow {
    seed: u64,
    methods: Vec<MethodSummary>,
}

#[derive(Serialize)]
struct TableRow {
    method: String,
    #[serde(rename = "MA")]
    ma: f64,
    #[serde(rename = "DA")]
    da: f64,
    #[serde(rename = "H")]
    h: f64,
}

#[derive(Serialize)]
struct TableReport {
    config: BenchConfig,
    seeds: Vec<u64>,
    summary: Vec<TableRow>,
    per_seed: Vec<SeedRow>,
}

/// Seeds run on separate threads; rows come back in seed order.
fn table1(args: &EvalArgs) -> Result<TableReport> {
    if args.bench_seeds.is_empty() {
        return Err(Error::InvalidConfig("--bench-seeds is empty".into()));
    }
    let base = BenchConfig { trials: args.trials, cutoff: args.cutoff, minkowski_p: args.minkowski_p, ..BenchConfig::default() };
    let methods = default_methods(&base);
    let per_seed: Vec<SeedRow> = std::thread::scope(|s| {
        let handles: Vec<_> = args
            .bench_seeds
            .iter()
            .map(|&seed| {
                let cfg = BenchConfig { seed, ..base.clone() };
                let methods = &methods;
                s.spawn(move || run_benchmark(&cfg, methods).map(|m| SeedRow { seed, methods: m }))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("benchmark thread panicked")).collect::<Result<_>>()
    })?;
    let n = per_seed.len() as f64;
    let summary = methods
        .iter()
        .enumerate()
        .map(|(i, m)| {
            let ma = per_seed.iter().map(|r| r.methods[i].ma_mean).sum::<f64>() / n;
            let da = per_seed.iter().map(|r| r.methods[i].da_mean).sum::<f64>() / n;
            TableRow { method: m.label(), ma, da, h: harmonic_mean(ma, da) }
        })
        .collect();
    Ok(TableReport { config: base, seeds: args.bench_seeds.clone(), summary, per_seed })
}

pub fn run(args: EvalArgs) -> Result<()> {
    if args.run.is_none() && !args.table1 {
        return Err(Error::InvalidConfig("nothing to evaluate: pass --run and/or --table1".into()));
    }
    create_dir(&args.out)?;
    if let Some(dir) = &args.run {
        let report = evaluate_run(dir, args.top_n, args.merge_truth.as_deref())?;
        write_json(&args.out.join("metrics.json"), &report)?;
        println!("{} steps, mean TD {:.3}, registry {} topics", report.steps.len(), report.mean_td, report.registry_size);
    }
    if args.table1 {
        let report = table1(&args)?;
        write_json(&args.out.join("table1.json"), &report)?;
        println!("{:<22} {:>6} {:>6} {:>6}", "method", "MA", "DA", "H");
        for r in &report.summary {
            println!("{:<22} {:>6.3} {:>6.3} {:>6.3}", r.method, r.ma, r.da, r.h);
        }
    }
    Ok(())
}
