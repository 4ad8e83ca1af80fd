use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use clap::Args;
use log::{info, warn};
use serde::{Deserialize, Serialize};

use stream_etm::corpus::{Batch, Vocabulary};
use stream_etm::embeddings::{load_embeddings, EmbeddingMatrix, DEFAULT_MAX_ROWS};
use stream_etm::pipeline::{desk_stream_config, run_stream};
use stream_etm::stream::{write_proportions, StepRecord, StreamConfig};
use stream_etm::transport::Metric;
use stream_etm::{Error, Result};

use crate::files::{absolute, create_dir, read_json, step_dir, write_atomic, write_json, DataManifest, RUN_MANIFEST};

/// Every resolved input and setting of a run; rerunning it reproduces the
/// outputs exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub vocab: PathBuf,
    pub embeddings: PathBuf,
    pub batches: Vec<PathBuf>,
    pub max_embedding_rows: usize,
    pub stream: StreamConfig,
    pub seed: u64,
    pub output: PathBuf,
}

/// `none` disables the relative discovery rule.
#[derive(Debug, Clone, Copy)]
pub struct Cutoff(Option<f64>);

impl FromStr for Cutoff {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s.eq_ignore_ascii_case("none") {
            return Ok(Cutoff(None));
        }
        s.parse().map(|x| Cutoff(Some(x))).map_err(|_| format!("expected a number or `none`, got {s:?}"))
    }
}

#[derive(Debug, Args)]
pub struct StreamFlags {
    /// Topics of the first step.
    #[arg(long)]
    pub topics: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub mc_samples: Option<usize>,
    /// Memory parameter of the merge, in [0, 1].
    #[arg(long)]
    pub omega: Option<f64>,
    /// Marginal relaxation on the previous topics.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Marginal relaxation on the new topics.
    #[arg(long)]
    pub lambda_tilde: Option<f64>,
    /// `cosine`, `euclidean` or `minkowski:<p>`.
    #[arg(long)]
    pub metric: Option<Metric>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub mass_tol: Option<f64>,
    /// Cost beyond which a topic counts as new, or `none` for the absolute mass rule.
    #[arg(long)]
    pub discovery_cutoff: Option<Cutoff>,
    #[arg(long)]
    pub top_words: Option<usize>,
}

impl StreamFlags {
    pub fn apply(&self, cfg: &mut StreamConfig) {
        let set = |dst: &mut usize, src: Option<usize>| *dst = src.unwrap_or(*dst);
        set(&mut cfg.initial_topics, self.topics);
        set(&mut cfg.hidden, self.hidden);
        set(&mut cfg.train.epochs, self.epochs);
        set(&mut cfg.train.batch_size, self.batch_size);
        set(&mut cfg.train.mc_samples, self.mc_samples);
        set(&mut cfg.merge.uot.max_iter, self.max_iter);
        set(&mut cfg.top_words, self.top_words);
        let setf = |dst: &mut f64, src: Option<f64>| *dst = src.unwrap_or(*dst);
        setf(&mut cfg.train.learning_rate, self.lr);
        setf(&mut cfg.train.weight_decay, self.weight_decay);
        setf(&mut cfg.merge.omega, self.omega);
        setf(&mut cfg.merge.uot.lambda_a, self.lambda);
        setf(&mut cfg.merge.uot.lambda_atilde, self.lambda_tilde);
        setf(&mut cfg.merge.uot.tol, self.tol);
        setf(&mut cfg.merge.uot.mass_tol, self.mass_tol);
        if let Some(m) = self.metric {
            cfg.merge.metric = m;
        }
        if let Some(Cutoff(c)) = self.discovery_cutoff {
            cfg.merge.uot.discovery_cutoff = c;
        }
    }
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Manifest of an earlier run; reproduces it.
    #[arg(long, conflicts_with = "data")]
    pub manifest: Option<PathBuf>,
    /// Data manifest (or its directory) written by `preprocess` or `simulate`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Word vectors; required unless the data manifest names them.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long)]
    pub max_embedding_rows: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Start from the desk-scale preset (H=64, 300 epochs).
    #[arg(long)]
    pub desk: bool,
    #[command(flatten)]
    pub stream: StreamFlags,
    #[arg(long)]
    pub seed: Option<u64>,
}

fn resolve(args: &RunArgs) -> Result<RunManifest> {
    let mut m = if let Some(path) = &args.manifest {
        read_json::<RunManifest>(path)?
    } else {
        let data = args
            .data
            .as_ref()
            .ok_or_else(|| Error::InvalidConfig("pass --data or --manifest".into()))?;
        let (dm, base) = DataManifest::load(data)?;
        let embeddings = match (&args.embeddings, &dm.embeddings) {
            (Some(p), _) => p.clone(),
            (None, Some(p)) => base.join(p),
            (None, None) => return Err(Error::InvalidConfig("the data names no embeddings; pass --embeddings".into())),
        };
        RunManifest {
            vocab: absolute(&base.join(&dm.vocab))?,
            embeddings: absolute(&embeddings)?,
            batches: dm.batches.iter().map(|b| absolute(&base.join(b))).collect::<Result<_>>()?,
            max_embedding_rows: DEFAULT_MAX_ROWS,
            stream: if args.desk { desk_stream_config() } else { StreamConfig::default() },
            seed: 0,
            output: PathBuf::new(),
        }
    };
    if args.manifest.is_some() && args.embeddings.is_some() {
        m.embeddings = absolute(args.embeddings.as_deref().expect("checked"))?;
    }
    args.stream.apply(&mut m.stream);
    m.seed = args.seed.unwrap_or(m.seed);
    m.max_embedding_rows = args.max_embedding_rows.unwrap_or(m.max_embedding_rows);
    if let Some(out) = &args.out {
        m.output = out.clone();
    }
    if m.output.as_os_str().is_empty() {
        return Err(Error::InvalidConfig("pass --out".into()));
    }
    m.stream.validate()?;
    Ok(m)
}

/// Vocabulary restricted to words with vectors, the vectors and the batches
/// re-indexed into that vocabulary.
pub struct Inputs {
    pub vocab: Vocabulary,
    pub rho: Arc<EmbeddingMatrix>,
    pub batches: Vec<Batch>,
}

pub fn load_inputs(m: &RunManifest) -> Result<Inputs> {
    let full = Vocabulary::load(&m.vocab)?;
    let loaded = load_embeddings(&m.embeddings, &full, m.max_embedding_rows)?;
    let mut batches = Vec::with_capacity(m.batches.len());
    for (t, path) in m.batches.iter().enumerate() {
        let mut b = Batch::load(path, t, full.len())?;
        if loaded.dropped > 0 {
            let lost = b.reindex(&full, &loaded.vocab);
            if lost > 0 {
                warn!("batch {t}: {lost} documents have no embedded words and were dropped");
            }
        }
        batches.push(b);
    }
    Ok(Inputs { vocab: loaded.vocab, rho: Arc::new(loaded.embeddings), batches })
}

fn write_step(out: &Path, vocab_hash: &str, rec: &StepRecord, art: &stream_etm::stream::StepArtifacts) -> Result<()> {
    let dir = step_dir(out, rec.step);
    create_dir(&dir)?;
    write_json(&dir.join("model.json"), &art.model.to_checkpoint(vocab_hash))?;
    if let Some((cost, plan)) = &art.transport {
        write_json(&dir.join("plan.json"), &plan.dump(cost))?;
    }
    write_json(&dir.join("record.json"), rec)
}

pub fn run(args: RunArgs) -> Result<()> {
    let mut manifest = resolve(&args)?;
    create_dir(&manifest.output)?;
    manifest.output = absolute(&manifest.output)?;
    let out = manifest.output.clone();
    write_json(&out.join(RUN_MANIFEST), &manifest)?;

    let inputs = load_inputs(&manifest)?;
    inputs.vocab.save(&out.join("vocab.json"))?;
    let hash = inputs.vocab.hash();
    let mut done: Vec<StepRecord> = Vec::new();
    let result = run_stream(inputs.rho.clone(), &inputs.vocab, &inputs.batches, &manifest.stream, manifest.seed, |rec, art| {
        write_step(&out, &hash, rec, art)?;
        done.push(rec.clone());
        let mut csv = Vec::new();
        write_proportions(&done, &mut csv)?;
        write_atomic(&out.join("proportions.csv"), &csv)
    })?;
    write_atomic(&out.join("stream_result.json"), result.to_json()?.as_bytes())?;
    info!("run written to {}", out.display());
    println!("processed {} steps, {} topics, outputs in {}", result.steps.len(), result.registry.len(), out.display());
    Ok(())
}
