use std::path::PathBuf;

use clap::Args;

use stream_etm::corpus::{Batch, Vocabulary};
use stream_etm::embeddings::write_embeddings;
use stream_etm::pipeline::{batch_change_steps, sample_stream, simulate, SimulationConfig};
use stream_etm::stream::{parse_schedule, DocumentPools, Schedule, ScheduleSpec};
use stream_etm::{Error, Result};

use crate::files::{
    absolute, batch_file, create_dir, write_atomic, write_json, DataManifest, SimulationInfo, DATA_MANIFEST,
};

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// Start from the desk-scale preset (200 documents per step).
    #[arg(long)]
    pub desk: bool,
    /// Schedule JSON (`{"kind":"custom",...}` or `{"kind":"dynamic",...}`); overrides the dynamic flags.
    #[arg(long)]
    pub schedule: Option<PathBuf>,
    /// Number of true topics.
    #[arg(long)]
    pub topics: Option<usize>,
    #[arg(long)]
    pub steps: Option<usize>,
    /// Probability that a topic is active at a step.
    #[arg(long)]
    pub p: Option<f64>,
    /// Dirichlet concentration of active topics, above 1.
    #[arg(long)]
    pub dir_alpha: Option<f64>,
    #[arg(long)]
    pub schedule_seed: Option<u64>,
    #[arg(long)]
    pub docs_per_step: Option<usize>,
    /// Documents generated per true topic before sampling batches.
    #[arg(long)]
    pub pool_per_topic: Option<usize>,
    #[arg(long)]
    pub words_per_topic: Option<usize>,
    #[arg(long)]
    pub background_words: Option<usize>,
    #[arg(long)]
    pub embed_dim: Option<usize>,
    /// Labelled documents (batch JSONL) to sample from instead of a synthetic world.
    #[arg(long, requires = "vocab")]
    pub pool: Option<PathBuf>,
    /// Vocabulary of `--pool`.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Word vectors recorded for the run when sampling from `--pool`.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl SimulateArgs {
    fn config(&self) -> Result<SimulationConfig> {
        let mut cfg = if self.desk { SimulationConfig::desk() } else { SimulationConfig::default() };
        cfg.seed = self.seed;
        if let Some(path) = &self.schedule {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            cfg.schedule = parse_schedule(&text)?.to_spec();
        } else if let ScheduleSpec::Dynamic { k, t, p, alpha, seed } = &mut cfg.schedule {
            *k = self.topics.unwrap_or(*k);
            *t = self.steps.unwrap_or(*t);
            *p = self.p.unwrap_or(*p);
            *alpha = self.dir_alpha.unwrap_or(*alpha);
            *seed = self.schedule_seed.unwrap_or(*seed);
        }
        cfg.docs_per_step = self.docs_per_step.unwrap_or(cfg.docs_per_step);
        cfg.pool_per_topic = self.pool_per_topic.unwrap_or(cfg.pool_per_topic);
        let w = &mut cfg.world;
        w.topics = Schedule::from_spec(&cfg.schedule)?.topics();
        w.words_per_topic = self.words_per_topic.unwrap_or(w.words_per_topic);
        w.background_words = self.background_words.unwrap_or(w.background_words);
        w.embed_dim = self.embed_dim.unwrap_or(w.embed_dim);
        w.seed = self.seed;
        Ok(cfg)
    }
}

fn save_batches(out: &std::path::Path, batches: &[Batch]) -> Result<Vec<PathBuf>> {
    create_dir(&out.join("batches"))?;
    batches
        .iter()
        .map(|b| {
            let rel = batch_file(b.step_index);
            let mut bytes = Vec::new();
            b.write_jsonl(&mut bytes).map_err(|e| Error::io("batch buffer", e))?;
            write_atomic(&out.join(&rel), &bytes)?;
            Ok(rel)
        })
        .collect()
}

pub fn run(args: SimulateArgs) -> Result<()> {
    let cfg = args.config()?;
    create_dir(&args.out)?;
    let (schedule, batches, rows, vocab_path, embeddings) = match &args.pool {
        Some(pool) => {
            let vocab_file = args.vocab.as_ref().expect("clap requires --vocab with --pool");
            let vocab = Vocabulary::load(vocab_file)?;
            let docs = Batch::load(pool, 0, vocab.len())?.docs;
            let pools = DocumentPools::from_documents(docs);
            let schedule = Schedule::from_spec(&cfg.schedule)?;
            let (batches, rows) = sample_stream(&pools, &schedule, cfg.docs_per_step, cfg.seed)?;
            let embeddings = args.embeddings.as_deref().map(absolute).transpose()?;
            (schedule, batches, rows, absolute(vocab_file)?, embeddings)
        }
        None => {
            let sim = simulate(&cfg)?;
            let emb_path = args.out.join("embeddings.txt");
            let mut bytes = Vec::new();
            write_embeddings(&mut bytes, &sim.world.vocab, &sim.world.embeddings)
                .map_err(|e| Error::io(&emb_path, e))?;
            write_atomic(&emb_path, &bytes)?;
            sim.world.vocab.save(&args.out.join("vocab.json"))?;
            (sim.schedule, sim.batches, sim.schedule_rows, "vocab.json".into(), Some("embeddings.txt".into()))
        }
    };
    let change_steps = batch_change_steps(&schedule, &rows);
    write_json(&args.out.join("schedule.json"), &schedule.to_spec())?;
    write_json(&args.out.join("truth.json"), &change_steps)?;
    let manifest = DataManifest {
        vocab: vocab_path,
        embeddings,
        batches: save_batches(&args.out, &batches)?,
        preprocess: None,
        simulation: Some(SimulationInfo {
            config: cfg,
            pool: args.pool.as_deref().map(absolute).transpose()?,
            schedule_rows: rows,
            change_steps,
        }),
    };
    write_json(&args.out.join(DATA_MANIFEST), &manifest)?;
    println!("wrote {} batches to {}", batches.len(), args.out.display());
    Ok(())
}
