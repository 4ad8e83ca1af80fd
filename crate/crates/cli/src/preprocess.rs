use std::collections::BTreeMap;
use std::path::PathBuf;

use clap::Args;
use log::warn;

use stream_etm::corpus::{
    build_vocabulary, default_stopwords, load_stopwords, read_raw_corpus, tokenize, vectorize, Batch, RawDocument,
    VocabConfig, DEFAULT_MAX_DF_RATIO, DEFAULT_MIN_COUNT, DEFAULT_VOCAB_CAP,
};
use stream_etm::stream::DEFAULT_BATCH_DOCS;
use stream_etm::{Error, Result};

use crate::files::{absolute, batch_file, create_dir, write_atomic, write_json, DataManifest, PreprocessSettings, DATA_MANIFEST};

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    /// Directory of `.txt` files or a JSONL file with `id`, `text`, optional `label` and `step`.
    #[arg(long)]
    pub corpus: PathBuf,
    /// Newline-separated stopword list; the bundled English list when omitted.
    #[arg(long)]
    pub stopwords: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_MIN_COUNT)]
    pub min_count: usize,
    /// Words in a larger fraction of documents are dropped.
    #[arg(long, default_value_t = DEFAULT_MAX_DF_RATIO)]
    pub max_df: f64,
    #[arg(long, default_value_t = DEFAULT_VOCAB_CAP)]
    pub vocab_cap: usize,
    /// Documents per batch when the corpus carries no `step` field.
    #[arg(long, default_value_t = DEFAULT_BATCH_DOCS)]
    pub docs_per_step: usize,
    #[arg(long)]
    pub out: PathBuf,
}

/// Groups documents by their `step` field, or cuts the corpus into
/// consecutive chunks when any document lacks one.
fn split_steps<T>(docs: Vec<(RawDocument, T)>, docs_per_step: usize) -> Vec<Vec<(RawDocument, T)>> {
    if docs.iter().all(|(d, _)| d.step.is_some()) {
        let mut by_step: BTreeMap<usize, Vec<(RawDocument, T)>> = BTreeMap::new();
        for d in docs {
            by_step.entry(d.0.step.expect("checked")).or_default().push(d);
        }
        return by_step.into_values().collect();
    }
    if docs.iter().any(|(d, _)| d.step.is_some()) {
        warn!("some documents carry no step; ignoring steps and chunking by {docs_per_step}");
    }
    let mut steps = Vec::new();
    let mut docs = docs.into_iter().peekable();
    while docs.peek().is_some() {
        steps.push(docs.by_ref().take(docs_per_step).collect());
    }
    steps
}

pub fn run(args: PreprocessArgs) -> Result<()> {
    if args.docs_per_step == 0 {
        return Err(Error::InvalidConfig("--docs-per-step must be positive".into()));
    }
    let raw = read_raw_corpus(&args.corpus)?;
    let stopwords = match &args.stopwords {
        Some(p) => load_stopwords(p)?,
        None => default_stopwords(),
    };
    let tokens: Vec<Vec<String>> = raw.iter().map(|d| tokenize(&d.text)).collect();
    let cfg = VocabConfig { min_count: args.min_count, max_df_ratio: args.max_df, cap: args.vocab_cap };
    let vocab = build_vocabulary(&tokens, &stopwords, &cfg)?;

    let n_docs = raw.len();
    create_dir(&args.out.join("batches"))?;
    let mut batches = Vec::new();
    let mut kept = 0;
    for (step, docs) in split_steps(raw.into_iter().zip(tokens).collect(), args.docs_per_step).into_iter().enumerate() {
        let docs: Vec<_> =
            docs.iter().filter_map(|(d, t)| vectorize(&d.id, t, d.label.as_deref(), &vocab)).collect();
        kept += docs.len();
        let batch = Batch { docs, step_index: step };
        let mut bytes = Vec::new();
        batch.write_jsonl(&mut bytes).map_err(|e| Error::io("batch buffer", e))?;
        let rel = batch_file(step);
        write_atomic(&args.out.join(&rel), &bytes)?;
        batches.push(rel);
    }
    vocab.save(&args.out.join("vocab.json"))?;

    let settings = PreprocessSettings {
        corpus: absolute(&args.corpus)?,
        stopwords: args.stopwords.as_deref().map(absolute).transpose()?,
        min_count: args.min_count,
        max_df: args.max_df,
        vocab_cap: args.vocab_cap,
        docs_per_step: args.docs_per_step,
        documents: kept,
        dropped_documents: n_docs - kept,
        vocabulary_size: vocab.len(),
        vocab_hash: vocab.hash(),
    };
    let manifest = DataManifest {
        vocab: "vocab.json".into(),
        embeddings: None,
        batches,
        preprocess: Some(settings),
        simulation: None,
    };
    write_json(&args.out.join(DATA_MANIFEST), &manifest)?;
    println!(
        "kept {kept} of {n_docs} documents ({} dropped), vocabulary {} words, {} batches",
        n_docs - kept,
        vocab.len(),
        manifest.batches.len()
    );
    Ok(())
}
