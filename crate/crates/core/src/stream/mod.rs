//! The online loop: train on each batch, align the batch's topics with the
//! registry, merge, then retrain the encoder against the merged topics.

mod merge;
mod schedule;

use std::collections::BTreeMap;
use std::io::Write;
use std::sync::Arc;

use log::info;
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use merge::{
    distance_merge, mean_norm, merge_alphas, metric_cutoff, merge_assignments, scaled_cost, uot_merge, Discovery, Match,
    MergeConfig, MergeReport, SolvedMerge,
};
pub use schedule::{
    generate_dynamic_schedule, load_custom_schedule, parse_schedule, sample_batch, validate_custom,
    DocumentPools, Schedule, ScheduleKind, ScheduleSpec, DEFAULT_BATCH_DOCS,
};

use crate::corpus::{Batch, Vocabulary};
use crate::embeddings::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::etm::{init_model, train, EtmModel, TrainConfig, DEFAULT_HIDDEN, DEFAULT_TOPICS};
use crate::metrics::top_words;
use crate::transport::{CostMatrix, TransportPlan};

pub const DEFAULT_TOP_WORDS: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamConfig {
    pub initial_topics: usize,
    pub hidden: usize,
    pub train: TrainConfig,
    pub merge: MergeConfig,
    pub top_words: usize,
}

impl Default for StreamConfig {
    fn default() -> Self {
        Self {
            initial_topics: DEFAULT_TOPICS,
            hidden: DEFAULT_HIDDEN,
            train: TrainConfig::default(),
            merge: MergeConfig::default(),
            top_words: DEFAULT_TOP_WORDS,
        }
    }
}

impl StreamConfig {
    pub fn validate(&self) -> Result<()> {
        if self.initial_topics == 0 || self.hidden == 0 || self.top_words == 0 {
            return Err(Error::InvalidConfig(
                "initial topics, hidden size and top-word count must be positive".into(),
            ));
        }
        self.train.validate()?;
        self.merge.validate()
    }
}

/// Global topics. Ids are assigned in order and never removed, so the id of
/// a topic equals its column in `alpha`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicRegistry {
    pub ids: Vec<usize>,
    #[serde(skip)]
    pub alpha: Array2<f64>,
    pub birth_step: Vec<usize>,
    /// Per processed step, mean topic proportion by id.
    pub history: Vec<BTreeMap<usize, f64>>,
}

impl TopicRegistry {
    fn new(l: usize) -> Self {
        Self { ids: Vec::new(), alpha: Array2::zeros((l, 0)), birth_step: Vec::new(), history: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    fn adopt(&mut self, alpha: Array2<f64>, step: usize) {
        for id in self.ids.len()..alpha.ncols() {
            self.ids.push(id);
            self.birth_step.push(step);
        }
        self.alpha = alpha;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub proportions: BTreeMap<usize, f64>,
    pub top_words: BTreeMap<usize, Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub merge: Option<MergeReport>,
    pub train_loss: f64,
    pub retrain_loss: Option<f64>,
}

/// Everything one step produced beyond its record.
#[derive(Debug, Clone)]
pub struct StepArtifacts {
    pub model: EtmModel,
    pub transport: Option<(CostMatrix, TransportPlan)>,
}

#[derive(Debug, Clone)]
pub struct StreamState {
    pub registry: TopicRegistry,
    pub model: Option<EtmModel>,
    pub records: Vec<StepRecord>,
    rho: Arc<EmbeddingMatrix>,
    seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamResult {
    pub registry: TopicRegistry,
    pub steps: Vec<StepRecord>,
}

fn mix(seed: u64, step: usize, phase: u64) -> u64 {
    // splitmix64 finalizer over the combined inputs
    let mut z = seed ^ (step as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ phase.wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl StreamState {
    pub fn new(rho: Arc<EmbeddingMatrix>, seed: u64) -> Self {
        Self { registry: TopicRegistry::new(rho.dim()), model: None, records: Vec::new(), rho, seed }
    }

    pub fn steps_done(&self) -> usize {
        self.records.len()
    }

    pub fn result(&self) -> StreamResult {
        StreamResult { registry: self.registry.clone(), steps: self.records.clone() }
    }

    /// Processes one batch and appends its record.
    pub fn step(&mut self, batch: &Batch, cfg: &StreamConfig, vocab: &Vocabulary) -> Result<StepArtifacts> {
        stream_step(self, batch, cfg, vocab)
    }
}

/// One step of the loop. The first step trains freely and registers every
/// topic. Later steps start from the registry's embeddings and the previous
/// encoder, train freely, merge by transport, grow the encoder heads for new
/// ids and retrain with the merged embeddings frozen.
pub fn stream_step(state: &mut StreamState, batch: &Batch, cfg: &StreamConfig, vocab: &Vocabulary) -> Result<StepArtifacts> {
    cfg.validate()?;
    if batch.is_empty() {
        return Err(Error::InvalidConfig(format!("batch {} has no documents", batch.step_index)));
    }
    if vocab.len() != state.rho.vocab_size() {
        return Err(Error::Dimension(format!(
            "vocabulary has {} words but embeddings cover {}",
            vocab.len(),
            state.rho.vocab_size()
        )));
    }
    let step = state.records.len();
    let train_cfg = |phase| TrainConfig { seed: mix(state.seed ^ cfg.train.seed, step, phase), ..cfg.train.clone() };

    let (model, merge, transport, train_loss, retrain_loss) = match state.model.take() {
        None => {
            let init = init_model(cfg.initial_topics, cfg.hidden, state.rho.clone(), mix(state.seed, step, 0))?;
            let out = train(init, batch, &train_cfg(1), false)?;
            let loss = out.loss_trace.last().copied().unwrap_or(f64::NAN);
            state.registry.adopt(out.model.alpha.clone(), step);
            (out.model, None, None, loss, None)
        }
        Some(mut prev) => {
            let prev_alpha = state.registry.alpha.clone();
            prev.alpha = prev_alpha.clone();
            let free = train(prev, batch, &train_cfg(1), false)?;
            let train_loss = free.loss_trace.last().copied().unwrap_or(f64::NAN);
            let SolvedMerge { alpha, report, cost, plan } = uot_merge(&free.model.alpha, &prev_alpha, &cfg.merge)?;

            let mut model = free.model;
            let k_prev = prev_alpha.ncols();
            let keep: Vec<Option<usize>> = (0..alpha.ncols()).map(|c| (c < k_prev).then_some(c)).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(mix(state.seed, step, 2));
            model.encoder.rebuild_heads(&keep, &mut rng);
            model.alpha = alpha.clone();
            let retrained = train(model, batch, &train_cfg(3), true)?;
            let retrain_loss = retrained.loss_trace.last().copied();
            debug_assert_eq!(retrained.model.alpha, alpha);
            state.registry.adopt(alpha, step);
            (retrained.model, Some(report), Some((cost, plan)), train_loss, retrain_loss)
        }
    };

    let theta = model.mean_theta(&batch.docs);
    let proportions: BTreeMap<usize, f64> = state.registry.ids.iter().map(|&id| (id, theta[id])).collect();
    let words = top_words(&model.beta(), vocab, cfg.top_words);
    let top: BTreeMap<usize, Vec<String>> =
        state.registry.ids.iter().map(|&id| (id, words.words(id, vocab))).collect();
    info!(
        "step {step}: {} topics, {} new",
        state.registry.len(),
        merge.as_ref().map_or(state.registry.len(), |m| m.discoveries.len())
    );
    state.registry.history.push(proportions.clone());
    state.records.push(StepRecord { step, proportions, top_words: top, merge, train_loss, retrain_loss });
    state.model = Some(model.clone());
    Ok(StepArtifacts { model, transport })
}

impl StreamResult {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::json("stream result", e))
    }

    /// `step,topic_id,proportion` rows, one per live topic per step.
    pub fn write_proportions_csv<W: Write>(&self, out: W) -> Result<()> {
        write_proportions(&self.steps, out)
    }
}

pub fn write_proportions<W: Write>(steps: &[StepRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let wrap = |e: csv::Error| Error::Format { line: 0, msg: e.to_string() };
    w.write_record(["step", "topic_id", "proportion"]).map_err(wrap)?;
    for s in steps {
        for (id, p) in &s.proportions {
            w.write_record([s.step.to_string(), id.to_string(), p.to_string()]).map_err(wrap)?;
        }
    }
    w.flush().map_err(|e| Error::io("proportions csv", e))
}
