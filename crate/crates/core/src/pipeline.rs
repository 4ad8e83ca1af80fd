//! Whole-run helpers shared by the command line and the tests: synthetic
//! stream generation and the sequential stream loop.

use std::sync::Arc;

use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::corpus::{Batch, Vocabulary};
use crate::embeddings::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::etm::TrainConfig;
use crate::stream::{
    sample_batch, DocumentPools, DEFAULT_BATCH_DOCS, Schedule, ScheduleSpec, StepArtifacts, StepRecord, StreamConfig, StreamResult, StreamState,
};
use crate::synthetic::{generate_world, SyntheticWorld, WorldConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub world: WorldConfig,
    pub schedule: ScheduleSpec,
    pub docs_per_step: usize,
    /// Documents generated per true topic before batches are sampled.
    pub pool_per_topic: usize,
    pub seed: u64,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            world: WorldConfig::default(),
            schedule: ScheduleSpec::Dynamic { k: 3, t: 8, p: 1.0, alpha: 2.0, seed: 0 },
            docs_per_step: DEFAULT_BATCH_DOCS,
            pool_per_topic: 100,
            seed: 0,
        }
    }
}

impl SimulationConfig {
    /// Desk-scale stream: three true topics over eight steps of 200 documents.
    pub fn desk() -> Self {
        Self { docs_per_step: 200, ..Self::default() }
    }
}

#[derive(Debug, Clone)]
pub struct Simulation {
    pub world: SyntheticWorld,
    pub schedule: Schedule,
    /// One batch per active schedule row, numbered consecutively.
    pub batches: Vec<Batch>,
    /// Schedule row behind each batch.
    pub schedule_rows: Vec<usize>,
}

impl Simulation {
    pub fn change_steps(&self) -> Vec<usize> {
        batch_change_steps(&self.schedule, &self.schedule_rows)
    }
}

/// Batches whose set of active true topics differs from the batch before.
pub fn batch_change_steps(schedule: &Schedule, rows: &[usize]) -> Vec<usize> {
    let active = |t: usize| -> Vec<bool> { schedule.tau[rows[t]].iter().map(|&w| w > 0.0).collect() };
    (1..rows.len()).filter(|&t| active(t) != active(t - 1)).collect()
}

/// One batch per active schedule row, numbered consecutively, with the row
/// behind each batch.
pub fn sample_stream(pools: &DocumentPools, schedule: &Schedule, docs_per_step: usize, seed: u64) -> Result<(Vec<Batch>, Vec<usize>)> {
    if schedule.topics() != pools.labels.len() {
        return Err(Error::Dimension(format!(
            "schedule covers {} topics but {} labelled pools were given",
            schedule.topics(),
            pools.labels.len()
        )));
    }
    let mut batches = Vec::new();
    let mut rows = Vec::new();
    for (row, tau) in schedule.tau.iter().enumerate() {
        if schedule.is_inactive(row) {
            warn!("schedule row {row} is inactive, no batch emitted");
            continue;
        }
        let step = batches.len();
        batches.push(sample_batch(pools, tau, docs_per_step, seed.wrapping_add(1 + row as u64), step)?);
        rows.push(row);
    }
    Ok((batches, rows))
}

pub fn simulate(cfg: &SimulationConfig) -> Result<Simulation> {
    if cfg.docs_per_step == 0 || cfg.pool_per_topic == 0 {
        return Err(Error::InvalidConfig("documents per step and per pool must be positive".into()));
    }
    let world = generate_world(&cfg.world)?;
    let schedule = Schedule::from_spec(&cfg.schedule)?;
    let pools = DocumentPools::from_documents(world.document_pool(cfg.pool_per_topic, cfg.world.doc_len, cfg.seed));
    let (batches, schedule_rows) = sample_stream(&pools, &schedule, cfg.docs_per_step, cfg.seed)?;
    Ok(Simulation { world, schedule, batches, schedule_rows })
}

/// Reduced stream configuration for desk-scale runs.
pub fn desk_stream_config() -> StreamConfig {
    StreamConfig { hidden: 64, train: TrainConfig { epochs: 300, ..TrainConfig::default() }, ..StreamConfig::default() }
}

/// Runs every batch in order. `on_step` sees each record as soon as the step
/// is done and may persist it; an error from it stops the run.
pub fn run_stream<F>(
    rho: Arc<EmbeddingMatrix>,
    vocab: &Vocabulary,
    batches: &[Batch],
    cfg: &StreamConfig,
    seed: u64,
    mut on_step: F,
) -> Result<StreamResult>
where
    F: FnMut(&StepRecord, &StepArtifacts) -> Result<()>,
{
    let mut state = StreamState::new(rho, seed);
    for batch in batches {
        let artifacts = state.step(batch, cfg, vocab)?;
        let record = state.records.last().expect("step appends a record");
        info!("step {} done with {} topics", record.step, state.registry.len());
        on_step(record, &artifacts)?;
    }
    Ok(state.result())
}
