use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::corpus::{Batch, BowDocument};
use crate::error::{Error, Result};

pub const DEFAULT_BATCH_DOCS: usize = 500;
const SUM_TOL: f64 = 1e-6;

/// File form of a schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ScheduleSpec {
    Custom {
        tau: Vec<Vec<f64>>,
    },
    Dynamic {
        #[serde(rename = "K")]
        k: usize,
        #[serde(rename = "T")]
        t: usize,
        p: f64,
        alpha: f64,
        #[serde(default)]
        seed: u64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    Custom,
    Dynamic,
}

/// Per-step topic proportions. Rows are probability vectors, or all zero
/// for a step with no active topic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub tau: Vec<Vec<f64>>,
    pub kind: ScheduleKind,
    pub seed: Option<u64>,
}

impl Schedule {
    pub fn steps(&self) -> usize {
        self.tau.len()
    }

    pub fn topics(&self) -> usize {
        self.tau.first().map_or(0, Vec::len)
    }

    pub fn is_inactive(&self, step: usize) -> bool {
        self.tau[step].iter().all(|&x| x == 0.0)
    }

    fn active_set(&self, step: usize) -> Vec<bool> {
        self.tau[step].iter().map(|&x| x > 0.0).collect()
    }

    /// Steps whose set of active topics differs from the previous step's.
    pub fn change_steps(&self) -> Vec<usize> {
        (1..self.steps())
            .filter(|&s| self.active_set(s) != self.active_set(s - 1))
            .collect()
    }

    pub fn from_spec(spec: &ScheduleSpec) -> Result<Self> {
        match spec {
            ScheduleSpec::Custom { tau } => validate_custom(tau.clone()),
            ScheduleSpec::Dynamic { k, t, p, alpha, seed } => generate_dynamic_schedule(*k, *t, *p, *alpha, *seed),
        }
    }

    pub fn to_spec(&self) -> ScheduleSpec {
        ScheduleSpec::Custom { tau: self.tau.clone() }
    }
}

/// Each step: Bernoulli(p) activity per topic times a symmetric
/// Dirichlet(alpha) draw, renormalized. Steps with no active topic are
/// redrawn.
pub fn generate_dynamic_schedule(k_true: usize, t_steps: usize, p: f64, dir_alpha: f64, seed: u64) -> Result<Schedule> {
    if k_true == 0 || t_steps == 0 {
        return Err(Error::InvalidConfig("schedule needs at least one topic and one step".into()));
    }
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "activity probability must lie in (0, 1], got {p}; p = 0 never yields an active step"
        )));
    }
    if !(dir_alpha > 1.0 && dir_alpha.is_finite()) {
        return Err(Error::InvalidConfig(format!("Dirichlet concentration must exceed 1, got {dir_alpha}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gamma = Gamma::new(dir_alpha, 1.0).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let mut tau = Vec::with_capacity(t_steps);
    for _ in 0..t_steps {
        let z = loop {
            let z: Vec<bool> = (0..k_true).map(|_| rng.random_bool(p)).collect();
            if z.iter().any(|&b| b) {
                break z;
            }
        };
        let g: Vec<f64> = (0..k_true).map(|_| gamma.sample(&mut rng)).collect();
        let total: f64 = g.iter().sum();
        let masked: Vec<f64> = g.iter().zip(&z).map(|(&g, &on)| if on { g / total } else { 0.0 }).collect();
        let s: f64 = masked.iter().sum();
        tau.push(masked.into_iter().map(|x| x / s).collect());
    }
    Ok(Schedule { tau, kind: ScheduleKind::Dynamic, seed: Some(seed) })
}

/// Checks rows and rescales each active row to sum to exactly one.
pub fn validate_custom(mut tau: Vec<Vec<f64>>) -> Result<Schedule> {
    let width = tau.first().map_or(0, Vec::len);
    if width == 0 {
        return Err(Error::Schedule { row: 0, msg: "schedule has no topics".into() });
    }
    for (row, r) in tau.iter_mut().enumerate() {
        if r.len() != width {
            return Err(Error::Schedule { row, msg: format!("expected {width} entries, found {}", r.len()) });
        }
        if r.iter().any(|&x| !(x >= 0.0 && x.is_finite())) {
            return Err(Error::Schedule { row, msg: "entries must be finite and nonnegative".into() });
        }
        let s: f64 = r.iter().sum();
        if s == 0.0 {
            continue;
        }
        if (s - 1.0).abs() > SUM_TOL {
            return Err(Error::Schedule { row, msg: format!("row sums to {s}") });
        }
        r.iter_mut().for_each(|x| *x /= s);
    }
    Ok(Schedule { tau, kind: ScheduleKind::Custom, seed: None })
}

pub fn parse_schedule(text: &str) -> Result<Schedule> {
    let spec: ScheduleSpec = serde_json::from_str(text).map_err(|e| Error::json("schedule", e))?;
    Schedule::from_spec(&spec)
}

/// Reads either schedule kind from JSON.
pub fn load_custom_schedule(path: &Path) -> Result<Schedule> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_schedule(&text)
}

/// Documents grouped by ground-truth label, in schedule column order.
#[derive(Debug, Clone, Default)]
pub struct DocumentPools {
    pub labels: Vec<String>,
    pub pools: Vec<Vec<BowDocument>>,
}

impl DocumentPools {
    /// Groups labelled documents; labels are ordered lexicographically.
    pub fn from_documents(docs: impl IntoIterator<Item = BowDocument>) -> Self {
        let mut grouped: std::collections::BTreeMap<String, Vec<BowDocument>> = Default::default();
        for d in docs {
            if let Some(l) = d.label.clone() {
                grouped.entry(l).or_default().push(d);
            }
        }
        let (labels, pools) = grouped.into_iter().unzip();
        Self { labels, pools }
    }
}

/// Draws `n_docs` documents with replacement; each document's topic is
/// categorical in `tau_row`.
pub fn sample_batch(pools: &DocumentPools, tau_row: &[f64], n_docs: usize, seed: u64, step_index: usize) -> Result<Batch> {
    if tau_row.len() != pools.pools.len() {
        return Err(Error::Dimension(format!(
            "schedule row has {} topics but {} pools were given",
            tau_row.len(),
            pools.pools.len()
        )));
    }
    for (k, &w) in tau_row.iter().enumerate() {
        if w > 0.0 && pools.pools[k].is_empty() {
            return Err(Error::Pool(format!("no documents for active topic `{}`", pools.labels[k])));
        }
    }
    let topic = WeightedIndex::new(tau_row.iter().copied())
        .map_err(|e| Error::Schedule { row: step_index, msg: format!("cannot sample: {e}") })?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let docs = (0..n_docs)
        .map(|_| {
            let pool = &pools.pools[topic.sample(&mut rng)];
            pool[rng.random_range(0..pool.len())].clone()
        })
        .collect();
    Ok(Batch { docs, step_index })
}
