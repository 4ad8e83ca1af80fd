//! Synthetic experiments on topic embeddings: the merge/discovery benchmark
//! and the 2D perturbation toy.

use std::collections::{BTreeMap, BTreeSet};

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{harmonic_mean, merge_discovery_accuracy, MergeTruth};
use crate::stream::{mean_norm, metric_cutoff, scaled_cost, uot_merge, MergeConfig, MergeReport};
use crate::transport::{
    assign_with_discovery, cost_matrix, match_by_distance, uot_solve, Assignment, Metric, UotConfig,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Method {
    UotCosine,
    UotEuclidean,
    UotMinkowski(f64),
    Cd,
    Ed,
}

impl Method {
    pub fn label(&self) -> String {
        match self {
            Method::UotCosine => "UOT Cosine".into(),
            Method::UotEuclidean => "UOT Euclidean".into(),
            Method::UotMinkowski(p) => format!("UOT Minkowski (p={p})"),
            Method::Cd => "CD".into(),
            Method::Ed => "ED".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub prototypes: usize,
    pub dim: usize,
    pub common: usize,
    pub vanished: usize,
    pub novel: usize,
    pub trials: usize,
    /// Weight of the direction shared by all prototypes.
    pub shared: f64,
    /// Standard deviation of the per-step drift around a prototype.
    pub drift: f64,
    /// Cosine cutoff shared by the discovery rule and the baselines.
    pub cutoff: f64,
    pub minkowski_p: f64,
    pub merge: MergeConfig,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            prototypes: 7,
            dim: 50,
            common: 3,
            vanished: 2,
            novel: 2,
            trials: 50,
            shared: 1.0,
            drift: 1.0,
            cutoff: 0.5,
            minkowski_p: 1.0,
            merge: MergeConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    #[serde(rename = "MA_mean")]
    pub ma_mean: f64,
    #[serde(rename = "MA_std")]
    pub ma_std: f64,
    #[serde(rename = "DA_mean")]
    pub da_mean: f64,
    #[serde(rename = "DA_std")]
    pub da_std: f64,
    #[serde(rename = "H")]
    pub h: f64,
}

/// One trial: previous and new embeddings (`L x K`, `L x J`) with truth.
#[derive(Debug, Clone)]
pub struct Trial {
    pub previous: Array2<f64>,
    pub new: Array2<f64>,
    pub truth: MergeTruth,
}

fn normal_vec<R: Rng>(n: usize, rng: &mut R) -> Array1<f64> {
    Array1::from_shape_fn(n, |_| rng.sample(StandardNormal))
}

pub fn draw_trial<R: Rng>(cfg: &BenchConfig, rng: &mut R) -> Result<Trial> {
    let (c, v, n) = (cfg.common, cfg.vanished, cfg.novel);
    if c + v + n > cfg.prototypes || c + v == 0 || c + n == 0 {
        return Err(Error::InvalidConfig(format!(
            "{} prototypes cannot supply {c} common, {v} vanished and {n} novel topics",
            cfg.prototypes
        )));
    }
    let m = normal_vec(cfg.dim, rng);
    let protos: Vec<Array1<f64>> = (0..cfg.prototypes).map(|_| &m * cfg.shared + normal_vec(cfg.dim, rng)).collect();
    let mut ids: Vec<usize> = (0..cfg.prototypes).collect();
    ids.shuffle(rng);
    let prev_ids: Vec<usize> = ids[..c + v].to_vec();
    let mut new_ids: Vec<usize> = ids[..c].iter().chain(&ids[c + v..c + v + n]).copied().collect();
    new_ids.shuffle(rng);

    let mut drifted = |p: usize| &protos[p] + &(normal_vec(cfg.dim, rng) * cfg.drift);
    let previous_cols: Vec<Array1<f64>> = prev_ids.iter().map(|&p| drifted(p)).collect();
    let new_cols: Vec<Array1<f64>> = new_ids.iter().map(|&p| drifted(p)).collect();
    let stack = |cols: &[Array1<f64>]| Array2::from_shape_fn((cfg.dim, cols.len()), |(r, k)| cols[k][r]);

    let mut truth = MergeTruth { common: BTreeMap::new(), novel: BTreeSet::new() };
    for (j, p) in new_ids.iter().enumerate() {
        match prev_ids.iter().position(|q| q == p) {
            Some(k) => {
                truth.common.insert(j, k);
            }
            None => {
                truth.novel.insert(j);
            }
        }
    }
    Ok(Trial { previous: stack(&previous_cols), new: stack(&new_cols), truth })
}

pub fn merge_with(method: Method, trial: &Trial, cfg: &BenchConfig) -> Result<MergeReport> {
    let uot = |metric| {
        let merge = MergeConfig {
            metric,
            uot: UotConfig { discovery_cutoff: Some(metric_cutoff(cfg.cutoff, metric)), ..cfg.merge.uot.clone() },
            ..cfg.merge.clone()
        };
        uot_merge(&trial.new, &trial.previous, &merge).map(|m| m.report)
    };
    match method {
        Method::UotCosine => uot(Metric::Cosine),
        Method::UotEuclidean => uot(Metric::Euclidean),
        Method::UotMinkowski(p) => uot(Metric::Minkowski(p)),
        Method::Cd => baseline(trial, Metric::Cosine, cfg.cutoff),
        Method::Ed => baseline(trial, Metric::Euclidean, ed_threshold(cfg.cutoff, &trial.previous)),
    }
}

/// Euclidean threshold equivalent to a cosine cutoff: the chord length at
/// that cosine distance, scaled by the mean previous norm.
pub fn ed_threshold(cutoff: f64, previous: &Array2<f64>) -> f64 {
    metric_cutoff(cutoff, Metric::Euclidean) * mean_norm(previous)
}

/// Distance baselines report each row's own nearest-column decision.
fn baseline(trial: &Trial, metric: Metric, threshold: f64) -> Result<MergeReport> {
    let cost = cost_matrix(&trial.new, &trial.previous, metric)?;
    Ok(MergeReport::from_assignments(&match_by_distance(&cost, threshold), trial.previous.ncols()))
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn default_methods(cfg: &BenchConfig) -> Vec<Method> {
    vec![Method::UotCosine, Method::UotEuclidean, Method::UotMinkowski(cfg.minkowski_p), Method::Cd, Method::Ed]
}

/// Every method on the same trials. `H` is the harmonic mean of the mean
/// accuracies.
pub fn run_benchmark(cfg: &BenchConfig, methods: &[Method]) -> Result<Vec<MethodSummary>> {
    if cfg.trials == 0 {
        return Err(Error::InvalidConfig("benchmark needs at least one trial".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let trials: Vec<Trial> = (0..cfg.trials).map(|_| draw_trial(cfg, &mut rng)).collect::<Result<_>>()?;
    methods
        .iter()
        .map(|&m| {
            let mut ma = Vec::with_capacity(trials.len());
            let mut da = Vec::with_capacity(trials.len());
            for t in &trials {
                let (a, d) = merge_discovery_accuracy(&merge_with(m, t, cfg)?, &t.truth);
                ma.push(a);
                da.push(d);
            }
            let (ma_mean, ma_std) = mean_std(&ma);
            let (da_mean, da_std) = mean_std(&da);
            Ok(MethodSummary { method: m.label(), ma_mean, ma_std, da_mean, da_std, h: harmonic_mean(ma_mean, da_mean) })
        })
        .collect()
}

pub const FIG1_SEED: u64 = 33;
pub const FIG1_POINT: [f64; 2] = [1.01, 0.45];
pub const FIG1_MOVED: [f64; 2] = [1.02, 0.49];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyConfig {
    pub topics: usize,
    /// Spread of the new points around their previous counterparts.
    pub noise: f64,
    pub seed: u64,
    pub uot: UotConfig,
    /// Cosine-equivalent cutoff used for both matchers.
    pub cutoff: f64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self { topics: 5, noise: 0.3, seed: FIG1_SEED, uot: UotConfig::default(), cutoff: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyOutput {
    pub seed: u64,
    pub previous: Vec<[f64; 2]>,
    pub new_before: Vec<[f64; 2]>,
    pub new_after: Vec<[f64; 2]>,
    /// Index of the perturbed new point.
    pub perturbed: usize,
    pub uot_before: Vec<Option<usize>>,
    pub uot_after: Vec<Option<usize>>,
    pub euclidean_before: Vec<Option<usize>>,
    pub euclidean_after: Vec<Option<usize>>,
    pub euclidean_threshold: f64,
}

impl ToyOutput {
    pub fn uot_stable(&self) -> bool {
        self.uot_before == self.uot_after
    }

    pub fn euclidean_changed(&self) -> bool {
        self.euclidean_before != self.euclidean_after
    }
}

fn points(a: &Array2<f64>) -> Vec<[f64; 2]> {
    a.columns().into_iter().map(|c| [c[0], c[1]]).collect()
}

/// Previous points are standard normal in the plane; new points are noisy
/// copies, except the last, which sits at `FIG1_POINT` and is then moved to
/// `FIG1_MOVED`. Both matchers use Euclidean costs.
pub fn fig1_toy(cfg: &ToyConfig) -> Result<ToyOutput> {
    if cfg.topics < 2 {
        return Err(Error::InvalidConfig("the toy needs at least two topics".into()));
    }
    let k = cfg.topics;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let previous = Array2::from_shape_fn((2, k), |_| rng.sample::<f64, _>(StandardNormal));
    let mut before = previous.clone();
    for v in before.iter_mut() {
        *v += cfg.noise * rng.sample::<f64, _>(StandardNormal);
    }
    let last = k - 1;
    before[[0, last]] = FIG1_POINT[0];
    before[[1, last]] = FIG1_POINT[1];
    let mut after = before.clone();
    after[[0, last]] = FIG1_MOVED[0];
    after[[1, last]] = FIG1_MOVED[1];

    let threshold = ed_threshold(cfg.cutoff, &previous);
    let masses = Array1::from_elem(k, 1.0 / k as f64);
    let uot_cfg = UotConfig { discovery_cutoff: Some(metric_cutoff(cfg.cutoff, Metric::Euclidean)), ..cfg.uot.clone() };
    let uot_assign = |new: &Array2<f64>| -> Result<Vec<Option<usize>>> {
        let cost = scaled_cost(new, &previous, Metric::Euclidean)?;
        let plan = uot_solve(&cost, masses.view(), masses.view(), &uot_cfg)?;
        Ok(assign_with_discovery(&plan, masses.view(), &uot_cfg).iter().map(Assignment::matched).collect())
    };
    let ed_assign = |new: &Array2<f64>| -> Result<Vec<Option<usize>>> {
        let cost = cost_matrix(new, &previous, Metric::Euclidean)?;
        Ok(match_by_distance(&cost, threshold).iter().map(Assignment::matched).collect())
    };
    Ok(ToyOutput {
        seed: cfg.seed,
        previous: points(&previous),
        new_before: points(&before),
        new_after: points(&after),
        perturbed: last,
        uot_before: uot_assign(&before)?,
        uot_after: uot_assign(&after)?,
        euclidean_before: ed_assign(&before)?,
        euclidean_after: ed_assign(&after)?,
        euclidean_threshold: threshold,
    })
}
