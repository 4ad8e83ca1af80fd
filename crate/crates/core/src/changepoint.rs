//! Online Bayesian change-point detection on per-topic proportion series.
//!
//! Observations are Gaussian with unknown mean and variance under a
//! Normal-Inverse-Gamma prior. The run length after `t` observations is the
//! number of earlier observations in the current segment, so it ranges over
//! `0..t`. A new segment opens with probability `H = 1 / hazard_lambda` and
//! its first point is scored under the prior predictive; a continuing
//! segment scores the point under the Student-t predictive of its own
//! statistics.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, StudentsT};

use crate::error::{Error, Result};

pub const DEFAULT_GRID_POINTS: usize = 101;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcpdPrior {
    /// Prior mean; `None` takes the first observation of each series.
    pub mu0: Option<f64>,
    pub kappa0: f64,
    pub alpha0: f64,
    pub beta0: f64,
    pub hazard_lambda: f64,
    /// Longest run length kept; `None` keeps every run length.
    pub max_run: Option<usize>,
}

impl Default for OcpdPrior {
    fn default() -> Self {
        Self { mu0: None, kappa0: 1.0, alpha0: 1.0, beta0: 0.01, hazard_lambda: 10.0, max_run: None }
    }
}

impl OcpdPrior {
    pub fn validate(&self) -> Result<()> {
        let ok = self.kappa0 > 0.0
            && self.alpha0 > 0.0
            && self.beta0 > 0.0
            && self.hazard_lambda > 1.0
            && self.hazard_lambda.is_finite()
            && self.mu0.is_none_or(f64::is_finite)
            && self.max_run != Some(0);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!(
                "invalid change-point prior {self:?}: kappa0, alpha0, beta0 must be positive, hazard_lambda finite and above 1"
            )))
        }
    }

    pub fn hazard(&self) -> f64 {
        1.0 / self.hazard_lambda
    }
}

/// Count, mean and centred sum of squares of one segment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SuffStats {
    pub n: f64,
    pub mean: f64,
    pub m2: f64,
}

impl SuffStats {
    fn single(x: f64) -> Self {
        Self { n: 1.0, mean: x, m2: 0.0 }
    }

    fn push(&self, x: f64) -> Self {
        let n = self.n + 1.0;
        let d = x - self.mean;
        let mean = self.mean + d / n;
        Self { n, mean, m2: self.m2 + d * (x - mean) }
    }
}

/// Log density of `x` under the posterior predictive given `stats`.
fn log_predictive(stats: Option<&SuffStats>, x: f64, mu0: f64, p: &OcpdPrior) -> f64 {
    let (kn, mn, an, bn) = match stats {
        None => (p.kappa0, mu0, p.alpha0, p.beta0),
        Some(s) => {
            let kn = p.kappa0 + s.n;
            let mn = (p.kappa0 * mu0 + s.n * s.mean) / kn;
            let an = p.alpha0 + s.n / 2.0;
            let bn = p.beta0 + 0.5 * s.m2 + p.kappa0 * s.n * (s.mean - mu0).powi(2) / (2.0 * kn);
            (kn, mn, an, bn)
        }
    };
    let scale = (bn * (kn + 1.0) / (an * kn)).sqrt();
    StudentsT::new(mn, scale, 2.0 * an)
        .expect("posterior parameters are positive")
        .ln_pdf(x)
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Posterior over run lengths, index `r` holding run length `r`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLengthState {
    pub log_probs: Vec<f64>,
    /// Statistics of the current segment under each run length, including
    /// the latest observation.
    pub suffstats: Vec<SuffStats>,
    pub t: usize,
    mu0: Option<f64>,
}

impl Default for RunLengthState {
    fn default() -> Self {
        Self::new()
    }
}

impl RunLengthState {
    pub fn new() -> Self {
        Self { log_probs: Vec::new(), suffstats: Vec::new(), t: 0, mu0: None }
    }

    pub fn probs(&self) -> Vec<f64> {
        self.log_probs.iter().map(|l| l.exp()).collect()
    }
}

/// Consumes one observation; returns the posterior mass that `x` opened a
/// new segment. The first observation always does.
pub fn ocpd_update(state: &mut RunLengthState, x: f64, prior: &OcpdPrior) -> Result<f64> {
    if !x.is_finite() {
        return Err(Error::Numerical(format!("observation {x} is not finite")));
    }
    let mu0 = *state.mu0.get_or_insert(prior.mu0.unwrap_or(x));
    state.t += 1;
    if state.log_probs.is_empty() {
        state.log_probs = vec![0.0];
        state.suffstats = vec![SuffStats::single(x)];
        return Ok(1.0);
    }
    let h = prior.hazard();
    let mut next = Vec::with_capacity(state.log_probs.len() + 1);
    next.push(h.ln() + log_predictive(None, x, mu0, prior));
    for (lp, s) in state.log_probs.iter().zip(&state.suffstats) {
        next.push(lp + (-h).ln_1p() + log_predictive(Some(s), x, mu0, prior));
    }
    let mut stats = Vec::with_capacity(next.len());
    stats.push(SuffStats::single(x));
    stats.extend(state.suffstats.iter().map(|s| s.push(x)));
    if let Some(cap) = prior.max_run {
        next.truncate(cap + 1);
        stats.truncate(cap + 1);
    }
    let z = log_sum_exp(&next);
    if !z.is_finite() {
        return Err(Error::Numerical("run-length evidence underflowed".into()));
    }
    next.iter_mut().for_each(|l| *l -= z);
    state.log_probs = next;
    state.suffstats = stats;
    Ok(state.log_probs[0].exp().clamp(0.0, 1.0))
}

/// Change-point probability at every step of one series.
pub fn cp_probabilities(series: &[f64], prior: &OcpdPrior) -> Result<Vec<f64>> {
    prior.validate()?;
    let mut state = RunLengthState::new();
    series.iter().map(|&x| ocpd_update(&mut state, x, prior)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChangepointAlert {
    pub step: usize,
    pub topic_id: usize,
    pub probability: f64,
}

/// Topic id to its proportion at every step.
pub type SeriesSet = BTreeMap<usize, Vec<f64>>;

/// Alerts where the change-point probability exceeds `threshold`. Step 0
/// opens every series and is never reported.
pub fn detect(series: &SeriesSet, prior: &OcpdPrior, threshold: f64) -> Result<Vec<ChangepointAlert>> {
    let probs = series_probabilities(series, prior)?;
    Ok(alerts_at(&probs, threshold))
}

/// Change-point probabilities for every topic.
pub fn series_probabilities(series: &SeriesSet, prior: &OcpdPrior) -> Result<SeriesSet> {
    series
        .iter()
        .map(|(&id, xs)| {
            if xs.len() < 2 {
                return Err(Error::InvalidConfig(format!("series for topic {id} has fewer than 2 steps")));
            }
            Ok((id, cp_probabilities(xs, prior)?))
        })
        .collect()
}

pub fn alerts_at(probs: &SeriesSet, threshold: f64) -> Vec<ChangepointAlert> {
    let mut alerts: Vec<ChangepointAlert> = probs
        .iter()
        .flat_map(|(&topic_id, p)| {
            p.iter()
                .enumerate()
                .skip(1)
                .filter(move |&(_, &q)| q > threshold)
                .map(move |(step, &probability)| ChangepointAlert { step, topic_id, probability })
        })
        .collect();
    alerts.sort_by_key(|a| (a.step, a.topic_id));
    alerts
}

/// Per-topic series from per-step proportion maps; topics absent at a step
/// contribute 0.
pub fn series_from_history(history: &[BTreeMap<usize, f64>]) -> SeriesSet {
    let ids: BTreeSet<usize> = history.iter().flat_map(|h| h.keys().copied()).collect();
    ids.into_iter()
        .map(|id| (id, history.iter().map(|h| h.get(&id).copied().unwrap_or(0.0)).collect()))
        .collect()
}

#[derive(Debug, Deserialize)]
struct SeriesRow {
    step: usize,
    topic_id: usize,
    proportion: f64,
}

/// Reads `step,topic_id,proportion` rows. Steps run from the smallest to the
/// largest present; missing entries are 0.
pub fn read_series_csv<R: Read>(input: R) -> Result<SeriesSet> {
    let mut rdr = csv::Reader::from_reader(input);
    let mut by_step: BTreeMap<usize, BTreeMap<usize, f64>> = BTreeMap::new();
    for (i, row) in rdr.deserialize::<SeriesRow>().enumerate() {
        let row = row.map_err(|e| Error::Format { line: i + 2, msg: e.to_string() })?;
        if !row.proportion.is_finite() {
            return Err(Error::Format { line: i + 2, msg: "proportion is not finite".into() });
        }
        by_step.entry(row.step).or_default().insert(row.topic_id, row.proportion);
    }
    let (Some(&first), Some(&last)) = (by_step.keys().next(), by_step.keys().next_back()) else {
        return Err(Error::Format { line: 1, msg: "series file has no rows".into() });
    };
    let history: Vec<BTreeMap<usize, f64>> =
        (first..=last).map(|s| by_step.get(&s).cloned().unwrap_or_default()).collect();
    Ok(series_from_history(&history))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
    pub tpr: f64,
    pub fpr: f64,
}

/// `n` evenly spaced thresholds from 0 to 1.
pub fn default_grid(n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..n).map(|i| i as f64 / (n - 1) as f64).collect(),
    }
}

/// Confusion counts for one alert set. A truth step is found when any topic
/// alerts within one step of it; alert steps farther than one step from
/// every truth step are false positives; the remaining steps are true
/// negatives.
pub fn score_alerts(truth: &BTreeSet<usize>, alerts: &[ChangepointAlert], total_steps: usize, threshold: f64) -> RocPoint {
    let steps: BTreeSet<usize> = alerts.iter().map(|a| a.step).collect();
    let near = |s: usize, set: &BTreeSet<usize>| set.range(s.saturating_sub(1)..=s + 1).next().is_some();
    let tp = truth.iter().filter(|&&t| near(t, &steps)).count();
    let fn_ = truth.len() - tp;
    let fp = steps.iter().filter(|&&s| !near(s, truth)).count();
    let tn = total_steps.saturating_sub(tp + fn_ + fp);
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    RocPoint { threshold, tp, fp, fn_, tn, tpr: ratio(tp, tp + fn_), fpr: ratio(fp, fp + tn) }
}

/// One ROC point per threshold, in grid order sorted ascending.
pub fn evaluate_roc<F>(truth: &BTreeSet<usize>, mut detect_fn: F, grid: &[f64], total_steps: usize) -> Result<Vec<RocPoint>>
where
    F: FnMut(f64) -> Vec<ChangepointAlert>,
{
    if grid.is_empty() || grid.iter().any(|g| !(0.0..=1.0).contains(g)) {
        return Err(Error::InvalidConfig("threshold grid must be nonempty and within [0, 1]".into()));
    }
    let mut grid = grid.to_vec();
    grid.sort_by(f64::total_cmp);
    Ok(grid.into_iter().map(|th| score_alerts(truth, &detect_fn(th), total_steps, th)).collect())
}

pub fn write_roc_csv<W: Write>(points: &[RocPoint], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let wrap = |e: csv::Error| Error::Format { line: 0, msg: e.to_string() };
    w.write_record(["threshold", "fpr", "tpr"]).map_err(wrap)?;
    for p in points {
        w.write_record([p.threshold.to_string(), p.fpr.to_string(), p.tpr.to_string()]).map_err(wrap)?;
    }
    w.flush().map_err(|e| Error::io("roc csv", e))
}
