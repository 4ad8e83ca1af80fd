//! Topic quality, merge accuracy and pure-document topic embeddings.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use log::warn;
use faer::Mat;
use ndarray::{Array1, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::corpus::{tokenize, BowDocument, Vocabulary};
use crate::embeddings::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::etm::TopicDistribution;
use crate::stream::MergeReport;

pub const DEFAULT_TOP_N: usize = 10;
pub const DEFAULT_EXPAND_N: usize = 20;
const PURE_FLOOR: f64 = 1e-12;
const PINV_RCOND: f64 = 1e-10;

/// Per topic, word ids with their probabilities in decreasing order.
#[derive(Debug, Clone, PartialEq)]
pub struct TopicWordList {
    pub topics: Vec<Vec<(usize, f64)>>,
}

impl TopicWordList {
    pub fn words(&self, topic: usize, vocab: &Vocabulary) -> Vec<String> {
        self.topics[topic]
            .iter()
            .map(|&(w, _)| vocab.token(w).unwrap_or("?").to_string())
            .collect()
    }
}

/// The `n` most probable words of each topic; ties go to the smaller id.
pub fn top_words(beta: &TopicDistribution, _vocab: &Vocabulary, n: usize) -> TopicWordList {
    let v = beta.beta.nrows();
    let n = if n > v {
        warn!("requested {n} top words from a vocabulary of {v}; clamping");
        v
    } else {
        n
    };
    let topics = (0..beta.topics())
        .map(|k| {
            let col = beta.topic(k);
            let mut ids: Vec<usize> = (0..v).collect();
            ids.sort_by(|&a, &b| col[b].total_cmp(&col[a]).then(a.cmp(&b)));
            ids.truncate(n);
            ids.into_iter().map(|w| (w, col[w])).collect()
        })
        .collect();
    TopicWordList { topics }
}

/// Unique words among every topic's first `n` words over `n * K`.
pub fn topic_diversity(lists: &TopicWordList, n: usize) -> f64 {
    let mut unique = HashSet::new();
    let mut slots = 0;
    for t in &lists.topics {
        let take = n.min(t.len());
        unique.extend(t[..take].iter().map(|&(w, _)| w));
        slots += take;
    }
    if slots == 0 {
        return 0.0;
    }
    unique.len() as f64 / slots as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coherence {
    /// `None` when every pair was skipped.
    pub tc: Option<f64>,
    pub skipped_pairs: usize,
    pub per_topic: Vec<Option<f64>>,
}

/// Normalized PMI over binarized document presence.
pub fn npmi(p_i: f64, p_j: f64, p_ij: f64) -> f64 {
    if p_ij == 0.0 {
        -1.0
    } else if p_ij >= 1.0 {
        1.0
    } else {
        (p_ij.ln() - p_i.ln() - p_j.ln()) / -p_ij.ln()
    }
}

/// Mean over topics of the mean NPMI over pairs of each topic's top `n`
/// words. Pairs with a word absent from `docs` are skipped and counted;
/// topics whose pairs are all skipped do not enter the mean.
pub fn topic_coherence(lists: &TopicWordList, docs: &[BowDocument], n: usize) -> Coherence {
    let wanted: BTreeSet<usize> = lists
        .topics
        .iter()
        .flat_map(|t| t.iter().take(n).map(|&(w, _)| w))
        .collect();
    let presence: BTreeMap<usize, Vec<bool>> = wanted
        .iter()
        .map(|&w| (w, docs.iter().map(|d| d.contains(w)).collect()))
        .collect();
    let d = docs.len() as f64;
    let df = |w: usize| presence[&w].iter().filter(|&&b| b).count() as f64;

    let mut skipped = 0;
    let mut per_topic = Vec::with_capacity(lists.topics.len());
    for t in &lists.topics {
        let words: Vec<usize> = t.iter().take(n).map(|&(w, _)| w).collect();
        let mut sum = 0.0;
        let mut pairs = 0usize;
        for a in 0..words.len() {
            for b in a + 1..words.len() {
                let (wi, wj) = (words[a], words[b]);
                let (di, dj) = (df(wi), df(wj));
                if di == 0.0 || dj == 0.0 {
                    skipped += 1;
                    continue;
                }
                let dij = presence[&wi].iter().zip(&presence[&wj]).filter(|(x, y)| **x && **y).count() as f64;
                sum += npmi(di / d, dj / d, dij / d);
                pairs += 1;
            }
        }
        per_topic.push((pairs > 0).then(|| sum / pairs as f64));
    }
    let scored: Vec<f64> = per_topic.iter().flatten().copied().collect();
    let tc = (!scored.is_empty()).then(|| scored.iter().sum::<f64>() / scored.len() as f64);
    Coherence { tc, skipped_pairs: skipped, per_topic }
}

/// `2xy / (x + y)`, zero when either argument is zero.
pub fn harmonic_mean(x: f64, y: f64) -> f64 {
    if x == 0.0 || y == 0.0 {
        0.0
    } else {
        2.0 * x * y / (x + y)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: usize,
    pub tc: Option<f64>,
    pub td: f64,
    /// Harmonic mean of TC (floored at zero) and TD.
    pub h: Option<f64>,
    pub skipped_pairs: usize,
}

pub fn step_metrics(step: usize, beta: &TopicDistribution, vocab: &Vocabulary, docs: &[BowDocument], n: usize) -> StepMetrics {
    let lists = top_words(beta, vocab, n);
    let td = topic_diversity(&lists, n);
    let c = topic_coherence(&lists, docs, n);
    StepMetrics { step, tc: c.tc, td, h: c.tc.map(|tc| harmonic_mean(tc.max(0.0), td)), skipped_pairs: c.skipped_pairs }
}

/// Ground truth for one merge: new index to correct previous index, and the
/// truly new indices.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MergeTruth {
    pub common: BTreeMap<usize, usize>,
    pub novel: BTreeSet<usize>,
}

/// Fractions of common topics merged into the right predecessor and of
/// novel topics reported as discoveries. An empty class scores 1.
pub fn merge_discovery_accuracy(report: &MergeReport, truth: &MergeTruth) -> (f64, f64) {
    let frac = |hit: usize, total: usize| if total == 0 { 1.0 } else { hit as f64 / total as f64 };
    let ma_hits = truth.common.iter().filter(|&(&j, &k)| report.matched_to(j) == Some(k)).count();
    let da_hits = truth.novel.iter().filter(|&&j| report.is_discovery(j)).count();
    (frac(ma_hits, truth.common.len()), frac(da_hits, truth.novel.len()))
}

/// Minimum-norm least-squares `alpha` with `rho^T alpha ~ ln(beta)`, through
/// the SVD pseudoinverse of `rho^T`. Singular values under `1e-10 * s_max`
/// count as zero.
pub fn pure_topic_embedding(beta_pure: ArrayView1<'_, f64>, rho: &EmbeddingMatrix) -> Result<Array1<f64>> {
    let (l, v) = (rho.dim(), rho.vocab_size());
    if beta_pure.len() != v {
        return Err(Error::Dimension(format!("beta has {} entries but vocabulary has {v}", beta_pure.len())));
    }
    let rt = Mat::from_fn(v, l, |i, j| rho.rho()[[j, i]]);
    let svd = rt
        .thin_svd()
        .map_err(|e| Error::Numerical(format!("singular value decomposition failed: {e:?}")))?;
    let (u, s, w) = (svd.U(), svd.S().column_vector(), svd.V());
    let s_max = (0..s.nrows()).map(|i| s[i]).fold(0.0f64, f64::max);
    if !(s_max > 0.0) {
        return Err(Error::DegenerateEmbedding);
    }
    let cutoff = PINV_RCOND * s_max;
    let log_beta: Vec<f64> = beta_pure.iter().map(|&b| b.max(PURE_FLOOR).ln()).collect();
    let mut alpha = Array1::zeros(l);
    for i in 0..s.nrows() {
        if s[i] <= cutoff {
            continue;
        }
        let coef = (0..v).map(|r| u[(r, i)] * log_beta[r]).sum::<f64>() / s[i];
        for c in 0..l {
            alpha[c] += w[(c, i)] * coef;
        }
    }
    Ok(alpha)
}

/// Per label phrase: its in-vocabulary tokens plus the `expand_n` words most
/// cosine-similar to their centroid, as a uniform distribution floored at
/// `1e-12` elsewhere.
pub fn build_pure_documents(labels: &[&str], rho: &EmbeddingMatrix, vocab: &Vocabulary, expand_n: usize) -> Result<Vec<Array1<f64>>> {
    labels
        .iter()
        .map(|label| {
            let seeds: BTreeSet<usize> = tokenize(label).iter().filter_map(|t| vocab.id(t)).collect();
            if seeds.is_empty() {
                return Err(Error::Label(format!("no label word of `{label}` is in the vocabulary")));
            }
            let mut centroid = Array1::zeros(rho.dim());
            for &w in &seeds {
                centroid += &rho.word(w);
            }
            let cn = centroid.dot(&centroid).sqrt();
            if cn == 0.0 {
                return Err(Error::Label(format!("label words of `{label}` have a zero centroid")));
            }
            let mut scored: Vec<(usize, f64)> = (0..rho.vocab_size())
                .filter(|w| !seeds.contains(w))
                .filter_map(|w| {
                    let e = rho.word(w);
                    let n = e.dot(&e).sqrt();
                    (n > 0.0).then(|| (w, e.dot(&centroid) / (n * cn)))
                })
                .collect();
            scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            let chosen: BTreeSet<usize> = seeds.iter().copied().chain(scored.iter().take(expand_n).map(|&(w, _)| w)).collect();
            let mut beta = Array1::from_elem(rho.vocab_size(), PURE_FLOOR);
            for &w in &chosen {
                beta[w] = 1.0 / chosen.len() as f64;
            }
            let s = beta.sum();
            Ok(beta / s)
        })
        .collect()
}
