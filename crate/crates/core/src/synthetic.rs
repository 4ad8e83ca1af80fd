//! Synthetic worlds with known topics, for testing and desk-scale runs.
//!
//! Each true topic owns a cluster of words whose embeddings scatter around a
//! random center; a few background words sit near the origin. The true topic
//! embedding is a scaled copy of its center, so `softmax(rho^T alpha_k)`
//! concentrates on the topic's own cluster. Documents carry a single label
//! and draw their words from that label's topic.

use std::sync::Arc;

use ndarray::{Array1, Array2};
use rand::distr::weighted::WeightedIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::corpus::{BowDocument, Vocabulary};
use crate::embeddings::EmbeddingMatrix;
use crate::etm::compute_beta;
use crate::error::{Error, Result};

const CLUSTER_NAMES: [&str; 12] = [
    "alpha", "bravo", "charlie", "delta", "echo", "foxtrot", "golf", "hotel", "india", "juliet",
    "kilo", "lima",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldConfig {
    pub topics: usize,
    pub words_per_topic: usize,
    pub background_words: usize,
    pub embed_dim: usize,
    /// Spread of word embeddings around their cluster center.
    pub word_noise: f64,
    /// Scale applied to a cluster center to obtain the topic embedding.
    pub topic_scale: f64,
    pub doc_len: (usize, usize),
    pub seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            topics: 3,
            words_per_topic: 60,
            background_words: 20,
            embed_dim: 20,
            word_noise: 0.3,
            topic_scale: 2.0,
            doc_len: (30, 60),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticWorld {
    pub vocab: Vocabulary,
    pub embeddings: Arc<EmbeddingMatrix>,
    /// `L x K_true` generating topic embeddings.
    pub topic_alpha: Array2<f64>,
    /// `V x K_true` generating topic-word distributions.
    pub beta: Array2<f64>,
    pub labels: Vec<String>,
}

fn suffix(mut i: usize) -> String {
    let mut s = Vec::new();
    loop {
        s.push(b'a' + (i % 26) as u8);
        i /= 26;
        if i == 0 {
            break;
        }
    }
    while s.len() < 2 {
        s.push(b'a');
    }
    s.reverse();
    String::from_utf8(s).expect("ascii")
}

pub fn generate_world(cfg: &WorldConfig) -> Result<SyntheticWorld> {
    if cfg.topics == 0 || cfg.topics > CLUSTER_NAMES.len() || cfg.words_per_topic == 0 {
        return Err(Error::InvalidConfig(format!(
            "synthetic worlds support 1..={} topics with at least one word each",
            CLUSTER_NAMES.len()
        )));
    }
    if cfg.doc_len.0 == 0 || cfg.doc_len.0 > cfg.doc_len.1 {
        return Err(Error::InvalidConfig("invalid document length range".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let l = cfg.embed_dim;
    let centers: Vec<Array1<f64>> = (0..cfg.topics)
        .map(|_| Array1::from_shape_fn(l, |_| rng.sample::<f64, _>(StandardNormal)))
        .collect();

    let v = cfg.topics * cfg.words_per_topic + cfg.background_words;
    let mut rho = Array2::zeros((l, v));
    let mut tokens = Vec::with_capacity(v);
    let mut col = 0;
    for (k, center) in centers.iter().enumerate() {
        for i in 0..cfg.words_per_topic {
            for r in 0..l {
                rho[[r, col]] = center[r] + cfg.word_noise * rng.sample::<f64, _>(StandardNormal);
            }
            tokens.push(format!("{}{}", CLUSTER_NAMES[k], suffix(i)));
            col += 1;
        }
    }
    for i in 0..cfg.background_words {
        for r in 0..l {
            rho[[r, col]] = cfg.word_noise * rng.sample::<f64, _>(StandardNormal);
        }
        tokens.push(format!("zulu{}", suffix(i)));
        col += 1;
    }

    let mut topic_alpha = Array2::zeros((l, cfg.topics));
    for (k, c) in centers.iter().enumerate() {
        let norm = c.dot(c).sqrt();
        topic_alpha.column_mut(k).assign(&(c * (cfg.topic_scale / norm)));
    }
    let embeddings = Arc::new(EmbeddingMatrix::new(rho)?);
    let beta = compute_beta(&embeddings, &topic_alpha)?.beta;
    Ok(SyntheticWorld {
        vocab: Vocabulary::from_tokens(tokens)?,
        embeddings,
        topic_alpha,
        beta,
        labels: CLUSTER_NAMES[..cfg.topics].iter().map(|s| s.to_string()).collect(),
    })
}

impl SyntheticWorld {
    /// Draws one document from topic `k`.
    pub fn sample_doc<R: Rng>(&self, k: usize, id: String, doc_len: (usize, usize), rng: &mut R) -> BowDocument {
        let dist = WeightedIndex::new(self.beta.column(k).iter().copied()).expect("beta is a distribution");
        let n = rng.random_range(doc_len.0..=doc_len.1);
        let mut counts = vec![0u32; self.vocab.len()];
        for _ in 0..n {
            counts[dist.sample(rng)] += 1;
        }
        BowDocument {
            id,
            counts: counts
                .into_iter()
                .enumerate()
                .filter(|&(_, c)| c > 0)
                .collect(),
            label: Some(self.labels[k].clone()),
        }
    }

    /// Renders a document back into whitespace-separated text.
    pub fn render(&self, doc: &BowDocument) -> String {
        let mut words = Vec::new();
        for &(w, c) in &doc.counts {
            for _ in 0..c {
                words.push(self.vocab.token(w).expect("in vocabulary"));
            }
        }
        words.join(" ")
    }

    /// `n_per_topic` labelled documents per topic.
    pub fn document_pool(&self, n_per_topic: usize, doc_len: (usize, usize), seed: u64) -> Vec<BowDocument> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut docs = Vec::with_capacity(n_per_topic * self.labels.len());
        for k in 0..self.labels.len() {
            for i in 0..n_per_topic {
                docs.push(self.sample_doc(k, format!("{}-{i}", self.labels[k]), doc_len, &mut rng));
            }
        }
        docs
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn topics_concentrate_on_their_cluster() {
        let w = generate_world(&WorldConfig::default()).unwrap();
        assert_eq!(w.vocab.len(), 200);
        assert_eq!(w.embeddings.dim(), 20);
        for k in 0..3 {
            let own: f64 = w.beta.column(k).iter().skip(60 * k).take(60).sum();
            assert!(own > 0.8, "topic {k} keeps only {own} on its cluster");
        }
        assert!(w.vocab.tokens().iter().all(|t| t.chars().all(char::is_alphabetic)));
    }

    #[test]
    fn documents_round_trip_through_text() {
        let w = generate_world(&WorldConfig::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = w.sample_doc(1, "x".into(), (30, 60), &mut rng);
        let text = w.render(&d);
        let tokens = crate::corpus::tokenize(&text);
        let back = crate::corpus::vectorize("x", &tokens, Some("bravo"), &w.vocab).unwrap();
        assert_eq!(back, d);
    }
}
