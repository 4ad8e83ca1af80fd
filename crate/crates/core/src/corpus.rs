//! Text ingestion: tokenization, vocabulary construction and bag-of-words
//! vectorization.
//!
//! Vocabulary filtering drops stopwords, tokens seen fewer than `min_count`
//! times in the whole corpus, and tokens whose document frequency exceeds
//! `max_df_ratio`. Surviving tokens are ordered by descending corpus count
//! with lexicographic tie-breaking, so the result is reproducible.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// English stopword list shipped with the crate.
pub const DEFAULT_STOPWORDS: &str = include_str!("../data/stopwords_en.txt");

pub const DEFAULT_MIN_COUNT: usize = 2;
pub const DEFAULT_MAX_DF_RATIO: f64 = 0.7;
pub const DEFAULT_VOCAB_CAP: usize = 15_000;

/// Ordered token list with its inverse index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Builds a vocabulary from an ordered token list. Duplicates are rejected.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, tok) in tokens.iter().enumerate() {
            if index.insert(tok.clone(), i).is_some() {
                return Err(Error::Format {
                    line: i + 1,
                    msg: format!("duplicate vocabulary token {tok:?}"),
                });
            }
        }
        Ok(Self { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Stable 64-bit FNV-1a digest of the ordered token list, used to tie
    /// checkpoints to the vocabulary they were trained on.
    pub fn hash(&self) -> String {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for tok in &self.tokens {
            for b in tok.as_bytes().iter().chain(std::iter::once(&0u8)) {
                h ^= u64::from(*b);
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        }
        format!("{h:016x}")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.tokens).expect("string list serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let tokens: Vec<String> =
            serde_json::from_str(text).map_err(|e| Error::json("vocabulary", e))?;
        Self::from_tokens(tokens)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// Sparse word counts for one document.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BowDocument {
    pub id: String,
    /// `(word id, count)` pairs sorted by word id; every count is at least 1.
    pub counts: Vec<(usize, u32)>,
    pub label: Option<String>,
}

impl BowDocument {
    /// Total token count `N_d`.
    pub fn total(&self) -> u32 {
        self.counts.iter().map(|&(_, c)| c).sum()
    }

    pub fn contains(&self, word: usize) -> bool {
        self.counts.binary_search_by_key(&word, |&(w, _)| w).is_ok()
    }
}

#[derive(Serialize, Deserialize)]
struct BowRecord {
    id: String,
    counts: BTreeMap<String, u32>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    label: Option<String>,
}

/// Documents arriving at one time step, all indexed against the same
/// vocabulary.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub docs: Vec<BowDocument>,
    pub step_index: usize,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    /// Writes the batch as JSONL: `{id, counts: {"<tokenid>": count}, label?}`.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for doc in &self.docs {
            let rec = BowRecord {
                id: doc.id.clone(),
                // string-keyed map: key order is lexicographic, not numeric
                counts: doc
                    .counts
                    .iter()
                    .map(|&(w, c)| (w.to_string(), c))
                    .collect(),
                label: doc.label.clone(),
            };
            serde_json::to_writer(&mut out, &rec)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(input: R, step_index: usize, vocab_size: usize) -> Result<Self> {
        let mut docs = Vec::new();
        for (i, line) in input.lines().enumerate() {
            let line = line.map_err(|e| Error::io("<batch>", e))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: BowRecord = serde_json::from_str(&line).map_err(|e| Error::Format {
                line: i + 1,
                msg: e.to_string(),
            })?;
            let mut counts = Vec::with_capacity(rec.counts.len());
            for (k, c) in rec.counts {
                let w: usize = k.parse().map_err(|_| Error::Format {
                    line: i + 1,
                    msg: format!("token id {k:?} is not an integer"),
                })?;
                if w >= vocab_size || c == 0 {
                    return Err(Error::Format {
                        line: i + 1,
                        msg: format!("invalid entry {w}:{c} for vocabulary of size {vocab_size}"),
                    });
                }
                counts.push((w, c));
            }
            counts.sort_unstable();
            if counts.is_empty() {
                return Err(Error::Format {
                    line: i + 1,
                    msg: "document has no tokens".into(),
                });
            }
            docs.push(BowDocument {
                id: rec.id,
                counts,
                label: rec.label,
            });
        }
        Ok(Batch { docs, step_index })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        self.write_jsonl(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path, step_index: usize, vocab_size: usize) -> Result<Self> {
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_jsonl(BufReader::new(file), step_index, vocab_size)
    }

    /// Re-indexes every document from `from` into `to`, dropping words that
    /// `to` does not contain and documents left empty. Returns the number of
    /// dropped documents.
    pub fn reindex(&mut self, from: &Vocabulary, to: &Vocabulary) -> usize {
        let before = self.docs.len();
        self.docs.retain_mut(|doc| {
            let mut counts: Vec<(usize, u32)> = doc
                .counts
                .iter()
                .filter_map(|&(w, c)| from.token(w).and_then(|t| to.id(t)).map(|nw| (nw, c)))
                .collect();
            counts.sort_unstable();
            doc.counts = counts;
            !doc.counts.is_empty()
        });
        before - self.docs.len()
    }
}

/// A raw input document before tokenization.
#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
pub struct RawDocument {
    pub id: String,
    pub text: String,
    #[serde(default)]
    pub label: Option<String>,
    /// Optional explicit time step.
    #[serde(default)]
    pub step: Option<usize>,
}

fn strip_punctuation(text: &str) -> String {
    text.chars()
        .filter(|c| c.is_alphanumeric() || c.is_whitespace())
        .collect()
}

/// Lowercases, strips punctuation and splits on whitespace, keeping purely
/// alphabetic tokens of at least two characters.
pub fn tokenize(text: &str) -> Vec<String> {
    strip_punctuation(&text.to_lowercase())
        .split_whitespace()
        .filter(|t| t.chars().count() >= 2 && t.chars().all(char::is_alphabetic))
        .map(str::to_owned)
        .collect()
}

/// Parses a newline-delimited stopword list. Entries are normalized the same
/// way as tokens so that `don't` also removes `dont`.
pub fn parse_stopwords(text: &str) -> HashSet<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .flat_map(|l| {
            let lower = l.to_lowercase();
            let stripped = strip_punctuation(&lower);
            [lower, stripped]
        })
        .collect()
}

pub fn default_stopwords() -> HashSet<String> {
    parse_stopwords(DEFAULT_STOPWORDS)
}

pub fn load_stopwords(path: &Path) -> Result<HashSet<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(parse_stopwords(&text))
}

/// Vocabulary filter settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VocabConfig {
    pub min_count: usize,
    pub max_df_ratio: f64,
    pub cap: usize,
}

impl Default for VocabConfig {
    fn default() -> Self {
        Self {
            min_count: DEFAULT_MIN_COUNT,
            max_df_ratio: DEFAULT_MAX_DF_RATIO,
            cap: DEFAULT_VOCAB_CAP,
        }
    }
}

pub fn build_vocabulary<S: AsRef<str>>(
    raw_docs: &[Vec<S>],
    stopwords: &HashSet<String>,
    cfg: &VocabConfig,
) -> Result<Vocabulary> {
    if raw_docs.is_empty() {
        return Err(Error::InvalidConfig("no documents to build a vocabulary from".into()));
    }
    if !(cfg.max_df_ratio > 0.0 && cfg.max_df_ratio <= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "max_df_ratio must lie in (0, 1], got {}",
            cfg.max_df_ratio
        )));
    }
    if cfg.min_count == 0 {
        return Err(Error::InvalidConfig("min_count must be at least 1".into()));
    }

    let mut count: HashMap<&str, usize> = HashMap::new();
    let mut df: HashMap<&str, usize> = HashMap::new();
    for doc in raw_docs {
        let mut seen = HashSet::new();
        for tok in doc {
            let tok = tok.as_ref();
            *count.entry(tok).or_default() += 1;
            if seen.insert(tok) {
                *df.entry(tok).or_default() += 1;
            }
        }
    }

    let n_docs = raw_docs.len() as f64;
    let mut kept: Vec<(&str, usize)> = count
        .into_iter()
        .filter(|&(tok, c)| {
            c >= cfg.min_count
                && !stopwords.contains(tok)
                && (df[tok] as f64) / n_docs <= cfg.max_df_ratio
        })
        .collect();
    if kept.is_empty() {
        return Err(Error::EmptyVocabulary);
    }
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    kept.truncate(cfg.cap);
    Vocabulary::from_tokens(kept.into_iter().map(|(t, _)| t.to_owned()).collect())
}

/// Counts in-vocabulary tokens; `None` when nothing survives.
pub fn vectorize<S: AsRef<str>>(
    id: &str,
    tokens: &[S],
    label: Option<&str>,
    vocab: &Vocabulary,
) -> Option<BowDocument> {
    let mut counts: BTreeMap<usize, u32> = BTreeMap::new();
    for tok in tokens {
        if let Some(w) = vocab.id(tok.as_ref()) {
            *counts.entry(w).or_default() += 1;
        }
    }
    if counts.is_empty() {
        return None;
    }
    Some(BowDocument {
        id: id.to_owned(),
        counts: counts.into_iter().collect(),
        label: label.map(str::to_owned),
    })
}

/// Reads either a directory of `.txt` files (one document each, sorted by
/// file name, id = file stem) or a JSONL file with `id`, `text`, optional
/// `label` and `step` fields.
pub fn read_raw_corpus(path: &Path) -> Result<Vec<RawDocument>> {
    if path.is_dir() {
        let mut entries: Vec<_> = fs::read_dir(path)
            .map_err(|e| Error::io(path, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "txt"))
            .collect();
        entries.sort();
        entries
            .into_iter()
            .map(|p| {
                let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
                let id = p
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_default();
                Ok(RawDocument {
                    id,
                    text,
                    label: None,
                    step: None,
                })
            })
            .collect()
    } else {
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut docs = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let doc: RawDocument = serde_json::from_str(&line).map_err(|e| Error::Format {
                line: i + 1,
                msg: e.to_string(),
            })?;
            docs.push(doc);
        }
        Ok(docs)
    }
}


#[cfg(test)]
mod props {
    use super::*;
    use proptest::prelude::*;

    fn corpus() -> impl Strategy<Value = Vec<Vec<String>>> {
        let word = prop::sample::select(vec!["ab", "cd", "ef", "gh", "ij", "kl", "mn"]);
        prop::collection::vec(prop::collection::vec(word.prop_map(String::from), 0..12), 1..15)
    }

    proptest! {
        #[test]
        fn kept_tokens_satisfy_filters(raw in corpus(), min_count in 1usize..4, max_df in 0.2f64..1.0) {
            let cfg = VocabConfig { min_count, max_df_ratio: max_df, cap: 100 };
            if let Ok(v) = build_vocabulary(&raw, &HashSet::new(), &cfg) {
                for tok in v.tokens() {
                    let count: usize = raw.iter().flatten().filter(|t| *t == tok).count();
                    let df = raw.iter().filter(|d| d.contains(tok)).count();
                    prop_assert!(count >= min_count);
                    prop_assert!(df as f64 / raw.len() as f64 <= max_df);
                }
                let again = build_vocabulary(&raw, &HashSet::new(), &cfg).unwrap();
                prop_assert_eq!(v, again);
            }
        }

        #[test]
        fn vectorized_total_equals_in_vocab_tokens(raw in corpus()) {
            let vocab = Vocabulary::from_tokens(vec!["ab".into(), "gh".into()]).unwrap();
            for doc in &raw {
                let expected = doc.iter().filter(|t| vocab.id(t).is_some()).count() as u32;
                let got = vectorize("d", doc, None, &vocab).map_or(0, |d| d.total());
                prop_assert_eq!(got, expected);
            }
        }
    }
}
