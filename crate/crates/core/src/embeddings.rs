//! Fixed word embeddings and the vector distances used for topic matching.

use std::collections::HashMap;
use std::io::BufRead;
use std::path::Path;

use log::info;
use ndarray::{Array2, ArrayView1};

use crate::corpus::Vocabulary;
use crate::error::{Error, Result};

pub const DEFAULT_MAX_ROWS: usize = 15_000;

/// `L x V` matrix whose column `v` embeds vocabulary word `v`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    rho: Array2<f64>,
}

impl EmbeddingMatrix {
    pub fn new(rho: Array2<f64>) -> Result<Self> {
        if rho.nrows() == 0 || rho.ncols() == 0 {
            return Err(Error::Dimension(format!(
                "embedding matrix must be non-empty, got {:?}",
                rho.dim()
            )));
        }
        if rho.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numerical("embedding matrix has non-finite entries".into()));
        }
        Ok(Self { rho })
    }

    pub fn rho(&self) -> &Array2<f64> {
        &self.rho
    }

    /// Embedding dimension `L`.
    pub fn dim(&self) -> usize {
        self.rho.nrows()
    }

    pub fn vocab_size(&self) -> usize {
        self.rho.ncols()
    }

    pub fn word(&self, v: usize) -> ArrayView1<'_, f64> {
        self.rho.column(v)
    }
}

/// Result of aligning an embedding file with a corpus vocabulary.
#[derive(Debug, Clone)]
pub struct LoadedEmbeddings {
    pub embeddings: EmbeddingMatrix,
    /// Input vocabulary restricted to words that have an embedding, in the
    /// input vocabulary's order.
    pub vocab: Vocabulary,
    /// Number of input vocabulary words without an embedding.
    pub dropped: usize,
}

/// Reads word vectors (`token v_1 ... v_L` per line) and keeps the ones in
/// `vocab`. At most `max_rows` lines are read, in file order.
pub fn read_embeddings<R: BufRead>(
    input: R,
    vocab: &Vocabulary,
    max_rows: usize,
) -> Result<LoadedEmbeddings> {
    let mut dim: Option<usize> = None;
    let mut found: HashMap<usize, Vec<f64>> = HashMap::new();
    for (i, line) in input.lines().take(max_rows).enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::io("<embeddings>", e))?;
        let mut fields = line.split(' ').filter(|f| !f.is_empty());
        let Some(token) = fields.next() else {
            return Err(Error::Format {
                line: lineno,
                msg: "empty line".into(),
            });
        };
        let values = fields
            .map(|f| {
                f.parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| Error::Format {
                        line: lineno,
                        msg: format!("cannot parse {f:?} as a real"),
                    })
            })
            .collect::<Result<Vec<f64>>>()?;
        match dim {
            None if values.is_empty() => {
                return Err(Error::Format {
                    line: lineno,
                    msg: "no vector components".into(),
                })
            }
            None => dim = Some(values.len()),
            Some(l) if l != values.len() => {
                return Err(Error::Format {
                    line: lineno,
                    msg: format!("expected {l} components, found {}", values.len()),
                })
            }
            Some(_) => {}
        }
        if let Some(v) = vocab.id(token) {
            found.entry(v).or_insert(values);
        }
    }

    let kept: Vec<usize> = (0..vocab.len()).filter(|v| found.contains_key(v)).collect();
    if kept.is_empty() {
        return Err(Error::EmptyVocabulary);
    }
    let l = dim.expect("at least one line was read");
    let mut rho = Array2::zeros((l, kept.len()));
    for (col, v) in kept.iter().enumerate() {
        for (r, x) in found[v].iter().enumerate() {
            rho[[r, col]] = *x;
        }
    }
    let sub = Vocabulary::from_tokens(
        kept.iter()
            .map(|&v| vocab.token(v).expect("id in range").to_owned())
            .collect(),
    )?;
    let dropped = vocab.len() - sub.len();
    if dropped > 0 {
        info!("{dropped} vocabulary words have no embedding and were dropped");
    }
    Ok(LoadedEmbeddings {
        embeddings: EmbeddingMatrix::new(rho)?,
        vocab: sub,
        dropped,
    })
}

pub fn load_embeddings(path: &Path, vocab: &Vocabulary, max_rows: usize) -> Result<LoadedEmbeddings> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_embeddings(std::io::BufReader::new(file), vocab, max_rows)
}

/// Writes `rho` in word-vector text format.
pub fn write_embeddings<W: std::io::Write>(
    mut out: W,
    vocab: &Vocabulary,
    emb: &EmbeddingMatrix,
) -> std::io::Result<()> {
    for (v, tok) in vocab.tokens().iter().enumerate() {
        write!(out, "{tok}")?;
        for x in emb.word(v) {
            write!(out, " {x}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

fn norm(u: ArrayView1<'_, f64>) -> f64 {
    u.dot(&u).sqrt()
}

/// `1 - cos(u, v)`, in `[0, 2]`.
pub fn cosine_distance(u: ArrayView1<'_, f64>, v: ArrayView1<'_, f64>) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::Dimension(format!("{} vs {}", u.len(), v.len())));
    }
    let (nu, nv) = (norm(u), norm(v));
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::ZeroVector);
    }
    let cos = (u.dot(&v) / (nu * nv)).clamp(-1.0, 1.0);
    Ok(1.0 - cos)
}

pub fn minkowski_distance(u: ArrayView1<'_, f64>, v: ArrayView1<'_, f64>, p: f64) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::Dimension(format!("{} vs {}", u.len(), v.len())));
    }
    if p.is_infinite() {
        return Ok(u.iter().zip(v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
    }
    Ok(u.iter()
        .zip(v)
        .map(|(a, b)| (a - b).abs().powf(p))
        .sum::<f64>()
        .powf(p.recip()))
}

pub fn euclidean_distance(u: ArrayView1<'_, f64>, v: ArrayView1<'_, f64>) -> Result<f64> {
    minkowski_distance(u, v, 2.0)
}


#[cfg(test)]
mod props {
    use super::*;
    use ndarray::Array1;
    use proptest::prelude::*;

    fn vec3() -> impl Strategy<Value = Array1<f64>> {
        prop::collection::vec(-5.0f64..5.0, 3)
            .prop_filter("nonzero", |v| v.iter().any(|x| x.abs() > 1e-3))
            .prop_map(Array1::from)
    }

    proptest! {
        #[test]
        fn cosine_is_scale_invariant_and_symmetric(u in vec3(), v in vec3(), c in 0.01f64..100.0) {
            let scaled = &u * c;
            prop_assert!(cosine_distance(u.view(), scaled.view()).unwrap().abs() < 1e-12);
            let d1 = cosine_distance(u.view(), v.view()).unwrap();
            let d2 = cosine_distance(v.view(), u.view()).unwrap();
            prop_assert!((d1 - d2).abs() < 1e-15);
            prop_assert!((0.0..=2.0).contains(&d1));
        }
    }
}
