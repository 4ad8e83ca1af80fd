//! Embedded topic model.
//!
//! Topics are softmax projections of latent topic embeddings onto fixed word
//! embeddings, `beta_k = softmax(rho^T alpha_k)`. Documents get a logistic
//! normal proportion vector `theta_d = softmax(delta_d)` whose Gaussian
//! posterior is produced by a one-hidden-layer ReLU encoder. The ELBO and its
//! gradients are computed by hand in [`objective`]; [`train`] runs Adam over
//! them.

mod adam;
mod objective;
mod train;

use std::sync::Arc;

use ndarray::{Array1, Array2, ArrayView1, Axis, ShapeBuilder};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::BowDocument;
use crate::embeddings::EmbeddingMatrix;
use crate::error::{Error, Result};

pub use adam::Adam;
pub use objective::{elbo, gradients, ElboTerms, Gradients, Noise, RECON_EPS};
pub use train::{train, TrainOutput};

pub const DEFAULT_TOPICS: usize = 3;
pub const DEFAULT_HIDDEN: usize = 800;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub mc_samples: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 3000,
            batch_size: 1000,
            learning_rate: 0.01,
            weight_decay: 0.006,
            seed: 0,
            mc_samples: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.mc_samples == 0 {
            return Err(Error::InvalidConfig(
                "epochs, batch_size and mc_samples must be positive".into(),
            ));
        }
        if !(self.learning_rate > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::InvalidConfig(
                "learning_rate must be positive and weight_decay non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Inference network parameters. `w1` is `H x V` and stored column-major so
/// that the column of a word is contiguous.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w_mu: Array2<f64>,
    pub b_mu: Array1<f64>,
    pub w_sig: Array2<f64>,
    pub b_sig: Array1<f64>,
}

impl EncoderParams {
    pub fn hidden(&self) -> usize {
        self.b1.len()
    }

    pub fn vocab_size(&self) -> usize {
        self.w1.ncols()
    }

    pub fn topics(&self) -> usize {
        self.b_mu.len()
    }

    /// Replaces both heads with `keep.len()` rows. Row `i` is copied from old
    /// row `keep[i]` when present, otherwise drawn Xavier-uniform for the new
    /// head shape. Biases of fresh rows are zero.
    pub fn rebuild_heads<R: Rng>(&mut self, keep: &[Option<usize>], rng: &mut R) {
        let h = self.hidden();
        let k = keep.len();
        let bound = xavier_bound(h, k);
        let rebuild = |w: &Array2<f64>, b: &Array1<f64>, rng: &mut R| {
            let mut nw = Array2::zeros((k, h));
            let mut nb = Array1::zeros(k);
            for (i, src) in keep.iter().enumerate() {
                match src {
                    Some(j) => {
                        nw.row_mut(i).assign(&w.row(*j));
                        nb[i] = b[*j];
                    }
                    None => nw.row_mut(i).mapv_inplace(|_| rng.random_range(-bound..=bound)),
                }
            }
            (nw, nb)
        };
        let (w_mu, b_mu) = rebuild(&self.w_mu, &self.b_mu, rng);
        let (w_sig, b_sig) = rebuild(&self.w_sig, &self.b_sig, rng);
        self.w_mu = w_mu;
        self.b_mu = b_mu;
        self.w_sig = w_sig;
        self.b_sig = b_sig;
    }
}

/// One time step's model: topic embeddings `alpha` (`L x K`), encoder, and a
/// shared handle on the fixed word embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct EtmModel {
    pub alpha: Array2<f64>,
    pub encoder: EncoderParams,
    pub rho: Arc<EmbeddingMatrix>,
}

/// Column-stochastic `V x K` topic-word matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct TopicDistribution {
    pub beta: Array2<f64>,
}

impl TopicDistribution {
    pub fn topics(&self) -> usize {
        self.beta.ncols()
    }

    pub fn topic(&self, k: usize) -> ArrayView1<'_, f64> {
        self.beta.column(k)
    }
}

pub(crate) fn xavier_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

fn xavier<R: Rng>(rows: usize, cols: usize, fan_in: usize, fan_out: usize, rng: &mut R) -> Array2<f64> {
    let b = xavier_bound(fan_in, fan_out);
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-b..=b))
}

/// Xavier-uniform `L x K` topic embeddings.
pub fn xavier_alpha<R: Rng>(l: usize, k: usize, rng: &mut R) -> Array2<f64> {
    xavier(l, k, l, k, rng)
}

pub fn init_model(
    k: usize,
    hidden: usize,
    rho: Arc<EmbeddingMatrix>,
    seed: u64,
) -> Result<EtmModel> {
    let (l, v) = (rho.dim(), rho.vocab_size());
    if k == 0 || hidden == 0 {
        return Err(Error::Dimension("topic count and hidden size must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w1_rm = xavier(hidden, v, v, hidden, &mut rng);
    let mut w1 = Array2::zeros((hidden, v).f());
    w1.assign(&w1_rm);
    let encoder = EncoderParams {
        w1,
        b1: Array1::zeros(hidden),
        w_mu: xavier(k, hidden, hidden, k, &mut rng),
        b_mu: Array1::zeros(k),
        w_sig: xavier(k, hidden, hidden, k, &mut rng),
        b_sig: Array1::zeros(k),
    };
    let alpha = xavier_alpha(l, k, &mut rng);
    Ok(EtmModel {
        alpha,
        encoder,
        rho,
    })
}

/// Column-wise softmax of `rho^T alpha`, with max-subtraction.
pub fn compute_beta(rho: &EmbeddingMatrix, alpha: &Array2<f64>) -> Result<TopicDistribution> {
    if rho.dim() != alpha.nrows() {
        return Err(Error::Dimension(format!(
            "rho has L={} but alpha has L={}",
            rho.dim(),
            alpha.nrows()
        )));
    }
    let mut logits = rho.rho().t().dot(alpha);
    for mut col in logits.axis_iter_mut(Axis(1)) {
        softmax_inplace(col.view_mut());
    }
    Ok(TopicDistribution { beta: logits })
}

pub(crate) fn softmax_inplace(mut x: ndarray::ArrayViewMut1<'_, f64>) {
    let max = x.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    x.mapv_inplace(|v| (v - max).exp());
    let s = x.sum();
    x.mapv_inplace(|v| v / s);
}

pub(crate) fn softmax(x: &Array1<f64>) -> Array1<f64> {
    let mut out = x.clone();
    softmax_inplace(out.view_mut());
    out
}

/// Encoder output for one document: `(mu, logvar, relu hidden)`.
pub(crate) struct Encoded {
    pub h_pre: Array1<f64>,
    pub h: Array1<f64>,
    pub mu: Array1<f64>,
    pub logvar: Array1<f64>,
}

pub(crate) fn encode_doc(enc: &EncoderParams, doc: &BowDocument) -> Encoded {
    let n = f64::from(doc.total());
    let mut h_pre = enc.b1.clone();
    for &(w, c) in &doc.counts {
        h_pre.scaled_add(f64::from(c) / n, &enc.w1.column(w));
    }
    let h = h_pre.mapv(|x| x.max(0.0));
    let mu = enc.w_mu.dot(&h) + &enc.b_mu;
    let logvar = enc.w_sig.dot(&h) + &enc.b_sig;
    Encoded {
        h_pre,
        h,
        mu,
        logvar,
    }
}

impl EtmModel {
    pub fn topics(&self) -> usize {
        self.alpha.ncols()
    }

    pub fn beta(&self) -> TopicDistribution {
        compute_beta(&self.rho, &self.alpha).expect("model shapes are consistent")
    }

    /// Variational mean and log-variance for a count-normalized bag of words.
    pub fn encode(&self, x_norm: ArrayView1<'_, f64>) -> Result<(Array1<f64>, Array1<f64>)> {
        let enc = &self.encoder;
        if x_norm.len() != enc.vocab_size() {
            return Err(Error::Dimension(format!(
                "input has length {} but vocabulary has {}",
                x_norm.len(),
                enc.vocab_size()
            )));
        }
        let h = (enc.w1.dot(&x_norm) + &enc.b1).mapv(|x| x.max(0.0));
        Ok((enc.w_mu.dot(&h) + &enc.b_mu, enc.w_sig.dot(&h) + &enc.b_sig))
    }

    /// Topic proportions at the posterior mean, `softmax(mu_d)`.
    pub fn theta(&self, doc: &BowDocument) -> Array1<f64> {
        softmax(&encode_doc(&self.encoder, doc).mu)
    }

    /// Mean of `theta_d` over documents.
    pub fn mean_theta(&self, docs: &[BowDocument]) -> Array1<f64> {
        let mut acc = Array1::zeros(self.topics());
        for d in docs {
            acc += &self.theta(d);
        }
        acc / docs.len().max(1) as f64
    }

    pub fn check_shapes(&self) -> Result<()> {
        let enc = &self.encoder;
        let k = self.topics();
        let ok = self.alpha.nrows() == self.rho.dim()
            && enc.vocab_size() == self.rho.vocab_size()
            && enc.w1.nrows() == enc.hidden()
            && enc.w_mu.dim() == (k, enc.hidden())
            && enc.w_sig.dim() == (k, enc.hidden())
            && enc.b_sig.len() == k
            && enc.b_mu.len() == k;
        if ok {
            Ok(())
        } else {
            Err(Error::Dimension("model parameter shapes are inconsistent".into()))
        }
    }

    pub fn to_checkpoint(&self, vocab_hash: &str) -> Checkpoint {
        let enc = &self.encoder;
        Checkpoint {
            v: enc.vocab_size(),
            k: self.topics(),
            l: self.alpha.nrows(),
            h: enc.hidden(),
            alpha: rows(&self.alpha),
            encoder: EncoderCheckpoint {
                w1: rows(&enc.w1),
                b1: enc.b1.to_vec(),
                w_mu: rows(&enc.w_mu),
                b_mu: enc.b_mu.to_vec(),
                w_sig: rows(&enc.w_sig),
                b_sig: enc.b_sig.to_vec(),
            },
            vocab_hash: vocab_hash.to_owned(),
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint, rho: Arc<EmbeddingMatrix>) -> Result<Self> {
        let e = &ckpt.encoder;
        let mut w1 = Array2::zeros((ckpt.h, ckpt.v).f());
        w1.assign(&from_rows(&e.w1, ckpt.h, ckpt.v, "W1")?);
        let model = EtmModel {
            alpha: from_rows(&ckpt.alpha, ckpt.l, ckpt.k, "alpha")?,
            encoder: EncoderParams {
                w1,
                b1: Array1::from(e.b1.clone()),
                w_mu: from_rows(&e.w_mu, ckpt.k, ckpt.h, "Wmu")?,
                b_mu: Array1::from(e.b_mu.clone()),
                w_sig: from_rows(&e.w_sig, ckpt.k, ckpt.h, "Wsig")?,
                b_sig: Array1::from(e.b_sig.clone()),
            },
            rho,
        };
        model.check_shapes()?;
        Ok(model)
    }
}

/// JSON checkpoint layout; matrices are nested row-major arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    #[serde(rename = "V")]
    pub v: usize,
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "L")]
    pub l: usize,
    #[serde(rename = "H")]
    pub h: usize,
    pub alpha: Vec<Vec<f64>>,
    pub encoder: EncoderCheckpoint,
    pub vocab_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderCheckpoint {
    #[serde(rename = "W1")]
    pub w1: Vec<Vec<f64>>,
    pub b1: Vec<f64>,
    #[serde(rename = "Wmu")]
    pub w_mu: Vec<Vec<f64>>,
    #[serde(rename = "bmu")]
    pub b_mu: Vec<f64>,
    #[serde(rename = "Wsig")]
    pub w_sig: Vec<Vec<f64>>,
    #[serde(rename = "bsig")]
    pub b_sig: Vec<f64>,
}

pub(crate) fn rows(m: &Array2<f64>) -> Vec<Vec<f64>> {
    m.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn from_rows(data: &[Vec<f64>], r: usize, c: usize, name: &str) -> Result<Array2<f64>> {
    if data.len() != r || data.iter().any(|row| row.len() != c) {
        return Err(Error::Dimension(format!("{name} is not {r}x{c}")));
    }
    Ok(Array2::from_shape_fn((r, c), |(i, j)| data[i][j]))
}
