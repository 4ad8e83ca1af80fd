//! ELBO and its exact gradient.
//!
//! Per document, with `x` the counts and `N` their total:
//!
//! ```text
//! h     = relu(W1 x/N + b1)
//! mu    = Wmu h + bmu,   logvar = Wsig h + bsig
//! delta = mu + exp(logvar/2) * eps
//! theta = softmax(delta)
//! recon = mean_s sum_v x_v ln(theta^T beta_v + 1e-10)
//! kl    = 1/2 sum_k (mu_k^2 + exp(logvar_k) - logvar_k - 1)
//! ```
//!
//! and the objective is `sum_d recon_d - kl_d`. Gradients are of the
//! negative ELBO.

use ndarray::{Array1, Array2, Array3, Axis, ShapeBuilder};

use super::{encode_doc, softmax_inplace, EtmModel, TopicDistribution};
use crate::corpus::BowDocument;
use crate::error::{Error, Result};

/// Stability constant inside the reconstruction log.
pub const RECON_EPS: f64 = 1e-10;

/// Standard-normal draws, shaped `(documents, mc_samples, K)`.
pub type Noise = Array3<f64>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElboTerms {
    /// `recon - kl`
    pub total: f64,
    pub recon: f64,
    pub kl: f64,
}

/// Gradient of the negative ELBO, shaped like the model parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w_mu: Array2<f64>,
    pub b_mu: Array1<f64>,
    pub w_sig: Array2<f64>,
    pub b_sig: Array1<f64>,
    pub alpha: Array2<f64>,
}

impl Gradients {
    pub fn zeros_like(model: &EtmModel) -> Self {
        let enc = &model.encoder;
        Self {
            w1: Array2::zeros(enc.w1.raw_dim().f()),
            b1: Array1::zeros(enc.b1.len()),
            w_mu: Array2::zeros(enc.w_mu.raw_dim()),
            b_mu: Array1::zeros(enc.b_mu.len()),
            w_sig: Array2::zeros(enc.w_sig.raw_dim()),
            b_sig: Array1::zeros(enc.b_sig.len()),
            alpha: Array2::zeros(model.alpha.raw_dim()),
        }
    }

    /// Parameter groups in a fixed order: W1, b1, Wmu, bmu, Wsig, bsig, alpha.
    pub fn groups(&self) -> [&[f64]; 7] {
        [
            self.w1.as_slice_memory_order().expect("contiguous"),
            self.b1.as_slice().expect("contiguous"),
            self.w_mu.as_slice().expect("contiguous"),
            self.b_mu.as_slice().expect("contiguous"),
            self.w_sig.as_slice().expect("contiguous"),
            self.b_sig.as_slice().expect("contiguous"),
            self.alpha.as_slice().expect("contiguous"),
        ]
    }

    pub fn groups_mut(&mut self) -> [&mut [f64]; 7] {
        [
            self.w1.as_slice_memory_order_mut().expect("contiguous"),
            self.b1.as_slice_mut().expect("contiguous"),
            self.w_mu.as_slice_mut().expect("contiguous"),
            self.b_mu.as_slice_mut().expect("contiguous"),
            self.w_sig.as_slice_mut().expect("contiguous"),
            self.b_sig.as_slice_mut().expect("contiguous"),
            self.alpha.as_slice_mut().expect("contiguous"),
        ]
    }

    pub fn scale(&mut self, c: f64) {
        for g in self.groups_mut() {
            g.iter_mut().for_each(|x| *x *= c);
        }
    }
}

impl EtmModel {
    /// Mutable parameter groups, in the same order and memory layout as
    /// [`Gradients::groups`].
    pub fn param_groups_mut(&mut self) -> [&mut [f64]; 7] {
        let enc = &mut self.encoder;
        [
            enc.w1.as_slice_memory_order_mut().expect("contiguous"),
            enc.b1.as_slice_mut().expect("contiguous"),
            enc.w_mu.as_slice_mut().expect("contiguous"),
            enc.b_mu.as_slice_mut().expect("contiguous"),
            enc.w_sig.as_slice_mut().expect("contiguous"),
            enc.b_sig.as_slice_mut().expect("contiguous"),
            self.alpha.as_slice_mut().expect("contiguous"),
        ]
    }
}

fn check_inputs(model: &EtmModel, n_docs: usize, noise: &Noise) -> Result<()> {
    if n_docs == 0 {
        return Err(Error::InvalidConfig("batch is empty".into()));
    }
    let (d, s, k) = noise.dim();
    if s == 0 {
        return Err(Error::InvalidConfig(
            "noise carries zero Monte Carlo samples per document".into(),
        ));
    }
    if d != n_docs || k != model.topics() {
        return Err(Error::Dimension(format!(
            "noise is {d}x{s}x{k}, expected {n_docs}x_x{}",
            model.topics()
        )));
    }
    Ok(())
}

/// ELBO terms summed over the documents.
pub fn elbo(model: &EtmModel, docs: &[BowDocument], noise: &Noise) -> Result<ElboTerms> {
    let refs: Vec<&BowDocument> = docs.iter().collect();
    check_inputs(model, refs.len(), noise)?;
    Ok(evaluate(model, &refs, noise, None))
}

/// ELBO terms and the gradient of the negative ELBO. With `freeze_alpha`
/// the alpha gradient is left at zero.
pub fn gradients(
    model: &EtmModel,
    docs: &[BowDocument],
    noise: &Noise,
    freeze_alpha: bool,
) -> Result<(ElboTerms, Gradients)> {
    let refs: Vec<&BowDocument> = docs.iter().collect();
    check_inputs(model, refs.len(), noise)?;
    Ok(gradients_ref(model, &refs, noise, freeze_alpha))
}

pub(crate) fn gradients_ref(
    model: &EtmModel,
    docs: &[&BowDocument],
    noise: &Noise,
    freeze_alpha: bool,
) -> (ElboTerms, Gradients) {
    let mut grads = Gradients::zeros_like(model);
    let terms = evaluate(model, docs, noise, Some((&mut grads, freeze_alpha)));
    (terms, grads)
}

fn evaluate(
    model: &EtmModel,
    docs: &[&BowDocument],
    noise: &Noise,
    mut grads: Option<(&mut Gradients, bool)>,
) -> ElboTerms {
    let TopicDistribution { beta } = model.beta();
    let k = model.topics();
    let n_samples = noise.dim().1;
    let inv_s = 1.0 / n_samples as f64;
    let enc = &model.encoder;

    // d(-ELBO)/d(beta), accumulated over documents
    let mut g_beta = grads.as_ref().map(|_| Array2::<f64>::zeros(beta.raw_dim()));

    let mut recon = 0.0;
    let mut kl = 0.0;
    let mut theta = Array1::<f64>::zeros(k);
    let mut g_theta = Array1::<f64>::zeros(k);
    let mut coef = vec![0.0; 0];

    for (d, doc) in docs.iter().enumerate() {
        let e = encode_doc(enc, doc);
        let sigma = e.logvar.mapv(|lv| (0.5 * lv).exp());

        let kl_d = 0.5
            * e.mu
                .iter()
                .zip(&e.logvar)
                .map(|(m, lv)| m * m + lv.exp() - lv - 1.0)
                .sum::<f64>();
        kl += kl_d;

        let mut d_mu = e.mu.clone();
        let mut d_lv = e.logvar.mapv(|lv| 0.5 * (lv.exp() - 1.0));

        let mut recon_d = 0.0;
        for s in 0..n_samples {
            let eps = noise.slice(ndarray::s![d, s, ..]);
            for i in 0..k {
                theta[i] = e.mu[i] + sigma[i] * eps[i];
            }
            softmax_inplace(theta.view_mut());

            coef.clear();
            g_theta.fill(0.0);
            let mut recon_s = 0.0;
            for &(w, c) in &doc.counts {
                let row = beta.row(w);
                let p = theta.dot(&row);
                let x = f64::from(c);
                recon_s += x * (p + RECON_EPS).ln();
                // d recon / d p_w
                let g = x / (p + RECON_EPS);
                coef.push(g);
                g_theta.scaled_add(g, &row);
            }
            recon_d += recon_s;

            if let Some(g_beta) = g_beta.as_mut() {
                for (&(w, _), &g) in doc.counts.iter().zip(&coef) {
                    g_beta.row_mut(w).scaled_add(-g * inv_s, &theta);
                }
                // -d recon/d theta pushed through the softmax
                let dot = theta.dot(&g_theta);
                for i in 0..k {
                    let d_delta = -theta[i] * (g_theta[i] - dot) * inv_s;
                    d_mu[i] += d_delta;
                    d_lv[i] += d_delta * eps[i] * 0.5 * sigma[i];
                }
            }
        }
        recon += recon_d * inv_s;

        if let Some((g, _)) = grads.as_mut() {
            for i in 0..k {
                g.w_mu.row_mut(i).scaled_add(d_mu[i], &e.h);
                g.w_sig.row_mut(i).scaled_add(d_lv[i], &e.h);
            }
            g.b_mu += &d_mu;
            g.b_sig += &d_lv;
            let mut d_h = enc.w_mu.t().dot(&d_mu) + enc.w_sig.t().dot(&d_lv);
            d_h.zip_mut_with(&e.h_pre, |dh, &pre| {
                if pre <= 0.0 {
                    *dh = 0.0;
                }
            });
            g.b1 += &d_h;
            let n = f64::from(doc.total());
            for &(w, c) in &doc.counts {
                g.w1.column_mut(w).scaled_add(f64::from(c) / n, &d_h);
            }
        }
    }

    if let (Some((g, freeze)), Some(g_beta)) = (grads, g_beta) {
        if !freeze {
            // softmax over the vocabulary, column by column
            let mut d_logits = &beta * &g_beta;
            let col_dot = d_logits.sum_axis(Axis(0));
            for (mut col, (bcol, c)) in d_logits
                .axis_iter_mut(Axis(1))
                .zip(beta.axis_iter(Axis(1)).zip(col_dot.iter()))
            {
                col.zip_mut_with(&bcol, |x, &b| *x -= b * c);
            }
            g.alpha = model.rho.rho().dot(&d_logits);
        }
    }

    ElboTerms {
        total: recon - kl,
        recon,
        kl,
    }
}
