use log::debug;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::adam::Adam;
use super::objective::{gradients_ref, Noise};
use super::{EtmModel, TrainConfig};
use crate::corpus::{Batch, BowDocument};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub model: EtmModel,
    /// Mean negative ELBO per document, one entry per epoch.
    pub loss_trace: Vec<f64>,
}

/// Minibatch Adam on the negative ELBO. Each minibatch step uses the mean
/// per-document gradient. With `freeze_alpha` the topic embeddings are not
/// updated.
pub fn train(
    mut model: EtmModel,
    corpus: &Batch,
    config: &TrainConfig,
    freeze_alpha: bool,
) -> Result<TrainOutput> {
    config.validate()?;
    model.check_shapes()?;
    // the optimizer walks alpha as a row-major slice
    if !model.alpha.is_standard_layout() {
        model.alpha = model.alpha.as_standard_layout().into_owned();
    }
    if corpus.is_empty() {
        return Err(Error::InvalidConfig("cannot train on an empty batch".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut opt = Adam::new(&model, config.learning_rate, config.weight_decay);
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let k = model.topics();
    let mut loss_trace = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let docs: Vec<&BowDocument> = chunk.iter().map(|&i| &corpus.docs[i]).collect();
            let noise = Noise::from_shape_fn((docs.len(), config.mc_samples, k), |_| {
                rng.sample(StandardNormal)
            });
            let (terms, mut grads) = gradients_ref(&model, &docs, &noise, freeze_alpha);
            let loss = -terms.total;
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch, loss });
            }
            epoch_loss += loss;
            grads.scale(1.0 / docs.len() as f64);
            opt.step(&mut model, &grads, freeze_alpha);
        }
        let mean = epoch_loss / corpus.len() as f64;
        if epoch % 100 == 0 {
            debug!("epoch {epoch}: loss {mean:.4}");
        }
        loss_trace.push(mean);
    }
    Ok(TrainOutput { model, loss_trace })
}
