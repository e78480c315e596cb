//! Mini-batch Adam training with deterministic data order and dropout masks.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::adam::{Adam, AdamConfig};
use crate::nn::layers::{Dropout, Parameters};
use crate::nn::model::TransformerModel;
use crate::nn::{loss, loss_grad, LossKind};
use crate::preprocess::SegmentPair;

/// Examples per parallel work unit. Fixed so the reduction order never depends on thread count.
const CHUNK: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub loss: LossKind,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 3,
            batch_size: 128,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            loss: LossKind::Mae,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::validation("epochs and batch_size must be positive"));
        }
        self.adam().validate()
    }
}

/// One input/target pair of normalized sequences.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub input: Vec<f64>,
    pub target: Vec<f64>,
}

impl From<&SegmentPair> for Sample {
    fn from(p: &SegmentPair) -> Self {
        Sample {
            input: p.ppg.clone(),
            target: p.abp.clone(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    /// Mini-batch loss before each update.
    pub step_loss: Vec<f64>,
    pub epoch_train_loss: Vec<f64>,
    /// Inference-mode loss on the validation set after each epoch; empty without one.
    pub epoch_val_loss: Vec<f64>,
}

fn example_seed(seed: u64, step: u64, index: usize) -> u64 {
    let mut z = seed
        .wrapping_add(step.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add((index as u64).wrapping_mul(0xBF58_476D_1CE4_E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mean loss over `batch` and the gradient of that mean, with dropout masks
/// drawn from `(seed, step, example)`.
pub fn batch_gradient(
    model: &TransformerModel,
    batch: &[&Sample],
    kind: LossKind,
    dropout_seed: Option<(u64, u64)>,
) -> Result<(f64, TransformerModel)> {
    let scale = 1.0 / batch.len() as f64;
    let partials: Vec<Result<(f64, TransformerModel)>> = batch
        .par_chunks(CHUNK)
        .enumerate()
        .map(|(c, chunk)| {
            let mut grad = model.zeros_like();
            let mut total = 0.0;
            for (j, s) in chunk.iter().enumerate() {
                let mut dropout = match dropout_seed {
                    Some((seed, step)) => {
                        Dropout::seeded(model.config.dropout, example_seed(seed, step, c * CHUNK + j))
                    }
                    None => Dropout::Off,
                };
                let (pred, cache) = model.forward_with_cache(&s.input, &mut dropout)?;
                total += loss(&pred, &s.target, kind)?;
                let mut d = loss_grad(&pred, &s.target, kind)?;
                d.iter_mut().for_each(|v| *v *= scale);
                model.backward(&cache, &d, &mut grad);
            }
            Ok((total, grad))
        })
        .collect();

    let mut total = 0.0;
    let mut grad = model.zeros_like();
    for part in partials {
        let (l, g) = part?;
        total += l;
        for (acc, p) in grad.params_mut().into_iter().zip(g.named_params()) {
            acc.add_scaled(p.1, 1.0);
        }
    }
    Ok((total * scale, grad))
}

/// Mean inference-mode loss over `samples`.
pub fn evaluate_loss(model: &TransformerModel, samples: &[Sample], kind: LossKind) -> Result<f64> {
    let losses: Vec<Result<f64>> = samples
        .par_iter()
        .map(|s| loss(&model.forward(&s.input)?, &s.target, kind))
        .collect();
    let mut total = 0.0;
    for l in losses {
        total += l?;
    }
    Ok(total / samples.len() as f64)
}

/// Trains `model` in place. The shuffle order and every dropout mask derive from `config.seed`.
pub fn train(
    model: &mut TransformerModel,
    train_set: &[Sample],
    val_set: &[Sample],
    config: &TrainConfig,
) -> Result<TrainHistory> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::validation("training set is empty"));
    }
    let mut adam = Adam::new(config.adam(), model)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = TrainHistory::default();
    let mut step: u64 = 0;

    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_sum = 0.0;
        for idx in order.chunks(config.batch_size) {
            let batch: Vec<&Sample> = idx.iter().map(|&i| &train_set[i]).collect();
            let (l, grad) = batch_gradient(model, &batch, config.loss, Some((config.seed, step)))?;
            if !l.is_finite() {
                return Err(Error::Training(format!("non-finite loss {l} at step {step}")));
            }
            adam.update(model, &grad);
            if !model.is_finite() {
                return Err(Error::Training(format!(
                    "parameters became non-finite after step {step}"
                )));
            }
            history.step_loss.push(l);
            epoch_sum += l * batch.len() as f64;
            step += 1;
        }
        history.epoch_train_loss.push(epoch_sum / train_set.len() as f64);
        if !val_set.is_empty() {
            let v = evaluate_loss(model, val_set, config.loss)?;
            if !v.is_finite() {
                return Err(Error::Training(format!("non-finite validation loss at step {step}")));
            }
            history.epoch_val_loss.push(v);
        }
    }
    Ok(history)
}
