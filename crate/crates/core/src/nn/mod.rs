//! From-scratch transformer: layers, attention, encoder-decoder model, Adam
//! training, finite-difference gradient checks and weight persistence.

pub mod adam;
pub mod attention;
pub mod block;
pub mod gradcheck;
pub mod layers;
pub mod model;
pub mod persist;
pub mod train;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use adam::{Adam, AdamConfig};
pub use attention::{scaled_dot_attention, MultiHeadAttention};
pub use block::TransformerBlock;
pub use gradcheck::{finite_difference_check, transformer_grad_check, GradCheckReport};
pub use layers::{positional_encoding, Dense, Dropout, LayerNorm, Parameters};
pub use model::{
    build_model, count_params, table1_mismatches, LayerCount, TransformerConfig, TransformerModel, TABLE1_GOLDENS,
};
pub use persist::{load_weights, save_weights, WeightsManifest};
pub use train::{train, Sample, TrainConfig, TrainHistory};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    #[default]
    Mae,
    Mse,
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mae" => Ok(LossKind::Mae),
            "mse" => Ok(LossKind::Mse),
            other => Err(Error::validation(format!("unknown loss '{other}' (expected mae or mse)"))),
        }
    }
}

fn check_lengths(pred: &[f64], target: &[f64]) -> Result<()> {
    if pred.len() != target.len() {
        return Err(Error::validation(format!(
            "prediction length {} differs from target length {}",
            pred.len(),
            target.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::validation("loss of an empty sequence"));
    }
    Ok(())
}

/// Mean absolute or mean squared error over all elements.
pub fn loss(pred: &[f64], target: &[f64], kind: LossKind) -> Result<f64> {
    check_lengths(pred, target)?;
    let n = pred.len() as f64;
    let sum: f64 = pred
        .iter()
        .zip(target)
        .map(|(p, t)| match kind {
            LossKind::Mae => (p - t).abs(),
            LossKind::Mse => (p - t) * (p - t),
        })
        .sum();
    Ok(sum / n)
}

/// Gradient of [`loss`] w.r.t. `pred`. The MAE subgradient at zero error is 0.
pub fn loss_grad(pred: &[f64], target: &[f64], kind: LossKind) -> Result<Vec<f64>> {
    check_lengths(pred, target)?;
    let n = pred.len() as f64;
    Ok(pred
        .iter()
        .zip(target)
        .map(|(p, t)| {
            let e = p - t;
            match kind {
                LossKind::Mae => {
                    if e > 0.0 {
                        1.0 / n
                    } else if e < 0.0 {
                        -1.0 / n
                    } else {
                        0.0
                    }
                }
                LossKind::Mse => 2.0 * e / n,
            }
        })
        .collect())
}
