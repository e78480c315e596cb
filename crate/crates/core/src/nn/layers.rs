//! Dense and layer-norm layers, dropout, softmax and positional encoding.
//!
//! Every layer keeps its forward intermediates in an explicit cache value and
//! accumulates parameter gradients into a same-shaped gradient struct.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Access to a module's trainable tensors in a fixed order.
pub trait Parameters {
    /// Parameter tensors paired with dotted names, in canonical order.
    fn named_params(&self) -> Vec<(String, &Matrix)>;

    /// Mutable parameter tensors, same order as [`Parameters::named_params`].
    fn params_mut(&mut self) -> Vec<&mut Matrix>;

    fn param_count(&self) -> usize {
        self.named_params().iter().map(|(_, m)| m.len()).sum()
    }

    fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.fill(0.0);
        }
    }
}

pub(crate) fn prefixed<'a>(prefix: &str, inner: Vec<(String, &'a Matrix)>) -> Vec<(String, &'a Matrix)> {
    inner
        .into_iter()
        .map(|(n, m)| (format!("{prefix}.{n}"), m))
        .collect()
}

/// Glorot-uniform weight initialisation: `U(−√(6/(fan_in+fan_out)), +…)`.
pub fn glorot_uniform(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.random_range(-limit..limit)).collect();
    Matrix::from_vec(rows, cols, data).expect("sized by construction")
}

/// Fully connected layer `y = x W + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    /// `in × out`
    pub w: Matrix,
    /// `1 × out`
    pub b: Matrix,
}

impl Dense {
    pub fn new(inputs: usize, outputs: usize, rng: &mut ChaCha8Rng) -> Self {
        Dense {
            w: glorot_uniform(inputs, outputs, rng),
            b: Matrix::zeros(1, outputs),
        }
    }

    pub fn inputs(&self) -> usize {
        self.w.rows()
    }

    pub fn outputs(&self) -> usize {
        self.w.cols()
    }

    pub fn forward(&self, x: &Matrix) -> Matrix {
        let mut y = x.matmul(&self.w);
        y.add_row_vector(self.b.as_slice());
        y
    }

    /// Accumulates `dW`, `db` into `grad` and returns `dx`.
    pub fn backward(&self, x: &Matrix, dy: &Matrix, grad: &mut Dense) -> Matrix {
        grad.w.add_scaled(&x.t_matmul(dy), 1.0);
        for (g, s) in grad.b.as_mut_slice().iter_mut().zip(dy.column_sums()) {
            *g += s;
        }
        dy.matmul_t(&self.w)
    }
}

impl Parameters for Dense {
    fn named_params(&self) -> Vec<(String, &Matrix)> {
        vec![("kernel".into(), &self.w), ("bias".into(), &self.b)]
    }

    fn params_mut(&mut self) -> Vec<&mut Matrix> {
        vec![&mut self.w, &mut self.b]
    }
}

/// Per-row normalization over the feature axis with learned gain and bias.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerNorm {
    pub gamma: Matrix,
    pub beta: Matrix,
    pub epsilon: f64,
}

pub struct LayerNormCache {
    /// Normalized input before gain and bias.
    pub x_hat: Matrix,
    inv_std: Vec<f64>,
}

impl LayerNorm {
    pub fn new(features: usize, epsilon: f64) -> Self {
        let mut gamma = Matrix::zeros(1, features);
        gamma.fill(1.0);
        LayerNorm {
            gamma,
            beta: Matrix::zeros(1, features),
            epsilon,
        }
    }

    pub fn forward(&self, x: &Matrix) -> (Matrix, LayerNormCache) {
        let d = x.cols() as f64;
        let mut x_hat = x.clone();
        let mut inv_std = Vec::with_capacity(x.rows());
        for i in 0..x.rows() {
            let row = x_hat.row_mut(i);
            let mean = row.iter().sum::<f64>() / d;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
            let s = 1.0 / (var + self.epsilon).sqrt();
            row.iter_mut().for_each(|v| *v = (*v - mean) * s);
            inv_std.push(s);
        }
        let mut y = x_hat.clone();
        for i in 0..y.rows() {
            for ((v, g), b) in y
                .row_mut(i)
                .iter_mut()
                .zip(self.gamma.as_slice())
                .zip(self.beta.as_slice())
            {
                *v = *v * g + b;
            }
        }
        (y, LayerNormCache { x_hat, inv_std })
    }

    pub fn backward(&self, cache: &LayerNormCache, dy: &Matrix, grad: &mut LayerNorm) -> Matrix {
        let d = dy.cols() as f64;
        let mut dx = Matrix::zeros(dy.rows(), dy.cols());
        let gamma = self.gamma.as_slice();
        for i in 0..dy.rows() {
            let xh = cache.x_hat.row(i);
            let dyr = dy.row(i);
            for j in 0..dy.cols() {
                grad.gamma.as_mut_slice()[j] += dyr[j] * xh[j];
                grad.beta.as_mut_slice()[j] += dyr[j];
            }
            let dxh: Vec<f64> = dyr.iter().zip(gamma).map(|(a, g)| a * g).collect();
            let mean_dxh = dxh.iter().sum::<f64>() / d;
            let mean_dxh_xh = dxh.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / d;
            let s = cache.inv_std[i];
            for (j, o) in dx.row_mut(i).iter_mut().enumerate() {
                *o = s * (dxh[j] - mean_dxh - xh[j] * mean_dxh_xh);
            }
        }
        dx
    }
}

impl Parameters for LayerNorm {
    fn named_params(&self) -> Vec<(String, &Matrix)> {
        vec![("gamma".into(), &self.gamma), ("beta".into(), &self.beta)]
    }

    fn params_mut(&mut self) -> Vec<&mut Matrix> {
        vec![&mut self.gamma, &mut self.beta]
    }
}

/// Inverted dropout mask: entries are 0 or `1 / (1 − rate)`.
pub fn dropout_mask(rows: usize, cols: usize, rate: f64, rng: &mut ChaCha8Rng) -> Matrix {
    let keep = 1.0 - rate;
    let scale = 1.0 / keep;
    let data = (0..rows * cols)
        .map(|_| if rng.random::<f64>() < keep { scale } else { 0.0 })
        .collect();
    Matrix::from_vec(rows, cols, data).expect("sized by construction")
}

pub fn apply_mask(x: &mut Matrix, mask: Option<&Matrix>) {
    if let Some(m) = mask {
        for (v, k) in x.as_mut_slice().iter_mut().zip(m.as_slice()) {
            *v *= k;
        }
    }
}

/// Source of dropout masks: absent at inference, seeded during training.
pub enum Dropout {
    Off,
    On { rate: f64, rng: ChaCha8Rng },
}

impl Dropout {
    pub fn seeded(rate: f64, seed: u64) -> Self {
        if rate > 0.0 {
            Dropout::On {
                rate,
                rng: ChaCha8Rng::seed_from_u64(seed),
            }
        } else {
            Dropout::Off
        }
    }

    pub fn mask(&mut self, rows: usize, cols: usize) -> Option<Matrix> {
        match self {
            Dropout::Off => None,
            Dropout::On { rate, rng } => Some(dropout_mask(rows, cols, *rate, rng)),
        }
    }
}

pub fn relu_in_place(x: &mut Matrix) {
    x.as_mut_slice().iter_mut().for_each(|v| *v = v.max(0.0));
}

/// Numerically stable softmax of each row, in place.
pub fn softmax_rows(x: &mut Matrix) {
    for i in 0..x.rows() {
        let row = x.row_mut(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        row.iter_mut().for_each(|v| *v /= sum);
    }
}

/// Sinusoidal positional encoding table, `seq_len × d_model`.
///
/// Column `2i` holds `sin(pos / 10000^(2i/d))`, column `2i+1` the matching cosine.
pub fn positional_encoding(seq_len: usize, d_model: usize) -> Result<Matrix> {
    if seq_len == 0 || d_model == 0 {
        return Err(Error::validation("positional encoding needs positive dimensions"));
    }
    if d_model % 2 != 0 {
        return Err(Error::validation(format!(
            "positional encoding needs an even d_model, got {d_model}"
        )));
    }
    let mut pe = Matrix::zeros(seq_len, d_model);
    for pos in 0..seq_len {
        for i in 0..d_model / 2 {
            let angle = pos as f64 / 10000f64.powf(2.0 * i as f64 / d_model as f64);
            pe[(pos, 2 * i)] = angle.sin();
            pe[(pos, 2 * i + 1)] = angle.cos();
        }
    }
    Ok(pe)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layer_norm_rows_are_standardized() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut x = glorot_uniform(6, 16, &mut rng);
        // unit-scale rows keep eps / (var + eps) below the tolerance
        x.scale(10.0);
        let ln = LayerNorm::new(16, 1e-6);
        let (y, cache) = ln.forward(&x);
        for i in 0..6 {
            let r = cache.x_hat.row(i);
            let mean = r.iter().sum::<f64>() / 16.0;
            let var = r.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 16.0;
            assert!(mean.abs() < 1e-6 && (var - 1.0).abs() < 1e-6);
        }
        // unit gain, zero bias
        assert_eq!(y, cache.x_hat);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut m = Matrix::from_rows(&[[1.0, 2.0, 3.0], [1000.0, 1000.0, -1000.0]]).unwrap();
        softmax_rows(&mut m);
        for i in 0..2 {
            assert!((m.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert!((m[(1, 0)] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn dropout_mask_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let m = dropout_mask(50, 50, 0.1, &mut rng);
        let scale = 1.0 / 0.9;
        assert!(m.as_slice().iter().all(|&v| v == 0.0 || (v - scale).abs() < 1e-15));
        let zeros = m.as_slice().iter().filter(|&&v| v == 0.0).count();
        assert!((150..350).contains(&zeros));
        assert!(matches!(Dropout::seeded(0.0, 1), Dropout::Off));
    }

    #[test]
    fn positional_encoding_rejects_odd_width() {
        assert!(positional_encoding(4, 3).is_err());
        assert!(positional_encoding(0, 4).is_err());
    }
}
