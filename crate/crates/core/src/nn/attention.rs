//! Scaled dot-product attention and multi-head attention with manual backprop.
//!
//! Each head owns a `key_dim`-wide slice of the query/key/value projections,
//! so the projection widths are `num_heads · key_dim` rather than `d_model`.

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::nn::layers::{glorot_uniform, softmax_rows, Dense, Parameters};

/// `softmax(Q Kᵀ / √d_k) V`, returning the output and the attention weights.
pub fn scaled_dot_attention(q: &Matrix, k: &Matrix, v: &Matrix) -> Result<(Matrix, Matrix)> {
    if q.cols() != k.cols() {
        return Err(Error::validation(format!(
            "query width {} differs from key width {}",
            q.cols(),
            k.cols()
        )));
    }
    if k.rows() != v.rows() {
        return Err(Error::validation(format!(
            "{} keys but {} values",
            k.rows(),
            v.rows()
        )));
    }
    if !q.is_finite() || !k.is_finite() || !v.is_finite() {
        return Err(Error::validation("attention inputs contain NaN or infinity"));
    }
    Ok(attend(q, k, v))
}

fn attend(q: &Matrix, k: &Matrix, v: &Matrix) -> (Matrix, Matrix) {
    let mut weights = q.matmul_t(k);
    weights.scale(1.0 / (q.cols() as f64).sqrt());
    softmax_rows(&mut weights);
    (weights.matmul(v), weights)
}

/// Gradients of [`scaled_dot_attention`] w.r.t. `(Q, K, V)`.
fn attend_backward(q: &Matrix, k: &Matrix, v: &Matrix, weights: &Matrix, d_out: &Matrix) -> (Matrix, Matrix, Matrix) {
    let d_weights = d_out.matmul_t(v);
    let dv = weights.t_matmul(d_out);
    let scale = 1.0 / (q.cols() as f64).sqrt();
    let mut d_scores = Matrix::zeros(weights.rows(), weights.cols());
    for i in 0..weights.rows() {
        let a = weights.row(i);
        let da = d_weights.row(i);
        let inner: f64 = a.iter().zip(da).map(|(x, y)| x * y).sum();
        for (o, (ai, dai)) in d_scores.row_mut(i).iter_mut().zip(a.iter().zip(da)) {
            *o = ai * (dai - inner) * scale;
        }
    }
    let dq = d_scores.matmul(k);
    let dk = d_scores.t_matmul(q);
    (dq, dk, dv)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MultiHeadAttention {
    pub num_heads: usize,
    pub key_dim: usize,
    pub query: Dense,
    pub key: Dense,
    pub value: Dense,
    pub output: Dense,
}

pub struct MhaCache {
    x_q: Matrix,
    x_kv: Matrix,
    q: Matrix,
    k: Matrix,
    v: Matrix,
    weights: Vec<Matrix>,
    concat: Matrix,
}

impl MhaCache {
    pub fn attention_weights(&self) -> &[Matrix] {
        &self.weights
    }
}

impl MultiHeadAttention {
    pub fn new(d_model: usize, num_heads: usize, key_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let inner = num_heads * key_dim;
        MultiHeadAttention {
            num_heads,
            key_dim,
            query: Dense::new(d_model, inner, rng),
            key: Dense::new(d_model, inner, rng),
            value: Dense::new(d_model, inner, rng),
            output: Dense {
                w: glorot_uniform(inner, d_model, rng),
                b: Matrix::zeros(1, d_model),
            },
        }
    }

    pub fn d_model(&self) -> usize {
        self.query.inputs()
    }

    /// Attends from `x_q` (queries) over `x_kv` (keys and values).
    pub fn forward(&self, x_q: &Matrix, x_kv: &Matrix) -> Result<(Matrix, MhaCache)> {
        let d = self.d_model();
        if x_q.cols() != d || x_kv.cols() != d {
            return Err(Error::validation(format!(
                "attention expects width {d}, got query {} and key/value {}",
                x_q.cols(),
                x_kv.cols()
            )));
        }
        let q = self.query.forward(x_q);
        let k = self.key.forward(x_kv);
        let v = self.value.forward(x_kv);
        let mut concat = Matrix::zeros(x_q.rows(), self.num_heads * self.key_dim);
        let mut weights = Vec::with_capacity(self.num_heads);
        for h in 0..self.num_heads {
            let start = h * self.key_dim;
            let (head, w) = attend(
                &q.columns(start, self.key_dim),
                &k.columns(start, self.key_dim),
                &v.columns(start, self.key_dim),
            );
            concat.set_columns(start, &head);
            weights.push(w);
        }
        let out = self.output.forward(&concat);
        Ok((
            out,
            MhaCache {
                x_q: x_q.clone(),
                x_kv: x_kv.clone(),
                q,
                k,
                v,
                weights,
                concat,
            },
        ))
    }

    /// Returns `(d x_q, d x_kv)` and accumulates parameter gradients.
    pub fn backward(&self, cache: &MhaCache, d_out: &Matrix, grad: &mut MultiHeadAttention) -> (Matrix, Matrix) {
        let d_concat = self.output.backward(&cache.concat, d_out, &mut grad.output);
        let mut dq = Matrix::zeros(cache.q.rows(), cache.q.cols());
        let mut dk = Matrix::zeros(cache.k.rows(), cache.k.cols());
        let mut dv = Matrix::zeros(cache.v.rows(), cache.v.cols());
        for h in 0..self.num_heads {
            let start = h * self.key_dim;
            let (dqh, dkh, dvh) = attend_backward(
                &cache.q.columns(start, self.key_dim),
                &cache.k.columns(start, self.key_dim),
                &cache.v.columns(start, self.key_dim),
                &cache.weights[h],
                &d_concat.columns(start, self.key_dim),
            );
            dq.set_columns(start, &dqh);
            dk.set_columns(start, &dkh);
            dv.set_columns(start, &dvh);
        }
        let dx_q = self.query.backward(&cache.x_q, &dq, &mut grad.query);
        let mut dx_kv = self.key.backward(&cache.x_kv, &dk, &mut grad.key);
        dx_kv.add_scaled(&self.value.backward(&cache.x_kv, &dv, &mut grad.value), 1.0);
        (dx_q, dx_kv)
    }
}

impl Parameters for MultiHeadAttention {
    fn named_params(&self) -> Vec<(String, &Matrix)> {
        let mut out = Vec::new();
        for (name, layer) in [
            ("query", &self.query),
            ("key", &self.key),
            ("value", &self.value),
            ("output", &self.output),
        ] {
            out.extend(crate::nn::layers::prefixed(name, layer.named_params()));
        }
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = self.query.params_mut();
        out.extend(self.key.params_mut());
        out.extend(self.value.params_mut());
        out.extend(self.output.params_mut());
        out
    }
}
