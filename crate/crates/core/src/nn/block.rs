//! Post-norm transformer block:
//! `y₁ = LN(x + Drop(MHA(x, x)))`, `y₂ = LN(y₁ + Drop(FFN(y₁)))`.

use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::linalg::Matrix;
use crate::nn::attention::{MhaCache, MultiHeadAttention};
use crate::nn::layers::{apply_mask, prefixed, relu_in_place, Dense, Dropout, LayerNorm, LayerNormCache, Parameters};

#[derive(Clone, Debug, PartialEq)]
pub struct TransformerBlock {
    pub attention: MultiHeadAttention,
    pub ffn_hidden: Dense,
    pub ffn_out: Dense,
    pub norm1: LayerNorm,
    pub norm2: LayerNorm,
}

pub struct BlockCache {
    attn: MhaCache,
    attn_mask: Option<Matrix>,
    norm1: LayerNormCache,
    y1: Matrix,
    hidden: Matrix,
    ffn_mask: Option<Matrix>,
    norm2: LayerNormCache,
}

impl BlockCache {
    pub fn attention(&self) -> &MhaCache {
        &self.attn
    }

    pub fn norm1(&self) -> &LayerNormCache {
        &self.norm1
    }
}

impl TransformerBlock {
    pub fn new(
        d_model: usize,
        num_heads: usize,
        key_dim: usize,
        ff_dim: usize,
        epsilon: f64,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        TransformerBlock {
            attention: MultiHeadAttention::new(d_model, num_heads, key_dim, rng),
            ffn_hidden: Dense::new(d_model, ff_dim, rng),
            ffn_out: Dense::new(ff_dim, d_model, rng),
            norm1: LayerNorm::new(d_model, epsilon),
            norm2: LayerNorm::new(d_model, epsilon),
        }
    }

    pub fn forward(&self, x: &Matrix, dropout: &mut Dropout) -> Result<(Matrix, BlockCache)> {
        let (mut attn_out, attn) = self.attention.forward(x, x)?;
        let attn_mask = dropout.mask(attn_out.rows(), attn_out.cols());
        apply_mask(&mut attn_out, attn_mask.as_ref());
        attn_out.add_scaled(x, 1.0);
        let (y1, norm1) = self.norm1.forward(&attn_out);

        let mut hidden = self.ffn_hidden.forward(&y1);
        relu_in_place(&mut hidden);
        let mut ffn = self.ffn_out.forward(&hidden);
        let ffn_mask = dropout.mask(ffn.rows(), ffn.cols());
        apply_mask(&mut ffn, ffn_mask.as_ref());
        ffn.add_scaled(&y1, 1.0);
        let (y2, norm2) = self.norm2.forward(&ffn);

        Ok((
            y2,
            BlockCache {
                attn,
                attn_mask,
                norm1,
                y1,
                hidden,
                ffn_mask,
                norm2,
            },
        ))
    }

    /// Returns `dx` and accumulates parameter gradients into `grad`.
    pub fn backward(&self, cache: &BlockCache, dy: &Matrix, grad: &mut TransformerBlock) -> Matrix {
        let d_res2 = self.norm2.backward(&cache.norm2, dy, &mut grad.norm2);
        let mut d_ffn = d_res2.clone();
        apply_mask(&mut d_ffn, cache.ffn_mask.as_ref());
        let mut d_hidden = self.ffn_out.backward(&cache.hidden, &d_ffn, &mut grad.ffn_out);
        for (g, h) in d_hidden.as_mut_slice().iter_mut().zip(cache.hidden.as_slice()) {
            if *h <= 0.0 {
                *g = 0.0;
            }
        }
        let mut d_y1 = self.ffn_hidden.backward(&cache.y1, &d_hidden, &mut grad.ffn_hidden);
        d_y1.add_scaled(&d_res2, 1.0);

        let d_res1 = self.norm1.backward(&cache.norm1, &d_y1, &mut grad.norm1);
        let mut d_attn = d_res1.clone();
        apply_mask(&mut d_attn, cache.attn_mask.as_ref());
        let (dx_q, dx_kv) = self.attention.backward(&cache.attn, &d_attn, &mut grad.attention);
        let mut dx = d_res1;
        dx.add_scaled(&dx_q, 1.0);
        dx.add_scaled(&dx_kv, 1.0);
        dx
    }
}

impl Parameters for TransformerBlock {
    fn named_params(&self) -> Vec<(String, &Matrix)> {
        let mut out = prefixed("attention", self.attention.named_params());
        out.extend(prefixed("ffn_hidden", self.ffn_hidden.named_params()));
        out.extend(prefixed("ffn_out", self.ffn_out.named_params()));
        out.extend(prefixed("norm1", self.norm1.named_params()));
        out.extend(prefixed("norm2", self.norm2.named_params()));
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = self.attention.params_mut();
        out.extend(self.ffn_hidden.params_mut());
        out.extend(self.ffn_out.params_mut());
        out.extend(self.norm1.params_mut());
        out.extend(self.norm2.params_mut());
        out
    }
}
