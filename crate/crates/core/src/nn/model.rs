//! Encoder-decoder transformer that maps a PPG segment to a normalized ABP segment.
//!
//! Both stacks read the same PPG segment (non-autoregressive decoding). The
//! decoder output attends over the encoder output, then two dense layers
//! project each time step to a scalar.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::nn::attention::{MhaCache, MultiHeadAttention};
use crate::nn::block::{BlockCache, TransformerBlock};
use crate::nn::layers::{positional_encoding, prefixed, Dense, Dropout, Parameters};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransformerConfig {
    pub seq_len: usize,
    pub d_model: usize,
    pub num_heads: usize,
    pub key_dim: usize,
    pub ff_dim: usize,
    pub num_blocks: usize,
    pub dropout: f64,
    pub layernorm_epsilon: f64,
}

impl Default for TransformerConfig {
    fn default() -> Self {
        TransformerConfig {
            seq_len: 250,
            d_model: 64,
            num_heads: 4,
            key_dim: 64,
            ff_dim: 64,
            num_blocks: 3,
            dropout: 0.1,
            layernorm_epsilon: 1e-6,
        }
    }
}

impl TransformerConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("seq_len", self.seq_len),
            ("d_model", self.d_model),
            ("num_heads", self.num_heads),
            ("key_dim", self.key_dim),
            ("ff_dim", self.ff_dim),
            ("num_blocks", self.num_blocks),
        ] {
            if v == 0 {
                return Err(Error::validation(format!("transformer {name} must be positive")));
            }
        }
        if self.d_model % 2 != 0 {
            return Err(Error::validation(format!(
                "transformer d_model must be even, got {}",
                self.d_model
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::validation(format!(
                "dropout must lie in [0, 1), got {}",
                self.dropout
            )));
        }
        if !(self.layernorm_epsilon > 0.0 && self.layernorm_epsilon.is_finite()) {
            return Err(Error::validation("layernorm_epsilon must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TransformerModel {
    pub config: TransformerConfig,
    pub encoder_input: Dense,
    pub decoder_input: Dense,
    pub encoder_blocks: Vec<TransformerBlock>,
    pub decoder_blocks: Vec<TransformerBlock>,
    pub cross_attention: MultiHeadAttention,
    pub dense1: Dense,
    pub dense2: Dense,
    positional: Matrix,
}

/// Intermediates recorded by [`TransformerModel::forward_with_cache`].
pub struct ForwardCache {
    input: Matrix,
    encoder: Vec<BlockCache>,
    decoder: Vec<BlockCache>,
    cross: MhaCache,
    cross_out: Matrix,
    hidden: Matrix,
}

impl ForwardCache {
    pub fn cross_attention(&self) -> &MhaCache {
        &self.cross
    }
}

/// Layer-wise parameter counts in the order of the reference architecture table.
pub const TABLE1_GOLDENS: [(&str, usize); 14] = [
    ("encoder_input_dense", 128),
    ("decoder_input_dense", 128),
    ("encoder_positional_encoding", 0),
    ("decoder_positional_encoding", 0),
    ("encoder_block_1", 74_944),
    ("encoder_block_2", 74_944),
    ("encoder_block_3", 74_944),
    ("decoder_block_1", 74_944),
    ("decoder_block_2", 74_944),
    ("decoder_block_3", 74_944),
    ("cross_attention", 66_368),
    ("dense_1", 4_160),
    ("dense_2", 65),
    ("total", 520_513),
];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerCount {
    pub layer: String,
    pub params: usize,
}

/// Builds a model with Glorot-uniform weights, zero biases and unit layer-norm gain.
pub fn build_model(config: TransformerConfig, seed: u64) -> Result<TransformerModel> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = config.d_model;
    let block = |rng: &mut ChaCha8Rng| {
        TransformerBlock::new(
            d,
            config.num_heads,
            config.key_dim,
            config.ff_dim,
            config.layernorm_epsilon,
            rng,
        )
    };
    let encoder_input = Dense::new(1, d, &mut rng);
    let decoder_input = Dense::new(1, d, &mut rng);
    let encoder_blocks = (0..config.num_blocks).map(|_| block(&mut rng)).collect();
    let decoder_blocks = (0..config.num_blocks).map(|_| block(&mut rng)).collect();
    let cross_attention = MultiHeadAttention::new(d, config.num_heads, config.key_dim, &mut rng);
    let dense1 = Dense::new(d, d, &mut rng);
    let dense2 = Dense::new(d, 1, &mut rng);
    Ok(TransformerModel {
        config,
        encoder_input,
        decoder_input,
        encoder_blocks,
        decoder_blocks,
        cross_attention,
        dense1,
        dense2,
        positional: positional_encoding(config.seq_len, d)?,
    })
}

/// Per-layer parameter counts, ending with a `total` row.
pub fn count_params(model: &TransformerModel) -> Vec<LayerCount> {
    let mut rows = vec![
        ("encoder_input_dense".to_string(), model.encoder_input.param_count()),
        ("decoder_input_dense".to_string(), model.decoder_input.param_count()),
        ("encoder_positional_encoding".to_string(), 0),
        ("decoder_positional_encoding".to_string(), 0),
    ];
    for (i, b) in model.encoder_blocks.iter().enumerate() {
        rows.push((format!("encoder_block_{}", i + 1), b.param_count()));
    }
    for (i, b) in model.decoder_blocks.iter().enumerate() {
        rows.push((format!("decoder_block_{}", i + 1), b.param_count()));
    }
    rows.push(("cross_attention".into(), model.cross_attention.param_count()));
    rows.push(("dense_1".into(), model.dense1.param_count()));
    rows.push(("dense_2".into(), model.dense2.param_count()));
    let total = rows.iter().map(|r| r.1).sum();
    rows.push(("total".into(), total));
    rows.into_iter()
        .map(|(layer, params)| LayerCount { layer, params })
        .collect()
}

/// Layers whose counts differ from [`TABLE1_GOLDENS`], as `(layer, expected, actual)`.
pub fn table1_mismatches(counts: &[LayerCount]) -> Vec<(String, Option<usize>, Option<usize>)> {
    let mut out = Vec::new();
    for (name, expected) in TABLE1_GOLDENS {
        let actual = counts.iter().find(|c| c.layer == name).map(|c| c.params);
        if actual != Some(expected) {
            out.push((name.to_string(), Some(expected), actual));
        }
    }
    for c in counts {
        if !TABLE1_GOLDENS.iter().any(|(n, _)| *n == c.layer) {
            out.push((c.layer.clone(), None, Some(c.params)));
        }
    }
    out
}

impl TransformerModel {
    /// A model of identical shape with every parameter set to zero, for gradient accumulation.
    pub fn zeros_like(&self) -> TransformerModel {
        let mut g = self.clone();
        g.zero_grad();
        g
    }

    pub fn positional(&self) -> &Matrix {
        &self.positional
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.config.seq_len {
            return Err(Error::validation(format!(
                "transformer expects a length-{} segment, got {}",
                self.config.seq_len,
                x.len()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation("transformer input contains NaN or infinity"));
        }
        Ok(())
    }

    /// Inference-mode forward pass (dropout off).
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_with_cache(x, &mut Dropout::Off)?.0)
    }

    pub fn forward_with_cache(&self, x: &[f64], dropout: &mut Dropout) -> Result<(Vec<f64>, ForwardCache)> {
        self.check_input(x)?;
        let input = Matrix::column(x);

        let mut enc = self.encoder_input.forward(&input);
        enc.add_scaled(&self.positional, 1.0);
        let mut encoder = Vec::with_capacity(self.encoder_blocks.len());
        for b in &self.encoder_blocks {
            let (y, c) = b.forward(&enc, dropout)?;
            enc = y;
            encoder.push(c);
        }

        let mut dec = self.decoder_input.forward(&input);
        dec.add_scaled(&self.positional, 1.0);
        let mut decoder = Vec::with_capacity(self.decoder_blocks.len());
        for b in &self.decoder_blocks {
            let (y, c) = b.forward(&dec, dropout)?;
            dec = y;
            decoder.push(c);
        }

        let (cross_out, cross) = self.cross_attention.forward(&dec, &enc)?;
        let hidden = self.dense1.forward(&cross_out);
        let out = self.dense2.forward(&hidden).into_vec();
        Ok((
            out,
            ForwardCache {
                input,
                encoder,
                decoder,
                cross,
                cross_out,
                hidden,
            },
        ))
    }

    /// Back-propagates `d_out` (gradient w.r.t. the output sequence) and
    /// accumulates parameter gradients into `grad`.
    pub fn backward(&self, cache: &ForwardCache, d_out: &[f64], grad: &mut TransformerModel) {
        let d_out = Matrix::column(d_out);
        let d_hidden = self.dense2.backward(&cache.hidden, &d_out, &mut grad.dense2);
        let d_cross = self.dense1.backward(&cache.cross_out, &d_hidden, &mut grad.dense1);
        let (mut d_dec, mut d_enc) = self
            .cross_attention
            .backward(&cache.cross, &d_cross, &mut grad.cross_attention);

        for ((b, c), g) in self
            .decoder_blocks
            .iter()
            .zip(&cache.decoder)
            .zip(grad.decoder_blocks.iter_mut())
            .rev()
        {
            d_dec = b.backward(c, &d_dec, g);
        }
        self.decoder_input
            .backward(&cache.input, &d_dec, &mut grad.decoder_input);

        for ((b, c), g) in self
            .encoder_blocks
            .iter()
            .zip(&cache.encoder)
            .zip(grad.encoder_blocks.iter_mut())
            .rev()
        {
            d_enc = b.backward(c, &d_enc, g);
        }
        self.encoder_input
            .backward(&cache.input, &d_enc, &mut grad.encoder_input);
    }

    pub fn is_finite(&self) -> bool {
        self.named_params().iter().all(|(_, m)| m.is_finite())
    }
}

impl Parameters for TransformerModel {
    fn named_params(&self) -> Vec<(String, &Matrix)> {
        let mut out = prefixed("encoder_input", self.encoder_input.named_params());
        out.extend(prefixed("decoder_input", self.decoder_input.named_params()));
        for (i, b) in self.encoder_blocks.iter().enumerate() {
            out.extend(prefixed(&format!("encoder_block_{}", i + 1), b.named_params()));
        }
        for (i, b) in self.decoder_blocks.iter().enumerate() {
            out.extend(prefixed(&format!("decoder_block_{}", i + 1), b.named_params()));
        }
        out.extend(prefixed("cross_attention", self.cross_attention.named_params()));
        out.extend(prefixed("dense_1", self.dense1.named_params()));
        out.extend(prefixed("dense_2", self.dense2.named_params()));
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = self.encoder_input.params_mut();
        out.extend(self.decoder_input.params_mut());
        for b in &mut self.encoder_blocks {
            out.extend(b.params_mut());
        }
        for b in &mut self.decoder_blocks {
            out.extend(b.params_mut());
        }
        out.extend(self.cross_attention.params_mut());
        out.extend(self.dense1.params_mut());
        out.extend(self.dense2.params_mut());
        out
    }
}
