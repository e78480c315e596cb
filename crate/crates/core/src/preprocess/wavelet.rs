//! Multi-level db4 discrete wavelet transform with half-point symmetric
//! boundary extension, and baseline removal built on it.
//!
//! Each analysis level maps `L` samples to `⌊(L + 7) / 2⌋` approximation and
//! detail coefficients; synthesis keeps the valid part of the upsampled
//! convolution and trims to the stored length, which makes decompose followed
//! by reconstruct an identity up to rounding.

use crate::error::{Error, Result};

/// db4 (four vanishing moments, eight taps) decomposition low-pass filter.
pub const DB4_DEC_LO: [f64; 8] = [
    -0.010597401784997278,
    0.032883011666982945,
    0.030841381835986965,
    -0.18703481171888114,
    -0.02798376941698385,
    0.6308807679295904,
    0.7148465705525415,
    0.23037781330885523,
];

const TAPS: usize = DB4_DEC_LO.len();

pub const BASELINE_LEVELS: usize = 5;
pub const MIN_BASELINE_LEN: usize = 64;

/// Quadrature-mirror high-pass: `g[k] = (-1)^(k+1) h[F-1-k]`.
pub fn db4_dec_hi() -> [f64; 8] {
    let mut g = [0.0; TAPS];
    for (k, v) in g.iter_mut().enumerate() {
        let sign = if k % 2 == 0 { -1.0 } else { 1.0 };
        *v = sign * DB4_DEC_LO[TAPS - 1 - k];
    }
    g
}

/// Half-point symmetric extension: `x[-1] = x[0]`, `x[N] = x[N-1]`, repeating as needed.
fn symmetric_index(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let mut m = i.rem_euclid(period);
    if m >= n {
        m = period - 1 - m;
    }
    m as usize
}

/// One analysis level: `(approximation, detail)`.
pub fn dwt(x: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = x.len();
    let out_len = (n + TAPS - 1) / 2;
    let hi = db4_dec_hi();
    let mut approx = Vec::with_capacity(out_len);
    let mut detail = Vec::with_capacity(out_len);
    for o in 0..out_len {
        let centre = (2 * o + 1) as isize;
        let (mut a, mut d) = (0.0, 0.0);
        for j in 0..TAPS {
            let v = x[symmetric_index(centre - j as isize, n)];
            a += DB4_DEC_LO[j] * v;
            d += hi[j] * v;
        }
        approx.push(a);
        detail.push(d);
    }
    (approx, detail)
}

/// One synthesis level, trimmed to `out_len` samples.
pub fn idwt(approx: &[f64], detail: &[f64], out_len: usize) -> Result<Vec<f64>> {
    if approx.len() != detail.len() {
        return Err(Error::validation(format!(
            "approximation ({}) and detail ({}) lengths differ",
            approx.len(),
            detail.len()
        )));
    }
    let m = approx.len();
    let full = (2 * m + 2).saturating_sub(TAPS);
    if out_len > full {
        return Err(Error::validation(format!(
            "{m} coefficients reconstruct at most {full} samples, asked for {out_len}"
        )));
    }
    let hi = db4_dec_hi();
    // Reconstruction filters are the time-reversed analysis filters.
    let rec_lo = |i: usize| DB4_DEC_LO[TAPS - 1 - i];
    let rec_hi = |i: usize| hi[TAPS - 1 - i];
    let mut out = vec![0.0; out_len];
    for (n, o) in out.iter_mut().enumerate() {
        let pos = n + TAPS - 2;
        // coefficient k contributes at filter tap pos - 2k, which must lie in 0..TAPS
        let k_lo = (pos + 1).saturating_sub(TAPS).div_ceil(2);
        let k_hi = (pos / 2).min(m - 1);
        let mut s = 0.0;
        for k in k_lo..=k_hi {
            let tap = pos - 2 * k;
            s += rec_lo(tap) * approx[k] + rec_hi(tap) * detail[k];
        }
        *o = s;
    }
    Ok(out)
}

/// Multi-level decomposition.
#[derive(Clone, Debug, PartialEq)]
pub struct WaveletDecomposition {
    /// Approximation coefficients at the deepest level.
    pub approx: Vec<f64>,
    /// Detail coefficients, finest level first.
    pub details: Vec<Vec<f64>>,
    /// Signal length entering each level, finest level first.
    pub lengths: Vec<usize>,
}

pub fn wavedec(x: &[f64], levels: usize) -> Result<WaveletDecomposition> {
    if x.is_empty() {
        return Err(Error::validation("cannot decompose an empty signal"));
    }
    if levels == 0 {
        return Err(Error::validation("at least one decomposition level is required"));
    }
    let mut approx = x.to_vec();
    let mut details = Vec::with_capacity(levels);
    let mut lengths = Vec::with_capacity(levels);
    for _ in 0..levels {
        lengths.push(approx.len());
        let (a, d) = dwt(&approx);
        details.push(d);
        approx = a;
    }
    Ok(WaveletDecomposition {
        approx,
        details,
        lengths,
    })
}

pub fn waverec(dec: &WaveletDecomposition) -> Result<Vec<f64>> {
    if dec.details.len() != dec.lengths.len() {
        return Err(Error::validation("details and lengths disagree on the level count"));
    }
    let mut approx = dec.approx.clone();
    for (detail, &len) in dec.details.iter().zip(&dec.lengths).rev() {
        approx = idwt(&approx, detail, len)?;
    }
    Ok(approx)
}

/// Removes the slow baseline by zeroing the level-5 db4 approximation and reconstructing.
pub fn remove_baseline(wave: &[f64]) -> Result<Vec<f64>> {
    if wave.len() < MIN_BASELINE_LEN {
        return Err(Error::validation(format!(
            "baseline removal needs at least {MIN_BASELINE_LEN} samples, got {}",
            wave.len()
        )));
    }
    let mut dec = wavedec(wave, BASELINE_LEVELS)?;
    dec.approx.iter_mut().for_each(|c| *c = 0.0);
    waverec(&dec)
}
