//! Orthonormal DCT-II analysis and its DCT-III inverse, plus the coefficient
//! truncation used to build compact regression features.
//!
//! Both directions share a quarter-wave cosine table indexed by
//! `(2n + 1) k mod 4N`, so each transform costs `N²` multiply-adds and no
//! trigonometric calls after the table is built.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Segment length and retained-coefficient counts for the frequency-domain model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpectralConfig {
    /// Container length after zero-padding (equals the segment length).
    pub q: usize,
    /// Leading PPG coefficients kept.
    pub q_x: usize,
    /// Leading ABP coefficients kept.
    pub q_y: usize,
}

impl Default for SpectralConfig {
    fn default() -> Self {
        SpectralConfig {
            q: 250,
            q_x: 50,
            q_y: 50,
        }
    }
}

impl SpectralConfig {
    pub fn validate(&self) -> Result<()> {
        if self.q == 0 {
            return Err(Error::validation("spectral Q must be positive"));
        }
        if self.q_x == 0 || self.q_x > self.q || self.q_y == 0 || self.q_y > self.q {
            return Err(Error::validation(format!(
                "need 0 < Q_X, Q_Y <= Q (got Q_X={}, Q_Y={}, Q={})",
                self.q_x, self.q_y, self.q
            )));
        }
        Ok(())
    }
}

/// A truncated, zero-padded DCT coefficient vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralVector {
    pub coeffs: Vec<f64>,
    /// Number of leading coefficients retained; the rest are exactly zero.
    pub kept: usize,
    /// Length of the time-domain segment the coefficients came from.
    pub original_len: usize,
}

impl SpectralVector {
    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }
}

struct CosTable {
    n: usize,
    // cos(π m / 2N) for m in 0..4N
    table: Vec<f64>,
}

impl CosTable {
    fn new(n: usize) -> Self {
        let four_n = 4 * n;
        let table = (0..four_n)
            .map(|m| (std::f64::consts::PI * m as f64 / (2 * n) as f64).cos())
            .collect();
        CosTable { n, table }
    }

    #[inline]
    fn at(&self, sample: usize, freq: usize) -> f64 {
        self.table[((2 * sample + 1) * freq) % (4 * self.n)]
    }
}

fn alpha(k: usize, n: usize) -> f64 {
    if k == 0 {
        (1.0 / n as f64).sqrt()
    } else {
        (2.0 / n as f64).sqrt()
    }
}

/// Orthonormal DCT-II: `X_k = α_k Σ_n x_n cos(π/N (n + ½) k)`.
pub fn dct2(x: &[f64]) -> Result<Vec<f64>> {
    let n = x.len();
    if n == 0 {
        return Err(Error::validation("dct2 of an empty vector"));
    }
    let table = CosTable::new(n);
    Ok((0..n)
        .map(|k| {
            let s: f64 = x
                .iter()
                .enumerate()
                .map(|(i, &v)| v * table.at(i, k))
                .sum();
            alpha(k, n) * s
        })
        .collect())
}

/// Inverse of [`dct2`] (orthonormal DCT-III):
/// `x_n = Σ_k α_k X_k cos(π/N (n + ½) k)`.
pub fn idct(coeffs: &[f64]) -> Result<Vec<f64>> {
    let n = coeffs.len();
    if n == 0 {
        return Err(Error::validation("idct of an empty vector"));
    }
    let table = CosTable::new(n);
    let scaled: Vec<f64> = coeffs
        .iter()
        .enumerate()
        .map(|(k, &c)| alpha(k, n) * c)
        .collect();
    Ok((0..n)
        .map(|i| {
            scaled
                .iter()
                .enumerate()
                .map(|(k, &c)| c * table.at(i, k))
                .sum()
        })
        .collect())
}

/// Keeps the first `keep` coefficients of `coeffs`, zeroes the rest and
/// resizes the container to `out_len`.
pub fn truncate_pad(coeffs: &[f64], keep: usize, out_len: usize) -> Result<SpectralVector> {
    if keep > coeffs.len() {
        return Err(Error::validation(format!(
            "cannot keep {keep} of {} coefficients",
            coeffs.len()
        )));
    }
    if out_len < keep {
        return Err(Error::validation(format!(
            "output length {out_len} is smaller than keep {keep}"
        )));
    }
    let mut out = vec![0.0; out_len];
    out[..keep].copy_from_slice(&coeffs[..keep]);
    Ok(SpectralVector {
        coeffs: out,
        kept: keep,
        original_len: coeffs.len(),
    })
}

/// Fraction of total squared-coefficient energy held by the first `keep` entries.
pub fn energy_retention(coeffs: &[f64], keep: usize) -> Result<f64> {
    let total: f64 = coeffs.iter().map(|c| c * c).sum();
    if total == 0.0 {
        return Err(Error::degenerate("zero-energy coefficient vector"));
    }
    let kept: f64 = coeffs.iter().take(keep).map(|c| c * c).sum();
    Ok(kept / total)
}

/// Smallest prefix length whose cumulative energy reaches
/// `energy_fraction` of the total.
pub fn choose_keep(coeffs: &[f64], energy_fraction: f64) -> Result<usize> {
    if !(energy_fraction > 0.0 && energy_fraction <= 1.0) {
        return Err(Error::validation(format!(
            "energy fraction must lie in (0, 1], got {energy_fraction}"
        )));
    }
    let total: f64 = coeffs.iter().map(|c| c * c).sum();
    if total == 0.0 {
        return Err(Error::degenerate("zero-energy coefficient vector"));
    }
    if energy_fraction == 1.0 {
        // Exact total; avoids a rounding shortfall in the running sum.
        let last = coeffs.iter().rposition(|&c| c != 0.0).unwrap_or(0);
        return Ok(last + 1);
    }
    let target = energy_fraction * total;
    let mut acc = 0.0;
    for (i, c) in coeffs.iter().enumerate() {
        acc += c * c;
        if acc >= target {
            return Ok(i + 1);
        }
    }
    Ok(coeffs.len())
}
