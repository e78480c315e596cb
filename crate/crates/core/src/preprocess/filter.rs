//! Digital Butterworth low-pass filters as cascaded second-order sections.
//!
//! Sections come from the bilinear transform of the analog prototype with
//! frequency pre-warping, so the digital magnitude response is exactly
//! `|H(f)|² = 1 / (1 + (tan(π f / fs) / tan(π fc / fs))^(2N))`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterSpec {
    pub cutoff_hz: f64,
    pub order: usize,
    /// Forward-backward application: squared magnitude, zero phase lag.
    pub zero_phase: bool,
}

impl Default for FilterSpec {
    fn default() -> Self {
        FilterSpec {
            cutoff_hz: 10.0,
            order: 4,
            zero_phase: true,
        }
    }
}

impl FilterSpec {
    pub fn validate(&self, fs: f64) -> Result<()> {
        if self.order == 0 {
            return Err(Error::validation("filter order must be positive"));
        }
        if !(fs > 0.0) {
            return Err(Error::validation(format!("sampling rate must be positive, got {fs}")));
        }
        if !(self.cutoff_hz > 0.0 && self.cutoff_hz < fs / 2.0) {
            return Err(Error::validation(format!(
                "cutoff {} Hz must lie in (0, {}) for fs = {fs} Hz",
                self.cutoff_hz,
                fs / 2.0
            )));
        }
        Ok(())
    }
}

/// One biquad in direct form II transposed, `a0` normalized to 1.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

impl Biquad {
    fn dc_gain(&self) -> f64 {
        (self.b[0] + self.b[1] + self.b[2]) / (1.0 + self.a[0] + self.a[1])
    }

    /// State that holds the section at rest under a unit step.
    fn step_state(&self) -> [f64; 2] {
        let g = self.dc_gain();
        let z2 = self.b[2] - self.a[1] * g;
        let z1 = self.b[1] - self.a[0] * g + z2;
        [z1, z2]
    }
}

/// Designs an order-`spec.order` Butterworth low-pass for sampling rate `fs`.
pub fn design_lowpass(spec: &FilterSpec, fs: f64) -> Result<Vec<Biquad>> {
    spec.validate(fs)?;
    let n = spec.order;
    let k = (std::f64::consts::PI * spec.cutoff_hz / fs).tan();
    let k2 = k * k;
    let mut sections = Vec::with_capacity(n.div_ceil(2));
    for i in 0..n / 2 {
        // conjugate pole pair at angle θ from the imaginary axis
        let theta = std::f64::consts::PI * (2 * i + 1) as f64 / (2 * n) as f64;
        let damping = theta.sin();
        let a0 = 1.0 + 2.0 * damping * k + k2;
        sections.push(Biquad {
            b: [k2 / a0, 2.0 * k2 / a0, k2 / a0],
            a: [2.0 * (k2 - 1.0) / a0, (1.0 - 2.0 * damping * k + k2) / a0],
        });
    }
    if n % 2 == 1 {
        let a0 = 1.0 + k;
        sections.push(Biquad {
            b: [k / a0, k / a0, 0.0],
            a: [(k - 1.0) / a0, 0.0],
        });
    }
    Ok(sections)
}

/// Runs the cascade over `x`, starting every section at its step state scaled by `x[0]`.
fn run_cascade(sections: &[Biquad], x: &[f64]) -> Vec<f64> {
    let mut y = x.to_vec();
    let Some(&first) = x.first() else {
        return y;
    };
    let mut level = first;
    for s in sections {
        let [z1, z2] = s.step_state();
        let (mut z1, mut z2) = (z1 * level, z2 * level);
        for v in y.iter_mut() {
            let input = *v;
            let out = s.b[0] * input + z1;
            z1 = s.b[1] * input - s.a[0] * out + z2;
            z2 = s.b[2] * input - s.a[1] * out;
            *v = out;
        }
        level *= s.dc_gain();
    }
    y
}

/// Applies a Butterworth low-pass to `wave` sampled at `fs`.
///
/// The zero-phase path pads both ends with an odd reflection before the
/// forward and backward passes. Output length equals input length.
pub fn lowpass_filter(wave: &[f64], fs: f64, spec: &FilterSpec) -> Result<Vec<f64>> {
    let sections = design_lowpass(spec, fs)?;
    if wave.len() <= 3 * spec.order {
        return Err(Error::validation(format!(
            "signal of {} samples is too short for an order-{} filter (need more than {})",
            wave.len(),
            spec.order,
            3 * spec.order
        )));
    }
    if !spec.zero_phase {
        return Ok(run_cascade(&sections, wave));
    }

    let n = wave.len();
    let pad = (3 * (2 * sections.len() + 1)).min(n - 1);
    let mut ext = Vec::with_capacity(n + 2 * pad);
    let (first, last) = (wave[0], wave[n - 1]);
    ext.extend((1..=pad).rev().map(|i| 2.0 * first - wave[i]));
    ext.extend_from_slice(wave);
    ext.extend((1..=pad).map(|i| 2.0 * last - wave[n - 1 - i]));

    let mut fwd = run_cascade(&sections, &ext);
    fwd.reverse();
    let mut back = run_cascade(&sections, &fwd);
    back.reverse();
    Ok(back[pad..pad + n].to_vec())
}

/// Analytic single-pass magnitude `|H(f)|` of the designed filter.
pub fn butterworth_magnitude(spec: &FilterSpec, fs: f64, f_hz: f64) -> f64 {
    let k = (std::f64::consts::PI * spec.cutoff_hz / fs).tan();
    let w = (std::f64::consts::PI * f_hz / fs).tan();
    1.0 / (1.0 + (w / k).powi(2 * spec.order as i32)).sqrt()
}
