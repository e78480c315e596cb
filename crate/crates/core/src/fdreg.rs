//! Frequency-domain regression from PPG DCT vectors to ABP DCT vectors.
//!
//! The linear model is multi-output ridge regression,
//! `W = (XᵀX + λI)⁻¹ XᵀY`, with `X` holding one truncated PPG spectrum per row
//! and `Y` the matching ABP spectra. The non-linear model is RBF kernel ridge
//! on the same features. Synthesis runs DCT → truncate/pad → predict → IDCT.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Cholesky, Matrix};
use crate::preprocess::{SegmentPair, Stats};
use crate::spectral::{self, SpectralConfig};

/// The seven-point decade grid 1e-3 ..= 1e3.
pub const DEFAULT_LAMBDA_GRID: [f64; 7] = [1e-3, 1e-2, 1e-1, 1e0, 1e1, 1e2, 1e3];

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RidgeKind {
    #[default]
    Linear,
    KernelRbf,
}

/// Dual-form state of a kernel ridge model.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelState {
    pub train_inputs: Matrix,
    pub dual: Matrix,
    /// Column means of the training targets; predictions shrink toward these.
    pub y_mean: Vec<f64>,
    pub bandwidth: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RidgeModel {
    pub kind: RidgeKind,
    pub lambda: f64,
    pub config: SpectralConfig,
    /// `Q_in × Q_out` primal weights (linear models only).
    pub weights: Option<Matrix>,
    pub kernel: Option<KernelState>,
}

fn check_training_data(x: &Matrix, y: &Matrix, lambda: f64) -> Result<()> {
    if x.rows() == 0 {
        return Err(Error::validation("ridge fit needs at least one training row"));
    }
    if x.rows() != y.rows() {
        return Err(Error::validation(format!(
            "X has {} rows but Y has {}",
            x.rows(),
            y.rows()
        )));
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::validation(format!("lambda must be finite and >= 0, got {lambda}")));
    }
    if !x.is_finite() || !y.is_finite() {
        return Err(Error::validation("training data contains non-finite values"));
    }
    Ok(())
}

/// Gram matrix and cross term, shared across a λ sweep.
pub struct RidgeProblem {
    gram: Matrix,
    xty: Matrix,
}

impl RidgeProblem {
    pub fn new(x: &Matrix, y: &Matrix) -> Result<Self> {
        check_training_data(x, y, 0.0)?;
        Ok(RidgeProblem {
            gram: x.t_matmul(x),
            xty: x.t_matmul(y),
        })
    }

    /// Solves `(XᵀX + λI) W = XᵀY` by Cholesky.
    pub fn solve(&self, lambda: f64) -> Result<Matrix> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::validation(format!("lambda must be finite and >= 0, got {lambda}")));
        }
        let mut a = self.gram.clone();
        for i in 0..a.rows() {
            a[(i, i)] += lambda;
        }
        let chol = Cholesky::factor(&a).map_err(|e| match e {
            Error::IllConditioned(m) => Error::IllConditioned(format!("ridge system at lambda = {lambda}: {m}")),
            other => other,
        })?;
        Ok(chol.solve(&self.xty))
    }
}

/// Closed-form linear ridge fit.
pub fn fit_ridge(x: &Matrix, y: &Matrix, lambda: f64) -> Result<RidgeModel> {
    check_training_data(x, y, lambda)?;
    let weights = RidgeProblem::new(x, y)?.solve(lambda)?;
    Ok(RidgeModel {
        kind: RidgeKind::Linear,
        lambda,
        config: SpectralConfig {
            q: x.cols(),
            q_x: x.cols(),
            q_y: y.cols(),
        },
        weights: Some(weights),
        kernel: None,
    })
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum()
}

/// `exp(−‖a − b‖² / (2 h²))`
pub fn rbf(a: &[f64], b: &[f64], bandwidth: f64) -> f64 {
    (-squared_distance(a, b) / (2.0 * bandwidth * bandwidth)).exp()
}

/// Median pairwise Euclidean distance between rows.
pub fn median_bandwidth(x: &Matrix) -> Result<f64> {
    let n = x.rows();
    let mut d: Vec<f64> = (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .map(|(i, j)| squared_distance(x.row(i), x.row(j)).sqrt())
        .collect();
    if d.is_empty() {
        return Err(Error::validation("bandwidth heuristic needs at least two rows"));
    }
    d.sort_by(f64::total_cmp);
    let m = d.len();
    let median = if m % 2 == 1 {
        d[m / 2]
    } else {
        0.5 * (d[m / 2 - 1] + d[m / 2])
    };
    if !(median > 0.0) {
        return Err(Error::degenerate("all training rows coincide"));
    }
    Ok(median)
}

fn rbf_gram(x: &Matrix, bandwidth: f64) -> Matrix {
    let n = x.rows();
    let mut k = Matrix::zeros(n, n);
    for i in 0..n {
        k[(i, i)] = 1.0;
        for j in i + 1..n {
            let v = rbf(x.row(i), x.row(j), bandwidth);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

fn center_columns(y: &Matrix) -> (Matrix, Vec<f64>) {
    let n = y.rows() as f64;
    let mean: Vec<f64> = y.column_sums().into_iter().map(|s| s / n).collect();
    let mut centered = y.clone();
    for i in 0..centered.rows() {
        for (v, m) in centered.row_mut(i).iter_mut().zip(&mean) {
            *v -= m;
        }
    }
    (centered, mean)
}

/// RBF kernel ridge: `α = (K + λI)⁻¹ (Y − ȳ)`, prediction `ȳ + k(x, ·)ᵀ α`.
pub fn fit_kernel_ridge(x: &Matrix, y: &Matrix, lambda: f64, bandwidth: f64) -> Result<RidgeModel> {
    check_training_data(x, y, lambda)?;
    if !(bandwidth > 0.0 && bandwidth.is_finite()) {
        return Err(Error::validation(format!("bandwidth must be positive, got {bandwidth}")));
    }
    let mut k = rbf_gram(x, bandwidth);
    for i in 0..k.rows() {
        k[(i, i)] += lambda;
    }
    let (centered, y_mean) = center_columns(y);
    let dual = Cholesky::factor(&k)?.solve(&centered);
    Ok(RidgeModel {
        kind: RidgeKind::KernelRbf,
        lambda,
        config: SpectralConfig {
            q: x.cols(),
            q_x: x.cols(),
            q_y: y.cols(),
        },
        weights: None,
        kernel: Some(KernelState {
            train_inputs: x.clone(),
            dual,
            y_mean,
            bandwidth,
        }),
    })
}

impl RidgeModel {
    pub fn input_dim(&self) -> usize {
        match (&self.weights, &self.kernel) {
            (Some(w), _) => w.rows(),
            (None, Some(k)) => k.train_inputs.cols(),
            (None, None) => 0,
        }
    }

    pub fn output_dim(&self) -> usize {
        match (&self.weights, &self.kernel) {
            (Some(w), _) => w.cols(),
            (None, Some(k)) => k.dual.cols(),
            (None, None) => 0,
        }
    }

    /// Maps one input spectrum to an output spectrum.
    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::validation(format!(
                "model expects {} inputs, got {}",
                self.input_dim(),
                x.len()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation("prediction input contains non-finite values"));
        }
        match (self.kind, &self.weights, &self.kernel) {
            (RidgeKind::Linear, Some(w), _) => {
                let mut out = vec![0.0; w.cols()];
                for (i, &xi) in x.iter().enumerate() {
                    if xi == 0.0 {
                        continue;
                    }
                    for (o, wij) in out.iter_mut().zip(w.row(i)) {
                        *o += xi * wij;
                    }
                }
                Ok(out)
            }
            (RidgeKind::KernelRbf, _, Some(k)) => {
                let mut out = k.y_mean.clone();
                for i in 0..k.train_inputs.rows() {
                    let kv = rbf(x, k.train_inputs.row(i), k.bandwidth);
                    for (o, a) in out.iter_mut().zip(k.dual.row(i)) {
                        *o += kv * a;
                    }
                }
                Ok(out)
            }
            _ => Err(Error::validation("model has no parameters for its kind")),
        }
    }
}

/// Truncated, zero-padded DCT feature of one normalized segment.
pub fn spectral_feature(wave: &[f64], keep: usize, q: usize) -> Result<Vec<f64>> {
    if wave.len() != q {
        return Err(Error::validation(format!(
            "segment has {} samples, spectral config expects {q}",
            wave.len()
        )));
    }
    Ok(spectral::truncate_pad(&spectral::dct2(wave)?, keep, q)?.coeffs)
}

/// Builds the `(X, Y)` design matrices for a set of segments.
pub fn design_matrices(segments: &[SegmentPair], config: &SpectralConfig) -> Result<(Matrix, Matrix)> {
    config.validate()?;
    if segments.is_empty() {
        return Err(Error::validation("no segments to build features from"));
    }
    let rows: Vec<(Vec<f64>, Vec<f64>)> = segments
        .par_iter()
        .map(|s| {
            Ok((
                spectral_feature(&s.ppg, config.q_x, config.q)?,
                spectral_feature(&s.abp, config.q_y, config.q)?,
            ))
        })
        .collect::<Result<_>>()?;
    let (xs, ys): (Vec<_>, Vec<_>) = rows.into_iter().unzip();
    Ok((Matrix::from_rows(&xs)?, Matrix::from_rows(&ys)?))
}

/// Synthesizes an ABP segment from a normalized PPG segment.
///
/// With `stats` the result is denormalized to mmHg; without, it stays in z-units.
pub fn synthesize_abp_fd(model: &RidgeModel, ppg: &[f64], stats: Option<Stats>) -> Result<Vec<f64>> {
    let cfg = model.config;
    if model.input_dim() != cfg.q || model.output_dim() != cfg.q {
        return Err(Error::validation(format!(
            "model dimensions {}x{} disagree with Q = {}",
            model.input_dim(),
            model.output_dim(),
            cfg.q
        )));
    }
    let x = spectral_feature(ppg, cfg.q_x, cfg.q)?;
    let y = model.predict(&x)?;
    let wave = spectral::idct(&y)?;
    match stats {
        Some(s) => crate::preprocess::denormalize(&wave, s),
        None => Ok(wave),
    }
}

/// Options for fitting a frequency-domain model on segments.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FdOptions {
    pub kind: RidgeKind,
    pub spectral: SpectralConfig,
    /// RBF bandwidth; `None` uses the median pairwise distance.
    pub bandwidth: Option<f64>,
    /// Measure validation error in mmHg (reference stats) instead of z-units.
    pub denormalize: bool,
}

impl Default for FdOptions {
    fn default() -> Self {
        FdOptions {
            kind: RidgeKind::Linear,
            spectral: SpectralConfig::default(),
            bandwidth: None,
            denormalize: true,
        }
    }
}

/// Fits a model of the requested kind on segments.
pub fn fit_segments(train: &[SegmentPair], lambda: f64, options: &FdOptions) -> Result<RidgeModel> {
    let (x, y) = design_matrices(train, &options.spectral)?;
    let mut model = match options.kind {
        RidgeKind::Linear => fit_ridge(&x, &y, lambda)?,
        RidgeKind::KernelRbf => {
            let h = match options.bandwidth {
                Some(h) => h,
                None => median_bandwidth(&x)?,
            };
            fit_kernel_ridge(&x, &y, lambda, h)?
        }
    };
    model.config = options.spectral;
    Ok(model)
}

/// Mean absolute time-domain error of `model` over `segments`.
pub fn waveform_mae(model: &RidgeModel, segments: &[SegmentPair], denormalize: bool) -> Result<f64> {
    if segments.is_empty() {
        return Err(Error::validation("no segments to score"));
    }
    let per_segment: Vec<(f64, usize)> = segments
        .par_iter()
        .map(|s| {
            let (pred, truth) = if denormalize {
                (synthesize_abp_fd(model, &s.ppg, Some(s.abp_stats))?, s.abp_mmhg())
            } else {
                (synthesize_abp_fd(model, &s.ppg, None)?, s.abp.clone())
            };
            let sum: f64 = pred.iter().zip(&truth).map(|(p, t)| (p - t).abs()).sum();
            Ok((sum, truth.len()))
        })
        .collect::<Result<_>>()?;
    let (sum, count) = per_segment
        .iter()
        .fold((0.0, 0usize), |(s, c), (ps, pc)| (s + ps, c + pc));
    Ok(sum / count as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LambdaResult {
    pub lambda: f64,
    /// `None` when the fit for this λ failed.
    pub val_mae: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FdTrainReport {
    pub kind: RidgeKind,
    pub lambda_grid: Vec<f64>,
    pub results: Vec<LambdaResult>,
    pub chosen_lambda: f64,
    pub chosen_val_mae: f64,
    pub denormalized: bool,
}

/// Fits one model per λ and keeps the one with the lowest validation MAE
/// (ties go to the smaller λ).
pub fn sweep_lambda(
    train: &[SegmentPair],
    val: &[SegmentPair],
    grid: &[f64],
    options: &FdOptions,
) -> Result<(FdTrainReport, RidgeModel)> {
    if grid.is_empty() {
        return Err(Error::validation("lambda grid is empty"));
    }
    if let Some(bad) = grid.iter().find(|l| !(**l >= 0.0 && l.is_finite())) {
        return Err(Error::validation(format!("lambda grid contains invalid value {bad}")));
    }
    if val.is_empty() {
        return Err(Error::validation("lambda sweep needs a non-empty validation set"));
    }
    let (x, y) = design_matrices(train, &options.spectral)?;
    let linear_problem = match options.kind {
        RidgeKind::Linear => Some(RidgeProblem::new(&x, &y)?),
        RidgeKind::KernelRbf => None,
    };
    let bandwidth = match (options.kind, options.bandwidth) {
        (RidgeKind::KernelRbf, None) => Some(median_bandwidth(&x)?),
        (_, h) => h,
    };

    let fit = |lambda: f64| -> Result<RidgeModel> {
        let mut model = match &linear_problem {
            Some(p) => RidgeModel {
                kind: RidgeKind::Linear,
                lambda,
                config: options.spectral,
                weights: Some(p.solve(lambda)?),
                kernel: None,
            },
            None => fit_kernel_ridge(&x, &y, lambda, bandwidth.expect("bandwidth set for kernel"))?,
        };
        model.config = options.spectral;
        Ok(model)
    };

    let mut results = Vec::with_capacity(grid.len());
    let mut best: Option<(f64, RidgeModel)> = None;
    let mut sorted = grid.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    for &lambda in &sorted {
        let outcome = fit(lambda).and_then(|m| Ok((waveform_mae(&m, val, options.denormalize)?, m)));
        match outcome {
            Ok((mae, model)) if mae.is_finite() => {
                results.push(LambdaResult {
                    lambda,
                    val_mae: Some(mae),
                    error: None,
                });
                if best.as_ref().is_none_or(|(b, _)| mae < *b) {
                    best = Some((mae, model));
                }
            }
            Ok((mae, _)) => results.push(LambdaResult {
                lambda,
                val_mae: None,
                error: Some(format!("non-finite validation MAE {mae}")),
            }),
            Err(e) => results.push(LambdaResult {
                lambda,
                val_mae: None,
                error: Some(e.to_string()),
            }),
        }
    }
    let Some((mae, model)) = best else {
        return Err(Error::Training(format!(
            "every lambda in the grid failed: {}",
            results
                .iter()
                .filter_map(|r| r.error.as_deref())
                .collect::<Vec<_>>()
                .join("; ")
        )));
    };
    let report = FdTrainReport {
        kind: options.kind,
        lambda_grid: sorted,
        chosen_lambda: model.lambda,
        chosen_val_mae: mae,
        results,
        denormalized: options.denormalize,
    };
    Ok((report, model))
}

/// On-disk JSON form of a [`RidgeModel`].
#[derive(Debug, Serialize, Deserialize)]
struct RidgeModelFile {
    kind: RidgeKind,
    lambda: f64,
    #[serde(rename = "Q")]
    q: usize,
    #[serde(rename = "Q_X")]
    q_x: usize,
    #[serde(rename = "Q_Y")]
    q_y: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    weights: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    n_train: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    train_inputs: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    dual: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    y_mean: Option<Vec<f64>>,
    bandwidth: Option<f64>,
}

impl RidgeModel {
    pub fn to_json(&self) -> Result<String> {
        let cfg = self.config;
        let mut file = RidgeModelFile {
            kind: self.kind,
            lambda: self.lambda,
            q: cfg.q,
            q_x: cfg.q_x,
            q_y: cfg.q_y,
            weights: None,
            n_train: None,
            train_inputs: None,
            dual: None,
            y_mean: None,
            bandwidth: None,
        };
        match (&self.weights, &self.kernel) {
            (Some(w), _) => file.weights = Some(w.as_slice().to_vec()),
            (None, Some(k)) => {
                file.n_train = Some(k.train_inputs.rows());
                file.train_inputs = Some(k.train_inputs.as_slice().to_vec());
                file.dual = Some(k.dual.as_slice().to_vec());
                file.y_mean = Some(k.y_mean.clone());
                file.bandwidth = Some(k.bandwidth);
            }
            (None, None) => return Err(Error::validation("model has no parameters")),
        }
        Ok(serde_json::to_string(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let f: RidgeModelFile = serde_json::from_str(text)?;
        let config = SpectralConfig {
            q: f.q,
            q_x: f.q_x,
            q_y: f.q_y,
        };
        config.validate()?;
        if !(f.lambda >= 0.0) {
            return Err(Error::validation("stored lambda is negative"));
        }
        let q = f.q;
        let (weights, kernel) = match f.kind {
            RidgeKind::Linear => {
                let w = f.weights.ok_or_else(|| Error::validation("linear model without weights"))?;
                let w = Matrix::from_vec(q, q, w)?;
                if !w.is_finite() {
                    return Err(Error::validation("stored weights are not finite"));
                }
                (Some(w), None)
            }
            RidgeKind::KernelRbf => {
                let missing = |what: &str| Error::validation(format!("kernel model without {what}"));
                let n = f.n_train.ok_or_else(|| missing("n_train"))?;
                let inputs = Matrix::from_vec(n, q, f.train_inputs.ok_or_else(|| missing("train_inputs"))?)?;
                let dual = Matrix::from_vec(n, q, f.dual.ok_or_else(|| missing("dual"))?)?;
                let y_mean = f.y_mean.ok_or_else(|| missing("y_mean"))?;
                if y_mean.len() != q {
                    return Err(Error::validation("y_mean length differs from Q"));
                }
                let bandwidth = f.bandwidth.ok_or_else(|| missing("bandwidth"))?;
                if !(bandwidth > 0.0) {
                    return Err(Error::validation("bandwidth must be positive"));
                }
                (
                    None,
                    Some(KernelState {
                        train_inputs: inputs,
                        dual,
                        y_mean,
                        bandwidth,
                    }),
                )
            }
        };
        Ok(RidgeModel {
            kind: f.kind,
            lambda: f.lambda,
            config,
            weights,
            kernel,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
