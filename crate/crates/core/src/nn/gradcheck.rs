//! Central finite-difference verification of analytic gradients.

use serde::Serialize;

use crate::error::Result;
use crate::nn::layers::Parameters;
use crate::nn::model::TransformerModel;
use crate::nn::{loss, loss_grad, Dropout, LossKind};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter tensor and flat index where the maximum occurred.
    pub worst: (String, usize),
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

/// Relative error with denominator `max(|a|, |b|, 1e-8)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Compares `analytic` against `(f(θ+ε) − f(θ−ε)) / 2ε` for every parameter of `model`.
pub fn finite_difference_check<P, F>(model: &P, analytic: &P, eps: f64, mut f: F) -> Result<GradCheckReport>
where
    P: Parameters + Clone,
    F: FnMut(&P) -> Result<f64>,
{
    let names: Vec<String> = model.named_params().into_iter().map(|(n, _)| n).collect();
    let grads: Vec<Vec<f64>> = analytic
        .named_params()
        .into_iter()
        .map(|(_, m)| m.as_slice().to_vec())
        .collect();
    let mut probe = model.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: (String::new(), 0),
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
    };
    for (t, name) in names.iter().enumerate() {
        for j in 0..grads[t].len() {
            let orig = probe.params_mut()[t].as_slice()[j];
            probe.params_mut()[t].as_mut_slice()[j] = orig + eps;
            let plus = f(&probe)?;
            probe.params_mut()[t].as_mut_slice()[j] = orig - eps;
            let minus = f(&probe)?;
            probe.params_mut()[t].as_mut_slice()[j] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let a = grads[t][j];
            let err = relative_error(a, numeric);
            if err > report.max_rel_error || report.checked == 0 {
                report.max_rel_error = err;
                report.worst = (name.clone(), j);
                report.analytic = a;
                report.numeric = numeric;
            }
            report.checked += 1;
        }
    }
    Ok(report)
}

/// Gradient check of the full model on one `(input, target)` pair, dropout off.
pub fn transformer_grad_check(
    model: &TransformerModel,
    input: &[f64],
    target: &[f64],
    kind: LossKind,
    eps: f64,
) -> Result<GradCheckReport> {
    let (pred, cache) = model.forward_with_cache(input, &mut Dropout::Off)?;
    let d = loss_grad(&pred, target, kind)?;
    let mut grad = model.zeros_like();
    model.backward(&cache, &d, &mut grad);
    finite_difference_check(model, &grad, eps, |m| loss(&m.forward(input)?, target, kind))
}
