//! Waveform and blood-pressure error metrics with AAMI and BHS grading.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preprocess::SegmentPair;

/// AAMI bounds on the mean and standard deviation of the error, in mmHg.
pub const AAMI_MAX_MEAN_ERROR: f64 = 5.0;
pub const AAMI_MAX_SD: f64 = 8.0;

/// BHS cumulative-percentage thresholds at 5, 10 and 15 mmHg, best grade first.
pub const BHS_TABLE: [(BhsGrade, [f64; 3]); 3] = [
    (BhsGrade::A, [60.0, 85.0, 95.0]),
    (BhsGrade::B, [50.0, 75.0, 90.0]),
    (BhsGrade::C, [40.0, 65.0, 85.0]),
];

fn check_pair(y: &[f64], yhat: &[f64]) -> Result<()> {
    if y.len() != yhat.len() {
        return Err(Error::validation(format!(
            "length mismatch: {} reference vs {} estimated",
            y.len(),
            yhat.len()
        )));
    }
    if y.is_empty() {
        return Err(Error::validation("metrics need at least one sample"));
    }
    Ok(())
}

pub fn mae(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check_pair(y, yhat)?;
    Ok(y.iter().zip(yhat).map(|(a, b)| (b - a).abs()).sum::<f64>() / y.len() as f64)
}

pub fn rmse(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check_pair(y, yhat)?;
    let sq: f64 = y.iter().zip(yhat).map(|(a, b)| (b - a) * (b - a)).sum();
    Ok((sq / y.len() as f64).sqrt())
}

/// Summary of signed errors `estimate − reference`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorStats {
    pub mae: f64,
    pub rmse: f64,
    /// Mean signed error.
    pub me: f64,
    /// Sample (n − 1) standard deviation of the signed error; 0 when n = 1.
    pub sd: f64,
    pub n: usize,
}

impl ErrorStats {
    pub fn from_errors(errors: &[f64]) -> Result<Self> {
        if errors.is_empty() {
            return Err(Error::validation("no errors to summarize"));
        }
        let n = errors.len();
        let nf = n as f64;
        let me = errors.iter().sum::<f64>() / nf;
        let mae = errors.iter().map(|e| e.abs()).sum::<f64>() / nf;
        let rmse = (errors.iter().map(|e| e * e).sum::<f64>() / nf).sqrt();
        let sd = if n > 1 {
            (errors.iter().map(|e| (e - me) * (e - me)).sum::<f64>() / (nf - 1.0)).sqrt()
        } else {
            0.0
        };
        Ok(ErrorStats { mae, rmse, me, sd, n })
    }

    pub fn from_pair(y: &[f64], yhat: &[f64]) -> Result<Self> {
        check_pair(y, yhat)?;
        let e: Vec<f64> = y.iter().zip(yhat).map(|(a, b)| b - a).collect();
        Self::from_errors(&e)
    }
}

/// Systolic (maximum) and diastolic (minimum) pressure of a segment.
pub fn extract_sbp_dbp(abp: &[f64]) -> Result<(f64, f64)> {
    if abp.is_empty() {
        return Err(Error::validation("cannot extract SBP/DBP from an empty segment"));
    }
    if abp.iter().any(|v| !v.is_finite()) {
        return Err(Error::validation("segment contains non-finite samples"));
    }
    let sbp = abp.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let dbp = abp.iter().copied().fold(f64::INFINITY, f64::min);
    Ok((sbp, dbp))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AamiResult {
    pub pass: bool,
    pub me: f64,
    pub sd: f64,
    pub n: usize,
}

/// Passes iff `|ME| ≤ 5` and `SD ≤ 8` (sample SD, inclusive bounds).
pub fn aami_check(errors: &[f64]) -> Result<AamiResult> {
    let s = ErrorStats::from_errors(errors)?;
    Ok(AamiResult {
        pass: s.me.abs() <= AAMI_MAX_MEAN_ERROR && s.sd <= AAMI_MAX_SD,
        me: s.me,
        sd: s.sd,
        n: s.n,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BhsGrade {
    A,
    B,
    C,
    D,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BhsResult {
    pub grade: BhsGrade,
    pub p5: f64,
    pub p10: f64,
    pub p15: f64,
}

/// Cumulative percentages of `|error| ≤ 5, 10, 15` mmHg and the resulting grade.
pub fn bhs_grade(errors: &[f64]) -> Result<BhsResult> {
    if errors.is_empty() {
        return Err(Error::validation("BHS grading needs at least one error"));
    }
    let n = errors.len() as f64;
    let pct = |t: f64| 100.0 * errors.iter().filter(|e| e.abs() <= t).count() as f64 / n;
    let (p5, p10, p15) = (pct(5.0), pct(10.0), pct(15.0));
    let grade = BHS_TABLE
        .iter()
        .find(|(_, [a, b, c])| p5 >= *a && p10 >= *b && p15 >= *c)
        .map_or(BhsGrade::D, |(g, _)| *g);
    Ok(BhsResult { grade, p5, p10, p15 })
}

/// How synthesized and reference ABP are put on a common scale.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DenormMode {
    #[default]
    /// Invert z-scoring with the reference segment's ABP (mu, sigma): errors in mmHg.
    ReferenceStats,
    /// Compare in z-units.
    Normalized,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Aggregation {
    #[default]
    PerSegment,
    /// Average SBP/DBP errors per subject before grading.
    PerSubject,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AamiSummary {
    pub sbp_pass: bool,
    pub dbp_pass: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BhsSummary {
    pub sbp: BhsResult,
    pub dbp: BhsResult,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub waveform: ErrorStats,
    pub sbp: ErrorStats,
    pub dbp: ErrorStats,
    pub aami: AamiSummary,
    pub bhs: BhsSummary,
    pub denorm_mode: DenormMode,
    pub model_digest: String,
    pub aggregation: Aggregation,
    pub n_segments: usize,
    pub n_failed: usize,
}

/// One evaluated segment, kept for plotting.
#[derive(Clone, Debug, PartialEq)]
pub struct SegmentResult {
    pub index: usize,
    pub reference: Vec<f64>,
    pub synthesized: Vec<f64>,
}

/// Runs `synthesizer` (normalized PPG → normalized ABP) over the test set and
/// scores it. Segments whose synthesis fails are skipped; more than 10 %
/// failures is an error.
pub fn evaluate_pipeline<F>(
    synthesizer: F,
    test: &[SegmentPair],
    mode: DenormMode,
    aggregation: Aggregation,
    model_digest: &str,
) -> Result<(EvalReport, Vec<SegmentResult>)>
where
    F: Fn(&[f64]) -> Result<Vec<f64>> + Sync,
{
    if test.is_empty() {
        return Err(Error::validation("evaluation needs a non-empty test set"));
    }
    let outcomes: Vec<Option<SegmentResult>> = test
        .par_iter()
        .enumerate()
        .map(|(index, seg)| {
            let synthesized = synthesizer(&seg.ppg).ok()?;
            if synthesized.len() != seg.abp.len() || synthesized.iter().any(|v| !v.is_finite()) {
                return None;
            }
            let (reference, synthesized) = match mode {
                DenormMode::ReferenceStats => {
                    let s = seg.abp_stats;
                    (
                        seg.abp_mmhg(),
                        synthesized.iter().map(|v| v * s.sigma + s.mu).collect(),
                    )
                }
                DenormMode::Normalized => (seg.abp.clone(), synthesized),
            };
            Some(SegmentResult {
                index,
                reference,
                synthesized,
            })
        })
        .collect();

    let n_failed = outcomes.iter().filter(|o| o.is_none()).count();
    if n_failed * 10 > test.len() {
        return Err(Error::Evaluation(format!(
            "synthesis failed on {n_failed} of {} segments",
            test.len()
        )));
    }
    let results: Vec<SegmentResult> = outcomes.into_iter().flatten().collect();

    let mut wave_err = Vec::new();
    let mut sbp_err = Vec::with_capacity(results.len());
    let mut dbp_err = Vec::with_capacity(results.len());
    let mut by_subject: BTreeMap<&str, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for r in &results {
        wave_err.extend(r.synthesized.iter().zip(&r.reference).map(|(s, t)| s - t));
        let (sbp_ref, dbp_ref) = extract_sbp_dbp(&r.reference)?;
        let (sbp_hat, dbp_hat) = extract_sbp_dbp(&r.synthesized)?;
        let (se, de) = (sbp_hat - sbp_ref, dbp_hat - dbp_ref);
        sbp_err.push(se);
        dbp_err.push(de);
        let entry = by_subject
            .entry(test[r.index].source.subject_id.as_str())
            .or_default();
        entry.0.push(se);
        entry.1.push(de);
    }
    if aggregation == Aggregation::PerSubject {
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        sbp_err = by_subject.values().map(|(s, _)| mean(s)).collect();
        dbp_err = by_subject.values().map(|(_, d)| mean(d)).collect();
    }

    let report = EvalReport {
        waveform: ErrorStats::from_errors(&wave_err)?,
        sbp: ErrorStats::from_errors(&sbp_err)?,
        dbp: ErrorStats::from_errors(&dbp_err)?,
        aami: AamiSummary {
            sbp_pass: aami_check(&sbp_err)?.pass,
            dbp_pass: aami_check(&dbp_err)?.pass,
        },
        bhs: BhsSummary {
            sbp: bhs_grade(&sbp_err)?,
            dbp: bhs_grade(&dbp_err)?,
        },
        denorm_mode: mode,
        model_digest: model_digest.to_string(),
        aggregation,
        n_segments: results.len(),
        n_failed,
    };
    Ok((report, results))
}
