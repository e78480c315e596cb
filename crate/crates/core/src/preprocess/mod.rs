//! Record-to-segment preprocessing: artifact screening, low-pass filtering,
//! wavelet baseline removal, cross-correlation alignment, fixed-length
//! segmentation and per-segment z-scoring.

pub mod corpus;
pub mod filter;
pub mod wavelet;

use std::ops::Range;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::Record;
use crate::error::{Error, Result};

pub use corpus::{build_corpus, SegmentCorpus, Split, SplitLevel, CORPUS_MANIFEST};
pub use filter::{butterworth_magnitude, design_lowpass, lowpass_filter, Biquad, FilterSpec};
pub use wavelet::remove_baseline;

/// Thresholds for the automated artifact screen.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArtifactPolicy {
    pub abp_min_mmhg: f64,
    pub abp_max_mmhg: f64,
    /// Runs of constant samples longer than this are rejected.
    pub max_flat_s: f64,
    /// Samples within this distance of a bad sample are rejected too.
    pub guard_s: f64,
    /// Kept spans shorter than this are dropped.
    pub min_span_len: usize,
}

impl Default for ArtifactPolicy {
    fn default() -> Self {
        ArtifactPolicy {
            abp_min_mmhg: 20.0,
            abp_max_mmhg: 260.0,
            max_flat_s: 2.0,
            guard_s: 0.25,
            min_span_len: 250,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RejectReason {
    NonFinite,
    AbpOutOfRange,
    FlatLine,
    ShortSpan,
    Degenerate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rejection {
    pub subject_id: String,
    pub start: usize,
    pub end: usize,
    pub reason: RejectReason,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ScreenResult {
    pub spans: Vec<Range<usize>>,
    pub rejections: Vec<Rejection>,
}

fn flat_runs(x: &[f64], max_len: usize) -> Vec<Range<usize>> {
    let mut runs = Vec::new();
    let mut start = 0;
    for i in 1..=x.len() {
        if i == x.len() || x[i] != x[start] {
            if i - start > max_len {
                runs.push(start..i);
            }
            start = i;
        }
    }
    runs
}

/// Marks non-finite samples, out-of-range ABP and flat lines, pads each by the
/// guard window, and returns the clean spans at least `min_span_len` long.
pub fn screen_artifacts(record: &Record, policy: &ArtifactPolicy) -> ScreenResult {
    let n = record.len();
    let mut reason: Vec<Option<RejectReason>> = vec![None; n];
    for i in 0..n {
        let (p, a) = (record.ppg[i], record.abp[i]);
        if !p.is_finite() || !a.is_finite() {
            reason[i] = Some(RejectReason::NonFinite);
        } else if a < policy.abp_min_mmhg || a > policy.abp_max_mmhg {
            reason[i] = Some(RejectReason::AbpOutOfRange);
        }
    }
    let max_flat = (policy.max_flat_s * record.fs).floor() as usize;
    for channel in [&record.ppg, &record.abp] {
        for run in flat_runs(channel, max_flat) {
            for r in &mut reason[run] {
                r.get_or_insert(RejectReason::FlatLine);
            }
        }
    }

    let guard = (policy.guard_s * record.fs).round() as usize;
    let mut bad = vec![false; n];
    let mut rejections = Vec::new();
    let mut i = 0;
    while i < n {
        let Some(why) = reason[i] else {
            i += 1;
            continue;
        };
        let mut j = i;
        while j < n && reason[j] == Some(why) {
            j += 1;
        }
        let (start, end) = (i.saturating_sub(guard), (j + guard).min(n));
        bad[start..end].iter_mut().for_each(|b| *b = true);
        rejections.push(Rejection {
            subject_id: record.subject_id.clone(),
            start,
            end,
            reason: why,
        });
        i = j;
    }

    let mut spans = Vec::new();
    let mut i = 0;
    while i < n {
        if bad[i] {
            i += 1;
            continue;
        }
        let start = i;
        while i < n && !bad[i] {
            i += 1;
        }
        if i - start >= policy.min_span_len {
            spans.push(start..i);
        } else {
            rejections.push(Rejection {
                subject_id: record.subject_id.clone(),
                start,
                end: i,
                reason: RejectReason::ShortSpan,
            });
        }
    }
    ScreenResult { spans, rejections }
}

/// Cross-correlation `Σ_n x[n] y[n − m]` over the overlapping indices.
pub fn cross_correlation(x: &[f64], y: &[f64], m: isize) -> f64 {
    let n = x.len() as isize;
    let lo = m.max(0);
    let hi = n.min(n + m);
    (lo..hi).map(|i| x[i as usize] * y[(i - m) as usize]).sum()
}

/// Result of [`align_pair`].
#[derive(Clone, Debug, PartialEq)]
pub struct Alignment {
    /// Delay of ABP relative to PPG in samples (positive: ABP lags).
    pub lag: isize,
    pub ppg: Vec<f64>,
    pub abp: Vec<f64>,
    /// Offset of the aligned PPG within the input.
    pub ppg_offset: usize,
}

/// Finds the ABP delay maximizing the PPG/ABP cross-correlation and crops
/// both signals to their overlap after undoing it.
///
/// A delay `d` corresponds to correlation lag `m = −d`. Ties prefer the
/// smaller `|d|`, then the negative `d`.
pub fn align_pair(ppg: &[f64], abp: &[f64], max_lag: usize) -> Result<Alignment> {
    let n = ppg.len();
    if abp.len() != n {
        return Err(Error::validation(format!(
            "alignment needs equal lengths, got {} and {}",
            n,
            abp.len()
        )));
    }
    if 2 * max_lag >= n {
        return Err(Error::validation(format!(
            "max_lag {max_lag} must be below half the length {n}"
        )));
    }
    if ppg.iter().all(|&v| v == 0.0) || abp.iter().all(|&v| v == 0.0) {
        return Err(Error::degenerate("cannot align an all-zero signal"));
    }
    if ppg.iter().chain(abp).any(|v| !v.is_finite()) {
        return Err(Error::validation("alignment input contains non-finite samples"));
    }

    let max_lag = max_lag as isize;
    let mut best_lag = 0isize;
    let mut best = cross_correlation(ppg, abp, 0);
    // visit 1, -1, 2, -2, ... so that a strict improvement is required to move outward
    for mag in 1..=max_lag {
        for delay in [-mag, mag] {
            let r = cross_correlation(ppg, abp, -delay);
            if r > best {
                best = r;
                best_lag = delay;
            }
        }
    }

    let d = best_lag.unsigned_abs();
    let (ppg_range, abp_range) = if best_lag >= 0 {
        (0..n - d, d..n)
    } else {
        (d..n, 0..n - d)
    };
    Ok(Alignment {
        lag: best_lag,
        ppg_offset: ppg_range.start,
        ppg: ppg[ppg_range].to_vec(),
        abp: abp[abp_range].to_vec(),
    })
}

/// An un-normalized window cut from a record.
#[derive(Clone, Debug, PartialEq)]
pub struct RawSegment {
    pub ppg: Vec<f64>,
    pub abp: Vec<f64>,
    pub offset: usize,
}

/// Cuts consecutive windows of `seg_len` samples, `stride` apart, starting at 0.
///
/// `stride == 0` means non-overlapping windows (`stride = seg_len`). A
/// trailing partial window is discarded.
pub fn segment(ppg: &[f64], abp: &[f64], seg_len: usize, stride: usize) -> Result<Vec<RawSegment>> {
    if ppg.len() != abp.len() {
        return Err(Error::validation("segment needs equal-length channels"));
    }
    if seg_len < 2 {
        return Err(Error::validation(format!("segment length {seg_len} is below 2")));
    }
    let stride = if stride == 0 { seg_len } else { stride };
    let n = ppg.len();
    if n < seg_len {
        return Ok(Vec::new());
    }
    Ok((0..=n - seg_len)
        .step_by(stride)
        .map(|start| RawSegment {
            ppg: ppg[start..start + seg_len].to_vec(),
            abp: abp[start..start + seg_len].to_vec(),
            offset: start,
        })
        .collect())
}

/// Mean and population standard deviation used for z-scoring.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub mu: f64,
    pub sigma: f64,
}

impl Stats {
    pub fn of(x: &[f64]) -> Stats {
        let n = x.len() as f64;
        let mu = x.iter().sum::<f64>() / n;
        let var = x.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n;
        Stats {
            mu,
            sigma: var.sqrt(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentSource {
    pub subject_id: String,
    pub offset: usize,
}

/// A z-scored PPG/ABP segment with the statistics needed to undo it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentPair {
    pub ppg: Vec<f64>,
    pub abp: Vec<f64>,
    pub ppg_stats: Stats,
    pub abp_stats: Stats,
    pub source: SegmentSource,
}

impl SegmentPair {
    pub fn len(&self) -> usize {
        self.ppg.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ppg.is_empty()
    }

    /// Ground-truth ABP in mmHg.
    pub fn abp_mmhg(&self) -> Vec<f64> {
        self.abp
            .iter()
            .map(|v| v * self.abp_stats.sigma + self.abp_stats.mu)
            .collect()
    }
}

fn normalize(x: &[f64], channel: &str) -> Result<(Vec<f64>, Stats)> {
    if x.is_empty() {
        return Err(Error::validation(format!("empty {channel} segment")));
    }
    let stats = Stats::of(x);
    let tiny = f64::EPSILON * stats.mu.abs().max(1.0);
    if !(stats.sigma > tiny) {
        return Err(Error::degenerate(format!(
            "{channel} segment has zero variance"
        )));
    }
    Ok((
        x.iter().map(|v| (v - stats.mu) / stats.sigma).collect(),
        stats,
    ))
}

/// Normalizes each channel by its own segment mean and population std.
pub fn zscore(raw: &RawSegment, subject_id: &str) -> Result<SegmentPair> {
    if raw.ppg.len() != raw.abp.len() {
        return Err(Error::validation("z-score needs equal-length channels"));
    }
    let (ppg, ppg_stats) = normalize(&raw.ppg, "ppg")?;
    let (abp, abp_stats) = normalize(&raw.abp, "abp")?;
    Ok(SegmentPair {
        ppg,
        abp,
        ppg_stats,
        abp_stats,
        source: SegmentSource {
            subject_id: subject_id.to_string(),
            offset: raw.offset,
        },
    })
}

/// `x · σ + μ`
pub fn denormalize(x: &[f64], stats: Stats) -> Result<Vec<f64>> {
    if !(stats.sigma > 0.0) {
        return Err(Error::validation(format!(
            "denormalize needs sigma > 0, got {}",
            stats.sigma
        )));
    }
    Ok(x.iter().map(|v| v * stats.sigma + stats.mu).collect())
}

/// Settings for [`preprocess_record`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessConfig {
    pub filter: FilterSpec,
    pub artifacts: ArtifactPolicy,
    pub remove_baseline: bool,
    pub align: bool,
    /// Alignment search radius in seconds.
    pub max_lag_s: f64,
    pub segment_len: usize,
    /// Window stride; 0 means non-overlapping.
    pub stride: usize,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            filter: FilterSpec::default(),
            artifacts: ArtifactPolicy::default(),
            remove_baseline: true,
            align: true,
            max_lag_s: 1.0,
            segment_len: 250,
            stride: 0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RecordOutcome {
    pub segments: Vec<SegmentPair>,
    pub rejections: Vec<Rejection>,
    /// Alignment lag found for each kept span.
    pub lags: Vec<isize>,
}

fn remove_baseline_keep_mean(x: &[f64]) -> Result<Vec<f64>> {
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    let mut y = remove_baseline(x)?;
    y.iter_mut().for_each(|v| *v += mean);
    Ok(y)
}

fn centered(x: &[f64]) -> Vec<f64> {
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    x.iter().map(|v| v - mean).collect()
}

/// Runs screening, filtering, baseline removal, alignment, segmentation and
/// z-scoring on one record.
///
/// Screening runs on the raw record so that non-finite samples are cut out
/// before the filters could spread them. Baseline removal re-adds each
/// span's mean, keeping ABP on its mmHg level. The alignment lag is searched
/// on mean-removed copies, since the ABP offset would otherwise let edge
/// terms of the correlation sum dominate the pulse shape.
pub fn preprocess_record(record: &Record, config: &PreprocessConfig) -> Result<RecordOutcome> {
    record.validate()?;
    config.filter.validate(record.fs)?;
    let policy = ArtifactPolicy {
        min_span_len: config.artifacts.min_span_len.max(config.segment_len),
        ..config.artifacts
    };
    let screen = screen_artifacts(record, &policy);
    let mut outcome = RecordOutcome {
        rejections: screen.rejections,
        ..Default::default()
    };

    for span in screen.spans {
        let mut ppg = lowpass_filter(&record.ppg[span.clone()], record.fs, &config.filter)?;
        let mut abp = lowpass_filter(&record.abp[span.clone()], record.fs, &config.filter)?;
        if config.remove_baseline {
            ppg = remove_baseline_keep_mean(&ppg)?;
            abp = remove_baseline_keep_mean(&abp)?;
        }
        let mut base = span.start;
        if config.align {
            let max_lag = ((config.max_lag_s * record.fs).round() as usize).min((ppg.len() - 1) / 2);
            match align_pair(&centered(&ppg), &centered(&abp), max_lag) {
                Ok(a) => {
                    outcome.lags.push(a.lag);
                    let d = a.lag.unsigned_abs();
                    let n = ppg.len();
                    let abp_start = if a.lag >= 0 { d } else { 0 };
                    ppg = ppg[a.ppg_offset..a.ppg_offset + n - d].to_vec();
                    abp = abp[abp_start..abp_start + n - d].to_vec();
                    base += a.ppg_offset;
                }
                Err(Error::Degenerate(_)) => {
                    outcome.rejections.push(Rejection {
                        subject_id: record.subject_id.clone(),
                        start: span.start,
                        end: span.end,
                        reason: RejectReason::Degenerate,
                    });
                    continue;
                }
                Err(e) => return Err(e),
            }
        }
        for raw in segment(&ppg, &abp, config.segment_len, config.stride)? {
            let offset = base + raw.offset;
            match zscore(&raw, &record.subject_id) {
                Ok(mut seg) => {
                    seg.source.offset = offset;
                    outcome.segments.push(seg);
                }
                Err(Error::Degenerate(_)) => outcome.rejections.push(Rejection {
                    subject_id: record.subject_id.clone(),
                    start: offset,
                    end: offset + config.segment_len,
                    reason: RejectReason::Degenerate,
                }),
                Err(e) => return Err(e),
            }
        }
    }
    Ok(outcome)
}

/// [`preprocess_record`] over many records in parallel; results keep input order.
pub fn preprocess_records(records: &[Record], config: &PreprocessConfig) -> Result<Vec<RecordOutcome>> {
    records
        .par_iter()
        .map(|r| preprocess_record(r, config))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(ppg: Vec<f64>, abp: Vec<f64>) -> Record {
        Record::new(ppg, abp, 125.0, "t").unwrap()
    }

    fn wave(n: usize) -> Vec<f64> {
        (0..n).map(|i| (i as f64 * 0.06).sin() + 0.3 * (i as f64 * 0.13).cos()).collect()
    }

    #[test]
    fn clean_record_is_one_span() {
        let p = wave(1000);
        let a: Vec<f64> = p.iter().map(|v| 100.0 + 10.0 * v).collect();
        let s = screen_artifacts(&record(p, a), &ArtifactPolicy::default());
        assert_eq!(s.spans, vec![0..1000]);
        assert!(s.rejections.is_empty());
    }

    #[test]
    fn nan_is_cut_out_with_guard() {
        let mut p = wave(1000);
        let a: Vec<f64> = p.iter().map(|v| 100.0 + 10.0 * v).collect();
        p[500] = f64::NAN;
        let s = screen_artifacts(&record(p, a), &ArtifactPolicy::default());
        let guard = 31;
        assert_eq!(s.spans, vec![0..500 - guard, 501 + guard..1000]);
        assert_eq!(s.rejections[0].reason, RejectReason::NonFinite);
        assert!(s.spans.iter().all(|r| !r.contains(&500)));
    }

    #[test]
    fn abp_excursion_rejected() {
        let p = wave(1000);
        let mut a: Vec<f64> = p.iter().map(|v| 100.0 + 10.0 * v).collect();
        a[100] = 300.0;
        let s = screen_artifacts(&record(p, a), &ArtifactPolicy::default());
        assert!(s.spans.iter().all(|r| !r.contains(&100)));
        assert_eq!(s.rejections[0].reason, RejectReason::AbpOutOfRange);
        // left remainder (0..69) is too short to keep
        assert!(s.rejections.iter().any(|r| r.reason == RejectReason::ShortSpan));
    }

    #[test]
    fn flat_line_longer_than_two_seconds_rejected() {
        let mut p = wave(1500);
        let a: Vec<f64> = p.iter().map(|v| 100.0 + 10.0 * v).collect();
        for v in &mut p[600..900] {
            *v = 0.5;
        }
        let s = screen_artifacts(&record(p.clone(), a.clone()), &ArtifactPolicy::default());
        assert!(s.rejections.iter().any(|r| r.reason == RejectReason::FlatLine));
        assert!(s.spans.iter().all(|r| r.end <= 600 || r.start >= 900));
        // 1.5 s of flat signal is tolerated
        for v in &mut p[600..900] {
            *v = 0.0;
        }
        for (i, v) in p[600..787].iter_mut().enumerate() {
            *v = 0.5 + i as f64;
        }
        let s = screen_artifacts(&record(p, a), &ArtifactPolicy::default());
        assert!(s.rejections.iter().all(|r| r.reason != RejectReason::FlatLine));
    }

    #[test]
    fn delayed_abp_gives_positive_lag() {
        let x = wave(400);
        let mut y = vec![0.0; 400];
        y[5..].copy_from_slice(&x[..395]);
        let a = align_pair(&x, &y, 40).unwrap();
        assert_eq!(a.lag, 5);
        assert_eq!(a.ppg, x[..395].to_vec());
        assert_eq!(a.abp, y[5..].to_vec());
        assert_eq!(align_pair(&x, &x, 40).unwrap().lag, 0);
    }

    #[test]
    fn alignment_errors() {
        let x = wave(100);
        assert!(matches!(
            align_pair(&vec![0.0; 100], &x, 10),
            Err(Error::Degenerate(_))
        ));
        assert!(matches!(align_pair(&x, &x, 50), Err(Error::Validation(_))));
        assert!(align_pair(&x, &x[..99], 10).is_err());
    }

    #[test]
    fn segmentation_counts() {
        let x = wave(1000);
        assert_eq!(segment(&x, &x, 250, 0).unwrap().len(), 4);
        assert_eq!(segment(&x[..249], &x[..249], 250, 0).unwrap().len(), 0);
        let s = segment(&x[..500], &x[..500], 250, 125).unwrap();
        assert_eq!(s.iter().map(|r| r.offset).collect::<Vec<_>>(), vec![0, 125, 250]);
        assert!(segment(&x, &x, 1, 0).is_err());
    }

    #[test]
    fn zscore_and_denormalize() {
        let raw = RawSegment {
            ppg: wave(250),
            abp: wave(250).iter().map(|v| 90.0 + 20.0 * v).collect(),
            offset: 0,
        };
        let seg = zscore(&raw, "s").unwrap();
        for ch in [&seg.ppg, &seg.abp] {
            let st = Stats::of(ch);
            assert!(st.mu.abs() < 1e-9 && (st.sigma - 1.0).abs() < 1e-9);
        }
        let back = denormalize(&seg.abp, seg.abp_stats).unwrap();
        assert!(back.iter().zip(&raw.abp).all(|(a, b)| (a - b).abs() < 1e-9));

        let flat = RawSegment {
            ppg: vec![1.0; 250],
            abp: raw.abp.clone(),
            offset: 0,
        };
        assert!(matches!(zscore(&flat, "s"), Err(Error::Degenerate(_))));

        let d = denormalize(&[-1.0, 1.0], Stats { mu: 100.0, sigma: 20.0 }).unwrap();
        assert_eq!(d, vec![80.0, 120.0]);
        assert_eq!(
            denormalize(&[0.0; 3], Stats { mu: 100.0, sigma: 15.0 }).unwrap(),
            vec![100.0; 3]
        );
        assert!(denormalize(&[0.0], Stats { mu: 0.0, sigma: 0.0 }).is_err());
    }
}
