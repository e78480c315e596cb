use abpsynth::eval::{aami_check, bhs_grade, evaluate_pipeline, Aggregation, BhsGrade, DenormMode, ErrorStats};
use abpsynth::preprocess::{SegmentPair, SegmentSource, Stats};
use abpsynth::Error;
use proptest::prelude::*;

/// 100 errors with exactly `p5`% at 5 mmHg, `p10`% within 10, `p15`% within 15, the rest at 20.
fn banded(p5: usize, p10: usize, p15: usize) -> Vec<f64> {
    let mut e = vec![5.0; p5];
    e.extend(vec![-10.0; p10 - p5]);
    e.extend(vec![15.0; p15 - p10]);
    e.extend(vec![-20.0; 100 - p15]);
    e
}

#[test]
fn bhs_band_boundaries_are_inclusive() {
    let cases = [
        ((60, 85, 95), BhsGrade::A),
        ((59, 85, 95), BhsGrade::B),
        ((60, 84, 95), BhsGrade::B),
        ((60, 85, 94), BhsGrade::B),
        ((50, 75, 90), BhsGrade::B),
        ((49, 75, 90), BhsGrade::C),
        ((40, 65, 85), BhsGrade::C),
        ((40, 65, 84), BhsGrade::D),
        ((39, 65, 85), BhsGrade::D),
        ((100, 100, 100), BhsGrade::A),
        ((0, 0, 0), BhsGrade::D),
    ];
    for ((a, b, c), grade) in cases {
        let r = bhs_grade(&banded(a, b, c)).unwrap();
        assert_eq!(r.grade, grade, "{a}/{b}/{c}");
        assert_eq!((r.p5, r.p10, r.p15), (a as f64, b as f64, c as f64));
    }
}

#[test]
fn aami_limits_are_inclusive() {
    // mean 5, deviations −8/0/+8, sample sd exactly 8
    let edge = aami_check(&[-3.0, 5.0, 13.0]).unwrap();
    assert_eq!((edge.me, edge.sd), (5.0, 8.0));
    assert!(edge.pass);
    assert!(aami_check(&[-13.0, -5.0, 3.0]).unwrap().pass);
    assert!(!aami_check(&[-3.0, 5.0, 13.5]).unwrap().pass);
    assert!(!aami_check(&[-3.5, 5.0, 13.5]).unwrap().pass);
}

#[test]
fn error_stats_of_known_list() {
    let s = ErrorStats::from_errors(&[1.0, -1.0, 3.0, -3.0]).unwrap();
    assert_eq!((s.me, s.mae, s.n), (0.0, 2.0, 4));
    assert!((s.rmse - 5f64.sqrt()).abs() < 1e-15);
    assert!((s.sd - (20.0f64 / 3.0).sqrt()).abs() < 1e-15);
}

fn segment(subject: &str, phase: f64) -> SegmentPair {
    let wave: Vec<f64> = (0..250).map(|i| (i as f64 * 0.06 + phase).sin()).collect();
    let st = Stats::of(&wave);
    let z: Vec<f64> = wave.iter().map(|v| (v - st.mu) / st.sigma).collect();
    SegmentPair {
        ppg: z.clone(),
        abp: z,
        ppg_stats: Stats { mu: 0.0, sigma: 1.0 },
        abp_stats: Stats { mu: 100.0, sigma: 15.0 },
        source: SegmentSource {
            subject_id: subject.into(),
            offset: 0,
        },
    }
}

#[test]
fn perfect_model_scores_zero_and_grade_a() {
    let test: Vec<SegmentPair> = (0..6).map(|i| segment(if i < 3 { "a" } else { "b" }, i as f64)).collect();
    for mode in [DenormMode::ReferenceStats, DenormMode::Normalized] {
        for agg in [Aggregation::PerSegment, Aggregation::PerSubject] {
            let (report, results) = evaluate_pipeline(|x| Ok(x.to_vec()), &test, mode, agg, "perfect").unwrap();
            assert_eq!(report.waveform.mae, 0.0);
            assert_eq!(report.sbp.mae, 0.0);
            assert_eq!(report.dbp.mae, 0.0);
            assert!(report.aami.sbp_pass && report.aami.dbp_pass);
            assert_eq!(report.bhs.sbp.grade, BhsGrade::A);
            assert_eq!(report.bhs.dbp.grade, BhsGrade::A);
            assert_eq!(results.len(), 6);
            let expected_n = if agg == Aggregation::PerSubject { 2 } else { 6 };
            assert_eq!(report.sbp.n, expected_n);
            let json = serde_json::to_value(&report).unwrap();
            for key in ["waveform", "sbp", "dbp", "aami", "bhs", "denorm_mode", "model_digest"] {
                assert!(json.get(key).is_some(), "{key}");
            }
        }
    }
}

#[test]
fn constant_offset_shows_up_in_mmhg() {
    let test: Vec<SegmentPair> = (0..4).map(|i| segment("s", i as f64)).collect();
    // +0.2 z-units is +3 mmHg at sigma 15
    let shift = |x: &[f64]| Ok(x.iter().map(|v| v + 0.2).collect());
    let (r, _) = evaluate_pipeline(shift, &test, DenormMode::ReferenceStats, Aggregation::PerSegment, "").unwrap();
    assert!((r.waveform.me - 3.0).abs() < 1e-9);
    assert!((r.sbp.me - 3.0).abs() < 1e-9);
    assert!(r.aami.sbp_pass);
}

#[test]
fn widespread_synthesis_failure_is_an_evaluation_error() {
    let test: Vec<SegmentPair> = (0..4).map(|i| segment("s", i as f64)).collect();
    let broken = |_: &[f64]| Err(Error::Validation("boom".into()));
    let r = evaluate_pipeline(broken, &test, DenormMode::Normalized, Aggregation::PerSegment, "");
    assert!(matches!(r, Err(Error::Evaluation(_))));
}

proptest! {
    #[test]
    fn grade_never_improves_when_errors_grow(errors in prop::collection::vec(-30f64..30.0, 1..200), k in 1.0f64..3.0) {
        let worse: Vec<f64> = errors.iter().map(|e| e * k).collect();
        prop_assert!(bhs_grade(&worse).unwrap().grade >= bhs_grade(&errors).unwrap().grade);
    }
}
