//! Acceptance suite: one PASS/FAIL line per criterion, each with its runtime budget.
//!
//! Runs without the libtest harness so the report always reaches stdout.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use abpsynth::dataio::{generate_synthetic_pair, Mapping, SplitRatios, SyntheticConfig};
use abpsynth::eval::{aami_check, bhs_grade, BhsGrade};
use abpsynth::fdreg::{fit_ridge, sweep_lambda, waveform_mae, FdOptions, DEFAULT_LAMBDA_GRID};
use abpsynth::linalg::Matrix;
use abpsynth::nn::{
    build_model, count_params, loss, train, transformer_grad_check, LossKind, Sample, TrainConfig,
    TransformerConfig, TABLE1_GOLDENS,
};
use abpsynth::preprocess::{
    align_pair, build_corpus, cross_correlation, segment, PreprocessConfig, Split, SplitLevel, Stats,
};
use abpsynth::spectral::{dct2, idct};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn uniform(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn table1() -> Outcome {
    let counts = count_params(&build_model(TransformerConfig::default(), 0).map_err(|e| e.to_string())?);
    ensure(counts.len() == TABLE1_GOLDENS.len(), || format!("{} rows", counts.len()))?;
    for (c, (name, want)) in counts.iter().zip(TABLE1_GOLDENS) {
        ensure(c.layer == name && c.params == want, || {
            format!("{}: {} (expected {name}: {want})", c.layer, c.params)
        })?;
    }
    Ok(format!("{} rows match, total {}", counts.len(), counts.last().unwrap().params))
}

fn naive_dct2(x: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    (0..x.len())
        .map(|k| {
            let a = if k == 0 { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() };
            a * x
                .iter()
                .enumerate()
                .map(|(i, v)| v * (PI / n * (i as f64 + 0.5) * k as f64).cos())
                .sum::<f64>()
        })
        .collect()
}

fn dct_round_trip() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut worst_rt, mut worst_oracle) = (0.0f64, 0.0f64);
    for _ in 0..1000 {
        let x: Vec<f64> = (0..250).map(|_| rng.random_range(-100.0..100.0)).collect();
        let c = dct2(&x).map_err(|e| e.to_string())?;
        worst_rt = worst_rt.max(max_abs_diff(&idct(&c).map_err(|e| e.to_string())?, &x));
        worst_oracle = worst_oracle.max(max_abs_diff(&c, &naive_dct2(&x)));
    }
    ensure(worst_rt < 1e-9 && worst_oracle < 1e-9, || {
        format!("round trip {worst_rt:.2e}, oracle {worst_oracle:.2e}")
    })?;
    Ok(format!("round trip {worst_rt:.2e}, oracle {worst_oracle:.2e} over 1000 vectors"))
}

fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let data = (0..rows * cols).map(|_| StandardNormal.sample(rng)).collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

fn ridge() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut worst_ne, mut worst_gd) = (0.0f64, 0.0f64);
    for &lambda in &[1e-3, 0.1, 1.0, 10.0] {
        let x = gaussian(20, 8, &mut rng);
        let y = gaussian(20, 8, &mut rng);
        let w = fit_ridge(&x, &y, lambda).map_err(|e| e.to_string())?.weights.unwrap();
        let gram = x.t_matmul(&x);
        let xty = x.t_matmul(&y);
        let mut lhs = gram.matmul(&w);
        lhs.add_scaled(&w, lambda);
        worst_ne = worst_ne.max(lhs.sub(&xty).frobenius_norm() / xty.frobenius_norm());

        let trace: f64 = (0..8).map(|i| gram[(i, i)]).sum();
        let step = 1.0 / (trace + lambda);
        let mut w_gd = Matrix::zeros(8, 8);
        for _ in 0..500_000 {
            let mut g = gram.matmul(&w_gd);
            g.add_scaled(&xty, -1.0);
            g.add_scaled(&w_gd, lambda);
            if g.frobenius_norm() < 1e-13 {
                break;
            }
            w_gd.add_scaled(&g, -step);
        }
        worst_gd = worst_gd.max(w.sub(&w_gd).frobenius_norm());
    }
    let x = gaussian(20, 8, &mut rng);
    let w_star = gaussian(8, 8, &mut rng);
    let w = fit_ridge(&x, &x.matmul(&w_star), 0.0)
        .map_err(|e| e.to_string())?
        .weights
        .unwrap();
    let planted = w.sub(&w_star).frobenius_norm() / w_star.frobenius_norm();
    ensure(worst_ne < 1e-8 && worst_gd < 1e-6 && planted < 1e-6, || {
        format!("normal eq {worst_ne:.2e}, vs GD {worst_gd:.2e}, planted {planted:.2e}")
    })?;
    Ok(format!(
        "normal eq {worst_ne:.2e}, vs GD {worst_gd:.2e}, planted W {planted:.2e}"
    ))
}

fn grad_check() -> Outcome {
    let cfg = TransformerConfig {
        seq_len: 8,
        d_model: 8,
        num_heads: 2,
        key_dim: 4,
        ff_dim: 8,
        num_blocks: 1,
        dropout: 0.0,
        ..Default::default()
    };
    let mut worst = 0.0f64;
    let mut checked = 0;
    for seed in 0..3 {
        let model = build_model(cfg, seed).map_err(|e| e.to_string())?;
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let x = uniform(8, &mut rng);
        let target: Vec<f64> = model
            .forward(&x)
            .map_err(|e| e.to_string())?
            .iter()
            .map(|p| p + 0.01 * rng.random_range(-1.0..1.0))
            .collect();
        let r = transformer_grad_check(&model, &x, &target, LossKind::Mse, 1e-5).map_err(|e| e.to_string())?;
        ensure(r.max_rel_error < 1e-4, || format!("seed {seed}: {r:?}"))?;
        worst = worst.max(r.max_rel_error);
        checked += r.checked;
    }
    Ok(format!("max relative error {worst:.2e} over {checked} parameter probes"))
}

fn zscored(x: &[f64]) -> Vec<f64> {
    let s = Stats::of(x);
    x.iter().map(|v| (v - s.mu) / s.sigma).collect()
}

fn overfit() -> Outcome {
    let synth = SyntheticConfig {
        n_records: 8,
        record_len: 1000,
        mapping: Mapping::LinearDct,
        seed: 3,
        ..Default::default()
    };
    let records = generate_synthetic_pair(&synth).map_err(|e| e.to_string())?;
    // 32-sample windows taking every 4th sample, so each spans a full pulse
    let mut data = Vec::new();
    for r in &records {
        for w in 0..4 {
            let start = w * 37;
            let pick = |x: &[f64]| zscored(&(0..32).map(|i| x[start + 4 * i]).collect::<Vec<_>>());
            data.push(Sample {
                input: pick(&r.ppg),
                target: pick(&r.abp),
            });
        }
    }
    let cfg = TransformerConfig {
        seq_len: 32,
        d_model: 16,
        num_heads: 2,
        key_dim: 8,
        ff_dim: 16,
        num_blocks: 1,
        dropout: 0.0,
        ..Default::default()
    };
    let mut model = build_model(cfg, 0).map_err(|e| e.to_string())?;
    let tc = TrainConfig {
        epochs: 500,
        batch_size: 32,
        learning_rate: 3e-3,
        seed: 1,
        loss: LossKind::Mae,
        ..Default::default()
    };
    let history = train(&mut model, &data, &[], &tc).map_err(|e| e.to_string())?;
    let windows: Vec<f64> = history
        .step_loss
        .chunks(50)
        .map(|c| c.iter().sum::<f64>() / c.len() as f64)
        .collect();
    let mut mae = 0.0;
    for s in &data {
        mae += loss(&model.forward(&s.input).map_err(|e| e.to_string())?, &s.target, LossKind::Mae)
            .map_err(|e| e.to_string())?;
    }
    mae /= data.len() as f64;
    ensure(history.step_loss.len() == 500, || format!("{} steps", history.step_loss.len()))?;
    ensure(windows.windows(2).all(|p| p[1] < p[0]), || format!("window means {windows:.4?}"))?;
    ensure(mae < 0.05, || format!("final MAE {mae:.4}"))?;
    Ok(format!(
        "final MAE {mae:.4} after 500 steps, window means {:.3} -> {:.3}",
        windows[0],
        windows[windows.len() - 1]
    ))
}

fn end_to_end_fd() -> Outcome {
    let synth = SyntheticConfig {
        n_records: 256,
        mapping: Mapping::LinearDct,
        seed: 11,
        ..Default::default()
    };
    let records = generate_synthetic_pair(&synth).map_err(|e| e.to_string())?;
    let corpus = build_corpus(
        &records,
        &PreprocessConfig::default(),
        SplitRatios::default(),
        SplitLevel::Record,
        11,
    )
    .map_err(|e| e.to_string())?;
    let options = FdOptions {
        denormalize: false,
        ..Default::default()
    };
    let (train, val, test) = (
        corpus.part(Split::Train),
        corpus.part(Split::Val),
        corpus.part(Split::Test),
    );
    let (report, model) = sweep_lambda(&train, &val, &DEFAULT_LAMBDA_GRID, &options).map_err(|e| e.to_string())?;
    let mae = waveform_mae(&model, &test, false).map_err(|e| e.to_string())?;
    let grid_min = DEFAULT_LAMBDA_GRID[0];
    ensure(mae < 0.05, || format!("test MAE {mae:.4}"))?;
    ensure(report.chosen_lambda == grid_min, || {
        format!("chose lambda {} instead of {grid_min}", report.chosen_lambda)
    })?;
    Ok(format!(
        "{} train / {} val / {} test segments, lambda {}, test MAE {mae:.4}",
        train.len(),
        val.len(),
        test.len(),
        report.chosen_lambda
    ))
}

fn segmentation() -> Outcome {
    let synth = SyntheticConfig {
        n_records: 100,
        mapping: Mapping::Identity,
        seed: 5,
        ..Default::default()
    };
    let records = generate_synthetic_pair(&synth).map_err(|e| e.to_string())?;
    let mut raw = 0;
    for r in &records {
        raw += segment(&r.ppg, &r.abp, 250, 0).map_err(|e| e.to_string())?.len();
    }
    ensure(raw == 400, || format!("{raw} raw segments"))?;
    ensure(32_052 * (1000 / 250) == 128_208, || "reshape arithmetic".into())?;
    Ok(format!("100 records x 1000 samples -> {raw} segments of 250 (32,052 -> 128,208)"))
}

fn banded(p5: usize, p10: usize, p15: usize) -> Vec<f64> {
    let mut e = vec![5.0; p5];
    e.extend(vec![-10.0; p10 - p5]);
    e.extend(vec![15.0; p15 - p10]);
    e.extend(vec![-20.0; 100 - p15]);
    e
}

fn grading() -> Outcome {
    let cases = [
        ((60, 85, 95), BhsGrade::A),
        ((59, 85, 95), BhsGrade::B),
        ((50, 75, 90), BhsGrade::B),
        ((50, 75, 89), BhsGrade::C),
        ((40, 65, 85), BhsGrade::C),
        ((40, 64, 85), BhsGrade::D),
    ];
    for ((a, b, c), want) in cases {
        let got = bhs_grade(&banded(a, b, c)).map_err(|e| e.to_string())?.grade;
        ensure(got == want, || format!("{a}/{b}/{c}: {got:?}, expected {want:?}"))?;
    }
    let edge = aami_check(&[-3.0, 5.0, 13.0]).map_err(|e| e.to_string())?;
    ensure(edge.pass && edge.me == 5.0 && edge.sd == 8.0, || format!("{edge:?}"))?;
    let over = aami_check(&[-3.0, 5.0, 13.5]).map_err(|e| e.to_string())?;
    ensure(!over.pass, || format!("{over:?} should fail"))?;
    Ok(format!("{} BHS band cases and the AAMI edge me=5.0, sd=8.0", cases.len()))
}

fn alignment() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for trial in 0..100 {
        let delay = rng.random_range(-40i64..=40) as isize;
        let base = uniform(580, &mut rng);
        let ppg = &base[40..540];
        let start = (40 - delay) as usize;
        let abp = &base[start..start + 500];
        let got = align_pair(ppg, abp, 40).map_err(|e| e.to_string())?.lag;
        let mut best = (f64::NEG_INFINITY, 0isize);
        for d in -40isize..=40 {
            let r = cross_correlation(ppg, abp, -d);
            if r > best.0 || (r == best.0 && (d.abs(), d) < (best.1.abs(), best.1)) {
                best = (r, d);
            }
        }
        ensure(got == best.1 && got == delay, || {
            format!("trial {trial}: planted {delay}, oracle {}, got {got}", best.1)
        })?;
    }
    Ok("100/100 planted lags recovered, all equal to the exhaustive argmax".into())
}

fn run_cli(args: &[&str], cwd: &Path) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_abpsynth"))
        .args(args)
        .current_dir(cwd)
        .output()
        .map_err(|e| e.to_string())?;
    ensure(out.status.success(), || {
        format!("{args:?} exited {:?}: {}", out.status.code(), String::from_utf8_lossy(&out.stderr))
    })
}

fn files_of(dir: &Path) -> Vec<PathBuf> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map(|it| it.filter_map(|e| e.ok().map(|e| e.path())).collect())
        .unwrap_or_default();
    files.sort();
    files
}

fn same_bytes(a: &Path, b: &Path) -> Result<usize, String> {
    let (fa, fb) = (files_of(a), files_of(b));
    ensure(!fa.is_empty() && fa.len() == fb.len(), || {
        format!("{} vs {} files", fa.len(), fb.len())
    })?;
    for (x, y) in fa.iter().zip(&fb) {
        ensure(x.file_name() == y.file_name(), || format!("{x:?} vs {y:?}"))?;
        let same = std::fs::read(x).map_err(|e| e.to_string())? == std::fs::read(y).map_err(|e| e.to_string())?;
        ensure(same, || format!("{} differs between runs", x.display()))?;
    }
    Ok(fa.len())
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let dir = tmp.path();
    let mut compared = 0;
    for run in ["a", "b"] {
        run_cli(
            &["synth-data", "--n", "16", "--mapping", "linear-dct", "--seed", "7", "--out", &format!("data_{run}")],
            dir,
        )?;
    }
    compared += same_bytes(&dir.join("data_a"), &dir.join("data_b"))?;
    run_cli(&["preprocess", "--data", "data_a", "--out", "corpus", "--seed", "7"], dir)?;
    for run in ["a", "b"] {
        run_cli(&["train-fd", "--corpus", "corpus", "--out", &format!("fd_{run}")], dir)?;
        run_cli(
            &[
                "train-tx", "--corpus", "corpus", "--seed", "7", "--epochs", "1", "--batch-size", "8",
                "--max-train", "8", "--out", &format!("tx_{run}"),
            ],
            dir,
        )?;
    }
    compared += same_bytes(&dir.join("fd_a"), &dir.join("fd_b"))?;
    compared += same_bytes(&dir.join("tx_a"), &dir.join("tx_b"))?;
    Ok(format!("{compared} artifact files byte-identical across two runs"))
}

fn main() -> ExitCode {
    let criteria: [(&str, u64, fn() -> Outcome); 10] = [
        ("Table-1 parameter counts", 1, table1),
        ("DCT round trip and naive oracle", 10, dct_round_trip),
        ("ridge closed form", 30, ridge),
        ("transformer gradient check", 120, grad_check),
        ("optimization sanity (overfit)", 300, overfit),
        ("end-to-end FD on linear-dct corpus", 120, end_to_end_fd),
        ("segmentation golden", 1, segmentation),
        ("AAMI/BHS grading goldens", 1, grading),
        ("alignment vs exhaustive oracle", 5, alignment),
        ("CLI determinism", 600, determinism),
    ];
    let mut failures = 0;
    for (i, (name, budget, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = check();
        let elapsed = start.elapsed();
        let outcome = outcome.and_then(|detail| {
            if elapsed <= Duration::from_secs(*budget) {
                Ok(detail)
            } else {
                Err(format!("{detail}; over the {budget} s budget"))
            }
        });
        let (tag, detail) = match outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failures += 1;
                ("FAIL", d)
            }
        };
        println!(
            "criterion {:>2} {tag}  {name}: {detail} [{:.2} s / {budget} s]",
            i + 1,
            elapsed.as_secs_f64()
        );
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failures, criteria.len());
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
