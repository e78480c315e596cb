//! Subcommand implementations. Every artifact is a pure function of the
//! inputs, flags and seed, so repeated runs write identical bytes.

use std::collections::HashMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use abpsynth::dataio::{self, DatasetManifest, Format, SyntheticConfig, DATASET_MANIFEST};
use abpsynth::eval::{self, DenormMode};
use abpsynth::fdreg::{self, FdOptions, RidgeModel};
use abpsynth::nn::{self, Parameters, Sample, TransformerModel};
use abpsynth::preprocess::{build_corpus, SegmentCorpus, Split};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::plot::{overlay_svg, parse_series_csv, series_csv, Series};
use crate::{
    Cli, Command, EvaluateArgs, GradeArgs, ModelKind, ParamCountArgs, PlotArgs, PreprocessArgs, SynthArgs,
    TrainFdArgs, TrainTxArgs,
};

#[derive(Debug, thiserror::Error)]
pub enum Failure {
    #[error(transparent)]
    Core(#[from] abpsynth::Error),
    #[error("empty segment corpus: {0}")]
    EmptyCorpus(String),
    #[error("parameter counts differ from the reference table:\n{0}")]
    ParamMismatch(String),
}

impl Failure {
    pub fn code(&self) -> u8 {
        use abpsynth::Error as E;
        match self {
            Failure::Core(E::Training(_) | E::IllConditioned(_)) => 4,
            Failure::Core(E::Evaluation(_)) => 1,
            Failure::Core(_) => 2,
            Failure::EmptyCorpus(_) => 3,
            Failure::ParamMismatch(_) => 5,
        }
    }
}

type CmdResult<T = ()> = Result<T, Failure>;

fn io_err(path: &Path, source: std::io::Error) -> Failure {
    abpsynth::Error::Io {
        path: path.to_path_buf(),
        source,
    }
    .into()
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> CmdResult {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| io_err(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CmdResult {
    let mut text = serde_json::to_string_pretty(value).map_err(abpsynth::Error::from)?;
    text.push('\n');
    write_file(path, text)
}

/// Prints to stdout; a closed pipe (e.g. `| head`) is not an error.
fn print_json<T: Serialize>(value: &T) -> CmdResult {
    let text = serde_json::to_string_pretty(value).map_err(abpsynth::Error::from)?;
    let _ = writeln!(std::io::stdout().lock(), "{text}");
    Ok(())
}

fn sha256_hex(parts: &[&[u8]]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p);
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

struct Context {
    config: RunConfig,
    out: Option<PathBuf>,
    format: Option<Format>,
}

impl Context {
    fn out_or(&self, default: &str) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from(default))
    }
}

pub fn run(cli: Cli) -> CmdResult {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let seed = cli.seed.unwrap_or(config.seed);
    config.apply_seed(seed);
    if let Some(f) = cli.format {
        config.format = f;
    }
    let ctx = Context {
        config,
        out: cli.out,
        format: cli.format,
    };
    match cli.command {
        Command::SynthData(a) => synth_data(ctx, a),
        Command::Preprocess(a) => preprocess(ctx, a),
        Command::TrainFd(a) => train_fd(ctx, a),
        Command::TrainTx(a) => train_tx(ctx, a),
        Command::Evaluate(a) => evaluate(ctx, a),
        Command::Grade(a) => grade(ctx, a),
        Command::ParamCount(a) => param_count(ctx, a),
        Command::Plot(a) => plot(ctx, a),
    }
}

#[derive(Serialize)]
struct SynthSummary<'a> {
    out: String,
    records: usize,
    format: Format,
    config: &'a SyntheticConfig,
}

fn synth_data(mut ctx: Context, a: SynthArgs) -> CmdResult {
    let s = &mut ctx.config.synthetic;
    if let Some(n) = a.n {
        s.n_records = n;
    }
    if let Some(len) = a.len {
        s.record_len = len;
    }
    if let Some(m) = a.mapping {
        s.mapping = m;
    }
    if let Some(hr) = a.heart_rate {
        s.heart_rate_hz = hr;
    }
    if let Some(noise) = a.noise {
        s.noise_std = noise;
    }
    ctx.config.validate()?;
    let out = ctx.out_or("data");
    let synthetic = &ctx.config.synthetic;
    let records = dataio::generate_synthetic_pair(synthetic)?;
    dataio::save_synthetic(&records, synthetic, &out, ctx.config.format)?;
    print_json(&SynthSummary {
        out: out.display().to_string(),
        records: records.len(),
        format: ctx.config.format,
        config: synthetic,
    })
}

#[derive(Serialize)]
struct PreprocessReport {
    records: usize,
    segments: usize,
    train: usize,
    val: usize,
    test: usize,
    rejected_spans: usize,
    segments_per_record: Vec<(String, usize)>,
}

fn detect_format(path: &Path, explicit: Option<Format>, fallback: Format) -> Format {
    if let Some(f) = explicit {
        return f;
    }
    let manifest = path.join(DATASET_MANIFEST);
    fs::read_to_string(&manifest)
        .ok()
        .and_then(|t| serde_json::from_str::<DatasetManifest>(&t).ok())
        .map_or(fallback, |m| m.format)
}

fn preprocess(mut ctx: Context, a: PreprocessArgs) -> CmdResult {
    if let Some(level) = a.split_level {
        ctx.config.split_level = level;
    }
    if let Some(stride) = a.stride {
        ctx.config.preprocess.stride = stride;
    }
    if a.no_align {
        ctx.config.preprocess.align = false;
    }
    ctx.config.validate()?;
    let cfg = &ctx.config;
    let format = detect_format(&a.data, ctx.format, cfg.format);
    let records = dataio::load_records(&a.data, format)?;
    if records.is_empty() {
        return Err(Failure::EmptyCorpus(format!("no records found in {}", a.data.display())));
    }
    let corpus = build_corpus(&records, &cfg.preprocess, cfg.split, cfg.split_level, cfg.seed)?;
    for r in &corpus.rejections {
        eprintln!(
            "rejected {} [{}, {}): {:?}",
            r.subject_id, r.start, r.end, r.reason
        );
    }
    if corpus.is_empty() {
        return Err(Failure::EmptyCorpus(format!(
            "all {} records were rejected",
            records.len()
        )));
    }
    let out = ctx.out_or("corpus");
    corpus.save(&out, cfg.format)?;
    let mut per_record: Vec<(String, usize)> = records.iter().map(|r| (r.subject_id.clone(), 0)).collect();
    let index: HashMap<&str, usize> = records
        .iter()
        .enumerate()
        .map(|(i, r)| (r.subject_id.as_str(), i))
        .collect();
    for s in &corpus.segments {
        if let Some(&i) = index.get(s.source.subject_id.as_str()) {
            per_record[i].1 += 1;
        }
    }
    let report = PreprocessReport {
        records: records.len(),
        segments: corpus.len(),
        train: corpus.count(Split::Train),
        val: corpus.count(Split::Val),
        test: corpus.count(Split::Test),
        rejected_spans: corpus.rejections.len(),
        segments_per_record: per_record,
    };
    write_json(&out.join("preprocess_report.json"), &report)?;
    println!(
        "{} records -> {} segments (train {}, val {}, test {}), {} rejected spans",
        report.records, report.segments, report.train, report.val, report.test, report.rejected_spans
    );
    Ok(())
}

fn load_corpus(path: &Path) -> CmdResult<SegmentCorpus> {
    let corpus = SegmentCorpus::load(path)?;
    if corpus.is_empty() {
        return Err(Failure::EmptyCorpus(format!("{} holds no segments", path.display())));
    }
    Ok(corpus)
}

fn check_segment_len(corpus: &SegmentCorpus, expected: usize) -> CmdResult {
    if corpus.segment_len != expected {
        return Err(abpsynth::Error::Validation(format!(
            "corpus segments have length {}, configuration expects {expected}",
            corpus.segment_len
        ))
        .into());
    }
    Ok(())
}

#[derive(Serialize)]
struct FdReportFile {
    report: fdreg::FdTrainReport,
    n_train: usize,
    n_val: usize,
    /// Split the lambda was selected on; `train` when the corpus has no validation segments.
    selection_split: Split,
}

fn train_fd(mut ctx: Context, a: TrainFdArgs) -> CmdResult {
    if let Some(k) = a.kind {
        ctx.config.fd.kind = k;
    }
    if let Some(h) = a.bandwidth {
        ctx.config.fd.bandwidth = Some(h);
    }
    if let Some(grid) = a.lambda_grid {
        ctx.config.fd.lambda_grid = grid;
    }
    ctx.config.validate()?;
    let cfg = &ctx.config;
    let corpus = load_corpus(&a.corpus)?;
    check_segment_len(&corpus, cfg.spectral.q)?;
    let train = corpus.part(Split::Train);
    if train.is_empty() {
        return Err(Failure::EmptyCorpus("no training segments".into()));
    }
    let mut val = corpus.part(Split::Val);
    let mut selection_split = Split::Val;
    if val.is_empty() {
        eprintln!("no validation segments; selecting lambda on the training split");
        val = train.clone();
        selection_split = Split::Train;
    }
    let options = FdOptions {
        kind: cfg.fd.kind,
        spectral: cfg.spectral,
        bandwidth: cfg.fd.bandwidth,
        denormalize: cfg.eval.denorm_mode == DenormMode::ReferenceStats,
    };
    let (report, model) = fdreg::sweep_lambda(&train, &val, &cfg.fd.lambda_grid, &options)?;
    let out = ctx.out_or("fd_model");
    fs::create_dir_all(&out).map_err(|e| io_err(&out, e))?;
    model.save(&out.join("fd_model.json"))?;
    let file = FdReportFile {
        n_train: train.len(),
        n_val: if selection_split == Split::Val { val.len() } else { 0 },
        selection_split,
        report,
    };
    write_json(&out.join("fd_report.json"), &file)?;
    print_json(&file)
}

#[derive(Serialize)]
struct TxHistoryFile<'a> {
    transformer: nn::TransformerConfig,
    train: nn::TrainConfig,
    n_params: usize,
    n_train: usize,
    n_val: usize,
    history: &'a nn::TrainHistory,
}

fn train_tx(mut ctx: Context, a: TrainTxArgs) -> CmdResult {
    let t = &mut ctx.config.train;
    if let Some(e) = a.epochs {
        t.epochs = e;
    }
    if let Some(b) = a.batch_size {
        t.batch_size = b;
    }
    if let Some(lr) = a.learning_rate {
        t.learning_rate = lr;
    }
    if let Some(l) = a.loss {
        t.loss = l;
    }
    if let Some(m) = a.max_train {
        ctx.config.max_train_segments = Some(m);
    }
    ctx.config.validate()?;
    let cfg = &ctx.config;
    let corpus = load_corpus(&a.corpus)?;
    check_segment_len(&corpus, cfg.transformer.seq_len)?;
    let mut train: Vec<Sample> = corpus.part(Split::Train).iter().map(Sample::from).collect();
    if let Some(m) = cfg.max_train_segments {
        train.truncate(m);
    }
    if train.is_empty() {
        return Err(Failure::EmptyCorpus("no training segments".into()));
    }
    let val: Vec<Sample> = corpus.part(Split::Val).iter().map(Sample::from).collect();
    let mut model = nn::build_model(cfg.transformer, cfg.seed)?;
    let history = nn::train(&mut model, &train, &val, &cfg.train)?;
    let out = ctx.out_or("tx_model");
    fs::create_dir_all(&out).map_err(|e| io_err(&out, e))?;
    nn::save_weights(&model, &out.join("weights.bin"))?;
    let file = TxHistoryFile {
        transformer: cfg.transformer,
        train: cfg.train,
        n_params: model.param_count(),
        n_train: train.len(),
        n_val: val.len(),
        history: &history,
    };
    write_json(&out.join("history.json"), &file)?;
    print_json(&file)
}

enum LoadedModel {
    Fd(RidgeModel),
    Tx(TransformerModel),
}

fn resolve_model(path: &Path, kind: ModelKind) -> CmdResult<(LoadedModel, String)> {
    let mut path = path.to_path_buf();
    let mut kind = kind;
    if path.is_dir() {
        let fd = path.join("fd_model.json");
        let tx = path.join("weights.bin");
        path = match kind {
            ModelKind::Fd => fd,
            ModelKind::Tx => tx,
            _ if tx.is_file() => tx,
            _ => fd,
        };
    }
    if kind == ModelKind::Auto {
        kind = if path.extension().and_then(|e| e.to_str()) == Some("bin") {
            ModelKind::Tx
        } else {
            ModelKind::Fd
        };
    }
    let bytes = fs::read(&path).map_err(|e| io_err(&path, e))?;
    match kind {
        ModelKind::Tx => {
            let side = nn::persist::sidecar_path(&path);
            let side_bytes = fs::read(&side).map_err(|e| io_err(&side, e))?;
            let model = nn::load_weights(&path)?;
            Ok((LoadedModel::Tx(model), sha256_hex(&[&bytes, &side_bytes])))
        }
        _ => {
            let model = RidgeModel::load(&path)?;
            Ok((LoadedModel::Fd(model), sha256_hex(&[&bytes])))
        }
    }
}

fn bits(x: &[f64]) -> Vec<u64> {
    x.iter().map(|v| v.to_bits()).collect()
}

fn evaluate(mut ctx: Context, a: EvaluateArgs) -> CmdResult {
    if let Some(m) = a.denorm_mode {
        ctx.config.eval.denorm_mode = m;
    }
    if let Some(g) = a.aggregation {
        ctx.config.eval.aggregation = g;
    }
    ctx.config.validate()?;
    let cfg = &ctx.config;
    let corpus = load_corpus(&a.corpus)?;
    let segments = corpus.part(a.split);
    if segments.is_empty() {
        return Err(Failure::EmptyCorpus(format!("no {:?} segments", a.split)));
    }

    let (report, results) = if a.model_kind == ModelKind::Reference {
        let lookup: HashMap<Vec<u64>, Vec<f64>> =
            segments.iter().map(|s| (bits(&s.ppg), s.abp.clone())).collect();
        let synth = |ppg: &[f64]| {
            lookup
                .get(&bits(ppg))
                .cloned()
                .ok_or_else(|| abpsynth::Error::Validation("segment not in corpus".into()))
        };
        eval::evaluate_pipeline(synth, &segments, cfg.eval.denorm_mode, cfg.eval.aggregation, "reference")?
    } else {
        let path = a.model.as_ref().ok_or_else(|| {
            abpsynth::Error::Validation("--model is required unless --model-kind reference".into())
        })?;
        let (model, digest) = resolve_model(path, a.model_kind)?;
        match &model {
            LoadedModel::Fd(m) => {
                check_segment_len(&corpus, m.config.q)?;
                eval::evaluate_pipeline(
                    |ppg: &[f64]| fdreg::synthesize_abp_fd(m, ppg, None),
                    &segments,
                    cfg.eval.denorm_mode,
                    cfg.eval.aggregation,
                    &digest,
                )?
            }
            LoadedModel::Tx(m) => {
                check_segment_len(&corpus, m.config.seq_len)?;
                eval::evaluate_pipeline(
                    |ppg: &[f64]| m.forward(ppg),
                    &segments,
                    cfg.eval.denorm_mode,
                    cfg.eval.aggregation,
                    &digest,
                )?
            }
        }
    };

    let out = ctx.out_or("eval");
    write_json(&out.join("eval_report.json"), &report)?;
    let unit = match cfg.eval.denorm_mode {
        DenormMode::ReferenceStats => "ABP (mmHg)",
        DenormMode::Normalized => "ABP (z)",
    };
    for r in results.iter().take(a.plot.unwrap_or(0)) {
        let seg = &segments[r.index];
        let title = format!("{} @ {}", seg.source.subject_id, seg.source.offset);
        let svg = overlay_svg(
            &title,
            unit,
            &[
                Series {
                    label: "reference",
                    values: &r.reference,
                    color: "#1f3a93",
                    dashed: false,
                },
                Series {
                    label: "synthesized",
                    values: &r.synthesized,
                    color: "#c0392b",
                    dashed: true,
                },
            ],
        );
        let stem = format!("plot_{:03}", r.index);
        write_file(&out.join(format!("{stem}.svg")), svg)?;
        write_file(&out.join(format!("{stem}.csv")), series_csv(&r.reference, &r.synthesized))?;
    }
    print_json(&report)
}

#[derive(Serialize)]
struct GradeReport {
    stats: eval::ErrorStats,
    aami: eval::AamiResult,
    bhs: eval::BhsResult,
}

fn parse_errors(path: &Path) -> CmdResult<Vec<f64>> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let parse_err = |message: String| abpsynth::Error::Parse {
        path: path.to_path_buf(),
        message,
    };
    let values: Vec<f64> = if text.trim_start().starts_with('[') {
        serde_json::from_str(&text).map_err(|e| parse_err(e.to_string()))?
    } else {
        text.split(|c: char| c.is_whitespace() || c == ',')
            .filter(|t| !t.is_empty())
            .map(|t| t.parse::<f64>().map_err(|e| parse_err(format!("'{t}': {e}"))))
            .collect::<Result<_, _>>()?
    };
    if values.is_empty() {
        return Err(parse_err("no error values".into()).into());
    }
    Ok(values)
}

fn grade(ctx: Context, a: GradeArgs) -> CmdResult {
    let errors = parse_errors(&a.errors)?;
    let report = GradeReport {
        stats: eval::ErrorStats::from_errors(&errors)?,
        aami: eval::aami_check(&errors)?,
        bhs: eval::bhs_grade(&errors)?,
    };
    if let Some(out) = &ctx.out {
        write_json(out, &report)?;
    }
    print_json(&report)
}

fn param_count(mut ctx: Context, a: ParamCountArgs) -> CmdResult {
    let t = &mut ctx.config.transformer;
    for (slot, v) in [
        (&mut t.seq_len, a.seq_len),
        (&mut t.d_model, a.d_model),
        (&mut t.num_heads, a.num_heads),
        (&mut t.key_dim, a.key_dim),
        (&mut t.ff_dim, a.ff_dim),
        (&mut t.num_blocks, a.num_blocks),
    ] {
        if let Some(v) = v {
            *slot = v;
        }
    }
    let model = nn::build_model(ctx.config.transformer, ctx.config.seed)?;
    let counts = nn::count_params(&model);
    let width = counts.iter().map(|c| c.layer.len()).max().unwrap_or(5);
    println!("{:<width$}  {:>9}", "layer", "params");
    for c in &counts {
        println!("{:<width$}  {:>9}", c.layer, c.params);
    }
    if let Some(out) = &ctx.out {
        write_json(out, &counts)?;
    }
    if a.check_table1 {
        let bad = nn::table1_mismatches(&counts);
        if !bad.is_empty() {
            let lines: Vec<String> = bad
                .iter()
                .map(|(layer, want, got)| {
                    let show = |v: &Option<usize>| v.map_or("missing".to_string(), |n| n.to_string());
                    format!("  {layer}: expected {}, got {}", show(want), show(got))
                })
                .collect();
            return Err(Failure::ParamMismatch(lines.join("\n")));
        }
        println!("all rows match the reference table");
    }
    Ok(())
}

fn plot(ctx: Context, a: PlotArgs) -> CmdResult {
    let text = fs::read_to_string(&a.input).map_err(|e| io_err(&a.input, e))?;
    let (reference, synthesized) = parse_series_csv(&text).map_err(|message| abpsynth::Error::Parse {
        path: a.input.clone(),
        message,
    })?;
    let title = a.title.unwrap_or_else(|| {
        a.input
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("overlay")
            .to_string()
    });
    let svg = overlay_svg(
        &title,
        "ABP",
        &[
            Series {
                label: "reference",
                values: &reference,
                color: "#1f3a93",
                dashed: false,
            },
            Series {
                label: "synthesized",
                values: &synthesized,
                color: "#c0392b",
                dashed: true,
            },
        ],
    );
    let out = ctx.out.clone().unwrap_or_else(|| a.input.with_extension("svg"));
    write_file(&out, svg)?;
    println!("{}", out.display());
    Ok(())
}
