//! `abpsynth`: data generation, preprocessing, training, evaluation and grading
//! for PPG-to-ABP waveform synthesis.
//!
//! Exit codes: 0 success, 1 evaluation failure, 2 invalid input or missing
//! files, 3 empty segment corpus, 4 training failure, 5 parameter-count mismatch.

mod commands;
mod config;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use abpsynth::dataio::{Format, Mapping};
use abpsynth::eval::{Aggregation, DenormMode};
use abpsynth::fdreg::RidgeKind;
use abpsynth::nn::LossKind;
use abpsynth::preprocess::{Split, SplitLevel};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;

/// Parses a kebab-case enum through its serde representation.
fn parse_kebab<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|e| e.to_string())
}

#[derive(Parser, Debug)]
#[command(name = "abpsynth", version, about = "PPG-to-ABP waveform synthesis toolkit")]
pub struct Cli {
    /// TOML or JSON run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for synthesis, splitting, initialization, shuffling and dropout.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory (or file, for grade, param-count and plot).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Record file format: csv or clb1.
    #[arg(long, global = true, value_parser = parse_kebab::<Format>)]
    pub format: Option<Format>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic PPG/ABP record set.
    SynthData(SynthArgs),
    /// Filter, screen, detrend, align, segment and normalize records into a corpus.
    Preprocess(PreprocessArgs),
    /// Fit the frequency-domain ridge model with a lambda sweep.
    TrainFd(TrainFdArgs),
    /// Train the encoder-decoder transformer.
    TrainTx(TrainTxArgs),
    /// Synthesize ABP for a corpus split and score it.
    Evaluate(EvaluateArgs),
    /// AAMI and BHS grading of a list of signed errors (mmHg).
    Grade(GradeArgs),
    /// Per-layer transformer parameter counts.
    ParamCount(ParamCountArgs),
    /// Render a reference/synthesized CSV as an SVG overlay.
    Plot(PlotArgs),
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Number of records.
    #[arg(long)]
    pub n: Option<usize>,
    /// Samples per record.
    #[arg(long)]
    pub len: Option<usize>,
    /// identity, linear-dct or harmonic-reshape.
    #[arg(long, value_parser = parse_kebab::<Mapping>)]
    pub mapping: Option<Mapping>,
    #[arg(long)]
    pub heart_rate: Option<f64>,
    /// Standard deviation of additive noise on both channels.
    #[arg(long)]
    pub noise: Option<f64>,
}

#[derive(Args, Debug)]
pub struct PreprocessArgs {
    /// Record file or directory.
    #[arg(long, default_value = "data")]
    pub data: PathBuf,
    /// record or segment.
    #[arg(long, value_parser = parse_kebab::<SplitLevel>)]
    pub split_level: Option<SplitLevel>,
    /// Window stride in samples; 0 means non-overlapping.
    #[arg(long)]
    pub stride: Option<usize>,
    /// Skip cross-correlation alignment.
    #[arg(long)]
    pub no_align: bool,
}

#[derive(Args, Debug)]
pub struct TrainFdArgs {
    #[arg(long, default_value = "corpus")]
    pub corpus: PathBuf,
    /// linear or kernel-rbf.
    #[arg(long, value_parser = parse_kebab::<RidgeKind>)]
    pub kind: Option<RidgeKind>,
    #[arg(long)]
    pub bandwidth: Option<f64>,
    /// Comma-separated regularization strengths.
    #[arg(long, value_delimiter = ',')]
    pub lambda_grid: Option<Vec<f64>>,
}

#[derive(Args, Debug)]
pub struct TrainTxArgs {
    #[arg(long, default_value = "corpus")]
    pub corpus: PathBuf,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// mae or mse.
    #[arg(long, value_parser = parse_kebab::<LossKind>)]
    pub loss: Option<LossKind>,
    /// Use at most this many training segments.
    #[arg(long)]
    pub max_train: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModelKind {
    /// `.bin` means transformer weights, anything else a ridge model.
    Auto,
    Fd,
    Tx,
    /// Echo the reference ABP; a perfect model for smoke tests.
    Reference,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[arg(long, default_value = "corpus")]
    pub corpus: PathBuf,
    /// Ridge model JSON, transformer weights `.bin`, or a directory holding one.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = ModelKind::Auto)]
    pub model_kind: ModelKind,
    /// train, val or test.
    #[arg(long, value_parser = parse_kebab::<Split>, default_value = "test")]
    pub split: Split,
    /// reference-stats or normalized.
    #[arg(long, value_parser = parse_kebab::<DenormMode>)]
    pub denorm_mode: Option<DenormMode>,
    /// per-segment or per-subject.
    #[arg(long, value_parser = parse_kebab::<Aggregation>)]
    pub aggregation: Option<Aggregation>,
    /// Write this many overlay plots (SVG plus CSV).
    #[arg(long)]
    pub plot: Option<usize>,
}

#[derive(Args, Debug)]
pub struct GradeArgs {
    /// File of signed errors: a JSON array or numbers separated by whitespace or commas.
    #[arg(long)]
    pub errors: PathBuf,
}

#[derive(Args, Debug)]
pub struct ParamCountArgs {
    #[arg(long)]
    pub seq_len: Option<usize>,
    #[arg(long)]
    pub d_model: Option<usize>,
    #[arg(long)]
    pub num_heads: Option<usize>,
    #[arg(long)]
    pub key_dim: Option<usize>,
    #[arg(long)]
    pub ff_dim: Option<usize>,
    #[arg(long)]
    pub num_blocks: Option<usize>,
    /// Exit with code 5 unless every row matches the reference architecture table.
    #[arg(long)]
    pub check_table1: bool,
}

#[derive(Args, Debug)]
pub struct PlotArgs {
    /// CSV with columns sample,reference,synthesized.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub title: Option<String>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code())
        }
    }
}
