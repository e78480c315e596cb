//! Waveform records, their on-disk formats, synthetic corpora and
//! deterministic dataset splits.
//!
//! Two formats are supported:
//!
//! * **CSV**: a `ppg,abp` header followed by one sample pair per row, with a
//!   sidecar `<stem>.json` holding `{ "fs": .., "subject_id": .. }`.
//! * **CLB1**: the magic `CLB1`, little-endian `u32` sample count, `u32`
//!   sampling rate, then the PPG samples and the ABP samples as `f32`.
//!
//! A dataset directory additionally carries `manifest.json` listing its files.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::spectral;

pub const CLB1_MAGIC: &[u8; 4] = b"CLB1";
pub const DATASET_MANIFEST: &str = "manifest.json";

/// One synchronized PPG + ABP recording.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Record {
    /// PPG samples, arbitrary units.
    pub ppg: Vec<f64>,
    /// ABP samples in mmHg.
    pub abp: Vec<f64>,
    /// Sampling rate in Hz.
    pub fs: f64,
    pub subject_id: String,
}

impl Record {
    pub fn new(ppg: Vec<f64>, abp: Vec<f64>, fs: f64, subject_id: impl Into<String>) -> Result<Self> {
        let r = Record {
            ppg,
            abp,
            fs,
            subject_id: subject_id.into(),
        };
        r.validate()?;
        Ok(r)
    }

    pub fn len(&self) -> usize {
        self.ppg.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ppg.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.ppg.len() != self.abp.len() {
            return Err(Error::validation(format!(
                "record {}: ppg has {} samples but abp has {}",
                self.subject_id,
                self.ppg.len(),
                self.abp.len()
            )));
        }
        if self.ppg.is_empty() {
            return Err(Error::validation(format!(
                "record {} is empty",
                self.subject_id
            )));
        }
        if !(self.fs > 0.0 && self.fs.is_finite()) {
            return Err(Error::validation(format!(
                "record {}: sampling rate must be positive, got {}",
                self.subject_id, self.fs
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    #[default]
    Clb1,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Clb1 => "clb1",
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CsvSidecar {
    fs: f64,
    subject_id: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub subject_id: String,
    pub fs: f64,
    pub len: usize,
}

/// Directory-level listing written next to saved records.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format: Format,
    pub records: Vec<ManifestEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticConfig>,
}

/// Loads records from a single file or from every matching file in a directory.
pub fn load_records(path: &Path, format: Format) -> Result<Vec<Record>> {
    if !path.exists() {
        return Err(Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "path does not exist"),
        ));
    }
    if path.is_file() {
        return Ok(vec![load_file(path, format, None)?]);
    }
    let manifest_path = path.join(DATASET_MANIFEST);
    if manifest_path.is_file() {
        let manifest: DatasetManifest = read_json(&manifest_path)?;
        if manifest.format != format {
            return Err(Error::validation(format!(
                "{} declares format {:?}, requested {:?}",
                manifest_path.display(),
                manifest.format,
                format
            )));
        }
        return manifest
            .records
            .iter()
            .map(|e| load_file(&path.join(&e.file), format, Some(&e.subject_id)))
            .collect();
    }
    let mut files: Vec<PathBuf> = fs::read_dir(path)
        .map_err(|e| Error::io(path, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().and_then(|e| e.to_str()) == Some(format.extension()))
        .collect();
    files.sort();
    files.iter().map(|f| load_file(f, format, None)).collect()
}

fn load_file(path: &Path, format: Format, subject: Option<&str>) -> Result<Record> {
    let record = match format {
        Format::Csv => read_csv(path)?,
        Format::Clb1 => {
            let mut r = read_clb1(path)?;
            if let Some(s) = subject {
                r.subject_id = s.to_string();
            }
            r
        }
    };
    record.validate()?;
    Ok(record)
}

fn file_stem(path: &Path) -> String {
    path.file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("record")
        .to_string()
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

fn read_csv(path: &Path) -> Result<Record> {
    let sidecar_path = path.with_extension("json");
    let sidecar: CsvSidecar = read_json(&sidecar_path)?;
    let parse_err = |line: u64, message: String| Error::Parse {
        path: path.to_path_buf(),
        message: format!("line {line}: {message}"),
    };

    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| parse_err(1, e.to_string()))?;
    let headers = reader
        .headers()
        .map_err(|e| parse_err(1, e.to_string()))?
        .clone();
    let col = |name: &str| headers.iter().position(|h| h.eq_ignore_ascii_case(name));
    let (ppg_col, abp_col) = match (col("ppg"), col("abp")) {
        (Some(p), Some(a)) => (p, a),
        _ => {
            return Err(parse_err(
                1,
                format!("expected header with ppg,abp columns, found {headers:?}"),
            ))
        }
    };

    let mut ppg = Vec::new();
    let mut abp = Vec::new();
    let mut ppg_ended = false;
    let mut abp_ended = false;
    for row in reader.records() {
        let row = row.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(line, e.to_string())
        })?;
        let line = row.position().map_or(0, |p| p.line());
        let field = |idx: usize, ended: &mut bool, out: &mut Vec<f64>, name: &str| -> Result<()> {
            match row.get(idx).filter(|s| !s.is_empty()) {
                Some(text) => {
                    if *ended {
                        return Err(parse_err(line, format!("{name} value after a missing entry")));
                    }
                    let v: f64 = text
                        .parse()
                        .map_err(|_| parse_err(line, format!("invalid {name} value {text:?}")))?;
                    out.push(v);
                }
                None => *ended = true,
            }
            Ok(())
        };
        field(ppg_col, &mut ppg_ended, &mut ppg, "ppg")?;
        field(abp_col, &mut abp_ended, &mut abp, "abp")?;
    }
    Record::new(ppg, abp, sidecar.fs, sidecar.subject_id)
}

fn read_clb1(path: &Path) -> Result<Record> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let parse_err = |offset: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        message: format!("offset {offset}: {message}"),
    };
    if bytes.len() < 12 {
        return Err(parse_err(0, format!("file is {} bytes, header needs 12", bytes.len())));
    }
    if &bytes[0..4] != CLB1_MAGIC {
        return Err(parse_err(0, "missing CLB1 magic".into()));
    }
    let count = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let fs_hz = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    let expected = 12 + 8 * count;
    if bytes.len() != expected {
        return Err(parse_err(
            bytes.len().min(expected),
            format!("sample count {count} implies {expected} bytes, file has {}", bytes.len()),
        ));
    }
    let samples = |start: usize| -> Vec<f64> {
        bytes[start..start + 4 * count]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect()
    };
    let ppg = samples(12);
    let abp = samples(12 + 4 * count);
    Ok(Record {
        ppg,
        abp,
        fs: fs_hz as f64,
        subject_id: file_stem(path),
    })
}

/// Encodes one record as CLB1 bytes. Samples are narrowed to `f32`.
pub fn encode_clb1(record: &Record) -> Result<Vec<u8>> {
    record.validate()?;
    if record.fs.fract() != 0.0 || record.fs > u32::MAX as f64 {
        return Err(Error::validation(format!(
            "CLB1 stores an integer sampling rate, got {}",
            record.fs
        )));
    }
    let count = u32::try_from(record.len())
        .map_err(|_| Error::validation("record too long for CLB1"))?;
    let mut out = Vec::with_capacity(12 + 8 * record.len());
    out.extend_from_slice(CLB1_MAGIC);
    out.extend_from_slice(&count.to_le_bytes());
    out.extend_from_slice(&(record.fs as u32).to_le_bytes());
    for v in record.ppg.iter().chain(&record.abp) {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    Ok(out)
}

pub(crate) fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_csv(path: &Path, record: &Record) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(w, "ppg,abp").map_err(io)?;
    for (p, a) in record.ppg.iter().zip(&record.abp) {
        writeln!(w, "{p},{a}").map_err(io)?;
    }
    w.flush().map_err(io)?;
    let sidecar = CsvSidecar {
        fs: record.fs,
        subject_id: record.subject_id.clone(),
    };
    write_bytes(
        &path.with_extension("json"),
        serde_json::to_string_pretty(&sidecar)?.as_bytes(),
    )
}

/// Writes `records` into directory `dir` as `rec_NNNN.<ext>` plus a dataset manifest.
pub fn save_records(records: &[Record], dir: &Path, format: Format) -> Result<DatasetManifest> {
    save_records_with(records, dir, format, None)
}

pub(crate) fn save_records_with(
    records: &[Record],
    dir: &Path,
    format: Format,
    synthetic: Option<SyntheticConfig>,
) -> Result<DatasetManifest> {
    for r in records {
        r.validate()?;
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::with_capacity(records.len());
    for (i, r) in records.iter().enumerate() {
        let file = format!("rec_{i:04}.{}", format.extension());
        let path = dir.join(&file);
        match format {
            Format::Csv => write_csv(&path, r)?,
            Format::Clb1 => write_bytes(&path, &encode_clb1(r)?)?,
        }
        entries.push(ManifestEntry {
            file,
            subject_id: r.subject_id.clone(),
            fs: r.fs,
            len: r.len(),
        });
    }
    let manifest = DatasetManifest {
        format,
        records: entries,
        synthetic,
    };
    write_bytes(
        &dir.join(DATASET_MANIFEST),
        serde_json::to_string_pretty(&manifest)?.as_bytes(),
    )?;
    Ok(manifest)
}

/// How synthetic ABP is derived from synthetic PPG.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mapping {
    /// PPG shape rescaled to span exactly [80, 120] mmHg.
    Identity,
    /// A fixed full-rank linear map on the leading DCT coefficients; see [`LinearDctMap`].
    LinearDct,
    /// A fixed monotone cubic reshaping, rescaled to [80, 120] mmHg.
    HarmonicReshape,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub n_records: usize,
    pub record_len: usize,
    pub heart_rate_hz: f64,
    pub noise_std: f64,
    pub mapping: Mapping,
    pub seed: u64,
    #[serde(default = "default_fs")]
    pub fs: f64,
    #[serde(default = "default_segment_len")]
    pub segment_len: usize,
}

fn default_fs() -> f64 {
    125.0
}

fn default_segment_len() -> usize {
    250
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            n_records: 64,
            record_len: 1000,
            heart_rate_hz: 1.2,
            noise_std: 0.0,
            mapping: Mapping::LinearDct,
            seed: 7,
            fs: default_fs(),
            segment_len: default_segment_len(),
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_records == 0 {
            return Err(Error::validation("n_records must be at least 1"));
        }
        if self.segment_len < 2 || self.record_len < 2 * self.segment_len {
            return Err(Error::validation(format!(
                "record_len {} must be at least twice the segment length {}",
                self.record_len, self.segment_len
            )));
        }
        if !(0.5..=3.0).contains(&self.heart_rate_hz) {
            return Err(Error::validation(format!(
                "heart_rate_hz {} outside [0.5, 3.0]",
                self.heart_rate_hz
            )));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::validation("noise_std must be finite and non-negative"));
        }
        if !(self.fs > 0.0 && self.fs.is_finite()) {
            return Err(Error::validation("fs must be positive"));
        }
        Ok(())
    }

    /// Harmonics in the pulse model: as many as fit under 8 Hz, clamped to 2..=4.
    pub fn n_harmonics(&self) -> usize {
        ((8.0 / self.heart_rate_hz).floor() as usize).clamp(2, 4)
    }
}

/// Ground-truth linear map for [`Mapping::LinearDct`] corpora.
///
/// Acts on the orthonormal DCT-II of a whole record:
/// `abp_dct[..keep] = matrix · ppg_dct[..keep]`, `abp_dct[0] += offset_mmhg · √N`,
/// every other coefficient zero.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearDctMap {
    pub record_len: usize,
    pub keep: usize,
    pub matrix: Matrix,
    pub offset_mmhg: f64,
}

const LINEAR_DCT_CUTOFF_HZ: f64 = 10.0;
const LINEAR_DCT_SCALE_MMHG: f64 = 12.0;
const ABP_CENTER_MMHG: f64 = 100.0;

impl LinearDctMap {
    /// The map used by [`generate_synthetic_pair`] for this configuration.
    pub fn for_config(config: &SyntheticConfig) -> Self {
        let n = config.record_len;
        let keep = ((2.0 * n as f64 * LINEAR_DCT_CUTOFF_HZ / config.fs).ceil() as usize).clamp(1, n);
        let mut matrix = Matrix::zeros(keep, keep);
        for k in 0..keep {
            // DCT-II index k sits at k·fs/(2N) Hz.
            let f = k as f64 * config.fs / (2.0 * n as f64);
            matrix[(k, k)] = LINEAR_DCT_SCALE_MMHG * spectral_gain(f);
        }
        LinearDctMap {
            record_len: n,
            keep,
            matrix,
            offset_mmhg: ABP_CENTER_MMHG,
        }
    }

    /// Maps a full-length PPG coefficient vector to ABP coefficients.
    pub fn apply(&self, ppg_dct: &[f64]) -> Result<Vec<f64>> {
        if ppg_dct.len() != self.record_len {
            return Err(Error::validation(format!(
                "map expects {} coefficients, got {}",
                self.record_len,
                ppg_dct.len()
            )));
        }
        let mut out = vec![0.0; self.record_len];
        for (i, o) in out.iter_mut().take(self.keep).enumerate() {
            *o = crate::linalg::dot(self.matrix.row(i), &ppg_dct[..self.keep]);
        }
        out[0] += self.offset_mmhg * (self.record_len as f64).sqrt();
        Ok(out)
    }
}

/// Smooth, strictly positive frequency response used by the linear-dct mapping.
fn spectral_gain(f_hz: f64) -> f64 {
    1.0 + 0.5 * (-((f_hz - 3.0) / 1.2).powi(2)).exp() - 0.02 * f_hz
}

const BASE_AMPLITUDES: [f64; 4] = [1.0, 0.55, 0.3, 0.15];
const BASE_PHASES: [f64; 4] = [0.0, -0.9, -1.7, -2.4];

fn rescale_to(wave: &[f64], lo: f64, hi: f64) -> Vec<f64> {
    let min = wave.iter().copied().fold(f64::INFINITY, f64::min);
    let max = wave.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = max - min;
    if span == 0.0 {
        return vec![(lo + hi) / 2.0; wave.len()];
    }
    wave.iter()
        .map(|v| {
            // pin the extremes exactly
            if *v == max {
                hi
            } else if *v == min {
                lo
            } else {
                lo + (hi - lo) * (v - min) / span
            }
        })
        .collect()
}

/// Generates `config.n_records` synthetic PPG/ABP records. Deterministic in `config.seed`.
pub fn generate_synthetic_pair(config: &SyntheticConfig) -> Result<Vec<Record>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let noise = Normal::new(0.0, config.noise_std.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::validation(e.to_string()))?;
    let harmonics = config.n_harmonics();
    let linear_map = match config.mapping {
        Mapping::LinearDct => Some(LinearDctMap::for_config(config)),
        _ => None,
    };

    let mut records = Vec::with_capacity(config.n_records);
    for r in 0..config.n_records {
        let shift: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let amps: Vec<f64> = BASE_AMPLITUDES[..harmonics]
            .iter()
            .map(|a| a * (1.0 + 0.05 * rng.random_range(-1.0..1.0)))
            .collect();
        let w0 = std::f64::consts::TAU * config.heart_rate_hz / config.fs;
        let mut ppg: Vec<f64> = (0..config.record_len)
            .map(|i| {
                (0..harmonics)
                    .map(|h| {
                        let order = (h + 1) as f64;
                        amps[h] * (order * (w0 * i as f64 + shift) + BASE_PHASES[h]).cos()
                    })
                    .sum()
            })
            .collect();
        if config.noise_std > 0.0 {
            for v in ppg.iter_mut() {
                *v += noise.sample(&mut rng);
            }
        }

        let abp = match config.mapping {
            Mapping::Identity => rescale_to(&ppg, 80.0, 120.0),
            Mapping::HarmonicReshape => {
                let unit = rescale_to(&ppg, 0.0, 1.0);
                let shaped: Vec<f64> = unit
                    .iter()
                    .map(|u| u + 0.35 * u * u - 0.25 * u * u * u)
                    .collect();
                rescale_to(&shaped, 80.0, 120.0)
            }
            Mapping::LinearDct => {
                let map = linear_map.as_ref().expect("map built for linear-dct");
                spectral::idct(&map.apply(&spectral::dct2(&ppg)?)?)?
            }
        };
        records.push(Record::new(ppg, abp, config.fs, format!("synth-{r:04}"))?);
    }
    Ok(records)
}

/// Writes a synthetic corpus, recording its configuration in the manifest.
pub fn save_synthetic(
    records: &[Record],
    config: &SyntheticConfig,
    dir: &Path,
    format: Format,
) -> Result<DatasetManifest> {
    save_records_with(records, dir, format, Some(config.clone()))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios {
            train: 0.72,
            val: 0.08,
            test: 0.20,
        }
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::validation("split ratios must be finite and non-negative"));
        }
        let sum: f64 = parts.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::validation(format!("split ratios sum to {sum}, not 1")));
        }
        Ok(())
    }

    /// `(train, val, test)` sizes: val and test are floored, train takes the remainder.
    pub fn sizes(&self, n: usize) -> (usize, usize, usize) {
        let floor = |r: f64| ((n as f64) * r + 1e-9).floor() as usize;
        let val = floor(self.val).min(n);
        let test = floor(self.test).min(n - val);
        (n - val - test, val, test)
    }
}

/// Shuffles `items` with `seed` and partitions them into train, validation and test.
pub fn split_dataset<T>(items: Vec<T>, ratios: SplitRatios, seed: u64) -> Result<(Vec<T>, Vec<T>, Vec<T>)> {
    ratios.validate()?;
    if items.is_empty() {
        return Err(Error::validation("cannot split an empty dataset"));
    }
    let (n_train, n_val, _) = ratios.sizes(items.len());
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let mut slots: Vec<Option<T>> = items.into_iter().map(Some).collect();
    let mut take = |idx: &[usize]| -> Vec<T> {
        idx.iter().map(|&i| slots[i].take().expect("index used once")).collect()
    };
    let train = take(&order[..n_train]);
    let val = take(&order[n_train..n_train + n_val]);
    let test = take(&order[n_train + n_val..]);
    Ok((train, val, test))
}
