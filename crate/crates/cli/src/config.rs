//! Run configuration: every module's settings in one TOML or JSON document.

use std::path::Path;

use abpsynth::dataio::{Format, SplitRatios, SyntheticConfig};
use abpsynth::eval::{Aggregation, DenormMode};
use abpsynth::fdreg::{RidgeKind, DEFAULT_LAMBDA_GRID};
use abpsynth::nn::{TrainConfig, TransformerConfig};
use abpsynth::preprocess::{PreprocessConfig, SplitLevel};
use abpsynth::spectral::SpectralConfig;
use abpsynth::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FdConfig {
    pub kind: RidgeKind,
    /// RBF bandwidth; unset means the median pairwise distance.
    pub bandwidth: Option<f64>,
    pub lambda_grid: Vec<f64>,
}

impl Default for FdConfig {
    fn default() -> Self {
        FdConfig {
            kind: RidgeKind::Linear,
            bandwidth: None,
            lambda_grid: DEFAULT_LAMBDA_GRID.to_vec(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub denorm_mode: DenormMode,
    pub aggregation: Aggregation,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Drives synthesis, splitting, initialization, shuffling and dropout.
    pub seed: u64,
    pub format: Format,
    pub synthetic: SyntheticConfig,
    pub preprocess: PreprocessConfig,
    pub split: SplitRatios,
    pub split_level: SplitLevel,
    pub spectral: SpectralConfig,
    pub fd: FdConfig,
    pub transformer: TransformerConfig,
    pub train: TrainConfig,
    /// Caps the transformer training set; unset uses every training segment.
    pub max_train_segments: Option<usize>,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 7,
            format: Format::Clb1,
            synthetic: SyntheticConfig::default(),
            preprocess: PreprocessConfig::default(),
            split: SplitRatios::default(),
            split_level: SplitLevel::Record,
            spectral: SpectralConfig::default(),
            fd: FdConfig::default(),
            transformer: TransformerConfig::default(),
            train: TrainConfig::default(),
            max_train_segments: None,
            eval: EvalConfig::default(),
        }
    }
}

impl RunConfig {
    /// Reads a `.toml` or `.json` file; other extensions are rejected.
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            message,
        };
        match path.extension().and_then(|e| e.to_str()) {
            Some("toml") => toml::from_str(&text).map_err(|e| parse_err(e.to_string())),
            Some("json") => serde_json::from_str(&text).map_err(|e| parse_err(e.to_string())),
            _ => Err(Error::Validation(format!(
                "config {} must end in .toml or .json",
                path.display()
            ))),
        }
    }

    /// Copies the top-level seed into every seeded sub-config.
    pub fn apply_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.synthetic.seed = seed;
        self.train.seed = seed;
    }

    pub fn validate(&self) -> Result<()> {
        self.synthetic.validate()?;
        self.split.validate()?;
        self.spectral.validate()?;
        self.transformer.validate()?;
        self.train.validate()?;
        let seg = self.preprocess.segment_len;
        if seg != self.spectral.q || seg != self.transformer.seq_len {
            return Err(Error::Validation(format!(
                "segment length {seg}, spectral Q {} and transformer seq_len {} must agree",
                self.spectral.q, self.transformer.seq_len
            )));
        }
        if self.synthetic.segment_len != seg {
            return Err(Error::Validation(format!(
                "synthetic segment_len {} differs from preprocess segment_len {seg}",
                self.synthetic.segment_len
            )));
        }
        if self.fd.lambda_grid.is_empty() {
            return Err(Error::Validation("fd.lambda_grid is empty".into()));
        }
        if let Some(l) = self.fd.lambda_grid.iter().find(|l| !(**l >= 0.0 && l.is_finite())) {
            return Err(Error::Validation(format!("fd.lambda_grid contains {l}")));
        }
        if let Some(h) = self.fd.bandwidth {
            if !(h > 0.0 && h.is_finite()) {
                return Err(Error::Validation(format!("fd.bandwidth must be positive, got {h}")));
            }
        }
        if self.max_train_segments == Some(0) {
            return Err(Error::Validation("max_train_segments must be positive".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_consistent() {
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn mismatched_lengths_rejected() {
        let mut c = RunConfig::default();
        c.transformer.seq_len = 200;
        assert!(c.validate().is_err());
        let mut c = RunConfig::default();
        c.spectral.q = 128;
        assert!(c.validate().is_err());
    }

    #[test]
    fn partial_toml_fills_defaults() {
        let c: RunConfig = toml::from_str("seed = 3\n[train]\nepochs = 1\n[transformer]\nnum_blocks = 2\n").unwrap();
        assert_eq!(c.seed, 3);
        assert_eq!(c.train.epochs, 1);
        assert_eq!(c.train.batch_size, 128);
        assert_eq!(c.transformer.num_blocks, 2);
        assert_eq!(c.transformer.num_heads, 4);
        assert!(toml::from_str::<RunConfig>("bogus = 1").is_err());
    }
}
