use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use jointens::data::{load_csv, load_idx, make_synthetic, split_and_normalize, DatasetBundle, RawDataset, SplitConfig, SyntheticKind};
use jointens::diagnostics::{DEFAULT_DOMINANCE_THRESHOLD, DEFAULT_PROBE_EPOCH, DEFAULT_REPEATS};
use jointens::net::{mlp_specs, LayerSpec, SgdConfig};
use jointens::{Error, Result};

/// Learning rates tried per λ when the config does not fix one.
pub const LEARNING_RATE_GRID: [f64; 4] = [0.3, 0.1, 0.03, 0.01];

/// Environment variable that replaces the configured output directory.
pub const OUTPUT_DIR_ENV: &str = "JOINTENS_OUTPUT_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "format", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Idx {
        images: PathBuf,
        labels: PathBuf,
        #[serde(default)]
        test_images: Option<PathBuf>,
        #[serde(default)]
        test_labels: Option<PathBuf>,
    },
    Csv {
        path: PathBuf,
        label_column: String,
        #[serde(default = "yes")]
        categorical: bool,
        #[serde(default)]
        test_path: Option<PathBuf>,
    },
    Synthetic {
        kind: SyntheticKind,
        rows: usize,
        #[serde(default)]
        seed: u64,
    },
}

fn yes() -> bool {
    true
}

impl DataSource {
    /// Training pool and optional predefined test set.
    pub fn load(&self) -> Result<(RawDataset, Option<RawDataset>)> {
        match self {
            DataSource::Idx {
                images,
                labels,
                test_images,
                test_labels,
            } => {
                let test = match (test_images, test_labels) {
                    (Some(i), Some(l)) => Some(load_idx(i, l)?),
                    (None, None) => None,
                    _ => {
                        return Err(Error::InvalidConfig(
                            "test_images and test_labels must be given together".into(),
                        ))
                    }
                };
                Ok((load_idx(images, labels)?, test))
            }
            DataSource::Csv {
                path,
                label_column,
                categorical,
                test_path,
            } => {
                let test = test_path
                    .as_deref()
                    .map(|p| load_csv(p, label_column, *categorical))
                    .transpose()?;
                Ok((load_csv(path, label_column, *categorical)?, test))
            }
            DataSource::Synthetic { kind, rows, seed } => Ok((make_synthetic(kind, *rows, *seed)?, None)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub members: usize,
    pub hidden: Vec<usize>,
    pub lambdas: Vec<f64>,
    #[serde(default)]
    pub learning_rates: Option<Vec<f64>>,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default)]
    pub weight_decay: f64,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    pub epochs: usize,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    pub data: DataSource,
    #[serde(default)]
    pub validation_count: usize,
    #[serde(default)]
    pub test_count: usize,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    #[serde(default = "default_probe_epoch")]
    pub probe_epoch: usize,
    #[serde(default = "default_threshold")]
    pub dominance_threshold: f64,
    #[serde(default = "default_repeats")]
    pub robustness_repeats: usize,
    /// Member counts kept in the robustness curve; all of 1..=M by default.
    #[serde(default)]
    pub keep_counts: Option<Vec<usize>>,
}

fn default_momentum() -> f64 {
    0.9
}

fn default_batch_size() -> usize {
    100
}

fn default_seeds() -> Vec<u64> {
    (0..5).collect()
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

fn default_parallelism() -> usize {
    1
}

fn default_probe_epoch() -> usize {
    DEFAULT_PROBE_EPOCH
}

fn default_threshold() -> f64 {
    DEFAULT_DOMINANCE_THRESHOLD
}

fn default_repeats() -> usize {
    DEFAULT_REPEATS
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let mut cfg: ExperimentConfig = serde_json::from_str(text)?;
        cfg.resolve();
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<(Self, String)> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidConfig(format!("cannot read {}: {e}", path.display())))?;
        Ok((Self::from_json(&text)?, text))
    }

    /// Fills every optional field so the serialized form is complete.
    pub fn resolve(&mut self) {
        if self.learning_rates.is_none() {
            self.learning_rates = Some(LEARNING_RATE_GRID.to_vec());
        }
        if self.keep_counts.is_none() {
            self.keep_counts = Some((1..=self.members).collect());
        }
    }

    pub fn apply_env(&mut self) {
        if let Some(dir) = std::env::var_os(OUTPUT_DIR_ENV) {
            self.output_dir = PathBuf::from(dir);
        }
    }

    pub fn learning_rates(&self) -> &[f64] {
        self.learning_rates.as_deref().unwrap_or(&LEARNING_RATE_GRID)
    }

    pub fn keep_counts(&self) -> Vec<usize> {
        self.keep_counts.clone().unwrap_or_else(|| (1..=self.members).collect())
    }

    pub fn sgd(&self, learning_rate: f64) -> SgdConfig {
        SgdConfig {
            learning_rate,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
            batch_size: self.batch_size,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.members == 0 {
            return bad("members must be at least 1".into());
        }
        if self.hidden.contains(&0) {
            return bad("hidden layer widths must be positive".into());
        }
        if self.lambdas.is_empty() {
            return bad("lambdas is empty".into());
        }
        if let Some(l) = self.lambdas.iter().find(|l| !(0.0..=1.0).contains(*l)) {
            return bad(format!("lambda {l} outside [0, 1]"));
        }
        let lrs = self.learning_rates();
        if lrs.is_empty() || lrs.iter().any(|lr| !(lr.is_finite() && *lr > 0.0)) {
            return bad("learning rates must be positive and finite".into());
        }
        for lr in lrs {
            self.sgd(*lr).validate()?;
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.seeds.is_empty() {
            return bad("seeds is empty".into());
        }
        if self.parallelism == 0 {
            return bad("parallelism must be at least 1".into());
        }
        if self.robustness_repeats == 0 {
            return bad("robustness_repeats must be at least 1".into());
        }
        if !(self.dominance_threshold > 0.0 && self.dominance_threshold <= 1.0) {
            return bad("dominance_threshold must lie in (0, 1]".into());
        }
        if self.keep_counts().iter().any(|&k| k == 0 || k > self.members) {
            return bad(format!("keep counts must lie in 1..={}", self.members));
        }
        Ok(())
    }

    pub fn specs(&self, input: usize, output: usize) -> Vec<LayerSpec> {
        mlp_specs(input, &self.hidden, output)
    }

    pub fn split(&self, seed: u64) -> SplitConfig {
        SplitConfig {
            validation_count: self.validation_count,
            test_count: self.test_count,
            seed,
        }
    }

    pub fn dataset(&self, raw: &RawDataset, test: Option<&RawDataset>, seed: u64) -> Result<DatasetBundle> {
        split_and_normalize(raw, test, raw.family()?, &self.split(seed))
    }
}
