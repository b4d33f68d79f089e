use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use jointens::data::DatasetBundle;
use jointens::diagnostics::{detect_dominance, robustness_curve, write_dominance_csv, write_robustness_csv, DominanceReport, RobustnessCurve};
use jointens::jointtrain::{evaluate, train, EnsembleCheckpoint, EnsembleModel, Evaluation, JointLossConfig, Schedule, TrainingTrace};
use jointens::{Error, Result};

use crate::config::ExperimentConfig;

pub const SUMMARY_FILE: &str = "summary.csv";
pub const ROBUSTNESS_SUMMARY_FILE: &str = "robustness_summary.csv";
pub const MANIFEST_FILE: &str = "sweep.json";

/// Writes `bytes` to a temporary file beside `path` and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

/// SHA-256 of the resolved config, ignoring settings that cannot change
/// results (output location and parallelism).
pub fn config_hash(cfg: &ExperimentConfig) -> Result<String> {
    let mut canonical = cfg.clone();
    canonical.resolve();
    canonical.output_dir = PathBuf::new();
    canonical.parallelism = 1;
    let digest = Sha256::digest(serde_json::to_vec(&canonical)?);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunKey {
    pub lambda: f64,
    pub learning_rate: f64,
    pub seed: u64,
}

impl RunKey {
    pub fn dir_name(&self) -> String {
        format!("lambda{}_lr{}_seed{}", self.lambda, self.learning_rate, self.seed)
    }
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub key: RunKey,
    pub model: EnsembleModel,
    pub trace: TrainingTrace,
    pub test: Evaluation,
    pub dominance: Option<DominanceReport>,
    pub robustness: Option<RobustnessCurve>,
}

impl RunResult {
    /// Error used to rank learning rates: validation error at the kept epoch,
    /// or final training error when there is no validation split.
    pub fn selection_error(&self) -> f64 {
        let best = self.trace.best().expect("kept epoch is recorded");
        if best.ensemble_val_err.is_finite() {
            best.ensemble_val_err
        } else {
            best.ensemble_train_err
        }
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut csv = Vec::new();
        self.trace.write_csv(&mut csv)?;
        write_atomic(&dir.join("trace.csv"), &csv)?;
        write_json(&dir.join("trace.json"), &self.trace)?;
        write_json(&dir.join("test.json"), &self.test)?;
        if let Some(d) = &self.dominance {
            let mut out = Vec::new();
            write_dominance_csv(d, &mut out)?;
            write_atomic(&dir.join("dominance.csv"), &out)?;
        }
        if let Some(r) = &self.robustness {
            let mut out = Vec::new();
            write_robustness_csv(r, &mut out)?;
            write_atomic(&dir.join("robustness.csv"), &out)?;
        }
        Ok(())
    }

    pub fn write_checkpoint(&self, path: &Path) -> Result<()> {
        write_json(path, &EnsembleCheckpoint::capture(&self.model, Some(self.key.seed)))
    }
}

/// Trains one ensemble and runs every diagnostic on it.
pub fn run_one(cfg: &ExperimentConfig, data: &DatasetBundle, key: RunKey) -> Result<RunResult> {
    let specs = cfg.specs(data.input_dim(), data.family.arity());
    let init = EnsembleModel::init(data.family, &specs, cfg.members, key.seed)?;
    let loss = JointLossConfig::new(key.lambda, cfg.members)?;
    let out = train(init, data, loss, cfg.sgd(key.learning_rate), Schedule::new(cfg.epochs, key.seed), key.seed)?;
    let test = evaluate(&out.model, &data.test)?;
    let dominance = if cfg.members >= 2 && cfg.probe_epoch <= cfg.epochs {
        Some(detect_dominance(&out.trace, cfg.probe_epoch, cfg.dominance_threshold)?)
    } else {
        None
    };
    let robustness = if data.test.is_empty() {
        None
    } else {
        Some(robustness_curve(&out.model, &data.test, &cfg.keep_counts(), cfg.robustness_repeats, key.seed)?)
    };
    Ok(RunResult {
        key,
        model: out.model,
        trace: out.trace,
        test,
        dominance,
        robustness,
    })
}

/// Loads the data source and splits it once per seed.
pub fn prepare_datasets(cfg: &ExperimentConfig) -> Result<Vec<(u64, DatasetBundle)>> {
    let (raw, test) = cfg.data.load()?;
    cfg.seeds
        .iter()
        .map(|&s| Ok((s, cfg.dataset(&raw, test.as_ref(), s)?)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedRun {
    pub key: RunKey,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaChoice {
    pub lambda: f64,
    /// `None` when every run for this λ failed.
    pub learning_rate: Option<f64>,
    pub selection_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepManifest {
    pub config_hash: String,
    pub config: ExperimentConfig,
    pub choices: Vec<LambdaChoice>,
    pub failures: Vec<FailedRun>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SweepStatus {
    Completed(SweepManifest),
    /// A finished sweep with the same config hash was already present.
    UpToDate(SweepManifest),
}

impl SweepStatus {
    pub fn manifest(&self) -> &SweepManifest {
        match self {
            SweepStatus::Completed(m) | SweepStatus::UpToDate(m) => m,
        }
    }
}

pub fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, f64::NAN);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

pub const SUMMARY_HEADER: [&str; 18] = [
    "lambda",
    "learning_rate",
    "runs",
    "failed",
    "test_err_mean",
    "test_err_se",
    "member_test_err_mean",
    "member_test_err_se",
    "test_kl_mean",
    "test_kl_se",
    "ensemble_kl_mean",
    "ensemble_kl_se",
    "avg_member_kl_mean",
    "avg_member_kl_se",
    "diversity_mean",
    "diversity_se",
    "dominance_flag_rate",
    "best_epoch_mean",
];

fn summary_row(choice: &LambdaChoice, runs: &[&RunResult], failed: usize) -> Vec<String> {
    let stat = |f: &dyn Fn(&RunResult) -> f64| -> [String; 2] {
        let values: Vec<f64> = runs.iter().map(|r| f(r)).collect();
        let (m, se) = mean_and_se(&values);
        [m.to_string(), se.to_string()]
    };
    let last = |r: &RunResult| r.trace.last().cloned().expect("trace has records");
    let mut row = vec![
        choice.lambda.to_string(),
        choice.learning_rate.map_or_else(|| "NaN".into(), |lr| lr.to_string()),
        runs.len().to_string(),
        failed.to_string(),
    ];
    row.extend(stat(&|r| r.test.error_rate));
    row.extend(stat(&|r| {
        r.test.per_member_errors.iter().sum::<f64>() / r.test.per_member_errors.len() as f64
    }));
    row.extend(stat(&|r| r.test.mean_kl));
    row.extend(stat(&|r| last(r).ensemble_kl));
    row.extend(stat(&|r| last(r).avg_member_kl));
    row.extend(stat(&|r| last(r).diversity));
    let probed: Vec<bool> = runs.iter().filter_map(|r| r.dominance.as_ref().map(|d| d.flagged)).collect();
    row.push(if probed.is_empty() {
        "NaN".into()
    } else {
        (probed.iter().filter(|&&f| f).count() as f64 / probed.len() as f64).to_string()
    });
    row.push(mean_and_se(&runs.iter().map(|r| r.trace.best_epoch as f64).collect::<Vec<_>>()).0.to_string());
    row
}

fn to_csv(header: &[&str], rows: &[Vec<String>]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

fn read_manifest(dir: &Path) -> Option<SweepManifest> {
    let text = std::fs::read_to_string(dir.join(MANIFEST_FILE)).ok()?;
    serde_json::from_str(&text).ok()
}

/// Runs every (λ, learning rate, seed) combination, keeps the learning rate
/// with the lowest mean selection error for each λ, and writes per-run
/// artifacts plus summaries under `cfg.output_dir`. `verbatim` is the config
/// text as supplied, stored beside the resolved form.
pub fn run_sweep(cfg: &ExperimentConfig, verbatim: Option<&str>) -> Result<SweepStatus> {
    cfg.validate()?;
    let hash = config_hash(cfg)?;
    let out = cfg.output_dir.clone();
    if let Some(m) = read_manifest(&out) {
        if m.config_hash == hash && out.join(SUMMARY_FILE).exists() {
            return Ok(SweepStatus::UpToDate(m));
        }
    }
    let datasets = prepare_datasets(cfg)?;
    let mut jobs: Vec<(RunKey, &DatasetBundle)> = Vec::new();
    for &lambda in &cfg.lambdas {
        for &learning_rate in cfg.learning_rates() {
            for (seed, data) in &datasets {
                jobs.push((
                    RunKey {
                        lambda,
                        learning_rate,
                        seed: *seed,
                    },
                    data,
                ));
            }
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.parallelism)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("cannot start worker pool: {e}")))?;
    let results: Vec<std::result::Result<RunResult, FailedRun>> = pool.install(|| {
        jobs.par_iter()
            .map(|(key, data)| {
                run_one(cfg, data, *key).map_err(|e| FailedRun {
                    key: *key,
                    error: e.to_string(),
                })
            })
            .collect()
    });

    let runs_dir = out.join("runs");
    let mut failures = Vec::new();
    for r in &results {
        match r {
            Ok(run) => run.write(&runs_dir.join(run.key.dir_name()))?,
            Err(f) => failures.push(f.clone()),
        }
    }

    let mut choices = Vec::new();
    let mut summary = Vec::new();
    let mut robustness_rows = Vec::new();
    for &lambda in &cfg.lambdas {
        let ok_for = |lr: f64| -> Vec<&RunResult> {
            results
                .iter()
                .filter_map(|r| r.as_ref().ok())
                .filter(|r| r.key.lambda == lambda && r.key.learning_rate == lr)
                .collect()
        };
        let mut choice = LambdaChoice {
            lambda,
            learning_rate: None,
            selection_error: f64::NAN,
        };
        for &lr in cfg.learning_rates() {
            let runs = ok_for(lr);
            if runs.is_empty() {
                continue;
            }
            let err = runs.iter().map(|r| r.selection_error()).sum::<f64>() / runs.len() as f64;
            if choice.learning_rate.is_none() || err < choice.selection_error {
                choice.learning_rate = Some(lr);
                choice.selection_error = err;
            }
        }
        let chosen = choice.learning_rate.map(ok_for).unwrap_or_default();
        let failed = cfg.seeds.len() - chosen.len();
        summary.push(summary_row(&choice, &chosen, failed));
        for keep in cfg.keep_counts() {
            let errs: Vec<f64> = chosen
                .iter()
                .filter_map(|r| r.robustness.as_ref().and_then(|c| c.error_at(keep)).map(|(m, _)| m))
                .collect();
            let (m, se) = mean_and_se(&errs);
            robustness_rows.push(vec![lambda.to_string(), keep.to_string(), errs.len().to_string(), m.to_string(), se.to_string()]);
        }
        choices.push(choice);
    }

    write_atomic(&out.join(SUMMARY_FILE), &to_csv(&SUMMARY_HEADER, &summary)?)?;
    write_atomic(
        &out.join(ROBUSTNESS_SUMMARY_FILE),
        &to_csv(&["lambda", "keep", "runs", "test_err_mean", "test_err_se"], &robustness_rows)?,
    )?;
    if let Some(text) = verbatim {
        write_atomic(&out.join("config.json"), text.as_bytes())?;
    }
    let mut resolved = cfg.clone();
    resolved.resolve();
    write_json(&out.join("resolved_config.json"), &resolved)?;
    let manifest = SweepManifest {
        config_hash: hash,
        config: resolved,
        choices,
        failures,
    };
    write_json(&out.join(MANIFEST_FILE), &manifest)?;
    Ok(SweepStatus::Completed(manifest))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_error() {
        let (m, se) = mean_and_se(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        // sample variance 5/3, divided by 4
        assert!((se - (5.0f64 / 12.0).sqrt()).abs() < 1e-15);
        assert!(mean_and_se(&[1.0]).1.is_nan());
        assert!(mean_and_se(&[]).0.is_nan());
    }

    #[test]
    fn atomic_write_replaces() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a/b.txt");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), b"two");
        assert_eq!(std::fs::read_dir(p.parent().unwrap()).unwrap().count(), 1);
    }
}
