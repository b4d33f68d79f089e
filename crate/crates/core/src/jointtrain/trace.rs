use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::data::Provenance;
use crate::error::Result;
use crate::net::SgdConfig;

use super::loss::JointLossConfig;
use super::trainer::Schedule;

/// Metrics after one epoch. Divergence terms are measured on the full
/// training split; errors are misclassification rates (MSE for real targets).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lambda: f64,
    pub ensemble_kl: f64,
    pub avg_member_kl: f64,
    pub diversity: f64,
    pub ensemble_train_err: f64,
    pub ensemble_val_err: f64,
    pub ensemble_test_err: f64,
    pub member_train_err: Vec<f64>,
    pub member_test_err: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub seed: u64,
    pub loss: JointLossConfig,
    pub sgd: SgdConfig,
    pub schedule: Schedule,
    pub init: String,
    pub member_param_counts: Vec<usize>,
    pub data: Option<Provenance>,
    pub wall_clock_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingTrace {
    /// Record 0 is the untrained ensemble.
    pub records: Vec<EpochRecord>,
    /// Epoch whose parameters were kept (lowest validation error, earliest
    /// on ties; the last epoch when there is no validation split).
    pub best_epoch: usize,
    pub manifest: RunManifest,
}

impl TrainingTrace {
    pub fn members(&self) -> usize {
        self.manifest.loss.members()
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }

    pub fn best(&self) -> Option<&EpochRecord> {
        self.records.iter().find(|r| r.epoch == self.best_epoch)
    }

    pub fn csv_header(members: usize) -> Vec<String> {
        let mut h: Vec<String> = [
            "epoch",
            "lambda",
            "ensemble_kl",
            "avg_member_kl",
            "diversity",
            "ensemble_train_err",
            "ensemble_val_err",
            "ensemble_test_err",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        h.extend((0..members).map(|j| format!("member_train_err_{j}")));
        h.extend((0..members).map(|j| format!("member_test_err_{j}")));
        h
    }

    /// One row per epoch with the stable column set from [`Self::csv_header`].
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(Self::csv_header(self.members()))?;
        for r in &self.records {
            let mut row = vec![
                r.epoch.to_string(),
                r.lambda.to_string(),
                r.ensemble_kl.to_string(),
                r.avg_member_kl.to_string(),
                r.diversity.to_string(),
                r.ensemble_train_err.to_string(),
                r.ensemble_val_err.to_string(),
                r.ensemble_test_err.to_string(),
            ];
            row.extend(r.member_train_err.iter().map(f64::to_string));
            row.extend(r.member_test_err.iter().map(f64::to_string));
            w.write_record(row)?;
        }
        w.flush()?;
        Ok(())
    }
}
