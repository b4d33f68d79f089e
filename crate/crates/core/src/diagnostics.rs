//! Behavioral instruments: the early model-dominance check, member-dropping
//! robustness curves and the per-epoch loss decomposition.

use std::io::Write;

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Labels, Split};
use crate::error::{Error, Result};
use crate::jointtrain::model::{prediction_error, EnsembleModel};
use crate::jointtrain::trace::TrainingTrace;
use crate::seeds::derive_seed;

pub const DEFAULT_PROBE_EPOCH: usize = 3;
pub const DEFAULT_DOMINANCE_THRESHOLD: f64 = 0.5;
pub const DEFAULT_REPEATS: usize = 20;
pub const DECOMPOSITION_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DominanceReport {
    pub probe_epoch: usize,
    pub threshold: f64,
    pub member_errors_at_probe: Vec<f64>,
    /// min / median of the probe-epoch member errors; 1 when the median is 0.
    pub dominance_ratio: f64,
    pub flagged: bool,
    pub probe_best_member: usize,
    pub end_of_training_best_member: usize,
}

impl DominanceReport {
    pub fn probe_predicts_end(&self) -> bool {
        self.probe_best_member == self.end_of_training_best_member
    }
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn argmin(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v < values[best] {
            best = i;
        }
    }
    best
}

/// Ratio of the best member's error to the median member error.
pub fn dominance_ratio(errors: &[f64]) -> f64 {
    let med = median(errors);
    if med <= 0.0 {
        return 1.0;
    }
    let min = errors.iter().copied().fold(f64::INFINITY, f64::min);
    (min / med).clamp(0.0, 1.0)
}

/// Inspects per-member training errors at `probe_epoch`. The end-of-training
/// best member is ranked by test error when the trace has it, otherwise by
/// training error.
pub fn detect_dominance(trace: &TrainingTrace, probe_epoch: usize, threshold: f64) -> Result<DominanceReport> {
    let members = trace.members();
    if members < 2 {
        return Err(Error::Undefined(format!(
            "dominance needs at least two members, trace has {members}"
        )));
    }
    let probe = trace
        .records
        .iter()
        .find(|r| r.epoch == probe_epoch)
        .ok_or_else(|| Error::InvalidConfig(format!("trace has no epoch {probe_epoch}")))?;
    let last = trace.last().ok_or(Error::Empty("training trace"))?;
    let end_errors = if last.member_test_err.iter().all(|e| e.is_finite()) {
        &last.member_test_err
    } else {
        &last.member_train_err
    };
    let errors = probe.member_train_err.clone();
    let ratio = dominance_ratio(&errors);
    Ok(DominanceReport {
        probe_epoch,
        threshold,
        dominance_ratio: ratio,
        flagged: ratio < threshold,
        probe_best_member: argmin(&errors),
        end_of_training_best_member: argmin(end_errors),
        member_errors_at_probe: errors,
    })
}

pub fn write_dominance_csv<W: Write>(report: &DominanceReport, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "probe_epoch",
        "threshold",
        "dominance_ratio",
        "flagged",
        "probe_best_member",
        "end_of_training_best_member",
        "member_errors_at_probe",
    ])?;
    let errors: Vec<String> = report.member_errors_at_probe.iter().map(f64::to_string).collect();
    w.write_record([
        report.probe_epoch.to_string(),
        report.threshold.to_string(),
        report.dominance_ratio.to_string(),
        report.flagged.to_string(),
        report.probe_best_member.to_string(),
        report.end_of_training_best_member.to_string(),
        errors.join(";"),
    ])?;
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessCurve {
    pub keep_counts: Vec<usize>,
    pub mean_error: Vec<f64>,
    /// Standard error of the mean across repeats.
    pub std_error: Vec<f64>,
    pub repeats: usize,
}

impl RobustnessCurve {
    pub fn error_at(&self, keep: usize) -> Option<(f64, f64)> {
        self.keep_counts
            .iter()
            .position(|&m| m == keep)
            .map(|i| (self.mean_error[i], self.std_error[i]))
    }
}

/// Sorted uniform draw of `keep` distinct member indices out of `members`.
pub fn sample_members(members: usize, keep: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picks = index::sample(&mut rng, members, keep).into_vec();
    picks.sort_unstable();
    picks
}

/// Seed for the subset used on `example` in `repeat` at keep count `keep`.
pub fn subset_seed(seed: u64, keep: usize, example: usize, repeat: usize) -> u64 {
    derive_seed(seed, &[keep as u64, example as u64, repeat as u64])
}

fn subset_logits(member_logits: &[Array2<f64>], row: usize, picks: &[usize]) -> Vec<f64> {
    let mut acc = member_logits[picks[0]].row(row).to_vec();
    for &j in &picks[1..] {
        for (a, &v) in acc.iter_mut().zip(member_logits[j].row(row)) {
            *a += v;
        }
    }
    let scale = picks.len() as f64;
    acc.iter_mut().for_each(|a| *a /= scale);
    acc
}

/// Error when each test example is predicted by a fresh random subset of
/// `m` members, averaged over `repeats` passes, for every `m` in
/// `keep_counts`.
pub fn robustness_curve(
    ensemble: &EnsembleModel,
    test: &Split,
    keep_counts: &[usize],
    repeats: usize,
    seed: u64,
) -> Result<RobustnessCurve> {
    let members = ensemble.len();
    if keep_counts.is_empty() {
        return Err(Error::Empty("keep counts"));
    }
    if repeats == 0 {
        return Err(Error::InvalidConfig("repeats must be positive".into()));
    }
    if let Some(&bad) = keep_counts.iter().find(|&&m| m == 0 || m > members) {
        return Err(Error::InvalidConfig(format!(
            "keep count {bad} outside 1..={members}"
        )));
    }
    if test.is_empty() {
        return Err(Error::Empty("test split"));
    }
    let logits = ensemble.member_logits(test.features.view())?;
    let n = test.len();
    let k = ensemble.family().arity();
    let mut mean_error = Vec::with_capacity(keep_counts.len());
    let mut std_error = Vec::with_capacity(keep_counts.len());
    for &m in keep_counts {
        let errors: Vec<f64> = (0..repeats)
            .map(|r| {
                let mut combined = Array2::zeros((n, k));
                for (i, mut out) in combined.axis_iter_mut(Axis(0)).enumerate() {
                    let picks = sample_members(members, m, subset_seed(seed, m, i, r));
                    for (o, v) in out.iter_mut().zip(subset_logits(&logits, i, &picks)) {
                        *o = v;
                    }
                }
                prediction_error(&combined, &test.labels)
            })
            .collect();
        let mean = errors.iter().sum::<f64>() / repeats as f64;
        let se = if repeats > 1 {
            let var = errors.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (repeats - 1) as f64;
            (var / repeats as f64).sqrt()
        } else {
            0.0
        };
        mean_error.push(mean);
        std_error.push(se);
    }
    Ok(RobustnessCurve {
        keep_counts: keep_counts.to_vec(),
        mean_error,
        std_error,
        repeats,
    })
}

pub fn write_robustness_csv<W: Write>(curve: &RobustnessCurve, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["keep_count", "mean_error", "std_error", "repeats"])?;
    for ((m, e), s) in curve.keep_counts.iter().zip(&curve.mean_error).zip(&curve.std_error) {
        w.write_record([m.to_string(), e.to_string(), s.to_string(), curve.repeats.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecompositionSeries {
    pub epochs: Vec<usize>,
    pub ensemble_kl: Vec<f64>,
    pub avg_member_kl: Vec<f64>,
    pub diversity: Vec<f64>,
    pub max_residual: f64,
}

/// The trace's divergence columns, after checking
/// ensemble_kl = avg_member_kl − diversity at every epoch.
pub fn decomposition_trace(trace: &TrainingTrace) -> Result<DecompositionSeries> {
    let mut series = DecompositionSeries {
        epochs: Vec::new(),
        ensemble_kl: Vec::new(),
        avg_member_kl: Vec::new(),
        diversity: Vec::new(),
        max_residual: 0.0,
    };
    for r in &trace.records {
        let residual = (r.ensemble_kl - (r.avg_member_kl - r.diversity)).abs();
        if residual.is_nan() || residual >= DECOMPOSITION_TOLERANCE {
            return Err(Error::Undefined(format!(
                "decomposition residual {residual:e} at epoch {}",
                r.epoch
            )));
        }
        series.max_residual = series.max_residual.max(residual);
        series.epochs.push(r.epoch);
        series.ensemble_kl.push(r.ensemble_kl);
        series.avg_member_kl.push(r.avg_member_kl);
        series.diversity.push(r.diversity);
    }
    Ok(series)
}

/// Error of each member and of the full ensemble on `features`; a helper for
/// callers that want the m = 1 and m = M ends without sampling.
pub fn member_and_ensemble_errors(
    ensemble: &EnsembleModel,
    features: ArrayView2<f64>,
    labels: &Labels,
) -> Result<(Vec<f64>, f64)> {
    let logits = ensemble.member_logits(features)?;
    let members = logits.iter().map(|l| prediction_error(l, labels)).collect();
    let combined = crate::jointtrain::loss::mean_logits(&logits, logits.len());
    Ok((members, prediction_error(&combined, labels)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ratio_examples() {
        assert_eq!(dominance_ratio(&[0.3, 0.3, 0.3, 0.3]), 1.0);
        let r = dominance_ratio(&[0.05, 0.85, 0.88, 0.90]);
        assert!((r - 0.05 / 0.865).abs() < 1e-12);
        assert_eq!(dominance_ratio(&[0.0, 0.0, 0.0]), 1.0);
    }

    #[test]
    fn subsets_sorted_distinct() {
        for s in 0..50 {
            let p = sample_members(8, 5, s);
            assert_eq!(p.len(), 5);
            assert!(p.windows(2).all(|w| w[0] < w[1]));
            assert!(p.iter().all(|&j| j < 8));
        }
        assert_eq!(sample_members(4, 4, 9), vec![0, 1, 2, 3]);
    }
}
