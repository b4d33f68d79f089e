//! The joint training loss in its convex-combination and ambiguity forms,
//! and its gradient with respect to member logits.
//!
//! Batch arguments are matrices with one row per example: `targets` holds
//! mean parameters (one-hot rows or a real column) and each entry of
//! `member_logits` holds one member's natural parameters. All losses are
//! averaged over the batch.

use ndarray::{Array2, ArrayView2, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expfam::{softmax_into, DistributionFamily};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointLossConfig {
    lambda: f64,
    members: usize,
}

impl JointLossConfig {
    /// λ must lie in [0, 1]; values above 1 make the stationary point a
    /// saddle and are only explored in [`crate::analysis`].
    pub fn new(lambda: f64, members: usize) -> Result<Self> {
        if !(0.0..=1.0).contains(&lambda) {
            return Err(Error::InvalidConfig(format!("lambda must lie in [0, 1], got {lambda}")));
        }
        if members == 0 {
            return Err(Error::InvalidConfig("ensemble needs at least one member".into()));
        }
        Ok(JointLossConfig { lambda, members })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn members(&self) -> usize {
        self.members
    }
}

/// Batch-mean divergence terms of the ambiguity decomposition.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossTerms {
    /// mean over examples of D(p || q̄)
    pub ensemble_kl: f64,
    /// mean over examples of (1/M) Σ_j D(p || q_j)
    pub avg_member_kl: f64,
    /// mean over examples of (1/M) Σ_j D(q̄ || q_j)
    pub diversity: f64,
}

impl LossTerms {
    /// λ·D(p||q̄) + (1−λ)·avg
    pub fn convex_form(&self, lambda: f64) -> f64 {
        lambda * self.ensemble_kl + (1.0 - lambda) * self.avg_member_kl
    }

    /// avg − λ·diversity
    pub fn ambiguity_form(&self, lambda: f64) -> f64 {
        self.avg_member_kl - lambda * self.diversity
    }

    pub fn residual(&self) -> f64 {
        (self.ensemble_kl - (self.avg_member_kl - self.diversity)).abs()
    }
}

/// Per-member and ensemble predictions for one batch.
#[derive(Debug, Clone)]
pub struct BatchPredictions {
    pub family: DistributionFamily,
    /// Mean parameters of each member.
    pub member_means: Vec<Array2<f64>>,
    /// Log mean parameters (log-softmax) of each member; unused for Gaussian.
    member_log_means: Vec<Array2<f64>>,
    pub ensemble_logits: Array2<f64>,
    pub ensemble_means: Array2<f64>,
    ensemble_log_means: Array2<f64>,
}

fn log_softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        row.mapv_inplace(|v| v - lse);
    }
    out
}

fn inverse_link_rows(family: DistributionFamily, logits: &Array2<f64>) -> Array2<f64> {
    match family {
        DistributionFamily::Categorical { .. } => {
            let mut out = Array2::zeros(logits.raw_dim());
            for (src, mut dst) in logits.rows().into_iter().zip(out.rows_mut()) {
                softmax_into(
                    src.as_slice().expect("standard layout"),
                    dst.as_slice_mut().expect("standard layout"),
                );
            }
            out
        }
        DistributionFamily::GaussianUnitVariance => logits.clone(),
    }
}

/// Elementwise mean of member logits, accumulated in member order.
pub fn mean_logits<'a, I>(members: I, count: usize) -> Array2<f64>
where
    I: IntoIterator<Item = &'a Array2<f64>>,
{
    let mut iter = members.into_iter();
    let mut acc = iter.next().expect("at least one member").to_owned();
    for m in iter {
        acc += m;
    }
    let scale = count as f64;
    acc.mapv_inplace(|v| v / scale);
    acc
}

impl BatchPredictions {
    pub fn new(family: DistributionFamily, member_logits: &[Array2<f64>]) -> Result<Self> {
        Self::build(family, member_logits, true)
    }

    /// Mean parameters only; enough for [`Self::grad_logits`] but not for
    /// [`Self::loss_terms`].
    pub fn for_gradient(family: DistributionFamily, member_logits: &[Array2<f64>]) -> Result<Self> {
        Self::build(family, member_logits, false)
    }

    fn build(family: DistributionFamily, member_logits: &[Array2<f64>], logs: bool) -> Result<Self> {
        let first = member_logits.first().ok_or(Error::Empty("member logits"))?;
        let dim = first.dim();
        if dim.1 != family.arity() {
            return Err(Error::ShapeMismatch(format!(
                "logits have {} columns, family expects {}",
                dim.1,
                family.arity()
            )));
        }
        for (j, l) in member_logits.iter().enumerate() {
            if l.dim() != dim {
                return Err(Error::ShapeMismatch(format!(
                    "member {j} logits are {:?}, member 0 logits are {dim:?}",
                    l.dim()
                )));
            }
            if l.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("logits of member {j}")));
            }
        }
        let ensemble_logits = mean_logits(member_logits, member_logits.len());
        let categorical = family.is_categorical() && logs;
        Ok(BatchPredictions {
            family,
            member_means: member_logits.iter().map(|l| inverse_link_rows(family, l)).collect(),
            member_log_means: if categorical {
                member_logits.iter().map(log_softmax_rows).collect()
            } else {
                Vec::new()
            },
            ensemble_means: inverse_link_rows(family, &ensemble_logits),
            ensemble_log_means: if categorical {
                log_softmax_rows(&ensemble_logits)
            } else {
                Array2::zeros((0, 0))
            },
            ensemble_logits,
        })
    }

    pub fn members(&self) -> usize {
        self.member_means.len()
    }

    pub fn rows(&self) -> usize {
        self.ensemble_logits.nrows()
    }

    /// D(p || member j) for example `i`.
    fn member_kl(&self, targets: ArrayView2<f64>, i: usize, j: usize) -> f64 {
        match self.family {
            DistributionFamily::Categorical { .. } => {
                kl_from_log(targets.row(i).iter(), self.member_log_means[j].row(i).iter())
            }
            DistributionFamily::GaussianUnitVariance => {
                let d = targets[[i, 0]] - self.member_means[j][[i, 0]];
                0.5 * d * d
            }
        }
    }

    fn ensemble_kl(&self, targets: ArrayView2<f64>, i: usize) -> f64 {
        match self.family {
            DistributionFamily::Categorical { .. } => {
                kl_from_log(targets.row(i).iter(), self.ensemble_log_means.row(i).iter())
            }
            DistributionFamily::GaussianUnitVariance => {
                let d = targets[[i, 0]] - self.ensemble_means[[i, 0]];
                0.5 * d * d
            }
        }
    }

    /// D(q̄ || member j) for example `i`.
    fn diversity(&self, i: usize, j: usize) -> f64 {
        match self.family {
            DistributionFamily::Categorical { .. } => {
                let q_bar = self.ensemble_means.row(i);
                let log_bar = self.ensemble_log_means.row(i);
                let log_j = self.member_log_means[j].row(i);
                let mut acc = 0.0;
                for k in 0..q_bar.len() {
                    acc += q_bar[k] * (log_bar[k] - log_j[k]);
                }
                acc
            }
            DistributionFamily::GaussianUnitVariance => {
                let d = self.ensemble_means[[i, 0]] - self.member_means[j][[i, 0]];
                0.5 * d * d
            }
        }
    }

    pub fn loss_terms(&self, targets: ArrayView2<f64>) -> Result<LossTerms> {
        self.check_targets(targets)?;
        if self.family.is_categorical() && self.member_log_means.is_empty() {
            return Err(Error::InvalidConfig("predictions were built for gradients only".into()));
        }
        let n = self.rows();
        if n == 0 {
            return Err(Error::Empty("batch"));
        }
        let m = self.members() as f64;
        let mut terms = LossTerms::default();
        for i in 0..n {
            let mut avg = 0.0;
            let mut div = 0.0;
            for j in 0..self.members() {
                avg += self.member_kl(targets, i, j);
                div += self.diversity(i, j);
            }
            terms.avg_member_kl += avg / m;
            terms.diversity += div / m;
            terms.ensemble_kl += self.ensemble_kl(targets, i);
        }
        let n = n as f64;
        terms.avg_member_kl /= n;
        terms.diversity /= n;
        terms.ensemble_kl /= n;
        Ok(terms)
    }

    fn check_targets(&self, targets: ArrayView2<f64>) -> Result<()> {
        if targets.dim() != self.ensemble_logits.dim() {
            return Err(Error::ShapeMismatch(format!(
                "targets are {:?}, predictions are {:?}",
                targets.dim(),
                self.ensemble_logits.dim()
            )));
        }
        Ok(())
    }

    /// Gradient of the batch-mean joint loss with respect to each member's
    /// logits: (1/M)((1−λ)q_j + λq̄ − p), divided by the batch size.
    pub fn grad_logits(&self, targets: ArrayView2<f64>, lambda: f64) -> Result<Vec<Array2<f64>>> {
        self.check_targets(targets)?;
        let scale = 1.0 / (self.members() * self.rows()).max(1) as f64;
        Ok(self
            .member_means
            .iter()
            .map(|q| {
                let mut g = Array2::zeros(q.raw_dim());
                Zip::from(&mut g)
                    .and(q)
                    .and(&self.ensemble_means)
                    .and(targets)
                    .for_each(|g, &qj, &qbar, &p| {
                        *g = ((1.0 - lambda) * qj + lambda * qbar - p) * scale;
                    });
                g
            })
            .collect())
    }
}

fn kl_from_log<'a>(
    p: impl Iterator<Item = &'a f64>,
    log_q: impl Iterator<Item = &'a f64>,
) -> f64 {
    let mut acc = 0.0;
    for (&pk, &lq) in p.zip(log_q) {
        if pk > 0.0 {
            acc += pk * (pk.ln() - lq);
        }
    }
    acc
}

fn prepare(
    family: DistributionFamily,
    targets: ArrayView2<f64>,
    member_logits: &[Array2<f64>],
    cfg: &JointLossConfig,
) -> Result<BatchPredictions> {
    if member_logits.len() != cfg.members() {
        return Err(Error::InvalidConfig(format!(
            "configured for {} members, got {}",
            cfg.members(),
            member_logits.len()
        )));
    }
    let preds = BatchPredictions::new(family, member_logits)?;
    preds.check_targets(targets)?;
    Ok(preds)
}

/// λ·D(p || q̄) + (1−λ)·(1/M) Σ_j D(p || q_j), batch mean.
pub fn joint_loss(
    family: DistributionFamily,
    targets: ArrayView2<f64>,
    member_logits: &[Array2<f64>],
    cfg: &JointLossConfig,
) -> Result<f64> {
    let preds = prepare(family, targets, member_logits, cfg)?;
    let n = preds.rows();
    if n == 0 {
        return Err(Error::Empty("batch"));
    }
    let m = cfg.members() as f64;
    let lambda = cfg.lambda();
    let mut total = 0.0;
    for i in 0..n {
        let mut avg = 0.0;
        for j in 0..preds.members() {
            avg += preds.member_kl(targets, i, j);
        }
        total += lambda * preds.ensemble_kl(targets, i) + (1.0 - lambda) * (avg / m);
    }
    Ok(total / n as f64)
}

/// (1/M) Σ_j D(p || q_j) − (λ/M) Σ_j D(q̄ || q_j), batch mean.
pub fn joint_loss_ambiguity(
    family: DistributionFamily,
    targets: ArrayView2<f64>,
    member_logits: &[Array2<f64>],
    cfg: &JointLossConfig,
) -> Result<f64> {
    let preds = prepare(family, targets, member_logits, cfg)?;
    let n = preds.rows();
    if n == 0 {
        return Err(Error::Empty("batch"));
    }
    let m = cfg.members() as f64;
    let lambda = cfg.lambda();
    let mut total = 0.0;
    for i in 0..n {
        let mut avg = 0.0;
        let mut div = 0.0;
        for j in 0..preds.members() {
            avg += preds.member_kl(targets, i, j);
            div += preds.diversity(i, j);
        }
        total += avg / m - lambda * div / m;
    }
    Ok(total / n as f64)
}

pub fn joint_loss_grad_logits(
    family: DistributionFamily,
    targets: ArrayView2<f64>,
    member_logits: &[Array2<f64>],
    cfg: &JointLossConfig,
) -> Result<Vec<Array2<f64>>> {
    prepare(family, targets, member_logits, cfg)?.grad_logits(targets, cfg.lambda())
}
