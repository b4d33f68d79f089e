//! Exponential-family plumbing: link functions, KL divergences, the
//! logit-averaging ensemble combiner and the ambiguity decomposition.
//!
//! Two families are supported. For `Categorical` the natural parameters are
//! logits and the mean parameters are class probabilities (softmax link). For
//! `GaussianUnitVariance` both are the scalar mean (identity link).
//!
//! All vector arguments are mean parameters unless the name says logits.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DistributionFamily {
    Categorical { classes: usize },
    GaussianUnitVariance,
}

impl DistributionFamily {
    pub fn categorical(classes: usize) -> Result<Self> {
        if classes < 2 {
            return Err(Error::InvalidConfig(format!(
                "categorical family needs at least 2 classes, got {classes}"
            )));
        }
        Ok(DistributionFamily::Categorical { classes })
    }

    /// Length of a natural- or mean-parameter vector for this family.
    pub fn arity(&self) -> usize {
        match *self {
            DistributionFamily::Categorical { classes } => classes,
            DistributionFamily::GaussianUnitVariance => 1,
        }
    }

    pub fn is_categorical(&self) -> bool {
        matches!(self, DistributionFamily::Categorical { .. })
    }

    /// Unchecked inverse link, writing mean parameters into `out`.
    #[inline]
    pub fn inverse_link_into(&self, eta: &[f64], out: &mut [f64]) {
        match self {
            DistributionFamily::Categorical { .. } => softmax_into(eta, out),
            DistributionFamily::GaussianUnitVariance => out.copy_from_slice(eta),
        }
    }

    /// Unchecked divergence D(p || q) between mean-parameter vectors.
    ///
    /// Returns `f64::INFINITY` when q puts zero mass where p does not.
    #[inline]
    pub fn divergence(&self, p: &[f64], q: &[f64]) -> f64 {
        match self {
            DistributionFamily::Categorical { .. } => categorical_kl(p, q),
            DistributionFamily::GaussianUnitVariance => {
                let d = p[0] - q[0];
                0.5 * d * d
            }
        }
    }
}

/// Natural parameters of a single prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogitVector(Vec<f64>);

impl LogitVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Empty("logit vector"));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("logit vector entry {i}")));
        }
        Ok(LogitVector(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

/// A categorical distribution. Entries may be exactly zero (one-hot targets);
/// predictions produced by softmax never are.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    pub const SUM_TOLERANCE: f64 = 1e-12;

    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Empty("probability vector"));
        }
        for (i, &v) in values.iter().enumerate() {
            if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidConfig(format!(
                    "probability entry {i} = {v} outside [0, 1]"
                )));
            }
        }
        let sum: f64 = values.iter().sum();
        if (sum - 1.0).abs() > Self::SUM_TOLERANCE * values.len().max(1) as f64 {
            return Err(Error::InvalidConfig(format!(
                "probabilities sum to {sum}, not 1"
            )));
        }
        Ok(ProbVector(values))
    }

    pub fn one_hot(classes: usize, hot: usize) -> Result<Self> {
        if hot >= classes {
            return Err(Error::InvalidConfig(format!(
                "class {hot} out of range for {classes} classes"
            )));
        }
        let mut v = vec![0.0; classes];
        v[hot] = 1.0;
        Ok(ProbVector(v))
    }

    pub fn uniform(classes: usize) -> Self {
        ProbVector(vec![1.0 / classes as f64; classes])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn strictly_positive(&self) -> bool {
        self.0.iter().all(|&v| v > 0.0)
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

/// Max-shifted softmax.
#[inline]
pub fn softmax_into(eta: &[f64], out: &mut [f64]) {
    let max = eta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for (o, &e) in out.iter_mut().zip(eta) {
        *o = (e - max).exp();
        z += *o;
    }
    for o in out.iter_mut() {
        *o /= z;
    }
}

/// Σ p_k ln(p_k / q_k) with 0·ln 0 = 0.
#[inline]
pub fn categorical_kl(p: &[f64], q: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (&pk, &qk) in p.iter().zip(q) {
        if pk > 0.0 {
            if qk <= 0.0 {
                return f64::INFINITY;
            }
            acc += pk * (pk / qk).ln();
        }
    }
    acc
}

fn check_finite(values: &[f64], what: &str) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::NonFinite(format!("{what} entry {i}"))),
        None => Ok(()),
    }
}

fn check_arity(family: DistributionFamily, len: usize) -> Result<()> {
    if len != family.arity() {
        return Err(Error::LengthMismatch {
            expected: family.arity(),
            found: len,
        });
    }
    Ok(())
}

/// Mean parameters from natural parameters: softmax or identity.
pub fn inverse_link(family: DistributionFamily, eta: &LogitVector) -> Result<Vec<f64>> {
    check_arity(family, eta.len())?;
    check_finite(eta.as_slice(), "logits")?;
    let mut out = vec![0.0; eta.len()];
    family.inverse_link_into(eta.as_slice(), &mut out);
    Ok(out)
}

/// Natural parameters from mean parameters. For the categorical family this
/// is the log-probability representative of the shift-equivalence class.
pub fn link(family: DistributionFamily, mean: &[f64]) -> Result<LogitVector> {
    check_arity(family, mean.len())?;
    check_finite(mean, "mean parameters")?;
    match family {
        DistributionFamily::Categorical { .. } => {
            if let Some(index) = mean.iter().position(|&p| p <= 0.0) {
                return Err(Error::ZeroProbability { index });
            }
            LogitVector::new(mean.iter().map(|p| p.ln()).collect())
        }
        DistributionFamily::GaussianUnitVariance => LogitVector::new(mean.to_vec()),
    }
}

/// D(p || q). Categorical: Σ p ln(p/q); Gaussian: ½(μ_p − μ_q)², constants
/// dropped. An infinite divergence is returned as `f64::INFINITY`.
pub fn kl_divergence(family: DistributionFamily, p: &[f64], q: &[f64]) -> Result<f64> {
    check_arity(family, p.len())?;
    check_arity(family, q.len())?;
    check_finite(p, "target")?;
    check_finite(q, "prediction")?;
    Ok(family.divergence(p, q))
}

/// Elementwise mean of member logits.
pub fn combine_logits(members: &[LogitVector]) -> Result<LogitVector> {
    let first = members.first().ok_or(Error::Empty("member logits"))?;
    let k = first.len();
    let mut acc = vec![0.0; k];
    for m in members {
        if m.len() != k {
            return Err(Error::LengthMismatch {
                expected: k,
                found: m.len(),
            });
        }
        for (a, &v) in acc.iter_mut().zip(m.as_slice()) {
            *a += v;
        }
    }
    let scale = members.len() as f64;
    for a in &mut acc {
        *a /= scale;
    }
    LogitVector::new(acc)
}

/// Normalized geometric mean Z⁻¹ ∏ q_j^{1/M}, evaluated in log space.
pub fn geometric_mean_combine(members: &[ProbVector]) -> Result<ProbVector> {
    let first = members.first().ok_or(Error::Empty("member distributions"))?;
    let k = first.len();
    let inv_m = 1.0 / members.len() as f64;
    let mut log_prod = vec![0.0; k];
    for m in members {
        if m.len() != k {
            return Err(Error::LengthMismatch {
                expected: k,
                found: m.len(),
            });
        }
        for (i, (acc, &q)) in log_prod.iter_mut().zip(m.as_slice()).enumerate() {
            if q <= 0.0 {
                return Err(Error::ZeroProbability { index: i });
            }
            *acc += q.ln() * inv_m;
        }
    }
    let max = log_prod.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let unnorm: Vec<f64> = log_prod.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = unnorm.iter().sum();
    Ok(ProbVector(unnorm.into_iter().map(|u| u / z).collect()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AmbiguityDecomposition {
    /// (1/M) Σ D(p || q_j)
    pub avg_kl: f64,
    /// (1/M) Σ D(q̄ || q_j)
    pub diversity: f64,
    /// D(p || q̄)
    pub ensemble_kl: f64,
}

impl AmbiguityDecomposition {
    /// |ensemble_kl − (avg_kl − diversity)|
    pub fn residual(&self) -> f64 {
        (self.ensemble_kl - (self.avg_kl - self.diversity)).abs()
    }
}

/// Splits the ensemble divergence into average member divergence minus
/// diversity. The ensemble prediction is the inverse link of the mean of the
/// member natural parameters.
pub fn ambiguity_decompose(
    family: DistributionFamily,
    target: &[f64],
    members: &[Vec<f64>],
) -> Result<AmbiguityDecomposition> {
    if members.is_empty() {
        return Err(Error::Empty("member predictions"));
    }
    check_arity(family, target.len())?;
    let etas = members
        .iter()
        .map(|q| link(family, q))
        .collect::<Result<Vec<_>>>()?;
    let ensemble = inverse_link(family, &combine_logits(&etas)?)?;
    let m = members.len() as f64;
    let mut avg_kl = 0.0;
    let mut diversity = 0.0;
    for q in members {
        avg_kl += kl_divergence(family, target, q)?;
        diversity += kl_divergence(family, &ensemble, q)?;
    }
    Ok(AmbiguityDecomposition {
        avg_kl: avg_kl / m,
        diversity: diversity / m,
        ensemble_kl: kl_divergence(family, target, &ensemble)?,
    })
}
