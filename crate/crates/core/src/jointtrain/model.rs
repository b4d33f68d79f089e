use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::data::{Labels, Split};
use crate::error::{Error, Result};
use crate::expfam::DistributionFamily;
use crate::jointtrain::loss::{mean_logits, BatchPredictions};
use crate::net::{init_mlp, LayerSpec, Mlp, MlpCheckpoint};
use crate::seeds::derive_seed;

/// M member networks whose logits are averaged into one prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleModel {
    members: Vec<Mlp>,
    family: DistributionFamily,
}

impl EnsembleModel {
    pub fn new(members: Vec<Mlp>, family: DistributionFamily) -> Result<Self> {
        let first = members.first().ok_or(Error::Empty("ensemble members"))?;
        let input = first.input_dim();
        for (j, m) in members.iter().enumerate() {
            if m.output_dim() != family.arity() {
                return Err(Error::InvalidConfig(format!(
                    "member {j} has {} outputs, family needs {}",
                    m.output_dim(),
                    family.arity()
                )));
            }
            if m.input_dim() != input {
                return Err(Error::InvalidConfig(format!(
                    "member {j} takes {} inputs, member 0 takes {input}",
                    m.input_dim()
                )));
            }
        }
        Ok(EnsembleModel { members, family })
    }

    /// `count` members with identical architecture; member j is seeded from
    /// `(seed, j)`.
    pub fn init(family: DistributionFamily, specs: &[LayerSpec], count: usize, seed: u64) -> Result<Self> {
        let members = (0..count)
            .map(|j| init_mlp(specs, member_seed(seed, j)))
            .collect::<Result<Vec<_>>>()?;
        EnsembleModel::new(members, family)
    }

    pub fn members(&self) -> &[Mlp] {
        &self.members
    }

    pub fn members_mut(&mut self) -> &mut [Mlp] {
        &mut self.members
    }

    pub fn into_members(self) -> Vec<Mlp> {
        self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn family(&self) -> DistributionFamily {
        self.family
    }

    pub fn param_count(&self) -> usize {
        self.members.iter().map(Mlp::param_count).sum()
    }

    pub fn member_logits(&self, features: ArrayView2<f64>) -> Result<Vec<Array2<f64>>> {
        self.members
            .iter()
            .map(|m| m.predict(features))
            .collect()
    }

    /// Logits averaged over all members.
    pub fn combined_logits(&self, features: ArrayView2<f64>) -> Result<Array2<f64>> {
        let logits = self.member_logits(features)?;
        Ok(mean_logits(&logits, logits.len()))
    }
}

pub fn member_seed(seed: u64, member: usize) -> u64 {
    derive_seed(seed, &[0x6d65_6d62, member as u64])
}

/// Index of the largest entry, ties going to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Misclassification rate for class labels; mean squared error for real
/// targets. `NaN` for an empty split.
pub fn prediction_error(logits: &Array2<f64>, labels: &Labels) -> f64 {
    let n = labels.len();
    if n == 0 {
        return f64::NAN;
    }
    match labels {
        Labels::Classes(y) => {
            let wrong = logits
                .rows()
                .into_iter()
                .zip(y)
                .filter(|(row, &c)| argmax(row.as_slice().expect("standard layout")) != c)
                .count();
            wrong as f64 / n as f64
        }
        Labels::Real(y) => {
            logits
                .rows()
                .into_iter()
                .zip(y)
                .map(|(row, &t)| (row[0] - t).powi(2))
                .sum::<f64>()
                / n as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub error_rate: f64,
    /// Batch-mean D(p || q̄).
    pub mean_kl: f64,
    pub per_member_errors: Vec<f64>,
}

/// Everything the trace needs from one forward pass over a split.
#[derive(Debug, Clone)]
pub struct SplitOutputs {
    pub member_logits: Vec<Array2<f64>>,
    pub ensemble_logits: Array2<f64>,
}

impl SplitOutputs {
    pub fn compute(model: &EnsembleModel, features: ArrayView2<f64>) -> Result<Self> {
        let member_logits = model.member_logits(features)?;
        let ensemble_logits = mean_logits(&member_logits, member_logits.len());
        Ok(SplitOutputs {
            member_logits,
            ensemble_logits,
        })
    }

    pub fn ensemble_error(&self, labels: &Labels) -> f64 {
        prediction_error(&self.ensemble_logits, labels)
    }

    pub fn member_errors(&self, labels: &Labels) -> Vec<f64> {
        self.member_logits
            .iter()
            .map(|l| prediction_error(l, labels))
            .collect()
    }
}

pub fn evaluate(model: &EnsembleModel, split: &Split) -> Result<Evaluation> {
    if split.is_empty() {
        return Ok(Evaluation {
            error_rate: f64::NAN,
            mean_kl: f64::NAN,
            per_member_errors: vec![f64::NAN; model.len()],
        });
    }
    let out = SplitOutputs::compute(model, split.features.view())?;
    let preds = BatchPredictions::new(model.family(), &out.member_logits)?;
    Ok(Evaluation {
        error_rate: out.ensemble_error(&split.labels),
        mean_kl: preds.loss_terms(split.targets.view())?.ensemble_kl,
        per_member_errors: out.member_errors(&split.labels),
    })
}

/// A lone network evaluated as a one-member ensemble.
pub fn evaluate_single(mlp: &Mlp, family: DistributionFamily, split: &Split) -> Result<Evaluation> {
    evaluate(&EnsembleModel::new(vec![mlp.clone()], family)?, split)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleCheckpoint {
    pub family: DistributionFamily,
    pub members: Vec<MlpCheckpoint>,
}

impl EnsembleCheckpoint {
    pub fn capture(model: &EnsembleModel, seed: Option<u64>) -> Self {
        EnsembleCheckpoint {
            family: model.family,
            members: model
                .members
                .iter()
                .enumerate()
                .map(|(j, m)| MlpCheckpoint::capture(m, seed.map(|s| member_seed(s, j)), None))
                .collect(),
        }
    }

    pub fn restore(&self) -> Result<EnsembleModel> {
        let members = self
            .members
            .iter()
            .map(|c| c.restore().map(|(m, _)| m))
            .collect::<Result<Vec<_>>>()?;
        EnsembleModel::new(members, self.family)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::mlp_specs;
    use ndarray::array;

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax(&[0.0, 0.0, 0.0]), 0);
        assert_eq!(argmax(&[0.0, 1.0, 1.0]), 1);
        assert_eq!(argmax(&[-1.0, -2.0, -0.5]), 2);
    }

    #[test]
    fn error_rates() {
        let labels = Labels::Classes(vec![0, 1, 2, 1]);
        let perfect = array![[5.0, 0.0, 0.0], [0.0, 5.0, 0.0], [0.0, 0.0, 5.0], [0.0, 1.0, 0.0]];
        assert_eq!(prediction_error(&perfect, &labels), 0.0);
        // uniform logits always predict class 0
        assert_eq!(prediction_error(&Array2::zeros((4, 3)), &labels), 0.75);
        assert!(prediction_error(&Array2::zeros((0, 3)), &Labels::Classes(vec![])).is_nan());
    }

    #[test]
    fn uniform_predictor_on_balanced_ten_classes() {
        let labels = Labels::Classes((0..1000).map(|i| i % 10).collect());
        assert!((prediction_error(&Array2::zeros((1000, 10)), &labels) - 0.9).abs() < 1e-12);
    }

    #[test]
    fn family_arity_enforced() {
        let m = init_mlp(&mlp_specs(3, &[4], 2), 0).unwrap();
        assert!(EnsembleModel::new(vec![m.clone()], DistributionFamily::Categorical { classes: 3 }).is_err());
        assert!(EnsembleModel::new(vec![], DistributionFamily::Categorical { classes: 2 }).is_err());
        let other = init_mlp(&mlp_specs(4, &[4], 2), 0).unwrap();
        assert!(EnsembleModel::new(vec![m, other], DistributionFamily::Categorical { classes: 2 }).is_err());
    }

    #[test]
    fn members_get_distinct_seeds() {
        let fam = DistributionFamily::Categorical { classes: 2 };
        let e = EnsembleModel::init(fam, &mlp_specs(3, &[4], 2), 3, 1).unwrap();
        assert_ne!(e.members()[0], e.members()[1]);
        assert_eq!(e, EnsembleModel::init(fam, &mlp_specs(3, &[4], 2), 3, 1).unwrap());
    }
}
