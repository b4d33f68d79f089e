//! Classical baselines: bagging on bootstrap resamples, and stacking with a
//! linear combiner over frozen member logits.

use ndarray::{concatenate, Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{DatasetBundle, Split};
use crate::error::{Error, Result};
use crate::net::{Activation, Dense, Mlp, SgdConfig};
use crate::seeds::derive_seed;

use super::model::EnsembleModel;
use super::trainer::{MemberTrainer, Schedule};

/// `n` draws with replacement from `0..n`.
pub fn bootstrap_indices(n: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.gen_range(0..n)).collect()
}

pub fn bootstrap_seed(seed: u64, member: usize) -> u64 {
    derive_seed(seed, &[0x626f_6f74, member as u64])
}

/// Trains every member independently, each on its own bootstrap resample of
/// the training split.
pub fn train_bagging(
    ensemble: EnsembleModel,
    data: &DatasetBundle,
    sgd: SgdConfig,
    schedule: &Schedule,
    seed: u64,
) -> Result<EnsembleModel> {
    let family = ensemble.family();
    let members = ensemble
        .into_members()
        .into_iter()
        .enumerate()
        .map(|(j, mlp)| {
            let picks = bootstrap_indices(data.train.len(), bootstrap_seed(seed, j));
            let resample = data.train.resample(&picks);
            let member_schedule = Schedule {
                shuffle_seed: derive_seed(schedule.shuffle_seed, &[j as u64]),
                ..schedule.clone()
            };
            MemberTrainer::new(mlp, family, &resample, sgd, member_schedule)?.run()
        })
        .collect::<Result<Vec<_>>>()?;
    EnsembleModel::new(members, family)
}

/// Frozen members plus a linear layer over their concatenated logits.
#[derive(Debug, Clone, PartialEq)]
pub struct StackedEnsemble {
    pub members: EnsembleModel,
    pub combiner: Mlp,
}

/// Linear map from M·K stacked logits to K outputs whose blocks are I/M, so
/// it reproduces logit averaging.
pub fn averaging_combiner(members: usize, classes: usize) -> Result<Mlp> {
    let mut weights = Array2::zeros((classes, members * classes));
    let w = 1.0 / members as f64;
    for j in 0..members {
        for k in 0..classes {
            weights[[k, j * classes + k]] = w;
        }
    }
    Mlp::from_layers(vec![Dense {
        weights,
        biases: Array1::zeros(classes),
        activation: Activation::Identity,
    }])
}

pub fn meta_features(members: &EnsembleModel, features: ArrayView2<f64>) -> Result<Array2<f64>> {
    let logits = members.member_logits(features)?;
    let views: Vec<_> = logits.iter().map(|l| l.view()).collect();
    concatenate(Axis(1), &views).map_err(|e| Error::ShapeMismatch(e.to_string()))
}

impl StackedEnsemble {
    pub fn predict_logits(&self, features: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.combiner.predict(meta_features(&self.members, features)?.view())
    }
}

fn meta_split(members: &EnsembleModel, split: &Split) -> Result<Split> {
    Ok(Split {
        features: meta_features(members, split.features.view())?,
        labels: split.labels.clone(),
        targets: split.targets.clone(),
        rows: split.rows.clone(),
    })
}

/// Fits the combiner on the training split with the members held fixed,
/// starting from [`averaging_combiner`].
pub fn train_stacking(
    members: &EnsembleModel,
    data: &DatasetBundle,
    sgd: SgdConfig,
    schedule: &Schedule,
) -> Result<StackedEnsemble> {
    let k = members.family().arity();
    let meta = meta_split(members, &data.train)?;
    let combiner = averaging_combiner(members.len(), k)?;
    let combiner = MemberTrainer::new(combiner, members.family(), &meta, sgd, schedule.clone())?.run()?;
    Ok(StackedEnsemble {
        members: members.clone(),
        combiner,
    })
}

/// `split` projected into meta-feature space.
pub fn stacking_meta_split(members: &EnsembleModel, split: &Split) -> Result<Split> {
    meta_split(members, split)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bootstrap_reproducible_and_in_range() {
        let a = bootstrap_indices(1000, 4);
        assert_eq!(a, bootstrap_indices(1000, 4));
        assert_ne!(a, bootstrap_indices(1000, 5));
        assert!(a.iter().all(|&i| i < 1000));
    }

    #[test]
    fn bootstrap_unique_fraction() {
        let n = 10_000;
        let mut total = 0.0;
        for s in 0..5 {
            let mut seen = vec![false; n];
            for i in bootstrap_indices(n, s) {
                seen[i] = true;
            }
            total += seen.iter().filter(|&&b| b).count() as f64 / n as f64;
        }
        let expected = 1.0 - (-1.0f64).exp();
        assert!((total / 5.0 - expected).abs() < 0.01);
    }

    #[test]
    fn averaging_combiner_blocks() {
        let c = averaging_combiner(2, 3).unwrap();
        let w = &c.layers()[0].weights;
        assert_eq!(w.dim(), (3, 6));
        assert_eq!(w[[1, 1]], 0.5);
        assert_eq!(w[[1, 4]], 0.5);
        assert_eq!(w.sum(), 3.0);
    }
}
