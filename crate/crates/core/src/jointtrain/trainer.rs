//! Mini-batch SGD on the joint loss, plus a plain single-network trainer used
//! by the baselines.
//!
//! Every epoch draws one shuffle that all members share. Members are stepped
//! sequentially in index order, so a run is bitwise reproducible.

use std::time::Instant;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{DatasetBundle, Split};
use crate::error::{Error, Result};
use crate::expfam::DistributionFamily;
use crate::net::{sgd_step, Mlp, MomentumState, SgdConfig, INIT_SCHEME};

use super::loss::{BatchPredictions, JointLossConfig};
use super::model::{prediction_error, EnsembleModel, SplitOutputs};
use super::trace::{EpochRecord, RunManifest, TrainingTrace};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrStep {
    /// First epoch (1-based) at which the factor applies.
    pub epoch: usize,
    pub factor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub epochs: usize,
    pub shuffle_seed: u64,
    #[serde(default)]
    pub lr_steps: Vec<LrStep>,
}

impl Schedule {
    pub fn new(epochs: usize, shuffle_seed: u64) -> Self {
        Schedule {
            epochs,
            shuffle_seed,
            lr_steps: Vec::new(),
        }
    }

    /// Learning rate in force during `epoch` (1-based).
    pub fn learning_rate(&self, base: f64, epoch: usize) -> f64 {
        self.lr_steps
            .iter()
            .filter(|s| s.epoch <= epoch)
            .fold(base, |lr, s| lr * s.factor)
    }
}

fn to_divergence(err: Error, epoch: usize, member: usize) -> Error {
    match err {
        Error::NonFinite(_) => Error::Diverged { epoch, member },
        other => other,
    }
}

/// Drives joint training one epoch at a time.
pub struct JointTrainer<'a> {
    ensemble: EnsembleModel,
    states: Vec<MomentumState>,
    loss: JointLossConfig,
    sgd: SgdConfig,
    schedule: Schedule,
    data: &'a DatasetBundle,
    rng: ChaCha8Rng,
    order: Vec<usize>,
    epoch: usize,
}

impl<'a> JointTrainer<'a> {
    pub fn new(
        ensemble: EnsembleModel,
        data: &'a DatasetBundle,
        loss: JointLossConfig,
        sgd: SgdConfig,
        schedule: Schedule,
    ) -> Result<Self> {
        sgd.validate()?;
        if ensemble.len() != loss.members() {
            return Err(Error::InvalidConfig(format!(
                "loss configured for {} members, ensemble has {}",
                loss.members(),
                ensemble.len()
            )));
        }
        if ensemble.family() != data.family {
            return Err(Error::InvalidConfig("ensemble and dataset families differ".into()));
        }
        if data.train.is_empty() {
            return Err(Error::Empty("training split"));
        }
        if ensemble.members()[0].input_dim() != data.input_dim() {
            return Err(Error::InvalidConfig(format!(
                "members take {} inputs, data has {} features",
                ensemble.members()[0].input_dim(),
                data.input_dim()
            )));
        }
        let states = ensemble.members().iter().map(MomentumState::new).collect();
        Ok(JointTrainer {
            ensemble,
            states,
            loss,
            sgd,
            rng: ChaCha8Rng::seed_from_u64(schedule.shuffle_seed),
            schedule,
            data,
            order: (0..data.train.len()).collect(),
            epoch: 0,
        })
    }

    pub fn ensemble(&self) -> &EnsembleModel {
        &self.ensemble
    }

    pub fn into_ensemble(self) -> EnsembleModel {
        self.ensemble
    }

    /// Completed epochs.
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn run_epoch(&mut self) -> Result<()> {
        let epoch = self.epoch + 1;
        let sgd = SgdConfig {
            learning_rate: self.schedule.learning_rate(self.sgd.learning_rate, epoch),
            ..self.sgd
        };
        let family = self.ensemble.family();
        let lambda = self.loss.lambda();
        self.order.shuffle(&mut self.rng);
        let train = &self.data.train;
        for batch in self.order.chunks(self.sgd.batch_size) {
            let x = train.features.select(Axis(0), batch);
            let targets = train.targets.select(Axis(0), batch);
            let mut logits = Vec::with_capacity(self.ensemble.len());
            let mut caches = Vec::with_capacity(self.ensemble.len());
            for (j, member) in self.ensemble.members().iter().enumerate() {
                let (out, cache) = member.forward(x.view()).map_err(|e| to_divergence(e, epoch, j))?;
                logits.push(out);
                caches.push(cache);
            }
            let grads = BatchPredictions::for_gradient(family, &logits)?.grad_logits(targets.view(), lambda)?;
            for (j, ((member, state), (cache, g))) in self
                .ensemble
                .members_mut()
                .iter_mut()
                .zip(self.states.iter_mut())
                .zip(caches.iter().zip(&grads))
                .enumerate()
            {
                let pg = member.backward(cache, g.view())?;
                sgd_step(member, &pg, state, &sgd).map_err(|e| to_divergence(e, epoch, j))?;
            }
        }
        self.epoch = epoch;
        Ok(())
    }

    /// Metrics for the current parameters.
    pub fn record(&self) -> Result<EpochRecord> {
        record_for(&self.ensemble, self.data, self.loss.lambda(), self.epoch)
    }
}

pub fn record_for(
    ensemble: &EnsembleModel,
    data: &DatasetBundle,
    lambda: f64,
    epoch: usize,
) -> Result<EpochRecord> {
    let train = SplitOutputs::compute(ensemble, data.train.features.view())
        .map_err(|e| to_divergence(e, epoch, 0))?;
    let terms = BatchPredictions::new(ensemble.family(), &train.member_logits)?
        .loss_terms(data.train.targets.view())?;
    if !(terms.ensemble_kl.is_finite() && terms.avg_member_kl.is_finite()) {
        return Err(Error::Diverged { epoch, member: 0 });
    }
    let ensemble_error = |split: &Split| -> Result<f64> {
        if split.is_empty() {
            return Ok(f64::NAN);
        }
        Ok(prediction_error(&ensemble.combined_logits(split.features.view())?, &split.labels))
    };
    let (test_err, member_test_err) = if data.test.is_empty() {
        (f64::NAN, vec![f64::NAN; ensemble.len()])
    } else {
        let test = SplitOutputs::compute(ensemble, data.test.features.view())?;
        (test.ensemble_error(&data.test.labels), test.member_errors(&data.test.labels))
    };
    Ok(EpochRecord {
        epoch,
        lambda,
        ensemble_kl: terms.ensemble_kl,
        avg_member_kl: terms.avg_member_kl,
        diversity: terms.diversity,
        ensemble_train_err: train.ensemble_error(&data.train.labels),
        ensemble_val_err: ensemble_error(&data.validation)?,
        ensemble_test_err: test_err,
        member_train_err: train.member_errors(&data.train.labels),
        member_test_err,
    })
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the best-validation epoch.
    pub model: EnsembleModel,
    pub final_model: EnsembleModel,
    pub trace: TrainingTrace,
}

/// Trains for `schedule.epochs` epochs, recording every epoch (plus the
/// untrained state as epoch 0) and keeping the parameters with the lowest
/// validation error.
pub fn train(
    ensemble: EnsembleModel,
    data: &DatasetBundle,
    loss: JointLossConfig,
    sgd: SgdConfig,
    schedule: Schedule,
    seed: u64,
) -> Result<TrainOutcome> {
    let started = Instant::now();
    let member_param_counts = ensemble.members().iter().map(Mlp::param_count).collect();
    let mut trainer = JointTrainer::new(ensemble, data, loss, sgd, schedule.clone())?;
    let mut records = vec![trainer.record()?];
    let mut best = (records[0].ensemble_val_err, 0usize, trainer.ensemble().clone());
    for _ in 0..schedule.epochs {
        trainer.run_epoch()?;
        let rec = trainer.record()?;
        let better = if data.validation.is_empty() {
            true
        } else {
            rec.ensemble_val_err < best.0
        };
        if better {
            best = (rec.ensemble_val_err, rec.epoch, trainer.ensemble().clone());
        }
        records.push(rec);
    }
    let (_, best_epoch, model) = best;
    Ok(TrainOutcome {
        model,
        final_model: trainer.into_ensemble(),
        trace: TrainingTrace {
            records,
            best_epoch,
            manifest: RunManifest {
                seed,
                loss,
                sgd,
                schedule,
                init: INIT_SCHEME.to_string(),
                member_param_counts,
                data: Some(data.provenance.clone()),
                wall_clock_secs: started.elapsed().as_secs_f64(),
            },
        },
    })
}

/// Plain SGD on a single network's own divergence D(p || q), batch mean.
pub struct MemberTrainer<'a> {
    mlp: Mlp,
    state: MomentumState,
    family: DistributionFamily,
    train: &'a Split,
    sgd: SgdConfig,
    schedule: Schedule,
    rng: ChaCha8Rng,
    order: Vec<usize>,
    epoch: usize,
}

impl<'a> MemberTrainer<'a> {
    pub fn new(
        mlp: Mlp,
        family: DistributionFamily,
        train: &'a Split,
        sgd: SgdConfig,
        schedule: Schedule,
    ) -> Result<Self> {
        sgd.validate()?;
        if train.is_empty() {
            return Err(Error::Empty("training split"));
        }
        if mlp.output_dim() != family.arity() || mlp.input_dim() != train.features.ncols() {
            return Err(Error::InvalidConfig("network does not fit the data".into()));
        }
        Ok(MemberTrainer {
            state: MomentumState::new(&mlp),
            mlp,
            family,
            train,
            sgd,
            rng: ChaCha8Rng::seed_from_u64(schedule.shuffle_seed),
            schedule,
            order: (0..train.len()).collect(),
            epoch: 0,
        })
    }

    pub fn mlp(&self) -> &Mlp {
        &self.mlp
    }

    pub fn into_mlp(self) -> Mlp {
        self.mlp
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn run_epoch(&mut self) -> Result<()> {
        let epoch = self.epoch + 1;
        let sgd = SgdConfig {
            learning_rate: self.schedule.learning_rate(self.sgd.learning_rate, epoch),
            ..self.sgd
        };
        self.order.shuffle(&mut self.rng);
        for batch in self.order.chunks(self.sgd.batch_size) {
            let x = self.train.features.select(Axis(0), batch);
            let targets = self.train.targets.select(Axis(0), batch);
            let (logits, cache) = self.mlp.forward(x.view()).map_err(|e| to_divergence(e, epoch, 0))?;
            let q = BatchPredictions::for_gradient(self.family, std::slice::from_ref(&logits))?;
            let scale = 1.0 / batch.len() as f64;
            let g: Array2<f64> = (&q.member_means[0] - &targets) * scale;
            let pg = self.mlp.backward(&cache, g.view())?;
            sgd_step(&mut self.mlp, &pg, &mut self.state, &sgd).map_err(|e| to_divergence(e, epoch, 0))?;
        }
        self.epoch = epoch;
        Ok(())
    }

    pub fn run(mut self) -> Result<Mlp> {
        for _ in 0..self.schedule.epochs {
            self.run_epoch()?;
        }
        Ok(self.mlp)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn step_decay() {
        let mut s = Schedule::new(10, 0);
        s.lr_steps = vec![LrStep { epoch: 3, factor: 0.1 }, LrStep { epoch: 6, factor: 0.5 }];
        assert_eq!(s.learning_rate(1.0, 1), 1.0);
        assert_eq!(s.learning_rate(1.0, 3), 0.1);
        assert_eq!(s.learning_rate(1.0, 7), 0.1 * 0.5);
    }
}
