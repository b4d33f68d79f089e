use jointens::data::*;
use jointens::diagnostics::*;
use jointens::jointtrain::baselines::*;
use jointens::jointtrain::model::member_seed;
use jointens::jointtrain::trainer::record_for;
use jointens::jointtrain::*;
use jointens::net::*;
use jointens::DistributionFamily;

fn blobs(n: usize, classes: usize, dim: usize, seed: u64) -> DatasetBundle {
    let raw = make_synthetic(
        &SyntheticKind::GaussianBlobs { classes, dim, separation: 2.0, clusters_per_class: 2 },
        n,
        seed,
    )
    .unwrap();
    let fam = raw.family().unwrap();
    split_and_normalize(&raw, None, fam, &SplitConfig { validation_count: n / 5, test_count: n / 5, seed }).unwrap()
}

fn sgd(lr: f64) -> SgdConfig {
    SgdConfig { learning_rate: lr, momentum: 0.9, weight_decay: 0.0, batch_size: 32 }
}

#[test]
fn lambda_zero_is_independent_training_with_scaled_rate() {
    let data = blobs(600, 3, 5, 1);
    let m = 4;
    let specs = mlp_specs(5, &[8], 3);
    let init = EnsembleModel::init(data.family, &specs, m, 7).unwrap();
    let schedule = Schedule::new(3, 11);
    let lr = 0.2;

    let mut joint = JointTrainer::new(init.clone(), &data, JointLossConfig::new(0.0, m).unwrap(), sgd(lr), schedule.clone()).unwrap();
    let mut solo: Vec<MemberTrainer> = init
        .members()
        .iter()
        .map(|mlp| MemberTrainer::new(mlp.clone(), data.family, &data.train, sgd(lr / m as f64), schedule.clone()).unwrap())
        .collect();

    for epoch in 1..=3 {
        joint.run_epoch().unwrap();
        solo.iter_mut().for_each(|t| t.run_epoch().unwrap());
        let independent = EnsembleModel::new(solo.iter().map(|t| t.mlp().clone()).collect(), data.family).unwrap();
        for (a, b) in joint.ensemble().members().iter().zip(independent.members()) {
            assert!(a.iter_params().zip(b.iter_params()).all(|(x, y)| x.to_bits() == y.to_bits()), "epoch {epoch}");
        }
        assert_eq!(joint.record().unwrap(), record_for(&independent, &data, 0.0, epoch).unwrap());
    }
}

#[test]
fn single_member_ignores_lambda() {
    let data = blobs(300, 2, 3, 2);
    let specs = mlp_specs(3, &[6], 2);
    let traces: Vec<_> = [0.0, 0.5, 1.0]
        .iter()
        .map(|&l| {
            let init = EnsembleModel::init(data.family, &specs, 1, 3).unwrap();
            let mut t = train(init, &data, JointLossConfig::new(l, 1).unwrap(), sgd(0.1), Schedule::new(3, 4), 0).unwrap().trace;
            t.records.iter_mut().for_each(|r| r.lambda = 0.0);
            t.records
        })
        .collect();
    assert_eq!(traces[0], traces[1]);
    assert_eq!(traces[0], traces[2]);
}

#[test]
fn training_reduces_error_on_blobs() {
    let raw = make_synthetic(
        &SyntheticKind::GaussianBlobs { classes: 2, dim: 4, separation: 3.0, clusters_per_class: 1 },
        800,
        5,
    )
    .unwrap();
    let data = split_and_normalize(&raw, None, raw.family().unwrap(), &SplitConfig { validation_count: 100, test_count: 200, seed: 5 }).unwrap();
    let init = EnsembleModel::init(data.family, &mlp_specs(4, &[4], 2), 16, 5).unwrap();
    let out = train(init, &data, JointLossConfig::new(0.5, 16).unwrap(), sgd(1.0), Schedule::new(5, 5), 5).unwrap();
    let first = &out.trace.records[0];
    let best = out.trace.best().unwrap();
    assert!(best.ensemble_test_err < first.ensemble_test_err);
    assert_eq!(out.trace.records.len(), 6);
    let series = decomposition_trace(&out.trace).unwrap();
    assert!(series.max_residual < 1e-8);
    assert!(series.diversity.iter().all(|&d| d >= 0.0));
}

#[test]
fn best_validation_epoch_is_kept() {
    let data = blobs(400, 3, 4, 8);
    let init = EnsembleModel::init(data.family, &mlp_specs(4, &[6], 3), 2, 8).unwrap();
    let out = train(init, &data, JointLossConfig::new(0.7, 2).unwrap(), sgd(0.3), Schedule::new(6, 8), 8).unwrap();
    let best_val = out.trace.records.iter().map(|r| r.ensemble_val_err).fold(f64::INFINITY, f64::min);
    let best = out.trace.best().unwrap();
    assert_eq!(best.ensemble_val_err, best_val);
    assert!(out.trace.records.iter().take_while(|r| r.epoch < best.epoch).all(|r| r.ensemble_val_err > best_val));
    assert_eq!(evaluate(&out.model, &data.test).unwrap().error_rate, best.ensemble_test_err);
}

#[test]
fn empty_validation_keeps_last_epoch() {
    let raw = make_synthetic(&SyntheticKind::GaussianBlobs { classes: 2, dim: 2, separation: 2.0, clusters_per_class: 1 }, 200, 1).unwrap();
    let data = split_and_normalize(&raw, None, raw.family().unwrap(), &SplitConfig { validation_count: 0, test_count: 50, seed: 1 }).unwrap();
    let init = EnsembleModel::init(data.family, &mlp_specs(2, &[4], 2), 2, 1).unwrap();
    let out = train(init, &data, JointLossConfig::new(0.5, 2).unwrap(), sgd(0.1), Schedule::new(4, 1), 1).unwrap();
    assert_eq!(out.trace.best_epoch, 4);
    assert_eq!(out.model, out.final_model);
}

#[test]
fn divergence_reports_epoch_and_member() {
    let data = blobs(200, 2, 3, 3);
    let init = EnsembleModel::init(data.family, &mlp_specs(3, &[16], 2), 2, 3).unwrap();
    let wild = SgdConfig { learning_rate: 1e200, momentum: 0.0, weight_decay: 0.0, batch_size: 10 };
    let err = train(init, &data, JointLossConfig::new(0.5, 2).unwrap(), wild, Schedule::new(3, 3), 3).unwrap_err();
    assert!(matches!(err, jointens::Error::Diverged { epoch: 1, .. }), "{err}");
}

#[test]
fn trace_csv_has_stable_columns() {
    let data = blobs(200, 2, 3, 4);
    let init = EnsembleModel::init(data.family, &mlp_specs(3, &[4], 2), 3, 4).unwrap();
    let out = train(init, &data, JointLossConfig::new(0.5, 3).unwrap(), sgd(0.1), Schedule::new(2, 4), 4).unwrap();
    let mut buf = Vec::new();
    out.trace.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let header = text.lines().next().unwrap();
    assert_eq!(
        header,
        "epoch,lambda,ensemble_kl,avg_member_kl,diversity,ensemble_train_err,ensemble_val_err,ensemble_test_err,\
member_train_err_0,member_train_err_1,member_train_err_2,member_test_err_0,member_test_err_1,member_test_err_2"
    );
    assert_eq!(text.lines().count(), 4);
}

#[test]
fn identical_members_have_equal_errors() {
    let data = blobs(200, 3, 3, 6);
    let mlp = init_mlp(&mlp_specs(3, &[5], 3), 1).unwrap();
    let e = EnsembleModel::new(vec![mlp.clone(); 4], data.family).unwrap();
    let ev = evaluate(&e, &data.test).unwrap();
    assert!(ev.per_member_errors.iter().all(|&x| x == ev.per_member_errors[0]));
    assert_eq!(ev.error_rate, evaluate_single(&mlp, data.family, &data.test).unwrap().error_rate);
}

#[test]
fn checkpoint_restores_ensemble() {
    let e = EnsembleModel::init(DistributionFamily::Categorical { classes: 3 }, &mlp_specs(4, &[5], 3), 3, 9).unwrap();
    let ck = EnsembleCheckpoint::capture(&e, Some(9));
    let text = serde_json::to_string(&ck).unwrap();
    let back: EnsembleCheckpoint = serde_json::from_str(&text).unwrap();
    assert_eq!(back.restore().unwrap(), e);
    assert_eq!(back.members[1].seed, Some(member_seed(9, 1)));
}

// ---------------------------------------------------------------------------
// Baselines

#[test]
fn bootstrap_keeps_about_63_percent() {
    let n = 10_000;
    let mut seen = vec![false; n];
    bootstrap_indices(n, 42).into_iter().for_each(|i| seen[i] = true);
    let frac = seen.iter().filter(|&&b| b).count() as f64 / n as f64;
    assert!((frac - (1.0 - (-1.0f64).exp())).abs() < 0.01, "{frac}");
}

#[test]
fn bagging_single_member_is_training_on_a_resample() {
    let data = blobs(300, 2, 3, 7);
    let specs = mlp_specs(3, &[4], 2);
    let init = EnsembleModel::init(data.family, &specs, 1, 2).unwrap();
    let schedule = Schedule::new(2, 5);
    let bagged = train_bagging(init.clone(), &data, sgd(0.1), &schedule, 13).unwrap();
    let resample = data.train.resample(&bootstrap_indices(data.train.len(), bootstrap_seed(13, 0)));
    let member_schedule = Schedule { shuffle_seed: jointens::seeds::derive_seed(5, &[0]), ..schedule };
    let direct = MemberTrainer::new(init.members()[0].clone(), data.family, &resample, sgd(0.1), member_schedule).unwrap().run().unwrap();
    assert_eq!(bagged.members()[0], direct);
}

#[test]
fn bagging_members_see_different_data() {
    let data = blobs(300, 2, 3, 7);
    let mlp = init_mlp(&mlp_specs(3, &[4], 2), 2).unwrap();
    let init = EnsembleModel::new(vec![mlp; 2], data.family).unwrap();
    let bagged = train_bagging(init, &data, sgd(0.1), &Schedule::new(2, 5), 13).unwrap();
    assert_ne!(bagged.members()[0], bagged.members()[1]);
}

#[test]
fn averaging_combiner_reproduces_logit_mean() {
    let data = blobs(200, 4, 3, 9);
    let e = EnsembleModel::init(data.family, &mlp_specs(3, &[5], 4), 3, 9).unwrap();
    let stacked = StackedEnsemble { members: e.clone(), combiner: averaging_combiner(3, 4).unwrap() };
    let a = stacked.predict_logits(data.test.features.view()).unwrap();
    let b = e.combined_logits(data.test.features.view()).unwrap();
    assert!((&a - &b).iter().all(|d| d.abs() < 1e-12));
}

#[test]
fn stacking_freezes_members_and_improves_validation_loss() {
    let data = blobs(800, 3, 4, 10);
    let members = EnsembleModel::init(data.family, &mlp_specs(4, &[6], 3), 3, 10).unwrap();
    let members = train(members, &data, JointLossConfig::new(0.0, 3).unwrap(), sgd(0.1), Schedule::new(1, 1), 1).unwrap().model;
    let before = members.clone();
    let stacked = train_stacking(&members, &data, sgd(0.01), &Schedule::new(10, 2)).unwrap();
    assert_eq!(stacked.members, before);
    let val_loss = |logits: ndarray::Array2<f64>| {
        let preds = BatchPredictions::new(data.family, &[logits]).unwrap();
        preds.loss_terms(data.validation.targets.view()).unwrap().ensemble_kl
    };
    let initial = val_loss(before.combined_logits(data.validation.features.view()).unwrap());
    let fitted = val_loss(stacked.predict_logits(data.validation.features.view()).unwrap());
    assert!(fitted < initial, "{fitted} !< {initial}");
}

// ---------------------------------------------------------------------------
// Diagnostics

#[test]
fn keep_all_equals_evaluation() {
    let data = blobs(300, 3, 4, 12);
    let e = EnsembleModel::init(data.family, &mlp_specs(4, &[6], 3), 4, 12).unwrap();
    let curve = robustness_curve(&e, &data.test, &[1, 2, 4], 5, 3).unwrap();
    let (err, se) = curve.error_at(4).unwrap();
    assert_eq!(err, evaluate(&e, &data.test).unwrap().error_rate);
    assert_eq!(se, 0.0);
}

#[test]
fn identical_members_give_a_flat_curve() {
    let data = blobs(300, 3, 4, 12);
    let mlp = init_mlp(&mlp_specs(4, &[6], 3), 1).unwrap();
    let e = EnsembleModel::new(vec![mlp; 4], data.family).unwrap();
    let curve = robustness_curve(&e, &data.test, &[1, 2, 3, 4], 3, 3).unwrap();
    assert!(curve.mean_error.iter().all(|&v| v == curve.mean_error[0]));
}

#[test]
fn robustness_rejects_bad_keep_counts() {
    let data = blobs(100, 2, 2, 1);
    let e = EnsembleModel::init(data.family, &mlp_specs(2, &[3], 2), 2, 1).unwrap();
    assert!(robustness_curve(&e, &data.test, &[], 5, 0).is_err());
    assert!(robustness_curve(&e, &data.test, &[0], 5, 0).is_err());
    assert!(robustness_curve(&e, &data.test, &[3], 5, 0).is_err());
}

#[test]
fn independent_ensembles_improve_with_more_members() {
    let data = blobs(5000, 4, 6, 14);
    let init = EnsembleModel::init(data.family, &mlp_specs(6, &[4], 4), 8, 14).unwrap();
    let out = train(init, &data, JointLossConfig::new(0.0, 8).unwrap(), sgd(2.4), Schedule::new(5, 14), 14).unwrap();
    let curve = robustness_curve(&out.model, &data.test, &[1, 2, 4, 8], 20, 1).unwrap();
    for w in 0..3 {
        let slack = 2.0 * (curve.std_error[w] + curve.std_error[w + 1]);
        assert!(curve.mean_error[w + 1] <= curve.mean_error[w] + slack, "{curve:?}");
    }
}

#[test]
fn single_member_subsets_are_uniform() {
    let members = 8;
    let draws = 100_000;
    let mut counts = [0usize; 8];
    for i in 0..draws {
        counts[sample_members(members, 1, subset_seed(99, 1, i, 0))[0]] += 1;
    }
    let expected = draws as f64 / members as f64;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    // Upper 0.001 quantile of chi-square with 7 degrees of freedom.
    assert!(chi2 < 24.322, "chi2 = {chi2}, counts {counts:?}");
}

#[test]
fn dominance_needs_two_members_and_is_deterministic() {
    let data = blobs(200, 2, 3, 15);
    let init = EnsembleModel::init(data.family, &mlp_specs(3, &[4], 2), 1, 15).unwrap();
    let out = train(init, &data, JointLossConfig::new(1.0, 1).unwrap(), sgd(0.1), Schedule::new(3, 15), 15).unwrap();
    assert!(detect_dominance(&out.trace, 3, 0.5).is_err());

    let init = EnsembleModel::init(data.family, &mlp_specs(3, &[4], 2), 3, 15).unwrap();
    let out = train(init, &data, JointLossConfig::new(1.0, 3).unwrap(), sgd(0.1), Schedule::new(3, 15), 15).unwrap();
    let a = detect_dominance(&out.trace, 3, 0.5).unwrap();
    assert_eq!(a, detect_dominance(&out.trace, 3, 0.5).unwrap());
    assert_eq!(a.flagged, a.dominance_ratio < 0.5);
    assert!((0.0..=1.0).contains(&a.dominance_ratio));
    assert!(detect_dominance(&out.trace, 7, 0.5).is_err());
}

#[test]
fn dominance_csv_row() {
    let data = blobs(200, 2, 3, 15);
    let init = EnsembleModel::init(data.family, &mlp_specs(3, &[4], 2), 2, 15).unwrap();
    let out = train(init, &data, JointLossConfig::new(1.0, 2).unwrap(), sgd(0.1), Schedule::new(3, 15), 15).unwrap();
    let mut buf = Vec::new();
    write_dominance_csv(&detect_dominance(&out.trace, 3, 0.5).unwrap(), &mut buf).unwrap();
    assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 2);
}
