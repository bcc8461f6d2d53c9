mod common;

use std::collections::HashSet;

use pulsebench::config::{scale_hr, MaskStage, Readout, TrainConfig};
use pulsebench::experiment::{fold_data, load_benchmark, run_supervised, subject_ids, train_fold, RunSpec, Tuning};
use pulsebench::folds::kfold_split;
use pulsebench::train::{fit, masked_input, predict, FitOptions, Masking};
use pulsebench::HarnessError;
use pulsebench_model::Model;

#[test]
fn reruns_give_identical_reports() {
    let cfg = common::micro();
    let b = load_benchmark(&cfg).unwrap();
    let a = run_supervised(&b, &cfg, RunSpec::scratch(&cfg), None).unwrap();
    let c = run_supervised(&b, &cfg, RunSpec::scratch(&cfg), None).unwrap();
    assert_eq!(a, c);
    assert_eq!(a.folds.len(), 1);
    assert_eq!(a.folds[0].loss_curve.len(), 2);
    let m = a.pooled.unwrap();
    assert!(m.rmse >= m.mae);
}

#[test]
fn folds_never_share_subjects() {
    let cfg = common::micro();
    let b = load_benchmark(&cfg).unwrap();
    let folds = kfold_split(&subject_ids(&b), 5, 3).unwrap();
    for i in 0..5 {
        let (tr, te) = folds.split(i);
        let data = fold_data(&b, &cfg, &tr, &te).unwrap();
        let train: HashSet<_> = data.train.samples.iter().map(|s| s.subject.clone()).collect();
        let test: HashSet<_> = data.test.samples.iter().map(|s| s.subject.clone()).collect();
        assert!(train.is_disjoint(&test));
        assert_eq!(train.len() + test.len(), 10);
    }
}

#[test]
fn training_lowers_the_loss_on_a_small_set() {
    let mut cfg = common::micro();
    cfg.train.max_steps = Some(40);
    let b = load_benchmark(&cfg).unwrap();
    let folds = kfold_split(&subject_ids(&b), 5, 0).unwrap();
    let (tr, te) = folds.split(0);
    let data = fold_data(&b, &cfg, &tr, &te).unwrap();
    let (_, rep) = train_fold(&cfg, &data, None, Tuning::Full, 100).unwrap();
    let c = &rep.loss_curve;
    let head: f64 = c[..5].iter().map(|s| s.total).sum::<f64>() / 5.0;
    let tail: f64 = c[c.len() - 5..].iter().map(|s| s.total).sum::<f64>() / 5.0;
    assert!(tail < head, "{head} -> {tail}");
}

#[test]
fn ablated_variants_train_only_their_losses() {
    let cfg = common::micro();
    let b = load_benchmark(&cfg).unwrap();
    let folds = kfold_split(&subject_ids(&b), 5, 0).unwrap();
    let (tr, te) = folds.split(0);
    let data = fold_data(&b, &cfg, &tr, &te).unwrap();

    let mut no_dec = cfg.clone();
    no_dec.model = no_dec.model.without_decoder();
    let (_, rep) = train_fold(&no_dec, &data, None, Tuning::Full, 1).unwrap();
    assert!(rep.loss_curve.iter().all(|s| s.l_temp == 0.0 && s.l_freq == 0.0 && s.l_reg > 0.0));

    let mut no_head = cfg.clone();
    no_head.model = no_head.model.without_hr_head();
    no_head.readout = Readout::Map;
    let (_, rep) = train_fold(&no_head, &data, None, Tuning::Full, 1).unwrap();
    assert!(rep.loss_curve.iter().all(|s| s.l_reg == 0.0 && s.l_freq > 0.0));
    assert!(rep.test_metrics.unwrap().mae.is_finite());
}

#[test]
fn probing_touches_only_the_final_layer() {
    let cfg = common::micro();
    let b = load_benchmark(&cfg).unwrap();
    let folds = kfold_split(&subject_ids(&b), 5, 0).unwrap();
    let (tr, te) = folds.split(0);
    let data = fold_data(&b, &cfg, &tr, &te).unwrap();
    let init = Model::new(data.train.model_config(&cfg.model)).unwrap();
    let (after, rep) = train_fold(&cfg, &data, Some(&init), Tuning::Probe, 1).unwrap();
    assert!(rep.loss_curve.iter().all(|s| s.l_temp == 0.0 && s.l_freq == 0.0));
    let mut fc_moved = false;
    for (p, q) in init.store.params().iter().zip(after.store.params()) {
        let same = p.value.iter().zip(&q.value).all(|(a, b)| a.to_bits() == b.to_bits());
        if p.name.starts_with("hr_head.fc") {
            fc_moved |= !same;
        } else {
            assert!(same, "{} changed", p.name);
        }
    }
    assert!(fc_moved);
}

#[test]
fn exploding_learning_rate_is_reported_as_divergence() {
    let mut cfg = common::micro();
    cfg.train = TrainConfig { lr: 1e300, weight_decay: 0.0, max_steps: Some(6), ..cfg.train.clone() };
    let b = load_benchmark(&cfg).unwrap();
    let err = run_supervised(&b, &cfg, RunSpec::scratch(&cfg), None).unwrap_err();
    assert!(matches!(err, HarnessError::Divergence { .. }), "{err}");
    assert_eq!(err.exit_code(), 4);
}

#[test]
fn masking_only_blanks_selected_patches() {
    let cfg = common::micro();
    let b = load_benchmark(&cfg).unwrap();
    let ids = subject_ids(&b);
    let data = fold_data(&b, &cfg, &ids[..8], &ids[8..]).unwrap();
    let set = &data.train;
    let s = &set.samples[0];
    for stage in [MaskStage::Stacked, MaskStage::Rows] {
        let m = Masking { spec: cfg.pretext.mask, stage, fill: 0.0, masked_only: true };
        let (x, mask) = masked_input(set, s, &m, 5).unwrap();
        let rows = set.layout.unstack(&x);
        let orig = set.layout.unstack(&s.input);
        let share = mask.iter().filter(|b| **b).count() as f64 / mask.len() as f64;
        assert!((0.5..0.95).contains(&share), "{stage:?}: {share}");
        for i in 0..rows.len() {
            assert_eq!(rows[i], if mask[i] { 0.0 } else { orig[i] });
        }
        let mut model = Model::new(set.model_config(&cfg.model)).unwrap();
        let opts = FitOptions { train: &cfg.train, epochs: 1, loss: &cfg.loss, masking: Some(m) };
        let curve = fit(&mut model, set, &opts).unwrap();
        assert!(curve.iter().all(|r| r.total.is_finite()));
    }
}

#[test]
fn head_readout_undoes_the_label_scaling() {
    let cfg = common::micro();
    let b = load_benchmark(&cfg).unwrap();
    let ids = subject_ids(&b);
    let data = fold_data(&b, &cfg, &ids[..8], &ids[8..]).unwrap();
    let model = Model::new(data.test.model_config(&cfg.model)).unwrap();
    let hr = predict(&model, &data.test, Readout::Head, cfg.data.band).unwrap();
    for (s, p) in data.test.samples.iter().zip(&hr) {
        let u = model.forward(&s.input).unwrap().hr.unwrap();
        assert!((scale_hr(*p) - u).abs() < 1e-9);
    }
}
