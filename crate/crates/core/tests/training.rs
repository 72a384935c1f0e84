mod common;

use std::fs;

use iusp::data::{ClipFeatures, Splits};
use iusp::eval::micro_pr_curve;
use iusp::losses::{total_loss, LossComponents};
use iusp::models::Network;
use iusp::training::{predict, prediction_set, train_student, InputSide, Setup, TrainConfig};

fn quick(setup: Setup, epochs: usize, patience: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        lstm_hidden: 16,
        lr: 3e-3,
        max_epochs: epochs,
        patience,
        batch_size: 4,
        seed,
        ..TrainConfig::new(setup)
    }
}

fn small_data() -> Splits<ClipFeatures> {
    common::feature_splits([12, 6, 6], 1.0, 21)
}

#[test]
fn zero_epochs_scores_the_initial_weights() {
    let data = small_data();
    let (r, _) = train_student(&quick(Setup::Bce, 0, 0, 1), &data, None, None).unwrap();
    assert_eq!(r.loss_history.len(), 1);
    assert_eq!((r.best_epoch, r.stopped_epoch), (0, 0));
    assert_eq!(r.best_val_micro_auprc, r.loss_history[0].val_micro_auprc);
}

#[test]
fn small_student_overfits_eight_clips() {
    let mut data = common::feature_splits([8, 1, 1], 1.0, 4);
    data.val = data.train.clone();
    data.test = data.train.clone();
    let cfg = TrainConfig {
        lstm_hidden: 32,
        ..quick(Setup::Bce, 50, 49, 0)
    };
    let (_, model) = train_student(&cfg, &data, None, None).unwrap();
    let scores = predict(&model, &data.train, InputSide::Student).unwrap();
    let train_auprc = micro_pr_curve(&prediction_set(scores, &data.train).unwrap()).unwrap().auprc;
    assert!(train_auprc > 0.9, "train micro AUPRC {train_auprc}");
}

#[test]
fn flat_validation_stops_after_patience() {
    let data = small_data();
    // a vanishing step never moves the validation ranking
    let cfg = TrainConfig {
        lr: 1e-14,
        ..quick(Setup::Bce, 60, 20, 2)
    };
    let (r, _) = train_student(&cfg, &data, None, None).unwrap();
    assert_eq!(r.best_epoch, 0);
    assert_eq!(r.stopped_epoch, 21);
    assert_eq!(r.loss_history.len(), 22);
}

#[test]
fn best_validation_is_the_maximum_over_epochs() {
    let data = small_data();
    let teacher = common::small_teacher(3);
    let (r, _) = train_student(&quick(Setup::BceKdSpIusp, 12, 4, 5), &data, Some(&teacher), None).unwrap();
    let max = r.loss_history.iter().map(|e| e.val_micro_auprc).fold(f64::MIN, f64::max);
    assert_eq!(r.best_val_micro_auprc, max);
    assert_eq!(r.loss_history[r.best_epoch].val_micro_auprc, max);
    assert!(r.stopped_epoch - r.best_epoch <= 5);
}

#[test]
fn repeated_runs_are_bit_identical() {
    let data = small_data();
    let teacher = common::small_teacher(3);
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let results: Vec<_> = dirs
        .iter()
        .map(|d| train_student(&quick(Setup::BceKdSpIusp, 4, 2, 9), &data, Some(&teacher), Some(d.path())).unwrap())
        .collect();
    assert_eq!(results[0].1, results[1].1);
    for f in ["steps.tsv", "epochs.csv", "result.csv", "test_predictions.csv", "best.ckpt"] {
        assert_eq!(
            fs::read(dirs[0].path().join(f)).unwrap(),
            fs::read(dirs[1].path().join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn teacher_is_left_untouched() {
    let data = small_data();
    let teacher = common::small_teacher(8);
    let before: Vec<Vec<f64>> = teacher.params().into_iter().map(|(_, p)| p.to_vec()).collect();
    train_student(&quick(Setup::BceKdSpIusp, 3, 2, 0), &data, Some(&teacher), None).unwrap();
    let after: Vec<Vec<f64>> = teacher.params().into_iter().map(|(_, p)| p.to_vec()).collect();
    assert_eq!(before, after);
}

#[test]
fn bce_setup_ignores_the_teacher() {
    let data = small_data();
    let teacher = common::small_teacher(1);
    let cfg = quick(Setup::Bce, 3, 2, 6);
    let (with, a) = train_student(&cfg, &data, Some(&teacher), None).unwrap();
    let (without, b) = train_student(&cfg, &data, None, None).unwrap();
    assert_eq!(a, b);
    assert_eq!(with.test_micro_auprc.to_bits(), without.test_micro_auprc.to_bits());
}

#[test]
fn distillation_setups_need_a_teacher() {
    let data = small_data();
    let err = train_student(&quick(Setup::BceKd, 1, 0, 0), &data, None, None).unwrap_err();
    assert_eq!(err.category(), "config");
}

#[test]
fn step_log_totals_are_the_weighted_components() {
    let data = small_data();
    let teacher = common::small_teacher(2);
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick(Setup::BceKdSpIusp, 3, 2, 4);
    train_student(&cfg, &data, Some(&teacher), Some(dir.path())).unwrap();
    let weights = cfg.effective_weights();
    let log = fs::read_to_string(dir.path().join("steps.tsv")).unwrap();
    let mut steps = 0;
    for (i, line) in log.lines().enumerate() {
        let v: Vec<f64> = line.split('\t').map(|x| x.parse().unwrap()).collect();
        assert_eq!(v.len(), 6);
        assert_eq!(v[0] as usize, i + 1);
        let c = LossComponents {
            bce: v[1],
            kd: v[2],
            sp: v[3],
            iusp: v[4],
        };
        assert!(v[1..5].iter().all(|x| *x >= 0.0), "{line}");
        let want = total_loss(c, &weights).total;
        assert!((v[5] - want).abs() <= 1e-9 * want.abs().max(1.0), "{line}");
        steps += 1;
    }
    // 12 clips in batches of 4 for 3 epochs
    assert_eq!(steps, 9);
}
