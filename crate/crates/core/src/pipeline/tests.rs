use proptest::prelude::*;

use super::*;
use crate::data::{synthetic_dataset, ModelCheckpoint, SyntheticVariant};
use crate::model::SelfTimeModel;
use crate::rng::RngStream;

fn tiny_cfg() -> TrainConfig {
    TrainConfig {
        epochs: 2,
        batch_size: 8,
        views: 2,
        classes: 2,
        piece_ratio: 0.5,
        eval_epochs: 20,
        splits: 2,
        trials: 2,
        ..TrainConfig::default()
    }
}

fn tiny_data(n: usize) -> TimeSeriesDataset {
    crate::data::znormalize(&synthetic_dataset(n, 32, 0.1, SyntheticVariant::A, 4).unwrap())
}

fn labels_of(n: usize, classes: usize) -> Vec<usize> {
    (0..n).map(|i| i % classes).collect()
}

#[test]
fn split_sizes_follow_halves_and_quarters() {
    let s = split_indices(160, None, 1).unwrap();
    assert_eq!((s.train.len(), s.val.len(), s.test.len()), (80, 40, 40));
    let s = split_indices(158, Some(&labels_of(158, 5)), 1).unwrap();
    assert_eq!((s.train.len(), s.val.len(), s.test.len()), (79, 39, 40));
    assert!(split_indices(7, None, 1).is_err());
}

#[test]
fn splits_are_seeded_and_stratified() {
    let labels = labels_of(40, 4);
    let a = split_indices(40, Some(&labels), 3).unwrap();
    assert_eq!(a, split_indices(40, Some(&labels), 3).unwrap());
    assert_ne!(a, split_indices(40, Some(&labels), 4).unwrap());
    for part in [&a.train, &a.val, &a.test] {
        for c in 0..4 {
            assert!(part.iter().any(|&i| labels[i] == c), "class {c} missing");
        }
    }
    let train_per_class: Vec<usize> = (0..4)
        .map(|c| a.train.iter().filter(|&&i| labels[i] == c).count())
        .collect();
    assert_eq!(train_per_class, [5, 5, 5, 5]);
}

#[test]
fn original_split_keeps_archive_test_rows() {
    let ds = tiny_data(12).concat(&tiny_data(6)).unwrap();
    let s = original_split(&ds, 0).unwrap();
    assert_eq!(s.test, (12..18).collect::<Vec<_>>());
    assert_eq!((s.train.len(), s.val.len()), (8, 4));
    assert!(original_split(&tiny_data(12), 0).is_err());
}

#[test]
fn split_dataset_partitions_rows() {
    let ds = tiny_data(20);
    let (a, b, c) = split_dataset(&ds, 9).unwrap();
    assert_eq!((a.len(), b.len(), c.len()), (10, 5, 5));
}

#[test]
fn report_statistics() {
    let r = EvalReport::new(vec![0.5, 0.7, 0.9, 0.7], vec![11, 12]).unwrap();
    assert!((r.mean - 0.7).abs() < 1e-12);
    assert!((r.std - 0.02f64.sqrt()).abs() < 1e-12);
    assert_eq!((r.trial_count, r.trials_per_split()), (4, 2));
    let csv = r.to_csv();
    assert_eq!(csv.lines().nth(3), Some("1,0,12,0.9"));
    assert!(r.summary().contains("70.00 ± 14.14"));
    assert!(EvalReport::new(vec![], vec![1]).is_err());
    assert!(EvalReport::new(vec![0.1, 0.2, 0.3], vec![1, 2]).is_err());
}

#[test]
fn short_pieces_are_rejected_with_a_hint() {
    let cfg = TrainConfig {
        piece_ratio: 0.2,
        ..tiny_cfg()
    };
    let err = check_piece_length(32, &cfg).unwrap_err().to_string();
    assert!(err.contains("raise piece_ratio to at least 0.500"), "{err}");
    assert_eq!(check_piece_length(80, &cfg).unwrap(), 16);
    assert!(Pretrainer::new(&tiny_data(8), &cfg).is_err());
    assert!(check_piece_length(15, &tiny_cfg()).is_err());
}

#[test]
fn zero_epochs_returns_the_initialization() {
    let cfg = TrainConfig {
        epochs: 0,
        ..tiny_cfg()
    };
    let ckpt = pretrain(&tiny_data(8), &cfg).unwrap();
    assert_eq!(
        ckpt.to_model::<f32>().unwrap(),
        SelfTimeModel::new(2, cfg.seed).unwrap()
    );
}

#[test]
fn pretraining_is_reproducible() {
    let ds = tiny_data(12);
    let a = pretrain(&ds, &tiny_cfg()).unwrap().to_bytes().unwrap();
    let b = pretrain(&ds, &tiny_cfg()).unwrap().to_bytes().unwrap();
    assert_eq!(a, b);
    let other = TrainConfig { seed: 1, ..tiny_cfg() };
    assert_ne!(a, pretrain(&ds, &other).unwrap().to_bytes().unwrap());
}

#[test]
fn step_counts_relation_scores() {
    let ds = tiny_data(8);
    let cfg = TrainConfig { views: 3, ..tiny_cfg() };
    let mut t = Pretrainer::new(&ds, &cfg).unwrap();
    let r = t.step(&[0, 1, 2, 3, 4, 5, 6, 7], 0, 0).unwrap();
    assert_eq!((r.inter_scores, r.intra_scores), (2 * 8 * 9, 8));
    let cfg = TrainConfig {
        pieces_per_sample: 2,
        ..cfg
    };
    let mut t = Pretrainer::new(&ds, &cfg).unwrap();
    t.step(&[0, 1, 2], 0, 0).unwrap();
    assert_eq!(
        t.counters,
        WorkCounters {
            steps: 1,
            inter_scores: 54,
            intra_scores: 6
        }
    );
}

#[test]
fn trailing_singleton_batch_is_skipped() {
    let ds = tiny_data(9);
    let cfg = TrainConfig {
        batch_size: 4,
        ..tiny_cfg()
    };
    let mut t = Pretrainer::new(&ds, &cfg).unwrap();
    let row = t.run_epoch().unwrap();
    assert_eq!(row.epoch, 1);
    assert_eq!(t.counters.steps, 2);
    assert!(row.loss_total.is_finite());
    assert!((row.loss_total - row.loss_inter - row.loss_intra).abs() < 1e-5);
}

#[test]
fn pretraining_moves_parameters_and_running_stats() {
    let ds = tiny_data(8);
    let before = SelfTimeModel::<f32>::new(2, 0).unwrap();
    let after = pretrain(&ds, &tiny_cfg()).unwrap().to_model::<f32>().unwrap();
    assert_ne!(before.backbone.convs[0].weight, after.backbone.convs[0].weight);
    assert_ne!(before.backbone.bns[3].running_mean, after.backbone.bns[3].running_mean);
    assert_ne!(before.head_intra.fc2.weight, after.head_intra.fc2.weight);
}

#[test]
fn resumed_training_matches_uninterrupted() {
    let ds = tiny_data(10);
    let cfg = TrainConfig {
        epochs: 4,
        ..tiny_cfg()
    };
    let full = pretrain(&ds, &cfg).unwrap();

    let mut first = Pretrainer::new(&ds, &cfg).unwrap();
    first.train_until(2, |_| {}).unwrap();
    let saved = ModelCheckpoint::from_bytes(&first.checkpoint().to_bytes().unwrap()).unwrap();
    let mut second = Pretrainer::resume(&saved, &ds, &cfg).unwrap();
    assert_eq!(second.epochs_done(), 2);
    second.train_until(4, |_| {}).unwrap();
    assert_eq!(second.log.len(), 4);
    assert_eq!(second.checkpoint().to_bytes().unwrap(), full.to_bytes().unwrap());

    let wrong = TrainConfig { classes: 3, ..cfg };
    assert!(Pretrainer::resume(&saved, &ds, &wrong).is_err());
}

#[test]
fn epoch_log_round_trips() {
    let rows = vec![
        EpochLog {
            epoch: 1,
            loss_inter: 0.69,
            loss_intra: 1.1,
            loss_total: 1.79,
            inter_acc: 0.5,
            class_acc: 1.0 / 3.0,
        },
        EpochLog {
            epoch: 2,
            loss_inter: 0.5,
            loss_intra: 1.0,
            loss_total: 1.5,
            inter_acc: 0.75,
            class_acc: 0.4,
        },
    ];
    let csv = epoch_log_csv(&rows);
    assert!(csv.starts_with("epoch,loss_inter,loss_intra,loss_total,inter_acc,class_acc\n"));
    assert_eq!(parse_epoch_log(&csv).unwrap(), rows);
    assert!(parse_epoch_log("1,2,3").is_err());
}

#[test]
fn separable_features_give_perfect_probe() {
    let labels = labels_of(30, 3);
    let features: Vec<Vec<f32>> = labels
        .iter()
        .map(|&l| (0..3).map(|c| (c == l) as u8 as f32).collect())
        .collect();
    let split = split_indices(30, Some(&labels), 0).unwrap();
    let cfg = TrainConfig {
        lr_linear: 0.5,
        eval_epochs: 30,
        batch_size: 4,
        ..tiny_cfg()
    };
    let out = train_linear_probe(&features, &labels, 3, &split, &cfg, RngStream::new(0, 0)).unwrap();
    assert_eq!(out.test_accuracy, 1.0);
    assert_eq!(out.val_accuracy, 1.0);
    assert!(out.best_epoch >= 1);
}

#[test]
fn linear_eval_leaves_checkpoint_alone() {
    let ds = tiny_data(16);
    let ckpt = pretrain(&ds, &tiny_cfg()).unwrap();
    let before = ckpt.to_bytes().unwrap();
    let r = linear_eval(&ckpt, &ds, &tiny_cfg(), 2).unwrap();
    assert_eq!(ckpt.to_bytes().unwrap(), before);
    assert_eq!((r.trial_count, r.split_seeds.len()), (4, 2));
    assert!(r.accuracies.iter().all(|a| (0.0..=1.0).contains(a)));
    assert_eq!(
        r.split_seeds,
        vec![split_seed(&tiny_cfg(), 0), split_seed(&tiny_cfg(), 1)]
    );
    let one = linear_eval_split(&ckpt, &ds, &tiny_cfg(), 2, 1).unwrap();
    assert_eq!(one, r.accuracies[2..]);
}

#[test]
fn label_count_mismatch_is_rejected() {
    let ds = tiny_data(16);
    let mut ckpt = pretrain(
        &ds,
        &TrainConfig {
            epochs: 0,
            ..tiny_cfg()
        },
    )
    .unwrap();
    ckpt.set_meta("label_count", 5);
    assert!(linear_eval(&ckpt, &ds, &tiny_cfg(), 1).is_err());
    assert!(transfer_eval(&ckpt, &ds, &tiny_cfg()).is_ok());
    assert!(linear_eval(&ckpt, &ds.without_labels(), &tiny_cfg(), 1).is_err());
}

#[test]
fn degenerate_transfer_equals_linear_eval() {
    let ds = tiny_data(16);
    let ckpt = pretrain(&ds, &tiny_cfg()).unwrap();
    let a = linear_eval(&ckpt, &ds, &tiny_cfg(), tiny_cfg().trials).unwrap();
    let b = transfer_eval(&ckpt, &ds, &tiny_cfg()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn worker_count_does_not_change_results() {
    let ds = tiny_data(16);
    let ckpt = pretrain(&ds, &tiny_cfg()).unwrap();
    let a = linear_eval(&ckpt, &ds, &tiny_cfg(), 2).unwrap();
    let b = linear_eval(&ckpt, &ds, &TrainConfig { jobs: 2, ..tiny_cfg() }, 2).unwrap();
    assert_eq!(a, b);
}

#[test]
fn baselines_are_deterministic() {
    let ds = tiny_data(16);
    let cfg = tiny_cfg();
    assert_eq!(
        baseline_random_weights(&ds, &cfg).unwrap(),
        baseline_random_weights(&ds, &cfg).unwrap()
    );
    let sup = TrainConfig {
        epochs: 2,
        trials: 1,
        splits: 1,
        ..cfg
    };
    let a = baseline_supervised(&ds, &sup).unwrap();
    assert_eq!(a, baseline_supervised(&ds, &sup).unwrap());
    assert_eq!(a.trial_count, 1);
    assert!(baseline_supervised(&ds.without_labels(), &sup).is_err());
}

#[test]
fn supervised_learns_separable_classes() {
    // a sine against its square-wave sign
    let rows: Vec<Vec<f64>> = (0..24)
        .map(|i| {
            (0..32)
                .map(|t| {
                    if i % 2 == 0 {
                        (t as f64 * 0.3).sin()
                    } else {
                        (t as f64 * 0.3).sin().signum()
                    }
                })
                .collect()
        })
        .collect();
    let labels = (0..24).map(|i| (i % 2).to_string()).collect();
    let ds = TimeSeriesDataset::new("sep", rows, Some(labels)).unwrap();
    let cfg = TrainConfig {
        epochs: 15,
        batch_size: 12,
        trials: 1,
        splits: 1,
        lr_pretrain: 0.01,
        ..tiny_cfg()
    };
    assert!(baseline_supervised(&ds, &cfg).unwrap().mean >= 0.95);
}

#[test]
fn selftime_protocol_runs_each_split() {
    let ds = tiny_data(16);
    let cfg = TrainConfig {
        epochs: 1,
        ..tiny_cfg()
    };
    let r = selftime_eval(&ds, &cfg).unwrap();
    assert_eq!((r.trial_count, r.split_seeds.len()), (4, 2));
    let all = TrainConfig {
        pretrain_on: crate::data::PretrainOn::All,
        ..cfg.clone()
    };
    let shared = selftime_eval(&ds, &all).unwrap();
    let direct = linear_eval(&pretrain(&ds, &all).unwrap(), &ds, &all, all.trials).unwrap();
    assert_eq!(shared, direct);
}

#[test]
fn sweep_marks_infeasible_cells() {
    let ds = tiny_data(12);
    let cfg = TrainConfig {
        epochs: 1,
        splits: 1,
        trials: 1,
        ..tiny_cfg()
    };
    let rows = sweep(&ds, &ds, &[2, 3], &[0.1, 0.5], &cfg).unwrap();
    assert_eq!(rows.len(), 4);
    let skipped: Vec<bool> = rows
        .iter()
        .map(|r| matches!(r.status, CellStatus::Skipped(_)))
        .collect();
    assert_eq!(skipped, [true, false, true, false]);
    assert!(rows[1].class_acc.is_some() && rows[1].linear.is_some());
    let csv = sweep_csv(&rows);
    assert_eq!(csv.lines().count(), 5);
    assert!(csv.lines().nth(1).unwrap().starts_with("2,0.1,3,skipped,,,"));
    assert!(sweep(&ds, &ds, &[], &[0.5], &cfg).is_err());
}

#[test]
fn single_cell_sweep_matches_direct_run() {
    let ds = tiny_data(12);
    let cfg = TrainConfig {
        epochs: 1,
        splits: 1,
        trials: 1,
        ..tiny_cfg()
    };
    let rows = sweep(&ds, &ds, &[2], &[0.5], &cfg).unwrap();
    let direct = linear_eval(&pretrain(&ds, &cfg).unwrap(), &ds, &cfg, 1).unwrap();
    assert_eq!(rows[0].linear.as_ref(), Some(&direct));
}

#[test]
fn class_number_grid_has_one_row_per_cell() {
    let ds = crate::data::znormalize(&synthetic_dataset(8, 80, 0.1, SyntheticVariant::A, 0).unwrap());
    let cfg = TrainConfig {
        epochs: 1,
        splits: 1,
        trials: 1,
        eval_epochs: 2,
        views: 1,
        ..tiny_cfg()
    };
    let grid: Vec<usize> = (2..=8).collect();
    let rows = sweep(&ds, &ds, &grid, &[0.2], &cfg).unwrap();
    assert_eq!(rows.len(), 7);
    assert!(rows.iter().all(|r| r.status == CellStatus::Done && r.piece_len == 16));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn splits_partition_every_row(n in 8usize..300, classes in 1usize..6, seed in any::<u64>()) {
        let labels = labels_of(n, classes);
        let s = split_indices(n, Some(&labels), seed).unwrap();
        prop_assert_eq!((s.train.len(), s.val.len()), (n / 2, n / 4));
        let mut all: Vec<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
    }

    #[test]
    fn report_mean_matches_trials(acc in proptest::collection::vec(0.0f64..=1.0, 1..40)) {
        let r = EvalReport::new(acc.clone(), vec![7]).unwrap();
        let mean = acc.iter().sum::<f64>() / acc.len() as f64;
        prop_assert!((r.mean - mean).abs() < 1e-9);
        prop_assert!(r.std >= 0.0 && r.std <= 0.5 + 1e-12);
    }
}
