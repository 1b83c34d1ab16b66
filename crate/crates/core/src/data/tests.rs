use std::io::Write;

use sha2::{Digest, Sha256};
use tempfile::TempDir;

use super::*;
use crate::autodiff::{Adam, AdamConfig};
use crate::model::SelfTimeModel;
use crate::ErrorClass;

fn write(dir: &TempDir, name: &str, text: &str) -> std::path::PathBuf {
    let path = dir.path().join(name);
    std::fs::File::create(&path)
        .unwrap()
        .write_all(text.as_bytes())
        .unwrap();
    path
}

#[test]
fn loads_label_first_rows() {
    let dir = TempDir::new().unwrap();
    let p = write(
        &dir,
        "Toy_TRAIN.tsv",
        "1\t0.1\t0.2\t0.3\t0.4\n2\t1\t2\t3\t4\n1\t-1\t-2\t-3\t-4\n",
    );
    let ds = load_ucr(&p, None, MissingValues::Reject).unwrap();
    assert_eq!((ds.len(), ds.series_len()), (3, 4));
    assert_eq!(ds.labels().unwrap(), [0, 1, 0]);
    assert_eq!(ds.label_map(), ["1", "2"]);
    assert_eq!(ds.internal_label("2"), Some(1));
    assert_eq!(ds.name, "Toy");
    assert_eq!(ds.series(1), [1.0, 2.0, 3.0, 4.0]);

    let c = write(&dir, "c.csv", "-1,0.5,0.25\n1,2,3\n");
    let ds = load_ucr(&c, Some(Delimiter::Comma), MissingValues::Reject).unwrap();
    assert_eq!(ds.label_map(), ["-1", "1"]);
    let w = write(&dir, "w.txt", "  2.0000000e+00   1.5   2.5\n  1.0000000e+00  -1  -2\n");
    let ds = load_ucr(&w, None, MissingValues::Reject).unwrap();
    assert_eq!(ds.labels().unwrap(), [1, 0]);
    assert_eq!(ds.series(0), [1.5, 2.5]);
}

#[test]
fn labels_sort_numerically() {
    let raw: Vec<String> = ["10", "2", "2.0", "-3"].map(String::from).to_vec();
    let ds = TimeSeriesDataset::new("x", vec![vec![0.0]; 4], Some(raw)).unwrap();
    assert_eq!(ds.labels().unwrap(), [2, 1, 1, 0]);
    assert_eq!(ds.num_classes(), 3);
}

#[test]
fn parse_errors_carry_positions() {
    let dir = TempDir::new().unwrap();
    let ragged = write(&dir, "r.tsv", "1\t1\t2\t3\n2\t1\t2\n");
    match load_ucr(&ragged, None, MissingValues::Reject).unwrap_err() {
        Error::Parse { line, column, .. } => assert_eq!((line, column), (2, None)),
        e => panic!("{e}"),
    }
    let bad = write(&dir, "b.tsv", "1\t1\t2\n1\t1\tabc\n");
    match load_ucr(&bad, None, MissingValues::Reject).unwrap_err() {
        Error::Parse { line, column, .. } => assert_eq!((line, column), (2, Some(3))),
        e => panic!("{e}"),
    }
    let empty = write(&dir, "e.tsv", "");
    let err = load_ucr(&empty, None, MissingValues::Reject).unwrap_err();
    assert!(matches!(err, Error::Parse { .. }));
    assert_eq!(err.class(), ErrorClass::Data);

    let missing = load_ucr(dir.path().join("nope.tsv"), None, MissingValues::Reject).unwrap_err();
    assert!(missing.to_string().contains("nope.tsv"));
}

#[test]
fn missing_values_are_interpolated_or_rejected() {
    let dir = TempDir::new().unwrap();
    let p = write(&dir, "m.tsv", "1\tNaN\t1\tNaN\t3\tNaN\n2\t1\t1\t1\t1\t1\n");
    let ds = load_ucr(&p, None, MissingValues::Interpolate).unwrap();
    assert_eq!(ds.series(0), [1.0, 1.0, 2.0, 3.0, 3.0]);
    let err = load_ucr(&p, None, MissingValues::Reject).unwrap_err();
    assert!(
        matches!(
            err,
            Error::Parse {
                line: 1,
                column: Some(2),
                ..
            }
        ),
        "{err}"
    );
    let all = write(&dir, "a.tsv", "1\tNaN\tNaN\n");
    assert!(load_ucr(&all, None, MissingValues::Interpolate).is_err());
}

#[test]
fn train_and_test_files_concatenate() {
    let dir = TempDir::new().unwrap();
    let a = write(&dir, "D_TRAIN.tsv", "1\t1\t2\n3\t3\t4\n");
    let b = write(&dir, "D_TEST.tsv", "2\t5\t6\n1\t7\t8\n");
    let ds = load_ucr_pair(&a, &b, None, MissingValues::Reject).unwrap();
    assert_eq!(ds.len(), 4);
    assert_eq!(ds.label_map(), ["1", "2", "3"]);
    assert_eq!(ds.labels().unwrap(), [0, 2, 1, 0]);
    assert_eq!(ds.original_train_len, Some(2));
}

#[test]
fn unlabeled_matrix() {
    let dir = TempDir::new().unwrap();
    let p = write(&dir, "seg.csv", "1,2,3\n4,5,6\n");
    let ds = load_matrix(&p, None, MissingValues::Reject).unwrap();
    assert!(ds.labels().is_none());
    assert_eq!(ds.series(1), [4.0, 5.0, 6.0]);
    assert!(ds.require_labels("linear evaluation").is_err());
}

#[test]
fn saved_files_read_back_exactly() {
    let dir = TempDir::new().unwrap();
    let ds = synthetic_dataset(12, 40, 0.1, SyntheticVariant::A, 3).unwrap();
    let p = dir.path().join("s.tsv");
    save_ucr(&ds, &p).unwrap();
    let back = load_ucr(&p, None, MissingValues::Reject).unwrap();
    assert_eq!(back.labels(), ds.labels());
    assert_eq!(back.label_map(), ds.label_map());
    assert!(back.rows().zip(ds.rows()).all(|(a, b)| a == b));
}

/// Optional check against the real archive files.
#[test]
fn cricket_x_statistics_when_available() {
    let Ok(dir) = std::env::var("SELFTIME_UCR_DIR") else {
        eprintln!("SELFTIME_UCR_DIR not set; skipping CricketX statistics");
        return;
    };
    let base = std::path::Path::new(&dir).join("CricketX");
    let ds = load_ucr_pair(
        base.join("CricketX_TRAIN.tsv"),
        base.join("CricketX_TEST.tsv"),
        None,
        MissingValues::Interpolate,
    )
    .unwrap();
    assert_eq!((ds.len(), ds.series_len(), ds.num_classes()), (780, 300, 12));
}

#[test]
fn znormalize_cases() {
    let ds = TimeSeriesDataset::new("z", vec![vec![1.0, 2.0, 3.0], vec![4.0, 4.0, 4.0]], None).unwrap();
    let z = znormalize(&ds);
    assert!(z.normalized);
    let s = z.series(0);
    let mean = s.iter().sum::<f64>() / 3.0;
    let std = (s.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 3.0).sqrt();
    assert!(mean.abs() < 1e-9 && (std - 1.0).abs() < 1e-9);
    assert_eq!(z.series(1), [0.0, 0.0, 0.0]);
}

fn sample_checkpoint() -> ModelCheckpoint {
    let model = SelfTimeModel::<f32>::new(3, 7).unwrap();
    let mut ckpt = ModelCheckpoint::from_model(&model);
    ckpt.set_meta("dataset", "Toy = data\nwith newline \\ slash");
    ckpt.set_meta("piece_ratio", 0.2);
    ckpt.push(
        "extra.f64",
        vec![2, 2],
        ArrayData::F64(vec![1.0, f64::MIN_POSITIVE, -0.0, 1e300]),
    );
    ckpt
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let dir = TempDir::new().unwrap();
    let ckpt = sample_checkpoint();
    let p = dir.path().join("m.stck");
    save_checkpoint(&ckpt, &p).unwrap();
    let back = load_checkpoint(&p).unwrap();
    assert_eq!(back.metadata, ckpt.metadata);
    assert_eq!(back.entries.len(), ckpt.entries.len());
    for (a, b) in back.entries.iter().zip(&ckpt.entries) {
        assert_eq!((&a.name, &a.dims), (&b.name, &b.dims));
        match (&a.data, &b.data) {
            (ArrayData::F32(x), ArrayData::F32(y)) => {
                assert!(x.iter().zip(y).all(|(p, q)| p.to_bits() == q.to_bits()))
            }
            (ArrayData::F64(x), ArrayData::F64(y)) => {
                assert!(x.iter().zip(y).all(|(p, q)| p.to_bits() == q.to_bits()))
            }
            _ => panic!("dtype changed for {}", a.name),
        }
    }
    let h1 = Sha256::digest(std::fs::read(&p).unwrap());
    let h2 = Sha256::digest(back.to_bytes().unwrap());
    assert_eq!(h1, h2);
}

#[test]
fn checkpoint_rebuilds_model_and_optimizer() {
    let model = SelfTimeModel::<f32>::new(4, 9).unwrap();
    let mut adam = Adam::<f32>::new(AdamConfig::with_lr(0.01));
    adam.step_count = 3;
    adam.m.insert("backbone.conv1.bias".into(), vec![0.5; 8]);
    adam.v.insert("backbone.conv1.bias".into(), vec![0.25; 8]);
    let mut ckpt = ModelCheckpoint::from_model(&model);
    ckpt.store_optimizer(&adam);
    let back = ModelCheckpoint::from_bytes(&ckpt.to_bytes().unwrap()).unwrap();
    assert_eq!(back.to_model::<f32>().unwrap(), model);
    assert_eq!(back.optimizer::<f32>(AdamConfig::with_lr(0.01)).unwrap().unwrap(), adam);
    assert!(ModelCheckpoint::from_model(&model)
        .optimizer::<f32>(AdamConfig::default())
        .unwrap()
        .is_none());

    let mut missing = ckpt.clone();
    missing.entries.retain(|e| e.name != "backbone.bn2.gamma");
    assert!(missing
        .to_model::<f32>()
        .unwrap_err()
        .to_string()
        .contains("backbone.bn2.gamma"));
}

#[test]
fn checkpoint_rejects_bad_files() {
    let bytes = sample_checkpoint().to_bytes().unwrap();

    let mut bad = bytes.clone();
    bad[..4].copy_from_slice(b"XXXX");
    assert!(matches!(ModelCheckpoint::from_bytes(&bad), Err(Error::Format(_))));

    let mut future = bytes.clone();
    future[4..8].copy_from_slice(&999u32.to_le_bytes());
    assert!(matches!(
        ModelCheckpoint::from_bytes(&future),
        Err(Error::UnsupportedVersion {
            found: 999,
            supported: 1
        })
    ));

    match ModelCheckpoint::from_bytes(&bytes[..bytes.len() - 3]) {
        Err(Error::Corrupt { entry, .. }) => assert_eq!(entry, "extra.f64"),
        other => panic!("{other:?}"),
    }
    let mut trailing = bytes.clone();
    trailing.push(0);
    assert!(matches!(ModelCheckpoint::from_bytes(&trailing), Err(Error::Format(_))));
    assert!(ModelCheckpoint::from_bytes(b"ST").is_err());
}

#[test]
fn embeddings_csv_layout() {
    let ckpt = ModelCheckpoint::from_model(&SelfTimeModel::<f32>::new(3, 1).unwrap());
    let ds = synthetic_dataset(9, 32, 0.1, SyntheticVariant::A, 0).unwrap();
    let csv = embeddings_csv(&ckpt, &ds).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 10);
    assert!(lines[0].starts_with("id,label,f0,f1"));
    assert!(lines[0].ends_with(",f63"));
    for (i, line) in lines[1..].iter().enumerate() {
        let cells: Vec<&str> = line.split(',').collect();
        assert_eq!(cells.len(), 66);
        assert_eq!(cells[0], i.to_string());
        assert!(SYNTHETIC_CLASSES.contains(&cells[1]));
        let norm = cells[2..]
            .iter()
            .map(|c| c.parse::<f64>().unwrap().powi(2))
            .sum::<f64>()
            .sqrt();
        assert!((norm - 1.0).abs() < 1e-5);
    }
    let unlabeled = embeddings_csv(&ckpt, &ds.without_labels()).unwrap();
    assert!(unlabeled.lines().skip(1).all(|l| l.split(',').nth(1) == Some("NA")));

    let dir = TempDir::new().unwrap();
    let err = export_embeddings(&ckpt, &ds, dir.path().join("missing/dir/e.csv")).unwrap_err();
    assert!(err.to_string().contains("e.csv"));
}

#[test]
fn config_defaults_and_overrides() {
    let cfg = TrainConfig::from_toml("").unwrap();
    assert_eq!(cfg, TrainConfig::default());
    assert_eq!((cfg.epochs, cfg.batch_size, cfg.views), (400, 128, 16));
    assert_eq!((cfg.lr_pretrain, cfg.lr_linear, cfg.eval_epochs), (0.01, 0.5, 400));

    let dld = TrainConfig::from_toml("piece_ratio = 0.35\nC = 5\n").unwrap();
    assert_eq!((dld.classes, dld.piece_ratio), (5, 0.35));
    let preset = TrainConfig::from_toml("preset = \"DodgerLoopDay\"\n").unwrap();
    assert_eq!((preset.classes, preset.piece_ratio), (5, 0.35));
    let over = TrainConfig::from_toml("preset = \"IWS\"\nclasses = 2\nviews = 4\n").unwrap();
    assert_eq!((over.classes, over.piece_ratio, over.views), (2, 0.4, 4));

    let policy = TrainConfig::from_toml("[[policy]]\nkind = \"jitter\"\nsigma = 0.1\n").unwrap();
    assert_eq!(
        policy.policy.steps,
        vec![crate::augment::Augmentation::Jitter { sigma: 0.1 }]
    );

    let base = TrainConfig {
        seed: 42,
        epochs: 7,
        ..TrainConfig::default()
    };
    let layered = TrainConfig::from_toml_over("epochs = 9\npreset = \"MFPT\"\n", &base).unwrap();
    assert_eq!((layered.seed, layered.epochs, layered.classes), (42, 9, 4));

    let back = TrainConfig::from_toml(&over.to_toml()).unwrap();
    assert_eq!(back, over);
}

#[test]
fn config_errors() {
    for (text, needle) in [
        ("epochs = -1", "epochs"),
        ("epoch = 3", "epoch"),
        ("batch_size = \"big\"", "batch_size"),
        ("C = 1", "C"),
        ("piece_ratio = 1.5", "piece_ratio"),
        ("preset = \"Nope\"", "Nope"),
        ("[[policy]]\nkind = \"blur\"", "blur"),
    ] {
        let err = TrainConfig::from_toml(text).unwrap_err();
        assert_eq!(err.class(), ErrorClass::Config, "{text}");
        assert!(err.to_string().contains(needle), "{text}: {err}");
    }
}

#[test]
fn presets_cover_the_benchmarks() {
    assert_eq!(dataset_preset("CricketX"), Some((3, 0.2)));
    assert_eq!(dataset_preset("ugla"), Some((4, 0.2)));
    assert_eq!(dataset_preset("DLD"), Some((5, 0.35)));
    assert_eq!(dataset_preset("InsectWingbeatSound"), Some((6, 0.4)));
    assert_eq!(dataset_preset("mfpt"), Some((4, 0.2)));
    assert_eq!(dataset_preset("XJTU"), Some((4, 0.2)));
    assert_eq!(dataset_preset("ECG200"), None);
}

#[test]
fn synthetic_data_is_balanced_and_seeded() {
    let a = synthetic_dataset(240, 128, 0.1, SyntheticVariant::A, 5).unwrap();
    assert_eq!((a.len(), a.series_len(), a.num_classes()), (240, 128, 3));
    for c in 0..3 {
        assert_eq!(a.labels().unwrap().iter().filter(|&&l| l == c).count(), 80);
    }
    assert_eq!(a, synthetic_dataset(240, 128, 0.1, SyntheticVariant::A, 5).unwrap());
    assert_ne!(a, synthetic_dataset(240, 128, 0.1, SyntheticVariant::A, 6).unwrap());
    let b = synthetic_dataset(240, 128, 0.1, SyntheticVariant::B, 5).unwrap();
    assert_ne!(a.series(0), b.series(0));
}

mod props {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn remapping_keeps_class_counts(raw in proptest::collection::vec(-3i32..4, 1..60)) {
            let text: Vec<String> = raw.iter().map(|v| v.to_string()).collect();
            let ds = TimeSeriesDataset::new("p", vec![vec![0.0]; raw.len()], Some(text)).unwrap();
            let labels = ds.labels().unwrap();
            for (i, name) in ds.label_map().iter().enumerate() {
                let original = raw.iter().filter(|v| v.to_string() == *name).count();
                prop_assert_eq!(labels.iter().filter(|&&l| l == i).count(), original);
            }
            prop_assert!(labels.iter().all(|&l| l < ds.num_classes()));
        }

        #[test]
        fn znormalize_is_idempotent(rows in proptest::collection::vec(proptest::collection::vec(-1e3f64..1e3, 8), 1..6)) {
            let ds = TimeSeriesDataset::new("p", rows, None).unwrap();
            let once = znormalize(&ds);
            let twice = znormalize(&once);
            for (a, b) in once.rows().zip(twice.rows()) {
                for (x, y) in a.iter().zip(b) {
                    prop_assert!((x - y).abs() < 1e-6);
                }
            }
        }

        #[test]
        fn gap_filling_keeps_observed_values(row in proptest::collection::vec(proptest::option::of(-5.0f64..5.0), 1..40)) {
            prop_assume!(row.iter().any(Option::is_some));
            let mut filled: Vec<f64> = row.iter().map(|v| v.unwrap_or(f64::NAN)).collect();
            prop_assert!(fill_gaps(&mut filled));
            for (f, o) in filled.iter().zip(&row) {
                prop_assert!(f.is_finite());
                if let Some(o) = o {
                    prop_assert_eq!(f, o);
                }
            }
        }
    }
}
