use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;

/// Threshold scan straight from the bucket definition.
fn scan_label(len: usize, classes: usize, u: usize, v: usize) -> usize {
    let width = len / classes;
    let d = u.abs_diff(v);
    for c in 1..classes {
        if d <= c * width {
            return c - 1;
        }
    }
    classes - 1
}

#[test]
fn label_examples() {
    assert_eq!(temporal_label(300, 3, 10, 90).unwrap(), 0);
    assert_eq!(temporal_label(300, 3, 0, 250).unwrap(), 2);
    assert_eq!(temporal_label(300, 3, 0, 100).unwrap(), 0);
    assert_eq!(temporal_label(300, 3, 0, 101).unwrap(), 1);
    assert_eq!(temporal_label(300, 3, 200, 0).unwrap(), 1);
    for (t, c) in [(10, 2), (300, 7), (17, 17)] {
        assert_eq!(temporal_label(t, c, 4, 4).unwrap(), 0);
    }
}

#[test]
fn label_errors() {
    assert!(temporal_label(300, 1, 0, 0).is_err());
    assert!(temporal_label(3, 4, 0, 0).is_err());
}

#[test]
fn histogram_matches_direct_enumeration() {
    for (t, c, l) in [(300, 3, 60), (128, 5, 26), (40, 8, 16), (20, 2, 20)] {
        let m = t - l;
        let mut brute = vec![0u64; c];
        for u in 0..=m {
            for v in 0..=m {
                brute[scan_label(t, c, u, v)] += 1;
            }
        }
        assert_eq!(label_histogram(t, c, l).unwrap(), brute);
    }
}

#[test]
fn full_length_pieces() {
    let x: Vec<f64> = (0..32).map(|i| i as f64).collect();
    let cfg = TemporalRelationConfig::new(3, 0.999);
    let p = sample_piece_pair(&x, &cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert_eq!((p.start_u, p.start_v, p.label), (0, 0, 0));
    assert_eq!(p.piece_u, x);
}

#[test]
fn pieces_are_slices_of_parent() {
    let x: Vec<f64> = (0..300).map(|i| (i as f64 * 0.1).sin()).collect();
    let cfg = TemporalRelationConfig::new(3, 0.2);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..100 {
        let p = sample_piece_pair(&x, &cfg, &mut rng).unwrap();
        assert_eq!(p.piece_u.len(), 60);
        assert_eq!(p.piece_u, &x[p.start_u..p.start_u + 60]);
        assert_eq!(p.piece_v, &x[p.start_v..p.start_v + 60]);
        assert_eq!(p.label, scan_label(300, 3, p.start_u, p.start_v));
        assert!(p.start_u <= 240 && p.start_v <= 240);
    }
}

#[test]
fn stratified_sampling_balances_labels() {
    let x = vec![0.0; 300];
    let mut cfg = TemporalRelationConfig::new(3, 0.2);
    cfg.stratified = true;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut counts = [0usize; 3];
    for _ in 0..30_000 {
        let p = sample_piece_pair(&x, &cfg, &mut rng).unwrap();
        assert_eq!(p.label, scan_label(300, 3, p.start_u, p.start_v));
        counts[p.label] += 1;
    }
    for c in counts {
        assert!((c as f64 / 30_000.0 - 1.0 / 3.0).abs() < 0.02, "{counts:?}");
    }
}

#[test]
fn unreachable_last_label_is_skipped_when_stratified() {
    // T=100, C=3, L=60: max distance 40 > D=33 → labels 0 and 1 only
    let x = vec![0.0; 100];
    let mut cfg = TemporalRelationConfig::new(3, 0.6);
    cfg.stratified = true;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..500 {
        assert!(sample_piece_pair(&x, &cfg, &mut rng).unwrap().label < 2);
    }
}

fn batch(n: usize, k: usize) -> InterSampleBatch {
    let series: Vec<Vec<f64>> = (0..n)
        .map(|m| (0..32).map(|t| ((t + m) as f64 * 0.3).sin()).collect())
        .collect();
    let refs: Vec<&[f64]> = series.iter().map(|s| s.as_slice()).collect();
    let ids: Vec<usize> = (0..n).map(|i| 10 + i).collect();
    let streams = StepStreams {
        seed: 4,
        epoch: 0,
        step: 0,
    };
    build_inter_batch(&refs, &ids, k, &AugmentationPolicy::default(), &streams).unwrap()
}

#[test]
fn inter_batch_counts_and_polarity() {
    let b = batch(2, 2);
    assert_eq!(b.pair_count(), 16);
    assert_eq!(b.labels.iter().filter(|&&y| y == 1.0).count(), 8);
    for p in 0..b.pair_count() {
        let (ma, mb) = (b.pair_a[p] / 2, b.pair_b[p] / 2);
        if b.labels[p] == 1.0 {
            assert_eq!(ma, mb);
        } else {
            assert_ne!(ma, mb);
        }
    }
    for (n, k) in [(5, 3), (16, 4)] {
        let b = batch(n, k);
        assert_eq!(b.pair_count(), 2 * n * k * k);
        assert_eq!(b.views.len(), n * k * 32);
        for (a, p) in b.anchor_index.iter().zip(&b.partner_index) {
            assert_ne!(a, p);
        }
    }
}

#[test]
fn inter_batch_rejects_singletons() {
    let s = vec![0.0; 32];
    let streams = StepStreams {
        seed: 0,
        epoch: 0,
        step: 0,
    };
    assert!(build_inter_batch(&[&s], &[0], 4, &AugmentationPolicy::default(), &streams).is_err());
}

#[test]
fn derangement_has_no_fixed_points() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for n in 2..50 {
        let p = derangement(n, &mut rng);
        let mut sorted = p.clone();
        sorted.sort();
        assert_eq!(sorted, (0..n).collect::<Vec<_>>());
        assert!(p.iter().enumerate().all(|(i, &j)| i != j));
    }
}

mod props {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn label_agrees_with_scan(t in 2usize..2000, c in 2usize..20, a in 0.0f64..1.0, b in 0.0f64..1.0) {
            prop_assume!(t >= c);
            let (u, v) = ((a * t as f64) as usize, (b * t as f64) as usize);
            let l = temporal_label(t, c, u, v).unwrap();
            prop_assert_eq!(l, scan_label(t, c, u, v));
            prop_assert!(l < c);
        }
    }
}
