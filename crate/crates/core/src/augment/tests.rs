use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;

fn ramp(n: usize) -> Vec<f64> {
    (0..n).map(|i| i as f64 / n as f64).collect()
}

fn wave(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| (i as f64 * 0.21).sin() + 0.3 * (i as f64 * 0.05).cos())
        .collect()
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn jitter_zero_sigma_is_identity() {
    let x = wave(100);
    assert_eq!(jitter(&x, 0.0, &mut rng(1)), x);
}

#[test]
fn jitter_noise_has_requested_std() {
    let x = vec![0.0; 100_000];
    let y = jitter(&x, 0.2, &mut rng(2));
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let std = (y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / y.len() as f64).sqrt();
    assert!((std - 0.2).abs() < 0.01 * 0.2, "std {std}");
}

#[test]
fn scaling_cases() {
    let x = wave(64);
    assert_eq!(scaling(&x, 0.0, false, &mut rng(3)), x);
    let doubled = scale_by(&x, 2.0);
    assert!(doubled.iter().zip(&x).all(|(d, v)| *d == 2.0 * v));

    let mut r = rng(4);
    let draws: Vec<f64> = (0..100_000).map(|_| draw_scale(0.4, false, &mut r)).collect();
    let mean = draws.iter().sum::<f64>() / draws.len() as f64;
    let std = (draws.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / draws.len() as f64).sqrt();
    assert!((mean - 1.0).abs() < 0.01, "mean {mean}");
    assert!((std - 0.4).abs() < 0.01 * 0.4, "std {std}");

    let zero_mean: f64 = (0..100_000).map(|_| draw_scale(0.4, true, &mut r)).sum::<f64>() / 1e5;
    assert!(zero_mean.abs() < 0.01);
}

#[test]
fn cutout_zeroes_one_segment() {
    let x: Vec<f64> = (0..100).map(|i| i as f64 + 1.0).collect();
    let y = cutout(&x, 0.1, &mut rng(5));
    let zeros: Vec<usize> = (0..100).filter(|&i| y[i] == 0.0).collect();
    assert_eq!(zeros.len(), 10);
    assert!(zeros.windows(2).all(|w| w[1] == w[0] + 1));
    for i in 0..100 {
        if !zeros.contains(&i) {
            assert_eq!(y[i], x[i]);
        }
    }
    assert_eq!(cutout(&vec![0.0; 40], 0.1, &mut rng(6)), vec![0.0; 40]);
    for t in [50, 288, 1024] {
        let x: Vec<f64> = (0..t).map(|i| 1.0 + i as f64).collect();
        let y = cutout(&x, 0.1, &mut rng(t as u64));
        let changed = x.iter().zip(&y).filter(|(a, b)| a != b).count();
        assert_eq!(changed, (0.1 * t as f64).floor() as usize);
    }
}

#[test]
fn magnitude_warp_cases() {
    let x = wave(120);
    let y = magnitude_warp(&x, 4, 0.0, &mut rng(7));
    assert!(max_abs_diff(&x, &y) < 1e-12);

    let knots = [1.3, 0.8, 1.1, 0.95];
    let curve = warp_curve(100, &knots);
    for (i, k) in knots.iter().enumerate() {
        let pos = 99.0 * i as f64 / 3.0;
        let s = NaturalCubicSpline::evenly_spaced(99.0, knots.to_vec());
        assert!((s.eval(pos) - k).abs() < 1e-9);
    }
    assert_eq!(magnitude_warp_with(&vec![1.0; 100], &knots), curve);
}

#[test]
fn time_warp_cases() {
    let x = wave(200);
    let y = time_warp(&x, 8, 0.0, &mut rng(8));
    assert!(max_abs_diff(&x, &y) < 1e-6);

    let c = vec![2.5; 77];
    assert!(time_warp(&c, 8, 0.2, &mut rng(9))
        .iter()
        .all(|&v| (v - 2.5).abs() < 1e-12));

    for seed in 0..20 {
        let y = time_warp(&x, 8, 0.2, &mut rng(seed));
        assert_eq!(y[0], x[0]);
        assert_eq!(y[199], x[199]);
    }
    let path = time_warp_path(50, &[0.7, 1.4, 0.9, 1.2]);
    assert_eq!(path[0], 0.0);
    assert_eq!(path[49], 49.0);
    assert!(path.windows(2).all(|w| w[1] > w[0]));
}

#[test]
fn time_warp_clamps_negative_speed() {
    let x = wave(64);
    let y = time_warp_with(&x, &[-3.0, -2.0, 4.0, -1.0]);
    assert_eq!(y.len(), 64);
    assert!(y.iter().all(|v| v.is_finite()));
}

#[test]
fn window_slice_cases() {
    let x = wave(90);
    assert_eq!(window_slice(&x, 1.0, &mut rng(10)), x);
    assert!(window_slice(&vec![4.0; 90], 0.8, &mut rng(11))
        .iter()
        .all(|&v| (v - 4.0).abs() < 1e-12));
    let r = ramp(300);
    for seed in 0..10 {
        let y = window_slice(&r, 0.8, &mut rng(seed));
        assert!(y.windows(2).all(|w| w[1] >= w[0]));
    }
}

#[test]
fn window_warp_cases() {
    let c = vec![-1.5; 256];
    assert!(window_warp(&c, 0.3, &[0.5, 2.0], &mut rng(12))
        .iter()
        .all(|&v| (v + 1.5).abs() < 1e-12));
    for t in [256, 300, 945] {
        assert_eq!(window_warp(&wave(t), 0.3, &[0.5, 2.0], &mut rng(t as u64)).len(), t);
    }
    let x = wave(300);
    let y = window_warp_at(&x, 40, 90, 1.0);
    assert!(max_abs_diff(&x, &y) < 1e-6);
}

#[test]
fn policy_identity_when_noise_free() {
    let policy = AugmentationPolicy::new(vec![
        Augmentation::Jitter { sigma: 0.0 },
        Augmentation::Scaling {
            sigma: 0.0,
            mean_zero: false,
        },
        Augmentation::MagnitudeWarp { knots: 4, sigma: 0.0 },
        Augmentation::TimeWarp { knots: 8, sigma: 0.0 },
        Augmentation::WindowSlice { keep_ratio: 1.0 },
        Augmentation::WindowWarp {
            window_ratio: 0.3,
            factors: vec![1.0],
        },
    ])
    .unwrap();
    let x = wave(150);
    let y = policy.apply(&x, RngStream::new(1, 2));
    assert!(max_abs_diff(&x, &y) < 1e-6);
}

#[test]
fn policy_is_deterministic_per_stream() {
    let policy = AugmentationPolicy::default();
    let x = wave(128);
    let a = policy.apply(&x, RngStream::new(5, 9));
    let b = policy.apply(&x, RngStream::new(5, 9));
    assert_eq!(a, b);
    let views: Vec<Vec<f64>> = (0..16)
        .map(|v| policy.apply(&x, RngStream::derive(5, &[crate::rng::tag::VIEW, 0, 3, v])))
        .collect();
    for i in 0..16 {
        for j in i + 1..16 {
            assert_ne!(views[i], views[j]);
        }
    }
}

#[test]
fn validation_rejects_bad_parameters() {
    assert!(AugmentationPolicy::new(vec![]).is_err());
    for bad in [
        Augmentation::Cutout { ratio: 1.0 },
        Augmentation::Cutout { ratio: 0.0 },
        Augmentation::MagnitudeWarp { knots: 1, sigma: 0.3 },
        Augmentation::TimeWarp { knots: 8, sigma: -0.1 },
        Augmentation::WindowSlice { keep_ratio: 1.2 },
        Augmentation::WindowWarp {
            window_ratio: 0.3,
            factors: vec![0.5, 0.0],
        },
        Augmentation::WindowWarp {
            window_ratio: 0.3,
            factors: vec![],
        },
    ] {
        assert!(bad.validate().is_err(), "{bad:?}");
    }
    assert!(Augmentation::from_name("frequency_mask").is_err());
}

#[test]
fn policy_round_trips_through_toml() {
    #[derive(Serialize, Deserialize)]
    struct Doc {
        policy: AugmentationPolicy,
    }
    let text = r#"
        [[policy]]
        kind = "scaling"
        sigma = 0.5

        [[policy]]
        kind = "window_warp"
    "#;
    let doc: Doc = toml::from_str(text).unwrap();
    assert_eq!(
        doc.policy.steps,
        vec![
            Augmentation::Scaling {
                sigma: 0.5,
                mean_zero: false
            },
            Augmentation::WindowWarp {
                window_ratio: 0.3,
                factors: vec![0.5, 2.0]
            },
        ]
    );
    let bad = "[[policy]]\nkind = \"cutout\"\nratoi = 0.2\n";
    assert!(toml::from_str::<Doc>(bad).is_err());
}

mod props {
    use super::*;
    use proptest::prelude::*;

    fn any_augmentation() -> impl Strategy<Value = Augmentation> {
        prop_oneof![
            (0.0f64..1.0).prop_map(|sigma| Augmentation::Jitter { sigma }),
            (0.0f64..1.0, any::<bool>()).prop_map(|(sigma, mean_zero)| Augmentation::Scaling { sigma, mean_zero }),
            (0.01f64..0.99).prop_map(|ratio| Augmentation::Cutout { ratio }),
            (2usize..10, 0.0f64..1.0).prop_map(|(knots, sigma)| Augmentation::MagnitudeWarp { knots, sigma }),
            (2usize..10, 0.0f64..1.0).prop_map(|(knots, sigma)| Augmentation::TimeWarp { knots, sigma }),
            (0.05f64..=1.0).prop_map(|keep_ratio| Augmentation::WindowSlice { keep_ratio }),
            (0.05f64..0.95, proptest::collection::vec(0.1f64..4.0, 1..4))
                .prop_map(|(window_ratio, factors)| Augmentation::WindowWarp { window_ratio, factors }),
        ]
    }

    proptest! {
        #[test]
        fn every_transform_preserves_length(aug in any_augmentation(), len in 2usize..400, seed in any::<u64>()) {
            let x = wave(len);
            let y = aug.apply(&x, &mut rng(seed));
            prop_assert_eq!(y.len(), len);
            prop_assert!(y.iter().all(|v| v.is_finite()));
        }
    }
}
