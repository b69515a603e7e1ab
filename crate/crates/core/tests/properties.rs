use kmotion_core::metrics::{percentage_error, spearman};
use kmotion_core::motion::{convolution_route, corrupt, MotionTrajectory, RigidMotion};
use kmotion_core::nn::{mse_loss, Tensor4};
use kmotion_core::preprocess::{denormalize, normalize, ForegroundMask};
use kmotion_core::volume::{fft3_centered, ifft3_centered, Volume};
use proptest::prelude::*;

fn volume() -> impl Strategy<Value = Volume> {
    (1usize..7, 1usize..7, 1usize..7).prop_flat_map(|(a, b, c)| {
        prop::collection::vec(-10.0f64..10.0, a * b * c).prop_map(move |d| {
            let mut it = d.into_iter();
            Volume::from_fn([a, b, c], |_, _, _| it.next().unwrap()).unwrap()
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fft_round_trip(v in volume()) {
        let back = ifft3_centered(&fft3_centered(&v).unwrap()).unwrap();
        for (z, x) in back.data().iter().zip(v.data()) {
            prop_assert!((z.re - x).abs() < 1e-10 && z.im.abs() < 1e-10);
        }
    }

    #[test]
    fn normalization_round_trip(v in volume(), offset in 0.0f64..5.0) {
        let v = v.with_data(v.data().iter().map(|x| x.abs() + offset).collect()).unwrap();
        prop_assume!(v.data().iter().any(|&x| (x - v.data()[0]).abs() > 1e-6));
        let mask = ForegroundMask::full(v.dims());
        let (n, rec) = normalize(&v, &mask).unwrap();
        let back = denormalize(&n, &rec, &mask).unwrap();
        for (a, b) in back.data().iter().zip(v.data()) {
            prop_assert!((a - b).abs() < 1e-9 * b.abs().max(1.0));
        }
    }

    #[test]
    fn routes_agree_for_any_single_event(
        line in 1usize..12,
        t in prop::array::uniform3(-3.0f64..3.0),
        r in prop::array::uniform3(-5.0f64..5.0),
        seed in 0u64..1000,
    ) {
        let mut s = seed;
        let v = Volume::from_fn([12, 6, 5], |_, _, _| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (s >> 11) as f64 / (1u64 << 53) as f64
        }).unwrap();
        let traj = MotionTrajectory::with_events(12, &[(line, RigidMotion::new(t, r))]).unwrap();
        let (_, a) = corrupt(&v, &traj).unwrap();
        let b = convolution_route(&v, &traj).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            prop_assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn loss_is_quadratic_in_the_residual(
        target in prop::collection::vec(-1.0f64..1.0, 16),
        resid in prop::collection::vec(-1.0f64..1.0, 16),
        k in 0.1f64..4.0,
    ) {
        let t = Tensor4::new([1, 1, 4, 4], target.clone()).unwrap();
        let out = |s: f64| Tensor4::new([1, 1, 4, 4], target.iter().zip(&resid).map(|(a, b)| a + s * b).collect()).unwrap();
        let l1 = mse_loss(&out(1.0), &t).unwrap();
        let lk = mse_loss(&out(k), &t).unwrap();
        prop_assert!((lk - k * k * l1).abs() <= 1e-9 * lk.max(1e-12));
    }

    #[test]
    fn rank_correlation_ignores_monotone_maps(a in prop::collection::vec(-5.0f64..5.0, 3..30), b in prop::collection::vec(-5.0f64..5.0, 30)) {
        let b = &b[..a.len()];
        if let Ok(r) = spearman(&a, b) {
            let mapped: Vec<f64> = a.iter().map(|x| x.exp()).collect();
            prop_assert!((spearman(&mapped, b).unwrap() - r).abs() < 1e-12);
            prop_assert!((-1.0..=1.0).contains(&r));
        }
    }

    #[test]
    fn percentage_error_scales_with_deviation(reference in prop::collection::vec(0.5f64..2.0, 20), dev in prop::collection::vec(-1.0f64..1.0, 20)) {
        let mask = vec![true; 20];
        let out: Vec<f64> = reference.iter().zip(&dev).map(|(r, d)| r + d).collect();
        let double: Vec<f64> = reference.iter().zip(&dev).map(|(r, d)| r + 2.0 * d).collect();
        let e1 = percentage_error(&out, &reference, &mask).unwrap();
        let e2 = percentage_error(&double, &reference, &mask).unwrap();
        prop_assert!(e1 >= 0.0);
        prop_assert!((e2 - 2.0 * e1).abs() < 1e-9 * e2.max(1.0));
        prop_assert_eq!(percentage_error(&reference, &reference, &mask).unwrap(), 0.0);
    }
}
