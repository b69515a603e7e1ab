use kmotion_core::motion::{corrupt, MotionTrajectory, RigidMotion};
use kmotion_core::nn::layers::{self, Act, ConvWeights};
use kmotion_core::nn::{
    build_network, correct, dropout_mask, forward, infer, read_loss_history, read_weights, train, write_loss_history,
    write_weights, Dataset, Mode, NetworkConfig, Tensor4, TrainConfig,
};
use kmotion_core::phantom::{generate, random_spec, PhantomConfig};
use kmotion_core::preprocess::{estimate_foreground, normalize, ForegroundConfig};
use kmotion_core::volume::Image2D;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tiny() -> NetworkConfig {
    NetworkConfig { levels: 1, channels: vec![4], ..Default::default() }
}

/// Normalized (corrupted, clean) middle slices of a random phantom.
fn phantom_pair(seed: u64, n: usize) -> (Image2D, Image2D) {
    let clean = generate(&random_spec(seed, &PhantomConfig::default()).unwrap(), [n, n, 12]).unwrap();
    let t = MotionTrajectory::with_events(n, &[(n / 2 + 3, RigidMotion::new([1.5, -1.0, 0.0], [0.0, 0.0, 4.0]))]).unwrap();
    let (_, moved) = corrupt(&clean, &t).unwrap();
    let fg = ForegroundConfig::default();
    let (cn, _) = normalize(&clean, &estimate_foreground(&clean, &fg).unwrap()).unwrap();
    let (mn, _) = normalize(&moved, &estimate_foreground(&moved, &fg).unwrap()).unwrap();
    (mn.extract_slice(2, 6).unwrap(), cn.extract_slice(2, 6).unwrap())
}

#[test]
fn output_shape_matches_input_and_inference_is_deterministic() {
    let p = build_network(&NetworkConfig { levels: 2, channels: vec![4, 8], ..Default::default() }, 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = Tensor4::new([3, 1, 16, 12], (0..576).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap();
    let a = infer(&p, &x).unwrap();
    assert_eq!(a.shape(), x.shape());
    assert_eq!(a, infer(&p, &x).unwrap());
    let img = Image2D::from_fn(16, 16, |r, c| (r * c) as f64 / 256.0).unwrap();
    let out = correct(&p, &img).unwrap();
    assert_eq!((out.height(), out.width()), (16, 16));
    assert_eq!(out, correct(&p, &img).unwrap());
    assert!(correct(&p, &Image2D::from_fn(10, 16, |_, _| 0.0).unwrap()).is_err());
}

#[test]
fn dropout_zeroes_a_fifth_of_each_decoder_activation() {
    let p = build_network(&tiny(), 0).unwrap();
    let x = Tensor4::new([1, 1, 8, 8], vec![0.5; 64]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut zeros: Vec<(String, usize, usize)> = Vec::new();
    for _ in 0..160 {
        let f = forward(&p, &x, Mode::Train, &mut rng, &[]).unwrap();
        for (i, (name, mask)) in f.cache.dropout_masks(&p, 0).into_iter().enumerate() {
            if zeros.len() <= i {
                zeros.push((name, 0, 0));
            }
            zeros[i].1 += mask.iter().filter(|&&m| m == 0.0).count();
            zeros[i].2 += mask.len();
        }
    }
    assert_eq!(zeros.len(), 6);
    for (name, z, n) in zeros {
        assert!(n >= 10_000, "{name}: only {n} draws");
        let frac = z as f64 / n as f64;
        assert!((frac - 0.2).abs() <= 0.01, "{name}: zeroed fraction {frac}");
    }
}

#[test]
fn inverted_dropout_preserves_expectation_through_linear_layer() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = Act::new(2, 4, 4, (0..32).map(|_| rng.random_range(0.0..1.0)).collect());
    let w: Vec<f64> = (0..18).map(|_| rng.random_range(-1.0..1.0)).collect();
    let b = [0.1];
    let p = ConvWeights { in_ch: 2, out_ch: 1, weights: &w, bias: &b };
    let infer_out = layers::conv_forward(&x, &p).unwrap();
    let n = 20_000;
    let mut sum = vec![0.0; 16];
    let mut sq = vec![0.0; 16];
    for _ in 0..n {
        let mut d = x.clone();
        layers::dropout_apply(&mut d, &dropout_mask(&mut rng, 32, 0.2));
        let y = layers::conv_forward(&d, &p).unwrap();
        for i in 0..16 {
            sum[i] += y.data[i];
            sq[i] += y.data[i] * y.data[i];
        }
    }
    for i in 0..16 {
        let mean = sum[i] / n as f64;
        let sd = (sq[i] / n as f64 - mean * mean).max(0.0).sqrt();
        assert!(
            (mean - infer_out.data[i]).abs() < 5.0 * sd / (n as f64).sqrt() + 1e-12,
            "pixel {i}: train mean {mean} vs infer {}",
            infer_out.data[i]
        );
    }
}

#[test]
fn taps_return_named_feature_maps() {
    let p = build_network(&NetworkConfig { levels: 2, channels: vec![4, 8], ..Default::default() }, 0).unwrap();
    let x = Tensor4::new([2, 1, 8, 8], vec![0.3; 128]).unwrap();
    let f = forward(&p, &x, Mode::Infer, &mut ChaCha8Rng::seed_from_u64(0), &["dec1.conv2", "dec0.conv0"]).unwrap();
    assert_eq!(f.taps[0].0, "dec1.conv2");
    assert_eq!(f.taps[0].1.shape(), [2, 8, 4, 4]);
    assert_eq!(f.taps[1].1.shape(), [2, 4, 8, 8]);
    assert!(forward(&p, &x, Mode::Infer, &mut ChaCha8Rng::seed_from_u64(0), &["nope"]).is_err());
}

#[test]
fn single_pair_overfits() {
    let (input, target) = phantom_pair(11, 32);
    let mut d = Dataset::new(32, 32);
    d.push(&input, &target).unwrap();
    let cfg = TrainConfig { iterations: 500, seed: 4, ..Default::default() };
    let out = train(&d, &NetworkConfig::default(), &cfg).unwrap();
    let first = out.loss_history[0];
    let last = *out.loss_history.last().unwrap();
    eprintln!("overfit: initial {first:.4e}, final {last:.4e}, ratio {:.4}", last / first);
    assert!(last < 0.05 * first, "final loss {last} not below 5% of initial {first}");
}

#[test]
fn training_is_deterministic_and_finite() {
    let mut d = Dataset::new(16, 16);
    for s in 0..20 {
        let (a, b) = phantom_pair(100 + s, 16);
        d.push(&a, &b).unwrap();
    }
    let cfg = TrainConfig { iterations: 30, seed: 9, ..Default::default() };
    let a = train(&d, &tiny(), &cfg).unwrap();
    let b = train(&d, &tiny(), &cfg).unwrap();
    assert_eq!(a.loss_history.len(), 30);
    assert!(a.loss_history.iter().all(|l| l.is_finite()));
    assert_eq!(
        a.loss_history.iter().map(|l| l.to_bits()).collect::<Vec<_>>(),
        b.loss_history.iter().map(|l| l.to_bits()).collect::<Vec<_>>()
    );
    assert_eq!(a.parameters, b.parameters);
}

#[test]
fn diverging_training_reports_iteration() {
    let (a, b) = phantom_pair(3, 16);
    let mut d = Dataset::new(16, 16);
    d.push(&a, &b.with_data(vec![1e300; 256]).unwrap()).unwrap();
    let cfg = TrainConfig { iterations: 5, ..Default::default() };
    let err = train(&d, &tiny(), &cfg).unwrap_err();
    assert!(err.is_numerical(), "{err}");
}

#[test]
fn weights_and_loss_history_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let p = build_network(&NetworkConfig { levels: 2, channels: vec![3, 5], ..Default::default() }, 8).unwrap();
    let path = write_weights(&dir.path().join("w"), &p).unwrap();
    let q = read_weights(&path).unwrap();
    assert_eq!(q.config, p.config);
    assert_eq!(q.layout(), p.layout());
    for (a, b) in p.blocks.iter().zip(&q.blocks) {
        for (x, y) in a.weights.iter().zip(&b.weights) {
            assert_eq!(*x as f32, *y as f32);
        }
    }
    std::fs::write(dir.path().join("w.bin"), [0u8; 8]).unwrap();
    assert!(read_weights(&path).is_err());

    let h = vec![1.5, 0.25, 1e-7];
    let lp = dir.path().join("loss.csv");
    write_loss_history(&lp, &h).unwrap();
    assert_eq!(read_loss_history(&lp).unwrap(), h);
}
