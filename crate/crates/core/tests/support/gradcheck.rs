//! Finite-difference checks of every backward pass, shared by the gradient
//! tests and the acceptance suite.

use kmotion_core::nn::layers::{self, Act, ConvWeights};
use kmotion_core::nn::{backward, build_network, forward, mse_loss, Mode, NetworkConfig, NetworkParameters, Tensor4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-4;
const TOL: f64 = 1e-4;

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-7)
}

fn random_act(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> Act {
    Act::new(c, h, w, (0..c * h * w).map(|_| rng.random_range(-1.0..1.0)).collect())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Checks `d/dv <r, f(v)>` for every coordinate of `v` against `analytic`.
fn check_fd(v: &[f64], analytic: &[f64], f: impl Fn(&[f64]) -> f64) {
    let mut v = v.to_vec();
    for i in 0..v.len() {
        let orig = v[i];
        v[i] = orig + H;
        let up = f(&v);
        v[i] = orig - H;
        let down = f(&v);
        v[i] = orig;
        let num = (up - down) / (2.0 * H);
        assert!(
            rel_err(analytic[i], num) < TOL,
            "coordinate {i}: analytic {} vs numeric {num}",
            analytic[i]
        );
    }
}

pub fn conv() {
    for draw in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(draw);
        let (ci, co) = (2, 3);
        let x = random_act(&mut rng, ci, 5, 4);
        let w: Vec<f64> = (0..co * ci * 9).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..co).map(|_| rng.random_range(-1.0..1.0)).collect();
        let r: Vec<f64> = (0..co * 20).map(|_| rng.random_range(-1.0..1.0)).collect();
        let p = ConvWeights { in_ch: ci, out_ch: co, weights: &w, bias: &b };
        let mut dw = vec![0.0; w.len()];
        let mut db = vec![0.0; b.len()];
        let g = Act::new(co, 5, 4, r.clone());
        let dx = layers::conv_backward(&x, &p, &g, &mut dw, &mut db, true).unwrap();
        let loss = |x: &Act, w: &[f64], b: &[f64]| {
            let p = ConvWeights { in_ch: ci, out_ch: co, weights: w, bias: b };
            dot(&layers::conv_forward(x, &p).unwrap().data, &r)
        };
        check_fd(&x.data, &dx.data, |v| loss(&Act::new(ci, 5, 4, v.to_vec()), &w, &b));
        check_fd(&w, &dw, |v| loss(&x, v, &b));
        check_fd(&b, &db, |v| loss(&x, &w, v));
    }
}

pub fn rectifier() {
    for draw in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + draw);
        // keep inputs away from the kink so the difference quotient is defined
        let x = Act::new(
            2,
            3,
            3,
            (0..18)
                .map(|_| {
                    let m = rng.random_range(0.01..1.0);
                    if rng.random_bool(0.5) { m } else { -m }
                })
                .collect(),
        );
        let r: Vec<f64> = (0..18).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut y = x.clone();
        layers::relu_forward(&mut y);
        let mut g = Act::new(2, 3, 3, r.clone());
        layers::relu_backward(&y, &mut g);
        check_fd(&x.data, &g.data, |v| {
            let mut y = Act::new(2, 3, 3, v.to_vec());
            layers::relu_forward(&mut y);
            dot(&y.data, &r)
        });
    }
}

pub fn maxpool() {
    for draw in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(200 + draw);
        let x = random_act(&mut rng, 2, 4, 6);
        let r: Vec<f64> = (0..2 * 2 * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (_, arg) = layers::maxpool_forward(&x);
        let g = layers::maxpool_backward(&Act::new(2, 2, 3, r.clone()), &arg, 2, 4, 6);
        check_fd(&x.data, &g.data, |v| dot(&layers::maxpool_forward(&Act::new(2, 4, 6, v.to_vec())).0.data, &r));
    }
}

pub fn upsample() {
    for draw in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(300 + draw);
        let x = random_act(&mut rng, 2, 3, 2);
        let r: Vec<f64> = (0..2 * 6 * 4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let g = layers::upsample_backward(&Act::new(2, 6, 4, r.clone()));
        check_fd(&x.data, &g.data, |v| dot(&layers::upsample_forward(&Act::new(2, 3, 2, v.to_vec())).data, &r));
    }
}

pub fn dropout() {
    for draw in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(400 + draw);
        let x = random_act(&mut rng, 3, 2, 2);
        let mask = kmotion_core::nn::dropout_mask(&mut rng, 12, 0.2);
        let r: Vec<f64> = (0..12).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut g = Act::new(3, 2, 2, r.clone());
        layers::dropout_apply(&mut g, &mask);
        check_fd(&x.data, &g.data, |v| {
            let mut y = Act::new(3, 2, 2, v.to_vec());
            layers::dropout_apply(&mut y, &mask);
            dot(&y.data, &r)
        });
    }
}

pub fn concat() {
    for draw in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(500 + draw);
        let a = random_act(&mut rng, 2, 3, 3);
        let b = random_act(&mut rng, 1, 3, 3);
        let r: Vec<f64> = (0..27).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (ga, gb) = layers::concat_backward(&Act::new(3, 3, 3, r.clone()), 2);
        check_fd(&a.data, &ga.data, |v| {
            dot(&layers::concat_forward(&Act::new(2, 3, 3, v.to_vec()), &b).unwrap().data, &r)
        });
        check_fd(&b.data, &gb.data, |v| {
            dot(&layers::concat_forward(&a, &Act::new(1, 3, 3, v.to_vec())).unwrap().data, &r)
        });
    }
}

pub fn small_net(cfg: &NetworkConfig, seed: u64) -> NetworkParameters {
    let mut p = build_network(cfg, seed).unwrap();
    // nonzero biases so their gradients are exercised away from the init point
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xb1a5);
    for blk in &mut p.blocks {
        for b in &mut blk.bias {
            *b = rng.random_range(-0.1..0.1);
        }
    }
    p
}

/// Loss plus the on/off pattern of every rectifier and pool winner, so a
/// difference quotient can tell whether its interval crossed a switch.
fn train_loss(p: &NetworkParameters, x: &Tensor4, y: &Tensor4, mask_seed: u64) -> (f64, Vec<u32>) {
    let names: Vec<String> = p.blocks.iter().filter(|b| b.spec.rectified).map(|b| b.spec.name.clone()).collect();
    let taps: Vec<&str> = names.iter().map(String::as_str).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(mask_seed);
    let out = forward(p, x, Mode::Train, &mut rng, &taps).unwrap();
    let mut pattern = Vec::new();
    for (name, t) in &out.taps {
        pattern.extend(t.data().iter().map(|&v| (v > 0.0) as u32));
        if name.starts_with("enc") && name.ends_with("conv2") {
            let [b, c, h, w] = t.shape();
            for s in 0..b {
                let act = Act::new(c, h, w, t.sample(s).to_vec());
                pattern.extend(layers::maxpool_forward(&act).1);
            }
        }
    }
    (mse_loss(&out.output, y).unwrap(), pattern)
}

/// Returns (parameters checked, parameters that needed a smaller step).
pub fn composed(config: &NetworkConfig, draws: u64) -> (usize, usize) {
    let mut shrunk = 0usize;
    let mut total = 0usize;
    for draw in 0..draws {
        let mut rng = ChaCha8Rng::seed_from_u64(600 + draw);
        let mut p = small_net(config, draw);
        let x = Tensor4::new([2, 1, 8, 8], (0..128).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap();
        let y = Tensor4::new([2, 1, 8, 8], (0..128).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap();
        let mask_seed = 700 + draw;
        let mut mrng = ChaCha8Rng::seed_from_u64(mask_seed);
        let fwd = forward(&p, &x, Mode::Train, &mut mrng, &[]).unwrap();
        let grads = backward(&p, &fwd.cache, &y).unwrap();
        let base_pattern = train_loss(&p, &x, &y, mask_seed).1;
        for bi in 0..p.blocks.len() {
            for is_bias in [false, true] {
                let len = if is_bias { p.blocks[bi].bias.len() } else { p.blocks[bi].weights.len() };
                for i in 0..len {
                    fn slot(p: &mut NetworkParameters, bi: usize, is_bias: bool, i: usize) -> &mut f64 {
                        if is_bias { &mut p.blocks[bi].bias[i] } else { &mut p.blocks[bi].weights[i] }
                    }
                    let orig = *slot(&mut p, bi, is_bias, i);
                    // h = 1e-4 unless the interval crosses a switch of the
                    // piecewise-linear network, where the quotient is no oracle
                    let mut h = H;
                    let num = loop {
                        *slot(&mut p, bi, is_bias, i) = orig + h;
                        let (up, pu) = train_loss(&p, &x, &y, mask_seed);
                        *slot(&mut p, bi, is_bias, i) = orig - h;
                        let (down, pd) = train_loss(&p, &x, &y, mask_seed);
                        *slot(&mut p, bi, is_bias, i) = orig;
                        if (pu == base_pattern && pd == base_pattern) || h < 1e-9 {
                            break (up - down) / (2.0 * h);
                        }
                        h /= 10.0;
                    };
                    total += 1;
                    if h < H {
                        shrunk += 1;
                    }
                    let g = &grads.blocks[bi];
                    let ana = if is_bias { g.bias[i] } else { g.weights[i] };
                    assert!(
                        rel_err(ana, num) < TOL,
                        "draw {draw} block {} {} {i} (h={h:e}): analytic {ana} vs numeric {num}",
                        p.blocks[bi].spec.name,
                        if is_bias { "bias" } else { "weight" }
                    );
                }
            }
        }
    }
    (total, shrunk)
}

