//! Gamma function (Lanczos, g = 7, 9 terms).

use std::f64::consts::PI;

const G: f64 = 7.0;
const COEF: [f64; 9] = [
    0.999_999_999_999_809_93,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_13,
    -176.615_029_162_140_59,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_571_6e-6,
    1.505_632_735_149_311_6e-7,
];

pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // reflection
        return (PI / (PI * x).sin()).abs().ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = COEF[0];
    let t = x + G + 0.5;
    for (i, c) in COEF.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

pub fn gamma(x: f64) -> f64 {
    if x < 0.5 {
        return PI / ((PI * x).sin() * gamma(1.0 - x));
    }
    ln_gamma(x).exp()
}

/// `Gamma(2/a)^2 / (Gamma(1/a) Gamma(3/a))`, increasing in `a`; equals
/// `E|x|^2 / E[x^2]` for a generalized Gaussian of shape `a`.
pub fn ggd_moment_ratio(a: f64) -> f64 {
    (2.0 * ln_gamma(2.0 / a) - ln_gamma(1.0 / a) - ln_gamma(3.0 / a)).exp()
}

pub const SHAPE_RANGE: (f64, f64) = (0.05, 10.0);
const SHAPE_TOL: f64 = 1e-6;

/// Shape whose moment ratio equals `r`, by bisection; clamps to the search range.
pub fn invert_moment_ratio(r: f64) -> f64 {
    let (mut lo, mut hi) = SHAPE_RANGE;
    if r <= ggd_moment_ratio(lo) {
        return lo;
    }
    if r >= ggd_moment_ratio(hi) {
        return hi;
    }
    while hi - lo > SHAPE_TOL {
        let mid = 0.5 * (lo + hi);
        if ggd_moment_ratio(mid) < r {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}
