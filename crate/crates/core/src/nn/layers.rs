//! Single-sample layer kernels and their exact backward passes.
//!
//! Activations are `(channels, height, width)` planes stored row-major in one
//! `Vec<f64>`. Every function here works on one sample; batching happens in
//! the network driver.

use crate::error::{Error, Result};

/// One sample's feature maps.
#[derive(Debug, Clone, PartialEq)]
pub struct Act {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Act {
    pub fn new(c: usize, h: usize, w: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), c * h * w);
        Act { c, h, w, data }
    }

    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Act::new(c, h, w, vec![0.0; c * h * w])
    }

    pub fn plane(&self) -> usize {
        self.h * self.w
    }
}

/// Weights and bias of a 3x3, stride-1, zero-padded convolution.
/// `weights` is `(out_ch, in_ch, 3, 3)` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvWeights<'a> {
    pub in_ch: usize,
    pub out_ch: usize,
    pub weights: &'a [f64],
    pub bias: &'a [f64],
}

/// Patch matrix `(in_ch * 9, h * w)`: row `ci*9 + ky*3 + kx`, column
/// `y*w + x` holds `input[ci, y + ky - 1, x + kx - 1]` (zero outside).
pub fn im2col(input: &Act) -> Vec<f64> {
    let (c, h, w) = (input.c, input.h, input.w);
    let hw = h * w;
    let mut col = vec![0.0; c * 9 * hw];
    for ci in 0..c {
        let src = &input.data[ci * hw..(ci + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut col[(ci * 9 + ky * 3 + kx) * hw..(ci * 9 + ky * 3 + kx + 1) * hw];
                let dy = ky as isize - 1;
                let dx = kx as isize - 1;
                let (y0, y1) = ((-dy).max(0) as usize, (h as isize - dy).min(h as isize) as usize);
                let (x0, x1) = ((-dx).max(0) as usize, (w as isize - dx).min(w as isize) as usize);
                for y in y0..y1 {
                    let sy = (y as isize + dy) as usize;
                    let sx0 = (x0 as isize + dx) as usize;
                    row[y * w + x0..y * w + x1].copy_from_slice(&src[sy * w + sx0..sy * w + sx0 + (x1 - x0)]);
                }
            }
        }
    }
    col
}

/// Adjoint of [`im2col`]: scatters patch gradients back onto the input.
pub fn col2im(col: &[f64], c: usize, h: usize, w: usize) -> Act {
    let hw = h * w;
    let mut out = Act::zeros(c, h, w);
    for ci in 0..c {
        let dst = &mut out.data[ci * hw..(ci + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &col[(ci * 9 + ky * 3 + kx) * hw..(ci * 9 + ky * 3 + kx + 1) * hw];
                let dy = ky as isize - 1;
                let dx = kx as isize - 1;
                let (y0, y1) = ((-dy).max(0) as usize, (h as isize - dy).min(h as isize) as usize);
                let (x0, x1) = ((-dx).max(0) as usize, (w as isize - dx).min(w as isize) as usize);
                for y in y0..y1 {
                    let sy = (y as isize + dy) as usize;
                    let sx0 = (x0 as isize + dx) as usize;
                    let d = &mut dst[sy * w + sx0..sy * w + sx0 + (x1 - x0)];
                    for (a, b) in d.iter_mut().zip(&row[y * w + x0..y * w + x1]) {
                        *a += b;
                    }
                }
            }
        }
    }
    out
}

/// `c[m x n] = alpha * op(a) * op(b) + beta * c`, with `op` chosen by the
/// transpose flags; all matrices are row-major and contiguous.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    beta: f64,
    c: &mut [f64],
) {
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    // SAFETY: slice lengths cover every index reachable through the strides above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

pub fn conv_forward(input: &Act, p: &ConvWeights) -> Result<Act> {
    if input.c != p.in_ch {
        return Err(Error::Dimension(format!(
            "convolution expects {} input channels, got {}",
            p.in_ch, input.c
        )));
    }
    let hw = input.plane();
    let col = im2col(input);
    let mut out = Act::zeros(p.out_ch, input.h, input.w);
    for (o, &b) in p.bias.iter().enumerate() {
        out.data[o * hw..(o + 1) * hw].fill(b);
    }
    gemm(p.out_ch, p.in_ch * 9, hw, p.weights, false, &col, false, 1.0, &mut out.data);
    Ok(out)
}

/// Accumulates weight and bias gradients into `dw`, `db` and returns the
/// input gradient when `need_input_grad` is set.
pub fn conv_backward(
    input: &Act,
    p: &ConvWeights,
    grad_out: &Act,
    dw: &mut [f64],
    db: &mut [f64],
    need_input_grad: bool,
) -> Option<Act> {
    let hw = input.plane();
    let k = p.in_ch * 9;
    let col = im2col(input);
    // dW += dY * col^T
    gemm(p.out_ch, hw, k, &grad_out.data, false, &col, true, 1.0, dw);
    for (o, g) in db.iter_mut().enumerate() {
        *g += grad_out.data[o * hw..(o + 1) * hw].iter().sum::<f64>();
    }
    if !need_input_grad {
        return None;
    }
    // dcol = W^T * dY
    let mut dcol = vec![0.0; k * hw];
    gemm(k, p.out_ch, hw, p.weights, true, &grad_out.data, false, 0.0, &mut dcol);
    Some(col2im(&dcol, input.c, input.h, input.w))
}

pub fn relu_forward(x: &mut Act) {
    for v in &mut x.data {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Gradient through a rectifier given its *output*.
pub fn relu_backward(output: &Act, grad: &mut Act) {
    for (g, &y) in grad.data.iter_mut().zip(&output.data) {
        if y <= 0.0 {
            *g = 0.0;
        }
    }
}

/// 2x2 max pool, stride 2. Returns the pooled maps and, per output, the flat
/// input index of the winning element (first maximum in raster order).
pub fn maxpool_forward(x: &Act) -> (Act, Vec<u32>) {
    let (h2, w2) = (x.h / 2, x.w / 2);
    let mut out = Act::zeros(x.c, h2, w2);
    let mut arg = vec![0u32; x.c * h2 * w2];
    for c in 0..x.c {
        for y in 0..h2 {
            for xx in 0..w2 {
                let mut best = f64::NEG_INFINITY;
                let mut best_idx = 0usize;
                for dy in 0..2 {
                    for dx in 0..2 {
                        let idx = (c * x.h + 2 * y + dy) * x.w + 2 * xx + dx;
                        if x.data[idx] > best {
                            best = x.data[idx];
                            best_idx = idx;
                        }
                    }
                }
                let o = (c * h2 + y) * w2 + xx;
                out.data[o] = best;
                arg[o] = best_idx as u32;
            }
        }
    }
    (out, arg)
}

pub fn maxpool_backward(grad_out: &Act, arg: &[u32], c: usize, h: usize, w: usize) -> Act {
    let mut g = Act::zeros(c, h, w);
    for (o, &i) in arg.iter().enumerate() {
        g.data[i as usize] += grad_out.data[o];
    }
    g
}

/// Nearest-neighbour x2 upsampling.
pub fn upsample_forward(x: &Act) -> Act {
    let (h2, w2) = (x.h * 2, x.w * 2);
    let mut out = Act::zeros(x.c, h2, w2);
    for c in 0..x.c {
        for y in 0..h2 {
            let src = &x.data[(c * x.h + y / 2) * x.w..(c * x.h + y / 2 + 1) * x.w];
            let dst = &mut out.data[(c * h2 + y) * w2..(c * h2 + y + 1) * w2];
            for (xx, d) in dst.iter_mut().enumerate() {
                *d = src[xx / 2];
            }
        }
    }
    out
}

pub fn upsample_backward(grad_out: &Act) -> Act {
    let (h, w) = (grad_out.h / 2, grad_out.w / 2);
    let mut g = Act::zeros(grad_out.c, h, w);
    for c in 0..grad_out.c {
        for y in 0..grad_out.h {
            for x in 0..grad_out.w {
                g.data[(c * h + y / 2) * w + x / 2] += grad_out.data[(c * grad_out.h + y) * grad_out.w + x];
            }
        }
    }
    g
}

/// Multiplies element-wise by a fixed mask of scale factors (0 or 1/keep).
pub fn dropout_apply(x: &mut Act, mask: &[f64]) {
    for (v, &m) in x.data.iter_mut().zip(mask) {
        *v *= m;
    }
}

/// Channel concatenation `[a; b]`.
pub fn concat_forward(a: &Act, b: &Act) -> Result<Act> {
    if (a.h, a.w) != (b.h, b.w) {
        return Err(Error::Dimension(format!(
            "cannot concatenate {}x{} maps with {}x{} maps",
            a.h, a.w, b.h, b.w
        )));
    }
    let mut data = Vec::with_capacity(a.data.len() + b.data.len());
    data.extend_from_slice(&a.data);
    data.extend_from_slice(&b.data);
    Ok(Act::new(a.c + b.c, a.h, a.w, data))
}

/// Splits a concatenated gradient back into its `a` and `b` parts.
pub fn concat_backward(grad: &Act, a_channels: usize) -> (Act, Act) {
    let split = a_channels * grad.plane();
    (
        Act::new(a_channels, grad.h, grad.w, grad.data[..split].to_vec()),
        Act::new(grad.c - a_channels, grad.h, grad.w, grad.data[split..].to_vec()),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct 3x3 zero-padded convolution.
    fn conv_direct(input: &Act, p: &ConvWeights) -> Act {
        let mut out = Act::zeros(p.out_ch, input.h, input.w);
        for o in 0..p.out_ch {
            for y in 0..input.h {
                for x in 0..input.w {
                    let mut acc = p.bias[o];
                    for ci in 0..p.in_ch {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let sy = y as isize + ky as isize - 1;
                                let sx = x as isize + kx as isize - 1;
                                if sy < 0 || sx < 0 || sy >= input.h as isize || sx >= input.w as isize {
                                    continue;
                                }
                                acc += p.weights[((o * p.in_ch + ci) * 3 + ky) * 3 + kx]
                                    * input.data[(ci * input.h + sy as usize) * input.w + sx as usize];
                            }
                        }
                    }
                    out.data[(o * input.h + y) * input.w + x] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn gemm_convolution_matches_direct_sum() {
        let input = Act::new(3, 5, 6, (0..90).map(|i| ((i * 37) % 11) as f64 - 5.0).collect());
        let w: Vec<f64> = (0..2 * 3 * 9).map(|i| ((i * 13) % 7) as f64 * 0.1 - 0.3).collect();
        let b = vec![0.5, -0.25];
        let p = ConvWeights {
            in_ch: 3,
            out_ch: 2,
            weights: &w,
            bias: &b,
        };
        let fast = conv_forward(&input, &p).unwrap();
        let slow = conv_direct(&input, &p);
        for (a, b) in fast.data.iter().zip(&slow.data) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), y> == <x, col2im(y)>
        let x = Act::new(2, 4, 3, (0..24).map(|i| (i as f64).sin()).collect());
        let col = im2col(&x);
        let y: Vec<f64> = (0..col.len()).map(|i| (i as f64 * 0.7).cos()).collect();
        let lhs: f64 = col.iter().zip(&y).map(|(a, b)| a * b).sum();
        let back = col2im(&y, 2, 4, 3);
        let rhs: f64 = x.data.iter().zip(&back.data).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn pool_and_upsample_shapes() {
        let x = Act::new(1, 4, 4, (0..16).map(|i| i as f64).collect());
        let (p, arg) = maxpool_forward(&x);
        assert_eq!(p.data, vec![5.0, 7.0, 13.0, 15.0]);
        assert_eq!(arg, vec![5, 7, 13, 15]);
        let u = upsample_forward(&p);
        assert_eq!((u.h, u.w), (4, 4));
        assert_eq!(u.data[0..4], [5.0, 5.0, 7.0, 7.0]);
    }

    #[test]
    fn concat_rejects_mismatched_planes() {
        assert!(concat_forward(&Act::zeros(1, 2, 2), &Act::zeros(1, 4, 4)).is_err());
    }
}
