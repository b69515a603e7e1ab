use num_complex::Complex64;
use rustfft::{FftDirection, FftPlanner};

use super::{center_index, ComplexVolume, Dims, KSpace, Volume};
use crate::error::{Error, Result};

/// Unnormalized forward 3D DFT with the DC sample moved to the center index.
pub fn fft3_centered(v: &Volume) -> Result<KSpace> {
    if let Some(pos) = v.data().iter().position(|x| !x.is_finite()) {
        return Err(Error::Validation(format!(
            "cannot transform non-finite value at flat index {pos}"
        )));
    }
    let mut data: Vec<Complex64> = v.data().iter().map(|&x| Complex64::new(x, 0.0)).collect();
    transform3(&mut data, v.dims(), FftDirection::Forward);
    KSpace::new(v.geometry().clone(), data)
}

/// Exact inverse of [`fft3_centered`], including the `1/N` factor.
pub fn ifft3_centered(k: &KSpace) -> Result<ComplexVolume> {
    if let Some(pos) = k
        .data()
        .iter()
        .position(|z| !(z.re.is_finite() && z.im.is_finite()))
    {
        return Err(Error::Validation(format!(
            "cannot transform non-finite k-space sample at flat index {pos}"
        )));
    }
    let mut data = k.data().to_vec();
    transform3(&mut data, k.dims(), FftDirection::Inverse);
    let scale = 1.0 / data.len() as f64;
    for z in &mut data {
        *z *= scale;
    }
    ComplexVolume::new(k.geometry().clone(), data)
}

/// Element-wise modulus.
pub fn magnitude(c: &ComplexVolume) -> Result<Volume> {
    Volume::new(c.geometry().clone(), c.data().iter().map(|z| z.norm()).collect())
}

/// Unnormalized centered 1D forward DFT.
pub fn fft1_centered(x: &[Complex64]) -> Vec<Complex64> {
    let mut buf = x.to_vec();
    transform_line(&mut buf, FftDirection::Forward, &mut FftPlanner::new());
    buf
}

/// Inverse of [`fft1_centered`], including the `1/n` factor.
pub fn ifft1_centered(k: &[Complex64]) -> Vec<Complex64> {
    let mut buf = k.to_vec();
    transform_line(&mut buf, FftDirection::Inverse, &mut FftPlanner::new());
    let scale = 1.0 / buf.len().max(1) as f64;
    for z in &mut buf {
        *z *= scale;
    }
    buf
}

/// Forward: raw DFT, then rotate so frequency 0 lands on `n/2`.
/// Inverse: undo the rotation, then raw inverse DFT (unscaled).
fn transform_line(buf: &mut [Complex64], direction: FftDirection, planner: &mut FftPlanner<f64>) {
    let n = buf.len();
    if n == 0 {
        return;
    }
    let c = center_index(n);
    let fft = planner.plan_fft(n, direction);
    match direction {
        FftDirection::Forward => {
            fft.process(buf);
            buf.rotate_right(c);
        }
        FftDirection::Inverse => {
            buf.rotate_left(c);
            fft.process(buf);
        }
    }
}

fn transform3(data: &mut [Complex64], dims: Dims, direction: FftDirection) {
    let mut planner = FftPlanner::new();
    let mut line = Vec::new();
    for axis in 0..3 {
        let n = dims[axis];
        if n == 1 {
            continue;
        }
        let stride = super::axis_stride(dims, axis);
        line.resize(n, Complex64::new(0.0, 0.0));
        // Every line along `axis` starts at an offset whose `axis` coordinate is 0.
        let (outer, inner) = match axis {
            0 => (1, dims[1] * dims[2]),
            1 => (dims[0], dims[2]),
            _ => (dims[0] * dims[1], 1),
        };
        let outer_step = n * stride;
        for o in 0..outer {
            for s in 0..inner {
                let base = o * outer_step + s;
                if stride == 1 {
                    transform_line(&mut data[base..base + n], direction, &mut planner);
                } else {
                    for (t, z) in line.iter_mut().enumerate() {
                        *z = data[base + t * stride];
                    }
                    transform_line(&mut line, direction, &mut planner);
                    for (t, z) in line.iter().enumerate() {
                        data[base + t * stride] = *z;
                    }
                }
            }
        }
    }
}
