use num_complex::Complex64;

use super::{apply_rigid, MotionTrajectory, RigidMotion};
use crate::error::{Error, Result};
use crate::volume::{
    axis_stride, center_index, fft3_centered, ifft1_centered, ifft3_centered, magnitude,
    ComplexVolume, KSpace, Volume,
};

/// Indicator over phase-encode lines (centered indexing).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SamplingMask {
    lines: Vec<bool>,
}

impl SamplingMask {
    pub fn from_range(n_pe: usize, range: std::ops::Range<usize>) -> Self {
        SamplingMask {
            lines: (0..n_pe).map(|i| range.contains(&i)).collect(),
        }
    }

    pub fn lines(&self) -> &[bool] {
        &self.lines
    }

    pub fn len(&self) -> usize {
        self.lines.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lines.is_empty()
    }

    pub fn count(&self) -> usize {
        self.lines.iter().filter(|&&b| b).count()
    }
}

/// One mask per segment; together they partition the phase-encode lines.
pub fn segment_masks(t: &MotionTrajectory) -> Vec<SamplingMask> {
    (0..t.segments().len())
        .map(|i| SamplingMask::from_range(t.n_pe(), t.segment_range(i)))
        .collect()
}

/// Convolution kernel of a mask: its inverse centered 1D transform. Tap 0 is
/// the zero shift.
pub fn mask_kernel(mask: &SamplingMask) -> Vec<Complex64> {
    let m: Vec<Complex64> = mask
        .lines
        .iter()
        .map(|&b| Complex64::new(if b { 1.0 } else { 0.0 }, 0.0))
        .collect();
    ifft1_centered(&m)
}

fn check_extent(v: &Volume, t: &MotionTrajectory) -> Result<usize> {
    let axis = v.geometry().phase_encode_axis;
    let n = v.dims()[axis];
    if n != t.n_pe() {
        return Err(Error::Dimension(format!(
            "trajectory has {} phase-encode lines but the volume's phase-encode axis {axis} has extent {n}",
            t.n_pe()
        )));
    }
    Ok(axis)
}

/// Copies the lines `range` along `axis` from `src` into `dst`.
fn copy_lines(dst: &mut [Complex64], src: &[Complex64], dims: [usize; 3], axis: usize, range: std::ops::Range<usize>) {
    let stride = axis_stride(dims, axis);
    let n = dims[axis];
    let outer: usize = dims[..axis].iter().product();
    for o in 0..outer {
        for line in range.clone() {
            let start = o * n * stride + line * stride;
            dst[start..start + stride].copy_from_slice(&src[start..start + stride]);
        }
    }
}

/// Motion-corrupted k-space and its magnitude image.
///
/// Each segment contributes the k-space of the volume moved to its pose,
/// restricted to the segment's phase-encode lines.
pub fn corrupt(v: &Volume, t: &MotionTrajectory) -> Result<(KSpace, Volume)> {
    let axis = check_extent(v, t)?;
    let dims = v.dims();
    let mut acc = KSpace::zeros(v.geometry().clone());
    let mut cache: Vec<(RigidMotion, KSpace)> = Vec::new();
    for (i, seg) in t.segments().iter().enumerate() {
        let range = t.segment_range(i);
        let k = match cache.iter().find(|(p, _)| *p == seg.pose) {
            Some((_, k)) => k,
            None => {
                let moved = apply_rigid(v, &seg.pose)?;
                cache.push((seg.pose, fft3_centered(&moved)?));
                &cache.last().expect("just pushed").1
            }
        };
        copy_lines(acc.data_mut(), k.data(), dims, axis, range);
    }
    let image = magnitude(&ifft3_centered(&acc)?)?;
    Ok((acc, image))
}

/// Largest per-axis extent [`convolution_route`] accepts.
pub const CONVOLUTION_ROUTE_MAX_EXTENT: usize = 16;

/// Direct image-space evaluation of the motion model: each moved volume is
/// circularly convolved along the phase-encode axis with its segment's
/// kernel by explicit summation, and the results are summed. No fast
/// transform touches the volumes.
pub fn convolution_route(v: &Volume, t: &MotionTrajectory) -> Result<Volume> {
    let axis = check_extent(v, t)?;
    let dims = v.dims();
    if let Some(&d) = dims.iter().find(|&&d| d > CONVOLUTION_ROUTE_MAX_EXTENT) {
        return Err(Error::Refused(format!(
            "convolution route is limited to extents <= {CONVOLUTION_ROUTE_MAX_EXTENT}, got {d}"
        )));
    }
    let n = dims[axis];
    let stride = axis_stride(dims, axis);
    let outer: usize = dims[..axis].iter().product();
    let mut acc = vec![Complex64::new(0.0, 0.0); v.data().len()];
    for (seg, mask) in t.segments().iter().zip(segment_masks(t)) {
        let h = mask_kernel(&mask);
        let moved = ComplexVolume::from_real(&apply_rigid(v, &seg.pose)?);
        let src = moved.data();
        for o in 0..outer {
            let base = o * n * stride;
            for s in 0..stride {
                for x in 0..n {
                    let mut sum = Complex64::new(0.0, 0.0);
                    for (shift, tap) in h.iter().enumerate() {
                        let y = (x + n - shift) % n;
                        sum += src[base + y * stride + s] * tap;
                    }
                    acc[base + x * stride + s] += sum;
                }
            }
        }
    }
    magnitude(&ComplexVolume::new(v.geometry().clone(), acc)?)
}

/// Fractions of k-space error energy in the lower and upper halves of the
/// phase-encode frequency range.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandShares {
    /// |frequency| < n_pe / 4
    pub low: f64,
    /// |frequency| >= n_pe / 4
    pub high: f64,
}

/// Splits the error energy of a corrupted k-space by phase-encode frequency.
///
/// The error is taken against the full k-space of the pose in effect at the
/// k-space center line, i.e. the position the corrupted image depicts.
pub fn band_error_shares(v: &Volume, t: &MotionTrajectory) -> Result<BandShares> {
    let axis = check_extent(v, t)?;
    let dims = v.dims();
    let n = dims[axis];
    let c = center_index(n);
    let (k, _) = corrupt(v, t)?;
    let reference = fft3_centered(&apply_rigid(v, &t.pose_at(c))?)?;
    let stride = axis_stride(dims, axis);
    let outer: usize = dims[..axis].iter().product();
    let (mut low, mut high) = (0.0, 0.0);
    for o in 0..outer {
        for line in 0..n {
            let start = o * n * stride + line * stride;
            let e: f64 = k.data()[start..start + stride]
                .iter()
                .zip(&reference.data()[start..start + stride])
                .map(|(a, b)| (a - b).norm_sqr())
                .sum();
            let freq = (line as f64 - c as f64).abs();
            if freq < n as f64 / 4.0 {
                low += e;
            } else {
                high += e;
            }
        }
    }
    let total = low + high;
    if total <= 0.0 {
        return Err(Error::Degenerate(
            "trajectory produces no k-space error".into(),
        ));
    }
    Ok(BandShares {
        low: low / total,
        high: high / total,
    })
}
