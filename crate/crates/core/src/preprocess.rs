//! Foreground estimation and the intensity normalization applied around the
//! network.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{Dims, Volume};

/// Target foreground mean after normalization.
pub const TARGET_MEAN: f64 = 0.5;
/// Target foreground standard deviation after normalization.
pub const TARGET_STD: f64 = 1.0 / 6.0;

/// Binary voxel mask with the dims of its source volume.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ForegroundMask {
    dims: Dims,
    data: Vec<bool>,
}

impl ForegroundMask {
    pub fn new(dims: Dims, data: Vec<bool>) -> Result<Self> {
        if data.len() != dims.iter().product::<usize>() {
            return Err(Error::Validation(format!(
                "mask has {} values but dims {dims:?} need {}",
                data.len(),
                dims.iter().product::<usize>()
            )));
        }
        Ok(ForegroundMask { dims, data })
    }

    pub fn full(dims: Dims) -> Self {
        ForegroundMask {
            dims,
            data: vec![true; dims.iter().product()],
        }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    /// Plane of the mask perpendicular to `axis`, laid out like
    /// [`Volume::extract_slice`].
    pub fn slice(&self, axis: usize, index: usize) -> Result<Vec<bool>> {
        let as_volume = Volume::from_fn(self.dims, |i, j, k| {
            self.data[(i * self.dims[1] + j) * self.dims[2] + k] as u8 as f64
        })?;
        Ok(as_volume
            .extract_slice(axis, index)?
            .data()
            .iter()
            .map(|&x| x != 0.0)
            .collect())
    }

    /// Zeroes every voxel outside the mask.
    pub fn apply(&self, v: &Volume) -> Result<Volume> {
        self.check(v)?;
        v.with_data(
            v.data()
                .iter()
                .zip(&self.data)
                .map(|(&x, &m)| if m { x } else { 0.0 })
                .collect(),
        )
    }

    fn check(&self, v: &Volume) -> Result<()> {
        if v.dims() != self.dims {
            return Err(Error::Dimension(format!(
                "mask dims {:?} do not match volume dims {:?}",
                self.dims,
                v.dims()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForegroundConfig {
    /// Threshold as a fraction of the 99th-percentile intensity.
    pub fraction: f64,
    /// Number of dilation and of erosion passes of the background.
    pub iterations: usize,
}

impl Default for ForegroundConfig {
    fn default() -> Self {
        ForegroundConfig {
            fraction: 0.1,
            iterations: 2,
        }
    }
}

/// Linearly interpolated percentile (`q` in `[0, 1]`).
pub fn percentile(values: &[f64], q: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Thresholds the volume, then dilates and erodes the resulting background
/// with the full 3x3x3 neighbourhood, `cfg.iterations` passes each.
///
/// Growing and then shrinking the background is a morphological opening of
/// the foreground: isolated bright voxels vanish and solid regions survive
/// unchanged. Voxels outside the grid count as background.
pub fn estimate_foreground(v: &Volume, cfg: &ForegroundConfig) -> Result<ForegroundMask> {
    let (lo, hi) = v
        .data()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    if hi <= lo {
        return Err(Error::Degenerate(
            "volume has no dynamic range; foreground is undefined".into(),
        ));
    }
    let threshold = cfg.fraction * percentile(v.data(), 0.99);
    let dims = v.dims();
    let mut background: Vec<bool> = v.data().iter().map(|&x| x <= threshold).collect();
    for _ in 0..cfg.iterations {
        background = morph(&background, dims, true);
    }
    for _ in 0..cfg.iterations {
        background = morph(&background, dims, false);
    }
    ForegroundMask::new(dims, background.into_iter().map(|b| !b).collect())
}

/// One pass of binary dilation (`dilate`) or erosion over the 26-neighbourhood.
/// Out-of-grid neighbours read as `true`.
fn morph(mask: &[bool], dims: Dims, dilate: bool) -> Vec<bool> {
    let [n0, n1, n2] = dims;
    let mut out = vec![false; mask.len()];
    for i in 0..n0 {
        for j in 0..n1 {
            for k in 0..n2 {
                let mut any = false;
                let mut all = true;
                for di in -1isize..=1 {
                    for dj in -1isize..=1 {
                        for dk in -1isize..=1 {
                            let (a, b, c) = (i as isize + di, j as isize + dj, k as isize + dk);
                            let inside = a >= 0
                                && b >= 0
                                && c >= 0
                                && (a as usize) < n0
                                && (b as usize) < n1
                                && (c as usize) < n2;
                            let val = if inside {
                                mask[(a as usize * n1 + b as usize) * n2 + c as usize]
                            } else {
                                true
                            };
                            any |= val;
                            all &= val;
                        }
                    }
                }
                out[(i * n1 + j) * n2 + k] = if dilate { any } else { all };
            }
        }
    }
    out
}

/// Foreground statistics before normalization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizationRecord {
    pub original_mean: f64,
    pub original_std: f64,
    pub target_mean: f64,
    pub target_std: f64,
}

impl NormalizationRecord {
    /// Normalized value of an original intensity.
    #[inline]
    pub fn forward(&self, x: f64) -> f64 {
        (x - self.original_mean) / self.original_std * self.target_std + self.target_mean
    }

    /// Original intensity of a normalized value.
    #[inline]
    pub fn inverse(&self, y: f64) -> f64 {
        (y - self.target_mean) / self.target_std * self.original_std + self.original_mean
    }
}

/// Population mean and standard deviation over the masked voxels.
pub fn foreground_stats(values: &[f64], mask: &[bool]) -> Result<(f64, f64)> {
    let n = mask.iter().filter(|&&m| m).count();
    if n == 0 {
        return Err(Error::Degenerate("foreground is empty".into()));
    }
    let fg = || values.iter().zip(mask).filter(|(_, &m)| m).map(|(&x, _)| x);
    let mean = fg().sum::<f64>() / n as f64;
    let var = fg().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
    Ok((mean, var.sqrt()))
}

/// Maps the foreground affinely to mean 0.5 and standard deviation 1/6 and
/// sets the background to exactly zero.
pub fn normalize(v: &Volume, m: &ForegroundMask) -> Result<(Volume, NormalizationRecord)> {
    m.check(v)?;
    let (mean, std) = foreground_stats(v.data(), m.data())?;
    if !(std > 0.0) {
        return Err(Error::Degenerate("foreground has zero variance".into()));
    }
    let record = NormalizationRecord {
        original_mean: mean,
        original_std: std,
        target_mean: TARGET_MEAN,
        target_std: TARGET_STD,
    };
    let data = v
        .data()
        .iter()
        .zip(m.data())
        .map(|(&x, &fg)| if fg { record.forward(x) } else { 0.0 })
        .collect();
    Ok((v.with_data(data)?, record))
}

/// Inverse of [`normalize`] on the foreground; the background stays zero.
pub fn denormalize(v: &Volume, r: &NormalizationRecord, m: &ForegroundMask) -> Result<Volume> {
    m.check(v)?;
    Ok(v.with_data(denormalize_values(v.data(), r, m.data()))?)
}

/// [`denormalize`] on a raw sample array (e.g. one slice and its mask plane).
pub fn denormalize_values(values: &[f64], r: &NormalizationRecord, mask: &[bool]) -> Vec<f64> {
    values
        .iter()
        .zip(mask)
        .map(|(&y, &fg)| if fg { r.inverse(y) } else { 0.0 })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::{generate, random_spec, PhantomConfig};

    fn cube_volume() -> Volume {
        Volume::from_fn([12, 12, 12], |i, j, k| {
            if (3..9).contains(&i) && (4..8).contains(&j) && (2..10).contains(&k) {
                2.0
            } else {
                0.0
            }
        })
        .unwrap()
    }

    #[test]
    fn solid_cube_is_a_fixed_point() {
        let v = cube_volume();
        let m = estimate_foreground(&v, &ForegroundConfig { fraction: 0.1, iterations: 1 }).unwrap();
        let expect: Vec<bool> = v.data().iter().map(|&x| x > 0.0).collect();
        assert_eq!(m.data(), &expect[..]);
    }

    #[test]
    fn isolated_voxel_is_removed() {
        let v = Volume::from_fn([5, 5, 5], |i, j, k| if (i, j, k) == (2, 2, 2) { 9.0 } else { 0.0 }).unwrap();
        let m = estimate_foreground(&v, &ForegroundConfig { fraction: 0.1, iterations: 1 }).unwrap();
        assert_eq!(m.count(), 0);
    }

    #[test]
    fn sphere_mask_is_bracketed_by_eroded_and_dilated_sphere() {
        let n = 32usize;
        let r = 9.3;
        let c = (n as f64 - 1.0) / 2.0;
        let dist = |i: usize, j: usize, k: usize| {
            ((i as f64 - c).powi(2) + (j as f64 - c).powi(2) + (k as f64 - c).powi(2)).sqrt()
        };
        let v = Volume::from_fn([n, n, n], |i, j, k| if dist(i, j, k) <= r { 1.0 } else { 0.0 }).unwrap();
        for iterations in 1..=2 {
            let m = estimate_foreground(&v, &ForegroundConfig { fraction: 0.1, iterations }).unwrap();
            // Chebyshev steps of size 1 move at most sqrt(3) in Euclidean distance.
            let slack = iterations as f64 * 3f64.sqrt();
            for i in 0..n {
                for j in 0..n {
                    for k in 0..n {
                        let d = dist(i, j, k);
                        let inside = m.data()[(i * n + j) * n + k];
                        if d <= r - slack {
                            assert!(inside, "eroded sphere voxel ({i},{j},{k}) missing");
                        }
                        if d > r + slack {
                            assert!(!inside, "voxel ({i},{j},{k}) outside dilated sphere");
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn constant_volume_is_degenerate() {
        let v = Volume::from_fn([4, 4, 4], |_, _, _| 3.0).unwrap();
        assert!(matches!(
            estimate_foreground(&v, &ForegroundConfig::default()),
            Err(Error::Degenerate(_))
        ));
    }

    fn phantom(seed: u64) -> Volume {
        generate(&random_spec(seed, &PhantomConfig::default()).unwrap(), [32, 32, 16]).unwrap()
    }

    #[test]
    fn normalized_foreground_hits_targets() {
        for seed in 0..5 {
            let v = phantom(seed);
            let m = estimate_foreground(&v, &ForegroundConfig::default()).unwrap();
            let (n, rec) = normalize(&v, &m).unwrap();
            let (mean, std) = foreground_stats(n.data(), m.data()).unwrap();
            assert!((mean - 0.5).abs() < 1e-9);
            assert!((std - 1.0 / 6.0).abs() < 1e-9);
            for (&x, &fg) in n.data().iter().zip(m.data()) {
                if !fg {
                    assert_eq!(x, 0.0);
                }
            }
            let back = denormalize(&n, &rec, &m).unwrap();
            for ((&a, &b), &fg) in back.data().iter().zip(v.data()).zip(m.data()) {
                if fg {
                    assert!((a - b).abs() <= 1e-9 * b.abs().max(1e-12));
                }
            }
        }
    }

    #[test]
    fn normalization_is_scale_invariant() {
        let v = phantom(7);
        let m = estimate_foreground(&v, &ForegroundConfig::default()).unwrap();
        let (a, _) = normalize(&v, &m).unwrap();
        let (b, _) = normalize(&v.map(|x| 37.5 * x).unwrap(), &m).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn already_normalized_input_is_unchanged() {
        let v = phantom(8);
        let m = estimate_foreground(&v, &ForegroundConfig::default()).unwrap();
        let (once, _) = normalize(&v, &m).unwrap();
        let (twice, rec) = normalize(&once, &m).unwrap();
        assert!((rec.original_mean - 0.5).abs() < 1e-12);
        for (x, y) in once.data().iter().zip(twice.data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn denormalize_hand_cases() {
        let rec = NormalizationRecord {
            original_mean: 200.0,
            original_std: 60.0,
            target_mean: TARGET_MEAN,
            target_std: TARGET_STD,
        };
        assert!((rec.inverse(0.5) - 200.0).abs() < 1e-12);
        assert!((rec.inverse(0.5 + 1.0 / 6.0) - 260.0).abs() < 1e-9);
        let id = NormalizationRecord {
            original_mean: 0.5,
            original_std: 1.0 / 6.0,
            ..rec
        };
        for y in [0.0, 0.3, 0.5, 1.2] {
            assert!((id.inverse(y) - y).abs() < 1e-15);
        }
    }

    #[test]
    fn mask_estimation_is_idempotent_on_masked_volume() {
        for seed in 0..5 {
            let v = phantom(seed);
            let cfg = ForegroundConfig::default();
            let m = estimate_foreground(&v, &cfg).unwrap();
            let again = estimate_foreground(&m.apply(&v).unwrap(), &cfg).unwrap();
            assert_eq!(again, m);
        }
    }

    #[test]
    fn empty_or_flat_foreground_is_degenerate() {
        let v = phantom(1);
        let empty = ForegroundMask::new(v.dims(), vec![false; v.data().len()]).unwrap();
        assert!(matches!(normalize(&v, &empty), Err(Error::Degenerate(_))));
        let flat = Volume::from_fn([4, 4, 4], |_, _, _| 1.0).unwrap();
        assert!(matches!(
            normalize(&flat, &ForegroundMask::full([4, 4, 4])),
            Err(Error::Degenerate(_))
        ));
    }
}
