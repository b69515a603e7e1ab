//! No-reference quality: MSCN coefficients, generalized Gaussian fits, patch
//! features and the multivariate Gaussian distance.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::special::{gamma, invert_moment_ratio};
use crate::error::{Error, Result};
use crate::volume::io::{read_json, write_json};
use crate::volume::Image2D;

/// Features per patch and scale: 2 from the coefficient fit, 4 x 4 from the
/// paired products.
pub const FEATURES_PER_SCALE: usize = 18;
const MIN_FIT_SAMPLES: usize = 100;
const MIN_PATCH_SAMPLES: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NiqeConfig {
    pub window: usize,
    pub window_sigma: f64,
    pub stabilizer: f64,
    pub patch_size: usize,
    pub sharpness_fraction: f64,
    pub scales: usize,
    /// Patches with a smaller foreground share are dropped.
    pub min_foreground: f64,
}

impl Default for NiqeConfig {
    fn default() -> Self {
        NiqeConfig {
            window: 7,
            window_sigma: 7.0 / 6.0,
            stabilizer: 1.0,
            patch_size: 16,
            sharpness_fraction: 0.75,
            scales: 2,
            min_foreground: 0.75,
        }
    }
}

impl NiqeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window % 2 == 0 || self.window < 3 {
            return Err(Error::Validation(format!("window {} must be odd and >= 3", self.window)));
        }
        if !(self.window_sigma > 0.0) || !(self.stabilizer > 0.0) {
            return Err(Error::Validation("window sigma and stabilizer must be > 0".into()));
        }
        if !(1..=2).contains(&self.scales) {
            return Err(Error::Validation(format!("{} scales unsupported (1 or 2)", self.scales)));
        }
        let min_patch = if self.scales == 2 { 8 } else { 4 };
        if self.patch_size < min_patch || self.patch_size % 2 != 0 {
            return Err(Error::Validation(format!(
                "patch size {} must be even and >= {min_patch}",
                self.patch_size
            )));
        }
        if !(0.0..=1.0).contains(&self.sharpness_fraction) || !(0.0..=1.0).contains(&self.min_foreground) {
            return Err(Error::Validation("fractions must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn feature_len(&self) -> usize {
        FEATURES_PER_SCALE * self.scales
    }
}

/// Unit-sum 1D Gaussian taps; the 2D window is their outer product.
fn gaussian_taps(cfg: &NiqeConfig) -> Vec<f64> {
    let half = (cfg.window / 2) as f64;
    let taps: Vec<f64> = (0..cfg.window)
        .map(|i| {
            let d = i as f64 - half;
            (-d * d / (2.0 * cfg.window_sigma * cfg.window_sigma)).exp()
        })
        .collect();
    let s: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / s).collect()
}

/// Normalized `window x window` Gaussian, row-major.
pub fn gaussian_window(cfg: &NiqeConfig) -> Vec<f64> {
    let t = gaussian_taps(cfg);
    t.iter().flat_map(|a| t.iter().map(move |b| a * b)).collect()
}

/// Mirror index into `0..n` (edge sample repeated).
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let mut i = i;
    if i < 0 {
        i = -i - 1;
    }
    if i >= n {
        i = 2 * n - i - 1;
    }
    i as usize
}

/// Separable filtering with mirrored borders.
fn blur(data: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let half = (taps.len() / 2) as isize;
    let mut tmp = vec![0.0; h * w];
    for r in 0..h {
        for c in 0..w {
            tmp[r * w + c] = taps
                .iter()
                .enumerate()
                .map(|(k, t)| t * data[r * w + reflect(c as isize + k as isize - half, w)])
                .sum();
        }
    }
    let mut out = vec![0.0; h * w];
    for r in 0..h {
        for c in 0..w {
            out[r * w + c] = taps
                .iter()
                .enumerate()
                .map(|(k, t)| t * tmp[reflect(r as isize + k as isize - half, h) * w + c])
                .sum();
        }
    }
    out
}

/// Coefficient map and local standard deviation map.
fn mscn_parts(img: &Image2D, cfg: &NiqeConfig) -> Result<(Vec<f64>, Vec<f64>)> {
    let (h, w) = (img.height(), img.width());
    if h <= cfg.window || w <= cfg.window {
        return Err(Error::Dimension(format!(
            "image {h}x{w} must be larger than the {0}x{0} window",
            cfg.window
        )));
    }
    let taps = gaussian_taps(cfg);
    let x = img.data();
    let mu = blur(x, h, w, &taps);
    let sq: Vec<f64> = x.iter().map(|v| v * v).collect();
    let mu2 = blur(&sq, h, w, &taps);
    let sigma: Vec<f64> = mu.iter().zip(&mu2).map(|(m, m2)| (m2 - m * m).max(0.0).sqrt()).collect();
    let coef = x
        .iter()
        .zip(&mu)
        .zip(&sigma)
        .map(|((v, m), s)| (v - m) / (s + cfg.stabilizer))
        .collect();
    Ok((coef, sigma))
}

/// Mean-subtracted contrast-normalized coefficients, same dims as `img`.
pub fn mscn(img: &Image2D, cfg: &NiqeConfig) -> Result<Image2D> {
    let (coef, _) = mscn_parts(img, cfg)?;
    img.with_data(coef)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GgdFit {
    pub alpha: f64,
    pub sigma_sq: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggdFit {
    pub alpha: f64,
    pub mean: f64,
    pub left_var: f64,
    pub right_var: f64,
}

fn check_samples(samples: &[f64], min: usize) -> Result<()> {
    if samples.len() < min {
        return Err(Error::Fit(format!("{} samples, need at least {min}", samples.len())));
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::Fit("non-finite sample".into()));
    }
    Ok(())
}

fn ggd_raw(samples: &[f64]) -> Result<GgdFit> {
    let n = samples.len() as f64;
    let m2 = samples.iter().map(|v| v * v).sum::<f64>() / n;
    let m1 = samples.iter().map(|v| v.abs()).sum::<f64>() / n;
    if !(m2 > 0.0) {
        return Err(Error::Fit("samples have zero variance".into()));
    }
    Ok(GgdFit {
        alpha: invert_moment_ratio(m1 * m1 / m2),
        sigma_sq: m2,
    })
}

pub fn fit_ggd(samples: &[f64]) -> Result<GgdFit> {
    check_samples(samples, MIN_FIT_SAMPLES)?;
    ggd_raw(samples)
}

fn aggd_raw(samples: &[f64]) -> Result<AggdFit> {
    let (mut ls, mut ln, mut rs, mut rn) = (0.0, 0usize, 0.0, 0usize);
    for &v in samples {
        if v < 0.0 {
            ls += v * v;
            ln += 1;
        } else if v > 0.0 {
            rs += v * v;
            rn += 1;
        }
    }
    if ln == 0 || rn == 0 {
        return Err(Error::Fit("samples lie on one side of zero".into()));
    }
    let left_var = ls / ln as f64;
    let right_var = rs / rn as f64;
    let n = samples.len() as f64;
    let m1 = samples.iter().map(|v| v.abs()).sum::<f64>() / n;
    let m2 = samples.iter().map(|v| v * v).sum::<f64>() / n;
    let g = (left_var / right_var).sqrt();
    let r = m1 * m1 / m2;
    let r_norm = r * (g.powi(3) + 1.0) * (g + 1.0) / (g * g + 1.0).powi(2);
    let alpha = invert_moment_ratio(r_norm);
    let k = (gamma(1.0 / alpha) / gamma(3.0 / alpha)).sqrt();
    let mean = (right_var.sqrt() - left_var.sqrt()) * k * gamma(2.0 / alpha) / gamma(1.0 / alpha);
    Ok(AggdFit {
        alpha,
        mean,
        left_var,
        right_var,
    })
}

pub fn fit_aggd(samples: &[f64]) -> Result<AggdFit> {
    check_samples(samples, MIN_FIT_SAMPLES)?;
    aggd_raw(samples)
}

/// The 18 values of one scale of one patch.
fn scale_features(coef: &[f64], w: usize, rows: std::ops::Range<usize>, cols: std::ops::Range<usize>, h: usize) -> Result<Vec<f64>> {
    let patch: Vec<f64> = rows
        .clone()
        .flat_map(|r| cols.clone().map(move |c| coef[r * w + c]))
        .collect();
    if patch.len() < MIN_PATCH_SAMPLES {
        return Err(Error::Fit("patch too small".into()));
    }
    let g = ggd_raw(&patch)?;
    let mut out = vec![g.alpha, g.sigma_sq];
    // right, down, down-right, down-left neighbours with wrap-around
    for (dr, dc) in [(0isize, 1isize), (1, 0), (1, 1), (1, -1)] {
        let prod: Vec<f64> = rows
            .clone()
            .flat_map(|r| {
                cols.clone().map(move |c| {
                    let r2 = (r as isize + dr).rem_euclid(h as isize) as usize;
                    let c2 = (c as isize + dc).rem_euclid(w as isize) as usize;
                    coef[r * w + c] * coef[r2 * w + c2]
                })
            })
            .collect();
        let a = aggd_raw(&prod)?;
        out.extend([a.alpha, a.mean, a.left_var, a.right_var]);
    }
    Ok(out)
}

fn mean_pool2(data: &[f64], h: usize, w: usize) -> Vec<f64> {
    let (h2, w2) = (h / 2, w / 2);
    let mut out = vec![0.0; h2 * w2];
    for r in 0..h2 {
        for c in 0..w2 {
            out[r * w2 + c] = 0.25
                * (data[2 * r * w + 2 * c]
                    + data[2 * r * w + 2 * c + 1]
                    + data[(2 * r + 1) * w + 2 * c]
                    + data[(2 * r + 1) * w + 2 * c + 1]);
        }
    }
    out
}

/// Which patches contribute features.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PatchSelection {
    /// Foreground patches whose mean local deviation exceeds
    /// `sharpness_fraction` of the sharpest one (pristine corpora).
    Sharpest,
    /// Every foreground patch (images under test).
    AllForeground,
}

/// Per-patch feature rows. `mask` marks foreground pixels; without one,
/// nonzero pixels count as foreground.
pub fn patch_features(img: &Image2D, mask: Option<&[bool]>, cfg: &NiqeConfig, selection: PatchSelection) -> Result<Vec<Vec<f64>>> {
    cfg.validate()?;
    let ps = cfg.patch_size;
    let (ph, pw) = (img.height() / ps, img.width() / ps);
    if ph * pw < 4 {
        return Err(Error::Dimension(format!(
            "{}x{} image admits {} patches of size {ps}, need 4",
            img.height(),
            img.width(),
            ph * pw
        )));
    }
    if let Some(m) = mask {
        if m.len() != img.data().len() {
            return Err(Error::Dimension("foreground mask does not match the image".into()));
        }
    }
    if img.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::Validation("image holds non-finite values".into()));
    }
    let (h, w) = (ph * ps, pw * ps);
    let src_w = img.width();
    let cropped: Vec<f64> = (0..h).flat_map(|r| img.data()[r * src_w..r * src_w + w].to_vec()).collect();
    let fg: Vec<bool> = (0..h)
        .flat_map(|r| {
            (0..w).map(move |c| match mask {
                Some(m) => m[r * src_w + c],
                None => img.data()[r * src_w + c] != 0.0,
            })
        })
        .collect();
    let (coef1, sigma1) = mscn_parts(&Image2D::new(h, w, cropped.clone())?, cfg)?;
    let coef2 = if cfg.scales == 2 {
        let small = Image2D::new(h / 2, w / 2, mean_pool2(&cropped, h, w))?;
        Some(mscn_parts(&small, cfg)?.0)
    } else {
        None
    };

    let mut candidates = Vec::new();
    for pr in 0..ph {
        for pc in 0..pw {
            let rows = pr * ps..(pr + 1) * ps;
            let cols = pc * ps..(pc + 1) * ps;
            let fg_count = rows.clone().flat_map(|r| cols.clone().map(move |c| (r, c))).filter(|&(r, c)| fg[r * w + c]).count();
            if (fg_count as f64) < cfg.min_foreground * (ps * ps) as f64 {
                continue;
            }
            let sharp = rows.clone().flat_map(|r| cols.clone().map(move |c| (r, c))).map(|(r, c)| sigma1[r * w + c]).sum::<f64>()
                / (ps * ps) as f64;
            candidates.push((pr, pc, sharp));
        }
    }
    if selection == PatchSelection::Sharpest {
        let max = candidates.iter().map(|c| c.2).fold(0.0, f64::max);
        candidates.retain(|c| c.2 > cfg.sharpness_fraction * max);
    }
    let mut rows_out = Vec::with_capacity(candidates.len());
    for (pr, pc, _) in candidates {
        let mut f = match scale_features(&coef1, w, pr * ps..(pr + 1) * ps, pc * ps..(pc + 1) * ps, h) {
            Ok(f) => f,
            Err(_) => continue,
        };
        if let Some(c2) = &coef2 {
            let q = ps / 2;
            match scale_features(c2, w / 2, pr * q..(pr + 1) * q, pc * q..(pc + 1) * q, h / 2) {
                Ok(f2) => f.extend(f2),
                Err(_) => continue,
            }
        }
        rows_out.push(f);
    }
    if rows_out.is_empty() {
        return Err(Error::Degenerate("no patch survived foreground, sharpness and fit checks".into()));
    }
    Ok(rows_out)
}

/// Features with the pristine-corpus patch selection.
pub fn niqe_features(img: &Image2D, mask: Option<&[bool]>, cfg: &NiqeConfig) -> Result<Vec<Vec<f64>>> {
    patch_features(img, mask, cfg, PatchSelection::Sharpest)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MvgModel {
    pub mean: Vec<f64>,
    /// Row-major `d x d`.
    pub cov: Vec<f64>,
    pub corpus_id: String,
    pub patch_count: usize,
    /// Value added to the diagonal (0 when none was needed).
    pub ridge: f64,
}

impl MvgModel {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    fn cov_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.dim(), self.dim(), &self.cov)
    }
}

fn mvg_from_rows(rows: &[Vec<f64>], corpus_id: &str, min_rows: usize) -> Result<MvgModel> {
    let d = rows.first().map(Vec::len).unwrap_or(0);
    if rows.len() < min_rows.max(1) || d == 0 {
        return Err(Error::Fit(format!("{} feature rows, need at least {}", rows.len(), min_rows.max(1))));
    }
    if rows.iter().any(|r| r.len() != d || r.iter().any(|v| !v.is_finite())) {
        return Err(Error::Fit("ragged or non-finite feature rows".into()));
    }
    let n = rows.len() as f64;
    let mut mean = vec![0.0; d];
    for r in rows {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut cov = vec![0.0; d * d];
    for r in rows {
        for i in 0..d {
            let di = r[i] - mean[i];
            for j in i..d {
                cov[i * d + j] += di * (r[j] - mean[j]);
            }
        }
    }
    for i in 0..d {
        for j in i..d {
            cov[i * d + j] /= n;
            cov[j * d + i] = cov[i * d + j];
        }
    }
    let mut model = MvgModel {
        mean,
        cov,
        corpus_id: corpus_id.to_string(),
        patch_count: rows.len(),
        ridge: 0.0,
    };
    let eig = SymmetricEigen::new(model.cov_matrix());
    if eig.eigenvalues.min() < 1e-10 {
        let trace: f64 = (0..d).map(|i| model.cov[i * d + i]).sum();
        let ridge = (1e-6 * trace / d as f64).max(1e-10);
        for i in 0..d {
            model.cov[i * d + i] += ridge;
        }
        model.ridge = ridge;
    }
    Ok(model)
}

/// Mean and population covariance; needs at least twice as many rows as features.
pub fn fit_mvg(rows: &[Vec<f64>], corpus_id: &str) -> Result<MvgModel> {
    let d = rows.first().map(Vec::len).unwrap_or(1);
    mvg_from_rows(rows, corpus_id, 2 * d)
}

/// Same statistics from as few as two rows, for the few patches of an image
/// under test; the pooled covariance in [`niqe_score`] keeps the distance defined.
pub fn fit_mvg_relaxed(rows: &[Vec<f64>], corpus_id: &str) -> Result<MvgModel> {
    mvg_from_rows(rows, corpus_id, 2)
}

pub fn niqe_score(test: &MvgModel, pristine: &MvgModel) -> Result<f64> {
    let d = test.dim();
    if pristine.dim() != d {
        return Err(Error::Dimension(format!("feature lengths differ: {d} vs {}", pristine.dim())));
    }
    let pooled = (test.cov_matrix() + pristine.cov_matrix()) * 0.5;
    let diff = DVector::from_iterator(d, test.mean.iter().zip(&pristine.mean).map(|(a, b)| a - b));
    let chol = match pooled.clone().cholesky() {
        Some(c) => c,
        None => {
            let ridge = (1e-6 * pooled.trace() / d as f64).max(1e-10);
            let ridged = pooled + DMatrix::identity(d, d) * ridge;
            ridged
                .cholesky()
                .ok_or_else(|| Error::Numerical("pooled covariance is singular after ridging".into()))?
        }
    };
    let x = chol.solve(&diff);
    let q = diff.dot(&x);
    if !q.is_finite() {
        return Err(Error::Numerical("non-finite quality distance".into()));
    }
    Ok(q.max(0.0).sqrt())
}

/// Score of a set of images under test (all foreground patches pooled).
pub fn niqe_images(images: &[(&Image2D, Option<&[bool]>)], pristine: &MvgModel, cfg: &NiqeConfig) -> Result<f64> {
    let mut rows = Vec::new();
    for (img, mask) in images {
        match patch_features(img, *mask, cfg, PatchSelection::AllForeground) {
            Ok(r) => rows.extend(r),
            Err(Error::Degenerate(_)) => continue,
            Err(e) => return Err(e),
        }
    }
    if rows.is_empty() {
        return Err(Error::Degenerate("no usable patches in any image".into()));
    }
    let model = fit_mvg_relaxed(&rows, "test")?;
    niqe_score(&model, pristine)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ModelHeader {
    feature_len: usize,
    config: NiqeConfig,
    corpus_id: String,
    patch_count: usize,
    ridge: f64,
    value_type: String,
    /// Payload: mean then row-major covariance.
    payload: String,
    /// Deviations from the original natural-image model, for the record.
    deviations: Vec<String>,
}

pub const MODEL_DEVIATIONS: [&str; 4] = [
    "pristine model fitted on motion-free slices",
    "patches with under min_foreground foreground pixels dropped",
    "patch size reduced to suit the matrix size",
    "second scale by 2x2 mean pooling",
];

pub fn write_model(stem: &Path, model: &MvgModel, cfg: &NiqeConfig) -> Result<PathBuf> {
    let header_path = stem.with_extension("json");
    let bin_path = stem.with_extension("bin");
    let bytes: Vec<u8> = model.mean.iter().chain(&model.cov).flat_map(|v| v.to_le_bytes()).collect();
    fs::write(&bin_path, bytes).map_err(|e| Error::io(&bin_path, e))?;
    let header = ModelHeader {
        feature_len: model.dim(),
        config: cfg.clone(),
        corpus_id: model.corpus_id.clone(),
        patch_count: model.patch_count,
        ridge: model.ridge,
        value_type: "float64 little-endian".into(),
        payload: bin_path
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default(),
        deviations: MODEL_DEVIATIONS.iter().map(|s| s.to_string()).collect(),
    };
    write_json(&header_path, &header)?;
    Ok(header_path)
}

pub fn read_model(path: &Path) -> Result<(MvgModel, NiqeConfig)> {
    let header_path = path.with_extension("json");
    let h: ModelHeader = read_json(&header_path)?;
    let bin_path = header_path.parent().unwrap_or_else(|| Path::new(".")).join(&h.payload);
    let bytes = fs::read(&bin_path).map_err(|e| Error::io(&bin_path, e))?;
    let d = h.feature_len;
    if bytes.len() != (d + d * d) * 8 {
        return Err(Error::format(&bin_path, format!("expected {} bytes, found {}", (d + d * d) * 8, bytes.len())));
    }
    let vals: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Ok((
        MvgModel {
            mean: vals[..d].to_vec(),
            cov: vals[d..].to_vec(),
            corpus_id: h.corpus_id,
            patch_count: h.patch_count,
            ridge: h.ridge,
        },
        h.config,
    ))
}

