use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::dataset::{load_sample, manifest_dir, scaled, DatasetManifest, SampleEntry};
use crate::error::{Error, Result};
use crate::metrics::{aggregate_improvement, mean_std, niqe_images, percentage_error, read_model, spearman, MvgModel, NiqeConfig};
use crate::nn::{correct, read_weights, NetworkParameters};
use crate::volume::io::write_json;
use crate::volume::{write_pgm16, Image2D};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub sample_id: String,
    pub phantom_id: String,
    pub identity_only: bool,
    pub mean_abs_translation: f64,
    pub mean_abs_rotation: f64,
    pub mean_center_distance: f64,
    pub slices: usize,
    /// Mean over slices of the per-slice percentage error.
    pub pct_error_corrupted: f64,
    pub pct_error_corrected: f64,
    /// Percentage error pooled over all evaluated slices of the volume.
    pub volume_pct_error_corrupted: f64,
    pub volume_pct_error_corrected: f64,
    pub niqe_before: f64,
    pub niqe_after: f64,
    pub niqe_improvement: f64,
}

const NUMERIC_COLUMNS: [&str; 11] = [
    "mean_abs_translation_mm",
    "mean_abs_rotation_deg",
    "mean_center_distance",
    "slices",
    "pct_error_corrupted",
    "pct_error_corrected",
    "volume_pct_error_corrupted",
    "volume_pct_error_corrected",
    "niqe_before",
    "niqe_after",
    "niqe_improvement_pct",
];

impl ReportRow {
    fn numeric(&self) -> [f64; 11] {
        [
            self.mean_abs_translation,
            self.mean_abs_rotation,
            self.mean_center_distance,
            self.slices as f64,
            self.pct_error_corrupted,
            self.pct_error_corrected,
            self.volume_pct_error_corrupted,
            self.volume_pct_error_corrected,
            self.niqe_before,
            self.niqe_after,
            self.niqe_improvement,
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationSummary {
    pub samples: usize,
    pub slices: usize,
    /// Mean over every evaluated slice.
    pub slice_pct_error_corrupted: f64,
    pub slice_pct_error_corrected: f64,
    pub niqe_mean_before: f64,
    pub niqe_mean_after: f64,
    pub niqe_mean_improvement: f64,
    /// Rank correlation of input error with proximity to the k-space center.
    pub severity_proximity_spearman: Option<f64>,
    pub flagged_identity_rows: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    /// Sorted ascending by mean center distance.
    pub rows: Vec<ReportRow>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub summary: EvaluationSummary,
    pub failures: Vec<(String, String)>,
}

impl EvaluationReport {
    pub fn columns() -> &'static [&'static str] {
        &NUMERIC_COLUMNS
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("sample_id,phantom_id,identity_only");
        for c in NUMERIC_COLUMNS {
            s.push(',');
            s.push_str(c);
        }
        s.push('\n');
        let push_vals = |s: &mut String, vals: &[f64]| {
            for v in vals {
                let _ = write!(s, ",{v}");
            }
            s.push('\n');
        };
        for r in &self.rows {
            let _ = write!(s, "{},{},{}", r.sample_id, r.phantom_id, r.identity_only);
            push_vals(&mut s, &r.numeric());
        }
        s.push_str("mean,,");
        push_vals(&mut s, &self.mean);
        s.push_str("std,,");
        push_vals(&mut s, &self.std);
        s
    }

    /// Quality table: one row per sample plus the column means.
    pub fn niqe_csv(&self) -> String {
        let mut s = String::from("sample_id,niqe_before,niqe_after,improvement_pct\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{},{}", r.sample_id, r.niqe_before, r.niqe_after, r.niqe_improvement);
        }
        let _ = writeln!(
            s,
            "mean,{},{},{}",
            self.summary.niqe_mean_before, self.summary.niqe_mean_after, self.summary.niqe_mean_improvement
        );
        s
    }
}

struct SampleResult {
    row: ReportRow,
    slice_errors: Vec<(f64, f64)>,
}

fn evaluate_sample(
    m: &DatasetManifest,
    base: &Path,
    e: &SampleEntry,
    p: &NetworkParameters,
    pristine: &MvgModel,
    niqe_cfg: &NiqeConfig,
    image_dir: &Path,
) -> Result<SampleResult> {
    if e.slices.is_empty() {
        return Err(Error::Validation("sample lists no slices".into()));
    }
    let s = load_sample(m, base, e)?;
    let axis = m.config.slice_axis;
    let scale = m.config.niqe_intensity_scale;
    let mut slice_errors = Vec::with_capacity(e.slices.len());
    let (mut vn_in, mut vn_out, mut vd) = (0.0, 0.0, 0.0);
    let mut before_imgs = Vec::new();
    let mut after_imgs = Vec::new();
    let mut masks = Vec::new();
    let mid = e.slices[e.slices.len() / 2];
    for &k in &e.slices {
        let input = s.corrupted_normalized.extract_slice(axis, k)?;
        let out = correct(p, &input)?;
        let rec = &e.corrupted_record;
        let out_raw = out.with_data(out.data().iter().map(|&y| rec.inverse(y)).collect())?;
        let reference = s.reference.extract_slice(axis, k)?;
        let corrupted = s.corrupted.extract_slice(axis, k)?;
        let ref_mask = s.reference_mask.slice(axis, k)?;
        let e_in = percentage_error(corrupted.data(), reference.data(), &ref_mask)?;
        let e_out = percentage_error(out_raw.data(), reference.data(), &ref_mask)?;
        slice_errors.push((e_in, e_out));
        for (((c, o), r), _) in corrupted
            .data()
            .iter()
            .zip(out_raw.data())
            .zip(reference.data())
            .zip(&ref_mask)
            .filter(|(_, &f)| f)
        {
            vn_in += (c - r).abs();
            vn_out += (o - r).abs();
            vd += r.abs();
        }
        if k == mid {
            let err = |img: &Image2D| {
                img.with_data(
                    img.data()
                        .iter()
                        .zip(reference.data())
                        .zip(&ref_mask)
                        .map(|((a, b), &f)| if f { (a - b).abs() } else { 0.0 })
                        .collect(),
                )
            };
            write_pgm16(&image_dir.join(format!("{}_error_corrupted.pgm", e.sample_id)), &err(&corrupted)?)?;
            write_pgm16(&image_dir.join(format!("{}_error_corrected.pgm", e.sample_id)), &err(&out_raw)?)?;
            write_pgm16(&image_dir.join(format!("{}_corrected.pgm", e.sample_id)), &out_raw)?;
        }
        let cor_mask = s.corrupted_mask.slice(axis, k)?;
        let after = out.with_data(out.data().iter().zip(&cor_mask).map(|(&v, &f)| if f { v } else { 0.0 }).collect())?;
        before_imgs.push(scaled(&input, scale)?);
        after_imgs.push(scaled(&after, scale)?);
        masks.push(cor_mask);
    }
    let pairs = |imgs: &[Image2D]| -> Vec<(Image2D, Vec<bool>)> { imgs.iter().cloned().zip(masks.iter().cloned()).collect() };
    let score = |items: &[(Image2D, Vec<bool>)]| {
        let refs: Vec<(&Image2D, Option<&[bool]>)> = items.iter().map(|(i, m)| (i, Some(m.as_slice()))).collect();
        niqe_images(&refs, pristine, niqe_cfg)
    };
    let niqe_before = score(&pairs(&before_imgs))?;
    let niqe_after = score(&pairs(&after_imgs))?;
    let n = slice_errors.len() as f64;
    let row = ReportRow {
        sample_id: e.sample_id.clone(),
        phantom_id: e.phantom_id.clone(),
        identity_only: e.identity_only,
        mean_abs_translation: e.stats.mean_abs_translation,
        mean_abs_rotation: e.stats.mean_abs_rotation,
        mean_center_distance: e.stats.mean_center_distance,
        slices: e.slices.len(),
        pct_error_corrupted: slice_errors.iter().map(|x| x.0).sum::<f64>() / n,
        pct_error_corrected: slice_errors.iter().map(|x| x.1).sum::<f64>() / n,
        volume_pct_error_corrupted: if vd > 0.0 { 100.0 * vn_in / vd } else { f64::NAN },
        volume_pct_error_corrected: if vd > 0.0 { 100.0 * vn_out / vd } else { f64::NAN },
        niqe_before,
        niqe_after,
        niqe_improvement: if niqe_before != 0.0 { 100.0 * (niqe_before - niqe_after) / niqe_before } else { f64::NAN },
    };
    Ok(SampleResult { row, slice_errors })
}

/// Corrects every test sample, scores it and writes `report.csv`,
/// `niqe.csv`, `summary.json` and error images into `out_dir`.
pub fn run_evaluation(manifest_path: &Path, weights_path: &Path, model_path: &Path, out_dir: &Path) -> Result<EvaluationReport> {
    let m = DatasetManifest::read(manifest_path)?;
    let base = manifest_dir(manifest_path);
    let p = read_weights(weights_path)?;
    let (pristine, niqe_cfg) = read_model(model_path)?;
    if pristine.dim() != niqe_cfg.feature_len() {
        return Err(Error::format(model_path, "model length does not match its feature config"));
    }
    let image_dir = out_dir.join("error_images");
    fs::create_dir_all(&image_dir).map_err(|e| Error::io(&image_dir, e))?;

    let mut results = Vec::new();
    let mut failures = Vec::new();
    for e in &m.entries {
        match evaluate_sample(&m, &base, e, &p, &pristine, &niqe_cfg, &image_dir) {
            Ok(r) => results.push(r),
            Err(err) => failures.push((e.sample_id.clone(), err.to_string())),
        }
    }
    if results.is_empty() {
        return Err(Error::Validation(format!("no sample could be evaluated ({} failures)", failures.len())));
    }
    let all_slices: Vec<(f64, f64)> = results.iter().flat_map(|r| r.slice_errors.iter().copied()).collect();
    let mut rows: Vec<ReportRow> = results.into_iter().map(|r| r.row).collect();
    rows.sort_by(|a, b| {
        a.mean_center_distance
            .total_cmp(&b.mean_center_distance)
            .then_with(|| a.sample_id.cmp(&b.sample_id))
    });
    let (mut mean, mut std) = (Vec::new(), Vec::new());
    for j in 0..NUMERIC_COLUMNS.len() {
        let (mu, sd) = mean_std(&rows.iter().map(|r| r.numeric()[j]).collect::<Vec<_>>());
        mean.push(mu);
        std.push(sd);
    }
    let before: Vec<f64> = rows.iter().map(|r| r.niqe_before).collect();
    let after: Vec<f64> = rows.iter().map(|r| r.niqe_after).collect();
    let imp = aggregate_improvement(&before, &after)?;
    let proximity: Vec<f64> = rows.iter().map(|r| -r.mean_center_distance).collect();
    let severity: Vec<f64> = rows.iter().map(|r| r.volume_pct_error_corrupted).collect();
    let n = all_slices.len() as f64;
    let summary = EvaluationSummary {
        samples: rows.len(),
        slices: all_slices.len(),
        slice_pct_error_corrupted: all_slices.iter().map(|x| x.0).sum::<f64>() / n,
        slice_pct_error_corrected: all_slices.iter().map(|x| x.1).sum::<f64>() / n,
        niqe_mean_before: imp.mean_before,
        niqe_mean_after: imp.mean_after,
        niqe_mean_improvement: imp.mean_improvement,
        severity_proximity_spearman: spearman(&proximity, &severity).ok(),
        flagged_identity_rows: rows.iter().filter(|r| r.identity_only).map(|r| r.sample_id.clone()).collect(),
    };
    let report = EvaluationReport {
        rows,
        mean,
        std,
        summary,
        failures,
    };
    let write = |name: &str, text: String| {
        let path = out_dir.join(name);
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    };
    write("report.csv", report.to_csv())?;
    write("niqe.csv", report.niqe_csv())?;
    write_json(&out_dir.join("summary.json"), &report)?;
    Ok(report)
}
