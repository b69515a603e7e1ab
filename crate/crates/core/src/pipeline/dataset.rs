use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{derive_seed, relative, resolve, PipelineConfig, ReferencePose, DOMAIN_MOTION, DOMAIN_TEST, DOMAIN_TRAIN};
use crate::error::{Error, Result};
use crate::metrics::{fit_mvg, patch_features, MvgModel, PatchSelection};
use crate::motion::{apply_rigid, corrupt, random_trajectory, trajectory_stats, TrajectoryManifest, TrajectoryStats};
use crate::nn::Dataset;
use crate::phantom::{generate_on, random_spec};
use crate::preprocess::{estimate_foreground, normalize, ForegroundMask, NormalizationRecord};
use crate::volume::io::{read_json, write_json};
use crate::volume::{read_volume, write_volume, Geometry, Image2D, Volume};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }

    fn domain(self) -> u64 {
        match self {
            Split::Train => DOMAIN_TRAIN,
            Split::Test => DOMAIN_TEST,
        }
    }
}

/// One corrupted acquisition of one phantom. Paths are relative to the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleEntry {
    pub sample_id: String,
    pub phantom_id: String,
    pub phantom_seed: u64,
    pub motion_index: usize,
    pub trajectory_seed: u64,
    pub phantom_spec: String,
    pub trajectory: String,
    pub reference: String,
    pub corrupted: String,
    pub reference_normalized: String,
    pub corrupted_normalized: String,
    pub reference_record: NormalizationRecord,
    pub corrupted_record: NormalizationRecord,
    /// Indices along the slice axis used for training and evaluation.
    pub slices: Vec<usize>,
    pub stats: TrajectoryStats,
    /// Every event of the trajectory is the identity pose.
    pub identity_only: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub split: Split,
    pub master_seed: u64,
    pub config: PipelineConfig,
    pub phantom_ids: Vec<String>,
    pub entries: Vec<SampleEntry>,
}

impl DatasetManifest {
    pub fn write(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let m: DatasetManifest = read_json(path)?;
        m.config.validate().map_err(|e| Error::format(path, e.to_string()))?;
        Ok(m)
    }

    pub fn slice_count(&self) -> usize {
        self.entries.iter().map(|e| e.slices.len()).sum()
    }
}

fn foreground_share(mask: &[bool]) -> f64 {
    mask.iter().filter(|&&m| m).count() as f64 / mask.len().max(1) as f64
}

fn build_split(cfg: &PipelineConfig, split: Split, count: usize, seed: u64, dir: &Path) -> Result<DatasetManifest> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let geometry = Geometry::new(cfg.dims, cfg.spacing);
    let pe = geometry.phase_encode_axis;
    let n_pe = cfg.dims[pe];
    let mut entries = Vec::new();
    let mut phantom_ids = Vec::new();
    for idx in 0..count {
        let phantom_id = format!("{}-{idx:03}", split.name());
        let phantom_seed = derive_seed(seed, split.domain(), idx as u64);
        let pdir = dir.join(&phantom_id);
        fs::create_dir_all(&pdir).map_err(|e| Error::io(&pdir, e))?;
        let spec = random_spec(phantom_seed, &cfg.phantom)?;
        let spec_path = pdir.join("phantom.json");
        spec.write(&spec_path)?;
        let clean = generate_on(&spec, geometry.clone())?;
        write_volume(&pdir.join("clean"), &clean)?;
        for m in 0..cfg.motions_per_phantom {
            let trajectory_seed = derive_seed(phantom_seed, DOMAIN_MOTION, m as u64);
            let traj = random_trajectory(trajectory_seed, n_pe, &cfg.bounds)?;
            let sample_id = format!("{phantom_id}-m{m}");
            let sdir = pdir.join(format!("motion-{m}"));
            fs::create_dir_all(&sdir).map_err(|e| Error::io(&sdir, e))?;
            let traj_path = sdir.join("trajectory.json");
            TrajectoryManifest::from_trajectory(&traj, &geometry.axis_labels[pe], pe, Some(trajectory_seed), Some(cfg.bounds))
                .write(&traj_path)?;

            let (_, corrupted) = corrupt(&clean, &traj)?;
            let reference = match cfg.reference_pose {
                ReferencePose::CenterLine => apply_rigid(&clean, &traj.pose_at(n_pe / 2))?,
                ReferencePose::Initial => clean.clone(),
            };
            let ref_mask = estimate_foreground(&reference, &cfg.foreground)?;
            let cor_mask = estimate_foreground(&corrupted, &cfg.foreground)?;
            let (ref_norm, reference_record) = normalize(&reference, &ref_mask)?;
            let (cor_norm, corrupted_record) = normalize(&corrupted, &cor_mask)?;
            let mut slices = Vec::new();
            for s in 0..cfg.dims[cfg.slice_axis] {
                let a = foreground_share(&ref_mask.slice(cfg.slice_axis, s)?);
                let b = foreground_share(&cor_mask.slice(cfg.slice_axis, s)?);
                if a >= cfg.min_slice_foreground && b >= cfg.min_slice_foreground {
                    slices.push(s);
                }
            }
            let paths: Vec<PathBuf> = [
                ("reference", &reference),
                ("corrupted", &corrupted),
                ("reference_normalized", &ref_norm),
                ("corrupted_normalized", &cor_norm),
            ]
            .iter()
            .map(|(name, v)| write_volume(&sdir.join(name), v))
            .collect::<Result<_>>()?;
            entries.push(SampleEntry {
                sample_id,
                phantom_id: phantom_id.clone(),
                phantom_seed,
                motion_index: m,
                trajectory_seed,
                phantom_spec: relative(&spec_path, dir),
                trajectory: relative(&traj_path, dir),
                reference: relative(&paths[0], dir),
                corrupted: relative(&paths[1], dir),
                reference_normalized: relative(&paths[2], dir),
                corrupted_normalized: relative(&paths[3], dir),
                reference_record,
                corrupted_record,
                slices,
                stats: trajectory_stats(&traj),
                identity_only: traj.events().iter().all(|e| e.pose.is_identity()),
            });
        }
        phantom_ids.push(phantom_id);
    }
    let manifest = DatasetManifest {
        split,
        master_seed: seed,
        config: cfg.clone(),
        phantom_ids,
        entries,
    };
    manifest.write(&dir.join("manifest.json"))?;
    Ok(manifest)
}

/// Builds `out_dir/train` and `out_dir/test`, each with its own manifest.
pub fn build_dataset(
    cfg: &PipelineConfig,
    n_train: usize,
    n_test: usize,
    seed: u64,
    out_dir: &Path,
) -> Result<(DatasetManifest, DatasetManifest)> {
    cfg.validate()?;
    if n_train == 0 || n_test == 0 {
        return Err(Error::Validation("need at least one train and one test phantom".into()));
    }
    let train = build_split(cfg, Split::Train, n_train, seed, &out_dir.join("train"))?;
    let test = build_split(cfg, Split::Test, n_test, seed, &out_dir.join("test"))?;
    Ok((train, test))
}

pub(crate) struct LoadedSample {
    pub reference: Volume,
    pub corrupted: Volume,
    pub reference_normalized: Volume,
    pub corrupted_normalized: Volume,
    pub reference_mask: ForegroundMask,
    pub corrupted_mask: ForegroundMask,
}

fn load_checked(base: &Path, rel: &str, cfg: &PipelineConfig) -> Result<Volume> {
    let path = resolve(base, rel);
    let v = read_volume(&path)?;
    if v.dims() != cfg.dims {
        return Err(Error::format(&path, format!("dims {:?} differ from manifest {:?}", v.dims(), cfg.dims)));
    }
    Ok(v)
}

pub(crate) fn load_sample(m: &DatasetManifest, base: &Path, e: &SampleEntry) -> Result<LoadedSample> {
    let reference = load_checked(base, &e.reference, &m.config)?;
    let corrupted = load_checked(base, &e.corrupted, &m.config)?;
    let reference_mask = estimate_foreground(&reference, &m.config.foreground)?;
    let corrupted_mask = estimate_foreground(&corrupted, &m.config.foreground)?;
    Ok(LoadedSample {
        reference_normalized: load_checked(base, &e.reference_normalized, &m.config)?,
        corrupted_normalized: load_checked(base, &e.corrupted_normalized, &m.config)?,
        reference,
        corrupted,
        reference_mask,
        corrupted_mask,
    })
}

pub(crate) fn manifest_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."))
}

/// Normalized (corrupted input, reference target) pairs of every listed slice.
pub fn load_slice_pairs(m: &DatasetManifest, manifest_path: &Path) -> Result<Dataset> {
    let base = manifest_dir(manifest_path);
    let axis = m.config.slice_axis;
    let mut data: Option<Dataset> = None;
    for e in &m.entries {
        let input = load_checked(&base, &e.corrupted_normalized, &m.config)?;
        let target = load_checked(&base, &e.reference_normalized, &m.config)?;
        for &s in &e.slices {
            let a = input.extract_slice(axis, s)?;
            let b = target.extract_slice(axis, s)?;
            let d = data.get_or_insert_with(|| Dataset::new(a.height(), a.width()));
            d.push(&a, &b)?;
        }
    }
    data.filter(|d| !d.is_empty())
        .ok_or_else(|| Error::Validation("manifest lists no usable slices".into()))
}

pub(crate) fn scaled(img: &Image2D, scale: f64) -> Result<Image2D> {
    img.with_data(img.data().iter().map(|v| v * scale).collect())
}

/// Pristine quality model from the normalized reference slices of a manifest.
pub fn fit_pristine(m: &DatasetManifest, manifest_path: &Path) -> Result<MvgModel> {
    let base = manifest_dir(manifest_path);
    let axis = m.config.slice_axis;
    let mut rows = Vec::new();
    for e in &m.entries {
        let s = load_sample(m, &base, e)?;
        for &k in &e.slices {
            let img = scaled(&s.reference_normalized.extract_slice(axis, k)?, m.config.niqe_intensity_scale)?;
            let mask = s.reference_mask.slice(axis, k)?;
            match patch_features(&img, Some(&mask), &m.config.niqe, PatchSelection::Sharpest) {
                Ok(r) => rows.extend(r),
                Err(Error::Degenerate(_)) => {}
                Err(err) => return Err(err),
            }
        }
    }
    fit_mvg(&rows, &format!("{}-seed{}", m.split.name(), m.master_seed))
}

/// Per sample: mean center distance and percentage error of the corrupted
/// input against its reference over the listed slices.
pub fn corruption_severity(m: &DatasetManifest, manifest_path: &Path) -> Result<Vec<(f64, f64)>> {
    let base = manifest_dir(manifest_path);
    let axis = m.config.slice_axis;
    let mut out = Vec::with_capacity(m.entries.len());
    for e in &m.entries {
        let s = load_sample(m, &base, e)?;
        let (mut num, mut den) = (0.0, 0.0);
        for &k in &e.slices {
            let r = s.reference.extract_slice(axis, k)?;
            let c = s.corrupted.extract_slice(axis, k)?;
            let mask = s.reference_mask.slice(axis, k)?;
            for ((a, b), _) in c.data().iter().zip(r.data()).zip(&mask).filter(|(_, &f)| f) {
                num += (a - b).abs();
                den += b.abs();
            }
        }
        if den > 0.0 {
            out.push((e.stats.mean_center_distance, 100.0 * num / den));
        }
    }
    Ok(out)
}
