//! Dataset construction, training and evaluation runs with their manifests
//! and reports.

mod dataset;
mod evaluate;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use dataset::{
    build_dataset, corruption_severity, fit_pristine, load_slice_pairs, DatasetManifest, SampleEntry, Split,
};
pub use evaluate::{run_evaluation, EvaluationReport, EvaluationSummary, ReportRow};

use crate::error::{Error, Result};
use crate::metrics::NiqeConfig;
use crate::motion::MotionBounds;
use crate::nn::{self, NetworkConfig, NetworkParameters, TrainConfig};
use crate::phantom::PhantomConfig;
use crate::preprocess::ForegroundConfig;
use crate::volume::Dims;

/// Which pose the motion-free reference of a sample shows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferencePose {
    /// The pose in effect when the k-space center line was acquired.
    CenterLine,
    /// The pose at the start of the acquisition.
    Initial,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub dims: Dims,
    pub spacing: [f64; 3],
    pub slice_axis: usize,
    pub motions_per_phantom: usize,
    /// Slices whose foreground share is below this are skipped.
    pub min_slice_foreground: f64,
    pub reference_pose: ReferencePose,
    /// Normalized slices are multiplied by this before quality scoring.
    pub niqe_intensity_scale: f64,
    pub phantom: PhantomConfig,
    pub bounds: MotionBounds,
    pub foreground: ForegroundConfig,
    pub niqe: NiqeConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            dims: [64, 64, 16],
            spacing: [4.0, 4.0, 8.0],
            slice_axis: 2,
            motions_per_phantom: 5,
            min_slice_foreground: 0.05,
            reference_pose: ReferencePose::CenterLine,
            niqe_intensity_scale: 255.0,
            phantom: PhantomConfig::default(),
            bounds: MotionBounds::default(),
            foreground: ForegroundConfig::default(),
            niqe: NiqeConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dims.iter().any(|&d| d < 4) {
            return Err(Error::Validation(format!("dims {:?} too small", self.dims)));
        }
        if self.slice_axis > 2 {
            return Err(Error::Validation(format!("slice axis {} out of range", self.slice_axis)));
        }
        if self.motions_per_phantom == 0 {
            return Err(Error::Validation("motions per phantom must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.min_slice_foreground) {
            return Err(Error::Validation("min slice foreground must lie in [0, 1]".into()));
        }
        if !(self.niqe_intensity_scale > 0.0) {
            return Err(Error::Validation("quality intensity scale must be > 0".into()));
        }
        self.niqe.validate()
    }
}

const DOMAIN_TRAIN: u64 = 1;
const DOMAIN_TEST: u64 = 2;
const DOMAIN_MOTION: u64 = 3;

/// Counter-based seed: SplitMix64 finalizer over `(master, domain, index)`.
/// Adding phantoms or motions never changes the seeds of existing ones.
pub fn derive_seed(master: u64, domain: u64, index: u64) -> u64 {
    let mut z = master
        .wrapping_add(domain.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(index.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingArtifacts {
    pub weights: PathBuf,
    pub loss_csv: PathBuf,
    pub parameters: NetworkParameters,
    pub loss_history: Vec<f64>,
}

/// Trains on every listed slice pair of a manifest and persists weights and
/// loss history into `out_dir`.
pub fn run_training(
    manifest_path: &Path,
    net_cfg: &NetworkConfig,
    train_cfg: &TrainConfig,
    out_dir: &Path,
    progress: impl FnMut(usize, f64),
) -> Result<TrainingArtifacts> {
    let manifest = DatasetManifest::read(manifest_path)?;
    let data = load_slice_pairs(&manifest, manifest_path)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let init = nn::build_network(net_cfg, train_cfg.seed)?;
    let outcome = nn::train_with(&data, init, train_cfg, progress)?;
    let weights = nn::write_weights(&out_dir.join("weights"), &outcome.parameters)?;
    let loss_csv = out_dir.join("loss.csv");
    nn::write_loss_history(&loss_csv, &outcome.loss_history)?;
    Ok(TrainingArtifacts {
        weights,
        loss_csv,
        parameters: outcome.parameters,
        loss_history: outcome.loss_history,
    })
}

/// Path written into manifests: relative to `base`, forward slashes.
fn relative(path: &Path, base: &Path) -> String {
    let rel = path.strip_prefix(base).unwrap_or(path);
    rel.components()
        .map(|c| c.as_os_str().to_string_lossy().into_owned())
        .collect::<Vec<_>>()
        .join("/")
}

fn resolve(base: &Path, rel: &str) -> PathBuf {
    base.join(rel)
}
