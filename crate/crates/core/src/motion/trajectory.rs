use std::path::Path;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::RigidMotion;
use crate::error::{Error, Result};
use crate::volume::io::{read_json, write_json};

/// One block of consecutive phase-encode lines acquired at a fixed pose.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub start: usize,
    pub pose: RigidMotion,
}

/// Piecewise-constant pose over the phase-encode lines `0..n_pe`.
///
/// The first segment starts at line 0 with the identity pose; every later
/// segment is a motion event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionTrajectory {
    n_pe: usize,
    segments: Vec<Segment>,
}

impl MotionTrajectory {
    pub fn new(n_pe: usize, segments: Vec<Segment>) -> Result<Self> {
        if n_pe == 0 {
            return Err(Error::Validation("n_pe must be positive".into()));
        }
        let first = segments
            .first()
            .ok_or_else(|| Error::Validation("trajectory has no segments".into()))?;
        if first.start != 0 || !first.pose.is_identity() {
            return Err(Error::Validation(
                "first segment must start at line 0 with the identity pose".into(),
            ));
        }
        for w in segments.windows(2) {
            if w[1].start <= w[0].start {
                return Err(Error::Validation(format!(
                    "segment starts must be strictly increasing, got {} then {}",
                    w[0].start, w[1].start
                )));
            }
        }
        if let Some(last) = segments.last() {
            if last.start >= n_pe {
                return Err(Error::Validation(format!(
                    "segment start {} outside [0, {n_pe})",
                    last.start
                )));
            }
        }
        for s in &segments {
            s.pose.validate()?;
        }
        Ok(MotionTrajectory { n_pe, segments })
    }

    /// The trajectory with no motion at all.
    pub fn stationary(n_pe: usize) -> Result<Self> {
        MotionTrajectory::new(
            n_pe,
            vec![Segment {
                start: 0,
                pose: RigidMotion::IDENTITY,
            }],
        )
    }

    /// Identity until `events[0].0`, then each `(line, pose)` in turn.
    pub fn with_events(n_pe: usize, events: &[(usize, RigidMotion)]) -> Result<Self> {
        let mut segments = vec![Segment {
            start: 0,
            pose: RigidMotion::IDENTITY,
        }];
        segments.extend(events.iter().map(|&(start, pose)| Segment { start, pose }));
        MotionTrajectory::new(n_pe, segments)
    }

    pub fn n_pe(&self) -> usize {
        self.n_pe
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    /// Segments after the initial one.
    pub fn events(&self) -> &[Segment] {
        &self.segments[1..]
    }

    /// Line range `[start, end)` of segment `i`.
    pub fn segment_range(&self, i: usize) -> std::ops::Range<usize> {
        let start = self.segments[i].start;
        let end = self
            .segments
            .get(i + 1)
            .map(|s| s.start)
            .unwrap_or(self.n_pe);
        start..end
    }

    /// Pose in effect while line `line` is acquired.
    pub fn pose_at(&self, line: usize) -> RigidMotion {
        self.segments
            .iter()
            .rev()
            .find(|s| s.start <= line)
            .map(|s| s.pose)
            .unwrap_or(RigidMotion::IDENTITY)
    }
}

/// Per-component bounds for random poses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MotionBounds {
    pub max_translation_mm: f64,
    pub max_rotation_deg: f64,
}

impl Default for MotionBounds {
    fn default() -> Self {
        MotionBounds {
            max_translation_mm: 5.0,
            max_rotation_deg: 5.0,
        }
    }
}

/// One or two motion events (equally likely) at distinct lines drawn
/// uniformly from `1..n_pe`, each with a pose drawn uniformly within the
/// bounds on every component.
pub fn random_trajectory(seed: u64, n_pe: usize, bounds: &MotionBounds) -> Result<MotionTrajectory> {
    if n_pe < 4 {
        return Err(Error::Validation(format!("n_pe must be at least 4, got {n_pe}")));
    }
    let (bt, br) = (bounds.max_translation_mm, bounds.max_rotation_deg);
    if !(bt.is_finite() && bt >= 0.0 && br.is_finite() && br >= 0.0) {
        return Err(Error::Validation(format!("invalid motion bounds {bounds:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_events = if rng.random_bool(0.5) { 1 } else { 2 };
    let mut lines: Vec<usize> = index::sample(&mut rng, n_pe - 1, n_events)
        .into_iter()
        .map(|i| i + 1)
        .collect();
    lines.sort_unstable();
    let mut draw = |b: f64| if b > 0.0 { rng.random_range(-b..=b) } else { 0.0 };
    let events: Vec<(usize, RigidMotion)> = lines
        .into_iter()
        .map(|line| {
            let t = [draw(bt), draw(bt), draw(bt)];
            let r = [draw(br), draw(br), draw(br)];
            (line, RigidMotion::new(t, r))
        })
        .collect();
    MotionTrajectory::with_events(n_pe, &events)
}

/// Event magnitude and timing summaries.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStats {
    /// Mean of |translation| over all components of all events, mm.
    pub mean_abs_translation: f64,
    /// Mean of |rotation| over all components of all events, degrees.
    pub mean_abs_rotation: f64,
    /// Mean |event line - n_pe/2|, in lines.
    pub mean_center_distance: f64,
}

pub fn trajectory_stats(t: &MotionTrajectory) -> TrajectoryStats {
    let events = t.events();
    if events.is_empty() {
        return TrajectoryStats {
            mean_abs_translation: 0.0,
            mean_abs_rotation: 0.0,
            mean_center_distance: 0.0,
        };
    }
    let n = events.len() as f64;
    let c = (t.n_pe() / 2) as f64;
    let sum_abs = |f: fn(&RigidMotion) -> [f64; 3]| -> f64 {
        events
            .iter()
            .map(|e| f(&e.pose).iter().map(|x| x.abs()).sum::<f64>())
            .sum::<f64>()
            / (3.0 * n)
    };
    TrajectoryStats {
        mean_abs_translation: sum_abs(|p| p.translation),
        mean_abs_rotation: sum_abs(|p| p.rotation),
        mean_center_distance: events.iter().map(|e| (e.start as f64 - c).abs()).sum::<f64>() / n,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestSegment {
    pub start_index: usize,
    pub tx: f64,
    pub ty: f64,
    pub tz: f64,
    pub rx: f64,
    pub ry: f64,
    pub rz: f64,
}

/// On-disk description of a trajectory, enough to regenerate a corruption.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryManifest {
    pub n_pe: usize,
    pub axis_label: String,
    pub phase_encode_axis: usize,
    pub segments: Vec<ManifestSegment>,
    pub seed: Option<u64>,
    pub bounds: Option<MotionBounds>,
}

impl TrajectoryManifest {
    pub fn from_trajectory(
        t: &MotionTrajectory,
        axis_label: &str,
        phase_encode_axis: usize,
        seed: Option<u64>,
        bounds: Option<MotionBounds>,
    ) -> Self {
        let segments = t
            .segments()
            .iter()
            .map(|s| ManifestSegment {
                start_index: s.start,
                tx: s.pose.translation[0],
                ty: s.pose.translation[1],
                tz: s.pose.translation[2],
                rx: s.pose.rotation[0],
                ry: s.pose.rotation[1],
                rz: s.pose.rotation[2],
            })
            .collect();
        TrajectoryManifest {
            n_pe: t.n_pe(),
            axis_label: axis_label.to_string(),
            phase_encode_axis,
            segments,
            seed,
            bounds,
        }
    }

    pub fn to_trajectory(&self) -> Result<MotionTrajectory> {
        let segments = self
            .segments
            .iter()
            .map(|s| Segment {
                start: s.start_index,
                pose: RigidMotion::new([s.tx, s.ty, s.tz], [s.rx, s.ry, s.rz]),
            })
            .collect();
        MotionTrajectory::new(self.n_pe, segments)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn read(path: &Path) -> Result<Self> {
        read_json(path)
    }
}
