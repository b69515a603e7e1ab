//! Rigid-body motion during a k-space acquisition.
//!
//! A motion trajectory splits the phase-encode lines into consecutive
//! segments, each acquired with the object held at one rigid pose. The
//! corrupted k-space is the sum over segments of the pose's k-space
//! restricted to the segment's lines; equivalently the corrupted image is the
//! sum over segments of the moved image circularly convolved, along the
//! phase-encode axis, with the inverse transform of the segment's mask.

mod kspace;
mod rigid;
mod trajectory;

pub use kspace::{
    band_error_shares, convolution_route, corrupt, mask_kernel, segment_masks, BandShares,
    SamplingMask, CONVOLUTION_ROUTE_MAX_EXTENT,
};
pub use rigid::{apply_rigid, RigidMotion};
pub use trajectory::{
    random_trajectory, trajectory_stats, MotionBounds, MotionTrajectory, Segment,
    TrajectoryManifest, TrajectoryStats,
};
