//! Shared fixtures for the criterion benchmarks.

use kmotion_core::motion::{random_trajectory, MotionBounds, MotionTrajectory};
use kmotion_core::phantom::{generate_on, random_spec, PhantomConfig};
use kmotion_core::volume::{Geometry, Volume};

/// Random head phantom with 4 mm in-plane and 8 mm through-plane spacing.
pub fn phantom(dims: [usize; 3], seed: u64) -> Volume {
    let spec = random_spec(seed, &PhantomConfig::default()).expect("phantom spec");
    generate_on(&spec, Geometry::new(dims, [4.0, 4.0, 8.0])).expect("phantom volume")
}

pub fn trajectory(n_pe: usize, seed: u64) -> MotionTrajectory {
    random_trajectory(seed, n_pe, &MotionBounds::default()).expect("trajectory")
}
