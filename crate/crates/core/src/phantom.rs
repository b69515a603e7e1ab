//! Synthetic head-like phantoms built from additive ellipsoids.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::io::{read_json, write_json};
use crate::volume::{Dims, Geometry, Volume};

/// Ellipsoid in fractional coordinates (`[0, 1]` along every axis), rotated
/// about axis 2 by `rotation_deg`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ellipsoid {
    pub center: [f64; 3],
    pub semi_axes: [f64; 3],
    pub rotation_deg: f64,
    pub intensity: f64,
}

impl Ellipsoid {
    /// Whether the fractional point `f` lies inside (boundary included).
    pub fn contains(&self, f: [f64; 3]) -> bool {
        let d = [
            f[0] - self.center[0],
            f[1] - self.center[1],
            f[2] - self.center[2],
        ];
        let (s, c) = self.rotation_deg.to_radians().sin_cos();
        let u0 = c * d[0] + s * d[1];
        let u1 = -s * d[0] + c * d[1];
        let q = (u0 / self.semi_axes[0]).powi(2)
            + (u1 / self.semi_axes[1]).powi(2)
            + (d[2] / self.semi_axes[2]).powi(2);
        q <= 1.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub ellipsoids: Vec<Ellipsoid>,
    /// Standard deviation of the additive Gaussian noise inside the object.
    pub noise_sigma: f64,
    pub seed: u64,
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        if self.ellipsoids.is_empty() {
            return Err(Error::Validation("phantom needs at least one ellipsoid".into()));
        }
        for (i, e) in self.ellipsoids.iter().enumerate() {
            if e.semi_axes.iter().any(|&a| !(a > 0.0 && a <= 0.5)) {
                return Err(Error::Validation(format!(
                    "ellipsoid {i}: semi-axes {:?} outside (0, 0.5]",
                    e.semi_axes
                )));
            }
            if e.center.iter().any(|&c| !(0.0..=1.0).contains(&c)) {
                return Err(Error::Validation(format!(
                    "ellipsoid {i}: center {:?} outside [0, 1]^3",
                    e.center
                )));
            }
            if !e.intensity.is_finite() || !e.rotation_deg.is_finite() {
                return Err(Error::Validation(format!("ellipsoid {i}: non-finite parameters")));
            }
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err(Error::Validation(format!(
                "noise sigma {} must be finite and non-negative",
                self.noise_sigma
            )));
        }
        Ok(())
    }

    /// Reflection through the mid-plane of axis 0.
    pub fn mirrored_axis0(&self) -> PhantomSpec {
        let mut out = self.clone();
        for e in &mut out.ellipsoids {
            e.center[0] = 1.0 - e.center[0];
            e.rotation_deg = -e.rotation_deg;
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let spec: PhantomSpec = read_json(path)?;
        spec.validate()?;
        Ok(spec)
    }
}

/// Fractional coordinate of voxel center `i` on an axis of extent `n`.
#[inline]
pub fn voxel_fraction(i: usize, n: usize) -> f64 {
    (i as f64 + 0.5) / n as f64
}

/// Renders the phantom on isotropic 1 mm voxels.
pub fn generate(spec: &PhantomSpec, dims: Dims) -> Result<Volume> {
    generate_on(spec, Geometry::new(dims, [1.0; 3]))
}

/// Renders the phantom onto `geometry`.
///
/// Each voxel is the sum of the intensities of the ellipsoids containing its
/// center. Gaussian noise is then added to voxels covered by at least one
/// ellipsoid, and the result is clamped at zero.
pub fn generate_on(spec: &PhantomSpec, geometry: Geometry) -> Result<Volume> {
    spec.validate()?;
    geometry.validate()?;
    let dims = geometry.dims;
    let noise = Normal::new(0.0, spec.noise_sigma.max(0.0))
        .map_err(|e| Error::Validation(format!("noise distribution: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut data = Vec::with_capacity(geometry.len());
    for i in 0..dims[0] {
        for j in 0..dims[1] {
            for k in 0..dims[2] {
                let f = [
                    voxel_fraction(i, dims[0]),
                    voxel_fraction(j, dims[1]),
                    voxel_fraction(k, dims[2]),
                ];
                let mut value = 0.0;
                let mut covered = false;
                for e in &spec.ellipsoids {
                    if e.contains(f) {
                        value += e.intensity;
                        covered = true;
                    }
                }
                if covered && spec.noise_sigma > 0.0 {
                    value += noise.sample(&mut rng);
                }
                data.push(value.max(0.0));
            }
        }
    }
    Volume::new(geometry, data)
}

/// Parameters for [`random_spec`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhantomConfig {
    pub min_interior: usize,
    pub max_interior: usize,
    /// Magnitude range of interior-structure intensities.
    pub intensity_range: (f64, f64),
    pub noise_sigma: f64,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        PhantomConfig {
            min_interior: 3,
            max_interior: 8,
            intensity_range: (0.05, 0.2),
            noise_sigma: 0.01,
        }
    }
}

/// A head-like spec: an enclosing shell, a darker brain region inside it,
/// and small interior structures of either contrast.
///
/// The enclosing ellipsoid keeps at least 0.08 of clearance from every face,
/// so volumes with extent 8 or more have an all-zero outer voxel layer.
pub fn random_spec(seed: u64, cfg: &PhantomConfig) -> Result<PhantomSpec> {
    if cfg.min_interior < 1 || cfg.max_interior < cfg.min_interior {
        return Err(Error::Validation(format!(
            "interior structure range {}..={} is empty",
            cfg.min_interior, cfg.max_interior
        )));
    }
    let (lo, hi) = cfg.intensity_range;
    if !(lo.is_finite() && hi.is_finite() && 0.0 <= lo && lo <= hi) {
        return Err(Error::Validation(format!("invalid intensity range {:?}", cfg.intensity_range)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let outer_center = [0, 1, 2].map(|_| 0.5 + rng.random_range(-0.02..=0.02));
    let outer_axes = [
        rng.random_range(0.34..=0.40),
        rng.random_range(0.30..=0.37),
        rng.random_range(0.30..=0.40),
    ];
    let outer_rot = rng.random_range(-10.0..=10.0);
    let shell = Ellipsoid {
        center: outer_center,
        semi_axes: outer_axes,
        rotation_deg: outer_rot,
        intensity: rng.random_range(0.8..=1.0),
    };
    let shell_scale = rng.random_range(0.85..=0.92);
    let brain = Ellipsoid {
        center: outer_center,
        semi_axes: outer_axes.map(|a| a * shell_scale),
        rotation_deg: outer_rot,
        intensity: -rng.random_range(0.25..=0.45),
    };
    let mut ellipsoids = vec![shell, brain];
    let n_interior = rng.random_range(cfg.min_interior..=cfg.max_interior);
    for _ in 0..n_interior {
        // Place the structure within the inner half of the brain region.
        let offset = [0, 1, 2].map(|a| rng.random_range(-0.5..=0.5) * brain.semi_axes[a]);
        let center = [0, 1, 2].map(|a| outer_center[a] + offset[a]);
        let semi_axes = [0, 1, 2].map(|_| rng.random_range(0.03..=0.14));
        let magnitude = rng.random_range(lo..=hi);
        let intensity = if rng.random_bool(0.5) { magnitude } else { -magnitude };
        ellipsoids.push(Ellipsoid {
            center,
            semi_axes,
            rotation_deg: rng.random_range(0.0..180.0),
            intensity,
        });
    }
    let spec = PhantomSpec {
        ellipsoids,
        noise_sigma: cfg.noise_sigma,
        seed,
    };
    spec.validate()?;
    Ok(spec)
}

/// Fixed 3D Shepp-Logan-style head: the reference object for artifact
/// experiments. Shepp's x maps to axis 1, y to axis 0, z to axis 2, and the
/// whole phantom is scaled by 0.9 about the center.
pub fn standard_phantom() -> PhantomSpec {
    // (intensity, semi-axes x/y/z, center x/y/z, rotation about z)
    const TABLE: [(f64, [f64; 3], [f64; 3], f64); 10] = [
        (1.0, [0.69, 0.92, 0.81], [0.0, 0.0, 0.0], 0.0),
        (-0.8, [0.6624, 0.874, 0.78], [0.0, -0.0184, 0.0], 0.0),
        (-0.2, [0.11, 0.31, 0.22], [0.22, 0.0, 0.0], -18.0),
        (-0.2, [0.16, 0.41, 0.28], [-0.22, 0.0, 0.0], 18.0),
        (0.1, [0.21, 0.25, 0.41], [0.0, 0.35, -0.15], 0.0),
        (0.1, [0.046, 0.046, 0.05], [0.0, 0.1, 0.25], 0.0),
        (0.1, [0.046, 0.046, 0.05], [0.0, -0.1, 0.25], 0.0),
        (0.1, [0.046, 0.023, 0.05], [-0.08, -0.605, 0.0], 0.0),
        (0.1, [0.023, 0.023, 0.02], [0.0, -0.606, 0.0], 0.0),
        (0.1, [0.023, 0.046, 0.02], [0.06, -0.605, 0.0], 0.0),
    ];
    let s = 0.9 / 2.0;
    let ellipsoids = TABLE
        .iter()
        .map(|&(intensity, a, c, rot)| Ellipsoid {
            center: [0.5 + s * c[1], 0.5 + s * c[0], 0.5 + s * c[2]],
            semi_axes: [s * a[1], s * a[0], s * a[2]],
            rotation_deg: rot,
            intensity,
        })
        .collect();
    PhantomSpec {
        ellipsoids,
        noise_sigma: 0.0,
        seed: 0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sphere(center: [f64; 3], r: f64, intensity: f64) -> Ellipsoid {
        Ellipsoid {
            center,
            semi_axes: [r; 3],
            rotation_deg: 0.0,
            intensity,
        }
    }

    #[test]
    fn centered_sphere_center_and_corner() {
        let spec = PhantomSpec {
            ellipsoids: vec![sphere([0.5; 3], 0.25, 1.0)],
            noise_sigma: 0.0,
            seed: 0,
        };
        let v = generate(&spec, [32, 32, 32]).unwrap();
        assert_eq!(v.get(16, 16, 16), 1.0);
        assert_eq!(v.get(0, 0, 0), 0.0);
        assert_eq!(v.get(31, 31, 31), 0.0);
    }

    #[test]
    fn mirrored_spec_gives_flipped_volume() {
        let spec = PhantomSpec {
            ellipsoids: vec![
                Ellipsoid {
                    center: [0.37, 0.52, 0.5],
                    semi_axes: [0.21, 0.13, 0.3],
                    rotation_deg: 27.0,
                    intensity: 0.7,
                },
                sphere([0.61, 0.44, 0.47], 0.115, 0.3),
            ],
            noise_sigma: 0.0,
            seed: 0,
        };
        let dims = [24, 20, 12];
        let v = generate(&spec, dims).unwrap();
        let m = generate(&spec.mirrored_axis0(), dims).unwrap();
        for i in 0..dims[0] {
            for j in 0..dims[1] {
                for k in 0..dims[2] {
                    assert_eq!(m.get(i, j, k), v.get(dims[0] - 1 - i, j, k), "({i},{j},{k})");
                }
            }
        }
    }

    #[test]
    fn overlapping_ellipsoids_add_against_analytic_oracle() {
        let a = Ellipsoid {
            center: [0.45, 0.5, 0.5],
            semi_axes: [0.3, 0.2, 0.25],
            rotation_deg: 15.0,
            intensity: 0.6,
        };
        let b = Ellipsoid {
            center: [0.55, 0.5, 0.5],
            semi_axes: [0.2, 0.3, 0.25],
            rotation_deg: -40.0,
            intensity: 0.4,
        };
        let spec = PhantomSpec {
            ellipsoids: vec![a, b],
            noise_sigma: 0.0,
            seed: 0,
        };
        let dims = [40, 40, 40];
        let v = generate(&spec, dims).unwrap();
        // Closed-form containment written independently of `Ellipsoid::contains`.
        let inside = |e: &Ellipsoid, p: [f64; 3]| {
            let th = e.rotation_deg * std::f64::consts::PI / 180.0;
            let (x, y, z) = (p[0] - e.center[0], p[1] - e.center[1], p[2] - e.center[2]);
            let xr = x * th.cos() + y * th.sin();
            let yr = y * th.cos() - x * th.sin();
            xr * xr / (e.semi_axes[0] * e.semi_axes[0])
                + yr * yr / (e.semi_axes[1] * e.semi_axes[1])
                + z * z / (e.semi_axes[2] * e.semi_axes[2])
                <= 1.0
        };
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut overlap_seen = 0;
        for _ in 0..100 {
            let idx = [0, 1, 2].map(|_| rng.random_range(8..32usize));
            let p = [0, 1, 2].map(|a| (idx[a] as f64 + 0.5) / 40.0);
            let expect = if inside(&a, p) { 0.6 } else { 0.0 } + if inside(&b, p) { 0.4 } else { 0.0 };
            let got = v.get(idx[0], idx[1], idx[2]);
            assert!((got - expect).abs() < 1e-15, "{idx:?}: {got} vs {expect}");
            if inside(&a, p) && inside(&b, p) {
                assert!((got - 1.0).abs() < 1e-15);
                overlap_seen += 1;
            }
        }
        assert!(overlap_seen > 0);
    }

    #[test]
    fn random_specs_are_valid_deterministic_and_distinct() {
        let cfg = PhantomConfig::default();
        let specs: Vec<_> = (0..20).map(|s| random_spec(s, &cfg).unwrap()).collect();
        for (s, spec) in specs.iter().enumerate() {
            spec.validate().unwrap();
            assert_eq!(spec, &random_spec(s as u64, &cfg).unwrap());
            let interior = spec.ellipsoids.len() - 2;
            assert!((3..=8).contains(&interior));
        }
        for i in 0..specs.len() {
            for j in i + 1..specs.len() {
                assert_ne!(specs[i], specs[j]);
            }
        }
    }

    #[test]
    fn generated_phantoms_have_zero_shell_and_no_negatives() {
        let cfg = PhantomConfig::default();
        for seed in 0..10 {
            let spec = random_spec(seed, &cfg).unwrap();
            for dims in [[8, 8, 8], [32, 32, 16], [64, 64, 16]] {
                let v = generate(&spec, dims).unwrap();
                assert!(v.data().iter().all(|&x| x >= 0.0));
                for i in 0..dims[0] {
                    for j in 0..dims[1] {
                        for k in 0..dims[2] {
                            let on_shell = i == 0
                                || j == 0
                                || k == 0
                                || i == dims[0] - 1
                                || j == dims[1] - 1
                                || k == dims[2] - 1;
                            if on_shell {
                                assert_eq!(v.get(i, j, k), 0.0);
                            }
                        }
                    }
                }
                assert!(v.data().iter().any(|&x| x > 0.0));
            }
        }
    }

    #[test]
    fn noise_is_seeded() {
        let mut spec = random_spec(3, &PhantomConfig::default()).unwrap();
        spec.noise_sigma = 0.05;
        let a = generate(&spec, [16, 16, 16]).unwrap();
        assert_eq!(a, generate(&spec, [16, 16, 16]).unwrap());
        spec.seed += 1;
        assert_ne!(a, generate(&spec, [16, 16, 16]).unwrap());
    }

    #[test]
    fn standard_phantom_is_valid() {
        let spec = standard_phantom();
        spec.validate().unwrap();
        let v = generate(&spec, [32, 32, 32]).unwrap();
        assert!(v.get(16, 16, 16) > 0.0);
        assert_eq!(v.get(0, 16, 16), 0.0);
    }

    #[test]
    fn spec_file_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let spec = random_spec(5, &PhantomConfig::default()).unwrap();
        let p = dir.path().join("phantom.json");
        spec.write(&p).unwrap();
        assert_eq!(PhantomSpec::read(&p).unwrap(), spec);
    }
}
