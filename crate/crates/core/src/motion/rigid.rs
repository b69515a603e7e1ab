use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::Volume;

/// A rigid pose: translation in mm and rotation in degrees about the volume
/// center, both expressed along the grid axes 0, 1, 2.
///
/// The rotation is applied intrinsically about axis 0, then axis 1, then
/// axis 2, i.e. `R = R0(r0) * R1(r1) * R2(r2)`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RigidMotion {
    pub translation: [f64; 3],
    pub rotation: [f64; 3],
}

impl RigidMotion {
    pub const IDENTITY: RigidMotion = RigidMotion {
        translation: [0.0; 3],
        rotation: [0.0; 3],
    };

    pub fn new(translation: [f64; 3], rotation: [f64; 3]) -> Self {
        RigidMotion {
            translation,
            rotation,
        }
    }

    pub fn translation(t: [f64; 3]) -> Self {
        RigidMotion::new(t, [0.0; 3])
    }

    pub fn is_identity(&self) -> bool {
        self.translation.iter().chain(&self.rotation).all(|&x| x == 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.translation.iter().chain(&self.rotation).any(|x| !x.is_finite()) {
            return Err(Error::Validation(format!("non-finite pose {self:?}")));
        }
        Ok(())
    }

    /// Rotation matrix, row-major.
    pub fn rotation_matrix(&self) -> [[f64; 3]; 3] {
        let [a, b, c] = self.rotation;
        let (sa, ca) = sin_cos_deg(a);
        let (sb, cb) = sin_cos_deg(b);
        let (sc, cc) = sin_cos_deg(c);
        let r0 = [[1.0, 0.0, 0.0], [0.0, ca, -sa], [0.0, sa, ca]];
        let r1 = [[cb, 0.0, sb], [0.0, 1.0, 0.0], [-sb, 0.0, cb]];
        let r2 = [[cc, -sc, 0.0], [sc, cc, 0.0], [0.0, 0.0, 1.0]];
        matmul3(&matmul3(&r0, &r1), &r2)
    }
}

/// Sine and cosine of an angle in degrees, exact at multiples of 90.
fn sin_cos_deg(deg: f64) -> (f64, f64) {
    let r = deg.rem_euclid(360.0);
    if r == 0.0 {
        (0.0, 1.0)
    } else if r == 90.0 {
        (1.0, 0.0)
    } else if r == 180.0 {
        (0.0, -1.0)
    } else if r == 270.0 {
        (-1.0, 0.0)
    } else {
        deg.to_radians().sin_cos()
    }
}

fn matmul3(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

/// Source coordinates this close to an integer are snapped onto it, so that
/// integer shifts and quarter turns resample without interpolation.
const SNAP: f64 = 1e-9;

fn snap(x: f64) -> f64 {
    let r = x.round();
    if (x - r).abs() < SNAP {
        r
    } else {
        x
    }
}

/// Resamples `v` under the pose `m` (single trilinear pass).
///
/// The output voxel at physical position `p` (mm from the volume center)
/// takes the source value at `R^T (p - t)`; source positions outside the
/// grid read as zero.
pub fn apply_rigid(v: &Volume, m: &RigidMotion) -> Result<Volume> {
    m.validate()?;
    if m.is_identity() {
        return Ok(v.clone());
    }
    let dims = v.dims();
    let sp = v.geometry().spacing;
    let center: [f64; 3] = [0, 1, 2].map(|a| (dims[a] as f64 - 1.0) / 2.0);
    let r = m.rotation_matrix();
    let t = m.translation;
    let src = v.data();
    let mut out = Vec::with_capacity(src.len());
    for i in 0..dims[0] {
        for j in 0..dims[1] {
            for k in 0..dims[2] {
                let q = [
                    (i as f64 - center[0]) * sp[0] - t[0],
                    (j as f64 - center[1]) * sp[1] - t[1],
                    (k as f64 - center[2]) * sp[2] - t[2],
                ];
                let mut s = [0.0; 3];
                for a in 0..3 {
                    // R^T q
                    let p = r[0][a] * q[0] + r[1][a] * q[1] + r[2][a] * q[2];
                    s[a] = snap(p / sp[a] + center[a]);
                }
                out.push(trilinear_zero(src, dims, s));
            }
        }
    }
    v.with_data(out)
}

fn trilinear_zero(data: &[f64], dims: [usize; 3], s: [f64; 3]) -> f64 {
    let base = s.map(f64::floor);
    let frac = [s[0] - base[0], s[1] - base[1], s[2] - base[2]];
    let mut acc = 0.0;
    for corner in 0..8 {
        let mut w = 1.0;
        let mut idx = [0isize; 3];
        for a in 0..3 {
            let hi = (corner >> a) & 1 == 1;
            let f = frac[a];
            let wa = if hi { f } else { 1.0 - f };
            if wa == 0.0 {
                w = 0.0;
                break;
            }
            w *= wa;
            idx[a] = base[a] as isize + hi as isize;
        }
        if w == 0.0 {
            continue;
        }
        if (0..3).all(|a| idx[a] >= 0 && (idx[a] as usize) < dims[a]) {
            let (x, y, z) = (idx[0] as usize, idx[1] as usize, idx[2] as usize);
            acc += w * data[(x * dims[1] + y) * dims[2] + z];
        }
    }
    acc
}
