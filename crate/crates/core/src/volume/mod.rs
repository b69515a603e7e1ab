//! 3D grids, 2D slices, and the centered Fourier transforms between image
//! space and k-space.
//!
//! Every grid in the crate stores its samples in one flat array in C order:
//! axis 0 varies slowest and axis 2 fastest, so voxel `(i, j, k)` lives at
//! `(i * n1 + j) * n2 + k`. Generated volumes put the phase-encode direction
//! on axis 0, which makes it the slowest axis of the payload.

mod fft;
pub(crate) mod io;

pub use fft::{fft1_centered, fft3_centered, ifft1_centered, ifft3_centered, magnitude};
pub use io::{read_volume, write_pgm16, write_volume, PgmRescale, VolumeHeader};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Dims = [usize; 3];

/// Flat offset of `(i, j, k)` in a C-ordered grid.
#[inline]
pub fn flat_index(dims: Dims, i: usize, j: usize, k: usize) -> usize {
    (i * dims[1] + j) * dims[2] + k
}

/// Stride of `axis` in a C-ordered grid.
#[inline]
pub fn axis_stride(dims: Dims, axis: usize) -> usize {
    match axis {
        0 => dims[1] * dims[2],
        1 => dims[2],
        _ => 1,
    }
}

/// Index of the DC sample along an axis of extent `n`.
#[inline]
pub fn center_index(n: usize) -> usize {
    n / 2
}

/// Shape, voxel size and axis semantics shared by image- and k-space grids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    pub dims: Dims,
    /// Voxel size in mm.
    pub spacing: [f64; 3],
    pub axis_labels: [String; 3],
    /// The single axis along which k-space lines are acquired sequentially.
    pub phase_encode_axis: usize,
}

impl Geometry {
    /// Geometry with the phase-encode direction on axis 0 and
    /// anterior-posterior / left-right / superior-inferior labels.
    pub fn new(dims: Dims, spacing: [f64; 3]) -> Self {
        Geometry {
            dims,
            spacing,
            axis_labels: ["AP".to_string(), "LR".to_string(), "SI".to_string()],
            phase_encode_axis: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_pe(&self) -> usize {
        self.dims[self.phase_encode_axis]
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.iter().any(|&d| d == 0) {
            return Err(Error::Validation(format!(
                "dims must be positive, got {:?}",
                self.dims
            )));
        }
        if self.spacing.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::Validation(format!(
                "spacing must be strictly positive, got {:?}",
                self.spacing
            )));
        }
        if self.phase_encode_axis > 2 {
            return Err(Error::Validation(format!(
                "phase-encode axis {} is not one of 0, 1, 2",
                self.phase_encode_axis
            )));
        }
        Ok(())
    }
}

/// Real-valued 3D intensity grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    geometry: Geometry,
    data: Vec<f64>,
}

impl Volume {
    pub fn new(geometry: Geometry, data: Vec<f64>) -> Result<Self> {
        geometry.validate()?;
        if data.len() != geometry.len() {
            return Err(Error::Validation(format!(
                "volume data has {} values but dims {:?} need {}",
                data.len(),
                geometry.dims,
                geometry.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!(
                "volume value at flat index {pos} is not finite"
            )));
        }
        Ok(Volume { geometry, data })
    }

    pub fn zeros(geometry: Geometry) -> Result<Self> {
        let n = geometry.len();
        Volume::new(geometry, vec![0.0; n])
    }

    /// Volume with isotropic 1 mm voxels.
    pub fn from_fn(dims: Dims, mut f: impl FnMut(usize, usize, usize) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(dims.iter().product());
        for i in 0..dims[0] {
            for j in 0..dims[1] {
                for k in 0..dims[2] {
                    data.push(f(i, j, k));
                }
            }
        }
        Volume::new(Geometry::new(dims, [1.0; 3]), data)
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn dims(&self) -> Dims {
        self.geometry.dims
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[flat_index(self.geometry.dims, i, j, k)]
    }

    /// Replace the samples, keeping the geometry. Values are re-validated.
    pub fn with_data(&self, data: Vec<f64>) -> Result<Self> {
        Volume::new(self.geometry.clone(), data)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        self.with_data(self.data.iter().map(|&v| f(v)).collect())
    }

    /// 2D cross-section perpendicular to `axis` at `index`.
    ///
    /// The slice keeps the two remaining axes in increasing order as
    /// (rows, columns), so for `axis = 2` pixel `(i, j)` is voxel `(i, j, index)`.
    pub fn extract_slice(&self, axis: usize, index: usize) -> Result<Image2D> {
        let dims = self.dims();
        if axis > 2 {
            return Err(Error::Validation(format!("axis {axis} is not one of 0, 1, 2")));
        }
        if index >= dims[axis] {
            return Err(Error::Bounds {
                axis,
                index,
                extent: dims[axis],
            });
        }
        let (ra, ca) = plane_axes(axis);
        let (h, w) = (dims[ra], dims[ca]);
        let mut data = Vec::with_capacity(h * w);
        let mut pos = [0usize; 3];
        pos[axis] = index;
        for r in 0..h {
            pos[ra] = r;
            for c in 0..w {
                pos[ca] = c;
                data.push(self.data[flat_index(dims, pos[0], pos[1], pos[2])]);
            }
        }
        let mut img = Image2D::new(h, w, data)?;
        img.provenance = Some(SliceProvenance { axis, index });
        Ok(img)
    }

    /// Write `img` into the plane perpendicular to `axis` at `index`.
    pub fn insert_slice(&mut self, axis: usize, index: usize, img: &Image2D) -> Result<()> {
        let dims = self.dims();
        if axis > 2 {
            return Err(Error::Validation(format!("axis {axis} is not one of 0, 1, 2")));
        }
        if index >= dims[axis] {
            return Err(Error::Bounds {
                axis,
                index,
                extent: dims[axis],
            });
        }
        let (ra, ca) = plane_axes(axis);
        if img.height() != dims[ra] || img.width() != dims[ca] {
            return Err(Error::Dimension(format!(
                "slice is {}x{} but plane {} of {:?} is {}x{}",
                img.height(),
                img.width(),
                axis,
                dims,
                dims[ra],
                dims[ca]
            )));
        }
        if img.data().iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("slice contains non-finite values".into()));
        }
        let mut pos = [0usize; 3];
        pos[axis] = index;
        for r in 0..img.height() {
            pos[ra] = r;
            for c in 0..img.width() {
                pos[ca] = c;
                self.data[flat_index(dims, pos[0], pos[1], pos[2])] = img.get(r, c);
            }
        }
        Ok(())
    }
}

fn plane_axes(axis: usize) -> (usize, usize) {
    match axis {
        0 => (1, 2),
        1 => (0, 2),
        _ => (0, 1),
    }
}

/// Complex k-space grid with DC stored at `(n0/2, n1/2, n2/2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct KSpace {
    geometry: Geometry,
    data: Vec<Complex64>,
}

impl KSpace {
    pub fn new(geometry: Geometry, data: Vec<Complex64>) -> Result<Self> {
        validate_complex(&geometry, &data)?;
        Ok(KSpace { geometry, data })
    }

    pub fn zeros(geometry: Geometry) -> Self {
        let n = geometry.len();
        KSpace {
            geometry,
            data: vec![Complex64::new(0.0, 0.0); n],
        }
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn dims(&self) -> Dims {
        self.geometry.dims
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> Complex64 {
        self.data[flat_index(self.geometry.dims, i, j, k)]
    }
}

/// Complex image-domain grid, the raw output of the inverse transform.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexVolume {
    geometry: Geometry,
    data: Vec<Complex64>,
}

impl ComplexVolume {
    pub fn new(geometry: Geometry, data: Vec<Complex64>) -> Result<Self> {
        validate_complex(&geometry, &data)?;
        Ok(ComplexVolume { geometry, data })
    }

    pub fn from_real(v: &Volume) -> Self {
        ComplexVolume {
            geometry: v.geometry.clone(),
            data: v.data.iter().map(|&x| Complex64::new(x, 0.0)).collect(),
        }
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn dims(&self) -> Dims {
        self.geometry.dims
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }
}

fn validate_complex(geometry: &Geometry, data: &[Complex64]) -> Result<()> {
    geometry.validate()?;
    if data.len() != geometry.len() {
        return Err(Error::Validation(format!(
            "complex grid has {} values but dims {:?} need {}",
            data.len(),
            geometry.dims,
            geometry.len()
        )));
    }
    if let Some(pos) = data.iter().position(|v| !(v.re.is_finite() && v.im.is_finite())) {
        return Err(Error::Validation(format!(
            "complex value at flat index {pos} is not finite"
        )));
    }
    Ok(())
}

/// Where a 2D slice was cut from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SliceProvenance {
    pub axis: usize,
    pub index: usize,
}

/// Real-valued 2D image, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Image2D {
    height: usize,
    width: usize,
    data: Vec<f64>,
    pub provenance: Option<SliceProvenance>,
}

impl Image2D {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Validation(format!(
                "image dims must be positive, got {height}x{width}"
            )));
        }
        if data.len() != height * width {
            return Err(Error::Validation(format!(
                "image data has {} values but {height}x{width} needs {}",
                data.len(),
                height * width
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("image contains non-finite values".into()));
        }
        Ok(Image2D {
            height,
            width,
            data,
            provenance: None,
        })
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let data = (0..height * width).map(|p| f(p / width, p % width)).collect();
        Image2D::new(height, width, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.width + c]
    }

    /// Same shape and provenance, new samples.
    pub fn with_data(&self, data: Vec<f64>) -> Result<Self> {
        let mut img = Image2D::new(self.height, self.width, data)?;
        img.provenance = self.provenance;
        Ok(img)
    }
}
