//! Volumetric grid geometry, Gaussian-sphere target synthesis and volume files.
//!
//! Volumes are stored x-fastest: the linear index of voxel `(x, y, z)` is
//! `x + nx * (y + ny * z)`. World coordinates are millimetres in MNI152 space
//! and refer to voxel centres.

mod io;
mod nifti;
mod synth;

pub use io::{load_native, read_native, save_native, write_native, NATIVE_MAGIC};
pub use nifti::{export_nifti, import_nifti, load_nifti, save_nifti, NIFTI_HEADER_SIZE};
pub use synth::{fwhm_to_sigma, gaussian_kernel, synthesize_target, DEFAULT_FWHM_MM};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum VolumeError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("format error in {field}: {detail}")]
    Format { field: &'static str, detail: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl VolumeError {
    pub(crate) fn format(field: &'static str, detail: impl Into<String>) -> Self {
        VolumeError::Format {
            field,
            detail: detail.into(),
        }
    }
}

/// Voxel lattice and its placement in world space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub dims: [usize; 3],
    pub voxel_size_mm: [f64; 3],
    /// World coordinate of the centre of voxel (0, 0, 0).
    pub origin_mm: [f64; 3],
}

impl Default for GridSpec {
    /// 40×48×40 voxels of 4 mm, covering x∈[−80,80), y∈[−112,80), z∈[−74,86).
    fn default() -> Self {
        GridSpec {
            dims: [40, 48, 40],
            voxel_size_mm: [4.0; 3],
            origin_mm: [-78.0, -110.0, -72.0],
        }
    }
}

impl GridSpec {
    pub fn new(
        dims: [usize; 3],
        voxel_size_mm: [f64; 3],
        origin_mm: [f64; 3],
    ) -> Result<Self, VolumeError> {
        let grid = GridSpec {
            dims,
            voxel_size_mm,
            origin_mm,
        };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<(), VolumeError> {
        if self.dims.contains(&0) {
            return Err(VolumeError::InvalidArgument(format!(
                "grid dims must be >= 1, got {:?}",
                self.dims
            )));
        }
        if self
            .voxel_size_mm
            .iter()
            .any(|&s| !(s.is_finite() && s > 0.0))
        {
            return Err(VolumeError::InvalidArgument(format!(
                "voxel sizes must be positive, got {:?}",
                self.voxel_size_mm
            )));
        }
        if self.origin_mm.iter().any(|o| !o.is_finite()) {
            return Err(VolumeError::InvalidArgument(format!(
                "origin must be finite, got {:?}",
                self.origin_mm
            )));
        }
        Ok(())
    }

    pub fn voxel_count(&self) -> usize {
        self.dims.iter().product()
    }

    /// Half-open world extent `[lo, hi)` of each axis, measured from voxel edges.
    pub fn extent_mm(&self) -> [(f64, f64); 3] {
        std::array::from_fn(|a| {
            let lo = self.origin_mm[a] - self.voxel_size_mm[a] / 2.0;
            (lo, lo + self.dims[a] as f64 * self.voxel_size_mm[a])
        })
    }

    #[inline]
    pub fn linear_index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    #[inline]
    pub fn voxel_center_mm(&self, x: usize, y: usize, z: usize) -> [f64; 3] {
        let v = [x, y, z];
        std::array::from_fn(|a| self.origin_mm[a] + v[a] as f64 * self.voxel_size_mm[a])
    }

    /// Continuous voxel coordinate of a world point. No rounding, no clipping.
    pub fn world_to_voxel(&self, c: PeakCoordinate) -> Result<[f64; 3], VolumeError> {
        let w = c.as_array();
        if w.iter().any(|v| !v.is_finite()) {
            return Err(VolumeError::InvalidArgument(format!(
                "non-finite coordinate {w:?}"
            )));
        }
        Ok(std::array::from_fn(|a| {
            (w[a] - self.origin_mm[a]) / self.voxel_size_mm[a]
        }))
    }
}

/// A reported peak in MNI millimetre space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 3]", into = "[f64; 3]")]
pub struct PeakCoordinate {
    pub x_mm: f64,
    pub y_mm: f64,
    pub z_mm: f64,
}

impl PeakCoordinate {
    pub const fn new(x_mm: f64, y_mm: f64, z_mm: f64) -> Self {
        PeakCoordinate { x_mm, y_mm, z_mm }
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.x_mm, self.y_mm, self.z_mm]
    }

    pub fn is_finite(&self) -> bool {
        self.as_array().iter().all(|v| v.is_finite())
    }
}

impl From<[f64; 3]> for PeakCoordinate {
    fn from(v: [f64; 3]) -> Self {
        PeakCoordinate::new(v[0], v[1], v[2])
    }
}

impl From<PeakCoordinate> for [f64; 3] {
    fn from(c: PeakCoordinate) -> Self {
        c.as_array()
    }
}

/// Dense activation volume on a [`GridSpec`].
#[derive(Debug, Clone, PartialEq)]
pub struct BrainVolume {
    grid: GridSpec,
    data: Vec<f32>,
}

impl BrainVolume {
    pub fn zeros(grid: GridSpec) -> Self {
        BrainVolume {
            data: vec![0.0; grid.voxel_count()],
            grid,
        }
    }

    pub fn from_data(grid: GridSpec, data: Vec<f32>) -> Result<Self, VolumeError> {
        grid.validate()?;
        if data.len() != grid.voxel_count() {
            return Err(VolumeError::InvalidArgument(format!(
                "data length {} does not match grid {:?} ({} voxels)",
                data.len(),
                grid.dims,
                grid.voxel_count()
            )));
        }
        Ok(BrainVolume { grid, data })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn dims(&self) -> [usize; 3] {
        self.grid.dims
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> f32 {
        self.data[self.grid.linear_index(x, y, z)]
    }

    pub fn max(&self) -> f32 {
        self.data.iter().copied().fold(f32::NEG_INFINITY, f32::max)
    }

    pub fn min(&self) -> f32 {
        self.data.iter().copied().fold(f32::INFINITY, f32::min)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_grid_covers_mni_box() {
        let g = GridSpec::default();
        assert_eq!(g.voxel_count(), 40 * 48 * 40);
        let ext = g.extent_mm();
        assert_eq!(ext[0], (-80.0, 80.0));
        assert_eq!(ext[1], (-112.0, 80.0));
        assert_eq!(ext[2], (-74.0, 86.0));
        // MNI152 brain bounding box (approx. ±78, −112..76, −70..85)
        assert!(ext[0].0 <= -78.0 && ext[0].1 >= 78.0);
        assert!(ext[1].0 <= -112.0 && ext[1].1 >= 76.0);
        assert!(ext[2].0 <= -70.0 && ext[2].1 >= 85.0);
    }

    #[test]
    fn world_to_voxel_examples() {
        let g = GridSpec::default();
        let v = g.world_to_voxel(PeakCoordinate::new(-78.0, -110.0, -72.0)).unwrap();
        assert_eq!(v, [0.0, 0.0, 0.0]);
        let v = g.world_to_voxel(PeakCoordinate::new(-74.0, -110.0, -72.0)).unwrap();
        assert_eq!(v, [1.0, 0.0, 0.0]);
        let v = g.world_to_voxel(PeakCoordinate::new(78.0, 78.0, 84.0)).unwrap();
        assert_eq!(v, [39.0, 47.0, 39.0]);
    }

    #[test]
    fn world_to_voxel_does_not_clip() {
        let g = GridSpec::default();
        let v = g.world_to_voxel(PeakCoordinate::new(-200.0, 100.0, 0.5)).unwrap();
        assert_eq!(v, [-30.5, 52.5, 18.125]);
    }

    #[test]
    fn world_to_voxel_rejects_nan() {
        let g = GridSpec::default();
        let err = g
            .world_to_voxel(PeakCoordinate::new(f64::NAN, 0.0, 0.0))
            .unwrap_err();
        assert!(matches!(err, VolumeError::InvalidArgument(_)));
    }

    #[test]
    fn invalid_grids_rejected() {
        assert!(GridSpec::new([0, 1, 1], [1.0; 3], [0.0; 3]).is_err());
        assert!(GridSpec::new([1, 1, 1], [1.0, 0.0, 1.0], [0.0; 3]).is_err());
        assert!(GridSpec::new([1, 1, 1], [1.0, 1.0, -2.0], [0.0; 3]).is_err());
        assert!(GridSpec::new([2, 3, 4], [1.0, 2.0, 3.0], [0.0; 3]).is_ok());
    }

    #[test]
    fn from_data_checks_length() {
        let g = GridSpec::new([2, 2, 2], [1.0; 3], [0.0; 3]).unwrap();
        assert!(BrainVolume::from_data(g, vec![0.0; 7]).is_err());
        let v = BrainVolume::from_data(g, (0..8).map(|i| i as f32).collect()).unwrap();
        assert_eq!(v.get(1, 0, 0), 1.0);
        assert_eq!(v.get(0, 1, 0), 2.0);
        assert_eq!(v.get(0, 0, 1), 4.0);
    }

    #[test]
    fn peak_serializes_as_triplet() {
        let c = PeakCoordinate::new(1.0, -2.5, 3.0);
        let s = serde_json::to_string(&c).unwrap();
        assert_eq!(s, "[1.0,-2.5,3.0]");
        let back: PeakCoordinate = serde_json::from_str(&s).unwrap();
        assert_eq!(back, c);
    }
}
