//! Volumes, continuous field sampling and resampling.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::geometry::Vec3;
use crate::{Error, Result};

pub mod interp;
mod phantom;

pub use interp::{for_each_corner, interp, trilinear, trilinear_splat};
pub use phantom::{make_phantom, PhantomKind};

/// Voxel lattice: `dims = (W, H, D)` with x fastest in memory, `spacing` in
/// mm and `origin` the world position of voxel `(0, 0, 0)`'s centre.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VolumeGrid {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub origin: [f64; 3],
}

impl VolumeGrid {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], origin: [f64; 3]) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::invalid("volume", format!("dims must be >= 1, got {dims:?}")));
        }
        if spacing.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::invalid("volume", format!("spacing must be positive, got {spacing:?}")));
        }
        if origin.iter().any(|o| !o.is_finite()) {
            return Err(Error::invalid("volume", "origin must be finite"));
        }
        Ok(VolumeGrid { dims, spacing, origin })
    }

    /// Grid centred on the world origin.
    pub fn centered(dims: [usize; 3], spacing: [f64; 3]) -> Result<Self> {
        let origin = [0, 1, 2].map(|a| -(dims[a] as f64 - 1.0) / 2.0 * spacing[a]);
        VolumeGrid::new(dims, spacing, origin)
    }

    /// Centred cube of `n^3` voxels.
    pub fn cube(n: usize, spacing: f64) -> Result<Self> {
        VolumeGrid::centered([n; 3], [spacing; 3])
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    #[inline]
    pub fn world_to_index(&self, p: Vec3) -> [f64; 3] {
        [0, 1, 2].map(|a| (p[a] - self.origin[a]) / self.spacing[a])
    }

    #[inline]
    pub fn voxel_center(&self, x: usize, y: usize, z: usize) -> Vec3 {
        [
            self.origin[0] + x as f64 * self.spacing[0],
            self.origin[1] + y as f64 * self.spacing[1],
            self.origin[2] + z as f64 * self.spacing[2],
        ]
    }

    /// Axis-aligned box covered by the voxels (half a voxel beyond the outer
    /// centres).
    pub fn bounds(&self) -> (Vec3, Vec3) {
        let lo = [0, 1, 2].map(|a| self.origin[a] - 0.5 * self.spacing[a]);
        let hi = [0, 1, 2].map(|a| self.origin[a] + (self.dims[a] as f64 - 0.5) * self.spacing[a]);
        (lo, hi)
    }

    pub fn center(&self) -> Vec3 {
        [0, 1, 2].map(|a| self.origin[a] + (self.dims[a] as f64 - 1.0) / 2.0 * self.spacing[a])
    }

    /// Physical side lengths, mm.
    pub fn extent(&self) -> Vec3 {
        [0, 1, 2].map(|a| self.dims[a] as f64 * self.spacing[a])
    }

    pub fn diagonal(&self) -> f64 {
        let e = self.extent();
        num_traits::Float::sqrt(e[0] * e[0] + e[1] * e[1] + e[2] * e[2])
    }

    #[inline]
    pub fn contains(&self, p: Vec3) -> bool {
        let c = self.world_to_index(p);
        (0..3).all(|a| c[a] >= -0.5 && c[a] <= self.dims[a] as f64 - 0.5)
    }

    pub fn min_spacing(&self) -> f64 {
        self.spacing[0].min(self.spacing[1]).min(self.spacing[2])
    }
}

/// Attenuation values on a [`VolumeGrid`], normalised to `[0, 1]` for
/// simulated and training data.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    grid: VolumeGrid,
    data: Vec<f64>,
}

impl Volume {
    pub fn new(grid: VolumeGrid, data: Vec<f64>) -> Result<Self> {
        if data.len() != grid.len() {
            return Err(Error::invalid(
                "volume",
                format!("{} values for dims {:?}", data.len(), grid.dims),
            ));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("volume", "values must be finite"));
        }
        Ok(Volume { grid, data })
    }

    pub fn zeros(grid: VolumeGrid) -> Self {
        Volume { data: vec![0.0; grid.len()], grid }
    }

    pub fn filled(grid: VolumeGrid, value: f64) -> Self {
        Volume { data: vec![value; grid.len()], grid }
    }

    pub fn from_fn(grid: VolumeGrid, mut f: impl FnMut(Vec3) -> f64) -> Self {
        let mut data = Vec::with_capacity(grid.len());
        for z in 0..grid.dims[2] {
            for y in 0..grid.dims[1] {
                for x in 0..grid.dims[0] {
                    data.push(f(grid.voxel_center(x, y, z)));
                }
            }
        }
        Volume { grid, data }
    }

    pub fn grid(&self) -> &VolumeGrid {
        &self.grid
    }

    pub fn dims(&self) -> [usize; 3] {
        self.grid.dims
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> f64 {
        self.data[self.grid.index(x, y, z)]
    }

    /// Trilinear value at a world point; zero outside the voxel box.
    #[inline]
    pub fn sample(&self, p: Vec3) -> f64 {
        if !self.grid.contains(p) {
            return 0.0;
        }
        trilinear(&self.data, self.grid.dims, self.grid.world_to_index(p))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Volume {
        Volume { grid: self.grid, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn clamp_unit(&self) -> Volume {
        self.map(|v| v.clamp(0.0, 1.0))
    }
}

/// Query points (mm) with optional attenuation values.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointBatch {
    pub points: Vec<Vec3>,
    pub values: Option<Vec<f64>>,
}

impl PointBatch {
    pub fn new(points: Vec<Vec3>) -> Self {
        PointBatch { points, values: None }
    }

    pub fn with_values(points: Vec<Vec3>, values: Vec<f64>) -> Result<Self> {
        if points.len() != values.len() {
            return Err(Error::invalid(
                "point batch",
                format!("{} points but {} values", points.len(), values.len()),
            ));
        }
        Ok(PointBatch { points, values: Some(values) })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        self.values.as_deref().unwrap_or(&[])
    }

    /// Voxel centroids of a grid, in memory order.
    pub fn voxel_centers(grid: &VolumeGrid) -> Self {
        let mut points = Vec::with_capacity(grid.len());
        for z in 0..grid.dims[2] {
            for y in 0..grid.dims[1] {
                for x in 0..grid.dims[0] {
                    points.push(grid.voxel_center(x, y, z));
                }
            }
        }
        PointBatch::new(points)
    }
}

/// Ground-truth field values at every point.
pub fn sample_field(vol: &Volume, points: &PointBatch) -> PointBatch {
    let values = points.points.iter().map(|&p| vol.sample(p)).collect();
    PointBatch { points: points.points.clone(), values: Some(values) }
}

/// Trilinear resample onto a centred `size^3` grid with isotropic spacing,
/// aligned on the input volume's centre and zero-padded.
pub fn resample_to_cube(vol: &Volume, size: usize, iso_spacing: f64) -> Result<Volume> {
    if size < 2 {
        return Err(Error::invalid("resample", format!("size must be >= 2, got {size}")));
    }
    let grid = VolumeGrid::cube(size, iso_spacing)?;
    let src_center = vol.grid().center();
    Ok(Volume::from_fn(grid, |q| vol.sample([q[0] + src_center[0], q[1] + src_center[1], q[2] + src_center[2]])))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_validation() {
        assert!(VolumeGrid::new([0, 1, 1], [1.0; 3], [0.0; 3]).is_err());
        assert!(VolumeGrid::new([1, 1, 1], [1.0, 0.0, 1.0], [0.0; 3]).is_err());
        assert!(Volume::new(VolumeGrid::cube(2, 1.0).unwrap(), vec![0.0; 7]).is_err());
        assert!(Volume::new(VolumeGrid::cube(1, 1.0).unwrap(), vec![f64::NAN]).is_err());
    }

    #[test]
    fn centred_grid() {
        let g = VolumeGrid::cube(4, 2.0).unwrap();
        assert_eq!(g.center(), [0.0; 3]);
        assert_eq!(g.origin, [-3.0; 3]);
        assert_eq!(g.bounds(), ([-4.0; 3], [4.0; 3]));
        assert_eq!(g.extent(), [8.0; 3]);
    }

    #[test]
    fn sample_at_centres_and_outside() {
        let g = VolumeGrid::new([3, 2, 2], [1.0, 2.0, 0.5], [1.0, -1.0, 4.0]).unwrap();
        let v = Volume::from_fn(g, |p| p[0] * 0.1 + p[1] * 0.01 + p[2]);
        let pts = PointBatch::voxel_centers(&g);
        let s = sample_field(&v, &pts);
        assert_eq!(s.values(), v.data());
        let out = sample_field(&v, &PointBatch::new(vec![[100.0, 0.0, 0.0], [1.0, -1.0, 3.0]]));
        assert_eq!(out.values(), &[0.0, 0.0]);
    }

    #[test]
    fn constant_volume_interior() {
        let g = VolumeGrid::cube(5, 1.0).unwrap();
        let v = Volume::filled(g, 0.3);
        for p in [[0.1, -0.7, 1.9], [-2.0, 2.0, 0.0], [0.0; 3]] {
            assert!((v.sample(p) - 0.3).abs() < 1e-15);
        }
    }

    #[test]
    fn resample_identity_and_extent() {
        let g = VolumeGrid::cube(6, 1.6).unwrap();
        let v = Volume::from_fn(g, |p| (p[0] * 0.3).sin() + p[1] * 0.01 + (p[2] * 0.2).cos());
        let r = resample_to_cube(&v, 6, 1.6).unwrap();
        for (a, b) in r.data().iter().zip(v.data()) {
            assert!((a - b).abs() < 1e-6);
        }
        let c = resample_to_cube(&Volume::filled(VolumeGrid::cube(4, 3.0).unwrap(), 0.7), 5, 1.0).unwrap();
        assert!(c.data().iter().all(|&x| (x - 0.7).abs() < 1e-12));
        assert!(resample_to_cube(&v, 1, 1.0).is_err());
        let big = VolumeGrid::cube(256, 1.6).unwrap();
        assert!((big.extent()[0] - 409.6).abs() < 1e-9);
    }

    #[test]
    fn resample_pads_with_zero() {
        let v = Volume::filled(VolumeGrid::cube(4, 1.0).unwrap(), 1.0);
        let r = resample_to_cube(&v, 16, 1.0).unwrap();
        assert_eq!(r.get(0, 0, 0), 0.0);
        assert_eq!(r.get(8, 8, 8), 1.0);
    }
}
