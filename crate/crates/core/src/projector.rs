//! Ray-driven forward projection, its exact adjoint, and voxel-driven
//! back-projection of per-view feature maps.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

#[cfg(not(feature = "std"))]
use num_traits::Float;

use crate::geometry::{DetectorGrid, ScanGeometry, Vec3, ViewFrame};
use crate::volume::{for_each_corner, interp, trilinear, trilinear_splat, Volume, VolumeGrid};
use crate::{par, Error, Result};

/// `N x H x W` line integrals (view-major, detector rows of width `W`).
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionSet {
    geom: ScanGeometry,
    data: Vec<f64>,
}

impl ProjectionSet {
    pub fn new(geom: ScanGeometry, data: Vec<f64>) -> Result<Self> {
        let want = geom.n_views() * geom.detector().pixels();
        if data.len() != want {
            return Err(Error::invalid("projections", format!("{} values, geometry needs {want}", data.len())));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("projections", "values must be finite"));
        }
        Ok(ProjectionSet { geom, data })
    }

    pub fn zeros(geom: ScanGeometry) -> Self {
        let n = geom.n_views() * geom.detector().pixels();
        ProjectionSet { geom, data: vec![0.0; n] }
    }

    pub fn geometry(&self) -> &ScanGeometry {
        &self.geom
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn view(&self, i: usize) -> &[f64] {
        let n = self.geom.detector().pixels();
        &self.data[i * n..(i + 1) * n]
    }

    /// Same measurements reinterpreted under another geometry with the same
    /// view count and detector.
    pub fn with_geometry(&self, geom: ScanGeometry) -> Result<Self> {
        if geom.n_views() != self.geom.n_views() || geom.detector() != self.geom.detector() {
            return Err(Error::invalid("projections", "replacement geometry must keep views and detector"));
        }
        Ok(ProjectionSet { geom, data: self.data.clone() })
    }

    pub fn scaled(&self, factor: f64) -> Self {
        ProjectionSet { geom: self.geom.clone(), data: self.data.iter().map(|v| v * factor).collect() }
    }
}

/// Fixed ray step: half the smallest voxel pitch.
pub fn ray_step(grid: &VolumeGrid) -> f64 {
    0.5 * grid.min_spacing()
}

/// Ray/box intersection by slabs. Returns the parameter interval of
/// `origin + t * dir` inside `[lo, hi]`.
fn clip_ray(origin: Vec3, dir: Vec3, lo: Vec3, hi: Vec3) -> Option<(f64, f64)> {
    let mut t0 = f64::NEG_INFINITY;
    let mut t1 = f64::INFINITY;
    for a in 0..3 {
        if dir[a].abs() < 1e-300 {
            if origin[a] < lo[a] || origin[a] > hi[a] {
                return None;
            }
        } else {
            let ta = (lo[a] - origin[a]) / dir[a];
            let tb = (hi[a] - origin[a]) / dir[a];
            t0 = t0.max(ta.min(tb));
            t1 = t1.min(ta.max(tb));
        }
    }
    (t1 > t0).then_some((t0.max(0.0), t1))
}

/// Visits the sample points of the ray through detector pixel `(u, v)`, in
/// continuous voxel-index coordinates. Samples are the midpoints of
/// `floor(chord / step)` consecutive segments starting where the ray enters
/// the voxel box. Forward and back-projection share this walk, which is what
/// makes them exact adjoints.
#[inline]
fn for_each_ray_sample(grid: &VolumeGrid, frame: &ViewFrame, u: f64, v: f64, step: f64, mut f: impl FnMut([f64; 3])) {
    let src = frame.source;
    let target = frame.detector_point(u, v);
    let mut dir = [target[0] - src[0], target[1] - src[1], target[2] - src[2]];
    let norm = (dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2]).sqrt();
    dir.iter_mut().for_each(|d| *d /= norm);
    let (lo, hi) = grid.bounds();
    let Some((t0, t1)) = clip_ray(src, dir, lo, hi) else { return };
    let n = ((t1 - t0) / step).floor() as usize;
    let a = grid.world_to_index(src);
    let b = [dir[0] / grid.spacing[0], dir[1] / grid.spacing[1], dir[2] / grid.spacing[2]];
    for k in 0..n {
        let t = t0 + (k as f64 + 0.5) * step;
        f([a[0] + t * b[0], a[1] + t * b[1], a[2] + t * b[2]]);
    }
}

/// Line integrals of one view into `out` (`H * W` values).
pub fn forward_project_view(vol: &Volume, geom: &ScanGeometry, view: usize, out: &mut [f64]) {
    let det = geom.detector();
    let frame = geom.frame(view);
    let grid = vol.grid();
    let step = ray_step(grid);
    let data = vol.data();
    for v in 0..det.height {
        for u in 0..det.width {
            let mut acc = 0.0;
            for_each_ray_sample(grid, &frame, u as f64, v as f64, step, |c| acc += trilinear(data, grid.dims, c));
            out[v * det.width + u] = acc * step;
        }
    }
}

/// DRR simulation: `sum_k mu(x_k) * ds` along every source-to-pixel ray.
pub fn forward_project(vol: &Volume, geom: &ScanGeometry) -> ProjectionSet {
    let mut proj = ProjectionSet::zeros(geom.clone());
    let n = geom.detector().pixels();
    par::for_each_chunk(&mut proj.data, n, |view, out| forward_project_view(vol, geom, view, out));
    proj
}

/// Adjoint of [`forward_project_view`] for one view, accumulated into `out`.
pub fn backproject_view(values: &[f64], geom: &ScanGeometry, view: usize, out: &mut Volume) {
    let det = geom.detector();
    let frame = geom.frame(view);
    let grid = *out.grid();
    let step = ray_step(&grid);
    let data = out.data_mut();
    for v in 0..det.height {
        for u in 0..det.width {
            let y = values[v * det.width + u];
            if y == 0.0 {
                continue;
            }
            let w = y * step;
            for_each_ray_sample(&grid, &frame, u as f64, v as f64, step, |c| trilinear_splat(data, grid.dims, c, w));
        }
    }
}

/// Exact transpose of [`forward_project`] onto `grid`.
pub fn ray_backproject(proj: &ProjectionSet, grid: &VolumeGrid) -> Volume {
    let mut out = Volume::zeros(*grid);
    for i in 0..proj.geometry().n_views() {
        backproject_view(proj.view(i), proj.geometry(), i, &mut out);
    }
    out
}

/// Per-view `C x h x w` feature maps.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMaps {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub views: Vec<Vec<f64>>,
}

impl FeatureMaps {
    pub fn new(channels: usize, height: usize, width: usize, views: Vec<Vec<f64>>) -> Result<Self> {
        let n = channels * height * width;
        if n == 0 {
            return Err(Error::invalid("feature maps", "empty map"));
        }
        if let Some(v) = views.iter().find(|v| v.len() != n) {
            return Err(Error::invalid("feature maps", format!("view has {} values, expected {n}", v.len())));
        }
        Ok(FeatureMaps { channels, height, width, views })
    }
}

/// Cube of `resolution^3` cells spanning `extent_mm` around the origin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureVolumeSpec {
    pub resolution: usize,
    pub extent_mm: f64,
}

impl FeatureVolumeSpec {
    pub fn new(resolution: usize, extent_mm: f64) -> Result<Self> {
        if resolution == 0 || !(extent_mm > 0.0 && extent_mm.is_finite()) {
            return Err(Error::invalid("feature volume", "resolution and extent must be positive"));
        }
        Ok(FeatureVolumeSpec { resolution, extent_mm })
    }

    pub fn cells(&self) -> usize {
        self.resolution.pow(3)
    }

    pub fn cell_size(&self) -> f64 {
        self.extent_mm / self.resolution as f64
    }

    /// Centroid of cell `j` (x fastest).
    pub fn centroid(&self, j: usize) -> Vec3 {
        let r = self.resolution;
        let idx = [j % r, (j / r) % r, j / (r * r)];
        let h = self.cell_size();
        idx.map(|i| -self.extent_mm / 2.0 + (i as f64 + 0.5) * h)
    }

    pub fn centroids(&self) -> Vec<Vec3> {
        (0..self.cells()).map(|j| self.centroid(j)).collect()
    }

    /// Continuous cell index of a world point (centroids are integers).
    #[inline]
    pub fn world_to_index(&self, p: Vec3) -> [f64; 3] {
        let h = self.cell_size();
        p.map(|x| (x + self.extent_mm / 2.0) / h - 0.5)
    }

    pub fn as_grid(&self) -> VolumeGrid {
        VolumeGrid::cube(self.resolution, self.cell_size()).expect("validated spec")
    }
}

/// `C x r^3` features, channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVolume {
    pub spec: FeatureVolumeSpec,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl FeatureVolume {
    /// Trilinear query at a world point.
    pub fn query(&self, p: Vec3, out: &mut [f64]) {
        let r = self.spec.resolution;
        interp::<3>(&self.data, [r; 3], self.spec.world_to_index(p), out);
    }
}

/// Continuous position on an `h x w` feature map of the detector projection
/// of `p`. Full-resolution pixel centres are rescaled by `w / W` and `h / H`
/// keeping pixel centres aligned.
#[inline]
pub fn feature_map_coords(frame: &ViewFrame, det: &DetectorGrid, map_hw: (usize, usize), p: Vec3) -> Option<[f64; 2]> {
    let d = frame.project(p)?;
    let sx = map_hw.1 as f64 / det.width as f64;
    let sy = map_hw.0 as f64 / det.height as f64;
    Some([(d.u + 0.5) * sx - 0.5, (d.v + 0.5) * sy - 0.5])
}

/// Bilinear corners (flat spatial index, weight) of `p` on a feature map;
/// missing corners are reported with zero weight.
pub fn feature_map_corners(frame: &ViewFrame, det: &DetectorGrid, map_hw: (usize, usize), p: Vec3) -> [(usize, f64); 4] {
    let mut out = [(0usize, 0.0f64); 4];
    if let Some(c) = feature_map_coords(frame, det, map_hw, p) {
        let mut k = 0;
        for_each_corner([map_hw.1, map_hw.0], c, |idx, w| {
            out[k] = (idx, w);
            k += 1;
        });
    }
    out
}

/// Samples each view's map at every cell centroid and keeps the elementwise
/// maximum over views. Views that do not see a centroid contribute zeros.
pub fn backproject_features(maps: &FeatureMaps, spec: &FeatureVolumeSpec, geom: &ScanGeometry) -> Result<FeatureVolume> {
    if maps.views.len() != geom.n_views() {
        return Err(Error::invalid(
            "feature maps",
            format!("{} maps for {} views", maps.views.len(), geom.n_views()),
        ));
    }
    let c = maps.channels;
    let cells = spec.cells();
    let frames = geom.frames();
    let det = geom.detector();
    let hw = (maps.height, maps.width);
    // Cell-major scratch so each worker owns whole cells.
    let mut cell_major = vec![0.0; cells * c];
    par::for_each_chunk(&mut cell_major, c, |j, out| {
        let q = spec.centroid(j);
        let mut tmp = vec![0.0; c];
        for (i, frame) in frames.iter().enumerate() {
            match feature_map_coords(frame, &det, hw, q) {
                Some(coord) => interp::<2>(&maps.views[i], [hw.1, hw.0], coord, &mut tmp),
                None => tmp.iter_mut().for_each(|t| *t = 0.0),
            }
            for (o, &t) in out.iter_mut().zip(&tmp) {
                *o = if i == 0 { t } else { o.max(t) };
            }
        }
    });
    let mut data = vec![0.0; cells * c];
    for j in 0..cells {
        for ch in 0..c {
            data[ch * cells + j] = cell_major[j * c + ch];
        }
    }
    Ok(FeatureVolume { spec: *spec, channels: c, data })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::make_uniform_geometry;

    fn small_geom(n: usize, pixels: usize) -> ScanGeometry {
        let det = crate::geometry::covering_detector(16.0, 100.0, 150.0, pixels);
        make_uniform_geometry(n, 100.0, 150.0, det).unwrap()
    }

    #[test]
    fn zero_and_linearity() {
        let g = small_geom(3, 12);
        let grid = VolumeGrid::cube(8, 2.0).unwrap();
        assert!(forward_project(&Volume::zeros(grid), &g).data().iter().all(|&v| v == 0.0));
        let vol = Volume::from_fn(grid, |p| 0.01 * (p[0] + 2.0 * p[1]).abs() + 0.1);
        let a = forward_project(&vol, &g);
        let b = forward_project(&vol.map(|v| 2.0 * v), &g);
        for (x, y) in a.data().iter().zip(b.data()) {
            assert_eq!(2.0 * x, *y);
        }
        let zero = ray_backproject(&ProjectionSet::zeros(g.clone()), &grid);
        assert!(zero.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn central_ray_chord_of_a_box() {
        // Odd detector so the central pixel hits the origin exactly.
        let det = DetectorGrid::square(9, 1.0);
        let g = make_uniform_geometry(1, 100.0, 150.0, det).unwrap();
        let grid = VolumeGrid::cube(10, 2.0).unwrap();
        let c = 0.4;
        let p = forward_project(&Volume::filled(grid, c), &g);
        let value = p.view(0)[4 * 9 + 4];
        let chord = 20.0;
        assert!((value - c * chord).abs() <= 2.0 * ray_step(&grid) * c, "{value}");
    }

    #[test]
    fn single_pixel_support() {
        let g = small_geom(1, 8);
        let grid = VolumeGrid::cube(8, 2.0).unwrap();
        let mut proj = ProjectionSet::zeros(g.clone());
        proj.data_mut()[3 * 8 + 4] = 1.0;
        let bp = ray_backproject(&proj, &grid);
        let frame = g.frame(0);
        let src = frame.source;
        let tgt = frame.detector_point(4.0, 3.0);
        let d = [tgt[0] - src[0], tgt[1] - src[1], tgt[2] - src[2]];
        let dn = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
        let mut touched = 0;
        for z in 0..8 {
            for y in 0..8 {
                for x in 0..8 {
                    if bp.get(x, y, z) == 0.0 {
                        continue;
                    }
                    touched += 1;
                    // Distance from voxel centre to the ray stays within one voxel diagonal.
                    let q = grid.voxel_center(x, y, z);
                    let w = [q[0] - src[0], q[1] - src[1], q[2] - src[2]];
                    let t = (w[0] * d[0] + w[1] * d[1] + w[2] * d[2]) / dn;
                    let perp2 = w.iter().map(|v| v * v).sum::<f64>() - t * t;
                    assert!(perp2.sqrt() <= 2.0 * 3f64.sqrt() + 1e-9);
                }
            }
        }
        assert!(touched > 0 && touched < 8 * 8 * 8 / 2);
    }

    #[test]
    fn single_view_feature_backprojection_is_the_view() {
        let g = small_geom(1, 16);
        let maps = FeatureMaps::new(2, 4, 4, vec![(0..32).map(|i| (i as f64 * 0.7).cos()).collect()]).unwrap();
        let spec = FeatureVolumeSpec::new(3, 16.0).unwrap();
        let fv = backproject_features(&maps, &spec, &g).unwrap();
        let frame = g.frame(0);
        let mut want = [0.0; 2];
        for j in 0..spec.cells() {
            let c = feature_map_coords(&frame, &g.detector(), (4, 4), spec.centroid(j)).unwrap();
            interp::<2>(&maps.views[0], [4, 4], c, &mut want);
            assert_eq!(fv.data[j], want[0]);
            assert_eq!(fv.data[spec.cells() + j], want[1]);
        }
    }

    #[test]
    fn constant_maps_fill_visible_cells() {
        let g = small_geom(4, 16);
        let maps = FeatureMaps::new(1, 16, 16, vec![vec![0.75; 256]; 4]).unwrap();
        let spec = FeatureVolumeSpec::new(4, 12.0).unwrap();
        let fv = backproject_features(&maps, &spec, &g).unwrap();
        assert!(fv.data.iter().all(|&v| (v - 0.75).abs() < 1e-12));
        assert!(backproject_features(&maps, &spec, &small_geom(3, 16)).is_err());
    }

    #[test]
    fn centroid_indices_round_trip() {
        let spec = FeatureVolumeSpec::new(5, 10.0).unwrap();
        for j in [0, 7, 64, 124] {
            let idx = spec.world_to_index(spec.centroid(j));
            let want = [j % 5, (j / 5) % 5, j / 25];
            for a in 0..3 {
                assert!((idx[a] - want[a] as f64).abs() < 1e-12);
            }
        }
    }
}
