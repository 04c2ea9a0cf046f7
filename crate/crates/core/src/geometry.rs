//! Circular-orbit cone-beam scan geometry.
//!
//! The source travels on a circle of radius `dso` in the `z = 0` plane. For
//! view `i` at angle `a`:
//!
//! * source `s = dso * (cos a, sin a, 0)`
//! * central axis `w = (cos a, sin a, 0)` (points from the origin to the source)
//! * detector axes `u = (-sin a, cos a, 0)`, `v = (0, 0, 1)`
//! * detector centre `c = s - dsd * w`
//!
//! Detector coordinates are continuous pixel indices with pixel `(0, 0)` at
//! the first pixel centre, so the detector centre sits at
//! `((W - 1) / 2, (H - 1) / 2)`.

use alloc::format;
use alloc::vec::Vec;
use core::f64::consts::PI;

#[cfg(not(feature = "std"))]
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

pub type Vec3 = [f64; 3];

#[inline]
pub(crate) fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub(crate) fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub(crate) fn axpy(a: f64, x: Vec3, y: Vec3) -> Vec3 {
    [a * x[0] + y[0], a * x[1] + y[1], a * x[2] + y[2]]
}

/// Flat-panel detector sampling.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorGrid {
    pub width: usize,
    pub height: usize,
    /// Pixel pitch along `u`, mm.
    pub du: f64,
    /// Pixel pitch along `v`, mm.
    pub dv: f64,
}

impl DetectorGrid {
    pub fn square(pixels: usize, pitch: f64) -> Self {
        DetectorGrid { width: pixels, height: pixels, du: pitch, dv: pitch }
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }
}

/// Continuous detector position in pixel units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorPoint {
    pub u: f64,
    pub v: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanGeometry {
    angles: Vec<f64>,
    dso: f64,
    dsd: f64,
    det: DetectorGrid,
}

/// Offsets and noise applied to a nominal scan.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnglePerturbation {
    /// Global angle offset, radians.
    pub offset: f64,
    /// Half-width of the uniform per-view angle noise, radians.
    pub noise_bound: f64,
    /// Half-width of the uniform source-to-origin distance noise, mm.
    pub dso_noise_bound: f64,
    pub seed: u64,
}

impl Default for AnglePerturbation {
    fn default() -> Self {
        AnglePerturbation { offset: 0.0, noise_bound: 0.0, dso_noise_bound: 0.0, seed: crate::DEFAULT_SEED }
    }
}

/// Per-view frame vectors, precomputed for inner loops.
#[derive(Debug, Clone, Copy)]
pub struct ViewFrame {
    pub source: Vec3,
    pub axis: Vec3,
    pub u_axis: Vec3,
    pub v_axis: Vec3,
    pub center: Vec3,
    dsd: f64,
    du: f64,
    dv: f64,
    u0: f64,
    v0: f64,
}

impl ViewFrame {
    /// Perspective projection onto the detector; `None` when `p` is not in
    /// front of the source.
    #[inline]
    pub fn project(&self, p: Vec3) -> Option<DetectorPoint> {
        let d = sub(p, self.source);
        let along = dot(d, self.axis);
        // The ray must head from the source towards the detector.
        if !(along < -1e-12 * (1.0 + dot(d, d).sqrt())) {
            return None;
        }
        let t = -self.dsd / along;
        let x = axpy(t, d, self.source);
        let rel = sub(x, self.center);
        Some(DetectorPoint { u: dot(rel, self.u_axis) / self.du + self.u0, v: dot(rel, self.v_axis) / self.dv + self.v0 })
    }

    /// World position of a detector pixel coordinate.
    #[inline]
    pub fn detector_point(&self, u: f64, v: f64) -> Vec3 {
        let a = (u - self.u0) * self.du;
        let b = (v - self.v0) * self.dv;
        axpy(b, self.v_axis, axpy(a, self.u_axis, self.center))
    }

    /// Distance from the source to the plane through `p` parallel to the
    /// detector, measured along the central axis.
    #[inline]
    pub fn depth(&self, p: Vec3) -> f64 {
        dot(sub(self.source, p), self.axis)
    }
}

impl ScanGeometry {
    pub fn new(angles: Vec<f64>, dso: f64, dsd: f64, det: DetectorGrid) -> Result<Self> {
        if angles.is_empty() {
            return Err(Error::invalid("geometry", "at least one view is required"));
        }
        if let Some(a) = angles.iter().find(|a| !a.is_finite()) {
            return Err(Error::invalid("geometry", format!("non-finite angle {a}")));
        }
        if !(dso > 0.0 && dso.is_finite()) {
            return Err(Error::invalid("geometry", format!("dso must be positive, got {dso}")));
        }
        if !(dsd > dso && dsd.is_finite()) {
            return Err(Error::invalid("geometry", format!("dsd ({dsd}) must exceed dso ({dso})")));
        }
        if det.width == 0 || det.height == 0 {
            return Err(Error::invalid("geometry", "detector pixel counts must be positive"));
        }
        if !(det.du > 0.0 && det.dv > 0.0 && det.du.is_finite() && det.dv.is_finite()) {
            return Err(Error::invalid("geometry", "detector pitches must be positive"));
        }
        Ok(ScanGeometry { angles, dso, dsd, det })
    }

    pub fn n_views(&self) -> usize {
        self.angles.len()
    }

    pub fn angles(&self) -> &[f64] {
        &self.angles
    }

    pub fn dso(&self) -> f64 {
        self.dso
    }

    pub fn dsd(&self) -> f64 {
        self.dsd
    }

    pub fn detector(&self) -> DetectorGrid {
        self.det
    }

    /// Default source-to-detector distance for a given source-to-origin
    /// distance.
    pub fn default_dsd(dso: f64) -> f64 {
        1.5 * dso
    }

    pub fn frame(&self, view: usize) -> ViewFrame {
        let (s, c) = self.angles[view].sin_cos();
        let axis = [c, s, 0.0];
        let source = [self.dso * c, self.dso * s, 0.0];
        ViewFrame {
            source,
            axis,
            u_axis: [-s, c, 0.0],
            v_axis: [0.0, 0.0, 1.0],
            center: axpy(-self.dsd, axis, source),
            dsd: self.dsd,
            du: self.det.du,
            dv: self.det.dv,
            u0: (self.det.width as f64 - 1.0) / 2.0,
            v0: (self.det.height as f64 - 1.0) / 2.0,
        }
    }

    pub fn frames(&self) -> Vec<ViewFrame> {
        (0..self.n_views()).map(|i| self.frame(i)).collect()
    }

    pub fn project_point(&self, view: usize, p: Vec3) -> Result<DetectorPoint> {
        if view >= self.n_views() {
            return Err(Error::Geometry(format!("view {view} out of range for {} views", self.n_views())));
        }
        if !p.iter().all(|x| x.is_finite()) {
            return Err(Error::Geometry(format!("non-finite point {p:?}")));
        }
        self.frame(view)
            .project(p)
            .ok_or_else(|| Error::Geometry(format!("point {p:?} is not in front of the source for view {view}")))
    }

    /// Returns a perturbed copy: `a_i + offset + eta_i` with
    /// `eta_i ~ U(-noise_bound, noise_bound)` and `dso + U(-b, b)`.
    pub fn perturb(&self, pert: &AnglePerturbation) -> Result<ScanGeometry> {
        if pert.noise_bound < 0.0 || pert.dso_noise_bound < 0.0 {
            return Err(Error::invalid("perturbation", "noise bounds must be non-negative"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(pert.seed);
        let angles = self
            .angles
            .iter()
            .map(|a| {
                let eta: f64 = rng.gen_range(-pert.noise_bound..=pert.noise_bound);
                a + pert.offset + eta
            })
            .collect();
        let dso = self.dso + rng.gen_range(-pert.dso_noise_bound..=pert.dso_noise_bound);
        ScanGeometry::new(angles, dso, self.dsd, self.det)
    }
}

/// `n_views` angles `i * pi / n_views`, a half rotation without the endpoint.
pub fn make_uniform_geometry(n_views: usize, dso: f64, dsd: f64, det: DetectorGrid) -> Result<ScanGeometry> {
    if n_views == 0 {
        return Err(Error::invalid("geometry", "at least one view is required"));
    }
    let angles = (0..n_views).map(|i| i as f64 * PI / n_views as f64).collect();
    ScanGeometry::new(angles, dso, dsd, det)
}

/// Square detector whose pitch makes a centred cube of side `extent_mm` fit
/// on the panel from every angle, with one pixel of margin on each side.
pub fn covering_detector(extent_mm: f64, dso: f64, dsd: f64, pixels: usize) -> DetectorGrid {
    // Farthest cube point from the rotation axis in the orbit plane, and
    // its half-height.
    let radius = extent_mm * core::f64::consts::FRAC_1_SQRT_2;
    let half = extent_mm / 2.0;
    // Worst-case magnification is for the point nearest the source.
    let mag = dsd / (dso - radius);
    let lateral = radius * dsd / (dso * dso - radius * radius).sqrt();
    let span = 2.0 * lateral.max(half * mag);
    let pitch = span / (pixels.saturating_sub(2).max(1)) as f64;
    DetectorGrid::square(pixels, pitch)
}
