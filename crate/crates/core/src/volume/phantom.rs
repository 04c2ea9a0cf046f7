//! Synthetic phantoms standing in for patient data.

use alloc::format;
use alloc::vec::Vec;
use core::str::FromStr;

#[cfg(not(feature = "std"))]
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Volume, VolumeGrid};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PhantomKind {
    /// Ten-ellipsoid 3D Shepp-Logan with the high-contrast intensities.
    SheppLogan3d,
    /// Seeded non-overlapping spheres on a zero background.
    Spheres,
    Constant(f64),
}

impl FromStr for PhantomKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "shepp3d" | "shepp-logan" => Ok(PhantomKind::SheppLogan3d),
            "spheres" => Ok(PhantomKind::Spheres),
            "constant" => Ok(PhantomKind::Constant(0.5)),
            _ => match s.strip_prefix("constant:").map(f64::from_str) {
                Some(Ok(v)) => Ok(PhantomKind::Constant(v)),
                _ => Err(Error::invalid("phantom kind", format!("unsupported kind `{s}`"))),
            },
        }
    }
}

/// One ellipsoid: intensity, semi-axes, centre and Euler angles (degrees),
/// in normalised `[-1, 1]^3` coordinates.
struct Ellipsoid {
    value: f64,
    axes: [f64; 3],
    center: [f64; 3],
    euler_deg: [f64; 3],
}

const fn e(value: f64, axes: [f64; 3], center: [f64; 3], euler_deg: [f64; 3]) -> Ellipsoid {
    Ellipsoid { value, axes, center, euler_deg }
}

const SHEPP_LOGAN: [Ellipsoid; 10] = [
    e(1.0, [0.69, 0.92, 0.81], [0.0, 0.0, 0.0], [0.0, 0.0, 0.0]),
    e(-0.8, [0.6624, 0.874, 0.78], [0.0, -0.0184, 0.0], [0.0, 0.0, 0.0]),
    e(-0.2, [0.11, 0.31, 0.22], [0.22, 0.0, 0.0], [-18.0, 0.0, 10.0]),
    e(-0.2, [0.16, 0.41, 0.28], [-0.22, 0.0, 0.0], [18.0, 0.0, 10.0]),
    e(0.1, [0.21, 0.25, 0.41], [0.0, 0.35, -0.15], [0.0, 0.0, 0.0]),
    e(0.1, [0.046, 0.046, 0.05], [0.0, 0.1, 0.25], [0.0, 0.0, 0.0]),
    e(0.1, [0.046, 0.046, 0.05], [0.0, -0.1, 0.25], [0.0, 0.0, 0.0]),
    e(0.1, [0.046, 0.023, 0.05], [-0.08, -0.605, 0.0], [0.0, 0.0, 0.0]),
    e(0.1, [0.023, 0.023, 0.02], [0.0, -0.606, 0.0], [0.0, 0.0, 0.0]),
    e(0.1, [0.023, 0.046, 0.02], [0.06, -0.605, 0.0], [0.0, 0.0, 0.0]),
];

impl Ellipsoid {
    /// ZXZ-style rotation used by the classic 3D phantom tables; the point is
    /// rotated into the ellipsoid frame before the centre is subtracted.
    fn contains(&self, p: [f64; 3]) -> bool {
        let [phi, theta, psi] = self.euler_deg.map(|d| d.to_radians());
        let (sp, cp) = phi.sin_cos();
        let (st, ct) = theta.sin_cos();
        let (ss, cs) = psi.sin_cos();
        let r = [
            [cp * cs - ct * sp * ss, cp * ss + ct * sp * cs, ss * st],
            [-sp * cs - ct * cp * ss, -sp * ss + ct * cp * cs, cs * st],
            [st * sp, -st * cp, ct],
        ];
        let mut acc = 0.0;
        for a in 0..3 {
            let q = r[a][0] * p[0] + r[a][1] * p[1] + r[a][2] * p[2] - self.center[a];
            acc += (q / self.axes[a]).powi(2);
        }
        acc <= 1.0
    }
}

/// Shepp-Logan value at a normalised coordinate, before clamping.
pub(crate) fn shepp_logan_value(p: [f64; 3]) -> f64 {
    SHEPP_LOGAN.iter().filter(|e| e.contains(p)).map(|e| e.value).sum()
}

fn normalised_coords(grid: &VolumeGrid, x: usize, y: usize, z: usize) -> [f64; 3] {
    let idx = [x, y, z];
    [0, 1, 2].map(|a| {
        let n = grid.dims[a];
        if n == 1 {
            0.0
        } else {
            -1.0 + 2.0 * idx[a] as f64 / (n - 1) as f64
        }
    })
}

struct Sphere {
    center: [f64; 3],
    radius: f64,
    value: f64,
}

fn random_spheres(seed: u64) -> Vec<Sphere> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let count = rng.gen_range(4..=8);
    let mut spheres: Vec<Sphere> = Vec::with_capacity(count);
    let mut attempts = 0;
    while spheres.len() < count && attempts < 10_000 {
        attempts += 1;
        let radius = rng.gen_range(0.12..0.35);
        let center = [(); 3].map(|_| rng.gen_range(-0.85 + radius..0.85 - radius));
        let value = rng.gen_range(0.2..1.0);
        let clear = spheres.iter().all(|s| {
            let d2: f64 = (0..3).map(|a| (s.center[a] - center[a]).powi(2)).sum();
            d2.sqrt() > s.radius + radius + 0.02
        });
        if clear {
            spheres.push(Sphere { center, radius, value });
        }
    }
    spheres
}

pub fn make_phantom(kind: PhantomKind, dims: [usize; 3], spacing: [f64; 3], seed: u64) -> Result<Volume> {
    let grid = VolumeGrid::centered(dims, spacing)?;
    let mut data = Vec::with_capacity(grid.len());
    match kind {
        PhantomKind::SheppLogan3d => {
            if dims.iter().any(|&d| d < 8) {
                return Err(Error::invalid("phantom", format!("shepp3d needs at least 8^3 voxels, got {dims:?}")));
            }
            for z in 0..dims[2] {
                for y in 0..dims[1] {
                    for x in 0..dims[0] {
                        data.push(shepp_logan_value(normalised_coords(&grid, x, y, z)).clamp(0.0, 1.0));
                    }
                }
            }
        }
        PhantomKind::Spheres => {
            let spheres = random_spheres(seed);
            for z in 0..dims[2] {
                for y in 0..dims[1] {
                    for x in 0..dims[0] {
                        let p = normalised_coords(&grid, x, y, z);
                        let v = spheres
                            .iter()
                            .find(|s| (0..3).map(|a| (p[a] - s.center[a]).powi(2)).sum::<f64>() <= s.radius * s.radius)
                            .map_or(0.0, |s| s.value);
                        data.push(v);
                    }
                }
            }
        }
        PhantomKind::Constant(v) => {
            if !v.is_finite() {
                return Err(Error::invalid("phantom", "constant value must be finite"));
            }
            data.resize(grid.len(), v);
        }
    }
    Volume::new(grid, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_kinds() {
        assert_eq!("shepp3d".parse::<PhantomKind>().unwrap(), PhantomKind::SheppLogan3d);
        assert_eq!("constant:0.3".parse::<PhantomKind>().unwrap(), PhantomKind::Constant(0.3));
        assert!("cube".parse::<PhantomKind>().is_err());
    }

    #[test]
    fn shepp_logan_corners_and_centre() {
        let v = make_phantom(PhantomKind::SheppLogan3d, [64; 3], [1.0; 3], 0).unwrap();
        for &x in &[0, 63] {
            for &y in &[0, 63] {
                for &z in &[0, 63] {
                    assert_eq!(v.get(x, y, z), 0.0);
                }
            }
        }
        // The centre lies in the outer two ellipsoids only: 1.0 - 0.8.
        let c = shepp_logan_value([0.0; 3]);
        assert!((c - 0.2).abs() < 1e-12);
        assert!(v.sample([0.0; 3]) > 0.0);
        assert!(v.data().iter().all(|&x| (0.0..=1.0).contains(&x)));
        assert!(make_phantom(PhantomKind::SheppLogan3d, [4; 3], [1.0; 3], 0).is_err());
    }

    #[test]
    fn spheres_are_deterministic() {
        let a = make_phantom(PhantomKind::Spheres, [24; 3], [1.0; 3], 5).unwrap();
        let b = make_phantom(PhantomKind::Spheres, [24; 3], [1.0; 3], 5).unwrap();
        let c = make_phantom(PhantomKind::Spheres, [24; 3], [1.0; 3], 6).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.data().iter().any(|&v| v > 0.0));
        assert_eq!(a.get(0, 0, 0), 0.0);
    }

    #[test]
    fn constant_phantom() {
        let v = make_phantom(PhantomKind::Constant(0.3), [5; 3], [2.0; 3], 0).unwrap();
        assert!(v.data().iter().all(|&x| x == 0.3));
        assert!((v.sample([1.3, -2.2, 0.4]) - 0.3).abs() < 1e-15);
    }
}
