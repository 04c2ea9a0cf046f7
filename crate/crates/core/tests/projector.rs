use cbct_core::geometry::{covering_detector, make_uniform_geometry, DetectorGrid};
use cbct_core::projector::{backproject_features, feature_map_coords, forward_project, ray_backproject, ray_step};
use cbct_core::volume::{make_phantom, PhantomKind};
use cbct_core::{FeatureMaps, FeatureVolumeSpec, ProjectionSet, ScanGeometry, Volume, VolumeGrid};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn six_views(extent: f64, pixels: usize) -> ScanGeometry {
    let dso = 4.0 * extent;
    let dsd = ScanGeometry::default_dsd(dso);
    make_uniform_geometry(6, dso, dsd, covering_detector(extent, dso, dsd, pixels)).unwrap()
}

#[test]
fn adjoint_dot_product_test() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..20 {
        let spacing = rng.gen_range(0.5..2.0);
        let grid = VolumeGrid::cube(16, spacing).unwrap();
        let geom = six_views(16.0 * spacing, 32);
        let x = Volume::new(grid, (0..grid.len()).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap();
        let n = geom.n_views() * geom.detector().pixels();
        let y = ProjectionSet::new(geom.clone(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let ax = forward_project(&x, &geom);
        let aty = ray_backproject(&y, &grid);
        let lhs = dot(ax.data(), y.data());
        let rhs = dot(x.data(), aty.data());
        assert!((lhs - rhs).abs() <= 1e-4 * lhs.abs().max(rhs.abs()), "{lhs} vs {rhs}");
    }
}

#[test]
fn sphere_chord_length() {
    // Central ray through a ball of radius R crosses a chord of 2R.
    let det = DetectorGrid::square(9, 1.0);
    let geom = make_uniform_geometry(3, 200.0, 300.0, det).unwrap();
    let grid = VolumeGrid::cube(40, 0.5).unwrap();
    let radius = 7.0;
    let c = 0.6;
    let ball = Volume::from_fn(grid, |p| if p.iter().map(|x| x * x).sum::<f64>() <= radius * radius { c } else { 0.0 });
    let proj = forward_project(&ball, &geom);
    for view in 0..3 {
        let value = proj.view(view)[4 * 9 + 4];
        // Voxelised boundary plus trilinear blur cost at most a voxel on each side.
        let tol = 2.0 * ray_step(&grid) * c + 2.0 * grid.spacing[0] * c;
        assert!((value - 2.0 * radius * c).abs() <= tol, "view {view}: {value}");
    }
}

#[test]
fn rotated_volume_matches_rotated_view() {
    let grid = VolumeGrid::cube(24, 1.0).unwrap();
    let blob = |p: [f64; 3]| {
        let q = [p[0] - 3.0, p[1] + 2.0, p[2] - 1.0];
        (-(q[0] * q[0] / 18.0 + q[1] * q[1] / 8.0 + q[2] * q[2] / 12.0)).exp()
    };
    let vol = Volume::from_fn(grid, blob);
    let delta = 0.4f64;
    // Object turned by +delta about z: f'(p) = f(R(-delta) p).
    let (s, c) = delta.sin_cos();
    let rotated = Volume::from_fn(grid, |p| blob([c * p[0] + s * p[1], -s * p[0] + c * p[1], p[2]]));
    let det = covering_detector(24.0, 96.0, 144.0, 32);
    let at_a = ScanGeometry::new(vec![0.3], 96.0, 144.0, det).unwrap();
    let at_b = ScanGeometry::new(vec![0.3 + delta], 96.0, 144.0, det).unwrap();
    let p1 = forward_project(&rotated, &at_b);
    let p2 = forward_project(&vol, &at_a);
    let diff = p1.data().iter().zip(p2.data()).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
    let norm = p2.data().iter().map(|b| b * b).sum::<f64>();
    assert!((diff / norm).sqrt() < 0.01, "relative RMS {}", (diff / norm).sqrt());
}

/// Per-voxel, per-view bilinear read written out longhand.
fn brute_feature_backprojection(maps: &FeatureMaps, spec: &FeatureVolumeSpec, geom: &ScanGeometry) -> Vec<f64> {
    let (c, h, w) = (maps.channels, maps.height, maps.width);
    let det = geom.detector();
    let cells = spec.cells();
    let mut out = vec![0.0; c * cells];
    for j in 0..cells {
        let q = spec.centroid(j);
        for ch in 0..c {
            let mut best = f64::NEG_INFINITY;
            for view in 0..geom.n_views() {
                let d = geom.project_point(view, q).unwrap();
                let x = (d.u + 0.5) * w as f64 / det.width as f64 - 0.5;
                let y = (d.v + 0.5) * h as f64 / det.height as f64 - 0.5;
                let (x0, y0) = (x.floor(), y.floor());
                let mut acc = 0.0;
                for (dy, dx) in [(0.0, 0.0), (0.0, 1.0), (1.0, 0.0), (1.0, 1.0)] {
                    let (xi, yi) = (x0 + dx, y0 + dy);
                    if xi < 0.0 || yi < 0.0 || xi >= w as f64 || yi >= h as f64 {
                        continue;
                    }
                    let wt = (1.0 - (x - xi).abs()) * (1.0 - (y - yi).abs());
                    acc += wt * maps.views[view][ch * h * w + yi as usize * w + xi as usize];
                }
                best = best.max(acc);
            }
            out[ch * cells + j] = best;
        }
    }
    out
}

#[test]
fn feature_backprojection_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for trial in 0..10 {
        let n = rng.gen_range(1..5);
        let extent = rng.gen_range(8.0..40.0);
        let dso = extent * rng.gen_range(2.0..5.0);
        let dsd = dso * 1.5;
        // Some trials use a detector too small to see every cell.
        let pixels = rng.gen_range(8..24);
        let mut det = covering_detector(extent, dso, dsd, pixels);
        if trial % 3 == 0 {
            det.du *= 0.5;
            det.dv *= 0.5;
        }
        let geom = make_uniform_geometry(n, dso, dsd, det).unwrap();
        let (c, h, w) = (rng.gen_range(1..4), rng.gen_range(2..7), rng.gen_range(2..7));
        let views = (0..n).map(|_| (0..c * h * w).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let maps = FeatureMaps::new(c, h, w, views).unwrap();
        let spec = FeatureVolumeSpec::new(4, extent).unwrap();
        let got = backproject_features(&maps, &spec, &geom).unwrap();
        let want = brute_feature_backprojection(&maps, &spec, &geom);
        for (a, b) in got.data.iter().zip(&want) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }
}

#[test]
fn coordinate_maps_round_trip_through_projection() {
    // Maps whose channels hold their own pixel coordinates return, at each
    // centroid, the projected coordinate of that centroid.
    let geom = six_views(20.0, 16);
    let (h, w) = (16, 16);
    let mut plane = vec![0.0; 2 * h * w];
    for y in 0..h {
        for x in 0..w {
            plane[y * w + x] = x as f64;
            plane[h * w + y * w + x] = y as f64;
        }
    }
    let spec = FeatureVolumeSpec::new(5, 16.0).unwrap();
    for view in 0..geom.n_views() {
        let single = ScanGeometry::new(vec![geom.angles()[view]], geom.dso(), geom.dsd(), geom.detector()).unwrap();
        let maps = FeatureMaps::new(2, h, w, vec![plane.clone()]).unwrap();
        let fv = backproject_features(&maps, &spec, &single).unwrap();
        for j in 0..spec.cells() {
            let d = geom.project_point(view, spec.centroid(j)).unwrap();
            assert!((fv.data[j] - d.u).abs() < 1e-9);
            assert!((fv.data[spec.cells() + j] - d.v).abs() < 1e-9);
        }
    }
}

#[test]
fn feature_max_is_permutation_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let geom = six_views(16.0, 16);
    let views: Vec<Vec<f64>> = (0..6).map(|_| (0..3 * 8 * 8).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    let spec = FeatureVolumeSpec::new(4, 16.0).unwrap();
    let base = backproject_features(&FeatureMaps::new(3, 8, 8, views.clone()).unwrap(), &spec, &geom).unwrap();
    let perm = [3, 0, 5, 1, 4, 2];
    let angles = perm.iter().map(|&i| geom.angles()[i]).collect();
    let pgeom = ScanGeometry::new(angles, geom.dso(), geom.dsd(), geom.detector()).unwrap();
    let pviews = perm.iter().map(|&i| views[i].clone()).collect();
    let permuted = backproject_features(&FeatureMaps::new(3, 8, 8, pviews).unwrap(), &spec, &pgeom).unwrap();
    assert_eq!(base.data, permuted.data);
}

#[test]
fn feature_map_rescaling_keeps_centres_aligned() {
    let geom = six_views(16.0, 32);
    let frame = geom.frame(2);
    let det = geom.detector();
    let p = [1.0, -2.0, 3.0];
    let full = geom.project_point(2, p).unwrap();
    let same = feature_map_coords(&frame, &det, (32, 32), p).unwrap();
    assert!((same[0] - full.u).abs() < 1e-12 && (same[1] - full.v).abs() < 1e-12);
    let half = feature_map_coords(&frame, &det, (16, 16), p).unwrap();
    assert!((half[0] - ((full.u + 0.5) / 2.0 - 0.5)).abs() < 1e-12);
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let vol = make_phantom(PhantomKind::SheppLogan3d, [16; 3], [1.0; 3], 0).unwrap();
    let geom = six_views(16.0, 24);
    let run = |threads| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            let p = forward_project(&vol, &geom);
            let maps = FeatureMaps::new(1, 24, 24, (0..6).map(|i| p.view(i).to_vec()).collect()).unwrap();
            let fv = backproject_features(&maps, &FeatureVolumeSpec::new(6, 16.0).unwrap(), &geom).unwrap();
            (p, fv)
        })
    };
    assert_eq!(run(1), run(3));
}
