//! Acceptance criteria A1 to A9. Prints one PASS/FAIL line per criterion.
//!
//! Run with `cargo test --release -p cbct --test acceptance`. Failing
//! criteria are reported but only turn into a nonzero exit status with
//! `-- --strict`, so the workspace test run stays usable while a red
//! criterion is being worked on.

use std::time::{Duration, Instant};

use cbct::robust::{default_geometry, rows_csv, run_sweep, SweepSpec};
use cbct_core::classical::{fdk_reconstruct, sart_reconstruct, FdkConfig, RampFilter, SartConfig};
use cbct_core::geometry::covering_detector;
use cbct_core::metrics::{psnr, ssim};
use cbct_core::model::{Aggregation, Graph, Model, ModelConfig};
use cbct_core::projector::{backproject_features, forward_project, ray_backproject};
use cbct_core::tensor::gradcheck::check_op;
use cbct_core::tensor::{OpKind, Real};
use cbct_core::trainer::{mse_loss, sample_points_seeded, train, NoObserver, TrainConfig, TrainSample};
use cbct_core::volume::{interp, make_phantom, PhantomKind};
use cbct_core::{AnglePerturbation, FeatureMaps, FeatureVolumeSpec, PointBatch, ProjectionSet, ScanGeometry, Volume, VolumeGrid};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn within(elapsed: Duration, limit_s: f64) -> bool {
    elapsed.as_secs_f64() < limit_s
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

// A1

fn adjoint() -> Verdict {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let spacing = rng.gen_range(0.5..2.0);
        let grid = VolumeGrid::cube(16, spacing).unwrap();
        let geom = default_geometry(6, 16.0 * spacing, 32).unwrap();
        let x = Volume::new(grid, (0..grid.len()).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap();
        let n = 6 * geom.detector().pixels();
        let y = ProjectionSet::new(geom.clone(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let lhs = dot(forward_project(&x, &geom).data(), y.data());
        let rhs = dot(x.data(), ray_backproject(&y, &grid).data());
        worst = worst.max((lhs - rhs).abs() / lhs.abs().max(rhs.abs()));
    }
    let el = t.elapsed();
    verdict(worst < 1e-4 && within(el, 10.0), format!("worst relative error {worst:.2e} over 20 instances, {el:.2?}"))
}

// A2

const TINY_EXTENT: f64 = 16.0;

fn tiny_config(agg: Aggregation, ms3dv: bool) -> ModelConfig {
    ModelConfig {
        image_size: 32,
        feature_channels: 4,
        unet_widths: [2, 3, 3, 4, 4],
        n_scales: 2,
        base_resolution: 3,
        n_att_modules: 1,
        n_heads: 2,
        attention_dim: 4,
        ffn_dim: 6,
        aggregation: agg,
        use_ms3dv: ms3dv,
        ..ModelConfig::toy(3, TINY_EXTENT)
    }
}

/// Moves relu inputs off their kinks and gives the zero-initialised output
/// layers weight, so the check probes a generic point of parameter space.
fn perturb_params(model: &mut Model<f64>, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let names: Vec<(String, usize)> = model.params().iter().map(|(n, v, _)| (n.to_string(), v.numel())).collect();
    for (name, len) in names {
        let scale = match name.as_str() {
            "head.w" | "mlp.l3.w" => 0.5,
            n if n.ends_with(".b") => 0.05,
            _ => continue,
        };
        let data: Vec<f64> = (0..len).map(|_| rng.gen_range(-scale..scale)).collect();
        model.params_mut().set(&name, &data).unwrap();
    }
}

fn frozen_loss(model: &Model<f64>, proj: &ProjectionSet, batch: &PointBatch) -> f64 {
    let mut g = Graph::frozen(model.params());
    let pred = model.forward(&mut g, proj, &batch.points).unwrap();
    let loss = mse_loss(&mut g.tape, pred, batch.values()).unwrap();
    g.tape.value(loss).data()[0]
}

fn end_to_end_gradient(seed: u64, agg: Aggregation, ms3dv: bool) -> f64 {
    let vol = make_phantom(PhantomKind::SheppLogan3d, [16; 3], [1.0; 3], 0).unwrap();
    let geom = default_geometry(3, TINY_EXTENT, 32).unwrap();
    let proj = forward_project(&vol, &geom);
    let mut model = Model::<f64>::new(tiny_config(agg, ms3dv), seed).unwrap();
    perturb_params(&mut model, seed ^ 0x5eed);
    let batch = sample_points_seeded(&vol, 12, seed);

    let mut g = Graph::trainable(model.params());
    let pred = model.forward(&mut g, &proj, &batch.points).unwrap();
    let loss = mse_loss(&mut g.tape, pred, batch.values()).unwrap();
    g.tape.backward(loss).unwrap();
    let (tape, bound) = g.into_parts();

    // Small enough that no relu input crosses zero inside the stencil.
    let h = 1e-6;
    let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
    let (mut diff2, mut a2, mut n2) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..16 {
        let id = rng.gen_range(0..model.params().len());
        let j = rng.gen_range(0..model.params().value(id).numel());
        let analytic = tape.grad(bound.var(id)).unwrap()[j];
        let name = model.params().name(id).to_string();
        let base = model.params().value(id).data().to_vec();
        let mut probe = model.clone();
        let mut shifted = base.clone();
        shifted[j] = base[j] + h;
        probe.params_mut().set(&name, &shifted).unwrap();
        let plus = frozen_loss(&probe, &proj, &batch);
        shifted[j] = base[j] - h;
        probe.params_mut().set(&name, &shifted).unwrap();
        let minus = frozen_loss(&probe, &proj, &batch);
        let numeric = (plus - minus) / (2.0 * h);
        diff2 += (analytic - numeric).powi(2);
        a2 += analytic * analytic;
        n2 += numeric * numeric;
    }
    diff2.sqrt() / a2.sqrt().max(n2.sqrt()).max(1e-12)
}

fn gradients() -> Verdict {
    let t = Instant::now();
    let seeds = 1..=5u64;
    let mut worst_op = (0.0f64, OpKind::ALL[0]);
    let mut ok = true;
    for kind in OpKind::ALL {
        for seed in seeds.clone() {
            let (report, recorded) = check_op(kind, seed).unwrap();
            ok &= recorded.contains(&kind) && report.analytic_norm > 0.0;
            if report.rel_error > worst_op.0 {
                worst_op = (report.rel_error, kind);
            }
        }
    }
    let mut worst_e2e = 0.0f64;
    for seed in seeds {
        for (agg, ms3dv) in [(Aggregation::Svc, true), (Aggregation::Svc, false), (Aggregation::MaxpoolMlp, false), (Aggregation::Mlp, false)] {
            worst_e2e = worst_e2e.max(end_to_end_gradient(seed, agg, ms3dv));
        }
    }
    let el = t.elapsed();
    verdict(
        ok && worst_op.0 < 1e-3 && worst_e2e < 1e-3 && within(el, 60.0),
        format!(
            "{} ops x 5 seeds, worst {:.2e} ({:?}); end-to-end loss x 4 modes x 5 seeds, worst {worst_e2e:.2e}; {el:.2?}",
            OpKind::ALL.len(),
            worst_op.0,
            worst_op.1
        ),
    )
}

// A3

fn view_trend() -> Verdict {
    let t = Instant::now();
    let vol = make_phantom(PhantomKind::SheppLogan3d, [64; 3], [1.0; 3], 0).unwrap();
    let grid = *vol.grid();
    let mut fdk = Vec::new();
    let mut sart = Vec::new();
    for views in [6, 8, 10, 60] {
        let proj = forward_project(&vol, &default_geometry(views, 64.0, 96).unwrap());
        let f = fdk_reconstruct(&proj, &FdkConfig { filter: RampFilter::RamLak, grid }).unwrap();
        let s = sart_reconstruct(&proj, &SartConfig::new(grid)).unwrap();
        fdk.push(psnr(&f, &vol).unwrap());
        sart.push(psnr(&s, &vol).unwrap());
    }
    let increasing = |v: &[f64]| v.windows(2).all(|w| w[1] > w[0]);
    let el = t.elapsed();
    let fmt = |v: &[f64]| v.iter().map(|p| format!("{p:.2}")).collect::<Vec<_>>().join(" < ");
    verdict(
        increasing(&fdk) && increasing(&sart) && sart[0] > fdk[0] && within(el, 300.0),
        format!("views 6/8/10/60: FDK {} dB; SART {} dB; {el:.2?}", fmt(&fdk), fmt(&sart)),
    )
}

// A4, A5

const SIZE: usize = 32;
const EXTENT: f64 = SIZE as f64;
const PHANTOM_SEED: u64 = 3;
const EVAL_POINTS: usize = 20_000;

struct Setup {
    volume: Volume,
    geometry: ScanGeometry,
    sample: TrainSample,
    eval: PointBatch,
}

fn setup() -> Setup {
    let volume = make_phantom(PhantomKind::Spheres, [SIZE; 3], [1.0; 3], PHANTOM_SEED).unwrap();
    let geometry = default_geometry(6, EXTENT, 2 * SIZE).unwrap();
    let projections = forward_project(&volume, &geometry);
    let eval = sample_points_seeded(&volume, EVAL_POINTS, 99);
    let sample = TrainSample { id: "spheres".into(), projections, volume: volume.clone() };
    Setup { volume, geometry, sample, eval }
}

fn train_config(steps: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        epochs: steps,
        batch_size: 1,
        points_per_volume: 2048,
        lr0: 0.01,
        momentum: 0.9,
        lr_decay_total: 0.1,
        seed,
        checkpoint_every: 0,
    }
}

/// Point MSE on the fixed evaluation set.
fn eval_mse<T: Real>(model: &Model<T>, s: &Setup) -> f64 {
    let pred = model.predict_field(&s.sample.projections, &s.eval).unwrap();
    pred.values().iter().zip(s.eval.values()).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / s.eval.len() as f64
}

fn overfit(s: &Setup) -> (Verdict, Model<f32>) {
    let t = Instant::now();
    let model = Model::<f32>::new(ModelConfig::toy(6, EXTENT), 1).unwrap();
    let initial = eval_mse(&model, s);
    let out = train(std::slice::from_ref(&s.sample), model, &train_config(2000, 1), &mut NoObserver).unwrap();
    let model = out.model;
    let final_mse = eval_mse(&model, s);
    let recon = model.reconstruct(&s.sample.projections, SIZE).unwrap().clamp_unit();
    let recon = Volume::new(*s.volume.grid(), recon.into_data()).unwrap();
    let fdk = fdk_reconstruct(&s.sample.projections, &FdkConfig { filter: RampFilter::RamLak, grid: *s.volume.grid() })
        .unwrap()
        .clamp_unit();
    let (p_model, p_fdk) = (psnr(&recon, &s.volume).unwrap(), psnr(&fdk, &s.volume).unwrap());
    let ratio = final_mse / initial;
    let el = t.elapsed();
    let v = verdict(
        ratio <= 0.01 && p_model >= p_fdk + 3.0 && within(el, 1800.0),
        format!(
            "2000 steps: point MSE {initial:.3e} -> {final_mse:.3e} (ratio {:.2}%, need <= 1%); PSNR {p_model:.2} dB vs 6-view FDK {p_fdk:.2} dB (gap {:+.2}, need >= 3); {el:.2?}",
            100.0 * ratio,
            p_model - p_fdk
        ),
    );
    (v, model)
}

fn ablation(s: &Setup) -> Verdict {
    let t = Instant::now();
    let modes = [
        ("mlp", Aggregation::Mlp, false),
        ("maxpool-mlp", Aggregation::MaxpoolMlp, false),
        ("svc", Aggregation::Svc, false),
        ("svc+ms3dv", Aggregation::Svc, true),
    ];
    let mut stable = true;
    let mut wins = 0;
    let mut lines = Vec::new();
    for seed in 1..=3u64 {
        let mut finals = Vec::new();
        for (_, agg, ms3dv) in modes {
            let cfg = ModelConfig { aggregation: agg, use_ms3dv: ms3dv, ..ModelConfig::toy(6, EXTENT) };
            let model = Model::<f32>::new(cfg, seed).unwrap();
            let out = train(std::slice::from_ref(&s.sample), model, &train_config(200, seed), &mut NoObserver);
            match out {
                Ok(out) => {
                    let f = eval_mse(&out.model, s);
                    // Divergence: a non-finite loss or one that blows up past
                    // ten times where it started.
                    let first = out.steps[0].loss;
                    stable &= out.steps.iter().all(|l| l.loss.is_finite() && l.loss <= 10.0 * first) && f.is_finite();
                    finals.push(f);
                }
                Err(_) => {
                    stable = false;
                    finals.push(f64::INFINITY);
                }
            }
        }
        let best = finals.iter().cloned().fold(f64::INFINITY, f64::min);
        if finals[3] == best {
            wins += 1;
        }
        lines.push(format!(
            "seed {seed}: {}",
            modes.iter().zip(&finals).map(|((n, _, _), f)| format!("{n} {f:.2e}")).collect::<Vec<_>>().join(", ")
        ));
    }
    let el = t.elapsed();
    verdict(
        stable && wins >= 2,
        format!("svc+ms3dv lowest on {wins}/3 seeds; {}; {el:.2?}", lines.join("; ")),
    )
}

// A6

fn permutation(model: &Model<f32>, s: &Setup) -> Verdict {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (lo, hi) = s.volume.grid().bounds();
    let pts = PointBatch::new((0..100).map(|_| [0, 1, 2].map(|a| rng.gen_range(lo[a]..hi[a]))).collect());
    let proj = &s.sample.projections;
    let geom = proj.geometry();
    let base = model.predict_field(proj, &pts).unwrap();
    let mut identical = true;
    for _ in 0..10 {
        let mut perm: Vec<usize> = (0..geom.n_views()).collect();
        perm.shuffle(&mut rng);
        let angles = perm.iter().map(|&i| geom.angles()[i]).collect();
        let data = perm.iter().flat_map(|&i| proj.view(i).to_vec()).collect();
        let g = ScanGeometry::new(angles, geom.dso(), geom.dsd(), geom.detector()).unwrap();
        let out = model.predict_field(&ProjectionSet::new(g, data).unwrap(), &pts).unwrap();
        identical &= base.values().iter().zip(out.values()).all(|(a, b)| a.to_bits() == b.to_bits());
    }
    let varied = base.values().iter().any(|&v| v != base.values()[0]);
    let el = t.elapsed();
    verdict(
        identical && varied && within(el, 5.0),
        format!("100 points x 10 permutations bit-identical: {identical}; {el:.2?}"),
    )
}

// A7

fn robustness(model: &Model<f32>, s: &Setup) -> Verdict {
    let t = Instant::now();
    let spec = SweepSpec { offsets_deg: vec![0.0, 10.0, 20.0], angle_noise_deg: vec![], dso_noise_mm: vec![], seed: 17 };
    let rows = match run_sweep(model, &s.volume, &s.geometry, &spec) {
        Ok(rows) => rows,
        Err(e) => return verdict(false, format!("sweep failed: {e}")),
    };
    let csv = rows_csv(&rows);
    let labels: Vec<&str> = rows.iter().map(|r| r.label.as_str()).collect();

    // Independent re-simulation with the rotated scan handed to the model.
    let mut matched = true;
    for row in &rows[1..] {
        let pert = AnglePerturbation { offset: row.offset_deg.to_radians(), noise_bound: 0.0, dso_noise_bound: 0.0, seed: 0 };
        let g = s.geometry.perturb(&pert).unwrap();
        let recon = model.reconstruct(&forward_project(&s.volume, &g), SIZE).unwrap().clamp_unit();
        let recon = Volume::new(*s.volume.grid(), recon.into_data()).unwrap();
        matched &= psnr(&recon, &s.volume).unwrap() == row.psnr_db && ssim(&recon, &s.volume).unwrap() == row.ssim;
    }
    let two_decimals = csv.lines().skip(1).all(|l| {
        let f: Vec<&str> = l.split(',').collect();
        f[4].split('.').nth(1).map(str::len) == Some(2) && f[5].split('.').nth(1).map(str::len) == Some(2)
    });
    let el = t.elapsed();
    let summary: Vec<String> = rows.iter().map(|r| format!("{} {:.2} dB ({:+.2})", r.label, r.psnr_db, r.delta_psnr_db)).collect();
    verdict(
        labels == ["0°", "+10°", "+20°"] && matched && two_decimals && rows.iter().all(|r| r.psnr_db.is_finite()),
        format!("{}; matched re-simulation: {matched}; {el:.2?}", summary.join(", ")),
    )
}

// A8

fn brute_psnr(x: &Volume, y: &Volume) -> f64 {
    let mut sum = 0.0;
    for (a, b) in x.data().iter().zip(y.data()) {
        sum += (a - b) * (a - b);
    }
    10.0 * (1.0 / (sum / x.data().len() as f64)).log10()
}

fn brute_ssim(x: &Volume, y: &Volume) -> f64 {
    let [nx, ny, nz] = x.dims();
    let k = 7;
    let m = (k * k * k) as f64;
    let (c1, c2) = (1e-4, 9e-4);
    let (mut total, mut count) = (0.0, 0.0);
    for z0 in 0..=nz - k {
        for y0 in 0..=ny - k {
            for x0 in 0..=nx - k {
                let mut a = Vec::new();
                let mut b = Vec::new();
                for z in z0..z0 + k {
                    for yy in y0..y0 + k {
                        for xx in x0..x0 + k {
                            a.push(x.get(xx, yy, z));
                            b.push(y.get(xx, yy, z));
                        }
                    }
                }
                let ma = a.iter().sum::<f64>() / m;
                let mb = b.iter().sum::<f64>() / m;
                let va = a.iter().map(|v| (v - ma).powi(2)).sum::<f64>() / (m - 1.0);
                let vb = b.iter().map(|v| (v - mb).powi(2)).sum::<f64>() / (m - 1.0);
                let cab = a.iter().zip(&b).map(|(p, q)| (p - ma) * (q - mb)).sum::<f64>() / (m - 1.0);
                total += (2.0 * ma * mb + c1) * (2.0 * cab + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                count += 1.0;
            }
        }
    }
    total / count
}

fn metrics() -> Verdict {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let grid = VolumeGrid::cube(16, 1.0).unwrap();
    let (mut dp, mut ds) = (0.0f64, 0.0f64);
    for _ in 0..20 {
        let x: Vec<f64> = (0..grid.len()).map(|_| rng.gen_range(0.0..1.0)).collect();
        let y: Vec<f64> = x.iter().map(|v| (v + rng.gen_range(-0.3..0.3)).clamp(0.0, 1.0)).collect();
        let (x, y) = (Volume::new(grid, x).unwrap(), Volume::new(grid, y).unwrap());
        dp = dp.max((psnr(&x, &y).unwrap() - brute_psnr(&x, &y)).abs());
        ds = ds.max((ssim(&x, &y).unwrap() - brute_ssim(&x, &y)).abs());
    }
    let x = make_phantom(PhantomKind::SheppLogan3d, [16; 3], [1.0; 3], 0).unwrap();
    let offset = psnr(&x, &x.map(|v| v + 0.1)).unwrap();
    let identity = ssim(&x, &x).unwrap();
    let el = t.elapsed();
    verdict(
        dp < 1e-9 && ds < 1e-6 && (offset - 20.0).abs() < 1e-12 && identity == 1.0,
        format!("max |dPSNR| {dp:.1e} dB, max |dSSIM| {ds:.1e} over 20 pairs; offset case {offset:.12} dB; SSIM(x,x) = {identity}; {el:.2?}"),
    )
}

// A9

fn brute_interp<const K: usize>(field: &[f64], dims: [usize; K], coord: [f64; K], channels: usize) -> Vec<f64> {
    let plane: usize = dims.iter().product();
    let mut out = vec![0.0; channels];
    for corner in 0..(1usize << K) {
        let idx: Vec<i64> = (0..K).map(|a| coord[a].floor() as i64 + ((corner >> a) & 1) as i64).collect();
        if idx.iter().zip(&dims).any(|(&i, &d)| i < 0 || i >= d as i64) {
            continue;
        }
        let w: f64 = (0..K).map(|a| 1.0 - (coord[a] - idx[a] as f64).abs()).product();
        let mut flat = 0;
        for a in (0..K).rev() {
            flat = flat * dims[a] + idx[a] as usize;
        }
        for (ch, o) in out.iter_mut().enumerate() {
            *o += w * field[ch * plane + flat];
        }
    }
    out
}

fn brute_backprojection(maps: &FeatureMaps, spec: &FeatureVolumeSpec, geom: &ScanGeometry) -> Vec<f64> {
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
                let plane = &maps.views[view][ch * h * w..(ch + 1) * h * w];
                best = best.max(brute_interp::<2>(plane, [w, h], [x, y], 1)[0]);
            }
            out[ch * cells + j] = best;
        }
    }
    out
}

fn oracles() -> Verdict {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst_interp = 0.0f64;
    for _ in 0..300 {
        let c = rng.gen_range(1..4);
        let d2 = [rng.gen_range(1..7), rng.gen_range(1..7)];
        let f: Vec<f64> = (0..c * d2[0] * d2[1]).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let p = d2.map(|d| rng.gen_range(-1.5..d as f64 + 0.5));
        let mut got = vec![0.0; c];
        interp::<2>(&f, d2, p, &mut got);
        for (a, b) in got.iter().zip(brute_interp(&f, d2, p, c)) {
            worst_interp = worst_interp.max((a - b).abs());
        }
        let d3 = [rng.gen_range(1..6), rng.gen_range(1..6), rng.gen_range(1..6)];
        let f: Vec<f64> = (0..c * d3.iter().product::<usize>()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let p = d3.map(|d| rng.gen_range(-1.5..d as f64 + 0.5));
        let mut got = vec![0.0; c];
        interp::<3>(&f, d3, p, &mut got);
        for (a, b) in got.iter().zip(brute_interp(&f, d3, p, c)) {
            worst_interp = worst_interp.max((a - b).abs());
        }
    }
    let mut worst_bp = 0.0f64;
    for trial in 0..10 {
        let n = rng.gen_range(1..6);
        let extent = rng.gen_range(8.0..40.0);
        let dso = extent * rng.gen_range(2.0..5.0);
        let mut det = covering_detector(extent, dso, 1.5 * dso, rng.gen_range(8..24));
        if trial % 3 == 0 {
            det.du *= 0.5;
            det.dv *= 0.5;
        }
        let geom = cbct_core::geometry::make_uniform_geometry(n, dso, 1.5 * dso, det).unwrap();
        let (c, h, w) = (rng.gen_range(1..4), rng.gen_range(2..7), rng.gen_range(2..7));
        let views = (0..n).map(|_| (0..c * h * w).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let maps = FeatureMaps::new(c, h, w, views).unwrap();
        let spec = FeatureVolumeSpec::new(rng.gen_range(2..6), extent).unwrap();
        let got = backproject_features(&maps, &spec, &geom).unwrap();
        for (a, b) in got.data.iter().zip(brute_backprojection(&maps, &spec, &geom)) {
            worst_bp = worst_bp.max((a - b).abs());
        }
    }
    let el = t.elapsed();
    verdict(
        worst_interp < 1e-12 && worst_bp < 1e-12,
        format!("interp max error {worst_interp:.1e} (600 queries); backproject_features max error {worst_bp:.1e} (10 instances); {el:.2?}"),
    )
}

fn main() {
    let strict = std::env::args().any(|a| a == "--strict");
    let mut failed = Vec::new();
    let mut report = |id: &str, v: Verdict| {
        println!("{id} {} {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
        if !v.pass {
            failed.push(id.to_string());
        }
    };
    report("A1", adjoint());
    report("A2", gradients());
    report("A3", view_trend());
    let s = setup();
    let (v4, model) = overfit(&s);
    report("A4", v4);
    report("A5", ablation(&s));
    report("A6", permutation(&model, &s));
    report("A7", robustness(&model, &s));
    report("A8", metrics());
    report("A9", oracles());
    if failed.is_empty() {
        println!("acceptance: all 9 criteria pass");
    } else {
        println!("acceptance: failing {}", failed.join(", "));
        if strict {
            std::process::exit(1);
        }
    }
}
