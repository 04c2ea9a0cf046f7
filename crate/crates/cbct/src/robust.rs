//! Robustness sweep: global angle offsets with matched geometry, and
//! unobserved per-view angle noise or source-distance noise.

use cbct_core::geometry::{covering_detector, make_uniform_geometry};
use cbct_core::metrics::{psnr, ssim};
use cbct_core::model::Model;
use cbct_core::projector::forward_project;
use cbct_core::{AnglePerturbation, ScanGeometry, Volume};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// Nominal scan for a model and a cubic region of side `extent_mm`: uniform
/// angles over a half turn, source at twice the extent, detector at 1.5x
/// the source distance, sized to cover the region.
pub fn default_geometry(n_views: usize, extent_mm: f64, pixels: usize) -> CliResult<ScanGeometry> {
    let dso = 2.0 * extent_mm;
    let dsd = ScanGeometry::default_dsd(dso);
    Ok(make_uniform_geometry(n_views, dso, dsd, covering_detector(extent_mm, dso, dsd, pixels))?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub offsets_deg: Vec<f64>,
    pub angle_noise_deg: Vec<f64>,
    pub dso_noise_mm: Vec<f64>,
    pub seed: u64,
}

impl Default for SweepSpec {
    fn default() -> Self {
        SweepSpec {
            offsets_deg: vec![0.0, 10.0, 20.0],
            angle_noise_deg: vec![0.5, 1.0],
            dso_noise_mm: vec![2.0, 3.0],
            seed: cbct_core::DEFAULT_SEED,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustRow {
    pub label: String,
    pub offset_deg: f64,
    pub angle_noise_deg: f64,
    pub dso_noise_mm: f64,
    pub psnr_db: f64,
    pub ssim: f64,
    /// Differences from the unperturbed row.
    pub delta_psnr_db: f64,
    pub delta_ssim: f64,
}

fn fmt_num(v: f64) -> String {
    // 10 -> "10", 0.5 -> "0.5"
    let s = format!("{v:.3}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

pub fn row_label(offset_deg: f64, angle_noise_deg: f64, dso_noise_mm: f64) -> String {
    if angle_noise_deg > 0.0 {
        format!("±{}°", fmt_num(angle_noise_deg))
    } else if dso_noise_mm > 0.0 {
        format!("±{}mm", fmt_num(dso_noise_mm))
    } else if offset_deg == 0.0 {
        "0°".to_string()
    } else {
        format!("{}{}°", if offset_deg > 0.0 { "+" } else { "" }, fmt_num(offset_deg))
    }
}

/// Model reconstruction of `reference` scanned with `scan` while the
/// model assumes `assumed`, sampled on the reference grid and clamped to
/// the unit data range before scoring.
fn score(model: &Model<f32>, reference: &Volume, scan: &ScanGeometry, assumed: &ScanGeometry) -> CliResult<(f64, f64)> {
    let proj = forward_project(reference, scan).with_geometry(assumed.clone())?;
    let recon = model.reconstruct(&proj, reference.dims()[0])?.clamp_unit();
    let recon = Volume::new(*reference.grid(), recon.into_data())?;
    Ok((psnr(&recon, reference)?, ssim(&recon, reference)?))
}

pub fn run_sweep(model: &Model<f32>, reference: &Volume, nominal: &ScanGeometry, spec: &SweepSpec) -> CliResult<Vec<RobustRow>> {
    let dims = reference.dims();
    if dims[0] != dims[1] || dims[1] != dims[2] {
        return Err(CliError::invalid(format!("robust needs a cubic reference volume, got {dims:?}")));
    }
    let extent = reference.grid().extent()[0];
    if (extent - model.config().extent_mm).abs() > 1e-6 * extent {
        return Err(CliError::invalid(format!(
            "reference spans {extent} mm, the model was trained on {} mm",
            model.config().extent_mm
        )));
    }
    let mut cases: Vec<(f64, f64, f64)> = Vec::new();
    if !spec.offsets_deg.contains(&0.0) {
        cases.push((0.0, 0.0, 0.0));
    }
    cases.extend(spec.offsets_deg.iter().map(|&o| (o, 0.0, 0.0)));
    cases.extend(spec.angle_noise_deg.iter().map(|&e| (0.0, e, 0.0)));
    cases.extend(spec.dso_noise_mm.iter().map(|&b| (0.0, 0.0, b)));

    let mut rows: Vec<RobustRow> = Vec::with_capacity(cases.len());
    for (offset, noise, dso_noise) in cases {
        let pert = AnglePerturbation {
            offset: offset.to_radians(),
            noise_bound: noise.to_radians(),
            dso_noise_bound: dso_noise,
            seed: spec.seed,
        };
        let scan = nominal.perturb(&pert)?;
        // A global offset is a known change of protocol; noise is not
        // observed, so the model keeps the nominal geometry.
        let assumed = if noise == 0.0 && dso_noise == 0.0 { scan.clone() } else { nominal.clone() };
        let (p, s) = score(model, reference, &scan, &assumed)?;
        rows.push(RobustRow {
            label: row_label(offset, noise, dso_noise),
            offset_deg: offset,
            angle_noise_deg: noise,
            dso_noise_mm: dso_noise,
            psnr_db: p,
            ssim: s,
            delta_psnr_db: 0.0,
            delta_ssim: 0.0,
        });
    }
    let (p0, s0) = (rows[0].psnr_db, rows[0].ssim);
    for row in &mut rows {
        row.delta_psnr_db = row.psnr_db - p0;
        row.delta_ssim = row.ssim - s0;
    }
    Ok(rows)
}

pub fn rows_csv(rows: &[RobustRow]) -> String {
    let mut out = String::from("label,offset_deg,angle_noise_deg,dso_noise_mm,psnr_db,delta_psnr_db,ssim,delta_ssim\n");
    for r in rows {
        out += &format!(
            "{},{},{},{},{:.2},{:+.2},{:.4},{:+.4}\n",
            r.label, r.offset_deg, r.angle_noise_deg, r.dso_noise_mm, r.psnr_db, r.delta_psnr_db, r.ssim, r.delta_ssim
        );
    }
    out
}

pub fn rows_pretty(rows: &[RobustRow]) -> String {
    let mut out = format!("{:<8} {:>10} {:>9} {:>8} {:>9}\n", "row", "PSNR (dB)", "dPSNR", "SSIM", "dSSIM");
    for r in rows {
        out += &format!("{:<8} {:>10.2} {:>+9.2} {:>8.4} {:>+9.4}\n", r.label, r.psnr_db, r.delta_psnr_db, r.ssim, r.delta_ssim);
    }
    out
}
