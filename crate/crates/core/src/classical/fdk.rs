//! Feldkamp-Davis-Kress reconstruction for the circular orbit.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

#[cfg(not(feature = "std"))]
use num_traits::Float;

use super::fft::fft;
use crate::projector::ProjectionSet;
use crate::volume::{interp, Volume, VolumeGrid};
use crate::{par, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RampFilter {
    #[default]
    RamLak,
    /// Ram-Lak apodised by a Hann window reaching zero at Nyquist.
    Hann,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FdkConfig {
    pub filter: RampFilter,
    pub grid: VolumeGrid,
}

/// Frequency response of the band-limited ramp for `len` taps at sample
/// pitch `tau`, including the `tau` quadrature factor.
fn ramp_response(len: usize, tau: f64, filter: RampFilter) -> Vec<f64> {
    let mut re = vec![0.0; len];
    let mut im = vec![0.0; len];
    for (i, r) in re.iter_mut().enumerate() {
        let n = if i <= len / 2 { i as i64 } else { i as i64 - len as i64 };
        *r = if n == 0 {
            1.0 / (4.0 * tau * tau)
        } else if n % 2 != 0 {
            -1.0 / ((PI * n as f64 * tau).powi(2))
        } else {
            0.0
        };
    }
    fft(&mut re, &mut im, false);
    re.iter()
        .enumerate()
        .map(|(k, &h)| {
            let window = match filter {
                RampFilter::RamLak => 1.0,
                RampFilter::Hann => {
                    let f = k.min(len - k) as f64 / len as f64;
                    0.5 * (1.0 + (2.0 * PI * f).cos())
                }
            };
            h * window * tau
        })
        .collect()
}

/// Cosine-weighted, ramp-filtered projections (same layout as the input).
fn filtered_projections(proj: &ProjectionSet, filter: RampFilter) -> Vec<f64> {
    let geom = proj.geometry();
    let det = geom.detector();
    let (w, h) = (det.width, det.height);
    let dsd = geom.dsd();
    let u0 = (w as f64 - 1.0) / 2.0;
    let v0 = (h as f64 - 1.0) / 2.0;
    // Filtering happens on the virtual detector through the rotation axis.
    let tau = det.du * geom.dso() / dsd;
    let len = (2 * w).next_power_of_two();
    let response = ramp_response(len, tau, filter);

    let mut out = proj.data().to_vec();
    par::for_each_chunk(&mut out, w, |row_idx, row| {
        let v = row_idx % h;
        let vv = (v as f64 - v0) * det.dv;
        let mut re = vec![0.0; len];
        let mut im = vec![0.0; len];
        for (u, &p) in row.iter().enumerate() {
            let uu = (u as f64 - u0) * det.du;
            re[u] = p * dsd / (dsd * dsd + uu * uu + vv * vv).sqrt();
        }
        fft(&mut re, &mut im, false);
        for k in 0..len {
            re[k] *= response[k];
            im[k] *= response[k];
        }
        fft(&mut re, &mut im, true);
        for (u, r) in row.iter_mut().enumerate() {
            *r = re[u] / len as f64;
        }
    });
    out
}

/// Cosine weighting, row-wise ramp filtering (zero-padded to the next power
/// of two >= 2W) and distance-weighted voxel-driven back-projection with
/// angular step `pi / N`.
pub fn fdk_reconstruct(proj: &ProjectionSet, cfg: &FdkConfig) -> Result<Volume> {
    let geom = proj.geometry();
    let det = geom.detector();
    let filtered = filtered_projections(proj, cfg.filter);
    let frames = geom.frames();
    let grid = cfg.grid;
    let dso = geom.dso();
    let dbeta = PI / geom.n_views() as f64;
    let plane = det.pixels();

    let mut vol = Volume::zeros(grid);
    let slice = grid.dims[0] * grid.dims[1];
    par::for_each_chunk(vol.data_mut(), slice, |z, out| {
        let mut val = [0.0];
        for y in 0..grid.dims[1] {
            for x in 0..grid.dims[0] {
                let p = grid.voxel_center(x, y, z);
                let mut acc = 0.0;
                for (i, frame) in frames.iter().enumerate() {
                    let Some(d) = frame.project(p) else { continue };
                    interp::<2>(&filtered[i * plane..(i + 1) * plane], [det.width, det.height], [d.u, d.v], &mut val);
                    let ratio = dso / frame.depth(p);
                    acc += ratio * ratio * val[0];
                }
                out[y * grid.dims[0] + x] = acc * dbeta;
            }
        }
    });
    Ok(vol)
}
