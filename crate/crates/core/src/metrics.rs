//! PSNR and volumetric SSIM with a unit data range.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

#[cfg(not(feature = "std"))]
use num_traits::Float;

use crate::volume::Volume;
use crate::{Error, Result};

pub const DATA_RANGE: f64 = 1.0;
pub const SSIM_WINDOW: usize = 7;
const K1: f64 = 0.01;
const K2: f64 = 0.03;

fn same_dims(x: &Volume, y: &Volume) -> Result<()> {
    if x.dims() != y.dims() {
        return Err(Error::shape("metric", format!("{:?} vs {:?}", x.dims(), y.dims())));
    }
    Ok(())
}

pub fn mse(x: &Volume, y: &Volume) -> Result<f64> {
    same_dims(x, y)?;
    let n = x.data().len() as f64;
    Ok(x.data().iter().zip(y.data()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n)
}

/// `10 log10(1 / MSE)`; identical inputs give `f64::INFINITY`.
pub fn psnr(x: &Volume, y: &Volume) -> Result<f64> {
    let m = mse(x, y)?;
    Ok(psnr_from_mse(m))
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (DATA_RANGE * DATA_RANGE / mse).log10()
    }
}

/// Valid-mode box sum of width `SSIM_WINDOW` along one axis.
fn box_sum_axis(src: &[f64], dims: [usize; 3], axis: usize) -> (Vec<f64>, [usize; 3]) {
    let mut out_dims = dims;
    out_dims[axis] = dims[axis] + 1 - SSIM_WINDOW;
    let stride = [1, dims[0], dims[0] * dims[1]];
    let ostride = [1, out_dims[0], out_dims[0] * out_dims[1]];
    let mut out = vec![0.0; out_dims.iter().product()];
    for z in 0..out_dims[2] {
        for y in 0..out_dims[1] {
            for x in 0..out_dims[0] {
                let base = x * stride[0] + y * stride[1] + z * stride[2];
                let s: f64 = (0..SSIM_WINDOW).map(|k| src[base + k * stride[axis]]).sum();
                out[x * ostride[0] + y * ostride[1] + z * ostride[2]] = s;
            }
        }
    }
    (out, out_dims)
}

fn window_means(src: &[f64], dims: [usize; 3]) -> Vec<f64> {
    let (a, d) = box_sum_axis(src, dims, 0);
    let (b, d) = box_sum_axis(&a, d, 1);
    let (c, _) = box_sum_axis(&b, d, 2);
    let n = (SSIM_WINDOW * SSIM_WINDOW * SSIM_WINDOW) as f64;
    c.into_iter().map(|v| v / n).collect()
}

/// Mean SSIM over all fully contained 7x7x7 uniform windows, with sample
/// (unbiased) window covariances.
pub fn ssim(x: &Volume, y: &Volume) -> Result<f64> {
    same_dims(x, y)?;
    let dims = x.dims();
    if dims.iter().any(|&d| d < SSIM_WINDOW) {
        return Err(Error::invalid("ssim", format!("dims {dims:?} smaller than the {SSIM_WINDOW}^3 window")));
    }
    let (xd, yd) = (x.data(), y.data());
    let xx: Vec<f64> = xd.iter().map(|a| a * a).collect();
    let yy: Vec<f64> = yd.iter().map(|a| a * a).collect();
    let xy: Vec<f64> = xd.iter().zip(yd).map(|(a, b)| a * b).collect();
    let mx = window_means(xd, dims);
    let my = window_means(yd, dims);
    let mxx = window_means(&xx, dims);
    let myy = window_means(&yy, dims);
    let mxy = window_means(&xy, dims);
    let n = (SSIM_WINDOW * SSIM_WINDOW * SSIM_WINDOW) as f64;
    let cov_norm = n / (n - 1.0);
    let c1 = (K1 * DATA_RANGE).powi(2);
    let c2 = (K2 * DATA_RANGE).powi(2);
    let mut total = 0.0;
    for i in 0..mx.len() {
        let vx = cov_norm * (mxx[i] - mx[i] * mx[i]);
        let vy = cov_norm * (myy[i] - my[i] * my[i]);
        let cxy = cov_norm * (mxy[i] - mx[i] * my[i]);
        total += ((2.0 * mx[i] * my[i] + c1) * (2.0 * cxy + c2))
            / ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
    }
    Ok(total / mx.len() as f64)
}

/// Per-case metrics with summary statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub cases: Vec<(f64, f64)>,
    pub psnr_mean: f64,
    pub psnr_std: f64,
    pub ssim_mean: f64,
    pub ssim_std: f64,
}

impl MetricReport {
    pub fn from_cases(cases: Vec<(f64, f64)>) -> Self {
        let stats = |f: fn(&(f64, f64)) -> f64| {
            let n = cases.len().max(1) as f64;
            let mean = cases.iter().map(f).sum::<f64>() / n;
            let var = cases.iter().map(|c| (f(c) - mean).powi(2)).sum::<f64>() / n;
            (mean, var.sqrt())
        };
        let (psnr_mean, psnr_std) = stats(|c| c.0);
        let (ssim_mean, ssim_std) = stats(|c| c.1);
        MetricReport { cases, psnr_mean, psnr_std, ssim_mean, ssim_std }
    }

    pub fn evaluate(pairs: &[(&Volume, &Volume)]) -> Result<Self> {
        let cases = pairs.iter().map(|(a, b)| Ok((psnr(a, b)?, ssim(a, b)?))).collect::<Result<Vec<_>>>()?;
        Ok(MetricReport::from_cases(cases))
    }
}
