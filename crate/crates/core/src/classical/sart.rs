//! Simultaneous algebraic reconstruction with view-by-view updates.

use alloc::vec;
use alloc::vec::Vec;

use super::fdk::{fdk_reconstruct, FdkConfig, RampFilter};
use crate::projector::{backproject_view, forward_project_view, ProjectionSet};
use crate::volume::{Volume, VolumeGrid};
use crate::{Error, Result};

/// Floor for row and column sums.
const SUM_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SartInit {
    Zero,
    Fdk,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SartConfig {
    pub iterations: usize,
    pub relaxation: f64,
    pub init: SartInit,
    pub nonneg_clamp: bool,
    pub grid: VolumeGrid,
}

impl SartConfig {
    pub fn new(grid: VolumeGrid) -> Self {
        SartConfig { iterations: 30, relaxation: 0.5, init: SartInit::Zero, nonneg_clamp: true, grid }
    }

    fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::invalid("sart config", "iterations must be >= 1"));
        }
        if !(self.relaxation > 0.0 && self.relaxation < 2.0) {
            return Err(Error::invalid("sart config", "relaxation must lie in (0, 2)"));
        }
        Ok(())
    }
}

/// `mu <- mu + lambda * A_i^T((b_i - A_i mu) / rowsum_i) / colsum_i`, cycling
/// through the views in order for every sweep.
pub fn sart_reconstruct(proj: &ProjectionSet, cfg: &SartConfig) -> Result<Volume> {
    cfg.validate()?;
    let geom = proj.geometry();
    let n_views = geom.n_views();
    let pixels = geom.detector().pixels();
    let grid = cfg.grid;

    let mut mu = match cfg.init {
        SartInit::Zero => Volume::zeros(grid),
        SartInit::Fdk => fdk_reconstruct(proj, &FdkConfig { filter: RampFilter::Hann, grid })?,
    };

    let ones_vol = Volume::filled(grid, 1.0);
    let ones_proj = vec![1.0; pixels];
    let mut row_sums: Vec<Vec<f64>> = Vec::with_capacity(n_views);
    let mut col_sums: Vec<Vec<f64>> = Vec::with_capacity(n_views);
    for i in 0..n_views {
        let mut rs = vec![0.0; pixels];
        forward_project_view(&ones_vol, geom, i, &mut rs);
        row_sums.push(rs);
        let mut cs = Volume::zeros(grid);
        backproject_view(&ones_proj, geom, i, &mut cs);
        col_sums.push(cs.into_data());
    }

    let mut residual = vec![0.0; pixels];
    let mut update = Volume::zeros(grid);
    for _ in 0..cfg.iterations {
        for i in 0..n_views {
            forward_project_view(&mu, geom, i, &mut residual);
            let b = proj.view(i);
            for ((r, &bi), &rs) in residual.iter_mut().zip(b).zip(&row_sums[i]) {
                *r = (bi - *r) / rs.max(SUM_FLOOR);
            }
            update.data_mut().iter_mut().for_each(|v| *v = 0.0);
            backproject_view(&residual, geom, i, &mut update);
            for ((m, &u), &cs) in mu.data_mut().iter_mut().zip(update.data()).zip(&col_sums[i]) {
                *m += cfg.relaxation * u / cs.max(SUM_FLOOR);
            }
        }
        if cfg.nonneg_clamp {
            mu.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
        }
    }
    Ok(mu)
}

/// `||b - A mu||_2` over all views.
pub fn projection_residual(mu: &Volume, proj: &ProjectionSet) -> f64 {
    let sim = crate::projector::forward_project(mu, proj.geometry());
    let ss: f64 = sim.data().iter().zip(proj.data()).map(|(a, b)| (a - b) * (a - b)).sum();
    num_traits::Float::sqrt(ss)
}
