use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// How per-view tokens are fused into one prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Aggregation {
    /// Concatenate the view tokens and decode with an MLP (order-sensitive).
    Mlp,
    /// Channelwise max over views, then an MLP.
    MaxpoolMlp,
    /// Stacked self-attention over views and cross-attention from the
    /// reference token.
    Svc,
}

/// Which 2D map becomes `F1`, the finest back-projected scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum F1Source {
    /// The U-Net bottleneck (1/16 resolution).
    Encoder,
    /// The full-resolution decoder output, average-pooled to 1/16.
    Decoder,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Projections per scan.
    pub n_views: usize,
    /// Side of the (square) input projections in pixels; a multiple of 16.
    pub image_size: usize,
    /// Output channels `C` of the 2D decoder and of every feature volume.
    pub feature_channels: usize,
    /// U-Net channel widths at 1, 1/2, 1/4, 1/8 and 1/16 resolution.
    pub unet_widths: [usize; 5],
    pub n_scales: usize,
    /// Finest feature-volume resolution `r1`; coarser scales use
    /// `ceil(r / 2)`.
    pub base_resolution: usize,
    /// Number of stacked attention modules `M`.
    pub n_att_modules: usize,
    pub n_heads: usize,
    /// Width of the query/key/value projections, split across heads.
    pub attention_dim: usize,
    pub ffn_dim: usize,
    pub aggregation: Aggregation,
    pub use_ms3dv: bool,
    pub f1_source: F1Source,
    /// Side of the cubic reconstruction region centred on the origin, mm.
    pub extent_mm: f64,
    pub toy_scale: bool,
}

impl ModelConfig {
    /// Full-size network: 256^2 projections, `C = 128`, three scales from
    /// 16^3, three attention modules with eight heads.
    pub fn full(n_views: usize, extent_mm: f64) -> Self {
        ModelConfig {
            n_views,
            image_size: 256,
            feature_channels: 128,
            unet_widths: [64, 128, 256, 512, 512],
            n_scales: 3,
            base_resolution: 16,
            n_att_modules: 3,
            n_heads: 8,
            attention_dim: 128,
            ffn_dim: 256,
            aggregation: Aggregation::Svc,
            use_ms3dv: true,
            f1_source: F1Source::Encoder,
            extent_mm,
            toy_scale: false,
        }
    }

    /// Desk-scale network: 64^2 projections, `C = 16`, narrow U-Net.
    pub fn toy(n_views: usize, extent_mm: f64) -> Self {
        ModelConfig {
            n_views,
            image_size: 64,
            feature_channels: 16,
            unet_widths: [8, 16, 16, 32, 32],
            n_scales: 3,
            base_resolution: 8,
            n_att_modules: 2,
            n_heads: 2,
            attention_dim: 16,
            ffn_dim: 32,
            aggregation: Aggregation::Svc,
            use_ms3dv: true,
            f1_source: F1Source::Encoder,
            extent_mm,
            toy_scale: true,
        }
    }

    /// `r_s` for `s = 1..=n_scales`.
    pub fn resolutions(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.n_scales);
        let mut r = self.base_resolution;
        for _ in 0..self.n_scales {
            out.push(r);
            r = r.div_ceil(2);
        }
        out
    }

    /// Side of the `F1` maps.
    pub fn f1_size(&self) -> usize {
        self.image_size / 16
    }

    /// Side of the 2D maps at each scale.
    pub fn scale_map_sizes(&self) -> Vec<usize> {
        (0..self.n_scales).map(|s| self.f1_size() >> s).collect()
    }

    /// Channels of the 2D maps that get back-projected.
    pub fn f1_channels(&self) -> usize {
        match self.f1_source {
            F1Source::Encoder => self.unet_widths[4],
            F1Source::Decoder => self.feature_channels,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |reason: alloc::string::String| Err(Error::invalid("model config", reason));
        if self.n_views == 0 {
            return bad("n_views must be >= 1".into());
        }
        if self.image_size < 16 || !self.image_size.is_multiple_of(16) {
            return bad(format!("image_size must be a positive multiple of 16, got {}", self.image_size));
        }
        if self.feature_channels == 0 || self.unet_widths.contains(&0) || self.ffn_dim == 0 {
            return bad("channel widths must be >= 1".into());
        }
        if self.n_scales == 0 {
            return bad("n_scales must be >= 1".into());
        }
        if self.base_resolution == 0 {
            return bad("base_resolution must be >= 1".into());
        }
        if self.f1_size() >> (self.n_scales - 1) == 0 {
            return bad(format!("{} scales halve the {}^2 F1 maps below one pixel", self.n_scales, self.f1_size()));
        }
        if self.n_heads == 0 || !self.attention_dim.is_multiple_of(self.n_heads) {
            return bad(format!("attention_dim {} not divisible by {} heads", self.attention_dim, self.n_heads));
        }
        if !self.feature_channels.is_multiple_of(self.n_heads) {
            return bad(format!("C = {} not divisible by {} heads", self.feature_channels, self.n_heads));
        }
        if self.aggregation == Aggregation::Svc && self.n_att_modules == 0 {
            return bad("attention aggregation needs at least one module".into());
        }
        if !(self.extent_mm > 0.0 && self.extent_mm.is_finite()) {
            return bad(format!("extent_mm must be positive, got {}", self.extent_mm));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_resolutions_halve() {
        let cfg = ModelConfig::full(6, 400.0);
        cfg.validate().unwrap();
        assert_eq!(cfg.resolutions(), [16, 8, 4]);
        assert_eq!(cfg.f1_size(), 16);
    }

    #[test]
    fn toy_scale_maps() {
        let cfg = ModelConfig::toy(6, 32.0);
        cfg.validate().unwrap();
        assert_eq!(cfg.scale_map_sizes(), [4, 2, 1]);
    }

    #[test]
    fn ceiling_keeps_resolution_positive() {
        let mut cfg = ModelConfig::toy(6, 32.0);
        cfg.base_resolution = 3;
        assert_eq!(cfg.resolutions(), [3, 2, 1]);
        cfg.base_resolution = 12;
        assert_eq!(cfg.resolutions(), [12, 6, 3]);
    }

    #[test]
    fn rejects_bad_configs() {
        let mut cfg = ModelConfig::toy(6, 32.0);
        cfg.n_heads = 3;
        assert!(cfg.validate().is_err());
        let mut cfg = ModelConfig::toy(6, 32.0);
        cfg.n_scales = 4;
        assert!(cfg.validate().is_err());
        let mut cfg = ModelConfig::toy(6, 32.0);
        cfg.image_size = 40;
        assert!(cfg.validate().is_err());
    }
}
