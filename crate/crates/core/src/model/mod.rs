//! The feature-field reconstruction network.
//!
//! Per query point `p` the network combines two kinds of features:
//!
//! * view tokens: a shared 2D U-Net encodes each projection, and the decoder
//!   maps are sampled bilinearly where `p` projects on each detector;
//! * a scale token: the U-Net bottleneck is pooled into a pyramid, every
//!   level is back-projected (max over views) onto a coarse cubic grid and
//!   refined by small residual 3D convolution stacks; trilinear queries of
//!   all levels are fused by an MLP.
//!
//! Stacked attention modules then let the view tokens attend to each other
//! and the scale token attend to the views, and a linear head maps the
//! scale token to the attenuation at `p`. No positional encodings are used,
//! so the prediction does not depend on the order of the views.

use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::geometry::{ScanGeometry, Vec3};
use crate::projector::{feature_map_corners, FeatureVolumeSpec, ProjectionSet};
use crate::tensor::{AttentionShape, Bound, Init, ParamStore, Real, SamplePlan, Tape, Tensor, Var};
use crate::volume::{for_each_corner, PointBatch, Volume, VolumeGrid};
use crate::{Error, Result};

mod config;

pub use config::{Aggregation, F1Source, ModelConfig};

/// Points evaluated per graph chunk during inference.
pub const INFERENCE_CHUNK: usize = 2048;

/// A tape plus the parameter handles bound on it.
pub struct Graph<'p, T: Real> {
    pub tape: Tape<T>,
    pub bound: Bound,
    params: &'p ParamStore<T>,
}

impl<'p, T: Real> Graph<'p, T> {
    /// Parameters are tracked leaves, ready for `backward`.
    pub fn trainable(params: &'p ParamStore<T>) -> Self {
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        Graph { tape, bound, params }
    }

    /// Parameters are constants; nothing is traced.
    pub fn frozen(params: &'p ParamStore<T>) -> Self {
        let mut tape = Tape::new();
        let bound = params.bind_frozen(&mut tape);
        Graph { tape, bound, params }
    }

    pub fn param(&self, name: &str) -> Result<Var> {
        Ok(self.bound.var(self.params.id(name)?))
    }

    pub fn into_parts(self) -> (Tape<T>, Bound) {
        (self.tape, self.bound)
    }

    fn linear(&mut self, x: Var, name: &str) -> Result<Var> {
        let w = self.param(&format!("{name}.w"))?;
        let b = self.param(&format!("{name}.b"))?;
        let y = self.tape.matmul(x, w)?;
        self.tape.add_bias(y, b)
    }

    fn project(&mut self, x: Var, name: &str) -> Result<Var> {
        let w = self.param(&format!("{name}.w"))?;
        self.tape.matmul(x, w)
    }

    fn conv2d(&mut self, x: Var, name: &str, stride: usize, pad: usize) -> Result<Var> {
        let w = self.param(&format!("{name}.w"))?;
        let b = self.param(&format!("{name}.b"))?;
        self.tape.conv2d(x, w, Some(b), stride, pad)
    }

    fn conv3d(&mut self, x: Var, name: &str) -> Result<Var> {
        let w = self.param(&format!("{name}.w"))?;
        let b = self.param(&format!("{name}.b"))?;
        self.tape.conv3d(x, w, Some(b), 1, 1)
    }

    fn layer_norm(&mut self, x: Var, name: &str) -> Result<Var> {
        let g = self.param(&format!("{name}.g"))?;
        let b = self.param(&format!("{name}.b"))?;
        self.tape.layer_norm(x, g, b)
    }
}

/// Per-view 2D features.
#[derive(Debug, Clone)]
pub struct EncodedViews {
    /// `[N, C, W, W]`, for pixel-aligned queries.
    pub decoder_maps: Var,
    /// `F1 .. FS`, each `[N, C1, h_s, h_s]` with `h_{s+1} = h_s / 2`.
    pub scale_maps: Vec<Var>,
}

/// Multi-scale volumetric features.
#[derive(Debug, Clone)]
pub struct Ms3dv {
    pub specs: Vec<FeatureVolumeSpec>,
    /// Max-over-views back-projections, `[1, C1, r, r, r]` (z slowest).
    pub backprojected: Vec<Var>,
    /// After the residual 3D convolutions, `[1, C, r, r, r]`.
    pub volumes: Vec<Var>,
}

/// Features of a batch of `P` points.
#[derive(Debug, Clone)]
pub struct PointFeatures {
    pub points: usize,
    /// One `[P, C]` tensor per view.
    pub view_tokens: Vec<Var>,
    /// Fused voxel-aligned feature `[P, C]`, absent without volumetric
    /// features.
    pub scale_token: Option<Var>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model<T: Real> {
    config: ModelConfig,
    params: ParamStore<T>,
}

fn add_linear<T: Real>(ps: &mut ParamStore<T>, rng: &mut ChaCha8Rng, name: &str, fan_in: usize, out: usize) -> Result<()> {
    ps.add(&format!("{name}.w"), &[fan_in, out], Init::KaimingUniform { fan_in }, rng)?;
    ps.add(&format!("{name}.b"), &[out], Init::Zeros, rng)?;
    Ok(())
}

/// Final output layer, zero-initialised so every mode starts from a zero
/// prediction.
fn add_output<T: Real>(ps: &mut ParamStore<T>, rng: &mut ChaCha8Rng, name: &str, fan_in: usize) -> Result<()> {
    ps.add(&format!("{name}.w"), &[fan_in, 1], Init::Zeros, rng)?;
    ps.add(&format!("{name}.b"), &[1], Init::Zeros, rng)?;
    Ok(())
}

fn add_projection<T: Real>(ps: &mut ParamStore<T>, rng: &mut ChaCha8Rng, name: &str, fan_in: usize, out: usize) -> Result<()> {
    ps.add(&format!("{name}.w"), &[fan_in, out], Init::KaimingUniform { fan_in }, rng)?;
    Ok(())
}

fn add_conv<T: Real>(ps: &mut ParamStore<T>, rng: &mut ChaCha8Rng, name: &str, cin: usize, cout: usize, kernel: &[usize]) -> Result<()> {
    let fan_in = cin * kernel.iter().product::<usize>();
    let mut shape = vec![cout, cin];
    shape.extend_from_slice(kernel);
    ps.add(&format!("{name}.w"), &shape, Init::KaimingUniform { fan_in }, rng)?;
    ps.add(&format!("{name}.b"), &[cout], Init::Zeros, rng)?;
    Ok(())
}

fn add_layer_norm<T: Real>(ps: &mut ParamStore<T>, rng: &mut ChaCha8Rng, name: &str, n: usize) -> Result<()> {
    ps.add(&format!("{name}.g"), &[n], Init::Ones, rng)?;
    ps.add(&format!("{name}.b"), &[n], Init::Zeros, rng)?;
    Ok(())
}

fn register<T: Real>(cfg: &ModelConfig, seed: u64) -> Result<ParamStore<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rng = &mut rng;
    let mut ps = ParamStore::new();
    let ps_ = &mut ps;
    let w = cfg.unet_widths;
    let c = cfg.feature_channels;
    for k in 0..5 {
        let cin = if k == 0 { 1 } else { w[k - 1] };
        add_conv(ps_, rng, &format!("unet.enc{k}"), cin, w[k], &[3, 3])?;
    }
    for k in (0..4).rev() {
        add_conv(ps_, rng, &format!("unet.dec{k}"), w[k + 1] + w[k], w[k], &[3, 3])?;
    }
    add_conv(ps_, rng, "unet.out", w[0], c, &[1, 1])?;
    if cfg.use_ms3dv {
        for s in 0..cfg.n_scales {
            add_conv(ps_, rng, &format!("ms3dv.s{s}.conv1"), cfg.f1_channels(), c, &[3, 3, 3])?;
            add_conv(ps_, rng, &format!("ms3dv.s{s}.conv2"), c, c, &[3, 3, 3])?;
            add_conv(ps_, rng, &format!("ms3dv.s{s}.conv3"), c, c, &[3, 3, 3])?;
        }
        add_linear(ps_, rng, "fuse.l1", cfg.n_scales * c, c)?;
        add_linear(ps_, rng, "fuse.l2", c, c)?;
    }
    match cfg.aggregation {
        Aggregation::Svc => {
            if !cfg.use_ms3dv {
                ps_.add("reference", &[1, c], Init::KaimingUniform { fan_in: c }, rng)?;
            }
            let d = cfg.attention_dim;
            for m in 0..cfg.n_att_modules {
                for block in ["self", "cross"] {
                    let name = format!("att{m}.{block}");
                    for proj in ["q", "k", "v"] {
                        add_projection(ps_, rng, &format!("{name}.{proj}"), c, d)?;
                    }
                    add_linear(ps_, rng, &format!("{name}.o"), d, c)?;
                    add_layer_norm(ps_, rng, &format!("{name}.ln1"), c)?;
                    add_linear(ps_, rng, &format!("{name}.ffn1"), c, cfg.ffn_dim)?;
                    add_linear(ps_, rng, &format!("{name}.ffn2"), cfg.ffn_dim, c)?;
                    add_layer_norm(ps_, rng, &format!("{name}.ln2"), c)?;
                }
            }
            add_output(ps_, rng, "head", c)?;
        }
        Aggregation::Mlp | Aggregation::MaxpoolMlp => {
            let views = if cfg.aggregation == Aggregation::Mlp { cfg.n_views } else { 1 };
            let fan_in = views * c + if cfg.use_ms3dv { c } else { 0 };
            add_linear(ps_, rng, "mlp.l1", fan_in, c)?;
            add_linear(ps_, rng, "mlp.l2", c, c)?;
            add_output(ps_, rng, "mlp.l3", c)?;
        }
    }
    Ok(ps)
}

impl<T: Real> Model<T> {
    /// Fresh, seeded parameters.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let params = register(&config, seed)?;
        Ok(Model { config, params })
    }

    /// Wraps existing parameters after checking their names and shapes.
    pub fn from_params(config: ModelConfig, params: ParamStore<T>) -> Result<Self> {
        config.validate()?;
        let reference = register::<T>(&config, 0)?;
        if reference.len() != params.len() {
            return Err(Error::invalid(
                "parameters",
                format!("{} tensors, but the config needs {}", params.len(), reference.len()),
            ));
        }
        for (name, value, _) in reference.iter() {
            let got = params.get(name)?;
            if got.shape() != value.shape() {
                return Err(Error::shape(
                    "parameters",
                    format!("`{name}` is {:?}, expected {:?}", got.shape(), value.shape()),
                ));
            }
        }
        Ok(Model { config, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn into_params(self) -> ParamStore<T> {
        self.params
    }

    /// Same model in another precision.
    pub fn cast<U: Real>(&self) -> Model<U> {
        Model { config: self.config.clone(), params: self.params.cast() }
    }

    fn check_projections(&self, proj: &ProjectionSet) -> Result<()> {
        let det = proj.geometry().detector();
        let n = self.config.image_size;
        if det.width != n || det.height != n {
            return Err(Error::shape(
                "encode_views",
                format!("projections are {}x{}, model expects {n}x{n}", det.width, det.height),
            ));
        }
        if proj.geometry().n_views() != self.config.n_views {
            return Err(Error::shape(
                "encode_views",
                format!("{} views, model expects {}", proj.geometry().n_views(), self.config.n_views),
            ));
        }
        Ok(())
    }

    /// Runs the shared U-Net on every view.
    pub fn encode_views(&self, g: &mut Graph<T>, proj: &ProjectionSet) -> Result<EncodedViews> {
        self.check_projections(proj)?;
        let cfg = &self.config;
        let (n, size) = (cfg.n_views, cfg.image_size);
        // Line integrals are at most the box diagonal for unit attenuation.
        let norm = 1.0 / (cfg.extent_mm * num_traits::Float::sqrt(3f64));
        let input = Tensor::new(vec![n, 1, size, size], proj.data().iter().map(|&v| T::of(v * norm)).collect())?;
        let mut x = g.tape.constant(input);
        let mut skips = Vec::with_capacity(5);
        for k in 0..5 {
            let y = g.conv2d(x, &format!("unet.enc{k}"), if k == 0 { 1 } else { 2 }, 1)?;
            x = g.tape.relu(y);
            skips.push(x);
        }
        let bottleneck = x;
        let mut d = bottleneck;
        for k in (0..4).rev() {
            let s = g.tape.shape(skips[k]).to_vec();
            let up = g.tape.upsample_nearest(d, s[2], s[3])?;
            let cat = g.tape.concat(&[up, skips[k]], 1)?;
            let y = g.conv2d(cat, &format!("unet.dec{k}"), 1, 1)?;
            d = g.tape.relu(y);
        }
        let decoder_maps = g.conv2d(d, "unet.out", 1, 0)?;
        let mut f = match cfg.f1_source {
            F1Source::Encoder => bottleneck,
            F1Source::Decoder => {
                let mut f = decoder_maps;
                for _ in 0..4 {
                    f = g.tape.avg_pool2(f)?;
                }
                f
            }
        };
        let mut scale_maps = vec![f];
        for _ in 1..cfg.n_scales {
            f = g.tape.avg_pool2(f)?;
            scale_maps.push(f);
        }
        Ok(EncodedViews { decoder_maps, scale_maps })
    }

    /// Gather plan sampling view `view` of an `[N, C, h, h]` map stack at
    /// the projections of `points`.
    fn view_plan(&self, geom: &ScanGeometry, view: usize, channels: usize, h: usize, points: &[Vec3]) -> SamplePlan<T> {
        let n = geom.n_views();
        let plane = h * h;
        let mut plan = SamplePlan::new(points.len(), channels, plane, 4, n * channels * plane);
        let frame = geom.frame(view);
        let det = geom.detector();
        let offset = view * channels * plane;
        for (row, &p) in points.iter().enumerate() {
            for (k, (idx, w)) in feature_map_corners(&frame, &det, (h, h), p).into_iter().enumerate() {
                plan.set(row, k, offset + idx, w);
            }
        }
        plan
    }

    fn volume_plan(spec: &FeatureVolumeSpec, channels: usize, points: &[Vec3]) -> SamplePlan<T> {
        let r = spec.resolution;
        let cells = spec.cells();
        let mut plan = SamplePlan::new(points.len(), channels, cells, 8, channels * cells);
        for (row, &p) in points.iter().enumerate() {
            let mut k = 0;
            for_each_corner::<3>([r; 3], spec.world_to_index(p), |idx, w| {
                plan.set(row, k, idx, w);
                k += 1;
            });
        }
        plan
    }

    /// Back-projects every scale onto its grid and applies the residual 3D
    /// convolution stacks.
    pub fn build_ms3dv(&self, g: &mut Graph<T>, enc: &EncodedViews, geom: &ScanGeometry) -> Result<Ms3dv> {
        let cfg = &self.config;
        if enc.scale_maps.len() != cfg.n_scales {
            return Err(Error::shape("build_ms3dv", format!("{} scale maps for {} scales", enc.scale_maps.len(), cfg.n_scales)));
        }
        let mut out = Ms3dv { specs: Vec::new(), backprojected: Vec::new(), volumes: Vec::new() };
        for (s, &r) in cfg.resolutions().iter().enumerate() {
            let spec = FeatureVolumeSpec::new(r, cfg.extent_mm)?;
            let map = enc.scale_maps[s];
            let shape = g.tape.shape(map).to_vec();
            let (c1, h) = (shape[1], shape[2]);
            let centroids = spec.centroids();
            let mut per_view = Vec::with_capacity(geom.n_views());
            for view in 0..geom.n_views() {
                let plan = Arc::new(self.view_plan(geom, view, c1, h, &centroids));
                per_view.push(g.tape.sample(map, plan)?);
            }
            let max = g.tape.max_over(&per_view)?;
            let t = g.tape.transpose(max)?;
            let bp = g.tape.reshape(t, &[1, c1, r, r, r])?;
            let h0 = g.conv3d(bp, &format!("ms3dv.s{s}.conv1"))?;
            let a0 = g.tape.relu(h0);
            let h1 = g.conv3d(a0, &format!("ms3dv.s{s}.conv2"))?;
            let a1 = g.tape.relu(h1);
            let h2 = g.conv3d(a1, &format!("ms3dv.s{s}.conv3"))?;
            let vol = g.tape.add(h0, h2)?;
            out.specs.push(spec);
            out.backprojected.push(bp);
            out.volumes.push(vol);
        }
        Ok(out)
    }

    /// Pixel-aligned view tokens and the fused voxel-aligned scale token for
    /// a batch of points.
    pub fn query_points(
        &self,
        g: &mut Graph<T>,
        enc: &EncodedViews,
        ms: Option<&Ms3dv>,
        geom: &ScanGeometry,
        points: &[Vec3],
    ) -> Result<PointFeatures> {
        let cfg = &self.config;
        if let Some(p) = points.iter().find(|p| p.iter().any(|v| !v.is_finite())) {
            return Err(Error::invalid("query point", format!("{p:?} is not finite")));
        }
        let c = cfg.feature_channels;
        let mut view_tokens = Vec::with_capacity(geom.n_views());
        for view in 0..geom.n_views() {
            let plan = Arc::new(self.view_plan(geom, view, c, cfg.image_size, points));
            view_tokens.push(g.tape.sample(enc.decoder_maps, plan)?);
        }
        let scale_token = match ms {
            Some(ms) => {
                let mut per_scale = Vec::with_capacity(ms.volumes.len());
                for (spec, &vol) in ms.specs.iter().zip(&ms.volumes) {
                    let plan = Arc::new(Self::volume_plan(spec, c, points));
                    per_scale.push(g.tape.sample(vol, plan)?);
                }
                let cat = g.tape.concat(&per_scale, 1)?;
                let h = g.linear(cat, "fuse.l1")?;
                let h = g.tape.relu(h);
                Some(g.linear(h, "fuse.l2")?)
            }
            None => None,
        };
        Ok(PointFeatures { points: points.len(), view_tokens, scale_token })
    }

    fn self_attention(&self, g: &mut Graph<T>, x: Var, p: usize, n: usize, m: usize) -> Result<Var> {
        let name = format!("att{m}.self");
        let q = g.project(x, &format!("{name}.q"))?;
        let k = g.project(x, &format!("{name}.k"))?;
        let v = g.project(x, &format!("{name}.v"))?;
        let shape = AttentionShape { batch: p, lr: n, ls: n, heads: self.config.n_heads };
        let a = g.tape.attention(q, k, v, shape)?;
        self.residual_blocks(g, x, a, &name)
    }

    fn cross_attention(&self, g: &mut Graph<T>, s: Var, x: Var, p: usize, n: usize, m: usize) -> Result<Var> {
        let name = format!("att{m}.cross");
        let q = g.project(s, &format!("{name}.q"))?;
        let k = g.project(x, &format!("{name}.k"))?;
        let v = g.project(x, &format!("{name}.v"))?;
        let shape = AttentionShape { batch: p, lr: 1, ls: n, heads: self.config.n_heads };
        let a = g.tape.attention(q, k, v, shape)?;
        self.residual_blocks(g, s, a, &name)
    }

    /// `x <- LN(x + O a); x <- LN(x + FFN(x))`
    fn residual_blocks(&self, g: &mut Graph<T>, x: Var, a: Var, name: &str) -> Result<Var> {
        let o = g.linear(a, &format!("{name}.o"))?;
        let sum = g.tape.add(x, o)?;
        let x = g.layer_norm(sum, &format!("{name}.ln1"))?;
        let f = g.linear(x, &format!("{name}.ffn1"))?;
        let f = g.tape.relu(f);
        let f = g.linear(f, &format!("{name}.ffn2"))?;
        let sum = g.tape.add(x, f)?;
        g.layer_norm(sum, &format!("{name}.ln2"))
    }

    /// Stacked view self-attention and scale-to-view cross-attention, then
    /// the linear head; returns `[P, 1]`.
    pub fn svc_att(&self, g: &mut Graph<T>, feats: &PointFeatures) -> Result<Var> {
        let cfg = &self.config;
        let (p, n, c) = (feats.points, feats.view_tokens.len(), cfg.feature_channels);
        let cat = g.tape.concat(&feats.view_tokens, 1)?;
        let mut x = g.tape.reshape(cat, &[p * n, c])?;
        let mut s = match feats.scale_token {
            Some(t) => t,
            None => {
                let ones = g.tape.constant(Tensor::filled(&[p, 1], T::one()));
                let r = g.param("reference")?;
                g.tape.matmul(ones, r)?
            }
        };
        for m in 0..cfg.n_att_modules {
            x = self.self_attention(g, x, p, n, m)?;
            s = self.cross_attention(g, s, x, p, n, m)?;
        }
        g.linear(s, "head")
    }

    fn mlp_head(&self, g: &mut Graph<T>, feats: &PointFeatures) -> Result<Var> {
        let mut inputs = match self.config.aggregation {
            Aggregation::MaxpoolMlp => vec![g.tape.max_over(&feats.view_tokens)?],
            _ => feats.view_tokens.clone(),
        };
        inputs.extend(feats.scale_token);
        let x = g.tape.concat(&inputs, 1)?;
        let h = g.linear(x, "mlp.l1")?;
        let h = g.tape.relu(h);
        let h = g.linear(h, "mlp.l2")?;
        let h = g.tape.relu(h);
        g.linear(h, "mlp.l3")
    }

    /// Fuses point features into attenuation values `[P, 1]` with the
    /// configured aggregation.
    pub fn aggregate(&self, g: &mut Graph<T>, feats: &PointFeatures) -> Result<Var> {
        match self.config.aggregation {
            Aggregation::Svc => self.svc_att(g, feats),
            Aggregation::Mlp | Aggregation::MaxpoolMlp => self.mlp_head(g, feats),
        }
    }

    /// View encoding and (optionally) volumetric features, computed once per
    /// scan.
    pub fn prepare(&self, g: &mut Graph<T>, proj: &ProjectionSet) -> Result<(EncodedViews, Option<Ms3dv>)> {
        let enc = self.encode_views(g, proj)?;
        let ms = if self.config.use_ms3dv { Some(self.build_ms3dv(g, &enc, proj.geometry())?) } else { None };
        Ok((enc, ms))
    }

    /// Full forward pass for a batch of points; returns `[P, 1]`.
    pub fn forward(&self, g: &mut Graph<T>, proj: &ProjectionSet, points: &[Vec3]) -> Result<Var> {
        let (enc, ms) = self.prepare(g, proj)?;
        let feats = self.query_points(g, &enc, ms.as_ref(), proj.geometry(), points)?;
        self.aggregate(g, &feats)
    }

    /// Predicted attenuation at every point, without gradient tracking.
    pub fn predict_field(&self, proj: &ProjectionSet, points: &PointBatch) -> Result<PointBatch> {
        let mut g = Graph::frozen(&self.params);
        let (enc, ms) = self.prepare(&mut g, proj)?;
        let mark = g.tape.len();
        let mut values = Vec::with_capacity(points.len());
        for chunk in points.points.chunks(INFERENCE_CHUNK) {
            let feats = self.query_points(&mut g, &enc, ms.as_ref(), proj.geometry(), chunk)?;
            let out = self.aggregate(&mut g, &feats)?;
            values.extend(g.tape.value(out).data().iter().map(|v| v.as_f64()));
            g.tape.truncate(mark);
        }
        PointBatch::with_values(points.points.clone(), values)
    }

    /// Evaluates the field at the voxel centroids of an `n^3` grid spanning
    /// the reconstruction region.
    pub fn reconstruct(&self, proj: &ProjectionSet, resolution: usize) -> Result<Volume> {
        if resolution == 0 {
            return Err(Error::invalid("resolution", "must be >= 1"));
        }
        let grid = VolumeGrid::cube(resolution, self.config.extent_mm / resolution as f64)?;
        let pred = self.predict_field(proj, &PointBatch::voxel_centers(&grid))?;
        Volume::new(grid, pred.values.unwrap_or_default())
    }

    /// Named intermediate shapes for a forward pass on `points` points.
    pub fn shape_audit(&self, proj: &ProjectionSet, points: &[Vec3]) -> Result<Vec<(String, Vec<usize>)>> {
        let mut g = Graph::frozen(&self.params);
        let (enc, ms) = self.prepare(&mut g, proj)?;
        let mut out = vec![(String::from("decoder_maps"), g.tape.shape(enc.decoder_maps).to_vec())];
        for (s, &m) in enc.scale_maps.iter().enumerate() {
            out.push((format!("scale_map{s}"), g.tape.shape(m).to_vec()));
        }
        if let Some(ms) = &ms {
            for (s, &v) in ms.volumes.iter().enumerate() {
                out.push((format!("volume{s}"), g.tape.shape(v).to_vec()));
            }
        }
        let feats = self.query_points(&mut g, &enc, ms.as_ref(), proj.geometry(), points)?;
        for (i, &v) in feats.view_tokens.iter().enumerate() {
            out.push((format!("view_token{i}"), g.tape.shape(v).to_vec()));
        }
        if let Some(s) = feats.scale_token {
            out.push((String::from("scale_token"), g.tape.shape(s).to_vec()));
        }
        let y = self.aggregate(&mut g, &feats)?;
        out.push((String::from("output"), g.tape.shape(y).to_vec()));
        Ok(out)
    }
}
