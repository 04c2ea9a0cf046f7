use alloc::format;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use super::kernels::{dot, gemm_nn, gemm_nt, gemm_tn, ConvGeom};
use super::{Real, Tensor};
use crate::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Precomputed gather for differentiable grid sampling.
///
/// Output row `r`, channel `c` is `sum_j weight[r, j] * field[index[r, j] + c * channel_stride]`.
/// Gradients flow to the field only.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePlan<T> {
    pub rows: usize,
    pub channels: usize,
    pub channel_stride: usize,
    pub corners: usize,
    pub field_len: usize,
    pub index: Vec<u32>,
    pub weight: Vec<T>,
}

impl<T: Real> SamplePlan<T> {
    pub fn new(rows: usize, channels: usize, channel_stride: usize, corners: usize, field_len: usize) -> Self {
        SamplePlan {
            rows,
            channels,
            channel_stride,
            corners,
            field_len,
            index: vec![0; rows * corners],
            weight: vec![T::zero(); rows * corners],
        }
    }

    pub fn set(&mut self, row: usize, corner: usize, index: usize, weight: f64) {
        let k = row * self.corners + corner;
        self.index[k] = index as u32;
        self.weight[k] = T::of(weight);
    }

    fn validate(&self) -> Result<()> {
        let max_off = (self.channels.saturating_sub(1)) * self.channel_stride;
        if self.index.len() != self.rows * self.corners || self.weight.len() != self.index.len() {
            return Err(Error::shape("sample", "plan buffers do not match rows * corners"));
        }
        if let Some(i) = self.index.iter().find(|&&i| i as usize + max_off >= self.field_len) {
            return Err(Error::shape("sample", format!("plan index {i} overruns field of {}", self.field_len)));
        }
        Ok(())
    }
}

/// Multi-head attention layout: `batch` independent problems with `lr`
/// reference (query) and `ls` source (key/value) positions each.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttentionShape {
    pub batch: usize,
    pub lr: usize,
    pub ls: usize,
    pub heads: usize,
}

/// Every differentiable operation the tape supports.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpKind {
    Add,
    Sub,
    Mul,
    Scale,
    Relu,
    AddBias,
    MatMul,
    Transpose,
    Reshape,
    Conv2d,
    Conv3d,
    AvgPool2,
    Upsample,
    MaxOver,
    Concat,
    Softmax,
    LayerNorm,
    Sample,
    Attention,
    Sum,
    Mean,
}

impl OpKind {
    pub const ALL: [OpKind; 21] = [
        OpKind::Add,
        OpKind::Sub,
        OpKind::Mul,
        OpKind::Scale,
        OpKind::Relu,
        OpKind::AddBias,
        OpKind::MatMul,
        OpKind::Transpose,
        OpKind::Reshape,
        OpKind::Conv2d,
        OpKind::Conv3d,
        OpKind::AvgPool2,
        OpKind::Upsample,
        OpKind::MaxOver,
        OpKind::Concat,
        OpKind::Softmax,
        OpKind::LayerNorm,
        OpKind::Sample,
        OpKind::Attention,
        OpKind::Sum,
        OpKind::Mean,
    ];
}

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Relu(Var),
    AddBias(Var, Var),
    MatMul(Var, Var),
    Transpose(Var),
    Reshape(Var),
    Conv2d { x: Var, w: Var, b: Option<Var>, geom: ConvGeom<2>, batch: usize, cout: usize },
    Conv3d { x: Var, w: Var, b: Option<Var>, geom: ConvGeom<3>, batch: usize, cout: usize },
    AvgPool2(Var),
    Upsample(Var),
    MaxOver(Vec<Var>, Vec<u32>),
    Concat(Vec<Var>, usize),
    Softmax(Var),
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<T>, rstd: Vec<T> },
    Sample(Var, Arc<SamplePlan<T>>),
    Attention { q: Var, k: Var, v: Var, shape: AttentionShape, probs: Vec<T> },
    Sum(Var),
    Mean(Var),
}

impl<T> Op<T> {
    fn kind(&self) -> Option<OpKind> {
        Some(match self {
            Op::Leaf => return None,
            Op::Add(..) => OpKind::Add,
            Op::Sub(..) => OpKind::Sub,
            Op::Mul(..) => OpKind::Mul,
            Op::Scale(..) => OpKind::Scale,
            Op::Relu(..) => OpKind::Relu,
            Op::AddBias(..) => OpKind::AddBias,
            Op::MatMul(..) => OpKind::MatMul,
            Op::Transpose(..) => OpKind::Transpose,
            Op::Reshape(..) => OpKind::Reshape,
            Op::Conv2d { .. } => OpKind::Conv2d,
            Op::Conv3d { .. } => OpKind::Conv3d,
            Op::AvgPool2(..) => OpKind::AvgPool2,
            Op::Upsample(..) => OpKind::Upsample,
            Op::MaxOver(..) => OpKind::MaxOver,
            Op::Concat(..) => OpKind::Concat,
            Op::Softmax(..) => OpKind::Softmax,
            Op::LayerNorm { .. } => OpKind::LayerNorm,
            Op::Sample(..) => OpKind::Sample,
            Op::Attention { .. } => OpKind::Attention,
            Op::Sum(..) => OpKind::Sum,
            Op::Mean(..) => OpKind::Mean,
        })
    }
}

#[derive(Debug, Clone)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    tracked: bool,
    grad: Option<Vec<T>>,
}

/// Records operations in creation order. Inputs always precede outputs, so
/// the node list is a topological order of an acyclic graph.
#[derive(Debug, Clone, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

const LN_EPS: f64 = 1e-5;

fn dims_str(s: &[usize]) -> alloc::string::String {
    format!("{s:?}")
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, tracked: bool) -> Var {
        let op = if tracked { op } else { Op::Leaf };
        self.nodes.push(Node { value, op, tracked, grad: None });
        Var(self.nodes.len() - 1)
    }

    /// Adds an input. `requires_grad` leaves receive gradients in `backward`.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    /// Drops every node recorded after the first `len`; handles to dropped
    /// nodes become invalid.
    pub fn truncate(&mut self, len: usize) {
        self.nodes.truncate(len);
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].value.shape
    }

    fn data(&self, v: Var) -> &[T] {
        &self.nodes[v.0].value.data
    }

    fn tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    /// Accumulated gradient of a node, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn zero_grads(&mut self) {
        self.nodes.iter_mut().for_each(|n| n.grad = None);
    }

    /// Operation kinds recorded on this tape, in order.
    pub fn recorded_ops(&self) -> Vec<OpKind> {
        self.nodes.iter().filter_map(|n| n.op.kind()).collect()
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(op, format!("{} vs {}", dims_str(self.shape(a)), dims_str(self.shape(b)))));
        }
        Ok(())
    }

    fn zip_map(&mut self, op: Op<T>, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Var {
        let data = self.data(a).iter().zip(self.data(b)).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor { shape: self.shape(a).to_vec(), data };
        let tracked = self.tracked(a) || self.tracked(b);
        self.push(value, op, tracked)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        Ok(self.zip_map(Op::Add(a, b), a, b, |x, y| x + y))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        Ok(self.zip_map(Op::Sub(a, b), a, b, |x, y| x - y))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        Ok(self.zip_map(Op::Mul(a, b), a, b, |x, y| x * y))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let value = Tensor { shape: self.shape(a).to_vec(), data: self.data(a).iter().map(|&x| x * s).collect() };
        let tracked = self.tracked(a);
        self.push(value, Op::Scale(a, s), tracked)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = Tensor {
            shape: self.shape(a).to_vec(),
            data: self.data(a).iter().map(|&x| if x > T::zero() { x } else { T::zero() }).collect(),
        };
        let tracked = self.tracked(a);
        self.push(value, Op::Relu(a), tracked)
    }

    /// `x[.., n] + b[n]`, broadcasting the bias over leading axes.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let n = *self.shape(x).last().unwrap_or(&0);
        if self.shape(b) != [n] {
            return Err(Error::shape("add_bias", format!("x {} with bias {}", dims_str(self.shape(x)), dims_str(self.shape(b)))));
        }
        let bias = self.data(b);
        let data = self.data(x).chunks(n).flat_map(|row| row.iter().zip(bias).map(|(&v, &c)| v + c)).collect();
        let value = Tensor { shape: self.shape(x).to_vec(), data };
        let tracked = self.tracked(x) || self.tracked(b);
        Ok(self.push(value, Op::AddBias(x, b), tracked))
    }

    /// `[m, k] x [k, n] -> [m, n]`
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape("matmul", format!("{} x {}", dims_str(sa), dims_str(sb))));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![T::zero(); m * n];
        gemm_nn(m, k, n, self.data(a), self.data(b), &mut out);
        let tracked = self.tracked(a) || self.tracked(b);
        Ok(self.push(Tensor { shape: vec![m, n], data: out }, Op::MatMul(a, b), tracked))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a);
        if s.len() != 2 {
            return Err(Error::shape("transpose", format!("expected a matrix, got {}", dims_str(s))));
        }
        let (m, n) = (s[0], s[1]);
        let src = self.data(a);
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = src[i * n + j];
            }
        }
        let tracked = self.tracked(a);
        Ok(self.push(Tensor { shape: vec![n, m], data: out }, Op::Transpose(a), tracked))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        if shape.iter().product::<usize>() != self.value(a).numel() {
            return Err(Error::shape("reshape", format!("{} into {}", dims_str(self.shape(a)), dims_str(shape))));
        }
        let value = self.value(a).clone().reshaped(shape.to_vec());
        let tracked = self.tracked(a);
        Ok(self.push(value, Op::Reshape(a), tracked))
    }

    fn conv_check<const D: usize>(
        &self,
        op: &'static str,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<(ConvGeom<D>, usize, usize)> {
        let (sx, sw) = (self.shape(x), self.shape(w));
        let bad = || Error::shape(op, format!("input {} kernel {}", dims_str(sx), dims_str(sw)));
        if sx.len() != D + 2 || sw.len() != D + 2 || sx[1] != sw[1] || stride == 0 {
            return Err(bad());
        }
        let k = sw[2];
        if sw[2..].iter().any(|&d| d != k) {
            return Err(bad());
        }
        let mut input = [0usize; D];
        let mut output = [0usize; D];
        for a in 0..D {
            input[a] = sx[2 + a];
            output[a] = ConvGeom::<D>::out_len(input[a], k, stride, pad).ok_or_else(bad)?;
        }
        if let Some(b) = b {
            if self.shape(b) != [sw[0]] {
                return Err(Error::shape(op, format!("bias {} for {} output channels", dims_str(self.shape(b)), sw[0])));
            }
        }
        Ok((ConvGeom { cin: sx[1], input, output, kernel: k, stride, pad }, sx[0], sw[0]))
    }

    fn conv_forward<const D: usize>(&self, x: Var, w: Var, b: Option<Var>, g: &ConvGeom<D>, batch: usize, cout: usize) -> Vec<T> {
        let (rows, cols) = (g.rows(), g.cols());
        let in_item = g.cin * g.input.iter().product::<usize>();
        let mut out = vec![T::zero(); batch * cout * cols];
        let mut buf = vec![T::zero(); rows * cols];
        let xd = self.data(x);
        let wd = self.data(w);
        for n in 0..batch {
            g.im2col(&xd[n * in_item..(n + 1) * in_item], &mut buf);
            let o = &mut out[n * cout * cols..(n + 1) * cout * cols];
            if let Some(b) = b {
                for (co, &bv) in self.data(b).iter().enumerate() {
                    o[co * cols..(co + 1) * cols].iter_mut().for_each(|v| *v = bv);
                }
            }
            gemm_nn(cout, rows, cols, wd, &buf, o);
        }
        out
    }

    /// `x[B, Ci, H, W]` with kernel `w[Co, Ci, k, k]`, zero padding.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let (geom, batch, cout) = self.conv_check::<2>("conv2d", x, w, b, stride, pad)?;
        let data = self.conv_forward(x, w, b, &geom, batch, cout);
        let shape = vec![batch, cout, geom.output[0], geom.output[1]];
        let tracked = self.tracked(x) || self.tracked(w) || b.is_some_and(|b| self.tracked(b));
        Ok(self.push(Tensor { shape, data }, Op::Conv2d { x, w, b, geom, batch, cout }, tracked))
    }

    /// `x[B, Ci, D, H, W]` with kernel `w[Co, Ci, k, k, k]`, zero padding.
    pub fn conv3d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let (geom, batch, cout) = self.conv_check::<3>("conv3d", x, w, b, stride, pad)?;
        let data = self.conv_forward(x, w, b, &geom, batch, cout);
        let shape = vec![batch, cout, geom.output[0], geom.output[1], geom.output[2]];
        let tracked = self.tracked(x) || self.tracked(w) || b.is_some_and(|b| self.tracked(b));
        Ok(self.push(Tensor { shape, data }, Op::Conv3d { x, w, b, geom, batch, cout }, tracked))
    }

    /// 2x2 average pooling over the last two axes of `[B, C, H, W]`
    /// (trailing odd rows/columns are dropped).
    pub fn avg_pool2(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 || s[2] < 2 || s[3] < 2 {
            return Err(Error::shape("avg_pool2", format!("need [B, C, H>=2, W>=2], got {}", dims_str(&s))));
        }
        let (h, w, oh, ow) = (s[2], s[3], s[2] / 2, s[3] / 2);
        let src = self.data(x);
        let quarter = T::of(0.25);
        let mut out = Vec::with_capacity(s[0] * s[1] * oh * ow);
        for plane in src.chunks(h * w) {
            for y in 0..oh {
                for xx in 0..ow {
                    let i = 2 * y * w + 2 * xx;
                    out.push((plane[i] + plane[i + 1] + plane[i + w] + plane[i + w + 1]) * quarter);
                }
            }
        }
        let tracked = self.tracked(x);
        Ok(self.push(Tensor { shape: vec![s[0], s[1], oh, ow], data: out }, Op::AvgPool2(x), tracked))
    }

    /// Nearest-neighbour resize of `[B, C, h, w]` to `[B, C, oh, ow]`.
    pub fn upsample_nearest(&mut self, x: Var, oh: usize, ow: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 || oh == 0 || ow == 0 {
            return Err(Error::shape("upsample", format!("need [B, C, H, W], got {}", dims_str(&s))));
        }
        let (h, w) = (s[2], s[3]);
        let src = self.data(x);
        let mut out = Vec::with_capacity(s[0] * s[1] * oh * ow);
        for plane in src.chunks(h * w) {
            for y in 0..oh {
                let sy = y * h / oh;
                for xx in 0..ow {
                    out.push(plane[sy * w + xx * w / ow]);
                }
            }
        }
        let tracked = self.tracked(x);
        Ok(self.push(Tensor { shape: vec![s[0], s[1], oh, ow], data: out }, Op::Upsample(x), tracked))
    }

    /// Elementwise maximum over equally shaped tensors (first argmax wins).
    pub fn max_over(&mut self, xs: &[Var]) -> Result<Var> {
        let first = *xs.first().ok_or_else(|| Error::shape("max_over", "no inputs"))?;
        for &v in &xs[1..] {
            self.same_shape("max_over", first, v)?;
        }
        let mut out = self.data(first).to_vec();
        let mut arg = vec![0u32; out.len()];
        for (k, &v) in xs.iter().enumerate().skip(1) {
            for ((o, a), &x) in out.iter_mut().zip(arg.iter_mut()).zip(self.data(v)) {
                if x > *o {
                    *o = x;
                    *a = k as u32;
                }
            }
        }
        let value = Tensor { shape: self.shape(first).to_vec(), data: out };
        let tracked = xs.iter().any(|&v| self.tracked(v));
        Ok(self.push(value, Op::MaxOver(xs.to_vec(), arg), tracked))
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = *xs.first().ok_or_else(|| Error::shape("concat", "no inputs"))?;
        let base = self.shape(first).to_vec();
        if axis >= base.len() {
            return Err(Error::shape("concat", format!("axis {axis} for {}", dims_str(&base))));
        }
        let mut total = 0;
        for &v in xs {
            let s = self.shape(v);
            let ok = s.len() == base.len() && s.iter().zip(&base).enumerate().all(|(a, (x, y))| a == axis || x == y);
            if !ok {
                return Err(Error::shape("concat", format!("{} vs {} on axis {axis}", dims_str(s), dims_str(&base))));
            }
            total += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in xs {
                let chunk = self.shape(v)[axis] * inner;
                out.extend_from_slice(&self.data(v)[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let tracked = xs.iter().any(|&v| self.tracked(v));
        Ok(self.push(Tensor { shape, data: out }, Op::Concat(xs.to_vec(), axis), tracked))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let n = *self.shape(x).last().ok_or_else(|| Error::shape("softmax", "scalar input"))?;
        if n == 0 {
            return Err(Error::shape("softmax", "empty last axis"));
        }
        let mut out = self.data(x).to_vec();
        for row in out.chunks_mut(n) {
            softmax_in_place(row);
        }
        let value = Tensor { shape: self.shape(x).to_vec(), data: out };
        let tracked = self.tracked(x);
        Ok(self.push(value, Op::Softmax(x), tracked))
    }

    /// Layer normalisation over the last axis with affine `gamma`, `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let n = *self.shape(x).last().ok_or_else(|| Error::shape("layer_norm", "scalar input"))?;
        if self.shape(gamma) != [n] || self.shape(beta) != [n] {
            return Err(Error::shape("layer_norm", format!("affine params for width {n}")));
        }
        let eps = T::of(LN_EPS);
        let inv_n = T::of(1.0 / n as f64);
        let (g, b) = (self.data(gamma), self.data(beta));
        let xd = self.data(x);
        let rows = xd.len() / n;
        let mut xhat = Vec::with_capacity(xd.len());
        let mut rstd = Vec::with_capacity(rows);
        let mut out = Vec::with_capacity(xd.len());
        for row in xd.chunks(n) {
            let mean = row.iter().copied().sum::<T>() * inv_n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_n;
            let r = T::one() / (var + eps).sqrt();
            rstd.push(r);
            for (i, &v) in row.iter().enumerate() {
                let h = (v - mean) * r;
                xhat.push(h);
                out.push(h * g[i] + b[i]);
            }
        }
        let value = Tensor { shape: self.shape(x).to_vec(), data: out };
        let tracked = self.tracked(x) || self.tracked(gamma) || self.tracked(beta);
        Ok(self.push(value, Op::LayerNorm { x, gamma, beta, xhat, rstd }, tracked))
    }

    /// Differentiable gather-interpolation; output `[plan.rows, plan.channels]`.
    pub fn sample(&mut self, field: Var, plan: Arc<SamplePlan<T>>) -> Result<Var> {
        if self.value(field).numel() != plan.field_len {
            return Err(Error::shape(
                "sample",
                format!("field {} but plan expects {} values", dims_str(self.shape(field)), plan.field_len),
            ));
        }
        plan.validate()?;
        let f = self.data(field);
        let (c, k) = (plan.channels, plan.corners);
        let mut out = vec![T::zero(); plan.rows * c];
        for r in 0..plan.rows {
            let o = &mut out[r * c..(r + 1) * c];
            for j in 0..k {
                let w = plan.weight[r * k + j];
                if w == T::zero() {
                    continue;
                }
                let base = plan.index[r * k + j] as usize;
                for (ch, ov) in o.iter_mut().enumerate() {
                    *ov += w * f[base + ch * plan.channel_stride];
                }
            }
        }
        let value = Tensor { shape: vec![plan.rows, c], data: out };
        let tracked = self.tracked(field);
        Ok(self.push(value, Op::Sample(field, plan), tracked))
    }

    /// Scaled dot-product multi-head attention,
    /// `softmax(Q K^T / sqrt(d)) V` per batch item and head.
    ///
    /// `q` is `[batch * lr, heads * d]`, `k` and `v` are `[batch * ls, heads * d]`.
    /// Source positions are reduced in a canonical order (sorted by key, then
    /// value, content) so the output is bit-for-bit invariant to any
    /// permutation of the source sequence.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, shape: AttentionShape) -> Result<Var> {
        let AttentionShape { batch, lr, ls, heads } = shape;
        let (sq, sk, sv) = (self.shape(q), self.shape(k), self.shape(v));
        let width = *sq.last().unwrap_or(&0);
        let ok = sq.len() == 2
            && sk.len() == 2
            && sv.len() == 2
            && sq[0] == batch * lr
            && sk[0] == batch * ls
            && sv[0] == batch * ls
            && sk[1] == width
            && sv[1] == width
            && heads > 0
            && width % heads == 0
            && ls > 0;
        if !ok {
            return Err(Error::shape(
                "attention",
                format!("q {} k {} v {} for {shape:?}", dims_str(sq), dims_str(sk), dims_str(sv)),
            ));
        }
        let d = width / heads;
        let scale = T::one() / T::of(d as f64).sqrt();
        let (qd, kd, vd) = (self.data(q), self.data(k), self.data(v));
        let mut out = vec![T::zero(); batch * lr * width];
        let mut probs = vec![T::zero(); batch * heads * lr * ls];
        let mut order: Vec<usize> = (0..ls).collect();
        let mut scores = vec![T::zero(); ls];
        for b in 0..batch {
            for h in 0..heads {
                let key = |j: usize| &kd[(b * ls + j) * width + h * d..(b * ls + j) * width + (h + 1) * d];
                let val = |j: usize| &vd[(b * ls + j) * width + h * d..(b * ls + j) * width + (h + 1) * d];
                order.iter_mut().enumerate().for_each(|(i, o)| *o = i);
                order.sort_by(|&x, &y| lex_cmp(key(x), key(y)).then_with(|| lex_cmp(val(x), val(y))));
                for i in 0..lr {
                    let qrow = &qd[(b * lr + i) * width + h * d..(b * lr + i) * width + (h + 1) * d];
                    for (j, s) in scores.iter_mut().enumerate() {
                        *s = dot(qrow, key(j)) * scale;
                    }
                    let m = scores.iter().copied().fold(T::neg_infinity(), T::max);
                    let mut z = T::zero();
                    for &j in &order {
                        scores[j] = (scores[j] - m).exp();
                        z += scores[j];
                    }
                    let p = &mut probs[((b * heads + h) * lr + i) * ls..((b * heads + h) * lr + i + 1) * ls];
                    for j in 0..ls {
                        p[j] = scores[j] / z;
                    }
                    let o = &mut out[(b * lr + i) * width + h * d..(b * lr + i) * width + (h + 1) * d];
                    for &j in &order {
                        let pj = p[j];
                        for (ov, &vv) in o.iter_mut().zip(val(j)) {
                            *ov += pj * vv;
                        }
                    }
                }
            }
        }
        let value = Tensor { shape: vec![batch * lr, width], data: out };
        let tracked = self.tracked(q) || self.tracked(k) || self.tracked(v);
        Ok(self.push(value, Op::Attention { q, k, v, shape, probs }, tracked))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.data(x).iter().copied().sum::<T>();
        let tracked = self.tracked(x);
        self.push(Tensor::scalar(s), Op::Sum(x), tracked)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).numel().max(1);
        let s = self.data(x).iter().copied().sum::<T>() / T::of(n as f64);
        let tracked = self.tracked(x);
        self.push(Tensor::scalar(s), Op::Mean(x), tracked)
    }

    /// Accumulates `d loss / d node` into every tracked node reachable from
    /// `loss`. Calling it again adds another copy of the gradients.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(Error::NonScalarLoss(self.shape(loss).to_vec()));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![T::one()]);
        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            if self.nodes[id].tracked {
                self.propagate(id, &g, &mut grads);
            }
            let node = &mut self.nodes[id];
            match &mut node.grad {
                Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, &b)| *a += b),
                None => node.grad = Some(g),
            }
        }
        Ok(())
    }

    fn propagate(&self, id: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[id];
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [T])| {
            if !self.nodes[v.0].tracked {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![T::zero(); self.nodes[v.0].value.numel()]);
            f(slot);
        };
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(*a, &mut |s| s.iter_mut().zip(g).for_each(|(x, &y)| *x += y));
                acc(*b, &mut |s| s.iter_mut().zip(g).for_each(|(x, &y)| *x += y));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |s| s.iter_mut().zip(g).for_each(|(x, &y)| *x += y));
                acc(*b, &mut |s| s.iter_mut().zip(g).for_each(|(x, &y)| *x -= y));
            }
            Op::Mul(a, b) => {
                let (da, db) = (self.data(*a), self.data(*b));
                acc(*a, &mut |s| s.iter_mut().zip(g).zip(db).for_each(|((x, &y), &o)| *x += y * o));
                acc(*b, &mut |s| s.iter_mut().zip(g).zip(da).for_each(|((x, &y), &o)| *x += y * o));
            }
            Op::Scale(a, c) => acc(*a, &mut |s| s.iter_mut().zip(g).for_each(|(x, &y)| *x += y * *c)),
            Op::Relu(a) => {
                let da = self.data(*a);
                acc(*a, &mut |s| {
                    for ((x, &y), &v) in s.iter_mut().zip(g).zip(da) {
                        if v > T::zero() {
                            *x += y;
                        }
                    }
                });
            }
            Op::AddBias(x, b) => {
                acc(*x, &mut |s| s.iter_mut().zip(g).for_each(|(x, &y)| *x += y));
                let n = self.value(*b).numel();
                acc(*b, &mut |s| {
                    for row in g.chunks(n) {
                        s.iter_mut().zip(row).for_each(|(x, &y)| *x += y);
                    }
                });
            }
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                let (da, db) = (self.data(*a), self.data(*b));
                acc(*a, &mut |s| gemm_nt(m, n, k, g, db, s));
                acc(*b, &mut |s| gemm_tn(k, m, n, da, g, s));
            }
            Op::Transpose(a) => {
                let s0 = self.shape(*a);
                let (m, n) = (s0[0], s0[1]);
                acc(*a, &mut |s| {
                    for i in 0..m {
                        for j in 0..n {
                            s[i * n + j] += g[j * m + i];
                        }
                    }
                });
            }
            Op::Reshape(a) => acc(*a, &mut |s| s.iter_mut().zip(g).for_each(|(x, &y)| *x += y)),
            Op::Conv2d { x, w, b, geom, batch, cout } => self.conv_backward(*x, *w, *b, geom, *batch, *cout, g, &mut acc),
            Op::Conv3d { x, w, b, geom, batch, cout } => self.conv_backward(*x, *w, *b, geom, *batch, *cout, g, &mut acc),
            Op::AvgPool2(x) => {
                let s0 = self.shape(*x);
                let (h, w) = (s0[2], s0[3]);
                let (oh, ow) = (h / 2, w / 2);
                let quarter = T::of(0.25);
                acc(*x, &mut |s| {
                    for (p, plane) in s.chunks_mut(h * w).enumerate() {
                        let gp = &g[p * oh * ow..(p + 1) * oh * ow];
                        for y in 0..oh {
                            for xx in 0..ow {
                                let v = gp[y * ow + xx] * quarter;
                                let i = 2 * y * w + 2 * xx;
                                plane[i] += v;
                                plane[i + 1] += v;
                                plane[i + w] += v;
                                plane[i + w + 1] += v;
                            }
                        }
                    }
                });
            }
            Op::Upsample(x) => {
                let s0 = self.shape(*x);
                let (h, w) = (s0[2], s0[3]);
                let so = node.value.shape();
                let (oh, ow) = (so[2], so[3]);
                acc(*x, &mut |s| {
                    for (p, plane) in s.chunks_mut(h * w).enumerate() {
                        let gp = &g[p * oh * ow..(p + 1) * oh * ow];
                        for y in 0..oh {
                            let sy = y * h / oh;
                            for xx in 0..ow {
                                plane[sy * w + xx * w / ow] += gp[y * ow + xx];
                            }
                        }
                    }
                });
            }
            Op::MaxOver(xs, arg) => {
                for (k, &v) in xs.iter().enumerate() {
                    acc(v, &mut |s| {
                        for ((x, &y), &a) in s.iter_mut().zip(g).zip(arg) {
                            if a as usize == k {
                                *x += y;
                            }
                        }
                    });
                }
            }
            Op::Concat(xs, axis) => {
                let so = node.value.shape();
                let outer: usize = so[..*axis].iter().product();
                let inner: usize = so[axis + 1..].iter().product();
                let row = so[*axis] * inner;
                let mut offset = 0;
                for &v in xs {
                    let chunk = self.shape(v)[*axis] * inner;
                    acc(v, &mut |s| {
                        for o in 0..outer {
                            let src = &g[o * row + offset..o * row + offset + chunk];
                            s[o * chunk..(o + 1) * chunk].iter_mut().zip(src).for_each(|(x, &y)| *x += y);
                        }
                    });
                    offset += chunk;
                }
            }
            Op::Softmax(x) => {
                let n = *node.value.shape().last().unwrap();
                let y = node.value.data();
                acc(*x, &mut |s| {
                    for ((srow, yrow), grow) in s.chunks_mut(n).zip(y.chunks(n)).zip(g.chunks(n)) {
                        let inner: T = yrow.iter().zip(grow).map(|(&a, &b)| a * b).sum();
                        for ((sx, &yv), &gv) in srow.iter_mut().zip(yrow).zip(grow) {
                            *sx += yv * (gv - inner);
                        }
                    }
                });
            }
            Op::LayerNorm { x, gamma, beta, xhat, rstd } => {
                let n = self.value(*gamma).numel();
                let gm = self.data(*gamma);
                let inv_n = T::of(1.0 / n as f64);
                acc(*x, &mut |s| {
                    for (r, srow) in s.chunks_mut(n).enumerate() {
                        let grow = &g[r * n..(r + 1) * n];
                        let hrow = &xhat[r * n..(r + 1) * n];
                        let mut m1 = T::zero();
                        let mut m2 = T::zero();
                        for i in 0..n {
                            let dh = grow[i] * gm[i];
                            m1 += dh;
                            m2 += dh * hrow[i];
                        }
                        m1 *= inv_n;
                        m2 *= inv_n;
                        for i in 0..n {
                            let dh = grow[i] * gm[i];
                            srow[i] += rstd[r] * (dh - m1 - hrow[i] * m2);
                        }
                    }
                });
                acc(*gamma, &mut |s| {
                    for (grow, hrow) in g.chunks(n).zip(xhat.chunks(n)) {
                        for i in 0..n {
                            s[i] += grow[i] * hrow[i];
                        }
                    }
                });
                acc(*beta, &mut |s| {
                    for grow in g.chunks(n) {
                        s.iter_mut().zip(grow).for_each(|(x, &y)| *x += y);
                    }
                });
            }
            Op::Sample(field, plan) => {
                let (c, k) = (plan.channels, plan.corners);
                acc(*field, &mut |s| {
                    for r in 0..plan.rows {
                        let gr = &g[r * c..(r + 1) * c];
                        for j in 0..k {
                            let w = plan.weight[r * k + j];
                            if w == T::zero() {
                                continue;
                            }
                            let base = plan.index[r * k + j] as usize;
                            for (ch, &gv) in gr.iter().enumerate() {
                                s[base + ch * plan.channel_stride] += w * gv;
                            }
                        }
                    }
                });
            }
            Op::Attention { q, k, v, shape, probs } => self.attention_backward(*q, *k, *v, *shape, probs, g, &mut acc),
            Op::Sum(x) => acc(*x, &mut |s| s.iter_mut().for_each(|v| *v += g[0])),
            Op::Mean(x) => {
                let n = T::of(self.value(*x).numel().max(1) as f64);
                acc(*x, &mut |s| s.iter_mut().for_each(|v| *v += g[0] / n));
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn conv_backward<const D: usize>(
        &self,
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: &ConvGeom<D>,
        batch: usize,
        cout: usize,
        g: &[T],
        acc: &mut dyn FnMut(Var, &mut dyn FnMut(&mut [T])),
    ) {
        let (rows, cols) = (geom.rows(), geom.cols());
        let in_item = geom.cin * geom.input.iter().product::<usize>();
        let xd = self.data(x);
        let wd = self.data(w);
        if let Some(b) = b {
            acc(b, &mut |s| {
                for n in 0..batch {
                    for co in 0..cout {
                        let base = (n * cout + co) * cols;
                        s[co] += g[base..base + cols].iter().copied().sum::<T>();
                    }
                }
            });
        }
        if self.tracked(w) {
            acc(w, &mut |s| {
                let mut buf = vec![T::zero(); rows * cols];
                for n in 0..batch {
                    geom.im2col(&xd[n * in_item..(n + 1) * in_item], &mut buf);
                    gemm_nt(cout, cols, rows, &g[n * cout * cols..(n + 1) * cout * cols], &buf, s);
                }
            });
        }
        if self.tracked(x) {
            acc(x, &mut |s| {
                let mut buf = vec![T::zero(); rows * cols];
                for n in 0..batch {
                    buf.iter_mut().for_each(|v| *v = T::zero());
                    gemm_tn(rows, cout, cols, wd, &g[n * cout * cols..(n + 1) * cout * cols], &mut buf);
                    geom.col2im(&buf, &mut s[n * in_item..(n + 1) * in_item]);
                }
            });
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn attention_backward(
        &self,
        q: Var,
        k: Var,
        v: Var,
        shape: AttentionShape,
        probs: &[T],
        g: &[T],
        acc: &mut dyn FnMut(Var, &mut dyn FnMut(&mut [T])),
    ) {
        let AttentionShape { batch, lr, ls, heads } = shape;
        let width = self.shape(q)[1];
        let d = width / heads;
        let scale = T::one() / T::of(d as f64).sqrt();
        let (qd, kd, vd) = (self.data(q), self.data(k), self.data(v));
        let mut dq = vec![T::zero(); qd.len()];
        let mut dk = vec![T::zero(); kd.len()];
        let mut dv = vec![T::zero(); vd.len()];
        let mut dp = vec![T::zero(); ls];
        for b in 0..batch {
            for h in 0..heads {
                let cols = h * d..(h + 1) * d;
                for i in 0..lr {
                    let qi = (b * lr + i) * width;
                    let grow = &g[qi + cols.start..qi + cols.end];
                    let p = &probs[((b * heads + h) * lr + i) * ls..((b * heads + h) * lr + i + 1) * ls];
                    let mut inner = T::zero();
                    for j in 0..ls {
                        let kj = (b * ls + j) * width;
                        dp[j] = dot(grow, &vd[kj + cols.start..kj + cols.end]);
                        inner += p[j] * dp[j];
                        for (dvv, &gv) in dv[kj + cols.start..kj + cols.end].iter_mut().zip(grow) {
                            *dvv += p[j] * gv;
                        }
                    }
                    for j in 0..ls {
                        let ds = p[j] * (dp[j] - inner) * scale;
                        let kj = (b * ls + j) * width;
                        for c in cols.clone() {
                            dq[qi + c] += ds * kd[kj + c];
                            dk[kj + c] += ds * qd[qi + c];
                        }
                    }
                }
            }
        }
        acc(q, &mut |s| s.iter_mut().zip(&dq).for_each(|(x, &y)| *x += y));
        acc(k, &mut |s| s.iter_mut().zip(&dk).for_each(|(x, &y)| *x += y));
        acc(v, &mut |s| s.iter_mut().zip(&dv).for_each(|(x, &y)| *x += y));
    }
}

fn lex_cmp<T: Real>(a: &[T], b: &[T]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.total_order(y) {
            Ordering::Equal => continue,
            o => return o,
        }
    }
    Ordering::Equal
}

fn softmax_in_place<T: Real>(row: &mut [T]) {
    let m = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut z = T::zero();
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        z += *v;
    }
    for v in row.iter_mut() {
        *v /= z;
    }
}
