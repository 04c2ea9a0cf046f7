//! Finite-difference gradient checks.
//!
//! [`check`] compares reverse-mode gradients of `sum(R * f(inputs))`, with a
//! fixed random projection `R`, against central differences in `f64`.
//! [`op_case`] supplies one representative case for every [`OpKind`], so a
//! test looping over [`OpKind::ALL`] covers each operation the tape knows.

use alloc::boxed::Box;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

#[cfg(not(feature = "std"))]
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{AttentionShape, OpKind, SamplePlan, Tape, Tensor, Var};
use crate::Result;

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-3;

pub type Build = Box<dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var>>;

pub struct GradCase {
    pub inputs: Vec<Tensor<f64>>,
    pub build: Build,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradReport {
    /// `|analytic - numeric| / max(|analytic|, |numeric|)` over all inputs.
    pub rel_error: f64,
    pub analytic_norm: f64,
    pub checked: usize,
}

impl GradReport {
    pub fn passed(&self) -> bool {
        self.rel_error < TOLERANCE
    }
}

fn projected_loss(tape: &mut Tape<f64>, out: Var, proj: &[f64]) -> Result<Var> {
    let r = tape.constant(Tensor::new(tape.shape(out).to_vec(), proj.to_vec())?);
    let prod = tape.mul(out, r)?;
    Ok(tape.sum(prod))
}

fn eval(build: &Build, inputs: &[Tensor<f64>], proj: &[f64]) -> Result<f64> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let out = build(&mut tape, &vars)?;
    let loss = projected_loss(&mut tape, out, proj)?;
    Ok(tape.value(loss).data()[0])
}

pub fn check(build: &Build, inputs: &[Tensor<f64>], seed: u64) -> Result<GradReport> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let out = build(&mut tape, &vars)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let proj: Vec<f64> = (0..tape.value(out).numel()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let loss = projected_loss(&mut tape, out, &proj)?;
    tape.backward(loss)?;

    let (mut diff2, mut a2, mut n2, mut checked) = (0.0f64, 0.0f64, 0.0f64, 0);
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for (i, &v) in vars.iter().enumerate() {
        let zeros = vec![0.0; inputs[i].numel()];
        let analytic = tape.grad(v).unwrap_or(&zeros).to_vec();
        for j in 0..inputs[i].numel() {
            let x0 = inputs[i].data()[j];
            work[i].data_mut()[j] = x0 + STEP;
            let plus = eval(build, &work, &proj)?;
            work[i].data_mut()[j] = x0 - STEP;
            let minus = eval(build, &work, &proj)?;
            work[i].data_mut()[j] = x0;
            let numeric = (plus - minus) / (2.0 * STEP);
            diff2 += (analytic[j] - numeric).powi(2);
            a2 += analytic[j] * analytic[j];
            n2 += numeric * numeric;
            checked += 1;
        }
    }
    let denom = a2.sqrt().max(n2.sqrt()).max(1e-12);
    Ok(GradReport { rel_error: diff2.sqrt() / denom, analytic_norm: a2.sqrt(), checked })
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).expect("shape")
}

/// Values bounded away from zero, so kinks of piecewise-linear ops are not
/// straddled by the finite-difference step.
fn rand_away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.gen_range(0.1..1.0);
            if rng.gen_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).expect("shape")
}

/// Representative inputs and builder for one operation.
pub fn op_case(kind: OpKind, seed: u64) -> GradCase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = &mut rng;
    let case = |inputs: Vec<Tensor<f64>>, build: Build| GradCase { inputs, build };
    match kind {
        OpKind::Add => case(vec![rand_tensor(r, &[3, 4]), rand_tensor(r, &[3, 4])], Box::new(|t, v| t.add(v[0], v[1]))),
        OpKind::Sub => case(vec![rand_tensor(r, &[3, 4]), rand_tensor(r, &[3, 4])], Box::new(|t, v| t.sub(v[0], v[1]))),
        OpKind::Mul => case(vec![rand_tensor(r, &[3, 4]), rand_tensor(r, &[3, 4])], Box::new(|t, v| t.mul(v[0], v[1]))),
        OpKind::Scale => case(vec![rand_tensor(r, &[5])], Box::new(|t, v| Ok(t.scale(v[0], -1.7)))),
        OpKind::Relu => case(vec![rand_away_from_zero(r, &[4, 5])], Box::new(|t, v| Ok(t.relu(v[0])))),
        OpKind::AddBias => {
            case(vec![rand_tensor(r, &[3, 4]), rand_tensor(r, &[4])], Box::new(|t, v| t.add_bias(v[0], v[1])))
        }
        OpKind::MatMul => case(vec![rand_tensor(r, &[3, 4]), rand_tensor(r, &[4, 2])], Box::new(|t, v| t.matmul(v[0], v[1]))),
        OpKind::Transpose => case(vec![rand_tensor(r, &[3, 4])], Box::new(|t, v| t.transpose(v[0]))),
        OpKind::Reshape => case(
            vec![rand_tensor(r, &[3, 4])],
            Box::new(|t, v| {
                let y = t.reshape(v[0], &[2, 6])?;
                t.transpose(y)
            }),
        ),
        OpKind::Conv2d => case(
            vec![rand_tensor(r, &[2, 2, 5, 6]), rand_tensor(r, &[3, 2, 3, 3]), rand_tensor(r, &[3])],
            Box::new(|t, v| {
                let a = t.conv2d(v[0], v[1], Some(v[2]), 1, 1)?;
                let b = t.conv2d(v[0], v[1], None, 2, 1)?;
                let a = t.reshape(a, &[2 * 3 * 5 * 6])?;
                let b = t.reshape(b, &[2 * 3 * 3 * 3])?;
                t.concat(&[a, b], 0)
            }),
        ),
        OpKind::Conv3d => case(
            vec![rand_tensor(r, &[1, 2, 4, 3, 5]), rand_tensor(r, &[2, 2, 3, 3, 3]), rand_tensor(r, &[2])],
            Box::new(|t, v| {
                let a = t.conv3d(v[0], v[1], Some(v[2]), 1, 1)?;
                let b = t.conv3d(v[0], v[1], None, 2, 1)?;
                let a = t.reshape(a, &[2 * 4 * 3 * 5])?;
                let b = t.reshape(b, &[2 * 2 * 2 * 3])?;
                t.concat(&[a, b], 0)
            }),
        ),
        OpKind::AvgPool2 => case(vec![rand_tensor(r, &[2, 2, 5, 4])], Box::new(|t, v| t.avg_pool2(v[0]))),
        OpKind::Upsample => case(vec![rand_tensor(r, &[1, 2, 2, 3])], Box::new(|t, v| t.upsample_nearest(v[0], 5, 6))),
        OpKind::MaxOver => {
            // Distinct, well separated candidates per element.
            let base: Vec<f64> = (0..12).map(|i| i as f64 * 0.37 % 1.0).collect();
            let inputs = (0..3)
                .map(|k| {
                    let d = base.iter().enumerate().map(|(i, &b)| b + ((i * 7 + k * 5) % 3) as f64 * 0.3).collect();
                    Tensor::new(vec![3, 4], d).expect("shape")
                })
                .collect();
            case(inputs, Box::new(|t, v| t.max_over(v)))
        }
        OpKind::Concat => case(
            vec![rand_tensor(r, &[2, 3, 2]), rand_tensor(r, &[2, 1, 2]), rand_tensor(r, &[2, 2, 2])],
            Box::new(|t, v| t.concat(v, 1)),
        ),
        OpKind::Softmax => case(vec![rand_tensor(r, &[3, 5])], Box::new(|t, v| t.softmax(v[0]))),
        OpKind::LayerNorm => case(
            vec![rand_tensor(r, &[3, 6]), rand_tensor(r, &[6]), rand_tensor(r, &[6])],
            Box::new(|t, v| t.layer_norm(v[0], v[1], v[2])),
        ),
        OpKind::Sample => {
            let mut plan = SamplePlan::new(4, 2, 12, 3, 24);
            for row in 0..4 {
                for c in 0..3 {
                    plan.set(row, c, (row * 5 + c * 3) % 12, r.gen_range(0.0..1.0));
                }
            }
            let plan = Arc::new(plan);
            case(vec![rand_tensor(r, &[2, 12])], Box::new(move |t, v| t.sample(v[0], plan.clone())))
        }
        OpKind::Attention => {
            let shape = AttentionShape { batch: 2, lr: 2, ls: 3, heads: 2 };
            case(
                vec![rand_tensor(r, &[4, 4]), rand_tensor(r, &[6, 4]), rand_tensor(r, &[6, 4])],
                Box::new(move |t, v| t.attention(v[0], v[1], v[2], shape)),
            )
        }
        OpKind::Sum => case(vec![rand_tensor(r, &[3, 2])], Box::new(|t, v| Ok(t.sum(v[0])))),
        OpKind::Mean => case(vec![rand_tensor(r, &[3, 2])], Box::new(|t, v| Ok(t.mean(v[0])))),
    }
}

/// Builds and checks the registered case for `kind`, also returning the op
/// kinds the case actually recorded.
pub fn check_op(kind: OpKind, seed: u64) -> Result<(GradReport, Vec<OpKind>)> {
    let GradCase { inputs, build } = op_case(kind, seed);
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    build(&mut tape, &vars)?;
    let recorded = tape.recorded_ops();
    Ok((check(&build, &inputs, seed)?, recorded))
}
