//! Dense, row-major reference kernels.

pub mod fused;
pub mod index;
pub mod layout;
pub mod linalg;
pub mod pointwise;
pub mod reduce;

use crate::dtype::{Buffer, DType};
use crate::error::Result;
use crate::op::Op;
use crate::shape::Shape;
use fused::{Program, Source, Step};

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN_GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Counter-based uniform draw in `[0, 1)`: element `i` of stream `seed`.
pub fn uniform_at(seed: u64, i: u64) -> f64 {
    let bits = splitmix64(splitmix64(seed).wrapping_add(i.wrapping_mul(GOLDEN_GAMMA)));
    (bits >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Derives the next seed from a generator state; advances the state.
pub fn next_seed(state: &mut u64) -> u64 {
    *state = state.wrapping_add(GOLDEN_GAMMA);
    splitmix64(*state)
}

fn normal_at(seed: u64, i: u64) -> f64 {
    let u1 = uniform_at(seed, 2 * i);
    let u2 = uniform_at(seed, 2 * i + 1);
    (-2.0 * (1.0 - u1).ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Evaluates any primitive on dense inputs. `out` is the inferred result.
pub fn compute(op: &Op, inputs: &[(&Shape, &Buffer)], out_shape: &Shape, out_dtype: DType) -> Result<Buffer> {
    let n = out_shape.numel();
    let dense = |i: usize| Source::Dense {
        shape: inputs[i].0,
        data: inputs[i].1,
    };
    Ok(match op {
        Op::Full { value, dtype, .. } => Buffer::full(*dtype, n, *value),
        Op::Arange { dtype, .. } => Buffer::from_f64_iter(*dtype, (0..n).map(|i| i as f64)),
        Op::Identity { n: k, dtype } => {
            Buffer::from_f64_iter(*dtype, (0..n).map(|i| if i / k == i % k { 1.0 } else { 0.0 }))
        }
        Op::RandUniform {
            low, high, seed, dtype, ..
        } => Buffer::from_f64_iter(*dtype, (0..n as u64).map(|i| low + (high - low) * uniform_at(*seed, i))),
        Op::RandNormal {
            mean, std, seed, dtype, ..
        } => Buffer::from_f64_iter(*dtype, (0..n as u64).map(|i| mean + std * normal_at(*seed, i))),
        Op::FromHost(h) => h.data.clone(),
        Op::Unary(u) => Program::single(Step::Unary(*u, 0), vec![dense(0)]).evaluate(out_shape, out_dtype)?,
        Op::Binary(b) => {
            Program::single(Step::Binary(*b, 0, 1), vec![dense(0), dense(1)]).evaluate(out_shape, out_dtype)?
        }
        Op::BinaryScalar { op, scalar } => {
            Program::single(Step::Scalar(*op, 0, *scalar), vec![dense(0)]).evaluate(out_shape, out_dtype)?
        }
        Op::Select => {
            Program::single(Step::Select(0, 1, 2), vec![dense(0), dense(1), dense(2)]).evaluate(out_shape, out_dtype)?
        }
        Op::Reduce { op, axis, .. } => reduce::reduce(*op, inputs[0].0, *axis, inputs[0].1),
        Op::MatMul => linalg::matmul(inputs[0].0, inputs[0].1, inputs[1].0, inputs[1].1, out_dtype),
        Op::Unfold(win) => linalg::unfold(inputs[0].0, inputs[0].1, win),
        Op::Fold { window, height, width } => linalg::fold(inputs[0].0, inputs[0].1, window, *height, *width),
        Op::Reshape(_) => inputs[0].1.clone(),
        Op::Permute(perm) => layout::permute(inputs[0].0, inputs[0].1, perm),
        Op::Concat { axis } => layout::concat(inputs, *axis, out_dtype),
        Op::Slice(ranges) => layout::slice(inputs[0].0, inputs[0].1, ranges),
        Op::Tile(reps) => layout::tile(inputs[0].0, inputs[0].1, reps),
        Op::Pad { widths, value } => layout::pad(inputs[0].0, inputs[0].1, widths, *value),
    })
}
