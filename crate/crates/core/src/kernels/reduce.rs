use num_traits::{WrappingAdd, Zero};

use crate::dtype::{Buffer, DType, Element};
use crate::op::ReduceOp;
use crate::shape::Shape;

/// `(outer, extent, inner)` view of a reduction.
fn split(shape: &Shape, axis: Option<usize>) -> (usize, usize, usize) {
    match axis {
        None => (1, shape.numel(), 1),
        Some(a) => {
            let d = shape.dims();
            (d[..a].iter().product(), d[a], d[a + 1..].iter().product())
        }
    }
}

fn fold_lanes<T: Copy, A>(
    x: &[T],
    (outer, extent, inner): (usize, usize, usize),
    init: impl Fn() -> A,
    step: impl Fn(A, usize, T) -> A,
) -> Vec<A> {
    let mut out = Vec::with_capacity(outer * inner);
    for o in 0..outer {
        for i in 0..inner {
            let mut acc = init();
            for k in 0..extent {
                acc = step(acc, k, x[(o * extent + k) * inner + i]);
            }
            out.push(acc);
        }
    }
    out
}

fn sum_wrapping<T: Element + WrappingAdd + Zero>(x: &[T], dims: (usize, usize, usize)) -> Vec<T> {
    fold_lanes(x, dims, T::zero, |acc, _, v| acc.wrapping_add(&v))
}

#[allow(clippy::neg_cmp_op_on_partial_ord)]
fn extremum<T: Element>(x: &[T], dims: (usize, usize, usize), want_max: bool) -> Vec<T> {
    // Extent is non-zero (validated at inference). NaN is sticky.
    let r = fold_lanes(
        x,
        dims,
        || None::<T>,
        |acc, _, v| match acc {
            None => Some(v),
            #[allow(clippy::eq_op)]
            Some(a) if a != a => Some(a),
            Some(a) => {
                let better = if want_max { !(v <= a) } else { !(v >= a) };
                Some(if better { v } else { a })
            }
        },
    );
    r.into_iter().map(|v| v.unwrap_or_default()).collect()
}

#[allow(clippy::neg_cmp_op_on_partial_ord)]
fn argmax<T: Element>(x: &[T], dims: (usize, usize, usize)) -> Vec<i64> {
    fold_lanes(
        x,
        dims,
        || (0i64, None::<T>),
        |(bi, best), k, v| match best {
            Some(b) if !(v > b) => (bi, Some(b)),
            _ => (k as i64, Some(v)),
        },
    )
    .into_iter()
    .map(|(i, _)| i)
    .collect()
}

pub fn reduce(op: ReduceOp, shape: &Shape, axis: Option<usize>, x: &Buffer) -> Buffer {
    let dims = split(shape, axis);
    match op {
        ReduceOp::Sum => match x {
            // f32 lanes accumulate in f64.
            Buffer::F32(v) => Buffer::F32(
                fold_lanes(v, dims, || 0f64, |a, _, e| a + e as f64)
                    .into_iter()
                    .map(|s| s as f32)
                    .collect(),
            ),
            Buffer::F64(v) => Buffer::F64(fold_lanes(v, dims, || 0f64, |a, _, e| a + e)),
            Buffer::I32(v) => Buffer::I32(sum_wrapping(v, dims)),
            Buffer::I64(v) => Buffer::I64(sum_wrapping(v, dims)),
            Buffer::U8(v) => Buffer::U8(sum_wrapping(v, dims)),
            Buffer::Bool(_) => reduce(op, shape, axis, &x.cast(DType::I64)),
        },
        ReduceOp::Max | ReduceOp::Min => {
            let want_max = op == ReduceOp::Max;
            crate::with_buffer!(x, v => Element::into_buffer(extremum(v, dims, want_max)))
        }
        ReduceOp::ArgMax => Buffer::I64(crate::with_buffer!(x, v => argmax(v, dims))),
    }
}
