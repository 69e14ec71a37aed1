//! Scalar-level kernels over equal-length buffers.
//!
//! These are the only place element arithmetic is defined; both the eager
//! backend and the deferred backend's fused loops call into them, so the two
//! agree bit-for-bit.

use std::borrow::Cow;

use num_traits::{Float, PrimInt, WrappingAdd, WrappingMul, WrappingNeg, WrappingSub};

use crate::dtype::{Buffer, DType, Element};
use crate::error::{Error, Result};
use crate::op::{BinaryOp, UnaryOp};

fn cast_cow(b: &Buffer, to: DType) -> Cow<'_, Buffer> {
    if b.dtype() == to {
        Cow::Borrowed(b)
    } else {
        Cow::Owned(b.cast(to))
    }
}

trait FloatKernel: Element + Float {
    #[inline]
    fn apply_unary(op: UnaryOp, x: Self) -> Self {
        match op {
            UnaryOp::Neg => -x,
            UnaryOp::Abs => x.abs(),
            UnaryOp::Exp => x.exp(),
            UnaryOp::Log => x.ln(),
            UnaryOp::Sqrt => x.sqrt(),
            UnaryOp::Sin => x.sin(),
            UnaryOp::Cos => x.cos(),
            UnaryOp::Tanh => x.tanh(),
            UnaryOp::Sigmoid => {
                if x >= Self::zero() {
                    Self::one() / (Self::one() + (-x).exp())
                } else {
                    let e = x.exp();
                    e / (Self::one() + e)
                }
            }
            UnaryOp::Clip { lo, hi } => {
                let (lo, hi) = (Self::from_f64(lo), Self::from_f64(hi));
                if x < lo {
                    lo
                } else if x > hi {
                    hi
                } else {
                    x
                }
            }
            UnaryOp::LogicalNot | UnaryOp::AsType(_) => unreachable!(),
        }
    }

    #[inline]
    fn apply_binary(op: BinaryOp, x: Self, y: Self) -> Self {
        match op {
            BinaryOp::Add => x + y,
            BinaryOp::Sub => x - y,
            BinaryOp::Mul => x * y,
            BinaryOp::Div => x / y,
            BinaryOp::Pow => x.powf(y),
            BinaryOp::Minimum => {
                if x.is_nan() || y.is_nan() {
                    Self::nan()
                } else if y < x {
                    y
                } else {
                    x
                }
            }
            BinaryOp::Maximum => {
                if x.is_nan() || y.is_nan() {
                    Self::nan()
                } else if y > x {
                    y
                } else {
                    x
                }
            }
            _ => unreachable!(),
        }
    }
}

impl FloatKernel for f32 {}
impl FloatKernel for f64 {}

trait IntKernel: Element + PrimInt + WrappingAdd + WrappingSub + WrappingMul + WrappingNeg {
    fn wrapping_abs(self) -> Self;

    fn wrapping_pow(self, exp: Self) -> Self {
        if exp < Self::zero() {
            return Self::from_f64(self.to_f64().powf(exp.to_f64()));
        }
        let mut e = exp.to_u64().unwrap_or(u64::MAX);
        let mut base = self;
        let mut acc = Self::one();
        while e > 0 {
            if e & 1 == 1 {
                acc = acc.wrapping_mul(&base);
            }
            base = base.wrapping_mul(&base);
            e >>= 1;
        }
        acc
    }

    #[inline]
    fn apply_binary(op: BinaryOp, x: Self, y: Self) -> Self {
        match op {
            BinaryOp::Add => x.wrapping_add(&y),
            BinaryOp::Sub => x.wrapping_sub(&y),
            BinaryOp::Mul => x.wrapping_mul(&y),
            BinaryOp::Pow => x.wrapping_pow(y),
            BinaryOp::Minimum => x.min(y),
            BinaryOp::Maximum => x.max(y),
            _ => unreachable!(),
        }
    }
}

impl IntKernel for i32 {
    fn wrapping_abs(self) -> Self {
        i32::wrapping_abs(self)
    }
}
impl IntKernel for i64 {
    fn wrapping_abs(self) -> Self {
        i64::wrapping_abs(self)
    }
}
impl IntKernel for u8 {
    fn wrapping_abs(self) -> Self {
        self
    }
}

fn float_unary<T: FloatKernel>(op: UnaryOp, x: &[T]) -> Vec<T> {
    x.iter().map(|&v| T::apply_unary(op, v)).collect()
}

fn int_unary<T: IntKernel>(op: UnaryOp, x: &[T]) -> Vec<T> {
    match op {
        UnaryOp::Neg => x.iter().map(|v| v.wrapping_neg()).collect(),
        UnaryOp::Abs => x.iter().map(|v| v.wrapping_abs()).collect(),
        UnaryOp::Clip { lo, hi } => x
            .iter()
            .map(|&v| {
                let f = v.to_f64();
                if f < lo {
                    T::from_f64(lo.ceil())
                } else if f > hi {
                    T::from_f64(hi.floor())
                } else {
                    v
                }
            })
            .collect(),
        // Transcendentals on integers evaluate in f64 and truncate back.
        _ => x
            .iter()
            .map(|&v| T::from_f64(f64::apply_unary(op, v.to_f64())))
            .collect(),
    }
}

pub fn unary(op: UnaryOp, x: &Buffer) -> Buffer {
    match op {
        UnaryOp::AsType(d) => return x.cast(d),
        UnaryOp::LogicalNot => {
            return Buffer::Bool(crate::with_buffer!(x, v => v.iter().map(|e| e.to_f64() == 0.0).collect()))
        }
        _ => {}
    }
    match x {
        Buffer::F32(v) => Buffer::F32(float_unary(op, v)),
        Buffer::F64(v) => Buffer::F64(float_unary(op, v)),
        Buffer::I32(v) => Buffer::I32(int_unary(op, v)),
        Buffer::I64(v) => Buffer::I64(int_unary(op, v)),
        Buffer::U8(v) => Buffer::U8(int_unary(op, v)),
        Buffer::Bool(v) => match op {
            UnaryOp::Neg | UnaryOp::Abs => Buffer::Bool(v.clone()),
            _ => unary(op, &x.cast(DType::U8)).cast(DType::Bool),
        },
    }
}

fn compare<T: PartialOrd + Copy>(op: BinaryOp, x: &[T], y: &[T]) -> Vec<bool> {
    let f: fn(&T, &T) -> bool = match op {
        BinaryOp::Eq => |a, b| a == b,
        BinaryOp::Lt => |a, b| a < b,
        BinaryOp::Gt => |a, b| a > b,
        _ => unreachable!(),
    };
    x.iter().zip(y).map(|(a, b)| f(a, b)).collect()
}

fn zip_with<T: Copy, U>(x: &[T], y: &[T], f: impl Fn(T, T) -> U) -> Vec<U> {
    x.iter().zip(y).map(|(&a, &b)| f(a, b)).collect()
}

/// Elementwise binary op on two buffers of equal length.
pub fn binary(op: BinaryOp, a: &Buffer, b: &Buffer) -> Result<Buffer> {
    debug_assert_eq!(a.len(), b.len());
    if matches!(op, BinaryOp::LogicalAnd | BinaryOp::LogicalOr) {
        let truthy = |buf: &Buffer| -> Vec<bool> {
            crate::with_buffer!(buf, v => v.iter().map(|e| e.to_f64() != 0.0).collect())
        };
        let (x, y) = (truthy(a), truthy(b));
        let out = if op == BinaryOp::LogicalAnd {
            zip_with(&x, &y, |p, q| p && q)
        } else {
            zip_with(&x, &y, |p, q| p || q)
        };
        return Ok(Buffer::Bool(out));
    }
    let promoted = a.dtype().promote(b.dtype());
    if op == BinaryOp::Div && !promoted.is_float() {
        let zero = crate::with_buffer!(b, v => v.iter().any(|e| e.to_f64() == 0.0));
        if zero {
            return Err(Error::Domain("integer division by zero".into()));
        }
    }
    let cd = op.compute_dtype(a.dtype(), b.dtype());
    let (a, b) = (cast_cow(a, cd), cast_cow(b, cd));
    if matches!(op, BinaryOp::Eq | BinaryOp::Lt | BinaryOp::Gt) {
        let out = match (&*a, &*b) {
            (Buffer::F32(x), Buffer::F32(y)) => compare(op, x, y),
            (Buffer::F64(x), Buffer::F64(y)) => compare(op, x, y),
            (Buffer::I32(x), Buffer::I32(y)) => compare(op, x, y),
            (Buffer::I64(x), Buffer::I64(y)) => compare(op, x, y),
            (Buffer::U8(x), Buffer::U8(y)) => compare(op, x, y),
            (Buffer::Bool(x), Buffer::Bool(y)) => compare(op, x, y),
            _ => unreachable!(),
        };
        return Ok(Buffer::Bool(out));
    }
    Ok(match (&*a, &*b) {
        (Buffer::F32(x), Buffer::F32(y)) => Buffer::F32(zip_with(x, y, |p, q| f32::apply_binary(op, p, q))),
        (Buffer::F64(x), Buffer::F64(y)) => Buffer::F64(zip_with(x, y, |p, q| f64::apply_binary(op, p, q))),
        (Buffer::I32(x), Buffer::I32(y)) => Buffer::I32(zip_with(x, y, |p, q| i32::apply_binary(op, p, q))),
        (Buffer::I64(x), Buffer::I64(y)) => Buffer::I64(zip_with(x, y, |p, q| i64::apply_binary(op, p, q))),
        (Buffer::U8(x), Buffer::U8(y)) => Buffer::U8(zip_with(x, y, |p, q| u8::apply_binary(op, p, q))),
        (Buffer::Bool(_), Buffer::Bool(_)) => binary(op, &a.cast(DType::U8), &b.cast(DType::U8))?.cast(DType::Bool),
        _ => unreachable!(),
    })
}

/// `where(cond, a, b)` on equal-length buffers.
pub fn select(cond: &Buffer, a: &Buffer, b: &Buffer) -> Buffer {
    let d = a.dtype().promote(b.dtype());
    let (a, b) = (cast_cow(a, d), cast_cow(b, d));
    let mask: Vec<bool> = crate::with_buffer!(cond, v => v.iter().map(|e| e.to_f64() != 0.0).collect());
    macro_rules! pick {
        ($x:expr, $y:expr, $variant:ident) => {
            Buffer::$variant(
                mask.iter()
                    .zip($x.iter().zip($y.iter()))
                    .map(|(&m, (&p, &q))| if m { p } else { q })
                    .collect(),
            )
        };
    }
    match (&*a, &*b) {
        (Buffer::F32(x), Buffer::F32(y)) => pick!(x, y, F32),
        (Buffer::F64(x), Buffer::F64(y)) => pick!(x, y, F64),
        (Buffer::I32(x), Buffer::I32(y)) => pick!(x, y, I32),
        (Buffer::I64(x), Buffer::I64(y)) => pick!(x, y, I64),
        (Buffer::U8(x), Buffer::U8(y)) => pick!(x, y, U8),
        (Buffer::Bool(x), Buffer::Bool(y)) => pick!(x, y, Bool),
        _ => unreachable!(),
    }
}
