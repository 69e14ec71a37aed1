//! Primitive operation descriptors.
//!
//! An [`Op`] is the complete description of one backend call. Backends only
//! ever see `Op`s; everything else in the library (broadcasting helpers,
//! activations, losses, pooling, convolution, optimizers) is composed from
//! them. [`PRIMITIVES`] is the registry of distinct primitive names and is
//! capped at [`MAX_PRIMITIVES`].

use std::sync::Arc;

use crate::dtype::{Buffer, DType};
use crate::error::{Error, Result};
use crate::shape::Shape;

pub const MAX_PRIMITIVES: usize = 60;

/// Every primitive a backend implements, by name.
pub const PRIMITIVES: &[&str] = &[
    // creation
    "full",
    "arange",
    "identity",
    "rand_uniform",
    "rand_normal",
    "from_host",
    // unary
    "neg",
    "abs",
    "exp",
    "log",
    "sqrt",
    "sin",
    "cos",
    "tanh",
    "sigmoid",
    "clip",
    "logical_not",
    "astype",
    // binary
    "add",
    "sub",
    "mul",
    "div",
    "pow",
    "minimum",
    "maximum",
    "eq",
    "lt",
    "gt",
    "logical_and",
    "logical_or",
    // selection
    "where",
    // reductions
    "sum",
    "max",
    "min",
    "argmax",
    // linear algebra and convolution
    "matmul",
    "unfold",
    "fold",
    // shape manipulation
    "reshape",
    "transpose",
    "concat",
    "slice",
    "tile",
    "pad",
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum UnaryOp {
    Neg,
    Abs,
    Exp,
    Log,
    Sqrt,
    Sin,
    Cos,
    Tanh,
    Sigmoid,
    Clip { lo: f64, hi: f64 },
    LogicalNot,
    AsType(DType),
}

impl UnaryOp {
    pub fn name(self) -> &'static str {
        match self {
            UnaryOp::Neg => "neg",
            UnaryOp::Abs => "abs",
            UnaryOp::Exp => "exp",
            UnaryOp::Log => "log",
            UnaryOp::Sqrt => "sqrt",
            UnaryOp::Sin => "sin",
            UnaryOp::Cos => "cos",
            UnaryOp::Tanh => "tanh",
            UnaryOp::Sigmoid => "sigmoid",
            UnaryOp::Clip { .. } => "clip",
            UnaryOp::LogicalNot => "logical_not",
            UnaryOp::AsType(_) => "astype",
        }
    }

    pub fn output_dtype(self, input: DType) -> DType {
        match self {
            UnaryOp::AsType(d) => d,
            UnaryOp::LogicalNot => DType::Bool,
            _ => input,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
    Minimum,
    Maximum,
    Eq,
    Lt,
    Gt,
    LogicalAnd,
    LogicalOr,
}

impl BinaryOp {
    pub fn name(self) -> &'static str {
        match self {
            BinaryOp::Add => "add",
            BinaryOp::Sub => "sub",
            BinaryOp::Mul => "mul",
            BinaryOp::Div => "div",
            BinaryOp::Pow => "pow",
            BinaryOp::Minimum => "minimum",
            BinaryOp::Maximum => "maximum",
            BinaryOp::Eq => "eq",
            BinaryOp::Lt => "lt",
            BinaryOp::Gt => "gt",
            BinaryOp::LogicalAnd => "logical_and",
            BinaryOp::LogicalOr => "logical_or",
        }
    }

    pub fn yields_bool(self) -> bool {
        matches!(
            self,
            BinaryOp::Eq | BinaryOp::Lt | BinaryOp::Gt | BinaryOp::LogicalAnd | BinaryOp::LogicalOr
        )
    }

    /// Dtype computations are carried out in, before any result conversion.
    pub fn compute_dtype(self, a: DType, b: DType) -> DType {
        match self {
            BinaryOp::Div => a.division_result(b),
            _ => a.promote(b),
        }
    }

    pub fn output_dtype(self, a: DType, b: DType) -> DType {
        if self.yields_bool() {
            DType::Bool
        } else {
            self.compute_dtype(a, b)
        }
    }
}

/// Scalar right-hand operands are weakly typed: they adopt the tensor's
/// dtype unless that would truncate a fractional value.
pub fn scalar_dtype(tensor: DType, scalar: f64) -> DType {
    if tensor.is_float() || scalar.fract() == 0.0 {
        tensor
    } else {
        DType::F32
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReduceOp {
    Sum,
    Max,
    Min,
    ArgMax,
}

impl ReduceOp {
    pub fn name(self) -> &'static str {
        match self {
            ReduceOp::Sum => "sum",
            ReduceOp::Max => "max",
            ReduceOp::Min => "min",
            ReduceOp::ArgMax => "argmax",
        }
    }
}

/// Sliding-window geometry shared by unfold, fold and the derived conv/pool ops.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Window {
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub padding: (usize, usize),
}

impl Window {
    pub fn new(kernel: (usize, usize), stride: (usize, usize), padding: (usize, usize)) -> Self {
        Window {
            kernel,
            stride,
            padding,
        }
    }

    /// Output spatial extents for an `h`×`w` input.
    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let (kh, kw) = self.kernel;
        let (sh, sw) = self.stride;
        let (ph, pw) = self.padding;
        if sh == 0 || sw == 0 || kh == 0 || kw == 0 {
            return Err(Error::shape("kernel and stride extents must be positive"));
        }
        if kh > h + 2 * ph || kw > w + 2 * pw {
            return Err(Error::shape(format!(
                "kernel {kh}x{kw} larger than padded input {}x{}",
                h + 2 * ph,
                w + 2 * pw
            )));
        }
        Ok(((h + 2 * ph - kh) / sh + 1, (w + 2 * pw - kw) / sw + 1))
    }
}

/// Host interchange value: row-major buffer plus shape.
#[derive(Debug, Clone, PartialEq)]
pub struct HostBuffer {
    pub shape: Shape,
    pub data: Buffer,
}

impl HostBuffer {
    pub fn new(shape: Shape, data: Buffer) -> Result<Self> {
        if shape.numel() != data.len() {
            return Err(Error::shape(format!(
                "buffer of {} elements cannot have shape {shape}",
                data.len()
            )));
        }
        Ok(HostBuffer { shape, data })
    }

    pub fn dtype(&self) -> DType {
        self.data.dtype()
    }

    /// Little-endian row-major bytes of the payload.
    pub fn bytes(&self) -> Vec<u8> {
        self.data.to_le_bytes()
    }

    pub fn from_bytes(shape: Shape, dtype: DType, bytes: &[u8]) -> Result<Self> {
        HostBuffer::new(shape, Buffer::from_le_bytes(dtype, bytes)?)
    }
}

/// One primitive call with all of its static parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum Op {
    Full {
        shape: Shape,
        dtype: DType,
        value: f64,
    },
    Arange {
        len: usize,
        dtype: DType,
    },
    Identity {
        n: usize,
        dtype: DType,
    },
    RandUniform {
        shape: Shape,
        dtype: DType,
        low: f64,
        high: f64,
        seed: u64,
    },
    RandNormal {
        shape: Shape,
        dtype: DType,
        mean: f64,
        std: f64,
        seed: u64,
    },
    FromHost(Arc<HostBuffer>),
    Unary(UnaryOp),
    Binary(BinaryOp),
    /// Binary op whose right operand is a scalar literal.
    BinaryScalar {
        op: BinaryOp,
        scalar: f64,
    },
    /// `where(cond, a, b)` over three broadcast operands.
    Select,
    Reduce {
        op: ReduceOp,
        axis: Option<usize>,
        keep_dims: bool,
    },
    MatMul,
    /// `[N,C,H,W] -> [N, C*kh*kw, Ho*Wo]` patch extraction (im2col).
    Unfold(Window),
    /// Adjoint of unfold: scatter-add patches back into `[N,C,H,W]`.
    Fold {
        window: Window,
        height: usize,
        width: usize,
    },
    Reshape(Shape),
    /// General axis permutation; `transpose` in the registry.
    Permute(Vec<usize>),
    Concat {
        axis: usize,
    },
    /// Per-axis half-open ranges.
    Slice(Vec<(usize, usize)>),
    Tile(Vec<usize>),
    Pad {
        widths: Vec<(usize, usize)>,
        value: f64,
    },
}

impl Op {
    /// Registry entry this call belongs to.
    pub fn primitive_name(&self) -> &'static str {
        match self {
            Op::Full { .. } => "full",
            Op::Arange { .. } => "arange",
            Op::Identity { .. } => "identity",
            Op::RandUniform { .. } => "rand_uniform",
            Op::RandNormal { .. } => "rand_normal",
            Op::FromHost(_) => "from_host",
            Op::Unary(u) => u.name(),
            Op::Binary(b) | Op::BinaryScalar { op: b, .. } => b.name(),
            Op::Select => "where",
            Op::Reduce { op, .. } => op.name(),
            Op::MatMul => "matmul",
            Op::Unfold(_) => "unfold",
            Op::Fold { .. } => "fold",
            Op::Reshape(_) => "reshape",
            Op::Permute(_) => "transpose",
            Op::Concat { .. } => "concat",
            Op::Slice(_) => "slice",
            Op::Tile(_) => "tile",
            Op::Pad { .. } => "pad",
        }
    }

    pub fn arity(&self) -> Option<usize> {
        match self {
            Op::Full { .. }
            | Op::Arange { .. }
            | Op::Identity { .. }
            | Op::RandUniform { .. }
            | Op::RandNormal { .. }
            | Op::FromHost(_) => Some(0),
            Op::Binary(_) | Op::MatMul => Some(2),
            Op::Select => Some(3),
            Op::Concat { .. } => None,
            _ => Some(1),
        }
    }

    /// Pointwise ops that a deferred backend may fuse into a single loop.
    pub fn is_elementwise(&self) -> bool {
        matches!(
            self,
            Op::Unary(_) | Op::Binary(_) | Op::BinaryScalar { .. } | Op::Select | Op::Full { .. }
        )
    }

    /// Shape and dtype of the result, validating every static precondition.
    pub fn infer(&self, inputs: &[(&Shape, DType)]) -> Result<(Shape, DType)> {
        if let Some(n) = self.arity() {
            if inputs.len() != n {
                return Err(Error::shape(format!(
                    "{} expects {n} operands, got {}",
                    self.primitive_name(),
                    inputs.len()
                )));
            }
        }
        match self {
            Op::Full { shape, dtype, .. }
            | Op::RandUniform { shape, dtype, .. }
            | Op::RandNormal { shape, dtype, .. } => Ok((shape.clone(), *dtype)),
            Op::Arange { len, dtype } => Ok((Shape::new(vec![*len])?, *dtype)),
            Op::Identity { n, dtype } => Ok((Shape::new(vec![*n, *n])?, *dtype)),
            Op::FromHost(h) => Ok((h.shape.clone(), h.dtype())),
            Op::Unary(u) => Ok((inputs[0].0.clone(), u.output_dtype(inputs[0].1))),
            Op::Binary(b) => {
                let shape = inputs[0].0.broadcast(inputs[1].0)?;
                Ok((shape, b.output_dtype(inputs[0].1, inputs[1].1)))
            }
            Op::BinaryScalar { op, scalar } => {
                let (shape, dtype) = inputs[0];
                let sd = scalar_dtype(dtype, *scalar);
                Ok((shape.clone(), op.output_dtype(dtype, sd)))
            }
            Op::Select => {
                let shape = inputs[0].0.broadcast(inputs[1].0)?.broadcast(inputs[2].0)?;
                Ok((shape, inputs[1].1.promote(inputs[2].1)))
            }
            Op::Reduce { op, axis, keep_dims } => infer_reduce(*op, *axis, *keep_dims, inputs[0].0, inputs[0].1),
            Op::MatMul => infer_matmul(inputs[0].0, inputs[1].0).map(|s| (s, inputs[0].1.promote(inputs[1].1))),
            Op::Unfold(win) => {
                let s = inputs[0].0;
                if s.rank() != 4 {
                    return Err(Error::shape(format!("unfold expects [N,C,H,W], got {s}")));
                }
                let d = s.dims();
                let (ho, wo) = win.output_hw(d[2], d[3])?;
                let shape = Shape::new(vec![d[0], d[1] * win.kernel.0 * win.kernel.1, ho * wo])?;
                Ok((shape, inputs[0].1))
            }
            Op::Fold { window, height, width } => {
                let s = inputs[0].0;
                let k = window.kernel.0 * window.kernel.1;
                let (ho, wo) = window.output_hw(*height, *width)?;
                if s.rank() != 3 || !s.dims()[1].is_multiple_of(k) || s.dims()[2] != ho * wo {
                    return Err(Error::shape(format!(
                        "fold cannot map {s} onto {height}x{width} with kernel {:?}",
                        window.kernel
                    )));
                }
                let shape = Shape::new(vec![s.dims()[0], s.dims()[1] / k, *height, *width])?;
                Ok((shape, inputs[0].1))
            }
            Op::Reshape(target) => {
                if target.numel() != inputs[0].0.numel() {
                    return Err(Error::shape(format!("cannot reshape {} into {target}", inputs[0].0)));
                }
                Ok((target.clone(), inputs[0].1))
            }
            Op::Permute(perm) => {
                let s = inputs[0].0;
                let mut seen = vec![false; s.rank()];
                if perm.len() != s.rank() {
                    return Err(Error::shape(format!("permutation {perm:?} for shape {s}")));
                }
                for &p in perm {
                    if p >= s.rank() || seen[p] {
                        return Err(Error::shape(format!("invalid permutation {perm:?}")));
                    }
                    seen[p] = true;
                }
                let dims = perm.iter().map(|&p| s.dims()[p]).collect::<Vec<_>>();
                Ok((Shape::new(dims)?, inputs[0].1))
            }
            Op::Concat { axis } => infer_concat(*axis, inputs),
            Op::Slice(ranges) => {
                let s = inputs[0].0;
                if ranges.len() != s.rank() {
                    return Err(Error::shape(format!("slice needs {} ranges", s.rank())));
                }
                let mut dims = Vec::with_capacity(s.rank());
                for (i, &(a, b)) in ranges.iter().enumerate() {
                    if a > b || b > s.dims()[i] {
                        return Err(Error::shape(format!(
                            "slice {a}..{b} out of bounds for axis {i} of {s}"
                        )));
                    }
                    dims.push(b - a);
                }
                Ok((Shape::new(dims)?, inputs[0].1))
            }
            Op::Tile(reps) => {
                let s = inputs[0].0;
                if reps.len() != s.rank() {
                    return Err(Error::shape(format!("tile needs {} repetitions", s.rank())));
                }
                let dims = s.dims().iter().zip(reps).map(|(d, r)| d * r).collect::<Vec<_>>();
                Ok((Shape::new(dims)?, inputs[0].1))
            }
            Op::Pad { widths, .. } => {
                let s = inputs[0].0;
                if widths.len() != s.rank() {
                    return Err(Error::shape(format!("pad needs {} widths", s.rank())));
                }
                let dims = s
                    .dims()
                    .iter()
                    .zip(widths)
                    .map(|(d, (a, b))| d + a + b)
                    .collect::<Vec<_>>();
                Ok((Shape::new(dims)?, inputs[0].1))
            }
        }
    }
}

fn infer_reduce(
    op: ReduceOp,
    axis: Option<usize>,
    keep_dims: bool,
    shape: &Shape,
    dtype: DType,
) -> Result<(Shape, DType)> {
    let out_dtype = match op {
        ReduceOp::ArgMax => DType::I64,
        ReduceOp::Sum if dtype == DType::Bool => DType::I64,
        _ => dtype,
    };
    match axis {
        None => {
            if op == ReduceOp::ArgMax {
                return Err(Error::shape("argmax requires an axis"));
            }
            if op != ReduceOp::Sum && shape.numel() == 0 {
                return Err(Error::EmptyReduction);
            }
            let out = if keep_dims {
                Shape::new(vec![1; shape.rank()])?
            } else {
                Shape::scalar()
            };
            Ok((out, out_dtype))
        }
        Some(a) => {
            let extent = shape.dim(a)?;
            if op != ReduceOp::Sum && extent == 0 {
                return Err(Error::EmptyReduction);
            }
            Ok((shape.reduced(a, keep_dims), out_dtype))
        }
    }
}

fn infer_matmul(a: &Shape, b: &Shape) -> Result<Shape> {
    let mismatch = || Error::shape(format!("matmul operands {a} and {b} are incompatible"));
    match (a.dims(), b.dims()) {
        ([m, k], [k2, n]) if k == k2 => Shape::new(vec![*m, *n]),
        ([bs, m, k], [bs2, k2, n]) if k == k2 && bs == bs2 => Shape::new(vec![*bs, *m, *n]),
        _ => Err(mismatch()),
    }
}

fn infer_concat(axis: usize, inputs: &[(&Shape, DType)]) -> Result<(Shape, DType)> {
    let Some(&(first, mut dtype)) = inputs.first() else {
        return Err(Error::shape("concat of zero tensors"));
    };
    first.check_axis(axis)?;
    let mut dims = first.dims().to_vec();
    for &(s, d) in &inputs[1..] {
        if s.rank() != first.rank()
            || s.dims()
                .iter()
                .zip(first.dims())
                .enumerate()
                .any(|(i, (x, y))| i != axis && x != y)
        {
            return Err(Error::shape(format!(
                "concat along axis {axis}: {s} does not match {first}"
            )));
        }
        dims[axis] += s.dims()[axis];
        dtype = dtype.promote(d);
    }
    Ok((Shape::new(dims)?, dtype))
}
