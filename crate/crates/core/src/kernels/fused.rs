//! Blocked evaluation of pointwise expression trees.
//!
//! A [`Program`] is a DAG of pointwise steps over broadcast sources. It is
//! evaluated block by block, so intermediates only ever occupy block-sized
//! scratch space and the only full-size buffer produced is the result. The
//! eager backend runs every pointwise primitive as a one-step program.

use crate::dtype::Buffer;
use crate::dtype::DType;
use crate::error::Result;
use crate::kernels::index::strided_offsets;
use crate::kernels::pointwise;
use crate::op::{scalar_dtype, BinaryOp, UnaryOp};
use crate::shape::Shape;

const BLOCK: usize = 4096;

pub enum Source<'a> {
    Dense { shape: &'a Shape, data: &'a Buffer },
    Constant { value: f64, dtype: DType },
}

/// Operands refer to earlier values: sources first, then step results.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Step {
    Unary(UnaryOp, usize),
    Binary(BinaryOp, usize, usize),
    Scalar(BinaryOp, usize, f64),
    Select(usize, usize, usize),
}

#[derive(Default)]
pub struct Program<'a> {
    pub sources: Vec<Source<'a>>,
    pub steps: Vec<Step>,
    /// Dtype each step's result is cast to; empty leaves kernel dtypes alone.
    pub step_dtypes: Vec<DType>,
}

impl<'a> Program<'a> {
    pub fn single(step: Step, sources: Vec<Source<'a>>) -> Self {
        Program {
            sources,
            steps: vec![step],
            step_dtypes: Vec::new(),
        }
    }

    /// Evaluates the program; the last step is the result.
    pub fn evaluate(&self, out_shape: &Shape, out_dtype: DType) -> Result<Buffer> {
        let n = out_shape.numel();
        let mut out = Buffer::with_capacity(out_dtype, n);
        let strides: Vec<Option<Vec<usize>>> = self
            .sources
            .iter()
            .map(|s| match s {
                Source::Dense { shape, .. } if *shape != out_shape => Some(shape.broadcast_strides(out_shape)),
                _ => None,
            })
            .collect();
        let mut start = 0;
        while start < n {
            let len = BLOCK.min(n - start);
            let mut values: Vec<Buffer> = Vec::with_capacity(self.sources.len() + self.steps.len());
            for (src, st) in self.sources.iter().zip(&strides) {
                values.push(match src {
                    Source::Constant { value, dtype } => Buffer::full(*dtype, len, *value),
                    Source::Dense { data, .. } => match st {
                        None => {
                            let mut b = Buffer::with_capacity(data.dtype(), len);
                            b.extend_range(data, start, start + len);
                            b
                        }
                        Some(st) => {
                            let offs = strided_offsets(out_shape.dims(), st, 0, start, len);
                            let mut b = Buffer::with_capacity(data.dtype(), len);
                            data.gather_into(&offs, &mut b);
                            b
                        }
                    },
                });
            }
            for (k, step) in self.steps.iter().enumerate() {
                let v = match *step {
                    Step::Unary(op, a) => pointwise::unary(op, &values[a]),
                    Step::Binary(op, a, b) => pointwise::binary(op, &values[a], &values[b])?,
                    Step::Scalar(op, a, s) => {
                        let d = scalar_dtype(values[a].dtype(), s);
                        pointwise::binary(op, &values[a], &Buffer::full(d, len, s))?
                    }
                    Step::Select(c, a, b) => pointwise::select(&values[c], &values[a], &values[b]),
                };
                let v = match self.step_dtypes.get(k) {
                    Some(&d) if d != v.dtype() => v.cast(d),
                    _ => v,
                };
                values.push(v);
            }
            let last = values.pop().expect("program without steps");
            out.extend_from(&last.cast(out_dtype));
            start += len;
        }
        Ok(out)
    }
}
