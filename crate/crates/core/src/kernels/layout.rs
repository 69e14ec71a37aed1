use crate::dtype::{Buffer, DType};
use crate::kernels::index::strided_offsets;
use crate::shape::Shape;

pub fn permute(shape: &Shape, x: &Buffer, perm: &[usize]) -> Buffer {
    let strides = shape.strides();
    let dims: Vec<usize> = perm.iter().map(|&p| shape.dims()[p]).collect();
    let st: Vec<usize> = perm.iter().map(|&p| strides[p]).collect();
    x.gather(&strided_offsets(&dims, &st, 0, 0, shape.numel()))
}

pub fn slice(shape: &Shape, x: &Buffer, ranges: &[(usize, usize)]) -> Buffer {
    let strides = shape.strides();
    let dims: Vec<usize> = ranges.iter().map(|(a, b)| b - a).collect();
    let base: usize = ranges.iter().zip(&strides).map(|((a, _), s)| a * s).sum();
    let count = dims.iter().product();
    x.gather(&strided_offsets(&dims, &strides, base, 0, count))
}

pub fn concat(inputs: &[(&Shape, &Buffer)], axis: usize, out_dtype: DType) -> Buffer {
    let first = inputs[0].0.dims();
    let outer: usize = first[..axis].iter().product();
    let inner: usize = first[axis + 1..].iter().product();
    let total: usize = inputs.iter().map(|(s, _)| s.numel()).sum();
    let cast: Vec<Buffer> = inputs.iter().map(|(_, b)| b.cast(out_dtype)).collect();
    let mut out = Buffer::with_capacity(out_dtype, total);
    for o in 0..outer {
        for ((s, _), b) in inputs.iter().zip(&cast) {
            let run = s.dims()[axis] * inner;
            out.extend_range(b, o * run, (o + 1) * run);
        }
    }
    out
}

pub fn tile(shape: &Shape, x: &Buffer, reps: &[usize]) -> Buffer {
    let in_dims = shape.dims();
    let out_dims: Vec<usize> = in_dims.iter().zip(reps).map(|(d, r)| d * r).collect();
    let strides = shape.strides();
    let n: usize = out_dims.iter().product();
    let mut idx = vec![0usize; out_dims.len()];
    let mut offs = Vec::with_capacity(n);
    for _ in 0..n {
        offs.push(
            idx.iter()
                .zip(in_dims)
                .zip(&strides)
                .map(|((i, d), s)| (i % d) * s)
                .sum(),
        );
        for ax in (0..idx.len()).rev() {
            idx[ax] += 1;
            if idx[ax] < out_dims[ax] {
                break;
            }
            idx[ax] = 0;
        }
    }
    x.gather(&offs)
}

pub fn pad(shape: &Shape, x: &Buffer, widths: &[(usize, usize)], value: f64) -> Buffer {
    let out_dims: Vec<usize> = shape.dims().iter().zip(widths).map(|(d, (a, b))| d + a + b).collect();
    let n: usize = out_dims.iter().product();
    let mut out = Buffer::full(x.dtype(), n, value);
    // Write every input element at its shifted position.
    let out_strides = Shape::new(out_dims).expect("rank preserved").strides();
    let base: usize = widths.iter().zip(&out_strides).map(|((a, _), s)| a * s).sum();
    let targets = strided_offsets(shape.dims(), &out_strides, base, 0, shape.numel());
    macro_rules! scatter {
        ($o:expr, $i:expr) => {
            for (k, &t) in targets.iter().enumerate() {
                $o[t] = $i[k];
            }
        };
    }
    match (&mut out, x) {
        (Buffer::Bool(o), Buffer::Bool(i)) => scatter!(o, i),
        (Buffer::U8(o), Buffer::U8(i)) => scatter!(o, i),
        (Buffer::I32(o), Buffer::I32(i)) => scatter!(o, i),
        (Buffer::I64(o), Buffer::I64(i)) => scatter!(o, i),
        (Buffer::F32(o), Buffer::F32(i)) => scatter!(o, i),
        (Buffer::F64(o), Buffer::F64(i)) => scatter!(o, i),
        _ => unreachable!(),
    }
    out
}
