use crate::dtype::{Buffer, DType, Element};
use crate::op::Window;
use crate::shape::Shape;

/// `c[m,n] = a[m,k] · b[k,n]` in f64 (all row-major, contiguous).
fn dgemm(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: slices are exactly m*k, k*n and m*n long with row-major strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            n as isize,
            1,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn int_gemm(m: usize, k: usize, n: usize, a: &[i64], b: &[i64], c: &mut [i64]) {
    for i in 0..m {
        for p in 0..k {
            let av = a[i * k + p];
            for j in 0..n {
                c[i * n + j] = c[i * n + j].wrapping_add(av.wrapping_mul(b[p * n + j]));
            }
        }
    }
}

/// Matrix product; f32 operands accumulate in f64.
pub fn matmul(a_shape: &Shape, a: &Buffer, b_shape: &Shape, b: &Buffer, out_dtype: DType) -> Buffer {
    let (batch, m, k) = match a_shape.dims() {
        [m, k] => (1, *m, *k),
        [bs, m, k] => (*bs, *m, *k),
        _ => unreachable!("validated by inference"),
    };
    let n = *b_shape.dims().last().unwrap();
    if out_dtype.is_float() {
        let av = a.cast(DType::F64);
        let bv = b.cast(DType::F64);
        let (Buffer::F64(av), Buffer::F64(bv)) = (&av, &bv) else {
            unreachable!()
        };
        let mut c = vec![0f64; batch * m * n];
        for t in 0..batch {
            dgemm(
                m,
                k,
                n,
                &av[t * m * k..(t + 1) * m * k],
                &bv[t * k * n..(t + 1) * k * n],
                &mut c[t * m * n..(t + 1) * m * n],
            );
        }
        Buffer::F64(c).cast(out_dtype)
    } else {
        let av = a.cast(DType::I64);
        let bv = b.cast(DType::I64);
        let (Buffer::I64(av), Buffer::I64(bv)) = (&av, &bv) else {
            unreachable!()
        };
        let mut c = vec![0i64; batch * m * n];
        for t in 0..batch {
            int_gemm(
                m,
                k,
                n,
                &av[t * m * k..(t + 1) * m * k],
                &bv[t * k * n..(t + 1) * k * n],
                &mut c[t * m * n..(t + 1) * m * n],
            );
        }
        Buffer::I64(c).cast(out_dtype)
    }
}

fn unfold_typed<T: Element>(x: &[T], dims: &[usize], win: &Window, ho: usize, wo: usize) -> Vec<T> {
    let (n, c, h, w) = (dims[0], dims[1], dims[2], dims[3]);
    let (kh, kw) = win.kernel;
    let (sh, sw) = win.stride;
    let (ph, pw) = win.padding;
    let rows = c * kh * kw;
    let l = ho * wo;
    let mut out = vec![T::default(); n * rows * l];
    for b in 0..n {
        for ch in 0..c {
            for i in 0..kh {
                for j in 0..kw {
                    let row = (ch * kh + i) * kw + j;
                    let dst = &mut out[(b * rows + row) * l..(b * rows + row + 1) * l];
                    for oy in 0..ho {
                        let y = (oy * sh + i) as isize - ph as isize;
                        if y < 0 || y >= h as isize {
                            continue;
                        }
                        let src_row = ((b * c + ch) * h + y as usize) * w;
                        for ox in 0..wo {
                            let xx = (ox * sw + j) as isize - pw as isize;
                            if xx >= 0 && xx < w as isize {
                                dst[oy * wo + ox] = x[src_row + xx as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// im2col: `[N,C,H,W] -> [N, C*kh*kw, Ho*Wo]`, zero padding.
pub fn unfold(shape: &Shape, x: &Buffer, win: &Window) -> Buffer {
    let d = shape.dims();
    let (ho, wo) = win.output_hw(d[2], d[3]).expect("validated by inference");
    crate::with_buffer!(x, v => Element::into_buffer(unfold_typed(v, d, win, ho, wo)))
}

fn fold_f64(cols: &[f64], n: usize, c: usize, h: usize, w: usize, win: &Window) -> Vec<f64> {
    let (kh, kw) = win.kernel;
    let (sh, sw) = win.stride;
    let (ph, pw) = win.padding;
    let (ho, wo) = win.output_hw(h, w).expect("validated by inference");
    let rows = c * kh * kw;
    let l = ho * wo;
    let mut out = vec![0f64; n * c * h * w];
    for b in 0..n {
        for ch in 0..c {
            for i in 0..kh {
                for j in 0..kw {
                    let row = (ch * kh + i) * kw + j;
                    let src = &cols[(b * rows + row) * l..(b * rows + row + 1) * l];
                    for oy in 0..ho {
                        let y = (oy * sh + i) as isize - ph as isize;
                        if y < 0 || y >= h as isize {
                            continue;
                        }
                        let dst_row = ((b * c + ch) * h + y as usize) * w;
                        for ox in 0..wo {
                            let xx = (ox * sw + j) as isize - pw as isize;
                            if xx >= 0 && xx < w as isize {
                                out[dst_row + xx as usize] += src[oy * wo + ox];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// col2im: scatter-add `[N, C*kh*kw, L]` patches into `[N,C,H,W]`.
pub fn fold(shape: &Shape, x: &Buffer, win: &Window, h: usize, w: usize) -> Buffer {
    let d = shape.dims();
    let c = d[1] / (win.kernel.0 * win.kernel.1);
    let v = x.cast(DType::F64);
    let Buffer::F64(v) = &v else { unreachable!() };
    Buffer::F64(fold_f64(v, d[0], c, h, w, win)).cast(x.dtype())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unfold_single_patch_is_flatten() {
        let s = Shape::from([1, 2, 2, 2]);
        let x = Buffer::F32((0..8).map(|i| i as f32).collect());
        let win = Window::new((2, 2), (1, 1), (0, 0));
        assert_eq!(unfold(&s, &x, &win), x);
    }

    #[test]
    fn fold_counts_overlaps() {
        // Ones unfolded then folded = number of windows covering each pixel.
        let win = Window::new((2, 2), (1, 1), (0, 0));
        let ones = Buffer::F64(vec![1.0; 4 * 4]);
        let cols = Shape::from([1, 4, 4]);
        let out = fold(&cols, &ones, &win, 3, 3).to_f64_vec();
        assert_eq!(out, vec![1.0, 2.0, 1.0, 2.0, 4.0, 2.0, 1.0, 2.0, 1.0]);
    }
}
