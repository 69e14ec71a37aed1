use super::Tensor;
use crate::backend::dispatch;
use crate::dtype::DType;
use crate::error::{Error, Result};
use crate::op::{BinaryOp, Op, ReduceOp, UnaryOp, Window};
use crate::shape::Shape;

macro_rules! unary_methods {
    ($($name:ident => $op:ident),* $(,)?) => {
        $(
            pub fn $name(&self) -> Result<Tensor> {
                self.unary(UnaryOp::$op)
            }
        )*
    };
}

macro_rules! binary_methods {
    ($($name:ident, $scalar:ident => $op:ident),* $(,)?) => {
        $(
            pub fn $name(&self, other: &Tensor) -> Result<Tensor> {
                self.binary(BinaryOp::$op, other)
            }

            pub fn $scalar(&self, scalar: f64) -> Result<Tensor> {
                self.binary_scalar(BinaryOp::$op, scalar)
            }
        )*
    };
}

impl Tensor {
    fn apply(&self, op: Op, others: &[&Tensor]) -> Result<Tensor> {
        let mut inputs = Vec::with_capacity(1 + others.len());
        inputs.push(self);
        inputs.extend_from_slice(others);
        dispatch(self.backend(), op, &inputs)
    }

    pub fn unary(&self, op: UnaryOp) -> Result<Tensor> {
        self.apply(Op::Unary(op), &[])
    }

    unary_methods! {
        neg => Neg,
        abs => Abs,
        exp => Exp,
        log => Log,
        sqrt => Sqrt,
        sin => Sin,
        cos => Cos,
        tanh => Tanh,
        sigmoid => Sigmoid,
        logical_not => LogicalNot,
    }

    pub fn clip(&self, lo: f64, hi: f64) -> Result<Tensor> {
        self.unary(UnaryOp::Clip { lo, hi })
    }

    pub fn astype(&self, dtype: DType) -> Result<Tensor> {
        if dtype == self.dtype() {
            return Ok(self.clone());
        }
        self.unary(UnaryOp::AsType(dtype))
    }

    pub fn binary(&self, op: BinaryOp, other: &Tensor) -> Result<Tensor> {
        self.apply(Op::Binary(op), &[other])
    }

    pub fn binary_scalar(&self, op: BinaryOp, scalar: f64) -> Result<Tensor> {
        self.apply(Op::BinaryScalar { op, scalar }, &[])
    }

    binary_methods! {
        add, add_scalar => Add,
        sub, sub_scalar => Sub,
        mul, mul_scalar => Mul,
        div, div_scalar => Div,
        pow, pow_scalar => Pow,
        minimum, minimum_scalar => Minimum,
        maximum, maximum_scalar => Maximum,
        eq, eq_scalar => Eq,
        lt, lt_scalar => Lt,
        gt, gt_scalar => Gt,
        logical_and, logical_and_scalar => LogicalAnd,
        logical_or, logical_or_scalar => LogicalOr,
    }

    /// `scalar - self`.
    pub fn rsub_scalar(&self, scalar: f64) -> Result<Tensor> {
        self.neg()?.add_scalar(scalar)
    }

    /// Elementwise `cond ? a : b` with broadcasting.
    pub fn select(cond: &Tensor, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        cond.apply(Op::Select, &[a, b])
    }

    pub fn reduce(&self, op: ReduceOp, axis: Option<usize>, keep_dims: bool) -> Result<Tensor> {
        self.apply(Op::Reduce { op, axis, keep_dims }, &[])
    }

    pub fn sum(&self, axis: Option<usize>, keep_dims: bool) -> Result<Tensor> {
        self.reduce(ReduceOp::Sum, axis, keep_dims)
    }

    pub fn max(&self, axis: Option<usize>, keep_dims: bool) -> Result<Tensor> {
        self.reduce(ReduceOp::Max, axis, keep_dims)
    }

    pub fn min(&self, axis: Option<usize>, keep_dims: bool) -> Result<Tensor> {
        self.reduce(ReduceOp::Min, axis, keep_dims)
    }

    /// Index of the largest entry along `axis` (i64, ties to the lowest).
    pub fn argmax(&self, axis: usize, keep_dims: bool) -> Result<Tensor> {
        self.reduce(ReduceOp::ArgMax, Some(axis), keep_dims)
    }

    /// Sum over every element as a rank-0 tensor.
    pub fn sum_all(&self) -> Result<Tensor> {
        self.sum(None, false)
    }

    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        self.apply(Op::MatMul, &[other])
    }

    pub fn unfold(&self, window: Window) -> Result<Tensor> {
        self.apply(Op::Unfold(window), &[])
    }

    pub fn fold(&self, window: Window, height: usize, width: usize) -> Result<Tensor> {
        self.apply(Op::Fold { window, height, width }, &[])
    }

    pub fn reshape(&self, dims: &[usize]) -> Result<Tensor> {
        if dims == self.dims() {
            return Ok(self.clone());
        }
        self.apply(Op::Reshape(Shape::new(dims)?), &[])
    }

    /// Collapses all axes after the first: `[N, ...] -> [N, rest]`.
    pub fn flatten_batch(&self) -> Result<Tensor> {
        let n = *self.dims().first().ok_or_else(|| Error::shape("flatten of a scalar"))?;
        let rest = self.dims()[1..].iter().product();
        self.reshape(&[n, rest])
    }

    pub fn permute(&self, perm: &[usize]) -> Result<Tensor> {
        self.apply(Op::Permute(perm.to_vec()), &[])
    }

    /// Swaps the last two axes.
    pub fn transpose(&self) -> Result<Tensor> {
        let r = self.rank();
        if r < 2 {
            return Err(Error::shape(format!("transpose needs rank >= 2, got {}", self.shape())));
        }
        let mut perm: Vec<usize> = (0..r).collect();
        perm.swap(r - 2, r - 1);
        self.permute(&perm)
    }

    pub fn concat(tensors: &[&Tensor], axis: usize) -> Result<Tensor> {
        let (first, rest) = tensors
            .split_first()
            .ok_or_else(|| Error::shape("concat of zero tensors"))?;
        first.apply(Op::Concat { axis }, rest)
    }

    /// Stacks equally shaped tensors along a new leading axis.
    pub fn stack(tensors: &[&Tensor]) -> Result<Tensor> {
        let reshaped = tensors
            .iter()
            .map(|t| {
                let mut dims = vec![1];
                dims.extend_from_slice(t.dims());
                t.reshape(&dims)
            })
            .collect::<Result<Vec<_>>>()?;
        Tensor::concat(&reshaped.iter().collect::<Vec<_>>(), 0)
    }

    pub fn slice(&self, ranges: &[(usize, usize)]) -> Result<Tensor> {
        self.apply(Op::Slice(ranges.to_vec()), &[])
    }

    /// `len` entries of `axis` starting at `start`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Tensor> {
        self.shape().check_axis(axis)?;
        let ranges: Vec<(usize, usize)> = self
            .dims()
            .iter()
            .enumerate()
            .map(|(i, &d)| if i == axis { (start, start + len) } else { (0, d) })
            .collect();
        self.slice(&ranges)
    }

    pub fn tile(&self, reps: &[usize]) -> Result<Tensor> {
        self.apply(Op::Tile(reps.to_vec()), &[])
    }

    pub fn pad(&self, widths: &[(usize, usize)], value: f64) -> Result<Tensor> {
        self.apply(
            Op::Pad {
                widths: widths.to_vec(),
                value,
            },
            &[],
        )
    }

    /// Repeats extent-1 axes (after left-padding the rank) to reach `target`.
    pub fn broadcast_to(&self, target: &Shape) -> Result<Tensor> {
        if self.shape() == target {
            return Ok(self.clone());
        }
        if self.shape().broadcast(target)? != *target {
            return Err(Error::shape(format!("cannot broadcast {} to {target}", self.shape())));
        }
        let pad = target.rank() - self.rank();
        let mut dims = vec![1; pad];
        dims.extend_from_slice(self.dims());
        let reps: Vec<usize> = dims
            .iter()
            .zip(target.dims())
            .map(|(&d, &t)| if d == t { 1 } else { t })
            .collect();
        self.reshape(&dims)?.tile(&reps)
    }

    /// Sums away broadcast axes so the result has shape `target`.
    pub fn sum_to_shape(&self, target: &Shape) -> Result<Tensor> {
        if self.shape() == target {
            return Ok(self.clone());
        }
        let extra = self
            .rank()
            .checked_sub(target.rank())
            .ok_or_else(|| Error::shape(format!("cannot reduce {} to {target}", self.shape())))?;
        let mut t = self.clone();
        for axis in 0..self.rank() {
            let want = if axis < extra { 1 } else { target.dims()[axis - extra] };
            let have = self.dims()[axis];
            if have != want {
                if want != 1 {
                    return Err(Error::shape(format!("cannot reduce {} to {target}", self.shape())));
                }
                t = t.sum(Some(axis), true)?;
            }
        }
        t.reshape(target.dims())
    }

    /// Mean over `axis` (or everything) via sum and a scalar divide.
    pub fn mean(&self, axis: Option<usize>, keep_dims: bool) -> Result<Tensor> {
        let count = match axis {
            Some(a) => self.shape().dim(a)?,
            None => self.numel(),
        };
        let s = self.sum(axis, keep_dims)?;
        let s = if s.dtype().is_float() { s } else { s.astype(DType::F32)? };
        s.div_scalar(count as f64)
    }

    /// Population variance.
    pub fn var(&self, axis: Option<usize>, keep_dims: bool) -> Result<Tensor> {
        let m = self.mean(axis, true)?;
        let d = self.sub(&m)?;
        d.mul(&d)?.mean(axis, keep_dims)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn t(v: Vec<f64>, dims: &[usize]) -> Tensor {
        Tensor::from_vec(v, dims).unwrap()
    }

    #[test]
    fn spec_examples() {
        let a = t(vec![1.0, 2.0], &[2]);
        let b = t(vec![3.0, 4.0], &[2]);
        assert_eq!(a.add(&b).unwrap().to_f64_vec().unwrap(), vec![4.0, 6.0]);
        let lt = t(vec![1.0, 5.0], &[2]).lt(&t(vec![3.0, 3.0], &[2])).unwrap();
        assert_eq!(lt.to_vec::<bool>().unwrap(), vec![true, false]);
        assert_eq!(
            Tensor::zeros(&[3], DType::F32)
                .unwrap()
                .cos()
                .unwrap()
                .to_f64_vec()
                .unwrap(),
            vec![1.0; 3]
        );
        let c = t(vec![-2.0, 0.0, 5.0], &[3]).clip(0.0, 1.0).unwrap();
        assert_eq!(c.to_f64_vec().unwrap(), vec![0.0, 0.0, 1.0]);
        assert_eq!(
            Tensor::scalar_value(0.0, DType::F32)
                .unwrap()
                .sigmoid()
                .unwrap()
                .item()
                .unwrap(),
            0.5
        );
        assert_eq!(
            Tensor::ones(&[2, 3], DType::F32)
                .unwrap()
                .sum_all()
                .unwrap()
                .item()
                .unwrap(),
            6.0
        );
        let am = t(vec![1.0, 9.0, 7.0, 2.0], &[2, 2]).argmax(1, false).unwrap();
        assert_eq!((am.dtype(), am.to_vec::<i64>().unwrap()), (DType::I64, vec![1, 0]));
    }

    #[test]
    fn mean_over_columns_matches_brute_force() {
        let x = t(vec![1.0, 2.0, 3.0, 4.0], &[2, 2]);
        let oracle: Vec<f64> = (0..2)
            .map(|c| (0..2).map(|r| [1.0, 2.0, 3.0, 4.0][r * 2 + c]).sum::<f64>() / 2.0)
            .collect();
        assert_eq!(x.mean(Some(0), false).unwrap().to_f64_vec().unwrap(), oracle);
    }

    #[test]
    fn broadcast_add_example() {
        let col = t(vec![1.0, 2.0], &[2, 1]);
        let row = t(vec![10.0, 20.0], &[2]);
        // Oracle: out[i][j] = col[i][0] + row[j].
        let oracle: Vec<f64> = (0..4).map(|k| [1.0, 2.0][k / 2] + [10.0, 20.0][k % 2]).collect();
        let out = col.add(&row).unwrap();
        assert_eq!(out.dims(), &[2, 2]);
        assert_eq!(out.to_f64_vec().unwrap(), oracle);
    }

    #[test]
    fn matmul_examples() {
        let a = t(vec![1.0, 2.0, 3.0, 4.0], &[2, 2]);
        let i = Tensor::identity(2, DType::F64).unwrap();
        assert_eq!(a.matmul(&i).unwrap().to_f64_vec().unwrap(), vec![1.0, 2.0, 3.0, 4.0]);
        let d = t(vec![1.0, 2.0], &[1, 2]).matmul(&t(vec![3.0, 4.0], &[2, 1])).unwrap();
        assert_eq!(d.to_f64_vec().unwrap(), vec![11.0]);
        assert!(matches!(a.matmul(&t(vec![1.0; 3], &[3, 1])), Err(Error::Shape(_))));
    }

    #[test]
    fn shape_op_examples() {
        let r = Tensor::arange(6, DType::I64).unwrap().reshape(&[2, 3]).unwrap();
        assert_eq!(r.dims(), &[2, 3]);
        assert_eq!(r.to_vec::<i64>().unwrap(), vec![0, 1, 2, 3, 4, 5]);
        let tt = r.transpose().unwrap().transpose().unwrap();
        assert_eq!(tt.to_host().unwrap(), r.to_host().unwrap());
        let c = Tensor::concat(&[&t(vec![1.0, 2.0], &[2]), &t(vec![3.0], &[1])], 0).unwrap();
        assert_eq!(c.to_f64_vec().unwrap(), vec![1.0, 2.0, 3.0]);
        assert!(matches!(r.reshape(&[4]), Err(Error::Shape(_))));
    }

    #[test]
    fn integer_division() {
        let a = Tensor::from_vec(vec![7i32, 1], &[2]).unwrap();
        let b = Tensor::from_vec(vec![2i32, 4], &[2]).unwrap();
        let q = a.div(&b).unwrap();
        assert_eq!((q.dtype(), q.to_vec::<f32>().unwrap()), (DType::F32, vec![3.5, 0.25]));
        let z = Tensor::from_vec(vec![0i32, 1], &[2]).unwrap();
        assert!(matches!(a.div(&z), Err(Error::Domain(_))));
    }

    #[test]
    fn sum_to_shape_reverses_broadcast() {
        let g = Tensor::ones(&[4, 2, 3], DType::F64).unwrap();
        let s = g.sum_to_shape(&Shape::from([3, 1])).unwrap_err();
        assert!(matches!(s, Error::Shape(_)));
        let r = g.sum_to_shape(&Shape::from([1, 3])).unwrap();
        assert_eq!((r.dims(), r.to_f64_vec().unwrap()), (&[1usize, 3][..], vec![8.0; 3]));
        let b = t(vec![1.0, 2.0], &[2, 1])
            .broadcast_to(&Shape::from([3, 2, 2]))
            .unwrap();
        assert_eq!(b.to_f64_vec().unwrap(), [1.0, 1.0, 2.0, 2.0].repeat(3));
    }

    fn small_shape() -> impl Strategy<Value = Vec<usize>> {
        prop::collection::vec(1usize..=4, 0..=3)
    }

    /// Maps an output index tuple to an input offset by the stretch rule.
    fn oracle_offset(out_idx: &[usize], in_dims: &[usize]) -> usize {
        let pad = out_idx.len() - in_dims.len();
        let mut off = 0;
        for (k, &d) in in_dims.iter().enumerate() {
            let i = if d == 1 { 0 } else { out_idx[pad + k] };
            off = off * d + i;
        }
        off
    }

    proptest! {
        #[test]
        fn broadcasting_agrees_with_index_oracle(a in small_shape(), b in small_shape()) {
            let x = Tensor::arange(a.iter().product(), DType::F64).unwrap().reshape(&a).unwrap();
            let y = Tensor::arange(b.iter().product(), DType::F64).unwrap().mul_scalar(100.0).unwrap().reshape(&b).unwrap();
            match x.add(&y) {
                Ok(z) => {
                    let dims = z.dims().to_vec();
                    let vals = z.to_f64_vec().unwrap();
                    prop_assert_eq!(vals.len(), dims.iter().product::<usize>());
                    for (flat, &got) in vals.iter().enumerate() {
                        let mut idx = vec![0; dims.len()];
                        let mut r = flat;
                        for ax in (0..dims.len()).rev() {
                            idx[ax] = r % dims[ax];
                            r /= dims[ax];
                        }
                        let expect = oracle_offset(&idx, &a) as f64 + 100.0 * oracle_offset(&idx, &b) as f64;
                        prop_assert_eq!(got, expect);
                    }
                }
                Err(e) => {
                    // Incompatible exactly when some aligned pair differs with neither being 1.
                    let ra = a.iter().rev();
                    let rb = b.iter().rev();
                    prop_assert!(ra.zip(rb).any(|(p, q)| p != q && *p != 1 && *q != 1), "{e}");
                }
            }
        }

        #[test]
        fn round_trips_are_value_identical(dims in prop::collection::vec(1usize..=4, 2..=3), cut in 0usize..4) {
            let n: usize = dims.iter().product();
            let x = Tensor::rand_uniform(&dims, DType::F32, -1.0, 1.0).unwrap();
            let back = x.reshape(&[n]).unwrap().reshape(&dims).unwrap();
            prop_assert_eq!(back.to_host().unwrap(), x.to_host().unwrap());
            let tt = x.transpose().unwrap().transpose().unwrap();
            prop_assert_eq!(tt.to_host().unwrap(), x.to_host().unwrap());
            let c = cut.min(dims[0]);
            let left = x.narrow(0, 0, c).unwrap();
            let right = x.narrow(0, c, dims[0] - c).unwrap();
            let joined = Tensor::concat(&[&left, &right], 0).unwrap();
            prop_assert_eq!(joined.to_host().unwrap(), x.to_host().unwrap());
        }
    }
}
