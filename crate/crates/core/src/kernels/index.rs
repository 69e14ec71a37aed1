/// Source offsets for `count` consecutive row-major positions of a tensor
/// with extents `dims`, starting at linear position `start`, where axis `i`
/// advances the source by `strides[i]`.
pub fn strided_offsets(dims: &[usize], strides: &[usize], base: usize, start: usize, count: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(count);
    if count == 0 {
        return out;
    }
    let rank = dims.len();
    let mut idx = vec![0usize; rank];
    let mut rem = start;
    for i in (0..rank).rev() {
        idx[i] = rem % dims[i];
        rem /= dims[i];
    }
    let mut off = base + idx.iter().zip(strides).map(|(i, s)| i * s).sum::<usize>();
    for _ in 0..count {
        out.push(off);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            off += strides[ax];
            if idx[ax] < dims[ax] {
                break;
            }
            off -= strides[ax] * dims[ax];
            idx[ax] = 0;
        }
    }
    out
}
