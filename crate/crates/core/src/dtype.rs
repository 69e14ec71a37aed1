use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Element type tag. Ordered by promotion rank: `bool < u8 < i32 < i64 < f32 < f64`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DType {
    Bool,
    U8,
    I32,
    I64,
    F32,
    F64,
}

impl DType {
    pub const ALL: [DType; 6] = [DType::Bool, DType::U8, DType::I32, DType::I64, DType::F32, DType::F64];

    /// Width of one element in the host interchange format.
    pub fn size_of(self) -> usize {
        match self {
            DType::Bool | DType::U8 => 1,
            DType::I32 | DType::F32 => 4,
            DType::I64 | DType::F64 => 8,
        }
    }

    pub fn is_float(self) -> bool {
        matches!(self, DType::F32 | DType::F64)
    }

    /// Lattice join. Total, commutative and associative because it is `max`
    /// over a total order.
    pub fn promote(self, other: DType) -> DType {
        self.max(other)
    }

    /// Result type of true division: integer and boolean quotients become f32.
    pub fn division_result(self, other: DType) -> DType {
        let p = self.promote(other);
        if p.is_float() {
            p
        } else {
            DType::F32
        }
    }

    pub fn tag(self) -> u8 {
        self as u8
    }

    pub fn from_tag(tag: u8) -> Result<DType> {
        DType::ALL
            .get(tag as usize)
            .copied()
            .ok_or_else(|| Error::DType(format!("unknown dtype tag {tag}")))
    }

    pub fn name(self) -> &'static str {
        match self {
            DType::Bool => "bool",
            DType::U8 => "u8",
            DType::I32 => "i32",
            DType::I64 => "i64",
            DType::F32 => "f32",
            DType::F64 => "f64",
        }
    }

    pub fn parse(s: &str) -> Result<DType> {
        DType::ALL
            .into_iter()
            .find(|d| d.name() == s)
            .ok_or_else(|| Error::DType(format!("unsupported dtype `{s}`")))
    }
}

impl fmt::Display for DType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Rust scalar types that can back a tensor.
pub trait Element: Copy + Default + PartialOrd + Send + Sync + fmt::Debug + 'static {
    const DTYPE: DType;
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn into_buffer(v: Vec<Self>) -> Buffer;
    fn slice(buf: &Buffer) -> Option<&[Self]>;
}

macro_rules! impl_element {
    ($t:ty, $variant:ident, $from:expr, $to:expr) => {
        impl Element for $t {
            const DTYPE: DType = DType::$variant;
            #[inline]
            fn from_f64(v: f64) -> Self {
                let f: fn(f64) -> $t = $from;
                f(v)
            }
            #[inline]
            fn to_f64(self) -> f64 {
                let f: fn($t) -> f64 = $to;
                f(self)
            }
            fn into_buffer(v: Vec<Self>) -> Buffer {
                Buffer::$variant(v)
            }
            fn slice(buf: &Buffer) -> Option<&[Self]> {
                match buf {
                    Buffer::$variant(v) => Some(v),
                    _ => None,
                }
            }
        }
    };
}

impl_element!(f32, F32, |v| v as f32, |x| x as f64);
impl_element!(f64, F64, |v| v, |x| x);
impl_element!(i32, I32, |v| v as i32, |x| x as f64);
impl_element!(i64, I64, |v| v as i64, |x| x as f64);
impl_element!(u8, U8, |v| v as u8, |x| x as f64);
impl_element!(bool, Bool, |v| v != 0.0, |x| if x { 1.0 } else { 0.0 });

/// Typed, contiguous, row-major element storage.
#[derive(Debug, Clone, PartialEq)]
pub enum Buffer {
    Bool(Vec<bool>),
    U8(Vec<u8>),
    I32(Vec<i32>),
    I64(Vec<i64>),
    F32(Vec<f32>),
    F64(Vec<f64>),
}

/// Runs `$body` with `$v` bound to the inner `Vec` of whatever variant
/// `$buf` holds.
#[macro_export]
#[doc(hidden)]
macro_rules! with_buffer {
    ($buf:expr, $v:ident => $body:expr) => {
        match $buf {
            $crate::dtype::Buffer::Bool($v) => $body,
            $crate::dtype::Buffer::U8($v) => $body,
            $crate::dtype::Buffer::I32($v) => $body,
            $crate::dtype::Buffer::I64($v) => $body,
            $crate::dtype::Buffer::F32($v) => $body,
            $crate::dtype::Buffer::F64($v) => $body,
        }
    };
}

impl Buffer {
    pub fn dtype(&self) -> DType {
        match self {
            Buffer::Bool(_) => DType::Bool,
            Buffer::U8(_) => DType::U8,
            Buffer::I32(_) => DType::I32,
            Buffer::I64(_) => DType::I64,
            Buffer::F32(_) => DType::F32,
            Buffer::F64(_) => DType::F64,
        }
    }

    pub fn len(&self) -> usize {
        with_buffer!(self, v => v.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn byte_len(&self) -> usize {
        self.len() * self.dtype().size_of()
    }

    pub fn full(dtype: DType, len: usize, value: f64) -> Buffer {
        fn fill<T: Element>(len: usize, value: f64) -> Buffer {
            T::into_buffer(vec![T::from_f64(value); len])
        }
        match dtype {
            DType::Bool => fill::<bool>(len, value),
            DType::U8 => fill::<u8>(len, value),
            DType::I32 => fill::<i32>(len, value),
            DType::I64 => fill::<i64>(len, value),
            DType::F32 => fill::<f32>(len, value),
            DType::F64 => fill::<f64>(len, value),
        }
    }

    pub fn from_f64_iter(dtype: DType, it: impl Iterator<Item = f64>) -> Buffer {
        fn collect<T: Element>(it: impl Iterator<Item = f64>) -> Buffer {
            T::into_buffer(it.map(T::from_f64).collect())
        }
        match dtype {
            DType::Bool => collect::<bool>(it),
            DType::U8 => collect::<u8>(it),
            DType::I32 => collect::<i32>(it),
            DType::I64 => collect::<i64>(it),
            DType::F32 => collect::<f32>(it),
            DType::F64 => collect::<f64>(it),
        }
    }

    pub fn get_f64(&self, i: usize) -> f64 {
        with_buffer!(self, v => v[i].to_f64())
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        with_buffer!(self, v => v.iter().map(|x| x.to_f64()).collect())
    }

    /// Element conversion. Float to integer saturates (Rust `as` semantics);
    /// anything to bool tests for non-zero.
    pub fn cast(&self, to: DType) -> Buffer {
        if self.dtype() == to {
            return self.clone();
        }
        // Direct f32 <-> f64 keeps the conversion exact in the widening direction.
        match (self, to) {
            (Buffer::F32(v), DType::F64) => Buffer::F64(v.iter().map(|&x| x as f64).collect()),
            (Buffer::F64(v), DType::F32) => Buffer::F32(v.iter().map(|&x| x as f32).collect()),
            (Buffer::I64(v), DType::I32) => Buffer::I32(v.iter().map(|&x| x as i32).collect()),
            (Buffer::I32(v), DType::I64) => Buffer::I64(v.iter().map(|&x| x as i64).collect()),
            (Buffer::I64(v), DType::U8) => Buffer::U8(v.iter().map(|&x| x as u8).collect()),
            (Buffer::I32(v), DType::U8) => Buffer::U8(v.iter().map(|&x| x as u8).collect()),
            _ => with_buffer!(self, v => Buffer::from_f64_iter(to, v.iter().map(|x| x.to_f64()))),
        }
    }

    /// Copies out the elements at `indices`, in order.
    pub fn gather(&self, indices: &[usize]) -> Buffer {
        with_buffer!(self, v => Element::into_buffer(indices.iter().map(|&i| v[i]).collect()))
    }

    /// Appends `indices`-selected elements of `self` to `out`. Both buffers
    /// must share a dtype.
    pub(crate) fn gather_into(&self, indices: &[usize], out: &mut Buffer) {
        macro_rules! arm {
            ($a:expr, $b:expr) => {{
                $b.extend(indices.iter().map(|&i| $a[i]));
            }};
        }
        match (self, out) {
            (Buffer::Bool(a), Buffer::Bool(b)) => arm!(a, b),
            (Buffer::U8(a), Buffer::U8(b)) => arm!(a, b),
            (Buffer::I32(a), Buffer::I32(b)) => arm!(a, b),
            (Buffer::I64(a), Buffer::I64(b)) => arm!(a, b),
            (Buffer::F32(a), Buffer::F32(b)) => arm!(a, b),
            (Buffer::F64(a), Buffer::F64(b)) => arm!(a, b),
            _ => unreachable!("gather_into dtype mismatch"),
        }
    }

    pub(crate) fn extend_from(&mut self, other: &Buffer) {
        match (self, other) {
            (Buffer::Bool(a), Buffer::Bool(b)) => a.extend_from_slice(b),
            (Buffer::U8(a), Buffer::U8(b)) => a.extend_from_slice(b),
            (Buffer::I32(a), Buffer::I32(b)) => a.extend_from_slice(b),
            (Buffer::I64(a), Buffer::I64(b)) => a.extend_from_slice(b),
            (Buffer::F32(a), Buffer::F32(b)) => a.extend_from_slice(b),
            (Buffer::F64(a), Buffer::F64(b)) => a.extend_from_slice(b),
            _ => unreachable!("extend_from dtype mismatch"),
        }
    }

    pub(crate) fn extend_range(&mut self, other: &Buffer, start: usize, end: usize) {
        match (self, other) {
            (Buffer::Bool(a), Buffer::Bool(b)) => a.extend_from_slice(&b[start..end]),
            (Buffer::U8(a), Buffer::U8(b)) => a.extend_from_slice(&b[start..end]),
            (Buffer::I32(a), Buffer::I32(b)) => a.extend_from_slice(&b[start..end]),
            (Buffer::I64(a), Buffer::I64(b)) => a.extend_from_slice(&b[start..end]),
            (Buffer::F32(a), Buffer::F32(b)) => a.extend_from_slice(&b[start..end]),
            (Buffer::F64(a), Buffer::F64(b)) => a.extend_from_slice(&b[start..end]),
            _ => unreachable!("extend_range dtype mismatch"),
        }
    }

    pub(crate) fn with_capacity(dtype: DType, cap: usize) -> Buffer {
        match dtype {
            DType::Bool => Buffer::Bool(Vec::with_capacity(cap)),
            DType::U8 => Buffer::U8(Vec::with_capacity(cap)),
            DType::I32 => Buffer::I32(Vec::with_capacity(cap)),
            DType::I64 => Buffer::I64(Vec::with_capacity(cap)),
            DType::F32 => Buffer::F32(Vec::with_capacity(cap)),
            DType::F64 => Buffer::F64(Vec::with_capacity(cap)),
        }
    }

    /// Little-endian row-major bytes.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.byte_len());
        match self {
            Buffer::Bool(v) => out.extend(v.iter().map(|&b| b as u8)),
            Buffer::U8(v) => out.extend_from_slice(v),
            Buffer::I32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            Buffer::I64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            Buffer::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            Buffer::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        }
        out
    }

    pub fn from_le_bytes(dtype: DType, bytes: &[u8]) -> Result<Buffer> {
        let w = dtype.size_of();
        if !bytes.len().is_multiple_of(w) {
            return Err(Error::Format {
                offset: bytes.len() - bytes.len() % w,
                message: format!("byte length {} is not a multiple of {w}", bytes.len()),
            });
        }
        let chunks = bytes.chunks_exact(w);
        Ok(match dtype {
            DType::Bool => Buffer::Bool(bytes.iter().map(|&b| b != 0).collect()),
            DType::U8 => Buffer::U8(bytes.to_vec()),
            DType::I32 => Buffer::I32(chunks.map(|c| i32::from_le_bytes(c.try_into().unwrap())).collect()),
            DType::I64 => Buffer::I64(chunks.map(|c| i64::from_le_bytes(c.try_into().unwrap())).collect()),
            DType::F32 => Buffer::F32(chunks.map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect()),
            DType::F64 => Buffer::F64(chunks.map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect()),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn any_dtype() -> impl Strategy<Value = DType> {
        prop::sample::select(DType::ALL.to_vec())
    }

    proptest! {
        #[test]
        fn promotion_is_commutative_and_associative(a in any_dtype(), b in any_dtype(), c in any_dtype()) {
            prop_assert_eq!(a.promote(b), b.promote(a));
            prop_assert_eq!(a.promote(b).promote(c), a.promote(b.promote(c)));
            prop_assert_eq!(a.promote(a), a);
        }
    }

    #[test]
    fn promotion_lattice_order() {
        assert_eq!(DType::Bool.promote(DType::U8), DType::U8);
        assert_eq!(DType::I64.promote(DType::F32), DType::F32);
        assert_eq!(DType::I32.division_result(DType::I32), DType::F32);
        assert_eq!(DType::F64.division_result(DType::I32), DType::F64);
    }

    #[test]
    fn byte_round_trip() {
        let b = Buffer::F32(vec![1.5, -2.0, f32::NAN]);
        let back = Buffer::from_le_bytes(DType::F32, &b.to_le_bytes()).unwrap();
        assert_eq!(b.to_le_bytes(), back.to_le_bytes());
        assert!(Buffer::from_le_bytes(DType::I32, &[0, 1, 2]).is_err());
    }

    #[test]
    fn tag_round_trip() {
        for d in DType::ALL {
            assert_eq!(DType::from_tag(d.tag()).unwrap(), d);
            assert_eq!(DType::parse(d.name()).unwrap(), d);
        }
        assert!(DType::from_tag(17).is_err());
    }
}
