//! Versioned, length-prefixed binary encoding of module trees.
//!
//! A stream is `FLCK`, a little-endian `u16` version, the model record, a
//! flag byte and an optional optimizer record. Every record stores its kind
//! tag, integer and float configuration, tensors and children.

use std::collections::HashMap;
use std::path::Path;
use std::sync::{LazyLock, RwLock};

use super::layers::{BatchNorm2d, Conv2D, Dropout, Linear, LogSoftmax, MaxPool2D, ReLU, View};
use super::{Module, Sequential};
use crate::dtype::DType;
use crate::error::{Error, Result};
use crate::op::HostBuffer;
use crate::shape::Shape;

pub const MAGIC: &[u8; 4] = b"FLCK";
pub const VERSION: u16 = 1;

/// Serializable description of one module (or optimizer) and its children.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Record {
    pub kind: String,
    pub ints: Vec<i64>,
    pub floats: Vec<f64>,
    pub tensors: Vec<HostBuffer>,
    pub children: Vec<Record>,
}

impl Record {
    pub fn new(kind: impl Into<String>) -> Self {
        Record {
            kind: kind.into(),
            ..Record::default()
        }
    }

    pub fn int(&self, i: usize) -> Result<i64> {
        self.ints.get(i).copied().ok_or_else(|| self.missing("integer", i))
    }

    pub fn usize(&self, i: usize) -> Result<usize> {
        usize::try_from(self.int(i)?).map_err(|_| self.missing("non-negative integer", i))
    }

    pub fn float(&self, i: usize) -> Result<f64> {
        self.floats.get(i).copied().ok_or_else(|| self.missing("float", i))
    }

    pub fn tensor(&self, i: usize) -> Result<HostBuffer> {
        self.tensors.get(i).cloned().ok_or_else(|| self.missing("tensor", i))
    }

    fn missing(&self, what: &str, i: usize) -> Error {
        Error::Format {
            offset: 0,
            message: format!("`{}` record lacks {what} #{i}", self.kind),
        }
    }
}

/// Rebuilds a module from its record.
pub type Loader = fn(&Record) -> Result<Box<dyn Module>>;

static REGISTRY: LazyLock<RwLock<HashMap<String, Loader>>> = LazyLock::new(|| {
    let builtin: [(&str, Loader); 9] = [
        ("sequential", Sequential::load),
        ("linear", Linear::load),
        ("conv2d", Conv2D::load),
        ("relu", ReLU::load),
        ("maxpool2d", MaxPool2D::load),
        ("dropout", Dropout::load),
        ("batchnorm2d", BatchNorm2d::load),
        ("logsoftmax", LogSoftmax::load),
        ("view", View::load),
    ];
    RwLock::new(builtin.into_iter().map(|(k, l)| (k.to_string(), l)).collect())
});

/// Makes a user-defined module kind loadable.
pub fn register_module(kind: &str, loader: Loader) -> Result<()> {
    let mut reg = REGISTRY.write().unwrap_or_else(|e| e.into_inner());
    if reg.contains_key(kind) {
        return Err(Error::Config(format!("module kind `{kind}` is already registered")));
    }
    reg.insert(kind.to_string(), loader);
    Ok(())
}

pub fn load_record(record: &Record) -> Result<Box<dyn Module>> {
    let loader = REGISTRY
        .read()
        .unwrap_or_else(|e| e.into_inner())
        .get(&record.kind)
        .copied()
        .ok_or_else(|| Error::Format {
            offset: 0,
            message: format!("unknown module kind `{}`", record.kind),
        })?;
    loader(record)
}

/// A model plus, optionally, optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Record,
    pub optimizer: Option<Record>,
}

impl Checkpoint {
    pub fn of(module: &dyn Module) -> Result<Self> {
        Ok(Checkpoint {
            model: module.to_record()?,
            optimizer: None,
        })
    }

    pub fn with_optimizer(mut self, state: Record) -> Self {
        self.optimizer = Some(state);
        self
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        write_record(&mut out, &self.model);
        match &self.optimizer {
            Some(r) => {
                out.push(1);
                write_record(&mut out, r);
            }
            None => out.push(0),
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(r.error_at(0, "missing FLCK magic"));
        }
        let version = u16::from_le_bytes(r.array()?);
        if version != VERSION {
            return Err(r.error_at(4, format!("unsupported version {version}")));
        }
        let model = r.record()?;
        let optimizer = match r.take(1)?[0] {
            0 => None,
            1 => Some(r.record()?),
            f => return Err(r.error(format!("bad optimizer flag {f}"))),
        };
        if r.pos != bytes.len() {
            return Err(r.error("trailing bytes"));
        }
        Ok(Checkpoint { model, optimizer })
    }

    pub fn model(&self) -> Result<Box<dyn Module>> {
        load_record(&self.model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

pub fn serialize(module: &dyn Module) -> Result<Vec<u8>> {
    Ok(Checkpoint::of(module)?.to_bytes())
}

pub fn deserialize(bytes: &[u8]) -> Result<Box<dyn Module>> {
    Checkpoint::from_bytes(bytes)?.model()
}

fn write_len(out: &mut Vec<u8>, n: usize) {
    out.extend_from_slice(&(n as u64).to_le_bytes());
}

fn write_record(out: &mut Vec<u8>, r: &Record) {
    write_len(out, r.kind.len());
    out.extend_from_slice(r.kind.as_bytes());
    write_len(out, r.ints.len());
    for v in &r.ints {
        out.extend_from_slice(&v.to_le_bytes());
    }
    write_len(out, r.floats.len());
    for v in &r.floats {
        out.extend_from_slice(&v.to_le_bytes());
    }
    write_len(out, r.tensors.len());
    for t in &r.tensors {
        out.push(t.dtype().tag());
        write_len(out, t.shape.rank());
        for &d in t.shape.dims() {
            write_len(out, d);
        }
        let payload = t.bytes();
        write_len(out, payload.len());
        out.extend_from_slice(&payload);
    }
    write_len(out, r.children.len());
    for c in &r.children {
        write_record(out, c);
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn error_at(&self, offset: usize, message: impl Into<String>) -> Error {
        Error::Format {
            offset,
            message: message.into(),
        }
    }

    fn error(&self, message: impl Into<String>) -> Error {
        self.error_at(self.pos, message)
    }

    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(self.error(format!("truncated stream: wanted {n} more bytes")));
        };
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    /// An element count; each counted element occupies at least one byte.
    fn len(&mut self) -> Result<usize> {
        let at = self.pos;
        let n = self.u64()?;
        if n > (self.bytes.len() - self.pos) as u64 {
            return Err(self.error_at(at, format!("truncated stream: count {n} exceeds remaining bytes")));
        }
        Ok(n as usize)
    }

    fn extent(&mut self) -> Result<usize> {
        let at = self.pos;
        let n = self.u64()?;
        usize::try_from(n).map_err(|_| self.error_at(at, format!("extent {n} too large")))
    }

    fn record(&mut self) -> Result<Record> {
        let n = self.len()?;
        let at = self.pos;
        let kind = String::from_utf8(self.take(n)?.to_vec()).map_err(|_| self.error_at(at, "kind is not UTF-8"))?;
        let mut rec = Record::new(kind);
        for _ in 0..self.len()? {
            rec.ints.push(i64::from_le_bytes(self.array()?));
        }
        for _ in 0..self.len()? {
            rec.floats.push(f64::from_le_bytes(self.array()?));
        }
        for _ in 0..self.len()? {
            let at = self.pos;
            let dtype = DType::from_tag(self.take(1)?[0]).map_err(|_| self.error_at(at, "unknown dtype tag"))?;
            let rank = self.len()?;
            if rank > crate::shape::MAX_RANK {
                return Err(self.error_at(at, format!("rank {rank} too large")));
            }
            let mut dims = Vec::with_capacity(rank.min(16));
            for _ in 0..rank {
                dims.push(self.extent()?);
            }
            let expected = dims.iter().try_fold(dtype.size_of(), |acc, &d| acc.checked_mul(d));
            let shape = Shape::new(dims).map_err(|e| self.error_at(at, e.to_string()))?;
            let n = self.len()?;
            if expected != Some(n) {
                return Err(self.error_at(at, format!("payload of {n} bytes does not fit {dtype} {shape}")));
            }
            let at = self.pos;
            let payload = self.take(n)?;
            let host = HostBuffer::from_bytes(shape, dtype, payload).map_err(|e| self.error_at(at, e.to_string()))?;
            rec.tensors.push(host);
        }
        for _ in 0..self.len()? {
            rec.children.push(self.record()?);
        }
        Ok(rec)
    }
}
