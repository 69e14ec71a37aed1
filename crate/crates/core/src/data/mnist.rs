//! Reader for the big-endian IDX container used by MNIST.

use std::path::Path;

use super::TensorDataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

fn format_error(offset: usize, message: impl Into<String>) -> Error {
    Error::Format {
        offset,
        message: message.into(),
    }
}

fn be_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("four bytes")))
        .ok_or_else(|| format_error(offset, "truncated IDX header"))
}

fn header(bytes: &[u8], magic: u32, dims: usize) -> Result<Vec<usize>> {
    let found = be_u32(bytes, 0)?;
    if found != magic {
        return Err(format_error(
            0,
            format!("bad IDX magic {found:#010x}, expected {magic:#010x}"),
        ));
    }
    (0..dims)
        .map(|i| be_u32(bytes, 4 + 4 * i).map(|d| d as usize))
        .collect()
}

fn payload(bytes: &[u8], start: usize, len: usize) -> Result<&[u8]> {
    let end = start
        .checked_add(len)
        .ok_or_else(|| format_error(0, "IDX dimensions overflow"))?;
    if bytes.len() < end {
        return Err(format_error(
            bytes.len(),
            format!("truncated IDX payload: need {end} bytes"),
        ));
    }
    if bytes.len() > end {
        return Err(format_error(end, "trailing bytes after IDX payload"));
    }
    Ok(&bytes[start..end])
}

/// Images as f32 `[N, 1, rows, cols]` scaled to `[0, 1]`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<Tensor> {
    let d = header(bytes, IMAGES_MAGIC, 3)?;
    let (n, rows, cols) = (d[0], d[1], d[2]);
    let count = n
        .checked_mul(rows)
        .and_then(|v| v.checked_mul(cols))
        .ok_or_else(|| format_error(4, "IDX dimensions overflow"))?;
    let pixels = payload(bytes, 16, count)?;
    Tensor::from_vec(pixels.iter().map(|&p| p as f32 / 255.0).collect(), &[n, 1, rows, cols])
}

/// Labels as i64 `[N]`.
pub fn parse_idx_labels(bytes: &[u8]) -> Result<Tensor> {
    let n = header(bytes, LABELS_MAGIC, 1)?[0];
    let labels = payload(bytes, 8, n)?;
    Tensor::from_vec(labels.iter().map(|&l| l as i64).collect(), &[n])
}

/// Samples are `[image [1, rows, cols] f32, label i64 scalar]`.
pub fn load_mnist_idx(images: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<TensorDataset> {
    let read = |p: &Path| std::fs::read(p).map_err(|e| Error::Data(format!("{}: {e}", p.display())));
    let x = parse_idx_images(&read(images.as_ref())?)?;
    let y = parse_idx_labels(&read(labels.as_ref())?)?;
    if x.dims()[0] != y.dims()[0] {
        return Err(Error::Data(format!(
            "{} images but {} labels",
            x.dims()[0],
            y.dims()[0]
        )));
    }
    TensorDataset::new(vec![x, y])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MnistSplit {
    Train,
    Test,
}

/// Loads a split from a directory holding the canonical file names.
pub fn load_mnist_dir(dir: impl AsRef<Path>, split: MnistSplit) -> Result<TensorDataset> {
    let prefix = match split {
        MnistSplit::Train => "train",
        MnistSplit::Test => "t10k",
    };
    let dir = dir.as_ref();
    let find = |stem: String| -> Result<std::path::PathBuf> {
        [stem.clone(), stem.replacen("-idx", ".idx", 1)]
            .into_iter()
            .map(|name| dir.join(name))
            .find(|p| p.is_file())
            .ok_or_else(|| Error::Data(format!("{} not found in {}", stem, dir.display())))
    };
    load_mnist_idx(
        find(format!("{prefix}-images-idx3-ubyte"))?,
        find(format!("{prefix}-labels-idx1-ubyte"))?,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Dataset;

    fn images(n: u32, pixel: u8) -> Vec<u8> {
        let mut b = Vec::new();
        for v in [IMAGES_MAGIC, n, 28, 28] {
            b.extend_from_slice(&v.to_be_bytes());
        }
        b.extend(std::iter::repeat_n(pixel, n as usize * 784));
        b
    }

    fn labels(values: &[u8]) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
        b.extend_from_slice(&(values.len() as u32).to_be_bytes());
        b.extend_from_slice(values);
        b
    }

    #[test]
    fn all_zero_image_decodes() {
        let x = parse_idx_images(&images(1, 0)).unwrap();
        assert_eq!(x.dims(), [1, 1, 28, 28]);
        let v = x.to_f64_vec().unwrap();
        assert!(v.iter().all(|&p| p == 0.0));
        let white = parse_idx_images(&images(1, 255)).unwrap();
        assert_eq!(white.max(None, false).unwrap().item().unwrap(), 1.0);
    }

    #[test]
    fn label_byte_is_identity() {
        let y = parse_idx_labels(&labels(&[7, 0, 9])).unwrap();
        assert_eq!(y.to_vec::<i64>().unwrap(), vec![7, 0, 9]);
    }

    #[test]
    fn format_errors_carry_offsets() {
        let mut bad = labels(&[1]);
        bad[3] = 3;
        assert!(matches!(parse_idx_labels(&bad), Err(Error::Format { offset: 0, .. })));
        let short = &images(2, 1)[..16 + 784];
        assert!(matches!(
            parse_idx_images(short),
            Err(Error::Format { offset: 800, .. })
        ));
        assert!(matches!(
            parse_idx_labels(&[0, 0]),
            Err(Error::Format { offset: 0, .. })
        ));
    }

    #[test]
    fn directory_loader_reads_a_split() {
        let dir = std::env::temp_dir().join(format!("kindling-mnist-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        std::fs::write(dir.join("t10k-images-idx3-ubyte"), images(2, 51)).unwrap();
        std::fs::write(dir.join("t10k-labels-idx1-ubyte"), labels(&[3, 4])).unwrap();
        let ds = load_mnist_dir(&dir, MnistSplit::Test).unwrap();
        assert_eq!(ds.len(), 2);
        let s = ds.get(1).unwrap();
        assert_eq!(s[0].dims(), [1, 28, 28]);
        assert_eq!(s[1].scalar::<i64>().unwrap(), 4);
        assert!(matches!(load_mnist_dir(&dir, MnistSplit::Train), Err(Error::Data(_))));
        std::fs::remove_dir_all(dir).unwrap();
    }
}
