//! IDX container reader and writer, optionally gzip-wrapped.
//!
//! The header is two zero bytes, a type byte (`0x08` = unsigned byte), a rank
//! byte, then `rank` big-endian `u32` extents. Only unsigned-byte payloads are
//! supported.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;

use super::{DataError, ImageDataset, Split};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const COLOR_IMAGES_MAGIC: u32 = 0x0000_0804;
pub const LABELS_MAGIC: u32 = 0x0000_0801;
pub const MNIST_CLASSES: usize = 10;

/// Decoded IDX array of unsigned bytes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxArray {
    pub magic: u32,
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

fn read_bytes(path: &Path) -> Result<Vec<u8>, DataError> {
    let io = |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    };
    let raw = fs::read(path).map_err(io)?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice()).read_to_end(&mut out).map_err(io)?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

/// Parses an IDX byte stream; `path` is only used in error messages.
pub fn parse_idx(bytes: &[u8], path: &Path, expected_magic: &[u32]) -> Result<IdxArray, DataError> {
    let truncated = |expected| DataError::Truncated {
        path: path.to_path_buf(),
        expected,
        actual: bytes.len(),
    };
    if bytes.len() < 4 {
        return Err(truncated(4));
    }
    let magic = u32::from_be_bytes(bytes[..4].try_into().unwrap());
    if !expected_magic.contains(&magic) {
        return Err(DataError::BadMagic {
            path: path.to_path_buf(),
            expected: expected_magic[0],
            found: magic,
        });
    }
    let rank = (magic & 0xff) as usize;
    let header = 4 + 4 * rank;
    if bytes.len() < header {
        return Err(truncated(header));
    }
    let dims: Vec<usize> = bytes[4..header]
        .chunks_exact(4)
        .map(|c| u32::from_be_bytes(c.try_into().unwrap()) as usize)
        .collect();
    let body: usize = dims.iter().product();
    let expected = header + body;
    if bytes.len() < expected {
        return Err(truncated(expected));
    }
    if bytes.len() > expected {
        return Err(DataError::Layout {
            path: path.to_path_buf(),
            reason: format!("{} trailing bytes", bytes.len() - expected),
        });
    }
    Ok(IdxArray {
        magic,
        dims,
        data: bytes[header..].to_vec(),
    })
}

pub fn read_idx(path: &Path, expected_magic: &[u32]) -> Result<IdxArray, DataError> {
    parse_idx(&read_bytes(path)?, path, expected_magic)
}

/// Loads an image file (`N×s×s` or `N×C×s×s`) and its label file.
pub fn load_idx_dataset(
    images_path: &Path,
    labels_path: &Path,
    classes: usize,
    split: Split,
) -> Result<ImageDataset, DataError> {
    let images = read_idx(images_path, &[IMAGES_MAGIC, COLOR_IMAGES_MAGIC])?;
    let labels = read_idx(labels_path, &[LABELS_MAGIC])?;
    let (channels, h, w) = match images.dims[..] {
        [_, h, w] => (1, h, w),
        [_, c, h, w] => (c, h, w),
        _ => unreachable!("rank fixed by magic"),
    };
    if h != w || h == 0 || channels == 0 {
        return Err(DataError::Layout {
            path: images_path.to_path_buf(),
            reason: format!("images must be square and non-empty, found {:?}", images.dims),
        });
    }
    if images.dims[0] != labels.dims[0] {
        return Err(DataError::CountMismatch {
            images: images.dims[0],
            labels: labels.dims[0],
        });
    }
    let labels = labels.data.into_iter().map(usize::from).collect();
    ImageDataset::new(images.data, labels, channels, h, classes, split)
}

/// Loads a grayscale ten-class image/label pair.
pub fn load_mnist_idx(images_path: &Path, labels_path: &Path, split: Split) -> Result<ImageDataset, DataError> {
    let ds = load_idx_dataset(images_path, labels_path, MNIST_CLASSES, split)?;
    if ds.channels() != 1 {
        return Err(DataError::Layout {
            path: images_path.to_path_buf(),
            reason: format!("expected grayscale images, found {} channels", ds.channels()),
        });
    }
    Ok(ds)
}

/// `stem` or `stem.gz` in `dir`, preferring the plain file.
fn locate(dir: &Path, stem: &str) -> Result<PathBuf, DataError> {
    let plain = dir.join(stem);
    let gz = dir.join(format!("{stem}.gz"));
    if plain.exists() {
        Ok(plain)
    } else if gz.exists() {
        Ok(gz)
    } else {
        Err(DataError::Io {
            path: dir.join(format!("{stem}[.gz]")),
            source: std::io::Error::from(std::io::ErrorKind::NotFound),
        })
    }
}

/// Loads `{train,t10k}-{images-idx3,labels-idx1}-ubyte[.gz]` from `dir`.
pub fn load_mnist_dir(dir: &Path, split: Split) -> Result<ImageDataset, DataError> {
    let prefix = match split {
        Split::Train => "train",
        Split::Test => "t10k",
    };
    load_mnist_idx(
        &locate(dir, &format!("{prefix}-images-idx3-ubyte"))?,
        &locate(dir, &format!("{prefix}-labels-idx1-ubyte"))?,
        split,
    )
}

fn encode(magic: u32, dims: &[usize], data: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + 4 * dims.len() + data.len());
    out.extend_from_slice(&magic.to_be_bytes());
    for &d in dims {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend_from_slice(data);
    out
}

pub fn encode_images(ds: &ImageDataset) -> Vec<u8> {
    let (n, c, s) = (ds.len(), ds.channels(), ds.size());
    if c == 1 {
        encode(IMAGES_MAGIC, &[n, s, s], ds.raw_images())
    } else {
        encode(COLOR_IMAGES_MAGIC, &[n, c, s, s], ds.raw_images())
    }
}

/// Labels must fit in a byte.
pub fn encode_labels(ds: &ImageDataset) -> Vec<u8> {
    let labels: Vec<u8> = ds
        .labels()
        .iter()
        .map(|&l| u8::try_from(l).expect("label fits in a byte"))
        .collect();
    encode(LABELS_MAGIC, &[labels.len()], &labels)
}

/// Writes `bytes`, gzip-compressed when the path ends in `.gz`.
pub fn write_file(path: &Path, bytes: &[u8]) -> Result<(), DataError> {
    let io = |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    };
    if path.extension().is_some_and(|e| e == "gz") {
        let mut enc = GzEncoder::new(Vec::new(), Compression::default());
        enc.write_all(bytes).map_err(io)?;
        fs::write(path, enc.finish().map_err(io)?).map_err(io)
    } else {
        fs::write(path, bytes).map_err(io)
    }
}
