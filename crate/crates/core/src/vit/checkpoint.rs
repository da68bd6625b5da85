//! Binary checkpoint container.
//!
//! All integers are little-endian.
//!
//! ```text
//! magic        8 bytes   "VITCKPT\n"
//! version      u32       currently 1
//! precision    u8        4 = f32, 8 = f64
//! config_len   u32
//! config       config_len bytes of JSON (ModelConfig)
//! count        u32       number of parameter arrays
//! per array:
//!   name_len   u16
//!   name       name_len bytes UTF-8
//!   rank       u8
//!   dims       rank × u32
//!   values     product(dims) × (4 or 8) bytes
//! ```

use std::fs;
use std::path::Path;

use crate::autodiff::{Precision, Real, Tensor};

use super::{ModelConfig, ModelError, VisionTransformer};

const MAGIC: &[u8; 8] = b"VITCKPT\n";
pub const CHECKPOINT_VERSION: u32 = 1;

fn precision_tag(p: Precision) -> u8 {
    match p {
        Precision::F32 => 4,
        Precision::F64 => 8,
    }
}

pub fn encode<T: Real>(model: &VisionTransformer<T>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.push(precision_tag(T::PRECISION));
    let config = serde_json::to_vec(model.config()).expect("config serializes");
    out.extend_from_slice(&(config.len() as u32).to_le_bytes());
    out.extend_from_slice(&config);
    out.extend_from_slice(&(model.params().len() as u32).to_le_bytes());
    for p in model.params() {
        let name = p.name().as_bytes();
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name);
        let shape = p.value().shape();
        out.push(shape.len() as u8);
        for &d in shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in p.value().data() {
            v.write_le(&mut out);
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ModelError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| ModelError::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, ModelError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, ModelError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, ModelError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn decode<T: Real>(bytes: &[u8]) -> Result<VisionTransformer<T>, ModelError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(ModelError::Checkpoint("not a checkpoint (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(ModelError::Checkpoint(format!("unsupported version {version}")));
    }
    let tag = r.u8()?;
    if tag != precision_tag(T::PRECISION) {
        return Err(ModelError::Checkpoint(format!(
            "checkpoint stores {}-byte floats, requested {}",
            tag,
            T::PRECISION
        )));
    }
    let config_len = r.u32()? as usize;
    let config: ModelConfig =
        serde_json::from_slice(r.take(config_len)?).map_err(|e| ModelError::Checkpoint(format!("config: {e}")))?;
    let mut model = VisionTransformer::<T>::build(&config, 0)?;
    let count = r.u32()? as usize;
    let width = tag as usize;
    let mut values = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| ModelError::Checkpoint("parameter name is not UTF-8".into()))?
            .to_string();
        let rank = r.u8()? as usize;
        let shape = (0..rank)
            .map(|_| r.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>, _>>()?;
        let len: usize = shape.iter().product();
        let raw = r.take(len * width)?;
        let data = raw.chunks_exact(width).map(T::read_le).collect();
        values.push((name, Tensor::new(shape, data)?));
    }
    if r.pos != bytes.len() {
        return Err(ModelError::Checkpoint("trailing bytes".into()));
    }
    model.replace_values(values)?;
    Ok(model)
}

pub fn save<T: Real>(model: &VisionTransformer<T>, path: &Path) -> Result<(), ModelError> {
    fs::write(path, encode(model)).map_err(|e| ModelError::Io(format!("{}: {e}", path.display())))
}

pub fn load<T: Real>(path: &Path) -> Result<VisionTransformer<T>, ModelError> {
    let bytes = fs::read(path).map_err(|e| ModelError::Io(format!("{}: {e}", path.display())))?;
    decode(&bytes)
}
