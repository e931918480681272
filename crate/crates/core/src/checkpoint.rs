//! Flat binary container for named tensors.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "SFPN" | version u32 | count u32 | count x entry
//! entry = name_len u16 | name (UTF-8) | n c h w (u32 each) | n*c*h*w scalars
//! ```
//!
//! The version tag doubles as the element type: 1 for `f32`, 2 for `f64`.

use std::path::Path;

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::{Shape4, Tensor};

pub const MAGIC: &[u8; 4] = b"SFPN";

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

pub fn encode<'a, T: Scalar>(entries: impl IntoIterator<Item = (&'a str, &'a Tensor<T>)>) -> Result<Vec<u8>> {
    let entries: Vec<_> = entries.into_iter().collect();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&T::CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&u32::try_from(entries.len()).map_err(|_| bad("too many entries"))?.to_le_bytes());
    for (name, tensor) in entries {
        let len = u16::try_from(name.len()).map_err(|_| bad(format!("name too long: {name}")))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        for d in tensor.shape().dims() {
            let d = u32::try_from(d).map_err(|_| bad("dimension exceeds u32"))?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        for &v in tensor.data() {
            v.write_le(&mut out);
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| bad("truncated"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn decode<T: Scalar>(bytes: &[u8]) -> Result<Vec<(String, Tensor<T>)>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(bad("bad magic"));
    }
    let version = r.u32()?;
    if version != T::CHECKPOINT_VERSION {
        return Err(bad(format!(
            "version {version} does not hold {}-byte scalars (expected {})",
            T::BYTES,
            T::CHECKPOINT_VERSION
        )));
    }
    let count = r.u32()? as usize;
    let mut entries = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(len)?).map_err(|_| bad("name is not UTF-8"))?.to_string();
        let mut dims = [0usize; 4];
        for d in &mut dims {
            *d = r.u32()? as usize;
        }
        let shape = Shape4::new(dims[0], dims[1], dims[2], dims[3]);
        let payload = r.take(shape.numel().checked_mul(T::BYTES).ok_or_else(|| bad("entry too large"))?)?;
        let data = payload.chunks_exact(T::BYTES).map(T::read_le).collect();
        let tensor = Tensor::from_vec(shape, data).map_err(|e| bad(format!("entry {name}: {e}")))?;
        entries.push((name, tensor));
    }
    if r.pos != bytes.len() {
        return Err(bad(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(entries)
}

pub fn encode_params<T: Scalar>(store: &ParamStore<T>) -> Result<Vec<u8>> {
    encode(store.iter().map(|(k, p)| (k, &p.value)))
}

/// Overwrites the values of `store` from `bytes`; names and shapes must match exactly.
pub fn load_into<T: Scalar>(store: &mut ParamStore<T>, bytes: &[u8]) -> Result<()> {
    let entries = decode::<T>(bytes)?;
    restore(store, entries.iter().map(|(k, t)| (k.as_str(), t)))
}

pub(crate) fn restore<'a, T: Scalar>(
    store: &mut ParamStore<T>,
    entries: impl Iterator<Item = (&'a str, &'a Tensor<T>)>,
) -> Result<()> {
    let mut seen = 0;
    for (name, tensor) in entries {
        let p = store.get_mut(name).ok_or_else(|| bad(format!("unknown parameter {name}")))?;
        if p.value.shape() != tensor.shape() {
            return Err(bad(format!(
                "parameter {name} has shape {}, checkpoint holds {}",
                p.value.shape(),
                tensor.shape()
            )));
        }
        p.value = tensor.clone();
        seen += 1;
    }
    if seen != store.len() {
        return Err(bad(format!("checkpoint has {seen} of {} parameters", store.len())));
    }
    Ok(())
}

pub fn save_params<T: Scalar>(store: &ParamStore<T>, path: &Path) -> Result<()> {
    std::fs::write(path, encode_params(store)?)?;
    Ok(())
}

pub fn load_params<T: Scalar>(store: &mut ParamStore<T>, path: &Path) -> Result<()> {
    load_into(store, &std::fs::read(path)?)
}
