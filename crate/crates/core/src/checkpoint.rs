//! Binary checkpoint format.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic "TBNC" | u32 version | u64 header_len | header JSON bytes |
//! u32 tensor_count | per tensor:
//!     u32 name_len | UTF-8 name | u8 dtype | u8 rank | u64 dims[rank] |
//!     row-major little-endian payload
//! ```
//!
//! Round-trips are bit-exact; loading into the wrong element type fails
//! rather than converting.

use std::fs;
use std::path::Path;

use crate::autodiff::ParamStore;
use crate::error::{Error, Result};
use crate::tensor::{Dtype, Scalar, Tensor};

const MAGIC: &[u8; 4] = b"TBNC";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct Checkpoint<E: Scalar> {
    /// Verbatim JSON header (model configuration and hyperparameters).
    pub header: String,
    pub tensors: Vec<(String, Tensor<E>)>,
}

pub fn save<E: Scalar>(path: &Path, header: &str, store: &ParamStore<E>) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for (name, param) in store.iter() {
        let t = &param.value;
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(E::DTYPE.code());
        out.push(t.shape().len() as u8);
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in t.data() {
            v.write_le(&mut out);
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn load<E: Scalar>(path: &Path) -> Result<Checkpoint<E>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut cursor = Cursor { bytes: &bytes, pos: 0, path };
    let magic = cursor.take(4)?;
    if magic != MAGIC {
        return Err(Error::Format(format!("{}: not a checkpoint file", path.display())));
    }
    let version = cursor.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "{}: unsupported checkpoint version {version}",
            path.display()
        )));
    }
    let header_len = cursor.u64()? as usize;
    let header = String::from_utf8(cursor.take(header_len)?.to_vec())
        .map_err(|e| Error::Format(format!("{}: header is not UTF-8: {e}", path.display())))?;
    let count = cursor.u32()? as usize;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = cursor.u32()? as usize;
        let name = String::from_utf8(cursor.take(name_len)?.to_vec())
            .map_err(|e| Error::Format(format!("{}: tensor name: {e}", path.display())))?;
        let dtype = Dtype::from_code(cursor.u8()?)?;
        if dtype != E::DTYPE {
            return Err(Error::Format(format!(
                "{}: tensor {name:?} holds {dtype:?}, expected {:?}",
                path.display(),
                E::DTYPE
            )));
        }
        let rank = cursor.u8()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(cursor.u64()? as usize);
        }
        let len: usize = shape.iter().product();
        let payload = cursor.take(len * E::DTYPE.size_bytes())?;
        let data: Vec<E> = payload
            .chunks_exact(E::DTYPE.size_bytes())
            .map(E::read_le)
            .collect();
        tensors.push((name, Tensor::new(shape, data)?));
    }
    if cursor.pos != bytes.len() {
        return Err(Error::Format(format!(
            "{}: {} trailing bytes after last tensor",
            path.display(),
            bytes.len() - cursor.pos
        )));
    }
    Ok(Checkpoint { header, tensors })
}

/// Copies checkpoint tensors into a freshly constructed store; names and
/// shapes must match exactly.
pub fn restore_into<E: Scalar>(ckpt: &Checkpoint<E>, store: &mut ParamStore<E>) -> Result<()> {
    if ckpt.tensors.len() != store.len() {
        return Err(Error::Format(format!(
            "checkpoint holds {} tensors, model wants {}",
            ckpt.tensors.len(),
            store.len()
        )));
    }
    for (name, tensor) in &ckpt.tensors {
        let id = store.id_by_name(name)?;
        if store.value(id).shape() != tensor.shape() {
            return Err(Error::Format(format!(
                "tensor {name:?}: checkpoint shape {:?} vs model shape {:?}",
                tensor.shape(),
                store.value(id).shape()
            )));
        }
        *store.value_mut(id) = tensor.clone();
    }
    Ok(())
}

struct Cursor<'b> {
    bytes: &'b [u8],
    pos: usize,
    path: &'b Path,
}

impl<'b> Cursor<'b> {
    fn take(&mut self, n: usize) -> Result<&'b [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Format(format!(
                "{}: truncated checkpoint (wanted {n} bytes at offset {})",
                self.path.display(),
                self.pos
            )));
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}
