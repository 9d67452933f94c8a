//! Little-endian container for named `f64` tensors.
//!
//! Layout: 4-byte magic, `u32` version, `u32` metadata length, metadata bytes,
//! `u32` tensor count, then per tensor `u32` name length, UTF-8 name, `u32`
//! rows, `u32` cols and `rows * cols` `f64` values.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::Tensor2;

pub const CHECKPOINT_VERSION: u32 = 1;

pub fn encode(magic: &[u8; 4], metadata: &[u8], tensors: &[(&str, &Tensor2)]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(magic);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(metadata.len() as u32).to_le_bytes());
    out.extend_from_slice(metadata);
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rows() as u32).to_le_bytes());
        out.extend_from_slice(&(t.cols() as u32).to_le_bytes());
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Bounds-checked reader that reports byte offsets.
pub struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    pub fn new(bytes: &'a [u8], path: &'a Path) -> Self {
        Cursor { bytes, pos: 0, path }
    }

    pub fn fail(&self, at: usize, message: impl Into<String>) -> Error {
        Error::Format {
            path: self.path.to_path_buf(),
            offset: at as u64,
            message: message.into(),
        }
    }

    pub fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(self.fail(self.bytes.len(), format!("truncated while reading {what}"))),
        }
    }

    pub fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    pub fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")))
    }

    pub fn string(&mut self, what: &str) -> Result<String> {
        let at = self.pos;
        let n = self.u32(what)? as usize;
        let b = self.take(n, what)?;
        String::from_utf8(b.to_vec()).map_err(|_| self.fail(at, format!("{what} is not UTF-8")))
    }

    pub fn position(&self) -> usize {
        self.pos
    }

    pub fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(self.fail(self.pos, "trailing bytes"));
        }
        Ok(())
    }
}

pub struct Decoded {
    pub metadata: Vec<u8>,
    /// Offset of the metadata block, for error reporting.
    pub metadata_offset: usize,
    pub tensors: Vec<(String, Tensor2)>,
}

pub fn decode(magic: &[u8; 4], bytes: &[u8], path: &Path) -> Result<Decoded> {
    let mut c = Cursor::new(bytes, path);
    let m = c.take(4, "magic")?;
    if m != magic {
        return Err(c.fail(
            0,
            format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(m),
                String::from_utf8_lossy(magic)
            ),
        ));
    }
    let version = c.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(c.fail(4, format!("unsupported version {version}, expected {CHECKPOINT_VERSION}")));
    }
    let meta_len = c.u32("metadata length")? as usize;
    let metadata_offset = c.position();
    let metadata = c.take(meta_len, "metadata")?.to_vec();
    let count = c.u32("tensor count")?;
    let mut tensors = Vec::new();
    for _ in 0..count {
        let name = c.string("tensor name")?;
        let at = c.position();
        let rows = c.u32("rows")? as usize;
        let cols = c.u32("cols")? as usize;
        let n = rows
            .checked_mul(cols)
            .and_then(|n| n.checked_mul(8).map(|_| n))
            .ok_or_else(|| c.fail(at, format!("{name}: {rows}x{cols} overflows")))?;
        let payload = c.take(n * 8, &name)?;
        let data = payload
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
            .collect();
        tensors.push((name, Tensor2::from_vec(rows, cols, data)?));
    }
    c.finish()?;
    Ok(Decoded {
        metadata,
        metadata_offset,
        tensors,
    })
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Removes `name` from `tensors`, checking its shape.
pub fn take_tensor(
    tensors: &mut Vec<(String, Tensor2)>,
    name: &str,
    shape: (usize, usize),
    path: &Path,
) -> Result<Tensor2> {
    let pos = tensors.iter().position(|(n, _)| n == name).ok_or_else(|| Error::Format {
        path: path.to_path_buf(),
        offset: 0,
        message: format!("missing tensor {name}"),
    })?;
    let (_, t) = tensors.remove(pos);
    if t.shape() != shape {
        return Err(Error::Format {
            path: path.to_path_buf(),
            offset: 0,
            message: format!("tensor {name} is {:?}, expected {shape:?}", t.shape()),
        });
    }
    Ok(t)
}
