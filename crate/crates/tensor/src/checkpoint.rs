//! Parameter checkpoints.
//!
//! Binary layout (all integers little-endian):
//!
//! ```text
//! magic      8 bytes  "EDCKPT\0\0"
//! version    u32      = 1
//! count      u32
//! repeated count times:
//!   name_len u32, name (UTF-8)
//!   ndim     u32, dims u64 × ndim
//!   data     f32 × product(dims)
//! ```
//!
//! A text manifest with one `name<TAB>dims<TAB>numel` line per parameter is
//! written next to the blob.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use crate::{ParamStore, Result, Scalar, Tensor, TensorError};

pub const MAGIC: &[u8; 8] = b"EDCKPT\0\0";
pub const VERSION: u32 = 1;

pub fn encode<T: Scalar>(store: &ParamStore<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + store.num_scalars() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for (_, name, t) in store.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in t.data() {
            out.extend_from_slice(&(v.f64() as f32).to_le_bytes());
        }
    }
    out
}

pub fn manifest<T: Scalar>(store: &ParamStore<T>) -> String {
    let mut s = format!("checkpoint-version\t{VERSION}\nparameters\t{}\n", store.len());
    for (_, name, t) in store.iter() {
        let dims: Vec<String> = t.shape().iter().map(|d| d.to_string()).collect();
        s.push_str(&format!("{name}\t{}\t{}\n", dims.join("x"), t.len()));
    }
    s
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(TensorError::Checkpoint("unexpected end of data".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode<T: Scalar>(bytes: &[u8]) -> Result<ParamStore<T>> {
    let mut c = Cursor { buf: bytes, pos: 0 };
    if c.take(8)? != MAGIC {
        return Err(TensorError::Checkpoint("bad magic".into()));
    }
    let version = c.u32()?;
    if version != VERSION {
        return Err(TensorError::Checkpoint(format!("unsupported version {version}")));
    }
    let count = c.u32()? as usize;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let len = c.u32()? as usize;
        let name = std::str::from_utf8(c.take(len)?)
            .map_err(|_| TensorError::Checkpoint("parameter name is not UTF-8".into()))?
            .to_string();
        let ndim = c.u32()? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(c.u64()? as usize);
        }
        let numel: usize = shape.iter().product();
        let raw = c.take(numel * 4)?;
        let data = raw
            .chunks_exact(4)
            .map(|b| T::of(f32::from_le_bytes(b.try_into().unwrap()) as f64))
            .collect();
        store.add(name, Tensor::new(shape, data)?)?;
    }
    if c.pos != bytes.len() {
        return Err(TensorError::Checkpoint("trailing bytes".into()));
    }
    Ok(store)
}

pub fn manifest_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".manifest");
    PathBuf::from(s)
}

/// Writes the blob at `path` and its manifest at `path.manifest`.
pub fn save<T: Scalar>(store: &ParamStore<T>, path: &Path) -> Result<()> {
    fs::File::create(path)?.write_all(&encode(store))?;
    fs::write(manifest_path(path), manifest(store))?;
    Ok(())
}

pub fn load<T: Scalar>(path: &Path) -> Result<ParamStore<T>> {
    let mut buf = Vec::new();
    fs::File::open(path)?.read_to_end(&mut buf)?;
    decode(&buf)
}

/// Loads values into an existing store, requiring identical names and shapes.
pub fn load_into<T: Scalar>(store: &mut ParamStore<T>, path: &Path) -> Result<()> {
    let loaded = load::<T>(path)?;
    if loaded.len() != store.len() {
        return Err(TensorError::Checkpoint(format!(
            "expected {} parameters, found {}",
            store.len(),
            loaded.len()
        )));
    }
    store.copy_values_from(&loaded)
}
