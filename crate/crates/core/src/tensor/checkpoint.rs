//! Binary parameter checkpoints.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic   8 bytes  "HTKGCKPT"
//! version u32      currently 1
//! count   u32      number of parameters
//! repeated count times:
//!   name_len  u32, name  UTF-8 bytes
//!   trainable u8
//!   ndims     u32 (always 2), dims u64 × ndims
//!   values    f64 × product(dims), row-major
//! ```

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::{Matrix, ParamStore};
use crate::error::{HtkgError, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"HTKGCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn write_checkpoint(store: &ParamStore, path: &Path) -> Result<()> {
    let mut w = std::io::BufWriter::new(fs::File::create(path)?);
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&(store.len() as u32).to_le_bytes())?;
    for (_, p) in store.iter() {
        let name = p.name.as_bytes();
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name)?;
        w.write_all(&[p.trainable as u8])?;
        w.write_all(&2u32.to_le_bytes())?;
        w.write_all(&(p.value.rows() as u64).to_le_bytes())?;
        w.write_all(&(p.value.cols() as u64).to_le_bytes())?;
        for v in p.value.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn take<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b)
        .map_err(|e| HtkgError::Checkpoint(format!("truncated file: {e}")))?;
    Ok(b)
}

pub fn read_checkpoint(path: &Path) -> Result<ParamStore> {
    let mut r = std::io::BufReader::new(fs::File::open(path)?);
    if &take::<8>(&mut r)? != CHECKPOINT_MAGIC {
        return Err(HtkgError::Checkpoint("bad magic".into()));
    }
    let version = u32::from_le_bytes(take(&mut r)?);
    if version != CHECKPOINT_VERSION {
        return Err(HtkgError::Checkpoint(format!("unsupported version {version}")));
    }
    let count = u32::from_le_bytes(take(&mut r)?) as usize;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let len = u32::from_le_bytes(take(&mut r)?) as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)
            .map_err(|e| HtkgError::Checkpoint(format!("truncated name: {e}")))?;
        let name = String::from_utf8(name).map_err(|e| HtkgError::Checkpoint(e.to_string()))?;
        let trainable = take::<1>(&mut r)?[0] != 0;
        let ndims = u32::from_le_bytes(take(&mut r)?);
        if ndims != 2 {
            return Err(HtkgError::Checkpoint(format!("`{name}`: expected 2 dims, got {ndims}")));
        }
        let rows = u64::from_le_bytes(take(&mut r)?) as usize;
        let cols = u64::from_le_bytes(take(&mut r)?) as usize;
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            data.push(f64::from_le_bytes(take(&mut r)?));
        }
        store.add_with(name, Matrix::from_vec(rows, cols, data), trainable)?;
    }
    Ok(store)
}
