//! Binary parameter checkpoints.
//!
//! Layout (all integers little-endian): the magic bytes `RLBL`, a `u32`
//! format version, then for each parameter in registration order: `u64`
//! name length, UTF-8 name, `u64` rank, `rank × u64` dims, and the values as
//! `f64`. The file ends after the last parameter.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{ParamStore, Real, Tensor};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"RLBL";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn write_checkpoint<T: Real, W: Write>(store: &ParamStore<T>, mut w: W) -> io::Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    for entry in store.entries() {
        let name = entry.name.as_bytes();
        w.write_all(&(name.len() as u64).to_le_bytes())?;
        w.write_all(name)?;
        let shape = entry.value.shape();
        w.write_all(&(shape.len() as u64).to_le_bytes())?;
        for &d in shape {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for v in entry.value.data() {
            w.write_all(&v.to_f64_lossless().to_le_bytes())?;
        }
    }
    w.flush()
}

fn read_u64<R: Read>(r: &mut R) -> io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

/// Reads `(name, tensor)` pairs in file order.
pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Vec<(String, Tensor<f64>)>> {
    let bad = |m: String| Error::Checkpoint(m);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|e| bad(format!("header: {e}")))?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(bad("bad magic bytes".into()));
    }
    let mut ver = [0u8; 4];
    r.read_exact(&mut ver).map_err(|e| bad(format!("header: {e}")))?;
    let version = u32::from_le_bytes(ver);
    if version != CHECKPOINT_VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let mut out = Vec::new();
    loop {
        let mut first = [0u8; 8];
        let mut filled = 0;
        while filled < 8 {
            let n = r.read(&mut first[filled..]).map_err(|e| bad(e.to_string()))?;
            if n == 0 {
                break;
            }
            filled += n;
        }
        if filled == 0 {
            break;
        }
        if filled < 8 {
            return Err(bad("truncated parameter header".into()));
        }
        let trunc = |e: io::Error| bad(format!("truncated parameter: {e}"));
        let name_len = u64::from_le_bytes(first) as usize;
        if name_len > 1 << 20 {
            return Err(bad(format!("implausible name length {name_len}")));
        }
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name).map_err(trunc)?;
        let name = String::from_utf8(name).map_err(|_| bad("parameter name is not UTF-8".into()))?;
        let rank = read_u64(&mut r).map_err(trunc)? as usize;
        if rank > 8 {
            return Err(bad(format!("`{name}`: implausible rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u64(&mut r).map_err(trunc)? as usize);
        }
        let count: usize = shape.iter().product();
        let mut data = Vec::with_capacity(count);
        let mut b = [0u8; 8];
        for _ in 0..count {
            r.read_exact(&mut b).map_err(trunc)?;
            data.push(f64::from_le_bytes(b));
        }
        let tensor = Tensor::new(shape, data).map_err(|e| bad(e.to_string()))?;
        out.push((name, tensor));
    }
    Ok(out)
}

pub fn save_checkpoint<T: Real>(store: &ParamStore<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_checkpoint(store, BufWriter::new(file)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Vec<(String, Tensor<f64>)>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(BufReader::new(file))
}
