//! Binary checkpoint format.
//!
//! ```text
//! "CFCK"            4 bytes magic
//! version           u32
//! repeated until EOF:
//!   name_len        u32
//!   name            name_len bytes, UTF-8
//!   rank            u32
//!   dims            rank x u64
//!   payload         prod(dims) x f64
//! ```
//!
//! All integers and floats are little-endian. Records are written in name order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::params::ModelParams;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"CFCK";
pub const VERSION: u32 = 1;

const MAX_NAME_LEN: u32 = 4096;
const MAX_RANK: u32 = 8;

pub fn write_params(params: &ModelParams, mut w: impl Write) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    for (name, t) in params.iter() {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_exact_or(r: &mut impl Read, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Checkpoint(format!("truncated while reading {what}")),
        _ => Error::Io(e),
    })
}

fn read_u32(r: &mut impl Read, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact_or(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_params(mut r: impl Read) -> Result<ModelParams> {
    let mut magic = [0u8; 4];
    read_exact_or(&mut r, &mut magic, "magic")?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint(format!("bad magic {magic:?}, expected {MAGIC:?}")));
    }
    let version = read_u32(&mut r, "version")?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format version {version}, expected {VERSION}"
        )));
    }
    let mut params = ModelParams::new();
    loop {
        let mut len = [0u8; 4];
        // a clean EOF here ends the record stream
        match r.read(&mut len[..1])? {
            0 => break,
            _ => read_exact_or(&mut r, &mut len[1..], "record header")?,
        }
        let name_len = u32::from_le_bytes(len);
        if name_len > MAX_NAME_LEN {
            return Err(Error::Checkpoint(format!("implausible name length {name_len}")));
        }
        let mut name = vec![0u8; name_len as usize];
        read_exact_or(&mut r, &mut name, "parameter name")?;
        let name = String::from_utf8(name)
            .map_err(|_| Error::Checkpoint("parameter name is not UTF-8".into()))?;
        let rank = read_u32(&mut r, "rank")?;
        if rank > MAX_RANK {
            return Err(Error::Checkpoint(format!("implausible rank {rank} for `{name}`")));
        }
        let mut dims = Vec::with_capacity(rank as usize);
        for _ in 0..rank {
            let mut b = [0u8; 8];
            read_exact_or(&mut r, &mut b, "dims")?;
            dims.push(usize::try_from(u64::from_le_bytes(b)).map_err(|_| {
                Error::Checkpoint(format!("dimension too large in `{name}`"))
            })?);
        }
        let numel = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Checkpoint(format!("shape overflow in `{name}`")))?;
        let mut data = Vec::with_capacity(numel.min(1 << 24));
        let mut b = [0u8; 8];
        for _ in 0..numel {
            read_exact_or(&mut r, &mut b, &format!("payload of `{name}`"))?;
            data.push(f64::from_le_bytes(b));
        }
        params
            .insert(name, Tensor::new(dims, data)?)
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
    }
    Ok(params)
}

pub fn save(params: &ModelParams, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_params(params, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<ModelParams> {
    read_params(BufReader::new(File::open(path)?))
}
