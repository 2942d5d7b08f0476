//! Flat binary container for named tensors.
//!
//! Layout (all integers little-endian): magic `FSEG`, format version `u32`,
//! tensor count `u32`, then per tensor: name length `u32`, UTF-8 name,
//! rank `u8`, one `u32` per extent, and the `f64` payload.

use std::io::{Read, Write};

use crate::error::{Error, Result};

use super::{Tensor, MAX_RANK};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"FSEG";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn write_checkpoint<W: Write>(mut out: W, tensors: &[(String, &Tensor)]) -> Result<()> {
    out.write_all(CHECKPOINT_MAGIC)?;
    out.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    out.write_all(&u32_of(tensors.len(), "tensor count")?.to_le_bytes())?;
    for (name, tensor) in tensors {
        out.write_all(&u32_of(name.len(), "name length")?.to_le_bytes())?;
        out.write_all(name.as_bytes())?;
        out.write_all(&[tensor.rank() as u8])?;
        for &extent in tensor.shape() {
            out.write_all(&u32_of(extent, "extent")?.to_le_bytes())?;
        }
        let mut payload = Vec::with_capacity(tensor.numel() * 8);
        for v in tensor.data() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
        out.write_all(&payload)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut input: R) -> Result<Vec<(String, Tensor)>> {
    let mut magic = [0u8; 4];
    read_exact(&mut input, &mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Codec(format!("bad checkpoint magic {magic:?}")));
    }
    let version = read_u32(&mut input)?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Codec(format!("unsupported checkpoint version {version}")));
    }
    let count = read_u32(&mut input)? as usize;
    let mut tensors = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let name_len = read_u32(&mut input)? as usize;
        let mut name = vec![0u8; name_len];
        read_exact(&mut input, &mut name)?;
        let name = String::from_utf8(name).map_err(|e| Error::Codec(format!("tensor name is not UTF-8: {e}")))?;
        let mut rank = [0u8; 1];
        read_exact(&mut input, &mut rank)?;
        let rank = rank[0] as usize;
        if rank > MAX_RANK {
            return Err(Error::Codec(format!("tensor {name} has rank {rank}")));
        }
        let shape = (0..rank)
            .map(|_| read_u32(&mut input).map(|v| v as usize))
            .collect::<Result<Vec<_>>>()?;
        let numel: usize = shape.iter().product();
        let mut bytes = vec![0u8; numel * 8];
        read_exact(&mut input, &mut bytes)?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        tensors.push((name, Tensor::new(&shape, data)?));
    }
    Ok(tensors)
}

fn u32_of(value: usize, what: &str) -> Result<u32> {
    u32::try_from(value).map_err(|_| Error::Codec(format!("{what} {value} does not fit in u32")))
}

fn read_exact<R: Read>(input: &mut R, buf: &mut [u8]) -> Result<()> {
    input.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Codec("truncated checkpoint".into()),
        _ => Error::Io(e),
    })
}

fn read_u32<R: Read>(input: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(input, &mut b)?;
    Ok(u32::from_le_bytes(b))
}
