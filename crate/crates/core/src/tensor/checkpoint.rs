//! `GCTN` parameter checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "GCTN" | version: u32 | count: u32
//! per parameter: name_len: u32 | name bytes (UTF-8) | rank: u32 |
//!                dims: rank × u64 | values: numel × f32
//! ```

use std::io::{Read, Write};

use super::{ParamStore, Tensor};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"GCTN";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn write_checkpoint<W: Write>(mut out: W, store: &ParamStore) -> std::io::Result<()> {
    out.write_all(CHECKPOINT_MAGIC)?;
    out.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    out.write_all(&(store.len() as u32).to_le_bytes())?;
    for p in store.iter() {
        let name = p.name.as_bytes();
        out.write_all(&(name.len() as u32).to_le_bytes())?;
        out.write_all(name)?;
        let shape = p.tensor.shape();
        out.write_all(&(shape.len() as u32).to_le_bytes())?;
        for &d in shape {
            out.write_all(&(d as u64).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(p.tensor.numel() * 4);
        for v in p.tensor.values() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        out.write_all(&buf)?;
    }
    Ok(())
}

fn format_err(reason: impl Into<String>) -> Error {
    Error::Format {
        path: "checkpoint".into(),
        reason: reason.into(),
    }
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf)
        .map_err(|e| format_err(format!("truncated checkpoint: {e}")))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub fn read_checkpoint<R: Read>(mut input: R) -> Result<Vec<(String, Tensor)>> {
    let mut magic = [0u8; 4];
    read_exact(&mut input, &mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(format_err(format!("bad magic {magic:?}")));
    }
    let version = read_u32(&mut input)?;
    if version != CHECKPOINT_VERSION {
        return Err(format_err(format!("unsupported version {version}")));
    }
    let count = read_u32(&mut input)? as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let len = read_u32(&mut input)? as usize;
        let mut name = vec![0u8; len];
        read_exact(&mut input, &mut name)?;
        let name = String::from_utf8(name).map_err(|_| format_err("parameter name is not UTF-8"))?;
        let rank = read_u32(&mut input)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u64(&mut input)? as usize);
        }
        let numel: usize = shape.iter().product();
        let mut raw = vec![0u8; numel * 4];
        read_exact(&mut input, &mut raw)?;
        let values = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        out.push((name, Tensor::new(shape, values)?));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout_is_fixed() {
        let mut store = ParamStore::new();
        store.add("w", Tensor::new(vec![1, 2], vec![1.5, -2.0]).unwrap());
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &store).unwrap();
        assert_eq!(&buf[..4], b"GCTN");
        assert_eq!(u32::from_le_bytes(buf[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(buf[8..12].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(buf[12..16].try_into().unwrap()), 1);
        assert_eq!(buf[16], b'w');
        assert_eq!(u32::from_le_bytes(buf[17..21].try_into().unwrap()), 2);
        assert_eq!(u64::from_le_bytes(buf[21..29].try_into().unwrap()), 1);
        assert_eq!(u64::from_le_bytes(buf[29..37].try_into().unwrap()), 2);
        assert_eq!(f32::from_le_bytes(buf[37..41].try_into().unwrap()), 1.5);
        assert_eq!(buf.len(), 45);

        let back = read_checkpoint(&buf[..]).unwrap();
        assert_eq!(back[0].0, "w");
        assert_eq!(back[0].1.values(), &[1.5, -2.0]);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        assert!(read_checkpoint(&b"GCTX\x01\0\0\0\0\0\0\0"[..]).is_err());
        let mut store = ParamStore::new();
        store.add("w", Tensor::zeros(vec![4]));
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &store).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(read_checkpoint(&buf[..]).is_err());
    }
}
