//! `SLT1` binary tensor encoding and the named-tensor parameter archive.
//!
//! ```text
//! "SLT1" | dtype: u8 (0=f32, 1=i32, 2=bool) | rank: u8 | extents: u64 LE * rank | payload
//! ```
//!
//! Payload is row-major; f32/i32 little-endian, bool one byte each (0/1).
//! An archive is a plain concatenation of `(name_len: u16 LE, utf8 name, SLT1)`.

use std::collections::BTreeMap;
use std::io::{self, Read, Write};

use super::{DType, Tensor, TensorData};
use crate::error::{Error, Result};

pub const TENSOR_MAGIC: &[u8; 4] = b"SLT1";

pub fn write_tensor<W: Write>(w: &mut W, t: &Tensor) -> Result<()> {
    w.write_all(TENSOR_MAGIC)?;
    let rank = u8::try_from(t.rank())
        .map_err(|_| Error::Format(format!("rank {} exceeds 255", t.rank())))?;
    w.write_all(&[t.dtype().code(), rank])?;
    for &extent in t.shape() {
        w.write_all(&(extent as u64).to_le_bytes())?;
    }
    match t.data() {
        TensorData::F32(v) => {
            for x in v {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        TensorData::I32(v) => {
            for x in v {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        TensorData::Bool(v) => {
            let bytes: Vec<u8> = v.iter().map(|&b| b as u8).collect();
            w.write_all(&bytes)?;
        }
    }
    Ok(())
}

fn read_exact<R: Read, const N: usize>(r: &mut R) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => Error::Format("truncated tensor".into()),
        _ => Error::Io(e),
    })?;
    Ok(buf)
}

pub fn read_tensor<R: Read>(r: &mut R) -> Result<Tensor> {
    let magic: [u8; 4] = read_exact(r)?;
    if &magic != TENSOR_MAGIC {
        return Err(Error::Format(format!("bad tensor magic {magic:?}")));
    }
    let [code, rank] = read_exact::<_, 2>(r)?;
    let dtype = DType::from_code(code)?;
    let mut shape = Vec::with_capacity(rank as usize);
    for _ in 0..rank {
        let extent = u64::from_le_bytes(read_exact(r)?);
        shape.push(
            usize::try_from(extent).map_err(|_| Error::Format("extent overflow".into()))?,
        );
    }
    let count = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::Format("element count overflow".into()))?;
    let data = match dtype {
        DType::F32 => TensorData::F32(
            (0..count)
                .map(|_| read_exact(r).map(f32::from_le_bytes))
                .collect::<Result<_>>()?,
        ),
        DType::I32 => TensorData::I32(
            (0..count)
                .map(|_| read_exact(r).map(i32::from_le_bytes))
                .collect::<Result<_>>()?,
        ),
        DType::Bool => TensorData::Bool(
            (0..count)
                .map(|_| match read_exact::<_, 1>(r)? {
                    [0] => Ok(false),
                    [1] => Ok(true),
                    [b] => Err(Error::Format(format!("invalid bool byte {b}"))),
                })
                .collect::<Result<_>>()?,
        ),
    };
    Tensor::new(shape, data)
}

pub fn tensor_to_bytes(t: &Tensor) -> Vec<u8> {
    let mut out = Vec::new();
    write_tensor(&mut out, t).expect("writing to a Vec cannot fail");
    out
}

pub fn tensor_from_bytes(bytes: &[u8]) -> Result<Tensor> {
    let mut cursor = bytes;
    let t = read_tensor(&mut cursor)?;
    if !cursor.is_empty() {
        return Err(Error::Format(format!("{} trailing bytes", cursor.len())));
    }
    Ok(t)
}

pub fn write_archive<W: Write>(w: &mut W, tensors: &BTreeMap<String, Tensor>) -> Result<()> {
    for (name, t) in tensors {
        let len = u16::try_from(name.len())
            .map_err(|_| Error::Format(format!("parameter name too long: {name}")))?;
        w.write_all(&len.to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        write_tensor(w, t)?;
    }
    Ok(())
}

pub fn read_archive(bytes: &[u8]) -> Result<BTreeMap<String, Tensor>> {
    let mut cursor = bytes;
    let mut out = BTreeMap::new();
    while !cursor.is_empty() {
        let len = u16::from_le_bytes(read_exact(&mut cursor)?) as usize;
        if cursor.len() < len {
            return Err(Error::Format("truncated parameter name".into()));
        }
        let name = std::str::from_utf8(&cursor[..len])
            .map_err(|e| Error::Format(format!("parameter name is not utf8: {e}")))?
            .to_string();
        cursor = &cursor[len..];
        let t = read_tensor(&mut cursor)?;
        if out.insert(name.clone(), t).is_some() {
            return Err(Error::Format(format!("duplicate parameter `{name}`")));
        }
    }
    Ok(out)
}
