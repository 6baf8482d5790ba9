//! `CFT1` tensor files: magic, u32 LE rank, rank × u32 LE dims, f32 LE
//! row-major payload.

use std::path::Path;

use crate::error::{Error, Result};
use crate::numcore::Tensor;

pub const MAGIC: [u8; 4] = *b"CFT1";

pub fn encode(t: &Tensor) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(8 + 4 * t.rank() + 4 * t.len());
    out.extend_from_slice(&MAGIC);
    let rank =
        u32::try_from(t.rank()).map_err(|_| Error::DimOverflow(format!("rank {}", t.rank())))?;
    out.extend_from_slice(&rank.to_le_bytes());
    for &d in t.shape() {
        let d = u32::try_from(d).map_err(|_| Error::DimOverflow(format!("dim {d} exceeds u32")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    for &v in t.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(out)
}

fn take<'a>(bytes: &mut &'a [u8], n: usize, what: &str) -> Result<&'a [u8]> {
    if bytes.len() < n {
        return Err(Error::Truncated(format!(
            "{what}: need {n} bytes, have {}",
            bytes.len()
        )));
    }
    let (head, rest) = bytes.split_at(n);
    *bytes = rest;
    Ok(head)
}

fn u32_le(b: &[u8]) -> u32 {
    u32::from_le_bytes([b[0], b[1], b[2], b[3]])
}

pub fn decode(mut bytes: &[u8]) -> Result<Tensor> {
    let magic = take(&mut bytes, 4, "magic")?;
    if magic != MAGIC {
        return Err(Error::BadMagic([magic[0], magic[1], magic[2], magic[3]]));
    }
    let rank = u32_le(take(&mut bytes, 4, "rank")?) as usize;
    let header = rank
        .checked_mul(4)
        .ok_or_else(|| Error::DimOverflow(format!("rank {rank}")))?;
    let dims = take(&mut bytes, header, "dims")?;
    let shape: Vec<usize> = dims.chunks_exact(4).map(|c| u32_le(c) as usize).collect();
    let count = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .and_then(|n| n.checked_mul(4).map(|_| n))
        .ok_or_else(|| Error::DimOverflow(format!("element count of {shape:?}")))?;
    let payload = take(&mut bytes, count * 4, "payload")?;
    if !bytes.is_empty() {
        return Err(Error::contract(format!(
            "tensor file has {} trailing bytes",
            bytes.len()
        )));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Tensor::new(shape, data)
}

pub fn write(path: impl AsRef<Path>, t: &Tensor) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode(t)?).map_err(|e| Error::io(path, e))
}

pub fn read(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

/// Rounds every value to the nearest f32, i.e. what a write/read cycle yields.
pub fn quantize(t: &Tensor) -> Tensor {
    t.map(|v| v as f32 as f64)
}
