//! Binary wire formats, all little-endian and bit-exact.
//!
//! Three record types share the same conventions (4-byte ASCII magic,
//! explicit sizes, no padding, no trailing bytes):
//!
//! * `HITW` — a parameter checkpoint: every tensor with its dotted name,
//!   rank, dims, and raw f32 payload, in registration order.
//! * `HITR` — a single `[C, H, W]` raster in f32 or u8.
//! * `HES1` — one persisted history embedding with its tile key, config
//!   hash, geometry, timestamp, and step count.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::hit::HistoryEmbedding;
use crate::params::ParamSet;
use crate::tensor::Tensor;

const CHECKPOINT_MAGIC: &[u8; 4] = b"HITW";
const RASTER_MAGIC: &[u8; 4] = b"HITR";
const EMBEDDING_MAGIC: &[u8; 4] = b"HES1";
const CHECKPOINT_VERSION: u16 = 1;
const RASTER_VERSION: u8 = 1;
const EMBEDDING_VERSION: u16 = 1;

fn decode_err(what: &str) -> Error {
    Error::Decode(what.to_string())
}

/// Forward-only reader that fails on truncation and tracks exhaustion.
struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(decode_err("unexpected end of input"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn magic(&mut self, expect: &[u8; 4], what: &str) -> Result<()> {
        if self.take(4)? != expect {
            return Err(Error::Decode(format!("bad magic for {what}")));
        }
        Ok(())
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("len 2")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("len 4")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("len 8")))
    }

    fn f32_vec(&mut self, count: usize) -> Result<Vec<f32>> {
        let raw = self.take(count.checked_mul(4).ok_or_else(|| decode_err("payload overflow"))?)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("len 4")))
            .collect())
    }

    fn string(&mut self, len: usize) -> Result<String> {
        let raw = self.take(len)?;
        core::str::from_utf8(raw)
            .map(|s| s.to_string())
            .map_err(|_| decode_err("invalid UTF-8 in name"))
    }

    fn finish(self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(decode_err("trailing bytes after record"));
        }
        Ok(())
    }
}

fn push_u16(out: &mut Vec<u8>, v: u16) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn push_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn push_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn push_f32s(out: &mut Vec<u8>, data: &[f32]) {
    for &v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

/// Serializes every parameter in registration order.
pub fn encode_checkpoint(ps: &ParamSet<f32>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    push_u16(&mut out, CHECKPOINT_VERSION);
    let count = ps.iter().count();
    push_u32(&mut out, count as u32);
    for (name, tensor) in ps.iter() {
        push_u16(&mut out, name.len() as u16);
        out.extend_from_slice(name.as_bytes());
        out.push(tensor.rank() as u8);
        for &d in tensor.shape() {
            push_u32(&mut out, d as u32);
        }
        push_f32s(&mut out, tensor.data());
    }
    out
}

/// Decodes a checkpoint into `(name, tensor)` pairs in stored order.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<Vec<(String, Tensor<f32>)>> {
    let mut r = Reader::new(bytes);
    r.magic(CHECKPOINT_MAGIC, "checkpoint")?;
    let version = r.u16()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Decode(format!("unsupported checkpoint version {version}")));
    }
    let count = r.u32()? as usize;
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = r.u16()? as usize;
        let name = r.string(name_len)?;
        let rank = r.u8()? as usize;
        let mut shape = Vec::with_capacity(rank);
        let mut numel = 1usize;
        for _ in 0..rank {
            let d = r.u32()? as usize;
            numel = numel
                .checked_mul(d)
                .ok_or_else(|| decode_err("tensor size overflow"))?;
            shape.push(d);
        }
        let data = r.f32_vec(numel)?;
        entries.push((name, Tensor::new(shape, data)?));
    }
    r.finish()?;
    Ok(entries)
}

/// Loads a checkpoint into an existing parameter set. Strict: the stored
/// names, shapes, and count must match exactly.
pub fn load_checkpoint(ps: &mut ParamSet<f32>, bytes: &[u8]) -> Result<()> {
    let entries = decode_checkpoint(bytes)?;
    if entries.len() != ps.iter().count() {
        return Err(Error::Decode(format!(
            "checkpoint has {} tensors, model has {}",
            entries.len(),
            ps.iter().count()
        )));
    }
    for (name, tensor) in entries {
        let id = ps
            .id_of(&name)
            .ok_or_else(|| Error::Decode(format!("checkpoint tensor {name} not in model")))?;
        if ps.get(id).shape() != tensor.shape() {
            return Err(Error::Decode(format!(
                "shape mismatch for {name}: stored {:?}, model {:?}",
                tensor.shape(),
                ps.get(id).shape()
            )));
        }
        *ps.get_mut(id) = tensor;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Rasters
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RasterDtype {
    F32,
    U8,
}

/// Serializes a `[C, H, W]` map. `U8` requires every value to be an
/// integer in 0..=255 (used for label masks).
pub fn encode_raster(x: &Tensor<f32>, dtype: RasterDtype) -> Result<Vec<u8>> {
    if x.rank() != 3 {
        return Err(Error::InvalidInput(format!(
            "raster must be rank 3, got {:?}",
            x.shape()
        )));
    }
    let mut out = Vec::new();
    out.extend_from_slice(RASTER_MAGIC);
    out.push(RASTER_VERSION);
    out.push(match dtype {
        RasterDtype::F32 => 0,
        RasterDtype::U8 => 1,
    });
    push_u16(&mut out, 0); // reserved
    for &d in x.shape() {
        push_u32(&mut out, d as u32);
    }
    match dtype {
        RasterDtype::F32 => push_f32s(&mut out, x.data()),
        RasterDtype::U8 => {
            for &v in x.data() {
                if v != libm::roundf(v) || !(0.0..=255.0).contains(&v) {
                    return Err(Error::InvalidInput(format!(
                        "value {v} not representable as u8"
                    )));
                }
                out.push(v as u8);
            }
        }
    }
    Ok(out)
}

/// Decodes a raster back to f32 regardless of the stored dtype.
pub fn decode_raster(bytes: &[u8]) -> Result<Tensor<f32>> {
    let mut r = Reader::new(bytes);
    r.magic(RASTER_MAGIC, "raster")?;
    let version = r.u8()?;
    if version != RASTER_VERSION {
        return Err(Error::Decode(format!("unsupported raster version {version}")));
    }
    let dtype = match r.u8()? {
        0 => RasterDtype::F32,
        1 => RasterDtype::U8,
        other => return Err(Error::Decode(format!("unknown raster dtype {other}"))),
    };
    let reserved = r.u16()?;
    if reserved != 0 {
        return Err(decode_err("nonzero reserved field"));
    }
    let (c, h, w) = (r.u32()? as usize, r.u32()? as usize, r.u32()? as usize);
    let numel = c
        .checked_mul(h)
        .and_then(|v| v.checked_mul(w))
        .ok_or_else(|| decode_err("raster size overflow"))?;
    let data = match dtype {
        RasterDtype::F32 => r.f32_vec(numel)?,
        RasterDtype::U8 => r.take(numel)?.iter().map(|&b| b as f32).collect(),
    };
    r.finish()?;
    Tensor::new(alloc::vec![c, h, w], data)
}

// ---------------------------------------------------------------------------
// History-embedding records
// ---------------------------------------------------------------------------

/// Serializes one persisted embedding.
pub fn encode_he_record(he: &HistoryEmbedding<f32>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(EMBEDDING_MAGIC);
    push_u16(&mut out, EMBEDDING_VERSION);
    push_u16(&mut out, he.tile_key.len() as u16);
    out.extend_from_slice(he.tile_key.as_bytes());
    push_u64(&mut out, he.config_hash);
    push_u32(&mut out, he.grid() as u32);
    push_u32(&mut out, he.dim() as u32);
    push_u64(&mut out, he.timestamp);
    push_u64(&mut out, he.step_count);
    push_f32s(&mut out, he.values.data());
    out
}

/// Decodes one persisted embedding, validating the payload length against
/// the stored geometry.
pub fn decode_he_record(bytes: &[u8]) -> Result<HistoryEmbedding<f32>> {
    let mut r = Reader::new(bytes);
    r.magic(EMBEDDING_MAGIC, "embedding record")?;
    let version = r.u16()?;
    if version != EMBEDDING_VERSION {
        return Err(Error::Decode(format!(
            "unsupported embedding record version {version}"
        )));
    }
    let key_len = r.u16()? as usize;
    let tile_key = r.string(key_len)?;
    let config_hash = r.u64()?;
    let grid = r.u32()? as usize;
    let dim = r.u32()? as usize;
    let timestamp = r.u64()?;
    let step_count = r.u64()?;
    let numel = grid
        .checked_mul(grid)
        .and_then(|v| v.checked_mul(dim))
        .ok_or_else(|| decode_err("embedding size overflow"))?;
    let data = r.f32_vec(numel)?;
    r.finish()?;
    Ok(HistoryEmbedding {
        values: Tensor::new(alloc::vec![grid * grid, dim], data)?,
        tile_key,
        config_hash,
        timestamp,
        step_count,
    })
}
