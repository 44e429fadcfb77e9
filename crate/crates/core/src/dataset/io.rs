//! Native raster and patch-set files, plus binary PGM import.
//!
//! Raster file: `SARF`, version u16, height u32, width u32, channels u32
//! (always 1), row-major little-endian f32 samples, then a CRC32 of all
//! preceding bytes. Patch-set file: `SARP`, count u32, then per pair
//! source id u32, row u32, col u32, 40x40 clean and 40x40 noisy f32 blocks.

use std::fs;
use std::path::Path;

use super::{PatchPair, PATCH_SIZE};
use crate::error::{Error, Result};
use crate::raster::Raster;

pub const RASTER_MAGIC: &[u8; 4] = b"SARF";
pub const RASTER_VERSION: u16 = 1;
pub const PATCH_MAGIC: &[u8; 4] = b"SARP";
/// Largest raster accepted on read, in pixels.
pub const MAX_PIXELS: u64 = 1 << 32;
/// Zero-valued integer samples map to this fraction of full scale.
pub const PGM_FLOOR_FRACTION: f32 = 1e-3;

pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Reader { bytes, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::format(format!("truncated: need {n} bytes at offset {}", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub(crate) fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| Error::format("length overflow"))?)?;
        Ok(bytes.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect())
    }

    pub(crate) fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }
}

pub(crate) fn push_f32s(out: &mut Vec<u8>, values: &[f32]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

/// Splits off and verifies the trailing CRC32.
pub(crate) fn checked_body(bytes: &[u8]) -> Result<&[u8]> {
    if bytes.len() < 4 {
        return Err(Error::format("file too short for a checksum"));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().unwrap());
    if crc32fast::hash(body) != stored {
        return Err(Error::format("checksum mismatch"));
    }
    Ok(body)
}

pub fn encode_raster(raster: &Raster) -> Vec<u8> {
    let mut out = Vec::with_capacity(18 + raster.len() * 4 + 4);
    out.extend_from_slice(RASTER_MAGIC);
    out.extend_from_slice(&RASTER_VERSION.to_le_bytes());
    out.extend_from_slice(&(raster.height() as u32).to_le_bytes());
    out.extend_from_slice(&(raster.width() as u32).to_le_bytes());
    out.extend_from_slice(&1u32.to_le_bytes());
    push_f32s(&mut out, raster.data());
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

pub fn decode_raster(bytes: &[u8]) -> Result<Raster> {
    if bytes.len() < 4 || &bytes[..4] != RASTER_MAGIC {
        return Err(Error::format("bad raster magic"));
    }
    let body = checked_body(bytes)?;
    let mut rd = Reader::new(body);
    rd.take(4)?;
    let version = rd.u16()?;
    if version != RASTER_VERSION {
        return Err(Error::format(format!("unsupported raster version {version}")));
    }
    let (h, w, ch) = (rd.u32()?, rd.u32()?, rd.u32()?);
    if ch != 1 {
        return Err(Error::format(format!("expected 1 channel, found {ch}")));
    }
    let pixels = u64::from(h) * u64::from(w);
    if pixels == 0 || pixels > MAX_PIXELS {
        return Err(Error::format(format!("invalid raster dimensions {h}x{w}")));
    }
    if rd.remaining() as u64 != pixels * 4 {
        return Err(Error::format(format!(
            "payload of {} bytes does not match {h}x{w}",
            rd.remaining()
        )));
    }
    let data = rd.f32s(pixels as usize)?;
    Raster::new(h as usize, w as usize, data).map_err(|e| Error::format(format!("invalid samples: {e}")))
}

/// Parses binary (P5) PGM with 8- or 16-bit samples. Samples map directly to
/// amplitude; zeros are raised to `PGM_FLOOR_FRACTION` of full scale.
pub fn decode_pgm(bytes: &[u8]) -> Result<Raster> {
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(Error::format("not a binary PGM"));
    }
    let mut pos = 2;
    let mut fields = [0u64; 3];
    for field in &mut fields {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => return Err(Error::format("truncated PGM header")),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::format("malformed PGM header"))?;
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(Error::format("malformed PGM header"));
    }
    pos += 1;
    let [w, h, maxval] = fields;
    if w == 0 || h == 0 || w * h > MAX_PIXELS {
        return Err(Error::format(format!("invalid PGM dimensions {w}x{h}")));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(Error::format(format!("invalid PGM maxval {maxval}")));
    }
    let pixels = (w * h) as usize;
    let wide = maxval > 255;
    let need = pixels * if wide { 2 } else { 1 };
    let payload = bytes.get(pos..pos + need).ok_or_else(|| Error::format("truncated PGM payload"))?;
    let floor = PGM_FLOOR_FRACTION * maxval as f32;
    let data = if wide {
        payload.chunks_exact(2).map(|b| f32::from(u16::from_be_bytes([b[0], b[1]])).max(floor)).collect()
    } else {
        payload.iter().map(|&b| f32::from(b).max(floor)).collect()
    };
    Raster::new(h as usize, w as usize, data)
}

/// Writes an 8-bit binary PGM, scaling `[0, peak]` to `[0, 255]`.
pub fn encode_pgm(raster: &Raster, peak: f32) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", raster.width(), raster.height()).into_bytes();
    out.extend(raster.data().iter().map(|&v| (v / peak * 255.0).round().clamp(0.0, 255.0) as u8));
    out
}

pub fn read_raster(path: impl AsRef<Path>) -> Result<Raster> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    let res = if bytes.starts_with(RASTER_MAGIC) {
        decode_raster(&bytes)
    } else if bytes.starts_with(b"P5") {
        decode_pgm(&bytes)
    } else {
        Err(Error::format("unrecognized raster magic"))
    };
    res.map_err(|e| match e {
        Error::Format(m) => Error::format(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn write_raster(raster: &Raster, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_raster(raster))?;
    Ok(())
}

pub fn encode_patch_set(pairs: &[PatchPair]) -> Result<Vec<u8>> {
    let block = PATCH_SIZE * PATCH_SIZE;
    let mut out = Vec::with_capacity(8 + pairs.len() * (12 + 8 * block));
    out.extend_from_slice(PATCH_MAGIC);
    out.extend_from_slice(&(pairs.len() as u32).to_le_bytes());
    for p in pairs {
        if p.clean.dims() != (PATCH_SIZE, PATCH_SIZE) || p.noisy.dims() != (PATCH_SIZE, PATCH_SIZE) {
            return Err(Error::shape("patch-set records must be 40x40"));
        }
        out.extend_from_slice(&p.source_id.to_le_bytes());
        out.extend_from_slice(&p.offset.0.to_le_bytes());
        out.extend_from_slice(&p.offset.1.to_le_bytes());
        push_f32s(&mut out, p.clean.data());
        push_f32s(&mut out, p.noisy.data());
    }
    Ok(out)
}

pub fn decode_patch_set(bytes: &[u8]) -> Result<Vec<PatchPair>> {
    let mut rd = Reader::new(bytes);
    if rd.take(4).ok() != Some(&PATCH_MAGIC[..]) {
        return Err(Error::format("bad patch-set magic"));
    }
    let count = rd.u32()? as usize;
    let block = PATCH_SIZE * PATCH_SIZE;
    let record = 12 + 8 * block;
    if rd.remaining() != count * record {
        return Err(Error::format(format!(
            "patch set declares {count} records but holds {} bytes",
            rd.remaining()
        )));
    }
    (0..count)
        .map(|_| {
            let source_id = rd.u32()?;
            let offset = (rd.u32()?, rd.u32()?);
            let clean = Raster::new(PATCH_SIZE, PATCH_SIZE, rd.f32s(block)?);
            let noisy = Raster::new(PATCH_SIZE, PATCH_SIZE, rd.f32s(block)?);
            match (clean, noisy) {
                (Ok(clean), Ok(noisy)) => Ok(PatchPair { clean, noisy, source_id, offset }),
                (Err(e), _) | (_, Err(e)) => Err(Error::format(format!("invalid patch samples: {e}"))),
            }
        })
        .collect()
}

pub fn write_patch_set(pairs: &[PatchPair], path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_patch_set(pairs)?)?;
    Ok(())
}

pub fn read_patch_set(path: impl AsRef<Path>) -> Result<Vec<PatchPair>> {
    decode_patch_set(&fs::read(path)?)
}
