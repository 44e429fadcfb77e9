//! Binary checkpoints.
//!
//! Layout: `SRCW`, version u16, depth u16, width u16; then per layer the conv
//! weights and bias followed by gamma and beta for normalized layers; then
//! running mean and variance of every normalized layer; all as little-endian
//! f32. A CRC32 of everything before it closes the file.

use std::fs;
use std::path::Path;

use super::{Layer, SarCnnModel};
use crate::dataset::io::{checked_body, push_f32s, Reader};
use crate::error::{Error, Result};
use crate::nn::{BatchNormParams, ConvParams};
use crate::tensor::{Dims, Real, Tensor4};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SRCW";
pub const CHECKPOINT_VERSION: u16 = 1;

fn to_f32<T: Real>(v: &[T]) -> Vec<f32> {
    v.iter().map(|x| x.as_f64() as f32).collect()
}

/// Serializes the model; parameters are stored in single precision.
pub fn encode_checkpoint<T: Real>(model: &SarCnnModel<T>) -> Result<Vec<u8>> {
    let depth = u16::try_from(model.depth()).map_err(|_| Error::usage("depth exceeds u16"))?;
    let width = u16::try_from(model.width()).map_err(|_| Error::usage("width exceeds u16"))?;
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&depth.to_le_bytes());
    out.extend_from_slice(&width.to_le_bytes());
    for p in model.params() {
        push_f32s(&mut out, &to_f32(p));
    }
    for norm in model.layers().iter().filter_map(|l| l.norm.as_ref()) {
        push_f32s(&mut out, &to_f32(&norm.running_mean));
        push_f32s(&mut out, &to_f32(&norm.running_var));
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<SarCnnModel<f32>> {
    if bytes.len() < 4 || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(Error::format("bad checkpoint magic"));
    }
    let body = checked_body(bytes)?;
    let mut rd = Reader::new(body);
    rd.take(4)?;
    let version = rd.u16()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::format(format!("unsupported checkpoint version {version}")));
    }
    let depth = rd.u16()? as usize;
    let width = rd.u16()? as usize;
    if depth < 3 || width == 0 {
        return Err(Error::format(format!("invalid architecture depth {depth}, width {width}")));
    }
    let mut layers = Vec::with_capacity(depth);
    for i in 0..depth {
        let (cin, cout) = match i {
            0 => (1, width),
            _ if i == depth - 1 => (width, 1),
            _ => (width, width),
        };
        let dims = Dims::new(cout, cin, 3, 3);
        let weights = Tensor4::from_vec(dims, rd.f32s(dims.len())?)?;
        let bias = rd.f32s(cout)?;
        let conv = ConvParams::new(weights, bias).map_err(|e| Error::format(e.to_string()))?;
        let norm = if i > 0 && i < depth - 1 {
            let mut n = BatchNormParams::new(width);
            n.gamma = rd.f32s(width)?;
            n.beta = rd.f32s(width)?;
            Some(n)
        } else {
            None
        };
        layers.push(Layer { conv, norm, relu: i < depth - 1 });
    }
    for norm in layers.iter_mut().filter_map(|l| l.norm.as_mut()) {
        norm.running_mean = rd.f32s(width)?;
        norm.running_var = rd.f32s(width)?;
    }
    if rd.remaining() != 0 {
        return Err(Error::format(format!("{} trailing bytes in checkpoint", rd.remaining())));
    }
    SarCnnModel::from_layers(depth, width, layers)
}

pub fn save_checkpoint<T: Real>(model: &SarCnnModel<T>, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_checkpoint(model)?)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<SarCnnModel<f32>> {
    decode_checkpoint(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trained_like() -> SarCnnModel<f32> {
        let mut m = SarCnnModel::<f32>::build(4, 3, 42).unwrap();
        for (k, norm) in m.layers_mut().iter_mut().filter_map(|l| l.norm.as_mut()).enumerate() {
            norm.running_mean.iter_mut().for_each(|v| *v = 0.25 + k as f32);
            norm.running_var.iter_mut().for_each(|v| *v = 1.5);
            norm.gamma[0] = 0.75;
        }
        m
    }

    #[test]
    fn round_trip_is_idempotent_and_exact() {
        let m = trained_like();
        let bytes = encode_checkpoint(&m).unwrap();
        let back = decode_checkpoint(&bytes).unwrap();
        assert_eq!(back, m);
        assert_eq!(encode_checkpoint(&back).unwrap(), bytes);
        let expected_len = 10 + 4 * (m.parameter_count() + 2 * 2 * 3) + 4;
        assert_eq!(bytes.len(), expected_len);
    }

    #[test]
    fn truncation_and_corruption_are_format_errors() {
        let bytes = encode_checkpoint(&trained_like()).unwrap();
        for cut in [0, 3, 9, bytes.len() / 2, bytes.len() - 1] {
            assert!(matches!(decode_checkpoint(&bytes[..cut]), Err(Error::Format(_))), "cut {cut}");
        }
        let mut flipped = bytes.clone();
        flipped[20] ^= 1;
        assert!(matches!(decode_checkpoint(&flipped), Err(Error::Format(_))));
        let mut wrong_version = bytes[..bytes.len() - 4].to_vec();
        wrong_version[4] = 9;
        let crc = crc32fast::hash(&wrong_version);
        wrong_version.extend_from_slice(&crc.to_le_bytes());
        assert!(matches!(decode_checkpoint(&wrong_version), Err(Error::Format(_))));
    }
}
