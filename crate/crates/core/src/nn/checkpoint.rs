//! `NNW1` checkpoint format (little-endian):
//!
//! ```text
//! "NNW1" | u16 version=1 | u16 in_channels | u16 in_h | u16 in_w | u16 classes
//! u16 layer_count | layer_count × 16-byte descriptor
//! u32 tensor_count | per tensor: u32 len, len × f32
//! u32 CRC32 of everything above
//! ```
//!
//! Descriptor: `u8 kind, u8 0, 5 × u16 fields, f32 p`. Kinds: 1 conv
//! (in, out, kernel, stride, pad), 2 maxpool (size), 3 relu, 4 prelu
//! (channels), 5 dropout (p), 6 linear (in, out).

use std::path::Path;

use super::layer::LayerSpec;
use super::network::Network;
use super::tensor::Tensor;
use super::NnError;

const MAGIC: &[u8; 4] = b"NNW1";
const VERSION: u16 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("not an NNW1 checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u16),
    #[error("checkpoint checksum mismatch (stored {stored:#010x}, computed {computed:#010x})")]
    ChecksumMismatch { stored: u32, computed: u32 },
    #[error("checkpoint truncated while reading {0}")]
    Truncated(&'static str),
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error("value {value} of {field} does not fit the checkpoint format")]
    Overflow { field: &'static str, value: usize },
    #[error(transparent)]
    Network(#[from] NnError),
    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),
}

fn u16_of(field: &'static str, value: usize) -> Result<u16, CheckpointError> {
    u16::try_from(value).map_err(|_| CheckpointError::Overflow { field, value })
}

pub fn checkpoint_to_bytes(net: &Network<f32>) -> Result<Vec<u8>, CheckpointError> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let [c, h, w] = net.input_shape();
    for (field, v) in [
        ("in_channels", c),
        ("in_h", h),
        ("in_w", w),
        ("classes", net.num_classes()),
        ("layer_count", net.layers().len()),
    ] {
        out.extend_from_slice(&u16_of(field, v)?.to_le_bytes());
    }
    for layer in net.layers() {
        let (kind, fields, p): (u8, [usize; 5], f32) = match *layer {
            LayerSpec::Conv {
                in_channels,
                out_channels,
                kernel,
                stride,
                pad,
            } => (1, [in_channels, out_channels, kernel, stride, pad], 0.0),
            LayerSpec::MaxPool { size } => (2, [size, 0, 0, 0, 0], 0.0),
            LayerSpec::Relu => (3, [0; 5], 0.0),
            LayerSpec::Prelu { channels } => (4, [channels, 0, 0, 0, 0], 0.0),
            LayerSpec::Dropout { p } => (5, [0; 5], p),
            LayerSpec::Linear {
                in_features,
                out_features,
            } => (6, [in_features, out_features, 0, 0, 0], 0.0),
        };
        out.push(kind);
        out.push(0);
        for f in fields {
            out.extend_from_slice(&u16_of("layer field", f)?.to_le_bytes());
        }
        out.extend_from_slice(&p.to_le_bytes());
    }
    let tensors: Vec<&Tensor<f32>> = net.params().iter().flatten().collect();
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for t in tensors {
        out.extend_from_slice(&(t.len() as u32).to_le_bytes());
        for v in t.values() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or(CheckpointError::Truncated(what))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self, what: &'static str) -> Result<u16, CheckpointError> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }
}

pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<Network<f32>, CheckpointError> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    if bytes.len() < 6 + 4 {
        return Err(CheckpointError::Truncated("header"));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(CheckpointError::UnsupportedVersion(version));
    }
    let (body, trailer) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(trailer.try_into().expect("4 bytes"));
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(CheckpointError::ChecksumMismatch { stored, computed });
    }
    let mut r = Reader { buf: body, pos: 6 };
    let c = r.u16("input shape")? as usize;
    let h = r.u16("input shape")? as usize;
    let w = r.u16("input shape")? as usize;
    let classes = r.u16("class count")? as usize;
    let layer_count = r.u16("layer count")? as usize;
    let mut layers = Vec::with_capacity(layer_count);
    for i in 0..layer_count {
        let d = r.take(16, "layer descriptor")?;
        let f = |k: usize| u16::from_le_bytes([d[2 + 2 * k], d[3 + 2 * k]]) as usize;
        let p = f32::from_le_bytes([d[12], d[13], d[14], d[15]]);
        layers.push(match d[0] {
            1 => LayerSpec::Conv {
                in_channels: f(0),
                out_channels: f(1),
                kernel: f(2),
                stride: f(3),
                pad: f(4),
            },
            2 => LayerSpec::MaxPool { size: f(0) },
            3 => LayerSpec::Relu,
            4 => LayerSpec::Prelu { channels: f(0) },
            5 => LayerSpec::Dropout { p },
            6 => LayerSpec::Linear {
                in_features: f(0),
                out_features: f(1),
            },
            k => return Err(CheckpointError::Malformed(format!("layer {i} has unknown kind {k}"))),
        });
    }
    let tensor_count = r.u32("tensor count")? as usize;
    let expected: usize = layers.iter().map(|l| l.param_shapes().len()).sum();
    if tensor_count != expected {
        return Err(CheckpointError::Malformed(format!(
            "{tensor_count} parameter tensors, descriptors require {expected}"
        )));
    }
    let mut params = Vec::with_capacity(layers.len());
    for layer in &layers {
        let mut ps = Vec::new();
        for shape in layer.param_shapes() {
            let len = r.u32("tensor length")? as usize;
            let want: usize = shape.iter().product();
            if len != want {
                return Err(CheckpointError::Malformed(format!(
                    "tensor of {len} values where {want} expected"
                )));
            }
            let raw = r.take(len.checked_mul(4).ok_or(CheckpointError::Truncated("tensor"))?, "tensor")?;
            let values = raw
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
                .collect();
            ps.push(Tensor::from_vec(&shape, values).expect("length checked"));
        }
        params.push(ps);
    }
    if r.pos != body.len() {
        return Err(CheckpointError::Malformed(format!(
            "{} trailing bytes before checksum",
            body.len() - r.pos
        )));
    }
    Ok(Network::from_parts([c, h, w], layers, classes, params)?)
}

pub fn write_checkpoint(net: &Network<f32>, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
    std::fs::write(path, checkpoint_to_bytes(net)?)?;
    Ok(())
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Network<f32>, CheckpointError> {
    checkpoint_from_bytes(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{build_mini_two_stream, Activation};

    #[test]
    fn round_trip_is_byte_exact() {
        let mut net = build_mini_two_stream::<f32>(32, 4, 5, Activation::Prelu, 3).unwrap();
        net.set_dropout(&[0.25]).unwrap();
        let bytes = checkpoint_to_bytes(&net).unwrap();
        let back = checkpoint_from_bytes(&bytes).unwrap();
        assert_eq!(back.layers(), net.layers());
        assert_eq!(back.params(), net.params());
        assert_eq!(checkpoint_to_bytes(&back).unwrap(), bytes);
    }

    #[test]
    fn corruption_is_detected() {
        let net = build_mini_two_stream::<f32>(32, 2, 3, Activation::Relu, 3).unwrap();
        let bytes = checkpoint_to_bytes(&net).unwrap();
        let mut flipped = bytes.clone();
        flipped[100] ^= 0x01;
        assert!(matches!(
            checkpoint_from_bytes(&flipped),
            Err(CheckpointError::ChecksumMismatch { .. })
        ));
        let mut magic = bytes.clone();
        magic[0] = b'X';
        assert!(matches!(checkpoint_from_bytes(&magic), Err(CheckpointError::BadMagic)));
        let mut version = bytes.clone();
        version[4] = 9;
        assert!(matches!(
            checkpoint_from_bytes(&version),
            Err(CheckpointError::UnsupportedVersion(9))
        ));
        assert!(checkpoint_from_bytes(&bytes[..bytes.len() - 9]).is_err());
    }
}
