//! `MVS1` container, little-endian:
//!
//! ```text
//! "MVS1" | u16 version=1 | u16 width | u16 height | u16 block_size
//! u16 gop_length | u16 search_range | u32 frame_count
//! frame_count × u8 type (0 = I, 1 = P)
//! per frame: width×height luma bytes, then for P-frames
//!            (width/block)×(height/block) pairs of i8 (dx, dy)
//! u32 CRC32 of all preceding bytes
//! ```

use std::path::Path;

use super::{CompressedClip, ContainerHeader, EncodedFrame, FrameType, GopConfig, VideoError};
use crate::motion::{MotionField, MotionVector};

const MAGIC: &[u8; 4] = b"MVS1";
const VERSION: u16 = 1;
const FIXED_HEADER: usize = 4 + 2 * 6 + 4;

fn field_u16(field: &'static str, value: usize) -> Result<u16, VideoError> {
    u16::try_from(value).map_err(|_| VideoError::FieldOverflow { field, value })
}

pub fn container_to_bytes(cc: &CompressedClip) -> Result<Vec<u8>, VideoError> {
    if cc.frames.is_empty() {
        return Err(VideoError::EmptyClip);
    }
    cc.validate()?;
    let h = &cc.header;
    let (bx, by) = h.blocks();
    let p_frames = h.frame_types.iter().filter(|t| **t == FrameType::P).count();
    let mut out = Vec::with_capacity(
        FIXED_HEADER + h.frame_count() * (1 + h.width * h.height) + p_frames * 2 * bx * by + 4,
    );
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for (field, v) in [
        ("width", h.width),
        ("height", h.height),
        ("block_size", h.gop.block_size),
        ("gop_length", h.gop.gop_length),
        ("search_range", h.gop.search_range),
    ] {
        out.extend_from_slice(&field_u16(field, v)?.to_le_bytes());
    }
    let count = u32::try_from(h.frame_count()).map_err(|_| VideoError::FieldOverflow {
        field: "frame_count",
        value: h.frame_count(),
    })?;
    out.extend_from_slice(&count.to_le_bytes());
    out.extend(h.frame_types.iter().map(|t| t.code()));
    for f in &cc.frames {
        out.extend_from_slice(&f.luma);
        if let Some(v) = &f.motion {
            for mv in v {
                out.push(mv.dx as u8);
                out.push(mv.dy as u8);
            }
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

struct Parsed<'a> {
    header: ContainerHeader,
    /// Byte offset of each frame's luma plane.
    luma_offsets: Vec<usize>,
    /// Motion record of each frame (empty for I-frames).
    records: Vec<&'a [u8]>,
}

fn parse(bytes: &[u8]) -> Result<Parsed<'_>, VideoError> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(VideoError::BadMagic);
    }
    if bytes.len() < FIXED_HEADER {
        return Err(VideoError::TruncatedHeader);
    }
    let u16_at = |o: usize| u16::from_le_bytes([bytes[o], bytes[o + 1]]) as usize;
    let version = u16_at(4) as u16;
    if version != VERSION {
        return Err(VideoError::UnsupportedVersion(version));
    }
    let (width, height) = (u16_at(6), u16_at(8));
    let gop = GopConfig {
        block_size: u16_at(10),
        gop_length: u16_at(12),
        search_range: u16_at(14),
    };
    gop.validate()?;
    if width == 0 || height == 0 {
        return Err(VideoError::InvalidDimensions { width, height });
    }
    if width % gop.block_size != 0 || height % gop.block_size != 0 {
        return Err(VideoError::DimensionMismatch {
            width,
            height,
            block: gop.block_size,
        });
    }
    let count = u32::from_le_bytes(bytes[16..20].try_into().expect("4 bytes")) as usize;
    let types_end = FIXED_HEADER
        .checked_add(count)
        .filter(|&e| e <= bytes.len())
        .ok_or(VideoError::TruncatedHeader)?;
    let mut frame_types = Vec::with_capacity(count);
    for (i, &code) in bytes[FIXED_HEADER..types_end].iter().enumerate() {
        match FrameType::from_code(code) {
            Some(t) if t == gop.frame_type(i) => frame_types.push(t),
            _ => return Err(VideoError::InconsistentFrameType { frame: i, code }),
        }
    }
    let plane = width * height;
    let record = 2 * (width / gop.block_size) * (height / gop.block_size);
    // Everything after the type table except the 4-byte checksum.
    let payload_end = bytes.len().saturating_sub(4).max(types_end);
    let mut pos = types_end;
    let mut luma_offsets = Vec::with_capacity(count);
    let mut records = Vec::with_capacity(count);
    for (i, t) in frame_types.iter().enumerate() {
        let need = plane + if *t == FrameType::P { record } else { 0 };
        if pos + need > payload_end {
            return Err(VideoError::TruncatedFrame { frame: i });
        }
        luma_offsets.push(pos);
        records.push(&bytes[pos + plane..pos + need]);
        pos += need;
    }
    if bytes.len() < pos + 4 {
        return Err(VideoError::TruncatedFrame {
            frame: count.saturating_sub(1),
        });
    }
    if bytes.len() > pos + 4 {
        return Err(VideoError::TrailingBytes(bytes.len() - pos - 4));
    }
    let stored = u32::from_le_bytes(bytes[pos..pos + 4].try_into().expect("4 bytes"));
    let computed = crc32fast::hash(&bytes[..pos]);
    if stored != computed {
        return Err(VideoError::ChecksumMismatch { stored, computed });
    }
    Ok(Parsed {
        header: ContainerHeader {
            width,
            height,
            gop,
            frame_types,
        },
        luma_offsets,
        records,
    })
}

fn vectors(record: &[u8]) -> Vec<MotionVector> {
    record
        .chunks_exact(2)
        .map(|p| MotionVector::new(p[0] as i8, p[1] as i8))
        .collect()
}

pub fn container_from_bytes(bytes: &[u8]) -> Result<CompressedClip, VideoError> {
    let parsed = parse(bytes)?;
    let plane = parsed.header.width * parsed.header.height;
    let frames = parsed
        .luma_offsets
        .iter()
        .zip(&parsed.records)
        .zip(&parsed.header.frame_types)
        .map(|((&off, rec), t)| EncodedFrame {
            luma: bytes[off..off + plane].to_vec(),
            motion: (*t == FrameType::P).then(|| vectors(rec)),
        })
        .collect();
    Ok(CompressedClip {
        header: parsed.header,
        frames,
    })
}

/// Extracts only the motion fields from serialized container bytes,
/// skipping the pictures. I-frames yield empty I-tagged fields.
pub fn decode_motion_vectors_bytes(bytes: &[u8]) -> Result<Vec<MotionField>, VideoError> {
    let parsed = parse(bytes)?;
    let (bx, by) = parsed.header.blocks();
    let b = parsed.header.gop.block_size;
    Ok(parsed
        .header
        .frame_types
        .iter()
        .zip(&parsed.records)
        .map(|(t, rec)| match t {
            FrameType::P => MotionField {
                blocks_x: bx,
                blocks_y: by,
                block_size: b,
                frame_type: FrameType::P,
                vectors: vectors(rec),
            },
            FrameType::I => MotionField::empty_intra(bx, by, b),
        })
        .collect())
}

pub fn write_container(cc: &CompressedClip, path: impl AsRef<Path>) -> Result<(), VideoError> {
    let bytes = container_to_bytes(cc)?;
    std::fs::write(path, bytes)?;
    Ok(())
}

pub fn read_container(path: impl AsRef<Path>) -> Result<CompressedClip, VideoError> {
    container_from_bytes(&std::fs::read(path)?)
}
