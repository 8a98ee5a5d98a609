//! YUV4MPEG2 clip storage (4:2:0 or mono). Missing chroma is written as
//! neutral grey.

use std::path::Path;

use super::{Clip, Frame, VideoError};

pub fn y4m_to_bytes(clip: &Clip) -> Vec<u8> {
    let (w, h) = (clip.width(), clip.height());
    let fps = clip.fps_nominal.max(1.0).round() as u32;
    let mut out = format!("YUV4MPEG2 W{w} H{h} F{fps}:1 Ip A1:1 C420jpeg\n").into_bytes();
    let chroma_len = w.div_ceil(2) * h.div_ceil(2);
    let neutral = vec![128u8; chroma_len];
    for f in clip.frames() {
        out.extend_from_slice(b"FRAME\n");
        out.extend_from_slice(f.luma());
        match f.chroma() {
            Some((u, v)) => {
                out.extend_from_slice(u);
                out.extend_from_slice(v);
            }
            None => {
                out.extend_from_slice(&neutral);
                out.extend_from_slice(&neutral);
            }
        }
    }
    out
}

/// Parses a YUV4MPEG2 stream; the clip gets the given id and label.
pub fn y4m_from_bytes(bytes: &[u8], clip_id: &str, label: usize) -> Result<Clip, VideoError> {
    let bad = |m: &str| VideoError::Y4m(m.to_string());
    let nl = bytes.iter().position(|&b| b == b'\n').ok_or_else(|| bad("missing header"))?;
    let header = std::str::from_utf8(&bytes[..nl]).map_err(|_| bad("header is not ASCII"))?;
    let mut tokens = header.split(' ');
    if tokens.next() != Some("YUV4MPEG2") {
        return Err(bad("bad signature"));
    }
    let (mut w, mut h, mut fps, mut mono) = (0usize, 0usize, 25f32, false);
    for t in tokens {
        let (tag, val) = t.split_at(1.min(t.len()));
        match tag {
            "W" => w = val.parse().map_err(|_| bad("bad width"))?,
            "H" => h = val.parse().map_err(|_| bad("bad height"))?,
            "F" => {
                let (n, d) = val.split_once(':').ok_or_else(|| bad("bad frame rate"))?;
                let n: f32 = n.parse().map_err(|_| bad("bad frame rate"))?;
                let d: f32 = d.parse().map_err(|_| bad("bad frame rate"))?;
                if d > 0.0 {
                    fps = n / d;
                }
            }
            "C" => {
                mono = val.starts_with("mono");
                if !mono && !val.starts_with("420") {
                    return Err(bad(&format!("unsupported colour space {val}")));
                }
            }
            _ => {}
        }
    }
    if w == 0 || h == 0 {
        return Err(VideoError::InvalidDimensions { width: w, height: h });
    }
    let chroma = if mono { 0 } else { w.div_ceil(2) * h.div_ceil(2) };
    let mut pos = nl + 1;
    let mut frames = Vec::new();
    while pos < bytes.len() {
        let end = bytes[pos..]
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| bad("truncated frame header"))?;
        if !bytes[pos..pos + end].starts_with(b"FRAME") {
            return Err(bad(&format!("expected FRAME marker for frame {}", frames.len())));
        }
        pos += end + 1;
        let need = w * h + 2 * chroma;
        if pos + need > bytes.len() {
            return Err(bad(&format!("frame {} truncated", frames.len())));
        }
        let luma = bytes[pos..pos + w * h].to_vec();
        let mut frame = Frame::new(w, h, luma)?;
        if chroma > 0 {
            let u = bytes[pos + w * h..pos + w * h + chroma].to_vec();
            let v = bytes[pos + w * h + chroma..pos + need].to_vec();
            frame = frame.with_chroma(u, v)?;
        }
        frames.push(frame);
        pos += need;
    }
    Clip::new(clip_id, label, fps, frames)
}

pub fn write_y4m(clip: &Clip, path: impl AsRef<Path>) -> Result<(), VideoError> {
    std::fs::write(path, y4m_to_bytes(clip))?;
    Ok(())
}

pub fn read_y4m(path: impl AsRef<Path>, clip_id: &str, label: usize) -> Result<Clip, VideoError> {
    y4m_from_bytes(&std::fs::read(path)?, clip_id, label)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_fills_neutral_chroma() {
        let frames = (0..3)
            .map(|t| Frame::new(4, 2, (0..8).map(|i| (i * 10 + t) as u8).collect()).unwrap())
            .collect();
        let clip = Clip::new("a", 2, 25.0, frames).unwrap();
        let bytes = y4m_to_bytes(&clip);
        let back = y4m_from_bytes(&bytes, "a", 2).unwrap();
        assert_eq!(back.len(), 3);
        for (a, b) in clip.frames().iter().zip(back.frames()) {
            assert_eq!(a.luma(), b.luma());
            assert_eq!(b.chroma().unwrap().0, &[128, 128]);
        }
        assert!(y4m_from_bytes(&bytes[..bytes.len() - 1], "a", 2).is_err());
        assert!(y4m_from_bytes(b"RIFF", "a", 2).is_err());
    }
}
