use std::io::Write;
use std::path::Path;

use super::flow::FlowField;
use super::{MotionError, MotionField};
use crate::nn::Tensor;
use crate::videoio::FrameType;

/// Replaces every empty (I-frame) field with a copy of the nearest preceding
/// P-frame field. Empty fields with no P predecessor become all-zero.
/// Frame types are preserved.
pub fn fill_iframe_gaps(fields: &[MotionField]) -> Vec<MotionField> {
    let mut last_p: Option<&MotionField> = None;
    fields
        .iter()
        .map(|f| {
            if !f.is_empty() {
                if f.frame_type == FrameType::P {
                    last_p = Some(f);
                }
                return f.clone();
            }
            let vectors = match last_p {
                Some(p) if p.blocks_x == f.blocks_x && p.blocks_y == f.blocks_y => p.vectors.clone(),
                _ => vec![super::MotionVector::ZERO; f.blocks_x * f.blocks_y],
            };
            MotionField {
                vectors,
                ..f.clone()
            }
        })
        .collect()
}

/// Expands a block field into a per-pixel map of `out_w × out_h`. Each
/// output pixel takes the vector of the block covering it. With `rescale`,
/// displacements are multiplied by the resize ratio of each axis.
pub fn rasterize(
    field: &MotionField,
    out_w: usize,
    out_h: usize,
    rescale: bool,
) -> Result<FlowField, MotionError> {
    if out_w == 0 || out_h == 0 {
        return Err(MotionError::ZeroOutput);
    }
    if field.is_empty() {
        return Err(MotionError::EmptyField { frame: 0 });
    }
    let (fw, fh) = (field.width(), field.height());
    let (sx, sy) = if rescale {
        (out_w as f32 / fw as f32, out_h as f32 / fh as f32)
    } else {
        (1.0, 1.0)
    };
    let col_block: Vec<usize> = (0..out_w)
        .map(|x| ((x * fw / out_w) / field.block_size).min(field.blocks_x - 1))
        .collect();
    let mut out = FlowField::zeros(out_w, out_h);
    for y in 0..out_h {
        let by = ((y * fh / out_h) / field.block_size).min(field.blocks_y - 1);
        for (x, &bx) in col_block.iter().enumerate() {
            let mv = field.at(bx, by);
            out.u[y * out_w + x] = mv.dx as f32 * sx;
            out.v[y * out_w + x] = mv.dy as f32 * sy;
        }
    }
    Ok(out)
}

/// Mean displacement of each `block_size` square, row-major.
pub fn block_average(map: &FlowField, block_size: usize) -> Vec<(f32, f32)> {
    let (bx_n, by_n) = (map.width / block_size, map.height / block_size);
    let area = (block_size * block_size) as f32;
    let mut out = Vec::with_capacity(bx_n * by_n);
    for by in 0..by_n {
        for bx in 0..bx_n {
            let (mut su, mut sv) = (0f32, 0f32);
            for y in by * block_size..(by + 1) * block_size {
                for x in bx * block_size..(bx + 1) * block_size {
                    let (u, v) = map.at(x, y);
                    su += u;
                    sv += v;
                }
            }
            out.push((su / area, sv / area));
        }
    }
    out
}

/// Stacks `stack_length` consecutive two-channel maps starting at `t0` into
/// a `2L×H×W` tensor ordered `[u_t0, v_t0, u_t0+1, v_t0+1, …]`, each value
/// multiplied by `scale` (typically `1 / search_range`). Zero motion maps to
/// zero.
pub fn stack_inputs(
    maps: &[FlowField],
    t0: usize,
    stack_length: usize,
    scale: f32,
) -> Result<Tensor<f32>, MotionError> {
    if stack_length == 0 || t0 + stack_length > maps.len() {
        return Err(MotionError::InsufficientFrames {
            start: t0,
            needed: stack_length,
            available: maps.len(),
        });
    }
    let window = &maps[t0..t0 + stack_length];
    let (w, h) = (window[0].width, window[0].height);
    if window.iter().any(|m| m.width != w || m.height != h) {
        return Err(MotionError::InconsistentMaps);
    }
    let mut values = Vec::with_capacity(2 * stack_length * w * h);
    for m in window {
        values.extend(m.u.iter().map(|x| x * scale));
        values.extend(m.v.iter().map(|x| x * scale));
    }
    Ok(Tensor::from_vec(&[2 * stack_length, h, w], values).expect("shape"))
}

/// Binary greyscale image (`P5`).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Pgm {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl Pgm {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.data);
        out
    }
}

pub fn write_pgm(img: &Pgm, path: impl AsRef<Path>) -> std::io::Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&img.to_bytes())
}

/// Per-pixel visualisation of one channel of a block field (`0` = dx,
/// `1` = dy) with a +128 offset.
pub fn motion_field_pgm(field: &MotionField, channel: usize) -> Pgm {
    let (w, h) = (field.width(), field.height());
    let mut data = vec![128u8; w * h];
    if !field.is_empty() {
        for y in 0..h {
            for x in 0..w {
                let mv = field.at(x / field.block_size, y / field.block_size);
                let d = if channel == 0 { mv.dx } else { mv.dy };
                data[y * w + x] = (128 + d as i32).clamp(0, 255) as u8;
            }
        }
    }
    Pgm {
        width: w,
        height: h,
        data,
    }
}
