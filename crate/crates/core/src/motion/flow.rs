//! Coarse-to-fine windowed least-squares optical flow.

use serde::{Deserialize, Serialize};

use super::MotionError;
use crate::videoio::Frame;

/// Dense two-channel displacement map: `u` horizontal, `v` vertical, in
/// pixels. Also used for rasterized block motion.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowField {
    pub width: usize,
    pub height: usize,
    pub u: Vec<f32>,
    pub v: Vec<f32>,
}

impl FlowField {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            u: vec![0.0; width * height],
            v: vec![0.0; width * height],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.u.iter().chain(&self.v).all(|x| x.is_finite())
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> (f32, f32) {
        let i = y * self.width + x;
        (self.u[i], self.v[i])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowParams {
    pub levels: usize,
    pub window: usize,
    pub iterations: usize,
    /// Windows whose smallest structure-tensor eigenvalue, per pixel, falls
    /// below this are treated as textureless and get no update.
    pub min_eigen: f32,
}

impl Default for FlowParams {
    fn default() -> Self {
        Self {
            levels: 3,
            window: 7,
            iterations: 3,
            min_eigen: 1e-2,
        }
    }
}

#[derive(Clone)]
struct Plane {
    w: usize,
    h: usize,
    data: Vec<f32>,
}

impl Plane {
    fn from_frame(f: &Frame) -> Self {
        Self {
            w: f.width(),
            h: f.height(),
            data: f.luma().iter().map(|&v| v as f32).collect(),
        }
    }

    #[inline]
    fn get(&self, x: isize, y: isize) -> f32 {
        let x = x.clamp(0, self.w as isize - 1) as usize;
        let y = y.clamp(0, self.h as isize - 1) as usize;
        self.data[y * self.w + x]
    }

    fn bilinear(&self, x: f32, y: f32) -> f32 {
        let x = x.clamp(0.0, (self.w - 1) as f32);
        let y = y.clamp(0.0, (self.h - 1) as f32);
        let (x0, y0) = (x.floor(), y.floor());
        let (fx, fy) = (x - x0, y - y0);
        let (x0, y0) = (x0 as isize, y0 as isize);
        let a = self.get(x0, y0);
        let b = self.get(x0 + 1, y0);
        let c = self.get(x0, y0 + 1);
        let d = self.get(x0 + 1, y0 + 1);
        (a * (1.0 - fx) + b * fx) * (1.0 - fy) + (c * (1.0 - fx) + d * fx) * fy
    }

    fn downsample(&self) -> Self {
        let (w, h) = ((self.w / 2).max(1), (self.h / 2).max(1));
        let mut data = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                let (sx, sy) = (2 * x as isize, 2 * y as isize);
                data.push(
                    0.25 * (self.get(sx, sy) + self.get(sx + 1, sy) + self.get(sx, sy + 1) + self.get(sx + 1, sy + 1)),
                );
            }
        }
        Self { w, h, data }
    }

    /// Sum over a `win×win` window centred on each pixel, truncated at the
    /// borders.
    fn box_sum(&self, win: usize) -> Vec<f32> {
        let (w, h) = (self.w, self.h);
        let mut integral = vec![0f64; (w + 1) * (h + 1)];
        for y in 0..h {
            let mut row = 0f64;
            for x in 0..w {
                row += self.data[y * w + x] as f64;
                integral[(y + 1) * (w + 1) + x + 1] = integral[y * (w + 1) + x + 1] + row;
            }
        }
        let r = win / 2;
        let mut out = vec![0f32; w * h];
        for y in 0..h {
            let (y0, y1) = (y.saturating_sub(r), (y + r + 1).min(h));
            for x in 0..w {
                let (x0, x1) = (x.saturating_sub(r), (x + r + 1).min(w));
                let s = integral[y1 * (w + 1) + x1] - integral[y0 * (w + 1) + x1]
                    - integral[y1 * (w + 1) + x0]
                    + integral[y0 * (w + 1) + x0];
                out[y * w + x] = s as f32;
            }
        }
        out
    }

    fn map(&self, f: impl Fn(usize) -> f32) -> Self {
        Self {
            w: self.w,
            h: self.h,
            data: (0..self.data.len()).map(f).collect(),
        }
    }
}

fn pyramid(base: Plane, levels: usize) -> Vec<Plane> {
    let mut out = vec![base];
    for _ in 1..levels {
        let next = out.last().expect("non-empty").downsample();
        out.push(next);
    }
    out
}

/// Dense flow from `prev` to `next`: `next(p + flow(p)) ≈ prev(p)`.
///
/// Coarse-to-fine: at each pyramid level the flow is refined by
/// `iterations` windowed Gauss-Newton steps against `next` warped by the
/// current estimate, then doubled and upsampled to the next finer level.
pub fn estimate_flow(prev: &Frame, next: &Frame, params: &FlowParams) -> Result<FlowField, MotionError> {
    let (w, h) = (prev.width(), prev.height());
    if (w, h) != (next.width(), next.height()) {
        return Err(MotionError::SizeMismatch((w, h), (next.width(), next.height())));
    }
    let levels = params.levels.max(1);
    let need = (1usize << levels.min(30)) * params.window.max(1);
    if w < need || h < need {
        return Err(MotionError::TooSmallForPyramid {
            width: w,
            height: h,
            levels,
            window: params.window,
        });
    }
    let p_pyr = pyramid(Plane::from_frame(prev), levels);
    let n_pyr = pyramid(Plane::from_frame(next), levels);
    let n_win = (params.window * params.window) as f32;
    let mut u = vec![0f32; p_pyr[levels - 1].data.len()];
    let mut v = u.clone();
    for level in (0..levels).rev() {
        let (p, n) = (&p_pyr[level], &n_pyr[level]);
        if level + 1 < levels {
            let coarse = &p_pyr[level + 1];
            let cu = Plane { w: coarse.w, h: coarse.h, data: u };
            let cv = Plane { w: coarse.w, h: coarse.h, data: v };
            let (sx, sy) = (coarse.w as f32 / p.w as f32, coarse.h as f32 / p.h as f32);
            let mut nu = Vec::with_capacity(p.w * p.h);
            let mut nv = Vec::with_capacity(p.w * p.h);
            for y in 0..p.h {
                for x in 0..p.w {
                    let cx = (x as f32 + 0.5) * sx - 0.5;
                    let cy = (y as f32 + 0.5) * sy - 0.5;
                    nu.push(cu.bilinear(cx, cy) / sx);
                    nv.push(cv.bilinear(cx, cy) / sy);
                }
            }
            u = nu;
            v = nv;
        }
        let ix = p.map(|i| {
            let (x, y) = ((i % p.w) as isize, (i / p.w) as isize);
            0.5 * (p.get(x + 1, y) - p.get(x - 1, y))
        });
        let iy = p.map(|i| {
            let (x, y) = ((i % p.w) as isize, (i / p.w) as isize);
            0.5 * (p.get(x, y + 1) - p.get(x, y - 1))
        });
        let sxx = ix.map(|i| ix.data[i] * ix.data[i]).box_sum(params.window);
        let sxy = ix.map(|i| ix.data[i] * iy.data[i]).box_sum(params.window);
        let syy = iy.map(|i| iy.data[i] * iy.data[i]).box_sum(params.window);
        for _ in 0..params.iterations {
            let it = p.map(|i| {
                let (x, y) = ((i % p.w) as f32, (i / p.w) as f32);
                n.bilinear(x + u[i], y + v[i]) - p.data[i]
            });
            let bx = ix.map(|i| ix.data[i] * it.data[i]).box_sum(params.window);
            let by = iy.map(|i| iy.data[i] * it.data[i]).box_sum(params.window);
            for i in 0..u.len() {
                let (a, b, c) = (sxx[i], sxy[i], syy[i]);
                let half_tr = 0.5 * (a + c);
                let disc = (0.25 * (a - c) * (a - c) + b * b).sqrt();
                let min_eig = half_tr - disc;
                if !(min_eig / n_win >= params.min_eigen) {
                    continue;
                }
                let det = a * c - b * b;
                let du = -(c * bx[i] - b * by[i]) / det;
                let dv = -(a * by[i] - b * bx[i]) / det;
                if du.is_finite() && dv.is_finite() {
                    u[i] += du;
                    v[i] += dv;
                }
            }
        }
    }
    for x in u.iter_mut().chain(v.iter_mut()) {
        if !x.is_finite() {
            *x = 0.0;
        }
    }
    Ok(FlowField { width: w, height: h, u, v })
}

/// Raw export: `u32 width, u32 height`, then the `u` and `v` planes as
/// little-endian `f32`.
pub fn flow_to_bytes(flow: &FlowField) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 8 * flow.u.len());
    out.extend_from_slice(&(flow.width as u32).to_le_bytes());
    out.extend_from_slice(&(flow.height as u32).to_le_bytes());
    for x in flow.u.iter().chain(&flow.v) {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

pub fn flow_from_bytes(bytes: &[u8]) -> Result<FlowField, MotionError> {
    if bytes.len() < 8 {
        return Err(MotionError::FlowFormat("missing header".into()));
    }
    let width = u32::from_le_bytes(bytes[0..4].try_into().expect("4 bytes")) as usize;
    let height = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
    let n = width
        .checked_mul(height)
        .ok_or_else(|| MotionError::FlowFormat("dimensions overflow".into()))?;
    if bytes.len() != 8 + 8 * n {
        return Err(MotionError::FlowFormat(format!(
            "expected {} bytes for {width}x{height}, got {}",
            8 + 8 * n,
            bytes.len()
        )));
    }
    let floats: Vec<f32> = bytes[8..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    let (u, v) = floats.split_at(n);
    Ok(FlowField {
        width,
        height,
        u: u.to_vec(),
        v: v.to_vec(),
    })
}
