//! MotionShapes: textured shapes over a textured background whose class is
//! carried only by how the shape moves. Shape kind, size, position and
//! textures are drawn from the same distribution for every class.

use std::collections::BTreeMap;
use std::f32::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Clip, Frame, VideoError};

pub const CLASS_NAMES: [&str; 8] = [
    "translate_left",
    "translate_right",
    "translate_up",
    "translate_down",
    "rotate_cw",
    "rotate_ccw",
    "zoom_in",
    "zoom_out",
];

/// Class of a horizontally mirrored clip: left and right swap, as do
/// clockwise and counter-clockwise.
pub const MIRRORED_CLASS: [usize; 8] = [1, 0, 2, 3, 5, 4, 6, 7];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// Generation knobs. Ranges are sampled uniformly per clip.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MotionShapesParams {
    pub seed: u64,
    pub clips_per_class: usize,
    pub resolution: usize,
    pub clip_length: usize,
    pub test_fraction: f64,
    pub fps: f32,
    /// Translation speed, pixels per frame (at 64px resolution).
    pub speed: (f32, f32),
    /// Rotation speed, degrees per frame.
    pub angular_speed_deg: (f32, f32),
    /// Relative scale change per frame.
    pub zoom_rate: (f32, f32),
    /// Shape radius as a fraction of the resolution.
    pub radius: (f32, f32),
    /// Standard deviation of per-pixel sensor noise, grey levels.
    pub noise_sigma: f32,
}

impl MotionShapesParams {
    pub fn new(seed: u64, clips_per_class: usize, resolution: usize, clip_length: usize) -> Self {
        Self {
            seed,
            clips_per_class,
            resolution,
            clip_length,
            test_fraction: 0.2,
            fps: 25.0,
            speed: (0.5, 1.5),
            angular_speed_deg: (2.5, 6.0),
            zoom_rate: (0.015, 0.035),
            radius: (0.16, 0.24),
            noise_sigma: 3.0,
        }
    }

    fn validate(&self) -> Result<(), VideoError> {
        let bad = |m: String| Err(VideoError::InvalidDataset(m));
        if self.resolution < 32 || !self.resolution.is_multiple_of(16) {
            return bad(format!("resolution {} must be a multiple of 16 and at least 32", self.resolution));
        }
        if self.clip_length < 16 {
            return bad(format!("clip length {} must be at least 16 frames", self.clip_length));
        }
        if self.clips_per_class == 0 {
            return bad("at least one clip per class is required".into());
        }
        if !(0.0..1.0).contains(&self.test_fraction) {
            return bad(format!("test fraction {} outside [0, 1)", self.test_fraction));
        }
        Ok(())
    }
}

/// Dataset index: class names, split and label of every clip, and the
/// parameters that regenerate it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub class_names: Vec<String>,
    pub seed: u64,
    pub splits: BTreeMap<String, Split>,
    pub labels: BTreeMap<String, usize>,
    pub params: MotionShapesParams,
}

impl DatasetManifest {
    pub fn ids(&self, split: Split) -> Vec<&str> {
        self.splits
            .iter()
            .filter(|(_, s)| **s == split)
            .map(|(id, _)| id.as_str())
            .collect()
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn validate(&self) -> Result<(), VideoError> {
        let k = self.class_names.len();
        if self.splits.len() != self.labels.len() || self.splits.keys().ne(self.labels.keys()) {
            return Err(VideoError::InvalidDataset(
                "every clip needs exactly one split and one label".into(),
            ));
        }
        if let Some((id, l)) = self.labels.iter().find(|(_, &l)| l >= k) {
            return Err(VideoError::InvalidDataset(format!("clip {id} has label {l} outside [0, {k})")));
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), VideoError> {
        std::fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, VideoError> {
        let m: Self = serde_json::from_slice(&std::fs::read(path)?)?;
        m.validate()?;
        Ok(m)
    }
}

/// Smooth random texture: bilinear interpolation (smoothstep weights) of a
/// periodic grid of random values.
struct ValueNoise {
    cell: f32,
    n: usize,
    values: Vec<f32>,
}

impl ValueNoise {
    fn new(rng: &mut ChaCha8Rng, cell: f32, n: usize, amplitude: f32) -> Self {
        let values = (0..n * n).map(|_| rng.random_range(-amplitude..=amplitude)).collect();
        Self { cell, n, values }
    }

    fn sample(&self, x: f32, y: f32) -> f32 {
        let (gx, gy) = (x / self.cell, y / self.cell);
        let (x0, y0) = (gx.floor(), gy.floor());
        let s = |t: f32| t * t * (3.0 - 2.0 * t);
        let (fx, fy) = (s(gx - x0), s(gy - y0));
        let n = self.n as i64;
        let at = |i: i64, j: i64| self.values[(j.rem_euclid(n) * n + i.rem_euclid(n)) as usize];
        let (i, j) = (x0 as i64, y0 as i64);
        let top = at(i, j) * (1.0 - fx) + at(i + 1, j) * fx;
        let bot = at(i, j + 1) * (1.0 - fx) + at(i + 1, j + 1) * fx;
        top * (1.0 - fy) + bot * fy
    }
}

struct Texture {
    base: f32,
    octaves: Vec<ValueNoise>,
}

impl Texture {
    fn sample(&self, x: f32, y: f32) -> f32 {
        self.base + self.octaves.iter().map(|o| o.sample(x, y)).sum::<f32>()
    }
}

#[derive(Clone, Copy)]
enum ShapeKind {
    Disc,
    Square,
    Triangle,
}

impl ShapeKind {
    /// Signed distance (local units) from the boundary, negative inside.
    fn sdf(self, qx: f32, qy: f32, r: f32) -> f32 {
        match self {
            ShapeKind::Disc => (qx * qx + qy * qy).sqrt() - r,
            ShapeKind::Square => qx.abs().max(qy.abs()) - 0.85 * r,
            ShapeKind::Triangle => (0..3)
                .map(|k| {
                    let a = PI / 2.0 + k as f32 * 2.0 * PI / 3.0;
                    qx * a.cos() + qy * a.sin() - 0.5 * r
                })
                .fold(f32::NEG_INFINITY, f32::max),
        }
    }
}

struct Scene {
    kind: ShapeKind,
    radius: f32,
    center: (f32, f32),
    angle0: f32,
    background: Texture,
    foreground: Texture,
    /// Per-frame rate: px/frame, rad/frame or log-scale/frame by class.
    rate: f32,
}

fn clip_rng(seed: u64, class: usize, index: usize) -> ChaCha8Rng {
    let mut z = seed ^ ((class as u64) << 40) ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    ChaCha8Rng::seed_from_u64(z ^ (z >> 31))
}

fn draw_scene(p: &MotionShapesParams, class: usize, rng: &mut ChaCha8Rng) -> Scene {
    let res = p.resolution as f32;
    let unit = res / 64.0;
    let kind = match rng.random_range(0..3) {
        0 => ShapeKind::Disc,
        1 => ShapeKind::Square,
        _ => ShapeKind::Triangle,
    };
    let radius = rng.random_range(p.radius.0..=p.radius.1) * res;
    let jitter = 0.1 * res;
    let center = (
        res / 2.0 + rng.random_range(-jitter..=jitter),
        res / 2.0 + rng.random_range(-jitter..=jitter),
    );
    let angle0 = rng.random_range(0.0..2.0 * PI);
    let background = Texture {
        base: 128.0 + rng.random_range(-20.0..=20.0),
        octaves: vec![
            ValueNoise::new(rng, 16.0 * unit, 16, 45.0),
            ValueNoise::new(rng, 8.0 * unit, 16, 22.0),
            ValueNoise::new(rng, 4.0 * unit, 32, 10.0),
        ],
    };
    let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
    let foreground = Texture {
        base: 128.0 + sign * rng.random_range(25.0..=55.0),
        octaves: vec![
            ValueNoise::new(rng, 6.0 * unit, 16, 40.0),
            ValueNoise::new(rng, 3.0 * unit, 16, 18.0),
        ],
    };
    // Rate drawn after appearance so appearance is identically distributed.
    let rate = match class {
        0..=3 => rng.random_range(p.speed.0..=p.speed.1) * unit,
        4 | 5 => rng.random_range(p.angular_speed_deg.0..=p.angular_speed_deg.1).to_radians(),
        _ => (1.0 + rng.random_range(p.zoom_rate.0..=p.zoom_rate.1)).ln(),
    };
    Scene {
        kind,
        radius,
        center,
        angle0,
        background,
        foreground,
        rate,
    }
}

fn render_clip(p: &MotionShapesParams, class: usize, index: usize) -> Result<Clip, VideoError> {
    let mut rng = clip_rng(p.seed, class, index);
    let scene = draw_scene(p, class, &mut rng);
    let res = p.resolution;
    let mid = (p.clip_length as f32 - 1.0) / 2.0;
    let mut frames = Vec::with_capacity(p.clip_length);
    for t in 0..p.clip_length {
        let tau = t as f32 - mid;
        let (mut cx, mut cy) = scene.center;
        let (mut angle, mut scale) = (scene.angle0, 1.0f32);
        match class {
            0 => cx -= scene.rate * tau,
            1 => cx += scene.rate * tau,
            2 => cy -= scene.rate * tau,
            3 => cy += scene.rate * tau,
            4 => angle += scene.rate * tau,
            5 => angle -= scene.rate * tau,
            6 => scale = (scene.rate * tau).exp(),
            _ => scale = (-scene.rate * tau).exp(),
        }
        let (sin, cos) = angle.sin_cos();
        let mut luma = Vec::with_capacity(res * res);
        for y in 0..res {
            for x in 0..res {
                let (px, py) = (x as f32 + 0.5, y as f32 + 0.5);
                let (dx, dy) = ((px - cx) / scale, (py - cy) / scale);
                // Rotate into the shape's own frame.
                let qx = cos * dx + sin * dy;
                let qy = -sin * dx + cos * dy;
                let sd = scene.kind.sdf(qx, qy, scene.radius) * scale;
                let alpha = (0.5 - sd).clamp(0.0, 1.0);
                let bg = scene.background.sample(px, py);
                let value = if alpha > 0.0 {
                    alpha * scene.foreground.sample(qx, qy) + (1.0 - alpha) * bg
                } else {
                    bg
                };
                let noise: f32 = StandardNormal.sample(&mut rng);
                luma.push((value + p.noise_sigma * noise).round().clamp(0.0, 255.0) as u8);
            }
        }
        frames.push(Frame::new(res, res, luma)?);
    }
    Clip::new(clip_id(class, index), class, p.fps, frames)
}

fn clip_id(class: usize, index: usize) -> String {
    format!("{}_{index:04}", CLASS_NAMES[class])
}

/// Generates the full dataset with default knobs. See [`generate_with`].
pub fn generate_motionshapes(
    seed: u64,
    clips_per_class: usize,
    resolution: usize,
    clip_length: usize,
) -> Result<(DatasetManifest, Vec<Clip>), VideoError> {
    generate_with(&MotionShapesParams::new(seed, clips_per_class, resolution, clip_length))
}

/// Eight motion classes × `clips_per_class` clips. Per class, the last
/// `round(clips_per_class × test_fraction)` clips form the test split.
/// Deterministic in `params`.
pub fn generate_with(params: &MotionShapesParams) -> Result<(DatasetManifest, Vec<Clip>), VideoError> {
    use rayon::prelude::*;
    params.validate()?;
    let n = params.clips_per_class;
    let n_test = (n as f64 * params.test_fraction).round() as usize;
    let jobs: Vec<(usize, usize)> = (0..CLASS_NAMES.len())
        .flat_map(|c| (0..n).map(move |i| (c, i)))
        .collect();
    let clips = jobs
        .par_iter()
        .map(|&(c, i)| render_clip(params, c, i))
        .collect::<Result<Vec<_>, _>>()?;
    let mut splits = BTreeMap::new();
    let mut labels = BTreeMap::new();
    for clip in &clips {
        let index: usize = clip.clip_id.rsplit('_').next().and_then(|s| s.parse().ok()).unwrap_or(0);
        let split = if index >= n - n_test { Split::Test } else { Split::Train };
        splits.insert(clip.clip_id.clone(), split);
        labels.insert(clip.clip_id.clone(), clip.label);
    }
    let manifest = DatasetManifest {
        class_names: CLASS_NAMES.iter().map(|s| s.to_string()).collect(),
        seed: params.seed,
        splits,
        labels,
        params: params.clone(),
    };
    Ok((manifest, clips))
}

/// Writes `manifest.json` and one `clips/<clip_id>.y4m` per clip under `dir`.
pub fn write_dataset(dir: impl AsRef<Path>, manifest: &DatasetManifest, clips: &[Clip]) -> Result<(), VideoError> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir.join("clips"))?;
    for clip in clips {
        super::write_y4m(clip, dir.join("clips").join(format!("{}.y4m", clip.clip_id)))?;
    }
    manifest.save(dir.join("manifest.json"))
}

/// Reads a dataset written by [`write_dataset`], clips in manifest order.
pub fn read_dataset(dir: impl AsRef<Path>) -> Result<(DatasetManifest, Vec<Clip>), VideoError> {
    let dir = dir.as_ref();
    let manifest = DatasetManifest::load(dir.join("manifest.json"))?;
    let clips = manifest
        .labels
        .iter()
        .map(|(id, &label)| super::read_y4m(dir.join("clips").join(format!("{id}.y4m")), id, label))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((manifest, clips))
}
