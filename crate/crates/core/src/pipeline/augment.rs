use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::nn::Tensor;

use super::PipelineError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    /// Crop side as a fraction of the shorter sample side.
    pub scales: Vec<f32>,
    pub flip_prob: f32,
    /// Label of the mirrored sample, indexed by label. Empty means a flip
    /// keeps the label, which is wrong for direction-coded classes.
    pub flip_labels: Vec<usize>,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            scales: vec![1.0, 0.875, 0.75],
            flip_prob: 0.5,
            flip_labels: Vec::new(),
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.scales.is_empty() || self.scales.iter().any(|&s| !(s > 0.0 && s <= 1.0)) {
            return Err(PipelineError::Config(format!("crop scales {:?} must lie in (0, 1]", self.scales)));
        }
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return Err(PipelineError::Config(format!("flip probability {} outside [0, 1]", self.flip_prob)));
        }
        let mut seen = vec![false; self.flip_labels.len()];
        for &l in &self.flip_labels {
            if l >= seen.len() || std::mem::replace(&mut seen[l], true) {
                return Err(PipelineError::Config(format!("flip labels {:?} are not a permutation", self.flip_labels)));
            }
        }
        Ok(())
    }

    /// Label after applying `window`'s flip.
    pub fn label_for(&self, label: usize, window: &CropWindow) -> Result<usize, PipelineError> {
        if !window.flip || self.flip_labels.is_empty() {
            return Ok(label);
        }
        self.flip_labels
            .get(label)
            .copied()
            .ok_or_else(|| PipelineError::Config(format!("label {label} has no mirrored counterpart")))
    }
}

/// Square crop window plus flip decision, shared by every tensor cut from
/// the same sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CropWindow {
    pub x0: usize,
    pub y0: usize,
    pub side: usize,
    pub flip: bool,
}

impl CropWindow {
    pub fn centered(width: usize, height: usize, scale: f32) -> Result<Self, PipelineError> {
        let side = crop_side(width, height, scale)?;
        Ok(Self {
            x0: (width - side) / 2,
            y0: (height - side) / 2,
            side,
            flip: false,
        })
    }

    pub fn random(width: usize, height: usize, cfg: &AugmentConfig, rng: &mut impl Rng) -> Result<Self, PipelineError> {
        cfg.validate()?;
        let scale = cfg.scales[rng.random_range(0..cfg.scales.len())];
        let side = crop_side(width, height, scale)?;
        Ok(Self {
            x0: rng.random_range(0..=width - side),
            y0: rng.random_range(0..=height - side),
            side,
            flip: rng.random::<f32>() < cfg.flip_prob,
        })
    }
}

fn crop_side(width: usize, height: usize, scale: f32) -> Result<usize, PipelineError> {
    let side = (width.min(height) as f32 * scale).round() as usize;
    if side == 0 {
        return Err(PipelineError::SampleTooSmall { width, height });
    }
    Ok(side)
}

/// Cuts `window` out of a `C×H×W` tensor, resizes it bilinearly to
/// `out × out` and mirrors it if requested. For motion tensors (channels
/// interleaved `dx, dy, …`) displacements are multiplied by the resize ratio
/// and `dx` channels are negated on flip.
pub fn apply_window(
    sample: &Tensor<f32>,
    window: &CropWindow,
    out: usize,
    motion: bool,
) -> Result<Tensor<f32>, PipelineError> {
    let &[c, h, w] = sample.shape() else {
        return Err(PipelineError::Config(format!("expected a C×H×W sample, got {:?}", sample.shape())));
    };
    if window.side == 0 || window.x0 + window.side > w || window.y0 + window.side > h {
        return Err(PipelineError::SampleTooSmall { width: w, height: h });
    }
    if motion && c % 2 != 0 {
        return Err(PipelineError::Config(format!("motion tensor with odd channel count {c}")));
    }
    let ratio = out as f32 / window.side as f32;
    let s = window.side;
    // Source coordinate (and its interpolation weights) per output index.
    let taps: Vec<(usize, usize, f32)> = (0..out)
        .map(|o| {
            if s == out {
                return (o, o, 0.0);
            }
            let p = ((o as f32 + 0.5) / ratio - 0.5).clamp(0.0, (s - 1) as f32);
            let i = (p.floor() as usize).min(s - 1);
            (i, (i + 1).min(s - 1), p - i as f32)
        })
        .collect();
    let mut values = Vec::with_capacity(c * out * out);
    for ch in 0..c {
        let plane = &sample.values()[ch * h * w..(ch + 1) * h * w];
        let gain = match (motion, ch % 2 == 0) {
            (false, _) => 1.0,
            (true, true) if window.flip => -ratio,
            (true, _) => ratio,
        };
        for &(ya, yb, fy) in &taps {
            let row_a = &plane[(window.y0 + ya) * w + window.x0..][..s];
            let row_b = &plane[(window.y0 + yb) * w + window.x0..][..s];
            let start = values.len();
            for &(xa, xb, fx) in &taps {
                let v = if s == out {
                    row_a[xa]
                } else {
                    let top = row_a[xa] + (row_a[xb] - row_a[xa]) * fx;
                    let bot = row_b[xa] + (row_b[xb] - row_b[xa]) * fx;
                    top + (bot - top) * fy
                };
                values.push(v * gain);
            }
            if window.flip {
                values[start..].reverse();
            }
        }
    }
    Ok(Tensor::from_vec(&[c, out, out], values).expect("shape"))
}

/// Random scale, crop and flip for training.
pub fn augment_train(
    sample: &Tensor<f32>,
    out: usize,
    motion: bool,
    cfg: &AugmentConfig,
    rng: &mut impl Rng,
) -> Result<Tensor<f32>, PipelineError> {
    let shape = sample.shape();
    let (h, w) = (shape[shape.len() - 2], shape[shape.len() - 1]);
    let window = CropWindow::random(w, h, cfg, rng)?;
    apply_window(sample, &window, out, motion)
}

/// Full-size center crop, no flip.
pub fn augment_test(sample: &Tensor<f32>, out: usize, motion: bool) -> Result<Tensor<f32>, PipelineError> {
    let shape = sample.shape();
    let (h, w) = (shape[shape.len() - 2], shape[shape.len() - 1]);
    apply_window(sample, &CropWindow::centered(w, h, 1.0)?, out, motion)
}
