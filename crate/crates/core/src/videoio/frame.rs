use serde::{Deserialize, Serialize};

use super::VideoError;

/// One 8-bit picture. Chroma planes, when present, are half resolution in
/// both directions (4:2:0).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Frame {
    width: usize,
    height: usize,
    luma: Vec<u8>,
    chroma: Option<(Vec<u8>, Vec<u8>)>,
}

impl Frame {
    pub fn new(width: usize, height: usize, luma: Vec<u8>) -> Result<Self, VideoError> {
        if width == 0 || height == 0 {
            return Err(VideoError::InvalidDimensions { width, height });
        }
        if luma.len() != width * height {
            return Err(VideoError::PlaneSize {
                expected: width * height,
                actual: luma.len(),
            });
        }
        Ok(Self {
            width,
            height,
            luma,
            chroma: None,
        })
    }

    /// A flat frame of the given luma value.
    pub fn filled(width: usize, height: usize, value: u8) -> Result<Self, VideoError> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn with_chroma(mut self, u: Vec<u8>, v: Vec<u8>) -> Result<Self, VideoError> {
        let expected = self.width.div_ceil(2) * self.height.div_ceil(2);
        for plane in [&u, &v] {
            if plane.len() != expected {
                return Err(VideoError::PlaneSize {
                    expected,
                    actual: plane.len(),
                });
            }
        }
        self.chroma = Some((u, v));
        Ok(self)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn luma(&self) -> &[u8] {
        &self.luma
    }

    pub fn into_luma(self) -> Vec<u8> {
        self.luma
    }

    pub fn chroma(&self) -> Option<(&[u8], &[u8])> {
        self.chroma.as_ref().map(|(u, v)| (u.as_slice(), v.as_slice()))
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> u8 {
        self.luma[y * self.width + x]
    }

    /// 256-bin luma histogram.
    pub fn histogram(&self) -> [u32; 256] {
        let mut h = [0u32; 256];
        for &v in &self.luma {
            h[v as usize] += 1;
        }
        h
    }
}

/// A labelled frame sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct Clip {
    pub clip_id: String,
    pub label: usize,
    pub fps_nominal: f32,
    frames: Vec<Frame>,
}

impl Clip {
    pub fn new(
        clip_id: impl Into<String>,
        label: usize,
        fps_nominal: f32,
        frames: Vec<Frame>,
    ) -> Result<Self, VideoError> {
        let first = frames.first().ok_or(VideoError::EmptyClip)?;
        let (w, h) = (first.width(), first.height());
        if let Some(i) = frames.iter().position(|f| f.width() != w || f.height() != h) {
            return Err(VideoError::FrameSizeMismatch { frame: i });
        }
        Ok(Self {
            clip_id: clip_id.into(),
            label,
            fps_nominal,
            frames,
        })
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn width(&self) -> usize {
        self.frames[0].width()
    }

    pub fn height(&self) -> usize {
        self.frames[0].height()
    }

    /// Whether at least one full temporal stack of `stack_length` motion
    /// frames exists.
    pub fn supports_stack(&self, stack_length: usize) -> bool {
        self.frames.len() > stack_length
    }
}

/// Picture coding type.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FrameType {
    I,
    P,
}

impl FrameType {
    pub fn code(self) -> u8 {
        match self {
            FrameType::I => 0,
            FrameType::P => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(FrameType::I),
            1 => Some(FrameType::P),
            _ => None,
        }
    }
}
