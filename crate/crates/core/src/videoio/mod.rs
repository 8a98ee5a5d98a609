//! Frames, clips, the synthetic MotionShapes dataset, and the `MVS1`
//! container produced by the emulated P-frame encoder.

mod container;
mod dataset;
mod frame;
mod y4m;

use serde::{Deserialize, Serialize};

use crate::motion::{three_step_search, MotionError, MotionField, MotionVector};

pub use container::{
    container_from_bytes, container_to_bytes, decode_motion_vectors_bytes, read_container,
    write_container,
};
pub use dataset::{
    generate_motionshapes, generate_with, read_dataset, write_dataset, DatasetManifest, MotionShapesParams,
    Split, CLASS_NAMES, MIRRORED_CLASS,
};
pub use frame::{Clip, Frame, FrameType};
pub use y4m::{read_y4m, write_y4m, y4m_from_bytes, y4m_to_bytes};

#[derive(Debug, thiserror::Error)]
pub enum VideoError {
    #[error("invalid frame dimensions {width}x{height}")]
    InvalidDimensions { width: usize, height: usize },
    #[error("plane holds {actual} samples, expected {expected}")]
    PlaneSize { expected: usize, actual: usize },
    #[error("clip has no frames")]
    EmptyClip,
    #[error("frame {frame} differs in size from frame 0")]
    FrameSizeMismatch { frame: usize },
    #[error("invalid GOP configuration: {0}")]
    InvalidGop(String),
    #[error("{width}x{height} frames are not a multiple of the {block}px block size")]
    DimensionMismatch {
        width: usize,
        height: usize,
        block: usize,
    },
    #[error("not an MVS1 container (bad magic)")]
    BadMagic,
    #[error("unsupported container version {0}")]
    UnsupportedVersion(u16),
    #[error("container checksum mismatch (stored {stored:#010x}, computed {computed:#010x})")]
    ChecksumMismatch { stored: u32, computed: u32 },
    #[error("container header truncated")]
    TruncatedHeader,
    #[error("container payload truncated at frame {frame}")]
    TruncatedFrame { frame: usize },
    #[error("{0} unexpected bytes after the last frame")]
    TrailingBytes(usize),
    #[error("frame {frame} has type code {code}, which contradicts the GOP structure")]
    InconsistentFrameType { frame: usize, code: u8 },
    #[error("P-frame {frame} has no motion record")]
    MissingMotionRecord { frame: usize },
    #[error("I-frame {frame} carries a motion record")]
    UnexpectedMotionRecord { frame: usize },
    #[error("motion record of frame {frame} has {actual} vectors, expected {expected}")]
    MotionRecordSize {
        frame: usize,
        expected: usize,
        actual: usize,
    },
    #[error("header declares {declared} frames but payload holds {actual}")]
    FrameCount { declared: usize, actual: usize },
    #[error("{field} = {value} exceeds the container field width")]
    FieldOverflow { field: &'static str, value: usize },
    #[error("invalid dataset request: {0}")]
    InvalidDataset(String),
    #[error("y4m: {0}")]
    Y4m(String),
    #[error(transparent)]
    Motion(#[from] MotionError),
    #[error("manifest: {0}")]
    Json(#[from] serde_json::Error),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// Group-of-pictures and motion search settings of the emulated encoder.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GopConfig {
    /// Frames per group; the first frame of each group is an I-frame.
    pub gop_length: usize,
    /// Macroblock edge in pixels, 8 or 16.
    pub block_size: usize,
    /// Maximum displacement per axis; three-step search covers ±7.
    pub search_range: usize,
}

impl Default for GopConfig {
    fn default() -> Self {
        Self {
            gop_length: 8,
            block_size: 16,
            search_range: 7,
        }
    }
}

impl GopConfig {
    pub fn validate(&self) -> Result<(), VideoError> {
        if self.gop_length < 2 {
            return Err(VideoError::InvalidGop(format!(
                "gop_length {} must be at least 2",
                self.gop_length
            )));
        }
        if !matches!(self.block_size, 8 | 16) {
            return Err(VideoError::InvalidGop(format!(
                "block_size {} must be 8 or 16",
                self.block_size
            )));
        }
        if self.search_range != 7 {
            return Err(VideoError::InvalidGop(format!(
                "search_range {} must be 7 for three-step search",
                self.search_range
            )));
        }
        Ok(())
    }

    /// Coding type of frame `index`: I iff `index % gop_length == 0`.
    pub fn frame_type(&self, index: usize) -> FrameType {
        if index.is_multiple_of(self.gop_length) {
            FrameType::I
        } else {
            FrameType::P
        }
    }
}

/// Container header: geometry, GOP settings and per-frame coding types.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ContainerHeader {
    pub width: usize,
    pub height: usize,
    pub gop: GopConfig,
    pub frame_types: Vec<FrameType>,
}

impl ContainerHeader {
    pub fn blocks(&self) -> (usize, usize) {
        (self.width / self.gop.block_size, self.height / self.gop.block_size)
    }

    pub fn frame_count(&self) -> usize {
        self.frame_types.len()
    }
}

/// Stored picture plus, for P-frames, one vector per macroblock.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncodedFrame {
    pub luma: Vec<u8>,
    pub motion: Option<Vec<MotionVector>>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CompressedClip {
    pub header: ContainerHeader,
    pub frames: Vec<EncodedFrame>,
}

impl CompressedClip {
    /// Checks the container invariants.
    pub fn validate(&self) -> Result<(), VideoError> {
        let h = &self.header;
        if self.frames.len() != h.frame_count() {
            return Err(VideoError::FrameCount {
                declared: h.frame_count(),
                actual: self.frames.len(),
            });
        }
        let (bx, by) = h.blocks();
        for (i, (t, f)) in h.frame_types.iter().zip(&self.frames).enumerate() {
            if *t != h.gop.frame_type(i) {
                return Err(VideoError::InconsistentFrameType { frame: i, code: t.code() });
            }
            if f.luma.len() != h.width * h.height {
                return Err(VideoError::PlaneSize {
                    expected: h.width * h.height,
                    actual: f.luma.len(),
                });
            }
            match (t, &f.motion) {
                (FrameType::I, Some(_)) => return Err(VideoError::UnexpectedMotionRecord { frame: i }),
                (FrameType::P, None) => return Err(VideoError::MissingMotionRecord { frame: i }),
                (FrameType::P, Some(v)) if v.len() != bx * by => {
                    return Err(VideoError::MotionRecordSize {
                        frame: i,
                        expected: bx * by,
                        actual: v.len(),
                    })
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// The stored pictures as frames.
    pub fn luma_frames(&self) -> Result<Vec<Frame>, VideoError> {
        self.frames
            .iter()
            .map(|f| Frame::new(self.header.width, self.header.height, f.luma.clone()))
            .collect()
    }
}

/// Motion field of one P-frame: a three-step search per macroblock against
/// the previous frame.
pub fn encode_motion_field(cur: &Frame, reference: &Frame, cfg: &GopConfig) -> Result<MotionField, VideoError> {
    let b = cfg.block_size;
    let (bx, by) = (cur.width() / b, cur.height() / b);
    let mut vectors = Vec::with_capacity(bx * by);
    for y in 0..by {
        for x in 0..bx {
            let r = three_step_search(cur, reference, (x * b, y * b), b, cfg.search_range)?;
            vectors.push(MotionVector::new(r.dx as i8, r.dy as i8));
        }
    }
    Ok(MotionField {
        blocks_x: bx,
        blocks_y: by,
        block_size: b,
        frame_type: FrameType::P,
        vectors,
    })
}

/// Emulated encoder: I-frames every `gop_length` frames, every other frame
/// a P-frame predicted from its predecessor. Pictures are stored verbatim.
pub fn encode(clip: &Clip, cfg: &GopConfig) -> Result<CompressedClip, VideoError> {
    cfg.validate()?;
    let (w, h) = (clip.width(), clip.height());
    if w % cfg.block_size != 0 || h % cfg.block_size != 0 {
        return Err(VideoError::DimensionMismatch {
            width: w,
            height: h,
            block: cfg.block_size,
        });
    }
    let frames = clip.frames();
    let mut out = Vec::with_capacity(frames.len());
    for (i, f) in frames.iter().enumerate() {
        let motion = match cfg.frame_type(i) {
            FrameType::I => None,
            FrameType::P => Some(encode_motion_field(f, &frames[i - 1], cfg)?.vectors),
        };
        out.push(EncodedFrame {
            luma: f.luma().to_vec(),
            motion,
        });
    }
    Ok(CompressedClip {
        header: ContainerHeader {
            width: w,
            height: h,
            gop: *cfg,
            frame_types: (0..frames.len()).map(|i| cfg.frame_type(i)).collect(),
        },
        frames: out,
    })
}

/// Reads back the stored motion fields, one per frame; I-frames yield an
/// empty I-tagged field. Performs no block search.
pub fn decode_motion_vectors(cc: &CompressedClip) -> Result<Vec<MotionField>, VideoError> {
    cc.validate()?;
    let (bx, by) = cc.header.blocks();
    let b = cc.header.gop.block_size;
    Ok(cc
        .header
        .frame_types
        .iter()
        .zip(&cc.frames)
        .map(|(t, f)| match (t, &f.motion) {
            (FrameType::P, Some(v)) => MotionField {
                blocks_x: bx,
                blocks_y: by,
                block_size: b,
                frame_type: FrameType::P,
                vectors: v.clone(),
            },
            _ => MotionField::empty_intra(bx, by, b),
        })
        .collect())
}
