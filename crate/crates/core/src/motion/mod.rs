//! Block motion search, dense optical flow, and the conversions that turn
//! either into CNN input.

mod field;
mod flow;
mod search;

use std::cell::Cell;

use serde::{Deserialize, Serialize};

use crate::videoio::FrameType;

pub use field::{
    block_average, fill_iframe_gaps, motion_field_pgm, rasterize, stack_inputs, write_pgm, Pgm,
};
pub use flow::{estimate_flow, flow_from_bytes, flow_to_bytes, FlowField, FlowParams};
pub use search::{full_search, three_step_search, SearchResult};

thread_local! {
    static SAD_EVALUATIONS: Cell<u64> = const { Cell::new(0) };
}

/// Number of block SAD evaluations performed on the calling thread so far.
pub fn sad_evaluations() -> u64 {
    SAD_EVALUATIONS.with(Cell::get)
}

pub(crate) fn count_sad() {
    SAD_EVALUATIONS.with(|c| c.set(c.get() + 1));
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum MotionError {
    #[error("block at ({x}, {y}) of size {size} lies outside the {width}x{height} frame")]
    BlockOutOfBounds {
        x: usize,
        y: usize,
        size: usize,
        width: usize,
        height: usize,
    },
    #[error("frame sizes differ: {0:?} vs {1:?}")]
    SizeMismatch((usize, usize), (usize, usize)),
    #[error("frames of {width}x{height} are too small for {levels} pyramid levels with a {window}px window")]
    TooSmallForPyramid {
        width: usize,
        height: usize,
        levels: usize,
        window: usize,
    },
    #[error("output dimensions must be non-zero")]
    ZeroOutput,
    #[error("need {needed} frames from index {start}, only {available} available")]
    InsufficientFrames {
        start: usize,
        needed: usize,
        available: usize,
    },
    #[error("motion maps have inconsistent sizes")]
    InconsistentMaps,
    #[error("motion field {frame} is empty; fill I-frame gaps first")]
    EmptyField { frame: usize },
    #[error("malformed flow file: {0}")]
    FlowFormat(String),
}

/// Integer block displacement. Positive `dx` means the block content moved
/// right between the reference and the current frame.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MotionVector {
    pub dx: i8,
    pub dy: i8,
}

impl MotionVector {
    pub const ZERO: Self = Self { dx: 0, dy: 0 };

    pub fn new(dx: i8, dy: i8) -> Self {
        Self { dx, dy }
    }
}

/// One vector per macroblock of a frame, row-major over the block grid.
/// I-frame fields carry no vectors until gap-filled.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MotionField {
    pub blocks_x: usize,
    pub blocks_y: usize,
    pub block_size: usize,
    pub frame_type: FrameType,
    pub vectors: Vec<MotionVector>,
}

impl MotionField {
    pub fn empty_intra(blocks_x: usize, blocks_y: usize, block_size: usize) -> Self {
        Self {
            blocks_x,
            blocks_y,
            block_size,
            frame_type: FrameType::I,
            vectors: Vec::new(),
        }
    }

    pub fn zeros(blocks_x: usize, blocks_y: usize, block_size: usize, frame_type: FrameType) -> Self {
        Self {
            blocks_x,
            blocks_y,
            block_size,
            frame_type,
            vectors: vec![MotionVector::ZERO; blocks_x * blocks_y],
        }
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn width(&self) -> usize {
        self.blocks_x * self.block_size
    }

    pub fn height(&self) -> usize {
        self.blocks_y * self.block_size
    }

    pub fn at(&self, bx: usize, by: usize) -> MotionVector {
        self.vectors[by * self.blocks_x + bx]
    }
}
