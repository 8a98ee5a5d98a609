//! Teacher-to-student transfer: teacher initialization, supervision transfer
//! with temperature-softened targets, and their combination.

mod init;
mod loss;
mod train;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::nn::NnError;

pub use init::teacher_init;
pub use loss::{
    loss_combined, loss_combined_batch, loss_gt, loss_tsl, soften, BatchLoss, LossBreakdown,
    LossOutput, SoftTargets, argmax,
};
pub use train::{train_student, Batch, BatchSource, MetricsRow, TrainLog, TrainOptions};

#[derive(Debug, thiserror::Error)]
pub enum DistillError {
    #[error("temperature must be positive and finite, got {0}")]
    InvalidTemperature(f64),
    #[error("soft-target weight must be non-negative and finite, got {0}")]
    InvalidWeight(f64),
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("label {label} outside [0, {classes})")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("strategy {0} needs a teacher network")]
    MissingTeacher(Strategy),
    #[error("strategy {0} does not use a teacher network")]
    UnexpectedTeacher(Strategy),
    #[error("teacher and student differ at layer {layer}: {reason}")]
    Mismatch { layer: usize, reason: String },
    #[error("batch source: {0}")]
    Data(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// How the motion-vector student is trained.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Strategy {
    /// Random init, ground-truth loss only.
    #[serde(rename = "scratch")]
    Scratch,
    /// Teacher parameters as init, then ground-truth fine-tuning.
    #[serde(rename = "ti")]
    TeacherInit,
    /// Random init, soft teacher targets plus ground truth.
    #[serde(rename = "st")]
    SupervisionTransfer,
    /// Teacher init and soft targets.
    #[serde(rename = "ti+st")]
    Combined,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [
        Strategy::Scratch,
        Strategy::SupervisionTransfer,
        Strategy::TeacherInit,
        Strategy::Combined,
    ];

    pub fn cli_name(self) -> &'static str {
        match self {
            Strategy::Scratch => "scratch",
            Strategy::TeacherInit => "ti",
            Strategy::SupervisionTransfer => "st",
            Strategy::Combined => "ti+st",
        }
    }

    /// Row label in the strategy comparison table.
    pub fn row_name(self) -> &'static str {
        match self {
            Strategy::Scratch => "MV-scratch",
            Strategy::TeacherInit => "EMV-TI",
            Strategy::SupervisionTransfer => "EMV-ST",
            Strategy::Combined => "EMV-ST+TI",
        }
    }

    pub fn needs_teacher(self) -> bool {
        self != Strategy::Scratch
    }

    pub fn initializes_from_teacher(self) -> bool {
        matches!(self, Strategy::TeacherInit | Strategy::Combined)
    }

    pub fn uses_soft_targets(self) -> bool {
        matches!(self, Strategy::SupervisionTransfer | Strategy::Combined)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.cli_name())
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "scratch" => Ok(Strategy::Scratch),
            "ti" | "teacher_init" => Ok(Strategy::TeacherInit),
            "st" | "supervision_transfer" => Ok(Strategy::SupervisionTransfer),
            "ti+st" | "st+ti" | "combined" => Ok(Strategy::Combined),
            other => Err(format!("unknown strategy `{other}` (expected scratch, ti, st or ti+st)")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistillConfig {
    pub temperature: f64,
    /// Ground-truth weight; `None` means `temperature²`.
    pub weight: Option<f64>,
    pub strategy: Strategy,
}

impl DistillConfig {
    pub fn new(temperature: f64, weight: Option<f64>, strategy: Strategy) -> Result<Self, DistillError> {
        let cfg = Self {
            temperature,
            weight,
            strategy,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), DistillError> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(DistillError::InvalidTemperature(self.temperature));
        }
        if let Some(w) = self.weight {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(DistillError::InvalidWeight(w));
            }
        }
        Ok(())
    }

    pub fn w_used(&self) -> f64 {
        self.weight.unwrap_or(self.temperature * self.temperature)
    }
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            temperature: 2.0,
            weight: None,
            strategy: Strategy::Combined,
        }
    }
}
