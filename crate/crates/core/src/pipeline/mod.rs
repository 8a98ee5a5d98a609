//! End-to-end two-stream training and evaluation on MotionShapes.

mod augment;
mod data;
mod experiment;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distill::DistillError;
use crate::motion::MotionError;
use crate::nn::{softmax_rows, Network, NnError, Tensor};
use crate::videoio::VideoError;

pub use augment::{apply_window, augment_test, augment_train, AugmentConfig, CropWindow};
pub use data::{
    clip_flow, decoded_motion, prepare_clips, ClipBatches, FlowCache, InputSpec, Modality, PreparedClip,
};
pub use experiment::{
    run_experiment, temperature_sweep, TEACHER_ROW, train_spatial, train_stream, train_student_run, train_teacher,
    ExperimentConfig, ExperimentReport, RunRecord, SummaryRow, SweepReport, SweepRow, TrainingConfig,
};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{width}×{height} sample is too small for the crop")]
    SampleTooSmall { width: usize, height: usize },
    #[error("score vectors differ in length: {0} vs {1}")]
    ScoreMismatch(usize, usize),
    #[error("run {strategy} seed {seed} failed: {source}")]
    Run {
        strategy: String,
        seed: u64,
        #[source]
        source: Box<PipelineError>,
    },
    #[error(transparent)]
    Distill(#[from] DistillError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Motion(#[from] MotionError),
    #[error(transparent)]
    Video(#[from] VideoError),
    #[error(transparent)]
    Checkpoint(#[from] crate::nn::CheckpointError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Late-fusion weights for the spatial and temporal class scores.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FusionWeights {
    pub spatial: f64,
    pub temporal: f64,
}

impl Default for FusionWeights {
    fn default() -> Self {
        Self {
            spatial: 1.0,
            temporal: 2.0,
        }
    }
}

impl FusionWeights {
    pub fn new(spatial: f64, temporal: f64) -> Result<Self, PipelineError> {
        let w = Self { spatial, temporal };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let ok = |v: f64| v >= 0.0 && v.is_finite();
        if !ok(self.spatial) || !ok(self.temporal) || self.spatial + self.temporal == 0.0 {
            return Err(PipelineError::Config(format!(
                "fusion weights ({}, {}) must be non-negative and not both zero",
                self.spatial, self.temporal
            )));
        }
        Ok(())
    }
}

/// `(w_s·s + w_t·t) / (w_s + w_t)` and its argmax (lowest index on ties).
pub fn fuse(spatial: &[f64], temporal: &[f64], w: &FusionWeights) -> Result<(Vec<f64>, usize), PipelineError> {
    w.validate()?;
    if spatial.len() != temporal.len() || spatial.is_empty() {
        return Err(PipelineError::ScoreMismatch(spatial.len(), temporal.len()));
    }
    let norm = w.spatial + w.temporal;
    let fused: Vec<f64> = spatial
        .iter()
        .zip(temporal)
        .map(|(s, t)| (w.spatial * s + w.temporal * t) / norm)
        .collect();
    let class = crate::distill::argmax(&fused);
    Ok((fused, class))
}

/// One network and the input it expects.
#[derive(Clone, Copy, Debug)]
pub struct StreamModel<'a> {
    pub net: &'a Network<f32>,
    pub modality: Modality,
}

/// A single stream or a fused spatial + temporal pair.
#[derive(Clone, Copy, Debug)]
pub enum Scorer<'a> {
    Single(StreamModel<'a>),
    TwoStream {
        spatial: StreamModel<'a>,
        temporal: StreamModel<'a>,
        weights: FusionWeights,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
    pub per_class_accuracy: Vec<f64>,
    pub overall_accuracy: f64,
    pub clips_evaluated: usize,
    /// Clips shorter than one window.
    pub clips_skipped: usize,
}

impl EvalReport {
    fn from_predictions(k: usize, pairs: &[(usize, usize)], skipped: usize) -> Self {
        let mut confusion = vec![vec![0; k]; k];
        for &(truth, pred) in pairs {
            confusion[truth][pred] += 1;
        }
        let per_class_accuracy = confusion
            .iter()
            .enumerate()
            .map(|(i, row)| {
                let n: usize = row.iter().sum();
                if n == 0 { 0.0 } else { row[i] as f64 / n as f64 }
            })
            .collect();
        let correct: usize = (0..k).map(|i| confusion[i][i]).sum();
        Self {
            confusion,
            per_class_accuracy,
            overall_accuracy: if pairs.is_empty() { 0.0 } else { correct as f64 / pairs.len() as f64 },
            clips_evaluated: pairs.len(),
            clips_skipped: skipped,
        }
    }
}

/// Mean softmax scores of one stream over the windows starting at `starts`.
fn stream_scores(
    model: &StreamModel,
    clip: &PreparedClip,
    spec: &InputSpec,
    starts: &[usize],
) -> Result<Vec<f64>, PipelineError> {
    let size = model.net.input_shape()[1];
    let inputs = starts
        .iter()
        .map(|&t0| augment_test(&spec.raw_input(clip, model.modality, t0)?, size, model.modality != Modality::Appearance))
        .collect::<Result<Vec<_>, PipelineError>>()?;
    let batch = Tensor::stack(&inputs).expect("uniform shapes");
    let probs = softmax_rows(&model.net.predict(&batch)?)?;
    let k = model.net.num_classes();
    let mut mean = vec![0.0; k];
    for i in 0..starts.len() {
        for (m, p) in mean.iter_mut().zip(probs.outer(i)) {
            *m += *p as f64 / starts.len() as f64;
        }
    }
    Ok(mean)
}

/// Class scores for one clip: per-stream averages over windows every
/// `stride` frames, fused afterwards for two-stream scorers. `None` when the
/// clip cannot hold a single window.
pub fn clip_scores(
    scorer: &Scorer,
    clip: &PreparedClip,
    spec: &InputSpec,
    stride: usize,
) -> Result<Option<Vec<f64>>, PipelineError> {
    let starts: Vec<usize> = spec.starts(clip.len()).step_by(stride.max(1)).collect();
    if starts.is_empty() {
        return Ok(None);
    }
    Ok(Some(match scorer {
        Scorer::Single(m) => stream_scores(m, clip, spec, &starts)?,
        Scorer::TwoStream {
            spatial,
            temporal,
            weights,
        } => {
            let s = stream_scores(spatial, clip, spec, &starts)?;
            let t = stream_scores(temporal, clip, spec, &starts)?;
            fuse(&s, &t, weights)?.0
        }
    }))
}

/// Clip-level accuracy report. Clips are scored in parallel; the result is
/// independent of scheduling.
pub fn evaluate(
    scorer: &Scorer,
    clips: &[&PreparedClip],
    spec: &InputSpec,
    stride: usize,
) -> Result<EvalReport, PipelineError> {
    let k = match scorer {
        Scorer::Single(m) => m.net.num_classes(),
        Scorer::TwoStream { spatial, temporal, .. } => {
            if spatial.net.num_classes() != temporal.net.num_classes() {
                return Err(PipelineError::ScoreMismatch(spatial.net.num_classes(), temporal.net.num_classes()));
            }
            spatial.net.num_classes()
        }
    };
    let scored = clips
        .par_iter()
        .map(|c| Ok((c.label, clip_scores(scorer, c, spec, stride)?)))
        .collect::<Result<Vec<_>, PipelineError>>()?;
    let mut pairs = Vec::new();
    let mut skipped = 0;
    for (label, scores) in scored {
        match scores {
            Some(s) => pairs.push((label, crate::distill::argmax(&s))),
            None => skipped += 1,
        }
    }
    Ok(EvalReport::from_predictions(k, &pairs, skipped))
}
