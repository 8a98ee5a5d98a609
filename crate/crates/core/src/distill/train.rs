use std::collections::VecDeque;
use std::io::Write;
use std::path::Path;

use crate::nn::{sgd_step, LrSchedule, Mode, Network, OptimState, Tensor};

use super::loss::loss_combined_batch;
use super::{teacher_init, DistillConfig, DistillError, LossBreakdown};

/// One training batch. `teacher` holds the teacher's view of the same
/// samples and is requested only when soft targets are in use.
#[derive(Clone, Debug)]
pub struct Batch {
    pub student: Tensor<f32>,
    pub teacher: Option<Tensor<f32>>,
    pub labels: Vec<usize>,
}

pub trait BatchSource {
    fn next_batch(&mut self, step: u64, with_teacher: bool) -> Result<Batch, DistillError>;
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainOptions {
    pub momentum: f64,
    pub weight_decay: f64,
    /// Steps averaged into `train_acc_window`.
    pub acc_window: usize,
    /// Seeds dropout masks and any fresh parameters from teacher init.
    pub seed: u64,
    /// Rescale the whole gradient to at most this global L2 norm.
    pub clip_norm: Option<f64>,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            momentum: 0.9,
            weight_decay: 5e-4,
            acc_window: 50,
            seed: 0,
            clip_norm: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricsRow {
    pub step: u64,
    pub lr: f64,
    pub l_tsl: f64,
    pub l_gt: f64,
    pub total: f64,
    pub train_acc_window: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub rows: Vec<MetricsRow>,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,lr,l_tsl,l_gt,total,train_acc_window\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{:e},{:.6},{:.6},{:.6},{:.4}\n",
                r.step, r.lr, r.l_tsl, r.l_gt, r.total, r.train_acc_window
            ));
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<(), DistillError> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        f.write_all(self.to_csv().as_bytes())?;
        Ok(())
    }

    pub fn last(&self) -> Option<&MetricsRow> {
        self.rows.last()
    }
}

fn step_seed(seed: u64, step: u64) -> u64 {
    let mut z = seed.wrapping_add(step.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z ^ (z >> 31)
}

/// Trains `student` under `cfg.strategy` for `schedule.stop` steps. The
/// teacher, when present, is only evaluated in eval mode.
pub fn train_student(
    cfg: &DistillConfig,
    teacher: Option<&Network<f32>>,
    student: Network<f32>,
    source: &mut dyn BatchSource,
    schedule: &LrSchedule,
    opts: &TrainOptions,
) -> Result<(Network<f32>, TrainLog), DistillError> {
    cfg.validate()?;
    schedule.validate()?;
    let strategy = cfg.strategy;
    let teacher = match (strategy.needs_teacher(), teacher) {
        (true, None) => return Err(DistillError::MissingTeacher(strategy)),
        (false, Some(_)) => return Err(DistillError::UnexpectedTeacher(strategy)),
        (_, t) => t,
    };
    let mut student = match teacher {
        Some(t) if strategy.initializes_from_teacher() => teacher_init(t, &student, opts.seed)?,
        _ => student,
    };
    let soft = strategy.uses_soft_targets();
    let mut state = OptimState::new(&student, opts.momentum, opts.weight_decay);
    let mut window: VecDeque<(usize, usize)> = VecDeque::new();
    let (mut hits, mut seen) = (0usize, 0usize);
    let mut log = TrainLog::default();
    for step in 0..schedule.stop {
        let batch = source.next_batch(step, soft)?;
        let teacher_logits = if soft {
            let input = batch
                .teacher
                .as_ref()
                .ok_or_else(|| DistillError::Data("batch is missing teacher inputs".into()))?;
            Some(teacher.expect("checked above").predict(input)?)
        } else {
            None
        };
        let (logits, cache) = student.forward(&batch.student, Mode::Train, step_seed(opts.seed, step))?;
        let loss = loss_combined_batch(teacher_logits.as_ref(), &logits, &batch.labels, cfg)?;
        let mut grads = student.backward(&cache, &loss.grad)?;
        if let Some(max) = opts.clip_norm {
            let norm = grads
                .layers
                .iter()
                .flatten()
                .flatten()
                .map(|&g| (g as f64) * (g as f64))
                .sum::<f64>()
                .sqrt();
            if norm > max {
                grads.scale((max / norm) as f32);
            }
        }
        let lr = sgd_step(&mut student, &grads, &mut state, schedule, step)?;

        window.push_back((loss.correct, batch.labels.len()));
        hits += loss.correct;
        seen += batch.labels.len();
        if window.len() > opts.acc_window.max(1) {
            let (h, s) = window.pop_front().expect("non-empty");
            hits -= h;
            seen -= s;
        }
        let LossBreakdown { l_tsl, l_gt, total, .. } = loss.breakdown;
        if !total.is_finite() {
            return Err(DistillError::Data(format!("loss diverged at step {step}")));
        }
        log.rows.push(MetricsRow {
            step,
            lr,
            l_tsl,
            l_gt,
            total,
            train_acc_window: hits as f64 / seen.max(1) as f64,
        });
    }
    Ok((student, log))
}
