use std::path::Path;
use std::time::Instant;

use log::info;
use serde::{Deserialize, Serialize};

use crate::distill::{train_student, DistillConfig, Strategy, TrainLog, TrainOptions};
use crate::motion::FlowParams;
use crate::nn::{build_mini_two_stream, write_checkpoint, Activation, LrSchedule, Network};
use crate::videoio::{GopConfig, Split, MIRRORED_CLASS};

use super::data::{ClipBatches, InputSpec, Modality, PreparedClip};
use super::{evaluate, AugmentConfig, FusionWeights, PipelineError, Scorer, StreamModel};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub steps: u64,
    pub batch_size: usize,
    /// Initial rate for networks trained from random init on ground truth.
    pub scratch_lr: f64,
    /// Initial rate after teacher initialization (TI and TI+ST).
    pub finetune_lr: f64,
    /// Initial rate for supervision transfer from random init.
    pub transfer_lr: f64,
    /// Fractions of `steps` at which the rate is multiplied by `decay_factor`.
    pub decay_at: Vec<f64>,
    pub decay_factor: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub clip_norm: Option<f64>,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            steps: 3000,
            batch_size: 4,
            scratch_lr: 3e-3,
            finetune_lr: 1e-3,
            transfer_lr: 1e-3,
            decay_at: vec![0.6, 0.85],
            decay_factor: 0.1,
            momentum: 0.9,
            weight_decay: 5e-4,
            clip_norm: Some(5.0),
        }
    }
}

impl TrainingConfig {
    fn schedule(&self, initial: f64) -> Result<LrSchedule, PipelineError> {
        Ok(LrSchedule::step_decay(initial, self.steps, &self.decay_at, self.decay_factor)?)
    }

    fn options(&self, seed: u64) -> TrainOptions {
        TrainOptions {
            momentum: self.momentum,
            weight_decay: self.weight_decay,
            clip_norm: self.clip_norm,
            seed,
            ..TrainOptions::default()
        }
    }

    fn initial_rate(&self, strategy: Strategy) -> f64 {
        match strategy {
            Strategy::Scratch => self.scratch_lr,
            Strategy::TeacherInit | Strategy::Combined => self.finetune_lr,
            Strategy::SupervisionTransfer => self.transfer_lr,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub stack_length: usize,
    /// Multiplier from pixels of displacement to network input units.
    pub motion_scale: f32,
    pub gop: GopConfig,
    pub flow: FlowParams,
    pub augment: AugmentConfig,
    pub training: TrainingConfig,
    pub temperature: f64,
    /// Ground-truth weight; `None` means `temperature²`.
    pub weight: Option<f64>,
    pub eval_stride: usize,
    pub fusion: FusionWeights,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            stack_length: 10,
            motion_scale: 0.5,
            // 8×8 blocks: a 16×16 grid leaves 4×4 vectors per 64×64 frame
            gop: GopConfig {
                block_size: 8,
                ..GopConfig::default()
            },
            flow: FlowParams::default(),
            augment: AugmentConfig {
                flip_labels: MIRRORED_CLASS.to_vec(),
                ..AugmentConfig::default()
            },
            training: TrainingConfig::default(),
            temperature: 2.0,
            weight: None,
            eval_stride: 4,
            fusion: FusionWeights::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn input_spec(&self) -> InputSpec {
        InputSpec {
            stack_length: self.stack_length,
            motion_scale: self.motion_scale,
        }
    }

    pub fn distill(&self, strategy: Strategy) -> Result<DistillConfig, PipelineError> {
        Ok(DistillConfig::new(self.temperature, self.weight, strategy)?)
    }
}

fn split(clips: &[PreparedClip], which: Split) -> Vec<&PreparedClip> {
    clips.iter().filter(|c| c.split == which).collect()
}

fn geometry(clips: &[PreparedClip]) -> Result<(usize, usize), PipelineError> {
    let first = clips
        .first()
        .ok_or_else(|| PipelineError::Config("no prepared clips".into()))?;
    let (w, h) = first.resolution();
    if w != h || clips.iter().any(|c| c.resolution() != (w, h)) {
        return Err(PipelineError::Config("clips must share one square resolution".into()));
    }
    let classes = clips.iter().map(|c| c.label).max().unwrap_or(0) + 1;
    Ok((w, classes))
}

/// Trains one stream from scratch on ground truth: the flow teacher, the
/// appearance stream, or an MV network.
pub fn train_stream(
    clips: &[PreparedClip],
    modality: Modality,
    cfg: &ExperimentConfig,
    seed: u64,
) -> Result<(Network, TrainLog), PipelineError> {
    let (res, k) = geometry(clips)?;
    let act = match modality {
        Modality::Appearance => Activation::Relu,
        _ => Activation::Prelu,
    };
    let net = build_mini_two_stream(res, modality.channels(cfg.stack_length), k, act, seed)?;
    let mut source = ClipBatches::new(
        split(clips, Split::Train),
        cfg.input_spec(),
        modality,
        None,
        cfg.augment.clone(),
        res,
        cfg.training.batch_size,
        seed ^ 0x5EED,
    )?;
    let schedule = cfg.training.schedule(cfg.training.scratch_lr)?;
    let dcfg = cfg.distill(Strategy::Scratch)?;
    Ok(train_student(&dcfg, None, net, &mut source, &schedule, &cfg.training.options(seed))?)
}

/// Optical-flow teacher (temporal architecture, ground truth only).
pub fn train_teacher(clips: &[PreparedClip], cfg: &ExperimentConfig, seed: u64) -> Result<(Network, TrainLog), PipelineError> {
    train_stream(clips, Modality::Flow, cfg, seed)
}

/// Appearance stream on the centre frame of each window.
pub fn train_spatial(clips: &[PreparedClip], cfg: &ExperimentConfig, seed: u64) -> Result<(Network, TrainLog), PipelineError> {
    train_stream(clips, Modality::Appearance, cfg, seed)
}

/// Motion-vector student under `strategy`.
pub fn train_student_run(
    strategy: Strategy,
    teacher: Option<&Network>,
    clips: &[PreparedClip],
    cfg: &ExperimentConfig,
    seed: u64,
) -> Result<(Network, TrainLog), PipelineError> {
    let (res, k) = geometry(clips)?;
    let net = build_mini_two_stream(res, 2 * cfg.stack_length, k, Activation::Prelu, seed)?;
    let mut source = ClipBatches::new(
        split(clips, Split::Train),
        cfg.input_spec(),
        Modality::MotionVectors,
        strategy.uses_soft_targets().then_some(Modality::Flow),
        cfg.augment.clone(),
        res,
        cfg.training.batch_size,
        seed ^ 0x5EED,
    )?;
    let schedule = cfg.training.schedule(cfg.training.initial_rate(strategy))?;
    let teacher = if strategy.needs_teacher() { teacher } else { None };
    Ok(train_student(
        &cfg.distill(strategy)?,
        teacher,
        net,
        &mut source,
        &schedule,
        &cfg.training.options(seed),
    )?)
}

fn test_accuracy(net: &Network, modality: Modality, clips: &[PreparedClip], cfg: &ExperimentConfig) -> Result<f64, PipelineError> {
    let scorer = Scorer::Single(StreamModel { net, modality });
    Ok(evaluate(&scorer, &split(clips, Split::Test), &cfg.input_spec(), cfg.eval_stride)?.overall_accuracy)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    /// Table row label, e.g. `EMV-ST+TI` or `OF-teacher`.
    pub row: String,
    pub seed: u64,
    pub accuracy: f64,
    pub final_loss: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub row: String,
    pub mean: f64,
    pub sd: f64,
    pub runs: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub runs: Vec<RunRecord>,
}

pub const TEACHER_ROW: &str = "OF-teacher";

fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = if values.len() > 1 {
        values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

impl ExperimentReport {
    /// Mean ± sample sd per row, in table order (student rows, then teacher).
    pub fn summary(&self) -> Vec<SummaryRow> {
        let order = Strategy::ALL.iter().map(|s| s.row_name()).chain([TEACHER_ROW]);
        order
            .filter_map(|row| {
                let acc: Vec<f64> = self.runs.iter().filter(|r| r.row == row).map(|r| r.accuracy).collect();
                (!acc.is_empty()).then(|| {
                    let (mean, sd) = mean_sd(&acc);
                    SummaryRow {
                        row: row.to_string(),
                        mean,
                        sd,
                        runs: acc.len(),
                    }
                })
            })
            .collect()
    }

    pub fn mean(&self, row: &str) -> Option<f64> {
        self.summary().into_iter().find(|r| r.row == row).map(|r| r.mean)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("strategy,seed,accuracy\n");
        for r in &self.runs {
            out.push_str(&format!("{},{},{:.4}\n", r.row, r.seed, r.accuracy));
        }
        out
    }

    pub fn render_table(&self) -> String {
        let mut out = format!("{:<12} {:>10} {:>8} {:>5}\n", "Temporal CNN", "Accuracy", "sd", "runs");
        for r in self.summary() {
            out.push_str(&format!(
                "{:<12} {:>9.1}% {:>7.1}% {:>5}\n",
                r.row,
                100.0 * r.mean,
                100.0 * r.sd,
                r.runs
            ));
        }
        out
    }

    fn save(&self, dir: &Path) -> Result<(), PipelineError> {
        std::fs::write(dir.join("experiment.csv"), self.to_csv())?;
        std::fs::write(dir.join("experiment.txt"), self.render_table())?;
        Ok(())
    }
}

fn record(
    row: &str,
    seed: u64,
    net: &Network,
    log: &TrainLog,
    modality: Modality,
    clips: &[PreparedClip],
    cfg: &ExperimentConfig,
    started: Instant,
) -> Result<RunRecord, PipelineError> {
    let accuracy = test_accuracy(net, modality, clips, cfg)?;
    let r = RunRecord {
        row: row.to_string(),
        seed,
        accuracy,
        final_loss: log.last().map_or(f64::NAN, |m| m.total),
        seconds: started.elapsed().as_secs_f64(),
    };
    info!("{row} seed {seed}: accuracy {:.1}% in {:.0}s", 100.0 * accuracy, r.seconds);
    Ok(r)
}

fn save_run(dir: Option<&Path>, stem: &str, net: &Network, log: &TrainLog) -> Result<(), PipelineError> {
    if let Some(dir) = dir {
        write_checkpoint(net, dir.join(format!("{stem}.nnw")))?;
        log.write_csv(dir.join(format!("{stem}_log.csv")))?;
    }
    Ok(())
}

/// Strategy comparison: one teacher (trained with `teacher_seed` unless
/// supplied) and one student per strategy and seed, all evaluated on the
/// test split. With `out_dir`, checkpoints, training logs and the report are
/// written there; the report is rewritten after every run so a failure
/// leaves the finished runs on disk.
pub fn run_experiment(
    clips: &[PreparedClip],
    strategies: &[Strategy],
    seeds: &[u64],
    cfg: &ExperimentConfig,
    teacher: Option<Network>,
    teacher_seed: u64,
    out_dir: Option<&Path>,
) -> Result<(ExperimentReport, Network), PipelineError> {
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
    }
    let mut report = ExperimentReport::default();
    let started = Instant::now();
    let teacher = match teacher {
        Some(t) => {
            let log = TrainLog::default();
            report.runs.push(record(TEACHER_ROW, teacher_seed, &t, &log, Modality::Flow, clips, cfg, started)?);
            t
        }
        None => {
            let (t, log) = train_teacher(clips, cfg, teacher_seed)?;
            save_run(out_dir, "teacher", &t, &log)?;
            report.runs.push(record(TEACHER_ROW, teacher_seed, &t, &log, Modality::Flow, clips, cfg, started)?);
            t
        }
    };
    if let Some(dir) = out_dir {
        report.save(dir)?;
    }
    for &strategy in strategies {
        for &seed in seeds {
            let started = Instant::now();
            let run = || -> Result<RunRecord, PipelineError> {
                let (net, log) = train_student_run(strategy, Some(&teacher), clips, cfg, seed)?;
                save_run(out_dir, &format!("student_{}_s{seed}", strategy.cli_name().replace('+', "_")), &net, &log)?;
                record(strategy.row_name(), seed, &net, &log, Modality::MotionVectors, clips, cfg, started)
            };
            let r = run().map_err(|e| PipelineError::Run {
                strategy: strategy.cli_name().into(),
                seed,
                source: Box::new(e),
            })?;
            report.runs.push(r);
            if let Some(dir) = out_dir {
                report.save(dir)?;
            }
        }
    }
    Ok((report, teacher))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub temperature: f64,
    pub weight: f64,
    pub accuracies: Vec<f64>,
    pub mean: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub strategy: Option<Strategy>,
    pub rows: Vec<SweepRow>,
}

impl SweepReport {
    /// Largest minus smallest mean accuracy across settings.
    pub fn spread(&self) -> f64 {
        let means = self.rows.iter().map(|r| r.mean);
        means.clone().fold(f64::NEG_INFINITY, f64::max) - means.fold(f64::INFINITY, f64::min)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("temperature,weight,seed_index,accuracy\n");
        for r in &self.rows {
            for (i, a) in r.accuracies.iter().enumerate() {
                out.push_str(&format!("{},{},{i},{a:.4}\n", r.temperature, r.weight));
            }
        }
        out
    }

    pub fn render_table(&self) -> String {
        let mut out = format!("{:>5} {:>6} {:>10}\n", "Temp", "w", "Accuracy");
        for r in &self.rows {
            out.push_str(&format!("{:>5} {:>6} {:>9.1}%\n", r.temperature, r.weight, 100.0 * r.mean));
        }
        out.push_str(&format!("spread {:.1} pts\n", 100.0 * self.spread()));
        out
    }
}

/// Trains `strategy` students at each `(temperature, weight)` setting
/// against a fixed teacher.
pub fn temperature_sweep(
    clips: &[PreparedClip],
    teacher: &Network,
    strategy: Strategy,
    settings: &[(f64, Option<f64>)],
    seeds: &[u64],
    cfg: &ExperimentConfig,
) -> Result<SweepReport, PipelineError> {
    let mut report = SweepReport {
        strategy: Some(strategy),
        rows: Vec::new(),
    };
    for &(temperature, weight) in settings {
        let cfg = ExperimentConfig {
            temperature,
            weight,
            ..cfg.clone()
        };
        let w_used = cfg.distill(strategy)?.w_used();
        let mut accuracies = Vec::new();
        for &seed in seeds {
            let started = Instant::now();
            let (net, log) = train_student_run(strategy, Some(teacher), clips, &cfg, seed)?;
            let row = format!("{} T={temperature}", strategy.row_name());
            accuracies.push(record(&row, seed, &net, &log, Modality::MotionVectors, clips, &cfg, started)?.accuracy);
        }
        let mean = accuracies.iter().sum::<f64>() / accuracies.len().max(1) as f64;
        report.rows.push(SweepRow {
            temperature,
            weight: w_used,
            accuracies,
            mean,
        });
    }
    Ok(report)
}
