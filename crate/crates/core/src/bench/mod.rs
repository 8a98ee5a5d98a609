//! Per-stage and end-to-end throughput measurement, counted in frames.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::motion::{estimate_flow, fill_iframe_gaps, rasterize, sad_evaluations, stack_inputs, FlowParams};
use crate::nn::{softmax, Network, Tensor};
use crate::pipeline::{fuse, FusionWeights, PipelineError};
use crate::videoio::{container_to_bytes, decode_motion_vectors_bytes, encode, Clip, GopConfig};

/// The real-time threshold in frames per second.
pub const REALTIME_FPS: f64 = 25.0;

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("benchmark workload is empty")]
    EmptyWorkload,
    #[error("at least one measured iteration is required")]
    NoIterations,
    #[error("stage {0} needs a {1} network")]
    MissingNetwork(Stage, &'static str),
    #[error("decode performed {0} SAD evaluations")]
    SearchInDecode(u64),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
}

fn pe<E: Into<PipelineError>>(e: E) -> BenchError {
    BenchError::Pipeline(e.into())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    MvDecode,
    MvEncode,
    Flow,
    CnnForward,
    Total,
}

impl Stage {
    pub const ALL: [Stage; 5] = [Stage::MvDecode, Stage::MvEncode, Stage::Flow, Stage::CnnForward, Stage::Total];

    pub fn name(self) -> &'static str {
        match self {
            Stage::MvDecode => "mv_decode",
            Stage::MvEncode => "mv_encode",
            Stage::Flow => "flow",
            Stage::CnnForward => "cnn_forward",
            Stage::Total => "total",
        }
    }

    /// Column label in the speed table.
    pub fn label(self) -> &'static str {
        match self {
            Stage::MvDecode => "MV",
            Stage::MvEncode => "MV encode",
            Stage::Flow => "Flow",
            Stage::CnnForward => "CNN",
            Stage::Total => "Total",
        }
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| format!("unknown stage `{s}`"))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: Stage,
    /// Frames processed per iteration.
    pub frames: usize,
    /// Median wall time of one iteration.
    pub seconds: f64,
    pub fps: f64,
    pub min_fps: f64,
    pub max_fps: f64,
    pub iters: usize,
    pub warmup: usize,
    /// Fewer than 5 measured iterations or no warmup.
    pub noisy: bool,
    /// SAD evaluations observed on the timing thread during measurement.
    pub sad_evaluations: u64,
}

/// In-memory inputs for the benchmark. Encoding happens in [`Workload::new`]
/// so decode timings contain no search and no I/O.
pub struct Workload<'a> {
    pub clips: &'a [Clip],
    pub gop: GopConfig,
    pub flow: FlowParams,
    pub temporal: Option<&'a Network>,
    pub spatial: Option<&'a Network>,
    pub stack_length: usize,
    pub motion_scale: f32,
    pub fusion: FusionWeights,
    /// Run clips through rayon instead of sequentially.
    pub parallel: bool,
    containers: Vec<Vec<u8>>,
}

impl<'a> Workload<'a> {
    pub fn new(clips: &'a [Clip], gop: GopConfig) -> Result<Self, BenchError> {
        if clips.is_empty() || clips.iter().any(|c| c.is_empty()) {
            return Err(BenchError::EmptyWorkload);
        }
        let containers = clips
            .iter()
            .map(|c| container_to_bytes(&encode(c, &gop).map_err(pe)?).map_err(pe))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            clips,
            gop,
            flow: FlowParams::default(),
            temporal: None,
            spatial: None,
            stack_length: 10,
            motion_scale: 0.5,
            fusion: FusionWeights::default(),
            parallel: false,
            containers,
        })
    }

    pub fn with_networks(mut self, temporal: Option<&'a Network>, spatial: Option<&'a Network>) -> Self {
        self.temporal = temporal;
        self.spatial = spatial;
        self
    }

    fn total_frames(&self) -> usize {
        self.clips.iter().map(Clip::len).sum()
    }

    /// Non-overlapping stack starts of a clip.
    fn volumes(&self, len: usize) -> Vec<usize> {
        (1..len).step_by(self.stack_length).filter(|t0| t0 + self.stack_length <= len).collect()
    }

    fn for_clips<F>(&self, f: F) -> Result<(), BenchError>
    where
        F: Fn(usize) -> Result<(), BenchError> + Sync + Send,
    {
        if self.parallel {
            (0..self.clips.len()).into_par_iter().try_for_each(f)
        } else {
            (0..self.clips.len()).try_for_each(f)
        }
    }

    fn net(&self, stage: Stage, which: &'static str) -> Result<&'a Network, BenchError> {
        match which {
            "temporal" => self.temporal,
            _ => self.spatial,
        }
        .ok_or(BenchError::MissingNetwork(stage, which))
    }

    /// Spatial input for the centre frame of a volume: luma plus neutral chroma.
    fn appearance(&self, clip: &Clip, t0: usize) -> Tensor<f32> {
        let f = &clip.frames()[t0 + self.stack_length / 2];
        let (w, h) = (f.width(), f.height());
        let mut v: Vec<f32> = f.luma().iter().map(|&p| (p as f32 - 128.0) / 64.0).collect();
        v.resize(3 * w * h, 0.0);
        Tensor::from_vec(&[1, 3, h, w], v).expect("shape")
    }

    fn run_once(&self, stage: Stage) -> Result<usize, BenchError> {
        match stage {
            Stage::MvDecode => {
                self.for_clips(|i| {
                    let fields = decode_motion_vectors_bytes(&self.containers[i]).map_err(pe)?;
                    std::hint::black_box(fill_iframe_gaps(&fields));
                    Ok(())
                })?;
                Ok(self.total_frames())
            }
            Stage::MvEncode => {
                self.for_clips(|i| {
                    std::hint::black_box(encode(&self.clips[i], &self.gop).map_err(pe)?);
                    Ok(())
                })?;
                Ok(self.total_frames())
            }
            Stage::Flow => {
                self.for_clips(|i| {
                    for pair in self.clips[i].frames().windows(2) {
                        std::hint::black_box(estimate_flow(&pair[0], &pair[1], &self.flow).map_err(pe)?);
                    }
                    Ok(())
                })?;
                Ok(self.clips.iter().map(|c| c.len() - 1).sum())
            }
            Stage::CnnForward => {
                let temporal = self.net(stage, "temporal")?;
                let spatial = self.net(stage, "spatial")?;
                let [c, h, w] = temporal.input_shape();
                let x = Tensor::zeros(&[1, c, h, w]);
                let frames = self.volumes_total();
                self.for_clips(|i| {
                    for t0 in self.volumes(self.clips[i].len()) {
                        std::hint::black_box(temporal.predict(&x).map_err(pe)?);
                        let a = self.appearance(&self.clips[i], t0);
                        std::hint::black_box(spatial.predict(&a).map_err(pe)?);
                    }
                    Ok(())
                })?;
                Ok(frames)
            }
            Stage::Total => {
                let temporal = self.net(stage, "temporal")?;
                let spatial = self.net(stage, "spatial")?;
                self.for_clips(|i| {
                    let clip = &self.clips[i];
                    let fields = decode_motion_vectors_bytes(&self.containers[i]).map_err(pe)?;
                    let fields = fill_iframe_gaps(&fields);
                    let maps = fields
                        .iter()
                        .map(|f| rasterize(f, clip.width(), clip.height(), false))
                        .collect::<Result<Vec<_>, _>>()
                        .map_err(pe)?;
                    for t0 in self.volumes(clip.len()) {
                        let stack = stack_inputs(&maps, t0, self.stack_length, self.motion_scale)
                            .map_err(pe)?;
                        let shape = stack.shape().to_vec();
                        let x = stack.reshaped(&[1, shape[0], shape[1], shape[2]]).expect("same size");
                        let t = temporal.predict(&x).map_err(pe)?;
                        let s = spatial.predict(&self.appearance(clip, t0)).map_err(pe)?;
                        let to_f64 = |v: &[f32]| v.iter().map(|&p| p as f64).collect::<Vec<_>>();
                        let tp = softmax(&to_f64(t.values())).map_err(pe)?;
                        let sp = softmax(&to_f64(s.values())).map_err(pe)?;
                        std::hint::black_box(fuse(&sp, &tp, &self.fusion).map_err(pe)?);
                    }
                    Ok(())
                })?;
                Ok(self.total_frames())
            }
        }
    }

    fn volumes_total(&self) -> usize {
        self.clips.iter().map(|c| self.volumes(c.len()).len() * self.stack_length).sum()
    }
}

/// Times `iters` runs of `stage` over the workload after `warmup` untimed
/// runs and reports the median.
pub fn bench_stage(stage: Stage, workload: &Workload, warmup: usize, iters: usize) -> Result<StageTiming, BenchError> {
    if iters == 0 {
        return Err(BenchError::NoIterations);
    }
    for _ in 0..warmup {
        workload.run_once(stage)?;
    }
    let sad_before = sad_evaluations();
    let mut times = Vec::with_capacity(iters);
    let mut frames = 0;
    for _ in 0..iters {
        let t = Instant::now();
        frames = workload.run_once(stage)?;
        times.push(t.elapsed().as_secs_f64().max(1e-9));
    }
    let sad = sad_evaluations() - sad_before;
    if frames == 0 {
        return Err(BenchError::EmptyWorkload);
    }
    times.sort_by(f64::total_cmp);
    let median = if iters % 2 == 1 {
        times[iters / 2]
    } else {
        0.5 * (times[iters / 2 - 1] + times[iters / 2])
    };
    let f = frames as f64;
    Ok(StageTiming {
        stage,
        frames,
        seconds: median,
        fps: f / median,
        min_fps: f / times[iters - 1],
        max_fps: f / times[0],
        iters,
        warmup,
        noisy: iters < 5 || warmup == 0,
        sad_evaluations: sad,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub stages: Vec<StageTiming>,
    pub total_fps: f64,
    pub hardware_note: String,
    pub warmup: usize,
    pub iters: usize,
    pub parallel: bool,
    pub resolution: (usize, usize),
}

impl BenchReport {
    pub fn stage(&self, stage: Stage) -> Option<&StageTiming> {
        self.stages.iter().find(|s| s.stage == stage)
    }

    pub fn realtime(&self) -> bool {
        self.total_fps > REALTIME_FPS
    }

    pub fn render_table(&self) -> String {
        let mut out = format!(
            "resolution {}x{}, warmup {}, iters {}, {}\nhardware: {}\n",
            self.resolution.0,
            self.resolution.1,
            self.warmup,
            self.iters,
            if self.parallel { "parallel" } else { "single-threaded" },
            self.hardware_note
        );
        out.push_str(&format!(
            "{:<10} {:>8} {:>12} {:>12} {:>12}\n",
            "Stage", "frames", "fps", "min fps", "max fps"
        ));
        for s in &self.stages {
            out.push_str(&format!(
                "{:<10} {:>8} {:>12.1} {:>12.1} {:>12.1}{}\n",
                s.stage.label(),
                s.frames,
                s.fps,
                s.min_fps,
                s.max_fps,
                if s.noisy { "  (noisy)" } else { "" }
            ));
        }
        out.push_str(&format!(
            "real-time threshold {REALTIME_FPS} fps: {} ({:.1} fps)\n",
            if self.realtime() { "PASS" } else { "FAIL" },
            self.total_fps
        ));
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("stage,frames,seconds,fps,min_fps,max_fps,iters,noisy\n");
        for s in &self.stages {
            out.push_str(&format!(
                "{},{},{:.6},{:.3},{:.3},{:.3},{},{}\n",
                s.stage.name(),
                s.frames,
                s.seconds,
                s.fps,
                s.min_fps,
                s.max_fps,
                s.iters,
                s.noisy
            ));
        }
        out
    }
}

/// Measures every stage and the end-to-end pipeline (decode → gap fill →
/// rasterize → stack → both forwards → fuse). CNN frames are counted as
/// `stack_length` per temporal volume; the total counts every decoded frame.
pub fn bench_pipeline(
    workload: &Workload,
    warmup: usize,
    iters: usize,
    hardware_note: &str,
) -> Result<BenchReport, BenchError> {
    let stages = Stage::ALL
        .into_iter()
        .map(|s| bench_stage(s, workload, warmup, iters))
        .collect::<Result<Vec<_>, _>>()?;
    let decode = &stages[0];
    if decode.sad_evaluations != 0 && !workload.parallel {
        return Err(BenchError::SearchInDecode(decode.sad_evaluations));
    }
    let total_fps = stages.last().expect("total stage").fps;
    Ok(BenchReport {
        stages,
        total_fps,
        hardware_note: hardware_note.to_string(),
        warmup,
        iters,
        parallel: workload.parallel,
        resolution: (workload.clips[0].width(), workload.clips[0].height()),
    })
}
