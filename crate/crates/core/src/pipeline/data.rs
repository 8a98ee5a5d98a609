use std::path::{Path, PathBuf};

use log::warn;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::distill::{Batch, BatchSource, DistillError};
use crate::motion::{
    estimate_flow, fill_iframe_gaps, flow_from_bytes, flow_to_bytes, rasterize, stack_inputs, FlowField,
    FlowParams, MotionField,
};
use crate::nn::Tensor;
use crate::videoio::{
    container_to_bytes, decode_motion_vectors_bytes, encode, Clip, DatasetManifest, Frame, GopConfig, Split,
};

use super::augment::{apply_window, AugmentConfig, CropWindow};
use super::PipelineError;

/// Everything the streams consume for one clip.
#[derive(Clone, Debug)]
pub struct PreparedClip {
    pub clip_id: String,
    pub label: usize,
    pub split: Split,
    pub frames: Vec<Frame>,
    /// Decoded, gap-filled motion fields, one per frame.
    pub motion: Vec<MotionField>,
    /// Dense flow from frame `t−1` to `t`; zero at `t = 0`.
    pub flow: Vec<FlowField>,
}

impl PreparedClip {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn resolution(&self) -> (usize, usize) {
        (self.frames[0].width(), self.frames[0].height())
    }
}

/// Which signal feeds a network.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Modality {
    /// Rasterized motion-vector stack, `2×stack` channels.
    MotionVectors,
    /// Dense flow stack, `2×stack` channels.
    Flow,
    /// Centre frame of the window, 3 channels (Y, U, V).
    Appearance,
}

impl Modality {
    pub fn channels(self, stack_length: usize) -> usize {
        match self {
            Modality::MotionVectors | Modality::Flow => 2 * stack_length,
            Modality::Appearance => 3,
        }
    }

    fn is_motion(self) -> bool {
        self != Modality::Appearance
    }
}

/// Stack geometry and input scaling shared by training and evaluation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InputSpec {
    pub stack_length: usize,
    /// Multiplier applied to displacements (pixels) before the network.
    pub motion_scale: f32,
}

impl InputSpec {
    /// Window starts usable for a clip of `len` frames. Frame 0 has no
    /// predecessor, so stacks start at 1.
    pub fn starts(&self, len: usize) -> std::ops::RangeInclusive<usize> {
        if len < self.stack_length + 1 {
            #[allow(clippy::reversed_empty_ranges)]
            return 1..=0;
        }
        1..=len - self.stack_length
    }

    /// Full-resolution `C×H×W` input of `modality` for the window at `t0`.
    pub fn raw_input(&self, clip: &PreparedClip, modality: Modality, t0: usize) -> Result<Tensor<f32>, PipelineError> {
        let (w, h) = clip.resolution();
        match modality {
            Modality::MotionVectors => {
                let maps = clip.motion[t0..t0 + self.stack_length]
                    .iter()
                    .map(|f| rasterize(f, w, h, false))
                    .collect::<Result<Vec<_>, _>>()?;
                Ok(stack_inputs(&maps, 0, self.stack_length, self.motion_scale)?)
            }
            Modality::Flow => Ok(stack_inputs(&clip.flow, t0, self.stack_length, self.motion_scale)?),
            Modality::Appearance => {
                let f = &clip.frames[t0 + self.stack_length / 2];
                let norm = |v: u8| (v as f32 - 128.0) / 64.0;
                let mut values: Vec<f32> = f.luma().iter().map(|&v| norm(v)).collect();
                match f.chroma() {
                    Some((u, v)) => {
                        // Chroma is half resolution; replicate to full size.
                        for plane in [u, v] {
                            let cw = w.div_ceil(2);
                            for y in 0..h {
                                for x in 0..w {
                                    values.push(norm(plane[(y / 2) * cw + x / 2]));
                                }
                            }
                        }
                    }
                    None => values.extend(std::iter::repeat_n(0.0, 2 * w * h)),
                }
                Ok(Tensor::from_vec(&[3, h, w], values).expect("shape"))
            }
        }
    }
}

/// Decoder-side motion: encode, serialize, then recover only the motion
/// records from the bytes and fill I-frame gaps.
pub fn decoded_motion(clip: &Clip, gop: &GopConfig) -> Result<Vec<MotionField>, PipelineError> {
    let bytes = container_to_bytes(&encode(clip, gop)?)?;
    Ok(fill_iframe_gaps(&decode_motion_vectors_bytes(&bytes)?))
}

/// Per-frame flow of a clip; frame 0 gets a zero field.
pub fn clip_flow(clip: &Clip, params: &FlowParams) -> Result<Vec<FlowField>, PipelineError> {
    let frames = clip.frames();
    let mut out = vec![FlowField::zeros(clip.width(), clip.height())];
    for pair in frames.windows(2) {
        out.push(estimate_flow(&pair[0], &pair[1], params)?);
    }
    Ok(out)
}

/// On-disk flow cache keyed by clip id and frame index.
#[derive(Clone, Debug)]
pub struct FlowCache {
    dir: PathBuf,
}

impl FlowCache {
    pub fn new(dir: impl Into<PathBuf>) -> Result<Self, PipelineError> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir)?;
        Ok(Self { dir })
    }

    fn path(&self, clip_id: &str, frame: usize) -> PathBuf {
        self.dir.join(format!("{clip_id}_{frame:03}.flow"))
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Cached flow for `clip`, computing and storing it on a miss. Unreadable
    /// cache entries are recomputed.
    pub fn load_or_compute(&self, clip: &Clip, params: &FlowParams) -> Result<Vec<FlowField>, PipelineError> {
        let cached: Option<Vec<FlowField>> = (0..clip.len())
            .map(|t| {
                std::fs::read(self.path(&clip.clip_id, t))
                    .ok()
                    .and_then(|b| flow_from_bytes(&b).ok())
                    .filter(|f| f.width == clip.width() && f.height == clip.height())
            })
            .collect();
        if let Some(flow) = cached {
            return Ok(flow);
        }
        let flow = clip_flow(clip, params)?;
        for (t, f) in flow.iter().enumerate() {
            std::fs::write(self.path(&clip.clip_id, t), flow_to_bytes(f))?;
        }
        Ok(flow)
    }
}

/// Decodes motion vectors and computes (or loads) flow for every clip in
/// parallel. Clips too short for one stack are dropped with a warning.
pub fn prepare_clips(
    manifest: &DatasetManifest,
    clips: &[Clip],
    gop: &GopConfig,
    flow_params: &FlowParams,
    stack_length: usize,
    cache: Option<&FlowCache>,
) -> Result<Vec<PreparedClip>, PipelineError> {
    gop.validate()?;
    let prepared = clips
        .par_iter()
        .map(|clip| -> Result<Option<PreparedClip>, PipelineError> {
            if !clip.supports_stack(stack_length) {
                warn!("skipping {}: {} frames cannot hold a {stack_length}-frame stack", clip.clip_id, clip.len());
                return Ok(None);
            }
            let split = *manifest
                .splits
                .get(&clip.clip_id)
                .ok_or_else(|| PipelineError::Config(format!("clip {} is not in the manifest", clip.clip_id)))?;
            let flow = match cache {
                Some(c) => c.load_or_compute(clip, flow_params)?,
                None => clip_flow(clip, flow_params)?,
            };
            Ok(Some(PreparedClip {
                clip_id: clip.clip_id.clone(),
                label: clip.label,
                split,
                frames: clip.frames().to_vec(),
                motion: decoded_motion(clip, gop)?,
                flow,
            }))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(prepared.into_iter().flatten().collect())
}

/// Epoch-shuffled batches: each clip is visited once per epoch with a fresh
/// random window start, crop and flip. The teacher view, when requested,
/// uses the same window, crop and flip as the student view.
pub struct ClipBatches<'a> {
    clips: Vec<&'a PreparedClip>,
    spec: InputSpec,
    student: Modality,
    teacher: Option<Modality>,
    augment: AugmentConfig,
    input_size: usize,
    batch_size: usize,
    rng: ChaCha8Rng,
    order: Vec<usize>,
    cursor: usize,
}

impl<'a> ClipBatches<'a> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        clips: Vec<&'a PreparedClip>,
        spec: InputSpec,
        student: Modality,
        teacher: Option<Modality>,
        augment: AugmentConfig,
        input_size: usize,
        batch_size: usize,
        seed: u64,
    ) -> Result<Self, PipelineError> {
        augment.validate()?;
        if clips.is_empty() || batch_size == 0 {
            return Err(PipelineError::Config("training needs clips and a positive batch size".into()));
        }
        if let Some(c) = clips.iter().find(|c| spec.starts(c.len()).is_empty()) {
            return Err(PipelineError::Config(format!("clip {} is too short for a stack", c.clip_id)));
        }
        Ok(Self {
            clips,
            spec,
            student,
            teacher,
            augment,
            input_size,
            batch_size,
            rng: ChaCha8Rng::seed_from_u64(seed),
            order: Vec::new(),
            cursor: 0,
        })
    }

    fn next_clip(&mut self) -> &'a PreparedClip {
        if self.cursor == self.order.len() {
            self.order = (0..self.clips.len()).collect();
            self.order.shuffle(&mut self.rng);
            self.cursor = 0;
        }
        self.cursor += 1;
        self.clips[self.order[self.cursor - 1]]
    }

    fn sample(&mut self, with_teacher: bool) -> Result<(Tensor<f32>, Option<Tensor<f32>>, usize), PipelineError> {
        let clip = self.next_clip();
        let t0 = self.rng.random_range(self.spec.starts(clip.len()));
        let (w, h) = clip.resolution();
        let window = CropWindow::random(w, h, &self.augment, &mut self.rng)?;
        let view = |m: Modality| -> Result<Tensor<f32>, PipelineError> {
            let raw = self.spec.raw_input(clip, m, t0)?;
            apply_window(&raw, &window, self.input_size, m.is_motion())
        };
        let student = view(self.student)?;
        let teacher = match (with_teacher, self.teacher) {
            (true, Some(m)) => Some(view(m)?),
            _ => None,
        };
        Ok((student, teacher, self.augment.label_for(clip.label, &window)?))
    }
}

impl BatchSource for ClipBatches<'_> {
    fn next_batch(&mut self, _step: u64, with_teacher: bool) -> Result<Batch, DistillError> {
        let mut students = Vec::with_capacity(self.batch_size);
        let mut teachers = Vec::with_capacity(self.batch_size);
        let mut labels = Vec::with_capacity(self.batch_size);
        for _ in 0..self.batch_size {
            let (s, t, l) = self.sample(with_teacher).map_err(|e| DistillError::Data(e.to_string()))?;
            students.push(s);
            teachers.extend(t);
            labels.push(l);
        }
        let teacher = if with_teacher {
            if teachers.len() != students.len() {
                return Err(DistillError::Data("no teacher modality configured".into()));
            }
            Tensor::stack(&teachers)
        } else {
            None
        };
        Ok(Batch {
            student: Tensor::stack(&students).expect("uniform sample shapes"),
            teacher,
            labels,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::videoio::generate_motionshapes;

    fn tiny() -> Vec<PreparedClip> {
        let (m, clips) = generate_motionshapes(5, 2, 64, 16).unwrap();
        prepare_clips(&m, &clips[..4], &GopConfig::default(), &FlowParams::default(), 10, None).unwrap()
    }

    #[test]
    fn prepared_streams_are_aligned() {
        let clips = tiny();
        assert_eq!(clips.len(), 4);
        for c in &clips {
            assert_eq!(c.motion.len(), c.len());
            assert_eq!(c.flow.len(), c.len());
            assert!(c.motion.iter().all(|f| !f.is_empty()));
        }
        let spec = InputSpec { stack_length: 10, motion_scale: 0.5 };
        assert_eq!(spec.starts(16), 1..=6);
        assert!(spec.starts(10).is_empty());
        let x = spec.raw_input(&clips[0], Modality::MotionVectors, 1).unwrap();
        assert_eq!(x.shape(), &[20, 64, 64]);
        let a = spec.raw_input(&clips[0], Modality::Appearance, 1).unwrap();
        assert_eq!(a.shape(), &[3, 64, 64]);
    }

    #[test]
    fn batches_are_reproducible() {
        let clips = tiny();
        let spec = InputSpec { stack_length: 10, motion_scale: 0.5 };
        let make = || {
            ClipBatches::new(
                clips.iter().collect(),
                spec,
                Modality::MotionVectors,
                Some(Modality::Flow),
                AugmentConfig::default(),
                64,
                3,
                9,
            )
            .unwrap()
        };
        let (mut a, mut b) = (make(), make());
        for step in 0..3 {
            let (x, y) = (a.next_batch(step, true).unwrap(), b.next_batch(step, true).unwrap());
            assert_eq!(x.student, y.student);
            assert_eq!(x.teacher, y.teacher);
            assert_eq!(x.labels, y.labels);
            assert_eq!(x.teacher.unwrap().shape(), &[3, 20, 64, 64]);
        }
        assert!(a.next_batch(3, false).unwrap().teacher.is_none());
    }

    #[test]
    fn flow_cache_round_trip() {
        let (_, clips) = generate_motionshapes(5, 1, 64, 16).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let cache = FlowCache::new(dir.path()).unwrap();
        let first = cache.load_or_compute(&clips[0], &FlowParams::default()).unwrap();
        let second = cache.load_or_compute(&clips[0], &FlowParams::default()).unwrap();
        assert_eq!(first, second);
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 16);
    }
}
