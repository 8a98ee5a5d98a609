//! C ABI over the `emv` core: MVS1 containers, block search, optical flow,
//! softened probabilities, score fusion and NNW1 networks.
//!
//! Every fallible function returns an [`EmvStatus`]; on failure the message
//! is available from [`emv_last_error`] on the same thread. Handles are
//! opaque and must be released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use emv::distill::{soften, DistillError};
use emv::motion::{estimate_flow, full_search, three_step_search, FlowParams, MotionError};
use emv::nn::{checkpoint_from_bytes, checkpoint_to_bytes, read_checkpoint, CheckpointError, Network, NnError, Tensor};
use emv::pipeline::{fuse, FusionWeights, PipelineError};
use emv::videoio::{
    container_from_bytes, container_to_bytes, decode_motion_vectors, encode, Clip, CompressedClip, Frame, FrameType,
    GopConfig, VideoError,
};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EmvStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    /// Malformed, truncated or unsupported serialized data.
    Format = 4,
    Checksum = 5,
    /// Caller-provided buffer is too small.
    BufferTooSmall = 6,
    /// Non-finite values or numeric failure.
    Numeric = 7,
    Panic = 8,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

struct Failure(EmvStatus, String);

impl Failure {
    fn null(what: &str) -> Self {
        Failure(EmvStatus::NullPointer, format!("{what} is null"))
    }

    fn arg(msg: impl Into<String>) -> Self {
        Failure(EmvStatus::InvalidArgument, msg.into())
    }
}

impl From<VideoError> for Failure {
    fn from(e: VideoError) -> Self {
        let status = match &e {
            VideoError::ChecksumMismatch { .. } => EmvStatus::Checksum,
            VideoError::BadMagic
            | VideoError::UnsupportedVersion(_)
            | VideoError::TruncatedHeader
            | VideoError::TruncatedFrame { .. }
            | VideoError::TrailingBytes(_)
            | VideoError::InconsistentFrameType { .. }
            | VideoError::MissingMotionRecord { .. }
            | VideoError::UnexpectedMotionRecord { .. }
            | VideoError::MotionRecordSize { .. }
            | VideoError::FrameCount { .. }
            | VideoError::Y4m(_)
            | VideoError::Json(_) => EmvStatus::Format,
            VideoError::Io(_) => EmvStatus::Io,
            _ => EmvStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

impl From<CheckpointError> for Failure {
    fn from(e: CheckpointError) -> Self {
        let status = match &e {
            CheckpointError::ChecksumMismatch { .. } => EmvStatus::Checksum,
            CheckpointError::Io(_) => EmvStatus::Io,
            CheckpointError::Overflow { .. } | CheckpointError::Network(_) => EmvStatus::InvalidArgument,
            _ => EmvStatus::Format,
        };
        Failure(status, e.to_string())
    }
}

impl From<MotionError> for Failure {
    fn from(e: MotionError) -> Self {
        Failure(EmvStatus::InvalidArgument, e.to_string())
    }
}

impl From<NnError> for Failure {
    fn from(e: NnError) -> Self {
        Failure(EmvStatus::InvalidArgument, e.to_string())
    }
}

impl From<DistillError> for Failure {
    fn from(e: DistillError) -> Self {
        Failure(EmvStatus::InvalidArgument, e.to_string())
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        Failure(EmvStatus::InvalidArgument, e.to_string())
    }
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

/// Runs `f`, converting errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> EmvStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error("");
            EmvStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_last_error(&msg);
            status
        }
        Err(_) => {
            set_last_error("internal panic");
            EmvStatus::Panic
        }
    }
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(Failure::null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn out<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| Failure::null(what))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| Failure::null(what))
}

fn luma_frame(data: &[u8], width: usize, height: usize) -> Result<Frame, Failure> {
    Ok(Frame::new(width, height, data.to_vec())?)
}

/// Message of the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next `emv_` call on the same thread.
#[no_mangle]
pub extern "C" fn emv_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn emv_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Encoder settings. Zero fields take the defaults (8, 16, 7).
#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct EmvGopConfig {
    pub gop_length: usize,
    pub block_size: usize,
    pub search_range: usize,
}

impl EmvGopConfig {
    fn resolve(&self) -> GopConfig {
        let d = GopConfig::default();
        let or = |v: usize, dv: usize| if v == 0 { dv } else { v };
        GopConfig {
            gop_length: or(self.gop_length, d.gop_length),
            block_size: or(self.block_size, d.block_size),
            search_range: or(self.search_range, d.search_range),
        }
    }
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct EmvContainerInfo {
    pub width: usize,
    pub height: usize,
    pub block_size: usize,
    pub gop_length: usize,
    pub search_range: usize,
    pub frame_count: usize,
    pub blocks_x: usize,
    pub blocks_y: usize,
}

/// Opaque compressed clip.
pub struct EmvContainer {
    inner: CompressedClip,
}

/// Opaque byte buffer owned by the library.
pub struct EmvBuffer {
    bytes: Vec<u8>,
}

/// Opaque classification network.
pub struct EmvNetwork {
    inner: Network<f32>,
}

/// Encodes `frame_count` consecutive luma planes of `width × height` bytes.
///
/// # Safety
/// `luma` must point to `width * height * frame_count` readable bytes and
/// `config` may be null for defaults.
#[no_mangle]
pub unsafe extern "C" fn emv_encode(
    luma: *const u8,
    width: usize,
    height: usize,
    frame_count: usize,
    config: *const EmvGopConfig,
    out_container: *mut *mut EmvContainer,
) -> EmvStatus {
    guard(|| {
        let out_container = out(out_container, "out_container")?;
        let plane = width.checked_mul(height).ok_or_else(|| Failure::arg("frame size overflows"))?;
        let total = plane
            .checked_mul(frame_count)
            .ok_or_else(|| Failure::arg("clip size overflows"))?;
        if plane == 0 || frame_count == 0 {
            return Err(Failure::arg("empty clip"));
        }
        let data = slice(luma, total, "luma")?;
        let gop = config.as_ref().copied().unwrap_or_default().resolve();
        let frames = data
            .chunks_exact(plane)
            .map(|p| luma_frame(p, width, height))
            .collect::<Result<Vec<_>, _>>()?;
        let clip = Clip::new("ffi", 0, 25.0, frames)?;
        let inner = encode(&clip, &gop)?;
        *out_container = Box::into_raw(Box::new(EmvContainer { inner }));
        Ok(())
    })
}

/// Parses serialized MVS1 bytes.
///
/// # Safety
/// `bytes` must point to `len` readable bytes.
#[no_mangle]
pub unsafe extern "C" fn emv_container_from_bytes(
    bytes: *const u8,
    len: usize,
    out_container: *mut *mut EmvContainer,
) -> EmvStatus {
    guard(|| {
        let out_container = out(out_container, "out_container")?;
        let inner = container_from_bytes(slice(bytes, len, "bytes")?)?;
        *out_container = Box::into_raw(Box::new(EmvContainer { inner }));
        Ok(())
    })
}

/// Serializes a container; release the result with [`emv_buffer_free`].
///
/// # Safety
/// `container` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn emv_container_to_bytes(
    container: *const EmvContainer,
    out_buffer: *mut *mut EmvBuffer,
) -> EmvStatus {
    guard(|| {
        let c = handle(container, "container")?;
        let out_buffer = out(out_buffer, "out_buffer")?;
        let bytes = container_to_bytes(&c.inner)?;
        *out_buffer = Box::into_raw(Box::new(EmvBuffer { bytes }));
        Ok(())
    })
}

/// # Safety
/// `container` and `info` must be valid.
#[no_mangle]
pub unsafe extern "C" fn emv_container_info(container: *const EmvContainer, info: *mut EmvContainerInfo) -> EmvStatus {
    guard(|| {
        let h = &handle(container, "container")?.inner.header;
        let info = out(info, "info")?;
        let (bx, by) = h.blocks();
        *info = EmvContainerInfo {
            width: h.width,
            height: h.height,
            block_size: h.gop.block_size,
            gop_length: h.gop.gop_length,
            search_range: h.gop.search_range,
            frame_count: h.frame_count(),
            blocks_x: bx,
            blocks_y: by,
        };
        Ok(())
    })
}

/// Copies the motion field of `frame` as interleaved `(dx, dy)` pairs in
/// row-major block order into `out_vectors` (capacity `2·blocks_x·blocks_y`).
/// `is_intra` receives 1 for I-frames, whose field is written as zeros.
/// No motion search is performed.
///
/// # Safety
/// `container` must be a live handle; `out_vectors` must hold `capacity`
/// bytes; `is_intra` may be null.
#[no_mangle]
pub unsafe extern "C" fn emv_container_motion(
    container: *const EmvContainer,
    frame: usize,
    out_vectors: *mut i8,
    capacity: usize,
    is_intra: *mut i32,
) -> EmvStatus {
    guard(|| {
        let c = &handle(container, "container")?.inner;
        let (bx, by) = c.header.blocks();
        let need = 2 * bx * by;
        if frame >= c.header.frame_count() {
            return Err(Failure::arg(format!(
                "frame {frame} out of range for {} frames",
                c.header.frame_count()
            )));
        }
        if capacity < need {
            return Err(Failure(
                EmvStatus::BufferTooSmall,
                format!("need {need} bytes, got {capacity}"),
            ));
        }
        let dst = slice_mut(out_vectors, need, "out_vectors")?;
        let fields = decode_motion_vectors(c)?;
        let f = &fields[frame];
        if f.is_empty() {
            dst.fill(0);
        } else {
            for (pair, mv) in dst.chunks_exact_mut(2).zip(&f.vectors) {
                pair[0] = mv.dx;
                pair[1] = mv.dy;
            }
        }
        if let Some(flag) = is_intra.as_mut() {
            *flag = i32::from(c.header.frame_types[frame] == FrameType::I);
        }
        Ok(())
    })
}

/// # Safety
/// `container` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn emv_container_free(container: *mut EmvContainer) {
    if !container.is_null() {
        drop(Box::from_raw(container));
    }
}

/// # Safety
/// `buffer` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn emv_buffer_data(buffer: *const EmvBuffer) -> *const u8 {
    buffer.as_ref().map_or(ptr::null(), |b| b.bytes.as_ptr())
}

/// # Safety
/// `buffer` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn emv_buffer_len(buffer: *const EmvBuffer) -> usize {
    buffer.as_ref().map_or(0, |b| b.bytes.len())
}

/// # Safety
/// `buffer` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn emv_buffer_free(buffer: *mut EmvBuffer) {
    if !buffer.is_null() {
        drop(Box::from_raw(buffer));
    }
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct EmvSearchResult {
    pub dx: i32,
    pub dy: i32,
    pub sad: u32,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EmvSearchMethod {
    ThreeStep = 0,
    Full = 1,
}

/// Finds the displacement of the block at `(x, y)` of `cur` relative to
/// `reference`: `cur(p) = reference(p − (dx, dy))`.
///
/// # Safety
/// Both planes must hold `width * height` bytes.
#[no_mangle]
pub unsafe extern "C" fn emv_block_search(
    cur: *const u8,
    reference: *const u8,
    width: usize,
    height: usize,
    x: usize,
    y: usize,
    block_size: usize,
    search_range: usize,
    method: EmvSearchMethod,
    result: *mut EmvSearchResult,
) -> EmvStatus {
    guard(|| {
        let result = out(result, "result")?;
        let n = width.checked_mul(height).ok_or_else(|| Failure::arg("frame size overflows"))?;
        let cur = luma_frame(slice(cur, n, "cur")?, width, height)?;
        let reference = luma_frame(slice(reference, n, "reference")?, width, height)?;
        let search = match method {
            EmvSearchMethod::ThreeStep => three_step_search,
            EmvSearchMethod::Full => full_search,
        };
        let r = search(&cur, &reference, (x, y), block_size, search_range)?;
        *result = EmvSearchResult {
            dx: r.dx,
            dy: r.dy,
            sad: r.sad,
        };
        Ok(())
    })
}

/// Dense flow from `prev` to `next` with default parameters; `u` and `v`
/// receive `width * height` values each.
///
/// # Safety
/// Inputs hold `width * height` bytes, outputs as many floats.
#[no_mangle]
pub unsafe extern "C" fn emv_estimate_flow(
    prev: *const u8,
    next: *const u8,
    width: usize,
    height: usize,
    u: *mut f32,
    v: *mut f32,
) -> EmvStatus {
    guard(|| {
        let n = width.checked_mul(height).ok_or_else(|| Failure::arg("frame size overflows"))?;
        let prev = luma_frame(slice(prev, n, "prev")?, width, height)?;
        let next = luma_frame(slice(next, n, "next")?, width, height)?;
        let (u, v) = (slice_mut(u, n, "u")?, slice_mut(v, n, "v")?);
        let flow = estimate_flow(&prev, &next, &FlowParams::default())?;
        if !flow.is_finite() {
            return Err(Failure(EmvStatus::Numeric, "flow contains non-finite values".into()));
        }
        u.copy_from_slice(&flow.u);
        v.copy_from_slice(&flow.v);
        Ok(())
    })
}

/// Temperature softmax of `len` logits into `probs`.
///
/// # Safety
/// `logits` and `probs` hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn emv_soften(logits: *const f64, len: usize, temperature: f64, probs: *mut f64) -> EmvStatus {
    guard(|| {
        let z = slice(logits, len, "logits")?;
        let p = slice_mut(probs, len, "probs")?;
        if z.iter().any(|x| !x.is_finite()) {
            return Err(Failure(EmvStatus::Numeric, "logits must be finite".into()));
        }
        p.copy_from_slice(&soften(z, temperature)?);
        Ok(())
    })
}

/// Weighted average of two score vectors; `fused` may be null. The
/// winning class index is written to `class_index`.
///
/// # Safety
/// Score arrays hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn emv_fuse(
    spatial: *const f64,
    temporal: *const f64,
    len: usize,
    spatial_weight: f64,
    temporal_weight: f64,
    fused: *mut f64,
    class_index: *mut usize,
) -> EmvStatus {
    guard(|| {
        let s = slice(spatial, len, "spatial")?;
        let t = slice(temporal, len, "temporal")?;
        let class_index = out(class_index, "class_index")?;
        let w = FusionWeights::new(spatial_weight, temporal_weight)?;
        let (scores, class) = fuse(s, t, &w)?;
        if !fused.is_null() {
            slice_mut(fused, len, "fused")?.copy_from_slice(&scores);
        }
        *class_index = class;
        Ok(())
    })
}

fn boxed_network(inner: Network<f32>, out_network: &mut *mut EmvNetwork) {
    *out_network = Box::into_raw(Box::new(EmvNetwork { inner }));
}

/// Loads an NNW1 checkpoint from a file.
///
/// # Safety
/// `path` is a NUL-terminated UTF-8 string.
#[no_mangle]
pub unsafe extern "C" fn emv_network_load(path: *const c_char, out_network: *mut *mut EmvNetwork) -> EmvStatus {
    guard(|| {
        let out_network = out(out_network, "out_network")?;
        if path.is_null() {
            return Err(Failure::null("path"));
        }
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| Failure::arg("path is not UTF-8"))?;
        boxed_network(read_checkpoint(path)?, out_network);
        Ok(())
    })
}

/// Parses NNW1 checkpoint bytes.
///
/// # Safety
/// `bytes` holds `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn emv_network_from_bytes(
    bytes: *const u8,
    len: usize,
    out_network: *mut *mut EmvNetwork,
) -> EmvStatus {
    guard(|| {
        let out_network = out(out_network, "out_network")?;
        boxed_network(checkpoint_from_bytes(slice(bytes, len, "bytes")?)?, out_network);
        Ok(())
    })
}

/// Serializes a network as NNW1; release with [`emv_buffer_free`].
///
/// # Safety
/// `network` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn emv_network_to_bytes(network: *const EmvNetwork, out_buffer: *mut *mut EmvBuffer) -> EmvStatus {
    guard(|| {
        let n = handle(network, "network")?;
        let out_buffer = out(out_buffer, "out_buffer")?;
        let bytes = checkpoint_to_bytes(&n.inner)?;
        *out_buffer = Box::into_raw(Box::new(EmvBuffer { bytes }));
        Ok(())
    })
}

/// Writes `[channels, height, width]` into `shape` and the class count
/// into `num_classes` (either may be null).
///
/// # Safety
/// `network` must be a live handle; `shape` holds 3 values.
#[no_mangle]
pub unsafe extern "C" fn emv_network_shape(
    network: *const EmvNetwork,
    shape: *mut usize,
    num_classes: *mut usize,
) -> EmvStatus {
    guard(|| {
        let n = &handle(network, "network")?.inner;
        if !shape.is_null() {
            slice_mut(shape, 3, "shape")?.copy_from_slice(&n.input_shape());
        }
        if let Some(k) = num_classes.as_mut() {
            *k = n.num_classes();
        }
        Ok(())
    })
}

/// Content checksum of the parameters.
///
/// # Safety
/// `network` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn emv_network_checksum(network: *const EmvNetwork, checksum: *mut u64) -> EmvStatus {
    guard(|| {
        let n = handle(network, "network")?;
        *out(checksum, "checksum")? = n.inner.checksum();
        Ok(())
    })
}

/// Eval-mode forward pass over `batch` inputs laid out `N×C×H×W`; writes
/// `batch × num_classes` logits.
///
/// # Safety
/// `input` holds `batch·C·H·W` floats and `logits` `batch·num_classes`.
#[no_mangle]
pub unsafe extern "C" fn emv_network_predict(
    network: *const EmvNetwork,
    input: *const f32,
    batch: usize,
    logits: *mut f32,
) -> EmvStatus {
    guard(|| {
        let n = &handle(network, "network")?.inner;
        if batch == 0 {
            return Err(Failure::arg("batch must be positive"));
        }
        let [c, h, w] = n.input_shape();
        let len = batch * c * h * w;
        let x = slice(input, len, "input")?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Failure(EmvStatus::Numeric, "input must be finite".into()));
        }
        let x = Tensor::from_vec(&[batch, c, h, w], x.to_vec()).expect("shape matches length");
        let y = n.predict(&x)?;
        slice_mut(logits, y.len(), "logits")?.copy_from_slice(y.values());
        Ok(())
    })
}

/// # Safety
/// `network` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn emv_network_free(network: *mut EmvNetwork) {
    if !network.is_null() {
        drop(Box::from_raw(network));
    }
}
