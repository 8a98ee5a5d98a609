use std::ffi::{CStr, CString};
use std::ptr;

use emv::nn::{build_mini_two_stream, checkpoint_to_bytes, Activation};
use emv_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(emv_last_error()) }.to_string_lossy().into_owned()
}

fn textured(w: usize, h: usize, shift: i32) -> Vec<u8> {
    (0..h)
        .flat_map(|y| {
            (0..w).map(move |x| {
                let xs = x as f32 - shift as f32;
                ((xs * 0.45).sin() * 50.0 + (y as f32 * 0.3).cos() * 40.0 + (xs * 0.13 + y as f32 * 0.21).sin() * 30.0
                    + 128.0) as u8
            })
        })
        .collect()
}

fn encode_clip(frames: usize) -> *mut EmvContainer {
    let (w, h) = (32, 32);
    let luma: Vec<u8> = (0..frames).flat_map(|t| textured(w, h, t as i32)).collect();
    let cfg = EmvGopConfig {
        gop_length: 4,
        block_size: 8,
        search_range: 7,
    };
    let mut c = ptr::null_mut();
    let s = unsafe { emv_encode(luma.as_ptr(), w, h, frames, &cfg, &mut c) };
    assert_eq!(s, EmvStatus::Ok, "{}", last_error());
    c
}

#[test]
fn container_round_trip_and_motion() {
    let c = encode_clip(6);
    let mut info = EmvContainerInfo::default();
    assert_eq!(unsafe { emv_container_info(c, &mut info) }, EmvStatus::Ok);
    assert_eq!((info.width, info.frame_count, info.blocks_x, info.gop_length), (32, 6, 4, 4));

    let mut mv = vec![0i8; 2 * 16];
    let mut intra = -1;
    assert_eq!(
        unsafe { emv_container_motion(c, 1, mv.as_mut_ptr(), mv.len(), &mut intra) },
        EmvStatus::Ok
    );
    assert_eq!(intra, 0);
    // interior block (1, 1) moved one pixel right
    assert_eq!((mv[2 * 5], mv[2 * 5 + 1]), (1, 0));
    assert_eq!(
        unsafe { emv_container_motion(c, 4, mv.as_mut_ptr(), mv.len(), &mut intra) },
        EmvStatus::Ok
    );
    assert_eq!(intra, 1);
    assert!(mv.iter().all(|&v| v == 0));

    let status = unsafe { emv_container_motion(c, 1, mv.as_mut_ptr(), 4, ptr::null_mut()) };
    assert_eq!(status, EmvStatus::BufferTooSmall);
    let status = unsafe { emv_container_motion(c, 6, mv.as_mut_ptr(), mv.len(), ptr::null_mut()) };
    assert_eq!(status, EmvStatus::InvalidArgument);

    let mut buf = ptr::null_mut();
    assert_eq!(unsafe { emv_container_to_bytes(c, &mut buf) }, EmvStatus::Ok);
    let bytes = unsafe { std::slice::from_raw_parts(emv_buffer_data(buf), emv_buffer_len(buf)) }.to_vec();
    let mut back = ptr::null_mut();
    assert_eq!(
        unsafe { emv_container_from_bytes(bytes.as_ptr(), bytes.len(), &mut back) },
        EmvStatus::Ok
    );
    let mut again = ptr::null_mut();
    assert_eq!(unsafe { emv_container_to_bytes(back, &mut again) }, EmvStatus::Ok);
    let bytes2 = unsafe { std::slice::from_raw_parts(emv_buffer_data(again), emv_buffer_len(again)) };
    assert_eq!(bytes, bytes2);

    let mut corrupt = bytes.clone();
    corrupt[100] ^= 1;
    let mut bad = ptr::null_mut();
    let status = unsafe { emv_container_from_bytes(corrupt.as_ptr(), corrupt.len(), &mut bad) };
    assert_eq!(status, EmvStatus::Checksum);
    assert!(last_error().contains("checksum"));
    assert!(bad.is_null());
    let status = unsafe { emv_container_from_bytes(bytes.as_ptr(), 12, &mut bad) };
    assert_eq!(status, EmvStatus::Format);

    unsafe {
        emv_buffer_free(buf);
        emv_buffer_free(again);
        emv_container_free(back);
        emv_container_free(c);
        emv_container_free(ptr::null_mut());
    }
}

#[test]
fn null_pointers_are_reported() {
    let mut info = EmvContainerInfo::default();
    assert_eq!(
        unsafe { emv_container_info(ptr::null(), &mut info) },
        EmvStatus::NullPointer
    );
    assert!(last_error().contains("container"));
    let mut c = ptr::null_mut();
    assert_eq!(
        unsafe { emv_encode(ptr::null(), 16, 16, 2, ptr::null(), &mut c) },
        EmvStatus::NullPointer
    );
    assert_eq!(
        unsafe { emv_encode(ptr::null(), 0, 16, 2, ptr::null(), &mut c) },
        EmvStatus::InvalidArgument
    );
}

#[test]
fn block_search_methods_agree_on_translation() {
    let (w, h) = (48, 48);
    let reference = textured(w, h, 0);
    let cur = textured(w, h, 3);
    for method in [EmvSearchMethod::ThreeStep, EmvSearchMethod::Full] {
        let mut r = EmvSearchResult::default();
        let s = unsafe { emv_block_search(cur.as_ptr(), reference.as_ptr(), w, h, 16, 16, 16, 7, method, &mut r) };
        assert_eq!(s, EmvStatus::Ok, "{}", last_error());
        assert_eq!(r, EmvSearchResult { dx: 3, dy: 0, sad: 0 });
    }
    let mut r = EmvSearchResult::default();
    let s = unsafe {
        emv_block_search(cur.as_ptr(), reference.as_ptr(), w, h, 40, 40, 16, 7, EmvSearchMethod::Full, &mut r)
    };
    assert_eq!(s, EmvStatus::InvalidArgument);
}

#[test]
fn flow_soften_and_fuse() {
    let (w, h) = (64, 64);
    let (a, b) = (textured(w, h, 0), textured(w, h, 1));
    let (mut u, mut v) = (vec![0f32; w * h], vec![0f32; w * h]);
    let s = unsafe { emv_estimate_flow(a.as_ptr(), b.as_ptr(), w, h, u.as_mut_ptr(), v.as_mut_ptr()) };
    assert_eq!(s, EmvStatus::Ok, "{}", last_error());
    let centre = u[32 * w + 32];
    assert!((centre - 1.0).abs() < 0.5, "u = {centre}");

    let logits = [1.0, 2.0, 3.0];
    let mut p = [0.0; 3];
    assert_eq!(unsafe { emv_soften(logits.as_ptr(), 3, 2.0, p.as_mut_ptr()) }, EmvStatus::Ok);
    let z: f64 = [0.5f64, 1.0, 1.5].iter().map(|x| x.exp()).sum();
    assert!((p[2] - 1.5f64.exp() / z).abs() < 1e-12);
    assert_eq!(
        unsafe { emv_soften(logits.as_ptr(), 3, 0.0, p.as_mut_ptr()) },
        EmvStatus::InvalidArgument
    );
    let nan = [f64::NAN, 0.0];
    assert_eq!(unsafe { emv_soften(nan.as_ptr(), 2, 1.0, p.as_mut_ptr()) }, EmvStatus::Numeric);

    let (sp, tp) = ([0.6, 0.3, 0.1], [0.2, 0.5, 0.3]);
    let mut fused = [0.0; 3];
    let mut class = 0usize;
    let s = unsafe { emv_fuse(sp.as_ptr(), tp.as_ptr(), 3, 1.0, 2.0, fused.as_mut_ptr(), &mut class) };
    assert_eq!(s, EmvStatus::Ok);
    assert_eq!(class, 1);
    assert!((fused[0] - (0.6 + 0.4) / 3.0).abs() < 1e-12);
    let s = unsafe { emv_fuse(sp.as_ptr(), tp.as_ptr(), 3, -1.0, 2.0, ptr::null_mut(), &mut class) };
    assert_eq!(s, EmvStatus::InvalidArgument);
}

#[test]
fn network_load_predict_and_checksum() {
    let net = build_mini_two_stream::<f32>(32, 4, 5, Activation::Prelu, 7).unwrap();
    let bytes = checkpoint_to_bytes(&net).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.nnw");
    std::fs::write(&path, &bytes).unwrap();
    let cpath = CString::new(path.to_str().unwrap()).unwrap();

    let mut handle = ptr::null_mut();
    assert_eq!(unsafe { emv_network_load(cpath.as_ptr(), &mut handle) }, EmvStatus::Ok);
    let mut shape = [0usize; 3];
    let mut classes = 0usize;
    assert_eq!(
        unsafe { emv_network_shape(handle, shape.as_mut_ptr(), &mut classes) },
        EmvStatus::Ok
    );
    assert_eq!((shape, classes), ([4, 32, 32], 5));
    let mut sum = 0u64;
    assert_eq!(unsafe { emv_network_checksum(handle, &mut sum) }, EmvStatus::Ok);
    assert_eq!(sum, net.checksum());

    let input: Vec<f32> = (0..2 * 4 * 32 * 32).map(|i| ((i % 17) as f32 - 8.0) / 8.0).collect();
    let mut logits = vec![0f32; 2 * 5];
    assert_eq!(
        unsafe { emv_network_predict(handle, input.as_ptr(), 2, logits.as_mut_ptr()) },
        EmvStatus::Ok
    );
    let x = emv::nn::Tensor::from_vec(&[2, 4, 32, 32], input).unwrap();
    assert_eq!(logits, net.predict(&x).unwrap().values());

    let mut buf = ptr::null_mut();
    assert_eq!(unsafe { emv_network_to_bytes(handle, &mut buf) }, EmvStatus::Ok);
    assert_eq!(
        unsafe { std::slice::from_raw_parts(emv_buffer_data(buf), emv_buffer_len(buf)) },
        &bytes[..]
    );

    let mut corrupt = bytes.clone();
    corrupt[0] = b'X';
    let mut other = ptr::null_mut();
    let s = unsafe { emv_network_from_bytes(corrupt.as_ptr(), corrupt.len(), &mut other) };
    assert_eq!(s, EmvStatus::Format);
    let missing = CString::new(dir.path().join("none.nnw").to_str().unwrap()).unwrap();
    assert_eq!(unsafe { emv_network_load(missing.as_ptr(), &mut other) }, EmvStatus::Io);

    unsafe {
        emv_buffer_free(buf);
        emv_network_free(handle);
    }
}
