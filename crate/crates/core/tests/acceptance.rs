//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails. Run with `cargo test -p emv --test acceptance`.
//!
//! Set `EMV_ACCEPTANCE_ONLY=1,4` to run a subset.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::time::Instant;

use emv::bench::{bench_pipeline, bench_stage, Stage, Workload, REALTIME_FPS};
use emv::distill::{loss_combined, teacher_init, DistillConfig, Strategy};
use emv::motion::{estimate_flow, full_search, three_step_search, FlowParams};
use emv::nn::{
    build_mini_two_stream, checkpoint_from_bytes, checkpoint_to_bytes, read_checkpoint, write_checkpoint, Activation,
    CheckpointError, Network, Tensor,
};
use emv::pipeline::{
    fuse, prepare_clips, run_experiment, temperature_sweep, ExperimentConfig, ExperimentReport, FusionWeights,
    PreparedClip, SweepRow, TEACHER_ROW,
};
use emv::videoio::{
    container_from_bytes, container_to_bytes, encode, generate_motionshapes, generate_with, read_container,
    write_container, GopConfig, MotionShapesParams, VideoError,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Outcome of one criterion: pass flag and a one-line detail.
type Outcome = (bool, String);

/// Artifacts of the distillation experiment shared by criteria 4, 5 and 7.
struct Shared {
    clips: Option<Vec<PreparedClip>>,
    report: Option<ExperimentReport>,
    teacher: Option<Network>,
    teacher_checksum_before: Option<u64>,
}

fn out_dir() -> PathBuf {
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    std::fs::create_dir_all(&dir).expect("acceptance output dir");
    dir
}

fn main() {
    let only: Option<Vec<usize>> = std::env::var("EMV_ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|v| v.trim().parse().ok()).collect());
    let wanted = |n: usize| only.as_ref().is_none_or(|o| o.contains(&n));
    let mut shared = Shared {
        clips: None,
        report: None,
        teacher: None,
        teacher_checksum_before: None,
    };

    type Criterion = fn(&mut Shared) -> Outcome;
    let criteria: [(usize, &str, f64, Criterion); 10] = [
        (1, "gradient suite", 60.0, gradients),
        (2, "search oracle", 10.0, search_oracle),
        (3, "flow accuracy", 30.0, flow_accuracy),
        (4, "distillation recovery", 45.0 * 60.0, distillation_recovery),
        (5, "temperature protocol", f64::INFINITY, temperature_protocol),
        (6, "decode-cost asymmetry", f64::INFINITY, decode_cost),
        (7, "frozen teacher and initialization", f64::INFINITY, frozen_teacher),
        (8, "fusion properties", f64::INFINITY, fusion_properties),
        (9, "round trips", f64::INFINITY, round_trips),
        (10, "real-time gate", f64::INFINITY, realtime_gate),
    ];
    let mut failed = 0;
    for (n, name, budget, run) in criteria {
        if !wanted(n) {
            continue;
        }
        let started = Instant::now();
        let (mut pass, mut detail) = match catch_unwind(AssertUnwindSafe(|| run(&mut shared))) {
            Ok(outcome) => outcome,
            Err(e) => {
                let msg = e
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_else(|| "panic".into());
                (false, format!("panicked: {msg}"))
            }
        };
        let secs = started.elapsed().as_secs_f64();
        if secs > budget {
            pass = false;
            detail.push_str(&format!("; exceeded {budget:.0}s budget"));
        }
        if !pass {
            failed += 1;
        }
        println!(
            "{} {n:>2}. {name}: {detail} [{secs:.1}s]",
            if pass { "PASS" } else { "FAIL" }
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}

fn gradients(_: &mut Shared) -> Outcome {
    const TOL: f64 = 1e-5;
    let mut worst: f64 = 0.0;
    let mut instances = std::collections::BTreeMap::<&str, usize>::new();
    let mut problems = Vec::new();
    for seed in 0..20 {
        let mut nets = common::layer_probes(seed);
        nets.push(("network/relu", build_mini_two_stream::<f64>(32, 2, 3, Activation::Relu, seed).unwrap()));
        nets.push(("network/prelu", build_mini_two_stream::<f64>(32, 2, 3, Activation::Prelu, seed).unwrap()));
        for (name, net) in nets {
            let per_tensor = if name.starts_with("network") { 3 } else { 64 };
            let c = common::check_network(&net, 2, per_tensor, seed + 100);
            worst = worst.max(c.worst);
            *instances.entry(name).or_default() += 1;
            if c.worst >= TOL || c.kinks * 10 > c.probes {
                problems.push(format!("{name}/{seed}: err {:.1e}, {} kinks", c.worst, c.kinks));
            }
        }
    }
    // combined loss, gradient with respect to the student logits
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut loss_worst: f64 = 0.0;
    let loss_instances = 40;
    for _ in 0..loss_instances {
        let k = rng.random_range(2..10);
        let zt: Vec<f64> = (0..k).map(|_| rng.random_range(-6.0..6.0)).collect();
        let zs: Vec<f64> = (0..k).map(|_| rng.random_range(-6.0..6.0)).collect();
        let label = rng.random_range(0..k);
        let t = rng.random_range(0.5..5.0);
        let w = if rng.random_bool(0.5) { None } else { Some(rng.random_range(0.0..10.0)) };
        let cfg = DistillConfig::new(t, w, Strategy::Combined).unwrap();
        let analytic = loss_combined(&zt, &zs, label, &cfg).unwrap().student_grad;
        let h = 1e-6;
        let numeric: Vec<f64> = (0..k)
            .map(|j| {
                let mut up = zs.clone();
                up[j] += h;
                let mut down = zs.clone();
                down[j] -= h;
                let f = |z: &[f64]| loss_combined(&zt, z, label, &cfg).unwrap().breakdown.total;
                (f(&up) - f(&down)) / (2.0 * h)
            })
            .collect();
        loss_worst = loss_worst.max(common::rel_err(&analytic, &numeric));
    }
    if loss_worst >= TOL {
        problems.push(format!("combined loss: err {loss_worst:.1e}"));
    }
    let kinds: Vec<String> = instances.iter().map(|(k, n)| format!("{k}×{n}")).collect();
    (
        problems.is_empty(),
        format!(
            "worst layer rel err {worst:.1e}, loss rel err {loss_worst:.1e} over {loss_instances} instances, tol {TOL:e}; {}{}",
            kinds.join(" "),
            if problems.is_empty() { String::new() } else { format!("; {}", problems.join(", ")) }
        ),
    )
}

fn search_oracle(_: &mut Shared) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut dominated = 0;
    for _ in 0..200 {
        let seed = rng.random();
        let block = if rng.random_bool(0.5) { 8 } else { 16 };
        let cur = common::textured_frame(64, 64, rng.random_range(-7..=7), rng.random_range(-7..=7), seed);
        let reference = common::textured_frame(64, 64, 0, 0, rng.random());
        let origin = (rng.random_range(0..=64 - block), rng.random_range(0..=64 - block));
        let full = full_search(&cur, &reference, origin, block, 7).unwrap();
        let tss = three_step_search(&cur, &reference, origin, block, 7).unwrap();
        dominated += usize::from(full.sad <= tss.sad);
    }
    let interior = [(16, 16), (32, 16), (16, 32), (32, 32)];
    let (mut exact, mut blocks) = (0, 0);
    let mut misses = Vec::new();
    for case in 0..50 {
        let (dx, dy, seed) = (rng.random_range(-7..=7), rng.random_range(-7..=7), rng.random());
        let reference = common::textured_frame(64, 64, 0, 0, seed);
        let cur = common::textured_frame(64, 64, dx, dy, seed);
        for origin in interior {
            let r = three_step_search(&cur, &reference, origin, 16, 7).unwrap();
            blocks += 1;
            if (r.dx, r.dy, r.sad) == (dx, dy, 0) {
                exact += 1;
            } else if misses.len() < 3 {
                misses.push(format!("case {case} shift ({dx},{dy}) got ({},{}) sad {}", r.dx, r.dy, r.sad));
            }
        }
    }
    (
        dominated == 200 && exact == blocks,
        format!(
            "full ≤ TSS on {dominated}/200 pairs; TSS exact on {exact}/{blocks} interior blocks of 50 translations{}",
            if misses.is_empty() { String::new() } else { format!(" (e.g. {})", misses.join("; ")) }
        ),
    )
}

fn flow_accuracy(_: &mut Shared) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let params = FlowParams::default();
    let margin = 8;
    let mut epes: Vec<f64> = (0..20)
        .map(|_| {
            let (dx, dy) = loop {
                let s = (rng.random_range(-3..=3), rng.random_range(-3..=3));
                if s != (0, 0) {
                    break s;
                }
            };
            let seed = rng.random();
            let prev = common::textured_frame(64, 64, 0, 0, seed);
            let next = common::textured_frame(64, 64, dx, dy, seed);
            let flow = estimate_flow(&prev, &next, &params).unwrap();
            let mut sum = 0.0;
            let mut n = 0;
            for y in margin..64 - margin {
                for x in margin..64 - margin {
                    let (u, v) = flow.at(x, y);
                    sum += ((u as f64 - dx as f64).powi(2) + (v as f64 - dy as f64).powi(2)).sqrt();
                    n += 1;
                }
            }
            sum / n as f64
        })
        .collect();
    epes.sort_by(f64::total_cmp);
    let median = (epes[9] + epes[10]) / 2.0;
    (
        median < 0.5,
        format!(
            "median EPE {median:.3} px over 20 pairs (worst {:.3}), threshold 0.5",
            epes[19]
        ),
    )
}

fn prepared(shared: &mut Shared, cfg: &ExperimentConfig) -> Vec<PreparedClip> {
    if let Some(c) = &shared.clips {
        return c.clone();
    }
    let (manifest, clips) = generate_with(&MotionShapesParams::new(7, 50, 64, 24)).unwrap();
    let prepared = prepare_clips(&manifest, &clips, &cfg.gop, &cfg.flow, cfg.stack_length, None).unwrap();
    shared.clips = Some(prepared.clone());
    prepared
}

fn distillation_recovery(shared: &mut Shared) -> Outcome {
    let cfg = ExperimentConfig::default();
    let clips = prepared(shared, &cfg);
    let dir = out_dir().join("experiment");
    std::fs::create_dir_all(&dir).unwrap();
    let strategies = [Strategy::Scratch, Strategy::SupervisionTransfer, Strategy::TeacherInit, Strategy::Combined];
    let seeds = [1, 2, 3];
    // teacher trained first, its checksum recorded, then the 12 students
    let (_, teacher) = run_experiment(&clips, &[], &[], &cfg, None, 1, None).unwrap();
    shared.teacher_checksum_before = Some(teacher.checksum());
    let (report, teacher) = run_experiment(&clips, &strategies, &seeds, &cfg, Some(teacher), 1, Some(&dir)).unwrap();
    let mean = |row: &str| report.mean(row).unwrap() * 100.0;
    let (scratch, st, ti, both, t) = (
        mean("MV-scratch"),
        mean("EMV-ST"),
        mean("EMV-TI"),
        mean("EMV-ST+TI"),
        mean(TEACHER_ROW),
    );
    let checks = [
        (t >= both - 2.0, "teacher ≥ ST+TI − 2"),
        (both >= scratch + 2.0, "ST+TI ≥ scratch + 2"),
        (ti >= scratch, "TI ≥ scratch"),
        (st >= scratch, "ST ≥ scratch"),
    ];
    let failed: Vec<&str> = checks.iter().filter(|(ok, _)| !ok).map(|(_, n)| *n).collect();
    shared.report = Some(report);
    shared.teacher = Some(teacher);
    (
        failed.is_empty(),
        format!(
            "means over seeds 1-3: scratch {scratch:.1}%, ST {st:.1}%, TI {ti:.1}%, ST+TI {both:.1}%, teacher {t:.1}%{}",
            if failed.is_empty() { String::new() } else { format!("; violated: {}", failed.join(", ")) }
        ),
    )
}

fn temperature_protocol(shared: &mut Shared) -> Outcome {
    let cfg = ExperimentConfig::default();
    let clips = prepared(shared, &cfg);
    let teacher = match shared.teacher.take() {
        Some(t) => t,
        None => run_experiment(&clips, &[], &[], &cfg, None, 1, None).unwrap().1,
    };
    let seeds = [1, 2, 3];
    // Temp = 2, w = 4 is the default operating point already trained by
    // the strategy matrix; reuse those runs when available.
    let reuse = shared.report.as_ref().filter(|_| cfg.temperature == 2.0 && cfg.weight.is_none());
    let settings: Vec<(f64, Option<f64>)> = [1.0, 2.0, 3.0]
        .into_iter()
        .filter(|&t| !(reuse.is_some() && t == 2.0))
        .map(|t| (t, Some(t * t)))
        .collect();
    let mut sweep = temperature_sweep(&clips, &teacher, Strategy::Combined, &settings, &seeds, &cfg).unwrap();
    if let Some(report) = reuse {
        let runs: Vec<f64> = report
            .runs
            .iter()
            .filter(|r| r.row == "EMV-ST+TI")
            .map(|r| r.accuracy)
            .collect();
        let mean = runs.iter().sum::<f64>() / runs.len() as f64;
        sweep.rows.push(SweepRow { temperature: 2.0, weight: 4.0, accuracies: runs, mean });
        sweep.rows.sort_by(|a, b| a.temperature.total_cmp(&b.temperature));
    }
    shared.teacher = Some(teacher);
    std::fs::write(out_dir().join("temperature_sweep.csv"), sweep.to_csv()).unwrap();
    let complete = sweep.rows.len() == 3 && sweep.rows.iter().all(|r| r.accuracies.len() == seeds.len());
    let spread = sweep.spread() * 100.0;
    let cells: Vec<String> = sweep
        .rows
        .iter()
        .map(|r| format!("T={} w={}: {:.1}%", r.temperature, r.weight, r.mean * 100.0))
        .collect();
    (
        complete && spread <= 5.0,
        format!("{}; spread {spread:.1} pts (≤ 5)", cells.join(", ")),
    )
}

fn decode_cost(_: &mut Shared) -> Outcome {
    let (_, clips) = generate_motionshapes(11, 1, 64, 24).unwrap();
    let workload = Workload::new(&clips, GopConfig::default()).unwrap();
    let decode = bench_stage(Stage::MvDecode, &workload, 1, 5).unwrap();
    let flow = bench_stage(Stage::Flow, &workload, 1, 5).unwrap();
    let ratio = decode.fps / flow.fps;
    (
        ratio >= 10.0 && decode.sad_evaluations == 0,
        format!(
            "mv_decode {:.0} fps vs flow {:.1} fps (×{ratio:.0}, need ≥ 10); SAD evaluations during decode: {}",
            decode.fps, flow.fps, decode.sad_evaluations
        ),
    )
}

fn frozen_teacher(shared: &mut Shared) -> Outcome {
    let mut details = Vec::new();
    let mut pass = true;
    match (&shared.teacher, shared.teacher_checksum_before) {
        (Some(t), Some(before)) => {
            let same = t.checksum() == before;
            pass &= same;
            details.push(format!(
                "teacher checksum {} across {} student runs",
                if same { "unchanged" } else { "CHANGED" },
                shared.report.as_ref().map_or(0, |r| r.runs.len().saturating_sub(1))
            ));
        }
        _ => {
            // standalone: a short combined run on a small dataset
            let mut cfg = ExperimentConfig::default();
            cfg.training.steps = 20;
            let (manifest, clips) = generate_motionshapes(12, 3, 64, 24).unwrap();
            let clips = prepare_clips(&manifest, &clips, &cfg.gop, &cfg.flow, cfg.stack_length, None).unwrap();
            let teacher = build_mini_two_stream::<f32>(64, 20, 8, Activation::Prelu, 4).unwrap();
            let before = teacher.checksum();
            emv::pipeline::train_student_run(Strategy::Combined, Some(&teacher), &clips, &cfg, 1).unwrap();
            let same = teacher.checksum() == before;
            pass &= same;
            details.push(format!(
                "teacher checksum {} across a 20-step combined run",
                if same { "unchanged" } else { "CHANGED" }
            ));
        }
    }
    let teacher = build_mini_two_stream::<f32>(64, 20, 8, Activation::Prelu, 21).unwrap();
    let fresh = build_mini_two_stream::<f32>(64, 20, 8, Activation::Prelu, 22).unwrap();
    let student = teacher_init(&teacher, &fresh, 23).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let equal = (0..10)
        .filter(|_| {
            let x: Vec<f32> = (0..20 * 64 * 64).map(|_| rng.random_range(-1.0..1.0)).collect();
            let x = Tensor::from_vec(&[1, 20, 64, 64], x).unwrap();
            let (a, b) = (teacher.predict(&x).unwrap(), student.predict(&x).unwrap());
            a.values().iter().zip(b.values()).all(|(p, q)| p.to_bits() == q.to_bits())
        })
        .count();
    pass &= equal == 10;
    details.push(format!("teacher_init outputs bitwise equal on {equal}/10 inputs"));
    (pass, details.join("; "))
}

fn fusion_properties(_: &mut Shared) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let w = FusionWeights::new(1.0, 2.0).unwrap();
    let mut held = 0;
    for _ in 0..1000 {
        let k = rng.random_range(2..12);
        let s: Vec<f64> = (0..k).map(|_| rng.random()).collect();
        let t: Vec<f64> = (0..k).map(|_| rng.random()).collect();
        let base = fuse(&s, &t, &w).unwrap().1;
        let a = 10f64.powf(rng.random_range(-3.0..3.0));
        let b = 10f64.powf(rng.random_range(-3.0..3.0));
        let scaled_w = FusionWeights::new(a, 2.0 * a).unwrap();
        let s2: Vec<f64> = s.iter().map(|v| v * b).collect();
        let t2: Vec<f64> = t.iter().map(|v| v * b).collect();
        if fuse(&s, &t, &scaled_w).unwrap().1 == base && fuse(&s2, &t2, &w).unwrap().1 == base {
            held += 1;
        }
    }
    (held == 1000, format!("argmax invariant on {held}/1000 random score pairs, weights (1,2)"))
}

fn round_trips(_: &mut Shared) -> Outcome {
    let dir = out_dir();
    let mut problems = Vec::new();

    let (_, clips) = generate_motionshapes(13, 1, 64, 24).unwrap();
    let cc = encode(&clips[0], &GopConfig::default()).unwrap();
    let path = dir.join("roundtrip.mvs");
    write_container(&cc, &path).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    let back = read_container(&path).unwrap();
    if back != cc || container_to_bytes(&back).unwrap() != bytes {
        problems.push("MVS1 not byte-exact".to_string());
    }
    let mut flipped = bytes.clone();
    flipped[bytes.len() / 2] ^= 0x10;
    let mvs_errors = [
        matches!(container_from_bytes(&flipped), Err(VideoError::ChecksumMismatch { .. })),
        matches!(container_from_bytes(&bytes[..bytes.len() - 100]), Err(VideoError::TruncatedFrame { .. })),
        matches!(container_from_bytes(&bytes[..12]), Err(VideoError::TruncatedHeader)),
        matches!(container_from_bytes(b"RIFF0000"), Err(VideoError::BadMagic)),
    ];
    if !mvs_errors.iter().all(|&b| b) {
        problems.push(format!("MVS1 corruption errors {mvs_errors:?}"));
    }

    let net = build_mini_two_stream::<f32>(64, 20, 8, Activation::Prelu, 9).unwrap();
    let path = dir.join("roundtrip.nnw");
    write_checkpoint(&net, &path).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    let back = read_checkpoint(&path).unwrap();
    if checkpoint_to_bytes(&back).unwrap() != bytes || back.checksum() != net.checksum() {
        problems.push("NNW1 not byte-exact".to_string());
    }
    let mut flipped = bytes.clone();
    flipped[bytes.len() / 2] ^= 0x10;
    let nnw_errors = [
        matches!(checkpoint_from_bytes(&flipped), Err(CheckpointError::ChecksumMismatch { .. })),
        matches!(checkpoint_from_bytes(&bytes[..bytes.len() / 3]), Err(CheckpointError::ChecksumMismatch { .. })),
        // cut body re-sealed with a valid trailer reaches the parser
        matches!(checkpoint_from_bytes(&resealed(&bytes[..bytes.len() / 3])), Err(CheckpointError::Truncated(_))),
        matches!(checkpoint_from_bytes(b"MVS1...."), Err(CheckpointError::BadMagic)),
    ];
    if !nnw_errors.iter().all(|&b| b) {
        problems.push(format!("NNW1 corruption errors {nnw_errors:?}"));
    }
    (
        problems.is_empty(),
        if problems.is_empty() {
            "MVS1 and NNW1 byte-exact; checksum, truncation and magic corruption reported as typed errors".into()
        } else {
            problems.join("; ")
        },
    )
}

fn resealed(body: &[u8]) -> Vec<u8> {
    let mut out = body.to_vec();
    out.extend_from_slice(&crc32fast::hash(body).to_le_bytes());
    out
}

fn realtime_gate(_: &mut Shared) -> Outcome {
    let (_, clips) = generate_motionshapes(14, 1, 64, 24).unwrap();
    let temporal = build_mini_two_stream::<f32>(64, 20, 8, Activation::Prelu, 1).unwrap();
    let spatial = build_mini_two_stream::<f32>(64, 3, 8, Activation::Relu, 2).unwrap();
    let workload = Workload::new(&clips, GopConfig::default())
        .unwrap()
        .with_networks(Some(&temporal), Some(&spatial));
    let report = bench_pipeline(&workload, 1, 5, "acceptance").unwrap();
    std::fs::write(out_dir().join("bench.txt"), report.render_table()).unwrap();
    let total = report.total_fps;
    (
        total > REALTIME_FPS,
        format!("end-to-end {total:.1} fps at 64×64, single thread (threshold {REALTIME_FPS} fps)"),
    )
}
