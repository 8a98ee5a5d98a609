//! Command-line entry point.

mod viz;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use serde::Serialize;

use crate::bench::{bench_pipeline, Workload};
use crate::distill::Strategy;
use crate::motion::{motion_field_pgm, write_pgm};
use crate::nn::{read_checkpoint, write_checkpoint};
use crate::pipeline::{
    evaluate, prepare_clips, run_experiment, temperature_sweep, train_stream, train_student_run, ExperimentConfig,
    FlowCache, FusionWeights, Modality, PreparedClip, Scorer, StreamModel,
};
use crate::videoio::{
    decode_motion_vectors, encode, generate_with, read_container, read_dataset, read_y4m, write_container,
    write_dataset, MotionShapesParams, Split,
};

pub use viz::{filter_mosaic, side_by_side, VizError, TILES_PER_ROW};

type BoxError = Box<dyn std::error::Error + Send + Sync>;

#[derive(Parser, Debug, Serialize)]
#[command(name = "emv", version, about = "Compressed-domain action recognition with motion-vector CNNs")]
struct Cli {
    /// Base random seed.
    #[arg(long, global = true, default_value_t = 1)]
    seed: u64,
    /// Directory that receives every artifact of the run.
    #[arg(long, global = true, default_value = "runs")]
    out_dir: PathBuf,
    /// JSON experiment configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads (default: 1 for bench, all cores otherwise).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug, Serialize)]
enum Command {
    /// Generate the MotionShapes dataset.
    Dataset(DatasetArgs),
    /// Encode Y4M clips into MVS1 containers.
    Encode(EncodeArgs),
    /// Extract motion-vector fields from an MVS1 container as PGM images.
    Decode(DecodeArgs),
    /// Train the optical-flow teacher (or another stream from scratch).
    TrainTeacher(TrainTeacherArgs),
    /// Train one motion-vector student.
    TrainStudent(TrainStudentArgs),
    /// Run the strategy × seed matrix and optional temperature sweep.
    Experiment(ExperimentArgs),
    /// Evaluate a stream or a fused two-stream pair on the test split.
    Eval(EvalArgs),
    /// Measure per-stage and end-to-end throughput.
    Bench(BenchArgs),
    /// Render first-layer filters as a PGM mosaic.
    VizFilters(VizArgs),
}

#[derive(Args, Debug, Serialize)]
struct DatasetArgs {
    #[arg(long, default_value_t = 50)]
    clips_per_class: usize,
    #[arg(long, default_value_t = 64)]
    resolution: usize,
    #[arg(long, default_value_t = 24)]
    clip_length: usize,
    /// Sensor noise standard deviation in grey levels.
    #[arg(long)]
    noise: Option<f32>,
}

/// Settings shared by every command that builds network inputs.
#[derive(Args, Debug, Serialize, Clone)]
struct StreamArgs {
    /// Dataset directory written by `emv dataset`.
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    gop_length: Option<usize>,
    #[arg(long)]
    block_size: Option<usize>,
    /// Frames per temporal stack.
    #[arg(long)]
    stack: Option<usize>,
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Evaluation window stride in frames.
    #[arg(long)]
    stride: Option<usize>,
}

#[derive(Args, Debug, Serialize)]
struct EncodeArgs {
    /// Y4M clips to encode.
    #[arg(long, required = true, num_args = 1..)]
    input: Vec<PathBuf>,
    #[arg(long, default_value_t = 8)]
    gop_length: usize,
    #[arg(long, default_value_t = 16)]
    block_size: usize,
}

#[derive(Args, Debug, Serialize)]
struct DecodeArgs {
    #[arg(long)]
    input: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
enum StreamKind {
    Flow,
    Appearance,
    Mv,
}

impl StreamKind {
    fn modality(self) -> Modality {
        match self {
            StreamKind::Flow => Modality::Flow,
            StreamKind::Appearance => Modality::Appearance,
            StreamKind::Mv => Modality::MotionVectors,
        }
    }

    fn stem(self) -> &'static str {
        match self {
            StreamKind::Flow => "teacher",
            StreamKind::Appearance => "spatial",
            StreamKind::Mv => "mv_scratch",
        }
    }
}

#[derive(Args, Debug, Serialize)]
struct TrainTeacherArgs {
    #[command(flatten)]
    stream: StreamArgs,
    /// Input of the trained network.
    #[arg(long, value_enum, default_value = "flow")]
    input: StreamKind,
}

/// Ground-truth weight: `auto` (Temp²) or a fixed non-negative number.
#[derive(Clone, Copy, Debug, Serialize)]
struct WeightArg(Option<f64>);

fn parse_weight(s: &str) -> Result<WeightArg, String> {
    if s == "auto" {
        return Ok(WeightArg(None));
    }
    let w: f64 = s.parse().map_err(|_| format!("`{s}` is neither `auto` nor a number"))?;
    if w >= 0.0 && w.is_finite() {
        Ok(WeightArg(Some(w)))
    } else {
        Err(format!("weight {w} must be non-negative"))
    }
}

fn parse_fusion(s: &str) -> Result<FusionWeights, String> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|_| format!("bad fusion weight `{p}`")))
        .collect::<Result<_, _>>()?;
    match parts[..] {
        [s, t] => FusionWeights::new(s, t).map_err(|e| e.to_string()),
        _ => Err("expected two weights: spatial,temporal".into()),
    }
}

#[derive(Args, Debug, Serialize)]
struct DistillArgs {
    #[arg(long)]
    temp: Option<f64>,
    /// Ground-truth weight: `auto` for Temp² or a number.
    #[arg(long, value_parser = parse_weight)]
    w: Option<WeightArg>,
}

#[derive(Args, Debug, Serialize)]
struct TrainStudentArgs {
    #[command(flatten)]
    stream: StreamArgs,
    #[command(flatten)]
    distill: DistillArgs,
    #[arg(long, default_value = "ti+st")]
    strategy: Strategy,
    /// Teacher checkpoint; required unless the strategy is `scratch`.
    #[arg(long)]
    teacher: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct ExperimentArgs {
    #[command(flatten)]
    stream: StreamArgs,
    #[command(flatten)]
    distill: DistillArgs,
    #[arg(long, value_delimiter = ',', default_value = "scratch,st,ti,ti+st")]
    strategies: Vec<Strategy>,
    #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
    seeds: Vec<u64>,
    /// Reuse a trained teacher instead of training one.
    #[arg(long)]
    teacher: Option<PathBuf>,
    /// Temperatures for a TI+ST sweep with w = Temp² (e.g. `1,2,3`).
    #[arg(long, value_delimiter = ',')]
    sweep_temps: Vec<f64>,
}

#[derive(Args, Debug, Serialize)]
struct EvalArgs {
    #[command(flatten)]
    stream: StreamArgs,
    /// Temporal network checkpoint.
    #[arg(long)]
    temporal: PathBuf,
    /// Input of the temporal network.
    #[arg(long, value_enum, default_value = "mv")]
    input: StreamKind,
    /// Spatial checkpoint; enables two-stream fusion.
    #[arg(long)]
    spatial: Option<PathBuf>,
    #[arg(long, value_parser = parse_fusion, default_value = "1,2")]
    fusion: FusionWeights,
}

#[derive(Args, Debug, Serialize)]
struct BenchArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    temporal: PathBuf,
    #[arg(long)]
    spatial: PathBuf,
    /// Number of test clips in the workload.
    #[arg(long, default_value_t = 8)]
    clips: usize,
    #[arg(long, default_value_t = 5)]
    iters: usize,
    #[arg(long, default_value_t = 1)]
    warmup: usize,
    #[arg(long, default_value_t = 8)]
    gop_length: usize,
    #[arg(long, default_value_t = 16)]
    block_size: usize,
    #[arg(long, default_value_t = 10)]
    stack: usize,
    #[arg(long, value_parser = parse_fusion, default_value = "1,2")]
    fusion: FusionWeights,
    /// Process clips in parallel.
    #[arg(long)]
    parallel: bool,
    /// Free-form hardware description for the report.
    #[arg(long, default_value = "unspecified")]
    hardware_note: String,
}

#[derive(Args, Debug, Serialize)]
struct VizArgs {
    /// One or more checkpoints; several are also joined side by side.
    #[arg(long, required = true, num_args = 1..)]
    checkpoint: Vec<PathBuf>,
    /// Layer index of the convolution to render.
    #[arg(long, default_value_t = 0)]
    layer: usize,
}

/// Parses `argv`, runs the subcommand and returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).try_init();
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = e.source();
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            1
        }
    }
}

fn execute(cli: &Cli) -> Result<(), BoxError> {
    let default_threads = if matches!(cli.command, Command::Bench(_)) { 1 } else { 0 };
    let threads = cli.threads.unwrap_or(default_threads);
    let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    let base = load_config(cli.config.as_deref())?;
    std::fs::create_dir_all(&cli.out_dir)?;
    match &cli.command {
        Command::Dataset(a) => cmd_dataset(cli, a),
        Command::Encode(a) => cmd_encode(cli, a),
        Command::Decode(a) => cmd_decode(cli, a),
        Command::TrainTeacher(a) => cmd_train_teacher(cli, a, base),
        Command::TrainStudent(a) => cmd_train_student(cli, a, base),
        Command::Experiment(a) => cmd_experiment(cli, a, base),
        Command::Eval(a) => cmd_eval(cli, a, base),
        Command::Bench(a) => cmd_bench(cli, a),
        Command::VizFilters(a) => cmd_viz(cli, a),
    }
}

fn load_config(path: Option<&Path>) -> Result<ExperimentConfig, BoxError> {
    Ok(match path {
        Some(p) => serde_json::from_slice(&std::fs::read(p)?)?,
        None => ExperimentConfig::default(),
    })
}

/// Records the command line and the fully resolved configuration.
fn write_manifest(cli: &Cli, name: &str, resolved: &impl Serialize) -> Result<(), BoxError> {
    #[derive(Serialize)]
    struct Manifest<'a, R> {
        command: &'a Cli,
        resolved: &'a R,
    }
    let path = cli.out_dir.join(format!("{name}_config.json"));
    std::fs::write(path, serde_json::to_vec_pretty(&Manifest { command: cli, resolved })?)?;
    Ok(())
}

fn resolve(mut cfg: ExperimentConfig, s: &StreamArgs, d: Option<&DistillArgs>) -> Result<ExperimentConfig, BoxError> {
    if let Some(v) = s.gop_length {
        cfg.gop.gop_length = v;
    }
    if let Some(v) = s.block_size {
        cfg.gop.block_size = v;
    }
    if let Some(v) = s.stack {
        cfg.stack_length = v;
    }
    if let Some(v) = s.steps {
        cfg.training.steps = v;
    }
    if let Some(v) = s.batch_size {
        cfg.training.batch_size = v;
    }
    if let Some(v) = s.stride {
        cfg.eval_stride = v;
    }
    if let Some(d) = d {
        if let Some(t) = d.temp {
            cfg.temperature = t;
        }
        if let Some(WeightArg(w)) = d.w {
            cfg.weight = w;
        }
    }
    cfg.gop.validate()?;
    cfg.augment.validate()?;
    cfg.fusion.validate()?;
    cfg.distill(Strategy::Combined)?;
    Ok(cfg)
}

fn load_prepared(cli: &Cli, s: &StreamArgs, cfg: &ExperimentConfig) -> Result<Vec<PreparedClip>, BoxError> {
    let (manifest, clips) = read_dataset(&s.dataset)?;
    let cache = FlowCache::new(cli.out_dir.join("flow_cache"))?;
    info!("preparing {} clips", clips.len());
    Ok(prepare_clips(&manifest, &clips, &cfg.gop, &cfg.flow, cfg.stack_length, Some(&cache))?)
}

fn cmd_dataset(cli: &Cli, a: &DatasetArgs) -> Result<(), BoxError> {
    let mut params = MotionShapesParams::new(cli.seed, a.clips_per_class, a.resolution, a.clip_length);
    if let Some(n) = a.noise {
        params.noise_sigma = n;
    }
    let (manifest, clips) = generate_with(&params)?;
    let dir = cli.out_dir.join("dataset");
    write_dataset(&dir, &manifest, &clips)?;
    write_manifest(cli, "dataset", &params)?;
    println!(
        "{} clips ({} train / {} test) written to {}",
        clips.len(),
        manifest.ids(Split::Train).len(),
        manifest.ids(Split::Test).len(),
        dir.display()
    );
    Ok(())
}

fn cmd_encode(cli: &Cli, a: &EncodeArgs) -> Result<(), BoxError> {
    let gop = crate::videoio::GopConfig {
        gop_length: a.gop_length,
        block_size: a.block_size,
        ..Default::default()
    };
    gop.validate()?;
    let dir = cli.out_dir.join("encoded");
    std::fs::create_dir_all(&dir)?;
    for path in &a.input {
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("clip");
        let clip = read_y4m(path, stem, 0)?;
        write_container(&encode(&clip, &gop)?, dir.join(format!("{stem}.mvs")))?;
        println!("{} -> {}", path.display(), dir.join(format!("{stem}.mvs")).display());
    }
    write_manifest(cli, "encode", &gop)
}

fn cmd_decode(cli: &Cli, a: &DecodeArgs) -> Result<(), BoxError> {
    let cc = read_container(&a.input)?;
    let fields = decode_motion_vectors(&cc)?;
    let stem = a.input.file_stem().and_then(|s| s.to_str()).unwrap_or("clip");
    let dir = cli.out_dir.join("decoded");
    std::fs::create_dir_all(&dir)?;
    for (t, f) in fields.iter().enumerate() {
        for (ch, name) in [(0, "dx"), (1, "dy")] {
            write_pgm(&motion_field_pgm(f, ch), dir.join(format!("{stem}_f{t:03}_{name}.pgm")))?;
        }
    }
    write_manifest(cli, "decode", &cc.header.gop)?;
    println!("{} frames decoded to {}", fields.len(), dir.display());
    Ok(())
}

fn cmd_train_teacher(cli: &Cli, a: &TrainTeacherArgs, base: ExperimentConfig) -> Result<(), BoxError> {
    let cfg = resolve(base, &a.stream, None)?;
    write_manifest(cli, "train-teacher", &cfg)?;
    let clips = load_prepared(cli, &a.stream, &cfg)?;
    let modality = a.input.modality();
    let (net, log) = train_stream(&clips, modality, &cfg, cli.seed)?;
    let stem = a.input.stem();
    write_checkpoint(&net, cli.out_dir.join(format!("{stem}.nnw")))?;
    log.write_csv(cli.out_dir.join(format!("{stem}_log.csv")))?;
    report_eval(cli, stem, &Scorer::Single(StreamModel { net: &net, modality }), &clips, &cfg)
}

fn report_eval(cli: &Cli, stem: &str, scorer: &Scorer, clips: &[PreparedClip], cfg: &ExperimentConfig) -> Result<(), BoxError> {
    let test: Vec<&PreparedClip> = clips.iter().filter(|c| c.split == Split::Test).collect();
    let report = evaluate(scorer, &test, &cfg.input_spec(), cfg.eval_stride)?;
    std::fs::write(cli.out_dir.join(format!("{stem}_eval.json")), serde_json::to_vec_pretty(&report)?)?;
    println!(
        "{stem}: test accuracy {:.1}% over {} clips",
        100.0 * report.overall_accuracy,
        report.clips_evaluated
    );
    Ok(())
}

fn cmd_train_student(cli: &Cli, a: &TrainStudentArgs, base: ExperimentConfig) -> Result<(), BoxError> {
    let cfg = resolve(base, &a.stream, Some(&a.distill))?;
    let teacher = match (&a.teacher, a.strategy.needs_teacher()) {
        (Some(p), true) => Some(read_checkpoint(p)?),
        (None, true) => return Err(format!("--teacher is required for strategy {}", a.strategy).into()),
        (_, false) => None,
    };
    write_manifest(cli, "train-student", &cfg)?;
    let clips = load_prepared(cli, &a.stream, &cfg)?;
    let (net, log) = train_student_run(a.strategy, teacher.as_ref(), &clips, &cfg, cli.seed)?;
    let stem = format!("student_{}", a.strategy.cli_name().replace('+', "_"));
    write_checkpoint(&net, cli.out_dir.join(format!("{stem}.nnw")))?;
    log.write_csv(cli.out_dir.join(format!("{stem}_log.csv")))?;
    let scorer = Scorer::Single(StreamModel {
        net: &net,
        modality: Modality::MotionVectors,
    });
    report_eval(cli, &stem, &scorer, &clips, &cfg)
}

fn cmd_experiment(cli: &Cli, a: &ExperimentArgs, base: ExperimentConfig) -> Result<(), BoxError> {
    let cfg = resolve(base, &a.stream, Some(&a.distill))?;
    let teacher = a.teacher.as_ref().map(read_checkpoint).transpose()?;
    write_manifest(cli, "experiment", &cfg)?;
    let clips = load_prepared(cli, &a.stream, &cfg)?;
    let (report, teacher) = run_experiment(&clips, &a.strategies, &a.seeds, &cfg, teacher, cli.seed, Some(&cli.out_dir))?;
    print!("{}", report.render_table());
    if !a.sweep_temps.is_empty() {
        let settings: Vec<(f64, Option<f64>)> = a.sweep_temps.iter().map(|&t| (t, None)).collect();
        let sweep = temperature_sweep(&clips, &teacher, Strategy::Combined, &settings, &a.seeds, &cfg)?;
        std::fs::write(cli.out_dir.join("temperature_sweep.csv"), sweep.to_csv())?;
        std::fs::write(cli.out_dir.join("temperature_sweep.txt"), sweep.render_table())?;
        print!("{}", sweep.render_table());
    }
    Ok(())
}

fn cmd_eval(cli: &Cli, a: &EvalArgs, base: ExperimentConfig) -> Result<(), BoxError> {
    let mut cfg = resolve(base, &a.stream, None)?;
    cfg.fusion = a.fusion;
    let temporal = read_checkpoint(&a.temporal)?;
    let spatial = a.spatial.as_ref().map(read_checkpoint).transpose()?;
    write_manifest(cli, "eval", &cfg)?;
    let clips = load_prepared(cli, &a.stream, &cfg)?;
    let t = StreamModel {
        net: &temporal,
        modality: a.input.modality(),
    };
    let scorer = match &spatial {
        Some(s) => Scorer::TwoStream {
            spatial: StreamModel {
                net: s,
                modality: Modality::Appearance,
            },
            temporal: t,
            weights: cfg.fusion,
        },
        None => Scorer::Single(t),
    };
    report_eval(cli, "eval", &scorer, &clips, &cfg)
}

fn cmd_bench(cli: &Cli, a: &BenchArgs) -> Result<(), BoxError> {
    let (manifest, clips) = read_dataset(&a.dataset)?;
    let test: Vec<_> = clips
        .into_iter()
        .filter(|c| manifest.splits.get(&c.clip_id) == Some(&Split::Test))
        .take(a.clips.max(1))
        .collect();
    let temporal = read_checkpoint(&a.temporal)?;
    let spatial = read_checkpoint(&a.spatial)?;
    let gop = crate::videoio::GopConfig {
        gop_length: a.gop_length,
        block_size: a.block_size,
        ..Default::default()
    };
    write_manifest(cli, "bench", &gop)?;
    let mut workload = Workload::new(&test, gop)?.with_networks(Some(&temporal), Some(&spatial));
    workload.stack_length = a.stack;
    workload.fusion = a.fusion;
    workload.parallel = a.parallel;
    let report = bench_pipeline(&workload, a.warmup, a.iters, &a.hardware_note)?;
    std::fs::write(cli.out_dir.join("bench.txt"), report.render_table())?;
    std::fs::write(cli.out_dir.join("bench.csv"), report.to_csv())?;
    print!("{}", report.render_table());
    Ok(())
}

fn cmd_viz(cli: &Cli, a: &VizArgs) -> Result<(), BoxError> {
    let mut mosaics = Vec::new();
    for path in &a.checkpoint {
        let net = read_checkpoint(path)?;
        let mosaic = filter_mosaic(&net, a.layer)?;
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("net");
        let out = cli.out_dir.join(format!("{stem}_layer{}_filters.pgm", a.layer));
        write_pgm(&mosaic, &out)?;
        println!("{}", out.display());
        mosaics.push(mosaic);
    }
    if mosaics.len() > 1 {
        let out = cli.out_dir.join(format!("filters_layer{}_comparison.pgm", a.layer));
        write_pgm(&side_by_side(&mosaics), &out)?;
        println!("{}", out.display());
    }
    write_manifest(cli, "viz-filters", &a.layer)
}
