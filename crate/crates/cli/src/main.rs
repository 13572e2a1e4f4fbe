//! `panfuse`: panoptic fusion, the combine baseline, evaluation, fixture
//! synthesis, benchmarks and rendering from the command line.
//!
//! Exit codes: 0 success, 1 internal failure, 2 usage or input error.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use panoptic_fusion::codec::{
    annotation, decode_png, decode_png_ids, encode_png, PanopticAnnotation, PanopticDocument,
};
use panoptic_fusion::combine::{run_combine, CombineConfig, DEFAULT_OVERLAP};
use panoptic_fusion::harness::{bench, bench_inputs, generate, synthesize_inputs, BenchScene, Pipeline, SynthParams};
use panoptic_fusion::pruning::{proposals_from_json, proposals_to_json};
use panoptic_fusion::render::render_png;
use panoptic_fusion::upst::RawTensor;
use panoptic_fusion::{
    aggregate, match_and_score, run_fusion, CategorySet, FusionConfig, ImageStats, PanopticMap, PruningConfig,
};
use rayon::prelude::*;

const PNG_NAME: &str = "panoptic.png";
const JSON_NAME: &str = "panoptic.json";

#[derive(Parser)]
#[command(name = "panfuse", version, about = "Panoptic segmentation fusion toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fuse semantic logits and instance proposals into a panoptic map.
    Fuse(PipelineArgs),
    /// Run the heuristic combine baseline on the same inputs.
    Combine(PipelineArgs),
    /// Score predictions against ground truth (PQ, SQ, RQ, mIoU).
    Eval(EvalArgs),
    /// Write a synthetic scene: logits, proposals, categories and ground truth.
    Synth(SynthArgs),
    /// Time the post-network pipelines on a generated scene.
    Bench(BenchArgs),
    /// Colourize a panoptic PNG.
    Render(RenderArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Args)]
struct PipelineArgs {
    /// Semantic logits as a C x H x W UPST file.
    #[arg(long)]
    logits: PathBuf,
    /// Instance proposals as JSON.
    #[arg(long)]
    proposals: PathBuf,
    /// Category list as JSON (a bare array or `{"categories": [...]}`).
    #[arg(long)]
    categories: PathBuf,
    /// Stuff segments smaller than this become void.
    #[arg(long, default_value_t = 4096)]
    min_stuff_area: u64,
    /// Unknown channel (fusion only).
    #[arg(long, value_enum, default_value = "on")]
    unknown: Switch,
    #[arg(long, default_value_t = 0.5)]
    nms_iou: f64,
    /// Proposals need a score strictly above this.
    #[arg(long, default_value_t = 0.6)]
    min_score: f64,
    /// Overlap-over-self above which a mask is discarded during pruning.
    #[arg(long, default_value_t = 0.3)]
    mask_overlap: f64,
    /// Sigmoid threshold for binarizing masks.
    #[arg(long, default_value_t = 0.5)]
    binarize: f64,
    /// Overlap threshold of the combine canvas.
    #[arg(long, default_value_t = DEFAULT_OVERLAP)]
    combine_overlap: f64,
    #[arg(long, default_value_t = 0)]
    image_id: u64,
    /// Output directory for panoptic.png and panoptic.json.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Directory with panoptic.json and the PNGs it names.
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    /// Category list; defaults to the categories of the ground-truth document.
    #[arg(long)]
    categories: Option<PathBuf>,
    /// Worker threads (0 = all cores).
    #[arg(long, default_value_t = 0)]
    jobs: usize,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Image size as HxW.
    #[arg(long, default_value = "64x64", value_parser = parse_dims)]
    dims: (usize, usize),
    /// Stuff and thing class counts as S,T.
    #[arg(long, default_value = "3,2", value_parser = parse_classes)]
    classes: (usize, usize),
    #[arg(long, default_value_t = 4)]
    instances: usize,
    /// Gaussian noise on the semantic logits.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    /// Box jitter as a fraction of the box side.
    #[arg(long, default_value_t = 0.0)]
    jitter: f64,
    #[arg(long, default_value_t = 4.0)]
    scale: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum BenchPipeline {
    Fusion,
    Combine,
    Both,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, value_enum, default_value = "both")]
    pipeline: BenchPipeline,
    #[arg(long, default_value = "1024x2048", value_parser = parse_dims)]
    dims: (usize, usize),
    #[arg(long, default_value_t = 50)]
    stuff: usize,
    #[arg(long, default_value_t = 8)]
    things: usize,
    #[arg(long, default_value_t = 30)]
    instances: usize,
    #[arg(long, default_value_t = 10)]
    repeats: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct RenderArgs {
    /// Panoptic PNG to colourize.
    #[arg(long)]
    panoptic: PathBuf,
    /// Optional annotation document; when given, the PNG is checked against it.
    #[arg(long)]
    json: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

fn parse_dims(s: &str) -> Result<(usize, usize), String> {
    let (h, w) = s.split_once(['x', 'X']).ok_or("expected HxW")?;
    let parse = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("{v:?}: {e}"));
    let dims = (parse(h)?, parse(w)?);
    if dims.0 == 0 || dims.1 == 0 {
        return Err("dims must be positive".into());
    }
    Ok(dims)
}

fn parse_classes(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s.split_once(',').ok_or("expected S,T")?;
    let parse = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("{v:?}: {e}"));
    Ok((parse(a)?, parse(b)?))
}

/// A failure together with its exit code.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

type CliResult<T> = Result<T, Failure>;

fn input(error: impl Into<anyhow::Error>) -> Failure {
    Failure { code: 2, error: error.into() }
}

fn internal(error: impl Into<anyhow::Error>) -> Failure {
    Failure { code: 1, error: error.into() }
}

/// Library errors caused by bad data are input errors; the rest are internal.
fn from_lib(error: panoptic_fusion::Error) -> Failure {
    use panoptic_fusion::Error as E;
    match error {
        E::InvalidArgument(_) | E::Format(_) | E::UnknownSegmentIds(_) | E::Json(_) | E::PngDecode(_) => {
            input(error)
        }
        E::Io(_) | E::PngEncode(_) => internal(error),
    }
}

fn read(path: &Path) -> CliResult<Vec<u8>> {
    fs::read(path).with_context(|| format!("reading {}", path.display())).map_err(input)
}

fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display())).map_err(input)
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> CliResult<()> {
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display())).map_err(internal)
}

fn make_dir(path: &Path) -> CliResult<()> {
    fs::create_dir_all(path).with_context(|| format!("creating {}", path.display())).map_err(internal)
}

/// Prints to stdout; a closed pipe (`panfuse eval ... | head`) is not an error.
fn emit(text: &str) -> CliResult<()> {
    let mut out = io::stdout().lock();
    match writeln!(out, "{text}") {
        Err(e) if e.kind() != io::ErrorKind::BrokenPipe => Err(internal(e)),
        _ => Ok(()),
    }
}

fn load_categories(path: &Path) -> CliResult<CategorySet> {
    CategorySet::from_json(&read_text(path)?)
        .with_context(|| format!("parsing {}", path.display()))
        .map_err(input)
}

fn write_panoptic(dir: &Path, map: &PanopticMap, categories: &CategorySet, image_id: u64) -> CliResult<()> {
    make_dir(dir)?;
    write(&dir.join(PNG_NAME), encode_png(map).map_err(from_lib)?)?;
    let doc = PanopticDocument {
        annotations: vec![annotation(map, categories, image_id, PNG_NAME)],
        categories: categories.categories().to_vec(),
    };
    write(&dir.join(JSON_NAME), doc.to_json())
}

fn run_pipeline(args: &PipelineArgs, fusion: bool) -> CliResult<()> {
    let categories = load_categories(&args.categories)?;
    let logits = RawTensor::from_bytes(&read(&args.logits)?)
        .and_then(RawTensor::into_logits)
        .with_context(|| format!("parsing {}", args.logits.display()))
        .map_err(input)?;
    let proposals = proposals_from_json(&read_text(&args.proposals)?, &categories)
        .with_context(|| format!("parsing {}", args.proposals.display()))
        .map_err(input)?;
    let pruning = PruningConfig {
        nms_iou: args.nms_iou,
        min_score: args.min_score,
        overlap: args.mask_overlap,
        binarize: args.binarize,
    };
    let map = if fusion {
        let config = FusionConfig {
            pruning,
            enable_unknown: args.unknown == Switch::On,
            min_stuff_area: args.min_stuff_area,
        };
        run_fusion(&logits, &categories, &proposals, &config).map_err(from_lib)?.map
    } else {
        let config = CombineConfig {
            pruning,
            overlap: args.combine_overlap,
            min_stuff_area: args.min_stuff_area,
        };
        run_combine(&logits, &categories, &proposals, &config).map_err(from_lib)?
    };
    write_panoptic(&args.out, &map, &categories, args.image_id)
}

fn load_document(dir: &Path) -> CliResult<PanopticDocument> {
    let path = dir.join(JSON_NAME);
    PanopticDocument::from_json(&read_text(&path)?)
        .with_context(|| format!("parsing {}", path.display()))
        .map_err(input)
}

fn run_eval(args: &EvalArgs) -> CliResult<()> {
    let gt_doc = load_document(&args.gt)?;
    let pred_doc = load_document(&args.pred)?;
    let categories = match &args.categories {
        Some(path) => load_categories(path)?,
        None => CategorySet::new(gt_doc.categories.clone()).map_err(from_lib)?,
    };
    let mut pairs = Vec::with_capacity(gt_doc.annotations.len());
    for g in &gt_doc.annotations {
        let p = pred_doc
            .annotations
            .iter()
            .find(|p| p.image_id == g.image_id)
            .ok_or_else(|| input(anyhow!("no prediction for image {} ({})", g.image_id, g.file_name)))?;
        pairs.push((p, g));
    }
    let score = |(p, g): &(&PanopticAnnotation, &PanopticAnnotation)| {
        let load = |dir: &Path, a: &PanopticAnnotation| -> CliResult<PanopticMap> {
            let path = dir.join(&a.file_name);
            decode_png(&read(&path)?, &a.segments_info, &categories)
                .with_context(|| format!("decoding {}", path.display()))
                .map_err(input)
        };
        let pred = load(&args.pred, p)?;
        let gt = load(&args.gt, g)?;
        match_and_score(&pred, &gt, &categories)
            .with_context(|| format!("image {}", g.image_id))
            .map_err(input)
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.jobs)
        .build()
        .map_err(internal)?;
    // collect keeps image order, so the reduction is deterministic
    let stats: Vec<ImageStats> = pool.install(|| pairs.par_iter().map(score).collect::<CliResult<_>>())?;
    emit(&aggregate(&stats, &categories).to_json())
}

fn run_synth(args: &SynthArgs) -> CliResult<()> {
    let (h, w) = args.dims;
    let (n_stuff, n_thing) = args.classes;
    let gt = generate(args.seed, h, w, n_stuff, n_thing, args.instances).map_err(from_lib)?;
    let params = SynthParams {
        logit_scale: args.scale,
        noise_sigma: args.noise,
        box_jitter: args.jitter,
        seed: args.seed,
    };
    let inputs = synthesize_inputs::<f32>(&gt, &params).map_err(from_lib)?;
    make_dir(&args.out)?;
    write(&args.out.join("logits.upst"), RawTensor::from(&inputs.logits).to_bytes().map_err(internal)?)?;
    write(&args.out.join("proposals.json"), proposals_to_json(&inputs.proposals))?;
    write(&args.out.join("categories.json"), gt.categories.to_json())?;
    write(
        &args.out.join("scene.json"),
        serde_json::to_string_pretty(&gt.spec).map_err(internal)?,
    )?;
    write_panoptic(&args.out.join("gt"), &gt.panoptic, &gt.categories, 0)
}

fn run_bench(args: &BenchArgs) -> CliResult<()> {
    let scene = BenchScene {
        height: args.dims.0,
        width: args.dims.1,
        n_stuff: args.stuff,
        n_thing: args.things,
        instances: args.instances,
        seed: args.seed,
    };
    let (categories, inputs) = bench_inputs(&scene).map_err(from_lib)?;
    let pipelines: &[Pipeline] = match args.pipeline {
        BenchPipeline::Fusion => &[Pipeline::Fusion],
        BenchPipeline::Combine => &[Pipeline::Combine],
        BenchPipeline::Both => &[Pipeline::Fusion, Pipeline::Combine],
    };
    let results = pipelines
        .iter()
        .map(|&p| bench(p, &categories, &inputs, args.repeats))
        .collect::<Result<Vec<_>, _>>()
        .map_err(from_lib)?;
    let mut out = serde_json::json!({ "scene": scene, "results": results });
    if let [fusion, combine] = &results[..] {
        out["combine_over_fusion"] = serde_json::json!(combine.mean_ms / fusion.mean_ms);
    }
    emit(&serde_json::to_string_pretty(&out).map_err(internal)?)
}

fn run_render(args: &RenderArgs) -> CliResult<()> {
    let bytes = read(&args.panoptic)?;
    let map = match &args.json {
        Some(path) => {
            let doc = PanopticDocument::from_json(&read_text(path)?)
                .with_context(|| format!("parsing {}", path.display()))
                .map_err(input)?;
            let categories = CategorySet::new(doc.categories.clone()).map_err(from_lib)?;
            let name = args.panoptic.file_name().and_then(|n| n.to_str()).unwrap_or_default();
            let ann = doc
                .annotations
                .iter()
                .find(|a| a.file_name == name)
                .or(doc.annotations.first())
                .ok_or_else(|| input(anyhow!("{} has no annotations", path.display())))?;
            decode_png(&bytes, &ann.segments_info, &categories).map_err(from_lib)?
        }
        None => {
            let ids = decode_png_ids(&bytes).map_err(from_lib)?;
            PanopticMap::from_ids_with(ids, |_| 0).map_err(from_lib)?
        }
    };
    write(&args.out, render_png(&map).map_err(from_lib)?)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Fuse(args) => run_pipeline(args, true),
        Command::Combine(args) => run_pipeline(args, false),
        Command::Eval(args) => run_eval(args),
        Command::Synth(args) => run_synth(args),
        Command::Bench(args) => run_bench(args),
        Command::Render(args) => run_render(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure { code, error }) => {
            eprintln!("panfuse: {error:#}");
            ExitCode::from(code)
        }
    }
}
