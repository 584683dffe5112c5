//! `detbound` command-line front end.

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use detbound_core::data::{load_classifier_outputs, load_dataset, load_detections};
use detbound_core::diagnose::diagnose;
use detbound_core::eval::evaluate_detailed;
use detbound_core::geom::sample_level_set;
use detbound_core::probes::{
    export_context_crops, generate_probe_set, incongruent_set, load_image, Fill, PasteObject,
    Placement,
};
use detbound_core::report::{self, ReportFormat};
use detbound_core::upperbound::{
    classifier_accuracy, correlate_accuracy_uap, uap_strategy1_with, uap_strategy2_with, UapOptions,
};
use detbound_core::{
    AggregationMode, BBox, ContextMode, ContextScale, Dataset, DiagnoseConfig, EvalConfig,
    Interpolation, LoadOptions, ProbeSpec,
};
use image::RgbImage;

#[derive(Parser)]
#[command(
    name = "detbound",
    version,
    about = "Object detection evaluation and upper-bound analysis"
)]
struct Cli {
    /// Maximum worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Log informational messages to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// COCO-style AP breakdown of a detection file.
    Eval(EvalArgs),
    /// Upper-bound AP from classifier outputs on target boxes.
    Uap(UapArgs),
    /// mAP after removing each error type in turn.
    Diagnose(DiagnoseArgs),
    /// Boxes with IOU of at least gamma against a target.
    SampleBoxes(SampleArgs),
    /// Invariance-probe image sets.
    Probes(ProbeArgs),
    /// Object and context crops at a given scale.
    ExportCrops(CropArgs),
    /// Least-squares fit of UAP against classifier accuracy.
    Correlate(CorrelateArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Args)]
struct Output {
    /// Report destination; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Report format; inferred from the --out extension when omitted.
    #[arg(long, value_enum)]
    format: Option<Format>,
}

impl Output {
    fn format(&self, default: ReportFormat) -> ReportFormat {
        match self.format {
            Some(Format::Json) => ReportFormat::Json,
            Some(Format::Csv) => ReportFormat::Csv,
            None => self
                .out
                .as_deref()
                .and_then(ReportFormat::from_path)
                .unwrap_or(default),
        }
    }

    fn emit(&self, contents: &str) -> Result<()> {
        match &self.out {
            Some(path) => report::write(path, contents)?,
            None => std::io::stdout().write_all(contents.as_bytes())?,
        }
        Ok(())
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum InterpolationArg {
    Coco,
    Voc,
}

#[derive(Args)]
struct EvalOptions {
    /// Comma-separated IOU thresholds (default: 0.50:0.05:0.95).
    #[arg(long, value_delimiter = ',')]
    iou: Option<Vec<f64>>,
    #[arg(long, value_enum, default_value = "coco")]
    interpolation: InterpolationArg,
    /// Ranked detections kept per image and category; 0 keeps all.
    #[arg(long, default_value_t = 100)]
    max_dets: usize,
    /// Drop crowd annotations instead of rejecting the file.
    #[arg(long)]
    drop_crowd: bool,
}

impl EvalOptions {
    fn config(&self) -> EvalConfig {
        let mut cfg = EvalConfig::default();
        if let Some(iou) = &self.iou {
            cfg.iou_thresholds = iou.clone();
        }
        cfg.interpolation = match self.interpolation {
            InterpolationArg::Coco => Interpolation::Coco101,
            InterpolationArg::Voc => Interpolation::VocAllPoints,
        };
        cfg.max_dets_per_image = (self.max_dets > 0).then_some(self.max_dets);
        cfg
    }

    fn load(&self, path: &Path) -> Result<Dataset> {
        let opts = LoadOptions {
            drop_crowd: self.drop_crowd,
            ..LoadOptions::default()
        };
        load_dataset(path, &opts).with_context(|| format!("loading {}", path.display()))
    }
}

#[derive(Args)]
struct EvalArgs {
    /// Ground-truth annotations (COCO JSON).
    #[arg(long)]
    ann: PathBuf,
    /// Detection results (COCO results JSON).
    #[arg(long)]
    det: PathBuf,
    /// Also write interpolated PR-curve points as CSV.
    #[arg(long)]
    pr_out: Option<PathBuf>,
    #[command(flatten)]
    eval: EvalOptions,
    #[command(flatten)]
    output: Output,
}

#[derive(Clone, Copy, ValueEnum)]
enum AggregationArg {
    MostConfident,
    MostFrequent,
}

#[derive(Args)]
struct UapArgs {
    #[arg(long)]
    ann: PathBuf,
    /// Classifier outputs keyed by annotation id.
    #[arg(long)]
    cls: PathBuf,
    /// 1: target box only; 2: pool predictions on neighboring boxes.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u8).range(1..=2))]
    strategy: u8,
    #[arg(long, value_enum, default_value = "most-frequent")]
    aggregation: AggregationArg,
    /// Strategy 2: pool the neighbors only, without the target's own prediction.
    #[arg(long)]
    neighbors_only: bool,
    /// Score every relabeled target with this constant.
    #[arg(long)]
    constant_confidence: Option<f64>,
    #[command(flatten)]
    eval: EvalOptions,
    #[command(flatten)]
    output: Output,
}

#[derive(Args)]
struct DiagnoseArgs {
    #[arg(long)]
    ann: PathBuf,
    #[arg(long)]
    det: PathBuf,
    /// Detections overlapping every target at most this much are background.
    #[arg(long, default_value_t = 0.1)]
    t_bg: f64,
    /// Matching threshold for error labels.
    #[arg(long, default_value_t = 0.5)]
    t_loc: f64,
    /// Also write per-category error counts as CSV.
    #[arg(long)]
    counts_out: Option<PathBuf>,
    #[command(flatten)]
    eval: EvalOptions,
    #[command(flatten)]
    output: Output,
}

#[derive(Args)]
struct SampleArgs {
    /// Target box as x,y,w,h.
    #[arg(long, value_parser = parse_box)]
    target: BBox,
    /// Minimum IOU with the target.
    #[arg(long)]
    gamma: f64,
    #[arg(long, default_value_t = 10)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    output: Output,
}

#[derive(Clone, Copy, ValueEnum)]
enum Variant {
    WhiteBg,
    NoiseBg,
    ObjectsOnly,
    Crop,
    CropResize,
    Blur,
    Vflip,
    Incongruent,
}

#[derive(Clone, Copy, ValueEnum)]
enum PlacementArg {
    Random,
    SameCenter,
}

#[derive(Args)]
struct ProbeArgs {
    #[arg(long)]
    ann: PathBuf,
    /// Directory holding the dataset images.
    #[arg(long)]
    images: PathBuf,
    #[arg(long, value_enum)]
    variant: Variant,
    /// Output directory for images, annotations.json and manifest.json.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = ProbeSpec::DEFAULT_MIN_DIM)]
    min_dim: u32,
    #[arg(long, default_value_t = ProbeSpec::DEFAULT_KSIZE)]
    ksize: usize,
    #[arg(long, default_value_t = ProbeSpec::DEFAULT_SIGMA)]
    sigma: f64,
    /// Incongruent: directory of background PNGs, used in file-name order.
    #[arg(long, required_if_eq("variant", "incongruent"))]
    backgrounds: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "random")]
    placement: PlacementArg,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    ObjectOnly,
    ObjectPlusContext,
    ContextOnly,
    WholeImage,
}

#[derive(Clone, Copy, ValueEnum)]
enum FillArg {
    Mean,
    Gray,
    White,
}

#[derive(Args)]
struct CropArgs {
    #[arg(long)]
    ann: PathBuf,
    #[arg(long)]
    images: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    scale: f64,
    #[arg(long, value_enum, default_value = "object-only")]
    mode: ModeArg,
    #[arg(long, value_enum, default_value = "mean")]
    fill: FillArg,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CorrelateArgs {
    /// CSV of accuracy,uap pairs; a non-numeric first row is a header.
    #[arg(long, conflicts_with_all = ["ann", "cls"], required_unless_present = "ann")]
    points: Option<PathBuf>,
    /// Annotations for computing one point per --cls file.
    #[arg(long, requires = "cls")]
    ann: Option<PathBuf>,
    /// Classifier output files; each gives top-1 accuracy and strategy-1 mAP.
    #[arg(long, num_args = 1..)]
    cls: Vec<PathBuf>,
    #[command(flatten)]
    output: Output,
}

fn parse_box(s: &str) -> std::result::Result<BBox, String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    match v[..] {
        [x, y, w, h] => BBox::new(x, y, w, h).map_err(|e| e.to_string()),
        _ => Err(format!("expected x,y,w,h, got {} values", v.len())),
    }
}

fn run_eval(a: &EvalArgs) -> Result<()> {
    let ds = a.eval.load(&a.ann)?;
    let dets =
        load_detections(&a.det, &ds).with_context(|| format!("loading {}", a.det.display()))?;
    let ev = evaluate_detailed(&ds, &dets, &a.eval.config())?;
    let r = ev.report();
    if let Some(path) = &a.pr_out {
        report::write(path, &report::pr_points_csv(&ev.pr_points()))?;
    }
    a.output.emit(&match a.output.format(ReportFormat::Json) {
        ReportFormat::Json => report::to_json(&r),
        ReportFormat::Csv => report::eval_csv(&r),
    })
}

fn run_uap(a: &UapArgs) -> Result<()> {
    let ds = a.eval.load(&a.ann)?;
    let outputs = load_classifier_outputs(&a.cls, &ds)
        .with_context(|| format!("loading {}", a.cls.display()))?;
    let opts = UapOptions {
        include_target: !a.neighbors_only,
        constant_confidence: a.constant_confidence,
    };
    let cfg = a.eval.config();
    let r = match a.strategy {
        1 => uap_strategy1_with(&ds, &outputs, &cfg, &opts)?,
        _ => {
            let mode = match a.aggregation {
                AggregationArg::MostConfident => AggregationMode::MostConfidentBox,
                AggregationArg::MostFrequent => AggregationMode::MostFrequentLabel,
            };
            uap_strategy2_with(&ds, &outputs, mode, &cfg, &opts)?
        }
    };
    a.output.emit(&match a.output.format(ReportFormat::Json) {
        ReportFormat::Json => report::to_json(&r),
        ReportFormat::Csv => report::eval_csv(&r),
    })
}

fn run_diagnose(a: &DiagnoseArgs) -> Result<()> {
    let ds = a.eval.load(&a.ann)?;
    let dets =
        load_detections(&a.det, &ds).with_context(|| format!("loading {}", a.det.display()))?;
    let cfg = DiagnoseConfig {
        t_bg: a.t_bg,
        t_loc: a.t_loc,
        ..DiagnoseConfig::default()
    };
    let r = diagnose(&ds, &dets, &a.eval.config(), &cfg)?;
    if let Some(path) = &a.counts_out {
        report::write(path, &report::diagnosis_counts_csv(&r))?;
    }
    a.output.emit(&match a.output.format(ReportFormat::Csv) {
        ReportFormat::Json => report::to_json(&r),
        ReportFormat::Csv => report::diagnosis_csv(&r),
    })
}

fn run_sample(a: &SampleArgs) -> Result<()> {
    let samples = sample_level_set(&a.target, a.gamma, a.n, a.seed)?;
    a.output.emit(&match a.output.format(ReportFormat::Csv) {
        ReportFormat::Csv => report::samples_csv(&a.target, &samples),
        ReportFormat::Json => {
            let rows: Vec<_> = samples
                .iter()
                .map(|s| {
                    serde_json::json!({
                        "bbox": s.bbox.to_array(),
                        "curve": s.curve,
                        "gamma": s.gamma,
                        "alpha": s.alpha,
                        "iou": detbound_core::iou(&s.bbox, &a.target),
                    })
                })
                .collect();
            report::to_json(&rows)
        }
    })
}

fn load_backgrounds(dir: &Path) -> Result<Vec<RgbImage>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    paths.retain(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")));
    paths.sort();
    if paths.is_empty() {
        bail!("no PNG backgrounds in {}", dir.display());
    }
    paths
        .iter()
        .map(|p| {
            Ok(image::open(p)
                .with_context(|| format!("loading {}", p.display()))?
                .to_rgb8())
        })
        .collect()
}

fn run_probes(a: &ProbeArgs) -> Result<()> {
    let ds = load_dataset(&a.ann, &LoadOptions::default())
        .with_context(|| format!("loading {}", a.ann.display()))?;
    let load = |info: &detbound_core::ImageInfo| load_image(&a.images, info);
    let spec = match a.variant {
        Variant::WhiteBg => ProbeSpec::WhiteBackground,
        Variant::NoiseBg => ProbeSpec::NoiseBackground { seed: a.seed },
        Variant::ObjectsOnly => ProbeSpec::ObjectsOnly,
        Variant::Crop => ProbeSpec::Crop,
        Variant::CropResize => ProbeSpec::CropResize { min_dim: a.min_dim },
        Variant::Blur => ProbeSpec::GaussianBlur {
            ksize: a.ksize,
            sigma: a.sigma,
        },
        Variant::Vflip => ProbeSpec::VerticalFlip,
        Variant::Incongruent => {
            let backgrounds =
                load_backgrounds(a.backgrounds.as_deref().expect("required by clap"))?;
            let mut objects = Vec::with_capacity(ds.annotations().len());
            let mut infos: Vec<_> = ds.images().iter().collect();
            infos.sort_by_key(|i| i.id);
            for info in infos {
                let pixels = load(info)?;
                let mut anns: Vec<_> = ds
                    .annotations()
                    .iter()
                    .filter(|g| g.image_id == info.id)
                    .collect();
                anns.sort_by_key(|g| g.id);
                for g in anns {
                    objects.push(PasteObject::extract(&ds, &pixels, g.id)?);
                }
            }
            let placement = match a.placement {
                PlacementArg::Random => Placement::Random { seed: a.seed },
                PlacementArg::SameCenter => Placement::SameRelativeCenter,
            };
            incongruent_set(&objects, &backgrounds, placement, ds.categories())?.write(&a.out)?;
            return Ok(());
        }
    };
    generate_probe_set(&ds, load, &spec)?.write(&a.out)?;
    Ok(())
}

fn run_crops(a: &CropArgs) -> Result<()> {
    let ds = load_dataset(&a.ann, &LoadOptions::default())
        .with_context(|| format!("loading {}", a.ann.display()))?;
    let cfg = ContextScale {
        scale: a.scale,
        mode: match a.mode {
            ModeArg::ObjectOnly => ContextMode::ObjectOnly,
            ModeArg::ObjectPlusContext => ContextMode::ObjectPlusContext,
            ModeArg::ContextOnly => ContextMode::ContextOnly,
            ModeArg::WholeImage => ContextMode::WholeImage,
        },
        fill: match a.fill {
            FillArg::Mean => Fill::DatasetMean,
            FillArg::Gray => Fill::Gray,
            FillArg::White => Fill::White,
        },
    };
    export_context_crops(&ds, |info| load_image(&a.images, info), &cfg)?.write(&a.out)?;
    Ok(())
}

fn read_points(path: &Path) -> Result<Vec<(f64, f64)>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("reading {}", path.display()))?;
    let mut points = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != 2 {
            bail!(
                "{}: row {} has {} fields, expected 2",
                path.display(),
                i + 1,
                rec.len()
            );
        }
        match (rec[0].parse::<f64>(), rec[1].parse::<f64>()) {
            (Ok(x), Ok(y)) => points.push((x, y)),
            _ if i == 0 => {}
            _ => bail!("{}: row {} is not numeric", path.display(), i + 1),
        }
    }
    Ok(points)
}

fn run_correlate(a: &CorrelateArgs) -> Result<()> {
    let points = match (&a.points, &a.ann) {
        (Some(path), _) => read_points(path)?,
        (None, Some(ann)) => {
            let ds = load_dataset(ann, &LoadOptions::default())
                .with_context(|| format!("loading {}", ann.display()))?;
            a.cls
                .iter()
                .map(|p| {
                    let outputs = load_classifier_outputs(p, &ds)
                        .with_context(|| format!("loading {}", p.display()))?;
                    let r = uap_strategy1_with(
                        &ds,
                        &outputs,
                        &EvalConfig::default(),
                        &UapOptions::default(),
                    )?;
                    let map = r.map.context("mAP is undefined without targets")?;
                    Ok((classifier_accuracy(&ds, &outputs)? * 100.0, map))
                })
                .collect::<Result<_>>()?
        }
        (None, None) => bail!("either --points or --ann with --cls is required"),
    };
    let c = correlate_accuracy_uap(&points)?;
    a.output.emit(&match a.output.format(ReportFormat::Json) {
        ReportFormat::Json => report::to_json(&c),
        ReportFormat::Csv => report::correlation_csv(&c),
    })
}

fn run(cli: &Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            bail!("--threads must be positive");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()?;
    }
    match &cli.command {
        Command::Eval(a) => run_eval(a),
        Command::Uap(a) => run_uap(a),
        Command::Diagnose(a) => run_diagnose(a),
        Command::SampleBoxes(a) => run_sample(a),
        Command::Probes(a) => run_probes(a),
        Command::ExportCrops(a) => run_crops(a),
        Command::Correlate(a) => run_correlate(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .filter_level(if cli.verbose {
            log::LevelFilter::Info
        } else {
            log::LevelFilter::Warn
        })
        .format_timestamp(None)
        .init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e:#}");
            ExitCode::FAILURE
        }
    }
}
