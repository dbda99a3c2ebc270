use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};

use tubegraph::checks::{gradient_suite, GRAD_TOLERANCE};
use tubegraph::data::{
    self, class_count, frame_boxes, generate_scenarios, snippet_labels, tube_tracks, video_inputs, DatasetDir, DetectionFile, GraphFile,
    MetricsFile, ScenarioConfig, SnippetGraph, Split, Style, Task, TrainingLog, VideoAnnotation, VideoDetections, VideoGraphs, VideoPair,
    SCHEMA_VERSION,
};
use tubegraph::metrics::{
    classification_report, format_classification_table, format_map_table, frame_map, sweep, temporal_detection_map, video_map,
    ClassificationReport,
};
use tubegraph::par::Execution;
use tubegraph::pipeline::{self, background_class, classify_video, localize, Background, Config, Model};
use tubegraph::tensor::{load_checkpoint, save_checkpoint};
use tubegraph::Error;

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_CHECK: u8 = 3;

#[derive(Parser)]
#[command(name = "tubegraph", version, about = "Scene-graph activity detection over action tubes")]
struct Cli {
    /// Run on one thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset directory.
    Generate(GenerateArgs),
    /// Train a model on a dataset's training split.
    Train(TrainArgs),
    /// Detect activities in videos.
    Detect(DetectArgs),
    /// Score detections against ground truth.
    Eval(EvalArgs),
    /// Run the finite-difference gradient suite.
    Gradcheck(GradcheckArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum StyleArg {
    Road,
    Saras,
}

#[derive(Args)]
struct GenerateArgs {
    /// Scenario TOML; missing keys come from the preset of its style.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Preset to use without a scenario file.
    #[arg(long, value_enum, conflicts_with = "scenario")]
    style: Option<StyleArg>,
    /// Overrides the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Model configuration TOML (defaults when absent).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dataset: PathBuf,
    /// Checkpoint to write.
    #[arg(long)]
    out: PathBuf,
    /// Training log (default: checkpoint path with `.log.json`).
    #[arg(long)]
    log: Option<PathBuf>,
    /// Also report test-split accuracy each epoch and keep the epoch that maximises it.
    #[arg(long)]
    select_on_test: bool,
    #[arg(long, short)]
    quiet: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Test,
    All,
}

#[derive(Args)]
struct Source {
    /// Dataset directory written by `generate`.
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "test")]
    split: SplitArg,
}

#[derive(Args)]
struct DetectArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    source: Source,
    /// Video annotation files; their tubes serve as the detections.
    videos: Vec<PathBuf>,
    /// Detections file to write.
    #[arg(long)]
    out: PathBuf,
    /// Also write every snippet's scene graph.
    #[arg(long)]
    dump_graphs: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum TaskArg {
    Temporal,
    Frame,
    Video,
    Classify,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long, value_enum, default_value = "temporal")]
    task: TaskArg,
    /// IoU thresholds.
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.2,0.3,0.4,0.5")]
    iou: Vec<f64>,
    /// Detections file (temporal, classify) or directory of tube files named
    /// `<video_id>.json` (frame, video; defaults to the dataset's detections).
    #[arg(long)]
    detections: Option<PathBuf>,
    #[command(flatten)]
    source: Source,
    /// Ground-truth video annotation files, instead of a dataset.
    #[arg(long, num_args = 1..)]
    ground_truth: Vec<PathBuf>,
    /// Metrics file to write.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Plain-text table to write; it is always printed.
    #[arg(long)]
    table: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 20)]
    seeds: usize,
}

enum Failure {
    Usage(String),
    Lib(Error),
    Check(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(EXIT_USAGE),
            };
        }
    };
    let mode = if cli.sequential {
        Execution::Sequential
    } else {
        Execution::Parallel
    };
    let result = match cli.command {
        Command::Generate(a) => generate(a, mode),
        Command::Train(a) => train(a, mode),
        Command::Detect(a) => detect(a, mode),
        Command::Eval(a) => eval(a, mode),
        Command::Gradcheck(a) => gradcheck(a, mode),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Lib(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_data_error() { EXIT_DATA } else { EXIT_CHECK })
        }
        Err(Failure::Check(m)) => {
            eprintln!("check failed: {m}");
            ExitCode::from(EXIT_CHECK)
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<Config, Error> {
    path.map_or_else(|| Ok(Config::default()), Config::load)
}

fn generate(a: GenerateArgs, mode: Execution) -> Outcome {
    let mut cfg = match (&a.scenario, a.style) {
        (Some(p), _) => ScenarioConfig::load(p)?,
        (None, Some(StyleArg::Saras)) => ScenarioConfig::preset(Style::Saras),
        (None, _) => ScenarioConfig::preset(Style::Road),
    };
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    let data = generate_scenarios(&cfg, mode)?;
    let dir = DatasetDir::write(&a.out, &cfg, &data)?;
    eprintln!(
        "wrote {} train and {} test videos to {}",
        dir.manifest.train.len(),
        dir.manifest.test.len(),
        a.out.display()
    );
    Ok(())
}

fn train(a: TrainArgs, mode: Execution) -> Outcome {
    let config = load_config(a.config.as_deref())?;
    let ds = DatasetDir::open(&a.dataset)?;
    let train_pairs = ds.load_split(Split::Train)?;
    let first = train_pairs.first().ok_or(Error::EmptyDataset)?;
    let n_classes = class_count(&first.video, &config);
    let train_set = data::samples(&train_pairs, &config, mode)?;
    let val_set = if a.select_on_test {
        data::samples(&ds.load_split(Split::Test)?, &config, mode)?
    } else {
        Vec::new()
    };
    let quiet = a.quiet;
    let outcome = pipeline::train(&train_set, &val_set, &config, n_classes, mode, |e| {
        if !quiet {
            match e.val_accuracy {
                Some(v) => eprintln!(
                    "epoch {:>3}  loss {:.5}  train {:.4}  test {:.4}",
                    e.epoch, e.loss, e.train_accuracy, v
                ),
                None => eprintln!("epoch {:>3}  loss {:.5}  train {:.4}", e.epoch, e.loss, e.train_accuracy),
            }
        }
    })?;
    save_checkpoint(&outcome.best.params, &a.out)?;
    let log = TrainingLog {
        schema_version: SCHEMA_VERSION,
        config: config.clone(),
        n_classes,
        parameter_count: outcome.best.parameter_count(),
        best_epoch: outcome.best_epoch,
        epochs: outcome.log,
    };
    let log_path = a.log.unwrap_or_else(|| a.out.with_extension("log.json"));
    data::save(&log, &log_path)?;
    eprintln!("saved epoch {} to {}", outcome.best_epoch, a.out.display());
    Ok(())
}

fn split_pairs(ds: &DatasetDir, split: SplitArg) -> Result<Vec<VideoPair>, Error> {
    Ok(match split {
        SplitArg::Train => ds.load_split(Split::Train)?,
        SplitArg::Test => ds.load_split(Split::Test)?,
        SplitArg::All => {
            let mut v = ds.load_split(Split::Train)?;
            v.extend(ds.load_split(Split::Test)?);
            v
        }
    })
}

/// Videos named by a dataset or listed explicitly; explicit files act as
/// their own detections.
fn gather(source: &Source, files: &[PathBuf]) -> Result<Vec<VideoPair>, Failure> {
    match (&source.dataset, files.is_empty()) {
        (Some(_), false) => Err(Failure::Usage("give either --dataset or video files, not both".into())),
        (None, true) => Err(Failure::Usage("no videos: give --dataset or video files".into())),
        (Some(d), true) => Ok(split_pairs(&DatasetDir::open(d)?, source.split)?),
        (None, false) => files
            .iter()
            .map(|p| {
                let v: VideoAnnotation = data::load(p)?;
                Ok(VideoPair {
                    video: v.clone(),
                    detections: v,
                })
            })
            .collect(),
    }
}

fn detect(a: DetectArgs, mode: Execution) -> Outcome {
    let config = load_config(a.config.as_deref())?;
    let model = Model::from_params(&config, load_checkpoint(&a.checkpoint)?)?;
    let pairs = gather(&a.source, &a.videos)?;
    let mut videos = Vec::with_capacity(pairs.len());
    let mut graphs = Vec::new();
    let mut labels: Option<Vec<String>> = None;
    for p in &pairs {
        data::check_style(&p.video, &config)?;
        let want = class_count(&p.video, &config);
        if want != model.n_classes {
            return Err(Error::Validation(format!(
                "video {} needs {want} classes, the checkpoint has {}",
                p.video.video_id, model.n_classes
            ))
            .into());
        }
        match &labels {
            Some(l) if *l != p.video.activity_labels => {
                return Err(Error::Validation(format!("video {} uses a different activity vocabulary", p.video.video_id)).into());
            }
            Some(_) => {}
            None => labels = Some(p.video.activity_labels.clone()),
        }
        let inputs = video_inputs(&p.video, &p.detections, &config, mode)?;
        let (preds, snippet_graphs): (Vec<_>, Vec<_>) = classify_video(&model, &inputs, mode)?.into_iter().unzip();
        let segments = localize(&model, &preds)?;
        if a.dump_graphs.is_some() {
            graphs.push(VideoGraphs {
                video_id: p.video.video_id.clone(),
                snippets: preds
                    .iter()
                    .zip(snippet_graphs)
                    .map(|(pr, graph)| SnippetGraph {
                        snippet_index: pr.snippet_index,
                        graph,
                    })
                    .collect(),
            });
        }
        videos.push(VideoDetections {
            video_id: p.video.video_id.clone(),
            n_frames: p.video.n_frames,
            snippets: preds,
            segments,
        });
    }
    let file = DetectionFile {
        schema_version: SCHEMA_VERSION,
        activity_labels: labels.unwrap_or_default(),
        background_class: background_class(&config, model.n_classes),
        videos,
    };
    data::save(&file, &a.out)?;
    if let Some(path) = &a.dump_graphs {
        data::save(
            &GraphFile {
                schema_version: SCHEMA_VERSION,
                videos: graphs,
            },
            path,
        )?;
    }
    let n_segments: usize = file.videos.iter().map(|v| v.segments.len()).sum();
    eprintln!("{} segments in {} videos", n_segments, file.videos.len());
    Ok(())
}

const AP_PROTOCOL: &str = "greedy matching in descending score order, each detection taking the unmatched ground truth of highest IoU >= delta; `map` averages precision at true-positive ranks, `map_interpolated` uses 101-point interpolation";

fn eval(a: EvalArgs, mode: Execution) -> Outcome {
    if a.iou.is_empty() || a.iou.iter().any(|d| !(*d > 0.0 && *d <= 1.0)) {
        return Err(Failure::Usage("--iou thresholds must lie in (0, 1]".into()));
    }
    let gt: Vec<VideoPair> = gather(&a.source, &a.ground_truth)?;
    let first = gt.first().ok_or(Error::EmptyDataset)?;
    let (task, class_names, map, classification) = match a.task {
        TaskArg::Temporal | TaskArg::Classify => {
            let path = a
                .detections
                .as_ref()
                .ok_or_else(|| Failure::Usage("--detections is required for this task".into()))?;
            let det: DetectionFile = data::load(path)?;
            let by_id = index_detections(&det, &gt)?;
            if matches!(a.task, TaskArg::Temporal) {
                let dets: Vec<_> = by_id.iter().map(|d| d.map(|v| v.segments.clone()).unwrap_or_default()).collect();
                let truth: Vec<_> = gt.iter().map(|p| p.video.activities.clone()).collect();
                let n = first.video.activity_labels.len();
                let map = sweep(mode, &a.iou, |d| temporal_detection_map(&dets, &truth, n, d))?;
                (Task::Temporal, first.video.activity_labels.clone(), map, None)
            } else {
                let (names, report) = classification(&det, &gt, &by_id)?;
                (Task::Classify, names, Vec::new(), Some(report))
            }
        }
        TaskArg::Frame | TaskArg::Video => {
            let dir = match (&a.detections, &a.source.dataset) {
                (Some(d), _) => d.clone(),
                (None, Some(ds)) => ds.join("detections"),
                (None, None) => return Err(Failure::Usage("--detections is required without --dataset".into())),
            };
            let dets: Vec<VideoAnnotation> = gt
                .iter()
                .map(|p| data::load(&dir.join(format!("{}.json", p.video.video_id))))
                .collect::<Result<_, _>>()?;
            let n = first.video.action_labels.len();
            let map = if matches!(a.task, TaskArg::Frame) {
                let d: Vec<_> = dets.iter().enumerate().flat_map(|(i, v)| frame_boxes(i, v)).collect();
                let g: Vec<_> = gt.iter().enumerate().flat_map(|(i, p)| frame_boxes(i, &p.video)).collect();
                sweep(mode, &a.iou, |delta| frame_map(&d, &g, n, delta))?
            } else {
                let d: Vec<_> = dets.iter().enumerate().flat_map(|(i, v)| tube_tracks(i, v)).collect();
                let g: Vec<_> = gt.iter().enumerate().flat_map(|(i, p)| tube_tracks(i, &p.video)).collect();
                sweep(mode, &a.iou, |delta| video_map(&d, &g, n, delta))?
            };
            let task = if matches!(a.task, TaskArg::Frame) {
                Task::Frame
            } else {
                Task::Video
            };
            (task, first.video.action_labels.clone(), map, None)
        }
    };
    let table = match &classification {
        Some(r) => format_classification_table(&class_names, r),
        None => format_map_table(table_title(task), &class_names, &map),
    };
    print!("{table}");
    if let Some(p) = &a.table {
        std::fs::write(p, &table).map_err(|e| Error::Io {
            path: p.clone(),
            source: e,
        })?;
    }
    if let Some(p) = &a.out {
        let file = MetricsFile {
            schema_version: SCHEMA_VERSION,
            task,
            class_names,
            ap_protocol: AP_PROTOCOL.into(),
            map,
            classification,
        };
        data::save(&file, p)?;
    }
    Ok(())
}

fn table_title(task: Task) -> &'static str {
    match task {
        Task::Temporal => "temporal activity detection AP (%)",
        Task::Frame => "frame-level action detection AP (%)",
        Task::Video => "video-level action detection AP (%)",
        Task::Classify => "snippet classification",
    }
}

/// Detections of every ground-truth video, in ground-truth order.
fn index_detections<'a>(det: &'a DetectionFile, gt: &[VideoPair]) -> Result<Vec<Option<&'a VideoDetections>>, Error> {
    let map: BTreeMap<&str, &VideoDetections> = det.videos.iter().map(|v| (v.video_id.as_str(), v)).collect();
    let known: BTreeMap<&str, &VideoPair> = gt.iter().map(|p| (p.video.video_id.as_str(), p)).collect();
    if let Some(v) = det.videos.iter().find(|v| !known.contains_key(v.video_id.as_str())) {
        return Err(Error::Validation(format!("detections for unknown video {}", v.video_id)));
    }
    if let Some(p) = gt.iter().find(|p| p.video.activity_labels != det.activity_labels) {
        return Err(Error::Validation(format!(
            "video {} and the detections use different activity vocabularies",
            p.video.video_id
        )));
    }
    Ok(gt.iter().map(|p| map.get(p.video.video_id.as_str()).copied()).collect())
}

fn classification(
    det: &DetectionFile,
    gt: &[VideoPair],
    by_id: &[Option<&VideoDetections>],
) -> Result<(Vec<String>, ClassificationReport), Error> {
    let mut names = det.activity_labels.clone();
    let background = match det.background_class {
        Some(b) if b == names.len() => {
            names.push("background".into());
            Background::Present
        }
        Some(b) => return Err(Error::Validation(format!("background class {b} should be {}", names.len()))),
        None => Background::Absent,
    };
    let cfg = Config {
        background,
        ..Config::default()
    };
    let (mut pred, mut truth) = (Vec::new(), Vec::new());
    for (p, d) in gt.iter().zip(by_id) {
        let d = d.ok_or_else(|| Error::Validation(format!("no detections for video {}", p.video.video_id)))?;
        let labels = snippet_labels(&p.video, &cfg)?;
        for s in &d.snippets {
            let t = labels
                .get(s.snippet_index)
                .ok_or_else(|| Error::Validation(format!("video {} has no snippet {}", p.video.video_id, s.snippet_index)))?;
            pred.push(s.label);
            truth.push(*t);
        }
    }
    let report = classification_report(&pred, &truth, names.len())?;
    Ok((names, report))
}

fn gradcheck(a: GradcheckArgs, mode: Execution) -> Outcome {
    if a.seeds == 0 {
        return Err(Failure::Usage("--seeds must be positive".into()));
    }
    let report = gradient_suite(a.seeds, mode);
    for c in &report.checks {
        let verdict = if c.max_error < GRAD_TOLERANCE { "ok" } else { "FAIL" };
        println!(
            "{:<34} max rel. error {:.3e} (seed {})  {verdict}",
            c.name, c.max_error, c.worst_seed
        );
    }
    println!("{} seeds in {:.2?}", report.seeds, report.elapsed);
    if report.passed() {
        Ok(())
    } else {
        Err(Failure::Check(format!(
            "gradient error {:.3e} exceeds {GRAD_TOLERANCE:e}",
            report.max_error()
        )))
    }
}
