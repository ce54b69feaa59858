//! Subcommands: `gen-data`, `train`, `localize`, `eval` and `plot`.
//!
//! Every command reads an optional TOML config and lets flags override
//! individual fields. Commands that consume a run directory fall back to
//! the `config.toml` that `train` left there.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use tscn_core::basemodel::{Modality, StreamModel};
use tscn_core::consensus::{fuse_attention, run_refinement_with, PseudoGtKind, PseudoGtStats};
use tscn_core::evaluation::{ground_truth_of, map_at, EvalReport, GtInstance};
use tscn_core::localization::{localize, localize_single, ActionProposal, LocalizationConfig};
use tscn_core::synthdata::{generate, Dataset, VideoSample};

use crate::checkpoint::{self, SavedModel};
use crate::config::RunConfig;
use crate::dataset::{self, Subset};
use crate::error::{AppError, Result};
use crate::plot::{plot_csv, plot_svg, VideoPlot};
use crate::report;

pub const CONFIG_FILE: &str = "config.toml";
pub const LOG_FILE: &str = "train_log.csv";
pub const STATS_FILE: &str = "pseudo_gt_stats.csv";
pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const PSEUDO_GT_DIR: &str = "pseudo_gt";

#[derive(Debug, Parser)]
#[command(name = "tscn", version, about = "Two-stream consensus training and temporal action localization")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic two-modality dataset.
    GenData(GenDataArgs),
    /// Train both streams with iterative pseudo ground truth refinement.
    Train(TrainArgs),
    /// Write scored action proposals for one split.
    Localize(LocalizeArgs),
    /// Score a proposal file against the dataset's ground truth.
    Eval(EvalArgs),
    /// Emit per-video attention plots (CSV and SVG).
    Plot(PlotArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    /// Output dataset directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Training videos; the test split defaults to half as many.
    #[arg(long)]
    pub videos: Option<usize>,
    #[arg(long)]
    pub test_videos: Option<usize>,
    #[arg(long)]
    pub classes: Option<usize>,
    /// Feature width D.
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KindArg {
    Soft,
    Hard,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Test,
}

impl From<SplitArg> for Subset {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Subset::Train,
            SplitArg::Test => Subset::Test,
        }
    }
}

fn split_name(s: Subset) -> &'static str {
    match s {
        Subset::Train => "train",
        Subset::Test => "test",
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StreamArg {
    Fused,
    Rgb,
    Flow,
}

impl StreamArg {
    fn name(self) -> &'static str {
        match self {
            StreamArg::Fused => "fused",
            StreamArg::Rgb => "rgb",
            StreamArg::Flow => "flow",
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset directory.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Run directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub epochs_initial: Option<usize>,
    #[arg(long)]
    pub epochs_refine: Option<usize>,
    #[arg(long, value_enum)]
    pub kind: Option<KindArg>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Suppress per-iteration progress on stderr.
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Debug, Args)]
pub struct RunSelection {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Run directory written by `train`.
    #[arg(long)]
    pub run: Option<PathBuf>,
    /// Refinement iteration to load; defaults to the last one saved.
    #[arg(long)]
    pub iteration: Option<usize>,
    #[arg(long, value_enum)]
    pub split: Option<SplitArg>,
}

#[derive(Debug, Args)]
pub struct LocalizeArgs {
    #[command(flatten)]
    pub sel: RunSelection,
    /// Which outputs to localize from.
    #[arg(long, value_enum, default_value = "fused")]
    pub stream: StreamArg,
    /// Proposal JSON path.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub proposals: PathBuf,
    #[arg(long, value_enum)]
    pub split: Option<SplitArg>,
    /// Comma-separated IoU thresholds.
    #[arg(long, value_delimiter = ',')]
    pub thresholds: Option<Vec<f64>>,
    /// Report JSON path; a `.txt` table is written next to it.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    #[command(flatten)]
    pub sel: RunSelection,
    /// Only these videos (repeatable); all videos of the split by default.
    #[arg(long = "video")]
    pub videos: Vec<String>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData(a) => cmd_gen_data(&a),
        Command::Train(a) => cmd_train(&a).map(|_| ()),
        Command::Localize(a) => cmd_localize(&a).map(|_| ()),
        Command::Eval(a) => cmd_eval(&a).map(|_| ()),
        Command::Plot(a) => cmd_plot(&a).map(|_| ()),
    }
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| AppError::io(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| AppError::io(path, e))
}

pub fn cmd_gen_data(args: &GenDataArgs) -> Result<()> {
    let mut cfg = RunConfig::load_or_default(args.config.as_deref())?;
    let g = &mut cfg.generator;
    if let Some(n) = args.videos {
        g.num_videos = n;
        g.num_test_videos = n / 2;
    }
    if let Some(n) = args.test_videos {
        g.num_test_videos = n;
    }
    if let Some(c) = args.classes {
        g.num_classes = c;
    }
    if let Some(d) = args.dim {
        g.feature_dim = d;
    }
    if let Some(s) = args.seed {
        g.seed = s;
    }
    cfg.validate()?;
    let generated = generate(&cfg.generator)?;
    dataset::save(&generated.dataset, &args.out)?;
    let confounders: usize = generated.planted.iter().map(|p| p.confounders.len()).sum();
    let missed: usize = generated.planted.iter().map(|p| p.flow_missed.len()).sum();
    println!("{}", dataset::describe(&generated.dataset));
    println!("planted: {confounders} RGB confounder stretches, {missed} flow-suppressed actions");
    println!("wrote {}", args.out.join(dataset::MANIFEST).display());
    Ok(())
}

/// Paths written by a training run.
#[derive(Debug, Clone)]
pub struct TrainOutputs {
    pub run_dir: PathBuf,
    pub checkpoints: Vec<PathBuf>,
    pub log: PathBuf,
}

pub fn cmd_train(args: &TrainArgs) -> Result<TrainOutputs> {
    let mut cfg = RunConfig::load_or_default(args.config.as_deref())?;
    if let Some(p) = &args.data {
        cfg.dataset = p.clone();
    }
    if let Some(p) = &args.out {
        cfg.output = p.clone();
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    let r = &mut cfg.refinement;
    if let Some(n) = args.iterations {
        r.iterations = n;
    }
    if let Some(n) = args.epochs_initial {
        r.epochs_initial = n;
    }
    if let Some(n) = args.epochs_refine {
        r.epochs_refine = n;
    }
    if let Some(k) = args.kind {
        r.kind = match k {
            KindArg::Soft => PseudoGtKind::Soft,
            KindArg::Hard => PseudoGtKind::Hard,
        };
    }
    if let Some(lr) = args.learning_rate {
        r.learning_rate = lr;
    }
    train(&cfg, args.quiet)
}

/// Trains on `cfg.dataset` and writes every artifact under `cfg.output`.
pub fn train(cfg: &RunConfig, quiet: bool) -> Result<TrainOutputs> {
    cfg.validate()?;
    let data = dataset::load(&cfg.dataset)?;
    if data.train.is_empty() {
        return Err(AppError::Data(format!("{}: no training videos", cfg.dataset.display())));
    }
    let run_dir = cfg.output.clone();
    write_file(&run_dir.join(CONFIG_FILE), cfg.to_toml()?)?;

    let log_path = run_dir.join(LOG_FILE);
    let file = File::create(&log_path).map_err(|e| AppError::io(&log_path, e))?;
    let mut log = BufWriter::new(file);
    let mut io_error: Option<std::io::Error> = None;
    let _ = writeln!(log, "{}", report::LOG_HEADER);
    let setup = cfg.training_setup();
    let result = run_refinement_with(&data.train, data.num_classes, &setup, |entry| {
        if let Err(e) = writeln!(log, "{}", report::log_row(entry)) {
            io_error.get_or_insert(e);
        }
        let last = setup.refinement.epochs_for(entry.iteration).saturating_sub(1);
        if !quiet && entry.epoch == last {
            eprintln!(
                "iteration {} {:>4}: epoch-mean total loss {:.6}",
                entry.iteration,
                entry.stream.name(),
                entry.mean_total_loss
            );
        }
    });
    log.flush().map_err(|e| AppError::io(&log_path, e))?;
    if let Some(e) = io_error {
        return Err(AppError::io(&log_path, e));
    }
    let run = result?;

    let seeds = setup.stream_seeds();
    let ckpt_dir = run_dir.join(CHECKPOINT_DIR);
    let mut checkpoints = Vec::new();
    let mut stats = format!("{}\n", report::STATS_HEADER);
    for it in &run.iterations {
        for (modality, seed) in [(Modality::Rgb, seeds[0]), (Modality::Flow, seeds[1])] {
            let c = it.checkpoint(modality);
            let header = checkpoint::header_for(&c.model, seed, it.iteration, c.epoch, c.mean_total_loss);
            let path = ckpt_dir.join(checkpoint::file_name(it.iteration, modality));
            write_file(&path, checkpoint::to_bytes(&header, &c.model)?)?;
            checkpoints.push(path);
        }
        if let Some(gts) = &it.pseudo_gt {
            write_file(
                &run_dir.join(PSEUDO_GT_DIR).join(format!("iter{}.csv", it.iteration)),
                report::pseudo_gt_csv(gts),
            )?;
            stats.push_str(&report::stats_row(it.iteration, &PseudoGtStats::of(gts)));
            stats.push('\n');
        }
    }
    write_file(&run_dir.join(STATS_FILE), stats)?;
    if !quiet {
        eprintln!("wrote {} checkpoints to {}", checkpoints.len(), ckpt_dir.display());
    }
    Ok(TrainOutputs {
        run_dir,
        checkpoints,
        log: log_path,
    })
}

/// Config for commands that consume a run: an explicit file, else the
/// run's own `config.toml`, else defaults.
fn resolve_run_config(sel: &RunSelection) -> Result<(RunConfig, PathBuf)> {
    let mut cfg = match (&sel.config, &sel.run) {
        (Some(path), _) => RunConfig::load(path)?,
        (None, Some(run)) if run.join(CONFIG_FILE).exists() => RunConfig::load(&run.join(CONFIG_FILE))?,
        _ => RunConfig::default(),
    };
    if let Some(p) = &sel.data {
        cfg.dataset = p.clone();
    }
    if let Some(s) = sel.split {
        cfg.evaluation.split = s.into();
    }
    let run_dir = sel.run.clone().unwrap_or_else(|| cfg.output.clone());
    cfg.validate()?;
    Ok((cfg, run_dir))
}

/// Highest iteration with both stream checkpoints present.
pub fn latest_iteration(run_dir: &Path) -> Result<usize> {
    let dir = run_dir.join(CHECKPOINT_DIR);
    let entries = fs::read_dir(&dir).map_err(|e| AppError::io(&dir, e))?;
    let mut best = None;
    for entry in entries {
        let name = entry.map_err(|e| AppError::io(&dir, e))?.file_name();
        let Some(n) = name
            .to_str()
            .and_then(|s| s.strip_prefix("iter"))
            .and_then(|s| s.strip_suffix("_rgb.ckpt"))
            .and_then(|s| s.parse::<usize>().ok())
        else {
            continue;
        };
        if dir.join(checkpoint::file_name(n, Modality::Flow)).exists() {
            best = best.max(Some(n));
        }
    }
    best.ok_or_else(|| AppError::Data(format!("{}: no checkpoints", dir.display())))
}

/// Loads both stream checkpoints of one iteration and checks them against
/// the dataset.
pub fn load_streams(run_dir: &Path, iteration: usize, data: &Dataset) -> Result<(SavedModel, SavedModel)> {
    let dir = run_dir.join(CHECKPOINT_DIR);
    let load = |m: Modality| -> Result<SavedModel> {
        let path = dir.join(checkpoint::file_name(iteration, m));
        let saved = checkpoint::load(&path)?;
        let h = &saved.header;
        if h.modality != m || h.input_dim != data.feature_dim || h.num_classes != data.num_classes {
            return Err(AppError::Data(format!(
                "{}: checkpoint ({} stream, D={}, C={}) does not match dataset (D={}, C={})",
                path.display(),
                h.modality,
                h.input_dim,
                h.num_classes,
                data.feature_dim,
                data.num_classes
            )));
        }
        Ok(saved)
    };
    Ok((load(Modality::Rgb)?, load(Modality::Flow)?))
}

/// Proposals for every video from the chosen outputs.
pub fn predict(
    rgb: &StreamModel,
    flow: &StreamModel,
    videos: &[VideoSample],
    config: &LocalizationConfig,
    stream: StreamArg,
) -> Result<Vec<ActionProposal>> {
    let mut out = Vec::new();
    for v in videos {
        let proposals = match stream {
            StreamArg::Fused => {
                let r = rgb.forward(&v.rgb)?.output;
                let f = flow.forward(&v.flow)?.output;
                localize(&v.id, &r, &f, config)?
            }
            StreamArg::Rgb => localize_single(&v.id, &rgb.forward(&v.rgb)?.output, config)?,
            StreamArg::Flow => localize_single(&v.id, &flow.forward(&v.flow)?.output, config)?,
        };
        out.extend(proposals);
    }
    Ok(out)
}

pub fn cmd_localize(args: &LocalizeArgs) -> Result<PathBuf> {
    let (cfg, run_dir) = resolve_run_config(&args.sel)?;
    let data = dataset::load(&cfg.dataset)?;
    let iteration = match args.sel.iteration {
        Some(n) => n,
        None => latest_iteration(&run_dir)?,
    };
    let (rgb, flow) = load_streams(&run_dir, iteration, &data)?;
    let split = cfg.evaluation.split;
    let videos = dataset::split(&data, split);
    let proposals = predict(&rgb.model, &flow.model, videos, &cfg.localization, args.stream)?;
    let text = report::proposals_json(videos.iter().map(|v| v.id.as_str()), &proposals, &data.class_names)?;
    let path = args.out.clone().unwrap_or_else(|| {
        run_dir
            .join("proposals")
            .join(format!("iter{iteration}_{}_{}.json", split_name(split), args.stream.name()))
    });
    write_file(&path, text)?;
    println!(
        "{} proposals for {} {} videos (iteration {iteration}, {} outputs) -> {}",
        proposals.len(),
        videos.len(),
        split_name(split),
        args.stream.name(),
        path.display()
    );
    Ok(path)
}

/// Evaluates proposals against the ground truth of `videos`.
pub fn evaluate(
    proposals: &[ActionProposal],
    videos: &[VideoSample],
    num_classes: usize,
    thresholds: &[f64],
) -> Result<EvalReport> {
    let gts: Vec<GtInstance> = ground_truth_of(videos).map_err(|e| AppError::Data(e.to_string()))?;
    if let Some(p) = proposals.iter().find(|p| !videos.iter().any(|v| v.id == p.video_id)) {
        return Err(AppError::Data(format!("proposal for video {} outside the evaluated split", p.video_id)));
    }
    map_at(proposals, &gts, num_classes, thresholds).map_err(|e| AppError::Data(e.to_string()))
}

pub fn cmd_eval(args: &EvalArgs) -> Result<EvalReport> {
    let mut cfg = RunConfig::load_or_default(args.config.as_deref())?;
    if let Some(p) = &args.data {
        cfg.dataset = p.clone();
    }
    if let Some(s) = args.split {
        cfg.evaluation.split = s.into();
    }
    if let Some(t) = &args.thresholds {
        cfg.evaluation.thresholds = t.clone();
    }
    cfg.validate()?;
    let data = dataset::load(&cfg.dataset)?;
    let split = cfg.evaluation.split;
    let videos = dataset::split(&data, split);
    if videos.is_empty() || videos.iter().any(|v| v.gt_segments.is_none()) {
        return Err(AppError::Data(format!(
            "{} split of {} lacks segment-level ground truth; it cannot be evaluated",
            split_name(split),
            cfg.dataset.display()
        )));
    }
    let text = fs::read_to_string(&args.proposals).map_err(|e| AppError::io(&args.proposals, e))?;
    let proposals = report::parse_proposals_json(&text, &data.class_names)?;
    let rep = evaluate(&proposals, videos, data.num_classes, &cfg.evaluation.thresholds)?;
    let table = report::report_table(&rep, &data.class_names);
    let json_path = args
        .out
        .clone()
        .unwrap_or_else(|| args.proposals.with_extension("report.json"));
    write_file(&json_path, report::report_json(&rep, &data.class_names)?)?;
    write_file(&json_path.with_extension("txt"), &table)?;
    print!("{table}");
    Ok(rep)
}

pub fn cmd_plot(args: &PlotArgs) -> Result<PathBuf> {
    let (cfg, run_dir) = resolve_run_config(&args.sel)?;
    let data = dataset::load(&cfg.dataset)?;
    let iteration = match args.sel.iteration {
        Some(n) => n,
        None => latest_iteration(&run_dir)?,
    };
    let (rgb, flow) = load_streams(&run_dir, iteration, &data)?;
    let split = cfg.evaluation.split;
    let videos: Vec<&VideoSample> = dataset::split(&data, split)
        .iter()
        .filter(|v| args.videos.is_empty() || args.videos.contains(&v.id))
        .collect();
    if let Some(missing) = args.videos.iter().find(|id| !videos.iter().any(|v| &v.id == *id)) {
        return Err(AppError::Data(format!("video {missing} is not in the {} split", split_name(split))));
    }
    // pseudo ground truth exists only for training videos of refined iterations
    let pseudo = match split {
        Subset::Train if iteration > 0 => {
            let path = run_dir.join(PSEUDO_GT_DIR).join(format!("iter{iteration}.csv"));
            match fs::read_to_string(&path) {
                Ok(text) => report::parse_pseudo_gt_csv(&text)?,
                Err(_) => Default::default(),
            }
        }
        _ => Default::default(),
    };
    let out_dir = args
        .out
        .clone()
        .unwrap_or_else(|| run_dir.join("plots").join(format!("iter{iteration}_{}", split_name(split))));
    let loc = &cfg.localization;
    for v in &videos {
        let r = rgb.model.forward(&v.rgb)?.output;
        let f = flow.model.forward(&v.flow)?.output;
        let proposals = localize(&v.id, &r, &f, loc)?;
        let gt = match &v.gt_segments {
            Some(_) => ground_truth_of(std::slice::from_ref(*v))?,
            None => Vec::new(),
        };
        let plot = VideoPlot::new(
            &v.id,
            &r.attention,
            &f.attention,
            loc.beta,
            loc.upsample_factor,
            pseudo.get(&v.id).cloned(),
            proposals,
            gt,
        )?;
        debug_assert_eq!(fuse_attention(&r.attention, &f.attention, loc.beta)?.len(), v.len());
        write_file(&out_dir.join(format!("{}.csv", v.id)), plot_csv(&plot))?;
        write_file(&out_dir.join(format!("{}.svg", v.id)), plot_svg(&plot, &data.class_names))?;
    }
    println!("wrote {} plots to {}", videos.len(), out_dir.display());
    Ok(out_dir)
}
