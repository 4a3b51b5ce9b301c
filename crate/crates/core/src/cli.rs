//! Command-line interface. Every subcommand writes its artifacts under the
//! directory given by `--out`; each output file starts with `#` header lines
//! (tool version, config hash, seed, git revision).

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use ndarray::Array2;

use crate::analysis::{kde_density, mrmr_rank, DEFAULT_BINS};
use crate::checkpoint::Checkpoint;
use crate::config::{repro_header, RunConfig};
use crate::error::{Error, Result};
use crate::evaluation::evaluate;
use crate::gaze_features::{average_rows, extract_windowed, feature_names};
use crate::ingest::{load_dataset, write_dataset, write_matrix_csv, Emotion, Utterance};
use crate::model::{EmotionModel, FusionMode, GazeMode, Modality};
use crate::synthetic::generate;
use crate::trainer::{mean_and_standard_error, prepare_samples, run_seeds, train, TrainMode};

#[derive(Debug, Parser)]
#[command(name = "gazemb", version, about = "Gaze-enhanced crossmodal emotion embeddings")]
pub struct Cli {
    /// TOML run configuration; command-line flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Extract gaze features for every utterance of a manifest.
    ExtractFeatures(ExtractArgs),
    /// Generate a synthetic dataset (train and validation manifests).
    Synth(SynthArgs),
    /// Train a model and write metrics log and checkpoints.
    Train(TrainArgs),
    /// Evaluate a checkpoint on one test modality.
    Evaluate(EvaluateArgs),
    /// Per-class mRMR ranking of the averaged gaze features.
    RankFeatures(RankArgs),
    /// Per-class KDE grids of gaze angles.
    GazeDensity(DensityArgs),
    /// Print the architecture and parameter counts per module.
    Describe(DescribeArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ExtractMode {
    Windowed,
    Averaged,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum TestModality {
    Audio,
    Video,
}

impl From<TestModality> for Modality {
    fn from(m: TestModality) -> Self {
        match m {
            TestModality::Audio => Modality::Audio,
            TestModality::Video => Modality::Visual,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum CliTrainMode {
    Crossmodal,
    MonomodalAudio,
    MonomodalVideo,
}

impl From<CliTrainMode> for TrainMode {
    fn from(m: CliTrainMode) -> Self {
        match m {
            CliTrainMode::Crossmodal => TrainMode::Crossmodal,
            CliTrainMode::MonomodalAudio => TrainMode::MonomodalAudio,
            CliTrainMode::MonomodalVideo => TrainMode::MonomodalVisual,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum CliGazeMode {
    None,
    Windowed,
    Averaged,
}

impl From<CliGazeMode> for GazeMode {
    fn from(m: CliGazeMode) -> Self {
        match m {
            CliGazeMode::None => GazeMode::None,
            CliGazeMode::Windowed => GazeMode::Windowed,
            CliGazeMode::Averaged => GazeMode::Averaged,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum CliFusionMode {
    Early,
    ModelLevel,
}

impl From<CliFusionMode> for FusionMode {
    fn from(m: CliFusionMode) -> Self {
        match m {
            CliFusionMode::Early => FusionMode::Early,
            CliFusionMode::ModelLevel => FusionMode::ModelLevel,
        }
    }
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "windowed")]
    pub mode: ExtractMode,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub utterances_per_class: Option<usize>,
    /// Fraction of the utterance-level variation shared across modalities.
    #[arg(long)]
    pub shared_strength: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ModelFlags {
    #[arg(long, value_enum)]
    pub gaze_mode: Option<CliGazeMode>,
    #[arg(long, value_enum)]
    pub fusion_mode: Option<CliFusionMode>,
    #[arg(long)]
    pub embedding_dim: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub train_manifest: Option<PathBuf>,
    #[arg(long)]
    pub validation_manifest: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Comma-separated seeds; runs a sweep and writes only the per-seed summary.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Vec<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long, value_enum)]
    pub mode: Option<CliTrainMode>,
    #[command(flatten)]
    pub model: ModelFlags,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Label written to the metrics file.
    #[arg(long, default_value = "validation")]
    pub split: String,
    #[arg(long, value_enum)]
    pub test_modality: TestModality,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RankArgs {
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    pub top_k: usize,
    #[arg(long, default_value_t = DEFAULT_BINS)]
    pub bins: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DensityArgs {
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long, default_value_t = 50)]
    pub resolution: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DescribeArgs {
    #[command(flatten)]
    pub model: ModelFlags,
}

/// Loads the run config and resolves relative manifest paths against the
/// config file's directory.
fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    let mut cfg = RunConfig::load_or_default(path)?;
    if let Some(dir) = path.and_then(Path::parent) {
        for p in [&mut cfg.data.train_manifest, &mut cfg.data.validation_manifest]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        }
    }
    Ok(cfg)
}

fn apply_model_flags(cfg: &mut RunConfig, flags: &ModelFlags) {
    if let Some(m) = flags.gaze_mode {
        cfg.model.gaze_mode = m.into();
    }
    if let Some(m) = flags.fusion_mode {
        cfg.model.fusion_mode = m.into();
    }
    if let Some(e) = flags.embedding_dim {
        cfg.model.embedding_dim = e;
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_with_header(path: &Path, header: &[String], body: &str) -> Result<()> {
    let mut text = String::new();
    for h in header {
        let _ = writeln!(text, "# {h}");
    }
    text.push_str(body);
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn required(path: Option<PathBuf>, what: &str) -> Result<PathBuf> {
    path.ok_or_else(|| Error::Config(format!("{what} not given on the command line or in [data]")))
}

fn load_utterances(manifest: &Path, cfg: &RunConfig) -> Result<Vec<Utterance>> {
    let loaded = load_dataset(manifest, cfg.data.default_fps)?;
    for d in &loaded.dropped {
        eprintln!("dropped {}: {}", d.id, d.reason);
    }
    Ok(loaded.utterances)
}

fn class_name(c: usize) -> String {
    Emotion::from_id(c).map_or_else(|| format!("class{c}"), |e| e.name().to_string())
}

/// Runs a parsed command line.
pub fn run(cli: Cli) -> Result<()> {
    let mut cfg = load_config(cli.config.as_deref())?;
    match cli.command {
        Command::ExtractFeatures(a) => extract_features(cfg, a),
        Command::Synth(a) => {
            if let Some(s) = a.seed {
                cfg.synth.seed = s;
            }
            if let Some(n) = a.utterances_per_class {
                cfg.synth.utterances_per_class = n;
            }
            if let Some(r) = a.shared_strength {
                cfg.synth.shared_strength = r;
            }
            synth(cfg, &a.out)
        }
        Command::Train(a) => train_cmd(cfg, a),
        Command::Evaluate(a) => evaluate_cmd(cfg, a),
        Command::RankFeatures(a) => rank_features(cfg, a),
        Command::GazeDensity(a) => gaze_density(cfg, a),
        Command::Describe(a) => {
            apply_model_flags(&mut cfg, &a.model);
            print!("{}", describe(&cfg)?);
            Ok(())
        }
    }
}

fn extract_features(cfg: RunConfig, a: ExtractArgs) -> Result<()> {
    let manifest = required(a.manifest.or(cfg.data.train_manifest.clone()), "--manifest")?;
    let utts = load_utterances(&manifest, &cfg)?;
    create_dir(&a.out)?;
    let mut header = repro_header(&cfg, 0, "extract-features")?;
    header.push(format!(
        "mode: {}",
        match a.mode {
            ExtractMode::Windowed => "windowed",
            ExtractMode::Averaged => "averaged",
        }
    ));
    let names = feature_names();
    for u in &utts {
        let windowed = extract_windowed(u, &cfg.gaze)?;
        let m = match a.mode {
            ExtractMode::Windowed => windowed,
            ExtractMode::Averaged => average_rows(&windowed).to_array().insert_axis(ndarray::Axis(0)),
        };
        let path = a.out.join(format!("{}_gaze.csv", u.id));
        let f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        write_matrix_csv(std::io::BufWriter::new(f), &m, &header, Some(names))?;
    }
    eprintln!("wrote {} feature files to {}", utts.len(), a.out.display());
    Ok(())
}

fn synth(mut cfg: RunConfig, out: &Path) -> Result<()> {
    let ds = generate(&cfg.synth)?;
    create_dir(out)?;
    // the emitted config trains directly on the generated data
    cfg.model.visual_dim = cfg.synth.visual_dim;
    cfg.model.audio_dim = cfg.synth.audio_dim;
    cfg.model.num_classes = cfg.synth.num_classes;
    cfg.data.default_fps = cfg.synth.fps;
    cfg.data.train_manifest = Some("train/manifest.csv".into());
    cfg.data.validation_manifest = Some("validation/manifest.csv".into());
    let header = repro_header(&cfg, cfg.synth.seed, "synth")?;
    write_dataset(out.join("train"), &ds.train, &header)?;
    write_dataset(out.join("validation"), &ds.validation, &header)?;
    write_with_header(&out.join("run_config.toml"), &header, &cfg.to_toml()?)?;
    eprintln!(
        "wrote {} train and {} validation utterances to {}",
        ds.train.len(),
        ds.validation.len(),
        out.display()
    );
    Ok(())
}

fn train_cmd(mut cfg: RunConfig, a: TrainArgs) -> Result<()> {
    apply_model_flags(&mut cfg, &a.model);
    if let Some(s) = a.seed {
        cfg.train.seed = s;
    }
    if let Some(e) = a.epochs {
        cfg.train.epochs = e;
    }
    if let Some(lr) = a.lr {
        cfg.train.lr = lr;
    }
    if let Some(b) = a.batch_size {
        cfg.train.batch_size = b;
    }
    if let Some(m) = a.mode {
        cfg.train.mode = m.into();
    }
    let train_manifest = required(a.train_manifest.or(cfg.data.train_manifest.clone()), "--train-manifest")?;
    let val_manifest = required(
        a.validation_manifest.or(cfg.data.validation_manifest.clone()),
        "--validation-manifest",
    )?;
    let train_utts = load_utterances(&train_manifest, &cfg)?;
    let val_utts = load_utterances(&val_manifest, &cfg)?;
    let train_set = prepare_samples(&train_utts, cfg.model.gaze_mode, &cfg.gaze)?;
    let val_set = prepare_samples(&val_utts, cfg.model.gaze_mode, &cfg.gaze)?;
    create_dir(&a.out)?;

    if !a.seeds.is_empty() {
        let header = repro_header(&cfg, a.seeds[0], "train --seeds")?;
        let results = run_seeds(&train_set, &val_set, &cfg.model, &cfg.train, &a.seeds)?;
        let mut body = String::from("seed,modality,best_micro_f1\n");
        for r in &results {
            for (m, f1) in &r.best_f1 {
                let _ = writeln!(body, "{},{m},{f1}", r.seed);
            }
        }
        for &m in cfg.train.mode.modalities() {
            let vals: Vec<f64> = results
                .iter()
                .flat_map(|r| r.best_f1.iter().filter(|(x, _)| *x == m).map(|(_, f)| *f))
                .collect();
            let (mean, se) = mean_and_standard_error(&vals);
            let _ = writeln!(body, "mean,{m},{mean}");
            let _ = writeln!(body, "stderr,{m},{se}");
        }
        write_with_header(&a.out.join("sweep.csv"), &header, &body)?;
        print!("{body}");
        return Ok(());
    }

    let header = repro_header(&cfg, cfg.train.seed, "train")?;
    let outcome = train(&train_set, &val_set, &cfg.model, &cfg.train)?;
    write_with_header(&a.out.join("metrics.csv"), &header, &outcome.log_csv())?;
    write_with_header(&a.out.join("run_config.toml"), &header, &cfg.to_toml()?)?;
    let save = |model: EmotionModel, name: &str| -> Result<()> {
        Checkpoint {
            model,
            standardizer: outcome.standardizer.clone(),
            gaze: cfg.gaze.clone(),
        }
        .save(&a.out.join(name), &header)
    };
    save(outcome.model.clone(), "checkpoint.txt")?;
    for b in &outcome.best {
        if let Some(m) = outcome.model_for(b.modality) {
            save(m, &format!("checkpoint_{}.txt", b.modality))?;
        }
        println!("best {} micro F1 {:.4} at epoch {}", b.modality, b.micro_f1, b.epoch);
    }
    Ok(())
}

fn evaluate_cmd(mut cfg: RunConfig, a: EvaluateArgs) -> Result<()> {
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    cfg.model = ckpt.model.config.clone();
    cfg.gaze = ckpt.gaze.clone();
    let manifest = required(a.manifest.or(cfg.data.validation_manifest.clone()), "--manifest")?;
    let utts = load_utterances(&manifest, &cfg)?;
    let samples = prepare_samples(&utts, cfg.model.gaze_mode, &ckpt.gaze)?;
    let samples = ckpt.standardizer.transform_all(&samples);
    let modality: Modality = a.test_modality.into();
    let report = evaluate(&ckpt.model, &samples, modality)?;

    create_dir(&a.out)?;
    let mut header = repro_header(&cfg, cfg.train.seed, "evaluate")?;
    header.push(format!("checkpoint: {}", a.checkpoint.display()));
    let k = ckpt.model.config.num_classes;
    let names: Vec<String> = (0..k).map(class_name).collect();

    let mut metrics = String::from("split,modality,metric,value\n");
    let _ = writeln!(metrics, "{},{modality},micro_f1,{}", a.split, report.micro_f1);
    for (c, f1) in report.per_class_f1.iter().enumerate() {
        let _ = writeln!(metrics, "{},{modality},f1_{},{f1}", a.split, names[c]);
    }
    write_with_header(&a.out.join(format!("metrics_{modality}.csv")), &header, &metrics)?;

    let mut confusion = format!("truth\\predicted,{}\n", names.join(","));
    for (c, row) in report.confusion.counts.iter().enumerate() {
        let cells: Vec<String> = row.iter().map(u64::to_string).collect();
        let _ = writeln!(confusion, "{},{}", names[c], cells.join(","));
    }
    write_with_header(&a.out.join(format!("confusion_{modality}.csv")), &header, &confusion)?;

    let mut preds = String::from("id,truth,predicted\n");
    for ((id, t), p) in report.ids.iter().zip(&report.truths).zip(&report.predictions) {
        let _ = writeln!(preds, "{id},{},{}", names[*t], names[*p]);
    }
    write_with_header(&a.out.join(format!("predictions_{modality}.csv")), &header, &preds)?;
    println!("{modality} micro F1 {:.4}", report.micro_f1);
    Ok(())
}

fn rank_features(cfg: RunConfig, a: RankArgs) -> Result<()> {
    let manifest = required(a.manifest.or(cfg.data.train_manifest.clone()), "--manifest")?;
    let utts = load_utterances(&manifest, &cfg)?;
    let mut features = Array2::zeros((utts.len(), crate::gaze_features::GAZE_FEATURE_DIM));
    for (i, u) in utts.iter().enumerate() {
        features
            .row_mut(i)
            .assign(&average_rows(&extract_windowed(u, &cfg.gaze)?).to_array());
    }
    let labels: Vec<usize> = utts.iter().map(|u| u.label).collect();
    let names = feature_names();
    let mut body = String::from("class,rank,feature,score,relevance,redundancy\n");
    let mut classes: Vec<usize> = labels.clone();
    classes.sort_unstable();
    classes.dedup();
    for &c in &classes {
        match mrmr_rank(&features, &labels, c, a.top_k, a.bins) {
            Ok(ranked) => {
                for (r, f) in ranked.iter().enumerate() {
                    let _ = writeln!(
                        body,
                        "{},{},{},{},{},{}",
                        class_name(c),
                        r + 1,
                        names[f.index],
                        f.score,
                        f.relevance,
                        f.redundancy
                    );
                }
            }
            Err(e) => eprintln!("skipping class {}: {e}", class_name(c)),
        }
    }
    create_dir(&a.out)?;
    let mut header = repro_header(&cfg, 0, "rank-features")?;
    header.push(format!(
        "mrmr: difference form, {} equal-frequency bins, mutual information in nats, one class vs rest",
        a.bins
    ));
    write_with_header(&a.out.join("ranking.csv"), &header, &body)
}

fn gaze_density(cfg: RunConfig, a: DensityArgs) -> Result<()> {
    let manifest = required(a.manifest.or(cfg.data.train_manifest.clone()), "--manifest")?;
    let utts = load_utterances(&manifest, &cfg)?;
    create_dir(&a.out)?;
    let base = repro_header(&cfg, 0, "gaze-density")?;
    let num_classes = utts.iter().map(|u| u.label + 1).max().unwrap_or(0);
    for c in 0..num_classes {
        let points: Vec<[f64; 2]> = utts
            .iter()
            .filter(|u| u.label == c)
            .flat_map(|u| &u.frames)
            .filter(|f| f.success && f.confidence >= cfg.gaze.min_confidence)
            .map(|f| [f.gaze_angle_x, f.gaze_angle_y])
            .collect();
        if points.len() < 2 {
            eprintln!("skipping class {}: fewer than two valid frames", class_name(c));
            continue;
        }
        let pts = Array2::from_shape_fn((points.len(), 2), |(i, j)| points[i][j]);
        let grid = kde_density(&pts, a.resolution)?;
        let mut header = base.clone();
        header.push(format!("class: {}", class_name(c)));
        header.push(format!(
            "bandwidth_x: {} bandwidth_y: {} points: {}",
            grid.bandwidth[0],
            grid.bandwidth[1],
            points.len()
        ));
        let mut body = String::from("gaze_angle_x,gaze_angle_y,density\n");
        for (iy, y) in grid.ys.iter().enumerate() {
            for (ix, x) in grid.xs.iter().enumerate() {
                let _ = writeln!(body, "{x},{y},{}", grid.density[[iy, ix]]);
            }
        }
        write_with_header(&a.out.join(format!("density_{}.csv", class_name(c))), &header, &body)?;
    }
    Ok(())
}

/// Architecture summary with parameter counts per module.
pub fn describe(cfg: &RunConfig) -> Result<String> {
    let model = EmotionModel::new(cfg.model.clone(), cfg.train.seed)?;
    let c = &cfg.model;
    let mut out = String::new();
    let _ = writeln!(
        out,
        "fusion: {:?}  gaze: {:?}  visual_dim: {}  audio_dim: {}  gaze_dim: {}  embedding_dim: {}  classifier_hidden: {}  classes: {}",
        c.fusion_mode, c.gaze_mode, c.visual_dim, c.audio_dim, c.gaze_dim, c.embedding_dim, c.classifier_hidden, c.num_classes
    );
    for (module, n) in model.parameter_counts() {
        let _ = writeln!(out, "{module:<16}{n:>12}");
    }
    let _ = writeln!(out, "{:<16}{:>12}", "total", model.params.num_scalars());
    Ok(out)
}
