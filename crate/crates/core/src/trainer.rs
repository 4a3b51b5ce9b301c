//! Standardisation, batching, the joint objective and the training loop.
//!
//! Per step the objective is `CE(audio) + CE(visual) + weight * triplet`,
//! with the triplet loss made of both intra-modal terms and the
//! audio-to-visual inter-modal term. Monomodal runs keep only the
//! cross-entropy of their own stream.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::evaluate;
use crate::gaze_features::{average_rows, extract_windowed, GazeConfig};
use crate::ingest::Utterance;
use crate::model::{EmotionModel, GazeInput, GazeMode, Modality, ModelConfig, Sample};
use crate::nn::{Adam, Graph, ParamStore, Var};
use crate::triplet::{triplet_loss_graph, TripletOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    Crossmodal,
    MonomodalAudio,
    MonomodalVisual,
}

impl TrainMode {
    /// Modalities whose encoders are trained (and evaluated) in this mode.
    pub fn modalities(self) -> &'static [Modality] {
        match self {
            TrainMode::Crossmodal => &Modality::BOTH,
            TrainMode::MonomodalAudio => &[Modality::Audio],
            TrainMode::MonomodalVisual => &[Modality::Visual],
        }
    }
}

impl fmt::Display for TrainMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TrainMode::Crossmodal => "crossmodal",
            TrainMode::MonomodalAudio => "monomodal_audio",
            TrainMode::MonomodalVisual => "monomodal_visual",
        })
    }
}

impl FromStr for TrainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "crossmodal" => Ok(TrainMode::Crossmodal),
            "monomodal_audio" => Ok(TrainMode::MonomodalAudio),
            "monomodal_visual" | "monomodal_video" => Ok(TrainMode::MonomodalVisual),
            other => Err(Error::Config(format!("unknown training mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub seed: u64,
    pub triplet_weight: f64,
    pub triplet: TripletOptions,
    pub mode: TrainMode,
    /// Two optimizer steps per batch (audio then visual classifier pass)
    /// instead of one step on the summed objective.
    pub alternate_classifier: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 64,
            lr: 1e-4,
            weight_decay: 1e-4,
            epochs: 50,
            seed: 0,
            triplet_weight: 1.0,
            triplet: TripletOptions::default(),
            mode: TrainMode::Crossmodal,
            alternate_classifier: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::Config("batch_size must be at least 2".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config("lr must be positive".into()));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::Config("weight_decay must be non-negative".into()));
        }
        Ok(())
    }
}

/// Turns utterances into unstandardised samples, extracting gaze features
/// as the gaze mode requires.
pub fn prepare_samples(
    utterances: &[Utterance],
    gaze_mode: GazeMode,
    gaze_config: &GazeConfig,
) -> Result<Vec<Sample>> {
    utterances
        .iter()
        .map(|u| {
            let gaze = match gaze_mode {
                GazeMode::None => GazeInput::None,
                GazeMode::Windowed => GazeInput::Windowed(extract_windowed(u, gaze_config)?),
                GazeMode::Averaged => {
                    GazeInput::Averaged(average_rows(&extract_windowed(u, gaze_config)?).to_array())
                }
            };
            Ok(Sample {
                id: u.id.clone(),
                label: u.label,
                audio: u.audio_features.clone(),
                visual: u.visual_features.clone(),
                gaze,
            })
        })
        .collect()
}

/// Per-dimension mean and standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub mean: Array1<f64>,
    pub std: Array1<f64>,
}

impl Moments {
    /// Population moments over the rows of `data`; zero-variance columns
    /// get std 1.
    pub fn fit(data: &Array2<f64>) -> Result<Self> {
        if data.nrows() == 0 {
            return Err(Error::Validation("cannot fit moments on zero rows".into()));
        }
        let mean = data.mean_axis(Axis(0)).expect("non-empty");
        let var = data.var_axis(Axis(0), 0.0);
        let std = var.mapv(|v| {
            let s = v.sqrt();
            if s > 1e-12 {
                s
            } else {
                1.0
            }
        });
        Ok(Moments { mean, std })
    }

    pub fn apply_rows(&self, data: &Array2<f64>) -> Array2<f64> {
        (data - &self.mean) / &self.std
    }

    pub fn apply_vec(&self, data: &Array1<f64>) -> Array1<f64> {
        (data - &self.mean) / &self.std
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub visual: Moments,
    pub audio: Moments,
    pub gaze: Option<Moments>,
}

fn stack_rows<'a>(rows: impl Iterator<Item = ndarray::ArrayView2<'a, f64>>) -> Result<Array2<f64>> {
    let views: Vec<_> = rows.collect();
    ndarray::concatenate(Axis(0), &views).map_err(|e| Error::Shape(e.to_string()))
}

/// Fits visual and windowed-gaze moments over all training frames, audio
/// and averaged-gaze moments over training utterances.
pub fn fit_standardizer(train: &[Sample]) -> Result<Standardizer> {
    if train.is_empty() {
        return Err(Error::Validation("training split is empty".into()));
    }
    let visual = Moments::fit(&stack_rows(train.iter().map(|s| s.visual.view()))?)?;
    let audio = Moments::fit(&stack_rows(
        train.iter().map(|s| s.audio.view().insert_axis(Axis(0))),
    )?)?;
    let gaze = match &train[0].gaze {
        GazeInput::None => None,
        first => {
            let mut rows = Vec::with_capacity(train.len());
            for s in train {
                match (&s.gaze, first) {
                    (GazeInput::Windowed(m), GazeInput::Windowed(_)) => rows.push(m.view()),
                    (GazeInput::Averaged(v), GazeInput::Averaged(_)) => {
                        rows.push(v.view().insert_axis(Axis(0)))
                    }
                    _ => {
                        return Err(Error::Validation(format!(
                            "{}: gaze input kind differs within the split",
                            s.id
                        )))
                    }
                }
            }
            Some(Moments::fit(&stack_rows(rows.into_iter())?)?)
        }
    };
    Ok(Standardizer { visual, audio, gaze })
}

impl Standardizer {
    pub fn transform(&self, sample: &Sample) -> Sample {
        let gaze = match (&sample.gaze, &self.gaze) {
            (GazeInput::Windowed(m), Some(g)) => GazeInput::Windowed(g.apply_rows(m)),
            (GazeInput::Averaged(v), Some(g)) => GazeInput::Averaged(g.apply_vec(v)),
            (other, _) => other.clone(),
        };
        Sample {
            id: sample.id.clone(),
            label: sample.label,
            audio: self.audio.apply_vec(&sample.audio),
            visual: self.visual.apply_rows(&sample.visual),
            gaze,
        }
    }

    pub fn transform_all(&self, samples: &[Sample]) -> Vec<Sample> {
        samples.iter().map(|s| self.transform(s)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepMetrics {
    pub ce_audio: f64,
    pub ce_visual: f64,
    pub triplet: f64,
    pub total: f64,
}

/// Graph nodes of one batch objective.
pub struct BatchLoss {
    pub total: Var,
    pub metrics: StepMetrics,
}

/// Builds the training objective for `batch` on `g`.
pub fn batch_objective(
    g: &mut Graph,
    model: &EmotionModel,
    batch: &[&Sample],
    config: &TrainConfig,
) -> Result<BatchLoss> {
    let labels: Vec<usize> = batch.iter().map(|s| s.label).collect();
    let mut metrics = StepMetrics::default();
    let mut terms: Vec<Var> = Vec::new();

    let audio = match config.mode {
        TrainMode::MonomodalVisual => None,
        _ => Some(model.encode_audio_batch(g, batch)?),
    };
    let visual = match config.mode {
        TrainMode::MonomodalAudio => None,
        _ => Some(model.encode_visual_batch(g, batch)?),
    };
    if let Some(e) = audio {
        let logits = model.classifier_logits(g, e)?;
        let ce = g.softmax_cross_entropy(logits, &labels);
        metrics.ce_audio = g.scalar(ce);
        terms.push(ce);
    }
    if let Some(e) = visual {
        let logits = model.classifier_logits(g, e)?;
        let ce = g.softmax_cross_entropy(logits, &labels);
        metrics.ce_visual = g.scalar(ce);
        terms.push(ce);
    }
    if let (Some(a), Some(v)) = (audio, visual) {
        if config.triplet_weight != 0.0 {
            if let Some(t) = triplet_loss_graph(g, a, &labels, v, &labels, &config.triplet) {
                metrics.triplet = g.scalar(t);
                terms.push(g.scale(t, config.triplet_weight));
            }
        }
    }
    let first = terms[0];
    let total = terms[1..].iter().fold(first, |acc, &t| g.add(acc, t));
    metrics.total = g.scalar(total);
    if !metrics.total.is_finite() {
        return Err(Error::NonFiniteLoss(format!(
            "ce_audio={} ce_visual={} triplet={}",
            metrics.ce_audio, metrics.ce_visual, metrics.triplet
        )));
    }
    Ok(BatchLoss { total, metrics })
}

fn optimise(
    model: &mut EmotionModel,
    optimizer: &mut Adam,
    batch: &[&Sample],
    config: &TrainConfig,
) -> Result<StepMetrics> {
    let mut g = Graph::new();
    let loss = batch_objective(&mut g, model, batch, config)?;
    g.backward(loss.total)?;
    let grads = g.param_grads(&model.params);
    let used = g.used_params(&model.params);
    optimizer.step_masked(&mut model.params, &grads, &used)?;
    Ok(loss.metrics)
}

/// One optimisation step on `batch`.
pub fn train_step(
    model: &mut EmotionModel,
    optimizer: &mut Adam,
    batch: &[&Sample],
    config: &TrainConfig,
) -> Result<StepMetrics> {
    if batch.len() < 2 {
        return Err(Error::Validation("a batch needs at least two samples".into()));
    }
    if !(config.alternate_classifier && config.mode == TrainMode::Crossmodal) {
        return optimise(model, optimizer, batch, config);
    }
    // audio half-step carries the triplet term, visual half-step its own CE
    let mut audio_cfg = config.clone();
    let first = {
        let mut g = Graph::new();
        let labels: Vec<usize> = batch.iter().map(|s| s.label).collect();
        let a = model.encode_audio_batch(&mut g, batch)?;
        let v = model.encode_visual_batch(&mut g, batch)?;
        let logits = model.classifier_logits(&mut g, a)?;
        let ce = g.softmax_cross_entropy(logits, &labels);
        let mut total = ce;
        let mut triplet = 0.0;
        if config.triplet_weight != 0.0 {
            if let Some(t) = triplet_loss_graph(&mut g, a, &labels, v, &labels, &config.triplet) {
                triplet = g.scalar(t);
                let scaled = g.scale(t, config.triplet_weight);
                total = g.add(ce, scaled);
            }
        }
        let value = g.scalar(total);
        if !value.is_finite() {
            return Err(Error::NonFiniteLoss(format!("audio half-step: {value}")));
        }
        let ce_audio = g.scalar(ce);
        g.backward(total)?;
        let grads = g.param_grads(&model.params);
        let used = g.used_params(&model.params);
        optimizer.step_masked(&mut model.params, &grads, &used)?;
        StepMetrics {
            ce_audio,
            ce_visual: 0.0,
            triplet,
            total: value,
        }
    };
    audio_cfg.mode = TrainMode::MonomodalVisual;
    let second = optimise(model, optimizer, batch, &audio_cfg)?;
    Ok(StepMetrics {
        ce_audio: first.ce_audio,
        ce_visual: second.ce_visual,
        triplet: first.triplet,
        total: first.total + second.total,
    })
}

/// One line of the metrics log.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub split: &'static str,
    pub modality: Option<Modality>,
    pub ce_audio: Option<f64>,
    pub ce_visual: Option<f64>,
    pub triplet: Option<f64>,
    pub total: Option<f64>,
    pub micro_f1: Option<f64>,
}

impl EpochRecord {
    pub const CSV_HEADER: &'static str =
        "epoch,split,modality,ce_audio,ce_visual,triplet,total,micro_f1";

    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{}",
            self.epoch,
            self.split,
            self.modality.map(|m| m.to_string()).unwrap_or_default(),
            opt(self.ce_audio),
            opt(self.ce_visual),
            opt(self.triplet),
            opt(self.total),
            opt(self.micro_f1)
        )
    }
}

/// Parameters with the best validation micro F1 for one test modality.
#[derive(Debug, Clone, PartialEq)]
pub struct BestCheckpoint {
    pub modality: Modality,
    pub epoch: usize,
    pub micro_f1: f64,
    pub params: ParamStore,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Model holding the parameters selected on validation (mean micro F1
    /// over the evaluated modalities); initial parameters when no epoch ran.
    pub model: EmotionModel,
    pub standardizer: Standardizer,
    pub log: Vec<EpochRecord>,
    pub best: Vec<BestCheckpoint>,
}

impl TrainOutcome {
    pub fn best_f1(&self, modality: Modality) -> Option<f64> {
        self.best
            .iter()
            .find(|b| b.modality == modality)
            .map(|b| b.micro_f1)
    }

    /// Model with the parameters that scored best for `modality`.
    pub fn model_for(&self, modality: Modality) -> Option<EmotionModel> {
        let best = self.best.iter().find(|b| b.modality == modality)?;
        let mut m = self.model.clone();
        m.params.load_from(&best.params).ok()?;
        Some(m)
    }

    pub fn log_csv(&self) -> String {
        let mut out = String::from(EpochRecord::CSV_HEADER);
        out.push('\n');
        for r in &self.log {
            out.push_str(&r.to_csv());
            out.push('\n');
        }
        out
    }
}

/// Batches of shuffled indices; a trailing batch smaller than 2 is dropped.
pub fn epoch_batches(n: usize, batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order
        .chunks(batch_size)
        .filter(|c| c.len() >= 2)
        .map(<[usize]>::to_vec)
        .collect()
}

/// Trains from scratch. Samples are unstandardised; the standardiser is
/// fitted on `train` only and applied to both splits.
pub fn train(
    train_set: &[Sample],
    validation: &[Sample],
    model_config: &ModelConfig,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    let standardizer = fit_standardizer(train_set)?;
    let train_std = standardizer.transform_all(train_set);
    let val_std = standardizer.transform_all(validation);

    let mut model = EmotionModel::new(model_config.clone(), config.seed)?;
    let mut optimizer = Adam::new(&model.params, config.lr, config.weight_decay);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_ba7c_0000_0001);
    let modalities = config.mode.modalities();

    let mut log = Vec::new();
    let mut best: Vec<BestCheckpoint> = Vec::new();
    let mut best_joint: Option<(f64, ParamStore)> = None;

    for epoch in 1..=config.epochs {
        let mut sums = StepMetrics::default();
        let batches = epoch_batches(train_std.len(), config.batch_size, &mut rng);
        for idx in &batches {
            let batch: Vec<&Sample> = idx.iter().map(|&i| &train_std[i]).collect();
            let m = train_step(&mut model, &mut optimizer, &batch, config)?;
            sums.ce_audio += m.ce_audio;
            sums.ce_visual += m.ce_visual;
            sums.triplet += m.triplet;
            sums.total += m.total;
        }
        let nb = batches.len().max(1) as f64;
        log.push(EpochRecord {
            epoch,
            split: "train",
            modality: None,
            ce_audio: Some(sums.ce_audio / nb),
            ce_visual: Some(sums.ce_visual / nb),
            triplet: Some(sums.triplet / nb),
            total: Some(sums.total / nb),
            micro_f1: None,
        });

        if val_std.is_empty() {
            continue;
        }
        let mut joint = 0.0;
        for &modality in modalities {
            let report = evaluate(&model, &val_std, modality)?;
            log.push(EpochRecord {
                epoch,
                split: "validation",
                modality: Some(modality),
                ce_audio: None,
                ce_visual: None,
                triplet: None,
                total: None,
                micro_f1: Some(report.micro_f1),
            });
            joint += report.micro_f1 / modalities.len() as f64;
            match best.iter_mut().find(|b| b.modality == modality) {
                Some(b) if b.micro_f1 >= report.micro_f1 => {}
                Some(b) => {
                    b.epoch = epoch;
                    b.micro_f1 = report.micro_f1;
                    b.params = model.params.clone();
                }
                None => best.push(BestCheckpoint {
                    modality,
                    epoch,
                    micro_f1: report.micro_f1,
                    params: model.params.clone(),
                }),
            }
        }
        if best_joint.as_ref().map_or(true, |(f, _)| joint > *f) {
            best_joint = Some((joint, model.params.clone()));
        }
    }

    if let Some((_, params)) = best_joint {
        model.params.load_from(&params)?;
    }
    Ok(TrainOutcome {
        model,
        standardizer,
        log,
        best,
    })
}

/// Outcome of one seed in a repeated-run sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedResult {
    pub seed: u64,
    pub best_f1: Vec<(Modality, f64)>,
}

/// Mean and standard error of the mean.
pub fn mean_and_standard_error(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Trains once per seed, in parallel across available cores, and reports
/// each run's best validation micro F1 per evaluated modality.
pub fn run_seeds(
    train_set: &[Sample],
    validation: &[Sample],
    model_config: &ModelConfig,
    config: &TrainConfig,
    seeds: &[u64],
) -> Result<Vec<SeedResult>> {
    let workers = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
        .min(seeds.len().max(1));
    let run = |seed: u64| -> Result<SeedResult> {
        let cfg = TrainConfig {
            seed,
            ..config.clone()
        };
        let out = train(train_set, validation, model_config, &cfg)?;
        Ok(SeedResult {
            seed,
            best_f1: out.best.iter().map(|b| (b.modality, b.micro_f1)).collect(),
        })
    };
    if workers <= 1 {
        return seeds.iter().map(|&s| run(s)).collect();
    }
    let chunks: Vec<Vec<u64>> = seeds
        .chunks(seeds.len().div_ceil(workers))
        .map(<[u64]>::to_vec)
        .collect();
    let results: Vec<Result<Vec<SeedResult>>> = std::thread::scope(|scope| {
        let handles: Vec<_> = chunks
            .iter()
            .map(|chunk| scope.spawn(|| chunk.iter().map(|&s| run(s)).collect::<Result<Vec<_>>>()))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("training thread panicked"))
            .collect()
    });
    let mut out = Vec::with_capacity(seeds.len());
    for r in results {
        out.extend(r?);
    }
    Ok(out)
}
