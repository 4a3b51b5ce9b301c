//! Audio encoder, gaze-enhanced visual encoder (early or model-level
//! fusion) and the modality-agnostic classifier.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaze_features::GAZE_FEATURE_DIM;
use crate::ingest::NUM_CLASSES;
use crate::nn::{softmax_rows, Dense, Graph, Gru, ParamStore, SeqBatch, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Audio,
    #[serde(alias = "video")]
    Visual,
}

impl Modality {
    pub const BOTH: [Modality; 2] = [Modality::Audio, Modality::Visual];
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Modality::Audio => "audio",
            Modality::Visual => "video",
        })
    }
}

impl FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "audio" => Ok(Modality::Audio),
            "video" | "visual" => Ok(Modality::Visual),
            other => Err(Error::Config(format!("unknown modality {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    Early,
    ModelLevel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GazeMode {
    None,
    Windowed,
    Averaged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub visual_dim: usize,
    pub gaze_dim: usize,
    pub audio_dim: usize,
    pub embedding_dim: usize,
    pub classifier_hidden: usize,
    pub num_classes: usize,
    pub fusion_mode: FusionMode,
    pub gaze_mode: GazeMode,
    /// Uniformly subsample longer frame sequences to this many frames.
    pub max_seq_len: Option<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            visual_dim: 4096,
            gaze_dim: GAZE_FEATURE_DIM,
            audio_dim: 88,
            embedding_dim: 120,
            classifier_hidden: 120,
            num_classes: NUM_CLASSES,
            fusion_mode: FusionMode::ModelLevel,
            gaze_mode: GazeMode::None,
            max_seq_len: None,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("visual_dim", self.visual_dim),
            ("audio_dim", self.audio_dim),
            ("embedding_dim", self.embedding_dim),
            ("classifier_hidden", self.classifier_hidden),
            ("num_classes", self.num_classes),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if self.gaze_mode == GazeMode::Averaged && self.fusion_mode == FusionMode::Early {
            return Err(Error::Config(
                "averaged gaze features require model-level fusion".into(),
            ));
        }
        if self.gaze_mode != GazeMode::None && self.gaze_dim == 0 {
            return Err(Error::Config("gaze_dim must be at least 1 when gaze is used".into()));
        }
        if self.max_seq_len == Some(0) {
            return Err(Error::Config("max_seq_len must be at least 1".into()));
        }
        Ok(())
    }

    fn visual_encoder_input(&self) -> usize {
        match (self.fusion_mode, self.gaze_mode) {
            (FusionMode::Early, GazeMode::Windowed) => self.visual_dim + self.gaze_dim,
            _ => self.visual_dim,
        }
    }

    fn uses_gaze_encoder(&self) -> bool {
        self.fusion_mode == FusionMode::ModelLevel && self.gaze_mode != GazeMode::None
    }
}

/// Gaze input for one utterance, in the shape its mode calls for.
#[derive(Debug, Clone, PartialEq)]
pub enum GazeInput {
    None,
    Windowed(Array2<f64>),
    Averaged(Array1<f64>),
}

/// One model-ready utterance (already standardised).
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub label: usize,
    pub audio: Array1<f64>,
    pub visual: Array2<f64>,
    pub gaze: GazeInput,
}

/// Parameter-name prefixes, one per sub-network.
pub const MODULE_PREFIXES: [&str; 5] = [
    "audio_encoder",
    "visual_encoder",
    "gaze_encoder",
    "projection",
    "classifier",
];

#[derive(Debug, Clone)]
pub struct EmotionModel {
    pub config: ModelConfig,
    pub params: ParamStore,
    audio_encoder: Gru,
    visual_encoder: Gru,
    gaze_encoder: Option<Gru>,
    projection: Option<Dense>,
    classifier_gru: Gru,
    classifier_out: Dense,
}

fn subsample_indices(k: usize, max: Option<usize>) -> Option<Vec<usize>> {
    match max {
        Some(m) if k > m => Some((0..m).map(|j| j * k / m).collect()),
        _ => None,
    }
}

impl EmotionModel {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let e = config.embedding_dim;
        let audio_encoder = Gru::new(&mut params, "audio_encoder", config.audio_dim, e, &mut rng);
        let visual_encoder = Gru::new(
            &mut params,
            "visual_encoder",
            config.visual_encoder_input(),
            e,
            &mut rng,
        );
        let (gaze_encoder, projection) = if config.uses_gaze_encoder() {
            (
                Some(Gru::new(&mut params, "gaze_encoder", config.gaze_dim, e, &mut rng)),
                Some(Dense::new(&mut params, "projection", 2 * e, e, &mut rng)),
            )
        } else {
            (None, None)
        };
        let classifier_gru = Gru::new(
            &mut params,
            "classifier.gru",
            e,
            config.classifier_hidden,
            &mut rng,
        );
        let classifier_out = Dense::new(
            &mut params,
            "classifier.out",
            config.classifier_hidden,
            config.num_classes,
            &mut rng,
        );
        Ok(EmotionModel {
            config,
            params,
            audio_encoder,
            visual_encoder,
            gaze_encoder,
            projection,
            classifier_gru,
            classifier_out,
        })
    }

    pub fn embedding_dim(&self) -> usize {
        self.config.embedding_dim
    }

    pub fn audio_encoder(&self) -> &Gru {
        &self.audio_encoder
    }

    pub fn visual_encoder(&self) -> &Gru {
        &self.visual_encoder
    }

    pub fn gaze_encoder(&self) -> Option<&Gru> {
        self.gaze_encoder.as_ref()
    }

    pub fn projection(&self) -> Option<&Dense> {
        self.projection.as_ref()
    }

    pub fn classifier_output(&self) -> &Dense {
        &self.classifier_out
    }

    /// Parameter counts per sub-network, in [`MODULE_PREFIXES`] order.
    pub fn parameter_counts(&self) -> Vec<(&'static str, usize)> {
        MODULE_PREFIXES
            .iter()
            .map(|p| (*p, self.params.count_with_prefix(p)))
            .collect()
    }

    /// Audio embeddings for a batch, `n x E`.
    pub fn encode_audio_batch(&self, g: &mut Graph, samples: &[&Sample]) -> Result<Var> {
        let m = self.config.audio_dim;
        let mut x = Array2::zeros((samples.len(), m));
        for (i, s) in samples.iter().enumerate() {
            if s.audio.len() != m {
                return Err(Error::Shape(format!(
                    "{}: audio has {} features, model expects {m}",
                    s.id,
                    s.audio.len()
                )));
            }
            x.row_mut(i).assign(&s.audio);
        }
        self.audio_encoder
            .last(g, &self.params, &SeqBatch::single_step(x))
    }

    fn frame_rows(&self, s: &Sample, gaze_rows: Option<&Array2<f64>>) -> Result<Array2<f64>> {
        let k = s.visual.nrows();
        if s.visual.ncols() != self.config.visual_dim {
            return Err(Error::Shape(format!(
                "{}: visual has {} features, model expects {}",
                s.id,
                s.visual.ncols(),
                self.config.visual_dim
            )));
        }
        let rows = match gaze_rows {
            None => s.visual.clone(),
            Some(gz) => {
                if gz.nrows() != k {
                    return Err(Error::Shape(format!(
                        "{}: {k} visual rows but {} gaze rows",
                        s.id,
                        gz.nrows()
                    )));
                }
                ndarray::concatenate(Axis(1), &[s.visual.view(), gz.view()])
                    .expect("row counts checked")
            }
        };
        Ok(match subsample_indices(k, self.config.max_seq_len) {
            Some(idx) => rows.select(Axis(0), &idx),
            None => rows,
        })
    }

    fn gaze_matrix<'a>(&self, s: &'a Sample) -> Result<&'a Array2<f64>> {
        match &s.gaze {
            GazeInput::Windowed(m) if m.ncols() == self.config.gaze_dim => Ok(m),
            other => Err(Error::Shape(format!(
                "{}: expected windowed gaze of width {}, got {}",
                s.id,
                self.config.gaze_dim,
                describe_gaze(other)
            ))),
        }
    }

    /// Visual (gaze-enhanced per config) embeddings for a batch, `n x E`.
    pub fn encode_visual_batch(&self, g: &mut Graph, samples: &[&Sample]) -> Result<Var> {
        let cfg = &self.config;
        match (cfg.fusion_mode, cfg.gaze_mode) {
            (_, GazeMode::None) => {
                let seqs = samples
                    .iter()
                    .map(|s| self.frame_rows(s, None))
                    .collect::<Result<Vec<_>>>()?;
                self.run_visual(g, &seqs)
            }
            (FusionMode::Early, GazeMode::Windowed) => {
                let seqs = samples
                    .iter()
                    .map(|s| self.frame_rows(s, Some(self.gaze_matrix(s)?)))
                    .collect::<Result<Vec<_>>>()?;
                self.run_visual(g, &seqs)
            }
            (FusionMode::Early, GazeMode::Averaged) => Err(Error::Config(
                "averaged gaze features require model-level fusion".into(),
            )),
            (FusionMode::ModelLevel, mode) => {
                let seqs = samples
                    .iter()
                    .map(|s| self.frame_rows(s, None))
                    .collect::<Result<Vec<_>>>()?;
                let e_v = self.run_visual(g, &seqs)?;
                let gaze_enc = self.gaze_encoder.as_ref().expect("gaze encoder present");
                let gaze_seq = if mode == GazeMode::Windowed {
                    let gz = samples
                        .iter()
                        .map(|s| {
                            let m = self.gaze_matrix(s)?;
                            Ok(match subsample_indices(m.nrows(), cfg.max_seq_len) {
                                Some(idx) => m.select(Axis(0), &idx),
                                None => m.clone(),
                            })
                        })
                        .collect::<Result<Vec<_>>>()?;
                    let views: Vec<_> = gz.iter().map(|m| m.view()).collect();
                    SeqBatch::from_sequences(&views)?
                } else {
                    let mut x = Array2::zeros((samples.len(), cfg.gaze_dim));
                    for (i, s) in samples.iter().enumerate() {
                        match &s.gaze {
                            GazeInput::Averaged(v) if v.len() == cfg.gaze_dim => {
                                x.row_mut(i).assign(v)
                            }
                            other => {
                                return Err(Error::Shape(format!(
                                    "{}: expected averaged gaze of width {}, got {}",
                                    s.id,
                                    cfg.gaze_dim,
                                    describe_gaze(other)
                                )))
                            }
                        }
                    }
                    SeqBatch::single_step(x)
                };
                let e_g = gaze_enc.last(g, &self.params, &gaze_seq)?;
                let joint = g.concat_cols(e_v, e_g);
                let proj = self.projection.as_ref().expect("projection present");
                Ok(proj.forward(g, &self.params, joint))
            }
        }
    }

    fn run_visual(&self, g: &mut Graph, seqs: &[Array2<f64>]) -> Result<Var> {
        let views: Vec<_> = seqs.iter().map(|m| m.view()).collect();
        let batch = SeqBatch::from_sequences(&views)?;
        self.visual_encoder.last(g, &self.params, &batch)
    }

    pub fn encode_batch(&self, g: &mut Graph, samples: &[&Sample], modality: Modality) -> Result<Var> {
        match modality {
            Modality::Audio => self.encode_audio_batch(g, samples),
            Modality::Visual => self.encode_visual_batch(g, samples),
        }
    }

    /// Classifier logits `n x C` for embeddings `n x E`.
    pub fn classifier_logits(&self, g: &mut Graph, embeddings: Var) -> Result<Var> {
        let hidden = self.classifier_gru.step(g, &self.params, embeddings, None)?;
        Ok(self.classifier_out.forward(g, &self.params, hidden))
    }

    /// Class probabilities for a batch from one modality.
    pub fn predict_proba(&self, samples: &[&Sample], modality: Modality) -> Result<Array2<f64>> {
        let mut g = Graph::new();
        let e = self.encode_batch(&mut g, samples, modality)?;
        let logits = self.classifier_logits(&mut g, e)?;
        Ok(softmax_rows(g.value(logits)))
    }

    pub fn embed(&self, samples: &[&Sample], modality: Modality) -> Result<Array2<f64>> {
        let mut g = Graph::new();
        let e = self.encode_batch(&mut g, samples, modality)?;
        Ok(g.value(e).clone())
    }

    /// `f_a(x_a)` for a single audio vector.
    pub fn encode_audio(&self, x_a: &Array1<f64>) -> Result<Array1<f64>> {
        let s = Sample {
            id: "audio".into(),
            label: 0,
            audio: x_a.clone(),
            visual: Array2::zeros((1, self.config.visual_dim)),
            gaze: GazeInput::None,
        };
        Ok(self.embed(&[&s], Modality::Audio)?.row(0).to_owned())
    }

    /// Visual embedding for one utterance under the configured fusion mode.
    pub fn encode_visual(&self, x_v: &Array2<f64>, gaze: GazeInput) -> Result<Array1<f64>> {
        let s = Sample {
            id: "visual".into(),
            label: 0,
            audio: Array1::zeros(self.config.audio_dim),
            visual: x_v.clone(),
            gaze,
        };
        Ok(self.embed(&[&s], Modality::Visual)?.row(0).to_owned())
    }

    /// `f_vg([x_v; x_g])`; the model must be configured for early fusion.
    pub fn encode_visual_early(&self, x_v: &Array2<f64>, x_g: &Array2<f64>) -> Result<Array1<f64>> {
        if self.config.fusion_mode != FusionMode::Early {
            return Err(Error::Config("model is not configured for early fusion".into()));
        }
        if x_v.nrows() != x_g.nrows() {
            return Err(Error::Shape(format!(
                "{} visual rows vs {} gaze rows",
                x_v.nrows(),
                x_g.nrows()
            )));
        }
        let gaze = if self.config.gaze_mode == GazeMode::None {
            GazeInput::None
        } else {
            GazeInput::Windowed(x_g.clone())
        };
        self.encode_visual(x_v, gaze)
    }

    /// `f_p([f_v(x_v); f_g(x_g)])`; the model must use model-level fusion.
    pub fn encode_visual_model_level(&self, x_v: &Array2<f64>, gaze: GazeInput) -> Result<Array1<f64>> {
        if !self.config.uses_gaze_encoder() {
            return Err(Error::Config(
                "model is not configured for model-level gaze fusion".into(),
            ));
        }
        self.encode_visual(x_v, gaze)
    }

    /// Softmax class probabilities for one embedding.
    pub fn classify(&self, e: &Array1<f64>) -> Result<Array1<f64>> {
        let mut g = Graph::new();
        let x = g.constant(e.clone().insert_axis(Axis(0)));
        let logits = self.classifier_logits(&mut g, x)?;
        Ok(softmax_rows(g.value(logits)).row(0).to_owned())
    }
}

fn describe_gaze(g: &GazeInput) -> String {
    match g {
        GazeInput::None => "no gaze input".into(),
        GazeInput::Windowed(m) => format!("windowed {}x{}", m.nrows(), m.ncols()),
        GazeInput::Averaged(v) => format!("averaged vector of {}", v.len()),
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}
