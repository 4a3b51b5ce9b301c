//! Gaze-enhanced crossmodal emotion embeddings.
//!
//! Face-tracker output is turned into statistical gaze features; audio and
//! gaze-enhanced visual recurrent encoders are trained into one embedding
//! space with intra- and inter-modal triplet losses plus a shared
//! classifier, and evaluated from a single modality at test time.

pub mod analysis;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod error;
pub mod evaluation;
pub mod gaze_features;
pub mod ingest;
pub mod model;
pub mod nn;
pub mod synthetic;
pub mod trainer;
pub mod triplet;

pub use checkpoint::Checkpoint;
pub use config::RunConfig;
pub use error::{Error, Result};
pub use gaze_features::{GazeConfig, GazeFeatureVector, GAZE_FEATURE_DIM};
pub use ingest::{Emotion, FrameRecord, Utterance, NUM_CLASSES};
pub use model::{EmotionModel, FusionMode, GazeMode, Modality, ModelConfig, Sample};
pub use trainer::{TrainConfig, TrainMode};
pub use triplet::{EmbeddingBatch, TripletOptions};
