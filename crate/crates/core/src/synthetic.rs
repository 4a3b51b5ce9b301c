//! Seeded synthetic datasets with a tunable amount of information shared
//! between the audio, visual and gaze streams.
//!
//! Every class owns a latent vector. Each utterance perturbs it with a
//! deviation that is a blend of one draw shared by all modalities and one
//! private draw per modality (`shared_strength` sets the blend). Audio and
//! per-frame visual features are affine maps of the modality latent plus
//! observation noise. Gaze is produced as tracker frames (gaze angles, eye
//! landmarks, blink intensity) whose kinematics depend on the gaze latent,
//! so it goes through the regular feature extractor.

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{FrameRecord, Utterance};

/// Eye landmarks per frame (both eyes, 28 each).
pub const EYE_LANDMARKS: usize = 56;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub num_classes: usize,
    pub utterances_per_class: usize,
    /// Relative class frequencies; balanced when absent.
    pub class_weights: Option<Vec<f64>>,
    pub min_frames: usize,
    pub max_frames: usize,
    pub fps: f64,
    pub visual_dim: usize,
    pub audio_dim: usize,
    pub latent_dim: usize,
    /// 0 = modality-private utterance deviations, 1 = one shared deviation.
    pub shared_strength: f64,
    pub noise_scale: f64,
    /// Gain of the modality-private variation relative to the shared one.
    pub private_scale: f64,
    /// Scale of the class latent in each stream.
    pub audio_signal: f64,
    pub visual_signal: f64,
    pub gaze_signal: f64,
    /// Extra observation noise per stream, multiplied by `noise_scale`.
    pub audio_noise: f64,
    pub visual_noise: f64,
    /// Probability that a frame reports a failed face detection.
    pub frame_failure_rate: f64,
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_classes: 7,
            utterances_per_class: 100,
            class_weights: None,
            min_frames: 8,
            max_frames: 16,
            fps: 10.0,
            visual_dim: 16,
            audio_dim: 88,
            latent_dim: 8,
            shared_strength: 0.8,
            noise_scale: 1.0,
            private_scale: 4.0,
            audio_signal: 1.0,
            visual_signal: 1.0,
            gaze_signal: 1.0,
            audio_noise: 0.5,
            visual_noise: 1.0,
            frame_failure_rate: 0.02,
            validation_fraction: 0.2,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(0.0..=1.0).contains(&self.shared_strength) {
            return bad("shared_strength must lie in [0, 1]");
        }
        if self.num_classes == 0
            || self.visual_dim == 0
            || self.audio_dim == 0
            || self.latent_dim == 0
            || self.min_frames == 0
        {
            return bad("dimensions and frame counts must be at least 1");
        }
        if self.max_frames < self.min_frames {
            return bad("max_frames must be >= min_frames");
        }
        if !(self.fps > 0.0) {
            return bad("fps must be positive");
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return bad("validation_fraction must lie in [0, 1)");
        }
        if !(0.0..1.0).contains(&self.frame_failure_rate) {
            return bad("frame_failure_rate must lie in [0, 1)");
        }
        if let Some(w) = &self.class_weights {
            if w.len() != self.num_classes || w.iter().any(|&v| !(v >= 0.0)) || w.iter().sum::<f64>() <= 0.0 {
                return bad("class_weights must have one non-negative weight per class");
            }
        }
        Ok(())
    }

    /// Number of utterances drawn for each class.
    pub fn class_counts(&self) -> Vec<usize> {
        let total = self.utterances_per_class * self.num_classes;
        match &self.class_weights {
            None => vec![self.utterances_per_class; self.num_classes],
            Some(w) => {
                let sum: f64 = w.iter().sum();
                w.iter()
                    .map(|v| ((v / sum) * total as f64).round() as usize)
                    .collect()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub train: Vec<Utterance>,
    pub validation: Vec<Utterance>,
}

fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.sample::<f64, _>(StandardNormal) * scale)
}

fn gaussian_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Array1<f64> {
    Array1::from_shape_fn(n, |_| rng.sample::<f64, _>(StandardNormal) * scale)
}

const GAZE_FACTORS: usize = 6;

struct Generator {
    class_latents: Vec<Array1<f64>>,
    audio_map: Array2<f64>,
    audio_offset: Array1<f64>,
    visual_map: Array2<f64>,
    visual_offset: Array1<f64>,
    gaze_map: Array2<f64>,
    audio_private: Array2<f64>,
    visual_private: Array2<f64>,
    gaze_private: Array2<f64>,
}

fn eye_landmarks(center: [f64; 2], pupil_radius: f64, depth: f64) -> Vec<[f64; 3]> {
    let ring = |n: usize, rx: f64, ry: f64| -> Vec<[f64; 3]> {
        (0..n)
            .map(|j| {
                let a = j as f64 * std::f64::consts::TAU / n as f64;
                [center[0] + rx * a.cos(), center[1] + ry * a.sin(), depth]
            })
            .collect()
    };
    let mut out = ring(8, 14.0, 6.0);
    out.extend(ring(12, 5.5, 5.5));
    out.extend(ring(8, pupil_radius, pupil_radius));
    out
}

impl Generator {
    fn new(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Self {
        let l = cfg.latent_dim;
        let map_scale = 1.0 / (l as f64).sqrt();
        Generator {
            class_latents: (0..cfg.num_classes).map(|_| gaussian_vec(rng, l, 1.0)).collect(),
            audio_map: gaussian_matrix(rng, cfg.audio_dim, l, map_scale),
            audio_offset: gaussian_vec(rng, cfg.audio_dim, 1.0),
            visual_map: gaussian_matrix(rng, cfg.visual_dim, l, map_scale),
            visual_offset: gaussian_vec(rng, cfg.visual_dim, 1.0),
            gaze_map: gaussian_matrix(rng, GAZE_FACTORS, l, map_scale),
            audio_private: gaussian_matrix(rng, cfg.audio_dim, l, map_scale),
            visual_private: gaussian_matrix(rng, cfg.visual_dim, l, map_scale),
            gaze_private: gaussian_matrix(rng, GAZE_FACTORS, l, map_scale),
        }
    }

    fn utterance(&self, cfg: &SynthConfig, rng: &mut ChaCha8Rng, id: String, label: usize) -> Utterance {
        let l = cfg.latent_dim;
        let noise = cfg.noise_scale;
        let rho = cfg.shared_strength;
        let shared = gaussian_vec(rng, l, 1.0);
        // class signal plus shared deviation through the modality's class
        // map, private deviation through its own map
        let observe = |map: &Array2<f64>, private_map: &Array2<f64>, signal: f64, rng: &mut ChaCha8Rng| {
            let latent = &self.class_latents[label] * signal + &shared * (rho.sqrt() * noise);
            let private = gaussian_vec(rng, l, (1.0 - rho).sqrt() * noise * cfg.private_scale);
            map.dot(&latent) + private_map.dot(&private)
        };
        let audio_obs = observe(&self.audio_map, &self.audio_private, cfg.audio_signal, rng);
        let visual_obs = observe(&self.visual_map, &self.visual_private, cfg.visual_signal, rng);
        let g = observe(&self.gaze_map, &self.gaze_private, cfg.gaze_signal, rng);

        let audio_features = audio_obs
            + &self.audio_offset
            + gaussian_vec(rng, cfg.audio_dim, noise * cfg.audio_noise);

        let k = rng.gen_range(cfg.min_frames..=cfg.max_frames);
        let visual_mean = visual_obs + &self.visual_offset;
        let mut visual_features = Array2::zeros((k, cfg.visual_dim));
        for mut row in visual_features.rows_mut() {
            row.assign(&(&visual_mean + &gaussian_vec(rng, cfg.visual_dim, noise * cfg.visual_noise)));
        }

        let gaze_x = 0.15 * g[0];
        let gaze_y = 0.10 * g[1];
        let jitter = 0.01 * (0.5 * g[2]).exp();
        let pupil = 1.6 + 0.15 * g[3];
        let depth_slope = 1.5 * g[4];
        let blink = (1.0 + 0.8 * g[5]).clamp(0.0, 5.0);
        let frame_noise = noise.max(1e-3);

        let mut frames = Vec::with_capacity(k);
        for t in 0..k {
            let n = |rng: &mut ChaCha8Rng| rng.sample::<f64, _>(StandardNormal);
            let failed = rng.gen::<f64>() < cfg.frame_failure_rate;
            let radius = (pupil + 0.05 * frame_noise * n(rng)).max(0.2);
            let depth = 600.0 + depth_slope * t as f64 + 0.5 * frame_noise * n(rng);
            let mut lmk = eye_landmarks([-30.0, 0.0], radius, depth);
            lmk.extend(eye_landmarks([30.0, 0.0], radius, depth));
            frames.push(FrameRecord {
                frame_index: t as u64 + 1,
                timestamp: t as f64 / cfg.fps,
                confidence: if failed { 0.0 } else { rng.gen_range(0.85..1.0) },
                success: !failed,
                gaze_angle_x: gaze_x + jitter * frame_noise * n(rng),
                gaze_angle_y: gaze_y + jitter * frame_noise * n(rng),
                eye_landmarks: lmk,
                au45_intensity: (blink + 0.5 * frame_noise * n(rng)).clamp(0.0, 5.0),
            });
        }
        if frames.iter().all(|f| !f.success) {
            frames[0].success = true;
            frames[0].confidence = 0.9;
        }

        Utterance {
            id,
            frames,
            fps: cfg.fps,
            visual_features,
            audio_features,
            label,
        }
    }
}

/// Generates a stratified train/validation split. Identical configs produce
/// identical datasets.
pub fn generate(config: &SynthConfig) -> Result<SyntheticDataset> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let gen = Generator::new(config, &mut rng);

    let mut train = Vec::new();
    let mut validation = Vec::new();
    let mut next_id = 0usize;
    for (label, &count) in config.class_counts().iter().enumerate() {
        let mut utts: Vec<Utterance> = (0..count)
            .map(|_| {
                let id = format!("utt_{next_id:05}");
                next_id += 1;
                gen.utterance(config, &mut rng, id, label)
            })
            .collect();
        utts.shuffle(&mut rng);
        let n_val = (count as f64 * config.validation_fraction).round() as usize;
        let rest = utts.split_off(n_val.min(count));
        validation.extend(utts);
        train.extend(rest);
    }
    train.sort_by(|a, b| a.id.cmp(&b.id));
    validation.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(SyntheticDataset { train, validation })
}
