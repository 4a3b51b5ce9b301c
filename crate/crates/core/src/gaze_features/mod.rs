//! Gaze feature extraction from tracker frames.
//!
//! Nine per-frame base channels (four numeric, five binary, plus blink
//! intensity and the deltas) are summarised over sliding windows into a
//! 103-value vector. See `docs/feature_order.md` for the column order.

mod functionals;

use std::ops::Range;
use std::sync::OnceLock;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

pub use functionals::{least_squares, quantile_sorted, EpisodeSummary, NumericSummary};

use crate::error::{Error, Result};
use crate::ingest::{FrameRecord, Utterance};

pub const GAZE_FEATURE_DIM: usize = 103;

/// Thresholds and landmark selection for the derived base channels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GazeConfig {
    /// Indices of the left-eye pupil boundary landmarks.
    pub pupil_landmarks: Vec<usize>,
    /// AU45 intensity at or above which the eyes count as closed (0-5 scale).
    pub blink_threshold: f64,
    /// Maximum gaze-angle speed (rad/frame) that still counts as fixation.
    pub fixation_threshold: f64,
    /// Frames below this tracker confidence are masked like failed frames.
    pub min_confidence: f64,
}

impl Default for GazeConfig {
    fn default() -> Self {
        GazeConfig {
            pupil_landmarks: (20..28).collect(),
            blink_threshold: 1.0,
            fixation_threshold: 0.01,
            min_confidence: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaseGazeSeries {
    pub gaze_angle_x: Vec<f64>,
    pub gaze_angle_y: Vec<f64>,
    pub d_gaze_angle_x: Vec<f64>,
    pub d_gaze_angle_y: Vec<f64>,
    pub pupil_diameter: Vec<f64>,
    pub d_pupil_diameter: Vec<f64>,
    pub blink_intensity: Vec<f64>,
    pub dilation: Vec<bool>,
    pub constriction: Vec<bool>,
    pub eyes_closed: Vec<bool>,
    pub approach: Vec<bool>,
    pub fixation: Vec<bool>,
    pub validity: Vec<bool>,
}

impl BaseGazeSeries {
    pub fn len(&self) -> usize {
        self.validity.len()
    }

    pub fn is_empty(&self) -> bool {
        self.validity.is_empty()
    }
}

/// 2x the mean 3D distance of the selected landmarks to their centroid.
pub fn pupil_diameter(landmarks: &[[f64; 3]], indices: &[usize]) -> Result<f64> {
    if indices.is_empty() {
        return Err(Error::Config("pupil landmark set is empty".into()));
    }
    let mut points = Vec::with_capacity(indices.len());
    for &i in indices {
        let p = landmarks.get(i).ok_or_else(|| {
            Error::Shape(format!(
                "pupil landmark {i} requested but frame has {} landmarks",
                landmarks.len()
            ))
        })?;
        points.push(*p);
    }
    let n = points.len() as f64;
    let mut centroid = [0.0; 3];
    for p in &points {
        for a in 0..3 {
            centroid[a] += p[a] / n;
        }
    }
    let mean_radius = points
        .iter()
        .map(|p| {
            ((p[0] - centroid[0]).powi(2) + (p[1] - centroid[1]).powi(2) + (p[2] - centroid[2]).powi(2))
                .sqrt()
        })
        .sum::<f64>()
        / n;
    Ok(2.0 * mean_radius)
}

fn mean_depth(landmarks: &[[f64; 3]]) -> f64 {
    if landmarks.is_empty() {
        return 0.0;
    }
    landmarks.iter().map(|p| p[2]).sum::<f64>() / landmarks.len() as f64
}

/// First differences; zero at frame 0 and wherever either neighbour is masked.
fn deltas(values: &[f64], validity: &[bool]) -> Vec<f64> {
    let mut out = vec![0.0; values.len()];
    for t in 1..values.len() {
        if validity[t] && validity[t - 1] {
            out[t] = values[t] - values[t - 1];
        }
    }
    out
}

pub fn compute_base_series(frames: &[FrameRecord], config: &GazeConfig) -> Result<BaseGazeSeries> {
    if frames.is_empty() {
        return Err(Error::NoValidFrames);
    }
    let validity: Vec<bool> = frames
        .iter()
        .map(|f| f.success && f.confidence >= config.min_confidence)
        .collect();
    if !validity.iter().any(|&v| v) {
        return Err(Error::NoValidFrames);
    }

    let gaze_angle_x: Vec<f64> = frames.iter().map(|f| f.gaze_angle_x).collect();
    let gaze_angle_y: Vec<f64> = frames.iter().map(|f| f.gaze_angle_y).collect();
    let pupil: Vec<f64> = frames
        .iter()
        .zip(&validity)
        .map(|(f, &ok)| {
            if ok {
                pupil_diameter(&f.eye_landmarks, &config.pupil_landmarks)
            } else {
                // failed frames often carry zeroed landmarks; value is masked anyway
                Ok(pupil_diameter(&f.eye_landmarks, &config.pupil_landmarks).unwrap_or(0.0))
            }
        })
        .collect::<Result<_>>()?;
    let depth: Vec<f64> = frames.iter().map(|f| mean_depth(&f.eye_landmarks)).collect();

    let d_gaze_angle_x = deltas(&gaze_angle_x, &validity);
    let d_gaze_angle_y = deltas(&gaze_angle_y, &validity);
    let d_pupil_diameter = deltas(&pupil, &validity);
    let d_depth = deltas(&depth, &validity);

    let blink_intensity: Vec<f64> = frames.iter().map(|f| f.au45_intensity).collect();
    let dilation = d_pupil_diameter.iter().map(|&d| d > 0.0).collect();
    let constriction = d_pupil_diameter.iter().map(|&d| d < 0.0).collect();
    let eyes_closed = blink_intensity
        .iter()
        .map(|&b| b >= config.blink_threshold)
        .collect();
    let approach = d_depth.iter().map(|&d| d > 0.0).collect();
    let fixation = d_gaze_angle_x
        .iter()
        .zip(&d_gaze_angle_y)
        .map(|(dx, dy)| dx.hypot(*dy) <= config.fixation_threshold)
        .collect();

    Ok(BaseGazeSeries {
        gaze_angle_x,
        gaze_angle_y,
        d_gaze_angle_x,
        d_gaze_angle_y,
        pupil_diameter: pupil,
        d_pupil_diameter,
        blink_intensity,
        dilation,
        constriction,
        eyes_closed,
        approach,
        fixation,
        validity,
    })
}

const FULL_STATS: [&str; 12] = [
    "min", "max", "mean", "median", "q1", "q3", "std", "iqr_1_2", "iqr_2_3", "iqr_1_3", "lr_intercept",
    "lr_slope",
];
const DELTA_PUPIL_STATS: [&str; 11] = [
    "min", "max", "mean", "q1", "q3", "std", "iqr_1_2", "iqr_2_3", "iqr_1_3", "lr_intercept", "lr_slope",
];
const BLINK_STATS: [&str; 10] = [
    "max", "mean", "median", "q3", "std", "iqr_1_2", "iqr_2_3", "iqr_1_3", "lr_intercept", "lr_slope",
];
const PUPIL_EPISODE_STATS: [&str; 4] = ["time_ratio", "mean_time", "max_time", "total_time"];
const APPROACH_EPISODE_STATS: [&str; 4] = ["time_ratio", "mean_time", "max_time", "median_time"];
const BLINK_FIX_EPISODE_STATS: [&str; 5] =
    ["time_ratio", "min_time", "max_time", "mean_time", "median_time"];

/// Column names of the 103-value vector, in output order.
pub fn feature_names() -> &'static [String] {
    static NAMES: OnceLock<Vec<String>> = OnceLock::new();
    NAMES.get_or_init(|| {
        let mut names = Vec::with_capacity(GAZE_FEATURE_DIM);
        let mut push = |base: &str, stats: &[&str]| {
            names.extend(stats.iter().map(|s| format!("{base}_{s}")));
        };
        for base in [
            "gaze_angle_x",
            "gaze_angle_y",
            "delta_gaze_angle_x",
            "delta_gaze_angle_y",
            "pupil_diameter_mm",
        ] {
            push(base, &FULL_STATS);
        }
        push("delta_pupil_diameter_mm", &DELTA_PUPIL_STATS);
        push("eye_blink_intensity", &BLINK_STATS);
        push("pupil_dilation", &PUPIL_EPISODE_STATS);
        push("pupil_constriction", &PUPIL_EPISODE_STATS);
        push("gaze_approach", &APPROACH_EPISODE_STATS);
        push("eyes_closed", &BLINK_FIX_EPISODE_STATS);
        push("gaze_fixation", &BLINK_FIX_EPISODE_STATS);
        debug_assert_eq!(names.len(), GAZE_FEATURE_DIM);
        names
    })
}

/// The fixed-length gaze feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct GazeFeatureVector(pub [f64; GAZE_FEATURE_DIM]);

impl GazeFeatureVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn to_array(&self) -> Array1<f64> {
        Array1::from_iter(self.0.iter().copied())
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        feature_names()
            .iter()
            .position(|n| n == name)
            .map(|i| self.0[i])
    }
}

fn push_summary(out: &mut Vec<f64>, s: &NumericSummary, stats: &[&str]) {
    for stat in stats {
        out.push(match *stat {
            "min" => s.min,
            "max" => s.max,
            "mean" => s.mean,
            "median" => s.median,
            "q1" => s.q1,
            "q3" => s.q3,
            "std" => s.std,
            "iqr_1_2" => s.iqr_1_2(),
            "iqr_2_3" => s.iqr_2_3(),
            "iqr_1_3" => s.iqr_1_3(),
            "lr_intercept" => s.lr_intercept,
            "lr_slope" => s.lr_slope,
            other => unreachable!("unknown statistic {other}"),
        });
    }
}

fn push_episodes(out: &mut Vec<f64>, e: &EpisodeSummary, stats: &[&str]) {
    for stat in stats {
        out.push(match *stat {
            "time_ratio" => e.time_ratio,
            "min_time" => e.min_time,
            "max_time" => e.max_time,
            "mean_time" => e.mean_time,
            "median_time" => e.median_time,
            "total_time" => e.total_time,
            other => unreachable!("unknown episode statistic {other}"),
        });
    }
}

/// Computes all functionals over the valid frames of `window`.
///
/// Masked frames are dropped before any statistic is taken; regression uses
/// the frame offset from the window start as x, so the intercept is the
/// fitted value at the first frame of the window. Episode runs are taken
/// over the remaining valid frames. Fails with [`Error::NoValidFrames`] when
/// the window holds no valid frame.
pub fn apply_functionals(
    series: &BaseGazeSeries,
    window: Range<usize>,
    fps: f64,
) -> Result<GazeFeatureVector> {
    if window.is_empty() || window.end > series.len() {
        return Err(Error::Shape(format!(
            "window {window:?} invalid for series of length {}",
            series.len()
        )));
    }
    let idx: Vec<usize> = window.clone().filter(|&t| series.validity[t]).collect();
    if idx.is_empty() {
        return Err(Error::NoValidFrames);
    }
    let positions: Vec<f64> = idx.iter().map(|&t| (t - window.start) as f64).collect();
    let pick = |channel: &[f64]| -> Vec<f64> { idx.iter().map(|&t| channel[t]).collect() };
    let pick_mask = |channel: &[bool]| -> Vec<bool> { idx.iter().map(|&t| channel[t]).collect() };
    let summary = |channel: &[f64]| NumericSummary::compute(&positions, &pick(channel));
    let episodes = |channel: &[bool]| EpisodeSummary::compute(&pick_mask(channel), fps);

    let mut out = Vec::with_capacity(GAZE_FEATURE_DIM);
    for channel in [
        &series.gaze_angle_x,
        &series.gaze_angle_y,
        &series.d_gaze_angle_x,
        &series.d_gaze_angle_y,
        &series.pupil_diameter,
    ] {
        push_summary(&mut out, &summary(channel), &FULL_STATS);
    }
    push_summary(&mut out, &summary(&series.d_pupil_diameter), &DELTA_PUPIL_STATS);
    push_summary(&mut out, &summary(&series.blink_intensity), &BLINK_STATS);
    push_episodes(&mut out, &episodes(&series.dilation), &PUPIL_EPISODE_STATS);
    push_episodes(&mut out, &episodes(&series.constriction), &PUPIL_EPISODE_STATS);
    push_episodes(&mut out, &episodes(&series.approach), &APPROACH_EPISODE_STATS);
    push_episodes(&mut out, &episodes(&series.eyes_closed), &BLINK_FIX_EPISODE_STATS);
    push_episodes(&mut out, &episodes(&series.fixation), &BLINK_FIX_EPISODE_STATS);

    let values: [f64; GAZE_FEATURE_DIM] = out
        .try_into()
        .expect("functional table yields exactly 103 values");
    Ok(GazeFeatureVector(values))
}

/// Window length in frames for a given frame rate (one second, at least 1).
pub fn window_length(fps: f64) -> usize {
    (fps.round() as usize).max(1)
}

/// Centred window for frame `i`. Half-open: for length `L` it covers
/// `[i - L/2, i - L/2 + L)`, shifted inward at the sequence edges so it keeps
/// `min(L, k)` frames.
pub fn window_for_frame(i: usize, len: usize, k: usize) -> Range<usize> {
    let span = len.min(k);
    let start = i.saturating_sub(len / 2).min(k - span);
    start..start + span
}

/// One 103-value row per frame; row `i` summarises the window centred on
/// frame `i`. Windows with no valid frame copy the nearest computed row
/// (earlier row on ties).
pub fn extract_windowed_frames(
    frames: &[FrameRecord],
    fps: f64,
    config: &GazeConfig,
) -> Result<Array2<f64>> {
    let series = compute_base_series(frames, config)?;
    let k = series.len();
    let len = window_length(fps);
    let mut rows: Vec<Option<GazeFeatureVector>> = Vec::with_capacity(k);
    for i in 0..k {
        match apply_functionals(&series, window_for_frame(i, len, k), fps) {
            Ok(v) => rows.push(Some(v)),
            Err(Error::NoValidFrames) => rows.push(None),
            Err(e) => return Err(e),
        }
    }
    let filled: Vec<usize> = (0..k).filter(|&i| rows[i].is_some()).collect();
    let mut out = Array2::zeros((k, GAZE_FEATURE_DIM));
    for i in 0..k {
        let src = if rows[i].is_some() {
            i
        } else {
            *filled
                .iter()
                .min_by_key(|&&j| (j.abs_diff(i), j))
                .expect("at least one valid frame")
        };
        let row = rows[src].as_ref().expect("source row present");
        out.row_mut(i)
            .iter_mut()
            .zip(row.as_slice())
            .for_each(|(o, v)| *o = *v);
    }
    Ok(out)
}

pub fn extract_windowed(utterance: &Utterance, config: &GazeConfig) -> Result<Array2<f64>> {
    extract_windowed_frames(&utterance.frames, utterance.fps, config)
}

/// Mean of the windowed rows over the whole utterance.
pub fn extract_averaged(utterance: &Utterance, config: &GazeConfig) -> Result<GazeFeatureVector> {
    let windowed = extract_windowed(utterance, config)?;
    Ok(average_rows(&windowed))
}

pub fn average_rows(windowed: &Array2<f64>) -> GazeFeatureVector {
    let k = windowed.nrows() as f64;
    let mut out = [0.0; GAZE_FEATURE_DIM];
    for row in windowed.rows() {
        for (o, v) in out.iter_mut().zip(row.iter()) {
            *o += v;
        }
    }
    out.iter_mut().for_each(|v| *v /= k);
    GazeFeatureVector(out)
}
