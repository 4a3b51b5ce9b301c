//! Readers and writers for face-tracker CSVs, numeric feature matrices and
//! the dataset manifest.
//!
//! Tracker CSVs follow the column naming of OpenFace's `FeatureExtraction`
//! output (leading whitespace in headers is ignored). Only the columns needed
//! for gaze features are read; anything else in the file is skipped.

use std::fmt;
use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};

pub const NUM_CLASSES: usize = 7;

/// The seven emotion categories, in class-id order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Emotion {
    Neutral,
    Happy,
    Sad,
    Anger,
    Disgust,
    Fear,
    Surprise,
}

impl Emotion {
    pub const ALL: [Emotion; NUM_CLASSES] = [
        Emotion::Neutral,
        Emotion::Happy,
        Emotion::Sad,
        Emotion::Anger,
        Emotion::Disgust,
        Emotion::Fear,
        Emotion::Surprise,
    ];

    pub fn id(self) -> usize {
        self as usize
    }

    pub fn from_id(id: usize) -> Option<Emotion> {
        Self::ALL.get(id).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Emotion::Neutral => "neutral",
            Emotion::Happy => "happy",
            Emotion::Sad => "sad",
            Emotion::Anger => "anger",
            Emotion::Disgust => "disgust",
            Emotion::Fear => "fear",
            Emotion::Surprise => "surprise",
        }
    }
}

impl fmt::Display for Emotion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Emotion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        let found = match lower.as_str() {
            "neutral" => Emotion::Neutral,
            "happy" | "happiness" => Emotion::Happy,
            "sad" | "sadness" => Emotion::Sad,
            "anger" | "angry" => Emotion::Anger,
            "disgust" => Emotion::Disgust,
            "fear" => Emotion::Fear,
            "surprise" | "surprised" => Emotion::Surprise,
            _ => return Err(Error::Validation(format!("unknown label {s:?}"))),
        };
        Ok(found)
    }
}

/// One row of tracker output.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameRecord {
    pub frame_index: u64,
    pub timestamp: f64,
    pub confidence: f64,
    pub success: bool,
    pub gaze_angle_x: f64,
    pub gaze_angle_y: f64,
    /// 3D eye-region landmarks in millimetres, tracker ordering (both eyes).
    pub eye_landmarks: Vec<[f64; 3]>,
    pub au45_intensity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub frames: Vec<FrameRecord>,
    pub fps: f64,
    /// k x V, one row per frame.
    pub visual_features: Array2<f64>,
    pub audio_features: Array1<f64>,
    pub label: usize,
}

impl Utterance {
    pub fn num_frames(&self) -> usize {
        self.frames.len()
    }

    /// Checks the type invariants: frame/visual alignment, label range,
    /// increasing timestamps and finite tracker values.
    pub fn validate(&self) -> Result<()> {
        let k = self.frames.len();
        if k == 0 {
            return Err(Error::Validation(format!("{}: no frames", self.id)));
        }
        if self.visual_features.nrows() != k {
            return Err(Error::Validation(format!(
                "{}: {} frames but {} visual feature rows",
                self.id,
                k,
                self.visual_features.nrows()
            )));
        }
        if self.label >= NUM_CLASSES {
            return Err(Error::Validation(format!(
                "{}: label {} out of range",
                self.id, self.label
            )));
        }
        if !(self.fps.is_finite() && self.fps > 0.0) {
            return Err(Error::Validation(format!("{}: fps must be positive", self.id)));
        }
        validate_frames(&self.frames).map_err(|e| Error::Validation(format!("{}: {e}", self.id)))
    }
}

fn validate_frames(frames: &[FrameRecord]) -> std::result::Result<(), String> {
    for (i, f) in frames.iter().enumerate() {
        if !(0.0..=1.0).contains(&f.confidence) {
            return Err(format!("row {i}: confidence {} outside [0,1]", f.confidence));
        }
        if !f.gaze_angle_x.is_finite() || !f.gaze_angle_y.is_finite() {
            return Err(format!("row {i}: non-finite gaze angle"));
        }
        if i > 0 && f.timestamp <= frames[i - 1].timestamp {
            return Err(format!("row {i}: timestamp not strictly increasing"));
        }
    }
    Ok(())
}

struct TrackerColumns {
    frame: usize,
    timestamp: usize,
    confidence: usize,
    success: usize,
    gaze_x: usize,
    gaze_y: usize,
    au45: usize,
    landmarks: Vec<[usize; 3]>,
}

impl TrackerColumns {
    fn locate(headers: &[String], path: &Path) -> Result<Self> {
        let find = |name: &str| -> Result<usize> {
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::MissingColumn {
                    path: path.to_path_buf(),
                    column: name.to_string(),
                })
        };
        let frame = find("frame")?;
        let timestamp = find("timestamp")?;
        let confidence = find("confidence")?;
        let success = find("success")?;
        let gaze_x = find("gaze_angle_x")?;
        let gaze_y = find("gaze_angle_y")?;
        let au45 = find("AU45_r")?;

        let count = headers
            .iter()
            .filter(|h| h.starts_with("eye_lmk_X_"))
            .count();
        if count == 0 {
            return Err(Error::MissingColumn {
                path: path.to_path_buf(),
                column: "eye_lmk_X_0".into(),
            });
        }
        let mut landmarks = Vec::with_capacity(count);
        for i in 0..count {
            landmarks.push([
                find(&format!("eye_lmk_X_{i}"))?,
                find(&format!("eye_lmk_Y_{i}"))?,
                find(&format!("eye_lmk_Z_{i}"))?,
            ]);
        }
        Ok(TrackerColumns {
            frame,
            timestamp,
            confidence,
            success,
            gaze_x,
            gaze_y,
            au45,
            landmarks,
        })
    }
}

/// Parses tracker output from a file. Rows with `success = 0` are kept.
pub fn parse_tracker_csv(path: impl AsRef<Path>) -> Result<Vec<FrameRecord>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_tracker_reader(file, path)
}

/// Same as [`parse_tracker_csv`] over any reader; `source` only labels errors.
pub fn parse_tracker_reader<R: Read>(reader: R, source: &Path) -> Result<Vec<FrameRecord>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(reader);
    let headers: Vec<String> = rdr
        .headers()
        .map_err(|e| Error::csv(source, e))?
        .iter()
        .map(str::to_string)
        .collect();
    let cols = TrackerColumns::locate(&headers, source)?;

    let mut frames = Vec::new();
    for (row, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| Error::csv(source, e))?;
        let num = |idx: usize| -> Result<f64> {
            let raw = record.get(idx).unwrap_or("");
            raw.parse::<f64>().map_err(|_| Error::Parse {
                path: source.to_path_buf(),
                row,
                column: headers[idx].clone(),
                value: raw.to_string(),
            })
        };
        let frame_index = num(cols.frame)?;
        let eye_landmarks = cols
            .landmarks
            .iter()
            .map(|&[x, y, z]| Ok([num(x)?, num(y)?, num(z)?]))
            .collect::<Result<Vec<_>>>()?;
        frames.push(FrameRecord {
            frame_index: frame_index as u64,
            timestamp: num(cols.timestamp)?,
            confidence: num(cols.confidence)?,
            success: num(cols.success)? != 0.0,
            gaze_angle_x: num(cols.gaze_x)?,
            gaze_angle_y: num(cols.gaze_y)?,
            eye_landmarks,
            au45_intensity: num(cols.au45)?,
        });
    }
    validate_frames(&frames)
        .map_err(|msg| Error::Validation(format!("{}: {msg}", source.display())))?;
    Ok(frames)
}

/// Writes frames in the layout read by [`parse_tracker_csv`].
pub fn write_tracker_csv<W: Write>(writer: W, frames: &[FrameRecord]) -> Result<()> {
    let n_lmk = frames.first().map_or(0, |f| f.eye_landmarks.len());
    let mut header = vec![
        "frame".to_string(),
        "timestamp".into(),
        "confidence".into(),
        "success".into(),
        "gaze_angle_x".into(),
        "gaze_angle_y".into(),
    ];
    for axis in ["X", "Y", "Z"] {
        header.extend((0..n_lmk).map(|i| format!("eye_lmk_{axis}_{i}")));
    }
    header.push("AU45_r".into());

    let mut wtr = csv::Writer::from_writer(writer);
    let to_err = |e: csv::Error| Error::csv("<tracker output>", e);
    wtr.write_record(&header).map_err(to_err)?;
    for f in frames {
        if f.eye_landmarks.len() != n_lmk {
            return Err(Error::Shape(format!(
                "frame {} has {} landmarks, expected {n_lmk}",
                f.frame_index,
                f.eye_landmarks.len()
            )));
        }
        let mut row = vec![
            f.frame_index.to_string(),
            f.timestamp.to_string(),
            f.confidence.to_string(),
            u8::from(f.success).to_string(),
            f.gaze_angle_x.to_string(),
            f.gaze_angle_y.to_string(),
        ];
        for axis in 0..3 {
            row.extend(f.eye_landmarks.iter().map(|p| p[axis].to_string()));
        }
        row.push(f.au45_intensity.to_string());
        wtr.write_record(&row).map_err(to_err)?;
    }
    wtr.flush().map_err(|e| Error::io("<tracker output>", e))?;
    Ok(())
}

/// Reads a numeric CSV matrix. `#` lines are comments; a first row that does
/// not parse as numbers is treated as a header and skipped.
pub fn read_matrix_csv(path: impl AsRef<Path>) -> Result<Array2<f64>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(file);

    let mut data = Vec::new();
    let mut ncols = None;
    let mut nrows = 0;
    for (row, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| Error::csv(path, e))?;
        let parsed: std::result::Result<Vec<f64>, _> =
            record.iter().map(str::parse::<f64>).collect();
        let values = match parsed {
            Ok(v) => v,
            Err(_) if row == 0 => continue,
            Err(_) => {
                let bad = record
                    .iter()
                    .position(|c| c.parse::<f64>().is_err())
                    .unwrap_or(0);
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    row,
                    column: bad.to_string(),
                    value: record.get(bad).unwrap_or("").to_string(),
                });
            }
        };
        match ncols {
            None => ncols = Some(values.len()),
            Some(c) if c != values.len() => {
                return Err(Error::Shape(format!(
                    "{}: row {row} has {} columns, expected {c}",
                    path.display(),
                    values.len()
                )))
            }
            _ => {}
        }
        data.extend(values);
        nrows += 1;
    }
    let ncols = ncols.unwrap_or(0);
    Ok(Array2::from_shape_vec((nrows, ncols), data).expect("row lengths checked"))
}

/// Writes a matrix as CSV with optional comment lines and column header.
pub fn write_matrix_csv<W: Write>(
    mut writer: W,
    matrix: &Array2<f64>,
    comments: &[String],
    header: Option<&[String]>,
) -> Result<()> {
    let io = |e| Error::io("<matrix output>", e);
    for line in comments {
        writeln!(writer, "# {line}").map_err(io)?;
    }
    if let Some(h) = header {
        writeln!(writer, "{}", h.join(",")).map_err(io)?;
    }
    for row in matrix.rows() {
        let line: Vec<String> = row.iter().map(f64::to_string).collect();
        writeln!(writer, "{}", line.join(",")).map_err(io)?;
    }
    Ok(())
}

/// Reads an audio vector stored as a single row or a single column.
pub fn read_vector_csv(path: impl AsRef<Path>) -> Result<Array1<f64>> {
    let path = path.as_ref();
    let m = read_matrix_csv(path)?;
    match m.dim() {
        (1, _) | (_, 1) => Ok(Array1::from_iter(m.iter().copied())),
        (0, _) => Ok(Array1::zeros(0)),
        (r, c) => Err(Error::Shape(format!(
            "{}: expected a vector, found {r}x{c}",
            path.display()
        ))),
    }
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
struct ManifestRow {
    id: String,
    csv_path: PathBuf,
    visual_path: PathBuf,
    audio_path: PathBuf,
    label: String,
    #[serde(default)]
    fps: Option<f64>,
}

/// An utterance removed during loading and why.
#[derive(Debug, Clone, PartialEq)]
pub struct DroppedUtterance {
    pub id: String,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct LoadedDataset {
    pub utterances: Vec<Utterance>,
    pub dropped: Vec<DroppedUtterance>,
}

/// Loads every utterance listed in a manifest CSV
/// (`id,csv_path,visual_path,audio_path,label[,fps]`). Relative paths resolve
/// against the manifest's directory; `default_fps` applies when the row has
/// no fps. Utterances with no detected face in any frame, or with a missing
/// or empty audio vector, are dropped and reported.
pub fn load_dataset(manifest: impl AsRef<Path>, default_fps: f64) -> Result<LoadedDataset> {
    let manifest = manifest.as_ref();
    let base = manifest.parent().unwrap_or(Path::new("."));
    let file = File::open(manifest).map_err(|e| Error::io(manifest, e))?;
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(file);

    let resolve = |p: &Path| -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            base.join(p)
        }
    };

    let mut utterances: Vec<Utterance> = Vec::new();
    let mut dropped = Vec::new();
    for row in rdr.deserialize::<ManifestRow>() {
        let row = row.map_err(|e| Error::csv(manifest, e))?;
        let label = row.label.parse::<Emotion>()?.id();

        let audio_path = resolve(&row.audio_path);
        if !audio_path.exists() {
            dropped.push(DroppedUtterance {
                id: row.id,
                reason: "audio features missing".into(),
            });
            continue;
        }
        let audio_features = read_vector_csv(&audio_path)?;
        if audio_features.is_empty() {
            dropped.push(DroppedUtterance {
                id: row.id,
                reason: "audio features empty".into(),
            });
            continue;
        }

        let frames = parse_tracker_csv(resolve(&row.csv_path))?;
        if frames.iter().all(|f| !f.success) {
            dropped.push(DroppedUtterance {
                id: row.id,
                reason: "no face detected in any frame".into(),
            });
            continue;
        }
        let visual_features = read_matrix_csv(resolve(&row.visual_path))?;

        let utt = Utterance {
            id: row.id,
            frames,
            fps: row.fps.unwrap_or(default_fps),
            visual_features,
            audio_features,
            label,
        };
        utt.validate()?;
        if let Some(first) = utterances.first() {
            if first.audio_features.len() != utt.audio_features.len() {
                return Err(Error::Validation(format!(
                    "{}: audio dimension {} differs from {}",
                    utt.id,
                    utt.audio_features.len(),
                    first.audio_features.len()
                )));
            }
            if first.visual_features.ncols() != utt.visual_features.ncols() {
                return Err(Error::Validation(format!(
                    "{}: visual dimension {} differs from {}",
                    utt.id,
                    utt.visual_features.ncols(),
                    first.visual_features.ncols()
                )));
            }
        }
        utterances.push(utt);
    }
    Ok(LoadedDataset {
        utterances,
        dropped,
    })
}

/// Writes a manifest plus per-utterance feature files under `dir`, in the
/// layout read back by [`load_dataset`]. Paths in the manifest are relative.
pub fn write_dataset(dir: impl AsRef<Path>, utterances: &[Utterance], comments: &[String]) -> Result<PathBuf> {
    let dir = dir.as_ref();
    let data_dir = dir.join("data");
    std::fs::create_dir_all(&data_dir).map_err(|e| Error::io(&data_dir, e))?;

    let create = |p: &Path| File::create(p).map_err(|e| Error::io(p, e));
    let manifest_path = dir.join("manifest.csv");
    let mut manifest = create(&manifest_path)?;
    for line in comments {
        writeln!(manifest, "# {line}").map_err(|e| Error::io(&manifest_path, e))?;
    }
    let mut wtr = csv::Writer::from_writer(manifest);
    for utt in utterances {
        let tracker = format!("data/{}_tracker.csv", utt.id);
        let visual = format!("data/{}_visual.csv", utt.id);
        let audio = format!("data/{}_audio.csv", utt.id);
        write_tracker_csv(create(&dir.join(&tracker))?, &utt.frames)?;
        write_matrix_csv(create(&dir.join(&visual))?, &utt.visual_features, &[], None)?;
        let audio_row = utt.audio_features.clone().insert_axis(ndarray::Axis(0));
        write_matrix_csv(create(&dir.join(&audio))?, &audio_row, &[], None)?;
        wtr.serialize(ManifestRow {
            id: utt.id.clone(),
            csv_path: tracker.into(),
            visual_path: visual.into(),
            audio_path: audio.into(),
            label: Emotion::from_id(utt.label)
                .map(|e| e.name().to_string())
                .unwrap_or_else(|| utt.label.to_string()),
            fps: Some(utt.fps),
        })
        .map_err(|e| Error::csv(&manifest_path, e))?;
    }
    wtr.flush().map_err(|e| Error::io(&manifest_path, e))?;
    Ok(manifest_path)
}
