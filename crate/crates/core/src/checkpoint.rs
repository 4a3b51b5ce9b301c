//! Plain-text checkpoints: model and gaze configuration followed by a flat
//! list of named tensors (model parameters and standardisation moments).
//!
//! Values are written with Rust's shortest round-trip float formatting, so
//! a save/load cycle is bit-exact.

use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaze_features::GazeConfig;
use crate::model::{EmotionModel, ModelConfig};
use crate::nn::ParamStore;
use crate::trainer::{Moments, Standardizer};

pub const MAGIC: &str = "gazemb-checkpoint 1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Configs {
    model: ModelConfig,
    gaze: GazeConfig,
}

/// Everything needed to evaluate a trained model on raw utterances.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: EmotionModel,
    pub standardizer: Standardizer,
    pub gaze: GazeConfig,
}

fn write_tensor(out: &mut String, name: &str, t: &Array2<f64>) {
    let _ = writeln!(out, "tensor {name} {} {}", t.nrows(), t.ncols());
    let mut first = true;
    for v in t.iter() {
        if !first {
            out.push(' ');
        }
        first = false;
        let _ = write!(out, "{v:?}");
    }
    out.push('\n');
}

fn row(v: &Array1<f64>) -> Array2<f64> {
    v.clone().insert_axis(ndarray::Axis(0))
}

impl Checkpoint {
    /// Serialises to text; `header` lines are emitted first, each prefixed by `# `.
    pub fn to_text(&self, header: &[String]) -> Result<String> {
        let mut out = String::new();
        for h in header {
            let _ = writeln!(out, "# {h}");
        }
        out.push_str(MAGIC);
        out.push('\n');
        let cfg = toml::to_string(&Configs {
            model: self.model.config.clone(),
            gaze: self.gaze.clone(),
        })
        .map_err(|e| Error::Checkpoint(e.to_string()))?;
        let cfg = cfg.trim_end();
        let _ = writeln!(out, "config {}", cfg.lines().count());
        out.push_str(cfg);
        out.push('\n');
        for (_, name, value) in self.model.params.iter() {
            write_tensor(&mut out, name, value);
        }
        let mut moments = vec![("visual", &self.standardizer.visual), ("audio", &self.standardizer.audio)];
        if let Some(g) = &self.standardizer.gaze {
            moments.push(("gaze", g));
        }
        for (kind, m) in moments {
            write_tensor(&mut out, &format!("standardizer.{kind}.mean"), &row(&m.mean));
            write_tensor(&mut out, &format!("standardizer.{kind}.std"), &row(&m.std));
        }
        out.push_str("end\n");
        Ok(out)
    }

    pub fn save(&self, path: &Path, header: &[String]) -> Result<()> {
        let text = self.to_text(header)?;
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let lines = BufReader::new(f)
            .lines()
            .collect::<std::io::Result<Vec<_>>>()
            .map_err(|e| Error::io(path, e))?;
        Self::from_lines(lines.iter().map(String::as_str))
    }

    pub fn from_text(text: &str) -> Result<Self> {
        Self::from_lines(text.lines())
    }

    fn from_lines<'a>(lines: impl Iterator<Item = &'a str>) -> Result<Self> {
        let bad = |m: String| Error::Checkpoint(m);
        let mut lines = lines.filter(|l| !l.starts_with('#'));
        if lines.next().map(str::trim) != Some(MAGIC) {
            return Err(bad(format!("missing `{MAGIC}` line")));
        }
        let n_cfg: usize = lines
            .next()
            .and_then(|l| l.strip_prefix("config "))
            .and_then(|n| n.trim().parse().ok())
            .ok_or_else(|| bad("missing config line count".into()))?;
        let cfg_text: Vec<&str> = lines.by_ref().take(n_cfg).collect();
        if cfg_text.len() != n_cfg {
            return Err(bad("truncated config block".into()));
        }
        let cfg: Configs = toml::from_str(&cfg_text.join("\n")).map_err(|e| bad(e.to_string()))?;

        let mut tensors: Vec<(String, Array2<f64>)> = Vec::new();
        let mut ended = false;
        while let Some(line) = lines.next() {
            if line.trim() == "end" {
                ended = true;
                break;
            }
            let parts: Vec<&str> = line.split_whitespace().collect();
            let (name, rows, cols) = match parts.as_slice() {
                ["tensor", name, r, c] => (
                    name.to_string(),
                    r.parse::<usize>().map_err(|e| bad(e.to_string()))?,
                    c.parse::<usize>().map_err(|e| bad(e.to_string()))?,
                ),
                _ => return Err(bad(format!("unexpected line {line:?}"))),
            };
            let values = lines
                .next()
                .ok_or_else(|| bad(format!("missing values for {name}")))?
                .split_whitespace()
                .map(|v| v.parse::<f64>().map_err(|e| bad(format!("{name}: {e}"))))
                .collect::<Result<Vec<f64>>>()?;
            let t = Array2::from_shape_vec((rows, cols), values)
                .map_err(|e| bad(format!("{name}: {e}")))?;
            tensors.push((name, t));
        }
        if !ended {
            return Err(bad("missing `end` line".into()));
        }

        let has_gaze = tensors.iter().any(|(n, _)| n == "standardizer.gaze.mean");
        let mut model = EmotionModel::new(cfg.model, 0)?;
        let mut loaded = ParamStore::new();
        let mut take = |name: &str| -> Result<Array2<f64>> {
            let pos = tensors
                .iter()
                .position(|(n, _)| n == name)
                .ok_or_else(|| bad(format!("missing tensor {name}")))?;
            Ok(tensors.remove(pos).1)
        };
        let names: Vec<String> = model.params.iter().map(|(_, n, _)| n.to_string()).collect();
        for name in &names {
            loaded.add(name.clone(), take(name)?);
        }
        model.params.load_from(&loaded)?;
        let mut moments = |kind: &str| -> Result<Moments> {
            let mean = take(&format!("standardizer.{kind}.mean"))?;
            let std = take(&format!("standardizer.{kind}.std"))?;
            Ok(Moments {
                mean: mean.iter().copied().collect(),
                std: std.iter().copied().collect(),
            })
        };
        let visual = moments("visual")?;
        let audio = moments("audio")?;
        let gaze = if has_gaze {
            Some(moments("gaze")?)
        } else {
            None
        };
        if let Some((name, _)) = tensors.first() {
            return Err(bad(format!("unexpected tensor {name}")));
        }
        Ok(Checkpoint {
            model,
            standardizer: Standardizer { visual, audio, gaze },
            gaze: cfg.gaze,
        })
    }
}
