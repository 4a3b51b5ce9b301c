//! Classification metrics and single-modality evaluation.

use crate::error::{Error, Result};
use crate::model::{argmax, EmotionModel, Modality, Sample};

/// Rows are true classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn from_predictions(predictions: &[usize], truths: &[usize], num_classes: usize) -> Result<Self> {
        check_lengths(predictions, truths)?;
        let mut counts = vec![vec![0u64; num_classes]; num_classes];
        for (&p, &t) in predictions.iter().zip(truths) {
            if p >= num_classes || t >= num_classes {
                return Err(Error::Validation(format!(
                    "class id out of range: predicted {p}, true {t}"
                )));
            }
            counts[t][p] += 1;
        }
        Ok(ConfusionMatrix { counts })
    }

    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn true_positives(&self, c: usize) -> u64 {
        self.counts[c][c]
    }

    pub fn false_positives(&self, c: usize) -> u64 {
        (0..self.num_classes())
            .filter(|&t| t != c)
            .map(|t| self.counts[t][c])
            .sum()
    }

    pub fn false_negatives(&self, c: usize) -> u64 {
        (0..self.num_classes())
            .filter(|&p| p != c)
            .map(|p| self.counts[c][p])
            .sum()
    }

    /// Micro F1 from globally pooled TP/FP/FN.
    pub fn micro_f1(&self) -> f64 {
        let k = self.num_classes();
        let tp: u64 = (0..k).map(|c| self.true_positives(c)).sum();
        let fp: u64 = (0..k).map(|c| self.false_positives(c)).sum();
        let fn_: u64 = (0..k).map(|c| self.false_negatives(c)).sum();
        f1(tp, fp, fn_)
    }

    /// One-vs-rest F1 per class; 0 for a class with no support and no
    /// predictions.
    pub fn per_class_f1(&self) -> Vec<f64> {
        (0..self.num_classes())
            .map(|c| f1(self.true_positives(c), self.false_positives(c), self.false_negatives(c)))
            .collect()
    }
}

fn f1(tp: u64, fp: u64, fn_: u64) -> f64 {
    let denom = 2 * tp + fp + fn_;
    if denom == 0 {
        0.0
    } else {
        (2 * tp) as f64 / denom as f64
    }
}

fn check_lengths(predictions: &[usize], truths: &[usize]) -> Result<()> {
    if predictions.len() != truths.len() {
        return Err(Error::Shape(format!(
            "{} predictions vs {} labels",
            predictions.len(),
            truths.len()
        )));
    }
    if predictions.is_empty() {
        return Err(Error::Validation("no predictions to score".into()));
    }
    Ok(())
}

fn num_classes_of(predictions: &[usize], truths: &[usize]) -> usize {
    predictions
        .iter()
        .chain(truths)
        .copied()
        .max()
        .map_or(0, |m| m + 1)
        .max(crate::ingest::NUM_CLASSES)
}

/// Micro F1. For single-label multiclass predictions this equals accuracy.
pub fn micro_f1(predictions: &[usize], truths: &[usize]) -> Result<f64> {
    let n = num_classes_of(predictions, truths);
    Ok(ConfusionMatrix::from_predictions(predictions, truths, n)?.micro_f1())
}

pub fn accuracy(predictions: &[usize], truths: &[usize]) -> Result<f64> {
    check_lengths(predictions, truths)?;
    let correct = predictions.iter().zip(truths).filter(|(p, t)| p == t).count();
    Ok(correct as f64 / truths.len() as f64)
}

pub fn per_class_f1(predictions: &[usize], truths: &[usize], num_classes: usize) -> Result<Vec<f64>> {
    Ok(ConfusionMatrix::from_predictions(predictions, truths, num_classes)?.per_class_f1())
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationReport {
    pub modality: Modality,
    pub ids: Vec<String>,
    pub predictions: Vec<usize>,
    pub truths: Vec<usize>,
    pub micro_f1: f64,
    pub per_class_f1: Vec<f64>,
    pub confusion: ConfusionMatrix,
}

/// Predicts every sample from `test_modality` alone; the other stream is
/// not read.
pub fn evaluate(model: &EmotionModel, samples: &[Sample], test_modality: Modality) -> Result<EvaluationReport> {
    if samples.is_empty() {
        return Err(Error::Validation("evaluation split is empty".into()));
    }
    let mut predictions = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(256) {
        let refs: Vec<&Sample> = chunk.iter().collect();
        let probs = model.predict_proba(&refs, test_modality)?;
        predictions.extend(probs.rows().into_iter().map(|r| argmax(&r.to_vec())));
    }
    let truths: Vec<usize> = samples.iter().map(|s| s.label).collect();
    let confusion = ConfusionMatrix::from_predictions(&predictions, &truths, model.config.num_classes)?;
    Ok(EvaluationReport {
        modality: test_modality,
        ids: samples.iter().map(|s| s.id.clone()).collect(),
        micro_f1: confusion.micro_f1(),
        per_class_f1: confusion.per_class_f1(),
        predictions,
        truths,
        confusion,
    })
}

/// Score in the reporting style used for tables: x100, one decimal.
pub fn as_percent(score: f64) -> String {
    format!("{:.1}", score * 100.0)
}
