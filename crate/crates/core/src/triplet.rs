//! Batch-hard triplet losses within and across modalities.
//!
//! For each anchor the hardest positive (farthest same-label column) and the
//! hardest negative (nearest different-label column) are mined from a
//! distance matrix; ties go to the lowest column index. Anchors without a
//! positive or a negative contribute nothing.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Modality;
use crate::nn::{pairwise_euclidean, Graph, Var};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TripletOptions {
    pub margin: f64,
    /// Clip each anchor's term at zero. With `hinge = false` and
    /// `margin = 0` the loss is the plain difference of distances.
    pub hinge: bool,
    /// Use `inter(A, B) + inter(B, A)` instead of `inter(A, B)`.
    pub symmetrize_inter: bool,
}

impl Default for TripletOptions {
    fn default() -> Self {
        TripletOptions {
            margin: 1.0,
            hinge: true,
            symmetrize_inter: false,
        }
    }
}

impl TripletOptions {
    /// Unclipped difference of distances with no margin.
    pub fn literal() -> Self {
        TripletOptions {
            margin: 0.0,
            hinge: false,
            symmetrize_inter: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingBatch {
    pub embeddings: Array2<f64>,
    pub labels: Vec<usize>,
    pub modality: Modality,
}

impl EmbeddingBatch {
    pub fn new(embeddings: Array2<f64>, labels: Vec<usize>, modality: Modality) -> Result<Self> {
        if embeddings.nrows() != labels.len() {
            return Err(Error::Shape(format!(
                "{} embeddings but {} labels",
                embeddings.nrows(),
                labels.len()
            )));
        }
        if embeddings.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("non-finite embedding".into()));
        }
        Ok(EmbeddingBatch {
            embeddings,
            labels,
            modality,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    pub values: Array2<f64>,
    pub row_labels: Vec<usize>,
    pub col_labels: Vec<usize>,
    /// Rows and columns index the same embeddings; the diagonal is never a
    /// positive.
    pub same_set: bool,
}

pub fn pairwise_distances(a: &Array2<f64>, b: &Array2<f64>) -> Result<Array2<f64>> {
    if a.ncols() != b.ncols() {
        return Err(Error::Shape(format!(
            "embedding sizes differ: {} vs {}",
            a.ncols(),
            b.ncols()
        )));
    }
    Ok(pairwise_euclidean(a, b))
}

/// Hardest positive and negative column for one anchor row.
pub fn mine_hardest(dist: &DistanceMatrix, anchor_row: usize) -> (Option<usize>, Option<usize>) {
    let label = dist.row_labels[anchor_row];
    let row = dist.values.row(anchor_row);
    let mut pos: Option<(usize, f64)> = None;
    let mut neg: Option<(usize, f64)> = None;
    for (j, (&d, &l)) in row.iter().zip(&dist.col_labels).enumerate() {
        if l == label {
            if dist.same_set && j == anchor_row {
                continue;
            }
            if pos.map_or(true, |(_, best)| d > best) {
                pos = Some((j, d));
            }
        } else if neg.map_or(true, |(_, best)| d < best) {
            neg = Some((j, d));
        }
    }
    (pos.map(|p| p.0), neg.map(|n| n.0))
}

/// Coefficients that turn a distance matrix into the mined triplet loss:
/// `loss = sum(weights * distances) + offset`.
#[derive(Debug, Clone, PartialEq)]
pub struct TripletSelection {
    pub weights: Array2<f64>,
    pub offset: f64,
    pub active_anchors: usize,
}

pub fn select_triplets(dist: &DistanceMatrix, opts: &TripletOptions) -> TripletSelection {
    let mut weights = Array2::zeros(dist.values.dim());
    let mut offset = 0.0;
    let mut active = 0;
    for i in 0..dist.values.nrows() {
        let (Some(p), Some(n)) = mine_hardest(dist, i) else {
            continue;
        };
        let term = dist.values[[i, p]] - dist.values[[i, n]] + opts.margin;
        if opts.hinge && term <= 0.0 {
            continue;
        }
        weights[[i, p]] += 1.0;
        weights[[i, n]] -= 1.0;
        offset += opts.margin;
        active += 1;
    }
    TripletSelection {
        weights,
        offset,
        active_anchors: active,
    }
}

fn loss_from(dist: &DistanceMatrix, opts: &TripletOptions) -> f64 {
    let sel = select_triplets(dist, opts);
    // sum per anchor in row order so the value matches a direct summation
    let mut total = 0.0;
    for i in 0..dist.values.nrows() {
        let row_sum: f64 = sel
            .weights
            .row(i)
            .iter()
            .zip(dist.values.row(i).iter())
            .map(|(w, d)| w * d)
            .sum();
        if sel.weights.row(i).iter().any(|&w| w != 0.0) {
            total += row_sum + opts.margin;
        }
    }
    total
}

pub fn intra_distances(batch: &EmbeddingBatch) -> DistanceMatrix {
    DistanceMatrix {
        values: pairwise_euclidean(&batch.embeddings, &batch.embeddings),
        row_labels: batch.labels.clone(),
        col_labels: batch.labels.clone(),
        same_set: true,
    }
}

pub fn inter_distances(a: &EmbeddingBatch, b: &EmbeddingBatch) -> Result<DistanceMatrix> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!(
            "aligned batches must match in size: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    Ok(DistanceMatrix {
        values: pairwise_distances(&a.embeddings, &b.embeddings)?,
        row_labels: a.labels.clone(),
        col_labels: b.labels.clone(),
        same_set: false,
    })
}

pub fn intra_loss(batch: &EmbeddingBatch, opts: &TripletOptions) -> f64 {
    loss_from(&intra_distances(batch), opts)
}

/// Anchors from `a`, positives and negatives from `b`; row `i` of both
/// batches comes from the same utterance.
pub fn inter_loss(a: &EmbeddingBatch, b: &EmbeddingBatch, opts: &TripletOptions) -> Result<f64> {
    let forward = loss_from(&inter_distances(a, b)?, opts);
    if opts.symmetrize_inter {
        Ok(forward + loss_from(&inter_distances(b, a)?, opts))
    } else {
        Ok(forward)
    }
}

pub fn full_triplet_loss(
    a: &EmbeddingBatch,
    b: &EmbeddingBatch,
    opts: &TripletOptions,
) -> Result<f64> {
    Ok(intra_loss(a, opts) + intra_loss(b, opts) + inter_loss(a, b, opts)?)
}

/// Differentiable triplet loss over two embedding nodes on a graph.
/// Mining uses the current values; gradients flow through the selected
/// distances. Returns `None` when no anchor is active.
pub fn triplet_loss_graph(
    g: &mut Graph,
    a: Var,
    a_labels: &[usize],
    b: Var,
    b_labels: &[usize],
    opts: &TripletOptions,
) -> Option<Var> {
    let mut terms = Vec::new();
    let mut push = |g: &mut Graph, x: Var, xl: &[usize], y: Var, yl: &[usize], same: bool| {
        let d = g.pairwise_distance(x, y);
        let dist = DistanceMatrix {
            values: g.value(d).clone(),
            row_labels: xl.to_vec(),
            col_labels: yl.to_vec(),
            same_set: same,
        };
        let sel = select_triplets(&dist, opts);
        if sel.active_anchors > 0 {
            terms.push(g.weighted_sum(d, sel.weights, sel.offset));
        }
    };
    push(g, a, a_labels, a, a_labels, true);
    push(g, b, b_labels, b, b_labels, true);
    push(g, a, a_labels, b, b_labels, false);
    if opts.symmetrize_inter {
        push(g, b, b_labels, a, a_labels, false);
    }
    let mut iter = terms.into_iter();
    let first = iter.next()?;
    Some(iter.fold(first, |acc, t| g.add(acc, t)))
}
