//! Greedy minimum-redundancy maximum-relevance ranking (difference form)
//! on equal-frequency discretised features.

use ndarray::Array2;

use crate::error::{Error, Result};

/// Equal-frequency bin of each value: `floor(bins * rank / n)`, where `rank`
/// counts strictly smaller values, so ties share a bin.
pub fn discretize_equal_frequency(values: &[f64], bins: usize) -> Vec<usize> {
    let n = values.len();
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    values
        .iter()
        .map(|v| {
            let rank = sorted.partition_point(|s| s < v);
            (bins * rank / n).min(bins - 1)
        })
        .collect()
}

/// Mutual information (nats) between two discrete variables.
pub fn mutual_information(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len());
    let n = a.len() as f64;
    let ka = a.iter().max().map_or(0, |m| m + 1);
    let kb = b.iter().max().map_or(0, |m| m + 1);
    let mut joint = vec![0usize; ka * kb];
    let mut pa = vec![0usize; ka];
    let mut pb = vec![0usize; kb];
    for (&x, &y) in a.iter().zip(b) {
        joint[x * kb + y] += 1;
        pa[x] += 1;
        pb[y] += 1;
    }
    let mut mi = 0.0;
    for x in 0..ka {
        for y in 0..kb {
            let c = joint[x * kb + y];
            if c == 0 {
                continue;
            }
            let pxy = c as f64 / n;
            mi += pxy * (pxy / ((pa[x] as f64 / n) * (pb[y] as f64 / n))).ln();
        }
    }
    mi.max(0.0)
}

/// Scores closer than this count as tied; the lower feature index wins.
pub const TIE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct RankedFeature {
    pub index: usize,
    pub relevance: f64,
    pub redundancy: f64,
    /// `relevance - redundancy` at the time of selection.
    pub score: f64,
}

/// Ranks `top_k` features for `target_class` against all other classes.
pub fn mrmr_rank(
    features: &Array2<f64>,
    labels: &[usize],
    target_class: usize,
    top_k: usize,
    bins: usize,
) -> Result<Vec<RankedFeature>> {
    let (n, d) = features.dim();
    if n < 2 || labels.len() != n {
        return Err(Error::Validation(format!(
            "need at least two labelled rows, got {n} rows and {} labels",
            labels.len()
        )));
    }
    if bins < 2 {
        return Err(Error::Config("need at least two bins".into()));
    }
    let target: Vec<usize> = labels.iter().map(|&l| usize::from(l == target_class)).collect();
    let positives = target.iter().sum::<usize>();
    if positives == 0 || positives == n {
        return Err(Error::Validation(format!(
            "class {target_class} vs rest has a single class"
        )));
    }

    let binned: Vec<Vec<usize>> = (0..d)
        .map(|j| discretize_equal_frequency(&features.column(j).to_vec(), bins))
        .collect();
    let relevance: Vec<f64> = binned.iter().map(|b| mutual_information(b, &target)).collect();

    let mut selected: Vec<RankedFeature> = Vec::new();
    let mut redundancy_sum = vec![0.0; d];
    let mut remaining: Vec<usize> = (0..d).collect();
    while selected.len() < top_k.min(d) {
        let m = selected.len() as f64;
        let mut best: Option<(usize, f64)> = None;
        for (pos, &j) in remaining.iter().enumerate() {
            let redundancy = if m > 0.0 { redundancy_sum[j] / m } else { 0.0 };
            let score = relevance[j] - redundancy;
            if best.map_or(true, |(_, s)| score > s + TIE_TOLERANCE) {
                best = Some((pos, score));
            }
        }
        let (pos, score) = best.expect("remaining features");
        let j = remaining.remove(pos);
        selected.push(RankedFeature {
            index: j,
            relevance: relevance[j],
            redundancy: relevance[j] - score,
            score,
        });
        for &r in &remaining {
            redundancy_sum[r] += mutual_information(&binned[r], &binned[j]);
        }
    }
    Ok(selected)
}
