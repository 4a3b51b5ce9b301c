//! Statistical functionals over a window of per-frame values.

/// Quantile with linear interpolation between order statistics
/// (position `q * (n - 1)` in the sorted sample).
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Summary statistics for a numeric channel. `std` is the population
/// standard deviation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NumericSummary {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub std: f64,
    pub lr_intercept: f64,
    pub lr_slope: f64,
}

impl NumericSummary {
    /// `positions` are the x coordinates for the regression (frame offsets
    /// from the window start); `values` must be non-empty and the same length.
    pub fn compute(positions: &[f64], values: &[f64]) -> Self {
        assert_eq!(positions.len(), values.len());
        assert!(!values.is_empty());
        let n = values.len() as f64;
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let (lr_intercept, lr_slope) = least_squares(positions, values);
        NumericSummary {
            min: sorted[0],
            max: sorted[sorted.len() - 1],
            mean,
            median: quantile_sorted(&sorted, 0.5),
            q1: quantile_sorted(&sorted, 0.25),
            q3: quantile_sorted(&sorted, 0.75),
            std: var.sqrt(),
            lr_intercept,
            lr_slope,
        }
    }

    pub fn iqr_1_2(&self) -> f64 {
        self.median - self.q1
    }

    pub fn iqr_2_3(&self) -> f64 {
        self.q3 - self.median
    }

    pub fn iqr_1_3(&self) -> f64 {
        self.q3 - self.q1
    }
}

/// Ordinary least squares fit `value = intercept + slope * x`. A single
/// point (or zero spread in x) gives slope 0 through the mean.
pub fn least_squares(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    if sxx == 0.0 {
        return (my, 0.0);
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    (my - slope * mx, slope)
}

/// Episode statistics over maximal runs of `true`. Durations are in seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeSummary {
    pub time_ratio: f64,
    pub min_time: f64,
    pub max_time: f64,
    pub mean_time: f64,
    pub median_time: f64,
    pub total_time: f64,
}

impl EpisodeSummary {
    pub fn compute(mask: &[bool], fps: f64) -> Self {
        let mut runs = Vec::new();
        let mut current = 0usize;
        for &m in mask {
            if m {
                current += 1;
            } else if current > 0 {
                runs.push(current);
                current = 0;
            }
        }
        if current > 0 {
            runs.push(current);
        }
        let on: usize = runs.iter().sum();
        let time_ratio = if mask.is_empty() {
            0.0
        } else {
            on as f64 / mask.len() as f64
        };
        if runs.is_empty() {
            return EpisodeSummary {
                time_ratio,
                min_time: 0.0,
                max_time: 0.0,
                mean_time: 0.0,
                median_time: 0.0,
                total_time: 0.0,
            };
        }
        let mut durations: Vec<f64> = runs.iter().map(|&r| r as f64 / fps).collect();
        durations.sort_by(f64::total_cmp);
        let total_time = on as f64 / fps;
        EpisodeSummary {
            time_ratio,
            min_time: durations[0],
            max_time: durations[durations.len() - 1],
            mean_time: total_time / durations.len() as f64,
            median_time: quantile_sorted(&durations, 0.5),
            total_time,
        }
    }
}
