//! Two-dimensional Gaussian KDE of gaze angles evaluated on a regular grid.

use ndarray::Array2;

use crate::error::{Error, Result};

/// Bandwidth used for an axis with zero spread (radians).
pub const MIN_BANDWIDTH: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct DensityGrid {
    /// Grid coordinates along gaze_angle_x (columns).
    pub xs: Vec<f64>,
    /// Grid coordinates along gaze_angle_y (rows).
    pub ys: Vec<f64>,
    /// `density[[iy, ix]]` at `(xs[ix], ys[iy])`.
    pub density: Array2<f64>,
    pub bandwidth: [f64; 2],
}

impl DensityGrid {
    pub fn cell_area(&self) -> f64 {
        let dx = if self.xs.len() > 1 { self.xs[1] - self.xs[0] } else { 0.0 };
        let dy = if self.ys.len() > 1 { self.ys[1] - self.ys[0] } else { 0.0 };
        dx * dy
    }

    /// Riemann-sum estimate of the integral over the grid.
    pub fn integral(&self) -> f64 {
        self.density.sum() * self.cell_area()
    }
}

fn sample_std(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// Scott's rule for one axis in two dimensions: `std * n^(-1/6)`.
pub fn scott_bandwidth(values: &[f64]) -> f64 {
    let h = sample_std(values) * (values.len() as f64).powf(-1.0 / 6.0);
    if h > 0.0 && h.is_finite() {
        h
    } else {
        MIN_BANDWIDTH
    }
}

/// Product-Gaussian KDE over `points` (`n x 2`: gaze_angle_x, gaze_angle_y)
/// on a `resolution x resolution` grid spanning the bounding box padded by
/// 10% of its extent on each side (3 bandwidths when the extent is zero).
pub fn kde_density(points: &Array2<f64>, resolution: usize) -> Result<DensityGrid> {
    let n = points.nrows();
    if n < 2 {
        return Err(Error::Validation("KDE needs at least two points".into()));
    }
    if points.ncols() != 2 {
        return Err(Error::Shape(format!("expected n x 2 points, got {:?}", points.dim())));
    }
    if resolution < 2 {
        return Err(Error::Config("grid resolution must be at least 2".into()));
    }
    let x: Vec<f64> = points.column(0).to_vec();
    let y: Vec<f64> = points.column(1).to_vec();
    let hx = scott_bandwidth(&x);
    let hy = scott_bandwidth(&y);

    let axis = |v: &[f64], h: f64| -> Vec<f64> {
        let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let pad = if hi > lo { 0.1 * (hi - lo) } else { 3.0 * h };
        let (lo, hi) = (lo - pad, hi + pad);
        let step = (hi - lo) / (resolution - 1) as f64;
        (0..resolution).map(|i| lo + step * i as f64).collect()
    };
    let xs = axis(&x, hx);
    let ys = axis(&y, hy);

    let norm = 1.0 / (2.0 * std::f64::consts::PI * hx * hy * n as f64);
    let mut density = Array2::zeros((resolution, resolution));
    // separable kernel: precompute per-axis factors
    let kx: Vec<Vec<f64>> = xs
        .iter()
        .map(|&gx| x.iter().map(|&px| (-0.5 * ((gx - px) / hx).powi(2)).exp()).collect())
        .collect();
    let ky: Vec<Vec<f64>> = ys
        .iter()
        .map(|&gy| y.iter().map(|&py| (-0.5 * ((gy - py) / hy).powi(2)).exp()).collect())
        .collect();
    for (iy, row_k) in ky.iter().enumerate() {
        for (ix, col_k) in kx.iter().enumerate() {
            let s: f64 = row_k.iter().zip(col_k).map(|(a, b)| a * b).sum();
            density[[iy, ix]] = s * norm;
        }
    }
    Ok(DensityGrid {
        xs,
        ys,
        density,
        bandwidth: [hx, hy],
    })
}
