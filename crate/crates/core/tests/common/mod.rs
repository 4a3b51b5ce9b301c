//! Independent reference implementations used by the integration and
//! acceptance tests. Nothing here calls into the library's numeric code.

#![allow(dead_code)]

pub mod suites;

use gazemb::ingest::FrameRecord;
use gazemb::nn::ParamStore;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FEATURES: usize = 103;

// ---------------------------------------------------------------------------
// tracker fixtures

/// Hand-written tracker CSV in the tracker's own style (space after commas,
/// extra columns the parser must ignore).
pub fn tracker_csv(frames: &[FrameRecord]) -> String {
    let n_lmk = frames.first().map_or(0, |f| f.eye_landmarks.len());
    let mut cols = vec![
        "frame".to_string(),
        "face_id".into(),
        "timestamp".into(),
        "confidence".into(),
        "success".into(),
        "gaze_0_x".into(),
        "gaze_angle_x".into(),
        "gaze_angle_y".into(),
    ];
    for axis in ["X", "Y", "Z"] {
        for i in 0..n_lmk {
            cols.push(format!("eye_lmk_{axis}_{i}"));
        }
    }
    cols.push("AU45_r".into());
    let mut out = cols.join(", ");
    out.push('\n');
    for f in frames {
        let mut cells = vec![
            f.frame_index.to_string(),
            "0".into(),
            format!("{:?}", f.timestamp),
            format!("{:?}", f.confidence),
            if f.success { "1".into() } else { "0".into() },
            "0.5".into(),
            format!("{:?}", f.gaze_angle_x),
            format!("{:?}", f.gaze_angle_y),
        ];
        for axis in 0..3 {
            for p in &f.eye_landmarks {
                cells.push(format!("{:?}", p[axis]));
            }
        }
        cells.push(format!("{:?}", f.au45_intensity));
        out.push_str(&cells.join(", "));
        out.push('\n');
    }
    out
}

/// Per-frame description used to build fixtures.
#[derive(Debug, Clone, Copy)]
pub struct FrameSpec {
    pub gx: f64,
    pub gy: f64,
    pub pupil_radius: f64,
    pub depth: f64,
    pub au45: f64,
    pub success: bool,
    pub confidence: f64,
}

impl Default for FrameSpec {
    fn default() -> Self {
        FrameSpec {
            gx: 0.0,
            gy: 0.0,
            pupil_radius: 1.5,
            depth: 600.0,
            au45: 0.0,
            success: true,
            confidence: 0.98,
        }
    }
}

/// 56 landmarks: eyelid ring, iris ring, pupil ring (indices 20..28) for
/// each eye; all at `depth`.
pub fn build_frames(specs: &[FrameSpec], fps: f64) -> Vec<FrameRecord> {
    specs
        .iter()
        .enumerate()
        .map(|(t, s)| {
            let mut lmk = Vec::with_capacity(56);
            for cx in [-30.0, 30.0] {
                for (n, r) in [(8usize, 12.0), (12, 5.0), (8, s.pupil_radius)] {
                    for j in 0..n {
                        let a = j as f64 * std::f64::consts::TAU / n as f64;
                        lmk.push([cx + r * a.cos(), 2.0 + r * a.sin(), s.depth]);
                    }
                }
            }
            FrameRecord {
                frame_index: t as u64 + 1,
                timestamp: t as f64 / fps,
                confidence: s.confidence,
                success: s.success,
                gaze_angle_x: s.gx,
                gaze_angle_y: s.gy,
                eye_landmarks: lmk,
                au45_intensity: s.au45,
            }
        })
        .collect()
}

// ---------------------------------------------------------------------------
// gaze feature oracle

pub struct OracleParams {
    pub blink_threshold: f64,
    pub fixation_threshold: f64,
    pub min_confidence: f64,
}

impl Default for OracleParams {
    fn default() -> Self {
        OracleParams {
            blink_threshold: 1.0,
            fixation_threshold: 0.01,
            min_confidence: 0.0,
        }
    }
}

fn pupil(lm: &[[f64; 3]]) -> f64 {
    let pts = &lm[20..28];
    let c = [0, 1, 2].map(|a| pts.iter().map(|p| p[a]).sum::<f64>() / 8.0);
    let r: f64 = pts
        .iter()
        .map(|p| ((p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2) + (p[2] - c[2]).powi(2)).sqrt())
        .sum::<f64>()
        / 8.0;
    2.0 * r
}

fn median_of(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

fn interp_quantile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    if lo + 1 >= sorted.len() {
        return sorted[lo];
    }
    sorted[lo] + (h - lo as f64) * (sorted[lo + 1] - sorted[lo])
}

/// min, max, mean, median, q1, q3, std, iqr12, iqr23, iqr13, intercept, slope
fn numeric(xs: &[f64], ys: &[f64]) -> [f64; 12] {
    let n = ys.len() as f64;
    let mut s = ys.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mean = ys.iter().sum::<f64>() / n;
    let std = (ys.iter().map(|y| (y - mean) * (y - mean)).sum::<f64>() / n).sqrt();
    let (med, q1, q3) = (median_of(&s), interp_quantile(&s, 0.25), interp_quantile(&s, 0.75));
    let sx: f64 = xs.iter().sum();
    let sy: f64 = ys.iter().sum();
    let sxx: f64 = xs.iter().map(|x| x * x).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| x * y).sum();
    let den = n * sxx - sx * sx;
    let (b0, b1) = if den.abs() < 1e-12 {
        (mean, 0.0)
    } else {
        let b1 = (n * sxy - sx * sy) / den;
        ((sy - b1 * sx) / n, b1)
    };
    [s[0], s[s.len() - 1], mean, med, q1, q3, std, med - q1, q3 - med, q3 - q1, b0, b1]
}

/// ratio, min, max, mean, median, total (seconds)
fn episodes(mask: &[bool], fps: f64) -> [f64; 6] {
    let mut runs: Vec<f64> = Vec::new();
    let mut cur = 0;
    for (i, &m) in mask.iter().enumerate() {
        if m {
            cur += 1;
        }
        if (!m || i + 1 == mask.len()) && cur > 0 {
            runs.push(cur as f64);
            cur = 0;
        }
    }
    let on: f64 = runs.iter().sum();
    let ratio = on / mask.len() as f64;
    if runs.is_empty() {
        return [ratio, 0.0, 0.0, 0.0, 0.0, 0.0];
    }
    let mut d: Vec<f64> = runs.iter().map(|r| r / fps).collect();
    d.sort_by(|a, b| a.partial_cmp(b).unwrap());
    [ratio, d[0], d[d.len() - 1], on / fps / d.len() as f64, median_of(&d), on / fps]
}

/// Feature rows for every frame, or `None` when no frame is valid.
pub fn oracle_windowed(frames: &[FrameRecord], fps: f64, p: &OracleParams) -> Option<Vec<Vec<f64>>> {
    let k = frames.len();
    let ok: Vec<bool> = frames
        .iter()
        .map(|f| f.success && f.confidence >= p.min_confidence)
        .collect();
    if !ok.iter().any(|&v| v) {
        return None;
    }
    let gx: Vec<f64> = frames.iter().map(|f| f.gaze_angle_x).collect();
    let gy: Vec<f64> = frames.iter().map(|f| f.gaze_angle_y).collect();
    let pd: Vec<f64> = frames.iter().map(|f| pupil(&f.eye_landmarks)).collect();
    let z: Vec<f64> = frames
        .iter()
        .map(|f| f.eye_landmarks.iter().map(|q| q[2]).sum::<f64>() / f.eye_landmarks.len() as f64)
        .collect();
    let au: Vec<f64> = frames.iter().map(|f| f.au45_intensity).collect();
    let diff = |v: &[f64]| -> Vec<f64> {
        (0..k)
            .map(|t| if t > 0 && ok[t] && ok[t - 1] { v[t] - v[t - 1] } else { 0.0 })
            .collect()
    };
    let (dgx, dgy, dpd, dz) = (diff(&gx), diff(&gy), diff(&pd), diff(&z));
    let dil: Vec<bool> = dpd.iter().map(|&d| d > 0.0).collect();
    let con: Vec<bool> = dpd.iter().map(|&d| d < 0.0).collect();
    let app: Vec<bool> = dz.iter().map(|&d| d > 0.0).collect();
    let closed: Vec<bool> = au.iter().map(|&a| a >= p.blink_threshold).collect();
    let fix: Vec<bool> = (0..k)
        .map(|t| (dgx[t] * dgx[t] + dgy[t] * dgy[t]).sqrt() <= p.fixation_threshold)
        .collect();

    let len = (fps.round() as i64).max(1);
    let mut rows: Vec<Option<Vec<f64>>> = Vec::with_capacity(k);
    for i in 0..k as i64 {
        let span = len.min(k as i64);
        let lo = (i - len / 2).clamp(0, k as i64 - span) as usize;
        let hi = lo + span as usize;
        let sel: Vec<usize> = (lo..hi).filter(|&t| ok[t]).collect();
        if sel.is_empty() {
            rows.push(None);
            continue;
        }
        let xs: Vec<f64> = sel.iter().map(|&t| (t - lo) as f64).collect();
        let take = |v: &[f64]| -> Vec<f64> { sel.iter().map(|&t| v[t]).collect() };
        let takem = |v: &[bool]| -> Vec<bool> { sel.iter().map(|&t| v[t]).collect() };
        let mut row = Vec::with_capacity(FEATURES);
        for ch in [&gx, &gy, &dgx, &dgy, &pd] {
            row.extend(numeric(&xs, &take(ch)));
        }
        let s = numeric(&xs, &take(&dpd));
        row.extend([0, 1, 2, 4, 5, 6, 7, 8, 9, 10, 11].map(|j| s[j]));
        let s = numeric(&xs, &take(&au));
        row.extend([1, 2, 3, 5, 6, 7, 8, 9, 10, 11].map(|j| s[j]));
        for m in [&dil, &con] {
            let e = episodes(&takem(m), fps);
            row.extend([e[0], e[3], e[2], e[5]]);
        }
        let e = episodes(&takem(&app), fps);
        row.extend([e[0], e[3], e[2], e[4]]);
        for m in [&closed, &fix] {
            let e = episodes(&takem(m), fps);
            row.extend([e[0], e[1], e[2], e[3], e[4]]);
        }
        assert_eq!(row.len(), FEATURES);
        rows.push(Some(row));
    }
    let have: Vec<usize> = (0..k).filter(|&i| rows[i].is_some()).collect();
    Some(
        (0..k)
            .map(|i| {
                let mut best = have[0];
                for &j in &have {
                    if j.abs_diff(i) < best.abs_diff(i) {
                        best = j;
                    }
                }
                rows[best].clone().unwrap()
            })
            .collect(),
    )
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> (usize, f64) {
    a.iter()
        .zip(b)
        .enumerate()
        .map(|(i, (x, y))| (i, (x - y).abs()))
        .fold((0, 0.0), |acc, c| if c.1 > acc.1 { c } else { acc })
}

// ---------------------------------------------------------------------------
// finite differences

#[derive(Debug)]
pub struct GradReport {
    pub checked: usize,
    pub worst_rel: f64,
    pub worst_name: String,
}

/// Central differences over every parameter scalar. A coordinate passes when
/// `|a - n| <= tol * max(|a|, |n|)` or `|a - n| <= abs_floor`.
pub fn fd_check(
    store: &ParamStore,
    analytic: &[Array2<f64>],
    loss: impl Fn(&ParamStore) -> f64,
    eps: f64,
    tol: f64,
    abs_floor: f64,
) -> Result<GradReport, String> {
    let mut work = store.clone();
    let mut report = GradReport {
        checked: 0,
        worst_rel: 0.0,
        worst_name: String::new(),
    };
    let ids: Vec<_> = store.ids().collect();
    for (k, id) in ids.into_iter().enumerate() {
        let (rows, cols) = store.get(id).dim();
        for r in 0..rows {
            for c in 0..cols {
                let orig = work.get(id)[[r, c]];
                work.get_mut(id)[[r, c]] = orig + eps;
                let up = loss(&work);
                work.get_mut(id)[[r, c]] = orig - eps;
                let down = loss(&work);
                work.get_mut(id)[[r, c]] = orig;
                let numeric = (up - down) / (2.0 * eps);
                let a = analytic[k][[r, c]];
                let err = (a - numeric).abs();
                let scale = a.abs().max(numeric.abs());
                let rel = if scale > 0.0 { err / scale } else { 0.0 };
                report.checked += 1;
                if err > abs_floor && rel > report.worst_rel {
                    report.worst_rel = rel;
                    report.worst_name = format!("{}[{r},{c}] analytic {a} numeric {numeric}", store.name(id));
                }
                if err > abs_floor && rel > tol {
                    return Err(format!(
                        "{}[{r},{c}]: analytic {a} vs numeric {numeric} (rel {rel:.3e})",
                        store.name(id)
                    ));
                }
            }
        }
    }
    Ok(report)
}

pub fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

// ---------------------------------------------------------------------------
// recurrent cell

/// Plain loops over the standard recurrence; weights are `in x hidden`.
pub fn gru_oracle(p: &[Array2<f64>; 9], xs: &Array2<f64>, h0: &[f64]) -> Vec<Vec<f64>> {
    let [wz, wr, wc, uz, ur, uc, bz, br, bc] = p;
    let hdim = h0.len();
    let mut h = h0.to_vec();
    let mut out = Vec::new();
    for t in 0..xs.nrows() {
        let lin = |w: &Array2<f64>, u: &Array2<f64>, b: &Array2<f64>, hin: &[f64], j: usize| {
            let mut s = b[[0, j]];
            for i in 0..xs.ncols() {
                s += xs[[t, i]] * w[[i, j]];
            }
            for i in 0..hdim {
                s += hin[i] * u[[i, j]];
            }
            s
        };
        let z: Vec<f64> = (0..hdim).map(|j| sig(lin(wz, uz, bz, &h, j))).collect();
        let r: Vec<f64> = (0..hdim).map(|j| sig(lin(wr, ur, br, &h, j))).collect();
        let rh: Vec<f64> = (0..hdim).map(|j| r[j] * h[j]).collect();
        let c: Vec<f64> = (0..hdim).map(|j| lin(wc, uc, bc, &rh, j).tanh()).collect();
        h = (0..hdim).map(|j| (1.0 - z[j]) * h[j] + z[j] * c[j]).collect();
        out.push(h.clone());
    }
    out
}

// ---------------------------------------------------------------------------
// triplet brute force

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Exhaustive search over all (positive, negative) column pairs. The chosen
/// pair is the smallest under the order (larger d+, smaller d-, lower p,
/// lower n).
pub fn brute_mine(
    anchors: &Array2<f64>,
    a_labels: &[usize],
    cols: &Array2<f64>,
    c_labels: &[usize],
    same_set: bool,
    i: usize,
) -> (Option<usize>, Option<usize>) {
    let a = anchors.row(i).to_vec();
    let m = cols.nrows();
    let pos_ok = |j: usize| c_labels[j] == a_labels[i] && !(same_set && j == i);
    let neg_ok = |j: usize| c_labels[j] != a_labels[i];
    let d: Vec<f64> = (0..m).map(|j| dist(&a, &cols.row(j).to_vec())).collect();
    let mut best: Option<(usize, usize)> = None;
    let better = |p: usize, n: usize, q: (usize, usize)| {
        let (bp, bn) = q;
        if d[p] != d[bp] {
            return d[p] > d[bp];
        }
        if d[n] != d[bn] {
            return d[n] < d[bn];
        }
        (p, n) < (bp, bn)
    };
    for p in 0..m {
        for n in 0..m {
            if pos_ok(p) && neg_ok(n) && best.map_or(true, |b| better(p, n, b)) {
                best = Some((p, n));
            }
        }
    }
    if let Some((p, n)) = best {
        return (Some(p), Some(n));
    }
    // no complete pair: report whichever side exists, chosen the same way
    let mut p_only: Option<usize> = None;
    let mut n_only: Option<usize> = None;
    for j in 0..m {
        if pos_ok(j) && p_only.map_or(true, |b| d[j] > d[b]) {
            p_only = Some(j);
        }
        if neg_ok(j) && n_only.map_or(true, |b| d[j] < d[b]) {
            n_only = Some(j);
        }
    }
    (p_only, n_only)
}

pub fn brute_loss(
    anchors: &Array2<f64>,
    a_labels: &[usize],
    cols: &Array2<f64>,
    c_labels: &[usize],
    same_set: bool,
    margin: f64,
    hinge: bool,
) -> f64 {
    let mut total = 0.0;
    for i in 0..anchors.nrows() {
        if let (Some(p), Some(n)) = brute_mine(anchors, a_labels, cols, c_labels, same_set, i) {
            let a = anchors.row(i).to_vec();
            let t = dist(&a, &cols.row(p).to_vec()) - dist(&a, &cols.row(n).to_vec()) + margin;
            total += if hinge { t.max(0.0) } else { t };
        }
    }
    total
}

/// Smallest gap in the batch between a mined distance and its runner-up,
/// and between each hinge term and zero. Finite differences are only
/// meaningful when this is well above the step size.
pub fn mining_gap(
    anchors: &Array2<f64>,
    a_labels: &[usize],
    cols: &Array2<f64>,
    c_labels: &[usize],
    same_set: bool,
    margin: f64,
    hinge: bool,
) -> f64 {
    let mut gap = f64::INFINITY;
    for i in 0..anchors.nrows() {
        let a = anchors.row(i).to_vec();
        let mut pos: Vec<f64> = Vec::new();
        let mut neg: Vec<f64> = Vec::new();
        for j in 0..cols.nrows() {
            let d = dist(&a, &cols.row(j).to_vec());
            if c_labels[j] == a_labels[i] {
                if !(same_set && j == i) {
                    pos.push(d);
                }
            } else {
                neg.push(d);
            }
        }
        if pos.is_empty() || neg.is_empty() {
            continue;
        }
        pos.sort_by(|x, y| y.partial_cmp(x).unwrap());
        neg.sort_by(|x, y| x.partial_cmp(y).unwrap());
        if pos.len() > 1 {
            gap = gap.min(pos[0] - pos[1]);
        }
        if neg.len() > 1 {
            gap = gap.min(neg[1] - neg[0]);
        }
        if hinge {
            gap = gap.min((pos[0] - neg[0] + margin).abs());
        }
        gap = gap.min(neg[0]);
    }
    gap
}

// ---------------------------------------------------------------------------
// statistics

/// One-sided sign test: P(X >= positives) for X ~ Binomial(n, 1/2), ties
/// dropped beforehand by the caller.
pub fn sign_test_p(positives: usize, n: usize) -> f64 {
    let mut p = 0.0;
    for k in positives..=n {
        p += binom(n, k);
    }
    p / 2f64.powi(n as i32)
}

fn binom(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-scale..scale))
}
