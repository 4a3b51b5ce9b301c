//! Per-seed checks shared by the topic test files and the acceptance run.

use std::collections::HashMap;
use std::path::Path;

use gazemb::analysis::{kde_density, mrmr_rank, DEFAULT_BINS};
use gazemb::checkpoint::Checkpoint;
use gazemb::evaluation::{accuracy, evaluate, micro_f1, per_class_f1};
use gazemb::gaze_features::{extract_windowed_frames, feature_names, GazeConfig, GAZE_FEATURE_DIM};
use gazemb::ingest::{parse_tracker_reader, FrameRecord};
use gazemb::model::{EmotionModel, FusionMode, GazeInput, GazeMode, Modality, ModelConfig, Sample};
use gazemb::nn::{Dense, Graph, Gru, ParamStore, SeqBatch};
use gazemb::synthetic::{generate, SynthConfig};
use gazemb::trainer::{batch_objective, prepare_samples, train, TrainConfig, TrainMode};
use gazemb::triplet::{
    full_triplet_loss, inter_distances, inter_loss, intra_distances, intra_loss, mine_hardest,
    triplet_loss_graph, EmbeddingBatch, TripletOptions,
};
use ndarray::{Array1, Array2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::*;

// ---------------------------------------------------------------------------
// gaze fixtures

pub fn gaze_fixtures() -> Vec<(&'static str, f64, Vec<FrameSpec>, GazeConfig)> {
    let ramp: Vec<FrameSpec> = (0..25)
        .map(|t| {
            let t = t as f64;
            FrameSpec {
                gx: 0.02 * t - 0.1,
                gy: 0.05 * (t * 0.7).sin(),
                pupil_radius: 1.5 + 0.2 * (t * 0.9).sin(),
                depth: 600.0 + if (t as usize) % 4 < 2 { t } else { -t },
                au45: [0.0, 0.3, 1.2, 2.5, 1.0, 0.2, 0.0][t as usize % 7],
                success: !matches!(t as usize, 6 | 7 | 19),
                confidence: 0.9,
            }
        })
        .collect();
    let dropout: Vec<FrameSpec> = (0..20)
        .map(|t| FrameSpec {
            gx: if t % 2 == 0 { 0.1 } else { 0.105 },
            gy: -0.05,
            pupil_radius: 1.4 + 0.01 * t as f64,
            success: !(5..14).contains(&t),
            au45: if t % 5 == 0 { 3.0 } else { 0.5 },
            ..FrameSpec::default()
        })
        .collect();
    let short: Vec<FrameSpec> = vec![
        FrameSpec { gx: 0.3, au45: 1.5, ..FrameSpec::default() },
        FrameSpec { gx: 0.2, depth: 610.0, ..FrameSpec::default() },
        FrameSpec { gx: 0.25, pupil_radius: 1.2, depth: 605.0, ..FrameSpec::default() },
    ];
    let constant = vec![FrameSpec { gx: 0.1, gy: -0.2, ..FrameSpec::default() }; 45];
    let mut r = rng(7);
    let noisy: Vec<FrameSpec> = (0..40)
        .map(|_| FrameSpec {
            gx: r.gen_range(-0.4..0.4),
            gy: r.gen_range(-0.3..0.3),
            pupil_radius: r.gen_range(1.0..2.2),
            depth: r.gen_range(550.0..650.0),
            au45: r.gen_range(0.0..3.0),
            success: r.gen::<f64>() > 0.15,
            confidence: r.gen_range(0.2..1.0),
        })
        .collect();
    let strict = GazeConfig {
        min_confidence: 0.5,
        blink_threshold: 1.5,
        fixation_threshold: 0.05,
        ..GazeConfig::default()
    };
    vec![
        ("ramp_10fps", 10.0, ramp, GazeConfig::default()),
        ("dropout_8fps", 8.0, dropout, GazeConfig::default()),
        ("short_5fps", 5.0, short, GazeConfig::default()),
        ("constant_30fps", 30.0, constant, GazeConfig::default()),
        ("noisy_25fps", 25.0, noisy, strict),
    ]
}

/// Feature names written out from the functional table, in column order.
pub fn expected_feature_names() -> Vec<String> {
    let full = [
        "min", "max", "mean", "median", "q1", "q3", "std", "iqr_1_2", "iqr_2_3", "iqr_1_3", "lr_intercept",
        "lr_slope",
    ];
    let mut want: Vec<String> = Vec::new();
    for ch in ["gaze_angle_x", "gaze_angle_y", "delta_gaze_angle_x", "delta_gaze_angle_y", "pupil_diameter_mm"] {
        want.extend(full.iter().map(|s| format!("{ch}_{s}")));
    }
    want.extend(
        full.iter()
            .filter(|s| **s != "median")
            .map(|s| format!("delta_pupil_diameter_mm_{s}")),
    );
    want.extend(
        ["max", "mean", "median", "q3", "std", "iqr_1_2", "iqr_2_3", "iqr_1_3", "lr_intercept", "lr_slope"]
            .iter()
            .map(|s| format!("eye_blink_intensity_{s}")),
    );
    for ch in ["pupil_dilation", "pupil_constriction"] {
        want.extend(
            ["time_ratio", "mean_time", "max_time", "total_time"]
                .iter()
                .map(|s| format!("{ch}_{s}")),
        );
    }
    want.extend(
        ["time_ratio", "mean_time", "max_time", "median_time"]
            .iter()
            .map(|s| format!("gaze_approach_{s}")),
    );
    for ch in ["eyes_closed", "gaze_fixation"] {
        want.extend(
            ["time_ratio", "min_time", "max_time", "mean_time", "median_time"]
                .iter()
                .map(|s| format!("{ch}_{s}")),
        );
    }
    want
}

pub fn oracle_params(cfg: &GazeConfig) -> OracleParams {
    OracleParams {
        blink_threshold: cfg.blink_threshold,
        fixation_threshold: cfg.fixation_threshold,
        min_confidence: cfg.min_confidence,
    }
}

/// Parses each fixture from tracker CSV text and compares every feature of
/// every row against the oracle. Returns the number of values compared.
pub fn gaze_fixture_check(tol: f64) -> Result<usize, String> {
    let mut compared = 0;
    for (name, fps, specs, cfg) in gaze_fixtures() {
        let text = tracker_csv(&build_frames(&specs, fps));
        let frames: Vec<FrameRecord> =
            parse_tracker_reader(text.as_bytes(), Path::new(name)).map_err(|e| e.to_string())?;
        let got = extract_windowed_frames(&frames, fps, &cfg).map_err(|e| e.to_string())?;
        let want = oracle_windowed(&frames, fps, &oracle_params(&cfg)).ok_or("no valid frame")?;
        if got.dim() != (frames.len(), GAZE_FEATURE_DIM) {
            return Err(format!("{name}: shape {:?}", got.dim()));
        }
        for (i, row) in want.iter().enumerate() {
            let (j, d) = max_abs_diff(&got.row(i).to_vec(), row);
            if d > tol {
                return Err(format!("{name} row {i} {}: off by {d}", feature_names()[j]));
            }
            compared += row.len();
        }
    }
    Ok(compared)
}

// ---------------------------------------------------------------------------
// finite differences

pub const FD_EPS: f64 = 1e-4;
pub const FD_REL: f64 = 1e-3;
pub const FD_FLOOR: f64 = 1e-8;

pub fn fd_dense(seed: u64) -> Result<GradReport, String> {
    let mut r = rng(seed);
    let (n, d, k) = (r.gen_range(1..6), r.gen_range(1..5), r.gen_range(2..5));
    let mut store = ParamStore::new();
    let layer = Dense::new(&mut store, "dense", d, k, &mut r);
    let x = random_matrix(&mut r, n, d, 2.0);
    let labels: Vec<usize> = (0..n).map(|_| r.gen_range(0..k)).collect();
    let build = |g: &mut Graph, s: &ParamStore| {
        let xv = g.constant(x.clone());
        let z = layer.forward(g, s, xv);
        g.softmax_cross_entropy(z, &labels)
    };
    let loss = |s: &ParamStore| {
        let mut g = Graph::new();
        let l = build(&mut g, s);
        g.scalar(l)
    };
    let mut g = Graph::new();
    let l = build(&mut g, &store);
    g.backward(l).map_err(|e| e.to_string())?;
    fd_check(&store, &g.param_grads(&store), loss, FD_EPS, FD_REL, FD_FLOOR)
}

pub fn fd_gru(seed: u64) -> Result<GradReport, String> {
    let mut r = rng(1000 + seed);
    let (d, h) = (r.gen_range(1..5), r.gen_range(1..5));
    let lens: Vec<usize> = (0..r.gen_range(1..4)).map(|_| r.gen_range(1..5)).collect();
    let seqs: Vec<Array2<f64>> = lens.iter().map(|&l| random_matrix(&mut r, l, d, 1.5)).collect();
    let mut store = ParamStore::new();
    let gru = Gru::new(&mut store, "gru", d, h, &mut r);
    let target = random_matrix(&mut r, seqs.len(), h, 1.0);
    let build = |g: &mut Graph, s: &ParamStore| {
        let views: Vec<_> = seqs.iter().map(|m| m.view()).collect();
        let batch = SeqBatch::from_sequences(&views).unwrap();
        let last = gru.last(g, s, &batch).unwrap();
        let t = g.constant(target.clone());
        let diff = g.sub(last, t);
        let sq = g.mul(diff, diff);
        g.sum(sq)
    };
    let loss = |s: &ParamStore| {
        let mut g = Graph::new();
        let l = build(&mut g, s);
        g.scalar(l)
    };
    let mut g = Graph::new();
    let l = build(&mut g, &store);
    g.backward(l).map_err(|e| e.to_string())?;
    fd_check(&store, &g.param_grads(&store), loss, FD_EPS, FD_REL, FD_FLOOR)
}

fn fusion_variant(seed: u64) -> (FusionMode, GazeMode) {
    [
        (FusionMode::ModelLevel, GazeMode::None),
        (FusionMode::ModelLevel, GazeMode::Windowed),
        (FusionMode::ModelLevel, GazeMode::Averaged),
        (FusionMode::Early, GazeMode::Windowed),
    ][seed as usize % 4]
}

fn random_samples(r: &mut ChaCha8Rng, cfg: &ModelConfig, labels: &[usize]) -> Vec<Sample> {
    let r = &mut rng(r.gen());
    labels
        .iter()
        .enumerate()
        .map(|(i, &label)| {
            let k = r.gen_range(1..5);
            let gaze = match cfg.gaze_mode {
                GazeMode::None => GazeInput::None,
                GazeMode::Windowed => GazeInput::Windowed(random_matrix(r, k, cfg.gaze_dim, 1.0)),
                GazeMode::Averaged => {
                    GazeInput::Averaged(Array1::from_shape_fn(cfg.gaze_dim, |_| r.gen_range(-1.0..1.0)))
                }
            };
            Sample {
                id: format!("s{i}"),
                label,
                audio: Array1::from_shape_fn(cfg.audio_dim, |_| r.gen_range(-1.5..1.5)),
                visual: random_matrix(r, k, cfg.visual_dim, 1.5),
                gaze,
            }
        })
        .collect()
}

/// Full crossmodal objective (both cross-entropies plus triplet term) over
/// a batch of six, cycling through the fusion variants. Draws that put a
/// mined distance or hinge within 1e-3 of a kink are redrawn; the second
/// value is the number of redraws.
pub fn fd_full_model(seed: u64) -> Result<(GradReport, usize), String> {
    let labels = [0usize, 0, 1, 1, 2, 2];
    let (fusion_mode, gaze_mode) = fusion_variant(seed);
    let cfg = ModelConfig {
        visual_dim: 3,
        gaze_dim: 2,
        audio_dim: 3,
        embedding_dim: 3,
        classifier_hidden: 3,
        num_classes: 3,
        fusion_mode,
        gaze_mode,
        max_seq_len: None,
    };
    let train = TrainConfig {
        mode: TrainMode::Crossmodal,
        triplet_weight: 0.7,
        triplet: TripletOptions {
            margin: 0.5,
            ..TripletOptions::default()
        },
        ..TrainConfig::default()
    };
    let mut redraws = 0;
    let mut chosen = None;
    for attempt in 0..50 {
        let mut r = rng(10_000 + seed * 64 + attempt);
        let model = EmotionModel::new(cfg.clone(), r.gen()).map_err(|e| e.to_string())?;
        let samples = random_samples(&mut r, &cfg, &labels);
        let refs: Vec<&Sample> = samples.iter().collect();
        let a = model.embed(&refs, Modality::Audio).map_err(|e| e.to_string())?;
        let v = model.embed(&refs, Modality::Visual).map_err(|e| e.to_string())?;
        let m = train.triplet.margin;
        let gap = mining_gap(&a, &labels, &a, &labels, true, m, true)
            .min(mining_gap(&v, &labels, &v, &labels, true, m, true))
            .min(mining_gap(&a, &labels, &v, &labels, false, m, true));
        if gap > 1e-3 {
            chosen = Some((model, samples));
            break;
        }
        redraws += 1;
    }
    let (model, samples) = chosen.ok_or("no smooth draw in 50 attempts")?;
    let refs: Vec<&Sample> = samples.iter().collect();
    let loss = |s: &ParamStore| {
        let mut m = model.clone();
        m.params = s.clone();
        let mut g = Graph::new();
        let l = batch_objective(&mut g, &m, &refs, &train).unwrap();
        g.scalar(l.total)
    };
    let mut g = Graph::new();
    let l = batch_objective(&mut g, &model, &refs, &train).map_err(|e| e.to_string())?;
    if l.metrics.triplet <= 0.0 {
        return Err(format!("seed {seed}: triplet term inactive"));
    }
    g.backward(l.total).map_err(|e| e.to_string())?;
    let grads = g.param_grads(&model.params);
    fd_check(&model.params, &grads, loss, FD_EPS, FD_REL, FD_FLOOR)
        .map(|rep| (rep, redraws))
        .map_err(|e| format!("seed {seed} {fusion_mode:?}/{gaze_mode:?}: {e}"))
}

// ---------------------------------------------------------------------------
// triplet brute force comparison

pub struct TripletCase {
    pub a: Array2<f64>,
    pub b: Array2<f64>,
    pub labels: Vec<usize>,
}

/// Batch of two to eight rows; odd seeds use small integer coordinates so
/// that equal distances occur.
pub fn triplet_case(seed: u64) -> TripletCase {
    let mut r = rng(seed);
    let n = r.gen_range(2..=8);
    let d = r.gen_range(1..=4);
    let classes = r.gen_range(1..=3);
    let labels = (0..n).map(|_| r.gen_range(0..classes)).collect();
    let m = |r: &mut ChaCha8Rng| {
        if seed % 2 == 1 {
            Array2::from_shape_fn((n, d), |_| r.gen_range(-2i32..=2) as f64)
        } else {
            random_matrix(r, n, d, 3.0)
        }
    };
    TripletCase {
        a: m(&mut r),
        b: m(&mut r),
        labels,
    }
}

/// Mined indices for all four distance matrices of the case.
pub fn triplet_mining_check(seed: u64) -> Result<usize, String> {
    let c = triplet_case(seed);
    let ea = EmbeddingBatch::new(c.a.clone(), c.labels.clone(), Modality::Audio).map_err(|e| e.to_string())?;
    let eb = EmbeddingBatch::new(c.b.clone(), c.labels.clone(), Modality::Visual).map_err(|e| e.to_string())?;
    let checks = [
        (intra_distances(&ea), &c.a, &c.a, true),
        (intra_distances(&eb), &c.b, &c.b, true),
        (inter_distances(&ea, &eb).unwrap(), &c.a, &c.b, false),
        (inter_distances(&eb, &ea).unwrap(), &c.b, &c.a, false),
    ];
    let mut anchors = 0;
    for (k, (dm, rows, cols, same)) in checks.iter().enumerate() {
        for i in 0..c.labels.len() {
            let got = mine_hardest(dm, i);
            let want = brute_mine(rows, &c.labels, cols, &c.labels, *same, i);
            if got != want {
                return Err(format!("seed {seed} matrix {k} anchor {i}: {got:?} vs {want:?}"));
            }
            anchors += 1;
        }
    }
    Ok(anchors)
}

/// Intra, inter, full and graph losses under default, literal, symmetric
/// and unclipped options.
pub fn triplet_loss_check(seed: u64, tol: f64) -> Result<(), String> {
    let c = triplet_case(seed);
    let mut r = rng(50_000 + seed);
    let ea = EmbeddingBatch::new(c.a.clone(), c.labels.clone(), Modality::Audio).map_err(|e| e.to_string())?;
    let eb = EmbeddingBatch::new(c.b.clone(), c.labels.clone(), Modality::Visual).map_err(|e| e.to_string())?;
    let l = &c.labels;
    let margin = r.gen_range(0.0..2.0);
    let option_sets = [
        TripletOptions::default(),
        TripletOptions::literal(),
        TripletOptions { margin, hinge: true, symmetrize_inter: true },
        TripletOptions { margin, hinge: false, symmetrize_inter: false },
    ];
    for opts in option_sets {
        let (m, h) = (opts.margin, opts.hinge);
        let intra_a = brute_loss(&c.a, l, &c.a, l, true, m, h);
        let intra_b = brute_loss(&c.b, l, &c.b, l, true, m, h);
        let mut inter = brute_loss(&c.a, l, &c.b, l, false, m, h);
        if opts.symmetrize_inter {
            inter += brute_loss(&c.b, l, &c.a, l, false, m, h);
        }
        let full = intra_a + intra_b + inter;
        let mut g = Graph::new();
        let va = g.constant(c.a.clone());
        let vb = g.constant(c.b.clone());
        let graph = triplet_loss_graph(&mut g, va, l, vb, l, &opts).map_or(0.0, |v| g.scalar(v));
        let pairs = [
            ("intra a", intra_loss(&ea, &opts), intra_a, tol),
            ("intra b", intra_loss(&eb, &opts), intra_b, tol),
            ("inter", inter_loss(&ea, &eb, &opts).unwrap(), inter, tol),
            ("full", full_triplet_loss(&ea, &eb, &opts).unwrap(), full, tol),
            ("graph", graph, full, 1e-9),
        ];
        for (what, got, want, t) in pairs {
            if (got - want).abs() > t {
                return Err(format!("seed {seed} {opts:?} {what}: {got} vs {want}"));
            }
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// metrics

/// 2PR / (P + R) per class with zero when undefined.
pub fn f1_oracle(p: &[usize], t: &[usize], k: usize) -> Vec<f64> {
    (0..k)
        .map(|c| {
            let tp = p.iter().zip(t).filter(|(a, b)| **a == c && **b == c).count() as f64;
            let pp = p.iter().filter(|a| **a == c).count() as f64;
            let ap = t.iter().filter(|b| **b == c).count() as f64;
            if tp == 0.0 {
                return 0.0;
            }
            let (prec, rec) = (tp / pp, tp / ap);
            2.0 * prec * rec / (prec + rec)
        })
        .collect()
}

/// Micro F1 against the hit rate on random prediction sets. Equality is
/// exact up to the last bit of the division.
pub fn micro_f1_identity_check(sets: usize) -> Result<(), String> {
    let mut r = rng(5);
    for s in 0..sets {
        let n = r.gen_range(1..40);
        let k = r.gen_range(2..8);
        let p: Vec<usize> = (0..n).map(|_| r.gen_range(0..k)).collect();
        let t: Vec<usize> = (0..n).map(|_| r.gen_range(0..k)).collect();
        let hits = p.iter().zip(&t).filter(|(a, b)| a == b).count() as f64 / n as f64;
        let f = micro_f1(&p, &t).map_err(|e| e.to_string())?;
        let a = accuracy(&p, &t).map_err(|e| e.to_string())?;
        if (f - hits).abs() > 1e-12 || (a - hits).abs() > 1e-12 {
            return Err(format!("set {s}: micro F1 {f}, accuracy {a}, hits {hits}"));
        }
    }
    Ok(())
}

pub const F1_FIXTURES: [(&[usize], &[usize], usize); 3] = [
    (&[0, 1, 1, 2, 2, 2, 0], &[0, 1, 2, 2, 2, 0, 1], 4),
    (&[0, 0, 0, 0], &[0, 1, 2, 0], 3),
    (&[2, 1, 0, 2, 1, 0], &[2, 1, 0, 2, 1, 0], 3),
];

pub fn per_class_f1_check() -> Result<(), String> {
    for (i, (p, t, k)) in F1_FIXTURES.iter().enumerate() {
        let got = per_class_f1(p, t, *k).map_err(|e| e.to_string())?;
        let want = f1_oracle(p, t, *k);
        let (c, d) = max_abs_diff(&got, &want);
        if d > 1e-12 {
            return Err(format!("fixture {i} class {c}: {} vs {}", got[c], want[c]));
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// mRMR

pub fn bins_oracle(v: &[f64], bins: usize) -> Vec<usize> {
    v.iter()
        .map(|x| {
            let below = v.iter().filter(|y| *y < x).count();
            (bins * below / v.len()).min(bins - 1)
        })
        .collect()
}

fn entropy<K: std::hash::Hash + Eq>(items: impl Iterator<Item = K>, n: f64) -> f64 {
    let mut counts: HashMap<K, usize> = HashMap::new();
    for k in items {
        *counts.entry(k).or_default() += 1;
    }
    counts.values().map(|&c| -(c as f64 / n) * (c as f64 / n).ln()).sum()
}

pub fn mi_oracle(a: &[usize], b: &[usize]) -> f64 {
    let n = a.len() as f64;
    entropy(a.iter(), n) + entropy(b.iter(), n) - entropy(a.iter().zip(b), n)
}

/// Greedy selection that recomputes every mean redundancy from scratch.
pub fn mrmr_oracle(x: &Array2<f64>, labels: &[usize], target: usize, top_k: usize) -> Vec<usize> {
    let y: Vec<usize> = labels.iter().map(|&l| usize::from(l == target)).collect();
    let binned: Vec<Vec<usize>> = (0..x.ncols())
        .map(|j| bins_oracle(&x.column(j).to_vec(), DEFAULT_BINS))
        .collect();
    let mut chosen: Vec<usize> = Vec::new();
    while chosen.len() < top_k {
        let mut best: Option<(usize, f64)> = None;
        for j in (0..x.ncols()).filter(|j| !chosen.contains(j)) {
            let rel = mi_oracle(&binned[j], &y);
            let red = if chosen.is_empty() {
                0.0
            } else {
                chosen.iter().map(|&s| mi_oracle(&binned[j], &binned[s])).sum::<f64>() / chosen.len() as f64
            };
            let score = rel - red;
            if best.map_or(true, |(_, b)| score > b + 1e-12) {
                best = Some((j, score));
            }
        }
        chosen.push(best.unwrap().0);
    }
    chosen
}

/// Three classes; columns cycle through label-scaled, pure noise and
/// one-versus-rest indicator.
pub fn mrmr_fixture(seed: u64, n: usize, d: usize) -> (Array2<f64>, Vec<usize>) {
    let mut r = rng(seed);
    let labels: Vec<usize> = (0..n).map(|i| i % 3).collect();
    let x = Array2::from_shape_fn((n, d), |(i, j)| {
        let noise: f64 = StandardNormal.sample(&mut r);
        match j % 3 {
            0 => labels[i] as f64 * (j as f64 + 1.0) * 0.3 + noise,
            1 => noise,
            _ => (labels[i] == 0) as u8 as f64 + 0.5 * noise,
        }
    });
    (x, labels)
}

/// Full rankings for every class of one fixture with three to eight features.
pub fn mrmr_check(seed: u64) -> Result<(), String> {
    let d = 3 + seed as usize % 6;
    let (x, labels) = mrmr_fixture(seed, 60, d);
    for target in 0..3 {
        let got: Vec<usize> = mrmr_rank(&x, &labels, target, d, DEFAULT_BINS)
            .map_err(|e| e.to_string())?
            .iter()
            .map(|f| f.index)
            .collect();
        let want = mrmr_oracle(&x, &labels, target, d);
        if got != want {
            return Err(format!("seed {seed} class {target}: {got:?} vs {want:?}"));
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// KDE

pub fn gaussian_points(seed: u64, n: usize) -> Array2<f64> {
    let mut r = rng(seed);
    Array2::from_shape_fn((n, 2), |(_, j)| {
        let z: f64 = StandardNormal.sample(&mut r);
        if j == 0 {
            0.1 + 0.2 * z
        } else {
            -0.05 + 0.1 * z
        }
    })
}

/// Grid placement, Scott bandwidths and every cell against a direct sum of
/// Gaussian kernels. Returns the largest cell difference.
pub fn kde_direct_check(seed: u64, res: usize, tol: f64) -> Result<f64, String> {
    let pts = gaussian_points(seed, 100);
    let grid = kde_density(&pts, res).map_err(|e| e.to_string())?;
    let n = pts.nrows() as f64;
    let scott = |j: usize| {
        let col = pts.column(j);
        let m = col.sum() / n;
        let var = col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
        var.sqrt() * n.powf(-1.0 / 6.0)
    };
    let (hx, hy) = (scott(0), scott(1));
    if (grid.bandwidth[0] - hx).abs() > 1e-12 || (grid.bandwidth[1] - hy).abs() > 1e-12 {
        return Err(format!("bandwidth {:?} vs ({hx}, {hy})", grid.bandwidth));
    }
    let span = |j: usize| {
        let lo = pts.column(j).iter().copied().fold(f64::INFINITY, f64::min);
        let hi = pts.column(j).iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (lo - 0.1 * (hi - lo), hi + 0.1 * (hi - lo))
    };
    let ((x0, x1), (y0, y1)) = (span(0), span(1));
    let edges = [grid.xs[0] - x0, grid.xs[res - 1] - x1, grid.ys[0] - y0, grid.ys[res - 1] - y1];
    if edges.iter().any(|e| e.abs() > 1e-12) {
        return Err(format!("grid edges off by {edges:?}"));
    }
    let mut worst = 0f64;
    for iy in 0..res {
        for ix in 0..res {
            let (gx, gy) = (grid.xs[ix], grid.ys[iy]);
            let mut s = 0.0;
            for p in pts.rows() {
                let u = (gx - p[0]) / hx;
                let v = (gy - p[1]) / hy;
                s += (-(u * u + v * v) / 2.0).exp() / (2.0 * std::f64::consts::PI * hx * hy);
            }
            let d = (grid.density[[iy, ix]] - s / n).abs();
            if d > tol {
                return Err(format!("cell {iy},{ix} off by {d}"));
            }
            worst = worst.max(d);
        }
    }
    Ok(worst)
}

/// Riemann sum of the grid density; errors when outside 1 ± tol.
pub fn kde_integral_check(seed: u64, res: usize, tol: f64) -> Result<f64, String> {
    let grid = kde_density(&gaussian_points(seed, 100), res).map_err(|e| e.to_string())?;
    let total = grid.integral();
    if (total - 1.0).abs() >= tol || grid.density.iter().any(|&v| v < 0.0) {
        return Err(format!("seed {seed}: integral {total}"));
    }
    Ok(total)
}

// ---------------------------------------------------------------------------
// determinism and checkpoints

pub fn small_data(gaze_mode: GazeMode) -> (Vec<Sample>, Vec<Sample>) {
    let cfg = SynthConfig {
        num_classes: 3,
        utterances_per_class: 8,
        min_frames: 3,
        max_frames: 6,
        visual_dim: 4,
        audio_dim: 5,
        latent_dim: 3,
        seed: 4,
        ..SynthConfig::default()
    };
    let ds = generate(&cfg).unwrap();
    let g = GazeConfig::default();
    (
        prepare_samples(&ds.train, gaze_mode, &g).unwrap(),
        prepare_samples(&ds.validation, gaze_mode, &g).unwrap(),
    )
}

pub fn small_model(gaze_mode: GazeMode) -> ModelConfig {
    ModelConfig {
        visual_dim: 4,
        audio_dim: 5,
        embedding_dim: 6,
        classifier_hidden: 5,
        num_classes: 3,
        gaze_mode,
        ..ModelConfig::default()
    }
}

pub fn quick(mode: TrainMode, epochs: usize) -> TrainConfig {
    TrainConfig {
        batch_size: 6,
        lr: 1e-2,
        epochs,
        seed: 3,
        mode,
        ..TrainConfig::default()
    }
}

/// Two runs with one config and seed must give byte-identical logs and
/// parameters, and a different seed must change the log.
pub fn determinism_check(gaze_mode: GazeMode) -> Result<(), String> {
    let (tr, va) = small_data(gaze_mode);
    let cfg = small_model(gaze_mode);
    let tc = quick(TrainMode::Crossmodal, 3);
    let a = train(&tr, &va, &cfg, &tc).map_err(|e| e.to_string())?;
    let b = train(&tr, &va, &cfg, &tc).map_err(|e| e.to_string())?;
    if a.log_csv() != b.log_csv() {
        return Err(format!("{gaze_mode:?}: logs differ"));
    }
    if a.model.params != b.model.params {
        return Err(format!("{gaze_mode:?}: parameters differ"));
    }
    let c = train(&tr, &va, &cfg, &TrainConfig { seed: 4, ..tc }).map_err(|e| e.to_string())?;
    if a.log_csv() == c.log_csv() {
        return Err(format!("{gaze_mode:?}: seed has no effect"));
    }
    Ok(())
}

/// Saves a trained model, loads it back and compares predictions and F1
/// bit for bit on both test modalities.
pub fn checkpoint_check(gaze_mode: GazeMode, dir: &Path) -> Result<(), String> {
    let (tr, va) = small_data(gaze_mode);
    let cfg = small_model(gaze_mode);
    let out = train(&tr, &va, &cfg, &quick(TrainMode::Crossmodal, 2)).map_err(|e| e.to_string())?;
    let path = dir.join(format!("ckpt_{gaze_mode:?}.txt"));
    let ck = Checkpoint {
        model: out.model.clone(),
        standardizer: out.standardizer.clone(),
        gaze: GazeConfig::default(),
    };
    ck.save(&path, &["test".to_string()]).map_err(|e| e.to_string())?;
    let back = Checkpoint::load(&path).map_err(|e| e.to_string())?;
    if back.model.params != out.model.params || back.standardizer != out.standardizer {
        return Err(format!("{gaze_mode:?}: reloaded state differs"));
    }
    for m in Modality::BOTH {
        let a = evaluate(&out.model, &out.standardizer.transform_all(&va), m).map_err(|e| e.to_string())?;
        let b = evaluate(&back.model, &back.standardizer.transform_all(&va), m).map_err(|e| e.to_string())?;
        if a.predictions != b.predictions || a.micro_f1.to_bits() != b.micro_f1.to_bits() {
            return Err(format!("{gaze_mode:?} {m:?}: evaluation differs after reload"));
        }
    }
    Ok(())
}
