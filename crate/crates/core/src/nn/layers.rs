use ndarray::{s, Array1, Array2, ArrayView2};
use rand::Rng;

use super::graph::{Graph, Var};
use super::params::{ParamId, ParamStore};
use crate::error::{Error, Result};

fn init_bound(fan_in: usize) -> f64 {
    1.0 / (fan_in.max(1) as f64).sqrt()
}

/// Fully connected layer `y = x W + b`.
#[derive(Debug, Clone)]
pub struct Dense {
    pub input_dim: usize,
    pub output_dim: usize,
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Dense {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        input_dim: usize,
        output_dim: usize,
        rng: &mut R,
    ) -> Self {
        let bound = init_bound(input_dim);
        Dense {
            input_dim,
            output_dim,
            weight: store.add_uniform(format!("{prefix}.weight"), input_dim, output_dim, bound, rng),
            bias: store.add_uniform(format!("{prefix}.bias"), 1, output_dim, bound, rng),
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        let xw = g.matmul(x, w);
        g.add_bias(xw, b)
    }
}

/// A batch of variable-length sequences, padded to the longest one.
///
/// `inputs` stacks the time steps: rows `t*n .. (t+1)*n` hold step `t` for
/// all `n` sequences. Padded positions are zero and masked out.
#[derive(Debug, Clone)]
pub struct SeqBatch {
    pub batch: usize,
    pub steps: usize,
    pub inputs: Array2<f64>,
    pub lengths: Vec<usize>,
}

impl SeqBatch {
    pub fn from_sequences(seqs: &[ArrayView2<f64>]) -> Result<Self> {
        let batch = seqs.len();
        if batch == 0 {
            return Err(Error::Shape("empty sequence batch".into()));
        }
        let dim = seqs[0].ncols();
        let lengths: Vec<usize> = seqs.iter().map(|s| s.nrows()).collect();
        if let Some(i) = seqs.iter().position(|s| s.ncols() != dim) {
            return Err(Error::Shape(format!(
                "sequence {i} has {} features, expected {dim}",
                seqs[i].ncols()
            )));
        }
        if lengths.contains(&0) {
            return Err(Error::Shape("sequence of length 0".into()));
        }
        let steps = *lengths.iter().max().expect("non-empty");
        let mut inputs = Array2::zeros((steps * batch, dim));
        for (i, seq) in seqs.iter().enumerate() {
            for (t, row) in seq.rows().into_iter().enumerate() {
                inputs.row_mut(t * batch + i).assign(&row);
            }
        }
        Ok(SeqBatch {
            batch,
            steps,
            inputs,
            lengths,
        })
    }

    /// Each row of `x` as a length-1 sequence.
    pub fn single_step(x: Array2<f64>) -> Self {
        let batch = x.nrows();
        SeqBatch {
            batch,
            steps: 1,
            inputs: x,
            lengths: vec![1; batch],
        }
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.ncols()
    }

    fn step_mask(&self, t: usize, hidden: usize) -> Option<Array2<f64>> {
        if self.lengths.iter().all(|&l| l > t) {
            return None;
        }
        Some(Array2::from_shape_fn((self.batch, hidden), |(i, _)| {
            if self.lengths[i] > t {
                1.0
            } else {
                0.0
            }
        }))
    }
}

/// Single-layer GRU:
///
/// ```text
/// z = sigmoid(x Wz + h Uz + bz)
/// r = sigmoid(x Wr + h Ur + br)
/// c = tanh(x Wh + (r * h) Uh + bh)
/// h' = (1 - z) * h + z * c
/// ```
#[derive(Debug, Clone)]
pub struct Gru {
    pub input_dim: usize,
    pub hidden: usize,
    pub w_update: ParamId,
    pub w_reset: ParamId,
    pub w_candidate: ParamId,
    pub u_update: ParamId,
    pub u_reset: ParamId,
    pub u_candidate: ParamId,
    pub b_update: ParamId,
    pub b_reset: ParamId,
    pub b_candidate: ParamId,
}

impl Gru {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        input_dim: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        let wb = init_bound(input_dim);
        let ub = init_bound(hidden);
        let mut w = |name: &str, rows: usize, bound: f64, rng: &mut R| {
            store.add_uniform(format!("{prefix}.{name}"), rows, hidden, bound, rng)
        };
        Gru {
            input_dim,
            hidden,
            w_update: w("w_update", input_dim, wb, rng),
            w_reset: w("w_reset", input_dim, wb, rng),
            w_candidate: w("w_candidate", input_dim, wb, rng),
            u_update: w("u_update", hidden, ub, rng),
            u_reset: w("u_reset", hidden, ub, rng),
            u_candidate: w("u_candidate", hidden, ub, rng),
            b_update: w("b_update", 1, ub, rng),
            b_reset: w("b_reset", 1, ub, rng),
            b_candidate: w("b_candidate", 1, ub, rng),
        }
    }

    /// Runs the recurrence and returns the hidden state after every step
    /// (`batch x hidden` each). A sequence's state is frozen once its
    /// length is exhausted, so the last element holds each sequence's
    /// state at its final valid frame.
    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        seq: &SeqBatch,
        h0: Option<Var>,
    ) -> Result<Vec<Var>> {
        if seq.input_dim() != self.input_dim {
            return Err(Error::Shape(format!(
                "GRU expects {} input features, got {}",
                self.input_dim,
                seq.input_dim()
            )));
        }
        let n = seq.batch;
        let x = g.constant(seq.inputs.clone());
        let project = |g: &mut Graph, w: ParamId, b: ParamId| {
            let w = g.param(store, w);
            let b = g.param(store, b);
            let xw = g.matmul(x, w);
            g.add_bias(xw, b)
        };
        let xz = project(g, self.w_update, self.b_update);
        let xr = project(g, self.w_reset, self.b_reset);
        let xc = project(g, self.w_candidate, self.b_candidate);
        let uz = g.param(store, self.u_update);
        let ur = g.param(store, self.u_reset);
        let uc = g.param(store, self.u_candidate);

        let mut h = match h0 {
            Some(h) => {
                if g.value(h).dim() != (n, self.hidden) {
                    return Err(Error::Shape("initial hidden state shape".into()));
                }
                h
            }
            None => g.constant(Array2::zeros((n, self.hidden))),
        };
        let mut states = Vec::with_capacity(seq.steps);
        for t in 0..seq.steps {
            let rows = t * n..(t + 1) * n;
            let xz_t = g.slice_rows(xz, rows.clone());
            let xr_t = g.slice_rows(xr, rows.clone());
            let xc_t = g.slice_rows(xc, rows);

            let hz = g.matmul(h, uz);
            let z_pre = g.add(xz_t, hz);
            let z = g.sigmoid(z_pre);
            let hr = g.matmul(h, ur);
            let r_pre = g.add(xr_t, hr);
            let r = g.sigmoid(r_pre);
            let rh = g.mul(r, h);
            let rhu = g.matmul(rh, uc);
            let c_pre = g.add(xc_t, rhu);
            let c = g.tanh(c_pre);

            let keep = g.one_minus(z);
            let kept = g.mul(keep, h);
            let fresh = g.mul(z, c);
            let h_new = g.add(kept, fresh);

            h = match seq.step_mask(t, self.hidden) {
                None => h_new,
                Some(mask) => {
                    let m = g.constant(mask);
                    let diff = g.sub(h_new, h);
                    let gated = g.mul(m, diff);
                    g.add(h, gated)
                }
            };
            states.push(h);
        }
        Ok(states)
    }

    /// One recurrence step on a graph node `x` (`n x D`), e.g. an embedding
    /// that must receive gradients. `h` defaults to zeros.
    pub fn step(&self, g: &mut Graph, store: &ParamStore, x: Var, h: Option<Var>) -> Result<Var> {
        let (n, d) = g.value(x).dim();
        if d != self.input_dim {
            return Err(Error::Shape(format!(
                "GRU expects {} input features, got {d}",
                self.input_dim
            )));
        }
        let h = match h {
            Some(h) => h,
            None => g.constant(Array2::zeros((n, self.hidden))),
        };
        let gate = |g: &mut Graph, w: ParamId, u: ParamId, b: ParamId, h_in: Var| {
            let w = g.param(store, w);
            let u = g.param(store, u);
            let b = g.param(store, b);
            let xw = g.matmul(x, w);
            let hu = g.matmul(h_in, u);
            let sum = g.add(xw, hu);
            g.add_bias(sum, b)
        };
        let z_pre = gate(g, self.w_update, self.u_update, self.b_update, h);
        let z = g.sigmoid(z_pre);
        let r_pre = gate(g, self.w_reset, self.u_reset, self.b_reset, h);
        let r = g.sigmoid(r_pre);
        let rh = g.mul(r, h);
        let c_pre = gate(g, self.w_candidate, self.u_candidate, self.b_candidate, rh);
        let c = g.tanh(c_pre);
        let keep = g.one_minus(z);
        let kept = g.mul(keep, h);
        let fresh = g.mul(z, c);
        Ok(g.add(kept, fresh))
    }

    /// Final hidden state of each sequence.
    pub fn last(&self, g: &mut Graph, store: &ParamStore, seq: &SeqBatch) -> Result<Var> {
        let states = self.forward(g, store, seq, None)?;
        Ok(*states.last().expect("at least one step"))
    }

    /// Runs one `k x D` sequence from `h0`, returning all `k x H` hidden
    /// states and the last one.
    pub fn run_sequence(
        &self,
        store: &ParamStore,
        sequence: &Array2<f64>,
        h0: &Array1<f64>,
    ) -> Result<(Array2<f64>, Array1<f64>)> {
        if h0.len() != self.hidden {
            return Err(Error::Shape(format!(
                "h0 has {} entries, hidden size is {}",
                h0.len(),
                self.hidden
            )));
        }
        let seq = SeqBatch::from_sequences(&[sequence.view()])?;
        let mut g = Graph::new();
        let h0 = g.constant(h0.clone().insert_axis(ndarray::Axis(0)));
        let states = self.forward(&mut g, store, &seq, Some(h0))?;
        let mut out = Array2::zeros((states.len(), self.hidden));
        for (t, v) in states.iter().enumerate() {
            out.row_mut(t).assign(&g.value(*v).row(0));
        }
        let last = out.slice(s![out.nrows() - 1, ..]).to_owned();
        Ok((out, last))
    }

    pub fn param_ids(&self) -> [ParamId; 9] {
        [
            self.w_update,
            self.w_reset,
            self.w_candidate,
            self.u_update,
            self.u_reset,
            self.u_candidate,
            self.b_update,
            self.b_reset,
            self.b_candidate,
        ]
    }
}
