//! Reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! A [`Graph`] is a tape: every operation appends a node holding its value.
//! [`Graph::backward`] walks the tape once in reverse and accumulates
//! gradients for every node that depends on a parameter.

use std::collections::HashMap;
use std::ops::Range;

use ndarray::{s, Array2, Axis};

use super::params::{ParamId, ParamStore};
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    OneMinus(Var),
    Sigmoid(Var),
    Tanh(Var),
    ConcatCols(Var, Var),
    SliceRows(Var, Range<usize>),
    Sum(Var),
    PairwiseDistance(Var, Var),
    WeightedSum(Var, Array2<f64>),
    SoftmaxCrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Array2<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Array2<f64>,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
    grads: Vec<Option<Array2<f64>>>,
    backward_done: bool,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Array2<f64>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let val = self.value(v);
        debug_assert_eq!(val.len(), 1);
        val[[0, 0]]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Constant input; never receives a gradient.
    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Leaf that receives a gradient but is not tied to a parameter store.
    pub fn variable(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf for a stored parameter; repeated calls reuse the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push(store.get(id).clone(), Op::Leaf, true);
        self.params.insert(id, v);
        v
    }

    fn check_same(&self, a: Var, b: Var, what: &str) {
        assert_eq!(
            self.value(a).dim(),
            self.value(b).dim(),
            "{what}: shape mismatch"
        );
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::MatMul(a, b), rg)
    }

    /// Adds a 1 x c row vector to every row of an n x c matrix.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Var {
        let b = self.value(bias);
        assert_eq!(b.nrows(), 1, "bias must be a row vector");
        let value = self.value(a) + b;
        let rg = self.rg(a) || self.rg(bias);
        self.push(value, Op::AddBias(a, bias), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.check_same(a, b, "add");
        let value = self.value(a) + self.value(b);
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::Add(a, b), rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.check_same(a, b, "sub");
        let value = self.value(a) - self.value(b);
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::Sub(a, b), rg)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.check_same(a, b, "mul");
        let value = self.value(a) * self.value(b);
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::Mul(a, b), rg)
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let value = self.value(a) * factor;
        let rg = self.rg(a);
        self.push(value, Op::Scale(a, factor), rg)
    }

    /// `1 - a`, elementwise.
    pub fn one_minus(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(|x| 1.0 - x);
        let rg = self.rg(a);
        self.push(value, Op::OneMinus(a), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(sigmoid);
        let rg = self.rg(a);
        self.push(value, Op::Sigmoid(a), rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(f64::tanh);
        let rg = self.rg(a);
        self.push(value, Op::Tanh(a), rg)
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Var {
        let value = ndarray::concatenate(Axis(1), &[self.value(a).view(), self.value(b).view()])
            .expect("concat_cols: row counts differ");
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::ConcatCols(a, b), rg)
    }

    pub fn slice_rows(&mut self, a: Var, rows: Range<usize>) -> Var {
        let value = self.value(a).slice(s![rows.clone(), ..]).to_owned();
        let rg = self.rg(a);
        self.push(value, Op::SliceRows(a, rows), rg)
    }

    /// Sum of all entries, as a 1 x 1 matrix.
    pub fn sum(&mut self, a: Var) -> Var {
        let value = Array2::from_elem((1, 1), self.value(a).sum());
        let rg = self.rg(a);
        self.push(value, Op::Sum(a), rg)
    }

    /// Euclidean distances between every row of `a` (n x E) and `b` (m x E).
    /// The subgradient at zero distance is taken as zero.
    pub fn pairwise_distance(&mut self, a: Var, b: Var) -> Var {
        let value = pairwise_euclidean(self.value(a), self.value(b));
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::PairwiseDistance(a, b), rg)
    }

    /// `sum(weights * a) + offset` as a 1 x 1 matrix; weights are constants.
    pub fn weighted_sum(&mut self, a: Var, weights: Array2<f64>, offset: f64) -> Var {
        assert_eq!(self.value(a).dim(), weights.dim(), "weighted_sum: shape mismatch");
        let total = (self.value(a) * &weights).sum() + offset;
        let rg = self.rg(a);
        self.push(
            Array2::from_elem((1, 1), total),
            Op::WeightedSum(a, weights),
            rg,
        )
    }

    /// Mean softmax cross-entropy of n x C logits against class labels.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Var {
        let z = self.value(logits);
        assert_eq!(z.nrows(), labels.len(), "one label per row");
        let probs = softmax_rows(z);
        let n = labels.len() as f64;
        let loss = labels
            .iter()
            .enumerate()
            .map(|(i, &c)| -log_softmax_at(&z.row(i).to_vec(), c))
            .sum::<f64>()
            / n;
        let rg = self.rg(logits);
        self.push(
            Array2::from_elem((1, 1), loss),
            Op::SoftmaxCrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            rg,
        )
    }

    /// Propagates gradients from the scalar `loss` back through the tape.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::BackwardTwice);
        }
        self.backward_done = true;
        assert_eq!(self.value(loss).len(), 1, "loss must be scalar");

        let mut grads: Vec<Option<Array2<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Array2::ones((1, 1)));

        for idx in (0..=loss.0).rev() {
            let Some(upstream) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            if matches!(node.op, Op::Leaf) {
                grads[idx] = Some(upstream);
                continue;
            }
            let mut send = |target: Var, g: Array2<f64>| {
                if !self.nodes[target.0].requires_grad {
                    return;
                }
                match &mut grads[target.0] {
                    Some(acc) => *acc += &g,
                    slot @ None => *slot = Some(g),
                }
            };
            match &node.op {
                Op::Leaf => unreachable!(),
                Op::MatMul(a, b) => {
                    let av = &self.nodes[a.0].value;
                    let bv = &self.nodes[b.0].value;
                    if self.nodes[a.0].requires_grad {
                        send(*a, upstream.dot(&bv.t()));
                    }
                    if self.nodes[b.0].requires_grad {
                        send(*b, av.t().dot(&upstream));
                    }
                }
                Op::AddBias(a, b) => {
                    send(*b, upstream.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    send(*a, upstream);
                }
                Op::Add(a, b) => {
                    send(*b, upstream.clone());
                    send(*a, upstream);
                }
                Op::Sub(a, b) => {
                    send(*b, -&upstream);
                    send(*a, upstream);
                }
                Op::Mul(a, b) => {
                    let av = &self.nodes[a.0].value;
                    let bv = &self.nodes[b.0].value;
                    send(*a, &upstream * bv);
                    send(*b, &upstream * av);
                }
                Op::Scale(a, f) => send(*a, upstream * *f),
                Op::OneMinus(a) => send(*a, -upstream),
                Op::Sigmoid(a) => {
                    let y = &node.value;
                    send(*a, upstream * &y.mapv(|v| v * (1.0 - v)));
                }
                Op::Tanh(a) => {
                    let y = &node.value;
                    send(*a, upstream * &y.mapv(|v| 1.0 - v * v));
                }
                Op::ConcatCols(a, b) => {
                    let split = self.nodes[a.0].value.ncols();
                    send(*a, upstream.slice(s![.., ..split]).to_owned());
                    send(*b, upstream.slice(s![.., split..]).to_owned());
                }
                Op::SliceRows(a, rows) => {
                    let mut g = Array2::zeros(self.nodes[a.0].value.dim());
                    g.slice_mut(s![rows.clone(), ..]).assign(&upstream);
                    send(*a, g);
                }
                Op::Sum(a) => {
                    let g = Array2::from_elem(self.nodes[a.0].value.dim(), upstream[[0, 0]]);
                    send(*a, g);
                }
                Op::PairwiseDistance(a, b) => {
                    let av = &self.nodes[a.0].value;
                    let bv = &self.nodes[b.0].value;
                    let d = &node.value;
                    let mut ga = Array2::zeros(av.dim());
                    let mut gb = Array2::zeros(bv.dim());
                    for i in 0..av.nrows() {
                        for j in 0..bv.nrows() {
                            let w = upstream[[i, j]];
                            let dist = d[[i, j]];
                            if w == 0.0 || dist == 0.0 {
                                continue;
                            }
                            let coef = w / dist;
                            for e in 0..av.ncols() {
                                let diff = (av[[i, e]] - bv[[j, e]]) * coef;
                                ga[[i, e]] += diff;
                                gb[[j, e]] -= diff;
                            }
                        }
                    }
                    send(*a, ga);
                    send(*b, gb);
                }
                Op::WeightedSum(a, w) => send(*a, w * upstream[[0, 0]]),
                Op::SoftmaxCrossEntropy {
                    logits,
                    labels,
                    probs,
                } => {
                    let n = labels.len() as f64;
                    let mut g = probs.clone();
                    for (i, &c) in labels.iter().enumerate() {
                        g[[i, c]] -= 1.0;
                    }
                    send(*logits, g * (upstream[[0, 0]] / n));
                }
            }
        }
        self.grads = grads;
        Ok(())
    }

    /// Gradient of the last backward pass with respect to leaf `v`
    /// (`None` when `v` does not influence the loss or is not a leaf).
    pub fn grad(&self, v: Var) -> Option<&Array2<f64>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Which parameters of `store` were placed on this tape.
    pub fn used_params(&self, store: &ParamStore) -> Vec<bool> {
        store.ids().map(|id| self.params.contains_key(&id)).collect()
    }

    /// Gradients for every parameter in `store`, zero where unused.
    pub fn param_grads(&self, store: &ParamStore) -> Vec<Array2<f64>> {
        store
            .ids()
            .map(|id| match self.params.get(&id).and_then(|&v| self.grad(v)) {
                Some(g) => g.clone(),
                None => Array2::zeros(store.get(id).dim()),
            })
            .collect()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn log_softmax_at(row: &[f64], c: usize) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
    row[c] - lse
}

/// Row-wise softmax.
pub fn softmax_rows(z: &Array2<f64>) -> Array2<f64> {
    let mut out = z.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let total = row.sum();
        row.mapv_inplace(|v| v / total);
    }
    out
}

pub fn pairwise_euclidean(a: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    assert_eq!(a.ncols(), b.ncols(), "pairwise distance: embedding sizes differ");
    Array2::from_shape_fn((a.nrows(), b.nrows()), |(i, j)| {
        a.row(i)
            .iter()
            .zip(b.row(j).iter())
            .map(|(x, y)| (x - y).powi(2))
            .sum::<f64>()
            .sqrt()
    })
}
