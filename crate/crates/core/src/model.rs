//! Two-layer graph convolution `softmax(Â σ(Â X W1) W2)` with hand-derived
//! reverse-mode gradients.
//!
//! The forward pass is written against two propagators, an inner one applied
//! to the projected features and an outer one applied to the hidden layer.
//! The full-batch model passes the same `Â` twice; the sampled aggregator in
//! [`crate::sage`] passes its two neighbor blocks.
//!
//! Gradients with respect to a propagator are returned in factored form
//! `left · rightᵀ`, with rank `num_classes` (outer) or `hidden_dim` (inner).
//! Callers materialize the dense `n × n` matrix only when they need it.

use alloc::vec::Vec;

use rand::Rng;

use crate::error::{config, Error, Result};
use crate::graph::{normalize, DataSplit, Graph};
use crate::matrix::{dot, Matrix};
use crate::rng::stream_rng;
use crate::sparse::Propagator;

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GcnParams {
    pub w1: Matrix,
    pub w2: Matrix,
}

impl GcnParams {
    pub fn new(w1: Matrix, w2: Matrix) -> Result<Self> {
        if w1.cols() != w2.rows() {
            return Err(Error::Dimension {
                context: "second-layer weights",
                expected: (w1.cols(), w2.cols()),
                found: w2.shape(),
            });
        }
        Ok(Self { w1, w2 })
    }

    /// Glorot-uniform initialization: entries in `[-s, s]` with
    /// `s = sqrt(6 / (fan_in + fan_out))`.
    pub fn glorot(num_features: usize, hidden_dim: usize, num_classes: usize, seed: u64) -> Self {
        let mut rng = stream_rng(seed, 0x1417);
        let mut layer = |fan_in: usize, fan_out: usize| {
            let s = libm::sqrt(6.0 / (fan_in + fan_out) as f64);
            Matrix::from_fn(fan_in, fan_out, |_, _| rng.random_range(-s..=s))
        };
        let w1 = layer(num_features, hidden_dim);
        let w2 = layer(hidden_dim, num_classes);
        Self { w1, w2 }
    }

    pub fn num_features(&self) -> usize {
        self.w1.rows()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w1.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.w2.cols()
    }
}

/// Every intermediate of a forward pass.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    /// `X W1`
    pub projected: Matrix,
    /// `inner · X W1`
    pub pre_activation: Matrix,
    /// `max(pre_activation, 0)`
    pub hidden: Matrix,
    /// `hidden · W2`
    pub hidden_projected: Matrix,
    /// `outer · hidden · W2`, pre-softmax
    pub logits: Matrix,
    pub probabilities: Matrix,
}

pub fn forward<P: Propagator + ?Sized>(
    params: &GcnParams,
    x: &Matrix,
    a_hat: &P,
) -> Result<ForwardTrace> {
    forward_two(params, x, a_hat, a_hat)
}

/// Forward pass with distinct inner and outer propagators.
pub fn forward_two<I, O>(
    params: &GcnParams,
    x: &Matrix,
    inner: &I,
    outer: &O,
) -> Result<ForwardTrace>
where
    I: Propagator + ?Sized,
    O: Propagator + ?Sized,
{
    if x.cols() != params.num_features() {
        return Err(Error::Dimension {
            context: "feature matrix",
            expected: (x.rows(), params.num_features()),
            found: x.shape(),
        });
    }
    let (mid, inner_cols) = inner.shape();
    if inner_cols != x.rows() {
        return Err(Error::Dimension {
            context: "inner propagator",
            expected: (mid, x.rows()),
            found: inner.shape(),
        });
    }
    let (out_rows, outer_cols) = outer.shape();
    if outer_cols != mid {
        return Err(Error::Dimension {
            context: "outer propagator",
            expected: (out_rows, mid),
            found: outer.shape(),
        });
    }
    let projected = x.matmul(&params.w1)?;
    let pre_activation = inner.apply(&projected)?;
    let hidden = pre_activation.map(|v| v.max(0.0));
    let hidden_projected = hidden.matmul(&params.w2)?;
    let logits = outer.apply(&hidden_projected)?;
    let probabilities = softmax_rows(&logits);
    Ok(ForwardTrace {
        projected,
        pre_activation,
        hidden,
        hidden_projected,
        logits,
        probabilities,
    })
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(logits: &Matrix) -> Matrix {
    let mut out = logits.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = libm::exp(*v - max);
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    out
}

/// Index of the largest entry; ties go to the smallest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = j;
        }
    }
    best
}

/// Index of the largest entry other than `skip`, smallest index on ties.
fn argmax_excluding(row: &[f64], skip: usize) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (j, &v) in row.iter().enumerate() {
        if j == skip {
            continue;
        }
        match best {
            Some(b) if row[b] >= v => {}
            _ => best = Some(j),
        }
    }
    best
}

pub fn argmax_rows(m: &Matrix) -> Vec<usize> {
    (0..m.rows()).map(|i| argmax(m.row(i))).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum LossKind {
    /// Mean over nodes of `-ln p(true class)`.
    #[default]
    CrossEntropy,
    /// Sum over nodes of `max_j z_j - z_y`; zero exactly when correct.
    Margin,
    /// Sum over nodes of `max_{j≠y} z_j - z_y`. Agrees with [`LossKind::Margin`]
    /// wherever that is positive, and stays informative (negative) when a node
    /// is classified correctly.
    SignedMargin,
}

/// One weighted loss term over a node set.
#[derive(Clone, Copy, Debug)]
pub struct LossTerm<'a> {
    pub kind: LossKind,
    /// Indexed by node id (logit row).
    pub labels: &'a [usize],
    pub nodes: &'a [usize],
    pub weight: f64,
}

impl<'a> LossTerm<'a> {
    pub fn new(kind: LossKind, labels: &'a [usize], nodes: &'a [usize]) -> Self {
        Self {
            kind,
            labels,
            nodes,
            weight: 1.0,
        }
    }

    pub fn weighted(mut self, weight: f64) -> Self {
        self.weight = weight;
        self
    }

    fn check(&self, logits: &Matrix) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(Error::EmptyNodeSet("loss"));
        }
        for &i in self.nodes {
            if i >= logits.rows() || i >= self.labels.len() {
                return Err(Error::NodeOutOfRange {
                    node: i,
                    num_nodes: logits.rows().min(self.labels.len()),
                });
            }
            if self.labels[i] >= logits.cols() {
                return Err(config("label exceeds the number of classes"));
            }
        }
        Ok(())
    }

    /// Unweighted loss value.
    pub fn value(&self, trace: &ForwardTrace) -> Result<f64> {
        self.check(&trace.logits)?;
        let logits = &trace.logits;
        let total: f64 = match self.kind {
            LossKind::CrossEntropy => {
                let sum: f64 = self
                    .nodes
                    .iter()
                    .map(|&i| {
                        let row = logits.row(i);
                        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                        let lse =
                            libm::log(row.iter().map(|&z| libm::exp(z - max)).sum::<f64>()) + max;
                        lse - row[self.labels[i]]
                    })
                    .sum();
                sum / self.nodes.len() as f64
            }
            LossKind::Margin => self
                .nodes
                .iter()
                .map(|&i| {
                    let row = logits.row(i);
                    row[argmax(row)] - row[self.labels[i]]
                })
                .sum(),
            LossKind::SignedMargin => self
                .nodes
                .iter()
                .map(|&i| {
                    let row = logits.row(i);
                    let y = self.labels[i];
                    argmax_excluding(row, y).map_or(0.0, |j| row[j] - row[y])
                })
                .sum(),
        };
        Ok(total)
    }

    /// Adds `weight · ∂loss/∂logits` into `out`.
    fn accumulate_logit_grad(&self, trace: &ForwardTrace, out: &mut Matrix) {
        let w = self.weight;
        match self.kind {
            LossKind::CrossEntropy => {
                let scale = w / self.nodes.len() as f64;
                for &i in self.nodes {
                    let p = trace.probabilities.row(i);
                    let y = self.labels[i];
                    let row = out.row_mut(i);
                    for (j, g) in row.iter_mut().enumerate() {
                        *g += scale * (p[j] - if j == y { 1.0 } else { 0.0 });
                    }
                }
            }
            LossKind::Margin => {
                for &i in self.nodes {
                    let top = argmax(trace.logits.row(i));
                    let y = self.labels[i];
                    if top != y {
                        out[(i, top)] += w;
                        out[(i, y)] -= w;
                    }
                }
            }
            LossKind::SignedMargin => {
                for &i in self.nodes {
                    let y = self.labels[i];
                    if let Some(j) = argmax_excluding(trace.logits.row(i), y) {
                        out[(i, j)] += w;
                        out[(i, y)] -= w;
                    }
                }
            }
        }
    }
}

pub fn margin_loss(trace: &ForwardTrace, labels: &[usize], nodes: &[usize]) -> Result<f64> {
    LossTerm::new(LossKind::Margin, labels, nodes).value(trace)
}

pub fn cross_entropy_loss(trace: &ForwardTrace, labels: &[usize], nodes: &[usize]) -> Result<f64> {
    LossTerm::new(LossKind::CrossEntropy, labels, nodes).value(trace)
}

/// Margin loss over `labeled` with true labels plus `alpha` times margin loss
/// over `pseudo` with pseudo labels. An empty pseudo set contributes zero.
pub fn combined_loss(
    trace: &ForwardTrace,
    labels: &[usize],
    pseudo_labels: &[usize],
    labeled: &[usize],
    pseudo: &[usize],
    alpha: f64,
) -> Result<f64> {
    ensure_disjoint(labeled, pseudo)?;
    let base = margin_loss(trace, labels, labeled)?;
    if pseudo.is_empty() {
        return Ok(base);
    }
    Ok(base + alpha * margin_loss(trace, pseudo_labels, pseudo)?)
}

pub(crate) fn ensure_disjoint(a: &[usize], b: &[usize]) -> Result<()> {
    let mut sorted = a.to_vec();
    sorted.sort_unstable();
    match b.iter().find(|v| sorted.binary_search(v).is_ok()) {
        Some(&v) => Err(Error::OverlappingSets(v)),
        None => Ok(()),
    }
}

/// Matrix stored as `left · rightᵀ`.
#[derive(Clone, Debug, PartialEq)]
pub struct LowRank {
    left: Matrix,
    right: Matrix,
}

impl LowRank {
    pub fn new(left: Matrix, right: Matrix) -> Result<Self> {
        if left.cols() != right.cols() {
            return Err(Error::Dimension {
                context: "low-rank factors",
                expected: (right.rows(), left.cols()),
                found: right.shape(),
            });
        }
        Ok(Self { left, right })
    }

    /// Sum of two factored matrices of the same shape.
    pub fn sum(a: &LowRank, b: &LowRank) -> Result<Self> {
        if a.shape() != b.shape() {
            return Err(Error::Dimension {
                context: "low-rank sum",
                expected: a.shape(),
                found: b.shape(),
            });
        }
        let concat = |x: &Matrix, y: &Matrix| {
            Matrix::from_fn(x.rows(), x.cols() + y.cols(), |i, j| {
                if j < x.cols() {
                    x[(i, j)]
                } else {
                    y[(i, j - x.cols())]
                }
            })
        };
        Ok(Self {
            left: concat(&a.left, &b.left),
            right: concat(&a.right, &b.right),
        })
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.left.rows(), self.right.rows())
    }

    pub fn left(&self) -> &Matrix {
        &self.left
    }

    pub fn right(&self) -> &Matrix {
        &self.right
    }

    #[inline]
    pub fn entry(&self, i: usize, j: usize) -> f64 {
        dot(self.left.row(i), self.right.row(j))
    }

    pub fn to_dense(&self) -> Matrix {
        self.left
            .matmul_t(&self.right)
            .expect("factor shapes checked at construction")
    }

    /// Rows whose left factor is nonzero; every other row of the product is 0.
    pub fn support_rows(&self) -> Vec<usize> {
        (0..self.left.rows())
            .filter(|&i| self.left.row(i).iter().any(|&v| v != 0.0))
            .collect()
    }
}

/// Gradients of a scalar loss with respect to every input of the model.
#[derive(Clone, Debug)]
pub struct GradientBundle {
    pub loss: f64,
    pub d_w1: Matrix,
    pub d_w2: Matrix,
    pub d_features: Matrix,
    /// Accounts for both occurrences of `Â` in the forward pass.
    pub d_adjacency: LowRank,
}

#[derive(Clone, Copy, Debug, Default)]
pub(crate) struct Needs {
    pub features: bool,
    pub propagators: bool,
}

#[derive(Clone, Debug)]
pub(crate) struct RawGrads {
    pub loss: f64,
    pub d_w1: Matrix,
    pub d_w2: Matrix,
    pub d_x: Option<Matrix>,
    pub d_outer: Option<LowRank>,
    pub d_inner: Option<LowRank>,
}

/// Exact gradients of one loss with respect to `W1`, `W2`, `X` and `Â`.
/// Margin-loss ties use the smallest-index maximizer.
pub fn backward<P: Propagator + ?Sized>(
    params: &GcnParams,
    x: &Matrix,
    a_hat: &P,
    loss_kind: LossKind,
    labels: &[usize],
    nodes: &[usize],
) -> Result<GradientBundle> {
    let term = LossTerm::new(loss_kind, labels, nodes);
    let raw = backward_terms(
        params,
        x,
        a_hat,
        a_hat,
        &[term],
        Needs {
            features: true,
            propagators: true,
        },
    )?;
    let d_adjacency = LowRank::sum(raw.d_outer.as_ref().unwrap(), raw.d_inner.as_ref().unwrap())?;
    Ok(GradientBundle {
        loss: raw.loss,
        d_w1: raw.d_w1,
        d_w2: raw.d_w2,
        d_features: raw.d_x.unwrap(),
        d_adjacency,
    })
}

/// Reverse pass for a weighted sum of loss terms evaluated on one input.
pub(crate) fn backward_terms<I, O>(
    params: &GcnParams,
    x: &Matrix,
    inner: &I,
    outer: &O,
    terms: &[LossTerm<'_>],
    needs: Needs,
) -> Result<RawGrads>
where
    I: Propagator + ?Sized,
    O: Propagator + ?Sized,
{
    let trace = forward_two(params, x, inner, outer)?;
    backward_from_trace(params, x, inner, outer, &trace, terms, needs)
}

pub(crate) fn backward_from_trace<I, O>(
    params: &GcnParams,
    x: &Matrix,
    inner: &I,
    outer: &O,
    trace: &ForwardTrace,
    terms: &[LossTerm<'_>],
    needs: Needs,
) -> Result<RawGrads>
where
    I: Propagator + ?Sized,
    O: Propagator + ?Sized,
{
    let mut loss = 0.0;
    let mut d_logits = Matrix::zeros(trace.logits.rows(), trace.logits.cols());
    for term in terms {
        loss += term.weight * term.value(trace)?;
        term.accumulate_logit_grad(trace, &mut d_logits);
    }
    let d_q = outer.apply_transposed(&d_logits)?;
    let d_w2 = trace.hidden.t_matmul(&d_q)?;
    let mut d_pre = d_q.matmul_t(&params.w2)?;
    for (g, &p) in d_pre
        .as_mut_slice()
        .iter_mut()
        .zip(trace.pre_activation.as_slice())
    {
        if p <= 0.0 {
            *g = 0.0;
        }
    }
    let d_projected = inner.apply_transposed(&d_pre)?;
    let d_w1 = x.t_matmul(&d_projected)?;
    let d_x = if needs.features {
        Some(d_projected.matmul_t(&params.w1)?)
    } else {
        None
    };
    let (d_outer, d_inner) = if needs.propagators {
        (
            Some(LowRank::new(d_logits, trace.hidden_projected.clone())?),
            Some(LowRank::new(d_pre, trace.projected.clone())?),
        )
    } else {
        (None, None)
    };
    Ok(RawGrads {
        loss,
        d_w1,
        d_w2,
        d_x,
        d_outer,
        d_inner,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum OptimizerKind {
    GradientDescent,
    #[default]
    Adam,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub weight_decay: f64,
    pub hidden_dim: usize,
    pub seed: u64,
    pub optimizer: OptimizerKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            epochs: 200,
            weight_decay: 5e-4,
            hidden_dim: 16,
            seed: 0,
            optimizer: OptimizerKind::Adam,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(config("learning rate must be positive"));
        }
        if self.epochs < 1 {
            return Err(config("epochs must be at least 1"));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(config("weight decay must be nonnegative"));
        }
        if self.hidden_dim < 1 {
            return Err(config("hidden dimension must be at least 1"));
        }
        Ok(())
    }
}

struct AdamState {
    step: i32,
    m1: Matrix,
    v1: Matrix,
    m2: Matrix,
    v2: Matrix,
}

/// Runs `epochs` updates of `cfg.optimizer` on `params`. `objective` returns
/// the data loss and its gradients; L2 weight decay on both weight matrices is
/// added here. Returns the per-epoch data loss.
pub fn optimize(
    params: &mut GcnParams,
    cfg: &TrainConfig,
    epochs: usize,
    mut objective: impl FnMut(&GcnParams) -> Result<(f64, Matrix, Matrix)>,
) -> Result<Vec<f64>> {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;
    let mut history = Vec::with_capacity(epochs);
    let mut adam = AdamState {
        step: 0,
        m1: Matrix::zeros(params.w1.rows(), params.w1.cols()),
        v1: Matrix::zeros(params.w1.rows(), params.w1.cols()),
        m2: Matrix::zeros(params.w2.rows(), params.w2.cols()),
        v2: Matrix::zeros(params.w2.rows(), params.w2.cols()),
    };
    for _ in 0..epochs {
        let (loss, mut g1, mut g2) = objective(params)?;
        history.push(loss);
        g1.add_scaled(cfg.weight_decay, &params.w1);
        g2.add_scaled(cfg.weight_decay, &params.w2);
        match cfg.optimizer {
            OptimizerKind::GradientDescent => {
                params.w1.add_scaled(-cfg.learning_rate, &g1);
                params.w2.add_scaled(-cfg.learning_rate, &g2);
            }
            OptimizerKind::Adam => {
                adam.step += 1;
                let c1 = 1.0 - libm::pow(BETA1, adam.step as f64);
                let c2 = 1.0 - libm::pow(BETA2, adam.step as f64);
                let lr = cfg.learning_rate;
                let update = |w: &mut Matrix, m: &mut Matrix, v: &mut Matrix, g: &Matrix| {
                    let (w, m, v) = (w.as_mut_slice(), m.as_mut_slice(), v.as_mut_slice());
                    for (k, &gk) in g.as_slice().iter().enumerate() {
                        m[k] = BETA1 * m[k] + (1.0 - BETA1) * gk;
                        v[k] = BETA2 * v[k] + (1.0 - BETA2) * gk * gk;
                        w[k] -= lr * (m[k] / c1) / (libm::sqrt(v[k] / c2) + EPS);
                    }
                };
                update(&mut params.w1, &mut adam.m1, &mut adam.v1, &g1);
                update(&mut params.w2, &mut adam.m2, &mut adam.v2, &g2);
            }
        }
    }
    Ok(history)
}

/// Continues training `params` on a fixed input for `epochs` epochs.
pub fn retrain<P: Propagator + ?Sized>(
    params: &mut GcnParams,
    x: &Matrix,
    a_hat: &P,
    terms: &[LossTerm<'_>],
    cfg: &TrainConfig,
    epochs: usize,
) -> Result<Vec<f64>> {
    optimize(params, cfg, epochs, |p| {
        let g = backward_terms(p, x, a_hat, a_hat, terms, Needs::default())?;
        Ok((g.loss, g.d_w1, g.d_w2))
    })
}

/// Full-batch fit on cross-entropy over the train set.
pub fn train(g: &Graph, split: &DataSplit, cfg: &TrainConfig) -> Result<GcnParams> {
    cfg.validate()?;
    let a_hat = normalize(g);
    let mut params = GcnParams::glorot(g.num_features(), cfg.hidden_dim, g.num_classes(), cfg.seed);
    let term = LossTerm::new(LossKind::CrossEntropy, g.labels(), &split.train);
    retrain(
        &mut params,
        g.features(),
        a_hat.csr(),
        &[term],
        cfg,
        cfg.epochs,
    )?;
    Ok(params)
}

/// Per-node argmax of the model output.
pub fn predict<P: Propagator + ?Sized>(
    params: &GcnParams,
    g: &Graph,
    a_hat: &P,
) -> Result<Vec<usize>> {
    predict_features(params, g.features(), a_hat)
}

pub fn predict_features<P: Propagator + ?Sized>(
    params: &GcnParams,
    x: &Matrix,
    a_hat: &P,
) -> Result<Vec<usize>> {
    Ok(argmax_rows(&forward(params, x, a_hat)?.logits))
}

/// Copy of `labels` with every node outside `keep` replaced by `predicted`.
pub fn merge_labels(labels: &[usize], predicted: &[usize], keep: &[usize]) -> Vec<usize> {
    let mut out = predicted.to_vec();
    for &i in keep {
        out[i] = labels[i];
    }
    out
}
