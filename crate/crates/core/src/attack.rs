//! Evaluation-time attackers: greedy gradient edge flips and FGSM / PGD
//! feature perturbations.

use alloc::vec;
use alloc::vec::Vec;

use crate::defense::PerturbedAdjacency;
use crate::error::{config, Error, Result};
use crate::graph::{edge_key, normalize, Graph, Normalization};
use crate::matrix::Matrix;
use crate::model::{
    argmax_rows, backward_terms, forward, ForwardTrace, GcnParams, LossKind, LossTerm, LowRank,
    Needs,
};
use crate::sparse::{Adjacency, Propagator};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum EditMode {
    AddOnly,
    DropOnly,
    #[default]
    Both,
}

impl EditMode {
    fn allows_add(self) -> bool {
        !matches!(self, EditMode::DropOnly)
    }

    fn allows_drop(self) -> bool {
        !matches!(self, EditMode::AddOnly)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttackBudget {
    pub max_edge_changes: usize,
    pub targets: Vec<usize>,
    pub mode: EditMode,
}

impl AttackBudget {
    pub fn new(max_edge_changes: usize, targets: Vec<usize>, mode: EditMode) -> Self {
        Self {
            max_edge_changes,
            targets,
            mode,
        }
    }

    fn validate(&self, num_nodes: usize) -> Result<()> {
        if self.max_edge_changes < 1 {
            return Err(config("attack budget must allow at least one edge change"));
        }
        if self.targets.is_empty() {
            return Err(Error::EmptyNodeSet("attack targets"));
        }
        match self.targets.iter().find(|&&t| t >= num_nodes) {
            Some(&node) => Err(Error::NodeOutOfRange { node, num_nodes }),
            None => Ok(()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum EdgeAction {
    Add,
    Drop,
}

/// One applied flip. `u < v`.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EdgeChange {
    pub step: usize,
    pub action: EdgeAction,
    pub u: usize,
    pub v: usize,
    pub loss_after: f64,
}

#[derive(Clone, Debug)]
pub struct AttackOutcome {
    /// The clean graph with every change applied.
    pub graph: Graph,
    /// Normalized adjacency of `graph`.
    pub adjacency: PerturbedAdjacency,
    pub changes: Vec<EdgeChange>,
    /// No legal candidate remained before the budget was spent.
    pub truncated: bool,
    /// Labels the attack worked against: the model's own clean predictions.
    pub target_labels: Vec<usize>,
}

/// Visits every unordered pair `(u, v)`, `u < v`, whose flip has a nonzero
/// first-order effect on the loss, with the derivative of the loss along the
/// symmetric discrete entry `A[u][v] = A[v][u]`, taken through `norm` and the
/// degree changes it implies. `adj` must be `norm` applied to `graph`.
/// Returns the nodes a visited pair may touch; pairs with both ends outside
/// score exactly zero.
pub(crate) fn for_each_flip_score(
    graph: &Graph,
    adj: &crate::sparse::Csr,
    grad: &LowRank,
    norm: Normalization,
    mut visit: impl FnMut(usize, usize, f64, bool),
) -> Vec<bool> {
    let n = graph.num_nodes();
    let deg: Vec<f64> = graph.degrees().iter().map(|&d| (d + 1) as f64).collect();
    let rows = grad.support_rows();
    let mut in_rows = vec![false; n];
    for &u in &rows {
        in_rows[u] = true;
    }
    // Loss change per unit of degree at each node.
    let mut shift = vec![0.0; n];
    for (u, slot) in shift.iter_mut().enumerate() {
        let mut s = 0.0;
        for (j, a) in adj.row(u) {
            match norm {
                Normalization::Symmetric => {
                    s += a * (grad.entry(u, j) + grad.entry(j, u)) / (2.0 * deg[u])
                }
                Normalization::Mean => s += a * grad.entry(u, j) / deg[u],
            }
        }
        *slot = s;
    }
    let touched: Vec<usize> = (0..n).filter(|&u| in_rows[u] || shift[u] != 0.0).collect();
    let mut in_touched = vec![false; n];
    for &u in &touched {
        in_touched[u] = true;
    }
    let neighbors = graph.neighbor_lists();
    let mut is_neighbor = vec![false; n];
    for &u in &touched {
        for &w in &neighbors[u] {
            is_neighbor[w] = true;
        }
        for v in 0..n {
            if v == u || (in_touched[v] && v < u) {
                continue;
            }
            let (guv, gvu) = (
                grad.entry(u, v),
                if in_rows[v] { grad.entry(v, u) } else { 0.0 },
            );
            let direct = match norm {
                Normalization::Symmetric => (guv + gvu) / libm::sqrt(deg[u] * deg[v]),
                Normalization::Mean => guv / deg[u] + gvu / deg[v],
            };
            let (a, b) = edge_key(u, v);
            visit(a, b, direct - shift[u] - shift[v], is_neighbor[v]);
        }
        for &w in &neighbors[u] {
            is_neighbor[w] = false;
        }
    }
    in_touched
}

/// Higher harm wins; equal harm goes to the lexicographically smaller pair.
#[inline]
pub(crate) fn beats(
    harm: f64,
    pair: (usize, usize),
    best: Option<(f64, (usize, usize), EdgeAction)>,
) -> bool {
    match best {
        None => true,
        Some((h, p, _)) => harm > h || (harm == h && pair < p),
    }
}

fn adjacency_gradient<P: Propagator + ?Sized>(
    params: &GcnParams,
    x: &Matrix,
    adj: &P,
    term: LossTerm<'_>,
) -> Result<LowRank> {
    let raw = backward_terms(
        params,
        x,
        adj,
        adj,
        &[term],
        Needs {
            features: false,
            propagators: true,
        },
    )?;
    LowRank::sum(raw.d_outer.as_ref().unwrap(), raw.d_inner.as_ref().unwrap())
}

/// Greedy gradient attack against the symmetric-normalized model.
pub fn greedy_edge_attack(
    g: &Graph,
    params: &GcnParams,
    budget: &AttackBudget,
) -> Result<AttackOutcome> {
    greedy_edge_attack_with(g, params, budget, Normalization::Symmetric)
}

/// Pairs kept in score order so a counterproductive top pick can be
/// replaced.
const FLIP_CANDIDATES: usize = 8;

/// Per-target cross-entropy saturates here: a target whose label
/// probability has fallen to one half counts as broken.
const TARGET_LOSS_CAP: f64 = core::f64::consts::LN_2;

/// Mean over `targets` of the cross-entropy capped at [`TARGET_LOSS_CAP`].
pub fn capped_target_loss(trace: &ForwardTrace, labels: &[usize], targets: &[usize]) -> f64 {
    let total: f64 = targets
        .iter()
        .map(|&t| (-libm::log(trace.probabilities[(t, labels[t])])).min(TARGET_LOSS_CAP))
        .sum();
    total / targets.len() as f64
}

/// Greedy gradient attack for a model whose propagator is `norm` applied to
/// the discrete graph.
///
/// The objective is [`capped_target_loss`] against the model's clean
/// predictions. Each step differentiates it with respect to the discrete
/// graph (through the normalization), ranks legal flips by harmful score,
/// and applies the best-ranked one that does not lower the objective,
/// falling back to the top pick. Once every target is saturated the plain
/// cross-entropy over all targets drives the scores. `loss_after` is the
/// objective after the flip.
pub fn greedy_edge_attack_with(
    g: &Graph,
    params: &GcnParams,
    budget: &AttackBudget,
    norm: Normalization,
) -> Result<AttackOutcome> {
    budget.validate(g.num_nodes())?;
    let x = g.features();
    let clean = norm.apply(g);
    let clean_trace = forward(params, x, &clean)?;
    let target_labels = argmax_rows(&clean_trace.logits);
    let targets = &budget.targets;
    let unsaturated = |trace: &ForwardTrace| -> Vec<usize> {
        let cut = libm::exp(-TARGET_LOSS_CAP);
        targets
            .iter()
            .copied()
            .filter(|&t| trace.probabilities[(t, target_labels[t])] > cut)
            .collect()
    };
    let mut graph = g.clone();
    let mut current = clean.clone();
    let mut changes = Vec::new();
    let mut truncated = false;
    let mut objective = capped_target_loss(&clean_trace, &target_labels, targets);
    let mut active = unsaturated(&clean_trace);

    for step in 0..budget.max_edge_changes {
        let scored = if active.is_empty() { targets } else { &active };
        let term = LossTerm::new(LossKind::CrossEntropy, &target_labels, scored);
        let grad = adjacency_gradient(params, x, &current, term)?;
        let mut ranked: Vec<(f64, (usize, usize), EdgeAction)> =
            Vec::with_capacity(FLIP_CANDIDATES + 1);
        for_each_flip_score(&graph, &current, &grad, norm, |u, v, score, exists| {
            let action = if exists {
                if !budget.mode.allows_drop() || score >= 0.0 {
                    return;
                }
                EdgeAction::Drop
            } else {
                if !budget.mode.allows_add() || score <= 0.0 {
                    return;
                }
                EdgeAction::Add
            };
            let harm = score.abs();
            if ranked.len() == FLIP_CANDIDATES && !beats(harm, (u, v), ranked.last().copied()) {
                return;
            }
            let at = ranked
                .iter()
                .position(|&c| beats(harm, (u, v), Some(c)))
                .unwrap_or(ranked.len());
            ranked.insert(at, (harm, (u, v), action));
            ranked.truncate(FLIP_CANDIDATES);
        });
        if ranked.is_empty() {
            truncated = true;
            break;
        }
        let mut accepted = None;
        for &(_, (u, v), action) in &ranked {
            graph.toggle_edge(u, v)?;
            let adj = norm.apply(&graph);
            let trace = forward(params, x, &adj)?;
            let after = capped_target_loss(&trace, &target_labels, targets);
            if after >= objective {
                accepted = Some(((u, v), action, adj, trace, after));
                break;
            }
            graph.toggle_edge(u, v)?;
        }
        let ((u, v), action, adj, trace, after) = match accepted {
            Some(a) => a,
            None => {
                let (_, (u, v), action) = ranked[0];
                graph.toggle_edge(u, v)?;
                let adj = norm.apply(&graph);
                let trace = forward(params, x, &adj)?;
                let after = capped_target_loss(&trace, &target_labels, targets);
                ((u, v), action, adj, trace, after)
            }
        };
        current = adj;
        objective = after;
        changes.push(EdgeChange {
            step,
            action,
            u,
            v,
            loss_after: after,
        });
        active = unsaturated(&trace);
    }

    let adjacency = PerturbedAdjacency::new(Adjacency::Sparse(current), clean)?;
    Ok(AttackOutcome {
        graph,
        adjacency,
        changes,
        truncated,
        target_labels,
    })
}

/// One flip aimed at a single node.
pub fn single_node_attack(
    g: &Graph,
    params: &GcnParams,
    target: usize,
    mode: EditMode,
) -> Result<AttackOutcome> {
    single_node_attack_with(g, params, target, mode, Normalization::Symmetric)
}

pub fn single_node_attack_with(
    g: &Graph,
    params: &GcnParams,
    target: usize,
    mode: EditMode,
    norm: Normalization,
) -> Result<AttackOutcome> {
    greedy_edge_attack_with(g, params, &AttackBudget::new(1, vec![target], mode), norm)
}

/// Applies a change log to the clean graph, checking each recorded action.
pub fn replay_changes(g: &Graph, changes: &[EdgeChange]) -> Result<Graph> {
    let mut graph = g.clone();
    for c in changes {
        let present = graph.toggle_edge(c.u, c.v)?;
        let expected = matches!(c.action, EdgeAction::Add);
        if present != expected {
            return Err(config("change log does not replay on this graph"));
        }
    }
    Ok(graph)
}

/// Symmetric-normalized adjacency after replaying `changes`.
pub fn replay_normalized(g: &Graph, changes: &[EdgeChange]) -> Result<crate::sparse::Csr> {
    Ok(normalize(&replay_changes(g, changes)?).into_csr())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum NormKind {
    L2,
    #[default]
    Linf,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct FeatureAttackConfig {
    pub radius: f64,
    pub norm: NormKind,
    pub step: f64,
    pub iterations: usize,
}

impl FeatureAttackConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.radius >= 0.0) || !(self.step > 0.0) {
            return Err(config(
                "feature attack radius must be nonnegative and step positive",
            ));
        }
        if self.step > self.radius && self.radius > 0.0 {
            return Err(config("feature attack step must not exceed the radius"));
        }
        if self.iterations < 1 {
            return Err(config("feature attack needs at least one iteration"));
        }
        Ok(())
    }
}

impl Default for FeatureAttackConfig {
    fn default() -> Self {
        Self {
            radius: 0.1,
            norm: NormKind::Linf,
            step: 0.01,
            iterations: 20,
        }
    }
}

#[inline]
fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `step · sign(gradient)`, elementwise.
pub fn fgsm_features(x: &Matrix, gradient: &Matrix, cfg: &FeatureAttackConfig) -> Result<Matrix> {
    gradient.expect_shape("feature gradient", x.rows(), x.cols())?;
    Ok(gradient.map(|g| cfg.step * sign(g)))
}

pub(crate) fn project_onto_ball(delta: &mut Matrix, norm: NormKind, radius: f64) {
    match norm {
        NormKind::Linf => {
            for v in delta.as_mut_slice() {
                *v = v.clamp(-radius, radius);
            }
        }
        NormKind::L2 => {
            let len = delta.frobenius_norm();
            if len > radius {
                delta.scale(if len > 0.0 { radius / len } else { 0.0 });
            }
        }
    }
}

/// Projected gradient ascent on `X + δ` for `kind` over `targets`. Each step
/// moves by `step` along the sign (l∞) or the normalized gradient (l2) and
/// projects back onto the radius ball. Returns the best of the iterates and
/// the single full-radius step.
pub fn pgd_features<P: Propagator + ?Sized>(
    params: &GcnParams,
    x: &Matrix,
    a_hat: &P,
    labels: &[usize],
    targets: &[usize],
    kind: LossKind,
    cfg: &FeatureAttackConfig,
) -> Result<Matrix> {
    cfg.validate()?;
    let mut delta = Matrix::zeros(x.rows(), x.cols());
    if cfg.radius == 0.0 {
        return Ok(delta);
    }
    let term = LossTerm::new(kind, labels, targets);
    let loss_at = |d: &Matrix| -> Result<f64> {
        let t = forward(params, &x.add(d)?, a_hat)?;
        term.value(&t)
    };
    let feature_grad = |d: &Matrix| -> Result<Matrix> {
        let raw = backward_terms(
            params,
            &x.add(d)?,
            a_hat,
            a_hat,
            &[term],
            Needs {
                features: true,
                propagators: false,
            },
        )?;
        Ok(raw.d_x.unwrap())
    };
    // The single full-radius step is the first candidate, so the result is
    // never worse than it.
    let first = feature_grad(&delta)?;
    let mut best = match cfg.norm {
        NormKind::Linf => first.map(|g| cfg.radius * sign(g)),
        NormKind::L2 => {
            let len = first.frobenius_norm();
            let mut d = first.clone();
            d.scale(if len > 0.0 { cfg.radius / len } else { 0.0 });
            d
        }
    };
    let mut best_loss = loss_at(&best)?;
    let mut grad = first;
    for k in 0..cfg.iterations {
        if k > 0 {
            grad = feature_grad(&delta)?;
        }
        match cfg.norm {
            NormKind::Linf => delta.add_scaled(1.0, &grad.map(|g| cfg.step * sign(g))),
            NormKind::L2 => {
                let len = grad.frobenius_norm();
                if len == 0.0 {
                    break;
                }
                delta.add_scaled(cfg.step / len, &grad);
            }
        }
        project_onto_ball(&mut delta, cfg.norm, cfg.radius);
        let loss = loss_at(&delta)?;
        if loss > best_loss {
            best_loss = loss;
            best = delta.clone();
        }
    }
    Ok(best)
}
