//! Adversarial training: continuous and discrete adjacency generators, the
//! feature generator, the round-based training loop, the drop-edges
//! baseline and the linear-surrogate feature equivalent of an adjacency
//! perturbation.

use alloc::collections::BTreeSet;
use alloc::vec::Vec;

use rand::seq::index::sample;

use crate::attack::{
    beats, for_each_flip_score, pgd_features, EdgeAction, EdgeChange, FeatureAttackConfig,
};
use crate::error::{config, Error, Result};
use crate::graph::{floor_count, normalize, DataSplit, Graph, Normalization};
use crate::linalg::{factor_well_conditioned, solve_refined};
use crate::matrix::Matrix;
use crate::model::{
    backward_terms, ensure_disjoint, forward, merge_labels, optimize, predict_features, train,
    GcnParams, LossKind, LossTerm, LowRank, Needs, TrainConfig,
};
use crate::rng::{mix_seed, stream_rng};
use crate::sparse::{Adjacency, Csr, Propagator};

/// A modified propagator together with the clean matrix it came from.
#[derive(Clone, Debug)]
pub struct PerturbedAdjacency {
    values: Adjacency,
    origin: Csr,
    frobenius_distance: f64,
}

impl PerturbedAdjacency {
    pub fn new(values: Adjacency, origin: Csr) -> Result<Self> {
        let n = origin.rows();
        let shape = match &values {
            Adjacency::Sparse(c) => (c.rows(), c.cols()),
            Adjacency::Dense(m) => m.shape(),
        };
        if shape != (n, n) || origin.cols() != n {
            return Err(Error::Dimension {
                context: "perturbed adjacency",
                expected: (n, n),
                found: shape,
            });
        }
        let frobenius_distance = distance(&values, &origin);
        Ok(Self {
            values,
            origin,
            frobenius_distance,
        })
    }

    pub fn values(&self) -> &Adjacency {
        &self.values
    }

    pub fn origin(&self) -> &Csr {
        &self.origin
    }

    pub fn frobenius_distance(&self) -> f64 {
        self.frobenius_distance
    }

    pub fn into_values(self) -> Adjacency {
        self.values
    }
}

fn distance(values: &Adjacency, origin: &Csr) -> f64 {
    let mut sum = 0.0;
    match values {
        Adjacency::Dense(m) => {
            for i in 0..m.rows() {
                let mut row = m.row(i).to_vec();
                for (j, v) in origin.row(i) {
                    row[j] -= v;
                }
                sum += row.iter().map(|d| d * d).sum::<f64>();
            }
        }
        Adjacency::Sparse(c) => {
            for i in 0..c.rows() {
                let mut a = c.row(i).peekable();
                let mut b = origin.row(i).peekable();
                loop {
                    let d = match (a.peek().copied(), b.peek().copied()) {
                        (None, None) => break,
                        (Some((j, x)), Some((k, y))) if j == k => {
                            a.next();
                            b.next();
                            x - y
                        }
                        (Some((j, x)), Some((k, _))) if j < k => {
                            a.next();
                            x
                        }
                        (Some((j, x)), None) => {
                            let _ = j;
                            a.next();
                            x
                        }
                        (_, Some((_, y))) => {
                            b.next();
                            -y
                        }
                    };
                    sum += d * d;
                }
            }
        }
    }
    libm::sqrt(sum)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Generator {
    /// Projected gradient ascent on the normalized adjacency, then mixed
    /// with its transpose.
    Continuous,
    /// Greedy single-pair flips on the discrete graph.
    Discrete,
    /// Projected gradient ascent on the features.
    Features,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct DefenseConfig {
    /// Weight of the pseudo-labeled terms.
    pub alpha: f64,
    /// Mix between `A′` and `A′ᵀ`.
    pub beta: f64,
    /// Frobenius radius around the clean adjacency.
    pub epsilon: f64,
    pub inner_steps: usize,
    pub inner_step_size: f64,
    pub rounds: usize,
    pub adv_group_size: usize,
    pub clean_group_size: usize,
    pub retrain_epochs: usize,
    pub seed: u64,
    /// Objective the generators ascend.
    pub adversary_loss: LossKind,
    /// Objective minimized while retraining.
    pub retrain_loss: LossKind,
    /// Pair flips per round for the discrete generator.
    pub discrete_flips: usize,
    pub feature_attack: FeatureAttackConfig,
    /// Recompute pseudo labels from the current model every round.
    pub refresh_pseudo_labels: bool,
    /// Clean fine-tune on the labeled set after the last round.
    pub final_finetune: bool,
    /// Edge fraction removed by the drop-edges baseline.
    pub drop_fraction: f64,
}

impl Default for DefenseConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 0.5,
            epsilon: 1.0,
            inner_steps: 20,
            inner_step_size: 0.1,
            rounds: 100,
            adv_group_size: 100,
            clean_group_size: 200,
            retrain_epochs: 2,
            seed: 0,
            adversary_loss: LossKind::SignedMargin,
            retrain_loss: LossKind::CrossEntropy,
            discrete_flips: 100,
            feature_attack: FeatureAttackConfig::default(),
            refresh_pseudo_labels: false,
            final_finetune: true,
            drop_fraction: 0.1,
        }
    }
}

impl DefenseConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(config("alpha must be a nonnegative number"));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(config("beta must lie in [0, 1]"));
        }
        if !(self.epsilon > 0.0) || !(self.inner_step_size > 0.0) {
            return Err(config("epsilon and inner step size must be positive"));
        }
        if self.adv_group_size < 1 {
            return Err(config("adversarial group must contain at least one node"));
        }
        if !(self.drop_fraction > 0.0 && self.drop_fraction < 1.0) {
            return Err(config("drop fraction must lie in (0, 1)"));
        }
        self.feature_attack.validate()
    }
}

/// Adversarial and clean node groups of one round, each sorted.
#[derive(Clone, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct NodeGroups {
    pub adversarial: Vec<usize>,
    pub clean: Vec<usize>,
}

/// Draws disjoint groups uniformly from the nodes outside the train set.
pub fn sample_groups(
    split: &DataSplit,
    adv: usize,
    clean: usize,
    seed: u64,
    round: usize,
) -> Result<NodeGroups> {
    let pool = split.unlabeled();
    if adv + clean > pool.len() {
        return Err(config("node groups exceed the number of unlabeled nodes"));
    }
    let mut rng = stream_rng(mix_seed(seed, round as u64), 0x960);
    let picked = sample(&mut rng, pool.len(), adv + clean).into_vec();
    let mut adversarial: Vec<usize> = picked[..adv].iter().map(|&i| pool[i]).collect();
    let mut clean_nodes: Vec<usize> = picked[adv..].iter().map(|&i| pool[i]).collect();
    adversarial.sort_unstable();
    clean_nodes.sort_unstable();
    Ok(NodeGroups {
        adversarial,
        clean: clean_nodes,
    })
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

/// Inner maximization over `A′` in the Frobenius ball of radius `epsilon`
/// around `a_hat`. Steps have length `inner_step_size` along the normalized
/// gradient of `adversary_loss`. Returns the best iterate, ranked by margin
/// loss and then by the ascent objective, so the margin loss never drops
/// below its value at `a_hat`.
pub fn maximize_adjacency(
    params: &GcnParams,
    x: &Matrix,
    a_hat: &Csr,
    pseudo_labels: &[usize],
    targets: &[usize],
    cfg: &DefenseConfig,
) -> Result<Matrix> {
    if targets.is_empty() {
        return Err(Error::EmptyNodeSet("adversarial targets"));
    }
    let origin = a_hat.to_dense();
    let objective = LossTerm::new(cfg.adversary_loss, pseudo_labels, targets);
    let margin = LossTerm::new(LossKind::Margin, pseudo_labels, targets);
    let score = |a: &Matrix| -> Result<(f64, f64)> {
        let t = forward(params, x, a)?;
        Ok((margin.value(&t)?, objective.value(&t)?))
    };
    let mut current = origin.clone();
    let mut best = current.clone();
    let mut best_score = score(&current)?;
    for _ in 0..cfg.inner_steps {
        let grad = adjacency_gradient(params, x, &current, objective)?.to_dense();
        let len = grad.frobenius_norm();
        if len == 0.0 {
            break;
        }
        current.add_scaled(cfg.inner_step_size / len, &grad);
        let mut delta = current.sub(&origin)?;
        let dist = delta.frobenius_norm();
        if dist > cfg.epsilon {
            delta.scale(cfg.epsilon / dist);
            current = origin.add(&delta)?;
        }
        let s = score(&current)?;
        if s.0 > best_score.0 || (s.0 == best_score.0 && s.1 > best_score.1) {
            best_score = s;
            best = current.clone();
        }
    }
    Ok(best)
}

/// `β·A + (1 − β)·Aᵀ`.
pub fn symmetrize(a: &Matrix, beta: f64) -> Result<Matrix> {
    let n = a.rows();
    a.expect_shape("symmetrize", n, n)?;
    Ok(Matrix::from_fn(n, n, |i, j| {
        beta * a[(i, j)] + (1.0 - beta) * a[(j, i)]
    }))
}

/// Continuous adversarial adjacency: inner maximization followed by the
/// transpose mix.
pub fn generate_adv_continuous(
    g: &Graph,
    a_hat: &Csr,
    params: &GcnParams,
    pseudo_labels: &[usize],
    targets: &[usize],
    cfg: &DefenseConfig,
) -> Result<PerturbedAdjacency> {
    let raw = maximize_adjacency(params, g.features(), a_hat, pseudo_labels, targets, cfg)?;
    let mixed = symmetrize(&raw, cfg.beta)?;
    PerturbedAdjacency::new(Adjacency::Dense(mixed), a_hat.clone())
}

#[derive(Clone, Debug)]
pub struct DiscreteStep {
    /// The input graph with the flip applied, or unchanged when no
    /// candidate existed.
    pub graph: Graph,
    pub adjacency: Csr,
    /// `None` when no legal pair was available.
    pub change: Option<EdgeChange>,
}

/// One flip: the non-edge with the largest gradient and the edge with the
/// smallest gradient compete, and whichever has the larger magnitude is
/// applied. Gradients are of cross-entropy over `targets` with pseudo
/// labels, with respect to the discrete adjacency of `g` taken through the
/// symmetric normalization.
pub fn generate_adv_discrete(
    g: &Graph,
    params: &GcnParams,
    pseudo_labels: &[usize],
    targets: &[usize],
) -> Result<DiscreteStep> {
    if targets.is_empty() {
        return Err(Error::EmptyNodeSet("adversarial targets"));
    }
    let x = g.features();
    let a_hat = normalize(g).into_csr();
    let term = LossTerm::new(LossKind::CrossEntropy, pseudo_labels, targets);
    let grad = adjacency_gradient(params, x, &a_hat, term)?;
    let mut best_add: Option<(f64, (usize, usize), EdgeAction)> = None;
    let mut best_drop: Option<(f64, (usize, usize), EdgeAction)> = None;
    let touched = for_each_flip_score(
        g,
        &a_hat,
        &grad,
        Normalization::Symmetric,
        |u, v, score, exists| {
            if exists {
                if beats(-score, (u, v), best_drop) {
                    best_drop = Some((-score, (u, v), EdgeAction::Drop));
                }
            } else if beats(score, (u, v), best_add) {
                best_add = Some((score, (u, v), EdgeAction::Add));
            }
        },
    );
    // Pairs with both ends untouched score zero and are still legal.
    let n = g.num_nodes();
    let mut quiet = (0..n)
        .filter(|&u| !touched[u])
        .flat_map(|u| (u + 1..n).filter(|&v| !touched[v]).map(move |v| (u, v)));
    if let Some(p) = quiet.clone().find(|&(u, v)| !g.has_edge(u, v)) {
        if beats(0.0, p, best_add) {
            best_add = Some((0.0, p, EdgeAction::Add));
        }
    }
    if let Some(p) = quiet.find(|&(u, v)| g.has_edge(u, v)) {
        if beats(0.0, p, best_drop) {
            best_drop = Some((0.0, p, EdgeAction::Drop));
        }
    }
    let pick = match (best_add, best_drop) {
        (None, None) => None,
        (Some(a), None) => Some(a),
        (None, Some(d)) => Some(d),
        (Some(a), Some(d)) => Some(if a.0.abs() > d.0.abs() { a } else { d }),
    };
    let Some((_, (u, v), action)) = pick else {
        return Ok(DiscreteStep {
            graph: g.clone(),
            adjacency: a_hat,
            change: None,
        });
    };
    let mut graph = g.clone();
    graph.toggle_edge(u, v)?;
    let adjacency = normalize(&graph).into_csr();
    let loss_after = term.value(&forward(params, x, &adjacency)?)?;
    Ok(DiscreteStep {
        graph,
        adjacency,
        change: Some(EdgeChange {
            step: 0,
            action,
            u,
            v,
            loss_after,
        }),
    })
}

/// Feature perturbation by projected gradient ascent on `adversary_loss`.
pub fn generate_adv_features<P: Propagator + ?Sized>(
    g: &Graph,
    a_hat: &P,
    params: &GcnParams,
    pseudo_labels: &[usize],
    targets: &[usize],
    kind: LossKind,
    cfg: &FeatureAttackConfig,
) -> Result<Matrix> {
    if targets.is_empty() {
        return Err(Error::EmptyNodeSet("adversarial targets"));
    }
    pgd_features(
        params,
        g.features(),
        a_hat,
        pseudo_labels,
        targets,
        kind,
        cfg,
    )
}

/// Removes `floor(fraction · |E|)` edges chosen uniformly under `seed`.
pub fn drop_edges_baseline(g: &Graph, drop_fraction: f64, seed: u64) -> Result<Graph> {
    if !(drop_fraction > 0.0 && drop_fraction < 1.0) {
        return Err(config("drop fraction must lie in (0, 1)"));
    }
    let edges: Vec<(usize, usize)> = g.edges().collect();
    let count = floor_count(edges.len(), drop_fraction);
    let mut rng = stream_rng(seed, 0xd809);
    let removed: BTreeSet<usize> = sample(&mut rng, edges.len(), count).into_iter().collect();
    let kept = edges
        .iter()
        .enumerate()
        .filter(|(i, _)| !removed.contains(i))
        .map(|(_, &e)| e)
        .collect();
    g.with_edges(kept)
}

/// Trains a fresh model on the graph with a random edge fraction removed.
pub fn train_drop_edges(
    g: &Graph,
    split: &DataSplit,
    train_cfg: &TrainConfig,
    drop_fraction: f64,
    seed: u64,
) -> Result<GcnParams> {
    train(
        &drop_edges_baseline(g, drop_fraction, seed)?,
        split,
        train_cfg,
    )
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RoundRecord {
    pub round: usize,
    pub groups: NodeGroups,
    /// Frobenius distance for adjacency generators (flip count for the
    /// discrete one) or the Frobenius norm of the feature perturbation.
    pub perturbation: f64,
    /// Margin loss of the adversarial group, before and after perturbing.
    pub adversary_loss_clean: f64,
    pub adversary_loss_perturbed: f64,
    /// Data loss per retraining epoch.
    pub retrain_losses: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct DefenseOutcome {
    pub params: GcnParams,
    pub pseudo_labels: Vec<usize>,
    pub rounds: Vec<RoundRecord>,
    /// Data loss per epoch of the closing clean fine-tune.
    pub finetune_losses: Vec<f64>,
}

/// Adversarial input of one round.
pub(crate) struct RoundInput {
    pub features: Option<Matrix>,
    pub adjacency: Adjacency,
    pub perturbation: f64,
}

/// Builds the perturbed input for `targets` with the current parameters.
pub fn adversarial_input(
    g: &Graph,
    a_hat: &Csr,
    params: &GcnParams,
    pseudo_labels: &[usize],
    targets: &[usize],
    cfg: &DefenseConfig,
    generator: Generator,
) -> Result<(Option<Matrix>, Adjacency, f64)> {
    let r = round_input(g, a_hat, params, pseudo_labels, targets, cfg, generator)?;
    Ok((r.features, r.adjacency, r.perturbation))
}

fn round_input(
    g: &Graph,
    a_hat: &Csr,
    params: &GcnParams,
    pseudo_labels: &[usize],
    targets: &[usize],
    cfg: &DefenseConfig,
    generator: Generator,
) -> Result<RoundInput> {
    Ok(match generator {
        Generator::Continuous => {
            let p = generate_adv_continuous(g, a_hat, params, pseudo_labels, targets, cfg)?;
            let perturbation = p.frobenius_distance();
            RoundInput {
                features: None,
                adjacency: p.into_values(),
                perturbation,
            }
        }
        Generator::Discrete => {
            let mut graph = g.clone();
            let mut adjacency = a_hat.clone();
            let mut flips = 0usize;
            for _ in 0..cfg.discrete_flips {
                let step = generate_adv_discrete(&graph, params, pseudo_labels, targets)?;
                if step.change.is_none() {
                    break;
                }
                flips += 1;
                graph = step.graph;
                adjacency = step.adjacency;
            }
            RoundInput {
                features: None,
                adjacency: Adjacency::Sparse(adjacency),
                perturbation: flips as f64,
            }
        }
        Generator::Features => {
            let delta = generate_adv_features(
                g,
                a_hat,
                params,
                pseudo_labels,
                targets,
                cfg.adversary_loss,
                &cfg.feature_attack,
            )?;
            let perturbation = delta.frobenius_norm();
            RoundInput {
                features: Some(g.features().add(&delta)?),
                adjacency: Adjacency::Sparse(a_hat.clone()),
                perturbation,
            }
        }
    })
}

/// Round-based adversarial training.
///
/// Pseudo labels are the true labels on the train set and the predictions
/// of the starting model elsewhere. Each round draws fresh node groups,
/// builds an adversarial input against the adversarial group, and retrains
/// with a fresh optimizer on: labeled nodes (true labels, perturbed input),
/// `alpha` times the adversarial group (pseudo labels, perturbed input) and
/// `alpha` times the clean group (pseudo labels, clean input).
///
/// `initial` defaults to a model trained with `train_cfg`. Zero rounds
/// return it untouched.
pub fn defense_framework(
    g: &Graph,
    split: &DataSplit,
    cfg: &DefenseConfig,
    train_cfg: &TrainConfig,
    generator: Generator,
    initial: Option<&GcnParams>,
) -> Result<DefenseOutcome> {
    cfg.validate()?;
    train_cfg.validate()?;
    let pool = split.unlabeled().len();
    if cfg.adv_group_size + cfg.clean_group_size > pool {
        return Err(config("node groups exceed the number of unlabeled nodes"));
    }
    let mut params = match initial {
        Some(p) => p.clone(),
        None => train(g, split, train_cfg)?,
    };
    let a_hat = normalize(g).into_csr();
    let x = g.features();
    let labels = g.labels();
    let mut pseudo = merge_labels(labels, &predict_features(&params, x, &a_hat)?, &split.train);
    let mut rounds = Vec::with_capacity(cfg.rounds);
    for round in 0..cfg.rounds {
        if cfg.refresh_pseudo_labels && round > 0 {
            pseudo = merge_labels(labels, &predict_features(&params, x, &a_hat)?, &split.train);
        }
        let groups = sample_groups(
            split,
            cfg.adv_group_size,
            cfg.clean_group_size,
            cfg.seed,
            round,
        )?;
        ensure_disjoint(&split.train, &groups.adversarial)?;
        let input = round_input(
            g,
            &a_hat,
            &params,
            &pseudo,
            &groups.adversarial,
            cfg,
            generator,
        )?;
        let x_adv = input.features.as_ref().unwrap_or(x);
        let margin = LossTerm::new(LossKind::Margin, &pseudo, &groups.adversarial);
        let adversary_loss_clean = margin.value(&forward(&params, x, &a_hat)?)?;
        let adversary_loss_perturbed = margin.value(&forward(&params, x_adv, &input.adjacency)?)?;
        let retrain_losses = retrain_round(
            &mut params,
            g,
            split,
            &pseudo,
            &groups,
            x_adv,
            &input.adjacency,
            &a_hat,
            cfg,
            train_cfg,
        )?;
        rounds.push(RoundRecord {
            round,
            groups,
            perturbation: input.perturbation,
            adversary_loss_clean,
            adversary_loss_perturbed,
            retrain_losses,
        });
    }
    let mut finetune_losses = Vec::new();
    if cfg.final_finetune && cfg.rounds > 0 {
        let term = LossTerm::new(cfg.retrain_loss, labels, &split.train);
        finetune_losses = optimize(&mut params, train_cfg, cfg.retrain_epochs, |p| {
            let r = backward_terms(p, x, &a_hat, &a_hat, &[term], Needs::default())?;
            Ok((r.loss, r.d_w1, r.d_w2))
        })?;
    }
    Ok(DefenseOutcome {
        params,
        pseudo_labels: pseudo,
        rounds,
        finetune_losses,
    })
}

#[allow(clippy::too_many_arguments)]
fn retrain_round(
    params: &mut GcnParams,
    g: &Graph,
    split: &DataSplit,
    pseudo: &[usize],
    groups: &NodeGroups,
    x_adv: &Matrix,
    a_adv: &Adjacency,
    a_hat: &Csr,
    cfg: &DefenseConfig,
    train_cfg: &TrainConfig,
) -> Result<Vec<f64>> {
    let kind = cfg.retrain_loss;
    let mut perturbed = Vec::with_capacity(2);
    perturbed.push(LossTerm::new(kind, g.labels(), &split.train));
    let use_pseudo = cfg.alpha != 0.0;
    if use_pseudo {
        perturbed.push(LossTerm::new(kind, pseudo, &groups.adversarial).weighted(cfg.alpha));
    }
    let clean_term = LossTerm::new(kind, pseudo, &groups.clean).weighted(cfg.alpha);
    let with_clean = use_pseudo && !groups.clean.is_empty();
    let x = g.features();
    optimize(params, train_cfg, cfg.retrain_epochs, |p| {
        let mut r = backward_terms(p, x_adv, a_adv, a_adv, &perturbed, Needs::default())?;
        if with_clean {
            let c = backward_terms(p, x, a_hat, a_hat, &[clean_term], Needs::default())?;
            r.loss += c.loss;
            r.d_w1.add_scaled(1.0, &c.d_w1);
            r.d_w2.add_scaled(1.0, &c.d_w2);
        }
        Ok((r.loss, r.d_w1, r.d_w2))
    })
}

/// Feature perturbation `δ` with `Â²(X + δ) = (Â + ε)²X`, so a two-layer
/// linear surrogate on `(X + δ, Â)` matches one on `(X, Â + ε)` for every
/// choice of weights.
pub fn equivalent_feature_delta(a_hat: &Matrix, epsilon: &Matrix, x: &Matrix) -> Result<Matrix> {
    let n = a_hat.rows();
    a_hat.expect_shape("adjacency", n, n)?;
    epsilon.expect_shape("adjacency perturbation", n, n)?;
    x.expect_shape("features", n, x.cols())?;
    let (lu, _) = factor_well_conditioned(a_hat)?;
    let shifted = a_hat.add(epsilon)?;
    let target = shifted.matmul(&shifted.matmul(x)?)?;
    let once = solve_refined(a_hat, &lu, &target)?;
    let twice = solve_refined(a_hat, &lu, &once)?;
    twice.sub(x)
}
