//! Sampled-neighborhood training with a mean aggregator over the node and
//! its sampled neighbors, and the matching adversarial-training loop.
//!
//! A batch is two rectangular propagators: `a1` maps the one-hop frontier to
//! the batch nodes and `a2` maps the two-hop support to the frontier. With a
//! fanout at least the maximum degree both reduce to rows of `D̃⁻¹(A + I)`,
//! so evaluation uses that full-neighborhood matrix.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::Rng;

use crate::attack::pgd_features;
use crate::defense::{
    sample_groups, DefenseConfig, DefenseOutcome, Generator, NodeGroups, RoundRecord,
};
use crate::error::{config, Error, Result};
use crate::graph::{mean_normalize, DataSplit, Graph};
use crate::matrix::Matrix;
use crate::model::{
    backward_from_trace, forward, forward_two, merge_labels, optimize, predict_features,
    ForwardTrace, GcnParams, LossKind, LossTerm, Needs, OptimizerKind, TrainConfig,
};
use crate::rng::{mix_seed, stream_rng};
use crate::sparse::Csr;

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct SageConfig {
    /// Sampled neighbors per batch node.
    pub fanout_1: usize,
    /// Sampled neighbors per frontier node.
    pub fanout_2: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub hidden_dim: usize,
    pub optimizer: OptimizerKind,
}

impl Default for SageConfig {
    fn default() -> Self {
        Self {
            fanout_1: 10,
            fanout_2: 10,
            batch_size: 64,
            epochs: 100,
            seed: 0,
            learning_rate: 0.01,
            weight_decay: 5e-4,
            hidden_dim: 16,
            optimizer: OptimizerKind::Adam,
        }
    }
}

impl SageConfig {
    pub fn validate(&self) -> Result<()> {
        if self.fanout_1 < 1 || self.fanout_2 < 1 {
            return Err(config("fanouts must be at least 1"));
        }
        if self.batch_size < 1 {
            return Err(config("batch size must be at least 1"));
        }
        self.train_config().validate()
    }

    fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            weight_decay: self.weight_decay,
            hidden_dim: self.hidden_dim,
            seed: self.seed,
            optimizer: self.optimizer,
        }
    }
}

fn sample_one(neighbors: &[Vec<usize>], node: usize, fanout: usize, seed: u64) -> Vec<usize> {
    let nb = &neighbors[node];
    let mut rng = stream_rng(mix_seed(seed, node as u64), 0x5a9e);
    if nb.is_empty() {
        return vec![node; fanout];
    }
    if nb.len() >= fanout {
        return sample(&mut rng, nb.len(), fanout)
            .into_iter()
            .map(|i| nb[i])
            .collect();
    }
    // Every neighbor once, then uniform draws with replacement to fill the
    // fixed width.
    let mut out = nb.clone();
    while out.len() < fanout {
        out.push(nb[rng.random_range(0..nb.len())]);
    }
    out
}

/// Fixed-width neighbor lists. A node whose degree is below `fanout` keeps
/// all of its neighbors and fills the remaining slots by drawing from them
/// with replacement; an isolated node lists itself. Each node's draw depends
/// only on `seed` and its own id.
pub fn sample_neighbors(
    g: &Graph,
    nodes: &[usize],
    fanout: usize,
    seed: u64,
) -> Result<Vec<Vec<usize>>> {
    if let Some(&node) = nodes.iter().find(|&&v| v >= g.num_nodes()) {
        return Err(Error::NodeOutOfRange {
            node,
            num_nodes: g.num_nodes(),
        });
    }
    let neighbors = g.neighbor_lists();
    Ok(nodes
        .iter()
        .map(|&v| sample_one(&neighbors, v, fanout, seed))
        .collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct SageBatch {
    pub batch_nodes: Vec<usize>,
    /// Nodes whose hidden state the batch needs, sorted.
    pub frontier: Vec<usize>,
    /// Nodes whose features the frontier needs, sorted.
    pub support: Vec<usize>,
    /// `|batch| × |frontier|`, rows mean-normalized.
    pub a1: Csr,
    /// `|frontier| × |support|`, rows mean-normalized.
    pub a2: Csr,
    /// Feature rows of `support`.
    pub gathered_features: Matrix,
}

/// Mean over `{v} ∪ set(samples)`, written into column positions of `index`.
fn mean_rows(rows: &[usize], samples: &[Vec<usize>], index: &[usize], cols: usize) -> Csr {
    let mut triplets = Vec::new();
    for (r, (&v, s)) in rows.iter().zip(samples).enumerate() {
        let mut members: Vec<usize> = s.iter().copied().chain(core::iter::once(v)).collect();
        members.sort_unstable();
        members.dedup();
        let w = 1.0 / members.len() as f64;
        triplets.extend(members.into_iter().map(|m| (r, index[m], w)));
    }
    Csr::from_triplets(rows.len(), cols, triplets)
}

fn union_sorted(rows: &[usize], samples: &[Vec<usize>]) -> Vec<usize> {
    let mut all: Vec<usize> = rows
        .iter()
        .chain(samples.iter().flatten())
        .copied()
        .collect();
    all.sort_unstable();
    all.dedup();
    all
}

struct Sampler {
    neighbors: Vec<Vec<usize>>,
    /// Scratch map from node id to a column position.
    index: Vec<usize>,
}

impl Sampler {
    fn new(g: &Graph) -> Self {
        Self {
            neighbors: g.neighbor_lists(),
            index: vec![usize::MAX; g.num_nodes()],
        }
    }

    fn batch(
        &mut self,
        nodes: &[usize],
        features: &Matrix,
        cfg: &SageConfig,
        seed: u64,
    ) -> SageBatch {
        let s1: Vec<Vec<usize>> = nodes
            .iter()
            .map(|&v| sample_one(&self.neighbors, v, cfg.fanout_1, mix_seed(seed, 1)))
            .collect();
        let frontier = union_sorted(nodes, &s1);
        for (i, &v) in frontier.iter().enumerate() {
            self.index[v] = i;
        }
        let a1 = mean_rows(nodes, &s1, &self.index, frontier.len());
        let s2: Vec<Vec<usize>> = frontier
            .iter()
            .map(|&v| sample_one(&self.neighbors, v, cfg.fanout_2, mix_seed(seed, 2)))
            .collect();
        let support = union_sorted(&frontier, &s2);
        for (i, &v) in support.iter().enumerate() {
            self.index[v] = i;
        }
        let a2 = mean_rows(&frontier, &s2, &self.index, support.len());
        let gathered_features = features.select_rows(&support);
        SageBatch {
            batch_nodes: nodes.to_vec(),
            frontier,
            support,
            a1,
            a2,
            gathered_features,
        }
    }
}

/// Samples a two-hop batch rooted at `nodes`.
pub fn build_batch(g: &Graph, nodes: &[usize], cfg: &SageConfig, seed: u64) -> Result<SageBatch> {
    cfg.validate()?;
    if nodes.is_empty() {
        return Err(Error::EmptyNodeSet("batch"));
    }
    if let Some(&node) = nodes.iter().find(|&&v| v >= g.num_nodes()) {
        return Err(Error::NodeOutOfRange {
            node,
            num_nodes: g.num_nodes(),
        });
    }
    Ok(Sampler::new(g).batch(nodes, g.features(), cfg, seed))
}

/// Forward pass on a batch; logit rows follow `batch.batch_nodes`.
pub fn sage_forward(params: &GcnParams, batch: &SageBatch) -> Result<ForwardTrace> {
    forward_two(params, &batch.gathered_features, &batch.a2, &batch.a1)
}

/// Full-neighborhood propagator the sampled model converges to.
pub fn sage_adjacency(g: &Graph) -> Csr {
    mean_normalize(g)
}

/// Weight gradients of `kind` over all batch nodes, labels taken from the
/// global `labels` vector.
pub fn sage_backward(
    params: &GcnParams,
    batch: &SageBatch,
    kind: LossKind,
    labels: &[usize],
) -> Result<(f64, Matrix, Matrix)> {
    let terms = BatchTerms::new(batch, labels);
    let trace = sage_forward(params, batch)?;
    let term = LossTerm::new(kind, &terms.labels, &terms.rows);
    let r = backward_from_trace(
        params,
        &batch.gathered_features,
        &batch.a2,
        &batch.a1,
        &trace,
        &[term],
        Needs::default(),
    )?;
    Ok((r.loss, r.d_w1, r.d_w2))
}

/// Batch-local label vector and row indices.
struct BatchTerms {
    labels: Vec<usize>,
    rows: Vec<usize>,
}

impl BatchTerms {
    fn new(batch: &SageBatch, labels: &[usize]) -> Self {
        Self {
            labels: batch.batch_nodes.iter().map(|&v| labels[v]).collect(),
            rows: (0..batch.batch_nodes.len()).collect(),
        }
    }
}

/// Cycles through `nodes` in shuffled mini-batches, reshuffling each pass.
struct BatchStream<'a> {
    nodes: &'a [usize],
    order: Vec<usize>,
    pos: usize,
    epoch: u64,
    step: u64,
    size: usize,
    seed: u64,
}

impl<'a> BatchStream<'a> {
    fn new(nodes: &'a [usize], size: usize, seed: u64) -> Self {
        Self {
            nodes,
            order: Vec::new(),
            pos: 0,
            epoch: 0,
            step: 0,
            size,
            seed,
        }
    }

    fn steps_per_epoch(&self) -> usize {
        self.nodes.len().div_ceil(self.size).max(1)
    }

    /// Next batch and the sampling seed to use for it.
    fn next(&mut self) -> (Vec<usize>, u64) {
        if self.pos == 0 {
            self.order = self.nodes.to_vec();
            let mut rng = stream_rng(mix_seed(self.seed, self.epoch), 0x5a6b);
            self.order.shuffle(&mut rng);
        }
        let end = (self.pos + self.size).min(self.order.len());
        let batch = self.order[self.pos..end].to_vec();
        let seed = mix_seed(mix_seed(self.seed, self.epoch), self.step);
        self.step += 1;
        self.pos = end;
        if self.pos >= self.order.len() {
            self.pos = 0;
            self.epoch += 1;
        }
        (batch, seed)
    }
}

fn accumulate(total: &mut (f64, Matrix, Matrix), part: (f64, Matrix, Matrix), weight: f64) {
    total.0 += weight * part.0;
    total.1.add_scaled(weight, &part.1);
    total.2.add_scaled(weight, &part.2);
}

/// Mini-batch training on cross-entropy over the train set with fresh
/// neighbor samples for every batch.
pub fn sage_train(g: &Graph, split: &DataSplit, cfg: &SageConfig) -> Result<GcnParams> {
    cfg.validate()?;
    if split.train.is_empty() {
        return Err(Error::EmptyNodeSet("train"));
    }
    let mut params = GcnParams::glorot(g.num_features(), cfg.hidden_dim, g.num_classes(), cfg.seed);
    let mut sampler = Sampler::new(g);
    let mut stream = BatchStream::new(&split.train, cfg.batch_size, cfg.seed);
    let steps = cfg.epochs * stream.steps_per_epoch();
    let x = g.features();
    optimize(&mut params, &cfg.train_config(), steps, |p| {
        let (nodes, seed) = stream.next();
        let batch = sampler.batch(&nodes, x, cfg, seed);
        sage_backward(p, &batch, LossKind::CrossEntropy, g.labels())
    })?;
    Ok(params)
}

/// Predictions of the full-neighborhood model.
pub fn sage_predict(params: &GcnParams, g: &Graph) -> Result<Vec<usize>> {
    predict_features(params, g.features(), &sage_adjacency(g))
}

/// Inner maximization over both dense batch propagators inside one joint
/// Frobenius ball, by normalized gradient ascent with best-iterate
/// tracking. Returns the perturbed `(a1, a2)`.
pub fn maximize_blocks(
    params: &GcnParams,
    batch: &SageBatch,
    pseudo_labels: &[usize],
    cfg: &DefenseConfig,
) -> Result<(Matrix, Matrix)> {
    let terms = BatchTerms::new(batch, pseudo_labels);
    let x = &batch.gathered_features;
    let objective = LossTerm::new(cfg.adversary_loss, &terms.labels, &terms.rows);
    let margin = LossTerm::new(LossKind::Margin, &terms.labels, &terms.rows);
    let (o1, o2) = (batch.a1.to_dense(), batch.a2.to_dense());
    let (mut a1, mut a2) = (o1.clone(), o2.clone());
    let score = |a1: &Matrix, a2: &Matrix| -> Result<(f64, f64)> {
        let t = forward_two(params, x, a2, a1)?;
        Ok((margin.value(&t)?, objective.value(&t)?))
    };
    let mut best = (a1.clone(), a2.clone());
    let mut best_score = score(&a1, &a2)?;
    for _ in 0..cfg.inner_steps {
        let trace = forward_two(params, x, &a2, &a1)?;
        let r = backward_from_trace(
            params,
            x,
            &a2,
            &a1,
            &trace,
            &[objective],
            Needs {
                features: false,
                propagators: true,
            },
        )?;
        let g1 = r.d_outer.as_ref().unwrap().to_dense();
        let g2 = r.d_inner.as_ref().unwrap().to_dense();
        let len = libm::hypot(g1.frobenius_norm(), g2.frobenius_norm());
        if len == 0.0 {
            break;
        }
        a1.add_scaled(cfg.inner_step_size / len, &g1);
        a2.add_scaled(cfg.inner_step_size / len, &g2);
        let (mut d1, mut d2) = (a1.sub(&o1)?, a2.sub(&o2)?);
        let dist = libm::hypot(d1.frobenius_norm(), d2.frobenius_norm());
        if dist > cfg.epsilon {
            d1.scale(cfg.epsilon / dist);
            d2.scale(cfg.epsilon / dist);
            a1 = o1.add(&d1)?;
            a2 = o2.add(&d2)?;
        }
        let s = score(&a1, &a2)?;
        if s.0 > best_score.0 || (s.0 == best_score.0 && s.1 > best_score.1) {
            best_score = s;
            best = (a1.clone(), a2.clone());
        }
    }
    Ok(best)
}

/// The adversarial input of one sampled round.
enum SageInput {
    Features(Matrix),
    Blocks {
        batch: SageBatch,
        a1: Matrix,
        a2: Matrix,
    },
}

/// Round-based adversarial training of the sampled model. Mirrors
/// [`crate::defense::defense_framework`]: every retraining step combines a
/// labeled mini-batch (true labels) with the adversarial group (pseudo
/// labels, perturbed input) and the clean group (pseudo labels, clean
/// input), the latter two weighted by `alpha`.
///
/// The feature generator perturbs `X` against the full-neighborhood model
/// and every batch gathers from the perturbed features. The continuous
/// generator perturbs the dense sampled propagators of one batch rooted at
/// the adversarial group; labeled batches then stay on the clean graph.
pub fn sage_defend(
    g: &Graph,
    split: &DataSplit,
    cfg: &SageConfig,
    defense: &DefenseConfig,
    generator: Generator,
    initial: Option<&GcnParams>,
) -> Result<DefenseOutcome> {
    cfg.validate()?;
    defense.validate()?;
    if generator == Generator::Discrete {
        return Err(config(
            "the sampled trainer supports the feature and continuous generators",
        ));
    }
    if defense.adv_group_size + defense.clean_group_size > split.unlabeled().len() {
        return Err(config("node groups exceed the number of unlabeled nodes"));
    }
    let mut params = match initial {
        Some(p) => p.clone(),
        None => sage_train(g, split, cfg)?,
    };
    let x = g.features();
    let labels = g.labels();
    let full = sage_adjacency(g);
    let mut pseudo = merge_labels(labels, &predict_features(&params, x, &full)?, &split.train);
    let train_cfg = cfg.train_config();
    let mut sampler = Sampler::new(g);
    let mut rounds = Vec::with_capacity(defense.rounds);
    let kind = defense.retrain_loss;

    for round in 0..defense.rounds {
        if defense.refresh_pseudo_labels && round > 0 {
            pseudo = merge_labels(labels, &predict_features(&params, x, &full)?, &split.train);
        }
        let groups: NodeGroups = sample_groups(
            split,
            defense.adv_group_size,
            defense.clean_group_size,
            defense.seed,
            round,
        )?;
        let round_seed = mix_seed(defense.seed ^ 0x5a6d, round as u64);
        let margin = LossTerm::new(LossKind::Margin, &pseudo, &groups.adversarial);
        let adversary_loss_clean = margin.value(&forward(&params, x, &full)?)?;
        let (input, perturbation, adversary_loss_perturbed) = match generator {
            Generator::Features => {
                let delta = pgd_features(
                    &params,
                    x,
                    &full,
                    &pseudo,
                    &groups.adversarial,
                    defense.adversary_loss,
                    &defense.feature_attack,
                )?;
                let perturbed = x.add(&delta)?;
                let after = margin.value(&forward(&params, &perturbed, &full)?)?;
                (
                    SageInput::Features(perturbed),
                    delta.frobenius_norm(),
                    after,
                )
            }
            _ => {
                let batch = sampler.batch(&groups.adversarial, x, cfg, round_seed);
                let (a1, a2) = maximize_blocks(&params, &batch, &pseudo, defense)?;
                let dist = libm::hypot(
                    a1.sub(&batch.a1.to_dense())?.frobenius_norm(),
                    a2.sub(&batch.a2.to_dense())?.frobenius_norm(),
                );
                let terms = BatchTerms::new(&batch, &pseudo);
                let t = forward_two(&params, &batch.gathered_features, &a2, &a1)?;
                let after =
                    LossTerm::new(LossKind::Margin, &terms.labels, &terms.rows).value(&t)?;
                (SageInput::Blocks { batch, a1, a2 }, dist, after)
            }
        };

        let mut stream = BatchStream::new(&split.train, cfg.batch_size, round_seed);
        let steps = defense.retrain_epochs * stream.steps_per_epoch();
        let use_pseudo = defense.alpha != 0.0;
        let retrain_losses = optimize(&mut params, &train_cfg, steps, |p| {
            let (nodes, seed) = stream.next();
            let perturbed_x = match &input {
                SageInput::Features(px) => px,
                SageInput::Blocks { .. } => x,
            };
            let batch = sampler.batch(&nodes, perturbed_x, cfg, seed);
            let mut total = sage_backward(p, &batch, kind, labels)?;
            if use_pseudo {
                let adv = match &input {
                    SageInput::Features(px) => {
                        let b = sampler.batch(&groups.adversarial, px, cfg, mix_seed(seed, 3));
                        sage_backward(p, &b, kind, &pseudo)?
                    }
                    SageInput::Blocks { batch, a1, a2 } => {
                        let terms = BatchTerms::new(batch, &pseudo);
                        let term = LossTerm::new(kind, &terms.labels, &terms.rows);
                        let t = forward_two(p, &batch.gathered_features, a2, a1)?;
                        let r = backward_from_trace(
                            p,
                            &batch.gathered_features,
                            a2,
                            a1,
                            &t,
                            &[term],
                            Needs::default(),
                        )?;
                        (r.loss, r.d_w1, r.d_w2)
                    }
                };
                accumulate(&mut total, adv, defense.alpha);
                if !groups.clean.is_empty() {
                    let b = sampler.batch(&groups.clean, x, cfg, mix_seed(seed, 4));
                    accumulate(
                        &mut total,
                        sage_backward(p, &b, kind, &pseudo)?,
                        defense.alpha,
                    );
                }
            }
            Ok(total)
        })?;
        rounds.push(RoundRecord {
            round,
            groups,
            perturbation,
            adversary_loss_clean,
            adversary_loss_perturbed,
            retrain_losses,
        });
    }

    let mut finetune_losses = Vec::new();
    if defense.final_finetune && defense.rounds > 0 {
        let mut stream =
            BatchStream::new(&split.train, cfg.batch_size, mix_seed(defense.seed, 0xf1e));
        let steps = defense.retrain_epochs * stream.steps_per_epoch();
        finetune_losses = optimize(&mut params, &train_cfg, steps, |p| {
            let (nodes, seed) = stream.next();
            let batch = sampler.batch(&nodes, x, cfg, seed);
            sage_backward(p, &batch, kind, labels)
        })?;
    }
    Ok(DefenseOutcome {
        params,
        pseudo_labels: pseudo,
        rounds,
        finetune_losses,
    })
}
