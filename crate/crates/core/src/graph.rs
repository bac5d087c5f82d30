//! Graph storage, adjacency normalization, data splits and the synthetic
//! preferential-attachment generator.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{config, Error, Result};
use crate::matrix::Matrix;
use crate::rng::stream_rng;
use crate::sparse::Csr;

/// Canonical key of an undirected edge: smaller endpoint first.
#[inline]
pub fn edge_key(u: usize, v: usize) -> (usize, usize) {
    if u < v {
        (u, v)
    } else {
        (v, u)
    }
}

/// Undirected, unweighted graph with node features and class labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Graph {
    num_nodes: usize,
    edges: BTreeSet<(usize, usize)>,
    features: Matrix,
    labels: Vec<usize>,
    num_classes: usize,
}

impl Graph {
    /// Validates and builds a graph. Self-loops are rejected here; the
    /// loaders drop them before construction.
    pub fn new(
        num_nodes: usize,
        edges: impl IntoIterator<Item = (usize, usize)>,
        features: Matrix,
        labels: Vec<usize>,
        num_classes: usize,
    ) -> Result<Self> {
        if features.rows() != num_nodes {
            return Err(Error::InvalidGraph(format!(
                "feature matrix has {} rows for {num_nodes} nodes",
                features.rows()
            )));
        }
        if labels.len() != num_nodes {
            return Err(Error::InvalidGraph(format!(
                "{} labels for {num_nodes} nodes",
                labels.len()
            )));
        }
        if let Some((i, &y)) = labels.iter().enumerate().find(|(_, &y)| y >= num_classes) {
            return Err(Error::InvalidGraph(format!(
                "node {i} has label {y} but there are only {num_classes} classes"
            )));
        }
        let mut set = BTreeSet::new();
        for (u, v) in edges {
            if u >= num_nodes || v >= num_nodes {
                return Err(Error::NodeOutOfRange {
                    node: u.max(v),
                    num_nodes,
                });
            }
            if u == v {
                return Err(Error::InvalidGraph(format!("self-loop at node {u}")));
            }
            set.insert(edge_key(u, v));
        }
        Ok(Self {
            num_nodes,
            edges: set,
            features,
            labels,
            num_classes,
        })
    }

    #[inline]
    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    #[inline]
    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    #[inline]
    pub fn num_features(&self) -> usize {
        self.features.cols()
    }

    #[inline]
    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    #[inline]
    pub fn features(&self) -> &Matrix {
        &self.features
    }

    #[inline]
    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Edges in canonical `(min, max)` order, sorted.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.edges.contains(&edge_key(u, v))
    }

    /// Same nodes, features and labels with a different edge set.
    pub fn with_edges(&self, edges: BTreeSet<(usize, usize)>) -> Result<Self> {
        Graph::new(
            self.num_nodes,
            edges,
            self.features.clone(),
            self.labels.clone(),
            self.num_classes,
        )
    }

    pub fn with_features(&self, features: Matrix) -> Result<Self> {
        features.expect_shape("replacement features", self.num_nodes, self.num_features())?;
        Ok(Self {
            features,
            ..self.clone()
        })
    }

    /// Adds the edge if absent, removes it if present. Returns `true` when the
    /// edge exists afterwards.
    pub fn toggle_edge(&mut self, u: usize, v: usize) -> Result<bool> {
        if u >= self.num_nodes || v >= self.num_nodes {
            return Err(Error::NodeOutOfRange {
                node: u.max(v),
                num_nodes: self.num_nodes,
            });
        }
        if u == v {
            return Err(Error::InvalidGraph(format!("self-loop at node {u}")));
        }
        let key = edge_key(u, v);
        if self.edges.remove(&key) {
            Ok(false)
        } else {
            self.edges.insert(key);
            Ok(true)
        }
    }

    /// Number of incident edges, self-connection excluded.
    pub fn degree(&self, node: usize) -> Result<usize> {
        if node >= self.num_nodes {
            return Err(Error::NodeOutOfRange {
                node,
                num_nodes: self.num_nodes,
            });
        }
        Ok(self
            .edges
            .iter()
            .filter(|&&(u, v)| u == node || v == node)
            .count())
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0usize; self.num_nodes];
        for &(u, v) in &self.edges {
            deg[u] += 1;
            deg[v] += 1;
        }
        deg
    }

    /// Sorted neighbor list per node.
    pub fn neighbor_lists(&self) -> Vec<Vec<usize>> {
        let mut lists = vec![Vec::new(); self.num_nodes];
        for &(u, v) in &self.edges {
            lists[u].push(v);
            lists[v].push(u);
        }
        for l in &mut lists {
            l.sort_unstable();
        }
        lists
    }

    /// `A + I` as CSR with unit weights.
    pub fn adjacency_with_self_loops(&self) -> Csr {
        let mut triplets = Vec::with_capacity(2 * self.edges.len() + self.num_nodes);
        for i in 0..self.num_nodes {
            triplets.push((i, i, 1.0));
        }
        for &(u, v) in &self.edges {
            triplets.push((u, v, 1.0));
            triplets.push((v, u, 1.0));
        }
        Csr::from_triplets(self.num_nodes, self.num_nodes, triplets)
    }
}

/// `D̃^{-1/2} (A + I) D̃^{-1/2}`, stored sparse.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizedAdjacency(Csr);

impl NormalizedAdjacency {
    pub fn csr(&self) -> &Csr {
        &self.0
    }

    pub fn into_csr(self) -> Csr {
        self.0
    }

    pub fn to_dense(&self) -> Matrix {
        self.0.to_dense()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0.get(i, j)
    }

    pub fn num_nodes(&self) -> usize {
        self.0.rows()
    }
}

/// Symmetric normalization with self-connections.
pub fn normalize(g: &Graph) -> NormalizedAdjacency {
    let deg = g.degrees();
    let mut triplets = Vec::with_capacity(2 * g.num_edges() + g.num_nodes());
    for i in 0..g.num_nodes() {
        triplets.push((i, i, 1.0 / (deg[i] + 1) as f64));
    }
    for (u, v) in g.edges() {
        let w = 1.0 / libm::sqrt(((deg[u] + 1) * (deg[v] + 1)) as f64);
        triplets.push((u, v, w));
        triplets.push((v, u, w));
    }
    NormalizedAdjacency(Csr::from_triplets(g.num_nodes(), g.num_nodes(), triplets))
}

/// Row-mean normalization with self-connections: `D̃^{-1} (A + I)`. This is the
/// full-neighborhood limit of the sampled mean aggregator.
pub fn mean_normalize(g: &Graph) -> Csr {
    let deg = g.degrees();
    let mut triplets = Vec::with_capacity(2 * g.num_edges() + g.num_nodes());
    for i in 0..g.num_nodes() {
        triplets.push((i, i, 1.0 / (deg[i] + 1) as f64));
    }
    for (u, v) in g.edges() {
        triplets.push((u, v, 1.0 / (deg[u] + 1) as f64));
        triplets.push((v, u, 1.0 / (deg[v] + 1) as f64));
    }
    Csr::from_triplets(g.num_nodes(), g.num_nodes(), triplets)
}

/// Which normalization turns a discrete graph into the model's propagator.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Normalization {
    #[default]
    Symmetric,
    Mean,
}

impl Normalization {
    pub fn apply(self, g: &Graph) -> Csr {
        match self {
            Normalization::Symmetric => normalize(g).into_csr(),
            Normalization::Mean => mean_normalize(g),
        }
    }
}

/// Train / validation / test partition. Each set is sorted ascending.
#[derive(Clone, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DataSplit {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

impl DataSplit {
    /// Nodes outside the labeled (train) set.
    pub fn unlabeled(&self) -> Vec<usize> {
        let mut u: Vec<usize> = self.validation.iter().chain(&self.test).copied().collect();
        u.sort_unstable();
        u
    }
}

/// Uniform random partition. Train and validation sizes are floored; the
/// remainder goes to test.
pub fn split(g: &Graph, fractions: (f64, f64), seed: u64) -> Result<DataSplit> {
    let (train_f, val_f) = fractions;
    if !(train_f > 0.0 && val_f > 0.0 && train_f + val_f < 1.0) {
        return Err(config(format!(
            "split fractions ({train_f}, {val_f}) must be positive and sum to less than 1"
        )));
    }
    let n = g.num_nodes();
    let n_train = floor_count(n, train_f);
    let n_val = floor_count(n, val_f);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream_rng(seed, 0x5e1f));
    let mut train = order[..n_train].to_vec();
    let mut validation = order[n_train..n_train + n_val].to_vec();
    let mut test = order[n_train + n_val..].to_vec();
    train.sort_unstable();
    validation.sort_unstable();
    test.sort_unstable();
    Ok(DataSplit {
        train,
        validation,
        test,
    })
}

/// `floor(n · fraction)`, tolerant of representation error such as
/// `100 · 0.29 = 28.999…`.
pub(crate) fn floor_count(n: usize, fraction: f64) -> usize {
    libm::floor(n as f64 * fraction + 1e-9) as usize
}

/// Parameters of the synthetic preferential-attachment graph.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SyntheticSpec {
    pub num_nodes: usize,
    /// Edges contributed by every node after the first `attachment` nodes.
    pub attachment: usize,
    pub num_features: usize,
    pub num_classes: usize,
    /// Amplitude of the uniform noise added to each class centroid.
    pub feature_noise: f64,
    /// Probability that an attachment is drawn from the new node's own class.
    #[cfg_attr(feature = "serde", serde(default = "default_homophily"))]
    pub homophily: f64,
    pub seed: u64,
}

pub const DEFAULT_HOMOPHILY: f64 = 0.9;

#[cfg(feature = "serde")]
fn default_homophily() -> f64 {
    DEFAULT_HOMOPHILY
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.attachment < 1 {
            return Err(config("synthetic attachment must be at least 1"));
        }
        if self.num_classes < 2 {
            return Err(config("synthetic graphs need at least 2 classes"));
        }
        if !(self.feature_noise >= 0.0) {
            return Err(config("feature noise must be nonnegative"));
        }
        if !(0.0..=1.0).contains(&self.homophily) {
            return Err(config("homophily must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// Preferential-attachment graph with planted classes.
///
/// Node `i` belongs to class `i mod num_classes`. The first `attachment`
/// nodes start unconnected; every later node links to `attachment` distinct
/// earlier nodes chosen proportionally to degree, drawn from its own class
/// with probability `homophily`. For `num_nodes > attachment` this emits
/// exactly `attachment · (num_nodes − attachment)` edges.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Graph> {
    spec.validate()?;
    let n = spec.num_nodes;
    let m = spec.attachment;
    let c = spec.num_classes;
    let mut rng = stream_rng(spec.seed, 0x5a7);

    let labels: Vec<usize> = (0..n).map(|i| i % c).collect();

    // Every endpoint is pushed once per incident edge, so a uniform pick from
    // these lists is a degree-proportional pick.
    let mut repeated: Vec<usize> = Vec::new();
    let mut repeated_by_class: Vec<Vec<usize>> = vec![Vec::new(); c];
    let mut edges = BTreeSet::new();
    let mut chosen: Vec<usize> = Vec::with_capacity(m);

    for node in m.min(n)..n {
        chosen.clear();
        if node == m {
            chosen.extend(0..m);
        } else {
            let own = &repeated_by_class[labels[node]];
            let mut attempts = 0usize;
            while chosen.len() < m && attempts < 64 * m {
                attempts += 1;
                let pool = if !own.is_empty() && rng.random::<f64>() < spec.homophily {
                    own
                } else {
                    &repeated
                };
                let pick = pool[rng.random_range(0..pool.len())];
                if !chosen.contains(&pick) {
                    chosen.push(pick);
                }
            }
            while chosen.len() < m {
                let pick = rng.random_range(0..node);
                if !chosen.contains(&pick) {
                    chosen.push(pick);
                }
            }
        }
        for &t in &chosen {
            edges.insert(edge_key(node, t));
            repeated.push(t);
            repeated.push(node);
            repeated_by_class[labels[t]].push(t);
            repeated_by_class[labels[node]].push(node);
        }
    }

    let centroids = Matrix::from_fn(c, spec.num_features, |_, _| rng.random_range(-1.0..=1.0));
    let features = Matrix::from_fn(n, spec.num_features, |i, j| {
        let noise = if spec.feature_noise > 0.0 {
            rng.random_range(-spec.feature_noise..=spec.feature_noise)
        } else {
            0.0
        };
        centroids[(labels[i], j)] + noise
    });

    Graph::new(n, edges, features, labels, c)
}
