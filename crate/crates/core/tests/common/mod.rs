//! Test-only oracles: central finite differences and random small instances.
#![allow(dead_code)]

use graphdefense_core::graph::{edge_key, normalize};
use graphdefense_core::model::{forward, GcnParams, LossKind, LossTerm};
use graphdefense_core::{Graph, Matrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-scale..scale))
}

pub fn random_graph(
    rng: &mut ChaCha8Rng,
    n: usize,
    p: f64,
    features: usize,
    classes: usize,
) -> Graph {
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if rng.random::<f64>() < p {
                edges.push(edge_key(u, v));
            }
        }
    }
    let x = random_matrix(rng, n, features, 1.0);
    let labels = (0..n).map(|_| rng.random_range(0..classes)).collect();
    Graph::new(n, edges, x, labels, classes).unwrap()
}

/// Central difference of `f` with respect to every entry of `m`.
pub fn fd_matrix(m: &Matrix, mut f: impl FnMut(&Matrix) -> f64) -> Matrix {
    let mut probe = m.clone();
    let mut out = Matrix::zeros(m.rows(), m.cols());
    for i in 0..m.rows() {
        for j in 0..m.cols() {
            let orig = probe[(i, j)];
            probe[(i, j)] = orig + FD_STEP;
            let up = f(&probe);
            probe[(i, j)] = orig - FD_STEP;
            let down = f(&probe);
            probe[(i, j)] = orig;
            out[(i, j)] = (up - down) / (2.0 * FD_STEP);
        }
    }
    out
}

pub fn max_rel_error(analytic: &Matrix, numeric: &Matrix) -> f64 {
    assert_eq!(analytic.shape(), numeric.shape());
    analytic
        .as_slice()
        .iter()
        .zip(numeric.as_slice())
        .map(|(a, b)| (a - b).abs() / a.abs().max(b.abs()).max(1e-6))
        .fold(0.0, f64::max)
}

pub struct Instance {
    pub params: GcnParams,
    pub x: Matrix,
    pub a_hat: Matrix,
    pub labels: Vec<usize>,
    pub nodes: Vec<usize>,
}

pub fn loss_of(
    kind: LossKind,
    params: &GcnParams,
    x: &Matrix,
    a: &Matrix,
    labels: &[usize],
    nodes: &[usize],
) -> f64 {
    let t = forward(params, x, a).unwrap();
    LossTerm::new(kind, labels, nodes).value(&t).unwrap()
}

/// Random instance away from rectifier kinks and argmax ties, so the loss is
/// smooth within a finite-difference step. The propagator is the normalized
/// adjacency of a random graph plus a small dense perturbation, which makes it
/// a general (asymmetric) square matrix.
pub fn smooth_instance(rng: &mut ChaCha8Rng, kind: LossKind) -> Instance {
    loop {
        let n = rng.random_range(2..=8);
        let f = rng.random_range(1..=4);
        let h = rng.random_range(1..=4);
        let c = rng.random_range(2..=4);
        let g = random_graph(rng, n, 0.4, f, c);
        let mut a_hat = normalize(&g).to_dense();
        a_hat.add_scaled(1.0, &random_matrix(rng, n, n, 0.1));
        let params =
            GcnParams::new(random_matrix(rng, f, h, 1.0), random_matrix(rng, h, c, 1.0)).unwrap();
        let x = g.features().clone();
        let k = rng.random_range(1..=n);
        let mut nodes: Vec<usize> = (0..n).collect();
        nodes.truncate(k);
        let labels = g.labels().to_vec();
        let t = forward(&params, &x, &a_hat).unwrap();
        let kink = t.pre_activation.as_slice().iter().any(|p| p.abs() < 1e-3);
        let tie = (0..n).any(|i| {
            let mut row = t.logits.row(i).to_vec();
            row.sort_by(|a, b| b.partial_cmp(a).unwrap());
            row[0] - row[1] < 1e-3
        });
        let degenerate = matches!(kind, LossKind::Margin | LossKind::SignedMargin) && tie;
        if !kink && !degenerate {
            return Instance {
                params,
                x,
                a_hat,
                labels,
                nodes,
            };
        }
    }
}

/// Dense propagator of a weighted symmetric adjacency with unit self-loops,
/// normalized symmetrically (`mean = false`) or by rows.
pub fn weighted_propagator(a: &Matrix, mean: bool) -> Matrix {
    let n = a.rows();
    let tilde = Matrix::from_fn(n, n, |i, j| a[(i, j)] + if i == j { 1.0 } else { 0.0 });
    let d: Vec<f64> = (0..n).map(|i| tilde.row(i).iter().sum()).collect();
    Matrix::from_fn(n, n, |i, j| {
        if mean {
            tilde[(i, j)] / d[i]
        } else {
            tilde[(i, j)] / (d[i] * d[j]).sqrt()
        }
    })
}

pub fn adjacency_of(g: &Graph) -> Matrix {
    let n = g.num_nodes();
    Matrix::from_fn(n, n, |i, j| if g.has_edge(i, j) { 1.0 } else { 0.0 })
}
