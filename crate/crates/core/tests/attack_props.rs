mod common;

use common::{adjacency_of, loss_of, random_graph, random_matrix, rng, weighted_propagator};
use graphdefense_core::attack::{
    capped_target_loss, fgsm_features, greedy_edge_attack, pgd_features, replay_changes,
    replay_normalized, single_node_attack, AttackBudget, EdgeAction, EditMode, FeatureAttackConfig,
    NormKind,
};
use graphdefense_core::graph::{generate_synthetic, normalize, split};
use graphdefense_core::model::{
    backward, forward, predict_features, retrain, train, GcnParams, LossKind, LossTerm, TrainConfig,
};
use graphdefense_core::{Graph, Matrix, SyntheticSpec};
use rand::Rng;

fn objective(params: &GcnParams, g: &Graph, labels: &[usize], targets: &[usize]) -> f64 {
    let t = forward(params, g.features(), normalize(g).csr()).unwrap();
    capped_target_loss(&t, labels, targets)
}

fn trained(g: &Graph, seed: u64) -> GcnParams {
    let mut p = GcnParams::glorot(g.num_features(), 8, g.num_classes(), seed);
    let all: Vec<usize> = (0..g.num_nodes()).collect();
    let cfg = TrainConfig {
        learning_rate: 0.05,
        ..Default::default()
    };
    let term = LossTerm::new(LossKind::CrossEntropy, g.labels(), &all);
    retrain(&mut p, g.features(), normalize(g).csr(), &[term], &cfg, 100).unwrap();
    p
}

/// Harmful first-order scores from finite differences on a weighted copy of
/// the graph, best first.
fn fd_ranking(
    params: &GcnParams,
    g: &Graph,
    labels: &[usize],
    targets: &[usize],
) -> Vec<(usize, usize)> {
    let clean = forward(params, g.features(), normalize(g).csr()).unwrap();
    let active: Vec<usize> = targets
        .iter()
        .copied()
        .filter(|&t| clean.probabilities[(t, labels[t])] > 0.5)
        .collect();
    let scored = if active.is_empty() {
        targets.to_vec()
    } else {
        active
    };
    let base = adjacency_of(g);
    let loss = |t: f64, u: usize, v: usize| {
        let mut a = base.clone();
        a[(u, v)] += t;
        a[(v, u)] += t;
        loss_of(
            LossKind::CrossEntropy,
            params,
            g.features(),
            &weighted_propagator(&a, false),
            labels,
            &scored,
        )
    };
    let mut out = Vec::new();
    let n = g.num_nodes();
    for u in 0..n {
        for v in u + 1..n {
            let d = (loss(1e-6, u, v) - loss(-1e-6, u, v)) / 2e-6;
            let harm = if g.has_edge(u, v) { -d } else { d };
            if harm > 1e-9 {
                out.push((harm, (u, v)));
            }
        }
    }
    out.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    out.into_iter().map(|(_, p)| p).collect()
}

/// Objective after every single flip, best first.
fn exhaustive_ranking(
    params: &GcnParams,
    g: &Graph,
    labels: &[usize],
    targets: &[usize],
) -> Vec<(f64, (usize, usize))> {
    let n = g.num_nodes();
    let mut out = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            let mut h = g.clone();
            h.toggle_edge(u, v).unwrap();
            out.push((objective(params, &h, labels, targets), (u, v)));
        }
    }
    out.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    out
}

#[test]
fn single_flip_matches_the_exhaustive_oracle() {
    let mut r = rng(41);
    let (mut agreeing, mut checked) = (0, 0);
    while checked < 300 {
        let n = r.random_range(3..=6);
        let g = random_graph(&mut r, n, 0.5, 3, 2);
        let params = trained(&g, r.random());
        let targets = vec![r.random_range(0..n)];
        let out = greedy_edge_attack(
            &g,
            &params,
            &AttackBudget::new(1, targets.clone(), EditMode::Both),
        )
        .unwrap();
        let Some(change) = out.changes.first() else {
            continue;
        };
        checked += 1;
        let picked = (change.u, change.v);
        let ranking = exhaustive_ranking(&params, &g, &out.target_labels, &targets);
        let best = ranking[0].0;
        let maximizers: Vec<(usize, usize)> = ranking
            .iter()
            .filter(|(l, _)| *l >= best - 1e-12)
            .map(|&(_, p)| p)
            .collect();
        let gradient = fd_ranking(&params, &g, &out.target_labels, &targets);
        if gradient.first().is_some_and(|p| maximizers.contains(p)) {
            agreeing += 1;
            assert!(
                maximizers.contains(&picked),
                "{picked:?} not in {maximizers:?}"
            );
        }
        if n == 3 {
            let mine = ranking.iter().find(|x| x.1 == picked).unwrap().0;
            assert!(ranking.iter().filter(|(l, _)| *l > mine).count() < 3);
        }
        assert_eq!(
            change.loss_after,
            objective(&params, &out.graph, &out.target_labels, &targets)
        );
    }
    assert!(
        agreeing > 100,
        "rankings agreed on only {agreeing} instances"
    );
}

#[test]
fn change_log_replays_bit_exactly() {
    let mut r = rng(7);
    for _ in 0..30 {
        let n = r.random_range(4..=12);
        let g = random_graph(&mut r, n, 0.3, 3, 3);
        let params = GcnParams::glorot(3, 4, 3, r.random());
        let targets = vec![0, n / 2];
        let out = greedy_edge_attack(&g, &params, &AttackBudget::new(5, targets, EditMode::Both))
            .unwrap();
        assert!(out.changes.len() <= 5);
        let replayed = replay_normalized(&g, &out.changes).unwrap();
        assert_eq!(
            replayed.to_dense().as_slice(),
            out.adjacency.values().to_dense().as_slice()
        );
        let dense = out.adjacency.values().to_dense();
        assert!(dense.is_symmetric() && dense.as_slice().iter().all(|&v| v >= 0.0));
        let flipped = g
            .edges()
            .filter(|&(u, v)| !out.graph.has_edge(u, v))
            .count()
            + out
                .graph
                .edges()
                .filter(|&(u, v)| !g.has_edge(u, v))
                .count();
        assert!(flipped <= out.changes.len());
    }
}

#[test]
fn target_loss_grows_with_budget_on_most_trials() {
    let (mut trials, mut monotone) = (0, 0);
    for seed in 0..60u64 {
        let spec = SyntheticSpec {
            num_nodes: 100 + 20 * (seed as usize % 6),
            attachment: 2,
            num_features: 20,
            num_classes: 3,
            feature_noise: 1.5,
            homophily: 0.8,
            seed,
        };
        let g = generate_synthetic(&spec).unwrap();
        let sp = split(&g, (0.15, 0.35), seed).unwrap();
        let params = train(
            &g,
            &sp,
            &TrainConfig {
                epochs: 100,
                ..Default::default()
            },
        )
        .unwrap();
        let targets: Vec<usize> = sp.test.iter().copied().take(10).collect();
        let out = greedy_edge_attack(
            &g,
            &params,
            &AttackBudget::new(10, targets.clone(), EditMode::Both),
        )
        .unwrap();
        let mut prev = objective(&params, &g, &out.target_labels, &targets);
        let mut ok = true;
        for (k, c) in out.changes.iter().enumerate() {
            let replayed = replay_changes(&g, &out.changes[..=k]).unwrap();
            assert_eq!(
                c.loss_after,
                objective(&params, &replayed, &out.target_labels, &targets)
            );
            ok &= c.loss_after >= prev;
            prev = c.loss_after;
        }
        trials += 1;
        monotone += usize::from(ok);
    }
    assert!(
        monotone as f64 >= 0.9 * trials as f64,
        "{monotone} of {trials}"
    );
}

#[test]
fn truncation_cases() {
    let g = Graph::new(
        3,
        [],
        Matrix::from_fn(3, 2, |i, j| (i + j) as f64),
        vec![0, 1, 0],
        2,
    )
    .unwrap();
    let params = GcnParams::glorot(2, 3, 2, 1);
    let out = greedy_edge_attack(
        &g,
        &params,
        &AttackBudget::new(3, vec![0, 1], EditMode::DropOnly),
    )
    .unwrap();
    assert!(out.truncated && out.changes.is_empty());
    let single = single_node_attack(&g, &params, 2, EditMode::DropOnly).unwrap();
    assert!(single.truncated);
}

#[test]
fn single_node_attack_is_a_one_flip_group_attack() {
    let mut r = rng(5);
    let g = random_graph(&mut r, 8, 0.4, 3, 2);
    let params = GcnParams::glorot(3, 4, 2, 2);
    for mode in [EditMode::AddOnly, EditMode::DropOnly, EditMode::Both] {
        let a = single_node_attack(&g, &params, 3, mode).unwrap();
        let b = greedy_edge_attack(&g, &params, &AttackBudget::new(1, vec![3], mode)).unwrap();
        assert_eq!(a.changes, b.changes);
        match mode {
            EditMode::AddOnly => assert!(a.changes.iter().all(|c| c.action == EdgeAction::Add)),
            EditMode::DropOnly => assert!(a.changes.iter().all(|c| c.action == EdgeAction::Drop)),
            EditMode::Both => {}
        }
    }
}

fn feature_instance(seed: u64) -> (GcnParams, Matrix, Matrix, Vec<usize>, Vec<usize>) {
    let mut r = rng(seed);
    let g = random_graph(&mut r, 5, 0.5, 3, 3);
    let params = GcnParams::new(
        random_matrix(&mut r, 3, 4, 1.0),
        random_matrix(&mut r, 4, 3, 1.0),
    )
    .unwrap();
    let a = normalize(&g).to_dense();
    let labels = predict_features(&params, g.features(), &a).unwrap();
    (params, g.features().clone(), a, labels, vec![0, 2, 4])
}

#[test]
fn pgd_beats_fgsm_and_stays_in_the_ball() {
    for seed in 0..100 {
        let (params, x, a, labels, targets) = feature_instance(seed);
        for (norm, kind) in [
            (NormKind::Linf, LossKind::CrossEntropy),
            (NormKind::L2, LossKind::SignedMargin),
        ] {
            let radius = 0.3;
            let cfg = FeatureAttackConfig {
                radius,
                norm,
                step: 0.05,
                iterations: 20,
            };
            let delta = pgd_features(&params, &x, &a, &labels, &targets, kind, &cfg).unwrap();
            match norm {
                NormKind::Linf => assert!(delta.max_abs() <= radius + 1e-12),
                NormKind::L2 => assert!(delta.frobenius_norm() <= radius + 1e-12),
            }
            let grad = backward(&params, &x, &a, kind, &labels, &targets)
                .unwrap()
                .d_features;
            let one_step = match norm {
                NormKind::Linf => fgsm_features(
                    &x,
                    &grad,
                    &FeatureAttackConfig {
                        step: radius,
                        ..cfg.clone()
                    },
                )
                .unwrap(),
                NormKind::L2 => {
                    let mut d = grad.clone();
                    d.scale(radius / grad.frobenius_norm().max(f64::MIN_POSITIVE));
                    d
                }
            };
            let pgd_loss = loss_of(
                kind,
                &params,
                &x.add(&delta).unwrap(),
                &a,
                &labels,
                &targets,
            );
            let fgsm_loss = loss_of(
                kind,
                &params,
                &x.add(&one_step).unwrap(),
                &a,
                &labels,
                &targets,
            );
            assert!(
                pgd_loss >= fgsm_loss - 1e-12,
                "seed {seed}: {pgd_loss} < {fgsm_loss}"
            );
        }
    }
}

#[test]
fn one_full_step_of_pgd_is_fgsm() {
    for seed in 0..20 {
        let (params, x, a, labels, targets) = feature_instance(seed);
        let cfg = FeatureAttackConfig {
            radius: 0.2,
            norm: NormKind::Linf,
            step: 0.2,
            iterations: 1,
        };
        let pgd = pgd_features(
            &params,
            &x,
            &a,
            &labels,
            &targets,
            LossKind::CrossEntropy,
            &cfg,
        )
        .unwrap();
        let grad = backward(&params, &x, &a, LossKind::CrossEntropy, &labels, &targets)
            .unwrap()
            .d_features;
        assert_eq!(pgd, fgsm_features(&x, &grad, &cfg).unwrap());
        let zero = FeatureAttackConfig { radius: 0.0, ..cfg };
        let d = pgd_features(
            &params,
            &x,
            &a,
            &labels,
            &targets,
            LossKind::CrossEntropy,
            &zero,
        )
        .unwrap();
        assert_eq!(d.max_abs(), 0.0);
    }
}

#[test]
fn fgsm_examples() {
    let cfg = FeatureAttackConfig {
        radius: 0.1,
        norm: NormKind::Linf,
        step: 0.1,
        iterations: 1,
    };
    let x = Matrix::zeros(1, 2);
    let g = Matrix::from_vec(1, 2, vec![1.0, -2.0]).unwrap();
    assert_eq!(
        fgsm_features(&x, &g, &cfg).unwrap().as_slice(),
        &[0.1, -0.1]
    );
    assert_eq!(
        fgsm_features(&x, &Matrix::zeros(1, 2), &cfg)
            .unwrap()
            .max_abs(),
        0.0
    );
}
