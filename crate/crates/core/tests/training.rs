use graphdefense_core::graph::{generate_synthetic, normalize, split, DataSplit};
use graphdefense_core::model::{predict, train, OptimizerKind};
use graphdefense_core::{Graph, Matrix, SyntheticSpec, TrainConfig};

/// Two triangles joined by one edge with one-hot class features.
fn separable() -> (Graph, DataSplit) {
    let edges = [
        (0, 1),
        (1, 2),
        (0, 2),
        (2, 3),
        (3, 4),
        (4, 5),
        (3, 5),
        (6, 7),
        (7, 8),
        (8, 9),
    ];
    let labels = vec![0, 0, 0, 1, 1, 1, 0, 0, 1, 1];
    let x = Matrix::from_fn(10, 2, |i, j| if labels[i] == j { 1.0 } else { 0.0 });
    let g = Graph::new(10, edges, x, labels, 2).unwrap();
    let all: Vec<usize> = (0..10).collect();
    (
        g,
        DataSplit {
            train: all,
            validation: Vec::new(),
            test: Vec::new(),
        },
    )
}

#[test]
fn separable_graph_is_fit_exactly() {
    let (g, sp) = separable();
    for optimizer in [OptimizerKind::Adam, OptimizerKind::GradientDescent] {
        let cfg = TrainConfig {
            optimizer,
            learning_rate: if optimizer == OptimizerKind::Adam {
                0.05
            } else {
                1.0
            },
            ..Default::default()
        };
        let params = train(&g, &sp, &cfg).unwrap();
        let pred = predict(&params, &g, normalize(&g).csr()).unwrap();
        assert_eq!(pred, g.labels(), "{optimizer:?}");
    }
}

#[test]
fn training_is_bit_deterministic() {
    let spec = SyntheticSpec {
        num_nodes: 200,
        attachment: 2,
        num_features: 12,
        num_classes: 4,
        feature_noise: 2.0,
        homophily: 0.8,
        seed: 5,
    };
    let g = generate_synthetic(&spec).unwrap();
    let sp = split(&g, (0.15, 0.35), 5).unwrap();
    let cfg = TrainConfig {
        epochs: 50,
        ..Default::default()
    };
    let a = train(&g, &sp, &cfg).unwrap();
    let b = train(&g, &sp, &cfg).unwrap();
    assert_eq!(a.w1.as_slice(), b.w1.as_slice());
    assert_eq!(a.w2.as_slice(), b.w2.as_slice());
    assert_ne!(
        a,
        train(
            &g,
            &sp,
            &TrainConfig {
                seed: 1,
                ..cfg.clone()
            }
        )
        .unwrap()
    );
    assert!(train(&g, &sp, &TrainConfig { epochs: 0, ..cfg }).is_err());
}
