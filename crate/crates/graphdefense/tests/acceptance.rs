//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Citation criteria read LINQS distributions from
//! `$GRAPHDEFENSE_DATA` (default `<workspace>/data`), as
//! `<dir>/cora/cora.{content,cites}` or `<dir>/cora.{content,cites}`.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use common::{
    fd_matrix, loss_of, max_rel_error, random_graph, random_matrix, rng, smooth_instance, Instance,
};
use graphdefense::commands::{evaluate, run_defense};
use graphdefense::core::attack::{greedy_edge_attack, AttackBudget, EditMode};
use graphdefense::core::defense::{equivalent_feature_delta, DefenseConfig, Generator};
use graphdefense::core::eval::{
    accuracy, evaluate_group_attack, pooled_ratio, sample_target_groups, Ratio,
};
use graphdefense::core::graph::{
    generate_synthetic, mean_normalize, normalize, split, Normalization,
};
use graphdefense::core::model::{backward, forward, predict_features, train};
use graphdefense::core::sage::{build_batch, sage_defend, sage_forward, sage_train, SageConfig};
use graphdefense::core::{DataSplit, Error, GcnParams, Graph, LossKind, Matrix, SyntheticSpec};
use graphdefense::report::MethodResult;
use graphdefense::{ExperimentConfig, GeneratorKind};
use rand::Rng;

const GRADIENT_INSTANCES: usize = 200;
const GRADIENT_REL_TOL: f64 = 1e-4;
const GRADIENT_TIME: Duration = Duration::from_secs(60);

const INVARIANT_GRAPHS: usize = 1000;
const ROW_SUM_TOL: f64 = 1e-9;

const DELTA_INSTANCES: usize = 100;
const DELTA_TOL: f64 = 1e-8;

const ATTACK_TARGETS: usize = 100;
const ATTACK_FLIPS: usize = 100;
const ATTACK_MAX_ACCURACY: f64 = 0.55;
const ATTACK_TIME: Duration = Duration::from_secs(600);

const DEFENSE_FLIPS: usize = 70;
const DEFENSE_MIN_GAP: f64 = 0.15;
const DEFENSE_MAX_CLEAN_DROP: f64 = 0.02;
const SEEDS: [u64; 3] = [0, 1, 2];

const LOW_DEGREE: usize = 2;
const HIGH_DEGREE: usize = 5;
const LOW_DEGREE_MIN_RATIO: f64 = 2.0;

const SAGE_GRAPHS: usize = 100;
const SAGE_TOL: f64 = 1e-10;

const SAGE_SPEC: SyntheticSpec = SyntheticSpec {
    num_nodes: 2000,
    attachment: 5,
    num_features: 50,
    num_classes: 7,
    feature_noise: 5.0,
    homophily: 0.8,
    seed: 1,
};
const SAGE_BUDGETS: [usize; 5] = [0, 50, 100, 200, 300];
const SAGE_GROUPS: usize = 2;
const SAGE_GROUP_SIZE: usize = 128;
const SAGE_FEATURE_RADIUS: f64 = 1.0;
const SAGE_EPSILON: f64 = 4.0;
const SAGE_MIN_GAP: f64 = 0.15;
const SAGE_MAX_DISAGREEMENT: f64 = 0.08;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn gradients() -> Outcome {
    let start = Instant::now();
    let mut r = rng(101);
    let kinds = [
        LossKind::CrossEntropy,
        LossKind::Margin,
        LossKind::SignedMargin,
    ];
    let mut worst = 0.0f64;
    for k in 0..GRADIENT_INSTANCES {
        let kind = kinds[k % kinds.len()];
        let Instance {
            params,
            x,
            a_hat,
            labels,
            nodes,
        } = smooth_instance(&mut r, kind);
        let grads = backward(&params, &x, &a_hat, kind, &labels, &nodes).unwrap();
        let fd_w1 = fd_matrix(&params.w1, |w1| {
            let p = GcnParams::new(w1.clone(), params.w2.clone()).unwrap();
            loss_of(kind, &p, &x, &a_hat, &labels, &nodes)
        });
        let fd_w2 = fd_matrix(&params.w2, |w2| {
            let p = GcnParams::new(params.w1.clone(), w2.clone()).unwrap();
            loss_of(kind, &p, &x, &a_hat, &labels, &nodes)
        });
        let fd_x = fd_matrix(&x, |x| loss_of(kind, &params, x, &a_hat, &labels, &nodes));
        let fd_a = fd_matrix(&a_hat, |a| loss_of(kind, &params, &x, a, &labels, &nodes));
        for (analytic, numeric) in [
            (&grads.d_w1, &fd_w1),
            (&grads.d_w2, &fd_w2),
            (&grads.d_features, &fd_x),
            (&grads.d_adjacency.to_dense(), &fd_a),
        ] {
            worst = worst.max(max_rel_error(analytic, numeric));
        }
    }
    let took = start.elapsed();
    outcome(
        worst < GRADIENT_REL_TOL && took < GRADIENT_TIME,
        format!(
            "{GRADIENT_INSTANCES} instances, max relative error {worst:.2e} (< {GRADIENT_REL_TOL:e}), {took:.1?} (< {GRADIENT_TIME:?})"
        ),
    )
}

fn dense_oracle(g: &Graph) -> Matrix {
    let n = g.num_nodes();
    let d: Vec<f64> = (0..n).map(|i| g.degree(i).unwrap() as f64 + 1.0).collect();
    Matrix::from_fn(n, n, |i, j| {
        if i == j || g.has_edge(i, j) {
            1.0 / (d[i] * d[j]).sqrt()
        } else {
            0.0
        }
    })
}

fn invariants() -> Outcome {
    let mut r = rng(202);
    let (mut asymmetric, mut oracle_err, mut row_err, mut softmax_err) =
        (0usize, 0.0f64, 0.0f64, 0.0f64);
    for _ in 0..INVARIANT_GRAPHS {
        let n = r.random_range(1..=30);
        let p = r.random_range(0.0..0.7);
        let g = random_graph(&mut r, n, p, 3, 3);
        let a = normalize(&g).to_dense();
        asymmetric += usize::from(!a.is_symmetric());
        oracle_err = oracle_err.max(a.sub(&dense_oracle(&g)).unwrap().max_abs());
        let m = mean_normalize(&g).to_dense();
        for i in 0..n {
            row_err = row_err.max((m.row(i).iter().sum::<f64>() - 1.0).abs());
        }
        let params = GcnParams::new(
            random_matrix(&mut r, 3, 4, 3.0),
            random_matrix(&mut r, 4, 3, 3.0),
        )
        .unwrap();
        let t = forward(&params, g.features(), &normalize(&g).into_csr()).unwrap();
        for i in 0..n {
            softmax_err = softmax_err.max((t.probabilities.row(i).iter().sum::<f64>() - 1.0).abs());
        }
    }
    outcome(
        asymmetric == 0 && oracle_err < 1e-12 && row_err < ROW_SUM_TOL && softmax_err < ROW_SUM_TOL,
        format!(
            "{INVARIANT_GRAPHS} graphs, {asymmetric} asymmetric, oracle error {oracle_err:.1e}, mean-row error {row_err:.1e}, softmax-row error {softmax_err:.1e} (< {ROW_SUM_TOL:e})"
        ),
    )
}

fn equivalence() -> Outcome {
    let mut r = rng(303);
    let (mut solved, mut singular, mut worst) = (0usize, 0usize, 0.0f64);
    while solved < DELTA_INSTANCES {
        let n = r.random_range(5..=8);
        let g = random_graph(&mut r, n, 0.5, 3, 2);
        let a = normalize(&g).to_dense();
        let eps = random_matrix(&mut r, n, n, 0.05);
        let x = random_matrix(&mut r, n, 3, 1.0);
        let delta = match equivalent_feature_delta(&a, &eps, &x) {
            Ok(d) => d,
            Err(Error::Singular { .. }) => {
                singular += 1;
                continue;
            }
            Err(e) => return outcome(false, format!("unexpected error: {e}")),
        };
        solved += 1;
        let left = a
            .matmul(&a.matmul(&x.add(&delta).unwrap()).unwrap())
            .unwrap();
        let shifted = a.add(&eps).unwrap();
        let right = shifted.matmul(&shifted.matmul(&x).unwrap()).unwrap();
        worst = worst.max(left.sub(&right).unwrap().frobenius_norm());
    }
    outcome(
        worst < DELTA_TOL,
        format!(
            "{solved} instances ({singular} singular draws resampled), max residual {worst:.2e} (< {DELTA_TOL:e})"
        ),
    )
}

fn sage_exactness() -> Outcome {
    let mut r = rng(909);
    let mut worst = 0.0f64;
    for _ in 0..SAGE_GRAPHS {
        let n = r.random_range(2..=20);
        let p = r.random_range(0.0..0.6);
        let g = random_graph(&mut r, n, p, 3, 3);
        let params = GcnParams::new(
            random_matrix(&mut r, 3, 5, 1.0),
            random_matrix(&mut r, 5, 3, 1.0),
        )
        .unwrap();
        let fanout = g.degrees().into_iter().max().unwrap_or(0).max(1);
        let cfg = SageConfig {
            fanout_1: fanout,
            fanout_2: fanout,
            ..Default::default()
        };
        let nodes: Vec<usize> = (0..n).filter(|_| r.random_bool(0.5)).collect();
        let nodes = if nodes.is_empty() { vec![n - 1] } else { nodes };
        let batch = build_batch(&g, &nodes, &cfg, r.random()).unwrap();
        let sampled = sage_forward(&params, &batch).unwrap();
        let dense = forward(&params, g.features(), &mean_normalize(&g).to_dense()).unwrap();
        for (k, &v) in nodes.iter().enumerate() {
            for c in 0..3 {
                worst = worst.max((sampled.logits[(k, c)] - dense.logits[(v, c)]).abs());
            }
        }
    }
    outcome(
        worst < SAGE_TOL,
        format!("{SAGE_GRAPHS} graphs, max logit difference {worst:.1e} (< {SAGE_TOL:e})"),
    )
}

fn sage_defense_direction() -> Outcome {
    let start = Instant::now();
    let g = generate_synthetic(&SAGE_SPEC).unwrap();
    let s = split(&g, (0.15, 0.35), 1).unwrap();
    let sc = SageConfig::default();
    let base = sage_train(&g, &s, &sc).unwrap();
    let groups = sample_target_groups(&s.test, SAGE_GROUP_SIZE, SAGE_GROUPS, 0).unwrap();
    let curve = |p: &GcnParams| -> Vec<f64> {
        evaluate_group_attack(
            &g,
            p,
            &groups,
            &SAGE_BUDGETS,
            EditMode::Both,
            Normalization::Mean,
        )
        .unwrap()
        .curve
        .iter()
        .map(|c| c.accuracy)
        .collect()
    };
    let mut dc = DefenseConfig {
        rounds: 100,
        retrain_epochs: 1,
        epsilon: SAGE_EPSILON,
        inner_step_size: SAGE_EPSILON / 10.0,
        ..Default::default()
    };
    dc.feature_attack.radius = SAGE_FEATURE_RADIUS;
    dc.feature_attack.step = SAGE_FEATURE_RADIUS / 10.0;
    let features = sage_defend(&g, &s, &sc, &dc, Generator::Features, Some(&base)).unwrap();
    let edges = sage_defend(&g, &s, &sc, &dc, Generator::Continuous, Some(&base)).unwrap();
    let (clean, feat, edge) = (curve(&base), curve(&features.params), curve(&edges.params));
    let last = SAGE_BUDGETS.len() - 1;
    let gap = feat[last] - clean[last];
    let disagreement = feat
        .iter()
        .zip(&edge)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let fmt = |v: &[f64]| {
        v.iter()
            .map(|a| format!("{a:.3}"))
            .collect::<Vec<_>>()
            .join(" ")
    };
    outcome(
        gap >= SAGE_MIN_GAP && disagreement <= SAGE_MAX_DISAGREEMENT,
        format!(
            "budgets {SAGE_BUDGETS:?}: clean [{}], feature retrain [{}], edge defense [{}]; gap {gap:.3} (>= {SAGE_MIN_GAP}), max disagreement {disagreement:.3} (<= {SAGE_MAX_DISAGREEMENT}), {:.0?}",
            fmt(&clean),
            fmt(&feat),
            fmt(&edge),
            start.elapsed()
        ),
    )
}

// Citation datasets.

fn data_dir() -> PathBuf {
    std::env::var_os("GRAPHDEFENSE_DATA")
        .map(PathBuf::from)
        .unwrap_or_else(|| {
            let manifest = Path::new(env!("CARGO_MANIFEST_DIR"));
            manifest.ancestors().nth(2).unwrap_or(manifest).join("data")
        })
}

fn locate(name: &str) -> Option<(PathBuf, PathBuf)> {
    let dir = data_dir();
    [dir.join(name), dir]
        .into_iter()
        .map(|d| {
            (
                d.join(format!("{name}.content")),
                d.join(format!("{name}.cites")),
            )
        })
        .find(|(c, e)| c.is_file() && e.is_file())
}

struct Citation {
    name: &'static str,
    cfg: ExperimentConfig,
    graph: Graph,
}

fn load_citation(name: &'static str) -> Result<Citation, String> {
    let (content, cites) =
        locate(name).ok_or_else(|| format!("{name} not found under {}", data_dir().display()))?;
    let cfg: ExperimentConfig = serde_json::from_value(serde_json::json!({
        "dataset": {"kind": "linqs", "content": content, "cites": cites},
        "attack": {"budgets": [0, DEFENSE_FLIPS], "group_size": ATTACK_TARGETS, "groups": 1}
    }))
    .unwrap();
    let graph = cfg
        .dataset
        .load()
        .map_err(|e| format!("{name}: {e}"))?
        .graph;
    Ok(Citation { name, cfg, graph })
}

/// Post-attack results of every method for one seed.
struct SeedRun {
    methods: BTreeMap<&'static str, MethodResult>,
}

const CLEAN: &str = "clean";
const LARGE_ADV_GROUP: &str = "continuous 200/200";

fn seed_run(c: &Citation, seed: u64, large_adv_group: bool) -> Result<SeedRun, String> {
    let err = |e: graphdefense::Error| format!("{} seed {seed}: {e}", c.name);
    let mut cfg = c.cfg.clone();
    cfg.apply_overrides(Some(seed), None);
    let g = &c.graph;
    let s = split(
        g,
        (cfg.split.train_fraction, cfg.split.validation_fraction),
        seed,
    )
    .map_err(|e| err(e.into()))?;
    let clean = train(g, &s, &cfg.train).map_err(|e| err(e.into()))?;
    let mut methods = BTreeMap::new();
    let base = evaluate(&cfg, g, &s, &clean).map_err(err)?.result;
    eprintln!(
        "  {} seed {seed} clean: clean {:.4} post-attack {:.4}",
        c.name, base.clean_accuracy, base.post_attack_accuracy
    );
    methods.insert(CLEAN, base);
    let mut runs: Vec<(&'static str, GeneratorKind, DefenseConfig)> = [
        GeneratorKind::Continuous,
        GeneratorKind::Discrete,
        GeneratorKind::DropEdges,
    ]
    .into_iter()
    .map(|k| (k.name(), k, cfg.defense.clone()))
    .collect();
    if large_adv_group {
        let d = DefenseConfig {
            adv_group_size: 200,
            clean_group_size: 200,
            ..cfg.defense.clone()
        };
        runs.push((LARGE_ADV_GROUP, GeneratorKind::Continuous, d));
    }
    for (name, kind, defense) in runs {
        let t = Instant::now();
        let mut c2 = cfg.clone();
        c2.generator = kind;
        let d = run_defense(&c2, &defense, g, &s, &clean).map_err(err)?;
        let r = evaluate(&c2, g, &s, &d.params).map_err(err)?.result;
        eprintln!(
            "  {} seed {seed} {name}: clean {:.4} post-attack {:.4} ({:.0?})",
            c.name,
            r.clean_accuracy,
            r.post_attack_accuracy,
            t.elapsed()
        );
        methods.insert(name, r);
    }
    Ok(SeedRun { methods })
}

fn post(run: &SeedRun, name: &str) -> f64 {
    run.methods[name].post_attack_accuracy
}

fn attack_efficacy(c: &Citation) -> Outcome {
    let start = Instant::now();
    let cfg = &c.cfg;
    let g = &c.graph;
    let s: DataSplit = split(g, (0.15, 0.35), 0).unwrap();
    let params = train(g, &s, &cfg.train).unwrap();
    let targets = sample_target_groups(&s.test, ATTACK_TARGETS, 1, 0)
        .unwrap()
        .remove(0);
    let attack_start = Instant::now();
    let out = greedy_edge_attack(
        g,
        &params,
        &AttackBudget::new(ATTACK_FLIPS, targets.clone(), EditMode::Both),
    )
    .unwrap();
    let attack_time = attack_start.elapsed();
    let pred = predict_features(&params, g.features(), &normalize(&out.graph).into_csr()).unwrap();
    let acc = accuracy(&pred, g.labels(), &targets).unwrap();
    outcome(
        acc < ATTACK_MAX_ACCURACY && attack_time < ATTACK_TIME,
        format!(
            "{}: {ATTACK_FLIPS} flips on {ATTACK_TARGETS} targets, target accuracy {acc:.3} (< {ATTACK_MAX_ACCURACY}); attack {attack_time:.1?}, total {:.1?} (< {ATTACK_TIME:?})",
            c.name,
            start.elapsed()
        ),
    )
}

fn defense_gap(runs: &[(&str, &SeedRun)]) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, run) in runs {
        let gap = post(run, "continuous") - post(run, CLEAN);
        let drop = run.methods[CLEAN].clean_accuracy - run.methods["continuous"].clean_accuracy;
        pass &= gap >= DEFENSE_MIN_GAP && drop < DEFENSE_MAX_CLEAN_DROP;
        parts.push(format!("{name}: gap {gap:.3}, clean drop {drop:.4}"));
    }
    outcome(
        pass,
        format!(
            "{DEFENSE_FLIPS} flips, {}; need gap >= {DEFENSE_MIN_GAP} and drop < {DEFENSE_MAX_CLEAN_DROP}",
            parts.join("; ")
        ),
    )
}

fn ordered(run: &SeedRun) -> bool {
    let (gd, disc, drop, clean) = (
        post(run, "continuous"),
        post(run, "discrete"),
        post(run, "drop-edges"),
        post(run, CLEAN),
    );
    gd > disc && disc >= drop && drop > clean
}

fn majority(votes: impl Iterator<Item = bool>) -> (usize, usize) {
    votes.fold((0, 0), |(yes, all), v| (yes + usize::from(v), all + 1))
}

fn ordering(all: &[(&str, &[SeedRun])]) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, runs) in all {
        let (yes, n) = majority(runs.iter().map(ordered));
        pass &= 2 * yes > n;
        let rows: Vec<String> = runs
            .iter()
            .map(|r| {
                format!(
                    "{:.3}/{:.3}/{:.3}/{:.3}",
                    post(r, "continuous"),
                    post(r, "discrete"),
                    post(r, "drop-edges"),
                    post(r, CLEAN)
                )
            })
            .collect();
        parts.push(format!(
            "{name}: {yes}/{n} seeds ordered [{}]",
            rows.join(", ")
        ));
    }
    outcome(
        pass,
        format!(
            "defense/discrete/drop-edges/clean post-attack; {}",
            parts.join("; ")
        ),
    )
}

fn sensitivity(runs: &[SeedRun]) -> Outcome {
    let (yes, n) = majority(
        runs.iter()
            .map(|r| post(r, "continuous") > post(r, LARGE_ADV_GROUP)),
    );
    let rows: Vec<String> = runs
        .iter()
        .map(|r| {
            format!(
                "{:.3} vs {:.3}",
                post(r, "continuous"),
                post(r, LARGE_ADV_GROUP)
            )
        })
        .collect();
    outcome(
        2 * yes > n,
        format!(
            "cora adv/clean 100/200 vs 200/200: {yes}/{n} seeds better [{}]",
            rows.join(", ")
        ),
    )
}

fn degree_claim(run: &SeedRun) -> Outcome {
    let clean = &run.methods[CLEAN].degree_breakdown;
    let defended = &run.methods["continuous"].degree_breakdown;
    let low = |d: usize| d <= LOW_DEGREE;
    let high = |d: usize| d >= HIGH_DEGREE;
    let (cl, ch) = (clean.pooled(low), clean.pooled(high));
    let (Some(low_acc), Some(high_acc)) = (cl.accuracy(), ch.accuracy()) else {
        return outcome(false, "a degree bucket has no targets".into());
    };
    let ratio = pooled_ratio(defended, clean, low);
    let ratio_ok = match ratio {
        Ratio::Finite(v) => v >= LOW_DEGREE_MIN_RATIO,
        Ratio::Infinite => true,
    };
    outcome(
        low_acc < high_acc && ratio_ok,
        format!(
            "cora attacked clean model: degree <= {LOW_DEGREE} accuracy {low_acc:.3} ({} targets) vs degree >= {HIGH_DEGREE} {high_acc:.3} ({} targets); low-degree improvement ratio {:.2} (>= {LOW_DEGREE_MIN_RATIO})",
            cl.total(),
            ch.total(),
            ratio.as_f64()
        ),
    )
}

// Command-line determinism.

const CLI_CONFIG: &str = r#"{
  "dataset": {"kind": "synthetic", "spec": {"num_nodes": 150, "attachment": 2,
    "num_features": 16, "num_classes": 3, "feature_noise": 1.0, "homophily": 0.85, "seed": 9}},
  "train": {"epochs": 80, "learning_rate": 0.05},
  "sage": {"epochs": 5, "batch_size": 32, "fanout_1": 4, "fanout_2": 3},
  "defense": {"rounds": 3, "inner_steps": 5, "adv_group_size": 10, "clean_group_size": 20,
    "discrete_flips": 5},
  "attack": {"budgets": [0, 4, 8], "group_size": 10, "groups": 2, "single_node": true,
    "single_node_targets": 6},
  "sweep": {"over": "hyper", "alphas": [0.0, 1.0], "betas": [0.5], "epsilons": [0.5, 1.0]}
}"#;

const LINQS_CONTENT: &str = "p1\t1\t0\t1\tA\np2\t0\t1\t1\tB\np3\t1\t1\t0\tA\np4\t0\t0\t1\tB\n";
const LINQS_CITES: &str = "p1\tp2\np2\tp3\np3\tp4\np4\tp9\n";

fn cli_determinism() -> Outcome {
    let tmp = tempfile::TempDir::new().unwrap();
    let root = tmp.path();
    fs::write(root.join("gcn.json"), CLI_CONFIG).unwrap();
    let mut sage: serde_json::Value = serde_json::from_str(CLI_CONFIG).unwrap();
    sage["model"] = "sage".into();
    fs::write(root.join("sage.json"), sage.to_string()).unwrap();
    fs::write(root.join("toy.content"), LINQS_CONTENT).unwrap();
    fs::write(root.join("toy.cites"), LINQS_CITES).unwrap();
    fs::write(
        root.join("linqs.json"),
        r#"{"dataset": {"kind": "linqs", "content": "toy.content", "cites": "toy.cites"}}"#,
    )
    .unwrap();
    let gcn = root.join("gcn.json");
    let sage = root.join("sage.json");
    let linqs = root.join("linqs.json");
    let (gcn, sage, linqs) = (
        gcn.to_str().unwrap(),
        sage.to_str().unwrap(),
        linqs.to_str().unwrap(),
    );
    let invocations: Vec<Vec<&str>> = vec![
        vec!["synth", "--config", gcn, "--out", "synth"],
        vec!["convert", "--config", linqs, "--out", "convert"],
        vec!["train", "--config", gcn, "--out", "train"],
        vec![
            "attack",
            "--config",
            gcn,
            "--params",
            "train/params.bin",
            "--out",
            "attack",
        ],
        vec![
            "defend",
            "--config",
            gcn,
            "--params",
            "train/params.bin",
            "--out",
            "continuous",
        ],
        vec![
            "defend",
            "--config",
            gcn,
            "--generator",
            "discrete",
            "--out",
            "discrete",
        ],
        vec![
            "defend",
            "--config",
            gcn,
            "--generator",
            "features",
            "--out",
            "features",
        ],
        vec![
            "defend",
            "--config",
            gcn,
            "--generator",
            "drop-edges",
            "--out",
            "drop-edges",
        ],
        vec![
            "sweep",
            "--config",
            gcn,
            "--params",
            "train/params.bin",
            "--out",
            "sweep",
        ],
        vec!["train", "--config", sage, "--out", "sage-train"],
        vec![
            "defend",
            "--config",
            sage,
            "--generator",
            "features",
            "--out",
            "sage-defend",
        ],
        vec![
            "defend", "--config", gcn, "--seed", "5", "--out", "reseeded",
        ],
    ];
    let runs = ["run0", "run1"];
    for run in runs {
        let dir = root.join(run);
        fs::create_dir(&dir).unwrap();
        for args in &invocations {
            let status = Command::new(env!("CARGO_BIN_EXE_graphdefense"))
                .args(args)
                .current_dir(&dir)
                .output()
                .unwrap()
                .status;
            if !status.success() {
                return outcome(false, format!("`{}` exited with {status}", args.join(" ")));
            }
        }
    }
    let mut files = 0;
    let mut differing = Vec::new();
    for args in &invocations {
        let out = args.last().unwrap();
        let listing = |run: &str| -> BTreeMap<String, Vec<u8>> {
            fs::read_dir(root.join(run).join(out))
                .unwrap()
                .map(|e| e.unwrap().path())
                .map(|p| {
                    (
                        p.file_name().unwrap().to_string_lossy().into_owned(),
                        fs::read(&p).unwrap(),
                    )
                })
                .collect()
        };
        let (a, b) = (listing(runs[0]), listing(runs[1]));
        files += a.len();
        if a != b {
            differing.push(out.to_string());
        }
    }
    outcome(
        differing.is_empty(),
        format!(
            "{} invocations run twice, {files} output files compared, differing: {differing:?}",
            invocations.len()
        ),
    )
}

fn main() -> ExitCode {
    let mut failures = 0;
    let mut report = |id: u32, name: &str, o: Outcome| {
        failures += usize::from(!o.pass);
        println!(
            "{} {id:>2} {name}: {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
    };
    report(1, "gradient correctness", gradients());
    report(2, "normalization and softmax invariants", invariants());
    report(3, "feature/adjacency equivalence", equivalence());

    let cora = load_citation("cora");
    let citeseer = load_citation("citeseer");
    match &cora {
        Ok(c) => report(4, "attack efficacy", attack_efficacy(c)),
        Err(e) => report(4, "attack efficacy", outcome(false, e.clone())),
    }
    let cora_runs: Result<Vec<SeedRun>, String> = cora
        .as_ref()
        .map_err(Clone::clone)
        .and_then(|c| SEEDS.iter().map(|&s| seed_run(c, s, true)).collect());
    let citeseer_runs: Result<Vec<SeedRun>, String> = citeseer
        .as_ref()
        .map_err(Clone::clone)
        .and_then(|c| SEEDS.iter().map(|&s| seed_run(c, s, false)).collect());
    match (&cora_runs, &citeseer_runs) {
        (Ok(a), Ok(b)) => {
            report(
                5,
                "defense gap",
                defense_gap(&[("cora", &a[0]), ("citeseer", &b[0])]),
            );
            report(
                6,
                "method ordering",
                ordering(&[("cora", a.as_slice()), ("citeseer", b.as_slice())]),
            );
        }
        (a, b) => {
            let missing: Vec<String> = [a.as_ref().err(), b.as_ref().err()]
                .into_iter()
                .flatten()
                .cloned()
                .collect();
            report(5, "defense gap", outcome(false, missing.join("; ")));
            report(6, "method ordering", outcome(false, missing.join("; ")));
        }
    }
    match &cora_runs {
        Ok(runs) => {
            report(7, "adversarial group sensitivity", sensitivity(runs));
            report(8, "degree claim", degree_claim(&runs[0]));
        }
        Err(e) => {
            report(
                7,
                "adversarial group sensitivity",
                outcome(false, e.clone()),
            );
            report(8, "degree claim", outcome(false, e.clone()));
        }
    }

    report(9, "sampled aggregator exactness", sage_exactness());
    report(
        10,
        "sampled-aggregator defense direction",
        sage_defense_direction(),
    );
    report(11, "command-line determinism", cli_determinism());

    if failures == 0 {
        println!("acceptance: all criteria pass");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {failures} criteria fail");
        ExitCode::FAILURE
    }
}
