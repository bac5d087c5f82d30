//! The experiment commands behind the command-line driver. Each one is a
//! pure function of its config and input files and writes into `out`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use graphdefense_core::attack::{single_node_attack_with, EdgeChange};
use graphdefense_core::defense::{
    defense_framework, drop_edges_baseline, DefenseConfig, RoundRecord,
};
use graphdefense_core::eval::{
    accuracy, degree_stratified, evaluate_group_attack, improvement_ratio, sample_target_groups,
    CurvePoint,
};
use graphdefense_core::graph::split;
use graphdefense_core::model::{predict_features, train};
use graphdefense_core::sage::{sage_defend, sage_train, SageConfig};
use graphdefense_core::{DataSplit, GcnParams, Graph, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::changelog::{render_change_log, write_change_log};
use crate::config::{DatasetSource, ExperimentConfig, GeneratorKind, ModelKind};
use crate::error::{Error, Result};
use crate::fsio::{ensure_dir, write_atomic};
use crate::io::{load_linqs, save_graph, Dataset};
use crate::params::{load_params, save_params};
use crate::report::{emit_report, render_json, ExperimentReport, MethodResult};

pub const CLEAN_METHOD: &str = "clean";
const SINGLE_NODE_STREAM: u64 = 0x51e;

/// Writes the effective config next to the outputs.
pub fn echo_config(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    ensure_dir(out)?;
    write_atomic(&out.join("config.json"), &render_json(&cfg.effective()))
}

struct Prepared {
    data: Dataset,
    split: DataSplit,
}

fn prepare(cfg: &ExperimentConfig) -> Result<Prepared> {
    cfg.validate()?;
    let data = cfg.dataset.load()?;
    let split = split(
        &data.graph,
        (cfg.split.train_fraction, cfg.split.validation_fraction),
        cfg.split.seed,
    )?;
    Ok(Prepared { data, split })
}

fn train_model(cfg: &ExperimentConfig, g: &Graph, split: &DataSplit) -> Result<GcnParams> {
    Ok(match cfg.model {
        ModelKind::Gcn => train(g, split, &cfg.train)?,
        ModelKind::Sage => sage_train(g, split, &cfg.sage)?,
    })
}

fn load_matching_params(path: &Path, g: &Graph) -> Result<GcnParams> {
    let p = load_params(path)?;
    if p.num_features() != g.num_features() || p.num_classes() != g.num_classes() {
        return Err(Error::format(
            path,
            format!(
                "parameters expect {} features and {} classes, the graph has {} and {}",
                p.num_features(),
                p.num_classes(),
                g.num_features(),
                g.num_classes()
            ),
        ));
    }
    Ok(p)
}

pub fn clean_test_accuracy(
    cfg: &ExperimentConfig,
    g: &Graph,
    split: &DataSplit,
    params: &GcnParams,
) -> Result<f64> {
    let pred = predict_features(params, g.features(), &cfg.model.normalization().apply(g))?;
    Ok(accuracy(&pred, g.labels(), &split.test)?)
}

/// A model's evaluation plus the change logs behind it.
pub struct Evaluation {
    pub result: MethodResult,
    pub group_changes: Vec<Vec<EdgeChange>>,
    pub single_node_changes: Vec<EdgeChange>,
}

/// Attack groups of the configured size, drawn from the test set.
pub fn target_groups(cfg: &ExperimentConfig, split: &DataSplit) -> Result<Vec<Vec<usize>>> {
    Ok(sample_target_groups(
        &split.test,
        cfg.attack.group_size,
        cfg.attack.groups,
        cfg.attack.seed,
    )?)
}

/// Runs the configured group attack, and the single-node attack when
/// enabled, against `params`.
pub fn evaluate(
    cfg: &ExperimentConfig,
    g: &Graph,
    split: &DataSplit,
    params: &GcnParams,
) -> Result<Evaluation> {
    let norm = cfg.model.normalization();
    let a = &cfg.attack;
    let groups = target_groups(cfg, split)?;
    let eval = evaluate_group_attack(g, params, &groups, &a.budgets, a.mode, norm)?;
    let mut single_node_changes = Vec::new();
    let single_node_accuracy = if a.single_node {
        let count = a.single_node_targets.min(split.test.len());
        let targets =
            sample_target_groups(&split.test, count, 1, a.seed ^ SINGLE_NODE_STREAM)?.remove(0);
        let mut correct = 0usize;
        for &t in &targets {
            let out = single_node_attack_with(g, params, t, a.mode, norm)?;
            let pred = predict_features(params, g.features(), &norm.apply(&out.graph))?;
            correct += usize::from(pred[t] == g.labels()[t]);
            single_node_changes.extend(out.changes);
        }
        Some(correct as f64 / targets.len() as f64)
    } else {
        None
    };
    let post_attack_accuracy = eval.curve.last().map_or(0.0, |p| p.accuracy);
    Ok(Evaluation {
        result: MethodResult {
            clean_accuracy: clean_test_accuracy(cfg, g, split, params)?,
            post_attack_accuracy,
            degradation_curve: eval.curve,
            degree_breakdown: eval.breakdown,
            single_node_accuracy,
        },
        group_changes: eval.change_logs,
        single_node_changes,
    })
}

fn write_change_logs(eval: &Evaluation, prefix: &str, out: &Path) -> Result<()> {
    for (k, changes) in eval.group_changes.iter().enumerate() {
        write_change_log(changes, &out.join(format!("{prefix}changes_group{k}.csv")))?;
    }
    if !eval.single_node_changes.is_empty() || eval.result.single_node_accuracy.is_some() {
        write_atomic(
            &out.join(format!("{prefix}changes_single_node.csv")),
            &render_change_log(&eval.single_node_changes),
        )?;
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub clean_accuracy: f64,
    pub params_path: PathBuf,
}

/// Trains a clean model; writes `params.bin` and a clean-accuracy report.
pub fn cmd_train(cfg: &ExperimentConfig, out: &Path) -> Result<TrainSummary> {
    let Prepared { data, split } = prepare(cfg)?;
    echo_config(cfg, out)?;
    let g = &data.graph;
    let params = train_model(cfg, g, &split)?;
    let params_path = out.join("params.bin");
    save_params(&params, &params_path)?;
    let pred = predict_features(&params, g.features(), &cfg.model.normalization().apply(g))?;
    let clean_accuracy = accuracy(&pred, g.labels(), &split.test)?;
    let result = MethodResult {
        clean_accuracy,
        post_attack_accuracy: clean_accuracy,
        degradation_curve: vec![CurvePoint {
            budget: 0,
            accuracy: clean_accuracy,
        }],
        degree_breakdown: degree_stratified(g, &pred, g.labels(), &split.test)?,
        single_node_accuracy: None,
    };
    let methods = BTreeMap::from([(CLEAN_METHOD.to_string(), result)]);
    let report = ExperimentReport::new(
        "train",
        CLEAN_METHOD,
        methods,
        BTreeMap::new(),
        data.class_names,
        cfg.effective(),
    )?;
    emit_report(&report, out)?;
    Ok(TrainSummary {
        clean_accuracy,
        params_path,
    })
}

/// Attacks a saved model; writes the report and one change log per group.
pub fn cmd_attack(
    cfg: &ExperimentConfig,
    params_path: &Path,
    out: &Path,
) -> Result<ExperimentReport> {
    let Prepared { data, split } = prepare(cfg)?;
    let params = load_matching_params(params_path, &data.graph)?;
    echo_config(cfg, out)?;
    let eval = evaluate(cfg, &data.graph, &split, &params)?;
    write_change_logs(&eval, "", out)?;
    let methods = BTreeMap::from([(CLEAN_METHOD.to_string(), eval.result)]);
    let report = ExperimentReport::new(
        "attack",
        CLEAN_METHOD,
        methods,
        BTreeMap::new(),
        data.class_names,
        cfg.effective(),
    )?;
    emit_report(&report, out)?;
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DefenseSeeds {
    pub split: u64,
    pub train: u64,
    pub defense: u64,
    pub attack: u64,
}

/// Everything needed to replay a defense run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DefenseManifest {
    pub generator: GeneratorKind,
    pub model: ModelKind,
    pub dataset: DatasetSource,
    pub defense: DefenseConfig,
    pub train: TrainConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sage: Option<SageConfig>,
    pub seeds: DefenseSeeds,
    /// Starting parameters when they were supplied rather than trained.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_params: Option<PathBuf>,
    pub pseudo_labels: Vec<usize>,
    pub rounds: Vec<RoundRecord>,
    pub finetune_losses: Vec<f64>,
}

/// Result of one defense run.
pub struct Defended {
    pub params: GcnParams,
    pub manifest: DefenseManifest,
}

/// Runs the configured defense starting from `initial`.
pub fn run_defense(
    cfg: &ExperimentConfig,
    defense: &DefenseConfig,
    g: &Graph,
    split: &DataSplit,
    initial: &GcnParams,
) -> Result<Defended> {
    let (params, pseudo_labels, rounds, finetune_losses) =
        match (cfg.generator.generator(), cfg.model) {
            (None, model) => {
                let dropped = drop_edges_baseline(g, defense.drop_fraction, defense.seed)?;
                let p = match model {
                    ModelKind::Gcn => train(&dropped, split, &cfg.train)?,
                    ModelKind::Sage => sage_train(&dropped, split, &cfg.sage)?,
                };
                (p, Vec::new(), Vec::new(), Vec::new())
            }
            (Some(gen), ModelKind::Gcn) => {
                let o = defense_framework(g, split, defense, &cfg.train, gen, Some(initial))?;
                (o.params, o.pseudo_labels, o.rounds, o.finetune_losses)
            }
            (Some(gen), ModelKind::Sage) => {
                let o = sage_defend(g, split, &cfg.sage, defense, gen, Some(initial))?;
                (o.params, o.pseudo_labels, o.rounds, o.finetune_losses)
            }
        };
    let manifest = DefenseManifest {
        generator: cfg.generator,
        model: cfg.model,
        dataset: cfg.dataset.clone(),
        defense: defense.clone(),
        train: cfg.train.clone(),
        sage: (cfg.model == ModelKind::Sage).then(|| cfg.sage.clone()),
        seeds: DefenseSeeds {
            split: cfg.split.seed,
            train: match cfg.model {
                ModelKind::Gcn => cfg.train.seed,
                ModelKind::Sage => cfg.sage.seed,
            },
            defense: defense.seed,
            attack: cfg.attack.seed,
        },
        initial_params: None,
        pseudo_labels,
        rounds,
        finetune_losses,
    };
    Ok(Defended { params, manifest })
}

/// Defends a model (trained here unless `initial` is given), then attacks
/// both the starting and the defended model. Writes `params.bin`,
/// `manifest.json`, the report and the change logs.
pub fn cmd_defend(
    cfg: &ExperimentConfig,
    initial: Option<&Path>,
    out: &Path,
) -> Result<ExperimentReport> {
    let Prepared { data, split } = prepare(cfg)?;
    let g = &data.graph;
    let base = match initial {
        Some(p) => load_matching_params(p, g)?,
        None => train_model(cfg, g, &split)?,
    };
    echo_config(cfg, out)?;
    let mut defended = run_defense(cfg, &cfg.defense, g, &split, &base)?;
    defended.manifest.initial_params = initial.map(Path::to_path_buf);
    save_params(&defended.params, &out.join("params.bin"))?;
    write_atomic(&out.join("manifest.json"), &render_json(&defended.manifest))?;

    let name = cfg.generator.name();
    let clean = evaluate(cfg, g, &split, &base)?;
    let ours = evaluate(cfg, g, &split, &defended.params)?;
    write_change_logs(&clean, "clean_", out)?;
    write_change_logs(&ours, &format!("{name}_"), out)?;
    let ratios = improvement_ratio(
        &ours.result.degree_breakdown,
        &clean.result.degree_breakdown,
        cfg.attack.improvement,
    );
    let methods = BTreeMap::from([
        (CLEAN_METHOD.to_string(), clean.result),
        (name.to_string(), ours.result),
    ]);
    let report = ExperimentReport::new(
        "defend",
        name,
        methods,
        ratios,
        data.class_names,
        cfg.effective(),
    )?;
    emit_report(&report, out)?;
    Ok(report)
}

/// One row of the sweep table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub adv_group_size: usize,
    pub clean_group_size: usize,
    pub alpha: f64,
    pub beta: f64,
    pub epsilon: f64,
    pub clean_accuracy: f64,
    pub post_attack_accuracy: f64,
}

pub fn render_sweep(rows: &[SweepRow]) -> Vec<u8> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(Vec::new());
    w.write_record([
        "adv_group_size",
        "clean_group_size",
        "alpha",
        "beta",
        "epsilon",
        "clean_accuracy",
        "post_attack_accuracy",
    ])
    .expect("in-memory write");
    for r in rows {
        w.serialize(r).expect("in-memory write");
    }
    w.into_inner().expect("in-memory write")
}

/// Defends once per grid point from one shared starting model and records
/// post-attack accuracy at the largest budget in `sweep.csv`.
pub fn cmd_sweep(
    cfg: &ExperimentConfig,
    initial: Option<&Path>,
    out: &Path,
) -> Result<Vec<SweepRow>> {
    let Prepared { data, split } = prepare(cfg)?;
    let points = cfg.sweep.points(&cfg.defense);
    for p in &points {
        p.validate()?;
    }
    echo_config(cfg, out)?;
    let g = &data.graph;
    let mut rows = Vec::with_capacity(points.len());
    if !points.is_empty() {
        let base = match initial {
            Some(p) => load_matching_params(p, g)?,
            None => train_model(cfg, g, &split)?,
        };
        let groups = target_groups(cfg, &split)?;
        let norm = cfg.model.normalization();
        for point in &points {
            let d = run_defense(cfg, point, g, &split, &base)?;
            let eval = evaluate_group_attack(
                g,
                &d.params,
                &groups,
                &cfg.attack.budgets,
                cfg.attack.mode,
                norm,
            )?;
            rows.push(SweepRow {
                adv_group_size: point.adv_group_size,
                clean_group_size: point.clean_group_size,
                alpha: point.alpha,
                beta: point.beta,
                epsilon: point.epsilon,
                clean_accuracy: clean_test_accuracy(cfg, g, &split, &d.params)?,
                post_attack_accuracy: eval.curve.last().map_or(0.0, |c| c.accuracy),
            });
        }
    }
    write_atomic(&out.join("sweep.csv"), &render_sweep(&rows))?;
    Ok(rows)
}

/// Writes a synthetic dataset as `edges.txt` and `features.tsv`.
pub fn cmd_synth(cfg: &ExperimentConfig, out: &Path) -> Result<Dataset> {
    let DatasetSource::Synthetic { .. } = &cfg.dataset else {
        return Err(Error::Config(
            "synth needs a synthetic dataset source".into(),
        ));
    };
    cfg.validate()?;
    let data = cfg.dataset.load()?;
    echo_config(cfg, out)?;
    save_graph(&data, &out.join("edges.txt"), &out.join("features.tsv"))?;
    Ok(data)
}

/// Converts a LINQS distribution into `edges.txt` and `features.tsv`.
pub fn cmd_convert(cfg: &ExperimentConfig, out: &Path) -> Result<Dataset> {
    let DatasetSource::Linqs { content, cites } = &cfg.dataset else {
        return Err(Error::Config("convert needs a linqs dataset source".into()));
    };
    let (data, _) = load_linqs(content, cites)?;
    echo_config(cfg, out)?;
    save_graph(&data, &out.join("edges.txt"), &out.join("features.tsv"))?;
    Ok(data)
}
