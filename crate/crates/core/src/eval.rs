//! Accuracy, degree-stratified breakdowns, improvement ratios and attack
//! degradation curves.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use rand::seq::index::sample;

use crate::attack::{
    greedy_edge_attack_with, replay_changes, single_node_attack_with, AttackBudget, EdgeChange,
    EditMode,
};
use crate::error::{config, Error, Result};
use crate::graph::{Graph, Normalization};
use crate::model::{predict_features, GcnParams};
use crate::rng::stream_rng;

/// Degrees at or above this share one bucket.
pub const DEGREE_CAP: usize = 10;

pub fn accuracy(predictions: &[usize], labels: &[usize], nodes: &[usize]) -> Result<f64> {
    if nodes.is_empty() {
        return Err(Error::EmptyNodeSet("accuracy"));
    }
    let n = predictions.len().min(labels.len());
    let mut correct = 0usize;
    for &v in nodes {
        if v >= n {
            return Err(Error::NodeOutOfRange {
                node: v,
                num_nodes: n,
            });
        }
        correct += usize::from(predictions[v] == labels[v]);
    }
    Ok(correct as f64 / nodes.len() as f64)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Counts {
    pub correct: usize,
    pub incorrect: usize,
}

impl Counts {
    pub fn total(&self) -> usize {
        self.correct + self.incorrect
    }

    /// `None` for an empty bucket.
    pub fn accuracy(&self) -> Option<f64> {
        (self.total() > 0).then(|| self.correct as f64 / self.total() as f64)
    }
}

/// Correct and incorrect counts keyed by degree bucket; the key
/// [`DEGREE_CAP`] collects every higher degree.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DegreeBreakdown {
    pub buckets: BTreeMap<usize, Counts>,
}

impl DegreeBreakdown {
    pub fn total(&self) -> usize {
        self.buckets.values().map(Counts::total).sum()
    }

    /// Pooled counts over the buckets whose key satisfies `keep`.
    pub fn pooled(&self, keep: impl Fn(usize) -> bool) -> Counts {
        self.buckets
            .iter()
            .filter(|(d, _)| keep(**d))
            .fold(Counts::default(), |acc, (_, c)| Counts {
                correct: acc.correct + c.correct,
                incorrect: acc.incorrect + c.incorrect,
            })
    }

    pub fn merge(&mut self, other: &DegreeBreakdown) {
        for (d, c) in &other.buckets {
            let e = self.buckets.entry(*d).or_default();
            e.correct += c.correct;
            e.incorrect += c.incorrect;
        }
    }
}

pub fn degree_bucket(degree: usize) -> usize {
    degree.min(DEGREE_CAP)
}

/// Display label of a bucket key: the degree, or `10+` for the cap.
pub fn bucket_label(bucket: usize) -> alloc::string::String {
    use alloc::string::ToString;
    if bucket >= DEGREE_CAP {
        alloc::format!("{DEGREE_CAP}+")
    } else {
        bucket.to_string()
    }
}

/// Buckets `nodes` by their degree in `g`.
pub fn degree_stratified(
    g: &Graph,
    predictions: &[usize],
    labels: &[usize],
    nodes: &[usize],
) -> Result<DegreeBreakdown> {
    let degrees = g.degrees();
    let mut out = DegreeBreakdown::default();
    for &v in nodes {
        if v >= degrees.len() || v >= predictions.len() || v >= labels.len() {
            return Err(Error::NodeOutOfRange {
                node: v,
                num_nodes: degrees.len(),
            });
        }
        let e = out.buckets.entry(degree_bucket(degrees[v])).or_default();
        if predictions[v] == labels[v] {
            e.correct += 1;
        } else {
            e.incorrect += 1;
        }
    }
    Ok(out)
}

/// An accuracy ratio that may be unbounded.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Ratio {
    Finite(f64),
    /// Defended nodes were correct where the baseline had none.
    Infinite,
}

impl Ratio {
    pub fn as_f64(self) -> f64 {
        match self {
            Ratio::Finite(v) => v,
            Ratio::Infinite => f64::INFINITY,
        }
    }
}

#[cfg(feature = "serde")]
impl serde::Serialize for Ratio {
    fn serialize<S: serde::Serializer>(&self, s: S) -> core::result::Result<S::Ok, S::Error> {
        match self {
            Ratio::Finite(v) => s.serialize_f64(*v),
            Ratio::Infinite => s.serialize_str("inf"),
        }
    }
}

#[cfg(feature = "serde")]
impl<'de> serde::Deserialize<'de> for Ratio {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> core::result::Result<Self, D::Error> {
        struct V;
        impl serde::de::Visitor<'_> for V {
            type Value = Ratio;
            fn expecting(&self, f: &mut core::fmt::Formatter) -> core::fmt::Result {
                f.write_str("a number or \"inf\"")
            }
            fn visit_f64<E: serde::de::Error>(self, v: f64) -> core::result::Result<Ratio, E> {
                Ok(Ratio::Finite(v))
            }
            fn visit_u64<E: serde::de::Error>(self, v: u64) -> core::result::Result<Ratio, E> {
                Ok(Ratio::Finite(v as f64))
            }
            fn visit_i64<E: serde::de::Error>(self, v: i64) -> core::result::Result<Ratio, E> {
                Ok(Ratio::Finite(v as f64))
            }
            fn visit_str<E: serde::de::Error>(self, v: &str) -> core::result::Result<Ratio, E> {
                if v == "inf" {
                    Ok(Ratio::Infinite)
                } else {
                    Err(E::invalid_value(serde::de::Unexpected::Str(v), &self))
                }
            }
        }
        d.deserialize_any(V)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum ImprovementMode {
    /// Defended accuracy divided by baseline accuracy.
    #[default]
    Ratio,
    /// Defended accuracy minus baseline accuracy.
    Difference,
}

fn side_accuracy(b: &DegreeBreakdown, d: usize) -> (usize, f64) {
    let c = b.buckets.get(&d).copied().unwrap_or_default();
    (c.correct, c.accuracy().unwrap_or(0.0))
}

/// Per-bucket improvement of `defended` over `baseline` across the union of
/// their buckets. In ratio mode a bucket where neither side has a correct
/// node reports 1, and one where only the defended side does reports
/// [`Ratio::Infinite`].
pub fn improvement_ratio(
    defended: &DegreeBreakdown,
    baseline: &DegreeBreakdown,
    mode: ImprovementMode,
) -> BTreeMap<usize, Ratio> {
    let keys: alloc::collections::BTreeSet<usize> = defended
        .buckets
        .keys()
        .chain(baseline.buckets.keys())
        .copied()
        .collect();
    keys.into_iter()
        .map(|d| {
            let (dc, da) = side_accuracy(defended, d);
            let (bc, ba) = side_accuracy(baseline, d);
            let r = match mode {
                ImprovementMode::Difference => Ratio::Finite(da - ba),
                ImprovementMode::Ratio if bc == 0 => {
                    if dc == 0 {
                        Ratio::Finite(1.0)
                    } else {
                        Ratio::Infinite
                    }
                }
                ImprovementMode::Ratio => Ratio::Finite(da / ba),
            };
            (d, r)
        })
        .collect()
}

/// Ratio of pooled accuracies over the buckets selected by `keep`, with the
/// same zero conventions as [`improvement_ratio`].
pub fn pooled_ratio(
    defended: &DegreeBreakdown,
    baseline: &DegreeBreakdown,
    keep: impl Fn(usize) -> bool + Copy,
) -> Ratio {
    let d = defended.pooled(keep);
    let b = baseline.pooled(keep);
    match (d.correct, b.correct) {
        (0, 0) => Ratio::Finite(1.0),
        (_, 0) => Ratio::Infinite,
        _ => Ratio::Finite(d.accuracy().unwrap() / b.accuracy().unwrap()),
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CurvePoint {
    pub budget: usize,
    pub accuracy: f64,
}

/// Target groups drawn from `pool` under `seed`, each sorted.
pub fn sample_target_groups(
    pool: &[usize],
    group_size: usize,
    groups: usize,
    seed: u64,
) -> Result<Vec<Vec<usize>>> {
    if group_size == 0 || group_size > pool.len() {
        return Err(config(
            "target group size must be between 1 and the pool size",
        ));
    }
    Ok((0..groups)
        .map(|k| {
            let mut rng = stream_rng(seed, 0x7a6 + k as u64);
            let mut t: Vec<usize> = sample(&mut rng, pool.len(), group_size)
                .into_iter()
                .map(|i| pool[i])
                .collect();
            t.sort_unstable();
            t
        })
        .collect())
}

#[derive(Clone, Debug)]
pub struct GroupAttackEval {
    /// Pooled target accuracy per budget, budget 0 first.
    pub curve: Vec<CurvePoint>,
    /// Targets at the largest budget, bucketed by clean-graph degree.
    pub breakdown: DegreeBreakdown,
    /// Change log of the largest-budget attack on each group.
    pub change_logs: Vec<Vec<EdgeChange>>,
}

fn check_budgets(budgets: &[usize]) -> Result<()> {
    if budgets.first() != Some(&0) {
        return Err(config("budget list must start at 0"));
    }
    if budgets.windows(2).any(|w| w[0] >= w[1]) {
        return Err(config("budgets must be strictly increasing"));
    }
    Ok(())
}

/// Attacks each group once at the largest budget and scores every budget
/// by replaying a prefix of the change log; the greedy attack is prefix
/// consistent, so this equals separate runs per budget.
pub fn evaluate_group_attack(
    g: &Graph,
    params: &GcnParams,
    groups: &[Vec<usize>],
    budgets: &[usize],
    mode: EditMode,
    norm: Normalization,
) -> Result<GroupAttackEval> {
    check_budgets(budgets)?;
    if groups.is_empty() {
        return Err(Error::EmptyNodeSet("target groups"));
    }
    let labels = g.labels();
    let max_budget = *budgets.last().unwrap();
    let mut correct = alloc::vec![0usize; budgets.len()];
    let mut total = 0usize;
    let mut breakdown = DegreeBreakdown::default();
    let mut change_logs = Vec::with_capacity(groups.len());
    let clean_pred = predict_features(params, g.features(), &norm.apply(g))?;
    for targets in groups {
        total += targets.len();
        let changes = if max_budget > 0 {
            greedy_edge_attack_with(
                g,
                params,
                &AttackBudget::new(max_budget, targets.clone(), mode),
                norm,
            )?
            .changes
        } else {
            Vec::new()
        };
        let mut last = clean_pred.clone();
        for (k, &b) in budgets.iter().enumerate() {
            let pred = if b == 0 {
                clean_pred.clone()
            } else {
                let graph = replay_changes(g, &changes[..b.min(changes.len())])?;
                predict_features(params, g.features(), &norm.apply(&graph))?
            };
            correct[k] += targets.iter().filter(|&&t| pred[t] == labels[t]).count();
            last = pred;
        }
        breakdown.merge(&degree_stratified(g, &last, labels, targets)?);
        change_logs.push(changes);
    }
    let curve = budgets
        .iter()
        .zip(&correct)
        .map(|(&budget, &c)| CurvePoint {
            budget,
            accuracy: c as f64 / total as f64,
        })
        .collect();
    Ok(GroupAttackEval {
        curve,
        breakdown,
        change_logs,
    })
}

/// Degradation curve alone.
pub fn degradation_curve(
    g: &Graph,
    params: &GcnParams,
    groups: &[Vec<usize>],
    budgets: &[usize],
    mode: EditMode,
    norm: Normalization,
) -> Result<Vec<CurvePoint>> {
    Ok(evaluate_group_attack(g, params, groups, budgets, mode, norm)?.curve)
}

/// Pooled post-attack accuracy of one-flip attacks, one per target.
pub fn single_node_accuracy(
    g: &Graph,
    params: &GcnParams,
    targets: &[usize],
    mode: EditMode,
    norm: Normalization,
) -> Result<f64> {
    if targets.is_empty() {
        return Err(Error::EmptyNodeSet("single-node targets"));
    }
    let labels = g.labels();
    let mut correct = 0usize;
    for &t in targets {
        let out = single_node_attack_with(g, params, t, mode, norm)?;
        let pred = predict_features(params, g.features(), &norm.apply(&out.graph))?;
        correct += usize::from(pred[t] == labels[t]);
    }
    Ok(correct as f64 / targets.len() as f64)
}
