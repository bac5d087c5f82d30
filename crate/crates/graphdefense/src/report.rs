//! Experiment reports: `report.json`, `curves.csv` and `degrees.csv`.

use std::collections::BTreeMap;
use std::path::Path;

use graphdefense_core::eval::{bucket_label, CurvePoint, DegreeBreakdown, Ratio};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsio::{ensure_dir, read_to_string, write_atomic};

/// Evaluation of one model under the configured attack.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodResult {
    /// Test-set accuracy on the clean graph.
    pub clean_accuracy: f64,
    /// Target accuracy at the largest budget.
    pub post_attack_accuracy: f64,
    pub degradation_curve: Vec<CurvePoint>,
    /// Targets at the largest budget by clean-graph degree.
    pub degree_breakdown: DegreeBreakdown,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub single_node_accuracy: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub scenario: String,
    /// Name of the method the top-level figures describe.
    pub method: String,
    pub clean_accuracy: f64,
    pub post_attack_accuracy: f64,
    pub degradation_curve: Vec<CurvePoint>,
    pub degree_breakdown: DegreeBreakdown,
    /// Per-bucket improvement of `method` over the `clean` method; empty
    /// when there is nothing to compare against.
    pub improvement_ratio_by_degree: BTreeMap<usize, Ratio>,
    pub methods: BTreeMap<String, MethodResult>,
    /// Class names in index order.
    pub class_names: Vec<String>,
    pub config: serde_json::Value,
}

impl ExperimentReport {
    /// Builds a report whose headline figures come from `methods[method]`.
    pub fn new(
        scenario: impl Into<String>,
        method: &str,
        methods: BTreeMap<String, MethodResult>,
        improvement_ratio_by_degree: BTreeMap<usize, Ratio>,
        class_names: Vec<String>,
        config: serde_json::Value,
    ) -> Result<Self> {
        let head = methods
            .get(method)
            .ok_or_else(|| Error::Config(format!("no results for method `{method}`")))?;
        Ok(Self {
            scenario: scenario.into(),
            method: method.to_string(),
            clean_accuracy: head.clean_accuracy,
            post_attack_accuracy: head.post_attack_accuracy,
            degradation_curve: head.degradation_curve.clone(),
            degree_breakdown: head.degree_breakdown.clone(),
            improvement_ratio_by_degree,
            methods: methods.clone(),
            class_names,
            config,
        })
    }
}

pub fn render_json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(value).expect("report values serialize");
    out.push(b'\n');
    out
}

/// `budget,method,accuracy`, methods alphabetical then budgets ascending.
pub fn render_curves(report: &ExperimentReport) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["budget", "method", "accuracy"])
        .expect("in-memory write");
    for (name, m) in &report.methods {
        let mut points = m.degradation_curve.clone();
        points.sort_by_key(|p| p.budget);
        for p in points {
            w.write_record([p.budget.to_string(), name.clone(), p.accuracy.to_string()])
                .expect("in-memory write");
        }
    }
    w.into_inner().expect("in-memory write")
}

/// `degree,correct,incorrect,method`, methods alphabetical then degree
/// buckets ascending.
pub fn render_degrees(report: &ExperimentReport) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["degree", "correct", "incorrect", "method"])
        .expect("in-memory write");
    for (name, m) in &report.methods {
        for (bucket, c) in &m.degree_breakdown.buckets {
            w.write_record([
                bucket_label(*bucket),
                c.correct.to_string(),
                c.incorrect.to_string(),
                name.clone(),
            ])
            .expect("in-memory write");
        }
    }
    w.into_inner().expect("in-memory write")
}

pub fn emit_report(report: &ExperimentReport, out_dir: &Path) -> Result<()> {
    ensure_dir(out_dir)?;
    write_atomic(&out_dir.join("report.json"), &render_json(report))?;
    write_atomic(&out_dir.join("curves.csv"), &render_curves(report))?;
    write_atomic(&out_dir.join("degrees.csv"), &render_degrees(report))
}

pub fn read_report(path: &Path) -> Result<ExperimentReport> {
    serde_json::from_str(&read_to_string(path)?).map_err(|e| Error::format(path, e.to_string()))
}
