//! Plain-text graph files.
//!
//! The edge file holds one whitespace-separated `src dst` pair per line.
//! The feature file holds `node_id<TAB>f1,f2,...,fk<TAB>label` per line.
//! Blank lines and lines starting with `#` are ignored in both, except for
//! an optional `#classes<TAB>name<TAB>...` line at the top of the feature
//! file, which fixes the class order; without it classes are numbered by
//! first appearance. Nodes are numbered in feature-file order.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use graphdefense_core::{Graph, Matrix};

use crate::error::{Error, Result};
use crate::fsio::{read_to_string, write_atomic};

const CLASSES_DIRECTIVE: &str = "#classes";

/// A graph together with the external names of its nodes and classes.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub graph: Graph,
    pub node_ids: Vec<String>,
    pub class_names: Vec<String>,
}

impl Dataset {
    /// Names nodes and classes by their indices.
    pub fn from_graph(graph: Graph) -> Self {
        let node_ids = (0..graph.num_nodes()).map(|i| i.to_string()).collect();
        let class_names = (0..graph.num_classes()).map(|c| c.to_string()).collect();
        Self {
            graph,
            node_ids,
            class_names,
        }
    }
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
}

/// Reads the edge and feature files.
pub fn load_graph(edge_path: &Path, feature_path: &Path) -> Result<Dataset> {
    let features = read_to_string(feature_path)?;
    let edges = read_to_string(edge_path)?;
    parse_graph(&edges, edge_path, &features, feature_path)
}

/// Parses file contents; the paths are only used in error messages.
pub fn parse_graph(
    edges: &str,
    edge_path: &Path,
    features: &str,
    feature_path: &Path,
) -> Result<Dataset> {
    let parse_err = |path: &Path, line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };

    let mut class_names: Vec<String> = Vec::new();
    let mut class_index: HashMap<String, usize> = HashMap::new();
    if let Some(first) = features.lines().find(|l| !l.trim().is_empty()) {
        if let Some(rest) = first.trim_end_matches('\r').strip_prefix(CLASSES_DIRECTIVE) {
            for name in rest.split('\t').skip(1) {
                if class_index
                    .insert(name.to_string(), class_names.len())
                    .is_some()
                {
                    return Err(parse_err(
                        feature_path,
                        1,
                        format!("class `{name}` declared twice"),
                    ));
                }
                class_names.push(name.to_string());
            }
        }
    }

    let mut node_ids = Vec::new();
    let mut node_index: HashMap<String, usize> = HashMap::new();
    let mut values = Vec::new();
    let mut labels = Vec::new();
    let mut width: Option<usize> = None;
    for (line, text) in content_lines(features) {
        let fields: Vec<&str> = text.split('\t').collect();
        if fields.len() != 3 {
            return Err(parse_err(
                feature_path,
                line,
                format!("expected 3 tab-separated fields, found {}", fields.len()),
            ));
        }
        let (id, row, label) = (fields[0], fields[1], fields[2]);
        if id.is_empty() || id.chars().any(char::is_whitespace) {
            return Err(parse_err(
                feature_path,
                line,
                format!("invalid node id `{id}`"),
            ));
        }
        if label.is_empty() {
            return Err(parse_err(feature_path, line, "empty label".into()));
        }
        let start = values.len();
        if !row.is_empty() {
            for tok in row.split(',') {
                let v: f64 = tok.trim().parse().map_err(|_| {
                    parse_err(feature_path, line, format!("invalid feature value `{tok}`"))
                })?;
                if !v.is_finite() {
                    return Err(parse_err(
                        feature_path,
                        line,
                        format!("non-finite feature value `{tok}`"),
                    ));
                }
                values.push(v);
            }
        }
        let k = values.len() - start;
        match width {
            None => width = Some(k),
            Some(w) if w != k => {
                return Err(parse_err(
                    feature_path,
                    line,
                    format!("expected {w} feature values, found {k}"),
                ));
            }
            _ => {}
        }
        if node_index.insert(id.to_string(), node_ids.len()).is_some() {
            return Err(parse_err(
                feature_path,
                line,
                format!("duplicate node id `{id}`"),
            ));
        }
        node_ids.push(id.to_string());
        let next = class_names.len();
        let c = *class_index.entry(label.to_string()).or_insert_with(|| {
            class_names.push(label.to_string());
            next
        });
        labels.push(c);
    }
    if node_ids.is_empty() {
        return Err(Error::format(feature_path, "no nodes listed"));
    }

    let mut pairs = Vec::new();
    for (line, text) in content_lines(edges) {
        let toks: Vec<&str> = text.split_whitespace().collect();
        if toks.len() != 2 {
            return Err(parse_err(
                edge_path,
                line,
                format!("expected 2 node ids, found {}", toks.len()),
            ));
        }
        let mut ends = [0usize; 2];
        for (slot, tok) in ends.iter_mut().zip(&toks) {
            *slot = *node_index.get(*tok).ok_or_else(|| Error::Integrity {
                path: edge_path.to_path_buf(),
                message: format!("line {line}: node `{tok}` is missing from the feature file"),
            })?;
        }
        if ends[0] != ends[1] {
            pairs.push((ends[0], ends[1]));
        }
    }

    let n = node_ids.len();
    let x = Matrix::from_vec(n, width.unwrap_or(0), values)?;
    let num_classes = class_names.len();
    let graph = Graph::new(n, pairs, x, labels, num_classes)?;
    Ok(Dataset {
        graph,
        node_ids,
        class_names,
    })
}

/// Renders the edge file and the feature file.
pub fn render_graph(data: &Dataset) -> Result<(String, String)> {
    let g = &data.graph;
    if data.node_ids.len() != g.num_nodes() || data.class_names.len() != g.num_classes() {
        return Err(Error::Config(
            "node or class names do not match the graph".into(),
        ));
    }
    if let Some(bad) = data
        .node_ids
        .iter()
        .find(|id| id.is_empty() || id.starts_with('#') || id.contains(char::is_whitespace))
    {
        return Err(Error::Config(format!("node id `{bad}` cannot be written")));
    }
    if let Some(bad) = data
        .class_names
        .iter()
        .find(|c| c.is_empty() || c.contains(['\t', '\n', '\r']))
    {
        return Err(Error::Config(format!(
            "class name `{bad}` cannot be written"
        )));
    }
    let mut edges = String::new();
    for (u, v) in g.edges() {
        let _ = writeln!(edges, "{} {}", data.node_ids[u], data.node_ids[v]);
    }
    let mut features = String::from(CLASSES_DIRECTIVE);
    for c in &data.class_names {
        features.push('\t');
        features.push_str(c);
    }
    features.push('\n');
    let x = g.features();
    for (i, id) in data.node_ids.iter().enumerate() {
        features.push_str(id);
        features.push('\t');
        for (j, v) in x.row(i).iter().enumerate() {
            if j > 0 {
                features.push(',');
            }
            let _ = write!(features, "{v}");
        }
        features.push('\t');
        features.push_str(&data.class_names[g.labels()[i]]);
        features.push('\n');
    }
    Ok((edges, features))
}

pub fn save_graph(data: &Dataset, edge_path: &Path, feature_path: &Path) -> Result<()> {
    let (edges, features) = render_graph(data)?;
    write_atomic(edge_path, edges.as_bytes())?;
    write_atomic(feature_path, features.as_bytes())
}

/// Edges of a LINQS citation file that were skipped on import.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LinqsImport {
    /// Citations naming a paper absent from the content file.
    pub dangling: usize,
    pub self_citations: usize,
}

/// Reads a LINQS distribution (`<name>.content` and `<name>.cites`).
///
/// Content lines are `paper_id w1 ... wk label`; citation lines are
/// `cited citing`. Citations to papers missing from the content file are
/// skipped and counted.
pub fn load_linqs(content_path: &Path, cites_path: &Path) -> Result<(Dataset, LinqsImport)> {
    let content = read_to_string(content_path)?;
    let cites = read_to_string(cites_path)?;
    parse_linqs(&content, content_path, &cites, cites_path)
}

pub fn parse_linqs(
    content: &str,
    content_path: &Path,
    cites: &str,
    cites_path: &Path,
) -> Result<(Dataset, LinqsImport)> {
    let err = |path: &Path, line: usize, message: String| Error::Parse {
        path: PathBuf::from(path),
        line,
        message,
    };
    let mut node_ids = Vec::new();
    let mut node_index = HashMap::new();
    let mut class_names: Vec<String> = Vec::new();
    let mut class_index: HashMap<String, usize> = HashMap::new();
    let mut values = Vec::new();
    let mut labels = Vec::new();
    let mut width = None;
    for (line, text) in content_lines(content) {
        let toks: Vec<&str> = text.split_whitespace().collect();
        if toks.len() < 2 {
            return Err(err(
                content_path,
                line,
                "expected a paper id and a label".into(),
            ));
        }
        let k = toks.len() - 2;
        if *width.get_or_insert(k) != k {
            return Err(err(
                content_path,
                line,
                format!("expected {} word columns, found {k}", width.unwrap()),
            ));
        }
        for tok in &toks[1..toks.len() - 1] {
            let v: f64 = tok
                .parse()
                .map_err(|_| err(content_path, line, format!("invalid word value `{tok}`")))?;
            values.push(v);
        }
        let id = toks[0];
        if node_index.insert(id.to_string(), node_ids.len()).is_some() {
            return Err(err(
                content_path,
                line,
                format!("duplicate paper id `{id}`"),
            ));
        }
        node_ids.push(id.to_string());
        let label = toks[toks.len() - 1];
        let next = class_names.len();
        labels.push(*class_index.entry(label.to_string()).or_insert_with(|| {
            class_names.push(label.to_string());
            next
        }));
    }
    if node_ids.is_empty() {
        return Err(Error::format(content_path, "no papers listed"));
    }
    let mut stats = LinqsImport::default();
    let mut pairs = Vec::new();
    for (line, text) in content_lines(cites) {
        let toks: Vec<&str> = text.split_whitespace().collect();
        if toks.len() != 2 {
            return Err(err(
                cites_path,
                line,
                format!("expected 2 paper ids, found {}", toks.len()),
            ));
        }
        match (node_index.get(toks[0]), node_index.get(toks[1])) {
            (Some(&u), Some(&v)) if u == v => stats.self_citations += 1,
            (Some(&u), Some(&v)) => pairs.push((u, v)),
            _ => stats.dangling += 1,
        }
    }
    let n = node_ids.len();
    let x = Matrix::from_vec(n, width.unwrap_or(0), values)?;
    let graph = Graph::new(n, pairs, x, labels, class_names.len())?;
    Ok((
        Dataset {
            graph,
            node_ids,
            class_names,
        },
        stats,
    ))
}
