//! Graph file formats.
//!
//! * Edge list: UTF-8, one `i j` pair per line, `#` starts a comment. A
//!   `# classes: C` comment fixes the class count (otherwise max label + 1).
//!   Companion files `<stem>.labels` (one integer per line, required) and
//!   `<stem>.features` (CSV, one row per node, optional; all-ones with ten
//!   columns when absent).
//! * JSON bundle: `{"n", "edges": [[i,j],..], "labels", "features", "classes"}`.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{Edge, RelationalGraph};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GraphFormat {
    EdgeList,
    JsonBundle,
}

impl GraphFormat {
    /// `.json` means a bundle, anything else an edge list.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("json") => GraphFormat::JsonBundle,
            _ => GraphFormat::EdgeList,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct GraphBundle {
    n: usize,
    edges: Vec<[usize; 2]>,
    labels: Vec<usize>,
    features: Vec<Vec<f64>>,
    classes: usize,
}

pub fn load_graph(path: &Path, format: GraphFormat) -> Result<RelationalGraph> {
    match format {
        GraphFormat::JsonBundle => from_json_str(&fs::read_to_string(path)?),
        GraphFormat::EdgeList => load_edge_list(path),
    }
}

pub fn save_graph_json(g: &RelationalGraph, path: &Path) -> Result<()> {
    fs::write(path, to_json_string(g)?)?;
    Ok(())
}

pub fn to_json_string(g: &RelationalGraph) -> Result<String> {
    let bundle = GraphBundle {
        n: g.node_count(),
        edges: g.edges().iter().map(|e| [e.u(), e.v()]).collect(),
        labels: g.labels().to_vec(),
        features: g.features().rows().into_iter().map(|r| r.to_vec()).collect(),
        classes: g.class_count(),
    };
    Ok(serde_json::to_string(&bundle)?)
}

pub fn from_json_str(text: &str) -> Result<RelationalGraph> {
    let b: GraphBundle = serde_json::from_str(text)?;
    let edges = b
        .edges
        .iter()
        .map(|&[i, j]| Edge::new(i, j))
        .collect::<Result<Vec<_>>>()?;
    let d = b.features.first().map_or(0, Vec::len);
    if b.features.len() != b.n || b.features.iter().any(|r| r.len() != d) {
        return Err(Error::dimension("feature matrix", format!("{} rows of {d}", b.n), b.features.len()));
    }
    let features = Array2::from_shape_vec((b.n, d), b.features.concat())
        .map_err(|e| Error::Validation(e.to_string()))?;
    RelationalGraph::new(b.n, edges, features, b.labels, b.classes)
}

fn companion(path: &Path, ext: &str) -> PathBuf {
    path.with_extension(ext)
}

fn load_edge_list(path: &Path) -> Result<RelationalGraph> {
    let (edges, classes) = parse_edge_list(&fs::read_to_string(path)?)?;
    let labels = parse_labels(&fs::read_to_string(companion(path, "labels"))?)?;
    let n = labels.len();
    let features_path = companion(path, "features");
    let features = if features_path.exists() {
        parse_features(&fs::read_to_string(features_path)?, n)?
    } else {
        Array2::ones((n, 10))
    };
    let classes = classes.unwrap_or_else(|| labels.iter().max().map_or(1, |m| m + 1));
    RelationalGraph::new(n, edges, features, labels, classes)
}

fn strip_comment(line: &str) -> &str {
    line.split('#').next().unwrap_or("").trim()
}

/// Parses edge-list text. Returns the edges (deduplicated, either
/// orientation) and the class count from a `# classes: C` directive.
pub fn parse_edge_list(text: &str) -> Result<(Vec<Edge>, Option<usize>)> {
    let mut edges = std::collections::BTreeSet::new();
    let mut classes = None;
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        if let Some(rest) = raw.trim().strip_prefix('#') {
            if let Some(c) = rest.trim().strip_prefix("classes:") {
                classes = Some(c.trim().parse().map_err(|_| Error::Parse {
                    line: line_no,
                    message: format!("bad class count `{}`", c.trim()),
                })?);
            }
            continue;
        }
        let line = strip_comment(raw);
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let parse = |s: &str| {
            s.parse::<usize>().map_err(|_| Error::Parse {
                line: line_no,
                message: format!("`{s}` is not a node index"),
            })
        };
        if fields.len() != 2 {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected `i j`, found `{line}`"),
            });
        }
        let (a, b) = (parse(fields[0])?, parse(fields[1])?);
        let e = Edge::new(a, b).map_err(|_| Error::Parse {
            line: line_no,
            message: format!("self-loop on node {a}"),
        })?;
        edges.insert(e);
    }
    Ok((edges.into_iter().collect(), classes))
}

fn parse_labels(text: &str) -> Result<Vec<usize>> {
    let mut labels = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = strip_comment(raw);
        if line.is_empty() {
            continue;
        }
        labels.push(line.parse().map_err(|_| Error::Parse {
            line: idx + 1,
            message: format!("`{line}` is not a class index"),
        })?);
    }
    Ok(labels)
}

fn parse_features(text: &str, n: usize) -> Result<Array2<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = strip_comment(raw);
        if line.is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|s| {
                s.trim().parse::<f64>().map_err(|_| Error::Parse {
                    line: idx + 1,
                    message: format!("`{}` is not a number", s.trim()),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(Error::Parse {
                    line: idx + 1,
                    message: format!("expected {} columns, found {}", first.len(), row.len()),
                });
            }
        }
        rows.push(row);
    }
    if rows.len() != n {
        return Err(Error::dimension("feature rows", n, rows.len()));
    }
    let d = rows.first().map_or(0, Vec::len);
    Array2::from_shape_vec((n, d), rows.concat()).map_err(|e| Error::Validation(e.to_string()))
}
