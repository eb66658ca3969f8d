//! Relational graph data model, Boolean adjacency matrices and graph editing.

mod generate;
pub mod io;

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use generate::{generate_ba_community, generate_ba_shapes, generate_tree_motif, TreeMotif};

/// Undirected edge stored with `u < v`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "(usize, usize)", into = "(usize, usize)")]
pub struct Edge {
    u: usize,
    v: usize,
}

impl Edge {
    /// Builds the canonical form of `{a, b}`. Self-loops are rejected.
    pub fn new(a: usize, b: usize) -> Result<Self> {
        if a == b {
            return Err(Error::Validation(format!("self-loop on node {a}")));
        }
        Ok(Edge {
            u: a.min(b),
            v: a.max(b),
        })
    }

    pub fn u(&self) -> usize {
        self.u
    }

    pub fn v(&self) -> usize {
        self.v
    }

    pub fn endpoints(&self) -> [usize; 2] {
        [self.u, self.v]
    }
}

impl TryFrom<(usize, usize)> for Edge {
    type Error = Error;

    fn try_from((a, b): (usize, usize)) -> Result<Self> {
        Edge::new(a, b)
    }
}

impl From<Edge> for (usize, usize) {
    fn from(e: Edge) -> Self {
        (e.u, e.v)
    }
}

impl fmt::Display for Edge {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.u, self.v)
    }
}

/// Undirected, node-attributed, labelled graph.
#[derive(Debug, Clone, PartialEq)]
pub struct RelationalGraph {
    node_count: usize,
    edges: BTreeSet<Edge>,
    features: Array2<f64>,
    labels: Vec<usize>,
    class_count: usize,
}

impl RelationalGraph {
    pub fn new(
        node_count: usize,
        edges: impl IntoIterator<Item = Edge>,
        features: Array2<f64>,
        labels: Vec<usize>,
        class_count: usize,
    ) -> Result<Self> {
        if node_count == 0 {
            return Err(Error::Validation("graph must have at least one node".into()));
        }
        if class_count == 0 {
            return Err(Error::Validation("class_count must be positive".into()));
        }
        if features.nrows() != node_count {
            return Err(Error::dimension("feature rows", node_count, features.nrows()));
        }
        if labels.len() != node_count {
            return Err(Error::dimension("label count", node_count, labels.len()));
        }
        if let Some((i, &l)) = labels.iter().enumerate().find(|(_, &l)| l >= class_count) {
            return Err(Error::Validation(format!(
                "label {l} of node {i} is not below class_count {class_count}"
            )));
        }
        if features.iter().any(|x| !x.is_finite()) {
            return Err(Error::Validation("non-finite feature value".into()));
        }
        let edges: BTreeSet<Edge> = edges.into_iter().collect();
        if let Some(e) = edges.iter().find(|e| e.v >= node_count) {
            return Err(Error::Validation(format!(
                "edge {e} references a node outside 0..{node_count}"
            )));
        }
        Ok(RelationalGraph {
            node_count,
            edges,
            features,
            labels,
            class_count,
        })
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn edges(&self) -> &BTreeSet<Edge> {
        &self.edges
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn has_edge(&self, e: &Edge) -> bool {
        self.edges.contains(e)
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn feature_dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    /// Same nodes, features and labels with a different edge set.
    pub fn with_edges(&self, edges: impl IntoIterator<Item = Edge>) -> Result<Self> {
        RelationalGraph::new(
            self.node_count,
            edges,
            self.features.clone(),
            self.labels.clone(),
            self.class_count,
        )
    }

    pub fn neighbor_lists(&self) -> Vec<Vec<usize>> {
        let mut nbrs = vec![Vec::new(); self.node_count];
        for e in &self.edges {
            nbrs[e.u].push(e.v);
            nbrs[e.v].push(e.u);
        }
        nbrs
    }

    /// BFS hop distance from `source`; `None` for unreachable nodes.
    pub fn hop_distances(&self, source: usize) -> Vec<Option<usize>> {
        let nbrs = self.neighbor_lists();
        let mut dist = vec![None; self.node_count];
        let mut queue = VecDeque::new();
        dist[source] = Some(0);
        queue.push_back(source);
        while let Some(x) = queue.pop_front() {
            let d = dist[x].unwrap_or(0);
            for &y in &nbrs[x] {
                if dist[y].is_none() {
                    dist[y] = Some(d + 1);
                    queue.push_back(y);
                }
            }
        }
        dist
    }

    /// Node count per class.
    pub fn class_histogram(&self) -> BTreeMap<usize, usize> {
        let mut hist = BTreeMap::new();
        for &l in &self.labels {
            *hist.entry(l).or_insert(0) += 1;
        }
        hist
    }
}

/// Dense bit matrix.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BooleanMatrix {
    rows: usize,
    cols: usize,
    bits: Vec<bool>,
}

impl BooleanMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        BooleanMatrix {
            rows,
            cols,
            bits: vec![false; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.set(i, i, true);
        }
        m
    }

    /// Builds a matrix from 0/1 rows. Any non-zero entry counts as 1.
    pub fn from_rows<R: AsRef<[u8]>>(rows: &[R]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.as_ref().len());
        let mut bits = Vec::with_capacity(r * c);
        for (i, row) in rows.iter().enumerate() {
            let row = row.as_ref();
            if row.len() != c {
                return Err(Error::dimension("matrix row", c, format!("{} at row {i}", row.len())));
            }
            bits.extend(row.iter().map(|&x| x != 0));
        }
        Ok(BooleanMatrix { rows: r, cols: c, bits })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.bits[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, value: bool) {
        self.bits[i * self.cols + j] = value;
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.set(j, i, self.get(i, j));
            }
        }
        t
    }

    pub fn is_symmetric(&self) -> bool {
        self.rows == self.cols
            && (0..self.rows).all(|i| (0..i).all(|j| self.get(i, j) == self.get(j, i)))
    }

    /// Row-major 0/1 rows, the serialization layout.
    pub fn to_rows(&self) -> Vec<Vec<u8>> {
        (0..self.rows)
            .map(|i| (0..self.cols).map(|j| self.get(i, j) as u8).collect())
            .collect()
    }

    pub fn to_f64(&self) -> Array2<f64> {
        Array2::from_shape_fn((self.rows, self.cols), |(i, j)| self.get(i, j) as u8 as f64)
    }

    /// Number of distinct column vectors.
    pub fn distinct_columns(&self) -> usize {
        let cols: BTreeSet<Vec<bool>> = (0..self.cols)
            .map(|j| (0..self.rows).map(|i| self.get(i, j)).collect())
            .collect();
        cols.len()
    }
}

impl Serialize for BooleanMatrix {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_rows().serialize(s)
    }
}

impl<'de> Deserialize<'de> for BooleanMatrix {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let rows: Vec<Vec<u8>> = Vec::deserialize(d)?;
        BooleanMatrix::from_rows(&rows).map_err(serde::de::Error::custom)
    }
}

/// Disjoint train/validation/test node sets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeSplit {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

impl NodeSplit {
    /// Stratified per-class split. Within each class the nodes are shuffled
    /// with a seeded RNG and cut at `round(train_frac * n)` and
    /// `round((train_frac + val_frac) * n)`.
    pub fn stratified(g: &RelationalGraph, train_frac: f64, val_frac: f64, seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&train_frac)
            || !(0.0..=1.0).contains(&val_frac)
            || train_frac + val_frac > 1.0 + 1e-12
        {
            return Err(Error::Validation(format!(
                "invalid split fractions train={train_frac} val={val_frac}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut split = NodeSplit {
            train: Vec::new(),
            validation: Vec::new(),
            test: Vec::new(),
        };
        for class in 0..g.class_count() {
            let mut members: Vec<usize> =
                (0..g.node_count()).filter(|&i| g.labels()[i] == class).collect();
            members.shuffle(&mut rng);
            let n = members.len() as f64;
            let cut_train = (train_frac * n).round() as usize;
            let cut_val = (((train_frac + val_frac) * n).round() as usize).max(cut_train);
            split.train.extend_from_slice(&members[..cut_train]);
            split.validation.extend_from_slice(&members[cut_train..cut_val]);
            split.test.extend_from_slice(&members[cut_val..]);
        }
        split.train.sort_unstable();
        split.validation.sort_unstable();
        split.test.sort_unstable();
        Ok(split)
    }

    pub fn validate(&self, node_count: usize) -> Result<()> {
        let mut seen = BTreeSet::new();
        for &i in self.train.iter().chain(&self.validation).chain(&self.test) {
            if i >= node_count {
                return Err(Error::Validation(format!("split node {i} out of range")));
            }
            if !seen.insert(i) {
                return Err(Error::Validation(format!("node {i} appears in two split sets")));
            }
        }
        Ok(())
    }
}

/// Symmetric zero-diagonal adjacency matrix of `g`.
pub fn adjacency(g: &RelationalGraph) -> BooleanMatrix {
    let n = g.node_count();
    let mut a = BooleanMatrix::zeros(n, n);
    for e in g.edges() {
        a.set(e.u, e.v, true);
        a.set(e.v, e.u, true);
    }
    a
}

/// Graph whose edges are the off-diagonal ones of `a ∨ aᵀ`, carrying the
/// template's nodes, features and labels.
pub fn graph_from_adjacency(a: &BooleanMatrix, template: &RelationalGraph) -> Result<RelationalGraph> {
    let n = template.node_count();
    if a.rows() != n || a.cols() != n {
        return Err(Error::dimension(
            "graph_from_adjacency",
            format!("{n}x{n}"),
            format!("{}x{}", a.rows(), a.cols()),
        ));
    }
    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            if a.get(i, j) || a.get(j, i) {
                edges.push(Edge { u: i, v: j });
            }
        }
    }
    template.with_edges(edges)
}

/// Removes `victims` from `g`. Returns the new graph and how many victims
/// were not present.
pub fn remove_edges<'a>(
    g: &RelationalGraph,
    victims: impl IntoIterator<Item = &'a Edge>,
) -> (RelationalGraph, usize) {
    let mut edges = g.edges.clone();
    let mut ignored = 0;
    for e in victims {
        if !edges.remove(e) {
            ignored += 1;
        }
    }
    let reduced = RelationalGraph { edges, ..g.clone() };
    (reduced, ignored)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn graph(n: usize, edges: &[(usize, usize)]) -> RelationalGraph {
        RelationalGraph::new(
            n,
            edges.iter().map(|&(a, b)| Edge::new(a, b).unwrap()),
            Array2::ones((n, 1)),
            vec![0; n],
            1,
        )
        .unwrap()
    }

    #[test]
    fn edge_is_canonical_and_rejects_loops() {
        assert_eq!(Edge::new(3, 1).unwrap(), Edge::new(1, 3).unwrap());
        assert!(Edge::new(2, 2).is_err());
    }

    #[test]
    fn label_out_of_range_rejected() {
        let r = RelationalGraph::new(2, [], Array2::ones((2, 1)), vec![0, 2], 2);
        assert!(matches!(r, Err(Error::Validation(_))));
    }

    #[test]
    fn adjacency_examples() {
        assert_eq!(adjacency(&graph(3, &[])).count_ones(), 0);
        let a = adjacency(&graph(2, &[(0, 1)]));
        assert_eq!(a.to_rows(), vec![vec![0, 1], vec![1, 0]]);
        let tri = adjacency(&graph(3, &[(0, 1), (1, 2), (0, 2)]));
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(tri.get(i, j), i != j);
            }
        }
    }

    #[test]
    fn from_adjacency_symmetrizes_and_ignores_diagonal() {
        let g = graph(2, &[]);
        let a = BooleanMatrix::from_rows(&[[1u8, 1], [0, 1]]).unwrap();
        let h = graph_from_adjacency(&a, &g).unwrap();
        assert_eq!(h.edges().iter().copied().collect::<Vec<_>>(), vec![Edge::new(0, 1).unwrap()]);
        let bad = BooleanMatrix::zeros(3, 3);
        assert!(matches!(graph_from_adjacency(&bad, &g), Err(Error::Dimension { .. })));
    }

    #[test]
    fn remove_edges_examples() {
        let tri = graph(3, &[(0, 1), (1, 2), (0, 2)]);
        let (same, ign) = remove_edges(&tri, &[]);
        assert_eq!(same, tri);
        assert_eq!(ign, 0);
        let victim = Edge::new(0, 2).unwrap();
        let (path, ign) = remove_edges(&tri, &[victim]);
        assert_eq!(path.edge_count(), 2);
        assert_eq!(ign, 0);
        let (again, ign) = remove_edges(&path, &[victim]);
        assert_eq!(again, path);
        assert_eq!(ign, 1);
        let (empty, _) = remove_edges(&tri, tri.edges());
        assert_eq!(empty.edge_count(), 0);
        assert_eq!(empty.node_count(), 3);
    }

    #[test]
    fn stratified_split_is_disjoint_and_covers() {
        let g = RelationalGraph::new(
            30,
            [],
            Array2::ones((30, 1)),
            (0..30).map(|i| i % 3).collect(),
            3,
        )
        .unwrap();
        let s = NodeSplit::stratified(&g, 0.8, 0.1, 4).unwrap();
        s.validate(30).unwrap();
        assert_eq!(s.train.len() + s.validation.len() + s.test.len(), 30);
        assert_eq!(s.train.len(), 24);
        assert_eq!(s, NodeSplit::stratified(&g, 0.8, 0.1, 4).unwrap());
    }

    fn symmetric_matrix() -> impl Strategy<Value = BooleanMatrix> {
        (1usize..9).prop_flat_map(|n| {
            proptest::collection::vec(any::<bool>(), n * n).prop_map(move |bits| {
                let mut m = BooleanMatrix::zeros(n, n);
                for i in 0..n {
                    for j in (i + 1)..n {
                        m.set(i, j, bits[i * n + j]);
                        m.set(j, i, bits[i * n + j]);
                    }
                }
                m
            })
        })
    }

    proptest! {
        #[test]
        fn adjacency_round_trip(m in symmetric_matrix()) {
            let template = graph(m.rows(), &[]);
            let g = graph_from_adjacency(&m, &template).unwrap();
            prop_assert_eq!(adjacency(&g), m);
        }
    }
}
