//! Synthetic node-classification benchmarks: a structural base graph with
//! small labelled motifs attached by single edges.

use std::collections::BTreeSet;

use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Edge, RelationalGraph};
use crate::error::{Error, Result};

const FEATURE_DIM: usize = 10;
const BA_ATTACH: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TreeMotif {
    Cycle,
    Grid,
}

fn edge(a: usize, b: usize) -> Edge {
    Edge::new(a, b).expect("generator never produces self-loops")
}

/// Preferential-attachment graph on `n` nodes, each new node linking to
/// `m` distinct existing nodes. Seeded with a clique on `m + 1` nodes.
fn barabasi_albert(n: usize, m: usize, rng: &mut ChaCha8Rng) -> BTreeSet<Edge> {
    let m = m.min(n.saturating_sub(1)).max(1);
    let mut edges = BTreeSet::new();
    let mut endpoints: Vec<usize> = Vec::new();
    let seed_nodes = (m + 1).min(n);
    for a in 0..seed_nodes {
        for b in (a + 1)..seed_nodes {
            edges.insert(edge(a, b));
            endpoints.push(a);
            endpoints.push(b);
        }
    }
    for new in seed_nodes..n {
        let mut targets = BTreeSet::new();
        while targets.len() < m {
            let t = endpoints[rng.random_range(0..endpoints.len())];
            targets.insert(t);
        }
        for t in targets {
            edges.insert(edge(new, t));
            endpoints.push(new);
            endpoints.push(t);
        }
    }
    edges
}

/// House motif nodes: top, two middle, two bottom. Returns its six edges.
fn house(offset: usize) -> [Edge; 6] {
    let [top, m1, m2, b1, b2] = [0, 1, 2, 3, 4].map(|i| offset + i);
    [
        edge(top, m1),
        edge(top, m2),
        edge(m1, m2),
        edge(m1, b1),
        edge(m2, b2),
        edge(b1, b2),
    ]
}

const HOUSE_ROLES: [usize; 5] = [1, 2, 2, 3, 3];

fn ba_shapes_parts(
    base_nodes: usize,
    motif_count: usize,
    offset: usize,
    rng: &mut ChaCha8Rng,
) -> (BTreeSet<Edge>, Vec<usize>) {
    let mut edges: BTreeSet<Edge> = barabasi_albert(base_nodes, BA_ATTACH, rng)
        .into_iter()
        .map(|e| edge(e.u() + offset, e.v() + offset))
        .collect();
    let mut labels = vec![0; base_nodes];
    for k in 0..motif_count {
        let start = offset + base_nodes + 5 * k;
        edges.extend(house(start));
        labels.extend_from_slice(&HOUSE_ROLES);
        let anchor = offset + rng.random_range(0..base_nodes);
        // bottom-left corner carries the attachment edge
        edges.insert(edge(anchor, start + 3));
    }
    (edges, labels)
}

/// Barabási–Albert base graph with `motif_count` five-node house motifs.
///
/// Labels: 0 for base nodes, 1 for a house top, 2 for the middle pair, 3 for
/// the bottom pair. Features are all-ones with ten columns.
pub fn generate_ba_shapes(base_nodes: usize, motif_count: usize, seed: u64) -> Result<RelationalGraph> {
    if base_nodes < 5 || motif_count < 1 {
        return Err(Error::Validation(format!(
            "ba-shapes needs base_nodes >= 5 and motif_count >= 1 (got {base_nodes}, {motif_count})"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (edges, labels) = ba_shapes_parts(base_nodes, motif_count, 0, &mut rng);
    let n = labels.len();
    RelationalGraph::new(n, edges, Array2::ones((n, FEATURE_DIM)), labels, 4)
}

/// Two BA-shapes communities joined by random base-to-base edges.
///
/// Labels of the second community are shifted by 4 (8 classes). The last
/// feature column marks community membership so the two copies of each
/// structural role remain separable.
pub fn generate_ba_community(base_nodes: usize, motif_count: usize, seed: u64) -> Result<RelationalGraph> {
    if base_nodes < 5 || motif_count < 1 {
        return Err(Error::Validation(format!(
            "ba-community needs base_nodes >= 5 and motif_count >= 1 (got {base_nodes}, {motif_count})"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut edges, mut labels) = ba_shapes_parts(base_nodes, motif_count, 0, &mut rng);
    let half = labels.len();
    let (edges_b, labels_b) = ba_shapes_parts(base_nodes, motif_count, half, &mut rng);
    edges.extend(edges_b);
    labels.extend(labels_b.into_iter().map(|l| l + 4));
    let bridges = (base_nodes / 4).max(1);
    let mut added = 0;
    while added < bridges {
        let a = rng.random_range(0..base_nodes);
        let b = half + rng.random_range(0..base_nodes);
        if edges.insert(edge(a, b)) {
            added += 1;
        }
    }
    let n = labels.len();
    let mut features = Array2::ones((n, FEATURE_DIM));
    for i in half..n {
        features[[i, FEATURE_DIM - 1]] = 0.0;
    }
    RelationalGraph::new(n, edges, features, labels, 8)
}

/// Balanced binary tree of the given height (`2^height - 1` nodes, class 0)
/// with six-node cycles or 3x3 grids (class 1) hung off random tree nodes.
pub fn generate_tree_motif(
    height: u32,
    motif: TreeMotif,
    motif_count: usize,
    seed: u64,
) -> Result<RelationalGraph> {
    if !(2..=20).contains(&height) {
        return Err(Error::Validation(format!("tree height must be in 2..=20, got {height}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tree_nodes = (1usize << height) - 1;
    let mut edges: BTreeSet<Edge> = (1..tree_nodes).map(|i| edge(i, (i - 1) / 2)).collect();
    let mut labels = vec![0; tree_nodes];
    let motif_size = match motif {
        TreeMotif::Cycle => 6,
        TreeMotif::Grid => 9,
    };
    for k in 0..motif_count {
        let start = tree_nodes + k * motif_size;
        match motif {
            TreeMotif::Cycle => {
                for i in 0..6 {
                    edges.insert(edge(start + i, start + (i + 1) % 6));
                }
            }
            TreeMotif::Grid => {
                for r in 0..3 {
                    for c in 0..3 {
                        let id = start + 3 * r + c;
                        if c < 2 {
                            edges.insert(edge(id, id + 1));
                        }
                        if r < 2 {
                            edges.insert(edge(id, id + 3));
                        }
                    }
                }
            }
        }
        labels.extend(std::iter::repeat_n(1, motif_size));
        let anchor = rng.random_range(0..tree_nodes);
        edges.insert(edge(anchor, start));
    }
    let n = labels.len();
    RelationalGraph::new(n, edges, Array2::ones((n, FEATURE_DIM)), labels, 2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    #[test]
    fn ba_shapes_counts() {
        let g = generate_ba_shapes(20, 2, 7).unwrap();
        assert_eq!(g.node_count(), 30);
        let expected: BTreeMap<usize, usize> = [(0, 20), (1, 2), (2, 4), (3, 4)].into();
        assert_eq!(g.class_histogram(), expected);
        assert_eq!(generate_ba_shapes(5, 1, 99).unwrap().node_count(), 10);
    }

    #[test]
    fn ba_shapes_is_deterministic_per_seed() {
        let a = generate_ba_shapes(25, 5, 3).unwrap();
        let b = generate_ba_shapes(25, 5, 3).unwrap();
        assert_eq!(a.edges(), b.edges());
        let c = generate_ba_shapes(25, 5, 4).unwrap();
        assert_ne!(a.edges(), c.edges());
    }

    #[test]
    fn ba_shapes_edge_budget() {
        // K6 seed (15) + 19 nodes x 5 links + 5 houses x (6 + 1)
        let g = generate_ba_shapes(25, 5, 1).unwrap();
        assert_eq!(g.edge_count(), 15 + 19 * 5 + 35);
    }

    #[test]
    fn tree_motif_counts() {
        let g = generate_tree_motif(3, TreeMotif::Cycle, 1, 5).unwrap();
        assert_eq!(g.node_count(), 13);
        assert_eq!(g.labels().iter().filter(|&&l| l == 1).count(), 6);
        assert_eq!(g.edge_count(), 6 + 6 + 1);
        let g = generate_tree_motif(2, TreeMotif::Grid, 1, 5).unwrap();
        assert_eq!(g.node_count(), 12);
        assert_eq!(g.edge_count(), 2 + 12 + 1);
        let g = generate_tree_motif(4, TreeMotif::Grid, 0, 5).unwrap();
        assert!(g.labels().iter().all(|&l| l == 0));
        assert_eq!(g.node_count(), 15);
    }

    #[test]
    fn ba_community_shape() {
        let g = generate_ba_community(10, 2, 11).unwrap();
        assert_eq!(g.node_count(), 40);
        assert_eq!(g.class_count(), 8);
        let hist = g.class_histogram();
        assert_eq!(hist[&0], 10);
        assert_eq!(hist[&4], 10);
        assert_eq!(hist[&7], 4);
        assert_eq!(g, generate_ba_community(10, 2, 11).unwrap());
    }
}
