//! Independent oracles shared by the integration tests: brute-force
//! enumeration of factor graphs, random factor-graph builders and an
//! exhaustive Boolean factorization.

#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use relex_core::graph::BooleanMatrix;
use relex_core::pgm::{Factor, FactorGraph, FactorKind, Variable};

/// Everything enumeration can say about a small factor graph.
pub struct Brute {
    pub z: f64,
    pub marginals: Vec<Vec<f64>>,
    /// Per factor, row-major over its scope (first variable slowest).
    pub tables: Vec<Vec<f64>>,
    pub map: Vec<usize>,
    pub map_unique: bool,
}

fn log_score(fg: &FactorGraph, a: &[usize]) -> f64 {
    let mut s = 0.0;
    for f in fg.factors() {
        if f.scope.iter().zip(&f.satisfying).all(|(&v, &x)| a[v] == x) {
            s += f.weight;
        }
    }
    s
}

/// Calls `visit` on every joint assignment, first variable slowest.
pub fn for_each_assignment(states: &[usize], mut visit: impl FnMut(&[usize])) {
    let mut a = vec![0; states.len()];
    'outer: loop {
        visit(&a);
        for i in (0..a.len()).rev() {
            a[i] += 1;
            if a[i] < states[i] {
                continue 'outer;
            }
            a[i] = 0;
        }
        break;
    }
}

pub fn brute_force(fg: &FactorGraph) -> Brute {
    let states: Vec<usize> = fg.variables().iter().map(|v| v.states).collect();
    let mut marginals: Vec<Vec<f64>> = states.iter().map(|&k| vec![0.0; k]).collect();
    let mut tables: Vec<Vec<f64>> = fg
        .factors()
        .iter()
        .map(|f| vec![0.0; f.scope.iter().map(|&v| states[v]).product()])
        .collect();
    let mut z = 0.0;
    let mut best: Option<(f64, Vec<usize>)> = None;
    let mut unique = true;
    for_each_assignment(&states, |a| {
        let s = log_score(fg, a);
        let w = s.exp();
        z += w;
        for (v, &x) in a.iter().enumerate() {
            marginals[v][x] += w;
        }
        for (f, t) in fg.factors().iter().zip(tables.iter_mut()) {
            let [p, q, r] = f.scope;
            let idx = (a[p] * states[q] + a[q]) * states[r] + a[r];
            t[idx] += w;
        }
        match &best {
            Some((b, _)) if (s - b).abs() < 1e-9 => unique = false,
            Some((b, _)) if s < *b => {}
            _ => {
                best = Some((s, a.to_vec()));
                unique = true;
            }
        }
    });
    for m in marginals.iter_mut().chain(tables.iter_mut()) {
        m.iter_mut().for_each(|x| *x /= z);
    }
    Brute {
        z,
        marginals,
        tables,
        map: best.expect("at least one assignment").1,
        map_unique: unique,
    }
}

fn variables(rng: &mut ChaCha8Rng, n: usize, multiclass: bool) -> Vec<Variable> {
    (0..n)
        .map(|i| Variable {
            entity: Some(i),
            states: if multiclass && rng.random_bool(0.3) { 3 } else { 2 },
        })
        .collect()
}

fn random_factor(rng: &mut ChaCha8Rng, vars: &[Variable], scope: [usize; 3]) -> Factor {
    Factor {
        scope,
        satisfying: scope.map(|v| rng.random_range(0..vars[v].states)),
        weight: rng.random_range(-3.0..=3.0),
        kind: FactorKind::Learned,
        relation: None,
    }
}

/// A factor graph whose bipartite graph is a forest: each factor after the
/// first shares exactly one variable with the factors before it. Leftover
/// variables stay isolated.
pub fn random_tree(rng: &mut ChaCha8Rng, max_vars: usize, multiclass: bool) -> FactorGraph {
    let n = rng.random_range(3..=max_vars);
    let vars = variables(rng, n, multiclass);
    let mut fg = FactorGraph::new(vars.clone()).unwrap();
    let mut used = 3;
    fg.add_factor(random_factor(rng, &vars, [0, 1, 2])).unwrap();
    while used + 2 <= n && rng.random_bool(0.85) {
        let shared = rng.random_range(0..used);
        let mut scope = [shared, used, used + 1];
        // the shared variable may sit in any slot
        scope.swap(0, rng.random_range(0..3));
        fg.add_factor(random_factor(rng, &vars, scope)).unwrap();
        used += 2;
    }
    fg
}

/// Random factors over random triples; typically loopy.
pub fn random_loopy(rng: &mut ChaCha8Rng, max_vars: usize, max_factors: usize, multiclass: bool) -> FactorGraph {
    let n = rng.random_range(3..=max_vars);
    let vars = variables(rng, n, multiclass);
    let mut fg = FactorGraph::new(vars.clone()).unwrap();
    for _ in 0..rng.random_range(1..=max_factors) {
        let a = rng.random_range(0..n);
        let b = (a + rng.random_range(1..n)) % n;
        let mut c = rng.random_range(0..n);
        while c == a || c == b {
            c = rng.random_range(0..n);
        }
        fg.add_factor(random_factor(rng, &vars, [a, b, c])).unwrap();
    }
    fg
}

pub fn bm(rows: &[&str]) -> BooleanMatrix {
    let rows: Vec<Vec<u8>> = rows.iter().map(|r| r.bytes().map(|b| b - b'0').collect()).collect();
    BooleanMatrix::from_rows(&rows).unwrap()
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, density: f64) -> BooleanMatrix {
    let mut m = BooleanMatrix::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            m.set(i, j, rng.random_bool(density));
        }
    }
    m
}

/// Smallest Hamming error of any Boolean product `Q ∘ R` with `k` patterns.
///
/// Enumerates `Q` as a multiset of `k` column patterns (order is irrelevant
/// to the product); for fixed `Q` every column of `P` independently picks
/// the subset of patterns whose OR is closest to it.
pub fn bmf_optimum(p: &BooleanMatrix, k: usize) -> usize {
    let n = p.rows();
    assert!(n <= 16, "oracle enumerates 2^rows column patterns");
    let columns: Vec<u32> = (0..p.cols())
        .map(|j| (0..n).fold(0u32, |acc, i| acc | ((p.get(i, j) as u32) << i)))
        .collect();
    if k == 0 {
        return columns.iter().map(|c| c.count_ones() as usize).sum();
    }
    let patterns = 1u32 << n;
    let mut best = usize::MAX;
    let mut q = vec![0u32; k];
    let mut unions = vec![0u32; 1 << k];
    loop {
        for s in 1..(1usize << k) {
            let low = s.trailing_zeros() as usize;
            unions[s] = unions[s & (s - 1)] | q[low];
        }
        let err: usize = columns
            .iter()
            .map(|&c| unions.iter().map(|&u| (u ^ c).count_ones() as usize).min().unwrap())
            .sum();
        best = best.min(err);
        // next non-decreasing sequence q[0] <= q[1] <= ... < patterns
        let mut i = k;
        while i > 0 && q[i - 1] == patterns - 1 {
            i -= 1;
        }
        if i == 0 {
            break;
        }
        q[i - 1] += 1;
        let v = q[i - 1];
        for x in q.iter_mut().skip(i) {
            *x = v;
        }
    }
    best
}

/// Proptest settings without the on-disk regression file, which integration
/// tests cannot locate next to a lib.rs.
pub fn cases(n: u32) -> proptest::test_runner::Config {
    proptest::test_runner::Config {
        cases: n,
        failure_persistence: None,
        ..Default::default()
    }
}
