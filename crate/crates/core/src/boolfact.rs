//! Boolean low-rank factorization and the rank search that turns a graph
//! into a set of counterfactual explanations.

use std::collections::{BTreeMap, BTreeSet};

use ndarray::{Array2, Zip};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::explainer::{explain, ExplainConfig, Explanation};
use crate::gcn::GcnModel;
use crate::graph::{adjacency, graph_from_adjacency, BooleanMatrix, Edge, RelationalGraph};
use crate::par::Execution;

/// Sweeps between best-so-far checkpoints.
const CHECK_EVERY: usize = 50;
/// Factor changes below this mean the updates reached a fixed point.
const FIXED_POINT_TOL: f64 = 1e-12;
const EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RankSearchConfig {
    pub start_fraction: f64,
    pub stop_fraction: f64,
    pub max_rank: usize,
    pub iterations: usize,
    /// Unpenalized sweeps before the penalty schedule starts.
    pub warm_start: usize,
    pub lambda0: f64,
    pub lambda_growth: f64,
    pub lambda_max: f64,
    pub threshold: f64,
    /// Independent random initializations per rank; the best is kept.
    pub restarts: usize,
    pub seed: u64,
    /// Ranks factorized concurrently ahead of the sequential acceptance loop.
    /// Zero means one batch per worker thread.
    pub prefetch: usize,
    pub execution: Execution,
}

impl Default for RankSearchConfig {
    fn default() -> Self {
        RankSearchConfig {
            start_fraction: 0.25,
            stop_fraction: 0.05,
            max_rank: 64,
            iterations: 10_000,
            warm_start: 500,
            lambda0: 1.0,
            lambda_growth: 1.05,
            lambda_max: 1e8,
            threshold: 0.5,
            restarts: 3,
            seed: 0,
            prefetch: 0,
            execution: Execution::default(),
        }
    }
}

impl RankSearchConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.stop_fraction && self.stop_fraction < self.start_fraction && self.start_fraction < 1.0) {
            return Err(Error::Validation(format!(
                "need 0 < stop_fraction < start_fraction < 1 (got {} and {})",
                self.stop_fraction, self.start_fraction
            )));
        }
        if self.lambda0 <= 0.0 || self.lambda_growth < 1.0 || self.lambda_max < self.lambda0 {
            return Err(Error::Validation("penalty schedule needs 0 < lambda0 <= lambda_max and growth >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.threshold) {
            return Err(Error::Validation(format!("threshold {} outside [0, 1)", self.threshold)));
        }
        if self.restarts == 0 {
            return Err(Error::Validation("restarts must be >= 1".into()));
        }
        Ok(())
    }
}

/// Boolean product: `X_ij = OR_l (Q_il AND R_lj)`.
pub fn boolean_product(q: &BooleanMatrix, r: &BooleanMatrix) -> Result<BooleanMatrix> {
    if q.cols() != r.rows() {
        return Err(Error::dimension("boolean product inner dimension", q.cols(), r.rows()));
    }
    let mut x = BooleanMatrix::zeros(q.rows(), r.cols());
    for i in 0..q.rows() {
        for l in (0..q.cols()).filter(|&l| q.get(i, l)) {
            for j in 0..r.cols() {
                if r.get(l, j) {
                    x.set(i, j, true);
                }
            }
        }
    }
    Ok(x)
}

/// Number of cells where the two matrices differ.
pub fn boolean_error(p: &BooleanMatrix, p_hat: &BooleanMatrix) -> Result<usize> {
    if (p.rows(), p.cols()) != (p_hat.rows(), p_hat.cols()) {
        return Err(Error::dimension(
            "boolean error operands",
            format!("{}x{}", p.rows(), p.cols()),
            format!("{}x{}", p_hat.rows(), p_hat.cols()),
        ));
    }
    let mut count = 0;
    for i in 0..p.rows() {
        for j in 0..p.cols() {
            if p.get(i, j) != p_hat.get(i, j) {
                count += 1;
            }
        }
    }
    Ok(count)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BooleanFactorization {
    pub q: BooleanMatrix,
    pub r: BooleanMatrix,
    pub rank: usize,
    pub error: usize,
}

impl BooleanFactorization {
    pub fn reconstruction(&self) -> BooleanMatrix {
        boolean_product(&self.q, &self.r).expect("factor shapes agree by construction")
    }
}

fn binarize(x: &Array2<f64>, threshold: f64) -> BooleanMatrix {
    let mut b = BooleanMatrix::zeros(x.nrows(), x.ncols());
    for ((i, j), &v) in x.indexed_iter() {
        if v > threshold {
            b.set(i, j, true);
        }
    }
    b
}

fn candidate(p: &BooleanMatrix, q: &Array2<f64>, r: &Array2<f64>, threshold: f64) -> BooleanFactorization {
    let qb = binarize(q, threshold);
    let rb = binarize(r, threshold);
    let error = boolean_error(p, &boolean_product(&qb, &rb).expect("shapes agree")).expect("shapes agree");
    BooleanFactorization {
        q: qb,
        r: rb,
        rank: q.ncols(),
        error,
    }
}

/// One multiplicative update of `x` (either factor) given the numerator
/// product `2·P·Rᵀ` part and the denominator `2·Q·R·Rᵀ` part. Returns the
/// largest absolute change.
fn update(x: &mut Array2<f64>, data_num: &Array2<f64>, data_den: &Array2<f64>, lambda: f64) -> f64 {
    let mut change = 0.0f64;
    Zip::from(x).and(data_num).and(data_den).for_each(|x, &num, &den| {
        let v = *x;
        let num = 2.0 * num + 3.0 * lambda * v * v;
        let den = 2.0 * den + 2.0 * lambda * v * v * v + lambda * v;
        let next = (v * num / (den + EPS)).clamp(0.0, 1.0);
        change = change.max((next - v).abs());
        *x = next;
    });
    change
}

/// Rescales each pattern so its column of `q` and row of `r` share the same
/// maximum, the geometric mean of the two, leaving `q·r` unchanged.
fn balance(q: &mut Array2<f64>, r: &mut Array2<f64>) {
    for l in 0..q.ncols() {
        let mq = q.column(l).fold(0.0f64, |m, &x| m.max(x));
        let mr = r.row(l).fold(0.0f64, |m, &x| m.max(x));
        if mq > 0.0 && mr > 0.0 {
            let s = (mr / mq).sqrt();
            q.column_mut(l).mapv_inplace(|x| (x * s).min(1.0));
            r.row_mut(l).mapv_inplace(|x| (x / s).min(1.0));
        }
    }
}

fn factorize_once(p: &BooleanMatrix, pf: &Array2<f64>, k: usize, cfg: &RankSearchConfig, rng: &mut ChaCha8Rng) -> BooleanFactorization {
    let (n, m) = (p.rows(), p.cols());
    let mut q = Array2::from_shape_simple_fn((n, k), || rng.random_range(f64::EPSILON..1.0));
    let mut r = Array2::from_shape_simple_fn((k, m), || rng.random_range(f64::EPSILON..1.0));
    for _ in 0..cfg.warm_start {
        let prt = pf.dot(&r.t());
        let qrrt = q.dot(&r.dot(&r.t()));
        update(&mut q, &prt, &qrrt, 0.0);
        let qtp = q.t().dot(pf);
        let qtqr = q.t().dot(&q).dot(&r);
        update(&mut r, &qtp, &qtqr, 0.0);
    }
    balance(&mut q, &mut r);
    let mut lambda = cfg.lambda0;
    let mut best: Option<BooleanFactorization> = None;
    let keep_best = |cand: BooleanFactorization, best: &mut Option<BooleanFactorization>| {
        if best.as_ref().is_none_or(|b| cand.error < b.error) {
            *best = Some(cand);
        }
    };
    for sweep in 1..=cfg.iterations {
        let prt = pf.dot(&r.t());
        let qrrt = q.dot(&r.dot(&r.t()));
        let dq = update(&mut q, &prt, &qrrt, lambda);
        let qtp = q.t().dot(pf);
        let qtqr = q.t().dot(&q).dot(&r);
        let dr = update(&mut r, &qtp, &qtqr, lambda);
        lambda = (lambda * cfg.lambda_growth).min(cfg.lambda_max);
        if sweep % CHECK_EVERY == 0 {
            keep_best(candidate(p, &q, &r, cfg.threshold), &mut best);
        }
        if dq.max(dr) < FIXED_POINT_TOL && lambda >= cfg.lambda_max {
            break;
        }
    }
    keep_best(candidate(p, &q, &r, cfg.threshold), &mut best);
    best.expect("at least one candidate")
}

/// Rank-`k` Boolean factorization of `p` by the penalty-function method.
///
/// Nonnegative real factors are driven towards {0, 1} by a penalty whose
/// weight grows geometrically each sweep; the factors are then thresholded.
/// Deterministic for a fixed `cfg.seed` and `k`.
pub fn bmf_factorize(p: &BooleanMatrix, k: usize, cfg: &RankSearchConfig) -> Result<BooleanFactorization> {
    if k == 0 {
        return Err(Error::Validation("factorization rank must be >= 1".into()));
    }
    cfg.validate()?;
    let pf = p.to_f64();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(k as u64);
    let mut best: Option<BooleanFactorization> = None;
    for _ in 0..cfg.restarts {
        let cand = factorize_once(p, &pf, k, cfg, &mut rng);
        if best.as_ref().is_none_or(|b| cand.error < b.error) {
            best = Some(cand);
        }
    }
    Ok(best.expect("restarts >= 1"))
}

/// Decides which ranks the search visits, given the error at each rank.
///
/// Returns `(start_rank, visited)` where `visited` lists the ranks of the
/// main loop in order. `error_at` is only called for ranks that are needed.
pub(crate) fn plan_ranks(
    budget: usize,
    cfg: &RankSearchConfig,
    mut error_at: impl FnMut(usize) -> Result<usize>,
) -> Result<(usize, Vec<(usize, usize)>)> {
    let start_limit = cfg.start_fraction * budget as f64;
    let stop_limit = cfg.stop_fraction * budget as f64;
    let mut start = None;
    for r in 1..=cfg.max_rank {
        let err = error_at(r)?;
        if (err as f64) < start_limit {
            start = Some((r, err));
            break;
        }
    }
    let Some((start_rank, start_err)) = start else {
        return Err(Error::CreGenerationFailed { max_rank: cfg.max_rank });
    };
    let mut visited = vec![(start_rank, start_err)];
    let mut stalls = 0;
    let mut r = start_rank;
    let mut err = start_err;
    while (err as f64) >= stop_limit && r < cfg.max_rank {
        r += 1;
        let next = error_at(r)?;
        visited.push((r, next));
        stalls = if next < err { 0 } else { stalls + 1 };
        err = next;
        if stalls >= 2 {
            break;
        }
    }
    Ok((start_rank, visited))
}

/// One visited rank of the search: its error and the approximated graph, or
/// `None` when the approximation reproduces the input graph exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct RankStep {
    pub rank: usize,
    pub error: usize,
    pub graph: Option<RelationalGraph>,
}

/// The target-independent part of the search: which ranks were visited and
/// what graphs they produced.
#[derive(Debug, Clone, PartialEq)]
pub struct RankSweep {
    pub start_rank: usize,
    pub steps: Vec<RankStep>,
}

/// Runs the rank search on `g`. Ranks are factorized in concurrent batches;
/// which of them are used is decided in rank order.
pub fn rank_sweep(g: &RelationalGraph, cfg: &RankSearchConfig) -> Result<RankSweep> {
    cfg.validate()?;
    let p = adjacency(g);
    let max_rank = cfg.max_rank.min(g.node_count());
    let cfg = RankSearchConfig {
        max_rank,
        ..cfg.clone()
    };
    let batch = if cfg.prefetch == 0 {
        cfg.execution.workers()
    } else {
        cfg.prefetch
    };
    let mut cache: BTreeMap<usize, BooleanFactorization> = BTreeMap::new();
    let mut error_at = |r: usize| -> Result<usize> {
        if !cache.contains_key(&r) {
            let ranks: Vec<usize> = (r..(r + batch).min(max_rank + 1)).collect();
            let solved = cfg.execution.map(&ranks, |&k| bmf_factorize(&p, k, &cfg));
            for (k, f) in ranks.into_iter().zip(solved) {
                cache.insert(k, f?);
            }
        }
        Ok(cache[&r].error)
    };
    // nonzero cells of the adjacency matrix: each undirected edge counts twice
    let budget = 2 * g.edge_count();
    let (start_rank, visited) = plan_ranks(budget, &cfg, &mut error_at)?;
    let mut steps = Vec::with_capacity(visited.len());
    for (rank, error) in visited {
        let approx = graph_from_adjacency(&cache[&rank].reconstruction(), g)?;
        let graph = (approx.edges() != g.edges()).then_some(approx);
        log::debug!(
            "rank {rank}: error {error}, {}",
            graph.as_ref().map_or("identical to input".to_string(), |h| format!("{} edges", h.edge_count()))
        );
        steps.push(RankStep { rank, error, graph });
    }
    Ok(RankSweep { start_rank, steps })
}

/// Explanations of one target across all approximated graphs of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CreSetFile", into = "CreSetFile")]
pub struct CreSet {
    pub target: usize,
    pub class_count: usize,
    pub explanations: Vec<Explanation>,
    pub relation_index: BTreeMap<Edge, usize>,
    pub ranks_used: Vec<usize>,
    pub errors_per_rank: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct CreSetFile {
    target: usize,
    class_count: usize,
    explanations: Vec<Explanation>,
    ranks: Vec<usize>,
    errors: Vec<usize>,
}

impl TryFrom<CreSetFile> for CreSet {
    type Error = Error;

    fn try_from(f: CreSetFile) -> Result<Self> {
        CreSet::new(f.target, f.class_count, f.explanations, f.ranks, f.errors)
    }
}

impl From<CreSet> for CreSetFile {
    fn from(s: CreSet) -> Self {
        CreSetFile {
            target: s.target,
            class_count: s.class_count,
            explanations: s.explanations,
            ranks: s.ranks_used,
            errors: s.errors_per_rank,
        }
    }
}

impl CreSet {
    pub fn new(
        target: usize,
        class_count: usize,
        explanations: Vec<Explanation>,
        ranks_used: Vec<usize>,
        errors_per_rank: Vec<usize>,
    ) -> Result<Self> {
        if explanations.is_empty() {
            return Err(Error::EmptyCreSet);
        }
        if let Some(e) = explanations.iter().find(|e| e.target != target) {
            return Err(Error::Validation(format!(
                "explanation for node {} in the set of target {target}",
                e.target
            )));
        }
        if ranks_used.len() != errors_per_rank.len() {
            return Err(Error::dimension("rank errors", ranks_used.len(), errors_per_rank.len()));
        }
        if class_count == 0 {
            return Err(Error::Validation("class_count must be >= 1".into()));
        }
        if let Some(e) = explanations.iter().find(|e| e.predicted_class >= class_count) {
            return Err(Error::Validation(format!(
                "predicted class {} outside 0..{class_count}",
                e.predicted_class
            )));
        }
        let distinct: BTreeSet<Edge> = explanations.iter().flat_map(Explanation::edges).collect();
        let relation_index = distinct.into_iter().enumerate().map(|(i, e)| (e, i)).collect();
        Ok(CreSet {
            target,
            class_count,
            explanations,
            relation_index,
            ranks_used,
            errors_per_rank,
        })
    }

    pub fn relations(&self) -> impl Iterator<Item = Edge> + '_ {
        self.relation_index.keys().copied()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Explains `target` on every approximated graph of the sweep.
pub fn explain_sweep(
    sweep: &RankSweep,
    m: &GcnModel,
    class_count: usize,
    target: usize,
    cfg: &ExplainConfig,
) -> Result<CreSet> {
    let mut explanations = Vec::new();
    let mut ranks = Vec::new();
    let mut errors = Vec::new();
    for step in &sweep.steps {
        let Some(h) = &step.graph else { continue };
        match explain(m, h, target, cfg) {
            Ok(e) => {
                explanations.push(e);
                ranks.push(step.rank);
                errors.push(step.error);
            }
            Err(Error::SingleNodeExplanation { .. }) => {
                log::debug!("target {target} isolated at rank {}", step.rank);
            }
            Err(e) => return Err(e),
        }
    }
    CreSet::new(target, class_count, explanations, ranks, errors)
}

/// Rank search followed by explanation of `target` on every accepted
/// approximation.
pub fn generate_cres(
    g: &RelationalGraph,
    m: &GcnModel,
    target: usize,
    ecfg: &ExplainConfig,
    rcfg: &RankSearchConfig,
) -> Result<CreSet> {
    if target >= g.node_count() {
        return Err(Error::Validation(format!("target {target} outside 0..{}", g.node_count())));
    }
    explain_sweep(&rank_sweep(g, rcfg)?, m, g.class_count(), target, ecfg)
}
