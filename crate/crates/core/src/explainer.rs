//! Edge-mask explainer for a single node prediction.
//!
//! Each edge of the target's computation subgraph gets a real mask logit.
//! The soft adjacency weights a masked edge by `sigmoid(logit)` in both
//! directions and the GCN normalization is recomputed from the soft degrees.
//! The objective
//!
//! ```text
//! L = -log P(ŷ | masked graph) + λ_s Σ σ(m) + λ_e Σ H(σ(m))
//! ```
//!
//! is minimized by gradient descent with backtracking line search, using
//! analytic gradients through the normalization.

use std::collections::{BTreeMap, BTreeSet};

use ndarray::{Array1, Array2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gcn::GcnModel;
use crate::graph::{Edge, RelationalGraph};

const MAX_HALVINGS: usize = 20;
const LOGIT_CLAMP: f64 = 30.0;

/// How the continuous mask becomes a discrete relation set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    /// Keep the `k` highest-confidence edges.
    TopK(usize),
    /// Keep every edge whose confidence is at least the threshold.
    Threshold(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExplainConfig {
    pub hops: usize,
    pub mask_steps: usize,
    pub mask_lr: f64,
    pub size_penalty: f64,
    pub entropy_penalty: f64,
    pub selection: Selection,
    pub seed: u64,
}

impl Default for ExplainConfig {
    fn default() -> Self {
        ExplainConfig {
            hops: 2,
            mask_steps: 300,
            mask_lr: 1.0,
            size_penalty: 0.05,
            entropy_penalty: 0.1,
            selection: Selection::TopK(6),
            seed: 0,
        }
    }
}

impl ExplainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hops == 0 {
            return Err(Error::Validation("hops must be >= 1".into()));
        }
        if self.size_penalty < 0.0 || self.entropy_penalty < 0.0 {
            return Err(Error::Validation("mask penalties must be >= 0".into()));
        }
        if !(self.mask_lr.is_finite() && self.mask_lr > 0.0) {
            return Err(Error::Validation("mask_lr must be finite and > 0".into()));
        }
        Ok(())
    }
}

/// One explanation relation with its confidence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Relation {
    pub u: usize,
    pub v: usize,
    pub gc: f64,
}

impl Relation {
    pub fn edge(&self) -> Edge {
        Edge::new(self.u, self.v).expect("relations never hold self-loops")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub target: usize,
    #[serde(rename = "class")]
    pub predicted_class: usize,
    /// Sorted by confidence, highest first.
    pub relations: Vec<Relation>,
    #[serde(rename = "hops")]
    pub hop_radius: usize,
}

impl Explanation {
    pub fn edges(&self) -> impl Iterator<Item = Edge> + '_ {
        self.relations.iter().map(Relation::edge)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let e: Explanation = serde_json::from_str(text)?;
        let mut seen = BTreeSet::new();
        for r in &e.relations {
            let edge = Edge::new(r.u, r.v)?;
            if !seen.insert(edge) {
                return Err(Error::Validation(format!("duplicate relation {edge}")));
            }
            if !(r.gc.is_finite() && (0.0..=1.0).contains(&r.gc)) {
                return Err(Error::Validation(format!("confidence {} outside [0, 1]", r.gc)));
            }
        }
        Ok(e)
    }
}

/// Edges with both endpoints within `hops` of `target`.
pub fn computation_subgraph(g: &RelationalGraph, target: usize, hops: usize) -> BTreeSet<Edge> {
    let dist = g.hop_distances(target);
    let near = |i: usize| dist[i].is_some_and(|d| d <= hops);
    g.edges()
        .iter()
        .filter(|e| near(e.u()) && near(e.v()))
        .copied()
        .collect()
}

/// The explainer's confidences, used verbatim as the baseline ranking.
pub fn is_scores(e: &Explanation) -> BTreeMap<Edge, f64> {
    e.relations.iter().map(|r| (r.edge(), r.gc)).collect()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn binary_entropy(s: f64) -> f64 {
    let s = s.clamp(1e-15, 1.0 - 1e-15);
    -s * s.ln() - (1.0 - s) * (1.0 - s).ln()
}

/// Differentiable forward pass of the GCN for one output row, with per-edge
/// soft weights.
pub(crate) struct SoftGraph<'a> {
    model: &'a GcnModel,
    target: usize,
    n: usize,
    /// Undirected edges; the first `masked` of them carry mask weights, the
    /// rest weight 1.
    edges: Vec<(usize, usize)>,
    masked: usize,
    xw0: Array2<f64>,
}

pub(crate) struct SoftEval {
    pub probs: Array1<f64>,
    /// dL/ds for each masked edge, with L = -log probs[class].
    pub grad: Vec<f64>,
}

impl<'a> SoftGraph<'a> {
    pub(crate) fn new(
        model: &'a GcnModel,
        g: &RelationalGraph,
        target: usize,
        masked: &[Edge],
    ) -> Result<Self> {
        if g.feature_dim() != model.input_dim() {
            return Err(Error::dimension("feature columns", model.input_dim(), g.feature_dim()));
        }
        let masked_set: BTreeSet<Edge> = masked.iter().copied().collect();
        let mut edges: Vec<(usize, usize)> = masked.iter().map(|e| (e.u(), e.v())).collect();
        edges.extend(
            g.edges()
                .iter()
                .filter(|e| !masked_set.contains(e))
                .map(|e| (e.u(), e.v())),
        );
        Ok(SoftGraph {
            model,
            target,
            n: g.node_count(),
            edges,
            masked: masked.len(),
            xw0: g.features().dot(model.w0()),
        })
    }

    fn weight(&self, k: usize, s: &[f64]) -> f64 {
        if k < self.masked {
            s[k]
        } else {
            1.0
        }
    }

    /// Output probabilities for the target and, when `class` is given, the
    /// gradient of `-log p[class]` with respect to the masked weights.
    pub(crate) fn eval(&self, s: &[f64], class: Option<usize>) -> SoftEval {
        let n = self.n;
        let h = self.model.hidden_dim();
        let t = self.target;

        let mut deg = vec![1.0; n];
        for (k, &(u, v)) in self.edges.iter().enumerate() {
            let w = self.weight(k, s);
            deg[u] += w;
            deg[v] += w;
        }
        let isd: Vec<f64> = deg.iter().map(|d| 1.0 / d.sqrt()).collect();
        // normalized entries: self loops and symmetric edge entries
        let a_self: Vec<f64> = deg.iter().map(|d| 1.0 / d).collect();
        let a_edge: Vec<f64> = self
            .edges
            .iter()
            .enumerate()
            .map(|(k, &(u, v))| self.weight(k, s) * isd[u] * isd[v])
            .collect();

        let mut pre = Array2::<f64>::zeros((n, h));
        for mut row in pre.rows_mut() {
            row.assign(self.model.b0());
        }
        for i in 0..n {
            pre.row_mut(i).scaled_add(a_self[i], &self.xw0.row(i));
        }
        for (k, &(u, v)) in self.edges.iter().enumerate() {
            pre.row_mut(u).scaled_add(a_edge[k], &self.xw0.row(v));
            pre.row_mut(v).scaled_add(a_edge[k], &self.xw0.row(u));
        }
        let h1 = pre.mapv(|x| x.max(0.0));
        let hw = h1.dot(self.model.w1());

        // row t of Â, as (neighbor, coefficient, edge index)
        let mut row_t: Vec<(usize, f64, Option<usize>)> = vec![(t, a_self[t], None)];
        for (k, &(u, v)) in self.edges.iter().enumerate() {
            if u == t {
                row_t.push((v, a_edge[k], Some(k)));
            } else if v == t {
                row_t.push((u, a_edge[k], Some(k)));
            }
        }
        let mut z = self.model.b1().clone();
        for &(j, a, _) in &row_t {
            z.scaled_add(a, &hw.row(j));
        }
        let max = z.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
        let mut probs = z.mapv(|x| (x - max).exp());
        let total = probs.sum();
        probs /= total;

        let Some(class) = class else {
            return SoftEval {
                probs,
                grad: Vec::new(),
            };
        };

        let mut gz = probs.clone();
        gz[class] -= 1.0;

        // dL/dÂ entries, split into self entries and the two directions of each edge
        let mut d_self = vec![0.0; n];
        let mut d_uv = vec![0.0; self.edges.len()];
        let mut d_vu = vec![0.0; self.edges.len()];
        let mut d_pre = Array2::<f64>::zeros((n, h));
        let w1t = self.model.w1().t();
        for &(j, a, k) in &row_t {
            let dot = gz.dot(&hw.row(j));
            match k {
                None => d_self[t] += dot,
                Some(k) => {
                    if self.edges[k].0 == t {
                        d_uv[k] += dot;
                    } else {
                        d_vu[k] += dot;
                    }
                }
            }
            let dh = w1t.t().dot(&gz) * a;
            let dh = dh.into_shape_with_order(h).expect("hidden vector");
            for q in 0..h {
                if pre[[j, q]] > 0.0 {
                    d_pre[[j, q]] += dh[q];
                }
            }
        }
        for i in 0..n {
            d_self[i] += d_pre.row(i).dot(&self.xw0.row(i));
        }
        for (k, &(u, v)) in self.edges.iter().enumerate() {
            d_uv[k] += d_pre.row(u).dot(&self.xw0.row(v));
            d_vu[k] += d_pre.row(v).dot(&self.xw0.row(u));
        }

        // through the degree normalization
        let mut q = vec![0.0; n];
        for i in 0..n {
            q[i] += 2.0 * d_self[i] * a_self[i];
        }
        for k in 0..self.edges.len() {
            let (u, v) = self.edges[k];
            q[u] += (d_uv[k] + d_vu[k]) * a_edge[k];
            q[v] += (d_uv[k] + d_vu[k]) * a_edge[k];
        }
        for i in 0..n {
            q[i] *= -0.5 / deg[i];
        }
        let grad = (0..self.masked)
            .map(|k| {
                let (u, v) = self.edges[k];
                (d_uv[k] + d_vu[k]) * isd[u] * isd[v] + q[u] + q[v]
            })
            .collect();
        SoftEval { probs, grad }
    }
}

struct MaskObjective<'a> {
    soft: SoftGraph<'a>,
    class: usize,
    size_penalty: f64,
    entropy_penalty: f64,
}

impl MaskObjective<'_> {
    fn loss(&self, logits: &[f64]) -> f64 {
        let s: Vec<f64> = logits.iter().map(|&m| sigmoid(m)).collect();
        let ev = self.soft.eval(&s, None);
        self.total(&s, ev.probs[self.class])
    }

    fn total(&self, s: &[f64], p: f64) -> f64 {
        let penalty: f64 = s
            .iter()
            .map(|&x| self.size_penalty * x + self.entropy_penalty * binary_entropy(x))
            .sum();
        -p.max(1e-300).ln() + penalty
    }

    fn loss_and_grad(&self, logits: &[f64]) -> (f64, Vec<f64>) {
        let s: Vec<f64> = logits.iter().map(|&m| sigmoid(m)).collect();
        let ev = self.soft.eval(&s, Some(self.class));
        let loss = self.total(&s, ev.probs[self.class]);
        let grad = s
            .iter()
            .zip(&ev.grad)
            .map(|(&x, &dl)| {
                let xc = x.clamp(1e-15, 1.0 - 1e-15);
                let ds = dl + self.size_penalty + self.entropy_penalty * ((1.0 - xc) / xc).ln();
                ds * x * (1.0 - x)
            })
            .collect();
        (loss, grad)
    }
}

struct MaskRun {
    logits: Vec<f64>,
    losses: Vec<f64>,
}

fn optimize_mask(obj: &MaskObjective<'_>, mut logits: Vec<f64>, cfg: &ExplainConfig) -> MaskRun {
    let (mut loss, mut grad) = obj.loss_and_grad(&logits);
    let mut losses = vec![loss];
    for _ in 0..cfg.mask_steps {
        let mut step = cfg.mask_lr;
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let cand: Vec<f64> = logits
                .iter()
                .zip(&grad)
                .map(|(&m, &g)| (m - step * g).clamp(-LOGIT_CLAMP, LOGIT_CLAMP))
                .collect();
            let cand_loss = obj.loss(&cand);
            if cand_loss < loss {
                accepted = Some(cand);
                break;
            }
            step *= 0.5;
        }
        let Some(next) = accepted else { break };
        logits = next;
        (loss, grad) = obj.loss_and_grad(&logits);
        losses.push(loss);
    }
    MaskRun { logits, losses }
}

fn initial_logits(cfg: &ExplainConfig, target: usize, count: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(target as u64);
    (0..count).map(|_| rng.random_range(-0.1..=0.1)).collect()
}

fn check_target(g: &RelationalGraph, target: usize) -> Result<()> {
    if target >= g.node_count() {
        return Err(Error::Validation(format!(
            "target {target} outside 0..{}",
            g.node_count()
        )));
    }
    Ok(())
}

fn run_explainer(
    m: &GcnModel,
    g: &RelationalGraph,
    target: usize,
    cfg: &ExplainConfig,
) -> Result<(Vec<Edge>, usize, MaskRun)> {
    cfg.validate()?;
    check_target(g, target)?;
    let edges: Vec<Edge> = computation_subgraph(g, target, cfg.hops).into_iter().collect();
    if edges.is_empty() {
        return Err(Error::SingleNodeExplanation { target });
    }
    let soft = SoftGraph::new(m, g, target, &edges)?;
    let ones = vec![1.0; edges.len()];
    let base = soft.eval(&ones, None).probs;
    let class = crate::gcn::argmax_rows(&base.insert_axis(ndarray::Axis(0)))[0];
    let obj = MaskObjective {
        soft,
        class,
        size_penalty: cfg.size_penalty,
        entropy_penalty: cfg.entropy_penalty,
    };
    let run = optimize_mask(&obj, initial_logits(cfg, target, edges.len()), cfg);
    log::debug!(
        "target {target}: mask objective {:.4} -> {:.4} over {} accepted steps",
        run.losses[0],
        run.losses[run.losses.len() - 1],
        run.losses.len() - 1
    );
    Ok((edges, class, run))
}

/// Explains `m`'s prediction for `target` in `g`.
pub fn explain(m: &GcnModel, g: &RelationalGraph, target: usize, cfg: &ExplainConfig) -> Result<Explanation> {
    let (edges, class, run) = run_explainer(m, g, target, cfg)?;
    let mut scored: Vec<Relation> = edges
        .iter()
        .zip(&run.logits)
        .map(|(e, &logit)| Relation {
            u: e.u(),
            v: e.v(),
            gc: sigmoid(logit),
        })
        .collect();
    scored.sort_by(|a, b| b.gc.total_cmp(&a.gc).then((a.u, a.v).cmp(&(b.u, b.v))));
    match cfg.selection {
        Selection::TopK(k) => scored.truncate(k),
        Selection::Threshold(t) => scored.retain(|r| r.gc >= t),
    }
    Ok(Explanation {
        target,
        predicted_class: class,
        relations: scored,
        hop_radius: cfg.hops,
    })
}
