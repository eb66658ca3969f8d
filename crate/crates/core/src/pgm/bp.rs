//! Sum-product and max-product message passing on [`FactorGraph`]s.
//!
//! Flooding schedule: every iteration recomputes all variable-to-factor
//! messages from the previous factor-to-variable messages, then all
//! factor-to-variable messages from the new variable-to-factor ones.
//! Messages are normalized after every update.

use serde::{Deserialize, Serialize};

use super::{FactorGraph, EXHAUSTIVE_MAP_LIMIT};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BpConfig {
    pub max_iters: usize,
    pub tol: f64,
    pub damping: f64,
    /// Factor graphs whose joint state space has at most this many
    /// assignments are calibrated exactly by enumeration when scoring
    /// uncertainty; 0 always passes messages.
    pub exact_states: usize,
}

impl Default for BpConfig {
    fn default() -> Self {
        BpConfig {
            max_iters: 200,
            tol: 1e-6,
            damping: 0.5,
            exact_states: 1 << 16,
        }
    }
}

impl BpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::Validation("max_iters must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.damping) {
            return Err(Error::Validation(format!("damping {} outside [0, 1)", self.damping)));
        }
        if !(self.tol > 0.0) {
            return Err(Error::Validation("tol must be > 0".into()));
        }
        Ok(())
    }
}

/// Factors over the same set of variables, merged into one table so that
/// they do not form short cycles with each other.
#[derive(Debug, Clone, PartialEq)]
struct Cluster {
    vars: [usize; 3],
    states: [usize; 3],
    /// Product of member potentials, row-major over `vars`.
    table: Vec<f64>,
}

impl Cluster {
    fn index(&self, a: [usize; 3]) -> usize {
        (a[0] * self.states[1] + a[1]) * self.states[2] + a[2]
    }

    fn assignments(&self) -> impl Iterator<Item = [usize; 3]> + '_ {
        let [s0, s1, s2] = self.states;
        (0..s0).flat_map(move |a| (0..s1).flat_map(move |b| (0..s2).map(move |c| [a, b, c])))
    }
}

/// Clusters in order of first appearance, and the cluster of each factor.
fn build_clusters(fg: &FactorGraph) -> (Vec<Cluster>, Vec<usize>) {
    let mut clusters: Vec<Cluster> = Vec::new();
    let mut by_set: std::collections::BTreeMap<[usize; 3], usize> = Default::default();
    let mut cluster_of = Vec::with_capacity(fg.factor_count());
    for f in fg.factors() {
        let mut key = f.scope;
        key.sort_unstable();
        let id = *by_set.entry(key).or_insert_with(|| {
            let states = f.scope.map(|v| fg.variables()[v].states);
            clusters.push(Cluster {
                vars: f.scope,
                states,
                table: vec![1.0; states.iter().product()],
            });
            clusters.len() - 1
        });
        let c = &mut clusters[id];
        // satisfying assignment in cluster variable order
        let mut sat = [0; 3];
        for (slot, &v) in f.scope.iter().enumerate() {
            let pos = c.vars.iter().position(|&x| x == v).expect("same variable set");
            sat[pos] = f.satisfying[slot];
        }
        let idx = c.index(sat);
        c.table[idx] *= f.weight.exp();
        cluster_of.push(id);
    }
    (clusters, cluster_of)
}

/// Messages indexed by `3 * cluster + slot`, where factors sharing a
/// variable set form one cluster; each message is a distribution over the
/// states of the variable in that slot.
#[derive(Debug, Clone, PartialEq)]
pub struct MessageState {
    pub var_to_factor: Vec<Vec<f64>>,
    pub factor_to_var: Vec<Vec<f64>>,
    pub iterations: usize,
    pub converged: bool,
    pub residual: f64,
    factor_count: usize,
}

impl MessageState {
    fn uniform(fg: &FactorGraph, clusters: &[Cluster]) -> Self {
        let msgs: Vec<Vec<f64>> = clusters
            .iter()
            .flat_map(|c| c.states.map(|k| vec![1.0 / k as f64; k]))
            .collect();
        MessageState {
            var_to_factor: msgs.clone(),
            factor_to_var: msgs,
            iterations: 0,
            converged: false,
            residual: f64::INFINITY,
            factor_count: fg.factor_count(),
        }
    }

    fn check(&self, fg: &FactorGraph, clusters: &[Cluster]) -> Result<()> {
        let expected = 3 * clusters.len();
        if self.factor_count != fg.factor_count() || self.factor_to_var.len() != expected {
            return Err(Error::dimension("message count", expected, self.factor_to_var.len()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Semiring {
    SumProduct,
    MaxProduct,
}

fn normalize(v: &mut [f64]) {
    let total: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= total);
}

/// Normalized `exp(logs)`, shifted by the maximum for stability.
fn from_logs(logs: &[f64]) -> Vec<f64> {
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut v: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
    normalize(&mut v);
    v
}

/// Sum of log incoming cluster messages per variable state.
fn incoming_logs(fg: &FactorGraph, clusters: &[Cluster], factor_to_var: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut logs: Vec<Vec<f64>> = fg.variables().iter().map(|v| vec![0.0; v.states]).collect();
    for (c, cluster) in clusters.iter().enumerate() {
        for (slot, &v) in cluster.vars.iter().enumerate() {
            for (l, m) in logs[v].iter_mut().zip(&factor_to_var[3 * c + slot]) {
                *l += m.ln();
            }
        }
    }
    logs
}

fn variable_messages(fg: &FactorGraph, clusters: &[Cluster], factor_to_var: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let logs = incoming_logs(fg, clusters, factor_to_var);
    let mut out = Vec::with_capacity(factor_to_var.len());
    for (c, cluster) in clusters.iter().enumerate() {
        for (slot, &v) in cluster.vars.iter().enumerate() {
            let own = &factor_to_var[3 * c + slot];
            let excl: Vec<f64> = logs[v].iter().zip(own).map(|(l, m)| l - m.ln()).collect();
            out.push(from_logs(&excl));
        }
    }
    out
}

fn factor_messages(clusters: &[Cluster], var_to_factor: &[Vec<f64>], semiring: Semiring) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(var_to_factor.len());
    for (c, cluster) in clusters.iter().enumerate() {
        let nu = |slot: usize| &var_to_factor[3 * c + slot];
        for slot in 0..3 {
            let mut msg = vec![0.0; cluster.states[slot]];
            for x in cluster.assignments() {
                let mut term = cluster.table[cluster.index(x)];
                for o in (0..3).filter(|&o| o != slot) {
                    term *= nu(o)[x[o]];
                }
                match semiring {
                    Semiring::SumProduct => msg[x[slot]] += term,
                    Semiring::MaxProduct => msg[x[slot]] = msg[x[slot]].max(term),
                }
            }
            normalize(&mut msg);
            out.push(msg);
        }
    }
    out
}

/// Blends `computed` into `old` and returns the largest absolute change.
fn damp(old: &mut [Vec<f64>], computed: Vec<Vec<f64>>, damping: f64) -> f64 {
    let mut residual = 0.0f64;
    for (o, c) in old.iter_mut().zip(computed) {
        let mut next: Vec<f64> = o.iter().zip(&c).map(|(a, b)| damping * a + (1.0 - damping) * b).collect();
        normalize(&mut next);
        for (a, b) in o.iter().zip(&next) {
            residual = residual.max((a - b).abs());
        }
        *o = next;
    }
    residual
}

fn pass_messages(fg: &FactorGraph, cfg: &BpConfig, semiring: Semiring) -> Result<MessageState> {
    cfg.validate()?;
    let (clusters, _) = build_clusters(fg);
    let mut ms = MessageState::uniform(fg, &clusters);
    for iter in 1..=cfg.max_iters {
        let v2f = variable_messages(fg, &clusters, &ms.factor_to_var);
        let r1 = damp(&mut ms.var_to_factor, v2f, cfg.damping);
        let f2v = factor_messages(&clusters, &ms.var_to_factor, semiring);
        let r2 = damp(&mut ms.factor_to_var, f2v, cfg.damping);
        ms.iterations = iter;
        ms.residual = r1.max(r2);
        if ms.residual < cfg.tol {
            ms.converged = true;
            break;
        }
    }
    Ok(ms)
}

/// Sum-product belief propagation.
pub fn run_bp(fg: &FactorGraph, cfg: &BpConfig) -> Result<MessageState> {
    pass_messages(fg, cfg, Semiring::SumProduct)
}

/// Max-product message passing with the same schedule as [`run_bp`].
pub fn run_max_product(fg: &FactorGraph, cfg: &BpConfig) -> Result<MessageState> {
    pass_messages(fg, cfg, Semiring::MaxProduct)
}

/// Belief of one variable: normalized product of its incoming factor
/// messages. Variables without factors get the uniform distribution.
pub fn marginal(fg: &FactorGraph, ms: &MessageState, var: usize) -> Result<Vec<f64>> {
    let (clusters, _) = build_clusters(fg);
    ms.check(fg, &clusters)?;
    if var >= fg.variable_count() {
        return Err(Error::UnknownVariable(var));
    }
    let logs = incoming_logs(fg, &clusters, &ms.factor_to_var);
    Ok(from_logs(&logs[var]))
}

/// Normalized belief over the assignments of one factor's scope.
#[derive(Debug, Clone, PartialEq)]
pub struct JointTable {
    pub factor: usize,
    pub states: [usize; 3],
    /// Row-major over the scope, first variable slowest.
    pub probs: Vec<f64>,
}

impl JointTable {
    fn index(&self, a: [usize; 3]) -> usize {
        (a[0] * self.states[1] + a[1]) * self.states[2] + a[2]
    }

    pub fn get(&self, assignment: [usize; 3]) -> f64 {
        self.probs[self.index(assignment)]
    }

    /// Marginal over the first two scope variables, summing out the third.
    pub fn pair(&self, a: usize, b: usize) -> f64 {
        (0..self.states[2]).map(|c| self.get([a, b, c])).sum()
    }
}

/// Belief over a factor's scope: the potentials of every factor on the same
/// variables times the incoming variable messages, where the variable
/// messages are derived from the final factor messages.
pub fn joint_distribution(fg: &FactorGraph, ms: &MessageState, factor: usize) -> Result<JointTable> {
    let (clusters, cluster_of) = build_clusters(fg);
    ms.check(fg, &clusters)?;
    let f = fg.factor(factor)?;
    let c = cluster_of[factor];
    let cluster = &clusters[c];
    let v2f = variable_messages(fg, &clusters, &ms.factor_to_var);
    let nu = |slot: usize| &v2f[3 * c + slot];
    // position of each factor slot within the cluster
    let pos = f.scope.map(|v| cluster.vars.iter().position(|&x| x == v).expect("same variable set"));
    let states = f.scope.map(|v| fg.variables()[v].states);
    let mut table = JointTable {
        factor,
        states,
        probs: vec![0.0; states.iter().product()],
    };
    for x in cluster.assignments() {
        let p = cluster.table[cluster.index(x)] * nu(0)[x[0]] * nu(1)[x[1]] * nu(2)[x[2]];
        let idx = table.index(pos.map(|q| x[q]));
        table.probs[idx] = p;
    }
    normalize(&mut table.probs);
    Ok(table)
}

/// Advances a mixed-radix counter, last variable fastest. False on wrap.
pub(crate) fn next_assignment(assignment: &mut [usize], states: &[usize]) -> bool {
    for i in (0..assignment.len()).rev() {
        assignment[i] += 1;
        if assignment[i] < states[i] {
            return true;
        }
        assignment[i] = 0;
    }
    false
}

/// Most probable assignment. Exhaustive up to [`EXHAUSTIVE_MAP_LIMIT`]
/// variables, where ties go to the lexicographically smallest assignment;
/// max-product decoding beyond that, ties going to the lowest state.
pub fn map_assignment(fg: &FactorGraph, cfg: &BpConfig) -> Result<Vec<usize>> {
    let states: Vec<usize> = fg.variables().iter().map(|v| v.states).collect();
    if states.len() <= EXHAUSTIVE_MAP_LIMIT {
        let mut assignment = vec![0; states.len()];
        let mut best = assignment.clone();
        let mut best_score = fg.score(&assignment);
        while next_assignment(&mut assignment, &states) {
            let score = fg.score(&assignment);
            if score > best_score {
                best_score = score;
                best.clone_from(&assignment);
            }
        }
        return Ok(best);
    }
    let ms = run_max_product(fg, cfg)?;
    (0..states.len())
        .map(|v| {
            let belief = marginal(fg, &ms, v)?;
            let mut arg = 0;
            for (s, &p) in belief.iter().enumerate() {
                if p > belief[arg] {
                    arg = s;
                }
            }
            Ok(arg)
        })
        .collect()
}
