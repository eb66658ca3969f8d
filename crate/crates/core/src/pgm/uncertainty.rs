//! Uncertainty of an explanation's relations, read off the change in the
//! calibrated clause beliefs when the explanation is injected as factors.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::bp::{joint_distribution, run_bp, BpConfig, JointTable, MessageState};
use super::exact::{enumerate_joint, state_space, Enumeration};
use super::{target_state, Factor, FactorGraph, FactorKind};
use crate::error::Result;
use crate::explainer::Explanation;
use crate::graph::Edge;

/// Adds one injected factor per explanation relation whose endpoints are
/// both variables of `fg`, weighted by the relation's confidence. Returns the
/// new graph and the relations that had to be skipped.
pub fn inject_explanation_factors(fg: &FactorGraph, e: &Explanation) -> (FactorGraph, Vec<Edge>) {
    let mut out = fg.clone();
    let mut skipped = Vec::new();
    let t = fg.target_variable();
    let class_count = t.map_or(2, |t| fg.variables()[t].states);
    let state = target_state(class_count, e.predicted_class);
    for r in &e.relations {
        let edge = r.edge();
        let vars = (fg.entity_variable(r.u), fg.entity_variable(r.v), t);
        let (Some(a), Some(b), Some(t)) = vars else {
            skipped.push(edge);
            continue;
        };
        if state >= class_count {
            skipped.push(edge);
            continue;
        }
        out.add_factor(Factor {
            scope: [a, b, t],
            satisfying: [1, 1, state],
            weight: r.gc,
            kind: FactorKind::Injected,
            relation: Some(edge),
        })
        .expect("scope built from existing variables");
    }
    (out, skipped)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationUncertainty {
    pub edge: Edge,
    pub gc: f64,
    /// Mean satisfying-assignment belief of the relation's clauses before injection.
    pub p_before: f64,
    /// The same belief after injection.
    pub p_after: f64,
    /// Uncertainty reduction `p_after - p_before`.
    pub delta: f64,
    /// `-ln|delta|`, infinite when `delta` is zero.
    pub neg_log_delta: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyReport {
    pub target: usize,
    /// Sorted by `delta` descending, ties by edge.
    pub entries: Vec<RelationUncertainty>,
    /// Relations whose endpoints are not variables of the factor graph.
    pub skipped: Vec<Edge>,
    /// Relations injected but without a learned clause to read a belief from.
    pub unscored: Vec<Edge>,
    pub converged_before: bool,
    pub converged_after: bool,
}

impl UncertaintyReport {
    /// Relations ordered from lowest to highest uncertainty.
    pub fn ranking(&self) -> Vec<Edge> {
        self.entries.iter().map(|r| r.edge).collect()
    }
}

/// A calibrated factor graph: converged (or final) messages, or the exact
/// joint distribution when it is small enough to enumerate.
enum Calibration {
    Messages(MessageState),
    Exact(Enumeration),
}

impl Calibration {
    fn run(fg: &FactorGraph, cfg: &BpConfig) -> Result<Self> {
        if state_space(fg).is_some_and(|s| s <= cfg.exact_states) {
            return Ok(Calibration::Exact(enumerate_joint(fg, cfg.exact_states)?));
        }
        Ok(Calibration::Messages(run_bp(fg, cfg)?))
    }

    fn table(&self, fg: &FactorGraph, f: usize) -> Result<JointTable> {
        match self {
            Calibration::Messages(ms) => joint_distribution(fg, ms, f),
            Calibration::Exact(e) => e.joint_distribution(fg, f),
        }
    }

    fn converged(&self) -> bool {
        match self {
            Calibration::Messages(ms) => ms.converged,
            Calibration::Exact(_) => true,
        }
    }

    fn residual(&self) -> f64 {
        match self {
            Calibration::Messages(ms) => ms.residual,
            Calibration::Exact(_) => 0.0,
        }
    }
}

fn clause_belief(fg: &FactorGraph, cal: &Calibration, factors: &[usize]) -> Result<f64> {
    let mut total = 0.0;
    for &f in factors {
        total += cal.table(fg, f)?.get(fg.factor(f)?.satisfying);
    }
    Ok(total / factors.len() as f64)
}

/// Calibrates `fg`, injects `e`, recalibrates, and reports for each injected
/// relation with learned clauses how much its satisfying belief grew.
/// Graphs within `cfg.exact_states` are calibrated exactly.
pub fn quantify_uncertainty(fg: &FactorGraph, e: &Explanation, cfg: &BpConfig) -> Result<UncertaintyReport> {
    cfg.validate()?;
    let before = Calibration::run(fg, cfg)?;
    let (injected, skipped) = inject_explanation_factors(fg, e);
    let after = Calibration::run(&injected, cfg)?;
    let skipped_set: BTreeSet<Edge> = skipped.iter().copied().collect();
    let mut entries = Vec::new();
    let mut unscored = Vec::new();
    for r in &e.relations {
        let edge = r.edge();
        if skipped_set.contains(&edge) {
            continue;
        }
        let factors = fg.learned_factors(edge);
        if factors.is_empty() {
            unscored.push(edge);
            continue;
        }
        let p_before = clause_belief(fg, &before, &factors)?;
        let p_after = clause_belief(&injected, &after, &factors)?;
        let delta = p_after - p_before;
        entries.push(RelationUncertainty {
            edge,
            gc: r.gc,
            p_before,
            p_after,
            delta,
            neg_log_delta: if delta == 0.0 { f64::INFINITY } else { -delta.abs().ln() },
            converged: before.converged() && after.converged(),
        });
    }
    entries.sort_by(|a, b| b.delta.total_cmp(&a.delta).then(a.edge.cmp(&b.edge)));
    if !(before.converged() && after.converged()) {
        log::debug!(
            "belief propagation for target {} did not converge (residuals {:.2e}, {:.2e})",
            e.target,
            before.residual(),
            after.residual()
        );
    }
    Ok(UncertaintyReport {
        target: e.target,
        entries,
        skipped,
        unscored,
        converged_before: before.converged(),
        converged_after: after.converged(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::explainer::Relation;
    use crate::pgm::build_factor_graph;
    use crate::pgm::tests::cre;

    fn explanation(rels: &[(usize, usize, f64)]) -> Explanation {
        Explanation {
            target: 0,
            predicted_class: 1,
            relations: rels.iter().map(|&(u, v, gc)| Relation { u, v, gc }).collect(),
            hop_radius: 2,
        }
    }

    fn exact() -> BpConfig {
        BpConfig {
            max_iters: 200,
            tol: 1e-14,
            damping: 0.0,
            exact_states: 0,
        }
    }

    #[test]
    fn injection_counts_and_skips() {
        let s = cre(2, &[(&[(0, 1, 0.5), (1, 2, 0.3)], 1)]);
        let fg = build_factor_graph(&s).unwrap();
        let (g1, skipped) = inject_explanation_factors(&fg, &explanation(&[(0, 1, 0.9)]));
        assert_eq!(g1.factor_count(), fg.factor_count() + 1);
        assert!(skipped.is_empty());
        assert_eq!(g1.factors()[..fg.factor_count()], fg.factors()[..]);
        let (g2, skipped) = inject_explanation_factors(&fg, &explanation(&[(7, 8, 0.9)]));
        assert_eq!(g2, fg);
        assert_eq!(skipped, vec![Edge::new(7, 8).unwrap()]);
    }

    #[test]
    fn zero_confidence_changes_nothing() {
        let s = cre(2, &[(&[(0, 1, 0.5), (1, 2, 0.3)], 1), (&[(0, 1, 0.2)], 1)]);
        let mut fg = build_factor_graph(&s).unwrap();
        crate::pgm::initial_weights(&mut fg, &s).unwrap();
        let rep = quantify_uncertainty(&fg, &explanation(&[(0, 1, 0.0), (1, 2, 0.0)]), &exact()).unwrap();
        assert_eq!(rep.entries.len(), 2);
        for r in &rep.entries {
            assert!(r.delta.abs() < 1e-12);
        }
    }

    #[test]
    fn single_factor_matches_enumeration() {
        let s = cre(2, &[(&[(0, 1, 0.5)], 1)]);
        let mut fg = build_factor_graph(&s).unwrap();
        fg.set_weight(0, 2f64.ln()).unwrap();
        let rep = quantify_uncertainty(&fg, &explanation(&[(0, 1, 0.69)]), &exact()).unwrap();
        // before: e^w / (e^w + 7); after: both factors share the satisfying cell
        let w = 2f64.ln();
        let p = w.exp() / (w.exp() + 7.0);
        let q = (w + 0.69f64).exp() / ((w + 0.69f64).exp() + 7.0);
        let r = &rep.entries[0];
        assert!((r.p_before - p).abs() < 1e-12);
        assert!((r.p_after - q).abs() < 1e-12);
        assert!((r.delta - (q - p)).abs() < 1e-12);
        assert!(r.delta > 0.0);
    }

    #[test]
    fn zero_delta_maps_to_infinity() {
        let s = cre(2, &[(&[(0, 1, 0.5)], 1)]);
        let fg = build_factor_graph(&s).unwrap();
        let rep = quantify_uncertainty(&fg, &explanation(&[(0, 1, 0.0)]), &exact()).unwrap();
        assert_eq!(rep.entries[0].delta, 0.0);
        assert_eq!(rep.entries[0].neg_log_delta, f64::INFINITY);
    }

    #[test]
    fn relations_without_clauses_are_unscored() {
        let s = cre(2, &[(&[(0, 1, 0.5), (1, 2, 0.3)], 1)]);
        let fg = build_factor_graph(&s).unwrap();
        let rep = quantify_uncertainty(&fg, &explanation(&[(0, 2, 0.5), (0, 1, 0.4), (3, 4, 0.2)]), &exact()).unwrap();
        assert_eq!(rep.ranking(), vec![Edge::new(0, 1).unwrap()]);
        assert_eq!(rep.unscored, vec![Edge::new(0, 2).unwrap()]);
        assert_eq!(rep.skipped, vec![Edge::new(3, 4).unwrap()]);
    }
}
