//! Weight learning for the clause factors.
//!
//! The log-likelihood gradient for clause `i` is `n_i - E[n_i]`. The
//! expectation needs the partition function, so it is replaced by the clause
//! count under the current MAP assignment, applied to every explanation of
//! the set (`|S|` if the MAP satisfies the clause, 0 otherwise).

use serde::{Deserialize, Serialize};

use super::bp::{map_assignment, BpConfig};
use super::{factor_clause_count, FactorGraph, FactorKind};
use crate::boolfact::CreSet;
use crate::error::{Error, Result};

/// Direction of the weight update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UpdateRule {
    /// `w += ε·(n - E[n])`, climbing the likelihood.
    #[default]
    Ascent,
    /// `w -= ε·(n - E[n])`.
    Descent,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LearnConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub rule: UpdateRule,
    pub weight_clip: f64,
    /// Used for MAP decoding on graphs too large to enumerate.
    pub bp: BpConfig,
}

impl Default for LearnConfig {
    fn default() -> Self {
        LearnConfig {
            learning_rate: 0.1,
            epochs: 50,
            rule: UpdateRule::Ascent,
            weight_clip: 10.0,
            bp: BpConfig::default(),
        }
    }
}

/// Per-epoch gradients and the weights after each update, both indexed by
/// factor.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LearnTrace {
    pub gradients: Vec<Vec<f64>>,
    pub weights: Vec<Vec<f64>>,
}

/// Sets every learned factor's weight to the mean confidence of its relation
/// over the explanations that contain it.
pub fn initial_weights(fg: &mut FactorGraph, s: &CreSet) -> Result<()> {
    for id in 0..fg.factor_count() {
        let f = *fg.factor(id)?;
        if f.kind != FactorKind::Learned {
            continue;
        }
        let Some(relation) = f.relation else { continue };
        let scores: Vec<f64> = s
            .explanations
            .iter()
            .flat_map(|e| e.relations.iter().filter(|r| r.edge() == relation).map(|r| r.gc))
            .collect();
        let mean = if scores.is_empty() {
            0.0
        } else {
            scores.iter().sum::<f64>() / scores.len() as f64
        };
        fg.set_weight(id, mean)?;
    }
    Ok(())
}

/// Learns clause weights from the CRE set, starting from
/// [`initial_weights`].
pub fn learn_weights(fg: &FactorGraph, s: &CreSet, cfg: &LearnConfig) -> Result<(FactorGraph, LearnTrace)> {
    if !(cfg.learning_rate >= 0.0 && cfg.learning_rate.is_finite()) {
        return Err(Error::Validation(format!("learning rate {} must be >= 0", cfg.learning_rate)));
    }
    let mut fg = fg.clone();
    initial_weights(&mut fg, s)?;
    let learned: Vec<usize> = (0..fg.factor_count())
        .filter(|&i| fg.factors()[i].kind == FactorKind::Learned && fg.factors()[i].relation.is_some())
        .collect();
    let counts = learned
        .iter()
        .map(|&i| factor_clause_count(&fg, s, i).map(|c| c as f64))
        .collect::<Result<Vec<_>>>()?;
    let total = s.explanations.len() as f64;
    let sign = match cfg.rule {
        UpdateRule::Ascent => 1.0,
        UpdateRule::Descent => -1.0,
    };
    let mut trace = LearnTrace::default();
    for _ in 0..cfg.epochs {
        let map = map_assignment(&fg, &cfg.bp)?;
        let mut grad = vec![0.0; fg.factor_count()];
        for (&i, &n) in learned.iter().zip(&counts) {
            let expected = if fg.factors()[i].is_satisfied(&map) { total } else { 0.0 };
            grad[i] = n - expected;
        }
        for &i in &learned {
            let w = fg.factors()[i].weight + sign * cfg.learning_rate * grad[i];
            fg.set_weight(i, w.clamp(-cfg.weight_clip, cfg.weight_clip))?;
        }
        trace.weights.push(fg.factors().iter().map(|f| f.weight).collect());
        let done = grad.iter().all(|&g| g == 0.0);
        trace.gradients.push(grad);
        if done {
            break;
        }
    }
    Ok((fg, trace))
}
