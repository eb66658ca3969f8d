//! Exact calibration by enumerating the joint distribution, for factor
//! graphs small enough to list every assignment.

use super::bp::{next_assignment, JointTable};
use super::FactorGraph;
use crate::error::{Error, Result};

/// Normalized probability of every joint assignment, last variable fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Enumeration {
    states: Vec<usize>,
    probs: Vec<f64>,
}

/// Size of the joint state space, `None` on overflow.
pub fn state_space(fg: &FactorGraph) -> Option<usize> {
    fg.variables().iter().try_fold(1usize, |acc, v| acc.checked_mul(v.states))
}

/// Enumerates the joint distribution of `fg`, refusing state spaces larger
/// than `max_states`.
pub fn enumerate_joint(fg: &FactorGraph, max_states: usize) -> Result<Enumeration> {
    let size = state_space(fg).filter(|&s| s <= max_states).ok_or_else(|| {
        Error::Validation(format!(
            "joint state space of {} variables exceeds the enumeration limit {max_states}",
            fg.variable_count()
        ))
    })?;
    let states: Vec<usize> = fg.variables().iter().map(|v| v.states).collect();
    let mut scores = Vec::with_capacity(size);
    let mut assignment = vec![0; states.len()];
    loop {
        scores.push(fg.score(&assignment));
        if !next_assignment(&mut assignment, &states) {
            break;
        }
    }
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut probs: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let z: f64 = probs.iter().sum();
    probs.iter_mut().for_each(|p| *p /= z);
    Ok(Enumeration { states, probs })
}

impl Enumeration {
    fn for_each(&self, mut f: impl FnMut(&[usize], f64)) {
        let mut assignment = vec![0; self.states.len()];
        for &p in &self.probs {
            f(&assignment, p);
            next_assignment(&mut assignment, &self.states);
        }
    }

    pub fn marginal(&self, var: usize) -> Result<Vec<f64>> {
        let k = *self.states.get(var).ok_or(Error::UnknownVariable(var))?;
        let mut out = vec![0.0; k];
        self.for_each(|a, p| out[a[var]] += p);
        Ok(out)
    }

    /// Exact belief over the scope of `factor`.
    pub fn joint_distribution(&self, fg: &FactorGraph, factor: usize) -> Result<JointTable> {
        let scope = fg.factor(factor)?.scope;
        let states = scope.map(|v| self.states[v]);
        let mut probs = vec![0.0; states.iter().product()];
        self.for_each(|a, p| {
            let [x, y, z] = scope.map(|v| a[v]);
            probs[(x * states[1] + y) * states[2] + z] += p;
        });
        Ok(JointTable { factor, states, probs })
    }
}
