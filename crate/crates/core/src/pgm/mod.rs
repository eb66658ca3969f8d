//! Log-linear factor graph over the relations of a counterfactual
//! explanation set.
//!
//! Every entity mentioned by a relation becomes a binary variable ("takes
//! part in the explanation of the target"), plus one target variable `T`.
//! Each relation `(x_i, x_j)` contributes the clause `x_i ∧ x_j ∧ T`, encoded
//! as a factor whose potential is `exp(w)` on the satisfying assignment and 1
//! elsewhere. With more than two classes `T` takes one state per class and
//! each relation gets one clause per class.

pub mod bp;
pub mod exact;
pub mod learn;
pub mod uncertainty;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::boolfact::CreSet;
use crate::error::{Error, Result};
use crate::graph::Edge;

pub use bp::{joint_distribution, map_assignment, marginal, run_bp, run_max_product, BpConfig, JointTable, MessageState};
pub use exact::{enumerate_joint, Enumeration};
pub use learn::{initial_weights, learn_weights, LearnConfig, LearnTrace, UpdateRule};
pub use uncertainty::{inject_explanation_factors, quantify_uncertainty, RelationUncertainty, UncertaintyReport};

/// Largest variable count for which MAP is found by enumeration.
pub const EXHAUSTIVE_MAP_LIMIT: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Variable {
    /// Graph node this variable stands for; `None` for the target variable.
    pub entity: Option<usize>,
    pub states: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FactorKind {
    Learned,
    Injected,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Factor {
    pub scope: [usize; 3],
    /// The single assignment whose potential is `exp(weight)`.
    pub satisfying: [usize; 3],
    pub weight: f64,
    pub kind: FactorKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relation: Option<Edge>,
}

impl Factor {
    pub fn potential(&self, assignment: [usize; 3]) -> f64 {
        if assignment == self.satisfying {
            self.weight.exp()
        } else {
            1.0
        }
    }

    pub fn is_satisfied(&self, full: &[usize]) -> bool {
        (0..3).all(|s| full[self.scope[s]] == self.satisfying[s])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "FactorGraphFile", into = "FactorGraphFile")]
pub struct FactorGraph {
    variables: Vec<Variable>,
    factors: Vec<Factor>,
    entity_vars: BTreeMap<usize, usize>,
    target_var: Option<usize>,
}

#[derive(Serialize, Deserialize)]
struct FactorGraphFile {
    variables: Vec<Variable>,
    factors: Vec<Factor>,
}

impl TryFrom<FactorGraphFile> for FactorGraph {
    type Error = Error;

    fn try_from(f: FactorGraphFile) -> Result<Self> {
        let mut fg = FactorGraph::new(f.variables)?;
        for factor in f.factors {
            fg.add_factor(factor)?;
        }
        Ok(fg)
    }
}

impl From<FactorGraph> for FactorGraphFile {
    fn from(fg: FactorGraph) -> Self {
        FactorGraphFile {
            variables: fg.variables,
            factors: fg.factors,
        }
    }
}

impl FactorGraph {
    /// A graph with the given variables and no factors. At most one variable
    /// may be the target (`entity: None`); entities must be distinct.
    pub fn new(variables: Vec<Variable>) -> Result<Self> {
        let mut entity_vars = BTreeMap::new();
        let mut target_var = None;
        for (id, v) in variables.iter().enumerate() {
            if v.states < 2 {
                return Err(Error::Validation(format!("variable {id} needs at least 2 states")));
            }
            match v.entity {
                Some(e) => {
                    if entity_vars.insert(e, id).is_some() {
                        return Err(Error::Validation(format!("entity {e} has two variables")));
                    }
                }
                None => {
                    if target_var.replace(id).is_some() {
                        return Err(Error::Validation("more than one target variable".into()));
                    }
                }
            }
        }
        Ok(FactorGraph {
            variables,
            factors: Vec::new(),
            entity_vars,
            target_var,
        })
    }

    /// Binary variables without entity labels, for generic use.
    pub fn with_binary_variables(count: usize) -> Self {
        let variables = (0..count)
            .map(|i| Variable {
                entity: Some(i),
                states: 2,
            })
            .collect();
        FactorGraph::new(variables).expect("distinct entities")
    }

    pub fn add_factor(&mut self, f: Factor) -> Result<usize> {
        for s in 0..3 {
            let var = *self.variables.get(f.scope[s]).ok_or(Error::UnknownVariable(f.scope[s]))?;
            if f.satisfying[s] >= var.states {
                return Err(Error::Validation(format!(
                    "state {} out of range for variable {}",
                    f.satisfying[s], f.scope[s]
                )));
            }
        }
        let [a, b, c] = f.scope;
        if a == b || a == c || b == c {
            return Err(Error::Validation(format!("factor scope {:?} repeats a variable", f.scope)));
        }
        if !f.weight.is_finite() {
            return Err(Error::Validation(format!("factor weight {} is not finite", f.weight)));
        }
        self.factors.push(f);
        Ok(self.factors.len() - 1)
    }

    pub fn variables(&self) -> &[Variable] {
        &self.variables
    }

    pub fn variable_count(&self) -> usize {
        self.variables.len()
    }

    pub fn factors(&self) -> &[Factor] {
        &self.factors
    }

    pub fn factor(&self, id: usize) -> Result<&Factor> {
        self.factors.get(id).ok_or(Error::UnknownFactor(id))
    }

    pub fn factor_count(&self) -> usize {
        self.factors.len()
    }

    pub fn set_weight(&mut self, id: usize, weight: f64) -> Result<()> {
        let f = self.factors.get_mut(id).ok_or(Error::UnknownFactor(id))?;
        f.weight = weight;
        Ok(())
    }

    pub fn entity_variable(&self, entity: usize) -> Option<usize> {
        self.entity_vars.get(&entity).copied()
    }

    pub fn target_variable(&self) -> Option<usize> {
        self.target_var
    }

    /// Learned factors attached to `relation`, in class order.
    pub fn learned_factors(&self, relation: Edge) -> Vec<usize> {
        self.factors
            .iter()
            .enumerate()
            .filter(|(_, f)| f.kind == FactorKind::Learned && f.relation == Some(relation))
            .map(|(i, _)| i)
            .collect()
    }

    /// Sum of the weights of the factors satisfied by a full assignment.
    pub fn score(&self, assignment: &[usize]) -> f64 {
        self.factors
            .iter()
            .filter(|f| f.is_satisfied(assignment))
            .map(|f| f.weight)
            .sum()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Target-variable state that a relation's clause requires for `class`.
pub(crate) fn target_state(class_count: usize, class: usize) -> usize {
    if class_count <= 2 {
        1
    } else {
        class
    }
}

/// Factor graph for a CRE set, with all learned weights zero.
pub fn build_factor_graph(s: &CreSet) -> Result<FactorGraph> {
    if s.explanations.is_empty() || s.relation_index.is_empty() {
        return Err(Error::EmptyCreSet);
    }
    let entities: BTreeSet<usize> = s.relations().flat_map(|e| e.endpoints()).collect();
    let target_states = if s.class_count <= 2 { 2 } else { s.class_count };
    let mut variables: Vec<Variable> = entities
        .iter()
        .map(|&e| Variable {
            entity: Some(e),
            states: 2,
        })
        .collect();
    variables.push(Variable {
        entity: None,
        states: target_states,
    });
    let mut fg = FactorGraph::new(variables)?;
    let t = fg.target_variable().expect("target variable added");
    let clause_classes: Vec<usize> = if s.class_count <= 2 {
        vec![1]
    } else {
        (0..s.class_count).collect()
    };
    for relation in s.relations() {
        let a = fg.entity_variable(relation.u()).expect("entity variable");
        let b = fg.entity_variable(relation.v()).expect("entity variable");
        for &c in &clause_classes {
            fg.add_factor(Factor {
                scope: [a, b, t],
                satisfying: [1, 1, c],
                weight: 0.0,
                kind: FactorKind::Learned,
                relation: Some(relation),
            })?;
        }
    }
    Ok(fg)
}

/// Number of explanations in `s` that contain `relation`.
pub fn count_true_clauses(s: &CreSet, relation: Edge) -> Result<usize> {
    if !s.relation_index.contains_key(&relation) {
        return Err(Error::UnknownRelation(relation));
    }
    Ok(s.explanations.iter().filter(|e| e.edges().any(|r| r == relation)).count())
}

/// Clause count for one learned factor: explanations containing its relation
/// whose predicted class matches the factor's target state.
pub(crate) fn factor_clause_count(fg: &FactorGraph, s: &CreSet, factor: usize) -> Result<usize> {
    let f = fg.factor(factor)?;
    let relation = f.relation.ok_or(Error::UnknownFactor(factor))?;
    Ok(s.explanations
        .iter()
        .filter(|e| target_state(s.class_count, e.predicted_class) == f.satisfying[2])
        .filter(|e| e.edges().any(|r| r == relation))
        .count())
}
