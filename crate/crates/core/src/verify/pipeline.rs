//! The retrain-and-compare evaluation: explain targets, score their
//! relations, remove the i-th best relation of every target, retrain, and
//! test per class whether predictions changed.

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::mcnemar::{mcnemar_test, McNemarResult, McNemarVariant};
use crate::boolfact::{explain_sweep, rank_sweep, RankSearchConfig, RankSweep};
use crate::error::{Error, Result};
use crate::explainer::{explain, ExplainConfig, Explanation};
use crate::gcn::{predict, train_gcn, GcnModel, TrainConfig};
use crate::graph::io::{load_graph, GraphFormat};
use crate::graph::{
    generate_ba_community, generate_ba_shapes, generate_tree_motif, remove_edges, Edge, NodeSplit,
    RelationalGraph, TreeMotif,
};
use crate::par::Execution;
use crate::pgm::{build_factor_graph, learn_weights, quantify_uncertainty, BpConfig, LearnConfig, UncertaintyReport};

/// Where the input graph comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DatasetSpec {
    BaShapes { base: usize, motifs: usize },
    BaCommunity { base: usize, motifs: usize },
    TreeCycles { height: u32, motifs: usize },
    TreeGrids { height: u32, motifs: usize },
    File { path: PathBuf, format: GraphFormat },
}

impl DatasetSpec {
    /// Motif benchmarks, where class 0 marks base-graph nodes.
    pub fn is_synthetic(&self) -> bool {
        !matches!(self, DatasetSpec::File { .. })
    }

    pub fn load(&self, seed: u64) -> Result<RelationalGraph> {
        match self {
            DatasetSpec::BaShapes { base, motifs } => generate_ba_shapes(*base, *motifs, seed),
            DatasetSpec::BaCommunity { base, motifs } => generate_ba_community(*base, *motifs, seed),
            DatasetSpec::TreeCycles { height, motifs } => generate_tree_motif(*height, TreeMotif::Cycle, *motifs, seed),
            DatasetSpec::TreeGrids { height, motifs } => generate_tree_motif(*height, TreeMotif::Grid, *motifs, seed),
            DatasetSpec::File { path, format } => load_graph(path, *format),
        }
    }
}

impl FromStr for DatasetSpec {
    type Err = Error;

    /// Benchmark names (`ba-shapes`, `ba-shapes-mini`, `ba-community`,
    /// `tree-cycles`, `tree-grids`) or a path to a graph file.
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "ba-shapes" => DatasetSpec::BaShapes { base: 300, motifs: 80 },
            "ba-shapes-mini" => DatasetSpec::BaShapes { base: 25, motifs: 5 },
            "ba-community" => DatasetSpec::BaCommunity { base: 300, motifs: 80 },
            "tree-cycles" => DatasetSpec::TreeCycles { height: 8, motifs: 60 },
            "tree-grids" => DatasetSpec::TreeGrids { height: 8, motifs: 80 },
            path => {
                let path = PathBuf::from(path);
                if !path.exists() {
                    return Err(Error::Validation(format!(
                        "`{s}` is neither a known dataset nor an existing file"
                    )));
                }
                let format = GraphFormat::from_path(&path);
                DatasetSpec::File { path, format }
            }
        })
    }
}

/// How relations of an explanation are ranked for removal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scorer {
    /// Uncertainty reduction from the factor graph.
    Bp,
    /// Explainer confidence.
    Is,
    /// Seeded uniform shuffle; a floor for the other two.
    Random,
}

impl Scorer {
    pub fn name(self) -> &'static str {
        match self {
            Scorer::Bp => "bp",
            Scorer::Is => "is",
            Scorer::Random => "random",
        }
    }
}

impl FromStr for Scorer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bp" => Ok(Scorer::Bp),
            "is" => Ok(Scorer::Is),
            "random" => Ok(Scorer::Random),
            other => Err(Error::Validation(format!("unknown scorer `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub dataset: DatasetSpec,
    pub seed: u64,
    pub train_fraction: f64,
    pub validation_fraction: f64,
    pub train: TrainConfig,
    pub explain: ExplainConfig,
    pub rank_search: RankSearchConfig,
    pub learn: LearnConfig,
    pub bp: BpConfig,
    pub scorers: Vec<Scorer>,
    pub g_max: usize,
    pub min_class_nodes: usize,
    /// Explain at most this many targets (in node order).
    pub max_targets: Option<usize>,
    pub mcnemar: McNemarVariant,
    pub execution: Execution,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            dataset: DatasetSpec::BaShapes { base: 25, motifs: 5 },
            seed: 0,
            train_fraction: 0.8,
            validation_fraction: 0.1,
            train: TrainConfig::default(),
            explain: ExplainConfig::default(),
            rank_search: RankSearchConfig::default(),
            learn: LearnConfig::default(),
            bp: BpConfig::default(),
            scorers: vec![Scorer::Bp, Scorer::Is],
            g_max: 3,
            min_class_nodes: 10,
            max_targets: None,
            mcnemar: McNemarVariant::default(),
            execution: Execution::default(),
        }
    }
}

impl PipelineConfig {
    /// Uses `seed` for the dataset, split, training, explainer, and rank search.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.train.seed = seed;
        self.explain.seed = seed;
        self.rank_search.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.g_max == 0 {
            return Err(Error::Validation("g_max must be >= 1".into()));
        }
        if self.scorers.is_empty() {
            return Err(Error::Validation("at least one scorer is required".into()));
        }
        let distinct: BTreeSet<Scorer> = self.scorers.iter().copied().collect();
        if distinct.len() != self.scorers.len() {
            return Err(Error::Validation("scorers must be distinct".into()));
        }
        self.train.validate()?;
        self.explain.validate()?;
        self.rank_search.validate()?;
        self.bp.validate()?;
        Ok(())
    }
}

/// Everything computed for one explained target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetRecord {
    pub target: usize,
    pub explanation: Explanation,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub uncertainty: Option<UncertaintyReport>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub cre_ranks: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemovalRecord {
    pub scorer: Scorer,
    pub i: usize,
    /// Targets that had an i-th relation.
    pub selected: usize,
    /// Distinct edges actually removed.
    pub removed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassResult {
    pub scorer: Scorer,
    pub i: usize,
    /// Nodes of this class in the whole graph.
    pub class_nodes: usize,
    /// Fewer class nodes than the reporting minimum; kept out of reports.
    pub suppressed: bool,
    pub result: McNemarResult,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct VerificationBundle {
    pub node_count: usize,
    pub edge_count: usize,
    pub class_count: usize,
    pub test_nodes: Vec<usize>,
    pub base_predictions: Vec<usize>,
    pub targets: Vec<TargetRecord>,
    pub skipped_targets: Vec<(usize, String)>,
    pub removals: Vec<RemovalRecord>,
    pub results: Vec<ClassResult>,
    pub warnings: Vec<String>,
}

impl VerificationBundle {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Sum of `b + c` over every class, suppressed ones included, for one
    /// scorer at depth `i`.
    pub fn flips(&self, scorer: Scorer, i: usize) -> usize {
        self.results
            .iter()
            .filter(|r| r.scorer == scorer && r.i == i)
            .map(|r| r.result.b + r.result.c)
            .sum()
    }
}

/// Removes, for every ranking, its `i`-th entry (1-based). Returns the
/// reduced graph and the number of rankings that had an `i`-th entry.
pub fn reduced_graph<'a>(
    g: &RelationalGraph,
    rankings: impl IntoIterator<Item = &'a [Edge]>,
    i: usize,
) -> Result<(RelationalGraph, usize)> {
    if i == 0 {
        return Err(Error::Validation("removal depth is 1-based".into()));
    }
    let selected: Vec<Edge> = rankings.into_iter().filter_map(|r| r.get(i - 1).copied()).collect();
    let (h, _) = remove_edges(g, selected.iter());
    Ok((h, selected.len()))
}

/// Ranking of an explanation's relations under each scorer.
fn ranking(record: &TargetRecord, scorer: Scorer, seed: u64) -> Vec<Edge> {
    match scorer {
        Scorer::Is => record.explanation.edges().collect(),
        Scorer::Bp => {
            let report = record.uncertainty.as_ref().expect("bp targets carry a report");
            let mut order = report.ranking();
            let scored: BTreeSet<Edge> = order.iter().copied().collect();
            order.extend(record.explanation.edges().filter(|e| !scored.contains(e)));
            order
        }
        Scorer::Random => {
            let mut order: Vec<Edge> = record.explanation.edges().collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(record.target as u64);
            order.shuffle(&mut rng);
            order
        }
    }
}

fn bp_score(
    sweep: &RankSweep,
    m: &GcnModel,
    class_count: usize,
    e: &Explanation,
    cfg: &PipelineConfig,
) -> Result<(UncertaintyReport, Vec<usize>)> {
    let cres = explain_sweep(sweep, m, class_count, e.target, &cfg.explain)?;
    let fg = build_factor_graph(&cres)?;
    let (fg, _) = learn_weights(&fg, &cres, &cfg.learn)?;
    let report = quantify_uncertainty(&fg, e, &cfg.bp)?;
    Ok((report, cres.ranks_used))
}

/// Runs the whole evaluation.
pub fn run_verification(cfg: &PipelineConfig) -> Result<VerificationBundle> {
    run_verification_with(cfg, |_| Ok(()))
}

/// Runs the whole evaluation, handing the bundle to `checkpoint` after each
/// completed stage and before any stage error is returned.
pub fn run_verification_with(
    cfg: &PipelineConfig,
    mut checkpoint: impl FnMut(&VerificationBundle) -> Result<()>,
) -> Result<VerificationBundle> {
    cfg.validate()?;
    let mut bundle = VerificationBundle::default();
    match run_stages(cfg, &mut bundle, &mut checkpoint) {
        Ok(()) => Ok(bundle),
        Err(e) => {
            checkpoint(&bundle)?;
            Err(e)
        }
    }
}

fn run_stages(
    cfg: &PipelineConfig,
    bundle: &mut VerificationBundle,
    checkpoint: &mut impl FnMut(&VerificationBundle) -> Result<()>,
) -> Result<()> {
    let g = cfg.dataset.load(cfg.seed).map_err(|e| e.in_stage("load"))?;
    let split = NodeSplit::stratified(&g, cfg.train_fraction, cfg.validation_fraction, cfg.seed)
        .map_err(|e| e.in_stage("split"))?;
    bundle.node_count = g.node_count();
    bundle.edge_count = g.edge_count();
    bundle.class_count = g.class_count();
    bundle.test_nodes = split.test.clone();

    let model = train_gcn(&g, &split, &cfg.train).map_err(|e| e.in_stage("train"))?;
    bundle.base_predictions = predict(&model, &g).map_err(|e| e.in_stage("train"))?;
    log::info!(
        "trained on {} nodes, {} edges; test accuracy {:.3}",
        g.node_count(),
        g.edge_count(),
        accuracy(&bundle.base_predictions, g.labels(), &split.test)
    );
    checkpoint(bundle)?;

    // explanation stage
    let mut candidates: Vec<usize> = (0..g.node_count())
        .filter(|&v| !cfg.dataset.is_synthetic() || g.labels()[v] != 0)
        .collect();
    if let Some(limit) = cfg.max_targets {
        candidates.truncate(limit);
    }
    let explained = cfg.execution.map(&candidates, |&y| explain(&model, &g, y, &cfg.explain));
    let mut records = Vec::new();
    for (y, result) in candidates.iter().zip(explained) {
        match result {
            Ok(e) if e.relations.len() > 1 => records.push(TargetRecord {
                target: *y,
                explanation: e,
                uncertainty: None,
                cre_ranks: Vec::new(),
            }),
            Ok(_) => bundle.skipped_targets.push((*y, "explanation has fewer than two relations".into())),
            Err(Error::SingleNodeExplanation { .. }) => {
                bundle.skipped_targets.push((*y, "isolated node".into()));
            }
            Err(e) => return Err(e.in_stage("explain")),
        }
    }

    if cfg.scorers.contains(&Scorer::Bp) {
        let sweep = rank_sweep(&g, &cfg.rank_search).map_err(|e| e.in_stage("cres"))?;
        log::info!(
            "rank search: start rank {}, {} ranks visited",
            sweep.start_rank,
            sweep.steps.len()
        );
        let scored = cfg
            .execution
            .map(&records, |r| bp_score(&sweep, &model, g.class_count(), &r.explanation, cfg));
        let mut kept = Vec::new();
        for (mut record, result) in records.into_iter().zip(scored) {
            match result {
                Ok((report, ranks)) => {
                    record.uncertainty = Some(report);
                    record.cre_ranks = ranks;
                    kept.push(record);
                }
                Err(e @ (Error::EmptyCreSet | Error::CreGenerationFailed { .. })) => {
                    bundle.skipped_targets.push((record.target, e.to_string()));
                }
                Err(e) => return Err(e.in_stage("score")),
            }
        }
        records = kept;
        let unconverged = records
            .iter()
            .filter_map(|r| r.uncertainty.as_ref())
            .filter(|u| !(u.converged_before && u.converged_after))
            .count();
        if unconverged > 0 {
            bundle.warnings.push(format!(
                "belief propagation did not converge for {unconverged} of {} targets",
                records.len()
            ));
        }
    }
    bundle.skipped_targets.sort();
    bundle.targets = records;
    log::info!(
        "{} targets scored, {} skipped",
        bundle.targets.len(),
        bundle.skipped_targets.len()
    );
    checkpoint(bundle)?;

    // retrain-and-compare stage
    let histogram = g.class_histogram();
    let mut test_by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for &v in &split.test {
        test_by_class.entry(g.labels()[v]).or_default().push(v);
    }
    for &scorer in &cfg.scorers {
        let rankings: Vec<Vec<Edge>> = bundle.targets.iter().map(|t| ranking(t, scorer, cfg.seed)).collect();
        for i in 1..=cfg.g_max {
            let (reduced, selected) = reduced_graph(&g, rankings.iter().map(Vec::as_slice), i)?;
            let removed = g.edge_count() - reduced.edge_count();
            bundle.removals.push(RemovalRecord {
                scorer,
                i,
                selected,
                removed,
            });
            let retrained = train_gcn(&reduced, &split, &cfg.train).map_err(|e| e.in_stage("retrain"))?;
            let after = predict(&retrained, &reduced).map_err(|e| e.in_stage("retrain"))?;
            for (&class, nodes) in &test_by_class {
                let class_nodes = histogram.get(&class).copied().unwrap_or(0);
                let result = mcnemar_test(&bundle.base_predictions, &after, g.labels(), nodes, class, cfg.mcnemar)?;
                bundle.results.push(ClassResult {
                    scorer,
                    i,
                    class_nodes,
                    suppressed: class_nodes < cfg.min_class_nodes,
                    result,
                });
            }
        }
        checkpoint(bundle)?;
    }
    bundle.warnings.extend(removal_warnings(&bundle.removals));
    for w in &bundle.warnings {
        log::warn!("{w}");
    }
    checkpoint(bundle)?;
    Ok(())
}

fn accuracy(pred: &[usize], truth: &[usize], nodes: &[usize]) -> f64 {
    if nodes.is_empty() {
        return 0.0;
    }
    nodes.iter().filter(|&&v| pred[v] == truth[v]).count() as f64 / nodes.len() as f64
}

/// Flags depths at which the BP and IS rankings removed edge counts that
/// differ by more than 10%.
fn removal_warnings(removals: &[RemovalRecord]) -> Vec<String> {
    let find = |scorer, i| removals.iter().find(|r| r.scorer == scorer && r.i == i);
    let mut out = Vec::new();
    for bp in removals.iter().filter(|r| r.scorer == Scorer::Bp) {
        let Some(is) = find(Scorer::Is, bp.i) else { continue };
        let (a, b) = (bp.removed as f64, is.removed as f64);
        if (a - b).abs() > 0.1 * a.max(b) {
            out.push(format!(
                "i={}: bp removed {} edges, is removed {}",
                bp.i, bp.removed, is.removed
            ));
        }
    }
    out
}
