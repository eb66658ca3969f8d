use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use relex_core::boolfact::{generate_cres, CreSet, RankSearchConfig};
use relex_core::explainer::{explain, ExplainConfig, Explanation, Selection};
use relex_core::gcn::{train_gcn, GcnModel, TrainConfig};
use relex_core::graph::io::save_graph_json;
use relex_core::graph::{NodeSplit, RelationalGraph};
use relex_core::pgm::{build_factor_graph, learn_weights, quantify_uncertainty, BpConfig, FactorGraph, LearnConfig, UpdateRule};
use relex_core::verify::{emit_report, run_verification_with, write_uncertainty_csv, DatasetSpec, PipelineConfig, Scorer, VerificationBundle};
use relex_core::{Error, Execution, Result};

#[derive(Parser)]
#[command(name = "relex", version, about = "Uncertainty of GNN relational explanations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a benchmark graph and write it as a JSON bundle.
    Generate {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the GCN on a dataset.
    Train {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value_t = 32)]
        hidden_dim: usize,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Explain one node's prediction.
    Explain {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        explain: ExplainArgs,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        target: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build the counterfactual explanation set of one node.
    Cres {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        explain: ExplainArgs,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        target: usize,
        #[arg(long)]
        max_rank: Option<usize>,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build a factor graph from a CRE set and learn its weights.
    LearnFg {
        #[arg(long)]
        cres: PathBuf,
        #[arg(long, default_value_t = 50)]
        epochs: usize,
        #[arg(long, default_value_t = 0.1)]
        learning_rate: f64,
        /// Subtract the gradient instead of adding it.
        #[arg(long)]
        descent: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score an explanation's relations against a learned factor graph.
    Evaluate {
        #[arg(long)]
        fg: PathBuf,
        #[arg(long)]
        explanation: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the full retrain-and-compare evaluation and write its report.
    Verify {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        opts: VerifyArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rewrite the CSV report from a saved bundle.json.
    Report {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct DataArgs {
    /// Benchmark name (ba-shapes, ba-shapes-mini, ba-community, tree-cycles,
    /// tree-grids) or a graph file.
    #[arg(long, default_value = "ba-shapes-mini")]
    dataset: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl DataArgs {
    fn spec(&self) -> Result<DatasetSpec> {
        self.dataset.parse()
    }

    fn load(&self) -> Result<RelationalGraph> {
        self.spec()?.load(self.seed)
    }
}

#[derive(Args)]
struct VerifyArgs {
    /// Pipeline configuration (JSON); flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    hidden_dim: Option<usize>,
    #[arg(long)]
    hops: Option<usize>,
    /// Repeat to run several scorers.
    #[arg(long, value_parser = parse_scorer)]
    scorer: Vec<Scorer>,
    #[arg(long)]
    g_max: Option<usize>,
    #[arg(long)]
    max_targets: Option<usize>,
    /// Disable the data-parallel loops.
    #[arg(long)]
    sequential: bool,
}

#[derive(Args)]
struct ExplainArgs {
    #[arg(long, default_value_t = 2)]
    hops: usize,
    #[arg(long, default_value_t = 6)]
    top_k: usize,
    /// Keep relations with confidence at least this instead of the top k.
    #[arg(long)]
    threshold: Option<f64>,
}

impl ExplainArgs {
    fn config(&self, seed: u64) -> ExplainConfig {
        ExplainConfig {
            hops: self.hops,
            selection: match self.threshold {
                Some(t) => Selection::Threshold(t),
                None => Selection::TopK(self.top_k),
            },
            seed,
            ..ExplainConfig::default()
        }
    }
}

fn parse_scorer(s: &str) -> std::result::Result<Scorer, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn read(path: &Path) -> Result<String> {
    Ok(fs::read_to_string(path)?)
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    Ok(fs::write(path, text)?)
}

fn load_model(path: &Path, g: &RelationalGraph) -> Result<GcnModel> {
    let m = GcnModel::from_json(&read(path)?)?;
    if m.input_dim() != g.feature_dim() {
        return Err(Error::Validation(format!(
            "model expects {} features, graph has {}",
            m.input_dim(),
            g.feature_dim()
        )));
    }
    Ok(m)
}

fn verify_config(data: &DataArgs, opts: VerifyArgs) -> Result<PipelineConfig> {
    let VerifyArgs { config, hidden_dim, hops, scorer: scorers, g_max, max_targets, sequential } = opts;
    let base = match &config {
        Some(p) => serde_json::from_str(&read(p)?)?,
        None => PipelineConfig::default(),
    };
    let mut cfg = PipelineConfig {
        dataset: data.spec()?,
        ..base
    }
    .with_seed(data.seed);
    if let Some(h) = hidden_dim {
        cfg.train.hidden_dim = h;
    }
    if let Some(h) = hops {
        cfg.explain.hops = h;
    }
    if !scorers.is_empty() {
        cfg.scorers = scorers;
    }
    if let Some(g) = g_max {
        cfg.g_max = g;
    }
    if max_targets.is_some() {
        cfg.max_targets = max_targets;
    }
    if sequential {
        cfg.execution = Execution::Sequential;
        cfg.rank_search.execution = Execution::Sequential;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate { data, out } => {
            let g = data.load()?;
            save_graph_json(&g, &out)?;
            println!("{} nodes, {} edges, {} classes -> {}", g.node_count(), g.edge_count(), g.class_count(), out.display());
        }
        Command::Train { data, hidden_dim, epochs, out } => {
            let g = data.load()?;
            let defaults = PipelineConfig::default();
            let split = NodeSplit::stratified(&g, defaults.train_fraction, defaults.validation_fraction, data.seed)?;
            let cfg = TrainConfig {
                hidden_dim,
                seed: data.seed,
                max_epochs: epochs.unwrap_or(TrainConfig::default().max_epochs),
                ..TrainConfig::default()
            };
            let m = train_gcn(&g, &split, &cfg).map_err(|e| e.in_stage("train"))?;
            write(&out, &m.to_json()?)?;
        }
        Command::Explain { data, explain: args, model, target, out } => {
            let g = data.load()?;
            let m = load_model(&model, &g)?;
            let e = explain(&m, &g, target, &args.config(data.seed)).map_err(|e| e.in_stage("explain"))?;
            write(&out, &e.to_json()?)?;
        }
        Command::Cres { data, explain: args, model, target, max_rank, iterations, out } => {
            let g = data.load()?;
            let m = load_model(&model, &g)?;
            let defaults = RankSearchConfig::default();
            let rcfg = RankSearchConfig {
                seed: data.seed,
                max_rank: max_rank.unwrap_or(defaults.max_rank),
                iterations: iterations.unwrap_or(defaults.iterations),
                ..defaults
            };
            let s = generate_cres(&g, &m, target, &args.config(data.seed), &rcfg).map_err(|e| e.in_stage("cres"))?;
            write(&out, &s.to_json()?)?;
            println!("{} explanations from ranks {:?}", s.explanations.len(), s.ranks_used);
        }
        Command::LearnFg { cres, epochs, learning_rate, descent, out } => {
            let s = CreSet::from_json(&read(&cres)?)?;
            let fg = build_factor_graph(&s)?;
            let cfg = LearnConfig {
                epochs,
                learning_rate,
                rule: if descent { UpdateRule::Descent } else { UpdateRule::Ascent },
                ..LearnConfig::default()
            };
            let (fg, _) = learn_weights(&fg, &s, &cfg).map_err(|e| e.in_stage("learn"))?;
            write(&out, &fg.to_json()?)?;
        }
        Command::Evaluate { fg, explanation, out } => {
            let fg = FactorGraph::from_json(&read(&fg)?)?;
            let e = Explanation::from_json(&read(&explanation)?)?;
            let report = quantify_uncertainty(&fg, &e, &BpConfig::default()).map_err(|e| e.in_stage("evaluate"))?;
            if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            write_uncertainty_csv(&report, &out)?;
            for edge in &report.skipped {
                log::warn!("relation {edge} has no variables in the factor graph");
            }
        }
        Command::Verify { data, opts, out } => {
            let cfg = verify_config(&data, opts)?;
            let bundle = run_verification_with(&cfg, |partial| emit_report(partial, &out))?;
            for w in &bundle.warnings {
                eprintln!("warning: {w}");
            }
            println!(
                "{} targets, {} results -> {}",
                bundle.targets.len(),
                bundle.results.iter().filter(|r| !r.suppressed).count(),
                out.display()
            );
        }
        Command::Report { bundle, out } => {
            let b = VerificationBundle::from_json(&read(&bundle)?)?;
            emit_report(&b, &out)?;
        }
    }
    Ok(())
}

#[cfg(feature = "parallel")]
fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var("RELEX_THREADS") {
        let n: usize = v
            .parse()
            .map_err(|_| Error::Validation(format!("RELEX_THREADS must be a positive integer, got `{v}`")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Validation(e.to_string()))?;
    }
    Ok(())
}

#[cfg(not(feature = "parallel"))]
fn configure_threads() -> Result<()> {
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match configure_threads().and_then(|()| run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                ExitCode::from(2)
            } else {
                ExitCode::from(3)
            }
        }
    }
}
