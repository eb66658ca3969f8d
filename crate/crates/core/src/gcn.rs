//! Two-layer graph convolutional network on dense matrices.
//!
//! `probs = softmax(Â · relu(Â X W0 + b0) · W1 + b1)` with
//! `Â = D̃^{-1/2} (A + I) D̃^{-1/2}`. The biases are zero-initialized; without
//! them a constant feature matrix gives every node the same prediction.
//! Gradients are derived by hand and trained with plain full-batch gradient
//! descent so that runs are bit-reproducible for a seed.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{adjacency, BooleanMatrix, NodeSplit, RelationalGraph};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub hidden_dim: usize,
    pub max_epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    /// Early stopping is not considered before this many epochs; plain
    /// gradient descent from a small init sits on a plateau for a while.
    pub warmup_epochs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            hidden_dim: 32,
            max_epochs: 10_000,
            learning_rate: 0.1,
            seed: 0,
            patience: 200,
            warmup_epochs: 10_000,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_dim == 0 {
            return Err(Error::Validation("hidden_dim must be >= 1".into()));
        }
        if self.max_epochs == 0 {
            return Err(Error::Validation("max_epochs must be >= 1".into()));
        }
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(Error::Validation("learning_rate must be finite and >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GcnModel {
    w0: Array2<f64>,
    b0: Array1<f64>,
    w1: Array2<f64>,
    b1: Array1<f64>,
    seed: u64,
}

impl GcnModel {
    /// Model with zero biases.
    pub fn new(w0: Array2<f64>, w1: Array2<f64>, seed: u64) -> Result<Self> {
        let b0 = Array1::zeros(w0.ncols());
        let b1 = Array1::zeros(w1.ncols());
        Self::with_biases(w0, b0, w1, b1, seed)
    }

    pub fn with_biases(w0: Array2<f64>, b0: Array1<f64>, w1: Array2<f64>, b1: Array1<f64>, seed: u64) -> Result<Self> {
        if w0.ncols() != w1.nrows() {
            return Err(Error::dimension("hidden dimension", w0.ncols(), w1.nrows()));
        }
        if b0.len() != w0.ncols() {
            return Err(Error::dimension("hidden bias", w0.ncols(), b0.len()));
        }
        if b1.len() != w1.ncols() {
            return Err(Error::dimension("output bias", w1.ncols(), b1.len()));
        }
        if w0.iter().chain(&w1).chain(&b0).chain(&b1).any(|x| !x.is_finite()) {
            return Err(Error::Validation("non-finite model weight".into()));
        }
        Ok(GcnModel { w0, b0, w1, b1, seed })
    }

    /// Seeded uniform `[-0.1, 0.1]` initialization.
    pub fn init(input_dim: usize, hidden_dim: usize, classes: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |r, c| Array2::from_shape_fn((r, c), |_| rng.random_range(-0.1..=0.1));
        let w0 = draw(input_dim, hidden_dim);
        let w1 = draw(hidden_dim, classes);
        GcnModel {
            w0,
            b0: Array1::zeros(hidden_dim),
            w1,
            b1: Array1::zeros(classes),
            seed,
        }
    }

    pub fn w0(&self) -> &Array2<f64> {
        &self.w0
    }

    pub fn w1(&self) -> &Array2<f64> {
        &self.w1
    }

    pub fn b0(&self) -> &Array1<f64> {
        &self.b0
    }

    pub fn b1(&self) -> &Array1<f64> {
        &self.b1
    }

    pub fn input_dim(&self) -> usize {
        self.w0.nrows()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w0.ncols()
    }

    pub fn classes(&self) -> usize {
        self.w1.ncols()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&ModelFile::from(self))?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let f: ModelFile = serde_json::from_str(text)?;
        f.try_into()
    }
}

/// On-disk model: dimensions, seed and row-major weights. serde_json writes
/// shortest round-trip decimals, so weights reload bit-exactly.
#[derive(Debug, Serialize, Deserialize)]
struct ModelFile {
    input_dim: usize,
    hidden_dim: usize,
    classes: usize,
    seed: u64,
    w0: Vec<f64>,
    b0: Vec<f64>,
    w1: Vec<f64>,
    b1: Vec<f64>,
}

impl From<&GcnModel> for ModelFile {
    fn from(m: &GcnModel) -> Self {
        ModelFile {
            input_dim: m.input_dim(),
            hidden_dim: m.hidden_dim(),
            classes: m.classes(),
            seed: m.seed,
            w0: m.w0.iter().copied().collect(),
            b0: m.b0.to_vec(),
            w1: m.w1.iter().copied().collect(),
            b1: m.b1.to_vec(),
        }
    }
}

impl TryFrom<ModelFile> for GcnModel {
    type Error = Error;

    fn try_from(f: ModelFile) -> Result<Self> {
        let shape_err = |e: ndarray::ShapeError| Error::Validation(format!("model weights: {e}"));
        let w0 = Array2::from_shape_vec((f.input_dim, f.hidden_dim), f.w0).map_err(shape_err)?;
        let w1 = Array2::from_shape_vec((f.hidden_dim, f.classes), f.w1).map_err(shape_err)?;
        if f.b0.len() != f.hidden_dim || f.b1.len() != f.classes {
            return Err(Error::Validation("model biases do not match the dimensions".into()));
        }
        GcnModel::with_biases(w0, f.b0.into(), w1, f.b1.into(), f.seed)
    }
}

/// `D̃^{-1/2} (A + I) D̃^{-1/2}`.
pub fn normalize_adjacency(a: &BooleanMatrix) -> Array2<f64> {
    let n = a.rows();
    let mut tilde = a.to_f64();
    for i in 0..n {
        tilde[[i, i]] = 1.0;
    }
    let inv_sqrt: Vec<f64> = tilde.sum_axis(Axis(1)).iter().map(|d| 1.0 / d.sqrt()).collect();
    Array2::from_shape_fn((n, n), |(i, j)| tilde[[i, j]] * inv_sqrt[i] * inv_sqrt[j])
}

pub(crate) fn softmax_rows(z: &mut Array2<f64>) {
    for mut row in z.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
        row.mapv_inplace(|x| (x - max).exp());
        let s = row.sum();
        row.mapv_inplace(|x| x / s);
    }
}

struct Forward {
    ax: Array2<f64>,
    pre1: Array2<f64>,
    ah1: Array2<f64>,
    probs: Array2<f64>,
}

fn check_dims(m: &GcnModel, a_hat: &Array2<f64>, features: &Array2<f64>) -> Result<()> {
    if features.ncols() != m.input_dim() {
        return Err(Error::dimension("feature columns", m.input_dim(), features.ncols()));
    }
    if a_hat.nrows() != features.nrows() || a_hat.ncols() != features.nrows() {
        return Err(Error::dimension(
            "normalized adjacency",
            format!("{0}x{0}", features.nrows()),
            format!("{}x{}", a_hat.nrows(), a_hat.ncols()),
        ));
    }
    Ok(())
}

fn forward_from_ax(m: &GcnModel, a_hat: &Array2<f64>, ax: Array2<f64>) -> Forward {
    let pre1 = ax.dot(&m.w0) + &m.b0;
    let h1 = pre1.mapv(|x| x.max(0.0));
    let ah1 = a_hat.dot(&h1);
    let mut probs = ah1.dot(&m.w1) + &m.b1;
    softmax_rows(&mut probs);
    Forward { ax, pre1, ah1, probs }
}

/// Class probabilities (`n × C`) for a precomputed normalized adjacency.
pub fn gcn_forward(m: &GcnModel, a_hat: &Array2<f64>, features: &Array2<f64>) -> Result<Array2<f64>> {
    check_dims(m, a_hat, features)?;
    Ok(forward_from_ax(m, a_hat, a_hat.dot(features)).probs)
}

/// Class probabilities for every node of `g`.
pub fn forward_graph(m: &GcnModel, g: &RelationalGraph) -> Result<Array2<f64>> {
    gcn_forward(m, &normalize_adjacency(&adjacency(g)), g.features())
}

/// Row-wise argmax, ties to the lower class index.
pub fn argmax_rows(probs: &Array2<f64>) -> Vec<usize> {
    probs
        .rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            for (c, &p) in row.iter().enumerate() {
                if p > row[best] {
                    best = c;
                }
            }
            best
        })
        .collect()
}

pub fn predict(m: &GcnModel, g: &RelationalGraph) -> Result<Vec<usize>> {
    Ok(argmax_rows(&forward_graph(m, g)?))
}

/// Gradients of the mean cross-entropy over `nodes` with respect to every
/// parameter.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub loss: f64,
    pub w0: Array2<f64>,
    pub b0: Array1<f64>,
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
}

fn mean_cross_entropy(probs: &Array2<f64>, labels: &[usize], nodes: &[usize]) -> f64 {
    if nodes.is_empty() {
        return 0.0;
    }
    let total: f64 = nodes.iter().map(|&i| -probs[[i, labels[i]]].ln()).sum();
    total / nodes.len() as f64
}

fn gradients_from(
    m: &GcnModel,
    a_hat: &Array2<f64>,
    fw: &Forward,
    labels: &[usize],
    nodes: &[usize],
) -> Gradients {
    let loss = mean_cross_entropy(&fw.probs, labels, nodes);
    let mut dz = Array2::zeros(fw.probs.raw_dim());
    let scale = 1.0 / nodes.len().max(1) as f64;
    for &i in nodes {
        for c in 0..m.classes() {
            let target = if labels[i] == c { 1.0 } else { 0.0 };
            dz[[i, c]] = (fw.probs[[i, c]] - target) * scale;
        }
    }
    let g_w1 = fw.ah1.t().dot(&dz);
    let d_ah1 = dz.dot(&m.w1.t());
    let mut d_pre1 = a_hat.t().dot(&d_ah1);
    ndarray::Zip::from(&mut d_pre1)
        .and(&fw.pre1)
        .for_each(|d, &p| {
            if p <= 0.0 {
                *d = 0.0;
            }
        });
    let g_w0 = fw.ax.t().dot(&d_pre1);
    Gradients {
        loss,
        w0: g_w0,
        b0: d_pre1.sum_axis(Axis(0)),
        w1: g_w1,
        b1: dz.sum_axis(Axis(0)),
    }
}

/// Loss and analytic gradients for the nodes in `nodes`.
pub fn loss_and_gradients(
    m: &GcnModel,
    a_hat: &Array2<f64>,
    features: &Array2<f64>,
    labels: &[usize],
    nodes: &[usize],
) -> Result<Gradients> {
    check_dims(m, a_hat, features)?;
    let fw = forward_from_ax(m, a_hat, a_hat.dot(features));
    Ok(gradients_from(m, a_hat, &fw, labels, nodes))
}

fn accuracy(pred: &[usize], labels: &[usize], nodes: &[usize]) -> f64 {
    if nodes.is_empty() {
        return 0.0;
    }
    nodes.iter().filter(|&&i| pred[i] == labels[i]).count() as f64 / nodes.len() as f64
}

/// Full-batch gradient descent on the training nodes.
///
/// Returns the weights with the best validation score seen, where the score
/// is validation accuracy with validation loss as tie-breaker (the training
/// set stands in when the validation set is empty).
pub fn train_gcn(g: &RelationalGraph, split: &NodeSplit, cfg: &TrainConfig) -> Result<GcnModel> {
    cfg.validate()?;
    split.validate(g.node_count())?;
    if split.train.is_empty() {
        return Err(Error::Validation("training split is empty".into()));
    }
    let a_hat = normalize_adjacency(&adjacency(g));
    let ax = a_hat.dot(g.features());
    let labels = g.labels();
    let monitor: &[usize] = if split.validation.is_empty() {
        &split.train
    } else {
        &split.validation
    };

    let mut model = GcnModel::init(g.feature_dim(), cfg.hidden_dim, g.class_count(), cfg.seed);
    let mut best = model.clone();
    let mut best_score = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    let mut stale = 0;

    for epoch in 0..=cfg.max_epochs {
        let fw = forward_from_ax(&model, &a_hat, ax.clone());
        let pred = argmax_rows(&fw.probs);
        let score = (
            accuracy(&pred, labels, monitor),
            -mean_cross_entropy(&fw.probs, labels, monitor),
        );
        if score > best_score {
            best_score = score;
            best = model.clone();
            stale = 0;
        } else {
            stale += 1;
        }
        if epoch == cfg.max_epochs || (stale > cfg.patience && epoch >= cfg.warmup_epochs) {
            break;
        }
        let grads = gradients_from(&model, &a_hat, &fw, labels, &split.train);
        if !grads.loss.is_finite() {
            log::error!("gcn training diverged at epoch {epoch} (loss {})", grads.loss);
            return Err(Error::TrainingDiverged {
                epoch,
                loss: grads.loss,
            });
        }
        model.w0.scaled_add(-cfg.learning_rate, &grads.w0);
        model.w1.scaled_add(-cfg.learning_rate, &grads.w1);
        model.b0.scaled_add(-cfg.learning_rate, &grads.b0);
        model.b1.scaled_add(-cfg.learning_rate, &grads.b1);
    }
    Ok(best)
}

/// Trains one model per hidden size and keeps the one with the best
/// validation score.
pub fn train_gcn_select_hidden(
    g: &RelationalGraph,
    split: &NodeSplit,
    cfg: &TrainConfig,
    hidden_dims: &[usize],
) -> Result<GcnModel> {
    if hidden_dims.is_empty() {
        return train_gcn(g, split, cfg);
    }
    let monitor: Vec<usize> = if split.validation.is_empty() {
        split.train.clone()
    } else {
        split.validation.clone()
    };
    let mut best: Option<(f64, GcnModel)> = None;
    for &h in hidden_dims {
        let m = train_gcn(g, split, &TrainConfig { hidden_dim: h, ..cfg.clone() })?;
        let acc = accuracy(&predict(&m, g)?, g.labels(), &monitor);
        if best.as_ref().is_none_or(|(b, _)| acc > *b) {
            best = Some((acc, m));
        }
    }
    Ok(best.expect("hidden_dims is non-empty").1)
}
