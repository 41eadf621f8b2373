//! Optimisation loop: AdamW with warm-up + cosine schedule, interleaved and
//! two-phase regimes, masked losses, and evaluation metrics.

mod eval;
mod metrics;
mod optim;

pub use eval::{eval_edge_memorization, eval_embedding_edges, eval_paths, PathMetrics};
pub use metrics::{MetricsLog, MetricsRow};
pub use optim::{adamw_step, cosine_with_warmup, AdamState, ADAM_EPS, BETA1, BETA2};

use crate::data::{EdgeDir, Example, Interleave, LossMode};
use crate::error::{GeomemError, Result};
use crate::graph::Graph;
use crate::models::{LanguageModel, Node2Vec};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Regime {
    /// Edge and path examples mixed in every batch.
    Interleaved,
    /// Edges only for `edge_steps`, then the interleaved mixture for
    /// `path_steps` at `phase2_lr`.
    TwoPhase {
        edge_steps: usize,
        path_steps: usize,
        phase2_lr: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub peak_lr: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub regime: Regime,
    pub loss_mode: LossMode,
    pub seed: u64,
    pub eval_interval: usize,
    /// Share of batch draws taken from the path stream.
    pub path_weight: f64,
    pub freeze_embeddings: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            peak_lr: 1e-3,
            warmup_steps: 100,
            total_steps: 2000,
            weight_decay: 0.01,
            batch_size: 64,
            regime: Regime::Interleaved,
            loss_mode: LossMode::FullPath,
            seed: 0,
            eval_interval: 500,
            path_weight: 0.1,
            freeze_embeddings: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.peak_lr > 0.0) {
            return Err(GeomemError::param("peak_lr", "must be positive"));
        }
        if self.total_steps == 0 {
            return Err(GeomemError::param("total_steps", "must be positive"));
        }
        if self.warmup_steps >= self.total_steps {
            return Err(GeomemError::param(
                "warmup_steps",
                "must be below total_steps",
            ));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(GeomemError::param("weight_decay", "must be non-negative"));
        }
        if self.batch_size == 0 {
            return Err(GeomemError::param("batch_size", "must be positive"));
        }
        if self.eval_interval == 0 {
            return Err(GeomemError::param("eval_interval", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.path_weight) {
            return Err(GeomemError::param("path_weight", "must lie in [0, 1]"));
        }
        if let Regime::TwoPhase {
            edge_steps,
            path_steps,
            phase2_lr,
        } = self.regime
        {
            if edge_steps + path_steps != self.total_steps {
                return Err(GeomemError::param(
                    "total_steps",
                    "must equal edge_steps + path_steps",
                ));
            }
            if self.warmup_steps >= edge_steps.min(path_steps) {
                return Err(GeomemError::param(
                    "warmup_steps",
                    "must be below each phase length",
                ));
            }
            if !(phase2_lr > 0.0) {
                return Err(GeomemError::param("phase2_lr", "must be positive"));
            }
        }
        Ok(())
    }
}

/// Learning rate at `step`. In the two-phase regime each phase has its own
/// warm-up and cosine decay, to `peak_lr` and `phase2_lr` respectively.
pub fn lr_at(step: usize, cfg: &TrainConfig) -> f64 {
    match cfg.regime {
        Regime::Interleaved => {
            cosine_with_warmup(step, cfg.peak_lr, cfg.warmup_steps, cfg.total_steps)
        }
        Regime::TwoPhase {
            edge_steps,
            path_steps,
            phase2_lr,
        } => {
            if step < edge_steps {
                cosine_with_warmup(step, cfg.peak_lr, cfg.warmup_steps, edge_steps)
            } else {
                cosine_with_warmup(step - edge_steps, phase2_lr, cfg.warmup_steps, path_steps)
            }
        }
    }
}

/// Everything a training run consumes besides the model.
#[derive(Clone, Debug)]
pub struct TrainData {
    pub edges: Vec<Example>,
    pub edge_dir: EdgeDir,
    pub train_paths: Vec<Example>,
    pub test_paths: Vec<Example>,
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub log: MetricsLog,
    /// Token-embedding snapshots taken at every evaluation.
    pub checkpoints: Vec<(usize, Tensor)>,
}

fn check_data(model: &dyn LanguageModel, g: &Graph, data: &TrainData) -> Result<()> {
    if model.vocab_size() < g.n_nodes {
        return Err(GeomemError::Config(format!(
            "model vocabulary {} smaller than graph ({} nodes)",
            model.vocab_size(),
            g.n_nodes
        )));
    }
    let all = data
        .edges
        .iter()
        .chain(&data.train_paths)
        .chain(&data.test_paths);
    for ex in all {
        if let Some(&t) = ex.tokens.iter().find(|&&t| t >= model.vocab_size()) {
            return Err(GeomemError::Config(format!(
                "token {t} outside the model vocabulary of {}",
                model.vocab_size()
            )));
        }
        if ex.loss_mask.len() != ex.tokens.len() {
            return Err(GeomemError::Config("example mask length mismatch".into()));
        }
    }
    if data.edges.is_empty() && data.train_paths.is_empty() {
        return Err(GeomemError::Config("no training examples".into()));
    }
    Ok(())
}

fn mixture(data: &TrainData, path_weight: f64, seed: u64) -> Result<Interleave> {
    let mut streams = Vec::new();
    if !data.edges.is_empty() && path_weight < 1.0 {
        streams.push((data.edges.clone(), 1.0 - path_weight));
    }
    if !data.train_paths.is_empty() && path_weight > 0.0 {
        streams.push((data.train_paths.clone(), path_weight));
    }
    Interleave::new(streams, seed)
}

/// Evaluates the model on the held-out paths (and the training paths) plus
/// edge memorization.
pub fn evaluate(
    model: &dyn LanguageModel,
    g: &Graph,
    data: &TrainData,
) -> Result<(f64, PathMetrics, PathMetrics)> {
    let edge = eval_edge_memorization(model, g, data.edge_dir)?;
    let test = eval_paths(model, &data.test_paths)?;
    let train = eval_paths(model, &data.train_paths)?;
    Ok((edge, test, train))
}

/// Trains `model` in place. Seed-deterministic: identical inputs give an
/// identical log.
pub fn train_run(
    model: &mut dyn LanguageModel,
    g: &Graph,
    data: &TrainData,
    cfg: &TrainConfig,
) -> Result<RunOutput> {
    cfg.validate()?;
    check_data(model, g, data)?;
    if cfg.freeze_embeddings {
        model.set_embeddings_frozen(true);
    }
    let mut state = AdamState::new(model.params());
    let (mut stream, phase2_start) = match cfg.regime {
        Regime::Interleaved => (mixture(data, cfg.path_weight, cfg.seed)?, None),
        Regime::TwoPhase { edge_steps, .. } => (mixture(data, 0.0, cfg.seed)?, Some(edge_steps)),
    };
    let edges_per_epoch = data.edges.len().max(1) as f64;

    let mut log = MetricsLog::default();
    let mut checkpoints = Vec::new();
    let mut loss_sum = 0.0;
    let mut loss_n = 0usize;
    let mut edge_draws = 0.0;

    let record = |step: usize,
                  model: &dyn LanguageModel,
                  loss: f64,
                  edge_draws: f64,
                  log: &mut MetricsLog,
                  checkpoints: &mut Vec<(usize, Tensor)>|
     -> Result<()> {
        let (edge_acc, test, train) = evaluate(model, g, data)?;
        log.rows.push(MetricsRow {
            step,
            epoch: edge_draws / edges_per_epoch,
            loss,
            lr: lr_at(step, cfg),
            edge_acc,
            full_path_acc: test.full_path_acc,
            first_token_acc: test.first_token_acc,
            decision_token_acc: test.decision_token_acc,
            per_token_acc: test.per_token_acc,
            train_full_path_acc: train.full_path_acc,
            train_decision_token_acc: train.decision_token_acc,
        });
        checkpoints.push((step, model.embedding_table().clone()));
        Ok(())
    };

    record(0, model, f64::NAN, 0.0, &mut log, &mut checkpoints)?;
    for step in 0..cfg.total_steps {
        if Some(step) == phase2_start {
            stream = mixture(data, cfg.path_weight, cfg.seed.wrapping_add(1))?;
            state = AdamState::new(model.params());
        }
        let batch: Vec<Example> = (&mut stream).take(cfg.batch_size).collect();
        edge_draws += batch.iter().filter(|e| e.kind.is_edge()).count() as f64;
        let refs: Vec<&Example> = batch.iter().collect();
        let (loss, grads) = model.loss_and_grads(&refs)?;
        if !loss.is_finite() {
            return Err(GeomemError::Numeric {
                step,
                what: "non-finite training loss".into(),
            });
        }
        loss_sum += loss;
        loss_n += 1;
        let lr = lr_at(step, cfg);
        adamw_step(
            model.params_mut(),
            &grads,
            &mut state,
            lr,
            cfg.weight_decay,
            step,
        )?;
        let done = step + 1;
        if done % cfg.eval_interval == 0 || done == cfg.total_steps {
            record(
                done,
                model,
                loss_sum / loss_n as f64,
                edge_draws,
                &mut log,
                &mut checkpoints,
            )?;
            loss_sum = 0.0;
            loss_n = 0;
        }
    }
    Ok(RunOutput { log, checkpoints })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct N2vConfig {
    pub m: usize,
    pub scale: f64,
    pub eta: f64,
    pub steps: usize,
    pub record_every: usize,
    pub seed: u64,
}

/// Runs the Node2Vec gradient flow `V ← V + η·C·V`, recording `V` at step 0,
/// every `record_every` steps, and at the end.
pub fn n2v_run(g: &Graph, cfg: &N2vConfig) -> Result<(Node2Vec, Vec<(usize, Tensor)>)> {
    if cfg.record_every == 0 {
        return Err(GeomemError::param("record_every", "must be positive"));
    }
    let mut s = crate::models::n2v_init(g.n_nodes, cfg.m, cfg.scale, cfg.seed)?;
    let r = g.random_walk()?;
    let mut history = vec![(0, s.v.clone())];
    for step in 0..cfg.steps {
        s.step_with(&r, cfg.eta).map_err(|e| match e {
            GeomemError::Numeric { what, .. } => GeomemError::Numeric { step, what },
            other => other,
        })?;
        let done = step + 1;
        if done % cfg.record_every == 0 || done == cfg.steps {
            history.push((done, s.v.clone()));
        }
    }
    Ok((s, history))
}
