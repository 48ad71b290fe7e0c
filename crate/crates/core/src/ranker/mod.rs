//! Attention-based propagation over the knowledge graph and pairwise
//! ranking of candidate nudges.

mod dataset;
mod matrix;
mod model;
mod propagate;
mod rank;
mod train;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::NodeId;

pub use dataset::{relation_name, Adjacency, EntityIndex, PositiveSignal, TrainingSet, Triple, NUM_RELATIONS};
pub use matrix::Matrix;
pub use model::{Params, RankerModel};
pub use propagate::{attention_weights, backward, forward, Forward};
pub use rank::{hit_rate_at_k, rank, rank_random, RankedNudgeList, Representations, ScoredNudge};
pub use train::{
    cf_loss, kg_loss, retrain_on_update, retrain_set, sigmoid, softplus, train, train_set, CfSample, EpochLoss,
    KgSample, LossTrace,
};

#[derive(Debug, Error)]
pub enum RankerError {
    #[error("invalid ranker configuration: {0}")]
    Config(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("{0} is not in the model's entity index")]
    UnknownEntity(NodeId),
    #[error("training diverged in epoch {epoch} ({phase} phase): non-finite loss or parameters")]
    Diverged { epoch: usize, phase: &'static str },
    #[error("model file line {line}: {reason}")]
    ModelFormat { line: usize, reason: String },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    #[default]
    Sgd,
    Adam,
}

impl Optimizer {
    pub fn as_str(self) -> &'static str {
        match self {
            Optimizer::Sgd => "sgd",
            Optimizer::Adam => "adam",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [Optimizer::Sgd, Optimizer::Adam].into_iter().find(|o| o.as_str() == s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hyperparams {
    /// entity embedding size d
    pub embedding_dim: usize,
    /// relation space size k
    pub relation_dim: usize,
    /// output size of each propagation layer
    pub layer_dims: Vec<usize>,
    pub leaky_slope: f64,
    pub learning_rate: f64,
    /// λ on the squared norm of all parameters
    pub l2: f64,
    /// negatives sampled per positive
    pub negatives: usize,
    pub epochs: usize,
    pub cf_batch_size: usize,
    pub kg_batch_size: usize,
    pub optimizer: Optimizer,
    pub positive_signal: PositiveSignal,
    pub seed: u64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            embedding_dim: 16,
            relation_dim: 16,
            layer_dims: vec![16, 8],
            leaky_slope: 0.2,
            learning_rate: 0.01,
            l2: 1e-5,
            negatives: 1,
            epochs: 100,
            cf_batch_size: 64,
            kg_batch_size: 128,
            optimizer: Optimizer::Sgd,
            positive_signal: PositiveSignal::OpenedOrUseful,
            seed: 2023,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<(), RankerError> {
        let bad = |m: &str| Err(RankerError::Config(m.to_string()));
        if self.embedding_dim == 0 || self.relation_dim == 0 {
            return bad("embedding and relation dimensions must be positive");
        }
        if self.layer_dims.iter().any(|&d| d == 0) {
            return bad("layer dimensions must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be positive");
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return bad("l2 must be non-negative");
        }
        if !(0.0..1.0).contains(&self.leaky_slope) {
            return bad("leaky slope must be in [0, 1)");
        }
        if self.negatives == 0 || self.cf_batch_size == 0 || self.kg_batch_size == 0 {
            return bad("negatives and batch sizes must be positive");
        }
        Ok(())
    }
}
