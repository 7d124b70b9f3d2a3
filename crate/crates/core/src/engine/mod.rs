//! Hybrid utility model: assembly, joint training, ablation variants,
//! scoring and checkpoints.

mod checkpoint;
mod evaluate;
mod forward;
mod history;
mod model;
mod scorer;
mod train;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::DataError;
use crate::metrics::MetricsError;
use crate::numerics::NumericsError;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_VERSION};
pub use evaluate::{evaluate, EvalConfig};
pub use forward::{forward_batch, BatchOutput, EventInput, ModelVars};
pub use history::{ClusterMode, ClusterSet, Histories};
pub use model::{InferenceSettings, Model, ModelConfig, ModelParams};
pub use scorer::{recommend_topk, Scored, Scorer, UserContext};
pub use train::{train, EpochLog, TrainConfig, TrainOutcome};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("training error: {0}")]
    Training(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error(
        "checkpoint version error: file has version {found}, this build reads version {expected}"
    )]
    Version { found: u32, expected: u32 },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// The full model and its ablations.
#[derive(
    Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize,
)]
pub enum Variant {
    /// `r + f(unexp) * factor`.
    #[default]
    #[serde(rename = "FULL")]
    Full,
    /// `b_u + b_i + r + exp(-unexp^2) * factor`.
    #[serde(rename = "V1_GAUSSIAN")]
    V1Gaussian,
    /// `b_u + b_i + r + unexp * factor`.
    #[serde(rename = "V2_NO_ACTIVATION")]
    V2NoActivation,
    /// `b_u + b_i + r + f(unexp)`.
    #[serde(rename = "V3_NO_FACTOR")]
    V3NoFactor,
    /// `b_u + b_i + r`.
    #[serde(rename = "V4_NO_UNEXP")]
    V4NoUnexp,
    /// The full formula with unexpectedness measured against one cluster
    /// holding every consumption.
    #[serde(rename = "V5_SINGLE_CLOSURE")]
    V5SingleClosure,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::Full,
        Variant::V1Gaussian,
        Variant::V2NoActivation,
        Variant::V3NoFactor,
        Variant::V4NoUnexp,
        Variant::V5SingleClosure,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "FULL",
            Variant::V1Gaussian => "V1_GAUSSIAN",
            Variant::V2NoActivation => "V2_NO_ACTIVATION",
            Variant::V3NoFactor => "V3_NO_FACTOR",
            Variant::V4NoUnexp => "V4_NO_UNEXP",
            Variant::V5SingleClosure => "V5_SINGLE_CLOSURE",
        }
    }

    pub fn uses_bias(self) -> bool {
        !matches!(self, Variant::Full | Variant::V5SingleClosure)
    }

    pub fn uses_unexpectedness(self) -> bool {
        self != Variant::V4NoUnexp
    }

    pub fn uses_factor(self) -> bool {
        !matches!(self, Variant::V3NoFactor | Variant::V4NoUnexp)
    }

    /// The transform applied to raw unexpectedness before the factor.
    pub fn activate(self, unexp: f64) -> f64 {
        match self {
            Variant::V1Gaussian => (-unexp * unexp).exp(),
            Variant::V2NoActivation => unexp,
            Variant::V4NoUnexp => 0.0,
            _ => unexp * (-unexp).exp(),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = String;

    /// Accepts the full names and the short forms `FULL`, `V1` … `V5`,
    /// case-insensitively.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let up = s.trim().to_ascii_uppercase();
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == up || v.name().split('_').next() == Some(up.as_str()))
            .ok_or_else(|| {
                format!(
                    "unknown variant `{s}`; expected one of {}",
                    Variant::ALL.map(|v| v.name()).join(", ")
                )
            })
    }
}

/// Hybrid utility of one `(user, item)` pair.
pub fn utility(r: f64, unexp: f64, factor: f64, variant: Variant, b_u: f64, b_i: f64) -> f64 {
    let bias = if variant.uses_bias() { b_u + b_i } else { 0.0 };
    let term = match variant {
        Variant::V4NoUnexp => 0.0,
        Variant::V3NoFactor => variant.activate(unexp),
        _ => variant.activate(unexp) * factor,
    };
    bias + r + term
}
