//! Interaction logs: parsing, rating binarization, behavior sequences,
//! session windows and chronological splits.

mod index;
mod io;
mod prepare;
mod sequence;
mod split;
mod synthetic;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use index::{FeatureTable, FeatureVector, IndexedDataset, Interaction, Vocab};
pub use io::{parse_interactions, read_events, write_events, Delimiter, ParseReport, Schema};
pub use prepare::{prepare, subset_by_users, PreparedData};
pub use sequence::{build_sequences, session_window, BehaviorSequence, SessionConfig};
pub use split::{split_time_stratified, Fold, SplitConfig, SplitMode};
pub use synthetic::synthetic_events;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("schema error: column `{0}` not found in header")]
    MissingColumn(String),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("data error: {0}")]
    Insufficient(String),
}

/// One logged (user, item) interaction with its click label.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InteractionEvent {
    pub user_id: String,
    pub item_id: String,
    pub label: u8,
    pub timestamp: i64,
    pub raw_rating: Option<f64>,
}

impl InteractionEvent {
    pub fn is_click(&self) -> bool {
        self.label == 1
    }
}

/// Rating-to-click conversion.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Binarizer {
    pub threshold: f64,
    /// When true a rating equal to the threshold counts as a click.
    pub inclusive: bool,
}

impl Default for Binarizer {
    fn default() -> Self {
        Self {
            threshold: 3.5,
            inclusive: false,
        }
    }
}

impl Binarizer {
    pub fn label(&self, rating: f64) -> u8 {
        let hit = if self.inclusive {
            rating >= self.threshold
        } else {
            rating > self.threshold
        };
        u8::from(hit)
    }
}

/// 1 iff `rating > threshold`.
pub fn binarize(rating: f64, threshold: f64) -> u8 {
    Binarizer {
        threshold,
        inclusive: false,
    }
    .label(rating)
}
