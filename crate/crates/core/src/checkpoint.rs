//! Per-task experiment checkpoints (JSON).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::classifier::IncrementalClassifier;
use crate::engine::ExperimentState;
use crate::error::{Error, Result};
use crate::evalmetrics::MetricsRecord;
use crate::extractor::Extractor;
use crate::prototypes::PrototypeStore;

/// Byte position of a 1-based line and column reported by the JSON parser.
fn byte_offset(text: &str, line: usize, column: usize) -> u64 {
    let line_start: usize = text
        .split_inclusive('\n')
        .take(line.saturating_sub(1))
        .map(str::len)
        .sum();
    (line_start + column.saturating_sub(1)) as u64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub task_index: usize,
    pub extractor: Extractor,
    pub classifier: IncrementalClassifier,
    pub store: PrototypeStore,
    pub metrics: Vec<MetricsRecord>,
}

impl Checkpoint {
    pub fn capture(state: &ExperimentState) -> Self {
        Self {
            task_index: state.metrics.len().saturating_sub(1),
            extractor: state.extractor.clone(),
            classifier: state.clf.clone(),
            store: state.store.clone(),
            metrics: state.metrics.clone(),
        }
    }

    pub fn file_name(task_index: usize) -> String {
        format!("checkpoint_task{task_index}.json")
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| Error::InvalidState(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Format {
            offset: byte_offset(text, e.line(), e.column()),
            message: format!("not a checkpoint: {e}"),
        })
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(Self::file_name(self.task_index)), self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
