use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::Variant;
use crate::episodes::MetaTask;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValidationPoint {
    pub epoch: usize,
    pub accuracy: f64,
}

/// Accuracy over a fixed task stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub mean: f64,
    pub std: f64,
    pub tasks: usize,
    pub per_task: Vec<f64>,
    /// SHA-256 over the tasks' debug lines; equal for identical streams.
    pub stream_fingerprint: String,
}

impl EvalSummary {
    pub fn from_accuracies(per_task: Vec<f64>, tasks: &[MetaTask]) -> Self {
        let n = per_task.len().max(1) as f64;
        let mean = per_task.iter().sum::<f64>() / n;
        let var = per_task.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
        EvalSummary {
            mean,
            std: var.sqrt(),
            tasks: per_task.len(),
            per_task,
            stream_fingerprint: stream_fingerprint(tasks),
        }
    }
}

pub fn stream_fingerprint(tasks: &[MetaTask]) -> String {
    let mut hasher = Sha256::new();
    for (i, t) in tasks.iter().enumerate() {
        hasher.update(t.to_json_line(i).as_bytes());
        hasher.update(b"\n");
    }
    hex::encode(hasher.finalize())
}

/// Result of one run. Serialized verbatim as `summary.json`; wall-clock time
/// is kept out of the serialized form so identical runs produce identical
/// bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub variant: Variant,
    pub seed: u64,
    pub config_fingerprint: String,
    pub epochs_run: usize,
    pub train_losses: Vec<f64>,
    pub validation: Vec<ValidationPoint>,
    pub best_epoch: usize,
    pub best_validation_accuracy: Option<f64>,
    pub test_accuracy_mean: f64,
    pub test_accuracy_std: f64,
    pub test_tasks: usize,
    pub test_stream_fingerprint: String,
    #[serde(skip)]
    pub wall_clock_secs: f64,
}

impl MetricsRecord {
    pub fn to_summary_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metrics serialize") + "\n"
    }
}

/// One line of `metrics.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum MetricsEvent {
    Train { epoch: usize, loss: f64, matching_loss: f64, ce_loss: Option<f64> },
    Validation { epoch: usize, accuracy: f64 },
    Test { accuracy_mean: f64, accuracy_std: f64, tasks: usize },
    Timing { wall_clock_secs: f64 },
}
