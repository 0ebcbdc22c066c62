//! Sequence datasets: CSV ingestion under a declared schema, offline
//! synthetic generators for both tasks, and seeded partitioned batching.

mod ingest;
mod synth;

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::Task;
use crate::vfl::{partition_sequence, PartitionedSequence, VflError};

pub use ingest::{load_csv, ColumnRole, ColumnSpec, FeatureSchema, LabelAggregate, LabelSpec};
pub use synth::{
    oracle_burst_score, synth_classification, synth_classification_with, synth_regression, synth_regression_with, ClassificationSynth, RegressionSynth,
    BURST_LEN, BURST_SHIFT, SYNTH_FEATURES,
};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {msg}")]
    Io { path: String, msg: String },
    #[error("missing column {0:?}")]
    MissingColumn(String),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("entity {0:?} has no rows")]
    EmptyGroup(String),
    #[error("invalid schema: {0}")]
    Schema(String),
    #[error(transparent)]
    Partition(#[from] VflError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeStep {
    pub order_key: f64,
    pub features: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub seq_id: String,
    /// Strictly increasing in `order_key`.
    pub steps: Vec<TimeStep>,
    /// 0/1 for classification, real target for regression.
    pub label: f64,
}

impl Record {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceDataset {
    pub task: Task,
    pub feature_dim: usize,
    pub max_len: usize,
    pub records: Vec<Record>,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub metadata: BTreeMap<String, f64>,
}

impl SequenceDataset {
    pub fn labels(&self, idx: &[usize]) -> Vec<f64> {
        idx.iter().map(|&i| self.records[i].label).collect()
    }

    /// Fraction of positives among `idx`.
    pub fn positive_rate(&self, idx: &[usize]) -> f64 {
        self.labels(idx).iter().filter(|&&y| y > 0.5).count() as f64 / idx.len().max(1) as f64
    }

    /// Accuracy of always predicting the majority class of `train` on `idx`.
    pub fn majority_baseline(&self, idx: &[usize]) -> f64 {
        let majority_positive = self.positive_rate(&self.train) > 0.5;
        let p = self.positive_rate(idx);
        if majority_positive {
            p
        } else {
            1.0 - p
        }
    }

    /// RMSE on `idx` of predicting the `train` label mean.
    pub fn mean_baseline_rmse(&self, idx: &[usize]) -> f64 {
        let tr = self.labels(&self.train);
        let mean = tr.iter().sum::<f64>() / tr.len().max(1) as f64;
        let y = self.labels(idx);
        (y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / y.len().max(1) as f64).sqrt()
    }

    pub fn validate(&self) -> Result<(), DataError> {
        for r in &self.records {
            if r.steps.is_empty() {
                return Err(DataError::EmptyGroup(r.seq_id.clone()));
            }
            if r.steps.len() > self.max_len {
                return Err(DataError::Schema(format!("record {} longer than max_len {}", r.seq_id, self.max_len)));
            }
            if r.steps.windows(2).any(|w| w[1].order_key <= w[0].order_key) {
                return Err(DataError::Schema(format!("record {} order keys not increasing", r.seq_id)));
            }
            if r.steps.iter().any(|s| s.features.len() != self.feature_dim) {
                return Err(DataError::Schema(format!("record {} feature width", r.seq_id)));
            }
            if self.task == Task::Classification && r.label != 0.0 && r.label != 1.0 {
                return Err(DataError::Schema(format!("record {} label {} is not binary", r.seq_id, r.label)));
            }
        }
        Ok(())
    }
}

/// One batch of partitioned records.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub indices: Vec<usize>,
    pub parts: Vec<PartitionedSequence>,
    /// Longest record in the batch; shorter records are padded to it.
    pub padded_len: usize,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.parts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parts.is_empty()
    }

    pub fn labels(&self) -> Vec<f64> {
        self.parts.iter().map(|p| p.label).collect()
    }
}

/// Seeded epoch over `idx`: a shuffled order cut into batches, each record
/// partitioned across `n_clients`. Every index appears exactly once.
pub fn batch_iter(ds: &SequenceDataset, idx: &[usize], batch_size: usize, n_clients: usize, seed: u64) -> Result<Vec<Batch>, DataError> {
    if batch_size == 0 {
        return Err(DataError::Schema("batch_size must be at least 1".into()));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut order = idx.to_vec();
    order.shuffle(&mut rng);
    order
        .chunks(batch_size)
        .map(|chunk| {
            let parts = chunk.iter().map(|&i| partition_sequence(&ds.records[i], n_clients, &mut rng)).collect::<Result<Vec<_>, _>>()?;
            let padded_len = chunk.iter().map(|&i| ds.records[i].len()).max().unwrap_or(0);
            Ok(Batch { indices: chunk.to_vec(), parts, padded_len })
        })
        .collect()
}

/// Seeded train/test split of `0..n` with `test_fraction` held out.
pub(crate) fn split_indices(n: usize, test_fraction: f64, rng: &mut ChaCha12Rng) -> (Vec<usize>, Vec<usize>) {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let n_test = ((n as f64) * test_fraction).round() as usize;
    let mut test = order[..n_test].to_vec();
    let mut train = order[n_test..].to_vec();
    test.sort_unstable();
    train.sort_unstable();
    (train, test)
}
