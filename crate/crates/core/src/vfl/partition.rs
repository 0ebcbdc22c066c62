use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Result, VflError};
use crate::data::{Record, TimeStep};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OwnedStep {
    /// Global position in `0..total_len`.
    pub position: usize,
    pub order_key: f64,
    pub features: Vec<f64>,
}

/// A record whose time steps are split across clients.
///
/// Invariants: the positions of all clients partition `0..total_len`, and
/// within a client both positions and order keys strictly increase.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartitionedSequence {
    pub seq_id: String,
    pub total_len: usize,
    pub per_client: Vec<Vec<OwnedStep>>,
    pub label: f64,
}

impl PartitionedSequence {
    pub fn n_clients(&self) -> usize {
        self.per_client.len()
    }

    /// Owning client of every position.
    pub fn owners(&self) -> Vec<usize> {
        let mut out = vec![usize::MAX; self.total_len];
        for (c, steps) in self.per_client.iter().enumerate() {
            for s in steps {
                out[s.position] = c;
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = vec![false; self.total_len];
        for (c, steps) in self.per_client.iter().enumerate() {
            if steps.is_empty() {
                return Err(VflError::Partition(format!("{}: client {c} owns no step", self.seq_id)));
            }
            for w in steps.windows(2) {
                if w[1].position <= w[0].position || w[1].order_key <= w[0].order_key {
                    return Err(VflError::Partition(format!("{}: client {c} steps out of order", self.seq_id)));
                }
            }
            for s in steps {
                if s.position >= self.total_len {
                    return Err(VflError::Position { position: s.position, len: self.total_len });
                }
                if std::mem::replace(&mut seen[s.position], true) {
                    return Err(VflError::Partition(format!("{}: position {} owned twice", self.seq_id, s.position)));
                }
            }
        }
        if let Some(gap) = seen.iter().position(|&s| !s) {
            return Err(VflError::Partition(format!("{}: position {gap} unowned", self.seq_id)));
        }
        Ok(())
    }

    /// The original steps in global order.
    pub fn reassemble(&self) -> Vec<TimeStep> {
        let mut all: Vec<&OwnedStep> = self.per_client.iter().flatten().collect();
        all.sort_by_key(|s| s.position);
        all.into_iter().map(|s| TimeStep { order_key: s.order_key, features: s.features.clone() }).collect()
    }
}

fn check_counts(k: usize, n: usize) -> Result<()> {
    if n < 2 {
        return Err(VflError::Partition(format!("at least two clients are required, got {n}")));
    }
    if k < n {
        return Err(VflError::Partition(format!("{k} time steps cannot cover {n} clients")));
    }
    Ok(())
}

/// Assigns every step to a uniformly random client, redrawing until each
/// client owns at least one step.
pub fn partition_sequence(rec: &Record, n_clients: usize, rng: &mut impl Rng) -> Result<PartitionedSequence> {
    check_counts(rec.len(), n_clients)?;
    loop {
        let assign: Vec<usize> = (0..rec.len()).map(|_| rng.random_range(0..n_clients)).collect();
        let mut owned = vec![false; n_clients];
        assign.iter().for_each(|&c| owned[c] = true);
        if owned.iter().all(|&o| o) {
            return partition_with(rec, &assign, n_clients);
        }
    }
}

/// Partition following an explicit `assignment[position] = client`.
pub fn partition_with(rec: &Record, assignment: &[usize], n_clients: usize) -> Result<PartitionedSequence> {
    check_counts(rec.len(), n_clients)?;
    if assignment.len() != rec.len() {
        return Err(VflError::Partition(format!("{} assignments for {} steps", assignment.len(), rec.len())));
    }
    let mut per_client = vec![Vec::new(); n_clients];
    for (position, (&c, s)) in assignment.iter().zip(&rec.steps).enumerate() {
        if c >= n_clients {
            return Err(VflError::Partition(format!("client {c} of {n_clients}")));
        }
        per_client[c].push(OwnedStep { position, order_key: s.order_key, features: s.features.clone() });
    }
    let p = PartitionedSequence { seq_id: rec.seq_id.clone(), total_len: rec.len(), per_client, label: rec.label };
    p.validate()?;
    Ok(p)
}
