use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

/// Stage labels of a pipeline execution, in reporting order.
pub mod stage {
    pub const RECONSTRUCT_INPUT: &str = "reconstruct_input";
    pub const LOCAL_TRANSFORMER_FORWARD: &str = "local_transformer_forward";
    pub const COMMUNICATION_SHARE_HANDLING: &str = "communication_share_handling";
    pub const PUBLIC_HEAD_FORWARD: &str = "public_head_forward";
    pub const PRIVATE_HEAD_FORWARD: &str = "private_head_forward";
    pub const FUSION_HEAD_FORWARD: &str = "fusion_head_forward";
    pub const OUTPUT_REVEAL: &str = "output_reveal";

    pub const ALL: [&str; 7] = [
        RECONSTRUCT_INPUT,
        LOCAL_TRANSFORMER_FORWARD,
        COMMUNICATION_SHARE_HANDLING,
        PUBLIC_HEAD_FORWARD,
        PRIVATE_HEAD_FORWARD,
        FUSION_HEAD_FORWARD,
        OUTPUT_REVEAL,
    ];

    /// Stages that run under the two-party protocol.
    pub const MPC: [&str; 4] = [RECONSTRUCT_INPUT, PRIVATE_HEAD_FORWARD, FUSION_HEAD_FORWARD, OUTPUT_REVEAL];

    /// Stages that overlap in wall time; the slower one is on the critical path.
    pub const PARALLEL: [&str; 2] = [PUBLIC_HEAD_FORWARD, PRIVATE_HEAD_FORWARD];
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StageStats {
    pub rounds: u64,
    pub bytes: u64,
    /// Seconds (simulated or wall clock, per the session's clock mode).
    pub time: f64,
}

/// Rounds, bytes per endpoint and per-stage cost of one execution.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub rounds: u64,
    pub bytes_sent: BTreeMap<String, u64>,
    pub stages: BTreeMap<String, StageStats>,
}

impl Transcript {
    pub fn add_stage(&mut self, label: &str, s: StageStats) {
        let e = self.stages.entry(label.to_string()).or_default();
        e.rounds += s.rounds;
        e.bytes += s.bytes;
        e.time += s.time;
    }

    pub fn add_bytes(&mut self, endpoint: &str, bytes: u64) {
        *self.bytes_sent.entry(endpoint.to_string()).or_default() += bytes;
    }

    pub fn total_bytes(&self) -> u64 {
        self.bytes_sent.values().sum()
    }

    pub fn stage(&self, label: &str) -> StageStats {
        self.stages.get(label).copied().unwrap_or_default()
    }

    /// Combines the two views of one session: bytes add, rounds and
    /// per-stage rounds and times take the max (both parties observe the
    /// same rounds and advance their clocks in lockstep).
    pub fn merge(&self, other: &Transcript) -> Transcript {
        let mut out = self.clone();
        out.rounds = self.rounds.max(other.rounds);
        for (k, v) in &other.bytes_sent {
            *out.bytes_sent.entry(k.clone()).or_default() += v;
        }
        for (k, v) in &other.stages {
            let e = out.stages.entry(k.clone()).or_default();
            e.rounds = e.rounds.max(v.rounds);
            e.bytes += v.bytes;
            e.time = e.time.max(v.time);
        }
        out
    }

    /// Critical-path time: serial stages plus the slower parallel stage.
    pub fn total_time(&self) -> f64 {
        let mut serial = 0.0;
        let mut par: f64 = 0.0;
        for (k, v) in &self.stages {
            if stage::PARALLEL.contains(&k.as_str()) {
                par = par.max(v.time);
            } else {
                serial += v.time;
            }
        }
        serial + par
    }

    /// Per-stage share of the summed stage times, in percent.
    pub fn stage_percentages(&self) -> Vec<(String, f64)> {
        let sum: f64 = stage::ALL.iter().map(|l| self.stage(l).time).sum();
        stage::ALL.iter().map(|l| (l.to_string(), if sum > 0.0 { 100.0 * self.stage(l).time / sum } else { 0.0 })).collect()
    }

    /// Percentage of summed stage time spent in MPC stages.
    pub fn mpc_share(&self) -> f64 {
        self.stage_percentages().iter().filter(|(l, _)| stage::MPC.contains(&l.as_str())).map(|(_, p)| p).sum()
    }
}
