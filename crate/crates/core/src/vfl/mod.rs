//! The three private inference pipelines over time-step-partitioned
//! sequences, with their supporting protocols.
//!
//! * [`partition_sequence`] assigns every time step of a record to one client.
//! * [`secure_position_recovery`] tells each client the global positions of
//!   its own steps and nothing else.
//! * [`build_masked_sequence`] turns a client's view into a full-length
//!   sequence with foreign steps replaced by the MASK sentinel.
//! * [`run_e2e_mpc`], [`run_vfl_mpc`] and [`run_pphh`] execute one batch and
//!   return the revealed predictions with a staged [`Transcript`].
//!
//! Roles: two compute parties; party 0 doubles as the aggregator. Clients
//! only submit shares or plaintext public embeddings and receive outputs;
//! their links are modelled with [`netsim::Link`](crate::netsim::Link).

mod cost;
mod e2e;
mod masked;
mod partition;
mod pipeline;
mod positions;
mod secure;

use thiserror::Error;

use crate::fxp::FxpError;
use crate::mpc::{MpcError, SessionConfig, Transcript};
use crate::netsim::{ClockMode, NetError, NetworkProfile};
use crate::nn::NnError;

pub use cost::{
    e2e_bytes, e2e_rounds, e2e_tape, encoder_flops, mlp_bytes_per_party, mlp_flops, mlp_rounds, mlp_tape, pphh_bytes, pphh_rounds, pphh_tape, vfl_mpc_bytes,
    vfl_mpc_rounds, vfl_mpc_tape, E2E_SOFTMAX_SHIFT,
};
pub use e2e::{e2e_range_audit, run_e2e_mpc, RangeCheck};
pub use masked::{build_masked_sequence, central_batch_input, central_input, compact_batch_input, masked_batch_input, MaskedSequence};
pub use partition::{partition_sequence, partition_with, OwnedStep, PartitionedSequence};
pub use pipeline::{client_embeddings, reference_outputs, run_pphh, run_pphh_party, run_vfl_mpc, PartyRun};
pub use positions::{pack_key, position_tape, secure_position_recovery, unpack_key, PositionRecovery, KEY_CLIENT_BITS, KEY_INDEX_BITS, KEY_TICK_BITS};
pub use secure::{hcat_shares, share_mlp, SharedLayer};

/// Stage label of the one-off position-recovery session.
pub const POSITION_RECOVERY: &str = "position_recovery";

#[derive(Debug, Error)]
pub enum VflError {
    #[error("partition: {0}")]
    Partition(String),
    #[error("order key: {0}")]
    Key(String),
    #[error("duplicate key triple (ticks {ticks}, client {client}, index {index})")]
    DuplicateKey { ticks: u64, client: usize, index: usize },
    #[error("position {position} outside a sequence of length {len}")]
    Position { position: usize, len: usize },
    #[error("{layer}: {what} {value} outside [{lo}, {hi}]")]
    Range { layer: String, what: &'static str, value: f64, lo: f64, hi: f64 },
    #[error("pipeline: {0}")]
    Pipeline(String),
    #[error(transparent)]
    Mpc(#[from] MpcError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Fxp(#[from] FxpError),
}

pub type Result<T> = std::result::Result<T, VflError>;

/// Everything a pipeline run needs besides the model and the batch.
#[derive(Clone, Debug)]
pub struct PipelineConfig {
    /// Profile of the compute-party link and of every client link.
    pub profile: NetworkProfile,
    pub mode: ClockMode,
    pub session: SessionConfig,
    pub dealer_seed: u128,
}

impl PipelineConfig {
    pub fn simulated(profile: NetworkProfile) -> Self {
        Self { profile, mode: ClockMode::Simulated, session: SessionConfig::default(), dealer_seed: 0x5eed }
    }
}

/// Revealed outputs of one batch (one logit or regression value per
/// record) and the staged cost of producing them.
#[derive(Clone, Debug, PartialEq)]
pub struct PipelineResult {
    pub predictions: Vec<f64>,
    pub transcript: Transcript,
}
