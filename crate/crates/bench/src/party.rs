use serde::{Deserialize, Serialize};

use hvfl_core::netsim::{Channel, NetworkProfile, Transport};
use hvfl_core::nn::Variant;
use hvfl_core::vfl::run_pphh_party;

use crate::config::{DatasetSource, EncoderDims, ExperimentConfig, Method};
use crate::run::{build_bundle, pipeline_config};
use crate::{BenchError, Result};

/// What one compute-party process reports after its session.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartyOutcome {
    pub party: usize,
    pub config_hash: String,
    pub transcript_hash: String,
    pub rounds: u64,
    pub bytes_sent: u64,
    pub predictions: Vec<f64>,
}

/// The fixed small PPHH session whose transcript digest is pinned.
pub fn golden_party_config() -> ExperimentConfig {
    ExperimentConfig {
        method: Method::Pphh,
        variant: Variant::H1,
        n_clients: 3,
        batch_size: 8,
        batches: 1,
        repeats: 1,
        profile: NetworkProfile::lan(),
        seeds: vec![7],
        dataset: DatasetSource::SyntheticClassification { n_seqs: 48, seed: 7, min_len: 12, max_len: 24 },
        encoder: EncoderDims { d_model: 16, n_heads: 2, n_layers: 1, d_ff: 32 },
        ..ExperimentConfig::default()
    }
}

/// Plays compute party `id` of one PPHH batch over `transport`. The peer
/// process must run the same config with the other id; both derive the
/// model, the batch and the dealer output from it.
pub fn run_party(cfg: &ExperimentConfig, id: usize, transport: Box<dyn Transport>) -> Result<PartyOutcome> {
    cfg.validate()?;
    if cfg.method != Method::Pphh {
        return Err(BenchError::Config(format!("party sessions run pphh, got {}", cfg.method)));
    }
    if id > 1 {
        return Err(BenchError::Config(format!("party id must be 0 or 1, got {id}")));
    }
    let ds = cfg.dataset.load(cfg.n_clients)?;
    let bundle = build_bundle(cfg, &ds)?;
    let batch = hvfl_core::data::batch_iter(&ds, &ds.test, cfg.batch_size, cfg.n_clients, cfg.seeds[0])?
        .into_iter()
        .next()
        .ok_or_else(|| BenchError::Config("empty test split".into()))?;
    let pcfg = pipeline_config(cfg);
    let chan = Channel::new(id, transport, pcfg.profile.clone(), pcfg.mode).with_transcript_hash();
    let run = run_pphh_party(chan, &batch.parts, &bundle, &pcfg)?;
    let t = &run.result.transcript;
    Ok(PartyOutcome {
        party: id,
        config_hash: cfg.hash(),
        transcript_hash: run.transcript_hash.expect("hashing channel"),
        rounds: t.rounds,
        bytes_sent: t.bytes_sent.get(&format!("party{id}")).copied().unwrap_or(0),
        predictions: run.result.predictions,
    })
}
