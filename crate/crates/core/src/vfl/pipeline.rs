use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use super::cost::{encoder_flops, mlp_flops, mlp_tape};
use super::masked::masked_batch_input;
use super::secure::{deliver_outputs, hcat_shares, mlp_secure, share_mlp, submit_shares, SharedLayer, FRAC};
use super::{PartitionedSequence, PipelineConfig, PipelineResult, Result, VflError};
use crate::fxp::{decode_vec, encode_slice, RingTensor};
use crate::mpc::{self, dealer_generate, run_pair, stage, MpcError, Party, SharedTensor, StageStats, Transcript};
use crate::netsim::{Channel, ClockMode, Link};
use crate::nn::{Bind, Graph, Mat, ModelBundle};

const CLIENT_RNG_TAG: u64 = 0xc11e_47ab_0000_0000;

fn check_batch(bundle: &ModelBundle, batch: &[PartitionedSequence]) -> Result<usize> {
    if batch.is_empty() {
        return Err(VflError::Pipeline("empty batch".into()));
    }
    for seq in batch {
        if seq.n_clients() != bundle.spec.n_clients {
            return Err(VflError::Pipeline(format!("{} is split over {} clients, model expects {}", seq.seq_id, seq.n_clients(), bundle.spec.n_clients)));
        }
        seq.validate()?;
    }
    Ok(batch.iter().map(|s| s.total_len).max().unwrap_or(0))
}

/// Every client's embedding of the batch from its masked sequences, with
/// the stage time: the slowest client, since clients run concurrently.
fn embed(bundle: &ModelBundle, batch: &[PartitionedSequence], mode: ClockMode, cfg: &PipelineConfig) -> Result<(Vec<Mat>, f64)> {
    let pad_to = check_batch(bundle, batch)?;
    let mut out = Vec::with_capacity(bundle.encoders.len());
    let mut slowest: f64 = 0.0;
    for (c, enc) in bundle.encoders.iter().enumerate() {
        let t0 = Instant::now();
        let inp = masked_batch_input(batch, c, enc.cfg.d_in, pad_to)?;
        let mut g = Graph::new();
        let v = enc.forward(&mut g, &bundle.store, Bind::Frozen, &inp)?;
        out.push(g.value(v).clone());
        let t = match mode {
            ClockMode::Simulated => cfg.session.compute.flop_time(encoder_flops(&enc.cfg, enc.out_width(&bundle.store), &vec![pad_to; batch.len()])),
            ClockMode::Real => t0.elapsed().as_secs_f64(),
        };
        slowest = slowest.max(t);
    }
    Ok((out, slowest))
}

/// Plaintext embeddings `batch x (h_pub + h_priv)` of every client.
pub fn client_embeddings(bundle: &ModelBundle, batch: &[PartitionedSequence]) -> Result<Vec<Mat>> {
    Ok(embed(bundle, batch, ClockMode::Simulated, &PipelineConfig::simulated(crate::netsim::NetworkProfile::lan()))?.0)
}

/// The all-plaintext output of `bundle` on `batch`, one value per record.
pub fn reference_outputs(bundle: &ModelBundle, batch: &[PartitionedSequence]) -> Result<Vec<f64>> {
    let emb = client_embeddings(bundle, batch)?;
    Ok(bundle.heads_eval(&emb).0.data)
}

fn private_parts(bundle: &ModelBundle, emb: &[Mat]) -> Result<Vec<RingTensor>> {
    let hp = bundle.spec.h_pub;
    emb.iter().map(|e| Ok(encode_slice(vec![e.rows, e.cols - hp], &e.cols_slice(hp, e.cols).data, FRAC)?)).collect()
}

fn finish(p: &Party, out: RingTensor) -> mpc::Result<RingTensor> {
    if !p.tape().is_exhausted() {
        return Err(MpcError::TapeMismatch { requested: "end of pipeline".into(), found: format!("{} unused correlations", p.tape().remaining()) });
    }
    Ok(out)
}

fn assemble(p: &mut Party, inputs: &[SharedTensor]) -> mpc::Result<SharedTensor> {
    p.staged(stage::RECONSTRUCT_INPUT, |p| {
        let x = hcat_shares(&inputs.iter().collect::<Vec<_>>())?;
        p.charge(x.len() as u64);
        Ok(x)
    })
}

fn vfl_party(p: &mut Party, inputs: &[SharedTensor], head: &[SharedLayer]) -> mpc::Result<RingTensor> {
    let x = assemble(p, inputs)?;
    let y = p.staged(stage::PRIVATE_HEAD_FORWARD, |p| mlp_secure(p, head, &x))?;
    let out = p.reveal_output(&y)?;
    finish(p, out)
}

fn pphh_party(p: &mut Party, inputs: &[SharedTensor], private: &[SharedLayer], fusion: &[SharedLayer], y_pub: &RingTensor) -> mpc::Result<RingTensor> {
    let x = assemble(p, inputs)?;
    let y_priv = p.staged(stage::PRIVATE_HEAD_FORWARD, |p| mlp_secure(p, private, &x))?;
    let y = p.staged(stage::FUSION_HEAD_FORWARD, |p| {
        // Only the aggregator's value is used; party 1 reads the public shape.
        let own = (p.id() == 0).then_some(y_pub);
        let yp = p.share_input(0, own)?.reshape(y_pub.shape().to_vec())?;
        let z = hcat_shares(&[&yp, &y_priv])?;
        mlp_secure(p, fusion, &z)
    })?;
    let out = p.reveal_output(&y)?;
    finish(p, out)
}

type PartyOut = (mpc::Result<RingTensor>, Transcript);

fn collect(r0: PartyOut, r1: PartyOut) -> Result<(Vec<f64>, Transcript)> {
    let (y0, y1) = (r0.0?, r1.0?);
    if y0 != y1 {
        return Err(VflError::Pipeline("compute parties revealed different outputs".into()));
    }
    Ok((decode_vec(&y0), r0.1.merge(&r1.1)))
}

/// VFL+MPC: plaintext encoders at the clients, the whole head under MPC.
pub fn run_vfl_mpc(batch: &[PartitionedSequence], bundle: &ModelBundle, cfg: &PipelineConfig) -> Result<PipelineResult> {
    if bundle.spec.variant.is_hybrid() {
        return Err(VflError::Pipeline(format!("VFL+MPC runs P variants, got {}", bundle.spec.variant)));
    }
    let b = batch.len();
    let (emb, t_local) = embed(bundle, batch, cfg.mode, cfg)?;
    let mut clients = Transcript::default();
    clients.add_stage(stage::LOCAL_TRANSFORMER_FORWARD, StageStats { time: t_local, ..Default::default() });
    let mut rng = ChaCha12Rng::seed_from_u64(cfg.session.seed ^ CLIENT_RNG_TAG);
    let (inputs, st) = submit_shares(&private_parts(bundle, &emb)?, cfg, &mut rng, &mut clients)?;
    clients.add_stage(stage::COMMUNICATION_SHARE_HANDLING, st);

    let head = share_mlp(&bundle.private_head, &bundle.store, cfg.dealer_seed, "priv", cfg.session.session)?;
    let tapes = dealer_generate(&mlp_tape(b, &bundle.private_head.widths(&bundle.store)), cfg.dealer_seed);
    let (r0, r1) = run_pair(cfg.profile.clone(), cfg.mode, tapes, cfg.session, |p| {
        let id = p.id() as usize;
        (vfl_party(p, &inputs[id], &head[id]), p.transcript())
    });
    let (predictions, cp) = collect(r0, r1)?;
    let mut transcript = cp.merge(&clients);
    let delivery = deliver_outputs(&encode_slice(vec![b], &predictions, FRAC)?.into_data(), bundle.spec.n_clients, cfg, &mut transcript)?;
    transcript.add_stage(stage::OUTPUT_REVEAL, delivery);
    Ok(PipelineResult { predictions, transcript })
}

struct PphhPrepared<'a> {
    b: usize,
    clients: Transcript,
    y_pub: RingTensor,
    inputs: [Vec<SharedTensor>; 2],
    private: [Vec<SharedLayer<'a>>; 2],
    fusion: [Vec<SharedLayer<'a>>; 2],
    tapes: (mpc::DealerTape, mpc::DealerTape),
}

/// Client-side work and dealer output of a PPHH batch: everything the two
/// compute parties receive before their session starts.
fn pphh_prepare<'a>(batch: &[PartitionedSequence], bundle: &'a ModelBundle, cfg: &PipelineConfig) -> Result<PphhPrepared<'a>> {
    let (Some(public), Some(fusion)) = (&bundle.public_head, &bundle.fusion_head) else {
        return Err(VflError::Pipeline(format!("PPHH runs H variants, got {}", bundle.spec.variant)));
    };
    let b = batch.len();
    let hp = bundle.spec.h_pub;
    let (emb, t_local) = embed(bundle, batch, cfg.mode, cfg)?;
    let mut clients = Transcript::default();
    clients.add_stage(stage::LOCAL_TRANSFORMER_FORWARD, StageStats { time: t_local, ..Default::default() });

    // One-way push of public embeddings to the aggregator, counted as a round.
    let mut push = StageStats { rounds: 1, ..Default::default() };
    let mut received = Vec::with_capacity(emb.len());
    for (c, e) in emb.iter().enumerate() {
        let mut link = Link::new(cfg.profile.clone());
        let bits = e.cols_slice(0, hp).data.iter().map(|v| v.to_bits()).collect();
        let (payload, t) = link.deliver(bits)?;
        push.bytes += link.counters().bytes_sent;
        push.time = push.time.max(t);
        clients.add_bytes(&format!("client{c}"), link.counters().bytes_sent);
        received.push(Mat::from_vec(b, hp, payload.into_iter().map(f64::from_bits).collect()));
    }
    let t0 = Instant::now();
    let e_pub = Mat::hcat(&received.iter().collect::<Vec<_>>());
    let y_pub = public.eval(&bundle.store, &e_pub);
    push.time += match cfg.mode {
        ClockMode::Simulated => cfg.session.compute.flop_time(mlp_flops(b, &public.widths(&bundle.store))),
        ClockMode::Real => t0.elapsed().as_secs_f64(),
    };
    clients.add_stage(stage::PUBLIC_HEAD_FORWARD, push);
    let y_pub = encode_slice(vec![b, y_pub.cols], &y_pub.data, FRAC)?;

    let mut rng = ChaCha12Rng::seed_from_u64(cfg.session.seed ^ CLIENT_RNG_TAG);
    let (inputs, st) = submit_shares(&private_parts(bundle, &emb)?, cfg, &mut rng, &mut clients)?;
    clients.add_stage(stage::COMMUNICATION_SHARE_HANDLING, st);

    let private = share_mlp(&bundle.private_head, &bundle.store, cfg.dealer_seed, "priv", cfg.session.session)?;
    let fus = share_mlp(fusion, &bundle.store, cfg.dealer_seed, "fus", cfg.session.session)?;
    let mut spec = mlp_tape(b, &bundle.private_head.widths(&bundle.store));
    spec.extend(&mlp_tape(b, &fusion.widths(&bundle.store)));
    let tapes = dealer_generate(&spec, cfg.dealer_seed);
    Ok(PphhPrepared { b, clients, y_pub, inputs, private, fusion: fus, tapes })
}

fn pphh_finish(bundle: &ModelBundle, cfg: &PipelineConfig, b: usize, predictions: Vec<f64>, cp: Transcript, clients: &Transcript) -> Result<PipelineResult> {
    let mut transcript = cp.merge(clients);
    transcript.rounds += 1;
    let delivery = deliver_outputs(&encode_slice(vec![b], &predictions, FRAC)?.into_data(), bundle.spec.n_clients, cfg, &mut transcript)?;
    transcript.add_stage(stage::OUTPUT_REVEAL, delivery);
    Ok(PipelineResult { predictions, transcript })
}

/// PPHH: public embeddings go in plaintext to the aggregator's public head
/// while the compute parties run the private head; `y_pub` is then shared
/// by the aggregator and both meet in the fusion head.
pub fn run_pphh(batch: &[PartitionedSequence], bundle: &ModelBundle, cfg: &PipelineConfig) -> Result<PipelineResult> {
    let PphhPrepared { b, clients, y_pub, inputs, private, fusion, tapes } = pphh_prepare(batch, bundle, cfg)?;
    let (r0, r1) = run_pair(cfg.profile.clone(), cfg.mode, tapes, cfg.session, |p| {
        let id = p.id() as usize;
        (pphh_party(p, &inputs[id], &private[id], &fusion[id], &y_pub), p.transcript())
    });
    let (predictions, cp) = collect(r0, r1)?;
    pphh_finish(bundle, cfg, b, predictions, cp, &clients)
}

/// One compute party's view of a PPHH batch run over `chan`.
#[derive(Clone, Debug, PartialEq)]
pub struct PartyRun {
    pub result: PipelineResult,
    /// Digest of both directions of compute-party traffic, when `chan` records one.
    pub transcript_hash: Option<String>,
}

/// Runs compute party `chan.party()` of [`run_pphh`] against a peer over
/// any transport. Both sides derive the client submissions and dealer
/// tapes from the shared model, batch and seeds, so two independent
/// processes given the same arguments meet in the same session. The
/// transcript holds this party's bytes plus the client-side stages.
pub fn run_pphh_party(chan: Channel, batch: &[PartitionedSequence], bundle: &ModelBundle, cfg: &PipelineConfig) -> Result<PartyRun> {
    let pre = pphh_prepare(batch, bundle, cfg)?;
    let id = chan.party();
    let tape = if id == 0 { pre.tapes.0 } else { pre.tapes.1 };
    let mut p = Party::new(chan, tape, cfg.session);
    let out = pphh_party(&mut p, &pre.inputs[id], &pre.private[id], &pre.fusion[id], &pre.y_pub)?;
    let hash = p.transcript_hash();
    let result = pphh_finish(bundle, cfg, pre.b, decode_vec(&out), p.transcript(), &pre.clients)?;
    Ok(PartyRun { result, transcript_hash: hash })
}
