//! Secure recovery of global time-step positions from secret-shared order keys.
//!
//! A key packs `(ticks, client, local index)` so all keys are distinct and
//! compare lexicographically on that triple. The compute parties run one
//! batched sign extraction over every pairwise difference; the position of
//! key `i` is the number of keys below it. Each client receives the two
//! shares of its own positions only.

use std::collections::BTreeSet;

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use super::{PipelineConfig, Result, VflError, POSITION_RECOVERY};
use crate::fxp::RingTensor;
use crate::mpc::{dealer_generate, run_pair, share, SharedTensor, StageStats, TapeSpec, Transcript};
use crate::netsim::Link;

pub const KEY_INDEX_BITS: u32 = 12;
pub const KEY_CLIENT_BITS: u32 = 4;
/// Keys stay below 2^62 so every pairwise difference keeps its sign bit.
pub const KEY_TICK_BITS: u32 = 62 - KEY_INDEX_BITS - KEY_CLIENT_BITS;

pub fn pack_key(ticks: u64, client: usize, index: usize) -> Result<u64> {
    if ticks >> KEY_TICK_BITS != 0 {
        return Err(VflError::Key(format!("{ticks} ticks exceed {KEY_TICK_BITS} bits")));
    }
    if client >> KEY_CLIENT_BITS != 0 || index >> KEY_INDEX_BITS != 0 {
        return Err(VflError::Key(format!("client {client} or index {index} exceeds its packed width")));
    }
    Ok((ticks << (KEY_CLIENT_BITS + KEY_INDEX_BITS)) | ((client as u64) << KEY_INDEX_BITS) | index as u64)
}

/// `(ticks, client, index)`.
pub fn unpack_key(key: u64) -> (u64, usize, usize) {
    let index = (key & ((1 << KEY_INDEX_BITS) - 1)) as usize;
    let client = ((key >> KEY_INDEX_BITS) & ((1 << KEY_CLIENT_BITS) - 1)) as usize;
    (key >> (KEY_CLIENT_BITS + KEY_INDEX_BITS), client, index)
}

/// Correlations consumed by a recovery over `k` keys in total.
pub fn position_tape(k: usize) -> TapeSpec {
    TapeSpec::msb(k * k.saturating_sub(1) / 2)
}

#[derive(Clone, Debug, PartialEq)]
pub struct PositionRecovery {
    /// `positions[c][j]` is the global position of client `c`'s `j`-th key.
    pub positions: Vec<Vec<usize>>,
    pub transcript: Transcript,
}

/// Runs the recovery for `keys[c]`, the packed keys of client `c`.
pub fn secure_position_recovery(keys: &[Vec<u64>], cfg: &PipelineConfig) -> Result<PositionRecovery> {
    let mut seen = BTreeSet::new();
    for (c, ks) in keys.iter().enumerate() {
        for &k in ks {
            let (ticks, client, index) = unpack_key(k);
            if k >> 62 != 0 {
                return Err(VflError::Key(format!("key {k:#x} exceeds 62 bits")));
            }
            if client != c {
                return Err(VflError::Key(format!("key of client {client} submitted by client {c}")));
            }
            if !seen.insert(k) {
                return Err(VflError::DuplicateKey { ticks, client, index });
            }
        }
    }
    let n = seen.len();
    if n == 0 {
        return Err(VflError::Key("no keys submitted".into()));
    }
    let session = cfg.session.session;
    let mut rng = ChaCha12Rng::seed_from_u64(cfg.session.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut transcript = Transcript::default();
    let mut submitted: [Vec<u64>; 2] = [Vec::with_capacity(n), Vec::with_capacity(n)];
    let mut up = StageStats::default();
    for (c, ks) in keys.iter().enumerate() {
        let (s0, s1) = share(&RingTensor::new(vec![ks.len()], ks.clone(), 0)?, &mut rng, session);
        for (cp, s) in [s0, s1].into_iter().enumerate() {
            let mut link = Link::new(cfg.profile.clone());
            let (payload, t) = link.deliver(s.into_share().into_data())?;
            submitted[cp].extend(payload);
            up.bytes += link.counters().bytes_sent;
            up.time = up.time.max(t);
            transcript.add_bytes(&format!("client{c}"), link.counters().bytes_sent);
        }
    }
    let tapes = dealer_generate(&position_tape(n), cfg.dealer_seed);
    let (r0, r1) = run_pair(cfg.profile.clone(), cfg.mode, tapes, cfg.session, |p| {
        let s = &submitted[p.id() as usize];
        let p0 = p.id() == 0;
        let out = p.staged(POSITION_RECOVERY, |p| {
            let mut d = Vec::with_capacity(n * (n - 1) / 2);
            for i in 0..n {
                for j in i + 1..n {
                    d.push(s[i].wrapping_sub(s[j]));
                }
            }
            let x = SharedTensor::new(p.id(), RingTensor::new(vec![d.len()], d, 0)?, p.session());
            let below = p.msb(&x)?;
            let bits = below.data();
            let mut pos = vec![0u64; n];
            let mut idx = 0;
            for i in 0..n {
                for j in i + 1..n {
                    let b = bits[idx];
                    pos[j] = pos[j].wrapping_add(b);
                    pos[i] = pos[i].wrapping_add((p0 as u64).wrapping_sub(b));
                    idx += 1;
                }
            }
            Ok(pos)
        });
        (out, p.transcript())
    });
    let (pos0, pos1) = (r0.0?, r1.0?);
    transcript = transcript.merge(&r0.1.merge(&r1.1));
    let mut down = StageStats::default();
    let mut positions = Vec::with_capacity(keys.len());
    let mut off = 0;
    for ks in keys {
        let range = off..off + ks.len();
        off += ks.len();
        let mut halves = Vec::with_capacity(2);
        for (cp, shares) in [&pos0, &pos1].into_iter().enumerate() {
            let mut link = Link::new(cfg.profile.clone());
            let (payload, t) = link.deliver(shares[range.clone()].to_vec())?;
            down.bytes += link.counters().bytes_sent;
            down.time = down.time.max(t);
            transcript.add_bytes(&format!("party{cp}"), link.counters().bytes_sent);
            halves.push(payload);
        }
        positions.push(halves[0].iter().zip(&halves[1]).map(|(a, b)| a.wrapping_add(*b) as usize).collect());
    }
    transcript.add_stage(POSITION_RECOVERY, StageStats { rounds: 0, bytes: up.bytes + down.bytes, time: up.time + down.time });
    Ok(PositionRecovery { positions, transcript })
}
