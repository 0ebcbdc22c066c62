//! Two-party additive secret sharing over Z_{2^64} with a trusted dealer.
//!
//! Each [`Party`] runs the same program from its own side, in lockstep with
//! its peer over a [`Channel`]. Linear operations are local. Every
//! interactive operation is exactly one [`Channel`] round, so round counts
//! depend only on the op sequence.
//!
//! Per-primitive round constants and error bounds against the real-valued
//! result on the decoded inputs (LSB = 2^-16):
//!
//! | op | rounds | bound | domain |
//! |---|---|---|---|
//! | add / add_public | 0 | exact in the ring | |
//! | mul_public | 0 | exact in the ring, before trunc | |
//! | trunc | 0 | 1 LSB | magnitude below 2^40 |
//! | mul | 1 | 4 LSB | |
//! | matmul | 1 | 2k LSB, inner dimension k | |
//! | reveal, share_input | 1 | exact | |
//! | msb | 8 | exact | |
//! | relu | 9 | 2 LSB | |
//! | exp | 8 | 1% relative + 4 LSB | [-16, 4] |
//! | reciprocal | 29 | 0.1% relative + 2 LSB | [0.1, 512] |
//! | inv_sqrt | 33 | 0.1% relative + 2 LSB | [0.005, 512] |
//! | softmax | 38 | 0.02 per entry | scores minus shift in [-16, 4] |

pub mod dealer;
pub mod nonlinear;
mod transcript;
mod weights;

use std::time::Instant;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;
use thiserror::Error;

use crate::fxp::{self, FxpError, RingTensor};
use crate::netsim::{Channel, ClockMode, ComputeModel, Counters, NetError};
use crate::par::Exec;

pub use dealer::{dealer_generate, DealerTape, Requirement, TapeSpec};
pub use transcript::{stage, StageStats, Transcript};
pub use weights::{split_weights, RowSource, WeightShare};

use dealer::{col_block, stream_rows};

#[derive(Debug, Error)]
pub enum MpcError {
    #[error(transparent)]
    Fxp(#[from] FxpError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error("dealer underrun: no {0} left on the tape")]
    DealerUnderrun(&'static str),
    #[error("tape mismatch: requested {requested}, tape holds {found}")]
    TapeMismatch { requested: String, found: String },
    #[error("share metadata mismatch: {0}")]
    Metadata(String),
    #[error("peer sent {got} elements, expected {expected}")]
    PeerLength { expected: usize, got: usize },
    #[error("invalid tape encoding: {0}")]
    TapeFormat(String),
}

pub type Result<T> = std::result::Result<T, MpcError>;

/// Message kinds on the wire.
pub mod kind {
    pub const MUL: u16 = 0x10;
    pub const MATMUL: u16 = 0x11;
    pub const MASKED_OPEN: u16 = 0x12;
    pub const AND_LEVEL: u16 = 0x13;
    pub const B2A: u16 = 0x14;
    pub const REVEAL: u16 = 0x15;
    pub const INPUT: u16 = 0x16;
}

/// One party's additive share of a ring tensor.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SharedTensor {
    party: u8,
    share: RingTensor,
    session: u64,
}

impl SharedTensor {
    pub fn new(party: u8, share: RingTensor, session: u64) -> Self {
        assert!(party < 2, "party id must be 0 or 1");
        Self { party, share, session }
    }

    pub fn party(&self) -> u8 {
        self.party
    }

    pub fn share(&self) -> &RingTensor {
        &self.share
    }

    pub fn into_share(self) -> RingTensor {
        self.share
    }

    pub fn session(&self) -> u64 {
        self.session
    }

    pub fn shape(&self) -> &[usize] {
        self.share.shape()
    }

    pub fn len(&self) -> usize {
        self.share.len()
    }

    pub fn is_empty(&self) -> bool {
        self.share.is_empty()
    }

    pub fn frac_bits(&self) -> u32 {
        self.share.frac_bits()
    }

    pub fn data(&self) -> &[u64] {
        self.share.data()
    }

    fn with_data(&self, shape: Vec<usize>, data: Vec<u64>, frac: u32) -> SharedTensor {
        SharedTensor { party: self.party, share: RingTensor::new(shape, data, frac).expect("shape"), session: self.session }
    }

    /// Same share, reinterpreted at scale `frac`.
    pub fn relabel(&self, frac: u32) -> SharedTensor {
        self.with_data(self.shape().to_vec(), self.data().to_vec(), frac)
    }

    pub fn reshape(&self, shape: Vec<usize>) -> Result<SharedTensor> {
        Ok(SharedTensor { party: self.party, share: self.share.clone().reshape(shape)?, session: self.session })
    }

    /// Flat concatenation. All parts must agree on party, session and scale.
    pub fn concat(parts: &[&SharedTensor]) -> Result<SharedTensor> {
        let first = parts.first().ok_or_else(|| MpcError::Metadata("concat of nothing".into()))?;
        let mut data = Vec::with_capacity(parts.iter().map(|p| p.len()).sum());
        for p in parts {
            check_pair(first, p)?;
            if p.frac_bits() != first.frac_bits() {
                return Err(MpcError::Metadata("concat across scales".into()));
            }
            data.extend_from_slice(p.data());
        }
        let n = data.len();
        Ok(first.with_data(vec![n], data, first.frac_bits()))
    }

    /// Elements `start .. start + numel(shape)` as a tensor of `shape`.
    pub fn slice(&self, start: usize, shape: Vec<usize>) -> SharedTensor {
        let n: usize = shape.iter().product();
        self.with_data(shape, self.data()[start..start + n].to_vec(), self.frac_bits())
    }

    pub fn map(&self, shape: Vec<usize>, f: impl FnOnce(&[u64]) -> Vec<u64>) -> SharedTensor {
        let d = f(self.data());
        self.with_data(shape, d, self.frac_bits())
    }
}

fn check_pair(x: &SharedTensor, y: &SharedTensor) -> Result<()> {
    if x.party != y.party {
        return Err(MpcError::Metadata(format!("party {} vs {}", x.party, y.party)));
    }
    if x.session != y.session {
        return Err(MpcError::Metadata(format!("session {:#x} vs {:#x}", x.session, y.session)));
    }
    Ok(())
}

fn check_same(x: &SharedTensor, y: &SharedTensor) -> Result<()> {
    check_pair(x, y)?;
    if x.shape() != y.shape() {
        return Err(MpcError::Metadata(format!("shape {:?} vs {:?}", x.shape(), y.shape())));
    }
    Ok(())
}

/// Splits `secret` into two additive shares; share 0 is uniform.
pub fn share(secret: &RingTensor, rng: &mut impl RngCore, session: u64) -> (SharedTensor, SharedTensor) {
    let s0: Vec<u64> = (0..secret.len()).map(|_| rng.next_u64()).collect();
    let s1: Vec<u64> = secret.data().iter().zip(&s0).map(|(x, r)| x.wrapping_sub(*r)).collect();
    let shape = secret.shape().to_vec();
    let f = secret.frac_bits();
    (
        SharedTensor::new(0, RingTensor::new(shape.clone(), s0, f).expect("shape"), session),
        SharedTensor::new(1, RingTensor::new(shape, s1, f).expect("shape"), session),
    )
}

/// Local reconstruction of two shares of one secret.
pub fn reconstruct(s0: &SharedTensor, s1: &SharedTensor) -> Result<RingTensor> {
    if s0.session != s1.session {
        return Err(MpcError::Metadata(format!("session {:#x} vs {:#x}", s0.session, s1.session)));
    }
    if s0.party == s1.party {
        return Err(MpcError::Metadata("both shares belong to the same party".into()));
    }
    Ok(s0.share.ring_add(&s1.share)?)
}

fn wadd(a: &[u64], b: &[u64]) -> Vec<u64> {
    a.iter().zip(b).map(|(x, y)| x.wrapping_add(*y)).collect()
}

fn wsub(a: &[u64], b: &[u64]) -> Vec<u64> {
    a.iter().zip(b).map(|(x, y)| x.wrapping_sub(*y)).collect()
}

struct OpenStage {
    label: String,
    counters: Counters,
    model_time: f64,
    compute_time: f64,
    wall: Instant,
}

/// Configuration shared by both endpoints of a session.
#[derive(Clone, Copy, Debug)]
pub struct SessionConfig {
    pub session: u64,
    pub exec: Exec,
    pub compute: ComputeModel,
    pub seed: u64,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self { session: 1, exec: Exec::default(), compute: ComputeModel::default(), seed: 0 }
    }
}

/// One compute party's endpoint of a two-party session.
pub struct Party {
    id: u8,
    session: u64,
    chan: Channel,
    tape: DealerTape,
    exec: Exec,
    compute: ComputeModel,
    compute_time: f64,
    rng: ChaCha12Rng,
    transcript: Transcript,
    open: Option<OpenStage>,
}

impl Party {
    pub fn new(chan: Channel, tape: DealerTape, cfg: SessionConfig) -> Self {
        let id = chan.party() as u8;
        assert_eq!(id, tape.party, "tape belongs to the other party");
        let mut seed = [0u8; 32];
        seed[..8].copy_from_slice(&cfg.seed.to_le_bytes());
        seed[8..16].copy_from_slice(&cfg.session.to_le_bytes());
        seed[16] = id;
        Self {
            id,
            session: cfg.session,
            chan,
            tape,
            exec: cfg.exec,
            compute: cfg.compute,
            compute_time: 0.0,
            rng: ChaCha12Rng::from_seed(seed),
            transcript: Transcript::default(),
            open: None,
        }
    }

    pub fn id(&self) -> u8 {
        self.id
    }

    pub fn session(&self) -> u64 {
        self.session
    }

    pub fn exec(&self) -> Exec {
        self.exec
    }

    pub fn counters(&self) -> Counters {
        self.chan.counters()
    }

    pub fn channel(&self) -> &Channel {
        &self.chan
    }

    pub fn tape(&self) -> &DealerTape {
        &self.tape
    }

    pub fn compute_model(&self) -> ComputeModel {
        self.compute
    }

    /// Model time: communication plus charged compute (seconds).
    pub fn model_time(&self) -> f64 {
        self.chan.model_time() + self.compute_time
    }

    /// Adds `ops` ring operations to the simulated compute clock.
    pub fn charge(&mut self, ops: u64) {
        self.compute_time += self.compute.ring_time(ops);
    }

    /// Wraps `f` in a named stage; rounds, bytes and time are attributed to it.
    pub fn staged<R>(&mut self, label: &str, f: impl FnOnce(&mut Self) -> Result<R>) -> Result<R> {
        if self.open.is_some() {
            return f(self);
        }
        self.open = Some(OpenStage {
            label: label.to_string(),
            counters: self.chan.counters(),
            model_time: self.chan.model_time(),
            compute_time: self.compute_time,
            wall: Instant::now(),
        });
        let out = f(self);
        let o = self.open.take().expect("open stage");
        let d = self.chan.counters().delta_since(&o.counters);
        let time = match self.chan.mode() {
            ClockMode::Simulated => (self.chan.model_time() - o.model_time) + (self.compute_time - o.compute_time),
            ClockMode::Real => o.wall.elapsed().as_secs_f64(),
        };
        self.transcript.add_stage(&o.label, StageStats { rounds: d.rounds, bytes: d.bytes_sent, time });
        out
    }

    /// The party's transcript: its own bytes and the session's rounds.
    pub fn transcript(&self) -> Transcript {
        let mut t = self.transcript.clone();
        let c = self.chan.counters();
        t.rounds = c.rounds;
        t.bytes_sent.insert(format!("party{}", self.id), c.bytes_sent);
        t
    }

    pub fn transcript_hash(&self) -> Option<String> {
        self.chan.transcript_hash()
    }

    fn own(&self, x: &SharedTensor) -> Result<()> {
        if x.party != self.id || x.session != self.session {
            return Err(MpcError::Metadata(format!(
                "share of party {} session {:#x} used by party {} session {:#x}",
                x.party, x.session, self.id, self.session
            )));
        }
        Ok(())
    }

    fn wrap(&self, shape: Vec<usize>, data: Vec<u64>, frac: u32) -> SharedTensor {
        SharedTensor::new(self.id, RingTensor::new(shape, data, frac).expect("shape"), self.session)
    }

    /// A public tensor viewed as a sharing (party 0 holds it, party 1 holds zero).
    pub fn public(&self, t: &RingTensor) -> SharedTensor {
        let data = if self.id == 0 { t.data().to_vec() } else { vec![0; t.len()] };
        self.wrap(t.shape().to_vec(), data, t.frac_bits())
    }

    pub fn public_scalar(&self, shape: Vec<usize>, v: f64, frac: u32) -> Result<SharedTensor> {
        let e = fxp::encode_scalar(v, frac)?;
        let n: usize = shape.iter().product();
        Ok(self.wrap(shape, vec![if self.id == 0 { e } else { 0 }; n], frac))
    }

    pub fn zeros(&self, shape: Vec<usize>, frac: u32) -> SharedTensor {
        let n: usize = shape.iter().product();
        self.wrap(shape, vec![0; n], frac)
    }

    pub fn add(&self, x: &SharedTensor, y: &SharedTensor) -> Result<SharedTensor> {
        self.own(x)?;
        check_same(x, y)?;
        Ok(SharedTensor { party: self.id, share: x.share.ring_add(&y.share)?, session: self.session })
    }

    pub fn sub(&self, x: &SharedTensor, y: &SharedTensor) -> Result<SharedTensor> {
        self.own(x)?;
        check_same(x, y)?;
        Ok(SharedTensor { party: self.id, share: x.share.ring_sub(&y.share)?, session: self.session })
    }

    pub fn neg(&self, x: &SharedTensor) -> SharedTensor {
        SharedTensor { party: x.party, share: x.share.ring_neg(), session: x.session }
    }

    pub fn add_public(&self, x: &SharedTensor, c: &RingTensor) -> Result<SharedTensor> {
        self.own(x)?;
        if self.id == 0 {
            Ok(SharedTensor { party: 0, share: x.share.ring_add(c)?, session: self.session })
        } else {
            if x.shape() != c.shape() || x.frac_bits() != c.frac_bits() {
                return Err(FxpError::ShapeMismatch { op: "add_public", left: x.shape().to_vec(), right: c.shape().to_vec() }.into());
            }
            Ok(x.clone())
        }
    }

    pub fn add_public_scalar(&self, x: &SharedTensor, v: f64) -> Result<SharedTensor> {
        self.own(x)?;
        let e = fxp::encode_scalar(v, x.frac_bits())?;
        if self.id == 0 {
            Ok(x.map(x.shape().to_vec(), |d| d.iter().map(|a| a.wrapping_add(e)).collect()))
        } else {
            Ok(x.clone())
        }
    }

    /// Multiplies by a public integer; no rescaling.
    pub fn mul_public_int(&self, x: &SharedTensor, k: i64) -> SharedTensor {
        let k = k as u64;
        x.map(x.shape().to_vec(), |d| d.iter().map(|a| a.wrapping_mul(k)).collect())
    }

    /// Elementwise product with a public fixed-point tensor, then truncation.
    pub fn mul_public(&mut self, x: &SharedTensor, c: &RingTensor) -> Result<SharedTensor> {
        self.own(x)?;
        let prod = x.share.ring_mul(c)?;
        let raw = SharedTensor { party: self.id, share: prod, session: self.session }.relabel(x.frac_bits() + c.frac_bits());
        self.charge(x.len() as u64);
        Ok(self.trunc(&raw, c.frac_bits()))
    }

    pub fn mul_public_scalar(&mut self, x: &SharedTensor, v: f64) -> Result<SharedTensor> {
        let f = x.frac_bits();
        let c = fxp::encode_scalar(v, f)?;
        let raw = x.map(x.shape().to_vec(), |d| d.iter().map(|a| a.wrapping_mul(c)).collect()).relabel(2 * f);
        Ok(self.trunc(&raw, f))
    }

    /// Probabilistic local truncation by `bits`: party 0 shifts its share,
    /// party 1 shifts the negation of its share and negates back.
    pub fn trunc(&self, x: &SharedTensor, bits: u32) -> SharedTensor {
        let frac = x.frac_bits().saturating_sub(bits);
        let d: Vec<u64> = if self.id == 0 {
            x.data().iter().map(|v| v >> bits).collect()
        } else {
            x.data().iter().map(|v| (v.wrapping_neg() >> bits).wrapping_neg()).collect()
        };
        self.wrap(x.shape().to_vec(), d, frac)
    }

    /// Reveals `x` to both parties (1 round).
    pub fn reveal(&mut self, x: &SharedTensor) -> Result<RingTensor> {
        self.own(x)?;
        let peer = self.chan.exchange(kind::REVEAL, x.data())?;
        if peer.len() != x.len() {
            return Err(MpcError::PeerLength { expected: x.len(), got: peer.len() });
        }
        Ok(RingTensor::new(x.shape().to_vec(), wadd(x.data(), &peer), x.frac_bits())?)
    }

    /// [`Party::reveal`] recorded under the `output_reveal` stage.
    pub fn reveal_output(&mut self, x: &SharedTensor) -> Result<RingTensor> {
        self.staged(stage::OUTPUT_REVEAL, |p| p.reveal(x))
    }

    /// Secret-shares a value held by `owner` (1 round). The owner passes
    /// `Some(value)`; the other party passes `None` and learns only a mask.
    pub fn share_input(&mut self, owner: u8, value: Option<&RingTensor>) -> Result<SharedTensor> {
        if self.id == owner {
            let v = value.ok_or_else(|| MpcError::Metadata("owner must supply the value".into()))?;
            let mask: Vec<u64> = (0..v.len()).map(|_| self.rng.next_u64()).collect();
            let peer = self.chan.exchange(kind::INPUT, &mask)?;
            if !peer.is_empty() {
                return Err(MpcError::PeerLength { expected: 0, got: peer.len() });
            }
            Ok(self.wrap(v.shape().to_vec(), wsub(v.data(), &mask), v.frac_bits()))
        } else {
            let peer = self.chan.exchange(kind::INPUT, &[])?;
            let (shape, frac) = match value {
                Some(v) if v.len() == peer.len() => (v.shape().to_vec(), v.frac_bits()),
                _ => (vec![peer.len()], fxp::DEFAULT_FRAC_BITS),
            };
            Ok(self.wrap(shape, peer, frac))
        }
    }

    /// Beaver products of several pairs in one round; result scale is the
    /// sum of the operand scales (no truncation).
    pub fn mul_raw_many(&mut self, pairs: &[(&SharedTensor, &SharedTensor)]) -> Result<Vec<SharedTensor>> {
        let mut total = 0;
        for (x, y) in pairs {
            self.own(x)?;
            check_same(x, y)?;
            total += x.len();
        }
        let t = self.tape.take_elem(total)?;
        let b = t.b.to_vec();
        let mut payload = Vec::with_capacity(2 * total);
        let mut off = 0;
        for (x, _) in pairs {
            payload.extend(x.data().iter().zip(&t.a[off..]).map(|(v, a)| v.wrapping_sub(*a)));
            off += x.len();
        }
        off = 0;
        for (_, y) in pairs {
            payload.extend(y.data().iter().zip(&b[off..]).map(|(v, b)| v.wrapping_sub(*b)));
            off += y.len();
        }
        let peer = self.chan.exchange(kind::MUL, &payload)?;
        if peer.len() != payload.len() {
            return Err(MpcError::PeerLength { expected: payload.len(), got: peer.len() });
        }
        let p0 = self.id == 0;
        let mut out = Vec::with_capacity(pairs.len());
        off = 0;
        for (x, y) in pairs {
            let n = x.len();
            let mut z = Vec::with_capacity(n);
            for i in off..off + n {
                let e = payload[i].wrapping_add(peer[i]);
                let d = payload[total + i].wrapping_add(peer[total + i]);
                let mut v = t.c[i].wrapping_add(e.wrapping_mul(b[i])).wrapping_add(d.wrapping_mul(t.a[i]));
                if p0 {
                    v = v.wrapping_add(e.wrapping_mul(d));
                }
                z.push(v);
            }
            out.push(self.wrap(x.shape().to_vec(), z, x.frac_bits() + y.frac_bits()));
            off += n;
        }
        self.charge(4 * total as u64);
        Ok(out)
    }

    pub fn mul_raw(&mut self, x: &SharedTensor, y: &SharedTensor) -> Result<SharedTensor> {
        Ok(self.mul_raw_many(&[(x, y)])?.pop().expect("one product"))
    }

    /// Fixed-point product: Beaver multiplication then truncation by `y`'s scale.
    pub fn mul(&mut self, x: &SharedTensor, y: &SharedTensor) -> Result<SharedTensor> {
        let z = self.mul_raw(x, y)?;
        Ok(self.trunc(&z, y.frac_bits()))
    }

    /// Several matrix products in one round, no truncation.
    pub fn matmul_raw_many(&mut self, pairs: &[(&SharedTensor, &SharedTensor)]) -> Result<Vec<SharedTensor>> {
        let rows: Vec<(&SharedTensor, &dyn RowSource)> = pairs.iter().map(|&(x, w)| (x, w as &dyn RowSource)).collect();
        self.matmul_rows_many(&rows)
    }

    /// Matrix products against right operands produced by row block.
    ///
    /// The round's frame carries every `E = X - A` first, then every
    /// `D = W - B` in row blocks; each received block of `D` is folded into
    /// the output immediately so `W`, `B` and `D` are never materialised whole.
    pub fn matmul_rows_many(&mut self, pairs: &[(&SharedTensor, &dyn RowSource)]) -> Result<Vec<SharedTensor>> {
        let mut dims = Vec::with_capacity(pairs.len());
        for (x, w) in pairs {
            self.own(x)?;
            if w.party() != x.party || w.session() != x.session {
                return Err(MpcError::Metadata(format!("weight share of party {} session {:#x}", w.party(), w.session())));
            }
            let (m, k) = x.share.dims2();
            let (k2, n) = w.dims();
            if k != k2 {
                return Err(FxpError::ShapeMismatch { op: "matmul_beaver", left: x.shape().to_vec(), right: vec![k2, n] }.into());
            }
            dims.push((m, k, n));
        }
        let triples = dims.iter().map(|&(m, k, n)| self.tape.take_matmul(m, k, n)).collect::<Result<Vec<_>>>()?;
        let send_len: usize = dims.iter().map(|&(m, k, n)| m * k + k * n).sum();
        let exec = self.exec;
        let p0 = self.id == 0;
        let mut outs = Vec::with_capacity(pairs.len());
        {
            let mut round = self.chan.round(kind::MATMUL, send_len)?;
            let mut e_own = Vec::with_capacity(pairs.len());
            for ((x, _), t) in pairs.iter().zip(&triples) {
                let e = wsub(x.data(), &t.a);
                round.send(&e)?;
                e_own.push(e);
            }
            let got = round.peer_len()?;
            if got != send_len {
                return Err(MpcError::PeerLength { expected: send_len, got });
            }
            let mut e_open = Vec::with_capacity(pairs.len());
            for e in &e_own {
                let mut buf = vec![0u64; e.len()];
                round.recv_into(&mut buf)?;
                e_open.push(wadd(e, &buf));
            }
            for (j, ((_, w), t)) in pairs.iter().zip(&triples).enumerate() {
                let (m, k, n) = dims[j];
                let e = &e_open[j];
                let a_eff = if p0 { wadd(&t.a, e) } else { t.a.clone() };
                let mut z = t.c.clone();
                let rows = stream_rows(k, n);
                let mut k0 = 0;
                while k0 < k {
                    let k1 = (k0 + rows).min(k);
                    let len = (k1 - k0) * n;
                    let mut bblk = vec![0u64; len];
                    t.b.fill_range(k0 * n, &mut bblk);
                    let mut d_own = vec![0u64; len];
                    w.fill_rows(k0, k1, &mut d_own);
                    d_own.iter_mut().zip(&bblk).for_each(|(d, b)| *d = d.wrapping_sub(*b));
                    round.send(&d_own)?;
                    let mut d = vec![0u64; len];
                    round.recv_into(&mut d)?;
                    d.iter_mut().zip(&d_own).for_each(|(p, q)| *p = p.wrapping_add(*q));
                    fxp::ring_matmul_acc(exec, &col_block(e, m, k, k0, k1), &bblk, &mut z, m, k1 - k0, n);
                    fxp::ring_matmul_acc(exec, &col_block(&a_eff, m, k, k0, k1), &d, &mut z, m, k1 - k0, n);
                    k0 = k1;
                }
                let frac = pairs[j].0.frac_bits() + w.frac_bits();
                outs.push(SharedTensor::new(self.id, RingTensor::new(vec![m, n], z, frac)?, self.session));
            }
            round.finish()?;
        }
        let ops: u64 = dims.iter().map(|&(m, k, n)| (2 * m * k * n + m * k + k * n) as u64).sum();
        self.charge(ops);
        Ok(outs)
    }

    /// Fixed-point product against a row-streamed weight share.
    pub fn matmul_rows(&mut self, x: &SharedTensor, w: &dyn RowSource) -> Result<SharedTensor> {
        let z = self.matmul_rows_many(&[(x, w)])?.pop().expect("one product");
        Ok(self.trunc(&z, w.frac_bits()))
    }

    /// Fixed-point matrix product: one Beaver round then truncation.
    pub fn matmul(&mut self, x: &SharedTensor, w: &SharedTensor) -> Result<SharedTensor> {
        let z = self.matmul_raw_many(&[(x, w)])?.pop().expect("one product");
        Ok(self.trunc(&z, w.frac_bits()))
    }
}

/// Runs `f` at both parties of an in-memory session and returns both results.
pub fn run_pair<R, F>(profile: crate::netsim::NetworkProfile, mode: ClockMode, tapes: (DealerTape, DealerTape), cfg: SessionConfig, f: F) -> (R, R)
where
    R: Send,
    F: Fn(&mut Party) -> R + Sync,
{
    let (c0, c1) = Channel::pair(profile, mode);
    let (t0, t1) = tapes;
    std::thread::scope(|s| {
        let f = &f;
        let h = s.spawn(move || {
            let mut p = Party::new(c1, t1, cfg);
            f(&mut p)
        });
        let mut p = Party::new(c0, t0, cfg);
        let r0 = f(&mut p);
        drop(p);
        let r1 = h.join().expect("party 1 panicked");
        (r0, r1)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fxp::{decode_vec, encode_slice};
    use crate::netsim::NetworkProfile;

    fn enc(v: &[f64]) -> RingTensor {
        encode_slice(vec![v.len()], v, 16).unwrap()
    }

    #[test]
    fn share_reconstruct_and_blinding() {
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let x = enc(&[1.0, -2.5, 3.25]);
        let (a, b) = share(&x, &mut rng, 5);
        assert_eq!(reconstruct(&a, &b).unwrap(), x);
        let z = RingTensor::zeros(vec![8], 16);
        let (a, _) = share(&z, &mut rng, 5);
        assert!(a.data().iter().any(|&v| v != 0));
        let (_, c) = share(&x, &mut rng, 6);
        assert!(reconstruct(&a, &c).is_err());
    }

    #[test]
    fn local_ops_cost_nothing_and_mul_costs_one_round() {
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let x = enc(&[1.5, -0.5]);
        let y = enc(&[2.0, 4.0]);
        let (x0, x1) = share(&x, &mut rng, 1);
        let (y0, y1) = share(&y, &mut rng, 1);
        let tapes = dealer_generate(&TapeSpec::mul(2), 9);
        let ins = [(x0, y0), (x1, y1)];
        let (r0, r1) = run_pair(NetworkProfile::lan(), ClockMode::Simulated, tapes, SessionConfig::default(), |p| {
            let (x, y) = &ins[p.id() as usize];
            let before = p.counters();
            let s = p.add(x, y).unwrap();
            assert_eq!(p.counters(), before);
            let m = p.mul(x, y).unwrap();
            assert_eq!(p.counters().rounds - before.rounds, 1);
            assert_eq!(p.counters().bytes_sent - before.bytes_sent, 6 + 8 * 4);
            (s, m)
        });
        assert_eq!(decode_vec(&reconstruct(&r0.0, &r1.0).unwrap()), vec![3.5, 3.5]);
        let m = decode_vec(&reconstruct(&r0.1, &r1.1).unwrap());
        assert!((m[0] - 3.0).abs() <= 2f64.powi(-14));
        assert!((m[1] + 2.0).abs() <= 2f64.powi(-14));
    }
}
