//! Offline correlated randomness from a semi-honest trusted dealer.
//!
//! A [`TapeSpec`] lists the correlations one session will consume, in order.
//! [`dealer_generate`] expands it into one [`DealerTape`] per party; both are
//! pure functions of the spec and the 128-bit seed. Matmul `b` shares are kept
//! as ChaCha seeds and expanded on demand so large heads stay off the heap.

use std::collections::VecDeque;
use std::io::{Read, Write};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use super::MpcError;
use crate::fxp::ring_matmul_acc;
use crate::par::Exec;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Requirement {
    /// Elementwise arithmetic triple.
    Elem { len: usize },
    /// Matrix triple `C = A (m x k) * B (k x n)`.
    Matmul { m: usize, k: usize, n: usize },
    /// Arithmetic mask `r` with an XOR-shared copy of its bits.
    Masked { len: usize },
    /// Two AND triples sharing their left operand mask (packed words).
    AndPair { len: usize },
    /// One AND triple over packed words.
    And { len: usize },
    /// Uniform bit shared both arithmetically and by XOR.
    Bit { len: usize },
}

/// Ordered list of correlations a session consumes.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TapeSpec {
    pub items: Vec<Requirement>,
}

impl TapeSpec {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, r: Requirement) -> &mut Self {
        self.items.push(r);
        self
    }

    pub fn extend(&mut self, other: &TapeSpec) -> &mut Self {
        self.items.extend_from_slice(&other.items);
        self
    }

    pub fn repeat(&self, times: usize) -> TapeSpec {
        let mut out = TapeSpec::new();
        for _ in 0..times {
            out.extend(self);
        }
        out
    }

    pub fn mul(len: usize) -> Self {
        Self { items: vec![Requirement::Elem { len }] }
    }

    pub fn matmul(m: usize, k: usize, n: usize) -> Self {
        Self { items: vec![Requirement::Matmul { m, k, n }] }
    }

    pub fn msb(len: usize) -> Self {
        let mut s = Self { items: vec![Requirement::Masked { len }] };
        for _ in 0..super::nonlinear::PREFIX_LEVELS - 1 {
            s.push(Requirement::AndPair { len });
        }
        s.push(Requirement::And { len });
        s.push(Requirement::Bit { len });
        s
    }

    pub fn relu(len: usize) -> Self {
        let mut s = Self::msb(len);
        s.push(Requirement::Elem { len });
        s
    }

    pub fn exp(len: usize) -> Self {
        Self { items: vec![Requirement::Elem { len }; super::nonlinear::EXP_ROUNDS] }
    }

    pub fn decay_exp(len: usize) -> Self {
        Self { items: vec![Requirement::Elem { len }; super::nonlinear::DECAY_EXP_ROUNDS] }
    }

    pub fn reciprocal(len: usize) -> Self {
        let mut s = Self::decay_exp(len);
        for _ in 0..2 * super::nonlinear::RECIPROCAL_ITERS {
            s.push(Requirement::Elem { len });
        }
        s
    }

    pub fn inv_sqrt(len: usize) -> Self {
        let mut s = Self::decay_exp(len * super::nonlinear::INV_SQRT_INIT.len());
        for _ in 0..3 * super::nonlinear::INV_SQRT_ITERS {
            s.push(Requirement::Elem { len });
        }
        s
    }

    pub fn layernorm(rows: usize, d: usize) -> Self {
        let mut s = Self::mul(rows * d);
        s.extend(&Self::inv_sqrt(rows));
        s.push(Requirement::Elem { len: rows * d });
        s.push(Requirement::Elem { len: rows * d });
        s
    }

    pub fn softmax(rows: usize, cols: usize) -> Self {
        let mut s = Self::exp(rows * cols);
        s.extend(&Self::reciprocal(rows));
        s.push(Requirement::Elem { len: rows * cols });
        s
    }
}

/// A share vector either stored densely or as a seed for a ChaCha stream.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum RingSource {
    Dense(Vec<u64>),
    Seeded { seed: [u8; 32], len: usize },
}

impl RingSource {
    pub fn len(&self) -> usize {
        match self {
            RingSource::Dense(v) => v.len(),
            RingSource::Seeded { len, .. } => *len,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Writes elements `offset .. offset + out.len()` into `out`.
    pub fn fill_range(&self, offset: usize, out: &mut [u64]) {
        match self {
            RingSource::Dense(v) => out.copy_from_slice(&v[offset..offset + out.len()]),
            RingSource::Seeded { seed, .. } => {
                let mut rng = ChaCha12Rng::from_seed(*seed);
                rng.set_word_pos(offset as u128 * 2);
                for o in out.iter_mut() {
                    *o = rng.next_u64();
                }
            }
        }
    }

    pub fn to_vec(&self) -> Vec<u64> {
        let mut v = vec![0; self.len()];
        self.fill_range(0, &mut v);
        v
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TripleKind {
    Elementwise,
    Matmul { m: usize, k: usize, n: usize },
}

/// One party's half of an arithmetic triple.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BeaverTriple {
    pub kind: TripleKind,
    pub a: Vec<u64>,
    pub b: RingSource,
    pub c: Vec<u64>,
}

/// One party's XOR half of `c = a & b` over packed words.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AndTriple {
    pub a: Vec<u64>,
    pub b: Vec<u64>,
    pub c: Vec<u64>,
}

/// XOR halves of `c1 = a & b1`, `c2 = a & b2`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AndPairTriple {
    pub a: Vec<u64>,
    pub b1: Vec<u64>,
    pub b2: Vec<u64>,
    pub c1: Vec<u64>,
    pub c2: Vec<u64>,
}

/// Shares of uniform bits: XOR share in bit 0 and additive ring share.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SharedBits {
    pub xor: Vec<u64>,
    pub arith: Vec<u64>,
}

/// Additive share of a mask `r` and XOR share of its 64 bits.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaskedPair {
    pub arith: Vec<u64>,
    pub bits: Vec<u64>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DealerTape {
    pub party: u8,
    pub rng_seed: u128,
    pub triples: VecDeque<BeaverTriple>,
    pub and_pairs: VecDeque<AndPairTriple>,
    pub ands: VecDeque<AndTriple>,
    pub shared_bits: VecDeque<SharedBits>,
    pub masked_pairs: VecDeque<MaskedPair>,
}

fn mismatch(requested: String, found: String) -> MpcError {
    MpcError::TapeMismatch { requested, found }
}

impl DealerTape {
    pub fn empty(party: u8) -> Self {
        Self { party, ..Default::default() }
    }

    pub fn is_exhausted(&self) -> bool {
        self.remaining() == 0
    }

    pub fn remaining(&self) -> usize {
        self.triples.len() + self.and_pairs.len() + self.ands.len() + self.shared_bits.len() + self.masked_pairs.len()
    }

    pub fn take_elem(&mut self, len: usize) -> Result<BeaverTriple, MpcError> {
        let t = self.triples.pop_front().ok_or(MpcError::DealerUnderrun("elementwise triple"))?;
        if t.kind != TripleKind::Elementwise || t.a.len() != len {
            return Err(mismatch(format!("elementwise({len})"), format!("{:?}({})", t.kind, t.a.len())));
        }
        Ok(t)
    }

    pub fn take_matmul(&mut self, m: usize, k: usize, n: usize) -> Result<BeaverTriple, MpcError> {
        let t = self.triples.pop_front().ok_or(MpcError::DealerUnderrun("matmul triple"))?;
        if t.kind != (TripleKind::Matmul { m, k, n }) {
            return Err(mismatch(format!("matmul({m},{k},{n})"), format!("{:?}", t.kind)));
        }
        Ok(t)
    }

    pub fn take_masked(&mut self, len: usize) -> Result<MaskedPair, MpcError> {
        let t = self.masked_pairs.pop_front().ok_or(MpcError::DealerUnderrun("masked pair"))?;
        if t.arith.len() != len {
            return Err(mismatch(format!("masked({len})"), format!("masked({})", t.arith.len())));
        }
        Ok(t)
    }

    pub fn take_and_pair(&mut self, len: usize) -> Result<AndPairTriple, MpcError> {
        let t = self.and_pairs.pop_front().ok_or(MpcError::DealerUnderrun("AND pair triple"))?;
        if t.a.len() != len {
            return Err(mismatch(format!("and_pair({len})"), format!("and_pair({})", t.a.len())));
        }
        Ok(t)
    }

    pub fn take_and(&mut self, len: usize) -> Result<AndTriple, MpcError> {
        let t = self.ands.pop_front().ok_or(MpcError::DealerUnderrun("AND triple"))?;
        if t.a.len() != len {
            return Err(mismatch(format!("and({len})"), format!("and({})", t.a.len())));
        }
        Ok(t)
    }

    pub fn take_bits(&mut self, len: usize) -> Result<SharedBits, MpcError> {
        let t = self.shared_bits.pop_front().ok_or(MpcError::DealerUnderrun("shared bits"))?;
        if t.xor.len() != len {
            return Err(mismatch(format!("bits({len})"), format!("bits({})", t.xor.len())));
        }
        Ok(t)
    }
}

fn random_vec(rng: &mut ChaCha12Rng, len: usize) -> Vec<u64> {
    (0..len).map(|_| rng.next_u64()).collect()
}

fn xor_split(rng: &mut ChaCha12Rng, v: &[u64]) -> (Vec<u64>, Vec<u64>) {
    let s0 = random_vec(rng, v.len());
    let s1 = v.iter().zip(&s0).map(|(x, s)| x ^ s).collect();
    (s0, s1)
}

fn add_split(rng: &mut ChaCha12Rng, v: &[u64]) -> (Vec<u64>, Vec<u64>) {
    let s0 = random_vec(rng, v.len());
    let s1 = v.iter().zip(&s0).map(|(x, s)| x.wrapping_sub(*s)).collect();
    (s0, s1)
}

fn master_rng(seed: u128) -> ChaCha12Rng {
    let mut key = [0u8; 32];
    key[..16].copy_from_slice(&seed.to_le_bytes());
    key[16..].copy_from_slice(b"hvfl-dealer-v1\0\0");
    ChaCha12Rng::from_seed(key)
}

/// Row-block size for streaming large `b` shares.
pub(crate) fn stream_rows(k: usize, n: usize) -> usize {
    ((1usize << 20) / n.max(1)).clamp(1, k.max(1))
}

/// Copies columns `k0..k1` of a row-major `m x k` matrix.
pub(crate) fn col_block(a: &[u64], m: usize, k: usize, k0: usize, k1: usize) -> Vec<u64> {
    let w = k1 - k0;
    let mut out = Vec::with_capacity(m * w);
    for i in 0..m {
        out.extend_from_slice(&a[i * k + k0..i * k + k1]);
    }
    out
}

/// Expands `spec` into the two parties' tapes. Deterministic in `seed`.
pub fn dealer_generate(spec: &TapeSpec, seed: u128) -> (DealerTape, DealerTape) {
    let mut rng = master_rng(seed);
    let mut t0 = DealerTape { party: 0, rng_seed: seed, ..Default::default() };
    let mut t1 = DealerTape { party: 1, rng_seed: seed, ..Default::default() };
    for req in &spec.items {
        match *req {
            Requirement::Elem { len } => {
                let (a0, a1) = (random_vec(&mut rng, len), random_vec(&mut rng, len));
                let (b0, b1) = (random_vec(&mut rng, len), random_vec(&mut rng, len));
                let c: Vec<u64> = (0..len).map(|i| a0[i].wrapping_add(a1[i]).wrapping_mul(b0[i].wrapping_add(b1[i]))).collect();
                let (c0, c1) = add_split(&mut rng, &c);
                let kind = TripleKind::Elementwise;
                t0.triples.push_back(BeaverTriple { kind, a: a0, b: RingSource::Dense(b0), c: c0 });
                t1.triples.push_back(BeaverTriple { kind, a: a1, b: RingSource::Dense(b1), c: c1 });
            }
            Requirement::Matmul { m, k, n } => {
                let (a0, a1) = (random_vec(&mut rng, m * k), random_vec(&mut rng, m * k));
                let mut s0 = [0u8; 32];
                let mut s1 = [0u8; 32];
                rng.fill(&mut s0);
                rng.fill(&mut s1);
                let b0 = RingSource::Seeded { seed: s0, len: k * n };
                let b1 = RingSource::Seeded { seed: s1, len: k * n };
                let a: Vec<u64> = a0.iter().zip(&a1).map(|(x, y)| x.wrapping_add(*y)).collect();
                let mut c = vec![0u64; m * n];
                let rows = stream_rows(k, n);
                let mut k0 = 0;
                while k0 < k {
                    let k1 = (k0 + rows).min(k);
                    let mut bc = vec![0u64; (k1 - k0) * n];
                    let mut tmp = vec![0u64; (k1 - k0) * n];
                    b0.fill_range(k0 * n, &mut bc);
                    b1.fill_range(k0 * n, &mut tmp);
                    bc.iter_mut().zip(&tmp).for_each(|(x, y)| *x = x.wrapping_add(*y));
                    let ab = col_block(&a, m, k, k0, k1);
                    ring_matmul_acc(Exec::default(), &ab, &bc, &mut c, m, k1 - k0, n);
                    k0 = k1;
                }
                let (c0, c1) = add_split(&mut rng, &c);
                let kind = TripleKind::Matmul { m, k, n };
                t0.triples.push_back(BeaverTriple { kind, a: a0, b: b0, c: c0 });
                t1.triples.push_back(BeaverTriple { kind, a: a1, b: b1, c: c1 });
            }
            Requirement::Masked { len } => {
                let r = random_vec(&mut rng, len);
                let (r0, r1) = add_split(&mut rng, &r);
                let (x0, x1) = xor_split(&mut rng, &r);
                t0.masked_pairs.push_back(MaskedPair { arith: r0, bits: x0 });
                t1.masked_pairs.push_back(MaskedPair { arith: r1, bits: x1 });
            }
            Requirement::AndPair { len } => {
                let a = random_vec(&mut rng, len);
                let b1 = random_vec(&mut rng, len);
                let b2 = random_vec(&mut rng, len);
                let c1: Vec<u64> = a.iter().zip(&b1).map(|(x, y)| x & y).collect();
                let c2: Vec<u64> = a.iter().zip(&b2).map(|(x, y)| x & y).collect();
                let (a0, a1) = xor_split(&mut rng, &a);
                let (p0, p1) = xor_split(&mut rng, &b1);
                let (q0, q1) = xor_split(&mut rng, &b2);
                let (u0, u1) = xor_split(&mut rng, &c1);
                let (v0, v1) = xor_split(&mut rng, &c2);
                t0.and_pairs.push_back(AndPairTriple { a: a0, b1: p0, b2: q0, c1: u0, c2: v0 });
                t1.and_pairs.push_back(AndPairTriple { a: a1, b1: p1, b2: q1, c1: u1, c2: v1 });
            }
            Requirement::And { len } => {
                let a = random_vec(&mut rng, len);
                let b = random_vec(&mut rng, len);
                let c: Vec<u64> = a.iter().zip(&b).map(|(x, y)| x & y).collect();
                let (a0, a1) = xor_split(&mut rng, &a);
                let (b0, b1) = xor_split(&mut rng, &b);
                let (c0, c1) = xor_split(&mut rng, &c);
                t0.ands.push_back(AndTriple { a: a0, b: b0, c: c0 });
                t1.ands.push_back(AndTriple { a: a1, b: b1, c: c1 });
            }
            Requirement::Bit { len } => {
                let s: Vec<u64> = (0..len).map(|_| rng.next_u64() & 1).collect();
                let x0: Vec<u64> = (0..len).map(|_| rng.next_u64() & 1).collect();
                let x1: Vec<u64> = s.iter().zip(&x0).map(|(a, b)| a ^ b).collect();
                let (s0, s1) = add_split(&mut rng, &s);
                t0.shared_bits.push_back(SharedBits { xor: x0, arith: s0 });
                t1.shared_bits.push_back(SharedBits { xor: x1, arith: s1 });
            }
        }
    }
    (t0, t1)
}

const TAPE_MAGIC: &[u8; 8] = b"HVFLTAPE";
const TAPE_VERSION: u32 = 1;

fn put_u64(w: &mut Vec<u8>, x: u64) {
    w.extend_from_slice(&x.to_le_bytes());
}

fn put_vec(w: &mut Vec<u8>, v: &[u64]) {
    put_u64(w, v.len() as u64);
    for x in v {
        put_u64(w, *x);
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn bytes(&mut self, n: usize) -> Result<&[u8], MpcError> {
        if self.pos + n > self.buf.len() {
            return Err(MpcError::TapeFormat("truncated tape".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64, MpcError> {
        Ok(u64::from_le_bytes(self.bytes(8)?.try_into().unwrap()))
    }

    fn usize(&mut self) -> Result<usize, MpcError> {
        let v = self.u64()?;
        usize::try_from(v).map_err(|_| MpcError::TapeFormat("length overflow".into()))
    }

    fn vec(&mut self) -> Result<Vec<u64>, MpcError> {
        let n = self.usize()?;
        if n > (self.buf.len() - self.pos) / 8 {
            return Err(MpcError::TapeFormat("vector longer than tape".into()));
        }
        (0..n).map(|_| self.u64()).collect()
    }
}

impl DealerTape {
    /// Canonical byte encoding: magic, version, party, seed, then the five
    /// queues as `u64` counts followed by their items.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Vec::new();
        w.extend_from_slice(TAPE_MAGIC);
        w.extend_from_slice(&TAPE_VERSION.to_le_bytes());
        w.push(self.party);
        w.extend_from_slice(&self.rng_seed.to_le_bytes());
        put_u64(&mut w, self.triples.len() as u64);
        for t in &self.triples {
            match t.kind {
                TripleKind::Elementwise => w.push(0),
                TripleKind::Matmul { m, k, n } => {
                    w.push(1);
                    put_u64(&mut w, m as u64);
                    put_u64(&mut w, k as u64);
                    put_u64(&mut w, n as u64);
                }
            }
            put_vec(&mut w, &t.a);
            match &t.b {
                RingSource::Dense(v) => {
                    w.push(0);
                    put_vec(&mut w, v);
                }
                RingSource::Seeded { seed, len } => {
                    w.push(1);
                    w.extend_from_slice(seed);
                    put_u64(&mut w, *len as u64);
                }
            }
            put_vec(&mut w, &t.c);
        }
        put_u64(&mut w, self.and_pairs.len() as u64);
        for t in &self.and_pairs {
            for v in [&t.a, &t.b1, &t.b2, &t.c1, &t.c2] {
                put_vec(&mut w, v);
            }
        }
        put_u64(&mut w, self.ands.len() as u64);
        for t in &self.ands {
            for v in [&t.a, &t.b, &t.c] {
                put_vec(&mut w, v);
            }
        }
        put_u64(&mut w, self.shared_bits.len() as u64);
        for t in &self.shared_bits {
            put_vec(&mut w, &t.xor);
            put_vec(&mut w, &t.arith);
        }
        put_u64(&mut w, self.masked_pairs.len() as u64);
        for t in &self.masked_pairs {
            put_vec(&mut w, &t.arith);
            put_vec(&mut w, &t.bits);
        }
        w
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self, MpcError> {
        let mut r = Reader { buf, pos: 0 };
        if r.bytes(8)? != TAPE_MAGIC {
            return Err(MpcError::TapeFormat("bad magic".into()));
        }
        let version = u32::from_le_bytes(r.bytes(4)?.try_into().unwrap());
        if version != TAPE_VERSION {
            return Err(MpcError::TapeFormat(format!("unsupported tape version {version}")));
        }
        let party = r.bytes(1)?[0];
        let rng_seed = u128::from_le_bytes(r.bytes(16)?.try_into().unwrap());
        let mut tape = DealerTape { party, rng_seed, ..Default::default() };
        for _ in 0..r.usize()? {
            let kind = match r.bytes(1)?[0] {
                0 => TripleKind::Elementwise,
                1 => TripleKind::Matmul { m: r.usize()?, k: r.usize()?, n: r.usize()? },
                t => return Err(MpcError::TapeFormat(format!("bad triple kind {t}"))),
            };
            let a = r.vec()?;
            let b = match r.bytes(1)?[0] {
                0 => RingSource::Dense(r.vec()?),
                1 => {
                    let seed: [u8; 32] = r.bytes(32)?.try_into().unwrap();
                    RingSource::Seeded { seed, len: r.usize()? }
                }
                t => return Err(MpcError::TapeFormat(format!("bad source tag {t}"))),
            };
            let c = r.vec()?;
            tape.triples.push_back(BeaverTriple { kind, a, b, c });
        }
        for _ in 0..r.usize()? {
            tape.and_pairs.push_back(AndPairTriple { a: r.vec()?, b1: r.vec()?, b2: r.vec()?, c1: r.vec()?, c2: r.vec()? });
        }
        for _ in 0..r.usize()? {
            tape.ands.push_back(AndTriple { a: r.vec()?, b: r.vec()?, c: r.vec()? });
        }
        for _ in 0..r.usize()? {
            tape.shared_bits.push_back(SharedBits { xor: r.vec()?, arith: r.vec()? });
        }
        for _ in 0..r.usize()? {
            tape.masked_pairs.push_back(MaskedPair { arith: r.vec()?, bits: r.vec()? });
        }
        if r.pos != buf.len() {
            return Err(MpcError::TapeFormat("trailing bytes".into()));
        }
        Ok(tape)
    }

    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        w.write_all(&self.to_bytes())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self, MpcError> {
        let mut buf = Vec::new();
        r.read_to_end(&mut buf).map_err(|e| MpcError::TapeFormat(e.to_string()))?;
        Self::from_bytes(&buf)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> TapeSpec {
        let mut s = TapeSpec::mul(5);
        s.extend(&TapeSpec::matmul(3, 4, 2)).extend(&TapeSpec::relu(7));
        s
    }

    #[test]
    fn triples_reconstruct_exactly() {
        let (t0, t1) = dealer_generate(&spec(), 42);
        for (x, y) in t0.triples.iter().zip(&t1.triples) {
            let a: Vec<u64> = x.a.iter().zip(&y.a).map(|(p, q)| p.wrapping_add(*q)).collect();
            let b: Vec<u64> = x.b.to_vec().iter().zip(y.b.to_vec()).map(|(p, q)| p.wrapping_add(q)).collect();
            let c: Vec<u64> = x.c.iter().zip(&y.c).map(|(p, q)| p.wrapping_add(*q)).collect();
            match x.kind {
                TripleKind::Elementwise => {
                    for i in 0..a.len() {
                        assert_eq!(c[i], a[i].wrapping_mul(b[i]));
                    }
                }
                TripleKind::Matmul { m, k, n } => {
                    let mut want = vec![0u64; m * n];
                    ring_matmul_acc(Exec::Sequential, &a, &b, &mut want, m, k, n);
                    assert_eq!(c, want);
                }
            }
        }
        for (x, y) in t0.and_pairs.iter().zip(&t1.and_pairs) {
            for i in 0..x.a.len() {
                let a = x.a[i] ^ y.a[i];
                assert_eq!(x.c1[i] ^ y.c1[i], a & (x.b1[i] ^ y.b1[i]));
                assert_eq!(x.c2[i] ^ y.c2[i], a & (x.b2[i] ^ y.b2[i]));
            }
        }
        for (x, y) in t0.masked_pairs.iter().zip(&t1.masked_pairs) {
            for i in 0..x.arith.len() {
                assert_eq!(x.arith[i].wrapping_add(y.arith[i]), x.bits[i] ^ y.bits[i]);
            }
        }
        for (x, y) in t0.shared_bits.iter().zip(&t1.shared_bits) {
            for i in 0..x.xor.len() {
                assert_eq!(x.arith[i].wrapping_add(y.arith[i]), x.xor[i] ^ y.xor[i]);
            }
        }
    }

    #[test]
    fn same_seed_same_bytes() {
        let (a0, a1) = dealer_generate(&spec(), 7);
        let (b0, b1) = dealer_generate(&spec(), 7);
        assert_eq!(a0.to_bytes(), b0.to_bytes());
        assert_eq!(a1.to_bytes(), b1.to_bytes());
        let (c0, _) = dealer_generate(&spec(), 8);
        assert_ne!(a0.to_bytes(), c0.to_bytes());
    }

    #[test]
    fn serialization_roundtrip() {
        let (t0, _) = dealer_generate(&spec(), 3);
        let back = DealerTape::from_bytes(&t0.to_bytes()).unwrap();
        assert_eq!(back, t0);
        let mut bad = t0.to_bytes();
        bad.pop();
        assert!(DealerTape::from_bytes(&bad).is_err());
    }

    #[test]
    fn underrun_and_mismatch() {
        let (mut t0, _) = dealer_generate(&TapeSpec::mul(3), 1);
        assert!(matches!(t0.take_elem(4), Err(MpcError::TapeMismatch { .. })));
        assert!(matches!(t0.take_elem(3), Err(MpcError::DealerUnderrun(_))));
    }

    #[test]
    fn seeded_source_random_access() {
        let s = RingSource::Seeded { seed: [9; 32], len: 100 };
        let all = s.to_vec();
        let mut part = vec![0; 13];
        s.fill_range(41, &mut part);
        assert_eq!(&all[41..54], &part[..]);
    }
}
