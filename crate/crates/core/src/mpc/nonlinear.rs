//! Secure nonlinear primitives built from openings, Beaver products and
//! dealer-supplied masks.
//!
//! Sign extraction opens `c = x + r` and evaluates the borrow chain of
//! `c - r` over XOR-shared bits of `r` with a Kogge-Stone prefix network, 64
//! lanes per word. The remaining functions are fixed-iteration polynomial
//! schemes, so every one of them has a data-independent round count.

use super::{kind, wadd, MpcError, Party, Result, SharedTensor};

/// Prefix-network depth over 64-bit words.
pub const PREFIX_LEVELS: usize = 6;
pub const MSB_ROUNDS: u64 = PREFIX_LEVELS as u64 + 2;
pub const RELU_ROUNDS: u64 = MSB_ROUNDS + 1;
/// Squarings after the second-order base step, plus that step.
pub const EXP_ROUNDS: usize = 8;
/// `(1 + v/512)^512`: nine squarings.
pub const DECAY_EXP_ROUNDS: usize = 9;
pub const RECIPROCAL_ITERS: usize = 10;
pub const RECIPROCAL_ROUNDS: u64 = (DECAY_EXP_ROUNDS + 2 * RECIPROCAL_ITERS) as u64;
pub const INV_SQRT_ITERS: usize = 8;
pub const INV_SQRT_ROUNDS: u64 = (DECAY_EXP_ROUNDS + 3 * INV_SQRT_ITERS) as u64;
pub const SOFTMAX_ROUNDS: u64 = EXP_ROUNDS as u64 + RECIPROCAL_ROUNDS + 1;
pub const LAYERNORM_ROUNDS: u64 = 1 + INV_SQRT_ROUNDS + 2;

/// Inverse square root seed `sum_j w_j * E(-x / 2^s_j) + INV_SQRT_BIAS`, as
/// `(s_j, w_j)`, where `E` is the decaying exponential. Keeps `sqrt(x) * y0`
/// inside the Newton basin on `[0.005, 512]`.
pub const INV_SQRT_INIT: [(u32, f64); 3] = [(0, 2.7), (6, 0.04), (7, 0.216)];
pub const INV_SQRT_BIAS: f64 = 0.024;

fn xor(a: &[u64], b: &[u64]) -> Vec<u64> {
    a.iter().zip(b).map(|(x, y)| x ^ y).collect()
}

impl Party {
    fn open(&mut self, kind: u16, payload: &[u64]) -> Result<Vec<u64>> {
        let peer = self.chan.exchange(kind, payload)?;
        if peer.len() != payload.len() {
            return Err(MpcError::PeerLength { expected: payload.len(), got: peer.len() });
        }
        Ok(peer)
    }

    /// `x / 2^bits` at unchanged scale.
    pub fn div_pow2(&self, x: &SharedTensor, bits: u32) -> SharedTensor {
        self.trunc(x, bits).relabel(x.frac_bits())
    }

    /// Arithmetic shares (scale 0) of the sign bit of every entry; 1 iff
    /// the signed value is negative.
    pub fn msb(&mut self, x: &SharedTensor) -> Result<SharedTensor> {
        self.own(x)?;
        let n = x.len();
        let p0 = self.id == 0;
        let m = self.tape.take_masked(n)?;
        let masked = wadd(x.data(), &m.arith);
        let peer = self.open(kind::MASKED_OPEN, &masked)?;
        let c = wadd(&masked, &peer);
        let nc: Vec<u64> = c.iter().map(|v| !v).collect();
        // Borrow chain of c - r: generate = !c & r, propagate = !(c ^ r).
        let mut g: Vec<u64> = nc.iter().zip(&m.bits).map(|(a, b)| a & b).collect();
        let mut p: Vec<u64> = if p0 { xor(&nc, &m.bits) } else { m.bits.clone() };
        for level in 0..PREFIX_LEVELS {
            let d = 1u32 << level;
            let gs: Vec<u64> = g.iter().map(|v| v << d).collect();
            if level + 1 < PREFIX_LEVELS {
                let t = self.tape.take_and_pair(n)?;
                let ps: Vec<u64> = p.iter().map(|v| v << d).collect();
                let mut payload = xor(&p, &t.a);
                payload.extend(xor(&gs, &t.b1));
                payload.extend(xor(&ps, &t.b2));
                let peer = self.open(kind::AND_LEVEL, &payload)?;
                let o = xor(&payload, &peer);
                let (e, f1, f2) = (&o[..n], &o[n..2 * n], &o[2 * n..]);
                for i in 0..n {
                    let mut z1 = t.c1[i] ^ (e[i] & t.b1[i]) ^ (f1[i] & t.a[i]);
                    let mut z2 = t.c2[i] ^ (e[i] & t.b2[i]) ^ (f2[i] & t.a[i]);
                    if p0 {
                        z1 ^= e[i] & f1[i];
                        z2 ^= e[i] & f2[i];
                    }
                    g[i] ^= z1;
                    p[i] = z2;
                }
            } else {
                let t = self.tape.take_and(n)?;
                let mut payload = xor(&p, &t.a);
                payload.extend(xor(&gs, &t.b));
                let peer = self.open(kind::AND_LEVEL, &payload)?;
                let o = xor(&payload, &peer);
                let (e, f) = (&o[..n], &o[n..]);
                for i in 0..n {
                    let mut z = t.c[i] ^ (e[i] & t.b[i]) ^ (f[i] & t.a[i]);
                    if p0 {
                        z ^= e[i] & f[i];
                    }
                    g[i] ^= z;
                }
            }
        }
        // Bit 63 of c - r is c63 ^ r63 ^ borrow into 63, i.e. generate bit 62.
        let bits: Vec<u64> = (0..n)
            .map(|i| {
                let local = if p0 { c[i] ^ m.bits[i] } else { m.bits[i] };
                ((local >> 63) ^ (g[i] >> 62)) & 1
            })
            .collect();
        self.charge(30 * n as u64 * PREFIX_LEVELS as u64);
        self.bits_to_arith(x.shape().to_vec(), &bits)
    }

    /// Converts XOR-shared bits to additive shares with one opening.
    fn bits_to_arith(&mut self, shape: Vec<usize>, bits: &[u64]) -> Result<SharedTensor> {
        let n = bits.len();
        let s = self.tape.take_bits(n)?;
        let payload = xor(bits, &s.xor);
        let peer = self.open(kind::B2A, &payload)?;
        let p0 = self.id == 0;
        let out = (0..n)
            .map(|i| {
                if (payload[i] ^ peer[i]) & 1 == 1 {
                    if p0 {
                        1u64.wrapping_sub(s.arith[i])
                    } else {
                        s.arith[i].wrapping_neg()
                    }
                } else {
                    s.arith[i]
                }
            })
            .collect();
        Ok(self.wrap(shape, out, 0))
    }

    /// `max(x, 0)` as `x * (1 - msb(x))`.
    pub fn relu(&mut self, x: &SharedTensor) -> Result<SharedTensor> {
        let b = self.msb(x)?;
        let keep = self.add_public_scalar(&self.neg(&b), 1.0)?;
        self.mul_raw(x, &keep)
    }

    /// `(1 + v/512)^512`, accurate enough as a Newton seed for `v` in `[-512, 1]`.
    pub fn decay_exp(&mut self, v: &SharedTensor) -> Result<SharedTensor> {
        let mut y = self.add_public_scalar(&self.div_pow2(v, 9), 1.0)?;
        for _ in 0..DECAY_EXP_ROUNDS {
            y = self.mul(&y, &y)?;
        }
        Ok(y)
    }

    /// `exp(x)` for `x` in `[-16, 4]`: base `1 + u + u^2/2` with `u = x/128`,
    /// squared seven times.
    pub fn exp(&mut self, x: &SharedTensor) -> Result<SharedTensor> {
        let f = x.frac_bits();
        let u = self.div_pow2(x, 7);
        let sq = self.mul_raw(x, x)?;
        let half_u2 = self.trunc(&sq, f + 15).relabel(f);
        let base = self.add(&u, &half_u2)?;
        let mut y = self.add_public_scalar(&base, 1.0)?;
        for _ in 1..EXP_ROUNDS {
            y = self.mul(&y, &y)?;
        }
        Ok(y)
    }

    /// `1/x` for `x` in `[0.1, 512]` by Newton iteration `y(2 - xy)`.
    pub fn reciprocal(&mut self, x: &SharedTensor) -> Result<SharedTensor> {
        let arg = self.add_public_scalar(&self.neg(x), 0.5)?;
        let e = self.decay_exp(&arg)?;
        let mut y = self.add_public_scalar(&self.mul_public_int(&e, 3), 0.003)?;
        for _ in 0..RECIPROCAL_ITERS {
            let xy = self.mul(x, &y)?;
            let t = self.add_public_scalar(&self.neg(&xy), 2.0)?;
            y = self.mul(&y, &t)?;
        }
        Ok(y)
    }

    /// `1/sqrt(x)` for `x` in `[0.005, 512]` by Newton iteration `y(3 - xy^2)/2`.
    pub fn inv_sqrt(&mut self, x: &SharedTensor) -> Result<SharedTensor> {
        let n = x.len();
        let f = x.frac_bits();
        let neg = self.neg(x);
        let parts: Vec<SharedTensor> = INV_SQRT_INIT.iter().map(|&(s, _)| self.div_pow2(&neg, s)).collect();
        let stacked = SharedTensor::concat(&parts.iter().collect::<Vec<_>>())?;
        let e = self.decay_exp(&stacked)?;
        let mut y = self.public_scalar(x.shape().to_vec(), INV_SQRT_BIAS, f)?;
        for (j, &(_, w)) in INV_SQRT_INIT.iter().enumerate() {
            let ej = e.slice(j * n, x.shape().to_vec());
            let term = self.mul_public_scalar(&ej, w)?;
            y = self.add(&y, &term)?;
        }
        for _ in 0..INV_SQRT_ITERS {
            // x*y first keeps the intermediate well above one LSB for large x.
            let xy = self.mul(x, &y)?;
            let xyy = self.mul(&xy, &y)?;
            let t = self.add_public_scalar(&self.neg(&xyy), 3.0)?;
            let raw = self.mul_raw(&y, &t)?;
            y = self.trunc(&raw, f + 1).relabel(f);
        }
        Ok(y)
    }

    /// Row-wise softmax of a `rows x cols` tensor. `shift` is a public upper
    /// bound subtracted before exponentiation; entries with `keep[j] == false`
    /// (optional, `rows x cols`) are zeroed after it.
    pub fn softmax(&mut self, x: &SharedTensor, shift: f64, keep: Option<&[bool]>) -> Result<SharedTensor> {
        let (rows, cols) = x.share().dims2();
        let shifted = self.add_public_scalar(x, -shift)?;
        let mut e = self.exp(&shifted)?;
        if let Some(k) = keep {
            if k.len() != rows * cols {
                return Err(MpcError::Metadata(format!("softmax mask of {} for {} entries", k.len(), rows * cols)));
            }
            e = e.map(vec![rows, cols], |d| d.iter().zip(k).map(|(v, &m)| if m { *v } else { 0 }).collect());
        }
        let sums = row_sum(&e, rows, cols);
        let inv = self.reciprocal(&sums)?;
        let wide = broadcast_rows(&inv, rows, cols);
        self.mul(&e, &wide)
    }

    /// Per-row normalisation of a `rows x d` tensor with shared affine `gamma`, `beta` (length `d`).
    pub fn layernorm(&mut self, x: &SharedTensor, gamma: &SharedTensor, beta: &SharedTensor, eps: f64) -> Result<SharedTensor> {
        let (rows, d) = x.share().dims2();
        if gamma.len() != d || beta.len() != d {
            return Err(MpcError::Metadata(format!("layernorm affine of {} for width {d}", gamma.len())));
        }
        let inv_d = 1.0 / d as f64;
        let mean = self.mul_public_scalar(&row_sum(x, rows, d), inv_d)?;
        let xc = self.sub(x, &broadcast_rows(&mean, rows, d))?;
        let sq = self.mul(&xc, &xc)?;
        let var = self.mul_public_scalar(&row_sum(&sq, rows, d), inv_d)?;
        let var = self.add_public_scalar(&var, eps)?;
        let inv = self.inv_sqrt(&var)?;
        let norm = self.mul(&xc, &broadcast_rows(&inv, rows, d))?;
        let scaled = self.mul(&norm, &broadcast_cols(gamma, rows, d))?;
        self.add(&scaled, &broadcast_cols(beta, rows, d))
    }
}

/// Sum over the last axis of a `rows x cols` tensor.
pub fn row_sum(x: &SharedTensor, rows: usize, cols: usize) -> SharedTensor {
    x.map(vec![rows], |d| (0..rows).map(|r| d[r * cols..(r + 1) * cols].iter().fold(0u64, |a, v| a.wrapping_add(*v))).collect())
}

/// Repeats a length-`rows` vector across `cols` columns.
pub fn broadcast_rows(v: &SharedTensor, rows: usize, cols: usize) -> SharedTensor {
    v.map(vec![rows, cols], |d| (0..rows * cols).map(|i| d[i / cols]).collect())
}

/// Repeats a length-`cols` vector down `rows` rows.
pub fn broadcast_cols(v: &SharedTensor, rows: usize, cols: usize) -> SharedTensor {
    v.map(vec![rows, cols], |d| (0..rows * cols).map(|i| d[i % cols]).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fxp::{decode_vec, encode_slice, RingTensor};
    use crate::mpc::{dealer_generate, reconstruct, run_pair, share, SessionConfig, TapeSpec};
    use crate::netsim::{ClockMode, NetworkProfile};
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn run<F>(xs: &[f64], spec: TapeSpec, f: F) -> (Vec<f64>, u64)
    where
        F: Fn(&mut Party, &SharedTensor) -> SharedTensor + Sync,
    {
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let x = encode_slice(vec![xs.len()], xs, 16).unwrap();
        let (a, b) = share(&x, &mut rng, 1);
        let ins = [a, b];
        let (r0, r1) = run_pair(NetworkProfile::lan(), ClockMode::Simulated, dealer_generate(&spec, 3), SessionConfig::default(), |p| {
            let y = f(p, &ins[p.id() as usize]);
            assert!(p.tape().is_exhausted());
            (y, p.counters().rounds)
        });
        assert_eq!(r0.1, r1.1);
        let z = reconstruct(&r0.0, &r1.0).unwrap();
        let z = RingTensor::new(z.shape().to_vec(), z.data().to_vec(), z.frac_bits()).unwrap();
        (decode_vec(&z), r0.1)
    }

    #[test]
    fn msb_signs_and_rounds() {
        let xs = [-3.5, 0.0, 2.0, -1e-4, 1e-4, -30000.0, 30000.0];
        let (b, rounds) = run(&xs, TapeSpec::msb(xs.len()), |p, x| p.msb(x).unwrap());
        assert_eq!(b, vec![1.0, 0.0, 0.0, 1.0, 0.0, 1.0, 0.0]);
        assert_eq!(rounds, MSB_ROUNDS);
    }

    #[test]
    fn relu_matches() {
        let xs = [-5.0, 5.0, 0.0, 1.25];
        let (y, rounds) = run(&xs, TapeSpec::relu(4), |p, x| p.relu(x).unwrap());
        assert_eq!(rounds, RELU_ROUNDS);
        assert_eq!(y, vec![0.0, 5.0, 0.0, 1.25]);
    }

    #[test]
    fn exp_reciprocal_inv_sqrt_points() {
        let (e, r) = run(&[0.0, 1.0], TapeSpec::exp(2), |p, x| p.exp(x).unwrap());
        assert_eq!(r, EXP_ROUNDS as u64);
        assert!((e[0] - 1.0).abs() < 0.01);
        assert!((e[1] / std::f64::consts::E - 1.0).abs() < 0.01);
        let (y, r) = run(&[1.0, 4.0], TapeSpec::reciprocal(2), |p, x| p.reciprocal(x).unwrap());
        assert_eq!(r, RECIPROCAL_ROUNDS);
        assert!((y[0] - 1.0).abs() < 1e-3);
        assert!((y[1] / 0.25 - 1.0).abs() < 1e-3);
        let (y, r) = run(&[4.0], TapeSpec::inv_sqrt(1), |p, x| p.inv_sqrt(x).unwrap());
        assert_eq!(r, INV_SQRT_ROUNDS);
        assert!((y[0] / 0.5 - 1.0).abs() < 1e-3);
    }

    #[test]
    fn softmax_uniform_row() {
        let (y, r) = run(&[0.0; 4], TapeSpec::softmax(1, 4), |p, x| {
            let x = x.reshape(vec![1, 4]).unwrap();
            p.softmax(&x, 1.0, None).unwrap()
        });
        assert_eq!(r, SOFTMAX_ROUNDS);
        for v in y {
            assert!((v - 0.25).abs() < 0.02);
        }
    }
}
