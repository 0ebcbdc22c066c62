//! Right-hand matmul operands produced one row block at a time.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;

use super::{MpcError, Result, SharedTensor};
use crate::fxp::{self, RingTensor};

/// One party's share of a `rows x cols` matrix, readable by row range.
pub trait RowSource: Sync {
    fn party(&self) -> u8;
    fn session(&self) -> u64;
    fn dims(&self) -> (usize, usize);
    fn frac_bits(&self) -> u32;
    /// Writes rows `r0..r1` (row-major) into `out`.
    fn fill_rows(&self, r0: usize, r1: usize, out: &mut [u64]);
}

impl RowSource for SharedTensor {
    fn party(&self) -> u8 {
        SharedTensor::party(self)
    }
    fn session(&self) -> u64 {
        SharedTensor::session(self)
    }
    fn dims(&self) -> (usize, usize) {
        self.share().dims2()
    }
    fn frac_bits(&self) -> u32 {
        SharedTensor::frac_bits(self)
    }
    fn fill_rows(&self, r0: usize, r1: usize, out: &mut [u64]) {
        let n = self.dims().1;
        out.copy_from_slice(&self.data()[r0 * n..r1 * n]);
    }
}

#[derive(Clone, Copy, Debug)]
enum Side<'a> {
    /// Party 0: the ChaCha stream itself.
    Mask,
    /// Party 1: the encoding of the plaintext minus the stream.
    Complement(&'a [f64]),
}

/// Additive share of a plaintext weight matrix, held by seed.
///
/// Stands in for a share delivered offline. Either side expands only the
/// rows asked for, so a head with hundreds of millions of weights adds no
/// resident ring memory.
#[derive(Clone, Debug)]
pub struct WeightShare<'a> {
    party: u8,
    session: u64,
    rows: usize,
    cols: usize,
    frac: u32,
    seed: [u8; 32],
    side: Side<'a>,
}

/// Shares of `plain` (`rows x cols`, row-major) for both parties.
///
/// Fails if any entry is outside the encodable range at scale `frac`.
pub fn split_weights(plain: &[f64], rows: usize, cols: usize, frac: u32, seed: [u8; 32], session: u64) -> Result<(WeightShare<'_>, WeightShare<'_>)> {
    if plain.len() != rows * cols {
        return Err(MpcError::Metadata(format!("{} weights for {rows}x{cols}", plain.len())));
    }
    for (i, &v) in plain.iter().enumerate() {
        fxp::encode_at(v, frac, i)?;
    }
    let base = WeightShare { party: 0, session, rows, cols, frac, seed, side: Side::Mask };
    Ok((base.clone(), WeightShare { party: 1, side: Side::Complement(plain), ..base }))
}

impl WeightShare<'_> {
    /// Materialises the share.
    pub fn to_shared(&self) -> SharedTensor {
        let mut out = vec![0u64; self.rows * self.cols];
        self.fill_rows(0, self.rows, &mut out);
        SharedTensor::new(self.party, RingTensor::new(vec![self.rows, self.cols], out, self.frac).expect("shape"), self.session)
    }
}

impl RowSource for WeightShare<'_> {
    fn party(&self) -> u8 {
        self.party
    }
    fn session(&self) -> u64 {
        self.session
    }
    fn dims(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }
    fn frac_bits(&self) -> u32 {
        self.frac
    }
    fn fill_rows(&self, r0: usize, r1: usize, out: &mut [u64]) {
        let off = r0 * self.cols;
        assert_eq!(out.len(), (r1 - r0) * self.cols);
        let mut rng = ChaCha12Rng::from_seed(self.seed);
        rng.set_word_pos(off as u128 * 2);
        for o in out.iter_mut() {
            *o = rng.next_u64();
        }
        if let Side::Complement(plain) = self.side {
            let len = out.len();
            for (o, &v) in out.iter_mut().zip(&plain[off..off + len]) {
                *o = fxp::encode_scalar(v, self.frac).expect("range checked at split").wrapping_sub(*o);
            }
        }
    }
}
