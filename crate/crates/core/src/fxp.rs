//! Fixed-point embedding of reals into Z_{2^64} and plaintext ring arithmetic.
//!
//! A real `x` is stored as `round(x * 2^f) mod 2^64`; negatives use the
//! two's-complement image, so the top bit is the sign. The plaintext routines
//! here double as the oracle for every secure operation in [`crate::mpc`].

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::par::{self, Exec};

pub const DEFAULT_FRAC_BITS: u32 = 16;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FxpError {
    #[error("encoding overflow at index {index}: {value} outside (-2^{limit_bits}, 2^{limit_bits})")]
    EncodingOverflow { index: usize, value: f64, limit_bits: u32 },
    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },
    #[error("{op}: shape mismatch {left:?} vs {right:?}")]
    ShapeMismatch { op: &'static str, left: Vec<usize>, right: Vec<usize> },
    #[error("{op}: frac_bits mismatch {left} vs {right}")]
    ScaleMismatch { op: &'static str, left: u32, right: u32 },
    #[error("data length {len} does not match shape {shape:?}")]
    BadLength { len: usize, shape: Vec<usize> },
}

pub type Result<T> = std::result::Result<T, FxpError>;

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// Plaintext real tensor; every entry finite.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RealTensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl RealTensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if numel(&shape) != data.len() {
            return Err(FxpError::BadLength { len: data.len(), shape });
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(FxpError::NonFinite { index });
        }
        Ok(Self { shape, data })
    }

    pub fn scalar(x: f64) -> Result<Self> {
        Self::new(vec![1], vec![x])
    }

    pub fn vector(data: Vec<f64>) -> Result<Self> {
        Self::new(vec![data.len()], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }
}

/// Tensor over Z_{2^64} carrying its fixed-point scale.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RingTensor {
    shape: Vec<usize>,
    data: Vec<u64>,
    frac_bits: u32,
}

impl RingTensor {
    pub fn new(shape: Vec<usize>, data: Vec<u64>, frac_bits: u32) -> Result<Self> {
        if numel(&shape) != data.len() {
            return Err(FxpError::BadLength { len: data.len(), shape });
        }
        Ok(Self { shape, data, frac_bits })
    }

    pub fn zeros(shape: Vec<usize>, frac_bits: u32) -> Self {
        let n = numel(&shape);
        Self { shape, data: vec![0; n], frac_bits }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[u64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<u64> {
        self.data
    }

    pub fn frac_bits(&self) -> u32 {
        self.frac_bits
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Rows and columns of a 2-D tensor (a 1-D tensor is one row).
    pub fn dims2(&self) -> (usize, usize) {
        match self.shape.as_slice() {
            [n] => (1, *n),
            [r, c] => (*r, *c),
            s => (s[..s.len() - 1].iter().product(), *s.last().unwrap_or(&1)),
        }
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        if numel(&shape) != self.data.len() {
            return Err(FxpError::BadLength { len: self.data.len(), shape });
        }
        self.shape = shape;
        Ok(self)
    }

    fn check(&self, other: &Self, op: &'static str) -> Result<()> {
        if self.shape != other.shape {
            return Err(FxpError::ShapeMismatch { op, left: self.shape.clone(), right: other.shape.clone() });
        }
        if self.frac_bits != other.frac_bits {
            return Err(FxpError::ScaleMismatch { op, left: self.frac_bits, right: other.frac_bits });
        }
        Ok(())
    }

    fn zip(&self, other: &Self, f: impl Fn(u64, u64) -> u64 + Sync + Send) -> Self {
        Self { shape: self.shape.clone(), data: par::zip_map(Exec::default(), &self.data, &other.data, f), frac_bits: self.frac_bits }
    }

    pub fn map(&self, f: impl Fn(u64) -> u64) -> Self {
        Self { shape: self.shape.clone(), data: self.data.iter().map(|&x| f(x)).collect(), frac_bits: self.frac_bits }
    }

    pub fn ring_add(&self, other: &Self) -> Result<Self> {
        self.check(other, "ring_add")?;
        Ok(self.zip(other, u64::wrapping_add))
    }

    pub fn ring_sub(&self, other: &Self) -> Result<Self> {
        self.check(other, "ring_sub")?;
        Ok(self.zip(other, u64::wrapping_sub))
    }

    pub fn ring_neg(&self) -> Self {
        self.map(u64::wrapping_neg)
    }

    /// Elementwise ring product, no rescaling.
    pub fn ring_mul(&self, other: &Self) -> Result<Self> {
        self.check(other, "ring_mul")?;
        Ok(self.zip(other, u64::wrapping_mul))
    }

    /// Elementwise product rescaled by one arithmetic shift of `f` bits.
    pub fn mul_trunc(&self, other: &Self) -> Result<Self> {
        self.check(other, "mul_trunc")?;
        let f = self.frac_bits;
        Ok(self.zip(other, move |a, b| trunc_signed(a.wrapping_mul(b), f)))
    }

    /// Arithmetic right shift of every entry by `bits` on the signed reading.
    pub fn truncate(&self, bits: u32) -> Self {
        self.map(|x| trunc_signed(x, bits))
    }

    /// Ring matrix product with one truncation by `f` per output entry.
    pub fn matmul_plain(&self, other: &Self) -> Result<Self> {
        let z = self.matmul_ring(other, Exec::default())?;
        Ok(z.truncate(self.frac_bits))
    }

    /// Ring matrix product without truncation (scale 2f).
    pub fn matmul_ring(&self, other: &Self, exec: Exec) -> Result<Self> {
        if self.frac_bits != other.frac_bits {
            return Err(FxpError::ScaleMismatch { op: "matmul", left: self.frac_bits, right: other.frac_bits });
        }
        let (m, k) = self.dims2();
        let (k2, n) = other.dims2();
        if k != k2 || self.shape.len() > 2 || other.shape.len() > 2 {
            return Err(FxpError::ShapeMismatch { op: "matmul", left: self.shape.clone(), right: other.shape.clone() });
        }
        let mut out = vec![0u64; m * n];
        ring_matmul_acc(exec, &self.data, &other.data, &mut out, m, k, n);
        Ok(Self { shape: vec![m, n], data: out, frac_bits: self.frac_bits })
    }

    /// 2-D transpose.
    pub fn transpose(&self) -> Self {
        let (r, c) = self.dims2();
        let mut out = vec![0u64; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Self { shape: vec![c, r], data: out, frac_bits: self.frac_bits }
    }
}

/// Signed arithmetic shift of a ring element.
#[inline]
pub fn trunc_signed(x: u64, bits: u32) -> u64 {
    ((x as i64) >> bits) as u64
}

/// `out += a * b` for row-major `a: m x k`, `b: k x n`, `out: m x n` over Z_{2^64}.
///
/// Rows of `out` are split into tasks; within a task `b` is streamed in row
/// blocks so each block is reused across the task's rows while cache-resident.
pub fn ring_matmul_acc(exec: Exec, a: &[u64], b: &[u64], out: &mut [u64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    let tasks = (exec.threads() * 4).max(1);
    let rows_per_task = m.div_ceil(tasks).max(1);
    let kb = (KBLOCK_BYTES / (8 * n)).clamp(1, k);
    par::for_each_chunk_mut(exec, out, rows_per_task * n, |t, chunk| {
        let row0 = t * rows_per_task;
        let rows = chunk.len() / n;
        let mut k0 = 0;
        while k0 < k {
            let k1 = (k0 + kb).min(k);
            for r in 0..rows {
                let arow = &a[(row0 + r) * k..(row0 + r + 1) * k];
                let orow = &mut chunk[r * n..(r + 1) * n];
                for kk in k0..k1 {
                    axpy(orow, arow[kk], &b[kk * n..(kk + 1) * n]);
                }
            }
            k0 = k1;
        }
    });
}

const KBLOCK_BYTES: usize = 256 * 1024;

#[inline]
fn axpy(out: &mut [u64], s: u64, x: &[u64]) {
    for (o, &v) in out.iter_mut().zip(x) {
        *o = o.wrapping_add(s.wrapping_mul(v));
    }
}

pub fn encode_scalar(x: f64, f: u32) -> Result<u64> {
    encode_at(x, f, 0)
}

pub(crate) fn encode_at(x: f64, f: u32, index: usize) -> Result<u64> {
    if !x.is_finite() {
        return Err(FxpError::NonFinite { index });
    }
    let limit_bits = 63 - f;
    let bound = (1u64 << limit_bits) as f64;
    if x.abs() >= bound {
        return Err(FxpError::EncodingOverflow { index, value: x, limit_bits });
    }
    Ok(((x * (1u64 << f) as f64).round() as i64) as u64)
}

pub fn decode_scalar(x: u64, f: u32) -> f64 {
    (x as i64) as f64 / (1u64 << f) as f64
}

pub fn encode(x: &RealTensor, f: u32) -> Result<RingTensor> {
    let data = x.data.iter().enumerate().map(|(i, &v)| encode_at(v, f, i)).collect::<Result<Vec<_>>>()?;
    Ok(RingTensor { shape: x.shape.clone(), data, frac_bits: f })
}

pub fn encode_slice(shape: Vec<usize>, x: &[f64], f: u32) -> Result<RingTensor> {
    if numel(&shape) != x.len() {
        return Err(FxpError::BadLength { len: x.len(), shape });
    }
    let data = x.iter().enumerate().map(|(i, &v)| encode_at(v, f, i)).collect::<Result<Vec<_>>>()?;
    Ok(RingTensor { shape, data, frac_bits: f })
}

pub fn decode(t: &RingTensor) -> RealTensor {
    RealTensor { shape: t.shape.clone(), data: decode_vec(t) }
}

pub fn decode_vec(t: &RingTensor) -> Vec<f64> {
    t.data.iter().map(|&v| decode_scalar(v, t.frac_bits)).collect()
}
