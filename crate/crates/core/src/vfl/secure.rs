use rand::RngCore;
use sha2::{Digest, Sha256};

use super::{PipelineConfig, Result};
use crate::fxp::RingTensor;
use crate::mpc::nonlinear::broadcast_cols;
use crate::mpc::{self, share, split_weights, Party, SharedTensor, StageStats, Transcript, WeightShare};
use crate::netsim::Link;
use crate::nn::{Mat, Mlp, ParamStore};

pub(crate) const FRAC: u32 = crate::fxp::DEFAULT_FRAC_BITS;

/// One party's share of a linear layer.
#[derive(Clone, Debug)]
pub struct SharedLayer<'a> {
    pub w: WeightShare<'a>,
    pub b: SharedTensor,
}

pub(crate) fn derive_seed(seed: u128, tag: &str, index: usize) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(tag.as_bytes());
    h.update((index as u64).to_le_bytes());
    h.finalize().into()
}

/// Dense shares of a plaintext matrix.
pub(crate) fn share_matrix(m: &Mat, seed: u128, tag: &str, index: usize, session: u64) -> Result<[SharedTensor; 2]> {
    let (a, b) = split_weights(&m.data, m.rows, m.cols, FRAC, derive_seed(seed, tag, index), session)?;
    Ok([a.to_shared(), b.to_shared()])
}

/// Offline shares of every layer of `mlp` for both parties. Weight shares
/// are seed-expanded on demand; biases are materialised.
pub fn share_mlp<'a>(mlp: &Mlp, store: &'a ParamStore, seed: u128, tag: &str, session: u64) -> Result<[Vec<SharedLayer<'a>>; 2]> {
    let mut out = [Vec::new(), Vec::new()];
    for (i, l) in mlp.layers.iter().enumerate() {
        let w = store.get(l.w);
        let (w0, w1) = split_weights(&w.data, w.rows, w.cols, FRAC, derive_seed(seed, tag, 2 * i), session)?;
        let [b0, b1] = share_matrix(store.get(l.b), seed, tag, 2 * i + 1, session)?;
        out[0].push(SharedLayer { w: w0, b: b0 });
        out[1].push(SharedLayer { w: w1, b: b1 });
    }
    Ok(out)
}

/// `x W + b` with `b` broadcast over rows.
pub(crate) fn linear_secure(p: &mut Party, l: &SharedLayer, x: &SharedTensor) -> mpc::Result<SharedTensor> {
    let z = p.matmul_rows(x, &l.w)?;
    let (rows, cols) = z.share().dims2();
    p.add(&z, &broadcast_cols(&l.b.reshape(vec![cols])?, rows, cols))
}

/// The MLP forward under sharing: ReLU between consecutive layers.
pub(crate) fn mlp_secure(p: &mut Party, layers: &[SharedLayer], x: &SharedTensor) -> mpc::Result<SharedTensor> {
    let mut h = x.clone();
    for (i, l) in layers.iter().enumerate() {
        if i > 0 {
            h = p.relu(&h)?;
        }
        h = linear_secure(p, l, &h)?;
    }
    Ok(h)
}

/// Column-wise concatenation of `rows x c_i` shares.
pub fn hcat_shares(parts: &[&SharedTensor]) -> mpc::Result<SharedTensor> {
    let rows = parts.first().map(|p| p.share().dims2().0).unwrap_or(0);
    let mut dims = Vec::with_capacity(parts.len());
    for p in parts {
        let (r, c) = p.share().dims2();
        if r != rows {
            return Err(mpc::MpcError::Metadata(format!("hcat of {r} rows onto {rows}")));
        }
        dims.push(c);
    }
    let cols: usize = dims.iter().sum();
    let flat = SharedTensor::concat(parts)?;
    Ok(flat.map(vec![rows, cols], |_| {
        let mut out = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for (p, &c) in parts.iter().zip(&dims) {
                out.extend_from_slice(&p.data()[r * c..(r + 1) * c]);
            }
        }
        out
    }))
}

/// Columns `c0..c1` of a `rows x cols` share.
pub(crate) fn col_slice(x: &SharedTensor, c0: usize, c1: usize) -> SharedTensor {
    let (rows, cols) = x.share().dims2();
    x.map(vec![rows, c1 - c0], |d| (0..rows).flat_map(|r| d[r * cols + c0..r * cols + c1].iter().copied()).collect())
}

pub(crate) fn transpose_share(x: &SharedTensor) -> SharedTensor {
    let (rows, cols) = x.share().dims2();
    x.map(vec![cols, rows], |d| (0..rows * cols).map(|i| d[(i % rows) * cols + i / rows]).collect())
}

/// Every client splits its tensor into two shares and sends one to each
/// compute party over its own links. Deliveries overlap, so the stage lasts
/// as long as the slowest link.
pub(crate) fn submit_shares(
    values: &[RingTensor],
    cfg: &PipelineConfig,
    rng: &mut impl RngCore,
    transcript: &mut Transcript,
) -> Result<([Vec<SharedTensor>; 2], StageStats)> {
    let session = cfg.session.session;
    let mut out = [Vec::with_capacity(values.len()), Vec::with_capacity(values.len())];
    let mut st = StageStats::default();
    for (c, v) in values.iter().enumerate() {
        let (s0, s1) = share(v, rng, session);
        for (cp, s) in [s0, s1].into_iter().enumerate() {
            let mut link = Link::new(cfg.profile.clone());
            let (payload, t) = link.deliver(s.into_share().into_data())?;
            let bytes = link.counters().bytes_sent;
            st.bytes += bytes;
            st.time = st.time.max(t);
            transcript.add_bytes(&format!("client{c}"), bytes);
            out[cp].push(SharedTensor::new(cp as u8, RingTensor::new(v.shape().to_vec(), payload, v.frac_bits())?, session));
        }
    }
    Ok((out, st))
}

/// The aggregator sends each of `n_clients` the revealed outputs.
pub(crate) fn deliver_outputs(values: &[u64], n_clients: usize, cfg: &PipelineConfig, transcript: &mut Transcript) -> Result<StageStats> {
    let mut st = StageStats::default();
    for _ in 0..n_clients {
        let mut link = Link::new(cfg.profile.clone());
        let (_, t) = link.deliver(values.to_vec())?;
        st.bytes += link.counters().bytes_sent;
        st.time = st.time.max(t);
    }
    transcript.add_bytes("party0", st.bytes);
    Ok(st)
}
