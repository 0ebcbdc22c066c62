use std::rc::Rc;

use super::{OwnedStep, PartitionedSequence, Result, VflError};
use crate::nn::{EncoderInput, Mat};

/// A client's full-length view of one record.
///
/// `tokens` is `len x (feature_dim + 1)`; the last column is the mask
/// channel. Owned rows hold real features with channel 0; every other row is
/// the MASK sentinel: zero features with channel 1.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskedSequence {
    pub tokens: Mat,
    pub owned: Vec<bool>,
}

impl MaskedSequence {
    pub fn len(&self) -> usize {
        self.owned.len()
    }

    pub fn is_empty(&self) -> bool {
        self.owned.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.tokens.cols - 1
    }
}

/// Places `view` at its positions in a sequence of `total_len` rows.
pub fn build_masked_sequence(view: &[OwnedStep], total_len: usize, feature_dim: usize) -> Result<MaskedSequence> {
    if view.is_empty() {
        return Err(VflError::Partition("a client must own at least one step".into()));
    }
    let mut tokens = Mat::zeros(total_len, feature_dim + 1);
    let mut owned = vec![false; total_len];
    for r in 0..total_len {
        tokens.row_mut(r)[feature_dim] = 1.0;
    }
    for s in view {
        if s.position >= total_len {
            return Err(VflError::Position { position: s.position, len: total_len });
        }
        if s.features.len() != feature_dim {
            return Err(VflError::Partition(format!("step of width {} for feature_dim {feature_dim}", s.features.len())));
        }
        if std::mem::replace(&mut owned[s.position], true) {
            return Err(VflError::Partition(format!("position {} given twice", s.position)));
        }
        let row = tokens.row_mut(s.position);
        row[..feature_dim].copy_from_slice(&s.features);
        row[feature_dim] = 0.0;
    }
    Ok(MaskedSequence { tokens, owned })
}

fn feature_dim(d_in: usize) -> Result<usize> {
    d_in.checked_sub(1).filter(|&f| f > 0).ok_or_else(|| VflError::Pipeline(format!("encoder input width {d_in} leaves no features")))
}

/// Client `client`'s masked sequences for the whole batch, each padded to
/// `pad_to` rows with MASK rows. Only owned rows are attention keys and
/// enter the pooled embedding.
pub fn masked_batch_input(batch: &[PartitionedSequence], client: usize, d_in: usize, pad_to: usize) -> Result<EncoderInput> {
    let f = feature_dim(d_in)?;
    let mut parts = Vec::with_capacity(batch.len());
    let mut keep = Vec::with_capacity(batch.len() * pad_to);
    let mut segs = Vec::with_capacity(batch.len());
    for (b, seq) in batch.iter().enumerate() {
        if seq.total_len > pad_to {
            return Err(VflError::Pipeline(format!("record of {} steps padded to {pad_to}", seq.total_len)));
        }
        let view = seq.per_client.get(client).ok_or_else(|| VflError::Pipeline(format!("no client {client}")))?;
        let m = build_masked_sequence(view, pad_to, f)?;
        keep.extend_from_slice(&m.owned);
        segs.push((b * pad_to, pad_to));
        parts.push(m.tokens);
    }
    let x = Mat::vcat(&parts.iter().collect::<Vec<_>>());
    let positions = (0..batch.len()).flat_map(|_| 0..pad_to).collect();
    Ok(EncoderInput { x, positions: Rc::new(positions), segs: Rc::new(segs), keep: Some(Rc::new(keep)) })
}

/// Only client `client`'s own rows, at their global positions. Equivalent
/// to [`masked_batch_input`] for the encoder and much cheaper, used in training.
pub fn compact_batch_input(batch: &[PartitionedSequence], client: usize, d_in: usize) -> Result<EncoderInput> {
    let f = feature_dim(d_in)?;
    let mut data = Vec::new();
    let mut positions = Vec::new();
    let mut segs = Vec::with_capacity(batch.len());
    for seq in batch {
        let view = seq.per_client.get(client).ok_or_else(|| VflError::Pipeline(format!("no client {client}")))?;
        if view.is_empty() {
            return Err(VflError::Partition(format!("{}: client {client} owns no step", seq.seq_id)));
        }
        segs.push((positions.len(), view.len()));
        for s in view {
            if s.features.len() != f {
                return Err(VflError::Partition(format!("step of width {} for feature_dim {f}", s.features.len())));
            }
            data.extend_from_slice(&s.features);
            data.push(0.0);
            positions.push(s.position);
        }
    }
    Ok(EncoderInput { x: Mat::from_vec(positions.len(), f + 1, data), positions: Rc::new(positions), segs: Rc::new(segs), keep: None })
}

/// The whole record in global order with the mask channel at 0.
pub fn central_input(seq: &PartitionedSequence, d_in: usize) -> Result<EncoderInput> {
    let f = feature_dim(d_in)?;
    let steps = seq.reassemble();
    let mut data = Vec::with_capacity(steps.len() * d_in);
    for s in &steps {
        if s.features.len() != f {
            return Err(VflError::Partition(format!("step of width {} for feature_dim {f}", s.features.len())));
        }
        data.extend_from_slice(&s.features);
        data.push(0.0);
    }
    let k = steps.len();
    Ok(EncoderInput { x: Mat::from_vec(k, d_in, data), positions: Rc::new((0..k).collect()), segs: Rc::new(vec![(0, k)]), keep: None })
}

/// Whole records of a batch stacked for the centralised encoder.
pub fn central_batch_input(batch: &[PartitionedSequence], d_in: usize) -> Result<EncoderInput> {
    let parts = batch.iter().map(|s| central_input(s, d_in)).collect::<Result<Vec<_>>>()?;
    let x = Mat::vcat(&parts.iter().map(|p| &p.x).collect::<Vec<_>>());
    let mut segs = Vec::with_capacity(parts.len());
    let mut positions = Vec::with_capacity(x.rows);
    for p in &parts {
        segs.push((positions.len(), p.x.rows));
        positions.extend(p.positions.iter().copied());
    }
    Ok(EncoderInput { x, positions: Rc::new(positions), segs: Rc::new(segs), keep: None })
}
