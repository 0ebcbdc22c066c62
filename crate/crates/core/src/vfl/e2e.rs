//! The fully secure baseline: the whole central model under MPC.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use super::cost::{e2e_tape, E2E_SOFTMAX_SHIFT};
use super::masked::{build_masked_sequence, central_input};
use super::secure::{col_slice, deliver_outputs, hcat_shares, share_matrix, submit_shares, transpose_share, FRAC};
use super::{PartitionedSequence, PipelineConfig, PipelineResult, Result, VflError};
use crate::fxp::{decode_vec, encode_slice, RingTensor};
use crate::mpc::nonlinear::broadcast_cols;
use crate::mpc::{self, dealer_generate, run_pair, stage, Party, SharedTensor, StageStats, TapeSpec, Transcript};
use crate::nn::{layernorm_forward, linear_forward, relu_forward, CentralModel, EncoderInput, Linear, Mat, LN_EPS};

/// Observed extent of one approximation input and its valid interval.
#[derive(Clone, Debug, PartialEq)]
pub struct RangeCheck {
    pub layer: String,
    pub what: &'static str,
    pub min: f64,
    pub max: f64,
    pub lo: f64,
    pub hi: f64,
}

impl RangeCheck {
    fn new(layer: String, what: &'static str, values: impl Iterator<Item = f64>, lo: f64, hi: f64) -> Self {
        let (min, max) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
        Self { layer, what, min, max, lo, hi }
    }

    fn check(self) -> Result<Self> {
        for v in [self.min, self.max] {
            if !(self.lo..=self.hi).contains(&v) {
                return Err(VflError::Range { layer: self.layer, what: self.what, value: v, lo: self.lo, hi: self.hi });
            }
        }
        Ok(self)
    }
}

fn lin(m: &CentralModel, l: &Linear, x: &Mat) -> Result<Mat> {
    Ok(linear_forward(x, m.store.get(l.w), m.store.get(l.b))?)
}

fn row_var_plus_eps(x: &Mat) -> impl Iterator<Item = f64> + '_ {
    (0..x.rows).map(move |r| {
        let row = x.row(r);
        let mean = row.iter().sum::<f64>() / row.len() as f64;
        row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / row.len() as f64 + LN_EPS
    })
}

/// Plaintext walk of the secure schedule on one full sequence, checking the
/// inputs of every approximated function against its valid interval.
/// Returns the checks and the model output.
///
/// The harness holds every party's data, so it can run this before the
/// protocol; a deployment would calibrate these bounds offline.
pub fn e2e_range_audit(model: &CentralModel, inp: &EncoderInput) -> Result<(Vec<RangeCheck>, f64)> {
    let enc = &model.encoder;
    let (l, d) = (inp.x.rows, enc.cfg.d_model);
    let (heads, dk) = (enc.cfg.n_heads, d / enc.cfg.n_heads);
    let scale = 1.0 / (dk as f64).sqrt();
    let mut checks = Vec::new();
    let mut h = lin(model, &enc.input, &inp.x)?;
    let pos = model.store.get(enc.pos);
    for r in 0..l {
        h.row_mut(r).iter_mut().zip(pos.row(inp.positions[r])).for_each(|(a, b)| *a += b);
    }
    for (li, layer) in enc.layers.iter().enumerate() {
        let qkv = lin(model, &layer.qkv, &h)?;
        let mut heads_out = Vec::with_capacity(heads);
        let mut shifted = Vec::new();
        let mut sums = Vec::new();
        for hd in 0..heads {
            let q = qkv.cols_slice(hd * dk, (hd + 1) * dk).scale(scale);
            let k = qkv.cols_slice(d + hd * dk, d + (hd + 1) * dk);
            let v = qkv.cols_slice(2 * d + hd * dk, 2 * d + (hd + 1) * dk);
            let s = q.gemm(false, &k, true).map(|x| x - E2E_SOFTMAX_SHIFT);
            let e = s.map(f64::exp);
            let mut p = e.clone();
            for r in 0..l {
                let z: f64 = e.row(r).iter().sum();
                sums.push(z);
                p.row_mut(r).iter_mut().for_each(|x| *x /= z);
            }
            shifted.extend_from_slice(&s.data);
            heads_out.push(p.matmul(&v));
        }
        let name = format!("layer{li}.attention");
        checks.push(RangeCheck::new(name.clone(), "shifted score", shifted.into_iter(), -16.0, 4.0).check()?);
        checks.push(RangeCheck::new(name, "softmax denominator", sums.into_iter(), 0.1, 512.0).check()?);
        let a = Mat::hcat(&heads_out.iter().collect::<Vec<_>>());
        let mut r = lin(model, &layer.out, &a)?;
        r.add_assign(&h);
        checks.push(RangeCheck::new(format!("layer{li}.ln1"), "variance", row_var_plus_eps(&r), 0.005, 512.0).check()?);
        h = layernorm_forward(&r, model.store.get(layer.ln1_g), model.store.get(layer.ln1_b))?;
        let f = relu_forward(&lin(model, &layer.ff1, &h)?);
        let mut r = lin(model, &layer.ff2, &f)?;
        r.add_assign(&h);
        checks.push(RangeCheck::new(format!("layer{li}.ln2"), "variance", row_var_plus_eps(&r), 0.005, 512.0).check()?);
        h = layernorm_forward(&r, model.store.get(layer.ln2_g), model.store.get(layer.ln2_b))?;
    }
    let mut pooled = Mat::zeros(1, d);
    for r in 0..l {
        pooled.row_mut(0).iter_mut().zip(h.row(r)).for_each(|(a, b)| *a += b / l as f64);
    }
    let e = lin(model, &enc.proj, &pooled)?;
    let y = model.head.eval(&model.store, &e);
    Ok((checks, y.data[0]))
}

struct Weights {
    t: Vec<SharedTensor>,
}

impl Weights {
    fn get(&self, id: usize) -> &SharedTensor {
        &self.t[id]
    }

    fn vec(&self, id: usize) -> mpc::Result<SharedTensor> {
        let t = &self.t[id];
        t.reshape(vec![t.len()])
    }
}

fn linear_dense(p: &mut Party, w: &Weights, l: &Linear, x: &SharedTensor) -> mpc::Result<SharedTensor> {
    let z = p.matmul(x, w.get(l.w))?;
    let (rows, cols) = z.share().dims2();
    p.add(&z, &broadcast_cols(&w.vec(l.b)?, rows, cols))
}

fn central_party(p: &mut Party, m: &CentralModel, w: &Weights, x: &SharedTensor) -> mpc::Result<SharedTensor> {
    let enc = &m.encoder;
    let (l, _) = x.share().dims2();
    let d = enc.cfg.d_model;
    let (heads, dk) = (enc.cfg.n_heads, d / enc.cfg.n_heads);
    let mut h = linear_dense(p, w, &enc.input, x)?;
    h = p.add(&h, &w.get(enc.pos).slice(0, vec![l, d]))?;
    for layer in &enc.layers {
        let qkv = linear_dense(p, w, &layer.qkv, &h)?;
        let q = p.mul_public_scalar(&col_slice(&qkv, 0, d), 1.0 / (dk as f64).sqrt())?;
        let qs: Vec<SharedTensor> = (0..heads).map(|i| col_slice(&q, i * dk, (i + 1) * dk)).collect();
        let kts: Vec<SharedTensor> = (0..heads).map(|i| transpose_share(&col_slice(&qkv, d + i * dk, d + (i + 1) * dk))).collect();
        let pairs: Vec<(&SharedTensor, &SharedTensor)> = qs.iter().zip(&kts).collect();
        let scores: Vec<SharedTensor> = p.matmul_raw_many(&pairs)?.iter().map(|s| p.trunc(s, FRAC)).collect();
        let stacked = SharedTensor::concat(&scores.iter().collect::<Vec<_>>())?.reshape(vec![heads * l, l])?;
        let probs = p.softmax(&stacked, E2E_SOFTMAX_SHIFT, None)?;
        let ps: Vec<SharedTensor> = (0..heads).map(|i| probs.slice(i * l * l, vec![l, l])).collect();
        let vs: Vec<SharedTensor> = (0..heads).map(|i| col_slice(&qkv, 2 * d + i * dk, 2 * d + (i + 1) * dk)).collect();
        let pairs: Vec<(&SharedTensor, &SharedTensor)> = ps.iter().zip(&vs).collect();
        let outs: Vec<SharedTensor> = p.matmul_raw_many(&pairs)?.iter().map(|s| p.trunc(s, FRAC)).collect();
        let a = hcat_shares(&outs.iter().collect::<Vec<_>>())?;
        let o = linear_dense(p, w, &layer.out, &a)?;
        let r = p.add(&h, &o)?;
        h = p.layernorm(&r, &w.vec(layer.ln1_g)?, &w.vec(layer.ln1_b)?, LN_EPS)?;
        let f = linear_dense(p, w, &layer.ff1, &h)?;
        let f = p.relu(&f)?;
        let f = linear_dense(p, w, &layer.ff2, &f)?;
        let r = p.add(&h, &f)?;
        h = p.layernorm(&r, &w.vec(layer.ln2_g)?, &w.vec(layer.ln2_b)?, LN_EPS)?;
    }
    let sum = h.map(vec![1, d], |v| (0..d).map(|c| (0..l).fold(0u64, |acc, r| acc.wrapping_add(v[r * d + c]))).collect());
    let pooled = p.mul_public_scalar(&sum, 1.0 / l as f64)?;
    let mut y = linear_dense(p, w, &enc.proj, &pooled)?;
    for (i, layer) in m.head.layers.iter().enumerate() {
        if i > 0 {
            y = p.relu(&y)?;
        }
        y = linear_dense(p, w, layer, &y)?;
    }
    Ok(y)
}

fn e2e_party(p: &mut Party, m: &CentralModel, w: &Weights, inputs: &[Vec<SharedTensor>]) -> mpc::Result<Vec<RingTensor>> {
    let mut out = Vec::with_capacity(inputs.len());
    for per_client in inputs {
        let x = p.staged(stage::RECONSTRUCT_INPUT, |p| {
            let mut acc = per_client[0].clone();
            for s in &per_client[1..] {
                acc = p.add(&acc, s)?;
            }
            p.charge((acc.len() * per_client.len()) as u64);
            Ok(acc)
        })?;
        // The whole central model is the private computation.
        let y = p.staged(stage::PRIVATE_HEAD_FORWARD, |p| central_party(p, m, w, &x))?;
        out.push(p.reveal_output(&y)?);
    }
    if !p.tape().is_exhausted() {
        return Err(mpc::MpcError::TapeMismatch { requested: "end of pipeline".into(), found: format!("{} unused correlations", p.tape().remaining()) });
    }
    Ok(out)
}

/// End-to-end MPC over at most `max_batch` records, one after another in
/// one session. Each client shares its masked sequence (mask channel
/// cleared); the compute parties add the shares to obtain the whole record.
pub fn run_e2e_mpc(batch: &[PartitionedSequence], model: &CentralModel, cfg: &PipelineConfig, max_batch: usize) -> Result<PipelineResult> {
    if batch.is_empty() || batch.len() > max_batch {
        return Err(VflError::Pipeline(format!("E2E batch of {} records, allowed 1..={max_batch}", batch.len())));
    }
    let ecfg = &model.encoder.cfg;
    let f = ecfg.d_in - 1;
    let mut spec = TapeSpec::new();
    let mut submissions = Vec::new();
    for seq in batch {
        seq.validate()?;
        if seq.total_len > ecfg.max_len {
            return Err(VflError::Pipeline(format!("record of {} steps beyond max_len {}", seq.total_len, ecfg.max_len)));
        }
        e2e_range_audit(model, &central_input(seq, ecfg.d_in)?)?;
        for view in &seq.per_client {
            let mut tokens = build_masked_sequence(view, seq.total_len, f)?.tokens;
            (0..tokens.rows).for_each(|r| tokens.row_mut(r)[f] = 0.0);
            submissions.push(encode_slice(vec![tokens.rows, tokens.cols], &tokens.data, FRAC)?);
        }
        spec.extend(&e2e_tape(ecfg, model.encoder.out_width(&model.store), model.head.widths(&model.store)[1], seq.total_len));
    }
    let n = batch[0].n_clients();
    let mut clients = Transcript::default();
    let mut rng = ChaCha12Rng::seed_from_u64(cfg.session.seed ^ 0xe2e0_0000);
    let (shares, st) = submit_shares(&submissions, cfg, &mut rng, &mut clients)?;
    clients.add_stage(stage::COMMUNICATION_SHARE_HANDLING, st);
    let per_party: Vec<Vec<Vec<SharedTensor>>> = shares.iter().map(|s| s.chunks(n).map(|c| c.to_vec()).collect()).collect();

    let mut weights = [Weights { t: Vec::new() }, Weights { t: Vec::new() }];
    for (id, m) in model.store.values.iter().enumerate() {
        let [a, b] = share_matrix(m, cfg.dealer_seed, "central", id, cfg.session.session)?;
        weights[0].t.push(a);
        weights[1].t.push(b);
    }
    let tapes = dealer_generate(&spec, cfg.dealer_seed);
    let (r0, r1) = run_pair(cfg.profile.clone(), cfg.mode, tapes, cfg.session, |p| {
        let id = p.id() as usize;
        (e2e_party(p, model, &weights[id], &per_party[id]), p.transcript())
    });
    let (y0, y1) = (r0.0?, r1.0?);
    if y0 != y1 {
        return Err(VflError::Pipeline("compute parties revealed different outputs".into()));
    }
    let predictions: Vec<f64> = y0.iter().flat_map(decode_vec).collect();
    let mut transcript = r0.1.merge(&r1.1).merge(&clients);
    let mut delivery = StageStats::default();
    for y in &y0 {
        let s = deliver_outputs(y.data(), n, cfg, &mut transcript)?;
        delivery.bytes += s.bytes;
        delivery.time += s.time;
    }
    transcript.add_stage(stage::OUTPUT_REVEAL, delivery);
    Ok(PipelineResult { predictions, transcript })
}
