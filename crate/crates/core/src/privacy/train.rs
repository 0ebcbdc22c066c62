use std::rc::Rc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use super::{bundle_forward, task_loss, PrivacyError, Result, TaskMetrics, TrainBatch};
use crate::data::{batch_iter, Record, SequenceDataset};
use crate::nn::{AdamW, AdamWConfig, Bind, CentralModel, EncoderInput, Graph, Mat, ModelBundle};

/// Plain task training of a bundle or of the centralised model.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SupervisedConfig {
    pub optimizer: AdamWConfig,
    pub batch: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl SupervisedConfig {
    /// AdamW, lr 1e-4, weight decay 1e-6, batch 64, 20 epochs.
    pub fn vfl_default() -> Self {
        Self { optimizer: AdamWConfig::new(1e-4, 1e-6), batch: 64, epochs: 20, seed: 0 }
    }

    /// Adam with L2 1e-5, lr 3e-4, batch 32, 10 epochs.
    pub fn central_default() -> Self {
        Self { optimizer: AdamWConfig::adam_l2(3e-4, 1e-5), batch: 32, epochs: 10, seed: 0 }
    }

    fn validate(&self) -> Result<()> {
        if self.batch == 0 || self.epochs == 0 || self.optimizer.lr.is_nan() || self.optimizer.lr <= 0.0 {
            return Err(PrivacyError::Config(format!("batch {}, epochs {}, lr {}", self.batch, self.epochs, self.optimizer.lr)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub test: TaskMetrics,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<TrainRecord>,
}

impl TrainReport {
    pub fn last(&self) -> Option<&TrainRecord> {
        self.epochs.last()
    }
}

pub(crate) fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    seed ^ (epoch as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

pub(crate) fn guard(value: f64, epoch: usize, batch: usize, what: &'static str) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(PrivacyError::Diverged { epoch, batch, what, value })
    }
}

/// Outputs and targets of `bundle` on `idx`, in a seeded order and split.
pub fn predict(bundle: &ModelBundle, ds: &SequenceDataset, idx: &[usize], seed: u64) -> Result<(Vec<f64>, Vec<f64>)> {
    let (mut out, mut y) = (Vec::with_capacity(idx.len()), Vec::with_capacity(idx.len()));
    for b in batch_iter(ds, idx, 64, bundle.spec.n_clients, seed)? {
        let tb = TrainBatch::new(bundle, &b.parts)?;
        let mut g = Graph::new();
        let (_, o) = bundle_forward(bundle, &bundle.store, &mut g, Bind::Frozen, &tb.inputs)?;
        out.extend_from_slice(&g.value(o).data);
        y.extend(tb.targets.iter());
    }
    Ok((out, y))
}

/// Task-only training of every non-discriminator parameter.
pub fn train_supervised(bundle: &mut ModelBundle, ds: &SequenceDataset, cfg: &SupervisedConfig) -> Result<TrainReport> {
    cfg.validate()?;
    let mut opt = AdamW::new(cfg.optimizer, &bundle.store, |id| !bundle.is_disc_param(id));
    let mut report = TrainReport::default();
    for epoch in 0..cfg.epochs {
        let (mut sum, mut count) = (0.0, 0);
        for (bi, b) in batch_iter(ds, &ds.train, cfg.batch, bundle.spec.n_clients, epoch_seed(cfg.seed, epoch))?.iter().enumerate() {
            let tb = TrainBatch::new(bundle, &b.parts)?;
            let grads = {
                let only = |id: usize| !bundle.is_disc_param(id);
                let mut g = Graph::new();
                let (_, out) = bundle_forward(bundle, &bundle.store, &mut g, Bind::Only(&only), &tb.inputs)?;
                let l = task_loss(&mut g, out, tb.targets.clone(), bundle.spec.task);
                let v = g.scalar(l);
                guard(v, epoch, bi, "task loss")?;
                sum += v * tb.len() as f64;
                count += tb.len();
                g.backward(l)
            };
            opt.step(&mut bundle.store, &grads);
        }
        let (o, y) = predict(bundle, ds, &ds.test, cfg.seed)?;
        report.epochs.push(TrainRecord { epoch: epoch + 1, train_loss: sum / count.max(1) as f64, test: TaskMetrics::compute(bundle.spec.task, &o, &y) });
    }
    Ok(report)
}

fn records_input(records: &[&Record], d_in: usize) -> Result<EncoderInput> {
    let f = d_in - 1;
    let mut data = Vec::new();
    let mut positions = Vec::new();
    let mut segs = Vec::with_capacity(records.len());
    for r in records {
        segs.push((positions.len(), r.len()));
        for (t, s) in r.steps.iter().enumerate() {
            if s.features.len() != f {
                return Err(PrivacyError::Config(format!("record {} has width {}, model expects {f}", r.seq_id, s.features.len())));
            }
            data.extend_from_slice(&s.features);
            data.push(0.0);
            positions.push(t);
        }
    }
    Ok(EncoderInput { x: Mat::from_vec(positions.len(), d_in, data), positions: Rc::new(positions), segs: Rc::new(segs), keep: None })
}

fn central_predict(model: &CentralModel, ds: &SequenceDataset, idx: &[usize]) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(idx.len());
    for chunk in idx.chunks(64) {
        let recs: Vec<&Record> = chunk.iter().map(|&i| &ds.records[i]).collect();
        let inp = records_input(&recs, model.encoder.cfg.d_in)?;
        out.extend(model.eval(&inp)?.data);
    }
    Ok(out)
}

/// Task training of the centralised model on whole records.
pub fn train_central(model: &mut CentralModel, ds: &SequenceDataset, cfg: &SupervisedConfig) -> Result<TrainReport> {
    cfg.validate()?;
    let mut opt = AdamW::new(cfg.optimizer, &model.store, |_| true);
    let mut report = TrainReport::default();
    let d_in = model.encoder.cfg.d_in;
    for epoch in 0..cfg.epochs {
        let mut order = ds.train.clone();
        order.shuffle(&mut ChaCha12Rng::seed_from_u64(epoch_seed(cfg.seed, epoch)));
        let (mut sum, mut count) = (0.0, 0);
        for (bi, chunk) in order.chunks(cfg.batch).enumerate() {
            let recs: Vec<&Record> = chunk.iter().map(|&i| &ds.records[i]).collect();
            let inp = records_input(&recs, d_in)?;
            let targets = Rc::new(recs.iter().map(|r| r.label).collect::<Vec<_>>());
            let grads = {
                let mut g = Graph::new();
                let out = model.forward(&mut g, Bind::All, &inp)?;
                let l = task_loss(&mut g, out, targets, model.task);
                let v = g.scalar(l);
                guard(v, epoch, bi, "task loss")?;
                sum += v * chunk.len() as f64;
                count += chunk.len();
                g.backward(l)
            };
            opt.step(&mut model.store, &grads);
        }
        let o = central_predict(model, ds, &ds.test)?;
        let y = ds.labels(&ds.test);
        report.epochs.push(TrainRecord { epoch: epoch + 1, train_loss: sum / count.max(1) as f64, test: TaskMetrics::compute(model.task, &o, &y) });
    }
    Ok(report)
}
