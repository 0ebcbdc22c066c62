use std::rc::Rc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use super::train::{epoch_seed, guard};
use super::{
    bundle_forward, discriminator_objective, generator_objective, Confusion, EpochRecord, PrivacyError, PrivacyReport, Result, TaskMetrics, TrainBatch,
};
use crate::data::{batch_iter, SequenceDataset};
use crate::nn::{AdamW, AdamWConfig, Bind, Graph, Mat, Mlp, ModelBundle, ParamStore, Task};

/// Adversary retrained from scratch on frozen public embeddings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FreshAdversary {
    /// Hidden widths; the bundle's discriminator widths when `None`.
    pub hidden: Option<Vec<usize>>,
    pub optimizer: AdamWConfig,
    pub epochs: usize,
    pub batch: usize,
    pub seed: u64,
}

impl Default for FreshAdversary {
    fn default() -> Self {
        Self { hidden: None, optimizer: AdamWConfig::new(1e-3, 0.0), epochs: 60, batch: 64, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdversarialConfig {
    /// Weight of the privacy term; 0 trains for the task alone.
    pub alpha: f64,
    pub lr_g: f64,
    pub lr_d: f64,
    pub wd_g: f64,
    pub wd_d: f64,
    pub batch: usize,
    pub epochs: usize,
    /// Discriminator updates per generator update.
    pub d_steps: usize,
    pub seed: u64,
    /// Fresh adversary run after training; skipped when `None`.
    pub fresh: Option<FreshAdversary>,
}

impl Default for AdversarialConfig {
    fn default() -> Self {
        Self { alpha: 1.0, lr_g: 2e-4, lr_d: 7e-5, wd_g: 3e-7, wd_d: 8e-5, batch: 64, epochs: 20, d_steps: 1, seed: 0, fresh: Some(FreshAdversary::default()) }
    }
}

impl AdversarialConfig {
    fn validate(&self) -> Result<()> {
        if !self.alpha.is_finite() || self.alpha < 0.0 {
            return Err(PrivacyError::Config(format!("alpha must be finite and >= 0, got {}", self.alpha)));
        }
        if self.batch == 0 || self.epochs == 0 || self.d_steps == 0 {
            return Err(PrivacyError::Config("batch, epochs and d_steps must be positive".into()));
        }
        Ok(())
    }
}

struct Pass {
    outputs: Vec<f64>,
    targets: Vec<f64>,
    /// Per client, `records x h_pub`.
    e_pub: Vec<Mat>,
}

fn eval_pass(bundle: &ModelBundle, ds: &SequenceDataset, idx: &[usize], seed: u64) -> Result<Pass> {
    let n = bundle.spec.n_clients;
    let mut pass = Pass { outputs: Vec::new(), targets: Vec::new(), e_pub: Vec::new() };
    let mut chunks: Vec<Vec<Mat>> = vec![Vec::new(); n];
    for b in batch_iter(ds, idx, 64, n, seed)? {
        let tb = TrainBatch::new(bundle, &b.parts)?;
        let mut g = Graph::new();
        let (pubs, out) = bundle_forward(bundle, &bundle.store, &mut g, Bind::Frozen, &tb.inputs)?;
        pass.outputs.extend_from_slice(&g.value(out).data);
        pass.targets.extend(tb.targets.iter());
        for (c, v) in pubs.iter().enumerate() {
            chunks[c].push(g.value(*v).clone());
        }
    }
    pass.e_pub = chunks.iter().map(|c| Mat::vcat(&c.iter().collect::<Vec<_>>())).collect();
    Ok(pass)
}

/// Public embeddings of every record in `idx`, one matrix per client.
pub fn client_public_embeddings(bundle: &ModelBundle, ds: &SequenceDataset, idx: &[usize], seed: u64) -> Result<Vec<Mat>> {
    if !bundle.spec.variant.is_hybrid() {
        return Err(PrivacyError::Config(format!("{} has no public embeddings", bundle.spec.variant)));
    }
    Ok(eval_pass(bundle, ds, idx, seed)?.e_pub)
}

fn argmax(row: &[f64]) -> usize {
    row.iter().enumerate().fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best }).0
}

fn confusion_of(disc: &Mlp, store: &ParamStore, e_pub: &[Mat], standardize: Option<&(Vec<f64>, Vec<f64>)>) -> Confusion {
    let mut conf = Confusion::new(e_pub.len());
    for (c, e) in e_pub.iter().enumerate() {
        let x = match standardize {
            Some(st) => apply_standardize(e, st),
            None => e.clone(),
        };
        let z = disc.eval(store, &x);
        for r in 0..z.rows {
            conf.record(c, argmax(z.row(r)));
        }
    }
    conf
}

fn standardizer(rows: &Mat) -> (Vec<f64>, Vec<f64>) {
    let n = rows.rows.max(1) as f64;
    let mut mean = vec![0.0; rows.cols];
    let mut var = vec![0.0; rows.cols];
    for r in 0..rows.rows {
        rows.row(r).iter().enumerate().for_each(|(j, v)| mean[j] += v / n);
    }
    for r in 0..rows.rows {
        rows.row(r).iter().enumerate().for_each(|(j, v)| var[j] += (v - mean[j]).powi(2) / n);
    }
    (mean, var.into_iter().map(|v| if v > 1e-24 { v.sqrt() } else { 1.0 }).collect())
}

fn apply_standardize(e: &Mat, (mean, std): &(Vec<f64>, Vec<f64>)) -> Mat {
    let mut out = e.clone();
    for r in 0..out.rows {
        out.row_mut(r).iter_mut().enumerate().for_each(|(j, v)| *v = (*v - mean[j]) / std[j]);
    }
    out
}

/// Trains a new discriminator on `train[c]` (embeddings of client `c`),
/// with inputs standardised on the training rows, and scores it on `test`.
pub fn fresh_discriminator(hidden: &[usize], train: &[Mat], test: &[Mat], cfg: &FreshAdversary) -> Result<Confusion> {
    let n = train.len();
    if n < 2 || test.len() != n {
        return Err(PrivacyError::Config(format!("{n} training and {} test clients", test.len())));
    }
    let h = train[0].cols;
    let all = Mat::vcat(&train.iter().collect::<Vec<_>>());
    let st = standardizer(&all);
    let x = apply_standardize(&all, &st);
    let labels: Vec<usize> = train.iter().enumerate().flat_map(|(c, m)| std::iter::repeat_n(c, m.rows)).collect();
    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
    let mut widths = vec![h];
    widths.extend_from_slice(cfg.hidden.as_deref().unwrap_or(hidden));
    widths.push(n);
    let mut store = ParamStore::default();
    let disc = Mlp::new(&mut store, "fresh", &widths, &mut rng);
    let mut opt = AdamW::new(cfg.optimizer, &store, |_| true);
    let mut order: Vec<usize> = (0..x.rows).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for (bi, chunk) in order.chunks(cfg.batch.max(1)).enumerate() {
            let xb = Mat::from_vec(chunk.len(), h, chunk.iter().flat_map(|&r| x.row(r).iter().copied()).collect());
            let yb = Rc::new(chunk.iter().map(|&r| labels[r]).collect::<Vec<_>>());
            let grads = {
                let mut g = Graph::new();
                let v = g.constant(&xb);
                let z = disc.forward(&mut g, &store, Bind::All, v);
                let l = g.cross_entropy(z, yb)?;
                guard(g.scalar(l), epoch, bi, "fresh discriminator loss")?;
                g.backward(l)
            };
            opt.step(&mut store, &grads);
        }
    }
    Ok(confusion_of(&disc, &store, test, Some(&st)))
}

fn trivial(ds: &SequenceDataset) -> f64 {
    match ds.task {
        Task::Classification => ds.majority_baseline(&ds.test),
        Task::Regression => ds.mean_baseline_rmse(&ds.test),
    }
}

/// Frozen-model evaluation on the held-out split: in-training
/// discriminator, optional fresh adversary, task metrics.
pub fn evaluate_privacy(bundle: &ModelBundle, ds: &SequenceDataset, fresh: Option<&FreshAdversary>, seed: u64) -> Result<PrivacyReport> {
    let disc = bundle.discriminator.as_ref().ok_or_else(|| PrivacyError::Config(format!("{} has no discriminator", bundle.spec.variant)))?;
    let n = bundle.spec.n_clients;
    let test = eval_pass(bundle, ds, &ds.test, seed)?;
    let confusion = confusion_of(disc, &bundle.store, &test.e_pub, None);
    let fresh = match fresh {
        Some(cfg) => {
            let train = client_public_embeddings(bundle, ds, &ds.train, seed)?;
            Some(fresh_discriminator(&bundle.spec.disc_hidden, &train, &test.e_pub, cfg)?)
        }
        None => None,
    };
    Ok(PrivacyReport {
        n_clients: n,
        alpha: f64::NAN,
        baseline: 1.0 / n as f64,
        epochs: Vec::new(),
        confusion,
        fresh,
        task: TaskMetrics::compute(bundle.spec.task, &test.outputs, &test.targets),
        trivial: trivial(ds),
    })
}

/// Alternating discriminator and generator updates over `ds.train`,
/// scored on `ds.test` after every epoch.
pub fn adversarial_train(bundle: &mut ModelBundle, ds: &SequenceDataset, cfg: &AdversarialConfig) -> Result<PrivacyReport> {
    cfg.validate()?;
    if !bundle.spec.variant.is_hybrid() {
        return Err(PrivacyError::Config(format!("adversarial training needs an H variant, got {}", bundle.spec.variant)));
    }
    let n = bundle.spec.n_clients;
    let mut opt_d = AdamW::new(AdamWConfig::new(cfg.lr_d, cfg.wd_d), &bundle.store, |id| bundle.is_disc_param(id));
    let mut opt_g = AdamW::new(AdamWConfig::new(cfg.lr_g, cfg.wd_g), &bundle.store, |id| !bundle.is_disc_param(id));
    let mut epochs = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let (mut d_sum, mut t_sum, mut count) = (0.0, 0.0, 0usize);
        for (bi, b) in batch_iter(ds, &ds.train, cfg.batch, n, epoch_seed(cfg.seed, epoch))?.iter().enumerate() {
            let tb = TrainBatch::new(bundle, &b.parts)?;
            let mut last_d = 0.0;
            for _ in 0..cfg.d_steps {
                let (l, grads) = discriminator_objective(bundle, &bundle.store, &tb)?;
                guard(l, epoch, bi, "discriminator loss")?;
                opt_d.step(&mut bundle.store, &grads);
                last_d = l;
            }
            let (l, grads) = generator_objective(bundle, &bundle.store, &tb, cfg.alpha)?;
            guard(l.task, epoch, bi, "task loss")?;
            guard(l.total, epoch, bi, "generator loss")?;
            opt_g.step(&mut bundle.store, &grads);
            d_sum += last_d * tb.len() as f64;
            t_sum += l.task * tb.len() as f64;
            count += tb.len();
        }
        let r = evaluate_privacy(bundle, ds, None, cfg.seed)?;
        epochs.push(EpochRecord {
            epoch: epoch + 1,
            d_loss: d_sum / count.max(1) as f64,
            task_loss: t_sum / count.max(1) as f64,
            d_accuracy: r.confusion.accuracy(),
            per_class: r.confusion.per_class(),
            task: r.task,
        });
    }
    let mut report = evaluate_privacy(bundle, ds, cfg.fresh.as_ref(), cfg.seed)?;
    report.alpha = cfg.alpha;
    report.epochs = epochs;
    Ok(report)
}
