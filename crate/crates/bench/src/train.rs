use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use hvfl_core::data::SequenceDataset;
use hvfl_core::nn::{checkpoint, CentralModel, ModelBundle, Task};
use hvfl_core::privacy::{
    adversarial_train, evaluate_privacy, train_central, train_supervised, AdversarialConfig, FreshAdversary, PrivacyReport, SupervisedConfig, TaskMetrics,
    TrainReport,
};

use crate::config::{ExperimentConfig, Method};
use crate::run::{build_bundle, build_central};
use crate::{BenchError, Result};

/// Overrides on top of each method's training defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    /// Privacy weight for `pphh`; 0 gives the leakage-control model.
    pub alpha: f64,
    pub epochs: Option<usize>,
    pub d_steps: usize,
    /// Retrain a fresh adversary after `pphh` training.
    pub fresh: bool,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self { alpha: AdversarialConfig::default().alpha, epochs: None, d_steps: 1, fresh: true }
    }
}

/// One trained seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub seed: u64,
    pub checkpoint: PathBuf,
    /// SHA-256 of the checkpoint bytes.
    pub checkpoint_digest: String,
    pub task: TaskMetrics,
    /// Majority-class accuracy or mean-predictor RMSE on the held-out split.
    pub trivial: f64,
    pub privacy: Option<PrivacyReport>,
}

fn trivial(ds: &SequenceDataset) -> f64 {
    match ds.task {
        Task::Classification => ds.majority_baseline(&ds.test),
        Task::Regression => ds.mean_baseline_rmse(&ds.test),
    }
}

fn train_text(rep: &TrainReport) -> String {
    let mut s = String::from("epoch train_loss test_loss task_metric\n");
    for e in &rep.epochs {
        let _ = writeln!(s, "{} {:.6} {:.6} {:.6}", e.epoch, e.train_loss, e.test.loss, e.test.headline());
    }
    s
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| BenchError::io(path, e))
}

/// Trains one model per configured seed with the method's defaults
/// (centralised: Adam + L2; VFL+MPC: AdamW; PPHH: adversarial), saving
/// `<stem>_seed<s>.ckpt` and its report under `dir`.
pub fn train_cli(cfg: &ExperimentConfig, opts: &TrainOptions, dir: &Path, stem: &str) -> Result<Vec<TrainOutcome>> {
    cfg.validate()?;
    fs::create_dir_all(dir).map_err(|e| BenchError::io(dir, e))?;
    let ds = cfg.dataset.load(cfg.n_clients)?;
    let mut out = Vec::with_capacity(cfg.seeds.len());
    for &seed in &cfg.seeds {
        let seeded = ExperimentConfig { seeds: vec![seed], checkpoint: None, ..cfg.clone() };
        let ckpt = dir.join(format!("{stem}_seed{seed}.ckpt"));
        let (task, privacy, text, digest) = match cfg.method {
            Method::E2e => {
                let mut m: CentralModel = build_central(&seeded, &ds)?;
                let mut sc = SupervisedConfig { seed, ..SupervisedConfig::central_default() };
                sc.epochs = opts.epochs.unwrap_or(sc.epochs);
                let rep = train_central(&mut m, &ds, &sc)?;
                checkpoint::save(&m, &ckpt)?;
                (rep.last().expect("epochs >= 1").test, None, train_text(&rep), checkpoint::digest(&m)?)
            }
            Method::VflMpc => {
                let mut b: ModelBundle = build_bundle(&seeded, &ds)?;
                let mut sc = SupervisedConfig { seed, ..SupervisedConfig::vfl_default() };
                sc.epochs = opts.epochs.unwrap_or(sc.epochs);
                let rep = train_supervised(&mut b, &ds, &sc)?;
                checkpoint::save(&b, &ckpt)?;
                (rep.last().expect("epochs >= 1").test, None, train_text(&rep), checkpoint::digest(&b)?)
            }
            Method::Pphh => {
                let mut b: ModelBundle = build_bundle(&seeded, &ds)?;
                let d = AdversarialConfig::default();
                let ac = AdversarialConfig {
                    alpha: opts.alpha,
                    epochs: opts.epochs.unwrap_or(d.epochs),
                    d_steps: opts.d_steps,
                    seed,
                    fresh: opts.fresh.then(|| FreshAdversary { seed, ..FreshAdversary::default() }),
                    ..d
                };
                let rep = adversarial_train(&mut b, &ds, &ac)?;
                checkpoint::save(&b, &ckpt)?;
                let text = rep.to_text();
                (rep.task, Some(rep), text, checkpoint::digest(&b)?)
            }
        };
        write(&dir.join(format!("{stem}_seed{seed}.txt")), &text)?;
        out.push(TrainOutcome { seed, checkpoint: ckpt, checkpoint_digest: digest, task, trivial: trivial(&ds), privacy });
    }
    write(&dir.join(format!("{stem}.json")), &serde_json::to_string_pretty(&out)?)?;
    Ok(out)
}

/// Held-out privacy audit of the checkpoint named by `cfg.checkpoint`.
pub fn privacy_eval(cfg: &ExperimentConfig, fresh: Option<&FreshAdversary>) -> Result<PrivacyReport> {
    cfg.validate()?;
    if cfg.checkpoint.is_none() {
        return Err(BenchError::Config("privacy-eval needs a checkpoint".into()));
    }
    let ds = cfg.dataset.load(cfg.n_clients)?;
    let bundle = build_bundle(cfg, &ds)?;
    Ok(evaluate_privacy(&bundle, &ds, fresh, cfg.seeds[0])?)
}
