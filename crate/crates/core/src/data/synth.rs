use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};

use super::{split_indices, Record, SequenceDataset, TimeStep};
use crate::nn::Task;

pub const SYNTH_FEATURES: usize = 4;
pub const BURST_LEN: usize = 3;
/// Mean shift of every feature inside a positive record's burst, in units
/// of the stationary standard deviation.
pub const BURST_SHIFT: f64 = 5.0;
const AR_PHI: f64 = 0.5;
const MIN_LEN: usize = 24;
const MAX_LEN: usize = 96;
const POSITIVE_RATE: f64 = 0.3;
const TEST_FRACTION: f64 = 0.2;

fn timestamps(rng: &mut ChaCha12Rng, len: usize) -> Vec<f64> {
    let mut t = rng.random_range(0..1000u64) as f64;
    (0..len)
        .map(|_| {
            t += rng.random_range(1..=60u64) as f64;
            t
        })
        .collect()
}

/// Binary sequence task: stationary AR(1) features; positives carry a
/// `BURST_LEN`-step burst shifted by `BURST_SHIFT` at a uniform position.
/// Exactly `round(0.3 n)` records are positive.
///
/// Clients are assigned later by uniform partitioning, so burst ownership is
/// uniform over clients; `n_clients` only bounds the minimum length.
pub fn synth_classification(n_seqs: usize, n_clients: usize, seed: u64) -> SequenceDataset {
    synth_classification_with(n_seqs, n_clients, seed, ClassificationSynth::default())
}

/// Record lengths of the classification generator.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ClassificationSynth {
    pub min_len: usize,
    pub max_len: usize,
}

impl Default for ClassificationSynth {
    fn default() -> Self {
        Self { min_len: MIN_LEN, max_len: MAX_LEN }
    }
}

pub fn synth_classification_with(n_seqs: usize, n_clients: usize, seed: u64, cfg: ClassificationSynth) -> SequenceDataset {
    assert!(cfg.min_len >= BURST_LEN && cfg.min_len <= cfg.max_len, "invalid length range {}..={}", cfg.min_len, cfg.max_len);
    assert!(n_clients <= cfg.min_len, "records of {} steps cannot cover {n_clients} clients", cfg.min_len);
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let innov = Normal::new(0.0, (1.0 - AR_PHI * AR_PHI).sqrt()).expect("std");
    let mut labels: Vec<bool> = (0..n_seqs).map(|i| i < (n_seqs as f64 * POSITIVE_RATE).round() as usize).collect();
    labels.shuffle(&mut rng);
    let records = labels
        .iter()
        .enumerate()
        .map(|(i, &pos)| {
            let len = rng.random_range(cfg.min_len..=cfg.max_len);
            let keys = timestamps(&mut rng, len);
            let mut state: Vec<f64> = (0..SYNTH_FEATURES).map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal)).collect();
            let mut steps: Vec<TimeStep> = keys
                .into_iter()
                .map(|order_key| {
                    for s in state.iter_mut() {
                        *s = AR_PHI * *s + innov.sample(&mut rng);
                    }
                    TimeStep { order_key, features: state.clone() }
                })
                .collect();
            if pos {
                let start = rng.random_range(0..=len - BURST_LEN);
                for st in &mut steps[start..start + BURST_LEN] {
                    st.features.iter_mut().for_each(|v| *v += BURST_SHIFT);
                }
            }
            Record { seq_id: format!("c{i:05}"), steps, label: pos as u8 as f64 }
        })
        .collect();
    let (train, test) = split_indices(n_seqs, TEST_FRACTION, &mut rng);
    let mut metadata = BTreeMap::new();
    metadata.insert("n_clients".into(), n_clients as f64);
    metadata.insert("positive_rate".into(), POSITIVE_RATE);
    SequenceDataset { task: Task::Classification, feature_dim: SYNTH_FEATURES, max_len: cfg.max_len, records, train, test, metadata }
}

/// Largest mean over `BURST_LEN` consecutive steps of the feature average.
pub fn oracle_burst_score(r: &Record) -> f64 {
    let m: Vec<f64> = r.steps.iter().map(|s| s.features.iter().sum::<f64>() / s.features.len() as f64).collect();
    m.windows(BURST_LEN).map(|w| w.iter().sum::<f64>() / BURST_LEN as f64).fold(f64::NEG_INFINITY, f64::max)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RegressionSynth {
    pub noise: f64,
    pub slope_std: f64,
    pub season_std: f64,
}

impl Default for RegressionSynth {
    fn default() -> Self {
        Self { noise: 0.1, slope_std: 0.02, season_std: 0.5 }
    }
}

pub fn synth_regression(n_seqs: usize, seed: u64) -> SequenceDataset {
    synth_regression_with(n_seqs, seed, RegressionSynth::default())
}

/// Daily series `level + slope t + season[t mod 7] + noise`; the target is the
/// value of the day after the last observed one. Features per day are the
/// value and the weekday phase as `(sin, cos)`.
///
/// Metadata `rmse_floor` is the realised RMSE of the Bayes predictor (the
/// noiseless final value), which estimates `noise`.
pub fn synth_regression_with(n_seqs: usize, seed: u64, cfg: RegressionSynth) -> SequenceDataset {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let std = |s: f64| Normal::new(0.0, s).expect("std");
    let (level_d, slope_d, season_d) = (std(1.0), std(cfg.slope_std), std(cfg.season_std));
    let noise_d = std(cfg.noise.max(f64::MIN_POSITIVE));
    let mut sq_err = 0.0;
    let records = (0..n_seqs)
        .map(|i| {
            let len = rng.random_range(MIN_LEN..=MAX_LEN);
            let level = level_d.sample(&mut rng);
            let slope = slope_d.sample(&mut rng);
            let mut season: Vec<f64> = (0..7).map(|_| season_d.sample(&mut rng)).collect();
            let mean = season.iter().sum::<f64>() / 7.0;
            season.iter_mut().for_each(|s| *s -= mean);
            let start = rng.random_range(0..7usize);
            let clean = |t: usize| level + slope * t as f64 + season[(start + t) % 7];
            let mut eps = || if cfg.noise > 0.0 { noise_d.sample(&mut rng) } else { 0.0 };
            let steps = (0..len)
                .map(|t| {
                    let ph = 2.0 * std::f64::consts::PI * ((start + t) % 7) as f64 / 7.0;
                    TimeStep { order_key: (start + t) as f64, features: vec![clean(t) + eps(), ph.sin(), ph.cos()] }
                })
                .collect();
            let e = eps();
            sq_err += e * e;
            Record { seq_id: format!("s{i:05}"), steps, label: clean(len) + e }
        })
        .collect();
    let (train, test) = split_indices(n_seqs, TEST_FRACTION, &mut rng);
    let mut metadata = BTreeMap::new();
    metadata.insert("noise_sigma".into(), cfg.noise);
    metadata.insert("rmse_floor".into(), (sq_err / n_seqs.max(1) as f64).sqrt());
    SequenceDataset { task: Task::Regression, feature_dim: 3, max_len: MAX_LEN, records, train, test, metadata }
}
