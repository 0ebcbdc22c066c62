use std::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::nn::Task;

/// `counts[true][predicted]` over client labels.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub counts: Vec<Vec<u64>>,
}

impl Confusion {
    pub fn new(n: usize) -> Self {
        Self { counts: vec![vec![0; n]; n] }
    }

    pub fn record(&mut self, truth: usize, predicted: usize) {
        self.counts[truth][predicted] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    /// Trace over total; 0 when empty.
    pub fn accuracy(&self) -> f64 {
        let t = self.total();
        if t == 0 {
            return 0.0;
        }
        (0..self.counts.len()).map(|i| self.counts[i][i]).sum::<u64>() as f64 / t as f64
    }

    pub fn per_class(&self) -> Vec<f64> {
        self.counts
            .iter()
            .enumerate()
            .map(|(i, row)| {
                let s: u64 = row.iter().sum();
                if s == 0 {
                    0.0
                } else {
                    row[i] as f64 / s as f64
                }
            })
            .collect()
    }

    fn grid(&self, out: &mut String) {
        for row in &self.counts {
            let cells: Vec<String> = row.iter().map(|c| c.to_string()).collect();
            let _ = writeln!(out, "{}", cells.join(" "));
        }
    }
}

/// Held-out task quality. Classification fills `accuracy` and `f1`
/// (positive class, logits thresholded at 0); regression fills `rmse`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskMetrics {
    pub loss: f64,
    pub accuracy: Option<f64>,
    pub f1: Option<f64>,
    pub rmse: Option<f64>,
}

impl TaskMetrics {
    pub fn compute(task: Task, outputs: &[f64], targets: &[f64]) -> Self {
        let n = outputs.len().max(1) as f64;
        match task {
            Task::Classification => {
                let (mut tp, mut fp, mut fneg, mut correct) = (0usize, 0usize, 0usize, 0usize);
                let mut loss = 0.0;
                for (&z, &y) in outputs.iter().zip(targets) {
                    let pos = z > 0.0;
                    let truth = y > 0.5;
                    correct += (pos == truth) as usize;
                    tp += (pos && truth) as usize;
                    fp += (pos && !truth) as usize;
                    fneg += (!pos && truth) as usize;
                    loss += z.max(0.0) + (-z.abs()).exp().ln_1p() - y * z;
                }
                let f1 = if tp == 0 { 0.0 } else { 2.0 * tp as f64 / (2 * tp + fp + fneg) as f64 };
                Self { loss: loss / n, accuracy: Some(correct as f64 / n), f1: Some(f1), rmse: None }
            }
            Task::Regression => {
                let mse = outputs.iter().zip(targets).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n;
                Self { loss: mse, accuracy: None, f1: None, rmse: Some(mse.sqrt()) }
            }
        }
    }

    /// F1 for classification, RMSE for regression.
    pub fn headline(&self) -> f64 {
        self.f1.or(self.rmse).unwrap_or(f64::NAN)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean training losses over the epoch's batches.
    pub d_loss: f64,
    pub task_loss: f64,
    /// In-training discriminator on held-out public embeddings.
    pub d_accuracy: f64,
    pub per_class: Vec<f64>,
    pub task: TaskMetrics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrivacyReport {
    pub n_clients: usize,
    pub alpha: f64,
    /// Chance accuracy `1/n`.
    pub baseline: f64,
    pub epochs: Vec<EpochRecord>,
    /// In-training discriminator on held-out embeddings after training.
    pub confusion: Confusion,
    /// Adversary retrained on frozen training embeddings, scored held out.
    pub fresh: Option<Confusion>,
    pub task: TaskMetrics,
    /// Majority-class accuracy or mean-predictor RMSE on the held-out set.
    pub trivial: f64,
}

impl PrivacyReport {
    pub fn d_accuracy(&self) -> f64 {
        self.confusion.accuracy()
    }

    pub fn fresh_accuracy(&self) -> Option<f64> {
        self.fresh.as_ref().map(Confusion::accuracy)
    }

    /// Columnar epoch table followed by the confusion grids.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# alpha {} clients {} baseline {:.6}", self.alpha, self.n_clients, self.baseline);
        let mut head = vec!["epoch".to_string(), "d_loss".into(), "task_loss".into(), "d_acc".into()];
        head.extend((0..self.n_clients).map(|c| format!("acc_c{c}")));
        head.push("task_metric".into());
        let _ = writeln!(s, "{}", head.join(" "));
        for e in &self.epochs {
            let mut row = vec![e.epoch.to_string(), format!("{:.6}", e.d_loss), format!("{:.6}", e.task_loss), format!("{:.6}", e.d_accuracy)];
            row.extend(e.per_class.iter().map(|a| format!("{a:.6}")));
            row.push(format!("{:.6}", e.task.headline()));
            let _ = writeln!(s, "{}", row.join(" "));
        }
        let _ = writeln!(s, "# confusion in-training accuracy {:.6}", self.confusion.accuracy());
        self.confusion.grid(&mut s);
        if let Some(f) = &self.fresh {
            let _ = writeln!(s, "# confusion fresh accuracy {:.6}", f.accuracy());
            f.grid(&mut s);
        }
        let _ = writeln!(s, "# task metric {:.6} trivial {:.6}", self.task.headline(), self.trivial);
        if let Some(a) = self.task.accuracy {
            let _ = writeln!(s, "# task accuracy {a:.6}");
        }
        s
    }
}
