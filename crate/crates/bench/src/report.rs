use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use hvfl_core::mpc::stage;

use crate::config::ExperimentConfig;
use crate::{BenchError, Result};

/// One (method, variant, profile) measurement. Times are seconds per
/// batch: simulated model time or wall clock, per `clock`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub config_hash: String,
    pub summary: String,
    pub method: String,
    pub variant: String,
    pub profile: String,
    pub clock: String,
    pub n_clients: usize,
    pub batch_size: usize,
    pub batches: usize,
    pub repeats: usize,
    pub mean_s: f64,
    pub ci95_s: f64,
    /// Rounds of one batch; identical for every timed batch.
    pub rounds: u64,
    /// Bytes summed over every timed batch, and their per-batch mean.
    pub bytes_total: u64,
    pub bytes_per_batch: f64,
    pub pct_reconstruct_input: f64,
    pub pct_local_transformer_forward: f64,
    pub pct_communication_share_handling: f64,
    pub pct_public_head_forward: f64,
    pub pct_private_head_forward: f64,
    pub pct_fusion_head_forward: f64,
    pub pct_output_reveal: f64,
    pub pct_mpc: f64,
    pub published: String,
}

impl ReportRow {
    /// Stage percentages in [`stage::ALL`] order.
    pub fn stage_pcts(&self) -> [f64; 7] {
        [
            self.pct_reconstruct_input,
            self.pct_local_transformer_forward,
            self.pct_communication_share_handling,
            self.pct_public_head_forward,
            self.pct_private_head_forward,
            self.pct_fusion_head_forward,
            self.pct_output_reveal,
        ]
    }

    pub(crate) fn set_stage_pcts(&mut self, p: [f64; 7]) {
        [
            self.pct_reconstruct_input,
            self.pct_local_transformer_forward,
            self.pct_communication_share_handling,
            self.pct_public_head_forward,
            self.pct_private_head_forward,
            self.pct_fusion_head_forward,
            self.pct_output_reveal,
        ] = p;
    }
}

/// One client count of a party sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub method: String,
    pub variant: String,
    pub profile: String,
    pub n_clients: usize,
    pub mean_s: f64,
    pub ci95_s: f64,
    pub rounds: u64,
    pub bytes_per_batch: f64,
    /// Percent change of `mean_s` from the sweep's first client count.
    pub rel_increase_pct: f64,
}

/// A named invariant evaluated during a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: impl Into<String>, pass: bool, detail: impl Into<String>) -> Self {
        Self { name: name.into(), pass, detail: detail.into() }
    }
}

/// Machine-readable companion of the CSV and text tables.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub config_hashes: Vec<String>,
    pub configs: Vec<ExperimentConfig>,
    pub rows: Vec<ReportRow>,
    pub sweep: Vec<SweepRow>,
    pub checks: Vec<Check>,
    pub all_checks_pass: bool,
}

impl Summary {
    pub fn new(configs: Vec<ExperimentConfig>, rows: Vec<ReportRow>, sweep: Vec<SweepRow>, checks: Vec<Check>) -> Self {
        let all_checks_pass = checks.iter().all(|c| c.pass);
        Self { config_hashes: configs.iter().map(ExperimentConfig::hash).collect(), configs, rows, sweep, checks, all_checks_pass }
    }
}

pub fn write_csv<T: Serialize>(rows: &[T], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| BenchError::io(path, e))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| BenchError::io(path, e))?;
    Ok(())
}

pub fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| BenchError::io(path, e))?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

fn aligned(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut width: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for r in rows {
        for (w, c) in width.iter_mut().zip(r) {
            *w = (*w).max(c.len());
        }
    }
    let line = |cells: &mut dyn Iterator<Item = &str>| -> String {
        let s: Vec<String> = cells.zip(&width).map(|(c, w)| format!("{c:<w$}")).collect();
        s.join("  ").trim_end().to_string() + "\n"
    };
    let mut out = line(&mut header.iter().copied());
    out += &line(&mut width.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().iter().map(String::as_str));
    for r in rows {
        out += &line(&mut r.iter().map(String::as_str));
    }
    out
}

/// Runtime and communication table, one line per row.
pub fn text_table(rows: &[ReportRow]) -> String {
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.method.clone(),
                r.variant.clone(),
                r.profile.clone(),
                r.n_clients.to_string(),
                format!("{:.4} +- {:.4}", r.mean_s, r.ci95_s),
                r.rounds.to_string(),
                format!("{:.3}", r.bytes_per_batch / 1e6),
                format!("{:.1}", r.pct_mpc),
                r.published.clone(),
            ]
        })
        .collect();
    aligned(&["method", "variant", "profile", "clients", "s/batch (95% CI)", "rounds", "MB/batch", "mpc %", "reference"], &body)
}

/// Per-stage percentages, one column per row.
pub fn stage_table(rows: &[ReportRow]) -> String {
    let mut header = vec!["stage".to_string()];
    header.extend(rows.iter().map(|r| format!("{} {}", r.variant, r.profile)));
    let mut body: Vec<Vec<String>> = Vec::new();
    let mut total = vec!["total_mpc".to_string()];
    total.extend(rows.iter().map(|r| format!("{:.1}", r.pct_mpc)));
    body.push(total);
    for (i, label) in stage::ALL.iter().enumerate() {
        let mut line = vec![label.to_string()];
        line.extend(rows.iter().map(|r| format!("{:.1}", r.stage_pcts()[i])));
        body.push(line);
    }
    aligned(&header.iter().map(String::as_str).collect::<Vec<_>>(), &body)
}

pub fn sweep_table(rows: &[SweepRow]) -> String {
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.method.clone(),
                r.variant.clone(),
                r.profile.clone(),
                r.n_clients.to_string(),
                format!("{:.4} +- {:.4}", r.mean_s, r.ci95_s),
                r.rounds.to_string(),
                format!("{:.3}", r.bytes_per_batch / 1e6),
                format!("{:.2}", r.rel_increase_pct),
            ]
        })
        .collect();
    aligned(&["method", "variant", "profile", "clients", "s/batch (95% CI)", "rounds", "MB/batch", "increase %"], &body)
}

/// Writes `<stem>.csv`, `<stem>.txt` and `<stem>.json` under `dir` and
/// returns their paths. Sweep rows, when present, go to `<stem>_sweep.csv`.
pub fn emit_report(dir: &Path, stem: &str, summary: &Summary) -> Result<Vec<PathBuf>> {
    if summary.rows.is_empty() && summary.sweep.is_empty() {
        return Err(BenchError::Config("no rows to report".into()));
    }
    fs::create_dir_all(dir).map_err(|e| BenchError::io(dir, e))?;
    let mut paths = Vec::new();
    let mut text = String::new();
    for (h, c) in summary.config_hashes.iter().zip(&summary.configs) {
        text += &format!("# config {h} {}\n", c.summary());
    }
    if !summary.rows.is_empty() {
        let p = dir.join(format!("{stem}.csv"));
        write_csv(&summary.rows, &p)?;
        paths.push(p);
        text += &text_table(&summary.rows);
        if summary.rows.iter().any(|r| r.method == "pphh") {
            text += "\n";
            text += &stage_table(&summary.rows);
        }
    }
    if !summary.sweep.is_empty() {
        let p = dir.join(format!("{stem}_sweep.csv"));
        write_csv(&summary.sweep, &p)?;
        paths.push(p);
        text += "\n";
        text += &sweep_table(&summary.sweep);
    }
    text += "\n";
    for c in &summary.checks {
        text += &format!("{} {} {}\n", if c.pass { "ok  " } else { "FAIL" }, c.name, c.detail);
    }
    let p = dir.join(format!("{stem}.txt"));
    fs::write(&p, text).map_err(|e| BenchError::io(&p, e))?;
    paths.push(p);
    let p = dir.join(format!("{stem}.json"));
    fs::write(&p, serde_json::to_string_pretty(summary)?).map_err(|e| BenchError::io(&p, e))?;
    paths.push(p);
    Ok(paths)
}
