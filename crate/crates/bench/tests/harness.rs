use std::path::{Path, PathBuf};

use hvfl_bench::{
    emit_report, mean_ci95, party_sweep, read_csv, run_benchmark, stage_breakdown, student_t_975, write_csv, DatasetSource, EncoderDims, ExperimentConfig,
    Method, ReportRow, Summary, SweepRow,
};
use hvfl_core::data::FeatureSchema;
use hvfl_core::netsim::NetworkProfile;
use hvfl_core::nn::Variant;

fn repo() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn small(variant: Variant) -> ExperimentConfig {
    ExperimentConfig {
        method: if variant.is_hybrid() { Method::Pphh } else { Method::VflMpc },
        variant,
        batch_size: 8,
        batches: 2,
        repeats: 3,
        dataset: DatasetSource::SyntheticClassification { n_seqs: 40, seed: 3, min_len: 8, max_len: 20 },
        encoder: EncoderDims { d_model: 16, n_heads: 2, n_layers: 1, d_ff: 32 },
        ..ExperimentConfig::default()
    }
}

#[test]
fn t_quantiles_match_tables() {
    // Two-sided 95% Student t critical values.
    for (df, t) in [(1, 12.706), (2, 4.303), (4, 2.776), (8, 2.306), (30, 2.042)] {
        assert!((student_t_975(df) - t).abs() < 5e-4, "df {df}: {}", student_t_975(df));
    }
}

#[test]
fn interval_is_t_times_standard_error() {
    let xs = [2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0, 3.0];
    let (m, h) = mean_ci95(&xs);
    let mean = 43.0 / 9.0;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / 8.0;
    assert!((m - mean).abs() < 1e-12);
    assert!((h - 2.306 * (var / 9.0).sqrt()).abs() < 1e-3);
    assert_eq!(mean_ci95(&[1.5]), (1.5, 0.0));
}

#[test]
fn config_hash_tracks_every_field() {
    let a = ExperimentConfig::default();
    assert_eq!(a.hash(), ExperimentConfig::default().hash());
    let variants = [
        ExperimentConfig { n_clients: 4, ..a.clone() },
        ExperimentConfig { seeds: vec![1], ..a.clone() },
        ExperimentConfig { profile: NetworkProfile::lan(), ..a.clone() },
        ExperimentConfig { repeats: 8, ..a.clone() },
        ExperimentConfig { variant: Variant::H2, ..a.clone() },
    ];
    for v in &variants {
        assert_ne!(v.hash(), a.hash(), "{}", v.summary());
    }
}

#[test]
fn config_round_trips_through_toml() {
    let c = small(Variant::H3);
    assert_eq!(ExperimentConfig::from_toml(&c.to_toml()).unwrap(), c);
    assert!(ExperimentConfig::from_toml("bogus_field = 1").is_err());
}

#[test]
fn shipped_configs_parse() {
    for name in ["wan_h4", "fraud_csv", "e2e_tiny"] {
        ExperimentConfig::load(&repo().join(format!("configs/experiments/{name}.toml"))).unwrap();
    }
    for name in ["fraud", "rossmann"] {
        FeatureSchema::load(&repo().join(format!("configs/schemas/{name}.toml"))).unwrap();
    }
}

#[test]
fn validation_rejects_bad_combinations() {
    assert!(ExperimentConfig { repeats: 0, ..small(Variant::H1) }.validate().is_err());
    assert!(ExperimentConfig { method: Method::VflMpc, ..small(Variant::H1) }.validate().is_err());
    assert!(ExperimentConfig { method: Method::Pphh, ..small(Variant::P1) }.validate().is_err());
    assert!(ExperimentConfig { seeds: vec![], ..small(Variant::H1) }.validate().is_err());
}

#[test]
fn e2e_beyond_tiny_needs_the_opt_in() {
    let tiny = ExperimentConfig::e2e_tiny();
    tiny.validate().unwrap();
    let big = ExperimentConfig { encoder: EncoderDims::default(), ..tiny.clone() };
    let err = big.validate().unwrap_err().to_string();
    assert!(err.contains("--i-know-this-is-huge"), "{err}");
    ExperimentConfig { allow_huge: true, ..big }.validate().unwrap();
    assert!(ExperimentConfig { batch_size: 4, batches: 3, ..tiny }.validate().is_err());
}

#[test]
fn e2e_tiny_run_closes_its_books() {
    let cfg = ExperimentConfig { repeats: 1, batches: 1, ..ExperimentConfig::e2e_tiny() };
    let out = run_benchmark(&cfg).unwrap();
    assert!(out.passed(), "{:?}", out.checks);
    assert_eq!(out.row.method, "e2e");
    assert!(out.row.published.contains("did not finish") || out.row.published.contains("s/batch"));
}

#[test]
fn simulated_rows_are_deterministic_and_self_consistent() {
    let cfg = small(Variant::H2);
    let a = run_benchmark(&cfg).unwrap();
    let b = run_benchmark(&cfg).unwrap();
    assert_eq!(a, b);
    assert!(a.passed(), "{:?}", a.checks);
    assert_eq!(a.row.bytes_total as f64, a.row.bytes_per_batch * (cfg.batches * cfg.repeats) as f64);
    assert!((a.row.stage_pcts().iter().sum::<f64>() - 100.0).abs() <= 0.5);
    assert!(a.row.ci95_s >= 0.0);
}

#[test]
fn stage_breakdown_is_pphh_only() {
    let out = stage_breakdown(&small(Variant::H1)).unwrap();
    assert!(out.passed(), "{:?}", out.checks);
    assert!(stage_breakdown(&small(Variant::P1)).is_err());
}

#[test]
fn sweep_reports_relative_increase_from_the_first_count() {
    let (rows, outs, checks) = party_sweep(&ExperimentConfig { repeats: 1, batches: 1, ..small(Variant::H1) }, &[3, 4, 5]).unwrap();
    assert_eq!(rows.len(), 3);
    assert_eq!(outs.len(), 3);
    assert_eq!(rows[0].rel_increase_pct, 0.0);
    for r in &rows[1..] {
        assert!((r.rel_increase_pct - 100.0 * (r.mean_s / rows[0].mean_s - 1.0)).abs() < 1e-9);
    }
    assert!(checks.iter().all(|c| c.pass), "{checks:?}");
}

#[test]
fn csv_round_trips_rows() {
    let dir = tempfile::tempdir().unwrap();
    let row = run_benchmark(&ExperimentConfig { repeats: 2, batches: 1, ..small(Variant::P1) }).unwrap().row;
    let p = dir.path().join("rows.csv");
    write_csv(std::slice::from_ref(&row), &p).unwrap();
    assert_eq!(read_csv::<ReportRow>(&p).unwrap(), vec![row]);
    let sweep = SweepRow {
        method: "pphh".into(),
        variant: "H4".into(),
        profile: "WAN".into(),
        n_clients: 8,
        mean_s: 1.25,
        ci95_s: 0.0,
        rounds: 25,
        bytes_per_batch: 1e6,
        rel_increase_pct: 12.5,
    };
    let p = dir.path().join("sweep.csv");
    write_csv(std::slice::from_ref(&sweep), &p).unwrap();
    assert_eq!(read_csv::<SweepRow>(&p).unwrap(), vec![sweep]);
}

#[test]
fn identical_configs_emit_identical_reports() {
    let cfg = ExperimentConfig { repeats: 2, ..small(Variant::H4) };
    let emit = |dir: &Path| {
        let o = run_benchmark(&cfg).unwrap();
        let s = Summary::new(vec![cfg.clone()], vec![o.row], Vec::new(), o.checks);
        emit_report(dir, "r", &s).unwrap()
    };
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (pa, pb) = (emit(a.path()), emit(b.path()));
    assert_eq!(pa.len(), 3);
    for (x, y) in pa.iter().zip(&pb) {
        assert_eq!(std::fs::read(x).unwrap(), std::fs::read(y).unwrap(), "{}", x.display());
    }
    let json: Summary = serde_json::from_slice(&std::fs::read(a.path().join("r.json")).unwrap()).unwrap();
    assert!(json.all_checks_pass);
    assert_eq!(json.config_hashes, vec![cfg.hash()]);
}
