use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use hvfl_core::data::{batch_iter, SequenceDataset};
use hvfl_core::mpc::{stage, SessionConfig, Transcript};
use hvfl_core::nn::{checkpoint, ArchitectureSpec, CentralModel, ModelBundle};
use hvfl_core::vfl::{
    e2e_bytes, e2e_rounds, pphh_bytes, pphh_rounds, run_e2e_mpc, run_pphh, run_vfl_mpc, vfl_mpc_bytes, vfl_mpc_rounds, PartitionedSequence, PipelineConfig,
    PipelineResult,
};

use crate::config::{ExperimentConfig, Method};
use crate::published::published_note;
use crate::report::{Check, ReportRow, SweepRow};
use crate::stats::mean_ci95;
use crate::{BenchError, Result};

/// A report row and the invariants checked while producing it.
#[derive(Clone, Debug, PartialEq)]
pub struct BenchOutcome {
    pub row: ReportRow,
    pub checks: Vec<Check>,
}

impl BenchOutcome {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

enum Model {
    Split(ModelBundle),
    Central(CentralModel),
}

fn mix(seed: u64, a: usize, b: usize) -> u64 {
    seed ^ (a as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ (b as u64 + 1).wrapping_mul(0xc2b2_ae3d_27d4_eb4f)
}

/// The split model for `cfg`: its checkpoint when set, else a seeded
/// initialisation. A checkpoint must match the configured architecture.
pub fn build_bundle(cfg: &ExperimentConfig, ds: &SequenceDataset) -> Result<ModelBundle> {
    let spec = cfg.architecture(ds);
    match &cfg.checkpoint {
        Some(p) => {
            let b: ModelBundle = checkpoint::load(p)?;
            let (got, want) = (&b.spec, &spec);
            if (got.variant, got.n_clients, got.task, got.encoder.d_in) != (want.variant, want.n_clients, want.task, want.encoder.d_in) {
                return Err(BenchError::Config(format!(
                    "checkpoint {} holds {} for {} clients ({:?}, d_in {}), config wants {} for {} clients ({:?}, d_in {})",
                    p.display(),
                    got.variant,
                    got.n_clients,
                    got.task,
                    got.encoder.d_in,
                    want.variant,
                    want.n_clients,
                    want.task,
                    want.encoder.d_in
                )));
            }
            Ok(b)
        }
        None => Ok(ModelBundle::new(&spec, &mut ChaCha12Rng::seed_from_u64(cfg.seeds[0]))?),
    }
}

/// The centralised model for `e2e`, sized like the P1 head.
pub(crate) fn build_central(cfg: &ExperimentConfig, ds: &SequenceDataset) -> Result<CentralModel> {
    let spec = cfg.architecture(ds);
    match &cfg.checkpoint {
        Some(p) => Ok(checkpoint::load(p)?),
        None => Ok(CentralModel::new(&spec.encoder, spec.h_priv, spec.a_priv, ds.task, &mut ChaCha12Rng::seed_from_u64(cfg.seeds[0]))),
    }
}

fn build_model(cfg: &ExperimentConfig, ds: &SequenceDataset) -> Result<Model> {
    Ok(match cfg.method {
        Method::E2e => Model::Central(build_central(cfg, ds)?),
        _ => Model::Split(build_bundle(cfg, ds)?),
    })
}

/// `count` full batches of held-out records, drawn from seeded passes.
fn sample_batches(cfg: &ExperimentConfig, ds: &SequenceDataset, repeat: usize, count: usize) -> Result<Vec<Vec<PartitionedSequence>>> {
    if ds.test.len() < cfg.batch_size {
        return Err(BenchError::Config(format!("test split has {} records, batch_size is {}", ds.test.len(), cfg.batch_size)));
    }
    let mut out = Vec::with_capacity(count);
    let mut pass = 0;
    while out.len() < count {
        for b in batch_iter(ds, &ds.test, cfg.batch_size, cfg.n_clients, mix(cfg.seeds[0], repeat, pass))? {
            if b.len() == cfg.batch_size && out.len() < count {
                out.push(b.parts);
            }
        }
        pass += 1;
    }
    Ok(out)
}

pub(crate) fn pipeline_config(cfg: &ExperimentConfig) -> PipelineConfig {
    let seed = cfg.seeds[0];
    PipelineConfig {
        profile: cfg.profile.clone(),
        mode: cfg.clock,
        session: SessionConfig { seed, ..SessionConfig::default() },
        dealer_seed: 0x5eed ^ seed as u128,
    }
}

fn execute(model: &Model, batch: &[PartitionedSequence], pcfg: &PipelineConfig, method: Method) -> Result<PipelineResult> {
    Ok(match (model, method) {
        (Model::Central(m), _) => run_e2e_mpc(batch, m, pcfg, batch.len())?,
        (Model::Split(b), Method::VflMpc) => run_vfl_mpc(batch, b, pcfg)?,
        (Model::Split(b), _) => run_pphh(batch, b, pcfg)?,
    })
}

/// Rounds and bytes the cost model predicts for `batch`.
fn expected_cost(model: &Model, spec: &ArchitectureSpec, batch: &[PartitionedSequence], method: Method, n: usize) -> (u64, u64) {
    match (model, method) {
        (Model::Central(m), _) => {
            let rounds = batch.len() as u64 * e2e_rounds(&m.encoder.cfg);
            let emb = m.encoder.out_width(&m.store);
            let hidden = m.head.widths(&m.store)[1];
            (rounds, batch.iter().map(|s| e2e_bytes(&m.encoder.cfg, emb, hidden, s.total_len, n)).sum())
        }
        (Model::Split(_), Method::VflMpc) => (vfl_mpc_rounds(spec), vfl_mpc_bytes(spec, batch.len())),
        (Model::Split(_), _) => (pphh_rounds(spec), pphh_bytes(spec, batch.len())),
    }
}

fn stage_bytes(t: &Transcript) -> u64 {
    t.stages.values().map(|s| s.bytes).sum()
}

/// Times `repeats x batches` held-out batches and aggregates them into one
/// row. Real-clock runs execute one untimed warm-up batch first; simulated
/// time does not depend on history, so there it is skipped.
pub fn run_benchmark(cfg: &ExperimentConfig) -> Result<BenchOutcome> {
    cfg.validate()?;
    let ds = cfg.dataset.load(cfg.n_clients)?;
    let model = build_model(cfg, &ds)?;
    let spec = match &model {
        Model::Split(b) => b.spec.clone(),
        Model::Central(_) => cfg.architecture(&ds),
    };
    let pcfg = pipeline_config(cfg);
    let real = cfg.clock == hvfl_core::netsim::ClockMode::Real;

    let mut samples = Vec::with_capacity(cfg.repeats);
    let mut acc = Transcript::default();
    let (mut bytes_total, mut timed) = (0u64, 0usize);
    let mut rounds_seen: Vec<u64> = Vec::new();
    let (mut formula_ok, mut closure_ok, mut labels_known) = (true, true, true);
    let mut first_miss = String::new();
    for r in 0..cfg.repeats {
        let warm = usize::from(real && r == 0);
        let batches = sample_batches(cfg, &ds, r, cfg.batches + warm)?;
        if warm == 1 {
            execute(&model, &batches[0], &pcfg, cfg.method)?;
        }
        let mut times = Vec::with_capacity(cfg.batches);
        for b in &batches[warm..] {
            let res = execute(&model, b, &pcfg, cfg.method)?;
            let t = &res.transcript;
            times.push(t.total_time());
            for (label, s) in &t.stages {
                acc.add_stage(label, *s);
            }
            let (want_rounds, want_bytes) = expected_cost(&model, &spec, b, cfg.method, cfg.n_clients);
            if (t.rounds, t.total_bytes()) != (want_rounds, want_bytes) && formula_ok {
                formula_ok = false;
                first_miss = format!("measured {} rounds / {} bytes, formula {want_rounds} / {want_bytes}", t.rounds, t.total_bytes());
            }
            closure_ok &= stage_bytes(t) == t.total_bytes();
            labels_known &= t.stages.keys().all(|k| stage::ALL.contains(&k.as_str()));
            bytes_total += t.total_bytes();
            timed += 1;
            rounds_seen.push(t.rounds);
        }
        samples.push(times.iter().sum::<f64>() / times.len() as f64);
    }
    let (mean_s, ci95_s) = mean_ci95(&samples);
    let pcts: Vec<f64> = acc.stage_percentages().into_iter().map(|(_, p)| p).collect();
    let pct_sum: f64 = pcts.iter().sum();
    let rounds = rounds_seen[0];
    let mut row = ReportRow {
        config_hash: cfg.hash(),
        summary: cfg.summary(),
        method: cfg.method.to_string(),
        variant: if cfg.method == Method::E2e { "central".into() } else { cfg.variant.to_string() },
        profile: cfg.profile.name.clone(),
        clock: format!("{:?}", cfg.clock).to_lowercase(),
        n_clients: cfg.n_clients,
        batch_size: cfg.batch_size,
        batches: cfg.batches,
        repeats: cfg.repeats,
        mean_s,
        ci95_s,
        rounds,
        bytes_total,
        bytes_per_batch: bytes_total as f64 / timed as f64,
        pct_reconstruct_input: 0.0,
        pct_local_transformer_forward: 0.0,
        pct_communication_share_handling: 0.0,
        pct_public_head_forward: 0.0,
        pct_private_head_forward: 0.0,
        pct_fusion_head_forward: 0.0,
        pct_output_reveal: 0.0,
        pct_mpc: acc.mpc_share(),
        published: published_note(cfg.method, cfg.variant, &cfg.profile.name),
    };
    row.set_stage_pcts(pcts.clone().try_into().expect("seven stages"));
    let tag = format!("{} {} {}", row.method, row.variant, row.profile);
    let checks = vec![
        Check::new(
            format!("{tag}: rounds and bytes equal the cost formulas"),
            formula_ok,
            if formula_ok { format!("{timed} batches exact") } else { first_miss },
        ),
        Check::new(format!("{tag}: rounds identical across batches"), rounds_seen.iter().all(|&k| k == rounds), format!("{rounds} rounds")),
        Check::new(format!("{tag}: stage bytes sum to total bytes"), closure_ok, format!("{bytes_total} bytes")),
        Check::new(format!("{tag}: every stage label is a reporting stage"), labels_known, stage::ALL.join(",")),
        Check::new(format!("{tag}: stage percentages sum to 100 +- 0.5"), (pct_sum - 100.0).abs() <= 0.5, format!("sum {pct_sum:.6}")),
    ];
    Ok(BenchOutcome { row, checks })
}

/// Per-stage breakdown of a PPHH configuration.
pub fn stage_breakdown(cfg: &ExperimentConfig) -> Result<BenchOutcome> {
    if cfg.method != Method::Pphh {
        return Err(BenchError::Config(format!("stage breakdown needs method pphh, got {}", cfg.method)));
    }
    let mut out = run_benchmark(cfg)?;
    let pcts = out.row.stage_pcts();
    out.checks.push(Check::new(
        format!("{} {}: all seven stages recorded time", out.row.variant, out.row.profile),
        pcts.iter().all(|&p| p > 0.0),
        format!("{pcts:.2?}"),
    ));
    Ok(out)
}

/// One benchmark per client count; increases are relative to the first.
pub fn party_sweep(cfg: &ExperimentConfig, n_range: &[usize]) -> Result<(Vec<SweepRow>, Vec<BenchOutcome>, Vec<Check>)> {
    if !matches!(cfg.method, Method::VflMpc | Method::Pphh) {
        return Err(BenchError::Config(format!("party sweep needs vfl_mpc or pphh, got {}", cfg.method)));
    }
    if n_range.is_empty() {
        return Err(BenchError::Config("party sweep needs at least one client count".into()));
    }
    let mut outcomes = Vec::with_capacity(n_range.len());
    for &n in n_range {
        outcomes.push(run_benchmark(&ExperimentConfig { n_clients: n, ..cfg.clone() })?);
    }
    let base = outcomes[0].row.mean_s;
    let rows: Vec<SweepRow> = outcomes
        .iter()
        .map(|o| SweepRow {
            method: o.row.method.clone(),
            variant: o.row.variant.clone(),
            profile: o.row.profile.clone(),
            n_clients: o.row.n_clients,
            mean_s: o.row.mean_s,
            ci95_s: o.row.ci95_s,
            rounds: o.row.rounds,
            bytes_per_batch: o.row.bytes_per_batch,
            rel_increase_pct: 100.0 * (o.row.mean_s - base) / base,
        })
        .collect();
    let grows = rows.windows(2).all(|w| w[1].bytes_per_batch > w[0].bytes_per_batch);
    let checks = vec![Check::new(
        format!("{} {} {}: bytes grow with the client count", cfg.method, cfg.variant, cfg.profile.name),
        grows,
        rows.iter().map(|r| format!("{}:{}", r.n_clients, r.bytes_per_batch)).collect::<Vec<_>>().join(" "),
    )];
    Ok((rows, outcomes, checks))
}
