//! End-to-end acceptance run: prints one PASS/FAIL line per criterion.
//!
//! Two criteria are known to fail for reasons analysed in the project
//! notes (`KNOWN_FAILURES`); they still print FAIL. The process exits
//! nonzero when any other criterion fails.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader};
use std::process::{Command, Stdio};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use hvfl_bench::{
    build_bundle, emit_report, run_benchmark, stage_breakdown, BenchOutcome, DatasetSource, EncoderDims, ExperimentConfig, Method, PartyOutcome, Summary,
};
use hvfl_core::data::{synth_classification_with, ClassificationSynth};
use hvfl_core::fxp::{decode_vec, encode_slice, RingTensor};
use hvfl_core::mpc::{dealer_generate, reconstruct, run_pair, share, stage, Party, SessionConfig, SharedTensor, TapeSpec};
use hvfl_core::netsim::{ClockMode, NetworkProfile};
use hvfl_core::nn::{grad_check, ArchitectureSpec, CentralModel, EncoderConfig, Mat, ModelBundle, Task, Variant};
use hvfl_core::privacy::{adversarial_train, discriminator_objective, generator_objective, AdversarialConfig, FreshAdversary, TrainBatch};
use hvfl_core::vfl::{central_input, partition_sequence, reference_outputs, run_e2e_mpc, run_pphh, run_vfl_mpc, PartitionedSequence, PipelineConfig};

/// Criteria expected to print FAIL; see the project notes for the analysis.
const KNOWN_FAILURES: [usize; 2] = [3, 8];

/// Pinned transcript digest of `golden_party_config` over TCP.
const GOLDEN_TRANSCRIPT: &str = "8a8410e4255bd4d7238bc6867af9d43c165885ba8a5956c82b4c66cfbb4c64d6";

const LSB: f64 = 1.0 / 65536.0;

// Criterion 1: per-op bounds against plaintext, in units of the fixed-point LSB
// unless relative.
const MUL_ABS: f64 = 4.0 * LSB;
const MATMUL_ABS_PER_K: f64 = 2.0 * LSB;
const RELU_ABS: f64 = 2.0 * LSB;
const EXP_REL: f64 = 0.01;
const EXP_ABS: f64 = 4.0 * LSB;
const RECIP_REL: f64 = 1e-3;
const RECIP_ABS: f64 = 2.0 * LSB;
const SOFTMAX_ABS: f64 = 0.02;
const OP_INPUTS: usize = 1000;

// Criterion 2.
const SPLIT_LOGIT_TOL: f64 = 0.05;
const E2E_LINF_TOL: f64 = 0.1;
const E2E_ARGMAX_MIN: f64 = 0.95;
const E2E_SAMPLES: usize = 100;

// Criteria 3 and 5.
const BYTES_P4_OVER_H4_MIN: f64 = 20.0;
const BYTES_H_SPREAD_MAX: f64 = 3.0;
const BYTES_P_SPREAD_MIN: f64 = 50.0;
const TIME_P4_OVER_H4_MIN: f64 = 10.0;
const TIME_H_INCREASE_MAX: f64 = 0.50;
const TIME_P_SPREAD_MIN: f64 = 10.0;

// Criterion 6.
const PCT_SUM_TOL: f64 = 0.5;

// Criterion 8.
const PRIVACY_SEEDS: [u64; 3] = [0, 1, 2];
const FRESH_MAX: f64 = 1.0 / 3.0 + 0.05;
const CONTROL_FRESH_MIN: f64 = 1.0 / 3.0 + 0.10;
const TASK_MARGIN_MIN: f64 = 0.10;

// Criterion 9.
const ALGEBRA_TOL: f64 = 1e-9;
const LN3_TOL: f64 = 1e-6;
const GRAD_REL_TOL: f64 = 1e-4;

struct Verdict {
    pass: bool,
    detail: String,
}

impl Verdict {
    fn new(parts: &[(bool, String)]) -> Self {
        let pass = parts.iter().all(|(p, _)| *p);
        let detail = parts.iter().map(|(p, d)| format!("[{}] {d}", if *p { "ok" } else { "FAIL" })).collect::<Vec<_>>().join("; ");
        Self { pass, detail }
    }
}

fn rng(seed: u64) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(seed)
}

fn max_abs(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

// ---------------------------------------------------------------- 1

fn secure<F>(inputs: &[RingTensor], spec: TapeSpec, f: F) -> RingTensor
where
    F: Fn(&mut Party, &[SharedTensor]) -> SharedTensor + Sync,
{
    let mut r = rng(101);
    let (mut s0, mut s1) = (Vec::new(), Vec::new());
    for x in inputs {
        let (a, b) = share(x, &mut r, 1);
        s0.push(a);
        s1.push(b);
    }
    let ins = [s0, s1];
    let (y0, y1) = run_pair(NetworkProfile::lan(), ClockMode::Simulated, dealer_generate(&spec, 17), SessionConfig::default(), |p| f(p, &ins[p.id() as usize]));
    reconstruct(&y0, &y1).expect("matching shares")
}

fn uniform(r: &mut ChaCha12Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| r.random_range(lo..hi)).collect()
}

fn log_uniform(r: &mut ChaCha12Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    let mut v: Vec<f64> = (0..n - 2).map(|_| r.random_range(lo.ln()..hi.ln()).exp()).collect();
    v.extend([lo, hi]);
    v
}

fn enc(v: &[f64]) -> RingTensor {
    encode_slice(vec![v.len()], v, 16).expect("in range")
}

/// Worst `|got - want| / bound`; at most 1 passes.
fn worst_ratio(got: &[f64], want: &[f64], bound: impl Fn(f64) -> f64) -> f64 {
    got.iter().zip(want).map(|(g, w)| (g - w).abs() / bound(*w)).fold(0.0, f64::max)
}

fn criterion_1() -> Verdict {
    let n = OP_INPUTS;
    let mut r = rng(1);
    let mut parts = Vec::new();
    let mut op = |name: &str, ratio: f64| parts.push((ratio <= 1.0, format!("{name} {ratio:.3}")));

    let (x, y) = (enc(&uniform(&mut r, n, -1000.0, 1000.0)), enc(&uniform(&mut r, n, -1000.0, 1000.0)));
    let z = secure(&[x.clone(), y.clone()], TapeSpec::new(), |p, s| p.add(&s[0], &s[1]).unwrap());
    let exact = z.data().iter().zip(x.data().iter().zip(y.data())).all(|(z, (a, b))| *z == a.wrapping_add(*b));
    op("add(exact)", if exact { 0.0 } else { f64::INFINITY });

    let (xv, yv) = (uniform(&mut r, n, -50.0, 50.0), uniform(&mut r, n, -50.0, 50.0));
    let (x, y) = (enc(&xv), enc(&yv));
    let z = secure(&[x.clone(), y.clone()], TapeSpec::mul(n), |p, s| p.mul(&s[0], &s[1]).unwrap());
    let want: Vec<f64> = decode_vec(&x).iter().zip(decode_vec(&y)).map(|(a, b)| a * b).collect();
    op("mul", worst_ratio(&decode_vec(&z), &want, |_| MUL_ABS));

    // 32 x 32 outputs of inner dimension 32.
    let d = 32;
    let a = encode_slice(vec![d, d], &uniform(&mut r, d * d, -4.0, 4.0), 16).unwrap();
    let b = encode_slice(vec![d, d], &uniform(&mut r, d * d, -4.0, 4.0), 16).unwrap();
    let z = secure(&[a.clone(), b.clone()], TapeSpec::matmul(d, d, d), |p, s| p.matmul(&s[0], &s[1]).unwrap());
    let (av, bv) = (decode_vec(&a), decode_vec(&b));
    let want: Vec<f64> = (0..d * d).map(|ij| (0..d).map(|k| av[(ij / d) * d + k] * bv[k * d + ij % d]).sum()).collect();
    op("matmul", worst_ratio(&decode_vec(&z), &want, |_| MATMUL_ABS_PER_K * d as f64));

    let v = uniform(&mut r, n, -100.0, 100.0);
    let x = enc(&v);
    let bits = secure(std::slice::from_ref(&x), TapeSpec::msb(n), |p, s| p.msb(&s[0]).unwrap());
    let exact = bits.data().iter().zip(decode_vec(&x)).all(|(b, xv)| *b == (xv < 0.0) as u64);
    op("msb(exact)", if exact { 0.0 } else { f64::INFINITY });

    let y = secure(std::slice::from_ref(&x), TapeSpec::relu(n), |p, s| p.relu(&s[0]).unwrap());
    let want: Vec<f64> = decode_vec(&x).iter().map(|v| v.max(0.0)).collect();
    op("relu", worst_ratio(&decode_vec(&y), &want, |_| RELU_ABS));

    let mut v = uniform(&mut r, n - 2, -16.0, 4.0);
    v.extend([-16.0, 4.0]);
    let x = enc(&v);
    let y = secure(std::slice::from_ref(&x), TapeSpec::exp(n), |p, s| p.exp(&s[0]).unwrap());
    let want: Vec<f64> = decode_vec(&x).iter().map(|v| v.exp()).collect();
    op("exp[-16,4]", worst_ratio(&decode_vec(&y), &want, |w| EXP_REL * w + EXP_ABS));

    let x = enc(&log_uniform(&mut r, n, 0.1, 512.0));
    let y = secure(std::slice::from_ref(&x), TapeSpec::reciprocal(n), |p, s| p.reciprocal(&s[0]).unwrap());
    let want: Vec<f64> = decode_vec(&x).iter().map(|v| 1.0 / v).collect();
    op("reciprocal[0.1,512]", worst_ratio(&decode_vec(&y), &want, |w| RECIP_REL * w + RECIP_ABS));

    let x = enc(&log_uniform(&mut r, n, 0.005, 512.0));
    let y = secure(std::slice::from_ref(&x), TapeSpec::inv_sqrt(n), |p, s| p.inv_sqrt(&s[0]).unwrap());
    let want: Vec<f64> = decode_vec(&x).iter().map(|v| 1.0 / v.sqrt()).collect();
    op("inv_sqrt[0.005,512]", worst_ratio(&decode_vec(&y), &want, |w| RECIP_REL * w + RECIP_ABS));

    let (rows, cols) = (125, 8);
    let x = encode_slice(vec![rows, cols], &uniform(&mut r, rows * cols, -4.0, 4.0), 16).unwrap();
    let y = decode_vec(&secure(std::slice::from_ref(&x), TapeSpec::softmax(rows, cols), |p, s| p.softmax(&s[0], 0.0, None).unwrap()));
    let xv = decode_vec(&x);
    let mut want = Vec::with_capacity(rows * cols);
    for row in xv.chunks(cols) {
        let m = row.iter().cloned().fold(f64::MIN, f64::max);
        let z: f64 = row.iter().map(|a| (a - m).exp()).sum();
        want.extend(row.iter().map(|a| (a - m).exp() / z));
    }
    op("softmax", worst_ratio(&y, &want, |_| SOFTMAX_ABS));

    Verdict::new(&parts)
}

// ---------------------------------------------------------------- 2

fn split_config(variant: Variant) -> ExperimentConfig {
    ExperimentConfig {
        method: if variant.is_hybrid() { Method::Pphh } else { Method::VflMpc },
        variant,
        profile: NetworkProfile::lan(),
        ..ExperimentConfig::default()
    }
}

fn partitioned(records: &[hvfl_core::data::Record], n: usize, seed: u64) -> Vec<PartitionedSequence> {
    let mut r = rng(seed);
    records.iter().map(|rec| partition_sequence(rec, n, &mut r).unwrap()).collect()
}

fn criterion_2() -> Verdict {
    let mut parts = Vec::new();
    let pcfg = PipelineConfig::simulated(NetworkProfile::lan());
    for v in [Variant::P1, Variant::H1] {
        let cfg = split_config(v);
        let ds = cfg.dataset.load(3).unwrap();
        let bundle = build_bundle(&cfg, &ds).unwrap();
        let batch = partitioned(&ds.records[..64], 3, 2);
        let got = if v.is_hybrid() { run_pphh(&batch, &bundle, &pcfg) } else { run_vfl_mpc(&batch, &bundle, &pcfg) }.unwrap().predictions;
        let want = reference_outputs(&bundle, &batch).unwrap();
        let e = max_abs(&got, &want);
        parts.push((e <= SPLIT_LOGIT_TOL, format!("{v} max|logit err| {e:.4} over 64")));
    }

    let ds = synth_classification_with(E2E_SAMPLES, 3, 22, ClassificationSynth { min_len: 16, max_len: 16 });
    let d_in = ds.feature_dim + 1;
    let enc_cfg = EncoderConfig { d_in, d_model: 16, n_heads: 2, n_layers: 2, d_ff: 32, max_len: 16 };
    let model = CentralModel::new(&enc_cfg, 16, 16, Task::Classification, &mut rng(23));
    let batch = partitioned(&ds.records, 3, 24);
    let got = run_e2e_mpc(&batch, &model, &pcfg, E2E_SAMPLES).unwrap().predictions;
    let want: Vec<f64> = batch.iter().map(|s| model.eval(&central_input(s, d_in).unwrap()).unwrap().data[0]).collect();
    let e = max_abs(&got, &want);
    let agree = got.iter().zip(&want).filter(|(a, b)| (**a > 0.0) == (**b > 0.0)).count() as f64 / E2E_SAMPLES as f64;
    parts.push((e <= E2E_LINF_TOL, format!("e2e L_inf {e:.4} over {E2E_SAMPLES}")));
    parts.push((agree >= E2E_ARGMAX_MIN, format!("e2e argmax agreement {:.1}%", 100.0 * agree)));
    Verdict::new(&parts)
}

// ---------------------------------------------------------------- 3-7

/// One timed batch of 64 per configuration, simulated clock.
fn timed(variant: Variant, profile: NetworkProfile, n_clients: usize) -> BenchOutcome {
    let cfg = ExperimentConfig { profile, n_clients, batches: 1, repeats: 1, ..split_config(variant) };
    if variant.is_hybrid() { stage_breakdown(&cfg) } else { run_benchmark(&cfg) }.unwrap()
}

struct Grid {
    wan: BTreeMap<Variant, BenchOutcome>,
    lan: BTreeMap<Variant, BenchOutcome>,
    wan8: BTreeMap<Variant, BenchOutcome>,
}

fn formula_checks(o: &BenchOutcome) -> (bool, bool) {
    let by = |needle: &str| o.checks.iter().filter(|c| c.name.contains(needle)).all(|c| c.pass);
    (by("equal the cost formulas"), by("rounds identical") && by("equal the cost formulas"))
}

fn criterion_3(g: &Grid) -> Verdict {
    let b = |v: Variant| g.wan[&v].row.bytes_per_batch;
    let p4_h4 = b(Variant::P4) / b(Variant::H4);
    let h = [Variant::H1, Variant::H2, Variant::H3, Variant::H4].map(b);
    let p = [Variant::P1, Variant::P2, Variant::P3, Variant::P4].map(b);
    let spread = |x: [f64; 4]| x.iter().cloned().fold(f64::MIN, f64::max) / x.iter().cloned().fold(f64::MAX, f64::min);
    let exact = g.wan.values().chain(g.lan.values()).chain(g.wan8.values()).all(|o| formula_checks(o).0);
    Verdict::new(&[
        (p4_h4 >= BYTES_P4_OVER_H4_MIN, format!("bytes P4/H4 {p4_h4:.1}x")),
        (spread(h) < BYTES_H_SPREAD_MAX, format!("H1..H4 spread {:.2}x", spread(h))),
        (spread(p) > BYTES_P_SPREAD_MIN, format!("P1..P4 spread {:.1}x", spread(p))),
        (exact, format!("bytes equal the open-volume formula in all {} runs", g.wan.len() + g.lan.len() + g.wan8.len())),
    ])
}

fn criterion_4(g: &Grid) -> Verdict {
    let exact = g.wan.values().chain(g.lan.values()).chain(g.wan8.values()).all(|o| formula_checks(o).1);
    let deltas: Vec<i64> = [(Variant::P1, Variant::H1), (Variant::P2, Variant::H2), (Variant::P3, Variant::H3), (Variant::P4, Variant::H4)]
        .iter()
        .map(|(p, h)| g.wan[h].row.rounds as i64 - g.wan[p].row.rounds as i64)
        .collect();
    let constant = deltas.windows(2).all(|w| w[0] == w[1]);
    Verdict::new(&[(exact, "rounds equal the round formula in every run".into()), (constant, format!("H - P rounds {deltas:?}"))])
}

fn criterion_5(g: &Grid) -> Verdict {
    let t = |v: Variant| g.wan[&v].row.mean_s;
    let ratio = t(Variant::P4) / t(Variant::H4);
    let h_inc = t(Variant::H4) / t(Variant::H1) - 1.0;
    let p_spread = t(Variant::P4) / t(Variant::P1);
    Verdict::new(&[
        (ratio >= TIME_P4_OVER_H4_MIN, format!("WAN s/batch P4/H4 {ratio:.1}x")),
        (h_inc < TIME_H_INCREASE_MAX, format!("H1->H4 +{:.1}%", 100.0 * h_inc)),
        (p_spread > TIME_P_SPREAD_MIN, format!("P1->P4 {p_spread:.1}x")),
    ])
}

fn criterion_6(g: &Grid) -> Verdict {
    let mut parts = Vec::new();
    let hs = [Variant::H1, Variant::H2, Variant::H3, Variant::H4];
    let labels_ok = hs.iter().flat_map(|v| [&g.wan[v], &g.lan[v]]).all(|o| o.checks.iter().filter(|c| c.name.contains("reporting stage")).all(|c| c.pass));
    parts.push((labels_ok && stage::ALL.len() == 7, format!("labels {}", stage::ALL.join(","))));
    let worst = hs.iter().flat_map(|v| [&g.wan[v], &g.lan[v]]).map(|o| (o.row.stage_pcts().iter().sum::<f64>() - 100.0).abs()).fold(0.0, f64::max);
    parts.push((worst <= PCT_SUM_TOL, format!("worst |sum - 100| {worst:.2e}")));
    for v in hs {
        let (w, l) = (g.wan[&v].row.pct_mpc, g.lan[&v].row.pct_mpc);
        parts.push((w > l, format!("{v} mpc share WAN {w:.1}% > LAN {l:.1}%")));
    }
    Verdict::new(&parts)
}

fn criterion_7(g: &Grid) -> Verdict {
    let inc = |v: Variant| g.wan8[&v].row.mean_s / g.wan[&v].row.mean_s - 1.0;
    let (h, p) = (inc(Variant::H4), inc(Variant::P4));
    Verdict::new(&[(h < p, format!("3->8 clients WAN: H4 +{:.2}% vs P4 +{:.2}%", 100.0 * h, 100.0 * p))])
}

// ---------------------------------------------------------------- 8

fn privacy_bundle(seed: u64) -> (ModelBundle, hvfl_core::data::SequenceDataset) {
    let ds = synth_classification_with(480, 3, 80, ClassificationSynth { min_len: 24, max_len: 64 });
    let enc = EncoderConfig { d_in: ds.feature_dim + 1, d_model: 32, n_heads: 2, n_layers: 2, d_ff: 64, max_len: ds.max_len };
    let spec = ArchitectureSpec::new(Variant::H1, Task::Classification, 3, enc);
    (ModelBundle::new(&spec, &mut rng(1000 + seed)).unwrap(), ds)
}

fn criterion_8() -> Verdict {
    let mut parts = Vec::new();
    let (mut fresh, mut margin, mut control) = (Vec::new(), Vec::new(), Vec::new());
    for seed in PRIVACY_SEEDS {
        for alpha in [AdversarialConfig::default().alpha, 0.0] {
            let (mut b, ds) = privacy_bundle(seed);
            let cfg = AdversarialConfig { alpha, seed, fresh: Some(FreshAdversary { seed, ..FreshAdversary::default() }), ..AdversarialConfig::default() };
            let rep = adversarial_train(&mut b, &ds, &cfg).unwrap();
            let f = rep.fresh_accuracy().expect("fresh adversary ran");
            if alpha == 0.0 {
                control.push(f);
            } else {
                fresh.push(f);
                margin.push(rep.task.accuracy.expect("classification") - rep.trivial);
            }
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{:.1}", 100.0 * x)).collect::<Vec<_>>().join("/");
    parts.push((fresh.iter().all(|&f| f <= FRESH_MAX), format!("fresh D {}% (bound {:.1}%)", fmt(&fresh), 100.0 * FRESH_MAX)));
    parts.push((margin.iter().all(|&m| m >= TASK_MARGIN_MIN), format!("task acc - majority {} pts", fmt(&margin))));
    parts.push((control.iter().all(|&f| f >= CONTROL_FRESH_MIN), format!("alpha=0 fresh D {}% (mean {:.1}%)", fmt(&control), 100.0 * mean(&control))));
    Verdict::new(&parts)
}

// ---------------------------------------------------------------- 9

fn loss_bundle(task: Task, seed: u64) -> ModelBundle {
    let enc = EncoderConfig { d_in: if task == Task::Classification { 5 } else { 4 }, d_model: 8, n_heads: 2, n_layers: 1, d_ff: 8, max_len: 96 };
    let mut spec = ArchitectureSpec::new(Variant::H1, task, 3, enc);
    (spec.h_pub, spec.a_pub, spec.h_priv, spec.a_priv) = (4, 6, 2, 3);
    (spec.y_width, spec.fusion_hidden, spec.disc_hidden) = (2, 3, vec![5]);
    let mut b = ModelBundle::new(&spec, &mut rng(seed)).unwrap();
    // Off every ReLU kink, so central differences are smooth.
    let mut r = rng(seed + 1);
    for v in &mut b.store.values {
        let j = Mat::randn(v.rows, v.cols, 0.1, &mut r);
        v.data.iter_mut().zip(&j.data).for_each(|(a, b)| *a += b);
    }
    b
}

fn loss_batch(b: &ModelBundle, task: Task, seed: u64) -> TrainBatch {
    let recs = match task {
        Task::Classification => synth_classification_with(4, 3, seed, ClassificationSynth { min_len: 6, max_len: 10 }).records,
        Task::Regression => hvfl_core::data::synth_regression(3, seed).records,
    };
    TrainBatch::new(b, &partitioned(&recs, 3, seed)).unwrap()
}

fn criterion_9() -> Verdict {
    let mut worst_alg: f64 = 0.0;
    let b = loss_bundle(Task::Classification, 1);
    for seed in 0..8 {
        let batch = loss_batch(&b, Task::Classification, seed);
        for alpha in [0.0, 0.25, 1.0, 3.0] {
            let (g, _) = generator_objective(&b, &b.store, &batch, alpha).unwrap();
            worst_alg = worst_alg.max((g.total + alpha * g.disc - g.task).abs());
        }
    }
    let mut u = loss_bundle(Task::Classification, 2);
    let last = u.discriminator.as_ref().unwrap().layers.last().unwrap().clone();
    u.store.values[last.w] = Mat::zeros(u.store.get(last.w).rows, 3);
    u.store.values[last.b] = Mat::zeros(1, 3);
    let (d_uniform, _) = discriminator_objective(&u, &u.store, &loss_batch(&u, Task::Classification, 2)).unwrap();

    let mut worst_grad: f64 = 0.0;
    let d = loss_bundle(Task::Classification, 3);
    let batch = loss_batch(&d, Task::Classification, 3);
    worst_grad = worst_grad.max(grad_check(&mut d.store.clone(), &d.disc_params(), 1e-5, |s| discriminator_objective(&d, s, &batch).unwrap()));
    for task in [Task::Classification, Task::Regression] {
        let g = loss_bundle(task, 4);
        let batch = loss_batch(&g, task, 4);
        let ids: Vec<usize> = (0..g.store.len()).filter(|&i| !g.is_disc_param(i)).collect();
        worst_grad = worst_grad.max(grad_check(&mut g.store.clone(), &ids, 1e-5, |s| {
            let (l, grads) = generator_objective(&g, s, &batch, 0.7).unwrap();
            (l.total, grads)
        }));
    }
    Verdict::new(&[
        (worst_alg <= ALGEBRA_TOL, format!("|L_G + a L_D - L_task| {worst_alg:.1e}")),
        ((d_uniform - 3f64.ln()).abs() <= LN3_TOL, format!("uniform L_D - ln 3 = {:.1e}", d_uniform - 3f64.ln())),
        (worst_grad < GRAD_REL_TOL, format!("worst gradient rel err {worst_grad:.1e}")),
    ])
}

// ---------------------------------------------------------------- 10

fn report_bytes(cfg: &ExperimentConfig) -> Vec<Vec<u8>> {
    let dir = tempfile::tempdir().unwrap();
    let o = run_benchmark(cfg).unwrap();
    let s = Summary::new(vec![cfg.clone()], vec![o.row], Vec::new(), o.checks);
    emit_report(dir.path(), "det", &s).unwrap().iter().map(|p| std::fs::read(p).unwrap()).collect()
}

fn party_processes() -> Result<(PartyOutcome, PartyOutcome), String> {
    let bin = env!("CARGO_BIN_EXE_hvfl");
    let mut listener = Command::new(bin).args(["party", "--id", "0", "--listen", "127.0.0.1:0"]).stdout(Stdio::piped()).spawn().map_err(|e| e.to_string())?;
    let mut out = BufReader::new(listener.stdout.take().expect("piped"));
    let mut line = String::new();
    out.read_line(&mut line).map_err(|e| e.to_string())?;
    let addr = line.trim().strip_prefix("listening ").ok_or_else(|| format!("unexpected banner {line:?}"))?.to_string();
    let peer = Command::new(bin).args(["party", "--id", "1", "--connect", &addr]).output().map_err(|e| e.to_string())?;
    if !peer.status.success() {
        return Err(format!("party 1 failed: {}", String::from_utf8_lossy(&peer.stderr)));
    }
    line.clear();
    out.read_line(&mut line).map_err(|e| e.to_string())?;
    let st = listener.wait().map_err(|e| e.to_string())?;
    if !st.success() {
        return Err(format!("party 0 exited with {st}"));
    }
    let p0: PartyOutcome = serde_json::from_str(line.trim()).map_err(|e| e.to_string())?;
    let p1: PartyOutcome = serde_json::from_slice(&peer.stdout).map_err(|e| e.to_string())?;
    Ok((p0, p1))
}

fn criterion_10() -> Verdict {
    let cfg = ExperimentConfig {
        batch_size: 16,
        batches: 2,
        repeats: 3,
        dataset: DatasetSource::SyntheticClassification { n_seqs: 160, seed: 10, min_len: 12, max_len: 32 },
        encoder: EncoderDims { d_model: 16, n_heads: 2, n_layers: 1, d_ff: 32 },
        ..split_config(Variant::H2)
    };
    let identical = report_bytes(&cfg) == report_bytes(&cfg);
    let mut parts = vec![(identical, "repeated simulated reports are byte-identical".to_string())];
    match party_processes() {
        Ok((p0, p1)) => {
            parts.push((p0.transcript_hash == p1.transcript_hash && p0.predictions == p1.predictions, "two processes agree".into()));
            parts.push((p0.transcript_hash == GOLDEN_TRANSCRIPT, format!("transcript {}", p0.transcript_hash)));
        }
        Err(e) => parts.push((false, format!("party processes: {e}"))),
    }
    Verdict::new(&parts)
}

// ----------------------------------------------------------------

fn main() {
    let start = Instant::now();
    let mut results: Vec<(usize, Verdict, f64)> = Vec::new();
    let mut run = |id: usize, f: &dyn Fn() -> Verdict| {
        let t = Instant::now();
        let v = f();
        let secs = t.elapsed().as_secs_f64();
        println!("{} criterion {id:>2}: {} ({secs:.1}s)", if v.pass { "PASS" } else { "FAIL" }, v.detail);
        results.push((id, v, secs));
    };
    run(1, &criterion_1);
    run(2, &criterion_2);

    let t = Instant::now();
    let mut grid = Grid { wan: BTreeMap::new(), lan: BTreeMap::new(), wan8: BTreeMap::new() };
    for v in Variant::ALL {
        grid.wan.insert(v, timed(v, NetworkProfile::wan(), 3));
        if v.is_hybrid() {
            grid.lan.insert(v, timed(v, NetworkProfile::lan(), 3));
        }
    }
    for v in [Variant::H4, Variant::P4] {
        grid.wan8.insert(v, timed(v, NetworkProfile::wan(), 8));
    }
    println!("     timing grid of {} runs took {:.1}s", grid.wan.len() + grid.lan.len() + grid.wan8.len(), t.elapsed().as_secs_f64());
    run(3, &|| criterion_3(&grid));
    run(4, &|| criterion_4(&grid));
    run(5, &|| criterion_5(&grid));
    run(6, &|| criterion_6(&grid));
    run(7, &|| criterion_7(&grid));
    run(8, &criterion_8);
    run(9, &criterion_9);
    run(10, &criterion_10);

    let unexpected: Vec<usize> = results.iter().filter(|(id, v, _)| !v.pass && !KNOWN_FAILURES.contains(id)).map(|(id, _, _)| *id).collect();
    let recovered: Vec<usize> = results.iter().filter(|(id, v, _)| v.pass && KNOWN_FAILURES.contains(id)).map(|(id, _, _)| *id).collect();
    let passed = results.iter().filter(|(_, v, _)| v.pass).count();
    println!("acceptance: {passed}/{} PASS in {:.1}s; known failures {KNOWN_FAILURES:?}", results.len(), start.elapsed().as_secs_f64());
    if !recovered.is_empty() {
        println!("note: known failures {recovered:?} now pass");
    }
    if !unexpected.is_empty() {
        println!("unexpected failures: {unexpected:?}");
        std::process::exit(1);
    }
}
