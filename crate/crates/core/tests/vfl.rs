use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use hvfl_core::data::{synth_classification, synth_classification_with, ClassificationSynth, Record, TimeStep};
use hvfl_core::mpc::{stage, Transcript};
use hvfl_core::netsim::{Channel, ClockMode, NetworkProfile, TcpTransport};
use hvfl_core::nn::{ArchitectureSpec, CentralModel, EncoderConfig, ModelBundle, Task, Variant};
use hvfl_core::vfl::{
    build_masked_sequence, central_input, client_embeddings, e2e_bytes, e2e_range_audit, e2e_rounds, pack_key, partition_sequence, partition_with, pphh_bytes,
    pphh_rounds, reference_outputs, run_e2e_mpc, run_pphh, run_pphh_party, run_vfl_mpc, secure_position_recovery, unpack_key, vfl_mpc_bytes, vfl_mpc_rounds,
    PartitionedSequence, PipelineConfig, VflError, POSITION_RECOVERY,
};

fn rng(seed: u64) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(seed)
}

fn record(len: usize) -> Record {
    let steps = (0..len).map(|t| TimeStep { order_key: 10.0 * t as f64 + 3.0, features: vec![t as f64, -(t as f64)] }).collect();
    Record { seq_id: "r".into(), steps, label: 1.0 }
}

fn lan() -> PipelineConfig {
    PipelineConfig::simulated(NetworkProfile::lan())
}

fn keys_of(p: &PartitionedSequence) -> Vec<Vec<u64>> {
    p.per_client.iter().enumerate().map(|(c, v)| v.iter().enumerate().map(|(j, s)| pack_key(s.order_key as u64, c, j).unwrap()).collect()).collect()
}

fn stage_bytes(t: &Transcript) -> u64 {
    t.stages.values().map(|s| s.bytes).sum()
}

#[test]
fn two_client_split_of_five_steps() {
    let p = partition_with(&record(5), &[0, 1, 0, 0, 1], 2).unwrap();
    let pos: Vec<Vec<usize>> = p.per_client.iter().map(|v| v.iter().map(|s| s.position).collect()).collect();
    assert_eq!(pos, [vec![0, 2, 3], vec![1, 4]]);
    assert_eq!(p.owners(), [0, 1, 0, 0, 1]);
    assert_eq!(p.reassemble(), record(5).steps);

    let rec = secure_position_recovery(&keys_of(&p), &lan()).unwrap();
    assert_eq!(rec.positions, [vec![0, 2, 3], vec![1, 4]]);
    assert!(rec.transcript.stage(POSITION_RECOVERY).bytes > 0);
}

#[test]
fn partitioning_rejects_degenerate_layouts() {
    assert!(matches!(partition_sequence(&record(5), 1, &mut rng(0)), Err(VflError::Partition(_))));
    assert!(matches!(partition_sequence(&record(2), 3, &mut rng(0)), Err(VflError::Partition(_))));
    assert!(partition_with(&record(3), &[0, 0, 0], 2).is_err());
    assert!(partition_with(&record(3), &[0, 2, 1], 2).is_err());
}

#[test]
fn ownership_is_uniform_over_clients() {
    let mut r = rng(1);
    let rec = record(12);
    let mut counts = [0usize; 3];
    for _ in 0..10_000 {
        let p = partition_sequence(&rec, 3, &mut r).unwrap();
        p.owners().iter().for_each(|&c| counts[c] += 1);
        assert!(p.per_client.iter().all(|v| !v.is_empty()));
    }
    let total = (10_000 * 12) as f64;
    for c in counts {
        assert!((c as f64 / total - 1.0 / 3.0).abs() < 0.02, "{counts:?}");
    }
}

#[test]
fn recovered_positions_match_argsort() {
    let mut r = rng(2);
    for case in 0..50 {
        let n = r.random_range(2..=4usize);
        let k = r.random_range(n..=24usize);
        let mut ticks: Vec<u64> = (0..k).map(|_| r.random_range(0..1u64 << 40)).collect();
        ticks.sort();
        ticks.dedup();
        if ticks.len() < n {
            continue;
        }
        let mut owner: Vec<usize> = (0..ticks.len()).map(|i| i % n).collect();
        owner.shuffle(&mut r);
        let mut keys = vec![Vec::new(); n];
        let mut global = Vec::new();
        for (t, &c) in ticks.iter().zip(&owner) {
            let key = pack_key(*t, c, keys[c].len()).unwrap();
            keys[c].push(key);
            global.push(key);
        }
        // Clients may submit in any order; positions follow the submission.
        keys.iter_mut().for_each(|ks| ks.shuffle(&mut r));
        let mut sorted = global.clone();
        sorted.sort();
        let rec = secure_position_recovery(&keys, &lan()).unwrap();
        for (c, ks) in keys.iter().enumerate() {
            let want: Vec<usize> = ks.iter().map(|k| sorted.binary_search(k).unwrap()).collect();
            assert_eq!(rec.positions[c], want, "case {case}");
        }
    }
}

#[test]
fn equal_timestamps_order_by_client_then_index() {
    let keys = vec![vec![pack_key(7, 0, 0).unwrap(), pack_key(9, 0, 1).unwrap()], vec![pack_key(7, 1, 0).unwrap()]];
    let rec = secure_position_recovery(&keys, &lan()).unwrap();
    assert_eq!(rec.positions, [vec![0, 2], vec![1]]);
    assert_eq!(unpack_key(keys[1][0]), (7, 1, 0));
}

#[test]
fn single_client_recovers_identity() {
    let keys = vec![(0..6).map(|j| pack_key(100 + j as u64, 0, j).unwrap()).collect()];
    let rec = secure_position_recovery(&keys, &lan()).unwrap();
    assert_eq!(rec.positions, [vec![0, 1, 2, 3, 4, 5]]);
}

#[test]
fn invalid_keys_are_rejected() {
    let k = pack_key(5, 0, 0).unwrap();
    assert!(matches!(secure_position_recovery(&[vec![k], vec![k]], &lan()), Err(VflError::Key(_))));
    assert!(matches!(secure_position_recovery(&[vec![k, k]], &lan()), Err(VflError::DuplicateKey { ticks: 5, client: 0, index: 0 })));
    assert!(pack_key(1 << 46, 0, 0).is_err());
    assert!(pack_key(0, 16, 0).is_err());
    assert!(secure_position_recovery(&[vec![], vec![]], &lan()).is_err());
}

#[test]
fn masked_views_cover_the_sequence() {
    let mut r = rng(3);
    let rec = record(9);
    let p = partition_sequence(&rec, 3, &mut r).unwrap();
    let views: Vec<_> = p.per_client.iter().map(|v| build_masked_sequence(v, p.total_len, 2).unwrap()).collect();
    for t in 0..9 {
        assert_eq!(views.iter().filter(|v| v.owned[t]).count(), 1);
        for v in &views {
            let row = v.tokens.row(t);
            if v.owned[t] {
                assert_eq!(row, [rec.steps[t].features[0], rec.steps[t].features[1], 0.0]);
            } else {
                assert_eq!(row, [0.0, 0.0, 1.0]);
            }
        }
    }
    assert!(build_masked_sequence(&[], 9, 2).is_err());
    assert!(build_masked_sequence(&p.per_client[0], 2, 2).is_err());
}

fn bundle(variant: Variant, n: usize, seed: u64) -> ModelBundle {
    let mut spec =
        ArchitectureSpec::new(variant, Task::Classification, n, EncoderConfig { d_in: 5, d_model: 32, n_heads: 2, n_layers: 2, d_ff: 64, max_len: 96 });
    spec.disc_hidden = vec![16];
    ModelBundle::new(&spec, &mut rng(seed)).unwrap()
}

fn batch(n_seqs: usize, n: usize, seed: u64) -> Vec<PartitionedSequence> {
    let ds = synth_classification_with(n_seqs, n, seed, ClassificationSynth { min_len: 12, max_len: 30 });
    let mut r = rng(seed);
    ds.records.iter().map(|rec| partition_sequence(rec, n, &mut r).unwrap()).collect()
}

fn max_err(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn vfl_mpc_matches_plaintext_and_the_cost_model() {
    let (m, b) = (bundle(Variant::P1, 3, 4), batch(8, 3, 4));
    let res = run_vfl_mpc(&b, &m, &lan()).unwrap();
    let want = reference_outputs(&m, &b).unwrap();
    assert!(max_err(&res.predictions, &want) <= 0.05, "{:?} vs {want:?}", res.predictions);
    let t = &res.transcript;
    assert_eq!(t.rounds, vfl_mpc_rounds(&m.spec));
    assert_eq!(t.total_bytes(), vfl_mpc_bytes(&m.spec, 8));
    assert_eq!(stage_bytes(t), t.total_bytes());
    assert!(t.stage(stage::PUBLIC_HEAD_FORWARD).time == 0.0);
    assert_eq!(run_vfl_mpc(&b, &m, &lan()).unwrap(), res);
    assert!(run_pphh(&b, &m, &lan()).is_err());
}

#[test]
fn pphh_matches_plaintext_and_the_cost_model() {
    let (m, b) = (bundle(Variant::H1, 2, 5), batch(6, 2, 5));
    let res = run_pphh(&b, &m, &lan()).unwrap();
    let want = reference_outputs(&m, &b).unwrap();
    assert!(max_err(&res.predictions, &want) <= 0.05, "{:?} vs {want:?}", res.predictions);
    let t = &res.transcript;
    assert_eq!(t.rounds, pphh_rounds(&m.spec));
    assert_eq!(t.rounds, vfl_mpc_rounds(&bundle(Variant::P1, 2, 5).spec) + 3);
    assert_eq!(t.total_bytes(), pphh_bytes(&m.spec, 6));
    assert_eq!(stage_bytes(t), t.total_bytes());
    let (pubf, privf) = (t.stage(stage::PUBLIC_HEAD_FORWARD), t.stage(stage::PRIVATE_HEAD_FORWARD));
    assert!(pubf.time > 0.0 && privf.time > 0.0);
    let serial: f64 = t.stages.iter().filter(|(k, _)| !stage::PARALLEL.contains(&k.as_str())).map(|(_, v)| v.time).sum();
    assert!((t.total_time() - serial - pubf.time.max(privf.time)).abs() < 1e-12);
    assert!(run_vfl_mpc(&b, &m, &lan()).is_err());
}

#[test]
fn padding_does_not_change_embeddings() {
    let m = bundle(Variant::H1, 2, 6);
    let b = batch(5, 2, 6);
    let together = client_embeddings(&m, &b).unwrap();
    for (i, seq) in b.iter().enumerate() {
        let alone = client_embeddings(&m, std::slice::from_ref(seq)).unwrap();
        for (t, a) in together.iter().zip(&alone) {
            assert!(max_err(t.row(i), a.row(0)) < 1e-9);
        }
    }
}

#[test]
fn wan_costs_more_time_but_the_same_bytes() {
    let (m, b) = (bundle(Variant::H1, 2, 7), batch(4, 2, 7));
    let lan_r = run_pphh(&b, &m, &lan()).unwrap();
    let wan_r = run_pphh(&b, &m, &PipelineConfig::simulated(NetworkProfile::wan())).unwrap();
    assert_eq!(lan_r.predictions, wan_r.predictions);
    assert_eq!(lan_r.transcript.total_bytes(), wan_r.transcript.total_bytes());
    assert!(wan_r.transcript.total_time() > 10.0 * lan_r.transcript.total_time());
}

fn tiny_central(seed: u64) -> CentralModel {
    let cfg = EncoderConfig { d_in: 5, d_model: 16, n_heads: 2, n_layers: 2, d_ff: 32, max_len: 16 };
    CentralModel::new(&cfg, 16, 16, Task::Classification, &mut rng(seed))
}

#[test]
fn plaintext_mirror_equals_the_model() {
    let m = tiny_central(8);
    for seq in batch(4, 2, 8).iter().filter(|s| s.total_len <= 16) {
        let inp = central_input(seq, 5).unwrap();
        let (checks, y) = e2e_range_audit(&m, &inp).unwrap();
        assert!(!checks.is_empty());
        assert!((y - m.eval(&inp).unwrap().data[0]).abs() < 1e-9);
    }
}

#[test]
fn e2e_matches_plaintext_and_the_cost_model() {
    let m = tiny_central(9);
    let ds = synth_classification_with(3, 2, 9, ClassificationSynth { min_len: 16, max_len: 16 });
    let mut r = rng(9);
    let b: Vec<_> = ds.records.iter().map(|rec| partition_sequence(rec, 2, &mut r).unwrap()).collect();
    let res = run_e2e_mpc(&b, &m, &lan(), 4).unwrap();
    let want: Vec<f64> = b.iter().map(|s| m.eval(&central_input(s, 5).unwrap()).unwrap().data[0]).collect();
    assert!(max_err(&res.predictions, &want) <= 0.1, "{:?} vs {want:?}", res.predictions);
    let t = &res.transcript;
    assert_eq!(t.rounds, 3 * e2e_rounds(&m.encoder.cfg));
    assert_eq!(e2e_rounds(&m.encoder.cfg), 264);
    assert_eq!(t.total_bytes(), 3 * e2e_bytes(&m.encoder.cfg, 16, 16, 16, 2));
    assert_eq!(stage_bytes(t), t.total_bytes());
    assert!(run_e2e_mpc(&b, &m, &lan(), 2).is_err());
}

#[test]
fn default_synth_records_fit_two_clients() {
    let ds = synth_classification(20, 2, 10);
    let mut r = rng(10);
    for rec in &ds.records {
        let p = partition_sequence(rec, 2, &mut r).unwrap();
        let rec2 = secure_position_recovery(&keys_of(&p), &lan()).unwrap();
        let want: Vec<Vec<usize>> = p.per_client.iter().map(|v| v.iter().map(|s| s.position).collect()).collect();
        assert_eq!(rec2.positions, want);
    }
}

#[test]
fn pphh_party_over_tcp_matches_the_in_memory_run() {
    let (m, b) = (bundle(Variant::H1, 3, 13), batch(5, 3, 13));
    let cfg = lan();
    let want = run_pphh(&b, &m, &cfg).unwrap();
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let mk = |id: usize, t: TcpTransport| Channel::new(id, Box::new(t), cfg.profile.clone(), ClockMode::Simulated).with_transcript_hash();
    let (r0, r1) = std::thread::scope(|s| {
        let h = s.spawn(|| {
            let t = TcpTransport::connect(addr, std::time::Duration::from_secs(10)).unwrap();
            run_pphh_party(mk(1, t), &b, &m, &cfg).unwrap()
        });
        let r0 = run_pphh_party(mk(0, TcpTransport::accept(&listener).unwrap()), &b, &m, &cfg).unwrap();
        (r0, h.join().unwrap())
    });
    assert_eq!(r0.result.predictions, want.predictions);
    assert_eq!(r1.result.predictions, want.predictions);
    assert!(r0.transcript_hash.is_some());
    assert_eq!(r0.transcript_hash, r1.transcript_hash);
    for (id, r) in [(0, &r0), (1, &r1)] {
        let key = format!("party{id}");
        assert_eq!(r.result.transcript.bytes_sent[&key], want.transcript.bytes_sent[&key]);
        assert_eq!(r.result.transcript.rounds, want.transcript.rounds);
    }

    let (c0, c1) = Channel::pair(cfg.profile.clone(), ClockMode::Simulated);
    let (m0, m1) = std::thread::scope(|s| {
        let h = s.spawn(|| run_pphh_party(c1.with_transcript_hash(), &b, &m, &cfg).unwrap());
        (run_pphh_party(c0.with_transcript_hash(), &b, &m, &cfg).unwrap(), h.join().unwrap())
    });
    assert_eq!(m0.transcript_hash, r0.transcript_hash);
    assert_eq!(m1.transcript_hash, r0.transcript_hash);
}
