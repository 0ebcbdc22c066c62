use std::rc::Rc;

use hvfl_core::nn::checkpoint;
use hvfl_core::nn::{
    attention_forward, grad_check, layernorm_forward, AdamW, AdamWConfig, ArchitectureSpec, Bind, EncoderConfig, EncoderInput, Graph, Mat, ModelBundle,
    ParamStore, Task, Variant,
};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

fn rng(seed: u64) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(seed)
}

fn tiny_encoder() -> EncoderConfig {
    EncoderConfig { d_in: 3, d_model: 8, n_heads: 2, n_layers: 2, d_ff: 16, max_len: 12 }
}

#[test]
fn layernorm_rows_have_zero_mean_unit_variance() {
    let x = Mat::randn(16, 32, 3.0, &mut rng(1)).map(|v| v + 5.0);
    let y = layernorm_forward(&x, &Mat::filled(1, 32, 1.0), &Mat::zeros(1, 32)).unwrap();
    for r in 0..y.rows {
        let row = y.row(r);
        let mean = row.iter().sum::<f64>() / 32.0;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 32.0;
        assert!(mean.abs() < 1e-9);
        assert!((var - 1.0).abs() < 1e-3, "variance {var}");
    }
}

#[test]
fn attention_is_permutation_equivariant() {
    let qkv = Mat::randn(7, 12, 1.0, &mut rng(2));
    let perm = [3, 0, 6, 1, 5, 2, 4];
    let mut permuted = Mat::zeros(7, 12);
    for (i, &p) in perm.iter().enumerate() {
        permuted.row_mut(i).copy_from_slice(qkv.row(p));
    }
    let y = attention_forward(&qkv, 2, None).unwrap();
    let yp = attention_forward(&permuted, 2, None).unwrap();
    for (i, &p) in perm.iter().enumerate() {
        for (a, b) in yp.row(i).iter().zip(y.row(p)) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn attention_rejects_fully_masked_sequence() {
    let qkv = Mat::randn(3, 6, 1.0, &mut rng(3));
    assert!(attention_forward(&qkv, 1, Some(&[false, false, false])).is_err());
    assert!(attention_forward(&qkv, 4, None).is_err());
}

fn full_input(x: &Mat, keep: &[bool]) -> EncoderInput {
    EncoderInput { x: x.clone(), positions: Rc::new((0..x.rows).collect()), segs: Rc::new(vec![(0, x.rows)]), keep: Some(Rc::new(keep.to_vec())) }
}

fn encode(bundle: &ModelBundle, inp: &EncoderInput) -> Mat {
    let mut g = Graph::new();
    let y = bundle.encoders[0].forward(&mut g, &bundle.store, Bind::Frozen, inp).unwrap();
    g.value(y).clone()
}

fn tiny_bundle(variant: Variant) -> ModelBundle {
    let mut spec = ArchitectureSpec::new(variant, Task::Classification, 2, tiny_encoder());
    (spec.h_pub, spec.a_pub, spec.h_priv, spec.a_priv) = if variant.is_hybrid() { (3, 4, 2, 3) } else { (0, 0, 4, 4) };
    spec.y_width = 2;
    spec.fusion_hidden = 3;
    spec.disc_hidden = vec![4];
    ModelBundle::new(&spec, &mut rng(4)).unwrap()
}

#[test]
fn masked_rows_do_not_influence_embedding() {
    let bundle = tiny_bundle(Variant::H1);
    let x = Mat::randn(10, 3, 1.0, &mut rng(5));
    let keep = [true, false, true, true, false, false, true, false, true, true];
    let base = encode(&bundle, &full_input(&x, &keep));
    let mut noisy = x.clone();
    for (r, k) in keep.iter().enumerate() {
        if !k {
            noisy.row_mut(r).iter_mut().for_each(|v| *v += 100.0);
        }
    }
    let pert = encode(&bundle, &full_input(&noisy, &keep));
    assert!(base.max_abs_diff(&pert) < 1e-12);
}

#[test]
fn compacted_sequence_matches_masked_full_sequence() {
    let bundle = tiny_bundle(Variant::H1);
    let x = Mat::randn(10, 3, 1.0, &mut rng(6));
    let keep = [false, true, true, false, true, false, false, true, true, false];
    let full = encode(&bundle, &full_input(&x, &keep));
    let rows: Vec<usize> = (0..10).filter(|&r| keep[r]).collect();
    let mut cx = Mat::zeros(rows.len(), 3);
    for (i, &r) in rows.iter().enumerate() {
        cx.row_mut(i).copy_from_slice(x.row(r));
    }
    let compact = EncoderInput { x: cx, positions: Rc::new(rows.clone()), segs: Rc::new(vec![(0, rows.len())]), keep: None };
    let c = encode(&bundle, &compact);
    assert!(full.max_abs_diff(&c) < 1e-12);
}

#[test]
fn layer_gradients_match_finite_differences() {
    let mut r = rng(7);
    let mut store = ParamStore::default();
    let w = store.add("w".into(), Mat::randn(4, 12, 0.5, &mut r));
    let b = store.add("b".into(), Mat::randn(1, 12, 0.1, &mut r));
    let lg = store.add("g".into(), Mat::randn(1, 4, 0.3, &mut r).map(|v| v + 1.0));
    let lb = store.add("lb".into(), Mat::randn(1, 4, 0.1, &mut r));
    let v = store.add("v".into(), Mat::randn(4, 1, 0.5, &mut r));
    let x = Mat::randn(6, 4, 1.0, &mut r);
    let targets = Rc::new(vec![1.0, 0.0, 1.0, 1.0, 0.0, 0.0]);
    let segs = Rc::new(vec![(0, 4), (4, 2)]);
    let keep = Rc::new(vec![true, false, true, true, true, true]);
    let worst = grad_check(&mut store, &[w, b, lg, lb, v], 1e-5, |s| {
        let mut g = Graph::new();
        let xv = g.constant(&x);
        let (wv, bv) = (g.param(s.get(w), w), g.param(s.get(b), b));
        let qkv = g.linear(xv, wv, bv);
        let a = g.attention(qkv, 2, segs.clone(), Some(keep.clone())).unwrap();
        let h = g.add(a, xv);
        let (gv, lbv) = (g.param(s.get(lg), lg), g.param(s.get(lb), lb));
        let h = g.layernorm(h, gv, lbv);
        let h = g.relu(h);
        let vv = g.param(s.get(v), v);
        let z = g.matmul(h, vv);
        let loss = g.bce_logits(z, targets.clone());
        (g.scalar(loss), g.backward(loss))
    });
    assert!(worst < 1e-4, "worst relative gradient error {worst}");
}

fn bundle_loss(bundle: &ModelBundle, store: &ParamStore, inputs: &[EncoderInput], y: &Rc<Vec<f64>>) -> (f64, hvfl_core::nn::ParamGrads) {
    let mut g = Graph::new();
    let embs: Vec<_> = bundle.encoders.iter().zip(inputs).map(|(e, inp)| e.forward(&mut g, store, Bind::All, inp).unwrap()).collect();
    let hp = bundle.spec.h_pub;
    let w = bundle.spec.embedding_width();
    let pubs: Vec<_> = embs.iter().map(|&e| g.slice_cols(e, 0, hp)).collect();
    let privs: Vec<_> = embs.iter().map(|&e| g.slice_cols(e, hp, w)).collect();
    let ep = g.concat_cols(&pubs);
    let eq = g.concat_cols(&privs);
    let yp = bundle.public_head.as_ref().unwrap().forward(&mut g, store, Bind::All, ep);
    let yq = bundle.private_head.forward(&mut g, store, Bind::All, eq);
    let cat = g.concat_cols(&[yp, yq]);
    let out = bundle.fusion_head.as_ref().unwrap().forward(&mut g, store, Bind::All, cat);
    let loss = g.bce_logits(out, y.clone());
    (g.scalar(loss), g.backward(loss))
}

#[test]
fn hybrid_model_gradients_match_finite_differences() {
    let bundle = tiny_bundle(Variant::H1);
    let mut r = rng(8);
    let inputs: Vec<EncoderInput> = [vec![0, 2, 5, 7, 9, 10], vec![1, 3, 4, 6, 8, 11]]
        .into_iter()
        .map(|pos| {
            let n = pos.len();
            EncoderInput { x: Mat::randn(n, 3, 1.0, &mut r), positions: Rc::new(pos), segs: Rc::new(vec![(0, 3), (3, 3)]), keep: None }
        })
        .collect();
    let y = Rc::new(vec![1.0, 0.0]);
    let mut store = bundle.store.clone();
    // Zero-initialised biases put ReLU inputs exactly on the kink; move off it.
    for v in &mut store.values {
        let j = Mat::randn(v.rows, v.cols, 0.05, &mut r);
        v.data.iter_mut().zip(&j.data).for_each(|(a, b)| *a += b);
    }
    let ids: Vec<usize> = (0..store.len()).filter(|&i| !bundle.is_disc_param(i)).collect();
    let worst = grad_check(&mut store, &ids, 1e-5, |s| bundle_loss(&bundle, s, &inputs, &y));
    assert!(worst < 1e-4, "worst relative gradient error {worst}");
}

#[test]
fn adamw_descends_quadratic_bowl() {
    let mut store = ParamStore::default();
    let p = store.add("p".into(), Mat::row_vec(&[4.0, -3.0]));
    let mut opt = AdamW::new(AdamWConfig::new(0.05, 0.0), &store, |_| true);
    let centre = Mat::row_vec(&[1.0, 2.0]);
    for _ in 0..2000 {
        let mut g = Graph::new();
        let c = g.constant(&centre);
        let pv = g.param(store.get(p), p);
        let d = g.sub(pv, c);
        let sq = g.mul(d, d);
        let ones = g.constant_owned(Mat::filled(2, 1, 1.0));
        let loss = g.matmul(sq, ones);
        let grads = g.backward(loss);
        drop(g);
        opt.step(&mut store, &grads);
    }
    assert!(store.get(p).max_abs_diff(&centre) < 1e-3, "{:?}", store.get(p).data);
}

#[test]
fn checkpoint_round_trips_bit_exact() {
    let mut bundle = tiny_bundle(Variant::H2);
    bundle.metadata.insert("dataset".into(), "synthetic".into());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    checkpoint::save(&bundle, &path).unwrap();
    let back: ModelBundle = checkpoint::load(&path).unwrap();
    assert_eq!(back, bundle);
    assert_eq!(checkpoint::digest(&back).unwrap(), checkpoint::digest(&bundle).unwrap());
    let mut bytes = std::fs::read(&path).unwrap();
    bytes[0] ^= 1;
    assert!(checkpoint::from_bytes::<ModelBundle>(&bytes).is_err());
    let n = bytes.len();
    assert!(checkpoint::from_bytes::<ModelBundle>(&std::fs::read(&path).unwrap()[..n - 3]).is_err());
}
