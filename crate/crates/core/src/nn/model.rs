use std::collections::BTreeMap;
use std::fmt;
use std::rc::Rc;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use super::graph::{Graph, Segments, Var};
use super::mat::Mat;
use super::NnError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Classification,
    Regression,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Variant {
    P1,
    P2,
    P3,
    P4,
    H1,
    H2,
    H3,
    H4,
}

impl Variant {
    pub const ALL: [Variant; 8] = [Variant::P1, Variant::P2, Variant::P3, Variant::P4, Variant::H1, Variant::H2, Variant::H3, Variant::H4];
    pub const P: [Variant; 4] = [Variant::P1, Variant::P2, Variant::P3, Variant::P4];
    pub const H: [Variant; 4] = [Variant::H1, Variant::H2, Variant::H3, Variant::H4];

    /// `(h_pub, a_pub, h_priv, a_priv)`.
    pub fn widths(self) -> (usize, usize, usize, usize) {
        match self {
            Variant::P1 => (0, 0, 64, 64),
            Variant::P2 => (0, 0, 256, 256),
            Variant::P3 => (0, 0, 1024, 1024),
            Variant::P4 => (0, 0, 4096, 4096),
            Variant::H1 => (48, 64, 16, 32),
            Variant::H2 => (192, 256, 32, 64),
            Variant::H3 => (768, 1024, 64, 128),
            Variant::H4 => (3072, 4096, 128, 256),
        }
    }

    pub fn is_hybrid(self) -> bool {
        matches!(self, Variant::H1 | Variant::H2 | Variant::H3 | Variant::H4)
    }

    /// The variant of the other family with the same index.
    pub fn counterpart(self) -> Variant {
        let i = Variant::ALL.iter().position(|v| *v == self).expect("variant");
        Variant::ALL[(i + 4) % 8]
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl FromStr for Variant {
    type Err = NnError;
    fn from_str(s: &str) -> Result<Self, NnError> {
        Variant::ALL.iter().find(|v| v.to_string().eq_ignore_ascii_case(s)).copied().ok_or_else(|| NnError::Config(format!("unknown variant {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    /// Input width including the mask-indicator channel.
    pub d_in: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub d_ff: usize,
    pub max_len: usize,
}

impl EncoderConfig {
    pub fn standard(d_in: usize, max_len: usize) -> Self {
        Self { d_in, d_model: 64, n_heads: 4, n_layers: 4, d_ff: 512, max_len }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchitectureSpec {
    pub variant: Variant,
    pub task: Task,
    pub n_clients: usize,
    pub encoder: EncoderConfig,
    pub h_pub: usize,
    pub a_pub: usize,
    pub h_priv: usize,
    pub a_priv: usize,
    pub fusion_hidden: usize,
    pub y_width: usize,
    pub disc_hidden: Vec<usize>,
}

impl ArchitectureSpec {
    pub fn new(variant: Variant, task: Task, n_clients: usize, encoder: EncoderConfig) -> Self {
        let (h_pub, a_pub, h_priv, a_priv) = variant.widths();
        Self { variant, task, n_clients, encoder, h_pub, a_pub, h_priv, a_priv, fusion_hidden: 16, y_width: 8, disc_hidden: vec![128, 64] }
    }

    pub fn validate(&self) -> Result<(), NnError> {
        let hyb = self.variant.is_hybrid();
        if hyb && [self.h_pub, self.a_pub, self.h_priv, self.a_priv].contains(&0) {
            return Err(NnError::Config(format!("{} needs all four head widths", self.variant)));
        }
        if !hyb && (self.h_pub != 0 || self.a_pub != 0) {
            return Err(NnError::Config(format!("{} has no public head", self.variant)));
        }
        if self.n_clients < 2 {
            return Err(NnError::Config("at least two clients are required".into()));
        }
        let e = &self.encoder;
        if e.d_model % e.n_heads != 0 {
            return Err(NnError::Config(format!("d_model {} not divisible by {} heads", e.d_model, e.n_heads)));
        }
        Ok(())
    }

    pub fn embedding_width(&self) -> usize {
        self.h_pub + self.h_priv
    }
}

/// Named parameter tensors; modules refer to them by index.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    pub names: Vec<String>,
    pub values: Vec<Mat>,
}

impl ParamStore {
    pub fn add(&mut self, name: String, m: Mat) -> usize {
        assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.values.push(m);
        self.values.len() - 1
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: usize) -> &Mat {
        &self.values[id]
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn count(&self) -> usize {
        self.values.iter().map(|m| m.len()).sum()
    }
}

/// Which parameters a forward pass binds as trainable leaves.
#[derive(Clone, Copy)]
pub enum Bind<'f> {
    Frozen,
    All,
    Only(&'f dyn Fn(usize) -> bool),
}

impl Bind<'_> {
    fn leaf<'a>(&self, g: &mut Graph<'a>, store: &'a ParamStore, id: usize) -> Var {
        let train = match self {
            Bind::Frozen => false,
            Bind::All => true,
            Bind::Only(f) => f(id),
        };
        if train {
            g.param(store.get(id), id)
        } else {
            g.constant(store.get(id))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Linear {
    pub w: usize,
    pub b: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, d_in: usize, d_out: usize, rng: &mut impl Rng) -> Self {
        let w = store.add(format!("{name}.w"), Mat::xavier(d_in, d_out, rng));
        let b = store.add(format!("{name}.b"), Mat::zeros(1, d_out));
        Self { w, b }
    }

    pub fn forward<'a>(&self, g: &mut Graph<'a>, s: &'a ParamStore, bind: Bind, x: Var) -> Var {
        let w = bind.leaf(g, s, self.w);
        let b = bind.leaf(g, s, self.b);
        g.linear(x, w, b)
    }

    pub fn dims(&self, s: &ParamStore) -> (usize, usize) {
        s.get(self.w).shape()
    }
}

/// Linear layers with ReLU between consecutive layers.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    pub fn new(store: &mut ParamStore, name: &str, widths: &[usize], rng: &mut impl Rng) -> Self {
        let layers = widths.windows(2).enumerate().map(|(i, w)| Linear::new(store, &format!("{name}.{i}"), w[0], w[1], rng)).collect();
        Self { layers }
    }

    pub fn forward<'a>(&self, g: &mut Graph<'a>, s: &'a ParamStore, bind: Bind, mut x: Var) -> Var {
        for (i, l) in self.layers.iter().enumerate() {
            if i > 0 {
                x = g.relu(x);
            }
            x = l.forward(g, s, bind, x);
        }
        x
    }

    /// Plain inference.
    pub fn eval(&self, s: &ParamStore, x: &Mat) -> Mat {
        let mut g = Graph::new();
        let v = g.constant(x);
        let y = self.forward(&mut g, s, Bind::Frozen, v);
        g.value(y).clone()
    }

    pub fn widths(&self, s: &ParamStore) -> Vec<usize> {
        let mut w = vec![self.layers[0].dims(s).0];
        w.extend(self.layers.iter().map(|l| l.dims(s).1));
        w
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderLayer {
    pub qkv: Linear,
    pub out: Linear,
    pub ln1_g: usize,
    pub ln1_b: usize,
    pub ff1: Linear,
    pub ff2: Linear,
    pub ln2_g: usize,
    pub ln2_b: usize,
}

/// A batch of sequences for one encoder, stored as stacked rows.
///
/// Row `r` carries features `x.row(r)` at global position `positions[r]`;
/// `segs` delimits the sequences and `keep` marks rows that act as keys and
/// are pooled (all rows when `None`).
#[derive(Clone, Debug)]
pub struct EncoderInput {
    pub x: Mat,
    pub positions: Rc<Vec<usize>>,
    pub segs: Segments,
    pub keep: Option<Rc<Vec<bool>>>,
}

impl EncoderInput {
    pub fn batch(&self) -> usize {
        self.segs.len()
    }
}

/// Transformer encoder: input projection plus learned positional
/// embeddings, post-norm layers, mean-pool over kept rows, one output
/// projection.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Encoder {
    pub cfg: EncoderConfig,
    pub input: Linear,
    pub pos: usize,
    pub layers: Vec<EncoderLayer>,
    pub proj: Linear,
}

impl Encoder {
    pub fn new(store: &mut ParamStore, name: &str, cfg: &EncoderConfig, out: usize, rng: &mut impl Rng) -> Self {
        let d = cfg.d_model;
        let input = Linear::new(store, &format!("{name}.in"), cfg.d_in, d, rng);
        let pos = store.add(format!("{name}.pos"), Mat::randn(cfg.max_len, d, 0.02, rng));
        let layers = (0..cfg.n_layers)
            .map(|l| {
                let p = format!("{name}.l{l}");
                EncoderLayer {
                    qkv: Linear::new(store, &format!("{p}.qkv"), d, 3 * d, rng),
                    out: Linear::new(store, &format!("{p}.o"), d, d, rng),
                    ln1_g: store.add(format!("{p}.ln1.g"), Mat::filled(1, d, 1.0)),
                    ln1_b: store.add(format!("{p}.ln1.b"), Mat::zeros(1, d)),
                    ff1: Linear::new(store, &format!("{p}.ff1"), d, cfg.d_ff, rng),
                    ff2: Linear::new(store, &format!("{p}.ff2"), cfg.d_ff, d, rng),
                    ln2_g: store.add(format!("{p}.ln2.g"), Mat::filled(1, d, 1.0)),
                    ln2_b: store.add(format!("{p}.ln2.b"), Mat::zeros(1, d)),
                }
            })
            .collect();
        let proj = Linear::new(store, &format!("{name}.proj"), d, out, rng);
        Self { cfg: cfg.clone(), input, pos, layers, proj }
    }

    pub fn out_width(&self, s: &ParamStore) -> usize {
        self.proj.dims(s).1
    }

    /// Sequence representation after the last layer, before pooling.
    pub fn body<'a>(&self, g: &mut Graph<'a>, s: &'a ParamStore, bind: Bind, inp: &'a EncoderInput) -> Result<Var, NnError> {
        if inp.x.cols != self.cfg.d_in {
            return Err(NnError::Shape(format!("encoder input width {} expected {}", inp.x.cols, self.cfg.d_in)));
        }
        if let Some(&p) = inp.positions.iter().find(|&&p| p >= self.cfg.max_len) {
            return Err(NnError::Shape(format!("position {p} beyond max_len {}", self.cfg.max_len)));
        }
        let x = g.constant(&inp.x);
        let mut h = self.input.forward(g, s, bind, x);
        let table = bind.leaf(g, s, self.pos);
        let pe = g.gather(table, inp.positions.clone());
        h = g.add(h, pe);
        for l in &self.layers {
            let qkv = l.qkv.forward(g, s, bind, h);
            let a = g.attention(qkv, self.cfg.n_heads, inp.segs.clone(), inp.keep.clone())?;
            let o = l.out.forward(g, s, bind, a);
            let r = g.add(h, o);
            let (lg, lb) = (bind.leaf(g, s, l.ln1_g), bind.leaf(g, s, l.ln1_b));
            h = g.layernorm(r, lg, lb);
            let f = l.ff1.forward(g, s, bind, h);
            let f = g.relu(f);
            let f = l.ff2.forward(g, s, bind, f);
            let r = g.add(h, f);
            let (lg, lb) = (bind.leaf(g, s, l.ln2_g), bind.leaf(g, s, l.ln2_b));
            h = g.layernorm(r, lg, lb);
        }
        Ok(h)
    }

    /// `batch x out` embeddings.
    pub fn forward<'a>(&self, g: &mut Graph<'a>, s: &'a ParamStore, bind: Bind, inp: &'a EncoderInput) -> Result<Var, NnError> {
        let h = self.body(g, s, bind, inp)?;
        let pooled = match &inp.keep {
            None => g.seg_mean(h, inp.segs.clone()),
            Some(k) => {
                let mut rows = Vec::new();
                let mut segs = Vec::with_capacity(inp.segs.len());
                for &(start, len) in inp.segs.iter() {
                    let s0 = rows.len();
                    rows.extend((start..start + len).filter(|&r| k[r]));
                    segs.push((s0, rows.len() - s0));
                }
                let owned = g.gather(h, Rc::new(rows));
                g.seg_mean(owned, Rc::new(segs))
            }
        };
        Ok(self.proj.forward(g, s, bind, pooled))
    }
}

/// Encoders, heads and discriminator of one vertically federated model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelBundle {
    pub spec: ArchitectureSpec,
    pub store: ParamStore,
    pub encoders: Vec<Encoder>,
    pub public_head: Option<Mlp>,
    pub private_head: Mlp,
    pub fusion_head: Option<Mlp>,
    pub discriminator: Option<Mlp>,
    pub metadata: BTreeMap<String, String>,
}

impl ModelBundle {
    pub fn new(spec: &ArchitectureSpec, rng: &mut impl Rng) -> Result<Self, NnError> {
        spec.validate()?;
        let mut store = ParamStore::default();
        let n = spec.n_clients;
        // Every encoder starts from the same draw; they diverge only through training.
        let enc_seed: u64 = rng.random();
        let encoders = (0..n)
            .map(|i| Encoder::new(&mut store, &format!("enc{i}"), &spec.encoder, spec.embedding_width(), &mut ChaCha12Rng::seed_from_u64(enc_seed)))
            .collect();
        let (public_head, private_head, fusion_head, discriminator) = if spec.variant.is_hybrid() {
            let public = Mlp::new(&mut store, "pub", &[n * spec.h_pub, spec.a_pub, spec.a_pub, spec.y_width], rng);
            let private = Mlp::new(&mut store, "priv", &[n * spec.h_priv, spec.a_priv, spec.y_width], rng);
            let fusion = Mlp::new(&mut store, "fus", &[2 * spec.y_width, spec.fusion_hidden, 1], rng);
            let mut dw = vec![spec.h_pub];
            dw.extend(&spec.disc_hidden);
            dw.push(n);
            let disc = Mlp::new(&mut store, "disc", &dw, rng);
            (Some(public), private, Some(fusion), Some(disc))
        } else {
            let private = Mlp::new(&mut store, "priv", &[n * spec.h_priv, spec.a_priv, spec.a_priv, 1], rng);
            (None, private, None, None)
        };
        Ok(Self { spec: spec.clone(), store, encoders, public_head, private_head, fusion_head, discriminator, metadata: BTreeMap::new() })
    }

    /// Parameter ids of the discriminator.
    pub fn disc_params(&self) -> Vec<usize> {
        self.discriminator.iter().flat_map(|d| d.layers.iter().flat_map(|l| [l.w, l.b])).collect()
    }

    pub fn is_disc_param(&self, id: usize) -> bool {
        self.store.names[id].starts_with("disc.")
    }

    pub fn is_encoder_param(&self, id: usize) -> bool {
        self.store.names[id].starts_with("enc")
    }

    /// Plain inference of the heads from per-client embeddings
    /// (`batch x (h_pub + h_priv)` each); returns `(output, y_pub, y_priv)`.
    pub fn heads_eval(&self, emb: &[Mat]) -> (Mat, Option<Mat>, Mat) {
        let hp = self.spec.h_pub;
        let pubs: Vec<Mat> = emb.iter().map(|e| e.cols_slice(0, hp)).collect();
        let privs: Vec<Mat> = emb.iter().map(|e| e.cols_slice(hp, e.cols)).collect();
        let e_priv = Mat::hcat(&privs.iter().collect::<Vec<_>>());
        let y_priv = self.private_head.eval(&self.store, &e_priv);
        match (&self.public_head, &self.fusion_head) {
            (Some(ph), Some(fh)) => {
                let e_pub = Mat::hcat(&pubs.iter().collect::<Vec<_>>());
                let y_pub = ph.eval(&self.store, &e_pub);
                let out = fh.eval(&self.store, &Mat::hcat(&[&y_pub, &y_priv]));
                (out, Some(y_pub), y_priv)
            }
            _ => (y_priv.clone(), None, y_priv),
        }
    }
}

/// Centralised model for the fully-secure baseline: one encoder over the
/// whole sequence and an MLP head.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CentralModel {
    pub task: Task,
    pub store: ParamStore,
    pub encoder: Encoder,
    pub head: Mlp,
}

impl CentralModel {
    pub fn new(cfg: &EncoderConfig, emb: usize, hidden: usize, task: Task, rng: &mut impl Rng) -> Self {
        let mut store = ParamStore::default();
        let encoder = Encoder::new(&mut store, "enc", cfg, emb, rng);
        let head = Mlp::new(&mut store, "head", &[emb, hidden, 1], rng);
        Self { task, store, encoder, head }
    }

    pub fn forward<'a>(&'a self, g: &mut Graph<'a>, bind: Bind, inp: &'a EncoderInput) -> Result<Var, NnError> {
        let e = self.encoder.forward(g, &self.store, bind, inp)?;
        Ok(self.head.forward(g, &self.store, bind, e))
    }

    pub fn eval(&self, inp: &EncoderInput) -> Result<Mat, NnError> {
        let mut g = Graph::new();
        let y = self.forward(&mut g, Bind::Frozen, inp)?;
        Ok(g.value(y).clone())
    }
}
