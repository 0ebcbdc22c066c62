//! Reverse-mode autodiff over 2-D matrices.
//!
//! A [`Graph`] is a tape: nodes are appended in evaluation order, so the
//! reverse sweep in [`Graph::backward`] visits each node once in reverse
//! topological order. Leaves borrow their values, so inference over a frozen
//! model copies no weights.

use std::borrow::Cow;
use std::rc::Rc;

use super::mat::Mat;
use super::NnError;

pub const LN_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

/// Contiguous row ranges `(start, len)` that attend and pool independently.
pub type Segments = Rc<Vec<(usize, usize)>>;

enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    LayerNorm { x: Var, g: Var, b: Var, xhat: Mat, rstd: Vec<f64> },
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    Gather(Var, Rc<Vec<usize>>),
    SegMean(Var, Segments),
    Attention { qkv: Var, heads: usize, segs: Segments, probs: Vec<Vec<f64>> },
    Softmax(Var),
    BceLogits(Var, Rc<Vec<f64>>),
    Mse(Var, Rc<Vec<f64>>),
    CrossEntropy(Var, Rc<Vec<usize>>),
}

struct Node<'a> {
    value: Cow<'a, Mat>,
    op: Op,
    param: Option<usize>,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Graph<'a> {
    nodes: Vec<Node<'a>>,
}

/// Adjoints indexed by parameter id.
#[derive(Clone, Debug, Default)]
pub struct ParamGrads {
    pub grads: Vec<Option<Mat>>,
}

impl ParamGrads {
    pub fn get(&self, id: usize) -> Option<&Mat> {
        self.grads.get(id).and_then(|g| g.as_ref())
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(z))` without overflow.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

impl<'a> Graph<'a> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Mat, op: Op, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node { value: Cow::Owned(value), op, param: None, needs_grad });
        Var(self.nodes.len() - 1)
    }

    /// A leaf that receives no gradient.
    pub fn constant(&mut self, m: &'a Mat) -> Var {
        self.nodes.push(Node { value: Cow::Borrowed(m), op: Op::Leaf, param: None, needs_grad: false });
        Var(self.nodes.len() - 1)
    }

    pub fn constant_owned(&mut self, m: Mat) -> Var {
        self.nodes.push(Node { value: Cow::Owned(m), op: Op::Leaf, param: None, needs_grad: false });
        Var(self.nodes.len() - 1)
    }

    /// A trainable leaf bound to parameter `id`.
    pub fn param(&mut self, m: &'a Mat, id: usize) -> Var {
        self.nodes.push(Node { value: Cow::Borrowed(m), op: Op::Leaf, param: Some(id), needs_grad: true });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        assert_eq!(m.len(), 1, "not a scalar");
        m.data[0]
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul(self.value(b));
        self.push(v, Op::MatMul(a, b), &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip(self.value(b), |x, y| x + y);
        self.push(v, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip(self.value(b), |x, y| x - y);
        self.push(v, Op::Sub(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip(self.value(b), |x, y| x * y);
        self.push(v, Op::Mul(a, b), &[a, b])
    }

    /// `a + 1 * bias` with a `1 x cols` bias.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Var {
        let (x, b) = (self.value(a), self.value(bias));
        assert_eq!((b.rows, b.cols), (1, x.cols), "bias shape");
        let mut v = x.clone();
        for r in 0..v.rows {
            v.row_mut(r).iter_mut().zip(&b.data).for_each(|(p, q)| *p += q);
        }
        self.push(v, Op::AddBias(a, bias), &[a, bias])
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a).scale(s);
        self.push(v, Op::Scale(a, s), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.max(0.0));
        self.push(v, Op::Relu(a), &[a])
    }

    /// `x W + b`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let y = self.matmul(x, w);
        self.add_bias(y, b)
    }

    /// Per-row normalisation with `1 x cols` gain and shift.
    pub fn layernorm(&mut self, x: Var, g: Var, b: Var) -> Var {
        let xm = self.value(x);
        let (rows, cols) = xm.shape();
        let mut xhat = Mat::zeros(rows, cols);
        let mut rstd = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = xm.row(r);
            let mu = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / cols as f64;
            let s = 1.0 / (var + LN_EPS).sqrt();
            rstd.push(s);
            xhat.row_mut(r).iter_mut().zip(row).for_each(|(o, v)| *o = (v - mu) * s);
        }
        let (gm, bm) = (self.value(g), self.value(b));
        let mut y = xhat.clone();
        for r in 0..rows {
            y.row_mut(r).iter_mut().zip(gm.data.iter().zip(&bm.data)).for_each(|(o, (gg, bb))| *o = *o * gg + bb);
        }
        self.push(y, Op::LayerNorm { x, g, b, xhat, rstd }, &[x, g, b])
    }

    pub fn slice_cols(&mut self, a: Var, c0: usize, c1: usize) -> Var {
        let v = self.value(a).cols_slice(c0, c1);
        self.push(v, Op::SliceCols(a, c0), &[a])
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let mats: Vec<&Mat> = parts.iter().map(|p| self.value(*p)).collect();
        let v = Mat::hcat(&mats);
        self.push(v, Op::ConcatCols(parts.to_vec()), parts)
    }

    /// Rows `idx[i]` of `table`.
    pub fn gather(&mut self, table: Var, idx: Rc<Vec<usize>>) -> Var {
        let t = self.value(table);
        let mut out = Mat::zeros(idx.len(), t.cols);
        for (i, &j) in idx.iter().enumerate() {
            out.row_mut(i).copy_from_slice(t.row(j));
        }
        self.push(out, Op::Gather(table, idx), &[table])
    }

    /// Mean of each segment's rows; one output row per segment.
    pub fn seg_mean(&mut self, a: Var, segs: Segments) -> Var {
        let x = self.value(a);
        let mut out = Mat::zeros(segs.len(), x.cols);
        for (s, &(start, len)) in segs.iter().enumerate() {
            let inv = 1.0 / len as f64;
            for r in start..start + len {
                out.row_mut(s).iter_mut().zip(x.row(r)).for_each(|(o, v)| *o += v * inv);
            }
        }
        self.push(out, Op::SegMean(a, segs), &[a])
    }

    /// Multi-head scaled dot-product self-attention inside each segment.
    ///
    /// `qkv` is `rows x 3d` holding the projected queries, keys and values.
    /// Keys with `keep[row] == false` get zero weight; a segment with no kept
    /// key is an error.
    pub fn attention(&mut self, qkv: Var, heads: usize, segs: Segments, keep: Option<Rc<Vec<bool>>>) -> Result<Var, NnError> {
        let x = self.value(qkv);
        let d = x.cols / 3;
        if x.cols != 3 * d || d % heads != 0 {
            return Err(NnError::Shape(format!("attention input width {} for {heads} heads", x.cols)));
        }
        if let Some(k) = &keep {
            if k.len() != x.rows {
                return Err(NnError::Shape(format!("mask length {} for {} positions", k.len(), x.rows)));
            }
        }
        let dk = d / heads;
        let scale = 1.0 / (dk as f64).sqrt();
        let mut out = Mat::zeros(x.rows, d);
        let mut probs = Vec::with_capacity(segs.len() * heads);
        for &(start, len) in segs.iter() {
            let kept: Vec<bool> = (start..start + len).map(|r| keep.as_ref().is_none_or(|k| k[r])).collect();
            if !kept.iter().any(|&k| k) {
                return Err(NnError::FullyMasked { start });
            }
            for h in 0..heads {
                let (qo, ko, vo) = (h * dk, d + h * dk, 2 * d + h * dk);
                let mut p = vec![0.0; len * len];
                for i in 0..len {
                    let q = &x.row(start + i)[qo..qo + dk];
                    let mut mx = f64::NEG_INFINITY;
                    for j in 0..len {
                        if kept[j] {
                            let k = &x.row(start + j)[ko..ko + dk];
                            let s = scale * q.iter().zip(k).map(|(a, b)| a * b).sum::<f64>();
                            p[i * len + j] = s;
                            mx = mx.max(s);
                        }
                    }
                    let mut z = 0.0;
                    for j in 0..len {
                        let e = if kept[j] { (p[i * len + j] - mx).exp() } else { 0.0 };
                        p[i * len + j] = e;
                        z += e;
                    }
                    let o = &mut out.row_mut(start + i)[h * dk..(h + 1) * dk];
                    for j in 0..len {
                        let w = p[i * len + j] / z;
                        p[i * len + j] = w;
                        if w != 0.0 {
                            let v = &x.row(start + j)[vo..vo + dk];
                            o.iter_mut().zip(v).for_each(|(a, b)| *a += w * b);
                        }
                    }
                }
                probs.push(p);
            }
        }
        Ok(self.push(out, Op::Attention { qkv, heads, segs, probs }, &[qkv]))
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut out = x.clone();
        for r in 0..out.rows {
            let row = out.row_mut(r);
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            row.iter_mut().for_each(|v| {
                *v = (*v - mx).exp();
                z += *v;
            });
            row.iter_mut().for_each(|v| *v /= z);
        }
        self.push(out, Op::Softmax(a), &[a])
    }

    /// Mean binary cross-entropy of `rows x 1` logits against 0/1 targets.
    pub fn bce_logits(&mut self, logits: Var, targets: Rc<Vec<f64>>) -> Var {
        let z = self.value(logits);
        assert_eq!(z.len(), targets.len());
        let l = z.data.iter().zip(targets.iter()).map(|(&z, &t)| softplus(z) - t * z).sum::<f64>() / z.len() as f64;
        self.push(Mat::filled(1, 1, l), Op::BceLogits(logits, targets), &[logits])
    }

    /// Mean squared error.
    pub fn mse(&mut self, pred: Var, targets: Rc<Vec<f64>>) -> Var {
        let p = self.value(pred);
        assert_eq!(p.len(), targets.len());
        let l = p.data.iter().zip(targets.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / p.len() as f64;
        self.push(Mat::filled(1, 1, l), Op::Mse(pred, targets), &[pred])
    }

    /// Mean multi-class cross-entropy of `rows x classes` logits.
    pub fn cross_entropy(&mut self, logits: Var, labels: Rc<Vec<usize>>) -> Result<Var, NnError> {
        let z = self.value(logits);
        if labels.len() != z.rows {
            return Err(NnError::Shape(format!("{} labels for {} rows", labels.len(), z.rows)));
        }
        let mut l = 0.0;
        for (r, &y) in labels.iter().enumerate() {
            if y >= z.cols {
                return Err(NnError::Label { label: y, classes: z.cols });
            }
            let row = z.row(r);
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = mx + row.iter().map(|v| (v - mx).exp()).sum::<f64>().ln();
            l += lse - row[y];
        }
        l /= z.rows as f64;
        Ok(self.push(Mat::filled(1, 1, l), Op::CrossEntropy(logits, labels), &[logits]))
    }

    /// Reverse sweep from a scalar `loss`; returns adjoints of parameter leaves.
    pub fn backward(&self, loss: Var) -> ParamGrads {
        assert_eq!(self.value(loss).len(), 1, "loss must be a scalar");
        let n = loss.0 + 1;
        let mut adj: Vec<Option<Mat>> = (0..n).map(|_| None).collect();
        adj[loss.0] = Some(Mat::filled(1, 1, 1.0));
        let mut out = ParamGrads::default();
        for i in (0..n).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            if let Some(id) = node.param {
                if out.grads.len() <= id {
                    out.grads.resize(id + 1, None);
                }
                match &mut out.grads[id] {
                    Some(acc) => acc.add_assign(&g),
                    slot => *slot = Some(g.clone()),
                }
                continue;
            }
            self.propagate(&node.op, &self.nodes[i].value, g, &mut adj);
        }
        out
    }

    fn acc(&self, adj: &mut [Option<Mat>], v: Var, g: Mat) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        match &mut adj[v.0] {
            Some(a) => a.add_assign(&g),
            slot => *slot = Some(g),
        }
    }

    fn propagate(&self, op: &Op, y: &Mat, g: Mat, adj: &mut [Option<Mat>]) {
        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.nodes[a.0].needs_grad {
                    self.acc(adj, *a, g.gemm(false, bv, true));
                }
                if self.nodes[b.0].needs_grad {
                    self.acc(adj, *b, av.gemm(true, &g, false));
                }
            }
            Op::Add(a, b) => {
                self.acc(adj, *a, g.clone());
                self.acc(adj, *b, g);
            }
            Op::Sub(a, b) => {
                self.acc(adj, *b, g.scale(-1.0));
                self.acc(adj, *a, g);
            }
            Op::Mul(a, b) => {
                let ga = g.zip(self.value(*b), |x, y| x * y);
                let gb = g.zip(self.value(*a), |x, y| x * y);
                self.acc(adj, *a, ga);
                self.acc(adj, *b, gb);
            }
            Op::AddBias(a, b) => {
                let mut gb = Mat::zeros(1, g.cols);
                for r in 0..g.rows {
                    gb.data.iter_mut().zip(g.row(r)).for_each(|(o, v)| *o += v);
                }
                self.acc(adj, *b, gb);
                self.acc(adj, *a, g);
            }
            Op::Scale(a, s) => self.acc(adj, *a, g.scale(*s)),
            Op::Relu(a) => {
                let x = self.value(*a);
                self.acc(adj, *a, g.zip(x, |gv, xv| if xv > 0.0 { gv } else { 0.0 }));
            }
            Op::LayerNorm { x, g: gam, b, xhat, rstd } => {
                let gv = &self.value(*gam).data;
                let (rows, cols) = xhat.shape();
                let mut dg = Mat::zeros(1, cols);
                let mut db = Mat::zeros(1, cols);
                let mut dx = Mat::zeros(rows, cols);
                for (r, &rs) in rstd.iter().enumerate().take(rows) {
                    let (gr, xr) = (g.row(r), xhat.row(r));
                    let mut m1 = 0.0;
                    let mut m2 = 0.0;
                    for c in 0..cols {
                        dg.data[c] += gr[c] * xr[c];
                        db.data[c] += gr[c];
                        let dh = gr[c] * gv[c];
                        m1 += dh;
                        m2 += dh * xr[c];
                    }
                    m1 /= cols as f64;
                    m2 /= cols as f64;
                    let o = dx.row_mut(r);
                    for c in 0..cols {
                        o[c] = rs * (gr[c] * gv[c] - m1 - xr[c] * m2);
                    }
                }
                self.acc(adj, *gam, dg);
                self.acc(adj, *b, db);
                self.acc(adj, *x, dx);
            }
            Op::SliceCols(a, c0) => {
                let x = self.value(*a);
                let mut dx = Mat::zeros(x.rows, x.cols);
                for r in 0..g.rows {
                    dx.row_mut(r)[*c0..*c0 + g.cols].copy_from_slice(g.row(r));
                }
                self.acc(adj, *a, dx);
            }
            Op::ConcatCols(parts) => {
                let mut c = 0;
                for p in parts {
                    let w = self.value(*p).cols;
                    self.acc(adj, *p, g.cols_slice(c, c + w));
                    c += w;
                }
            }
            Op::Gather(t, idx) => {
                let tv = self.value(*t);
                let mut dt = Mat::zeros(tv.rows, tv.cols);
                for (i, &j) in idx.iter().enumerate() {
                    dt.row_mut(j).iter_mut().zip(g.row(i)).for_each(|(o, v)| *o += v);
                }
                self.acc(adj, *t, dt);
            }
            Op::SegMean(a, segs) => {
                let x = self.value(*a);
                let mut dx = Mat::zeros(x.rows, x.cols);
                for (s, &(start, len)) in segs.iter().enumerate() {
                    let inv = 1.0 / len as f64;
                    for r in start..start + len {
                        dx.row_mut(r).iter_mut().zip(g.row(s)).for_each(|(o, v)| *o += v * inv);
                    }
                }
                self.acc(adj, *a, dx);
            }
            Op::Attention { qkv, heads, segs, probs, .. } => {
                let x = self.value(*qkv);
                let d = x.cols / 3;
                let dk = d / heads;
                let scale = 1.0 / (dk as f64).sqrt();
                let mut dx = Mat::zeros(x.rows, x.cols);
                let mut pi = 0;
                for &(start, len) in segs.iter() {
                    for h in 0..*heads {
                        let p = &probs[pi];
                        pi += 1;
                        let (qo, ko, vo) = (h * dk, d + h * dk, 2 * d + h * dk);
                        for i in 0..len {
                            let go = &g.row(start + i)[h * dk..(h + 1) * dk];
                            let mut dp = vec![0.0; len];
                            let mut dot = 0.0;
                            for j in 0..len {
                                let w = p[i * len + j];
                                if w == 0.0 {
                                    continue;
                                }
                                let v = &x.row(start + j)[vo..vo + dk];
                                dp[j] = go.iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
                                dot += w * dp[j];
                                let dv = &mut dx.row_mut(start + j)[vo..vo + dk];
                                dv.iter_mut().zip(go).for_each(|(o, gv)| *o += w * gv);
                            }
                            for j in 0..len {
                                let w = p[i * len + j];
                                if w == 0.0 {
                                    continue;
                                }
                                let ds = w * (dp[j] - dot) * scale;
                                let k: Vec<f64> = x.row(start + j)[ko..ko + dk].to_vec();
                                let q: Vec<f64> = x.row(start + i)[qo..qo + dk].to_vec();
                                dx.row_mut(start + i)[qo..qo + dk].iter_mut().zip(&k).for_each(|(o, kv)| *o += ds * kv);
                                dx.row_mut(start + j)[ko..ko + dk].iter_mut().zip(&q).for_each(|(o, qv)| *o += ds * qv);
                            }
                        }
                    }
                }
                self.acc(adj, *qkv, dx);
            }
            Op::Softmax(a) => {
                let mut dx = Mat::zeros(y.rows, y.cols);
                for r in 0..y.rows {
                    let (yr, gr) = (y.row(r), g.row(r));
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    dx.row_mut(r).iter_mut().enumerate().for_each(|(c, o)| *o = yr[c] * (gr[c] - dot));
                }
                self.acc(adj, *a, dx);
            }
            Op::BceLogits(z, t) => {
                let zv = self.value(*z);
                let s = g.data[0] / zv.len() as f64;
                let dz = Mat::from_vec(zv.rows, zv.cols, zv.data.iter().zip(t.iter()).map(|(&z, &t)| s * (sigmoid(z) - t)).collect());
                self.acc(adj, *z, dz);
            }
            Op::Mse(p, t) => {
                let pv = self.value(*p);
                let s = 2.0 * g.data[0] / pv.len() as f64;
                let dp = Mat::from_vec(pv.rows, pv.cols, pv.data.iter().zip(t.iter()).map(|(a, b)| s * (a - b)).collect());
                self.acc(adj, *p, dp);
            }
            Op::CrossEntropy(z, labels) => {
                let zv = self.value(*z);
                let s = g.data[0] / zv.rows as f64;
                let mut dz = Mat::zeros(zv.rows, zv.cols);
                for (r, &lab) in labels.iter().enumerate() {
                    let row = zv.row(r);
                    let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let z: f64 = row.iter().map(|v| (v - mx).exp()).sum();
                    let o = dz.row_mut(r);
                    for c in 0..row.len() {
                        o[c] = s * ((row[c] - mx).exp() / z - if c == lab { 1.0 } else { 0.0 });
                    }
                }
                self.acc(adj, *z, dz);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_gradient() {
        let x = Mat::filled(1, 1, 3.0);
        let mut g = Graph::new();
        let v = g.param(&x, 0);
        let y = g.mul(v, v);
        let grads = g.backward(y);
        assert!((grads.get(0).unwrap().data[0] - 6.0).abs() < 1e-12);
    }

    #[test]
    fn constants_get_no_gradient() {
        let x = Mat::filled(2, 2, 1.0);
        let w = Mat::filled(2, 2, 0.5);
        let mut g = Graph::new();
        let a = g.constant(&x);
        let b = g.param(&w, 1);
        let y = g.matmul(a, b);
        let l = g.mse(y, Rc::new(vec![0.0; 4]));
        let grads = g.backward(l);
        assert!(grads.get(0).is_none());
        assert!(grads.get(1).is_some());
    }

    #[test]
    fn attention_rejects_fully_masked_segment() {
        let x = Mat::filled(2, 6, 0.1);
        let mut g = Graph::new();
        let v = g.constant(&x);
        let r = g.attention(v, 1, Rc::new(vec![(0, 2)]), Some(Rc::new(vec![false, false])));
        assert!(matches!(r, Err(NnError::FullyMasked { .. })));
    }
}
