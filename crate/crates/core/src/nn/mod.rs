//! Plaintext neural-network stack: matrices, tape autodiff, transformer
//! encoder, MLP heads, AdamW and checkpoints.

pub mod checkpoint;
pub mod graph;
pub mod mat;
pub mod model;
pub mod optim;

use std::rc::Rc;

use thiserror::Error;

pub use graph::{Graph, ParamGrads, Segments, Var, LN_EPS};
pub use mat::Mat;
pub use model::{ArchitectureSpec, Bind, CentralModel, Encoder, EncoderConfig, EncoderInput, Linear, Mlp, ModelBundle, ParamStore, Task, Variant};
pub use optim::{AdamW, AdamWConfig};

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("every key of the segment starting at row {start} is masked")]
    FullyMasked { start: usize },
    #[error("label {label} out of range for {classes} classes")]
    Label { label: usize, classes: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("non-finite {0}")]
    NonFinite(String),
}

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), NnError> {
    if cond {
        Ok(())
    } else {
        Err(NnError::Shape(msg()))
    }
}

/// `x W + b` for `b` of shape `1 x cols(W)`.
pub fn linear_forward(x: &Mat, w: &Mat, b: &Mat) -> Result<Mat, NnError> {
    check(x.cols == w.rows, || format!("linear {}x{} by {}x{}", x.rows, x.cols, w.rows, w.cols))?;
    check(b.rows == 1 && b.cols == w.cols, || format!("bias {}x{} for width {}", b.rows, b.cols, w.cols))?;
    let mut g = Graph::new();
    let (xv, wv, bv) = (g.constant(x), g.constant(w), g.constant(b));
    let y = g.linear(xv, wv, bv);
    Ok(g.value(y).clone())
}

pub fn relu_forward(x: &Mat) -> Mat {
    x.map(|v| v.max(0.0))
}

/// Row-wise softmax.
pub fn softmax_forward(x: &Mat) -> Mat {
    let mut g = Graph::new();
    let v = g.constant(x);
    let y = g.softmax(v);
    g.value(y).clone()
}

/// Per-row layer normalisation with gain `g` and shift `b` (`1 x cols`).
pub fn layernorm_forward(x: &Mat, g: &Mat, b: &Mat) -> Result<Mat, NnError> {
    check(g.cols == x.cols && b.cols == x.cols, || format!("layernorm affine {} for width {}", g.cols, x.cols))?;
    let mut gr = Graph::new();
    let (xv, gv, bv) = (gr.constant(x), gr.constant(g), gr.constant(b));
    let y = gr.layernorm(xv, gv, bv);
    Ok(gr.value(y).clone())
}

/// Multi-head self-attention of one sequence with identity projections:
/// `qkv` is `len x 3d`; `keep[j] == false` excludes key `j`.
pub fn attention_forward(qkv: &Mat, heads: usize, keep: Option<&[bool]>) -> Result<Mat, NnError> {
    let mut g = Graph::new();
    let v = g.constant(qkv);
    let y = g.attention(v, heads, Rc::new(vec![(0, qkv.rows)]), keep.map(|k| Rc::new(k.to_vec())))?;
    Ok(g.value(y).clone())
}

/// Largest relative error between the analytic gradient of `loss` and
/// central finite differences with step `eps`, over every entry of the
/// parameters selected by `ids`.
///
/// `loss` rebuilds the graph from the store and returns the loss value
/// together with its parameter gradients.
pub fn grad_check<F>(store: &mut ParamStore, ids: &[usize], eps: f64, loss: F) -> f64
where
    F: Fn(&ParamStore) -> (f64, ParamGrads),
{
    let (_, grads) = loss(store);
    let mut worst: f64 = 0.0;
    for &id in ids {
        let analytic = grads.get(id).cloned().unwrap_or_else(|| Mat::zeros(store.get(id).rows, store.get(id).cols));
        for i in 0..store.get(id).len() {
            let x0 = store.values[id].data[i];
            store.values[id].data[i] = x0 + eps;
            let (lp, _) = loss(store);
            store.values[id].data[i] = x0 - eps;
            let (lm, _) = loss(store);
            store.values[id].data[i] = x0;
            let numeric = (lp - lm) / (2.0 * eps);
            let a = analytic.data[i];
            let denom = a.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max((a - numeric).abs() / denom);
        }
    }
    worst
}
