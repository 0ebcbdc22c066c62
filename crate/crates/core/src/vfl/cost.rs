//! Closed-form rounds, bytes, correlations and plaintext FLOPs of the
//! three pipelines.
//!
//! Byte counts include 6 header bytes per frame and 8 bytes per ring
//! element; both compute parties send one frame per round. Per element of
//! input, the interactive primitives open:
//!
//! | op | frames | elements |
//! |---|---|---|
//! | mul | 1 | 2 |
//! | matmul `m x k` by `k x n` | 1 | `mk + kn` (whole) |
//! | msb | 8 | 19 |
//! | relu | 9 | 21 |
//! | reveal | 1 | 1 |
//!
//! `share_input` is one round in which only the owner sends a payload.

use crate::mpc::nonlinear::{DECAY_EXP_ROUNDS, EXP_ROUNDS, INV_SQRT_INIT, INV_SQRT_ITERS, LAYERNORM_ROUNDS, RECIPROCAL_ROUNDS, RELU_ROUNDS, SOFTMAX_ROUNDS};
use crate::mpc::{Requirement, TapeSpec};
use crate::netsim::frame_bytes;
use crate::nn::{ArchitectureSpec, EncoderConfig};

/// Public shift subtracted from attention scores before the secure
/// exponential; scores must lie in `[shift - 16, shift + 4]`.
pub const E2E_SOFTMAX_SHIFT: f64 = 2.0;

fn head_widths(spec: &ArchitectureSpec) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
    let n = spec.n_clients;
    if spec.variant.is_hybrid() {
        (
            vec![n * spec.h_pub, spec.a_pub, spec.a_pub, spec.y_width],
            vec![n * spec.h_priv, spec.a_priv, spec.y_width],
            vec![2 * spec.y_width, spec.fusion_hidden, 1],
        )
    } else {
        (Vec::new(), vec![n * spec.h_priv, spec.a_priv, spec.a_priv, 1], Vec::new())
    }
}

pub fn mlp_tape(batch: usize, widths: &[usize]) -> TapeSpec {
    let mut s = TapeSpec::new();
    for (i, w) in widths.windows(2).enumerate() {
        if i > 0 {
            s.extend(&TapeSpec::relu(batch * w[0]));
        }
        s.push(Requirement::Matmul { m: batch, k: w[0], n: w[1] });
    }
    s
}

pub fn mlp_rounds(n_layers: usize) -> u64 {
    n_layers as u64 + n_layers.saturating_sub(1) as u64 * RELU_ROUNDS
}

fn relu_bytes(len: usize) -> u64 {
    RELU_ROUNDS * frame_bytes(0) + 8 * 21 * len as u64
}

fn mul_bytes(len: usize) -> u64 {
    frame_bytes(2 * len)
}

/// Bytes one compute party sends evaluating an MLP on `batch` rows.
pub fn mlp_bytes_per_party(batch: usize, widths: &[usize]) -> u64 {
    widths.windows(2).enumerate().map(|(i, w)| frame_bytes(batch * w[0] + w[0] * w[1]) + if i > 0 { relu_bytes(batch * w[0]) } else { 0 }).sum()
}

pub fn vfl_mpc_tape(spec: &ArchitectureSpec, batch: usize) -> TapeSpec {
    mlp_tape(batch, &head_widths(spec).1)
}

/// Head rounds plus the output reveal.
pub fn vfl_mpc_rounds(spec: &ArchitectureSpec) -> u64 {
    mlp_rounds(head_widths(spec).1.len() - 1) + 1
}

/// Client uplinks, both parties' head traffic, the reveal and the
/// delivery of outputs to every client.
pub fn vfl_mpc_bytes(spec: &ArchitectureSpec, batch: usize) -> u64 {
    let n = spec.n_clients as u64;
    let (_, private, _) = head_widths(spec);
    2 * n * frame_bytes(batch * spec.h_priv) + 2 * mlp_bytes_per_party(batch, &private) + 2 * frame_bytes(batch) + n * frame_bytes(batch)
}

pub fn pphh_tape(spec: &ArchitectureSpec, batch: usize) -> TapeSpec {
    let (_, private, fusion) = head_widths(spec);
    let mut s = mlp_tape(batch, &private);
    s.extend(&mlp_tape(batch, &fusion));
    s
}

/// Public-embedding push (one round by convention), private head, sharing
/// of `y_pub`, fusion head and reveal.
pub fn pphh_rounds(spec: &ArchitectureSpec) -> u64 {
    let (_, private, fusion) = head_widths(spec);
    1 + mlp_rounds(private.len() - 1) + 1 + mlp_rounds(fusion.len() - 1) + 1
}

pub fn pphh_bytes(spec: &ArchitectureSpec, batch: usize) -> u64 {
    let n = spec.n_clients as u64;
    let (_, private, fusion) = head_widths(spec);
    n * frame_bytes(batch * spec.h_pub)
        + 2 * n * frame_bytes(batch * spec.h_priv)
        + 2 * mlp_bytes_per_party(batch, &private)
        + frame_bytes(batch * spec.y_width)
        + frame_bytes(0)
        + 2 * mlp_bytes_per_party(batch, &fusion)
        + 2 * frame_bytes(batch)
        + n * frame_bytes(batch)
}

fn softmax_bytes(rows: usize, cols: usize) -> u64 {
    EXP_ROUNDS as u64 * mul_bytes(rows * cols) + RECIPROCAL_ROUNDS * mul_bytes(rows) + mul_bytes(rows * cols)
}

fn layernorm_bytes(rows: usize, d: usize) -> u64 {
    let init = INV_SQRT_INIT.len();
    let decay = DECAY_EXP_ROUNDS as u64 * mul_bytes(init * rows);
    let newton = 3 * INV_SQRT_ITERS as u64 * mul_bytes(rows);
    3 * mul_bytes(rows * d) + decay + newton
}

/// Correlations for one sequence of length `len` through the central model.
pub fn e2e_tape(cfg: &EncoderConfig, emb: usize, head_hidden: usize, len: usize) -> TapeSpec {
    let (d, h, l) = (cfg.d_model, cfg.n_heads, len);
    let dk = d / h;
    let mut s = TapeSpec::matmul(l, cfg.d_in, d);
    for _ in 0..cfg.n_layers {
        s.push(Requirement::Matmul { m: l, k: d, n: 3 * d });
        for _ in 0..h {
            s.push(Requirement::Matmul { m: l, k: dk, n: l });
        }
        s.extend(&TapeSpec::softmax(h * l, l));
        for _ in 0..h {
            s.push(Requirement::Matmul { m: l, k: l, n: dk });
        }
        s.push(Requirement::Matmul { m: l, k: d, n: d });
        s.extend(&TapeSpec::layernorm(l, d));
        s.push(Requirement::Matmul { m: l, k: d, n: cfg.d_ff });
        s.extend(&TapeSpec::relu(l * cfg.d_ff));
        s.push(Requirement::Matmul { m: l, k: cfg.d_ff, n: d });
        s.extend(&TapeSpec::layernorm(l, d));
    }
    s.push(Requirement::Matmul { m: 1, k: d, n: emb });
    s.extend(&mlp_tape(1, &[emb, head_hidden, 1]));
    s
}

/// Rounds for one sequence, including its reveal.
pub fn e2e_rounds(cfg: &EncoderConfig) -> u64 {
    let layer = 1 + 1 + SOFTMAX_ROUNDS + 1 + 1 + LAYERNORM_ROUNDS + 1 + RELU_ROUNDS + 1 + LAYERNORM_ROUNDS;
    1 + cfg.n_layers as u64 * layer + 1 + mlp_rounds(2) + 1
}

/// Bytes for one sequence of length `len` submitted by `n_clients`.
pub fn e2e_bytes(cfg: &EncoderConfig, emb: usize, head_hidden: usize, len: usize, n_clients: usize) -> u64 {
    let (d, h, l, n) = (cfg.d_model, cfg.n_heads, len, n_clients as u64);
    let dk = d / h;
    let mut party = frame_bytes(l * cfg.d_in + cfg.d_in * d);
    for _ in 0..cfg.n_layers {
        party += frame_bytes(l * d + d * 3 * d);
        party += frame_bytes(h * (l * dk + dk * l));
        party += softmax_bytes(h * l, l);
        party += frame_bytes(h * (l * l + l * dk));
        party += frame_bytes(l * d + d * d);
        party += layernorm_bytes(l, d);
        party += frame_bytes(l * d + d * cfg.d_ff);
        party += relu_bytes(l * cfg.d_ff);
        party += frame_bytes(l * cfg.d_ff + cfg.d_ff * d);
        party += layernorm_bytes(l, d);
    }
    party += frame_bytes(d + d * emb);
    party += mlp_bytes_per_party(1, &[emb, head_hidden, 1]);
    party += frame_bytes(1);
    2 * n * frame_bytes(l * cfg.d_in) + 2 * party + n * frame_bytes(1)
}

/// Plaintext FLOPs of one encoder forward over sequences of the given row
/// counts (every row attends to every row of its sequence).
pub fn encoder_flops(cfg: &EncoderConfig, out: usize, seq_rows: &[usize]) -> u64 {
    let (d, f, dff) = (cfg.d_model as u64, cfg.d_in as u64, cfg.d_ff as u64);
    seq_rows
        .iter()
        .map(|&l| {
            let l = l as u64;
            let layer = 2 * l * d * 3 * d + 4 * l * l * d + 5 * cfg.n_heads as u64 * l * l + 2 * l * d * d + 4 * l * d * dff + l * dff + 20 * l * d;
            2 * l * f * d + 2 * l * d + cfg.n_layers as u64 * layer + l * d + 2 * d * out as u64
        })
        .sum()
}

/// Plaintext FLOPs of an MLP forward on `batch` rows.
pub fn mlp_flops(batch: usize, widths: &[usize]) -> u64 {
    widths.windows(2).map(|w| (2 * batch * w[0] * w[1] + 2 * batch * w[1]) as u64).sum()
}
