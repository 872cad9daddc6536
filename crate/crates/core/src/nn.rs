//! Parameter initialization and transformer-style blocks shared by the
//! rationalizer and the editor.

use crate::error::{CoreError, Result};
use crest_grad::{Element, Graph, NodeId, ParamStore, Tensor};
use rand::Rng;

/// Binds parameter `name` as a graph input with its stored shape.
pub fn param<T: Element>(g: &mut Graph<T>, ps: &ParamStore<T>, name: &str) -> Result<NodeId> {
    let shape = ps.shape(name)?.to_vec();
    Ok(g.input(name, &shape))
}

pub fn init_matrix<R: Rng + ?Sized>(ps: &mut ParamStore<f32>, name: &str, rows: usize, cols: usize, rng: &mut R) {
    ps.insert(name, Tensor::randn(&[rows, cols], 1.0 / (rows as f64).sqrt(), rng));
}

pub fn init_embedding<R: Rng + ?Sized>(ps: &mut ParamStore<f32>, name: &str, rows: usize, cols: usize, std: f64, rng: &mut R) {
    ps.insert(name, Tensor::randn(&[rows, cols], std, rng));
}

pub fn init_row(ps: &mut ParamStore<f32>, name: &str, cols: usize, value: f32) {
    ps.insert(name, Tensor::filled(&[1, cols], value));
}

pub fn init_layer_norm(ps: &mut ParamStore<f32>, prefix: &str, d: usize) {
    init_row(ps, &format!("{prefix}.gain"), d, 1.0);
    init_row(ps, &format!("{prefix}.bias"), d, 0.0);
}

pub fn init_linear<R: Rng + ?Sized>(ps: &mut ParamStore<f32>, prefix: &str, input: usize, output: usize, rng: &mut R) {
    init_matrix(ps, &format!("{prefix}.w"), input, output, rng);
    init_row(ps, &format!("{prefix}.b"), output, 0.0);
}

pub fn init_attention<R: Rng + ?Sized>(ps: &mut ParamStore<f32>, prefix: &str, d: usize, rng: &mut R) {
    for m in ["q", "k", "v", "o"] {
        init_matrix(ps, &format!("{prefix}.{m}"), d, d, rng);
    }
}

pub fn init_feed_forward<R: Rng + ?Sized>(ps: &mut ParamStore<f32>, prefix: &str, d: usize, hidden: usize, rng: &mut R) {
    init_linear(ps, &format!("{prefix}.in"), d, hidden, rng);
    init_linear(ps, &format!("{prefix}.out"), hidden, d, rng);
}

pub fn layer_norm<T: Element>(g: &mut Graph<T>, ps: &ParamStore<T>, prefix: &str, x: NodeId) -> Result<NodeId> {
    let gain = param(g, ps, &format!("{prefix}.gain"))?;
    let bias = param(g, ps, &format!("{prefix}.bias"))?;
    Ok(g.layer_norm(x, gain, bias)?)
}

pub fn linear<T: Element>(g: &mut Graph<T>, ps: &ParamStore<T>, prefix: &str, x: NodeId) -> Result<NodeId> {
    let w = param(g, ps, &format!("{prefix}.w"))?;
    let b = param(g, ps, &format!("{prefix}.b"))?;
    Ok(g.linear(x, w, b)?)
}

/// `[n, n]` additive mask hiding future positions.
fn causal_mask<T: Element>(n: usize) -> Tensor<T> {
    let mut m = Tensor::zeros(&[n, n]);
    for i in 0..n {
        for j in i + 1..n {
            m.data_mut()[i * n + j] = T::of(-1e9);
        }
    }
    m
}

/// Single-head scaled dot-product attention of `x` over `memory`
/// (`memory = x` for self-attention).
pub fn attention<T: Element>(
    g: &mut Graph<T>,
    ps: &ParamStore<T>,
    prefix: &str,
    x: NodeId,
    memory: NodeId,
    causal: bool,
) -> Result<NodeId> {
    let wq = param(g, ps, &format!("{prefix}.q"))?;
    let wk = param(g, ps, &format!("{prefix}.k"))?;
    let wv = param(g, ps, &format!("{prefix}.v"))?;
    let wo = param(g, ps, &format!("{prefix}.o"))?;
    let d = g.shape(x)[1];
    let q = g.matmul(x, wq)?;
    let k = g.matmul(memory, wk)?;
    let v = g.matmul(memory, wv)?;
    let kt = g.transpose(k)?;
    let raw = g.matmul(q, kt)?;
    let mut scores = g.scale(raw, 1.0 / (d as f64).sqrt());
    if causal {
        let n = g.shape(x)[0];
        if g.shape(memory)[0] != n {
            return Err(CoreError::Config("causal attention needs a square score matrix".into()));
        }
        let mask = g.constant(causal_mask(n));
        scores = g.add(scores, mask)?;
    }
    let weights = g.softmax_rows(scores)?;
    let ctx = g.matmul(weights, v)?;
    Ok(g.matmul(ctx, wo)?)
}

pub fn feed_forward<T: Element>(g: &mut Graph<T>, ps: &ParamStore<T>, prefix: &str, x: NodeId) -> Result<NodeId> {
    let h = linear(g, ps, &format!("{prefix}.in"), x)?;
    let h = g.relu(h);
    linear(g, ps, &format!("{prefix}.out"), h)
}

/// Pre-norm residual sublayers: self-attention, optional cross-attention
/// over `memory`, then feed-forward.
pub fn block<T: Element>(
    g: &mut Graph<T>,
    ps: &ParamStore<T>,
    prefix: &str,
    x: NodeId,
    causal: bool,
    memory: Option<NodeId>,
) -> Result<NodeId> {
    let a = layer_norm(g, ps, &format!("{prefix}.ln_attn"), x)?;
    let a = attention(g, ps, &format!("{prefix}.attn"), a, a, causal)?;
    let mut x = g.add(x, a)?;
    if let Some(mem) = memory {
        let c = layer_norm(g, ps, &format!("{prefix}.ln_cross"), x)?;
        let c = attention(g, ps, &format!("{prefix}.cross"), c, mem, false)?;
        x = g.add(x, c)?;
    }
    let f = layer_norm(g, ps, &format!("{prefix}.ln_ff"), x)?;
    let f = feed_forward(g, ps, &format!("{prefix}.ff"), f)?;
    Ok(g.add(x, f)?)
}

pub fn init_block<R: Rng + ?Sized>(ps: &mut ParamStore<f32>, prefix: &str, d: usize, hidden: usize, cross: bool, rng: &mut R) {
    init_layer_norm(ps, &format!("{prefix}.ln_attn"), d);
    init_attention(ps, &format!("{prefix}.attn"), d, rng);
    if cross {
        init_layer_norm(ps, &format!("{prefix}.ln_cross"), d);
        init_attention(ps, &format!("{prefix}.cross"), d, rng);
    }
    init_layer_norm(ps, &format!("{prefix}.ln_ff"), d);
    init_feed_forward(ps, &format!("{prefix}.ff"), d, hidden, rng);
}

/// Rows `0..n` of a `[rows, d]` table as a constant-index gather.
pub fn prefix_rows<T: Element>(g: &mut Graph<T>, table: NodeId, n: usize) -> Result<NodeId> {
    let rows: Vec<usize> = (0..n).collect();
    Ok(g.gather(table, &rows)?)
}

pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Numerically stable softmax of a slice.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}
