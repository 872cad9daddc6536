//! Encoder, SparseMAP explainer and masked predictor, trained end to end.
//!
//! The encoder is one pre-norm self-attention block over token plus learned
//! position embeddings. A linear scorer turns each hidden state into a score,
//! SparseMAP under the budget factor turns scores into the soft mask `μ`, and
//! the predictor classifies the embeddings scaled row-wise by `μ`, pooled by
//! learned attention. The predictor has its own embedding table and no
//! positions, so a position with `μᵢ = 0` contributes an exact zero row.

use crate::corpus::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use crate::corpus::vocab::{Vocab, SEP_ID};
use crate::error::{CoreError, Result};
use crate::nn::{self, param};
use crate::sparsemap::{binarize, budget_tokens, BudgetFactor, SparseMapOp, SparseMapSolution};
use crest_grad::{adamw_update, evaluate, gradients, AdamWConfig, Element, Graph, NodeId, OptimizerState, ParamStore, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;
use std::sync::Arc;

pub const CHECKPOINT_KIND: &str = "rationalizer";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RationalizerConfig {
    pub d: usize,
    pub max_len: usize,
    pub num_classes: usize,
    pub budget: f64,
    pub transition_penalty: f64,
    pub ffn_hidden: usize,
    /// Restrict selection to the segment after the separator.
    pub freeze_premise: bool,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for RationalizerConfig {
    fn default() -> Self {
        Self {
            d: 64,
            max_len: 128,
            num_classes: 2,
            budget: 0.3,
            transition_penalty: 1e-4,
            ffn_hidden: 128,
            freeze_premise: false,
            max_iter: crate::sparsemap::DEFAULT_MAX_ITER,
            tol: crate::sparsemap::DEFAULT_TOL,
        }
    }
}

impl RationalizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.max_len == 0 || self.ffn_hidden == 0 {
            return Err(CoreError::Config("d, max_len and ffn_hidden must be positive".into()));
        }
        if self.num_classes < 2 {
            return Err(CoreError::Config(format!("need at least 2 classes, got {}", self.num_classes)));
        }
        check_budget(self.budget)?;
        if !(self.transition_penalty >= 0.0) {
            return Err(CoreError::Config("transition penalty must be nonnegative".into()));
        }
        Ok(())
    }
}

fn check_budget(b: f64) -> Result<()> {
    if b > 0.0 && b <= 1.0 {
        Ok(())
    } else {
        Err(CoreError::Budget(format!("budget must lie in (0, 1], got {b}")))
    }
}

/// Soft mask, reported rationale, class probabilities and the solver state.
#[derive(Debug, Clone)]
pub struct RationaleOutput {
    pub mu: Vec<f64>,
    pub z: Vec<u8>,
    pub probs: Vec<f64>,
    pub solution: SparseMapSolution,
}

impl RationaleOutput {
    pub fn prediction(&self) -> usize {
        nn::argmax(&self.probs)
    }
}

/// Graph nodes of one example's pass.
#[derive(Debug, Clone, Copy)]
pub struct Flow {
    pub mu: NodeId,
    pub sparsemap: NodeId,
    pub logits: NodeId,
    pub k: usize,
}

#[derive(Debug, Clone)]
pub struct Rationalizer {
    pub config: RationalizerConfig,
    pub vocab_size: usize,
    pub params: ParamStore<f32>,
}

impl Rationalizer {
    pub fn new(config: RationalizerConfig, vocab_size: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (d, h) = (config.d, config.ffn_hidden);
        let mut ps = ParamStore::new();
        nn::init_embedding(&mut ps, "enc.tok", vocab_size, d, 0.3, &mut rng);
        nn::init_embedding(&mut ps, "enc.pos", config.max_len, d, 0.1, &mut rng);
        nn::init_block(&mut ps, "enc.block", d, h, false, &mut rng);
        nn::init_layer_norm(&mut ps, "enc.ln_out", d);
        nn::init_matrix(&mut ps, "expl.w", d, 1, &mut rng);
        nn::init_row(&mut ps, "expl.b", 1, 0.5);
        nn::init_embedding(&mut ps, "pred.tok", vocab_size, d, 0.3, &mut rng);
        nn::init_matrix(&mut ps, "pred.pool", d, 1, &mut rng);
        nn::init_linear(&mut ps, "pred.cls", d, config.num_classes, &mut rng);
        Ok(Self {
            config,
            vocab_size,
            params: ps,
        })
    }

    pub fn check_tokens(&self, tokens: &[usize]) -> Result<()> {
        if tokens.is_empty() {
            return Err(CoreError::Length {
                what: "input",
                expected: 1,
                got: 0,
            });
        }
        if tokens.len() > self.config.max_len {
            return Err(CoreError::TooLong {
                len: tokens.len(),
                max: self.config.max_len,
            });
        }
        match tokens.iter().find(|&&t| t >= self.vocab_size) {
            Some(&id) => Err(CoreError::OutOfVocab { id, size: self.vocab_size }),
            None => Ok(()),
        }
    }

    /// Hidden states `H` (`[n, d]`).
    pub fn encode_graph<T: Element>(&self, g: &mut Graph<T>, ps: &ParamStore<T>, tokens: &[usize]) -> Result<NodeId> {
        self.check_tokens(tokens)?;
        let tok = param(g, ps, "enc.tok")?;
        let pos = param(g, ps, "enc.pos")?;
        let e = g.gather(tok, tokens)?;
        let p = nn::prefix_rows(g, pos, tokens.len())?;
        let x = g.add(e, p)?;
        let x = nn::block(g, ps, "enc.block", x, false, None)?;
        nn::layer_norm(g, ps, "enc.ln_out", x)
    }

    /// Per-position scores (`[n, 1]`).
    pub fn score_graph<T: Element>(&self, g: &mut Graph<T>, ps: &ParamStore<T>, h: NodeId) -> Result<NodeId> {
        let w = param(g, ps, "expl.w")?;
        let b = param(g, ps, "expl.b")?;
        Ok(g.linear(h, w, b)?)
    }

    /// Positions the explainer may select.
    fn selectable(&self, tokens: &[usize]) -> std::ops::Range<usize> {
        if self.config.freeze_premise {
            if let Some(p) = tokens.iter().position(|&t| t == SEP_ID) {
                if p + 1 < tokens.len() {
                    return p + 1..tokens.len();
                }
            }
        }
        0..tokens.len()
    }

    /// Soft mask `μ` (`[n, 1]`) from scores; returns the mask node, the
    /// SparseMAP node (whose state holds the solution) and `k`.
    pub fn explain_graph<T: Element>(
        &self,
        g: &mut Graph<T>,
        tokens: &[usize],
        scores: NodeId,
        budget: f64,
    ) -> Result<(NodeId, NodeId, usize)> {
        check_budget(budget)?;
        let n = tokens.len();
        let range = self.selectable(tokens);
        let m = range.len();
        let k = budget_tokens(budget, n).min(m);
        let factor = BudgetFactor::new(m, k, self.config.transition_penalty)?;
        let op = Arc::new(SparseMapOp {
            factor,
            max_iter: self.config.max_iter,
            tol: self.config.tol,
        });
        if m == n {
            let mu = g.custom(op, &[scores])?;
            return Ok((mu, mu, k));
        }
        let mut sel = Tensor::zeros(&[m, n]);
        for (r, c) in range.enumerate() {
            sel.data_mut()[r * n + c] = T::one();
        }
        let sel_t = sel.clone();
        let sel = g.constant(sel);
        let part = g.matmul(sel, scores)?;
        let sm = g.custom(op, &[part])?;
        let back = g.constant(sel_t);
        let back = g.transpose(back)?;
        Ok((g.matmul(back, sm)?, sm, k))
    }

    /// Class logits (`[1, C]`) of the input masked by `mu` (`[n, 1]`).
    pub fn predict_graph<T: Element>(&self, g: &mut Graph<T>, ps: &ParamStore<T>, tokens: &[usize], mu: NodeId) -> Result<NodeId> {
        let tok = param(g, ps, "pred.tok")?;
        let pool = param(g, ps, "pred.pool")?;
        let e = g.gather(tok, tokens)?;
        let h = g.scale_rows(e, mu)?;
        let a = g.matmul(h, pool)?;
        let a = g.transpose(a)?;
        let a = g.softmax_rows(a)?;
        let pooled = g.matmul(a, h)?;
        nn::linear(g, ps, "pred.cls", pooled)
    }

    /// Encoder, explainer and predictor for one example.
    pub fn flow_graph<T: Element>(&self, g: &mut Graph<T>, ps: &ParamStore<T>, tokens: &[usize], budget: f64) -> Result<Flow> {
        let h = self.encode_graph(g, ps, tokens)?;
        let s = self.score_graph(g, ps, h)?;
        let (mu, sm, k) = self.explain_graph(g, tokens, s, budget)?;
        let logits = self.predict_graph(g, ps, tokens, mu)?;
        Ok(Flow {
            mu,
            sparsemap: sm,
            logits,
            k,
        })
    }

    pub fn encode(&self, tokens: &[usize]) -> Result<Tensor<f32>> {
        let mut g = Graph::new();
        let h = self.encode_graph(&mut g, &self.params, tokens)?;
        Ok(evaluate(&g, &self.params)?.get(h).clone())
    }

    /// Soft mask, top-k rationale and solver state for hidden states `h`.
    pub fn explain(&self, h: &Tensor<f32>, tokens: &[usize], budget_override: Option<f64>) -> Result<(Vec<f64>, Vec<u8>, SparseMapSolution)> {
        if h.shape() != [tokens.len(), self.config.d] {
            return Err(CoreError::Length {
                what: "hidden states",
                expected: tokens.len(),
                got: h.rows(),
            });
        }
        let budget = budget_override.unwrap_or(self.config.budget);
        let mut g = Graph::new();
        let hn = g.input("hidden", h.shape());
        let s = self.score_graph(&mut g, &self.params, hn)?;
        let (mu, sm, k) = self.explain_graph(&mut g, tokens, s, budget)?;
        let mut bound = std::collections::HashMap::new();
        bound.insert("hidden".to_string(), h.clone());
        let vals = evaluate(&g, &(&bound, &self.params))?;
        let mu: Vec<f64> = vals.get(mu).data().iter().map(|&v| v as f64).collect();
        let sol = vals.state::<SparseMapSolution>(sm).expect("sparsemap state").clone();
        let z = binarize(&mu, k);
        Ok((mu, z, sol))
    }

    /// Class probabilities for `tokens` masked by `mu`.
    pub fn predict(&self, tokens: &[usize], mu: &[f64]) -> Result<Vec<f64>> {
        self.check_tokens(tokens)?;
        if mu.len() != tokens.len() {
            return Err(CoreError::Length {
                what: "mask",
                expected: tokens.len(),
                got: mu.len(),
            });
        }
        let mut g = Graph::new();
        let m = g.constant(Tensor::column(mu.iter().map(|&v| v as f32).collect()));
        let logits = self.predict_graph(&mut g, &self.params, tokens, m)?;
        let vals = evaluate(&g, &self.params)?;
        let l: Vec<f64> = vals.get(logits).data().iter().map(|&v| v as f64).collect();
        Ok(nn::softmax(&l))
    }

    pub fn forward(&self, tokens: &[usize], budget_override: Option<f64>) -> Result<RationaleOutput> {
        let budget = budget_override.unwrap_or(self.config.budget);
        let mut g = Graph::new();
        let flow = self.flow_graph(&mut g, &self.params, tokens, budget)?;
        let vals = evaluate(&g, &self.params)?;
        let mu: Vec<f64> = vals.get(flow.mu).data().iter().map(|&v| v as f64).collect();
        let logits: Vec<f64> = vals.get(flow.logits).data().iter().map(|&v| v as f64).collect();
        let solution = vals.state::<SparseMapSolution>(flow.sparsemap).expect("sparsemap state").clone();
        Ok(RationaleOutput {
            z: binarize(&mu, flow.k),
            mu,
            probs: nn::softmax(&logits),
            solution,
        })
    }

    pub fn classify(&self, tokens: &[usize]) -> Result<usize> {
        Ok(self.forward(tokens, None)?.prediction())
    }

    /// Mean cross-entropy over `batch` followed by one AdamW step.
    pub fn train_step(&mut self, batch: &[(&[usize], usize)], opt: &mut OptimizerState) -> Result<f64> {
        let mut g = Graph::new();
        let mut rows = Vec::with_capacity(batch.len());
        let mut targets = Vec::with_capacity(batch.len());
        for (tokens, label) in batch {
            if *label >= self.config.num_classes {
                return Err(CoreError::Config(format!("label {label} out of range")));
            }
            rows.push(self.flow_graph(&mut g, &self.params, tokens, self.config.budget)?.logits);
            targets.push(*label);
        }
        let logits = g.concat(&rows, 0)?;
        let loss = g.cross_entropy(logits, &targets)?;
        let vals = evaluate(&g, &self.params)?;
        let value = vals.scalar(loss) as f64;
        let grads = gradients(&g, &vals, loss)?;
        adamw_update(&mut self.params, &grads, opt)?;
        Ok(value)
    }

    /// `ℓ1` gradient attribution of the predictor on the unmasked input:
    /// marks the `⌈top_fraction·n⌉` positions whose embedding gradient of the
    /// loss at the predicted label has the largest `ℓ1` norm.
    pub fn gradient_masker(&self, tokens: &[usize], top_fraction: f64) -> Result<Vec<u8>> {
        check_budget(top_fraction)?;
        self.check_tokens(tokens)?;
        let n = tokens.len();
        let ones = vec![1.0; n];
        let label = nn::argmax(&self.predict(tokens, &ones)?);

        let table = self.params.require("pred.tok")?;
        let d = self.config.d;
        let mut emb = Vec::with_capacity(n * d);
        for &t in tokens {
            emb.extend_from_slice(table.row(t));
        }
        let mut g = Graph::<f32>::new();
        let e = g.input("embedded", &[n, d]);
        let pool = param(&mut g, &self.params, "pred.pool")?;
        let a = g.matmul(e, pool)?;
        let a = g.transpose(a)?;
        let a = g.softmax_rows(a)?;
        let pooled = g.matmul(a, e)?;
        let logits = nn::linear(&mut g, &self.params, "pred.cls", pooled)?;
        let loss = g.cross_entropy(logits, &[label])?;
        let mut bound = std::collections::HashMap::new();
        bound.insert("embedded".to_string(), Tensor::new(vec![n, d], emb)?.requiring_grad());
        let vals = evaluate(&g, &(&bound, &self.params))?;
        let grads = gradients(&g, &vals, loss)?;
        let ge = grads.get("embedded").expect("embedding gradient");
        let l1: Vec<f64> = (0..n).map(|i| ge.row(i).iter().map(|v| v.abs() as f64).sum()).collect();

        let k = budget_tokens(top_fraction, n);
        let mut idx: Vec<usize> = (0..n).collect();
        idx.sort_by(|&a, &b| l1[b].total_cmp(&l1[a]).then(a.cmp(&b)));
        let mut z = vec![0u8; n];
        for &i in idx.iter().take(k) {
            z[i] = 1;
        }
        Ok(z)
    }

    pub fn to_checkpoint(&self, vocab: &Vocab) -> Result<Checkpoint> {
        Ok(Checkpoint {
            kind: CHECKPOINT_KIND.into(),
            vocab_hash: vocab.hash(),
            config: serde_json::to_value(&self.config).map_err(|e| CoreError::Checkpoint(e.to_string()))?,
            params: self.params.clone(),
        })
    }

    pub fn save(&self, path: &Path, vocab: &Vocab) -> Result<()> {
        save_checkpoint(path, &self.to_checkpoint(vocab)?)
    }

    pub fn load(path: &Path, vocab: &Vocab) -> Result<Self> {
        let ckpt = load_checkpoint(path, CHECKPOINT_KIND, vocab)?;
        let config: RationalizerConfig =
            serde_json::from_value(ckpt.config).map_err(|e| CoreError::Checkpoint(format!("bad config: {e}")))?;
        let fresh = Self::new(config.clone(), vocab.len(), 0)?;
        for (name, t) in fresh.params.iter() {
            let got = ckpt
                .params
                .get(name)
                .ok_or_else(|| CoreError::Checkpoint(format!("missing parameter {name}")))?;
            if got.shape() != t.shape() {
                return Err(CoreError::Checkpoint(format!(
                    "parameter {name} has shape {:?}, expected {:?}",
                    got.shape(),
                    t.shape()
                )));
            }
        }
        Ok(Self {
            config,
            vocab_size: vocab.len(),
            params: ckpt.params,
        })
    }
}

/// Shuffled example order for one epoch, a pure function of `(seed, epoch)`.
pub fn epoch_order(len: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..len).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(epoch as u64));
    order.shuffle(&mut rng);
    order
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub seed: u64,
    /// Epochs without dev improvement before stopping; 0 disables.
    pub patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 8,
            batch_size: 16,
            lr: 2e-3,
            weight_decay: 1e-6,
            seed: 0,
            patience: 5,
        }
    }
}

impl TrainConfig {
    pub fn optimizer(&self) -> OptimizerState {
        OptimizerState::new(AdamWConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            ..AdamWConfig::default()
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainReport {
    /// Loss of every optimizer step, in order.
    pub losses: Vec<f64>,
    pub dev_accuracy: Vec<f64>,
    pub best_epoch: usize,
}

pub fn accuracy(model: &Rationalizer, data: &[(Vec<usize>, usize)]) -> Result<f64> {
    if data.is_empty() {
        return Err(CoreError::Metric("accuracy of an empty set".into()));
    }
    let mut hits = 0;
    for (t, y) in data {
        hits += usize::from(model.classify(t)? == *y);
    }
    Ok(hits as f64 / data.len() as f64)
}

/// Minibatch training with early stopping on dev accuracy; the best epoch's
/// parameters are kept. Without dev data every epoch runs.
pub fn fit(model: &mut Rationalizer, train: &[(Vec<usize>, usize)], dev: &[(Vec<usize>, usize)], cfg: &TrainConfig) -> Result<TrainReport> {
    let mut opt = cfg.optimizer();
    let mut report = TrainReport::default();
    let mut best = (f64::NEG_INFINITY, model.params.clone());
    let mut stale = 0;
    for epoch in 0..cfg.epochs {
        let order = epoch_order(train.len(), cfg.seed, epoch);
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let batch: Vec<(&[usize], usize)> = chunk.iter().map(|&i| (train[i].0.as_slice(), train[i].1)).collect();
            report.losses.push(model.train_step(&batch, &mut opt)?);
        }
        if dev.is_empty() {
            report.best_epoch = epoch;
            continue;
        }
        let acc = accuracy(model, dev)?;
        log::info!("epoch {epoch}: dev accuracy {acc:.4}");
        report.dev_accuracy.push(acc);
        if acc > best.0 {
            best = (acc, model.params.clone());
            report.best_epoch = epoch;
            stale = 0;
        } else {
            stale += 1;
            if cfg.patience > 0 && stale >= cfg.patience {
                break;
            }
        }
    }
    if !dev.is_empty() {
        model.params = best.1;
    }
    Ok(report)
}
