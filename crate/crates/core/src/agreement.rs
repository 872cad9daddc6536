//! Dual-flow training: factual and counterfactual inputs share one
//! rationalizer, with rationales pulled towards the generation-stage masks.

use crate::corpus::{CounterfactualPair, Vocab};
use crate::error::{CoreError, Result};
use crate::nn::softmax;
use crate::rationalizer::{accuracy, epoch_order, Rationalizer, TrainConfig, TrainReport};
use crest_grad::{adamw_update, evaluate, gradients, Graph, NodeId, OptimizerState, Tensor};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgreementConfig {
    /// Weight of the counterfactual cross-entropy.
    pub alpha: f64,
    /// Weight of the rationale agreement term.
    pub lambda: f64,
}

impl AgreementConfig {
    pub fn sentiment() -> Self {
        Self { alpha: 0.01, lambda: 0.001 }
    }

    pub fn nli() -> Self {
        Self { alpha: 0.01, lambda: 0.1 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.alpha >= 0.0 && self.lambda >= 0.0 {
            Ok(())
        } else {
            Err(CoreError::Config(format!("alpha and lambda must be nonnegative, got {self:?}")))
        }
    }
}

fn l0(z: &[u8]) -> usize {
    z.iter().filter(|&&b| b == 1).count()
}

/// `B · ‖z̃*‖₀ / ‖z*‖₀`, clamped to `(0, 1]` (the lower end is `1e-6`,
/// which still selects one token).
pub fn adjusted_budget(budget: f64, z: &[u8], z_cf: &[u8]) -> Result<f64> {
    let base = l0(z);
    if base == 0 {
        return Err(CoreError::EmptyRationale);
    }
    Ok((budget * l0(z_cf) as f64 / base as f64).clamp(1e-6, 1.0))
}

fn sq_dist(mu: &[f64], target: &[u8], what: &'static str) -> Result<f64> {
    if mu.len() != target.len() {
        return Err(CoreError::Length {
            what,
            expected: target.len(),
            got: mu.len(),
        });
    }
    Ok(mu.iter().zip(target).map(|(m, &t)| (m - t as f64).powi(2)).sum())
}

/// `‖μ − z*‖² + ‖μ̃ − z̃*‖²`.
pub fn agreement_loss(mu: &[f64], mu_cf: &[f64], z: &[u8], z_cf: &[u8]) -> Result<f64> {
    Ok(sq_dist(mu, z, "factual mask")? + sq_dist(mu_cf, z_cf, "counterfactual mask")?)
}

fn nll(probs: &[f64], y: usize) -> f64 {
    -probs[y].ln()
}

/// `CE(y_f, ŷ) + α·CE(y_c, ỹ) + λ·Ω` for one pair of probability vectors.
pub fn total_loss(probs_f: &[f64], probs_c: &[f64], y_f: usize, y_c: usize, omega: f64, cfg: &AgreementConfig) -> f64 {
    nll(probs_f, y_f) + cfg.alpha * nll(probs_c, y_c) + cfg.lambda * omega
}

/// A pair in training form.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPair {
    pub x: Vec<usize>,
    pub y_f: usize,
    pub z: Vec<u8>,
    pub x_cf: Vec<usize>,
    pub y_c: usize,
    pub z_cf: Vec<u8>,
    pub budget_cf: f64,
}

/// Encodes pairs and computes counterfactual budgets. Pairs with an empty
/// factual rationale or an unusable counterfactual are skipped and logged.
pub fn prepare_pairs(pairs: &[CounterfactualPair], vocab: &Vocab, model: &Rationalizer) -> Vec<TrainingPair> {
    let mut out = Vec::with_capacity(pairs.len());
    for p in pairs {
        let budget_cf = match adjusted_budget(model.config.budget, &p.z, &p.z_cf) {
            Ok(b) => b,
            Err(e) => {
                log::info!("{}: skipped ({e})", p.id);
                continue;
            }
        };
        let x = vocab.encode(&p.x);
        let x_cf = vocab.encode(&p.x_cf);
        if let Err(e) = model.check_tokens(&x).and_then(|_| model.check_tokens(&x_cf)) {
            log::info!("{}: skipped ({e})", p.id);
            continue;
        }
        out.push(TrainingPair {
            x,
            y_f: p.y_f,
            z: p.z.clone(),
            x_cf,
            y_c: p.y_c,
            z_cf: p.z_cf.clone(),
            budget_cf,
        });
    }
    out
}

/// Per-step values of each loss term and flow accuracy.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StepStats {
    pub loss: f64,
    pub loss_f: f64,
    pub loss_c: f64,
    pub omega: f64,
    pub correct_f: usize,
    pub correct_c: usize,
    pub size: usize,
}

fn row_probs(vals: &crest_grad::Values<f32>, logits: NodeId) -> Vec<f64> {
    softmax(&vals.get(logits).data().iter().map(|&v| v as f64).collect::<Vec<_>>())
}

/// One optimizer step on the batch mean of the total loss. The factual
/// flows are laid out exactly as in plain training, and terms with zero
/// weight never reach the loss node, so `α = λ = 0` repeats plain training
/// bit for bit.
pub fn train_agreement_step(model: &mut Rationalizer, batch: &[&TrainingPair], cfg: &AgreementConfig, opt: &mut OptimizerState) -> Result<StepStats> {
    cfg.validate()?;
    let mut g = Graph::new();
    let mut fact = Vec::with_capacity(batch.len());
    for p in batch {
        fact.push(model.flow_graph(&mut g, &model.params, &p.x, model.config.budget)?);
    }
    let rows: Vec<NodeId> = fact.iter().map(|f| f.logits).collect();
    let logits_f = g.concat(&rows, 0)?;
    let targets_f: Vec<usize> = batch.iter().map(|p| p.y_f).collect();
    let loss_f = g.cross_entropy(logits_f, &targets_f)?;

    let mut cf = Vec::with_capacity(batch.len());
    for p in batch {
        cf.push(model.flow_graph(&mut g, &model.params, &p.x_cf, p.budget_cf)?);
    }
    let rows: Vec<NodeId> = cf.iter().map(|f| f.logits).collect();
    let logits_c = g.concat(&rows, 0)?;
    let targets_c: Vec<usize> = batch.iter().map(|p| p.y_c).collect();
    let loss_c = g.cross_entropy(logits_c, &targets_c)?;

    let mut omega_terms = Vec::with_capacity(2 * batch.len());
    for (p, (f, c)) in batch.iter().zip(fact.iter().zip(&cf)) {
        for (mu, z) in [(f.mu, &p.z), (c.mu, &p.z_cf)] {
            let t = g.constant(Tensor::column(z.iter().map(|&b| b as f32).collect()));
            omega_terms.push(g.squared_distance(mu, t)?);
        }
    }
    let mut omega = omega_terms[0];
    for &t in &omega_terms[1..] {
        omega = g.add(omega, t)?;
    }
    let omega = g.scale(omega, 1.0 / batch.len() as f64);

    let mut loss = loss_f;
    if cfg.alpha != 0.0 {
        let c = g.scale(loss_c, cfg.alpha);
        loss = g.add(loss, c)?;
    }
    if cfg.lambda != 0.0 {
        let o = g.scale(omega, cfg.lambda);
        loss = g.add(loss, o)?;
    }

    let vals = evaluate(&g, &model.params)?;
    let mut stats = StepStats {
        loss: vals.scalar(loss) as f64,
        loss_f: vals.scalar(loss_f) as f64,
        loss_c: vals.scalar(loss_c) as f64,
        omega: vals.scalar(omega) as f64,
        size: batch.len(),
        ..StepStats::default()
    };
    for (p, (f, c)) in batch.iter().zip(fact.iter().zip(&cf)) {
        stats.correct_f += usize::from(crate::nn::argmax(&row_probs(&vals, f.logits)) == p.y_f);
        stats.correct_c += usize::from(crate::nn::argmax(&row_probs(&vals, c.logits)) == p.y_c);
    }
    let grads = gradients(&g, &vals, loss)?;
    adamw_update(&mut model.params, &grads, opt)?;
    Ok(stats)
}

/// Epoch means of the loss terms and training accuracies.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss_f: f64,
    pub loss_c: f64,
    pub omega: f64,
    pub acc_f: f64,
    pub acc_c: f64,
}

/// Agreement training with the batching, early stopping and best-epoch
/// restore of plain training.
pub fn fit_agreement(
    model: &mut Rationalizer,
    pairs: &[TrainingPair],
    dev: &[(Vec<usize>, usize)],
    cfg: &AgreementConfig,
    train: &TrainConfig,
) -> Result<(TrainReport, Vec<EpochStats>)> {
    let mut opt = train.optimizer();
    let mut report = TrainReport::default();
    let mut epochs = Vec::new();
    let mut best = (f64::NEG_INFINITY, model.params.clone());
    let mut stale = 0;
    for epoch in 0..train.epochs {
        let order = epoch_order(pairs.len(), train.seed, epoch);
        let mut acc = EpochStats {
            epoch,
            ..EpochStats::default()
        };
        let mut seen = 0;
        let mut steps = 0;
        for chunk in order.chunks(train.batch_size.max(1)) {
            let batch: Vec<&TrainingPair> = chunk.iter().map(|&i| &pairs[i]).collect();
            let s = train_agreement_step(model, &batch, cfg, &mut opt)?;
            report.losses.push(s.loss);
            acc.loss_f += s.loss_f;
            acc.loss_c += s.loss_c;
            acc.omega += s.omega;
            acc.acc_f += s.correct_f as f64;
            acc.acc_c += s.correct_c as f64;
            seen += s.size;
            steps += 1;
        }
        if steps > 0 {
            acc.loss_f /= steps as f64;
            acc.loss_c /= steps as f64;
            acc.omega /= steps as f64;
            acc.acc_f /= seen as f64;
            acc.acc_c /= seen as f64;
        }
        epochs.push(acc);
        if dev.is_empty() {
            report.best_epoch = epoch;
            continue;
        }
        let a = accuracy(model, dev)?;
        report.dev_accuracy.push(a);
        if a > best.0 {
            best = (a, model.params.clone());
            report.best_epoch = epoch;
            stale = 0;
        } else {
            stale += 1;
            if train.patience > 0 && stale >= train.patience {
                break;
            }
        }
    }
    if !dev.is_empty() {
        model.params = best.1;
    }
    Ok((report, epochs))
}

/// Intersection over union of two masks' supports (1 when both are empty).
pub fn support_iou(a: &[u8], b: &[u8]) -> f64 {
    let inter = a.iter().zip(b).filter(|(&x, &y)| x == 1 && y == 1).count();
    let union = a.iter().zip(b).filter(|(&x, &y)| x == 1 || y == 1).count();
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}
