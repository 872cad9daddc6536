//! Beam search over an incremental decoder with token constraints and
//! no-repeat-bigram blocking.

use crate::error::{CoreError, Result};

/// Incremental next-token distribution.
pub trait StepModel {
    type State: Clone;

    /// State after the start symbol, with next-token log-probabilities.
    fn start(&self) -> Result<(Self::State, Vec<f64>)>;

    /// State after appending `token`, with next-token log-probabilities.
    fn extend(&self, state: &Self::State, token: usize) -> Result<(Self::State, Vec<f64>)>;
}

/// Which tokens may follow a prefix.
pub trait Constraint {
    fn allowed(&self, prefix: &[usize], token: usize) -> bool;
}

/// Allows everything.
pub struct Unconstrained;

impl Constraint for Unconstrained {
    fn allowed(&self, _prefix: &[usize], _token: usize) -> bool {
        true
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BeamConfig {
    pub size: usize,
    pub no_repeat_bigram: bool,
    /// Upper bound on generated tokens, end symbol included.
    pub max_len: usize,
}

impl Default for BeamConfig {
    fn default() -> Self {
        Self {
            size: 15,
            no_repeat_bigram: true,
            max_len: 128,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub tokens: Vec<usize>,
    pub log_prob: f64,
    /// False when the length cap stopped the hypothesis before the end symbol.
    pub finished: bool,
}

impl Hypothesis {
    /// Log-probability per generated token.
    pub fn score(&self) -> f64 {
        self.log_prob / self.tokens.len().max(1) as f64
    }
}

/// True if appending `token` repeats a bigram already in `prefix`.
pub fn repeats_bigram(prefix: &[usize], token: usize) -> bool {
    match prefix.last() {
        Some(&last) => prefix.windows(2).any(|w| w[0] == last && w[1] == token),
        None => false,
    }
}

fn permitted<C: Constraint>(cfg: &BeamConfig, constraint: &C, prefix: &[usize], token: usize) -> bool {
    constraint.allowed(prefix, token) && !(cfg.no_repeat_bigram && repeats_bigram(prefix, token))
}

struct Live<S> {
    tokens: Vec<usize>,
    log_prob: f64,
    state: S,
    next: Vec<f64>,
}

/// Keeps `size` live hypotheses. A candidate ending in `eos` joins the
/// finished pool when it ranks within the top `size` of its step. Search
/// ends once `size` hypotheses are finished, nothing is live, or the length
/// cap is hit. Returns the finished hypothesis with the best per-token
/// score; if none finished, the best capped one. Exact score ties keep the
/// earlier candidate, and candidates are ranked by score, then parent
/// rank, then token id.
pub fn beam_search<M: StepModel, C: Constraint>(model: &M, constraint: &C, eos: usize, cfg: &BeamConfig) -> Result<Hypothesis> {
    if cfg.size == 0 || cfg.max_len == 0 {
        return Err(CoreError::Config("beam size and max length must be positive".into()));
    }
    let (state, next) = model.start()?;
    let mut live = vec![Live {
        tokens: Vec::new(),
        log_prob: 0.0,
        state,
        next,
    }];
    let mut finished: Vec<Hypothesis> = Vec::new();

    for step in 0..cfg.max_len {
        let mut cands: Vec<(f64, usize, usize)> = Vec::new();
        for (b, h) in live.iter().enumerate() {
            for (t, &lp) in h.next.iter().enumerate() {
                if lp.is_finite() && permitted(cfg, constraint, &h.tokens, t) {
                    cands.push((h.log_prob + lp, b, t));
                }
            }
        }
        cands.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let last_step = step + 1 == cfg.max_len;
        let mut next_live = Vec::with_capacity(cfg.size);
        for (rank, &(lp, b, t)) in cands.iter().enumerate() {
            let mut tokens = live[b].tokens.clone();
            tokens.push(t);
            if t == eos {
                if rank < cfg.size {
                    finished.push(Hypothesis {
                        tokens,
                        log_prob: lp,
                        finished: true,
                    });
                }
            } else if next_live.len() < cfg.size {
                if last_step {
                    next_live.push(Live {
                        tokens,
                        log_prob: lp,
                        state: live[b].state.clone(),
                        next: Vec::new(),
                    });
                } else {
                    let (state, next) = model.extend(&live[b].state, t)?;
                    next_live.push(Live {
                        tokens,
                        log_prob: lp,
                        state,
                        next,
                    });
                }
            }
            if next_live.len() >= cfg.size && rank + 1 >= cfg.size {
                break;
            }
        }
        live = next_live;
        if finished.len() >= cfg.size || live.is_empty() {
            break;
        }
    }

    let pick = |pool: Vec<Hypothesis>| -> Option<Hypothesis> {
        let mut best: Option<Hypothesis> = None;
        for h in pool {
            if best.as_ref().map_or(true, |b| h.score() > b.score()) {
                best = Some(h);
            }
        }
        best
    };
    if let Some(h) = pick(finished) {
        return Ok(h);
    }
    pick(live
        .into_iter()
        .map(|l| Hypothesis {
            tokens: l.tokens,
            log_prob: l.log_prob,
            finished: false,
        })
        .collect())
    .ok_or_else(|| CoreError::Config("beam search found no admissible continuation".into()))
}

/// Step-wise argmax under the same constraints.
pub fn greedy_decode<M: StepModel, C: Constraint>(model: &M, constraint: &C, eos: usize, cfg: &BeamConfig) -> Result<Hypothesis> {
    let (mut state, mut next) = model.start()?;
    let mut tokens = Vec::new();
    let mut log_prob = 0.0;
    for step in 0..cfg.max_len {
        let mut best: Option<(f64, usize)> = None;
        for (t, &lp) in next.iter().enumerate() {
            if lp.is_finite() && permitted(cfg, constraint, &tokens, t) && best.map_or(true, |(b, _)| lp > b) {
                best = Some((lp, t));
            }
        }
        let Some((lp, t)) = best else {
            break;
        };
        tokens.push(t);
        log_prob += lp;
        if t == eos {
            return Ok(Hypothesis {
                tokens,
                log_prob,
                finished: true,
            });
        }
        if step + 1 < cfg.max_len {
            (state, next) = model.extend(&state, t)?;
        }
    }
    if tokens.is_empty() {
        return Err(CoreError::Config("greedy decoding found no admissible token".into()));
    }
    Ok(Hypothesis {
        tokens,
        log_prob,
        finished: false,
    })
}
