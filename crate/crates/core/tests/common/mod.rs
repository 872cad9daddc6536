//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

/// Every 0/1 vector of length `n` with at most `k` ones.
pub fn feasible_vertices(n: usize, k: usize) -> Vec<Vec<u8>> {
    (0u32..1 << n)
        .filter(|m| m.count_ones() as usize <= k)
        .map(|m| (0..n).map(|i| ((m >> i) & 1) as u8).collect())
        .collect()
}

pub fn transitions(z: &[u8]) -> usize {
    z.windows(2).filter(|w| w[0] != w[1]).count()
}

pub fn config_score(theta: &[f64], z: &[u8], c: f64) -> f64 {
    theta
        .iter()
        .zip(z)
        .map(|(t, &b)| t * b as f64)
        .sum::<f64>()
        - c * transitions(z) as f64
}

/// Brute-force MAP: best score, first in enumeration order of index masks
/// with the lowest-index preference applied on exact ties.
pub fn brute_map_score(theta: &[f64], k: usize, c: f64) -> f64 {
    feasible_vertices(theta.len(), k)
        .iter()
        .map(|z| config_score(theta, z, c))
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Euclidean projection onto `{μ ∈ [0,1]ⁿ : Σμ ≤ k}` by bisection on the
/// multiplier of the sum constraint.
pub fn capped_simplex_projection(theta: &[f64], k: usize) -> Vec<f64> {
    let clip = |tau: f64| -> Vec<f64> { theta.iter().map(|t| (t - tau).clamp(0.0, 1.0)).collect() };
    let total = |tau: f64| -> f64 { clip(tau).iter().sum() };
    if total(0.0) <= k as f64 {
        return clip(0.0);
    }
    let (mut lo, mut hi) = (0.0, theta.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if total(mid) > k as f64 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    clip(0.5 * (lo + hi))
}

/// Conditional-gradient reference for the penalized problem
/// `max Σ_v α_v s_v − ½‖Σ_v α_v v‖²` over the simplex of enumerated
/// vertices, with away steps and exact line search.
pub fn frank_wolfe_reference(theta: &[f64], k: usize, c: f64, iters: usize) -> Vec<f64> {
    let n = theta.len();
    let verts = feasible_vertices(n, k);
    let s: Vec<f64> = verts.iter().map(|v| config_score(theta, v, c)).collect();
    let mut alpha = vec![0.0; verts.len()];
    alpha[0] = 1.0;
    let mut mu = vec![0.0; n];
    let vdot = |v: &[u8], x: &[f64]| -> f64 { v.iter().zip(x).map(|(&b, y)| b as f64 * y).sum() };
    for _ in 0..iters {
        // Linear gain of moving weight onto vertex v.
        let gain: Vec<f64> = verts.iter().zip(&s).map(|(v, sv)| sv - vdot(v, &mu)).collect();
        let fw = (0..verts.len()).max_by(|&a, &b| gain[a].total_cmp(&gain[b])).unwrap();
        let away = (0..verts.len())
            .filter(|&i| alpha[i] > 0.0)
            .min_by(|&a, &b| gain[a].total_cmp(&gain[b]))
            .unwrap();
        let current: f64 = alpha.iter().zip(&gain).map(|(a, g)| a * g).sum();
        let fw_gap = gain[fw] - current;
        if fw_gap < 1e-14 {
            break;
        }
        let away_gap = current - gain[away];
        let (to, from, max_step) = if fw_gap >= away_gap {
            (Some(fw), None, 1.0)
        } else {
            let a = alpha[away];
            (None, Some(away), a / (1.0 - a))
        };
        // Direction in vertex-weight space and its image in μ space.
        let mut d_mu = vec![0.0; n];
        let slope;
        match (to, from) {
            (Some(t), _) => {
                for i in 0..n {
                    d_mu[i] = verts[t][i] as f64 - mu[i];
                }
                slope = fw_gap;
            }
            (_, Some(f)) => {
                for i in 0..n {
                    d_mu[i] = mu[i] - verts[f][i] as f64;
                }
                slope = away_gap;
            }
            _ => unreachable!(),
        }
        let curv: f64 = d_mu.iter().map(|x| x * x).sum();
        let step = if curv <= 0.0 { max_step } else { (slope / curv).min(max_step) };
        match (to, from) {
            (Some(t), _) => {
                alpha.iter_mut().for_each(|a| *a *= 1.0 - step);
                alpha[t] += step;
            }
            (_, Some(f)) => {
                alpha.iter_mut().for_each(|a| *a *= 1.0 + step);
                alpha[f] -= step;
                if alpha[f] < 1e-15 {
                    alpha[f] = 0.0;
                }
            }
            _ => unreachable!(),
        }
        for i in 0..n {
            mu[i] += step * d_mu[i];
        }
    }
    mu
}

pub fn linf(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Levenshtein distance by the full dynamic-programming table.
pub fn edit_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut d = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=b.len() {
        d[0][j] = j;
    }
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            let sub = d[i - 1][j - 1] + usize::from(a[i - 1] != b[j - 1]);
            d[i][j] = sub.min(d[i - 1][j] + 1).min(d[i][j - 1] + 1);
        }
    }
    d[a.len()][b.len()]
}

use crest_core::rationalizer::Rationalizer;
use crest_core::sparsemap::SparseMapSolution;
use crest_grad::{evaluate, gradients, Graph, ParamStore};

/// Outcome of a finite-difference check through the whole rationalizer.
#[derive(Debug, Clone, Copy)]
pub struct FdReport {
    pub worst: f64,
    pub checked: usize,
    /// Coordinates skipped because the active set changed within `±h`.
    pub near_tie: usize,
}

fn active_set(sol: &SparseMapSolution) -> Vec<Vec<u8>> {
    let mut v = sol.active_vertices.clone();
    v.sort();
    v
}

fn flow_loss(model: &Rationalizer, ps: &ParamStore<f64>, tokens: &[usize], label: usize) -> (f64, Vec<Vec<u8>>) {
    let mut g = Graph::<f64>::new();
    let flow = model.flow_graph(&mut g, ps, tokens, model.config.budget).unwrap();
    let loss = g.cross_entropy(flow.logits, &[label]).unwrap();
    let vals = evaluate(&g, ps).unwrap();
    let sol = vals.state::<SparseMapSolution>(flow.sparsemap).unwrap();
    (vals.scalar(loss), active_set(sol))
}

/// Central differences (f64, step `h`) of the cross-entropy loss against
/// the analytic f64 gradient, over every coordinate of the named parameters.
/// Use a model whose solver tolerance is tight.
pub fn rationalizer_fd(model: &Rationalizer, tokens: &[usize], label: usize, names: &[&str], h: f64) -> FdReport {
    let mut ps: ParamStore<f64> = model.params.cast();
    let mut g = Graph::<f64>::new();
    let flow = model.flow_graph(&mut g, &ps, tokens, model.config.budget).unwrap();
    let loss = g.cross_entropy(flow.logits, &[label]).unwrap();
    let vals = evaluate(&g, &ps).unwrap();
    let base = active_set(vals.state::<SparseMapSolution>(flow.sparsemap).unwrap());
    let grads = gradients(&g, &vals, loss).unwrap();
    let mut report = FdReport { worst: 0.0, checked: 0, near_tie: 0 };
    for name in names {
        let analytic = grads.get(name).expect("gradient").data().to_vec();
        for (i, &a) in analytic.iter().enumerate() {
            let orig = ps.get(name).unwrap().data()[i];
            ps.get_mut(name).unwrap().data_mut()[i] = orig + h;
            let (up, s_up) = flow_loss(model, &ps, tokens, label);
            ps.get_mut(name).unwrap().data_mut()[i] = orig - h;
            let (down, s_down) = flow_loss(model, &ps, tokens, label);
            ps.get_mut(name).unwrap().data_mut()[i] = orig;
            if s_up != base || s_down != base {
                report.near_tie += 1;
                continue;
            }
            let numeric = (up - down) / (2.0 * h);
            if a.abs().max(numeric.abs()) < 1e-7 {
                continue;
            }
            report.checked += 1;
            report.worst = report.worst.max((a - numeric).abs() / a.abs().max(numeric.abs()));
        }
    }
    report
}

/// A small rationalizer whose scores sit close together, so the soft mask
/// is fractional and gradients flow through the selection layer.
pub fn fractional_rationalizer(vocab_size: usize, seed: u64) -> Rationalizer {
    let cfg = crest_core::rationalizer::RationalizerConfig {
        d: 8,
        ffn_hidden: 8,
        max_len: 16,
        max_iter: 1000,
        tol: 1e-12,
        ..Default::default()
    };
    let mut m = Rationalizer::new(cfg, vocab_size, seed).unwrap();
    for w in m.params.get_mut("expl.w").unwrap().data_mut() {
        *w *= 0.1;
    }
    m
}

fn ngrams<'a>(text: &'a [String], n: usize) -> Vec<&'a [String]> {
    if text.len() < n {
        Vec::new()
    } else {
        (0..=text.len() - n).map(|i| &text[i..i + n]).collect()
    }
}

fn occurrences(list: &[&[String]], g: &[String]) -> usize {
    list.iter().filter(|x| **x == g).count()
}

/// Sentence BLEU by direct n-gram listing, with the same smoothing
/// conventions as the library (ε on zero counts).
pub fn oracle_bleu(hyp: &[String], refs: &[&[String]], eps: f64) -> f64 {
    if hyp.is_empty() || refs.is_empty() {
        return 0.0;
    }
    let mut prod = 1.0f64;
    for n in 1..=4 {
        let h = ngrams(hyp, n);
        let mut seen: Vec<&[String]> = Vec::new();
        let mut clipped = 0;
        for g in &h {
            if seen.contains(g) {
                continue;
            }
            seen.push(g);
            let best_ref = refs.iter().map(|r| occurrences(&ngrams(r, n), g)).max().unwrap();
            clipped += occurrences(&h, g).min(best_ref);
        }
        let p = if h.is_empty() {
            eps
        } else if clipped == 0 {
            eps / h.len() as f64
        } else {
            clipped as f64 / h.len() as f64
        };
        prod *= p.powf(0.25);
    }
    let c = hyp.len();
    let mut r = refs[0].len();
    for x in refs {
        let (d_new, d_old) = ((x.len() as i64 - c as i64).abs(), (r as i64 - c as i64).abs());
        if d_new < d_old || (d_new == d_old && x.len() < r) {
            r = x.len();
        }
    }
    let bp = if c > r { 1.0 } else { (1.0 - r as f64 / c as f64).exp() };
    bp * prod
}

pub fn oracle_self_bleu(texts: &[Vec<String>], eps: f64) -> f64 {
    let mut total = 0.0;
    for i in 0..texts.len() {
        let refs: Vec<&[String]> = (0..texts.len()).filter(|&j| j != i).map(|j| texts[j].as_slice()).collect();
        total += oracle_bleu(&texts[i], &refs, eps);
    }
    total / texts.len() as f64
}

pub fn oracle_closeness(a: &[String], b: &[String]) -> f64 {
    let m = a.len().max(b.len());
    if m == 0 {
        0.0
    } else {
        edit_distance(a, b) as f64 / m as f64
    }
}

/// AUC as the share of (gold, non-gold) pairs ranked correctly, ties 1/2.
pub fn oracle_auc(scores: &[f64], gold: &[u8]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..scores.len() {
        for j in 0..scores.len() {
            if gold[i] == 1 && gold[j] == 0 {
                den += 1.0;
                num += if scores[i] > scores[j] {
                    1.0
                } else if scores[i] == scores[j] {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    num / den
}

pub fn oracle_mad(a: &[f64], b: &[f64], scale_max: f64) -> f64 {
    let mut total = 0.0;
    for i in 0..a.len() {
        total += (a[i] - b[i]).abs();
    }
    1.0 - total / a.len() as f64 / (scale_max - 1.0)
}

/// Largest absolute deviation of each metric kernel from its oracle over
/// `cases` random small inputs.
pub fn metric_kernel_deviations(seed: u64, cases: usize) -> Vec<(&'static str, f64)> {
    use crest_core::metrics::{closeness, mad_agreement, plausibility_auc, self_bleu, BLEU_EPSILON};
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let words = ["a", "b", "c", "d", "e"];
    let text = |rng: &mut rand_chacha::ChaCha8Rng, lo: usize| -> Vec<String> {
        let n = rng.gen_range(lo..9);
        (0..n).map(|_| words[rng.gen_range(0..words.len())].to_string()).collect()
    };
    let mut worst = [0.0f64; 4];
    for _ in 0..cases {
        let k = rng.gen_range(2..5);
        let texts: Vec<Vec<String>> = (0..k).map(|_| text(&mut rng, 1)).collect();
        let got = self_bleu(&texts).unwrap();
        worst[0] = worst[0].max((got - oracle_self_bleu(&texts, BLEU_EPSILON)).abs());

        let (a, b) = (text(&mut rng, 0), text(&mut rng, 0));
        worst[1] = worst[1].max((closeness(&a, &b) - oracle_closeness(&a, &b)).abs());

        let n = rng.gen_range(2..12);
        let mut gold: Vec<u8> = (0..n).map(|_| u8::from(rng.gen_bool(0.4))).collect();
        gold[0] = 1;
        gold[1] = 0;
        // Coarse scores so ties occur.
        let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(0..5) as f64 / 4.0).collect();
        worst[2] = worst[2].max((plausibility_auc(&scores, &gold).unwrap() - oracle_auc(&scores, &gold)).abs());

        let m = rng.gen_range(1..10);
        let ra: Vec<f64> = (0..m).map(|_| rng.gen_range(1..=5) as f64).collect();
        let rb: Vec<f64> = (0..m).map(|_| rng.gen_range(1..=5) as f64).collect();
        worst[3] = worst[3].max((mad_agreement(&ra, &rb, 5.0).unwrap() - oracle_mad(&ra, &rb, 5.0)).abs());
    }
    vec![("self_bleu", worst[0]), ("closeness", worst[1]), ("plausibility_auc", worst[2]), ("mad_agreement", worst[3])]
}
