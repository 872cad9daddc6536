//! Counterfactual quality and interpretability metrics.

use crate::align::levenshtein;
use crate::corpus::CounterfactualPair;
use crate::error::{CoreError, Result};
use std::collections::HashMap;

pub const BLEU_EPSILON: f64 = 1e-9;

/// Named scalar metrics with sample counts, plus a per-example table.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricReport {
    pub metrics: Vec<(String, f64, usize)>,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl MetricReport {
    pub fn add(&mut self, name: &str, value: f64, count: usize) {
        self.metrics.push((name.to_string(), value, count));
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.metrics.iter().find(|m| m.0 == name).map(|m| m.1)
    }
}

fn rate(hits: usize, total: usize, what: &str) -> Result<f64> {
    if total == 0 {
        return Err(CoreError::Metric(format!("{what} of an empty set")));
    }
    Ok(hits as f64 / total as f64)
}

/// Fraction of pairs whose counterfactual the classifier assigns `y_c`.
pub fn validity<F>(pairs: &[CounterfactualPair], mut classify: F) -> Result<f64>
where
    F: FnMut(&CounterfactualPair) -> Result<Option<usize>>,
{
    let mut hits = 0;
    for p in pairs {
        hits += usize::from(classify(p)? == Some(p.y_c));
    }
    rate(hits, pairs.len(), "validity")
}

/// Interpolated bigram model with add-k smoothing:
/// `P(w | v) = λ (c(v,w) + k) / (c(v) + kV) + (1 − λ) (c(w) + k) / (N + kV)`
/// over the training word types plus `<unk>`. Each text starts from a
/// begin-of-text context; the end of text is not predicted.
#[derive(Debug, Clone)]
pub struct NgramLM {
    index: HashMap<String, usize>,
    unigram: Vec<f64>,
    total: f64,
    bigram: HashMap<(usize, usize), f64>,
    context: HashMap<usize, f64>,
    pub add_k: f64,
    pub bigram_weight: f64,
}

const LM_UNK: &str = "<unk>";

impl NgramLM {
    /// Empty model over `words` plus `<unk>`; uniform until fitted.
    pub fn new<S: AsRef<str>>(words: &[S], add_k: f64, bigram_weight: f64) -> Self {
        let mut index = HashMap::new();
        index.insert(LM_UNK.to_string(), 0);
        for w in words {
            let n = index.len();
            index.entry(w.as_ref().to_string()).or_insert(n);
        }
        let v = index.len();
        Self {
            index,
            unigram: vec![0.0; v],
            total: 0.0,
            bigram: HashMap::new(),
            context: HashMap::new(),
            add_k,
            bigram_weight,
        }
    }

    /// Vocabulary and counts from `texts`, with k = 0.1 and λ = 0.7.
    pub fn train<S: AsRef<str>>(texts: &[Vec<S>]) -> Self {
        let mut words: Vec<&str> = texts.iter().flatten().map(|s| s.as_ref()).collect();
        words.sort_unstable();
        words.dedup();
        let mut lm = Self::new(&words, 0.1, 0.7);
        for t in texts {
            lm.observe(t);
        }
        lm
    }

    pub fn vocab_size(&self) -> usize {
        self.index.len()
    }

    fn id(&self, w: &str) -> usize {
        self.index.get(w).copied().unwrap_or(0)
    }

    /// Begin-of-text context id.
    fn bos(&self) -> usize {
        usize::MAX
    }

    pub fn observe<S: AsRef<str>>(&mut self, text: &[S]) {
        let mut prev = self.bos();
        for w in text {
            let id = self.id(w.as_ref());
            self.unigram[id] += 1.0;
            self.total += 1.0;
            *self.bigram.entry((prev, id)).or_default() += 1.0;
            *self.context.entry(prev).or_default() += 1.0;
            prev = id;
        }
    }

    fn prob_ids(&self, prev: usize, w: usize) -> f64 {
        let v = self.vocab_size() as f64;
        let k = self.add_k;
        let c_vw = self.bigram.get(&(prev, w)).copied().unwrap_or(0.0);
        let c_v = self.context.get(&prev).copied().unwrap_or(0.0);
        let bi = (c_vw + k) / (c_v + k * v);
        let uni = (self.unigram[w] + k) / (self.total + k * v);
        self.bigram_weight * bi + (1.0 - self.bigram_weight) * uni
    }

    /// `P(word | previous)`; `previous = None` is the start of a text.
    pub fn prob(&self, previous: Option<&str>, word: &str) -> f64 {
        let prev = previous.map_or(self.bos(), |p| self.id(p));
        self.prob_ids(prev, self.id(word))
    }

    /// Every word type, `<unk>` included.
    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.index.keys().map(String::as_str)
    }

    /// `exp(−mean log P)`; `None` for an empty text.
    pub fn perplexity<S: AsRef<str>>(&self, text: &[S]) -> Option<f64> {
        if text.is_empty() {
            return None;
        }
        let mut prev = self.bos();
        let mut lp = 0.0;
        for w in text {
            let id = self.id(w.as_ref());
            lp += self.prob_ids(prev, id).ln();
            prev = id;
        }
        Some((-lp / text.len() as f64).exp())
    }
}

/// Mean perplexity over non-empty texts; empty ones are skipped with a warning.
pub fn fluency_ppl<S: AsRef<str>>(texts: &[Vec<S>], lm: &NgramLM) -> Result<f64> {
    let mut sum = 0.0;
    let mut n = 0;
    for (i, t) in texts.iter().enumerate() {
        match lm.perplexity(t) {
            Some(p) => {
                sum += p;
                n += 1;
            }
            None => log::warn!("fluency: text {i} is empty, skipped"),
        }
    }
    if n == 0 {
        return Err(CoreError::Metric("fluency over no non-empty texts".into()));
    }
    Ok(sum / n as f64)
}

fn ngram_counts<T: AsRef<str>>(text: &[T], n: usize) -> HashMap<Vec<&str>, usize> {
    let mut m = HashMap::new();
    if text.len() >= n {
        for w in text.windows(n) {
            *m.entry(w.iter().map(|s| s.as_ref()).collect()).or_insert(0) += 1;
        }
    }
    m
}

/// Sentence BLEU with uniform 1–4-gram weights and brevity penalty against
/// the closest reference length (shorter on ties). A zero clipped count is
/// replaced by `ε`; an order with no hypothesis n-grams gets precision `ε`.
pub fn bleu<S: AsRef<str>>(hypothesis: &[S], references: &[&[S]]) -> f64 {
    let c = hypothesis.len();
    if c == 0 || references.is_empty() {
        return 0.0;
    }
    let mut log_p = 0.0;
    for n in 1..=4 {
        let hyp = ngram_counts(hypothesis, n);
        let denom: usize = hyp.values().sum();
        let mut max_ref: HashMap<Vec<&str>, usize> = HashMap::new();
        for r in references {
            for (g, cnt) in ngram_counts(r, n) {
                let e = max_ref.entry(g).or_insert(0);
                *e = (*e).max(cnt);
            }
        }
        let clipped: usize = hyp.iter().map(|(g, &cnt)| cnt.min(*max_ref.get(g).unwrap_or(&0))).sum();
        let p = if denom == 0 {
            BLEU_EPSILON
        } else if clipped == 0 {
            BLEU_EPSILON / denom as f64
        } else {
            clipped as f64 / denom as f64
        };
        log_p += p.ln() / 4.0;
    }
    let r = references
        .iter()
        .map(|r| r.len())
        .min_by_key(|&len| (len.abs_diff(c), len))
        .expect("references");
    let bp = if c > r { 1.0 } else { (1.0 - r as f64 / c as f64).exp() };
    bp * log_p.exp()
}

/// Mean BLEU of each text against all the others.
pub fn self_bleu<S: AsRef<str>>(texts: &[Vec<S>]) -> Result<f64> {
    if texts.len() < 2 {
        return Err(CoreError::Metric("self-BLEU needs at least two texts".into()));
    }
    let mut sum = 0.0;
    for i in 0..texts.len() {
        let refs: Vec<&[S]> = texts
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != i)
            .map(|(_, t)| t.as_slice())
            .collect();
        sum += bleu(&texts[i], &refs);
    }
    Ok(sum / texts.len() as f64)
}

/// Token edit distance over the longer length; 0 when both are empty.
pub fn closeness<T: PartialEq>(x: &[T], x_cf: &[T]) -> f64 {
    let m = x.len().max(x_cf.len());
    if m == 0 {
        0.0
    } else {
        levenshtein(x, x_cf) as f64 / m as f64
    }
}

/// ROC AUC of `scores` ranking gold positions above the rest, ties
/// counting one half (Mann–Whitney with mid-ranks).
pub fn plausibility_auc(scores: &[f64], gold: &[u8]) -> Result<f64> {
    if scores.len() != gold.len() {
        return Err(CoreError::Length {
            what: "token scores",
            expected: gold.len(),
            got: scores.len(),
        });
    }
    let pos = gold.iter().filter(|&&g| g == 1).count();
    let neg = gold.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(CoreError::Metric("AUC needs both gold and non-gold tokens".into()));
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            if gold[k] == 1 {
                rank_sum += mid;
            }
        }
        i = j + 1;
    }
    let u = rank_sum - (pos * (pos + 1)) as f64 / 2.0;
    Ok(u / (pos * neg) as f64)
}

/// Word scores as the mean of their pieces' scores; `word_of[i]` is the
/// word index of piece `i`, non-decreasing from 0.
pub fn average_word_pieces(piece_scores: &[f64], word_of: &[usize]) -> Result<Vec<f64>> {
    if piece_scores.len() != word_of.len() {
        return Err(CoreError::Length {
            what: "word-piece map",
            expected: piece_scores.len(),
            got: word_of.len(),
        });
    }
    let words = word_of.iter().max().map_or(0, |m| m + 1);
    let mut sum = vec![0.0; words];
    let mut cnt = vec![0usize; words];
    for (&s, &w) in piece_scores.iter().zip(word_of) {
        sum[w] += s;
        cnt[w] += 1;
    }
    Ok(sum.iter().zip(&cnt).map(|(s, &c)| if c == 0 { 0.0 } else { s / c as f64 }).collect())
}

/// Predicts a label from an input and its rationale.
pub trait Student {
    fn predict(&self, tokens: &[usize], rationale: &[u8]) -> usize;
}

impl<F: Fn(&[usize], &[u8]) -> usize> Student for F {
    fn predict(&self, tokens: &[usize], rationale: &[u8]) -> usize {
        self(tokens, rationale)
    }
}

/// An input, its rationale, and the classifier's predicted label.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationExample {
    pub tokens: Vec<usize>,
    pub rationale: Vec<u8>,
    pub teacher: usize,
}

/// Multinomial logistic regression over counts of rationale tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearStudent {
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
}

impl LinearStudent {
    fn features(tokens: &[usize], rationale: &[u8]) -> HashMap<usize, f64> {
        let mut f = HashMap::new();
        for (&t, &z) in tokens.iter().zip(rationale) {
            if z == 1 {
                *f.entry(t).or_insert(0.0) += 1.0;
            }
        }
        f
    }

    fn logits(&self, f: &HashMap<usize, f64>) -> Vec<f64> {
        let mut keys: Vec<&usize> = f.keys().collect();
        keys.sort();
        self.bias
            .iter()
            .enumerate()
            .map(|(c, b)| b + keys.iter().map(|&&t| self.weights[c].get(t).copied().unwrap_or(0.0) * f[&t]).sum::<f64>())
            .collect()
    }

    /// Full-batch gradient descent on mean cross-entropy against the
    /// teacher's labels, from zero weights.
    pub fn fit(data: &[SimulationExample], vocab_size: usize, classes: usize, epochs: usize, lr: f64) -> Self {
        let mut s = Self {
            weights: vec![vec![0.0; vocab_size]; classes],
            bias: vec![0.0; classes],
        };
        let feats: Vec<HashMap<usize, f64>> = data.iter().map(|e| Self::features(&e.tokens, &e.rationale)).collect();
        let n = data.len().max(1) as f64;
        for _ in 0..epochs {
            let mut gw = vec![vec![0.0; vocab_size]; classes];
            let mut gb = vec![0.0; classes];
            for (f, e) in feats.iter().zip(data) {
                let p = crate::nn::softmax(&s.logits(f));
                for c in 0..classes {
                    let err = p[c] - f64::from(u8::from(c == e.teacher));
                    gb[c] += err;
                    for (&t, &v) in f {
                        if t < vocab_size {
                            gw[c][t] += err * v;
                        }
                    }
                }
            }
            for c in 0..classes {
                s.bias[c] -= lr * gb[c] / n;
                for (w, g) in s.weights[c].iter_mut().zip(&gw[c]) {
                    *w -= lr * g / n;
                }
            }
        }
        s
    }
}

impl Student for LinearStudent {
    fn predict(&self, tokens: &[usize], rationale: &[u8]) -> usize {
        crate::nn::argmax(&self.logits(&Self::features(tokens, rationale)))
    }
}

/// Fraction of examples where the student, seeing only the rationale,
/// reproduces the classifier's label.
pub fn forward_simulability<S: Student + ?Sized>(student: &S, data: &[SimulationExample]) -> Result<f64> {
    let hits = data
        .iter()
        .filter(|e| student.predict(&e.tokens, &e.rationale) == e.teacher)
        .count();
    rate(hits, data.len(), "forward simulability")
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CounterfactualSimulability {
    pub rate: f64,
    pub evaluated: usize,
    pub failed: usize,
}

/// Fraction of inputs whose prediction changes after the editor rewrites
/// the rationale. `classify` returns a prediction and rationale; `edit`
/// rewrites the input given that rationale and prediction. Inputs where
/// either step fails are left out of both counts.
pub fn counterfactual_simulability<C, G>(inputs: &[Vec<usize>], mut classify: C, mut edit: G) -> Result<CounterfactualSimulability>
where
    C: FnMut(&[usize]) -> Result<(usize, Vec<u8>)>,
    G: FnMut(&[usize], &[u8], usize) -> Result<Vec<usize>>,
{
    let (mut flips, mut evaluated, mut failed) = (0, 0, 0);
    for x in inputs {
        let outcome = classify(x).and_then(|(y, z)| {
            let x_cf = edit(x, &z, y)?;
            Ok((y, classify(&x_cf)?.0))
        });
        match outcome {
            Ok((y, y_cf)) => {
                evaluated += 1;
                flips += usize::from(y != y_cf);
            }
            Err(e) => {
                log::debug!("counterfactual simulability: example skipped: {e}");
                failed += 1;
            }
        }
    }
    Ok(CounterfactualSimulability {
        rate: rate(flips, evaluated, "counterfactual simulability")?,
        evaluated,
        failed,
    })
}

/// `1 − mean|a − b| / (scale_max − 1)` for ratings on `1..=scale_max`.
pub fn mad_agreement(a: &[f64], b: &[f64], scale_max: f64) -> Result<f64> {
    if a.len() != b.len() {
        return Err(CoreError::Length {
            what: "ratings",
            expected: a.len(),
            got: b.len(),
        });
    }
    if a.is_empty() || !(scale_max > 1.0) {
        return Err(CoreError::Metric("MAD needs ratings and a scale above 1".into()));
    }
    let mad = a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64;
    Ok(1.0 - mad / (scale_max - 1.0))
}

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let m = xs.iter().sum::<f64>() / xs.len() as f64;
    if xs.len() == 1 {
        return (m, 0.0);
    }
    let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64;
    (m, v.sqrt())
}
