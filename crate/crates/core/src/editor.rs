//! Label-conditioned span infilling.
//!
//! Each maximal masked span of the input collapses to one sentinel; the
//! target lists the sentinels followed by the tokens they replaced and ends
//! with the end symbol. The source is prefixed with a label token, which at
//! training time is the gold label and at generation time the desired one.

use crate::beam::{beam_search, greedy_decode, BeamConfig, Constraint, Hypothesis, StepModel};
use crate::corpus::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use crate::corpus::vocab::{Vocab, BOS_ID, EOS_ID, NUM_SENTINELS};
use crate::error::{CoreError, Result};
use crate::nn::{self, param};
use crate::rationalizer::{epoch_order, TrainConfig};
use crest_grad::{adamw_update, evaluate, gradients, Element, Graph, NodeId, OptimizerState, ParamStore, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const CHECKPOINT_KIND: &str = "editor";

/// Source with sentinels, span-reconstruction target, and the original spans.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedInput {
    pub source: Vec<usize>,
    pub target: Vec<usize>,
    pub spans: Vec<Vec<usize>>,
}

impl MaskedInput {
    pub fn num_spans(&self) -> usize {
        self.spans.len()
    }
}

/// Collapses each maximal run of `z = 1` into the next sentinel.
pub fn apply_sentinels(vocab: &Vocab, tokens: &[usize], z: &[u8]) -> Result<MaskedInput> {
    if z.len() != tokens.len() {
        return Err(CoreError::Length {
            what: "mask",
            expected: tokens.len(),
            got: z.len(),
        });
    }
    if !z.iter().any(|&b| b == 1) {
        return Err(CoreError::NothingToEdit);
    }
    let mut source = Vec::new();
    let mut target = Vec::new();
    let mut spans: Vec<Vec<usize>> = Vec::new();
    for (i, (&t, &m)) in tokens.iter().zip(z).enumerate() {
        if m == 1 {
            if i == 0 || z[i - 1] == 0 {
                if spans.len() == NUM_SENTINELS {
                    return Err(CoreError::Config(format!("more than {NUM_SENTINELS} masked spans")));
                }
                let s = vocab.sentinel_id(spans.len());
                source.push(s);
                target.push(s);
                spans.push(Vec::new());
            }
            target.push(t);
            spans.last_mut().expect("span opened").push(t);
        } else {
            source.push(t);
        }
    }
    target.push(EOS_ID);
    Ok(MaskedInput { source, target, spans })
}

/// Replaces the i-th sentinel of `source` with `spans[i]`; sentinels
/// without a span are dropped.
pub fn fill_spans(vocab: &Vocab, source: &[usize], spans: &[Vec<usize>]) -> Vec<usize> {
    let mut out = Vec::new();
    for &t in source {
        match vocab.sentinel_index(t) {
            Some(i) => {
                if let Some(s) = spans.get(i) {
                    out.extend_from_slice(s);
                }
            }
            None => out.push(t),
        }
    }
    out
}

/// Splits a decoded target into per-sentinel spans. Returns the spans and
/// whether the output needed salvaging: sentinels out of order, repeated,
/// missing, or text before the first sentinel. Salvage assigns segments to
/// sentinels by position, collapses repeated special symbols and drops
/// leftovers.
pub fn parse_infill(vocab: &Vocab, generated: &[usize], num_spans: usize) -> (Vec<Vec<usize>>, bool) {
    let body: Vec<usize> = generated.iter().copied().take_while(|&t| t != EOS_ID).collect();
    let mut malformed = generated.last() != Some(&EOS_ID);
    let mut segments: Vec<Vec<usize>> = Vec::new();
    let mut expected = 0;
    let mut prev_sentinel = false;
    for &t in &body {
        if let Some(i) = vocab.sentinel_index(t) {
            if prev_sentinel && segments.last().map_or(false, |s| s.is_empty()) && i + 1 == expected {
                // A repeated sentinel: keep the first.
                malformed = true;
                continue;
            }
            if i != expected {
                malformed = true;
            }
            segments.push(Vec::new());
            expected += 1;
            prev_sentinel = true;
        } else {
            prev_sentinel = false;
            match segments.last_mut() {
                Some(s) if !vocab.is_special(t) => s.push(t),
                Some(_) => malformed = true,
                None => malformed = true,
            }
        }
    }
    if segments.len() != num_spans {
        malformed = true;
    }
    segments.resize(num_spans, Vec::new());
    (segments, malformed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditorConfig {
    pub d: usize,
    pub max_len: usize,
    pub ffn_hidden: usize,
}

impl Default for EditorConfig {
    fn default() -> Self {
        Self {
            d: 64,
            max_len: 128,
            ffn_hidden: 128,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Editor {
    pub config: EditorConfig,
    pub vocab_size: usize,
    pub params: ParamStore<f32>,
}

/// A generated counterfactual: the filled-in tokens and decoding details.
#[derive(Debug, Clone, PartialEq)]
pub struct Infill {
    pub tokens: Vec<usize>,
    pub spans: Vec<Vec<usize>>,
    pub malformed: bool,
    pub hypothesis: Option<Hypothesis>,
}

impl Editor {
    pub fn new(config: EditorConfig, vocab_size: usize, seed: u64) -> Result<Self> {
        if config.d == 0 || config.max_len == 0 || config.ffn_hidden == 0 {
            return Err(CoreError::Config("d, max_len and ffn_hidden must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (d, h) = (config.d, config.ffn_hidden);
        let mut ps = ParamStore::new();
        nn::init_embedding(&mut ps, "emb", vocab_size, d, 0.3, &mut rng);
        nn::init_embedding(&mut ps, "enc.pos", config.max_len, d, 0.1, &mut rng);
        nn::init_embedding(&mut ps, "dec.pos", config.max_len, d, 0.1, &mut rng);
        nn::init_block(&mut ps, "enc.block", d, h, false, &mut rng);
        nn::init_layer_norm(&mut ps, "enc.ln_out", d);
        nn::init_block(&mut ps, "dec.block", d, h, true, &mut rng);
        nn::init_layer_norm(&mut ps, "dec.ln_out", d);
        // Small output weights start the softmax near uniform.
        nn::init_embedding(&mut ps, "out.w", d, vocab_size, 0.01, &mut rng);
        nn::init_row(&mut ps, "out.b", vocab_size, 0.0);
        Ok(Self {
            config,
            vocab_size,
            params: ps,
        })
    }

    fn check(&self, ids: &[usize], what: &'static str) -> Result<()> {
        if ids.is_empty() {
            return Err(CoreError::Length { what, expected: 1, got: 0 });
        }
        if ids.len() > self.config.max_len {
            return Err(CoreError::TooLong {
                len: ids.len(),
                max: self.config.max_len,
            });
        }
        match ids.iter().find(|&&t| t >= self.vocab_size) {
            Some(&id) => Err(CoreError::OutOfVocab { id, size: self.vocab_size }),
            None => Ok(()),
        }
    }

    /// Encoder memory for `[label] + source`.
    pub fn encode_graph<T: Element>(&self, g: &mut Graph<T>, ps: &ParamStore<T>, source: &[usize]) -> Result<NodeId> {
        self.check(source, "editor source")?;
        let emb = param(g, ps, "emb")?;
        let pos = param(g, ps, "enc.pos")?;
        let e = g.gather(emb, source)?;
        let p = nn::prefix_rows(g, pos, source.len())?;
        let x = g.add(e, p)?;
        let x = nn::block(g, ps, "enc.block", x, false, None)?;
        nn::layer_norm(g, ps, "enc.ln_out", x)
    }

    /// Next-token logits (`[m, V]`) for teacher-forced decoder input.
    pub fn decode_graph<T: Element>(&self, g: &mut Graph<T>, ps: &ParamStore<T>, memory: NodeId, input: &[usize]) -> Result<NodeId> {
        self.check(input, "decoder input")?;
        let emb = param(g, ps, "emb")?;
        let pos = param(g, ps, "dec.pos")?;
        let e = g.gather(emb, input)?;
        let p = nn::prefix_rows(g, pos, input.len())?;
        let x = g.add(e, p)?;
        let x = nn::block(g, ps, "dec.block", x, true, Some(memory))?;
        let x = nn::layer_norm(g, ps, "dec.ln_out", x)?;
        nn::linear(g, ps, "out", x)
    }

    /// Logits and targets of one teacher-forced example.
    fn example_graph<T: Element>(
        &self,
        g: &mut Graph<T>,
        ps: &ParamStore<T>,
        label_id: usize,
        masked: &MaskedInput,
    ) -> Result<(NodeId, Vec<usize>)> {
        let mut src = Vec::with_capacity(masked.source.len() + 1);
        src.push(label_id);
        src.extend_from_slice(&masked.source);
        let mem = self.encode_graph(g, ps, &src)?;
        let mut input = vec![BOS_ID];
        input.extend_from_slice(&masked.target[..masked.target.len() - 1]);
        let logits = self.decode_graph(g, ps, mem, &input)?;
        Ok((logits, masked.target.clone()))
    }

    /// Mean teacher-forced cross-entropy per target token.
    pub fn loss_graph<T: Element>(&self, g: &mut Graph<T>, ps: &ParamStore<T>, batch: &[(usize, &MaskedInput)]) -> Result<NodeId> {
        let mut rows = Vec::new();
        let mut targets = Vec::new();
        for (label, m) in batch {
            let (l, t) = self.example_graph(g, ps, *label, m)?;
            rows.push(l);
            targets.extend(t);
        }
        let logits = g.concat(&rows, 0)?;
        Ok(g.cross_entropy(logits, &targets)?)
    }

    pub fn loss(&self, batch: &[(usize, &MaskedInput)]) -> Result<f64> {
        let mut g = Graph::new();
        let loss = self.loss_graph(&mut g, &self.params, batch)?;
        Ok(evaluate(&g, &self.params)?.scalar(loss) as f64)
    }

    /// One AdamW step on the teacher-forced loss; `label` entries are
    /// label-token ids.
    pub fn train_step(&mut self, batch: &[(usize, &MaskedInput)], opt: &mut OptimizerState) -> Result<f64> {
        let mut g = Graph::new();
        let loss = self.loss_graph(&mut g, &self.params, batch)?;
        let vals = evaluate(&g, &self.params)?;
        let value = vals.scalar(loss) as f64;
        let grads = gradients(&g, &vals, loss)?;
        adamw_update(&mut self.params, &grads, opt)?;
        Ok(value)
    }

    /// Mini-batch training over `data` (label-token id, masked input) for
    /// `cfg.epochs` epochs; returns the per-step losses.
    pub fn fit(&mut self, data: &[(usize, MaskedInput)], cfg: &TrainConfig) -> Result<Vec<f64>> {
        let mut opt = cfg.optimizer();
        let mut losses = Vec::new();
        for epoch in 0..cfg.epochs {
            let order = epoch_order(data.len(), cfg.seed, epoch);
            for chunk in order.chunks(cfg.batch_size.max(1)) {
                let batch: Vec<(usize, &MaskedInput)> = chunk.iter().map(|&i| (data[i].0, &data[i].1)).collect();
                losses.push(self.train_step(&batch, &mut opt)?);
            }
            if let Some(last) = losses.last() {
                log::debug!("editor epoch {epoch}: loss {last:.4}");
            }
        }
        Ok(losses)
    }

    /// Incremental decoder conditioned on `[label] + source`.
    pub fn decoder(&self, label_id: usize, source: &[usize]) -> Result<IncrementalDecoder<'_>> {
        let mut src = vec![label_id];
        src.extend_from_slice(source);
        let mut g = Graph::new();
        let mem = self.encode_graph(&mut g, &self.params, &src)?;
        let memory = evaluate(&g, &self.params)?.get(mem).clone();
        IncrementalDecoder::new(self, memory)
    }

    /// Infills the sentinels of `masked.source` under `label_id` with
    /// constrained beam search. A source without sentinels is returned as is.
    pub fn generate(&self, vocab: &Vocab, masked: &MaskedInput, label_id: usize, beam: &BeamConfig) -> Result<Infill> {
        self.generate_with(vocab, masked, label_id, beam, true)
    }

    /// As [`Editor::generate`]; with `constrained = false` only the length
    /// cap and bigram blocking restrict the decoder, and malformed output is
    /// salvaged.
    pub fn generate_with(&self, vocab: &Vocab, masked: &MaskedInput, label_id: usize, beam: &BeamConfig, constrained: bool) -> Result<Infill> {
        let n_spans = masked.source.iter().filter(|&&t| vocab.sentinel_index(t).is_some()).count();
        if n_spans == 0 {
            return Ok(Infill {
                tokens: masked.source.clone(),
                spans: Vec::new(),
                malformed: false,
                hypothesis: None,
            });
        }
        let caps: Vec<usize> = (0..n_spans)
            .map(|i| 2 * masked.spans.get(i).map_or(1, Vec::len) + 4)
            .collect();
        let budget = caps.iter().sum::<usize>() + n_spans + 1;
        let cfg = BeamConfig {
            max_len: beam.max_len.min(budget).min(self.config.max_len),
            ..*beam
        };
        let dec = self.decoder(label_id, &masked.source)?;
        let hyp = if constrained {
            let c = SpanConstraint::new(vocab, caps);
            run(&dec, &c, &cfg)?
        } else {
            run(&dec, &FreeText { vocab }, &cfg)?
        };
        let (spans, malformed) = parse_infill(vocab, &hyp.tokens, n_spans);
        Ok(Infill {
            tokens: fill_spans(vocab, &masked.source, &spans),
            spans,
            malformed,
            hypothesis: Some(hyp),
        })
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
        let config: EditorConfig =
            serde_json::from_value(ckpt.config).map_err(|e| CoreError::Checkpoint(format!("bad config: {e}")))?;
        let fresh = Self::new(config.clone(), vocab.len(), 0)?;
        for (name, t) in fresh.params.iter() {
            match ckpt.params.get(name) {
                Some(p) if p.shape() == t.shape() => {}
                _ => return Err(CoreError::Checkpoint(format!("parameter {name} missing or misshapen"))),
            }
        }
        Ok(Self {
            config,
            vocab_size: vocab.len(),
            params: ckpt.params,
        })
    }
}

fn run<C: Constraint>(dec: &IncrementalDecoder<'_>, c: &C, cfg: &BeamConfig) -> Result<Hypothesis> {
    if cfg.size == 1 {
        greedy_decode(dec, c, EOS_ID, cfg)
    } else {
        beam_search(dec, c, EOS_ID, cfg)
    }
}

/// Well-formed infills only: `<sent_0> span <sent_1> span … <eos>` with
/// text-only spans of bounded length.
pub struct SpanConstraint<'a> {
    vocab: &'a Vocab,
    caps: Vec<usize>,
}

impl<'a> SpanConstraint<'a> {
    pub fn new(vocab: &'a Vocab, caps: Vec<usize>) -> Self {
        Self { vocab, caps }
    }
}

impl Constraint for SpanConstraint<'_> {
    fn allowed(&self, prefix: &[usize], token: usize) -> bool {
        let n = self.caps.len();
        let Some(open) = prefix.iter().rposition(|&t| self.vocab.sentinel_index(t).is_some()) else {
            return token == self.vocab.sentinel_id(0);
        };
        let cur = self.vocab.sentinel_index(prefix[open]).expect("sentinel");
        let span_len = prefix.len() - open - 1;
        if let Some(i) = self.vocab.sentinel_index(token) {
            return i == cur + 1 && i < n;
        }
        if token == EOS_ID {
            return cur + 1 == n;
        }
        !self.vocab.is_special(token) && span_len < self.caps[cur]
    }
}

/// Any non-reserved token, any sentinel, or the end symbol.
struct FreeText<'a> {
    vocab: &'a Vocab,
}

impl Constraint for FreeText<'_> {
    fn allowed(&self, _prefix: &[usize], token: usize) -> bool {
        token == EOS_ID || self.vocab.sentinel_index(token).is_some() || !self.vocab.is_special(token)
    }
}

/// Cached keys and values of the decoder's self-attention.
#[derive(Debug, Clone)]
pub struct DecoderState {
    keys: Vec<Vec<f32>>,
    values: Vec<Vec<f32>>,
}

/// Plain-array decoder step equivalent to [`Editor::decode_graph`] on one
/// new position, reusing earlier positions' keys and values.
pub struct IncrementalDecoder<'a> {
    editor: &'a Editor,
    mem_k: Vec<Vec<f32>>,
    mem_v: Vec<Vec<f32>>,
}

fn p<'a>(e: &'a Editor, name: &str) -> &'a Tensor<f32> {
    e.params.get(name).unwrap_or_else(|| panic!("editor parameter {name}"))
}

fn vec_mat(x: &[f32], w: &Tensor<f32>) -> Vec<f32> {
    let cols = w.cols();
    let mut out = vec![0f32; cols];
    for (i, &xi) in x.iter().enumerate() {
        if xi == 0.0 {
            continue;
        }
        let row = w.row(i);
        for (o, &wv) in out.iter_mut().zip(row) {
            *o += xi * wv;
        }
    }
    out
}

fn layer_norm_vec(x: &[f32], gain: &Tensor<f32>, bias: &Tensor<f32>) -> Vec<f32> {
    let d = x.len() as f32;
    let mu = x.iter().copied().sum::<f32>() / d;
    let var = x.iter().map(|&v| (v - mu) * (v - mu)).sum::<f32>() / d;
    let inv = 1.0 / (var + 1e-5).sqrt();
    x.iter()
        .zip(gain.data().iter().zip(bias.data()))
        .map(|(&v, (&gn, &b))| (v - mu) * inv * gn + b)
        .collect()
}

fn add_into(x: &mut [f32], y: &[f32]) {
    x.iter_mut().zip(y).for_each(|(a, b)| *a += b);
}

fn attend(q: &[f32], keys: &[Vec<f32>], values: &[Vec<f32>]) -> Vec<f32> {
    let scale = 1.0 / (q.len() as f32).sqrt();
    let scores: Vec<f32> = keys
        .iter()
        .map(|k| k.iter().zip(q).map(|(a, b)| a * b).sum::<f32>() * scale)
        .collect();
    let m = scores.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let e: Vec<f32> = scores.iter().map(|s| (s - m).exp()).collect();
    let z: f32 = e.iter().sum();
    let mut out = vec![0f32; q.len()];
    for (w, v) in e.iter().zip(values) {
        for (o, &vv) in out.iter_mut().zip(v) {
            *o += w / z * vv;
        }
    }
    out
}

impl<'a> IncrementalDecoder<'a> {
    fn new(editor: &'a Editor, memory: Tensor<f32>) -> Result<Self> {
        let wk = p(editor, "dec.block.cross.k");
        let wv = p(editor, "dec.block.cross.v");
        let mem_k = (0..memory.rows()).map(|i| vec_mat(memory.row(i), wk)).collect();
        let mem_v = (0..memory.rows()).map(|i| vec_mat(memory.row(i), wv)).collect();
        Ok(Self { editor, mem_k, mem_v })
    }

    /// Appends `token` at the next position; returns next-token logits.
    pub fn step(&self, state: &mut DecoderState, token: usize) -> Result<Vec<f32>> {
        let e = self.editor;
        let pos = state.keys.len();
        if pos >= e.config.max_len {
            return Err(CoreError::TooLong {
                len: pos + 1,
                max: e.config.max_len,
            });
        }
        if token >= e.vocab_size {
            return Err(CoreError::OutOfVocab { id: token, size: e.vocab_size });
        }
        let mut x: Vec<f32> = p(e, "emb").row(token).to_vec();
        add_into(&mut x, p(e, "dec.pos").row(pos));

        let a = layer_norm_vec(&x, p(e, "dec.block.ln_attn.gain"), p(e, "dec.block.ln_attn.bias"));
        let q = vec_mat(&a, p(e, "dec.block.attn.q"));
        state.keys.push(vec_mat(&a, p(e, "dec.block.attn.k")));
        state.values.push(vec_mat(&a, p(e, "dec.block.attn.v")));
        let ctx = attend(&q, &state.keys, &state.values);
        add_into(&mut x, &vec_mat(&ctx, p(e, "dec.block.attn.o")));

        let c = layer_norm_vec(&x, p(e, "dec.block.ln_cross.gain"), p(e, "dec.block.ln_cross.bias"));
        let q = vec_mat(&c, p(e, "dec.block.cross.q"));
        let ctx = attend(&q, &self.mem_k, &self.mem_v);
        add_into(&mut x, &vec_mat(&ctx, p(e, "dec.block.cross.o")));

        let f = layer_norm_vec(&x, p(e, "dec.block.ln_ff.gain"), p(e, "dec.block.ln_ff.bias"));
        let mut h = vec_mat(&f, p(e, "dec.block.ff.in.w"));
        add_into(&mut h, p(e, "dec.block.ff.in.b").data());
        h.iter_mut().for_each(|v| *v = v.max(0.0));
        let mut f = vec_mat(&h, p(e, "dec.block.ff.out.w"));
        add_into(&mut f, p(e, "dec.block.ff.out.b").data());
        add_into(&mut x, &f);

        let y = layer_norm_vec(&x, p(e, "dec.ln_out.gain"), p(e, "dec.ln_out.bias"));
        let mut logits = vec_mat(&y, p(e, "out.w"));
        add_into(&mut logits, p(e, "out.b").data());
        Ok(logits)
    }

    fn log_probs(logits: &[f32]) -> Vec<f64> {
        let l: Vec<f64> = logits.iter().map(|&v| v as f64).collect();
        let m = l.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = l.iter().map(|v| (v - m).exp()).sum::<f64>().ln() + m;
        l.into_iter().map(|v| v - lse).collect()
    }
}

impl StepModel for IncrementalDecoder<'_> {
    type State = DecoderState;

    fn start(&self) -> Result<(DecoderState, Vec<f64>)> {
        let mut s = DecoderState {
            keys: Vec::new(),
            values: Vec::new(),
        };
        let logits = self.step(&mut s, BOS_ID)?;
        Ok((s, Self::log_probs(&logits)))
    }

    fn extend(&self, state: &DecoderState, token: usize) -> Result<(DecoderState, Vec<f64>)> {
        let mut s = state.clone();
        let logits = self.step(&mut s, token)?;
        Ok((s, Self::log_probs(&logits)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab() -> Vocab {
        let words: Vec<String> = ["a", "b", "c", "d", "e"].iter().map(|s| s.to_string()).collect();
        Vocab::build([words.as_slice()])
    }

    fn ids(v: &Vocab, s: &str) -> Vec<usize> {
        s.split_whitespace().map(|w| v.id(w).unwrap()).collect()
    }

    #[test]
    fn sentinel_collapse() {
        let v = vocab();
        let m = apply_sentinels(&v, &ids(&v, "a b c d e"), &[0, 1, 1, 0, 1]).unwrap();
        assert_eq!(m.source, ids(&v, "a <sent_0> d <sent_1>"));
        assert_eq!(m.target, ids(&v, "<sent_0> b c <sent_1> e <eos>"));
        let all = apply_sentinels(&v, &ids(&v, "a b c d e"), &[1; 5]).unwrap();
        assert_eq!(all.source, ids(&v, "<sent_0>"));
        assert_eq!(all.target, ids(&v, "<sent_0> a b c d e <eos>"));
        assert!(matches!(apply_sentinels(&v, &ids(&v, "a b"), &[0, 0]), Err(CoreError::NothingToEdit)));
    }

    #[test]
    fn parse_salvages() {
        let v = vocab();
        let (s, bad) = parse_infill(&v, &ids(&v, "<sent_0> b <sent_1> e <eos>"), 2);
        assert!(!bad);
        assert_eq!(s, vec![ids(&v, "b"), ids(&v, "e")]);
        let (s, bad) = parse_infill(&v, &ids(&v, "<sent_0> <sent_0> b <eos>"), 2);
        assert!(bad);
        assert_eq!(s, vec![ids(&v, "b"), vec![]]);
        let (s, bad) = parse_infill(&v, &ids(&v, "a <sent_1> c"), 1);
        assert!(bad);
        assert_eq!(s, vec![ids(&v, "c")]);
    }

    #[test]
    fn constraint_enforces_format() {
        let v = vocab();
        let c = SpanConstraint::new(&v, vec![1, 5]);
        let (s0, s1, a) = (v.sentinel_id(0), v.sentinel_id(1), v.id("a").unwrap());
        assert!(c.allowed(&[], s0));
        assert!(!c.allowed(&[], a));
        assert!(c.allowed(&[s0], a));
        assert!(!c.allowed(&[s0, a], a));
        assert!(!c.allowed(&[s0], EOS_ID));
        assert!(c.allowed(&[s0, a], s1));
        assert!(!c.allowed(&[s0, a, s1], v.sentinel_id(2)));
        assert!(c.allowed(&[s0, a, s1], EOS_ID));
        assert!(!c.allowed(&[s0, a, s1], v.label_id("positive").unwrap()));
    }

    #[test]
    fn incremental_matches_graph() {
        let v = vocab();
        let ed = Editor::new(EditorConfig { d: 16, max_len: 32, ffn_hidden: 24 }, v.len(), 3).unwrap();
        let m = apply_sentinels(&v, &ids(&v, "a b c d e"), &[0, 1, 1, 0, 1]).unwrap();
        let label = v.label_id("positive").unwrap();
        let mut src = vec![label];
        src.extend_from_slice(&m.source);
        let mut g = Graph::new();
        let mem = ed.encode_graph(&mut g, &ed.params, &src).unwrap();
        let mut input = vec![BOS_ID];
        input.extend_from_slice(&m.target[..m.target.len() - 1]);
        let logits = ed.decode_graph(&mut g, &ed.params, mem, &input).unwrap();
        let full = evaluate(&g, &ed.params).unwrap().get(logits).clone();

        let dec = ed.decoder(label, &m.source).unwrap();
        let mut st = DecoderState {
            keys: Vec::new(),
            values: Vec::new(),
        };
        for (i, &t) in input.iter().enumerate() {
            let l = dec.step(&mut st, t).unwrap();
            for (a, b) in l.iter().zip(full.row(i)) {
                assert!((a - b).abs() < 1e-4, "position {i}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn initial_loss_is_near_uniform() {
        let v = vocab();
        let ed = Editor::new(EditorConfig::default(), v.len(), 4).unwrap();
        let m = apply_sentinels(&v, &ids(&v, "a b c d e"), &[0, 1, 1, 0, 1]).unwrap();
        let loss = ed.loss(&[(v.label_id("negative").unwrap(), &m)]).unwrap();
        let uniform = (v.len() as f64).ln();
        assert!((loss - uniform).abs() < 0.1 * uniform, "{loss} vs {uniform}");
    }

    #[test]
    fn no_sentinel_returns_source() {
        let v = vocab();
        let ed = Editor::new(EditorConfig { d: 8, max_len: 16, ffn_hidden: 8 }, v.len(), 5).unwrap();
        let m = MaskedInput {
            source: ids(&v, "a b c"),
            target: vec![EOS_ID],
            spans: vec![],
        };
        let out = ed.generate(&v, &m, v.label_id("positive").unwrap(), &BeamConfig::default()).unwrap();
        assert_eq!(out.tokens, m.source);
        assert!(!out.malformed);
    }

    #[test]
    fn beam_one_matches_greedy_on_editor() {
        let v = vocab();
        let ed = Editor::new(EditorConfig { d: 16, max_len: 32, ffn_hidden: 16 }, v.len(), 6).unwrap();
        let m = apply_sentinels(&v, &ids(&v, "a b c d e"), &[1, 0, 0, 1, 1]).unwrap();
        let label = v.label_id("negative").unwrap();
        let cfg = BeamConfig { size: 1, ..BeamConfig::default() };
        let dec = ed.decoder(label, &m.source).unwrap();
        let c = SpanConstraint::new(&v, vec![6, 8]);
        let b = beam_search(&dec, &c, EOS_ID, &BeamConfig { max_len: 17, ..cfg }).unwrap();
        let g = greedy_decode(&dec, &c, EOS_ID, &BeamConfig { max_len: 17, ..cfg }).unwrap();
        assert_eq!(b.tokens, g.tokens);
        let out = ed.generate(&v, &m, label, &cfg).unwrap();
        assert!(!out.malformed);
        assert_eq!(out.hypothesis.unwrap().tokens, g.tokens);
    }
}
