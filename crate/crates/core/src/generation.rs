//! Counterfactual generation: mask with the rationalizer, infill with the
//! editor under a flipped label, filter by the predictor, sweep budgets.

use crate::align::derive_counterfactual_rationale;
use crate::beam::BeamConfig;
use crate::corpus::{oracle_label, CounterfactualPair, Example, Task, Vocab};
use crate::editor::{apply_sentinels, Editor, MaskedInput};
use crate::error::{CoreError, Result};
use crate::metrics::{closeness, counterfactual_simulability, fluency_ppl, self_bleu, validity, CounterfactualSimulability, NgramLM};
use std::collections::HashMap;
use crate::nn::argmax;
use crate::rationalizer::Rationalizer;
use rayon::prelude::*;

const NLI_NEUTRAL: usize = 1;

/// Target label for a counterfactual. Binary tasks take the other class.
/// NLI swaps entailment and contradiction; a neutral label takes the
/// second most probable class of `probs`, and without `probs` the example
/// is skipped.
pub fn label_flip(y_f: usize, task: Task, probs: Option<&[f64]>) -> Result<usize> {
    if y_f >= task.num_classes() {
        return Err(CoreError::Config(format!("label {y_f} out of range for {task}")));
    }
    match task {
        Task::Sentiment => Ok(1 - y_f),
        Task::Nli if y_f != NLI_NEUTRAL => Ok(2 - y_f),
        Task::Nli => {
            let p = probs.ok_or_else(|| CoreError::Skip("neutral example has no counterfactual label".into()))?;
            if p.len() != task.num_classes() {
                return Err(CoreError::Length {
                    what: "class probabilities",
                    expected: task.num_classes(),
                    got: p.len(),
                });
            }
            let mut order: Vec<usize> = (0..p.len()).collect();
            order.sort_by(|&a, &b| p[b].total_cmp(&p[a]).then(a.cmp(&b)));
            Ok(if order[0] == y_f { order[1] } else { order[0] })
        }
    }
}

/// Editor training data: each example masked by the masker's rationale and
/// paired with its gold label token. Examples with an empty rationale are
/// left out.
pub fn editor_training_data(masker: &Rationalizer, vocab: &Vocab, task: Task, examples: &[Example]) -> Result<Vec<(usize, MaskedInput)>> {
    let rows: Vec<Result<Option<(usize, MaskedInput)>>> = examples
        .par_iter()
        .map(|e| {
            let ids = vocab.encode(&e.tokens);
            let out = masker.forward(&ids, None)?;
            let label_id = vocab
                .label_id(task.label_name(e.label))
                .ok_or_else(|| CoreError::Config("vocabulary lacks label tokens".into()))?;
            match apply_sentinels(vocab, &ids, &out.z) {
                Ok(m) => Ok(Some((label_id, m))),
                Err(CoreError::NothingToEdit) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect();
    let mut data = Vec::with_capacity(rows.len());
    for r in rows {
        if let Some(row) = r? {
            data.push(row);
        }
    }
    Ok(data)
}

/// Models and settings for generation.
pub struct Generator<'a> {
    pub masker: &'a Rationalizer,
    pub editor: &'a Editor,
    pub vocab: &'a Vocab,
    pub task: Task,
    pub beam: BeamConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationOutcome {
    pub pair: CounterfactualPair,
    /// The decoded infill needed salvaging.
    pub malformed: bool,
}

impl Generator<'_> {
    /// One pair for input `x`. With a gold label the flip follows it; with
    /// `None` the masker's prediction (and probabilities) is used.
    pub fn generate_counterfactual(&self, id: &str, x: &[String], y_f: Option<usize>) -> Result<GenerationOutcome> {
        let ids = self.vocab.encode(x);
        let out = self.masker.forward(&ids, None)?;
        let (y_f, y_c) = match y_f {
            Some(y) => (y, label_flip(y, self.task, None)?),
            None => {
                let y = out.prediction();
                (y, label_flip(y, self.task, Some(&out.probs))?)
            }
        };
        if out.z.iter().all(|&b| b == 0) {
            return Err(CoreError::EmptyRationale);
        }
        let masked = apply_sentinels(self.vocab, &ids, &out.z)?;
        let label_id = self
            .vocab
            .label_id(self.task.label_name(y_c))
            .ok_or_else(|| CoreError::Config("vocabulary lacks label tokens".into()))?;
        let infill = self.editor.generate(self.vocab, &masked, label_id, &self.beam)?;
        if infill.malformed {
            log::warn!("{id}: malformed infill salvaged");
        }
        let x_cf = self.vocab.decode(&infill.tokens)?;
        let z_cf = derive_counterfactual_rationale(x, &x_cf);
        let pair = CounterfactualPair {
            id: id.to_string(),
            x: x.to_vec(),
            y_f,
            x_cf,
            y_c,
            z: out.z,
            z_cf,
            valid: None,
        };
        pair.validate()?;
        Ok(GenerationOutcome {
            pair,
            malformed: infill.malformed,
        })
    }

    /// Pairs for every example, generated in parallel and returned in input
    /// order. Failures are logged and reported as `(id, reason)`.
    pub fn generate_all(&self, examples: &[Example], use_gold: bool) -> (Vec<GenerationOutcome>, Vec<(String, String)>) {
        let results: Vec<(String, Result<GenerationOutcome>)> = examples
            .par_iter()
            .map(|e| {
                let y = use_gold.then_some(e.label);
                (e.id.clone(), self.generate_counterfactual(&e.id, &e.tokens, y))
            })
            .collect();
        let mut done = Vec::new();
        let mut skipped = Vec::new();
        for (id, r) in results {
            match r {
                Ok(o) => done.push(o),
                Err(e) => {
                    log::info!("{id}: skipped ({e})");
                    skipped.push((id, e.to_string()));
                }
            }
        }
        (done, skipped)
    }
}

/// Splits pairs by whether the predictor labels the counterfactual `y_c`;
/// sets each pair's `valid` flag.
pub fn validity_filter(pairs: Vec<CounterfactualPair>, predictor: &Rationalizer, vocab: &Vocab) -> Result<(Vec<CounterfactualPair>, Vec<CounterfactualPair>)> {
    let verdicts: Vec<Result<bool>> = pairs
        .par_iter()
        .map(|p| {
            let x_cf = vocab.encode(&p.x_cf);
            if x_cf.is_empty() || predictor.check_tokens(&x_cf).is_err() {
                return Ok(false);
            }
            let out = predictor.forward(&x_cf, None)?;
            Ok(argmax(&out.probs) == p.y_c)
        })
        .collect();
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    for (mut p, v) in pairs.into_iter().zip(verdicts) {
        let ok = v?;
        p.valid = Some(ok);
        if ok {
            kept.push(p);
        } else {
            dropped.push(p);
        }
    }
    Ok((kept, dropped))
}

/// Validity under the task's rule oracle.
pub fn oracle_validity(pairs: &[CounterfactualPair], task: Task) -> Result<f64> {
    validity(pairs, |p| Ok(oracle_label(task, &p.x_cf)))
}

/// Counterfactual simulability of `model` with `editor` as the rewriter:
/// each input is masked by the model's rationale and infilled under the
/// flipped prediction. Edits run in parallel; failures are counted, not
/// fatal.
pub fn rationale_edit_simulability(
    model: &Rationalizer,
    editor: &Editor,
    vocab: &Vocab,
    task: Task,
    inputs: &[Vec<usize>],
    beam: &BeamConfig,
) -> Result<CounterfactualSimulability> {
    let edit_one = |x: &[usize]| -> Result<Vec<usize>> {
        let out = model.forward(x, None)?;
        let y = out.prediction();
        let y_c = label_flip(y, task, Some(&out.probs))?;
        let masked = apply_sentinels(vocab, x, &out.z)?;
        let label_id = vocab
            .label_id(task.label_name(y_c))
            .ok_or_else(|| CoreError::Config("vocabulary lacks label tokens".into()))?;
        Ok(editor.generate(vocab, &masked, label_id, beam)?.tokens)
    };
    let edits: HashMap<Vec<usize>, std::result::Result<Vec<usize>, String>> = inputs
        .par_iter()
        .map(|x| (x.clone(), edit_one(x).map_err(|e| e.to_string())))
        .collect();
    counterfactual_simulability(
        inputs,
        |x| {
            let out = model.forward(x, None)?;
            Ok((out.prediction(), out.z))
        },
        |x, _, _| edits[x].clone().map_err(CoreError::Skip),
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub budget: f64,
    pub validity: f64,
    pub fluency: f64,
    pub diversity: f64,
    pub closeness: f64,
    pub mean_tokens: f64,
    pub pairs: usize,
    pub skipped: usize,
}

/// Intrinsic metrics of a set of pairs.
pub fn summarize(budget: f64, pairs: &[CounterfactualPair], skipped: usize, task: Task, lm: &NgramLM) -> Result<SweepRow> {
    let texts: Vec<Vec<String>> = pairs.iter().map(|p| p.x_cf.clone()).collect();
    let n = pairs.len();
    if n == 0 {
        return Err(CoreError::Metric("no pairs to summarize".into()));
    }
    Ok(SweepRow {
        budget,
        validity: oracle_validity(pairs, task)?,
        fluency: fluency_ppl(&texts, lm)?,
        diversity: if n >= 2 { self_bleu(&texts)? } else { f64::NAN },
        closeness: pairs.iter().map(|p| closeness(&p.x, &p.x_cf)).sum::<f64>() / n as f64,
        mean_tokens: texts.iter().map(Vec::len).sum::<usize>() as f64 / n as f64,
        pairs: n,
        skipped,
    })
}

/// One row per budget: `train` produces the masker and editor for a
/// budget, which then generate counterfactuals for `eval`.
pub fn budget_sweep<F>(eval: &[Example], budgets: &[f64], task: Task, vocab: &Vocab, lm: &NgramLM, beam: BeamConfig, mut train: F) -> Result<Vec<SweepRow>>
where
    F: FnMut(f64) -> Result<(Rationalizer, Editor)>,
{
    let mut rows = Vec::with_capacity(budgets.len());
    for &b in budgets {
        let (masker, editor) = train(b)?;
        let gen = Generator {
            masker: &masker,
            editor: &editor,
            vocab,
            task,
            beam,
        };
        let (done, skipped) = gen.generate_all(eval, true);
        let pairs: Vec<CounterfactualPair> = done.into_iter().map(|o| o.pair).collect();
        let row = summarize(b, &pairs, skipped.len(), task, lm)?;
        log::info!("budget {b}: validity {:.4} closeness {:.4}", row.validity, row.closeness);
        rows.push(row);
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flips() {
        assert_eq!(label_flip(1, Task::Sentiment, None).unwrap(), 0);
        assert_eq!(label_flip(0, Task::Sentiment, None).unwrap(), 1);
        assert_eq!(label_flip(0, Task::Nli, None).unwrap(), 2);
        assert_eq!(label_flip(2, Task::Nli, None).unwrap(), 0);
        assert!(matches!(label_flip(1, Task::Nli, None), Err(CoreError::Skip(_))));
        // entailment 0.2, neutral 0.5, contradiction 0.3
        assert_eq!(label_flip(1, Task::Nli, Some(&[0.2, 0.5, 0.3])).unwrap(), 2);
    }
}
