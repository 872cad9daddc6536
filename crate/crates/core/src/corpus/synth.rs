//! Templated corpora with oracle labels and gold rationales.

use crate::corpus::data::{Example, Split};
use crate::corpus::vocab::SEP;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const POSITIVE_WORDS: [&str; 10] = [
    "great", "excellent", "wonderful", "superb", "brilliant", "delightful", "charming", "moving", "enjoyable", "masterful",
];
pub const NEGATIVE_WORDS: [&str; 10] = [
    "awful", "terrible", "boring", "dreadful", "dull", "clumsy", "tedious", "painful", "mediocre", "lifeless",
];
const NOUNS: [&str; 12] = [
    "film", "movie", "plot", "cast", "script", "ending", "soundtrack", "story", "director", "pacing", "dialogue", "camera",
];
const DAYS: [&str; 4] = ["monday", "friday", "saturday", "sunday"];
const PLACES: [&str; 5] = ["paris", "london", "tokyo", "a village", "the desert"];
const PEOPLE: [&str; 4] = ["sister", "friend", "brother", "neighbor"];
const NUMBERS: [&str; 4] = ["ninety", "two hundred", "one hundred", "eighty"];

pub const ENTITIES: [&str; 10] = [
    "man", "woman", "dog", "cat", "child", "chef", "player", "singer", "farmer", "teacher",
];
pub const ATTRIBUTES: [&str; 16] = [
    "tall", "young", "old", "happy", "tired", "hungry", "calm", "busy", "quiet", "strong", "sleepy", "angry", "wet",
    "cold", "brave", "shy",
];

fn split_for(i: usize, size: usize) -> Split {
    let f = i as f64 / size as f64;
    if f < 0.8 {
        Split::Train
    } else if f < 0.9 {
        Split::Dev
    } else {
        Split::Test
    }
}

fn words(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_string).collect()
}

/// A clause and the in-clause index of its polarity word, if any.
type Clause = (Vec<String>, Option<usize>);

fn polarity_clause(rng: &mut ChaCha8Rng, adj: &str) -> Clause {
    let noun = *NOUNS.choose(rng).unwrap();
    let (text, at) = match rng.gen_range(0..4) {
        0 => (format!("the {noun} was {adj}"), 3),
        1 => (format!("a {adj} {noun}"), 1),
        2 => (format!("i found the {noun} {adj}"), 4),
        _ => (format!("the {noun} felt {adj}"), 3),
    };
    (words(&text), Some(at))
}

fn neutral_clause(rng: &mut ChaCha8Rng) -> Clause {
    let noun = *NOUNS.choose(rng).unwrap();
    let text = match rng.gen_range(0..5) {
        0 => format!("the {noun} runs {} minutes", NUMBERS.choose(rng).unwrap()),
        1 => format!("i watched it on {}", DAYS.choose(rng).unwrap()),
        2 => format!("the {noun} is set in {}", PLACES.choose(rng).unwrap()),
        3 => format!("my {} came along", PEOPLE.choose(rng).unwrap()),
        _ => format!("there is a {noun} scene"),
    };
    (words(&text), None)
}

fn joined_len(clauses: &[Clause]) -> usize {
    clauses.iter().map(|c| c.0.len()).sum::<usize>() + clauses.len()
}

/// Reviews built from neutral filler plus one to three polarity clauses.
/// The label is the majority polarity; with probability `distractor_rate`
/// a three-clause review carries one clause of the opposite polarity. The
/// gold rationale marks every polarity word. Lengths are kept at or below
/// `length_range.1` and filled towards a target drawn from the range.
pub fn gen_sentiment_corpus(seed: u64, size: usize, length_range: (usize, usize), distractor_rate: f64) -> Vec<Example> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = (length_range.0.min(length_range.1), length_range.0.max(length_range.1));
    (0..size)
        .map(|i| {
            let label = rng.gen_range(0..2usize);
            let m = rng.gen_range(1..=3usize);
            let distract = m == 3 && rng.gen_bool(distractor_rate.clamp(0.0, 1.0));
            let mut clauses: Vec<Clause> = (0..m)
                .map(|j| {
                    let pol = if distract && j == 0 { 1 - label } else { label };
                    let lex = if pol == 1 { &POSITIVE_WORDS } else { &NEGATIVE_WORDS };
                    let adj = *lex.choose(&mut rng).unwrap();
                    polarity_clause(&mut rng, adj)
                })
                .collect();
            let target = rng.gen_range(lo..=hi);
            let mut attempts = 0;
            while joined_len(&clauses) < target && attempts < 8 {
                let c = neutral_clause(&mut rng);
                if joined_len(&clauses) + c.0.len() + 1 <= hi {
                    clauses.push(c);
                } else {
                    attempts += 1;
                }
            }
            clauses.shuffle(&mut rng);
            let mut tokens = Vec::new();
            let mut rationale = Vec::new();
            for (j, (words, pol)) in clauses.into_iter().enumerate() {
                if j > 0 {
                    tokens.push(if j % 2 == 1 { "," } else { "and" }.to_string());
                    rationale.push(0);
                }
                for (w, word) in words.into_iter().enumerate() {
                    rationale.push(u8::from(pol == Some(w)));
                    tokens.push(word);
                }
            }
            tokens.push(".".into());
            rationale.push(0);
            Example {
                id: format!("sentiment-{i:06}"),
                tokens,
                label,
                rationale: Some(rationale),
                split: split_for(i, size),
            }
        })
        .collect()
}

/// Lexicon vote: the majority polarity, `None` on a tie.
pub fn sentiment_oracle<S: AsRef<str>>(tokens: &[S]) -> Option<usize> {
    let (mut pos, mut neg) = (0, 0);
    for t in tokens {
        let t = t.as_ref();
        if POSITIVE_WORDS.contains(&t) {
            pos += 1;
        } else if NEGATIVE_WORDS.contains(&t) {
            neg += 1;
        }
    }
    match pos.cmp(&neg) {
        std::cmp::Ordering::Greater => Some(1),
        std::cmp::Ordering::Less => Some(0),
        std::cmp::Ordering::Equal => None,
    }
}

/// Premise `the E is a1 and a2 .`, hypothesis about one attribute; joined
/// by the separator. Entailment restates a premise attribute, contradiction
/// negates one, neutral names an attribute the premise does not mention.
/// The gold rationale marks the decisive hypothesis words.
pub fn gen_nli_corpus(seed: u64, size: usize) -> Vec<Example> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..size)
        .map(|i| {
            let label = rng.gen_range(0..3usize);
            let entity = *ENTITIES.choose(&mut rng).unwrap();
            let picked: Vec<&str> = ATTRIBUTES.choose_multiple(&mut rng, 3).copied().collect();
            let (a1, a2, other) = (picked[0], picked[1], picked[2]);
            let mut tokens = words(&format!("the {entity} is {a1} and {a2} ."));
            let mut rationale = vec![0u8; tokens.len()];
            tokens.push(SEP.to_string());
            rationale.push(0);
            let stated = if rng.gen_bool(0.5) { a1 } else { a2 };
            let (hyp, marks): (String, &[usize]) = match label {
                0 => (format!("the {entity} is {stated} ."), &[3]),
                2 => (format!("the {entity} is not {stated} ."), &[3, 4]),
                _ => (format!("the {entity} is {other} ."), &[3]),
            };
            let hyp = words(&hyp);
            for (j, w) in hyp.into_iter().enumerate() {
                rationale.push(u8::from(marks.contains(&j)));
                tokens.push(w);
            }
            Example {
                id: format!("nli-{i:06}"),
                tokens,
                label,
                rationale: Some(rationale),
                split: split_for(i, size),
            }
        })
        .collect()
}

/// Rule oracle for the NLI templates; `None` when the hypothesis names no
/// attribute or the separator is missing.
pub fn nli_oracle<S: AsRef<str>>(tokens: &[S]) -> Option<usize> {
    let toks: Vec<&str> = tokens.iter().map(|t| t.as_ref()).collect();
    let sep = toks.iter().position(|&t| t == SEP)?;
    let (premise, hyp) = (&toks[..sep], &toks[sep + 1..]);
    let attr = hyp.iter().find(|t| ATTRIBUTES.contains(t))?;
    let negated = hyp.contains(&"not");
    let same_entity = premise.iter().find(|t| ENTITIES.contains(t)) == hyp.iter().find(|t| ENTITIES.contains(t));
    if !same_entity || !premise.contains(attr) {
        return Some(1);
    }
    Some(if negated { 2 } else { 0 })
}
