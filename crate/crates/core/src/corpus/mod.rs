//! Synthetic corpora, tokenization, dataset files and checkpoints.

pub mod checkpoint;
pub mod data;
pub mod synth;
pub mod vocab;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use data::{
    read_examples, read_pairs, split_of, write_examples, write_pairs, CounterfactualPair, Example, Split, Task,
};
pub use synth::{gen_nli_corpus, gen_sentiment_corpus, nli_oracle, sentiment_oracle};
pub use vocab::{Tokenizer, Vocab};

/// Oracle label for the task's templates.
pub fn oracle_label<S: AsRef<str>>(task: Task, tokens: &[S]) -> Option<usize> {
    match task {
        Task::Sentiment => sentiment_oracle(tokens),
        Task::Nli => nli_oracle(tokens),
    }
}

/// Token ids and labels of `examples`.
pub fn encode_examples(vocab: &Vocab, examples: &[Example]) -> Vec<(Vec<usize>, usize)> {
    examples.iter().map(|e| (vocab.encode(&e.tokens), e.label)).collect()
}

/// Vocabulary over the examples' tokens.
pub fn build_vocab(examples: &[Example]) -> Vocab {
    Vocab::build(examples.iter().map(|e| e.tokens.as_slice()))
}
