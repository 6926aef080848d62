//! Greedy explanation generation.

use crate::checkpoint::Checkpoint;
use crate::corpus::{Vocabulary, BOS, EOS, PAD, UNK};
use crate::embeddings::PROMPT_PREFIX;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::scalar::Scalar;

pub const DEFAULT_MAX_LEN: usize = 20;

/// Decoding strategy. Only greedy search is provided.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DecodeStrategy {
    #[default]
    Greedy,
}

/// Tokens that may never be emitted.
pub fn is_masked(token: usize) -> bool {
    matches!(token, BOS | PAD | UNK)
}

/// Greedy decode from `[u, i, <bos>]`: append the most probable unmasked
/// token (lowest index on ties) until `<eos>`, `max_len` words, or the
/// model's context limit. The result excludes `<bos>` and `<eos>`.
pub fn generate_tokens<T: Scalar>(
    model: &Model<T>,
    user: usize,
    item: usize,
    max_len: usize,
    strategy: DecodeStrategy,
) -> Result<Vec<usize>> {
    if max_len == 0 {
        return Err(Error::Config("max length must be >= 1".into()));
    }
    model.tables.lookup_user(user)?;
    model.tables.lookup_item(item)?;
    let limit = max_len.min(model.config.max_len - PROMPT_PREFIX);
    let lm = model.lm();
    let d = model.config.d_model;
    let mut out = Vec::new();
    while out.len() < limit {
        let seq = model.prompt(user, item, &out)?;
        let hidden = lm.forward(&seq)?;
        let last = seq.len() - 1;
        let dist = lm.project_vocab(&hidden.data[last * d..(last + 1) * d]);
        let next = match strategy {
            DecodeStrategy::Greedy => dist.argmax_where(|t| !is_masked(t)).expect("eos is never masked"),
        };
        if next == EOS {
            break;
        }
        out.push(next);
    }
    Ok(out)
}

fn words(vocab: &Vocabulary, tokens: &[usize]) -> Result<Vec<String>> {
    vocab.detokenize(tokens)
}

/// Generated explanation words for dense `(user, item)` indices.
pub fn generate_explanation(ckpt: &Checkpoint, user: usize, item: usize, max_len: usize) -> Result<Vec<String>> {
    let tokens = generate_tokens(&ckpt.model, user, item, max_len, DecodeStrategy::Greedy)?;
    words(&ckpt.vocab, &tokens)
}

/// Element-wise [`generate_explanation`], order preserved.
pub fn generate_corpus(ckpt: &Checkpoint, pairs: &[(usize, usize)], max_len: usize) -> Result<Vec<Vec<String>>> {
    pairs
        .iter()
        .map(|&(u, i)| generate_explanation(ckpt, u, i, max_len))
        .collect()
}
