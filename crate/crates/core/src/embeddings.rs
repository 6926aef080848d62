//! User/item embedding tables and continuous-prompt assembly.
//!
//! A record is laid out as `[u, i, <bos>, e_1 .. e_n]`: the user and item rows
//! take the place of the first two tokens, followed by word embeddings. Every
//! position adds its learned absolute position vector. The prediction read
//! after position `2 + k` (0-based) targets `e_{k+1}`, with `<eos>` last.

use rand::Rng;

use crate::corpus::{BOS, EOS};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Uniform init half-width for every embedding table.
pub const INIT_SCALE: f64 = 0.1;

/// Number of prompt slots preceding the first explanation target.
pub const PROMPT_PREFIX: usize = 3;

/// The user table `U` and item table `I`, shared by the language model prompt
/// and the rating head.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTables<T> {
    pub users: Tensor<T>,
    pub items: Tensor<T>,
}

fn checked_index<I>(index: I, size: usize, what: &'static str) -> Result<usize>
where
    I: TryInto<usize> + TryInto<i64> + Copy,
{
    let range_err = || Error::Range {
        what,
        index: TryInto::<i64>::try_into(index).unwrap_or(i64::MAX),
        size,
    };
    let i: usize = index.try_into().map_err(|_| range_err())?;
    if i >= size {
        return Err(range_err());
    }
    Ok(i)
}

impl<T: Scalar> EmbeddingTables<T> {
    pub fn zeros(n_users: usize, n_items: usize, dim: usize) -> Self {
        Self {
            users: Tensor::zeros(&[n_users, dim]),
            items: Tensor::zeros(&[n_items, dim]),
        }
    }

    pub fn init<R: Rng + ?Sized>(n_users: usize, n_items: usize, dim: usize, rng: &mut R) -> Self {
        Self {
            users: Tensor::uniform(&[n_users, dim], INIT_SCALE, rng),
            items: Tensor::uniform(&[n_items, dim], INIT_SCALE, rng),
        }
    }

    pub fn dim(&self) -> usize {
        self.users.cols()
    }

    pub fn n_users(&self) -> usize {
        self.users.rows()
    }

    pub fn n_items(&self) -> usize {
        self.items.rows()
    }

    /// Row `index` of `U`.
    pub fn lookup_user<I>(&self, index: I) -> Result<&[T]>
    where
        I: TryInto<usize> + TryInto<i64> + Copy,
    {
        let i = checked_index(index, self.n_users(), "user table")?;
        Ok(self.users.row(i))
    }

    /// Row `index` of `I`.
    pub fn lookup_item<I>(&self, index: I) -> Result<&[T]>
    where
        I: TryInto<usize> + TryInto<i64> + Copy,
    {
        let i = checked_index(index, self.n_items(), "item table")?;
        Ok(self.items.row(i))
    }
}

/// An embedded prompt ready for the transformer.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptSequence<T> {
    pub user: usize,
    pub item: usize,
    /// Word tokens fed after the ID prompt: `<bos>` then the explanation.
    pub tokens: Vec<usize>,
    /// 1-based position of each input slot.
    pub positions: Vec<usize>,
    /// `len × d` input embeddings.
    pub inputs: Tensor<T>,
    /// Teacher-forcing targets `e_1 .. e_n, <eos>`.
    pub targets: Vec<usize>,
}

impl<T> PromptSequence<T> {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// 0-based input slot whose output predicts `targets[k]`.
    pub fn target_slot(k: usize) -> usize {
        PROMPT_PREFIX - 1 + k
    }
}

/// Builds `[u, i, <bos>, e_1 .. e_n]` plus position vectors.
///
/// `word_table` is `|V| × d`; `position_table` is `max_len × d` and bounds the
/// sequence. Explanations that do not fit are truncated; the final target is
/// always `<eos>`.
pub fn assemble_prompt<T: Scalar>(
    user: usize,
    item: usize,
    explanation: &[usize],
    tables: &EmbeddingTables<T>,
    word_table: &Tensor<T>,
    position_table: &Tensor<T>,
) -> Result<PromptSequence<T>> {
    let d = tables.dim();
    if word_table.cols() != d || position_table.cols() != d {
        return Err(Error::Config(format!(
            "embedding width mismatch: ids {d}, words {}, positions {}",
            word_table.cols(),
            position_table.cols()
        )));
    }
    let max_len = position_table.rows();
    if max_len < PROMPT_PREFIX {
        return Err(Error::Config(format!("maximum sequence length {max_len} < 3")));
    }
    let n = explanation.len().min(max_len - PROMPT_PREFIX);
    let explanation = &explanation[..n];
    let vocab = word_table.rows();
    if let Some(&bad) = explanation.iter().find(|&&t| t >= vocab) {
        return Err(Error::Range {
            what: "vocabulary",
            index: bad as i64,
            size: vocab,
        });
    }

    let len = n + PROMPT_PREFIX;
    let mut tokens = Vec::with_capacity(n + 1);
    tokens.push(BOS);
    tokens.extend_from_slice(explanation);

    let mut inputs = Tensor::zeros(&[len, d]);
    inputs.row_mut(0).copy_from_slice(tables.lookup_user(user)?);
    inputs.row_mut(1).copy_from_slice(tables.lookup_item(item)?);
    for (k, &t) in tokens.iter().enumerate() {
        inputs.row_mut(k + 2).copy_from_slice(word_table.row(t));
    }
    for p in 0..len {
        let pos = position_table.row(p);
        for (x, &v) in inputs.row_mut(p).iter_mut().zip(pos) {
            *x += v;
        }
    }

    let mut targets = explanation.to_vec();
    targets.push(EOS);
    Ok(PromptSequence {
        user,
        item,
        tokens,
        positions: (1..=len).collect(),
        inputs,
        targets,
    })
}
