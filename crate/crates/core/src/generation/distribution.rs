use super::model::BoundModel;
use super::types::{Message, Vocabulary};
use crate::error::{Error, Result};
use crate::numeric::log_sum_exp;

/// Exact probability table over all `|V|^L` messages, lexicographic by token index.
#[derive(Clone, Debug, PartialEq)]
pub struct MessageDistribution {
    vocab: Vocabulary,
    length: usize,
    log_probs: Vec<f64>,
}

impl MessageDistribution {
    /// Build from an explicit log-probability table. Entries may be `-inf`
    /// (zero mass) but the table must normalize to one within 1e-10.
    pub fn from_log_probs(vocab: Vocabulary, length: usize, log_probs: Vec<f64>) -> Result<Self> {
        let expected = (vocab.len() as u128).checked_pow(length as u32);
        if expected != Some(log_probs.len() as u128) {
            return Err(Error::Argument(format!(
                "table of {} entries does not match |V|^L = {}^{}",
                log_probs.len(),
                vocab.len(),
                length
            )));
        }
        if log_probs.iter().any(|l| l.is_nan() || *l == f64::INFINITY) {
            return Err(Error::Argument("log-probabilities must be finite or -inf".into()));
        }
        let z = log_sum_exp(&log_probs);
        if z.abs() > 1e-10 {
            return Err(Error::Argument(format!("table is not normalized (log-sum = {z})")));
        }
        Ok(Self {
            vocab,
            length,
            log_probs,
        })
    }

    /// Build from linear probabilities; convenient for hand-made instances.
    pub fn from_probs(vocab: Vocabulary, length: usize, probs: &[f64]) -> Result<Self> {
        if probs.iter().any(|p| *p < 0.0 || !p.is_finite()) {
            return Err(Error::Argument("probabilities must be finite and >= 0".into()));
        }
        Self::from_log_probs(vocab, length, probs.iter().map(|p| p.ln()).collect())
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn length(&self) -> usize {
        self.length
    }

    pub fn log_probs(&self) -> &[f64] {
        &self.log_probs
    }

    pub fn probs(&self) -> Vec<f64> {
        self.log_probs.iter().map(|l| l.exp()).collect()
    }

    pub fn len(&self) -> usize {
        self.log_probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_probs.is_empty()
    }

    pub fn index_of(&self, message: &Message) -> usize {
        message_index(message.tokens(), self.vocab.len())
    }

    pub fn message_at(&self, index: usize) -> Message {
        Message::from_indices(message_tokens(index, self.vocab.len(), self.length))
    }

    pub fn log_prob(&self, message: &Message) -> f64 {
        self.log_probs[self.index_of(message)]
    }

    /// True when both tables range over the same vocabulary and length.
    pub fn same_space(&self, other: &Self) -> bool {
        self.length == other.length && self.vocab == other.vocab
    }
}

/// Lexicographic index of a token sequence: `sum_k w_k * |V|^(L-k)`.
pub fn message_index(tokens: &[usize], vocab_size: usize) -> usize {
    tokens.iter().fold(0, |acc, &t| acc * vocab_size + t)
}

/// Inverse of [`message_index`].
pub fn message_tokens(mut index: usize, vocab_size: usize, length: usize) -> Vec<usize> {
    let mut out = vec![0; length];
    for slot in out.iter_mut().rev() {
        *slot = index % vocab_size;
        index /= vocab_size;
    }
    out
}

/// Depth-first walk over every message prefix. `step_values(prefix)` returns a
/// per-token contribution for the next position; leaves receive the sum along
/// their path, emitted in lexicographic order.
pub(crate) fn accumulate_over_messages<F>(length: usize, capacity: usize, mut step_values: F) -> Result<Vec<f64>>
where
    F: FnMut(&[usize]) -> Result<Vec<f64>>,
{
    fn walk<F>(prefix: &mut Vec<usize>, acc: f64, length: usize, step_values: &mut F, out: &mut Vec<f64>) -> Result<()>
    where
        F: FnMut(&[usize]) -> Result<Vec<f64>>,
    {
        let values = step_values(prefix)?;
        let last = prefix.len() + 1 == length;
        for (w, v) in values.iter().enumerate() {
            if last {
                out.push(acc + v);
            } else {
                prefix.push(w);
                walk(prefix, acc + v, length, step_values, out)?;
                prefix.pop();
            }
        }
        Ok(())
    }

    let mut out = Vec::with_capacity(capacity);
    let mut prefix = Vec::with_capacity(length);
    walk(&mut prefix, 0.0, length, &mut step_values, &mut out)?;
    debug_assert_eq!(out.len(), capacity);
    Ok(out)
}

pub(crate) fn enumerate_bound(
    bound: &BoundModel<'_>,
    temperature: f64,
    length: usize,
    cap: u64,
) -> Result<MessageDistribution> {
    let vocab = bound.model().vocab();
    let states = super::types::check_enumerable(vocab.len(), length, cap)?;
    let log_probs = accumulate_over_messages(length, states, |h| {
        Ok(bound.token_distribution(h, temperature)?.log_probs)
    })?;
    Ok(MessageDistribution {
        vocab: vocab.clone(),
        length,
        log_probs,
    })
}

/// Cumulative logit score `U(m)` of every message, lexicographic order.
pub(crate) fn score_table_bound(bound: &BoundModel<'_>, length: usize, cap: u64) -> Result<Vec<f64>> {
    let vocab_size = bound.vocab_size();
    let states = super::types::check_enumerable(vocab_size, length, cap)?;
    accumulate_over_messages(length, states, |h| bound.logits(h))
}
