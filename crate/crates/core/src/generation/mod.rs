//! Vocabularies, record-additive logit models, the temperature-scaled softmax,
//! exact enumeration of message distributions and seeded sampling.

mod distribution;
mod model;
mod sampling;
mod types;

use rand::Rng;

pub use distribution::{message_index, message_tokens, MessageDistribution};
pub use model::{BoundModel, InfluenceRule, LogitModel, TokenDistribution};
pub use sampling::Sampler;
pub use types::{
    validate_temperature, Context, Dataset, GenerationConfig, Message, Record, Vocabulary, DEFAULT_ENUM_CAP,
};

pub(crate) use distribution::{enumerate_bound, score_table_bound};

use crate::error::{Error, Result};

fn check_history(model: &LogitModel, history: &[usize], step: usize) -> Result<()> {
    if step == 0 {
        return Err(Error::Argument("step indices start at 1".into()));
    }
    if history.len() + 1 != step {
        return Err(Error::Argument(format!(
            "history of length {} does not precede step {step}",
            history.len()
        )));
    }
    if let Some(&bad) = history.iter().find(|&&t| t >= model.vocab().len()) {
        return Err(Error::Argument(format!("history token index {bad} out of range")));
    }
    Ok(())
}

fn check_message(model: &LogitModel, message: &Message) -> Result<()> {
    Message::new(message.tokens().to_vec(), model.vocab()).map(|_| ())
}

/// Next-token distribution at `step` (1-based) after `history`.
pub fn token_distribution(
    model: &LogitModel,
    dataset: &Dataset,
    history: &[usize],
    step: usize,
    config: &GenerationConfig,
) -> Result<TokenDistribution> {
    check_history(model, history, step)?;
    model.bind(dataset)?.token_distribution(history, config.temperature())
}

/// `sum_k log pi(w_k | w_<k)`: the autoregressive log-probability of a message.
pub fn message_log_probability(
    model: &LogitModel,
    dataset: &Dataset,
    message: &Message,
    config: &GenerationConfig,
) -> Result<f64> {
    if message.len() != config.length() {
        return Err(Error::Argument(format!(
            "message has {} tokens but the configured length is {}",
            message.len(),
            config.length()
        )));
    }
    check_message(model, message)?;
    let bound = model.bind(dataset)?;
    let tokens = message.tokens();
    let mut total = 0.0;
    for k in 0..tokens.len() {
        let dist = bound.token_distribution(&tokens[..k], config.temperature())?;
        total += dist.log_probs[tokens[k]];
    }
    Ok(total)
}

/// Exact distribution over all `|V|^L` messages.
pub fn enumerate_message_distribution(
    model: &LogitModel,
    dataset: &Dataset,
    config: &GenerationConfig,
) -> Result<MessageDistribution> {
    let bound = model.bind(dataset)?;
    enumerate_bound(&bound, config.temperature(), config.length(), config.enum_cap())
}

/// Draw one message token by token.
pub fn sample_message<R: Rng + ?Sized>(
    model: &LogitModel,
    dataset: &Dataset,
    config: &GenerationConfig,
    rng: &mut R,
) -> Result<Message> {
    Sampler::new(model, dataset, *config)?.sample(rng)
}

/// `U(m) = sum_k logit_D(w_k | w_<k)`. Independent of temperature.
pub fn cumulative_logit_score(model: &LogitModel, dataset: &Dataset, message: &Message) -> Result<f64> {
    check_message(model, message)?;
    let bound = model.bind(dataset)?;
    let tokens = message.tokens();
    let mut total = 0.0;
    let mut buf = Vec::with_capacity(model.vocab().len());
    for k in 0..tokens.len() {
        bound.logits_into(&tokens[..k], &mut buf)?;
        total += buf[tokens[k]];
    }
    Ok(total)
}

/// `U(m)` for every message of the given length, lexicographic order.
pub fn score_table(model: &LogitModel, dataset: &Dataset, length: usize, enum_cap: u64) -> Result<Vec<f64>> {
    score_table_bound(&model.bind(dataset)?, length, enum_cap)
}
