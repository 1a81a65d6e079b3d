use rand::Rng;

use super::model::{BoundModel, LogitModel, TokenDistribution};
use super::types::{Dataset, GenerationConfig, Message};
use crate::error::Result;

/// Sequential token sampler for one (model, dataset, config) triple.
///
/// Every message consumes exactly `L` uniform draws, one per token, and tokens
/// are chosen by inverse CDF in vocabulary order.
#[derive(Clone, Debug)]
pub struct Sampler<'a> {
    bound: BoundModel<'a>,
    config: GenerationConfig,
    // Per-step (cumulative probabilities, logits) when the model ignores history.
    cached: Option<Vec<(Vec<f64>, Vec<f64>)>>,
}

impl<'a> Sampler<'a> {
    pub fn new(model: &'a LogitModel, dataset: &Dataset, config: GenerationConfig) -> Result<Self> {
        let bound = model.bind(dataset)?;
        let cached = if model.is_history_independent() {
            // history content is irrelevant; only its length selects the base row
            let history = vec![0; config.length()];
            let steps = (0..config.length())
                .map(|k| {
                    let logits = bound.logits(&history[..k])?;
                    let dist = TokenDistribution::from_logits(&logits, config.temperature())?;
                    Ok((cdf(&dist), logits))
                })
                .collect::<Result<Vec<_>>>()?;
            Some(steps)
        } else {
            None
        };
        Ok(Self { bound, config, cached })
    }

    pub fn config(&self) -> &GenerationConfig {
        &self.config
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Message> {
        let mut tokens = Vec::with_capacity(self.config.length());
        self.sample_into(rng, &mut tokens)?;
        Ok(Message::from_indices(tokens))
    }

    /// Sample into a reusable buffer (cleared first).
    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, tokens: &mut Vec<usize>) -> Result<()> {
        self.sample_scored(rng, tokens).map(|_| ())
    }

    /// Sample into `tokens` and return the cumulative logit score of the draw.
    pub fn sample_scored<R: Rng + ?Sized>(&self, rng: &mut R, tokens: &mut Vec<usize>) -> Result<f64> {
        tokens.clear();
        let mut score = 0.0;
        for k in 0..self.config.length() {
            let u: f64 = rng.gen();
            let token = match &self.cached {
                Some(steps) => {
                    let (cdf, logits) = &steps[k];
                    let t = invert(cdf, u);
                    score += logits[t];
                    t
                }
                None => {
                    let logits = self.bound.logits(tokens)?;
                    let dist = TokenDistribution::from_logits(&logits, self.config.temperature())?;
                    let t = invert(&cdf(&dist), u);
                    score += logits[t];
                    t
                }
            };
            tokens.push(token);
        }
        Ok(score)
    }
}

fn cdf(dist: &TokenDistribution) -> Vec<f64> {
    let mut acc = 0.0;
    dist.log_probs
        .iter()
        .map(|l| {
            acc += l.exp();
            acc
        })
        .collect()
}

fn invert(cdf: &[f64], u: f64) -> usize {
    cdf.iter().position(|&c| u < c).unwrap_or(cdf.len() - 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_cdf_picks_first_bucket_above_u() {
        let c = [0.2, 0.7, 1.0];
        assert_eq!(invert(&c, 0.0), 0);
        assert_eq!(invert(&c, 0.2), 1);
        assert_eq!(invert(&c, 0.69), 1);
        assert_eq!(invert(&c, 0.999_999), 2);
        // rounding can leave the last cumulative value just below 1
        assert_eq!(invert(&[0.5, 0.999_999_999], 0.999_999_999_5), 1);
    }
}
