//! Differential-privacy and utility analysis of temperature-scaled
//! autoregressive generation on enumerable toy models.
//!
//! The crate is organized by analysis stage:
//!
//! * [`generation`]: vocabularies, record-additive logit models, the
//!   temperature-scaled softmax, exact message enumeration and sampling.
//! * [`privacy`]: logit sensitivity, exact token/message privacy loss,
//!   hockey-stick divergence, analytic bounds and additive composition.
//! * [`utility`]: Gibbs message distribution, expected utility, its
//!   temperature derivative and the regularized optimal-temperature solver.
//! * [`empirical`]: Laplace-smoothed estimators, divergence metrics and
//!   seeded temperature sweeps.
//! * [`files`]: model-spec and dataset file formats.
//!
//! All probabilities are natural-log based.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod empirical;
pub mod error;
pub mod files;
pub mod generation;
pub mod numeric;
pub mod privacy;
pub mod rng;
pub mod selftest;
pub mod utility;

pub use error::{Error, Result};
pub use generation::{
    cumulative_logit_score, enumerate_message_distribution, message_log_probability, sample_message,
    token_distribution, Context, Dataset, GenerationConfig, InfluenceRule, LogitModel, Message, MessageDistribution,
    Record, Sampler, TokenDistribution, Vocabulary,
};
