//! Logit sensitivity, exact token- and message-level privacy loss between
//! neighboring datasets, hockey-stick divergence, the analytic temperature
//! bounds and additive composition.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::generation::{
    enumerate_bound, message_tokens, Dataset, GenerationConfig, LogitModel, Message, MessageDistribution, Record,
};

/// Two datasets of equal size that differ by replacing exactly one record.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NeighborPair {
    left: Dataset,
    right: Dataset,
    differing_index: usize,
}

impl NeighborPair {
    pub fn new(left: Dataset, right: Dataset, differing_index: usize) -> Result<Self> {
        if left.len() != right.len() {
            return Err(Error::Argument(format!(
                "neighbors must have equal size ({} vs {})",
                left.len(),
                right.len()
            )));
        }
        if differing_index >= left.len() {
            return Err(Error::Argument(format!(
                "differing index {differing_index} out of range for {} records",
                left.len()
            )));
        }
        for (i, (a, b)) in left.records.iter().zip(&right.records).enumerate() {
            if i != differing_index && a != b {
                return Err(Error::Argument(format!(
                    "neighbors also differ at record {i}, not only at {differing_index}"
                )));
            }
        }
        if left.records[differing_index] == right.records[differing_index] {
            return Err(Error::Argument(format!(
                "record {differing_index} is identical in both datasets"
            )));
        }
        Ok(Self {
            left,
            right,
            differing_index,
        })
    }

    /// Pair `(dataset, dataset with record `index` replaced)`.
    pub fn replace(dataset: &Dataset, index: usize, record: Record) -> Result<Self> {
        let right = dataset.with_replacement(index, record)?;
        Self::new(dataset.clone(), right, index)
    }

    pub fn left(&self) -> &Dataset {
        &self.left
    }

    pub fn right(&self) -> &Dataset {
        &self.right
    }

    pub fn differing_index(&self) -> usize {
        self.differing_index
    }

    pub fn old_record(&self) -> &Record {
        &self.left.records[self.differing_index]
    }

    pub fn new_record(&self) -> &Record {
        &self.right.records[self.differing_index]
    }

    pub fn swapped(&self) -> Self {
        Self {
            left: self.right.clone(),
            right: self.left.clone(),
            differing_index: self.differing_index,
        }
    }
}

/// Where the sensitivity supremum is attained.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SensitivityWitness {
    /// Computed from the influence rule; history plays no role.
    Analytic { token: usize, step: usize },
    /// Found by enumerating every history.
    Enumerated {
        token: usize,
        step: usize,
        history: Vec<usize>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Sensitivity {
    pub delta_logit: f64,
    pub attained_at: SensitivityWitness,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PrivacyLoss {
    pub epsilon: f64,
    pub delta: f64,
}

impl PrivacyLoss {
    pub fn new(epsilon: f64, delta: f64) -> Result<Self> {
        if !(epsilon >= 0.0) {
            return Err(Error::Argument(format!("epsilon must be >= 0, got {epsilon}")));
        }
        if !(0.0..=1.0).contains(&delta) {
            return Err(Error::Argument(format!("delta must lie in [0, 1], got {delta}")));
        }
        Ok(Self { epsilon, delta })
    }

    pub fn pure(epsilon: f64) -> Result<Self> {
        Self::new(epsilon, 0.0)
    }
}

/// Largest logit change `max_{w,k} |influence(new) - influence(old)|`.
///
/// Only the replaced record contributes, so this is exact for record-additive
/// models without touching histories.
pub fn logit_sensitivity(model: &LogitModel, pair: &NeighborPair, config: &GenerationConfig) -> Result<Sensitivity> {
    let (old, new) = (pair.old_record(), pair.new_record());
    let mut best = (0.0, 0, 1);
    for step in 1..=config.length() {
        for w in 0..model.vocab().len() {
            let d = (model.record_influence(new, w, step)? - model.record_influence(old, w, step)?).abs();
            if d > best.0 {
                best = (d, w, step);
            }
        }
    }
    // surface unknown labels elsewhere in either dataset
    model.bind(pair.left())?;
    model.bind(pair.right())?;
    Ok(Sensitivity {
        delta_logit: best.0,
        attained_at: SensitivityWitness::Analytic {
            token: best.1,
            step: best.2,
        },
    })
}

/// Sensitivity by brute force over every history of length `0..L` and every
/// token. Subject to the enumeration cap on `|V|^L`.
pub fn logit_sensitivity_exhaustive(
    model: &LogitModel,
    pair: &NeighborPair,
    config: &GenerationConfig,
) -> Result<Sensitivity> {
    let n = model.vocab().len();
    config.check_enumerable(n)?;
    let left = model.bind(pair.left())?;
    let right = model.bind(pair.right())?;
    let mut best = (0.0, 0, 1, Vec::new());
    for_each_history(n, config.length(), |history| {
        let a = left.logits(history)?;
        let b = right.logits(history)?;
        for w in 0..n {
            let d = (a[w] - b[w]).abs();
            if d > best.0 {
                best = (d, w, history.len() + 1, history.to_vec());
            }
        }
        Ok(())
    })?;
    Ok(Sensitivity {
        delta_logit: best.0,
        attained_at: SensitivityWitness::Enumerated {
            token: best.1,
            step: best.2,
            history: best.3,
        },
    })
}

/// Visit every history of length `0..length` (the contexts of steps `1..=length`).
fn for_each_history<F>(vocab_size: usize, length: usize, mut visit: F) -> Result<()>
where
    F: FnMut(&[usize]) -> Result<()>,
{
    let mut count = 1usize;
    for k in 0..length {
        for idx in 0..count {
            visit(&message_tokens(idx, vocab_size, k))?;
        }
        count *= vocab_size;
    }
    Ok(())
}

/// Smallest epsilon for which the step is (epsilon, 0)-DP at this history:
/// `max_w |log pi_D(w|h) - log pi_D'(w|h)|`.
pub fn token_epsilon_exact(
    model: &LogitModel,
    pair: &NeighborPair,
    history: &[usize],
    step: usize,
    config: &GenerationConfig,
) -> Result<f64> {
    let p = crate::generation::token_distribution(model, pair.left(), history, step, config)?;
    let q = crate::generation::token_distribution(model, pair.right(), history, step, config)?;
    Ok(max_abs_log_ratio(&p.log_probs, &q.log_probs))
}

/// For each step `k`, the maximum of [`token_epsilon_exact`] over all histories
/// of length `k - 1`.
pub fn per_step_token_epsilons(model: &LogitModel, pair: &NeighborPair, config: &GenerationConfig) -> Result<Vec<f64>> {
    let n = model.vocab().len();
    config.check_enumerable(n)?;
    let left = model.bind(pair.left())?;
    let right = model.bind(pair.right())?;
    let t = config.temperature();
    let mut out = vec![0.0_f64; config.length()];
    for_each_history(n, config.length(), |history| {
        let p = left.token_distribution(history, t)?;
        let q = right.token_distribution(history, t)?;
        let slot = &mut out[history.len()];
        *slot = slot.max(max_abs_log_ratio(&p.log_probs, &q.log_probs));
        Ok(())
    })?;
    Ok(out)
}

fn max_abs_log_ratio(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| abs_log_ratio(*x, *y)).fold(0.0, f64::max)
}

fn abs_log_ratio(x: f64, y: f64) -> f64 {
    if x == f64::NEG_INFINITY && y == f64::NEG_INFINITY {
        0.0
    } else {
        (x - y).abs()
    }
}

/// `2 * delta_logit / T`.
pub fn token_epsilon_bound(delta_logit: f64, temperature: f64) -> Result<f64> {
    check_delta(delta_logit)?;
    crate::generation::GenerationConfig::new(temperature, 1)?;
    Ok(2.0 * delta_logit / temperature)
}

/// `2 * delta_logit * L / T`.
pub fn message_epsilon_bound(delta_logit: f64, temperature: f64, length: usize) -> Result<f64> {
    check_delta(delta_logit)?;
    crate::generation::GenerationConfig::new(temperature, length)?;
    Ok(2.0 * delta_logit * length as f64 / temperature)
}

/// Smallest temperature at which the message-level bound stays within the budget.
pub fn temperature_floor_for_budget(delta_logit: f64, length: usize, epsilon_budget: f64) -> Result<f64> {
    check_delta(delta_logit)?;
    if length == 0 {
        return Err(Error::Config("message length must be at least 1".into()));
    }
    if !(epsilon_budget > 0.0) || !epsilon_budget.is_finite() {
        return Err(Error::Config(format!(
            "epsilon budget must be finite and > 0, got {epsilon_budget}"
        )));
    }
    Ok(2.0 * delta_logit * length as f64 / epsilon_budget)
}

fn check_delta(delta_logit: f64) -> Result<()> {
    if !(delta_logit >= 0.0) || !delta_logit.is_finite() {
        return Err(Error::Config(format!(
            "logit sensitivity must be finite and >= 0, got {delta_logit}"
        )));
    }
    Ok(())
}

/// Largest pointwise log-ratio between two message tables and its index.
pub fn max_log_ratio(p: &MessageDistribution, q: &MessageDistribution) -> Result<(f64, usize)> {
    if !p.same_space(q) {
        return Err(Error::Argument(
            "distributions range over different message spaces".into(),
        ));
    }
    let mut best = (0.0, 0);
    for (i, (a, b)) in p.log_probs().iter().zip(q.log_probs()).enumerate() {
        let r = abs_log_ratio(*a, *b);
        if r > best.0 {
            best = (r, i);
        }
    }
    Ok(best)
}

/// Exact pure-DP message epsilon: `max_m |log P_D(m) - log P_D'(m)|`, with the
/// message that attains it.
pub fn message_epsilon_exact(
    model: &LogitModel,
    pair: &NeighborPair,
    config: &GenerationConfig,
) -> Result<(f64, Message)> {
    let (p, q) = message_distributions(model, pair, config)?;
    let (eps, idx) = max_log_ratio(&p, &q)?;
    Ok((eps, p.message_at(idx)))
}

/// Enumerated message tables for both sides of the pair.
pub fn message_distributions(
    model: &LogitModel,
    pair: &NeighborPair,
    config: &GenerationConfig,
) -> Result<(MessageDistribution, MessageDistribution)> {
    let left = model.bind(pair.left())?;
    let right = model.bind(pair.right())?;
    let (t, l, cap) = (config.temperature(), config.length(), config.enum_cap());
    Ok((enumerate_bound(&left, t, l, cap)?, enumerate_bound(&right, t, l, cap)?))
}

/// Basic composition: `(sum eps, min(1, sum delta))`.
pub fn compose_privacy(steps: &[PrivacyLoss]) -> PrivacyLoss {
    let epsilon = steps.iter().map(|s| s.epsilon).sum();
    let delta = steps.iter().map(|s| s.delta).sum::<f64>().min(1.0);
    PrivacyLoss { epsilon, delta }
}

/// Hockey-stick divergence `sum_m max(P(m) - e^eps Q(m), 0)`: the tightest
/// delta for which `P(S) <= e^eps Q(S) + delta` holds for every set `S`.
pub fn hockey_stick_delta(p: &MessageDistribution, q: &MessageDistribution, epsilon: f64) -> Result<f64> {
    if !p.same_space(q) {
        return Err(Error::Argument(
            "distributions range over different message spaces".into(),
        ));
    }
    if !(epsilon >= 0.0) {
        return Err(Error::Argument(format!("epsilon must be >= 0, got {epsilon}")));
    }
    let mut total = 0.0;
    for (&lp, &lq) in p.log_probs().iter().zip(q.log_probs()) {
        if lp == f64::NEG_INFINITY {
            continue;
        }
        // P - e^eps Q = P (1 - e^(eps + lq - lp)), positive only when lp - lq > eps
        let gap = epsilon + lq - lp;
        if gap < 0.0 {
            total += -lp.exp() * gap.exp_m1();
        }
    }
    Ok(total.clamp(0.0, 1.0))
}

/// Hockey-stick delta at each requested epsilon.
pub fn hockey_stick_curve(
    p: &MessageDistribution,
    q: &MessageDistribution,
    epsilons: &[f64],
) -> Result<Vec<(f64, f64)>> {
    epsilons
        .iter()
        .map(|&e| Ok((e, hockey_stick_delta(p, q, e)?)))
        .collect()
}

/// Rendered message witness.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MessageWitness {
    pub tokens: Vec<usize>,
    pub text: String,
}

/// Everything known about one neighbor pair at one (T, L).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PrivacyReport {
    pub differing_index: usize,
    pub old_record: Record,
    pub new_record: Record,
    pub temperature: f64,
    pub length: usize,
    pub sensitivity: Sensitivity,
    pub exact_message_epsilon: f64,
    pub worst_message: MessageWitness,
    pub hockey_stick_delta_at: Vec<(f64, f64)>,
    pub token_epsilon_bound: f64,
    pub message_epsilon_bound: f64,
    pub per_step_exact_epsilons: Vec<f64>,
    pub lemma1_composed_epsilon: f64,
}

impl PrivacyReport {
    /// Both bound invariants with additive slack `1e-9`.
    pub fn bounds_hold(&self) -> bool {
        self.exact_message_epsilon <= self.message_epsilon_bound + 1e-9
            && self
                .per_step_exact_epsilons
                .iter()
                .all(|e| *e <= self.token_epsilon_bound + 1e-9)
    }
}

/// Default epsilon points for the hockey-stick curve: quarters of the exact epsilon.
pub fn default_epsilon_points(exact: f64) -> Vec<f64> {
    (0..=4).map(|i| exact * i as f64 / 4.0).collect()
}

/// Assemble a full report. `epsilon_points` defaults to [`default_epsilon_points`].
pub fn analyze(
    model: &LogitModel,
    pair: &NeighborPair,
    config: &GenerationConfig,
    epsilon_points: Option<&[f64]>,
) -> Result<PrivacyReport> {
    let sensitivity = logit_sensitivity(model, pair, config)?;
    let (p, q) = message_distributions(model, pair, config)?;
    let (exact, idx) = max_log_ratio(&p, &q)?;
    let worst = p.message_at(idx);
    let points = match epsilon_points {
        Some(e) => e.to_vec(),
        None => default_epsilon_points(exact),
    };
    let per_step = per_step_token_epsilons(model, pair, config)?;
    let composed = compose_privacy(
        &per_step
            .iter()
            .map(|&e| PrivacyLoss::pure(e))
            .collect::<Result<Vec<_>>>()?,
    );
    Ok(PrivacyReport {
        differing_index: pair.differing_index(),
        old_record: pair.old_record().clone(),
        new_record: pair.new_record().clone(),
        temperature: config.temperature(),
        length: config.length(),
        token_epsilon_bound: token_epsilon_bound(sensitivity.delta_logit, config.temperature())?,
        message_epsilon_bound: message_epsilon_bound(sensitivity.delta_logit, config.temperature(), config.length())?,
        sensitivity,
        exact_message_epsilon: exact,
        worst_message: MessageWitness {
            text: worst.render(model.vocab()),
            tokens: worst.tokens().to_vec(),
        },
        hockey_stick_delta_at: hockey_stick_curve(&p, &q, &points)?,
        per_step_exact_epsilons: per_step,
        lemma1_composed_epsilon: composed.epsilon,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generation::Vocabulary;

    fn ds(labels: &[&str]) -> Dataset {
        Dataset::new(
            labels
                .iter()
                .enumerate()
                .map(|(i, l)| Record::new(*l, 1.0, format!("r{i}")).unwrap())
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn neighbor_pair_validation() {
        let d = ds(&["a", "b"]);
        assert!(NeighborPair::new(d.clone(), ds(&["a"]), 0).is_err());
        assert!(NeighborPair::new(d.clone(), ds(&["b", "a"]), 0).is_err());
        assert!(NeighborPair::new(d.clone(), d.clone(), 0).is_err());
        assert!(NeighborPair::new(d.clone(), ds(&["a", "a"]), 2).is_err());
        let p = NeighborPair::new(d.clone(), ds(&["a", "a"]), 1).unwrap();
        assert_eq!(p.new_record().label, "a");
        assert!(NeighborPair::replace(&Dataset::default(), 0, Record::new("a", 1.0, "x").unwrap()).is_err());
    }

    #[test]
    fn bounds_reject_bad_parameters() {
        assert!(token_epsilon_bound(1.0, 0.0).is_err());
        assert!(token_epsilon_bound(-1.0, 1.0).is_err());
        assert!(message_epsilon_bound(1.0, 1.0, 0).is_err());
        assert!(temperature_floor_for_budget(1.0, 5, 0.0).is_err());
        assert!(PrivacyLoss::new(-0.1, 0.0).is_err());
        assert!(PrivacyLoss::new(0.1, 1.5).is_err());
    }

    #[test]
    fn composition_saturates_delta() {
        let steps = vec![PrivacyLoss::new(1.0, 0.7).unwrap(); 2];
        assert_eq!(
            compose_privacy(&steps),
            PrivacyLoss {
                epsilon: 2.0,
                delta: 1.0
            }
        );
    }

    #[test]
    fn hockey_stick_rejects_mismatched_spaces() {
        let v = Vocabulary::new(["a", "b"]).unwrap();
        let p = MessageDistribution::from_probs(v.clone(), 1, &[0.5, 0.5]).unwrap();
        let q = MessageDistribution::from_probs(v, 2, &[0.25; 4]).unwrap();
        assert!(matches!(hockey_stick_delta(&p, &q, 0.0), Err(Error::Argument(_))));
        assert!(hockey_stick_delta(&p, &p, -1.0).is_err());
    }
}
