use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::types::{validate_temperature, Dataset, Record, Vocabulary};
use crate::error::{Error, Result};
use crate::numeric::log_sum_exp;

/// How a single record shifts the logits. Both built-in rules scale by the
/// record weight clamped to `[-1, 1]`, so `|influence| <= beta` always holds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InfluenceRule {
    /// Adds `beta * w` to the logit of the record's label token.
    LabelMatch { beta: f64 },
    /// Adds `w * table[tag][token]` to every token; entries bounded by `beta`.
    TagTable {
        beta: f64,
        table: BTreeMap<String, Vec<f64>>,
    },
}

impl InfluenceRule {
    pub fn beta(&self) -> f64 {
        match self {
            Self::LabelMatch { beta } | Self::TagTable { beta, .. } => *beta,
        }
    }
}

/// Record-additive logit model over a finite vocabulary:
/// `logit_D(w | h) = base[k][w] + sum_r influence(r, w, k) + sum_j coupling[h_j][w]`.
///
/// Base rows are indexed by step; step `k` reads row `min(k - 1, rows - 1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LogitModel {
    vocab: Vocabulary,
    base: Vec<Vec<f64>>,
    influence: InfluenceRule,
    history_coupling: Option<Vec<Vec<f64>>>,
}

impl LogitModel {
    pub fn new(
        vocab: Vocabulary,
        base: Vec<Vec<f64>>,
        influence: InfluenceRule,
        history_coupling: Option<Vec<Vec<f64>>>,
    ) -> Result<Self> {
        let n = vocab.len();
        if base.is_empty() {
            return Err(Error::Config("base_logits needs at least one step row".into()));
        }
        for (k, row) in base.iter().enumerate() {
            check_row(row, n, &format!("base_logits[{k}]"))?;
        }
        let beta = influence.beta();
        if !beta.is_finite() || beta < 0.0 {
            return Err(Error::Config(format!(
                "influence beta must be finite and >= 0, got {beta}"
            )));
        }
        if let InfluenceRule::TagTable { table, .. } = &influence {
            for (tag, row) in table {
                let field = format!("influence.table[{tag:?}]");
                check_row(row, n, &field)?;
                if let Some((i, v)) = row.iter().enumerate().find(|(_, v)| v.abs() > beta) {
                    return Err(Error::Config(format!(
                        "{field}[{i}] = {v} exceeds the declared beta {beta}"
                    )));
                }
            }
        }
        if let Some(c) = &history_coupling {
            if c.len() != n {
                return Err(Error::Config(format!(
                    "history_coupling needs {n} rows, got {}",
                    c.len()
                )));
            }
            for (i, row) in c.iter().enumerate() {
                check_row(row, n, &format!("history_coupling[{i}]"))?;
            }
        }
        Ok(Self {
            vocab,
            base,
            influence,
            history_coupling,
        })
    }

    /// Model with a single history-independent base row and a label-match rule.
    pub fn label_match(vocab: Vocabulary, base_row: Vec<f64>, beta: f64) -> Result<Self> {
        Self::new(vocab, vec![base_row], InfluenceRule::LabelMatch { beta }, None)
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn base_rows(&self) -> &[Vec<f64>] {
        &self.base
    }

    pub fn influence_rule(&self) -> &InfluenceRule {
        &self.influence
    }

    pub fn history_coupling(&self) -> Option<&[Vec<f64>]> {
        self.history_coupling.as_deref()
    }

    /// The declared per-record influence cap.
    pub fn influence_cap(&self) -> f64 {
        self.influence.beta()
    }

    /// True when the token distribution at a step never reads the history.
    pub fn is_history_independent(&self) -> bool {
        self.history_coupling
            .as_ref()
            .is_none_or(|c| c.iter().flatten().all(|&v| v == 0.0))
    }

    pub fn base_logit(&self, step: usize, token: usize) -> f64 {
        self.base_row(step)[token]
    }

    fn base_row(&self, step: usize) -> &[f64] {
        let row = step.saturating_sub(1).min(self.base.len() - 1);
        &self.base[row]
    }

    /// Influence of one record on `token` at `step`. Errors when the record
    /// references a label or tag the model does not know.
    pub fn record_influence(&self, record: &Record, token: usize, _step: usize) -> Result<f64> {
        let scale = record.weight.clamp(-1.0, 1.0);
        match &self.influence {
            InfluenceRule::LabelMatch { beta } => {
                let label = self.vocab.index_of(&record.label).ok_or_else(|| {
                    Error::Input(format!(
                        "record label {:?} is not in the model vocabulary",
                        record.label
                    ))
                })?;
                Ok(if label == token { beta * scale } else { 0.0 })
            }
            InfluenceRule::TagTable { table, .. } => {
                if self.vocab.index_of(&record.label).is_none() {
                    return Err(Error::Input(format!(
                        "record label {:?} is not in the model vocabulary",
                        record.label
                    )));
                }
                let row = table.get(&record.tag).ok_or_else(|| {
                    Error::Input(format!("record tag {:?} has no row in the influence table", record.tag))
                })?;
                Ok(scale * row[token])
            }
        }
    }

    /// Resolve the dataset's total influence once so that logits can be
    /// evaluated repeatedly.
    pub fn bind<'a>(&'a self, dataset: &Dataset) -> Result<BoundModel<'a>> {
        let n = self.vocab.len();
        let mut influence = vec![0.0; n];
        for record in &dataset.records {
            for (w, slot) in influence.iter_mut().enumerate() {
                *slot += self.record_influence(record, w, 1)?;
            }
        }
        Ok(BoundModel { model: self, influence })
    }
}

fn check_row(row: &[f64], n: usize, field: &str) -> Result<()> {
    if row.len() != n {
        return Err(Error::Config(format!(
            "{field} has {} entries, expected {n}",
            row.len()
        )));
    }
    if let Some((i, v)) = row.iter().enumerate().find(|(_, v)| !v.is_finite()) {
        return Err(Error::Config(format!("{field}[{i}] = {v} is not finite")));
    }
    Ok(())
}

/// A logit model paired with a specific dataset.
#[derive(Clone, Debug)]
pub struct BoundModel<'a> {
    model: &'a LogitModel,
    influence: Vec<f64>,
}

impl<'a> BoundModel<'a> {
    pub fn model(&self) -> &'a LogitModel {
        self.model
    }

    pub fn vocab_size(&self) -> usize {
        self.influence.len()
    }

    /// Total logits for the next token after `history` (step = history.len() + 1).
    pub fn logits(&self, history: &[usize]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(self.influence.len());
        self.logits_into(history, &mut out)?;
        Ok(out)
    }

    pub fn logits_into(&self, history: &[usize], out: &mut Vec<f64>) -> Result<()> {
        let step = history.len() + 1;
        out.clear();
        out.extend(
            self.model
                .base_row(step)
                .iter()
                .zip(&self.influence)
                .map(|(b, i)| b + i),
        );
        if let Some(coupling) = &self.model.history_coupling {
            for &h in history {
                for (o, c) in out.iter_mut().zip(&coupling[h]) {
                    *o += c;
                }
            }
        }
        if let Some((w, v)) = out.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::ModelEvaluation(format!(
                "logit of token {w} at step {step} is {v}"
            )));
        }
        Ok(())
    }

    pub fn token_distribution(&self, history: &[usize], temperature: f64) -> Result<TokenDistribution> {
        TokenDistribution::from_logits(&self.logits(history)?, temperature)
    }
}

/// Next-token distribution stored as natural-log probabilities.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenDistribution {
    pub log_probs: Vec<f64>,
}

impl TokenDistribution {
    /// Temperature-scaled softmax, computed in log space.
    pub fn from_logits(logits: &[f64], temperature: f64) -> Result<Self> {
        validate_temperature(temperature)?;
        if let Some(v) = logits.iter().find(|v| !v.is_finite()) {
            return Err(Error::ModelEvaluation(format!("non-finite logit {v}")));
        }
        let mut scaled: Vec<f64> = logits.iter().map(|l| l / temperature).collect();
        let z = log_sum_exp(&scaled);
        for s in scaled.iter_mut() {
            *s -= z;
        }
        Ok(Self { log_probs: scaled })
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
}
