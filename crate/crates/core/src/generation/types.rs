use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default cap on the number of messages any exhaustive enumeration may visit.
pub const DEFAULT_ENUM_CAP: u64 = 1_000_000;

/// Ordered set of distinct tokens. Token indices are positions in this list.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn new<I, S>(tokens: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let tokens: Vec<String> = tokens.into_iter().map(Into::into).collect();
        if tokens.len() < 2 {
            return Err(Error::Config(format!(
                "vocabulary needs at least 2 tokens, got {}",
                tokens.len()
            )));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() {
                return Err(Error::Config(format!("vocabulary token {i} is empty")));
            }
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Config(format!("duplicate vocabulary token {t:?}")));
            }
        }
        Ok(Self { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    /// Always false; a vocabulary holds at least two tokens.
    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn token(&self, index: usize) -> &str {
        &self.tokens[index]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn index_of(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    fn single_char_tokens(&self) -> bool {
        self.tokens.iter().all(|t| t.chars().count() == 1)
    }
}

/// A fixed-length sequence of token indices.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Message(Vec<usize>);

impl Message {
    pub fn new(tokens: Vec<usize>, vocab: &Vocabulary) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::Argument("message must contain at least one token".into()));
        }
        if let Some(&bad) = tokens.iter().find(|&&t| t >= vocab.len()) {
            return Err(Error::Argument(format!(
                "token index {bad} out of range for a vocabulary of {}",
                vocab.len()
            )));
        }
        Ok(Self(tokens))
    }

    pub(crate) fn from_indices(tokens: Vec<usize>) -> Self {
        Self(tokens)
    }

    /// Parse a message from its rendered form. Single-character vocabularies
    /// are read character by character, others as whitespace-separated tokens.
    pub fn parse(text: &str, vocab: &Vocabulary) -> Result<Self> {
        let pieces: Vec<String> = if vocab.single_char_tokens() {
            text.chars().filter(|c| !c.is_whitespace()).map(String::from).collect()
        } else {
            text.split_whitespace().map(String::from).collect()
        };
        let tokens = pieces
            .iter()
            .map(|p| {
                vocab
                    .index_of(p)
                    .ok_or_else(|| Error::Argument(format!("unknown token {p:?} in message")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(tokens, vocab)
    }

    pub fn tokens(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn render(&self, vocab: &Vocabulary) -> String {
        let sep = if vocab.single_char_tokens() { "" } else { " " };
        self.0.iter().map(|&t| vocab.token(t)).collect::<Vec<_>>().join(sep)
    }
}

/// One dataset row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub label: String,
    pub weight: f64,
    pub tag: String,
}

impl Record {
    pub fn new(label: impl Into<String>, weight: f64, tag: impl Into<String>) -> Result<Self> {
        if !weight.is_finite() {
            return Err(Error::Input(format!("record weight {weight} is not finite")));
        }
        Ok(Self {
            label: label.into(),
            weight,
            tag: tag.into(),
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub records: Vec<Record>,
}

impl Dataset {
    pub fn new(records: Vec<Record>) -> Result<Self> {
        if let Some((i, r)) = records.iter().enumerate().find(|(_, r)| !r.weight.is_finite()) {
            return Err(Error::Input(format!("record {i} has non-finite weight {}", r.weight)));
        }
        Ok(Self { records })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Copy of this dataset with record `index` replaced.
    pub fn with_replacement(&self, index: usize, record: Record) -> Result<Self> {
        if index >= self.records.len() {
            return Err(Error::Argument(format!(
                "record index {index} out of range for a dataset of {}",
                self.records.len()
            )));
        }
        let mut records = self.records.clone();
        records[index] = record;
        Self::new(records)
    }
}

/// Opaque conditioning key. Selects a base-logit table in a model spec.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Context {
    pub prompt_id: String,
    #[serde(default)]
    pub extra: BTreeMap<String, String>,
}

impl Context {
    pub fn new(prompt_id: impl Into<String>) -> Result<Self> {
        let prompt_id = prompt_id.into();
        if prompt_id.is_empty() {
            return Err(Error::Config("context prompt_id must be non-empty".into()));
        }
        Ok(Self {
            prompt_id,
            extra: BTreeMap::new(),
        })
    }
}

/// Decoding temperature, fixed message length and the enumeration cap.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationConfig {
    temperature: f64,
    length: usize,
    enum_cap: u64,
}

impl GenerationConfig {
    pub fn new(temperature: f64, length: usize) -> Result<Self> {
        validate_temperature(temperature)?;
        if length == 0 {
            return Err(Error::Config("message length must be at least 1".into()));
        }
        Ok(Self {
            temperature,
            length,
            enum_cap: DEFAULT_ENUM_CAP,
        })
    }

    pub fn with_enum_cap(mut self, cap: u64) -> Self {
        self.enum_cap = cap;
        self
    }

    pub fn with_temperature(self, temperature: f64) -> Result<Self> {
        validate_temperature(temperature)?;
        Ok(Self { temperature, ..self })
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn length(&self) -> usize {
        self.length
    }

    pub fn enum_cap(&self) -> u64 {
        self.enum_cap
    }

    /// Number of messages `|V|^L`, or an error if it exceeds the cap.
    pub fn check_enumerable(&self, vocab_size: usize) -> Result<usize> {
        check_enumerable(vocab_size, self.length, self.enum_cap)
    }
}

pub fn validate_temperature(temperature: f64) -> Result<()> {
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(Error::Config(format!(
            "temperature must be finite and > 0, got {temperature}"
        )));
    }
    Ok(())
}

pub(crate) fn check_enumerable(vocab_size: usize, length: usize, cap: u64) -> Result<usize> {
    let mut states: u128 = 1;
    for _ in 0..length {
        states = states.saturating_mul(vocab_size as u128);
    }
    if states > cap as u128 {
        return Err(Error::EnumerationTooLarge { states, cap });
    }
    Ok(states as usize)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vocabulary_rejects_duplicates_and_singletons() {
        assert!(Vocabulary::new(["a"]).is_err());
        assert!(Vocabulary::new(["a", "a"]).is_err());
        let v = Vocabulary::new(["a", "b", "c"]).unwrap();
        assert_eq!(v.index_of("c"), Some(2));
        assert_eq!(v.token(1), "b");
    }

    #[test]
    fn config_rejects_zero_temperature_and_length() {
        assert!(matches!(GenerationConfig::new(0.0, 2), Err(Error::Config(_))));
        assert!(matches!(GenerationConfig::new(-1.0, 2), Err(Error::Config(_))));
        assert!(matches!(GenerationConfig::new(f64::NAN, 2), Err(Error::Config(_))));
        assert!(matches!(GenerationConfig::new(1.0, 0), Err(Error::Config(_))));
    }

    #[test]
    fn enumeration_cap_names_state_count() {
        let cfg = GenerationConfig::new(1.0, 7).unwrap();
        match cfg.check_enumerable(10) {
            Err(Error::EnumerationTooLarge { states, cap }) => {
                assert_eq!(states, 10_000_000);
                assert_eq!(cap, DEFAULT_ENUM_CAP);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(cfg.with_enum_cap(10_000_000).check_enumerable(10).unwrap(), 10_000_000);
        // |V| = 10, L = 6 fits the default cap
        assert!(GenerationConfig::new(1.0, 6).unwrap().check_enumerable(10).is_ok());
    }

    #[test]
    fn message_parse_and_render() {
        let v = Vocabulary::new(["a", "b"]).unwrap();
        let m = Message::parse("ab", &v).unwrap();
        assert_eq!(m.tokens(), &[0, 1]);
        assert_eq!(m.render(&v), "ab");
        let w = Vocabulary::new(["yes", "no"]).unwrap();
        let m = Message::parse("no yes", &w).unwrap();
        assert_eq!(m.render(&w), "no yes");
        assert!(Message::new(vec![2], &v).is_err());
    }

    #[test]
    fn replacement_checks_index() {
        let d = Dataset::new(vec![Record::new("a", 1.0, "x").unwrap()]).unwrap();
        assert!(d.with_replacement(1, Record::new("b", 1.0, "y").unwrap()).is_err());
        let d2 = d.with_replacement(0, Record::new("b", 1.0, "y").unwrap()).unwrap();
        assert_eq!(d2.records[0].label, "b");
        assert!(Record::new("a", f64::INFINITY, "t").is_err());
        assert!(Context::new("").is_err());
    }
}
