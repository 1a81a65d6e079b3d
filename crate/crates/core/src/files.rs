//! Model-spec (JSON) and dataset (CSV) file formats, both versioned.
//!
//! Model spec:
//!
//! ```json
//! {
//!   "schema_version": 1,
//!   "vocabulary": ["a", "b"],
//!   "contexts": [{ "id": "default", "base_logits": [[0.0, 0.0]] }],
//!   "influence": { "kind": "label_match", "beta": 1.0 },
//!   "history_coupling": [[0.0, 0.5], [0.5, 0.0]]
//! }
//! ```
//!
//! Dataset:
//!
//! ```text
//! schema_version,1
//! label,weight,tag
//! a,1.0,incident-1
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generation::{Context, Dataset, InfluenceRule, LogitModel, Record, Vocabulary};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContextSpec {
    pub id: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub extra: BTreeMap<String, String>,
    pub base_logits: Vec<Vec<f64>>,
}

/// On-disk model spec, before validation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpecFile {
    pub schema_version: u32,
    pub vocabulary: Vec<String>,
    pub contexts: Vec<ContextSpec>,
    pub influence: InfluenceRule,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub history_coupling: Option<Vec<Vec<f64>>>,
}

/// A validated model spec: one logit model per declared context.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelSpec {
    contexts: Vec<(Context, LogitModel)>,
}

impl ModelSpec {
    pub fn from_file(file: ModelSpecFile) -> Result<Self> {
        if file.schema_version != SCHEMA_VERSION {
            return Err(version_error(file.schema_version as i64));
        }
        let vocab =
            Vocabulary::new(file.vocabulary.clone()).map_err(|e| Error::Input(format!("vocabulary: {}", inner(e))))?;
        if file.contexts.is_empty() {
            return Err(Error::Input("contexts: at least one context is required".into()));
        }
        let mut contexts = Vec::with_capacity(file.contexts.len());
        for (i, c) in file.contexts.iter().enumerate() {
            let mut ctx =
                Context::new(c.id.clone()).map_err(|e| Error::Input(format!("contexts[{i}].id: {}", inner(e))))?;
            if contexts
                .iter()
                .any(|(k, _): &(Context, LogitModel)| k.prompt_id == c.id)
            {
                return Err(Error::Input(format!("contexts[{i}].id: duplicate context {:?}", c.id)));
            }
            ctx.extra = c.extra.clone();
            let model = LogitModel::new(
                vocab.clone(),
                c.base_logits.clone(),
                file.influence.clone(),
                file.history_coupling.clone(),
            )
            .map_err(|e| Error::Input(format!("contexts[{i}] ({:?}): {}", c.id, inner(e))))?;
            contexts.push((ctx, model));
        }
        Ok(Self { contexts })
    }

    /// Single-context spec around an existing model.
    pub fn single(id: &str, model: LogitModel) -> Result<Self> {
        Ok(Self {
            contexts: vec![(Context::new(id)?, model)],
        })
    }

    pub fn to_file(&self) -> ModelSpecFile {
        let first = &self.contexts[0].1;
        ModelSpecFile {
            schema_version: SCHEMA_VERSION,
            vocabulary: first.vocab().tokens().to_vec(),
            contexts: self
                .contexts
                .iter()
                .map(|(c, m)| ContextSpec {
                    id: c.prompt_id.clone(),
                    extra: c.extra.clone(),
                    base_logits: m.base_rows().to_vec(),
                })
                .collect(),
            influence: first.influence_rule().clone(),
            history_coupling: first.history_coupling().map(<[_]>::to_vec),
        }
    }

    pub fn contexts(&self) -> &[(Context, LogitModel)] {
        &self.contexts
    }

    pub fn vocab(&self) -> &Vocabulary {
        self.contexts[0].1.vocab()
    }

    /// The model for a context id, or the first context when `id` is `None`.
    pub fn model(&self, id: Option<&str>) -> Result<&LogitModel> {
        match id {
            None => Ok(&self.contexts[0].1),
            Some(id) => self
                .contexts
                .iter()
                .find(|(c, _)| c.prompt_id == id)
                .map(|(_, m)| m)
                .ok_or_else(|| Error::Input(format!("unknown context {id:?}"))),
        }
    }
}

fn inner(e: Error) -> String {
    match e {
        Error::Config(m) | Error::Input(m) | Error::Argument(m) => m,
        other => other.to_string(),
    }
}

fn version_error(found: i64) -> Error {
    Error::Input(format!(
        "unsupported schema_version {found} (this build reads version {SCHEMA_VERSION})"
    ))
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

/// Parse and validate a model spec from JSON text.
pub fn parse_model_spec(text: &str) -> Result<ModelSpec> {
    #[derive(Deserialize)]
    struct VersionProbe {
        schema_version: Option<serde_json::Value>,
    }
    let probe: VersionProbe =
        serde_json::from_str(text).map_err(|e| Error::Input(format!("model spec is not valid JSON: {e}")))?;
    match probe.schema_version {
        None => return Err(Error::Input("model spec is missing schema_version".into())),
        Some(v) if v.as_u64() != Some(SCHEMA_VERSION as u64) => {
            return Err(match v.as_i64() {
                Some(n) => version_error(n),
                None => Error::Input(format!("schema_version must be an integer, got {v}")),
            })
        }
        Some(_) => {}
    }
    let file: ModelSpecFile = serde_json::from_str(text).map_err(|e| Error::Input(format!("model spec: {e}")))?;
    ModelSpec::from_file(file)
}

pub fn load_model_spec(path: impl AsRef<Path>) -> Result<ModelSpec> {
    let path = path.as_ref();
    parse_model_spec(&read(path)?).map_err(|e| match e {
        Error::Input(m) => Error::Input(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn model_spec_to_json(spec: &ModelSpec) -> String {
    serde_json::to_string_pretty(&spec.to_file()).expect("model spec serializes")
}

pub fn save_model_spec(spec: &ModelSpec, path: impl AsRef<Path>) -> Result<()> {
    write(path.as_ref(), &(model_spec_to_json(spec) + "\n"))
}

/// Parse a `label,weight,tag` triple such as a `--neighbor-record` value.
pub fn parse_record(text: &str) -> Result<Record> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let row = reader
        .records()
        .next()
        .ok_or_else(|| Error::Input("empty record".into()))?
        .map_err(|e| Error::Input(format!("record {text:?}: {e}")))?;
    record_from_fields(&row).map_err(|m| Error::Input(format!("record {text:?}: {m}")))
}

fn record_from_fields(row: &csv::StringRecord) -> std::result::Result<Record, String> {
    if row.len() != 3 {
        return Err(format!("expected 3 fields (label,weight,tag), got {}", row.len()));
    }
    let weight: f64 = row[1]
        .parse()
        .map_err(|_| format!("weight {:?} is not a number", &row[1]))?;
    if !weight.is_finite() {
        return Err(format!("weight {weight} is not finite"));
    }
    if row[0].is_empty() {
        return Err("label is empty".into());
    }
    Ok(Record {
        label: row[0].to_string(),
        weight,
        tag: row[2].to_string(),
    })
}

/// Parse a dataset file. An empty file is an empty dataset. Labels are not
/// checked here; they are validated against a model when analyzed.
pub fn parse_dataset(text: &str) -> Result<Dataset> {
    if text.trim().is_empty() {
        return Ok(Dataset::default());
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let mut rows = reader.records();
    let line_of = |r: &csv::StringRecord| r.position().map_or(0, |p| p.line());

    let version = rows
        .next()
        .transpose()
        .map_err(|e| Error::Input(format!("dataset: {e}")))?
        .ok_or_else(|| Error::Input("dataset: missing schema_version row".into()))?;
    if version.len() != 2 || &version[0] != "schema_version" {
        return Err(Error::Input(format!(
            "dataset row {}: expected `schema_version,{SCHEMA_VERSION}`",
            line_of(&version)
        )));
    }
    match version[1].parse::<i64>() {
        Ok(v) if v == SCHEMA_VERSION as i64 => {}
        Ok(v) => return Err(version_error(v)),
        Err(_) => {
            return Err(Error::Input(format!(
                "dataset row {}: schema_version {:?} is not an integer",
                line_of(&version),
                &version[1]
            )))
        }
    }
    let header = rows
        .next()
        .transpose()
        .map_err(|e| Error::Input(format!("dataset: {e}")))?;
    if let Some(h) = &header {
        if h.iter().collect::<Vec<_>>() != ["label", "weight", "tag"] {
            return Err(Error::Input(format!(
                "dataset row {}: expected header `label,weight,tag`",
                line_of(h)
            )));
        }
    }
    let mut records = Vec::new();
    for row in rows {
        let row = row.map_err(|e| Error::Input(format!("dataset: {e}")))?;
        let record =
            record_from_fields(&row).map_err(|m| Error::Input(format!("dataset row {}: {m}", line_of(&row))))?;
        records.push(record);
    }
    Dataset::new(records)
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    parse_dataset(&read(path)?).map_err(|e| match e {
        Error::Input(m) => Error::Input(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn dataset_to_csv(dataset: &Dataset) -> String {
    let mut writer = csv::WriterBuilder::new().flexible(true).from_writer(Vec::new());
    writer
        .write_record(["schema_version", &SCHEMA_VERSION.to_string()])
        .and_then(|_| writer.write_record(["label", "weight", "tag"]))
        .expect("in-memory write");
    for r in &dataset.records {
        writer
            .write_record([r.label.as_str(), &format!("{:?}", r.weight), r.tag.as_str()])
            .expect("in-memory write");
    }
    String::from_utf8(writer.into_inner().expect("flush")).expect("utf-8")
}

pub fn save_dataset(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    write(path.as_ref(), &dataset_to_csv(dataset))
}

#[cfg(test)]
mod tests {
    use super::*;

    const SPEC: &str = r#"{
        "schema_version": 1,
        "vocabulary": ["a", "b", "c"],
        "contexts": [
            {"id": "p1", "base_logits": [[0.1, -0.2, 0.30000000000000004]]},
            {"id": "p2", "extra": {"k": "v"}, "base_logits": [[1, 2, 3], [0, 0, 1e-300]]}
        ],
        "influence": {"kind": "tag_table", "beta": 0.5, "table": {"x": [0.5, -0.5, 0.1]}},
        "history_coupling": [[0, 0.25, 0], [0, 0, 0], [0.125, 0, 0]]
    }"#;

    #[test]
    fn model_spec_round_trip_is_exact() {
        let spec = parse_model_spec(SPEC).unwrap();
        let again = parse_model_spec(&model_spec_to_json(&spec)).unwrap();
        assert_eq!(spec, again);
        assert_eq!(again.model(Some("p1")).unwrap().base_logit(1, 2), 0.30000000000000004);
        assert_eq!(again.model(Some("p2")).unwrap().base_logit(2, 2), 1e-300);
        assert!(spec.model(Some("p3")).is_err());
    }

    #[test]
    fn table_entry_above_beta_names_the_entry() {
        let bad = SPEC.replace("[0.5, -0.5, 0.1]", "[0.5, -0.75, 0.1]");
        let err = parse_model_spec(&bad).unwrap_err().to_string();
        assert!(err.contains("influence.table[\"x\"][1]"), "{err}");
        assert!(err.contains("0.75"), "{err}");
    }

    #[test]
    fn unknown_schema_version_is_rejected_up_front() {
        let err = parse_model_spec(&SPEC.replace("\"schema_version\": 1", "\"schema_version\": 2"))
            .unwrap_err()
            .to_string();
        assert!(err.contains("unsupported schema_version 2"), "{err}");
        // version is checked before structure, so a v2 file with new fields fails on the version
        let future = r#"{"schema_version": 3, "whatever": true}"#;
        assert!(parse_model_spec(future)
            .unwrap_err()
            .to_string()
            .contains("schema_version 3"));
        assert!(parse_model_spec(r#"{"vocabulary": []}"#).is_err());
    }

    #[test]
    fn json_errors_carry_line_numbers() {
        let broken = SPEC.replace("\"beta\": 0.5", "\"beta\": \"high\"");
        let err = parse_model_spec(&broken).unwrap_err().to_string();
        assert!(err.contains("line"), "{err}");
    }

    #[test]
    fn dataset_parsing() {
        assert!(parse_dataset("").unwrap().is_empty());
        assert!(parse_dataset("  \n").unwrap().is_empty());
        let d = parse_dataset("schema_version,1\nlabel,weight,tag\na,1.5,t1\nzzz,-2,t2\n").unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.records[1], Record::new("zzz", -2.0, "t2").unwrap());
        let err = parse_dataset("schema_version,1\nlabel,weight,tag\na,1,t\nb,heavy,t\n")
            .unwrap_err()
            .to_string();
        assert!(err.contains("row 4"), "{err}");
        let err = parse_dataset("schema_version,1\nlabel,weight,tag\na,1\n")
            .unwrap_err()
            .to_string();
        assert!(err.contains("row 3"), "{err}");
        assert!(parse_dataset("schema_version,9\nlabel,weight,tag\n")
            .unwrap_err()
            .to_string()
            .contains("9"));
        assert!(parse_dataset("a,1,t\n").is_err());
    }

    #[test]
    fn dataset_round_trip_preserves_order_and_weights() {
        let d = Dataset::new(vec![
            Record::new("b", 0.1, "first").unwrap(),
            Record::new("a", 1.0 / 3.0, "with,comma").unwrap(),
            Record::new("a", -7.0, "").unwrap(),
        ])
        .unwrap();
        assert_eq!(parse_dataset(&dataset_to_csv(&d)).unwrap(), d);
    }

    #[test]
    fn neighbor_record_parsing() {
        assert_eq!(
            parse_record("b, 1, swap").unwrap(),
            Record::new("b", 1.0, "swap").unwrap()
        );
        assert!(parse_record("b,1").is_err());
        assert!(parse_record("b,nan,t").is_err());
    }
}
