//! Structured-text (JSON) documents for models, queries, corrections and
//! command outputs.
//!
//! Floats are printed with the shortest representation that parses back to
//! the same `f64`, and parsed with correct rounding, so `load(save(p)) == p`
//! bit-for-bit. Every document carries `"version": 1`.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adapt::ClampWarning;
use crate::bp::{BpAudit, Correction};
use crate::error::Error;
use crate::inference::{Inference, InferenceTrace, WeightMode};
use crate::model::{HyperPriors, ModelParams};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("{path}: {message}")]
    Io { path: String, message: String },

    #[error("parse error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("unsupported document version {0}, expected {FORMAT_VERSION}")]
    Version(u32),

    #[error(transparent)]
    Invalid(#[from] Error),
}

impl From<serde_json::Error> for FormatError {
    fn from(e: serde_json::Error) -> Self {
        let text = e.to_string();
        let message = match text.rsplit_once(" at line ") {
            Some((head, _)) => head.to_string(),
            None => text,
        };
        FormatError::Syntax {
            line: e.line(),
            column: e.column(),
            message,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDocument {
    pub version: u32,
    pub n: usize,
    pub d: usize,
    pub m: usize,
    pub pi: Vec<Vec<f64>>,
    pub xi: Vec<Vec<f64>>,
    pub mu: Vec<Vec<f64>>,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hyper: Option<HyperPriors>,
    /// Label value vectors used for nearest-prototype decoding.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prototypes: Option<Vec<Vec<f64>>>,
}

/// A validated model together with its optional hyperpriors and label
/// prototypes.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedModel {
    pub params: ModelParams,
    pub hyper: Option<HyperPriors>,
    pub prototypes: Option<Vec<Vec<f64>>>,
}

impl LoadedModel {
    pub fn new(params: ModelParams) -> Self {
        Self {
            params,
            hyper: None,
            prototypes: None,
        }
    }

    /// Decoded label of `v`: nearest prototype, or nearest expected value
    /// row when the model carries no prototypes.
    pub fn label_of(&self, v: &[f64]) -> usize {
        match &self.prototypes {
            Some(p) => crate::model::nearest_label(v, p),
            None => crate::model::nearest_label(v, self.params.mu()),
        }
    }

    pub fn to_document(&self) -> ModelDocument {
        let p = &self.params;
        ModelDocument {
            version: FORMAT_VERSION,
            n: p.n(),
            d: p.d(),
            m: p.m(),
            pi: p.pi().to_vec(),
            xi: p.xi().to_vec(),
            mu: p.mu().to_vec(),
            alpha: p.alpha().to_vec(),
            beta: p.beta().to_vec(),
            hyper: self.hyper.clone(),
            prototypes: self.prototypes.clone(),
        }
    }
}

fn check_version(v: u32) -> Result<(), FormatError> {
    if v != FORMAT_VERSION {
        return Err(FormatError::Version(v));
    }
    Ok(())
}

fn check_rows(field: &str, rows: &[Vec<f64>], count: usize, dim: usize) -> Result<(), Error> {
    if rows.len() != count {
        return Err(Error::Invalid {
            field: field.to_string(),
            reason: format!("expected {count} rows, got {}", rows.len()),
        });
    }
    for (j, r) in rows.iter().enumerate() {
        if r.len() != dim {
            return Err(Error::Invalid {
                field: format!("{field}[{j}]"),
                reason: format!("expected length {dim}, got {}", r.len()),
            });
        }
    }
    Ok(())
}

impl TryFrom<ModelDocument> for LoadedModel {
    type Error = FormatError;

    fn try_from(doc: ModelDocument) -> Result<Self, FormatError> {
        check_version(doc.version)?;
        let (n, d, m) = (doc.n, doc.d, doc.m);
        for (name, x) in [("n", n), ("d", d), ("m", m)] {
            if x == 0 {
                return Err(Error::Invalid {
                    field: name.into(),
                    reason: "must be positive".into(),
                }
                .into());
            }
        }
        check_rows("pi", &doc.pi, n, n)?;
        check_rows("xi", &doc.xi, n, d)?;
        check_rows("mu", &doc.mu, n, m)?;
        for (name, v) in [("alpha", &doc.alpha), ("beta", &doc.beta)] {
            if v.len() != n {
                return Err(Error::Invalid {
                    field: name.into(),
                    reason: format!("expected length {n}, got {}", v.len()),
                }
                .into());
            }
        }
        let params = ModelParams::new(doc.pi, doc.xi, doc.mu, doc.alpha, doc.beta)?;
        if let Some(h) = &doc.hyper {
            h.validate(n)?;
        }
        if let Some(p) = &doc.prototypes {
            if p.is_empty() {
                return Err(Error::Invalid {
                    field: "prototypes".into(),
                    reason: "need at least one prototype".into(),
                }
                .into());
            }
            check_rows("prototypes", p, p.len(), m)?;
            if p.iter().flatten().any(|x| !x.is_finite()) {
                return Err(Error::Invalid {
                    field: "prototypes".into(),
                    reason: "entries must be finite".into(),
                }
                .into());
            }
        }
        Ok(LoadedModel {
            params,
            hyper: doc.hyper,
            prototypes: doc.prototypes,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueriesDocument {
    pub version: u32,
    pub queries: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorrectionsDocument {
    pub version: u32,
    pub corrections: Vec<Correction>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelsDocument {
    pub version: u32,
    pub labels: Vec<usize>,
}

/// Standard output of value inference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferOutput {
    pub version: u32,
    pub mode: WeightMode,
    pub values: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub traces: Option<Vec<InferenceTrace>>,
}

impl InferOutput {
    pub fn new(mode: WeightMode, results: Vec<Inference>, with_traces: bool) -> Self {
        let (values, traces): (Vec<_>, Vec<_>) = results.into_iter().map(|r| (r.value, r.trace)).unzip();
        Self {
            version: FORMAT_VERSION,
            mode,
            values,
            traces: with_traces.then_some(traces),
        }
    }
}

/// Standard output of key adaptation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptOutput {
    pub version: u32,
    pub model: ModelDocument,
    pub objective: Vec<f64>,
    pub warnings: Vec<ClampWarning>,
}

/// Standard output of belief propagation; the adapted model goes to its own
/// file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BpOutput {
    pub version: u32,
    pub values: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub audit: BpAudit,
}

fn parse_doc<T: DeserializeOwned>(text: &str) -> Result<T, FormatError> {
    Ok(serde_json::from_str(text)?)
}

fn utf8(bytes: &[u8]) -> Result<&str, FormatError> {
    std::str::from_utf8(bytes).map_err(|e| FormatError::Syntax {
        line: 1 + bytes[..e.valid_up_to()].iter().filter(|&&b| b == b'\n').count(),
        column: 0,
        message: format!("invalid UTF-8: {e}"),
    })
}

pub fn parse_model(text: &str) -> Result<LoadedModel, FormatError> {
    parse_doc::<ModelDocument>(text)?.try_into()
}

pub fn parse_model_bytes(bytes: &[u8]) -> Result<LoadedModel, FormatError> {
    parse_model(utf8(bytes)?)
}

/// Parses a queries document and checks it against `n` units of dimension `d`.
pub fn parse_queries(text: &str, n: usize, d: usize) -> Result<Vec<Vec<f64>>, FormatError> {
    let doc: QueriesDocument = parse_doc(text)?;
    check_version(doc.version)?;
    check_rows("queries", &doc.queries, n, d)?;
    if let Some(i) = doc.queries.iter().position(|q| q.iter().any(|x| !x.is_finite())) {
        return Err(Error::Invalid {
            field: format!("queries[{i}]"),
            reason: "entries must be finite".into(),
        }
        .into());
    }
    Ok(doc.queries)
}

/// Parses a queries document without shape checks.
pub fn parse_queries_unchecked(bytes: &[u8]) -> Result<Vec<Vec<f64>>, FormatError> {
    let doc: QueriesDocument = parse_doc(utf8(bytes)?)?;
    check_version(doc.version)?;
    Ok(doc.queries)
}

/// Parses a corrections document; range and length checks happen when the
/// corrections are combined with a model.
pub fn parse_corrections(text: &str) -> Result<Vec<Correction>, FormatError> {
    let doc: CorrectionsDocument = parse_doc(text)?;
    check_version(doc.version)?;
    Ok(doc.corrections)
}

pub fn parse_corrections_bytes(bytes: &[u8]) -> Result<Vec<Correction>, FormatError> {
    parse_corrections(utf8(bytes)?)
}

/// Pretty-printed document text with shortest round-trip floats and a
/// trailing newline.
pub fn to_text<T: Serialize>(doc: &T) -> String {
    let mut s = serde_json::to_string_pretty(doc).expect("documents serialize");
    s.push('\n');
    s
}

pub fn model_to_text(model: &LoadedModel) -> String {
    to_text(&model.to_document())
}

pub fn queries_to_text(queries: &[Vec<f64>]) -> String {
    to_text(&QueriesDocument {
        version: FORMAT_VERSION,
        queries: queries.to_vec(),
    })
}

pub fn corrections_to_text(corrections: &[Correction]) -> String {
    to_text(&CorrectionsDocument {
        version: FORMAT_VERSION,
        corrections: corrections.to_vec(),
    })
}

pub fn read_text(path: &Path) -> Result<String, FormatError> {
    fs::read_to_string(path).map_err(|e| FormatError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

pub fn write_text(path: &Path, text: &str) -> Result<(), FormatError> {
    fs::write(path, text).map_err(|e| FormatError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

pub fn load_model(path: &Path) -> Result<LoadedModel, FormatError> {
    parse_model(&read_text(path)?)
}

pub fn save_model(model: &LoadedModel, path: &Path) -> Result<(), FormatError> {
    write_text(path, &model_to_text(model))
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMALL: &str = r#"{
        "version": 1, "n": 2, "d": 1, "m": 1,
        "pi": [[0.5, 0.5], [0.25, 0.75]],
        "xi": [[0.0], [1.0]],
        "mu": [[-1.0], [2.0]],
        "alpha": [1.0, 2.0],
        "beta": [0.5, 1.5]
    }"#;

    #[test]
    fn parses_and_round_trips() {
        let m = parse_model(SMALL).unwrap();
        assert_eq!(m.params.n(), 2);
        let text = model_to_text(&m);
        assert_eq!(parse_model(&text).unwrap(), m);
    }

    #[test]
    fn syntax_error_has_position() {
        let err = parse_model("{\n  \"version\": 1,\n  \"n\": oops\n}").unwrap_err();
        match err {
            FormatError::Syntax { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn validation_names_fields() {
        let bad = SMALL.replace("[0.25, 0.75]", "[0.25, 0.65]");
        assert!(parse_model(&bad).unwrap_err().to_string().contains("pi[1]"));
        let bad = SMALL.replace("\"alpha\": [1.0, 2.0]", "\"alpha\": [-1.0, 2.0]");
        assert!(parse_model(&bad).unwrap_err().to_string().contains("alpha[0]"));
        let bad = SMALL.replace("\"xi\": [[0.0], [1.0]]", "\"xi\": [[0.0], [1.0, 3.0]]");
        assert!(parse_model(&bad).unwrap_err().to_string().contains("xi[1]"));
        let bad = SMALL.replace("\"version\": 1", "\"version\": 2");
        assert!(matches!(parse_model(&bad), Err(FormatError::Version(2))));
        let bad = SMALL.replace("\"n\": 2", "\"n\": 3");
        assert!(parse_model(&bad).is_err());
    }

    #[test]
    fn queries_shape_checked() {
        let text = r#"{"version": 1, "queries": [[0.5], [1.0]]}"#;
        assert_eq!(parse_queries(text, 2, 1).unwrap(), vec![vec![0.5], vec![1.0]]);
        let err = parse_queries(text, 2, 2).unwrap_err();
        assert!(err.to_string().contains("queries[0]"));
    }

    #[test]
    fn invalid_utf8_is_a_syntax_error() {
        assert!(matches!(
            parse_model_bytes(b"{\n\xff"),
            Err(FormatError::Syntax { line: 2, .. })
        ));
    }

    #[test]
    fn corrections_round_trip() {
        let c = vec![Correction {
            unit: 3,
            value: vec![0.1, -2.0],
        }];
        assert_eq!(parse_corrections(&corrections_to_text(&c)).unwrap(), c);
    }
}
