//! Request and response bodies. Bodies are JSON in the same schema family as
//! the model files.

use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use probattn::adapt::ClampWarning;
use probattn::bp::SweepDelta;
use probattn::format::ModelDocument;
use probattn::oracle::SynthSpec;
use probattn::{AttentionRow, HyperPriors};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
#[error("{message}")]
pub struct ApiError {
    pub status: u16,
    pub message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status: status.as_u16(),
            message: message.into(),
        }
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }

    pub fn unprocessable(message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, message)
    }

    pub fn not_found(id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, format!("unknown session {id}"))
    }

    pub fn conflict(expected: u64, got: u64) -> Self {
        Self::new(
            StatusCode::CONFLICT,
            format!("stale revision {got}, current revision is {expected}"),
        )
    }
}

#[derive(Serialize)]
struct ErrorBody<'a> {
    error: &'a str,
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(ErrorBody { error: &self.message })).into_response()
    }
}

/// `POST /sessions`. Exactly one of `model` and `synth`, or neither when the
/// server was started with a default model.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelDocument>,
    /// One query per unit; defaults to the model keys.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub queries: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synth: Option<SynthSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hyper: Option<HyperPriors>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridMeta {
    pub rows: usize,
    pub cols: usize,
}

impl GridMeta {
    /// Near-square row-major layout of `n` cells.
    pub fn for_units(n: usize) -> Self {
        let cols = (1..=n).find(|c| c * c >= n).unwrap_or(1);
        Self {
            rows: n.div_ceil(cols),
            cols,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionCreated {
    pub session: String,
    pub revision: u64,
    pub n: usize,
    pub d: usize,
    pub m: usize,
    pub grid: GridMeta,
    /// Number of decodable labels.
    pub label_count: usize,
    pub values: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
}

/// One correction: a unit plus either an explicit value or a label whose
/// prototype becomes the value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WireCorrection {
    pub unit: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<usize>,
}

/// `POST /sessions/{id}/corrections`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorrectionsRequest {
    pub corrections: Vec<WireCorrection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweeps: Option<usize>,
    /// When present the request is rejected unless it matches the current
    /// revision.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub revision: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectionsApplied {
    pub revision: u64,
    pub values: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    /// Units whose value changed in this revision.
    pub changed_units: Vec<usize>,
    /// Sup-norm value change of every unit.
    pub deltas: Vec<f64>,
    pub sweeps: Vec<SweepDelta>,
    pub warnings: Vec<ClampWarning>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateBody {
    pub revision: u64,
    pub values: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub corrected_units: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionBody {
    pub revision: u64,
    pub unit: usize,
    pub weights: AttentionRow,
}

fn parse_json<T: for<'de> Deserialize<'de>>(bytes: &[u8], status: StatusCode) -> Result<T, ApiError> {
    serde_json::from_slice(bytes).map_err(|e| {
        ApiError::new(
            status,
            format!("parse error at line {}, column {}: {e}", e.line(), e.column()),
        )
    })
}

/// Parses a session creation body. Syntax errors are 400.
pub fn parse_create(bytes: &[u8]) -> Result<CreateSession, ApiError> {
    if bytes.iter().all(u8::is_ascii_whitespace) {
        return Ok(CreateSession::default());
    }
    let req: CreateSession = parse_json(bytes, StatusCode::BAD_REQUEST)?;
    if req.model.is_some() && req.synth.is_some() {
        return Err(ApiError::bad_request("give either model or synth, not both"));
    }
    if req.synth.is_some() && req.queries.is_some() {
        return Err(ApiError::bad_request("synth scenes carry their own queries"));
    }
    Ok(req)
}

/// Parses a corrections body and checks its shape. Malformed bodies are 422.
/// Range checks against the session happen later.
pub fn parse_corrections(bytes: &[u8]) -> Result<CorrectionsRequest, ApiError> {
    let req: CorrectionsRequest = parse_json(bytes, StatusCode::UNPROCESSABLE_ENTITY)?;
    if req.sweeps == Some(0) {
        return Err(ApiError::unprocessable("sweeps must be >= 1"));
    }
    for (c, corr) in req.corrections.iter().enumerate() {
        match (&corr.value, &corr.label) {
            (Some(_), Some(_)) | (None, None) => {
                return Err(ApiError::unprocessable(format!(
                    "corrections[{c}]: give exactly one of value and label"
                )))
            }
            (Some(v), None) if v.iter().any(|x| !x.is_finite()) => {
                return Err(ApiError::unprocessable(format!(
                    "corrections[{c}].value: entries must be finite"
                )))
            }
            _ => {}
        }
        if req.corrections[..c].iter().any(|o| o.unit == corr.unit) {
            return Err(ApiError::unprocessable(format!(
                "corrections[{c}].unit: unit {} corrected twice",
                corr.unit
            )));
        }
    }
    Ok(req)
}

/// Parses the `unit` query parameter of the attention route.
pub fn parse_unit_param(query: Option<&str>) -> Result<usize, ApiError> {
    let query = query.unwrap_or("");
    let raw = query
        .split('&')
        .filter_map(|kv| kv.split_once('='))
        .find(|(k, _)| *k == "unit")
        .map(|(_, v)| v)
        .ok_or_else(|| ApiError::bad_request("missing query parameter unit"))?;
    raw.parse()
        .map_err(|_| ApiError::bad_request(format!("invalid unit index {raw:?}")))
}
