//! Session state. Every accepted correction batch re-runs propagation from
//! the base model with the full accumulated correction set, so a session's
//! state depends only on its source and the batches it has accepted.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::{Arc, RwLock};

use probattn::bp::{BpConfig, Correction, CorrectionSet};
use probattn::format::{LoadedModel, ModelDocument, FORMAT_VERSION};
use probattn::numeric::max_abs_diff;
use probattn::oracle::synth_scene;
use probattn::{batch_infer, propagate, responsibilities, EmConfig, HyperPriors, ModelParams};
use serde::{Deserialize, Serialize};

use crate::api::{
    ApiError, AttentionBody, CorrectionsApplied, CorrectionsRequest, CreateSession, StateBody,
};

pub const DEFAULT_SWEEPS: usize = 5;

/// Immutable inputs of a session.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionSource {
    pub model: LoadedModel,
    pub queries: Vec<Vec<f64>>,
    pub hyper: HyperPriors,
}

fn invalid(e: impl std::fmt::Display) -> ApiError {
    ApiError::bad_request(e.to_string())
}

impl SessionSource {
    pub fn new(model: LoadedModel, queries: Option<Vec<Vec<f64>>>, hyper: Option<HyperPriors>) -> Result<Self, ApiError> {
        let p = &model.params;
        let queries = queries.unwrap_or_else(|| p.xi().to_vec());
        if queries.len() != p.n() {
            return Err(ApiError::bad_request(format!(
                "invalid queries: expected {} rows, got {}",
                p.n(),
                queries.len()
            )));
        }
        for (i, q) in queries.iter().enumerate() {
            if q.len() != p.d() || q.iter().any(|x| !x.is_finite()) {
                return Err(ApiError::bad_request(format!(
                    "invalid queries[{i}]: expected {} finite entries",
                    p.d()
                )));
            }
        }
        let hyper = hyper
            .or_else(|| model.hyper.clone())
            .unwrap_or_else(|| HyperPriors::weak(p.n()));
        hyper.validate(p.n()).map_err(invalid)?;
        Ok(Self { model, queries, hyper })
    }

    /// Builds the source named by a creation request, falling back to
    /// `default` when the request names neither a model nor a scene.
    pub fn from_request(req: CreateSession, default: Option<&SessionSource>) -> Result<Self, ApiError> {
        if let Some(spec) = req.synth {
            let scene = synth_scene(&spec).map_err(invalid)?;
            let model = LoadedModel {
                params: scene.params,
                hyper: None,
                prototypes: Some(scene.prototypes),
            };
            return Self::new(model, Some(scene.corrections.queries), req.hyper.or(Some(scene.hyper)));
        }
        if let Some(doc) = req.model {
            let model = LoadedModel::try_from(doc).map_err(invalid)?;
            return Self::new(model, req.queries, req.hyper);
        }
        let base = default.ok_or_else(|| ApiError::bad_request("request needs a model or a synth spec"))?;
        let queries = req.queries.or_else(|| Some(base.queries.clone()));
        let hyper = req.hyper.or_else(|| Some(base.hyper.clone()));
        Self::new(base.model.clone(), queries, hyper)
    }

    pub fn n(&self) -> usize {
        self.model.params.n()
    }

    pub fn label_count(&self) -> usize {
        self.model
            .prototypes
            .as_ref()
            .map_or(self.n(), Vec::len)
    }

    fn labels(&self, values: &[Vec<f64>]) -> Vec<usize> {
        values.iter().map(|v| self.model.label_of(v)).collect()
    }

    /// Value vector of a label: its prototype, or the base expected value of
    /// that unit when the model has no prototypes.
    fn label_value(&self, label: usize) -> Option<Vec<f64>> {
        match &self.model.prototypes {
            Some(p) => p.get(label).cloned(),
            None => self.model.params.mu().get(label).cloned(),
        }
    }
}

/// One revision of a session.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub revision: u64,
    pub params: ModelParams,
    pub values: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    /// Accumulated corrections, ordered by unit.
    pub corrections: Vec<Correction>,
    pub sweeps: usize,
}

impl Snapshot {
    pub fn initial(source: &SessionSource) -> Result<Self, ApiError> {
        let params = source.model.params.clone();
        let values = batch_infer(&params, &source.queries, &EmConfig::default())
            .map_err(invalid)?
            .into_iter()
            .map(|r| r.map(|inf| inf.value))
            .collect::<probattn::Result<Vec<_>>>()
            .map_err(invalid)?;
        Ok(Self {
            revision: 0,
            labels: source.labels(&values),
            params,
            values,
            corrections: Vec::new(),
            sweeps: DEFAULT_SWEEPS,
        })
    }

    pub fn state(&self) -> StateBody {
        StateBody {
            revision: self.revision,
            values: self.values.clone(),
            labels: self.labels.clone(),
            corrected_units: self.corrections.iter().map(|c| c.unit).collect(),
        }
    }

    pub fn attention(&self, source: &SessionSource, unit: usize) -> Result<AttentionBody, ApiError> {
        if unit >= self.params.n() {
            return Err(ApiError::bad_request(format!(
                "unit {unit} out of range for {} units",
                self.params.n()
            )));
        }
        let weights = responsibilities(&self.params, unit, &source.queries[unit], &self.values[unit])
            .map_err(invalid)?;
        Ok(AttentionBody {
            revision: self.revision,
            unit,
            weights,
        })
    }
}

/// Turns wire corrections into value corrections, checking units, labels and
/// value lengths against the session.
pub fn resolve(source: &SessionSource, req: &CorrectionsRequest) -> Result<Vec<Correction>, ApiError> {
    let (n, m) = (source.n(), source.model.params.m());
    req.corrections
        .iter()
        .enumerate()
        .map(|(c, w)| {
            if w.unit >= n {
                return Err(ApiError::unprocessable(format!(
                    "corrections[{c}].unit: {} out of range for {n} units",
                    w.unit
                )));
            }
            let value = match (&w.value, w.label) {
                (Some(v), _) => v.clone(),
                (None, Some(l)) => source.label_value(l).ok_or_else(|| {
                    ApiError::unprocessable(format!("corrections[{c}].label: unknown label {l}"))
                })?,
                (None, None) => {
                    return Err(ApiError::unprocessable(format!(
                        "corrections[{c}]: give exactly one of value and label"
                    )))
                }
            };
            if value.len() != m {
                return Err(ApiError::unprocessable(format!(
                    "corrections[{c}].value: expected length {m}, got {}",
                    value.len()
                )));
            }
            Ok(Correction { unit: w.unit, value })
        })
        .collect()
}

/// Replays propagation with `prev`'s corrections plus `batch` (later values
/// replace earlier ones for the same unit).
pub fn apply(
    source: &SessionSource,
    prev: &Snapshot,
    batch: Vec<Correction>,
    sweeps: usize,
) -> Result<(Snapshot, CorrectionsApplied), ApiError> {
    let mut all: BTreeMap<usize, Vec<f64>> = prev
        .corrections
        .iter()
        .map(|c| (c.unit, c.value.clone()))
        .collect();
    for c in batch {
        all.insert(c.unit, c.value);
    }
    let corrections: Vec<Correction> = all
        .into_iter()
        .map(|(unit, value)| Correction { unit, value })
        .collect();
    let cs = CorrectionSet::new(source.queries.clone(), corrections.clone());
    let cfg = BpConfig {
        sweeps,
        ..BpConfig::default()
    };
    let out = propagate(&source.model.params, &cs, &source.hyper, &cfg)
        .map_err(|e| ApiError::unprocessable(format!("propagation rejected the corrections: {e}")))?;
    let deltas: Vec<f64> = out
        .values
        .iter()
        .zip(&prev.values)
        .map(|(a, b)| max_abs_diff(a, b))
        .collect();
    let changed_units = out
        .values
        .iter()
        .zip(&prev.values)
        .enumerate()
        .filter(|(_, (a, b))| a.iter().zip(b.iter()).any(|(x, y)| x.to_bits() != y.to_bits()))
        .map(|(i, _)| i)
        .collect();
    let labels = source.labels(&out.values);
    let snap = Snapshot {
        revision: prev.revision + 1,
        params: out.params,
        values: out.values,
        labels,
        corrections,
        sweeps,
    };
    let body = CorrectionsApplied {
        revision: snap.revision,
        values: snap.values.clone(),
        labels: snap.labels.clone(),
        changed_units,
        deltas,
        sweeps: out.audit.deltas,
        warnings: out.audit.warnings,
    };
    Ok((snap, body))
}

/// Response to an empty batch: nothing changes.
pub fn unchanged(snap: &Snapshot) -> CorrectionsApplied {
    CorrectionsApplied {
        revision: snap.revision,
        values: snap.values.clone(),
        labels: snap.labels.clone(),
        changed_units: Vec::new(),
        deltas: vec![0.0; snap.values.len()],
        sweeps: Vec::new(),
        warnings: Vec::new(),
    }
}

pub struct Session {
    pub id: String,
    pub source: Arc<SessionSource>,
    /// Serializes writers; readers never take it.
    pub writer: tokio::sync::Mutex<()>,
    current: RwLock<Arc<Snapshot>>,
}

impl Session {
    pub fn new(id: String, source: Arc<SessionSource>, snap: Snapshot) -> Self {
        Self {
            id,
            source,
            writer: tokio::sync::Mutex::new(()),
            current: RwLock::new(Arc::new(snap)),
        }
    }

    pub fn snapshot(&self) -> Arc<Snapshot> {
        self.current.read().expect("snapshot lock").clone()
    }

    pub fn publish(&self, snap: Snapshot) {
        *self.current.write().expect("snapshot lock") = Arc::new(snap);
    }
}

/// On-disk form of a session: its inputs and accepted corrections. Loading
/// replays propagation once.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionFile {
    pub version: u32,
    pub session: String,
    pub revision: u64,
    pub model: ModelDocument,
    pub queries: Vec<Vec<f64>>,
    pub hyper: HyperPriors,
    pub corrections: Vec<Correction>,
    pub sweeps: usize,
}

impl SessionFile {
    pub fn capture(session: &Session, snap: &Snapshot) -> Self {
        Self {
            version: FORMAT_VERSION,
            session: session.id.clone(),
            revision: snap.revision,
            model: session.source.model.to_document(),
            queries: session.source.queries.clone(),
            hyper: session.source.hyper.clone(),
            corrections: snap.corrections.clone(),
            sweeps: snap.sweeps,
        }
    }

    pub fn restore(self) -> Result<Session, ApiError> {
        if self.version != FORMAT_VERSION {
            return Err(ApiError::bad_request(format!("unsupported session file version {}", self.version)));
        }
        let model = LoadedModel::try_from(self.model).map_err(invalid)?;
        let source = SessionSource::new(model, Some(self.queries), Some(self.hyper))?;
        let initial = Snapshot::initial(&source)?;
        let snap = if self.corrections.is_empty() {
            initial
        } else {
            let (mut snap, _) = apply(&source, &initial, self.corrections, self.sweeps.max(1))?;
            snap.revision = self.revision;
            snap
        };
        Ok(Session::new(self.session, Arc::new(source), snap))
    }
}

pub fn write_session_file(dir: &Path, file: &SessionFile) -> std::io::Result<()> {
    let text = probattn::format::to_text(file);
    let tmp = dir.join(format!(".{}.json.tmp", file.session));
    std::fs::write(&tmp, text)?;
    std::fs::rename(tmp, dir.join(format!("{}.json", file.session)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::api::WireCorrection;
    use probattn::oracle::SynthSpec;

    fn scene_source() -> SessionSource {
        SessionSource::from_request(
            CreateSession {
                synth: Some(SynthSpec {
                    seed: 7,
                    n: 40,
                    clusters: 4,
                    noise: 0.3,
                }),
                ..CreateSession::default()
            },
            None,
        )
        .unwrap()
    }

    fn request(corrections: Vec<WireCorrection>) -> CorrectionsRequest {
        CorrectionsRequest {
            corrections,
            sweeps: None,
            revision: None,
        }
    }

    #[test]
    fn label_corrections_map_to_prototypes() {
        let src = scene_source();
        let got = resolve(
            &src,
            &request(vec![WireCorrection {
                unit: 3,
                value: None,
                label: Some(2),
            }]),
        )
        .unwrap();
        assert_eq!(got[0].value, vec![0.0, 0.0, 1.0, 0.0]);
        let err = resolve(
            &src,
            &request(vec![WireCorrection {
                unit: 40,
                value: None,
                label: Some(0),
            }]),
        )
        .unwrap_err();
        assert_eq!(err.status, 422);
    }

    #[test]
    fn replay_is_order_free_and_deterministic() {
        let src = scene_source();
        let init = Snapshot::initial(&src).unwrap();
        let a = Correction {
            unit: 1,
            value: vec![1.0, 0.0, 0.0, 0.0],
        };
        let b = Correction {
            unit: 30,
            value: vec![0.0, 0.0, 0.0, 1.0],
        };
        let (s1, _) = apply(&src, &init, vec![a.clone()], 5).unwrap();
        let (s2, body) = apply(&src, &s1, vec![b.clone()], 5).unwrap();
        let (t, _) = apply(&src, &init, vec![b, a], 5).unwrap();
        assert_eq!(s2.values, t.values);
        assert_eq!(s2.revision, 2);
        assert_eq!(body.deltas.len(), 40);
        assert!(body.changed_units.contains(&30));
    }

    #[test]
    fn correcting_every_unit_passes_values_through() {
        let src = scene_source();
        let init = Snapshot::initial(&src).unwrap();
        let batch: Vec<Correction> = (0..40)
            .map(|unit| Correction {
                unit,
                value: vec![unit as f64, 0.0, 0.0, 0.0],
            })
            .collect();
        let (snap, _) = apply(&src, &init, batch.clone(), 2).unwrap();
        for c in batch {
            assert_eq!(snap.values[c.unit], c.value);
        }
    }
}
