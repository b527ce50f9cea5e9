//! Belief propagation from human-supplied value corrections.
//!
//! Corrected `(q_i, v_i)` pairs are treated as fully observed. EM sweeps
//! re-estimate the expected values `mu`, the value precisions `beta` and the
//! prior rows of the corrected units under Gaussian, Gamma and Dirichlet
//! priors centered on the pretrained parameters. The adapted model is then
//! used to re-infer every uncorrected unit.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adapt::{gamma_mode_update, ClampSite, ClampWarning};
use crate::error::{Error, Result};
use crate::inference::{infer_value, EmConfig};
use crate::model::{AttentionMatrix, AttentionRow, HyperPriors, ModelParams, ROW_SUM_TOL};
use crate::numeric::{log_sum_exp, max_abs_diff, ordered_sum, softmax, sq_dist};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Correction {
    pub unit: usize,
    pub value: Vec<f64>,
}

/// Queries for all `n` units plus asserted values for a subset of them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectionSet {
    pub queries: Vec<Vec<f64>>,
    pub corrected: Vec<Correction>,
}

impl CorrectionSet {
    pub fn new(queries: Vec<Vec<f64>>, corrected: Vec<Correction>) -> Self {
        Self { queries, corrected }
    }

    pub fn s(&self) -> usize {
        self.corrected.len()
    }

    pub fn validate(&self, params: &ModelParams) -> Result<()> {
        let n = params.n;
        if self.queries.len() != n {
            return Err(Error::dim("queries", n, self.queries.len()));
        }
        for (i, q) in self.queries.iter().enumerate() {
            if q.len() != params.d {
                return Err(Error::invalid(
                    format!("queries[{i}]"),
                    format!("expected length {}, got {}", params.d, q.len()),
                ));
            }
            if q.iter().any(|x| !x.is_finite()) {
                return Err(Error::invalid(format!("queries[{i}]"), "entries must be finite"));
            }
        }
        if self.corrected.is_empty() || self.corrected.len() > n {
            return Err(Error::invalid(
                "corrections",
                format!("need between 1 and {n} corrections, got {}", self.corrected.len()),
            ));
        }
        let mut seen = vec![false; n];
        for (c, corr) in self.corrected.iter().enumerate() {
            if corr.unit >= n {
                return Err(Error::invalid(
                    format!("corrections[{c}].unit"),
                    format!("unit {} out of range for n = {n}", corr.unit),
                ));
            }
            if std::mem::replace(&mut seen[corr.unit], true) {
                return Err(Error::invalid(
                    format!("corrections[{c}].unit"),
                    format!("unit {} corrected twice", corr.unit),
                ));
            }
            if corr.value.len() != params.m {
                return Err(Error::invalid(
                    format!("corrections[{c}].value"),
                    format!("expected length {}, got {}", params.m, corr.value.len()),
                ));
            }
            if corr.value.iter().any(|x| !x.is_finite()) {
                return Err(Error::invalid(
                    format!("corrections[{c}].value"),
                    "entries must be finite",
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BpConfig {
    pub sweeps: usize,
    /// Use the query dimension `d` instead of the value dimension `m` in the
    /// precision update numerator.
    pub literal_beta_dim: bool,
    pub update_mu: bool,
    pub update_beta: bool,
    pub update_pi: bool,
    pub em: EmConfig,
}

impl Default for BpConfig {
    fn default() -> Self {
        Self {
            sweeps: 5,
            literal_beta_dim: false,
            update_mu: true,
            update_beta: true,
            update_pi: true,
            em: EmConfig::default(),
        }
    }
}

/// Sup-norm change of each parameter block during one sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepDelta {
    pub mu: f64,
    pub beta: f64,
    pub pi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BpAudit {
    /// Penalized objective before the first sweep and after each sweep.
    pub objective: Vec<f64>,
    pub warnings: Vec<ClampWarning>,
    pub deltas: Vec<SweepDelta>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Propagated {
    pub params: ModelParams,
    /// One value per unit; corrected units carry their asserted value.
    pub values: Vec<Vec<f64>>,
    pub audit: BpAudit,
}

fn check_rows(w: &AttentionMatrix, cs: &CorrectionSet, n: usize) -> Result<()> {
    if w.0.len() != cs.s() {
        return Err(Error::dim("attention rows", cs.s(), w.0.len()));
    }
    for r in &w.0 {
        if r.len() != n {
            return Err(Error::dim("attention row", n, r.len()));
        }
    }
    Ok(())
}

/// Posterior `p_i(u_k | q_i, v_i)` for every corrected unit `i`, one row per
/// correction in the order given.
pub fn bp_responsibilities(params: &ModelParams, cs: &CorrectionSet) -> Result<AttentionMatrix> {
    cs.validate(params)?;
    cs.corrected
        .iter()
        .map(|c| {
            let logits = params.component_log_terms(c.unit, &cs.queries[c.unit], Some(&c.value));
            softmax(&logits)
                .map(AttentionRow)
                .ok_or(Error::DegeneratePrior { unit: c.unit })
        })
        .collect::<Result<Vec<_>>>()
        .map(AttentionMatrix)
}

/// MAP mean update `(theta_mu mu0_k + beta_k sum_i w_ik v_i) / (theta_mu + beta_k sum_i w_ik)`,
/// evaluated as a convex combination of the anchor and the
/// responsibility-weighted mean of the corrected values.
pub fn update_mu(
    params: &ModelParams,
    anchors: &[Vec<f64>],
    cs: &CorrectionSet,
    w: &AttentionMatrix,
    hyper: &HyperPriors,
) -> Result<Vec<Vec<f64>>> {
    check_rows(w, cs, params.n)?;
    if anchors.len() != params.n {
        return Err(Error::dim("anchors", params.n, anchors.len()));
    }
    let theta = hyper.theta_mu;
    let mut buf = Vec::with_capacity(cs.s());
    (0..params.n)
        .map(|k| {
            let mass = w.column_mass(k);
            if theta == 0.0 && mass < 1e-12 {
                return Err(Error::UnanchoredEmptyComponent { unit: k });
            }
            let lam = theta / (theta + params.beta[k] * mass);
            Ok((0..params.m)
                .map(|c| {
                    if mass == 0.0 {
                        return anchors[k][c];
                    }
                    buf.clear();
                    buf.extend(w.0.iter().zip(&cs.corrected).map(|(r, x)| r[k] * x.value[c]));
                    lam * anchors[k][c] + (1.0 - lam) * (ordered_sum(&mut buf) / mass)
                })
                .collect())
        })
        .collect()
}

/// Gamma-mode value-precision update against the current `mu`. The
/// numerator uses `m/2` unless `literal_dim` selects `d/2`.
pub fn update_beta(
    params: &ModelParams,
    cs: &CorrectionSet,
    w: &AttentionMatrix,
    hyper: &HyperPriors,
    literal_dim: bool,
) -> Result<(Vec<f64>, Vec<ClampWarning>)> {
    check_rows(w, cs, params.n)?;
    let obs: Vec<&[f64]> = cs.corrected.iter().map(|c| c.value.as_slice()).collect();
    let dim = if literal_dim { params.d } else { params.m };
    let mut warnings = Vec::new();
    let beta = gamma_mode_update(
        "beta",
        dim,
        hyper.theta_beta1,
        hyper.theta_beta2,
        w,
        &obs,
        &params.mu,
        &mut warnings,
    );
    Ok((beta, warnings))
}

/// Dirichlet-mode prior update for the corrected rows:
/// `pi_ik = (w_ik + theta_ik - 1) / sum_k (w_ik + theta_ik - 1)`.
///
/// Rows of uncorrected units are returned unchanged. Negative terms are
/// clamped to zero (with a warning) and the row renormalized. Without
/// clamping the denominator is `1 + sum_k (theta_ik - 1)`, using that `w`
/// rows sum to one.
pub fn update_pi(
    params: &ModelParams,
    cs: &CorrectionSet,
    w: &AttentionMatrix,
    hyper: &HyperPriors,
) -> Result<(Vec<Vec<f64>>, Vec<ClampWarning>)> {
    check_rows(w, cs, params.n)?;
    let mut pi = params.pi.clone();
    let mut warnings = Vec::new();
    for (row, c) in w.0.iter().zip(&cs.corrected) {
        let i = c.unit;
        let mut row_sum: Vec<f64> = row.to_vec();
        if (ordered_sum(&mut row_sum) - 1.0).abs() > ROW_SUM_TOL {
            return Err(Error::invalid(
                format!("w[{i}]"),
                "responsibility row does not sum to 1",
            ));
        }
        let theta = &hyper.theta_pi[i];
        let mut clamped = false;
        let terms: Vec<f64> = (0..params.n)
            .map(|k| {
                let t = row[k] + (theta[k] - 1.0);
                if t < 0.0 {
                    warnings.push(ClampWarning {
                        param: format!("pi[{i}]"),
                        unit: k,
                        site: ClampSite::Numerator,
                        raw: t,
                    });
                    clamped = true;
                    0.0
                } else {
                    t
                }
            })
            .collect();
        let denom = if clamped {
            let mut t = terms.clone();
            ordered_sum(&mut t)
        } else {
            let mut excess: Vec<f64> = theta.iter().map(|t| t - 1.0).collect();
            1.0 + ordered_sum(&mut excess)
        };
        if !(denom > 0.0) {
            return Err(Error::DirichletUnderflow { row: i });
        }
        pi[i] = terms.iter().map(|t| t / denom).collect();
    }
    Ok((pi, warnings))
}

/// Penalized observed-data objective maximized by the sweeps:
/// `sum_{i corrected} log p_i(q_i, v_i) - (theta_mu/2) sum_k |mu_k - mu0_k|^2
///  + sum_k [(theta_b1 - 1) log beta_k - theta_b2 beta_k]
///  + sum_{i corrected} sum_k (theta_ik - 1) log pi_ik`, up to constants.
pub fn bp_objective(
    params: &ModelParams,
    anchors: &[Vec<f64>],
    cs: &CorrectionSet,
    hyper: &HyperPriors,
) -> Result<f64> {
    let mut terms = Vec::new();
    for c in &cs.corrected {
        let lse = log_sum_exp(&params.component_log_terms(c.unit, &cs.queries[c.unit], Some(&c.value)));
        if lse == f64::NEG_INFINITY {
            return Err(Error::DegeneratePrior { unit: c.unit });
        }
        terms.push(lse);
        for (k, &t) in hyper.theta_pi[c.unit].iter().enumerate() {
            if t != 1.0 {
                terms.push((t - 1.0) * params.pi[c.unit][k].ln());
            }
        }
    }
    for k in 0..params.n {
        if hyper.theta_mu > 0.0 {
            terms.push(-0.5 * hyper.theta_mu * sq_dist(&params.mu[k], &anchors[k]));
        }
        let b = params.beta[k];
        terms.push((hyper.theta_beta1 - 1.0) * b.ln() - hyper.theta_beta2 * b);
    }
    Ok(ordered_sum(&mut terms))
}

/// Runs `cfg.sweeps` sweeps of `bp_responsibilities -> mu -> beta -> pi`
/// starting from (and anchored at) `params`, then re-infers every
/// uncorrected unit under the adapted parameters.
pub fn propagate(
    params: &ModelParams,
    cs: &CorrectionSet,
    hyper: &HyperPriors,
    cfg: &BpConfig,
) -> Result<Propagated> {
    if cfg.sweeps == 0 {
        return Err(Error::invalid("sweeps", "must be >= 1"));
    }
    cfg.em.validate()?;
    hyper.validate(params.n)?;
    cs.validate(params)?;
    let anchors = params.mu.clone();
    let mut cur = params.clone();
    let mut objective = vec![bp_objective(&cur, &anchors, cs, hyper)?];
    let mut warnings = Vec::new();
    let mut deltas = Vec::with_capacity(cfg.sweeps);
    for _ in 0..cfg.sweeps {
        let w = bp_responsibilities(&cur, cs)?;
        let mut delta = SweepDelta {
            mu: 0.0,
            beta: 0.0,
            pi: 0.0,
        };
        if cfg.update_mu {
            let mu = update_mu(&cur, &anchors, cs, &w, hyper)?;
            delta.mu = sup_rows(&mu, &cur.mu);
            cur.mu = mu;
        }
        if cfg.update_beta {
            let (beta, warn) = update_beta(&cur, cs, &w, hyper, cfg.literal_beta_dim)?;
            delta.beta = max_abs_diff(&beta, &cur.beta);
            cur.beta = beta;
            warnings.extend(warn);
        }
        if cfg.update_pi {
            let (pi, warn) = update_pi(&cur, cs, &w, hyper)?;
            delta.pi = sup_rows(&pi, &cur.pi);
            cur.pi = pi;
            warnings.extend(warn);
        }
        deltas.push(delta);
        objective.push(bp_objective(&cur, &anchors, cs, hyper)?);
    }
    let mut values: Vec<Option<Vec<f64>>> = vec![None; params.n];
    for c in &cs.corrected {
        values[c.unit] = Some(c.value.clone());
    }
    let values = values
        .into_par_iter()
        .enumerate()
        .map(|(i, v)| match v {
            Some(v) => Ok(v),
            None => infer_value(&cur, i, &cs.queries[i], None, &cfg.em).map(|inf| inf.value),
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Propagated {
        params: cur,
        values,
        audit: BpAudit {
            objective,
            warnings,
            deltas,
        },
    })
}

fn sup_rows(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| max_abs_diff(x, y))
        .fold(0.0, f64::max)
}
