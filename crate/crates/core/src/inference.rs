//! EM value inference: `argmax_v p_i(v | q)` for the Gaussian mixture model.
//!
//! Each EM step computes responsibilities at the current estimate and moves
//! the estimate to the stationary point of the auxiliary function, a
//! precision-weighted average of the expected values `mu_j`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{check_value_precisions, conditional_log_density, AttentionRow, ModelParams};
use crate::numeric::{dot, max_abs_diff, softmax, sq_dist, weighted_row_sum};

/// How the M-step weights are formed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum WeightMode {
    /// Exact stationary point of the Gaussian auxiliary function:
    /// responsibilities with full Gaussian normalizers, reweighted by `beta_j`.
    #[default]
    #[serde(rename = "derived")]
    Derived,
    /// `pi_ij * beta_j * exp(-alpha_j/2 |q - xi_j|^2) * exp(-beta_j/2 |v - mu_j|^2)`
    /// normalized over `j`, without the Gaussian normalizers. Identical to
    /// `Derived` when precisions are tied across units.
    #[serde(rename = "paper-literal", alias = "paper_literal", alias = "literal")]
    Literal,
}

impl std::str::FromStr for WeightMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "derived" => Ok(WeightMode::Derived),
            "paper-literal" | "paper_literal" | "literal" => Ok(WeightMode::Literal),
            other => Err(format!("unknown weight mode `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmConfig {
    pub max_iter: usize,
    /// Stop once the sup-norm of the step falls below this.
    pub tol: f64,
    pub mode: WeightMode,
    /// Extra seeded starting points; the run with the highest final
    /// log-density wins.
    pub restarts: usize,
    pub seed: u64,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            max_iter: 100,
            tol: 1e-8,
            mode: WeightMode::Derived,
            restarts: 0,
            seed: 0,
        }
    }
}

impl EmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iter == 0 {
            return Err(Error::invalid("max_iter", "must be >= 1"));
        }
        if !(self.tol >= 0.0) {
            return Err(Error::invalid("tol", "must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Iterate {
    pub value: Vec<f64>,
    /// `log p_i(value | q)`.
    pub log_density: f64,
    /// Weights that produced `value`; absent for the starting point.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub attention: Option<AttentionRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceTrace {
    pub iterates: Vec<Iterate>,
    pub converged: bool,
    pub iterations_used: usize,
}

impl InferenceTrace {
    /// Largest decrease of the log-density between consecutive iterates
    /// (zero when monotone).
    pub fn max_decrease(&self) -> f64 {
        self.iterates
            .windows(2)
            .map(|w| w[0].log_density - w[1].log_density)
            .fold(0.0, f64::max)
    }

    pub fn last_attention(&self) -> Option<&AttentionRow> {
        self.iterates.iter().rev().find_map(|it| it.attention.as_ref())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Inference {
    pub value: Vec<f64>,
    pub trace: InferenceTrace,
}

/// One EM update of the value estimate for unit `i`.
pub fn em_step(
    params: &ModelParams,
    i: usize,
    q: &[f64],
    v_t: &[f64],
    mode: WeightMode,
) -> Result<(Vec<f64>, AttentionRow)> {
    params.check_unit(i)?;
    params.check_query(q)?;
    params.check_value(v_t)?;
    check_value_precisions(params)?;
    let logits: Vec<f64> = match mode {
        // log(r_j * beta_j) up to a constant
        WeightMode::Derived => params
            .component_log_terms(i, q, Some(v_t))
            .into_iter()
            .zip(&params.beta)
            .map(|(l, b)| l + b.ln())
            .collect(),
        WeightMode::Literal => (0..params.n)
            .map(|j| {
                let p = params.pi[i][j];
                if p == 0.0 {
                    return f64::NEG_INFINITY;
                }
                let (a, b) = (params.alpha[j], params.beta[j]);
                p.ln() + b.ln()
                    - 0.5 * a * sq_dist(q, &params.xi[j])
                    - 0.5 * b * sq_dist(v_t, &params.mu[j])
            })
            .collect(),
    };
    if logits.iter().any(|l| l.is_nan()) {
        return Err(Error::NonFinite { unit: i });
    }
    let w = softmax(&logits).ok_or(Error::DegeneratePrior { unit: i })?;
    let v_next = weighted_row_sum(&w, &params.mu, params.m);
    if v_next.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite { unit: i });
    }
    Ok((v_next, AttentionRow(w)))
}

/// Prior-weighted mean of the expected values, `sum_j pi_ij mu_j`.
pub fn default_start(params: &ModelParams, i: usize) -> Result<Vec<f64>> {
    params.check_unit(i)?;
    Ok(weighted_row_sum(&params.pi[i], &params.mu, params.m))
}

fn run_em(
    params: &ModelParams,
    i: usize,
    q: &[f64],
    v0: Vec<f64>,
    cfg: &EmConfig,
) -> Result<Inference> {
    let mut iterates = vec![Iterate {
        log_density: conditional_log_density(params, i, q, &v0)?,
        value: v0,
        attention: None,
    }];
    let mut converged = false;
    let mut used = 0;
    while used < cfg.max_iter {
        let current = &iterates[iterates.len() - 1].value;
        let (next, row) = em_step(params, i, q, current, cfg.mode)?;
        used += 1;
        let step = max_abs_diff(&next, current);
        iterates.push(Iterate {
            log_density: conditional_log_density(params, i, q, &next)?,
            value: next,
            attention: Some(row),
        });
        if step < cfg.tol {
            converged = true;
            break;
        }
    }
    let value = iterates[iterates.len() - 1].value.clone();
    Ok(Inference {
        value,
        trace: InferenceTrace {
            iterates,
            converged,
            iterations_used: used,
        },
    })
}

/// Runs EM for unit `i` from `v0` (default: [`default_start`]).
pub fn infer_value(
    params: &ModelParams,
    i: usize,
    q: &[f64],
    v0: Option<&[f64]>,
    cfg: &EmConfig,
) -> Result<Inference> {
    cfg.validate()?;
    params.check_unit(i)?;
    params.check_query(q)?;
    let start = match v0 {
        Some(v) => {
            params.check_value(v)?;
            v.to_vec()
        }
        None => default_start(params, i)?,
    };
    let mut best = run_em(params, i, q, start, cfg)?;
    if cfg.restarts > 0 {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        for _ in 0..cfg.restarts {
            let j = rng.random_range(0..params.n);
            let cand = run_em(params, i, q, params.mu[j].clone(), cfg)?;
            if final_density(&cand) > final_density(&best) {
                best = cand;
            }
        }
    }
    Ok(best)
}

fn final_density(inf: &Inference) -> f64 {
    inf.trace.iterates.last().map_or(f64::NEG_INFINITY, |it| it.log_density)
}

/// Single-pass softmax attention `softmax_j(alpha * xi_j . q)` over the
/// expected values. This is the small-`beta` limit of value inference for a
/// model built by [`crate::model::tie_and_link`]; it requires tied `alpha`.
pub fn standard_attention(params: &ModelParams, q: &[f64]) -> Result<(Vec<f64>, AttentionRow)> {
    params.check_query(q)?;
    let alpha = params.alpha[0];
    if let Some(j) = params.alpha.iter().position(|&a| a != alpha) {
        return Err(Error::invalid(
            format!("alpha[{j}]"),
            "standard attention requires tied query precisions",
        ));
    }
    let logits: Vec<f64> = params.xi.iter().map(|x| alpha * dot(x, q)).collect();
    let w = softmax(&logits).ok_or_else(|| Error::invalid("xi", "attention logits are not finite"))?;
    let v = weighted_row_sum(&w, &params.mu, params.m);
    Ok((v, AttentionRow(w)))
}

/// Runs [`infer_value`] for every unit with its own query. Units are
/// independent; failures are reported per unit.
pub fn batch_infer(
    params: &ModelParams,
    queries: &[Vec<f64>],
    cfg: &EmConfig,
) -> Result<Vec<Result<Inference>>> {
    cfg.validate()?;
    if queries.len() != params.n {
        return Err(Error::dim("queries", params.n, queries.len()));
    }
    Ok(queries
        .par_iter()
        .enumerate()
        .map(|(i, q)| infer_value(params, i, q, None, cfg))
        .collect())
}
