//! Inference-time MAP adaptation of keys and query precisions from the batch
//! of queries, one query per unit.
//!
//! Keys are pulled toward the responsibility-weighted mean of the queries
//! they explain, regularized by a Gaussian prior centered on the anchor keys
//! the caller supplies. Precisions follow the Gamma-prior mode.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{query_responsibilities, AttentionMatrix, HyperPriors, ModelParams};
use crate::numeric::{log_sum_exp, ordered_sum, sq_dist};

/// Floor applied to Gamma-mode numerators and denominators.
pub const CLAMP_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptConfig {
    pub iters: usize,
    pub hyper: HyperPriors,
    pub adapt_alpha: bool,
}

impl AdaptConfig {
    pub fn new(hyper: HyperPriors) -> Self {
        Self {
            iters: 10,
            hyper,
            adapt_alpha: false,
        }
    }
}

/// Which part of a Gamma-mode update hit the floor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClampSite {
    Numerator,
    Denominator,
}

/// Record of a guarded update: parameter `param`, component `unit`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClampWarning {
    pub param: String,
    pub unit: usize,
    pub site: ClampSite,
    pub raw: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adapted {
    pub params: ModelParams,
    /// Penalized objective before the first sweep and after each sweep.
    pub objective: Vec<f64>,
    pub warnings: Vec<ClampWarning>,
}

fn check_queries(params: &ModelParams, queries: &[Vec<f64>]) -> Result<()> {
    if queries.len() != params.n {
        return Err(Error::dim("queries", params.n, queries.len()));
    }
    queries.iter().try_for_each(|q| params.check_query(q))
}

fn check_matrix(w: &AttentionMatrix, rows: usize, n: usize) -> Result<()> {
    if w.0.len() != rows {
        return Err(Error::dim("attention rows", rows, w.0.len()));
    }
    for r in &w.0 {
        if r.len() != n {
            return Err(Error::dim("attention row", n, r.len()));
        }
    }
    Ok(())
}

/// Query-only posterior `w[i][j] = p_i(u_j | q_i)` for every unit.
pub fn key_responsibilities(params: &ModelParams, queries: &[Vec<f64>]) -> Result<AttentionMatrix> {
    check_queries(params, queries)?;
    (0..params.n)
        .map(|i| query_responsibilities(params, i, &queries[i]))
        .collect::<Result<Vec<_>>>()
        .map(AttentionMatrix)
}

/// MAP key update `(theta_xi xi0_k + alpha_k sum_i w_ik q_i) / (theta_xi + alpha_k sum_i w_ik)`,
/// evaluated as the convex combination `lam xi0_k + (1 - lam) qbar_k` with
/// `lam = theta_xi / (theta_xi + alpha_k sum_i w_ik)` and `qbar_k` the
/// responsibility-weighted query mean.
pub fn update_keys(
    params: &ModelParams,
    anchors: &[Vec<f64>],
    queries: &[Vec<f64>],
    w: &AttentionMatrix,
    hyper: &HyperPriors,
) -> Result<Vec<Vec<f64>>> {
    check_queries(params, queries)?;
    check_matrix(w, params.n, params.n)?;
    if anchors.len() != params.n {
        return Err(Error::dim("anchors", params.n, anchors.len()));
    }
    let theta = hyper.theta_xi;
    let mut buf = Vec::with_capacity(params.n);
    (0..params.n)
        .map(|k| {
            let mass = w.column_mass(k);
            if theta == 0.0 && mass < 1e-12 {
                return Err(Error::UnanchoredEmptyComponent { unit: k });
            }
            let lam = theta / (theta + params.alpha[k] * mass);
            Ok((0..params.d)
                .map(|c| {
                    if mass == 0.0 {
                        return anchors[k][c];
                    }
                    buf.clear();
                    buf.extend(w.0.iter().zip(queries).map(|(r, q)| r[k] * q[c]));
                    lam * anchors[k][c] + (1.0 - lam) * (ordered_sum(&mut buf) / mass)
                })
                .collect())
        })
        .collect()
}

/// Gamma-mode precision update
/// `(theta_1 + (dim/2) sum_i w_ik - 1) / (theta_2 + (1/2) sum_i w_ik |x_i - c_k|^2)`,
/// shared by the query- and value-precision updates.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gamma_mode_update(
    param: &str,
    dim: usize,
    theta1: f64,
    theta2: f64,
    w: &AttentionMatrix,
    observations: &[&[f64]],
    centers: &[Vec<f64>],
    warnings: &mut Vec<ClampWarning>,
) -> Vec<f64> {
    centers
        .iter()
        .enumerate()
        .map(|(k, center)| {
            let mut mass: Vec<f64> = w.0.iter().map(|r| r[k]).collect();
            let mut scatter: Vec<f64> = w
                .0
                .iter()
                .zip(observations)
                .map(|(r, x)| 0.5 * r[k] * sq_dist(x, center))
                .collect();
            let mut num = theta1 + 0.5 * dim as f64 * ordered_sum(&mut mass) - 1.0;
            let mut den = theta2 + ordered_sum(&mut scatter);
            if !(num > CLAMP_EPS) {
                warnings.push(ClampWarning {
                    param: param.to_string(),
                    unit: k,
                    site: ClampSite::Numerator,
                    raw: num,
                });
                num = CLAMP_EPS;
            }
            if !(den > CLAMP_EPS) {
                warnings.push(ClampWarning {
                    param: param.to_string(),
                    unit: k,
                    site: ClampSite::Denominator,
                    raw: den,
                });
                den = CLAMP_EPS;
            }
            num / den
        })
        .collect()
}

/// Gamma-mode update of the query precisions against the keys currently in
/// `params` (call after the key update of the same sweep).
pub fn update_alpha(
    params: &ModelParams,
    queries: &[Vec<f64>],
    w: &AttentionMatrix,
    hyper: &HyperPriors,
) -> Result<(Vec<f64>, Vec<ClampWarning>)> {
    check_queries(params, queries)?;
    check_matrix(w, params.n, params.n)?;
    let obs: Vec<&[f64]> = queries.iter().map(Vec::as_slice).collect();
    let mut warnings = Vec::new();
    let alpha = gamma_mode_update(
        "alpha",
        params.d,
        hyper.theta_alpha1,
        hyper.theta_alpha2,
        w,
        &obs,
        &params.xi,
        &mut warnings,
    );
    Ok((alpha, warnings))
}

/// Penalized objective for key adaptation:
/// `-(theta_xi/2) sum_k |xi_k - xi0_k|^2 + sum_i log sum_j pi_ij N(q_i; xi_j, 1/alpha_j)`,
/// plus the Gamma log-prior `sum_k (theta_1 - 1) log alpha_k - theta_2 alpha_k`
/// when `with_alpha_prior` is set. Additive constants are dropped.
pub fn key_objective(
    params: &ModelParams,
    anchors: &[Vec<f64>],
    queries: &[Vec<f64>],
    hyper: &HyperPriors,
    with_alpha_prior: bool,
) -> Result<f64> {
    check_queries(params, queries)?;
    if anchors.len() != params.n {
        return Err(Error::dim("anchors", params.n, anchors.len()));
    }
    let mut terms = Vec::with_capacity(2 * params.n + 1);
    for k in 0..params.n {
        if hyper.theta_xi > 0.0 {
            terms.push(-0.5 * hyper.theta_xi * sq_dist(&params.xi[k], &anchors[k]));
        }
        if with_alpha_prior {
            let a = params.alpha[k];
            terms.push((hyper.theta_alpha1 - 1.0) * a.ln() - hyper.theta_alpha2 * a);
        }
    }
    for (i, q) in queries.iter().enumerate() {
        let lse = log_sum_exp(&params.component_log_terms(i, q, None));
        if lse == f64::NEG_INFINITY {
            return Err(Error::DegeneratePrior { unit: i });
        }
        terms.push(lse);
    }
    Ok(ordered_sum(&mut terms))
}

/// Repeats `key_responsibilities -> update_keys -> [update_alpha]` for
/// `cfg.iters` sweeps. The input keys are the prior anchors. The input
/// parameters are not modified.
pub fn adapt(params: &ModelParams, queries: &[Vec<f64>], cfg: &AdaptConfig) -> Result<Adapted> {
    if cfg.iters == 0 {
        return Err(Error::invalid("iters", "must be >= 1"));
    }
    cfg.hyper.validate(params.n)?;
    check_queries(params, queries)?;
    let anchors = params.xi.clone();
    let mut cur = params.clone();
    let mut objective = vec![key_objective(&cur, &anchors, queries, &cfg.hyper, cfg.adapt_alpha)?];
    let mut warnings = Vec::new();
    for _ in 0..cfg.iters {
        let w = key_responsibilities(&cur, queries)?;
        cur.xi = update_keys(&cur, &anchors, queries, &w, &cfg.hyper)?;
        if cfg.adapt_alpha {
            let (alpha, warn) = update_alpha(&cur, queries, &w, &cfg.hyper)?;
            cur.alpha = alpha;
            warnings.extend(warn);
        }
        objective.push(key_objective(&cur, &anchors, queries, &cfg.hyper, cfg.adapt_alpha)?);
    }
    Ok(Adapted {
        params: cur,
        objective,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::AttentionRow;
    use approx::assert_abs_diff_eq;

    fn model() -> ModelParams {
        ModelParams::new(
            vec![vec![0.5, 0.5], vec![0.25, 0.75]],
            vec![vec![0.0, 0.0], vec![2.0, 1.0]],
            vec![vec![1.0], vec![-1.0]],
            vec![1.0, 1.0],
            vec![1.0, 1.0],
        )
        .unwrap()
    }

    fn mat(rows: Vec<Vec<f64>>) -> AttentionMatrix {
        AttentionMatrix(rows.into_iter().map(AttentionRow).collect())
    }

    #[test]
    fn responsibilities_single_and_symmetric() {
        let p = ModelParams::new(
            vec![vec![1.0]],
            vec![vec![0.3]],
            vec![vec![0.0]],
            vec![2.0],
            vec![1.0],
        )
        .unwrap();
        let w = key_responsibilities(&p, &[vec![5.0]]).unwrap();
        assert_eq!(w.0[0].0, vec![1.0]);

        let p = ModelParams::new(
            vec![vec![1.0 / 3.0; 3]; 3],
            vec![vec![0.3]; 3],
            vec![vec![0.0], vec![1.0], vec![2.0]],
            vec![2.0; 3],
            vec![1.0; 3],
        )
        .unwrap();
        let w = key_responsibilities(&p, &[vec![5.0], vec![0.0], vec![-1.0]]).unwrap();
        for r in w.rows() {
            for &x in r.iter() {
                assert_abs_diff_eq!(x, 1.0 / 3.0, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn responsibilities_two_unit_naive() {
        let p = ModelParams::new(
            vec![vec![0.3, 0.7], vec![0.5, 0.5]],
            vec![vec![0.0], vec![1.5]],
            vec![vec![0.0], vec![0.0]],
            vec![2.0, 0.5],
            vec![1.0, 1.0],
        )
        .unwrap();
        let q = 0.9;
        let g = |x: f64, m: f64, a: f64| a.sqrt() * (-0.5 * a * (x - m) * (x - m)).exp();
        let t0 = 0.3 * g(q, 0.0, 2.0);
        let t1 = 0.7 * g(q, 1.5, 0.5);
        let w = key_responsibilities(&p, &[vec![q], vec![0.0]]).unwrap();
        assert_abs_diff_eq!(w.0[0][0], t0 / (t0 + t1), epsilon = 1e-14);
        assert_abs_diff_eq!(w.0[0][1], t1 / (t0 + t1), epsilon = 1e-14);
    }

    #[test]
    fn update_keys_direct_arithmetic() {
        let p = model();
        let queries = vec![vec![1.0, -1.0], vec![3.0, 2.0]];
        let w = mat(vec![vec![0.2, 0.8], vec![0.6, 0.4]]);
        let hyper = HyperPriors::weak(2);
        let anchors = vec![vec![0.5, 0.5], vec![1.0, 1.0]];
        let keys = update_keys(&p, &anchors, &queries, &w, &hyper).unwrap();
        // k = 0: (0.5 + 0.2*1 + 0.6*3) / (1 + 0.8), (0.5 - 0.2 + 1.2) / 1.8
        assert_abs_diff_eq!(keys[0][0], 2.5 / 1.8, epsilon = 1e-15);
        assert_abs_diff_eq!(keys[0][1], 1.5 / 1.8, epsilon = 1e-15);
        // k = 1: (1 + 0.8 + 1.2) / 2.2, (1 - 0.8 + 0.8) / 2.2
        assert_abs_diff_eq!(keys[1][0], 3.0 / 2.2, epsilon = 1e-15);
        assert_abs_diff_eq!(keys[1][1], 1.0 / 2.2, epsilon = 1e-15);
    }

    #[test]
    fn update_keys_prior_and_data_dominance() {
        let p = ModelParams::new(
            vec![vec![1.0]],
            vec![vec![0.0, 0.0]],
            vec![vec![0.0]],
            vec![3.0],
            vec![1.0],
        )
        .unwrap();
        let w = mat(vec![vec![1.0]]);
        let mut hyper = HyperPriors::weak(1);
        hyper.theta_xi = 0.0;
        let keys = update_keys(&p, &p.xi, &[vec![0.7, -2.5]], &w, &hyper).unwrap();
        assert_eq!(keys[0], vec![0.7, -2.5]);
        hyper.theta_xi = 1e12;
        let keys = update_keys(&p, &p.xi, &[vec![0.7, -2.5]], &w, &hyper).unwrap();
        assert!(keys[0].iter().all(|x| x.abs() < 1e-9));
    }

    #[test]
    fn unanchored_empty_component() {
        let p = model();
        let w = mat(vec![vec![1.0, 0.0], vec![1.0, 0.0]]);
        let mut hyper = HyperPriors::weak(2);
        hyper.theta_xi = 0.0;
        let err = update_keys(&p, &p.xi, &[vec![0.0; 2], vec![1.0; 2]], &w, &hyper).unwrap_err();
        assert_eq!(err, Error::UnanchoredEmptyComponent { unit: 1 });
    }

    #[test]
    fn update_alpha_examples() {
        let p = ModelParams::new(
            vec![vec![1.0]],
            vec![vec![1.0, 0.0]],
            vec![vec![0.0]],
            vec![3.0],
            vec![1.0],
        )
        .unwrap();
        let w = mat(vec![vec![1.0]]);
        let hyper = HyperPriors::weak(1);
        let q = vec![vec![2.0, 2.0]];
        let (a, warn) = update_alpha(&p, &q, &w, &hyper).unwrap();
        // |q - xi|^2 = 5, alpha = 1 / 2.5
        assert_abs_diff_eq!(a[0], 1.0 / 2.5, epsilon = 1e-15);
        assert!(warn.is_empty());

        let mut big = hyper.clone();
        big.theta_alpha2 = 1e9;
        let (a, warn) = update_alpha(&p, &q, &w, &big).unwrap();
        assert!(a[0] > 0.0 && a[0] < 1e-8);
        assert!(warn.is_empty());

        let p2 = model();
        let w = mat(vec![vec![1.0, 0.0], vec![1.0, 0.0]]);
        let (a, warn) = update_alpha(&p2, &[vec![0.0; 2], vec![1.0; 2]], &w, &HyperPriors::weak(2)).unwrap();
        assert!(a[1].is_finite());
        assert!(warn
            .iter()
            .any(|c| c.unit == 1 && c.site == ClampSite::Numerator));
    }

    #[test]
    fn adapt_fixed_point_at_keys() {
        let mut cfg = AdaptConfig::new(HyperPriors::weak(2));
        cfg.iters = 5;
        // Well-separated keys so each query is explained by its own unit.
        let far = ModelParams::new(
            vec![vec![0.5, 0.5]; 2],
            vec![vec![0.0, 0.0], vec![100.0, 0.0]],
            vec![vec![1.0], vec![-1.0]],
            vec![1.0, 1.0],
            vec![1.0, 1.0],
        )
        .unwrap();
        let before = far.clone();
        let out = adapt(&far, &far.xi.clone(), &cfg).unwrap();
        for (a, b) in out.params.xi.iter().zip(&far.xi) {
            for (x, y) in a.iter().zip(b) {
                assert_abs_diff_eq!(x, y, epsilon = 1e-9);
            }
        }
        assert_eq!(far, before);
    }

    #[test]
    fn adapt_objective_nondecreasing() {
        let p = model();
        let queries = vec![vec![1.0, 0.5], vec![0.5, 1.5]];
        let cfg = AdaptConfig::new(HyperPriors::weak(2));
        let out = adapt(&p, &queries, &cfg).unwrap();
        assert_eq!(out.objective.len(), cfg.iters + 1);
        for w in out.objective.windows(2) {
            assert!(w[1] >= w[0] - 1e-10, "{:?}", out.objective);
        }
    }
}
