//! Model parameters, isotropic Gaussian log-densities and the per-unit
//! query/value mixture.
//!
//! A [`ModelParams`] value is the full parameter set evaluated at one input:
//! mixing priors `pi`, keys `xi`, expected values `mu` and the two precision
//! vectors. Unit `i`'s joint density over a query `q` and a value `v` is
//!
//! ```text
//! p_i(q, v) = sum_j pi[i][j] * N(q; xi[j], 1/alpha[j]) * N(v; mu[j], 1/beta[j])
//! ```
//!
//! and every density in this module is evaluated in log space.

use std::f64::consts::PI;
use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{log_sum_exp, softmax, sq_dist, sq_norm};

/// Tolerance on prior and attention row sums.
pub const ROW_SUM_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub(crate) n: usize,
    pub(crate) d: usize,
    pub(crate) m: usize,
    pub(crate) pi: Vec<Vec<f64>>,
    pub(crate) xi: Vec<Vec<f64>>,
    pub(crate) mu: Vec<Vec<f64>>,
    pub(crate) alpha: Vec<f64>,
    pub(crate) beta: Vec<f64>,
}

impl ModelParams {
    /// Builds and validates a parameter set. Dimensions are inferred from
    /// the first key and first expected value.
    pub fn new(
        pi: Vec<Vec<f64>>,
        xi: Vec<Vec<f64>>,
        mu: Vec<Vec<f64>>,
        alpha: Vec<f64>,
        beta: Vec<f64>,
    ) -> Result<Self> {
        let params = Self::assemble(pi, xi, mu, alpha, beta)?;
        params.validate()?;
        Ok(params)
    }

    fn assemble(
        pi: Vec<Vec<f64>>,
        xi: Vec<Vec<f64>>,
        mu: Vec<Vec<f64>>,
        alpha: Vec<f64>,
        beta: Vec<f64>,
    ) -> Result<Self> {
        let n = xi.len();
        if n == 0 {
            return Err(Error::invalid("n", "model needs at least one unit"));
        }
        let d = xi[0].len();
        let m = mu.first().map_or(0, Vec::len);
        Ok(Self {
            n,
            d,
            m,
            pi,
            xi,
            mu,
            alpha,
            beta,
        })
    }

    /// Checks every invariant; errors name the offending field path.
    pub fn validate(&self) -> Result<()> {
        self.validate_impl(false)
    }

    fn validate_impl(&self, allow_zero_beta: bool) -> Result<()> {
        let n = self.n;
        if n == 0 {
            return Err(Error::invalid("n", "model needs at least one unit"));
        }
        if self.d == 0 {
            return Err(Error::invalid("d", "query dimension must be positive"));
        }
        if self.m == 0 {
            return Err(Error::invalid("m", "value dimension must be positive"));
        }
        check_len("pi", n, self.pi.len())?;
        check_len("xi", n, self.xi.len())?;
        check_len("mu", n, self.mu.len())?;
        check_len("alpha", n, self.alpha.len())?;
        check_len("beta", n, self.beta.len())?;
        for (i, row) in self.pi.iter().enumerate() {
            check_len(&format!("pi[{i}]"), n, row.len())?;
            for (j, &p) in row.iter().enumerate() {
                if !p.is_finite() || p < 0.0 {
                    return Err(Error::invalid(
                        format!("pi[{i}][{j}]"),
                        format!("prior must be finite and nonnegative, got {p}"),
                    ));
                }
            }
            if row.iter().all(|&p| p == 0.0) {
                return Err(Error::DegeneratePrior { unit: i });
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::invalid(
                    format!("pi[{i}]"),
                    format!("row sums to {sum}, expected 1"),
                ));
            }
        }
        check_rows("xi", &self.xi, self.d)?;
        check_rows("mu", &self.mu, self.m)?;
        for (j, &a) in self.alpha.iter().enumerate() {
            if !(a.is_finite() && a > 0.0) {
                return Err(Error::invalid(
                    format!("alpha[{j}]"),
                    format!("precision must be positive, got {a}"),
                ));
            }
        }
        for (j, &b) in self.beta.iter().enumerate() {
            let ok = b.is_finite() && (b > 0.0 || (allow_zero_beta && b == 0.0));
            if !ok {
                return Err(Error::invalid(
                    format!("beta[{j}]"),
                    format!("precision must be positive, got {b}"),
                ));
            }
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn pi(&self) -> &[Vec<f64>] {
        &self.pi
    }

    pub fn xi(&self) -> &[Vec<f64>] {
        &self.xi
    }

    pub fn mu(&self) -> &[Vec<f64>] {
        &self.mu
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    /// Relabels units: unit `k` of the result is unit `perm[k]` of `self`.
    /// Prior rows and columns are permuted together.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        check_permutation(perm, self.n)?;
        Ok(Self {
            n: self.n,
            d: self.d,
            m: self.m,
            pi: perm
                .iter()
                .map(|&a| perm.iter().map(|&b| self.pi[a][b]).collect())
                .collect(),
            xi: perm.iter().map(|&a| self.xi[a].clone()).collect(),
            mu: perm.iter().map(|&a| self.mu[a].clone()).collect(),
            alpha: perm.iter().map(|&a| self.alpha[a]).collect(),
            beta: perm.iter().map(|&a| self.beta[a]).collect(),
        })
    }

    pub(crate) fn check_unit(&self, i: usize) -> Result<()> {
        if i >= self.n {
            return Err(Error::UnitOutOfRange {
                index: i,
                n: self.n,
            });
        }
        Ok(())
    }

    pub(crate) fn check_query(&self, q: &[f64]) -> Result<()> {
        if q.len() != self.d {
            return Err(Error::dim("query", self.d, q.len()));
        }
        Ok(())
    }

    pub(crate) fn check_value(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.m {
            return Err(Error::dim("value", self.m, v.len()));
        }
        Ok(())
    }

    /// Per-component log terms `log pi[i][j] + log N(q; xi_j) + log N(v; mu_j)`.
    /// Passing `v = None` drops the value factor (query-only posterior).
    pub(crate) fn component_log_terms(&self, i: usize, q: &[f64], v: Option<&[f64]>) -> Vec<f64> {
        (0..self.n)
            .map(|j| {
                let p = self.pi[i][j];
                if p == 0.0 {
                    return f64::NEG_INFINITY;
                }
                let mut l = p.ln() + log_gauss_sq(sq_dist(q, &self.xi[j]), self.alpha[j], self.d);
                if let Some(v) = v {
                    l += log_gauss_sq(sq_dist(v, &self.mu[j]), self.beta[j], self.m);
                }
                l
            })
            .collect()
    }
}

fn check_len(field: &str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::invalid(
            field,
            format!("expected length {expected}, got {got}"),
        ));
    }
    Ok(())
}

fn check_rows(field: &str, rows: &[Vec<f64>], dim: usize) -> Result<()> {
    for (j, row) in rows.iter().enumerate() {
        check_len(&format!("{field}[{j}]"), dim, row.len())?;
        if let Some(c) = row.iter().position(|x| !x.is_finite()) {
            return Err(Error::invalid(
                format!("{field}[{j}][{c}]"),
                "entry must be finite",
            ));
        }
    }
    Ok(())
}

pub(crate) fn check_permutation(perm: &[usize], n: usize) -> Result<()> {
    if perm.len() != n {
        return Err(Error::dim("permutation", n, perm.len()));
    }
    let mut seen = vec![false; n];
    for &p in perm {
        if p >= n || seen[p] {
            return Err(Error::invalid("permutation", "not a permutation of 0..n"));
        }
        seen[p] = true;
    }
    Ok(())
}

/// Hyperparameters of the Gaussian, Gamma and Dirichlet priors used during
/// inference-time adaptation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperPriors {
    pub theta_xi: f64,
    pub theta_alpha1: f64,
    pub theta_alpha2: f64,
    pub theta_mu: f64,
    pub theta_beta1: f64,
    pub theta_beta2: f64,
    pub theta_pi: Vec<Vec<f64>>,
}

impl HyperPriors {
    /// Unit-precision Gaussian anchors, flat Gamma (`theta_1 = 1, theta_2 = 0`)
    /// and flat Dirichlet priors.
    pub fn weak(n: usize) -> Self {
        Self {
            theta_xi: 1.0,
            theta_alpha1: 1.0,
            theta_alpha2: 0.0,
            theta_mu: 1.0,
            theta_beta1: 1.0,
            theta_beta2: 0.0,
            theta_pi: vec![vec![1.0; n]; n],
        }
    }

    /// Dirichlet parameters `1 + concentration * pi0`, whose mode is `pi0`
    /// when the concentration dominates the data.
    pub fn dirichlet_centered(pi0: &[Vec<f64>], concentration: f64) -> Vec<Vec<f64>> {
        pi0.iter()
            .map(|row| row.iter().map(|p| 1.0 + concentration * p).collect())
            .collect()
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        let nonneg = [
            ("theta_xi", self.theta_xi),
            ("theta_alpha2", self.theta_alpha2),
            ("theta_mu", self.theta_mu),
            ("theta_beta2", self.theta_beta2),
        ];
        for (name, x) in nonneg {
            if !(x.is_finite() && x >= 0.0) {
                return Err(Error::invalid(
                    format!("hyper.{name}"),
                    format!("must be finite and >= 0, got {x}"),
                ));
            }
        }
        for (name, x) in [
            ("theta_alpha1", self.theta_alpha1),
            ("theta_beta1", self.theta_beta1),
        ] {
            if !(x.is_finite() && x > 0.0) {
                return Err(Error::invalid(
                    format!("hyper.{name}"),
                    format!("must be finite and > 0, got {x}"),
                ));
            }
        }
        check_len("hyper.theta_pi", n, self.theta_pi.len())?;
        for (i, row) in self.theta_pi.iter().enumerate() {
            check_len(&format!("hyper.theta_pi[{i}]"), n, row.len())?;
            for (k, &t) in row.iter().enumerate() {
                if !(t.is_finite() && t > 0.0) {
                    return Err(Error::invalid(
                        format!("hyper.theta_pi[{i}][{k}]"),
                        format!("must be finite and > 0, got {t}"),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// One row of responsibilities: the posterior over the unit that generated
/// an observation. This is the probabilistic counterpart of an attention row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AttentionRow(pub Vec<f64>);

impl AttentionRow {
    pub fn weights(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for AttentionRow {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// Stacked attention rows. For key adaptation this is `n x n`; for belief
/// propagation it has one row per corrected unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AttentionMatrix(pub Vec<AttentionRow>);

impl AttentionMatrix {
    pub fn rows(&self) -> &[AttentionRow] {
        &self.0
    }

    /// Column mass `sum_i w[i][k]`.
    pub fn column_mass(&self, k: usize) -> f64 {
        let mut terms: Vec<f64> = self.0.iter().map(|r| r[k]).collect();
        crate::numeric::ordered_sum(&mut terms)
    }
}

/// `(dim/2) log(precision / 2 pi) - (precision/2) * sq`, for a squared distance `sq`.
#[inline]
pub(crate) fn log_gauss_sq(sq: f64, precision: f64, dim: usize) -> f64 {
    0.5 * dim as f64 * (precision / (2.0 * PI)).ln() - 0.5 * precision * sq
}

/// Log-density of the isotropic Gaussian `N(x; mean, precision^-1 I_dim)`.
pub fn log_gaussian(x: &[f64], mean: &[f64], precision: f64, dim: usize) -> Result<f64> {
    if x.len() != dim {
        return Err(Error::dim("log_gaussian x", dim, x.len()));
    }
    if mean.len() != dim {
        return Err(Error::dim("log_gaussian mean", dim, mean.len()));
    }
    if !(precision.is_finite() && precision > 0.0) {
        return Err(Error::NonPositivePrecision(precision));
    }
    Ok(log_gauss_sq(sq_dist(x, mean), precision, dim))
}

fn check_observation(params: &ModelParams, i: usize, q: &[f64], v: &[f64]) -> Result<()> {
    params.check_unit(i)?;
    params.check_query(q)?;
    params.check_value(v)?;
    check_value_precisions(params)
}

pub(crate) fn check_value_precisions(params: &ModelParams) -> Result<()> {
    match params.beta.iter().find(|b| !(**b > 0.0)) {
        Some(&b) => Err(Error::NonPositivePrecision(b)),
        None => Ok(()),
    }
}

/// `log p_i(q, v)`, the log of unit `i`'s query/value mixture density.
pub fn joint_log_density(params: &ModelParams, i: usize, q: &[f64], v: &[f64]) -> Result<f64> {
    check_observation(params, i, q, v)?;
    let lse = log_sum_exp(&params.component_log_terms(i, q, Some(v)));
    if lse == f64::NEG_INFINITY {
        return Err(Error::DegeneratePrior { unit: i });
    }
    Ok(lse)
}

/// `log p_i(q)` with the value marginalized out.
pub fn query_log_marginal(params: &ModelParams, i: usize, q: &[f64]) -> Result<f64> {
    params.check_unit(i)?;
    params.check_query(q)?;
    let lse = log_sum_exp(&params.component_log_terms(i, q, None));
    if lse == f64::NEG_INFINITY {
        return Err(Error::DegeneratePrior { unit: i });
    }
    Ok(lse)
}

/// `log p_i(v | q)`: the objective maximized by value inference.
pub fn conditional_log_density(
    params: &ModelParams,
    i: usize,
    q: &[f64],
    v: &[f64],
) -> Result<f64> {
    Ok(joint_log_density(params, i, q, v)? - query_log_marginal(params, i, q)?)
}

/// Posterior `p_i(u_j | q, v)` over the generating unit.
pub fn responsibilities(
    params: &ModelParams,
    i: usize,
    q: &[f64],
    v: &[f64],
) -> Result<AttentionRow> {
    check_observation(params, i, q, v)?;
    softmax(&params.component_log_terms(i, q, Some(v)))
        .map(AttentionRow)
        .ok_or(Error::DegeneratePrior { unit: i })
}

/// Posterior `p_i(u_j | q)` using the query factor only.
pub fn query_responsibilities(params: &ModelParams, i: usize, q: &[f64]) -> Result<AttentionRow> {
    params.check_unit(i)?;
    params.check_query(q)?;
    softmax(&params.component_log_terms(i, q, None))
        .map(AttentionRow)
        .ok_or(Error::DegeneratePrior { unit: i })
}

/// Builds the constrained model with shared precisions and priors linked to
/// key and value norms: every row of `pi` is the softmax of
/// `(alpha/2)|xi_j|^2 + (beta/2)|mu_j|^2`.
///
/// `beta = 0` is accepted here (and only here) to build the limit model used
/// by standard attention; such a model is rejected by value inference.
pub fn tie_and_link(
    xi: Vec<Vec<f64>>,
    mu: Vec<Vec<f64>>,
    alpha: f64,
    beta: f64,
) -> Result<ModelParams> {
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(Error::invalid("alpha", format!("must be positive, got {alpha}")));
    }
    if !(beta.is_finite() && beta >= 0.0) {
        return Err(Error::invalid("beta", format!("must be >= 0, got {beta}")));
    }
    let n = xi.len();
    if mu.len() != n {
        return Err(Error::invalid(
            "mu",
            format!("expected length {n}, got {}", mu.len()),
        ));
    }
    let logits: Vec<f64> = xi
        .iter()
        .zip(&mu)
        .map(|(x, u)| 0.5 * alpha * sq_norm(x) + 0.5 * beta * sq_norm(u))
        .collect();
    let row = softmax(&logits).ok_or_else(|| Error::invalid("xi", "norms are not finite"))?;
    let params = ModelParams::assemble(vec![row; n], xi, mu, vec![alpha; n], vec![beta; n])?;
    params.validate_impl(true)?;
    Ok(params)
}

/// Index of the prototype nearest to `v`; ties resolve to the lowest index.
pub fn nearest_label(v: &[f64], prototypes: &[Vec<f64>]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (c, p) in prototypes.iter().enumerate() {
        let d = sq_dist(v, p);
        if d < best_d {
            best = c;
            best_d = d;
        }
    }
    best
}
