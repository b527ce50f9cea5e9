//! Seeded invariant checks. Each check draws its instances from a fixed seed
//! range, so a run is reproducible, and reports the worst observed deviation
//! against its tolerance.

use rand::Rng;
use serde::Serialize;

use crate::adapt::{adapt, key_responsibilities, update_keys, AdaptConfig};
use crate::bp::{bp_responsibilities, propagate, update_mu, update_pi, BpConfig, Correction, CorrectionSet};
use crate::format::{model_to_text, parse_model, LoadedModel};
use crate::inference::{
    batch_infer, em_step, infer_value, standard_attention, EmConfig, InferenceTrace, WeightMode,
};
use crate::model::{conditional_log_density, responsibilities, tie_and_link, HyperPriors, ModelParams};
use crate::numeric::{max_abs_diff, sq_dist};
use crate::oracle::{
    finite_diff_grad, grid_local_maxima, label_errors, random_model, random_vec, rng, synth_scene,
    Grid1D, SynthSpec,
};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub cases: usize,
    pub worst: f64,
    pub tolerance: f64,
    pub detail: String,
}

impl CheckResult {
    fn bound(name: &str, cases: usize, worst: f64, tolerance: f64, detail: String) -> Self {
        Self {
            name: name.into(),
            passed: worst <= tolerance,
            cases,
            worst,
            tolerance,
            detail,
        }
    }

    fn failed(name: &str, cases: usize, detail: String) -> Self {
        Self {
            name: name.into(),
            passed: false,
            cases,
            worst: f64::INFINITY,
            tolerance: 0.0,
            detail,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteReport {
    pub seeds: usize,
    pub checks: Vec<CheckResult>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

/// Runs every check with `seeds` instances each.
pub fn run(seeds: usize) -> SuiteReport {
    let checks = vec![
        em_monotonicity(seeds, WeightMode::Derived),
        em_monotonicity(seeds, WeightMode::Literal),
        standard_limit(seeds),
        permutation_equivariance(seeds),
        oracle_agreement(seeds),
        key_update_stationarity(seeds),
        mean_update_stationarity(seeds),
        dominance(seeds),
        bp_utility(seeds, 0.9),
        format_round_trip(seeds),
    ];
    SuiteReport { seeds, checks }
}

macro_rules! tri {
    ($name:expr, $cases:expr, $e:expr) => {
        match $e {
            Ok(v) => v,
            Err(err) => return CheckResult::failed($name, $cases, format!("error: {err}")),
        }
    };
}

fn dims<R: Rng>(r: &mut R, max_n: usize, max_d: usize, max_m: usize) -> (usize, usize, usize) {
    (
        r.random_range(1..=max_n),
        r.random_range(1..=max_d),
        r.random_range(1..=max_m),
    )
}

/// Worst decrease of `log p_i(v | q)` along any value-inference trace.
/// Models: `n <= 8`, `d, m <= 4`, one random query per unit.
pub fn em_monotonicity(models: usize, mode: WeightMode) -> CheckResult {
    let name = match mode {
        WeightMode::Derived => "em_monotonicity_derived",
        WeightMode::Literal => "em_monotonicity_paper_literal",
    };
    let cfg = EmConfig {
        mode,
        ..EmConfig::default()
    };
    let mut worst = 0.0f64;
    let mut bad = 0;
    for seed in 0..models as u64 {
        let mut r = rng(10_000 + seed);
        let (n, d, m) = dims(&mut r, 8, 4, 4);
        let p = random_model(&mut r, n, d, m);
        let mut model_bad = false;
        for i in 0..n {
            let q = random_vec(&mut r, d, 1.0);
            let inf = tri!(name, models, infer_value(&p, i, &q, None, &cfg));
            let dec = inf.trace.max_decrease();
            model_bad |= dec > 1e-10;
            worst = worst.max(dec);
        }
        bad += model_bad as usize;
    }
    CheckResult::bound(name, models, worst, 1e-10, format!("{bad} models with a decrease"))
}

/// Tied, norm-linked models with `beta = 1e-8`: value inference against the
/// closed-form softmax attention.
pub fn standard_limit(models: usize) -> CheckResult {
    let name = "standard_limit";
    let cfg = EmConfig::default();
    let (mut dv, mut drow, mut dstep) = (0.0f64, 0.0f64, 0.0f64);
    for seed in 0..models as u64 {
        let mut r = rng(20_000 + seed);
        let (n, d, m) = dims(&mut r, 8, 4, 4);
        let alpha = r.random_range(0.5..2.0);
        let xi: Vec<Vec<f64>> = (0..n).map(|_| random_vec(&mut r, d, 1.0)).collect();
        let mu: Vec<Vec<f64>> = (0..n).map(|_| random_vec(&mut r, m, 0.1)).collect();
        let p = tri!(name, models, tie_and_link(xi, mu, alpha, 1e-8));
        let q = random_vec(&mut r, d, 1.0);
        let (sv, srow) = tri!(name, models, standard_attention(&p, &q));
        for i in 0..n {
            let inf = tri!(name, models, infer_value(&p, i, &q, None, &cfg));
            dv = dv.max(max_abs_diff(&inf.value, &sv));
            let row = tri!(name, models, responsibilities(&p, i, &q, &inf.value));
            drow = drow.max(max_abs_diff(&row, &srow));
            let v1 = &inf.trace.iterates[1].value;
            let (v2, _) = tri!(name, models, em_step(&p, i, &q, v1, WeightMode::Derived));
            dstep = dstep.max(max_abs_diff(v1, &v2));
        }
    }
    let worst = (dv / 1e-6).max(drow / 1e-6).max(dstep / 1e-9);
    CheckResult::bound(
        name,
        models,
        worst,
        1.0,
        format!("value {dv:e} (tol 1e-6), row {drow:e} (tol 1e-6), second step {dstep:e} (tol 1e-9); worst is the largest ratio to tolerance"),
    )
}

fn random_permutation<R: Rng>(r: &mut R, n: usize) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    for k in (1..n).rev() {
        let j = r.random_range(0..=k);
        p.swap(k, j);
    }
    p
}

/// Identical attention rows across units under tie-and-link, and bitwise
/// permutation of batch outputs when units and queries are permuted.
pub fn permutation_equivariance(models: usize) -> CheckResult {
    let name = "permutation_equivariance";
    let cfg = EmConfig::default();
    let mut row_spread = 0.0f64;
    let mut mismatches = 0usize;
    for seed in 0..models as u64 {
        let mut r = rng(30_000 + seed);
        let (n, d, m) = dims(&mut r, 8, 4, 4);
        let xi: Vec<Vec<f64>> = (0..n).map(|_| random_vec(&mut r, d, 1.0)).collect();
        let mu: Vec<Vec<f64>> = (0..n).map(|_| random_vec(&mut r, m, 1.0)).collect();
        let alpha = r.random_range(0.5..2.0);
        let beta = r.random_range(0.5..2.0);
        let tied = tri!(name, models, tie_and_link(xi, mu, alpha, beta));
        let q = random_vec(&mut r, d, 1.0);
        let v = random_vec(&mut r, m, 1.0);
        let first = tri!(name, models, responsibilities(&tied, 0, &q, &v));
        for i in 1..n {
            let row = tri!(name, models, responsibilities(&tied, i, &q, &v));
            row_spread = row_spread.max(max_abs_diff(&row, &first));
        }
        let general = random_model(&mut r, n, d, m);
        for p in [&tied, &general] {
            let queries: Vec<Vec<f64>> = (0..n).map(|_| random_vec(&mut r, d, 1.0)).collect();
            let perm = random_permutation(&mut r, n);
            let pp = tri!(name, models, p.permuted(&perm));
            let pq: Vec<Vec<f64>> = perm.iter().map(|&a| queries[a].clone()).collect();
            let base = tri!(name, models, batch_infer(p, &queries, &cfg));
            let moved = tri!(name, models, batch_infer(&pp, &pq, &cfg));
            for (a, &src) in perm.iter().enumerate() {
                let same = match (&moved[a], &base[src]) {
                    (Ok(x), Ok(y)) => same_trace_permuted(&x.trace, &y.trace, &perm),
                    _ => false,
                };
                mismatches += !same as usize;
            }
        }
    }
    let mut res = CheckResult::bound(
        name,
        models,
        row_spread,
        1e-12,
        format!("row spread {row_spread:e}, {mismatches} permuted outputs differ"),
    );
    res.passed &= mismatches == 0;
    res
}

/// `moved` is the trace of the permuted problem; its attention columns are
/// relabelled by `perm`.
fn same_trace_permuted(moved: &InferenceTrace, base: &InferenceTrace, perm: &[usize]) -> bool {
    moved.converged == base.converged
        && moved.iterations_used == base.iterations_used
        && moved.iterates.len() == base.iterates.len()
        && moved.iterates.iter().zip(&base.iterates).all(|(x, y)| {
            let rows = match (&x.attention, &y.attention) {
                (None, None) => true,
                (Some(rx), Some(ry)) => perm
                    .iter()
                    .enumerate()
                    .all(|(a, &src)| rx[a].to_bits() == ry[src].to_bits()),
                _ => false,
            };
            bits(&x.value) == bits(&y.value) && x.log_density.to_bits() == y.log_density.to_bits() && rows
        })
}

fn bits(v: &[f64]) -> Vec<u64> {
    v.iter().map(|x| x.to_bits()).collect()
}

/// `m = 1`, `n <= 4`: converged values against a 4001-point grid spanning
/// the mean range widened by three standard deviations, plus a
/// finite-difference gradient at the converged value.
pub fn oracle_agreement(models: usize) -> CheckResult {
    let name = "oracle_agreement";
    let cfg = EmConfig::default();
    let (mut worst_cells, mut worst_grad) = (0.0f64, 0.0f64);
    let mut unconverged = 0;
    for seed in 0..models as u64 {
        let mut r = rng(40_000 + seed);
        let n = r.random_range(1..=4);
        let d = r.random_range(1..=3);
        let p = random_model(&mut r, n, d, 1);
        let i = r.random_range(0..n);
        let q = random_vec(&mut r, d, 1.0);
        let inf = tri!(name, models, infer_value(&p, i, &q, None, &cfg));
        unconverged += !inf.trace.converged as usize;
        let sigma = 3.0 / p.beta().iter().cloned().fold(f64::INFINITY, f64::min).sqrt();
        let lo = p.mu().iter().map(|u| u[0]).fold(f64::INFINITY, f64::min) - sigma;
        let hi = p.mu().iter().map(|u| u[0]).fold(f64::NEG_INFINITY, f64::max) + sigma;
        let grid = tri!(name, models, Grid1D::new(lo, hi, 4001));
        let maxima = tri!(name, models, grid_local_maxima(&p, i, &q, &grid));
        let v = inf.value[0];
        let dist = maxima.iter().map(|x| (x - v).abs()).fold(f64::INFINITY, f64::min);
        worst_cells = worst_cells.max(dist / grid.cell());
        let g = tri!(
            name,
            models,
            finite_diff_grad(
                |x| conditional_log_density(&p, i, &q, x).unwrap_or(f64::NAN),
                &inf.value,
                1e-5
            )
        );
        worst_grad = worst_grad.max(g[0].abs());
    }
    let worst = worst_cells.max(worst_grad / 1e-4);
    let mut res = CheckResult::bound(
        name,
        models,
        worst,
        1.0,
        format!("grid distance {worst_cells:.3} cells (tol 1), gradient {worst_grad:e} (tol 1e-4), {unconverged} unconverged"),
    );
    res.passed &= unconverged == 0;
    res
}

fn log_uniform<R: Rng>(r: &mut R, lo: f64, hi: f64) -> f64 {
    (r.random_range(lo.ln()..hi.ln())).exp()
}

fn hyper_with(n: usize, theta_xi: f64, theta_mu: f64) -> HyperPriors {
    HyperPriors {
        theta_xi,
        theta_mu,
        ..HyperPriors::weak(n)
    }
}

/// Key update: residual of
/// `theta (xi0_k - xi_k) + alpha_k sum_i w_ik (q_i - xi_k) = 0`, and central
/// differences of the penalized complete-data objective at the update.
pub fn key_update_stationarity(seeds: usize) -> CheckResult {
    let name = "key_update_stationarity";
    let (mut resid, mut grad) = (0.0f64, 0.0f64);
    for seed in 0..seeds as u64 {
        let mut r = rng(50_000 + seed);
        let (n, d, m) = dims(&mut r, 8, 4, 4);
        let p = random_model(&mut r, n, d, m);
        let queries: Vec<Vec<f64>> = (0..n).map(|_| random_vec(&mut r, d, 1.0)).collect();
        let anchors: Vec<Vec<f64>> = (0..n).map(|_| random_vec(&mut r, d, 1.0)).collect();
        let hyper = hyper_with(n, log_uniform(&mut r, 0.01, 10.0), 1.0);
        let w = tri!(name, seeds, key_responsibilities(&p, &queries));
        let xi = tri!(name, seeds, update_keys(&p, &anchors, &queries, &w, &hyper));
        for k in 0..n {
            let a = p.alpha()[k];
            for c in 0..d {
                let mut g = hyper.theta_xi * (anchors[k][c] - xi[k][c]);
                for (i, q) in queries.iter().enumerate() {
                    g += a * w.0[i][k] * (q[c] - xi[k][c]);
                }
                resid = resid.max(g.abs());
            }
            let surrogate = |x: &[f64]| {
                let mut s = -0.5 * hyper.theta_xi * sq_dist(x, &anchors[k]);
                for (i, q) in queries.iter().enumerate() {
                    s -= 0.5 * a * w.0[i][k] * sq_dist(q, x);
                }
                s
            };
            let fd = tri!(name, seeds, finite_diff_grad(surrogate, &xi[k], 1e-5));
            grad = grad.max(fd.iter().fold(0.0, |acc, x| acc.max(x.abs())));
        }
    }
    let worst = (resid / 1e-9).max(grad / 1e-5);
    CheckResult::bound(
        name,
        seeds,
        worst,
        1.0,
        format!("substitution residual {resid:e} (tol 1e-9), finite-difference gradient {grad:e} (tol 1e-5)"),
    )
}

fn random_corrections<R: Rng>(r: &mut R, p: &ModelParams) -> CorrectionSet {
    let n = p.n();
    let queries: Vec<Vec<f64>> = (0..n).map(|_| random_vec(r, p.d(), 1.0)).collect();
    let s = r.random_range(1..=n);
    let units = &random_permutation(r, n)[..s];
    let corrected = units
        .iter()
        .map(|&unit| Correction {
            unit,
            value: random_vec(r, p.m(), 1.0),
        })
        .collect();
    CorrectionSet::new(queries, corrected)
}

/// Mean update: residual of
/// `theta (mu0_k - mu_k) + beta_k sum_i w_ik (v_i - mu_k) = 0`, and central
/// differences of the penalized complete-data objective at the update.
pub fn mean_update_stationarity(seeds: usize) -> CheckResult {
    let name = "mean_update_stationarity";
    let (mut resid, mut grad) = (0.0f64, 0.0f64);
    for seed in 0..seeds as u64 {
        let mut r = rng(60_000 + seed);
        let (n, d, m) = dims(&mut r, 8, 4, 4);
        let p = random_model(&mut r, n, d, m);
        let cs = random_corrections(&mut r, &p);
        let anchors: Vec<Vec<f64>> = (0..n).map(|_| random_vec(&mut r, m, 1.0)).collect();
        let hyper = hyper_with(n, 1.0, log_uniform(&mut r, 0.01, 10.0));
        let w = tri!(name, seeds, bp_responsibilities(&p, &cs));
        let mu = tri!(name, seeds, update_mu(&p, &anchors, &cs, &w, &hyper));
        for k in 0..n {
            let b = p.beta()[k];
            for c in 0..m {
                let mut g = hyper.theta_mu * (anchors[k][c] - mu[k][c]);
                for (row, corr) in w.0.iter().zip(&cs.corrected) {
                    g += b * row[k] * (corr.value[c] - mu[k][c]);
                }
                resid = resid.max(g.abs());
            }
            let surrogate = |x: &[f64]| {
                let mut s = -0.5 * hyper.theta_mu * sq_dist(x, &anchors[k]);
                for (row, corr) in w.0.iter().zip(&cs.corrected) {
                    s -= 0.5 * b * row[k] * sq_dist(&corr.value, x);
                }
                s
            };
            let fd = tri!(name, seeds, finite_diff_grad(surrogate, &mu[k], 1e-5));
            grad = grad.max(fd.iter().fold(0.0, |acc, x| acc.max(x.abs())));
        }
    }
    let worst = (resid / 1e-9).max(grad / 1e-5);
    CheckResult::bound(
        name,
        seeds,
        worst,
        1.0,
        format!("substitution residual {resid:e} (tol 1e-9), finite-difference gradient {grad:e} (tol 1e-5)"),
    )
}

fn sup_rows(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter().zip(b).map(|(x, y)| max_abs_diff(x, y)).fold(0.0, f64::max)
}

/// Prior dominance (concentrations of 1e12 freeze each block within 1e-9)
/// and data dominance (zero-strength priors return the data exactly).
pub fn dominance(seeds: usize) -> CheckResult {
    let name = "dominance";
    const BIG: f64 = 1e12;
    let mut drift = 0.0f64;
    let mut inexact = Vec::new();
    for seed in 0..seeds as u64 {
        let mut r = rng(70_000 + seed);
        let (n, d, m) = dims(&mut r, 8, 4, 4);
        let base = random_model(&mut r, n, d, m);
        let a0 = r.random_range(0.5..2.0);
        let b0 = r.random_range(0.5..2.0);
        let p = tri!(
            name,
            seeds,
            ModelParams::new(
                base.pi().to_vec(),
                base.xi().to_vec(),
                base.mu().to_vec(),
                vec![a0; n],
                vec![b0; n],
            )
        );
        let queries: Vec<Vec<f64>> = (0..n).map(|_| random_vec(&mut r, d, 1.0)).collect();
        let cs = random_corrections(&mut r, &p);
        let frozen = HyperPriors {
            theta_xi: BIG,
            theta_alpha1: 1.0 + BIG * a0,
            theta_alpha2: BIG,
            theta_mu: BIG,
            theta_beta1: 1.0 + BIG * b0,
            theta_beta2: BIG,
            theta_pi: HyperPriors::dirichlet_centered(p.pi(), BIG),
        };

        let cfg = AdaptConfig {
            iters: 3,
            hyper: frozen.clone(),
            adapt_alpha: true,
        };
        let ad = tri!(name, seeds, adapt(&p, &queries, &cfg));
        drift = drift.max(sup_rows(ad.params.xi(), p.xi()));
        drift = drift.max(max_abs_diff(ad.params.alpha(), p.alpha()));

        let prop = tri!(name, seeds, propagate(&p, &cs, &frozen, &BpConfig::default()));
        drift = drift.max(sup_rows(prop.params.mu(), p.mu()));
        drift = drift.max(max_abs_diff(prop.params.beta(), p.beta()));
        drift = drift.max(sup_rows(prop.params.pi(), p.pi()));
        let plain = tri!(name, seeds, batch_infer(&p, &cs.queries, &EmConfig::default()));
        let corrected: Vec<usize> = cs.corrected.iter().map(|c| c.unit).collect();
        for (i, out) in plain.iter().enumerate() {
            if corrected.contains(&i) {
                continue;
            }
            let out = tri!(name, seeds, out.as_ref().map_err(Clone::clone));
            drift = drift.max(max_abs_diff(&prop.values[i], &out.value));
        }

        let one = tri!(
            name,
            seeds,
            ModelParams::new(
                vec![vec![1.0]],
                vec![random_vec(&mut r, d, 1.0)],
                vec![random_vec(&mut r, m, 1.0)],
                vec![a0],
                vec![b0],
            )
        );
        let q = vec![random_vec(&mut r, d, 1.0)];
        let open = hyper_with(1, 0.0, 0.0);
        let w = tri!(name, seeds, key_responsibilities(&one, &q));
        let xi = tri!(name, seeds, update_keys(&one, one.xi(), &q, &w, &open));
        if bits(&xi[0]) != bits(&q[0]) {
            inexact.push(format!("seed {seed}: key update is not the query mean"));
        }
        let v = random_vec(&mut r, m, 1.0);
        let cs1 = CorrectionSet::new(q.clone(), vec![Correction { unit: 0, value: v.clone() }]);
        let w = tri!(name, seeds, bp_responsibilities(&one, &cs1));
        let mu = tri!(name, seeds, update_mu(&one, one.mu(), &cs1, &w, &open));
        if bits(&mu[0]) != bits(&v) {
            inexact.push(format!("seed {seed}: mean update is not the value mean"));
        }

        let flat = HyperPriors::weak(n);
        let w = tri!(name, seeds, bp_responsibilities(&p, &cs));
        let (pi, warn) = tri!(name, seeds, update_pi(&p, &cs, &w, &flat));
        for (row, c) in w.0.iter().zip(&cs.corrected) {
            if bits(&pi[c.unit]) != bits(row) || !warn.is_empty() {
                inexact.push(format!("seed {seed}: prior row {} is not the responsibility row", c.unit));
            }
        }
    }
    let mut res = CheckResult::bound(
        name,
        seeds,
        drift,
        1e-9,
        if inexact.is_empty() {
            format!("frozen-block drift {drift:e}; data dominance exact")
        } else {
            format!("frozen-block drift {drift:e}; {}", inexact.join("; "))
        },
    );
    res.passed &= inexact.is_empty();
    res
}

/// Label errors on uncorrected units of synthetic scenes (`n = 100`, four
/// clusters, noise 0.3) with and without propagation. Passes when
/// propagation is strictly better in at least `min_win_rate` of the scenes.
pub fn bp_utility(scenes: usize, min_win_rate: f64) -> CheckResult {
    let name = "bp_utility";
    let cfg = EmConfig::default();
    let mut wins = 0;
    let (mut before_total, mut after_total) = (0, 0);
    for seed in 0..scenes as u64 {
        let spec = SynthSpec {
            seed,
            n: 100,
            clusters: 4,
            noise: 0.3,
        };
        let scene = tri!(name, scenes, synth_scene(&spec));
        let cs = &scene.corrections;
        let plain = tri!(name, scenes, batch_infer(&scene.params, &cs.queries, &cfg));
        let plain = tri!(
            name,
            scenes,
            plain
                .into_iter()
                .map(|r| r.map(|inf| inf.value))
                .collect::<crate::Result<Vec<_>>>()
        );
        let prop = tri!(
            name,
            scenes,
            propagate(&scene.params, cs, &scene.hyper, &BpConfig::default())
        );
        let open: Vec<usize> = (0..spec.n)
            .filter(|i| cs.corrected.iter().all(|c| c.unit != *i))
            .collect();
        let before = label_errors(&plain, &scene.labels, &scene.prototypes, open.iter().copied());
        let after = label_errors(&prop.values, &scene.labels, &scene.prototypes, open.iter().copied());
        before_total += before;
        after_total += after;
        wins += (after < before) as usize;
    }
    let rate = if scenes == 0 { 1.0 } else { wins as f64 / scenes as f64 };
    CheckResult {
        name: name.into(),
        passed: rate >= min_win_rate,
        cases: scenes,
        worst: 1.0 - rate,
        tolerance: 1.0 - min_win_rate,
        detail: format!(
            "propagation better in {wins}/{scenes} scenes; label errors {before_total} -> {after_total}"
        ),
    }
}

/// Bit-exact model round trip through the text format.
pub fn format_round_trip(models: usize) -> CheckResult {
    let name = "format_round_trip";
    let mut failures = 0;
    for seed in 0..models as u64 {
        let mut r = rng(80_000 + seed);
        let (n, d, m) = dims(&mut r, 8, 4, 4);
        let mut model = LoadedModel::new(random_model(&mut r, n, d, m));
        if seed % 2 == 1 {
            model.hyper = Some(HyperPriors {
                theta_xi: log_uniform(&mut r, 1e-3, 1e3),
                theta_mu: log_uniform(&mut r, 1e-3, 1e3),
                theta_pi: HyperPriors::dirichlet_centered(model.params.pi(), 3.7),
                ..HyperPriors::weak(n)
            });
        }
        let back = tri!(name, models, parse_model(&model_to_text(&model)));
        failures += !same_bits(&model, &back) as usize;
    }
    CheckResult::bound(
        name,
        models,
        failures as f64,
        0.0,
        format!("{failures} models changed on round trip"),
    )
}

/// Bitwise equality of two loaded models, distinguishing `0.0` from `-0.0`.
pub fn same_bits(a: &LoadedModel, b: &LoadedModel) -> bool {
    let rows = |x: &[Vec<f64>], y: &[Vec<f64>]| {
        x.len() == y.len() && x.iter().zip(y).all(|(u, v)| bits(u) == bits(v))
    };
    let (p, q) = (&a.params, &b.params);
    let hyper = match (&a.hyper, &b.hyper) {
        (None, None) => true,
        (Some(h), Some(g)) => {
            bits(&[h.theta_xi, h.theta_alpha1, h.theta_alpha2, h.theta_mu, h.theta_beta1, h.theta_beta2])
                == bits(&[g.theta_xi, g.theta_alpha1, g.theta_alpha2, g.theta_mu, g.theta_beta1, g.theta_beta2])
                && rows(&h.theta_pi, &g.theta_pi)
        }
        _ => false,
    };
    let protos = match (&a.prototypes, &b.prototypes) {
        (None, None) => true,
        (Some(x), Some(y)) => rows(x, y),
        _ => false,
    };
    rows(p.pi(), q.pi())
        && rows(p.xi(), q.xi())
        && rows(p.mu(), q.mu())
        && bits(p.alpha()) == bits(q.alpha())
        && bits(p.beta()) == bits(q.beta())
        && hyper
        && protos
}
