//! Brute-force and finite-difference references, plus seeded generators for
//! random models and synthetic annotation scenes.
//!
//! Everything here is deliberately naive. The grid search and the literal
//! mixture sum share no code path with the EM loop or the log-space
//! evaluation they are used to check.

use std::f64::consts::{PI, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::bp::{Correction, CorrectionSet};
use crate::error::{Error, Result};
use crate::model::{joint_log_density, HyperPriors, ModelParams};

/// Seeded generator used by every randomized fixture.
pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid1D {
    pub lo: f64,
    pub hi: f64,
    pub steps: usize,
}

impl Grid1D {
    pub fn new(lo: f64, hi: f64, steps: usize) -> Result<Self> {
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::invalid("grid", format!("need lo < hi, got [{lo}, {hi}]")));
        }
        if steps < 2 {
            return Err(Error::invalid("grid.steps", "need at least 2 points"));
        }
        Ok(Self { lo, hi, steps })
    }

    pub fn cell(&self) -> f64 {
        (self.hi - self.lo) / (self.steps - 1) as f64
    }

    pub fn point(&self, k: usize) -> f64 {
        self.lo + k as f64 * self.cell()
    }
}

/// Exhaustive argmax of `log p_i(v | q)` over a product grid (`m <= 2`).
/// Ties go to the smallest lexicographic grid index.
pub fn grid_search_map(
    params: &ModelParams,
    i: usize,
    q: &[f64],
    grids: &[Grid1D],
) -> Result<Vec<f64>> {
    let m = params.m();
    if m > 2 {
        return Err(Error::Unsupported(format!("grid search over m = {m} dimensions")));
    }
    if grids.len() != m {
        return Err(Error::dim("grids", m, grids.len()));
    }
    let mut best = f64::NEG_INFINITY;
    let mut arg = Vec::new();
    let outer = grids[0].steps;
    let inner = grids.get(1).map_or(1, |g| g.steps);
    for a in 0..outer {
        for b in 0..inner {
            let v: Vec<f64> = if m == 1 {
                vec![grids[0].point(a)]
            } else {
                vec![grids[0].point(a), grids[1].point(b)]
            };
            let l = joint_log_density(params, i, q, &v)?;
            if l > best {
                best = l;
                arg = v;
            }
        }
    }
    Ok(arg)
}

/// Grid points of a one-dimensional value space that are no lower than their
/// neighbours.
pub fn grid_local_maxima(
    params: &ModelParams,
    i: usize,
    q: &[f64],
    grid: &Grid1D,
) -> Result<Vec<f64>> {
    if params.m() != 1 {
        return Err(Error::Unsupported("local maxima need m = 1".into()));
    }
    let dens = (0..grid.steps)
        .map(|k| joint_log_density(params, i, q, &[grid.point(k)]))
        .collect::<Result<Vec<_>>>()?;
    Ok((0..grid.steps)
        .filter(|&k| {
            let left = k == 0 || dens[k] >= dens[k - 1];
            let right = k + 1 == grid.steps || dens[k] >= dens[k + 1];
            left && right
        })
        .map(|k| grid.point(k))
        .collect())
}

/// Central-difference gradient of `f` at `x` with step `h`.
pub fn finite_diff_grad<F>(f: F, x: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> f64,
{
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|c| {
            probe[c] = x[c] + h;
            let up = f(&probe);
            probe[c] = x[c] - h;
            let down = f(&probe);
            probe[c] = x[c];
            if !(up.is_finite() && down.is_finite()) {
                return Err(Error::NonFiniteEvaluation { coordinate: c });
            }
            Ok((up - down) / (2.0 * h))
        })
        .collect()
}

/// Literal mixture density `sum_j pi_ij / z_j * exp(...) * exp(...)` with no
/// log-space protection. Underflows to zero for distant observations.
pub fn naive_mixture_eval(params: &ModelParams, i: usize, q: &[f64], v: &[f64]) -> f64 {
    let (d, m) = (params.d() as f64, params.m() as f64);
    let mut total = 0.0;
    for j in 0..params.n() {
        let a = params.alpha()[j];
        let b = params.beta()[j];
        let mut dq = 0.0;
        for (x, y) in q.iter().zip(&params.xi()[j]) {
            dq += (x - y) * (x - y);
        }
        let mut dv = 0.0;
        for (x, y) in v.iter().zip(&params.mu()[j]) {
            dv += (x - y) * (x - y);
        }
        let z = (2.0 * PI / a).powf(d / 2.0) * (2.0 * PI / b).powf(m / 2.0);
        total += params.pi()[i][j] / z * (-a / 2.0 * dq).exp() * (-b / 2.0 * dv).exp();
    }
    total
}

fn normal_vec<R: Rng>(rng: &mut R, len: usize, scale: f64) -> Vec<f64> {
    (0..len)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            scale * z
        })
        .collect::<Vec<f64>>()
}

fn log_uniform<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    (lo.ln() + rng.random::<f64>() * (hi.ln() - lo.ln())).exp()
}

/// Random valid model: Gaussian keys and values, log-uniform precisions in
/// `[0.5, 2]` and prior rows from normalized log-normal draws.
pub fn random_model<R: Rng>(rng: &mut R, n: usize, d: usize, m: usize) -> ModelParams {
    let pi = (0..n)
        .map(|_| {
            let raw: Vec<f64> = normal_vec(rng, n, 1.0).into_iter().map(f64::exp).collect();
            let s: f64 = raw.iter().sum();
            raw.into_iter().map(|x| x / s).collect()
        })
        .collect();
    let xi = (0..n).map(|_| normal_vec(rng, d, 1.0)).collect();
    let mu = (0..n).map(|_| normal_vec(rng, m, 1.0)).collect();
    let alpha = (0..n).map(|_| log_uniform(rng, 0.5, 2.0)).collect();
    let beta = (0..n).map(|_| log_uniform(rng, 0.5, 2.0)).collect();
    ModelParams::new(pi, xi, mu, alpha, beta).expect("generator produces valid models")
}

pub fn random_vec<R: Rng>(rng: &mut R, len: usize, scale: f64) -> Vec<f64> {
    normal_vec(rng, len, scale)
}

/// Parameters of a synthetic annotation scene.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub seed: u64,
    pub n: usize,
    pub clusters: usize,
    pub noise: f64,
}

/// A synthetic scene: a pretrained model with one miscalibrated cluster,
/// queries for every unit, one ground-truth correction per cluster, the true
/// labels, and the label prototypes used for nearest-prototype decoding.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub params: ModelParams,
    pub hyper: HyperPriors,
    pub corrections: CorrectionSet,
    pub labels: Vec<usize>,
    pub prototypes: Vec<Vec<f64>>,
    /// Cluster whose expected values were biased toward its neighbour.
    pub corrupted_cluster: usize,
}

/// Radius of the circle carrying the cluster key centers.
pub const SCENE_KEY_RADIUS: f64 = 3.0;
pub const SCENE_ALPHA: f64 = 1.0;
pub const SCENE_BETA: f64 = 4.0;

/// Builds a deterministic synthetic scene.
///
/// * Unit `i` has label `floor(i * C / n)`; keys live in 2-D, values in `C`-D.
/// * Cluster `c` has key center at angle `2 pi c / C` on a circle of radius 3
///   and value prototype `e_c`.
/// * `xi_i = center + noise * N(0, I)`, `q_i = xi_i + noise * N(0, I)`.
/// * `mu_i = e_label + noise * N(0, I)`, except in one seed-chosen cluster `c*`
///   whose means are biased toward the next prototype:
///   `(1 - lam) e_c* + lam e_(c*+1) + noise * N(0, I)` with `lam = min(1, 2 noise)`.
/// * Uniform priors, `alpha = 1`, `beta = 4`.
/// * One correction per cluster at a seed-chosen member, set to its prototype.
pub fn synth_scene(spec: &SynthSpec) -> Result<Scene> {
    let SynthSpec {
        seed,
        n,
        clusters,
        noise,
    } = *spec;
    if clusters < 2 {
        return Err(Error::invalid("clusters", "need at least 2 clusters"));
    }
    if n < clusters {
        return Err(Error::invalid("n", "need at least one unit per cluster"));
    }
    if !(noise.is_finite() && noise >= 0.0) {
        return Err(Error::invalid("noise", "must be finite and >= 0"));
    }
    let mut rng = rng(seed);
    let labels: Vec<usize> = (0..n).map(|i| i * clusters / n).collect();
    let corrupted = rng.random_range(0..clusters);
    let lam = (2.0 * noise).min(1.0);
    let prototypes: Vec<Vec<f64>> = (0..clusters)
        .map(|c| (0..clusters).map(|k| if k == c { 1.0 } else { 0.0 }).collect())
        .collect();
    let centers: Vec<[f64; 2]> = (0..clusters)
        .map(|c| {
            let t = TAU * c as f64 / clusters as f64;
            [SCENE_KEY_RADIUS * t.cos(), SCENE_KEY_RADIUS * t.sin()]
        })
        .collect();
    let mut xi = Vec::with_capacity(n);
    let mut queries = Vec::with_capacity(n);
    let mut mu = Vec::with_capacity(n);
    for &y in &labels {
        let key: Vec<f64> = centers[y]
            .iter()
            .zip(normal_vec(&mut rng, 2, noise))
            .map(|(c, e)| c + e)
            .collect();
        let query: Vec<f64> = key
            .iter()
            .zip(normal_vec(&mut rng, 2, noise))
            .map(|(k, e)| k + e)
            .collect();
        let target: Vec<f64> = if y == corrupted {
            let next = (y + 1) % clusters;
            (0..clusters)
                .map(|k| (1.0 - lam) * prototypes[y][k] + lam * prototypes[next][k])
                .collect()
        } else {
            prototypes[y].clone()
        };
        let value: Vec<f64> = target
            .iter()
            .zip(normal_vec(&mut rng, clusters, noise))
            .map(|(t, e)| t + e)
            .collect();
        xi.push(key);
        queries.push(query);
        mu.push(value);
    }
    let corrected = (0..clusters)
        .map(|c| {
            let members: Vec<usize> = (0..n).filter(|&i| labels[i] == c).collect();
            let unit = members[rng.random_range(0..members.len())];
            Correction {
                unit,
                value: prototypes[c].clone(),
            }
        })
        .collect();
    let pi = vec![vec![1.0 / n as f64; n]; n];
    let params = ModelParams::new(
        pi.clone(),
        xi,
        mu,
        vec![SCENE_ALPHA; n],
        vec![SCENE_BETA; n],
    )?;
    let hyper = HyperPriors {
        theta_xi: 1.0,
        theta_alpha1: 1.0,
        theta_alpha2: 0.0,
        theta_mu: 0.05,
        theta_beta1: 1.0 + 10.0 * SCENE_BETA,
        theta_beta2: 10.0,
        theta_pi: HyperPriors::dirichlet_centered(&pi, n as f64),
    };
    Ok(Scene {
        params,
        hyper,
        corrections: CorrectionSet::new(queries, corrected),
        labels,
        prototypes,
        corrupted_cluster: corrupted,
    })
}

/// Number of units in `units` whose nearest prototype differs from the label.
pub fn label_errors(
    values: &[Vec<f64>],
    labels: &[usize],
    prototypes: &[Vec<f64>],
    units: impl IntoIterator<Item = usize>,
) -> usize {
    units
        .into_iter()
        .filter(|&i| crate::model::nearest_label(&values[i], prototypes) != labels[i])
        .count()
}
