//! Initialisation, optimisation and evaluation of a variational run.

use std::collections::BTreeMap;
use std::time::Instant;

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::decoder::{link, LinkMethod};
use crate::estimators::{
    estimate, log_weights, log_mean_exp, Draw, Estimator, EstimatorOptions, Objective, Surrogate,
};
use crate::geometry::{
    exp_map, lift_spatial, log_map, lorentz_inner, origin, pad0, poincare_project, Covariance,
    DistanceMatrix, GeometryError, Space, TipFamily,
};
use crate::rng::{normals, substream, Purpose};
use crate::seqdata::{pattern_distance_matrix, PatternAlignment};
use crate::tree::{Split, Topology};
use crate::variational::{Lognormal, VariationalState};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid data: {0}")]
    Data(String),
    #[error("embedding dimension {dim} needs at least {needed} taxa")]
    Dimension { dim: usize, needed: usize },
    #[error("training aborted at step {step} after {skipped} consecutive non-finite gradients")]
    Aborted { step: u64, skipped: u64 },
    #[error("parameter and gradient lengths differ ({params} vs {grads})")]
    Shape { params: usize, grads: usize },
}

impl From<GeometryError> for TrainError {
    fn from(e: GeometryError) -> Self {
        TrainError::Config(e.to_string())
    }
}

/// Eigen-decomposition with eigenpairs sorted by decreasing eigenvalue and
/// each eigenvector's largest-magnitude entry made positive.
fn sorted_eigen(m: DMatrix<f64>) -> Vec<(f64, Vec<f64>)> {
    let eig = SymmetricEigen::new(m);
    let mut pairs: Vec<(f64, Vec<f64>)> = (0..eig.eigenvalues.len())
        .map(|i| {
            let mut v: Vec<f64> = eig.eigenvectors.column(i).iter().copied().collect();
            let mut best = 0;
            for (j, x) in v.iter().enumerate() {
                if x.abs() > v[best].abs() + 1e-12 {
                    best = j;
                }
            }
            if v[best] < 0.0 {
                v.iter_mut().for_each(|x| *x = -*x);
            }
            (eig.eigenvalues[i], v)
        })
        .collect();
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    pairs
}

fn check_dim(n: usize, d: usize) -> Result<(), TrainError> {
    if d == 0 || d + 1 > n {
        return Err(TrainError::Dimension { dim: d, needed: d + 1 });
    }
    Ok(())
}

/// Classical multidimensional scaling into `R^d`.
pub fn mds(dist: &DistanceMatrix, d: usize) -> Result<Vec<Vec<f64>>, TrainError> {
    let n = dist.size();
    check_dim(n, d)?;
    let sq = DMatrix::from_fn(n, n, |i, j| dist.get(i, j).powi(2));
    let row_mean: Vec<f64> = (0..n).map(|i| sq.row(i).sum() / n as f64).collect();
    let all_mean = row_mean.iter().sum::<f64>() / n as f64;
    let b = DMatrix::from_fn(n, n, |i, j| -0.5 * (sq[(i, j)] - row_mean[i] - row_mean[j] + all_mean));
    let pairs = sorted_eigen(b);
    Ok((0..n)
        .map(|i| {
            (0..d)
                .map(|a| pairs[a].0.max(0.0).sqrt() * pairs[a].1[i])
                .collect()
        })
        .collect())
}

/// Hyperbolic MDS into the Lorentz model. Uses the signature-(1, d)
/// factorisation of `−cosh(D)`; falls back to lifting the Euclidean
/// embedding through `exp_{μ°}` when that factorisation is unusable.
pub fn hmds(dist: &DistanceMatrix, d: usize) -> Result<Vec<Vec<f64>>, TrainError> {
    let n = dist.size();
    check_dim(n, d)?;
    let m = DMatrix::from_fn(n, n, |i, j| -dist.get(i, j).cosh());
    let pairs = sorted_eigen(m);
    let (neg_val, neg_vec) = pairs.last().cloned().expect("non-empty matrix");
    let usable = neg_val < 0.0 && pairs.iter().all(|p| p.0.is_finite());
    if usable {
        let mut time: Vec<f64> = neg_vec.iter().map(|x| (-neg_val).sqrt() * x).collect();
        if time.iter().sum::<f64>() < 0.0 {
            time.iter_mut().for_each(|x| *x = -*x);
        }
        let points: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let mut x = vec![time[i]];
                x.extend((0..d).map(|a| pairs[a].0.max(0.0).sqrt() * pairs[a].1[i]));
                let q = lorentz_inner(&x, &x);
                if q < 0.0 && x[0] > 0.0 {
                    let s = (-q).sqrt();
                    let mut y: Vec<f64> = x.iter().map(|v| v / s).collect();
                    y[0] = lift_spatial(&y[1..])[0];
                    y
                } else {
                    lift_spatial(&x[1..])
                }
            })
            .collect();
        if points.iter().flatten().all(|v| v.is_finite()) {
            return Ok(points);
        }
    }
    let flat = mds(dist, d)?;
    let o = origin(d);
    Ok(flat.iter().map(|m| exp_map(&o, &pad0(m))).collect())
}

/// Location parameters for each tip: Euclidean MDS coordinates, or the
/// tangent seeds `log_{μ°}` of the hMDS points.
pub fn initial_locations(dist: &DistanceMatrix, space: Space, d: usize) -> Result<Vec<Vec<f64>>, TrainError> {
    match space {
        Space::Euclidean => mds(dist, d),
        Space::Hyperbolic => {
            let o = origin(d);
            Ok(hmds(dist, d)?
                .iter()
                .map(|x| log_map(&o, x)[1..].to_vec())
                .collect())
        }
    }
}

/// Adam in descent form: `x ← x − lr · m̂ / (√v̂ + ε)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(len: usize) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) -> Result<(), TrainError> {
        if params.len() != grads.len() || params.len() != self.m.len() {
            return Err(TrainError::Shape {
                params: params.len(),
                grads: grads.len(),
            });
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grads[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grads[i] * grads[i];
            params[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + self.eps);
        }
        Ok(())
    }
}

/// Adam state for a single split's `(m, logσ)`, advanced only when the split
/// receives a gradient.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
struct AdamPair {
    m: [f64; 2],
    v: [f64; 2],
    t: u64,
}

impl AdamPair {
    fn step(&mut self, p: &mut Lognormal, g: [f64; 2], lr: f64) {
        let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
        self.t += 1;
        let c1 = 1.0 - b1.powi(self.t as i32);
        let c2 = 1.0 - b2.powi(self.t as i32);
        let mut delta = [0.0; 2];
        for i in 0..2 {
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g[i];
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * g[i] * g[i];
            delta[i] = lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + eps);
        }
        p.mean -= delta[0];
        p.log_sigma -= delta[1];
    }
}

/// Settings of a training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub space: Space,
    pub dim: usize,
    pub cov: Covariance,
    pub estimator: Estimator,
    pub k: usize,
    pub link: LinkMethod,
    pub lr: f64,
    pub lr_decay: f64,
    pub lr_decay_every: u64,
    pub anneal_samples: u64,
    pub beta_start: f64,
    pub nle_budget: u64,
    pub seed: u64,
    /// Steps between trace rows.
    pub trace_every: u64,
    /// Keep the pathwise entropy term in LAX estimators.
    pub lax_entropy_path: bool,
    /// Record elapsed milliseconds in the trace (makes traces nondeterministic).
    pub wall_clock: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            space: Space::Euclidean,
            dim: 2,
            cov: Covariance::Diagonal,
            estimator: Estimator::Lax,
            k: 1,
            link: LinkMethod::Nj,
            lr: 0.001,
            lr_decay: 0.75,
            lr_decay_every: 200_000,
            anneal_samples: 100_000,
            beta_start: 0.001,
            nle_budget: 1_000_000,
            seed: 0,
            trace_every: 1000,
            lax_entropy_path: true,
            wall_clock: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<TipFamily, TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        if self.k < self.estimator.min_samples() {
            return bad(format!(
                "estimator {} needs K >= {}, got {}",
                self.estimator,
                self.estimator.min_samples(),
                self.k
            ));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("learning rate must be positive, got {}", self.lr));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad(format!("lr decay must lie in (0, 1], got {}", self.lr_decay));
        }
        if !(self.beta_start > 0.0 && self.beta_start <= 1.0) {
            return bad(format!("initial beta must lie in (0, 1], got {}", self.beta_start));
        }
        if self.lr_decay_every == 0 || self.trace_every == 0 || self.anneal_samples == 0 {
            return bad("schedule intervals must be positive".into());
        }
        if self.nle_budget < self.k as u64 {
            return bad(format!("NLE budget {} is below K = {}", self.nle_budget, self.k));
        }
        Ok(TipFamily::new(self.space, self.cov, self.dim)?)
    }

    /// Inverse temperature after `nle` likelihood evaluations.
    pub fn beta_at(&self, nle: u64) -> f64 {
        (self.beta_start + (1.0 - self.beta_start) * nle as f64 / self.anneal_samples as f64).min(1.0)
    }

    /// Learning rate at `step`.
    pub fn lr_at(&self, step: u64) -> f64 {
        self.lr * self.lr_decay.powi((step / self.lr_decay_every) as i32)
    }

    pub fn total_steps(&self) -> u64 {
        self.nle_budget / self.k as u64
    }
}

/// One row of the run trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: u64,
    pub nle: u64,
    pub elbo: f64,
    pub beta: f64,
    pub lr: f64,
    pub wall_ms: u64,
}

pub const TRACE_HEADER: &str = "step,nle,elbo,beta,lr,wall_ms";

impl TraceRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.step, self.nle, self.elbo, self.beta, self.lr, self.wall_ms
        )
    }
}

/// Result of [`train`].
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub state: VariationalState,
    pub family: TipFamily,
    pub trace: Vec<TraceRow>,
    pub steps: u64,
    pub nle: u64,
    pub skipped_steps: u64,
}

/// Builds the initial state from pattern-based Hamming distances.
pub fn initial_state(cfg: &TrainConfig, data: &PatternAlignment) -> Result<VariationalState, TrainError> {
    let family = cfg.validate()?;
    let dist = pattern_distance_matrix(data).map_err(|e| TrainError::Data(e.to_string()))?;
    let locs = initial_locations(&dist, cfg.space, cfg.dim)?;
    let mut state = VariationalState::initial(family, &locs);
    if cfg.estimator.uses_surrogate() {
        let mut rng = substream(cfg.seed, Purpose::Init, 0, 0);
        state.surrogate = Some(Surrogate::for_problem(data.taxon_count(), cfg.dim, &mut rng));
    }
    Ok(state)
}

/// Runs stochastic gradient ascent until the NLE budget is spent.
pub fn train(cfg: &TrainConfig, data: &PatternAlignment) -> Result<TrainOutcome, TrainError> {
    train_with(cfg, data, |_| {})
}

/// [`train`] with a callback invoked on every trace row.
pub fn train_with(
    cfg: &TrainConfig,
    data: &PatternAlignment,
    mut on_row: impl FnMut(&TraceRow),
) -> Result<TrainOutcome, TrainError> {
    let family = cfg.validate()?;
    let mut state = initial_state(cfg, data)?;
    let n = data.taxon_count();
    let options = EstimatorOptions {
        lax_entropy_path: cfg.lax_entropy_path,
    };
    let mut adam_theta = Adam::new(state.theta.values().len());
    let mut adam_psi = Adam::new(state.psi.values().len());
    let mut adam_chi = state.surrogate.as_ref().map(|s| Adam::new(s.params().len()));
    let mut adam_phi: BTreeMap<Split, AdamPair> = BTreeMap::new();
    let started = Instant::now();
    let total = cfg.total_steps();
    let k = cfg.k as u64;
    let mut trace = Vec::new();
    let mut skipped = 0u64;
    let mut consecutive = 0u64;

    for step in 0..total {
        let nle = step * k;
        let beta = cfg.beta_at(nle);
        let lr = cfg.lr_at(step);
        let obj = Objective {
            data,
            family,
            link: cfg.link,
            beta,
        };
        let draws = Draw::batch(cfg.seed, step, cfg.k, n, cfg.dim);
        let est = estimate(&obj, &state, cfg.estimator, options, &draws);
        if est.is_finite() {
            consecutive = 0;
            let neg = |g: &[f64]| g.iter().map(|x| -x).collect::<Vec<f64>>();
            adam_theta.step(state.theta.values_mut(), &neg(&est.theta), lr)?;
            adam_psi.step(state.psi.values_mut(), &neg(&est.psi), lr)?;
            for (key, g) in &est.phi {
                let entry = state.phi.entry(key.clone());
                adam_phi
                    .entry(key.clone())
                    .or_default()
                    .step(entry, [-g[0], -g[1]], lr);
            }
            if let (Some(chi), Some(sur), Some(opt)) = (&est.chi, state.surrogate.as_mut(), adam_chi.as_mut()) {
                // The surrogate minimises the estimator variance.
                opt.step(sur.params_mut(), chi, lr)?;
            }
        } else {
            skipped += 1;
            consecutive += 1;
            if consecutive >= 100 {
                return Err(TrainError::Aborted {
                    step,
                    skipped: consecutive,
                });
            }
        }
        let done = step + 1;
        if done % cfg.trace_every == 0 || done == total {
            let row = TraceRow {
                step: done,
                nle: done * k,
                elbo: est.elbo,
                beta,
                lr,
                wall_ms: if cfg.wall_clock {
                    started.elapsed().as_millis() as u64
                } else {
                    0
                },
            };
            on_row(&row);
            trace.push(row);
        }
    }
    Ok(TrainOutcome {
        state,
        family,
        trace,
        steps: total,
        nle: total * k,
        skipped_steps: skipped,
    })
}

/// Mean and standard deviation of repeated IW-ELBO estimates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MllReport {
    pub samples: usize,
    pub values: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

/// IW-ELBO with `k` samples at `β = 1`, repeated `reps` times.
pub fn estimate_mll(
    data: &PatternAlignment,
    family: TipFamily,
    link_method: LinkMethod,
    state: &VariationalState,
    k: usize,
    reps: usize,
    seed: u64,
) -> MllReport {
    let obj = Objective {
        data,
        family,
        link: link_method,
        beta: 1.0,
    };
    let n = data.taxon_count();
    let values: Vec<f64> = (0..reps as u64)
        .map(|r| {
            let draws: Vec<Draw> = (0..k as u64)
                .map(|i| {
                    let eps_z = normals(&mut substream(seed, Purpose::Marginal, 2 * r, i), n * family.dim);
                    let eps_b = normals(&mut substream(seed, Purpose::Marginal, 2 * r + 1, i), 2 * n - 3);
                    Draw { eps_z, eps_b }
                })
                .collect();
            log_mean_exp(&log_weights(&obj, state, &draws))
        })
        .collect();
    let mean = values.iter().sum::<f64>() / values.len().max(1) as f64;
    let std = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (values.len() - 1) as f64).sqrt()
    } else {
        0.0
    };
    MllReport {
        samples: k,
        values,
        mean,
        std,
    }
}

/// Topologies decoded from `count` draws of `Q_θ(z)`.
pub fn sample_topologies(
    state: &VariationalState,
    link_method: LinkMethod,
    count: usize,
    seed: u64,
) -> Vec<Topology> {
    let family = state.theta.family();
    let n = state.theta.tip_count();
    (0..count as u64)
        .into_par_iter()
        .map(|i| {
            let eps = normals(&mut substream(seed, Purpose::Sampling, 0, i), n * family.dim);
            link(&state.theta.sample(&eps), family.space, link_method)
        })
        .collect()
}

/// Location of each tip for plotting: Euclidean coordinates or the
/// Poincaré-ball projection.
pub fn plot_coordinates(state: &VariationalState) -> Vec<Vec<f64>> {
    let family = state.theta.family();
    state
        .theta
        .locations()
        .iter()
        .map(|x| match family.space {
            Space::Euclidean => x.clone(),
            Space::Hyperbolic => poincare_project(x),
        })
        .collect()
}
