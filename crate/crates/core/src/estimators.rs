//! Lower bounds and gradient estimators.
//!
//! A training step draws `K` samples, evaluates each one independently
//! ([`evaluate`]) and then combines them ([`combine`]). Keeping the two
//! phases separate lets several estimators share common random numbers.

use std::collections::BTreeMap;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decoder::{link, LinkMethod};
use crate::geometry::TipFamily;
use crate::likelihood::{ln_topology_count, log_likelihood_and_gradient, PRIOR_RATE};
use crate::rng::{normals, substream, Purpose};
use crate::seqdata::PatternAlignment;
use crate::tree::{BranchLengths, Split, Topology};
use crate::variational::{branch_param_grad, VariationalState};

/// Gradient estimator for `θ`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    Plain,
    Loo,
    #[default]
    Lax,
    LooLax,
    Iw,
    Vimco,
}

impl Estimator {
    pub const ALL: [Estimator; 6] = [
        Estimator::Plain,
        Estimator::Loo,
        Estimator::Lax,
        Estimator::LooLax,
        Estimator::Iw,
        Estimator::Vimco,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Estimator::Plain => "plain",
            Estimator::Loo => "loo",
            Estimator::Lax => "lax",
            Estimator::LooLax => "loo_lax",
            Estimator::Iw => "iw",
            Estimator::Vimco => "vimco",
        }
    }

    /// Smallest admissible `K`.
    pub fn min_samples(self) -> usize {
        match self {
            Estimator::Loo | Estimator::LooLax | Estimator::Vimco => 2,
            _ => 1,
        }
    }

    pub fn uses_surrogate(self) -> bool {
        matches!(self, Estimator::Lax | Estimator::LooLax)
    }

    pub fn is_importance_weighted(self) -> bool {
        matches!(self, Estimator::Iw | Estimator::Vimco)
    }
}

impl FromStr for Estimator {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Estimator::ALL
            .into_iter()
            .find(|e| e.name() == s || (s == "loo+lax" && *e == Estimator::LooLax))
            .ok_or_else(|| format!("unknown estimator {s:?}"))
    }
}

impl std::fmt::Display for Estimator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[inline]
fn sigmoid(h: f64) -> f64 {
    1.0 / (1.0 + (-h).exp())
}

/// `(silu, silu', silu'')` at `h`.
#[inline]
fn silu3(h: f64) -> (f64, f64, f64) {
    let s = sigmoid(h);
    let d1 = s * (1.0 + h * (1.0 - s));
    let d2 = s * (1.0 - s) * (2.0 + h * (1.0 - 2.0 * s));
    (h * s, d1, d2)
}

/// One-hidden-layer SiLU perceptron `s_χ(x) = w₂·silu(W₁x + b₁) + b₂`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Surrogate {
    input: usize,
    hidden: usize,
    params: Vec<f64>,
}

impl Surrogate {
    /// Hidden weights and biases uniform in `±1/√input`, output layer zero.
    pub fn new<R: Rng + ?Sized>(input: usize, hidden: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (input as f64).sqrt();
        let mut params = Vec::with_capacity(hidden * input + 2 * hidden + 1);
        for _ in 0..(hidden * input + hidden) {
            params.push(rng.random_range(-bound..bound));
        }
        params.extend(std::iter::repeat_n(0.0, hidden + 1));
        Self {
            input,
            hidden,
            params,
        }
    }

    /// The default architecture for `n` tips in `d` dimensions.
    pub fn for_problem<R: Rng + ?Sized>(n: usize, d: usize, rng: &mut R) -> Self {
        Self::new(n * d, 10 * n * d, rng)
    }

    pub fn input_len(&self) -> usize {
        self.input
    }

    pub fn hidden_len(&self) -> usize {
        self.hidden
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn w1(&self, j: usize) -> &[f64] {
        &self.params[j * self.input..(j + 1) * self.input]
    }

    fn b1(&self) -> &[f64] {
        let o = self.hidden * self.input;
        &self.params[o..o + self.hidden]
    }

    fn w2(&self) -> &[f64] {
        let o = self.hidden * self.input + self.hidden;
        &self.params[o..o + self.hidden]
    }

    fn b2(&self) -> f64 {
        self.params[self.params.len() - 1]
    }

    fn pre_activations(&self, x: &[f64]) -> Vec<f64> {
        let b1 = self.b1();
        (0..self.hidden)
            .map(|j| b1[j] + self.w1(j).iter().zip(x).map(|(w, x)| w * x).sum::<f64>())
            .collect()
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        let h = self.pre_activations(x);
        self.b2() + h.iter().zip(self.w2()).map(|(&h, w)| w * silu3(h).0).sum::<f64>()
    }

    /// `s(x)` and `∇_x s(x)`.
    pub fn value_and_input_grad(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let h = self.pre_activations(x);
        let w2 = self.w2();
        let mut value = self.b2();
        let mut grad = vec![0.0; self.input];
        for j in 0..self.hidden {
            let (a, d1, _) = silu3(h[j]);
            value += w2[j] * a;
            let c = w2[j] * d1;
            for (g, w) in grad.iter_mut().zip(self.w1(j)) {
                *g += c * w;
            }
        }
        (value, grad)
    }

    /// `∇_χ s(x)`.
    pub fn param_grad(&self, x: &[f64]) -> Vec<f64> {
        let h = self.pre_activations(x);
        let w2 = self.w2().to_vec();
        let (hn, inp) = (self.hidden, self.input);
        let mut g = vec![0.0; self.params.len()];
        for j in 0..hn {
            let (a, d1, _) = silu3(h[j]);
            let c = w2[j] * d1;
            for m in 0..inp {
                g[j * inp + m] = c * x[m];
            }
            g[hn * inp + j] = c;
            g[hn * inp + hn + j] = a;
        }
        g[hn * inp + 2 * hn] = 1.0;
        g
    }

    /// `∇_χ (∇_x s(x) · v)`.
    pub fn directional_param_grad(&self, x: &[f64], v: &[f64]) -> Vec<f64> {
        let h = self.pre_activations(x);
        let w2 = self.w2().to_vec();
        let (hn, inp) = (self.hidden, self.input);
        let mut g = vec![0.0; self.params.len()];
        for j in 0..hn {
            let (_, d1, d2) = silu3(h[j]);
            let u: f64 = self.w1(j).iter().zip(v).map(|(w, v)| w * v).sum();
            for m in 0..inp {
                g[j * inp + m] = w2[j] * (d2 * x[m] * u + d1 * v[m]);
            }
            g[hn * inp + j] = w2[j] * d2 * u;
            g[hn * inp + hn + j] = d1 * u;
        }
        g
    }
}

/// The target and link shared by every sample of a step.
#[derive(Clone, Copy, Debug)]
pub struct Objective<'a> {
    pub data: &'a PatternAlignment,
    pub family: TipFamily,
    pub link: LinkMethod,
    /// Inverse temperature applied to the log-likelihood.
    pub beta: f64,
}

/// Standard-normal noise for one sample.
#[derive(Clone, Debug, PartialEq)]
pub struct Draw {
    pub eps_z: Vec<f64>,
    pub eps_b: Vec<f64>,
}

impl Draw {
    /// Noise for sample `k` of `step`, independent of every other `(step, k)`.
    pub fn new(seed: u64, step: u64, k: u64, tips: usize, dim: usize) -> Self {
        let eps_z = normals(&mut substream(seed, Purpose::Coordinates, step, k), tips * dim);
        let eps_b = normals(&mut substream(seed, Purpose::Branches, step, k), 2 * tips - 3);
        Self { eps_z, eps_b }
    }

    /// `K` draws for one step.
    pub fn batch(seed: u64, step: u64, count: usize, tips: usize, dim: usize) -> Vec<Self> {
        (0..count as u64).map(|k| Self::new(seed, step, k, tips, dim)).collect()
    }
}

/// Which optional per-sample quantities to compute.
#[derive(Clone, Copy, Debug, Default)]
pub struct Needs {
    pub score: bool,
    pub path: bool,
    pub jacobian: bool,
    pub branch_grads: bool,
}

impl Needs {
    pub fn all() -> Self {
        Self {
            score: true,
            path: true,
            jacobian: true,
            branch_grads: true,
        }
    }

    pub fn none() -> Self {
        Self::default()
    }

    pub fn for_estimator(e: Estimator) -> Self {
        Self {
            score: true,
            path: !e.is_importance_weighted(),
            jacobian: e.uses_surrogate(),
            branch_grads: true,
        }
    }
}

/// Everything computed for one sample.
#[derive(Clone, Debug)]
pub struct SampleEval {
    pub z: Vec<Vec<f64>>,
    pub topology: Topology,
    pub lengths: Vec<f64>,
    pub log_likelihood: f64,
    pub log_prior: f64,
    pub log_q_branches: f64,
    pub log_r: f64,
    pub log_q_coords: f64,
    /// `β·ln P(Y|B,τ) + ln P(B,τ) − ln Q_φ(B|τ) + ln R_ψ(z)`.
    pub f: f64,
    /// `∇_θ ln Q_θ(z)` at fixed `z`.
    pub score: Vec<f64>,
    /// `∇_θ ln Q_θ(h_θ(ε))`.
    pub path: Vec<f64>,
    /// Flattened surrogate inputs.
    pub features: Vec<f64>,
    /// Per-tip feature Jacobians, each `d × P` row-major.
    pub jacobians: Vec<Vec<f64>>,
    /// `∇_ψ ln R_ψ(z)`.
    pub psi_grad: Vec<f64>,
    /// Per-edge `(∂/∂m, ∂/∂logσ)` of `ln P(Y,B,τ) − ln Q_φ(B)` (with `β`).
    pub phi_grad: Vec<(Split, [f64; 2])>,
}

impl SampleEval {
    /// `ln F′ = f − ln Q_θ(z)`.
    pub fn log_weight(&self) -> f64 {
        self.f - self.log_q_coords
    }
}

/// Evaluates `f` and the per-sample gradient pieces.
pub fn evaluate(obj: &Objective, state: &VariationalState, draw: &Draw, needs: Needs) -> SampleEval {
    let theta = &state.theta;
    let family = obj.family;
    let n = theta.tip_count();
    let (z, features, jacobians) = if needs.jacobian {
        let sj = theta.sample_with_jacobian(&draw.eps_z);
        let features = sj.iter().flat_map(|s| s.features.iter().copied()).collect();
        let z = sj.iter().map(|s| s.point.clone()).collect();
        let jac = sj.into_iter().map(|s| s.jacobian).collect();
        (z, features, jac)
    } else {
        (theta.sample(&draw.eps_z), Vec::new(), Vec::new())
    };
    let topology = link(&z, family.space, obj.link);
    let draw_b = state.phi.sample(&topology, &draw.eps_b);

    let (log_q_coords, score) = if needs.score {
        theta.log_density_and_score(&z)
    } else {
        (theta.log_density(&z), Vec::new())
    };
    let path = if needs.path {
        theta.pathwise_grad(&draw.eps_z)
    } else {
        Vec::new()
    };
    let (log_r, psi_grad) = if needs.score {
        state.psi.log_density_and_score(&z)
    } else {
        (state.psi.log_density(&z), Vec::new())
    };

    let mut eval = SampleEval {
        z,
        topology,
        lengths: draw_b.lengths.clone(),
        log_likelihood: f64::NAN,
        log_prior: f64::NAN,
        log_q_branches: f64::NAN,
        log_r,
        log_q_coords,
        f: f64::NAN,
        score,
        path,
        features,
        jacobians,
        psi_grad,
        phi_grad: Vec::new(),
    };
    let Ok(b) = BranchLengths::new(draw_b.lengths.clone()) else {
        return eval;
    };
    let Ok((ll, ll_grad)) = log_likelihood_and_gradient(obj.data, &eval.topology, &b) else {
        return eval;
    };
    let log_prior = b
        .as_slice()
        .iter()
        .map(|&x| PRIOR_RATE.ln() - PRIOR_RATE * x)
        .sum::<f64>()
        - ln_topology_count(n);
    let log_q_branches: f64 = draw_b
        .params
        .iter()
        .zip(&draw_b.lengths)
        .map(|(p, &x)| p.log_density(x))
        .sum();
    eval.log_likelihood = ll;
    eval.log_prior = log_prior;
    eval.log_q_branches = log_q_branches;
    eval.f = obj.beta * ll + log_prior - log_q_branches + log_r;
    if needs.branch_grads {
        eval.phi_grad = (0..eval.lengths.len())
            .map(|e| {
                let g = obj.beta * ll_grad[e] - PRIOR_RATE;
                let grad = branch_param_grad(draw_b.params[e], draw.eps_b[e], eval.lengths[e], g);
                (draw_b.keys[e].clone(), grad)
            })
            .collect();
    }
    eval
}

/// Evaluates every draw in parallel, preserving order.
pub fn evaluate_batch(obj: &Objective, state: &VariationalState, draws: &[Draw], needs: Needs) -> Vec<SampleEval> {
    draws.par_iter().map(|d| evaluate(obj, state, d, needs)).collect()
}

/// `ln (1/K) Σ exp(x_k)`.
pub fn log_mean_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + (xs.iter().map(|x| (x - m).exp()).sum::<f64>() / xs.len() as f64).ln()
}

/// Self-normalized importance weights `softmax(x)`.
pub fn normalized_weights(xs: &[f64]) -> Vec<f64> {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = xs.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

/// Mean of the other entries.
fn leave_one_out(xs: &[f64], k: usize) -> f64 {
    let total: f64 = xs.iter().sum();
    (total - xs[k]) / (xs.len() - 1) as f64
}

/// VIMCO holdout `ℓ̄_k`: `ln F′_k` replaced by the mean of the other log-weights.
pub fn vimco_holdout(log_w: &[f64], k: usize) -> f64 {
    let mut replaced = log_w.to_vec();
    replaced[k] = leave_one_out(log_w, k);
    log_mean_exp(&replaced)
}

/// Options that modify an estimator.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EstimatorOptions {
    /// Include `−∇_θ ln Q_θ(h_θ(ε))` in LAX; otherwise `−ln Q_θ(z)` moves into
    /// the score weight.
    pub lax_entropy_path: bool,
}

impl Default for EstimatorOptions {
    fn default() -> Self {
        Self {
            lax_entropy_path: true,
        }
    }
}

/// Combined gradients and diagnostics for one step.
#[derive(Clone, Debug, Default)]
pub struct GradEstimate {
    pub theta: Vec<f64>,
    pub psi: Vec<f64>,
    pub phi: BTreeMap<Split, [f64; 2]>,
    pub chi: Option<Vec<f64>>,
    pub f: Vec<f64>,
    pub log_weights: Vec<f64>,
    /// Mean of `ln F′`.
    pub elbo: f64,
    /// `ln mean exp(ln F′)`.
    pub iw_elbo: f64,
}

impl GradEstimate {
    pub fn is_finite(&self) -> bool {
        self.theta.iter().chain(&self.psi).all(|x| x.is_finite())
            && self.phi.values().flatten().all(|x| x.is_finite())
            && self.chi.as_ref().is_none_or(|c| c.iter().all(|x| x.is_finite()))
    }
}

fn axpy(acc: &mut [f64], a: f64, x: &[f64]) {
    for (y, x) in acc.iter_mut().zip(x) {
        *y += a * x;
    }
}

/// `J_kᵀ u` with block-diagonal per-tip Jacobians.
fn jacobian_transpose(s: &SampleEval, u: &[f64], p: usize, d: usize) -> Vec<f64> {
    let mut out = vec![0.0; s.jacobians.len() * p];
    for (i, jac) in s.jacobians.iter().enumerate() {
        for a in 0..d {
            let ua = u[i * d + a];
            for c in 0..p {
                out[i * p + c] += jac[a * p + c] * ua;
            }
        }
    }
    out
}

/// `J_k g`.
fn jacobian_apply(s: &SampleEval, g: &[f64], p: usize, d: usize) -> Vec<f64> {
    let mut out = vec![0.0; s.jacobians.len() * d];
    for (i, jac) in s.jacobians.iter().enumerate() {
        for a in 0..d {
            out[i * d + a] = (0..p).map(|c| jac[a * p + c] * g[i * p + c]).sum();
        }
    }
    out
}

/// The `θ` gradient (and for LAX variants the surrogate gradient) from
/// evaluated samples.
pub fn theta_gradient(
    estimator: Estimator,
    samples: &[SampleEval],
    surrogate: Option<&Surrogate>,
    family: TipFamily,
    options: EstimatorOptions,
) -> (Vec<f64>, Option<Vec<f64>>) {
    let k = samples.len();
    assert!(k >= estimator.min_samples(), "{estimator} needs K >= {}", estimator.min_samples());
    let n_theta = samples[0].score.len();
    let kf = k as f64;
    let f: Vec<f64> = samples.iter().map(|s| s.f).collect();
    let lw: Vec<f64> = samples.iter().map(SampleEval::log_weight).collect();
    let mut g = vec![0.0; n_theta];
    match estimator {
        Estimator::Plain | Estimator::Loo => {
            for (i, s) in samples.iter().enumerate() {
                let c = if estimator == Estimator::Loo {
                    f[i] - leave_one_out(&f, i)
                } else {
                    f[i]
                };
                axpy(&mut g, c / kf, &s.score);
                axpy(&mut g, -1.0 / kf, &s.path);
            }
            (g, None)
        }
        Estimator::Iw | Estimator::Vimco => {
            let w = normalized_weights(&lw);
            let ell = log_mean_exp(&lw);
            for (i, s) in samples.iter().enumerate() {
                let mut c = ell - w[i];
                if estimator == Estimator::Vimco {
                    c -= vimco_holdout(&lw, i);
                }
                axpy(&mut g, c, &s.score);
            }
            (g, None)
        }
        Estimator::Lax | Estimator::LooLax => {
            let sur = surrogate.expect("LAX needs a surrogate");
            let d = family.dim;
            let p = family.param_len();
            let signal: Vec<f64> = if options.lax_entropy_path { f.clone() } else { lw.clone() };
            let mut evals = Vec::with_capacity(k);
            for (i, s) in samples.iter().enumerate() {
                let (sv, sgrad) = sur.value_and_input_grad(&s.features);
                let mut c = signal[i] - sv;
                if estimator == Estimator::LooLax {
                    c -= leave_one_out(&signal, i);
                }
                axpy(&mut g, c / kf, &s.score);
                axpy(&mut g, 1.0 / kf, &jacobian_transpose(s, &sgrad, p, d));
                if options.lax_entropy_path {
                    axpy(&mut g, -1.0 / kf, &s.path);
                }
                evals.push(sgrad);
            }
            let mut chi = vec![0.0; sur.params().len()];
            let scale = 2.0 / (n_theta as f64 * kf);
            for s in samples {
                let gs: f64 = g.iter().zip(&s.score).map(|(a, b)| a * b).sum();
                axpy(&mut chi, -scale * gs, &sur.param_grad(&s.features));
                let v = jacobian_apply(s, &g, p, d);
                axpy(&mut chi, scale, &sur.directional_param_grad(&s.features, &v));
            }
            (g, Some(chi))
        }
    }
}

/// Weights applied to the per-sample `φ` and `ψ` gradients.
fn sample_weights(estimator: Estimator, samples: &[SampleEval]) -> Vec<f64> {
    if estimator.is_importance_weighted() {
        let lw: Vec<f64> = samples.iter().map(SampleEval::log_weight).collect();
        normalized_weights(&lw)
    } else {
        vec![1.0 / samples.len() as f64; samples.len()]
    }
}

/// Full gradient estimate from evaluated samples.
pub fn combine(
    estimator: Estimator,
    samples: &[SampleEval],
    surrogate: Option<&Surrogate>,
    family: TipFamily,
    options: EstimatorOptions,
) -> GradEstimate {
    let (theta, chi) = theta_gradient(estimator, samples, surrogate, family, options);
    let w = sample_weights(estimator, samples);
    let mut psi = vec![0.0; samples[0].psi_grad.len()];
    let mut phi: BTreeMap<Split, [f64; 2]> = BTreeMap::new();
    for (s, &wk) in samples.iter().zip(&w) {
        axpy(&mut psi, wk, &s.psi_grad);
        for (key, g) in &s.phi_grad {
            let acc = phi.entry(key.clone()).or_insert([0.0; 2]);
            acc[0] += wk * g[0];
            acc[1] += wk * g[1];
        }
    }
    let log_weights: Vec<f64> = samples.iter().map(SampleEval::log_weight).collect();
    GradEstimate {
        theta,
        psi,
        phi,
        chi,
        f: samples.iter().map(|s| s.f).collect(),
        elbo: log_weights.iter().sum::<f64>() / log_weights.len() as f64,
        iw_elbo: log_mean_exp(&log_weights),
        log_weights,
    }
}

/// Draws, evaluates and combines one step's estimate.
pub fn estimate(
    obj: &Objective,
    state: &VariationalState,
    estimator: Estimator,
    options: EstimatorOptions,
    draws: &[Draw],
) -> GradEstimate {
    let samples = evaluate_batch(obj, state, draws, Needs::for_estimator(estimator));
    combine(estimator, &samples, state.surrogate.as_ref(), obj.family, options)
}

/// `ln F′` for each draw, without gradients.
pub fn log_weights(obj: &Objective, state: &VariationalState, draws: &[Draw]) -> Vec<f64> {
    evaluate_batch(obj, state, draws, Needs::none())
        .iter()
        .map(SampleEval::log_weight)
        .collect()
}

/// Single-sample ELBO averaged over the draws.
pub fn elbo_estimate(obj: &Objective, state: &VariationalState, draws: &[Draw]) -> f64 {
    let lw = log_weights(obj, state, draws);
    lw.iter().sum::<f64>() / lw.len() as f64
}

/// `ln (1/K) Σ F′` over the draws.
pub fn iw_elbo(obj: &Objective, state: &VariationalState, draws: &[Draw]) -> f64 {
    log_mean_exp(&log_weights(obj, state, draws))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_surrogate() -> Surrogate {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut s = Surrogate::new(3, 5, &mut rng);
        for p in s.params_mut() {
            *p = rng.random_range(-1.0..1.0);
        }
        s
    }

    #[test]
    fn surrogate_starts_at_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s = Surrogate::for_problem(4, 2, &mut rng);
        assert_eq!(s.hidden_len(), 80);
        let x = [0.3, -1.0, 2.0, 0.1, 0.0, 0.5, 1.5, -0.7];
        assert_eq!(s.value(&x), 0.0);
        assert!(s.value_and_input_grad(&x).1.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn surrogate_derivatives_match_differences() {
        let s = random_surrogate();
        let x = [0.4, -0.3, 1.1];
        let v = [0.7, -0.2, 0.5];
        let h = 1e-6;
        let (_, gx) = s.value_and_input_grad(&x);
        for m in 0..3 {
            let mut xp = x;
            let mut xm = x;
            xp[m] += h;
            xm[m] -= h;
            let fd = (s.value(&xp) - s.value(&xm)) / (2.0 * h);
            assert!((gx[m] - fd).abs() < 1e-8);
        }
        let gp = s.param_grad(&x);
        let gd = s.directional_param_grad(&x, &v);
        let dir = |s: &Surrogate| {
            let (_, g) = s.value_and_input_grad(&x);
            g.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>()
        };
        for c in 0..s.params().len() {
            let mut sp = s.clone();
            let mut sm = s.clone();
            sp.params_mut()[c] += h;
            sm.params_mut()[c] -= h;
            let fd = (sp.value(&x) - sm.value(&x)) / (2.0 * h);
            assert!((gp[c] - fd).abs() < 1e-7, "value param {c}");
            let fd = (dir(&sp) - dir(&sm)) / (2.0 * h);
            assert!((gd[c] - fd).abs() < 1e-7, "directional param {c}");
        }
    }

    #[test]
    fn weights_and_holdouts() {
        let lw = [-3.0, -1.0, -2.5, -1.2];
        let w = normalized_weights(&lw);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        let before = vimco_holdout(&lw, 1);
        let mut perturbed = lw;
        perturbed[1] = 10.0;
        assert_eq!(vimco_holdout(&perturbed, 1), before);
        let equal = [-2.0; 3];
        for k in 0..3 {
            assert!((log_mean_exp(&equal) - vimco_holdout(&equal, k)).abs() < 1e-15);
        }
    }

    #[test]
    fn estimator_names_round_trip() {
        for e in Estimator::ALL {
            assert_eq!(e.name().parse::<Estimator>().unwrap(), e);
        }
        assert!("nope".parse::<Estimator>().is_err());
    }
}
