//! Euclidean and Lorentz-model geometry and the tip-coordinate distributions.
//!
//! Points of H^d are stored in ambient coordinates `x ∈ R^{d+1}` with
//! `⟨x,x⟩_L = -1`, `x₀ ≥ 1`. The Lorentz operations are generic over
//! [`Real`] so the same code yields values (`f64`) and exact parameter
//! derivatives ([`Dual`]).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dual::{Dual, Real, MAX_PARTIALS};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("dimension must be at least 1")]
    ZeroDimension,
    #[error("{0} parameters per tip exceeds the supported maximum of {MAX_PARTIALS}")]
    TooManyParameters(usize),
    #[error("expected {expected} parameters, found {found}")]
    ParameterCount { expected: usize, found: usize },
    #[error("non-finite scale parameter")]
    NonFiniteScale,
    #[error("distance matrix rows have inconsistent lengths")]
    Ragged,
    #[error("distance matrix is not symmetric at ({0}, {1})")]
    Asymmetric(usize, usize),
    #[error("distance matrix has an invalid entry at ({0}, {1})")]
    InvalidDistance(usize, usize),
}

/// Which space the tip coordinates live in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Space {
    Euclidean,
    Hyperbolic,
}

/// Shape of the per-tip scale parameter.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Covariance {
    Diagonal,
    Full,
}

/// Symmetric matrix of nonnegative pairwise distances with zero diagonal.
#[derive(Clone, Debug, PartialEq)]
pub struct DistanceMatrix {
    n: usize,
    data: Vec<f64>,
}

impl DistanceMatrix {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![0.0; n * n],
        }
    }

    /// Validates symmetry (to 1e-12), a zero diagonal and nonnegative entries.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, GeometryError> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(GeometryError::Ragged);
        }
        let mut d = Self::zeros(n);
        for i in 0..n {
            if rows[i][i] != 0.0 {
                return Err(GeometryError::InvalidDistance(i, i));
            }
            for j in (i + 1)..n {
                let (a, b) = (rows[i][j], rows[j][i]);
                if !a.is_finite() || a < 0.0 {
                    return Err(GeometryError::InvalidDistance(i, j));
                }
                if (a - b).abs() > 1e-12 {
                    return Err(GeometryError::Asymmetric(i, j));
                }
                d.set(i, j, a);
            }
        }
        Ok(d)
    }

    pub fn size(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    /// Sets both `(i, j)` and `(j, i)`.
    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.data[i * self.n + j] = value;
        self.data[j * self.n + i] = value;
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.n.max(1)).map(<[f64]>::to_vec).collect()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

#[inline]
fn k<T: Real>(x: f64) -> T {
    T::constant(x)
}

/// `-u₀v₀ + Σ_{j≥1} u_j v_j`.
pub fn lorentz_inner<T: Real>(u: &[T], v: &[T]) -> T {
    debug_assert_eq!(u.len(), v.len());
    let mut acc = -(u[0] * v[0]);
    for j in 1..u.len() {
        acc += u[j] * v[j];
    }
    acc
}

/// The hyperboloid origin `(1, 0, …, 0)` in `R^{d+1}`.
pub fn origin(d: usize) -> Vec<f64> {
    let mut o = vec![0.0; d + 1];
    o[0] = 1.0;
    o
}

fn origin_t<T: Real>(d: usize) -> Vec<T> {
    origin(d).into_iter().map(k).collect()
}

/// Prepends a zero time component.
pub fn pad0<T: Real>(v: &[T]) -> Vec<T> {
    let mut out = Vec::with_capacity(v.len() + 1);
    out.push(k(0.0));
    out.extend_from_slice(v);
    out
}

/// Lifts spatial coordinates onto the upper sheet.
pub fn lift_spatial<T: Real>(spatial: &[T]) -> Vec<T> {
    let mut sq = k::<T>(1.0);
    for &s in spatial {
        sq += s * s;
    }
    let mut out = Vec::with_capacity(spatial.len() + 1);
    out.push(sq.sqrt());
    out.extend_from_slice(spatial);
    out
}

/// Recomputes the time component when the constraint has drifted by more
/// than 1e-12.
pub fn renormalize<T: Real>(x: &mut [T]) {
    let drift = lorentz_inner(x, x).value() + 1.0;
    if drift.abs() > 1e-12 {
        let lifted = lift_spatial(&x[1..]);
        x[0] = lifted[0];
    }
}

/// Half the squared Lorentz norm of `ν − μ`, which equals `−⟨ν,μ⟩_L − 1`
/// for points on the hyperboloid but keeps full precision near `ν = μ`.
fn half_gap<T: Real>(mu: &[T], nu: &[T]) -> T {
    let diff: Vec<T> = nu.iter().zip(mu).map(|(&a, &b)| a - b).collect();
    let delta = lorentz_inner(&diff, &diff) * 0.5;
    if delta.value() < 0.0 {
        k(0.0)
    } else {
        delta
    }
}

/// `acosh(1 + δ)` without cancellation.
fn acosh_1p(delta: f64) -> f64 {
    (delta + (delta * (2.0 + delta)).sqrt()).ln_1p()
}

/// Geodesic distance on H^d.
pub fn lorentz_distance(nu: &[f64], mu: &[f64]) -> f64 {
    acosh_1p(half_gap(mu, nu))
}

/// `(cosh n, sinh n / n)` from `n²`, by series near zero.
fn cosh_sinhc<T: Real>(n2: T) -> (T, T) {
    if n2.value() < 1e-8 {
        let cosh = n2 * (n2 * (n2 / 720.0 + 1.0 / 24.0) + 0.5) + 1.0;
        let sinhc = n2 * (n2 * (n2 / 5040.0 + 1.0 / 120.0) + 1.0 / 6.0) + 1.0;
        (cosh, sinhc)
    } else {
        let n = n2.sqrt();
        (n.cosh(), n.sinh() / n)
    }
}

/// `ln(sinh r / r)` from `r²`, stable for small and large `r`.
pub fn ln_sinhc<T: Real>(r2: T) -> T {
    let v = r2.value();
    if v < 1e-8 {
        r2 * (r2 * (r2 / 2835.0 - 1.0 / 180.0) + 1.0 / 6.0)
    } else if v > 400.0 {
        let r = r2.sqrt();
        r - r.ln() - std::f64::consts::LN_2
    } else {
        let r = r2.sqrt();
        (r.sinh() / r).ln()
    }
}

/// `exp_μ(u) = cosh(‖u‖) μ + sinh(‖u‖) u / ‖u‖`.
pub fn exp_map<T: Real>(mu: &[T], u: &[T]) -> Vec<T> {
    let mut n2 = lorentz_inner(u, u);
    if n2.value() < 0.0 {
        n2 = k(0.0);
    }
    let (c, s) = cosh_sinhc(n2);
    let mut x: Vec<T> = mu.iter().zip(u).map(|(&m, &v)| m * c + v * s).collect();
    renormalize(&mut x);
    x
}

/// `log_μ(ν) = acosh(α) / √(α²−1) (ν − αμ)`.
pub fn log_map<T: Real>(mu: &[T], nu: &[T]) -> Vec<T> {
    let delta = half_gap(mu, nu);
    let alpha = delta + 1.0;
    let dv = delta.value();
    let ratio = if dv < 1e-6 {
        delta * (delta * (2.0 / 15.0) - 1.0 / 3.0) + 1.0
    } else {
        let root = (delta * (delta + 2.0)).sqrt();
        (delta + root).ln_1p() / root
    };
    nu.iter()
        .zip(mu)
        .map(|(&n, &m)| (n - alpha * m) * ratio)
        .collect()
}

/// Transports `v ∈ T_ν` to `T_μ` along the geodesic.
pub fn parallel_transport<T: Real>(nu: &[T], mu: &[T], v: &[T]) -> Vec<T> {
    let alpha = half_gap(mu, nu) + 1.0;
    let w: Vec<T> = mu.iter().zip(nu).map(|(&m, &n)| m - alpha * n).collect();
    let coef = lorentz_inner(&w, v) / (alpha + 1.0);
    v.iter()
        .zip(nu.iter().zip(mu))
        .map(|(&vi, (&n, &m))| vi + coef * (n + m))
        .collect()
}

/// Weighted Lorentzian centroid `ξ̃ / √(−⟨ξ̃,ξ̃⟩_L)`.
pub fn lorentzian_centroid(points: &[Vec<f64>], weights: &[f64]) -> Vec<f64> {
    assert!(!points.is_empty() && points.len() == weights.len());
    let dim = points[0].len();
    let mut acc = vec![0.0; dim];
    for (p, &w) in points.iter().zip(weights) {
        for (a, &x) in acc.iter_mut().zip(p) {
            *a += w * x;
        }
    }
    let norm = (-lorentz_inner(&acc, &acc)).sqrt();
    let mut out: Vec<f64> = acc.into_iter().map(|a| a / norm).collect();
    renormalize(&mut out);
    out
}

/// Maps a hyperboloid point into the Poincaré ball.
pub fn poincare_project(z: &[f64]) -> Vec<f64> {
    z[1..].iter().map(|&x| x / (1.0 + z[0])).collect()
}

/// Inverse of [`poincare_project`].
pub fn poincare_lift(p: &[f64]) -> Vec<f64> {
    let sq: f64 = p.iter().map(|x| x * x).sum();
    let denom = 1.0 - sq;
    let mut out = Vec::with_capacity(p.len() + 1);
    out.push((1.0 + sq) / denom);
    out.extend(p.iter().map(|&x| 2.0 * x / denom));
    out
}

/// Number of scale parameters per tip.
pub fn scale_len(cov: Covariance, d: usize) -> usize {
    match cov {
        Covariance::Diagonal => d,
        Covariance::Full => d * (d + 1) / 2,
    }
}

#[inline]
fn packed(a: usize, b: usize) -> usize {
    a * (a + 1) / 2 + b
}

/// Dense lower-triangular factor (row-major `d×d`) from the packed scale
/// parameters, exponentiating the diagonal.
pub fn cholesky_factor<T: Real>(cov: Covariance, d: usize, scale: &[T]) -> Vec<T> {
    let mut l = vec![k::<T>(0.0); d * d];
    match cov {
        Covariance::Diagonal => {
            for a in 0..d {
                l[a * d + a] = scale[a].exp();
            }
        }
        Covariance::Full => {
            for a in 0..d {
                for b in 0..a {
                    l[a * d + b] = scale[packed(a, b)];
                }
                l[a * d + a] = scale[packed(a, a)].exp();
            }
        }
    }
    l
}

fn lower_mul<T: Real>(l: &[T], d: usize, eps: &[f64]) -> Vec<T> {
    (0..d)
        .map(|a| {
            let mut acc = k::<T>(0.0);
            for b in 0..=a {
                acc += l[a * d + b] * eps[b];
            }
            acc
        })
        .collect()
}

fn forward_solve<T: Real>(l: &[T], d: usize, x: &[T]) -> Vec<T> {
    let mut r: Vec<T> = Vec::with_capacity(d);
    for a in 0..d {
        let mut acc = x[a];
        for b in 0..a {
            acc = acc - l[a * d + b] * r[b];
        }
        r.push(acc / l[a * d + a]);
    }
    r
}

fn back_solve(l: &[f64], d: usize, r: &[f64]) -> Vec<f64> {
    let mut s = vec![0.0; d];
    for a in (0..d).rev() {
        let mut acc = r[a];
        for b in (a + 1)..d {
            acc -= l[b * d + a] * s[b];
        }
        s[a] = acc / l[a * d + a];
    }
    s
}

/// `log N(x; 0, LLᵀ)` where `l` is the dense factor and its log-diagonal
/// is read from the scale parameters.
fn centered_log_normal<T: Real>(cov: Covariance, d: usize, scale: &[T], l: &[T], x: &[T]) -> T {
    let r = forward_solve(l, d, x);
    let mut acc = k::<T>(-0.5 * d as f64 * LN_2PI);
    for a in 0..d {
        let log_diag = match cov {
            Covariance::Diagonal => scale[a],
            Covariance::Full => scale[packed(a, a)],
        };
        acc = acc - log_diag - r[a] * r[a] * 0.5;
    }
    acc
}

/// `x = m + Lε`.
pub fn mvn_sample(cov: Covariance, d: usize, params: &[f64], eps: &[f64]) -> Vec<f64> {
    let l = cholesky_factor(cov, d, &params[d..]);
    let y = lower_mul(&l, d, eps);
    params[..d].iter().zip(y).map(|(m, y)| m + y).collect()
}

pub fn mvn_log_density(cov: Covariance, d: usize, params: &[f64], x: &[f64]) -> f64 {
    let scale = &params[d..];
    let l = cholesky_factor(cov, d, scale);
    let centered: Vec<f64> = x.iter().zip(&params[..d]).map(|(x, m)| x - m).collect();
    centered_log_normal(cov, d, scale, &l, &centered)
}

/// Log-density and its gradient with respect to `(m, scale)`.
pub fn mvn_log_density_grads(cov: Covariance, d: usize, params: &[f64], x: &[f64]) -> (f64, Vec<f64>) {
    let scale = &params[d..];
    let l = cholesky_factor(cov, d, scale);
    let centered: Vec<f64> = x.iter().zip(&params[..d]).map(|(x, m)| x - m).collect();
    let value = centered_log_normal(cov, d, scale, &l, &centered);
    let r = forward_solve(&l, d, &centered);
    let s = back_solve(&l, d, &r);
    let mut grad = Vec::with_capacity(params.len());
    grad.extend_from_slice(&s);
    match cov {
        Covariance::Diagonal => {
            for a in 0..d {
                grad.push(r[a] * r[a] - 1.0);
            }
        }
        Covariance::Full => {
            for a in 0..d {
                for b in 0..a {
                    grad.push(s[a] * r[b]);
                }
                grad.push(s[a] * r[a] * l[a * d + a] - 1.0);
            }
        }
    }
    (value, grad)
}

/// `μ = exp_{μ°}(pad₀(v))`.
pub fn wn_location<T: Real>(v: &[T]) -> Vec<T> {
    exp_map(&origin_t::<T>(v.len()), &pad0(v))
}

/// `z = exp_μ(PT_{μ°→μ}(pad₀(Lε)))` with `μ` built from the tangent seed.
pub fn wn_sample<T: Real>(cov: Covariance, d: usize, params: &[T], eps: &[f64]) -> Vec<T> {
    let mu = wn_location(&params[..d]);
    let l = cholesky_factor(cov, d, &params[d..]);
    let u = pad0(&lower_mul(&l, d, eps));
    let o = origin_t::<T>(d);
    let w = parallel_transport(&o, &mu, &u);
    exp_map(&mu, &w)
}

/// `log N(u; 0, Σ) − (d−1) ln(sinh‖u‖/‖u‖)` with `u = PT_{μ→μ°}(log_μ z)`.
pub fn wn_log_density<T: Real>(cov: Covariance, d: usize, params: &[T], z: &[T]) -> T {
    let scale = &params[d..];
    let mu = wn_location(&params[..d]);
    let o = origin_t::<T>(d);
    let u = parallel_transport(&mu, &o, &log_map(&mu, z));
    let spatial = &u[1..];
    let l = cholesky_factor(cov, d, scale);
    let mut r2 = k::<T>(0.0);
    for &x in spatial {
        r2 += x * x;
    }
    centered_log_normal(cov, d, scale, &l, spatial) - ln_sinhc(r2) * (d as f64 - 1.0)
}

/// Log-density and its exact gradient with respect to `(v, scale)`.
pub fn wn_log_density_grads(cov: Covariance, d: usize, params: &[f64], z: &[f64]) -> (f64, Vec<f64>) {
    let p = Dual::variables(params);
    let zc: Vec<Dual> = z.iter().map(|&x| Dual::constant(x)).collect();
    let out = wn_log_density(cov, d, &p, &zc);
    let grad = (0..params.len()).map(|i| out.partial(i)).collect();
    (out.value(), grad)
}

/// Closed-form `ln q(h(θ, ε); θ)` shared by both families; the hyperbolic
/// case adds the radial volume correction.
fn reparam_log_density(space: Space, cov: Covariance, d: usize, params: &[f64], eps: &[f64]) -> f64 {
    let scale = &params[d..];
    let mut acc = -0.5 * d as f64 * LN_2PI - 0.5 * eps.iter().map(|e| e * e).sum::<f64>();
    for a in 0..d {
        acc -= match cov {
            Covariance::Diagonal => scale[a],
            Covariance::Full => scale[packed(a, a)],
        };
    }
    if space == Space::Hyperbolic && d > 1 {
        let l = cholesky_factor(cov, d, scale);
        let y = lower_mul(&l, d, eps);
        let r2: f64 = y.iter().map(|x| x * x).sum();
        acc -= (d as f64 - 1.0) * ln_sinhc(r2);
    }
    acc
}

/// `(coth r − 1/r) / r` from `r²`.
fn radial_slope(r2: f64) -> f64 {
    if r2 < 1e-6 {
        1.0 / 3.0 - r2 / 45.0 + 2.0 * r2 * r2 / 945.0
    } else {
        let r = r2.sqrt();
        (1.0 / r.tanh() - 1.0 / r) / r
    }
}

/// Per-tip distribution family: space, covariance shape and dimension.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TipFamily {
    pub space: Space,
    pub covariance: Covariance,
    pub dim: usize,
}

/// A sample with its features and the Jacobian of the features with respect
/// to the tip parameters (row-major `dim × param_len`).
#[derive(Clone, Debug)]
pub struct SampleJacobian {
    pub point: Vec<f64>,
    pub features: Vec<f64>,
    pub jacobian: Vec<f64>,
}

impl TipFamily {
    pub fn new(space: Space, covariance: Covariance, dim: usize) -> Result<Self, GeometryError> {
        if dim == 0 {
            return Err(GeometryError::ZeroDimension);
        }
        let f = Self {
            space,
            covariance,
            dim,
        };
        if f.param_len() > MAX_PARTIALS {
            return Err(GeometryError::TooManyParameters(f.param_len()));
        }
        Ok(f)
    }

    pub fn param_len(&self) -> usize {
        self.dim + scale_len(self.covariance, self.dim)
    }

    /// Length of a sampled point (`d` or `d+1`).
    pub fn ambient_dim(&self) -> usize {
        match self.space {
            Space::Euclidean => self.dim,
            Space::Hyperbolic => self.dim + 1,
        }
    }

    /// Parameters with the given location coordinates (Euclidean mean or
    /// hyperbolic tangent seed) and isotropic standard deviation `sigma`.
    pub fn init_params(&self, location: &[f64], sigma: f64) -> Vec<f64> {
        let d = self.dim;
        let mut p = location.to_vec();
        p.resize(d, 0.0);
        match self.covariance {
            Covariance::Diagonal => p.extend(std::iter::repeat_n(sigma.ln(), d)),
            Covariance::Full => {
                for a in 0..d {
                    p.extend(std::iter::repeat_n(0.0, a));
                    p.push(sigma.ln());
                }
            }
        }
        p
    }

    /// Rejects wrong lengths and non-finite entries.
    pub fn validate(&self, params: &[f64]) -> Result<(), GeometryError> {
        if params.len() != self.param_len() {
            return Err(GeometryError::ParameterCount {
                expected: self.param_len(),
                found: params.len(),
            });
        }
        if params.iter().any(|x| !x.is_finite()) {
            return Err(GeometryError::NonFiniteScale);
        }
        Ok(())
    }

    /// Location as an ambient point.
    pub fn location(&self, params: &[f64]) -> Vec<f64> {
        match self.space {
            Space::Euclidean => params[..self.dim].to_vec(),
            Space::Hyperbolic => wn_location(&params[..self.dim]),
        }
    }

    pub fn sample(&self, params: &[f64], eps: &[f64]) -> Vec<f64> {
        match self.space {
            Space::Euclidean => mvn_sample(self.covariance, self.dim, params, eps),
            Space::Hyperbolic => wn_sample(self.covariance, self.dim, params, eps),
        }
    }

    pub fn log_density(&self, params: &[f64], z: &[f64]) -> f64 {
        match self.space {
            Space::Euclidean => mvn_log_density(self.covariance, self.dim, params, z),
            Space::Hyperbolic => wn_log_density(self.covariance, self.dim, params, z),
        }
    }

    /// Log-density with its score `∇_θ ln q(z; θ)` at fixed `z`.
    pub fn log_density_and_score(&self, params: &[f64], z: &[f64]) -> (f64, Vec<f64>) {
        match self.space {
            Space::Euclidean => mvn_log_density_grads(self.covariance, self.dim, params, z),
            Space::Hyperbolic => wn_log_density_grads(self.covariance, self.dim, params, z),
        }
    }

    /// `ln q(h(θ, ε); θ)` evaluated in closed form.
    pub fn reparam_log_density(&self, params: &[f64], eps: &[f64]) -> f64 {
        reparam_log_density(self.space, self.covariance, self.dim, params, eps)
    }

    /// Total derivative `d/dθ ln q(h(θ, ε); θ)` at fixed `ε`.
    pub fn pathwise_grad(&self, params: &[f64], eps: &[f64]) -> Vec<f64> {
        let d = self.dim;
        let cov = self.covariance;
        let mut grad = vec![0.0; self.param_len()];
        let curved = self.space == Space::Hyperbolic && d > 1;
        let (y, slope) = if curved {
            let l = cholesky_factor(cov, d, &params[d..]);
            let y = lower_mul(&l, d, eps);
            let r2: f64 = y.iter().map(|x| x * x).sum();
            (y, -(d as f64 - 1.0) * radial_slope(r2))
        } else {
            (vec![0.0; d], 0.0)
        };
        let scale = &params[d..];
        match cov {
            Covariance::Diagonal => {
                for a in 0..d {
                    let la = scale[a].exp();
                    grad[d + a] = slope * y[a] * eps[a] * la - 1.0;
                }
            }
            Covariance::Full => {
                for a in 0..d {
                    for b in 0..a {
                        grad[d + packed(a, b)] = slope * y[a] * eps[b];
                    }
                    let la = scale[packed(a, a)].exp();
                    grad[d + packed(a, a)] = slope * y[a] * eps[a] * la - 1.0;
                }
            }
        }
        grad
    }

    /// Euclidean coordinates fed to the control-variate network: the point
    /// itself, or the spatial part of `log_{μ°}(z)`.
    pub fn features(&self, z: &[f64]) -> Vec<f64> {
        match self.space {
            Space::Euclidean => z.to_vec(),
            Space::Hyperbolic => log_map(&origin(self.dim), z)[1..].to_vec(),
        }
    }

    /// Samples and differentiates the features through the sampler.
    pub fn sample_with_jacobian(&self, params: &[f64], eps: &[f64]) -> SampleJacobian {
        let d = self.dim;
        let p = self.param_len();
        match self.space {
            Space::Euclidean => {
                let point = mvn_sample(self.covariance, d, params, eps);
                let mut jacobian = vec![0.0; d * p];
                let scale = &params[d..];
                for a in 0..d {
                    jacobian[a * p + a] = 1.0;
                    match self.covariance {
                        Covariance::Diagonal => {
                            jacobian[a * p + d + a] = scale[a].exp() * eps[a];
                        }
                        Covariance::Full => {
                            for b in 0..a {
                                jacobian[a * p + d + packed(a, b)] = eps[b];
                            }
                            jacobian[a * p + d + packed(a, a)] = scale[packed(a, a)].exp() * eps[a];
                        }
                    }
                }
                SampleJacobian {
                    features: point.clone(),
                    point,
                    jacobian,
                }
            }
            Space::Hyperbolic => {
                let seeded = Dual::variables(params);
                let z = wn_sample(self.covariance, d, &seeded, eps);
                let feats = log_map(&origin_t::<Dual>(d), &z);
                let mut jacobian = Vec::with_capacity(d * p);
                for f in &feats[1..] {
                    jacobian.extend((0..p).map(|i| f.partial(i)));
                }
                SampleJacobian {
                    point: z.iter().map(Real::value).collect(),
                    features: feats[1..].iter().map(Real::value).collect(),
                    jacobian,
                }
            }
        }
    }

    /// Distance between two ambient points of this space.
    pub fn distance(&self, a: &[f64], b: &[f64]) -> f64 {
        match self.space {
            Space::Euclidean => a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt(),
            Space::Hyperbolic => lorentz_distance(a, b),
        }
    }
}
