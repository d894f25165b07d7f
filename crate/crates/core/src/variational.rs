//! The variational families: `Q_θ(z)` over tip coordinates, the split-keyed
//! lognormal `Q_φ(B|τ)` and the tip-wise encoder `R_ψ(z)`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::decoder::LinkMethod;
use crate::geometry::{GeometryError, SampleJacobian, TipFamily};
use crate::tree::{BranchLengths, Split, Topology, TreeError};
use crate::VERSION;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Default lognormal location, the log of the prior mean branch length.
pub const DEFAULT_BRANCH_MEAN: f64 = -2.302_585_092_994_046;
/// Default lognormal log-scale, `ln 0.5`.
pub const DEFAULT_BRANCH_LOG_SIGMA: f64 = -0.693_147_180_559_945_3;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint is not valid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("bad split key {0:?}")]
    Split(String),
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("checkpoint has {found} tips, expected {expected}")]
    TipCount { expected: usize, found: usize },
}

/// Independent per-tip distributions sharing one family.
#[derive(Clone, Debug, PartialEq)]
pub struct TipParams {
    family: TipFamily,
    tips: usize,
    values: Vec<f64>,
}

impl TipParams {
    /// One set of parameters per location row, all with scale `sigma`.
    pub fn from_locations(family: TipFamily, locations: &[Vec<f64>], sigma: f64) -> Self {
        let values = locations
            .iter()
            .flat_map(|loc| family.init_params(loc, sigma))
            .collect();
        Self {
            family,
            tips: locations.len(),
            values,
        }
    }

    pub fn from_values(family: TipFamily, tips: usize, values: Vec<f64>) -> Result<Self, GeometryError> {
        let p = family.param_len();
        if values.len() != tips * p {
            return Err(GeometryError::ParameterCount {
                expected: tips * p,
                found: values.len(),
            });
        }
        for chunk in values.chunks(p) {
            family.validate(chunk)?;
        }
        Ok(Self {
            family,
            tips,
            values,
        })
    }

    /// Same locations with every scale reset to `sigma`.
    pub fn with_scale(&self, sigma: f64) -> Self {
        let d = self.family.dim;
        let locs: Vec<Vec<f64>> = (0..self.tips).map(|i| self.tip(i)[..d].to_vec()).collect();
        Self::from_locations(self.family, &locs, sigma)
    }

    pub fn family(&self) -> TipFamily {
        self.family
    }

    pub fn tip_count(&self) -> usize {
        self.tips
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn tip(&self, i: usize) -> &[f64] {
        let p = self.family.param_len();
        &self.values[i * p..(i + 1) * p]
    }

    fn eps_tip<'a>(&self, eps: &'a [f64], i: usize) -> &'a [f64] {
        let d = self.family.dim;
        &eps[i * d..(i + 1) * d]
    }

    /// `z = h_θ(ε)` tip by tip; `eps` holds `N·d` standard normals.
    pub fn sample(&self, eps: &[f64]) -> Vec<Vec<f64>> {
        (0..self.tips)
            .map(|i| self.family.sample(self.tip(i), self.eps_tip(eps, i)))
            .collect()
    }

    /// Samples with per-tip feature Jacobians.
    pub fn sample_with_jacobian(&self, eps: &[f64]) -> Vec<SampleJacobian> {
        (0..self.tips)
            .map(|i| self.family.sample_with_jacobian(self.tip(i), self.eps_tip(eps, i)))
            .collect()
    }

    /// Locations as ambient points.
    pub fn locations(&self) -> Vec<Vec<f64>> {
        (0..self.tips).map(|i| self.family.location(self.tip(i))).collect()
    }

    pub fn log_density(&self, z: &[Vec<f64>]) -> f64 {
        (0..self.tips)
            .map(|i| self.family.log_density(self.tip(i), &z[i]))
            .sum()
    }

    /// Log-density and the flat score vector at fixed `z`.
    pub fn log_density_and_score(&self, z: &[Vec<f64>]) -> (f64, Vec<f64>) {
        let mut total = 0.0;
        let mut grad = Vec::with_capacity(self.values.len());
        for (i, zi) in z.iter().enumerate() {
            let (v, g) = self.family.log_density_and_score(self.tip(i), zi);
            total += v;
            grad.extend(g);
        }
        (total, grad)
    }

    /// `ln Q(h(θ, ε); θ)` in closed form.
    pub fn reparam_log_density(&self, eps: &[f64]) -> f64 {
        (0..self.tips)
            .map(|i| self.family.reparam_log_density(self.tip(i), self.eps_tip(eps, i)))
            .sum()
    }

    /// `∇_θ ln Q(h(θ, ε); θ)`, the pathwise entropy term.
    pub fn pathwise_grad(&self, eps: &[f64]) -> Vec<f64> {
        (0..self.tips)
            .flat_map(|i| self.family.pathwise_grad(self.tip(i), self.eps_tip(eps, i)))
            .collect()
    }
}

/// Lognormal parameters of one edge.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lognormal {
    pub mean: f64,
    pub log_sigma: f64,
}

impl Lognormal {
    pub fn sigma(&self) -> f64 {
        self.log_sigma.exp()
    }

    pub fn log_density(&self, b: f64) -> f64 {
        let lb = b.ln();
        let s = self.sigma();
        let u = (lb - self.mean) / s;
        -lb - self.log_sigma - HALF_LN_2PI - 0.5 * u * u
    }
}

impl Default for Lognormal {
    fn default() -> Self {
        Self {
            mean: DEFAULT_BRANCH_MEAN,
            log_sigma: DEFAULT_BRANCH_LOG_SIGMA,
        }
    }
}

/// Branch-length distribution with one lognormal per split. Pendant edges
/// are keyed by their singleton split, i.e. by tip.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitBranchModel {
    tip_count: usize,
    default: Lognormal,
    entries: BTreeMap<Split, Lognormal>,
}

/// Reparameterized branch draw together with the keys it used.
#[derive(Clone, Debug)]
pub struct BranchDraw {
    pub lengths: Vec<f64>,
    pub keys: Vec<Split>,
    pub params: Vec<Lognormal>,
}

impl SplitBranchModel {
    pub fn new(tip_count: usize, default: Lognormal) -> Self {
        Self {
            tip_count,
            default,
            entries: BTreeMap::new(),
        }
    }

    pub fn tip_count(&self) -> usize {
        self.tip_count
    }

    pub fn default_params(&self) -> Lognormal {
        self.default
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, key: &Split) -> bool {
        self.entries.contains_key(key)
    }

    /// Stored parameters, or the defaults for an unseen split.
    pub fn get(&self, key: &Split) -> Lognormal {
        self.entries.get(key).copied().unwrap_or(self.default)
    }

    /// Mutable entry, created from the defaults when missing.
    pub fn entry(&mut self, key: Split) -> &mut Lognormal {
        let default = self.default;
        self.entries.entry(key).or_insert(default)
    }

    pub fn insert(&mut self, key: Split, value: Lognormal) {
        self.entries.insert(key, value);
    }

    pub fn entries(&self) -> impl Iterator<Item = (&Split, &Lognormal)> {
        self.entries.iter()
    }

    /// Inserts default entries for every edge of `t`.
    pub fn ensure(&mut self, t: &Topology) {
        for e in 0..t.edge_count() {
            self.entry(t.edge_split(e).clone());
        }
    }

    /// `b_e = exp(m_s + σ_s ε_e)` for each edge of `t`.
    pub fn sample(&self, t: &Topology, eps: &[f64]) -> BranchDraw {
        let mut draw = BranchDraw {
            lengths: Vec::with_capacity(t.edge_count()),
            keys: Vec::with_capacity(t.edge_count()),
            params: Vec::with_capacity(t.edge_count()),
        };
        for (e, &eps_e) in eps.iter().enumerate().take(t.edge_count()) {
            let key = t.edge_split(e).clone();
            let p = self.get(&key);
            draw.lengths.push((p.mean + p.sigma() * eps_e).exp());
            draw.keys.push(key);
            draw.params.push(p);
        }
        draw
    }

    /// `Σ_e ln LogNormal(b_e; m_s, σ_s)`.
    pub fn log_density(&self, t: &Topology, b: &BranchLengths) -> f64 {
        (0..t.edge_count())
            .map(|e| self.get(t.edge_split(e)).log_density(b.get(e)))
            .sum()
    }

    /// Medians `exp(m_s)` of every edge.
    pub fn median_lengths(&self, t: &Topology) -> BranchLengths {
        let v = (0..t.edge_count())
            .map(|e| self.get(t.edge_split(e)).mean.exp())
            .collect();
        BranchLengths::new(v).expect("exp of a finite mean is positive")
    }
}

/// `(∂/∂m, ∂/∂logσ)` of `G(b)·b − ln q(b)` for one reparameterized edge,
/// where `G` is the derivative of the log joint with respect to `b`.
pub fn branch_param_grad(p: Lognormal, eps: f64, b: f64, joint_grad: f64) -> [f64; 2] {
    let se = p.sigma() * eps;
    let gb = joint_grad * b;
    [gb + 1.0, gb * se + se + 1.0]
}

/// All trainable state of a run.
#[derive(Clone, Debug)]
pub struct VariationalState {
    pub theta: TipParams,
    pub psi: TipParams,
    pub phi: SplitBranchModel,
    pub surrogate: Option<crate::estimators::Surrogate>,
}

impl VariationalState {
    /// `Q_θ` at the given locations with scale 0.1; `R_ψ` shares the means
    /// with scale 1.0.
    pub fn initial(family: TipFamily, locations: &[Vec<f64>]) -> Self {
        let theta = TipParams::from_locations(family, locations, 0.1);
        let psi = theta.with_scale(1.0);
        Self {
            theta,
            psi,
            phi: SplitBranchModel::new(locations.len(), Lognormal::default()),
            surrogate: None,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    version: String,
    family: TipFamily,
    link: LinkMethod,
    taxa: Vec<String>,
    step: u64,
    theta: Vec<Vec<f64>>,
    psi: Vec<Vec<f64>>,
    branch_default: Lognormal,
    splits: Vec<(String, f64, f64)>,
    surrogate: Option<crate::estimators::Surrogate>,
}

/// Metadata stored alongside the parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointMeta {
    pub link: LinkMethod,
    pub taxa: Vec<String>,
    pub step: u64,
}

/// Serializes the state as a `#`-prefixed version line followed by JSON.
pub fn write_checkpoint(state: &VariationalState, meta: &CheckpointMeta) -> String {
    let per_tip = |p: &TipParams| (0..p.tip_count()).map(|i| p.tip(i).to_vec()).collect();
    let file = CheckpointFile {
        version: VERSION.to_string(),
        family: state.theta.family(),
        link: meta.link,
        taxa: meta.taxa.clone(),
        step: meta.step,
        theta: per_tip(&state.theta),
        psi: per_tip(&state.psi),
        branch_default: state.phi.default_params(),
        splits: state
            .phi
            .entries()
            .map(|(s, p)| (s.to_hex(), p.mean, p.log_sigma))
            .collect(),
        surrogate: state.surrogate.clone(),
    };
    let body = serde_json::to_string_pretty(&file).expect("checkpoint serializes");
    format!("# {VERSION}\n{body}\n")
}

/// Inverse of [`write_checkpoint`]; `#` lines are skipped.
pub fn read_checkpoint(text: &str) -> Result<(VariationalState, CheckpointMeta), CheckpointError> {
    let body: String = text
        .lines()
        .filter(|l| !l.trim_start().starts_with('#'))
        .collect::<Vec<_>>()
        .join("\n");
    let file: CheckpointFile = serde_json::from_str(&body)?;
    let n = file.taxa.len();
    let family = TipFamily::new(file.family.space, file.family.covariance, file.family.dim)?;
    let flat = |rows: Vec<Vec<f64>>| -> Result<TipParams, CheckpointError> {
        if rows.len() != n {
            return Err(CheckpointError::TipCount {
                expected: n,
                found: rows.len(),
            });
        }
        Ok(TipParams::from_values(family, n, rows.concat())?)
    };
    let theta = flat(file.theta)?;
    let psi = flat(file.psi)?;
    let mut phi = SplitBranchModel::new(n, file.branch_default);
    for (hex, mean, log_sigma) in file.splits {
        let split = Split::from_hex(n, &hex).map_err(|_| CheckpointError::Split(hex.clone()))?;
        phi.insert(split, Lognormal { mean, log_sigma });
    }
    Ok((
        VariationalState {
            theta,
            psi,
            phi,
            surrogate: file.surrogate,
        },
        CheckpointMeta {
            link: file.link,
            taxa: file.taxa,
            step: file.step,
        },
    ))
}
