//! Oracles and fixtures shared by the integration suites.
#![allow(dead_code)]

use geophy::estimators::Surrogate;
use geophy::geometry::{Covariance, Space};
use geophy::likelihood::{grad_branch_lengths, log_likelihood, log_prior, log_prior_gradient, simulate_alignment};
use geophy::seqdata::{compress_site_patterns, encode_base, Alignment, PatternAlignment};
use geophy::trainer::{initial_state, TrainConfig};
use geophy::tree::{random_branch_lengths, random_topology, BranchLengths, Topology};
use geophy::variational::VariationalState;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn names(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("t{i}")).collect()
}

/// JC69 transition probability written out from the rate matrix eigen-decomposition.
pub fn jc(t: f64, i: usize, j: usize) -> f64 {
    let decay = (-4.0 * t / 3.0).exp();
    if i == j {
        0.25 + 0.75 * decay
    } else {
        0.25 - 0.25 * decay
    }
}

/// Log-likelihood by explicit summation over every internal-node state assignment.
pub fn brute_force_log_likelihood(pa: &PatternAlignment, t: &Topology, b: &BranchLengths) -> f64 {
    let n = t.tip_count();
    let internal = t.node_count() - n;
    let combos = 4usize.pow(internal as u32);
    let mut total = 0.0;
    for (pat, &w) in pa.patterns().iter().zip(pa.weights()) {
        let mut site = 0.0;
        for code in 0..combos {
            let state = |node: usize| (code / 4usize.pow((node - n) as u32)) % 4;
            let mut p = 0.25;
            for (e, &(u, v)) in t.edges().iter().enumerate() {
                let len = b.get(e);
                p *= match (u < n, v < n) {
                    (false, false) => jc(len, state(u), state(v)),
                    (true, true) => unreachable!("tips are never adjacent"),
                    (tip_u, _) => {
                        let (tip, node) = if tip_u { (u, v) } else { (v, u) };
                        (0..4)
                            .filter(|&x| pat[tip] & (1 << x) != 0)
                            .map(|x| jc(len, state(node), x))
                            .sum::<f64>()
                    }
                };
            }
            site += p;
        }
        total += w * site.ln();
    }
    total
}

/// Every unrooted binary topology on `n` tips, by stepwise addition.
pub fn all_topologies(n: usize) -> Vec<Topology> {
    fn grow(edges: Vec<(usize, usize)>, next_tip: usize, next_internal: usize, n: usize, out: &mut Vec<Vec<(usize, usize)>>) {
        if next_tip == n {
            out.push(edges);
            return;
        }
        for e in 0..edges.len() {
            let (a, b) = edges[e];
            let mut grown = edges.clone();
            grown[e] = (a, next_internal);
            grown.push((next_internal, b));
            grown.push((next_internal, next_tip));
            grow(grown, next_tip + 1, next_internal + 1, n, out);
        }
    }
    // Internal ids are offset so they land at n.. once every tip exists.
    let mut raw = Vec::new();
    grow(vec![(0, 100), (1, 100), (2, 100)], 3, 101, n, &mut raw);
    raw.into_iter()
        .map(|edges| {
            let relabel = |x: usize| if x >= 100 { x - 100 + n } else { x };
            let edges = edges.into_iter().map(|(a, b)| (relabel(a), relabel(b))).collect();
            Topology::from_edges(n, edges).unwrap()
        })
        .collect()
}

/// Random alignment with a sprinkling of ambiguity codes.
pub fn random_alignment(n: usize, m: usize, ambiguous: bool, rng: &mut impl Rng) -> Alignment {
    let alphabet: &[u8] = if ambiguous { b"ACGTACGTACGTRYN-" } else { b"ACGT" };
    let rows = (0..n)
        .map(|_| (0..m).map(|_| alphabet[rng.random_range(0..alphabet.len())]).collect())
        .collect();
    Alignment::new(names(n), rows).unwrap()
}

pub fn random_tree(n: usize, rng: &mut impl Rng) -> (Topology, BranchLengths) {
    let t = random_topology(n, rng);
    let b = random_branch_lengths(&t, 10.0, rng);
    (t, b)
}

/// Simulated data on a random tree.
pub fn simulated(n: usize, m: usize, seed: u64) -> (PatternAlignment, Topology, BranchLengths) {
    let mut r = rng(seed);
    let (t, b) = random_tree(n, &mut r);
    let aln = simulate_alignment(&t, &b, &names(n), m, seed);
    (compress_site_patterns(&aln), t, b)
}

/// Fixed 4-taxon problem used by the estimator checks.
pub fn toy() -> PatternAlignment {
    let t = Topology::from_edges(4, vec![(0, 4), (1, 4), (4, 5), (2, 5), (3, 5)]).unwrap();
    let b = BranchLengths::new(vec![0.05, 0.08, 0.12, 0.06, 0.1]).unwrap();
    compress_site_patterns(&simulate_alignment(&t, &b, &names(4), 60, 11))
}

/// Initial state of `cfg` with a surrogate whose weights are all nonzero.
pub fn toy_state(cfg: &TrainConfig, data: &PatternAlignment, seed: u64) -> VariationalState {
    let mut state = initial_state(cfg, data).unwrap();
    let mut r = rng(seed);
    let mut sur = Surrogate::for_problem(data.taxon_count(), cfg.dim, &mut r);
    for p in sur.params_mut() {
        let z: f64 = StandardNormal.sample(&mut r);
        *p += 0.1 * z;
    }
    state.surrogate = Some(sur);
    state
}

pub fn config(space: Space, cov: Covariance, dim: usize) -> TrainConfig {
    TrainConfig {
        space,
        cov,
        dim,
        ..TrainConfig::default()
    }
}

pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

pub fn variance(xs: &[f64]) -> f64 {
    let (m, _) = mean_se(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

fn log_joint(pa: &PatternAlignment, t: &Topology, b: &[f64]) -> f64 {
    let bl = BranchLengths::new(b.to_vec()).unwrap();
    log_likelihood(pa, t, &bl).unwrap() + log_prior(t, &bl)
}

/// Maximum a posteriori branch lengths by gradient ascent in log space.
fn map_lengths(pa: &PatternAlignment, t: &Topology) -> Vec<f64> {
    let mut x = vec![(0.1f64).ln(); t.edge_count()];
    let mut step = 0.01;
    let mut best = log_joint(pa, t, &x.iter().map(|v| v.exp()).collect::<Vec<_>>());
    for _ in 0..4000 {
        let b: Vec<f64> = x.iter().map(|v| v.exp()).collect();
        let bl = BranchLengths::new(b.clone()).unwrap();
        let gl = grad_branch_lengths(pa, t, &bl).unwrap();
        let gp = log_prior_gradient(&bl);
        let cand: Vec<f64> = (0..x.len())
            .map(|e| (x[e] + step * (gl[e] + gp[e]) * b[e]).clamp(-20.0, 3.0))
            .collect();
        let val = log_joint(pa, t, &cand.iter().map(|v| v.exp()).collect::<Vec<_>>());
        if val > best {
            best = val;
            x = cand;
            step *= 1.2;
        } else {
            step *= 0.5;
        }
    }
    x.iter().map(|v| v.exp()).collect()
}

/// `ln P(Y)` by summing over every topology, with each branch integral
/// estimated by defensive importance sampling: an even mixture of the prior
/// and a lognormal centred on the MAP lengths. Returns the estimate and its
/// standard error.
pub fn exhaustive_mll(pa: &PatternAlignment, samples: usize, seed: u64) -> (f64, f64) {
    let n = pa.taxon_count();
    let mut r = rng(seed);
    let exp = Exp::new(10.0).unwrap();
    let sd = 0.5;
    let mut parts = Vec::new();
    for t in all_topologies(n) {
        let centre: Vec<f64> = map_lengths(pa, &t).iter().map(|b| b.ln()).collect();
        let logw: Vec<f64> = (0..samples)
            .map(|_| {
                let b: Vec<f64> = if r.random::<bool>() {
                    centre
                        .iter()
                        .map(|c| {
                            let z: f64 = StandardNormal.sample(&mut r);
                            (c + sd * z).exp()
                        })
                        .collect()
                } else {
                    (0..centre.len()).map(|_| { let x: f64 = exp.sample(&mut r); x.max(1e-300) }).collect()
                };
                let ln_prior_b: f64 = b.iter().map(|x: &f64| 10f64.ln() - 10.0 * x).sum();
                let ln_ln: f64 = b
                    .iter()
                    .zip(&centre)
                    .map(|(x, c)| {
                        let u = (x.ln() - c) / sd;
                        -0.5 * u * u - sd.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln() - x.ln()
                    })
                    .sum();
                let q = 0.5f64.ln() + log_add(ln_prior_b, ln_ln);
                log_joint(pa, &t, &b) - q
            })
            .collect();
        let top = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = logw.iter().map(|l| (l - top).exp()).collect();
        let (m, se) = mean_se(&w);
        parts.push((top + m.ln(), top, m, se));
    }
    let top = parts.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = parts.iter().map(|p| (p.0 - top).exp()).sum();
    let var: f64 = parts.iter().map(|p| ((p.1 - top).exp() * p.3).powi(2)).sum();
    (top + z.ln(), var.sqrt() / z)
}

fn log_add(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Weighted site patterns from explicit 4-bit codes.
pub fn patterns_from_codes(rows: &[&str]) -> PatternAlignment {
    let n = rows.len();
    let m = rows[0].len();
    let pats = (0..m)
        .map(|s| (0..n).map(|t| encode_base(rows[t].as_bytes()[s]).unwrap()).collect())
        .collect::<Vec<Vec<u8>>>();
    PatternAlignment::from_parts(names(n), pats, vec![1.0; m]).unwrap()
}
