//! JC69 likelihood by Felsenstein pruning, exact branch-length gradients,
//! the topology/branch-length prior and forward simulation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::seqdata::{Alignment, PatternAlignment, STATES};
use crate::tree::{Arc, BranchLengths, Topology};

/// Rate of the exponential branch-length prior.
pub const PRIOR_RATE: f64 = 10.0;

const RESCALE_BELOW: f64 = 1e-280;

#[derive(Debug, Error, PartialEq)]
pub enum LikelihoodError {
    #[error("alignment has {alignment} taxa but the tree has {tree} tips")]
    TaxonCount { alignment: usize, tree: usize },
    #[error("expected {expected} branch lengths, found {found}")]
    LengthCount { expected: usize, found: usize },
    #[error("branch length {0} is negative or not finite")]
    InvalidLength(f64),
    #[error("node {0} is not an internal node")]
    NotInternal(usize),
}

/// Diagonal and off-diagonal entries of `P(t)` and of `dP/dt`.
#[derive(Clone, Copy, Debug)]
struct Jc {
    same: f64,
    diff: f64,
    d_same: f64,
    d_diff: f64,
}

impl Jc {
    fn new(t: f64) -> Self {
        let e = (-4.0 * t / 3.0).exp();
        Self {
            same: 0.25 + 0.75 * e,
            diff: 0.25 - 0.25 * e,
            d_same: -e,
            d_diff: e / 3.0,
        }
    }
}

/// The 4×4 JC69 transition matrix.
pub fn jc69_transition(t: f64) -> Result<[[f64; 4]; 4], LikelihoodError> {
    if !(t >= 0.0) {
        return Err(LikelihoodError::InvalidLength(t));
    }
    let jc = Jc::new(t);
    let mut p = [[jc.diff; 4]; 4];
    for (i, row) in p.iter_mut().enumerate() {
        row[i] = jc.same;
    }
    Ok(p)
}

type Partial = [f64; 4];

#[inline]
fn apply(v: &Partial, same: f64, diff: f64) -> Partial {
    let s = v[0] + v[1] + v[2] + v[3];
    let a = same - diff;
    let b = diff * s;
    [b + a * v[0], b + a * v[1], b + a * v[2], b + a * v[3]]
}

#[inline]
fn dot(a: &Partial, b: &Partial) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2] + a[3] * b[3]
}

#[inline]
fn tip_partial(bits: u8) -> Partial {
    let mut p = [0.0; 4];
    for (x, v) in p.iter_mut().enumerate() {
        if bits & (1 << x) != 0 {
            *v = 1.0;
        }
    }
    p
}

/// Divides by the largest entry when it drops below the threshold and
/// returns the log of the factor removed.
#[inline]
fn rescale(v: &mut Partial) -> f64 {
    let m = v[0].max(v[1]).max(v[2]).max(v[3]);
    if m < RESCALE_BELOW && m > 0.0 {
        for x in v.iter_mut() {
            *x /= m;
        }
        m.ln()
    } else {
        0.0
    }
}

fn check(pa: &PatternAlignment, t: &Topology, b: &BranchLengths) -> Result<(), LikelihoodError> {
    if pa.taxon_count() != t.tip_count() {
        return Err(LikelihoodError::TaxonCount {
            alignment: pa.taxon_count(),
            tree: t.tip_count(),
        });
    }
    if b.len() != t.edge_count() {
        return Err(LikelihoodError::LengthCount {
            expected: t.edge_count(),
            found: b.len(),
        });
    }
    if let Some(&bad) = b.as_slice().iter().find(|x| !(**x >= 0.0) || !x.is_finite()) {
        return Err(LikelihoodError::InvalidLength(bad));
    }
    Ok(())
}

/// Postorder arcs of `t` re-rooted at the internal node `root`.
fn arcs_from(t: &Topology, root: usize) -> Vec<Arc> {
    let mut pre = Vec::with_capacity(t.node_count() - 1);
    let mut stack = vec![(root, usize::MAX)];
    while let Some((v, from)) = stack.pop() {
        for &(w, e) in t.neighbors(v).iter().rev() {
            if w != from {
                pre.push(Arc {
                    child: w,
                    parent: v,
                    edge: e,
                });
                stack.push((w, v));
            }
        }
    }
    pre.reverse();
    pre
}

struct Pruned {
    down: Vec<Vec<Partial>>,
    msg: Vec<Vec<Partial>>,
    log_lik: f64,
}

fn prune(pa: &PatternAlignment, t: &Topology, b: &BranchLengths, arcs: &[Arc], root: usize, keep: bool) -> Pruned {
    let n = t.tip_count();
    let np = pa.pattern_count();
    let nodes = t.node_count();
    let mut down: Vec<Vec<Partial>> = vec![Vec::new(); nodes];
    for (tip, slot) in down.iter_mut().enumerate().take(n) {
        *slot = pa.patterns().iter().map(|p| tip_partial(p[tip])).collect();
    }
    for slot in down.iter_mut().skip(n) {
        *slot = vec![[1.0; 4]; np];
    }
    let mut msg: Vec<Vec<Partial>> = vec![Vec::new(); nodes];
    let mut log_scale = vec![0.0; np];
    for arc in arcs {
        let c = arc.child;
        if c >= n {
            for (v, s) in down[c].iter_mut().zip(log_scale.iter_mut()) {
                *s += rescale(v);
            }
        }
        let jc = Jc::new(b.get(arc.edge));
        let m: Vec<Partial> = down[c].iter().map(|v| apply(v, jc.same, jc.diff)).collect();
        for (acc, mv) in down[arc.parent].iter_mut().zip(&m) {
            for x in 0..4 {
                acc[x] *= mv[x];
            }
        }
        if keep {
            msg[c] = m;
        }
    }
    let mut log_lik = 0.0;
    for ((v, s), w) in down[root].iter_mut().zip(&log_scale).zip(pa.weights()) {
        let extra = rescale(v);
        let site = 0.25 * (v[0] + v[1] + v[2] + v[3]);
        log_lik += w * (site.ln() + s + extra);
    }
    Pruned { down, msg, log_lik }
}

/// `Σ_p w_p ln Σ_x π_x L_root(x)` with uniform `π`.
pub fn log_likelihood(pa: &PatternAlignment, t: &Topology, b: &BranchLengths) -> Result<f64, LikelihoodError> {
    check(pa, t, b)?;
    Ok(prune(pa, t, b, t.postorder(), t.root(), false).log_lik)
}

/// Same value computed with the pruning recursion rooted at `root`.
pub fn log_likelihood_at(
    pa: &PatternAlignment,
    t: &Topology,
    b: &BranchLengths,
    root: usize,
) -> Result<f64, LikelihoodError> {
    check(pa, t, b)?;
    if root < t.tip_count() || root >= t.node_count() {
        return Err(LikelihoodError::NotInternal(root));
    }
    Ok(prune(pa, t, b, &arcs_from(t, root), root, false).log_lik)
}

/// Log-likelihood and its gradient with respect to every branch length.
pub fn log_likelihood_and_gradient(
    pa: &PatternAlignment,
    t: &Topology,
    b: &BranchLengths,
) -> Result<(f64, Vec<f64>), LikelihoodError> {
    check(pa, t, b)?;
    let n = t.tip_count();
    let root = t.root();
    let arcs = t.postorder();
    let pruned = prune(pa, t, b, arcs, root, true);
    let np = pa.pattern_count();

    let mut children: Vec<Vec<usize>> = vec![Vec::new(); t.node_count()];
    for arc in arcs {
        children[arc.parent].push(arc.child);
    }
    let mut outer: Vec<Vec<Partial>> = vec![Vec::new(); t.node_count()];
    outer[root] = vec![[0.25; 4]; np];
    let mut grad = vec![0.0; t.edge_count()];
    let mut u: Vec<Partial> = vec![[0.0; 4]; np];
    for arc in arcs.iter().rev() {
        let (c, p) = (arc.child, arc.parent);
        u.copy_from_slice(&outer[p]);
        for &s in &children[p] {
            if s != c {
                for (acc, mv) in u.iter_mut().zip(&pruned.msg[s]) {
                    for x in 0..4 {
                        acc[x] *= mv[x];
                    }
                }
            }
        }
        let jc = Jc::new(b.get(arc.edge));
        let mut g = 0.0;
        for ((uv, dv), (mv, w)) in u
            .iter_mut()
            .zip(&pruned.down[c])
            .zip(pruned.msg[c].iter().zip(pa.weights()))
        {
            rescale(uv);
            let dm = apply(dv, jc.d_same, jc.d_diff);
            g += w * dot(uv, &dm) / dot(uv, mv);
        }
        grad[arc.edge] = g;
        if c >= n {
            outer[c] = u.iter().map(|v| apply(v, jc.same, jc.diff)).collect();
        }
    }
    Ok((pruned.log_lik, grad))
}

/// Gradient of [`log_likelihood`] with respect to the branch lengths.
pub fn grad_branch_lengths(
    pa: &PatternAlignment,
    t: &Topology,
    b: &BranchLengths,
) -> Result<Vec<f64>, LikelihoodError> {
    log_likelihood_and_gradient(pa, t, b).map(|(_, g)| g)
}

/// `ln((2N−5)!!)`, the log number of unrooted binary topologies on N tips.
pub fn ln_topology_count(n: usize) -> f64 {
    (3..=(2 * n).saturating_sub(5)).step_by(2).map(|k| (k as f64).ln()).sum()
}

/// Uniform topology prior plus independent Exp(10) branch lengths.
pub fn log_prior(t: &Topology, b: &BranchLengths) -> f64 {
    let lengths: f64 = b
        .as_slice()
        .iter()
        .map(|&x| PRIOR_RATE.ln() - PRIOR_RATE * x)
        .sum();
    lengths - ln_topology_count(t.tip_count())
}

/// Derivative of [`log_prior`] with respect to each branch length.
pub fn log_prior_gradient(b: &BranchLengths) -> Vec<f64> {
    vec![-PRIOR_RATE; b.len()]
}

/// Draws `sites` columns from the JC69 process on `(t, b)`.
pub fn simulate_alignment(
    t: &Topology,
    b: &BranchLengths,
    taxa: &[String],
    sites: usize,
    seed: u64,
) -> Alignment {
    assert_eq!(taxa.len(), t.tip_count(), "one name per tip");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = t.tip_count();
    let mut rows = vec![Vec::with_capacity(sites); n];
    let mut state = vec![0usize; t.node_count()];
    let probs: Vec<Jc> = b.as_slice().iter().map(|&x| Jc::new(x)).collect();
    for _ in 0..sites {
        state[t.root()] = rng.random_range(0..4);
        for arc in t.postorder().iter().rev() {
            let parent = state[arc.parent];
            let jc = probs[arc.edge];
            let u: f64 = rng.random();
            state[arc.child] = if u < jc.same {
                parent
            } else {
                let k = ((u - jc.same) / jc.diff).floor() as usize;
                let k = k.min(2);
                (parent + 1 + k) % 4
            };
        }
        for (tip, row) in rows.iter_mut().enumerate() {
            row.push(STATES[state[tip]]);
        }
    }
    Alignment::new(taxa.to_vec(), rows).expect("simulated alignment is valid")
}
