//! The link from tip coordinates to an unrooted binary topology: pairwise
//! distances followed by Neighbor-Joining or UPGMA.

use serde::{Deserialize, Serialize};

pub use crate::geometry::Space;
use crate::geometry::{lorentz_distance, DistanceMatrix};
use crate::tree::Topology;

/// Distance-based tree builder.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LinkMethod {
    #[default]
    Nj,
    Upgma,
}

/// Pairwise distances between ambient tip coordinates.
pub fn distance_matrix(coords: &[Vec<f64>], space: Space) -> DistanceMatrix {
    let n = coords.len();
    let mut d = DistanceMatrix::zeros(n);
    for i in 0..n {
        for j in (i + 1)..n {
            let v = match space {
                Space::Euclidean => coords[i]
                    .iter()
                    .zip(&coords[j])
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt(),
                Space::Hyperbolic => lorentz_distance(&coords[i], &coords[j]),
            };
            d.set(i, j, v);
        }
    }
    d
}

/// Working copy of the distances between active clusters.
struct Active {
    nodes: Vec<usize>,
    dist: Vec<Vec<f64>>,
}

impl Active {
    fn new(d: &DistanceMatrix) -> Self {
        Self {
            nodes: (0..d.size()).collect(),
            dist: d.rows(),
        }
    }

    fn len(&self) -> usize {
        self.nodes.len()
    }

    /// Replaces position `i` by `node` with the given distances and drops `j`.
    fn merge(&mut self, i: usize, j: usize, node: usize, row: Vec<f64>) {
        for (k, &v) in row.iter().enumerate() {
            self.dist[i][k] = v;
            self.dist[k][i] = v;
        }
        self.dist[i][i] = 0.0;
        self.nodes[i] = node;
        self.nodes.remove(j);
        self.dist.remove(j);
        for r in &mut self.dist {
            r.remove(j);
        }
    }
}

/// Lexicographically first pair minimising `score`.
fn argmin_pair(m: usize, score: impl Fn(usize, usize) -> f64) -> (usize, usize) {
    let mut best = (0, 1);
    let mut best_v = f64::INFINITY;
    for i in 0..m {
        for j in (i + 1)..m {
            let v = score(i, j);
            if v < best_v {
                best_v = v;
                best = (i, j);
            }
        }
    }
    best
}

/// Neighbor-Joining topology; branch lengths are not estimated.
pub fn neighbor_join(d: &DistanceMatrix) -> Topology {
    let n = d.size();
    assert!(n >= 3, "neighbor joining needs at least 3 tips");
    let mut act = Active::new(d);
    let mut edges = Vec::with_capacity(2 * n - 3);
    let mut next = n;
    while act.len() > 3 {
        let m = act.len();
        let r: Vec<f64> = act.dist.iter().map(|row| row.iter().sum()).collect();
        let scale = (m - 2) as f64;
        let (i, j) = argmin_pair(m, |i, j| scale * act.dist[i][j] - r[i] - r[j]);
        let dij = act.dist[i][j];
        let row: Vec<f64> = (0..m)
            .map(|k| 0.5 * (act.dist[i][k] + act.dist[j][k] - dij))
            .collect();
        edges.push((next, act.nodes[i]));
        edges.push((next, act.nodes[j]));
        act.merge(i, j, next, row);
        next += 1;
    }
    for &c in &act.nodes {
        edges.push((next, c));
    }
    Topology::from_edges(n, edges).expect("neighbor joining produces a binary tree")
}

/// Average-linkage clustering with the root suppressed.
pub fn upgma(d: &DistanceMatrix) -> Topology {
    let n = d.size();
    assert!(n >= 3, "UPGMA needs at least 3 tips");
    let mut act = Active::new(d);
    let mut sizes = vec![1.0; n];
    let mut edges = Vec::with_capacity(2 * n - 3);
    let mut next = n;
    while act.len() > 2 {
        let m = act.len();
        let (i, j) = argmin_pair(m, |i, j| act.dist[i][j]);
        let (si, sj) = (sizes[i], sizes[j]);
        let row: Vec<f64> = (0..m)
            .map(|k| (si * act.dist[i][k] + sj * act.dist[j][k]) / (si + sj))
            .collect();
        edges.push((next, act.nodes[i]));
        edges.push((next, act.nodes[j]));
        act.merge(i, j, next, row);
        sizes[i] = si + sj;
        sizes.remove(j);
        next += 1;
    }
    edges.push((act.nodes[0], act.nodes[1]));
    Topology::from_edges(n, edges).expect("UPGMA produces a binary tree")
}

/// `τ(z)`: distances in `space` followed by `method`.
pub fn link(coords: &[Vec<f64>], space: Space, method: LinkMethod) -> Topology {
    let d = distance_matrix(coords, space);
    match method {
        LinkMethod::Nj => neighbor_join(&d),
        LinkMethod::Upgma => upgma(&d),
    }
}
