//! Unrooted binary topologies and everything computed from them: splits,
//! Newick I/O, Robinson-Foulds distances, majority-rule consensus and
//! topology-sample statistics.
//!
//! Nodes `0..N` are tips in taxon order; `N..2N-2` are internal nodes of
//! degree three. Two topologies are equal when their nontrivial split sets are
//! equal, regardless of internal node numbering or edge order.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::hash::{Hash, Hasher};

use rand::Rng;
use rand_distr::{Distribution, Exp};
use thiserror::Error;

use crate::geometry::DistanceMatrix;

#[derive(Debug, Error, PartialEq)]
pub enum TreeError {
    #[error("a tree needs at least 3 tips, found {0}")]
    TooFewTips(usize),
    #[error("expected {expected} edges for {tips} tips, found {found}")]
    EdgeCount {
        tips: usize,
        expected: usize,
        found: usize,
    },
    #[error("node {node} has degree {degree}, expected {expected}")]
    Degree {
        node: usize,
        degree: usize,
        expected: usize,
    },
    #[error("edge endpoint {0} is out of range")]
    NodeOutOfRange(usize),
    #[error("tree is not connected")]
    Disconnected,
    #[error("internal node with {0} children; only binary trees are supported")]
    NotBinary(usize),
    #[error("unknown taxon label '{0}'")]
    UnknownTaxon(String),
    #[error("taxon '{0}' appears more than once")]
    DuplicateTaxon(String),
    #[error("tree has {found} tips but {expected} taxa were expected")]
    TaxonCount { expected: usize, found: usize },
    #[error("leaf without a label")]
    UnlabeledLeaf,
    #[error("Newick parse error at byte {pos}: {msg}")]
    Newick { pos: usize, msg: String },
    #[error("branch length {0} is not a positive finite number")]
    InvalidLength(f64),
    #[error("branch length vector has {found} entries for {expected} edges")]
    LengthCount { expected: usize, found: usize },
    #[error("trees are over different taxon sets ({0} vs {1} tips)")]
    TaxonSetMismatch(usize, usize),
    #[error("split set is not a fully resolved compatible set")]
    Unresolved,
    #[error("no trees supplied")]
    NoSamples,
    #[error("invalid split encoding '{0}'")]
    SplitEncoding(String),
}

/// A set of tips stored as a bitset. Canonical splits hold the side of a
/// bipartition that does not contain tip 0.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Split {
    words: Vec<u64>,
}

impl Split {
    pub fn empty(tip_count: usize) -> Self {
        Self {
            words: vec![0; tip_count.div_ceil(64).max(1)],
        }
    }

    pub fn from_tips(tip_count: usize, tips: impl IntoIterator<Item = usize>) -> Self {
        let mut s = Self::empty(tip_count);
        for t in tips {
            s.insert(t);
        }
        s
    }

    /// Canonical form of the bipartition with one side `tips`.
    pub fn canonical(tip_count: usize, tips: impl IntoIterator<Item = usize>) -> Self {
        Self::from_tips(tip_count, tips).canonicalize(tip_count)
    }

    pub fn insert(&mut self, tip: usize) {
        self.words[tip / 64] |= 1 << (tip % 64);
    }

    pub fn contains(&self, tip: usize) -> bool {
        self.words
            .get(tip / 64)
            .is_some_and(|w| w & (1 << (tip % 64)) != 0)
    }

    pub fn len(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    pub fn tips(&self) -> impl Iterator<Item = usize> + '_ {
        self.words.iter().enumerate().flat_map(|(i, &w)| {
            (0..64).filter(move |b| w & (1 << b) != 0).map(move |b| i * 64 + b)
        })
    }

    pub fn min_tip(&self) -> Option<usize> {
        self.words
            .iter()
            .enumerate()
            .find(|(_, &w)| w != 0)
            .map(|(i, &w)| i * 64 + w.trailing_zeros() as usize)
    }

    pub fn complement(&self, tip_count: usize) -> Self {
        let mut out = Self::empty(tip_count);
        for t in 0..tip_count {
            if !self.contains(t) {
                out.insert(t);
            }
        }
        out
    }

    pub fn canonicalize(self, tip_count: usize) -> Self {
        if self.contains(0) {
            self.complement(tip_count)
        } else {
            self
        }
    }

    pub fn union(&self, other: &Self) -> Self {
        Self {
            words: self
                .words
                .iter()
                .zip(&other.words)
                .map(|(a, b)| a | b)
                .collect(),
        }
    }

    pub fn is_subset_of(&self, other: &Self) -> bool {
        self.words.iter().zip(&other.words).all(|(a, b)| a & !b == 0)
    }

    pub fn is_disjoint(&self, other: &Self) -> bool {
        self.words.iter().zip(&other.words).all(|(a, b)| a & b == 0)
    }

    /// A single-tip side (or its complement) carries no topological information.
    pub fn is_trivial(&self, tip_count: usize) -> bool {
        let k = self.len();
        k <= 1 || k + 1 >= tip_count
    }

    /// Two canonical splits are compatible when nested or disjoint.
    pub fn is_compatible(&self, other: &Self) -> bool {
        self.is_disjoint(other) || self.is_subset_of(other) || other.is_subset_of(self)
    }

    /// Hex digits of the bitset, most significant word first.
    pub fn to_hex(&self) -> String {
        let s: String = self.words.iter().rev().map(|w| format!("{w:016x}")).collect();
        let trimmed = s.trim_start_matches('0');
        if trimmed.is_empty() {
            "0".into()
        } else {
            trimmed.into()
        }
    }

    pub fn from_hex(tip_count: usize, hex: &str) -> Result<Self, TreeError> {
        let bad = || TreeError::SplitEncoding(hex.to_string());
        let mut out = Self::empty(tip_count);
        let digits = hex.as_bytes();
        let mut word = 0;
        let mut end = digits.len();
        while end > 0 {
            let start = end.saturating_sub(16);
            let chunk = std::str::from_utf8(&digits[start..end]).map_err(|_| bad())?;
            let value = u64::from_str_radix(chunk, 16).map_err(|_| bad())?;
            if value != 0 {
                *out.words.get_mut(word).ok_or_else(bad)? = value;
            }
            word += 1;
            end = start;
        }
        if out.tips().any(|t| t >= tip_count) {
            return Err(bad());
        }
        Ok(out)
    }
}

impl fmt::Debug for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.tips()).finish()
    }
}

/// Positive branch lengths indexed by the topology's edge ids.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchLengths(Vec<f64>);

impl BranchLengths {
    pub fn new(lengths: Vec<f64>) -> Result<Self, TreeError> {
        if let Some(&bad) = lengths.iter().find(|&&b| !(b.is_finite() && b > 0.0)) {
            return Err(TreeError::InvalidLength(bad));
        }
        Ok(Self(lengths))
    }

    pub fn for_topology(t: &Topology, lengths: Vec<f64>) -> Result<Self, TreeError> {
        if lengths.len() != t.edge_count() {
            return Err(TreeError::LengthCount {
                expected: t.edge_count(),
                found: lengths.len(),
            });
        }
        Self::new(lengths)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, edge: usize) -> f64 {
        self.0[edge]
    }
}

/// One step of a rooted traversal: `child` hangs below `parent` via `edge`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Arc {
    pub child: usize,
    pub parent: usize,
    pub edge: usize,
}

/// An unrooted binary tree topology.
#[derive(Debug, Clone)]
pub struct Topology {
    tip_count: usize,
    edges: Vec<(usize, usize)>,
    adjacency: Vec<Vec<(usize, usize)>>,
    edge_splits: Vec<Split>,
    /// Postorder arcs of the tree rooted at the internal node next to tip 0.
    postorder: Vec<Arc>,
    key: Vec<Split>,
}

impl PartialEq for Topology {
    fn eq(&self, other: &Self) -> bool {
        self.tip_count == other.tip_count && self.key == other.key
    }
}

impl Eq for Topology {}

impl Hash for Topology {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.tip_count.hash(state);
        self.key.hash(state);
    }
}

impl Topology {
    /// Builds from an edge list over nodes `0..2N-2` (tips first).
    pub fn from_edges(tip_count: usize, edges: Vec<(usize, usize)>) -> Result<Self, TreeError> {
        if tip_count < 3 {
            return Err(TreeError::TooFewTips(tip_count));
        }
        let node_count = 2 * tip_count - 2;
        let expected = 2 * tip_count - 3;
        if edges.len() != expected {
            return Err(TreeError::EdgeCount {
                tips: tip_count,
                expected,
                found: edges.len(),
            });
        }
        let mut adjacency = vec![Vec::with_capacity(3); node_count];
        for (e, &(a, b)) in edges.iter().enumerate() {
            for v in [a, b] {
                if v >= node_count {
                    return Err(TreeError::NodeOutOfRange(v));
                }
            }
            adjacency[a].push((b, e));
            adjacency[b].push((a, e));
        }
        for (node, nbrs) in adjacency.iter().enumerate() {
            let want = if node < tip_count { 1 } else { 3 };
            if nbrs.len() != want {
                return Err(TreeError::Degree {
                    node,
                    degree: nbrs.len(),
                    expected: want,
                });
            }
        }

        let root = adjacency[0][0].0;
        // Preorder from the root, then reversed for postorder.
        let mut preorder = Vec::with_capacity(node_count - 1);
        let mut visited = vec![false; node_count];
        visited[root] = true;
        let mut stack = vec![root];
        while let Some(node) = stack.pop() {
            for &(nbr, e) in adjacency[node].iter().rev() {
                if !visited[nbr] {
                    visited[nbr] = true;
                    preorder.push(Arc {
                        child: nbr,
                        parent: node,
                        edge: e,
                    });
                    stack.push(nbr);
                }
            }
        }
        if preorder.len() != node_count - 1 {
            return Err(TreeError::Disconnected);
        }
        let postorder: Vec<Arc> = preorder.into_iter().rev().collect();

        let mut below: Vec<Split> = vec![Split::empty(tip_count); node_count];
        for (t, set) in below.iter_mut().enumerate().take(tip_count) {
            set.insert(t);
        }
        let mut edge_splits = vec![Split::empty(tip_count); expected];
        for arc in &postorder {
            let child_set = below[arc.child].clone();
            below[arc.parent] = below[arc.parent].union(&child_set);
            edge_splits[arc.edge] = child_set.canonicalize(tip_count);
        }
        let mut key: Vec<Split> = edge_splits
            .iter()
            .filter(|s| !s.is_trivial(tip_count))
            .cloned()
            .collect();
        key.sort();
        Ok(Self {
            tip_count,
            edges,
            adjacency,
            edge_splits,
            postorder,
            key,
        })
    }

    /// Builds the unique binary topology with the given nontrivial splits.
    pub fn from_splits(tip_count: usize, splits: &[Split]) -> Result<Self, TreeError> {
        if tip_count < 3 {
            return Err(TreeError::TooFewTips(tip_count));
        }
        let mut unique: Vec<Split> = splits
            .iter()
            .map(|s| s.clone().canonicalize(tip_count))
            .collect();
        unique.sort();
        unique.dedup();
        if unique.len() != tip_count - 3 || unique.iter().any(|s| s.is_trivial(tip_count)) {
            return Err(TreeError::Unresolved);
        }
        let h = Hierarchy::new(tip_count, &unique).ok_or(TreeError::Unresolved)?;
        let mut edges = Vec::with_capacity(2 * tip_count - 3);
        // Cluster c (root = 0) becomes internal node tip_count + c.
        edges.push((0, tip_count));
        for (c, kids) in h.children.iter().enumerate() {
            if kids.len() != 2 {
                return Err(TreeError::Unresolved);
            }
            for kid in kids {
                let node = match *kid {
                    Member::Tip(t) => t,
                    Member::Cluster(k) => tip_count + k,
                };
                edges.push((tip_count + c, node));
            }
        }
        Self::from_edges(tip_count, edges)
    }

    pub fn tip_count(&self) -> usize {
        self.tip_count
    }

    pub fn node_count(&self) -> usize {
        2 * self.tip_count - 2
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn neighbors(&self, node: usize) -> &[(usize, usize)] {
        &self.adjacency[node]
    }

    /// Canonical split induced by removing `edge`.
    pub fn edge_split(&self, edge: usize) -> &Split {
        &self.edge_splits[edge]
    }

    /// Tip index of a pendant edge, `None` for internal edges.
    pub fn pendant_tip(&self, edge: usize) -> Option<usize> {
        let (a, b) = self.edges[edge];
        if a < self.tip_count {
            Some(a)
        } else if b < self.tip_count {
            Some(b)
        } else {
            None
        }
    }

    /// Internal node adjacent to tip 0, used as the traversal root.
    pub fn root(&self) -> usize {
        self.adjacency[0][0].0
    }

    /// Arcs in postorder (children before parents) under [`Topology::root`].
    pub fn postorder(&self) -> &[Arc] {
        &self.postorder
    }

    /// Sorted nontrivial splits; the topology's identity.
    pub fn splits(&self) -> &[Split] {
        &self.key
    }

    /// Tips on the far side of `edge` as seen from `node`.
    pub fn side_tips(&self, node: usize, edge: usize) -> Split {
        let (a, b) = self.edges[edge];
        let far = if a == node { b } else { a };
        let mut out = Split::empty(self.tip_count);
        let mut stack = vec![(far, node)];
        while let Some((v, from)) = stack.pop() {
            if v < self.tip_count {
                out.insert(v);
            }
            for &(w, _) in &self.adjacency[v] {
                if w != from {
                    stack.push((w, v));
                }
            }
        }
        out
    }
}

/// Number of nontrivial splits, always `N-3` for binary trees.
pub fn nontrivial_splits(t: &Topology) -> &[Split] {
    t.splits()
}

/// A child entry of a cluster in a laminar split hierarchy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Member {
    Tip(usize),
    Cluster(usize),
}

/// Nesting of compatible canonical splits under the cluster of all tips but 0.
struct Hierarchy {
    /// Cluster 0 is the root; cluster `i + 1` is `splits[i]`.
    children: Vec<Vec<Member>>,
}

impl Hierarchy {
    fn new(tip_count: usize, splits: &[Split]) -> Option<Self> {
        let root = Split::from_tips(tip_count, 1..tip_count);
        let mut clusters: Vec<Split> = vec![root];
        clusters.extend(splits.iter().cloned());
        let sizes: Vec<usize> = clusters.iter().map(Split::len).collect();
        // Parent of a set = smallest strictly larger cluster containing it.
        let parent_of = |set: &Split, size: usize, skip: Option<usize>| -> Option<usize> {
            let mut best: Option<usize> = None;
            for (c, cl) in clusters.iter().enumerate() {
                if Some(c) == skip || sizes[c] <= size || !set.is_subset_of(cl) {
                    continue;
                }
                if best.is_none_or(|b| sizes[c] < sizes[b]) {
                    best = Some(c);
                }
            }
            best
        };
        let mut children = vec![Vec::new(); clusters.len()];
        for c in 1..clusters.len() {
            let p = parent_of(&clusters[c], sizes[c], Some(c))?;
            children[p].push(Member::Cluster(c));
        }
        for t in 1..tip_count {
            let single = Split::from_tips(tip_count, [t]);
            let p = parent_of(&single, 1, None)?;
            children[p].push(Member::Tip(t));
        }
        let min_tip = |m: &Member| match *m {
            Member::Tip(t) => t,
            Member::Cluster(c) => clusters[c].min_tip().unwrap_or(usize::MAX),
        };
        for kids in &mut children {
            kids.sort_by_key(min_tip);
        }
        // Cluster indices shift by one relative to `splits`.
        let children = children
            .into_iter()
            .map(|kids| {
                kids.into_iter()
                    .map(|m| match m {
                        Member::Cluster(c) => Member::Cluster(c),
                        tip => tip,
                    })
                    .collect()
            })
            .collect();
        Some(Self { children })
    }
}

fn format_label(name: &str) -> String {
    let needs_quotes = name
        .chars()
        .any(|c| c.is_whitespace() || "(),:;[]'".contains(c));
    if needs_quotes {
        format!("'{}'", name.replace('\'', "''"))
    } else {
        name.to_string()
    }
}

/// Writes Newick rooted at the internal node next to tip 0, children ordered by
/// their smallest tip index. Lengths use the shortest round-trip decimal form.
pub fn write_newick(t: &Topology, lengths: Option<&BranchLengths>, taxa: &[String]) -> String {
    let n = t.tip_count();
    let mut min_tip = vec![usize::MAX; t.node_count()];
    for (tip, m) in min_tip.iter_mut().enumerate().take(n) {
        *m = tip;
    }
    for arc in t.postorder() {
        min_tip[arc.parent] = min_tip[arc.parent].min(min_tip[arc.child]);
    }

    fn emit(
        t: &Topology,
        node: usize,
        from: Option<usize>,
        min_tip: &[usize],
        lengths: Option<&BranchLengths>,
        taxa: &[String],
        out: &mut String,
    ) {
        if node < t.tip_count() {
            out.push_str(&format_label(&taxa[node]));
            return;
        }
        let mut kids: Vec<(usize, usize)> = t
            .neighbors(node)
            .iter()
            .copied()
            .filter(|&(v, _)| Some(v) != from)
            .collect();
        kids.sort_by_key(|&(v, _)| if v < t.tip_count() { v } else { min_tip[v] });
        out.push('(');
        for (i, &(v, e)) in kids.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            emit(t, v, Some(node), min_tip, lengths, taxa, out);
            if let Some(b) = lengths {
                out.push(':');
                out.push_str(&format!("{}", b.get(e)));
            }
        }
        out.push(')');
    }

    let mut out = String::new();
    emit(t, t.root(), None, &min_tip, lengths, taxa, &mut out);
    out.push(';');
    out
}

/// Result of reading one Newick tree.
#[derive(Debug, Clone)]
pub struct ParsedTree {
    pub taxa: Vec<String>,
    pub topology: Topology,
    pub lengths: Option<BranchLengths>,
}

struct RawNode {
    label: Option<String>,
    length: Option<f64>,
    children: Vec<usize>,
}

struct NewickReader<'a> {
    text: &'a [u8],
    pos: usize,
    nodes: Vec<RawNode>,
}

impl<'a> NewickReader<'a> {
    fn err(&self, msg: &str) -> TreeError {
        TreeError::Newick {
            pos: self.pos,
            msg: msg.to_string(),
        }
    }

    fn skip_ws(&mut self) -> Result<(), TreeError> {
        loop {
            match self.text.get(self.pos) {
                Some(c) if c.is_ascii_whitespace() => self.pos += 1,
                Some(b'[') => {
                    while self.text.get(self.pos).is_some_and(|&c| c != b']') {
                        self.pos += 1;
                    }
                    if self.pos >= self.text.len() {
                        return Err(self.err("unterminated comment"));
                    }
                    self.pos += 1;
                }
                _ => return Ok(()),
            }
        }
    }

    fn peek(&mut self) -> Result<Option<u8>, TreeError> {
        self.skip_ws()?;
        Ok(self.text.get(self.pos).copied())
    }

    fn label(&mut self) -> Result<Option<String>, TreeError> {
        self.skip_ws()?;
        if self.text.get(self.pos) == Some(&b'\'') {
            self.pos += 1;
            let mut out = Vec::new();
            loop {
                match self.text.get(self.pos) {
                    None => return Err(self.err("unterminated quoted label")),
                    Some(b'\'') if self.text.get(self.pos + 1) == Some(&b'\'') => {
                        out.push(b'\'');
                        self.pos += 2;
                    }
                    Some(b'\'') => {
                        self.pos += 1;
                        break;
                    }
                    Some(&c) => {
                        out.push(c);
                        self.pos += 1;
                    }
                }
            }
            return Ok(Some(String::from_utf8_lossy(&out).into_owned()));
        }
        let start = self.pos;
        while let Some(&c) = self.text.get(self.pos) {
            if c.is_ascii_whitespace() || b"(),:;[".contains(&c) {
                break;
            }
            self.pos += 1;
        }
        if self.pos == start {
            Ok(None)
        } else {
            let raw = String::from_utf8_lossy(&self.text[start..self.pos]);
            Ok(Some(raw.trim().to_string()).filter(|s| !s.is_empty()))
        }
    }

    fn length(&mut self) -> Result<Option<f64>, TreeError> {
        if self.peek()? != Some(b':') {
            return Ok(None);
        }
        self.pos += 1;
        self.skip_ws()?;
        let start = self.pos;
        while let Some(&c) = self.text.get(self.pos) {
            if c.is_ascii_digit() || b"+-.eE".contains(&c) {
                self.pos += 1;
            } else {
                break;
            }
        }
        let s = std::str::from_utf8(&self.text[start..self.pos]).unwrap_or("");
        s.parse::<f64>()
            .map(Some)
            .map_err(|_| self.err("invalid branch length"))
    }

    fn subtree(&mut self) -> Result<usize, TreeError> {
        let mut children = Vec::new();
        if self.peek()? == Some(b'(') {
            self.pos += 1;
            loop {
                children.push(self.subtree()?);
                match self.peek()? {
                    Some(b',') => self.pos += 1,
                    Some(b')') => {
                        self.pos += 1;
                        break;
                    }
                    _ => return Err(self.err("expected ',' or ')'")),
                }
            }
        }
        let label = self.label()?;
        let length = self.length()?;
        if children.is_empty() && label.is_none() {
            return Err(TreeError::UnlabeledLeaf);
        }
        self.nodes.push(RawNode {
            label,
            length,
            children,
        });
        Ok(self.nodes.len() - 1)
    }
}

/// Parses one Newick tree. With `reference` the taxon indices follow that
/// order and unknown labels are errors; otherwise tips are numbered in order
/// of appearance. A degree-2 root is suppressed.
pub fn parse_newick(text: &str, reference: Option<&[String]>) -> Result<ParsedTree, TreeError> {
    let mut reader = NewickReader {
        text: text.trim().as_bytes(),
        pos: 0,
        nodes: Vec::new(),
    };
    let mut root = reader.subtree()?;
    if reader.peek()? != Some(b';') {
        return Err(reader.err("expected ';'"));
    }
    reader.pos += 1;
    if reader.peek()?.is_some() {
        return Err(reader.err("trailing characters after ';'"));
    }
    let nodes = reader.nodes;

    // Descend through single-child roots.
    while nodes[root].children.len() == 1 {
        root = nodes[root].children[0];
    }

    let mut leaf_names: Vec<String> = Vec::new();
    let mut stack = vec![root];
    while let Some(v) = stack.pop() {
        if nodes[v].children.is_empty() {
            leaf_names.push(nodes[v].label.clone().expect("leaves are labeled"));
        }
        stack.extend(nodes[v].children.iter().rev());
    }
    let taxa: Vec<String> = match reference {
        Some(r) => {
            if leaf_names.len() != r.len() {
                return Err(TreeError::TaxonCount {
                    expected: r.len(),
                    found: leaf_names.len(),
                });
            }
            r.to_vec()
        }
        None => leaf_names.clone(),
    };
    let index: HashMap<&str, usize> = taxa.iter().enumerate().map(|(i, t)| (t.as_str(), i)).collect();
    let tip_count = taxa.len();
    if tip_count < 3 {
        return Err(TreeError::TooFewTips(tip_count));
    }
    let mut seen = vec![false; tip_count];
    for name in &leaf_names {
        let &i = index
            .get(name.as_str())
            .ok_or_else(|| TreeError::UnknownTaxon(name.clone()))?;
        if seen[i] {
            return Err(TreeError::DuplicateTaxon(name.clone()));
        }
        seen[i] = true;
    }

    // Unrooted adjacency over raw nodes, with root suppression.
    let mut edges: Vec<(usize, usize, Option<f64>)> = Vec::new();
    let root_kids = &nodes[root].children;
    match root_kids.len() {
        2 => {
            let (a, b) = (root_kids[0], root_kids[1]);
            let len = match (nodes[a].length, nodes[b].length) {
                (Some(x), Some(y)) => Some(x + y),
                _ => None,
            };
            edges.push((a, b, len));
        }
        3 => {
            for &k in root_kids {
                edges.push((root, k, nodes[k].length));
            }
        }
        0 => return Err(TreeError::TooFewTips(1)),
        k => return Err(TreeError::NotBinary(k)),
    }
    let mut stack: Vec<usize> = root_kids.clone();
    while let Some(v) = stack.pop() {
        let kids = &nodes[v].children;
        match kids.len() {
            0 => {}
            2 => {
                for &k in kids {
                    edges.push((v, k, nodes[k].length));
                    stack.push(k);
                }
            }
            k => return Err(TreeError::NotBinary(k)),
        }
    }

    // Renumber: tips by taxon index, internal raw nodes sequentially.
    let mut map: HashMap<usize, usize> = HashMap::new();
    let mut next_internal = tip_count;
    let mut id = |raw: usize, map: &mut HashMap<usize, usize>| -> usize {
        if let Some(&x) = map.get(&raw) {
            return x;
        }
        let x = if nodes[raw].children.is_empty() {
            index[nodes[raw].label.as_deref().expect("leaves are labeled")]
        } else {
            next_internal += 1;
            next_internal - 1
        };
        map.insert(raw, x);
        x
    };
    let mut topo_edges = Vec::with_capacity(edges.len());
    let mut lens = Vec::with_capacity(edges.len());
    for &(a, b, len) in &edges {
        let ia = id(a, &mut map);
        let ib = id(b, &mut map);
        topo_edges.push((ia, ib));
        lens.push(len);
    }
    let topology = Topology::from_edges(tip_count, topo_edges)?;
    let lengths = if lens.iter().all(Option::is_some) {
        Some(BranchLengths::new(lens.into_iter().map(Option::unwrap).collect())?)
    } else {
        None
    };
    Ok(ParsedTree {
        taxa,
        topology,
        lengths,
    })
}

/// Reads a file of one Newick tree per line (blank and `#` lines skipped).
/// The first tree fixes the taxon order unless `reference` is given.
pub fn parse_newick_lines(
    text: &str,
    reference: Option<&[String]>,
) -> Result<(Vec<String>, Vec<ParsedTree>), TreeError> {
    let mut taxa: Option<Vec<String>> = reference.map(<[String]>::to_vec);
    let mut trees = Vec::new();
    for line in text.lines().map(str::trim) {
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parsed = parse_newick(line, taxa.as_deref())?;
        if taxa.is_none() {
            taxa = Some(parsed.taxa.clone());
        }
        trees.push(parsed);
    }
    let taxa = taxa.ok_or(TreeError::NoSamples)?;
    Ok((taxa, trees))
}

/// Nontrivial splits of a Newick tree that may contain polytomies, sorted.
/// Tip indices follow `reference`, or order of appearance without it.
pub fn parse_newick_splits(
    text: &str,
    reference: Option<&[String]>,
) -> Result<(Vec<String>, Vec<Split>), TreeError> {
    let mut reader = NewickReader {
        text: text.trim().as_bytes(),
        pos: 0,
        nodes: Vec::new(),
    };
    let root = reader.subtree()?;
    if reader.peek()? != Some(b';') {
        return Err(reader.err("expected ';'"));
    }
    let nodes = reader.nodes;
    let mut leaf_names = Vec::new();
    let mut order = Vec::new();
    let mut stack = vec![root];
    while let Some(v) = stack.pop() {
        order.push(v);
        if nodes[v].children.is_empty() {
            leaf_names.push(nodes[v].label.clone().expect("leaves are labeled"));
        }
        stack.extend(nodes[v].children.iter().rev());
    }
    let taxa: Vec<String> = match reference {
        Some(r) if r.len() != leaf_names.len() => {
            return Err(TreeError::TaxonCount {
                expected: r.len(),
                found: leaf_names.len(),
            })
        }
        Some(r) => r.to_vec(),
        None => leaf_names.clone(),
    };
    let n = taxa.len();
    if n < 3 {
        return Err(TreeError::TooFewTips(n));
    }
    let index: HashMap<&str, usize> = taxa.iter().enumerate().map(|(i, t)| (t.as_str(), i)).collect();
    let mut below: HashMap<usize, Split> = HashMap::new();
    let mut seen = vec![false; n];
    let mut splits = Vec::new();
    for &v in order.iter().rev() {
        let mut s = Split::empty(n);
        if nodes[v].children.is_empty() {
            let name = nodes[v].label.as_deref().expect("leaves are labeled");
            let &i = index.get(name).ok_or_else(|| TreeError::UnknownTaxon(name.to_string()))?;
            if seen[i] {
                return Err(TreeError::DuplicateTaxon(name.to_string()));
            }
            seen[i] = true;
            s.insert(i);
        } else {
            for c in &nodes[v].children {
                s = s.union(&below[c]);
            }
            let canon = s.clone().canonicalize(n);
            if v != root && !canon.is_trivial(n) {
                splits.push(canon);
            }
        }
        below.insert(v, s);
    }
    splits.sort();
    splits.dedup();
    Ok((taxa, splits))
}

/// RF distance between two split sets as returned by [`parse_newick_splits`].
pub fn split_rf_distance(a: &[Split], b: &[Split]) -> usize {
    split_symmetric_difference(a, b)
}

/// Symmetric difference of the nontrivial split sets.
pub fn rf_distance(a: &Topology, b: &Topology) -> Result<usize, TreeError> {
    if a.tip_count() != b.tip_count() {
        return Err(TreeError::TaxonSetMismatch(a.tip_count(), b.tip_count()));
    }
    Ok(split_symmetric_difference(a.splits(), b.splits()))
}

/// `|A Δ B|` for two sorted split lists.
fn split_symmetric_difference(a: &[Split], b: &[Split]) -> usize {
    let (mut i, mut j, mut shared) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                shared += 1;
                i += 1;
                j += 1;
            }
        }
    }
    a.len() + b.len() - 2 * shared
}

/// RF distance divided by its maximum `2(N-3)`.
pub fn normalized_rf(a: &Topology, b: &Topology) -> Result<f64, TreeError> {
    let rf = rf_distance(a, b)?;
    let max = 2 * (a.tip_count() - 3);
    Ok(if max == 0 { 0.0 } else { rf as f64 / max as f64 })
}

/// A possibly multifurcating tree given by its splits and their support.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsensusTree {
    tip_count: usize,
    /// Sorted by split.
    splits: Vec<(Split, f64)>,
}

impl ConsensusTree {
    pub fn tip_count(&self) -> usize {
        self.tip_count
    }

    pub fn splits(&self) -> &[(Split, f64)] {
        &self.splits
    }

    pub fn is_resolved(&self) -> bool {
        self.splits.len() == self.tip_count - 3
    }

    pub fn to_topology(&self) -> Option<Topology> {
        let s: Vec<Split> = self.splits.iter().map(|(s, _)| s.clone()).collect();
        Topology::from_splits(self.tip_count, &s).ok()
    }

    /// RF distance to a binary topology, counting unresolved splits as missing.
    pub fn rf_distance_to(&self, t: &Topology) -> Result<usize, TreeError> {
        if t.tip_count() != self.tip_count {
            return Err(TreeError::TaxonSetMismatch(self.tip_count, t.tip_count()));
        }
        let s: Vec<Split> = self.splits.iter().map(|(s, _)| s.clone()).collect();
        Ok(split_symmetric_difference(&s, t.splits()))
    }

    /// Newick with support values as internal node labels.
    pub fn to_newick(&self, taxa: &[String]) -> String {
        let s: Vec<Split> = self.splits.iter().map(|(s, _)| s.clone()).collect();
        let h = Hierarchy::new(self.tip_count, &s).expect("majority splits are compatible");

        fn emit(
            h: &Hierarchy,
            c: usize,
            support: &[f64],
            taxa: &[String],
            out: &mut String,
        ) {
            out.push('(');
            for (i, m) in h.children[c].iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                match *m {
                    Member::Tip(t) => out.push_str(&format_label(&taxa[t])),
                    Member::Cluster(k) => {
                        emit(h, k, support, taxa, out);
                        out.push_str(&format!("{}", support[k - 1]));
                    }
                }
            }
            out.push(')');
        }
        let support: Vec<f64> = self.splits.iter().map(|(_, f)| *f).collect();
        let mut out = String::from("(");
        out.push_str(&format_label(&taxa[0]));
        let mut inner = String::new();
        emit(&h, 0, &support, taxa, &mut inner);
        // Splice tip 0 in front of the root cluster's children.
        out.push(',');
        out.push_str(&inner[1..]);
        out.push(';');
        out
    }
}

fn check_common_tips(samples: &[Topology]) -> Result<usize, TreeError> {
    let first = samples.first().ok_or(TreeError::NoSamples)?;
    for s in samples {
        if s.tip_count() != first.tip_count() {
            return Err(TreeError::TaxonSetMismatch(first.tip_count(), s.tip_count()));
        }
    }
    Ok(first.tip_count())
}

/// Split frequencies over the samples, sorted by descending frequency.
pub fn bipartition_frequencies(samples: &[Topology]) -> Result<Vec<(Split, f64)>, TreeError> {
    check_common_tips(samples)?;
    let mut counts: BTreeMap<&Split, usize> = BTreeMap::new();
    for t in samples {
        for s in t.splits() {
            *counts.entry(s).or_default() += 1;
        }
    }
    let total = samples.len() as f64;
    let mut out: Vec<(Split, f64)> = counts
        .into_iter()
        .map(|(s, c)| (s.clone(), c as f64 / total))
        .collect();
    out.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Ok(out)
}

/// Tree of all splits present in more than half of the samples.
pub fn majority_consensus(samples: &[Topology]) -> Result<ConsensusTree, TreeError> {
    let tip_count = check_common_tips(samples)?;
    let total = samples.len();
    let mut counts: BTreeMap<&Split, usize> = BTreeMap::new();
    for t in samples {
        for s in t.splits() {
            *counts.entry(s).or_default() += 1;
        }
    }
    let splits = counts
        .into_iter()
        .filter(|&(_, c)| 2 * c > total)
        .map(|(s, c)| (s.clone(), c as f64 / total as f64))
        .collect();
    Ok(ConsensusTree { tip_count, splits })
}

/// Distinct topologies with their counts, most frequent first.
pub fn topology_frequencies(samples: &[Topology]) -> Vec<(Topology, usize)> {
    let mut counts: HashMap<&Topology, (usize, usize)> = HashMap::new();
    for (i, t) in samples.iter().enumerate() {
        counts.entry(t).or_insert((0, i)).0 += 1;
    }
    let mut out: Vec<(Topology, usize, usize)> = counts
        .into_iter()
        .map(|(t, (c, first))| (t.clone(), c, first))
        .collect();
    out.sort_by(|a, b| b.1.cmp(&a.1).then(a.2.cmp(&b.2)));
    out.into_iter().map(|(t, c, _)| (t, c)).collect()
}

/// Simpson's diversity `1 - Σ p_k²` over distinct topologies.
pub fn simpson_diversity(samples: &[Topology]) -> Result<f64, TreeError> {
    check_common_tips(samples)?;
    let n = samples.len() as f64;
    let sum_sq: f64 = topology_frequencies(samples)
        .iter()
        .map(|(_, c)| (*c as f64 / n).powi(2))
        .sum();
    Ok(1.0 - sum_sq)
}

/// Diversity summary of a topology sample.
#[derive(Debug, Clone, PartialEq)]
pub struct TopologyStats {
    pub samples: usize,
    pub distinct: usize,
    pub simpson: f64,
    pub top_frequency: f64,
    /// Topologies needed to reach 95% cumulative frequency.
    pub credible_95: usize,
}

pub fn topology_stats(samples: &[Topology]) -> Result<TopologyStats, TreeError> {
    let simpson = simpson_diversity(samples)?;
    let freqs = topology_frequencies(samples);
    let n = samples.len() as f64;
    let mut cumulative = 0usize;
    let mut credible_95 = 0;
    for (_, c) in &freqs {
        cumulative += c;
        credible_95 += 1;
        if cumulative as f64 >= 0.95 * n - 1e-9 {
            break;
        }
    }
    Ok(TopologyStats {
        samples: samples.len(),
        distinct: freqs.len(),
        simpson,
        top_frequency: freqs[0].1 as f64 / n,
        credible_95,
    })
}

/// Uniformly random topology by stepwise addition on a random edge.
pub fn random_topology<R: Rng + ?Sized>(tip_count: usize, rng: &mut R) -> Topology {
    assert!(tip_count >= 3, "need at least 3 tips");
    let first_internal = tip_count;
    let mut edges: Vec<(usize, usize)> = vec![(0, first_internal), (1, first_internal), (2, first_internal)];
    for tip in 3..tip_count {
        let e = rng.random_range(0..edges.len());
        let (a, b) = edges[e];
        let mid = tip_count + tip - 2;
        edges[e] = (a, mid);
        edges.push((mid, b));
        edges.push((tip, mid));
    }
    Topology::from_edges(tip_count, edges).expect("stepwise addition yields a binary tree")
}

/// Independent exponential branch lengths with the given rate.
pub fn random_branch_lengths<R: Rng + ?Sized>(t: &Topology, rate: f64, rng: &mut R) -> BranchLengths {
    let exp = Exp::new(rate).expect("positive rate");
    let lens = (0..t.edge_count())
        .map(|_| loop {
            let b: f64 = exp.sample(rng);
            if b > 0.0 {
                break b;
            }
        })
        .collect();
    BranchLengths(lens)
}

/// Path-length (patristic) distances between tips.
pub fn path_length_matrix(t: &Topology, b: &BranchLengths) -> DistanceMatrix {
    let n = t.tip_count();
    let mut d = DistanceMatrix::zeros(n);
    for src in 0..n {
        let mut dist = vec![f64::NAN; t.node_count()];
        dist[src] = 0.0;
        let mut stack = vec![src];
        while let Some(v) = stack.pop() {
            for &(w, e) in t.neighbors(v) {
                if dist[w].is_nan() {
                    dist[w] = dist[v] + b.get(e);
                    stack.push(w);
                }
            }
        }
        for dst in (src + 1)..n {
            d.set(src, dst, dist[dst]);
        }
    }
    d
}
