//! Variational Bayesian phylogenetic inference with geometric topology
//! representations.
//!
//! Distributions over unrooted binary topologies are expressed as the
//! pushforward of continuous distributions over tip coordinates (Euclidean or
//! Lorentz-model hyperbolic) through a deterministic distance-based tree
//! builder. The crate provides the likelihood machinery, the variational
//! families, the gradient estimators with their control variates, and a
//! training loop.
//!
//! Module map:
//!
//! - [`seqdata`]: FASTA/NEXUS ingestion, site-pattern compression, Hamming distances.
//! - [`tree`]: topologies, splits, Newick I/O, RF distance, consensus, sample statistics.
//! - [`geometry`]: Lorentz model operations and the tip-coordinate distributions.
//! - [`decoder`]: the link from coordinates to topologies (NJ / UPGMA).
//! - [`likelihood`]: JC69 pruning likelihood, branch gradients, priors, simulation.
//! - [`variational`]: `Q(z)`, `Q(B|tau)` and `R(z|tau)`.
//! - [`estimators`]: lower bounds and every gradient estimator.
//! - [`trainer`]: initialisation, Adam, schedules, MLL estimation.
//! - [`bench`]: the extended-run grid harness.

pub mod bench;
pub mod decoder;
pub mod dual;
pub mod estimators;
pub mod geometry;
pub mod likelihood;
pub mod rng;
pub mod seqdata;
pub mod trainer;
pub mod tree;
pub mod variational;

/// Version string stamped into every output file header.
pub const VERSION: &str = concat!("geophy ", env!("CARGO_PKG_VERSION"));

pub use decoder::{LinkMethod, Space};
pub use geometry::DistanceMatrix;
pub use seqdata::{Alignment, PatternAlignment};
pub use tree::{BranchLengths, Split, Topology};
