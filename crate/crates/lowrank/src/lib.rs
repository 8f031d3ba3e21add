//! Matrix-free linear algebra for graph representation learning.
//!
//! The crate composes large design matrices symbolically as operator DAGs
//! ([`linop`]), factors them with a randomized truncated SVD that only ever
//! requests operator-times-matrix products ([`rsvd`]), and uses the factors to
//! train graph models in closed form ([`models`]): spectral node embeddings
//! for link prediction and least-norm solves for semi-supervised node
//! classification, plus the Gaussian spectral edge kernel and the Split-ReLu
//! network those solutions initialize.
//!
//! The design matrices themselves live in [`design`]; datasets, metrics, and
//! file plumbing in [`graph`], [`metrics`], and [`io`].

pub mod design;
pub mod graph;
pub mod io;
pub mod linop;
pub mod metrics;
pub mod models;
pub mod rsvd;
pub mod sparse;
