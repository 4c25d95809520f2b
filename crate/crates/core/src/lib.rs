//! Communication-efficient distributed PCA.
//!
//! Nodes of a simulated star network each send a truncated local SVD
//! summary (`Σ^(t₁)`, `V^(t₁)`) to a coordinator, which stacks the summaries
//! and takes a second SVD. The resulting subspace is a proxy for the global
//! principal components that is good enough for low-rank approximation,
//! k-means and principal component regression. A fast variant first
//! compresses each node with a boosted CountSketch embedding and replaces
//! every SVD with a randomized SVD.
//!
//! Module map:
//! - [`linalg`]: dense matrices, QR/SVD, projections, `dist_sq`, `tau`.
//! - [`sketching`]: CountSketch plans, distortion probes, the success booster.
//! - [`rsvd`]: randomized SVD with power iterations.
//! - [`protocol`]: partitioning, the two-stage protocol, word-exact transcripts.
//! - [`clustering`]: Lloyd/k-means++, the distributed k-means pipeline, PCR.
//! - [`synth`]: seeded synthetic data used by tests, benches and the CLI.
//! - [`verify`]: executable checks of the approximation guarantees.

pub mod clustering;
pub mod error;
pub mod linalg;
pub mod par;
pub mod protocol;
pub mod rng;
pub mod rsvd;
pub mod sketching;
pub mod synth;
pub mod verify;

pub use error::{Error, Result};
pub use linalg::{Matrix, Subspace, SvdFactors};
