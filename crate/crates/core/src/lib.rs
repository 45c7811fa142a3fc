//! Sparse matrix-variate Gaussian-process blockmodels for binary networks.
//!
//! A latent interaction matrix `M` gets a matrix-variate GP prior whose row
//! and column covariance is an RBF kernel over per-node membership vectors
//! `U`; observations are probit. Fitting alternates a closed-form
//! variational E-step over `(Z, M, beta)` with an L1-penalized quasi-Newton
//! M-step over `U`. The eigendecomposition of the kernel turns every
//! Kronecker-structured quantity into `n x n` work.

pub mod cli;
pub mod error;
pub mod estep;
pub mod evaluation;
pub mod kernel;
pub mod mstep;
pub mod netdata;
pub mod normal;
pub mod owlqn;
pub mod trainer;

pub use error::{Error, Result};
pub use kernel::{KernelParams, SpectralCache};
pub use mstep::MembershipMatrix;
pub use netdata::{GroundTruthMembership, ObservationMask, ObservedNetwork, SideInfo};
pub use trainer::{FitConfig, FittedModel};
