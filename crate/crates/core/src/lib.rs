//! Numerical instrument for many-body localization in a disordered spin
//! chain.
//!
//! The chain Hamiltonian carries random longitudinal fields, random
//! transverse fields scaled by a global coupling `gamma`, and random
//! exchange bonds, with spins outside the chain frozen at +1. For small
//! `gamma` the eigenstates stay close to classical spin configurations;
//! this crate measures that localization at desk scale (chains up to 14
//! sites) and cross-checks everything against dense exact
//! diagonalization.
//!
//! The pieces:
//!
//! - [`model`] — couplings, diagonal energies, the dense Hamiltonian, and
//!   seeded disorder sampling.
//! - [`oracle`] — exact-diagonalization ground truth, minimum level
//!   spacings, level-statistics curves, and the exact radial-homogeneity
//!   identities satisfied by eigenvalue differences.
//! - [`flow`] — the multiscale rotation flow: resonance detection, an
//!   antisymmetric generator per scale, exact orthogonal conjugation, and
//!   small-block diagonalization, iterated over the length-scale schedule
//!   `L_k = (15/8)^k` until the effective Hamiltonian is diagonal.
//! - [`geometry`] — the resonant-block taxonomy (small/large blocks with
//!   diameter and separation rules) and Monte Carlo connectivity
//!   estimators for the associated percolation problem.
//! - [`observables`] — eigenstate expectations, state averages, and
//!   connected correlations, computed from either the flow rotation or
//!   oracle eigenvectors.
//! - [`harness`] — seeded ensemble driver, aggregation, and report
//!   emission.

pub mod flow;
pub mod geometry;
pub mod harness;
pub mod linalg;
pub mod model;
pub mod observables;
pub mod oracle;
pub mod stats;

pub use model::{Disorder, ModelParams, OperatorMatrix, SpinConfig};
