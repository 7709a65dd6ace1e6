//! Numerical engine for scalar-curvature expansions on projectivized vector
//! bundles `ℙE* → M`.
//!
//! The crate evaluates exact pointwise geometry of the Kähler forms
//! `ω_k = ω_g + k ω` through truncated Taylor jets of their potentials, checks
//! the large-`k` expansions of contractions, Laplacians and scalar curvature
//! against that ground truth, builds order-two approximate extremal metrics,
//! solves the symmetry-reduced extremal equation by a contraction iteration,
//! and evaluates the moment map on finite-dimensional connection families.
//!
//! Conventions: a Kähler form is `ω = i g_{ab̄} dz^a∧dz̄^b`, the Laplacian is
//! `Δf = Λ_ω(i∂̄∂f)` (nonnegative spectrum, first eigenvalue 2 on the round
//! `ℙ¹`), `Ric = i∂̄∂ log det g` and `Scal = Λ_ω Ric`.

pub mod approx;
pub mod basegeom;
pub mod config;
pub mod error;
pub mod expansion;
pub mod jet;
pub mod kahler;
pub mod momentmap;
pub mod pointalg;
pub mod quadrature;
pub mod report;
pub mod ruledgeom;
pub mod solver;
pub mod sphere;
pub mod suite;

pub use basegeom::{BaseKind, BaseManifold, BasePoint, HamiltonianSpace};
pub use error::{Error, Result};
pub use expansion::{ExpansionRecord, SigmaE};
pub use jet::{Jet, JetMatrix, JetSpace};
pub use num_complex::Complex64 as C64;
pub use pointalg::{EndValuedFormAtPoint, FormAtPoint};
pub use ruledgeom::{HermitianBundleData, TotalPoint};
pub use solver::MomentumProfile;
