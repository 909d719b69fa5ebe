//! Galerkin boundary element methods for the two-dimensional Laplacian.
//!
//! The crate covers the single-layer `V`, double-layer `K`, adjoint
//! double-layer `K'` and hypersingular `W` operators on closed and open
//! curves, residual error estimators with adaptive refinement, and a lab for
//! measuring the constants of inverse estimates as generalized eigenvalues.

pub mod error;
pub mod estimators;
pub mod invlab;
pub mod legendre;
pub mod mesh;
pub mod norms;
pub mod operators;
pub mod pairs;
pub mod potentials;
pub mod quadrature;
pub mod spaces;

pub use error::{BemError, Result};
pub use mesh::{build_mesh, refine, BoundaryMesh, BoundaryPoint, Curve, MeshSpec, Vec2};
pub use quadrature::{gauss_legendre, log_gauss_rule, QuadratureRule};
pub use spaces::{DegreeDistribution, DiscreteSpace, SpaceKind, WeightFunction};
