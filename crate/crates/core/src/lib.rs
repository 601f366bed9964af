//! Error-state Kalman filtering on compound manifolds.
//!
//! [`manifold`] supplies R^n, SO(3) and S^2 primitives with the encapsulation
//! operators and their Jacobians, [`filter`] runs the iterated filter on any
//! [`filter::SystemModel`], and [`models`] holds ready-made models.

pub mod filter;
pub mod manifold;
pub mod models;

pub use filter::{FilterError, FilterState, IteratedFilter, SystemModel, UpdateConfig, UpdateDiagnostics};
pub use manifold::{Manifold, ManifoldError, StatePoint};
