//! # skewflow
//!
//! A desk-scale workbench for skew-symmetric operators in weighted real
//! inner-product spaces and for the evolution equation `u' = A*u` they
//! induce.
//!
//! The crate models an unbounded operator the way it is used in practice:
//! an ambient matrix together with a strict domain subspace. On top of that
//! model it computes deficiency data, builds skew-symmetric and
//! dissipative extensions through the Cayley transform, evolves the
//! resulting contractive semigroups, and checks candidate trajectories
//! against the weak (generalized-solution) identity.
//!
//! Module map:
//!
//! * [`hilbert`]: weighted inner products, orthonormalization, orthogonal
//!   complements.
//! * [`operator`]: restricted operators, deficiency indices, Cayley data,
//!   extensions, dissipativity and adjoint-inclusion checks.
//! * [`semigroup`]: exact-exponential and Cayley (trapezoidal) steppers.
//! * [`weak`]: weak-residual verification, non-uniqueness witnesses,
//!   splices and the multiplicity demo.
//! * [`transport`]: periodic 2-D transport by divergence-free fields.
//! * [`oracles`]: closed-form ground truth on the interval and half-lines.
//! * [`report`]: deterministic JSON output.

// Negated comparisons reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod error;
pub mod hilbert;
pub mod linalg;
pub mod operator;
pub mod oracles;
pub mod report;
pub mod semigroup;
pub mod transport;
pub mod weak;

pub use error::{Error, Result};
pub use hilbert::{complement_basis, orthonormalize, Space, SubspaceBasis};
pub use linalg::{Action, CsrMatrix};
pub use operator::{
    cayley, check_inclusion_in_adjoint, check_m_dissipative, check_skew_symmetry, deficiency,
    extend, CayleyData, DeficiencyData, Domain, ExtensionKind, ExtensionSpec, Generator,
    RestrictedOperator,
};
pub use semigroup::{adjoint_trajectory, evolve_cayley, evolve_exact, StepMethod, Trajectory};
pub use weak::{
    compare_solutions, gs_residual, semigroup_multiplicity_demo, splice, witness_nonuniqueness,
    GsReport, Sampler, TemporalProfile, TestFunctionFamily,
};

/// Dense column vector used for all states.
pub type Vector = nalgebra::DVector<f64>;
/// Dense matrix type used for ambient actions and factorizations.
pub type Matrix = nalgebra::DMatrix<f64>;
