//! Discrete Lorentzian products `(I × X, −h² dt² + ρ_t² d_X²)` over weighted graphs.

// Negated float comparisons reject NaN on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod base_space;
pub mod causal_core;
pub mod error;
pub mod manifold_compat;
pub mod metric_family;
pub mod ode_engine;
pub mod product_geometry;
pub mod tol;
pub mod transport_curvature;

pub use base_space::{BaseSpace, GraphDoc, NodeId, SpacePath};
pub use causal_core::{
    build_causal_dag, causal_diamond, classify, lorentz_length, maximizer, time_separation, variational_length, CausalClass,
    CausalDAG, CausalKind, StepClass, TauUnits, TimeSeparation, TimeSeparationTable,
};
pub use error::{GeomError, Result};
pub use manifold_compat::{gq_length, q_reduce, regularity_audit, GridLorentzMetric, QReduction};
pub use metric_family::{ConformalFamily, FamilySpec, Field, FieldSpec, ParamPath, Verdict};
pub use product_geometry::{CurveSample, Event, Orientation, ProductCurve, ProductSpacetime};
