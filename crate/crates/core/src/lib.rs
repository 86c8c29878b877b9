//! Proof-producing Simplex with ReLU case splitting, plus an exact
//! checker for the resulting proof trees.

pub mod checker;
pub mod frontend;
pub mod generate;
pub mod lp_core;
pub mod proof_format;
pub mod scalar;
pub mod search;
pub mod simplex;
pub mod tightening;

pub use lp_core::{
    Assignment, BoundKind, BoundProfile, Equation, LpError, Query, ReluPair, Side, SimplexConfig,
    Tableau, VarId,
};
pub use scalar::{ExtendedScalar, Float, Rational, Scalar};
