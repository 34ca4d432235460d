//! Finite-time convergent optimization flows, their discretizations, and
//! tools for comparing the discrete runs with the continuous theory.

// `!(x > 0.0)` is used on purpose throughout: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod bench;
pub mod flows;
pub mod integrators;
pub mod objectives;
