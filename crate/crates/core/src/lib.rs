//! History-matching engine: deck parsing and rewriting, parameter spaces,
//! the weighted NRMSE objective, an ask/tell Bayesian optimizer, a proxy
//! reservoir simulator and the agent pipeline that ties them together.

// NaN-rejecting checks are written as negated comparisons, and the numeric
// kernels index several arrays in lockstep.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod deck;
pub mod exec;
pub mod misfit;
pub mod optimizer;
pub mod paramspace;
pub mod pipeline;
pub mod simulator;
