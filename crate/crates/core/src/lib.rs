//! Privacy-preserving obfuscation of smart-meter load profiles.
//!
//! Readings are sparse-coded against a learned nonnegative dictionary, the
//! activation vector is perturbed by randomized response, and the perturbed
//! activation is mapped back to watts. The [`evaluation`] module measures how
//! much an appliance-level disaggregation attack loses and how well totals
//! survive.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod evaluation;
pub mod meterdata;
pub mod pipeline;
pub mod randomized_response;
pub mod sparse_coding;
