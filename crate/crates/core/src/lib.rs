//! Hop-by-hop ARQ over multi-hop relay chains: closed-form loss models, a
//! per-station retransmission state machine, a deterministic discrete-event
//! kernel to drive it, and experiment sweeps comparing the two.

// `!(x >= 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analytic;
pub mod cli;
pub mod experiments;
pub mod protocol;
pub mod simkernel;
pub mod time;
