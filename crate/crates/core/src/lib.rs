//! Exoskeleton runtime: configuration model, joint simulator, control loop
//! and the text wire protocol.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod control;
pub mod model;
pub mod proto;
pub mod runtime;
pub mod sim;
