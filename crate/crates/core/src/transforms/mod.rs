//! Transforms consuming and producing metered algorithms.

pub mod dp;
pub mod rep;
