// Negated float comparisons are used on purpose: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod classifier;
pub mod cli;
pub mod dataset;
pub mod detectors;
pub mod ensemble;
pub mod error;
pub mod io;
pub mod metrics;
pub mod numerics;
pub mod pipeline;
pub mod toy_data;
