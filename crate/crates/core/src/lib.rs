//! Recurrent sequence classifiers built around the LSTA cell: an LSTM whose
//! cell-state update carries an extra attention term computed from its own
//! forget and input gates. LSTM, GRU and bidirectional baselines share the
//! same hand-derived BPTT and are checked against central finite differences.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cells;
pub mod data;
pub mod error;
pub mod linalg;
pub mod network;
pub mod optim;

pub use error::{Error, Result};
