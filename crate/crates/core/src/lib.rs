//! Simulator and detectors for an acid/base (pH) molecular communication link.
//!
//! Bits are sent as short acid (bit 0) or base (bit 1) injections into a
//! flowing channel and received as a pH time series. The crate covers the
//! whole chain: the synthetic channel, framing and synchronization, per-symbol
//! features, three detectors (rate-of-change threshold, RBF-kernel SVM and a
//! recurrent LSTM/RNN sequence detector) and the BER evaluation harness.

// `!(x > 0.0)` is used on purpose so NaN fails validation
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod channel;
pub mod config;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod features;
pub mod framing;
pub mod rnn;
pub mod slope;
pub mod standardize;
pub mod svm;

pub use error::{Error, Result};
