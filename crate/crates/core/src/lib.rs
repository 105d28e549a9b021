//! Software twin of a wearable multimodal biosignal platform.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dsp;
pub mod synth;
pub mod afe;
pub mod power;
pub mod proto;
pub mod ssvep;
pub mod runtime;
