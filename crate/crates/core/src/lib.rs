//! Delay Network (DN) memory and the parallelizable Legendre Memory Unit.
//!
//! The DN is a linear time-invariant system whose state holds a Legendre
//! projection of a sliding window of its input. Because it is linear and its
//! discretized matrices are frozen, its state sequence can be computed three
//! equivalent ways:
//!
//! * [`lti::scan_sequential`]: the recurrence `m_t = Ā m_{t-1} + B̄ u_t`,
//! * [`lti::conv_dense`]: a causal convolution with the impulse response `H`,
//! * [`lti::conv_fft`]: the same convolution evaluated in Fourier space,
//!
//! plus [`lti::final_state`] when only `m_n` is needed.
//!
//! On top of that sit the layers ([`layers`]), a small Adam-based training
//! engine ([`train`]) and dataset generators ([`data`]).

pub mod data;
pub mod dn;
pub mod error;
pub mod layers;
pub mod lti;
pub mod numerics;
pub mod train;

pub use error::{Error, Result};
