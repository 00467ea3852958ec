//! Dense linear algebra, matrix exponential, FFT and seeded randomness.

mod expm;
pub mod fft;
mod matrix;
pub mod ops;
mod rng;

pub use expm::{expm, expm_augmented};
pub use fft::{fft, fft_convolve, ifft, ifft_prefix, ComplexVector};
pub use matrix::Matrix;
pub use rng::SeededRng;
