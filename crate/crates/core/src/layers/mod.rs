//! Trainable layers. Every layer maps a [`SequenceBatch`] to a
//! [`SequenceBatch`] and has an explicit backward pass.
//!
//! Training follows a fixed protocol: [`Layer::forward_train`] caches the
//! activations, then [`Layer::backward`] consumes them and returns gradients
//! in the order of [`Layer::params`].

mod activation;
pub mod checkpoint;
mod dense;
mod gated;
mod lmu;
mod model;
mod original;

pub use activation::{sigmoid, Activation};
pub use dense::DenseLayer;
pub use gated::GatedEncoder;
pub use lmu::{ConvBackend, ExecMode, LmuFitConfig, LmuFitLayer, StreamingState};
pub use model::{AnyLayer, LayerSpec, Model};
pub use original::{OriginalLmuCell, OriginalLmuConfig};

use crate::error::{Error, Result};
use crate::lti::SequenceBatch;
use crate::numerics::{Matrix, SeededRng};

pub trait Layer {
    /// Parameter names, aligned with [`Layer::params`].
    fn param_names(&self) -> &'static [&'static str];

    fn params(&self) -> Vec<&Matrix>;

    fn params_mut(&mut self) -> Vec<&mut Matrix>;

    /// Inference forward pass; leaves no cache behind.
    fn forward(&self, x: &SequenceBatch) -> Result<SequenceBatch>;

    /// Forward pass that keeps what [`Layer::backward`] needs.
    fn forward_train(&mut self, x: &SequenceBatch) -> Result<SequenceBatch>;

    /// Consumes the cache. Returns parameter gradients (same order as
    /// [`Layer::params`]) and the gradient w.r.t. the layer input.
    fn backward(&mut self, grad_out: &SequenceBatch) -> Result<(Vec<Matrix>, SequenceBatch)>;

    fn input_dim(&self) -> usize;

    fn output_dim(&self) -> usize;

    fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.rows() * p.cols()).sum()
    }
}

pub(crate) fn missing_cache<T>(layer: &str) -> Result<T> {
    Err(Error::State(format!(
        "{layer}: backward called without a cached forward pass"
    )))
}

pub(crate) fn check_input_dim(layer: &str, x: &SequenceBatch, expected: usize) -> Result<()> {
    if x.channels() != expected {
        return Err(Error::Dimension(format!(
            "{layer} expects {expected} input channels, got {}",
            x.channels()
        )));
    }
    Ok(())
}

/// Uniform in `±1/√fan_in`.
pub(crate) fn fan_in_uniform(rng: &mut SeededRng, rows: usize, cols: usize, fan_in: usize) -> Matrix {
    let limit = 1.0 / (fan_in.max(1) as f64).sqrt();
    Matrix::from_fn(rows, cols, |_, _| rng.uniform_range(-limit, limit))
}

/// `out[row] = W · x[row] + b` for every `(batch, time)` row.
pub(crate) fn affine_rows(w: &Matrix, b: &Matrix, x: &SequenceBatch) -> Vec<f64> {
    let out_dim = w.rows();
    let rows = x.batch() * x.len();
    let mut out = vec![0.0; rows * out_dim];
    for (r, chunk) in out.chunks_exact_mut(out_dim.max(1)).enumerate().take(rows) {
        let xi = &x.values()[r * x.channels()..(r + 1) * x.channels()];
        w.matvec_into(xi, chunk);
        for (o, bias) in chunk.iter_mut().zip(b.data()) {
            *o += bias;
        }
    }
    out
}

/// Applies `act` to consecutive width-`width` rows.
pub(crate) fn activate_rows(act: Activation, pre: &[f64], width: usize) -> Vec<f64> {
    let mut out = vec![0.0; pre.len()];
    if width == 0 {
        return out;
    }
    for (o, p) in out.chunks_exact_mut(width).zip(pre.chunks_exact(width)) {
        act.forward(p, o);
    }
    out
}

/// In-place activation backward over consecutive rows.
pub(crate) fn activation_backward_rows(
    act: Activation,
    pre: &[f64],
    out: &[f64],
    grad: &mut [f64],
    width: usize,
) {
    if width == 0 {
        return;
    }
    for ((g, p), o) in grad
        .chunks_exact_mut(width)
        .zip(pre.chunks_exact(width))
        .zip(out.chunks_exact(width))
    {
        act.backward(p, o, g);
    }
}
