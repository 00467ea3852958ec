//! Execution schemes for the DN memory `m_t = Ā m_{t−1} + B̄ u_t`.
//!
//! Every input channel drives its own copy of the order-`d` system. The
//! memory of channel `c` occupies the contiguous block `[c·d, (c+1)·d)` of the
//! flattened `d·d_u` state.
//!
//! Four forward paths share these semantics:
//!
//! | path | cost per (batch, channel) |
//! |---|---|
//! | [`scan_sequential`] | `O(n·d²)`, sequential in `n` |
//! | [`conv_dense`] | `O(n²·d)` |
//! | [`final_state`] | `O(n·d)`, only `m_n` |
//! | [`conv_fft`] | `O(n·log n·d)` |
//!
//! Each also has an adjoint used by the layers' backward pass. All kernels
//! report their flops to [`crate::numerics::ops`].

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dn::{DiscreteLti, ImpulseResponse};
use crate::error::{arg_err, dim_err, Result};
use crate::numerics::{fft, ops};

/// Values indexed `(batch, time, channel)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceBatch {
    batch: usize,
    len: usize,
    channels: usize,
    values: Vec<f64>,
}

impl SequenceBatch {
    pub fn new(batch: usize, len: usize, channels: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != batch * len * channels {
            return dim_err(format!(
                "{} values for a ({batch}, {len}, {channels}) batch",
                values.len()
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return arg_err("sequence batch contains non-finite values");
        }
        Ok(SequenceBatch {
            batch,
            len,
            channels,
            values,
        })
    }

    pub fn zeros(batch: usize, len: usize, channels: usize) -> Self {
        SequenceBatch {
            batch,
            len,
            channels,
            values: vec![0.0; batch * len * channels],
        }
    }

    pub fn from_fn(
        batch: usize,
        len: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut values = Vec::with_capacity(batch * len * channels);
        for b in 0..batch {
            for t in 0..len {
                for c in 0..channels {
                    values.push(f(b, t, c));
                }
            }
        }
        SequenceBatch {
            batch,
            len,
            channels,
            values,
        }
    }

    /// A batch of single-channel sequences.
    pub fn from_sequences(seqs: &[Vec<f64>]) -> Result<Self> {
        let len = seqs.first().map_or(0, Vec::len);
        if seqs.iter().any(|s| s.len() != len) {
            return dim_err("sequences differ in length");
        }
        SequenceBatch::new(seqs.len(), len, 1, seqs.concat())
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.batch, self.len, self.channels)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn get(&self, b: usize, t: usize, c: usize) -> f64 {
        self.values[(b * self.len + t) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, b: usize, t: usize, c: usize, v: f64) {
        self.values[(b * self.len + t) * self.channels + c] = v;
    }

    /// Feature vector at `(b, t)`.
    #[inline]
    pub fn step(&self, b: usize, t: usize) -> &[f64] {
        let i = (b * self.len + t) * self.channels;
        &self.values[i..i + self.channels]
    }

    #[inline]
    pub fn step_mut(&mut self, b: usize, t: usize) -> &mut [f64] {
        let i = (b * self.len + t) * self.channels;
        &mut self.values[i..i + self.channels]
    }

    /// The time series of channel `c` in batch element `b`.
    pub fn channel_series(&self, b: usize, c: usize) -> Vec<f64> {
        (0..self.len).map(|t| self.get(b, t, c)).collect()
    }

    /// Only the last time step, as a length-1 batch.
    pub fn last_step(&self) -> SequenceBatch {
        let mut out = SequenceBatch::zeros(self.batch, 1, self.channels);
        if self.len > 0 {
            for b in 0..self.batch {
                out.step_mut(b, 0).copy_from_slice(self.step(b, self.len - 1));
            }
        }
        out
    }

    /// Steps `0..len` of every sequence.
    pub fn prefix(&self, len: usize) -> Result<SequenceBatch> {
        if len > self.len {
            return dim_err(format!("prefix {len} longer than sequence {}", self.len));
        }
        Ok(SequenceBatch::from_fn(self.batch, len, self.channels, |b, t, c| {
            self.get(b, t, c)
        }))
    }

    /// Batch made of the listed elements, in order.
    pub fn select(&self, indices: &[usize]) -> SequenceBatch {
        let stride = self.len * self.channels;
        let mut values = Vec::with_capacity(indices.len() * stride);
        for &i in indices {
            values.extend_from_slice(&self.values[i * stride..(i + 1) * stride]);
        }
        SequenceBatch {
            batch: indices.len(),
            len: self.len,
            channels: self.channels,
            values,
        }
    }

    /// `a·self + b·other`
    pub fn lin_comb(&self, a: f64, other: &SequenceBatch, b: f64) -> Result<SequenceBatch> {
        if self.shape() != other.shape() {
            return dim_err("lin_comb of differently shaped batches");
        }
        let mut out = self.clone();
        for (o, v) in out.values.iter_mut().zip(&other.values) {
            *o = a * *o + b * v;
        }
        Ok(out)
    }

    pub fn max_abs_diff(&self, other: &SequenceBatch) -> Result<f64> {
        if self.shape() != other.shape() {
            return dim_err(format!(
                "comparing {:?} with {:?}",
                self.shape(),
                other.shape()
            ));
        }
        Ok(max_abs_diff(&self.values, &other.values))
    }
}

/// The DN state at one step: `(batch, channel, order)`.
#[derive(Clone, Debug, PartialEq)]
pub struct MemoryState {
    pub batch: usize,
    pub channels: usize,
    pub order: usize,
    pub values: Vec<f64>,
}

impl MemoryState {
    pub fn zeros(batch: usize, channels: usize, order: usize) -> Self {
        MemoryState {
            batch,
            channels,
            order,
            values: vec![0.0; batch * channels * order],
        }
    }

    /// Flattened `d·d_u` memory of batch element `b`.
    pub fn flat(&self, b: usize) -> &[f64] {
        let w = self.channels * self.order;
        &self.values[b * w..(b + 1) * w]
    }

    pub fn block(&self, b: usize, c: usize) -> &[f64] {
        let i = (b * self.channels + c) * self.order;
        &self.values[i..i + self.order]
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    pub fn max_abs_diff(&self, other: &MemoryState) -> Result<f64> {
        if self.values.len() != other.values.len() || self.order != other.order {
            return dim_err("comparing differently shaped memory states");
        }
        Ok(max_abs_diff(&self.values, &other.values))
    }
}

/// DN states for every step: `(batch, time, channel, order)`.
#[derive(Clone, Debug, PartialEq)]
pub struct MemorySequence {
    pub batch: usize,
    pub len: usize,
    pub channels: usize,
    pub order: usize,
    pub values: Vec<f64>,
}

impl MemorySequence {
    pub fn zeros(batch: usize, len: usize, channels: usize, order: usize) -> Self {
        MemorySequence {
            batch,
            len,
            channels,
            order,
            values: vec![0.0; batch * len * channels * order],
        }
    }

    /// Flattened `d·d_u` memory at `(b, t)`.
    #[inline]
    pub fn flat(&self, b: usize, t: usize) -> &[f64] {
        let w = self.channels * self.order;
        let i = (b * self.len + t) * w;
        &self.values[i..i + w]
    }

    #[inline]
    pub fn flat_mut(&mut self, b: usize, t: usize) -> &mut [f64] {
        let w = self.channels * self.order;
        let i = (b * self.len + t) * w;
        &mut self.values[i..i + w]
    }

    #[inline]
    pub fn block(&self, b: usize, t: usize, c: usize) -> &[f64] {
        let i = ((b * self.len + t) * self.channels + c) * self.order;
        &self.values[i..i + self.order]
    }

    pub fn state_at(&self, t: usize) -> MemoryState {
        let mut out = MemoryState::zeros(self.batch, self.channels, self.order);
        let w = self.channels * self.order;
        for b in 0..self.batch {
            out.values[b * w..(b + 1) * w].copy_from_slice(self.flat(b, t));
        }
        out
    }

    pub fn last(&self) -> MemoryState {
        self.state_at(self.len - 1)
    }

    pub fn max_abs_diff(&self, other: &MemorySequence) -> Result<f64> {
        if (self.batch, self.len, self.channels, self.order)
            != (other.batch, other.len, other.channels, other.order)
        {
            return dim_err("comparing differently shaped memory sequences");
        }
        Ok(max_abs_diff(&self.values, &other.values))
    }

    /// Copies a per-(b, c) time-major `n x d` buffer into place.
    fn scatter(&mut self, b: usize, c: usize, local: &[f64]) {
        let d = self.order;
        for t in 0..self.len {
            let i = ((b * self.len + t) * self.channels + c) * d;
            self.values[i..i + d].copy_from_slice(&local[t * d..(t + 1) * d]);
        }
    }

    fn gather(&self, b: usize, c: usize) -> Vec<f64> {
        let d = self.order;
        let mut out = Vec::with_capacity(self.len * d);
        for t in 0..self.len {
            out.extend_from_slice(self.block(b, t, c));
        }
        out
    }
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
}

/// Runs `job(b, c)` for every batch element and channel, in parallel when a
/// multi-threaded pool is active. Jobs are independent, so results do not
/// depend on the thread count. Flops are recorded on the calling thread.
fn for_each_channel<T, F>(batch: usize, channels: usize, job: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize, usize) -> (T, u64) + Sync,
{
    let results: Vec<(T, u64)> = (0..batch * channels)
        .into_par_iter()
        .map(|i| job(i / channels, i % channels))
        .collect();
    let mut flops = 0;
    let out = results
        .into_iter()
        .map(|(v, f)| {
            flops += f;
            v
        })
        .collect();
    ops::record(flops);
    out
}

fn check_horizon(h: &ImpulseResponse, n: usize) -> Result<()> {
    if h.horizon() < n {
        return arg_err(format!(
            "impulse response horizon {} is shorter than sequence length {n}",
            h.horizon()
        ));
    }
    Ok(())
}

/// The recurrence, one step at a time. `m0` defaults to zero.
pub fn scan_sequential(
    sys: &DiscreteLti,
    u: &SequenceBatch,
    m0: Option<&MemoryState>,
) -> Result<MemorySequence> {
    let d = sys.order;
    let (batch, n, channels) = u.shape();
    if let Some(m0) = m0 {
        if (m0.batch, m0.channels, m0.order) != (batch, channels, d) {
            return dim_err(format!(
                "initial state ({}, {}, {}) does not match input ({batch}, {channels}) with order {d}",
                m0.batch, m0.channels, m0.order
            ));
        }
    }
    let bbar = sys.bbar.col_vec(0);
    let locals = for_each_channel(batch, channels, |b, c| {
        let mut local = vec![0.0; n * d];
        let mut m = m0.map_or_else(|| vec![0.0; d], |s| s.block(b, c).to_vec());
        let mut next = vec![0.0; d];
        for t in 0..n {
            sys.abar.matvec_into(&m, &mut next);
            let ut = u.get(b, t, c);
            for (x, bk) in next.iter_mut().zip(&bbar) {
                *x += bk * ut;
            }
            std::mem::swap(&mut m, &mut next);
            local[t * d..(t + 1) * d].copy_from_slice(&m);
        }
        (local, (n * (2 * d * d + 2 * d)) as u64)
    });
    let mut out = MemorySequence::zeros(batch, n, channels, d);
    for (i, local) in locals.iter().enumerate() {
        out.scatter(i / channels, i % channels, local);
    }
    Ok(out)
}

/// `m_t = Σ_{j≤t} H[:, t−j] u_j`, the Toeplitz product evaluated as a direct
/// causal convolution loop. Assumes a zero initial state.
pub fn conv_dense(h: &ImpulseResponse, u: &SequenceBatch) -> Result<MemorySequence> {
    let d = h.order();
    let (batch, n, channels) = u.shape();
    check_horizon(h, n)?;
    let cols = h.columns();
    let locals = for_each_channel(batch, channels, |b, c| {
        let series = u.channel_series(b, c);
        let mut local = vec![0.0; n * d];
        for t in 0..n {
            let out = &mut local[t * d..(t + 1) * d];
            for (j, &uj) in series[..=t].iter().enumerate() {
                if uj == 0.0 {
                    continue;
                }
                let col = &cols[(t - j) * d..(t - j + 1) * d];
                for (o, hk) in out.iter_mut().zip(col) {
                    *o += hk * uj;
                }
            }
        }
        (local, (n * (n + 1) * d) as u64)
    });
    let mut out = MemorySequence::zeros(batch, n, channels, d);
    for (i, local) in locals.iter().enumerate() {
        out.scatter(i / channels, i % channels, local);
    }
    Ok(out)
}

/// Only the last state, `m_n = Σ_j H[:, n−1−j] u_j`.
pub fn final_state(h: &ImpulseResponse, u: &SequenceBatch) -> Result<MemoryState> {
    let d = h.order();
    let (batch, n, channels) = u.shape();
    if n == 0 {
        return arg_err("final state of an empty sequence");
    }
    check_horizon(h, n)?;
    let cols = h.columns();
    let locals = for_each_channel(batch, channels, |b, c| {
        let mut m = vec![0.0; d];
        for j in 0..n {
            let uj = u.get(b, j, c);
            let col = &cols[(n - 1 - j) * d..(n - j) * d];
            for (o, hk) in m.iter_mut().zip(col) {
                *o += hk * uj;
            }
        }
        (m, (2 * n * d) as u64)
    });
    Ok(MemoryState {
        batch,
        channels,
        order: d,
        values: locals.concat(),
    })
}

/// The causal convolution computed as a pointwise product of zero-padded
/// spectra. Padding to [`fft::padded_len`] rules out circular wrap-around.
pub fn conv_fft(h: &ImpulseResponse, u: &SequenceBatch) -> Result<MemorySequence> {
    let d = h.order();
    let (batch, n, channels) = u.shape();
    check_horizon(h, n)?;
    let mut out = MemorySequence::zeros(batch, n, channels, d);
    if n == 0 {
        return Ok(out);
    }
    let spectra = h.row_spectra(n)?;
    let size = fft::padded_len(n);
    let tf = fft::transform_flops(size);
    let locals = for_each_channel(batch, channels, |b, c| {
        let mut ure = vec![0.0; size];
        let mut uim = vec![0.0; size];
        for t in 0..n {
            ure[t] = u.get(b, t, c);
        }
        fft::transform(&mut ure, &mut uim, false);
        let mut flops = tf;

        let mut local = vec![0.0; n * d];
        let mut zre = vec![0.0; size];
        let mut zim = vec![0.0; size];
        // Both products invert to real sequences, so two rows share one
        // inverse transform: the first lands in the real part, the second
        // in the imaginary part.
        for k in (0..d).step_by(2) {
            let h1 = &spectra[k];
            let second = (k + 1 < d).then(|| &spectra[k + 1]);
            for f in 0..size {
                let pr = h1.re[f] * ure[f] - h1.im[f] * uim[f];
                let pi = h1.re[f] * uim[f] + h1.im[f] * ure[f];
                match second {
                    Some(h2) => {
                        let qr = h2.re[f] * ure[f] - h2.im[f] * uim[f];
                        let qi = h2.re[f] * uim[f] + h2.im[f] * ure[f];
                        zre[f] = pr - qi;
                        zim[f] = pi + qr;
                    }
                    None => {
                        zre[f] = pr;
                        zim[f] = pi;
                    }
                }
            }
            let products = if second.is_some() { 2 } else { 1 };
            flops += (size * (6 * products + 2 * (products - 1))) as u64;
            fft::transform(&mut zre, &mut zim, true);
            flops += tf + 2 * size as u64;
            for t in 0..n {
                local[t * d + k] = zre[t];
                if second.is_some() {
                    local[t * d + k + 1] = zim[t];
                }
            }
        }
        (local, flops)
    });
    for (i, local) in locals.iter().enumerate() {
        out.scatter(i / channels, i % channels, local);
    }
    Ok(out)
}

/// Forward evaluation strategy for the DN memory.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExecPath {
    Sequential,
    Dense,
    Fft,
}

impl ExecPath {
    pub const ALL: [ExecPath; 3] = [ExecPath::Sequential, ExecPath::Dense, ExecPath::Fft];

    pub fn name(self) -> &'static str {
        match self {
            ExecPath::Sequential => "sequential",
            ExecPath::Dense => "dense",
            ExecPath::Fft => "fft",
        }
    }
}

/// Runs one of the full-sequence paths. Only the sequential path supports a
/// nonzero initial state; the convolutions assume `m_0 = 0`.
pub fn execute(
    path: ExecPath,
    sys: &DiscreteLti,
    h: &ImpulseResponse,
    u: &SequenceBatch,
    m0: Option<&MemoryState>,
) -> Result<MemorySequence> {
    match path {
        ExecPath::Sequential => scan_sequential(sys, u, m0),
        _ if m0.is_some_and(|m| !m.is_zero()) => arg_err(format!(
            "the {} path requires a zero initial state",
            path.name()
        )),
        ExecPath::Dense => conv_dense(h, u),
        ExecPath::Fft => conv_fft(h, u),
    }
}

fn check_grad_shape(grad: &MemorySequence, order: usize) -> Result<()> {
    if grad.order != order {
        return dim_err(format!(
            "memory gradient has order {}, system has {order}",
            grad.order
        ));
    }
    Ok(())
}

/// Adjoint of [`scan_sequential`]: `λ_t = g_t + Āᵀ λ_{t+1}`, `∂u_t = B̄ᵀ λ_t`.
pub fn scan_adjoint(sys: &DiscreteLti, grad: &MemorySequence) -> Result<SequenceBatch> {
    let d = sys.order;
    check_grad_shape(grad, d)?;
    let (batch, n, channels) = (grad.batch, grad.len, grad.channels);
    let at = sys.abar.transpose();
    let bbar = sys.bbar.col_vec(0);
    let series = for_each_channel(batch, channels, |b, c| {
        let mut lambda = vec![0.0; d];
        let mut next = vec![0.0; d];
        let mut gu = vec![0.0; n];
        for t in (0..n).rev() {
            at.matvec_into(&lambda, &mut next);
            for (x, g) in next.iter_mut().zip(grad.block(b, t, c)) {
                *x += g;
            }
            std::mem::swap(&mut lambda, &mut next);
            gu[t] = lambda.iter().zip(&bbar).map(|(l, b)| l * b).sum();
        }
        (gu, (n * (2 * d * d + 3 * d)) as u64)
    });
    Ok(assemble(batch, n, channels, &series))
}

/// Like [`scan_adjoint`] when only `m_n` receives gradient.
pub fn scan_adjoint_final(
    sys: &DiscreteLti,
    grad_final: &MemoryState,
    len: usize,
) -> Result<SequenceBatch> {
    let d = sys.order;
    if grad_final.order != d {
        return dim_err("final-state gradient order mismatch");
    }
    let (batch, channels) = (grad_final.batch, grad_final.channels);
    let at = sys.abar.transpose();
    let bbar = sys.bbar.col_vec(0);
    let series = for_each_channel(batch, channels, |b, c| {
        let mut lambda = grad_final.block(b, c).to_vec();
        let mut next = vec![0.0; d];
        let mut gu = vec![0.0; len];
        for t in (0..len).rev() {
            gu[t] = lambda.iter().zip(&bbar).map(|(l, b)| l * b).sum();
            at.matvec_into(&lambda, &mut next);
            std::mem::swap(&mut lambda, &mut next);
        }
        (gu, (len * (2 * d * d + 2 * d)) as u64)
    });
    Ok(assemble(batch, len, channels, &series))
}

/// Adjoint of [`conv_dense`]: `∂u_j = Σ_{t≥j} H[:, t−j]ᵀ g_t`.
pub fn conv_adjoint_dense(h: &ImpulseResponse, grad: &MemorySequence) -> Result<SequenceBatch> {
    let d = h.order();
    check_grad_shape(grad, d)?;
    let (batch, n, channels) = (grad.batch, grad.len, grad.channels);
    check_horizon(h, n)?;
    let cols = h.columns();
    let series = for_each_channel(batch, channels, |b, c| {
        let g = grad.gather(b, c);
        let mut gu = vec![0.0; n];
        for (j, out) in gu.iter_mut().enumerate() {
            let mut s = 0.0;
            for t in j..n {
                let col = &cols[(t - j) * d..(t - j + 1) * d];
                s += col
                    .iter()
                    .zip(&g[t * d..(t + 1) * d])
                    .map(|(a, b)| a * b)
                    .sum::<f64>();
            }
            *out = s;
        }
        (gu, (n * (n + 1) * d) as u64)
    });
    Ok(assemble(batch, n, channels, &series))
}

/// Adjoint of [`conv_fft`]: a correlation with `H`, computed as a causal
/// convolution of the time-reversed gradient.
pub fn conv_adjoint_fft(h: &ImpulseResponse, grad: &MemorySequence) -> Result<SequenceBatch> {
    let d = h.order();
    check_grad_shape(grad, d)?;
    let (batch, n, channels) = (grad.batch, grad.len, grad.channels);
    check_horizon(h, n)?;
    if n == 0 {
        return Ok(SequenceBatch::zeros(batch, 0, channels));
    }
    let spectra = h.row_spectra(n)?;
    let size = fft::padded_len(n);
    let tf = fft::transform_flops(size);
    let series = for_each_channel(batch, channels, |b, c| {
        let mut acc_re = vec![0.0; size];
        let mut acc_im = vec![0.0; size];
        let mut gre = vec![0.0; size];
        let mut gim = vec![0.0; size];
        let mut flops = 0u64;
        for k in 0..d {
            gre.iter_mut().for_each(|v| *v = 0.0);
            gim.iter_mut().for_each(|v| *v = 0.0);
            for t in 0..n {
                gre[n - 1 - t] = grad.block(b, t, c)[k];
            }
            fft::transform(&mut gre, &mut gim, false);
            let hk = &spectra[k];
            for f in 0..size {
                acc_re[f] += hk.re[f] * gre[f] - hk.im[f] * gim[f];
                acc_im[f] += hk.re[f] * gim[f] + hk.im[f] * gre[f];
            }
            flops += tf + 8 * size as u64;
        }
        fft::transform(&mut acc_re, &mut acc_im, true);
        flops += tf + 2 * size as u64;
        let gu: Vec<f64> = (0..n).map(|j| acc_re[n - 1 - j]).collect();
        (gu, flops)
    });
    Ok(assemble(batch, n, channels, &series))
}

/// Estimated flops of the dense and FFT adjoints for one (batch, channel).
pub fn adjoint_costs(order: usize, len: usize) -> (u64, u64) {
    let size = fft::padded_len(len);
    let tf = fft::transform_flops(size);
    let dense = (len * (len + 1) * order) as u64;
    let fft_cost = (order as u64 + 1) * tf + (8 * order + 2) as u64 * size as u64;
    (dense, fft_cost)
}

/// Adjoint of the full convolution, choosing the cheaper of the dense and
/// FFT evaluations from the sizes.
pub fn conv_adjoint(h: &ImpulseResponse, grad: &MemorySequence) -> Result<SequenceBatch> {
    let (dense, fft_cost) = adjoint_costs(grad.order, grad.len);
    if fft_cost < dense {
        conv_adjoint_fft(h, grad)
    } else {
        conv_adjoint_dense(h, grad)
    }
}

/// Adjoint of [`final_state`]: `∂u_j = H[:, n−1−j]ᵀ g`.
pub fn final_adjoint(
    h: &ImpulseResponse,
    grad_final: &MemoryState,
    len: usize,
) -> Result<SequenceBatch> {
    let d = h.order();
    if grad_final.order != d {
        return dim_err("final-state gradient order mismatch");
    }
    check_horizon(h, len)?;
    let cols = h.columns();
    let (batch, channels) = (grad_final.batch, grad_final.channels);
    let series = for_each_channel(batch, channels, |b, c| {
        let g = grad_final.block(b, c);
        let gu: Vec<f64> = (0..len)
            .map(|j| {
                cols[(len - 1 - j) * d..(len - j) * d]
                    .iter()
                    .zip(g)
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect();
        (gu, (2 * len * d) as u64)
    });
    Ok(assemble(batch, len, channels, &series))
}

/// Max-abs deviations of the parallel paths from the sequential scan on one
/// input.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Equivalence {
    pub dense: f64,
    pub fft: f64,
    /// `final_state` against the scan's last state.
    pub final_state: f64,
}

impl Equivalence {
    pub fn max(&self) -> f64 {
        self.dense.max(self.fft).max(self.final_state)
    }
}

/// Runs all four forward paths on `u` and compares them to the scan.
pub fn check_equivalence(
    sys: &DiscreteLti,
    h: &ImpulseResponse,
    u: &SequenceBatch,
) -> Result<Equivalence> {
    let reference = scan_sequential(sys, u, None)?;
    Ok(Equivalence {
        dense: conv_dense(h, u)?.max_abs_diff(&reference)?,
        fft: conv_fft(h, u)?.max_abs_diff(&reference)?,
        final_state: final_state(h, u)?.max_abs_diff(&reference.last())?,
    })
}

fn assemble(batch: usize, len: usize, channels: usize, series: &[Vec<f64>]) -> SequenceBatch {
    let mut out = SequenceBatch::zeros(batch, len, channels);
    for (i, s) in series.iter().enumerate() {
        let (b, c) = (i / channels, i % channels);
        for (t, v) in s.iter().enumerate() {
            out.set(b, t, c, *v);
        }
    }
    out
}
