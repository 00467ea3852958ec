//! Iterative radix-2 FFT on split real/imaginary arrays.

use std::f64::consts::PI;

use crate::error::{arg_err, Result};

/// Spectrum of a zero-padded real or complex sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexVector {
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

impl ComplexVector {
    pub fn zeros(len: usize) -> Self {
        ComplexVector {
            re: vec![0.0; len],
            im: vec![0.0; len],
        }
    }

    pub fn len(&self) -> usize {
        self.re.len()
    }

    pub fn is_empty(&self) -> bool {
        self.re.is_empty()
    }

    pub fn norm_sqr_sum(&self) -> f64 {
        self.re.iter().zip(&self.im).map(|(a, b)| a * a + b * b).sum()
    }
}

/// Smallest power of two `>= n` (and `>= 1`).
pub fn next_pow2(n: usize) -> usize {
    n.max(1).next_power_of_two()
}

/// Transform size that makes a circular convolution of two length-`n`
/// sequences equal to their acyclic convolution.
pub fn padded_len(n: usize) -> usize {
    next_pow2((2 * n).saturating_sub(1))
}

/// Floating-point operations of one complex transform of length `size`.
/// Each butterfly is a complex multiply (6 flops) plus two complex adds (4).
pub fn transform_flops(size: usize) -> u64 {
    if size < 2 {
        return 0;
    }
    let stages = size.trailing_zeros() as u64;
    (size as u64 / 2) * stages * 10
}

/// Forward transform of `v` zero-padded to `size` (a power of two).
pub fn fft(v: &[f64], size: usize) -> Result<ComplexVector> {
    if size < v.len() {
        return arg_err(format!(
            "transform size {size} is smaller than input length {}",
            v.len()
        ));
    }
    if !size.is_power_of_two() {
        return arg_err(format!("transform size {size} is not a power of two"));
    }
    let mut out = ComplexVector::zeros(size);
    out.re[..v.len()].copy_from_slice(v);
    transform(&mut out.re, &mut out.im, false);
    Ok(out)
}

/// Inverse transform returning the real part.
///
/// Fails if the imaginary residue exceeds `1e-9` relative to the largest
/// real magnitude, which means the spectrum was not Hermitian.
pub fn ifft(spectrum: &ComplexVector) -> Result<Vec<f64>> {
    let n = spectrum.len();
    if !n.is_power_of_two() {
        return arg_err(format!("spectrum length {n} is not a power of two"));
    }
    let mut re = spectrum.re.clone();
    let mut im = spectrum.im.clone();
    transform(&mut re, &mut im, true);
    let scale = re.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let residue = im.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if residue > 1e-9 * scale {
        return arg_err(format!(
            "inverse transform has imaginary residue {residue:e}; input is not a real signal's spectrum"
        ));
    }
    Ok(re)
}

/// Inverse transform keeping only the first `len` samples.
pub fn ifft_prefix(spectrum: &ComplexVector, len: usize) -> Result<Vec<f64>> {
    if len > spectrum.len() {
        return arg_err(format!(
            "requested {len} samples from a length-{} transform",
            spectrum.len()
        ));
    }
    let mut out = ifft(spectrum)?;
    out.truncate(len);
    Ok(out)
}

/// Acyclic convolution of two real sequences through the FFT.
pub fn fft_convolve(a: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    if a.is_empty() || b.is_empty() {
        return Ok(Vec::new());
    }
    let out_len = a.len() + b.len() - 1;
    let size = next_pow2(out_len);
    let fa = fft(a, size)?;
    let fb = fft(b, size)?;
    let mut prod = ComplexVector::zeros(size);
    for k in 0..size {
        prod.re[k] = fa.re[k] * fb.re[k] - fa.im[k] * fb.im[k];
        prod.im[k] = fa.re[k] * fb.im[k] + fa.im[k] * fb.re[k];
    }
    ifft_prefix(&prod, out_len)
}

/// In-place complex transform. `inverse` applies the conjugate twiddles and
/// the `1/N` normalization. The length must be a power of two.
pub(crate) fn transform(re: &mut [f64], im: &mut [f64], inverse: bool) {
    let n = re.len();
    debug_assert_eq!(n, im.len());
    debug_assert!(n.is_power_of_two());
    if n < 2 {
        return;
    }

    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if j > i {
            re.swap(i, j);
            im.swap(i, j);
        }
    }

    let sign = if inverse { 1.0 } else { -1.0 };
    // Twiddles for the largest stage; smaller stages stride through them.
    let half = n / 2;
    let (tw_re, tw_im): (Vec<f64>, Vec<f64>) = (0..half)
        .map(|k| {
            let angle = sign * 2.0 * PI * k as f64 / n as f64;
            (angle.cos(), angle.sin())
        })
        .unzip();

    let mut len = 2;
    while len <= n {
        let step = n / len;
        let h = len / 2;
        for start in (0..n).step_by(len) {
            for k in 0..h {
                let wr = tw_re[k * step];
                let wi = tw_im[k * step];
                let a = start + k;
                let b = a + h;
                let xr = re[b] * wr - im[b] * wi;
                let xi = re[b] * wi + im[b] * wr;
                re[b] = re[a] - xr;
                im[b] = im[a] - xi;
                re[a] += xr;
                im[a] += xi;
            }
        }
        len <<= 1;
    }

    if inverse {
        let s = 1.0 / n as f64;
        re.iter_mut().for_each(|v| *v *= s);
        im.iter_mut().for_each(|v| *v *= s);
    }
}
