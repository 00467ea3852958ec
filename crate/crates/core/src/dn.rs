//! The Delay Network: a continuous LTI system whose state approximates a
//! sliding window of its input, its zero-order-hold discretization, the
//! shifted-Legendre decoders and the impulse response used by the
//! convolutional execution paths.

use std::collections::HashMap;
use std::sync::{Arc, OnceLock, RwLock};

use crate::error::{arg_err, Error, Result};
use crate::numerics::{expm_augmented, fft, ComplexVector, Matrix};

/// The DN has no direct feedthrough; `D` is identically zero.
pub const FEEDTHROUGH: f64 = 0.0;

/// Orders above this evaluate decoders with the Legendre recurrence instead
/// of the alternating binomial sum, which loses precision to cancellation.
pub const BINOMIAL_DECODER_MAX_ORDER: usize = 20;

const SPECTRAL_RADIUS_SLACK: f64 = 1e-9;

/// Continuous-time `(A, B)` of an order-`d` delay of length `theta`.
#[derive(Clone, Debug, PartialEq)]
pub struct ContinuousLti {
    pub order: usize,
    pub theta: f64,
    pub a: Matrix,
    pub b: Matrix,
}

/// Build the order-`order` delay system with window `theta` (in steps).
///
/// `A[i][j] = (2i+1)/θ · (−1 if i < j else (−1)^(i−j+1))` and
/// `B[i] = (2i+1)(−1)^i / θ`.
pub fn make_delay_system(order: usize, theta: f64) -> Result<ContinuousLti> {
    if order == 0 {
        return arg_err("delay system order must be at least 1");
    }
    if !(theta > 0.0 && theta.is_finite()) {
        return arg_err(format!("theta must be positive and finite, got {theta}"));
    }
    let a = Matrix::from_fn(order, order, |i, j| {
        let r = (2 * i + 1) as f64 / theta;
        if i < j || (i - j) % 2 == 0 {
            -r
        } else {
            r
        }
    });
    let b = Matrix::from_fn(order, 1, |i, _| {
        let r = (2 * i + 1) as f64 / theta;
        if i % 2 == 0 {
            r
        } else {
            -r
        }
    });
    Ok(ContinuousLti { order, theta, a, b })
}

/// Zero-order-hold discretization of a [`ContinuousLti`] at `dt = 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteLti {
    pub order: usize,
    pub theta: f64,
    pub abar: Matrix,
    pub bbar: Matrix,
}

impl ContinuousLti {
    pub fn discretize(&self) -> Result<DiscreteLti> {
        let (abar, bbar) = expm_augmented(&self.a, &self.b)?;
        let rho = spectral_radius(&abar);
        if !(rho <= 1.0 + SPECTRAL_RADIUS_SLACK) {
            return Err(Error::Numerical(format!(
                "discretized delay system is unstable: spectral radius {rho}"
            )));
        }
        Ok(DiscreteLti {
            order: self.order,
            theta: self.theta,
            abar,
            bbar,
        })
    }
}

/// Shorthand for `make_delay_system(order, theta)?.discretize()`.
pub fn discretize(sys: &ContinuousLti) -> Result<DiscreteLti> {
    sys.discretize()
}

pub fn delay_network(order: usize, theta: f64) -> Result<DiscreteLti> {
    make_delay_system(order, theta)?.discretize()
}

/// Largest eigenvalue modulus of a square matrix.
pub fn spectral_radius(m: &Matrix) -> f64 {
    let n = m.rows();
    let nm = nalgebra::DMatrix::from_row_slice(n, n, m.data());
    nm.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

/// Readout weights `C(θ′)` with `u(t − θ′) ≈ C(θ′)ᵀ m_t`.
#[derive(Clone, Debug, PartialEq)]
pub struct DecoderCoefficients {
    pub order: usize,
    pub theta_prime: f64,
    pub theta: f64,
    pub coeffs: Vec<f64>,
}

/// Decoder for a delay of `theta_prime` out of a window of `theta`.
///
/// Entry `i` is the shifted Legendre polynomial `P̃_i(θ′/θ)`, i.e.
/// `(−1)^i Σ_l C(i,l)·C(i+l,l)·(−θ′/θ)^l`. So `C(θ) = 1` and
/// `C(0)_i = (−1)^i`.
pub fn decoder(order: usize, theta_prime: f64, theta: f64) -> Result<DecoderCoefficients> {
    if order == 0 {
        return arg_err("decoder order must be at least 1");
    }
    if !(theta > 0.0 && theta.is_finite()) {
        return arg_err(format!("theta must be positive and finite, got {theta}"));
    }
    if !(0.0..=theta).contains(&theta_prime) {
        return arg_err(format!("theta' = {theta_prime} outside [0, {theta}]"));
    }
    let x = theta_prime / theta;
    let coeffs = if order <= BINOMIAL_DECODER_MAX_ORDER {
        (0..order).map(|i| shifted_legendre_binomial(i, x)).collect()
    } else {
        shifted_legendre_recurrence(order, x)
    };
    Ok(DecoderCoefficients {
        order,
        theta_prime,
        theta,
        coeffs,
    })
}

fn shifted_legendre_binomial(i: usize, x: f64) -> f64 {
    // Every product of binomials stays below 2^53 for i < 20, so the sum is
    // exact at x = 0 and x = 1.
    let mut sum = 0.0;
    let mut c_il = 1.0; // C(i, l)
    let mut c_ill = 1.0; // C(i + l, l)
    let mut pow = 1.0; // (−x)^l
    for l in 0..=i {
        sum += c_il * c_ill * pow;
        let lf = l as f64;
        c_il = c_il * (i as f64 - lf) / (lf + 1.0);
        c_ill = c_ill * (i as f64 + lf + 1.0) / (lf + 1.0);
        pow *= -x;
    }
    if i % 2 == 0 {
        sum
    } else {
        -sum
    }
}

fn shifted_legendre_recurrence(order: usize, x: f64) -> Vec<f64> {
    let y = 2.0 * x - 1.0;
    let mut out = Vec::with_capacity(order);
    out.push(1.0);
    if order > 1 {
        out.push(y);
    }
    for n in 1..order.saturating_sub(1) {
        let nf = n as f64;
        let next = ((2.0 * nf + 1.0) * y * out[n] - nf * out[n - 1]) / (nf + 1.0);
        out.push(next);
    }
    out
}

/// First `horizon` columns of the impulse response, `H[:, j] = Ā^j B̄`.
///
/// Spectra of the rows, needed by the FFT path, are computed on first use
/// per sequence length and kept alongside `H`.
#[derive(Debug)]
pub struct ImpulseResponse {
    order: usize,
    horizon: usize,
    h: Matrix,
    /// Column-major copy: `columns[j * order + k] = H[k][j]`.
    columns: Vec<f64>,
    spectra: RwLock<HashMap<usize, Arc<Vec<ComplexVector>>>>,
}

/// Runs the recurrence `m_j = Ā m_{j−1} + B̄ u_j` on the impulse `(1, 0, 0, …)`.
pub fn impulse_response(sys: &DiscreteLti, horizon: usize) -> Result<ImpulseResponse> {
    if horizon == 0 {
        return arg_err("impulse response horizon must be at least 1");
    }
    let d = sys.order;
    let mut columns = Vec::with_capacity(d * horizon);
    let mut m = sys.bbar.col_vec(0);
    let mut next = vec![0.0; d];
    for _ in 0..horizon {
        columns.extend_from_slice(&m);
        sys.abar.matvec_into(&m, &mut next);
        std::mem::swap(&mut m, &mut next);
    }
    let h = Matrix::from_fn(d, horizon, |k, j| columns[j * d + k]);
    Ok(ImpulseResponse {
        order: d,
        horizon,
        h,
        columns,
        spectra: RwLock::new(HashMap::new()),
    })
}

impl ImpulseResponse {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// The `d x n` matrix `H`.
    pub fn matrix(&self) -> &Matrix {
        &self.h
    }

    /// Column `j` of `H` (`Ā^j B̄`) as a contiguous slice.
    #[inline]
    pub fn column(&self, j: usize) -> &[f64] {
        &self.columns[j * self.order..(j + 1) * self.order]
    }

    /// All columns, `columns()[j * d + k] = H[k][j]`.
    #[inline]
    pub(crate) fn columns(&self) -> &[f64] {
        &self.columns
    }

    /// Spectra of each row of `H` truncated to `len` columns, zero-padded to
    /// [`fft::padded_len`]`(len)`.
    pub fn row_spectra(&self, len: usize) -> Result<Arc<Vec<ComplexVector>>> {
        if len == 0 || len > self.horizon {
            return arg_err(format!(
                "spectrum length {len} outside 1..={}",
                self.horizon
            ));
        }
        if let Some(s) = self.spectra.read().expect("spectrum cache poisoned").get(&len) {
            return Ok(Arc::clone(s));
        }
        let size = fft::padded_len(len);
        let rows = (0..self.order)
            .map(|k| fft::fft(&self.h.row(k)[..len], size))
            .collect::<Result<Vec<_>>>()?;
        let rows = Arc::new(rows);
        self.spectra
            .write()
            .expect("spectrum cache poisoned")
            .entry(len)
            .or_insert_with(|| Arc::clone(&rows));
        Ok(rows)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
struct KernelKey {
    order: usize,
    theta_bits: u64,
    horizon: usize,
}

/// Shared cache of discretized systems and impulse responses keyed by
/// `(d, θ, n)`. Readers proceed concurrently; a miss takes the write lock.
#[derive(Debug, Default)]
pub struct KernelCache {
    entries: RwLock<HashMap<KernelKey, (Arc<DiscreteLti>, Arc<ImpulseResponse>)>>,
}

impl KernelCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(
        &self,
        order: usize,
        theta: f64,
        horizon: usize,
    ) -> Result<(Arc<DiscreteLti>, Arc<ImpulseResponse>)> {
        let key = KernelKey {
            order,
            theta_bits: theta.to_bits(),
            horizon,
        };
        if let Some((s, h)) = self.entries.read().expect("kernel cache poisoned").get(&key) {
            return Ok((Arc::clone(s), Arc::clone(h)));
        }
        let sys = Arc::new(delay_network(order, theta)?);
        let h = Arc::new(impulse_response(&sys, horizon)?);
        let mut w = self.entries.write().expect("kernel cache poisoned");
        let (s, h) = w.entry(key).or_insert((sys, h));
        Ok((Arc::clone(s), Arc::clone(h)))
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("kernel cache poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Process-wide kernel cache shared by all layers.
pub fn shared_kernels() -> &'static KernelCache {
    static CACHE: OnceLock<KernelCache> = OnceLock::new();
    CACHE.get_or_init(KernelCache::new)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn order_one() {
        let s = make_delay_system(1, 1.0).unwrap();
        assert_eq!(s.a.data(), &[-1.0]);
        assert_eq!(s.b.data(), &[1.0]);
    }

    #[test]
    fn order_two() {
        let s = make_delay_system(2, 1.0).unwrap();
        assert_eq!(s.a.data(), &[-1.0, -1.0, 3.0, -3.0]);
        assert_eq!(s.b.data(), &[1.0, -3.0]);
        let s2 = make_delay_system(2, 2.0).unwrap();
        assert_eq!(s2.a, s.a.scale(0.5));
        assert_eq!(s2.b, s.b.scale(0.5));
    }

    #[test]
    fn entries_follow_closed_form() {
        let theta = 7.5;
        let s = make_delay_system(9, theta).unwrap();
        for i in 0..9 {
            let r = (2 * i + 1) as f64 / theta;
            for j in 0..9 {
                let sign = if i < j {
                    -1.0
                } else {
                    (-1f64).powi((i - j + 1) as i32)
                };
                assert_eq!(s.a[(i, j)], r * sign);
            }
            assert_eq!(s.b[(i, 0)], r * (-1f64).powi(i as i32));
        }
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(make_delay_system(0, 1.0).is_err());
        assert!(make_delay_system(3, 0.0).is_err());
        assert!(make_delay_system(3, -2.0).is_err());
        assert!(make_delay_system(3, f64::NAN).is_err());
    }

    #[test]
    fn scalar_discretization() {
        let d = delay_network(1, 1.0).unwrap();
        let e = (-1f64).exp();
        assert_relative_eq!(d.abar[(0, 0)], e, max_relative = 1e-14);
        assert_relative_eq!(d.bbar[(0, 0)], 1.0 - e, max_relative = 1e-14);
    }

    #[test]
    fn long_window_first_order() {
        let theta = 1e6;
        let d = delay_network(1, theta).unwrap();
        // e^{-1/θ} = 1 − 1/θ + 1/(2θ²) − …
        assert!((d.abar[(0, 0)] - (1.0 - 1.0 / theta)).abs() < 1.0 / theta.powi(2));
        assert!((d.bbar[(0, 0)] - 1.0 / theta).abs() < 1.0 / theta.powi(2));
    }

    #[test]
    fn discretized_modes_do_not_diverge() {
        for &(order, theta) in &[(1, 1.0), (4, 4.0), (12, 100.0), (32, 50.0), (64, 784.0)] {
            let d = delay_network(order, theta).unwrap();
            assert!(spectral_radius(&d.abar) <= 1.0 + 1e-9);
        }
    }

    #[test]
    fn decoder_endpoints() {
        for d in 1..=30 {
            let full = decoder(d, 5.0, 5.0).unwrap();
            assert!(full.coeffs.iter().all(|&c| (c - 1.0).abs() <= 1e-12), "d={d}");
            let zero = decoder(d, 0.0, 5.0).unwrap();
            for (i, c) in zero.coeffs.iter().enumerate() {
                let expect = if i % 2 == 0 { 1.0 } else { -1.0 };
                assert!((c - expect).abs() <= 1e-12, "d={d} i={i}");
            }
        }
        assert_eq!(decoder(4, 0.0, 3.0).unwrap().coeffs, vec![1.0, -1.0, 1.0, -1.0]);
    }

    #[test]
    fn decoder_midpoint() {
        let c = decoder(3, 50.0, 100.0).unwrap().coeffs;
        assert!((c[0] - 1.0).abs() < 1e-15);
        assert!(c[1].abs() < 1e-15);
        assert!((c[2] + 0.5).abs() < 1e-15);
    }

    #[test]
    fn decoder_sum_agrees_with_recurrence() {
        for &x in &[0.0, 0.1, 0.37, 0.5, 0.9, 1.0] {
            let rec = shifted_legendre_recurrence(20, x);
            for (i, r) in rec.iter().enumerate() {
                let b = shifted_legendre_binomial(i, x);
                // The direct sum cancels terms as large as Σ|term| = P̃_i
                // evaluated at −x, so its error is a few ulps of that.
                let scale = shifted_legendre_binomial(i, -x).abs();
                assert!((b - r).abs() <= 64.0 * f64::EPSILON * scale, "i={i} x={x}: {b} vs {r}");
            }
        }
    }

    #[test]
    fn decoder_rejects_out_of_window() {
        assert!(decoder(3, -0.1, 1.0).is_err());
        assert!(decoder(3, 1.1, 1.0).is_err());
        assert!(decoder(0, 0.5, 1.0).is_err());
    }

    #[test]
    fn impulse_single_column_is_bbar() {
        let d = delay_network(5, 10.0).unwrap();
        let h = impulse_response(&d, 1).unwrap();
        assert_eq!(h.matrix().col_vec(0), d.bbar.col_vec(0));
        assert!(impulse_response(&d, 0).is_err());
    }

    #[test]
    fn impulse_scalar_geometric() {
        let d = delay_network(1, 1.0).unwrap();
        let h = impulse_response(&d, 3).unwrap();
        let e = (-1f64).exp();
        for j in 0..3 {
            assert_relative_eq!(h.matrix()[(0, j)], (1.0 - e) * e.powi(j as i32), max_relative = 1e-13);
        }
    }

    #[test]
    fn kernel_cache_reuses_entries() {
        let cache = KernelCache::new();
        let (_, h1) = cache.get(4, 8.0, 16).unwrap();
        let (_, h2) = cache.get(4, 8.0, 16).unwrap();
        assert!(Arc::ptr_eq(&h1, &h2));
        cache.get(4, 8.0, 32).unwrap();
        assert_eq!(cache.len(), 2);
    }

    #[test]
    fn row_spectra_cached_per_length() {
        let d = delay_network(3, 6.0).unwrap();
        let h = impulse_response(&d, 20).unwrap();
        let a = h.row_spectra(10).unwrap();
        let b = h.row_spectra(10).unwrap();
        assert!(Arc::ptr_eq(&a, &b));
        assert_eq!(a.len(), 3);
        assert_eq!(a[0].len(), 32);
        assert!(h.row_spectra(21).is_err());
    }
}
