use serde::{Deserialize, Serialize};

use crate::data::{LabeledDataset, Split, Targets};
use crate::dn::{decoder, delay_network};
use crate::error::{arg_err, Result};
use crate::lti::{scan_sequential, SequenceBatch};
use crate::numerics::{fft, SeededRng};
use crate::train::nrmse;

/// Synthetic delay task: band-limited Gaussian noise in, the same noise
/// delayed by `theta` steps out.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DelayTaskConfig {
    pub seed: u64,
    /// Number of sequences.
    pub count: usize,
    /// Sequence length `n`.
    pub len: usize,
    /// Delay in steps.
    pub theta: usize,
    /// Noise bandwidth in cycles per `theta` steps.
    #[serde(default = "default_bandwidth")]
    pub bandwidth: f64,
}

fn default_bandwidth() -> f64 {
    1.0
}

impl Default for DelayTaskConfig {
    fn default() -> Self {
        DelayTaskConfig {
            seed: 0,
            count: 1,
            len: 2000,
            theta: 50,
            bandwidth: default_bandwidth(),
        }
    }
}

/// Unit-RMS Gaussian noise with every frequency above `cutoff` (cycles per
/// step, in `(0, 0.5]`) removed.
///
/// White noise is generated over the next power of two, filtered with a
/// brick-wall mask in Fourier space and truncated to `n`.
pub fn band_limited_noise(rng: &mut SeededRng, n: usize, cutoff: f64) -> Result<Vec<f64>> {
    if n == 0 {
        return arg_err("noise length must be positive");
    }
    if !(cutoff > 0.0 && cutoff <= 0.5) {
        return arg_err(format!("cutoff {cutoff} outside (0, 0.5] cycles per step"));
    }
    let size = fft::next_pow2(n);
    let mut re: Vec<f64> = (0..size).map(|_| rng.gaussian()).collect();
    let mut im = vec![0.0; size];
    fft::transform(&mut re, &mut im, false);
    for k in 0..size {
        let freq = k.min(size - k) as f64 / size as f64;
        if freq > cutoff {
            re[k] = 0.0;
            im[k] = 0.0;
        }
    }
    fft::transform(&mut re, &mut im, true);
    re.truncate(n);
    let rms = (re.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
    if rms == 0.0 {
        return arg_err("cutoff removes every frequency at this length");
    }
    re.iter_mut().for_each(|v| *v /= rms);
    Ok(re)
}

/// Inputs `u` and targets `y_t = u_{t−θ}` (zero for `t < θ`), each of shape
/// `(count, len, 1)`. Sequence `i` is drawn from stream `i` of the seed.
pub fn delay_task(config: &DelayTaskConfig) -> Result<LabeledDataset> {
    let DelayTaskConfig {
        seed,
        count,
        len,
        theta,
        bandwidth,
    } = *config;
    if theta >= len {
        return arg_err(format!("delay {theta} must be shorter than the sequence ({len})"));
    }
    if count == 0 || theta == 0 {
        return arg_err("delay task needs count >= 1 and theta >= 1");
    }
    let cutoff = (bandwidth / theta as f64).min(0.5);
    let mut inputs = Vec::with_capacity(count * len);
    let mut targets = Vec::with_capacity(count * len);
    for i in 0..count {
        let mut rng = SeededRng::derived(seed, i as u64);
        let u = band_limited_noise(&mut rng, len, cutoff)?;
        targets.extend((0..len).map(|t| if t >= theta { u[t - theta] } else { 0.0 }));
        inputs.extend(u);
    }
    LabeledDataset::new(
        SequenceBatch::new(count, len, 1, inputs)?,
        Targets::Real(SequenceBatch::new(count, len, 1, targets)?),
        Split::Train,
    )
}

/// Decodes `u_{t−θ}` from the state of an order-`order` DN driven by
/// `signal`, for every step `t`.
pub fn reconstruct_delay(order: usize, theta: usize, signal: &[f64]) -> Result<Vec<f64>> {
    if theta == 0 {
        return arg_err("delay must be at least one step");
    }
    let sys = delay_network(order, theta as f64)?;
    let c = decoder(order, theta as f64, theta as f64)?.coeffs;
    let u = SequenceBatch::new(1, signal.len(), 1, signal.to_vec())?;
    let m = scan_sequential(&sys, &u, None)?;
    Ok((0..signal.len())
        .map(|t| m.flat(0, t).iter().zip(&c).map(|(a, b)| a * b).sum())
        .collect())
}

/// NRMSE of [`reconstruct_delay`] against the true delayed signal, scored on
/// steps `t ≥ from`. `from` must be at least `θ` so every target is an
/// actual input sample.
pub fn reconstruction_nrmse(order: usize, theta: usize, signal: &[f64], from: usize) -> Result<f64> {
    if from < theta || from >= signal.len() {
        return arg_err(format!(
            "scoring start {from} must lie in [theta={theta}, {})",
            signal.len()
        ));
    }
    let decoded = reconstruct_delay(order, theta, signal)?;
    nrmse(&decoded[from..], &signal[from - theta..signal.len() - theta])
}
