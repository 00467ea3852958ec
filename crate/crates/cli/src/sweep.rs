use serde::{Deserialize, Serialize};

use lmu_core::data::{band_limited_noise, reconstruction_nrmse};
use lmu_core::numerics::SeededRng;

use crate::failure::{CliResult, Failure};
use crate::repro::Reproduction;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum SweepSignal {
    /// Band-limited Gaussian noise.
    Noise,
    /// A constant 1.
    Constant,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub theta: usize,
    pub orders: Vec<usize>,
    pub signal_seed: u64,
    pub len: usize,
    pub signal: SweepSignal,
    /// Noise bandwidth in cycles per `theta` steps.
    pub bandwidth: f64,
    /// Absolute cutoff in cycles per step; overrides `bandwidth`.
    pub cutoff: Option<f64>,
    /// First scored step; defaults to `theta`, the earliest step whose
    /// target is a real sample.
    pub warmup: Option<usize>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            theta: 100,
            orders: vec![2, 4, 8, 12],
            signal_seed: 0,
            len: 10_000,
            signal: SweepSignal::Noise,
            bandwidth: 1.0,
            cutoff: None,
            warmup: None,
        }
    }
}

impl SweepConfig {
    pub fn cutoff(&self) -> f64 {
        self.cutoff.unwrap_or(self.bandwidth / self.theta as f64).min(0.5)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepReport {
    pub reproduction: Reproduction,
    pub config: SweepConfig,
    /// `(order, nrmse)`, in the order requested.
    pub rows: Vec<(usize, f64)>,
}

impl SweepReport {
    /// `order,nrmse` with the reproduction stanza as leading `#` comments,
    /// which gnuplot and most CSV readers skip.
    pub fn to_csv(&self) -> String {
        let mut out = self.reproduction.comment_lines();
        out.push_str("order,nrmse\n");
        for (d, e) in &self.rows {
            out.push_str(&format!("{d},{e:.9e}\n"));
        }
        out
    }

    pub fn is_monotone(&self) -> bool {
        self.rows.windows(2).all(|w| w[1].1 <= w[0].1)
    }
}

/// Decoder-based delay reconstruction error per memory order, all on the
/// same signal.
pub fn delay_sweep(config: &SweepConfig, repro: Reproduction) -> CliResult<SweepReport> {
    let c = config;
    if c.theta == 0 || c.orders.is_empty() || c.orders.contains(&0) {
        return Err(Failure::Usage("theta and every order must be positive".into()));
    }
    let from = c.warmup.unwrap_or(c.theta).max(c.theta);
    if c.len <= from {
        return Err(Failure::Usage(format!(
            "signal length {} leaves nothing to score after step {from}",
            c.len
        )));
    }
    let signal = match c.signal {
        SweepSignal::Noise => {
            let mut rng = SeededRng::new(c.signal_seed);
            band_limited_noise(&mut rng, c.len, c.cutoff())?
        }
        SweepSignal::Constant => vec![1.0; c.len],
    };
    let rows = c
        .orders
        .iter()
        .map(|&d| Ok((d, reconstruction_nrmse(d, c.theta, &signal, from)?)))
        .collect::<CliResult<Vec<_>>>()?;
    Ok(SweepReport {
        reproduction: repro.seed("signal", c.signal_seed),
        config: c.clone(),
        rows,
    })
}
