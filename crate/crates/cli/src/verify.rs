use serde::{Deserialize, Serialize};

use lmu_core::dn::shared_kernels;
use lmu_core::lti::{check_equivalence, Equivalence, SequenceBatch};
use lmu_core::numerics::SeededRng;

use crate::failure::{CliResult, Failure};
use crate::repro::Reproduction;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyConfig {
    pub d: usize,
    pub theta: f64,
    pub n: usize,
    /// Memory channels `d_u`.
    pub channels: usize,
    pub batch: usize,
    pub seed: u64,
    pub tolerance: f64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            d: 16,
            theta: 100.0,
            n: 512,
            channels: 4,
            batch: 2,
            seed: 0,
            tolerance: 1e-9,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VerifyReport {
    pub reproduction: Reproduction,
    pub config: VerifyConfig,
    /// Per-path max-abs deviation from the sequential scan.
    pub deviations: Equivalence,
    pub max_deviation: f64,
    pub pass: bool,
}

/// Feeds one seeded Gaussian input through every execution path and compares
/// each against the scan.
pub fn verify(config: &VerifyConfig, repro: Reproduction) -> CliResult<VerifyReport> {
    let c = config;
    if c.d == 0 || c.n == 0 || c.channels == 0 || c.batch == 0 {
        return Err(Failure::Usage("d, n, channels and batch must be positive".into()));
    }
    if !(c.tolerance >= 0.0) {
        return Err(Failure::Usage(format!("tolerance must be >= 0, got {}", c.tolerance)));
    }
    let (sys, h) = shared_kernels().get(c.d, c.theta, c.n)?;
    let mut rng = SeededRng::new(c.seed);
    let u = SequenceBatch::from_fn(c.batch, c.n, c.channels, |_, _, _| rng.gaussian());
    let deviations = check_equivalence(&sys, &h, &u)?;
    let max_deviation = deviations.max();
    Ok(VerifyReport {
        reproduction: repro.seed("input", c.seed),
        config: c.clone(),
        deviations,
        max_deviation,
        pass: max_deviation <= c.tolerance,
    })
}
