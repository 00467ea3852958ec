use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Result};
use crate::numerics::SeededRng;

/// Mackey-Glass delay differential equation
/// `ẋ = β·x(t−τ) / (1 + x(t−τ)^n) − γ·x(t)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MackeyGlassConfig {
    pub beta: f64,
    pub gamma: f64,
    pub exponent: f64,
    /// Delay, in time units.
    pub tau: f64,
    /// Integration step; also the sample spacing.
    pub dt: f64,
    /// Integration steps discarded before sampling begins.
    pub warmup: usize,
    /// Number of samples returned.
    pub length: usize,
    /// Prediction horizon in samples, for windowed datasets.
    pub horizon: usize,
    pub seed: u64,
    /// Value of the initial history on `[−τ, 0]`.
    pub initial: f64,
    /// Half-width of the uniform seeded jitter added to the history.
    pub jitter: f64,
}

impl Default for MackeyGlassConfig {
    fn default() -> Self {
        MackeyGlassConfig {
            beta: 0.2,
            gamma: 0.1,
            exponent: 10.0,
            tau: 17.0,
            dt: 1.0,
            warmup: 500,
            length: 5000,
            horizon: 15,
            seed: 0,
            initial: 1.2,
            jitter: 0.05,
        }
    }
}

impl MackeyGlassConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return arg_err(format!("tau must be positive, got {}", self.tau));
        }
        if !(self.dt > 0.0 && self.dt <= self.tau) {
            return arg_err(format!(
                "dt must lie in (0, tau], got dt={} tau={}",
                self.dt, self.tau
            ));
        }
        if self.length <= self.horizon {
            return arg_err(format!(
                "length {} must exceed the horizon {}",
                self.length, self.horizon
            ));
        }
        if ![self.beta, self.gamma, self.exponent, self.initial, self.jitter]
            .iter()
            .all(|v| v.is_finite())
        {
            return arg_err("Mackey-Glass parameters must be finite");
        }
        Ok(())
    }
}

/// Integrates with fixed-step RK4. Delayed values between grid points come
/// from linear interpolation of the stored trajectory.
pub fn mackey_glass(config: &MackeyGlassConfig) -> Result<Vec<f64>> {
    config.validate()?;
    let c = config;
    let dt = c.dt;
    // Grid index 0 is t = −hist·dt; the history covers [−τ, 0].
    let hist = (c.tau / dt).ceil() as usize;
    let steps = c.warmup + c.length - 1;
    let mut rng = SeededRng::new(c.seed);
    let mut xs = Vec::with_capacity(hist + 1 + steps);
    for _ in 0..=hist {
        let jitter = if c.jitter > 0.0 {
            rng.uniform_range(-c.jitter, c.jitter)
        } else {
            0.0
        };
        xs.push(c.initial + jitter);
    }
    let delayed = |xs: &[f64], grid: f64| -> f64 {
        let lo = grid.floor();
        let i = lo as usize;
        let frac = grid - lo;
        if frac == 0.0 {
            xs[i]
        } else {
            xs[i] * (1.0 - frac) + xs[i + 1] * frac
        }
    };
    let f = |x: f64, xd: f64| c.beta * xd / (1.0 + xd.powf(c.exponent)) - c.gamma * x;
    let lag = c.tau / dt;
    for k in 0..steps {
        // The current point sits at grid index `now`.
        let now = (hist + k) as f64;
        let x = xs[hist + k];
        let d0 = delayed(&xs, now - lag);
        let dh = delayed(&xs, now + 0.5 - lag);
        let d1 = delayed(&xs, now + 1.0 - lag);
        let k1 = f(x, d0);
        let k2 = f(x + 0.5 * dt * k1, dh);
        let k3 = f(x + 0.5 * dt * k2, dh);
        let k4 = f(x + dt * k3, d1);
        xs.push(x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4));
    }
    Ok(xs.split_off(hist + c.warmup))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn no_feedback_is_exponential_decay() {
        let cfg = MackeyGlassConfig {
            beta: 0.0,
            dt: 0.1,
            warmup: 0,
            length: 1001,
            initial: 1.5,
            jitter: 0.0,
            ..MackeyGlassConfig::default()
        };
        let xs = mackey_glass(&cfg).unwrap();
        for (k, x) in xs.iter().enumerate() {
            let want = 1.5 * (-0.1 * 0.1 * k as f64).exp();
            assert!((x - want).abs() < 1e-6, "k={k}");
        }
    }

    #[test]
    fn unit_history_is_a_fixed_point() {
        let cfg = MackeyGlassConfig {
            initial: 1.0,
            jitter: 0.0,
            length: 2000,
            ..MackeyGlassConfig::default()
        };
        assert!(mackey_glass(&cfg).unwrap().iter().all(|&x| (x - 1.0).abs() < 1e-12));
    }

    #[test]
    fn same_seed_same_series() {
        let cfg = MackeyGlassConfig {
            length: 300,
            ..MackeyGlassConfig::default()
        };
        assert_eq!(mackey_glass(&cfg).unwrap(), mackey_glass(&cfg).unwrap());
        let other = MackeyGlassConfig { seed: 1, ..cfg.clone() };
        assert_ne!(mackey_glass(&cfg).unwrap(), mackey_glass(&other).unwrap());
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let base = MackeyGlassConfig::default();
        for bad in [
            MackeyGlassConfig { tau: 0.0, ..base.clone() },
            MackeyGlassConfig { dt: 0.0, ..base.clone() },
            MackeyGlassConfig { length: 15, ..base.clone() },
        ] {
            assert!(mackey_glass(&bad).is_err());
        }
    }
}
