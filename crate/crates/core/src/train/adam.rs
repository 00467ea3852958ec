use serde::{Deserialize, Serialize};

use crate::error::{arg_err, dim_err, Result};
use crate::layers::checkpoint::Container;
use crate::numerics::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adam moments for one list of parameters. Frozen tensors are never
/// parameters, so they never get moments.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Matrix>,
    pub v: Vec<Matrix>,
}

impl AdamState {
    pub fn new(config: AdamConfig, params: &[&Matrix]) -> Self {
        let zeros = |p: &&Matrix| Matrix::zeros(p.rows(), p.cols());
        AdamState {
            config,
            step: 0,
            m: params.iter().map(zeros).collect(),
            v: params.iter().map(zeros).collect(),
        }
    }

    /// One bias-corrected update,
    /// `p −= lr · m̂ / (√v̂ + ε)` with `m̂ = m / (1 − β1^t)`, `v̂ = v / (1 − β2^t)`.
    pub fn update(&mut self, params: Vec<&mut Matrix>, grads: &[Matrix]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return dim_err(format!(
                "optimizer tracks {} tensors, got {} parameters and {} gradients",
                self.m.len(),
                params.len(),
                grads.len()
            ));
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.m) {
            if p.shape() != g.shape() || p.shape() != m.shape() {
                return dim_err(format!(
                    "parameter {:?}, gradient {:?}, moment {:?}",
                    p.shape(),
                    g.shape(),
                    m.shape()
                ));
            }
        }
        let AdamConfig {
            lr,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for (((p, g), m), v) in params
            .into_iter()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            for (((pi, &gi), mi), vi) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                *pi -= lr * (*mi / c1) / ((*vi / c2).sqrt() + epsilon);
            }
        }
        Ok(())
    }

    pub fn to_container(&self) -> Container {
        let meta = serde_json::json!({ "config": self.config, "step": self.step });
        let mut c = Container::new("adam", meta);
        for (i, (m, v)) in self.m.iter().zip(&self.v).enumerate() {
            c.push(format!("m.{i}"), m.clone());
            c.push(format!("v.{i}"), v.clone());
        }
        c
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        if c.kind != "adam" || c.tensors.len() % 2 != 0 {
            return arg_err(format!("checkpoint holds '{}', not optimizer state", c.kind));
        }
        let config: AdamConfig = serde_json::from_value(c.meta["config"].clone())?;
        let step = c.meta["step"]
            .as_u64()
            .ok_or_else(|| crate::Error::Argument("optimizer step missing".into()))?;
        let (mut m, mut v) = (Vec::new(), Vec::new());
        for pair in c.tensors.chunks_exact(2) {
            m.push(pair[0].1.clone());
            v.push(pair[1].1.clone());
        }
        Ok(AdamState { config, step, m, v })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_changes_nothing() {
        let mut p = Matrix::from_vec(1, 3, vec![1.0, -2.0, 0.5]).unwrap();
        let before = p.clone();
        let mut adam = AdamState::new(AdamConfig::default(), &[&p]);
        adam.update(vec![&mut p], &[Matrix::zeros(1, 3)]).unwrap();
        assert_eq!(p, before);
        assert_eq!(adam.m[0].max_abs(), 0.0);
        assert_eq!(adam.v[0].max_abs(), 0.0);
    }

    #[test]
    fn first_step_matches_hand_computation() {
        // After one step m̂ = g and v̂ = g², so the move is lr·g/(|g| + ε).
        let g = [0.3, -4.0, 1e-9];
        let mut p = Matrix::zeros(1, 3);
        let mut adam = AdamState::new(AdamConfig::default(), &[&p]);
        adam.update(vec![&mut p], &[Matrix::from_vec(1, 3, g.to_vec()).unwrap()])
            .unwrap();
        for (pi, gi) in p.data().iter().zip(g) {
            let want = -1e-3 * gi / (gi.abs() + 1e-8);
            assert!((pi - want).abs() < 1e-15, "{pi} vs {want}");
        }
    }

    #[test]
    fn steps_descend_a_quadratic() {
        let mut p = Matrix::from_vec(1, 1, vec![2.0]).unwrap();
        let mut adam = AdamState::new(AdamConfig { lr: 0.1, ..AdamConfig::default() }, &[&p]);
        let mut last = f64::INFINITY;
        for _ in 0..2 {
            let x = p.data()[0];
            let loss = x * x;
            assert!(loss < last);
            last = loss;
            let g = Matrix::from_vec(1, 1, vec![2.0 * x]).unwrap();
            adam.update(vec![&mut p], &[g]).unwrap();
        }
        assert!(p.data()[0].powi(2) < last);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut p = Matrix::zeros(2, 2);
        let mut adam = AdamState::new(AdamConfig::default(), &[&p]);
        assert!(adam.update(vec![&mut p], &[Matrix::zeros(2, 1)]).is_err());
        assert!(adam.update(vec![], &[]).is_err());
    }

    #[test]
    fn state_round_trips_through_a_container() {
        let mut p = Matrix::from_vec(2, 1, vec![0.1, 0.2]).unwrap();
        let mut adam = AdamState::new(AdamConfig::default(), &[&p]);
        adam.update(vec![&mut p], &[Matrix::from_vec(2, 1, vec![0.7, -0.1]).unwrap()])
            .unwrap();
        let mut bytes = Vec::new();
        adam.to_container().write_to(&mut bytes).unwrap();
        let back = AdamState::from_container(&Container::from_bytes(&bytes).unwrap()).unwrap();
        assert_eq!(back, adam);
    }
}
