use serde::{Deserialize, Serialize};

/// Elementwise activations, plus softmax over a feature vector.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Identity,
    Tanh,
    Relu,
    Sigmoid,
    /// Only valid at a classification head, paired with cross-entropy.
    Softmax,
}

impl Activation {
    pub fn parse(s: &str) -> Option<Activation> {
        match s.to_ascii_lowercase().as_str() {
            "identity" | "linear" | "none" => Some(Activation::Identity),
            "tanh" => Some(Activation::Tanh),
            "relu" => Some(Activation::Relu),
            "sigmoid" => Some(Activation::Sigmoid),
            "softmax" => Some(Activation::Softmax),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Identity => "identity",
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
            Activation::Sigmoid => "sigmoid",
            Activation::Softmax => "softmax",
        }
    }

    /// Maps a pre-activation vector to `out` (same length).
    pub fn forward(self, pre: &[f64], out: &mut [f64]) {
        match self {
            Activation::Identity => out.copy_from_slice(pre),
            Activation::Tanh => out.iter_mut().zip(pre).for_each(|(o, &x)| *o = x.tanh()),
            Activation::Relu => out.iter_mut().zip(pre).for_each(|(o, &x)| *o = x.max(0.0)),
            Activation::Sigmoid => out.iter_mut().zip(pre).for_each(|(o, &x)| *o = sigmoid(x)),
            Activation::Softmax => {
                let max = pre.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for (o, &x) in out.iter_mut().zip(pre) {
                    *o = (x - max).exp();
                    sum += *o;
                }
                out.iter_mut().for_each(|o| *o /= sum);
            }
        }
    }

    pub fn forward_vec(self, pre: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; pre.len()];
        self.forward(pre, &mut out);
        out
    }

    /// Vector-Jacobian product: overwrites `grad` (w.r.t. the output) with the
    /// gradient w.r.t. the pre-activation. `pre` and `out` are the cached
    /// forward values.
    pub fn backward(self, pre: &[f64], out: &[f64], grad: &mut [f64]) {
        match self {
            Activation::Identity => {}
            Activation::Tanh => grad.iter_mut().zip(out).for_each(|(g, y)| *g *= 1.0 - y * y),
            Activation::Relu => grad.iter_mut().zip(pre).for_each(|(g, &x)| {
                if x <= 0.0 {
                    *g = 0.0
                }
            }),
            Activation::Sigmoid => grad.iter_mut().zip(out).for_each(|(g, y)| *g *= y * (1.0 - y)),
            Activation::Softmax => {
                let dot: f64 = grad.iter().zip(out).map(|(g, y)| g * y).sum();
                grad.iter_mut().zip(out).for_each(|(g, y)| *g = y * (*g - dot));
            }
        }
    }

    /// Whether `f(0) = 0`.
    pub fn fixes_zero(self) -> bool {
        matches!(self, Activation::Identity | Activation::Tanh | Activation::Relu)
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const ALL: [Activation; 5] = [
        Activation::Identity,
        Activation::Tanh,
        Activation::Relu,
        Activation::Sigmoid,
        Activation::Softmax,
    ];

    #[test]
    fn softmax_normalizes() {
        let p = Activation::Softmax.forward_vec(&[1000.0, -3.0, 2.5, 0.0]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let q = Activation::Softmax.forward_vec(&[0.1, 0.2, 0.3]);
        assert!((q.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let pre = [0.3, -1.2, 0.7, 2.0];
        let weights = [0.5, -1.0, 2.0, 0.25];
        let eps = 1e-6;
        for act in ALL {
            let out = act.forward_vec(&pre);
            let mut grad = weights.to_vec();
            act.backward(&pre, &out, &mut grad);
            for i in 0..pre.len() {
                let f = |delta: f64| {
                    let mut p = pre;
                    p[i] += delta;
                    act.forward_vec(&p)
                        .iter()
                        .zip(&weights)
                        .map(|(a, b)| a * b)
                        .sum::<f64>()
                };
                let fd = (f(eps) - f(-eps)) / (2.0 * eps);
                assert!((fd - grad[i]).abs() < 1e-8, "{act:?} i={i}: {fd} vs {}", grad[i]);
            }
        }
    }

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        assert_eq!(sigmoid(-1000.0), 0.0);
        assert_eq!(sigmoid(1000.0), 1.0);
        assert!((sigmoid(0.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn parse_round_trip() {
        for act in ALL {
            assert_eq!(Activation::parse(act.name()), Some(act));
        }
        assert_eq!(Activation::parse("gelu"), None);
    }
}
