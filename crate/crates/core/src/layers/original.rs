use serde::{Deserialize, Serialize};

use crate::dn::{shared_kernels, DiscreteLti};
use crate::error::{arg_err, dim_err, Result};
use crate::layers::{check_input_dim, fan_in_uniform, missing_cache, Activation, Layer};
use crate::lti::SequenceBatch;
use crate::numerics::{Matrix, SeededRng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OriginalLmuConfig {
    pub order: usize,
    pub theta: f64,
    pub input_dim: usize,
    pub hidden_dim: usize,
    #[serde(default = "default_activation")]
    pub activation: Activation,
    #[serde(default = "default_true")]
    pub return_sequences: bool,
}

fn default_activation() -> Activation {
    Activation::Tanh
}

fn default_true() -> bool {
    true
}

impl OriginalLmuConfig {
    pub fn validate(&self) -> Result<()> {
        if self.order == 0 || !(self.theta.is_finite() && self.theta > 0.0) {
            return arg_err("memory needs d >= 1 and theta > 0");
        }
        if self.input_dim == 0 || self.hidden_dim == 0 {
            return arg_err("layer dimensions must be positive");
        }
        if self.activation == Activation::Softmax {
            return arg_err("softmax is only allowed on a dense classification head");
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        let (d, dx, dh) = (self.order, self.input_dim, self.hidden_dim);
        dx + dh + d + dh * dx + dh * dh + dh * d
    }
}

/// The original recurrent LMU cell: a scalar input `u_t` drives one delay
/// network, whose memory feeds back into a nonlinear hidden state.
///
/// ```text
/// u_t = e_xᵀ x_t + e_hᵀ h_{t−1} + e_mᵀ m_{t−1}
/// m_t = Ā m_{t−1} + B̄ u_t
/// h_t = f(W_x x_t + W_h h_{t−1} + W_m m_t)
/// ```
///
/// Only sequential evaluation is possible. `Ā` and `B̄` stay frozen.
#[derive(Clone, Debug)]
pub struct OriginalLmuCell {
    config: OriginalLmuConfig,
    /// `1 x d_x`.
    pub e_x: Matrix,
    /// `1 x d_h`.
    pub e_h: Matrix,
    /// `1 x d`.
    pub e_m: Matrix,
    pub w_x: Matrix,
    pub w_h: Matrix,
    pub w_m: Matrix,
    cache: Option<Trajectory>,
}

/// Everything BPTT needs, for each `(b, t)`.
#[derive(Clone, Debug)]
struct Trajectory {
    x: SequenceBatch,
    /// `h_t` for `t = 0..=n` (index 0 is the zero initial state).
    h: Vec<f64>,
    m: Vec<f64>,
    pre: Vec<f64>,
}

impl OriginalLmuCell {
    pub fn new(config: OriginalLmuConfig, rng: &mut SeededRng) -> Result<Self> {
        config.validate()?;
        let (d, dx, dh) = (config.order, config.input_dim, config.hidden_dim);
        let fan = dx + dh + d;
        Ok(OriginalLmuCell {
            e_x: fan_in_uniform(rng, 1, dx, fan),
            e_h: fan_in_uniform(rng, 1, dh, fan),
            e_m: fan_in_uniform(rng, 1, d, fan),
            w_x: fan_in_uniform(rng, dh, dx, fan),
            w_h: fan_in_uniform(rng, dh, dh, fan),
            w_m: fan_in_uniform(rng, dh, d, fan),
            config,
            cache: None,
        })
    }

    pub fn zeroed(config: OriginalLmuConfig) -> Result<Self> {
        config.validate()?;
        let (d, dx, dh) = (config.order, config.input_dim, config.hidden_dim);
        Ok(OriginalLmuCell {
            e_x: Matrix::zeros(1, dx),
            e_h: Matrix::zeros(1, dh),
            e_m: Matrix::zeros(1, d),
            w_x: Matrix::zeros(dh, dx),
            w_h: Matrix::zeros(dh, dh),
            w_m: Matrix::zeros(dh, d),
            config,
            cache: None,
        })
    }

    pub fn config(&self) -> &OriginalLmuConfig {
        &self.config
    }

    pub fn system(&self) -> Result<std::sync::Arc<DiscreteLti>> {
        Ok(shared_kernels().get(self.config.order, self.config.theta, 1)?.0)
    }

    /// One step of the cell. Returns `(h_t, m_t)`.
    pub fn step(&self, x_t: &[f64], h_prev: &[f64], m_prev: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let sys = self.system()?;
        let (h, m, _) = self.step_with(&sys, x_t, h_prev, m_prev)?;
        Ok((h, m))
    }

    fn step_with(
        &self,
        sys: &DiscreteLti,
        x_t: &[f64],
        h_prev: &[f64],
        m_prev: &[f64],
    ) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        let (d, dx, dh) = (
            self.config.order,
            self.config.input_dim,
            self.config.hidden_dim,
        );
        if x_t.len() != dx || h_prev.len() != dh || m_prev.len() != d {
            return dim_err(format!(
                "cell step expects x:{dx} h:{dh} m:{d}, got x:{} h:{} m:{}",
                x_t.len(),
                h_prev.len(),
                m_prev.len()
            ));
        }
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).sum::<f64>();
        let u = dot(self.e_x.data(), x_t) + dot(self.e_h.data(), h_prev) + dot(self.e_m.data(), m_prev);
        let mut m = vec![0.0; d];
        sys.abar.matvec_into(m_prev, &mut m);
        for (mk, bk) in m.iter_mut().zip(sys.bbar.data()) {
            *mk += bk * u;
        }
        let mut pre = vec![0.0; dh];
        self.w_x.matvec_into(x_t, &mut pre);
        self.w_h.matvec_acc(h_prev, &mut pre);
        self.w_m.matvec_acc(&m, &mut pre);
        let h = self.config.activation.forward_vec(&pre);
        Ok((h, m, pre))
    }

    fn run(&self, x: &SequenceBatch) -> Result<Trajectory> {
        check_input_dim("lmu cell", x, self.config.input_dim)?;
        let (batch, n, _) = x.shape();
        if n == 0 {
            return arg_err("lmu cell: empty input sequence");
        }
        let (d, dh) = (self.config.order, self.config.hidden_dim);
        let sys = self.system()?;
        let mut h = vec![0.0; batch * (n + 1) * dh];
        let mut m = vec![0.0; batch * (n + 1) * d];
        let mut pre = vec![0.0; batch * n * dh];
        for b in 0..batch {
            for t in 0..n {
                let hp = (b * (n + 1) + t) * dh;
                let mp = (b * (n + 1) + t) * d;
                let (ht, mt, pt) = self.step_with(&sys, x.step(b, t), &h[hp..hp + dh], &m[mp..mp + d])?;
                h[hp + dh..hp + 2 * dh].copy_from_slice(&ht);
                m[mp + d..mp + 2 * d].copy_from_slice(&mt);
                pre[(b * n + t) * dh..(b * n + t + 1) * dh].copy_from_slice(&pt);
            }
        }
        Ok(Trajectory {
            x: x.clone(),
            h,
            m,
            pre,
        })
    }

    fn output(&self, traj: &Trajectory) -> Result<SequenceBatch> {
        let (batch, n, _) = traj.x.shape();
        let dh = self.config.hidden_dim;
        let out_len = if self.config.return_sequences { n } else { 1 };
        let mut out = Vec::with_capacity(batch * out_len * dh);
        for b in 0..batch {
            let start = (b * (n + 1) + n + 1 - out_len) * dh;
            out.extend_from_slice(&traj.h[start..start + out_len * dh]);
        }
        SequenceBatch::new(batch, out_len, dh, out)
    }
}

impl Layer for OriginalLmuCell {
    fn param_names(&self) -> &'static [&'static str] {
        &["e_x", "e_h", "e_m", "W_x", "W_h", "W_m"]
    }

    fn params(&self) -> Vec<&Matrix> {
        vec![&self.e_x, &self.e_h, &self.e_m, &self.w_x, &self.w_h, &self.w_m]
    }

    fn params_mut(&mut self) -> Vec<&mut Matrix> {
        vec![
            &mut self.e_x,
            &mut self.e_h,
            &mut self.e_m,
            &mut self.w_x,
            &mut self.w_h,
            &mut self.w_m,
        ]
    }

    fn forward(&self, x: &SequenceBatch) -> Result<SequenceBatch> {
        let traj = self.run(x)?;
        self.output(&traj)
    }

    fn forward_train(&mut self, x: &SequenceBatch) -> Result<SequenceBatch> {
        let traj = self.run(x)?;
        let y = self.output(&traj)?;
        self.cache = Some(traj);
        Ok(y)
    }

    /// Backpropagation through time over the whole unrolled sequence.
    fn backward(&mut self, grad_out: &SequenceBatch) -> Result<(Vec<Matrix>, SequenceBatch)> {
        let traj = match self.cache.take() {
            Some(c) => c,
            None => return missing_cache("lmu cell"),
        };
        let (d, dx, dh) = (
            self.config.order,
            self.config.input_dim,
            self.config.hidden_dim,
        );
        let (batch, n, _) = traj.x.shape();
        let out_len = grad_out.len();
        if grad_out.shape() != (batch, if self.config.return_sequences { n } else { 1 }, dh) {
            return dim_err("lmu cell: upstream gradient shape mismatch");
        }
        let sys = self.system()?;
        let at = sys.abar.transpose();
        let bbar = sys.bbar.data();
        let act = self.config.activation;

        let mut grads: Vec<Matrix> = self
            .params()
            .iter()
            .map(|p| Matrix::zeros(p.rows(), p.cols()))
            .collect();
        let mut gx = SequenceBatch::zeros(batch, n, dx);
        let mut ga = vec![0.0; dh];
        let mut gm = vec![0.0; d];
        for b in 0..batch {
            let mut gh_carry = vec![0.0; dh];
            let mut gm_carry = vec![0.0; d];
            for t in (0..n).rev() {
                let h_prev = &traj.h[(b * (n + 1) + t) * dh..(b * (n + 1) + t + 1) * dh];
                let h_t = &traj.h[(b * (n + 1) + t + 1) * dh..(b * (n + 1) + t + 2) * dh];
                let m_prev = &traj.m[(b * (n + 1) + t) * d..(b * (n + 1) + t + 1) * d];
                let m_t = &traj.m[(b * (n + 1) + t + 1) * d..(b * (n + 1) + t + 2) * d];
                let pre = &traj.pre[(b * n + t) * dh..(b * n + t + 1) * dh];
                let x_t = traj.x.step(b, t);

                ga.copy_from_slice(&gh_carry);
                if t + out_len >= n {
                    let s = t + out_len - n;
                    for (g, o) in ga.iter_mut().zip(grad_out.step(b, s)) {
                        *g += o;
                    }
                }
                act.backward(pre, h_t, &mut ga);

                grads[3].outer_acc(&ga, x_t);
                grads[4].outer_acc(&ga, h_prev);
                grads[5].outer_acc(&ga, m_t);

                gm.copy_from_slice(&gm_carry);
                self.w_m.matvec_t_acc(&ga, &mut gm);
                let gu: f64 = gm.iter().zip(bbar).map(|(g, b)| g * b).sum();

                for (acc, v) in grads[0].data_mut().iter_mut().zip(x_t) {
                    *acc += gu * v;
                }
                for (acc, v) in grads[1].data_mut().iter_mut().zip(h_prev) {
                    *acc += gu * v;
                }
                for (acc, v) in grads[2].data_mut().iter_mut().zip(m_prev) {
                    *acc += gu * v;
                }

                let gxt = gx.step_mut(b, t);
                self.w_x.matvec_t_acc(&ga, gxt);
                for (g, e) in gxt.iter_mut().zip(self.e_x.data()) {
                    *g += gu * e;
                }

                gh_carry.iter_mut().for_each(|v| *v = 0.0);
                self.w_h.matvec_t_acc(&ga, &mut gh_carry);
                for (g, e) in gh_carry.iter_mut().zip(self.e_h.data()) {
                    *g += gu * e;
                }
                at.matvec_into(&gm, &mut gm_carry);
                for (g, e) in gm_carry.iter_mut().zip(self.e_m.data()) {
                    *g += gu * e;
                }
            }
        }
        Ok((grads, gx))
    }

    fn input_dim(&self) -> usize {
        self.config.input_dim
    }

    fn output_dim(&self) -> usize {
        self.config.hidden_dim
    }
}
