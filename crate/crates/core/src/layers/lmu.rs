use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::dn::{shared_kernels, DiscreteLti, ImpulseResponse};
use crate::error::{arg_err, dim_err, Result};
use crate::layers::{
    activate_rows, activation_backward_rows, affine_rows, check_input_dim, fan_in_uniform,
    missing_cache, Activation, Layer,
};
use crate::lti::{self, MemorySequence, MemoryState, SequenceBatch};
use crate::numerics::{Matrix, SeededRng};

/// How the memory is evaluated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExecMode {
    /// Step-by-step recurrence, as at inference time.
    Sequential,
    /// Convolution with the impulse response over the whole sequence.
    ParallelFull,
    /// Only the last memory state, one dot product per step. Emits `o_n`.
    ParallelFinal,
}

impl ExecMode {
    pub fn parse(s: &str) -> Option<ExecMode> {
        match s {
            "sequential" => Some(ExecMode::Sequential),
            "parallel-full" | "parallel" => Some(ExecMode::ParallelFull),
            "parallel-final" | "final" => Some(ExecMode::ParallelFinal),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ExecMode::Sequential => "sequential",
            ExecMode::ParallelFull => "parallel-full",
            ExecMode::ParallelFinal => "parallel-final",
        }
    }
}

/// Convolution strategy for [`ExecMode::ParallelFull`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConvBackend {
    /// Picks dense or FFT from the estimated cost.
    #[default]
    Auto,
    Dense,
    Fft,
}

fn default_output_activation() -> Activation {
    Activation::Tanh
}

fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LmuFitConfig {
    /// Memory order `d`.
    pub order: usize,
    pub theta: f64,
    /// `d_x`.
    pub input_dim: usize,
    /// `d_u`, the number of memory channels.
    pub memory_channels: usize,
    /// `d_o`.
    pub output_dim: usize,
    /// Expected sequence length; informational, kernels are built per call.
    #[serde(default)]
    pub seq_len: Option<usize>,
    #[serde(default)]
    pub encoder_activation: Activation,
    #[serde(default = "default_output_activation")]
    pub output_activation: Activation,
    pub mode: ExecMode,
    #[serde(default = "default_true")]
    pub return_sequences: bool,
    #[serde(default)]
    pub backend: ConvBackend,
}

impl LmuFitConfig {
    pub fn new(
        order: usize,
        theta: f64,
        input_dim: usize,
        memory_channels: usize,
        output_dim: usize,
    ) -> Self {
        LmuFitConfig {
            order,
            theta,
            input_dim,
            memory_channels,
            output_dim,
            seq_len: None,
            encoder_activation: Activation::Identity,
            output_activation: Activation::Tanh,
            mode: ExecMode::ParallelFull,
            return_sequences: true,
            backend: ConvBackend::Auto,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.order == 0 || !(self.theta.is_finite() && self.theta > 0.0) {
            return arg_err(format!(
                "memory needs d >= 1 and theta > 0, got d={} theta={}",
                self.order, self.theta
            ));
        }
        if self.input_dim == 0 || self.memory_channels == 0 || self.output_dim == 0 {
            return arg_err("layer dimensions must be positive");
        }
        if self.mode == ExecMode::ParallelFinal && self.return_sequences {
            return arg_err("parallel-final mode only emits the last output");
        }
        if matches!(self.encoder_activation, Activation::Softmax)
            || matches!(self.output_activation, Activation::Softmax)
        {
            return arg_err("softmax is only allowed on a dense classification head");
        }
        Ok(())
    }

    /// `d_u·d_x + d_u + d_o·d·d_u + d_o·d_x + d_o`.
    pub fn param_count(&self) -> usize {
        let (d, dx, du, d_o) = (
            self.order,
            self.input_dim,
            self.memory_channels,
            self.output_dim,
        );
        du * dx + du + d_o * d * du + d_o * dx + d_o
    }
}

#[derive(Clone, Debug)]
enum Memory {
    Full(MemorySequence),
    Last(MemoryState),
}

#[derive(Clone, Debug)]
struct LmuCache {
    x: SequenceBatch,
    u_pre: Vec<f64>,
    u: Vec<f64>,
    memory: Memory,
    o_pre: Vec<f64>,
    o: Vec<f64>,
}

/// Running memory for streaming inference, one example at a time.
#[derive(Clone, Debug, PartialEq)]
pub struct StreamingState {
    /// Flattened `d_u·d` memory, channel-major.
    pub memory: Vec<f64>,
    pub steps: usize,
}

/// The simplified LMU: a pointwise encoder, a frozen delay-network memory per
/// encoder channel, and a pointwise output projection.
///
/// The memory can be evaluated as a recurrence or as a convolution; both give
/// the same outputs for the same weights, so a layer trained in a parallel
/// mode can be served step by step.
#[derive(Clone, Debug)]
pub struct LmuFitLayer {
    config: LmuFitConfig,
    pub u_x: Matrix,
    pub b_u: Matrix,
    /// `d_o x (d·d_u)`; column `c·d + k` reads coefficient `k` of channel `c`.
    pub w_m: Matrix,
    pub w_x: Matrix,
    pub b_o: Matrix,
    cache: Option<LmuCache>,
}

impl LmuFitLayer {
    pub fn new(config: LmuFitConfig, rng: &mut SeededRng) -> Result<Self> {
        config.validate()?;
        let (d, dx, du, d_o) = (
            config.order,
            config.input_dim,
            config.memory_channels,
            config.output_dim,
        );
        let fan_out = d * du + dx;
        Ok(LmuFitLayer {
            u_x: fan_in_uniform(rng, du, dx, dx),
            b_u: Matrix::zeros(du, 1),
            w_m: fan_in_uniform(rng, d_o, d * du, fan_out),
            w_x: fan_in_uniform(rng, d_o, dx, fan_out),
            b_o: Matrix::zeros(d_o, 1),
            config,
            cache: None,
        })
    }

    /// A layer with all-zero weights, for tests and for loading.
    pub fn zeroed(config: LmuFitConfig) -> Result<Self> {
        config.validate()?;
        let (d, dx, du, d_o) = (
            config.order,
            config.input_dim,
            config.memory_channels,
            config.output_dim,
        );
        Ok(LmuFitLayer {
            u_x: Matrix::zeros(du, dx),
            b_u: Matrix::zeros(du, 1),
            w_m: Matrix::zeros(d_o, d * du),
            w_x: Matrix::zeros(d_o, dx),
            b_o: Matrix::zeros(d_o, 1),
            config,
            cache: None,
        })
    }

    pub fn config(&self) -> &LmuFitConfig {
        &self.config
    }

    pub fn mode(&self) -> ExecMode {
        self.config.mode
    }

    /// Switches the evaluation strategy. Weights are untouched.
    pub fn set_mode(&mut self, mode: ExecMode, return_sequences: bool) -> Result<()> {
        let mut config = self.config.clone();
        config.mode = mode;
        config.return_sequences = return_sequences;
        config.validate()?;
        self.config = config;
        self.cache = None;
        Ok(())
    }

    pub fn set_backend(&mut self, backend: ConvBackend) {
        self.config.backend = backend;
    }

    /// The frozen `Ā`, `B̄` and `H` used for sequences of length `len`.
    pub fn kernels(&self, len: usize) -> Result<(Arc<DiscreteLti>, Arc<ImpulseResponse>)> {
        shared_kernels().get(self.config.order, self.config.theta, len.max(1))
    }

    fn memory(&self, u: &SequenceBatch) -> Result<Memory> {
        let n = u.len();
        let (sys, h) = self.kernels(n)?;
        let full = match self.config.mode {
            ExecMode::ParallelFinal => return Ok(Memory::Last(lti::final_state(&h, u)?)),
            ExecMode::Sequential => lti::scan_sequential(&sys, u, None)?,
            ExecMode::ParallelFull => match self.config.backend {
                ConvBackend::Dense => lti::conv_dense(&h, u)?,
                ConvBackend::Fft => lti::conv_fft(&h, u)?,
                ConvBackend::Auto => {
                    let (dense, fft) = lti::adjoint_costs(self.config.order, n);
                    if fft < dense {
                        lti::conv_fft(&h, u)?
                    } else {
                        lti::conv_dense(&h, u)?
                    }
                }
            },
        };
        Ok(if self.config.return_sequences {
            Memory::Full(full)
        } else {
            Memory::Last(full.last())
        })
    }

    fn run(&self, x: &SequenceBatch) -> Result<LmuCache> {
        check_input_dim("lmu", x, self.config.input_dim)?;
        let (batch, n, dx) = x.shape();
        if n == 0 {
            return arg_err("lmu: empty input sequence");
        }
        let du = self.config.memory_channels;
        let d_o = self.config.output_dim;
        let u_pre = affine_rows(&self.u_x, &self.b_u, x);
        let u = activate_rows(self.config.encoder_activation, &u_pre, du);
        let memory = self.memory(&SequenceBatch::new(batch, n, du, u.clone())?)?;

        let out_len = if self.config.return_sequences { n } else { 1 };
        let mut o_pre = vec![0.0; batch * out_len * d_o];
        for b in 0..batch {
            for s in 0..out_len {
                let t = n - out_len + s;
                let m = match &memory {
                    Memory::Full(seq) => seq.flat(b, t),
                    Memory::Last(state) => state.flat(b),
                };
                let row = &mut o_pre[(b * out_len + s) * d_o..(b * out_len + s + 1) * d_o];
                self.w_m.matvec_into(m, row);
                let xi = &x.values()[(b * n + t) * dx..(b * n + t + 1) * dx];
                self.w_x.matvec_acc(xi, row);
                for (o, bias) in row.iter_mut().zip(self.b_o.data()) {
                    *o += bias;
                }
            }
        }
        let o = activate_rows(self.config.output_activation, &o_pre, d_o);
        Ok(LmuCache {
            x: x.clone(),
            u_pre,
            u,
            memory,
            o_pre,
            o,
        })
    }

    fn output(&self, cache: &LmuCache) -> Result<SequenceBatch> {
        let batch = cache.x.batch();
        let out_len = if self.config.return_sequences {
            cache.x.len()
        } else {
            1
        };
        SequenceBatch::new(batch, out_len, self.config.output_dim, cache.o.clone())
    }

    /// A fresh zero memory for [`LmuFitLayer::step`].
    pub fn streaming_state(&self) -> StreamingState {
        StreamingState {
            memory: vec![0.0; self.config.order * self.config.memory_channels],
            steps: 0,
        }
    }

    /// Advances one example by one step and returns `o_t`.
    pub fn step(&self, state: &mut StreamingState, x_t: &[f64]) -> Result<Vec<f64>> {
        let (d, dx, du) = (
            self.config.order,
            self.config.input_dim,
            self.config.memory_channels,
        );
        if x_t.len() != dx || state.memory.len() != d * du {
            return dim_err(format!(
                "step expects {dx} inputs and a {}-wide state",
                d * du
            ));
        }
        let (sys, _) = self.kernels(1)?;
        let mut u = self.u_x.matvec(x_t)?;
        for (ui, b) in u.iter_mut().zip(self.b_u.data()) {
            *ui += b;
        }
        let u = self.config.encoder_activation.forward_vec(&u);
        let mut next = vec![0.0; d];
        for (c, &uc) in u.iter().enumerate() {
            let m = &mut state.memory[c * d..(c + 1) * d];
            sys.abar.matvec_into(m, &mut next);
            for ((mk, nk), bk) in m.iter_mut().zip(&next).zip(sys.bbar.data()) {
                *mk = nk + bk * uc;
            }
        }
        state.steps += 1;
        let mut o = self.w_m.matvec(&state.memory)?;
        self.w_x.matvec_acc(x_t, &mut o);
        for (oi, b) in o.iter_mut().zip(self.b_o.data()) {
            *oi += b;
        }
        Ok(self.config.output_activation.forward_vec(&o))
    }
}

impl Layer for LmuFitLayer {
    fn param_names(&self) -> &'static [&'static str] {
        &["U_x", "b_u", "W_m", "W_x", "b_o"]
    }

    fn params(&self) -> Vec<&Matrix> {
        vec![&self.u_x, &self.b_u, &self.w_m, &self.w_x, &self.b_o]
    }

    fn params_mut(&mut self) -> Vec<&mut Matrix> {
        vec![
            &mut self.u_x,
            &mut self.b_u,
            &mut self.w_m,
            &mut self.w_x,
            &mut self.b_o,
        ]
    }

    fn forward(&self, x: &SequenceBatch) -> Result<SequenceBatch> {
        let cache = self.run(x)?;
        self.output(&cache)
    }

    fn forward_train(&mut self, x: &SequenceBatch) -> Result<SequenceBatch> {
        let cache = self.run(x)?;
        let y = self.output(&cache)?;
        self.cache = Some(cache);
        Ok(y)
    }

    fn backward(&mut self, grad_out: &SequenceBatch) -> Result<(Vec<Matrix>, SequenceBatch)> {
        let cache = match self.cache.take() {
            Some(c) => c,
            None => return missing_cache("lmu"),
        };
        if grad_out.values().len() != cache.o.len() {
            return dim_err("lmu: upstream gradient shape mismatch");
        }
        let cfg = &self.config;
        let (d, du, d_o) = (cfg.order, cfg.memory_channels, cfg.output_dim);
        let x = &cache.x;
        let (batch, n, dx) = x.shape();
        let out_len = grad_out.len();

        let mut g = grad_out.values().to_vec();
        activation_backward_rows(cfg.output_activation, &cache.o_pre, &cache.o, &mut g, d_o);

        let mut dw_m = Matrix::zeros(d_o, d * du);
        let mut dw_x = Matrix::zeros(d_o, dx);
        let mut db_o = Matrix::zeros(d_o, 1);
        let mut gx = SequenceBatch::zeros(batch, n, dx);
        let mut gmem = match &cache.memory {
            Memory::Full(_) => Memory::Full(MemorySequence::zeros(batch, n, du, d)),
            Memory::Last(_) => Memory::Last(MemoryState::zeros(batch, du, d)),
        };
        for b in 0..batch {
            for s in 0..out_len {
                let t = n - out_len + s;
                let gi = &g[(b * out_len + s) * d_o..(b * out_len + s + 1) * d_o];
                let xi = &x.values()[(b * n + t) * dx..(b * n + t + 1) * dx];
                let (m, gm) = match (&cache.memory, &mut gmem) {
                    (Memory::Full(seq), Memory::Full(gs)) => (seq.flat(b, t), gs.flat_mut(b, t)),
                    (Memory::Last(st), Memory::Last(gs)) => {
                        let w = du * d;
                        (st.flat(b), &mut gs.values[b * w..(b + 1) * w])
                    }
                    _ => unreachable!("memory and gradient kinds always match"),
                };
                dw_m.outer_acc(gi, m);
                self.w_m.matvec_t_acc(gi, gm);
                dw_x.outer_acc(gi, xi);
                for (acc, v) in db_o.data_mut().iter_mut().zip(gi) {
                    *acc += v;
                }
                self.w_x.matvec_t_acc(gi, gx.step_mut(b, t));
            }
        }

        let gu = match gmem {
            Memory::Full(gs) => {
                let (sys, h) = self.kernels(n)?;
                match (cfg.mode, cfg.backend) {
                    (ExecMode::Sequential, _) => lti::scan_adjoint(&sys, &gs)?,
                    (_, ConvBackend::Dense) => lti::conv_adjoint_dense(&h, &gs)?,
                    (_, ConvBackend::Fft) => lti::conv_adjoint_fft(&h, &gs)?,
                    (_, ConvBackend::Auto) => lti::conv_adjoint(&h, &gs)?,
                }
            }
            Memory::Last(gs) => {
                let (sys, h) = self.kernels(n)?;
                match cfg.mode {
                    ExecMode::Sequential => lti::scan_adjoint_final(&sys, &gs, n)?,
                    _ => lti::final_adjoint(&h, &gs, n)?,
                }
            }
        };

        let mut gu = gu.into_values();
        activation_backward_rows(cfg.encoder_activation, &cache.u_pre, &cache.u, &mut gu, du);
        let mut du_x = Matrix::zeros(du, dx);
        let mut db_u = Matrix::zeros(du, 1);
        for r in 0..batch * n {
            let gi = &gu[r * du..(r + 1) * du];
            let xi = &x.values()[r * dx..(r + 1) * dx];
            du_x.outer_acc(gi, xi);
            for (acc, v) in db_u.data_mut().iter_mut().zip(gi) {
                *acc += v;
            }
            self.u_x
                .matvec_t_acc(gi, &mut gx.values_mut()[r * dx..(r + 1) * dx]);
        }
        Ok((vec![du_x, db_u, dw_m, dw_x, db_o], gx))
    }

    fn input_dim(&self) -> usize {
        self.config.input_dim
    }

    fn output_dim(&self) -> usize {
        self.config.output_dim
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dn::decoder;
    use crate::layers::test_support::{fd_check, random_batch};

    fn random_layer(cfg: LmuFitConfig, seed: u64) -> LmuFitLayer {
        let mut rng = SeededRng::new(seed);
        let mut layer = LmuFitLayer::new(cfg, &mut rng).unwrap();
        for p in layer.params_mut() {
            for v in p.data_mut() {
                *v = 0.5 * rng.gaussian();
            }
        }
        layer
    }

    #[test]
    fn sequential_and_parallel_modes_agree() {
        let mut cfg = LmuFitConfig::new(16, 40.0, 4, 2, 8);
        cfg.encoder_activation = Activation::Tanh;
        let mut layer = random_layer(cfg, 11);
        let x = random_batch(3, 200, 4, 12);
        layer.set_mode(ExecMode::Sequential, true).unwrap();
        let seq = layer.forward(&x).unwrap();
        for backend in [ConvBackend::Dense, ConvBackend::Fft, ConvBackend::Auto] {
            layer.set_mode(ExecMode::ParallelFull, true).unwrap();
            layer.set_backend(backend);
            let par = layer.forward(&x).unwrap();
            assert!(seq.max_abs_diff(&par).unwrap() < 1e-9, "{backend:?}");
        }
        layer.set_mode(ExecMode::ParallelFinal, false).unwrap();
        let fin = layer.forward(&x).unwrap();
        assert!(fin.max_abs_diff(&seq.last_step()).unwrap() < 1e-9);
    }

    #[test]
    fn streaming_matches_batch_forward() {
        let layer = random_layer(LmuFitConfig::new(6, 10.0, 3, 2, 4), 5);
        let x = random_batch(1, 30, 3, 6);
        let full = layer.forward(&x).unwrap();
        let mut state = layer.streaming_state();
        for t in 0..30 {
            let o = layer.step(&mut state, x.step(0, t)).unwrap();
            for (a, b) in o.iter().zip(full.step(0, t)) {
                assert!((a - b).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn zero_input_gives_zero_output() {
        let mut layer = random_layer(LmuFitConfig::new(8, 20.0, 3, 2, 5), 1);
        layer.b_u = Matrix::zeros(2, 1);
        layer.b_o = Matrix::zeros(5, 1);
        let y = layer.forward(&SequenceBatch::zeros(2, 25, 3)).unwrap();
        assert!(y.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn decoder_readout_delays_the_input() {
        let (d, theta, n) = (12usize, 20.0, 120usize);
        let mut cfg = LmuFitConfig::new(d, theta, 1, 1, 1);
        cfg.output_activation = Activation::Identity;
        let mut layer = LmuFitLayer::zeroed(cfg).unwrap();
        layer.u_x = Matrix::identity(1);
        let c = decoder(d, theta, theta).unwrap();
        layer.w_m = Matrix::from_vec(1, d, c.coeffs.clone()).unwrap();
        // A slow sinusoid is well inside the memory's bandwidth.
        let x = SequenceBatch::from_fn(1, n, 1, |_, t, _| (t as f64 * 0.05).sin());
        let y = layer.forward(&x).unwrap();
        for t in 60..n {
            let want = ((t - theta as usize) as f64 * 0.05).sin();
            assert!((y.get(0, t, 0) - want).abs() < 0.05, "t={t}");
        }
    }

    #[test]
    fn gradients_match_finite_differences_in_every_mode() {
        let modes = [
            (ExecMode::Sequential, true),
            (ExecMode::Sequential, false),
            (ExecMode::ParallelFull, true),
            (ExecMode::ParallelFull, false),
            (ExecMode::ParallelFinal, false),
        ];
        for (i, (mode, rs)) in modes.into_iter().enumerate() {
            let mut cfg = LmuFitConfig::new(4, 6.0, 3, 2, 3);
            cfg.encoder_activation = Activation::Tanh;
            cfg.mode = mode;
            cfg.return_sequences = rs;
            let mut layer = random_layer(cfg, 20 + i as u64);
            let x = random_batch(2, 10, 3, 30 + i as u64);
            let err = fd_check(&mut layer, &x, 40 + i as u64);
            assert!(err < 1e-5, "{mode:?}/{rs}: {err}");
        }
        for backend in [ConvBackend::Dense, ConvBackend::Fft] {
            let mut cfg = LmuFitConfig::new(4, 6.0, 2, 2, 3);
            cfg.backend = backend;
            let mut layer = random_layer(cfg, 50);
            let x = random_batch(2, 10, 2, 51);
            assert!(fd_check(&mut layer, &x, 52) < 1e-5, "{backend:?}");
        }
    }

    #[test]
    fn backward_is_linear_in_upstream_gradient() {
        let mut layer = random_layer(LmuFitConfig::new(4, 5.0, 2, 1, 3), 9);
        let x = random_batch(2, 8, 2, 10);
        let g = random_batch(2, 8, 3, 11);
        layer.forward_train(&x).unwrap();
        let (p1, x1) = layer.backward(&g).unwrap();
        layer.forward_train(&x).unwrap();
        let (p2, x2) = layer.backward(&g.lin_comb(2.0, &g, 0.0).unwrap()).unwrap();
        for (a, b) in p1.iter().zip(&p2) {
            assert!(a.scale(2.0).max_abs_diff(b).unwrap() < 1e-12);
        }
        assert!(x1.lin_comb(2.0, &x1, 0.0).unwrap().max_abs_diff(&x2).unwrap() < 1e-12);

        layer.forward_train(&x).unwrap();
        let (p0, x0) = layer.backward(&SequenceBatch::zeros(2, 8, 3)).unwrap();
        assert!(p0.iter().all(|p| p.max_abs() == 0.0));
        assert!(x0.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn param_count_matches_formula() {
        let mut rng = SeededRng::new(0);
        let cfg = LmuFitConfig::new(10, 5.0, 3, 2, 7);
        let layer = LmuFitLayer::new(cfg.clone(), &mut rng).unwrap();
        assert_eq!(layer.param_count(), cfg.param_count());
        assert_eq!(cfg.param_count(), 2 * 3 + 2 + 7 * 10 * 2 + 7 * 3 + 7);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut cfg = LmuFitConfig::new(4, 5.0, 1, 1, 1);
        cfg.mode = ExecMode::ParallelFinal;
        assert!(cfg.validate().is_err());
        assert!(LmuFitConfig::new(0, 5.0, 1, 1, 1).validate().is_err());
        assert!(LmuFitConfig::new(4, -1.0, 1, 1, 1).validate().is_err());
        let layer = LmuFitLayer::zeroed(LmuFitConfig::new(4, 5.0, 2, 1, 1)).unwrap();
        assert!(layer.forward(&SequenceBatch::zeros(1, 5, 3)).is_err());
    }
}
