use crate::error::{arg_err, dim_err, Result};
use crate::layers::{
    activate_rows, activation_backward_rows, affine_rows, check_input_dim, fan_in_uniform,
    missing_cache, sigmoid, Activation, Layer,
};
use crate::lti::SequenceBatch;
use crate::numerics::{Matrix, SeededRng};

/// Initial gate bias. `σ(−1) ≈ 0.27`, so the untrained encoder passes most
/// of its input straight through.
pub const GATE_BIAS_INIT: f64 = -1.0;

/// Gated encoder `u = f1(W_u x + b_u)·g + x·(1 − g)` with
/// `g = σ(W_g x + b_g)`. Input and output widths are equal.
#[derive(Clone, Debug)]
pub struct GatedEncoder {
    pub w_u: Matrix,
    pub b_u: Matrix,
    pub w_g: Matrix,
    pub b_g: Matrix,
    pub activation: Activation,
    cache: Option<GatedCache>,
}

#[derive(Clone, Debug)]
struct GatedCache {
    x: SequenceBatch,
    pre: Vec<f64>,
    act: Vec<f64>,
    gate: Vec<f64>,
}

impl GatedEncoder {
    pub fn new(dim: usize, activation: Activation, rng: &mut SeededRng) -> Result<Self> {
        if dim == 0 {
            return arg_err("gated encoder width must be positive");
        }
        if activation == Activation::Softmax {
            return arg_err("softmax is only allowed on a dense classification head");
        }
        Ok(GatedEncoder {
            w_u: fan_in_uniform(rng, dim, dim, dim),
            b_u: Matrix::zeros(dim, 1),
            w_g: fan_in_uniform(rng, dim, dim, dim),
            b_g: Matrix::from_fn(dim, 1, |_, _| GATE_BIAS_INIT),
            activation,
            cache: None,
        })
    }

    /// Builds from explicit weights. `W_u` and `W_g` must be square and of
    /// the same size, since the residual term adds `x` to the encoding.
    pub fn from_params(
        w_u: Matrix,
        b_u: Matrix,
        w_g: Matrix,
        b_g: Matrix,
        activation: Activation,
    ) -> Result<Self> {
        if !w_u.is_square() || w_g.shape() != w_u.shape() {
            return arg_err(format!(
                "gated encoder needs d_u = d_x; got W_u {:?}, W_g {:?}",
                w_u.shape(),
                w_g.shape()
            ));
        }
        let n = w_u.rows();
        if b_u.shape() != (n, 1) || b_g.shape() != (n, 1) {
            return dim_err("gated encoder bias shape mismatch");
        }
        Ok(GatedEncoder {
            w_u,
            b_u,
            w_g,
            b_g,
            activation,
            cache: None,
        })
    }

    pub fn dim(&self) -> usize {
        self.w_u.rows()
    }

    fn run(&self, x: &SequenceBatch) -> Result<(GatedCache, Vec<f64>)> {
        check_input_dim("gated encoder", x, self.dim())
            .or_else(|e| arg_err(e.to_string()))?;
        let n = self.dim();
        let pre = affine_rows(&self.w_u, &self.b_u, x);
        let act = activate_rows(self.activation, &pre, n);
        let gate: Vec<f64> = affine_rows(&self.w_g, &self.b_g, x)
            .into_iter()
            .map(sigmoid)
            .collect();
        let out = act
            .iter()
            .zip(&gate)
            .zip(x.values())
            .map(|((a, g), xi)| a * g + xi * (1.0 - g))
            .collect();
        Ok((
            GatedCache {
                x: x.clone(),
                pre,
                act,
                gate,
            },
            out,
        ))
    }
}

impl Layer for GatedEncoder {
    fn param_names(&self) -> &'static [&'static str] {
        &["W_u", "b_u", "W_g", "b_g"]
    }

    fn params(&self) -> Vec<&Matrix> {
        vec![&self.w_u, &self.b_u, &self.w_g, &self.b_g]
    }

    fn params_mut(&mut self) -> Vec<&mut Matrix> {
        vec![&mut self.w_u, &mut self.b_u, &mut self.w_g, &mut self.b_g]
    }

    fn forward(&self, x: &SequenceBatch) -> Result<SequenceBatch> {
        let (_, out) = self.run(x)?;
        SequenceBatch::new(x.batch(), x.len(), self.dim(), out)
    }

    fn forward_train(&mut self, x: &SequenceBatch) -> Result<SequenceBatch> {
        let (cache, out) = self.run(x)?;
        self.cache = Some(cache);
        SequenceBatch::new(x.batch(), x.len(), self.dim(), out)
    }

    fn backward(&mut self, grad_out: &SequenceBatch) -> Result<(Vec<Matrix>, SequenceBatch)> {
        let cache = match self.cache.take() {
            Some(c) => c,
            None => return missing_cache("gated encoder"),
        };
        let n = self.dim();
        let x = &cache.x;
        if grad_out.values().len() != x.values().len() {
            return dim_err("gated encoder: upstream gradient shape mismatch");
        }
        let go = grad_out.values();
        let mut g_act: Vec<f64> = go.iter().zip(&cache.gate).map(|(g, s)| g * s).collect();
        activation_backward_rows(self.activation, &cache.pre, &cache.act, &mut g_act, n);
        let g_gate: Vec<f64> = go
            .iter()
            .zip(&cache.act)
            .zip(x.values())
            .zip(&cache.gate)
            .map(|(((g, a), xi), s)| g * (a - xi) * s * (1.0 - s))
            .collect();

        let mut dw_u = Matrix::zeros(n, n);
        let mut db_u = Matrix::zeros(n, 1);
        let mut dw_g = Matrix::zeros(n, n);
        let mut db_g = Matrix::zeros(n, 1);
        let mut gx = SequenceBatch::new(
            x.batch(),
            x.len(),
            n,
            go.iter().zip(&cache.gate).map(|(g, s)| g * (1.0 - s)).collect(),
        )?;
        for r in 0..x.batch() * x.len() {
            let span = r * n..(r + 1) * n;
            let xi = &x.values()[span.clone()];
            let ga = &g_act[span.clone()];
            let gg = &g_gate[span.clone()];
            dw_u.outer_acc(ga, xi);
            dw_g.outer_acc(gg, xi);
            for i in 0..n {
                db_u.data_mut()[i] += ga[i];
                db_g.data_mut()[i] += gg[i];
            }
            let gxi = &mut gx.values_mut()[span];
            self.w_u.matvec_t_acc(ga, gxi);
            self.w_g.matvec_t_acc(gg, gxi);
        }
        Ok((vec![dw_u, db_u, dw_g, db_g], gx))
    }

    fn input_dim(&self) -> usize {
        self.dim()
    }

    fn output_dim(&self) -> usize {
        self.dim()
    }
}
