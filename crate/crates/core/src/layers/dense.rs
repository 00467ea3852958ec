use crate::error::{dim_err, Result};
use crate::layers::{
    activate_rows, activation_backward_rows, affine_rows, check_input_dim, fan_in_uniform,
    missing_cache, Activation, Layer,
};
use crate::lti::SequenceBatch;
use crate::numerics::{Matrix, SeededRng};

/// Time-distributed affine layer followed by an activation.
#[derive(Clone, Debug)]
pub struct DenseLayer {
    pub w: Matrix,
    pub b: Matrix,
    pub activation: Activation,
    cache: Option<DenseCache>,
}

#[derive(Clone, Debug)]
struct DenseCache {
    x: SequenceBatch,
    pre: Vec<f64>,
    out: Vec<f64>,
}

impl DenseLayer {
    pub fn new(input: usize, output: usize, activation: Activation, rng: &mut SeededRng) -> Self {
        DenseLayer {
            w: fan_in_uniform(rng, output, input, input),
            b: Matrix::zeros(output, 1),
            activation,
            cache: None,
        }
    }

    pub fn from_params(w: Matrix, b: Matrix, activation: Activation) -> Result<Self> {
        if b.shape() != (w.rows(), 1) {
            return dim_err(format!(
                "bias {:?} does not match weight {:?}",
                b.shape(),
                w.shape()
            ));
        }
        Ok(DenseLayer {
            w,
            b,
            activation,
            cache: None,
        })
    }

    /// Backward pass from the gradient w.r.t. the pre-activation, skipping
    /// the activation's Jacobian (used for fused softmax + cross-entropy).
    pub fn backward_preactivation(
        &mut self,
        grad_pre: &SequenceBatch,
    ) -> Result<(Vec<Matrix>, SequenceBatch)> {
        let cache = match self.cache.take() {
            Some(c) => c,
            None => return missing_cache("dense"),
        };
        self.backward_from_pre(cache.x, grad_pre.values())
    }

    fn backward_from_pre(
        &self,
        x: SequenceBatch,
        grad_pre: &[f64],
    ) -> Result<(Vec<Matrix>, SequenceBatch)> {
        let out_dim = self.w.rows();
        let rows = x.batch() * x.len();
        if grad_pre.len() != rows * out_dim {
            return dim_err("dense: upstream gradient shape mismatch");
        }
        let mut dw = Matrix::zeros(self.w.rows(), self.w.cols());
        let mut db = Matrix::zeros(out_dim, 1);
        let mut gx = SequenceBatch::zeros(x.batch(), x.len(), x.channels());
        let in_dim = x.channels();
        for r in 0..rows {
            let g = &grad_pre[r * out_dim..(r + 1) * out_dim];
            let xi = &x.values()[r * in_dim..(r + 1) * in_dim];
            dw.outer_acc(g, xi);
            for (d, gi) in db.data_mut().iter_mut().zip(g) {
                *d += gi;
            }
            self.w
                .matvec_t_acc(g, &mut gx.values_mut()[r * in_dim..(r + 1) * in_dim]);
        }
        Ok((vec![dw, db], gx))
    }
}

impl Layer for DenseLayer {
    fn param_names(&self) -> &'static [&'static str] {
        &["W", "b"]
    }

    fn params(&self) -> Vec<&Matrix> {
        vec![&self.w, &self.b]
    }

    fn params_mut(&mut self) -> Vec<&mut Matrix> {
        vec![&mut self.w, &mut self.b]
    }

    fn forward(&self, x: &SequenceBatch) -> Result<SequenceBatch> {
        check_input_dim("dense", x, self.w.cols())?;
        let pre = affine_rows(&self.w, &self.b, x);
        let out = activate_rows(self.activation, &pre, self.w.rows());
        SequenceBatch::new(x.batch(), x.len(), self.w.rows(), out)
    }

    fn forward_train(&mut self, x: &SequenceBatch) -> Result<SequenceBatch> {
        check_input_dim("dense", x, self.w.cols())?;
        let pre = affine_rows(&self.w, &self.b, x);
        let out = activate_rows(self.activation, &pre, self.w.rows());
        let y = SequenceBatch::new(x.batch(), x.len(), self.w.rows(), out.clone())?;
        self.cache = Some(DenseCache {
            x: x.clone(),
            pre,
            out,
        });
        Ok(y)
    }

    fn backward(&mut self, grad_out: &SequenceBatch) -> Result<(Vec<Matrix>, SequenceBatch)> {
        let cache = match self.cache.take() {
            Some(c) => c,
            None => return missing_cache("dense"),
        };
        if grad_out.values().len() != cache.out.len() {
            return dim_err("dense: upstream gradient shape mismatch");
        }
        let mut g = grad_out.values().to_vec();
        activation_backward_rows(self.activation, &cache.pre, &cache.out, &mut g, self.w.rows());
        self.backward_from_pre(cache.x, &g)
    }

    fn input_dim(&self) -> usize {
        self.w.cols()
    }

    fn output_dim(&self) -> usize {
        self.w.rows()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_weights_pass_input_through() {
        let layer =
            DenseLayer::from_params(Matrix::identity(3), Matrix::zeros(3, 1), Activation::Identity)
                .unwrap();
        let mut rng = SeededRng::new(1);
        let x = SequenceBatch::from_fn(2, 4, 3, |_, _, _| rng.gaussian());
        assert_eq!(layer.forward(&x).unwrap(), x);
    }

    #[test]
    fn softmax_head_rows_sum_to_one() {
        let mut rng = SeededRng::new(2);
        let layer = DenseLayer::new(5, 7, Activation::Softmax, &mut rng);
        let x = SequenceBatch::from_fn(3, 2, 5, |_, _, _| 3.0 * rng.gaussian());
        let y = layer.forward(&x).unwrap();
        for b in 0..3 {
            for t in 0..2 {
                assert!((y.step(b, t).iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn backward_without_forward_is_state_error() {
        let mut rng = SeededRng::new(3);
        let mut layer = DenseLayer::new(2, 2, Activation::Tanh, &mut rng);
        let g = SequenceBatch::zeros(1, 1, 2);
        assert!(matches!(layer.backward(&g), Err(crate::Error::State(_))));
    }

    #[test]
    fn wrong_input_width_is_rejected() {
        let mut rng = SeededRng::new(4);
        let layer = DenseLayer::new(3, 2, Activation::Relu, &mut rng);
        assert!(layer.forward(&SequenceBatch::zeros(1, 1, 4)).is_err());
        assert!(DenseLayer::from_params(Matrix::zeros(2, 3), Matrix::zeros(3, 1), Activation::Identity).is_err());
    }
}
