use serde::Serialize;

use crate::data::Targets;
use crate::error::Result;
use crate::layers::Model;
use crate::lti::SequenceBatch;
use crate::train::loss::{evaluate_loss, Loss};

pub const GRAD_CHECK_EPSILON: f64 = 1e-5;

/// Worst disagreement between backprop and central differences.
#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

/// `|a − n| / max(|a|, |n|, 1e−6)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Compares every parameter gradient of `model` against central differences
/// at `ε = 1e−5`. Meant for small models: costs two forward passes per
/// parameter.
pub fn grad_check(
    model: &mut Model,
    x: &SequenceBatch,
    targets: &Targets,
    loss: Loss,
) -> Result<GradCheckReport> {
    let out = model.forward_train(x)?;
    let (_, grad) = evaluate_loss(loss, &out, targets)?;
    let grads = model.backward(&grad, loss == Loss::CrossEntropy)?;
    let names = model.param_names();

    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
    };
    let value = |m: &Model| -> Result<f64> { Ok(evaluate_loss(loss, &m.forward(x)?, targets)?.0) };
    for (pi, g) in grads.iter().enumerate() {
        for i in 0..g.data().len() {
            let orig = model.params()[pi].data()[i];
            model.params_mut()[pi].data_mut()[i] = orig + GRAD_CHECK_EPSILON;
            let up = value(model)?;
            model.params_mut()[pi].data_mut()[i] = orig - GRAD_CHECK_EPSILON;
            let down = value(model)?;
            model.params_mut()[pi].data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * GRAD_CHECK_EPSILON);
            let err = relative_error(g.data()[i], numeric);
            report.checked += 1;
            if err >= report.max_relative_error {
                report = GradCheckReport {
                    max_relative_error: err,
                    worst_param: names[pi].clone(),
                    worst_index: i,
                    analytic: g.data()[i],
                    numeric,
                    checked: report.checked,
                };
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::{Activation, ExecMode, LayerSpec, LmuFitConfig};
    use crate::numerics::SeededRng;

    #[test]
    fn linear_model_is_exact() {
        let specs = [LayerSpec::Dense {
            input: 3,
            output: 2,
            activation: Activation::Identity,
        }];
        let mut model = Model::from_specs(&specs, 1).unwrap();
        let mut rng = SeededRng::new(2);
        let x = SequenceBatch::from_fn(4, 2, 3, |_, _, _| rng.gaussian());
        let y = SequenceBatch::from_fn(4, 2, 2, |_, _, _| rng.gaussian());
        let r = grad_check(&mut model, &x, &Targets::Real(y), Loss::Mse).unwrap();
        assert!(r.max_relative_error < 1e-9, "{r:?}");
        assert_eq!(r.checked, 8);
    }

    #[test]
    fn lmu_classifier_agrees() {
        let mut lmu = LmuFitConfig::new(4, 8.0, 2, 2, 5);
        lmu.mode = ExecMode::ParallelFinal;
        lmu.return_sequences = false;
        lmu.encoder_activation = Activation::Tanh;
        let specs = [
            LayerSpec::Lmu(lmu),
            LayerSpec::Dense {
                input: 5,
                output: 3,
                activation: Activation::Softmax,
            },
        ];
        let mut model = Model::from_specs(&specs, 3).unwrap();
        let mut rng = SeededRng::new(4);
        let x = SequenceBatch::from_fn(3, 10, 2, |_, _, _| rng.gaussian());
        let r = grad_check(&mut model, &x, &Targets::Classes(vec![0, 2, 1]), Loss::CrossEntropy)
            .unwrap();
        assert!(r.max_relative_error < 1e-4, "{r:?}");
    }
}
