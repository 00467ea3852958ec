use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{arg_err, dim_err, Error, Result};
use crate::layers::checkpoint::Container;
use crate::layers::{
    Activation, DenseLayer, ExecMode, GatedEncoder, Layer, LmuFitConfig, LmuFitLayer,
    OriginalLmuCell, OriginalLmuConfig,
};
use crate::lti::SequenceBatch;
use crate::numerics::{Matrix, SeededRng};

/// Serializable description of one layer; enough to rebuild it with fresh
/// weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum LayerSpec {
    Dense {
        input: usize,
        output: usize,
        #[serde(default)]
        activation: Activation,
    },
    Gated {
        dim: usize,
        #[serde(default)]
        activation: Activation,
    },
    Lmu(LmuFitConfig),
    OriginalLmu(OriginalLmuConfig),
}

impl LayerSpec {
    pub fn build(&self, rng: &mut SeededRng) -> Result<AnyLayer> {
        Ok(match self {
            LayerSpec::Dense {
                input,
                output,
                activation,
            } => {
                if *input == 0 || *output == 0 {
                    return arg_err("dense layer dimensions must be positive");
                }
                AnyLayer::Dense(DenseLayer::new(*input, *output, *activation, rng))
            }
            LayerSpec::Gated { dim, activation } => {
                AnyLayer::Gated(GatedEncoder::new(*dim, *activation, rng)?)
            }
            LayerSpec::Lmu(cfg) => AnyLayer::Lmu(LmuFitLayer::new(cfg.clone(), rng)?),
            LayerSpec::OriginalLmu(cfg) => {
                AnyLayer::OriginalLmu(OriginalLmuCell::new(cfg.clone(), rng)?)
            }
        })
    }

    pub fn param_count(&self) -> usize {
        match self {
            LayerSpec::Dense { input, output, .. } => input * output + output,
            LayerSpec::Gated { dim, .. } => 2 * (dim * dim + dim),
            LayerSpec::Lmu(cfg) => cfg.param_count(),
            LayerSpec::OriginalLmu(cfg) => cfg.param_count(),
        }
    }
}

#[derive(Clone, Debug)]
pub enum AnyLayer {
    Dense(DenseLayer),
    Gated(GatedEncoder),
    Lmu(LmuFitLayer),
    OriginalLmu(OriginalLmuCell),
}

macro_rules! dispatch {
    ($self:expr, $l:ident => $body:expr) => {
        match $self {
            AnyLayer::Dense($l) => $body,
            AnyLayer::Gated($l) => $body,
            AnyLayer::Lmu($l) => $body,
            AnyLayer::OriginalLmu($l) => $body,
        }
    };
}

impl AnyLayer {
    pub fn spec(&self) -> LayerSpec {
        match self {
            AnyLayer::Dense(l) => LayerSpec::Dense {
                input: l.w.cols(),
                output: l.w.rows(),
                activation: l.activation,
            },
            AnyLayer::Gated(l) => LayerSpec::Gated {
                dim: l.dim(),
                activation: l.activation,
            },
            AnyLayer::Lmu(l) => LayerSpec::Lmu(l.config().clone()),
            AnyLayer::OriginalLmu(l) => LayerSpec::OriginalLmu(l.config().clone()),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            AnyLayer::Dense(_) => "dense",
            AnyLayer::Gated(_) => "gated",
            AnyLayer::Lmu(_) => "lmu",
            AnyLayer::OriginalLmu(_) => "original-lmu",
        }
    }
}

impl Layer for AnyLayer {
    fn param_names(&self) -> &'static [&'static str] {
        dispatch!(self, l => l.param_names())
    }

    fn params(&self) -> Vec<&Matrix> {
        dispatch!(self, l => l.params())
    }

    fn params_mut(&mut self) -> Vec<&mut Matrix> {
        dispatch!(self, l => l.params_mut())
    }

    fn forward(&self, x: &SequenceBatch) -> Result<SequenceBatch> {
        dispatch!(self, l => l.forward(x))
    }

    fn forward_train(&mut self, x: &SequenceBatch) -> Result<SequenceBatch> {
        dispatch!(self, l => l.forward_train(x))
    }

    fn backward(&mut self, grad_out: &SequenceBatch) -> Result<(Vec<Matrix>, SequenceBatch)> {
        dispatch!(self, l => l.backward(grad_out))
    }

    fn input_dim(&self) -> usize {
        dispatch!(self, l => l.input_dim())
    }

    fn output_dim(&self) -> usize {
        dispatch!(self, l => l.output_dim())
    }
}

/// A stack of layers applied in order.
#[derive(Clone, Debug)]
pub struct Model {
    layers: Vec<AnyLayer>,
}

impl Model {
    pub fn new(layers: Vec<AnyLayer>) -> Result<Self> {
        if layers.is_empty() {
            return arg_err("a model needs at least one layer");
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].output_dim() != pair[1].input_dim() {
                return dim_err(format!(
                    "layer {i} emits {} channels but layer {} expects {}",
                    pair[0].output_dim(),
                    i + 1,
                    pair[1].input_dim()
                ));
            }
        }
        if layers[..layers.len() - 1]
            .iter()
            .any(|l| matches!(l, AnyLayer::Dense(d) if d.activation == Activation::Softmax))
        {
            return arg_err("softmax is only allowed on the last layer");
        }
        Ok(Model { layers })
    }

    /// Builds every layer from `specs`, drawing weights from one seeded stream.
    pub fn from_specs(specs: &[LayerSpec], seed: u64) -> Result<Self> {
        let mut rng = SeededRng::new(seed);
        let layers = specs
            .iter()
            .map(|s| s.build(&mut rng))
            .collect::<Result<Vec<_>>>()?;
        Model::new(layers)
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(AnyLayer::spec).collect()
    }

    pub fn layers(&self) -> &[AnyLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [AnyLayer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim()
    }

    /// Whether the last layer is a softmax classification head.
    pub fn has_softmax_head(&self) -> bool {
        matches!(self.layers.last(), Some(AnyLayer::Dense(d)) if d.activation == Activation::Softmax)
    }

    /// Switches every LMU layer to `mode`.
    pub fn set_lmu_mode(&mut self, mode: ExecMode, return_sequences: bool) -> Result<()> {
        for l in &mut self.layers {
            if let AnyLayer::Lmu(lmu) = l {
                lmu.set_mode(mode, return_sequences)?;
            }
        }
        Ok(())
    }

    pub fn forward(&self, x: &SequenceBatch) -> Result<SequenceBatch> {
        let mut h = self.layers[0].forward(x)?;
        for l in &self.layers[1..] {
            h = l.forward(&h)?;
        }
        Ok(h)
    }

    pub fn forward_train(&mut self, x: &SequenceBatch) -> Result<SequenceBatch> {
        let mut h = self.layers[0].forward_train(x)?;
        for l in &mut self.layers[1..] {
            h = l.forward_train(&h)?;
        }
        Ok(h)
    }

    /// Backpropagates `grad` and returns parameter gradients in the order of
    /// [`Model::params`].
    ///
    /// With `head_preactivation` set, `grad` is taken w.r.t. the last
    /// layer's pre-activation (the fused softmax + cross-entropy gradient).
    pub fn backward(
        &mut self,
        grad: &SequenceBatch,
        head_preactivation: bool,
    ) -> Result<Vec<Matrix>> {
        let n = self.layers.len();
        let mut per_layer = Vec::with_capacity(n);
        let mut g = grad.clone();
        for (i, l) in self.layers.iter_mut().enumerate().rev() {
            let last = i + 1 == n;
            let (pg, gx) = match l {
                AnyLayer::Dense(d) if last && head_preactivation => d.backward_preactivation(&g)?,
                _ if last && head_preactivation => {
                    return Err(Error::Argument(
                        "pre-activation gradient needs a dense head".into(),
                    ))
                }
                _ => l.backward(&g)?,
            };
            per_layer.push(pg);
            g = gx;
        }
        Ok(per_layer.into_iter().rev().flatten().collect())
    }

    pub fn params(&self) -> Vec<&Matrix> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Matrix> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }

    /// `"<layer index>.<parameter>"` for every parameter.
    pub fn param_names(&self) -> Vec<String> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| l.param_names().iter().map(move |n| format!("{i}.{n}")))
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.param_count()).sum()
    }

    pub fn to_container(&self) -> Result<Container> {
        let meta = serde_json::json!({ "layers": self.specs() });
        let mut c = Container::new("model", meta);
        for (name, p) in self.param_names().into_iter().zip(self.params()) {
            c.push(name, p.clone());
        }
        Ok(c)
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        if c.kind != "model" {
            return arg_err(format!("checkpoint holds '{}', not a model", c.kind));
        }
        let specs: Vec<LayerSpec> = serde_json::from_value(c.meta["layers"].clone())?;
        let mut model = Model::from_specs(&specs, 0)?;
        let names = model.param_names();
        if names.len() != c.tensors.len() {
            return dim_err(format!(
                "checkpoint has {} tensors, topology needs {}",
                c.tensors.len(),
                names.len()
            ));
        }
        for ((name, p), (cname, m)) in names.iter().zip(model.params_mut()).zip(&c.tensors) {
            if name != cname || p.shape() != m.shape() {
                return dim_err(format!(
                    "tensor {cname} {:?} does not fit {name} {:?}",
                    m.shape(),
                    p.shape()
                ));
            }
            *p = m.clone();
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_container()?.save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Model::from_container(&Container::load(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::test_support::random_batch;

    fn specs() -> Vec<LayerSpec> {
        let mut lmu = LmuFitConfig::new(6, 12.0, 2, 2, 5);
        lmu.mode = ExecMode::ParallelFinal;
        lmu.return_sequences = false;
        vec![
            LayerSpec::Gated {
                dim: 2,
                activation: Activation::Tanh,
            },
            LayerSpec::Lmu(lmu),
            LayerSpec::Dense {
                input: 5,
                output: 3,
                activation: Activation::Softmax,
            },
        ]
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let model = Model::from_specs(&specs(), 17).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        model.save(&path).unwrap();
        let back = Model::load(&path).unwrap();
        assert_eq!(back.specs(), model.specs());
        for (a, b) in model.params().iter().zip(back.params()) {
            assert_eq!(
                a.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                b.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
            );
        }
        let x = random_batch(2, 15, 2, 3);
        assert_eq!(model.forward(&x).unwrap(), back.forward(&x).unwrap());
    }

    #[test]
    fn spec_round_trips_through_json() {
        let json = serde_json::to_string(&specs()).unwrap();
        let back: Vec<LayerSpec> = serde_json::from_str(&json).unwrap();
        assert_eq!(back, specs());
    }

    #[test]
    fn mismatched_stack_is_rejected() {
        let bad = vec![
            LayerSpec::Dense {
                input: 2,
                output: 3,
                activation: Activation::Tanh,
            },
            LayerSpec::Dense {
                input: 4,
                output: 1,
                activation: Activation::Identity,
            },
        ];
        assert!(Model::from_specs(&bad, 0).is_err());
    }

    #[test]
    fn param_count_matches_specs() {
        let model = Model::from_specs(&specs(), 1).unwrap();
        let want: usize = specs().iter().map(LayerSpec::param_count).sum();
        assert_eq!(model.param_count(), want);
        assert_eq!(model.param_names().len(), model.params().len());
    }
}
