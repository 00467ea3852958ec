use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{LabeledDataset, Targets};
use crate::error::{arg_err, Result};
use crate::layers::checkpoint::Container;
use crate::layers::Model;
use crate::lti::SequenceBatch;
use crate::numerics::SeededRng;
use crate::train::adam::{AdamConfig, AdamState};
use crate::train::loss::{evaluate_loss, Loss};
use crate::train::metrics::{accuracy, nrmse, Metric};

/// Offset separating shuffle streams from other uses of the seed.
const SHUFFLE_STREAM: u64 = 1 << 32;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub loss: Loss,
    #[serde(default)]
    pub metrics: Vec<Metric>,
    #[serde(default)]
    pub adam: AdamConfig,
    /// After this many epochs the learning rate drops by a factor of 10.
    #[serde(default)]
    pub lr_drop_epoch: Option<usize>,
}

impl TrainConfig {
    pub fn new(epochs: usize, batch_size: usize, seed: u64, loss: Loss) -> Self {
        TrainConfig {
            epochs,
            batch_size,
            seed,
            loss,
            metrics: Vec::new(),
            adam: AdamConfig::default(),
            lr_drop_epoch: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return arg_err("epochs and batch size must be at least 1");
        }
        if !(self.adam.lr > 0.0 && self.adam.lr.is_finite()) {
            return arg_err(format!("learning rate must be positive, got {}", self.adam.lr));
        }
        Ok(())
    }

    /// Learning rate in effect during the (0-based) `epoch`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        match self.lr_drop_epoch {
            Some(drop) if epoch >= drop => self.adam.lr / 10.0,
            _ => self.adam.lr,
        }
    }
}

/// One line of the training history.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// Mean training loss over the epoch's batches, weighted by batch size.
    pub loss: f64,
    #[serde(flatten)]
    pub metrics: BTreeMap<String, f64>,
    /// Monotonic time of the training pass, excluding evaluation. Not
    /// serialized, so a history file depends only on seed, config and data.
    #[serde(default, skip_serializing)]
    pub wall_seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub records: Vec<EpochRecord>,
}

impl History {
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn write_jsonl(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(self.to_jsonl()?.as_bytes())?;
        Ok(())
    }

    pub fn from_jsonl(text: &str) -> Result<History> {
        let records = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Ok(History { records })
    }

    /// The history with timing zeroed; everything left is a pure function of
    /// seed, config and data.
    pub fn without_timing(&self) -> History {
        History {
            records: self
                .records
                .iter()
                .map(|r| EpochRecord {
                    wall_seconds: 0.0,
                    ..r.clone()
                })
                .collect(),
        }
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }
}

/// Predictions of `model` over `ds`, computed `batch` examples at a time.
pub fn predict(model: &Model, inputs: &SequenceBatch, batch: usize) -> Result<SequenceBatch> {
    let mut values = Vec::new();
    let mut shape = (0, 0);
    for start in (0..inputs.batch()).step_by(batch.max(1)) {
        let idx: Vec<usize> = (start..(start + batch).min(inputs.batch())).collect();
        let out = model.forward(&inputs.select(&idx))?;
        shape = (out.len(), out.channels());
        values.extend_from_slice(out.values());
    }
    SequenceBatch::new(inputs.batch(), shape.0, shape.1, values)
}

/// Computes `metrics` of `model` on `ds`, keyed by metric name.
pub fn evaluate(
    model: &Model,
    ds: &LabeledDataset,
    loss: Loss,
    metrics: &[Metric],
    batch: usize,
) -> Result<BTreeMap<String, f64>> {
    let pred = predict(model, &ds.inputs, batch)?;
    let mut out = BTreeMap::new();
    for &m in metrics {
        let v = match (m, &ds.targets) {
            (Metric::Loss, t) => evaluate_loss(loss, &pred, t)?.0,
            (Metric::Nrmse, Targets::Real(t)) => nrmse(pred.values(), t.values())?,
            (Metric::Accuracy, Targets::Classes(c)) => accuracy(&pred, c)?,
            (m, _) => return arg_err(format!("metric {} does not fit these targets", m.name())),
        };
        out.insert(m.name().to_string(), v);
    }
    Ok(out)
}

/// Training state that survives between epochs: optimizer moments and the
/// number of completed epochs. Saving it with the model makes a resumed run
/// match an unbroken one step for step.
#[derive(Clone, Debug, PartialEq)]
pub struct Trainer {
    pub config: TrainConfig,
    pub adam: AdamState,
    pub epochs_done: usize,
}

impl Trainer {
    pub fn new(config: TrainConfig, model: &Model) -> Result<Self> {
        config.validate()?;
        let adam = AdamState::new(config.adam, &model.params());
        Ok(Trainer {
            config,
            adam,
            epochs_done: 0,
        })
    }

    /// Forward, loss, backward and one Adam update on `batch`. Returns the
    /// batch loss.
    pub fn step(&mut self, model: &mut Model, batch: &LabeledDataset) -> Result<f64> {
        let out = model.forward_train(&batch.inputs)?;
        let (loss, grad) = evaluate_loss(self.config.loss, &out, &batch.targets)?;
        let grads = model.backward(&grad, self.config.loss == Loss::CrossEntropy)?;
        self.adam.update(model.params_mut(), &grads)?;
        Ok(loss)
    }

    /// Order of the training examples in (0-based) `epoch`.
    pub fn epoch_order(&self, epoch: usize, len: usize) -> Vec<usize> {
        SeededRng::derived(self.config.seed, SHUFFLE_STREAM + epoch as u64).permutation(len)
    }

    pub fn run_epoch(
        &mut self,
        model: &mut Model,
        train: &LabeledDataset,
        evals: &[(&str, &LabeledDataset)],
    ) -> Result<EpochRecord> {
        if train.is_empty() {
            return arg_err("empty training set");
        }
        let epoch = self.epochs_done;
        self.adam.config.lr = self.config.lr_at(epoch);
        let order = self.epoch_order(epoch, train.len());
        let start = Instant::now();
        let mut total = 0.0;
        for idx in order.chunks(self.config.batch_size) {
            total += self.step(model, &train.select(idx))? * idx.len() as f64;
        }
        let wall_seconds = start.elapsed().as_secs_f64();
        self.epochs_done += 1;

        let mut metrics = BTreeMap::new();
        for (name, ds) in evals {
            let values = evaluate(model, ds, self.config.loss, &self.config.metrics, self.config.batch_size)?;
            for (k, v) in values {
                metrics.insert(format!("{name}_{k}"), v);
            }
        }
        Ok(EpochRecord {
            epoch: self.epochs_done,
            loss: total / train.len() as f64,
            metrics,
            wall_seconds,
        })
    }

    /// Runs the remaining epochs, calling `on_epoch` after each.
    pub fn fit_with(
        &mut self,
        model: &mut Model,
        train: &LabeledDataset,
        evals: &[(&str, &LabeledDataset)],
        mut on_epoch: impl FnMut(&EpochRecord) -> Result<()>,
    ) -> Result<History> {
        let mut history = History::default();
        while self.epochs_done < self.config.epochs {
            let record = self.run_epoch(model, train, evals)?;
            on_epoch(&record)?;
            history.records.push(record);
        }
        Ok(history)
    }

    pub fn fit(
        &mut self,
        model: &mut Model,
        train: &LabeledDataset,
        evals: &[(&str, &LabeledDataset)],
    ) -> Result<History> {
        self.fit_with(model, train, evals, |_| Ok(()))
    }

    pub fn to_container(&self) -> Container {
        let mut c = self.adam.to_container();
        c.meta["epochs_done"] = serde_json::json!(self.epochs_done);
        c
    }

    pub fn from_container(config: TrainConfig, c: &Container) -> Result<Self> {
        config.validate()?;
        let adam = AdamState::from_container(c)?;
        let epochs_done = c.meta["epochs_done"].as_u64().unwrap_or(0) as usize;
        Ok(Trainer {
            config,
            adam,
            epochs_done,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_container().save(path)
    }

    pub fn load(config: TrainConfig, path: impl AsRef<Path>) -> Result<Self> {
        Trainer::from_container(config, &Container::load(path)?)
    }
}

/// Trains `model` from scratch under `config`.
pub fn fit(
    model: &mut Model,
    train: &LabeledDataset,
    evals: &[(&str, &LabeledDataset)],
    config: &TrainConfig,
) -> Result<History> {
    Trainer::new(config.clone(), model)?.fit(model, train, evals)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Split;
    use crate::layers::{Activation, LayerSpec};

    fn linear_data(count: usize, seed: u64) -> LabeledDataset {
        let mut rng = SeededRng::new(seed);
        let x = SequenceBatch::from_fn(count, 1, 3, |_, _, _| rng.gaussian());
        let w = [0.5, -1.5, 2.0];
        let y = SequenceBatch::from_fn(count, 1, 1, |b, _, _| {
            (0..3).map(|c| w[c] * x.get(b, 0, c)).sum::<f64>() + 0.25
        });
        LabeledDataset::new(x, Targets::Real(y), Split::Train).unwrap()
    }

    fn linear_model(seed: u64) -> Model {
        let spec = LayerSpec::Dense {
            input: 3,
            output: 1,
            activation: Activation::Identity,
        };
        Model::from_specs(&[spec], seed).unwrap()
    }

    #[test]
    fn single_batch_epoch_is_one_adam_step() {
        let ds = linear_data(8, 1);
        let config = TrainConfig::new(1, 8, 3, Loss::Mse);
        let mut a = linear_model(2);
        fit(&mut a, &ds, &[], &config).unwrap();

        let mut b = linear_model(2);
        let out = b.forward_train(&ds.inputs).unwrap();
        let (_, g) = evaluate_loss(Loss::Mse, &out, &ds.targets).unwrap();
        let grads = b.backward(&g, false).unwrap();
        let mut adam = AdamState::new(AdamConfig::default(), &b.params());
        adam.update(b.params_mut(), &grads).unwrap();
        for (p, q) in a.params().iter().zip(b.params()) {
            assert_eq!(p.data(), q.data());
        }
    }

    #[test]
    fn same_seed_same_history() {
        let ds = linear_data(50, 4);
        let mut config = TrainConfig::new(5, 8, 9, Loss::Mse);
        config.metrics = vec![Metric::Loss, Metric::Nrmse];
        let run = || {
            let mut m = linear_model(1);
            fit(&mut m, &ds, &[("train", &ds)], &config).unwrap()
        };
        let (h1, h2) = (run(), run());
        assert_eq!(
            h1.without_timing().to_jsonl().unwrap(),
            h2.without_timing().to_jsonl().unwrap()
        );
        assert_eq!(h1.to_jsonl().unwrap(), h2.to_jsonl().unwrap());
        assert!(!h1.to_jsonl().unwrap().contains("wall_seconds"));
        let parsed = History::from_jsonl(&h1.to_jsonl().unwrap()).unwrap();
        assert_eq!(parsed, h1.without_timing());
        assert!(h1.records[0].metrics.contains_key("train_nrmse"));
    }

    #[test]
    fn linear_regression_converges() {
        let ds = linear_data(64, 5);
        let mut config = TrainConfig::new(200, 16, 0, Loss::Mse);
        config.adam.lr = 0.05;
        let mut m = linear_model(6);
        let h = fit(&mut m, &ds, &[], &config).unwrap();
        let first = h.records[0].loss;
        let last = h.last().unwrap().loss;
        assert!(first / last >= 100.0, "{first} -> {last}");
    }

    #[test]
    fn resumed_training_matches_unbroken() {
        let ds = linear_data(40, 7);
        let config = TrainConfig::new(4, 6, 11, Loss::Mse);
        let mut unbroken = linear_model(3);
        fit(&mut unbroken, &ds, &[], &config).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let mut m = linear_model(3);
        let mut t = Trainer::new(config.clone(), &m).unwrap();
        t.run_epoch(&mut m, &ds, &[]).unwrap();
        t.run_epoch(&mut m, &ds, &[]).unwrap();
        m.save(dir.path().join("model.ckpt")).unwrap();
        t.save(dir.path().join("adam.ckpt")).unwrap();

        let mut m2 = Model::load(dir.path().join("model.ckpt")).unwrap();
        let mut t2 = Trainer::load(config, dir.path().join("adam.ckpt")).unwrap();
        assert_eq!(t2, t);
        let h = t2.fit(&mut m2, &ds, &[]).unwrap();
        assert_eq!(h.records.len(), 2);
        for (p, q) in unbroken.params().iter().zip(m2.params()) {
            assert_eq!(p.data(), q.data());
        }
    }

    #[test]
    fn lr_drops_after_the_configured_epoch() {
        let mut c = TrainConfig::new(10, 1, 0, Loss::Mse);
        c.lr_drop_epoch = Some(5);
        assert_eq!(c.lr_at(4), 1e-3);
        assert_eq!(c.lr_at(5), 1e-4);
        assert!(TrainConfig::new(0, 1, 0, Loss::Mse).validate().is_err());
    }
}
