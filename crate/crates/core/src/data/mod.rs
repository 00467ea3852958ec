//! Dataset generation and ingestion.

pub mod container;
mod delay;
mod idx;
mod mackey;
mod psmnist;
mod window;

pub use delay::{
    band_limited_noise, delay_task, reconstruct_delay, reconstruction_nrmse, DelayTaskConfig,
};
pub use idx::{load_idx_images, load_idx_labels, parse_idx_images, parse_idx_labels, ImageSet};
pub use mackey::{mackey_glass, MackeyGlassConfig};
pub use psmnist::{psmnist, pixel_permutation, PsMnist, PsMnistConfig};
pub use window::{chronological_split, windowize};

use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Result};
use crate::lti::SequenceBatch;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

/// Supervision for a [`LabeledDataset`].
#[derive(Clone, Debug, PartialEq)]
pub enum Targets {
    /// Class index per example.
    Classes(Vec<usize>),
    /// Real-valued targets, one (possibly length-1) sequence per example.
    Real(SequenceBatch),
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Classes(c) => c.len(),
            Targets::Real(r) => r.batch(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn select(&self, indices: &[usize]) -> Targets {
        match self {
            Targets::Classes(c) => Targets::Classes(indices.iter().map(|&i| c[i]).collect()),
            Targets::Real(r) => Targets::Real(r.select(indices)),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    pub inputs: SequenceBatch,
    pub targets: Targets,
    pub split: Split,
}

impl LabeledDataset {
    pub fn new(inputs: SequenceBatch, targets: Targets, split: Split) -> Result<Self> {
        if inputs.batch() != targets.len() {
            return dim_err(format!(
                "{} inputs but {} targets",
                inputs.batch(),
                targets.len()
            ));
        }
        Ok(LabeledDataset {
            inputs,
            targets,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.batch()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn select(&self, indices: &[usize]) -> LabeledDataset {
        LabeledDataset {
            inputs: self.inputs.select(indices),
            targets: self.targets.select(indices),
            split: self.split,
        }
    }

    /// The first `n` examples (or all, if fewer).
    pub fn head(&self, n: usize) -> LabeledDataset {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.select(&idx)
    }

    pub fn with_split(mut self, split: Split) -> Self {
        self.split = split;
        self
    }
}
