use serde::{Deserialize, Serialize};

use crate::data::{ImageSet, LabeledDataset, Split, Targets};
use crate::error::{dim_err, Result};
use crate::lti::SequenceBatch;
use crate::numerics::SeededRng;

/// Stream index for the pixel permutation, kept apart from the streams used
/// for weight initialization and shuffling.
const PERMUTATION_STREAM: u64 = 0x7073_6d6e;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PsMnistConfig {
    /// Seed of the fixed pixel permutation.
    pub seed: u64,
    /// `false` gives plain sequential MNIST.
    pub permute: bool,
    /// Validation examples carved from the end of the training file. `None`
    /// takes `min(10 000, train / 6)`, i.e. 10k of the standard 60k.
    pub val_size: Option<usize>,
    /// Keep only the first N training (and test) examples.
    pub train_subset: Option<usize>,
    pub test_subset: Option<usize>,
}

impl Default for PsMnistConfig {
    fn default() -> Self {
        PsMnistConfig {
            seed: 0,
            permute: true,
            val_size: None,
            train_subset: None,
            test_subset: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct PsMnist {
    pub train: LabeledDataset,
    pub val: LabeledDataset,
    pub test: LabeledDataset,
    /// Sequence step `t` reads pixel `permutation[t]`.
    pub permutation: Vec<usize>,
}

/// The fixed pixel order for a given seed.
pub fn pixel_permutation(pixels: usize, seed: u64, permute: bool) -> Vec<usize> {
    if permute {
        SeededRng::derived(seed, PERMUTATION_STREAM).permutation(pixels)
    } else {
        (0..pixels).collect()
    }
}

fn sequences(images: &ImageSet, labels: &[usize], perm: &[usize], split: Split) -> Result<LabeledDataset> {
    let p = images.pixels_per_image();
    let mut values = Vec::with_capacity(images.count * p);
    for i in 0..images.count {
        let img = images.image(i);
        values.extend(perm.iter().map(|&j| img[j]));
    }
    LabeledDataset::new(
        SequenceBatch::new(images.count, p, 1, values)?,
        Targets::Classes(labels.to_vec()),
        split,
    )
}

/// Flattens every image to a one-channel sequence under one fixed
/// permutation, then splits train / validation / test.
pub fn psmnist(
    train_images: &ImageSet,
    train_labels: &[usize],
    test_images: &ImageSet,
    test_labels: &[usize],
    config: &PsMnistConfig,
) -> Result<PsMnist> {
    if train_images.count != train_labels.len() || test_images.count != test_labels.len() {
        return dim_err("image and label counts differ");
    }
    if train_images.pixels_per_image() != test_images.pixels_per_image() {
        return dim_err("train and test images have different sizes");
    }
    let perm = pixel_permutation(train_images.pixels_per_image(), config.seed, config.permute);
    let full = sequences(train_images, train_labels, &perm, Split::Train)?;
    let val_size = config
        .val_size
        .unwrap_or_else(|| (full.len() / 6).min(10_000))
        .min(full.len().saturating_sub(1));
    let train_end = full.len() - val_size;
    let train_idx: Vec<usize> = (0..train_end).collect();
    let val_idx: Vec<usize> = (train_end..full.len()).collect();
    let mut train = full.select(&train_idx);
    let val = full.select(&val_idx).with_split(Split::Val);
    let mut test = sequences(test_images, test_labels, &perm, Split::Test)?;
    if let Some(n) = config.train_subset {
        train = train.head(n);
    }
    if let Some(n) = config.test_subset {
        test = test.head(n);
    }
    Ok(PsMnist {
        train,
        val,
        test,
        permutation: perm,
    })
}
