use crate::data::{LabeledDataset, Split, Targets};
use crate::error::{arg_err, Result};
use crate::lti::SequenceBatch;

/// Sliding windows over `series`: input `series[i..i+window]`, target the
/// value `horizon` steps past the window end, `series[i+window−1+horizon]`.
///
/// Yields `len − window − horizon + 1` examples of shape `(window, 1)` with
/// `(1, 1)` targets.
pub fn windowize(series: &[f64], window: usize, horizon: usize) -> Result<LabeledDataset> {
    if window == 0 {
        return arg_err("window must be at least 1");
    }
    if horizon == 0 {
        return arg_err("horizon must be at least 1");
    }
    if series.len() < window + horizon {
        return arg_err(format!(
            "series of length {} is too short for window {window} + horizon {horizon}",
            series.len()
        ));
    }
    let count = series.len() - window - horizon + 1;
    let mut inputs = Vec::with_capacity(count * window);
    let mut targets = Vec::with_capacity(count);
    for i in 0..count {
        inputs.extend_from_slice(&series[i..i + window]);
        targets.push(series[i + window - 1 + horizon]);
    }
    LabeledDataset::new(
        SequenceBatch::new(count, window, 1, inputs)?,
        Targets::Real(SequenceBatch::new(count, 1, 1, targets)?),
        Split::Train,
    )
}

/// Cuts `series` at `train_fraction` of its length and windowizes each side
/// separately, so no test window or target touches a training sample.
pub fn chronological_split(
    series: &[f64],
    window: usize,
    horizon: usize,
    train_fraction: f64,
) -> Result<(LabeledDataset, LabeledDataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return arg_err(format!("train fraction {train_fraction} outside (0, 1)"));
    }
    let cut = (series.len() as f64 * train_fraction).round() as usize;
    let train = windowize(&series[..cut], window, horizon)?;
    let test = windowize(&series[cut..], window, horizon)?.with_split(Split::Test);
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_pair_and_count() {
        let s: Vec<f64> = (1..=10).map(f64::from).collect();
        let ds = windowize(&s, 3, 2).unwrap();
        assert_eq!(ds.len(), 10 - 3 - 2 + 1);
        assert_eq!(ds.inputs.channel_series(0, 0), vec![1.0, 2.0, 3.0]);
        let Targets::Real(y) = &ds.targets else { panic!() };
        assert_eq!(y.get(0, 0, 0), 5.0);
        assert_eq!(y.get(5, 0, 0), 10.0);
    }

    #[test]
    fn degenerate_arguments_are_rejected() {
        let s = [1.0, 2.0, 3.0];
        assert!(windowize(&s, 3, 0).is_err());
        assert!(windowize(&s, 3, 1).is_err());
        assert!(windowize(&s, 0, 1).is_err());
        assert!(chronological_split(&s, 1, 1, 1.5).is_err());
    }

    #[test]
    fn split_sides_share_no_samples() {
        let s: Vec<f64> = (0..100).map(f64::from).collect();
        let (train, test) = chronological_split(&s, 5, 3, 0.7).unwrap();
        let max_train = train
            .inputs
            .values()
            .iter()
            .chain(match &train.targets {
                Targets::Real(y) => y.values(),
                _ => unreachable!(),
            })
            .cloned()
            .fold(f64::MIN, f64::max);
        assert!(test.inputs.values().iter().all(|&v| v > max_train));
        assert_eq!(test.split, Split::Test);
    }
}
