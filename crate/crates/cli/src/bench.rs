use std::time::Instant;

use serde::{Deserialize, Serialize};

use lmu_core::data::{LabeledDataset, Split, Targets};
use lmu_core::dn::shared_kernels;
use lmu_core::layers::{Activation, ExecMode, LayerSpec, LmuFitConfig, Model};
use lmu_core::lti::{conv_dense, conv_fft, final_state, scan_sequential, SequenceBatch};
use lmu_core::numerics::{ops, SeededRng};
use lmu_core::train::{Loss, TrainConfig, Trainer};

use crate::failure::{CliResult, Failure};
use crate::repro::{with_threads, Reproduction};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum BenchMode {
    /// Memory only: the step-by-step scan.
    Sequential,
    /// Memory only: direct causal convolution.
    Dense,
    /// Memory only: FFT convolution.
    Fft,
    /// Memory only: the last state.
    Final,
    /// One training epoch of an LMU classifier, memory run as a scan.
    TrainSequential,
    /// The same epoch with the memory's last state computed in parallel.
    TrainParallel,
}

impl BenchMode {
    pub fn name(self) -> &'static str {
        match self {
            BenchMode::Sequential => "sequential",
            BenchMode::Dense => "dense",
            BenchMode::Fft => "fft",
            BenchMode::Final => "final",
            BenchMode::TrainSequential => "train-sequential",
            BenchMode::TrainParallel => "train-parallel",
        }
    }

    /// Op-count growth the complexity analysis predicts, as a function of
    /// `n` up to a constant. `None` for the training modes, which mix
    /// several kernels.
    pub fn theory(self, n: usize) -> Option<f64> {
        let n = n as f64;
        match self {
            BenchMode::Sequential | BenchMode::Final => Some(n),
            BenchMode::Dense => Some(n * n),
            BenchMode::Fft => Some(n * n.log2()),
            BenchMode::TrainSequential | BenchMode::TrainParallel => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub lengths: Vec<usize>,
    pub d: usize,
    /// Input channels; for the memory-only modes, the number of memory
    /// channels.
    pub d_x: usize,
    pub modes: Vec<BenchMode>,
    pub repeats: usize,
    pub batch: usize,
    /// Window length; `None` uses the sequence length.
    pub theta: Option<f64>,
    /// Output width of the LMU in the training modes.
    pub d_o: usize,
    /// Examples per training epoch.
    pub train_examples: usize,
    /// Minibatch size in the training modes.
    pub train_batch: usize,
    pub threads: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            lengths: vec![512, 1024, 2048, 4096],
            d: 64,
            d_x: 1,
            modes: vec![
                BenchMode::Sequential,
                BenchMode::Dense,
                BenchMode::Fft,
                BenchMode::Final,
            ],
            repeats: 3,
            batch: 1,
            theta: None,
            d_o: 64,
            train_examples: 32,
            train_batch: 16,
            threads: 1,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub n: usize,
    pub d: usize,
    pub d_x: usize,
    pub mode: BenchMode,
    /// Median over the repeats.
    pub wall_seconds: f64,
    pub op_count: u64,
    pub repeats: usize,
}

/// Measured growth of one mode between the shortest and longest length.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingRatio {
    pub mode: BenchMode,
    pub n_from: usize,
    pub n_to: usize,
    pub op_ratio: f64,
    pub theory_ratio: Option<f64>,
    pub wall_ratio: f64,
}

/// Sequential over parallel training-epoch wall time at one length.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Speedup {
    pub n: usize,
    pub ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    pub threads: usize,
    pub precision: String,
    pub arch: String,
    pub os: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub benchmark: String,
    pub reproduction: Reproduction,
    pub config: BenchConfig,
    pub records: Vec<BenchRecord>,
    pub scaling: Vec<ScalingRatio>,
    pub train_speedup: Vec<Speedup>,
    pub environment: Environment,
}

impl BenchReport {
    pub fn record(&self, mode: BenchMode, n: usize) -> Option<&BenchRecord> {
        self.records.iter().find(|r| r.mode == mode && r.n == n)
    }

    pub fn scaling(&self, mode: BenchMode) -> Option<&ScalingRatio> {
        self.scaling.iter().find(|s| s.mode == mode)
    }

    /// `n,d,d_x,mode,wall_seconds,op_count` rows after the reproduction
    /// stanza.
    pub fn to_csv(&self) -> String {
        let mut out = self.reproduction.comment_lines();
        out.push_str("n,d,d_x,mode,wall_seconds,op_count\n");
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{},{:.6e},{}\n",
                r.n,
                r.d,
                r.d_x,
                r.mode.name(),
                r.wall_seconds,
                r.op_count
            ));
        }
        out
    }
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let m = xs.len() / 2;
    if xs.len() % 2 == 1 {
        xs[m]
    } else {
        0.5 * (xs[m - 1] + xs[m])
    }
}

/// Runs `f` once to warm caches, then `repeats` timed times. Returns the
/// median time and the op count of one run.
fn time_repeated(repeats: usize, mut f: impl FnMut() -> CliResult<()>) -> CliResult<(f64, u64)> {
    f()?;
    let mut times = Vec::with_capacity(repeats);
    let mut flops = 0;
    for _ in 0..repeats {
        let start = Instant::now();
        let (r, count) = ops::measure(&mut f);
        times.push(start.elapsed().as_secs_f64());
        r?;
        flops = count;
    }
    Ok((median(times), flops))
}

fn training_workload(
    c: &BenchConfig,
    n: usize,
    theta: f64,
    mode: ExecMode,
) -> CliResult<(Model, LabeledDataset, Trainer)> {
    let mut lmu = LmuFitConfig::new(c.d, theta, c.d_x, 1, c.d_o);
    lmu.mode = mode;
    lmu.return_sequences = false;
    lmu.seq_len = Some(n);
    let specs = [
        LayerSpec::Lmu(lmu),
        LayerSpec::Dense {
            input: c.d_o,
            output: 10,
            activation: Activation::Softmax,
        },
    ];
    let model = Model::from_specs(&specs, c.seed)?;
    let mut rng = SeededRng::derived(c.seed, 1);
    let x = SequenceBatch::from_fn(c.train_examples, n, c.d_x, |_, _, _| rng.gaussian());
    let labels = (0..c.train_examples).map(|_| rng.index(10)).collect();
    let ds = LabeledDataset::new(x, Targets::Classes(labels), Split::Train)?;
    let config = TrainConfig::new(1, c.train_batch, c.seed, Loss::CrossEntropy);
    let trainer = Trainer::new(config, &model)?;
    Ok((model, ds, trainer))
}

fn bench_one(c: &BenchConfig, n: usize, mode: BenchMode) -> CliResult<BenchRecord> {
    let theta = c.theta.unwrap_or(n as f64);
    let (sys, h) = shared_kernels().get(c.d, theta, n)?;
    let mut rng = SeededRng::derived(c.seed, n as u64);
    let u = SequenceBatch::from_fn(c.batch, n, c.d_x, |_, _, _| rng.gaussian());
    let (wall_seconds, op_count) = match mode {
        BenchMode::Sequential => time_repeated(c.repeats, || {
            scan_sequential(&sys, &u, None)?;
            Ok(())
        })?,
        BenchMode::Dense => time_repeated(c.repeats, || {
            conv_dense(&h, &u)?;
            Ok(())
        })?,
        BenchMode::Fft => time_repeated(c.repeats, || {
            conv_fft(&h, &u)?;
            Ok(())
        })?,
        BenchMode::Final => time_repeated(c.repeats, || {
            final_state(&h, &u)?;
            Ok(())
        })?,
        BenchMode::TrainSequential | BenchMode::TrainParallel => {
            let exec = if mode == BenchMode::TrainSequential {
                ExecMode::Sequential
            } else {
                ExecMode::ParallelFinal
            };
            let (mut model, ds, mut trainer) = training_workload(c, n, theta, exec)?;
            time_repeated(c.repeats, || {
                trainer.epochs_done = 0;
                trainer.run_epoch(&mut model, &ds, &[])?;
                Ok(())
            })?
        }
    };
    Ok(BenchRecord {
        n,
        d: c.d,
        d_x: c.d_x,
        mode,
        wall_seconds,
        op_count,
        repeats: c.repeats,
    })
}

/// Times every mode at every length on a pool of `config.threads` workers.
pub fn bench(config: &BenchConfig, repro: Reproduction) -> CliResult<BenchReport> {
    let c = config;
    if c.lengths.is_empty() || c.lengths.contains(&0) || c.modes.is_empty() {
        return Err(Failure::Usage("need at least one positive length and one mode".into()));
    }
    if c.d == 0 || c.d_x == 0 || c.batch == 0 || c.repeats == 0 || c.d_o == 0 || c.train_examples == 0 || c.train_batch == 0 {
        return Err(Failure::Usage("sizes, repeats and training batch settings must be positive".into()));
    }
    let mut lengths = c.lengths.clone();
    lengths.sort_unstable();
    lengths.dedup();
    let records = with_threads(c.threads, || {
        let mut records = Vec::new();
        for &n in &lengths {
            for &mode in &c.modes {
                records.push(bench_one(c, n, mode)?);
            }
        }
        Ok::<_, Failure>(records)
    })?;

    let (first, last) = (lengths[0], lengths[lengths.len() - 1]);
    let find = |mode, n| records.iter().find(|r: &&BenchRecord| r.mode == mode && r.n == n);
    let scaling = if first < last {
        c.modes
            .iter()
            .filter_map(|&mode| {
                let (a, b) = (find(mode, first)?, find(mode, last)?);
                Some(ScalingRatio {
                    mode,
                    n_from: first,
                    n_to: last,
                    op_ratio: b.op_count as f64 / a.op_count as f64,
                    theory_ratio: mode.theory(last).zip(mode.theory(first)).map(|(x, y)| x / y),
                    wall_ratio: b.wall_seconds / a.wall_seconds,
                })
            })
            .collect()
    } else {
        Vec::new()
    };
    let train_speedup = lengths
        .iter()
        .filter_map(|&n| {
            let s = find(BenchMode::TrainSequential, n)?;
            let p = find(BenchMode::TrainParallel, n)?;
            Some(Speedup {
                n,
                ratio: s.wall_seconds / p.wall_seconds,
            })
        })
        .collect();

    Ok(BenchReport {
        benchmark: "lmu-scaling".to_string(),
        reproduction: repro.seed("workload", c.seed),
        config: c.clone(),
        records,
        scaling,
        train_speedup,
        environment: Environment {
            threads: c.threads,
            precision: "f64".to_string(),
            arch: std::env::consts::ARCH.to_string(),
            os: std::env::consts::OS.to_string(),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn op_counts_follow_the_complexity_classes() {
        let c = BenchConfig {
            lengths: vec![64, 128],
            d: 8,
            repeats: 1,
            ..BenchConfig::default()
        };
        let r = bench(&c, Reproduction::new(&[], 1)).unwrap();
        assert_eq!(r.records.len(), 8);
        let ratio = |m| r.scaling(m).unwrap().op_ratio;
        assert!((1.9..=2.1).contains(&ratio(BenchMode::Final)));
        assert!((1.9..=2.1).contains(&ratio(BenchMode::Sequential)));
        assert!((3.6..=4.4).contains(&ratio(BenchMode::Dense)));
        let fft = r.scaling(BenchMode::Fft).unwrap();
        let rel = fft.op_ratio / fft.theory_ratio.unwrap();
        assert!((0.9..=1.1).contains(&rel), "{fft:?}");
        assert!(r.to_csv().lines().nth(1) == Some("n,d,d_x,mode,wall_seconds,op_count"));
    }

    #[test]
    fn training_modes_report_a_speedup() {
        let c = BenchConfig {
            lengths: vec![100],
            d: 16,
            d_o: 8,
            train_examples: 4,
            train_batch: 4,
            repeats: 1,
            modes: vec![BenchMode::TrainSequential, BenchMode::TrainParallel],
            ..BenchConfig::default()
        };
        let r = bench(&c, Reproduction::new(&[], 1)).unwrap();
        assert_eq!(r.train_speedup.len(), 1);
        assert!(r.train_speedup[0].ratio > 0.0);
        assert!(r.scaling.is_empty());
    }

    #[test]
    fn empty_lengths_are_rejected() {
        let c = BenchConfig {
            lengths: vec![],
            ..BenchConfig::default()
        };
        assert_eq!(bench(&c, Reproduction::new(&[], 1)).unwrap_err().exit_code(), 2);
    }
}
