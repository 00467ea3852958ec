use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use lmu_core::data::{
    chronological_split, delay_task, load_idx_images, load_idx_labels, mackey_glass, psmnist,
    DelayTaskConfig, ImageSet, LabeledDataset, MackeyGlassConfig, PsMnistConfig, Split,
};
use lmu_core::layers::{LayerSpec, Model};
use lmu_core::train::{evaluate, History, TrainConfig, Trainer};

use crate::failure::{CliResult, Failure};
use crate::repro::{with_threads, Reproduction};

/// Environment variable that overrides the MNIST directory.
pub const DATA_DIR_ENV: &str = "LMU_DATA_DIR";
pub const DEFAULT_DATA_DIR: &str = "data/mnist";

pub const MNIST_FILES: [&str; 4] = [
    "train-images-idx3-ubyte",
    "train-labels-idx1-ubyte",
    "t10k-images-idx3-ubyte",
    "t10k-labels-idx1-ubyte",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Mackey,
    Psmnist,
    Delay,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Mackey => "mackey",
            Task::Psmnist => "psmnist",
            Task::Delay => "delay",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MackeyData {
    #[serde(default)]
    pub series: MackeyGlassConfig,
    /// Input window length in samples.
    pub window: usize,
    /// Leading fraction of the series used for training.
    pub train_fraction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PsmnistData {
    /// Directory with the four uncompressed IDX files. The `--data-dir`
    /// flag and `LMU_DATA_DIR` take precedence.
    #[serde(default)]
    pub data_dir: Option<PathBuf>,
    #[serde(default)]
    pub split: PsMnistConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DelayData {
    pub train: DelayTaskConfig,
    pub test: DelayTaskConfig,
}

/// One experiment: data, model and training schedule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    #[serde(default)]
    pub task: Option<Task>,
    /// Seed for weight initialization.
    pub model_seed: u64,
    pub layers: Vec<LayerSpec>,
    pub train: TrainConfig,
    /// Batch size for evaluation passes; defaults to the training batch.
    #[serde(default)]
    pub eval_batch: Option<usize>,
    /// Worker threads; defaults to 1.
    #[serde(default)]
    pub threads: Option<usize>,
    #[serde(default)]
    pub mackey: Option<MackeyData>,
    #[serde(default)]
    pub psmnist: Option<PsmnistData>,
    #[serde(default)]
    pub delay: Option<DelayData>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| Failure::Usage(format!("bad config: {e}")))
    }

    pub fn load(path: impl AsRef<Path>) -> CliResult<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| Failure::Io(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Total trainable parameters of the configured model.
    pub fn param_count(&self) -> usize {
        self.layers.iter().map(LayerSpec::param_count).sum()
    }

    /// The task named on the command line must agree with the config.
    pub fn resolve_task(&self, requested: Option<Task>) -> CliResult<Task> {
        match (requested, self.task) {
            (Some(r), Some(c)) if r != c => Err(Failure::Usage(format!(
                "--task {} does not match the config's task {}",
                r.name(),
                c.name()
            ))),
            (Some(t), _) | (None, Some(t)) => Ok(t),
            (None, None) => Err(Failure::Usage("no task given in flags or config".into())),
        }
    }
}

/// `flag`, then `LMU_DATA_DIR`, then the config value, then `data/mnist`.
pub fn resolve_data_dir(flag: Option<&Path>, config: Option<&Path>) -> PathBuf {
    flag.map(Path::to_path_buf)
        .or_else(|| std::env::var_os(DATA_DIR_ENV).map(PathBuf::from))
        .or_else(|| config.map(Path::to_path_buf))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_DATA_DIR))
}

/// Training and test images and labels from `dir`.
pub fn load_mnist(dir: &Path) -> CliResult<(ImageSet, Vec<usize>, ImageSet, Vec<usize>)> {
    for f in MNIST_FILES {
        let p = dir.join(f);
        if !p.is_file() {
            return Err(Failure::Io(format!(
                "MNIST file {} not found. Run `lmu fetch --dir {}` to download and verify \
                 the dataset, or set {DATA_DIR_ENV} to a directory holding {}",
                p.display(),
                dir.display(),
                MNIST_FILES.join(", ")
            )));
        }
    }
    Ok((
        load_idx_images(dir.join(MNIST_FILES[0]))?,
        load_idx_labels(dir.join(MNIST_FILES[1]))?,
        load_idx_images(dir.join(MNIST_FILES[2]))?,
        load_idx_labels(dir.join(MNIST_FILES[3]))?,
    ))
}

/// Training set plus named evaluation sets.
pub struct Datasets {
    pub train: LabeledDataset,
    pub evals: Vec<(String, LabeledDataset)>,
}

fn section<'a, T>(value: &'a Option<T>, task: Task) -> CliResult<&'a T> {
    value
        .as_ref()
        .ok_or_else(|| Failure::Usage(format!("config lacks a [{}] section", task.name())))
}

pub fn prepare_data(
    config: &ExperimentConfig,
    task: Task,
    data_dir: Option<&Path>,
) -> CliResult<Datasets> {
    Ok(match task {
        Task::Mackey => {
            let m = section(&config.mackey, task)?;
            let series = mackey_glass(&m.series)?;
            let (train, test) =
                chronological_split(&series, m.window, m.series.horizon, m.train_fraction)?;
            Datasets {
                train,
                evals: vec![("test".into(), test)],
            }
        }
        Task::Psmnist => {
            let p = section(&config.psmnist, task)?;
            let dir = resolve_data_dir(data_dir, p.data_dir.as_deref());
            let (tri, trl, tei, tel) = load_mnist(&dir)?;
            let ds = psmnist(&tri, &trl, &tei, &tel, &p.split)?;
            Datasets {
                train: ds.train,
                evals: vec![("val".into(), ds.val), ("test".into(), ds.test)],
            }
        }
        Task::Delay => {
            let d = section(&config.delay, task)?;
            Datasets {
                train: delay_task(&d.train)?,
                evals: vec![("test".into(), delay_task(&d.test)?.with_split(Split::Test))],
            }
        }
    })
}

/// Summary of a finished run; written to `final.json`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Outcome {
    pub reproduction: Reproduction,
    pub task: Task,
    pub config: ExperimentConfig,
    pub param_count: usize,
    pub epochs: usize,
    /// Metrics of the final model on every evaluation set.
    pub final_metrics: BTreeMap<String, f64>,
    /// Training-pass wall time per epoch.
    pub epoch_seconds: Vec<f64>,
    pub total_seconds: f64,
    #[serde(skip)]
    pub history: History,
}

/// Where a run writes its artifacts.
pub struct RunFiles {
    pub dir: PathBuf,
}

impl RunFiles {
    pub fn history(&self) -> PathBuf {
        self.dir.join("history.jsonl")
    }

    pub fn summary(&self) -> PathBuf {
        self.dir.join("final.json")
    }

    pub fn model(&self) -> PathBuf {
        self.dir.join("model.ckpt")
    }
}

/// Builds, trains and evaluates the model. With `out`, streams the history
/// to `history.jsonl` as epochs finish and saves the model and summary.
pub fn run_experiment(
    config: &ExperimentConfig,
    task: Task,
    data_dir: Option<&Path>,
    out: Option<&RunFiles>,
    repro: Reproduction,
) -> CliResult<Outcome> {
    let threads = config.threads.unwrap_or(1);
    with_threads(threads, || run_inner(config, task, data_dir, out, repro))
}

fn run_inner(
    config: &ExperimentConfig,
    task: Task,
    data_dir: Option<&Path>,
    out: Option<&RunFiles>,
    repro: Reproduction,
) -> CliResult<Outcome> {
    let start = Instant::now();
    let data = prepare_data(config, task, data_dir)?;
    let mut model = Model::from_specs(&config.layers, config.model_seed)?;
    let mut trainer = Trainer::new(config.train.clone(), &model)?;
    let evals: Vec<(&str, &LabeledDataset)> =
        data.evals.iter().map(|(n, d)| (n.as_str(), d)).collect();

    let mut writer = match out {
        Some(files) => {
            fs::create_dir_all(&files.dir)?;
            Some(BufWriter::new(File::create(files.history())?))
        }
        None => None,
    };
    let history = trainer.fit_with(&mut model, &data.train, &evals, |record| {
        if let Some(w) = writer.as_mut() {
            serde_json::to_writer(&mut *w, record)?;
            w.write_all(b"\n")?;
            w.flush()?;
        }
        Ok(())
    })?;

    let eval_batch = config.eval_batch.unwrap_or(config.train.batch_size);
    let mut final_metrics = BTreeMap::new();
    for (name, ds) in &evals {
        for (k, v) in evaluate(&model, ds, config.train.loss, &config.train.metrics, eval_batch)? {
            final_metrics.insert(format!("{name}_{k}"), v);
        }
    }
    let outcome = Outcome {
        reproduction: repro
            .seed("model", config.model_seed)
            .seed("train", config.train.seed),
        task,
        config: config.clone(),
        param_count: model.param_count(),
        epochs: history.records.len(),
        final_metrics,
        epoch_seconds: history.records.iter().map(|r| r.wall_seconds).collect(),
        total_seconds: start.elapsed().as_secs_f64(),
        history,
    };
    if let Some(files) = out {
        model.save(files.model())?;
        fs::write(files.summary(), serde_json::to_string_pretty(&outcome)?)?;
    }
    Ok(outcome)
}
