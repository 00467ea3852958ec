use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use lmu_bench::bench::{bench, BenchConfig, BenchMode};
use lmu_bench::experiment::{run_experiment, ExperimentConfig, RunFiles, Task, DEFAULT_DATA_DIR};
use lmu_bench::fetch::{fetch, DEFAULT_MIRROR};
use lmu_bench::sweep::{delay_sweep, SweepConfig, SweepSignal};
use lmu_bench::verify::{verify, VerifyConfig};
use lmu_bench::{CliResult, Failure, Reproduction, VERSION};

#[derive(Parser)]
#[command(name = "lmu", version = VERSION, about = "Parallel LMU: equivalence checks, sweeps, benchmarks and experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check that scan, dense convolution, FFT convolution and final-state agree.
    Verify(VerifyArgs),
    /// Delay reconstruction NRMSE per memory order, as CSV.
    DelaySweep(SweepArgs),
    /// Wall time and op counts per sequence length and execution path.
    Bench(BenchArgs),
    /// Train a model from a TOML config.
    Train(TrainArgs),
    /// Download and verify the MNIST IDX files.
    Fetch(FetchArgs),
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long, default_value_t = 16)]
    d: usize,
    #[arg(long, default_value_t = 100.0)]
    theta: f64,
    #[arg(long, default_value_t = 512)]
    n: usize,
    /// Memory channels.
    #[arg(long, default_value_t = 4)]
    channels: usize,
    #[arg(long, default_value_t = 2)]
    batch: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-9)]
    tolerance: f64,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long, default_value_t = 100)]
    theta: usize,
    #[arg(long, value_delimiter = ',', default_values_t = [2usize, 4, 8, 12])]
    orders: Vec<usize>,
    #[arg(long, default_value_t = 0)]
    signal_seed: u64,
    #[arg(long, default_value_t = 10_000)]
    len: usize,
    #[arg(long, value_enum, default_value_t = SweepSignal::Noise)]
    signal: SweepSignal,
    /// Noise bandwidth in cycles per theta steps.
    #[arg(long, default_value_t = 1.0)]
    bandwidth: f64,
    /// Absolute noise cutoff in cycles per step; overrides --bandwidth.
    #[arg(long)]
    cutoff: Option<f64>,
    /// First scored step (at least theta).
    #[arg(long)]
    warmup: Option<usize>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, value_delimiter = ',', default_values_t = [512usize, 1024, 2048, 4096])]
    lengths: Vec<usize>,
    #[arg(long, default_value_t = 64)]
    d: usize,
    #[arg(long = "d-x", alias = "d_x", default_value_t = 1)]
    d_x: usize,
    #[arg(long, value_enum, value_delimiter = ',',
          default_values_t = [BenchMode::Sequential, BenchMode::Dense, BenchMode::Fft, BenchMode::Final])]
    modes: Vec<BenchMode>,
    #[arg(long, default_value_t = 3)]
    repeats: usize,
    #[arg(long, default_value_t = 1)]
    batch: usize,
    /// Window length; defaults to each sequence length.
    #[arg(long)]
    theta: Option<f64>,
    #[arg(long = "d-o", alias = "d_o", default_value_t = 64)]
    d_o: usize,
    #[arg(long, default_value_t = 32)]
    train_examples: usize,
    #[arg(long, default_value_t = 16)]
    train_batch: usize,
    #[arg(long, default_value_t = 1)]
    threads: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Emit CSV instead of JSON.
    #[arg(long)]
    csv: bool,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, value_enum)]
    task: Option<Task>,
    #[arg(long)]
    config: PathBuf,
    /// Directory for history.jsonl, final.json and model.ckpt.
    #[arg(long)]
    out: Option<PathBuf>,
    /// MNIST directory; overrides LMU_DATA_DIR and the config.
    #[arg(long)]
    data_dir: Option<PathBuf>,
    /// Override the configured number of epochs.
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Args)]
struct FetchArgs {
    #[arg(long, default_value = DEFAULT_DATA_DIR)]
    dir: PathBuf,
    #[arg(long, default_value = DEFAULT_MIRROR)]
    mirror: String,
    /// Re-download files that are already present.
    #[arg(long)]
    force: bool,
}

fn print_json(value: &impl serde::Serialize) -> CliResult<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn run(cli: Cli, argv: &[String]) -> CliResult<()> {
    match cli.command {
        Command::Verify(a) => {
            let config = VerifyConfig {
                d: a.d,
                theta: a.theta,
                n: a.n,
                channels: a.channels,
                batch: a.batch,
                seed: a.seed,
                tolerance: a.tolerance,
            };
            let report = verify(&config, Reproduction::new(argv, rayon::current_num_threads()))?;
            print_json(&report)?;
            if !report.pass {
                return Err(Failure::Check(format!(
                    "max deviation {:e} exceeds tolerance {:e}",
                    report.max_deviation, report.config.tolerance
                )));
            }
        }
        Command::DelaySweep(a) => {
            let config = SweepConfig {
                theta: a.theta,
                orders: a.orders,
                signal_seed: a.signal_seed,
                len: a.len,
                signal: a.signal,
                bandwidth: a.bandwidth,
                cutoff: a.cutoff,
                warmup: a.warmup,
            };
            let report = delay_sweep(&config, Reproduction::new(argv, 1))?;
            print!("{}", report.to_csv());
        }
        Command::Bench(a) => {
            let config = BenchConfig {
                lengths: a.lengths,
                d: a.d,
                d_x: a.d_x,
                modes: a.modes,
                repeats: a.repeats,
                batch: a.batch,
                theta: a.theta,
                d_o: a.d_o,
                train_examples: a.train_examples,
                train_batch: a.train_batch,
                threads: a.threads,
                seed: a.seed,
            };
            let report = bench(&config, Reproduction::new(argv, a.threads))?;
            if a.csv {
                print!("{}", report.to_csv());
            } else {
                print_json(&report)?;
            }
        }
        Command::Train(a) => {
            let mut config = ExperimentConfig::load(&a.config)?;
            if let Some(e) = a.epochs {
                config.train.epochs = e;
            }
            let task = config.resolve_task(a.task)?;
            let files = a.out.map(|dir| RunFiles { dir });
            let repro = Reproduction::new(argv, config.threads.unwrap_or(1));
            let outcome = run_experiment(&config, task, a.data_dir.as_deref(), files.as_ref(), repro)?;
            if files.is_none() {
                print!("{}", outcome.history.to_jsonl()?);
            }
            print_json(&outcome)?;
        }
        Command::Fetch(a) => {
            let report = fetch(&a.dir, &a.mirror, a.force, Reproduction::new(argv, 1))?;
            print_json(&report)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli, &argv) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("lmu: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
