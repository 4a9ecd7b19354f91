use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use krls::synth::SynthConfig;
use krls_cli::commands;
use krls_cli::config::{Overrides, RunConfig};

/// Online kernel dictionary learning: train per-class dictionaries from
/// streamed samples, cross-validate them, and benchmark the recursive
/// updates.
#[derive(Parser)]
#[command(name = "krls", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one dictionary per class and save profile snapshots.
    Train(RunArgs),
    /// Stratified k-fold cross-validation with checkpointed accuracy curves.
    Cv(RunArgs),
    /// Accuracy of the final dictionaries under missing test-sample entries.
    CorruptEval(RunArgs),
    /// Median grow/prune wall time as the profile size scales.
    BenchScaling(BenchArgs),
    /// Batch dictionary-learning benchmark on the same folds.
    BatchKmod(KmodArgs),
    /// Generate the bundled synthetic planted-dictionary dataset.
    Synth(SynthArgs),
}

#[derive(Args)]
struct CommonOpts {
    /// JSON config file; flags override its keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for metrics and artifacts.
    #[arg(long)]
    out: PathBuf,
    /// RNG seed controlling folds, corruption masks, and benchmarks.
    #[arg(long)]
    seed: Option<u64>,
    /// Number of dictionary atoms.
    #[arg(long)]
    q: Option<usize>,
    /// Profile size cap.
    #[arg(long)]
    l_max: Option<usize>,
    /// Mini-batch size for growing and pruning.
    #[arg(long)]
    batch_size: Option<usize>,
    /// Regularization weight.
    #[arg(long)]
    gamma: Option<f64>,
    /// Coherence threshold for accepting new samples.
    #[arg(long)]
    delta: Option<f64>,
    /// Sparsity level for coding.
    #[arg(long)]
    sparsity: Option<usize>,
    /// Kernel spec: `linear` | `poly:<degree>[:<offset>]` | `rbf:<gamma>`.
    #[arg(long)]
    kernel: Option<String>,
    /// Cross-validation folds.
    #[arg(long)]
    folds: Option<usize>,
    /// Passes over the training stream.
    #[arg(long)]
    epochs: Option<usize>,
    /// Number of evaluation checkpoints.
    #[arg(long)]
    checkpoints: Option<usize>,
    /// Initial forgetting factor.
    #[arg(long)]
    lambda0: Option<f64>,
    /// Fraction of batches over which the forgetting factor ramps to 1.
    #[arg(long)]
    ramp_fraction: Option<f64>,
    /// Diagonal drift of the dictionary Gram matrix tolerated before rescaling.
    #[arg(long)]
    normalize_tol: Option<f64>,
}

#[derive(Args)]
struct RunArgs {
    /// Input dataset CSV (header with a `label` column).
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    common: CommonOpts,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    common: CommonOpts,
    /// Profile sizes to benchmark.
    #[arg(long, value_delimiter = ',')]
    sizes: Option<Vec<usize>>,
    /// Timed grow/prune repetitions per size.
    #[arg(long)]
    reps: Option<usize>,
}

#[derive(Args)]
struct KmodArgs {
    /// Input dataset CSV (header with a `label` column).
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    common: CommonOpts,
    /// Batch learner iterations.
    #[arg(long)]
    iters: Option<usize>,
}

#[derive(Args)]
struct SynthArgs {
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 3)]
    classes: usize,
    #[arg(long, default_value_t = 20)]
    dim: usize,
    #[arg(long, default_value_t = 10)]
    atoms_per_class: usize,
    #[arg(long, default_value_t = 600)]
    samples_per_class: usize,
    /// Nonzero coefficients per generated sample.
    #[arg(long, default_value_t = 3)]
    gen_sparsity: usize,
    /// Additive noise standard deviation.
    #[arg(long, default_value_t = 0.05)]
    noise: f64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

fn overrides(common: &CommonOpts) -> Overrides {
    Overrides {
        q: common.q,
        l_max: common.l_max,
        batch_size: common.batch_size,
        gamma: common.gamma,
        delta: common.delta,
        sparsity: common.sparsity,
        lambda0: common.lambda0,
        ramp_fraction: common.ramp_fraction,
        epochs: common.epochs,
        checkpoints: common.checkpoints,
        normalize_tol: common.normalize_tol,
        seed: common.seed,
        kernel: common.kernel.clone(),
        folds: common.folds,
        ..Overrides::default()
    }
}

fn run() -> anyhow::Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Train(args) => {
            let cfg = RunConfig::load_and_resolve(
                args.common.config.as_deref(),
                &overrides(&args.common),
            )?;
            commands::cmd_train(&args.data, &args.common.out, &cfg)
        }
        Command::Cv(args) => {
            let cfg = RunConfig::load_and_resolve(
                args.common.config.as_deref(),
                &overrides(&args.common),
            )?;
            commands::cmd_cv(&args.data, &args.common.out, &cfg)
        }
        Command::CorruptEval(args) => {
            let cfg = RunConfig::load_and_resolve(
                args.common.config.as_deref(),
                &overrides(&args.common),
            )?;
            commands::cmd_corrupt_eval(&args.data, &args.common.out, &cfg)
        }
        Command::BenchScaling(args) => {
            let mut ov = overrides(&args.common);
            ov.bench_sizes = args.sizes.clone();
            ov.bench_reps = args.reps;
            let cfg = RunConfig::load_and_resolve(args.common.config.as_deref(), &ov)?;
            commands::cmd_bench_scaling(&args.common.out, &cfg)
        }
        Command::BatchKmod(args) => {
            let mut ov = overrides(&args.common);
            ov.kmod_iters = args.iters;
            let cfg = RunConfig::load_and_resolve(args.common.config.as_deref(), &ov)?;
            commands::cmd_batch_kmod(&args.data, &args.common.out, &cfg)
        }
        Command::Synth(args) => {
            let synth_cfg = SynthConfig {
                classes: args.classes,
                dim: args.dim,
                atoms_per_class: args.atoms_per_class,
                samples_per_class: args.samples_per_class,
                sparsity: args.gen_sparsity,
                noise: args.noise,
                seed: args.seed,
            };
            commands::cmd_synth(&args.out, &synth_cfg)
        }
    }
}

fn main() -> ExitCode {
    // Die quietly on a closed pipe (`krls … | head`) instead of panicking.
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
