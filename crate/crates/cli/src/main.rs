//! Configuration-driven pipelines over random Poincare map kernels.

mod pipeline;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use pipeline::{CliError, Stage};

#[derive(Parser)]
#[command(
    name = "randpoincare",
    about = "Random Poincare maps: kernels, spectra, committors, QSDs, and theorem checks",
    version
)]
struct Cli {
    /// JSON config file; command-line flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Cap the rayon worker count.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct ModelArgs {
    /// Built-in model name ("reference") or a path to a model spec JSON.
    #[arg(long)]
    model: Option<String>,
    /// Noise intensity squared; repeatable for schedules.
    #[arg(long = "sigma2", value_delimiter = ',')]
    sigma2: Option<Vec<f64>>,
    #[arg(long)]
    omega: Option<f64>,
    #[arg(long)]
    theta_noise: Option<f64>,
}

#[derive(Args, Clone, Default)]
struct SamplingArgs {
    #[arg(long)]
    grid: Option<usize>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Locate the deterministic periodic orbits and their Floquet multipliers.
    Orbits {
        #[command(flatten)]
        model: ModelArgs,
        /// Initial guesses in chart coordinates, comma separated.
        #[arg(long, value_delimiter = ',')]
        guesses: Option<Vec<f64>>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build the discretized kernel for one noise level.
    Kernel {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        sampling: SamplingArgs,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also export the matrix as CSV next to the JSON file.
        #[arg(long)]
        csv: bool,
    },
    /// Eigenvalues and eigenvectors of a stored kernel.
    Spectrum {
        #[arg(long)]
        kernel: PathBuf,
        #[arg(long, default_value_t = 6)]
        count: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Committor P_x(hit A before B) on a stored kernel.
    Committor {
        #[arg(long)]
        kernel: PathBuf,
        /// Cell set, e.g. "3-17,40" or "win:0.8:1.2" (chart window).
        #[arg(long)]
        a: String,
        #[arg(long)]
        b: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Quasistationary distribution of the kernel killed outside a cell set.
    Qsd {
        #[arg(long)]
        kernel: PathBuf,
        #[arg(long)]
        cells: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Metastable order and margin of an exponent matrix.
    Hierarchy {
        #[command(flatten)]
        model: ModelArgs,
        /// CSV file with the H matrix (rows of comma-separated entries,
        /// "inf" on the diagonal); defaults to the model's analytic matrix.
        #[arg(long)]
        h_file: Option<PathBuf>,
    },
    /// Run a verification suite against a stored kernel.
    Verify {
        #[arg(long)]
        kernel: PathBuf,
        /// "exact" (solver-precision identities) or "theorems".
        #[arg(long, default_value = "exact")]
        suite: String,
        #[arg(long)]
        structure: Option<PathBuf>,
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        delta: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Full pipeline: orbits, kernels over the sigma schedule, structure,
    /// spectra, estimates and verification reports.
    Analyze {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        sampling: SamplingArgs,
        #[arg(long)]
        delta: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Subset of checks to run (default all):
        /// identities,eigenvalues,gap,eigenfunctions,hitting,exponent,bounds
        #[arg(long, value_delimiter = ',')]
        checks: Option<Vec<String>>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let result = match cli.command {
        Command::Orbits { model, guesses, out } => {
            pipeline::cmd_orbits(cli.config.as_deref(), &model, guesses, out.as_deref())
        }
        Command::Kernel {
            model,
            sampling,
            out,
            csv,
        } => pipeline::cmd_kernel(cli.config.as_deref(), &model, &sampling, out.as_deref(), csv),
        Command::Spectrum { kernel, count, out } => {
            pipeline::cmd_spectrum(&kernel, count, out.as_deref())
        }
        Command::Committor { kernel, a, b, out } => {
            pipeline::cmd_committor(&kernel, &a, &b, out.as_deref())
        }
        Command::Qsd { kernel, cells, out } => pipeline::cmd_qsd(&kernel, &cells, out.as_deref()),
        Command::Hierarchy { model, h_file } => {
            pipeline::cmd_hierarchy(cli.config.as_deref(), &model, h_file.as_deref())
        }
        Command::Verify {
            kernel,
            suite,
            structure,
            model,
            delta,
            out,
        } => pipeline::cmd_verify(
            cli.config.as_deref(),
            &kernel,
            &suite,
            structure.as_deref(),
            &model,
            delta,
            out.as_deref(),
        ),
        Command::Analyze {
            model,
            sampling,
            delta,
            out,
            checks,
        } => pipeline::cmd_analyze(
            cli.config.as_deref(),
            &model,
            &sampling,
            delta,
            out.as_deref(),
            checks,
        ),
    };
    match result {
        Ok(all_passed) => {
            if all_passed {
                ExitCode::SUCCESS
            } else {
                eprintln!("error [stage=verify]: at least one check failed");
                ExitCode::FAILURE
            }
        }
        Err(CliError { stage, error }) => {
            eprintln!("error [stage={stage}]: {error}");
            match stage {
                Stage::Config => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
