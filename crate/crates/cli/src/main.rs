//! `pdesym` command-line interface.

mod commands;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::error::{ErrorKind, ErrorReport};

#[derive(Debug, Parser)]
#[command(
    name = "pdesym",
    version,
    about = "Canonical PDE tokens, conservation-law solvers and particle-filter refinement"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Global {
    /// Seed for every random stream.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Write the result here instead of stdout (`gen`: the dataset directory).
    #[arg(long, short, global = true)]
    pub output: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    pub format: Format,
    /// Worker threads; 0 lets the runtime decide.
    #[arg(long, global = true, env = "PDESYM_THREADS")]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DialectArg {
    Manual,
    Canonical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LikelihoodArg {
    PerPoint,
    FieldNorm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Test,
}

/// Where a conservation law comes from.
#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
pub struct LawSource {
    /// Equation JSON as written by `gen`.
    #[arg(long)]
    pub equation: Option<PathBuf>,
    /// Infix equation such as `u_t + 0.5*(u^2)_x = 0.05*u_xx`.
    #[arg(long)]
    pub eq: Option<String>,
    /// Family name with its base coefficients.
    #[arg(long)]
    pub family: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse an infix equation and report its structure.
    Parse {
        #[arg(long, visible_alias = "expr")]
        eq: String,
        /// Read juxtaposed operands as a product.
        #[arg(long)]
        lenient: bool,
    },
    /// Canonical form and canonical tokens of an equation.
    Canon {
        #[arg(long, visible_alias = "eq")]
        expr: String,
        /// Replace every term coefficient with `[?]`.
        #[arg(long)]
        mask: bool,
        #[arg(long)]
        lenient: bool,
    },
    /// Encode an equation as tokens, or decode tokens back to infix.
    Tokens {
        #[arg(long, value_enum, default_value_t = DialectArg::Canonical)]
        dialect: DialectArg,
        #[arg(
            long,
            visible_alias = "expr",
            conflicts_with = "decode",
            required_unless_present = "decode"
        )]
        eq: Option<String>,
        /// Space-separated token sequence to decode.
        #[arg(long)]
        decode: Option<String>,
        #[arg(long)]
        lenient: bool,
    },
    /// Randomly reorder branches, inject a spurious term, or mask coefficients.
    Perturb {
        #[arg(long, visible_alias = "expr")]
        eq: String,
        #[arg(long, default_value_t = 0.5)]
        swap_prob: f64,
        #[arg(long, default_value_t = 0.0)]
        noise_prob: f64,
        /// Mask coefficients of the perturbed equation (canonical output).
        #[arg(long)]
        mask: bool,
        /// Token dialect of the output; `manual` keeps the perturbed order.
        #[arg(long, value_enum, default_value_t = DialectArg::Manual)]
        dialect: DialectArg,
        #[arg(long)]
        lenient: bool,
    },
    /// Solve a conservation law from a random or stored initial condition.
    Solve {
        #[command(flatten)]
        law: LawSource,
        /// Override the coefficients as `q1[,q2]`.
        #[arg(long, value_delimiter = ',')]
        coefficients: Option<Vec<f64>>,
        /// Take the initial condition from the first frame of this grid file.
        #[arg(long)]
        initial: Option<PathBuf>,
        #[arg(long, default_value_t = 128)]
        nx: usize,
        #[arg(long, default_value_t = 32)]
        nt: usize,
        #[arg(long, default_value_t = 1.0)]
        t_final: f64,
        /// Also write the trajectory as a PDEGRID1 file.
        #[arg(long)]
        grid: Option<PathBuf>,
    },
    /// Generate a dataset directory of trajectories and equation records.
    Gen {
        #[arg(long, value_enum, default_value_t = SplitArg::Test)]
        split: SplitArg,
        /// Comma-separated family names (default: all six).
        #[arg(long, value_delimiter = ',')]
        families: Option<Vec<String>>,
        #[arg(long)]
        params_per_family: Option<usize>,
        #[arg(long)]
        ics_per_param: Option<usize>,
    },
    /// Refine equation coefficients against an observed trajectory.
    Refine {
        #[command(flatten)]
        law: LawSource,
        /// PDEGRID1 observation file.
        #[arg(long)]
        observations: PathBuf,
        /// Initial coefficients `q1[,q2]` (default: taken from the equation).
        #[arg(long, value_delimiter = ',')]
        coefficients: Option<Vec<f64>>,
        #[arg(long, default_value_t = 500)]
        particles: usize,
        #[arg(long, default_value_t = 10)]
        steps: usize,
        #[arg(long, default_value_t = 1e-5)]
        process_var: f64,
        #[arg(long, default_value_t = 0.05)]
        obs_scale: f64,
        #[arg(long, value_enum, default_value_t = LikelihoodArg::PerPoint)]
        likelihood: LikelihoodArg,
        /// Report wall-clock seconds in `elapsed`.
        #[arg(long)]
        timing: bool,
        /// Write every particle after each step as CSV.
        #[arg(long)]
        cloud: Option<PathBuf>,
    },
    /// Score learned equations against true ones and their trajectories.
    Eval {
        /// Learned equation JSON; its canonical tokens are decoded. Repeatable.
        #[arg(long, required = true)]
        learned: Vec<PathBuf>,
        /// True equation JSON, paired with `--learned` in order.
        #[arg(long, required = true)]
        truth: Vec<PathBuf>,
        /// Observed PDEGRID1 trajectory per pair.
        #[arg(long)]
        trajectory: Vec<PathBuf>,
        /// Predicted PDEGRID1 trajectory per pair.
        #[arg(long)]
        prediction: Vec<PathBuf>,
    },
    /// Refinement study: errors with and without filtering per family.
    Study {
        #[arg(long, value_delimiter = ',')]
        families: Option<Vec<String>>,
        #[arg(long, default_value_t = 20)]
        trials: usize,
        #[arg(long, default_value_t = 0.03)]
        coeff_error: f64,
        #[arg(long, default_value_t = 500)]
        particles: usize,
        #[arg(long, default_value_t = 10)]
        steps: usize,
        /// Print a plain-text table instead of JSON or CSV.
        #[arg(long)]
        table: bool,
    },
}

fn fail(kind: ErrorKind, message: String) -> ExitCode {
    eprintln!("{}", ErrorReport::new(kind, message).to_json());
    ExitCode::from(kind.exit_code())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            return fail(
                ErrorKind::Usage,
                e.render().to_string().trim_end().to_string(),
            )
        }
    };
    if let Some(n) = cli.global.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            return fail(ErrorKind::Usage, format!("thread pool: {e}"));
        }
    }
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(e.kind(), e.to_string()),
    }
}
