mod commands;
mod report;
mod suites;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use twoweight::instance::{GenConfig, OperatorKind, WeightLaw};
use twoweight::norms::Budget;

/// Finite dyadic models of two-weight norm inequalities.
#[derive(Parser, Debug)]
#[command(name = "twoweight", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Options shared by every command.
#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Seed for every randomized step.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Search effort: quick, default, thorough, or a JSON budget file.
    #[arg(long, default_value = "default")]
    pub budget: String,
    /// Output file or directory (stdout when omitted, where that makes sense).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct GenArgs {
    #[arg(long, default_value_t = 1)]
    pub n: usize,
    #[arg(long, default_value_t = 2)]
    pub depth: usize,
    #[arg(long, value_enum, default_value = "uniform")]
    pub weight_law: LawArg,
    #[arg(long, value_enum, default_value = "positive")]
    pub operator_kind: KindArg,
    /// Probability that a cube carries a coefficient.
    #[arg(long, default_value_t = 0.5)]
    pub sparsity: f64,
    #[arg(long, default_value_t = 2.0)]
    pub p: f64,
    #[arg(long, default_value_t = 2.0)]
    pub q: f64,
}

impl GenArgs {
    pub fn config(&self, seed: u64) -> GenConfig {
        GenConfig {
            n: self.n,
            depth: self.depth,
            weight_law: self.weight_law.into(),
            operator_kind: self.operator_kind.into(),
            sparsity: self.sparsity,
            p: self.p,
            q: self.q,
            seed,
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum LawArg {
    Uniform,
    LogUniform,
    AtomicWithZeros,
    Lebesgue,
}

impl From<LawArg> for WeightLaw {
    fn from(v: LawArg) -> Self {
        match v {
            LawArg::Uniform => WeightLaw::Uniform,
            LawArg::LogUniform => WeightLaw::LogUniform,
            LawArg::AtomicWithZeros => WeightLaw::AtomicWithZeros,
            LawArg::Lebesgue => WeightLaw::Lebesgue,
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum KindArg {
    Positive,
    Haar,
}

impl From<KindArg> for OperatorKind {
    fn from(v: KindArg) -> Self {
        match v {
            KindArg::Positive => OperatorKind::Positive,
            KindArg::Haar => OperatorKind::Haar,
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Suite {
    Core,
    Stopping,
    Thm31,
    Thm43,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormMethod {
    /// Singular values at p = q = 2, dual-seeded ascent otherwise.
    Auto,
    Svd,
    Ascent,
    Bruteforce,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum PolicyArg {
    /// Carleson families for positive operators, all subfamilies otherwise.
    Auto,
    AllSubfamilies,
    CarlesonOnly,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write seeded instance bundles.
    Gen {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        gen: GenArgs,
        /// Number of bundles; with more than one, --out is a directory.
        #[arg(long, default_value_t = 1)]
        count: usize,
    },
    /// Run an invariant suite on bundles (files or directories) or on
    /// freshly generated instances.
    Verify {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        suite: Suite,
        inputs: Vec<PathBuf>,
        /// Generated instances when no inputs are given.
        #[arg(long, default_value_t = 10)]
        trials: usize,
        #[command(flatten)]
        gen: GenArgs,
        /// Sufficiency ratio above which an instance is flagged.
        #[arg(long, default_value_t = twoweight::testing::DEFAULT_ALARM)]
        alarm: f64,
    },
    /// Operator norm of one bundle.
    Norm {
        #[command(flatten)]
        common: Common,
        input: PathBuf,
        #[arg(long, value_enum, default_value = "auto")]
        method: NormMethod,
        /// Grid resolution of the brute-force oracle.
        #[arg(long, default_value_t = 24)]
        grid: usize,
    },
    /// Norm, Sawyer and square-function testing constants of one bundle.
    Constants {
        #[command(flatten)]
        common: Common,
        input: PathBuf,
        #[arg(long, value_enum, default_value = "auto")]
        policy: PolicyArg,
        #[arg(long, default_value_t = twoweight::testing::DEFAULT_ALARM)]
        alarm: f64,
    },
    /// Search Haar multipliers for a large gap between the norm and the
    /// Sawyer constants; writes a CSV trace.
    Search {
        #[command(flatten)]
        common: Common,
        /// JSON file with p, q and optional max_depth, weight_law,
        /// candidates, mutations.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        p: Option<f64>,
        #[arg(long)]
        q: Option<f64>,
        #[arg(long)]
        max_depth: Option<usize>,
        #[arg(long)]
        candidates: Option<usize>,
        #[arg(long)]
        mutations: Option<usize>,
        #[arg(long, value_enum)]
        weight_law: Option<LawArg>,
    },
}

/// How a command ended when it did not succeed.
#[derive(Debug)]
pub enum Failure {
    /// Bad invocation or configuration (exit 2).
    Usage(String),
    /// Hard invariant failures (exit 1); the reports were written.
    Invariants(usize),
    /// I/O, schema or numerical errors (exit 1).
    Other(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Other(e)
    }
}

pub fn budget_from(common: &Common) -> Result<Budget, Failure> {
    let mut b = match common.budget.as_str() {
        "quick" => Budget {
            restarts: 16,
            iterations: 400,
            families: 64,
            ..Budget::default()
        },
        "default" => Budget::default(),
        "thorough" => Budget {
            restarts: 64,
            iterations: 10_000,
            families: 1024,
            ..Budget::default()
        },
        path => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Failure::Usage(format!("--budget {path}: not a preset and not readable ({e})")))?;
            serde_json::from_str(&text).map_err(|e| Failure::Usage(format!("--budget {path}: {e}")))?
        }
    };
    if b.restarts < 16 {
        return Err(Failure::Usage("budget needs at least 16 restarts".into()));
    }
    b.seed = common.seed;
    Ok(b)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Gen { common, gen, count } => commands::gen(&common, &gen, count),
        Command::Verify {
            common,
            suite,
            inputs,
            trials,
            gen,
            alarm,
        } => commands::verify(&common, suite, &inputs, trials, &gen, alarm),
        Command::Norm {
            common,
            input,
            method,
            grid,
        } => commands::norm(&common, &input, method, grid),
        Command::Constants {
            common,
            input,
            policy,
            alarm,
        } => commands::constants(&common, &input, policy, alarm),
        Command::Search {
            common,
            config,
            p,
            q,
            max_depth,
            candidates,
            mutations,
            weight_law,
        } => commands::search(
            &common,
            config.as_deref(),
            commands::SearchOverrides {
                p,
                q,
                max_depth,
                candidates,
                mutations,
                weight_law: weight_law.map(Into::into),
            },
        ),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Invariants(n)) => {
            eprintln!("{n} hard invariant failure(s)");
            ExitCode::from(1)
        }
        Err(Failure::Other(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
