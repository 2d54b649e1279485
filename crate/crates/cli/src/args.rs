use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Certify membership in truncated quadratic modules and preorderings,
/// scan fibre modules and run the perturbed optimization hierarchy.
///
/// Exit codes: 0 member / all pass / verified, 1 not member / failure /
/// tampered certificate, 2 unknown, 3 parse or schema error, 4 usage error,
/// 5 hierarchy did not stabilize, 6 internal solver error.
#[derive(Debug, Parser)]
#[command(name = "posmod", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Test one target at one degree.
    Member(MemberArgs),
    /// Test targets on every fibre of a grid.
    FibreScan(FibreScanArgs),
    /// Run the F_{eps,d} table.
    Optimize(OptimizeArgs),
    /// Re-verify a certificate against a problem file.
    Verify(VerifyArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StyleArg {
    Ideal,
    Subst,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Output format
    #[arg(long, value_enum, default_value = "json")]
    pub format: Format,
    /// Omit the timestamp/timing block so repeated runs are byte-identical
    #[arg(long)]
    pub no_meta: bool,
    /// Tolerance override KEY=VALUE with KEY one of feas, gap, infeas, eig, residual, separation
    #[arg(long = "tol", value_name = "KEY=VALUE")]
    pub tol: Vec<String>,
    /// Write the result here (atomically) instead of stdout
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct MemberArgs {
    pub file: PathBuf,
    /// Target polynomial; defaults to the file's first target
    #[arg(long)]
    pub target: Option<String>,
    /// Degree bound; defaults to the file's `d`
    #[arg(long)]
    pub d: Option<usize>,
    /// Restrict to a fibre, e.g. `x=1` (repeatable)
    #[arg(long = "fibre", value_name = "POLY=VALUE")]
    pub fibre: Vec<String>,
    /// How fibres are formed
    #[arg(long, value_enum)]
    pub style: Option<StyleArg>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Args)]
pub struct FibreScanArgs {
    pub file: PathBuf,
    /// Points per axis (`9`) or explicit values (`-1,0,1`, axes separated by `;`)
    #[arg(long)]
    pub grid: Option<String>,
    /// Shared degree bound; defaults to the [fibre] block's `d`, then the file's `d`
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long, value_enum)]
    pub style: Option<StyleArg>,
    /// Targets replacing the file's list (repeatable)
    #[arg(long)]
    pub target: Vec<String>,
    /// Also search each fibre for its minimal degree up to this bound
    #[arg(long, value_name = "D_MAX")]
    pub min_degree: Option<usize>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Args)]
pub struct OptimizeArgs {
    pub file: PathBuf,
    /// Decreasing epsilon values, comma separated
    #[arg(long)]
    pub epsilon_schedule: Option<String>,
    /// Increasing degrees, comma separated
    #[arg(long)]
    pub d: Option<String>,
    /// Perturbation: `cylinder:VAR`, `monomial-squares` or `user:POLY`
    #[arg(long)]
    pub recipe: Option<String>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Args)]
pub struct VerifyArgs {
    /// Certificate JSON, either bare or a `member` result
    pub certificate: PathBuf,
    pub file: PathBuf,
    /// Target, when the certificate does not record one
    #[arg(long)]
    pub target: Option<String>,
    /// Fibre the certificate was produced on, e.g. `x=1`
    #[arg(long = "fibre", value_name = "POLY=VALUE")]
    pub fibre: Vec<String>,
    #[arg(long, value_enum)]
    pub style: Option<StyleArg>,
    #[command(flatten)]
    pub common: Common,
}
