use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use sai_core::lstsq::LsOptions;
use sai_core::splitting::{MatrixKind, SparsifyStrategy, SplitOptions};
use sai_core::{CPolicy, DriverConfig, Method, Permute, PsaiConfig, SpaiConfig, TolPolicy};

use crate::CliError;

#[derive(Debug, Parser)]
#[command(name = "sai", version, about = "Sparse approximate inverse preconditioners with dense-column splitting")]
pub struct Cli {
    /// Worker threads for column construction and subsystem solves.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Column statistics, dominance classes and conditioning of a matrix.
    Analyze(AnalyzeArgs),
    /// Write A~ and U for the dense-column splitting.
    Split(SplitArgs),
    /// Build M and write it as Matrix Market.
    Precond(PrecondArgs),
    /// Solve A x = b with right-preconditioned BiCGStab.
    Solve(SolveArgs),
    /// Run the S-/N- SPAI and PSAI variants side by side.
    Bench(BenchArgs),
    /// Write a random test matrix of a known class.
    Generate(GenerateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodKind {
    Spai,
    Psai,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StrategyArg {
    Nearest,
    Largest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PermuteArg {
    Auto,
    Always,
    Never,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    /// Precondition A~ and recover x with the low-rank correction.
    Split,
    /// Precondition A directly.
    Standard,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KindArg {
    DominantRow,
    DominantCol,
    MMatrix,
    IrreduciblyDominant,
}

impl From<KindArg> for MatrixKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::DominantRow => MatrixKind::DominantRow,
            KindArg::DominantCol => MatrixKind::DominantCol,
            KindArg::MMatrix => MatrixKind::MMatrix,
            KindArg::IrreduciblyDominant => MatrixKind::IrreduciblyDominant,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct SplitFlags {
    /// Column is irregular when nnz >= factor * p.
    #[arg(long, default_value_t = 10.0)]
    pub factor: f64,
    #[arg(long, value_enum, default_value_t = StrategyArg::Nearest)]
    pub strategy: StrategyArg,
    /// Entries kept per irregular column (default: p).
    #[arg(long)]
    pub keep: Option<usize>,
    #[arg(long, value_enum, default_value_t = PermuteArg::Auto)]
    pub permute: PermuteArg,
}

impl SplitFlags {
    pub fn options(&self) -> Result<SplitOptions, CliError> {
        if !(self.factor.is_finite() && self.factor > 0.0) {
            return Err(CliError::Usage(format!("--factor must be positive, got {}", self.factor)));
        }
        if self.keep == Some(0) {
            return Err(CliError::Usage("--keep must be at least 1 (the diagonal)".into()));
        }
        let strategy = match self.strategy {
            StrategyArg::Nearest => SparsifyStrategy::NearestDiagonal,
            StrategyArg::Largest => SparsifyStrategy::LargestMagnitude,
        };
        Ok(SplitOptions { factor: self.factor, strategy, p_kept: self.keep })
    }

    pub fn permute(&self) -> Permute {
        match self.permute {
            PermuteArg::Auto => Permute::Auto,
            PermuteArg::Always => Permute::Always,
            PermuteArg::Never => Permute::Never,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct MethodFlags {
    #[arg(long, value_enum, default_value_t = MethodKind::Psai)]
    pub method: MethodKind,
    /// Column residual target (`-ep`).
    #[arg(long, default_value_t = 0.4)]
    pub delta: f64,
    /// Indices added per SPAI loop (`-mn`).
    #[arg(long, default_value_t = 5)]
    pub mn: usize,
    /// Loop budget (`-ns`); defaults to 20 for SPAI and 10 for PSAI.
    #[arg(long, visible_alias = "ns")]
    pub lmax: Option<usize>,
    /// PSAI dropping: `adaptive` or `fixed:<v>`.
    #[arg(long, default_value = "adaptive")]
    pub tol: String,
    /// Per-column least-squares workspace limit in bytes; accepts K, M, G suffixes.
    #[arg(long, default_value = "2G")]
    pub mem_guard: String,
}

impl MethodFlags {
    pub fn method(&self) -> Result<Method, CliError> {
        self.method_as(self.method)
    }

    pub fn method_as(&self, kind: MethodKind) -> Result<Method, CliError> {
        let guard = parse_bytes(&self.mem_guard)?;
        let ls = LsOptions { max_workspace_bytes: Some(usize::try_from(guard).unwrap_or(usize::MAX)) };
        let method = match kind {
            MethodKind::Spai => {
                let d = SpaiConfig::default();
                Method::Spai(SpaiConfig { delta: self.delta, mn: self.mn, l_max: self.lmax.unwrap_or(d.l_max), ls, ..d })
            }
            MethodKind::Psai => {
                let d = PsaiConfig::default();
                let tol_policy = parse_tol(&self.tol)?;
                Method::Psai(PsaiConfig { delta: self.delta, l_max: self.lmax.unwrap_or(d.l_max), tol_policy, ls })
            }
        };
        match &method {
            Method::Spai(c) => c.validate()?,
            Method::Psai(c) => c.validate()?,
        }
        Ok(method)
    }
}

#[derive(Debug, Clone, Args)]
pub struct SolverFlags {
    /// Target relative residual.
    #[arg(long, default_value_t = 1e-8)]
    pub eps: f64,
    #[arg(long, default_value_t = 500)]
    pub max_iter: usize,
    /// `fixed:<c>` or `posthoc`.
    #[arg(long, default_value = "fixed:1")]
    pub c_policy: String,
    /// `ones` (b = A * 1) or a vector file.
    #[arg(long, default_value = "ones")]
    pub rhs: String,
}

impl SolverFlags {
    pub fn driver_config(&self, method: Method, split: &SplitFlags) -> Result<DriverConfig, CliError> {
        let cfg = DriverConfig {
            epsilon: self.eps,
            c_policy: parse_c_policy(&self.c_policy)?,
            method,
            max_iter: self.max_iter,
            permute: split.permute(),
            split: split.options()?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    pub matrix: PathBuf,
    #[command(flatten)]
    pub split: SplitFlags,
    /// Report path (stdout if omitted).
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    pub matrix: PathBuf,
    #[command(flatten)]
    pub split: SplitFlags,
    /// Directory receiving a_tilde.mtx, u.mtx and split.json.
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct PrecondArgs {
    pub matrix: PathBuf,
    #[command(flatten)]
    pub method: MethodFlags,
    #[command(flatten)]
    pub split: SplitFlags,
    #[arg(long, value_enum, default_value_t = ModeArg::Split)]
    pub mode: ModeArg,
    /// Matrix Market file receiving M.
    #[arg(long)]
    pub output: PathBuf,
    /// Report path (stdout if omitted).
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    pub matrix: PathBuf,
    #[command(flatten)]
    pub method: MethodFlags,
    #[command(flatten)]
    pub split: SplitFlags,
    #[command(flatten)]
    pub solver: SolverFlags,
    #[arg(long, value_enum, default_value_t = ModeArg::Split)]
    pub mode: ModeArg,
    /// Reuse a preconditioner written by `precond` with the same mode and split flags.
    #[arg(long)]
    pub precond_file: Option<PathBuf>,
    /// Report path (stdout if omitted).
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Write the computed solution as a Matrix Market vector.
    #[arg(long)]
    pub solution: Option<PathBuf>,
    /// Leave x out of the JSON report.
    #[arg(long)]
    pub omit_x: bool,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    pub matrix: PathBuf,
    #[command(flatten)]
    pub method: MethodFlags,
    #[command(flatten)]
    pub split: SplitFlags,
    #[command(flatten)]
    pub solver: SolverFlags,
    /// Comma-separated subset of S-SPAI,N-SPAI,S-PSAI,N-PSAI.
    #[arg(long, value_delimiter = ',', default_value = "S-SPAI,N-SPAI,S-PSAI,N-PSAI")]
    pub variants: Vec<String>,
    #[arg(long, value_enum, default_value_t = FormatArg::Json)]
    pub format: FormatArg,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long, value_enum, default_value_t = KindArg::DominantRow)]
    pub kind: KindArg,
    #[arg(long)]
    pub n: usize,
    /// Off-diagonal fill probability.
    #[arg(long, default_value_t = 0.01)]
    pub density: f64,
    /// Number of fully dense columns.
    #[arg(long, default_value_t = 0)]
    pub planted: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub output: PathBuf,
}

/// Rewrites the reference package's single-dash flags.
pub fn normalize_argv(args: impl IntoIterator<Item = String>) -> Vec<String> {
    args.into_iter()
        .map(|a| {
            let (flag, rest) = match a.split_once('=') {
                Some((f, r)) => (f.to_string(), Some(r.to_string())),
                None => (a.clone(), None),
            };
            let long = match flag.as_str() {
                "-ep" => "--delta",
                "-mn" => "--mn",
                "-ns" => "--lmax",
                _ => return a,
            };
            match rest {
                Some(r) => format!("{long}={r}"),
                None => long.to_string(),
            }
        })
        .collect()
}

pub fn parse_bytes(s: &str) -> Result<u64, CliError> {
    let t = s.trim();
    let t = t.strip_suffix("iB").or_else(|| t.strip_suffix('B')).unwrap_or(t);
    let (num, mult) = match t.chars().last() {
        Some('K' | 'k') => (&t[..t.len() - 1], 1u64 << 10),
        Some('M' | 'm') => (&t[..t.len() - 1], 1 << 20),
        Some('G' | 'g') => (&t[..t.len() - 1], 1 << 30),
        _ => (t, 1),
    };
    num.trim()
        .parse::<u64>()
        .ok()
        .and_then(|v| v.checked_mul(mult))
        .ok_or_else(|| CliError::Usage(format!("cannot parse byte size `{s}`")))
}

pub fn parse_tol(s: &str) -> Result<TolPolicy, CliError> {
    if s == "adaptive" {
        return Ok(TolPolicy::Adaptive);
    }
    s.strip_prefix("fixed:")
        .and_then(|v| v.parse::<f64>().ok())
        .map(TolPolicy::Fixed)
        .ok_or_else(|| CliError::Usage(format!("--tol expects `adaptive` or `fixed:<v>`, got `{s}`")))
}

pub fn parse_c_policy(s: &str) -> Result<CPolicy, CliError> {
    if s == "posthoc" {
        return Ok(CPolicy::Posthoc);
    }
    s.strip_prefix("fixed:")
        .and_then(|v| v.parse::<f64>().ok())
        .map(CPolicy::Fixed)
        .ok_or_else(|| CliError::Usage(format!("--c-policy expects `fixed:<c>` or `posthoc`, got `{s}`")))
}
