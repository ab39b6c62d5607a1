//! Command-line flags, the optional TOML file, and the merged experiment
//! configuration. Flags win over file entries.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use quadcurl::afem::{MarkParams, Strategy};
use quadcurl::cases::CaseId;
use quadcurl::linsolve::{Method, SolverConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CaseArg {
    SmoothCube,
    #[value(name = "lshape-8-3")]
    #[serde(rename = "lshape-8-3")]
    Lshape83,
    #[value(name = "lshape-19-6")]
    #[serde(rename = "lshape-19-6")]
    Lshape196,
}

impl From<CaseArg> for CaseId {
    fn from(c: CaseArg) -> Self {
        match c {
            CaseArg::SmoothCube => CaseId::SmoothCube,
            CaseArg::Lshape83 => CaseId::LShape83,
            CaseArg::Lshape196 => CaseId::LShape196,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Uniform,
    Afem,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MarkingArg {
    Separate,
    SingleEta,
    SingleWeighted,
}

impl From<MarkingArg> for Strategy {
    fn from(m: MarkingArg) -> Self {
        match m {
            MarkingArg::Separate => Strategy::Separate,
            MarkingArg::SingleEta => Strategy::SingleEta,
            MarkingArg::SingleWeighted => Strategy::SingleWeighted,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverArg {
    Direct,
    Minres,
    /// Exact subspace solves inside Krylov iterations; the default.
    Block,
}

impl From<SolverArg> for Method {
    fn from(s: SolverArg) -> Self {
        match s {
            SolverArg::Direct => Method::Direct,
            SolverArg::Minres => Method::Minres,
            SolverArg::Block => Method::Block,
        }
    }
}

/// Runs uniform convergence studies and adaptive loops for the quad-curl
/// model problems and writes CSV tables.
#[derive(Debug, Default, Parser)]
#[command(name = "quadcurl", version, args_conflicts_with_subcommands = true)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Option<Command>,
    /// Model problem.
    #[arg(long, value_enum)]
    pub case: Option<CaseArg>,
    #[arg(long, value_enum)]
    pub mode: Option<Mode>,
    /// Number of uniform levels.
    #[arg(long)]
    pub levels: Option<usize>,
    /// Coarsest mesh resolution: cube cells per side, or inverse cell size of
    /// the L-shape.
    #[arg(long)]
    pub n0: Option<usize>,
    /// Adaptive iteration cap.
    #[arg(long)]
    pub max_iters: Option<usize>,
    /// Adaptive stopping tolerance on both estimators.
    #[arg(long)]
    pub tol: Option<f64>,
    /// Stop refining before the w and φ dof count exceeds this.
    #[arg(long)]
    pub max_dofs: Option<usize>,
    #[arg(long, value_enum)]
    pub marking: Option<MarkingArg>,
    /// Bulk parameter of the single markings.
    #[arg(long)]
    pub theta: Option<f64>,
    #[arg(long)]
    pub theta1: Option<f64>,
    #[arg(long)]
    pub theta2: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long, value_enum)]
    pub solver: Option<SolverArg>,
    /// Relative residual tolerance of the linear solver.
    #[arg(long)]
    pub solver_tol: Option<f64>,
    /// Quadrature order for data integrals.
    #[arg(long)]
    pub qorder: Option<usize>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write VTU files.
    #[arg(long)]
    pub vtu: bool,
    /// TOML file with the same keys as the long flags.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve a symmetric system read from Matrix Market files.
    Solve(SolveArgs),
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    /// Coordinate-format matrix.
    #[arg(long)]
    pub matrix: PathBuf,
    /// Array-format right-hand side; all ones when omitted.
    #[arg(long)]
    pub rhs: Option<PathBuf>,
    /// `direct` or `minres` (unpreconditioned).
    #[arg(long, value_enum, default_value = "direct")]
    pub solver: SolverArg,
    #[arg(long, default_value_t = 1e-10)]
    pub tol: f64,
    /// Array-format output file for the solution.
    #[arg(long)]
    pub out: PathBuf,
}

/// Mirror of [`Cli`] for the configuration file.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct FileConfig {
    pub case: Option<CaseArg>,
    pub mode: Option<Mode>,
    pub levels: Option<usize>,
    pub n0: Option<usize>,
    pub max_iters: Option<usize>,
    pub tol: Option<f64>,
    pub max_dofs: Option<usize>,
    pub marking: Option<MarkingArg>,
    pub theta: Option<f64>,
    pub theta1: Option<f64>,
    pub theta2: Option<f64>,
    pub beta: Option<f64>,
    pub solver: Option<SolverArg>,
    pub solver_tol: Option<f64>,
    pub qorder: Option<usize>,
    pub out: Option<PathBuf>,
    pub vtu: Option<bool>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }
}

#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub case: CaseId,
    pub mode: Mode,
    pub levels: usize,
    pub n0: usize,
    pub max_iters: usize,
    pub tol: f64,
    pub max_dofs: Option<usize>,
    pub params: MarkParams,
    pub solver: SolverConfig,
    pub qorder: usize,
    pub out: PathBuf,
    pub vtu: bool,
}

impl ExperimentConfig {
    pub fn from_cli(cli: &Cli) -> Result<Self> {
        let file = match &cli.config {
            Some(p) => FileConfig::load(p)?,
            None => FileConfig::default(),
        };
        Self::merge(cli, file)
    }

    pub fn merge(cli: &Cli, file: FileConfig) -> Result<Self> {
        let case: CaseId = cli.case.or(file.case).unwrap_or(CaseArg::SmoothCube).into();
        let default_params = MarkParams::default();
        let mut solver = SolverConfig::default();
        if let Some(s) = cli.solver.or(file.solver) {
            solver.method = s.into();
        }
        if let Some(t) = cli.solver_tol.or(file.solver_tol) {
            solver.tol = t;
        }
        let cfg = ExperimentConfig {
            case,
            mode: cli.mode.or(file.mode).unwrap_or(Mode::Uniform),
            levels: cli.levels.or(file.levels).unwrap_or(4),
            n0: cli.n0.or(file.n0).unwrap_or(match case {
                CaseId::SmoothCube => 3,
                _ => 2,
            }),
            max_iters: cli.max_iters.or(file.max_iters).unwrap_or(20),
            tol: cli.tol.or(file.tol).unwrap_or(1e-8),
            max_dofs: cli.max_dofs.or(file.max_dofs),
            params: MarkParams {
                strategy: cli.marking.or(file.marking).map(Strategy::from).unwrap_or(default_params.strategy),
                theta1: cli.theta1.or(file.theta1).unwrap_or(default_params.theta1),
                theta2: cli.theta2.or(file.theta2).unwrap_or(default_params.theta2),
                theta: cli.theta.or(file.theta).unwrap_or(default_params.theta),
                beta: cli.beta.or(file.beta).unwrap_or(default_params.beta),
            },
            solver,
            qorder: cli.qorder.or(file.qorder).unwrap_or(4),
            out: cli.out.clone().or(file.out).unwrap_or_else(|| PathBuf::from("out")),
            vtu: cli.vtu || file.vtu.unwrap_or(false),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.mode == Mode::Uniform && self.levels < 2 {
            bail!("--levels must be at least 2 to compute orders, got {}", self.levels);
        }
        if self.n0 == 0 {
            bail!("--n0 must be positive");
        }
        if self.max_iters == 0 {
            bail!("--max-iters must be positive");
        }
        if !(self.tol >= 0.0 && self.tol.is_finite()) {
            bail!("--tol must be a non-negative number, got {}", self.tol);
        }
        let p = &self.params;
        for (name, v) in [("theta", p.theta), ("theta1", p.theta1), ("theta2", p.theta2)] {
            if !(v > 0.0 && v < 1.0) {
                bail!("--{name} must lie in (0, 1), got {v}");
            }
        }
        if !(p.beta > 0.0 && p.beta.is_finite()) {
            bail!("--beta must be positive, got {}", p.beta);
        }
        self.solver.validate()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_win_over_file() {
        let cli = Cli::parse_from(["quadcurl", "--levels", "3", "--theta1", "0.6"]);
        let file: FileConfig = toml::from_str("levels = 5\ncase = \"lshape-8-3\"\ntheta2 = 0.4\n").unwrap();
        let cfg = ExperimentConfig::merge(&cli, file).unwrap();
        assert_eq!(cfg.levels, 3);
        assert_eq!(cfg.case, CaseId::LShape83);
        assert_eq!(cfg.params.theta1, 0.6);
        assert_eq!(cfg.params.theta2, 0.4);
        assert_eq!(cfg.n0, 2);
    }

    #[test]
    fn single_level_is_rejected() {
        let cli = Cli::parse_from(["quadcurl", "--levels", "1"]);
        assert!(ExperimentConfig::merge(&cli, FileConfig::default()).is_err());
    }

    #[test]
    fn theta_of_one_is_rejected() {
        let cli = Cli::parse_from(["quadcurl", "--theta", "1.0"]);
        assert!(ExperimentConfig::merge(&cli, FileConfig::default()).is_err());
    }

    #[test]
    fn unknown_file_key_is_rejected() {
        assert!(toml::from_str::<FileConfig>("levles = 3\n").is_err());
    }
}
