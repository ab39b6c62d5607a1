//! Standalone solves of Matrix Market systems.

use anyhow::{bail, Result};

use quadcurl::assembly::{read_matrix_market, read_vector_market, write_vector_market};
use quadcurl::linsolve::{direct_solve, minres_solve, Identity, SolverConfig};
use quadcurl::sparse::norm;

use crate::config::{SolveArgs, SolverArg};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolveSummary {
    pub n: usize,
    pub iterations: usize,
    pub relative_residual: f64,
}

pub fn run_solve(args: &SolveArgs) -> Result<SolveSummary> {
    let a = read_matrix_market(&args.matrix)?;
    let b = match &args.rhs {
        Some(p) => read_vector_market(p)?,
        None => vec![1.0; a.nrows()],
    };
    if a.nrows() != a.ncols() || b.len() != a.nrows() {
        bail!("system is {}x{} with a right-hand side of length {}", a.nrows(), a.ncols(), b.len());
    }
    let cfg = SolverConfig { tol: args.tol, ..SolverConfig::default() };
    cfg.validate()?;
    let (x, iterations) = match args.solver {
        SolverArg::Direct => (direct_solve(&a, &b)?, 0),
        SolverArg::Minres => {
            let out = minres_solve(&a, &b, &cfg, &Identity, None)?;
            if !out.converged {
                bail!("MINRES stopped after {} iterations without reaching {}", out.iterations, args.tol);
            }
            (out.x, out.iterations)
        }
        SolverArg::Block => bail!("the block solver needs saddle-point structure; use direct or minres"),
    };
    let ax = a.mul_vec(&x);
    let r: Vec<f64> = ax.iter().zip(&b).map(|(p, q)| p - q).collect();
    let bn = norm(&b);
    let relative_residual = if bn > 0.0 { norm(&r) / bn } else { norm(&r) };
    write_vector_market(&x, &args.out)?;
    Ok(SolveSummary { n: b.len(), iterations, relative_residual })
}
