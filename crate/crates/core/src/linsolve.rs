//! Solvers for the symmetric indefinite saddle-point systems.
//!
//! Three paths share one residual check on the full block system:
//! `Direct` factorizes the assembled block matrix (sparse LU), `Minres` runs
//! preconditioned MINRES on it, and `Block` exploits the block structure: a
//! discrete-gradient elimination for the Maxwell systems and MINRES with an
//! exactly factorized velocity block for the Stokes system.

use faer::linalg::solvers::SolveCore;
use faer::sparse::{SparseColMat, Triplet};
use faer::{Conj, Mat, Par, Side};
use log::debug;
use thiserror::Error;

use crate::assembly::SaddleSystem;
use crate::sparse::{axpy, dot, norm, CsrMatrix};

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("matrix is structurally or numerically singular ({0})")]
    Singular(String),
    #[error("residual {residual:e} above tolerance {tol:e} after {what}")]
    ResidualTooLarge { what: &'static str, residual: f64, tol: f64 },
    #[error("{what} did not converge in {iterations} iterations (residual {residual:e})")]
    NotConverged { what: &'static str, iterations: usize, residual: f64 },
    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    Direct,
    Minres,
    Block,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Precond {
    None,
    BlockDiag,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverConfig {
    pub method: Method,
    /// Relative residual tolerance.
    pub tol: f64,
    /// Iteration cap; `None` means `10 * n`.
    pub max_iter: Option<usize>,
    pub precond: Precond,
    /// Symmetric Gauss–Seidel sweeps in the block preconditioner.
    pub sgs_sweeps: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig { method: Method::Block, tol: 1e-10, max_iter: None, precond: Precond::BlockDiag, sgs_sweeps: 3 }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), SolveError> {
        if !(self.tol > 0.0 && self.tol < 1.0) {
            return Err(SolveError::InvalidConfig(format!("tolerance {} not in (0, 1)", self.tol)));
        }
        if self.max_iter == Some(0) {
            return Err(SolveError::InvalidConfig("max_iter must be at least 1".into()));
        }
        if self.sgs_sweeps == 0 {
            return Err(SolveError::InvalidConfig("sgs_sweeps must be at least 1".into()));
        }
        Ok(())
    }

    fn maxit(&self, n: usize) -> usize {
        self.max_iter.unwrap_or(10 * n.max(1))
    }
}

fn to_faer(a: &CsrMatrix) -> Result<SparseColMat<usize, f64>, SolveError> {
    let trip: Vec<Triplet<usize, usize, f64>> =
        a.triplets().into_iter().map(|(i, j, v)| Triplet::new(i, j, v)).collect();
    SparseColMat::try_new_from_triplets(a.nrows(), a.ncols(), &trip)
        .map_err(|e| SolveError::Singular(format!("{e:?}")))
}

fn solve_with<S: SolveCore<f64>>(s: &S, b: &[f64]) -> Vec<f64> {
    let mut m = Mat::from_fn(b.len(), 1, |i, _| b[i]);
    s.solve_in_place_with_conj(Conj::No, m.as_mut());
    (0..b.len()).map(|i| m[(i, 0)]).collect()
}

fn relative_residual(a: &CsrMatrix, x: &[f64], b: &[f64]) -> f64 {
    let nb = norm(b);
    let mut r = a.mul_vec(x);
    for (ri, bi) in r.iter_mut().zip(b) {
        *ri = bi - *ri;
    }
    if nb == 0.0 {
        norm(&r)
    } else {
        norm(&r) / nb
    }
}

/// Sparse Cholesky factor of an SPD matrix.
pub struct SpdFactor {
    n: usize,
    llt: faer::sparse::linalg::solvers::Llt<usize, f64>,
}

impl SpdFactor {
    pub fn new(a: &CsrMatrix) -> Result<Self, SolveError> {
        faer::set_global_parallelism(Par::Seq);
        let fa = to_faer(a)?;
        let llt = fa.sp_cholesky(Side::Lower).map_err(|e| SolveError::Singular(format!("{e:?}")))?;
        Ok(SpdFactor { n: a.nrows(), llt })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.n);
        if self.n == 0 {
            return Vec::new();
        }
        solve_with(&self.llt, b)
    }
}

/// Solves `A x = b` by sparse LU with partial pivoting plus up to three steps
/// of iterative refinement; the residual is always re-checked.
pub fn direct_solve(a: &CsrMatrix, b: &[f64]) -> Result<Vec<f64>, SolveError> {
    const TOL: f64 = 1e-10;
    if a.nrows() != a.ncols() || b.len() != a.nrows() {
        return Err(SolveError::DimensionMismatch(format!("{}x{} with rhs {}", a.nrows(), a.ncols(), b.len())));
    }
    let n = a.nrows();
    if n == 0 {
        return Ok(Vec::new());
    }
    if norm(b) == 0.0 {
        return Ok(vec![0.0; n]);
    }
    faer::set_global_parallelism(Par::Seq);
    let lu = to_faer(a)?.sp_lu().map_err(|e| SolveError::Singular(format!("{e:?}")))?;
    let mut x = solve_with(&lu, b);
    for _ in 0..3 {
        if x.iter().any(|v| !v.is_finite()) {
            return Err(SolveError::Singular("non-finite solution".into()));
        }
        if relative_residual(a, &x, b) <= TOL {
            return Ok(x);
        }
        let ax = a.mul_vec(&x);
        let r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
        let dx = solve_with(&lu, &r);
        axpy(&mut x, 1.0, &dx);
    }
    let res = relative_residual(a, &x, b);
    if res <= TOL && x.iter().all(|v| v.is_finite()) {
        Ok(x)
    } else {
        Err(SolveError::ResidualTooLarge { what: "sparse LU", residual: res, tol: TOL })
    }
}

/// A symmetric positive definite linear operator approximating an inverse.
pub trait Preconditioner {
    fn apply(&self, r: &[f64], z: &mut [f64]);
}

pub struct Identity;

impl Preconditioner for Identity {
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        z.copy_from_slice(r);
    }
}

impl Preconditioner for SpdFactor {
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        z.copy_from_slice(&self.solve(r));
    }
}

/// `k` symmetric Gauss–Seidel sweeps for `A z = r` from `z = 0`; a symmetric
/// positive definite operator whenever `A` is symmetric with positive diagonal.
pub struct SgsSweeps<'a> {
    a: &'a CsrMatrix,
    inv_diag: Vec<f64>,
    sweeps: usize,
}

impl<'a> SgsSweeps<'a> {
    pub fn new(a: &'a CsrMatrix, sweeps: usize) -> Result<Self, SolveError> {
        let inv_diag = a
            .diag()
            .iter()
            .enumerate()
            .map(|(i, &d)| {
                if d > 0.0 {
                    Ok(1.0 / d)
                } else {
                    Err(SolveError::Singular(format!("non-positive diagonal {d} at row {i}")))
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(SgsSweeps { a, inv_diag, sweeps })
    }

    fn relax(&self, i: usize, r: &[f64], z: &mut [f64]) {
        let (cols, vals) = self.a.row(i);
        let mut s = r[i];
        for (c, v) in cols.iter().zip(vals) {
            if *c != i {
                s -= v * z[*c];
            }
        }
        z[i] = s * self.inv_diag[i];
    }
}

impl Preconditioner for SgsSweeps<'_> {
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        z.iter_mut().for_each(|v| *v = 0.0);
        let n = r.len();
        for _ in 0..self.sweeps {
            for i in 0..n {
                self.relax(i, r, z);
            }
            for i in (0..n).rev() {
                self.relax(i, r, z);
            }
        }
    }
}

/// Exact solver for an SPD matrix that may be `I₃ ⊗ S` in interleaved
/// component order (`dof = 3 i + c`); then only `S` is factorized.
pub struct ComponentFactor {
    comps: usize,
    factor: SpdFactor,
}

impl ComponentFactor {
    pub fn new(a: &CsrMatrix) -> Result<Self, SolveError> {
        if let Some(s) = scalar_block(a, 3) {
            return Ok(ComponentFactor { comps: 3, factor: SpdFactor::new(&s)? });
        }
        Ok(ComponentFactor { comps: 1, factor: SpdFactor::new(a)? })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let k = self.comps;
        if k == 1 {
            return self.factor.solve(b);
        }
        let m = b.len() / k;
        let mut out = vec![0.0; b.len()];
        for c in 0..k {
            let bc: Vec<f64> = (0..m).map(|i| b[k * i + c]).collect();
            for (i, v) in self.factor.solve(&bc).into_iter().enumerate() {
                out[k * i + c] = v;
            }
        }
        out
    }
}

/// Returns `S` when `a = I_k ⊗ S` in interleaved order.
fn scalar_block(a: &CsrMatrix, k: usize) -> Option<CsrMatrix> {
    let n = a.nrows();
    if n == 0 || n % k != 0 {
        return None;
    }
    let m = n / k;
    let mut trip = Vec::new();
    for i in 0..m {
        let (c0, v0) = a.row(k * i);
        for c in 0..k {
            let (cc, vc) = a.row(k * i + c);
            if cc.len() != c0.len() {
                return None;
            }
            for (j, (&col, &v)) in cc.iter().zip(vc).enumerate() {
                if col % k != c || col / k != c0[j] / k || c0[j] % k != 0 || v != v0[j] {
                    return None;
                }
            }
        }
        for (&col, &v) in c0.iter().zip(v0) {
            trip.push((i, col / k, v));
        }
    }
    Some(CsrMatrix::from_triplets(m, m, &trip))
}

/// Velocity-block approximation inside [`BlockDiag`].
pub enum VelocityBlock<'a> {
    Sgs(SgsSweeps<'a>),
    Exact(ComponentFactor),
}

/// `diag(V, M⁻¹, s)`: approximate velocity solve, inverse lumped multiplier
/// mass, and a scalar for an optional bordering row.
pub struct BlockDiag<'a> {
    n1: usize,
    velocity: VelocityBlock<'a>,
    inv_mass: Vec<f64>,
    border: Option<f64>,
}

impl Preconditioner for BlockDiag<'_> {
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        let n1 = self.n1;
        let n2 = self.inv_mass.len();
        match &self.velocity {
            VelocityBlock::Sgs(s) => s.apply(&r[..n1], &mut z[..n1]),
            VelocityBlock::Exact(f) => z[..n1].copy_from_slice(&f.solve(&r[..n1])),
        }
        for i in 0..n2 {
            z[n1 + i] = r[n1 + i] * self.inv_mass[i];
        }
        if let Some(s) = self.border {
            z[n1 + n2] = r[n1 + n2] * s;
        }
    }
}

/// Block-diagonal preconditioner for a Stokes system: velocity block by SGS
/// sweeps (or exact factorization), pressure block scaled by cell volumes.
pub fn block_diag_precond<'a>(
    sys: &'a SaddleSystem,
    cell_volumes: &[f64],
    sweeps: usize,
    exact_velocity: bool,
) -> Result<BlockDiag<'a>, SolveError> {
    if cell_volumes.len() != sys.n_mult() {
        return Err(SolveError::DimensionMismatch(format!(
            "{} volumes for {} pressure dofs",
            cell_volumes.len(),
            sys.n_mult()
        )));
    }
    let velocity = if exact_velocity {
        VelocityBlock::Exact(ComponentFactor::new(&sys.a)?)
    } else {
        VelocityBlock::Sgs(SgsSweeps::new(&sys.a, sweeps)?)
    };
    let inv_mass = cell_volumes.iter().map(|v| 1.0 / v).collect();
    let border = sys.mean.as_ref().map(|c| {
        let s: f64 = c.iter().zip(cell_volumes).map(|(ci, v)| ci * ci / v).sum();
        1.0 / s
    });
    Ok(BlockDiag { n1: sys.n_primal(), velocity, inv_mass, border })
}

#[derive(Clone, Debug)]
pub struct MinresOutcome {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Preconditioned residual norm estimates, starting with the initial one.
    pub residual_history: Vec<f64>,
}

/// Preconditioned MINRES (Paige–Saunders recurrences). Stops when the
/// preconditioned residual estimate drops below `tol` relative to its initial
/// value; on hitting the iteration cap the last iterate is returned with
/// `converged = false`.
pub fn minres_solve(
    a: &CsrMatrix,
    b: &[f64],
    cfg: &SolverConfig,
    m: &dyn Preconditioner,
    x0: Option<&[f64]>,
) -> Result<MinresOutcome, SolveError> {
    cfg.validate()?;
    let n = b.len();
    if a.nrows() != n || a.ncols() != n {
        return Err(SolveError::DimensionMismatch(format!("{}x{} with rhs {n}", a.nrows(), a.ncols())));
    }
    let maxit = cfg.maxit(n);
    let mut x = x0.map(|v| v.to_vec()).unwrap_or_else(|| vec![0.0; n]);
    let mut r1 = b.to_vec();
    if x0.is_some() {
        let ax = a.mul_vec(&x);
        axpy(&mut r1, -1.0, &ax);
    }
    let mut y = vec![0.0; n];
    m.apply(&r1, &mut y);
    let beta1sq = dot(&r1, &y);
    if beta1sq < 0.0 {
        return Err(SolveError::InvalidConfig("preconditioner is not positive definite".into()));
    }
    let beta1 = beta1sq.sqrt();
    let mut history = vec![beta1];
    if beta1 == 0.0 {
        return Ok(MinresOutcome { x, iterations: 0, converged: true, residual_history: history });
    }
    let mut r2 = r1.clone();
    let (mut oldb, mut beta) = (0.0, beta1);
    let (mut dbar, mut epsln) = (0.0, 0.0);
    let mut phibar = beta1;
    let (mut cs, mut sn) = (-1.0f64, 0.0f64);
    let mut w = vec![0.0; n];
    let mut w2 = vec![0.0; n];
    let mut v = vec![0.0; n];
    let mut itn = 0;
    let mut converged = false;
    while itn < maxit {
        itn += 1;
        let s = 1.0 / beta;
        for i in 0..n {
            v[i] = s * y[i];
        }
        a.mul_vec_into(&v, &mut y);
        if itn >= 2 {
            axpy(&mut y, -beta / oldb, &r1);
        }
        let alfa = dot(&v, &y);
        axpy(&mut y, -alfa / beta, &r2);
        std::mem::swap(&mut r1, &mut r2);
        r2.copy_from_slice(&y);
        m.apply(&r2, &mut y);
        oldb = beta;
        let bsq = dot(&r2, &y);
        if bsq < 0.0 {
            return Err(SolveError::InvalidConfig("preconditioner is not positive definite".into()));
        }
        beta = bsq.sqrt();
        let oldeps = epsln;
        let delta = cs * dbar + sn * alfa;
        let gbar = sn * dbar - cs * alfa;
        epsln = sn * beta;
        dbar = -cs * beta;
        let gamma = gbar.hypot(beta).max(f64::EPSILON);
        cs = gbar / gamma;
        sn = beta / gamma;
        let phi = cs * phibar;
        phibar *= sn;
        let denom = 1.0 / gamma;
        for i in 0..n {
            let w1 = w2[i];
            w2[i] = w[i];
            w[i] = (v[i] - oldeps * w1 - delta * w2[i]) * denom;
            x[i] += phi * w[i];
        }
        history.push(phibar);
        if phibar <= cfg.tol * beta1 {
            converged = true;
            break;
        }
        if beta == 0.0 {
            converged = true;
            break;
        }
    }
    Ok(MinresOutcome { x, iterations: itn, converged, residual_history: history })
}

#[derive(Clone, Debug)]
pub struct PcgOutcome {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub relative_residual: f64,
}

/// Preconditioned conjugate gradients on a symmetric positive semidefinite
/// system with consistent right-hand side; stops on the true relative residual.
pub fn pcg(a: &CsrMatrix, b: &[f64], m: &dyn Preconditioner, tol: f64, maxit: usize, x0: Option<&[f64]>) -> PcgOutcome {
    let n = b.len();
    let nb = norm(b);
    let mut x = x0.map(|v| v.to_vec()).unwrap_or_else(|| vec![0.0; n]);
    if nb == 0.0 {
        return PcgOutcome { x: vec![0.0; n], iterations: 0, converged: true, relative_residual: 0.0 };
    }
    let mut r = b.to_vec();
    if x0.is_some() {
        let ax = a.mul_vec(&x);
        axpy(&mut r, -1.0, &ax);
    }
    let mut z = vec![0.0; n];
    m.apply(&r, &mut z);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut q = vec![0.0; n];
    let mut it = 0;
    let mut rel = norm(&r) / nb;
    while rel > tol && it < maxit {
        it += 1;
        a.mul_vec_into(&p, &mut q);
        let pq = dot(&p, &q);
        if pq <= 0.0 {
            break;
        }
        let alpha = rz / pq;
        axpy(&mut x, alpha, &p);
        axpy(&mut r, -alpha, &q);
        rel = norm(&r) / nb;
        if rel <= tol {
            break;
        }
        m.apply(&r, &mut z);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    // recompute the true residual to guard against drift
    let ax = a.mul_vec(&x);
    let mut rr = b.to_vec();
    axpy(&mut rr, -1.0, &ax);
    let rel = norm(&rr) / nb;
    PcgOutcome { x, iterations: it, converged: rel <= tol, relative_residual: rel }
}

/// Block structure the `Block` method (and the `Minres` preconditioner)
/// relies on.
pub enum Structure<'a> {
    /// Edge-element Maxwell system: `d` embeds the (reduced) multiplier space
    /// gradients into the (reduced) edge space, so `A d = 0` and `B = dᵀ M`.
    Maxwell { d: &'a CsrMatrix },
    /// Stokes system with the given (reduced) pressure cell volumes.
    Stokes { cell_volumes: &'a [f64] },
}

#[derive(Clone, Debug)]
pub struct SolveReport {
    pub solution: Vec<f64>,
    pub iterations: usize,
    pub relative_residual: f64,
}

/// Solves a reduced saddle system with the configured method and verifies the
/// relative residual of the full block system against `cfg.tol`.
pub fn solve_saddle(sys: &SaddleSystem, structure: &Structure, cfg: &SolverConfig) -> Result<SolveReport, SolveError> {
    cfg.validate()?;
    let k = sys.matrix();
    let rhs = sys.rhs();
    if rhs.is_empty() {
        return Ok(SolveReport { solution: Vec::new(), iterations: 0, relative_residual: 0.0 });
    }
    if norm(&rhs) == 0.0 {
        return Ok(SolveReport { solution: vec![0.0; rhs.len()], iterations: 0, relative_residual: 0.0 });
    }
    let (solution, iterations) = match cfg.method {
        Method::Direct => (direct_solve(&k, &rhs)?, 0),
        Method::Minres => minres_saddle(sys, &k, &rhs, structure, cfg)?,
        Method::Block => match structure {
            Structure::Maxwell { d } => maxwell_block(sys, d, cfg)?,
            Structure::Stokes { cell_volumes } => {
                let p = block_diag_precond(sys, cell_volumes, cfg.sgs_sweeps, true)?;
                minres_restarted(&k, &rhs, cfg, &p)?
            }
        },
    };
    let res = relative_residual(&k, &solution, &rhs);
    debug!("saddle solve {:?}: n = {}, iterations = {iterations}, residual = {res:e}", cfg.method, rhs.len());
    if !(res <= cfg.tol) {
        return Err(SolveError::ResidualTooLarge { what: "saddle solve", residual: res, tol: cfg.tol });
    }
    Ok(SolveReport { solution, iterations, relative_residual: res })
}

/// MINRES restarted from its last iterate until the true residual meets the
/// tolerance.
fn minres_restarted(k: &CsrMatrix, rhs: &[f64], cfg: &SolverConfig, p: &dyn Preconditioner) -> Result<(Vec<f64>, usize), SolveError> {
    let mut x: Option<Vec<f64>> = None;
    let mut total = 0;
    let nb = norm(rhs);
    for _ in 0..8 {
        let inner = SolverConfig { tol: cfg.tol * 0.1, ..*cfg };
        let out = minres_solve(k, rhs, &inner, p, x.as_deref())?;
        total += out.iterations;
        let res = relative_residual(k, &out.x, rhs);
        x = Some(out.x);
        if res <= cfg.tol {
            return Ok((x.unwrap(), total));
        }
        if !out.converged {
            return Err(SolveError::NotConverged { what: "MINRES", iterations: total, residual: res * nb });
        }
    }
    let res = relative_residual(k, x.as_ref().unwrap(), rhs);
    Err(SolveError::NotConverged { what: "MINRES", iterations: total, residual: res })
}

fn minres_saddle(
    sys: &SaddleSystem,
    k: &CsrMatrix,
    rhs: &[f64],
    structure: &Structure,
    cfg: &SolverConfig,
) -> Result<(Vec<f64>, usize), SolveError> {
    match cfg.precond {
        Precond::None => minres_restarted(k, rhs, cfg, &Identity),
        Precond::BlockDiag => match structure {
            Structure::Stokes { cell_volumes } => {
                let p = block_diag_precond(sys, cell_volumes, cfg.sgs_sweeps, false)?;
                minres_restarted(k, rhs, cfg, &p)
            }
            Structure::Maxwell { d } => {
                // A alone is singular on gradients; adding a scaled BᵀB makes
                // the edge block definite without an edge mass matrix.
                let l = laplacian_from(sys, d);
                let shift = sys.b.transpose().matmul(&sys.b);
                let scale = a_scale(&sys.a) / a_scale(&shift).max(f64::MIN_POSITIVE);
                let a_reg = sys.a.add_scaled(1.0, &shift, scale);
                let p = MaxwellBlockDiag {
                    n1: sys.n_primal(),
                    first: SgsSweeps::new(&a_reg, cfg.sgs_sweeps)?,
                    second: SgsSweeps::new(&l, cfg.sgs_sweeps)?,
                };
                minres_restarted(k, rhs, cfg, &p)
            }
        },
    }
}

fn a_scale(a: &CsrMatrix) -> f64 {
    let d = a.diag();
    d.iter().sum::<f64>() / d.len().max(1) as f64
}

struct MaxwellBlockDiag<'a> {
    n1: usize,
    first: SgsSweeps<'a>,
    second: SgsSweeps<'a>,
}

impl Preconditioner for MaxwellBlockDiag<'_> {
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        let n1 = self.n1;
        let (z1, z2) = z.split_at_mut(n1);
        self.first.apply(&r[..n1], z1);
        self.second.apply(&r[n1..], z2);
    }
}

/// `L = B d`, symmetrized; the Lagrange stiffness matrix of the multiplier
/// space.
fn laplacian_from(sys: &SaddleSystem, d: &CsrMatrix) -> CsrMatrix {
    let l = sys.b.matmul(d);
    l.add_scaled(0.5, &l.transpose(), 0.5)
}

/// Exact solve of a Maxwell saddle system using `A d = 0` and `B = dᵀ M`:
/// the multiplier comes from `L s = dᵀ f`, the divergence-free part from a
/// consistent singular PCG solve, and the constraint is restored by a gradient
/// correction.
fn maxwell_block(sys: &SaddleSystem, d: &CsrMatrix, cfg: &SolverConfig) -> Result<(Vec<f64>, usize), SolveError> {
    let n = sys.n_primal();
    let m = sys.n_mult();
    if d.nrows() != n || d.ncols() != m {
        return Err(SolveError::DimensionMismatch(format!("gradient map {}x{} for {n}+{m}", d.nrows(), d.ncols())));
    }
    let rhs_norm = (norm(&sys.f).powi(2) + norm(&sys.g).powi(2)).sqrt();
    let (s, lfac) = if m > 0 {
        let l = laplacian_from(sys, d);
        let lf = SpdFactor::new(&l)?;
        (lf.solve(&d.tr_mul_vec(&sys.f)), Some(lf))
    } else {
        (Vec::new(), None)
    };
    let mut ft = sys.f.clone();
    if m > 0 {
        let bts = sys.b.tr_mul_vec(&s);
        axpy(&mut ft, -1.0, &bts);
    }
    let nft = norm(&ft);
    let mut iterations = 0;
    let mut x = vec![0.0; n];
    if nft > 0.0 {
        let tol = (0.05 * cfg.tol * rhs_norm / nft).min(0.1);
        let sgs = SgsSweeps::new(&sys.a, 1)?;
        let out = pcg(&sys.a, &ft, &sgs, tol, cfg.maxit(n), None);
        iterations = out.iterations;
        if !out.converged {
            return Err(SolveError::NotConverged {
                what: "singular PCG",
                iterations: out.iterations,
                residual: out.relative_residual,
            });
        }
        x = out.x;
    }
    if let Some(lf) = lfac {
        let mut rg = sys.g.clone();
        let bx = sys.b.mul_vec(&x);
        axpy(&mut rg, -1.0, &bx);
        let c = lf.solve(&rg);
        let dc = d.mul_vec(&c);
        axpy(&mut x, 1.0, &dc);
    }
    let mut sol = x;
    sol.extend_from_slice(&s);
    Ok((sol, iterations))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_by_two_saddle() {
        let a = CsrMatrix::from_triplets(2, 2, &[(0, 0, 2.0), (0, 1, 1.0), (1, 0, 1.0)]);
        let x = direct_solve(&a, &[1.0, 1.0]).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-14 && (x[1] + 1.0).abs() < 1e-14);
    }

    #[test]
    fn identity_system() {
        let a = CsrMatrix::identity(4);
        let b = [1.0, -2.0, 3.0, 0.5];
        assert_eq!(direct_solve(&a, &b).unwrap(), b.to_vec());
    }

    #[test]
    fn singular_is_reported() {
        let a = CsrMatrix::from_triplets(2, 2, &[(0, 0, 1.0), (0, 1, 1.0), (1, 0, 1.0), (1, 1, 1.0)]);
        assert!(direct_solve(&a, &[1.0, 0.0]).is_err());
    }

    #[test]
    fn minres_zero_rhs() {
        let a = CsrMatrix::identity(3);
        let out = minres_solve(&a, &[0.0; 3], &SolverConfig::default(), &Identity, None).unwrap();
        assert_eq!(out.iterations, 0);
        assert_eq!(out.x, vec![0.0; 3]);
    }
}
