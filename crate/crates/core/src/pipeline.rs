//! The three-step decoupled solve: Maxwell for `w`, Stokes for `φ`, Maxwell
//! for `u`, followed by error norms against a manufactured solution.

use std::sync::Arc;

use log::debug;
use thiserror::Error;

use crate::assembly::{
    assemble_bilinear, assemble_load, build_saddle, AssemblyError, FormKind, Load, TestOp,
};
use crate::cases::ManufacturedCase;
use crate::fespace::{build_dofmap, essential_bc, gradient_embedding, interpolate, BcData, DofMap, FeFunction, Field, SpaceKind};
use crate::linsolve::{solve_saddle, SolveError, SolverConfig, Structure};
use crate::mesh::{MeshError, TetMesh};
use crate::quadrature::{quadrature, Entity};
use crate::vec3::{frob2, norm2, sub};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Assembly(#[from] AssemblyError),
    #[error("{step}: {source}")]
    Solve { step: &'static str, source: SolveError },
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error("case has no exact solution")]
    NoExactSolution,
    #[error("invalid configuration: {0}")]
    Config(String),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PipelineConfig {
    pub solver: SolverConfig,
    /// Quadrature order for loads built from case data.
    pub qorder: usize,
    /// Quadrature order for error norms.
    pub error_qorder: usize,
    /// Scaling of the pressure mean-value row.
    pub mean_scale: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig { solver: SolverConfig::default(), qorder: 4, error_qorder: 6, mean_scale: 1.0 }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        self.solver.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        for q in [self.qorder, self.error_qorder] {
            quadrature(Entity::Tet, q).map_err(|e| PipelineError::Config(e.to_string()))?;
        }
        if !(self.mean_scale.is_finite() && self.mean_scale > 0.0) {
            return Err(PipelineError::Config(format!("mean_scale {} must be positive", self.mean_scale)));
        }
        Ok(())
    }
}

/// Primal field and Lagrange multiplier of one saddle solve.
#[derive(Clone, Debug)]
pub struct StepSolution {
    pub primal: FeFunction,
    pub multiplier: FeFunction,
    pub iterations: usize,
}

#[derive(Clone, Debug)]
pub struct QuadCurlSolution {
    pub w: FeFunction,
    pub sigma: FeFunction,
    pub phi: FeFunction,
    pub p: FeFunction,
    pub u: FeFunction,
    pub xi: FeFunction,
    pub iterations: [usize; 3],
}

fn free_index_map(n: usize, free: &[usize]) -> Vec<Option<usize>> {
    let mut map = vec![None; n];
    for (k, &i) in free.iter().enumerate() {
        map[i] = Some(k);
    }
    map
}

/// Solves `(curl x, curl v) + (v, ∇y) = (F, v)`, `(x, ∇z) = G` on an edge
/// space with homogeneous Lagrange multiplier boundary values.
fn solve_maxwell(
    mesh: &TetMesh,
    edge: Arc<DofMap>,
    lag: Arc<DofMap>,
    f: &[f64],
    g: &[f64],
    edge_bc: &BcData,
    cfg: &PipelineConfig,
    step: &'static str,
) -> Result<StepSolution, PipelineError> {
    let a = assemble_bilinear(FormKind::CurlCurl, &edge, &edge, mesh, 1)?;
    let gc = assemble_bilinear(FormKind::GradCoupling, &lag, &edge, mesh, 2)?;
    let b = gc.transpose();
    let lag_bc = essential_bc(&lag, mesh, Field::Zero);
    let sys = build_saddle(&a, &b, f, g, edge_bc, &lag_bc, None)?;
    let emb = gradient_embedding(&lag, &edge, mesh);
    let r = &sys.recovery;
    let d = emb.submatrix(
        &free_index_map(edge.ndofs(), &r.primal_free),
        r.primal_free.len(),
        &free_index_map(lag.ndofs(), &r.mult_free),
        r.mult_free.len(),
    );
    let rep = solve_saddle(&sys, &Structure::Maxwell { d: &d }, &cfg.solver)
        .map_err(|source| PipelineError::Solve { step, source })?;
    debug!("{step}: {} unknowns, {} iterations", sys.dim(), rep.iterations);
    let (x, y) = sys.recover(&rep.solution);
    Ok(StepSolution {
        primal: FeFunction::new(edge, x),
        multiplier: FeFunction::new(lag, y),
        iterations: rep.iterations,
    })
}

/// Step 1: `(curl w, curl v) + (v, ∇σ) = (f, v)`, `(w, ∇τ) = 0`, homogeneous
/// boundary conditions on both fields.
pub fn solve_step1(mesh: &TetMesh, case: &ManufacturedCase, cfg: &PipelineConfig) -> Result<StepSolution, PipelineError> {
    let nd0 = Arc::new(build_dofmap(SpaceKind::ND0, mesh));
    let p1 = Arc::new(build_dofmap(SpaceKind::P1, mesh));
    let fcase = case.f.clone();
    let fv = assemble_load(&nd0, Load::Vector(&|x| fcase(x)), TestOp::Value, mesh, cfg.qorder)?;
    let g = vec![0.0; p1.ndofs()];
    let bc = essential_bc(&nd0, mesh, Field::Zero);
    solve_maxwell(mesh, nd0, p1, &fv, &g, &bc, cfg, "step 1")
}

/// Crouzeix–Raviart boundary values for `φ`: face means of the exact trace,
/// shifted by a constant normal component so the net boundary flux vanishes
/// (the divergence constraint is otherwise incompatible by quadrature error).
pub fn cr_boundary_data(cr: &DofMap, mesh: &TetMesh, case: &ManufacturedCase) -> BcData {
    let exact = match (&case.exact, case.nonhomogeneous) {
        (Some(e), true) => e,
        _ => return essential_bc(cr, mesh, Field::Zero),
    };
    let phi = exact.curl_u.clone();
    let mut bc = essential_bc(cr, mesh, Field::Vector(&|x| phi(x)));
    let geo = mesh.geometry();
    let mut flux = 0.0;
    let mut area = 0.0;
    for (k, &d) in bc.dofs.iter().enumerate() {
        let f = d / 3;
        flux += geo.face_area[f] * bc.values[k] * geo.face_normal[f][d % 3];
        if d % 3 == 0 {
            area += geo.face_area[f];
        }
    }
    if area > 0.0 {
        let shift = flux / area;
        for (k, &d) in bc.dofs.iter().enumerate() {
            let n = geo.face_normal[d / 3];
            bc.values[k] -= shift * n[d % 3];
        }
    }
    bc
}

/// Step 2: Crouzeix–Raviart Stokes problem
/// `(∇φ, ∇ψ) + (div ψ, p) = (curl w, ψ)`, `(div φ, q) = 0`, `(p, 1) = 0`.
pub fn solve_step2(mesh: &TetMesh, w: &FeFunction, case: &ManufacturedCase, cfg: &PipelineConfig) -> Result<StepSolution, PipelineError> {
    let cr = Arc::new(build_dofmap(SpaceKind::CRvec, mesh));
    let p0 = Arc::new(build_dofmap(SpaceKind::P0, mesh));
    let a = assemble_bilinear(FormKind::VecLaplaceCR, &cr, &cr, mesh, 1)?;
    let b = assemble_bilinear(FormKind::DivCRP0, &cr, &p0, mesh, 1)?;
    let f = assemble_load(&cr, Load::FeCurl(w), TestOp::Value, mesh, 2)?;
    let g = vec![0.0; p0.ndofs()];
    let bc = cr_boundary_data(&cr, mesh, case);
    let mean_row = assemble_bilinear(FormKind::MeanConstraint, &p0, &p0, mesh, 1)?;
    let c: Vec<f64> = (0..p0.ndofs()).map(|j| mean_row.get(0, j)).collect();
    let sys = build_saddle(&a, &b, &f, &g, &bc, &BcData::default(), Some((&c, cfg.mean_scale)))?;
    let vols = &mesh.geometry().tet_volume;
    let cell_volumes: Vec<f64> = (0..p0.ndofs()).map(|t| vols[t]).collect();
    let rep = solve_saddle(&sys, &Structure::Stokes { cell_volumes: &cell_volumes }, &cfg.solver)
        .map_err(|source| PipelineError::Solve { step: "step 2", source })?;
    debug!("step 2: {} unknowns, {} iterations", sys.dim(), rep.iterations);
    let (x, y) = sys.recover(&rep.solution);
    Ok(StepSolution { primal: FeFunction::new(cr, x), multiplier: FeFunction::new(p0, y), iterations: rep.iterations })
}

/// Step 3: `(curl u, curl χ) + (χ, ∇ξ) = (φ_h, curl χ)`,
/// `(u, ∇ζ) = −(g, ζ)` with `g = div u`.
pub fn solve_step3(mesh: &TetMesh, phi: &FeFunction, case: &ManufacturedCase, cfg: &PipelineConfig) -> Result<StepSolution, PipelineError> {
    let nd1 = Arc::new(build_dofmap(SpaceKind::ND1, mesh));
    let p2 = Arc::new(build_dofmap(SpaceKind::P2, mesh));
    let f = assemble_load(&nd1, Load::FeValue(phi), TestOp::Curl, mesh, 2)?;
    let g = match &case.g {
        Some(gf) => {
            let gf = gf.clone();
            let mut v = assemble_load(&p2, Load::Scalar(&|x| gf(x)), TestOp::Value, mesh, cfg.qorder)?;
            v.iter_mut().for_each(|x| *x = -*x);
            v
        }
        None => vec![0.0; p2.ndofs()],
    };
    let bc = match (&case.exact, case.nonhomogeneous) {
        (Some(e), true) => {
            let u = e.u.clone();
            essential_bc(&nd1, mesh, Field::Vector(&|x| u(x)))
        }
        _ => essential_bc(&nd1, mesh, Field::Zero),
    };
    solve_maxwell(mesh, nd1, p2, &f, &g, &bc, cfg, "step 3")
}

/// Steps 1 and 2 only (the adaptive loop's SOLVE).
pub fn solve_steps12(
    mesh: &TetMesh,
    case: &ManufacturedCase,
    cfg: &PipelineConfig,
) -> Result<(StepSolution, StepSolution), PipelineError> {
    let s1 = solve_step1(mesh, case, cfg)?;
    let s2 = solve_step2(mesh, &s1.primal, case, cfg)?;
    Ok((s1, s2))
}

pub fn solve_all(mesh: &TetMesh, case: &ManufacturedCase, cfg: &PipelineConfig) -> Result<QuadCurlSolution, PipelineError> {
    cfg.validate()?;
    let (s1, s2) = solve_steps12(mesh, case, cfg)?;
    let s3 = solve_step3(mesh, &s2.primal, case, cfg)?;
    Ok(QuadCurlSolution {
        iterations: [s1.iterations, s2.iterations, s3.iterations],
        w: s1.primal,
        sigma: s1.multiplier,
        phi: s2.primal,
        p: s2.multiplier,
        u: s3.primal,
        xi: s3.multiplier,
    })
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ErrorReport {
    pub h: f64,
    pub ntets: usize,
    /// ND0 dofs.
    pub ndof_w: usize,
    /// CRvec plus P0 dofs.
    pub ndof_phi: usize,
    /// ND1 dofs.
    pub ndof_u: usize,
    /// `‖curl w_h‖²`; with nested meshes and Galerkin orthogonality the
    /// error `‖curl(w − w_h)‖²` equals `‖curl w‖² − ‖curl w_h‖²`.
    pub curl_w_energy: f64,
    /// Filled in when a reference value for `‖curl w‖²` is known.
    pub err_curl_w: Option<f64>,
    pub err_phi_h1: f64,
    pub err_phi_i_h1: f64,
    pub err_phi_l2: f64,
    pub err_curl_u: f64,
    pub err_u_l2: f64,
    /// `|φ_h|_{1,h}`.
    pub phi_h1: f64,
    /// `max_K |div φ_h|_K |K|^{1/2} / |φ_h|_{1,h}`.
    pub div_phi_max: f64,
    pub sigma_grad: f64,
    pub xi_grad: f64,
}

/// `‖curl w_h‖²` for an edge-element function.
pub fn curl_energy(mesh: &TetMesh, w: &FeFunction) -> f64 {
    let q = quadrature(Entity::Tet, if w.kind() == SpaceKind::ND0 { 1 } else { 2 }).expect("rule");
    let uw = q.unit_weights();
    let vol = &mesh.geometry().tet_volume;
    (0..mesh.num_tets())
        .map(|t| q.points.iter().zip(&uw).map(|(p, wq)| wq * vol[t] * norm2(w.curl(mesh, t, p))).sum::<f64>())
        .sum()
}

/// `‖∇s_h‖₀` for a Lagrange function.
pub fn grad_norm(mesh: &TetMesh, s: &FeFunction) -> f64 {
    let q = quadrature(Entity::Tet, 2).expect("rule");
    let uw = q.unit_weights();
    let vol = &mesh.geometry().tet_volume;
    let mut acc = 0.0;
    for t in 0..mesh.num_tets() {
        for (p, wq) in q.points.iter().zip(&uw) {
            acc += wq * vol[t] * norm2(s.eval(mesh, t, p).1[0]);
        }
    }
    acc.sqrt()
}

/// `Σ_K |K| |curl w_h − curl w_H|²` for ND0 functions on a mesh and the mesh
/// it was refined from (via the parent map).
pub fn nested_curl_distance_sq(fine: &TetMesh, w_fine: &FeFunction, coarse: &TetMesh, w_coarse: &FeFunction) -> f64 {
    let c = [0.25; 4];
    let vol = &fine.geometry().tet_volume;
    (0..fine.num_tets())
        .map(|t| {
            let d = sub(w_fine.curl(fine, t, &c), w_coarse.curl(coarse, fine.parent(t), &c));
            vol[t] * norm2(d)
        })
        .sum()
}

pub fn compute_errors(mesh: &TetMesh, sol: &QuadCurlSolution, case: &ManufacturedCase, qorder: usize) -> Result<ErrorReport, PipelineError> {
    let exact = case.exact.as_ref().ok_or(PipelineError::NoExactSolution)?;
    let q = quadrature(Entity::Tet, qorder).map_err(AssemblyError::from)?;
    let uw = q.unit_weights();
    let vol = &mesh.geometry().tet_volume;
    let curl_u = exact.curl_u.clone();
    let phi_i = interpolate(&sol.phi.dofmap, mesh, Field::Vector(&|x| curl_u(x)));
    let (mut e_h1, mut e_i_h1, mut e_l2, mut e_curl_u, mut e_u, mut phi_h1) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
    let mut div_k = Vec::with_capacity(mesh.num_tets());
    for t in 0..mesh.num_tets() {
        let gh = sol.phi.grad_cr(mesh, t);
        let gi = phi_i.grad_cr(mesh, t);
        let dgi = [sub(gi[0], gh[0]), sub(gi[1], gh[1]), sub(gi[2], gh[2])];
        e_i_h1 += vol[t] * frob2(&dgi);
        phi_h1 += vol[t] * frob2(&gh);
        div_k.push((gh[0][0] + gh[1][1] + gh[2][2]).abs() * vol[t].sqrt());
        for (p, wq) in q.points.iter().zip(&uw) {
            let x = mesh.point(t, p);
            let s = wq * vol[t];
            let ge = (exact.grad_curl_u)(x);
            let dg = [sub(ge[0], gh[0]), sub(ge[1], gh[1]), sub(ge[2], gh[2])];
            e_h1 += s * frob2(&dg);
            let pe = (exact.curl_u)(x);
            e_l2 += s * norm2(sub(pe, sol.phi.value(mesh, t, p)));
            let (uh, duh) = sol.u.eval(mesh, t, p);
            e_curl_u += s * norm2(sub(pe, duh[0]));
            e_u += s * norm2(sub((exact.u)(x), uh));
        }
    }
    let phi_h1 = phi_h1.sqrt();
    let div_max = div_k.iter().cloned().fold(0.0, f64::max);
    Ok(ErrorReport {
        h: mesh.h_max(),
        ntets: mesh.num_tets(),
        ndof_w: sol.w.dofmap.ndofs(),
        ndof_phi: sol.phi.dofmap.ndofs() + sol.p.dofmap.ndofs(),
        ndof_u: sol.u.dofmap.ndofs(),
        curl_w_energy: curl_energy(mesh, &sol.w),
        err_curl_w: None,
        err_phi_h1: e_h1.sqrt(),
        err_phi_i_h1: e_i_h1.sqrt(),
        err_phi_l2: e_l2.sqrt(),
        err_curl_u: e_curl_u.sqrt(),
        err_u_l2: e_u.sqrt(),
        phi_h1,
        div_phi_max: if phi_h1 > 0.0 { div_max / phi_h1 } else { div_max },
        sigma_grad: grad_norm(mesh, &sol.sigma),
        xi_grad: grad_norm(mesh, &sol.xi),
    })
}

pub fn run_pipeline(
    mesh: &TetMesh,
    case: &ManufacturedCase,
    cfg: &PipelineConfig,
) -> Result<(QuadCurlSolution, ErrorReport), PipelineError> {
    let sol = solve_all(mesh, case, cfg)?;
    let rep = compute_errors(mesh, &sol, case, cfg.error_qorder)?;
    Ok((sol, rep))
}
