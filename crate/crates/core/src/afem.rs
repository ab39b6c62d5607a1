//! Bulk marking and the SOLVE, ESTIMATE, MARK, REFINE loop.

use log::info;
use thiserror::Error;

use crate::cases::ManufacturedCase;
use crate::estimator::{estimate, EstimatorField, Totals};
use crate::mesh::{bisect, refine_uniform, MarkSet, MeshError, TetMesh};
use crate::pipeline::{
    compute_errors, curl_energy, solve_step1, solve_step3, solve_steps12, ErrorReport, PipelineConfig, PipelineError,
    QuadCurlSolution,
};

#[derive(Debug, Error)]
pub enum AfemError {
    #[error("marking parameter {name} = {value} not in (0, 1]")]
    BadTheta { name: &'static str, value: f64 },
    #[error("indicator {index} is negative or not finite: {value}")]
    BadIndicator { index: usize, value: f64 },
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Strategy {
    /// Bulk criteria for `η₁` and `η₂` separately; the marked set is the union.
    Separate,
    /// One bulk criterion on `η² = η₁² + η₂²`.
    SingleEta,
    /// One bulk criterion on `η̃²`.
    SingleWeighted,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MarkParams {
    pub strategy: Strategy,
    pub theta1: f64,
    pub theta2: f64,
    pub theta: f64,
    /// Weight of `Σ g²` in the modified estimator `η̃₂`.
    pub beta: f64,
}

impl Default for MarkParams {
    fn default() -> Self {
        MarkParams { strategy: Strategy::Separate, theta1: 0.5, theta2: 0.3, theta: 0.3, beta: 1.0 }
    }
}

impl MarkParams {
    pub fn validate(&self) -> Result<(), AfemError> {
        for (name, value) in [("theta1", self.theta1), ("theta2", self.theta2), ("theta", self.theta)] {
            check_theta(name, value)?;
        }
        Ok(())
    }
}

fn check_theta(name: &'static str, value: f64) -> Result<(), AfemError> {
    if value > 0.0 && value <= 1.0 {
        Ok(())
    } else {
        Err(AfemError::BadTheta { name, value })
    }
}

/// Outcome of a marking step; `terminate` is set when the estimator is zero.
#[derive(Clone, Debug, PartialEq)]
pub struct Marking {
    pub set: MarkSet,
    pub terminate: bool,
}

/// Greedy Dörfler set: indicators sorted descending (ties by index), shortest
/// prefix whose sum reaches `theta` times the total. `θ = 1` takes every
/// positive indicator.
pub fn dorfler(values: &[f64], theta: f64) -> Result<Marking, AfemError> {
    check_theta("theta", theta)?;
    for (index, &value) in values.iter().enumerate() {
        if !(value >= 0.0 && value.is_finite()) {
            return Err(AfemError::BadIndicator { index, value });
        }
    }
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    let total: f64 = order.iter().map(|&i| values[i]).sum();
    if total == 0.0 {
        return Ok(Marking { set: MarkSet::new(Vec::new()), terminate: true });
    }
    let mut acc = 0.0;
    let mut picked = Vec::new();
    for &i in &order {
        if values[i] == 0.0 {
            break;
        }
        picked.push(i);
        acc += values[i];
        if theta < 1.0 && acc >= theta * total {
            break;
        }
    }
    Ok(Marking { set: MarkSet::new(picked), terminate: false })
}

pub fn mark_separate(eta1: &[f64], eta2: &[f64], theta1: f64, theta2: f64) -> Result<Marking, AfemError> {
    let m1 = dorfler(eta1, theta1)?;
    let m2 = dorfler(eta2, theta2)?;
    Ok(Marking { set: m1.set.union(&m2.set), terminate: m1.terminate && m2.terminate })
}

pub fn mark_single(field: &[f64], theta: f64) -> Result<Marking, AfemError> {
    dorfler(field, theta)
}

pub fn mark(field: &EstimatorField, params: &MarkParams) -> Result<Marking, AfemError> {
    match params.strategy {
        Strategy::Separate => mark_separate(&field.eta1, &field.eta2, params.theta1, params.theta2),
        Strategy::SingleEta => mark_single(&field.eta(), params.theta),
        Strategy::SingleWeighted => mark_single(&field.eta_tilde(), params.theta),
    }
}

#[derive(Clone, Debug)]
pub struct AfemConfig {
    pub max_iters: usize,
    /// Stop once both `η₁` and `η₂` fall below this value.
    pub tol: f64,
    /// Stop before solving on a mesh whose `ndof_w + ndof_phi` exceeds this.
    pub max_dofs: Option<usize>,
    pub params: MarkParams,
    pub pipeline: PipelineConfig,
    /// Estimate `‖curl(w − w_k)‖` from a red refinement of the final mesh.
    pub reference_energy: bool,
}

impl Default for AfemConfig {
    fn default() -> Self {
        AfemConfig {
            max_iters: 20,
            tol: 1e-8,
            max_dofs: None,
            params: MarkParams::default(),
            pipeline: PipelineConfig::default(),
            reference_energy: true,
        }
    }
}

/// One row of the adaptive trace.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow {
    pub iter: usize,
    pub ntets: usize,
    pub ndof_w: usize,
    pub ndof_phi: usize,
    pub ndof_u: usize,
    /// Largest tet diameter.
    pub h: f64,
    pub totals: Totals,
    pub marked: usize,
    pub errors: Option<ErrorReport>,
}

impl TraceRow {
    pub fn ndof(&self) -> usize {
        self.ndof_w + self.ndof_phi
    }
}

#[derive(Clone, Debug)]
pub struct AfemResult {
    pub mesh: TetMesh,
    pub solution: QuadCurlSolution,
    pub trace: Vec<TraceRow>,
    pub estimators: EstimatorField,
    /// True when the loop stopped on the iteration or dof cap rather than `tol`.
    pub hit_cap: bool,
    /// `‖curl w_ref‖²` on the red refinement of the final mesh.
    pub reference_energy: Option<f64>,
}

pub fn afem_loop(case: &ManufacturedCase, mesh0: &TetMesh, cfg: &AfemConfig) -> Result<AfemResult, AfemError> {
    cfg.params.validate()?;
    cfg.pipeline.validate()?;
    let pc = &cfg.pipeline;
    let mut mesh = mesh0.clone();
    let mut trace = Vec::new();
    let mut k = 0;
    loop {
        let (s1, s2) = solve_steps12(&mesh, case, pc)?;
        let field = estimate(&mesh, &s1.primal, &s2.primal, case, pc.qorder);
        let totals = field.totals(cfg.params.beta);
        let s3 = solve_step3(&mesh, &s2.primal, case, pc)?;
        let sol = QuadCurlSolution {
            iterations: [s1.iterations, s2.iterations, s3.iterations],
            w: s1.primal,
            sigma: s1.multiplier,
            phi: s2.primal,
            p: s2.multiplier,
            u: s3.primal,
            xi: s3.multiplier,
        };
        let errors = match case.exact {
            Some(_) => Some(compute_errors(&mesh, &sol, case, pc.error_qorder)?),
            None => None,
        };
        let mut row = TraceRow {
            iter: k,
            ntets: mesh.num_tets(),
            ndof_w: sol.w.dofmap.ndofs(),
            ndof_phi: sol.phi.dofmap.ndofs() + sol.p.dofmap.ndofs(),
            ndof_u: sol.u.dofmap.ndofs(),
            h: mesh.h_max(),
            totals,
            marked: 0,
            errors,
        };
        info!(
            "afem iter {k}: {} tets, eta1 = {:.3e}, eta2 = {:.3e}",
            row.ntets,
            totals.eta1_sq.sqrt(),
            totals.eta2_sq.sqrt()
        );
        let converged = totals.eta1_sq.sqrt() < cfg.tol && totals.eta2_sq.sqrt() < cfg.tol;
        let marking = if converged { None } else { Some(mark(&field, &cfg.params)?) };
        let stop_on_zero = marking.as_ref().is_some_and(|m| m.terminate || m.set.is_empty());
        let last_iter = k + 1 >= cfg.max_iters;
        let next = match (&marking, converged || stop_on_zero || last_iter) {
            (Some(m), false) => {
                row.marked = m.set.len();
                let refined = bisect(&mesh, &m.set)?;
                let est_dofs = estimate_dofs(&refined);
                if cfg.max_dofs.is_some_and(|cap| est_dofs > cap) {
                    None
                } else {
                    Some(refined)
                }
            }
            _ => None,
        };
        trace.push(row);
        match next {
            Some(m) => {
                mesh = m;
                k += 1;
            }
            None => {
                let hit_cap = !(converged || stop_on_zero);
                let reference_energy = if cfg.reference_energy && case.exact.is_some() {
                    Some(reference_curl_energy(&mesh, case, pc)?)
                } else {
                    None
                };
                if let Some(wref) = reference_energy {
                    for r in trace.iter_mut() {
                        if let Some(e) = r.errors.as_mut() {
                            e.err_curl_w = Some((wref - e.curl_w_energy).max(0.0).sqrt());
                        }
                    }
                }
                return Ok(AfemResult { mesh, solution: sol, trace, estimators: field, hit_cap, reference_energy });
            }
        }
    }
}

/// `ND0 + CRvec + P0` dof count of a mesh.
pub fn estimate_dofs(mesh: &TetMesh) -> usize {
    mesh.num_edges() + 3 * mesh.num_faces() + mesh.num_tets()
}

/// `‖curl w_ref‖²` from a red refinement of `mesh`.
pub fn reference_curl_energy(mesh: &TetMesh, case: &ManufacturedCase, cfg: &PipelineConfig) -> Result<f64, AfemError> {
    let fine = refine_uniform(mesh)?;
    let s1 = solve_step1(&fine, case, cfg)?;
    Ok(curl_energy(&fine, &s1.primal))
}

/// Weights of the monitored quantity
/// `𝔊_k = E_k² + μ h_k² e_k² + γ₁ h_k² η₁² + γ₂ η̃₂²`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MonitorWeights {
    pub mu: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub beta: f64,
}

impl Default for MonitorWeights {
    fn default() -> Self {
        MonitorWeights { mu: 1.0, gamma1: 1.0, gamma2: 1.0, beta: 1.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MonitorRow {
    /// `E_k = |φ − φ_k|_{1,k}`.
    pub e_phi: f64,
    /// `e_k = ‖curl(w − w_k)‖₀`.
    pub e_w: f64,
    pub g: f64,
    /// `𝔊_{k}/𝔊_{k−1}`; `None` on the first row or after a zero value.
    pub ratio: Option<f64>,
}

/// Evaluates the monitor along a trace; rows without error data count as zero
/// error.
pub fn contraction_monitor(trace: &[TraceRow], w: &MonitorWeights) -> Vec<MonitorRow> {
    let mut out: Vec<MonitorRow> = Vec::with_capacity(trace.len());
    for r in trace {
        let (e_phi, e_w) = r
            .errors
            .as_ref()
            .map(|e| (e.err_phi_h1, e.err_curl_w.unwrap_or(0.0)))
            .unwrap_or((0.0, 0.0));
        let t = &r.totals;
        let eta2_tilde = t.eta2_sq + w.beta * t.g_sq;
        let h2 = r.h * r.h;
        let g = e_phi * e_phi + w.mu * h2 * e_w * e_w + w.gamma1 * h2 * t.eta1_sq + w.gamma2 * eta2_tilde;
        let ratio = out.last().and_then(|p| if p.g > 0.0 { Some(g / p.g) } else { None });
        out.push(MonitorRow { e_phi, e_w, g, ratio });
    }
    out
}
