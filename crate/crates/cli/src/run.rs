//! Uniform and adaptive experiments, and their CSV and VTU output.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use log::info;
use serde::Serialize;

use quadcurl::afem::{afem_loop, contraction_monitor, AfemConfig, MonitorWeights, TraceRow};
use quadcurl::cases::ManufacturedCase;
use quadcurl::estimator::{estimate, EstimatorField};
use quadcurl::mesh::TetMesh;
use quadcurl::pipeline::{run_pipeline, ErrorReport, PipelineConfig, QuadCurlSolution};

use crate::config::{ExperimentConfig, Mode};
use crate::rates::{pairwise_orders, tail_len, tail_slope};
use crate::vtu::export_vtu;

pub const RATES_FILE: &str = "rates.csv";
pub const TRACE_FILE: &str = "trace.csv";
pub const SLOPES_FILE: &str = "slopes.csv";

/// Error columns shared by the uniform table and the adaptive trace, in
/// output order.
pub const ERROR_COLUMNS: [&str; 6] =
    ["err_curl_w", "err_phi_h1", "err_phiI_h1", "err_phi_l2", "err_curl_u", "err_u_l2"];

/// Files written by a run.
#[derive(Debug, Default)]
pub struct Outputs {
    pub files: Vec<PathBuf>,
}

pub fn run(cfg: &ExperimentConfig) -> Result<Outputs> {
    fs::create_dir_all(&cfg.out).with_context(|| format!("creating {}", cfg.out.display()))?;
    let case = ManufacturedCase::new(cfg.case)?;
    let pipeline = PipelineConfig { solver: cfg.solver, qorder: cfg.qorder, ..PipelineConfig::default() };
    pipeline.validate()?;
    match cfg.mode {
        Mode::Uniform => run_uniform(cfg, &case, &pipeline),
        Mode::Afem => run_afem(cfg, &case, &pipeline),
    }
}

/// One uniform level before the reference energy is known.
struct Level {
    report: ErrorReport,
    eta1: f64,
    eta2: f64,
    osc: f64,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn error_values(r: &ErrorReport) -> [Option<f64>; 6] {
    [
        r.err_curl_w,
        Some(r.err_phi_h1),
        Some(r.err_phi_i_h1),
        Some(r.err_phi_l2),
        Some(r.err_curl_u),
        Some(r.err_u_l2),
    ]
}

fn run_uniform(cfg: &ExperimentConfig, case: &ManufacturedCase, pc: &PipelineConfig) -> Result<Outputs> {
    let mut out = Outputs::default();
    let mut levels = Vec::with_capacity(cfg.levels);
    for l in 0..cfg.levels {
        let n = cfg.n0 << l;
        let mesh = case.domain.mesh(n)?;
        info!("level {l}: n = {n}, {} tets", mesh.num_tets());
        let (sol, report) = run_pipeline(&mesh, case, pc).with_context(|| format!("level {l}"))?;
        let field = estimate(&mesh, &sol.w, &sol.phi, case, pc.qorder);
        let t = field.totals(cfg.params.beta);
        if cfg.vtu {
            let path = cfg.out.join(format!("level_{l}.vtu"));
            write_vtu(&mesh, &sol, &field, &path)?;
            out.files.push(path);
        }
        levels.push(Level { report, eta1: t.eta1_sq.sqrt(), eta2: t.eta2_sq.sqrt(), osc: t.osc_sq.sqrt() });
    }

    // Energy extrapolation: ‖curl w_h‖² increases to ‖curl w‖² at order h².
    let energies: Vec<f64> = levels.iter().map(|l| l.report.curl_w_energy).collect();
    let k = energies.len();
    let w_ref = energies[k - 1] + (energies[k - 1] - energies[k - 2]) / 3.0;
    for (l, e) in levels.iter_mut().zip(&energies) {
        l.report.err_curl_w = Some((w_ref - e).max(0.0).sqrt());
    }

    let columns: Vec<Vec<Option<f64>>> =
        (0..ERROR_COLUMNS.len()).map(|c| levels.iter().map(|l| error_values(&l.report)[c]).collect()).collect();
    let orders: Vec<Vec<Option<f64>>> = columns
        .iter()
        .map(|col| pairwise_orders(&col.iter().map(|v| v.unwrap_or(0.0)).collect::<Vec<_>>()))
        .collect();

    let path = cfg.out.join(RATES_FILE);
    let mut w = csv::Writer::from_path(&path)?;
    let mut header: Vec<String> =
        ["level", "h", "ndof_w", "ndof_phi", "ndof_u"].iter().map(|s| s.to_string()).collect();
    header.extend(ERROR_COLUMNS.iter().map(|s| s.to_string()));
    header.extend(["eta1", "eta2", "osc"].iter().map(|s| s.to_string()));
    header.extend(ERROR_COLUMNS.iter().map(|s| format!("order_{s}")));
    w.write_record(&header)?;
    for (i, l) in levels.iter().enumerate() {
        let r = &l.report;
        let mut rec = vec![
            i.to_string(),
            r.h.to_string(),
            r.ndof_w.to_string(),
            r.ndof_phi.to_string(),
            r.ndof_u.to_string(),
        ];
        rec.extend(error_values(r).iter().map(|v| opt(*v)));
        rec.extend([l.eta1, l.eta2, l.osc].iter().map(|v| v.to_string()));
        rec.extend(orders.iter().map(|o| opt(o[i])));
        w.write_record(&rec)?;
    }
    w.flush()?;
    out.files.push(path);
    Ok(out)
}

#[derive(Serialize)]
struct TraceRecord {
    iter: usize,
    ntets: usize,
    ndof: usize,
    ndof_w: usize,
    ndof_phi: usize,
    ndof_u: usize,
    h: f64,
    marked: usize,
    eta1: f64,
    eta2: f64,
    osc: f64,
    g: f64,
    eta: f64,
    eta_tilde: f64,
    eta2_tilde: f64,
    err_curl_w: Option<f64>,
    err_phi_h1: Option<f64>,
    #[serde(rename = "err_phiI_h1")]
    err_phi_i_h1: Option<f64>,
    err_phi_l2: Option<f64>,
    err_curl_u: Option<f64>,
    err_u_l2: Option<f64>,
    monitor: f64,
    monitor_ratio: Option<f64>,
}

#[derive(Serialize)]
struct SlopeRecord {
    quantity: &'static str,
    slope: Option<f64>,
    points: usize,
}

fn run_afem(cfg: &ExperimentConfig, case: &ManufacturedCase, pc: &PipelineConfig) -> Result<Outputs> {
    let mut out = Outputs::default();
    let mesh0 = case.domain.mesh(cfg.n0)?;
    let acfg = AfemConfig {
        max_iters: cfg.max_iters,
        tol: cfg.tol,
        max_dofs: cfg.max_dofs,
        params: cfg.params,
        pipeline: *pc,
        reference_energy: true,
    };
    let result = afem_loop(case, &mesh0, &acfg)?;
    let weights = MonitorWeights { beta: cfg.params.beta, ..MonitorWeights::default() };
    let monitor = contraction_monitor(&result.trace, &weights);

    let path = cfg.out.join(TRACE_FILE);
    let mut w = csv::Writer::from_path(&path)?;
    for (r, m) in result.trace.iter().zip(&monitor) {
        let e = r.errors.as_ref();
        let t = &r.totals;
        w.serialize(TraceRecord {
            iter: r.iter,
            ntets: r.ntets,
            ndof: r.ndof(),
            ndof_w: r.ndof_w,
            ndof_phi: r.ndof_phi,
            ndof_u: r.ndof_u,
            h: r.h,
            marked: r.marked,
            eta1: t.eta1_sq.sqrt(),
            eta2: t.eta2_sq.sqrt(),
            osc: t.osc_sq.sqrt(),
            g: t.g_sq.sqrt(),
            eta: t.eta_sq.sqrt(),
            eta_tilde: t.eta_tilde_sq.sqrt(),
            eta2_tilde: t.eta2_tilde_sq.sqrt(),
            err_curl_w: e.and_then(|e| e.err_curl_w),
            err_phi_h1: e.map(|e| e.err_phi_h1),
            err_phi_i_h1: e.map(|e| e.err_phi_i_h1),
            err_phi_l2: e.map(|e| e.err_phi_l2),
            err_curl_u: e.map(|e| e.err_curl_u),
            err_u_l2: e.map(|e| e.err_u_l2),
            monitor: m.g,
            monitor_ratio: m.ratio,
        })?;
    }
    w.flush()?;
    out.files.push(path);

    let path = cfg.out.join(SLOPES_FILE);
    let mut w = csv::Writer::from_path(&path)?;
    for rec in slopes(&result.trace) {
        w.serialize(rec)?;
    }
    w.flush()?;
    out.files.push(path);

    if cfg.vtu {
        let path = cfg.out.join("final.vtu");
        write_vtu(&result.mesh, &result.solution, &result.estimators, &path)?;
        out.files.push(path);
    }
    info!("adaptive loop stopped after {} iterations (cap hit: {})", result.trace.len(), result.hit_cap);
    Ok(out)
}

fn slopes(trace: &[TraceRow]) -> Vec<SlopeRecord> {
    let ndof: Vec<f64> = trace.iter().map(|r| r.ndof() as f64).collect();
    let points = tail_len(trace.len());
    let mut out = Vec::new();
    let mut push = |quantity: &'static str, y: Option<Vec<f64>>| {
        let slope = y.and_then(|y| tail_slope(&ndof, &y));
        out.push(SlopeRecord { quantity, slope, points });
    };
    for (c, name) in ERROR_COLUMNS.iter().enumerate() {
        let y: Option<Vec<f64>> = trace.iter().map(|r| r.errors.as_ref().and_then(|e| error_values(e)[c])).collect();
        push(name, y);
    }
    push("eta1", Some(trace.iter().map(|r| r.totals.eta1_sq.sqrt()).collect()));
    push("eta2", Some(trace.iter().map(|r| r.totals.eta2_sq.sqrt()).collect()));
    push("eta", Some(trace.iter().map(|r| r.totals.eta_sq.sqrt()).collect()));
    out
}

/// Cell data: the per-tet indicators. Point data: vertex averages of
/// `|u_h|` and `|φ_h|` over the incident tets.
fn write_vtu(mesh: &TetMesh, sol: &QuadCurlSolution, field: &EstimatorField, path: &Path) -> Result<()> {
    let nv = mesh.num_vertices();
    let mut u_mag = vec![0.0; nv];
    let mut phi_mag = vec![0.0; nv];
    let mut count = vec![0usize; nv];
    for (t, tet) in mesh.tets().iter().enumerate() {
        for (k, &v) in tet.iter().enumerate() {
            let mut bary = [0.0; 4];
            bary[k] = 1.0;
            u_mag[v] += norm(sol.u.value(mesh, t, &bary));
            phi_mag[v] += norm(sol.phi.value(mesh, t, &bary));
            count[v] += 1;
        }
    }
    for v in 0..nv {
        let c = count[v].max(1) as f64;
        u_mag[v] /= c;
        phi_mag[v] /= c;
    }
    let eta1: Vec<f64> = field.eta1.iter().map(|v| v.sqrt()).collect();
    let eta2: Vec<f64> = field.eta2.iter().map(|v| v.sqrt()).collect();
    export_vtu(
        mesh,
        &[("eta1", &eta1), ("eta2", &eta2)],
        &[("u_magnitude", &u_mag), ("phi_magnitude", &phi_mag)],
        path,
    )
    .with_context(|| format!("writing {}", path.display()))
}

fn norm(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}
