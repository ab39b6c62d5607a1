//! Acceptance suite: convergence orders, adaptive slopes, marking comparison,
//! exactness identities, effectivity and the contraction monitor. Prints one
//! PASS/FAIL line per criterion, then fails if any criterion failed.

use std::collections::HashMap;
use std::path::Path;
use std::process::Command;
use std::sync::Arc;
use std::time::Instant;

use quadcurl::assembly::{assemble_bilinear, FormKind};
use quadcurl::cases::{CaseId, Domain, ExactFields, ManufacturedCase};
use quadcurl::fespace::{build_dofmap, gradient_embedding, SpaceKind};
use quadcurl::linsolve::{Method, SolverConfig};
use quadcurl::mesh::refine_uniform;
use quadcurl::pipeline::{curl_energy, grad_norm, nested_curl_distance_sq, run_pipeline, solve_all, solve_step1, PipelineConfig};
use quadcurl::quadrature::{barycentric_monomial_integral, quadrature, Entity, MAX_ORDER};

type Table = Vec<HashMap<String, String>>;

fn run(out: &Path, args: &[&str]) -> Result<(), String> {
    let mut full: Vec<&str> = args.to_vec();
    let o = out.to_str().unwrap();
    full.extend(["--out", o]);
    let t = Instant::now();
    let res = Command::new(env!("CARGO_BIN_EXE_quadcurl")).args(&full).output().map_err(|e| e.to_string())?;
    println!("  ran quadcurl {} in {:.0} s", args.join(" "), t.elapsed().as_secs_f64());
    if res.status.success() {
        Ok(())
    } else {
        Err(format!("quadcurl {args:?} failed: {}", String::from_utf8_lossy(&res.stderr)))
    }
}

fn table(path: &Path) -> Result<Table, String> {
    let mut r = csv::Reader::from_path(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let header: Vec<String> = r.headers().map_err(|e| e.to_string())?.iter().map(String::from).collect();
    r.records()
        .map(|rec| {
            let rec = rec.map_err(|e| e.to_string())?;
            Ok(header.iter().cloned().zip(rec.iter().map(String::from)).collect())
        })
        .collect()
}

fn num(row: &HashMap<String, String>, key: &str) -> Result<f64, String> {
    row.get(key).and_then(|v| v.parse().ok()).ok_or_else(|| format!("missing or empty {key}"))
}

fn slope(slopes: &Table, q: &str) -> Result<f64, String> {
    let row = slopes.iter().find(|r| r["quantity"] == q).ok_or_else(|| format!("no slope for {q}"))?;
    num(row, "slope")
}

fn in_band(v: f64, lo: f64, hi: f64) -> bool {
    v >= lo && v <= hi
}

type Outcome = Result<(bool, String), String>;

fn criterion1(dir: &Path) -> Outcome {
    run(dir, &["--case", "smooth-cube", "--mode", "uniform", "--levels", "4"])?;
    let t = table(&dir.join("rates.csv"))?;
    let bands = [
        ("err_phiI_h1", 1.0, 0.15),
        ("err_phi_l2", 2.0, 0.2),
        ("err_curl_u", 1.0, 0.15),
        ("err_u_l2", 2.0, 0.2),
    ];
    let mut pass = true;
    let mut detail = Vec::new();
    for (col, target, tol) in bands {
        for row in &t[t.len() - 2..] {
            let o = num(row, &format!("order_{col}"))?;
            pass &= (o - target).abs() <= tol;
            detail.push(format!("{col} {o:.3}"));
        }
    }
    Ok((pass, detail.join(", ")))
}

fn criterion2(dir: &Path) -> Outcome {
    run(dir, &["--case", "lshape-8-3", "--mode", "uniform", "--levels", "4"])?;
    let t = table(&dir.join("rates.csv"))?;
    let last = t.last().unwrap();
    let phi = num(last, "order_err_phi_h1")?;
    let u = num(last, "order_err_u_l2")?;
    let pass = phi > 0.45 && phi < 0.85 && u >= 1.75;
    Ok((pass, format!("phi energy order {phi:.3} in (0.45, 0.85), u L2 order {u:.3} >= 1.75")))
}

/// Criterion 3 from the separate-marking run; also returns its trace.
fn criterion3(dir: &Path) -> Result<((bool, String), Table), String> {
    run(dir, &["--case", "lshape-19-6", "--mode", "afem", "--marking", "separate", "--theta1", "0.5", "--theta2", "0.3", "--max-iters", "20", "--max-dofs", "300000"])?;
    let trace = table(&dir.join("trace.csv"))?;
    let slopes = table(&dir.join("slopes.csv"))?;
    let e = slope(&slopes, "err_phi_h1")?;
    let l2 = slope(&slopes, "err_phi_l2")?;
    let u = slope(&slopes, "err_u_l2")?;
    let iters = trace.len();
    let ndof = num(trace.last().unwrap(), "ndof")?;
    let pass = in_band(e, -0.40, -0.27)
        && in_band(l2, -0.80, -0.55)
        && in_band(u, -0.80, -0.55)
        && iters >= 15
        && ndof <= 3e5;
    Ok((
        (pass, format!("slopes phi energy {e:.3}, phi L2 {l2:.3}, u L2 {u:.3}; {iters} iterations, final ndof {ndof}")),
        trace,
    ))
}

fn reduction(trace: &Table, iters: usize) -> Result<f64, String> {
    if trace.len() < iters + 1 {
        return Err(format!("trace has {} rows, need {}", trace.len(), iters + 1));
    }
    Ok(1.0 - num(&trace[iters], "err_phi_h1")? / num(&trace[0], "err_phi_h1")?)
}

fn criterion4(dir: &Path, separate: &Table) -> Outcome {
    // The first 11 rows of the criterion-3 run are the 10-iteration separate
    // run from the same initial mesh.
    let sep = reduction(separate, 10)?;
    let single_dir = dir.join("single");
    run(&single_dir, &["--case", "lshape-19-6", "--mode", "afem", "--marking", "single-eta", "--theta", "0.3", "--max-iters", "11"])?;
    let single = reduction(&table(&single_dir.join("trace.csv"))?, 10)?;
    let weighted_dir = dir.join("weighted");
    run(&weighted_dir, &["--case", "lshape-19-6", "--mode", "afem", "--marking", "single-weighted", "--theta", "0.3", "--max-iters", "60", "--max-dofs", "300000"])?;
    let slopes = table(&weighted_dir.join("slopes.csv"))?;
    let e = slope(&slopes, "err_phi_h1")?;
    let l2 = slope(&slopes, "err_phi_l2")?;
    let u = slope(&slopes, "err_u_l2")?;
    let pass = single < 0.5 * sep && in_band(e, -0.40, -0.27) && in_band(l2, -0.80, -0.55) && in_band(u, -0.80, -0.55);
    Ok((
        pass,
        format!(
            "phi energy reduction single-eta {:.1}% vs separate {:.1}%; weighted slopes phi energy {e:.3}, phi L2 {l2:.3}, u L2 {u:.3}",
            100.0 * single,
            100.0 * sep
        ),
    ))
}

fn direct_cfg(tol: f64) -> PipelineConfig {
    PipelineConfig { solver: SolverConfig { method: Method::Direct, tol, ..SolverConfig::default() }, ..PipelineConfig::default() }
}

fn criterion5() -> Outcome {
    let mut parts = Vec::new();
    let mut pass = true;
    let mut check = |name: &str, value: f64, bound: f64| {
        pass &= value <= bound;
        parts.push(format!("({name}) {value:.1e}"));
    };

    // Divergence-free cubic data, integrated exactly by the degree-4 rule.
    let mut sol = ManufacturedCase::zero(Domain::Cube { lo: 0.0, hi: 1.0 });
    sol.f = Arc::new(|p| [p[1] * p[1] * p[2], p[0] * p[2] * p[2], p[0] * p[0] * p[1]]);
    sol.exact = None;
    let cfg = direct_cfg(1e-12);
    let coarse = sol.domain.mesh(2).map_err(|e| e.to_string())?;
    let fine = refine_uniform(&coarse).map_err(|e| e.to_string())?;
    let wc = solve_step1(&coarse, &sol, &cfg).map_err(|e| e.to_string())?.primal;
    let wf = solve_step1(&fine, &sol, &cfg).map_err(|e| e.to_string())?.primal;
    let lhs = curl_energy(&fine, &wf) - curl_energy(&coarse, &wc);
    let rhs = nested_curl_distance_sq(&fine, &wf, &coarse, &wc);
    check("a", (lhs - rhs).abs() / rhs, 1e-8);

    let mut div = 0.0f64;
    for id in CaseId::ALL {
        let case = ManufacturedCase::new(id).map_err(|e| e.to_string())?;
        let mesh = case.domain.mesh(if id == CaseId::SmoothCube { 3 } else { 2 }).map_err(|e| e.to_string())?;
        let (_, rep) = run_pipeline(&mesh, &case, &PipelineConfig::default()).map_err(|e| e.to_string())?;
        div = div.max(rep.div_phi_max);
    }
    check("b", div, 1e-10);

    let mesh = sol.domain.mesh(4).map_err(|e| e.to_string())?;
    let s = solve_all(&mesh, &sol, &PipelineConfig::default()).map_err(|e| e.to_string())?;
    let scale = curl_energy(&mesh, &s.w).sqrt();
    check("c", grad_norm(&mesh, &s.sigma).max(grad_norm(&mesh, &s.xi)) / scale, 1e-8);

    let lmesh = Domain::LShape.mesh(2).map_err(|e| e.to_string())?;
    let mut cg = 0.0f64;
    for (lk, ek) in [(SpaceKind::P1, SpaceKind::ND0), (SpaceKind::P2, SpaceKind::ND1)] {
        let lag = build_dofmap(lk, &lmesh);
        let edge = build_dofmap(ek, &lmesh);
        let a = assemble_bilinear(FormKind::CurlCurl, &edge, &edge, &lmesh, 2).map_err(|e| e.to_string())?;
        let ad = a.matmul(&gradient_embedding(&lag, &edge, &lmesh));
        cg = cg.max(ad.max_abs() / a.max_abs().max(1.0));
    }
    check("d", cg, 1e-13);

    check("e", quadrature_defect(), 1e-14);

    let linear = ManufacturedCase {
        name: "linear".into(),
        domain: Domain::Cube { lo: 0.0, hi: 1.0 },
        exact: Some(ExactFields {
            u: Arc::new(|p| [p[1] + 2.0 * p[0], p[2] - p[0], p[0] + 3.0 * p[2]]),
            curl_u: Arc::new(|_| [-1.0, -1.0, -2.0]),
            grad_curl_u: Arc::new(|_| [[0.0; 3]; 3]),
        }),
        f: Arc::new(|_| [0.0; 3]),
        g: Some(Arc::new(|_| 5.0)),
        nonhomogeneous: true,
        regularity: "polynomial",
    };
    let mesh = linear.domain.mesh(3).map_err(|e| e.to_string())?;
    let (_, rep) = run_pipeline(&mesh, &linear, &direct_cfg(1e-13)).map_err(|e| e.to_string())?;
    check("f", rep.err_phi_h1.max(rep.err_phi_l2).max(rep.err_curl_u).max(rep.err_u_l2), 1e-10);

    Ok((pass, parts.join(", ")))
}

/// Largest relative defect of every supported rule on barycentric monomials
/// up to its order.
fn quadrature_defect() -> f64 {
    let mut worst = 0.0f64;
    for (entity, d) in [(Entity::Segment, 2), (Entity::Triangle, 3), (Entity::Tet, 4)] {
        for order in 1..=MAX_ORDER {
            let q = quadrature(entity, order).unwrap();
            let mut exps = vec![0u32; d];
            loop {
                if exps.iter().sum::<u32>() as usize <= order {
                    let v: f64 = q
                        .points
                        .iter()
                        .zip(&q.weights)
                        .map(|(p, w)| w * (0..d).map(|i| p[i].powi(exps[i] as i32)).product::<f64>())
                        .sum();
                    let exact = barycentric_monomial_integral(entity, &exps);
                    worst = worst.max((v - exact).abs() / exact.max(1e-3));
                }
                let mut k = 0;
                while k < d {
                    exps[k] += 1;
                    if exps[k] as usize <= order {
                        break;
                    }
                    exps[k] = 0;
                    k += 1;
                }
                if k == d {
                    break;
                }
            }
        }
    }
    worst
}

/// Effectivity spread on the first three smooth-cube levels.
fn criterion6(rates: &Path) -> Outcome {
    let t = table(rates)?;
    let mut maxwell = Vec::new();
    let mut stokes = Vec::new();
    for row in &t[..3] {
        let h = num(row, "h")?;
        let (e1, e2) = (num(row, "eta1")?, num(row, "eta2")?);
        maxwell.push(e1 / num(row, "err_curl_w")?);
        stokes.push((h * e1 + e2) / num(row, "err_phi_h1")?);
    }
    let spread = |v: &[f64]| v.iter().cloned().fold(f64::MIN, f64::max) / v.iter().cloned().fold(f64::MAX, f64::min);
    let (sm, ss) = (spread(&maxwell), spread(&stokes));
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join(" ");
    Ok((
        sm <= 3.0 && ss <= 3.0,
        format!("eta1 effectivity [{}] spread {sm:.2}, phi effectivity [{}] spread {ss:.2}", fmt(&maxwell), fmt(&stokes)),
    ))
}

fn criterion7(trace: &Table) -> Outcome {
    let ratios: Vec<f64> = trace.iter().filter_map(|r| r.get("monitor_ratio").and_then(|v| v.parse().ok())).collect();
    if ratios.is_empty() {
        return Err("no monitor ratios".into());
    }
    let below = ratios.iter().filter(|&&r| r < 1.0).count();
    let frac = below as f64 / ratios.len() as f64;
    let worst = ratios.iter().cloned().fold(0.0, f64::max);
    Ok((frac >= 0.9, format!("{below}/{} ratios below 1 ({:.0}%), largest {worst:.3}", ratios.len(), 100.0 * frac)))
}

#[test]
fn acceptance_criteria() {
    let root = tempfile::tempdir().unwrap();
    let dir = |name: &str| {
        let d = root.path().join(name);
        std::fs::create_dir_all(&d).unwrap();
        d
    };
    let mut results: Vec<(usize, Outcome)> = Vec::new();

    let cube_dir = dir("c1");
    results.push((1, criterion1(&cube_dir)));
    results.push((2, criterion2(&dir("c2"))));
    let c3 = criterion3(&dir("c3"));
    let trace = c3.as_ref().ok().map(|(_, t)| t.clone());
    results.push((3, c3.map(|(o, _)| o)));
    results.push((4, match &trace {
        Some(t) => criterion4(&dir("c4"), t),
        None => Err("criterion 3 run unavailable".into()),
    }));
    results.push((5, criterion5()));
    results.push((6, criterion6(&cube_dir.join("rates.csv"))));
    results.push((7, match &trace {
        Some(t) => criterion7(t),
        None => Err("criterion 3 run unavailable".into()),
    }));

    let mut failed = Vec::new();
    for (n, r) in &results {
        match r {
            Ok((true, d)) => println!("criterion {n}: PASS: {d}"),
            Ok((false, d)) => {
                println!("criterion {n}: FAIL: {d}");
                failed.push(*n);
            }
            Err(e) => {
                println!("criterion {n}: FAIL (error): {e}");
                failed.push(*n);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
