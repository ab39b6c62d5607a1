//! Residual indicators, bulk marking and the adaptive loop.

use std::sync::Arc;

use proptest::prelude::*;

use quadcurl::afem::{
    afem_loop, contraction_monitor, dorfler, mark, mark_separate, mark_single, AfemConfig, MarkParams,
    MonitorWeights, Strategy,
};
use quadcurl::cases::{CaseId, Domain, ManufacturedCase, VecFn};
use quadcurl::estimator::{effectivity, estimate, eta1, eta2, osc, EstimatorField, Totals};
use quadcurl::fespace::{build_dofmap, interpolate, FeFunction, Field, SpaceKind};
use quadcurl::linsolve::{Method, SolverConfig};
use quadcurl::mesh::{bisect, build, kuhn_box, MarkSet, Point, TetMesh, LOCAL_EDGES};
use quadcurl::pipeline::{run_pipeline, solve_steps12, PipelineConfig};
use quadcurl::quadrature::{barycentric_monomial_integral, Entity};
use quadcurl::vec3::{cross, dot, norm2, scale, sub, Vec3};

fn reference_tet() -> TetMesh {
    build(vec![[0.0; 3], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]], vec![[0, 1, 2, 3]]).unwrap()
}

fn two_tets() -> TetMesh {
    build(
        vec![[0.0; 3], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [0.0, 0.0, -1.0]],
        vec![[0, 1, 2, 3], [0, 2, 1, 4]],
    )
    .unwrap()
}

fn vf(f: impl Fn(Point) -> Vec3 + Send + Sync + 'static) -> VecFn {
    Arc::new(f)
}

fn zero_nd0(mesh: &TetMesh) -> FeFunction {
    FeFunction::zero(Arc::new(build_dofmap(SpaceKind::ND0, mesh)))
}

fn direct() -> PipelineConfig {
    PipelineConfig { solver: SolverConfig { method: Method::Direct, ..SolverConfig::default() }, ..Default::default() }
}

fn total(v: &[f64]) -> f64 {
    v.iter().sum()
}

#[test]
fn eta1_vanishes_for_zero_data() {
    let m = kuhn_box([0.0; 3], [1.0; 3], [2; 3]).unwrap();
    let (e, ew) = eta1(&m, &zero_nd0(&m), &vf(|_| [0.0; 3]), 4);
    assert!(e.iter().chain(&ew).all(|&v| v == 0.0));
}

#[test]
fn eta1_on_a_single_tet_is_the_element_term() {
    let m = reference_tet();
    let h2 = 2.0;
    let (e, _) = eta1(&m, &zero_nd0(&m), &vf(|_| [1.0, 2.0, 3.0]), 4);
    assert!((e[0] - h2 * 14.0 / 6.0).abs() < 1e-14);
    // ∫ x² over the reference tet is the barycentric integral of λ₁².
    let (e, _) = eta1(&m, &zero_nd0(&m), &vf(|p| [p[0], 0.0, 0.0]), 4);
    let exact = h2 * barycentric_monomial_integral(Entity::Tet, &[0, 2, 0, 0]);
    assert!((e[0] - exact).abs() < 1e-15);
}

#[test]
fn eta1_jump_of_a_single_edge_function() {
    let m = two_tets();
    let nd0 = Arc::new(build_dofmap(SpaceKind::ND0, &m));
    // An edge of tet 0 not shared with tet 1.
    let k = (0..6).find(|&k| !nd0.dofs(1).contains(&nd0.dofs(0)[k])).unwrap();
    let mut c = vec![0.0; nd0.ndofs()];
    c[nd0.dofs(0)[k]] = 1.0;
    let w = FeFunction::new(nd0, c);
    let g = &m.geometry().grad_lambda[0];
    let [i, j] = LOCAL_EDGES[k];
    let curl0 = scale(2.0 * m.tet_edge_signs(0)[k], cross(g[i], g[j]));
    // Shared face {0, 1, 2}: normal ±e_z, area 1/2, diameter √2.
    let jump = norm2(cross(curl0, [0.0, 0.0, 1.0]));
    let expect = 2f64.sqrt() * 0.5 * jump;
    let (e, _) = eta1(&m, &w, &vf(|_| [0.0; 3]), 4);
    assert!((e[0] - expect / 2.0).abs() < 1e-13);
    assert!((e[1] - expect / 2.0).abs() < 1e-13);
}

#[test]
fn eta1_ignores_boundary_faces_and_eta2_does_not() {
    // Constant curl everywhere: no interior jumps, but one-sided boundary
    // traces of the gradient of a linear φ are nonzero.
    let m = kuhn_box([0.0; 3], [1.0; 3], [2; 3]).unwrap();
    let nd0 = Arc::new(build_dofmap(SpaceKind::ND0, &m));
    let b = [0.3, -1.0, 2.0];
    let w = interpolate(&nd0, &m, Field::Vector(&|x| scale(0.5, cross(b, x))));
    let (e1, _) = eta1(&m, &w, &vf(|_| [0.0; 3]), 4);
    assert!(total(&e1) < 1e-26);
    let cr = Arc::new(build_dofmap(SpaceKind::CRvec, &m));
    let phi = interpolate(&cr, &m, Field::Vector(&|x| [x[0] + 2.0 * x[1], x[2], -x[0]]));
    let e2 = eta2(&m, &phi, &zero_nd0(&m), None);
    assert!(total(&e2) > 1e-3);
}

#[test]
fn eta2_for_a_global_linear_field_sees_only_the_boundary() {
    let m = two_tets();
    let cr = Arc::new(build_dofmap(SpaceKind::CRvec, &m));
    let grad = [[1.0, 2.0, 0.0], [0.0, -1.0, 3.0], [0.5, 0.0, 0.0]];
    let phi = interpolate(&cr, &m, Field::Vector(&|x| std::array::from_fn(|r| dot(grad[r], x))));
    let e = eta2(&m, &phi, &zero_nd0(&m), None);
    // Oracle over boundary faces with normals from vertex coordinates.
    let v = m.vertices();
    let mut expect = 0.0;
    for f in 0..m.num_faces() {
        if !m.is_boundary_face(f) {
            continue;
        }
        let [a, b, c] = m.faces()[f].map(|i| v[i]);
        let nn = cross(sub(b, a), sub(c, a));
        let area = 0.5 * norm2(nn).sqrt();
        let n = scale(1.0 / norm2(nn).sqrt(), nn);
        let diam = [norm2(sub(b, a)), norm2(sub(c, a)), norm2(sub(c, b))].into_iter().fold(0.0, f64::max).sqrt();
        let j: f64 = grad.iter().map(|r| norm2(cross(n, *r))).sum();
        expect += diam * area * j;
    }
    assert!((total(&e) - expect).abs() < 1e-13 * expect);
}

#[test]
fn eta2_element_term_for_constant_curl() {
    let m = kuhn_box([0.0; 3], [1.0; 3], [1; 3]).unwrap();
    let nd0 = Arc::new(build_dofmap(SpaceKind::ND0, &m));
    let w = interpolate(&nd0, &m, Field::Vector(&|x| scale(0.5, cross([1.0, 0.0, 0.0], x))));
    let case = ManufacturedCase::zero(Domain::Cube { lo: 0.0, hi: 1.0 });
    let phi = FeFunction::zero(Arc::new(build_dofmap(SpaceKind::CRvec, &m)));
    let field = estimate(&m, &w, &phi, &case, 4);
    let geo = m.geometry();
    for t in 0..m.num_tets() {
        let expect = geo.tet_diameter[t].powi(2) * geo.tet_volume[t];
        assert!((field.g[t] - expect).abs() < 1e-14);
        assert!((field.eta2[t] - expect).abs() < 1e-14);
    }
}

#[test]
fn oscillation_examples() {
    let m = kuhn_box([0.0; 3], [1.0; 3], [2; 3]).unwrap();
    assert!(total(&osc(&m, &vf(|_| [1.0, -2.0, 5.0]), 4)) < 1e-28);
    let f = vf(|p| [p[0] * p[1], p[2].sin(), 1.0]);
    let base = total(&osc(&m, &f, 4));
    let scaled = total(&osc(&m, &vf(move |p| scale(-3.0, f(p))), 4));
    assert!((scaled - 9.0 * base).abs() < 1e-13 * scaled);
    let t = reference_tet();
    let mean = barycentric_monomial_integral(Entity::Tet, &[0, 1, 0, 0]) * 6.0;
    let var = barycentric_monomial_integral(Entity::Tet, &[0, 2, 0, 0]) - mean * mean / 6.0;
    let o = osc(&t, &vf(|p| [p[0], 0.0, 0.0]), 4);
    assert!((o[0] - 2.0 * var).abs() < 1e-12 * var);
}

#[test]
fn estimator_variants() {
    let zero = EstimatorField { eta1: vec![0.0; 3], eta2: vec![0.0; 3], osc: vec![0.0; 3], g: vec![0.0; 3], eta1_weighted: vec![0.0; 3] };
    assert_eq!(zero.totals(1.0), Totals::default());
    let case = ManufacturedCase::new(CaseId::SmoothCube).unwrap();
    let mesh = kuhn_box([0.0; 3], [1.0; 3], [4; 3]).unwrap();
    let (sol, _) = run_pipeline(&mesh, &case, &direct()).unwrap();
    let field = estimate(&mesh, &sol.w, &sol.phi, &case, 4);
    let t0 = field.totals(0.0);
    assert_eq!(t0.eta2_tilde_sq, t0.eta2_sq);
    let t1 = field.totals(1.0);
    assert!((t1.eta2_tilde_sq - t1.eta2_sq - t1.g_sq).abs() < 1e-14 * t1.eta2_tilde_sq);
    assert!((t1.eta_sq - t1.eta1_sq - t1.eta2_sq).abs() < 1e-14 * t1.eta_sq);
    // Kuhn tets share one diameter; face diameters lie in [√(2/3), 1] of it.
    let h = mesh.h_max();
    let r = t1.eta_tilde_sq / (h * h * t1.eta1_sq + t1.eta2_sq);
    assert!((2.0 / 3.0 - 1e-12..=1.0 + 1e-12).contains(&r), "{r}");
    let eff = effectivity(Some(0.0), 0.0, h, &Totals::default());
    assert_eq!(eff.maxwell, None);
    assert_eq!(eff.stokes, None);
    assert!(effectivity(None, 1.0, h, &t1).maxwell.is_none());
}

#[test]
fn eta2_halves_under_uniform_refinement_on_the_smooth_cube() {
    let case = ManufacturedCase::new(CaseId::SmoothCube).unwrap();
    let mut totals = Vec::new();
    for n in [6, 12] {
        let mesh = kuhn_box([0.0; 3], [1.0; 3], [n; 3]).unwrap();
        let (sol, _) = run_pipeline(&mesh, &case, &PipelineConfig::default()).unwrap();
        totals.push(estimate(&mesh, &sol.w, &sol.phi, &case, 4).totals(1.0).eta2_sq.sqrt());
    }
    let ratio = totals[0] / totals[1];
    assert!((1.7..=2.3).contains(&ratio), "{ratio}");
}

#[test]
fn estimators_scale_with_the_data() {
    let case = ManufacturedCase::new(CaseId::LShape83).unwrap();
    let mesh = case.domain.mesh(2).unwrap();
    let base = {
        let (s1, s2) = solve_steps12(&mesh, &case, &direct()).unwrap();
        estimate(&mesh, &s1.primal, &s2.primal, &case, 4).totals(1.0)
    };
    let c = -2.5;
    let sc = case.scaled(c);
    let (s1, s2) = solve_steps12(&mesh, &sc, &direct()).unwrap();
    let t = estimate(&mesh, &s1.primal, &s2.primal, &sc, 4).totals(1.0);
    for (a, b) in [(t.eta1_sq, base.eta1_sq), (t.eta2_sq, base.eta2_sq), (t.osc_sq, base.osc_sq)] {
        assert!((a - c * c * b).abs() <= 1e-9 * a, "{a} vs {}", c * c * b);
    }
}

#[test]
fn dorfler_examples() {
    assert_eq!(dorfler(&[4.0, 1.0, 1.0, 1.0], 0.5).unwrap().set.as_slice(), &[0]);
    assert_eq!(mark_single(&[1.0; 10], 0.3).unwrap().set.len(), 3);
    assert_eq!(mark_single(&[0.1, 9.0, 0.2, 0.3], 0.3).unwrap().set.as_slice(), &[1]);
    let all = dorfler(&[1.0, 0.0, 2.0, 3.0], 1.0).unwrap();
    assert_eq!(all.set.as_slice(), &[0, 2, 3]);
    let z = dorfler(&[0.0; 4], 0.5).unwrap();
    assert!(z.terminate && z.set.is_empty());
    let m = mark_separate(&[5.0, 0.0, 0.0], &[0.0, 0.0, 7.0], 0.5, 0.3).unwrap();
    assert_eq!(m.set.as_slice(), &[0, 2]);
    for bad in [0.0, 1.5, f64::NAN] {
        assert!(dorfler(&[1.0], bad).is_err());
    }
    assert!(dorfler(&[1.0, -1.0], 0.5).is_err());
    // Ties broken by index.
    assert_eq!(dorfler(&[1.0, 1.0, 1.0, 1.0], 0.5).unwrap().set.as_slice(), &[0, 1]);
}

#[test]
fn weighted_marking_deprioritizes_small_eta1_driven_elements() {
    // Tets 0..5 carry η₁ on small elements (h = 0.05); tets 5..10 carry η₂.
    let n = 10;
    let h: Vec<f64> = (0..n).map(|i| if i < 5 { 0.05 } else { 0.5 }).collect();
    let eta1: Vec<f64> = (0..n).map(|i| if i < 5 { 2.0 } else { 0.01 }).collect();
    let eta2: Vec<f64> = (0..n).map(|i| if i < 5 { 0.001 } else { 1.0 }).collect();
    let field = EstimatorField {
        eta1_weighted: eta1.iter().zip(&h).map(|(e, h)| e * h * h).collect(),
        eta1,
        eta2,
        osc: vec![0.0; n],
        g: vec![0.0; n],
    };
    let count = |s: Strategy| {
        let p = MarkParams { strategy: s, ..MarkParams::default() };
        mark(&field, &p).unwrap().set.as_slice().iter().filter(|&&t| t < 5).count()
    };
    assert!(count(Strategy::SingleWeighted) < count(Strategy::SingleEta));
}

#[test]
fn zero_case_stops_immediately() {
    let case = ManufacturedCase::zero(Domain::LShape);
    let mesh0 = case.domain.mesh(2).unwrap();
    let res = afem_loop(&case, &mesh0, &AfemConfig::default()).unwrap();
    assert_eq!(res.trace.len(), 1);
    assert!(!res.hit_cap);
    assert_eq!(res.trace[0].totals.eta1_sq, 0.0);
    assert_eq!(res.trace[0].totals.eta2_sq, 0.0);
    let mon = contraction_monitor(&res.trace, &MonitorWeights::default());
    assert!(mon.iter().all(|r| r.g == 0.0));
}

#[test]
fn adaptive_trace_invariants_and_monitor_weights() {
    let case = ManufacturedCase::new(CaseId::LShape83).unwrap();
    let mesh0 = case.domain.mesh(2).unwrap();
    let cfg = AfemConfig { max_iters: 4, reference_energy: false, ..AfemConfig::default() };
    let res = afem_loop(&case, &mesh0, &cfg).unwrap();
    assert_eq!(res.trace.len(), 4);
    assert!(res.hit_cap);
    for w in res.trace.windows(2) {
        assert!(w[1].ntets > w[0].ntets);
        assert!(w[1].ndof() > w[0].ndof());
    }
    // The stored last-iteration totals are reproducible from the solution.
    let again = estimate(&res.mesh, &res.solution.w, &res.solution.phi, &case, cfg.pipeline.qorder).totals(1.0);
    assert_eq!(again, res.trace.last().unwrap().totals);
    let only_e = MonitorWeights { mu: 0.0, gamma1: 0.0, gamma2: 0.0, beta: 0.0 };
    for (row, m) in res.trace.iter().zip(contraction_monitor(&res.trace, &only_e)) {
        let e = row.errors.as_ref().unwrap().err_phi_h1;
        assert!((m.g - e * e).abs() <= 1e-15 * m.g);
    }
}

#[test]
fn marked_tets_concentrate_at_the_reentrant_edge() {
    let case = ManufacturedCase::new(CaseId::LShape196).unwrap();
    let mut mesh = case.domain.mesh(2).unwrap();
    let params = MarkParams::default();
    let pc = PipelineConfig::default();
    for k in 0..=5 {
        let (s1, s2) = solve_steps12(&mesh, &case, &pc).unwrap();
        let field = estimate(&mesh, &s1.primal, &s2.primal, &case, pc.qorder);
        let marked = mark(&field, &params).unwrap().set;
        if k == 5 {
            let near = marked.as_slice().iter().filter(|&&t| distance_to_edge(&mesh, t) < 0.25).count();
            let frac = near as f64 / marked.len() as f64;
            assert!(frac >= 0.5, "{frac}");
        }
        mesh = bisect(&mesh, &marked).unwrap();
    }
}

/// Distance from tet `t` to the z-axis: the distance from the origin to the
/// projected tet, which is the hull of its projected vertices.
fn distance_to_edge(mesh: &TetMesh, t: usize) -> f64 {
    let p = mesh.tets()[t].map(|v| mesh.vertices()[v]);
    let mut best = f64::INFINITY;
    for i in 0..4 {
        for j in i + 1..4 {
            let (a, b) = (p[i], p[j]);
            let d = [b[0] - a[0], b[1] - a[1]];
            let l2 = d[0] * d[0] + d[1] * d[1];
            let s = if l2 > 0.0 { (-(a[0] * d[0] + a[1] * d[1]) / l2).clamp(0.0, 1.0) } else { 0.0 };
            best = best.min((a[0] + s * d[0]).hypot(a[1] + s * d[1]));
        }
    }
    // Origin strictly inside a non-degenerate projected face triangle.
    for skip in 0..4 {
        let q: Vec<[f64; 3]> = (0..4).filter(|&k| k != skip).map(|k| p[k]).collect();
        let side = |a: [f64; 3], b: [f64; 3]| (b[0] - a[0]) * (-a[1]) - (b[1] - a[1]) * (-a[0]);
        let s = [side(q[0], q[1]), side(q[1], q[2]), side(q[2], q[0])];
        if s.iter().all(|&v| v > 0.0) || s.iter().all(|&v| v < 0.0) {
            best = 0.0;
        }
    }
    best
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn dorfler_sets_are_bulk_and_minimal(values in prop::collection::vec(0.0f64..10.0, 1..60), theta in 0.01f64..0.99) {
        let m = dorfler(&values, theta).unwrap();
        let tot: f64 = values.iter().sum();
        prop_assume!(tot > 0.0);
        let sel: f64 = m.set.as_slice().iter().map(|&i| values[i]).sum();
        prop_assert!(sel >= theta * tot);
        // Dropping the smallest chosen value breaks the inequality.
        let smallest = m.set.as_slice().iter().map(|&i| values[i]).fold(f64::INFINITY, f64::min);
        prop_assert!(sel - smallest < theta * tot);
        // Every chosen value dominates every unchosen one.
        let unchosen = (0..values.len()).filter(|i| !m.set.contains(*i)).map(|i| values[i]).fold(0.0, f64::max);
        prop_assert!(smallest >= unchosen);
    }

    #[test]
    fn separate_marking_satisfies_both_bulk_criteria(a in prop::collection::vec(0.0f64..1.0, 5..40), seed in 0u64..1000, t1 in 0.05f64..0.95, t2 in 0.05f64..0.95) {
        let b: Vec<f64> = a.iter().enumerate().map(|(i, x)| ((i as u64 * 31 + seed) % 17) as f64 * x).collect();
        let m = mark_separate(&a, &b, t1, t2).unwrap();
        for (v, t) in [(&a, t1), (&b, t2)] {
            let tot: f64 = v.iter().sum();
            let sel = EstimatorField::subset_total(v, m.set.as_slice());
            prop_assert!(sel >= t * tot);
        }
    }

    #[test]
    fn indicator_totals_are_additive(split in prop::collection::vec(any::<bool>(), 48)) {
        let mesh = kuhn_box([0.0; 3], [1.0; 3], [2; 3]).unwrap();
        let case = ManufacturedCase::new(CaseId::SmoothCube).unwrap();
        let nd0 = Arc::new(build_dofmap(SpaceKind::ND0, &mesh));
        let w = interpolate(&nd0, &mesh, Field::Vector(&|x| [x[1] * x[2], x[0] * x[0], x[1]]));
        let cr = Arc::new(build_dofmap(SpaceKind::CRvec, &mesh));
        let phi = interpolate(&cr, &mesh, Field::Vector(&|x| [x[2].sin(), x[0] * x[1], 1.0]));
        let field = estimate(&mesh, &w, &phi, &case, 4);
        let a: Vec<usize> = (0..48).filter(|&t| split[t]).collect();
        let b: Vec<usize> = (0..48).filter(|&t| !split[t]).collect();
        for v in [&field.eta1, &field.eta2, &field.osc, &field.g] {
            prop_assert!(v.iter().all(|&x| x >= 0.0));
            let whole = EstimatorField::subset_total(v, &MarkSet::all(48).as_slice().to_vec());
            let parts = EstimatorField::subset_total(v, &a) + EstimatorField::subset_total(v, &b);
            prop_assert!((whole - parts).abs() <= 1e-14 * whole);
        }
    }
}
