//! Residual error indicators for the first two solves.
//!
//! Face terms are attributed half to each incident tet; a boundary face goes
//! entirely to its single tet.

use crate::cases::{ManufacturedCase, TensorFn, VecFn};
use crate::fespace::{FeFunction, SpaceKind};
use crate::mesh::{TetMesh, NO_TET};
use crate::quadrature::{quadrature, Entity};
use crate::vec3::{cross, norm2, sub, Vec3};

/// Per-tet indicator contributions (all squared).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EstimatorField {
    /// `h_K² ‖f‖²_K` plus interior jumps `h_F ‖[curl w_h × n]‖²_F`.
    pub eta1: Vec<f64>,
    /// `h_K² ‖curl w_h‖²_K` plus face jumps `h_F ‖[n × ∇_h φ_h]‖²_F`.
    pub eta2: Vec<f64>,
    /// `h_K² ‖f − Q₀ f‖²_K`.
    pub osc: Vec<f64>,
    /// `h_K² ‖curl w_h‖²_K`.
    pub g: Vec<f64>,
    /// `η₁` with one more power of `h`: `h_K⁴ ‖f‖²_K` and `h_F³` jumps.
    pub eta1_weighted: Vec<f64>,
}

impl EstimatorField {
    pub fn len(&self) -> usize {
        self.eta1.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eta1.is_empty()
    }

    /// `η²` per tet for single marking.
    pub fn eta(&self) -> Vec<f64> {
        self.eta1.iter().zip(&self.eta2).map(|(a, b)| a + b).collect()
    }

    /// `η̃²` per tet.
    pub fn eta_tilde(&self) -> Vec<f64> {
        self.eta1_weighted.iter().zip(&self.eta2).map(|(a, b)| a + b).collect()
    }

    pub fn totals(&self, beta: f64) -> Totals {
        Totals {
            eta1_sq: sum(&self.eta1),
            eta2_sq: sum(&self.eta2),
            osc_sq: sum(&self.osc),
            g_sq: sum(&self.g),
            eta_sq: sum(&self.eta1) + sum(&self.eta2),
            eta_tilde_sq: sum(&self.eta1_weighted) + sum(&self.eta2),
            eta2_tilde_sq: sum(&self.eta2) + beta * sum(&self.g),
        }
    }

    /// Sum of `values` over `subset`.
    pub fn subset_total(values: &[f64], subset: &[usize]) -> f64 {
        subset.iter().map(|&t| values[t]).sum()
    }
}

fn sum(v: &[f64]) -> f64 {
    v.iter().sum()
}

/// Squared totals and the derived combinations.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Totals {
    pub eta1_sq: f64,
    pub eta2_sq: f64,
    pub osc_sq: f64,
    pub g_sq: f64,
    /// `η₁² + η₂²`.
    pub eta_sq: f64,
    /// `η̃²`.
    pub eta_tilde_sq: f64,
    /// `η̃₂² = η₂² + β Σ g²`.
    pub eta2_tilde_sq: f64,
}

/// Adds a face term to its incident tets.
fn attribute(out: &mut [f64], tets: [usize; 2], v: f64) {
    if tets[1] == NO_TET {
        out[tets[0]] += v;
    } else {
        out[tets[0]] += 0.5 * v;
        out[tets[1]] += 0.5 * v;
    }
}

/// Piecewise constant curl of an ND0 function.
fn curls(mesh: &TetMesh, w: &FeFunction) -> Vec<Vec3> {
    assert_eq!(w.kind(), SpaceKind::ND0, "η indicators take an ND0 field");
    (0..mesh.num_tets()).map(|t| w.curl(mesh, t, &[0.25; 4])).collect()
}

/// Returns `(η₁² per tet, weighted η₁² per tet)`.
pub fn eta1(mesh: &TetMesh, w: &FeFunction, f: &VecFn, qorder: usize) -> (Vec<f64>, Vec<f64>) {
    let geo = mesh.geometry();
    let q = quadrature(Entity::Tet, qorder).expect("supported order");
    let uw = q.unit_weights();
    let nt = mesh.num_tets();
    let mut e = vec![0.0; nt];
    let mut ew = vec![0.0; nt];
    for t in 0..nt {
        let ff: f64 = q.points.iter().zip(&uw).map(|(p, wq)| wq * norm2(f(mesh.point(t, p)))).sum::<f64>()
            * geo.tet_volume[t];
        let h2 = geo.tet_diameter[t].powi(2);
        e[t] += h2 * ff;
        ew[t] += h2 * h2 * ff;
    }
    let c = curls(mesh, w);
    for fi in 0..mesh.num_faces() {
        let ft = mesh.face_tets(fi);
        if ft[1] == NO_TET {
            continue;
        }
        let n = geo.face_normal[fi];
        let j = norm2(cross(sub(c[ft[0]], c[ft[1]]), n)) * geo.face_area[fi];
        let hf = geo.face_diameter[fi];
        attribute(&mut e, ft, hf * j);
        attribute(&mut ew, ft, hf.powi(3) * j);
    }
    (e, ew)
}

/// `η₂²` per tet. Boundary faces use `n × (∇_h φ_h − ∇φ_D)` when boundary
/// data `grad_data` is given, the one-sided trace otherwise.
pub fn eta2(mesh: &TetMesh, phi: &FeFunction, w: &FeFunction, grad_data: Option<&TensorFn>) -> Vec<f64> {
    let geo = mesh.geometry();
    let nt = mesh.num_tets();
    let c = curls(mesh, w);
    let gp: Vec<[Vec3; 3]> = (0..nt).map(|t| phi.grad_cr(mesh, t)).collect();
    let mut e: Vec<f64> = (0..nt).map(|t| geo.tet_diameter[t].powi(2) * geo.tet_volume[t] * norm2(c[t])).collect();
    let tri = quadrature(Entity::Triangle, 5).expect("face rule");
    let verts = mesh.vertices();
    for fi in 0..mesh.num_faces() {
        let ft = mesh.face_tets(fi);
        let n = geo.face_normal[fi];
        let jump_sq = |d: &[Vec3; 3]| -> f64 { d.iter().map(|r| norm2(cross(n, *r))).sum() };
        let j = if ft[1] != NO_TET {
            let a = &gp[ft[0]];
            let b = &gp[ft[1]];
            jump_sq(&[sub(a[0], b[0]), sub(a[1], b[1]), sub(a[2], b[2])]) * geo.face_area[fi]
        } else {
            let a = &gp[ft[0]];
            match grad_data {
                None => jump_sq(a) * geo.face_area[fi],
                Some(gd) => {
                    let [p0, p1, p2] = mesh.faces()[fi].map(|i| verts[i]);
                    let mut s = 0.0;
                    for (p, wq) in tri.points.iter().zip(tri.unit_weights()) {
                        let x = [
                            p[0] * p0[0] + p[1] * p1[0] + p[2] * p2[0],
                            p[0] * p0[1] + p[1] * p1[1] + p[2] * p2[1],
                            p[0] * p0[2] + p[1] * p1[2] + p[2] * p2[2],
                        ];
                        let g = gd(x);
                        s += wq * jump_sq(&[sub(a[0], g[0]), sub(a[1], g[1]), sub(a[2], g[2])]);
                    }
                    s * geo.face_area[fi]
                }
            }
        };
        attribute(&mut e, ft, geo.face_diameter[fi] * j);
    }
    e
}

/// `h_K² ‖f − Q₀^K f‖²_K` per tet, mean and remainder by the same rule.
pub fn osc(mesh: &TetMesh, f: &VecFn, qorder: usize) -> Vec<f64> {
    let geo = mesh.geometry();
    let q = quadrature(Entity::Tet, qorder).expect("supported order");
    let uw = q.unit_weights();
    (0..mesh.num_tets())
        .map(|t| {
            let vals: Vec<Vec3> = q.points.iter().map(|p| f(mesh.point(t, p))).collect();
            let mut mean = [0.0; 3];
            for (v, wq) in vals.iter().zip(&uw) {
                for k in 0..3 {
                    mean[k] += wq * v[k];
                }
            }
            let r: f64 = vals.iter().zip(&uw).map(|(v, wq)| wq * norm2(sub(*v, mean))).sum();
            geo.tet_diameter[t].powi(2) * geo.tet_volume[t] * r
        })
        .collect()
}

/// All indicators for `(w_h, φ_h)` on `mesh`.
pub fn estimate(mesh: &TetMesh, w: &FeFunction, phi: &FeFunction, case: &ManufacturedCase, qorder: usize) -> EstimatorField {
    let (e1, e1w) = eta1(mesh, w, &case.f, qorder);
    let data = match (&case.exact, case.nonhomogeneous) {
        (Some(e), true) => Some(&e.grad_curl_u),
        _ => None,
    };
    let e2 = eta2(mesh, phi, w, data);
    let geo = mesh.geometry();
    let c = curls(mesh, w);
    let g = (0..mesh.num_tets()).map(|t| geo.tet_diameter[t].powi(2) * geo.tet_volume[t] * norm2(c[t])).collect();
    EstimatorField { eta1: e1, eta2: e2, osc: osc(mesh, &case.f, qorder), g, eta1_weighted: e1w }
}

/// Effectivity indices; `None` where the error vanishes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Effectivity {
    /// `η₁ / ‖curl(w − w_h)‖₀`.
    pub maxwell: Option<f64>,
    /// `(h η₁ + η₂) / |φ − φ_h|_{1,h}`.
    pub stokes: Option<f64>,
}

pub fn effectivity(err_curl_w: Option<f64>, err_phi_h1: f64, h: f64, totals: &Totals) -> Effectivity {
    let ratio = |num: f64, den: f64| if den > 0.0 && den.is_finite() { Some(num / den) } else { None };
    let e1 = totals.eta1_sq.sqrt();
    let e2 = totals.eta2_sq.sqrt();
    Effectivity { maxwell: err_curl_w.and_then(|e| ratio(e1, e)), stokes: ratio(h * e1 + e2, err_phi_h1) }
}
