//! Manufactured solutions for the quad-curl problem.
//!
//! Every case stores `u`, `φ = curl u`, the gradient of `φ` (row `c` is
//! `∇φ_c`), the load `f = curl⁴ u` and `g = div u`, all in closed form.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use thiserror::Error;

use crate::mesh::{kuhn_box, lshape_prism, MeshError, Point, TetMesh};
use crate::vec3::Vec3;

pub type VecFn = Arc<dyn Fn(Point) -> Vec3 + Send + Sync>;
pub type ScalarFn = Arc<dyn Fn(Point) -> f64 + Send + Sync>;
pub type TensorFn = Arc<dyn Fn(Point) -> [Vec3; 3] + Send + Sync>;

#[derive(Debug, Error)]
pub enum CaseError {
    #[error("unknown case '{0}' (expected smooth-cube, lshape-8-3 or lshape-19-6)")]
    Unknown(String),
    #[error("biharmonic coefficient check failed: {0}")]
    Coefficient(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CaseId {
    SmoothCube,
    LShape83,
    LShape196,
}

impl CaseId {
    pub const ALL: [CaseId; 3] = [CaseId::SmoothCube, CaseId::LShape83, CaseId::LShape196];

    pub fn as_str(self) -> &'static str {
        match self {
            CaseId::SmoothCube => "smooth-cube",
            CaseId::LShape83 => "lshape-8-3",
            CaseId::LShape196 => "lshape-19-6",
        }
    }
}

impl fmt::Display for CaseId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CaseId {
    type Err = CaseError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        CaseId::ALL.into_iter().find(|c| c.as_str() == s).ok_or_else(|| CaseError::Unknown(s.to_string()))
    }
}

/// Computational domain with its mesh generator.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Domain {
    /// `(lo, hi)³`, Kuhn-split into `6 n³` tets.
    Cube { lo: f64, hi: f64 },
    /// `(-1,1)² × (0,1/2)` minus `{x > 0, y < 0}`.
    LShape,
}

impl Domain {
    /// Mesh with `n` cells per unit of the coarsest natural division: `n` cube
    /// cells per side for the cube, cell size `1/n` for the L-shape.
    pub fn mesh(&self, n: usize) -> Result<TetMesh, MeshError> {
        match *self {
            Domain::Cube { lo, hi } => kuhn_box([lo; 3], [hi; 3], [n; 3]),
            Domain::LShape => lshape_prism(1.0 / n as f64),
        }
    }
}

/// Exact fields of a manufactured solution.
#[derive(Clone)]
pub struct ExactFields {
    pub u: VecFn,
    /// `φ = curl u`.
    pub curl_u: VecFn,
    /// Row `c` is `∇φ_c`.
    pub grad_curl_u: TensorFn,
}

#[derive(Clone)]
pub struct ManufacturedCase {
    pub name: String,
    pub domain: Domain,
    pub exact: Option<ExactFields>,
    pub f: VecFn,
    /// `div u`; `None` means identically zero.
    pub g: Option<ScalarFn>,
    /// Whether steps 2 and 3 impose the traces of the exact fields.
    pub nonhomogeneous: bool,
    pub regularity: &'static str,
}

impl ManufacturedCase {
    pub fn new(id: CaseId) -> Result<Self, CaseError> {
        match id {
            CaseId::SmoothCube => Ok(smooth_cube()),
            CaseId::LShape83 => lshape(8.0 / 3.0, id.as_str()),
            CaseId::LShape196 => lshape(19.0 / 6.0, id.as_str()),
        }
    }

    /// `f = 0`, `u = 0` on the given domain.
    pub fn zero(domain: Domain) -> Self {
        ManufacturedCase {
            name: "zero".into(),
            domain,
            exact: Some(ExactFields {
                u: Arc::new(|_| [0.0; 3]),
                curl_u: Arc::new(|_| [0.0; 3]),
                grad_curl_u: Arc::new(|_| [[0.0; 3]; 3]),
            }),
            f: Arc::new(|_| [0.0; 3]),
            g: None,
            nonhomogeneous: false,
            regularity: "smooth",
        }
    }

    /// `curl curl u = curl φ`, from the stored gradient of `φ`.
    pub fn curl_curl_u(&self, x: Point) -> Option<Vec3> {
        self.exact.as_ref().map(|e| curl_from_gradient(&(e.grad_curl_u)(x)))
    }

    /// Same case with every field multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        let mut out = self.clone();
        out.name = format!("{}*{c}", self.name);
        let f = self.f.clone();
        out.f = Arc::new(move |x| crate::vec3::scale(c, f(x)));
        out.g = self.g.clone().map(|g| Arc::new(move |x| c * g(x)) as ScalarFn);
        out.exact = self.exact.clone().map(|e| {
            let (u, p, gp) = (e.u, e.curl_u, e.grad_curl_u);
            ExactFields {
                u: Arc::new(move |x| crate::vec3::scale(c, u(x))),
                curl_u: Arc::new(move |x| crate::vec3::scale(c, p(x))),
                grad_curl_u: Arc::new(move |x| gp(x).map(|r| crate::vec3::scale(c, r))),
            }
        });
        out
    }
}

/// `curl v` from the rows `∇v_c`.
pub fn curl_from_gradient(g: &[Vec3; 3]) -> Vec3 {
    [g[2][1] - g[1][2], g[0][2] - g[2][0], g[1][0] - g[0][1]]
}

fn smooth_cube() -> ManufacturedCase {
    // u = (0, 0, S(x) S(y) sin z) with S = sin², S' = sin 2t, S'' = 2 cos 2t.
    let s = |t: f64| t.sin().powi(2);
    let ds = |t: f64| (2.0 * t).sin();
    let dds = |t: f64| 2.0 * (2.0 * t).cos();
    let u = Arc::new(move |p: Point| [0.0, 0.0, s(p[0]) * s(p[1]) * p[2].sin()]);
    let curl_u = Arc::new(move |p: Point| {
        let sz = p[2].sin();
        [s(p[0]) * ds(p[1]) * sz, -ds(p[0]) * s(p[1]) * sz, 0.0]
    });
    let grad_curl_u = Arc::new(move |p: Point| {
        let (x, y) = (p[0], p[1]);
        let (sz, cz) = (p[2].sin(), p[2].cos());
        [
            [ds(x) * ds(y) * sz, s(x) * dds(y) * sz, s(x) * ds(y) * cz],
            [-dds(x) * s(y) * sz, -ds(x) * ds(y) * sz, -ds(x) * s(y) * cz],
            [0.0; 3],
        ]
    });
    let f = Arc::new(|p: Point| {
        let (x, y, z) = (p[0], p[1], p[2]);
        let (c2x, c2y) = ((2.0 * x).cos(), (2.0 * y).cos());
        [
            (2.0 * x).sin() * z.cos() / 4.0 * (10.0 - 18.0 * c2y),
            (2.0 * y).sin() * z.cos() / 4.0 * (10.0 - 18.0 * c2x),
            z.sin() * (-5.0 * c2x - 5.0 * c2y + 18.0 * c2x * c2y),
        ]
    });
    let g = Arc::new(move |p: Point| s(p[0]) * s(p[1]) * p[2].cos());
    ManufacturedCase {
        name: CaseId::SmoothCube.as_str().into(),
        domain: Domain::Cube { lo: 0.0, hi: PI },
        exact: Some(ExactFields { u, curl_u, grad_curl_u }),
        f,
        g: Some(g),
        nonhomogeneous: false,
        regularity: "analytic",
    }
}

/// Angle in `[0, 2π)`; the L-shape occupies `θ ∈ [0, 3π/2]`.
fn angle(x: f64, y: f64) -> f64 {
    let t = y.atan2(x);
    if t < 0.0 {
        t + 2.0 * PI
    } else {
        t
    }
}

/// `∇(r^β sin(2θ/3))` in the plane; zero at the axis.
fn grad_rs(beta: f64, x: f64, y: f64) -> [f64; 2] {
    let r = x.hypot(y);
    if r == 0.0 {
        return [0.0; 2];
    }
    let t = angle(x, y);
    let (s, c) = ((2.0 * t / 3.0).sin(), (2.0 * t / 3.0).cos());
    let (st, ct) = (t.sin(), t.cos());
    let rb = r.powf(beta - 1.0);
    [rb * (beta * ct * s - 2.0 / 3.0 * st * c), rb * (beta * st * s + 2.0 / 3.0 * ct * c)]
}

fn rs(beta: f64, x: f64, y: f64) -> f64 {
    let r = x.hypot(y);
    if r == 0.0 {
        return 0.0;
    }
    r.powf(beta) * (2.0 * angle(x, y) / 3.0).sin()
}

/// `Δ(r^β sin(2θ/3)) = (β² − 4/9) r^{β−2} sin(2θ/3)`.
pub fn laplacian_coefficient(beta: f64) -> f64 {
    beta * beta - 4.0 / 9.0
}

/// Coefficient `K` in `Δ²μ = K r^{α−4} sin(2θ/3)` for `μ = r^α sin(2θ/3)`.
pub fn bilaplacian_coefficient(alpha: f64) -> f64 {
    laplacian_coefficient(alpha) * laplacian_coefficient(alpha - 2.0)
}

fn lshape(alpha: f64, name: &str) -> Result<ManufacturedCase, CaseError> {
    let k = bilaplacian_coefficient(alpha);
    // α = 8/3 makes μ biharmonic; any other α must give a nonzero load.
    let biharmonic = (alpha - 8.0 / 3.0).abs() < 1e-14;
    if biharmonic != (k.abs() < 1e-12) {
        return Err(CaseError::Coefficient(format!("alpha = {alpha}, K = {k}")));
    }
    let a2 = laplacian_coefficient(alpha);
    let u = Arc::new(move |p: Point| {
        let g = grad_rs(alpha, p[0], p[1]);
        [g[1], -g[0], 0.0]
    });
    let curl_u = Arc::new(move |p: Point| [0.0, 0.0, -a2 * rs(alpha - 2.0, p[0], p[1])]);
    let grad_curl_u = Arc::new(move |p: Point| {
        let g = grad_rs(alpha - 2.0, p[0], p[1]);
        [[0.0; 3], [0.0; 3], [-a2 * g[0], -a2 * g[1], 0.0]]
    });
    let f: VecFn = if biharmonic {
        Arc::new(|_| [0.0; 3])
    } else {
        Arc::new(move |p: Point| {
            let g = grad_rs(alpha - 4.0, p[0], p[1]);
            [k * g[1], -k * g[0], 0.0]
        })
    };
    Ok(ManufacturedCase {
        name: name.into(),
        domain: Domain::LShape,
        exact: Some(ExactFields { u, curl_u, grad_curl_u }),
        f,
        g: None,
        nonhomogeneous: true,
        regularity: if biharmonic { "curl u in H^(5/3-eps)" } else { "curl u in H^(13/6-eps)" },
    })
}
