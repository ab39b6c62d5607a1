//! Finite element spaces: dof layouts, basis evaluation, interpolation and
//! essential boundary data.
//!
//! Local numbering: P2 = 4 vertex then 6 edge dofs (edge order of
//! [`LOCAL_EDGES`]); ND1 = two dofs per local edge; CRvec = 3 components per
//! local face (face `i` opposite vertex `i`).

use std::sync::Arc;

use crate::mesh::{Point, TetMesh, LOCAL_EDGES};
use crate::quadrature::{gauss_legendre, quadrature, Entity};
use crate::sparse::CsrMatrix;
use crate::vec3::{cross, dot, scale, sub, Vec3};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SpaceKind {
    P1,
    P2,
    ND0,
    ND1,
    CRvec,
    P0,
}

impl SpaceKind {
    pub fn local_dofs(self) -> usize {
        match self {
            SpaceKind::P1 => 4,
            SpaceKind::P2 => 10,
            SpaceKind::ND0 => 6,
            SpaceKind::ND1 => 12,
            SpaceKind::CRvec => 12,
            SpaceKind::P0 => 1,
        }
    }

    pub fn is_vector(self) -> bool {
        matches!(self, SpaceKind::ND0 | SpaceKind::ND1 | SpaceKind::CRvec)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DofEntity {
    Vertex(usize),
    Edge(usize),
    Face(usize),
    Cell(usize),
}

#[derive(Clone, Debug)]
pub struct DofMap {
    kind: SpaceKind,
    ndofs: usize,
    cell_dofs: Vec<usize>,
    cell_signs: Vec<f64>,
    boundary: Vec<usize>,
    is_boundary: Vec<bool>,
    entity: Vec<DofEntity>,
}

impl DofMap {
    pub fn kind(&self) -> SpaceKind {
        self.kind
    }
    pub fn ndofs(&self) -> usize {
        self.ndofs
    }
    pub fn num_cells(&self) -> usize {
        self.cell_dofs.len() / self.kind.local_dofs()
    }
    pub fn dofs(&self, t: usize) -> &[usize] {
        let n = self.kind.local_dofs();
        &self.cell_dofs[t * n..(t + 1) * n]
    }
    pub fn signs(&self, t: usize) -> &[f64] {
        let n = self.kind.local_dofs();
        &self.cell_signs[t * n..(t + 1) * n]
    }
    /// Sorted list of dofs on boundary entities.
    pub fn boundary_dofs(&self) -> &[usize] {
        &self.boundary
    }
    pub fn is_boundary(&self, dof: usize) -> bool {
        self.is_boundary[dof]
    }
    pub fn entity(&self, dof: usize) -> DofEntity {
        self.entity[dof]
    }
}

pub fn build_dofmap(kind: SpaceKind, mesh: &TetMesh) -> DofMap {
    let nt = mesh.num_tets();
    let nl = kind.local_dofs();
    let mut cell_dofs = Vec::with_capacity(nt * nl);
    let mut cell_signs = Vec::with_capacity(nt * nl);
    let (nv, ne, nf) = (mesh.num_vertices(), mesh.num_edges(), mesh.num_faces());
    let mut entity = Vec::new();
    match kind {
        SpaceKind::P1 => {
            entity.extend((0..nv).map(DofEntity::Vertex));
            for t in mesh.tets() {
                cell_dofs.extend_from_slice(t);
                cell_signs.extend_from_slice(&[1.0; 4]);
            }
        }
        SpaceKind::P2 => {
            entity.extend((0..nv).map(DofEntity::Vertex));
            entity.extend((0..ne).map(DofEntity::Edge));
            for (ti, t) in mesh.tets().iter().enumerate() {
                cell_dofs.extend_from_slice(t);
                cell_dofs.extend(mesh.tet_edges(ti).iter().map(|e| nv + e));
                cell_signs.extend_from_slice(&[1.0; 10]);
            }
        }
        SpaceKind::ND0 => {
            entity.extend((0..ne).map(DofEntity::Edge));
            for t in 0..nt {
                cell_dofs.extend_from_slice(mesh.tet_edges(t));
                cell_signs.extend_from_slice(mesh.tet_edge_signs(t));
            }
        }
        SpaceKind::ND1 => {
            for e in 0..ne {
                entity.push(DofEntity::Edge(e));
                entity.push(DofEntity::Edge(e));
            }
            // The local basis is built in the global edge direction, so no
            // sign flips are needed.
            for t in 0..nt {
                for &e in mesh.tet_edges(t) {
                    cell_dofs.push(2 * e);
                    cell_dofs.push(2 * e + 1);
                }
                cell_signs.extend_from_slice(&[1.0; 12]);
            }
        }
        SpaceKind::CRvec => {
            for f in 0..nf {
                for _ in 0..3 {
                    entity.push(DofEntity::Face(f));
                }
            }
            for t in 0..nt {
                for &f in mesh.tet_faces(t) {
                    for c in 0..3 {
                        cell_dofs.push(3 * f + c);
                    }
                }
                cell_signs.extend_from_slice(&[1.0; 12]);
            }
        }
        SpaceKind::P0 => {
            entity.extend((0..nt).map(DofEntity::Cell));
            cell_dofs.extend(0..nt);
            cell_signs.extend(std::iter::repeat(1.0).take(nt));
        }
    }
    let is_boundary: Vec<bool> = entity
        .iter()
        .map(|e| match *e {
            DofEntity::Vertex(v) => mesh.is_boundary_vertex(v),
            DofEntity::Edge(e) => mesh.is_boundary_edge(e),
            DofEntity::Face(f) => mesh.is_boundary_face(f),
            DofEntity::Cell(_) => false,
        })
        .collect();
    let boundary = (0..entity.len()).filter(|&i| is_boundary[i]).collect();
    DofMap { kind, ndofs: entity.len(), cell_dofs, cell_signs, boundary, is_boundary, entity }
}

/// Values of the global basis functions restricted to one tet at one point.
///
/// Scalar kinds: `value[i][0]` is the value, `deriv[i]` the gradient.
/// Edge kinds: `value[i]` is the vector value, `deriv[i]` the curl.
/// CRvec: `value[i]` is the vector value, `deriv[i]` the gradient of its scalar
/// factor; the vector component is `i % 3`.
#[derive(Clone, Copy, Debug)]
pub struct BasisEval {
    pub n: usize,
    pub value: [Vec3; 12],
    pub deriv: [Vec3; 12],
}

/// Local edge `k` of tet `t` oriented along the global direction: returns the
/// local vertex indices `(p, q)` with global `p < q`.
#[inline]
fn oriented_edge(tv: &[usize; 4], k: usize) -> (usize, usize) {
    let [i, j] = LOCAL_EDGES[k];
    if tv[i] < tv[j] {
        (i, j)
    } else {
        (j, i)
    }
}

pub fn eval_basis(kind: SpaceKind, mesh: &TetMesh, t: usize, bary: &[f64; 4]) -> BasisEval {
    let g = &mesh.geometry().grad_lambda[t];
    let l = bary;
    let mut out = BasisEval { n: kind.local_dofs(), value: [[0.0; 3]; 12], deriv: [[0.0; 3]; 12] };
    match kind {
        SpaceKind::P1 => {
            for i in 0..4 {
                out.value[i][0] = l[i];
                out.deriv[i] = g[i];
            }
        }
        SpaceKind::P2 => {
            for i in 0..4 {
                out.value[i][0] = l[i] * (2.0 * l[i] - 1.0);
                out.deriv[i] = scale(4.0 * l[i] - 1.0, g[i]);
            }
            for (k, [i, j]) in LOCAL_EDGES.iter().enumerate() {
                out.value[4 + k][0] = 4.0 * l[*i] * l[*j];
                out.deriv[4 + k] = scale(4.0, lin2(l[*i], g[*j], l[*j], g[*i]));
            }
        }
        SpaceKind::ND0 => {
            let s = mesh.tet_edge_signs(t);
            for (k, [i, j]) in LOCAL_EDGES.iter().enumerate() {
                out.value[k] = scale(s[k], lin2(l[*i], g[*j], -l[*j], g[*i]));
                out.deriv[k] = scale(2.0 * s[k], cross(g[*i], g[*j]));
            }
        }
        SpaceKind::ND1 => {
            let tv = &mesh.tets()[t];
            for k in 0..6 {
                let (p, q) = oriented_edge(tv, k);
                let c = scale(2.0, cross(g[p], g[q]));
                out.value[2 * k] = lin2(4.0 * l[p], g[q], 2.0 * l[q], g[p]);
                out.value[2 * k + 1] = lin2(-2.0 * l[p], g[q], -4.0 * l[q], g[p]);
                out.deriv[2 * k] = c;
                out.deriv[2 * k + 1] = c;
            }
        }
        SpaceKind::CRvec => {
            for i in 0..4 {
                let s = 1.0 - 3.0 * l[i];
                let gs = scale(-3.0, g[i]);
                for c in 0..3 {
                    out.value[3 * i + c][c] = s;
                    out.deriv[3 * i + c] = gs;
                }
            }
        }
        SpaceKind::P0 => {
            out.value[0][0] = 1.0;
        }
    }
    out
}

#[inline]
fn lin2(a: f64, u: Vec3, b: f64, v: Vec3) -> Vec3 {
    [a * u[0] + b * v[0], a * u[1] + b * v[1], a * u[2] + b * v[2]]
}

/// A coefficient vector over a dof map.
#[derive(Clone, Debug)]
pub struct FeFunction {
    pub dofmap: Arc<DofMap>,
    pub coeffs: Vec<f64>,
}

impl FeFunction {
    pub fn new(dofmap: Arc<DofMap>, coeffs: Vec<f64>) -> Self {
        assert_eq!(coeffs.len(), dofmap.ndofs(), "coefficient length must match dof count");
        FeFunction { dofmap, coeffs }
    }

    pub fn zero(dofmap: Arc<DofMap>) -> Self {
        let n = dofmap.ndofs();
        FeFunction { dofmap, coeffs: vec![0.0; n] }
    }

    pub fn kind(&self) -> SpaceKind {
        self.dofmap.kind()
    }

    /// Value (vector, or scalar in slot 0) and derivative (gradient / curl /
    /// row-wise gradient for CRvec) at a barycentric point of tet `t`.
    pub fn eval(&self, mesh: &TetMesh, t: usize, bary: &[f64; 4]) -> (Vec3, [Vec3; 3]) {
        let b = eval_basis(self.kind(), mesh, t, bary);
        let dofs = self.dofmap.dofs(t);
        let mut v = [0.0; 3];
        let mut d = [[0.0; 3]; 3];
        for i in 0..b.n {
            let c = self.coeffs[dofs[i]];
            if c == 0.0 {
                continue;
            }
            for k in 0..3 {
                v[k] += c * b.value[i][k];
            }
            let row = if self.kind() == SpaceKind::CRvec { i % 3 } else { 0 };
            for k in 0..3 {
                d[row][k] += c * b.deriv[i][k];
            }
        }
        (v, d)
    }

    pub fn value(&self, mesh: &TetMesh, t: usize, bary: &[f64; 4]) -> Vec3 {
        self.eval(mesh, t, bary).0
    }

    /// Curl of an edge-element function (constant for ND0).
    pub fn curl(&self, mesh: &TetMesh, t: usize, bary: &[f64; 4]) -> Vec3 {
        debug_assert!(matches!(self.kind(), SpaceKind::ND0 | SpaceKind::ND1));
        self.eval(mesh, t, bary).1[0]
    }

    /// Piecewise gradient of a CRvec function: row `c` is `∇φ_c`.
    pub fn grad_cr(&self, mesh: &TetMesh, t: usize) -> [Vec3; 3] {
        debug_assert_eq!(self.kind(), SpaceKind::CRvec);
        self.eval(mesh, t, &[0.25; 4]).1
    }
}

/// A field to interpolate or impose as boundary data.
#[derive(Clone, Copy)]
pub enum Field<'a> {
    Zero,
    Scalar(&'a dyn Fn(Point) -> f64),
    Vector(&'a dyn Fn(Point) -> Vec3),
}

impl Field<'_> {
    fn vector(&self, x: Point) -> Vec3 {
        match self {
            Field::Zero => [0.0; 3],
            Field::Vector(f) => f(x),
            Field::Scalar(f) => [f(x), 0.0, 0.0],
        }
    }
    fn scalar(&self, x: Point) -> f64 {
        match self {
            Field::Zero => 0.0,
            Field::Scalar(f) => f(x),
            Field::Vector(f) => f(x)[0],
        }
    }
}

/// Number of Gauss points used by edge functionals.
const EDGE_POINTS: usize = 3;
/// Order of the triangle rule used by face functionals.
const FACE_ORDER: usize = 8;

/// Degree-of-freedom functional(s) of one entity applied to `field`.
fn entity_functional(kind: SpaceKind, mesh: &TetMesh, ent: DofEntity, field: &Field, out: &mut [f64; 3]) {
    let verts = mesh.vertices();
    match (kind, ent) {
        (SpaceKind::P1 | SpaceKind::P2, DofEntity::Vertex(v)) => out[0] = field.scalar(verts[v]),
        (SpaceKind::P2, DofEntity::Edge(e)) => {
            let [a, b] = mesh.edges()[e];
            out[0] = field.scalar(midpoint(verts[a], verts[b]));
        }
        (SpaceKind::ND0 | SpaceKind::ND1, DofEntity::Edge(e)) => {
            let [a, b] = mesh.edges()[e];
            let (pa, pb) = (verts[a], verts[b]);
            let tvec = sub(pb, pa);
            let (xs, ws) = gauss_legendre(EDGE_POINTS);
            out[0] = 0.0;
            out[1] = 0.0;
            for (s, w) in xs.iter().zip(&ws) {
                let x = [pa[0] + s * tvec[0], pa[1] + s * tvec[1], pa[2] + s * tvec[2]];
                let vt = dot(field.vector(x), tvec);
                if kind == SpaceKind::ND0 {
                    out[0] += w * vt;
                } else {
                    out[0] += w * vt * (1.0 - s);
                    out[1] += w * vt * s;
                }
            }
        }
        (SpaceKind::CRvec, DofEntity::Face(f)) => {
            let [a, b, c] = mesh.faces()[f].map(|i| verts[i]);
            let q = quadrature(Entity::Triangle, FACE_ORDER).expect("face rule");
            *out = [0.0; 3];
            for (p, w) in q.points.iter().zip(q.unit_weights()) {
                let x = [
                    p[0] * a[0] + p[1] * b[0] + p[2] * c[0],
                    p[0] * a[1] + p[1] * b[1] + p[2] * c[1],
                    p[0] * a[2] + p[1] * b[2] + p[2] * c[2],
                ];
                let v = field.vector(x);
                for k in 0..3 {
                    out[k] += w * v[k];
                }
            }
        }
        (SpaceKind::P0, DofEntity::Cell(t)) => {
            let q = quadrature(Entity::Tet, 4).expect("tet rule");
            out[0] = 0.0;
            for (p, w) in q.points.iter().zip(q.unit_weights()) {
                out[0] += w * field.scalar(mesh.point(t, p));
            }
        }
        _ => unreachable!("entity {ent:?} carries no {kind:?} dof"),
    }
}

#[inline]
fn midpoint(a: Point, b: Point) -> Point {
    [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1]), 0.5 * (a[2] + b[2])]
}

/// Values of the dof functionals at dofs `dofs` (sorted or not).
fn functionals_at(dm: &DofMap, mesh: &TetMesh, dofs: &[usize], field: &Field) -> Vec<f64> {
    let kind = dm.kind();
    let mut vals = Vec::with_capacity(dofs.len());
    let mut buf = [0.0; 3];
    let mut last: Option<DofEntity> = None;
    for &d in dofs {
        let ent = dm.entity(d);
        if last != Some(ent) {
            entity_functional(kind, mesh, ent, field, &mut buf);
            last = Some(ent);
        }
        let slot = match kind {
            SpaceKind::ND1 => d % 2,
            SpaceKind::CRvec => d % 3,
            _ => 0,
        };
        vals.push(buf[slot]);
    }
    vals
}

/// Canonical interpolant: edge moments for ND0/ND1, face means for CRvec,
/// point values for P1/P2, cell means for P0.
pub fn interpolate(dm: &Arc<DofMap>, mesh: &TetMesh, field: Field) -> FeFunction {
    let all: Vec<usize> = (0..dm.ndofs()).collect();
    FeFunction::new(dm.clone(), functionals_at(dm, mesh, &all, &field))
}

/// Prescribed boundary values: the interpolation functionals applied to the
/// trace on every boundary dof.
#[derive(Clone, Debug, Default)]
pub struct BcData {
    pub dofs: Vec<usize>,
    pub values: Vec<f64>,
}

pub fn essential_bc(dm: &DofMap, mesh: &TetMesh, trace: Field) -> BcData {
    let dofs = dm.boundary_dofs().to_vec();
    let values = match trace {
        Field::Zero => vec![0.0; dofs.len()],
        _ => functionals_at(dm, mesh, &dofs, &trace),
    };
    BcData { dofs, values }
}

/// Coefficient matrix of the gradient map from a Lagrange space (P1/P2) into
/// the matching edge space (ND0/ND1): column `i` holds the edge dofs of `∇φ_i`.
pub fn gradient_embedding(lagrange: &DofMap, edge: &DofMap, mesh: &TetMesh) -> CsrMatrix {
    let pair_ok = matches!(
        (lagrange.kind(), edge.kind()),
        (SpaceKind::P1, SpaceKind::ND0) | (SpaceKind::P2, SpaceKind::ND1)
    );
    assert!(pair_ok, "no gradient embedding from {:?} into {:?}", lagrange.kind(), edge.kind());
    let mut done = vec![false; edge.ndofs()];
    let mut trip = Vec::new();
    let (xs, ws) = gauss_legendre(EDGE_POINTS);
    for t in 0..mesh.num_tets() {
        let edofs = edge.dofs(t);
        let ldofs = lagrange.dofs(t);
        let tv = mesh.tets()[t];
        let verts = mesh.vertices();
        for k in 0..6 {
            let first = if edge.kind() == SpaceKind::ND0 { k } else { 2 * k };
            if done[edofs[first]] {
                continue;
            }
            let (p, q) = oriented_edge(&tv, k);
            let tvec = sub(verts[tv[q]], verts[tv[p]]);
            let nloc = lagrange.kind().local_dofs();
            let mut m = [[0.0; 2]; 10];
            for (s, w) in xs.iter().zip(&ws) {
                let mut bary = [0.0; 4];
                bary[p] = 1.0 - s;
                bary[q] = *s;
                let b = eval_basis(lagrange.kind(), mesh, t, &bary);
                for j in 0..nloc {
                    let gt = dot(b.deriv[j], tvec);
                    m[j][0] += w * gt * (1.0 - s);
                    m[j][1] += w * gt * s;
                }
            }
            for j in 0..nloc {
                if edge.kind() == SpaceKind::ND0 {
                    let v = m[j][0] + m[j][1];
                    if v.abs() > 1e-14 {
                        // ND0 dof is taken along the global direction
                        trip.push((edofs[k], ldofs[j], v));
                    }
                } else {
                    for r in 0..2 {
                        if m[j][r].abs() > 1e-14 {
                            trip.push((edofs[2 * k + r], ldofs[j], m[j][r]));
                        }
                    }
                }
            }
            done[edofs[first]] = true;
            if edge.kind() == SpaceKind::ND1 {
                done[edofs[first + 1]] = true;
            }
        }
    }
    CsrMatrix::from_triplets(edge.ndofs(), lagrange.ndofs(), &trip)
}
