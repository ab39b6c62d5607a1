//! Conforming tetrahedral meshes: topology, geometry, red refinement and
//! marked-edge bisection with conforming closure.

use std::collections::HashMap;
use std::path::Path;

use thiserror::Error;

use crate::vec3::{cross, dot, norm, scale, sub, Vec3};

pub type Point = [f64; 3];

/// Sentinel for the missing second tet of a boundary face.
pub const NO_TET: usize = usize::MAX;

/// Local edge `k` joins local vertices `LOCAL_EDGES[k]`.
pub const LOCAL_EDGES: [[usize; 2]; 6] = [[0, 1], [0, 2], [0, 3], [1, 2], [1, 3], [2, 3]];

/// Local face `i` is opposite local vertex `i`.
pub const LOCAL_FACES: [[usize; 3]; 4] = [[1, 2, 3], [0, 2, 3], [0, 1, 3], [0, 1, 2]];

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("tet {tet} references vertex {index} but the mesh has {nverts} vertices")]
    IndexOutOfRange { tet: usize, index: usize, nverts: usize },
    #[error("tet {tet} is degenerate (relative volume {rel_volume:e})")]
    DegenerateTet { tet: usize, rel_volume: f64 },
    #[error("tet {tet} duplicates tet {other}")]
    DuplicateTet { tet: usize, other: usize },
    #[error("tet {tet} repeats a vertex")]
    RepeatedVertex { tet: usize },
    #[error("face {face:?} is shared by more than two tets")]
    NonManifoldFace { face: [usize; 3] },
    #[error("marked tet {tet} out of range for a mesh with {ntets} tets")]
    InvalidMark { tet: usize, ntets: usize },
    #[error("bisection closure exceeded its cap of {cap} bisections")]
    ClosureDidNotTerminate { cap: usize },
    #[error("invalid generator parameter: {0}")]
    InvalidParameter(String),
    #[error("mesh file {path}: {msg}")]
    Parse { path: String, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Marked-edge data of one tet, in global vertex ids.
///
/// `mark_a` is the marked edge of the face that does not contain `refine[1]`,
/// `mark_b` that of the face without `refine[0]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BisectionTag {
    pub refine: [usize; 2],
    pub mark_a: [usize; 2],
    pub mark_b: [usize; 2],
    pub flagged: bool,
}

/// A set of tet indices, kept sorted and free of duplicates.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct MarkSet {
    tets: Vec<usize>,
}

impl MarkSet {
    pub fn new(mut tets: Vec<usize>) -> Self {
        tets.sort_unstable();
        tets.dedup();
        MarkSet { tets }
    }

    pub fn all(ntets: usize) -> Self {
        MarkSet { tets: (0..ntets).collect() }
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.tets
    }

    pub fn len(&self) -> usize {
        self.tets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tets.is_empty()
    }

    pub fn contains(&self, t: usize) -> bool {
        self.tets.binary_search(&t).is_ok()
    }

    pub fn union(&self, other: &MarkSet) -> MarkSet {
        let mut v = self.tets.clone();
        v.extend_from_slice(&other.tets);
        MarkSet::new(v)
    }
}

/// Per-entity geometric quantities, computed once at construction.
#[derive(Clone, Debug)]
pub struct Geometry {
    pub tet_volume: Vec<f64>,
    pub tet_diameter: Vec<f64>,
    pub grad_lambda: Vec<[Vec3; 4]>,
    pub face_area: Vec<f64>,
    pub face_diameter: Vec<f64>,
    /// Unit normal pointing out of `face_tets[f][0]` (the lower tet index).
    pub face_normal: Vec<Vec3>,
    pub edge_length: Vec<f64>,
    /// Unit tangent from the lower to the higher vertex index.
    pub edge_tangent: Vec<Vec3>,
}

#[derive(Clone, Debug)]
pub struct TetMesh {
    vertices: Vec<Point>,
    tets: Vec<[usize; 4]>,
    edges: Vec<[usize; 2]>,
    faces: Vec<[usize; 3]>,
    tet_edges: Vec<[usize; 6]>,
    tet_edge_signs: Vec<[f64; 6]>,
    tet_faces: Vec<[usize; 4]>,
    face_tets: Vec<[usize; 2]>,
    boundary_face: Vec<bool>,
    boundary_edge: Vec<bool>,
    boundary_vertex: Vec<bool>,
    tags: Vec<BisectionTag>,
    generation: Vec<u32>,
    vertex_level: Vec<u32>,
    parent: Vec<usize>,
    geometry: Geometry,
}

/// Builds a mesh from coordinates and tets; tets are reoriented to positive
/// volume and receive the longest-edge bisection tagging.
pub fn build(vertices: Vec<Point>, tets: Vec<[usize; 4]>) -> Result<TetMesh, MeshError> {
    let nt = tets.len();
    let nv = vertices.len();
    TetMesh::assemble(vertices, tets, None, vec![0; nt], vec![0; nv], (0..nt).collect())
}

#[inline]
fn pair(a: usize, b: usize) -> [usize; 2] {
    if a < b {
        [a, b]
    } else {
        [b, a]
    }
}

#[inline]
fn triple(a: usize, b: usize, c: usize) -> [usize; 3] {
    let mut t = [a, b, c];
    t.sort_unstable();
    t
}

fn signed_volume6(p: &[Point], t: &[usize; 4]) -> f64 {
    let e1 = sub(p[t[1]], p[t[0]]);
    let e2 = sub(p[t[2]], p[t[0]]);
    let e3 = sub(p[t[3]], p[t[0]]);
    dot(e1, cross(e2, e3))
}

impl TetMesh {
    fn assemble(
        vertices: Vec<Point>,
        mut tets: Vec<[usize; 4]>,
        tags: Option<Vec<BisectionTag>>,
        generation: Vec<u32>,
        vertex_level: Vec<u32>,
        parent: Vec<usize>,
    ) -> Result<TetMesh, MeshError> {
        let nv = vertices.len();
        let nt = tets.len();
        let mut seen: HashMap<[usize; 4], usize> = HashMap::with_capacity(nt);
        for (ti, t) in tets.iter_mut().enumerate() {
            for &i in t.iter() {
                if i >= nv {
                    return Err(MeshError::IndexOutOfRange { tet: ti, index: i, nverts: nv });
                }
            }
            let mut key = *t;
            key.sort_unstable();
            if key[0] == key[1] || key[1] == key[2] || key[2] == key[3] {
                return Err(MeshError::RepeatedVertex { tet: ti });
            }
            if let Some(&other) = seen.get(&key) {
                return Err(MeshError::DuplicateTet { tet: ti, other });
            }
            seen.insert(key, ti);
            let mut lmax: f64 = 0.0;
            for [i, j] in LOCAL_EDGES {
                lmax = lmax.max(norm(sub(vertices[t[i]], vertices[t[j]])));
            }
            let v6 = signed_volume6(&vertices, t);
            let rel = v6 / lmax.powi(3);
            if !(rel.abs() > 1e-12) {
                return Err(MeshError::DegenerateTet { tet: ti, rel_volume: rel });
            }
            if v6 < 0.0 {
                t.swap(2, 3);
            }
        }
        drop(seen);

        let mut edge_map: HashMap<[usize; 2], usize> = HashMap::with_capacity(nt * 2);
        let mut edges = Vec::new();
        let mut tet_edges = Vec::with_capacity(nt);
        let mut tet_edge_signs = Vec::with_capacity(nt);
        let mut face_map: HashMap<[usize; 3], usize> = HashMap::with_capacity(nt * 2);
        let mut faces = Vec::new();
        let mut face_tets: Vec<[usize; 2]> = Vec::new();
        let mut tet_faces = Vec::with_capacity(nt);
        for (ti, t) in tets.iter().enumerate() {
            let mut te = [0usize; 6];
            let mut ts = [0f64; 6];
            for (k, [i, j]) in LOCAL_EDGES.iter().enumerate() {
                let (a, b) = (t[*i], t[*j]);
                let key = pair(a, b);
                let idx = *edge_map.entry(key).or_insert_with(|| {
                    edges.push(key);
                    edges.len() - 1
                });
                te[k] = idx;
                ts[k] = if a < b { 1.0 } else { -1.0 };
            }
            tet_edges.push(te);
            tet_edge_signs.push(ts);
            let mut tf = [0usize; 4];
            for (k, lf) in LOCAL_FACES.iter().enumerate() {
                let key = triple(t[lf[0]], t[lf[1]], t[lf[2]]);
                let idx = match face_map.get(&key) {
                    Some(&f) => {
                        if face_tets[f][1] != NO_TET {
                            return Err(MeshError::NonManifoldFace { face: key });
                        }
                        face_tets[f][1] = ti;
                        f
                    }
                    None => {
                        faces.push(key);
                        face_tets.push([ti, NO_TET]);
                        face_map.insert(key, faces.len() - 1);
                        faces.len() - 1
                    }
                };
                tf[k] = idx;
            }
            tet_faces.push(tf);
        }
        drop(face_map);

        let boundary_face: Vec<bool> = face_tets.iter().map(|ft| ft[1] == NO_TET).collect();
        let mut boundary_edge = vec![false; edges.len()];
        let mut boundary_vertex = vec![false; nv];
        for (f, fv) in faces.iter().enumerate() {
            if !boundary_face[f] {
                continue;
            }
            for &v in fv {
                boundary_vertex[v] = true;
            }
            for (a, b) in [(0, 1), (0, 2), (1, 2)] {
                boundary_edge[edge_map[&pair(fv[a], fv[b])]] = true;
            }
        }

        let geometry = compute_geometry(&vertices, &tets, &edges, &faces, &tet_faces, &face_tets);

        let tags = match tags {
            Some(t) => t,
            None => longest_edge_tags(&tets, &edges, &faces, &tet_edges, &tet_faces, &edge_map, &geometry),
        };

        Ok(TetMesh {
            vertices,
            tets,
            edges,
            faces,
            tet_edges,
            tet_edge_signs,
            tet_faces,
            face_tets,
            boundary_face,
            boundary_edge,
            boundary_vertex,
            tags,
            generation,
            vertex_level,
            parent,
            geometry,
        })
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }
    pub fn num_tets(&self) -> usize {
        self.tets.len()
    }
    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }
    pub fn num_faces(&self) -> usize {
        self.faces.len()
    }
    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }
    pub fn tets(&self) -> &[[usize; 4]] {
        &self.tets
    }
    pub fn edges(&self) -> &[[usize; 2]] {
        &self.edges
    }
    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }
    pub fn tet_edges(&self, t: usize) -> &[usize; 6] {
        &self.tet_edges[t]
    }
    pub fn tet_edge_signs(&self, t: usize) -> &[f64; 6] {
        &self.tet_edge_signs[t]
    }
    pub fn tet_faces(&self, t: usize) -> &[usize; 4] {
        &self.tet_faces[t]
    }
    /// `[lower, higher]` incident tets; the second is [`NO_TET`] on the boundary.
    pub fn face_tets(&self, f: usize) -> [usize; 2] {
        self.face_tets[f]
    }
    pub fn is_boundary_face(&self, f: usize) -> bool {
        self.boundary_face[f]
    }
    pub fn is_boundary_edge(&self, e: usize) -> bool {
        self.boundary_edge[e]
    }
    pub fn is_boundary_vertex(&self, v: usize) -> bool {
        self.boundary_vertex[v]
    }
    pub fn tag(&self, t: usize) -> &BisectionTag {
        &self.tags[t]
    }
    pub fn generation(&self, t: usize) -> u32 {
        self.generation[t]
    }
    pub fn vertex_level(&self, v: usize) -> u32 {
        self.vertex_level[v]
    }
    /// Index of the tet of the previous mesh this tet was refined from.
    pub fn parent(&self, t: usize) -> usize {
        self.parent[t]
    }
    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    /// Largest tet diameter.
    pub fn h_max(&self) -> f64 {
        self.geometry.tet_diameter.iter().cloned().fold(0.0, f64::max)
    }

    pub fn total_volume(&self) -> f64 {
        self.geometry.tet_volume.iter().sum()
    }

    /// Maps barycentric coordinates in tet `t` to physical coordinates.
    #[inline]
    pub fn point(&self, t: usize, bary: &[f64; 4]) -> Point {
        let tv = &self.tets[t];
        let mut x = [0.0; 3];
        for i in 0..4 {
            let p = self.vertices[tv[i]];
            for c in 0..3 {
                x[c] += bary[i] * p[c];
            }
        }
        x
    }

    pub fn tet_centroid(&self, t: usize) -> Point {
        self.point(t, &[0.25; 4])
    }

    /// Local index of face `f` within tet `t`.
    pub fn local_face_index(&self, t: usize, f: usize) -> Option<usize> {
        self.tet_faces[t].iter().position(|&x| x == f)
    }

    /// Smallest dihedral angle (radians) over all tets.
    pub fn min_dihedral_angle(&self) -> f64 {
        let mut amin = std::f64::consts::PI;
        for g in &self.geometry.grad_lambda {
            for i in 0..4 {
                for j in (i + 1)..4 {
                    let c = -dot(g[i], g[j]) / (norm(g[i]) * norm(g[j]));
                    amin = amin.min(c.clamp(-1.0, 1.0).acos());
                }
            }
        }
        amin
    }

    /// Checks the conformity and orientation invariants.
    pub fn check_invariants(&self) -> Result<(), String> {
        for (t, v) in self.geometry.tet_volume.iter().enumerate() {
            if !(*v > 0.0) {
                return Err(format!("tet {t} has non-positive volume {v}"));
            }
            if signed_volume6(&self.vertices, &self.tets[t]) <= 0.0 {
                return Err(format!("tet {t} is negatively oriented"));
            }
        }
        for (f, ft) in self.face_tets.iter().enumerate() {
            if ft[0] == NO_TET {
                return Err(format!("face {f} has no tet"));
            }
            if ft[1] != NO_TET && ft[1] <= ft[0] {
                return Err(format!("face {f} tets not ascending"));
            }
        }
        for e in &self.edges {
            if e[0] >= e[1] {
                return Err(format!("edge {e:?} not ascending"));
            }
        }
        for f in &self.faces {
            if !(f[0] < f[1] && f[1] < f[2]) {
                return Err(format!("face {f:?} not ascending"));
            }
        }
        // Hanging nodes show up as boundary faces in the interior: every
        // boundary face must lie on the hull of the boundary-face surface,
        // which for a closed surface means each boundary edge is shared by
        // an even number of boundary faces.
        let mut count = vec![0u32; self.edges.len()];
        let lookup: HashMap<[usize; 2], usize> =
            self.edges.iter().enumerate().map(|(i, e)| (*e, i)).collect();
        for (f, fv) in self.faces.iter().enumerate() {
            if self.boundary_face[f] {
                for (a, b) in [(0, 1), (0, 2), (1, 2)] {
                    count[lookup[&pair(fv[a], fv[b])]] += 1;
                }
            }
        }
        for (e, c) in count.iter().enumerate() {
            if c % 2 != 0 {
                return Err(format!("boundary surface is open at edge {:?}", self.edges[e]));
            }
        }
        Ok(())
    }
}

fn compute_geometry(
    vertices: &[Point],
    tets: &[[usize; 4]],
    edges: &[[usize; 2]],
    faces: &[[usize; 3]],
    tet_faces: &[[usize; 4]],
    face_tets: &[[usize; 2]],
) -> Geometry {
    let nt = tets.len();
    let mut tet_volume = Vec::with_capacity(nt);
    let mut tet_diameter = Vec::with_capacity(nt);
    let mut grad_lambda = Vec::with_capacity(nt);
    for t in tets {
        let x0 = vertices[t[0]];
        let e1 = sub(vertices[t[1]], x0);
        let e2 = sub(vertices[t[2]], x0);
        let e3 = sub(vertices[t[3]], x0);
        let det = dot(e1, cross(e2, e3));
        let g1 = scale(1.0 / det, cross(e2, e3));
        let g2 = scale(1.0 / det, cross(e3, e1));
        let g3 = scale(1.0 / det, cross(e1, e2));
        let g0 = [-(g1[0] + g2[0] + g3[0]), -(g1[1] + g2[1] + g3[1]), -(g1[2] + g2[2] + g3[2])];
        grad_lambda.push([g0, g1, g2, g3]);
        tet_volume.push(det / 6.0);
        let mut d: f64 = 0.0;
        for [i, j] in LOCAL_EDGES {
            d = d.max(norm(sub(vertices[t[i]], vertices[t[j]])));
        }
        tet_diameter.push(d);
    }
    let mut face_area = Vec::with_capacity(faces.len());
    let mut face_diameter = Vec::with_capacity(faces.len());
    let mut face_normal = Vec::with_capacity(faces.len());
    for (f, fv) in faces.iter().enumerate() {
        let [a, b, c] = fv.map(|i| vertices[i]);
        face_area.push(0.5 * norm(cross(sub(b, a), sub(c, a))));
        face_diameter.push(norm(sub(b, a)).max(norm(sub(c, a))).max(norm(sub(c, b))));
        let t = face_tets[f][0];
        let li = tet_faces[t].iter().position(|&x| x == f).expect("face in its tet");
        let g = grad_lambda[t][li];
        face_normal.push(scale(-1.0 / norm(g), g));
    }
    let mut edge_length = Vec::with_capacity(edges.len());
    let mut edge_tangent = Vec::with_capacity(edges.len());
    for e in edges {
        let d = sub(vertices[e[1]], vertices[e[0]]);
        let l = norm(d);
        edge_length.push(l);
        edge_tangent.push(scale(1.0 / l, d));
    }
    Geometry {
        tet_volume,
        tet_diameter,
        grad_lambda,
        face_area,
        face_diameter,
        face_normal,
        edge_length,
        edge_tangent,
    }
}

/// Longest-edge tagging with a global total order on edges: quantized length
/// descending, then smaller vertex pair first.
fn longest_edge_tags(
    tets: &[[usize; 4]],
    edges: &[[usize; 2]],
    faces: &[[usize; 3]],
    tet_edges: &[[usize; 6]],
    tet_faces: &[[usize; 4]],
    edge_map: &HashMap<[usize; 2], usize>,
    geom: &Geometry,
) -> Vec<BisectionTag> {
    let lmax = geom.edge_length.iter().cloned().fold(0.0, f64::max);
    let key: Vec<u64> = geom
        .edge_length
        .iter()
        .map(|l| ((l / lmax) * 1e12).round() as u64)
        .collect();
    let better = |e1: usize, e2: usize| -> bool {
        key[e1] > key[e2] || (key[e1] == key[e2] && edges[e1] < edges[e2])
    };
    let face_mark: Vec<[usize; 2]> = faces
        .iter()
        .map(|fv| {
            let cand = [pair(fv[0], fv[1]), pair(fv[0], fv[2]), pair(fv[1], fv[2])].map(|p| edge_map[&p]);
            let mut best = cand[0];
            for &c in &cand[1..] {
                if better(c, best) {
                    best = c;
                }
            }
            edges[best]
        })
        .collect();
    tets.iter()
        .enumerate()
        .map(|(t, tv)| {
            let mut best = 0;
            for k in 1..6 {
                if better(tet_edges[t][k], tet_edges[t][best]) {
                    best = k;
                }
            }
            let [la, lb] = LOCAL_EDGES[best];
            let (a, b) = (tv[la], tv[lb]);
            BisectionTag {
                refine: [a, b],
                mark_a: face_mark[tet_faces[t][lb]],
                mark_b: face_mark[tet_faces[t][la]],
                flagged: false,
            }
        })
        .collect()
}

/// Regular red refinement: every tet becomes 8 children, the interior
/// octahedron is split along its shortest diagonal.
pub fn refine_uniform(mesh: &TetMesh) -> Result<TetMesh, MeshError> {
    let nv = mesh.num_vertices();
    let mut vertices = mesh.vertices.clone();
    for e in &mesh.edges {
        let a = mesh.vertices[e[0]];
        let b = mesh.vertices[e[1]];
        vertices.push([0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1]), 0.5 * (a[2] + b[2])]);
    }
    let mut level = mesh.vertex_level.clone();
    for e in &mesh.edges {
        level.push(mesh.vertex_level[e[0]].max(mesh.vertex_level[e[1]]) + 1);
    }
    let mut tets = Vec::with_capacity(8 * mesh.num_tets());
    let mut parent = Vec::with_capacity(8 * mesh.num_tets());
    for (t, tv) in mesh.tets.iter().enumerate() {
        // m[i][j]: midpoint vertex of local edge (i, j)
        let mut m = [[usize::MAX; 4]; 4];
        for (k, [i, j]) in LOCAL_EDGES.iter().enumerate() {
            let v = nv + mesh.tet_edges[t][k];
            m[*i][*j] = v;
            m[*j][*i] = v;
        }
        let [v0, v1, v2, v3] = *tv;
        tets.push([v0, m[0][1], m[0][2], m[0][3]]);
        tets.push([m[0][1], v1, m[1][2], m[1][3]]);
        tets.push([m[0][2], m[1][2], v2, m[2][3]]);
        tets.push([m[0][3], m[1][3], m[2][3], v3]);
        let diagonals = [[0, 1, 2, 3], [0, 2, 1, 3], [0, 3, 1, 2]];
        let mut best = 0;
        let mut best_len = f64::INFINITY;
        for (d, [i, j, k, l]) in diagonals.iter().enumerate() {
            let len = norm(sub(vertices[m[*i][*j]], vertices[m[*k][*l]]));
            if len < best_len * (1.0 - 1e-12) {
                best_len = len;
                best = d;
            }
        }
        let [i, j, k, l] = diagonals[best];
        let ring = [m[i][k], m[i][l], m[j][l], m[j][k]];
        for r in 0..4 {
            tets.push([m[i][j], m[k][l], ring[r], ring[(r + 1) % 4]]);
        }
        parent.extend(std::iter::repeat(t).take(8));
    }
    let nt = tets.len();
    TetMesh::assemble(vertices, tets, None, vec![0; nt], level, parent)
}

#[derive(Clone, Copy)]
struct Work {
    v: [usize; 4],
    ma: [usize; 2],
    mb: [usize; 2],
    flagged: bool,
    generation: u32,
    root: usize,
}

impl Work {
    fn has_split_edge(&self, mid: &HashMap<[usize; 2], usize>) -> bool {
        LOCAL_EDGES
            .iter()
            .any(|[i, j]| mid.contains_key(&pair(self.v[*i], self.v[*j])))
    }
}

fn make_child(
    verts: [usize; 4],
    faces: &[([usize; 3], [usize; 2]); 4],
    refine: [usize; 2],
    flagged: bool,
    generation: u32,
    root: usize,
) -> Work {
    let [x, y] = refine;
    let mut rest = verts.iter().cloned().filter(|&v| v != x && v != y);
    let z = rest.next().expect("child has four distinct vertices");
    let w = rest.next().expect("child has four distinct vertices");
    let mark_of = |skip: usize| -> [usize; 2] {
        let mut fv: Vec<usize> = verts.iter().cloned().filter(|&v| v != skip).collect();
        fv.sort_unstable();
        let key = [fv[0], fv[1], fv[2]];
        faces
            .iter()
            .find(|(k, _)| *k == key)
            .map(|(_, m)| *m)
            .expect("child face listed")
    };
    Work {
        v: [x, y, z, w],
        ma: mark_of(y),
        mb: mark_of(x),
        flagged,
        generation,
        root,
    }
}

fn split(
    w: Work,
    vertices: &mut Vec<Point>,
    level: &mut Vec<u32>,
    mid: &mut HashMap<[usize; 2], usize>,
) -> (Work, Work) {
    let [a, b, c, d] = w.v;
    let m = *mid.entry(pair(a, b)).or_insert_with(|| {
        let pa = vertices[a];
        let pb = vertices[b];
        vertices.push([0.5 * (pa[0] + pb[0]), 0.5 * (pa[1] + pb[1]), 0.5 * (pa[2] + pb[2])]);
        level.push(level[a].max(level[b]) + 1);
        vertices.len() - 1
    });
    let planar = (w.ma == pair(a, c) && w.mb == pair(b, c)) || (w.ma == pair(a, d) && w.mb == pair(b, d));
    let new_mark = if w.flagged && planar {
        let p = if w.ma.contains(&c) { c } else { d };
        pair(m, p)
    } else {
        pair(c, d)
    };
    let child_flag = planar && !w.flagged;
    let g = w.generation + 1;
    let f1 = [
        (triple(a, c, d), w.ma),
        (triple(a, c, m), pair(a, c)),
        (triple(a, d, m), pair(a, d)),
        (triple(c, d, m), new_mark),
    ];
    let f2 = [
        (triple(b, c, d), w.mb),
        (triple(b, c, m), pair(b, c)),
        (triple(b, d, m), pair(b, d)),
        (triple(c, d, m), new_mark),
    ];
    let c1 = make_child([a, c, d, m], &f1, w.ma, child_flag, g, w.root);
    let c2 = make_child([b, c, d, m], &f2, w.mb, child_flag, g, w.root);
    (c1, c2)
}

/// Bisects every marked tet at least once, then closes the mesh so that it is
/// conforming again.
pub fn bisect(mesh: &TetMesh, marked: &MarkSet) -> Result<TetMesh, MeshError> {
    let nt = mesh.num_tets();
    for &t in marked.as_slice() {
        if t >= nt {
            return Err(MeshError::InvalidMark { tet: t, ntets: nt });
        }
    }
    let mut vertices = mesh.vertices.clone();
    let mut level = mesh.vertex_level.clone();
    let mut work: Vec<Work> = (0..nt)
        .map(|t| {
            let tag = &mesh.tags[t];
            let [x, y] = tag.refine;
            let mut rest = mesh.tets[t].iter().cloned().filter(|&v| v != x && v != y);
            Work {
                v: [x, y, rest.next().unwrap(), rest.next().unwrap()],
                ma: tag.mark_a,
                mb: tag.mark_b,
                flagged: tag.flagged,
                generation: mesh.generation[t],
                root: t,
            }
        })
        .collect();
    let mut must: Vec<bool> = vec![false; nt];
    for &t in marked.as_slice() {
        must[t] = true;
    }
    let cap = 3 * (marked.len() + nt);
    let mut count = 0usize;
    let mut mid: HashMap<[usize; 2], usize> = HashMap::new();
    loop {
        let mut changed = false;
        let mut next = Vec::with_capacity(work.len() + work.len() / 4);
        let mut stack: Vec<(Work, bool)> = Vec::new();
        for (w, m) in work.into_iter().zip(must.into_iter()) {
            stack.push((w, m));
            while let Some((w, m)) = stack.pop() {
                if m || w.has_split_edge(&mid) {
                    count += 1;
                    if count > cap {
                        return Err(MeshError::ClosureDidNotTerminate { cap });
                    }
                    let (c1, c2) = split(w, &mut vertices, &mut level, &mut mid);
                    stack.push((c2, false));
                    stack.push((c1, false));
                    changed = true;
                } else {
                    next.push(w);
                }
            }
        }
        work = next;
        must = vec![false; work.len()];
        if !changed {
            break;
        }
    }
    // Untouched tets keep their input vertex order.
    let mut pieces = vec![0usize; nt];
    for w in &work {
        pieces[w.root] += 1;
    }
    let tets: Vec<[usize; 4]> =
        work.iter().map(|w| if pieces[w.root] == 1 { mesh.tets[w.root] } else { w.v }).collect();
    let tags = work
        .iter()
        .map(|w| BisectionTag {
            refine: [w.v[0], w.v[1]],
            mark_a: w.ma,
            mark_b: w.mb,
            flagged: w.flagged,
        })
        .collect();
    let generation = work.iter().map(|w| w.generation).collect();
    let parent = work.iter().map(|w| w.root).collect();
    TetMesh::assemble(vertices, tets, Some(tags), generation, level, parent)
}

/// Box `[lo, hi]` divided into `n` cubes per direction, each split into the
/// six Kuhn tets sharing the main diagonal.
pub fn kuhn_box(lo: Point, hi: Point, n: [usize; 3]) -> Result<TetMesh, MeshError> {
    if n.iter().any(|&k| k == 0) || (0..3).any(|c| !(hi[c] > lo[c])) {
        return Err(MeshError::InvalidParameter(format!("box {lo:?}..{hi:?} with {n:?} cells")));
    }
    let [nx, ny, nz] = n;
    let vid = |i: usize, j: usize, k: usize| i + (nx + 1) * (j + (ny + 1) * k);
    let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1) * (nz + 1));
    for k in 0..=nz {
        for j in 0..=ny {
            for i in 0..=nx {
                vertices.push([
                    lo[0] + (hi[0] - lo[0]) * i as f64 / nx as f64,
                    lo[1] + (hi[1] - lo[1]) * j as f64 / ny as f64,
                    lo[2] + (hi[2] - lo[2]) * k as f64 / nz as f64,
                ]);
            }
        }
    }
    let mut tets = Vec::with_capacity(6 * nx * ny * nz);
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                kuhn_cells(&mut tets, [i, j, k], &vid);
            }
        }
    }
    build(vertices, tets)
}

const KUHN_PERMS: [[usize; 3]; 6] = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];

fn kuhn_cells(tets: &mut Vec<[usize; 4]>, c: [usize; 3], vid: &dyn Fn(usize, usize, usize) -> usize) {
    for p in KUHN_PERMS {
        let mut cur = c;
        let mut t = [vid(cur[0], cur[1], cur[2]); 4];
        for s in 0..3 {
            cur[p[s]] += 1;
            t[s + 1] = vid(cur[0], cur[1], cur[2]);
        }
        tets.push(t);
    }
}

/// L-shaped prism `(-1,1)^2 x (0,1/2)` minus `[0,1] x [-1,0] x [0,1/2]`,
/// Kuhn-split cubes of edge `h`; `h` must divide 1/2.
pub fn lshape_prism(h: f64) -> Result<TetMesh, MeshError> {
    let nz = (0.5 / h).round() as usize;
    if nz == 0 || ((nz as f64) * h - 0.5).abs() > 1e-12 {
        return Err(MeshError::InvalidParameter(format!("h = {h} does not divide 1/2")));
    }
    let nxy = 4 * nz;
    let vid = |i: usize, j: usize, k: usize| i + (nxy + 1) * (j + (nxy + 1) * k);
    let coord = |i: usize, j: usize, k: usize| -> Point {
        [-1.0 + i as f64 * h, -1.0 + j as f64 * h, k as f64 * h]
    };
    let mut cells = Vec::new();
    for k in 0..nz {
        for j in 0..nxy {
            for i in 0..nxy {
                let centre = coord(i, j, k);
                let (xc, yc) = (centre[0] + 0.5 * h, centre[1] + 0.5 * h);
                if xc > 0.0 && yc < 0.0 {
                    continue;
                }
                kuhn_cells(&mut cells, [i, j, k], &vid);
            }
        }
    }
    let ngrid = (nxy + 1) * (nxy + 1) * (nz + 1);
    let mut map = vec![usize::MAX; ngrid];
    for t in &cells {
        for &v in t {
            map[v] = 0;
        }
    }
    let mut vertices = Vec::new();
    for k in 0..=nz {
        for j in 0..=nxy {
            for i in 0..=nxy {
                let g = vid(i, j, k);
                if map[g] != usize::MAX {
                    map[g] = vertices.len();
                    vertices.push(coord(i, j, k));
                }
            }
        }
    }
    let tets = cells.iter().map(|t| t.map(|v| map[v])).collect();
    build(vertices, tets)
}

/// Reads a node file (one coordinate triple per line) and an element file
/// (one 0-based 4-tuple per line). Blank lines and `#` comments are skipped.
pub fn read_mesh_files(nodes: &Path, elements: &Path) -> Result<TetMesh, MeshError> {
    let vertices: Vec<Point> = parse_rows::<f64, 3>(nodes)?;
    let tets: Vec<[usize; 4]> = parse_rows::<usize, 4>(elements)?;
    build(vertices, tets)
}

fn parse_rows<T: std::str::FromStr + Copy + Default, const N: usize>(path: &Path) -> Result<Vec<[T; N]>, MeshError> {
    let text = std::fs::read_to_string(path)?;
    let perr = |line: usize, msg: &str| MeshError::Parse {
        path: path.display().to_string(),
        msg: format!("line {}: {msg}", line + 1),
    };
    let mut rows = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut row = [T::default(); N];
        let mut it = line.split(|c: char| c.is_whitespace() || c == ',').filter(|s| !s.is_empty());
        for slot in row.iter_mut() {
            let tok = it.next().ok_or_else(|| perr(ln, &format!("expected {N} values")))?;
            *slot = tok.parse().map_err(|_| perr(ln, &format!("cannot parse '{tok}'")))?;
        }
        if it.next().is_some() {
            return Err(perr(ln, &format!("expected {N} values")));
        }
        rows.push(row);
    }
    Ok(rows)
}

/// Writes the node and element files read by [`read_mesh_files`].
pub fn write_mesh_files(mesh: &TetMesh, nodes: &Path, elements: &Path) -> Result<(), MeshError> {
    use std::fmt::Write as _;
    let mut s = String::new();
    for p in &mesh.vertices {
        let _ = writeln!(s, "{:.17e} {:.17e} {:.17e}", p[0], p[1], p[2]);
    }
    std::fs::write(nodes, s)?;
    let mut s = String::new();
    for t in &mesh.tets {
        let _ = writeln!(s, "{} {} {} {}", t[0], t[1], t[2], t[3]);
    }
    std::fs::write(elements, s)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reference_tet() -> TetMesh {
        build(
            vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            vec![[0, 1, 2, 3]],
        )
        .unwrap()
    }

    #[test]
    fn reference_tet_counts_and_geometry() {
        let m = reference_tet();
        assert_eq!((m.num_edges(), m.num_faces()), (6, 4));
        assert!((0..4).all(|f| m.is_boundary_face(f)));
        let g = m.geometry();
        assert!((g.tet_volume[0] - 1.0 / 6.0).abs() < 1e-15);
        assert!((g.tet_diameter[0] - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn negative_orientation_is_fixed() {
        let m = build(
            vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            vec![[0, 2, 1, 3]],
        )
        .unwrap();
        assert!(m.geometry().tet_volume[0] > 0.0);
    }

    #[test]
    fn build_errors() {
        let v = vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [1.0, 1.0, 0.0]];
        assert!(matches!(build(v.clone(), vec![[0, 1, 2, 7]]), Err(MeshError::IndexOutOfRange { .. })));
        assert!(matches!(build(v.clone(), vec![[0, 1, 2, 4]]), Err(MeshError::DegenerateTet { .. })));
        assert!(matches!(
            build(v, vec![[0, 1, 2, 3], [3, 2, 1, 0]]),
            Err(MeshError::DuplicateTet { .. })
        ));
    }

    #[test]
    fn kuhn_cube_tagging_uses_diagonal() {
        let m = kuhn_box([0.0; 3], [1.0; 3], [1, 1, 1]).unwrap();
        for t in 0..6 {
            assert_eq!(m.tag(t).refine, [0, 7]);
        }
    }

    #[test]
    fn lshape_coarse_counts() {
        let m = lshape_prism(0.5).unwrap();
        assert_eq!(m.num_tets(), 72);
        assert!((m.total_volume() - 1.5).abs() < 1e-14);
        m.check_invariants().unwrap();
    }
}
