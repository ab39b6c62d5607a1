//! Assembly of the bilinear forms, load vectors and reduced saddle-point
//! systems of the decoupled discretization.

use std::io::Write;
use std::path::Path;

use thiserror::Error;

use crate::fespace::{eval_basis, BcData, DofMap, FeFunction, SpaceKind};
use crate::mesh::{Point, TetMesh};
use crate::quadrature::{quadrature, Entity, QuadratureError};
use crate::sparse::CsrMatrix;
use crate::vec3::{dot, Vec3};

#[derive(Debug, Error)]
pub enum AssemblyError {
    #[error("form {form:?} cannot pair trial {trial:?} with test {test:?}")]
    IncompatibleSpaces { form: FormKind, trial: SpaceKind, test: SpaceKind },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error(transparent)]
    Quadrature(#[from] QuadratureError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("matrix market line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FormKind {
    /// `(curl u, curl v)` on ND0 or ND1.
    CurlCurl,
    /// Vector mass where edge-element arguments enter through their curl:
    /// `(curl w, ψ)` for ND0 → CRvec and `(φ, curl χ)` for CRvec → ND1.
    VecMassFromCurl,
    /// `(v, ∇τ)`: rows are edge-element test functions, columns Lagrange
    /// trial functions.
    GradCoupling,
    /// `(∇_h φ, ∇_h ψ)` on CRvec.
    VecLaplaceCR,
    /// `(div_h ψ, q)`: rows P0, columns CRvec.
    DivCRP0,
    /// The single row `(q, 1)` over P0.
    MeanConstraint,
}

/// Sparsity from element dof lists, then element-by-element scatter.
fn assemble_cells<F>(mesh: &TetMesh, test: &DofMap, trial: &DofMap, mut local: F) -> CsrMatrix
where
    F: FnMut(usize, &mut [f64]),
{
    let nr = test.ndofs();
    let nc = trial.ndofs();
    let nt = mesh.num_tets();
    let lr = test.kind().local_dofs();
    let lc = trial.kind().local_dofs();
    // row -> cells
    let mut count = vec![0usize; nr + 1];
    for t in 0..nt {
        for &r in test.dofs(t) {
            count[r + 1] += 1;
        }
    }
    for i in 0..nr {
        count[i + 1] += count[i];
    }
    let mut cells = vec![0usize; count[nr]];
    let mut next = count.clone();
    for t in 0..nt {
        for &r in test.dofs(t) {
            cells[next[r]] = t;
            next[r] += 1;
        }
    }
    let mut indptr = vec![0usize; nr + 1];
    let mut indices = Vec::new();
    let mut mark = vec![usize::MAX; nc];
    let mut row: Vec<usize> = Vec::new();
    for r in 0..nr {
        row.clear();
        for &t in &cells[count[r]..count[r + 1]] {
            for &c in trial.dofs(t) {
                if mark[c] != r {
                    mark[c] = r;
                    row.push(c);
                }
            }
        }
        row.sort_unstable();
        indices.extend_from_slice(&row);
        indptr[r + 1] = indices.len();
    }
    drop(cells);
    let mut data = vec![0.0; indices.len()];
    let mut buf = vec![0.0; lr * lc];
    for t in 0..nt {
        buf.iter_mut().for_each(|v| *v = 0.0);
        local(t, &mut buf);
        let rd = test.dofs(t);
        let cd = trial.dofs(t);
        for i in 0..lr {
            let r = rd[i];
            let cols = &indices[indptr[r]..indptr[r + 1]];
            for j in 0..lc {
                let v = buf[i * lc + j];
                if v != 0.0 {
                    let k = cols.binary_search(&cd[j]).expect("pattern covers element");
                    data[indptr[r] + k] += v;
                }
            }
        }
    }
    CsrMatrix::from_raw(nr, nc, indptr, indices, data)
}

pub fn assemble_bilinear(
    form: FormKind,
    trial: &DofMap,
    test: &DofMap,
    mesh: &TetMesh,
    qorder: usize,
) -> Result<CsrMatrix, AssemblyError> {
    use SpaceKind::*;
    let bad = || AssemblyError::IncompatibleSpaces { form, trial: trial.kind(), test: test.kind() };
    let ok = match form {
        FormKind::CurlCurl => trial.kind() == test.kind() && matches!(trial.kind(), ND0 | ND1),
        FormKind::VecMassFromCurl => matches!((trial.kind(), test.kind()), (ND0, CRvec) | (CRvec, ND1)),
        FormKind::GradCoupling => matches!((trial.kind(), test.kind()), (P1, ND0) | (P2, ND1)),
        FormKind::VecLaplaceCR => trial.kind() == CRvec && test.kind() == CRvec,
        FormKind::DivCRP0 => trial.kind() == CRvec && test.kind() == P0,
        FormKind::MeanConstraint => trial.kind() == P0,
    };
    if !ok {
        return Err(bad());
    }
    let q = quadrature(Entity::Tet, qorder)?;
    let uw = q.unit_weights();
    let vol = &mesh.geometry().tet_volume;
    let lc = trial.kind().local_dofs();
    let lr = test.kind().local_dofs();
    let m = match form {
        FormKind::CurlCurl => assemble_cells(mesh, test, trial, |t, buf| {
            for (p, w) in q.points.iter().zip(&uw) {
                let b = eval_basis(trial.kind(), mesh, t, p);
                let s = w * vol[t];
                for i in 0..lr {
                    for j in 0..lc {
                        buf[i * lc + j] += s * dot(b.deriv[i], b.deriv[j]);
                    }
                }
            }
        }),
        FormKind::VecMassFromCurl => {
            let trial_curl = matches!(trial.kind(), ND0 | ND1);
            assemble_cells(mesh, test, trial, |t, buf| {
                for (p, w) in q.points.iter().zip(&uw) {
                    let bt = eval_basis(trial.kind(), mesh, t, p);
                    let bs = eval_basis(test.kind(), mesh, t, p);
                    let s = w * vol[t];
                    for i in 0..lr {
                        let vi = if trial_curl { bs.value[i] } else { bs.deriv[i] };
                        for j in 0..lc {
                            let vj = if trial_curl { bt.deriv[j] } else { bt.value[j] };
                            buf[i * lc + j] += s * dot(vi, vj);
                        }
                    }
                }
            })
        }
        FormKind::GradCoupling => assemble_cells(mesh, test, trial, |t, buf| {
            for (p, w) in q.points.iter().zip(&uw) {
                let bt = eval_basis(trial.kind(), mesh, t, p);
                let bs = eval_basis(test.kind(), mesh, t, p);
                let s = w * vol[t];
                for i in 0..lr {
                    for j in 0..lc {
                        buf[i * lc + j] += s * dot(bs.value[i], bt.deriv[j]);
                    }
                }
            }
        }),
        FormKind::VecLaplaceCR => assemble_cells(mesh, test, trial, |t, buf| {
            // gradients are constant per tet
            let b = eval_basis(CRvec, mesh, t, &[0.25; 4]);
            for i in 0..12 {
                for j in 0..12 {
                    if i % 3 == j % 3 {
                        buf[i * 12 + j] = vol[t] * dot(b.deriv[i], b.deriv[j]);
                    }
                }
            }
        }),
        FormKind::DivCRP0 => assemble_cells(mesh, test, trial, |t, buf| {
            let b = eval_basis(CRvec, mesh, t, &[0.25; 4]);
            for j in 0..12 {
                buf[j] = vol[t] * b.deriv[j][j % 3];
            }
        }),
        FormKind::MeanConstraint => {
            let n = trial.ndofs();
            let mut row = vec![0.0; n];
            for t in 0..mesh.num_tets() {
                row[trial.dofs(t)[0]] += vol[t];
            }
            let trip: Vec<(usize, usize, f64)> = row.iter().enumerate().map(|(j, v)| (0, j, *v)).collect();
            CsrMatrix::from_triplets(1, n, &trip)
        }
    };
    Ok(m)
}

/// Right-hand side data of a load vector.
#[derive(Clone, Copy)]
pub enum Load<'a> {
    Zero,
    Scalar(&'a dyn Fn(Point) -> f64),
    Vector(&'a dyn Fn(Point) -> Vec3),
    /// Value of a finite element function (scalar kinds use slot 0).
    FeValue(&'a FeFunction),
    /// Curl of an edge-element function.
    FeCurl(&'a FeFunction),
}

/// How the test functions enter a load vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TestOp {
    Value,
    Curl,
}

pub fn assemble_load(test: &DofMap, data: Load, op: TestOp, mesh: &TetMesh, qorder: usize) -> Result<Vec<f64>, AssemblyError> {
    let mut out = vec![0.0; test.ndofs()];
    if let Load::Zero = data {
        return Ok(out);
    }
    if op == TestOp::Curl && !matches!(test.kind(), SpaceKind::ND0 | SpaceKind::ND1) {
        return Err(AssemblyError::DimensionMismatch(format!("curl of {:?} test functions", test.kind())));
    }
    let q = quadrature(Entity::Tet, qorder)?;
    let uw = q.unit_weights();
    let vol = &mesh.geometry().tet_volume;
    let scalar = !test.kind().is_vector();
    for t in 0..mesh.num_tets() {
        let dofs = test.dofs(t);
        for (p, w) in q.points.iter().zip(&uw) {
            let d: Vec3 = match data {
                Load::Zero => [0.0; 3],
                Load::Scalar(f) => [f(mesh.point(t, p)), 0.0, 0.0],
                Load::Vector(f) => f(mesh.point(t, p)),
                Load::FeValue(u) => u.value(mesh, t, p),
                Load::FeCurl(u) => u.curl(mesh, t, p),
            };
            let b = eval_basis(test.kind(), mesh, t, p);
            let s = w * vol[t];
            for i in 0..b.n {
                let v = match op {
                    TestOp::Curl => dot(d, b.deriv[i]),
                    TestOp::Value if scalar => d[0] * b.value[i][0],
                    TestOp::Value => dot(d, b.value[i]),
                };
                out[dofs[i]] += s * v;
            }
        }
    }
    Ok(out)
}

/// A reduced symmetric saddle-point system
///
/// ```text
/// [ A  Bᵀ  0 ] [x]   [f]
/// [ B  0   c ] [y] = [g]
/// [ 0  cᵀ  0 ] [λ]   [0]
/// ```
///
/// with essential boundary dofs eliminated; the last block row/column exists
/// only when a mean constraint on the multiplier is requested.
#[derive(Clone, Debug)]
pub struct SaddleSystem {
    pub a: CsrMatrix,
    pub b: CsrMatrix,
    pub mean: Option<Vec<f64>>,
    pub f: Vec<f64>,
    pub g: Vec<f64>,
    pub recovery: Recovery,
}

/// Maps reduced solution vectors back to full dof vectors.
#[derive(Clone, Debug)]
pub struct Recovery {
    pub n_primal: usize,
    pub primal_free: Vec<usize>,
    pub primal_bc: BcData,
    pub n_mult: usize,
    pub mult_free: Vec<usize>,
    pub mult_bc: BcData,
}

impl Recovery {
    pub fn primal(&self, xr: &[f64]) -> Vec<f64> {
        scatter(self.n_primal, &self.primal_free, xr, &self.primal_bc)
    }
    pub fn multiplier(&self, yr: &[f64]) -> Vec<f64> {
        scatter(self.n_mult, &self.mult_free, yr, &self.mult_bc)
    }
}

fn scatter(n: usize, free: &[usize], xr: &[f64], bc: &BcData) -> Vec<f64> {
    let mut x = vec![0.0; n];
    for (&i, &v) in free.iter().zip(xr) {
        x[i] = v;
    }
    for (&i, &v) in bc.dofs.iter().zip(&bc.values) {
        x[i] = v;
    }
    x
}

fn free_map(n: usize, bc: &BcData) -> (Vec<Option<usize>>, Vec<usize>) {
    let mut fixed = vec![false; n];
    for &d in &bc.dofs {
        fixed[d] = true;
    }
    let mut map = vec![None; n];
    let mut free = Vec::new();
    for i in 0..n {
        if !fixed[i] {
            map[i] = Some(free.len());
            free.push(i);
        }
    }
    (map, free)
}

impl SaddleSystem {
    pub fn n_primal(&self) -> usize {
        self.a.nrows()
    }
    pub fn n_mult(&self) -> usize {
        self.b.nrows()
    }
    pub fn dim(&self) -> usize {
        self.n_primal() + self.n_mult() + usize::from(self.mean.is_some())
    }

    /// The full block matrix in CSR form.
    pub fn matrix(&self) -> CsrMatrix {
        let (n, m) = (self.n_primal(), self.n_mult());
        let mut trip = Vec::with_capacity(self.a.nnz() + 2 * self.b.nnz() + 2 * m);
        trip.extend(self.a.triplets());
        for (i, j, v) in self.b.triplets() {
            trip.push((n + i, j, v));
            trip.push((j, n + i, v));
        }
        if let Some(c) = &self.mean {
            for (i, &v) in c.iter().enumerate() {
                if v != 0.0 {
                    trip.push((n + i, n + m, v));
                    trip.push((n + m, n + i, v));
                }
            }
        }
        let d = self.dim();
        CsrMatrix::from_triplets(d, d, &trip)
    }

    pub fn rhs(&self) -> Vec<f64> {
        let mut r = self.f.clone();
        r.extend_from_slice(&self.g);
        if self.mean.is_some() {
            r.push(0.0);
        }
        r
    }

    /// Splits a reduced solution into full primal and multiplier vectors.
    pub fn recover(&self, sol: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = self.n_primal();
        let m = self.n_mult();
        (self.recovery.primal(&sol[..n]), self.recovery.multiplier(&sol[n..n + m]))
    }
}

/// Eliminates essential dofs by substitution and borders the multiplier block
/// with `mean_scale * (q, 1)` when `mean` is given.
#[allow(clippy::too_many_arguments)]
pub fn build_saddle(
    a: &CsrMatrix,
    b: &CsrMatrix,
    f: &[f64],
    g: &[f64],
    primal_bc: &BcData,
    mult_bc: &BcData,
    mean: Option<(&[f64], f64)>,
) -> Result<SaddleSystem, AssemblyError> {
    let n = a.nrows();
    let m = b.nrows();
    if a.ncols() != n || b.ncols() != n || f.len() != n || g.len() != m {
        return Err(AssemblyError::DimensionMismatch(format!(
            "A {}x{}, B {}x{}, f {}, g {}",
            a.nrows(),
            a.ncols(),
            b.nrows(),
            b.ncols(),
            f.len(),
            g.len()
        )));
    }
    if let Some((c, _)) = mean {
        if c.len() != m {
            return Err(AssemblyError::DimensionMismatch(format!("mean row {} vs {m}", c.len())));
        }
    }
    let (pmap, pfree) = free_map(n, primal_bc);
    let (mmap, mfree) = free_map(m, mult_bc);
    let mut xd = vec![0.0; n];
    for (&i, &v) in primal_bc.dofs.iter().zip(&primal_bc.values) {
        xd[i] = v;
    }
    let mut yd = vec![0.0; m];
    for (&i, &v) in mult_bc.dofs.iter().zip(&mult_bc.values) {
        yd[i] = v;
    }
    let axd = a.mul_vec(&xd);
    let btyd = b.tr_mul_vec(&yd);
    let bxd = b.mul_vec(&xd);
    let fr: Vec<f64> = pfree.iter().map(|&i| f[i] - axd[i] - btyd[i]).collect();
    let gr: Vec<f64> = mfree.iter().map(|&i| g[i] - bxd[i]).collect();
    let ar = a.submatrix(&pmap, pfree.len(), &pmap, pfree.len());
    let br = b.submatrix(&mmap, mfree.len(), &pmap, pfree.len());
    let mean = mean.map(|(c, s)| mfree.iter().map(|&i| s * c[i]).collect());
    Ok(SaddleSystem {
        a: ar,
        b: br,
        mean,
        f: fr,
        g: gr,
        recovery: Recovery {
            n_primal: n,
            primal_free: pfree,
            primal_bc: primal_bc.clone(),
            n_mult: m,
            mult_free: mfree,
            mult_bc: mult_bc.clone(),
        },
    })
}

/// Writes a matrix in Matrix Market coordinate format.
pub fn write_matrix_market(m: &CsrMatrix, path: &Path) -> Result<(), AssemblyError> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "%%MatrixMarket matrix coordinate real general")?;
    writeln!(w, "{} {} {}", m.nrows(), m.ncols(), m.nnz())?;
    for (i, j, v) in m.triplets() {
        writeln!(w, "{} {} {:.17e}", i + 1, j + 1, v)?;
    }
    Ok(())
}

/// Writes a vector as a Matrix Market dense array.
pub fn write_vector_market(v: &[f64], path: &Path) -> Result<(), AssemblyError> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "%%MatrixMarket matrix array real general")?;
    writeln!(w, "{} 1", v.len())?;
    for x in v {
        writeln!(w, "{:.17e}", x)?;
    }
    Ok(())
}

fn parse_err(line: usize, msg: impl Into<String>) -> AssemblyError {
    AssemblyError::Parse { line, msg: msg.into() }
}

/// Header banner and the remaining non-comment lines, numbered from 1.
fn market_body(text: &str) -> Result<(String, Vec<(usize, &str)>), AssemblyError> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (_, banner) = lines.next().ok_or_else(|| parse_err(1, "empty file"))?;
    if !banner.starts_with("%%MatrixMarket") {
        return Err(parse_err(1, "missing %%MatrixMarket banner"));
    }
    let body = lines.filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('%')).collect();
    Ok((banner.to_ascii_lowercase(), body))
}

fn fields<T: std::str::FromStr>(line: usize, s: &str, n: usize) -> Result<Vec<T>, AssemblyError> {
    let v: Vec<T> = s
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| parse_err(line, format!("bad token {t:?}"))))
        .collect::<Result<_, _>>()?;
    if v.len() != n {
        return Err(parse_err(line, format!("expected {n} fields, found {}", v.len())));
    }
    Ok(v)
}

/// Reads a real coordinate matrix; `symmetric` storage is expanded.
pub fn read_matrix_market(path: &Path) -> Result<CsrMatrix, AssemblyError> {
    let text = std::fs::read_to_string(path)?;
    let (banner, body) = market_body(&text)?;
    if !banner.contains("coordinate") || !banner.contains("real") {
        return Err(parse_err(1, "only real coordinate matrices are supported"));
    }
    let symmetric = banner.contains("symmetric");
    let mut it = body.into_iter();
    let (ln, size) = it.next().ok_or_else(|| parse_err(2, "missing size line"))?;
    let dims: Vec<usize> = fields(ln, size, 3)?;
    let (nr, nc, nnz) = (dims[0], dims[1], dims[2]);
    let mut trip = Vec::with_capacity(if symmetric { 2 * nnz } else { nnz });
    let mut count = 0;
    for (ln, l) in it {
        let t: Vec<&str> = l.split_whitespace().collect();
        if t.len() != 3 {
            return Err(parse_err(ln, "expected `row col value`"));
        }
        let i: usize = t[0].parse().map_err(|_| parse_err(ln, "bad row index"))?;
        let j: usize = t[1].parse().map_err(|_| parse_err(ln, "bad column index"))?;
        let v: f64 = t[2].parse().map_err(|_| parse_err(ln, "bad value"))?;
        if i == 0 || j == 0 || i > nr || j > nc {
            return Err(parse_err(ln, format!("index ({i}, {j}) outside {nr} x {nc}")));
        }
        trip.push((i - 1, j - 1, v));
        if symmetric && i != j {
            trip.push((j - 1, i - 1, v));
        }
        count += 1;
    }
    if count != nnz {
        return Err(parse_err(0, format!("header promises {nnz} entries, found {count}")));
    }
    Ok(CsrMatrix::from_triplets(nr, nc, &trip))
}

/// Reads a single-column dense array.
pub fn read_vector_market(path: &Path) -> Result<Vec<f64>, AssemblyError> {
    let text = std::fs::read_to_string(path)?;
    let (banner, body) = market_body(&text)?;
    if !banner.contains("array") {
        return Err(parse_err(1, "vectors must use array format"));
    }
    let mut it = body.into_iter();
    let (ln, size) = it.next().ok_or_else(|| parse_err(2, "missing size line"))?;
    let dims: Vec<usize> = fields(ln, size, 2)?;
    if dims[1] != 1 {
        return Err(parse_err(ln, "expected a single column"));
    }
    let v: Vec<f64> = it.map(|(ln, l)| fields::<f64>(ln, l, 1).map(|x| x[0])).collect::<Result<_, _>>()?;
    if v.len() != dims[0] {
        return Err(parse_err(0, format!("header promises {} values, found {}", dims[0], v.len())));
    }
    Ok(v)
}
