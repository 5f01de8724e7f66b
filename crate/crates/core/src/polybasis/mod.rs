//! Scaled polynomial bases on cells and faces, the L²-projector, and the
//! diffusion-weighted (oblique) elliptic projector with its approximation
//! rate estimators.
//!
//! Cell bases are scaled monomials ((x − x_T)/h_T)^α ordered by total degree
//! and then by descending x-exponent; face bases are powers of the scaled
//! tangential coordinate. Local Gram systems are solved through a modified
//! Gram–Schmidt re-orthogonalization whenever the mass-matrix condition
//! estimate exceeds 1e8 (thin cells), which keeps the projectors usable on
//! badly shaped polygons.

pub mod quadrature;

pub use quadrature::{gauss_legendre, polygon_quadrature, segment_quadrature, Quadrature};

use crate::geometry::{SpdTensor2, Vec2};
use crate::mesh::Mesh;
use crate::Result;
use nalgebra::{DMatrix, DVector};

/// Smooth scalar function with analytic derivatives through second order.
pub struct SmoothFn<'a> {
    pub value: &'a dyn Fn(Vec2) -> f64,
    pub grad: &'a dyn Fn(Vec2) -> Vec2,
    /// (∂xx, ∂xy, ∂yy)
    pub hess: &'a dyn Fn(Vec2) -> (f64, f64, f64),
}

/// Exponent pairs of the 2D monomials of total degree <= k, graded order.
pub fn monomial_exponents(k: usize) -> Vec<(u32, u32)> {
    let mut exps = Vec::with_capacity((k + 1) * (k + 2) / 2);
    for d in 0..=k as u32 {
        for b in 0..=d {
            exps.push((d - b, b));
        }
    }
    exps
}

/// Dimension of P^k in 2D.
pub fn poly_dim(k: usize) -> usize {
    (k + 1) * (k + 2) / 2
}

/// Scaled monomial basis of P^k(T): m_α(x) = ((x − x_T)/h_T)^α.
#[derive(Debug, Clone)]
pub struct CellBasis {
    pub center: Vec2,
    pub h: f64,
    pub degree: usize,
    pub exps: Vec<(u32, u32)>,
}

impl CellBasis {
    pub fn new(center: Vec2, h: f64, degree: usize) -> Self {
        Self {
            center,
            h,
            degree,
            exps: monomial_exponents(degree),
        }
    }

    pub fn for_cell(mesh: &Mesh, ci: usize, degree: usize) -> Self {
        let c = &mesh.cells[ci];
        Self::new(c.point, c.diameter, degree)
    }

    pub fn dim(&self) -> usize {
        self.exps.len()
    }

    fn local(&self, x: Vec2) -> (f64, f64) {
        ((x.x - self.center.x) / self.h, (x.y - self.center.y) / self.h)
    }

    pub fn eval(&self, j: usize, x: Vec2) -> f64 {
        let (u, v) = self.local(x);
        let (a, b) = self.exps[j];
        u.powi(a as i32) * v.powi(b as i32)
    }

    pub fn eval_all(&self, x: Vec2) -> Vec<f64> {
        (0..self.dim()).map(|j| self.eval(j, x)).collect()
    }

    pub fn grad(&self, j: usize, x: Vec2) -> Vec2 {
        let (u, v) = self.local(x);
        let (a, b) = self.exps[j];
        let (af, bf) = (a as f64, b as f64);
        let gx = if a == 0 { 0.0 } else { af * u.powi(a as i32 - 1) * v.powi(b as i32) };
        let gy = if b == 0 { 0.0 } else { bf * u.powi(a as i32) * v.powi(b as i32 - 1) };
        Vec2::new(gx / self.h, gy / self.h)
    }

    /// (∂xx, ∂xy, ∂yy) of basis j.
    pub fn hess(&self, j: usize, x: Vec2) -> (f64, f64, f64) {
        let (u, v) = self.local(x);
        let (a, b) = self.exps[j];
        let (af, bf) = (a as f64, b as f64);
        let h2 = self.h * self.h;
        let xx = if a >= 2 { af * (af - 1.0) * u.powi(a as i32 - 2) * v.powi(b as i32) } else { 0.0 };
        let yy = if b >= 2 { bf * (bf - 1.0) * u.powi(a as i32) * v.powi(b as i32 - 2) } else { 0.0 };
        let xy = if a >= 1 && b >= 1 {
            af * bf * u.powi(a as i32 - 1) * v.powi(b as i32 - 1)
        } else {
            0.0
        };
        (xx / h2, xy / h2, yy / h2)
    }

    /// Coefficients of ∇·(K ∇ m_j) in this basis (degree <= k − 2 terms).
    pub fn divergence_k_grad(&self, k_t: &SpdTensor2, j: usize) -> Vec<(usize, f64)> {
        let (a, b) = self.exps[j];
        let (af, bf) = (a as f64, b as f64);
        let h2 = self.h * self.h;
        let mut out = Vec::new();
        let mut push = |exp: (u32, u32), c: f64| {
            if c != 0.0 {
                let idx = self
                    .exps
                    .iter()
                    .position(|&e| e == exp)
                    .expect("exponent in basis");
                out.push((idx, c));
            }
        };
        if a >= 2 {
            push((a - 2, b), k_t.xx * af * (af - 1.0) / h2);
        }
        if a >= 1 && b >= 1 {
            push((a - 1, b - 1), 2.0 * k_t.xy * af * bf / h2);
        }
        if b >= 2 {
            push((a, b - 2), k_t.yy * bf * (bf - 1.0) / h2);
        }
        out
    }
}

/// A polynomial on a cell, stored by its scaled-monomial coefficients.
#[derive(Debug, Clone)]
pub struct CellPoly {
    pub basis: CellBasis,
    pub coeffs: DVector<f64>,
}

impl CellPoly {
    pub fn eval(&self, x: Vec2) -> f64 {
        (0..self.basis.dim())
            .map(|j| self.coeffs[j] * self.basis.eval(j, x))
            .sum()
    }

    pub fn grad(&self, x: Vec2) -> Vec2 {
        (0..self.basis.dim())
            .map(|j| self.coeffs[j] * self.basis.grad(j, x))
            .sum()
    }

    pub fn hess(&self, x: Vec2) -> (f64, f64, f64) {
        let mut acc = (0.0, 0.0, 0.0);
        for j in 0..self.basis.dim() {
            let h = self.basis.hess(j, x);
            acc.0 += self.coeffs[j] * h.0;
            acc.1 += self.coeffs[j] * h.1;
            acc.2 += self.coeffs[j] * h.2;
        }
        acc
    }
}

/// Scaled 1D monomial basis on a face: m_j(x) = ((x − x_F)·t / h_F)^j.
#[derive(Debug, Clone)]
pub struct FaceBasis {
    pub point: Vec2,
    pub tangent: Vec2,
    pub h: f64,
    pub degree: usize,
}

impl FaceBasis {
    pub fn for_face(mesh: &Mesh, fi: usize, degree: usize) -> Self {
        let f = &mesh.faces[fi];
        Self {
            point: f.point,
            tangent: f.tangent(mesh),
            h: f.diameter,
            degree,
        }
    }

    pub fn dim(&self) -> usize {
        self.degree + 1
    }

    pub fn eval(&self, j: usize, x: Vec2) -> f64 {
        let s = (x - self.point).dot(&self.tangent) / self.h;
        s.powi(j as i32)
    }
}

/// Mass matrix (m_i, m_j) of a cell basis under the given rule.
pub fn cell_mass_matrix(basis: &CellBasis, quad: &Quadrature) -> DMatrix<f64> {
    let n = basis.dim();
    let mut m = DMatrix::zeros(n, n);
    for (x, w) in quad.nodes.iter().zip(&quad.weights) {
        let vals = basis.eval_all(*x);
        for i in 0..n {
            for j in i..n {
                m[(i, j)] += w * vals[i] * vals[j];
            }
        }
    }
    for i in 0..n {
        for j in 0..i {
            m[(i, j)] = m[(j, i)];
        }
    }
    m
}

/// Face mass matrix of a face basis.
pub fn face_mass_matrix(fb: &FaceBasis, quad: &Quadrature) -> DMatrix<f64> {
    let n = fb.dim();
    let mut m = DMatrix::zeros(n, n);
    for (x, w) in quad.nodes.iter().zip(&quad.weights) {
        let vals: Vec<f64> = (0..n).map(|j| fb.eval(j, *x)).collect();
        for i in 0..n {
            for j in 0..n {
                m[(i, j)] += w * vals[i] * vals[j];
            }
        }
    }
    m
}

/// K-weighted gradient Gram matrix (K ∇m_i, ∇m_j)_T.
pub fn gradient_gram(basis: &CellBasis, k_t: &SpdTensor2, quad: &Quadrature) -> DMatrix<f64> {
    let n = basis.dim();
    let mut g = DMatrix::zeros(n, n);
    for (x, w) in quad.nodes.iter().zip(&quad.weights) {
        let grads: Vec<Vec2> = (0..n).map(|j| basis.grad(j, *x)).collect();
        for i in 0..n {
            let kg = k_t.apply(grads[i]);
            for j in i..n {
                g[(i, j)] += w * kg.dot(&grads[j]);
            }
        }
    }
    for i in 0..n {
        for j in 0..i {
            g[(i, j)] = g[(j, i)];
        }
    }
    g
}

/// Solve the SPD Gram system M c = r, re-orthogonalizing by modified
/// Gram–Schmidt in the M-inner product when cond(M) exceeds 1e8.
pub fn solve_gram(m: &DMatrix<f64>, rhs: &DVector<f64>) -> DVector<f64> {
    let eig = m.clone().symmetric_eigen();
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    if min > 0.0 && max / min < 1e8 {
        return m
            .clone()
            .cholesky()
            .expect("SPD Gram matrix")
            .solve(rhs);
    }
    // M⁻¹ = C Cᵀ with Cᵀ M C = I from MGS against M.
    let c = mgs_against(m);
    &c * (c.transpose() * rhs)
}

/// Columns C with Cᵀ M C = I, by modified Gram–Schmidt (run twice).
fn mgs_against(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    let mut c = DMatrix::<f64>::identity(n, n);
    for i in 0..n {
        let mut v = c.column(i).clone_owned();
        for _ in 0..2 {
            for j in 0..i {
                let cj = c.column(j).clone_owned();
                let proj = cj.dot(&(m * &v));
                v -= proj * cj;
            }
        }
        let norm = (v.dot(&(m * &v))).sqrt();
        v /= norm;
        c.set_column(i, &v);
    }
    c
}

/// Degree of cell quadrature used on non-polynomial (smooth) integrands.
pub const SMOOTH_QUAD_DEGREE: usize = 12;

/// L²-projection of `f` onto P^l(T).
pub fn l2_project(
    mesh: &Mesh,
    ci: usize,
    f: &dyn Fn(Vec2) -> f64,
    l: usize,
    sampling_degree: usize,
) -> Result<CellPoly> {
    let basis = CellBasis::for_cell(mesh, ci, l);
    let quad = polygon_quadrature(&mesh.cell_vertices(ci), 2 * l + sampling_degree)?;
    let m = cell_mass_matrix(&basis, &quad);
    let n = basis.dim();
    let mut rhs = DVector::zeros(n);
    for (x, w) in quad.nodes.iter().zip(&quad.weights) {
        let fv = f(*x);
        for i in 0..n {
            rhs[i] += w * fv * basis.eval(i, *x);
        }
    }
    Ok(CellPoly {
        coeffs: solve_gram(&m, &rhs),
        basis,
    })
}

/// L²-projection of `f` onto P^l(F); returns face-basis coefficients.
pub fn face_l2_project(
    mesh: &Mesh,
    fi: usize,
    f: &dyn Fn(Vec2) -> f64,
    l: usize,
    sampling_degree: usize,
) -> (FaceBasis, DVector<f64>) {
    let fb = FaceBasis::for_face(mesh, fi, l);
    let face = &mesh.faces[fi];
    let (a, b) = (mesh.vertices[face.verts[0]], mesh.vertices[face.verts[1]]);
    let quad = segment_quadrature(a, b, 2 * l + sampling_degree);
    let m = face_mass_matrix(&fb, &quad);
    let n = fb.dim();
    let mut rhs = DVector::zeros(n);
    for (x, w) in quad.nodes.iter().zip(&quad.weights) {
        let fv = f(*x);
        for i in 0..n {
            rhs[i] += w * fv * fb.eval(i, *x);
        }
    }
    let coeffs = solve_gram(&m, &rhs);
    (fb, coeffs)
}

/// Closure equation fixing the constant part of the oblique projector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObliqueClosure {
    /// ∫_T π v = ∫_T v
    CellMean,
    /// Σ_F ∫_F π v = Σ_F ∫_F v
    BoundaryMean,
}

/// Shared core of the oblique projector: given the Galerkin right side
/// r_i = (K ∇v, ∇m_i)_T for the non-constant basis functions and the
/// closure datum (∫_T v or Σ_F ∫_F v), produce the polynomial.
#[allow(clippy::too_many_arguments)]
fn oblique_from_parts(
    mesh: &Mesh,
    ci: usize,
    k_t: &SpdTensor2,
    k: usize,
    grad_rhs: &DVector<f64>,
    closure: ObliqueClosure,
    closure_value: f64,
    quad: &Quadrature,
) -> CellPoly {
    let basis = CellBasis::for_cell(mesh, ci, k);
    let n = basis.dim();
    let g = gradient_gram(&basis, k_t, quad);
    // Restrict to the non-constant block (the constant has zero gradient).
    let gm = g.view((1, 1), (n - 1, n - 1)).clone_owned();
    let r = grad_rhs.rows(1, n - 1).clone_owned();
    let c_tail = solve_gram(&gm, &r);
    let mut coeffs = DVector::zeros(n);
    for i in 1..n {
        coeffs[i] = c_tail[i - 1];
    }
    // Fix the constant from the closure equation.
    match closure {
        ObliqueClosure::CellMean => {
            let mut tail_int = 0.0;
            for (x, w) in quad.nodes.iter().zip(&quad.weights) {
                for i in 1..n {
                    tail_int += w * coeffs[i] * basis.eval(i, *x);
                }
            }
            coeffs[0] = (closure_value - tail_int) / mesh.cells[ci].measure;
        }
        ObliqueClosure::BoundaryMean => {
            let mut tail_int = 0.0;
            let mut perimeter = 0.0;
            for cf in &mesh.cells[ci].faces {
                let face = &mesh.faces[cf.face];
                let (a, b) = (mesh.vertices[face.verts[0]], mesh.vertices[face.verts[1]]);
                let fq = segment_quadrature(a, b, k + 1);
                perimeter += face.measure;
                for (x, w) in fq.nodes.iter().zip(&fq.weights) {
                    for i in 1..n {
                        tail_int += w * coeffs[i] * basis.eval(i, *x);
                    }
                }
            }
            coeffs[0] = (closure_value - tail_int) / perimeter;
        }
    }
    CellPoly { basis, coeffs }
}

/// Oblique elliptic projector of an explicit function onto P^k(T):
/// (K∇πv, ∇w)_T = (K∇v, ∇w)_T for all w ∈ P^k(T), plus the closure.
pub fn oblique_project_fn(
    mesh: &Mesh,
    ci: usize,
    k_t: &SpdTensor2,
    k: usize,
    v: &dyn Fn(Vec2) -> f64,
    grad_v: &dyn Fn(Vec2) -> Vec2,
    closure: ObliqueClosure,
) -> Result<CellPoly> {
    let basis = CellBasis::for_cell(mesh, ci, k);
    let quad = polygon_quadrature(
        &mesh.cell_vertices(ci),
        (2 * k).max(2) + SMOOTH_QUAD_DEGREE,
    )?;
    let n = basis.dim();
    let mut rhs = DVector::zeros(n);
    for (x, w) in quad.nodes.iter().zip(&quad.weights) {
        let kg = k_t.apply(grad_v(*x));
        for i in 1..n {
            rhs[i] += w * kg.dot(&basis.grad(i, *x));
        }
    }
    let closure_value = match closure {
        ObliqueClosure::CellMean => quad.integrate(v),
        ObliqueClosure::BoundaryMean => {
            let mut acc = 0.0;
            for cf in &mesh.cells[ci].faces {
                let face = &mesh.faces[cf.face];
                let (a, b) = (mesh.vertices[face.verts[0]], mesh.vertices[face.verts[1]]);
                let fq = segment_quadrature(a, b, 2 * k + SMOOTH_QUAD_DEGREE);
                acc += fq.integrate(v);
            }
            acc
        }
    };
    Ok(oblique_from_parts(
        mesh,
        ci,
        k_t,
        k,
        &rhs,
        closure,
        closure_value,
        &quad,
    ))
}

/// Moments of a function on one face of a cell: normalized face moments
/// μ_j = (1/|F|) ∫_F v m_j against the scaled face basis.
#[derive(Debug, Clone)]
pub struct FaceMoments {
    pub basis: FaceBasis,
    pub measure: f64,
    pub normal: Vec2,
    /// μ_j for j = 0..=degree.
    pub moments: Vec<f64>,
}

/// The degree-of-freedom payload sufficient to evaluate the oblique
/// projector by integration by parts: face moments up to degree k−1 and
/// normalized cell moments (1/|T|) ∫_T v m_α up to degree k−2.
#[derive(Debug, Clone)]
pub struct MomentData {
    /// One entry per face of the cell, in the cell's face order.
    pub faces: Vec<FaceMoments>,
    /// Normalized cell moments, graded order (empty for k = 1).
    pub cell: Vec<f64>,
}

/// Oblique projector evaluated from moment data (the VEM route):
/// (K∇πv, ∇w)_T = −(π^{0,k−2}v, ∇·(K∇w))_T + Σ_F (π^{0,k−1}_F v, K∇w·n_TF)_F.
pub fn oblique_project_moments(
    mesh: &Mesh,
    ci: usize,
    k_t: &SpdTensor2,
    k: usize,
    data: &MomentData,
    closure: ObliqueClosure,
) -> Result<CellPoly> {
    let basis = CellBasis::for_cell(mesh, ci, k);
    let quad = polygon_quadrature(&mesh.cell_vertices(ci), 2 * k)?;
    let n = basis.dim();
    let area = mesh.cells[ci].measure;
    let mut rhs = DVector::zeros(n);
    for i in 1..n {
        // Volume part: −(v, ∇·(K∇m_i))_T, exact because the divergence has
        // degree ≤ k−2 and those moments of v are part of the data.
        for (idx, coef) in basis.divergence_k_grad(k_t, i) {
            rhs[i] -= coef * area * data.cell[idx];
        }
        // Face part: (v, K∇m_i·n)_F with K∇m_i·n ∈ P^{k−1}(F), recovered
        // from the face moments of v.
        for (cf, fm) in mesh.cells[ci].faces.iter().zip(&data.faces) {
            let face = &mesh.faces[cf.face];
            let (a, b) = (mesh.vertices[face.verts[0]], mesh.vertices[face.verts[1]]);
            let fq = segment_quadrature(a, b, 2 * k);
            // Expand g = K∇m_i·n in the face basis.
            let mf = face_mass_matrix(&fm.basis, &fq);
            let mut r = DVector::zeros(fm.basis.dim());
            for (x, w) in fq.nodes.iter().zip(&fq.weights) {
                let g = k_t.apply(basis.grad(i, *x)).dot(&fm.normal);
                for j in 0..fm.basis.dim() {
                    r[j] += w * g * fm.basis.eval(j, *x);
                }
            }
            let d = solve_gram(&mf, &r);
            // (v, g)_F = Σ_j d_j ∫_F v m_j = Σ_j d_j |F| μ_j … with m_j the
            // face basis; ∫ v m_j needs the *unnormalized* Gram against μ.
            // d are the coefficients of g, so (v, g) = Σ_j d_j (v, m_j)
            // only once (v, m_j) = |F| μ_j — which is the definition of μ.
            for j in 0..fm.basis.dim() {
                rhs[i] += d[j] * fm.measure * fm.moments[j];
            }
        }
    }
    let closure_value = match closure {
        ObliqueClosure::CellMean => area * data.cell[0],
        ObliqueClosure::BoundaryMean => data
            .faces
            .iter()
            .map(|fm| fm.measure * fm.moments[0])
            .sum(),
    };
    Ok(oblique_from_parts(
        mesh,
        ci,
        k_t,
        k,
        &rhs,
        closure,
        closure_value,
        &quad,
    ))
}

/// Compute the moment data of an explicit function on a cell (quadrature
/// on the analytic function).
pub fn moments_of_fn(
    mesh: &Mesh,
    ci: usize,
    v: &dyn Fn(Vec2) -> f64,
    k: usize,
) -> Result<MomentData> {
    let mut faces = Vec::new();
    for cf in &mesh.cells[ci].faces {
        let face = &mesh.faces[cf.face];
        let fb = FaceBasis::for_face(mesh, cf.face, k - 1);
        let (a, b) = (mesh.vertices[face.verts[0]], mesh.vertices[face.verts[1]]);
        let fq = segment_quadrature(a, b, k - 1 + SMOOTH_QUAD_DEGREE);
        let moments = (0..fb.dim())
            .map(|j| fq.integrate(|x| v(x) * fb.eval(j, x)) / face.measure)
            .collect();
        faces.push(FaceMoments {
            basis: fb,
            measure: face.measure,
            normal: cf.normal,
            moments,
        });
    }
    let cell = if k >= 2 {
        let cb = CellBasis::for_cell(mesh, ci, k - 2);
        let q = polygon_quadrature(&mesh.cell_vertices(ci), k - 2 + SMOOTH_QUAD_DEGREE)?;
        let area = mesh.cells[ci].measure;
        (0..cb.dim())
            .map(|j| q.integrate(|x| v(x) * cb.eval(j, x)) / area)
            .collect()
    } else {
        Vec::new()
    };
    Ok(MomentData { faces, cell })
}

/// Which projector a rate study exercises.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProjectorKind {
    L2,
    Oblique,
}

/// One refinement level of a projector rate study.
#[derive(Debug, Clone, Copy)]
pub struct RateRow {
    pub h: f64,
    /// L2 projector: ‖v − πv‖_T;  oblique: ‖K^{1/2}∇(v − πv)‖_T.
    pub err_m0: f64,
    /// L2 projector: |v − πv|_{H¹};  oblique: |K^{1/2}∇(v − πv)|_{H¹}.
    pub err_m1: f64,
    /// L2 projector: ‖v − πv‖_{∂T};  oblique: h^{1/2}‖K^{1/2}∇(v−πv)‖_{∂T}.
    pub err_trace: f64,
}

/// Per-level projection errors of a smooth function on uniform Cartesian
/// meshes of the unit square (one row per level).
pub fn projector_rate_study(
    kind: ProjectorKind,
    k_t: &SpdTensor2,
    v: &SmoothFn,
    k: usize,
    levels: &[usize],
) -> Result<Vec<RateRow>> {
    let k_sqrt = k_t.sqrt();
    let mut rows = Vec::new();
    for &n in levels {
        let mesh = Mesh::build_cartesian(n, n, Vec2::zeros(), Vec2::new(1.0, 1.0), 1)?;
        let mut m0 = 0.0;
        let mut m1 = 0.0;
        let mut tr = 0.0;
        for ci in 0..mesh.cells.len() {
            let proj = match kind {
                ProjectorKind::L2 => l2_project(&mesh, ci, v.value, k, SMOOTH_QUAD_DEGREE)?,
                ProjectorKind::Oblique => oblique_project_fn(
                    &mesh,
                    ci,
                    k_t,
                    k,
                    v.value,
                    v.grad,
                    ObliqueClosure::CellMean,
                )?,
            };
            let quad =
                polygon_quadrature(&mesh.cell_vertices(ci), 2 * k + SMOOTH_QUAD_DEGREE)?;
            match kind {
                ProjectorKind::L2 => {
                    m0 += quad.integrate(|x| {
                        let e = (v.value)(x) - proj.eval(x);
                        e * e
                    });
                    m1 += quad.integrate(|x| {
                        let e = (v.grad)(x) - proj.grad(x);
                        e.norm_squared()
                    });
                }
                ProjectorKind::Oblique => {
                    m0 += quad.integrate(|x| {
                        k_sqrt.apply((v.grad)(x) - proj.grad(x)).norm_squared()
                    });
                    m1 += quad.integrate(|x| {
                        let (vxx, vxy, vyy) = (v.hess)(x);
                        let (pxx, pxy, pyy) = proj.hess(x);
                        // Frobenius norm of K^{1/2} (H_v − H_π).
                        let c1 = k_sqrt.apply(Vec2::new(vxx - pxx, vxy - pxy));
                        let c2 = k_sqrt.apply(Vec2::new(vxy - pxy, vyy - pyy));
                        c1.norm_squared() + c2.norm_squared()
                    });
                }
            }
            let h_t = mesh.cells[ci].diameter;
            for cf in &mesh.cells[ci].faces {
                let face = &mesh.faces[cf.face];
                let (a, b) = (mesh.vertices[face.verts[0]], mesh.vertices[face.verts[1]]);
                let fq = segment_quadrature(a, b, 2 * k + SMOOTH_QUAD_DEGREE);
                tr += match kind {
                    ProjectorKind::L2 => fq.integrate(|x| {
                        let e = (v.value)(x) - proj.eval(x);
                        e * e
                    }),
                    ProjectorKind::Oblique => {
                        h_t * fq.integrate(|x| {
                            k_sqrt.apply((v.grad)(x) - proj.grad(x)).norm_squared()
                        })
                    }
                };
            }
        }
        rows.push(RateRow {
            h: mesh.regularity_metrics().h,
            err_m0: m0.sqrt(),
            err_m1: m1.sqrt(),
            err_trace: tr.sqrt(),
        });
    }
    Ok(rows)
}

/// Experimental order of convergence between two levels.
pub fn eoc(e_coarse: f64, e_fine: f64, h_coarse: f64, h_fine: f64) -> f64 {
    (e_coarse / e_fine).ln() / (h_coarse / h_fine).ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn unit_mesh() -> Mesh {
        Mesh::build_cartesian(1, 1, Vec2::zeros(), Vec2::new(1.0, 1.0), 1).unwrap()
    }

    #[test]
    fn basis_at_center() {
        let b = CellBasis::new(Vec2::new(0.3, 0.4), 2.0, 3);
        let vals = b.eval_all(Vec2::new(0.3, 0.4));
        assert_eq!(vals[0], 1.0);
        for &v in &vals[1..] {
            assert_eq!(v, 0.0);
        }
        assert_eq!(b.dim(), 10);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let b = CellBasis::new(Vec2::new(0.2, -0.1), 1.7, 3);
        let x = Vec2::new(0.9, 0.5);
        let eps = 1e-6;
        for j in 0..b.dim() {
            let g = b.grad(j, x);
            let gx = (b.eval(j, x + Vec2::new(eps, 0.0)) - b.eval(j, x - Vec2::new(eps, 0.0)))
                / (2.0 * eps);
            let gy = (b.eval(j, x + Vec2::new(0.0, eps)) - b.eval(j, x - Vec2::new(0.0, eps)))
                / (2.0 * eps);
            assert_relative_eq!(g.x, gx, max_relative = 1e-6, epsilon = 1e-9);
            assert_relative_eq!(g.y, gy, max_relative = 1e-6, epsilon = 1e-9);
        }
    }

    #[test]
    fn l2_projection_idempotent_on_polynomials() {
        let mesh = unit_mesh();
        // f in P^2 projected at l = 2 is reproduced coefficient-wise.
        let f = |x: Vec2| 1.5 - 2.0 * x.x + 0.25 * x.y + 3.0 * x.x * x.y;
        let p = l2_project(&mesh, 0, &f, 2, 4).unwrap();
        let q = l2_project(&mesh, 0, &|x| p.eval(x), 2, 4).unwrap();
        for i in 0..p.coeffs.len() {
            assert_relative_eq!(p.coeffs[i], q.coeffs[i], epsilon = 1e-12);
        }
        // And it interpolates the function values.
        assert_relative_eq!(p.eval(Vec2::new(0.3, 0.7)), f(Vec2::new(0.3, 0.7)), epsilon = 1e-12);
    }

    #[test]
    fn l2_projection_mean_value() {
        let mesh = unit_mesh();
        let p = l2_project(&mesh, 0, &|x| x.x * x.x, 0, 4).unwrap();
        assert_relative_eq!(p.coeffs[0], 1.0 / 3.0, max_relative = 1e-13);
    }

    #[test]
    fn l2_galerkin_orthogonality() {
        let mesh = unit_mesh();
        let f = |x: Vec2| (std::f64::consts::PI * x.x).sin() * (1.0 + x.y);
        let l = 2;
        let p = l2_project(&mesh, 0, &f, l, SMOOTH_QUAD_DEGREE).unwrap();
        let quad =
            polygon_quadrature(&mesh.cell_vertices(0), 2 * l + SMOOTH_QUAD_DEGREE).unwrap();
        let scale = quad.integrate(|x| f(x).abs());
        for j in 0..p.basis.dim() {
            let r = quad.integrate(|x| (f(x) - p.eval(x)) * p.basis.eval(j, x));
            assert!(r.abs() <= 1e-11 * scale, "orthogonality residual {r:.3e}");
        }
    }

    #[test]
    fn oblique_reproduces_polynomials() {
        let mesh = unit_mesh();
        let k_t = SpdTensor2::new(2.0, 0.4, 1.0);
        let v = |x: Vec2| 0.3 + x.x - 2.0 * x.y + x.x * x.x - 0.5 * x.x * x.y;
        let gv = |x: Vec2| Vec2::new(1.0 + 2.0 * x.x - 0.5 * x.y, -2.0 - 0.5 * x.x);
        let p = oblique_project_fn(&mesh, 0, &k_t, 2, &v, &gv, ObliqueClosure::CellMean).unwrap();
        for &pt in &[Vec2::new(0.1, 0.9), Vec2::new(0.6, 0.2)] {
            assert_relative_eq!(p.eval(pt), v(pt), epsilon = 1e-12);
        }
    }

    #[test]
    fn oblique_x_squared_cell_mean() {
        // v = x², k = 1, K = I, unit square, cell-mean closure → x − 1/6.
        let mesh = unit_mesh();
        let p = oblique_project_fn(
            &mesh,
            0,
            &SpdTensor2::identity(),
            1,
            &|x| x.x * x.x,
            &|x| Vec2::new(2.0 * x.x, 0.0),
            ObliqueClosure::CellMean,
        )
        .unwrap();
        let probe = Vec2::new(0.77, 0.13);
        assert_relative_eq!(p.eval(probe), probe.x - 1.0 / 6.0, epsilon = 1e-12);
    }

    #[test]
    fn oblique_x_squared_epsilon_independent() {
        // K = diag(1, ε): the ε-direction decouples for v = x².
        let mesh = unit_mesh();
        for eps in [1.0, 1e-2, 1e-6] {
            let p = oblique_project_fn(
                &mesh,
                0,
                &SpdTensor2::diagonal(1.0, eps),
                1,
                &|x| x.x * x.x,
                &|x| Vec2::new(2.0 * x.x, 0.0),
                ObliqueClosure::CellMean,
            )
            .unwrap();
            let probe = Vec2::new(0.2, 0.8);
            assert_relative_eq!(p.eval(probe), probe.x - 1.0 / 6.0, epsilon = 1e-11);
        }
    }

    #[test]
    fn oblique_x_squared_boundary_mean() {
        // Boundary-mean closure on the unit square: boundary mean of x² is
        // 5/12 while its cell mean is 1/3, so the constant differs from the
        // cell-mean case: π v = x − 1/12.
        let mesh = unit_mesh();
        let p = oblique_project_fn(
            &mesh,
            0,
            &SpdTensor2::identity(),
            1,
            &|x| x.x * x.x,
            &|x| Vec2::new(2.0 * x.x, 0.0),
            ObliqueClosure::BoundaryMean,
        )
        .unwrap();
        let probe = Vec2::new(0.4, 0.9);
        assert_relative_eq!(p.eval(probe), probe.x - 1.0 / 12.0, epsilon = 1e-12);
    }

    #[test]
    fn oblique_from_moments_matches_fn_route() {
        let mesh = Mesh::build_cartesian(2, 2, Vec2::zeros(), Vec2::new(1.0, 1.0), 1)
            .unwrap()
            .perturb(0.15, 3)
            .unwrap();
        let k_t = SpdTensor2::new(1.4, -0.3, 0.8);
        let v = |x: Vec2| (x.x + 0.3 * x.y).powi(2) - x.y;
        let gv = |x: Vec2| {
            Vec2::new(
                2.0 * (x.x + 0.3 * x.y),
                0.6 * (x.x + 0.3 * x.y) - 1.0,
            )
        };
        for ci in 0..mesh.cells.len() {
            for (k, closure) in [(1, ObliqueClosure::BoundaryMean), (2, ObliqueClosure::CellMean)] {
                let data = moments_of_fn(&mesh, ci, &v, k).unwrap();
                let a = oblique_project_moments(&mesh, ci, &k_t, k, &data, closure).unwrap();
                let b = oblique_project_fn(&mesh, ci, &k_t, k, &v, &gv, closure).unwrap();
                let probe = mesh.cells[ci].point + Vec2::new(0.13, -0.07) * mesh.cells[ci].diameter;
                if k == 2 {
                    // P² contains v, both routes reproduce it exactly.
                    assert_relative_eq!(a.eval(probe), v(probe), epsilon = 1e-11);
                }
                assert_relative_eq!(a.eval(probe), b.eval(probe), epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn gram_solver_survives_thin_cells() {
        // A sliver rectangle drives the scaled-monomial mass matrix past the
        // 1e8 condition trigger; projection must still reproduce P^k.
        let mesh = Mesh::build_cartesian(1, 1, Vec2::zeros(), Vec2::new(1.0, 1e-6), 1).unwrap();
        let f = |x: Vec2| 2.0 * x.x - 1.0e3 * x.y + 0.5;
        let p = l2_project(&mesh, 0, &f, 2, 4).unwrap();
        let probe = Vec2::new(0.3, 4e-7);
        assert_relative_eq!(p.eval(probe), f(probe), max_relative = 1e-9);
    }

    #[test]
    fn projector_linearity() {
        let mesh = unit_mesh();
        let k_t = SpdTensor2::new(1.0, 0.2, 2.0);
        let f = |x: Vec2| (x.x * 3.1).sin();
        let g = |x: Vec2| x.y * x.y * x.x;
        let gf = |x: Vec2| Vec2::new(3.1 * (x.x * 3.1).cos(), 0.0);
        let gg = |x: Vec2| Vec2::new(x.y * x.y, 2.0 * x.x * x.y);
        let (a, b) = (2.0, -0.7);
        let combo = |x: Vec2| a * f(x) + b * g(x);
        let gcombo = |x: Vec2| a * gf(x) + b * gg(x);
        let pf = oblique_project_fn(&mesh, 0, &k_t, 2, &f, &gf, ObliqueClosure::CellMean).unwrap();
        let pg = oblique_project_fn(&mesh, 0, &k_t, 2, &g, &gg, ObliqueClosure::CellMean).unwrap();
        let pc =
            oblique_project_fn(&mesh, 0, &k_t, 2, &combo, &gcombo, ObliqueClosure::CellMean)
                .unwrap();
        for i in 0..pc.coeffs.len() {
            assert_relative_eq!(
                pc.coeffs[i],
                a * pf.coeffs[i] + b * pg.coeffs[i],
                epsilon = 1e-12
            );
        }
    }
}
