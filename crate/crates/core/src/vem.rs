//! Nonconforming virtual elements of degree k ∈ {1, 2} in 2D.
//!
//! Degrees of freedom are normalized moments: on each face, moments against
//! the scaled face basis up to degree k−1 (shared between the two incident
//! cells, which builds the jump condition into the space); inside each
//! cell, moments up to degree k−2 (only the mean, for k = 2). Boundary-face
//! DOFs are pinned to the data.
//!
//! The local bilinear form is the classical computable split
//! (K∇Πv, ∇Πw)_T + s_T((I−Π)v, (I−Π)w) with the oblique projector Π
//! evaluated from DOFs by integration by parts, the dofi-dofi
//! stabilization scaled by σ_T = λ̄_T, and the load (f, π^{0,l}v)_T with
//! l = 0 for k = 1 and l = 1 for k = 2. Cell moments beyond the stored
//! DOFs (the k = 1 mean, the degree-1 moments for l = 1) are taken from
//! the projector, the usual enhanced-space convention.

use crate::framework::DiscreteScheme;
use crate::geometry::Vec2;
use crate::linalg::Triplets;
use crate::mesh::Mesh;
use crate::model::{DiffusionField, ManufacturedCase};
use crate::polybasis::{
    cell_mass_matrix, face_mass_matrix, gradient_gram, poly_dim, polygon_quadrature,
    segment_quadrature, solve_gram, CellBasis, CellPoly, FaceBasis, FaceMoments, MomentData,
    ObliqueClosure, SMOOTH_QUAD_DEGREE,
};
use crate::recon::BrokenPoly;
use crate::{Error, Result};
use nalgebra::{DMatrix, DVector};
use std::sync::Arc;

/// Global DOF layout of the nonconforming space.
pub struct VemSpace {
    pub k: usize,
    pub mesh: Arc<Mesh>,
    /// Start of the k face DOFs of each internal face (None on boundary).
    pub face_dof_start: Vec<Option<usize>>,
    /// Start of the cell-moment DOFs of each cell.
    pub cell_dof_start: usize,
    /// dim P^{k−2}: cell DOFs per cell (0 for k = 1).
    pub n_cell_dofs: usize,
    pub dim: usize,
}

impl VemSpace {
    pub fn build(mesh: Arc<Mesh>, k: usize) -> Result<Self> {
        if !(1..=2).contains(&k) {
            return Err(Error::InvalidInput(format!(
                "nonconforming VEM implemented for k in {{1,2}}, got {k}"
            )));
        }
        let mut face_dof_start = vec![None; mesh.faces.len()];
        let mut next = 0;
        for &fi in &mesh.internal_faces {
            face_dof_start[fi] = Some(next);
            next += k;
        }
        let n_cell_dofs = if k >= 2 { poly_dim(k - 2) } else { 0 };
        let cell_dof_start = next;
        let dim = next + n_cell_dofs * mesh.cells.len();
        Ok(Self {
            k,
            mesh,
            face_dof_start,
            cell_dof_start,
            n_cell_dofs,
            dim,
        })
    }

    /// Local DOF count of one cell: k per face plus the cell moments.
    pub fn local_dim(&self, ci: usize) -> usize {
        self.mesh.cells[ci].faces.len() * self.k + self.n_cell_dofs
    }

    /// Global index of a local DOF, or the pinned boundary value from the
    /// supplied boundary moments.
    fn scatter_map(&self, ci: usize, boundary: &[Vec<f64>]) -> (Vec<Option<usize>>, Vec<f64>) {
        let cell = &self.mesh.cells[ci];
        let mut idx = Vec::with_capacity(self.local_dim(ci));
        let mut pinned = Vec::with_capacity(self.local_dim(ci));
        for cf in &cell.faces {
            match self.face_dof_start[cf.face] {
                Some(start) => {
                    for j in 0..self.k {
                        idx.push(Some(start + j));
                        pinned.push(0.0);
                    }
                }
                None => {
                    for &datum in boundary[cf.face].iter().take(self.k) {
                        idx.push(None);
                        pinned.push(datum);
                    }
                }
            }
        }
        for j in 0..self.n_cell_dofs {
            idx.push(Some(self.cell_dof_start + ci * self.n_cell_dofs + j));
            pinned.push(0.0);
        }
        (idx, pinned)
    }

    /// Normalized boundary moments (1/|F|)∫_F u m_j of a case, for every
    /// boundary face (zeros for interior faces).
    pub fn boundary_moments(&self, case: &ManufacturedCase) -> Vec<Vec<f64>> {
        let mesh = &self.mesh;
        let mut out = vec![Vec::new(); mesh.faces.len()];
        for &fi in &mesh.boundary_faces {
            let fb = FaceBasis::for_face(mesh, fi, self.k - 1);
            let f = &mesh.faces[fi];
            let (a, b) = (mesh.vertices[f.verts[0]], mesh.vertices[f.verts[1]]);
            let q = segment_quadrature(a, b, self.k - 1 + SMOOTH_QUAD_DEGREE);
            out[fi] = (0..self.k)
                .map(|j| q.integrate(|x| (case.u)(x) * fb.eval(j, x)) / f.measure)
                .collect();
        }
        out
    }

    /// Interpolant: face moments up to k−1 on internal faces and cell
    /// moments up to k−2, all computed by quadrature on the function.
    pub fn interpolate(&self, case: &ManufacturedCase) -> Result<DVector<f64>> {
        let mesh = &self.mesh;
        let mut v = DVector::zeros(self.dim);
        for &fi in &mesh.internal_faces {
            let start = self.face_dof_start[fi].unwrap();
            let fb = FaceBasis::for_face(mesh, fi, self.k - 1);
            let f = &mesh.faces[fi];
            let (a, b) = (mesh.vertices[f.verts[0]], mesh.vertices[f.verts[1]]);
            let q = segment_quadrature(a, b, self.k - 1 + SMOOTH_QUAD_DEGREE);
            for j in 0..self.k {
                v[start + j] = q.integrate(|x| (case.u)(x) * fb.eval(j, x)) / f.measure;
            }
        }
        if self.n_cell_dofs > 0 {
            for ci in 0..mesh.cells.len() {
                let cb = CellBasis::for_cell(mesh, ci, self.k - 2);
                let q = polygon_quadrature(&mesh.cell_vertices(ci), SMOOTH_QUAD_DEGREE)?;
                for j in 0..self.n_cell_dofs {
                    v[self.cell_dof_start + ci * self.n_cell_dofs + j] =
                        q.integrate(|x| (case.u)(x) * cb.eval(j, x)) / mesh.cells[ci].measure;
                }
            }
        }
        Ok(v)
    }

    /// Moment payload of one cell from a global DOF vector plus boundary
    /// data, in the layout [`crate::polybasis::MomentData`] expects.
    pub fn local_moments(
        &self,
        ci: usize,
        v: &DVector<f64>,
        boundary: &[Vec<f64>],
    ) -> MomentData {
        let mesh = &self.mesh;
        let cell = &mesh.cells[ci];
        let mut faces = Vec::with_capacity(cell.faces.len());
        for cf in &cell.faces {
            let f = &mesh.faces[cf.face];
            let fb = FaceBasis::for_face(mesh, cf.face, self.k - 1);
            let moments: Vec<f64> = match self.face_dof_start[cf.face] {
                Some(start) => (0..self.k).map(|j| v[start + j]).collect(),
                None => boundary[cf.face].clone(),
            };
            faces.push(FaceMoments {
                basis: fb,
                measure: f.measure,
                normal: cf.normal,
                moments,
            });
        }
        let cell_moments: Vec<f64> = (0..self.n_cell_dofs)
            .map(|j| v[self.cell_dof_start + ci * self.n_cell_dofs + j])
            .collect();
        MomentData {
            faces,
            cell: cell_moments,
        }
    }
}

/// The closure used per degree: the k = 1 space has no cell mean, so the
/// projector is closed over the boundary mean instead.
pub fn closure_for_degree(k: usize) -> ObliqueClosure {
    if k == 1 {
        ObliqueClosure::BoundaryMean
    } else {
        ObliqueClosure::CellMean
    }
}

/// Local element data: projector matrix, stiffness and load.
pub struct VemLocal {
    /// Π: local DOFs → P^k coefficients.
    pub projector: DMatrix<f64>,
    /// Consistency + stabilization stiffness on local DOFs.
    pub stiffness: DMatrix<f64>,
    /// Load vector (f, π^{0,l}·)_T on local DOFs.
    pub load: DVector<f64>,
    pub cell: usize,
}

/// Evaluate the projector polynomial of a DOF vector on one cell
/// (vem_projector_from_dofs).
pub fn vem_projector_from_dofs(
    space: &VemSpace,
    field: &DiffusionField,
    ci: usize,
    dofs: &DVector<f64>,
    boundary: &[Vec<f64>],
) -> Result<CellPoly> {
    let data = space.local_moments(ci, dofs, boundary);
    let k_t = field.for_cell(&space.mesh, ci);
    crate::polybasis::oblique_project_moments(
        &space.mesh,
        ci,
        &k_t,
        space.k,
        &data,
        closure_for_degree(space.k),
    )
}

/// Build the local projector matrix, stiffness and load of one cell.
pub fn vem_local(
    space: &VemSpace,
    field: &DiffusionField,
    ci: usize,
    f_src: &dyn Fn(Vec2) -> f64,
) -> Result<VemLocal> {
    let mesh = &space.mesh;
    let k = space.k;
    let cell = &mesh.cells[ci];
    let k_t = field.for_cell(mesh, ci);
    let basis = CellBasis::for_cell(mesh, ci, k);
    let n_poly = basis.dim();
    let n_loc = space.local_dim(ci);
    let quad = polygon_quadrature(&mesh.cell_vertices(ci), 2 * k)?;
    let area = cell.measure;

    // Galerkin right side per basis function i ≥ 1, as a row over DOFs:
    // −(v, ∇·(K∇m_i))_T + Σ_F (v, K∇m_i·n)_F  from the moments.
    let mut rhs = DMatrix::zeros(n_poly, n_loc);
    for i in 1..n_poly {
        for (idx, coef) in basis.divergence_k_grad(&k_t, i) {
            // Cell moment DOFs follow the face block.
            let dof = cell.faces.len() * k + idx;
            rhs[(i, dof)] -= coef * area;
        }
        for (li, cf) in cell.faces.iter().enumerate() {
            let f = &mesh.faces[cf.face];
            let fb = FaceBasis::for_face(mesh, cf.face, k - 1);
            let (a, b) = (mesh.vertices[f.verts[0]], mesh.vertices[f.verts[1]]);
            let fq = segment_quadrature(a, b, 2 * k);
            let mf = face_mass_matrix(&fb, &fq);
            let mut r = DVector::zeros(fb.dim());
            for (x, w) in fq.nodes.iter().zip(&fq.weights) {
                let g = k_t.apply(basis.grad(i, *x)).dot(&cf.normal);
                for j in 0..fb.dim() {
                    r[j] += w * g * fb.eval(j, *x);
                }
            }
            let d = solve_gram(&mf, &r);
            for j in 0..fb.dim() {
                rhs[(i, li * k + j)] += d[j] * f.measure;
            }
        }
    }

    // Solve the gradient Gram system on the non-constant block.
    let g_full = gradient_gram(&basis, &k_t, &quad);
    let gm = g_full.view((1, 1), (n_poly - 1, n_poly - 1)).clone_owned();
    let mut projector = DMatrix::zeros(n_poly, n_loc);
    for dof in 0..n_loc {
        let r = rhs.view((1, dof), (n_poly - 1, 1)).clone_owned();
        let c = solve_gram(&gm, &DVector::from_column_slice(r.as_slice()));
        for i in 1..n_poly {
            projector[(i, dof)] = c[i - 1];
        }
    }

    // Closure fixes the constant coefficient per DOF.
    let basis_cell_integrals: Vec<f64> =
        (0..n_poly).map(|i| quad.integrate(|x| basis.eval(i, x))).collect();
    match closure_for_degree(k) {
        ObliqueClosure::CellMean => {
            // ∫ Πv = |T|·(cell mean DOF).
            let mean_dof = cell.faces.len() * k;
            for dof in 0..n_loc {
                let tail: f64 =
                    (1..n_poly).map(|i| projector[(i, dof)] * basis_cell_integrals[i]).sum();
                let target = if dof == mean_dof { area } else { 0.0 };
                projector[(0, dof)] = (target - tail) / area;
            }
        }
        ObliqueClosure::BoundaryMean => {
            // Σ_F ∫_F Πv = Σ_F |F|·(face mean DOF).
            let mut perim = 0.0;
            let mut basis_bdry = vec![0.0; n_poly];
            for cf in &cell.faces {
                let f = &mesh.faces[cf.face];
                let (a, b) = (mesh.vertices[f.verts[0]], mesh.vertices[f.verts[1]]);
                let fq = segment_quadrature(a, b, k + 1);
                perim += f.measure;
                for (i, acc) in basis_bdry.iter_mut().enumerate() {
                    *acc += fq.integrate(|x| basis.eval(i, x));
                }
            }
            for dof in 0..n_loc {
                let tail: f64 = (1..n_poly).map(|i| projector[(i, dof)] * basis_bdry[i]).sum();
                // Face mean DOFs are the first of each face block.
                let target = if dof < cell.faces.len() * k && dof % k == 0 {
                    mesh.faces[cell.faces[dof / k].face].measure
                } else {
                    0.0
                };
                projector[(0, dof)] = (target - tail) / perim;
            }
        }
    }

    // DOF matrix of the polynomial basis: dof_i(m_α).
    let mut dmat = DMatrix::zeros(n_loc, n_poly);
    for (li, cf) in cell.faces.iter().enumerate() {
        let f = &mesh.faces[cf.face];
        let fb = FaceBasis::for_face(mesh, cf.face, k - 1);
        let (a, b) = (mesh.vertices[f.verts[0]], mesh.vertices[f.verts[1]]);
        let fq = segment_quadrature(a, b, 2 * k);
        for alpha in 0..n_poly {
            for j in 0..k {
                dmat[(li * k + j, alpha)] =
                    fq.integrate(|x| basis.eval(alpha, x) * fb.eval(j, x)) / f.measure;
            }
        }
    }
    if space.n_cell_dofs > 0 {
        let cb = CellBasis::for_cell(mesh, ci, k - 2);
        for alpha in 0..n_poly {
            for j in 0..space.n_cell_dofs {
                dmat[(cell.faces.len() * k + j, alpha)] =
                    quad.integrate(|x| basis.eval(alpha, x) * cb.eval(j, x)) / area;
            }
        }
    }

    // Stiffness: consistency + dofi-dofi stabilization with σ_T = λ̄_T.
    let consistency = projector.transpose() * &g_full * &projector;
    let defect = DMatrix::identity(n_loc, n_loc) - &dmat * &projector;
    let stiffness = consistency + k_t.lambda_max() * defect.transpose() * &defect;

    // Load (f, π^{0,l} φ_i)_T with l = k − 1 here (0 or 1); the moments of
    // φ_i beyond the stored DOFs come from the projector polynomial.
    let l = k - 1;
    let lb = CellBasis::for_cell(mesh, ci, l);
    let lq = polygon_quadrature(&mesh.cell_vertices(ci), l + SMOOTH_QUAD_DEGREE)?;
    let f_moments = DVector::from_fn(lb.dim(), |j, _| lq.integrate(|x| f_src(x) * lb.eval(j, x)));
    let mass_l = cell_mass_matrix(&lb, &lq);
    let mut load = DVector::zeros(n_loc);
    for dof in 0..n_loc {
        // Moments of φ_dof against P^l.
        let mut mom = DVector::zeros(lb.dim());
        for j in 0..lb.dim() {
            if j < space.n_cell_dofs {
                // Stored cell moment (the mean for k = 2).
                mom[j] = area * if dof == cell.faces.len() * k + j { 1.0 } else { 0.0 };
            } else {
                // Enhancement: ∫ φ q := ∫ (Πφ) q.
                mom[j] = (0..n_poly)
                    .map(|i| projector[(i, dof)] * quad.integrate(|x| basis.eval(i, x) * lb.eval(j, x)))
                    .sum();
            }
        }
        let coeffs = solve_gram(&mass_l, &mom);
        load[dof] = coeffs.dot(&f_moments);
    }

    Ok(VemLocal {
        projector,
        stiffness,
        load,
        cell: ci,
    })
}

/// Assemble the nonconforming VEM scheme; the norm is the one induced by
/// the bilinear form (N = A, γ = 1).
pub fn assemble_vem(
    mesh: Arc<Mesh>,
    field: &DiffusionField,
    k: usize,
    case: &ManufacturedCase,
) -> Result<DiscreteScheme> {
    case.check_mesh_compliance(&mesh)?;
    let space = Arc::new(VemSpace::build(mesh.clone(), k)?);
    let boundary = Arc::new(space.boundary_moments(case));
    let mut a = Triplets::new(space.dim, space.dim);
    let mut b = DVector::zeros(space.dim);
    let mut projectors = Vec::with_capacity(mesh.cells.len());
    for ci in 0..mesh.cells.len() {
        let local = vem_local(&space, field, ci, &|x| (case.f)(x))?;
        let (idx, pinned) = space.scatter_map(ci, &boundary);
        let n_loc = space.local_dim(ci);
        for i in 0..n_loc {
            let Some(gi) = idx[i] else { continue };
            b[gi] += local.load[i];
            for j in 0..n_loc {
                match idx[j] {
                    Some(gj) => a.push(gi, gj, local.stiffness[(i, j)]),
                    None => b[gi] -= local.stiffness[(i, j)] * pinned[j],
                }
            }
        }
        projectors.push(local.projector);
    }
    let system = a.finalize(true);
    let norm = Arc::new(system.clone());
    let projectors = Arc::new(projectors);

    let interp_space = space.clone();
    let interpolant =
        move |c: &ManufacturedCase| -> Result<DVector<f64>> { interp_space.interpolate(c) };

    let recon_space = space.clone();
    let recon_proj = projectors.clone();
    let recon_boundary = boundary.clone();
    let reconstruction = move |v: &DVector<f64>,
                               bc: Option<&ManufacturedCase>|
          -> Result<BrokenPoly> {
        let mesh = &recon_space.mesh;
        let zero: Vec<Vec<f64>> = mesh.faces.iter().map(|_| vec![0.0; recon_space.k]).collect();
        let bdry: &[Vec<f64>] = match bc {
            Some(_) => &recon_boundary,
            None => &zero,
        };
        let mut cells = Vec::with_capacity(mesh.cells.len());
        for ci in 0..mesh.cells.len() {
            let (idx, pinned) = recon_space.scatter_map(ci, bdry);
            let mut local = DVector::zeros(recon_space.local_dim(ci));
            for (i, gi) in idx.iter().enumerate() {
                local[i] = match gi {
                    Some(g) => v[*g],
                    None => pinned[i],
                };
            }
            let coeffs = &recon_proj[ci] * local;
            cells.push(CellPoly {
                basis: CellBasis::for_cell(mesh, ci, recon_space.k),
                coeffs,
            });
        }
        Ok(BrokenPoly { cells })
    };

    let dual_space = space.clone();
    let dual_proj = projectors.clone();
    let dual_load = move |z: &ManufacturedCase| -> Result<DVector<f64>> {
        // c_z entries g(r_h φ_i) = ∫ f_z · Π φ_i per cell.
        let mesh = &dual_space.mesh;
        let zero: Vec<Vec<f64>> = mesh.faces.iter().map(|_| vec![0.0; dual_space.k]).collect();
        let mut c = DVector::zeros(dual_space.dim);
        for ci in 0..mesh.cells.len() {
            let projector = &dual_proj[ci];
            let basis = CellBasis::for_cell(mesh, ci, dual_space.k);
            let q = polygon_quadrature(
                &mesh.cell_vertices(ci),
                dual_space.k + SMOOTH_QUAD_DEGREE,
            )?;
            let fz_moments = DVector::from_fn(basis.dim(), |i, _| {
                q.integrate(|x| (z.f)(x) * basis.eval(i, x))
            });
            let (idx, _) = dual_space.scatter_map(ci, &zero);
            let n_loc = dual_space.local_dim(ci);
            for dof in 0..n_loc {
                let Some(gi) = idx[dof] else { continue };
                let val: f64 = (0..basis.dim())
                    .map(|i| projector[(i, dof)] * fz_moments[i])
                    .sum();
                c[gi] += val;
            }
        }
        Ok(c)
    };

    Ok(DiscreteScheme {
        label: format!("vem{k}"),
        mesh,
        system,
        rhs: b,
        trial_norm: norm.clone(),
        test_norm: norm,
        norm_is_system: true,
        gamma_theory: Some(1.0),
        interpolant: Arc::new(interpolant),
        reconstruction: Some(Arc::new(reconstruction)),
        dual_load: Some(Arc::new(dual_load)),
    })
}
