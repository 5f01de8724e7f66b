//! Multi-point flux approximation (L/G variants) on cell-centred unknowns.
//!
//! A *group* is a pair of faces of one cell T_G sharing a vertex. The group
//! gradient is the solution of the 2×2 system A_G ∇ = B_G(v), assembled
//! row-wise: the row of an internal face F (other cell T) is
//!
//!   (K_T n_TF·n_TF / d_TF)(x_T − x_TG) + K_TG n_TGF + K_T n_TF,
//!
//! with right side (K_T n_TF·n_TF / d_TF)(v_T − v_TG); a boundary face row
//! is (K_TG n·n / d_TGF)(x_F − x_TG) with right side pinned to the boundary
//! value. The face flux is a convex combination over the invertible groups
//! containing the face, with weights chosen by the strategy (uniform, or
//! condition-number proxies of the L- and G-scheme selection rules).

use super::{cell_source_integral, piecewise_constant};
use crate::framework::DiscreteScheme;
use crate::geometry::Vec2;
use crate::linalg::{SparseMatrix, Triplets};
use crate::mesh::Mesh;
use crate::model::{DiffusionField, ManufacturedCase};
use crate::{Error, Result};
use nalgebra::{DVector, Matrix2};
use std::sync::Arc;

/// Affine functional on the cell-value vector.
#[derive(Debug, Clone, Default)]
pub struct LinearFunctional {
    pub terms: Vec<(usize, f64)>,
    pub constant: f64,
}

impl LinearFunctional {
    pub fn eval(&self, v: &DVector<f64>) -> f64 {
        self.constant + self.terms.iter().map(|&(i, c)| c * v[i]).sum::<f64>()
    }

    fn add_scaled(&mut self, other: &LinearFunctional, s: f64) {
        if s == 0.0 {
            return;
        }
        self.constant += s * other.constant;
        for &(i, c) in &other.terms {
            if c == 0.0 {
                continue;
            }
            match self.terms.iter_mut().find(|(j, _)| *j == i) {
                Some((_, acc)) => *acc += s * c,
                None => self.terms.push((i, s * c)),
            }
        }
    }
}

/// A group of two faces of one cell sharing a vertex, with its gradient
/// system.
#[derive(Debug, Clone)]
pub struct FaceGroup {
    pub t_g: usize,
    pub faces: [usize; 2],
    pub vertex: usize,
    pub a_g: Matrix2<f64>,
    pub b_rows: [LinearFunctional; 2],
    pub invertible: bool,
    pub cond: f64,
}

impl FaceGroup {
    /// The gradient components as functionals on cell values, when A_G is
    /// invertible.
    pub fn gradient_functionals(&self) -> Option<[LinearFunctional; 2]> {
        if !self.invertible {
            return None;
        }
        let inv = self.a_g.try_inverse()?;
        let mut out = [LinearFunctional::default(), LinearFunctional::default()];
        for (comp, item) in out.iter_mut().enumerate() {
            item.add_scaled(&self.b_rows[0], inv[(comp, 0)]);
            item.add_scaled(&self.b_rows[1], inv[(comp, 1)]);
        }
        Some(out)
    }

    /// Gradient of interpolated cell values (used by tests and oracles).
    pub fn gradient(&self, v: &DVector<f64>) -> Option<Vec2> {
        let f = self.gradient_functionals()?;
        Some(Vec2::new(f[0].eval(v), f[1].eval(v)))
    }
}

/// Build the group of the two faces of `cell` incident to `vertex`.
pub fn mpfa_group_gradient(
    mesh: &Mesh,
    field: &DiffusionField,
    cell: usize,
    vertex: usize,
    boundary_value: &dyn Fn(Vec2) -> f64,
) -> Result<FaceGroup> {
    let c = &mesh.cells[cell];
    let incident: Vec<usize> = c
        .faces
        .iter()
        .map(|cf| cf.face)
        .filter(|&fi| mesh.faces[fi].verts.contains(&vertex))
        .collect();
    if incident.len() != 2 {
        return Err(Error::InvalidInput(format!(
            "cell {cell} has {} faces at vertex {vertex}, need exactly 2",
            incident.len()
        )));
    }
    build_group(mesh, field, cell, [incident[0], incident[1]], vertex, boundary_value)
}

fn build_group(
    mesh: &Mesh,
    field: &DiffusionField,
    t_g: usize,
    faces: [usize; 2],
    vertex: usize,
    boundary_value: &dyn Fn(Vec2) -> f64,
) -> Result<FaceGroup> {
    let k_tg = field.for_cell(mesh, t_g);
    let x_tg = mesh.cells[t_g].point;
    let mut a_g = Matrix2::zeros();
    let mut b_rows = [LinearFunctional::default(), LinearFunctional::default()];
    for (r, &fi) in faces.iter().enumerate() {
        let face = &mesh.faces[fi];
        let cf_g = mesh.cell_face(t_g, fi);
        match other_cell(mesh, fi, t_g) {
            Some(t) => {
                let k_t = field.for_cell(mesh, t);
                let cf_t = mesh.cell_face(t, fi);
                let knn = k_t.apply(cf_t.normal).dot(&cf_t.normal);
                let coef = knn / cf_t.d;
                let x_t = mesh.cells[t].point;
                let row = coef * (x_t - x_tg)
                    + k_tg.apply(cf_g.normal)
                    + k_t.apply(cf_t.normal);
                a_g[(r, 0)] = row.x;
                a_g[(r, 1)] = row.y;
                b_rows[r].terms.push((t, coef));
                b_rows[r].terms.push((t_g, -coef));
            }
            None => {
                let knn = k_tg.apply(cf_g.normal).dot(&cf_g.normal);
                let coef = knn / cf_g.d;
                let row = coef * (face.point - x_tg);
                a_g[(r, 0)] = row.x;
                a_g[(r, 1)] = row.y;
                b_rows[r].constant = coef * boundary_value(face.point);
                b_rows[r].terms.push((t_g, -coef));
            }
        }
    }
    let svd = a_g.svd(false, false);
    let smax = svd.singular_values[0].max(svd.singular_values[1]);
    let smin = svd.singular_values[0].min(svd.singular_values[1]);
    let invertible = smin > 1e-12 * smax && smin > 0.0;
    Ok(FaceGroup {
        t_g,
        faces,
        vertex,
        a_g,
        b_rows,
        invertible,
        cond: if smin > 0.0 { smax / smin } else { f64::INFINITY },
    })
}

fn other_cell(mesh: &Mesh, fi: usize, ci: usize) -> Option<usize> {
    let f = &mesh.faces[fi];
    if f.cells.0 == ci {
        f.cells.1
    } else {
        Some(f.cells.0)
    }
}

/// Weight selection among the invertible groups of a face.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MpfaStrategy {
    Uniform,
    /// All weight on the best-conditioned group (proxy of the L-scheme
    /// monotonicity-driven selection).
    LProxy,
    /// Weights proportional to 1/cond(A_G) (proxy of the G-scheme
    /// coercivity-driven selection).
    GProxy,
}

impl MpfaStrategy {
    pub fn label(&self) -> &'static str {
        match self {
            MpfaStrategy::Uniform => "mpfa-uniform",
            MpfaStrategy::LProxy => "mpfa-l",
            MpfaStrategy::GProxy => "mpfa-g",
        }
    }
}

/// Cell-centred flux family: one functional per face, oriented along the
/// face's n_{T1,F}; the T2 side uses the opposite sign, so conservativity
/// holds coefficient-wise by construction.
#[derive(Debug, Clone)]
pub struct CellFluxFamily {
    pub name: String,
    pub rows: Vec<LinearFunctional>,
    /// Convex-combination weights used per face (for diagnostics).
    pub weights: Vec<Vec<f64>>,
}

impl CellFluxFamily {
    /// Flux through face `fi` as seen from cell `ci`.
    pub fn flux_from(&self, mesh: &Mesh, ci: usize, fi: usize, v: &DVector<f64>) -> f64 {
        let raw = self.rows[fi].eval(v);
        if mesh.faces[fi].cells.0 == ci {
            raw
        } else {
            -raw
        }
    }
}

/// Build the MPFA flux family: for every face, a convex combination of the
/// group fluxes over the invertible groups containing it.
pub fn mpfa_fluxes(
    mesh: &Mesh,
    field: &DiffusionField,
    strategy: MpfaStrategy,
    boundary_value: &dyn Fn(Vec2) -> f64,
) -> Result<CellFluxFamily> {
    let mut rows = Vec::with_capacity(mesh.faces.len());
    let mut all_weights = Vec::with_capacity(mesh.faces.len());
    for (fi, face) in mesh.faces.iter().enumerate() {
        // Candidate groups: at each endpoint, within each incident cell.
        let mut groups: Vec<FaceGroup> = Vec::new();
        let owners: Vec<usize> = match face.cells.1 {
            Some(t2) => vec![face.cells.0, t2],
            None => vec![face.cells.0],
        };
        for &vertex in &face.verts {
            for &t_g in &owners {
                let g = mpfa_group_gradient(mesh, field, t_g, vertex, boundary_value)?;
                if g.invertible {
                    groups.push(g);
                }
            }
        }
        if groups.is_empty() {
            return Err(Error::EmptyGroupSet { face: fi });
        }
        let weights: Vec<f64> = match strategy {
            MpfaStrategy::Uniform => {
                vec![1.0 / groups.len() as f64; groups.len()]
            }
            MpfaStrategy::LProxy => {
                let best = groups
                    .iter()
                    .enumerate()
                    .min_by(|a, b| a.1.cond.partial_cmp(&b.1.cond).unwrap())
                    .map(|(i, _)| i)
                    .unwrap();
                let mut w = vec![0.0; groups.len()];
                w[best] = 1.0;
                w
            }
            MpfaStrategy::GProxy => {
                let raw: Vec<f64> = groups.iter().map(|g| 1.0 / g.cond).collect();
                let sum: f64 = raw.iter().sum();
                raw.into_iter().map(|w| w / sum).collect()
            }
        };
        // Flux in the direction n_{T1,F}.
        let t1 = face.cells.0;
        let mut row = LinearFunctional::default();
        for (g, &w) in groups.iter().zip(&weights) {
            let grads = g.gradient_functionals().expect("invertible group");
            let k_g = field.for_cell(mesh, g.t_g);
            // φ = −|F| K_TG ∇·n_TG,F; flip to the T1 direction if needed.
            let n_g = mesh.cell_face(g.t_g, fi).normal;
            let sign = if g.t_g == t1 { 1.0 } else { -1.0 };
            let kn = k_g.apply(n_g);
            row.add_scaled(&grads[0], -w * sign * face.measure * kn.x);
            row.add_scaled(&grads[1], -w * sign * face.measure * kn.y);
        }
        rows.push(row);
        all_weights.push(weights);
    }
    Ok(CellFluxFamily {
        name: strategy.label().into(),
        rows,
        weights: all_weights,
    })
}

/// Cell-centred discrete H¹-norm matrix: Σ_F λ_F (|F|/d_F)(v_T − v_T')²
/// with λ_F = min of the neighbor λ_min and d_F = d_TF + d_T'F; boundary
/// faces use the single cell against zero.
pub fn cellcentred_norm_matrix(mesh: &Mesh, field: &DiffusionField) -> SparseMatrix {
    let n = mesh.cells.len();
    let mut t = Triplets::new(n, n);
    for (fi, face) in mesh.faces.iter().enumerate() {
        let t1 = face.cells.0;
        let d1 = mesh.cell_face(t1, fi).d;
        let l1 = field.for_cell(mesh, t1).lambda_min();
        match face.cells.1 {
            Some(t2) => {
                let d2 = mesh.cell_face(t2, fi).d;
                let l2 = field.for_cell(mesh, t2).lambda_min();
                let w = l1.min(l2) * face.measure / (d1 + d2);
                t.push(t1, t1, w);
                t.push(t1, t2, -w);
                t.push(t2, t1, -w);
                t.push(t2, t2, w);
            }
            None => {
                let w = l1 * face.measure / d1;
                t.push(t1, t1, w);
            }
        }
    }
    t.finalize(true)
}

/// Assemble the cell-centred FV scheme: balance rows Σ_F ±Φ_F(v) = ∫_T f.
pub fn assemble_cellcentred(
    mesh: Arc<Mesh>,
    field: &DiffusionField,
    family: &CellFluxFamily,
    case: &ManufacturedCase,
) -> Result<DiscreteScheme> {
    case.check_mesh_compliance(&mesh)?;
    let n = mesh.cells.len();
    let mut a = Triplets::new(n, n);
    let mut b = DVector::zeros(n);
    for ci in 0..n {
        b[ci] = cell_source_integral(&mesh, ci, &|x| (case.f)(x))?;
    }
    for (fi, face) in mesh.faces.iter().enumerate() {
        let row = &family.rows[fi];
        let mut apply = |ci: usize, sign: f64| {
            for &(j, c) in &row.terms {
                a.push(ci, j, sign * c);
            }
            b[ci] -= sign * row.constant;
        };
        apply(face.cells.0, 1.0);
        if let Some(t2) = face.cells.1 {
            apply(t2, -1.0);
        }
    }
    let system = a.finalize(false);
    let norm = Arc::new(cellcentred_norm_matrix(&mesh, field));

    let interp_mesh = mesh.clone();
    let interpolant = move |c: &ManufacturedCase| -> Result<DVector<f64>> {
        Ok(DVector::from_fn(interp_mesh.cells.len(), |i, _| {
            (c.u)(interp_mesh.cells[i].point)
        }))
    };
    let recon_mesh = mesh.clone();
    let reconstruction = move |v: &DVector<f64>,
                               _bc: Option<&ManufacturedCase>|
          -> Result<crate::recon::BrokenPoly> { Ok(piecewise_constant(&recon_mesh, v)) };
    let dual_mesh = mesh.clone();
    let dual_load = move |z: &ManufacturedCase| -> Result<DVector<f64>> {
        let mut c = DVector::zeros(dual_mesh.cells.len());
        for ci in 0..dual_mesh.cells.len() {
            c[ci] = cell_source_integral(&dual_mesh, ci, &|x| (z.f)(x))?;
        }
        Ok(c)
    };

    Ok(DiscreteScheme {
        label: family.name.clone(),
        mesh,
        system,
        rhs: b,
        trial_norm: norm.clone(),
        test_norm: norm,
        norm_is_system: false,
        gamma_theory: None,
        interpolant: Arc::new(interpolant),
        reconstruction: Some(Arc::new(reconstruction)),
        dual_load: Some(Arc::new(dual_load)),
    })
}

/// Cell-centred flux-consistency residuals and the aggregate of the
/// cell-centred energy estimate.
pub fn cellcentred_residuals(
    mesh: &Mesh,
    field: &DiffusionField,
    family: &CellFluxFamily,
    case: &ManufacturedCase,
    quad_degree: usize,
) -> super::FluxResiduals {
    let interp = DVector::from_fn(mesh.cells.len(), |i, _| (case.u)(mesh.cells[i].point));
    let mut per_face = Vec::new();
    let mut agg = 0.0;
    for (fi, face) in mesh.faces.iter().enumerate() {
        let t1 = face.cells.0;
        let exact = super::exact_face_flux(mesh, case, t1, fi, quad_degree);
        let rho = exact + family.rows[fi].eval(&interp);
        let d1 = mesh.cell_face(t1, fi).d;
        let l1 = field.for_cell(mesh, t1).lambda_min();
        let (lam, d_f) = match face.cells.1 {
            Some(t2) => (
                l1.min(field.for_cell(mesh, t2).lambda_min()),
                d1 + mesh.cell_face(t2, fi).d,
            ),
            None => (l1, d1),
        };
        agg += (d_f / face.measure) * rho * rho / lam;
        per_face.push((t1, fi, rho));
    }
    super::FluxResiduals {
        per_face,
        aggregate: agg.sqrt(),
    }
}
