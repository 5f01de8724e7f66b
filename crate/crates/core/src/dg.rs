//! Symmetric weighted interior penalty DG on polytopal meshes, k ∈ {1,2,3}.
//!
//! Face couplings use diffusion-dependent weights ω built from the normal
//! diffusivities δ_TF = K_T n_TF·n_TF, which realize a harmonic average
//! δ_F = 2δ₁δ₂/(δ₁+δ₂) across heterogeneous interfaces. The penalty
//! parameter η must exceed C_tr²·N∂ for the theoretical coercivity
//! constant γ = (η − C_tr²N∂)/(1+η) to be positive; below that threshold
//! assembly proceeds (the condition is sufficient, not necessary) and the
//! numerical γ tells the story.

use crate::framework::DiscreteScheme;
use crate::geometry::{SpdTensor2, Vec2};
use crate::linalg::{max_generalized_eig_dense, Triplets};
use crate::mesh::Mesh;
use crate::model::{DiffusionField, ManufacturedCase};
use crate::polybasis::{
    cell_mass_matrix, gradient_gram, l2_project, polygon_quadrature, segment_quadrature,
    CellBasis, CellPoly, SMOOTH_QUAD_DEGREE,
};
use crate::recon::BrokenPoly;
use crate::{Error, Result};
use nalgebra::{DMatrix, DVector};
use std::sync::Arc;

/// Diffusion-dependent face weights: ω₁ = √δ₂/(√δ₁+√δ₂), ω₂ = 1 − ω₁, and
/// the harmonic-type face diffusivity δ_F = 2δ₁δ₂/(δ₁+δ₂).
pub fn dg_weights(delta1: f64, delta2: f64) -> Result<(f64, f64, f64)> {
    if delta1 <= 0.0 || delta2 <= 0.0 {
        return Err(Error::InvalidInput(format!(
            "normal diffusivities must be positive (got {delta1}, {delta2})"
        )));
    }
    let (s1, s2) = (delta1.sqrt(), delta2.sqrt());
    let w1 = s2 / (s1 + s2);
    let lam = 2.0 * delta1 * delta2 / (delta1 + delta2);
    Ok((w1, 1.0 - w1, lam))
}

/// Per-face data of the SWIP form.
#[derive(Debug, Clone, Copy)]
pub struct DgFaceData {
    /// δ_TF of the first (orientation-defining) cell.
    pub delta1: f64,
    /// δ_TF of the second cell (equal to δ₁ on boundary faces).
    pub delta2: f64,
    pub omega1: f64,
    pub omega2: f64,
    /// Face diffusivity δ_F.
    pub lambda: f64,
}

pub fn dg_face_data(mesh: &Mesh, field: &DiffusionField, fi: usize) -> Result<DgFaceData> {
    let f = &mesh.faces[fi];
    let t1 = f.cells.0;
    let n1 = mesh.cell_face(t1, fi).normal;
    let d1 = field.for_cell(mesh, t1).apply(n1).dot(&n1);
    match f.cells.1 {
        Some(t2) => {
            let n2 = mesh.cell_face(t2, fi).normal;
            let d2 = field.for_cell(mesh, t2).apply(n2).dot(&n2);
            let (w1, w2, lam) = dg_weights(d1, d2)?;
            Ok(DgFaceData {
                delta1: d1,
                delta2: d2,
                omega1: w1,
                omega2: w2,
                lambda: lam,
            })
        }
        None => Ok(DgFaceData {
            delta1: d1,
            delta2: d1,
            omega1: 1.0,
            omega2: 0.0,
            lambda: d1,
        }),
    }
}

/// Discrete trace constant: the largest over (T, F) of
/// √( max_{v ∈ P^k(T)} h_F ‖v‖²_F / ‖v‖²_T ), by dense generalized
/// eigensolves on the local mass pencils.
pub fn ctr_estimate(mesh: &Mesh, k: usize) -> Result<f64> {
    let mut worst = 0.0_f64;
    for (ci, cell) in mesh.cells.iter().enumerate() {
        let basis = CellBasis::for_cell(mesh, ci, k);
        let quad = polygon_quadrature(&mesh.cell_vertices(ci), 2 * k)?;
        let mass = cell_mass_matrix(&basis, &quad);
        for cf in &cell.faces {
            let f = &mesh.faces[cf.face];
            let (a, b) = (mesh.vertices[f.verts[0]], mesh.vertices[f.verts[1]]);
            let fq = segment_quadrature(a, b, 2 * k);
            let n = basis.dim();
            let mut tr = DMatrix::zeros(n, n);
            for (x, w) in fq.nodes.iter().zip(&fq.weights) {
                let vals = basis.eval_all(*x);
                for i in 0..n {
                    for j in 0..n {
                        tr[(i, j)] += w * vals[i] * vals[j];
                    }
                }
            }
            let lam = max_generalized_eig_dense(&(f.diameter * tr), &mass)?;
            worst = worst.max(lam);
        }
    }
    Ok(worst.sqrt())
}

/// Jump v_T1 − v_T2 and weighted average flux {K∇v}_ω·n_F at a point of an
/// internal face.
pub fn jump_avg_eval(
    data: &DgFaceData,
    n_f: Vec2,
    k1: &SpdTensor2,
    k2: &SpdTensor2,
    left: &CellPoly,
    right: &CellPoly,
    x: Vec2,
) -> (f64, f64) {
    let jump = left.eval(x) - right.eval(x);
    let avg = data.omega1 * k1.apply(left.grad(x)).dot(&n_f)
        + data.omega2 * k2.apply(right.grad(x)).dot(&n_f);
    (jump, avg)
}

/// Assemble the SWIP scheme. Warns (via the returned flag inside
/// `gamma_theory`) rather than failing when η is at or below the
/// theoretical threshold C_tr²·N∂.
pub fn assemble_swip(
    mesh: Arc<Mesh>,
    field: &DiffusionField,
    k: usize,
    eta: f64,
    case: &ManufacturedCase,
) -> Result<DiscreteScheme> {
    if !(1..=3).contains(&k) {
        return Err(Error::InvalidInput(format!("SWIP degrees are 1..=3, got {k}")));
    }
    if eta <= 0.0 {
        return Err(Error::InvalidInput("penalty eta must be positive".into()));
    }
    case.check_mesh_compliance(&mesh)?;
    let n_loc = crate::polybasis::poly_dim(k);
    let n_cells = mesh.cells.len();
    let dim = n_loc * n_cells;
    let gdof = |ci: usize, j: usize| ci * n_loc + j;

    let mut a = Triplets::new(dim, dim);
    let mut n_mat = Triplets::new(dim, dim);
    let mut b = DVector::zeros(dim);

    let bases: Vec<CellBasis> = (0..n_cells)
        .map(|ci| CellBasis::for_cell(&mesh, ci, k))
        .collect();

    // Volumetric terms: (K∇w, ∇v)_T into both A and N, and the source.
    for ci in 0..n_cells {
        let k_t = field.for_cell(&mesh, ci);
        let quad = polygon_quadrature(&mesh.cell_vertices(ci), 2 * k)?;
        let g = gradient_gram(&bases[ci], &k_t, &quad);
        for i in 0..n_loc {
            for j in 0..n_loc {
                a.push(gdof(ci, i), gdof(ci, j), g[(i, j)]);
                n_mat.push(gdof(ci, i), gdof(ci, j), g[(i, j)]);
            }
        }
        let lq = polygon_quadrature(&mesh.cell_vertices(ci), k + SMOOTH_QUAD_DEGREE)?;
        for i in 0..n_loc {
            b[gdof(ci, i)] += lq.integrate(|x| (case.f)(x) * bases[ci].eval(i, x));
        }
    }

    // Face terms: penalty + symmetric consistency couplings.
    let face_quad_degree = 2 * k + 2;
    for (fi, face) in mesh.faces.iter().enumerate() {
        let data = dg_face_data(&mesh, field, fi)?;
        let (va, vb) = (mesh.vertices[face.verts[0]], mesh.vertices[face.verts[1]]);
        let fq = segment_quadrature(va, vb, face_quad_degree);
        let t1 = face.cells.0;
        let n_f = mesh.cell_face(t1, fi).normal;
        let k1 = field.for_cell(&mesh, t1);
        let pen = data.lambda / face.diameter;
        match face.cells.1 {
            Some(t2) => {
                let k2 = field.for_cell(&mesh, t2);
                // Sides with jump signs: (cell, weight ω, K, jump sign).
                let sides = [(t1, data.omega1, k1, 1.0), (t2, data.omega2, k2, -1.0)];
                for (x, w) in fq.nodes.iter().zip(&fq.weights) {
                    let vals: [Vec<f64>; 2] =
                        [bases[t1].eval_all(*x), bases[t2].eval_all(*x)];
                    let flux: [Vec<f64>; 2] = [
                        (0..n_loc)
                            .map(|j| k1.apply(bases[t1].grad(j, *x)).dot(&n_f))
                            .collect(),
                        (0..n_loc)
                            .map(|j| k2.apply(bases[t2].grad(j, *x)).dot(&n_f))
                            .collect(),
                    ];
                    for (sa, &(ca, _, _, sgn_a)) in sides.iter().enumerate() {
                        for (sb, &(cb, wt_b, _, sgn_b)) in sides.iter().enumerate() {
                            for i in 0..n_loc {
                                for j in 0..n_loc {
                                    // Penalty η δ/h ([w],[v]); jump part of N.
                                    let jump_ij =
                                        pen * sgn_a * vals[sa][i] * sgn_b * vals[sb][j];
                                    a.push(
                                        gdof(ca, i),
                                        gdof(cb, j),
                                        w * eta * jump_ij,
                                    );
                                    n_mat.push(gdof(ca, i), gdof(cb, j), w * jump_ij);
                                    // −({K∇w}·n,[v]) − ([w],{K∇v}·n):
                                    // rows test (v = φ_a_i), cols trial.
                                    let c1 = wt_b * flux[sb][j] * sgn_a * vals[sa][i];
                                    let c2 = sgn_b * vals[sb][j]
                                        * sides[sa].1
                                        * flux[sa][i];
                                    a.push(gdof(ca, i), gdof(cb, j), -w * (c1 + c2));
                                }
                            }
                        }
                    }
                }
            }
            None => {
                for (x, w) in fq.nodes.iter().zip(&fq.weights) {
                    let vals = bases[t1].eval_all(*x);
                    let flux: Vec<f64> = (0..n_loc)
                        .map(|j| k1.apply(bases[t1].grad(j, *x)).dot(&n_f))
                        .collect();
                    let g_x = (case.u)(*x);
                    for i in 0..n_loc {
                        for j in 0..n_loc {
                            let jump_ij = pen * vals[i] * vals[j];
                            a.push(gdof(t1, i), gdof(t1, j), w * eta * jump_ij);
                            n_mat.push(gdof(t1, i), gdof(t1, j), w * jump_ij);
                            a.push(
                                gdof(t1, i),
                                gdof(t1, j),
                                -w * (flux[j] * vals[i] + vals[j] * flux[i]),
                            );
                        }
                        // Boundary data: η δ/h (g, v)_F − (g, K∇v·n)_F.
                        b[gdof(t1, i)] +=
                            w * g_x * (eta * pen * vals[i] - flux[i]);
                    }
                }
            }
        }
    }

    // Theoretical coercivity constant from the trace estimate.
    let c_tr = ctr_estimate(&mesh, k)?;
    let n_faces_max = mesh.regularity_metrics().max_faces_per_cell as f64;
    let gamma_theory = (eta - c_tr * c_tr * n_faces_max) / (1.0 + eta);

    let system = a.finalize(true);
    let norm = Arc::new(n_mat.finalize(true));

    let interp_mesh = mesh.clone();
    let interpolant = move |c: &ManufacturedCase| -> Result<DVector<f64>> {
        let mut v = DVector::zeros(dim);
        for ci in 0..interp_mesh.cells.len() {
            let p = l2_project(&interp_mesh, ci, &|x| (c.u)(x), k, SMOOTH_QUAD_DEGREE)?;
            for j in 0..n_loc {
                v[ci * n_loc + j] = p.coeffs[j];
            }
        }
        Ok(v)
    };

    let recon_mesh = mesh.clone();
    let recon_bases = bases.clone();
    let reconstruction = move |v: &DVector<f64>,
                               _bc: Option<&ManufacturedCase>|
          -> Result<BrokenPoly> {
        let cells = (0..recon_mesh.cells.len())
            .map(|ci| CellPoly {
                basis: recon_bases[ci].clone(),
                coeffs: DVector::from_fn(n_loc, |j, _| v[ci * n_loc + j]),
            })
            .collect();
        Ok(BrokenPoly { cells })
    };

    let dual_mesh = mesh.clone();
    let dual_bases = bases;
    let dual_load = move |z: &ManufacturedCase| -> Result<DVector<f64>> {
        let mut c = DVector::zeros(dim);
        for ci in 0..dual_mesh.cells.len() {
            let lq =
                polygon_quadrature(&dual_mesh.cell_vertices(ci), k + SMOOTH_QUAD_DEGREE)?;
            for j in 0..n_loc {
                c[ci * n_loc + j] += lq.integrate(|x| (z.f)(x) * dual_bases[ci].eval(j, x));
            }
        }
        Ok(c)
    };

    Ok(DiscreteScheme {
        label: format!("dg{k}"),
        mesh,
        system,
        rhs: b,
        trial_norm: norm.clone(),
        test_norm: norm,
        norm_is_system: false,
        gamma_theory: Some(gamma_theory),
        interpolant: Arc::new(interpolant),
        reconstruction: Some(Arc::new(reconstruction)),
        dual_load: Some(Arc::new(dual_load)),
    })
}

/// Jump seminorm |v|_{s,h} = √(Σ_F δ_F/h_F ‖[v]‖²_F) of a broken
/// polynomial (decay diagnostics for interpolants).
pub fn jump_seminorm(
    mesh: &Mesh,
    field: &DiffusionField,
    poly: &BrokenPoly,
) -> Result<f64> {
    let mut acc = 0.0;
    for (fi, face) in mesh.faces.iter().enumerate() {
        let data = dg_face_data(mesh, field, fi)?;
        let (va, vb) = (mesh.vertices[face.verts[0]], mesh.vertices[face.verts[1]]);
        let fq = segment_quadrature(va, vb, 2 * poly.degree() + 2);
        let t1 = face.cells.0;
        let jump2 = match face.cells.1 {
            Some(t2) => fq.integrate(|x| {
                let j = poly.cells[t1].eval(x) - poly.cells[t2].eval(x);
                j * j
            }),
            None => fq.integrate(|x| {
                let j = poly.cells[t1].eval(x);
                j * j
            }),
        };
        acc += data.lambda / face.diameter * jump2;
    }
    Ok(acc.sqrt())
}
