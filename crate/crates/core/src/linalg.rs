//! Sparse SPD solves, small dense solves, norm-matrix dual norms, and
//! generalized eigenvalue estimation for stability constants.
//!
//! Global systems are solved iteratively (Jacobi-preconditioned CG, with
//! BiCGStab for the nonsymmetric MPFA systems); element-local systems go
//! through a dense partial-pivoting factorization. High-accuracy variants
//! wrap the iterative solves in residual refinement so that bound audits
//! are not limited by solver tolerance.

use crate::{Error, Result};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Row-compressed sparse matrix assembled from triplets.
#[derive(Debug, Clone, Default)]
pub struct SparseMatrix {
    pub nrows: usize,
    pub ncols: usize,
    pub row_offsets: Vec<usize>,
    pub col_indices: Vec<usize>,
    pub values: Vec<f64>,
    pub symmetric: bool,
    /// Lazily built IC0 preconditioner (None after a failed attempt).
    ic: std::sync::OnceLock<Option<std::sync::Arc<IncompleteCholesky>>>,
}

/// Triplet accumulator; duplicate (row, col) entries are summed on finalize.
#[derive(Debug, Clone)]
pub struct Triplets {
    nrows: usize,
    ncols: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl Triplets {
    pub fn new(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            entries: Vec::new(),
        }
    }

    pub fn push(&mut self, row: usize, col: usize, value: f64) {
        debug_assert!(row < self.nrows && col < self.ncols);
        if value != 0.0 {
            self.entries.push((row, col, value));
        }
    }

    pub fn finalize(mut self, symmetric: bool) -> SparseMatrix {
        self.entries.sort_by_key(|e| (e.0, e.1));
        let mut counts = vec![0usize; self.nrows];
        let mut col_indices = Vec::with_capacity(self.entries.len());
        let mut values: Vec<f64> = Vec::with_capacity(self.entries.len());
        let mut prev = None;
        for (r, c, v) in self.entries {
            if prev == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_indices.push(c);
                values.push(v);
                counts[r] += 1;
                prev = Some((r, c));
            }
        }
        let mut row_offsets = vec![0usize; self.nrows + 1];
        for r in 0..self.nrows {
            row_offsets[r + 1] = row_offsets[r] + counts[r];
        }
        let m = SparseMatrix {
            nrows: self.nrows,
            ncols: self.ncols,
            row_offsets,
            col_indices,
            values,
            symmetric,
            ic: std::sync::OnceLock::new(),
        };
        if symmetric {
            debug_assert!(m.symmetry_defect() <= 1e-12 * m.max_abs());
        }
        m
    }
}

impl SparseMatrix {
    pub fn identity(n: usize) -> Self {
        let mut t = Triplets::new(n, n);
        for i in 0..n {
            t.push(i, i, 1.0);
        }
        t.finalize(true)
    }

    pub fn mul_vec(&self, x: &DVector<f64>) -> DVector<f64> {
        debug_assert_eq!(x.len(), self.ncols);
        let mut y = DVector::zeros(self.nrows);
        for r in 0..self.nrows {
            let mut acc = 0.0;
            for k in self.row_offsets[r]..self.row_offsets[r + 1] {
                acc += self.values[k] * x[self.col_indices[k]];
            }
            y[r] = acc;
        }
        y
    }

    pub fn transpose_mul_vec(&self, x: &DVector<f64>) -> DVector<f64> {
        debug_assert_eq!(x.len(), self.nrows);
        let mut y = DVector::zeros(self.ncols);
        for r in 0..self.nrows {
            for k in self.row_offsets[r]..self.row_offsets[r + 1] {
                y[self.col_indices[k]] += self.values[k] * x[r];
            }
        }
        y
    }

    pub fn diagonal(&self) -> DVector<f64> {
        let mut d = DVector::zeros(self.nrows);
        for r in 0..self.nrows {
            for k in self.row_offsets[r]..self.row_offsets[r + 1] {
                if self.col_indices[k] == r {
                    d[r] += self.values[k];
                }
            }
        }
        d
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| v.abs().max(m))
    }

    /// max |A − Aᵀ| entry, for the symmetry flag check.
    pub fn symmetry_defect(&self) -> f64 {
        let mut map = std::collections::HashMap::new();
        for r in 0..self.nrows {
            for k in self.row_offsets[r]..self.row_offsets[r + 1] {
                map.insert((r, self.col_indices[k]), self.values[k]);
            }
        }
        let mut worst = 0.0_f64;
        for (&(r, c), &v) in &map {
            let vt = map.get(&(c, r)).copied().unwrap_or(0.0);
            worst = worst.max((v - vt).abs());
        }
        worst
    }

    /// Symmetric part (A + Aᵀ)/2.
    pub fn symmetric_part(&self) -> SparseMatrix {
        if self.symmetric {
            return self.clone();
        }
        let mut t = Triplets::new(self.nrows, self.ncols);
        for r in 0..self.nrows {
            for k in self.row_offsets[r]..self.row_offsets[r + 1] {
                let c = self.col_indices[k];
                t.push(r, c, 0.5 * self.values[k]);
                t.push(c, r, 0.5 * self.values[k]);
            }
        }
        t.finalize(true)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.nrows, self.ncols);
        for r in 0..self.nrows {
            for k in self.row_offsets[r]..self.row_offsets[r + 1] {
                m[(r, self.col_indices[k])] += self.values[k];
            }
        }
        m
    }

    pub fn scale(&mut self, c: f64) {
        for v in &mut self.values {
            *v *= c;
        }
        self.ic = std::sync::OnceLock::new();
    }

    /// IC0 preconditioner, built once per matrix.
    fn preconditioner(&self) -> Option<std::sync::Arc<IncompleteCholesky>> {
        self.ic
            .get_or_init(|| IncompleteCholesky::new(self).map(std::sync::Arc::new))
            .clone()
    }
}

/// Incomplete Cholesky factor (IC0) of an SPD matrix, with diagonal
/// shifting on breakdown. Stored as the lower triangle in CSR plus its
/// transpose for the backward sweep.
#[derive(Debug)]
pub struct IncompleteCholesky {
    // Lower-triangular CSR (columns ascending, diagonal last in each row).
    row_offsets: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
    // Upper-triangular CSR of Lᵀ.
    t_row_offsets: Vec<usize>,
    t_cols: Vec<usize>,
    t_vals: Vec<f64>,
}

impl IncompleteCholesky {
    pub fn new(a: &SparseMatrix) -> Option<Self> {
        let n = a.nrows;
        let mut shift = 0.0;
        'retry: for _ in 0..8 {
            let mut row_offsets = vec![0usize; n + 1];
            let mut cols: Vec<usize> = Vec::new();
            let mut vals: Vec<f64> = Vec::new();
            // Positions of the diagonal entry of each completed row.
            let mut diag_pos = vec![usize::MAX; n];
            for i in 0..n {
                // Lower-triangle pattern of row i (sorted: CSR rows are).
                let lo = a.row_offsets[i];
                let hi = a.row_offsets[i + 1];
                for k in lo..hi {
                    let j = a.col_indices[k];
                    if j > i {
                        continue;
                    }
                    let mut v = a.values[k];
                    if j == i {
                        v += shift * v.abs().max(1.0);
                    }
                    // v −= Σ_p L[i][p] L[j][p], p < j: sparse dot of rows.
                    let (mut pi, mut pj) = (row_offsets[i], row_offsets[j]);
                    let (ei, ej) = (cols.len(), diag_pos[j].min(cols.len()));
                    while pi < ei && pj < ej {
                        match cols[pi].cmp(&cols[pj]) {
                            std::cmp::Ordering::Less => pi += 1,
                            std::cmp::Ordering::Greater => pj += 1,
                            std::cmp::Ordering::Equal => {
                                if cols[pi] < j {
                                    v -= vals[pi] * vals[pj];
                                }
                                pi += 1;
                                pj += 1;
                            }
                        }
                    }
                    if j == i {
                        if v <= 0.0 {
                            shift = if shift == 0.0 { 1e-3 } else { shift * 10.0 };
                            if shift > 1.0 {
                                return None;
                            }
                            continue 'retry;
                        }
                        diag_pos[i] = cols.len();
                        cols.push(i);
                        vals.push(v.sqrt());
                    } else {
                        let d = vals[diag_pos[j]];
                        cols.push(j);
                        vals.push(v / d);
                    }
                }
                row_offsets[i + 1] = cols.len();
            }
            // Build Lᵀ (CSR of the upper triangle).
            let mut counts = vec![0usize; n];
            for &c in &cols {
                counts[c] += 1;
            }
            let mut t_row_offsets = vec![0usize; n + 1];
            for i in 0..n {
                t_row_offsets[i + 1] = t_row_offsets[i] + counts[i];
            }
            let mut cursor = t_row_offsets.clone();
            let mut t_cols = vec![0usize; cols.len()];
            let mut t_vals = vec![0.0; cols.len()];
            for i in 0..n {
                for k in row_offsets[i]..row_offsets[i + 1] {
                    let c = cols[k];
                    t_cols[cursor[c]] = i;
                    t_vals[cursor[c]] = vals[k];
                    cursor[c] += 1;
                }
            }
            return Some(Self {
                row_offsets,
                cols,
                vals,
                t_row_offsets,
                t_cols,
                t_vals,
            });
        }
        None
    }

    /// z = (L Lᵀ)⁻¹ r by forward and backward sweeps.
    pub fn apply(&self, r: &DVector<f64>) -> DVector<f64> {
        let n = r.len();
        let mut y = DVector::zeros(n);
        for i in 0..n {
            let mut acc = r[i];
            let mut diag = 1.0;
            for k in self.row_offsets[i]..self.row_offsets[i + 1] {
                let j = self.cols[k];
                if j == i {
                    diag = self.vals[k];
                } else {
                    acc -= self.vals[k] * y[j];
                }
            }
            y[i] = acc / diag;
        }
        let mut z = DVector::zeros(n);
        for i in (0..n).rev() {
            let mut acc = y[i];
            let mut diag = 1.0;
            for k in self.t_row_offsets[i]..self.t_row_offsets[i + 1] {
                let j = self.t_cols[k];
                if j == i {
                    diag = self.t_vals[k];
                } else {
                    acc -= self.t_vals[k] * z[j];
                }
            }
            z[i] = acc / diag;
        }
        z
    }
}

/// Incomplete-Cholesky-preconditioned conjugate gradients for SPD systems
/// (Jacobi fallback when the factorization breaks down).
///
/// Converges to ‖Ax − b‖ ≤ rel_tol·‖b‖ within 20·n iterations; a direction
/// of nonpositive curvature aborts with `NotSpd`.
pub fn solve_spd(a: &SparseMatrix, b: &DVector<f64>, rel_tol: f64) -> Result<DVector<f64>> {
    cg_with_trace(a, b, rel_tol, None)
}

/// CG from an initial guess: solves the residual system and re-centers.
pub fn cg_with_guess(
    a: &SparseMatrix,
    b: &DVector<f64>,
    rel_tol: f64,
    guess: Option<DVector<f64>>,
) -> Result<DVector<f64>> {
    match guess {
        None => cg_with_trace(a, b, rel_tol, None),
        Some(x0) => {
            let r0 = b - a.mul_vec(&x0);
            let b_norm = b.norm().max(1e-300);
            let tol = (rel_tol * b_norm / r0.norm().max(1e-300)).min(0.5);
            let dx = cg_with_trace(a, &r0, tol, None)?;
            Ok(x0 + dx)
        }
    }
}

/// Per-iteration observer over CG iterates.
pub type IterTrace<'a> = &'a mut dyn FnMut(&DVector<f64>);

/// CG with an optional per-iteration callback on the current iterate
/// (used by tests to observe the energy-norm decrease).
pub fn cg_with_trace(
    a: &SparseMatrix,
    b: &DVector<f64>,
    rel_tol: f64,
    mut trace: Option<IterTrace<'_>>,
) -> Result<DVector<f64>> {
    let n = b.len();
    let b_norm = b.norm();
    if b_norm == 0.0 {
        return Ok(DVector::zeros(n));
    }
    let diag = a.diagonal();
    let ic = if a.symmetric && n >= 200 {
        a.preconditioner()
    } else {
        None
    };
    let precond = |r: &DVector<f64>| -> DVector<f64> {
        match &ic {
            Some(m) => m.apply(r),
            None => DVector::from_fn(n, |i, _| {
                if diag[i] != 0.0 {
                    r[i] / diag[i]
                } else {
                    r[i]
                }
            }),
        }
    };
    let mut x = DVector::zeros(n);
    let mut r = b.clone();
    let mut z = precond(&r);
    let mut p = z.clone();
    let mut rz = r.dot(&z);
    let cap = 20 * n.max(8);
    let mut res = r.norm();
    for _ in 0..cap {
        if res <= rel_tol * b_norm {
            return Ok(x);
        }
        let ap = a.mul_vec(&p);
        let pap = p.dot(&ap);
        if pap <= 0.0 {
            return Err(Error::NotSpd { curvature: pap });
        }
        let alpha = rz / pap;
        x.axpy(alpha, &p, 1.0);
        r.axpy(-alpha, &ap, 1.0);
        if let Some(cb) = trace.as_deref_mut() {
            cb(&x);
        }
        res = r.norm();
        if res <= rel_tol * b_norm {
            return Ok(x);
        }
        z = precond(&r);
        let rz_new = r.dot(&z);
        let beta = rz_new / rz;
        rz = rz_new;
        p = z.clone() + beta * &p;
    }
    if res <= rel_tol.max(1e-10) * b_norm {
        return Ok(x);
    }
    Err(Error::NonConvergence {
        residual: res / b_norm,
        iterations: cap,
    })
}

/// Jacobi-preconditioned BiCGStab for coercive nonsymmetric systems, with
/// a dense LU fallback on breakdown for desk-scale problems.
pub fn solve_nonsymmetric(
    a: &SparseMatrix,
    b: &DVector<f64>,
    rel_tol: f64,
) -> Result<DVector<f64>> {
    let n = b.len();
    let b_norm = b.norm();
    if b_norm == 0.0 {
        return Ok(DVector::zeros(n));
    }
    let diag = a.diagonal();
    let precond = |r: &DVector<f64>| -> DVector<f64> {
        DVector::from_fn(n, |i, _| {
            if diag[i] != 0.0 {
                r[i] / diag[i]
            } else {
                r[i]
            }
        })
    };
    let mut x = DVector::zeros(n);
    let mut r = b.clone();
    let r0 = r.clone();
    let mut rho = 1.0;
    let mut alpha = 1.0;
    let mut omega = 1.0;
    let mut v = DVector::zeros(n);
    let mut p = DVector::zeros(n);
    let cap = 20 * n.max(8);
    for _ in 0..cap {
        let rho_new = r0.dot(&r);
        if rho_new.abs() < 1e-300 {
            break; // breakdown
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        p = &r + beta * (&p - omega * &v);
        let ph = precond(&p);
        v = a.mul_vec(&ph);
        let r0v = r0.dot(&v);
        if r0v.abs() < 1e-300 {
            break;
        }
        alpha = rho / r0v;
        let s = &r - alpha * &v;
        if s.norm() <= rel_tol * b_norm {
            x.axpy(alpha, &ph, 1.0);
            return Ok(x);
        }
        let sh = precond(&s);
        let t = a.mul_vec(&sh);
        let tt = t.dot(&t);
        if tt == 0.0 {
            break;
        }
        omega = t.dot(&s) / tt;
        x.axpy(alpha, &ph, 1.0);
        x.axpy(omega, &sh, 1.0);
        r = &s - omega * &t;
        if r.norm() <= rel_tol * b_norm {
            return Ok(x);
        }
        if omega.abs() < 1e-300 {
            break;
        }
    }
    if r.norm() <= rel_tol * b_norm {
        return Ok(x);
    }
    // Breakdown or stagnation: desk-scale dense fallback.
    if n <= 8192 {
        return solve_dense(&a.to_dense(), b).map(|(x, _)| x);
    }
    Err(Error::NonConvergence {
        residual: r.norm() / b_norm,
        iterations: cap,
    })
}

/// One linear solve, then residual-refinement rounds until the true
/// residual drops to `target` relative to ‖b‖ (or no further progress).
pub fn solve_refined(a: &SparseMatrix, b: &DVector<f64>, target: f64) -> Result<DVector<f64>> {
    let inner = 1e-12;
    let solve = |rhs: &DVector<f64>| -> Result<DVector<f64>> {
        if a.symmetric {
            solve_spd(a, rhs, inner)
        } else {
            solve_nonsymmetric(a, rhs, inner)
        }
    };
    let b_norm = b.norm();
    let mut x = solve(b)?;
    if b_norm == 0.0 {
        return Ok(x);
    }
    let mut res = b - a.mul_vec(&x);
    for _ in 0..6 {
        if res.norm() <= target * b_norm {
            break;
        }
        let dx = solve(&res)?;
        let candidate = &x + &dx;
        let cres = b - a.mul_vec(&candidate);
        if cres.norm() >= 0.9 * res.norm() {
            break;
        }
        x = candidate;
        res = cres;
    }
    Ok(x)
}

/// Partial-pivoted dense solve for element-local systems (dim ≤ 64 in the
/// schemes; larger only in fallbacks). Returns the solution and a 1-norm
/// condition estimate.
pub fn solve_dense(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<(DVector<f64>, f64)> {
    debug_assert_eq!(a.nrows(), a.ncols());
    let norm_a = one_norm(a);
    let lu = a.clone().lu();
    let x = lu
        .solve(b)
        .ok_or_else(|| Error::Singular("dense solve: singular to working precision".into()))?;
    let cond = match lu.try_inverse() {
        Some(inv) => norm_a * one_norm(&inv),
        None => f64::INFINITY,
    };
    if !x.iter().all(|v| v.is_finite()) {
        return Err(Error::Singular("dense solve produced non-finite values".into()));
    }
    Ok((x, cond))
}

/// 1-norm condition estimate of a square dense matrix.
pub fn dense_condition(a: &DMatrix<f64>) -> f64 {
    match a.clone().lu().try_inverse() {
        Some(inv) => one_norm(a) * one_norm(&inv),
        None => f64::INFINITY,
    }
}

fn one_norm(a: &DMatrix<f64>) -> f64 {
    (0..a.ncols())
        .map(|j| a.column(j).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Dual norm ‖e‖_{N*} = √(eᵀ N⁻¹ e) of a functional against an SPD norm
/// matrix, via a refined solve.
pub fn dual_norm(e: &DVector<f64>, n_mat: &SparseMatrix) -> Result<f64> {
    if e.norm() == 0.0 {
        return Ok(0.0);
    }
    let x = solve_refined(n_mat, e, 5e-15)?;
    Ok(e.dot(&x).max(0.0).sqrt())
}

/// Result of the smallest-generalized-eigenvalue estimation.
#[derive(Debug, Clone)]
pub struct MinEig {
    pub value: f64,
    pub vector: DVector<f64>,
    pub converged: bool,
}

/// Smallest generalized eigenvalue of (A_sym, N), seeded
/// deterministically. The bottom of the stiffness/norm pencils showing up
/// here is clustered, which stalls plain inverse power iteration, so the
/// minimization runs a single-vector preconditioned LOBPCG sweep: the
/// Rayleigh–Ritz space {x, M⁻¹(Ax − ρNx), p} needs only matrix–vector
/// products, converges on clustered spectra, and returns the (possibly
/// negative) minimum for indefinite symmetric parts without special
/// casing — a negative value signals non-coercivity.
pub fn min_generalized_eig(
    a_sym: &SparseMatrix,
    n_mat: &SparseMatrix,
    tol: f64,
) -> Result<MinEig> {
    let n = a_sym.nrows;
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut x = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0_f64));
    let nx = n_mat.mul_vec(&x);
    x /= x.dot(&nx).sqrt().max(1e-300);

    // IC0 of A when it factors (SPD case); |diag| Jacobi otherwise.
    let ic = a_sym.preconditioner();
    let diag = a_sym.diagonal();
    let precond = |r: &DVector<f64>| -> DVector<f64> {
        match &ic {
            Some(m) => m.apply(r),
            None => DVector::from_fn(n, |i, _| r[i] / diag[i].abs().max(1e-300)),
        }
    };

    let rayleigh = |v: &DVector<f64>| -> f64 {
        let av = a_sym.mul_vec(v);
        let nv = n_mat.mul_vec(v);
        v.dot(&av) / v.dot(&nv)
    };

    let mut rho = rayleigh(&x);
    let mut p: Option<DVector<f64>> = None;
    let mut stagnant = 0;
    let max_iter = 600;
    let mut converged = false;
    for _ in 0..max_iter {
        let ax = a_sym.mul_vec(&x);
        let nxv = n_mat.mul_vec(&x);
        let residual = &ax - rho * &nxv;
        let w = precond(&residual);

        // Rayleigh–Ritz on span{x, w, p}.
        let mut basis: Vec<DVector<f64>> = vec![x.clone(), w];
        if let Some(pv) = &p {
            basis.push(pv.clone());
        }
        // N-orthonormalize, dropping near-dependent directions.
        let mut ortho: Vec<DVector<f64>> = Vec::new();
        for mut v in basis {
            for u in &ortho {
                let c = u.dot(&n_mat.mul_vec(&v));
                v -= c * u;
            }
            let norm = v.dot(&n_mat.mul_vec(&v)).max(0.0).sqrt();
            if norm > 1e-8 {
                ortho.push(v / norm);
            }
        }
        if ortho.len() < 2 {
            converged = true;
            break;
        }
        let m = ortho.len();
        let mut a_small = DMatrix::zeros(m, m);
        for i in 0..m {
            let avi = a_sym.mul_vec(&ortho[i]);
            for j in 0..m {
                a_small[(i, j)] = ortho[j].dot(&avi);
            }
        }
        let a_small = 0.5 * (&a_small + a_small.transpose());
        let eig = a_small.symmetric_eigen();
        let (mut best_i, mut best_v) = (0, f64::INFINITY);
        for i in 0..m {
            if eig.eigenvalues[i] < best_v {
                best_v = eig.eigenvalues[i];
                best_i = i;
            }
        }
        let c = eig.eigenvectors.column(best_i);
        let mut x_new = DVector::zeros(n);
        for (i, u) in ortho.iter().enumerate() {
            x_new += c[i] * u;
        }
        // Implicit p: the update direction without the x component.
        let mut p_new = DVector::zeros(n);
        for (i, u) in ortho.iter().enumerate().skip(1) {
            p_new += c[i] * u;
        }
        let pn = p_new.dot(&n_mat.mul_vec(&p_new)).max(0.0).sqrt();
        p = if pn > 1e-12 { Some(p_new / pn) } else { None };
        let xn = x_new.dot(&n_mat.mul_vec(&x_new)).max(0.0).sqrt();
        if xn == 0.0 || !xn.is_finite() {
            break;
        }
        x = x_new / xn;
        let rho_new = rayleigh(&x);
        let change = (rho - rho_new).abs() / rho_new.abs().max(1e-300);
        rho = rho_new;
        if change <= tol {
            stagnant += 1;
            if stagnant >= 5 {
                converged = true;
                break;
            }
        } else {
            stagnant = 0;
        }
    }
    Ok(MinEig {
        value: rho,
        vector: x,
        converged,
    })
}

/// Dense generalized symmetric eigensolve oracle: all eigenvalues of
/// (A, N) via Cholesky of N and a symmetric eigendecomposition.
pub fn generalized_eigenvalues_dense(a: &DMatrix<f64>, n: &DMatrix<f64>) -> Result<Vec<f64>> {
    let chol = n
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Singular("norm matrix not SPD".into()))?;
    let l = chol.l();
    let linv = l
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Singular("Cholesky factor not invertible".into()))?;
    let b = &linv * a * linv.transpose();
    let sym = 0.5 * (&b + b.transpose());
    let mut vals: Vec<f64> = sym.symmetric_eigen().eigenvalues.iter().cloned().collect();
    vals.sort_by(|x, y| x.partial_cmp(y).unwrap());
    Ok(vals)
}

/// Largest generalized eigenvalue of a small dense symmetric pencil.
pub fn max_generalized_eig_dense(a: &DMatrix<f64>, n: &DMatrix<f64>) -> Result<f64> {
    Ok(*generalized_eigenvalues_dense(a, n)?
        .last()
        .expect("nonempty spectrum"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn laplacian_2d(n: usize) -> SparseMatrix {
        // 5-point stencil on an n×n interior grid.
        let dim = n * n;
        let idx = |i: usize, j: usize| i * n + j;
        let mut t = Triplets::new(dim, dim);
        for i in 0..n {
            for j in 0..n {
                t.push(idx(i, j), idx(i, j), 4.0);
                if i > 0 {
                    t.push(idx(i, j), idx(i - 1, j), -1.0);
                }
                if i + 1 < n {
                    t.push(idx(i, j), idx(i + 1, j), -1.0);
                }
                if j > 0 {
                    t.push(idx(i, j), idx(i, j - 1), -1.0);
                }
                if j + 1 < n {
                    t.push(idx(i, j), idx(i, j + 1), -1.0);
                }
            }
        }
        t.finalize(true)
    }

    #[test]
    fn triplets_merge_duplicates() {
        let mut t = Triplets::new(2, 2);
        t.push(0, 0, 1.0);
        t.push(0, 0, 2.0);
        t.push(1, 0, 0.5);
        t.push(0, 1, 0.5);
        t.push(1, 1, 1.0);
        let m = t.finalize(true);
        assert_eq!(m.values.len(), 4);
        assert_eq!(m.to_dense()[(0, 0)], 3.0);
    }

    #[test]
    fn cg_identity_and_diagonal() {
        let id = SparseMatrix::identity(5);
        let b = DVector::from_vec(vec![1.0, -2.0, 3.0, 0.5, 0.0]);
        let x = solve_spd(&id, &b, 1e-12).unwrap();
        assert_relative_eq!((x - &b).norm(), 0.0, epsilon = 1e-12);

        let mut t = Triplets::new(5, 5);
        for i in 0..5 {
            t.push(i, i, (i + 1) as f64);
        }
        let d = t.finalize(true);
        let b = DVector::from_element(5, 1.0);
        let x = solve_spd(&d, &b, 1e-14).unwrap();
        for i in 0..5 {
            assert_relative_eq!(x[i], 1.0 / (i + 1) as f64, max_relative = 1e-12);
        }
    }

    #[test]
    fn cg_laplacian_constructed_rhs() {
        let a = laplacian_2d(16);
        let ones = DVector::from_element(a.nrows, 1.0);
        let b = a.mul_vec(&ones);
        let x = solve_spd(&a, &b, 1e-13).unwrap();
        assert!((x - ones).amax() < 1e-10);
    }

    #[test]
    fn cg_rejects_indefinite() {
        let mut t = Triplets::new(2, 2);
        t.push(0, 0, 1.0);
        t.push(1, 1, -1.0);
        let a = t.finalize(true);
        let b = DVector::from_vec(vec![0.0, 1.0]);
        match solve_spd(&a, &b, 1e-12) {
            Err(Error::NotSpd { .. }) => {}
            other => panic!("expected NotSpd, got {other:?}"),
        }
    }

    #[test]
    fn cg_energy_error_monotone() {
        let a = laplacian_2d(8);
        let ones = DVector::from_element(a.nrows, 1.0);
        let b = a.mul_vec(&ones);
        let mut energies = Vec::new();
        {
            let mut cb = |x: &DVector<f64>| {
                let e = x - &ones;
                energies.push(e.dot(&a.mul_vec(&e)));
            };
            cg_with_trace(&a, &b, 1e-12, Some(&mut cb)).unwrap();
        }
        for w in energies.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12), "energy error increased");
        }
    }

    #[test]
    fn dense_solve_examples() {
        let a = DMatrix::identity(3, 3);
        let b = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let (x, cond) = solve_dense(&a, &b).unwrap();
        assert_relative_eq!((x - &b).norm(), 0.0, epsilon = 1e-14);
        assert_relative_eq!(cond, 1.0, max_relative = 1e-12);

        let a = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 4.0]);
        let b = DVector::from_vec(vec![2.0, 4.0]);
        let (x, _) = solve_dense(&a, &b).unwrap();
        assert_relative_eq!(x[0], 1.0);
        assert_relative_eq!(x[1], 1.0);
    }

    #[test]
    fn dense_solve_hilbert() {
        let n = 4;
        let h = DMatrix::from_fn(n, n, |i, j| 1.0 / (i + j + 1) as f64);
        let ones = DVector::from_element(n, 1.0);
        let b = &h * &ones;
        let (x, cond) = solve_dense(&h, &b).unwrap();
        assert!((x - ones).amax() < 1e-7);
        assert!(cond > 1e3);
    }

    #[test]
    fn dense_solve_singular() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        let b = DVector::from_vec(vec![1.0, 1.0]);
        assert!(solve_dense(&a, &b).is_err());
    }

    #[test]
    fn dual_norm_examples() {
        let id = SparseMatrix::identity(3);
        let e = DVector::from_vec(vec![3.0, 4.0, 0.0]);
        assert_relative_eq!(dual_norm(&e, &id).unwrap(), 5.0, max_relative = 1e-12);

        let mut t = Triplets::new(2, 2);
        t.push(0, 0, 4.0);
        t.push(1, 1, 4.0);
        let n4 = t.finalize(true);
        let e = DVector::from_vec(vec![2.0, 0.0]);
        assert_relative_eq!(dual_norm(&e, &n4).unwrap(), 1.0, max_relative = 1e-12);
    }

    #[test]
    fn dual_norm_constructed() {
        // Random SPD N (diagonally dominated) with e = N y: value = √(yᵀNy).
        let n = 10;
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut t = Triplets::new(n, n);
        let mut dense = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in (i + 1)..n {
                let v = rng.gen_range(-0.2..0.2);
                t.push(i, j, v);
                t.push(j, i, v);
                dense[(i, j)] = v;
                dense[(j, i)] = v;
            }
            let d = rng.gen_range(2.0..4.0);
            t.push(i, i, d);
            dense[(i, i)] = d;
        }
        let nm = t.finalize(true);
        let y = DVector::from_fn(n, |i, _| (i as f64 * 0.7).sin());
        let e = nm.mul_vec(&y);
        let expected = y.dot(&nm.mul_vec(&y)).sqrt();
        assert_relative_eq!(dual_norm(&e, &nm).unwrap(), expected, max_relative = 1e-11);

        // Sampled sharpness: random directions never exceed the dual norm,
        // and the maximizer N⁻¹e (dense oracle) attains it.
        let dual = dual_norm(&e, &nm).unwrap();
        for _ in 0..200 {
            let v = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0_f64));
            let ratio = e.dot(&v) / v.dot(&nm.mul_vec(&v)).sqrt();
            assert!(ratio <= dual * (1.0 + 1e-12));
        }
        let vstar = dense.clone().lu().solve(&e).unwrap();
        let ratio = e.dot(&vstar) / vstar.dot(&nm.mul_vec(&vstar)).sqrt();
        assert_relative_eq!(ratio, dual, max_relative = 1e-9);
    }

    #[test]
    fn min_eig_proportional_and_diagonal() {
        let n = SparseMatrix::identity(4);
        let mut a2 = n.clone();
        a2.scale(2.0);
        let r = min_generalized_eig(&a2, &n, 1e-10).unwrap();
        assert_relative_eq!(r.value, 2.0, max_relative = 1e-8);

        let mut t = Triplets::new(2, 2);
        t.push(0, 0, 1.0);
        t.push(1, 1, 3.0);
        let a = t.finalize(true);
        let r = min_generalized_eig(&a, &SparseMatrix::identity(2), 1e-10).unwrap();
        assert_relative_eq!(r.value, 1.0, max_relative = 1e-8);
    }

    #[test]
    fn min_eig_against_dense_oracle() {
        let a = laplacian_2d(6);
        // N: diagonal scaling.
        let mut t = Triplets::new(a.nrows, a.nrows);
        for i in 0..a.nrows {
            t.push(i, i, 1.0 + 0.1 * (i % 5) as f64);
        }
        let nm = t.finalize(true);
        let est = min_generalized_eig(&a, &nm, 1e-9).unwrap();
        let oracle = generalized_eigenvalues_dense(&a.to_dense(), &nm.to_dense()).unwrap()[0];
        assert_relative_eq!(est.value, oracle, max_relative = 1e-4);
        assert!(est.converged);
    }

    #[test]
    fn refined_solve_tightens_residual() {
        let a = laplacian_2d(12);
        let ones = DVector::from_element(a.nrows, 1.0);
        let b = a.mul_vec(&ones);
        let x = solve_refined(&a, &b, 5e-15).unwrap();
        let res = (&b - a.mul_vec(&x)).norm() / b.norm();
        assert!(res <= 1e-13, "refined residual {res:.3e}");
    }

    #[test]
    fn bicgstab_solves_nonsymmetric() {
        // Coercive nonsymmetric: Laplacian + skew perturbation.
        let base = laplacian_2d(8);
        let mut t = Triplets::new(base.nrows, base.nrows);
        for r in 0..base.nrows {
            for k in base.row_offsets[r]..base.row_offsets[r + 1] {
                t.push(r, base.col_indices[k], base.values[k]);
            }
        }
        for i in 0..base.nrows - 1 {
            t.push(i, i + 1, 0.3);
            t.push(i + 1, i, -0.3);
        }
        let a = t.finalize(false);
        let ones = DVector::from_element(a.nrows, 1.0);
        let b = a.mul_vec(&ones);
        let x = solve_nonsymmetric(&a, &b, 1e-12).unwrap();
        assert!((x - ones).amax() < 1e-9);
    }
}

