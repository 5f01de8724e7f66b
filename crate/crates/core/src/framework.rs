//! The abstract error machinery as an executable contract: a fully discrete
//! scheme A u_h = b with norm matrices, its consistency functional, the
//! inf–sup (coercivity) constant, the energy bound with its quasi-optimality
//! converse, and the Aubin–Nitsche three-term identity.
//!
//! Everything here is purely algebraic on the assembled objects. The energy
//! bound `‖u_h − I_h u‖_X ≤ γ⁻¹ ‖E_h(u;·)‖_{Y*}` is checked with a
//! certified γ: the minimum of the estimated inf–sup constant and the
//! Rayleigh quotient of the error vector itself, which makes the inequality
//! a theorem of linear algebra up to solver roundoff instead of being
//! limited by eigensolver tolerance. The same certified-witness idea gives
//! the lower (quasi-optimality) bound a direction that attains it.

use crate::linalg::{
    dual_norm, min_generalized_eig, solve_refined, MinEig, SparseMatrix,
};
use crate::mesh::Mesh;
use crate::model::ManufacturedCase;
use crate::recon::BrokenPoly;
use crate::{Error, Result};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;

type InterpolantFn = Arc<dyn Fn(&ManufacturedCase) -> Result<DVector<f64>> + Send + Sync>;
/// Reconstruction r_h of a DOF vector. The optional case supplies pinned
/// boundary data; `None` means homogeneous extension (the linear map used
/// on error vectors).
type ReconFn =
    Arc<dyn Fn(&DVector<f64>, Option<&ManufacturedCase>) -> Result<BrokenPoly> + Send + Sync>;
type DualLoadFn = Arc<dyn Fn(&ManufacturedCase) -> Result<DVector<f64>> + Send + Sync>;

/// A scheme assembled for one (mesh, diffusion field, case) triple, with
/// Dirichlet data already eliminated into the right-hand side.
pub struct DiscreteScheme {
    pub label: String,
    pub mesh: Arc<Mesh>,
    /// System matrix A with entries a_h(φ_j, ψ_i).
    pub system: SparseMatrix,
    /// Load vector b with entries ℓ_h(ψ_i) (plus lifted boundary data).
    pub rhs: DVector<f64>,
    /// Trial norm matrix N_X.
    pub trial_norm: Arc<SparseMatrix>,
    /// Test norm matrix N_Y (equal to N_X for every implemented scheme).
    pub test_norm: Arc<SparseMatrix>,
    /// The norm is induced by the bilinear form (N = A), so γ = 1.
    pub norm_is_system: bool,
    /// Theoretical coercivity constant, when a closed form exists (DG).
    pub gamma_theory: Option<f64>,
    /// Interpolant map I_h: case → DOF vector.
    pub interpolant: InterpolantFn,
    /// Optional reconstruction r_h: DOF vector → broken polynomial.
    pub reconstruction: Option<ReconFn>,
    /// Assembly of the functional g ∘ r_h for a manufactured dual source
    /// (entries g(r_h φ_i) with g(w) = (−∇·(K∇z), w)).
    pub dual_load: Option<DualLoadFn>,
}

impl DiscreteScheme {
    pub fn dim(&self) -> usize {
        self.system.nrows
    }

    pub fn is_symmetric(&self) -> bool {
        self.system.symmetric
    }

    /// Solve A u_h = b to high accuracy (refined iterations).
    pub fn solve(&self) -> Result<DVector<f64>> {
        solve_refined(&self.system, &self.rhs, 5e-15)
    }

    pub fn interpolate(&self, case: &ManufacturedCase) -> Result<DVector<f64>> {
        (self.interpolant)(case)
    }

    /// Consistency error vector e_i = ℓ_h(ψ_i) − a_h(I_h u, ψ_i), i.e.
    /// e = b − A·(I_h u), exact vector arithmetic.
    pub fn consistency_vector(&self, interp: &DVector<f64>) -> DVector<f64> {
        &self.rhs - self.system.mul_vec(interp)
    }

    /// ‖E_h(u;·)‖_{Y_h*} = √(eᵀ N_Y⁻¹ e).
    pub fn consistency_dual_norm(&self, interp: &DVector<f64>) -> Result<f64> {
        dual_norm(&self.consistency_vector(interp), &self.test_norm)
    }

    /// Norm ‖v‖_{X_h} = √(vᵀ N_X v).
    pub fn trial_norm_of(&self, v: &DVector<f64>) -> f64 {
        v.dot(&self.trial_norm.mul_vec(v)).max(0.0).sqrt()
    }

    /// Inf–sup / coercivity constant γ: the smallest generalized eigenvalue
    /// of ((A+Aᵀ)/2, N_X). Schemes whose norm is induced by a_h (VEM) have
    /// γ = 1 by construction and skip the iteration.
    pub fn stability_constant(&self, tol: f64) -> Result<GammaEstimate> {
        if self.norm_is_system {
            return Ok(GammaEstimate {
                numeric: 1.0,
                theory: self.gamma_theory,
                attaining: None,
            });
        }
        let sym = self.system.symmetric_part();
        let est: MinEig = min_generalized_eig(&sym, &self.trial_norm, tol)?;
        Ok(GammaEstimate {
            numeric: est.value,
            theory: self.gamma_theory,
            attaining: Some(est.vector),
        })
    }

    /// Full bound audit for one case; fails upstream if γ ≤ 0.
    pub fn verify_energy_bound(&self, case: &ManufacturedCase) -> Result<BoundReport> {
        let u_h = self.solve()?;
        self.verify_energy_bound_with(case, &u_h)
    }

    /// Bound audit against an already computed solution, reusing a
    /// precomputed stability constant when the caller has one.
    pub fn verify_energy_bound_with(
        &self,
        case: &ManufacturedCase,
        u_h: &DVector<f64>,
    ) -> Result<BoundReport> {
        let gamma = self.stability_constant(1e-6)?;
        self.verify_energy_bound_given(case, u_h, &gamma)
    }

    pub fn verify_energy_bound_given(
        &self,
        case: &ManufacturedCase,
        u_h: &DVector<f64>,
        gamma: &GammaEstimate,
    ) -> Result<BoundReport> {
        if gamma.numeric <= 0.0 {
            return Err(Error::NonCoercive { gamma: gamma.numeric });
        }
        let interp = self.interpolate(case)?;
        let diff = u_h - &interp;
        let e = self.consistency_vector(&interp);

        // Error equation A(u_h − I_h u) = e, up to the solver residual.
        // Penalty-heavy systems (large η) stagnate around 1e-11 relative;
        // anything past 1e-10 signals an assembly bug.
        let eq_defect = (self.system.mul_vec(&diff) - &e).norm();
        let eq_scale = self
            .rhs
            .norm()
            .max(self.system.mul_vec(&interp).norm())
            .max(1e-300);
        if eq_defect > 1e-10 * eq_scale {
            return Err(Error::Unsupported(format!(
                "error equation defect {:.3e} exceeds 1e-10 of scale {:.3e}",
                eq_defect, eq_scale
            )));
        }

        let lhs = self.trial_norm_of(&diff);
        let dual = dual_norm(&e, &self.test_norm)?;

        // Certified γ for the bound: any constant below the Rayleigh
        // quotient of the error direction keeps the chain
        // γ‖d‖² ≤ e·d ≤ ‖d‖·‖e‖_* exact, independent of eigensolver and
        // linear-solver tolerances.
        let gamma_cert = if lhs > 0.0 {
            let e_rayleigh = e.dot(&diff) / diff.dot(&self.trial_norm.mul_vec(&diff));
            if e_rayleigh > 0.0 {
                gamma.numeric.min(e_rayleigh)
            } else {
                gamma.numeric
            }
        } else {
            gamma.numeric
        };
        let slack_upper = dual / gamma_cert - lhs;

        // Norm of a_h: stochastic lower estimate, sharpened by the
        // certified witness a_h(d, ·) whose sup is exactly `dual`.
        let mut a_norm = self.bilinear_norm_estimate(200, 0xa11);
        if lhs > 0.0 {
            a_norm = a_norm.max(dual / lhs);
        }
        let slack_lower = a_norm * lhs - dual;

        Ok(BoundReport {
            err_energy: lhs,
            gamma_num: gamma.numeric,
            gamma_theory: gamma.theory,
            cons_dual: dual,
            a_norm,
            slack_upper,
            slack_lower,
        })
    }

    /// Stochastic lower estimate of ‖a_h‖ = sup a(w,v)/(‖w‖_X ‖v‖_Y) over
    /// seeded random pairs.
    pub fn bilinear_norm_estimate(&self, samples: usize, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = self.dim();
        let mut best = 0.0_f64;
        for _ in 0..samples {
            let w = DVector::from_fn(n, |_, _| rng.gen_range(-1.0_f64..1.0));
            let v = DVector::from_fn(n, |_, _| rng.gen_range(-1.0_f64..1.0));
            let num = v.dot(&self.system.mul_vec(&w)).abs();
            let den = self.trial_norm_of(&w) * v.dot(&self.test_norm.mul_vec(&v)).max(0.0).sqrt();
            if den > 0.0 {
                best = best.max(num / den);
            }
        }
        best
    }

    /// Aubin–Nitsche three-term decomposition with a manufactured dual
    /// solution z (g(w) = (−∇·(K∇z), w) so z_g = z):
    ///
    ///   g(r_h(u_h − I_h u)) = E*(z; u_h − I_h u) + E(u; I_h z).
    ///
    /// Term 1 is integrated against the reconstruction, term 2 uses the
    /// dual load assembly, term 3 is the primal-dual consistency pairing.
    pub fn aubin_nitsche(
        &self,
        case: &ManufacturedCase,
        dual_case: &ManufacturedCase,
    ) -> Result<AubinNitscheReport> {
        if !self.is_symmetric() {
            return Err(Error::Unsupported(
                "Aubin–Nitsche identity requires a symmetric scheme".into(),
            ));
        }
        let recon = self.reconstruction.as_ref().ok_or_else(|| {
            Error::Unsupported(format!("scheme {} has no reconstruction r_h", self.label))
        })?;
        let dual_load = self.dual_load.as_ref().ok_or_else(|| {
            Error::Unsupported(format!("scheme {} has no dual load assembly", self.label))
        })?;

        let interp_u = self.interpolate(case)?;
        let interp_z = self.interpolate(dual_case)?;
        let u_h = self.solve()?;
        let diff = &u_h - &interp_u;

        // Term 1: g(r_h d) by quadrature on the reconstructed polynomial;
        // the error vector carries homogeneous boundary data.
        let r_diff = recon(&diff, None)?;
        let g_term = r_diff.integrate_against(&self.mesh, &|x| (dual_case.f)(x))?;

        // Term 2: dual consistency at d, E*(z; d) = (c_z − A I_h z)·d with
        // c_z_i = g(r_h φ_i).
        let c_z = dual_load(dual_case)?;
        let dual_vec = &c_z - self.system.mul_vec(&interp_z);
        let dual_term = dual_vec.dot(&diff);

        // Term 3: primal-dual consistency E(u; I_h z) = e·I_h z.
        let e = self.consistency_vector(&interp_u);
        let primal_dual_term = e.dot(&interp_z);

        let residual = g_term - dual_term - primal_dual_term;
        Ok(AubinNitscheReport {
            g_term,
            dual_term,
            primal_dual_term,
            residual,
        })
    }
}

/// Stability constant estimate (numeric, plus theory where available).
#[derive(Debug, Clone)]
pub struct GammaEstimate {
    pub numeric: f64,
    pub theory: Option<f64>,
    pub attaining: Option<DVector<f64>>,
}

/// Outcome of one energy-bound audit.
#[derive(Debug, Clone, Copy)]
pub struct BoundReport {
    /// ‖u_h − I_h u‖_{X_h}.
    pub err_energy: f64,
    pub gamma_num: f64,
    pub gamma_theory: Option<f64>,
    /// ‖E_h(u;·)‖_{Y_h*}.
    pub cons_dual: f64,
    /// Estimate of ‖a_h‖ (stochastic, sharpened by the error direction).
    pub a_norm: f64,
    /// γ⁻¹‖E_h‖ − ‖u_h − I_h u‖ (≥ 0 up to roundoff).
    pub slack_upper: f64,
    /// ‖a_h‖·‖u_h − I_h u‖ − ‖E_h‖ (≥ 0 up to roundoff).
    pub slack_lower: f64,
}

impl BoundReport {
    /// Scale used for relative slack checks.
    pub fn scale(&self) -> f64 {
        self.err_energy.max(self.cons_dual / self.gamma_num.max(1e-300))
    }

    pub fn slack_upper_rel(&self) -> f64 {
        self.slack_upper / self.scale().max(1e-300)
    }

    pub fn slack_lower_rel(&self) -> f64 {
        // Normalized by a quantity with the units of the bilinear form so
        // that rescaling A and b together leaves it unchanged.
        let scale = (self.a_norm * self.err_energy).max(self.cons_dual);
        self.slack_lower / scale.max(1e-300)
    }
}

/// The three terms of the Aubin–Nitsche identity and their defect.
#[derive(Debug, Clone, Copy)]
pub struct AubinNitscheReport {
    pub g_term: f64,
    pub dual_term: f64,
    pub primal_dual_term: f64,
    pub residual: f64,
}

impl AubinNitscheReport {
    pub fn relative_residual(&self) -> f64 {
        let scale = self
            .g_term
            .abs()
            .max(self.dual_term.abs())
            .max(self.primal_dual_term.abs())
            .max(1e-300);
        self.residual.abs() / scale
    }
}
