//! Batch harness: convergence studies, anisotropy sweeps, projector rate
//! tables and bound audits, each with deterministic CSV output.

use crate::dg::assemble_swip;
use crate::framework::DiscreteScheme;
use crate::fv::{
    assemble_cellcentred_fv, assemble_hybrid_fv, hmm_fluxes, mpfa_fluxes, tpfa_fluxes,
    MpfaStrategy,
};
use crate::geometry::{SpdTensor2, Vec2};
use crate::mesh::Mesh;
use crate::model::{
    case_bubble, case_by_name, case_smooth_sine, case_smooth_sine2, ManufacturedCase,
};
use crate::polybasis::{self, ProjectorKind, SmoothFn};
use crate::vem::assemble_vem;
use crate::{Error, Result};
use std::f64::consts::PI;
use std::sync::Arc;

/// Mesh family of a study.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MeshFamily {
    Cartesian,
    Perturbed { amplitude: f64 },
}

/// Which scheme to run, parsed from its CLI name.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SchemeKind {
    Vem(usize),
    Dg(usize),
    Tpfa,
    Hmm,
    Mpfa(MpfaStrategy),
}

impl SchemeKind {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "vem1" => Ok(SchemeKind::Vem(1)),
            "vem2" => Ok(SchemeKind::Vem(2)),
            "dg1" => Ok(SchemeKind::Dg(1)),
            "dg2" => Ok(SchemeKind::Dg(2)),
            "dg3" => Ok(SchemeKind::Dg(3)),
            "tpfa" => Ok(SchemeKind::Tpfa),
            "hmm" => Ok(SchemeKind::Hmm),
            "mpfa-uniform" => Ok(SchemeKind::Mpfa(MpfaStrategy::Uniform)),
            "mpfa-l" => Ok(SchemeKind::Mpfa(MpfaStrategy::LProxy)),
            "mpfa-g" => Ok(SchemeKind::Mpfa(MpfaStrategy::GProxy)),
            other => Err(Error::UnknownScheme(other.into())),
        }
    }

    /// Polynomial degree (convergence order r of the energy estimate).
    pub fn order(&self) -> usize {
        match self {
            SchemeKind::Vem(k) | SchemeKind::Dg(k) => *k,
            _ => 1,
        }
    }

    pub fn label(&self) -> String {
        match self {
            SchemeKind::Vem(k) => format!("vem{k}"),
            SchemeKind::Dg(k) => format!("dg{k}"),
            SchemeKind::Tpfa => "tpfa".into(),
            SchemeKind::Hmm => "hmm".into(),
            SchemeKind::Mpfa(s) => s.label().into(),
        }
    }
}

/// One batch-study request.
#[derive(Debug, Clone)]
pub struct StudySpec {
    pub scheme: SchemeKind,
    pub case: String,
    pub mesh: MeshFamily,
    /// Cells per side of the coarsest level.
    pub level0: usize,
    /// Number of refinement levels (≥ 2 for EOC columns).
    pub levels: usize,
    /// DG penalty parameter.
    pub eta: f64,
    /// HMM stabilization scale.
    pub stab_scale: f64,
    pub seed: u64,
}

impl StudySpec {
    pub fn new(scheme: &str, case: &str) -> Result<Self> {
        Ok(Self {
            scheme: SchemeKind::parse(scheme)?,
            case: case.into(),
            mesh: MeshFamily::Cartesian,
            level0: 8,
            levels: 4,
            eta: 10.0,
            stab_scale: 1.0,
            seed: 0,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels < 2 {
            return Err(Error::InvalidInput(
                "a study needs at least 2 levels for EOC columns".into(),
            ));
        }
        Ok(())
    }

    /// Mesh of one refinement level.
    pub fn mesh_at(&self, level: usize, case: &ManufacturedCase) -> Result<Mesh> {
        let n = self.level0 << level;
        let n_sub = case.interfaces_x.len() + 1;
        let mesh = Mesh::build_cartesian(n, n, Vec2::zeros(), Vec2::new(1.0, 1.0), n_sub)?;
        match self.mesh {
            MeshFamily::Cartesian => Ok(mesh),
            MeshFamily::Perturbed { amplitude } => {
                mesh.perturb(amplitude, self.seed.wrapping_add(level as u64))
            }
        }
    }

    /// Assemble the scheme on a given mesh.
    pub fn assemble(&self, mesh: Arc<Mesh>, case: &ManufacturedCase) -> Result<DiscreteScheme> {
        match self.scheme {
            SchemeKind::Vem(k) => assemble_vem(mesh, &case.field, k, case),
            SchemeKind::Dg(k) => assemble_swip(mesh, &case.field, k, self.eta, case),
            SchemeKind::Tpfa => {
                let fam = tpfa_fluxes(&mesh, &case.field)?;
                assemble_hybrid_fv(mesh, &case.field, &fam, case)
            }
            SchemeKind::Hmm => {
                let fam = hmm_fluxes(&mesh, &case.field, self.stab_scale)?;
                assemble_hybrid_fv(mesh, &case.field, &fam, case)
            }
            SchemeKind::Mpfa(strategy) => {
                let u = case.u.clone();
                let fam = mpfa_fluxes(&mesh, &case.field, strategy, &|x| (u)(x))?;
                assemble_cellcentred_fv(mesh, &case.field, &fam, case)
            }
        }
    }
}

/// One row of a convergence report.
#[derive(Debug, Clone)]
pub struct LevelRow {
    pub level: usize,
    pub h: f64,
    pub ndof: usize,
    pub err_energy: f64,
    pub err_energy_recons: Option<f64>,
    pub err_l2: Option<f64>,
    pub cons_dual: f64,
    pub gamma_num: f64,
    pub gamma_theory: Option<f64>,
    pub slack_upper: Option<f64>,
    pub slack_lower: Option<f64>,
    /// Scale for "exact" detection: norm of the interpolant.
    pub scale: f64,
}

#[derive(Debug, Clone)]
pub struct ConvergenceReport {
    pub scheme: String,
    pub case: String,
    pub rows: Vec<LevelRow>,
    /// Any level had γ ≤ 0 (reported, bound columns left empty).
    pub non_coercive: bool,
    /// Any slack fell below −1e-9 relative.
    pub slack_failure: bool,
}

/// EOC between two levels, or the `exact` marker when both errors sit at
/// roundoff relative to the problem scale.
pub enum EocEntry {
    Value(f64),
    Exact,
    None,
}

pub fn eoc_between(
    e_coarse: f64,
    e_fine: f64,
    h_coarse: f64,
    h_fine: f64,
    scale: f64,
) -> EocEntry {
    if e_coarse <= 1e-10 * scale && e_fine <= 1e-10 * scale {
        return EocEntry::Exact;
    }
    if e_coarse <= 0.0 || e_fine <= 0.0 {
        return EocEntry::None;
    }
    EocEntry::Value((e_coarse / e_fine).ln() / (h_coarse / h_fine).ln())
}

impl ConvergenceReport {
    /// Least-squares slope of log(error) against log(h) over all levels.
    pub fn least_squares_eoc(&self, f: impl Fn(&LevelRow) -> Option<f64>) -> Option<f64> {
        let pts: Vec<(f64, f64)> = self
            .rows
            .iter()
            .filter_map(|r| f(r).filter(|e| *e > 0.0).map(|e| (r.h.ln(), e.ln())))
            .collect();
        if pts.len() < 2 {
            return None;
        }
        let n = pts.len() as f64;
        let sx: f64 = pts.iter().map(|p| p.0).sum();
        let sy: f64 = pts.iter().map(|p| p.1).sum();
        let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
        let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
        let denom = n * sxx - sx * sx;
        if denom.abs() < 1e-300 {
            return None;
        }
        Some((n * sxy - sx * sy) / denom)
    }

    /// Last-pair EOC of a column selector, when defined numerically.
    pub fn last_eoc(&self, f: impl Fn(&LevelRow) -> Option<f64>) -> Option<f64> {
        let n = self.rows.len();
        if n < 2 {
            return None;
        }
        let (a, b) = (&self.rows[n - 2], &self.rows[n - 1]);
        match (f(a), f(b)) {
            (Some(ea), Some(eb)) => match eoc_between(ea, eb, a.h, b.h, a.scale) {
                EocEntry::Value(v) => Some(v),
                _ => None,
            },
            _ => None,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "level,h,ndof,err_energy,err_energy_recons,err_l2,cons_dual,gamma_num,gamma_theory,slack_upper,slack_lower,eoc_energy,eoc_l2\n",
        );
        for (i, row) in self.rows.iter().enumerate() {
            let eoc = |sel: &dyn Fn(&LevelRow) -> Option<f64>| -> String {
                if i == 0 {
                    return String::new();
                }
                let prev = &self.rows[i - 1];
                match (sel(prev), sel(row)) {
                    (Some(ep), Some(ec)) => {
                        match eoc_between(ep, ec, prev.h, row.h, prev.scale) {
                            EocEntry::Value(v) => format!("{v:.6}"),
                            EocEntry::Exact => "exact".into(),
                            EocEntry::None => String::new(),
                        }
                    }
                    _ => String::new(),
                }
            };
            let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.12e}"));
            out.push_str(&format!(
                "{},{:.12e},{},{:.12e},{},{},{:.12e},{:.12e},{},{},{},{},{}\n",
                row.level,
                row.h,
                row.ndof,
                row.err_energy,
                opt(row.err_energy_recons),
                opt(row.err_l2),
                row.cons_dual,
                row.gamma_num,
                opt(row.gamma_theory),
                opt(row.slack_upper),
                opt(row.slack_lower),
                eoc(&|r: &LevelRow| Some(r.err_energy)),
                eoc(&|r: &LevelRow| r.err_l2),
            ));
        }
        // Least-squares slopes over all levels, as trailing comments.
        if let Some(s) = self.least_squares_eoc(|r| Some(r.err_energy)) {
            out.push_str(&format!("# least_squares_eoc_energy = {s:.6}\n"));
        }
        if let Some(s) = self.least_squares_eoc(|r| r.err_l2) {
            out.push_str(&format!("# least_squares_eoc_l2 = {s:.6}\n"));
        }
        out
    }
}

/// Run a convergence study: per level assemble, solve, and collect error,
/// consistency and bound columns.
pub fn run_convergence(spec: &StudySpec) -> Result<ConvergenceReport> {
    spec.validate()?;
    let case = case_by_name(&spec.case)?;
    let mut rows = Vec::with_capacity(spec.levels);
    let mut non_coercive = false;
    let mut slack_failure = false;
    for level in 0..spec.levels {
        let mesh = Arc::new(spec.mesh_at(level, &case)?);
        let scheme = spec.assemble(mesh.clone(), &case)?;
        let u_h = scheme.solve()?;
        let interp = scheme.interpolate(&case)?;
        let diff = &u_h - &interp;
        let err_energy = scheme.trial_norm_of(&diff);
        let scale = scheme.trial_norm_of(&interp).max(1e-300);
        let cons_dual = scheme.consistency_dual_norm(&interp)?;

        let (err_energy_recons, err_l2) = match &scheme.reconstruction {
            Some(recon) => {
                let r = recon(&u_h, Some(&case))?;
                if r.degree() >= 1 {
                    (
                        Some(r.energy_error(&mesh, &case)?),
                        Some(r.l2_error(&mesh, &case)?),
                    )
                } else {
                    // Piecewise-constant FV reconstructions are compared
                    // against the interpolant, ‖r_h(u_h − I_h u)‖, the
                    // discrete L² error natural to cell values.
                    let rd = recon(&diff, None)?;
                    let l2 = rd
                        .cells
                        .iter()
                        .enumerate()
                        .map(|(ci, poly)| mesh.cells[ci].measure * poly.coeffs[0] * poly.coeffs[0])
                        .sum::<f64>()
                        .sqrt();
                    (None, Some(l2))
                }
            }
            None => (None, None),
        };

        let gamma = scheme.stability_constant(1e-6)?;
        let (gamma_num, slack_upper, slack_lower) = if gamma.numeric > 0.0 {
            let report = scheme.verify_energy_bound_given(&case, &u_h, &gamma)?;
            if report.slack_upper_rel() < -1e-9 || report.slack_lower_rel() < -1e-9 {
                slack_failure = true;
            }
            (
                gamma.numeric,
                Some(report.slack_upper),
                Some(report.slack_lower),
            )
        } else {
            non_coercive = true;
            (gamma.numeric, None, None)
        };

        rows.push(LevelRow {
            level,
            h: mesh.regularity_metrics().h,
            ndof: scheme.dim(),
            err_energy,
            err_energy_recons,
            err_l2,
            cons_dual,
            gamma_num,
            gamma_theory: scheme.gamma_theory,
            slack_upper,
            slack_lower,
            scale,
        });
    }
    Ok(ConvergenceReport {
        scheme: spec.scheme.label(),
        case: spec.case.clone(),
        rows,
        non_coercive,
        slack_failure,
    })
}

/// Anisotropy sweep: smooth sine with K = diag(1, ε), energy errors
/// normalized by √α·√λ̄·h^r.
#[derive(Debug, Clone)]
pub struct SweepReport {
    pub scheme: String,
    pub eps: Vec<f64>,
    /// rows[i][level] = (h, err_energy, normalized).
    pub rows: Vec<Vec<(f64, f64, f64)>>,
    /// max over levels of (max/min normalized error across eps).
    pub ratio_max_min: f64,
    /// max over levels and eps of normalized(ε)/normalized(ε = first).
    pub ratio_vs_reference: f64,
}

pub fn run_anisotropy_sweep(spec: &StudySpec, eps: &[f64]) -> Result<SweepReport> {
    spec.validate()?;
    if eps.is_empty() {
        return Err(Error::InvalidInput("empty epsilon list".into()));
    }
    let r = spec.scheme.order() as f64;
    let mut rows = Vec::with_capacity(eps.len());
    for &e in eps {
        let case = case_smooth_sine(SpdTensor2::diagonal(1.0, e));
        let alpha = case.field.anisotropy_max();
        let lam = case.field.lambda_max();
        let mut per_level = Vec::with_capacity(spec.levels);
        for level in 0..spec.levels {
            let mesh = Arc::new(spec.mesh_at(level, &case)?);
            let scheme = spec.assemble(mesh.clone(), &case)?;
            let u_h = scheme.solve()?;
            let interp = scheme.interpolate(&case)?;
            let err = scheme.trial_norm_of(&(u_h - interp));
            let h = mesh.regularity_metrics().h;
            let normalized = err / (alpha.sqrt() * lam.sqrt() * h.powf(r));
            per_level.push((h, err, normalized));
        }
        rows.push(per_level);
    }
    let mut ratio_max_min = 0.0_f64;
    let mut ratio_vs_reference = 0.0_f64;
    for level in 0..spec.levels {
        let vals: Vec<f64> = rows.iter().map(|r| r[level].2).collect();
        let max = vals.iter().cloned().fold(f64::MIN, f64::max);
        let min = vals.iter().cloned().fold(f64::MAX, f64::min);
        ratio_max_min = ratio_max_min.max(max / min);
        ratio_vs_reference = ratio_vs_reference.max(max / vals[0]);
    }
    Ok(SweepReport {
        scheme: spec.scheme.label(),
        eps: eps.to_vec(),
        rows,
        ratio_max_min,
        ratio_vs_reference,
    })
}

impl SweepReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("eps,level,h,err_energy,err_normalized\n");
        for (ei, e) in self.eps.iter().enumerate() {
            for (level, &(h, err, norm)) in self.rows[ei].iter().enumerate() {
                out.push_str(&format!(
                    "{e:.6e},{level},{h:.12e},{err:.12e},{norm:.12e}\n"
                ));
            }
        }
        out.push_str(&format!("# ratio_max_min = {:.12e}\n", self.ratio_max_min));
        out.push_str(&format!(
            "# ratio_vs_reference = {:.12e}\n",
            self.ratio_vs_reference
        ));
        out
    }
}

/// Projector rate study on the smooth sine, as a CSV table.
pub fn run_projector_rates(
    kind: ProjectorKind,
    eps: f64,
    k: usize,
    level0: usize,
    levels: usize,
) -> Result<String> {
    let k_t = SpdTensor2::diagonal(1.0, eps);
    let value = |x: Vec2| (PI * x.x).sin() * (PI * x.y).sin();
    let grad = |x: Vec2| {
        Vec2::new(
            PI * (PI * x.x).cos() * (PI * x.y).sin(),
            PI * (PI * x.x).sin() * (PI * x.y).cos(),
        )
    };
    let hess = |x: Vec2| {
        let s = PI * PI;
        (
            -s * (PI * x.x).sin() * (PI * x.y).sin(),
            s * (PI * x.x).cos() * (PI * x.y).cos(),
            -s * (PI * x.x).sin() * (PI * x.y).sin(),
        )
    };
    let v = SmoothFn {
        value: &value,
        grad: &grad,
        hess: &hess,
    };
    let sizes: Vec<usize> = (0..levels).map(|l| level0 << l).collect();
    let rows = polybasis::projector_rate_study(kind, &k_t, &v, k, &sizes)?;
    let mut out = String::from("level,h,err_m0,err_m1,err_trace,eoc_m0,eoc_m1,eoc_trace\n");
    for (i, row) in rows.iter().enumerate() {
        let eoc = |cur: f64, sel: &dyn Fn(&polybasis::RateRow) -> f64| -> String {
            if i == 0 {
                String::new()
            } else {
                format!(
                    "{:.6}",
                    polybasis::eoc(sel(&rows[i - 1]), cur, rows[i - 1].h, row.h)
                )
            }
        };
        out.push_str(&format!(
            "{i},{:.12e},{:.12e},{:.12e},{:.12e},{},{},{}\n",
            row.h,
            row.err_m0,
            row.err_m1,
            row.err_trace,
            eoc(row.err_m0, &|r| r.err_m0),
            eoc(row.err_m1, &|r| r.err_m1),
            eoc(row.err_trace, &|r| r.err_trace),
        ));
    }
    Ok(out)
}

/// Per-level bound audit rows (plus the Aubin–Nitsche identity when the
/// scheme supports it).
#[derive(Debug, Clone)]
pub struct AuditRow {
    pub level: usize,
    pub h: f64,
    pub ndof: usize,
    pub err_energy: f64,
    pub cons_dual: f64,
    pub gamma_num: f64,
    pub gamma_theory: Option<f64>,
    pub a_norm: f64,
    pub slack_upper: f64,
    pub slack_lower: f64,
    pub an_residual: Option<f64>,
    pub an_primal_dual: Option<f64>,
}

/// Rebuild a named smooth dual case carrying the primal diffusion tensor.
fn dual_case_with_field(name: &str, k: crate::geometry::SpdTensor2) -> Result<ManufacturedCase> {
    match name {
        "smooth-sine" => Ok(case_smooth_sine(k)),
        "smooth-sine-2" => Ok(case_smooth_sine2(k)),
        "bubble" => Ok(case_bubble(k)),
        other => Err(Error::UnknownCase(format!(
            "{other} (dual cases must be smooth: smooth-sine, smooth-sine-2, bubble)"
        ))),
    }
}

pub fn run_bound_audit(
    spec: &StudySpec,
    dual_case_name: &str,
) -> Result<(Vec<AuditRow>, String)> {
    spec.validate()?;
    let case = case_by_name(&spec.case)?;
    let mut rows = Vec::new();
    for level in 0..spec.levels {
        let mesh = Arc::new(spec.mesh_at(level, &case)?);
        let scheme = spec.assemble(mesh.clone(), &case)?;
        let report = scheme.verify_energy_bound(&case)?;
        // The identity needs symmetry and a single-tensor field (the dual
        // problem must share the primal bilinear form).
        let an = if scheme.is_symmetric() && case.field.tensors.len() == 1 {
            let dual = dual_case_with_field(dual_case_name, case.field.tensors[0])?;
            Some(scheme.aubin_nitsche(&case, &dual)?)
        } else {
            None
        };
        rows.push(AuditRow {
            level,
            h: mesh.regularity_metrics().h,
            ndof: scheme.dim(),
            err_energy: report.err_energy,
            cons_dual: report.cons_dual,
            gamma_num: report.gamma_num,
            gamma_theory: report.gamma_theory,
            a_norm: report.a_norm,
            slack_upper: report.slack_upper,
            slack_lower: report.slack_lower,
            an_residual: an.map(|a| a.residual),
            an_primal_dual: an.map(|a| a.primal_dual_term),
        });
    }
    let mut csv = String::from(
        "level,h,ndof,err_energy,cons_dual,gamma_num,gamma_theory,a_norm,slack_upper,slack_lower,an_residual,an_primal_dual\n",
    );
    for r in &rows {
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.12e}"));
        csv.push_str(&format!(
            "{},{:.12e},{},{:.12e},{:.12e},{:.12e},{},{:.12e},{:.12e},{:.12e},{},{}\n",
            r.level,
            r.h,
            r.ndof,
            r.err_energy,
            r.cons_dual,
            r.gamma_num,
            opt(r.gamma_theory),
            r.a_norm,
            r.slack_upper,
            r.slack_lower,
            opt(r.an_residual),
            opt(r.an_primal_dual),
        ));
    }
    Ok((rows, csv))
}
