//! Batch front-end for the discretization laboratory.
//!
//! Exit codes: 0 success; 1 failed invariant (slack below tolerance) or
//! I/O trouble; 2 unknown scheme or case; 3 mesh not K-admissible for
//! TPFA; 4 non-coercive scheme (reports are still written).

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;
use strang_lab_core::geometry::Vec2;
use strang_lab_core::mesh::{read_mesh, write_mesh, Mesh};
use strang_lab_core::polybasis::ProjectorKind;
use strang_lab_core::study::{
    run_anisotropy_sweep, run_bound_audit, run_convergence, run_projector_rates, MeshFamily,
    StudySpec,
};
use strang_lab_core::Error;

#[derive(Parser)]
#[command(
    name = "strang-lab",
    about = "Polytopal discretization laboratory: convergence studies, bound audits, projector rates, anisotropy sweeps",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct StudyArgs {
    /// Scheme name: vem1 vem2 dg1 dg2 dg3 tpfa hmm mpfa-uniform mpfa-l mpfa-g
    #[arg(long)]
    scheme: String,
    /// Case name: affine, smooth-sine[:EPS], smooth-sine-2, layered[:KL:KR[:XI]]
    #[arg(long)]
    case: String,
    /// Polynomial degree; must agree with the scheme name when both given.
    #[arg(long)]
    k: Option<usize>,
    /// Mesh family (cartesian).
    #[arg(long, default_value = "cartesian")]
    mesh: String,
    /// Levels as START:COUNT, e.g. 8:4 for 8,16,32,64 cells per side.
    #[arg(long, default_value = "8:4")]
    levels: String,
    /// Perturbation amplitude (fraction of local face length).
    #[arg(long)]
    perturb: Option<f64>,
    /// RNG seed (env STRANG_LAB_SEED overrides the default 0).
    #[arg(long)]
    seed: Option<u64>,
    /// DG penalty parameter.
    #[arg(long, default_value_t = 10.0)]
    eta: f64,
    /// HMM stabilization scale.
    #[arg(long, default_value_t = 1.0)]
    stab_scale: f64,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Convergence study: per-level errors, consistency dual norms,
    /// stability constants and bound slacks.
    Study(StudyArgs),
    /// Anisotropy sweep over K = diag(1, eps).
    Sweep {
        #[command(flatten)]
        args: StudyArgs,
        /// Comma-separated epsilon list.
        #[arg(long, default_value = "1,1e-2,1e-4")]
        eps: String,
    },
    /// Projector approximation-rate study.
    ProjectorRates {
        /// l2 | oblique
        #[arg(long, default_value = "oblique")]
        projector: String,
        #[arg(long, default_value_t = 2)]
        k: usize,
        /// K = diag(1, eps).
        #[arg(long, default_value_t = 1.0)]
        eps: f64,
        #[arg(long, default_value = "4:4")]
        levels: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Energy-bound audit with the Aubin-Nitsche identity.
    BoundAudit {
        #[command(flatten)]
        args: StudyArgs,
        /// Manufactured dual solution (smooth-sine, smooth-sine-2, bubble).
        #[arg(long, default_value = "bubble")]
        dual_case: String,
    },
    /// Mesh utilities.
    Mesh {
        #[command(subcommand)]
        command: MeshCommand,
    },
}

#[derive(Subcommand)]
enum MeshCommand {
    /// Generate a Cartesian (optionally perturbed) mesh file.
    Gen {
        #[arg(long)]
        nx: usize,
        #[arg(long)]
        ny: usize,
        #[arg(long, default_value_t = 1)]
        subdomains: usize,
        #[arg(long)]
        perturb: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Validate a mesh file and print its regularity metrics.
    Validate { path: PathBuf },
}

fn default_seed() -> u64 {
    std::env::var("STRANG_LAB_SEED")
        .ok()
        .and_then(|s| s.parse().ok())
        .unwrap_or(0)
}

fn parse_levels(s: &str) -> Result<(usize, usize), Error> {
    let mut it = s.split(':');
    let start = it
        .next()
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| Error::InvalidInput(format!("bad levels spec `{s}`")))?;
    let count = it
        .next()
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| Error::InvalidInput(format!("bad levels spec `{s}`")))?;
    Ok((start, count))
}

fn build_spec(args: &StudyArgs) -> Result<StudySpec, Error> {
    let mut spec = StudySpec::new(&args.scheme, &args.case)?;
    if let Some(k) = args.k {
        let implied = spec.scheme.order();
        let degree_bearing = args.scheme.starts_with("dg") || args.scheme.starts_with("vem");
        if degree_bearing && k != implied {
            return Err(Error::InvalidInput(format!(
                "--k {k} conflicts with scheme `{}` (degree {implied})",
                args.scheme
            )));
        }
    }
    if args.mesh != "cartesian" {
        return Err(Error::InvalidInput(format!(
            "unknown mesh family `{}`",
            args.mesh
        )));
    }
    let (start, count) = parse_levels(&args.levels)?;
    spec.level0 = start;
    spec.levels = count;
    spec.eta = args.eta;
    spec.stab_scale = args.stab_scale;
    spec.seed = args.seed.unwrap_or_else(default_seed);
    if let Some(a) = args.perturb {
        spec.mesh = MeshFamily::Perturbed { amplitude: a };
    }
    Ok(spec)
}

fn exit_code_for(e: &Error) -> u8 {
    match e {
        Error::UnknownScheme(_) | Error::UnknownCase(_) => 2,
        Error::NotAdmissible { .. } => 3,
        Error::NonCoercive { .. } => 4,
        _ => 1,
    }
}

fn run() -> Result<u8, Error> {
    match Cli::parse().command {
        Command::Study(args) => {
            let spec = build_spec(&args)?;
            let report = run_convergence(&spec)?;
            std::fs::write(&args.out, report.to_csv())?;
            if report.non_coercive {
                eprintln!("warning: non-coercive scheme (gamma <= 0); bounds not audited");
                return Ok(4);
            }
            if report.slack_failure {
                eprintln!("FAILED: bound slack below -1e-9 relative");
                return Ok(1);
            }
            Ok(0)
        }
        Command::Sweep { args, eps } => {
            let spec = build_spec(&args)?;
            let eps: Result<Vec<f64>, _> = eps
                .split(',')
                .map(|t| {
                    t.trim()
                        .parse::<f64>()
                        .map_err(|e| Error::InvalidInput(format!("bad eps `{t}`: {e}")))
                })
                .collect();
            let report = run_anisotropy_sweep(&spec, &eps?)?;
            std::fs::write(&args.out, report.to_csv())?;
            Ok(0)
        }
        Command::ProjectorRates {
            projector,
            k,
            eps,
            levels,
            out,
        } => {
            let kind = match projector.as_str() {
                "l2" => ProjectorKind::L2,
                "oblique" => ProjectorKind::Oblique,
                other => {
                    return Err(Error::InvalidInput(format!(
                        "unknown projector `{other}` (expected l2 or oblique)"
                    )))
                }
            };
            let (start, count) = parse_levels(&levels)?;
            let csv = run_projector_rates(kind, eps, k, start, count)?;
            std::fs::write(&out, csv)?;
            Ok(0)
        }
        Command::BoundAudit { args, dual_case } => {
            let spec = build_spec(&args)?;
            let (_, csv) = run_bound_audit(&spec, &dual_case)?;
            std::fs::write(&args.out, csv)?;
            Ok(0)
        }
        Command::Mesh { command } => match command {
            MeshCommand::Gen {
                nx,
                ny,
                subdomains,
                perturb,
                seed,
                out,
            } => {
                let mut mesh =
                    Mesh::build_cartesian(nx, ny, Vec2::zeros(), Vec2::new(1.0, 1.0), subdomains)?;
                if let Some(a) = perturb {
                    mesh = mesh.perturb(a, seed.unwrap_or_else(default_seed))?;
                }
                write_mesh(&mesh, &out)?;
                Ok(0)
            }
            MeshCommand::Validate { path } => {
                let mesh = read_mesh(&path)?;
                let m = mesh.regularity_metrics();
                println!(
                    "valid: {} vertices, {} cells, {} faces ({} internal)",
                    mesh.vertices.len(),
                    mesh.cells.len(),
                    mesh.faces.len(),
                    mesh.internal_faces.len()
                );
                println!(
                    "h = {:.6e}, theta = {:.6}, eta_jump = {:.6}, max faces/cell = {}",
                    m.h, m.theta, m.eta_jump, m.max_faces_per_cell
                );
                Ok(0)
            }
        },
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
