//! Diffusion tensor fields on the subdomain partition and manufactured
//! exact solutions with analytic sources and fluxes.
//!
//! Every case carries the exact solution, its gradient and the source term
//! as closures, plus validators that check the PDE residual (by finite
//! differencing the analytic flux), the boundary trace, and normal-flux
//! continuity across subdomain interfaces.

use crate::geometry::{SpdTensor2, Vec2};
use crate::mesh::Mesh;
use crate::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;
use std::sync::Arc;

/// Piecewise-constant SPD tensor per subdomain.
#[derive(Debug, Clone)]
pub struct DiffusionField {
    pub tensors: Vec<SpdTensor2>,
}

impl DiffusionField {
    pub fn constant(k: SpdTensor2) -> Self {
        Self { tensors: vec![k] }
    }

    pub fn new(tensors: Vec<SpdTensor2>) -> Result<Self> {
        for (i, t) in tensors.iter().enumerate() {
            if !t.is_spd() {
                return Err(Error::InvalidInput(format!(
                    "tensor of subdomain {i} is not SPD"
                )));
            }
        }
        Ok(Self { tensors })
    }

    /// Tensor on a subdomain (single-tensor fields apply everywhere).
    pub fn on_subdomain(&self, s: usize) -> SpdTensor2 {
        if self.tensors.len() == 1 {
            self.tensors[0]
        } else {
            self.tensors[s]
        }
    }

    pub fn for_cell(&self, mesh: &Mesh, ci: usize) -> SpdTensor2 {
        self.on_subdomain(mesh.cells[ci].subdomain)
    }

    /// max_T λ̄_T over the field's tensors.
    pub fn lambda_max(&self) -> f64 {
        self.tensors.iter().map(|t| t.lambda_max()).fold(0.0, f64::max)
    }

    pub fn anisotropy_max(&self) -> f64 {
        self.tensors
            .iter()
            .map(|t| t.anisotropy_ratio())
            .fold(1.0, f64::max)
    }
}

type Scalar = Arc<dyn Fn(Vec2) -> f64 + Send + Sync>;
type Vector = Arc<dyn Fn(Vec2) -> Vec2 + Send + Sync>;

/// A manufactured exact solution of −∇·(K∇u) = f on the unit square.
#[derive(Clone)]
pub struct ManufacturedCase {
    pub name: String,
    pub u: Scalar,
    pub grad_u: Vector,
    pub f: Scalar,
    pub field: DiffusionField,
    /// u = 0 on ∂Ω; when false, schemes pin boundary data from `u`.
    pub homogeneous: bool,
    /// True when u is only piecewise smooth (smooth per subdomain).
    pub piecewise_smooth_only: bool,
    /// x-coordinates of vertical interfaces the mesh must resolve.
    pub interfaces_x: Vec<f64>,
}

impl std::fmt::Debug for ManufacturedCase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ManufacturedCase")
            .field("name", &self.name)
            .field("homogeneous", &self.homogeneous)
            .finish()
    }
}

impl ManufacturedCase {
    /// Subdomain of a point for this case's field (vertical strips split at
    /// the case's interfaces).
    pub fn subdomain_of(&self, x: Vec2) -> usize {
        self.interfaces_x.iter().filter(|&&xi| x.x >= xi).count()
    }

    pub fn tensor_at(&self, x: Vec2) -> SpdTensor2 {
        self.field.on_subdomain(self.subdomain_of(x))
    }

    /// Analytic flux K∇u at a point.
    pub fn flux(&self, x: Vec2) -> Vec2 {
        self.tensor_at(x).apply((self.grad_u)(x))
    }

    /// Check −∇·(K∇u) = f at `n` random interior points per subdomain by
    /// second-order central differencing of the analytic flux.
    pub fn check_residual(&self, n: usize, seed: u64) -> Result<()> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n_sub = self.interfaces_x.len() + 1;
        let mut bounds = vec![0.0];
        bounds.extend_from_slice(&self.interfaces_x);
        bounds.push(1.0);
        let h = 1e-5;
        for s in 0..n_sub {
            let (x0, x1) = (bounds[s], bounds[s + 1]);
            for _ in 0..n {
                // Keep the stencil strictly inside the subdomain.
                let x = rng.gen_range(x0 + 2.0 * h..x1 - 2.0 * h);
                let y = rng.gen_range(2.0 * h..1.0 - 2.0 * h);
                let p = Vec2::new(x, y);
                let div = (self.flux(p + Vec2::new(h, 0.0)).x
                    - self.flux(p - Vec2::new(h, 0.0)).x)
                    / (2.0 * h)
                    + (self.flux(p + Vec2::new(0.0, h)).y - self.flux(p - Vec2::new(0.0, h)).y)
                        / (2.0 * h);
                let fv = (self.f)(p);
                let scale = fv.abs().max(div.abs()).max(1e-8);
                if (div + fv).abs() > 1e-5 * scale {
                    return Err(Error::InvalidInput(format!(
                        "case {}: PDE residual {:.3e} at ({x:.4},{y:.4})",
                        self.name,
                        (div + fv).abs()
                    )));
                }
            }
        }
        Ok(())
    }

    /// Check u = 0 on ∂Ω at `n` sample points per side (homogeneous cases).
    pub fn check_boundary(&self, n: usize) -> Result<()> {
        if !self.homogeneous {
            return Ok(());
        }
        for i in 0..n {
            let t = (i as f64 + 0.5) / n as f64;
            for p in [
                Vec2::new(t, 0.0),
                Vec2::new(t, 1.0),
                Vec2::new(0.0, t),
                Vec2::new(1.0, t),
            ] {
                if (self.u)(p).abs() > 1e-12 {
                    return Err(Error::InvalidInput(format!(
                        "case {}: u({p:?}) = {:.3e} on boundary",
                        self.name,
                        (self.u)(p)
                    )));
                }
            }
        }
        Ok(())
    }

    /// Check normal-flux continuity K_L∇u_L·n = K_R∇u_R·n across each
    /// vertical interface at `n` sample points.
    pub fn check_interface_flux(&self, n: usize) -> Result<()> {
        let eps = 1e-9;
        for &xi in &self.interfaces_x {
            for i in 0..n {
                let y = (i as f64 + 0.5) / n as f64;
                let left = self.flux(Vec2::new(xi - eps, y)).x;
                let right = self.flux(Vec2::new(xi + eps, y)).x;
                let scale = left.abs().max(right.abs()).max(1e-12);
                if (left - right).abs() > 1e-10 * scale {
                    return Err(Error::InvalidInput(format!(
                        "case {}: flux jump {:.3e} at interface x = {xi}, y = {y}",
                        self.name,
                        (left - right).abs()
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.check_residual(100, 0)?;
        self.check_boundary(100)?;
        self.check_interface_flux(20)
    }

    /// The mesh resolves every interface: each cell lies on one side.
    pub fn check_mesh_compliance(&self, mesh: &Mesh) -> Result<()> {
        for &xi in &self.interfaces_x {
            for (ci, cell) in mesh.cells.iter().enumerate() {
                let xs: Vec<f64> = cell.verts.iter().map(|&v| mesh.vertices[v].x).collect();
                let lo = xs.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                if lo < xi - 1e-12 && hi > xi + 1e-12 {
                    return Err(Error::InvalidInput(format!(
                        "mesh not compliant with interface x = {xi}: cell {ci} straddles it"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// u = sin(πx) sin(πy) on the unit square with constant K.
pub fn case_smooth_sine(k: SpdTensor2) -> ManufacturedCase {
    let u = move |p: Vec2| (PI * p.x).sin() * (PI * p.y).sin();
    let grad = move |p: Vec2| {
        Vec2::new(
            PI * (PI * p.x).cos() * (PI * p.y).sin(),
            PI * (PI * p.x).sin() * (PI * p.y).cos(),
        )
    };
    // f = −(kxx u_xx + 2 kxy u_xy + kyy u_yy).
    let f = move |p: Vec2| {
        PI * PI
            * ((k.xx + k.yy) * (PI * p.x).sin() * (PI * p.y).sin()
                - 2.0 * k.xy * (PI * p.x).cos() * (PI * p.y).cos())
    };
    ManufacturedCase {
        name: "smooth-sine".into(),
        u: Arc::new(u),
        grad_u: Arc::new(grad),
        f: Arc::new(f),
        field: DiffusionField::constant(k),
        homogeneous: true,
        piecewise_smooth_only: false,
        interfaces_x: Vec::new(),
    }
}

/// u = sin(πx) sin(2πy), used as a manufactured dual solution.
pub fn case_smooth_sine2(k: SpdTensor2) -> ManufacturedCase {
    let u = move |p: Vec2| (PI * p.x).sin() * (2.0 * PI * p.y).sin();
    let grad = move |p: Vec2| {
        Vec2::new(
            PI * (PI * p.x).cos() * (2.0 * PI * p.y).sin(),
            2.0 * PI * (PI * p.x).sin() * (2.0 * PI * p.y).cos(),
        )
    };
    let f = move |p: Vec2| {
        PI * PI
            * ((k.xx + 4.0 * k.yy) * (PI * p.x).sin() * (2.0 * PI * p.y).sin()
                - 4.0 * k.xy * (PI * p.x).cos() * (2.0 * PI * p.y).cos())
    };
    ManufacturedCase {
        name: "smooth-sine-2".into(),
        u: Arc::new(u),
        grad_u: Arc::new(grad),
        f: Arc::new(f),
        field: DiffusionField::constant(k),
        homogeneous: true,
        piecewise_smooth_only: false,
        interfaces_x: Vec::new(),
    }
}

/// u = 16 x(1−x) y(1−y): a smooth bubble with homogeneous trace, even
/// about both midlines (used as a manufactured dual solution that pairs
/// non-degenerately with symmetric primal errors).
pub fn case_bubble(k: SpdTensor2) -> ManufacturedCase {
    let u = |p: Vec2| 16.0 * p.x * (1.0 - p.x) * p.y * (1.0 - p.y);
    let grad = |p: Vec2| {
        Vec2::new(
            16.0 * (1.0 - 2.0 * p.x) * p.y * (1.0 - p.y),
            16.0 * p.x * (1.0 - p.x) * (1.0 - 2.0 * p.y),
        )
    };
    let f = move |p: Vec2| {
        let uxx = -32.0 * p.y * (1.0 - p.y);
        let uyy = -32.0 * p.x * (1.0 - p.x);
        let uxy = 16.0 * (1.0 - 2.0 * p.x) * (1.0 - 2.0 * p.y);
        -(k.xx * uxx + 2.0 * k.xy * uxy + k.yy * uyy)
    };
    ManufacturedCase {
        name: "bubble".into(),
        u: Arc::new(u),
        grad_u: Arc::new(grad),
        f: Arc::new(f),
        field: DiffusionField::constant(k),
        homogeneous: true,
        piecewise_smooth_only: false,
        interfaces_x: Vec::new(),
    }
}

/// Affine u = a + b·x with f = 0; inhomogeneous boundary data.
pub fn case_affine(a: f64, b: Vec2, k: SpdTensor2) -> ManufacturedCase {
    ManufacturedCase {
        name: "affine".into(),
        u: Arc::new(move |p: Vec2| a + b.dot(&p)),
        grad_u: Arc::new(move |_| b),
        f: Arc::new(|_| 0.0),
        field: DiffusionField::constant(k),
        homogeneous: false,
        piecewise_smooth_only: false,
        interfaces_x: Vec::new(),
    }
}

/// Piecewise-linear-in-x solution of a two-layer medium: K = k_left·I on
/// x < x_interface, k_right·I beyond; u(0) = 0, u(1) = 1, continuous at the
/// interface with continuous flux k_L s_L = k_R s_R; f = 0.
pub fn case_layered(k_left: f64, k_right: f64, x_interface: f64) -> Result<ManufacturedCase> {
    if k_left <= 0.0 || k_right <= 0.0 {
        return Err(Error::InvalidInput("layer coefficients must be positive".into()));
    }
    if !(0.0 < x_interface && x_interface < 1.0) {
        return Err(Error::InvalidInput("interface must lie inside (0,1)".into()));
    }
    // s_L x_i + s_R (1 − x_i) = 1 and k_L s_L = k_R s_R.
    let denom = k_left * (1.0 - x_interface) + k_right * x_interface;
    let s_l = k_right / denom;
    let s_r = k_left / denom;
    let xi = x_interface;
    let u = move |p: Vec2| {
        if p.x < xi {
            s_l * p.x
        } else {
            s_l * xi + s_r * (p.x - xi)
        }
    };
    let grad = move |p: Vec2| Vec2::new(if p.x < xi { s_l } else { s_r }, 0.0);
    Ok(ManufacturedCase {
        name: format!("layered-{k_left}-{k_right}"),
        u: Arc::new(u),
        grad_u: Arc::new(grad),
        f: Arc::new(|_| 0.0),
        field: DiffusionField::new(vec![
            SpdTensor2::isotropic(k_left),
            SpdTensor2::isotropic(k_right),
        ])?,
        homogeneous: false,
        piecewise_smooth_only: true,
        interfaces_x: vec![x_interface],
    })
}

/// Resolve a case name from the CLI registry. Accepted forms:
/// `affine`, `smooth-sine`, `smooth-sine:EPS` (K = diag(1, EPS)),
/// `smooth-sine-2`, `bubble`, `layered` (1:4 at 0.5), `layered:KL:KR[:XI]`.
pub fn case_by_name(name: &str) -> Result<ManufacturedCase> {
    let mut parts = name.split(':');
    let head = parts.next().unwrap_or("");
    let args: Vec<&str> = parts.collect();
    let parse = |s: &str| -> Result<f64> {
        s.parse()
            .map_err(|_| Error::UnknownCase(format!("{name} (bad number `{s}`)")))
    };
    match (head, args.as_slice()) {
        ("affine", []) => Ok(case_affine(
            0.3,
            Vec2::new(1.2, -0.7),
            SpdTensor2::diagonal(1.5, 0.5),
        )),
        ("smooth-sine", []) => Ok(case_smooth_sine(SpdTensor2::identity())),
        ("smooth-sine", [eps]) => Ok(case_smooth_sine(SpdTensor2::diagonal(1.0, parse(eps)?))),
        ("smooth-sine-2", []) => Ok(case_smooth_sine2(SpdTensor2::identity())),
        ("bubble", []) => Ok(case_bubble(SpdTensor2::identity())),
        ("layered", []) => case_layered(1.0, 4.0, 0.5),
        ("layered", [kl, kr]) => case_layered(parse(kl)?, parse(kr)?, 0.5),
        ("layered", [kl, kr, xi]) => case_layered(parse(kl)?, parse(kr)?, parse(xi)?),
        _ => Err(Error::UnknownCase(name.into())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn smooth_sine_source_identity() {
        let c = case_smooth_sine(SpdTensor2::identity());
        let p = Vec2::new(0.3, 0.7);
        assert_relative_eq!(
            (c.f)(p),
            2.0 * PI * PI * (PI * p.x).sin() * (PI * p.y).sin(),
            max_relative = 1e-14
        );
        let c = case_smooth_sine(SpdTensor2::diagonal(1.0, 0.25));
        assert_relative_eq!(
            (c.f)(p),
            1.25 * PI * PI * (PI * p.x).sin() * (PI * p.y).sin(),
            max_relative = 1e-14
        );
    }

    #[test]
    fn builtin_cases_validate() {
        case_smooth_sine(SpdTensor2::identity()).validate().unwrap();
        case_smooth_sine(SpdTensor2::new(2.0, 0.5, 1.0)).validate().unwrap();
        case_smooth_sine2(SpdTensor2::diagonal(1.0, 1e-2)).validate().unwrap();
        case_bubble(SpdTensor2::new(1.2, 0.3, 0.9)).validate().unwrap();
        case_affine(0.3, Vec2::new(1.2, -0.7), SpdTensor2::diagonal(1.5, 0.5))
            .validate()
            .unwrap();
        case_layered(1.0, 4.0, 0.5).unwrap().validate().unwrap();
        case_layered(1e-3, 1.0, 0.5).unwrap().validate().unwrap();
    }

    #[test]
    fn affine_gradient_and_source() {
        let c = case_affine(0.0, Vec2::new(1.0, 0.0), SpdTensor2::identity());
        assert_eq!((c.grad_u)(Vec2::new(0.4, 0.9)), Vec2::new(1.0, 0.0));
        assert_eq!((c.f)(Vec2::new(0.2, 0.2)), 0.0);
        // Constant u: zero gradient and zero flux everywhere.
        let c = case_affine(1.0, Vec2::zeros(), SpdTensor2::new(2.0, 0.3, 1.0));
        assert_eq!(c.flux(Vec2::new(0.7, 0.1)), Vec2::zeros());
    }

    #[test]
    fn layered_slopes_against_linear_solve() {
        // Oracle: 2x2 system  s_L/2 + s_R/2 = 1,  1·s_L = 4·s_R.
        let c = case_layered(1.0, 4.0, 0.5).unwrap();
        assert_relative_eq!((c.grad_u)(Vec2::new(0.2, 0.5)).x, 8.0 / 5.0, max_relative = 1e-14);
        assert_relative_eq!((c.grad_u)(Vec2::new(0.8, 0.5)).x, 2.0 / 5.0, max_relative = 1e-14);
        // u continuous at the interface and u(1) = 1.
        assert_relative_eq!((c.u)(Vec2::new(1.0, 0.3)), 1.0, max_relative = 1e-14);
    }

    #[test]
    fn layered_small_eps_flux() {
        let eps = 1e-3;
        let c = case_layered(eps, 1.0, 0.5).unwrap();
        let flux = c.flux(Vec2::new(0.25, 0.5)).x;
        assert_relative_eq!(flux, 2.0 * eps / (eps + 1.0), max_relative = 1e-12);
    }

    #[test]
    fn field_eigen_bounds() {
        let f = DiffusionField::new(vec![SpdTensor2::diagonal(1.0, 1e-4)]).unwrap();
        assert_relative_eq!(f.lambda_max(), 1.0);
        assert_relative_eq!(f.anisotropy_max(), 1e4, max_relative = 1e-12);
        assert!(DiffusionField::new(vec![SpdTensor2::new(1.0, 2.0, 1.0)]).is_err());
    }

    #[test]
    fn compliance_check() {
        let c = case_layered(1.0, 4.0, 0.5).unwrap();
        let good = Mesh::build_cartesian(4, 4, Vec2::zeros(), Vec2::new(1.0, 1.0), 2).unwrap();
        c.check_mesh_compliance(&good).unwrap();
        let bad = Mesh::build_cartesian(3, 3, Vec2::zeros(), Vec2::new(1.0, 1.0), 1).unwrap();
        assert!(c.check_mesh_compliance(&bad).is_err());
    }

    #[test]
    fn registry_names() {
        assert!(case_by_name("affine").is_ok());
        assert!(case_by_name("smooth-sine:1e-4").is_ok());
        assert!(case_by_name("layered:1:100").is_ok());
        assert!(case_by_name("nope").is_err());
    }
}
