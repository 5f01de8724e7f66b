//! Piecewise-polynomial reconstructions r_h(v_h) and their error integrals.

use crate::geometry::{SpdTensor2, Vec2};
use crate::mesh::Mesh;
use crate::model::ManufacturedCase;
use crate::polybasis::{polygon_quadrature, CellPoly, SMOOTH_QUAD_DEGREE};
use crate::Result;

/// A broken polynomial on the mesh: one local polynomial per cell.
#[derive(Debug, Clone)]
pub struct BrokenPoly {
    pub cells: Vec<CellPoly>,
}

impl BrokenPoly {
    pub fn degree(&self) -> usize {
        self.cells.first().map_or(0, |p| p.basis.degree)
    }

    /// ‖r_h v − u‖_{L²(Ω)} against the case's exact solution.
    pub fn l2_error(&self, mesh: &Mesh, case: &ManufacturedCase) -> Result<f64> {
        let mut acc = 0.0;
        for (ci, poly) in self.cells.iter().enumerate() {
            let quad = polygon_quadrature(
                &mesh.cell_vertices(ci),
                2 * self.degree() + SMOOTH_QUAD_DEGREE,
            )?;
            acc += quad.integrate(|x| {
                let e = poly.eval(x) - (case.u)(x);
                e * e
            });
        }
        Ok(acc.sqrt())
    }

    /// ‖K^{1/2}(∇_h r_h v − ∇u)‖_{L²(Ω)}: the continuous-comparison energy
    /// error of the reconstruction.
    pub fn energy_error(&self, mesh: &Mesh, case: &ManufacturedCase) -> Result<f64> {
        let mut acc = 0.0;
        for (ci, poly) in self.cells.iter().enumerate() {
            let k_sqrt = case.field.for_cell(mesh, ci).sqrt();
            let quad = polygon_quadrature(
                &mesh.cell_vertices(ci),
                2 * self.degree() + SMOOTH_QUAD_DEGREE,
            )?;
            acc += quad.integrate(|x| {
                k_sqrt
                    .apply(poly.grad(x) - (case.grad_u)(x))
                    .norm_squared()
            });
        }
        Ok(acc.sqrt())
    }

    /// ∫_Ω g · (r_h v) for an explicit integrand g.
    pub fn integrate_against(&self, mesh: &Mesh, g: &dyn Fn(Vec2) -> f64) -> Result<f64> {
        let mut acc = 0.0;
        for (ci, poly) in self.cells.iter().enumerate() {
            let quad = polygon_quadrature(
                &mesh.cell_vertices(ci),
                self.degree() + SMOOTH_QUAD_DEGREE,
            )?;
            acc += quad.integrate(|x| g(x) * poly.eval(x));
        }
        Ok(acc)
    }

    /// ‖K^{1/2} ∇_h r_h v‖ for a given field (used in norm diagnostics).
    pub fn energy_seminorm(&self, mesh: &Mesh, field_for_cell: &dyn Fn(usize) -> SpdTensor2) -> Result<f64> {
        let mut acc = 0.0;
        for (ci, poly) in self.cells.iter().enumerate() {
            let k_sqrt = field_for_cell(ci).sqrt();
            let quad = polygon_quadrature(&mesh.cell_vertices(ci), 2 * self.degree())?;
            acc += quad.integrate(|x| k_sqrt.apply(poly.grad(x)).norm_squared());
        }
        Ok(acc.sqrt())
    }
}
