//! Small 2D geometric primitives shared by the mesh and the schemes.

use nalgebra::{Matrix2, Vector2};

pub type Vec2 = Vector2<f64>;

/// Symmetric positive definite 2×2 tensor, stored as its three entries.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpdTensor2 {
    pub xx: f64,
    pub xy: f64,
    pub yy: f64,
}

impl SpdTensor2 {
    pub fn new(xx: f64, xy: f64, yy: f64) -> Self {
        Self { xx, xy, yy }
    }

    pub fn identity() -> Self {
        Self::new(1.0, 0.0, 1.0)
    }

    pub fn diagonal(kx: f64, ky: f64) -> Self {
        Self::new(kx, 0.0, ky)
    }

    pub fn isotropic(k: f64) -> Self {
        Self::new(k, 0.0, k)
    }

    pub fn apply(&self, v: Vec2) -> Vec2 {
        Vec2::new(self.xx * v.x + self.xy * v.y, self.xy * v.x + self.yy * v.y)
    }

    pub fn as_matrix(&self) -> Matrix2<f64> {
        Matrix2::new(self.xx, self.xy, self.xy, self.yy)
    }

    /// Eigenvalues (λ_min, λ_max), by the closed form for symmetric 2×2.
    pub fn eigenvalues(&self) -> (f64, f64) {
        let half_trace = 0.5 * (self.xx + self.yy);
        let det = self.xx * self.yy - self.xy * self.xy;
        let disc = (half_trace * half_trace - det).max(0.0).sqrt();
        (half_trace - disc, half_trace + disc)
    }

    pub fn lambda_min(&self) -> f64 {
        self.eigenvalues().0
    }

    pub fn lambda_max(&self) -> f64 {
        self.eigenvalues().1
    }

    /// Local anisotropy ratio λ_max / λ_min.
    pub fn anisotropy_ratio(&self) -> f64 {
        let (lo, hi) = self.eigenvalues();
        hi / lo
    }

    pub fn is_spd(&self) -> bool {
        self.lambda_min() > 0.0
    }

    /// Symmetric square root K^{1/2} = Q √Λ Qᵀ.
    pub fn sqrt(&self) -> SpdTensor2 {
        let (lo, hi) = self.eigenvalues();
        if self.xy == 0.0 {
            return SpdTensor2::diagonal(self.xx.sqrt(), self.yy.sqrt());
        }
        // Eigenvector for hi: (xy, hi - xx), normalized.
        let v = Vec2::new(self.xy, hi - self.xx).normalize();
        let (c, s) = (v.x, v.y);
        let (a, b) = (hi.sqrt(), lo.sqrt());
        SpdTensor2::new(
            a * c * c + b * s * s,
            (a - b) * c * s,
            a * s * s + b * c * c,
        )
    }

    pub fn inverse(&self) -> SpdTensor2 {
        let det = self.xx * self.yy - self.xy * self.xy;
        SpdTensor2::new(self.yy / det, -self.xy / det, self.xx / det)
    }
}

/// Signed area of a simple polygon given as a ccw vertex loop (shoelace).
pub fn polygon_signed_area(verts: &[Vec2]) -> f64 {
    let n = verts.len();
    let mut acc = 0.0;
    for i in 0..n {
        let a = verts[i];
        let b = verts[(i + 1) % n];
        acc += a.x * b.y - b.x * a.y;
    }
    0.5 * acc
}

/// Area centroid of a simple polygon (ccw loop).
pub fn polygon_centroid(verts: &[Vec2]) -> Vec2 {
    let n = verts.len();
    let mut cx = 0.0;
    let mut cy = 0.0;
    let mut area = 0.0;
    for i in 0..n {
        let a = verts[i];
        let b = verts[(i + 1) % n];
        let w = a.x * b.y - b.x * a.y;
        area += w;
        cx += (a.x + b.x) * w;
        cy += (a.y + b.y) * w;
    }
    area *= 0.5;
    Vec2::new(cx / (6.0 * area), cy / (6.0 * area))
}

/// Diameter of a polygon: largest pairwise vertex distance.
pub fn polygon_diameter(verts: &[Vec2]) -> f64 {
    let mut d: f64 = 0.0;
    for i in 0..verts.len() {
        for j in (i + 1)..verts.len() {
            d = d.max((verts[i] - verts[j]).norm());
        }
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn tensor_eigen_reconstruction() {
        // K = QΛQᵀ reproduced to 1e-13.
        let k = SpdTensor2::new(2.0, 0.7, 1.3);
        let (lo, hi) = k.eigenvalues();
        assert!(lo > 0.0 && hi > lo);
        let s = k.sqrt();
        let m = s.as_matrix() * s.as_matrix();
        assert_relative_eq!(m[(0, 0)], k.xx, max_relative = 1e-13);
        assert_relative_eq!(m[(0, 1)], k.xy, max_relative = 1e-13);
        assert_relative_eq!(m[(1, 1)], k.yy, max_relative = 1e-13);
    }

    #[test]
    fn anisotropy_ratio_diagonal() {
        let k = SpdTensor2::diagonal(1.0, 1e-4);
        assert_relative_eq!(k.anisotropy_ratio(), 1e4, max_relative = 1e-12);
        assert!(k.anisotropy_ratio() >= 1.0);
    }

    #[test]
    fn unit_square_geometry() {
        let sq = [
            Vec2::new(0.0, 0.0),
            Vec2::new(1.0, 0.0),
            Vec2::new(1.0, 1.0),
            Vec2::new(0.0, 1.0),
        ];
        assert_relative_eq!(polygon_signed_area(&sq), 1.0);
        assert_relative_eq!(polygon_centroid(&sq).x, 0.5);
        assert_relative_eq!(polygon_diameter(&sq), 2f64.sqrt());
    }
}
