//! Quadrature on segments, triangles and polygons.
//!
//! Polygon rules are built by sub-triangulating from the centroid (with an
//! ear-clipping fallback for polygons that are not star-shaped with respect
//! to it) and mapping a tensor Gauss–Legendre rule through the Duffy
//! transform on each triangle. All weights are positive and the rule is
//! exact at least to the requested degree.

use crate::geometry::{polygon_centroid, Vec2};
use crate::{Error, Result};

/// Nodes, weights and the declared polynomial exactness degree of a rule.
#[derive(Debug, Clone)]
pub struct Quadrature {
    pub nodes: Vec<Vec2>,
    pub weights: Vec<f64>,
    pub exactness: usize,
}

impl Quadrature {
    pub fn integrate(&self, f: impl Fn(Vec2) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(x, w)| w * f(*x))
            .sum()
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }
}

/// Gauss–Legendre nodes and weights on [-1, 1], by Newton iteration on the
/// Legendre recurrence. Stable for any modest n.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Chebyshev-based initial guess.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            // Evaluate P_n(x) and P_n'(x).
            let mut p0 = 1.0;
            let mut p1 = x;
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            let p = if n == 1 { x } else { p1 };
            let pm1 = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (x * p - pm1) / (x * x - 1.0);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

/// Quadrature on the segment [a, b], exact to the requested degree.
pub fn segment_quadrature(a: Vec2, b: Vec2, degree: usize) -> Quadrature {
    let n = degree / 2 + 1;
    let (xs, ws) = gauss_legendre(n);
    let mid = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let jac = half.norm();
    let nodes = xs.iter().map(|&t| mid + t * half).collect();
    let weights = ws.iter().map(|&w| w * jac).collect();
    Quadrature {
        nodes,
        weights,
        exactness: 2 * n - 1,
    }
}

/// Tensor Gauss rule on a triangle via the Duffy transform. The collapsed
/// direction needs one extra degree for the Jacobian factor.
fn triangle_quadrature(a: Vec2, b: Vec2, c: Vec2, degree: usize) -> (Vec<Vec2>, Vec<f64>) {
    let nu = (degree + 2).div_ceil(2); // exact to 2nu-1 >= degree + 1
    let nv = degree / 2 + 1; // exact to 2nv-1 >= degree
    let (xu, wu) = gauss_legendre(nu);
    let (xv, wv) = gauss_legendre(nv);
    let area2 = ((b - a).x * (c - a).y - (c - a).x * (b - a).y).abs();
    let mut nodes = Vec::with_capacity(nu * nv);
    let mut weights = Vec::with_capacity(nu * nv);
    for (&u1, &w1) in xu.iter().zip(&wu) {
        let u = 0.5 * (u1 + 1.0);
        for (&v1, &w2) in xv.iter().zip(&wv) {
            let v = 0.5 * (v1 + 1.0);
            // x = (1-u) a + u (1-v) b + u v c; |J| = area2 * u.
            let p = (1.0 - u) * a + u * (1.0 - v) * b + u * v * c;
            nodes.push(p);
            weights.push(0.25 * w1 * w2 * area2 * u);
        }
    }
    (nodes, weights)
}

fn triangle_signed_area(a: Vec2, b: Vec2, c: Vec2) -> f64 {
    0.5 * ((b - a).x * (c - a).y - (c - a).x * (b - a).y)
}

/// Ear-clipping triangulation of a simple ccw polygon.
fn ear_clip(verts: &[Vec2]) -> Result<Vec<[Vec2; 3]>> {
    let mut idx: Vec<usize> = (0..verts.len()).collect();
    let mut tris = Vec::with_capacity(verts.len() - 2);
    let inside = |a: Vec2, b: Vec2, c: Vec2, p: Vec2| -> bool {
        let s1 = triangle_signed_area(a, b, p);
        let s2 = triangle_signed_area(b, c, p);
        let s3 = triangle_signed_area(c, a, p);
        s1 > 0.0 && s2 > 0.0 && s3 > 0.0
    };
    let mut guard = 0usize;
    while idx.len() > 3 {
        guard += 1;
        if guard > verts.len() * verts.len() + 16 {
            return Err(Error::InvalidInput(
                "ear-clipping failed: polygon is not simple".into(),
            ));
        }
        let n = idx.len();
        let mut clipped = false;
        for i in 0..n {
            let (ip, iq, ir) = (idx[(i + n - 1) % n], idx[i], idx[(i + 1) % n]);
            let (a, b, c) = (verts[ip], verts[iq], verts[ir]);
            if triangle_signed_area(a, b, c) <= 0.0 {
                continue;
            }
            let mut ear = true;
            for &j in &idx {
                if j == ip || j == iq || j == ir {
                    continue;
                }
                if inside(a, b, c, verts[j]) {
                    ear = false;
                    break;
                }
            }
            if ear {
                tris.push([a, b, c]);
                idx.remove(i);
                clipped = true;
                break;
            }
        }
        if !clipped {
            return Err(Error::InvalidInput(
                "ear-clipping failed: no ear found".into(),
            ));
        }
    }
    tris.push([verts[idx[0]], verts[idx[1]], verts[idx[2]]]);
    Ok(tris)
}

/// Quadrature on a simple ccw polygon, exact at least to `degree`.
pub fn polygon_quadrature(verts: &[Vec2], degree: usize) -> Result<Quadrature> {
    if verts.len() < 3 {
        return Err(Error::InvalidInput("polygon needs at least 3 vertices".into()));
    }
    let centroid = polygon_centroid(verts);
    let n = verts.len();
    // Fan from the centroid when the polygon is star-shaped with respect
    // to it; otherwise fall back to ear clipping.
    let fan_ok = (0..n).all(|i| {
        triangle_signed_area(centroid, verts[i], verts[(i + 1) % n]) > 0.0
    });
    let tris: Vec<[Vec2; 3]> = if fan_ok {
        (0..n)
            .map(|i| [centroid, verts[i], verts[(i + 1) % n]])
            .collect()
    } else {
        ear_clip(verts)?
    };
    let mut nodes = Vec::new();
    let mut weights = Vec::new();
    for t in tris {
        let (mut xs, mut ws) = triangle_quadrature(t[0], t[1], t[2], degree);
        nodes.append(&mut xs);
        weights.append(&mut ws);
    }
    Ok(Quadrature {
        nodes,
        weights,
        exactness: degree,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn unit_square() -> Vec<Vec2> {
        vec![
            Vec2::new(0.0, 0.0),
            Vec2::new(1.0, 0.0),
            Vec2::new(1.0, 1.0),
            Vec2::new(0.0, 1.0),
        ]
    }

    #[test]
    fn area_degree_zero() {
        let q = polygon_quadrature(&unit_square(), 0).unwrap();
        assert_relative_eq!(q.total_weight(), 1.0, max_relative = 1e-14);
        assert!(q.weights.iter().all(|&w| w > 0.0));
    }

    #[test]
    fn x_squared_degree_two() {
        let q = polygon_quadrature(&unit_square(), 2).unwrap();
        let v = q.integrate(|p| p.x * p.x);
        assert_relative_eq!(v, 1.0 / 3.0, max_relative = 1e-13);
    }

    #[test]
    fn segment_rule_exact() {
        let q = segment_quadrature(Vec2::new(0.0, 0.0), Vec2::new(1.0, 0.0), 5);
        let v = q.integrate(|p| p.x.powi(5));
        assert_relative_eq!(v, 1.0 / 6.0, max_relative = 1e-14);
    }

    #[test]
    fn nonconvex_polygon_falls_back() {
        // L-shaped hexagon whose centroid does not see every edge.
        let verts = vec![
            Vec2::new(0.0, 0.0),
            Vec2::new(2.0, 0.0),
            Vec2::new(2.0, 0.4),
            Vec2::new(0.4, 0.4),
            Vec2::new(0.4, 2.0),
            Vec2::new(0.0, 2.0),
        ];
        let q = polygon_quadrature(&verts, 2).unwrap();
        // Area = 2*0.4 + 0.4*1.6 = 1.44.
        assert_relative_eq!(q.total_weight(), 1.44, max_relative = 1e-13);
        assert!(q.weights.iter().all(|&w| w > 0.0));
    }
}
