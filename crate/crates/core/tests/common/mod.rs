//! Shared brute-force oracles for integration tests. Everything here is an
//! independent computational route: divergence-theorem polygon moments and
//! seeded random polygon generation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use strang_lab_core::geometry::Vec2;
use strang_lab_core::polybasis::gauss_legendre;

/// Exact ∫_P x^a y^b over a simple ccw polygon by the divergence theorem:
/// (not every test target uses both oracles)
/// ∫_P x^a y^b = (1/(a+1)) ∮ x^{a+1} y^b n_x ds, with each edge integral
/// done by a 1D Gauss rule exact for the integrand.
#[allow(dead_code)]
pub fn polygon_moment(verts: &[Vec2], a: u32, b: u32) -> f64 {
    let n = verts.len();
    let deg = (a + 1 + b) as usize;
    let (xs, ws) = gauss_legendre(deg / 2 + 1);
    let mut acc = 0.0;
    for i in 0..n {
        let p = verts[i];
        let q = verts[(i + 1) % n];
        let edge = q - p;
        let len = edge.norm();
        let normal = Vec2::new(edge.y, -edge.x) / len;
        let mid = 0.5 * (p + q);
        let half = 0.5 * edge;
        for (&t, &w) in xs.iter().zip(&ws) {
            let x = mid + t * half;
            acc += w * (len / 2.0) * x.x.powi(a as i32 + 1) * x.y.powi(b as i32) * normal.x;
        }
    }
    acc / (a as f64 + 1.0)
}

/// Seeded random convex polygon (jittered radii on sorted angles).
#[allow(dead_code)]
pub fn random_convex_polygon(seed: u64) -> Vec<Vec2> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(3..9);
    let mut angles: Vec<f64> = (0..n)
        .map(|i| std::f64::consts::TAU * (i as f64 + rng.gen_range(0.1..0.9)) / n as f64)
        .collect();
    angles.sort_by(|a, b| a.partial_cmp(b).unwrap());
    angles
        .iter()
        .map(|&t| {
            let r = rng.gen_range(0.5..1.2);
            Vec2::new(0.3 + r * t.cos(), -0.1 + r * t.sin())
        })
        .collect()
}
