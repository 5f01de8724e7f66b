//! Property tests: mesh round trips, quadrature exactness against the
//! divergence-theorem moment oracle, and dual-norm domination.

mod common;

use nalgebra::DVector;
use proptest::prelude::*;
use strang_lab_core::geometry::Vec2;
use strang_lab_core::linalg::{dual_norm, Triplets};
use strang_lab_core::mesh::{read_mesh_str, write_mesh_string, Mesh};
use strang_lab_core::polybasis::polygon_quadrature;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn mesh_round_trip_bit_identical(
        nx in 1usize..6,
        ny in 1usize..6,
        amplitude in 0.0f64..0.3,
        seed in 0u64..1000,
    ) {
        let mesh = Mesh::build_cartesian(nx, ny, Vec2::zeros(), Vec2::new(1.0, 1.0), 1)
            .unwrap()
            .perturb(amplitude, seed)
            .unwrap();
        let back = read_mesh_str(&write_mesh_string(&mesh)).unwrap();
        prop_assert_eq!(&mesh.vertices, &back.vertices);
        prop_assert_eq!(mesh.cells.len(), back.cells.len());
        for (a, b) in mesh.cells.iter().zip(back.cells.iter()) {
            prop_assert_eq!(&a.verts, &b.verts);
        }
        // Perturbation preserves counts and tags.
        prop_assert_eq!(back.faces.len(), mesh.faces.len());
    }

    #[test]
    fn quadrature_matches_moment_oracle(
        seed in 0u64..500,
        degree in 0usize..5,
    ) {
        let verts = common::random_convex_polygon(seed);
        let quad = polygon_quadrature(&verts, degree).unwrap();
        for a in 0..=degree as u32 {
            for b in 0..=(degree as u32 - a) {
                let exact = common::polygon_moment(&verts, a, b);
                let approx = quad.integrate(|p| p.x.powi(a as i32) * p.y.powi(b as i32));
                let scale = exact.abs().max(1e-3);
                prop_assert!(
                    (exact - approx).abs() <= 1e-12 * scale,
                    "x^{} y^{}: {} vs {}", a, b, exact, approx
                );
            }
        }
    }

    #[test]
    fn dual_norm_dominates_random_pairings(
        seed in 0u64..500,
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let n = rng.gen_range(3..12);
        let mut t = Triplets::new(n, n);
        for i in 0..n {
            t.push(i, i, rng.gen_range(0.5..3.0));
            if i + 1 < n {
                let v = rng.gen_range(-0.2..0.2);
                t.push(i, i + 1, v);
                t.push(i + 1, i, v);
            }
        }
        let nm = t.finalize(true);
        let e = DVector::from_fn(n, |i, _| rng.gen_range(-1.0..1.0_f64) * (i as f64 + 1.0));
        let dual = dual_norm(&e, &nm).unwrap();
        for _ in 0..50 {
            let v = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0_f64));
            let vn = v.dot(&nm.mul_vec(&v)).sqrt();
            prop_assert!(e.dot(&v) <= dual * vn * (1.0 + 1e-12));
        }
    }
}
