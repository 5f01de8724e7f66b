//! Projector approximation-rate studies and the diffusion-weighted energy
//! bound of the oblique projector.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;
use strang_lab_core::geometry::{SpdTensor2, Vec2};
use strang_lab_core::mesh::Mesh;
use strang_lab_core::polybasis::{
    eoc, oblique_project_fn, polygon_quadrature, projector_rate_study, ObliqueClosure,
    ProjectorKind, SmoothFn,
};

type SineFns = (
    fn(Vec2) -> f64,
    fn(Vec2) -> Vec2,
    fn(Vec2) -> (f64, f64, f64),
);

fn sine() -> SineFns {
    let v = |x: Vec2| (PI * x.x).sin() * (PI * x.y).sin();
    let g = |x: Vec2| {
        Vec2::new(
            PI * (PI * x.x).cos() * (PI * x.y).sin(),
            PI * (PI * x.x).sin() * (PI * x.y).cos(),
        )
    };
    let h = |x: Vec2| {
        let s = PI * PI;
        (
            -s * (PI * x.x).sin() * (PI * x.y).sin(),
            s * (PI * x.x).cos() * (PI * x.y).cos(),
            -s * (PI * x.x).sin() * (PI * x.y).sin(),
        )
    };
    (v, g, h)
}

#[test]
fn affine_functions_projected_exactly_at_every_level() {
    let v = |x: Vec2| 0.7 - 1.3 * x.x + 0.4 * x.y;
    let g = |_| Vec2::new(-1.3, 0.4);
    let h = |_| (0.0, 0.0, 0.0);
    let f = SmoothFn {
        value: &v,
        grad: &g,
        hess: &h,
    };
    let rows = projector_rate_study(
        ProjectorKind::Oblique,
        &SpdTensor2::new(1.2, 0.1, 0.8),
        &f,
        1,
        &[2, 4, 8],
    )
    .unwrap();
    for r in &rows {
        assert!(r.err_m0 <= 1e-12, "{:.3e}", r.err_m0);
        assert!(r.err_m1 <= 1e-12);
        assert!(r.err_trace <= 1e-12);
    }
}

#[test]
fn l2_projector_sine_rate_two() {
    // f = sin(πx) at l = 1: the L² error decays at second order.
    let v = |x: Vec2| (PI * x.x).sin();
    let g = |x: Vec2| Vec2::new(PI * (PI * x.x).cos(), 0.0);
    let h = |x: Vec2| (-PI * PI * (PI * x.x).sin(), 0.0, 0.0);
    let f = SmoothFn {
        value: &v,
        grad: &g,
        hess: &h,
    };
    let rows = projector_rate_study(
        ProjectorKind::L2,
        &SpdTensor2::identity(),
        &f,
        1,
        &[2, 4, 8, 16],
    )
    .unwrap();
    let n = rows.len();
    let rate = eoc(rows[n - 2].err_m0, rows[n - 1].err_m0, rows[n - 2].h, rows[n - 1].h);
    assert!((rate - 2.0).abs() <= 0.2, "L2 EOC {rate}");
    // Trace error decays at s − 1/2 = 3/2.
    let tr = eoc(
        rows[n - 2].err_trace,
        rows[n - 1].err_trace,
        rows[n - 2].h,
        rows[n - 1].h,
    );
    assert!((tr - 1.5).abs() <= 0.25, "trace EOC {tr}");
}

#[test]
fn oblique_h1_rate_matches_degree() {
    let (v, g, h) = sine();
    let f = SmoothFn {
        value: &v,
        grad: &g,
        hess: &h,
    };
    for k in [1usize, 2] {
        let rows = projector_rate_study(
            ProjectorKind::Oblique,
            &SpdTensor2::identity(),
            &f,
            k,
            &[4, 8, 16, 32],
        )
        .unwrap();
        let n = rows.len();
        let rate = eoc(rows[n - 2].err_m0, rows[n - 1].err_m0, rows[n - 2].h, rows[n - 1].h);
        assert!(
            (rate - k as f64).abs() <= 0.2,
            "k={k}: weighted H1 EOC {rate}"
        );
    }
}

#[test]
fn oblique_weighted_error_stable_across_anisotropy() {
    // ‖K^{1/2}∇(v−πv)‖ / λ̄^{1/2} stays within a factor 10 over the sweep.
    let (v, g, h) = sine();
    let f = SmoothFn {
        value: &v,
        grad: &g,
        hess: &h,
    };
    let mut normalized = Vec::new();
    for eps in [1.0, 1e-2, 1e-4] {
        let k_t = SpdTensor2::diagonal(1.0, eps);
        let rows =
            projector_rate_study(ProjectorKind::Oblique, &k_t, &f, 2, &[8]).unwrap();
        normalized.push(rows[0].err_m0 / k_t.lambda_max().sqrt());
    }
    let max = normalized.iter().cloned().fold(f64::MIN, f64::max);
    let min = normalized.iter().cloned().fold(f64::MAX, f64::min);
    assert!(max / min <= 10.0, "ratio {:.3}", max / min);
}

#[test]
fn oblique_energy_bound_on_random_samples() {
    // ‖K^{1/2}∇πv‖ ≤ ‖K^{1/2}∇v‖ for 100 random polynomial-plus-sine
    // samples (projection property of the K-weighted seminorm).
    let mesh = Mesh::build_cartesian(2, 2, Vec2::zeros(), Vec2::new(1.0, 1.0), 1)
        .unwrap()
        .perturb(0.2, 5)
        .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for trial in 0..100 {
        let k_t = SpdTensor2::new(
            rng.gen_range(0.5..2.0),
            rng.gen_range(-0.4..0.4),
            rng.gen_range(0.5..2.0),
        );
        let (a, b, c, w1, w2) = (
            rng.gen_range(-1.0..1.0_f64),
            rng.gen_range(-1.0..1.0_f64),
            rng.gen_range(-1.0..1.0_f64),
            rng.gen_range(0.5..4.0_f64),
            rng.gen_range(0.5..4.0_f64),
        );
        let v = move |x: Vec2| a * x.x * x.x + b * x.x * x.y + c * (w1 * x.x + w2 * x.y).sin();
        let gv = move |x: Vec2| {
            Vec2::new(
                2.0 * a * x.x + b * x.y + c * w1 * (w1 * x.x + w2 * x.y).cos(),
                b * x.x + c * w2 * (w1 * x.x + w2 * x.y).cos(),
            )
        };
        let ci = trial % mesh.cells.len();
        let k = 1 + trial % 2;
        let proj =
            oblique_project_fn(&mesh, ci, &k_t, k, &v, &gv, ObliqueClosure::CellMean).unwrap();
        let quad = polygon_quadrature(&mesh.cell_vertices(ci), 2 * k + 12).unwrap();
        let ks = k_t.sqrt();
        let num = quad.integrate(|x| ks.apply(proj.grad(x)).norm_squared()).sqrt();
        let den = quad.integrate(|x| ks.apply(gv(x)).norm_squared()).sqrt();
        assert!(
            num <= den * (1.0 + 1e-12),
            "trial {trial}: Rayleigh {:.15} > 1",
            num / den
        );
    }
}
