mod common;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sparsetouch::plate::{deflection, surface_strain, Axis};
use sparsetouch::{ForceTrial, PlateSpec, Point2};

fn interior(rng: &mut ChaCha8Rng, spec: &PlateSpec) -> Point2 {
    Point2::new(rng.random_range(0.05..0.95) * spec.width_a, rng.random_range(0.05..0.95) * spec.height_b)
}

#[test]
fn deflection_matches_direct_double_sum() {
    let spec = PlateSpec { series_terms: 60, ..Default::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..20 {
        let (p, q) = (interior(&mut rng, &spec), interior(&mut rng, &spec));
        let ours = deflection(&spec, &ForceTrial::new(p.u, p.v, 7.0), q).unwrap();
        let oracle = common::navier_deflection(
            spec.width_a,
            spec.height_b,
            spec.flexural_rigidity(),
            (p.u, p.v, 7.0),
            (q.u, q.v),
            60,
        );
        assert!((ours - oracle).abs() <= 1e-12 * oracle.abs().max(1e-12), "{ours} vs {oracle}");
    }
}

#[test]
fn square_plate_central_coefficient() {
    let spec = PlateSpec { width_a: 100.0, height_b: 100.0, series_terms: 200, ..Default::default() };
    let w = deflection(&spec, &ForceTrial::new(50.0, 50.0, 1.0), Point2::new(50.0, 50.0)).unwrap();
    let alpha = w * spec.flexural_rigidity() / (spec.width_a * spec.width_a);
    let levy = common::levy_center_coefficient(400);
    assert!((alpha - levy).abs() / levy < 1e-3, "{alpha} vs {levy}");
    assert!((levy - 0.01160).abs() < 1e-5);
}

#[test]
fn strain_matches_finite_difference() {
    let spec = PlateSpec { series_terms: 80, ..Default::default() };
    let load = ForceTrial::new(70.0, 45.0, 10.0);
    let h = 1e-3 * spec.width_a;
    for q in [Point2::new(140.0, 80.0), Point2::new(30.0, 20.0), Point2::new(100.0, 90.0)] {
        let w = |u: f64, v: f64| deflection(&spec, &load, Point2::new(u, v)).unwrap();
        let fd_u = -(spec.thickness_h / 2.0) * (w(q.u + h, q.v) - 2.0 * w(q.u, q.v) + w(q.u - h, q.v)) / (h * h);
        let fd_v = -(spec.thickness_h / 2.0) * (w(q.u, q.v + h) - 2.0 * w(q.u, q.v) + w(q.u, q.v - h)) / (h * h);
        let su = surface_strain(&spec, &load, q, Axis::U).unwrap();
        let sv = surface_strain(&spec, &load, q, Axis::V).unwrap();
        assert!((su - fd_u).abs() / fd_u.abs() < 1e-4, "{su} vs {fd_u}");
        assert!((sv - fd_v).abs() / fd_v.abs() < 1e-4, "{sv} vs {fd_v}");
    }
}

#[test]
fn reciprocity_and_linearity() {
    let spec = PlateSpec::default();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for _ in 0..50 {
        let (p, q) = (interior(&mut rng, &spec), interior(&mut rng, &spec));
        let a = deflection(&spec, &ForceTrial::new(p.u, p.v, 3.0), q).unwrap();
        let b = deflection(&spec, &ForceTrial::new(q.u, q.v, 3.0), p).unwrap();
        assert!((a - b).abs() <= 1e-9 * a.abs().max(b.abs()));
        let c = deflection(&spec, &ForceTrial::new(p.u, p.v, 12.0), q).unwrap();
        assert!((c - 4.0 * a).abs() <= 1e-12 * c.abs());
    }
}
