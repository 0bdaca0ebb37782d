use num_complex::Complex64;
use proptest::prelude::*;
use sle_core::geometry::dist_to_polyline;
use sle_core::loewner::*;
use sle_core::mc::McEstimate;
use sle_core::{SleError, SleParams};

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

fn p83() -> SleParams {
    SleParams::new(8.0 / 3.0).unwrap()
}

/// Classical RK4 on `g' = a / (g - U(t))` with a fine fixed step.
fn rk4_flow(z: Complex64, a: f64, horizon: f64, h: f64, u: impl Fn(f64) -> f64) -> Complex64 {
    let f = |t: f64, g: Complex64| a / (g - u(t));
    let steps = (horizon / h).round() as usize;
    let mut g = z;
    for i in 0..steps {
        let t = i as f64 * h;
        let k1 = f(t, g);
        let k2 = f(t + h / 2.0, g + k1 * (h / 2.0));
        let k3 = f(t + h / 2.0, g + k2 * (h / 2.0));
        let k4 = f(t + h, g + k3 * h);
        g += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
    }
    g
}

#[test]
fn smooth_driver_matches_rk4_and_error_halves() {
    let p = p83();
    let z = c(0.3, 1.2);
    let exact = rk4_flow(z, p.a(), 1.0, 1e-5, f64::sin);
    let mut errs = Vec::new();
    for k in 6..=10 {
        let step = 2f64.powi(-k);
        let drv = DrivingPath::from_fn(1.0, step, f64::sin).unwrap();
        let last = *flow_point(&drv, z, &p).unwrap().last().unwrap();
        errs.push((last.zz + drv.values()[drv.len() - 1] - exact).norm());
    }
    for w in errs.windows(2) {
        assert!(w[1] <= 0.5 * w[0] * 1.05, "errors {errs:?}");
    }
    assert!(errs[errs.len() - 1] < 1e-3);
}

#[test]
fn constant_driver_closed_form_for_several_kappa() {
    for kappa in [2.0, 8.0 / 3.0, 6.0] {
        let p = SleParams::new(kappa).unwrap();
        let y = 1.0;
        let t_swallow = y * y / (2.0 * p.a());
        let drv = DrivingPath::constant(0.0, t_swallow * 1.5, t_swallow / 1000.0).unwrap();
        let snaps = flow_point(&drv, c(0.0, y), &p).unwrap();
        for s in snaps.iter().filter(|s| s.alive() && s.t < t_swallow * (1.0 - 1e-9)) {
            let exact = (y * y - 2.0 * p.a() * s.t).sqrt();
            assert!((s.zz - c(0.0, exact)).norm() <= 1e-8 * exact, "κ={kappa} t={} rel {}", s.t, (s.zz - c(0.0, exact)).norm() / exact);
            assert!((s.upsilon - exact * exact / y).abs() <= 1e-10);
        }
        let ts = snaps.last().unwrap().swallowed.expect("swallowed");
        assert!((ts - t_swallow).abs() < 1e-4, "κ={kappa}: {ts} vs {t_swallow}");
    }
}

#[test]
fn initial_snapshot_is_identity() {
    let p = p83();
    let drv = DrivingPath::sample(&p, 0.1, 1e-3, 3).unwrap();
    let z = c(-0.4, 0.7);
    let s = flow_point(&drv, z, &p).unwrap()[0];
    assert_eq!(s.zz, z);
    assert_eq!(s.dg, c(1.0, 0.0));
    assert_eq!(s.upsilon, 0.7);
    assert!((s.sinangle - (z.arg()).sin()).abs() < 1e-15);
}

#[test]
fn driver_contract() {
    let p = p83();
    let a = DrivingPath::sample(&p, 1.0, 0.01, 7).unwrap();
    let b = DrivingPath::sample(&p, 1.0, 0.01, 7).unwrap();
    assert_eq!(a.values()[0], 0.0);
    assert_eq!(a, b);
    assert_ne!(a.values(), DrivingPath::sample(&p, 1.0, 0.01, 8).unwrap().values());
    assert!(matches!(DrivingPath::sample(&p, f64::NAN, 0.01, 1), Err(SleError::InvalidArgument(_))));
    assert!(matches!(DrivingPath::sample(&p, 1.0, f64::INFINITY, 1), Err(SleError::InvalidArgument(_))));
    assert!(DrivingPath::sample(&p, 1.0, 0.0, 1).is_err());
}

#[test]
fn driver_variance_at_time_one() {
    let p = p83();
    let n = 10_000;
    let ends: Vec<f64> = (0..n)
        .map(|i| *DrivingPath::sample(&p, 1.0, 1.0 / 64.0, 100 + i).unwrap().values().last().unwrap())
        .collect();
    let sq: Vec<f64> = ends.iter().map(|u| u * u).collect();
    let mean = McEstimate::from_samples(&ends, 0);
    let var = McEstimate::from_samples(&sq, 0);
    assert!(mean.within(0.0, 3.0), "{mean:?}");
    assert!(var.within(1.0, 3.0), "{var:?}");
}

#[test]
fn driver_csv_reload_is_bit_exact() {
    let p = p83();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("u.csv");
    let drv = DrivingPath::sample(&p, 0.5, 1e-3, 11).unwrap();
    drv.save_csv(&path).unwrap();
    let back = DrivingPath::load_csv(&path, 11, MeasureTag::Plain).unwrap();
    assert_eq!(drv, back);
}

#[test]
fn slit_step_examples() {
    let p = p83();
    let dt = 1.0 / (2.0 * p.a());
    let (g, dg) = slit_step(c(0.0, 2.0), 0.0, dt, &p).unwrap();
    assert!((g - c(0.0, 3f64.sqrt())).norm() < 1e-15);
    assert!((dg - c(2.0 / 3f64.sqrt(), 0.0)).norm() < 1e-15);
    // Symmetric about the driver; the height drops.
    let (g, _) = slit_step(c(0.7, 2.0), 0.7, dt, &p).unwrap();
    assert!((g - c(0.7, 3f64.sqrt())).norm() < 1e-15);
    assert!(matches!(slit_step(c(0.7, 0.5), 0.7, dt, &p), Err(SleError::Swallowed { .. })));
}

#[test]
fn inverse_map_examples() {
    let p = p83();
    let drv = DrivingPath::constant(0.0, 1.0 / (2.0 * p.a()), 1e-3).unwrap();
    let (w, d) = inverse_map(&drv, 0.0, c(0.2, 0.9), &p).unwrap();
    assert_eq!((w, d), (c(0.2, 0.9), 1.0));
    let (w, _) = inverse_map(&drv, drv.horizon(), c(0.0, 1.0), &p).unwrap();
    assert!((w - c(0.0, 2f64.sqrt())).norm() < 1e-9, "{w}");
}

#[test]
fn constant_driver_trace_is_vertical() {
    let p = p83();
    let drv = DrivingPath::constant(0.0, 1.0, 1e-2).unwrap();
    let tr = extract_trace(&drv, &p);
    assert_eq!(tr.points[0], c(0.0, 0.0));
    for (t, z) in tr.times.iter().zip(&tr.points) {
        assert!(z.re.abs() < 1e-12);
        assert!((z.im - (2.0 * p.a() * t).sqrt()).abs() < 1e-9);
    }
}

#[test]
fn reflected_driver_mirrors_trace() {
    let p = p83();
    let drv = DrivingPath::sample(&p, 0.5, 1.0 / 256.0, 5).unwrap();
    let a = extract_trace(&drv, &p);
    let b = extract_trace(&drv.reflected(), &p);
    for (x, y) in a.points.iter().zip(&b.points) {
        assert!((x.re + y.re).abs() < 1e-12 && (x.im - y.im).abs() < 1e-12);
    }
}

#[test]
fn koebe_sandwich_on_sampled_paths() {
    let p = p83();
    let pts = [c(0.2, 0.4), c(-0.5, 0.3), c(0.0, 1.0), c(0.8, 0.8), c(-0.1, 0.15)];
    for seed in 0..6 {
        let drv = DrivingPath::sample(&p, 0.5, 1.0 / 1024.0, 40 + seed).unwrap();
        let hull = hull_polylines(&drv, &p, 4);
        for &z in &pts {
            let snaps = flow_point(&drv, z, &p).unwrap();
            let last = snaps.last().unwrap();
            if !last.alive() {
                continue;
            }
            let dist = hull.iter().map(|piece| dist_to_polyline(z, piece)).fold(z.im, f64::min);
            let ratio = last.upsilon / dist;
            assert!((0.5 / 1.2..=2.0 * 1.2).contains(&ratio), "seed {seed}, z {z}: Υ/dist = {ratio}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn upsilon_never_increases(seed in 0u64..10_000, x in -1.5f64..1.5, y in 0.05f64..1.5) {
        let p = p83();
        let drv = DrivingPath::sample(&p, 1.0, 1.0 / 512.0, seed).unwrap();
        let snaps = flow_point(&drv, c(x, y), &p).unwrap();
        for w in snaps.windows(2) {
            prop_assert!(w[1].upsilon <= w[0].upsilon);
            if w[1].alive() {
                prop_assert!(w[1].zz.im > 0.0);
                prop_assert!(w[1].sinangle > 0.0 && w[1].sinangle <= 1.0);
                prop_assert!(w[1].theta > 0.0 && w[1].theta < std::f64::consts::PI);
            }
        }
    }

    #[test]
    fn brownian_scaling_of_flows(seed in 0u64..10_000, x in -1.0f64..1.0, y in 0.1f64..1.0, r in 0.25f64..4.0) {
        let p = p83();
        let drv = DrivingPath::sample(&p, 0.5, 1.0 / 256.0, seed).unwrap();
        let a = flow_point(&drv, c(x, y), &p).unwrap();
        let b = flow_point(&drv.scaled(r), c(x, y) * r, &p).unwrap();
        prop_assert_eq!(a.len(), b.len());
        for (s, t) in a.iter().zip(&b) {
            if s.alive() && t.alive() {
                prop_assert!((t.zz - s.zz * r).norm() <= 1e-9 * r * (1.0 + s.zz.norm()));
                prop_assert!((t.upsilon - s.upsilon * r).abs() <= 1e-9 * r);
            }
        }
    }

    #[test]
    fn inverse_map_round_trip(seed in 0u64..10_000, x in -2.0f64..2.0, y in 0.05f64..2.0, frac in 0.0f64..1.0) {
        let p = p83();
        let drv = DrivingPath::sample(&p, 1.0, 1.0 / 1024.0, seed).unwrap();
        let k = ((drv.len() - 1) as f64 * frac) as usize;
        let z = c(x, y);
        let (w, _) = inverse_map_index(&drv, k, z, &p).unwrap();
        prop_assume!(w.im > 1e-6);
        let (g, _) = forward_map(&drv, k, w, &p).unwrap();
        prop_assert!((g - (z + drv.values()[k])).norm() < 1e-8, "{} vs {}", g, z + drv.values()[k]);
    }
}
