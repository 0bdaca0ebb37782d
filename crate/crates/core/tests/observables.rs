use std::f64::consts::PI;

use num_complex::Complex64;
use proptest::prelude::*;
use sle_core::conditioned::{martingale_mean, MartingaleStop};
use sle_core::loewner::{extract_trace, flow_point, DrivingPath, MeasureTag, PointState};
use sle_core::observables::*;
use sle_core::SleParams;

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

fn p83() -> SleParams {
    SleParams::new(8.0 / 3.0).unwrap()
}

#[test]
fn green_homogeneity_is_exact() {
    for kappa in [1.0, 2.0, 8.0 / 3.0, 4.0, 6.0, 7.5] {
        let p = SleParams::new(kappa).unwrap();
        for z in [c(0.3, 0.2), c(-2.0, 0.7), c(0.0, 1.0), c(5.0, 0.01)] {
            let g = green_one(&p, z).unwrap().value;
            for r in [0.5, 2.0, 10.0] {
                let gr = green_one(&p, z * r).unwrap().value;
                let expect = r.powf(p.d() - 2.0) * g;
                assert!((gr - expect).abs() <= 1e-12 * expect, "κ={kappa} z={z} r={r}");
            }
        }
    }
    assert!(green_one(&p83(), c(0.0, -1.0)).is_err());
    assert!(green_one(&p83(), c(f64::NAN, 1.0)).is_err());
}

#[test]
fn green_examples() {
    for kappa in [1.0, 8.0 / 3.0, 6.0] {
        assert!((green_one(&SleParams::new(kappa).unwrap(), c(0.0, 1.0)).unwrap().value - 1.0).abs() < 1e-15);
    }
    let p2 = SleParams::new(2.0).unwrap();
    assert!((green_one(&p2, c(0.0, 2.0)).unwrap().value - 0.594_604).abs() < 1e-6);
    assert!((green_one(&p83(), c(1.0, 1.0)).unwrap().value - 0.5).abs() < 1e-12);
}

#[test]
fn martingale_on_vertical_slit() {
    let p = p83();
    let y = 1.3;
    let tz = y * y / (2.0 * p.a());
    let drv = DrivingPath::constant(0.0, tz * 0.999, tz / 500.0).unwrap();
    let snaps = flow_point(&drv, c(0.0, y), &p).unwrap();
    assert_eq!(martingale_one(&snaps[0], &p).unwrap(), green(&p, c(0.0, y)));
    let mut prev = 0.0;
    for s in &snaps {
        let m = martingale_one(s, &p).unwrap();
        let expect = ((y * y - 2.0 * p.a() * s.t) / y).powf(p.d() - 2.0);
        assert!((m - expect).abs() <= 1e-9 * expect);
        assert!(m > prev);
        prev = m;
    }
    // Close to the swallowing time M is large.
    assert!(prev > 10.0);
}

#[test]
fn martingale_refuses_swallowed_points() {
    let p = p83();
    let drv = DrivingPath::constant(0.0, 1.0, 1e-3).unwrap();
    let last = *flow_point(&drv, c(0.0, 0.5), &p).unwrap().last().unwrap();
    assert!(!last.alive());
    assert!(martingale_one(&last, &p).is_err());
}

#[test]
fn stopped_martingale_is_unbiased() {
    let p = p83();
    let z = c(0.0, 1.0);
    let est = martingale_mean(&p, z, 0.2, 1.0, MartingaleStop::Stopped, 10_000, 3).unwrap();
    assert!(est.within(green(&p, z), 3.0), "{est:?}");
}

#[test]
fn unstopped_martingale_is_deficient_near_the_origin() {
    let p = p83();
    let z = c(0.1, 0.5);
    let est = martingale_mean(&p, z, 0.01, 1.0, MartingaleStop::Capped, 10_000, 4).unwrap();
    let g = green(&p, z);
    assert!(g - est.mean > 3.0 * est.stderr, "{est:?} vs {g}");
}

#[test]
fn two_point_martingale_at_time_zero_and_swap() {
    let p = p83();
    let oracle = |z: Complex64, w: Complex64| Some(green(&p, z) * green(&p, w) * (1.0 + (z - w).norm().recip()));
    let drv = DrivingPath::constant(0.0, 0.1, 0.01).unwrap();
    let a = flow_point(&drv, c(0.3, 1.0), &p).unwrap();
    let b = flow_point(&drv, c(-0.5, 0.4), &p).unwrap();
    let m0 = martingale_two(&a[0], &b[0], &p, &oracle).unwrap();
    assert_eq!(m0, oracle(a[0].z0, b[0].z0).unwrap());
    let k = a.len() - 1;
    let m = martingale_two(&a[k], &b[k], &p, &oracle).unwrap();
    let m_swapped = martingale_two(&b[k], &a[k], &p, &oracle).unwrap();
    assert!((m - m_swapped).abs() <= 1e-14 * m);
    let missing = |_: Complex64, _: Complex64| None;
    assert!(martingale_two(&a[k], &b[k], &p, &missing).is_err());
}

#[test]
fn harmonic_measure_empty_domain() {
    let p = p83();
    let h = harmonic_q(&p, None, c(0.0, 3.0), 16, 1).unwrap();
    assert_eq!(h.q.mean, 0.5);
    assert_eq!(h.s, 1.0);
    let z = Complex64::from_polar(1.0, PI / 4.0);
    let h = harmonic_q(&p, None, z, 16, 1).unwrap();
    assert!((h.q.mean - 0.25).abs() < 1e-15);
    assert!(2.0 * h.q.mean <= h.s && h.s <= PI * h.q.mean);
}

#[test]
fn harmonic_measure_bounds_the_angle_in_slit_domains() {
    let p = p83();
    for seed in 0..3 {
        let drv = DrivingPath::sample(&p, 0.25, 1.0 / 1024.0, 60 + seed).unwrap();
        for z in [c(0.4, 0.5), c(-0.6, 0.3), c(0.1, 1.2)] {
            let Ok(h) = harmonic_q(&p, Some((&drv, 0.25)), z, 2000, seed) else {
                continue;
            };
            let tol = 3.0 * h.q.stderr;
            assert!(2.0 * (h.q.mean - tol) <= h.s, "seed {seed} z {z}: q {:?} S {}", h.q, h.s);
            assert!(h.s <= PI * (h.q.mean + tol), "seed {seed} z {z}: q {:?} S {}", h.q, h.s);
        }
    }
}

#[test]
fn lshape_predicates() {
    let p = p83();
    let x = 0.6;
    let z = c(x, 1.0);
    let tz = 1.0 / (2.0 * p.a());
    // Vertical trace grown from x: shifted driver, U_0 = x.
    let times: Vec<f64> = (0..=200).map(|k| tz * 0.99 * k as f64 / 200.0).collect();
    let drv = DrivingPath::new(times.clone(), vec![x; times.len()], 0, MeasureTag::Plain).unwrap();
    let tr = extract_trace(&drv, &p);
    let mut tr = tr;
    tr.points[0] = c(x, 0.0);
    for rho in [0.01, 0.1, 0.5] {
        assert!(lshape_contains(&LShape::new(z, rho).unwrap(), &tr));
    }
    let mut out = tr.clone();
    out.points.push(z + c(0.0, 2.0 * 0.1 * z.norm()));
    assert!(!lshape_contains(&LShape::new(z, 0.1).unwrap(), &out));
    assert!(lshape_contains(&LShape::new(z, 0.2 * 1.01).unwrap(), &out));
}

/// Driver moving linearly from 0 to `Re z` over `[0, ramp]`, then chasing
/// `Re g_t(z)` so that `z` is swallowed.
fn ramp_driver(p: &SleParams, z: Complex64, ramp: f64, horizon: f64, step: f64) -> DrivingPath {
    let mut st = PointState::new(z);
    let (mut times, mut values) = (vec![0.0], vec![0.0]);
    let mut t = 0.0;
    while t < horizon {
        let u = if t < ramp { z.re * t / ramp } else { st.g.re };
        *values.last_mut().unwrap() = u;
        st.advance(u, t, step, p.a());
        t += step;
        times.push(t);
        values.push(u);
    }
    DrivingPath::new(times, values, 0, MeasureTag::Plain).unwrap()
}

#[test]
fn event_e_on_deterministic_drivers() {
    let p = p83();
    let z = c(0.5, 1.0);
    let delta = 0.02;
    let tz0 = z.im * z.im / (2.0 * p.a());
    let drv = ramp_driver(&p, z, delta / 2.0, tz0 + 2.0 * delta, 1e-4);
    let snaps = flow_point(&drv, z, &p).unwrap();
    let ts = snaps.last().unwrap().swallowed;
    assert!(ts.is_some());
    assert!(event_e_z_delta(&p, z, delta, &drv, ts));
    // Confinement follows for the deterministic trace.
    let k = drv.cells_until(ts.unwrap());
    let tr = extract_trace(&drv.truncated(k), &p);
    assert!(lshape_contains(&LShape::new(z, 0.25).unwrap(), &tr));
    // Mirror image.
    let zm = c(-z.re, z.im);
    let snaps = flow_point(&drv.reflected(), zm, &p).unwrap();
    assert!(event_e_z_delta(&p, zm, delta, &drv.reflected(), snaps.last().unwrap().swallowed));
    // A driver escaping above x + δ after time δ.
    let bad = DrivingPath::new(
        drv.times().to_vec(),
        drv.times()
            .iter()
            .zip(drv.values())
            .map(|(&t, &u)| if t > 2.0 * delta && t < 3.0 * delta { u + 2.0 * delta } else { u })
            .collect(),
        0,
        MeasureTag::Plain,
    )
    .unwrap();
    let snaps = flow_point(&bad, z, &p).unwrap();
    assert!(!event_e_z_delta(&p, z, delta, &bad, snaps.last().unwrap().swallowed));
    assert!(!event_e_z_delta(&p, z, delta, &drv, None));
}

#[test]
fn lshape_map_bounds_on_vertical_slit() {
    let p = p83();
    let z = c(0.0, 1.0);
    let t = 1.0 / (2.0 * p.a());
    let drv = DrivingPath::constant(0.0, t, t / 400.0).unwrap();
    let shape = LShape::new(z, 0.125).unwrap();
    let w = c(0.0, 2.0);
    let (ratio, dg) = lshape_map_bounds(&p, &shape, &drv, drv.len() - 1, w).unwrap();
    assert!((dg - 2.0 / 3f64.sqrt()).abs() < 1e-9);
    assert!((ratio - (3f64.sqrt() / 2.0).powf(p.d() - 2.0)).abs() < 1e-9);
    assert!(lshape_map_bounds(&p, &shape, &drv, drv.len() - 1, c(0.05, 0.5)).is_err());
}

#[test]
fn lshape_map_bounds_band_on_perturbed_drivers() {
    let p = p83();
    let z = c(0.4, 1.0);
    let shape = LShape::new(z, 0.25).unwrap();
    let tz0 = z.im * z.im / (2.0 * p.a());
    let mut ratios = Vec::new();
    for j in 0..8 {
        let amp = 0.02 * j as f64;
        let freq = 3.0 + j as f64;
        let drv = DrivingPath::from_fn(tz0 * 0.9, 1e-3, |t| z.re * (t / 0.01).min(1.0) + amp * (freq * t).sin()).unwrap();
        for w in [c(2.0, 1.0), c(0.0, 3.0), c(-1.0, 0.5), c(1.5, 0.3)] {
            let (g_ratio, dg) = lshape_map_bounds(&p, &shape, &drv, drv.len() - 1, w).unwrap();
            ratios.push((g_ratio, dg));
        }
    }
    for (g_ratio, dg) in ratios {
        assert!((0.2..5.0).contains(&g_ratio), "{g_ratio}");
        assert!((0.2..5.0).contains(&dg), "{dg}");
    }
}

#[test]
fn grid_csv_columns() {
    let p = p83();
    let drv = DrivingPath::constant(0.0, 0.5, 0.01).unwrap();
    let csv = grid_csv(&p, &[c(0.0, 1.0), c(0.0, 0.1)], Some(&drv), &[0.0, 0.5]).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "re,im,G,M_0,M_0.5");
    assert_eq!(lines.len(), 3);
    // The second point is swallowed before t = 0.5.
    assert!(lines[2].ends_with(','));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn dual_forms_agree_along_flows(seed in 0u64..10_000, x in -1.0f64..1.0, y in 0.05f64..1.0) {
        let p = p83();
        let drv = DrivingPath::sample(&p, 0.5, 1.0 / 512.0, seed).unwrap();
        for s in flow_point(&drv, c(x, y), &p).unwrap().iter().filter(|s| s.alive()) {
            let a = martingale_value(&p, s.upsilon, s.sinangle);
            let b = s.dg.norm().powf(2.0 - p.d()) * green(&p, s.zz);
            prop_assert!((a - b).abs() <= 1e-10 * a, "{} vs {}", a, b);
        }
    }

    #[test]
    fn nested_corridors(x in -1.0f64..1.0, y in 0.1f64..1.0, px in -2.0f64..2.0, py in 0.0f64..2.0) {
        let z = c(x, y);
        let narrow = LShape::new(z, 0.1).unwrap();
        let wide = LShape::new(z, 0.2).unwrap();
        if narrow.contains_point(c(px, py)) {
            prop_assert!(wide.contains_point(c(px, py)));
        }
    }
}
