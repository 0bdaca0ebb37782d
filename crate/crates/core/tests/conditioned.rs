use std::f64::consts::{FRAC_PI_2, PI};

use num_complex::Complex64;
use proptest::prelude::*;
use sle_core::conditioned::*;
use sle_core::diffusions::cot_sde_endpoints;
use sle_core::loewner::StepRule;
use sle_core::mc::{par_map, path_rng, McEstimate};
use sle_core::observables::green;
use sle_core::stats::ks_two_sample;
use sle_core::SleParams;

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

fn p83() -> SleParams {
    SleParams::new(8.0 / 3.0).unwrap()
}

#[test]
fn radial_runs_stop_near_the_target() {
    let p = p83();
    for (z, eps) in [(c(0.0, 1.0), 0.05), (c(0.7, 0.4), 0.02), (c(-2.0, 1.0), 0.1)] {
        let runs = par_map(200, |i| {
            sample_two_sided_radial(&p, z, eps, StepRule::for_scale(z.norm()), 1000 + i as u64, false).unwrap()
        });
        let mut close = 0;
        for r in &runs {
            assert_eq!(r.status, RunStatus::StoppedAtEps);
            let u = r.tracked.last().unwrap().upsilon;
            assert!(u <= eps && u >= eps * (1.0 - 1e-9));
            if (r.terminal - z).norm() <= 4.0 * eps * 1.2 {
                close += 1;
            }
        }
        assert!(close as f64 >= 0.99 * runs.len() as f64, "z={z}: {close}/200");
    }
}

#[test]
fn radial_endpoint_is_centred_for_imaginary_targets() {
    let p = p83();
    let z = c(0.0, 1.0);
    let xs = par_map(400, |i| {
        sample_two_sided_radial(&p, z, 0.1, StepRule::for_scale(1.0), 50 + i as u64, false)
            .unwrap()
            .terminal
            .re
    });
    let est = McEstimate::from_samples(&xs, 0);
    assert!(est.within(0.0, 3.0), "{est:?}");
}

#[test]
fn chordal_runs_end_at_x() {
    let p = p83();
    let x = 1.3;
    let stop = ChordalStop { eps: Some(0.02 * x), horizon: f64::INFINITY };
    let runs = par_map(200, |i| {
        let mut rng = path_rng(9, 0xc401, i as u64);
        run_chordal(&p, x, &[], &[], stop, StepRule::for_scale(x), 9, &mut rng, &mut |_| {}).unwrap()
    });
    let mut close = 0;
    for r in &runs {
        assert!(r.min_xt > 0.0);
        assert!(matches!(r.status, RunStatus::StoppedAtEps | RunStatus::Hit));
        if (r.terminal - x).norm() <= 0.05 * x {
            close += 1;
        }
    }
    assert!(close as f64 >= 0.95 * runs.len() as f64, "{close}/200");
}

#[test]
fn chordal_keeps_points_beyond_x() {
    let p = SleParams::new(2.0).unwrap();
    for i in 0..100 {
        let (delta, z1) = delta_statistic(&p, 1.0, 1.5, 2.5, 4, i).unwrap();
        assert!(z1 > 0.0);
        assert!(delta >= 3.0 - 1e-12);
    }
}

#[test]
fn delta_statistic_is_scale_invariant() {
    let p = SleParams::new(2.0).unwrap();
    let a: Vec<f64> = (0..400).map(|i| delta_statistic(&p, 1.0, 1.5, 2.5, 5, i).unwrap().0).collect();
    let b: Vec<f64> = (0..400).map(|i| delta_statistic(&p, 3.0, 4.5, 7.5, 6, i).unwrap().0).collect();
    let (_, pval) = ks_two_sample(&a, &b);
    assert!(pval > 0.01, "p = {pval}");
}

#[test]
fn tilt_is_unbiased_on_small_functionals() {
    let p = p83();
    let z = c(0.2, 1.0);
    let eps = 0.25;
    let n = 20_000;
    let g = green(&p, z);
    // Φ1 = 1{τ_ε <= 1}, Φ2 = 1{τ_ε <= 1, U_τ > 0}.
    let tilted = par_map(n, |i| {
        let mut rng = path_rng(21, 0x7417, i as u64);
        let r = run_target(&p, z, &[], &TargetOptions::radial(z, eps), 21, &mut rng, &mut |_| {}).unwrap();
        let w = g / r.martingale(&p);
        let tau = r.tau.unwrap_or(f64::INFINITY);
        let u = *r.driving.values().last().unwrap();
        let phi1 = if tau <= 1.0 { w } else { 0.0 };
        let phi2 = if tau <= 1.0 && u > 0.0 { w } else { 0.0 };
        (phi1, phi2)
    });
    let plain = par_map(n, |i| {
        let mut rng = path_rng(22, 0x7417, i as u64);
        let r = run_target(&p, z, &[], &TargetOptions::plain(z, eps, 1.0), 22, &mut rng, &mut |_| {}).unwrap();
        let hit = r.status == RunStatus::StoppedAtEps;
        let u = *r.driving.values().last().unwrap();
        (if hit { 1.0 } else { 0.0 }, if hit && u > 0.0 { 1.0 } else { 0.0 })
    });
    let est = |v: &[(f64, f64)], k: usize| {
        McEstimate::from_samples(&v.iter().map(|x| if k == 0 { x.0 } else { x.1 }).collect::<Vec<_>>(), 0)
    };
    for k in 0..2 {
        let (a, b) = (est(&tilted, k), est(&plain, k));
        assert!(a.agrees_with(&b, 3.0), "functional {k}: tilted {a:?} plain {b:?}");
    }
}

#[test]
fn radial_angle_follows_the_cot_diffusion() {
    let p = p83();
    let z = c(0.0, 1.0);
    let s = 0.5;
    let a: Vec<f64> = par_map(800, |i| radial_angle_at(&p, z, s, 31, i as u64).unwrap());
    let b = cot_sde_endpoints(&p, FRAC_PI_2, s, 1e-4, 800, 32).unwrap();
    let (_, pval) = ks_two_sample(&a, &b);
    assert!(pval > 0.01, "p = {pval}");
}

#[test]
fn driver_stays_bounded_at_scale() {
    let p = p83();
    let z = c(0.5, 0.8);
    let runs = par_map(300, |i| {
        let r = sample_two_sided_radial(&p, z, 0.05 * z.norm(), StepRule::for_scale(z.norm()), 70 + i as u64, false).unwrap();
        let sup = r.driving.values().iter().fold(0.0f64, |m, u| m.max(u.abs()));
        (r.tau_eps.unwrap(), sup)
    });
    let freq = |r: f64| {
        runs.iter().filter(|(t, s)| *t <= r * z.norm_sqr() && *s <= r * z.norm()).count() as f64 / runs.len() as f64
    };
    let f: Vec<f64> = [1.0, 2.0, 4.0, 8.0].iter().map(|&r| freq(r)).collect();
    assert!(f.windows(2).all(|w| w[1] >= w[0]), "{f:?}");
    assert!(f[3] >= 0.95, "{f:?}");
}

#[test]
fn hit_probability_scaling_and_upper_bound() {
    let p = p83();
    let z = c(0.5, 1.0);
    let a = hit_probability(&p, z, 0.5, 4000, HorizonRule::default(), 1).unwrap();
    let b = hit_probability(&p, z * 2.0, 1.0, 4000, HorizonRule::default(), 2).unwrap();
    assert!(!a.flagged && !b.flagged);
    assert!(a.estimate.agrees_with(&b.estimate, 3.0), "{a:?} vs {b:?}");
    for eps in [0.5, 0.25] {
        let h = hit_probability(&p, c(0.0, 1.0), eps, 2000, HorizonRule::default(), 3).unwrap();
        assert!(h.estimate.mean <= 2.0 * eps.powf(2.0 - p.d()), "eps {eps}: {:?}", h.estimate);
    }
    assert!(hit_probability(&p, z, 1.5, 10, HorizonRule::default(), 1).is_err());
}

#[test]
fn f_is_scale_invariant() {
    let p = p83();
    let (z, w) = (c(0.0, 1.0), c(0.6, 0.5));
    let a = estimate_f(&p, z, w, 0.05, 1500, 1).unwrap();
    let b = estimate_f(&p, z * 2.0, w * 2.0, 0.1, 1500, 2).unwrap();
    assert!(a.estimate.agrees_with(&b.estimate, 3.0), "{a:?} vs {b:?}");
    assert!(a.estimate.mean > 0.0);
}

#[test]
fn f_vanishes_for_far_apart_scales() {
    let p = p83();
    let (hi, lo) = (c(0.0, 16.0), c(0.0, 1.0 / 16.0));
    let down = estimate_f(&p, hi, lo, 0.05 * 16.0, 600, 3).unwrap();
    let up = estimate_f(&p, lo, hi, 0.05 / 16.0, 600, 4).unwrap();
    let diff = up.estimate.minus(&down.estimate);
    assert!(diff.mean > 3.0 * diff.stderr, "F(16i, i/16) {:?} vs F(i/16, 16i) {:?}", down.estimate, up.estimate);
}

#[test]
fn lshape_probability_scales_and_nests() {
    let p = p83();
    let z = c(0.0, 1.0);
    let a = lshape_probability(&p, z, 0.25, 0.05, 800, 1).unwrap();
    let b = lshape_probability(&p, z * 2.0, 0.25, 0.1, 800, 2).unwrap();
    assert!(a.agrees_with(&b, 3.0), "{a:?} vs {b:?}");
    assert!(a.mean > 3.0 * a.stderr);
    let narrow = lshape_probability(&p, z, 0.15, 0.05, 400, 7).unwrap();
    let wide = lshape_probability(&p, z, 0.3, 0.05, 400, 7).unwrap();
    assert!(wide.mean >= narrow.mean);
    assert!(lshape_probability(&p, z, 0.6, 0.05, 10, 1).is_err());
}

#[test]
fn radon_nikodym_band() {
    let p = SleParams::new(2.0).unwrap();
    let z = c(1.0, 0.05);
    let rep = radon_nikodym_check(&p, z, 0.1, 300, 5).unwrap();
    assert!((rep.initial_ratio - 1.0).abs() < 0.01);
    let band = rep.band(0.99);
    assert!(band < 2.0, "band {band}");
    // The first ε-approach comes in at an angle bounded away from the axis.
    let u = 0.1;
    let steep = rep.angles.iter().filter(|a| a.min(PI - **a) >= u).count() as f64 / rep.angles.len() as f64;
    assert!(steep >= 0.8, "{steep}");
    assert!(rep.angles.len() >= 290);
}

#[test]
fn archive_round_trip() {
    let p = p83();
    let rows = (0..3)
        .map(|i| ArchiveRow { path_id: i, status: RunStatus::StoppedAtEps, tau: Some(0.1 * i as f64), terminal: c(0.0, 1.0), observables: vec![i as f64] })
        .collect();
    let archive = RunArchive {
        name: "radial".into(),
        params: p,
        seed: 3,
        observable_names: vec!["m".into()],
        rows,
        estimates: vec![("m".into(), McEstimate::exact(1.0))],
    };
    let dir = tempfile::tempdir().unwrap();
    archive.write(dir.path()).unwrap();
    let csv = std::fs::read_to_string(dir.path().join("radial.csv")).unwrap();
    assert!(csv.starts_with("path_id,status,tau,terminal_re,terminal_im,m\n0,stopped_at_eps,0,0,1,0\n"));
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("radial.json")).unwrap()).unwrap();
    assert_eq!(json["status_counts"]["stopped_at_eps"], 3);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn radial_stop_is_exact(seed in 0u64..10_000, x in -1.0f64..1.0, y in 0.3f64..1.5, frac in 0.05f64..0.5) {
        let p = p83();
        let z = c(x, y);
        let eps = frac * y;
        let r = sample_two_sided_radial(&p, z, eps, StepRule::for_scale(z.norm()), seed, false).unwrap();
        prop_assert_eq!(r.status, RunStatus::StoppedAtEps);
        let last = r.tracked.last().unwrap();
        prop_assert!(last.upsilon <= eps && last.upsilon >= eps * (1.0 - 1e-9));
        prop_assert!(r.tracked.windows(2).all(|w| w[1].upsilon <= w[0].upsilon));
    }

    #[test]
    fn two_point_swap_is_exact(seed in 0u64..1000, x in -1.0f64..1.0, y in 0.3f64..1.5) {
        let p = p83();
        let (z, w) = (c(0.0, 1.0), c(x, y));
        prop_assume!((z - w).norm() > 0.2);
        let a = estimate_two_point_green(&p, z, w, 0.05, 4, seed).unwrap();
        let b = estimate_two_point_green(&p, w, z, 0.05, 4, seed).unwrap();
        prop_assert_eq!(a.ghat.mean, b.ghat.mean);
    }
}
