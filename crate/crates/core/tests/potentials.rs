use chflow::potential::{compute_convex_envelope, compute_unstable_set, default_contact_tol, distance_to_sigma};
use chflow::PotentialSpec;
use proptest::prelude::*;

/// Lower convex hull of sample points (monotone chain).
fn lower_hull(pts: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut hull: Vec<(f64, f64)> = Vec::new();
    for &p in pts {
        while hull.len() >= 2 {
            let (a, b) = (hull[hull.len() - 2], hull[hull.len() - 1]);
            let cross = (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0);
            if cross <= 0.0 {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(p);
    }
    hull
}

fn hull_value(hull: &[(f64, f64)], y: f64) -> f64 {
    let i = hull.partition_point(|p| p.0 <= y).clamp(1, hull.len() - 1);
    let (a, b) = (hull[i - 1], hull[i]);
    a.1 + (b.1 - a.1) * (y - a.0) / (b.0 - a.0)
}

fn sampled_hull(spec: &PotentialSpec, top: f64, k: usize) -> Vec<(f64, f64)> {
    let pts: Vec<(f64, f64)> = (0..=k).map(|i| top * i as f64 / k as f64).map(|y| (y, spec.eval_w(y))).collect();
    lower_hull(&pts)
}

fn sigma_of(name: &str) -> Vec<(f64, f64)> {
    let spec = PotentialSpec::builtin(name).unwrap();
    let env = compute_convex_envelope(&spec, 4096).unwrap();
    compute_unstable_set(&spec, &env, default_contact_tol(&spec, 4096)).unwrap().intervals
}

#[test]
fn builtin_unstable_sets() {
    let cubic = sigma_of("cubic-motivation");
    assert_eq!(cubic.len(), 1);
    assert!(cubic[0].0 == 0.0 && (cubic[0].1 - 1.5).abs() < 1e-8);

    let half_width = 0.75f64.sqrt();
    let spinodal = sigma_of("quartic-spinodal");
    assert_eq!(spinodal.len(), 2);
    assert_eq!(spinodal[0], (0.0, 0.0));
    assert!((spinodal[1].0 - (2.5 - half_width)).abs() < 1e-8);
    assert!((spinodal[1].1 - (2.5 + half_width)).abs() < 1e-8);

    let wrinkle = sigma_of("quartic-wrinkle");
    assert_eq!(wrinkle.len(), 2);
    assert_eq!(wrinkle[0], (0.0, 0.0));
    assert!((wrinkle[1].0 - (1.0 - half_width)).abs() < 1e-8);
    assert!((wrinkle[1].1 - (1.0 + half_width)).abs() < 1e-8);

    assert_eq!(sigma_of("quartic-convex"), vec![(0.0, 0.0)]);
}

#[test]
fn spinodal_lies_inside_sigma() {
    for name in ["cubic-motivation", "quartic-spinodal", "quartic-wrinkle"] {
        let spec = PotentialSpec::builtin(name).unwrap();
        let env = compute_convex_envelope(&spec, 4096).unwrap();
        let sigma = compute_unstable_set(&spec, &env, default_contact_tol(&spec, 4096)).unwrap();
        for i in 0..2000 {
            let y = 4.0 * i as f64 / 2000.0;
            if spec.eval_w2(y) < 0.0 {
                assert_eq!(distance_to_sigma(y, &sigma), 0.0, "{name} at {y}");
            }
        }
    }
}

#[test]
fn builtin_envelopes_match_sampled_hull() {
    for name in ["cubic-motivation", "quartic-spinodal", "quartic-wrinkle", "quartic-convex", "thin-film"] {
        let spec = PotentialSpec::builtin(name).unwrap();
        let env = compute_convex_envelope(&spec, 4096).unwrap();
        let top = 3.9f64.min(chflow::potential::ScalarProfile::domain_max(&spec));
        let hull = sampled_hull(&spec, top, 40_000);
        for i in 0..=400 {
            let y = top * i as f64 / 400.0;
            let err = (env.eval_wss(y) - hull_value(&hull, y)).abs();
            assert!(err < 1e-6 * (1.0 + spec.eval_w(y).abs()), "{name} at {y}: {err}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn random_quartics_match_sampled_hull(c2 in -1.0f64..2.0, c3 in -1.0f64..0.5, c4 in 0.05f64..0.5) {
        let spec = PotentialSpec::polynomial("random", vec![0.0, 0.0, c2, c3, c4], 6.0).unwrap();
        let env = compute_convex_envelope(&spec, 4096).unwrap();
        let hull = sampled_hull(&spec, 6.0, 60_000);
        for i in 0..=300 {
            let y = 6.0 * i as f64 / 300.0;
            let w = spec.eval_w(y);
            let wss = env.eval_wss(y);
            prop_assert!(wss <= w + 1e-9 * (1.0 + w.abs()));
            prop_assert!((wss - hull_value(&hull, y)).abs() < 1e-6 * (1.0 + w.abs()), "at {}", y);
        }
        for i in 1..300 {
            let y = 6.0 * i as f64 / 300.0;
            prop_assert!(env.eval_wss1(y + 0.01) >= env.eval_wss1(y) - 1e-9);
        }
    }
}
