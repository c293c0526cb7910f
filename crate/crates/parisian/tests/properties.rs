use proptest::prelude::*;

use parisian::analytics::{c4_branch_values, grid_minimize_q, quadratic_form, single_ruin_prob};
use parisian::model::{
    classify_regime, critical_rho, limiting_t_star, local_exponents, optimizer_point, ModelParams, Relation,
};
use parisian::pathsim::{default_tilt, detect_classical, detect_parisian, sample_path, GridSpec, TiltConfig};
use parisian::rng::Streams;
use parisian::RegimeTag;

fn params(c1: f64, c2: f64, a: f64, rho: f64) -> ModelParams {
    ModelParams::new(c1, c2, a, rho, 0.0, 0.0).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn critical_rho_is_decreasing_inside_the_unit_interval(a in 1e-6f64..1.0, gap in 1e-4f64..1.0) {
        let b = (a + gap).min(1.0);
        let (ra, rb) = (critical_rho(a).unwrap(), critical_rho(b).unwrap());
        prop_assert!(ra < 0.0 && ra > -1.0);
        prop_assert!(rb < ra);
    }

    #[test]
    fn classification_is_stable_off_the_boundaries(a in 0.05f64..1.0, rho in -0.99f64..0.99, jitter in -0.5f64..0.5) {
        let tol = 1e-6;
        let crit = critical_rho(a).unwrap();
        prop_assume!((rho - a).abs() > 2.0 * tol && (rho - crit).abs() > 2.0 * tol && 1.0 - a > 2.0 * tol);
        let base = classify_regime(&params(0.0, 0.0, a, rho), tol).unwrap();
        let moved = classify_regime(&params(0.0, 0.0, a, rho + jitter * tol), tol).unwrap();
        prop_assert_eq!(base.tag, moved.tag);
        prop_assert_eq!(base.tag.is_dominated(), a <= rho);
    }

    #[test]
    fn quadratic_form_is_positive_and_exchange_symmetric(
        c1 in -3.0f64..3.0, c2 in -3.0f64..3.0, rho in -0.95f64..0.95,
        s in 0.01f64..1.0, t in 0.01f64..1.0, u in 0.5f64..50.0,
    ) {
        let q = quadratic_form(&params(c1, c2, 1.0, rho), u, s, t).unwrap();
        let r = quadratic_form(&params(c2, c1, 1.0, rho), u, t, s).unwrap();
        prop_assert!(q > 0.0);
        prop_assert!((q - r).abs() <= 1e-12 * q.abs());
    }

    #[test]
    fn single_ruin_is_monotone(c in -2.0f64..2.0, u in 0.0f64..5.0, du in 0.0f64..1.0, dc in 0.0f64..1.0) {
        let base = single_ruin_prob(c, u, 1.0).unwrap();
        prop_assert!((0.0..=1.0).contains(&base));
        prop_assert!(single_ruin_prob(c, u + du, 1.0).unwrap() <= base + 1e-15);
        prop_assert!(single_ruin_prob(c + dc, u, 1.0).unwrap() <= base + 1e-15);
    }

    #[test]
    fn c4_is_continuous_on_both_boundaries(c1 in -10.0f64..10.0) {
        prop_assume!(c1 != 0.0);
        let b = c4_branch_values(c1, -0.5 * c1);
        let d = if c1 > 0.0 { b[0] - b[2] } else { b[1] - b[3] };
        prop_assert!(d.abs() < 1e-12);
        let b = c4_branch_values(c1, -2.0 * c1);
        let d = if c1 > 0.0 { b[2] - b[3] } else { b[0] - b[1] };
        prop_assert!(d.abs() < 1e-12);
    }

    #[test]
    fn taylor_coefficients_are_positive(a in 0.05f64..1.0, below in 0.001f64..0.9) {
        let crit = critical_rho(a).unwrap();
        let rho = crit - below * (1.0 + crit);
        prop_assume!(rho > -0.999);
        let p = params(0.0, 0.0, a, rho);
        let r = classify_regime(&p, 1e-12).unwrap();
        prop_assert!(matches!(r.tag, RegimeTag::CaseIV | RegimeTag::CaseV));
        let e = local_exponents(&p, &r, Relation::LLtK).unwrap();
        prop_assert!(e.tau1.unwrap() > 0.0 && e.tau4.unwrap() > 0.0);
        let t = limiting_t_star(&p, &r);
        prop_assert!(t > 0.0 && t <= 1.0);
        let on = params(0.0, 0.0, a, crit);
        let r = classify_regime(&on, 1e-12).unwrap();
        let e = local_exponents(&on, &r, Relation::Diagonal).unwrap();
        prop_assert!(e.tau1.unwrap() > 0.0 && e.tau4.unwrap() > 0.0);
    }

    #[test]
    fn case_v_pair_mirrors_under_drift_exchange(
        c1 in -1.0f64..1.0, c2 in -1.0f64..1.0, rho in -0.95f64..-0.55, u in 5.0f64..200.0,
    ) {
        let (p, q) = (params(c1, c2, 1.0, rho), params(c2, c1, 1.0, rho));
        let r = classify_regime(&p, 1e-12).unwrap();
        prop_assert_eq!(r.tag, RegimeTag::CaseV);
        let (x, y) = (optimizer_point(&p, &r, u).unwrap(), optimizer_point(&q, &r, u).unwrap());
        let (xm, ym) = (x.mirror.unwrap(), y.mirror.unwrap());
        prop_assert_eq!((x.primary.s, x.primary.t), (ym.t, ym.s));
        prop_assert_eq!((xm.s, xm.t), (y.primary.t, y.primary.s));
    }

    #[test]
    fn tilt_targets_the_optimizer(a in 0.2f64..1.0, rho in -0.3f64..0.15, c1 in -1.0f64..1.0, c2 in -1.0f64..1.0, u in 1.0f64..6.0) {
        prop_assume!(a > rho + 0.05);
        let p = params(c1, c2, a, rho);
        let r = classify_regime(&p, 1e-12).unwrap();
        prop_assume!(r.tag == RegimeTag::CaseI);
        let t = default_tilt(&p, &r, u).unwrap();
        prop_assert!((t.alpha - (u + c1)).abs() < 1e-12);
        let resid = rho * t.alpha + (1.0 - rho * rho).sqrt() * t.beta - (a * u + c2);
        prop_assert!(t.beta == 0.0 || resid.abs() < 1e-9);
        prop_assert!(t.beta >= 0.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn closed_form_optimizer_matches_the_grid(
        a in 0.2f64..0.97, rho in -0.5f64..0.5, c1 in -1.0f64..1.0, c2 in -1.0f64..1.0, big in proptest::bool::ANY,
    ) {
        prop_assume!(a - rho.max(0.0) >= 0.15);
        let u = if big { 100.0 } else { 10.0 };
        let p = params(c1, c2, a, rho);
        let r = classify_regime(&p, 1e-12).unwrap();
        let closed = optimizer_point(&p, &r, u).unwrap().best();
        let grid = grid_minimize_q(&p, u, 1e-3).unwrap();
        prop_assert!(closed.q_value <= grid.q_value + 1e-12);
        prop_assert!((closed.s - grid.s).abs() <= 1e-5 && (closed.t - grid.t).abs() <= 1e-5,
            "{:?} closed {:?} grid {:?}", r.tag, closed, grid);
    }

    #[test]
    fn parisian_ruin_implies_classical_ruin(
        seed in 0u64..1000, rho in -0.9f64..0.9, s1 in 0.0f64..0.4, s2 in 0.0f64..0.4, u in 0.5f64..1.5,
    ) {
        let p = ModelParams::new(0.2, -0.1, 0.7, rho, s1, s2).unwrap();
        let grid = GridSpec::new(512).unwrap();
        let streams = Streams::new(seed);
        let tilt = TiltConfig { alpha: 1.0, beta: 0.5, enabled: seed % 2 == 0 };
        for i in 0..50 {
            let path = sample_path(&grid, 64, rho, &tilt, &mut streams.stream(i));
            let c = detect_classical(&path, u, &p);
            let w = detect_parisian(&path, u, &p);
            prop_assert!(!w.parisian_joint || c.classical_joint);
            prop_assert!(path.log_weight.is_finite());
        }
    }
}
