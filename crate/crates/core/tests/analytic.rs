use proptest::prelude::*;
use qcnn_core::analytic::{
    acceptance_out, build_ps_grid, decision_limit, p_reject_closed, GridAxes, Scenario,
};
use qcnn_core::reference::{CRITICAL_SHIFT, CRITICAL_SPREAD, LIMITS};

fn scn(n: usize, k: usize, mu: f64, sigma: f64) -> Scenario<f64> {
    Scenario::new(n, k, mu, sigma).unwrap()
}

#[test]
fn acceptance_matches_two_position_shift() {
    // Oracle: math.erf in Python gives 0.21713115279161774.
    let a: f64 = acceptance_out(1.888090, 2.67, 1.0).unwrap();
    assert!((a - 0.217_131_152_791_617_7).abs() < 1e-14, "{a}");
    assert!((1.0 - a * a - 0.952854).abs() < 5e-7);
}

#[test]
fn closed_form_examples() {
    let cases = [
        ((2, 2, 2.67, 1.0), 1.888090, 0.952854),
        ((3, 3, 0.0, 3.33), 2.958895, 0.754969),
        ((2, 2, 0.0, 1.0), 1.888090, 0.114545),
        ((4, 4, 2.67, 1.0), 2.901210, 0.877652),
        ((2, 2, 0.0, 3.33), 3.218706, 0.556117),
        ((4, 4, 0.0, 3.33), 3.284519, 0.791130),
    ];
    for ((n, k, mu, sigma), l, want) in cases {
        let got = p_reject_closed(&scn(n, k, mu, sigma), l).unwrap();
        assert!((got - want).abs() < 1e-6, "({n},{k},{mu},{sigma}) l={l}: {got} vs {want}");
    }
}

#[test]
fn decision_limit_examples() {
    for (p, n, want) in [(0.114545, 2, 1.888090), (0.002915, 3, 3.298332)] {
        let l: f64 = decision_limit(p, n).unwrap();
        assert!((l - want).abs() < 5e-6, "{p},{n}: {l}");
    }
}

#[test]
fn round_trip_on_reference_rates() {
    let rates = LIMITS
        .iter()
        .map(|r| (r.p_fr, r.n))
        .chain(CRITICAL_SHIFT.iter().map(|r| (r.p_fr, r.n)));
    for (p, n) in rates {
        let l = decision_limit(p, n).unwrap();
        let back = p_reject_closed(&Scenario::in_control(n).unwrap(), l).unwrap();
        assert!((back - p).abs() < 1e-10, "p={p} n={n}: {back}");
    }
}

#[test]
fn reference_limits_agree_within_rounding() {
    // Rates carry six decimals, so the matching limit is only pinned to the
    // interval spanned by p +- 5e-7.
    for r in &LIMITS {
        let lo = decision_limit(r.p_fr + 5e-7, r.n).unwrap();
        let hi = decision_limit(r.p_fr - 5e-7, r.n).unwrap();
        assert!(r.l >= lo - 5e-7 && r.l <= hi + 5e-7, "{r:?} not in [{lo}, {hi}]");
    }
}

#[test]
fn critical_tables_reproduce_rule_column() {
    for (rows, mu, sigma) in [(&CRITICAL_SHIFT, 2.67, 1.0), (&CRITICAL_SPREAD, 0.0, 3.33)] {
        for r in rows.iter() {
            let got = p_reject_closed(&scn(r.n, r.k, mu, sigma), r.l).unwrap();
            assert!((got - r.p_s).abs() < 5e-6, "{r:?}: {got}");
        }
    }
}

#[test]
fn grid_examples() {
    let rows = build_ps_grid(2, 1.888090_f64, &GridAxes::default()).unwrap();
    assert_eq!(rows.len(), 240);
    let hit = rows
        .iter()
        .find(|r| r.scenario.k == 2 && (r.scenario.mu - 2.7_f64).abs() < 1e-12)
        .unwrap();
    let direct: f64 = p_reject_closed(&hit.scenario, 1.888090).unwrap();
    assert_eq!(hit.p_s, direct);
    assert_eq!(build_ps_grid(3, 2.0, &GridAxes::default()).unwrap().len(), 360);
}

proptest! {
    #[test]
    fn round_trip_random_rates(p in 0.001f64..0.2, n in 1usize..=4) {
        let l = decision_limit(p, n).unwrap();
        let back = p_reject_closed(&Scenario::in_control(n).unwrap(), l).unwrap();
        prop_assert!((back - p).abs() < 1e-10);
    }

    #[test]
    fn decreasing_in_limit(l in 0.5f64..4.0, dl in 1e-3f64..0.5, mu in 0.0f64..6.0, sigma in 1.0f64..7.0, n in 1usize..=4) {
        let s = Scenario::new(n, n, mu, sigma).unwrap();
        prop_assert!(p_reject_closed(&s, l + dl).unwrap() < p_reject_closed(&s, l).unwrap());
    }

    #[test]
    fn increasing_in_shift(l in 1.0f64..3.5, mu in 0.0f64..5.0, dmu in 1e-2f64..1.0, n in 1usize..=4) {
        let lo = p_reject_closed(&Scenario::new(n, n, mu, 1.0).unwrap(), l).unwrap();
        let hi = p_reject_closed(&Scenario::new(n, n, mu + dmu, 1.0).unwrap(), l).unwrap();
        prop_assert!(hi > lo);
    }

    #[test]
    fn increasing_in_spread(l in 1.0f64..3.5, sigma in 1.0f64..6.0, ds in 1e-2f64..1.0, n in 1usize..=4) {
        let lo = p_reject_closed(&Scenario::new(n, n, 0.0, sigma).unwrap(), l).unwrap();
        let hi = p_reject_closed(&Scenario::new(n, n, 0.0, sigma + ds).unwrap(), l).unwrap();
        prop_assert!(hi > lo);
    }

    #[test]
    fn nondecreasing_in_k(l in 1.0f64..3.5, mu in 0.0f64..6.0, sigma in 1.0f64..7.0, n in 2usize..=4) {
        let mut prev = 0.0;
        for k in 0..=n {
            let s = if k == 0 {
                Scenario::in_control(n).unwrap()
            } else {
                Scenario::new(n, k, mu, sigma).unwrap()
            };
            let p = p_reject_closed(&s, l).unwrap();
            prop_assert!(p >= prev);
            prev = p;
        }
    }

    #[test]
    fn acceptance_in_unit_interval(l in 0.01f64..6.0, mu in -60.0f64..60.0, sigma in 0.01f64..20.0) {
        let a = acceptance_out(l, mu, sigma).unwrap();
        prop_assert!((0.0..=1.0).contains(&a));
    }
}
