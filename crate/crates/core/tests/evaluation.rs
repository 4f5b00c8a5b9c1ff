use qcnn_core::analytic::{decision_limit, p_reject_closed, GridAxes, Scenario};
use qcnn_core::datasets::TestSetSpec;
use qcnn_core::evaluation::{
    analytic_rows, compare, critical_error_report, critical_ps, estimate_p_mc, ks_uniform, matched_limit,
    monotonicity_scan, sign_summary, write_eval_csv, ConstantClassifier, CriticalErrorConfig, CriticalModel,
    EvalConfig,
};
use qcnn_core::numerics::RngState;
use qcnn_core::{with_workers, StatClassifier, StatQcFunction};

fn stat(n: usize, l: f64) -> StatClassifier {
    StatClassifier {
        n,
        rule: StatQcFunction::new(l).unwrap(),
    }
}

fn se(p: f64, n: u64) -> f64 {
    (p * (1.0 - p) / n as f64).sqrt()
}

#[test]
fn stat_rule_on_shifted_triples() {
    let c = stat(3, 2.958895);
    let est = estimate_p_mc(&c, &TestSetSpec::shifted(3, 3, 2.67, 1.0), &RngState::new(1)).unwrap();
    assert_eq!(est.sample_size, 100_000);
    let p = est.p_hat();
    assert!((p - 0.768898).abs() < 4.0 * se(0.768898, 100_000), "{p}");
}

#[test]
fn always_true_rejects_everything() {
    let c = ConstantClassifier { n: 2, verdict: true };
    let est = estimate_p_mc::<f64, _>(&c, &TestSetSpec::shifted(2, 1, 1.0, 1.0), &RngState::new(1)).unwrap();
    assert_eq!(est.p_hat(), 1.0);
    let c = ConstantClassifier { n: 3, verdict: true };
    assert!(estimate_p_mc::<f64, _>(&c, &TestSetSpec::in_control(2), &RngState::new(1)).is_err());
}

#[test]
fn matched_limit_recovers_false_rejection() {
    for (n, p) in [(1usize, 0.127240), (2, 0.034726), (4, 0.01)] {
        let l = decision_limit(p, n).unwrap();
        let m = matched_limit(&stat(n, l), 1_000_000, &RngState::new(n as u64)).unwrap();
        assert_eq!(m.estimate.sample_size, 1_000_000);
        assert!((m.p_fr - p).abs() < 4.0 * se(p, 1_000_000), "n={n}: {}", m.p_fr);
        assert!((decision_limit(m.p_fr, n).unwrap() - m.l).abs() < 1e-12);
    }
    // No rejections at all: no matching limit.
    let never = ConstantClassifier { n: 2, verdict: false };
    assert!(matched_limit::<f64, _>(&never, 10_000, &RngState::new(0)).is_err());
}

#[test]
fn random_scenarios_agree_with_closed_form() {
    let mut pick = RngState::new(99);
    for n in 1..=4 {
        let l = decision_limit(0.01, n).unwrap();
        let c = stat(n, l);
        for i in 0..5 {
            let k = 1 + pick.below(n as u64) as usize;
            let (mu, sigma) = if pick.coin() { (0.1 + 5.9 * pick.uniform(), 1.0) } else { (0.0, 1.1 + 5.9 * pick.uniform()) };
            let spec = TestSetSpec::shifted(n, k, mu, sigma).with_replicates(20_000);
            let est = estimate_p_mc(&c, &spec, &RngState::new(1000 + i)).unwrap();
            let p = p_reject_closed(&Scenario::new(n, k, mu, sigma).unwrap(), l).unwrap();
            let tol = 4.0 * se(p, est.sample_size).max(1.0 / est.sample_size as f64);
            assert!((est.p_hat() - p).abs() < tol, "n={n} k={k} mu={mu} sigma={sigma}: {} vs {p}", est.p_hat());
        }
    }
}

#[test]
fn compare_shape_and_identities() {
    let l = decision_limit(0.01, 3).unwrap();
    let eval = EvalConfig {
        replicates_per_pattern: 500,
        in_control_count: 10_000,
    };
    let rows = compare(6, &stat(3, l), l, &GridAxes::default(), &eval, &RngState::new(5)).unwrap();
    assert_eq!(rows.len(), 360);
    for r in &rows {
        assert_eq!(r.delta_p, r.p_n - r.p_s);
        assert_eq!(r.delta_p_rel, r.delta_p / r.p_s);
        assert_eq!(r.p_n, r.rejections as f64 / r.sample_size as f64);
        if let Some(p) = r.p_value {
            assert!((0.0..=1.0).contains(&p));
        }
    }
    let mus: Vec<f64> = rows.iter().filter(|r| r.k == 3 && r.sigma == 1.0).map(|r| r.mu).collect();
    assert_eq!(mus.len(), 60);
    assert!(mus.iter().all(|&m| (0.1..=6.0 + 1e-9).contains(&m)));
    let s = sign_summary(&rows);
    assert_eq!(s.len(), 3);
    assert_eq!(s.iter().map(|x| x.positive + x.negative + x.zero).sum::<usize>(), 360);
}

#[test]
fn compare_is_deterministic_across_workers() {
    let l = decision_limit(0.02, 2).unwrap();
    let eval = EvalConfig {
        replicates_per_pattern: 3000,
        in_control_count: 10_000,
    };
    let run = |workers| {
        with_workers(workers, || {
            let rows = compare(2, &stat(2, l), l, &GridAxes::coarse(), &eval, &RngState::new(17)).unwrap();
            let mut buf = Vec::new();
            write_eval_csv(&mut buf, &rows).unwrap();
            buf
        })
    };
    let one = run(1);
    assert_eq!(one, run(4));
    assert_eq!(one.iter().filter(|&&b| b == b'\n').count(), 1 + 2 * 24);
}

#[test]
fn stat_against_itself_is_null() {
    let eval = EvalConfig {
        replicates_per_pattern: 20_000,
        in_control_count: 10_000,
    };
    let mut p_values = Vec::new();
    for n in 2..=3 {
        let l = decision_limit(0.01, n).unwrap();
        let rows = compare(1, &stat(n, l), l, &GridAxes::coarse(), &eval, &RngState::new(40 + n as u64)).unwrap();
        for r in &rows {
            assert!(r.consistent_with_rule(4.0).unwrap(), "{r:?}");
        }
        p_values.extend(rows.iter().filter_map(|r| r.p_value));
    }
    assert!(p_values.len() >= 60);
    // Loose: the full-size check lives in the acceptance suite.
    assert!(ks_uniform(&p_values).unwrap() < 0.2);
}

#[test]
fn critical_closed_form_examples() {
    let cfg = CriticalErrorConfig::default();
    let (shift, _) = critical_ps(4, 4, 2.901210, &cfg).unwrap();
    assert!((shift - 0.877652).abs() < 5e-6, "{shift}");
    let (_, spread) = critical_ps(2, 2, 3.218706, &cfg).unwrap();
    assert!((spread - 0.556117).abs() < 5e-6, "{spread}");
}

#[test]
fn critical_report_stat_vs_stat() {
    let cfg = CriticalErrorConfig::default();
    let eval = EvalConfig {
        replicates_per_pattern: 20_000,
        in_control_count: 200_000,
    };
    let rng = RngState::new(3);
    let classifiers: Vec<StatClassifier> = (2..=4).map(|n| stat(n, decision_limit(0.005, n).unwrap())).collect();
    let models: Vec<CriticalModel<f64>> = classifiers
        .iter()
        .enumerate()
        .map(|(i, c)| CriticalModel {
            a: 1,
            classifier: c,
            matched: matched_limit(c, eval.in_control_count, &rng.derive_substream(100 + i as u64)).unwrap(),
        })
        .collect();
    let rows = critical_error_report(&models, &cfg, &eval, &rng).unwrap();
    assert_eq!(rows.len(), 1 + 2 + 3);
    assert!(rows.windows(2).all(|w| (w[0].n, w[0].k) < (w[1].n, w[1].k)));
    for r in &rows {
        // Limit matched to a measured rate, not the nominal one: compare
        // against the rule the data came from instead of p_s.
        let nominal = decision_limit(0.005, r.n).unwrap();
        let truth = critical_ps(r.n, r.k, nominal, &cfg).unwrap();
        for (row, t) in [(r.shift, truth.0), (r.spread, truth.1)] {
            assert!((row.p_n - t).abs() < 4.0 * se(t, row.sample_size), "{r:?}");
            assert!(row.delta_p.abs() < 0.02);
        }
    }
}

#[test]
fn monotonicity_on_closed_form() {
    let mut rows = Vec::new();
    for n in 1..=4 {
        for (a, p) in [(1u32, 0.05), (4, 0.01), (16, 0.002)] {
            rows.extend(analytic_rows(a, n, decision_limit(p, n).unwrap(), &GridAxes::default()).unwrap());
        }
    }
    let report = monotonicity_scan(&rows);
    assert!(report.pairs_checked > 0);
    assert!(report.findings.iter().all(|f| f.item > 3), "{:?}", &report.findings[..report.findings.len().min(3)]);
    // Item 4 also holds: a larger a means a smaller false-rejection rate here.
    assert!(report.findings.iter().all(|f| f.item != 4));
    assert!(report.findings.len() <= report.pairs_checked);

    // A planted violation is flagged.
    let mut bad = rows.clone();
    let i = bad.iter().position(|r| r.n == 2 && r.k == 2 && r.mu == 3.0 && r.sigma == 1.0 && r.a == 1).unwrap();
    bad[i].p_n = 0.0;
    bad[i].sample_size = 100_000;
    let r = monotonicity_scan(&bad);
    assert!(r.findings.iter().any(|f| f.item == 1));
}
