use proptest::prelude::*;
use qcnn_core::numerics::{erf, erf_inv, erfc, RngState};

fn binomial_band(p: f64, n: f64) -> f64 {
    4.0 * (p * (1.0 - p) / n).sqrt()
}

#[test]
fn erf_known_values() {
    // scipy.special.erf
    let cases: [(f64, f64); 5] = [
        (0.0, 0.0),
        (0.5, 0.5204998778130465),
        (1.0, 0.8427007929497149),
        (2.0, 0.9953222650189527),
        (-1.5, -0.9661051464753108),
    ];
    for (x, want) in cases {
        assert!((erf(x) - want).abs() < 1e-15, "erf({x})");
        assert!((erfc(x) - (1.0 - want)).abs() < 1e-15, "erfc({x})");
    }
    assert!((erfc(5.0_f64) - 1.537_459_794_428_035e-12).abs() < 1e-25);
    assert!(erf_inv(1.0_f64).is_err() || erf_inv(1.0_f64).unwrap().is_infinite());
    assert!(erf_inv(1.5_f64).is_err());
}

#[test]
fn normal_moments() {
    let mut rng = RngState::new(7);
    let n = 1_000_000;
    let xs: Vec<f64> = (0..n).map(|_| rng.std_normal()).collect();
    let mean = xs.iter().sum::<f64>() / n as f64;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    assert!(mean.abs() < 0.004, "mean {mean}");
    assert!((var - 1.0).abs() < 0.006, "var {var}");
}

#[test]
fn threshold_fractions() {
    for (n, p) in [(1usize, 0.127240_f64), (2, 0.034726)] {
        let l = std::f64::consts::SQRT_2 * erf_inv((1.0 - p).powf(1.0 / n as f64)).unwrap();
        let mut rng = RngState::new(11 + n as u64);
        let draws = 1_000_000;
        let hits = (0..draws)
            .filter(|_| (0..n).map(|_| rng.std_normal()).any(|x: f64| x.abs() > l))
            .count();
        let frac = hits as f64 / draws as f64;
        assert!((frac - p).abs() < binomial_band(p, draws as f64), "n={n}: {frac} vs {p}");
    }
}

#[test]
fn single_threshold_from_table() {
    let mut rng = RngState::new(3);
    let draws = 1_000_000;
    let frac = (0..draws).filter(|_| rng.std_normal().abs() > 1.525077).count() as f64 / draws as f64;
    assert!((frac - 0.127240).abs() < 0.0014, "{frac}");
}

#[test]
fn streams_are_reproducible_and_distinct() {
    let a = RngState::new(5);
    let mut x = a.derive_substream(1);
    let mut y = a.derive_substream(1);
    let mut z = a.derive_substream(2);
    let xs: Vec<u64> = (0..8).map(|_| x.next_u64()).collect();
    let ys: Vec<u64> = (0..8).map(|_| y.next_u64()).collect();
    let zs: Vec<u64> = (0..8).map(|_| z.next_u64()).collect();
    assert_eq!(xs, ys);
    assert_ne!(xs, zs);
}

proptest! {
    #[test]
    fn erf_inv_inverts_erf(x in -5.0f64..5.0) {
        let y = erf(x);
        prop_assume!(y.abs() < 1.0 - 1e-12);
        let back = erf_inv(y).unwrap();
        // conditioning grows as exp(x^2)
        prop_assert!((back - x).abs() <= 1e-12 * (1.0 + x * x).max(1.0) * (x * x).exp().max(1.0), "{x} -> {back}");
    }

    #[test]
    fn erf_is_odd_and_bounded(x in -30.0f64..30.0) {
        prop_assert_eq!(erf(-x), -erf(x));
        prop_assert!(erf(x).abs() <= 1.0);
        prop_assert!((erf(x) + erfc(x) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn uniform_in_unit_interval(seed in any::<u64>()) {
        let mut r = RngState::new(seed);
        for _ in 0..64 {
            let u = r.uniform();
            prop_assert!((0.0..1.0).contains(&u));
        }
    }
}
