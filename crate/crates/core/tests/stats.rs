use proptest::prelude::*;
use smoothcert_core::stats::{clopper_pearson_lower, regularized_inc_beta, std_normal_cdf, std_normal_quantile};

// reference values from an independent statistics library
const CP: [(u64, u64, f64, f64); 5] = [
    (9990, 10000, 0.001, 0.9975883080325683),
    (5000, 10000, 0.001, 0.484502946113578),
    (60, 100, 0.05, 0.5129758202538944),
    (1, 10, 0.05, 0.005116196891823702),
    (100, 100, 0.001, 0.933254300796991),
];

const QUANTILES: [(f64, f64); 7] = [
    (1e-10, -6.361340902404056),
    (1e-4, -3.7190164854556804),
    (0.025, -1.9599639845400545),
    (0.3, -0.5244005127080409),
    (0.5, 0.0),
    (0.9, 1.2815515655446004),
    (0.999999, 4.753424308817087),
];

const CDF: [(f64, f64); 7] = [
    (-8.0, 6.22096057427174e-16),
    (-3.0, 0.0013498980316300933),
    (-1.0, 0.15865525393145707),
    (0.0, 0.5),
    (0.5, 0.6914624612740131),
    (2.0, 0.9772498680518208),
    (6.0, 0.9999999990134123),
];

#[test]
fn clopper_pearson_reference_values() {
    for (k, n, a, want) in CP {
        let got = clopper_pearson_lower(k, n, a).unwrap();
        assert!((got - want).abs() < 1e-9, "k={k} n={n}: {got} vs {want}");
    }
    assert_eq!(clopper_pearson_lower(0, 50, 0.01).unwrap(), 0.0);
}

#[test]
fn quantile_reference_values() {
    for (p, want) in QUANTILES {
        let got = std_normal_quantile(p).unwrap();
        assert!((got - want).abs() < 1e-9, "p={p}: {got} vs {want}");
    }
    assert!(std_normal_quantile(0.0).is_err());
    assert!(std_normal_quantile(1.0).is_err());
}

#[test]
fn cdf_reference_values() {
    for (x, want) in CDF {
        let got = std_normal_cdf(x);
        assert!((got - want).abs() <= 1e-12 + 1e-9 * want, "x={x}: {got} vs {want}");
    }
}

proptest! {
    #[test]
    fn quantile_inverts_cdf(p in 1e-12f64..(1.0 - 1e-12)) {
        let x = std_normal_quantile(p).unwrap();
        prop_assert!((std_normal_cdf(x) - p).abs() <= 1e-9 * p.min(1.0 - p).max(1e-3));
    }

    #[test]
    fn lower_bound_sits_at_the_tail_quantile(n in 1u64..5000, frac in 0.0f64..=1.0, alpha in 1e-4f64..0.2) {
        let k = ((n as f64) * frac).round() as u64;
        let lo = clopper_pearson_lower(k, n, alpha).unwrap();
        prop_assert!(lo <= k as f64 / n as f64 + 1e-12);
        if k > 0 {
            // P(Bin(n, lo) >= k) = I_lo(k, n-k+1) = alpha
            let tail = regularized_inc_beta(k as f64, (n - k + 1) as f64, lo);
            prop_assert!((tail - alpha).abs() <= 1e-6 * alpha.max(1e-3), "tail {tail} vs {alpha}");
        }
    }

    #[test]
    fn lower_bound_grows_with_successes(n in 2u64..2000, k in 0u64..1999, alpha in 1e-4f64..0.2) {
        let k = k % n;
        let a = clopper_pearson_lower(k, n, alpha).unwrap();
        let b = clopper_pearson_lower(k + 1, n, alpha).unwrap();
        prop_assert!(b > a);
    }
}
