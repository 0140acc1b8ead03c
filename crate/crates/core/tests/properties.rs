use ocplab::config::{parse_config_str, ConfigError};
use ocplab::geometry::{ekeland_distance, hc_distance, GridDomain};
use ocplab::hammerstein::{apply_b, inner, monotonicity_margin, KernelSpec};
use ocplab::num::{signed_pow, weight_pow};
use ocplab::stability::nonincreasing_within;
use ocplab::GridSpec;
use proptest::prelude::*;

fn grid() -> GridSpec {
    GridSpec::unit(9).unwrap()
}

fn field() -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(-3.0f64..3.0, 81)
}

fn mask() -> impl Strategy<Value = GridDomain> {
    proptest::collection::vec(any::<bool>(), 81).prop_map(|bits| {
        let g = grid();
        let m = bits
            .iter()
            .enumerate()
            .map(|(k, &b)| {
                let (i, j) = g.node_ij(k);
                b && !g.on_box_boundary(i, j)
            })
            .collect();
        GridDomain::from_mask(g, m).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn signed_power_is_monotone(a in -5.0f64..5.0, b in -5.0f64..5.0, p in 2.0f64..=4.0) {
        prop_assert!((signed_pow(a, p) - signed_pow(b, p)) * (a - b) >= 0.0);
        prop_assert!(weight_pow(a, p) >= 0.0);
    }

    #[test]
    fn kernel_is_symmetric_and_positive(
        u in proptest::collection::vec(-1.0f64..1.0, 81),
        v in proptest::collection::vec(-1.0f64..1.0, 81),
        width in 0.05f64..0.4,
        ridge in 0.01f64..1.0,
    ) {
        let d = GridDomain::full_interior(grid());
        let (u, v) = (d.restrict(&u), d.restrict(&v));
        let k = KernelSpec::gaussian(width, 1.0, ridge);
        let (bu, bv) = (apply_b(&k, &u, &d), apply_b(&k, &v, &d));
        let (uv, vu) = (inner(&d, &bu, &v), inner(&d, &u, &bv));
        prop_assert!((uv - vu).abs() <= 1e-12 * (1.0 + uv.abs()));
        prop_assert!(inner(&d, &bu, &u) >= ridge * inner(&d, &u, &u) - 1e-12);
    }

    #[test]
    fn hammerstein_map_is_strongly_monotone(
        p in prop_oneof![Just(2.0), Just(3.0), Just(4.0)],
        y in field(),
        z1 in field(),
        z2 in field(),
    ) {
        let d = GridDomain::full_interior(grid());
        prop_assert!(monotonicity_margin(&d, &d.restrict(&y), &d.restrict(&z1), &d.restrict(&z2), p) >= -1e-10);
    }

    #[test]
    fn domain_metrics_are_symmetric(a in mask(), b in mask()) {
        prop_assert_eq!(hc_distance(&a, &b).unwrap(), hc_distance(&b, &a).unwrap());
        prop_assert_eq!(ekeland_distance(&a, &b).unwrap(), ekeland_distance(&b, &a).unwrap());
        prop_assert_eq!(hc_distance(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn decreasing_sequences_are_nonincreasing(mut v in proptest::collection::vec(0.0f64..10.0, 1..8)) {
        v.sort_by(|a, b| b.partial_cmp(a).unwrap());
        prop_assert!(nonincreasing_within(&v, 0.0));
    }

    #[test]
    fn class_exponent_range_is_enforced(p in 0.0f64..6.0) {
        let text = format!(r#"{{"class": {{"p": {p}, "alpha": 0.5, "beta": 2}}}}"#);
        match parse_config_str(&text) {
            Ok(cfg) => prop_assert!((2.0..=4.0).contains(&cfg.class.p)),
            Err(ConfigError::Schema(v)) => {
                prop_assert!(!(2.0..=4.0).contains(&p));
                prop_assert_eq!(v[0].field.as_str(), "class.p");
            }
            Err(e) => prop_assert!(false, "{e}"),
        }
    }
}
