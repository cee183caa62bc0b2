//! Randomised checks of the ASU and majorization properties of the
//! error-process filters.

use ge_remote::belief::{
    concentration_profile, expected_distortion_grid, f1_error, f2_error, is_asu, majorizes, majorizes_within,
    symmetric_decreasing_rearrangement, GridDensity, Prescription, ReceptionFlag, ThresholdPrescription,
};
use ge_remote::models::{DistortionFn, NoiseSpec};
use proptest::prelude::*;

const HALF: f64 = 20.0;
const N: usize = 401;
const SUPPORT: usize = 40;

fn config() -> ProptestConfig {
    ProptestConfig { cases: 200, max_global_rejects: 20_000, ..ProptestConfig::default() }
}

/// Even density, nonincreasing in `|e|`, supported on `|e| <= SUPPORT h`.
fn asu_from(levels: &[f64]) -> GridDensity {
    let mut sorted: Vec<f64> = levels.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let c = N / 2;
    let mut v = vec![0.0; N];
    for (k, &x) in sorted.iter().enumerate() {
        v[c + k] = x;
        v[c - k] = x;
    }
    GridDensity::new(HALF, v).unwrap().normalized().unwrap()
}

fn arbitrary_from(values: &[f64], shift: usize) -> GridDensity {
    let c = N / 2;
    let mut v = vec![0.0; N];
    let lo = c - SUPPORT + shift;
    for (k, &x) in values.iter().enumerate() {
        if lo + k < N {
            v[lo + k] = x;
        }
    }
    GridDensity::new(HALF, v).unwrap().normalized().unwrap()
}

/// ASU density more concentrated than `pi`: its sorted cell values raised
/// to `power > 1` and laid out symmetrically.
fn sharpened(pi: &GridDensity, power: f64) -> GridDensity {
    let r = symmetric_decreasing_rearrangement(pi);
    let v: Vec<f64> = r.values().iter().map(|x| x.powf(power)).collect();
    let out = GridDensity::new(HALF, v).unwrap().normalized().unwrap();
    // the rearrangement lays ties out right-first; force exact evenness
    let c = N / 2;
    let mut even = out.values().to_vec();
    for k in 1..=c {
        let m = 0.5 * (even[c + k] + even[c - k]);
        even[c + k] = m;
        even[c - k] = m;
    }
    GridDensity::new(HALF, even).unwrap().normalized().unwrap()
}

fn levels() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.01f64..1.0, 1..=SUPPORT)
}

fn values() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..1.0, 2 * SUPPORT + 1).prop_filter("some mass", |v| v.iter().sum::<f64>() > 0.01)
}

fn gain() -> impl Strategy<Value = f64> {
    prop::sample::select(vec![0.5, 1.0, 2.0, -0.5, -1.0, -2.0])
}

fn noise() -> impl Strategy<Value = NoiseSpec> {
    (0.2f64..1.0, 0usize..3).prop_map(|(s, k)| match k {
        0 => NoiseSpec::gaussian(s),
        1 => NoiseSpec::uniform(2.0 * s),
        _ => NoiseSpec::triangular(2.0 * s),
    })
}

fn distortion() -> impl Strategy<Value = DistortionFn> {
    prop::sample::select(vec![DistortionFn::Squared, DistortionFn::Absolute, DistortionFn::EvenPower { p: 3.0 }])
}

fn flags() -> [ReceptionFlag; 3] {
    ReceptionFlag::ALL
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn property1_asu_minimiser_is_centre(lv in levels(), d in distortion()) {
        let xi = asu_from(&lv);
        let (_, xhat) = expected_distortion_grid(&xi, &d);
        prop_assert_eq!(xhat, 0.0);
    }

    #[test]
    fn property2_f2_preserves_asu(lv in levels(), k in 0.05f64..4.0) {
        let xi = asu_from(&lv);
        let theta = ThresholdPrescription::new(0.0, k);
        for flag in flags() {
            let out = f2_error(&xi, &theta, flag).unwrap();
            prop_assert!(is_asu(&out, 0.0, 1e-9), "{flag:?}");
            prop_assert!((out.mass() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn property3_f1_preserves_asu(lv in levels(), a in gain(), w in noise()) {
        let xi = asu_from(&lv);
        let out = f1_error(&xi, a, &w, false).unwrap();
        prop_assert!(is_asu(&out, 0.0, 1e-9));
        prop_assert!((out.mass() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn property4_f2_preserves_majorization(
        v in values(),
        shift in 0usize..20,
        power in 1.0f64..3.0,
        bits in prop::collection::vec(prop::bool::weighted(0.3), N),
    ) {
        let pi = arbitrary_from(&v, shift);
        let xi = sharpened(&pi, power);
        prop_assume!(majorizes(&xi, &pi).unwrap());
        let phi = Prescription::new(bits);
        let silent = pi.silent_mass(&phi);
        prop_assume!(silent > 1e-3);
        let theta = ThresholdPrescription::around_zero_with_silent_mass_at_most(&xi, silent);
        prop_assume!(theta.is_some());
        let theta = theta.unwrap();
        let xi_silent = xi.silent_mass(&theta);
        prop_assert!(silent - xi_silent <= 2.0 * xi.h() * xi.values()[N / 2] + 1e-12);
        for flag in flags() {
            let a = f2_error(&xi, &theta, flag).unwrap();
            let b = f2_error(&pi, &phi, flag).unwrap();
            prop_assert!(majorizes_within(&a, &b, 1e-6).unwrap(), "{flag:?}");
        }
    }

    #[test]
    fn property5_f1_preserves_majorization(
        v in values(),
        shift in 0usize..20,
        power in 1.0f64..3.0,
        a in gain(),
        w in noise(),
    ) {
        let pi = arbitrary_from(&v, shift);
        let xi = sharpened(&pi, power);
        prop_assume!(majorizes(&xi, &pi).unwrap());
        let fx = f1_error(&xi, a, &w, false).unwrap();
        let fp = f1_error(&pi, a, &w, false).unwrap();
        prop_assert!(majorizes_within(&fx, &fp, 1e-6).unwrap());
    }

    #[test]
    fn property6_majorization_orders_distortion(
        v in values(),
        shift in 0usize..20,
        power in 1.0f64..3.0,
        d in distortion(),
    ) {
        let pi = arbitrary_from(&v, shift);
        let xi = sharpened(&pi, power);
        prop_assume!(majorizes(&xi, &pi).unwrap());
        let (dx, _) = expected_distortion_grid(&xi, &d);
        let (dp, _) = expected_distortion_grid(&pi, &d);
        prop_assert!(dp >= dx - 1e-6, "{dp} < {dx}");
    }

    #[test]
    fn rearrangement_idempotent_and_profile_preserving(v in values(), shift in 0usize..20) {
        let pi = arbitrary_from(&v, shift);
        let r = symmetric_decreasing_rearrangement(&pi);
        prop_assert_eq!(symmetric_decreasing_rearrangement(&r), r.clone());
        prop_assert_eq!(concentration_profile(&r), concentration_profile(&pi));
        prop_assert!(majorizes(&r, &pi).unwrap() && majorizes(&pi, &r).unwrap());
    }
}
