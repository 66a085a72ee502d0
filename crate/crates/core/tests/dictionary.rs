use dqkoop::dictionary::thin_plate;
use dqkoop::{Dictionary, DictionaryKind, Observable};
use proptest::prelude::*;

/// `r^2 ln r` evaluated from the distance itself.
fn tps_oracle(x: &[f64], c: &[f64]) -> f64 {
    let r = x.iter().zip(c).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    if r == 0.0 {
        0.0
    } else {
        r * r * r.ln()
    }
}

fn state(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-3.0..3.0f64, n)
}

proptest! {
    #[test]
    fn tps_lift_matches_the_kernel_formula(x in state(2), seed in any::<u64>()) {
        let d = Dictionary::tps_sampled(2, 100, -1.0, 1.0, seed).unwrap();
        let z = d.lift(&x).unwrap();
        prop_assert_eq!(z.len(), 102);
        prop_assert_eq!(&z[..2], &x[..]);
        let DictionaryKind::StateTps { centers } = d.kind() else { unreachable!() };
        for (k, c) in centers.iter().enumerate() {
            let want = tps_oracle(&x, c);
            prop_assert!((z[2 + k] - want).abs() <= 1e-12 * (1.0 + want.abs()), "center {}", k);
        }
    }

    #[test]
    fn kdv_lift_has_the_polynomial_layout(x in state(128)) {
        let d = Dictionary::kdv(128).unwrap();
        let z = d.lift(&x).unwrap();
        prop_assert_eq!(z.len(), 385);
        for i in 0..128 {
            prop_assert_eq!(z[i], x[i]);
            prop_assert_eq!(z[128 + i], x[i] * x[i]);
            prop_assert_eq!(z[256 + i], x[i] * x[(i + 1) % 128]);
        }
        prop_assert_eq!(z[384], 1.0);
    }

    #[test]
    fn identity_lift_is_the_state(x in state(5)) {
        prop_assert_eq!(Dictionary::identity(5).lift(&x).unwrap(), x);
    }

    #[test]
    fn thin_plate_kernel_is_continuous_at_zero(r2 in 1e-300..1e-6f64) {
        prop_assert!(thin_plate(r2).abs() <= 1e-5);
        prop_assert!(thin_plate(r2) <= 0.0);
    }
}

#[test]
fn thin_plate_kernel_sign_and_zeros() {
    assert_eq!(thin_plate(0.0), 0.0);
    assert_eq!(thin_plate(1.0), 0.0);
    assert!(thin_plate(0.25) < 0.0);
    assert!(thin_plate(4.0) > 0.0);
    assert!((thin_plate(4.0) - 4.0 * 2f64.ln()).abs() < 1e-15);
}

#[test]
fn sampled_centers_are_reproducible_and_inside_the_box() {
    let a = Dictionary::tps_sampled(2, 100, -1.0, 1.0, 5).unwrap();
    assert_eq!(a, Dictionary::tps_sampled(2, 100, -1.0, 1.0, 5).unwrap());
    assert_ne!(a, Dictionary::tps_sampled(2, 100, -1.0, 1.0, 6).unwrap());
    assert_eq!(a.center_seed(), Some(5));
    let DictionaryKind::StateTps { centers } = a.kind() else { unreachable!() };
    assert!(centers.iter().flatten().all(|v| (-1.0..1.0).contains(v)));
}

#[test]
fn state_block_detection() {
    assert!(Dictionary::tps_sampled(2, 3, -1.0, 1.0, 0).unwrap().has_state_block());
    assert!(Dictionary::kdv(8).unwrap().has_state_block());
    assert!(Dictionary::identity(3).has_state_block());
    let swapped = Dictionary::custom(2, vec![Observable::State { i: 1 }, Observable::State { i: 0 }]).unwrap();
    assert!(!swapped.has_state_block());
}

#[test]
fn malformed_dictionaries_and_inputs_are_rejected() {
    assert!(Dictionary::tps(2, vec![]).is_err());
    assert!(Dictionary::tps(2, vec![vec![0.0]]).is_err());
    assert!(Dictionary::kdv(1).is_err());
    assert!(Dictionary::custom(2, vec![]).is_err());
    assert!(Dictionary::custom(2, vec![Observable::Square { i: 2 }]).is_err());
    let d = Dictionary::identity(2);
    assert!(d.lift(&[1.0]).is_err());
    assert!(d.lift(&[1.0, f64::NAN]).is_err());
}

#[test]
fn descriptor_round_trips_through_json() {
    for d in [
        Dictionary::tps_sampled(2, 4, -1.0, 1.0, 8).unwrap(),
        Dictionary::kdv(16).unwrap(),
        Dictionary::custom(2, vec![Observable::Product { i: 0, j: 1 }, Observable::Constant]).unwrap(),
    ] {
        let json = serde_json::to_string(&d).unwrap();
        let back: Dictionary = serde_json::from_str(&json).unwrap();
        assert_eq!(back, d);
    }
}
