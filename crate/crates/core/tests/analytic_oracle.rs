mod common;

use common::*;
use hoparq::analytic::*;
use proptest::prelude::*;

#[test]
fn oracle_self_check() {
    // 1 - (1 - 2^-3)^2 = 15/64
    let w = Fixed::one().sub(&Fixed::one().sub(&Fixed::from_f64(0.125)).pow(2));
    assert_eq!(w.to_f64(), 15.0 / 64.0);
    assert_eq!(Fixed::from_f64(1e-300).to_f64(), 0.0);
    assert_eq!(Fixed::from_f64(3.0).to_f64(), 3.0);
}

#[test]
fn reference_points() {
    let w = oracle_hop_loss(1e-5, 1000).to_f64();
    assert!(rel_err(w, 0.076_884_022_862_290_58) < 1e-15);
    let p = oracle_end_to_end_loss(1e-5, 1000, 100).to_f64();
    assert!(rel_err(p, 0.99969034147512) < 1e-12);
}

#[test]
fn loss_curve_matches_oracle_on_dense_grid() {
    let grid = log_grid(1e-8, 1e-4, 400).unwrap();
    let rows = loss_curve(&grid, 1000, &[0, 1, 10, 100, 1000]).unwrap();
    for r in rows {
        let want = oracle_end_to_end_loss(r.ber, 1000, r.num_relays).to_f64();
        assert!(rel_err(r.loss.value(), want) < 1e-12, "{r:?} vs {want}");
    }
}

proptest! {
    #[test]
    fn hop_loss_matches_oracle(exp in -12.0f64..-2.0, len in 1u32..4000) {
        let ber = 10f64.powf(exp);
        let got = per_hop_loss(ber, len).unwrap().value();
        let want = oracle_hop_loss(ber, len).to_f64();
        prop_assert!(rel_err(got, want) < 1e-12, "{} vs {}", got, want);
    }

    #[test]
    fn delivery_matches_oracle(
        exp in -9.0f64..-3.5,
        len in 1u32..2000,
        n in 1u32..6,
        relays in 0u32..200,
    ) {
        let ber = 10f64.powf(exp);
        let got = end_to_end_delivery_exact(ber, len, n, relays).unwrap().value();
        let want = oracle_delivery(ber, len, n, relays).to_f64();
        prop_assert!(rel_err(got, want) < 1e-10, "{} vs {}", got, want);
    }
}
