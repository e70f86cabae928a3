//! Analytic gradients against central finite differences at 64-bit precision.

mod common;

use common::checks::{encoder_gradient_error, mac_gradient_error, sgmac_gradient_error, GRADIENT_TOLERANCE};

#[test]
fn encoder_gradients_match_finite_differences() {
    let (worst, checked) = encoder_gradient_error();
    assert!(checked > 100);
    assert!(worst < GRADIENT_TOLERANCE, "worst relative error {worst:e}");
}

#[test]
fn mac_gradients_match_finite_differences() {
    let (worst, checked) = mac_gradient_error();
    assert!(checked > 100);
    assert!(worst < GRADIENT_TOLERANCE, "worst relative error {worst:e}");
}

#[test]
fn whole_sgmac_gradients_match_finite_differences() {
    let (worst, checked) = sgmac_gradient_error();
    assert!(checked > 200);
    assert!(worst < GRADIENT_TOLERANCE, "worst relative error {worst:e}");
}
