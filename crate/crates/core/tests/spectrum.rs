mod common;

use infdelay::kernel::KernelModel;
use infdelay::spectral::{count_roots, default_search_rect, find_characteristic_roots, RootClass, SpectralOptions};
use proptest::prelude::*;

#[test]
fn critical_kernel_has_one_simple_root_at_zero() {
    let s = common::scalar(1.0, 0.5);
    assert_eq!(s.summary.roots.len(), 1);
    let r = &s.summary.roots[0];
    assert!(r.lambda.norm() <= 1e-8, "{}", r.lambda);
    assert_eq!(r.multiplicity, 1);
    assert_eq!(r.classification, RootClass::Center);
    assert!(!s.summary.hyperbolic);
}

#[test]
fn family_roots_at_nu_minus_one() {
    // rho = 0.9 so that the root -0.75 of nu = 0.25 lies in the half plane Re lambda > -rho.
    for nu in [0.25, 0.5, 1.5, 2.0] {
        let s = common::scalar(nu, 0.9);
        assert_eq!(s.summary.roots.len(), 1, "nu = {nu}");
        let r = &s.summary.roots[0];
        assert!((r.lambda.re - (nu - 1.0)).abs() <= 1e-8 && r.lambda.im.abs() <= 1e-8, "nu = {nu}: {}", r.lambda);
        let expected = if nu < 1.0 { RootClass::Stable } else { RootClass::Unstable };
        assert_eq!(r.classification, expected);
        assert!(s.summary.hyperbolic);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    // Delta(lambda) = 1 - nu / (lambda + a) vanishes only at lambda = nu - a.
    #[test]
    fn single_real_root_tracks_nu(nu in 0.1f64..3.0, a in 0.8f64..2.0) {
        prop_assume!((nu - a).abs() > 0.05);
        let k = KernelModel::scalar(&[(nu, 0, a)], 0.5).unwrap();
        let rect = default_search_rect(&k, 0.05);
        let s = find_characteristic_roots(&k, rect, &SpectralOptions::default()).unwrap();
        let inside = nu - a > rect.re_min;
        prop_assert_eq!(s.roots.len(), usize::from(inside));
        prop_assert_eq!(count_roots(&k, rect).unwrap(), usize::from(inside));
        if inside {
            prop_assert!((s.roots[0].lambda.re - (nu - a)).abs() < 1e-8);
            prop_assert!(s.roots[0].lambda.im.abs() < 1e-8);
        }
    }
}
