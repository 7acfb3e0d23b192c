use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};

use brusselator::frames::{
    chart_blow_down, chart_change, chart_lift, frame_coherence, hopf_threshold, pushforward_defect,
    transform_state, FrameId, FrameState, Params,
};
use brusselator::Error;
use proptest::prelude::*;

fn rel(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
        / scale
}

#[test]
fn hopf_threshold_matches_one_plus_a_squared() {
    for a in [0.3, 0.5, 1.0, 2.0] {
        let b = hopf_threshold(a, 0.5, 2.0 * (1.0 + a * a)).unwrap();
        assert!((b - (1.0 + a * a)).abs() <= 1e-9, "a = {a}: {b}");
    }
}

#[test]
fn derived_constants_at_half() {
    let p = Params::new(0.5, 0.1).unwrap();
    assert_eq!(p.b(), 5.0);
    assert_eq!(p.b_crit(), 1.25);
    assert!(p.is_oscillatory());
    assert!((p.r_star() - (0.4f64).sqrt()).abs() < 1e-15);
    assert!((p.rho_star() - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
    assert!((p.drop_radius() - 0.5).abs() < 1e-15);
    assert!((p.eps_prime() - 0.1f64.sqrt()).abs() < 1e-15);
}

#[test]
fn invalid_parameters_are_rejected() {
    assert!(matches!(
        Params::new(-1.0, 0.1),
        Err(Error::InvalidParams(_))
    ));
    assert!(matches!(
        Params::new(0.5, -0.1),
        Err(Error::InvalidParams(_))
    ));
    assert!(Params::new(f64::NAN, 0.1).is_err());
}

#[test]
fn frame_names_parse_loosely() {
    assert_eq!("xy-fast".parse::<FrameId>().unwrap(), FrameId::XyFast);
    assert_eq!("k_3".parse::<FrameId>().unwrap(), FrameId::K3);
    assert!(matches!(
        "XZ".parse::<FrameId>(),
        Err(Error::InvalidInput(_))
    ));
}

#[test]
fn wrong_arity_is_rejected() {
    assert!(matches!(
        FrameState::new(FrameId::Xy, &[1.0]),
        Err(Error::InvalidInput(_))
    ));
    assert!(FrameState::new(FrameId::K1, &[0.1, 0.2]).is_err());
}

#[test]
fn coherence_report_covers_every_edge_and_is_reproducible() {
    let a = frame_coherence(0.5, 40, 3).unwrap();
    let b = frame_coherence(0.5, 40, 3).unwrap();
    assert_eq!(a.len(), FrameId::edges().len());
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.max_pushforward, y.max_pushforward);
        assert!(x.max_pushforward <= 1e-6, "{:?}", x);
        assert!(x.max_round_trip <= 1e-12, "{:?}", x);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn planar_round_trips(
        theta in FRAC_PI_4 + 0.01..FRAC_PI_2 - 0.02,
        r in 0.05f64..1.0,
        eps in 0.01f64..0.2,
    ) {
        let p = Params::new(0.5, eps).unwrap();
        let s = FrameState::planar(FrameId::Rescaled, theta, r).unwrap();
        for target in [FrameId::Xy, FrameId::XySlow, FrameId::XyFast, FrameId::Polar, FrameId::Compact, FrameId::Omega] {
            let there = transform_state(&s, target, &p).unwrap();
            let back = transform_state(&there, FrameId::Rescaled, &p).unwrap();
            prop_assert!(rel(back.coords(), s.coords()) <= 1e-12, "{target}: {:?} vs {:?}", back, s);
        }
    }

    #[test]
    fn vector_fields_agree_across_frames(
        theta in FRAC_PI_4 + 0.01..FRAC_PI_2 - 0.02,
        r in 0.05f64..1.0,
        eps in 0.01f64..0.2,
    ) {
        let p = Params::new(0.5, eps).unwrap();
        let s = FrameState::planar(FrameId::Rescaled, theta, r).unwrap();
        for target in [FrameId::Compact, FrameId::Polar, FrameId::XyFast, FrameId::Omega] {
            let d = pushforward_defect(&s, target, &p).unwrap();
            prop_assert!(d <= 1e-6, "{target}: {d}");
        }
    }

    #[test]
    fn chart_lift_inverts_blow_down(
        omega in 0.001f64..0.05,
        rbar in 0.05f64..1.0,
        ep in 0.05f64..0.4,
    ) {
        for chart in [FrameId::K1, FrameId::K2, FrameId::K3] {
            let c = chart_lift(chart, omega, rbar, ep).unwrap();
            let back = chart_blow_down(chart, &c);
            prop_assert!(rel(&back, &[omega, rbar, ep]) <= 1e-12, "{chart}: {back:?}");
        }
    }

    #[test]
    fn chart_changes_compose(
        omega in 0.001f64..0.05,
        rbar in 0.05f64..1.0,
        ep in 0.05f64..0.4,
    ) {
        let k1 = chart_lift(FrameId::K1, omega, rbar, ep).unwrap();
        let k2 = chart_change(FrameId::K1, FrameId::K2, &k1).unwrap();
        let k3 = chart_change(FrameId::K2, FrameId::K3, &k2).unwrap();
        let direct = chart_change(FrameId::K1, FrameId::K3, &k1).unwrap();
        prop_assert!(rel(&k3, &direct) <= 1e-12);
        let back = chart_change(FrameId::K3, FrameId::K1, &k3).unwrap();
        prop_assert!(rel(&back, &k1) <= 1e-12);
    }
}
