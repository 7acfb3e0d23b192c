use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};

use brusselator::frames::{p_function, FrameId, Params};
use brusselator::geometry::{
    concat, hausdorff_distance, hausdorff_semidistance, phi0, sigma_curves, sigma_curves_rescaled,
    singular_cycle, write_polylines_csv, CurveLabel, CurvePolyline,
};
use proptest::prelude::*;

fn params(eps: f64) -> Params {
    Params::new(0.5, eps).unwrap()
}

fn line(points: Vec<[f64; 2]>) -> CurvePolyline {
    CurvePolyline::new(points, FrameId::Rescaled, CurveLabel::Custom("test".into())).unwrap()
}

#[test]
fn singular_cycle_is_closed_and_hits_the_landmarks() {
    let p = params(0.1);
    let c = singular_cycle(&p, 64).unwrap();
    for i in 0..4 {
        assert_eq!(
            c.branches[i].last(),
            c.branches[(i + 1) % 4].first(),
            "joint {i}"
        );
    }
    assert_eq!(c.p0, [FRAC_PI_4, 0.0]);
    assert_eq!(c.p1, [FRAC_PI_2, 0.0]);
    assert!((c.fold[0] - 2f64.atan()).abs() < 1e-15);
    assert!((c.fold[1] - p.r_star()).abs() < 1e-15);
    assert!((c.drop[1] - p.drop_radius()).abs() < 1e-15);
    assert!((phi0(c.fold[0], &p).unwrap() - p.r_star()).abs() < 1e-12);
}

#[test]
fn sigma_bar_is_sigma_scaled_by_sqrt_eps() {
    let p = params(0.05);
    let rho = 0.08;
    let s = sigma_curves(&p, rho, 40).unwrap();
    let bar = sigma_curves_rescaled(&p, rho, 40).unwrap();
    let k = p.eps_prime();
    for (a, b) in s.iter().zip(&bar) {
        assert_eq!(a.points.len(), b.points.len());
        for (x, y) in a.points.iter().zip(&b.points) {
            assert!((k * x[0] - y[0]).abs() <= 1e-12 * y[0].abs().max(1.0));
            assert!((k * x[1] - y[1]).abs() <= 1e-12 * y[1].abs().max(1.0));
        }
    }
}

#[test]
fn sigma_curves_need_positive_rho() {
    assert!(sigma_curves(&params(0.1), 0.0, 10).is_err());
}

#[test]
fn hausdorff_of_parallel_segments_is_their_gap() {
    let a = line(vec![[0.0, 0.0], [1.0, 0.0]]);
    let b = line(vec![[0.0, 0.25], [1.0, 0.25]]);
    assert!((hausdorff_distance(&a, &b).unwrap() - 0.25).abs() < 1e-15);
    assert_eq!(hausdorff_distance(&a, &a).unwrap(), 0.0);
}

#[test]
fn mixed_frames_are_rejected() {
    let a = line(vec![[0.0, 0.0], [1.0, 0.0]]);
    let b = CurvePolyline::new(
        vec![[0.0, 0.0], [1.0, 0.0]],
        FrameId::Xy,
        CurveLabel::Sigma(1),
    )
    .unwrap();
    assert!(hausdorff_distance(&a, &b).is_err());
    assert!(concat(&[a, b], CurveLabel::Custom("x".into())).is_err());
}

#[test]
fn csv_round_trips_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("curves.csv");
    let c = singular_cycle(&params(0.1), 17).unwrap();
    write_polylines_csv(&c.branches, &path).unwrap();
    let mut rd = csv::Reader::from_path(&path).unwrap();
    assert_eq!(
        rd.headers().unwrap(),
        vec!["s", "coord1", "coord2", "label"]
    );
    let pts: Vec<[f64; 2]> = c.branches.iter().flat_map(|b| b.points.clone()).collect();
    let rows: Vec<csv::StringRecord> = rd.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), pts.len());
    for (row, p) in rows.iter().zip(&pts) {
        assert_eq!(row[1].parse::<f64>().unwrap(), p[0]);
        assert_eq!(row[2].parse::<f64>().unwrap(), p[1]);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn translation_bounds_the_semidistances(
        pts in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 2..20),
        dx in -0.5f64..0.5,
        dy in -0.5f64..0.5,
    ) {
        let a: Vec<[f64; 2]> = pts.iter().map(|&(x, y)| [x, y]).collect();
        prop_assume!(a.windows(2).any(|w| w[0] != w[1]));
        let b: Vec<[f64; 2]> = a.iter().map(|p| [p[0] + dx, p[1] + dy]).collect();
        let (a, b) = (line(a), line(b));
        let shift = dx.hypot(dy) + 1e-12;
        prop_assert!(hausdorff_semidistance(&a, &b, 128).unwrap() <= shift);
        prop_assert!(hausdorff_semidistance(&b, &a, 128).unwrap() <= shift);
        prop_assert_eq!(hausdorff_semidistance(&a, &a, 128).unwrap(), 0.0);
    }

    #[test]
    fn phi0_lies_on_the_critical_manifold(theta in FRAC_PI_4..FRAC_PI_2, a in 0.1f64..3.0) {
        let p = Params::new(a, 0.1).unwrap();
        let r = phi0(theta, &p).unwrap();
        prop_assert!(r >= 0.0);
        prop_assert!(p_function(theta, r, &p).abs() <= 1e-14, "phi0({theta}) = {r}");
    }
}
