use brusselator::frames::Params;
use brusselator::poincare::cycle_config;
use brusselator::sweep::{
    fit_power_law, run_sweep, s1_offset, Quantity, SweepPlan, DEFAULT_GRID, S1_PROBE_RADIUS,
};
use brusselator::Error;
use proptest::prelude::*;

fn base() -> Params {
    Params::new(0.5, 0.1).unwrap()
}

#[test]
fn exact_power_law_is_recovered() {
    let table: Vec<(f64, f64)> = DEFAULT_GRID
        .iter()
        .map(|&e| (e, 3.0 * e.powf(1.5)))
        .collect();
    let fit = fit_power_law(&table).unwrap();
    assert!((fit.slope - 1.5).abs() < 1e-12);
    assert!((fit.intercept - 3f64.ln()).abs() < 1e-12);
    assert!((fit.r_squared - 1.0).abs() < 1e-12);
    assert!((fit.predict(0.04) - 3.0 * 0.04f64.powf(1.5)).abs() < 1e-12);
}

#[test]
fn fit_rejects_short_or_nonpositive_tables() {
    assert!(matches!(
        fit_power_law(&[(0.1, 1.0), (0.2, 2.0), (0.3, 3.0)]),
        Err(Error::InsufficientData(_))
    ));
    let bad = [(0.1, 1.0), (0.2, -2.0), (0.3, 3.0), (0.4, 4.0)];
    assert!(matches!(fit_power_law(&bad), Err(Error::NonPositive(_))));
    let flat = [(0.1, 2.0), (0.2, 2.0), (0.3, 2.0), (0.4, 2.0)];
    let f = fit_power_law(&flat).unwrap();
    assert_eq!(f.slope, 0.0);
    assert_eq!(f.r_squared, 1.0);
}

#[test]
fn quantity_names_round_trip() {
    for q in Quantity::all() {
        assert_eq!(q.to_string().parse::<Quantity>().unwrap(), q);
    }
    for bad in ["rho", "dwell_sigma5_t", "dwell_sigma1_t3", ""] {
        assert!(
            matches!(bad.parse::<Quantity>(), Err(Error::InvalidInput(_))),
            "{bad}"
        );
    }
}

#[test]
fn invalid_grids_are_rejected() {
    let plan = |g: Vec<f64>| SweepPlan::new(base(), Quantity::RhoEps).with_grid(g);
    assert!(matches!(
        run_sweep(&plan(vec![])),
        Err(Error::InvalidInput(_))
    ));
    assert!(run_sweep(&plan(vec![0.1, 0.05])).is_err());
    assert!(run_sweep(&plan(vec![0.0, 0.1])).is_err());
    assert!(run_sweep(&plan(vec![0.1, 0.5])).is_err());
    let exit = SweepPlan::new(base(), Quantity::ExitImage).with_grid(vec![0.1, 0.3]);
    assert!(run_sweep(&exit).is_err());
}

#[test]
fn sweeps_are_deterministic_and_keep_grid_order() {
    let plan = SweepPlan::new(base(), Quantity::RhoEps).with_grid(vec![0.05, 0.07, 0.1, 0.15]);
    let a = run_sweep(&plan).unwrap();
    let b = run_sweep(&plan).unwrap();
    assert_eq!(a, b);
    assert_eq!(
        a.rows.iter().map(|r| r.epsilon).collect::<Vec<_>>(),
        plan.grid
    );
    assert!(a.rows.iter().all(|r| r.status == "ok"));
    let v = a.valid();
    assert!(
        v.windows(2).all(|w| w[1].1 > w[0].1),
        "rho_eps grows with eps: {v:?}"
    );

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("rho.csv");
    a.write_csv(&path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().next(), Some("epsilon,value,status"));
    assert_eq!(text.lines().count(), 5);
}

#[test]
fn sigma3_dwell_in_t2_is_bounded() {
    let q: Quantity = "dwell_sigma3_t2".parse().unwrap();
    let table = run_sweep(&SweepPlan::new(base(), q)).unwrap();
    assert_eq!(table.valid().len(), DEFAULT_GRID.len());
    assert!(table.max_min_ratio().unwrap() <= 3.0);
}

#[test]
fn exit_image_grows_like_the_cube_of_eta() {
    let table = run_sweep(&SweepPlan::new(base(), Quantity::ExitImage)).unwrap();
    let fit = table.fit().unwrap();
    assert!((fit.slope - 3.0).abs() < 0.3, "{fit:?}");
    let v = table.valid();
    assert!(v.iter().all(|&(_, r)| r > 0.0));
    assert!(v.windows(2).all(|w| w[1].1 > w[0].1));
}

#[test]
fn s1_offset_is_close_to_the_leading_term() {
    let cfg = cycle_config();
    let (measured, predicted) = s1_offset(&base(), S1_PROBE_RADIUS, &cfg).unwrap();
    assert!(
        ((measured - predicted) / predicted).abs() < 0.25,
        "{measured} vs {predicted}"
    );
}

proptest! {
    #[test]
    fn fitted_slope_matches_any_power(k in -3.0f64..3.0, c in 0.01f64..100.0) {
        let table: Vec<(f64, f64)> = DEFAULT_GRID.iter().map(|&e| (e, c * e.powf(k))).collect();
        let fit = fit_power_law(&table).unwrap();
        prop_assert!((fit.slope - k).abs() < 1e-10);
        prop_assert!(fit.residuals.iter().all(|r| r.abs() < 1e-10));
    }

    #[test]
    fn fitted_slope_is_scale_invariant(k in -3.0f64..3.0, noise in prop::collection::vec(-0.1f64..0.1, 6), c in 0.1f64..10.0) {
        let table: Vec<(f64, f64)> =
            DEFAULT_GRID.iter().zip(&noise).map(|(&e, n)| (e, e.powf(k) * n.exp())).collect();
        let scaled: Vec<(f64, f64)> = table.iter().map(|&(e, v)| (e, c * v)).collect();
        let (a, b) = (fit_power_law(&table).unwrap(), fit_power_law(&scaled).unwrap());
        prop_assert!((a.slope - b.slope).abs() < 1e-9);
        prop_assert!((0.0..=1.0).contains(&a.r_squared));
    }
}
