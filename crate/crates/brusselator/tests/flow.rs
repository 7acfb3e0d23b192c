use brusselator::flow::{fmt17, integrate, IntegratorConfig};
use brusselator::frames::{transform_state, FrameId, FrameState, Params};

fn near_equilibrium(p: &Params) -> FrameState {
    FrameState::planar(FrameId::Xy, 1.1 * p.a, p.b() / p.a).unwrap()
}

#[test]
fn fmt17_keeps_seventeen_significant_digits() {
    for v in [
        0.1,
        1.0 / 3.0,
        -2.5e-300,
        6.02214076e23,
        std::f64::consts::PI,
    ] {
        let s = fmt17(v);
        assert_eq!(s.parse::<f64>().unwrap(), v);
        let mantissa = s
            .trim_start_matches('-')
            .split('e')
            .next()
            .unwrap()
            .replace('.', "");
        assert_eq!(mantissa.len(), 17, "{s}");
    }
}

#[test]
fn invalid_configs_are_rejected() {
    let bad = IntegratorConfig {
        rel_tol: -1.0,
        ..IntegratorConfig::default()
    };
    assert!(bad.validate().is_err());
    let p = Params::new(0.5, 0.1).unwrap();
    assert!(integrate(&near_equilibrium(&p), 1.0, &p, &bad).is_err());
}

#[test]
fn clocks_advance_in_proportion_in_the_xy_frame() {
    let p = Params::new(0.5, 0.1).unwrap();
    let tr = integrate(&near_equilibrium(&p), 5.0, &p, &IntegratorConfig::default()).unwrap();
    let last = tr.ledgers.last().unwrap();
    assert!((tr.times.last().unwrap() - 5.0).abs() < 1e-12);
    assert!((last.tau - 5.0).abs() < 1e-9);
    // dτ = ε dt
    assert!((last.t - 5.0 / p.epsilon).abs() < 1e-8, "t = {}", last.t);
    assert!(tr.times.windows(2).all(|w| w[1] > w[0]));
}

#[test]
fn same_orbit_in_two_frames() {
    let p = Params::new(0.5, 0.1).unwrap();
    let cfg = IntegratorConfig::default();
    let start = near_equilibrium(&p);
    let fast = integrate(
        &transform_state(&start, FrameId::XyFast, &p).unwrap(),
        1.0,
        &p,
        &cfg,
    )
    .unwrap();
    // The frames run on different clocks; compare positions at equal tau.
    let end_fast = transform_state(fast.last_state().unwrap(), FrameId::Xy, &p).unwrap();
    let tau_fast = fast.ledgers.last().unwrap().tau;
    let end_xy = integrate(&start, tau_fast, &p, &cfg).unwrap();
    let e = end_xy.last_state().unwrap().coords();
    let g = end_fast.coords();
    assert!(
        (e[0] - g[0]).abs() < 1e-7 && (e[1] - g[1]).abs() < 1e-7,
        "{e:?} vs {g:?}"
    );
}

#[test]
fn trajectory_csv_has_clocks_then_coordinates() {
    let p = Params::new(0.5, 0.1).unwrap();
    let tr = integrate(&near_equilibrium(&p), 1.0, &p, &IntegratorConfig::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("trajectory.csv");
    tr.write_csv(&path).unwrap();
    let mut rd = csv::Reader::from_path(&path).unwrap();
    let h: Vec<String> = rd.headers().unwrap().iter().map(String::from).collect();
    assert_eq!(&h[..6], ["tau", "t", "t1", "t2", "tau2", "chart_time"]);
    assert_eq!(h.len(), 6 + FrameId::Xy.dim());
    assert_eq!(rd.records().count(), tr.len());
}
