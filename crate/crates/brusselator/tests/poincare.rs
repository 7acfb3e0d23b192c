use brusselator::frames::{Params, TimeLedger};
use brusselator::poincare::{
    build_sections, contraction_estimate, cycle_config, dwell_times, fixed_point, fixed_point_from,
    return_map, SectionId, SectionOverrides,
};
use serde_json::Value;

fn params() -> Params {
    Params::new(0.5, 0.1).unwrap()
}

#[test]
fn cycle_closes_and_branch_times_sum_to_the_period() {
    let c = fixed_point(&params(), &cycle_config()).unwrap();
    assert!(c.closure_gap <= 1e-8);
    assert_eq!(c.branches.len(), 4);
    let sum = c
        .branches
        .iter()
        .fold(TimeLedger::default(), |acc, b| acc.add(&b.ledger));
    for (s, p) in sum.to_array().iter().zip(c.period.to_array()).take(5) {
        assert!((s - p).abs() <= 1e-6 * p.abs().max(1e-300), "{s} vs {p}");
    }
    // Regression value at a = 0.5, ε = 0.1.
    assert!(
        (c.rho_eps - 0.164_411_632_23).abs() < 1e-8,
        "rho_eps = {}",
        c.rho_eps
    );
}

#[test]
fn starts_along_sigma1_reach_the_same_fixed_point() {
    let p = params();
    let cfg = cycle_config();
    let s = build_sections(&p, &SectionOverrides::default()).unwrap();
    let beta = s.constants.beta1;
    let us: Vec<f64> = [0.05, 0.5, 0.95]
        .iter()
        .map(|f| fixed_point_from(&s, f * beta, &p, &cfg).unwrap().u_fixed)
        .collect();
    assert!(us.iter().all(|u| (u - us[0]).abs() <= 1e-9), "{us:?}");
}

#[test]
fn return_map_contracts() {
    let p = params();
    let cfg = cycle_config();
    let s = build_sections(&p, &SectionOverrides::default()).unwrap();
    let c = fixed_point_from(&s, 0.1, &p, &cfg).unwrap();
    let e = contraction_estimate(&s, &c, &cfg).unwrap();
    assert!(e.log_derivative < -5.0, "{e:?}");
    let far = return_map(&s, 0.9 * s.constants.beta1, &p, &cfg).unwrap();
    assert!((far.u_out - c.u_fixed).abs() < 1e-9);
}

#[test]
fn dwell_times_are_positive_in_both_clocks() {
    let c = fixed_point(&params(), &cycle_config()).unwrap();
    let d = dwell_times(&c).unwrap();
    assert_eq!(d.iter().map(|x| x.branch).collect::<Vec<_>>(), [1, 2, 3, 4]);
    assert!(d.iter().all(|x| x.t > 0.0 && x.t2 > 0.0));
}

#[test]
fn sections_are_valid_polylines() {
    let s = build_sections(&params(), &SectionOverrides::default()).unwrap();
    for id in SectionId::ALL {
        let spec = s.get(id);
        let poly = spec.polyline(9).unwrap();
        assert_eq!(poly.points.len(), 9);
        assert!(spec.length > 0.0);
    }
}

#[test]
fn json_export_has_sorted_keys() {
    let c = fixed_point(&params(), &cycle_config()).unwrap();
    let v = c.to_json(Some("cycle.csv"));
    let Value::Object(m) = &v else {
        panic!("not an object")
    };
    let keys: Vec<&String> = m.keys().collect();
    let mut sorted = keys.clone();
    sorted.sort();
    assert_eq!(keys, sorted);
    assert!(serde_json::to_string(&v).unwrap().contains("cycle.csv"));
}
