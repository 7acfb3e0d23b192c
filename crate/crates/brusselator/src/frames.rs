//! Coordinate frames, their vector fields, state and clock conversions.
//!
//! The frames form a fixed tree
//! `XY - XYSLOW - XYFAST - POLAR - COMPACT - RESCALED - OMEGA - {K1, K2, K3}`.
//! Each frame carries exactly one clock. The three blow-up charts are
//! three-dimensional; every other frame is planar.

use std::f64::consts::{FRAC_1_SQRT_2, FRAC_PI_2, FRAC_PI_4, SQRT_2};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Slack allowed on the angular bounds of the polar-type frames.
pub const ANGLE_SLACK: f64 = 1e-9;

/// Largest argument accepted by the truncated series [`h_series`].
pub const H_SERIES_LIMIT: f64 = 0.1;

/// Model constants.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub a: f64,
    pub epsilon: f64,
}

impl Params {
    /// Validates `a > 0` and `epsilon >= 0`. The value `epsilon = 0` is
    /// accepted so that layer problems can be evaluated.
    pub fn new(a: f64, epsilon: f64) -> Result<Self> {
        if !(a.is_finite() && a > 0.0) {
            return Err(Error::InvalidParams(format!("a must be positive, got {a}")));
        }
        if !(epsilon.is_finite() && epsilon >= 0.0) {
            return Err(Error::InvalidParams(format!(
                "epsilon must be nonnegative, got {epsilon}"
            )));
        }
        Ok(Self { a, epsilon })
    }

    pub fn with_epsilon(&self, epsilon: f64) -> Result<Self> {
        Self::new(self.a, epsilon)
    }

    /// b = a / epsilon (infinite for the layer problem).
    pub fn b(&self) -> f64 {
        self.a / self.epsilon
    }

    /// Hopf threshold 1 + a².
    pub fn b_crit(&self) -> f64 {
        1.0 + self.a * self.a
    }

    /// True when b exceeds the Hopf threshold.
    pub fn is_oscillatory(&self) -> bool {
        self.epsilon > 0.0 && self.b() > self.b_crit()
    }

    /// Fold angle arctan(2).
    pub fn theta_star() -> f64 {
        2f64.atan()
    }

    /// Fold radius 1/√(5a).
    pub fn r_star(&self) -> f64 {
        1.0 / (5.0 * self.a).sqrt()
    }

    /// Tangent fiber constant 1/(2√a).
    pub fn rho_star(&self) -> f64 {
        0.5 / self.a.sqrt()
    }

    /// Radius of the drop point Q on θ = π/4, 1/(2√(2a)).
    pub fn drop_radius(&self) -> f64 {
        0.5 / (2.0 * self.a).sqrt()
    }

    /// The blow-up parameter ε' = √ε.
    pub fn eps_prime(&self) -> f64 {
        self.epsilon.sqrt()
    }
}

/// Time variables used across the frames.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Clock {
    Tau,
    T,
    T1,
    T2,
    Tau2,
    TauK1,
    TauK2,
    TauK3,
}

impl Clock {
    pub const ALL: [Clock; 8] = [
        Clock::Tau,
        Clock::T,
        Clock::T1,
        Clock::T2,
        Clock::Tau2,
        Clock::TauK1,
        Clock::TauK2,
        Clock::TauK3,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Clock::Tau => "tau",
            Clock::T => "t",
            Clock::T1 => "t1",
            Clock::T2 => "t2",
            Clock::Tau2 => "tau2",
            Clock::TauK1 => "tau_k1",
            Clock::TauK2 => "tau_k2",
            Clock::TauK3 => "tau_k3",
        }
    }
}

impl fmt::Display for Clock {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// The ten coordinate frames.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FrameId {
    Xy,
    XySlow,
    XyFast,
    Polar,
    Compact,
    Rescaled,
    Omega,
    K1,
    K2,
    K3,
}

impl FrameId {
    pub const ALL: [FrameId; 10] = [
        FrameId::Xy,
        FrameId::XySlow,
        FrameId::XyFast,
        FrameId::Polar,
        FrameId::Compact,
        FrameId::Rescaled,
        FrameId::Omega,
        FrameId::K1,
        FrameId::K2,
        FrameId::K3,
    ];

    pub fn dim(&self) -> usize {
        if self.is_chart() {
            3
        } else {
            2
        }
    }

    pub fn clock(&self) -> Clock {
        match self {
            FrameId::Xy | FrameId::XySlow => Clock::Tau,
            FrameId::XyFast | FrameId::Polar => Clock::T,
            FrameId::Compact => Clock::T1,
            FrameId::Rescaled | FrameId::Omega => Clock::T2,
            FrameId::K1 => Clock::TauK1,
            FrameId::K2 => Clock::TauK2,
            FrameId::K3 => Clock::TauK3,
        }
    }

    pub fn is_chart(&self) -> bool {
        matches!(self, FrameId::K1 | FrameId::K2 | FrameId::K3)
    }

    pub fn name(&self) -> &'static str {
        match self {
            FrameId::Xy => "XY",
            FrameId::XySlow => "XYSLOW",
            FrameId::XyFast => "XYFAST",
            FrameId::Polar => "POLAR",
            FrameId::Compact => "COMPACT",
            FrameId::Rescaled => "RESCALED",
            FrameId::Omega => "OMEGA",
            FrameId::K1 => "K1",
            FrameId::K2 => "K2",
            FrameId::K3 => "K3",
        }
    }

    /// Names of the coordinates, in storage order.
    pub fn coord_names(&self) -> &'static [&'static str] {
        match self {
            FrameId::Xy => &["X", "Y"],
            FrameId::XySlow | FrameId::XyFast => &["x", "y"],
            FrameId::Polar | FrameId::Compact | FrameId::Rescaled => &["theta", "r"],
            FrameId::Omega => &["omega", "r"],
            FrameId::K1 => &["omega1", "eta1", "eps1"],
            FrameId::K2 => &["omega2", "r2", "eta2"],
            FrameId::K3 => &["eta3", "r3", "eps3"],
        }
    }

    /// Position along the chain XY..OMEGA; the charts share the last slot.
    fn depth(&self) -> usize {
        match self {
            FrameId::Xy => 0,
            FrameId::XySlow => 1,
            FrameId::XyFast => 2,
            FrameId::Polar => 3,
            FrameId::Compact => 4,
            FrameId::Rescaled => 5,
            FrameId::Omega => 6,
            FrameId::K1 | FrameId::K2 | FrameId::K3 => 7,
        }
    }

    fn from_depth(d: usize) -> FrameId {
        [
            FrameId::Xy,
            FrameId::XySlow,
            FrameId::XyFast,
            FrameId::Polar,
            FrameId::Compact,
            FrameId::Rescaled,
            FrameId::Omega,
        ][d]
    }

    /// Frames adjacent in the tree, as (parent, child) pairs.
    pub fn edges() -> Vec<(FrameId, FrameId)> {
        let mut e: Vec<(FrameId, FrameId)> = (0..6)
            .map(|d| (FrameId::from_depth(d), FrameId::from_depth(d + 1)))
            .collect();
        e.push((FrameId::Omega, FrameId::K1));
        e.push((FrameId::Omega, FrameId::K2));
        e.push((FrameId::Omega, FrameId::K3));
        e
    }
}

impl fmt::Display for FrameId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FrameId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let up = s.trim().to_ascii_uppercase().replace(['-', '_'], "");
        FrameId::ALL
            .iter()
            .copied()
            .find(|f| f.name() == up)
            .ok_or_else(|| Error::InvalidInput(format!("unknown frame '{s}'")))
    }
}

/// A phase point tagged with its frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameState {
    pub frame: FrameId,
    coords: [f64; 3],
}

impl FrameState {
    pub fn new(frame: FrameId, coords: &[f64]) -> Result<Self> {
        if coords.len() != frame.dim() {
            return Err(Error::InvalidInput(format!(
                "{frame} expects {} coordinates, got {}",
                frame.dim(),
                coords.len()
            )));
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::Domain {
                frame: frame.name(),
                reason: "non-finite coordinate".into(),
            });
        }
        let mut c = [0.0; 3];
        c[..coords.len()].copy_from_slice(coords);
        Ok(Self { frame, coords: c })
    }

    pub fn planar(frame: FrameId, u: f64, v: f64) -> Result<Self> {
        Self::new(frame, &[u, v])
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords[..self.frame.dim()]
    }

    pub fn clock(&self) -> Clock {
        self.frame.clock()
    }
}

/// Accumulated values of every clock along one trajectory.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TimeLedger {
    pub tau: f64,
    pub t: f64,
    pub t1: f64,
    pub t2: f64,
    pub tau2: f64,
    pub chart_time: f64,
}

impl TimeLedger {
    pub const LEN: usize = 6;

    pub fn from_array(v: [f64; 6]) -> Self {
        Self {
            tau: v[0],
            t: v[1],
            t1: v[2],
            t2: v[3],
            tau2: v[4],
            chart_time: v[5],
        }
    }

    pub fn to_array(&self) -> [f64; 6] {
        [
            self.tau,
            self.t,
            self.t1,
            self.t2,
            self.tau2,
            self.chart_time,
        ]
    }

    /// Value of a clock; chart clocks all map to `chart_time`.
    pub fn get(&self, clock: Clock) -> f64 {
        match clock {
            Clock::Tau => self.tau,
            Clock::T => self.t,
            Clock::T1 => self.t1,
            Clock::T2 => self.t2,
            Clock::Tau2 => self.tau2,
            Clock::TauK1 | Clock::TauK2 | Clock::TauK3 => self.chart_time,
        }
    }

    pub fn add(&self, other: &TimeLedger) -> TimeLedger {
        let (x, y) = (self.to_array(), other.to_array());
        TimeLedger::from_array(std::array::from_fn(|i| x[i] + y[i]))
    }

    pub fn sub(&self, other: &TimeLedger) -> TimeLedger {
        let (x, y) = (self.to_array(), other.to_array());
        TimeLedger::from_array(std::array::from_fn(|i| x[i] - y[i]))
    }
}

/// Truncated series H(x) = 1 - x²/6 + x⁴/120, so that sin x ≈ x·H(x).
pub fn h_series(x: f64) -> Result<f64> {
    if x.abs() >= H_SERIES_LIMIT {
        return Err(Error::Domain {
            frame: "chart",
            reason: format!("series argument {x} outside |x| < {H_SERIES_LIMIT}"),
        });
    }
    Ok(h_unchecked(x))
}

#[inline]
fn h_unchecked(x: f64) -> f64 {
    let x2 = x * x;
    1.0 - x2 / 6.0 + x2 * x2 / 120.0
}

/// sin θ - cos θ computed without cancellation near π/4.
#[inline]
pub fn sin_minus_cos(theta: f64) -> f64 {
    SQRT_2 * (theta - FRAC_PI_4).sin()
}

fn domain(frame: FrameId, reason: impl Into<String>) -> Error {
    Error::Domain {
        frame: frame.name(),
        reason: reason.into(),
    }
}

/// Checks the admissible region of a frame.
pub fn check_domain(state: &FrameState, params: &Params) -> Result<()> {
    let c = state.coords();
    let f = state.frame;
    match f {
        FrameId::Xy | FrameId::XySlow => {
            if params.epsilon <= 0.0 {
                return Err(domain(f, "epsilon must be positive in the slow clock"));
            }
        }
        FrameId::XyFast => {}
        FrameId::Polar | FrameId::Compact | FrameId::Rescaled => {
            let (theta, r) = (c[0], c[1]);
            if r < 0.0 {
                return Err(domain(f, format!("r = {r} < 0")));
            }
            if f == FrameId::Polar && r == 0.0 {
                return Err(domain(f, "r = 0 is singular in the t clock"));
            }
            if !(FRAC_PI_4 - ANGLE_SLACK..=FRAC_PI_2 + ANGLE_SLACK).contains(&theta) {
                return Err(domain(f, format!("theta = {theta} outside [pi/4, pi/2]")));
            }
        }
        FrameId::Omega => {
            let (omega, r) = (c[0], c[1]);
            if r < 0.0 {
                return Err(domain(f, format!("r = {r} < 0")));
            }
            if !(-ANGLE_SLACK..=FRAC_PI_4 + ANGLE_SLACK).contains(&omega) {
                return Err(domain(f, format!("omega = {omega} outside [0, pi/4]")));
            }
        }
        FrameId::K1 | FrameId::K2 | FrameId::K3 => {
            if c.iter().any(|&v| v < 0.0) {
                return Err(domain(f, "negative chart coordinate"));
            }
            let x = chart_series_argument(f, c);
            if x.abs() >= H_SERIES_LIMIT {
                return Err(domain(
                    f,
                    format!("series argument {x} outside |x| < {H_SERIES_LIMIT}"),
                ));
            }
        }
    }
    Ok(())
}

/// The blow-up ω expressed in chart coordinates (argument of H).
fn chart_series_argument(frame: FrameId, c: &[f64]) -> f64 {
    match frame {
        FrameId::K1 => c[1].powi(6) * c[0],
        FrameId::K2 => c[2].powi(6) * c[0],
        FrameId::K3 => c[0].powi(6),
        _ => 0.0,
    }
}

/// Right-hand side of a frame's ODE written into `out`, without admissibility
/// checks beyond what the formula itself requires. Used in integration loops.
pub fn rhs_into(frame: FrameId, c: &[f64], params: &Params, out: &mut [f64]) -> Result<()> {
    let a = params.a;
    let eps = params.epsilon;
    match frame {
        FrameId::Xy => {
            if eps <= 0.0 {
                return Err(domain(frame, "epsilon must be positive"));
            }
            let b = a / eps;
            let (x, y) = (c[0], c[1]);
            let q = x * (b - x * y);
            out[0] = (a - x) - q;
            out[1] = q;
        }
        FrameId::XySlow => {
            if eps <= 0.0 {
                return Err(domain(frame, "epsilon must be positive"));
            }
            let (x, y) = (c[0], c[1]);
            let d = y - x;
            out[0] = (a * d - eps * x * d * d) / eps;
            out[1] = a - d;
        }
        FrameId::XyFast => {
            let (x, y) = (c[0], c[1]);
            let d = y - x;
            out[0] = a * d - eps * x * d * d;
            out[1] = eps * (a - d);
        }
        FrameId::Polar => {
            let (th, r) = (c[0], c[1]);
            if r == 0.0 {
                return Err(domain(frame, "r = 0 is singular in the t clock"));
            }
            let (s, co) = th.sin_cos();
            let d = sin_minus_cos(th);
            out[0] = -a * s * d + eps * (s * co * d * d / (r * r) - co * d + a * r * co);
            out[1] = -a * r * co * d + eps * (co * co * d * d / r + r * s * d - a * r * r * s);
        }
        FrameId::Compact => {
            let (th, r) = (c[0], c[1]);
            let (s, co) = th.sin_cos();
            let d = sin_minus_cos(th);
            let r2 = r * r;
            out[0] = -a * r2 * s * d + eps * (s * co * d * d - r2 * co * d + a * r2 * r * co);
            out[1] = -a * r2 * r * co * d
                + eps * (r * co * co * d * d + r2 * r * s * d - a * r2 * r2 * s);
        }
        FrameId::Rescaled => {
            let (th, r) = (c[0], c[1]);
            let (s, co) = th.sin_cos();
            let d = sin_minus_cos(th);
            let r2 = r * r;
            let se = eps.sqrt();
            out[0] = -a * r2 * s * d + s * co * d * d + eps * (-r2 * co * d + se * a * r2 * r * co);
            out[1] = -a * r2 * r * co * d
                + r * co * co * d * d
                + eps * (r2 * r * s * d - se * a * r2 * r2 * s);
        }
        FrameId::Omega => {
            let (w, r) = (c[0], c[1]);
            let (sw, cw) = w.sin_cos();
            let sp = sw + cw;
            let cm = cw - sw;
            let ep = eps.sqrt();
            let r2 = r * r;
            let k = a * FRAC_1_SQRT_2;
            out[0] = -a * r2 * sw * sp
                + sw * sw * sp * cm
                + eps * (-r2 * sw * cm + ep * k * r2 * r * cm);
            out[1] = -a * r2 * r * sw * cm
                + r * sw * sw * cm * cm
                + eps * (r2 * r * sw * sp - ep * k * r2 * r2 * sp);
        }
        FrameId::K1 => k1_rhs(a, c, out),
        FrameId::K2 => k2_rhs(a, c, out),
        FrameId::K3 => k3_rhs(a, c, out),
    }
    Ok(())
}

/// Trigonometric data at the blow-up angle x: (H(x), sin x + cos x, cos x - sin x).
#[inline]
fn chart_trig(x: f64) -> (f64, f64, f64) {
    let (s, c) = x.sin_cos();
    (h_unchecked(x), s + c, c - s)
}

fn k1_rhs(a: f64, c: &[f64], out: &mut [f64]) {
    let (w, eta, e) = (c[0], c[1], c[2]);
    let eta2 = eta * eta;
    let eta6 = eta2 * eta2 * eta2;
    let (h, sp, cm) = chart_trig(eta6 * w);
    let k = a * FRAC_1_SQRT_2;
    let e2 = e * e;
    let e3 = e2 * e;
    let g = -a * w * h * sp + w * w * h * h * sp * cm - eta2 * e2 * w * h * cm + k * e3 * cm;
    let hh = -a * w * h * cm + w * w * h * h * cm * cm + eta2 * e2 * w * h * sp - k * e3 * sp;
    out[0] = g - 2.0 * w * eta6 * hh;
    out[1] = eta * eta6 * hh / 3.0;
    out[2] = -e * eta6 * hh / 3.0;
}

fn k2_rhs(a: f64, c: &[f64], out: &mut [f64]) {
    let (w, r, eta) = (c[0], c[1], c[2]);
    let eta2 = eta * eta;
    let eta6 = eta2 * eta2 * eta2;
    let (h, sp, cm) = chart_trig(eta6 * w);
    let k = a * FRAC_1_SQRT_2;
    let r2 = r * r;
    let r3 = r2 * r;
    out[0] = -a * r2 * w * h * sp + w * w * h * h * sp * cm + k * r3 * cm - eta2 * r2 * w * h * cm;
    out[1] = eta6
        * r
        * (-a * r2 * w * h * cm + w * w * h * h * cm * cm - k * r3 * sp + eta2 * r2 * w * h * sp);
    out[2] = 0.0;
}

fn k3_rhs(a: f64, c: &[f64], out: &mut [f64]) {
    let (eta, r, e) = (c[0], c[1], c[2]);
    let eta2 = eta * eta;
    let eta6 = eta2 * eta2 * eta2;
    let (h, sp, cm) = chart_trig(eta6);
    let k = a * FRAC_1_SQRT_2;
    let r2 = r * r;
    let r3 = r2 * r;
    let e2 = e * e;
    let e3 = e2 * e;
    let bb = -a * r2 * h * sp + h * h * sp * cm + k * e3 * r3 * cm - eta2 * e2 * r2 * h * cm;
    let dd = -a * r2 * h * cm + h * h * cm * cm - k * e3 * r3 * sp + eta2 * e2 * r2 * h * sp;
    out[0] = eta * bb / 6.0;
    out[1] = -r * bb / 2.0 + eta6 * r * dd;
    out[2] = -e * bb / 6.0;
}

/// Evaluates the frame's vector field in its own clock.
pub fn eval_vector_field(state: &FrameState, params: &Params) -> Result<Vec<f64>> {
    check_domain(state, params)?;
    let mut out = vec![0.0; state.frame.dim()];
    rhs_into(state.frame, state.coords(), params, &mut out)?;
    Ok(out)
}

/// Blow-down of chart coordinates to (ω, r̄, ε').
pub fn chart_blow_down(frame: FrameId, c: &[f64]) -> [f64; 3] {
    match frame {
        FrameId::K1 => {
            let (w, eta, e) = (c[0], c[1], c[2]);
            [eta.powi(6) * w, eta.powi(3), eta * e]
        }
        FrameId::K2 => {
            let (w, r, eta) = (c[0], c[1], c[2]);
            [eta.powi(6) * w, eta.powi(3) * r, eta]
        }
        FrameId::K3 => {
            let (eta, r, e) = (c[0], c[1], c[2]);
            [eta.powi(6), eta.powi(3) * r, eta * e]
        }
        _ => panic!("chart_blow_down called on planar frame {frame}"),
    }
}

/// Inverse of [`chart_blow_down`]: lifts (ω, r̄, ε') into a chart.
pub fn chart_lift(frame: FrameId, omega: f64, rbar: f64, eps_prime: f64) -> Result<[f64; 3]> {
    match frame {
        FrameId::K1 => {
            if rbar <= 0.0 {
                return Err(Error::SingularTransform("K1 lift requires r > 0".into()));
            }
            let eta = rbar.cbrt();
            Ok([omega / (rbar * rbar), eta, eps_prime / eta])
        }
        FrameId::K2 => {
            if eps_prime <= 0.0 {
                return Err(Error::SingularTransform("K2 lift requires eps > 0".into()));
            }
            let e3 = eps_prime.powi(3);
            Ok([omega / (e3 * e3), rbar / e3, eps_prime])
        }
        FrameId::K3 => {
            if omega <= 0.0 {
                return Err(Error::SingularTransform(
                    "K3 lift requires omega > 0".into(),
                ));
            }
            let eta = omega.powf(1.0 / 6.0);
            Ok([eta, rbar / omega.sqrt(), eps_prime / eta])
        }
        _ => Err(Error::InvalidInput(format!("{frame} is not a chart"))),
    }
}

/// Direct chart changes between the blow-up charts.
pub fn chart_change(from: FrameId, to: FrameId, c: &[f64]) -> Result<[f64; 3]> {
    use FrameId::*;
    let sing = |m: &str| Err(Error::SingularTransform(m.to_string()));
    match (from, to) {
        (K1, K1) | (K2, K2) | (K3, K3) => Ok([c[0], c[1], c[2]]),
        (K1, K2) => {
            let (w, eta, e) = (c[0], c[1], c[2]);
            if e <= 0.0 {
                return sing("T12 requires eps1 > 0");
            }
            let e3 = e.powi(3);
            Ok([w / (e3 * e3), 1.0 / e3, eta * e])
        }
        (K2, K1) => {
            let (w, r, eta) = (c[0], c[1], c[2]);
            if r <= 0.0 {
                return sing("T21 requires r2 > 0");
            }
            let e = r.cbrt().recip();
            Ok([w / (r * r), eta / e, e])
        }
        (K2, K3) => {
            let (w, r, eta) = (c[0], c[1], c[2]);
            if w <= 0.0 {
                return sing("T23 requires omega2 > 0");
            }
            let w6 = w.powf(1.0 / 6.0);
            Ok([eta * w6, r / w.sqrt(), 1.0 / w6])
        }
        (K3, K2) => {
            let (eta, r, e) = (c[0], c[1], c[2]);
            if e <= 0.0 {
                return sing("T32 requires eps3 > 0");
            }
            let e3 = e.powi(3);
            Ok([1.0 / (e3 * e3), r / e3, eta * e])
        }
        (K1, K3) => chart_change(K2, K3, &chart_change(K1, K2, c)?),
        (K3, K1) => chart_change(K2, K1, &chart_change(K3, K2, c)?),
        _ => Err(Error::InvalidInput(format!(
            "{from} -> {to} is not a chart change"
        ))),
    }
}

/// One step toward the charts along the planar chain.
fn step_up(frame: FrameId, c: &[f64], p: &Params) -> Result<[f64; 2]> {
    let se = p.eps_prime();
    Ok(match frame {
        FrameId::Xy => [c[1], c[0] + c[1]],
        FrameId::XySlow => [c[0], c[1]],
        FrameId::XyFast => {
            let n2 = c[0] * c[0] + c[1] * c[1];
            if n2 == 0.0 {
                return Err(Error::SingularTransform("polar map at the origin".into()));
            }
            [c[1].atan2(c[0]), 1.0 / n2.sqrt()]
        }
        FrameId::Polar => [c[0], c[1]],
        FrameId::Compact => {
            if se == 0.0 {
                return Err(Error::SingularTransform(
                    "rescaling requires eps > 0".into(),
                ));
            }
            [c[0], c[1] / se]
        }
        FrameId::Rescaled => [c[0] - FRAC_PI_4, c[1]],
        _ => unreachable!(),
    })
}

/// One step away from the charts along the planar chain; `frame` is the
/// source, the result lives in the frame one level closer to XY.
fn step_down(frame: FrameId, c: &[f64], p: &Params) -> Result<[f64; 2]> {
    Ok(match frame {
        FrameId::XySlow => [c[1] - c[0], c[0]],
        FrameId::XyFast => [c[0], c[1]],
        FrameId::Polar => {
            if c[1] == 0.0 {
                return Err(Error::SingularTransform(
                    "r = 0 is the line at infinity".into(),
                ));
            }
            let (s, co) = c[0].sin_cos();
            [co / c[1], s / c[1]]
        }
        FrameId::Compact => [c[0], c[1]],
        FrameId::Rescaled => [c[0], p.eps_prime() * c[1]],
        FrameId::Omega => [c[0] + FRAC_PI_4, c[1]],
        _ => unreachable!(),
    })
}

/// Converts a state to another frame along the frame tree.
pub fn transform_state(state: &FrameState, target: FrameId, params: &Params) -> Result<FrameState> {
    let src = state.frame;
    if src == target {
        return Ok(*state);
    }
    if src.is_chart() && target.is_chart() {
        let c = chart_change(src, target, state.coords())?;
        return FrameState::new(target, &c);
    }
    // Reduce to a planar frame first.
    let (mut frame, mut c2) = if src.is_chart() {
        let [w, r, _] = chart_blow_down(src, state.coords());
        (FrameId::Omega, [w, r])
    } else {
        (src, [state.coords()[0], state.coords()[1]])
    };
    let planar_target = if target.is_chart() {
        FrameId::Omega
    } else {
        target
    };
    while frame.depth() < planar_target.depth() {
        c2 = step_up(frame, &c2, params)?;
        frame = FrameId::from_depth(frame.depth() + 1);
    }
    while frame.depth() > planar_target.depth() {
        c2 = step_down(frame, &c2, params)?;
        frame = FrameId::from_depth(frame.depth() - 1);
    }
    if target.is_chart() {
        let c = chart_lift(target, c2[0], c2[1], params.eps_prime())?;
        FrameState::new(target, &c)
    } else {
        FrameState::new(target, &c2)
    }
}

/// (ω, r̄, ε') of any state. Planar frames use ε' = √ε from the parameters.
pub fn blow_up_coordinates(state: &FrameState, params: &Params) -> Result<[f64; 3]> {
    if state.frame.is_chart() {
        return Ok(chart_blow_down(state.frame, state.coords()));
    }
    let o = transform_state(state, FrameId::Omega, params)?;
    Ok([o.coords()[0], o.coords()[1], params.eps_prime()])
}

/// d(clock)/d(t₂) from blow-up coordinates; `None` where undefined.
fn rate_vs_t2(
    clock: Clock,
    frame: FrameId,
    coords: &[f64],
    w: f64,
    rbar: f64,
    ep: f64,
) -> Option<f64> {
    let eps = ep * ep;
    let eta6 = |chart: FrameId| -> f64 {
        if frame == chart {
            let eta = match chart {
                FrameId::K1 => coords[1],
                FrameId::K2 => coords[2],
                _ => coords[0],
            };
            eta.powi(6)
        } else {
            match chart {
                FrameId::K1 => rbar * rbar,
                FrameId::K2 => eps * eps * eps,
                _ => w,
            }
        }
    };
    match clock {
        Clock::T2 => Some(1.0),
        Clock::T => Some(rbar * rbar),
        Clock::Tau => Some(eps * rbar * rbar),
        Clock::T1 => (eps > 0.0).then(|| 1.0 / eps),
        Clock::Tau2 => Some(eps),
        Clock::TauK1 => Some(eta6(FrameId::K1)),
        Clock::TauK2 => Some(eta6(FrameId::K2)),
        Clock::TauK3 => Some(eta6(FrameId::K3)),
    }
}

/// d(target)/d(source) at a state.
pub fn clock_rate(
    state: &FrameState,
    source: Clock,
    target: Clock,
    params: &Params,
) -> Result<f64> {
    if source == target {
        return Ok(1.0);
    }
    if matches!((source, target), (Clock::T, Clock::Tau)) {
        return Ok(params.epsilon);
    }
    if matches!((source, target), (Clock::Tau, Clock::T)) && params.epsilon > 0.0 {
        return Ok(1.0 / params.epsilon);
    }
    let [w, rbar, ep] = blow_up_coordinates(state, params)?;
    let rs = rate_vs_t2(source, state.frame, state.coords(), w, rbar, ep);
    let rt = rate_vs_t2(target, state.frame, state.coords(), w, rbar, ep);
    match (rs, rt) {
        (Some(s), Some(t)) if s > 0.0 && t > 0.0 && s.is_finite() && t.is_finite() => Ok(t / s),
        _ => Err(Error::UndefinedRate(format!(
            "d{target}/d{source} degenerates at {:?} in {}",
            state.coords(),
            state.frame
        ))),
    }
}

/// Rates of the ledger clocks (τ, t, t₁, t₂, τ₂, chart) relative to the
/// frame's active clock. Undefined rates are reported as zero.
pub fn ledger_rates(frame: FrameId, c: &[f64], params: &Params) -> [f64; 6] {
    let (w, rbar, ep) = if frame.is_chart() {
        let [w, r, e] = chart_blow_down(frame, c);
        (w, r, e)
    } else {
        match planar_rbar(frame, c, params) {
            Some((w, r)) => (w, r, params.eps_prime()),
            None => return [0.0; 6],
        }
    };
    let active = rate_vs_t2(frame.clock(), frame, c, w, rbar, ep).unwrap_or(0.0);
    if !(active > 0.0 && active.is_finite()) {
        let mut out = [0.0; 6];
        if frame.is_chart() {
            out[5] = 1.0;
        }
        return out;
    }
    let clocks = [Clock::Tau, Clock::T, Clock::T1, Clock::T2, Clock::Tau2];
    let mut out = [0.0; 6];
    for (i, ck) in clocks.iter().enumerate() {
        out[i] = rate_vs_t2(*ck, frame, c, w, rbar, ep)
            .map(|v| v / active)
            .filter(|v| v.is_finite())
            .unwrap_or(0.0);
    }
    out[5] = if frame.is_chart() { 1.0 } else { 0.0 };
    out
}

/// (ω, r̄) of a planar state computed directly, cheaper than a full transform.
fn planar_rbar(frame: FrameId, c: &[f64], p: &Params) -> Option<(f64, f64)> {
    let se = p.eps_prime();
    match frame {
        FrameId::Rescaled => Some((c[0] - FRAC_PI_4, c[1])),
        FrameId::Omega => Some((c[0], c[1])),
        FrameId::Polar | FrameId::Compact => (se > 0.0).then(|| (c[0] - FRAC_PI_4, c[1] / se)),
        FrameId::Xy | FrameId::XySlow | FrameId::XyFast => {
            let (x, y) = if frame == FrameId::Xy {
                (c[1], c[0] + c[1])
            } else {
                (c[0], c[1])
            };
            let n = (x * x + y * y).sqrt();
            (se > 0.0 && n > 0.0).then(|| (y.atan2(x) - FRAC_PI_4, 1.0 / (n * se)))
        }
        _ => None,
    }
}

/// Nonstandard-form pieces (N, f, G) of the RESCALED field.
pub fn factorization_parts(
    state: &FrameState,
    params: &Params,
) -> Result<([f64; 2], f64, [f64; 2])> {
    if state.frame != FrameId::Rescaled {
        return Err(Error::FrameMismatch(
            state.frame.name(),
            FrameId::Rescaled.name(),
        ));
    }
    check_domain(state, params)?;
    let (th, r) = (state.coords()[0], state.coords()[1]);
    let a = params.a;
    let (s, c) = th.sin_cos();
    let d = sin_minus_cos(th);
    let p = a * r * r - c * d;
    let n = [-s, -r * c];
    let f = d * p;
    let se = params.eps_prime();
    let r2 = r * r;
    let g = [
        -r2 * c * d + se * a * r2 * r * c,
        r2 * r * s * d - se * a * r2 * r2 * s,
    ];
    Ok((n, f, g))
}

/// The function p(θ, r) = a r² - cos θ (sin θ - cos θ) whose zero set is S₀².
pub fn p_function(theta: f64, r: f64, params: &Params) -> f64 {
    params.a * r * r - theta.cos() * sin_minus_cos(theta)
}

/// Central finite-difference Jacobian of the frame's vector field.
pub fn jacobian(state: &FrameState, params: &Params) -> Result<Vec<Vec<f64>>> {
    let n = state.frame.dim();
    let base = state.coords().to_vec();
    let mut jac = vec![vec![0.0; n]; n];
    let mut fp = vec![0.0; n];
    let mut fm = vec![0.0; n];
    for j in 0..n {
        let h = 1e-6 * base[j].abs().max(1.0);
        let mut zp = base.clone();
        let mut zm = base.clone();
        zp[j] += h;
        zm[j] -= h;
        rhs_into(state.frame, &zp, params, &mut fp)?;
        rhs_into(state.frame, &zm, params, &mut fm)?;
        for i in 0..n {
            jac[i][j] = (fp[i] - fm[i]) / (2.0 * h);
        }
    }
    Ok(jac)
}

/// Eigenvalues of a 2×2 matrix as (real, imaginary) pairs.
pub fn eigenvalues_2x2(m: &[Vec<f64>]) -> [(f64, f64); 2] {
    let tr = m[0][0] + m[1][1];
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    let disc = tr * tr / 4.0 - det;
    if disc >= 0.0 {
        let s = disc.sqrt();
        [(tr / 2.0 + s, 0.0), (tr / 2.0 - s, 0.0)]
    } else {
        let s = (-disc).sqrt();
        [(tr / 2.0, s), (tr / 2.0, -s)]
    }
}

/// Relative defect of DT·V_src = m·V_tgt(T z) for an adjacent frame pair.
///
/// For OMEGA to a chart the OMEGA state is augmented with ε' (ε̇' = 0) so
/// that the chart transform is a map between three-dimensional spaces.
pub fn pushforward_defect(src: &FrameState, target: FrameId, params: &Params) -> Result<f64> {
    let sf = src.frame;
    let augmented = sf == FrameId::Omega && target.is_chart();
    let mut z: Vec<f64> = src.coords().to_vec();
    if augmented {
        z.push(params.eps_prime());
    }
    let map = |z: &[f64]| -> Result<Vec<f64>> {
        if augmented {
            Ok(chart_lift(target, z[0], z[1], z[2])?.to_vec())
        } else {
            let st = FrameState::new(sf, z)?;
            Ok(transform_state(&st, target, params)?.coords().to_vec())
        }
    };
    let mut vs = eval_vector_field(src, params)?;
    if augmented {
        vs.push(0.0);
    }
    let tz = map(&z)?;
    let tstate = FrameState::new(target, &tz)?;
    let vt = eval_vector_field(&tstate, params)?;
    let m = clock_rate(src, sf.clock(), target.clock(), params)?;
    let n = z.len();
    let mut dtv = vec![0.0; tz.len()];
    for j in 0..n {
        let h = 1e-7 * z[j].abs().max(1.0);
        let mut zp = z.clone();
        let mut zm = z.clone();
        zp[j] += h;
        zm[j] -= h;
        let fp = map(&zp)?;
        let fm = map(&zm)?;
        for i in 0..tz.len() {
            dtv[i] += (fp[i] - fm[i]) / (2.0 * h) * vs[j];
        }
    }
    let mut num: f64 = 0.0;
    let mut den: f64 = 0.0;
    for i in 0..tz.len() {
        num = num.max((dtv[i] - m * vt[i]).abs());
        den = den.max((m * vt[i]).abs()).max(dtv[i].abs());
    }
    if den == 0.0 {
        return Ok(0.0);
    }
    Ok(num / den)
}

/// Coherence statistics of one tree edge over random states.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EdgeCoherence {
    pub from: FrameId,
    pub to: FrameId,
    pub samples: usize,
    /// Largest relative pushforward defect.
    pub max_pushforward: f64,
    /// Largest relative round-trip error from → to → from.
    pub max_round_trip: f64,
}

/// Random state in `frame` built from a RESCALED sample. Chart-bound OMEGA
/// states keep ω below the series limit.
fn sample_state(
    frame: FrameId,
    chart_edge: bool,
    rng: &mut impl rand::Rng,
    params: &Params,
) -> Result<FrameState> {
    let hi = if chart_edge {
        0.9 * H_SERIES_LIMIT
    } else {
        FRAC_PI_4 - 0.02
    };
    let theta = FRAC_PI_4 + rng.gen_range(0.005..hi);
    let r = rng.gen_range(0.05..1.0);
    transform_state(
        &FrameState::planar(FrameId::Rescaled, theta, r)?,
        frame,
        params,
    )
}

fn relative_gap(a: &[f64], b: &[f64]) -> f64 {
    let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    a.iter()
        .zip(b)
        .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
        / scale
}

/// Pushforward and round-trip errors on every edge of the frame tree, with
/// `samples` seeded random states per edge and ε drawn from [0.01, 0.2].
pub fn frame_coherence(a: f64, samples: usize, seed: u64) -> Result<Vec<EdgeCoherence>> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for (from, to) in FrameId::edges() {
        let mut e = EdgeCoherence {
            from,
            to,
            samples,
            max_pushforward: 0.0,
            max_round_trip: 0.0,
        };
        for _ in 0..samples {
            let params = Params::new(a, rng.gen_range(0.01..0.2))?;
            let src = sample_state(from, to.is_chart(), &mut rng, &params)?;
            e.max_pushforward = e
                .max_pushforward
                .max(pushforward_defect(&src, to, &params)?);
            let back = if to.is_chart() {
                let c = src.coords();
                let lifted = chart_lift(to, c[0], c[1], params.eps_prime())?;
                let [w, r, ep] = chart_blow_down(to, &lifted);
                relative_gap(&[c[0], c[1], params.eps_prime()], &[w, r, ep])
            } else {
                let there = transform_state(&src, to, &params)?;
                relative_gap(
                    src.coords(),
                    transform_state(&there, from, &params)?.coords(),
                )
            };
            e.max_round_trip = e.max_round_trip.max(back);
        }
        out.push(e);
    }
    Ok(out)
}

/// Value of b at which the trace of the XY Jacobian at the equilibrium
/// (a, b/a) vanishes, by bisection on [lo, hi] of the numerically
/// evaluated Jacobian.
pub fn hopf_threshold(a: f64, lo: f64, hi: f64) -> Result<f64> {
    let trace = |b: f64| -> Result<f64> {
        let params = Params::new(a, a / b)?;
        let eq = FrameState::planar(FrameId::Xy, a, b / a)?;
        let j = jacobian(&eq, &params)?;
        Ok(j[0][0] + j[1][1])
    };
    let (mut lo, mut hi) = (lo, hi);
    let mut tlo = trace(lo)?;
    if tlo * trace(hi)? > 0.0 {
        return Err(Error::NoRoot(format!(
            "trace keeps its sign on [{lo}, {hi}]"
        )));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let tm = trace(mid)?;
        if (tm < 0.0) == (tlo < 0.0) {
            lo = mid;
            tlo = tm;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-13 * hi {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(a: f64, e: f64) -> Params {
        Params::new(a, e).unwrap()
    }

    #[test]
    fn params_reject_bad_values() {
        assert!(Params::new(0.0, 0.1).is_err());
        assert!(Params::new(0.5, -0.1).is_err());
        assert!(Params::new(f64::NAN, 0.1).is_err());
    }

    #[test]
    fn derived_constants_closed_forms() {
        let q = p(0.5, 0.1);
        assert_eq!(Params::theta_star(), 2f64.atan());
        assert!((q.r_star() - 1.0 / 2.5f64.sqrt()).abs() < 1e-15);
        assert!((q.rho_star() - 1.0 / (2.0 * 0.5f64.sqrt())).abs() < 1e-15);
        assert!((q.b_crit() - 1.25).abs() < 1e-15);
        assert!(q.is_oscillatory());
    }

    #[test]
    fn xy_equilibrium_is_exact_zero() {
        let q = p(0.5, 0.125);
        let s = FrameState::planar(FrameId::Xy, q.a, q.b() / q.a).unwrap();
        assert_eq!(eval_vector_field(&s, &q).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn rescaled_at_quarter_pi_matches_superslow_rate() {
        let q = p(0.5, 0.04);
        let s = FrameState::planar(FrameId::Rescaled, FRAC_PI_4, 1.0).unwrap();
        let v = eval_vector_field(&s, &q).unwrap();
        let expect = q.epsilon.powf(1.5) * q.a / SQRT_2;
        assert!((v[0] - expect).abs() < 1e-15);
        assert!((v[1] + expect).abs() < 1e-15);
    }

    #[test]
    fn compact_layer_vanishes_on_infinity_line() {
        let q = p(0.5, 0.0);
        for th in [0.8, 1.0, 1.3, 1.5] {
            let s = FrameState::planar(FrameId::Compact, th, 0.0).unwrap();
            assert_eq!(eval_vector_field(&s, &q).unwrap(), vec![0.0, 0.0]);
        }
    }

    #[test]
    fn k2_layer_vanishes_at_fold() {
        let a = 0.5;
        let s = FrameState::new(FrameId::K2, &[4.0 / a, 2.0 * SQRT_2 / a, 0.0]).unwrap();
        let v = eval_vector_field(&s, &p(a, 0.01)).unwrap();
        assert!(v[0].abs() < 1e-12);
    }

    #[test]
    fn negative_radius_rejected() {
        let s = FrameState::planar(FrameId::Rescaled, 1.0, -0.1).unwrap();
        assert!(matches!(
            eval_vector_field(&s, &p(0.5, 0.1)),
            Err(Error::Domain { .. })
        ));
    }

    #[test]
    fn transform_examples() {
        let q = p(0.5, 0.04);
        let s = FrameState::planar(FrameId::XySlow, 1.0, 3.0).unwrap();
        let t = transform_state(&s, FrameId::Xy, &q).unwrap();
        assert_eq!(t.coords(), &[2.0, 1.0]);

        let s = FrameState::planar(FrameId::Rescaled, std::f64::consts::FRAC_PI_3, 0.5).unwrap();
        let t = transform_state(&s, FrameId::XyFast, &q).unwrap();
        let x = (std::f64::consts::FRAC_PI_3).cos() / (0.2 * 0.5);
        let y = (std::f64::consts::FRAC_PI_3).sin() / (0.2 * 0.5);
        assert!((t.coords()[0] - x).abs() < 1e-12 && (t.coords()[0] - 5.0).abs() < 1e-12);
        assert!((t.coords()[1] - y).abs() < 1e-12);
    }

    #[test]
    fn chart_change_matches_printed_formula() {
        let c = [0.3, 0.2, 0.7];
        let k2 = chart_change(FrameId::K1, FrameId::K2, &c).unwrap();
        assert!((k2[0] - 0.3 / 0.7f64.powi(6)).abs() < 1e-12);
        assert!((k2[1] - 1.0 / 0.7f64.powi(3)).abs() < 1e-12);
        assert!((k2[2] - 0.14).abs() < 1e-15);
        let back = chart_change(FrameId::K2, FrameId::K1, &k2).unwrap();
        for i in 0..3 {
            assert!((back[i] - c[i]).abs() <= 1e-12 * c[i].abs(), "{back:?}");
        }
        assert!(matches!(
            chart_change(FrameId::K1, FrameId::K2, &[0.3, 0.2, 0.0]),
            Err(Error::SingularTransform(_))
        ));
    }

    #[test]
    fn clock_rate_examples() {
        let q = p(0.5, 0.04);
        let s = FrameState::planar(FrameId::Rescaled, 1.0, 0.5).unwrap();
        assert!((clock_rate(&s, Clock::T2, Clock::T, &q).unwrap() - 0.25).abs() < 1e-15);
        assert!((clock_rate(&s, Clock::T, Clock::Tau, &q).unwrap() - 0.04).abs() < 1e-15);
        let w = 0.5f64.powi(6);
        let s = FrameState::planar(FrameId::Omega, w, 0.3).unwrap();
        assert!((clock_rate(&s, Clock::T2, Clock::TauK3, &q).unwrap() - 0.015625).abs() < 1e-15);
        let s0 = FrameState::planar(FrameId::Rescaled, 1.0, 0.0).unwrap();
        assert!(matches!(
            clock_rate(&s0, Clock::T, Clock::T2, &q),
            Err(Error::UndefinedRate(_))
        ));
    }

    #[test]
    fn factorization_zero_sets() {
        let q = p(0.5, 0.01);
        let s = FrameState::planar(FrameId::Rescaled, FRAC_PI_4, 0.7).unwrap();
        assert_eq!(factorization_parts(&s, &q).unwrap().1, 0.0);
        let th: f64 = 1.2;
        let r = (th.cos() * sin_minus_cos(th) / q.a).sqrt();
        let s = FrameState::planar(FrameId::Rescaled, th, r).unwrap();
        assert!(factorization_parts(&s, &q).unwrap().1.abs() < 1e-15);
    }

    #[test]
    fn h_series_domain() {
        assert!(h_series(0.05).is_ok());
        assert!(h_series(0.1).is_err());
        assert!((h_series(0.05).unwrap() * 0.05 - 0.05f64.sin()).abs() < 1e-12);
    }

    #[test]
    fn frame_names_parse() {
        for f in FrameId::ALL {
            assert_eq!(f.name().parse::<FrameId>().unwrap(), f);
        }
        assert!("nope".parse::<FrameId>().is_err());
    }
}
