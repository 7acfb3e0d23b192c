//! Geometry and quantitative checks in the blow-up charts K1, K2 and K3.
//!
//! Chart coordinates follow [`FrameId::coord_names`]: K1 is (ω₁, η₁, ε₁),
//! K2 is (ω₂, r₂, η₂) and K3 is (η₃, r₃, ε₃). The blow-down image is the
//! triple (ω, r̄, ε') with ω = η⁶ω̄, r̄ = η³r̄_chart and ε' = η·ε_chart.

use std::f64::consts::{FRAC_1_SQRT_2, SQRT_2};
use std::path::Path;

use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::flow::{Direction, EventSpec, FrameIntegrator, IntegratorConfig, Trajectory};
use crate::frames::{
    chart_blow_down, chart_lift, h_series, rhs_into, FrameId, FrameState, Params, TimeLedger,
};
use crate::sweep::{fit_power_law, PowerLawFit};

/// Bisection stops once the bracket is narrower than this.
pub const ROOT_TOL: f64 = 1e-12;

/// Relative slack allowed when comparing measured quantities with the bounds.
pub const BOUND_SLACK: f64 = 1e-9;

/// Chart-time cap for a single exit-bound integration.
const EXIT_TIME_LIMIT: f64 = 1e5;

/// A point given in one of the blow-up charts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChartPoint {
    pub chart: FrameId,
    pub coords: [f64; 3],
}

impl ChartPoint {
    pub fn new(chart: FrameId, coords: [f64; 3]) -> Result<Self> {
        if !chart.is_chart() {
            return Err(Error::InvalidInput(format!(
                "{chart} is not a blow-up chart"
            )));
        }
        if coords.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "non-finite chart coordinates {coords:?}"
            )));
        }
        Ok(Self { chart, coords })
    }

    /// Lifts a blow-down triple (ω, r̄, ε') into `chart`.
    pub fn lift(chart: FrameId, omega: f64, rbar: f64, eps_prime: f64) -> Result<Self> {
        Self::new(chart, chart_lift(chart, omega, rbar, eps_prime)?)
    }

    pub fn state(&self) -> Result<FrameState> {
        FrameState::new(self.chart, &self.coords)
    }
}

/// Blow-down of a chart point: the OMEGA state (ω, r̄) and ε'.
pub fn blow_down(p: &ChartPoint) -> Result<(FrameState, f64)> {
    let [omega, rbar, eps] = chart_blow_down(p.chart, &p.coords);
    Ok((FrameState::planar(FrameId::Omega, omega, rbar)?, eps))
}

/// The K1 equilibrium curve 𝒩 in {η₁ = 0}: ε₁ as a function of ω₁ ∈ [0, a].
pub fn k1_equilibrium_curve(omega1: f64, params: &Params) -> Result<f64> {
    let a = params.a;
    if !(0.0..=a).contains(&omega1) {
        return Err(Error::Domain {
            frame: "K1",
            reason: format!("omega1 = {omega1} outside [0, {a}]"),
        });
    }
    Ok((SQRT_2 * omega1 * (a - omega1) / a).max(0.0).cbrt())
}

/// Fold of 𝒩 in K1 as (ω₁*, ε₁*).
pub fn k1_fold(params: &Params) -> (f64, f64) {
    let a = params.a;
    (a / 2.0, (a / (2.0 * SQRT_2)).cbrt())
}

/// Lower and upper branches ω₁∓(ε₁) of 𝒩, the inverse of [`k1_equilibrium_curve`].
pub fn k1_branches(eps1: f64, params: &Params) -> Result<(f64, f64)> {
    let a = params.a;
    if eps1 < 0.0 {
        return Err(Error::Domain {
            frame: "K1",
            reason: format!("eps1 = {eps1} < 0"),
        });
    }
    let disc = a * a - 2.0 * SQRT_2 * a * eps1.powi(3);
    if disc < 0.0 {
        return Err(Error::NoRoot(format!(
            "eps1 = {eps1} lies beyond the K1 fold"
        )));
    }
    let s = disc.sqrt();
    // The lower root in cancellation-free form.
    let lower = 2.0 * SQRT_2 * a * eps1.powi(3) / (2.0 * (a + s));
    Ok((lower, (a + s) / 2.0))
}

/// The attracting branch ω₁⁻(ε₁).
pub fn omega1_minus(eps1: f64, params: &Params) -> Result<f64> {
    Ok(k1_branches(eps1, params)?.0)
}

/// Equilibria of the K2 layer problem at height r₂, as (ω₂⁻, ω₂⁺).
pub fn k2_equilibrium_branches(r2: f64, params: &Params) -> Result<(f64, f64)> {
    let a = params.a;
    if !(r2 > 0.0) {
        return Err(Error::Domain {
            frame: "K2",
            reason: format!("r2 = {r2} must be positive"),
        });
    }
    let b = a * r2 * r2;
    let disc = b * b - 2.0 * SQRT_2 * a * r2.powi(3);
    let (_, r_fold) = k2_fold(params);
    if disc < 0.0 {
        // Round-off at the fold itself still yields the double root.
        if (r2 - r_fold).abs() <= 1e-12 * r_fold {
            return Ok((b / 2.0, b / 2.0));
        }
        return Err(Error::NoRoot(format!(
            "no real K2 equilibrium for r2 = {r2} < {r_fold}"
        )));
    }
    let s = disc.sqrt();
    Ok(((b - s) / 2.0, (b + s) / 2.0))
}

/// Fold of the K2 equilibria as (ω₂*, r₂*).
pub fn k2_fold(params: &Params) -> (f64, f64) {
    (4.0 / params.a, 2.0 * SQRT_2 / params.a)
}

/// Nondegeneracy data at the K2 fold, evaluated directly from the chart
/// field next to reference values in an alternative normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct K2FoldReport {
    pub omega: f64,
    pub r: f64,
    /// ∂²f/∂ω₂² at the fold.
    pub f_omega_omega: f64,
    /// ∂f/∂r₂ at the fold.
    pub f_r: f64,
    /// The r₂ equation divided by η₂⁶, at η₂ = 0.
    pub g: f64,
    pub quoted: [f64; 3],
    pub residual_f: f64,
    pub residual_f_omega: f64,
}

impl K2FoldReport {
    pub fn nondegenerate(&self) -> bool {
        self.f_omega_omega != 0.0 && self.f_r != 0.0 && self.g != 0.0
    }

    pub fn to_json(&self) -> Value {
        json!({
            "fold": {"omega2": self.omega, "r2": self.r},
            "direct": {"f_omega_omega": self.f_omega_omega, "f_r": self.f_r, "g": self.g},
            "quoted": {"f_omega_omega": self.quoted[0], "f_r": self.quoted[1], "g": self.quoted[2]},
            "residual_f": self.residual_f,
            "residual_f_omega": self.residual_f_omega,
            "nondegenerate": self.nondegenerate(),
        })
    }
}

/// Evaluates the K2 fold conditions with closed-form derivatives of the
/// η₂ = 0 layer field f = −a r²ω + ω² + (a/√2) r³ and
/// g = r(−a r²ω + ω² − (a/√2) r³).
pub fn k2_fold_report(params: &Params) -> K2FoldReport {
    let a = params.a;
    let k = a * FRAC_1_SQRT_2;
    let (w, r) = k2_fold(params);
    let f = -a * r * r * w + w * w + k * r.powi(3);
    let f_w = -a * r * r + 2.0 * w;
    K2FoldReport {
        omega: w,
        r,
        f_omega_omega: 2.0,
        f_r: -2.0 * a * r * w + 3.0 * k * r * r,
        g: r * (-a * r * r * w + w * w - k * r.powi(3)),
        quoted: [8.0 / a, -8.0 / (SQRT_2 * a), -128.0 / (a * SQRT_2)],
        residual_f: f,
        residual_f_omega: f_w,
    }
}

/// Equilibrium curves of the K3 chart in its two invariant planes.
#[derive(Debug, Clone, Copy)]
pub struct K3Curves {
    a: f64,
}

/// Returns the evaluators for the K3 equilibrium curves.
pub fn k3_equilibrium_curves(params: &Params) -> K3Curves {
    K3Curves { a: params.a }
}

impl K3Curves {
    /// The common point E = (η₃, r₃, ε₃) = (0, 1/√a, 0).
    pub fn e_point(&self) -> [f64; 3] {
        [0.0, 1.0 / self.a.sqrt(), 0.0]
    }

    fn cubic(&self, r3: f64, eps3: f64) -> f64 {
        self.a * r3 * r3 - 1.0 - self.a * FRAC_1_SQRT_2 * eps3.powi(3) * r3.powi(3)
    }

    /// Curve in {η₃ = 0}: ε₃ ≥ 0 with a r₃² − 1 − (a/√2)ε₃³r₃³ = 0.
    ///
    /// The relation is monotone in ε₃, so the root is bracketed on
    /// [0, ε_hi] and bisected to [`ROOT_TOL`].
    pub fn eps3_on_eta_plane(&self, r3: f64) -> Result<f64> {
        let re = 1.0 / self.a.sqrt();
        if !(r3 >= re) {
            return Err(Error::NoRoot(format!("r3 = {r3} below 1/sqrt(a) = {re}")));
        }
        if r3 == re {
            return Ok(0.0);
        }
        let mut hi = 1.0;
        while self.cubic(r3, hi) > 0.0 {
            hi *= 2.0;
            if hi > 1e6 {
                return Err(Error::NoRoot(format!("no bracket for r3 = {r3}")));
            }
        }
        Ok(bisect(|e| self.cubic(r3, e), 0.0, hi))
    }

    /// Same curve, solved for r₃ given ε₃: the branch that starts at E.
    pub fn r3_on_eta_plane(&self, eps3: f64) -> Result<f64> {
        let re = 1.0 / self.a.sqrt();
        if eps3 < 0.0 {
            return Err(Error::Domain {
                frame: "K3",
                reason: format!("eps3 = {eps3} < 0"),
            });
        }
        if eps3 == 0.0 {
            return Ok(re);
        }
        let c = self.a * FRAC_1_SQRT_2 * eps3.powi(3);
        // The cubic increases on [re, 2a/(3c)] and must be positive at its peak.
        let peak = 2.0 * self.a / (3.0 * c);
        if peak <= re || self.cubic(peak, eps3) <= 0.0 {
            return Err(Error::NoRoot(format!(
                "eps3 = {eps3} beyond the K3 fold of the eta-plane curve"
            )));
        }
        Ok(bisect(|r| self.cubic(r, eps3), re, peak))
    }

    /// Curve in {ε₃ = 0}: r₃ = √((cos η₃⁶ − sin η₃⁶)·H(η₃⁶)/a).
    pub fn r3_on_eps_plane(&self, eta3: f64) -> Result<f64> {
        let x = eta3.powi(6);
        let h = h_series(x)?;
        let v = (x.cos() - x.sin()) * h / self.a;
        if v < 0.0 {
            return Err(Error::NoRoot(format!(
                "eta3 = {eta3} beyond the eps-plane curve"
            )));
        }
        Ok(v.sqrt())
    }
}

/// Bisection for a sign change of `f` on [lo, hi] down to [`ROOT_TOL`].
fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let flo = f(lo);
    while hi - lo > ROOT_TOL {
        let mid = 0.5 * (lo + hi);
        let fm = f(mid);
        if fm == 0.0 {
            return mid;
        }
        if (fm < 0.0) == (flo < 0.0) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Outcome of [`verify_k1_monotone_eta`].
#[derive(Debug, Clone)]
pub struct K1MonotoneReport {
    /// η₁ decreases strictly between every pair of consecutive samples.
    pub strictly_decreasing: bool,
    /// η₁ never changes (the invariant plane η₁ = 0).
    pub eta_constant: bool,
    /// Largest relative drift of η₁ε₁ (absolute when the product is 0).
    pub product_drift: f64,
    pub trajectory: Trajectory,
}

/// Integrates the K1 field for `duration` units of chart time and records
/// how η₁ and η₁ε₁ evolve.
pub fn verify_k1_monotone_eta(
    start: &ChartPoint,
    duration: f64,
    params: &Params,
    config: &IntegratorConfig,
) -> Result<K1MonotoneReport> {
    if start.chart != FrameId::K1 {
        return Err(Error::FrameMismatch(start.chart.name(), FrameId::K1.name()));
    }
    let fi = FrameIntegrator::new(FrameId::K1, *params, *config).own_clock_only();
    let run = fi.run(&start.state()?, TimeLedger::default(), duration, &[], true)?;
    let trajectory = run
        .trajectory
        .ok_or_else(|| Error::InsufficientData("no trajectory recorded".into()))?;
    let etas: Vec<f64> = trajectory.states.iter().map(|s| s.coords()[1]).collect();
    let strictly_decreasing = etas.len() > 1 && etas.windows(2).all(|w| w[1] < w[0]);
    let eta_constant = etas.iter().all(|&e| e == etas[0]);
    let p0 = start.coords[1] * start.coords[2];
    let scale = if p0 != 0.0 { p0.abs() } else { 1.0 };
    let product_drift = trajectory
        .states
        .iter()
        .map(|s| ((s.coords()[1] * s.coords()[2] - p0) / scale).abs())
        .fold(0.0, f64::max);
    Ok(K1MonotoneReport {
        strictly_decreasing,
        eta_constant,
        product_drift,
        trajectory,
    })
}

/// Explicit constants of the exit-chart estimates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExitChartConstants {
    pub delta: f64,
    pub k0: f64,
    pub gamma_out: f64,
    pub beta_out: f64,
    pub a: f64,
    pub c: f64,
    pub d: f64,
    pub f: f64,
    pub k: f64,
    pub c_tilde: f64,
    pub d_tilde: f64,
    pub c1: f64,
    pub c2: f64,
    pub d1: f64,
    pub d2: f64,
}

/// Computes the exit-chart constants for the region
/// Ξ = {η₃ε₃ = k₀, η₃ ∈ [0, δ], ε₃ ∈ [0, γ_out], r₃ ∈ [0, β_out]}.
pub fn exit_chart_constants(
    delta: f64,
    k0: f64,
    gamma_out: f64,
    beta_out: f64,
    params: &Params,
) -> Result<ExitChartConstants> {
    for (name, v) in [
        ("delta", delta),
        ("gamma_out", gamma_out),
        ("beta_out", beta_out),
    ] {
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::Constraint(format!("{name} = {v} must be positive")));
        }
    }
    if !(k0 >= 0.0) {
        return Err(Error::Constraint(format!("k0 = {k0} must be nonnegative")));
    }
    let a = params.a;
    let d6 = delta.powi(6);
    if 2.0 * d6 >= 1.0 {
        return Err(Error::Constraint(format!("delta = {delta} too large")));
    }
    let c = (1.0 - 2.0 * d6).powi(3) * (0.5 - d6);
    let d = (1.0 + d6) * ((a + k0 * k0) / 2.0 + d6 * k0 * k0);
    let f = (c / d).sqrt();
    if beta_out >= f {
        return Err(Error::Constraint(format!(
            "beta_out = {beta_out} must stay below F = {f}"
        )));
    }
    let k = f * f / (f * f - beta_out * beta_out);
    let c_tilde = (1.0 + d6) / 2.0;
    let d_tilde = a * (1.0 - 2.0 * d6 - gamma_out.powi(3) / SQRT_2) / 2.0;
    if d_tilde <= 0.0 {
        return Err(Error::Constraint(format!(
            "gamma_out = {gamma_out} makes D~ nonpositive"
        )));
    }
    let d1 = 1.0 / (1.0 + d6);
    let d2 = (1.0 - 2.0 * d6).powi(-3);
    let c1 = a * gamma_out.powi(3) * k.powi(3) / (3.0 * SQRT_2 * c);
    let c2 = d2 * (1.0 + d6) * (a + k0 * k0) / (2.0 * c);
    Ok(ExitChartConstants {
        delta,
        k0,
        gamma_out,
        beta_out,
        a,
        c,
        d,
        f,
        k,
        c_tilde,
        d_tilde,
        c1,
        c2,
        d1,
        d2,
    })
}

impl ExitChartConstants {
    /// δ = 0.2, γ_out = 0.5, β_out = 0.5 and k₀ = δ·γ_out, the largest
    /// product η₃ε₃ met by initials on Σ_out with η₃ ≤ δ.
    pub fn defaults(params: &Params) -> Result<Self> {
        Self::with_delta(0.2, params)
    }

    pub fn with_delta(delta: f64, params: &Params) -> Result<Self> {
        let gamma_out = 0.5;
        exit_chart_constants(delta, delta * gamma_out, gamma_out, 0.5, params)
    }

    /// Hitting-time window [lower, upper] for an initial (η₃,₀, r₃,₀).
    pub fn hitting_bounds(&self, eta0: f64, r0: f64) -> (f64, f64) {
        let l = 6.0 * (self.delta / eta0).ln();
        (
            self.d1 * l - self.c1 * r0.powi(3),
            self.d2 * l + self.c2 * r0 * r0,
        )
    }

    /// Exponential sandwich [r₀e^{−C̃t}, K r₀e^{−Ct}].
    pub fn sandwich(&self, r0: f64, t: f64) -> (f64, f64) {
        (
            r0 * (-self.c_tilde * t).exp(),
            self.k * r0 * (-self.c * t).exp(),
        )
    }

    pub fn to_json(&self) -> Value {
        json!({
            "delta": self.delta, "k0": self.k0, "gamma_out": self.gamma_out,
            "beta_out": self.beta_out, "a": self.a,
            "C": self.c, "D": self.d, "F": self.f, "K": self.k,
            "C_tilde": self.c_tilde, "D_tilde": self.d_tilde,
            "c1": self.c1, "c2": self.c2, "d1": self.d1, "d2": self.d2,
        })
    }
}

/// Result of one exit-bound integration.
#[derive(Debug, Clone)]
pub struct ExitBoundReport {
    pub start: ChartPoint,
    pub t_plus: f64,
    pub lower: f64,
    pub upper: f64,
    /// r₃ at the exit section η₃ = δ.
    pub r_exit: f64,
    pub sandwich_ok: bool,
    /// Worst sample of the sandwich, as the largest of
    /// (lower − r₃)/r₃,₀ and (r₃ − upper)/r₃,₀; nonpositive when it holds.
    pub sandwich_margin: f64,
    pub samples: usize,
}

impl ExitBoundReport {
    pub fn hitting_ok(&self) -> bool {
        let slack = BOUND_SLACK * self.upper.abs().max(1.0);
        self.lower - slack <= self.t_plus && self.t_plus <= self.upper + slack
    }

    pub fn ok(&self) -> bool {
        self.hitting_ok() && self.sandwich_ok
    }

    pub fn to_json(&self) -> Value {
        json!({
            "start": {"eta3": self.start.coords[0], "r3": self.start.coords[1], "eps3": self.start.coords[2]},
            "T_plus": self.t_plus,
            "lower": self.lower,
            "upper": self.upper,
            "r_exit": self.r_exit,
            "sandwich_margin": self.sandwich_margin,
            "ok": self.ok(),
        })
    }
}

/// Names of the faces through which a K3 orbit may leave Ξ early.
pub const FACE_EPS_OUT: &str = "eps3 = gamma_out";
pub const FACE_R_OUT: &str = "r3 = beta_out";

/// Integrates the K3 field from `initial` until η₃ = δ and checks the
/// hitting-time window and the exponential sandwich on r₃.
pub fn verify_exit_bounds(
    initial: &ChartPoint,
    constants: &ExitChartConstants,
    params: &Params,
    config: &IntegratorConfig,
) -> Result<ExitBoundReport> {
    if initial.chart != FrameId::K3 {
        return Err(Error::FrameMismatch(
            initial.chart.name(),
            FrameId::K3.name(),
        ));
    }
    let [eta0, r0, eps0] = initial.coords;
    let cst = constants;
    if !(eta0 > 0.0) {
        return Err(Error::InvalidInput(format!(
            "eta3 = {eta0} must be positive"
        )));
    }
    let tol_face = 1.0 + BOUND_SLACK;
    if eta0 > cst.delta * tol_face || r0 < 0.0 || r0 > cst.beta_out * tol_face || eps0 < 0.0 {
        return Err(Error::InvalidInput(format!(
            "initial {:?} outside the region",
            initial.coords
        )));
    }
    if eps0 > cst.gamma_out * tol_face || eta0 * eps0 > cst.k0 * tol_face {
        return Err(Error::InvalidInput(format!(
            "initial {:?} violates eps3 <= gamma_out or eta3*eps3 <= k0",
            initial.coords
        )));
    }
    let (lower, upper) = cst.hitting_bounds(eta0, r0);
    if eta0 >= cst.delta {
        return Ok(ExitBoundReport {
            start: *initial,
            t_plus: 0.0,
            lower,
            upper,
            r_exit: r0,
            sandwich_ok: true,
            sandwich_margin: 0.0,
            samples: 1,
        });
    }
    let delta = cst.delta;
    let (g_out, b_out) = (cst.gamma_out * tol_face, cst.beta_out * tol_face);
    let events = [
        EventSpec::new(
            move |s: &FrameState| s.coords()[0] - delta,
            Direction::Rising,
        ),
        EventSpec::new(
            move |s: &FrameState| s.coords()[2] - g_out,
            Direction::Rising,
        ),
        EventSpec::new(
            move |s: &FrameState| s.coords()[1] - b_out,
            Direction::Rising,
        ),
    ];
    let fi = FrameIntegrator::new(FrameId::K3, *params, *config).own_clock_only();
    let run = fi.run(
        &initial.state()?,
        TimeLedger::default(),
        EXIT_TIME_LIMIT,
        &events,
        true,
    )?;
    let (idx, crossing) = run.crossing.ok_or(Error::NoCrossing(EXIT_TIME_LIMIT))?;
    match idx {
        0 => {}
        1 => return Err(Error::RegionEscape(FACE_EPS_OUT.into())),
        _ => return Err(Error::RegionEscape(FACE_R_OUT.into())),
    }
    let traj = run
        .trajectory
        .ok_or_else(|| Error::InsufficientData("no trajectory recorded".into()))?;
    let mut margin = f64::NEG_INFINITY;
    for (t, s) in traj.times.iter().zip(&traj.states) {
        let r = s.coords()[1];
        let (lo, hi) = cst.sandwich(r0, *t);
        let m = if r0 > 0.0 {
            ((lo - r) / r0).max((r - hi) / r0)
        } else {
            r.abs()
        };
        margin = margin.max(m);
    }
    Ok(ExitBoundReport {
        start: *initial,
        t_plus: crossing.clock_time,
        lower,
        upper,
        r_exit: crossing.state.coords()[1],
        sandwich_ok: margin <= BOUND_SLACK,
        sandwich_margin: margin,
        samples: traj.len(),
    })
}

/// Deterministic spread of `n` initials on Σ_out = {ε₃ = γ_out}: η₃,₀ runs
/// through [0.01, 0.15] and r₃,₀ through [0, β_out] with coprime strides,
/// so the two coordinates are not coupled.
pub fn exit_bound_initials(n: usize, constants: &ExitChartConstants) -> Result<Vec<ChartPoint>> {
    let (eta_lo, eta_hi) = (0.01, 0.15f64.min(constants.delta));
    let denom = n.saturating_sub(1).max(1) as f64;
    (0..n)
        .map(|i| {
            let s = i as f64 / denom;
            let eta = eta_lo * (eta_hi / eta_lo).powf(s);
            let j = (7 * i) % n.max(1);
            let r = constants.beta_out * j as f64 / denom;
            let eps = constants.gamma_out.min(constants.k0 / eta);
            ChartPoint::new(FrameId::K3, [eta, r, eps])
        })
        .collect()
}

/// Batch verification with its JSON report.
#[derive(Debug, Clone)]
pub struct ExitBoundsBatch {
    pub constants: ExitChartConstants,
    pub reports: Vec<ExitBoundReport>,
}

impl ExitBoundsBatch {
    pub fn all_ok(&self) -> bool {
        self.reports.iter().all(ExitBoundReport::ok)
    }

    pub fn to_json(&self) -> Value {
        json!({
            "constants": self.constants.to_json(),
            "initials": self.reports.iter().map(ExitBoundReport::to_json).collect::<Vec<_>>(),
            "all_ok": self.all_ok(),
        })
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(&self.to_json())? + "\n")?;
        Ok(())
    }
}

/// Runs [`verify_exit_bounds`] on `n` spread initials, in parallel.
pub fn verify_exit_bounds_batch(
    constants: &ExitChartConstants,
    n: usize,
    params: &Params,
    config: &IntegratorConfig,
) -> Result<ExitBoundsBatch> {
    use rayon::prelude::*;
    let initials = exit_bound_initials(n, constants)?;
    let reports = initials
        .par_iter()
        .map(|p| verify_exit_bounds(p, constants, params, config))
        .collect::<Result<Vec<_>>>()?;
    Ok(ExitBoundsBatch {
        constants: *constants,
        reports,
    })
}

/// Default η₃,₀ grid of the exit-image experiment.
pub const EXIT_IMAGE_GRID: [f64; 4] = [0.02, 0.04, 0.08, 0.12];

/// Radius r₃ on the exit section η₃ = δ reached from (η₃,₀, r₃,₀, γ_out).
pub fn exit_radius(
    eta0: f64,
    r0: f64,
    constants: &ExitChartConstants,
    params: &Params,
    config: &IntegratorConfig,
) -> Result<f64> {
    let eps0 = constants.gamma_out.min(constants.k0 / eta0);
    let p = ChartPoint::new(FrameId::K3, [eta0, r0, eps0])?;
    Ok(verify_exit_bounds(&p, constants, params, config)?.r_exit)
}

/// Fits the exit radius against η₃,₀ at fixed r₃,₀.
pub fn exit_image_scaling(
    r0: f64,
    grid: &[f64],
    constants: &ExitChartConstants,
    params: &Params,
    config: &IntegratorConfig,
) -> Result<(PowerLawFit, Vec<(f64, f64)>)> {
    let table = grid
        .iter()
        .map(|&eta0| Ok((eta0, exit_radius(eta0, r0, constants, params, config)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok((fit_power_law(&table)?, table))
}

/// Evaluates the K-chart field at a chart point.
pub fn chart_field(p: &ChartPoint, params: &Params) -> Result<[f64; 3]> {
    let mut out = [0.0; 3];
    rhs_into(p.chart, &p.coords, params, &mut out)?;
    Ok(out)
}

/// Orbit invariant of the K3 field restricted to {ε₃ = 0}.
pub fn k3_eps_plane_invariant(eta3: f64, r3: f64) -> f64 {
    let x = eta3.powi(6);
    r3 * eta3.powi(3) / (x.sin() + x.cos())
}

/// Relative drift of one conserved quantity along a test trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct InvariantDrift {
    pub name: &'static str,
    pub drift: f64,
    pub samples: usize,
}

fn drift_along(traj: &Trajectory, q: impl Fn(&[f64]) -> f64) -> f64 {
    let q0 = q(traj.states[0].coords());
    let scale = if q0 != 0.0 { q0.abs() } else { 1.0 };
    traj.states
        .iter()
        .map(|s| ((q(s.coords()) - q0) / scale).abs())
        .fold(0.0, f64::max)
}

fn own_clock_run(
    start: FrameState,
    duration: f64,
    stop: Option<EventSpec<'_>>,
    params: &Params,
    config: &IntegratorConfig,
) -> Result<Trajectory> {
    let fi = FrameIntegrator::new(start.frame, *params, *config).own_clock_only();
    let events: Vec<EventSpec<'_>> = stop.into_iter().collect();
    fi.run(&start, TimeLedger::default(), duration, &events, true)?
        .trajectory
        .ok_or_else(|| Error::InsufficientData("no trajectory recorded".into()))
}

/// Drifts of η₁ε₁ (K1), η₃ε₃ (K3), the layer fiber constant r/sin θ
/// (RESCALED at ε = 0) and the K3 orbit invariant in {ε₃ = 0}.
pub fn invariant_drifts(params: &Params, config: &IntegratorConfig) -> Result<Vec<InvariantDrift>> {
    let mut out = Vec::new();
    let k1 = ChartPoint::new(FrameId::K1, [omega1_minus(0.3, params)?, 0.2, 0.3])?;
    let rep = verify_k1_monotone_eta(&k1, 200.0, params, config)?;
    out.push(InvariantDrift {
        name: "eta1*eps1",
        drift: rep.product_drift,
        samples: rep.trajectory.len(),
    });

    let stop =
        |lim: f64| EventSpec::new(move |s: &FrameState| s.coords()[0] - lim, Direction::Rising);
    let k3 = FrameState::new(FrameId::K3, &[0.05, 0.3, 0.5])?;
    let tr = own_clock_run(k3, 100.0, Some(stop(0.2)), params, config)?;
    out.push(InvariantDrift {
        name: "eta3*eps3",
        drift: drift_along(&tr, |c| c[0] * c[2]),
        samples: tr.len(),
    });

    let layer = params.with_epsilon(0.0)?;
    let theta0 = Params::theta_star() - 0.3;
    let st = FrameState::planar(FrameId::Rescaled, theta0, 0.8 * theta0.sin())?;
    let tr = own_clock_run(st, 20.0, None, &layer, config)?;
    out.push(InvariantDrift {
        name: "layer r/sin(theta)",
        drift: drift_along(&tr, |c| c[1] / c[0].sin()),
        samples: tr.len(),
    });

    let k3e = FrameState::new(FrameId::K3, &[0.1, 0.5, 0.0])?;
    let tr = own_clock_run(k3e, 100.0, Some(stop(0.6)), params, config)?;
    out.push(InvariantDrift {
        name: "K3 eps3=0 orbit invariant",
        drift: drift_along(&tr, |c| k3_eps_plane_invariant(c[0], c[1])),
        samples: tr.len(),
    });
    Ok(out)
}

/// Direct K1 → K3 change read off the blow-down relations:
/// η₃ = η₁ω₁^{1/6}, r₃ = ω₁^{−1/2}, ε₃ = ε₁ω₁^{−1/6}.
pub fn k1_to_k3_direct(c: &[f64; 3]) -> Result<[f64; 3]> {
    let (w, eta, e) = (c[0], c[1], c[2]);
    if w <= 0.0 {
        return Err(Error::SingularTransform(
            "K1 -> K3 requires omega1 > 0".into(),
        ));
    }
    let w6 = w.powf(1.0 / 6.0);
    Ok([eta * w6, 1.0 / w.sqrt(), e / w6])
}

/// Worst relative errors of the chart-consistency checks.
#[derive(Debug, Clone, PartialEq)]
pub struct ChartConsistency {
    pub samples: usize,
    /// T₂₃∘T₁₂ against [`k1_to_k3_direct`].
    pub composition: f64,
    /// blow_down∘T₁₂ against blow_down.
    pub blow_down: f64,
    /// K1 equilibrium curve mapped to K2 against the K2 branches.
    pub equilibria: f64,
}

fn rel_gap(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-300))
        .fold(0.0, f64::max)
}

/// Checks chart-change coherence on `samples` seeded random K1 points.
pub fn chart_consistency(params: &Params, samples: usize, seed: u64) -> Result<ChartConsistency> {
    use crate::frames::chart_change;
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut out = ChartConsistency {
        samples,
        composition: 0.0,
        blow_down: 0.0,
        equilibria: 0.0,
    };
    for _ in 0..samples {
        let p = [
            rng.gen_range(0.01..2.0),
            rng.gen_range(0.0..0.5),
            rng.gen_range(0.05..1.0),
        ];
        let composed = chart_change(
            FrameId::K2,
            FrameId::K3,
            &chart_change(FrameId::K1, FrameId::K2, &p)?,
        )?;
        out.composition = out
            .composition
            .max(rel_gap(&composed, &k1_to_k3_direct(&p)?));
        let q = chart_change(FrameId::K1, FrameId::K2, &p)?;
        let bd = rel_gap(
            &chart_blow_down(FrameId::K1, &p),
            &chart_blow_down(FrameId::K2, &q),
        );
        out.blow_down = out.blow_down.max(bd);

        let w1 = rng.gen_range(0.01..params.a - 0.01);
        let e1 = k1_equilibrium_curve(w1, params)?;
        let [w2, r2, _] = chart_change(FrameId::K1, FrameId::K2, &[w1, 0.0, e1])?;
        let (lo, hi) = k2_equilibrium_branches(r2, params)?;
        let gap = ((w2 - lo).abs().min((w2 - hi).abs())) / w2.abs();
        out.equilibria = out.equilibria.max(gap);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p() -> Params {
        Params::new(0.5, 0.1).unwrap()
    }

    #[test]
    fn blow_down_k2_powers() {
        let q = ChartPoint::new(FrameId::K2, [1.0, 1.0, 0.1]).unwrap();
        let (s, e) = blow_down(&q).unwrap();
        assert!((s.coords()[0] - 1e-6).abs() < 1e-18);
        assert!((s.coords()[1] - 1e-3).abs() < 1e-15);
        assert_eq!(e, 0.1);
        let z = ChartPoint::new(FrameId::K3, [0.0, 3.0, 7.0]).unwrap();
        let (s, e) = blow_down(&z).unwrap();
        assert_eq!((s.coords()[0], s.coords()[1], e), (0.0, 0.0, 0.0));
    }

    #[test]
    fn k1_curve_and_fold() {
        let pr = p();
        assert_eq!(k1_equilibrium_curve(0.0, &pr).unwrap(), 0.0);
        assert!(k1_equilibrium_curve(0.5, &pr).unwrap().abs() < 1e-15);
        assert!(k1_equilibrium_curve(0.6, &pr).is_err());
        let (w, e) = k1_fold(&pr);
        assert_eq!(w, 0.25);
        assert!((e - 0.561231).abs() < 1e-6);
        assert!((k1_equilibrium_curve(w, &pr).unwrap() - e).abs() < 1e-14);
        let wm = omega1_minus(0.3, &pr).unwrap();
        assert!((k1_equilibrium_curve(wm, &pr).unwrap() - 0.3).abs() < 1e-12);
    }

    #[test]
    fn k2_branches_and_fold() {
        let pr = p();
        let (w, r) = k2_fold(&pr);
        assert_eq!(w, 8.0);
        assert!((r - 5.656854249492381).abs() < 1e-14);
        let (lo, hi) = k2_equilibrium_branches(r, &pr).unwrap();
        assert!((lo - hi).abs() < 1e-6 && (lo - 8.0).abs() < 1e-6);
        assert!(matches!(
            k2_equilibrium_branches(5.0, &pr),
            Err(Error::NoRoot(_))
        ));
        let rep = k2_fold_report(&pr);
        assert!(rep.nondegenerate());
        assert!(rep.residual_f.abs() < 1e-12 && rep.residual_f_omega.abs() < 1e-12);
    }

    #[test]
    fn k3_curves_meet_at_e() {
        let c = k3_equilibrium_curves(&p());
        let e = c.e_point();
        assert_eq!(c.eps3_on_eta_plane(e[1]).unwrap(), 0.0);
        assert!((c.r3_on_eps_plane(0.0).unwrap() - e[1]).abs() < 1e-15);
        assert!(c.eps3_on_eta_plane(1.0).is_err());
        let eps = c.eps3_on_eta_plane(1.6).unwrap();
        assert!(c.cubic(1.6, eps).abs() < 1e-10);
        assert!((c.r3_on_eta_plane(eps).unwrap() - 1.6).abs() < 1e-9);
        let x: f64 = 0.3f64.powi(6);
        let direct = ((x.cos() - x.sin()) * (1.0 - x * x / 6.0 + x.powi(4) / 120.0) / 0.5).sqrt();
        assert!((c.r3_on_eps_plane(0.3).unwrap() - direct).abs() < 1e-15);
    }

    #[test]
    fn constants_at_delta_two_tenths() {
        let c = ExitChartConstants::defaults(&p()).unwrap();
        assert!((c.d1 - 0.999936).abs() < 1e-6);
        assert!((c.d2 - 1.000384).abs() < 1e-6);
        assert!(c.d1 <= 1.0 && c.d2 >= 1.0);
        let small = exit_chart_constants(1e-4, 0.0, 1e-4, 0.1, &p()).unwrap();
        assert!((small.c - 0.5).abs() < 1e-12 && (small.c_tilde - 0.5).abs() < 1e-12);
        assert!((small.d - 0.25).abs() < 1e-12 && (small.d_tilde - 0.25).abs() < 1e-9);
        assert!(matches!(
            exit_chart_constants(0.2, 0.1, 0.5, 2.0, &p()),
            Err(Error::Constraint(_))
        ));
    }
}
