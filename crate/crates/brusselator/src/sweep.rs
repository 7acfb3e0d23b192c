//! ε-grid experiments and log-log power-law fits.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::blowup::{exit_image_scaling, exit_radius, ExitChartConstants, EXIT_IMAGE_GRID};
use crate::error::{Error, Result};
use crate::flow::{extract_slow_manifold, fmt17, IntegratorConfig, SlowBranch, Window};
use crate::frames::{transform_state, FrameId, FrameState, Params};
use crate::geometry::{
    hausdorff_distance, hausdorff_semidistance, phi0, phi1, s1_expansion, sigma_curves_rescaled,
    singular_cycle, CurveLabel, CurvePolyline, DEFAULT_SAMPLES, HAUSDORFF_RESAMPLE,
};
use crate::poincare::{
    build_sections, cycle_config, dwell_times, fixed_point_from, fold_deviation, Dwell, LimitCycle,
    SectionOverrides,
};

/// Minimum number of points accepted by [`fit_power_law`].
pub const MIN_FIT_POINTS: usize = 4;

/// Least-squares fit of log(value) = intercept + slope·log(x).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PowerLawFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    /// Residuals of log(value) at each input point, in input order.
    pub residuals: Vec<f64>,
}

impl PowerLawFit {
    /// Value predicted by the fit at `x`.
    pub fn predict(&self, x: f64) -> f64 {
        (self.intercept + self.slope * x.ln()).exp()
    }
}

/// Fits a power law through `(x, value)` pairs on log-log axes.
pub fn fit_power_law(table: &[(f64, f64)]) -> Result<PowerLawFit> {
    if table.len() < MIN_FIT_POINTS {
        return Err(Error::InsufficientData(format!(
            "{} points given, at least {MIN_FIT_POINTS} required",
            table.len()
        )));
    }
    for &(x, v) in table {
        if !(x > 0.0) || !x.is_finite() {
            return Err(Error::NonPositive(x));
        }
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::NonPositive(v));
        }
    }
    let n = table.len() as f64;
    let lx: Vec<f64> = table.iter().map(|p| p.0.ln()).collect();
    let ly: Vec<f64> = table.iter().map(|p| p.1.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ly.iter().map(|y| (y - my).powi(2)).sum();
    if sxx <= 0.0 {
        return Err(Error::InsufficientData("all abscissae coincide".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residuals: Vec<f64> = lx
        .iter()
        .zip(&ly)
        .map(|(x, y)| y - intercept - slope * x)
        .collect();
    let ss_res: f64 = residuals.iter().map(|r| r * r).sum();
    // A constant series is fitted exactly by slope 0.
    let r_squared = if syy <= f64::EPSILON * f64::EPSILON * n {
        1.0
    } else {
        (1.0 - ss_res / syy).clamp(0.0, 1.0)
    };
    Ok(PowerLawFit {
        slope,
        intercept,
        r_squared,
        residuals,
    })
}

/// Default ε grid of the scaling experiments.
pub const DEFAULT_GRID: [f64; 6] = [0.02, 0.03, 0.05, 0.07, 0.1, 0.15];

/// Grid of the Hausdorff convergence experiment, in decreasing ε.
pub const HAUSDORFF_GRID: [f64; 3] = [0.1, 0.05, 0.025];

/// Largest ε for which the section layout is known to hold.
pub const EPS_MAX: f64 = 0.2;

/// Radius at which the S1 offset is measured.
pub const S1_PROBE_RADIUS: f64 = 0.4;

/// ε values of the S1 offset check.
pub const S1_PROBE_EPS: [f64; 2] = [0.05, 0.1];

/// Fixed r₃,₀ of the exit-image experiment.
pub const EXIT_IMAGE_R0: f64 = 0.2;

/// Distance of the S2 residual window from the fold and from π/2.
const S2_WINDOW_MARGIN: f64 = 0.2;

/// Clock in which a dwell time is read.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum DwellClock {
    T,
    T2,
}

/// Quantity measured per grid point.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Quantity {
    RhoEps,
    Dwell {
        branch: u8,
        clock: DwellClock,
    },
    SlowManifoldResidual(SlowBranch),
    FoldDeviation,
    /// Exit radius of the K3 passage; the grid holds η₃,₀ instead of ε.
    ExitImage,
}

impl fmt::Display for Quantity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Quantity::RhoEps => write!(f, "rho_eps"),
            Quantity::Dwell { branch, clock } => {
                let c = match clock {
                    DwellClock::T => "t",
                    DwellClock::T2 => "t2",
                };
                write!(f, "dwell_sigma{branch}_{c}")
            }
            Quantity::SlowManifoldResidual(SlowBranch::S1) => write!(f, "s1_residual"),
            Quantity::SlowManifoldResidual(SlowBranch::S2) => write!(f, "s2_residual"),
            Quantity::FoldDeviation => write!(f, "fold_deviation"),
            Quantity::ExitImage => write!(f, "exit_image"),
        }
    }
}

impl FromStr for Quantity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let q = match s {
            "rho_eps" => Quantity::RhoEps,
            "s1_residual" => Quantity::SlowManifoldResidual(SlowBranch::S1),
            "s2_residual" => Quantity::SlowManifoldResidual(SlowBranch::S2),
            "fold_deviation" => Quantity::FoldDeviation,
            "exit_image" => Quantity::ExitImage,
            other => {
                let rest = other
                    .strip_prefix("dwell_sigma")
                    .ok_or_else(|| Error::InvalidInput(format!("unknown quantity '{other}'")))?;
                let (b, c) = rest
                    .split_once('_')
                    .ok_or_else(|| Error::InvalidInput(format!("unknown quantity '{other}'")))?;
                let branch: u8 = b
                    .parse()
                    .ok()
                    .filter(|b| (1..=4).contains(b))
                    .ok_or_else(|| Error::InvalidInput(format!("unknown branch in '{other}'")))?;
                let clock = match c {
                    "t" => DwellClock::T,
                    "t2" => DwellClock::T2,
                    _ => return Err(Error::InvalidInput(format!("unknown clock in '{other}'"))),
                };
                Quantity::Dwell { branch, clock }
            }
        };
        Ok(q)
    }
}

impl Quantity {
    /// Every selectable quantity, in a fixed order.
    pub fn all() -> Vec<Quantity> {
        let mut v = vec![Quantity::RhoEps];
        for clock in [DwellClock::T, DwellClock::T2] {
            for branch in 1..=4 {
                v.push(Quantity::Dwell { branch, clock });
            }
        }
        v.extend([
            Quantity::SlowManifoldResidual(SlowBranch::S1),
            Quantity::SlowManifoldResidual(SlowBranch::S2),
            Quantity::FoldDeviation,
            Quantity::ExitImage,
        ]);
        v
    }

    fn uses_cycle(&self) -> bool {
        matches!(
            self,
            Quantity::RhoEps | Quantity::Dwell { .. } | Quantity::FoldDeviation
        )
    }

    fn default_grid(&self) -> Vec<f64> {
        match self {
            Quantity::ExitImage => EXIT_IMAGE_GRID.to_vec(),
            _ => DEFAULT_GRID.to_vec(),
        }
    }
}

/// An ε-grid experiment.
#[derive(Clone, Debug)]
pub struct SweepPlan {
    pub base: Params,
    pub grid: Vec<f64>,
    pub quantity: Quantity,
    pub config: IntegratorConfig,
}

impl SweepPlan {
    /// Plan over the quantity's default grid with the cycle tolerances.
    pub fn new(base: Params, quantity: Quantity) -> Self {
        Self {
            base,
            grid: quantity.default_grid(),
            quantity,
            config: cycle_config(),
        }
    }

    pub fn with_grid(mut self, grid: Vec<f64>) -> Self {
        self.grid = grid;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid.is_empty() {
            return Err(Error::InvalidInput("empty grid".into()));
        }
        if self.grid.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidInput(
                "grid must be strictly increasing".into(),
            ));
        }
        let hi = match self.quantity {
            Quantity::ExitImage => ExitChartConstants::defaults(&self.base)?.delta,
            _ => EPS_MAX,
        };
        if let Some(&x) = self.grid.iter().find(|&&x| !(x > 0.0 && x <= hi)) {
            return Err(Error::InvalidInput(format!(
                "grid value {x} outside (0, {hi}]"
            )));
        }
        self.config.validate()
    }
}

/// One grid point of a sweep.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub epsilon: f64,
    pub value: Option<f64>,
    /// "ok" or the error that stopped this grid point.
    pub status: String,
}

/// Results of [`run_sweep`], in grid order.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepTable {
    pub quantity: Quantity,
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    /// Grid points that produced a value.
    pub fn valid(&self) -> Vec<(f64, f64)> {
        self.rows
            .iter()
            .filter_map(|r| r.value.map(|v| (r.epsilon, v)))
            .collect()
    }

    pub fn fit(&self) -> Result<PowerLawFit> {
        fit_power_law(&self.valid())
    }

    /// Largest over smallest valid value.
    pub fn max_min_ratio(&self) -> Result<f64> {
        let v = self.valid();
        if v.is_empty() {
            return Err(Error::InsufficientData("no valid values".into()));
        }
        let (lo, hi) = v.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), p| {
            (lo.min(p.1), hi.max(p.1))
        });
        if !(lo > 0.0) {
            return Err(Error::NonPositive(lo));
        }
        Ok(hi / lo)
    }

    /// CSV with columns epsilon, value, status.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["epsilon", "value", "status"])?;
        for r in &self.rows {
            let v = r.value.map_or_else(|| "NaN".to_string(), fmt17);
            w.write_record([fmt17(r.epsilon), v, r.status.clone()])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_json(&self) -> Value {
        json!({
            "quantity": self.quantity.to_string(),
            "rows": self.rows.iter().map(|r| json!({
                "epsilon": r.epsilon, "value": r.value, "status": r.status,
            })).collect::<Vec<_>>(),
        })
    }
}

/// Everything read off one limit cycle.
#[derive(Clone, Debug)]
pub struct CycleMeasurement {
    pub epsilon: f64,
    pub rho_eps: f64,
    pub dwell: Vec<Dwell>,
    pub fold_deviation: f64,
}

/// Computes the limit cycle at `params` and the quantities derived from it.
pub fn measure_cycle(
    params: &Params,
    config: &IntegratorConfig,
) -> Result<(LimitCycle, CycleMeasurement)> {
    let sections = build_sections(params, &SectionOverrides::default())?;
    let cycle = fixed_point_from(&sections, 0.5 * sections.constants.beta1, params, config)?;
    let m = CycleMeasurement {
        epsilon: params.epsilon,
        rho_eps: cycle.rho_eps,
        dwell: dwell_times(&cycle)?,
        fold_deviation: fold_deviation(&sections, &cycle, config)?,
    };
    Ok((cycle, m))
}

fn dwell_value(m: &CycleMeasurement, branch: u8, clock: DwellClock) -> Result<f64> {
    let d = m
        .dwell
        .iter()
        .find(|d| d.branch == branch)
        .ok_or_else(|| Error::InsufficientData(format!("no dwell for branch {branch}")))?;
    Ok(match clock {
        DwellClock::T => d.t,
        DwellClock::T2 => d.t2,
    })
}

/// Window of the S2 residual: [θ* + 0.2, π/2 − 0.2].
pub fn s2_residual_window() -> Window {
    Window {
        lo: Params::theta_star() + S2_WINDOW_MARGIN,
        hi: FRAC_PI_2 - S2_WINDOW_MARGIN,
    }
}

/// max |r − φ₀ − εφ₁| over the S2 window along the extracted slow manifold.
pub fn s2_residual(params: &Params, config: &IntegratorConfig) -> Result<f64> {
    let w = s2_residual_window();
    let curve = extract_slow_manifold(SlowBranch::S2, w, params, config)?;
    let mut worst: f64 = 0.0;
    let mut seen = 0usize;
    for p in curve.points.iter().filter(|p| p[0] >= w.lo && p[0] <= w.hi) {
        let model = phi0(p[0], params)? + params.epsilon * phi1(p[0], params)?;
        worst = worst.max((p[1] - model).abs());
        seen += 1;
    }
    if seen == 0 {
        return Err(Error::InsufficientData(
            "no S2 samples inside the window".into(),
        ));
    }
    Ok(worst)
}

/// Measured and predicted θ − π/4 of the S1 slow manifold at radius `r`.
pub fn s1_offset(params: &Params, r: f64, config: &IntegratorConfig) -> Result<(f64, f64)> {
    let w = Window {
        lo: (r - 0.2).max(0.1),
        hi: r + 0.2,
    };
    let curve = extract_slow_manifold(SlowBranch::S1, w, params, config)?;
    let theta = interpolate_theta_at_r(&curve, r)?;
    Ok((theta - FRAC_PI_4, s1_expansion(r, params) - FRAC_PI_4))
}

/// |θ_num(r) − π/4 − ε^{3/2}r/√2| at r = [`S1_PROBE_RADIUS`].
pub fn s1_residual(params: &Params, config: &IntegratorConfig) -> Result<f64> {
    let (m, p) = s1_offset(params, S1_PROBE_RADIUS, config)?;
    Ok((m - p).abs())
}

/// Linear interpolation of θ at radius `r` along a polyline monotone in r.
fn interpolate_theta_at_r(curve: &CurvePolyline, r: f64) -> Result<f64> {
    for w in curve.points.windows(2) {
        let (a, b) = (w[0], w[1]);
        if (a[1] - r) * (b[1] - r) <= 0.0 && a[1] != b[1] {
            let s = (r - a[1]) / (b[1] - a[1]);
            return Ok(a[0] + s * (b[0] - a[0]));
        }
    }
    Err(Error::NoIntersection(format!(
        "curve does not reach r = {r}"
    )))
}

fn measure_point(q: Quantity, x: f64, base: &Params, config: &IntegratorConfig) -> Result<f64> {
    if q == Quantity::ExitImage {
        let c = ExitChartConstants::defaults(base)?;
        return exit_radius(x, EXIT_IMAGE_R0, &c, base, &IntegratorConfig::default());
    }
    let params = base.with_epsilon(x)?;
    if q.uses_cycle() {
        let (_, m) = measure_cycle(&params, config)?;
        return match q {
            Quantity::RhoEps => Ok(m.rho_eps),
            Quantity::Dwell { branch, clock } => dwell_value(&m, branch, clock),
            _ => Ok(m.fold_deviation),
        };
    }
    match q {
        Quantity::SlowManifoldResidual(SlowBranch::S2) => s2_residual(&params, config),
        Quantity::SlowManifoldResidual(SlowBranch::S1) => s1_residual(&params, config),
        _ => unreachable!("cycle quantities handled above"),
    }
}

fn row(x: f64, r: Result<f64>) -> SweepRow {
    match r {
        Ok(v) => SweepRow {
            epsilon: x,
            value: Some(v),
            status: "ok".into(),
        },
        Err(e) => SweepRow {
            epsilon: x,
            value: None,
            status: e.to_string(),
        },
    }
}

/// Runs the plan's pipeline independently at every grid point. Failures are
/// recorded per row; the rows keep grid order whatever the scheduling.
pub fn run_sweep(plan: &SweepPlan) -> Result<SweepTable> {
    plan.validate()?;
    let rows = plan
        .grid
        .par_iter()
        .map(|&x| row(x, measure_point(plan.quantity, x, &plan.base, &plan.config)))
        .collect();
    Ok(SweepTable {
        quantity: plan.quantity,
        rows,
    })
}

/// How a check turns its data into a number.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckKind {
    Slope,
    Ratio,
    RelativeError,
}

/// One tolerance-band check of the scaling report.
#[derive(Clone, Debug, Serialize)]
pub struct ScalingCheck {
    pub name: String,
    pub kind: CheckKind,
    pub value: Option<f64>,
    pub lo: f64,
    pub hi: f64,
    pub r_squared: Option<f64>,
    pub min_r_squared: Option<f64>,
    pub pass: bool,
    pub table: Vec<(f64, f64)>,
    pub note: String,
}

impl ScalingCheck {
    fn band(name: &str, kind: CheckKind, lo: f64, hi: f64) -> Self {
        Self {
            name: name.into(),
            kind,
            value: None,
            lo,
            hi,
            r_squared: None,
            min_r_squared: None,
            pass: false,
            table: Vec::new(),
            note: String::new(),
        }
    }

    fn judge(mut self, value: Result<f64>, r2: Option<f64>) -> Self {
        match value {
            Ok(v) => {
                self.value = Some(v);
                self.r_squared = r2;
                let r2_ok = match (self.min_r_squared, r2) {
                    (Some(m), Some(r)) => r >= m,
                    (Some(_), None) => false,
                    _ => true,
                };
                self.pass = v >= self.lo && v <= self.hi && r2_ok;
            }
            Err(e) => self.note = e.to_string(),
        }
        self
    }

    fn slope(self, table: Vec<(f64, f64)>) -> Self {
        let fit = fit_power_law(&table);
        let r2 = fit.as_ref().ok().map(|f| f.r_squared);
        let mut c = self.judge(fit.map(|f| f.slope), r2);
        c.table = table;
        c
    }

    fn ratio(self, table: Vec<(f64, f64)>) -> Self {
        let v = if table.is_empty() {
            Err(Error::InsufficientData("no values".into()))
        } else {
            let lo = table.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
            let hi = table.iter().map(|p| p.1).fold(0.0, f64::max);
            if lo > 0.0 {
                Ok(hi / lo)
            } else {
                Err(Error::NonPositive(lo))
            }
        };
        let mut c = self.judge(v, None);
        c.table = table;
        c
    }
}

/// Machine-readable result of [`scaling_report`].
#[derive(Clone, Debug)]
pub struct ScalingReport {
    pub params: Params,
    pub grid: Vec<f64>,
    pub checks: Vec<ScalingCheck>,
    /// Grid points whose pipeline failed, with the error.
    pub failures: Vec<(f64, String)>,
}

impl ScalingReport {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn check(&self, name: &str) -> Option<&ScalingCheck> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn to_json(&self) -> Value {
        json!({
            "params": {"a": self.params.a},
            "grid": self.grid,
            "checks": self.checks.iter().map(|c| json!({
                "name": c.name,
                "kind": c.kind,
                "value": c.value,
                "band": [c.lo, c.hi],
                "r_squared": c.r_squared,
                "min_r_squared": c.min_r_squared,
                "pass": c.pass,
                "table": c.table,
                "note": c.note,
            })).collect::<Vec<_>>(),
            "failures": self.failures.iter().map(|(e, m)| json!({"epsilon": e, "error": m})).collect::<Vec<_>>(),
            "all_pass": self.all_pass(),
            "bands_note": "tolerance bands are engineering choices for asymptotic orders with unstated constants",
        })
    }
}

/// Dwell checks: (branch, clock, band kind, lo, hi).
const DWELL_BANDS: [(u8, DwellClock, CheckKind, f64, f64); 8] = [
    (1, DwellClock::T, CheckKind::Slope, 2.6, 3.4),
    (2, DwellClock::T, CheckKind::Slope, -1.25, -0.75),
    (3, DwellClock::T, CheckKind::Ratio, 0.0, 3.0),
    (4, DwellClock::T, CheckKind::Slope, -1.75, -1.25),
    (1, DwellClock::T2, CheckKind::Ratio, 0.0, 3.0),
    (2, DwellClock::T2, CheckKind::Slope, -1.25, -0.75),
    (3, DwellClock::T2, CheckKind::Ratio, 0.0, 3.0),
    (4, DwellClock::T2, CheckKind::Slope, -1.75, -1.25),
];

/// Runs every scaling experiment on `grid` and grades it against its band.
pub fn scaling_report(
    params: &Params,
    grid: &[f64],
    config: &IntegratorConfig,
) -> Result<ScalingReport> {
    let plan = SweepPlan {
        base: *params,
        grid: grid.to_vec(),
        quantity: Quantity::RhoEps,
        config: *config,
    };
    plan.validate()?;
    let per_eps: Vec<(f64, Result<CycleMeasurement>, Result<f64>)> = grid
        .par_iter()
        .map(|&e| {
            let p = params.with_epsilon(e);
            let cyc = p
                .clone()
                .and_then(|p| measure_cycle(&p, config).map(|x| x.1));
            let s2 = p.and_then(|p| s2_residual(&p, config));
            (e, cyc, s2)
        })
        .collect();
    let mut failures = Vec::new();
    let mut cycles = Vec::new();
    let mut s2 = Vec::new();
    for (e, c, r) in per_eps {
        match c {
            Ok(m) => cycles.push(m),
            Err(err) => failures.push((e, format!("cycle: {err}"))),
        }
        match r {
            Ok(v) => s2.push((e, v)),
            Err(err) => failures.push((e, format!("s2 residual: {err}"))),
        }
    }
    let mut checks = Vec::new();
    let mut rho = ScalingCheck::band("rho_eps", CheckKind::Slope, 1.35, 1.65);
    rho.min_r_squared = Some(0.98);
    checks.push(rho.slope(cycles.iter().map(|m| (m.epsilon, m.rho_eps)).collect()));
    for (b, clock, kind, lo, hi) in DWELL_BANDS {
        let q = Quantity::Dwell { branch: b, clock };
        let table: Vec<(f64, f64)> = cycles
            .iter()
            .filter_map(|m| dwell_value(m, b, clock).ok().map(|v| (m.epsilon, v)))
            .collect();
        let c = ScalingCheck::band(&q.to_string(), kind, lo, hi);
        checks.push(match kind {
            CheckKind::Ratio => c.ratio(table),
            _ => c.slope(table),
        });
    }
    checks.push(ScalingCheck::band("s2_residual", CheckKind::Slope, 1.25, f64::INFINITY).slope(s2));
    for &e in &S1_PROBE_EPS {
        let name = format!("s1_offset_eps_{e}");
        let c = ScalingCheck::band(&name, CheckKind::RelativeError, 0.0, 0.25);
        let r = params
            .with_epsilon(e)
            .and_then(|p| s1_offset(&p, S1_PROBE_RADIUS, config));
        let pair = r.as_ref().ok().copied();
        let mut c = c.judge(r.map(|(m, p)| ((m - p) / p).abs()), None);
        c.table = pair.into_iter().collect();
        checks.push(c);
    }
    checks.push(
        ScalingCheck::band("fold_deviation", CheckKind::Slope, 0.5, 0.85).slope(
            cycles
                .iter()
                .map(|m| (m.epsilon, m.fold_deviation))
                .collect(),
        ),
    );
    let exit = ExitChartConstants::defaults(params).and_then(|c| {
        exit_image_scaling(
            EXIT_IMAGE_R0,
            &EXIT_IMAGE_GRID,
            &c,
            params,
            &IntegratorConfig::default(),
        )
    });
    let mut c = ScalingCheck::band("exit_image", CheckKind::Slope, 2.7, 3.3);
    c = match exit {
        Ok((_, table)) => c.slope(table),
        Err(e) => c.judge(Err(e), None),
    };
    checks.push(c);
    Ok(ScalingReport {
        params: *params,
        grid: grid.to_vec(),
        checks,
        failures,
    })
}

/// Hausdorff distances of the limit cycle at one ε.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HausdorffRow {
    pub epsilon: f64,
    /// d_H between the cycle and the singular cycle σ̂ (RESCALED frame).
    pub singular: f64,
    /// Semidistance from the σ̄₂ ∪ σ̄₃ ∪ σ̄₄ set to the cycle in √ε-scaled
    /// XYFAST coordinates.
    pub rescaled: f64,
}

/// The cycle in XYFAST coordinates multiplied by √ε, the frame of σ̄ᵢ.
pub fn rescaled_cycle_polyline(cycle: &LimitCycle) -> Result<CurvePolyline> {
    let p = &cycle.params;
    let s = p.eps_prime();
    let pts = cycle
        .polyline
        .points
        .iter()
        .map(|q| {
            let st = transform_state(
                &FrameState::planar(FrameId::Rescaled, q[0], q[1])?,
                FrameId::XyFast,
                p,
            )?;
            Ok([s * st.coords()[0], s * st.coords()[1]])
        })
        .collect::<Result<Vec<_>>>()?;
    CurvePolyline::new(
        pts,
        FrameId::XyFast,
        CurveLabel::Custom("cycle_rescaled".into()),
    )
}

/// Measures both Hausdorff distances at each ε of `grid`.
pub fn hausdorff_convergence(
    params: &Params,
    grid: &[f64],
    config: &IntegratorConfig,
) -> Result<Vec<HausdorffRow>> {
    grid.par_iter()
        .map(|&e| {
            let p = params.with_epsilon(e)?;
            let (cycle, _) = measure_cycle(&p, config)?;
            let sc = singular_cycle(&p, DEFAULT_SAMPLES)?.as_polyline()?;
            let singular = hausdorff_distance(&cycle.polyline, &sc)?;
            let bars = sigma_curves_rescaled(&p, cycle.rho_eps, DEFAULT_SAMPLES)?;
            // The pieces are compared one by one; joining them would add
            // connecting segments that belong to no σ̄ᵢ.
            let scaled = rescaled_cycle_polyline(&cycle)?;
            let rescaled = bars[1..].iter().try_fold(0.0f64, |m, b| {
                Ok::<f64, Error>(m.max(hausdorff_semidistance(b, &scaled, HAUSDORFF_RESAMPLE)?))
            })?;
            Ok(HausdorffRow {
                epsilon: e,
                singular,
                rescaled,
            })
        })
        .collect()
}
