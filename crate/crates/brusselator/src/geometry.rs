//! Closed-form geometry: critical manifolds, fast fibers, the singular cycle,
//! the σ curves in original and rescaled coordinates, slow-manifold
//! expansions and a polyline Hausdorff distance.

use std::f64::consts::{FRAC_1_SQRT_2, FRAC_PI_2, FRAC_PI_4, SQRT_2};
use std::fmt;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frames::{sin_minus_cos, FrameId, Params};

/// Half-width of the window around θ* excluded by singular evaluations.
pub const FOLD_GUARD: f64 = 1e-6;

/// σ₂ is sampled on [θ*, π/2 - SIGMA2_TRUNCATION]; its y-coordinate diverges at π/2.
pub const SIGMA2_TRUNCATION: f64 = 0.02;

/// Default number of samples per branch.
pub const DEFAULT_SAMPLES: usize = 512;

/// Default resampling density of [`hausdorff_distance`].
pub const HAUSDORFF_RESAMPLE: usize = 4096;

/// cos θ evaluated as sin(π/2 - θ), exactly zero at θ = π/2.
#[inline]
fn cos_q(theta: f64) -> f64 {
    (FRAC_PI_2 - theta).sin()
}

fn check_quarter(theta: f64) -> Result<()> {
    if !(FRAC_PI_4..=FRAC_PI_2).contains(&theta) {
        return Err(Error::Domain {
            frame: "RESCALED",
            reason: format!("theta = {theta} outside [pi/4, pi/2]"),
        });
    }
    Ok(())
}

fn fold_guard(theta: f64, what: &str) -> Result<()> {
    if (theta - Params::theta_star()).abs() <= FOLD_GUARD {
        return Err(Error::Singularity(format!(
            "{what} is singular at theta = arctan 2"
        )));
    }
    Ok(())
}

/// Graph φ₀ of the critical manifold S₀².
pub fn phi0(theta: f64, params: &Params) -> Result<f64> {
    check_quarter(theta)?;
    let q = cos_q(theta) * sin_minus_cos(theta);
    Ok((q.max(0.0) / params.a).sqrt())
}

/// Derivative of φ₀; infinite at the endpoints where φ₀ vanishes.
pub fn phi0_prime(theta: f64, params: &Params) -> Result<f64> {
    let p0 = phi0(theta, params)?;
    let (s, c) = (theta.sin(), cos_q(theta));
    let dq = -s * sin_minus_cos(theta) + c * (s + c);
    Ok(dq / (2.0 * params.a * p0))
}

/// First-order correction φ₁ of the slow manifold S²_ε = φ₀ + εφ₁ + o(ε).
pub fn phi1(theta: f64, params: &Params) -> Result<f64> {
    check_quarter(theta)?;
    fold_guard(theta, "phi1")?;
    let c = cos_q(theta);
    let den = 2.0 * params.a * (2.0 * c - theta.sin());
    Ok(-phi0(theta, params)? * c / den)
}

/// Two-term approximation θ_ε(r) of the slow manifold S¹_ε.
pub fn s1_expansion(r: f64, params: &Params) -> f64 {
    FRAC_PI_4 + params.epsilon.powf(1.5) * r * FRAC_1_SQRT_2
}

/// Fast fiber r = ρ sin θ of the layer problem.
pub fn fast_fiber(rho: f64, theta: f64) -> f64 {
    rho * theta.sin()
}

/// Angles at which the fiber of constant ρ meets S₀², sorted ascending.
pub fn fiber_manifold_intersections(rho: f64, params: &Params) -> Result<Vec<f64>> {
    if !(rho > 0.0) {
        return Err(Error::InvalidInput(format!(
            "rho must be positive, got {rho}"
        )));
    }
    let a = params.a;
    let q = a * rho * rho;
    let disc = 1.0 - 4.0 * q;
    if disc < -1e-12 {
        return Err(Error::NoIntersection(format!(
            "fiber rho = {rho} lies above the tangent fiber rho* = {}",
            params.rho_star()
        )));
    }
    if disc.abs() <= 1e-12 {
        return Ok(vec![(1.0 / (2.0 * q)).atan()]);
    }
    let sq = disc.sqrt();
    // Numerically stable pair of roots of q t² - t + 1 = 0.
    let t_plus = (1.0 + sq) / (2.0 * q);
    let t_minus = 1.0 / (q * t_plus);
    Ok(vec![t_minus.atan(), t_plus.atan()])
}

/// Reduced flow on S₀² in the slow clock τ₂.
pub fn reduced_flow_s2(theta: f64, params: &Params) -> Result<f64> {
    check_quarter(theta)?;
    fold_guard(theta, "reduced flow")?;
    let p0 = phi0(theta, params)?;
    let c = cos_q(theta);
    let d = sin_minus_cos(theta);
    Ok(2.0 * p0 * p0 * c * d * d / (2.0 * c - theta.sin()))
}

/// Branch tag of a polyline.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CurveLabel {
    /// σᵢ in XYFAST coordinates.
    Sigma(u8),
    /// σ̂ᵢ of the singular cycle in RESCALED coordinates.
    SigmaHat(u8),
    /// σ̄ᵢ = √ε σᵢ, the ε-independent rescaled curves.
    SigmaBar(u8),
    Custom(String),
}

impl fmt::Display for CurveLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CurveLabel::Sigma(i) => write!(f, "sigma{i}"),
            CurveLabel::SigmaHat(i) => write!(f, "sigma_hat{i}"),
            CurveLabel::SigmaBar(i) => write!(f, "sigma_bar{i}"),
            CurveLabel::Custom(s) => f.write_str(s),
        }
    }
}

/// An ordered list of planar points tagged with a frame and a branch label.
///
/// Rescaled σ̄ curves are tagged XYFAST; their coordinates are the
/// √ε-scaled XYFAST coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePolyline {
    pub points: Vec<[f64; 2]>,
    pub frame: FrameId,
    pub label: CurveLabel,
}

impl CurvePolyline {
    pub fn new(points: Vec<[f64; 2]>, frame: FrameId, label: CurveLabel) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::InvalidInput(
                "a polyline needs at least two points".into(),
            ));
        }
        if points.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidInput(
                "consecutive polyline points coincide".into(),
            ));
        }
        if points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite polyline point".into()));
        }
        Ok(Self {
            points,
            frame,
            label,
        })
    }

    pub fn first(&self) -> [f64; 2] {
        self.points[0]
    }

    pub fn last(&self) -> [f64; 2] {
        *self.points.last().expect("at least two points")
    }

    /// Cumulative arclength at every vertex.
    pub fn arclength(&self) -> Vec<f64> {
        let mut s = Vec::with_capacity(self.points.len());
        let mut acc = 0.0;
        s.push(0.0);
        for w in self.points.windows(2) {
            acc += dist(w[0], w[1]);
            s.push(acc);
        }
        s
    }

    /// `n` points equally spaced in arclength (n ≥ 2).
    pub fn resample(&self, n: usize) -> Vec<[f64; 2]> {
        let s = self.arclength();
        let total = *s.last().expect("nonempty");
        let mut out = Vec::with_capacity(n);
        let mut seg = 0;
        for i in 0..n {
            let target = total * i as f64 / (n - 1) as f64;
            while seg + 2 < s.len() && s[seg + 1] < target {
                seg += 1;
            }
            let len = s[seg + 1] - s[seg];
            let u = if len > 0.0 {
                ((target - s[seg]) / len).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let (p, q) = (self.points[seg], self.points[seg + 1]);
            out.push([p[0] + u * (q[0] - p[0]), p[1] + u * (q[1] - p[1])]);
        }
        out
    }

    /// Writes rows (s, coord1, coord2, label) with s the cumulative arclength.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_polylines_csv(std::slice::from_ref(self), path)
    }
}

/// Writes several polylines into one CSV file with columns s, coord1, coord2, label.
pub fn write_polylines_csv(curves: &[CurvePolyline], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["s", "coord1", "coord2", "label"])?;
    for c in curves {
        let label = c.label.to_string();
        for (s, p) in c.arclength().iter().zip(&c.points) {
            w.write_record([
                crate::flow::fmt17(*s),
                crate::flow::fmt17(p[0]),
                crate::flow::fmt17(p[1]),
                label.clone(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[inline]
fn dist(p: [f64; 2], q: [f64; 2]) -> f64 {
    (p[0] - q[0]).hypot(p[1] - q[1])
}

fn point_segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let l2 = dx * dx + dy * dy;
    if l2 == 0.0 {
        return dist(p, a);
    }
    let u = (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / l2).clamp(0.0, 1.0);
    dist(p, [a[0] + u * dx, a[1] + u * dy])
}

/// One-sided Hausdorff semidistance sup_{a∈A} d(a, B) over a resampling of A
/// against the segments of a resampling of B.
pub fn hausdorff_semidistance(
    a: &CurvePolyline,
    b: &CurvePolyline,
    resample: usize,
) -> Result<f64> {
    if a.frame != b.frame {
        return Err(Error::FrameMismatch(a.frame.name(), b.frame.name()));
    }
    let pa = a.resample(resample.max(2));
    let pb = b.resample(resample.max(2));
    let mut worst: f64 = 0.0;
    for p in &pa {
        let mut best = f64::INFINITY;
        for w in pb.windows(2) {
            best = best.min(point_segment_distance(*p, w[0], w[1]));
            if best <= worst {
                break;
            }
        }
        worst = worst.max(best);
    }
    Ok(worst)
}

/// Symmetric Hausdorff distance with the default resampling density.
pub fn hausdorff_distance(a: &CurvePolyline, b: &CurvePolyline) -> Result<f64> {
    Ok(
        hausdorff_semidistance(a, b, HAUSDORFF_RESAMPLE)?.max(hausdorff_semidistance(
            b,
            a,
            HAUSDORFF_RESAMPLE,
        )?),
    )
}

/// Concatenates polylines (same frame) into one, dropping duplicate joints.
pub fn concat(curves: &[CurvePolyline], label: CurveLabel) -> Result<CurvePolyline> {
    let frame = curves
        .first()
        .ok_or_else(|| Error::InvalidInput("nothing to concatenate".into()))?
        .frame;
    let mut pts: Vec<[f64; 2]> = Vec::new();
    for c in curves {
        if c.frame != frame {
            return Err(Error::FrameMismatch(c.frame.name(), frame.name()));
        }
        for p in &c.points {
            if pts.last() != Some(p) {
                pts.push(*p);
            }
        }
    }
    CurvePolyline::new(pts, frame, label)
}

fn linspace(a: f64, b: f64, n: usize) -> impl Iterator<Item = f64> {
    (0..n).map(move |i| {
        if i + 1 == n {
            b
        } else {
            a + (b - a) * i as f64 / (n - 1) as f64
        }
    })
}

/// The singular cycle σ̂ = σ̂₁ ∪ σ̂₂ ∪ σ̂₃ ∪ σ̂₄ in RESCALED coordinates.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SingularCycle {
    pub branches: [CurvePolyline; 4],
    pub p0: [f64; 2],
    pub p1: [f64; 2],
    pub fold: [f64; 2],
    pub drop: [f64; 2],
}

impl SingularCycle {
    /// The whole cycle as one closed polyline P₀ → P₁ → F → Q → P₀.
    pub fn as_polyline(&self) -> Result<CurvePolyline> {
        concat(&self.branches, CurveLabel::Custom("singular_cycle".into()))
    }
}

/// Builds the singular cycle with `samples` points per branch.
pub fn singular_cycle(params: &Params, samples: usize) -> Result<SingularCycle> {
    if samples < 2 {
        return Err(Error::InvalidInput(
            "samples_per_branch must be at least 2".into(),
        ));
    }
    let ts = Params::theta_star();
    let rho = params.rho_star();
    let rq = params.drop_radius();
    let r_fold = params.r_star();
    let s1: Vec<[f64; 2]> = linspace(FRAC_PI_4, FRAC_PI_2, samples)
        .map(|t| [t, 0.0])
        .collect();
    let mut s2 = Vec::with_capacity(samples);
    for t in linspace(FRAC_PI_2, ts, samples) {
        s2.push([t, phi0(t, params)?]);
    }
    // Pin the fold end to the closed-form F so the chain closes exactly.
    *s2.last_mut().expect("samples >= 2") = [ts, r_fold];
    let mut s3: Vec<[f64; 2]> = linspace(ts, FRAC_PI_4, samples)
        .map(|t| [t, fast_fiber(rho, t)])
        .collect();
    s3[0] = [ts, r_fold];
    *s3.last_mut().expect("samples >= 2") = [FRAC_PI_4, rq];
    let s4: Vec<[f64; 2]> = linspace(rq, 0.0, samples).map(|r| [FRAC_PI_4, r]).collect();
    let mk = |pts, i| CurvePolyline::new(pts, FrameId::Rescaled, CurveLabel::SigmaHat(i));
    Ok(SingularCycle {
        branches: [mk(s1, 1)?, mk(s2, 2)?, mk(s3, 3)?, mk(s4, 4)?],
        p0: [FRAC_PI_4, 0.0],
        p1: [FRAC_PI_2, 0.0],
        fold: [ts, r_fold],
        drop: [FRAC_PI_4, rq],
    })
}

/// The four curves σ₁..σ₄ in XYFAST coordinates for a measured ρ_ε.
pub fn sigma_curves(params: &Params, rho_eps: f64, samples: usize) -> Result<[CurvePolyline; 4]> {
    let k = 1.0 / params.eps_prime();
    sigma_family(params, rho_eps, samples, k, false)
}

/// The rescaled curves σ̄ᵢ = √ε σᵢ.
pub fn sigma_curves_rescaled(
    params: &Params,
    rho_eps: f64,
    samples: usize,
) -> Result<[CurvePolyline; 4]> {
    sigma_family(params, rho_eps, samples, 1.0, true)
}

fn sigma_family(
    params: &Params,
    rho_eps: f64,
    samples: usize,
    k: f64,
    bar: bool,
) -> Result<[CurvePolyline; 4]> {
    if !(rho_eps > 0.0) {
        return Err(Error::InvalidInput("rho_eps must be positive".into()));
    }
    if params.epsilon <= 0.0 {
        return Err(Error::InvalidParams("sigma curves need epsilon > 0".into()));
    }
    if samples < 2 {
        return Err(Error::InvalidInput("samples must be at least 2".into()));
    }
    let a = params.a;
    let ts = Params::theta_star();
    let sa = a.sqrt();
    let s1: Vec<[f64; 2]> = linspace(FRAC_PI_4, FRAC_PI_2, samples)
        .map(|t| [k * cos_q(t) / (rho_eps * t.sin()), k / rho_eps])
        .collect();
    let s2: Vec<[f64; 2]> = linspace(ts, FRAC_PI_2 - SIGMA2_TRUNCATION, samples)
        .map(|t| {
            let (s, c, d) = (t.sin(), cos_q(t), sin_minus_cos(t));
            [k * (a * c / d).sqrt(), k * (a * s * s / (c * d)).sqrt()]
        })
        .collect();
    let s3: Vec<[f64; 2]> = linspace(FRAC_PI_4, ts, samples)
        .map(|t| [k * 2.0 * sa * cos_q(t) / t.sin(), k * 2.0 * sa])
        .collect();
    let s4: Vec<[f64; 2]> = linspace(rho_eps, params.drop_radius(), samples)
        .map(|r| {
            let v = k * FRAC_1_SQRT_2 / r;
            [v, v]
        })
        .collect();
    let label = |i| {
        if bar {
            CurveLabel::SigmaBar(i)
        } else {
            CurveLabel::Sigma(i)
        }
    };
    let mk = |pts, i| CurvePolyline::new(pts, FrameId::XyFast, label(i));
    Ok([mk(s1, 1)?, mk(s2, 2)?, mk(s3, 3)?, mk(s4, 4)?])
}

/// A scalar function of (slow, fast) variables.
pub type ScalarFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;
/// A scalar function of the slow variable.
pub type CurveFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Expansion of a planar field u' = Σ εᵏ f_k(u, v), v' = Σ εᵏ g_k(u, v) whose
/// ε = 0 system has the normally hyperbolic invariant graph v = φ₀(u).
/// Partials with respect to v are optional; missing ones are replaced by
/// central differences with step 1e-5.
#[derive(Clone)]
pub struct ExpansionFields {
    /// f_0, f_1, … (u-equation).
    pub f: Vec<ScalarFn>,
    /// g_0, g_1, … (v-equation).
    pub g: Vec<ScalarFn>,
    /// ∂_v f_0, ∂_v f_1 if known.
    pub df: Option<[ScalarFn; 2]>,
    /// ∂_v g_0, ∂_v g_1 if known.
    pub dg: Option<[ScalarFn; 2]>,
    /// ∂²_vv f_0, ∂²_vv g_0 if known.
    pub d2: Option<[ScalarFn; 2]>,
}

const FD_STEP: f64 = 1e-5;

fn d_v(h: &ScalarFn, u: f64, v: f64) -> f64 {
    (h(u, v + FD_STEP) - h(u, v - FD_STEP)) / (2.0 * FD_STEP)
}

fn d2_v(h: &ScalarFn, u: f64, v: f64) -> f64 {
    (h(u, v + FD_STEP) - 2.0 * h(u, v) + h(u, v - FD_STEP)) / (FD_STEP * FD_STEP)
}

/// φ₀ and the coefficient evaluators produced from [`ExpansionFields`].
#[derive(Clone)]
pub struct ExpansionCoefficients {
    fields: ExpansionFields,
    phi0: CurveFn,
    dphi0: Option<CurveFn>,
}

/// Builds the coefficient evaluators φ₁, φ₂ (and the leading higher-order
/// correction when the lower ones vanish identically).
pub fn generic_slow_manifold_expansion(
    fields: ExpansionFields,
    phi0_fn: CurveFn,
    dphi0: Option<CurveFn>,
) -> ExpansionCoefficients {
    ExpansionCoefficients {
        fields,
        phi0: phi0_fn,
        dphi0,
    }
}

impl ExpansionCoefficients {
    fn term(v: &[ScalarFn], k: usize, u: f64, w: f64) -> f64 {
        v.get(k).map_or(0.0, |h| h(u, w))
    }

    pub fn phi0(&self, u: f64) -> f64 {
        (self.phi0)(u)
    }

    pub fn phi0_prime(&self, u: f64) -> f64 {
        match &self.dphi0 {
            Some(d) => d(u),
            None => ((self.phi0)(u + FD_STEP) - (self.phi0)(u - FD_STEP)) / (2.0 * FD_STEP),
        }
    }

    fn partials(&self, u: f64, v: f64) -> (f64, f64, f64, f64) {
        let fl = &self.fields;
        let (df0, df1) = match &fl.df {
            Some([a, b]) => (a(u, v), b(u, v)),
            None => (
                d_v(&fl.f[0], u, v),
                fl.f.get(1).map_or(0.0, |h| d_v(h, u, v)),
            ),
        };
        let (dg0, dg1) = match &fl.dg {
            Some([a, b]) => (a(u, v), b(u, v)),
            None => (
                d_v(&fl.g[0], u, v),
                fl.g.get(1).map_or(0.0, |h| d_v(h, u, v)),
            ),
        };
        (df0, df1, dg0, dg1)
    }

    fn denominator(&self, u: f64) -> Result<(f64, f64, f64)> {
        let v = self.phi0(u);
        let dp = self.phi0_prime(u);
        let (df0, _, dg0, _) = self.partials(u, v);
        let den = dg0 - dp * df0;
        if den == 0.0 || !den.is_finite() {
            return Err(Error::Singularity(format!(
                "expansion denominator vanishes at u = {u}"
            )));
        }
        Ok((v, dp, den))
    }

    /// First-order coefficient φ₁(u).
    pub fn phi1(&self, u: f64) -> Result<f64> {
        let (v, dp, den) = self.denominator(u)?;
        let fl = &self.fields;
        Ok((dp * Self::term(&fl.f, 1, u, v) - Self::term(&fl.g, 1, u, v)) / den)
    }

    /// Second-order coefficient φ₂(u).
    pub fn phi2(&self, u: f64) -> Result<f64> {
        let (v, dp, den) = self.denominator(u)?;
        let fl = &self.fields;
        let p1 = self.phi1(u)?;
        let dp1 = (self.phi1(u + FD_STEP)? - self.phi1(u - FD_STEP)?) / (2.0 * FD_STEP);
        let (df0, df1, _, dg1) = self.partials(u, v);
        let (d2f0, d2g0) = if p1 == 0.0 {
            (0.0, 0.0)
        } else {
            match &fl.d2 {
                Some([a, b]) => (a(u, v), b(u, v)),
                None => (d2_v(&fl.f[0], u, v), d2_v(&fl.g[0], u, v)),
            }
        };
        let f1 = Self::term(&fl.f, 1, u, v);
        let f2 = Self::term(&fl.f, 2, u, v);
        let g2 = Self::term(&fl.g, 2, u, v);
        let num = 0.5 * p1 * p1 * (dp * d2f0 - d2g0)
            + p1 * (dp * df1 + dp1 * df0 - dg1)
            + f1 * dp1
            + f2 * dp
            - g2;
        Ok(num / den)
    }

    /// Coefficient of order `k` when φ₁..φ_{k-1} vanish identically and φ₀
    /// is the first nonzero term: (φ₀' f_k - g_k) / (∂_v g₀ - φ₀' ∂_v f₀).
    pub fn leading_correction(&self, k: usize, u: f64) -> Result<f64> {
        let (v, dp, den) = self.denominator(u)?;
        let fl = &self.fields;
        Ok((dp * Self::term(&fl.f, k, u, v) - Self::term(&fl.g, k, u, v)) / den)
    }
}

/// Converts an order index in the ε' = √ε convention to the ε convention;
/// odd orders have no ε counterpart.
pub fn eps_prime_order_to_eps(k: usize) -> Option<usize> {
    k.is_multiple_of(2).then_some(k / 2)
}

/// Expansion fields of the RESCALED system in (θ, r) with small parameter
/// ε' = √ε. With `exact` the r-partials are closed forms.
pub fn rescaled_expansion_fields(params: &Params, exact: bool) -> ExpansionFields {
    let a = params.a;
    let p = move |t: f64, r: f64| a * r * r - cos_q(t) * sin_minus_cos(t);
    let f0: ScalarFn = Arc::new(move |t, r| -t.sin() * sin_minus_cos(t) * p(t, r));
    let g0: ScalarFn = Arc::new(move |t, r| -r * cos_q(t) * sin_minus_cos(t) * p(t, r));
    let zero: ScalarFn = Arc::new(|_, _| 0.0);
    let f2: ScalarFn = Arc::new(|t, r| -r * r * cos_q(t) * sin_minus_cos(t));
    let g2: ScalarFn = Arc::new(|t, r| r * r * r * t.sin() * sin_minus_cos(t));
    let f3: ScalarFn = Arc::new(move |t, r| a * r * r * r * cos_q(t));
    let g3: ScalarFn = Arc::new(move |t, r| -a * r.powi(4) * t.sin());
    let (df, dg, d2) = if exact {
        let df0: ScalarFn = Arc::new(move |t, r| -t.sin() * sin_minus_cos(t) * 2.0 * a * r);
        let dg0: ScalarFn = Arc::new(move |t, r| {
            let cd = cos_q(t) * sin_minus_cos(t);
            -cd * p(t, r) - r * cd * 2.0 * a * r
        });
        let d2f0: ScalarFn = Arc::new(move |t, _| -t.sin() * sin_minus_cos(t) * 2.0 * a);
        let d2g0: ScalarFn = Arc::new(move |t, r| -cos_q(t) * sin_minus_cos(t) * 6.0 * a * r);
        (
            Some([df0, zero.clone()]),
            Some([dg0, zero.clone()]),
            Some([d2f0, d2g0]),
        )
    } else {
        (None, None, None)
    };
    ExpansionFields {
        f: vec![f0, zero.clone(), f2, f3],
        g: vec![g0, zero, g2, g3],
        df,
        dg,
        d2,
    }
}

/// Expansion coefficients of S²_ε for the RESCALED system (ε' convention).
pub fn rescaled_s2_expansion(params: &Params, exact: bool) -> ExpansionCoefficients {
    let p = *params;
    let phi: CurveFn = Arc::new(move |t| phi0(t.clamp(FRAC_PI_4, FRAC_PI_2), &p).unwrap_or(0.0));
    let dphi: Option<CurveFn> = exact.then(|| {
        let f: CurveFn = Arc::new(move |t| phi0_prime(t, &p).unwrap_or(f64::NAN));
        f
    });
    generic_slow_manifold_expansion(rescaled_expansion_fields(params, exact), phi, dphi)
}

/// Expansion fields of the OMEGA system with slow variable r and fast
/// variable ω (ε' convention): r' = Σ f_k, ω' = Σ g_k.
pub fn omega_expansion_fields(params: &Params) -> ExpansionFields {
    let a = params.a;
    let k = a * FRAC_1_SQRT_2;
    let f0: ScalarFn = Arc::new(move |r, w| {
        let (s, c) = w.sin_cos();
        -a * r.powi(3) * s * (c - s) + r * s * s * (c - s).powi(2)
    });
    let g0: ScalarFn = Arc::new(move |r, w| {
        let (s, c) = w.sin_cos();
        -a * r * r * s * (s + c) + s * s * (s + c) * (c - s)
    });
    let zero: ScalarFn = Arc::new(|_, _| 0.0);
    let f2: ScalarFn = Arc::new(|r, w| {
        let (s, c) = w.sin_cos();
        r.powi(3) * s * (s + c)
    });
    let g2: ScalarFn = Arc::new(|r, w| {
        let (s, c) = w.sin_cos();
        -r * r * s * (c - s)
    });
    let f3: ScalarFn = Arc::new(move |r, w| {
        let (s, c) = w.sin_cos();
        -k * r.powi(4) * (s + c)
    });
    let g3: ScalarFn = Arc::new(move |r, w| {
        let (s, c) = w.sin_cos();
        k * r.powi(3) * (c - s)
    });
    ExpansionFields {
        f: vec![f0, zero.clone(), f2, f3],
        g: vec![g0, zero, g2, g3],
        df: None,
        dg: None,
        d2: None,
    }
}

/// Expansion coefficients of S¹_ε in the OMEGA frame (graph ω = ω(r)).
pub fn omega_s1_expansion(params: &Params) -> ExpansionCoefficients {
    let zero: CurveFn = Arc::new(|_| 0.0);
    generic_slow_manifold_expansion(omega_expansion_fields(params), zero.clone(), Some(zero))
}

/// Layer-problem eigenvalue transverse to S₀¹ at (π/4, r): -a r².
pub fn s1_layer_eigenvalue(r: f64, params: &Params) -> f64 {
    -params.a * r * r
}

/// Value of SQRT_2 re-exported for callers building sections.
pub const ROOT_TWO: f64 = SQRT_2;

#[cfg(test)]
mod tests {
    use super::*;

    fn p() -> Params {
        Params::new(0.5, 0.04).unwrap()
    }

    #[test]
    fn phi0_endpoints_and_fold() {
        let q = p();
        assert_eq!(phi0(FRAC_PI_4, &q).unwrap(), 0.0);
        assert_eq!(phi0(FRAC_PI_2, &q).unwrap(), 0.0);
        let v = phi0(Params::theta_star(), &q).unwrap();
        assert!((v - 1.0 / (5.0f64 * 0.5).sqrt()).abs() < 1e-12);
        assert!(phi0(0.5, &q).is_err());
    }

    #[test]
    fn phi1_values() {
        let q = p();
        assert_eq!(phi1(FRAC_PI_4, &q).unwrap(), 0.0);
        assert!(matches!(
            phi1(Params::theta_star(), &q),
            Err(Error::Singularity(_))
        ));
        let t: f64 = 1.3;
        let (s, c) = (t.sin(), t.cos());
        let p0 = (c * (s - c) / 0.5).sqrt();
        let expect = -p0 * c / (2.0 * 0.5 * (2.0 * c - s));
        assert!((phi1(t, &q).unwrap() - expect).abs() < 1e-12);
        assert!((expect - 0.3809).abs() < 1e-4);
    }

    #[test]
    fn s1_expansion_values() {
        let q = p();
        assert_eq!(s1_expansion(0.0, &q), FRAC_PI_4);
        assert!((s1_expansion(1.0, &q) - (FRAC_PI_4 + 0.008 / SQRT_2)).abs() < 1e-15);
        assert!((s1_expansion(1.0, &q) - 0.791056).abs() < 1e-6);
        let z = Params::new(0.5, 0.0).unwrap();
        assert_eq!(s1_expansion(3.0, &z), FRAC_PI_4);
    }

    #[test]
    fn fiber_examples() {
        let q = p();
        assert_eq!(fast_fiber(0.0, 1.0), 0.0);
        assert_eq!(fast_fiber(0.7, FRAC_PI_2), 0.7);
        let r = fast_fiber(q.rho_star(), Params::theta_star());
        assert!((r - q.r_star()).abs() < 1e-15);
        let one = fiber_manifold_intersections(q.rho_star(), &q).unwrap();
        assert_eq!(one.len(), 1);
        assert!((one[0].tan() - 2.0).abs() < 1e-6);
        let two = fiber_manifold_intersections(0.5, &q).unwrap();
        let tp = (1.0 + (1.0f64 - 0.5).sqrt()) / 0.25;
        let tm = (1.0 - (1.0f64 - 0.5).sqrt()) / 0.25;
        assert!((two[0] - tm.atan()).abs() < 1e-12 && (two[1] - tp.atan()).abs() < 1e-12);
        assert!((two[0] - 0.864243).abs() < 1e-6 && (two[1] - 1.425383).abs() < 1e-6);
        assert!(matches!(
            fiber_manifold_intersections(2.0 * q.rho_star(), &q),
            Err(Error::NoIntersection(_))
        ));
    }

    #[test]
    fn reduced_flow_signs() {
        let q = p();
        assert_eq!(reduced_flow_s2(FRAC_PI_4, &q).unwrap(), 0.0);
        assert!(reduced_flow_s2(1.0, &q).unwrap() > 0.0);
        assert!(reduced_flow_s2(1.3, &q).unwrap() < 0.0);
    }

    #[test]
    fn hausdorff_examples() {
        let a = CurvePolyline::new(
            vec![[0.0, 0.0], [1.0, 0.0]],
            FrameId::XyFast,
            CurveLabel::Custom("a".into()),
        )
        .unwrap();
        let b = CurvePolyline::new(
            vec![[0.0, 1.0], [1.0, 1.0]],
            FrameId::XyFast,
            CurveLabel::Custom("b".into()),
        )
        .unwrap();
        assert_eq!(hausdorff_distance(&a, &a).unwrap(), 0.0);
        assert!((hausdorff_distance(&a, &b).unwrap() - 1.0).abs() < 1e-15);
        let c = CurvePolyline::new(
            vec![[0.0, 1.0], [1.0, 1.0]],
            FrameId::Rescaled,
            CurveLabel::Custom("c".into()),
        )
        .unwrap();
        assert!(matches!(
            hausdorff_distance(&a, &c),
            Err(Error::FrameMismatch(..))
        ));
    }

    #[test]
    fn polyline_validation() {
        assert!(CurvePolyline::new(
            vec![[0.0, 0.0]],
            FrameId::Xy,
            CurveLabel::Custom("x".into())
        )
        .is_err());
        assert!(CurvePolyline::new(
            vec![[0.0, 0.0], [0.0, 0.0]],
            FrameId::Xy,
            CurveLabel::Custom("x".into())
        )
        .is_err());
    }
}
