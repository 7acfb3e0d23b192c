//! Transverse sections, transition maps, the return map on Σ₁, its fixed
//! point (the limit cycle) and per-branch dwell times.

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::flow::{Direction, EventSpec, FrameIntegrator, IntegratorConfig};
use crate::frames::{FrameId, FrameState, Params, TimeLedger};
use crate::geometry::{phi0, CurveLabel, CurvePolyline};

/// Clock limit (t₂) of a single leg.
const LEG_CLOCK_LIMIT: f64 = 1e12;

/// Slack used when testing section bounds at a located crossing.
const BOUNDS_SLACK: f64 = 1e-9;

/// Tolerances used for limit-cycle computations. The passage near the
/// origin amplifies local errors, so the cycle needs tighter control than
/// [`IntegratorConfig::default`].
pub fn cycle_config() -> IntegratorConfig {
    IntegratorConfig {
        rel_tol: 1e-14,
        abs_tol: 1e-17,
        ..IntegratorConfig::default()
    }
}

/// Identifier of a transverse section.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SectionId {
    S1,
    S1b,
    S2,
    S3,
    S4,
}

impl SectionId {
    pub const ALL: [SectionId; 5] = [
        SectionId::S1,
        SectionId::S1b,
        SectionId::S2,
        SectionId::S3,
        SectionId::S4,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            SectionId::S1 => "Sigma1",
            SectionId::S1b => "Sigma1b",
            SectionId::S2 => "Sigma2",
            SectionId::S3 => "Sigma3",
            SectionId::S4 => "Sigma4",
        }
    }
}

impl fmt::Display for SectionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Optional replacements for the default section constants.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SectionOverrides {
    pub alpha1: Option<f64>,
    pub beta1: Option<f64>,
    pub delta_b: Option<f64>,
    pub r1b_max: Option<f64>,
    pub alpha2: Option<f64>,
    pub alpha3: Option<f64>,
    pub sigma3_length: Option<f64>,
    pub beta4: Option<f64>,
    pub alpha4: Option<f64>,
    pub dwell_theta3: Option<f64>,
    pub dwell_r4: Option<f64>,
}

/// Resolved section constants.
///
/// `dwell_theta3` and `dwell_r4` place the trimming markers that end the σ₃
/// dwell (θ = π/4 + dwell_theta3, falling) and start the σ₄ dwell
/// (r = dwell_r4, falling).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SectionConstants {
    pub alpha1: f64,
    pub beta1: f64,
    pub delta_b: f64,
    pub r1b_max: f64,
    pub alpha2: f64,
    pub alpha3: f64,
    pub sigma3_length: f64,
    pub beta4: f64,
    pub alpha4: f64,
    pub dwell_theta3: f64,
    pub dwell_r4: f64,
}

impl Default for SectionConstants {
    fn default() -> Self {
        Self {
            alpha1: 0.15,
            beta1: 0.3,
            delta_b: 0.1,
            r1b_max: 0.4,
            alpha2: 0.2,
            alpha3: 0.2,
            sigma3_length: 0.3,
            beta4: 0.25,
            alpha4: 0.1,
            dwell_theta3: 0.05,
            dwell_r4: 0.4,
        }
    }
}

impl SectionConstants {
    pub fn with_overrides(o: &SectionOverrides) -> Self {
        let d = Self::default();
        Self {
            alpha1: o.alpha1.unwrap_or(d.alpha1),
            beta1: o.beta1.unwrap_or(d.beta1),
            delta_b: o.delta_b.unwrap_or(d.delta_b),
            r1b_max: o.r1b_max.unwrap_or(d.r1b_max),
            alpha2: o.alpha2.unwrap_or(d.alpha2),
            alpha3: o.alpha3.unwrap_or(d.alpha3),
            sigma3_length: o.sigma3_length.unwrap_or(d.sigma3_length),
            beta4: o.beta4.unwrap_or(d.beta4),
            alpha4: o.alpha4.unwrap_or(d.alpha4),
            dwell_theta3: o.dwell_theta3.unwrap_or(d.dwell_theta3),
            dwell_r4: o.dwell_r4.unwrap_or(d.dwell_r4),
        }
    }
}

/// Geometric shape of a section in RESCALED coordinates (θ, r).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum SectionShape {
    /// θ = theta, r ∈ [0, r_max]; coordinate u = r.
    Vertical { theta: f64, r_max: f64 },
    /// r = beta·sin θ, θ ∈ [theta_lo, theta_lo + width]; coordinate u = θ - theta_lo.
    FiberArc {
        beta: f64,
        theta_lo: f64,
        width: f64,
    },
    /// Straight segment through `center` along the unit vector `along`, of
    /// the given length, perpendicular to `normal`; coordinate u ∈ [0, length].
    Segment {
        center: [f64; 2],
        along: [f64; 2],
        normal: [f64; 2],
        length: f64,
    },
    /// r = r0, θ ∈ [π/4, π/4 + width]; coordinate u = θ - π/4.
    Horizontal { r0: f64, width: f64 },
}

/// A transverse section with its event function, crossing direction and
/// intrinsic parameterization u ∈ [0, length].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SectionSpec {
    pub id: SectionId,
    pub anchor: FrameState,
    pub shape: SectionShape,
    pub direction: Direction,
    pub length: f64,
}

impl SectionSpec {
    /// Signed event function; zero on the line carrying the section.
    pub fn event_value(&self, s: &FrameState) -> f64 {
        let (th, r) = (s.coords()[0], s.coords()[1]);
        match self.shape {
            SectionShape::Vertical { theta, .. } => th - theta,
            SectionShape::FiberArc { beta, .. } => r - beta * th.sin(),
            SectionShape::Segment { center, normal, .. } => {
                (th - center[0]) * normal[0] + (r - center[1]) * normal[1]
            }
            SectionShape::Horizontal { r0, .. } => r - r0,
        }
    }

    /// Intrinsic coordinate of a point on (or near) the section.
    pub fn coordinate(&self, s: &FrameState) -> f64 {
        let (th, r) = (s.coords()[0], s.coords()[1]);
        match self.shape {
            SectionShape::Vertical { .. } => r,
            SectionShape::FiberArc { theta_lo, .. } => th - theta_lo,
            SectionShape::Segment {
                center,
                along,
                length,
                ..
            } => (th - center[0]) * along[0] + (r - center[1]) * along[1] + 0.5 * length,
            SectionShape::Horizontal { .. } => th - FRAC_PI_4,
        }
    }

    /// Whether a crossing state lies within the section bounds.
    pub fn contains(&self, s: &FrameState) -> bool {
        let u = self.coordinate(s);
        u >= -BOUNDS_SLACK && u <= self.length + BOUNDS_SLACK
    }

    /// Point of the section at coordinate u.
    pub fn point(&self, u: f64) -> Result<FrameState> {
        if !(u >= 0.0 && u <= self.length) {
            return Err(Error::InvalidInput(format!(
                "coordinate {u} outside [0, {}] on {}",
                self.length, self.id
            )));
        }
        let (th, r) = match self.shape {
            SectionShape::Vertical { theta, .. } => (theta, u),
            SectionShape::FiberArc { beta, theta_lo, .. } => {
                let th = theta_lo + u;
                (th, beta * th.sin())
            }
            SectionShape::Segment {
                center,
                along,
                length,
                ..
            } => {
                let s = u - 0.5 * length;
                (center[0] + s * along[0], center[1] + s * along[1])
            }
            SectionShape::Horizontal { r0, .. } => (FRAC_PI_4 + u, r0),
        };
        FrameState::planar(FrameId::Rescaled, th, r)
    }

    /// The section as an event specification with bounds.
    pub fn event(&self) -> EventSpec<'static> {
        let me = *self;
        let me2 = *self;
        EventSpec::new(move |s: &FrameState| me.event_value(s), self.direction)
            .with_bounds(move |s| me2.contains(s))
    }

    /// Polyline sampling of the section (for plots and disjointness checks).
    pub fn polyline(&self, n: usize) -> Result<CurvePolyline> {
        let pts = (0..n)
            .map(|i| {
                let p = self.point(self.length * i as f64 / (n - 1) as f64)?;
                Ok([p.coords()[0], p.coords()[1]])
            })
            .collect::<Result<Vec<_>>>()?;
        CurvePolyline::new(
            pts,
            FrameId::Rescaled,
            CurveLabel::Custom(self.id.name().to_string()),
        )
    }
}

/// The five sections of one parameter set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sections {
    pub constants: SectionConstants,
    pub specs: [SectionSpec; 5],
    /// Fiber level of Σ₂.
    pub beta2: f64,
}

impl Sections {
    pub fn get(&self, id: SectionId) -> &SectionSpec {
        &self.specs[id as usize]
    }
}

fn segments_intersect(p: &[[f64; 2]], q: &[[f64; 2]]) -> bool {
    fn orient(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
        (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
    }
    for u in p.windows(2) {
        for v in q.windows(2) {
            let d1 = orient(u[0], u[1], v[0]);
            let d2 = orient(u[0], u[1], v[1]);
            let d3 = orient(v[0], v[1], u[0]);
            let d4 = orient(v[0], v[1], u[1]);
            if d1 * d2 <= 0.0 && d3 * d4 <= 0.0 {
                return true;
            }
        }
    }
    false
}

/// Builds Σ₁, Σ₁b, Σ₂, Σ₃, Σ₄ from defaults and overrides and checks that
/// they are consistent and pairwise disjoint.
pub fn build_sections(params: &Params, overrides: &SectionOverrides) -> Result<Sections> {
    let k = SectionConstants::with_overrides(overrides);
    let named = [
        ("alpha1", k.alpha1),
        ("beta1", k.beta1),
        ("delta_b", k.delta_b),
        ("r1b_max", k.r1b_max),
        ("alpha2", k.alpha2),
        ("alpha3", k.alpha3),
        ("sigma3_length", k.sigma3_length),
        ("beta4", k.beta4),
        ("alpha4", k.alpha4),
        ("dwell_theta3", k.dwell_theta3),
        ("dwell_r4", k.dwell_r4),
    ];
    for (n, v) in named {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::Constraint(format!("{n} must be positive, got {v}")));
        }
    }
    let ts = Params::theta_star();
    let rq = params.drop_radius();
    let rho = params.rho_star();
    let bad = |m: String| Err(Error::Constraint(m));
    if k.beta4 >= rq {
        return bad(format!(
            "beta4 = {} must be below the drop radius {rq}",
            k.beta4
        ));
    }
    if k.dwell_r4 <= k.beta4 || k.dwell_r4 >= rq {
        return bad(format!(
            "dwell_r4 = {} must lie in (beta4, {rq})",
            k.dwell_r4
        ));
    }
    let theta1 = FRAC_PI_4 + k.alpha1;
    let theta_b = FRAC_PI_2 - k.delta_b;
    if theta1 >= ts || theta_b <= ts + 1.5 * k.alpha2 {
        return bad("need pi/4 + alpha1 < theta* < theta* + 3 alpha2/2 < pi/2 - delta_b".into());
    }
    if k.alpha3 >= ts - FRAC_PI_4 || k.dwell_theta3 >= ts - k.alpha3 - FRAC_PI_4 {
        return bad(
            "alpha3 and dwell_theta3 must keep the fold-side markers inside (pi/4, theta*)".into(),
        );
    }
    let beta2 = phi0(ts + k.alpha2, params)? / (ts + k.alpha2).sin();
    let th3 = ts - k.alpha3;
    let c3 = [th3, rho * th3.sin()];
    let tangent = {
        let (x, y): (f64, f64) = (1.0, rho * th3.cos());
        let n = x.hypot(y);
        [x / n, y / n]
    };
    let along = [-tangent[1], tangent[0]];
    let theta3_min = c3[0] + 0.5 * k.sigma3_length * along[0];
    if FRAC_PI_4 + k.dwell_theta3 >= theta3_min {
        return bad(format!(
            "dwell_theta3 must place its marker left of Sigma3 (theta < {theta3_min})"
        ));
    }
    if along[1] <= 0.0 || c3[1] - 0.5 * k.sigma3_length * along[1] <= 0.0 {
        return bad("Sigma3 must stay in r > 0".into());
    }
    let mk = |id, anchor: (f64, f64), shape, direction, length| -> Result<SectionSpec> {
        Ok(SectionSpec {
            id,
            anchor: FrameState::planar(FrameId::Rescaled, anchor.0, anchor.1)?,
            shape,
            direction,
            length,
        })
    };
    let specs = [
        mk(
            SectionId::S1,
            (theta1, 0.0),
            SectionShape::Vertical {
                theta: theta1,
                r_max: k.beta1,
            },
            Direction::Rising,
            k.beta1,
        )?,
        mk(
            SectionId::S1b,
            (theta_b, 0.0),
            SectionShape::Vertical {
                theta: theta_b,
                r_max: k.r1b_max,
            },
            Direction::Rising,
            k.r1b_max,
        )?,
        mk(
            SectionId::S2,
            (ts + k.alpha2, beta2 * (ts + k.alpha2).sin()),
            SectionShape::FiberArc {
                beta: beta2,
                theta_lo: ts + 0.5 * k.alpha2,
                width: k.alpha2,
            },
            Direction::Rising,
            k.alpha2,
        )?,
        mk(
            SectionId::S3,
            (c3[0], c3[1]),
            SectionShape::Segment {
                center: c3,
                along,
                normal: tangent,
                length: k.sigma3_length,
            },
            Direction::Falling,
            k.sigma3_length,
        )?,
        mk(
            SectionId::S4,
            (FRAC_PI_4, k.beta4),
            SectionShape::Horizontal {
                r0: k.beta4,
                width: k.alpha4,
            },
            Direction::Falling,
            k.alpha4,
        )?,
    ];
    let lines = specs
        .iter()
        .map(|s| s.polyline(65).map(|p| p.points))
        .collect::<Result<Vec<_>>>()?;
    for i in 0..5 {
        for j in i + 1..5 {
            if segments_intersect(&lines[i], &lines[j]) {
                return bad(format!(
                    "sections {} and {} intersect",
                    specs[i].id, specs[j].id
                ));
            }
        }
    }
    Ok(Sections {
        constants: k,
        specs,
        beta2,
    })
}

fn ordering_error(expected: &str, hit: &str) -> Error {
    Error::OrderingViolation {
        expected: expected.to_string(),
        hit: hit.to_string(),
    }
}

/// Integrates from `from` at coordinate `u` until the target section fires
/// within its bounds. Any other section crossed first is an ordering violation.
pub fn transition_map(
    sections: &Sections,
    from: SectionId,
    u: f64,
    to: SectionId,
    params: &Params,
    config: &IntegratorConfig,
) -> Result<(f64, TimeLedger)> {
    let start = sections.get(from).point(u)?;
    let fi = FrameIntegrator::new(FrameId::Rescaled, *params, *config);
    let mut events = vec![sections.get(to).event()];
    let others: Vec<SectionId> = SectionId::ALL
        .iter()
        .copied()
        .filter(|s| *s != to)
        .collect();
    events.extend(others.iter().map(|s| sections.get(*s).event()));
    let run = fi.run(
        &start,
        TimeLedger::default(),
        LEG_CLOCK_LIMIT,
        &events,
        false,
    )?;
    match run.crossing {
        Some((0, c)) => Ok((sections.get(to).coordinate(&c.state), c.ledger)),
        Some((k, _)) => Err(ordering_error(to.name(), others[k - 1].name())),
        None => Err(Error::NoCrossing(LEG_CLOCK_LIMIT)),
    }
}

/// Waypoints of one circuit, in order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Waypoint {
    Section(SectionId),
    /// Falling crossing of θ = π/2 - δ_b on the upper branch: starts the σ₂ dwell.
    Sigma2Entry,
    /// Falling crossing of θ = π/4 + dwell_theta3: ends the σ₃ dwell.
    Sigma3Exit,
    /// Falling crossing of r = dwell_r4: starts the σ₄ dwell.
    Sigma4Entry,
}

const CIRCUIT: [Waypoint; 8] = [
    Waypoint::Section(SectionId::S1b),
    Waypoint::Sigma2Entry,
    Waypoint::Section(SectionId::S2),
    Waypoint::Section(SectionId::S3),
    Waypoint::Sigma3Exit,
    Waypoint::Sigma4Entry,
    Waypoint::Section(SectionId::S4),
    Waypoint::Section(SectionId::S1),
];

fn marker_event(w: Waypoint, k: &SectionConstants, params: &Params) -> EventSpec<'static> {
    let theta_b = FRAC_PI_2 - k.delta_b;
    // The upper-branch crossing of θ = π/2 - δ_b sits near φ₀ there.
    let r_split = 0.5 * phi0(theta_b, params).unwrap_or(0.0);
    let th3 = FRAC_PI_4 + k.dwell_theta3;
    let r4 = k.dwell_r4;
    let beta4 = k.beta4;
    let th4 = FRAC_PI_4 + k.alpha4;
    match w {
        Waypoint::Sigma2Entry => EventSpec::new(
            move |s: &FrameState| s.coords()[0] - theta_b,
            Direction::Falling,
        )
        .with_bounds(move |s| s.coords()[1] > r_split),
        Waypoint::Sigma3Exit => EventSpec::new(
            move |s: &FrameState| s.coords()[0] - th3,
            Direction::Falling,
        )
        .with_bounds(move |s| s.coords()[1] > beta4),
        Waypoint::Sigma4Entry => {
            EventSpec::new(move |s: &FrameState| s.coords()[1] - r4, Direction::Falling)
                .with_bounds(move |s| s.coords()[0] <= th4)
        }
        Waypoint::Section(_) => unreachable!("sections use their own events"),
    }
}

/// Result of one application of the return map.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Circuit {
    pub u_in: f64,
    pub u_out: f64,
    pub end: FrameState,
    /// Total elapsed time in every clock.
    pub ledger: TimeLedger,
    /// Σ₁→Σ₁b, Σ₁b→Σ₃, Σ₃→Σ₄, Σ₄→Σ₁.
    pub branch_ledgers: [TimeLedger; 4],
    /// Trimmed dwell ledgers for σ₁..σ₄; `None` when a marker was not crossed.
    pub dwell: [Option<TimeLedger>; 4],
    /// Dense samples of each branch (only when requested).
    pub branch_points: Option<[Vec<[f64; 2]>; 4]>,
}

/// One circuit Σ₁ → Σ₁b → Σ₂ → Σ₃ → Σ₄ → Σ₁ from coordinate u on Σ₁.
pub fn return_map(
    sections: &Sections,
    u: f64,
    params: &Params,
    config: &IntegratorConfig,
) -> Result<Circuit> {
    circuit(sections, u, params, config, false)
}

fn circuit(
    sections: &Sections,
    u: f64,
    params: &Params,
    config: &IntegratorConfig,
    record: bool,
) -> Result<Circuit> {
    let k = &sections.constants;
    let fi = FrameIntegrator::new(FrameId::Rescaled, *params, *config);
    let mut state = sections.get(SectionId::S1).point(u)?;
    if state.coords()[1] <= 0.0 {
        return Err(Error::InvalidInput(
            "r = 0 is invariant; start with u > 0".into(),
        ));
    }
    let mut ledger = TimeLedger::default();
    let mut marks: BTreeMap<&'static str, TimeLedger> = BTreeMap::new();
    let mut branch = 0usize;
    let mut points: [Vec<[f64; 2]>; 4] = Default::default();
    if record {
        points[0].push([state.coords()[0], state.coords()[1]]);
    }
    let mut idx = 0;
    while idx < CIRCUIT.len() {
        let target = CIRCUIT[idx];
        // The next mandatory section ends any pending optional marker.
        let next_section = CIRCUIT[idx..]
            .iter()
            .find_map(|w| match w {
                Waypoint::Section(s) => Some(*s),
                _ => None,
            })
            .expect("circuit ends on a section");
        let mut events = Vec::new();
        let mut labels: Vec<Waypoint> = Vec::new();
        if let Waypoint::Section(_) = target {
        } else {
            events.push(marker_event(target, k, params));
            labels.push(target);
        }
        for s in SectionId::ALL {
            events.push(sections.get(s).event());
            labels.push(Waypoint::Section(s));
        }
        let run = fi.run(&state, ledger, LEG_CLOCK_LIMIT, &events, record)?;
        if let Some(tr) = &run.trajectory {
            for st in tr.states.iter().skip(1) {
                points[branch].push([st.coords()[0], st.coords()[1]]);
            }
        }
        let (hit, c) = run.crossing.ok_or(Error::NoCrossing(LEG_CLOCK_LIMIT))?;
        let hit = labels[hit];
        state = c.state;
        ledger = c.ledger;
        match hit {
            Waypoint::Section(s) if s == next_section => {
                // Skip optional markers that were not crossed.
                while CIRCUIT[idx] != Waypoint::Section(s) {
                    idx += 1;
                }
                marks.insert(s.name(), ledger);
                let new_branch = match s {
                    SectionId::S1b => Some(1),
                    SectionId::S3 => Some(2),
                    SectionId::S4 => Some(3),
                    _ => None,
                };
                if let Some(b) = new_branch {
                    branch = b;
                    if record {
                        points[branch].push([state.coords()[0], state.coords()[1]]);
                    }
                }
            }
            Waypoint::Section(s) => return Err(ordering_error(next_section.name(), s.name())),
            w => {
                let name = match w {
                    Waypoint::Sigma2Entry => "sigma2_entry",
                    Waypoint::Sigma3Exit => "sigma3_exit",
                    _ => "sigma4_entry",
                };
                marks.insert(name, ledger);
            }
        }
        idx += 1;
    }
    let s1 = sections.get(SectionId::S1);
    let u_out = s1.coordinate(&state);
    let at = |n: &str| marks.get(n).copied();
    let l1b = at("Sigma1b").expect("visited");
    let l3 = at("Sigma3").expect("visited");
    let l4 = at("Sigma4").expect("visited");
    let l2 = at("Sigma2").expect("visited");
    let branch_ledgers = [l1b, l3.sub(&l1b), l4.sub(&l3), ledger.sub(&l4)];
    let dwell = [
        Some(l1b),
        at("sigma2_entry").map(|e| l2.sub(&e)),
        at("sigma3_exit").map(|e| e.sub(&l3)),
        at("sigma4_entry").map(|e| l4.sub(&e)),
    ];
    Ok(Circuit {
        u_in: u,
        u_out,
        end: state,
        ledger,
        branch_ledgers,
        dwell,
        branch_points: record.then_some(points),
    })
}

/// Tolerance on |Δu| that stops the fixed-point iteration.
pub const FIXED_POINT_STEP_TOL: f64 = 1e-13;
/// Maximum number of return-map iterations.
pub const FIXED_POINT_MAX_ITER: usize = 10;
/// Largest final |Δu| accepted as convergence when the step tolerance is not
/// reached because of integration noise.
pub const FIXED_POINT_ACCEPT: f64 = 1e-9;

/// One branch of the limit cycle.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BranchSegment {
    pub branch: u8,
    pub polyline: CurvePolyline,
    /// Time between the bounding sections of the branch.
    pub ledger: TimeLedger,
    /// Trimmed dwell time.
    pub dwell: Option<TimeLedger>,
}

/// The attracting periodic orbit in RESCALED coordinates.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LimitCycle {
    pub params: Params,
    pub sections: SectionConstants,
    pub fixed_point: FrameState,
    pub u_fixed: f64,
    pub rho_eps: f64,
    pub polyline: CurvePolyline,
    pub closure_gap: f64,
    pub period: TimeLedger,
    pub branches: Vec<BranchSegment>,
    pub iterations: usize,
    /// |Δu| of the last iteration.
    pub last_step: f64,
}

/// Iterates the return map from `u0` until the step drops below
/// [`FIXED_POINT_STEP_TOL`], then integrates one dense circuit.
pub fn fixed_point_from(
    sections: &Sections,
    u0: f64,
    params: &Params,
    config: &IntegratorConfig,
) -> Result<LimitCycle> {
    let mut u = u0;
    let mut step = f64::INFINITY;
    let mut iterations = 0;
    while iterations < FIXED_POINT_MAX_ITER {
        let c = return_map(sections, u, params, config)?;
        iterations += 1;
        step = (c.u_out - u).abs();
        u = c.u_out;
        if step < FIXED_POINT_STEP_TOL {
            break;
        }
    }
    if !(step <= FIXED_POINT_ACCEPT) {
        return Err(Error::NonConvergence(format!(
            "|du| = {step:e} after {iterations} iterations at eps = {}",
            params.epsilon
        )));
    }
    let c = circuit(sections, u, params, config, true)?;
    let pts = c.branch_points.expect("recorded");
    let mut branches = Vec::with_capacity(4);
    let mut all: Vec<[f64; 2]> = Vec::new();
    for (i, p) in pts.into_iter().enumerate() {
        let mut p = p;
        p.dedup();
        for q in &p {
            if all.last() != Some(q) {
                all.push(*q);
            }
        }
        branches.push(BranchSegment {
            branch: i as u8 + 1,
            polyline: CurvePolyline::new(
                p,
                FrameId::Rescaled,
                CurveLabel::Custom(format!("cycle_branch{}", i + 1)),
            )?,
            ledger: c.branch_ledgers[i],
            dwell: c.dwell[i],
        });
    }
    let fixed_point = sections.get(SectionId::S1).point(u)?;
    let theta1 = FRAC_PI_4 + sections.constants.alpha1;
    Ok(LimitCycle {
        params: *params,
        sections: sections.constants,
        fixed_point,
        u_fixed: u,
        rho_eps: u / theta1.sin(),
        polyline: CurvePolyline::new(
            all,
            FrameId::Rescaled,
            CurveLabel::Custom("limit_cycle".into()),
        )?,
        closure_gap: (c.u_out - u).abs(),
        period: c.ledger,
        branches,
        iterations,
        last_step: step,
    })
}

/// The limit cycle with default sections, starting from the middle of Σ₁.
pub fn fixed_point(params: &Params, config: &IntegratorConfig) -> Result<LimitCycle> {
    let sections = build_sections(params, &SectionOverrides::default())?;
    fixed_point_from(&sections, 0.5 * sections.constants.beta1, params, config)
}

/// Log of |dΠ/du| at the fixed point.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContractionEstimate {
    pub log_derivative: f64,
    /// The difference quotient was at the integration noise floor; the value
    /// is an upper bound.
    pub below_resolution: bool,
    pub step: f64,
}

/// Relative noise floor of a single return-map evaluation.
pub const RETURN_MAP_NOISE: f64 = 1e-12;

/// Central difference of the return map around the fixed point.
pub fn contraction_estimate(
    sections: &Sections,
    cycle: &LimitCycle,
    config: &IntegratorConfig,
) -> Result<ContractionEstimate> {
    let h = (10.0 * config.event_tol).max(1e-6);
    let u = cycle.u_fixed;
    let p = &cycle.params;
    let up = return_map(sections, u + h, p, config)?.u_out;
    let um = return_map(sections, (u - h).max(f64::MIN_POSITIVE), p, config)?.u_out;
    let diff = (up - um).abs();
    let floor = RETURN_MAP_NOISE * u.abs().max(1e-3);
    let below = diff <= floor;
    let d = diff.max(floor) / (2.0 * h);
    Ok(ContractionEstimate {
        log_derivative: d.ln().min(0.0),
        below_resolution: below,
        step: h,
    })
}

/// Dwell time of one branch in the t and t₂ clocks.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dwell {
    pub branch: u8,
    pub t: f64,
    pub t2: f64,
    pub ledger: TimeLedger,
}

/// Offset along Σ₃ between the cycle's crossing and the section anchor on
/// the fast fiber through the fold, found by following the cycle from Σ₁.
pub fn fold_deviation(
    sections: &Sections,
    cycle: &LimitCycle,
    config: &IntegratorConfig,
) -> Result<f64> {
    let p = &cycle.params;
    let (u1b, _) = transition_map(
        sections,
        SectionId::S1,
        cycle.u_fixed,
        SectionId::S1b,
        p,
        config,
    )?;
    let (u2, _) = transition_map(sections, SectionId::S1b, u1b, SectionId::S2, p, config)?;
    let (u3, _) = transition_map(sections, SectionId::S2, u2, SectionId::S3, p, config)?;
    Ok((u3 - 0.5 * sections.get(SectionId::S3).length).abs())
}

/// Trimmed dwell times of the four branches.
pub fn dwell_times(cycle: &LimitCycle) -> Result<Vec<Dwell>> {
    cycle
        .branches
        .iter()
        .map(|b| {
            let l = b.dwell.ok_or_else(|| {
                Error::InsufficientData(format!(
                    "dwell marker of branch {} was not crossed",
                    b.branch
                ))
            })?;
            Ok(Dwell {
                branch: b.branch,
                t: l.t,
                t2: l.t2,
                ledger: l,
            })
        })
        .collect()
}

fn ledger_json(l: &TimeLedger) -> Value {
    json!({
        "tau": l.tau,
        "t": l.t,
        "t1": l.t1,
        "t2": l.t2,
        "tau2": l.tau2,
    })
}

impl LimitCycle {
    /// JSON summary; keys are emitted in sorted order.
    pub fn to_json(&self, polyline_csv: Option<&str>) -> Value {
        let mut dwell = serde_json::Map::new();
        for b in &self.branches {
            let v = b.dwell.as_ref().map_or(Value::Null, ledger_json);
            dwell.insert(format!("sigma{}", b.branch), v);
        }
        let mut branch_time = serde_json::Map::new();
        for b in &self.branches {
            branch_time.insert(format!("sigma{}", b.branch), ledger_json(&b.ledger));
        }
        json!({
            "params": {"a": self.params.a, "epsilon": self.params.epsilon},
            "rho_eps": self.rho_eps,
            "fixed_point": {"theta": self.fixed_point.coords()[0], "r": self.fixed_point.coords()[1]},
            "closure_gap": self.closure_gap,
            "iterations": self.iterations,
            "period": ledger_json(&self.period),
            "dwell": Value::Object(dwell),
            "branch_time": Value::Object(branch_time),
            "polyline": polyline_csv.map_or(Value::Null, |s| Value::String(s.to_string())),
        })
    }

    /// Writes the polyline CSV next to a JSON summary referencing it.
    pub fn export(&self, json_path: &Path, csv_path: &Path) -> Result<()> {
        self.polyline.write_csv(csv_path)?;
        let name = csv_path
            .file_name()
            .and_then(|s| s.to_str())
            .unwrap_or_default();
        let text = serde_json::to_string_pretty(&self.to_json(Some(name)))?;
        std::fs::write(json_path, text + "\n")?;
        Ok(())
    }

    /// Largest ratio |r / (ρ_ε sin θ)| (or its inverse) along the σ₁ branch.
    pub fn sigma1_fiber_ratio(&self) -> f64 {
        self.branches[0]
            .polyline
            .points
            .iter()
            .map(|p| {
                let q = p[1] / (self.rho_eps * p[0].sin());
                q.max(1.0 / q)
            })
            .fold(1.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_sections_are_consistent() {
        let p = Params::new(0.5, 0.05).unwrap();
        let s = build_sections(&p, &SectionOverrides::default()).unwrap();
        let ts = Params::theta_star();
        let a2 = s.constants.alpha2;
        assert!((phi0(ts + a2, &p).unwrap() - s.beta2 * (ts + a2).sin()).abs() < 1e-15);
        let a3 = s.get(SectionId::S3).anchor;
        assert!((a3.coords()[1] - p.rho_star() * a3.coords()[0].sin()).abs() < 1e-12);
        for spec in &s.specs {
            for i in 0..=10 {
                let u = spec.length * i as f64 / 10.0;
                let pt = spec.point(u).unwrap();
                assert!(spec.event_value(&pt).abs() < 1e-12, "{}", spec.id);
                assert!((spec.coordinate(&pt) - u).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn inconsistent_overrides_rejected() {
        let p = Params::new(0.5, 0.05).unwrap();
        let o = SectionOverrides {
            beta4: Some(0.6),
            ..Default::default()
        };
        assert!(matches!(build_sections(&p, &o), Err(Error::Constraint(_))));
        let o = SectionOverrides {
            alpha1: Some(-0.1),
            ..Default::default()
        };
        assert!(matches!(build_sections(&p, &o), Err(Error::Constraint(_))));
    }
}
