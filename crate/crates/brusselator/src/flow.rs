//! Adaptive Dormand–Prince 5(4) integration with dense output, section
//! crossing detection and simultaneous accumulation of every clock.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frames::{
    check_domain, ledger_rates, rhs_into, Clock, FrameId, FrameState, Params, TimeLedger,
};
use crate::geometry::{phi0, CurveLabel, CurvePolyline};

/// Tolerances and limits for the integrator.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntegratorConfig {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_step: f64,
    pub max_steps: usize,
    pub event_tol: f64,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            rel_tol: 1e-10,
            abs_tol: 1e-12,
            max_step: f64::INFINITY,
            max_steps: 10_000_000,
            event_tol: 1e-12,
        }
    }
}

impl IntegratorConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.rel_tol > 0.0
            && self.abs_tol > 0.0
            && self.max_step > 0.0
            && self.max_steps > 0
            && self.event_tol > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(
                "integrator tolerances must be positive".into(),
            ))
        }
    }
}

// Dormand–Prince 5(4) tableau; the fields are autonomous so the nodes c_i are not needed.
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

/// Right-hand side of an autonomous system.
pub trait Rhs {
    fn eval(&mut self, y: &[f64], out: &mut [f64]) -> Result<()>;
}

impl<F: FnMut(&[f64], &mut [f64]) -> Result<()>> Rhs for F {
    fn eval(&mut self, y: &[f64], out: &mut [f64]) -> Result<()> {
        self(y, out)
    }
}

/// A stepping Dormand–Prince solver with proportional-integral step control.
pub struct Dopri5<F: Rhs> {
    f: F,
    cfg: IntegratorConfig,
    n: usize,
    /// Clock time of the current state.
    pub t: f64,
    /// Current state.
    pub y: Vec<f64>,
    /// State and time at the start of the last accepted step.
    pub y_prev: Vec<f64>,
    pub t_prev: f64,
    /// Size of the last accepted step.
    pub h_last: f64,
    h: f64,
    k: [Vec<f64>; 7],
    ytmp: Vec<f64>,
    ynew: Vec<f64>,
    cont: [Vec<f64>; 5],
    fac_old: f64,
    /// Number of accepted steps so far.
    pub steps: usize,
    /// Number of error-test rejections so far.
    pub rejections: usize,
}

impl<F: Rhs> Dopri5<F> {
    pub fn new(mut f: F, y0: &[f64], cfg: IntegratorConfig) -> Result<Self> {
        cfg.validate()?;
        let n = y0.len();
        let mut k0 = vec![0.0; n];
        f.eval(y0, &mut k0)?;
        let z = || vec![0.0; n];
        let mut s = Self {
            f,
            cfg,
            n,
            t: 0.0,
            y: y0.to_vec(),
            y_prev: y0.to_vec(),
            t_prev: 0.0,
            h_last: 0.0,
            h: 0.0,
            k: [k0, z(), z(), z(), z(), z(), z()],
            ytmp: z(),
            ynew: z(),
            cont: [z(), z(), z(), z(), z()],
            fac_old: 1e-4,
            steps: 0,
            rejections: 0,
        };
        s.h = s.initial_step()?;
        Ok(s)
    }

    fn scale(&self, a: f64, b: f64) -> f64 {
        self.cfg.abs_tol + self.cfg.rel_tol * a.abs().max(b.abs())
    }

    fn initial_step(&mut self) -> Result<f64> {
        let n = self.n;
        let mut dnf = 0.0;
        let mut dny = 0.0;
        for i in 0..n {
            let sk = self.scale(self.y[i], self.y[i]);
            dnf += (self.k[0][i] / sk).powi(2);
            dny += (self.y[i] / sk).powi(2);
        }
        let mut h = if dnf <= 1e-10 || dny <= 1e-10 {
            1e-6
        } else {
            (dny / dnf).sqrt() * 0.01
        };
        h = h.min(self.cfg.max_step);
        for i in 0..n {
            self.ytmp[i] = self.y[i] + h * self.k[0][i];
        }
        let mut f1 = vec![0.0; n];
        let ytmp = self.ytmp.clone();
        self.f.eval(&ytmp, &mut f1)?;
        let mut der2 = 0.0;
        for i in 0..n {
            let sk = self.scale(self.y[i], self.y[i]);
            der2 += ((f1[i] - self.k[0][i]) / sk).powi(2);
        }
        let der2 = der2.sqrt() / h;
        let der12 = der2.max(dnf.sqrt());
        let h1 = if der12 <= 1e-15 {
            (h * 1e-3).max(1e-6)
        } else {
            (0.01 / der12).powf(0.2)
        };
        Ok((100.0 * h).min(h1).min(self.cfg.max_step))
    }

    /// Computes one Runge–Kutta step of size `h` from (`y0`, `k1`), writing the
    /// fifth-order result into `out` and filling stages 2..7.
    fn rk_stages(&mut self, y0: &[f64], h: f64, out_err: bool) -> Result<f64> {
        let n = self.n;
        let y0 = y0.to_vec();
        macro_rules! stage {
            ($dst:expr, $($c:expr => $j:expr),+) => {{
                for i in 0..n {
                    self.ytmp[i] = y0[i] + h * (0.0 $(+ $c * self.k[$j][i])+);
                }
                let yt = std::mem::take(&mut self.ytmp);
                let mut kd = std::mem::take(&mut self.k[$dst]);
                let r = self.f.eval(&yt, &mut kd);
                self.ytmp = yt;
                self.k[$dst] = kd;
                r?;
            }};
        }
        stage!(1, A21 => 0);
        stage!(2, A31 => 0, A32 => 1);
        stage!(3, A41 => 0, A42 => 1, A43 => 2);
        stage!(4, A51 => 0, A52 => 1, A53 => 2, A54 => 3);
        stage!(5, A61 => 0, A62 => 1, A63 => 2, A64 => 3, A65 => 4);
        for i in 0..n {
            self.ynew[i] = y0[i]
                + h * (A71 * self.k[0][i]
                    + A73 * self.k[2][i]
                    + A74 * self.k[3][i]
                    + A75 * self.k[4][i]
                    + A76 * self.k[5][i]);
        }
        let yn = std::mem::take(&mut self.ynew);
        let mut k7 = std::mem::take(&mut self.k[6]);
        let r = self.f.eval(&yn, &mut k7);
        self.ynew = yn;
        self.k[6] = k7;
        r?;
        if !out_err {
            return Ok(0.0);
        }
        let mut err = 0.0;
        for i in 0..n {
            let e = h
                * (E1 * self.k[0][i]
                    + E3 * self.k[2][i]
                    + E4 * self.k[3][i]
                    + E5 * self.k[4][i]
                    + E6 * self.k[5][i]
                    + E7 * self.k[6][i]);
            let sk = self.scale(y0[i], self.ynew[i]);
            err += (e / sk).powi(2);
        }
        Ok((err / n as f64).sqrt())
    }

    /// Advances by one accepted step, never beyond `t_limit`.
    pub fn step(&mut self, t_limit: f64) -> Result<()> {
        const SAFE: f64 = 0.9;
        const BETA: f64 = 0.04;
        let expo1 = 0.2 - BETA * 0.75;
        let (facc1, facc2): (f64, f64) = (1.0 / 0.2, 1.0 / 10.0);
        let mut reject = false;
        loop {
            if self.steps >= self.cfg.max_steps {
                return Err(Error::MaxSteps(self.cfg.max_steps));
            }
            let mut h = self.h.min(self.cfg.max_step);
            let mut last = false;
            if self.t + h >= t_limit {
                h = t_limit - self.t;
                last = true;
            }
            if h <= f64::EPSILON * self.t.abs().max(1.0) * 4.0 && !last {
                return Err(Error::StepUnderflow(self.t));
            }
            let y0 = self.y.clone();
            let err = match self.rk_stages(&y0, h, true) {
                Ok(e) => e,
                Err(Error::Domain { .. }) | Err(Error::DomainExit(_)) => {
                    // A stage left the admissible set: shrink and retry.
                    self.h = h * 0.25;
                    reject = true;
                    self.rejections += 1;
                    continue;
                }
                Err(e) => return Err(e),
            };
            if !err.is_finite() {
                self.h = h * 0.25;
                reject = true;
                self.rejections += 1;
                continue;
            }
            let fac11 = err.powf(expo1);
            let mut fac = fac11 / self.fac_old.powf(BETA);
            fac = facc2.max(facc1.min(fac / SAFE));
            let mut hnew = h / fac;
            if err <= 1.0 {
                self.fac_old = err.max(1e-4);
                // Dense output coefficients.
                for i in 0..self.n {
                    let ydiff = self.ynew[i] - y0[i];
                    let bspl = h * self.k[0][i] - ydiff;
                    self.cont[0][i] = y0[i];
                    self.cont[1][i] = ydiff;
                    self.cont[2][i] = bspl;
                    self.cont[3][i] = ydiff - h * self.k[6][i] - bspl;
                    self.cont[4][i] = h
                        * (D1 * self.k[0][i]
                            + D3 * self.k[2][i]
                            + D4 * self.k[3][i]
                            + D5 * self.k[4][i]
                            + D6 * self.k[5][i]
                            + D7 * self.k[6][i]);
                }
                self.y_prev.copy_from_slice(&y0);
                self.t_prev = self.t;
                self.y.copy_from_slice(&self.ynew);
                self.t = if last { t_limit } else { self.t + h };
                self.h_last = h;
                let k7 = self.k[6].clone();
                self.k[0].copy_from_slice(&k7);
                if reject {
                    hnew = hnew.min(h);
                }
                self.h = hnew.min(self.cfg.max_step);
                self.steps += 1;
                return Ok(());
            }
            hnew = h / facc1.min(fac11 / SAFE);
            reject = true;
            self.rejections += 1;
            self.h = hnew;
        }
    }

    /// Dense output at fraction `theta` ∈ [0, 1] of the last accepted step.
    pub fn dense(&self, theta: f64, out: &mut [f64]) {
        let th1 = 1.0 - theta;
        for i in 0..self.n {
            out[i] = self.cont[0][i]
                + theta
                    * (self.cont[1][i]
                        + th1
                            * (self.cont[2][i]
                                + theta * (self.cont[3][i] + th1 * self.cont[4][i])));
        }
    }

    /// Recomputes a true Runge–Kutta sub-step of the last accepted step,
    /// from its start up to fraction `theta`. Does not alter the solver state
    /// except for scratch buffers and the first stage, which is restored.
    pub fn substep(&mut self, theta: f64, out: &mut [f64]) -> Result<()> {
        let h = theta * self.h_last;
        let saved_k = self.k.clone();
        let y0 = self.y_prev.clone();
        let mut k1 = vec![0.0; self.n];
        self.f.eval(&y0, &mut k1)?;
        self.k[0].copy_from_slice(&k1);
        let res = self.rk_stages(&y0, h, false);
        out.copy_from_slice(&self.ynew);
        self.k = saved_k;
        res.map(|_| ())
    }

    /// Replaces the current state (e.g. after clamping a coordinate).
    pub fn reset_state(&mut self, y: &[f64]) -> Result<()> {
        self.y.copy_from_slice(y);
        let mut k0 = vec![0.0; self.n];
        self.f.eval(y, &mut k0)?;
        self.k[0] = k0;
        Ok(())
    }
}

/// Crossing direction of an event function.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    Rising,
    Falling,
    Any,
}

impl Direction {
    fn crossed(&self, g0: f64, g1: f64) -> bool {
        let rising = g0 < 0.0 && g1 >= 0.0;
        let falling = g0 > 0.0 && g1 <= 0.0;
        match self {
            Direction::Rising => rising,
            Direction::Falling => falling,
            Direction::Any => rising || falling,
        }
    }
}

type EventFn<'a> = Box<dyn Fn(&FrameState) -> f64 + Send + Sync + 'a>;
type BoundsFn<'a> = Box<dyn Fn(&FrameState) -> bool + Send + Sync + 'a>;

/// A scalar event function with a crossing direction and an optional
/// admissibility predicate evaluated at the crossing state.
pub struct EventSpec<'a> {
    pub event_fn: EventFn<'a>,
    pub direction: Direction,
    pub bounds_fn: Option<BoundsFn<'a>>,
}

impl<'a> EventSpec<'a> {
    pub fn new(f: impl Fn(&FrameState) -> f64 + Send + Sync + 'a, direction: Direction) -> Self {
        Self {
            event_fn: Box::new(f),
            direction,
            bounds_fn: None,
        }
    }

    pub fn with_bounds(mut self, b: impl Fn(&FrameState) -> bool + Send + Sync + 'a) -> Self {
        self.bounds_fn = Some(Box::new(b));
        self
    }

    fn admits(&self, s: &FrameState) -> bool {
        self.bounds_fn.as_ref().is_none_or(|b| b(s))
    }
}

/// How an integration run ended.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TerminalStatus {
    Completed,
    EventHit,
    MaxSteps,
    DomainExit,
}

/// Samples of one integration run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Trajectory {
    pub frame: FrameId,
    pub times: Vec<f64>,
    pub states: Vec<FrameState>,
    pub ledgers: Vec<TimeLedger>,
    pub status: TerminalStatus,
    /// Number of accepted steps at which a negative radius was clamped to 0.
    pub clamped_steps: usize,
}

impl Trajectory {
    fn new(frame: FrameId) -> Self {
        Self {
            frame,
            times: Vec::new(),
            states: Vec::new(),
            ledgers: Vec::new(),
            status: TerminalStatus::Completed,
            clamped_steps: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last_state(&self) -> Option<&FrameState> {
        self.states.last()
    }

    /// Writes the trajectory as CSV: five clocks, chart time, then the state.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header: Vec<String> = ["tau", "t", "t1", "t2", "tau2", "chart_time"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        header.extend(self.frame.coord_names().iter().map(|s| s.to_string()));
        w.write_record(&header)?;
        for (st, lg) in self.states.iter().zip(&self.ledgers) {
            let mut row: Vec<String> = lg.to_array().iter().map(|v| fmt17(*v)).collect();
            row.extend(st.coords().iter().map(|v| fmt17(*v)));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Formats a float with 17 significant digits.
pub fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

/// Indices that must stay nonnegative in a frame.
fn nonneg_indices(frame: FrameId) -> &'static [usize] {
    match frame {
        FrameId::Polar | FrameId::Compact | FrameId::Rescaled | FrameId::Omega => &[1],
        FrameId::K1 | FrameId::K2 | FrameId::K3 => &[0, 1, 2],
        _ => &[],
    }
}

/// A crossing returned by [`integrate_to_event`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Crossing {
    pub state: FrameState,
    pub ledger: TimeLedger,
    /// Elapsed time in the frame's active clock.
    pub clock_time: f64,
}

/// Result of a multi-event run.
pub struct EventRun {
    pub crossing: Option<(usize, Crossing)>,
    pub trajectory: Option<Trajectory>,
}

/// Integrator bound to one frame; the state is augmented with the six ledger
/// clocks so every clock inherits the integrator's accuracy.
pub struct FrameIntegrator {
    pub frame: FrameId,
    pub params: Params,
    pub config: IntegratorConfig,
    /// When false only the active clock is tracked; the other ledger entries
    /// stay at their start values.
    pub track_clocks: bool,
}

fn augmented_rhs(
    frame: FrameId,
    params: Params,
    track: bool,
) -> impl FnMut(&[f64], &mut [f64]) -> Result<()> {
    let n = frame.dim();
    let own = own_clock_index(frame);
    move |y: &[f64], out: &mut [f64]| {
        rhs_into(frame, &y[..n], &params, &mut out[..n])?;
        if track {
            let rates = ledger_rates(frame, &y[..n], &params);
            out[n..n + 6].copy_from_slice(&rates);
        } else {
            out[n..n + 6].fill(0.0);
            out[n + own] = 1.0;
        }
        Ok(())
    }
}

/// Ledger slot of the frame's own clock.
fn own_clock_index(frame: FrameId) -> usize {
    match frame.clock() {
        Clock::Tau => 0,
        Clock::T => 1,
        Clock::T1 => 2,
        Clock::T2 => 3,
        Clock::Tau2 => 4,
        _ => 5,
    }
}

fn state_of(frame: FrameId, y: &[f64]) -> FrameState {
    let n = frame.dim();
    let mut c = [0.0; 3];
    c[..n].copy_from_slice(&y[..n]);
    FrameState::new(frame, &c[..n]).unwrap_or_else(|_| {
        // Non-finite values are reported by the caller through the domain check.
        FrameState::new(frame, &vec![f64::MAX; n]).expect("finite placeholder")
    })
}

fn ledger_of(frame: FrameId, y: &[f64]) -> TimeLedger {
    let n = frame.dim();
    TimeLedger::from_array(std::array::from_fn(|i| y[n + i]))
}

impl FrameIntegrator {
    pub fn new(frame: FrameId, params: Params, config: IntegratorConfig) -> Self {
        Self {
            frame,
            params,
            config,
            track_clocks: true,
        }
    }

    /// Integrates in the frame's own clock only. Useful where the other
    /// clock rates are so large that they would dominate step control.
    pub fn own_clock_only(mut self) -> Self {
        self.track_clocks = false;
        self
    }

    /// Integrates while watching `events`. Crossings rejected by an event's
    /// bounds are skipped. Returns at the first admitted crossing, or after
    /// `t_max` of the active clock.
    pub fn run(
        &self,
        start: &FrameState,
        start_ledger: TimeLedger,
        t_max: f64,
        events: &[EventSpec<'_>],
        record: bool,
    ) -> Result<EventRun> {
        if start.frame != self.frame {
            return Err(Error::FrameMismatch(start.frame.name(), self.frame.name()));
        }
        if !(t_max > 0.0) {
            return Err(Error::InvalidInput("duration must be positive".into()));
        }
        check_domain(start, &self.params)?;
        let n = self.frame.dim();
        let mut y0 = start.coords().to_vec();
        y0.extend_from_slice(&start_ledger.to_array());
        let mut solver = Dopri5::new(
            augmented_rhs(self.frame, self.params, self.track_clocks),
            &y0,
            self.config,
        )?;
        let mut traj = record.then(|| Trajectory::new(self.frame));
        if let Some(tr) = traj.as_mut() {
            tr.times.push(0.0);
            tr.states.push(*start);
            tr.ledgers.push(start_ledger);
        }
        let mut g_prev: Vec<f64> = events.iter().map(|e| (e.event_fn)(start)).collect();
        let nonneg = nonneg_indices(self.frame);
        let mut buf = vec![0.0; y0.len()];
        while solver.t < t_max {
            solver.step(t_max)?;
            // Clamp roundoff-level negative radii.
            let mut clamped = false;
            for &i in nonneg {
                if solver.y[i] < 0.0 {
                    solver.y[i] = 0.0;
                    clamped = true;
                }
            }
            if clamped {
                let y = solver.y.clone();
                solver.reset_state(&y)?;
                if let Some(tr) = traj.as_mut() {
                    tr.clamped_steps += 1;
                }
            }
            let st = state_of(self.frame, &solver.y);
            if let Err(e) = check_domain(&st, &self.params) {
                if let Some(tr) = traj.as_mut() {
                    tr.status = TerminalStatus::DomainExit;
                }
                return Err(Error::DomainExit(e.to_string()));
            }
            // Event detection in order of occurrence within the step.
            let mut best: Option<(usize, f64, Vec<f64>)> = None;
            for (k, ev) in events.iter().enumerate() {
                let g1 = (ev.event_fn)(&st);
                if ev.direction.crossed(g_prev[k], g1) {
                    let (theta, y) = self.localize(&mut solver, ev, g_prev[k], g1, &mut buf)?;
                    let s = state_of(self.frame, &y);
                    if ev.admits(&s) && best.as_ref().is_none_or(|b| theta < b.1) {
                        best = Some((k, theta, y));
                    }
                }
                g_prev[k] = g1;
            }
            if let Some((k, theta, y)) = best {
                let s = state_of(self.frame, &y);
                let lg = ledger_of(self.frame, &y);
                let clock_time = solver.t_prev + theta * solver.h_last;
                if let Some(tr) = traj.as_mut() {
                    tr.times.push(clock_time);
                    tr.states.push(s);
                    tr.ledgers.push(lg);
                    tr.status = TerminalStatus::EventHit;
                }
                return Ok(EventRun {
                    crossing: Some((
                        k,
                        Crossing {
                            state: s,
                            ledger: lg,
                            clock_time,
                        },
                    )),
                    trajectory: traj,
                });
            }
            if let Some(tr) = traj.as_mut() {
                tr.times.push(solver.t);
                tr.states.push(st);
                tr.ledgers.push(ledger_of(self.frame, &solver.y));
            }
            let _ = n;
        }
        Ok(EventRun {
            crossing: None,
            trajectory: traj,
        })
    }

    /// Locates a crossing inside the last step: bisection on the dense output
    /// (at most 40 halvings) followed by secant refinement on true sub-steps.
    /// Returns the step fraction and the augmented state on the far side of
    /// the section.
    fn localize<F: Rhs>(
        &self,
        solver: &mut Dopri5<F>,
        ev: &EventSpec<'_>,
        g0: f64,
        g1: f64,
        buf: &mut [f64],
    ) -> Result<(f64, Vec<f64>)> {
        let tol = self.config.event_tol;
        let frame = self.frame;
        let g_at = |y: &[f64]| (ev.event_fn)(&state_of(frame, y));
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        let (mut glo, mut ghi) = (g0, g1);
        for _ in 0..40 {
            let mid = 0.5 * (lo + hi);
            solver.dense(mid, buf);
            let gm = g_at(buf);
            if (gm < 0.0) == (glo < 0.0) && gm != 0.0 {
                lo = mid;
                glo = gm;
            } else {
                hi = mid;
                ghi = gm;
            }
            if ghi.abs() <= tol * 0.1 {
                break;
            }
        }
        // Refinement with true sub-steps, Illinois variant of regula falsi.
        let mut ylo = vec![0.0; buf.len()];
        let mut yhi = vec![0.0; buf.len()];
        let true_eval = |s: &mut Dopri5<F>, th: f64, out: &mut [f64]| -> Result<f64> {
            if th <= 0.0 {
                out.copy_from_slice(&s.y_prev);
            } else if th >= 1.0 {
                out.copy_from_slice(&s.y);
            } else {
                s.substep(th, out)?;
            }
            Ok(g_at(out))
        };
        let mut glo_t = true_eval(solver, lo, &mut ylo)?;
        let mut ghi_t = true_eval(solver, hi, &mut yhi)?;
        if ghi_t.abs() <= tol && (ghi_t == 0.0 || (ghi_t < 0.0) != (g0 < 0.0)) {
            return Ok((hi, yhi));
        }
        if (glo_t < 0.0) == (ghi_t < 0.0) {
            // Dense and true solutions disagree on the bracket; widen it.
            lo = 0.0;
            hi = 1.0;
            glo_t = true_eval(solver, lo, &mut ylo)?;
            ghi_t = true_eval(solver, hi, &mut yhi)?;
            if (glo_t < 0.0) == (ghi_t < 0.0) && ghi_t != 0.0 {
                return Ok((hi, yhi));
            }
        }
        let mut side = 0i32;
        let mut ytry = vec![0.0; buf.len()];
        for _ in 0..60 {
            let denom = ghi_t - glo_t;
            let mut th = if denom != 0.0 {
                hi - ghi_t * (hi - lo) / denom
            } else {
                0.5 * (lo + hi)
            };
            if !(th > lo && th < hi) {
                th = 0.5 * (lo + hi);
            }
            let gt = true_eval(solver, th, &mut ytry)?;
            if (gt < 0.0) == (glo_t < 0.0) && gt != 0.0 {
                lo = th;
                glo_t = gt;
                ylo.copy_from_slice(&ytry);
                if side == -1 {
                    ghi_t *= 0.5;
                }
                side = -1;
            } else {
                hi = th;
                ghi_t = gt;
                yhi.copy_from_slice(&ytry);
                if side == 1 {
                    glo_t *= 0.5;
                }
                side = 1;
            }
            if gt.abs() <= tol || (hi - lo) * solver.h_last.abs() <= 1e-15 * solver.t.abs().max(1.0)
            {
                break;
            }
        }
        // Regula falsi can stall when one end sits at roundoff level; finish
        // with plain bisection on the true solution.
        let mut ghi_abs = g_at(&yhi).abs();
        for _ in 0..100 {
            if ghi_abs <= tol || hi - lo <= f64::EPSILON * hi {
                break;
            }
            let th = 0.5 * (lo + hi);
            let gt = true_eval(solver, th, &mut ytry)?;
            if (gt < 0.0) == (g0 < 0.0) && gt != 0.0 {
                lo = th;
            } else {
                hi = th;
                ghi_abs = gt.abs();
                yhi.copy_from_slice(&ytry);
            }
        }
        Ok((hi, yhi))
    }
}

/// Integrates `duration` units of the start frame's active clock.
pub fn integrate(
    start: &FrameState,
    duration: f64,
    params: &Params,
    config: &IntegratorConfig,
) -> Result<Trajectory> {
    let fi = FrameIntegrator::new(start.frame, *params, *config);
    let run = fi.run(start, TimeLedger::default(), duration, &[], true)?;
    Ok(run.trajectory.expect("recording requested"))
}

/// Integrates until the event fires, returning the crossing state and ledger.
pub fn integrate_to_event(
    start: &FrameState,
    event: &EventSpec<'_>,
    params: &Params,
    config: &IntegratorConfig,
    t_max: f64,
) -> Result<Crossing> {
    // Run with bounds disabled so that a rejected first crossing is reported.
    let probe = EventSpec {
        event_fn: Box::new(|s: &FrameState| (event.event_fn)(s)),
        direction: event.direction,
        bounds_fn: None,
    };
    let fi = FrameIntegrator::new(start.frame, *params, *config);
    let run = fi.run(
        start,
        TimeLedger::default(),
        t_max,
        std::slice::from_ref(&probe),
        false,
    )?;
    match run.crossing {
        Some((_, c)) => {
            if event.admits(&c.state) {
                Ok(c)
            } else {
                Err(Error::BoundsRejected)
            }
        }
        None => Err(Error::NoCrossing(t_max)),
    }
}

/// Integrates a generic autonomous system (frame-agnostic), returning the
/// final state. Used for solver validation on closed-form test problems.
pub fn integrate_plain<F>(
    f: F,
    y0: &[f64],
    duration: f64,
    config: &IntegratorConfig,
) -> Result<Vec<f64>>
where
    F: FnMut(&[f64], &mut [f64]) -> Result<()>,
{
    let mut s = Dopri5::new(f, y0, *config)?;
    while s.t < duration {
        s.step(duration)?;
    }
    Ok(s.y)
}

/// Branch of the critical manifold whose perturbation is extracted.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SlowBranch {
    S1,
    S2,
}

/// Window for slow-manifold extraction: θ for S2, r̄ for S1.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub lo: f64,
    pub hi: f64,
}

/// Numerically extracts the slow manifold S¹_ε or S²_ε (RESCALED frame) over
/// a window, by launching two trajectories from transversal starts and
/// accepting once they agree to 1e-9 at the window entrance.
pub fn extract_slow_manifold(
    branch: SlowBranch,
    window: Window,
    params: &Params,
    config: &IntegratorConfig,
) -> Result<CurvePolyline> {
    if !(window.lo < window.hi) {
        return Err(Error::InvalidInput("window must satisfy lo < hi".into()));
    }
    match branch {
        SlowBranch::S2 => extract_s2(window, params, config),
        SlowBranch::S1 => extract_s1(window, params, config),
    }
}

const TRANSIENT_TOL: f64 = 1e-9;

fn extract_s2(window: Window, params: &Params, config: &IntegratorConfig) -> Result<CurvePolyline> {
    use std::f64::consts::FRAC_PI_2;
    let ts = Params::theta_star();
    if window.lo < ts + 0.1 - 1e-12 || window.hi > FRAC_PI_2 - 0.1 + 1e-12 {
        return Err(Error::InvalidInput(format!(
            "S2 window [{}, {}] must stay 0.1 away from the fold and pi/2",
            window.lo, window.hi
        )));
    }
    if params.epsilon == 0.0 {
        return s2_layer_limit(window, params, config);
    }
    let fi = FrameIntegrator::new(FrameId::Rescaled, *params, *config);
    let entry = window.hi;
    let exit = window.lo;
    let mut gap = 0.05;
    for _ in 0..6 {
        let th0 = FRAC_PI_2 - gap;
        let base = phi0(th0, params)?;
        let mut results = Vec::new();
        for fac in [0.8, 1.2] {
            let st = FrameState::planar(FrameId::Rescaled, th0, base * fac)?;
            let ev = EventSpec::new(
                move |s: &FrameState| s.coords()[0] - entry,
                Direction::Falling,
            );
            let run = fi.run(
                &st,
                TimeLedger::default(),
                1e9,
                std::slice::from_ref(&ev),
                false,
            )?;
            let (_, c) = run.crossing.ok_or(Error::NoCrossing(1e9))?;
            results.push(c.state);
        }
        if (results[0].coords()[1] - results[1].coords()[1]).abs() < TRANSIENT_TOL {
            let ev = EventSpec::new(
                move |s: &FrameState| s.coords()[0] - exit,
                Direction::Falling,
            );
            let run = fi.run(
                &results[0],
                TimeLedger::default(),
                1e9,
                std::slice::from_ref(&ev),
                true,
            )?;
            let tr = run.trajectory.expect("recorded");
            let pts: Vec<[f64; 2]> = tr
                .states
                .iter()
                .map(|s| [s.coords()[0], s.coords()[1]])
                .collect();
            return CurvePolyline::new(
                dedup(pts),
                FrameId::Rescaled,
                CurveLabel::Custom("S2_eps".into()),
            );
        }
        gap *= 0.5;
    }
    Err(Error::NonConvergence("S2 transient did not settle".into()))
}

/// ε = 0: S₀² consists of equilibria; each sample is the end point of a layer
/// trajectory launched on the fast fiber through the target point.
fn s2_layer_limit(
    window: Window,
    params: &Params,
    config: &IntegratorConfig,
) -> Result<CurvePolyline> {
    let samples = 64;
    let mut pts = Vec::with_capacity(samples);
    for i in 0..samples {
        let th = window.lo + (window.hi - window.lo) * i as f64 / (samples - 1) as f64;
        let rho = phi0(th, params)? / th.sin();
        let th0 = th + 0.03;
        let st = FrameState::planar(FrameId::Rescaled, th0, rho * th0.sin())?;
        let tr = integrate(&st, 400.0, params, config)?;
        let end = tr.last_state().expect("nonempty");
        pts.push([end.coords()[0], end.coords()[1]]);
    }
    CurvePolyline::new(
        dedup(pts),
        FrameId::Rescaled,
        CurveLabel::Custom("S2_0".into()),
    )
}

fn extract_s1(window: Window, params: &Params, config: &IntegratorConfig) -> Result<CurvePolyline> {
    use std::f64::consts::FRAC_PI_4;
    if window.lo < 0.1 {
        return Err(Error::InvalidInput(
            "S1 window must stay 0.1 away from r = 0".into(),
        ));
    }
    let fi = FrameIntegrator::new(FrameId::Rescaled, *params, *config);
    let entry = window.hi;
    let exit = window.lo;
    let mut lead = 0.3;
    for _ in 0..6 {
        let r0 = window.hi + lead;
        let mut results = Vec::new();
        for off in [0.02, 0.1] {
            let st = FrameState::planar(FrameId::Rescaled, FRAC_PI_4 + off, r0)?;
            let ev = EventSpec::new(
                move |s: &FrameState| s.coords()[1] - entry,
                Direction::Falling,
            );
            let run = fi.run(
                &st,
                TimeLedger::default(),
                1e12,
                std::slice::from_ref(&ev),
                false,
            )?;
            let (_, c) = run.crossing.ok_or(Error::NoCrossing(1e12))?;
            results.push(c.state);
        }
        if (results[0].coords()[0] - results[1].coords()[0]).abs() < TRANSIENT_TOL {
            let ev = EventSpec::new(
                move |s: &FrameState| s.coords()[1] - exit,
                Direction::Falling,
            );
            let run = fi.run(
                &results[0],
                TimeLedger::default(),
                1e12,
                std::slice::from_ref(&ev),
                true,
            )?;
            let tr = run.trajectory.expect("recorded");
            let pts: Vec<[f64; 2]> = tr
                .states
                .iter()
                .map(|s| [s.coords()[0], s.coords()[1]])
                .collect();
            return CurvePolyline::new(
                dedup(pts),
                FrameId::Rescaled,
                CurveLabel::Custom("S1_eps".into()),
            );
        }
        lead *= 2.0;
    }
    Err(Error::NonConvergence("S1 transient did not settle".into()))
}

fn dedup(pts: Vec<[f64; 2]>) -> Vec<[f64; 2]> {
    let mut out: Vec<[f64; 2]> = Vec::with_capacity(pts.len());
    for p in pts {
        if out.last() != Some(&p) {
            out.push(p);
        }
    }
    out
}
