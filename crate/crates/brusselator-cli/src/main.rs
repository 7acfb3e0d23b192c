//! Command-line front end of the brusselator toolkit.
//!
//! Exit codes: 0 when every check passes, 1 when a check fails, 2 for usage
//! errors, 3 for numerical failures.

mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use brusselator::blowup::{
    chart_consistency, exit_image_scaling, invariant_drifts, k2_fold_report,
    verify_exit_bounds_batch, ExitChartConstants, EXIT_IMAGE_GRID,
};
use brusselator::flow::{integrate, IntegratorConfig};
use brusselator::frames::{frame_coherence, hopf_threshold, FrameId, FrameState, Params};
use brusselator::geometry::{
    sigma_curves, sigma_curves_rescaled, singular_cycle, write_polylines_csv,
};
use brusselator::poincare::{build_sections, cycle_config, SectionId, SectionOverrides};
use brusselator::sweep::{
    hausdorff_convergence, measure_cycle, rescaled_cycle_polyline, run_sweep, scaling_report,
    Quantity, SweepPlan, DEFAULT_GRID, EXIT_IMAGE_R0, HAUSDORFF_GRID,
};
use brusselator::Error;
use svg::{Plot, Series, PALETTE};

/// Samples per branch for exported geometric curves.
const CURVE_SAMPLES: usize = 512;

#[derive(Parser, Debug)]
#[command(
    name = "brusselator",
    version,
    about = "Geometric singular perturbation toolkit for the Brusselator"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Model parameter a.
    #[arg(long, global = true, default_value_t = 0.5)]
    a: f64,
    /// Singular perturbation parameter ε (b = a/ε).
    #[arg(long, global = true, default_value_t = 0.1)]
    epsilon: f64,
    /// Output directory, created if missing.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// Relative integration tolerance (defaults depend on the command).
    #[arg(long, global = true)]
    rel_tol: Option<f64>,
    /// Absolute integration tolerance.
    #[arg(long, global = true)]
    abs_tol: Option<f64>,
    /// Also write SVG plots.
    #[arg(long, global = true)]
    plot: bool,
    /// Plot the √ε-rescaled curves σ̄ᵢ instead of σᵢ.
    #[arg(long, global = true)]
    rescaled: bool,
    /// Omit the timestamp field from JSON reports.
    #[arg(long, global = true)]
    no_timestamp: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Integrate one trajectory and write it with all clocks.
    Simulate {
        /// Frame name (XY, XYSLOW, XYFAST, POLAR, COMPACT, RESCALED, OMEGA, K1, K2, K3).
        #[arg(long, default_value = "XY")]
        frame: String,
        /// Comma-separated start coordinates; defaults near the XY equilibrium.
        #[arg(long)]
        start: Option<String>,
        /// Duration in the frame's own clock.
        #[arg(long, default_value_t = 60.0)]
        duration: f64,
    },
    /// Compute the attracting limit cycle.
    Cycle,
    /// Run an ε sweep: a single quantity, `hausdorff`, or `all` for the scaling report.
    Sweep {
        /// rho_eps, dwell_sigma{1..4}_{t,t2}, s1_residual, s2_residual,
        /// fold_deviation, exit_image, hausdorff or all.
        #[arg(long, default_value = "all")]
        quantity: String,
        /// Comma-separated grid overriding the default.
        #[arg(long, value_delimiter = ',')]
        grid: Option<Vec<f64>>,
    },
    /// Frame and chart coherence, conserved quantities and fold data.
    ChartsCheck {
        /// Random states per frame edge.
        #[arg(long, default_value_t = 100)]
        samples: usize,
        /// Seed of the state sampler.
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Exit-chart hitting-time and sandwich bounds.
    BoundsCheck {
        /// Exit height δ of η₃.
        #[arg(long, default_value_t = 0.2)]
        delta: f64,
        /// Number of initial points on the entry face.
        #[arg(long, default_value_t = 20)]
        samples: usize,
    },
    /// Export the singular cycle, the σ curves and the sections as CSV.
    Export,
}

/// Outcome that is not a plain success.
enum Failure {
    Check(String),
    Usage(String),
    Numerical(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidParams(_) | Error::InvalidInput(_) | Error::Constraint(_) => {
                Failure::Usage(e.to_string())
            }
            Error::Io(_) => Failure::Usage(e.to_string()),
            other => Failure::Numerical(other.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Usage(format!("i/o failure: {e}"))
    }
}

type CmdResult = Result<(), Failure>;

struct Context {
    params: Params,
    config: IntegratorConfig,
    out: PathBuf,
    plot: bool,
    rescaled: bool,
    timestamp: bool,
}

impl Context {
    fn from_common(c: &Common, base: IntegratorConfig) -> Result<Self, Failure> {
        let params = Params::new(c.a, c.epsilon)?;
        let mut config = base;
        if let Some(r) = c.rel_tol {
            config.rel_tol = r;
        }
        if let Some(a) = c.abs_tol {
            config.abs_tol = a;
        }
        config.validate()?;
        std::fs::create_dir_all(&c.out)?;
        Ok(Self {
            params,
            config,
            out: c.out.clone(),
            plot: c.plot,
            rescaled: c.rescaled,
            timestamp: !c.no_timestamp,
        })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn write_json(&self, name: &str, mut v: Value) -> CmdResult {
        if self.timestamp {
            let secs = std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0);
            if let Value::Object(m) = &mut v {
                m.insert("timestamp".into(), json!(secs));
            }
        }
        let text =
            serde_json::to_string_pretty(&v).map_err(|e| Failure::Numerical(e.to_string()))?;
        std::fs::write(self.path(name), text + "\n")?;
        Ok(())
    }
}

fn parse_coords(s: &str) -> Result<Vec<f64>, Failure> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| Failure::Usage(format!("bad coordinate '{t}'")))
        })
        .collect()
}

fn cmd_simulate(ctx: &Context, frame: &str, start: Option<&str>, duration: f64) -> CmdResult {
    let frame: FrameId = frame.parse()?;
    if !(duration > 0.0 && duration.is_finite()) {
        return Err(Failure::Usage(format!(
            "duration must be positive, got {duration}"
        )));
    }
    let p = &ctx.params;
    let coords = match start {
        Some(s) => parse_coords(s)?,
        None if frame == FrameId::Xy && p.epsilon > 0.0 => vec![1.1 * p.a, p.b() / p.a],
        None => {
            return Err(Failure::Usage(format!(
                "--start is required for frame {frame}"
            )))
        }
    };
    let state = FrameState::new(frame, &coords)?;
    let traj = integrate(&state, duration, p, &ctx.config)?;
    traj.write_csv(&ctx.path("trajectory.csv"))?;
    if ctx.plot {
        let names = frame.coord_names();
        let pts: Vec<[f64; 2]> = traj
            .states
            .iter()
            .map(|s| [s.coords()[0], s.coords()[1]])
            .collect();
        Plot {
            title: format!(
                "{frame} trajectory, a = {}, eps = {} (clock {})",
                p.a,
                p.epsilon,
                frame.clock().name()
            ),
            x_label: format!("{} [{frame}]", names[0]),
            y_label: format!("{} [{frame}]", names[1]),
            series: vec![Series::new("trajectory", pts, PALETTE[0])],
        }
        .write(&ctx.path("trajectory.svg"))?;
    }
    println!("simulate: {} samples written", traj.len());
    Ok(())
}

fn cmd_cycle(ctx: &Context) -> CmdResult {
    let p = &ctx.params;
    let (cycle, _) = measure_cycle(p, &ctx.config)?;
    cycle.polyline.write_csv(&ctx.path("cycle.csv"))?;
    let mut v = cycle.to_json(Some("cycle.csv"));
    let branches: Vec<Value> = cycle
        .branches
        .iter()
        .map(|b| {
            json!({
                "branch": format!("sigma{}", b.branch),
                "points": b.polyline.points.len(),
                "t": b.ledger.t,
                "t2": b.ledger.t2,
                "dwell_t": b.dwell.map(|d| d.t),
                "dwell_t2": b.dwell.map(|d| d.t2),
            })
        })
        .collect();
    if let Value::Object(m) = &mut v {
        m.insert("branches".into(), Value::Array(branches));
    }
    ctx.write_json("cycle.json", v)?;
    if ctx.plot {
        let mut series = Vec::new();
        let (title, curves) = if ctx.rescaled {
            series.push(Series::new(
                "cycle (sqrt(eps) scaled)",
                rescaled_cycle_polyline(&cycle)?.points,
                PALETTE[0],
            ));
            let bars = sigma_curves_rescaled(p, cycle.rho_eps, CURVE_SAMPLES)?;
            ("limit cycle and rescaled curves", bars[1..].to_vec())
        } else {
            let xy: Vec<[f64; 2]> = cycle
                .polyline
                .points
                .iter()
                .filter_map(|q| {
                    let st = FrameState::planar(FrameId::Rescaled, q[0], q[1]).ok()?;
                    let t = brusselator::frames::transform_state(&st, FrameId::XyFast, p).ok()?;
                    Some([t.coords()[0], t.coords()[1]])
                })
                .collect();
            series.push(Series::new("cycle", xy, PALETTE[0]));
            (
                "limit cycle and sigma curves",
                sigma_curves(p, cycle.rho_eps, CURVE_SAMPLES)?.to_vec(),
            )
        };
        for (k, c) in curves.iter().enumerate() {
            series.push(
                Series::new(c.label.to_string(), c.points.clone(), PALETTE[1 + k % 5]).dashed(),
            );
        }
        Plot {
            title: format!("{title}, a = {}, eps = {}", p.a, p.epsilon),
            x_label: "x [XYFAST]".into(),
            y_label: "y [XYFAST]".into(),
            series,
        }
        .write(&ctx.path("cycle.svg"))?;
    }
    println!(
        "cycle: rho_eps = {:.6e}, closure gap = {:.3e}, {} iterations",
        cycle.rho_eps, cycle.closure_gap, cycle.iterations
    );
    Ok(())
}

fn cmd_sweep(ctx: &Context, quantity: &str, grid: Option<Vec<f64>>) -> CmdResult {
    match quantity {
        "all" => {
            let grid = grid.unwrap_or_else(|| DEFAULT_GRID.to_vec());
            let rep = scaling_report(&ctx.params, &grid, &ctx.config)?;
            ctx.write_json("scaling_report.json", rep.to_json())?;
            for c in &rep.checks {
                let v = c.value.map_or_else(|| "n/a".into(), |v| format!("{v:.4}"));
                println!(
                    "{:<20} {:>10} [{}, {}] {}",
                    c.name,
                    v,
                    c.lo,
                    c.hi,
                    if c.pass { "PASS" } else { "FAIL" }
                );
            }
            if rep.all_pass() {
                Ok(())
            } else {
                Err(Failure::Check("scaling report has failing checks".into()))
            }
        }
        "hausdorff" => {
            let mut grid = grid.unwrap_or_else(|| HAUSDORFF_GRID.to_vec());
            grid.sort_by(|a, b| b.total_cmp(a));
            let rows = hausdorff_convergence(&ctx.params, &grid, &ctx.config)?;
            let dec = |f: fn(&brusselator::sweep::HausdorffRow) -> f64| {
                rows.windows(2).all(|w| f(&w[1]) < f(&w[0]))
            };
            let pass = dec(|r| r.singular) && dec(|r| r.rescaled);
            ctx.write_json(
                "hausdorff.json",
                json!({ "rows": rows, "strictly_decreasing": pass }),
            )?;
            for r in &rows {
                println!(
                    "eps {:<8} d_H {:.6e}  rescaled {:.6e}",
                    r.epsilon, r.singular, r.rescaled
                );
            }
            if pass {
                Ok(())
            } else {
                Err(Failure::Check("Hausdorff distances do not decrease".into()))
            }
        }
        q => {
            let q: Quantity = q.parse()?;
            let mut plan = SweepPlan::new(ctx.params, q);
            plan.config = ctx.config;
            if let Some(g) = grid {
                plan = plan.with_grid(g);
            }
            let table = run_sweep(&plan)?;
            let name = format!("sweep_{q}");
            table.write_csv(&ctx.path(&format!("{name}.csv")))?;
            let fit = table.fit().ok();
            let mut v = table.to_json();
            if let Value::Object(m) = &mut v {
                m.insert(
                    "fit".into(),
                    serde_json::to_value(&fit).unwrap_or(Value::Null),
                );
            }
            ctx.write_json(&format!("{name}.json"), v)?;
            for r in &table.rows {
                println!(
                    "{:<8} {:>24} {}",
                    r.epsilon,
                    r.value.map_or("NaN".into(), |v| format!("{v:.10e}")),
                    r.status
                );
            }
            if let Some(f) = fit {
                println!("slope {:.4} (r^2 {:.4})", f.slope, f.r_squared);
            }
            if table.rows.iter().all(|r| r.value.is_some()) {
                Ok(())
            } else {
                Err(Failure::Numerical("some grid points failed".into()))
            }
        }
    }
}

/// Threshold on frame pushforward defects.
const PUSHFORWARD_TOL: f64 = 1e-6;
/// Threshold on round trips and chart compositions.
const ROUND_TRIP_TOL: f64 = 1e-12;
/// Threshold on conserved-quantity drift.
const DRIFT_TOL: f64 = 1e-8;

fn cmd_charts_check(ctx: &Context, samples: usize, seed: u64) -> CmdResult {
    let p = &ctx.params;
    let hopf = hopf_threshold(p.a, 0.5 * p.b_crit(), 2.0 * p.b_crit())?;
    let hopf_ok = (hopf - p.b_crit()).abs() <= 1e-9;
    let edges = frame_coherence(p.a, samples, seed)?;
    let edges_ok = edges
        .iter()
        .all(|e| e.max_pushforward <= PUSHFORWARD_TOL && e.max_round_trip <= ROUND_TRIP_TOL);
    let charts = chart_consistency(p, samples, seed)?;
    let charts_ok =
        charts.composition <= 1e-10 && charts.blow_down <= 1e-10 && charts.equilibria <= 1e-9;
    let drifts = invariant_drifts(p, &IntegratorConfig::default())?;
    let drifts_ok = drifts.iter().all(|d| d.drift <= DRIFT_TOL);
    let fold = k2_fold_report(p);
    let pass = hopf_ok && edges_ok && charts_ok && drifts_ok && fold.nondegenerate();
    let report = json!({
        "hopf": {"b_crit": p.b_crit(), "computed": hopf, "pass": hopf_ok},
        "frames": {
            "edges": edges.iter().map(|e| json!({
                "from": e.from.name(), "to": e.to.name(), "samples": e.samples,
                "max_pushforward": e.max_pushforward, "max_round_trip": e.max_round_trip,
            })).collect::<Vec<_>>(),
            "pass": edges_ok,
        },
        "charts": {
            "composition": charts.composition, "blow_down": charts.blow_down,
            "equilibria": charts.equilibria, "pass": charts_ok,
        },
        "invariants": {
            "drifts": drifts.iter().map(|d| json!({"name": d.name, "drift": d.drift})).collect::<Vec<_>>(),
            "pass": drifts_ok,
        },
        "k2_fold": fold.to_json(),
        "pass": pass,
    });
    ctx.write_json("charts_check.json", report)?;
    println!("charts-check: {}", if pass { "PASS" } else { "FAIL" });
    if pass {
        Ok(())
    } else {
        Err(Failure::Check("chart checks failed".into()))
    }
}

fn cmd_bounds_check(ctx: &Context, delta: f64, samples: usize) -> CmdResult {
    if samples == 0 {
        return Err(Failure::Usage("samples must be positive".into()));
    }
    let p = &ctx.params;
    let consts = ExitChartConstants::with_delta(delta, p)?;
    let cfg = IntegratorConfig::default();
    let batch = verify_exit_bounds_batch(&consts, samples, p, &cfg)?;
    let (fit, table) = exit_image_scaling(EXIT_IMAGE_R0, &EXIT_IMAGE_GRID, &consts, p, &cfg)?;
    let image_ok = (2.7..=3.3).contains(&fit.slope);
    let mut v = batch.to_json();
    if let Value::Object(m) = &mut v {
        m.insert(
            "exit_image".into(),
            json!({"r0": EXIT_IMAGE_R0, "table": table, "slope": fit.slope, "r_squared": fit.r_squared, "pass": image_ok}),
        );
    }
    ctx.write_json("bounds_check.json", v)?;
    let pass = batch.all_ok() && image_ok;
    println!(
        "bounds-check: {} of {} initials within bounds, exit-image slope {:.4}: {}",
        batch.reports.iter().filter(|r| r.ok()).count(),
        batch.reports.len(),
        fit.slope,
        if pass { "PASS" } else { "FAIL" }
    );
    if pass {
        Ok(())
    } else {
        Err(Failure::Check("exit bounds violated".into()))
    }
}

fn cmd_export(ctx: &Context) -> CmdResult {
    let p = &ctx.params;
    let sc = singular_cycle(p, CURVE_SAMPLES)?;
    write_polylines_csv(&sc.branches, &ctx.path("singular_cycle.csv"))?;
    let sections = build_sections(p, &SectionOverrides::default())?;
    let secs = SectionId::ALL
        .iter()
        .map(|&id| sections.get(id).polyline(65))
        .collect::<Result<Vec<_>, _>>()?;
    write_polylines_csv(&secs, &ctx.path("sections.csv"))?;
    let (cycle, _) = measure_cycle(p, &ctx.config)?;
    let sig = sigma_curves(p, cycle.rho_eps, CURVE_SAMPLES)?;
    write_polylines_csv(&sig, &ctx.path("sigma_curves.csv"))?;
    let bars = sigma_curves_rescaled(p, cycle.rho_eps, CURVE_SAMPLES)?;
    write_polylines_csv(&bars, &ctx.path("sigma_bar_curves.csv"))?;
    if ctx.plot {
        let mut series: Vec<Series> = sc
            .branches
            .iter()
            .enumerate()
            .map(|(k, b)| {
                Series::new(b.label.to_string(), b.points.clone(), PALETTE[1 + k % 5]).dashed()
            })
            .collect();
        series.push(Series::new(
            "cycle",
            cycle.polyline.points.clone(),
            PALETTE[0],
        ));
        Plot {
            title: format!(
                "singular cycle and limit cycle, a = {}, eps = {}",
                p.a, p.epsilon
            ),
            x_label: "theta [RESCALED]".into(),
            y_label: "r [RESCALED]".into(),
            series,
        }
        .write(&ctx.path("singular_cycle.svg"))?;
    }
    println!("export: curves written to {}", ctx.out.display());
    Ok(())
}

fn run(cli: &Cli) -> CmdResult {
    let base = match cli.command {
        Command::Simulate { .. } => IntegratorConfig::default(),
        _ => cycle_config(),
    };
    let ctx = Context::from_common(&cli.common, base)?;
    match &cli.command {
        Command::Simulate {
            frame,
            start,
            duration,
        } => cmd_simulate(&ctx, frame, start.as_deref(), *duration),
        Command::Cycle => cmd_cycle(&ctx),
        Command::Sweep { quantity, grid } => cmd_sweep(&ctx, quantity, grid.clone()),
        Command::ChartsCheck { samples, seed } => cmd_charts_check(&ctx, *samples, *seed),
        Command::BoundsCheck { delta, samples } => cmd_bounds_check(&ctx, *delta, *samples),
        Command::Export => cmd_export(&ctx),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Check(m)) => {
            eprintln!("check failed: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(m)) => {
            eprintln!("usage error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Numerical(m)) => {
            eprintln!("numerical failure: {m}");
            ExitCode::from(3)
        }
    }
}
