//! Experiment recipes: each writes `monitors.csv`, snapshots and `report.txt` into the
//! output directory and returns the report.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use neckflow_core::cutoff::build_chi;
use neckflow_core::geometry::mean_curvature;
use neckflow_core::monitors::MonitorSeries;
use neckflow_core::rescaled::{spawn_zoom, step, FlowState, StepControls, StepStatus, ZoomSpec};
use neckflow_core::run::{modulated_run, neck_initial, neck_outer, pinch_run, tail, Observer, PinchConfig, PinchSample};
use neckflow_core::spectral::{build_operator, least_squares_slope, propagator_decay_check, OperatorParams, OperatorTag};
use neckflow_core::{Error, FieldRole, GraphField, Grid};

use crate::config::{Experiment, Initial, RunConfig};
use crate::report::{table_checks, Report};
use crate::snapshot;
use crate::table::{Row, Table, TableWriter};

pub const MONITORS: &str = "monitors.csv";
pub const PINCH: &str = "pinch.csv";
pub const REPORT: &str = "report.txt";
pub const FINAL_SNAPSHOT: &str = "final.nfs";

/// Runs the configured recipe and writes its artifacts.
pub fn run_experiment(cfg: &RunConfig) -> Result<Report> {
    fs::create_dir_all(&cfg.out_dir).with_context(|| format!("creating {}", cfg.out_dir.display()))?;
    let mut report = match cfg.experiment {
        Experiment::Cylinder => cylinder(cfg)?,
        Experiment::Sphere => sphere(cfg)?,
        Experiment::NeckpinchD1 => neckpinch(cfg)?,
        Experiment::Zoom => zoom(cfg)?,
        Experiment::SpectralSuite => spectral_suite(cfg)?,
    };
    report.note(format!("seed={} out={}", cfg.seed, cfg.out_dir.display()));
    report.write(&cfg.out_dir.join(REPORT))?;
    Ok(report)
}

fn grid(cfg: &RunConfig) -> Result<Arc<Grid>> {
    let g = cfg.grid;
    Ok(Grid::new(g.dim, g.n_y, g.y_max, g.n_theta)?)
}

fn controls(cfg: &RunConfig) -> StepControls {
    StepControls { safety: cfg.safety, eps: cfg.eps, ..StepControls::default() }
}

/// Smallest mean curvature over `|y| ≤ r`.
pub fn window_min_h(f: &GraphField, r: f64) -> Result<f64> {
    let g = f.grid();
    let nt = g.n_theta();
    let h = mean_curvature(f)?;
    let mut m = f64::INFINITY;
    for k in (0..g.n_y_nodes()).filter(|&k| g.y_norm2(k) <= r * r) {
        m = h.values()[k * nt..(k + 1) * nt].iter().copied().fold(m, f64::min);
    }
    Ok(m)
}

fn append_table_checks(report: &mut Report, csv: &Path) -> Result<()> {
    let t = Table::load(csv)?;
    report.checks.extend(table_checks(&t));
    Ok(())
}

/// `u₀ ≡ c`: `(min u)² = c² − 2t` until `min u` reaches `stop_min`.
fn cylinder(cfg: &RunConfig) -> Result<Report> {
    let Initial::Constant { value } = cfg.initial else { bail!("cylinder recipe needs a constant initial radius") };
    let g = grid(cfg)?;
    let u = GraphField::from_fn(&g, FieldRole::Unrescaled, |_, _| value)?;
    let mut s = FlowState::unrescaled(u, cfg.t0, None)?;
    let c = StepControls { pinch: 0.5 * cfg.stop_min, ..controls(cfg) };
    let path = cfg.out_dir.join(MONITORS);
    let mut w = TableWriter::create(&path, cfg.experiment.tag(), g.dim())?;
    let mut worst: f64 = 0.0;
    loop {
        let (m, _) = s.field.min();
        w.push(&Row::from_sample(g.dim(), s.time(), m, window_min_h(&s.field, cfg.window)?, s.last_dt))?;
        if m < cfg.stop_min || cfg.t_end.is_some_and(|te| s.time() >= te) {
            break;
        }
        worst = worst.max((m * m - (value * value - 2.0 * (s.time() - cfg.t0))).abs());
        if step(&mut s, &c)? == StepStatus::BlowUp {
            break;
        }
    }
    drop(w);
    let mut r = Report::new("cylinder");
    r.check("cylinder law", worst <= 1e-6, format!("max |u² − (c² − 2t)| = {worst:.3e} over {} steps", s.steps));
    append_table_checks(&mut r, &path)?;
    snapshot::write(&cfg.out_dir.join(FINAL_SNAPSHOT), &s)?;
    Ok(r)
}

/// Sphere-cap radius history `(t, R)` with `R` the θ-mean of `u` at the origin.
pub fn sphere_history(g: &Arc<Grid>, radius: f64, horizon: f64, c: &StepControls) -> Result<Vec<(f64, f64)>> {
    let d = g.dim();
    let reach: f64 = g.axes().iter().map(|a| a.extent * a.extent).sum::<f64>().sqrt();
    if !(reach < radius) {
        bail!("sphere cap of radius {radius} does not cover the grid (corner at {reach})");
    }
    let u = GraphField::from_fn(g, FieldRole::Unrescaled, |y, _| {
        (radius * radius - y[..d].iter().map(|c| c * c).sum::<f64>()).sqrt()
    })?;
    let mut s = FlowState::unrescaled(u, 0.0, None)?;
    let o = g.origin_node();
    let nt = g.n_theta();
    let centre = |s: &FlowState| s.field.values()[o * nt..(o + 1) * nt].iter().sum::<f64>() / nt as f64;
    let mut out = vec![(0.0, centre(&s))];
    while s.time() < horizon {
        let remaining = horizon - s.time();
        neckflow_core::rescaled::step_capped(&mut s, c, remaining)?;
        out.push((s.time(), centre(&s)));
    }
    Ok(out)
}

/// Largest relative error of central-difference `dR/dt` against `−(d + 1)/R`.
pub fn sphere_rate_error(hist: &[(f64, f64)], dim: usize) -> f64 {
    hist.windows(3)
        .map(|w| {
            let rate = (w[2].1 - w[0].1) / (w[2].0 - w[0].0);
            let want = -((dim + 1) as f64) / w[1].1;
            ((rate - want) / want).abs()
        })
        .fold(0.0, f64::max)
}

fn sphere(cfg: &RunConfig) -> Result<Report> {
    let Initial::Sphere { radius } = cfg.initial else { bail!("sphere recipe needs a sphere initial condition") };
    let g = grid(cfg)?;
    let horizon = cfg.t_end.unwrap_or(0.05);
    let hist = sphere_history(&g, radius, horizon, &controls(cfg))?;
    let path = cfg.out_dir.join(MONITORS);
    let mut w = TableWriter::create(&path, cfg.experiment.tag(), g.dim())?;
    for (i, &(t, rr)) in hist.iter().enumerate() {
        let dt = if i == 0 { 0.0 } else { t - hist[i - 1].0 };
        w.push(&Row::from_sample(g.dim(), t, rr, (g.dim() + 1) as f64 / rr, dt))?;
    }
    drop(w);
    let err = sphere_rate_error(&hist, g.dim());
    let mut r = Report::new("sphere");
    r.check("sphere rate", err <= 0.01, format!("max relative error of dR/dt vs −(d+1)/R = {err:.3e}"));
    append_table_checks(&mut r, &path)?;
    Ok(r)
}

/// Writes `pinch.csv` for an unrescaled run and returns its samples.
fn write_pinch(path: &Path, dim: usize, samples: &[PinchSample]) -> Result<()> {
    let mut w = TableWriter::create(path, "zoom", dim)?;
    for (i, s) in samples.iter().enumerate() {
        let dt = if i == 0 { 0.0 } else { s.t - samples[i - 1].t };
        w.push(&Row::from_sample(dim, s.t, s.min_u, s.min_h, dt))?;
    }
    Ok(())
}

/// Mean convexity over the final 30% of the time span and the `(min u)²` rate.
pub fn pinch_checks(r: &mut Report, samples: &[PinchSample], blowup: f64) {
    let tl = tail(samples, 0.3);
    let min_h = tl.iter().map(|s| s.min_h).fold(f64::INFINITY, f64::min);
    let max_ut = tl.iter().map(|s| s.max_ut).fold(f64::NEG_INFINITY, f64::max);
    r.check("mean convex", !tl.is_empty() && min_h > 0.0, format!("min H on window over final 30% = {min_h:.4e} ({} samples)", tl.len()));
    r.check("decreasing", !tl.is_empty() && max_ut < 0.0, format!("max ∂t u on window over final 30% = {max_ut:.4e}"));
    if let Some(last) = samples.last() {
        let decade: Vec<&PinchSample> =
            samples.iter().filter(|s| s.min_u * s.min_u <= 10.0 * last.min_u * last.min_u).collect();
        let xs: Vec<f64> = decade.iter().map(|s| s.t).collect();
        let ys: Vec<f64> = decade.iter().map(|s| s.min_u * s.min_u).collect();
        let slope = if xs.len() >= 2 { least_squares_slope(&xs, &ys) } else { f64::NAN };
        r.check("blow-up rate", (slope + 2.0).abs() <= 0.05, format!("d(min u)²/dt over last decade = {slope:.4}"));
        r.note(format!("pinch at t = {:.6} (model blow-up time {blowup}), min u = {:.4}", last.t, last.min_u));
    }
}

/// Result of the rescaled neckpinch run plus its continuation to the pinch.
pub struct NeckpinchRun {
    pub series: MonitorSeries,
    pub final_state: Option<FlowState>,
    pub pinch: Vec<PinchSample>,
    pub error: Option<Error>,
}

/// Modulated run writing monitor rows and snapshots as it goes.
pub fn neckpinch_run(cfg: &RunConfig, csv: Option<&Path>) -> Result<NeckpinchRun> {
    let Initial::Neck { b, delta } = &cfg.initial else { bail!("neckpinch recipe needs a neck initial condition") };
    let g = grid(cfg)?;
    let v0 = neck_initial(&g, cfg.xi0, b, *delta)?;
    let outer = neck_outer(g.dim(), cfg.xi0, b);
    let run_cfg = neckflow_core::run::RunConfig {
        xi0: cfg.xi0,
        tau_end: cfg.tau_end,
        fit_every: cfg.fit_every,
        eps: cfg.eps,
        controls: controls(cfg),
        modulate: true,
    };
    let mut writer = csv.map(|p| TableWriter::create(p, cfg.experiment.tag(), g.dim())).transpose()?;
    let mut next_snap = cfg.xi0;
    let mut snap_index = 0usize;
    let out_dir = cfg.out_dir.clone();
    let window = cfg.window;
    let every = cfg.snapshot_every;
    let observer: Observer = Box::new(|state, rec| {
        let io = |e: anyhow::Error| Error::Structural(format!("output: {e:#}"));
        if let Some(w) = writer.as_mut() {
            let row = Row::from_record(rec, state.field.min().0, window_min_h(&state.field, window).map_err(io)?, state.last_dt);
            w.push(&row).map_err(io)?;
        }
        if every > 0.0 && state.time() >= next_snap - 1e-9 {
            snapshot::write(&out_dir.join(format!("snap_{snap_index:04}.nfs")), state).map_err(io)?;
            snap_index += 1;
            next_snap += every;
        }
        Ok(())
    });
    match modulated_run(v0, outer, &run_cfg, Some(observer)) {
        Ok(out) => {
            let state = out.state;
            let spec = ZoomSpec::neck(state.time());
            let q = spawn_zoom(&state, &spec)?;
            let pc = PinchConfig { stop_min: cfg.stop_min, window: cfg.window, controls: controls(cfg) };
            let (pinch, error) = match pinch_run(q, &pc) {
                Ok((_, s)) => (s, None),
                Err(e) => (Vec::new(), Some(e)),
            };
            Ok(NeckpinchRun { series: out.series, final_state: Some(state), pinch, error })
        }
        Err(e) => Ok(NeckpinchRun { series: MonitorSeries::default(), final_state: None, pinch: Vec::new(), error: Some(e) }),
    }
}

fn neckpinch(cfg: &RunConfig) -> Result<Report> {
    let path = cfg.out_dir.join(MONITORS);
    let run = neckpinch_run(cfg, Some(&path))?;
    let mut r = Report::new("neckpinch-d1");
    if let Some(e) = &run.error {
        r.check("solver", false, format!("{e}"));
    }
    if let Some(s) = &run.final_state {
        snapshot::write(&cfg.out_dir.join(FINAL_SNAPSHOT), s)?;
    }
    neckpinch_checks(&mut r, &run.series, cfg.tau_end);
    if !run.pinch.is_empty() {
        write_pinch(&cfg.out_dir.join(PINCH), cfg.grid.dim, &run.pinch)?;
        pinch_checks(&mut r, &run.pinch, 1.0);
    }
    append_table_checks(&mut r, &path)?;
    Ok(r)
}

/// Profile, ODE and monitor predicates on the last third of a modulated run.
pub fn neckpinch_checks(r: &mut Report, series: &MonitorSeries, tau_end: f64) {
    let recs = &series.records;
    let Some(first) = recs.first() else {
        r.check("samples", false, "insufficient samples");
        return;
    };
    let start = tau_end - (tau_end - first.tau) / 2.0;
    let late: Vec<_> = recs.iter().filter(|x| x.tau >= start).collect();
    let a_worst = late.iter().map(|x| (x.params.a - 0.5).abs() * x.tau).fold(0.0, f64::max);
    r.check("a bound", !late.is_empty() && a_worst <= 5.0, format!("max |a − 1/2|·τ on τ ≥ {start:.1} = {a_worst:.4}"));
    let tb: Vec<f64> = late.iter().map(|x| x.tau * x.params.rotation().eigenvalues[0]).collect();
    let (lo, hi) = tb.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    r.check("tau*B range", lo >= 0.6 && hi <= 1.4, format!("τ·λ_max(B) ∈ [{lo:.4}, {hi:.4}]"));
    let ode = late.iter().filter_map(|x| x.ode.as_ref().map(|o| o.b * o.tau.powi(3))).fold(0.0, f64::max);
    r.check("B equation", ode <= 50.0, format!("max |dB/dτ + B²|·τ³ = {ode:.4}"));
    let dev: Vec<f64> = late.iter().map(|x| x.profile_deviation).collect();
    let mono = dev.windows(2).all(|w| w[1] <= w[0]);
    let last = recs.last().unwrap();
    let bound = 3.0 * last.tau.powf(-0.3);
    r.check("profile deviation", mono && last.profile_deviation <= bound, format!(
        "monotone on τ ≥ {start:.1}: {mono}; final {:.4e} ≤ {bound:.4e}",
        last.profile_deviation
    ));
    let m_ok = recs.windows(2).all(|w| (0..4).all(|k| w[1].m[k] >= w[0].m[k])) && recs.iter().all(|x| x.is_finite_nonnegative());
    r.check("M nondecreasing", m_ok, format!("final M = {:?}", last.m.map(|v| (v * 1e6).round() / 1e6)));
    let mid = recs.iter().find(|x| x.tau >= 0.5 * (first.tau + last.tau)).unwrap_or(last);
    r.check("Phi3 decay", last.phi[2] <= mid.phi[2], format!("Phi3(τ={:.1}) = {:.3e}, Phi3(τ={:.1}) = {:.3e}", mid.tau, mid.phi[2], last.tau, last.phi[2]));
    let third = last.tau - (last.tau - first.tau) / 3.0;
    let w: Vec<_> = recs.iter().filter(|x| x.tau >= third).collect();
    let slope = least_squares_slope(&w.iter().map(|x| x.tau).collect::<Vec<_>>(), &w.iter().map(|x| x.weighted_l2).collect::<Vec<_>>());
    r.check("wl2 trend", slope < 0.0, format!("slope of weighted L² over final third = {slope:.3e}"));
}

fn zoom(cfg: &RunConfig) -> Result<Report> {
    let Initial::Snapshot { path } = &cfg.initial else { bail!("zoom recipe needs a snapshot initial condition") };
    zoom_from(path, cfg.tau1, &cfg.out_dir, &PinchConfig { stop_min: cfg.stop_min, window: cfg.window, controls: controls(cfg) })
}

/// Continues a rescaled snapshot at `τ₁` as the neck flow until the pinch.
pub fn zoom_from(snapshot_path: &Path, tau1: Option<f64>, out_dir: &Path, pc: &PinchConfig) -> Result<Report> {
    fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let state = snapshot::read(snapshot_path)?;
    let tau1 = tau1.unwrap_or(state.time());
    let spec = ZoomSpec::neck(tau1);
    let q = spawn_zoom(&state, &spec)?;
    let dim = q.grid().dim();
    let (_, samples) = pinch_run(q, pc)?;
    let path = out_dir.join(MONITORS);
    write_pinch(&path, dim, &samples)?;
    let mut r = Report::new(format!("zoom from {} at tau1 = {tau1}", snapshot_path.display()));
    pinch_checks(&mut r, &samples, spec.blowup_time());
    append_table_checks(&mut r, &path)?;
    r.write(&out_dir.join(REPORT))?;
    Ok(r)
}

/// Operator parameters of the spectral suite.
pub fn suite_params() -> OperatorParams {
    OperatorParams { a: 0.505, b: 0.01, omega: 40.0, tau: 100.0 }
}

fn spectral_suite(cfg: &RunConfig) -> Result<Report> {
    spectral_suite_in(cfg.grid.n_y, cfg.grid.y_max, cfg.eps, cfg.seed, &cfg.out_dir)
}

/// Eigenvalue table and decay fits of the model and full propagators.
pub fn spectral_suite_in(n_y: usize, y_max: f64, eps: f64, seed: u64, out_dir: &Path) -> Result<Report> {
    fs::create_dir_all(out_dir)?;
    let fam = build_chi(eps)?;
    let p = suite_params();
    let bare = build_operator(OperatorTag::BareConjugated, n_y, y_max, &p, &fam)?;
    let full = build_operator(OperatorTag::Conjugated, n_y, y_max, &p, &fam)?;
    let eb = bare.eigenvalues()?;
    let ef = full.eigenvalues()?;
    let mut csv = csv::Writer::from_path(out_dir.join("eigenvalues.csv"))?;
    csv.write_record(["n", "bare", "full"])?;
    for n in 0..10.min(eb.len()) {
        csv.write_record([n.to_string(), crate::table::fmt_num(eb[n]), crate::table::fmt_num(ef[n])])?;
    }
    csv.flush()?;
    let mut r = Report::new("spectral-suite");
    let worst = (0..=5).map(|n| (eb[n] - 0.5 * n as f64).abs()).fold(0.0, f64::max);
    r.check("harmonic spectrum", worst <= 1e-3, format!("max |λ_n − n/2|, n ≤ 5 = {worst:.3e}; first {:.6}, {:.6}, {:.6}", eb[0], eb[1], eb[2]));
    let fb = propagator_decay_check(&bare, &bare.weighted_modes(3), 10.0, 20, seed)?;
    r.check("bare decay", fb.rate >= 1.45, format!("fitted rate {:.4}", fb.rate));
    let ff = propagator_decay_check(&full, &full.weighted_modes(3), 10.0, 20, seed.wrapping_add(1))?;
    r.check("full decay", ff.rate >= 0.38, format!("fitted rate {:.4}", ff.rate));
    Ok(r)
}

/// Path of the final snapshot a neckpinch run leaves in `dir`.
pub fn final_snapshot(dir: &Path) -> PathBuf {
    dir.join(FINAL_SNAPSHOT)
}
