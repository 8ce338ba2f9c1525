//! The five subcommands. Each reads a resolved config and writes its files into `out`.

use std::f64::consts::PI;
use std::path::Path;

use anyhow::Context;
use rayon::prelude::*;
use serde_json::{json, Value};

use slabdecay::dispersion::{
    high_freq_bracket, reconstruct_mode_with, root_at, sweep_dispersion, DispersionResult, Method,
};
use slabdecay::fit::{fit_decay_law, fit_decay_rate, fit_stretched_free, Law};
use slabdecay::stokes1d::{evolve_with, snapshot_json, Grid1D, ModeState};
use slabdecay::symbols::SlabParams;
use slabdecay::synthesis::{synthesize_plane_with, synthesize_torus_with, theoretical_envelope, SynthesisResult};
use slabdecay::C;

use crate::acceptance::{run_suite, Criterion};
use crate::config::{Domain, InitialKind, RunConfig};
use crate::output::{num, opt, text, write_json, Table};

/// Error kinds that map to distinct exit codes.
#[derive(Debug)]
pub enum Failure {
    /// bad invocation or config, exit 2
    Usage(anyhow::Error),
    /// acceptance failure, exit 1
    Acceptance(usize),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Usage(e)
    }
}

pub type Outcome = Result<(), Failure>;

fn c_cols(z: Option<C<f64>>) -> [String; 2] {
    match z {
        Some(z) => [num(z.re), num(z.im)],
        None => [String::new(), String::new()],
    }
}

pub fn dispersion(cfg: &RunConfig, out: &Path) -> Outcome {
    let slab = cfg.slab_params()?;
    let o = &cfg.tolerances.dispersion;
    let rows = sweep_dispersion(&slab, &cfg.dispersion.moduli, o).map_err(|e| anyhow::anyhow!("dispersion: {e}"))?;
    let mut t = Table::new(&[
        "xi_mod", "mu", "method", "rho_re", "rho_im", "kappa_re", "kappa_im", "det_residual", "iterations", "error",
    ]);
    let mut bracket = Vec::new();
    let mut low = Vec::new();
    let (lo, hi) = (1.0 / (4.0 * PI), 1.0 + 1.0 / (4.0 * PI));
    let mu0 = slab.mu(0.0).ok();
    for r in &rows {
        let ok = r.result.as_ref().ok();
        let mut row = vec![num(r.xi_mod), opt(r.mu), r.method.as_str().into()];
        row.extend(c_cols(ok.map(|x| x.rho)));
        row.extend(c_cols(ok.map(|x| x.kappa)));
        row.push(opt(ok.map(|x| x.det_residual)));
        row.push(ok.map(|x| x.iterations.to_string()).unwrap_or_default());
        row.push(r.result.as_ref().err().map(|e| text(&e.to_string())).unwrap_or_default());
        t.push(row);
        match (r.method, ok, r.mu) {
            (Method::Bracket, Some(res), Some(mu)) => {
                let ratio = res.rho.re * r.xi_mod / mu;
                let (b_lo, b_hi) = high_freq_bracket(r.xi_mod, mu);
                bracket.push(json!({"xi_mod": r.xi_mod, "rho": res.rho.re, "ratio": ratio,
                    "bracket": [b_lo, b_hi], "pass": (lo..=hi).contains(&ratio)}));
            }
            (Method::Bracket, None, _) => {
                bracket.push(json!({"xi_mod": r.xi_mod, "pass": false, "error": r.result.as_ref().err().map(|e| e.to_string())}))
            }
            (Method::LowFreq, Some(res), _) => low.push((r.xi_mod, res.kappa)),
            _ => {}
        }
    }
    // kappa trend toward mu(0) l^3 / 3 as |xi| decreases
    low.sort_by(|a, b| b.0.total_cmp(&a.0));
    let target = mu0.map(|m| m * slab.ell.powi(3) / 3.0);
    let trend: Vec<Value> = low
        .iter()
        .map(|(x, k)| {
            json!({"xi_mod": x, "kappa_re": k.re, "kappa_im": k.im,
                "distance": target.map(|t| (k - C::new(t, 0.0)).norm())})
        })
        .collect();
    let dists: Vec<f64> = trend.iter().filter_map(|v| v["distance"].as_f64()).collect();
    let summary = json!({
        "rows": rows.len(),
        "errors": rows.iter().filter(|r| r.result.is_err()).count(),
        "bracket": {"limits": [lo, hi], "all_pass": bracket.iter().all(|b| b["pass"] == true), "rows": bracket},
        "kappa_trend": {"target": target, "monotone": dists.windows(2).all(|w| w[1] <= w[0]), "rows": trend},
    });
    let conf = cfg.resolved_json();
    t.write(&out.join("dispersion.csv"), &conf)?;
    write_json(&out.join("dispersion_summary.json"), &summary, &conf)?;
    println!("dispersion: {} rows, {} errors", rows.len(), summary["errors"]);
    Ok(())
}

fn slow_root(slab: &SlabParams<f64>, xi: f64, cfg: &RunConfig) -> Option<DispersionResult<f64>> {
    if xi > 0.0 {
        root_at(xi, slab, &cfg.tolerances.dispersion).2.ok()
    } else {
        None
    }
}

fn initial_state(
    cfg: &RunConfig,
    slab: &SlabParams<f64>,
    grid: &Grid1D<f64>,
    root: Option<&DispersionResult<f64>>,
) -> anyhow::Result<ModeState<f64>> {
    let e = &cfg.evolve;
    let a = C::new(e.amplitude, 0.0);
    Ok(match e.initial {
        InitialKind::Surface => ModeState::surface(grid, a),
        InitialKind::Zero => ModeState::zeros(grid),
        InitialKind::Heat => {
            let mut s = ModeState::zeros(grid);
            let l = grid.ell;
            for (j, y) in grid.nodes().into_iter().enumerate() {
                s.w[j] = a * (y * (2.0 * l - y) / (l * l));
            }
            s
        }
        InitialKind::Mode => {
            let r = root.context("initial = mode needs a dispersion root at this modulus")?;
            let mu = slab.mu(e.xi_mod).map_err(|x| anyhow::anyhow!("{x}"))?;
            let prof = reconstruct_mode_with(r, e.xi_mod, mu, slab.ell, e.n_cells, &cfg.tolerances.dispersion)
                .map_err(|x| anyhow::anyhow!("mode reconstruction: {x}"))?;
            let s = ModeState::from_profile(grid, &prof).map_err(|x| anyhow::anyhow!("{x}"))?;
            let scale = if prof.h.norm() > 0.0 { a / prof.h } else { a };
            s.scale(scale)
        }
    })
}

pub fn evolve(cfg: &RunConfig, out: &Path) -> Outcome {
    let e = &cfg.evolve;
    let slab = cfg.slab_params()?;
    if e.t_end.is_nan() || e.t_end <= 0.0 {
        return Err(anyhow::anyhow!("evolve.t_end = {} must be positive", e.t_end).into());
    }
    let root = slow_root(&slab, e.xi_mod, cfg);
    let dt = match e.dt {
        Some(dt) if dt > 0.0 && dt.is_finite() => dt,
        Some(dt) => return Err(anyhow::anyhow!("evolve.dt = {dt} must be positive").into()),
        None => 0.05 / root.as_ref().map_or(1.0, |r| r.rho.norm()).max(1.0),
    };
    let grid = Grid1D::new(e.n_cells, slab.ell).map_err(|x| anyhow::anyhow!("{x}"))?;
    let init = initial_state(cfg, &slab, &grid, root.as_ref())?;
    let ev = evolve_with(&slab, e.xi_mod, &init, e.t_end, dt, &cfg.tolerances.evolve)
        .map_err(|x| anyhow::anyhow!("evolve: {x}"))?;

    let mut t = Table::new(&["t", "energy", "dissipation", "lyapunov"]);
    for i in 0..ev.curve.len() {
        t.push(vec![num(ev.curve.times[i]), num(ev.curve.values[i]), num(ev.dissipation[i]), num(ev.lyapunov[i])]);
    }
    let window = e.fit_window.unwrap_or((e.t_end / 4.0, e.t_end));
    let (fit, fit_error) = match fit_decay_rate(&ev.curve, window) {
        Ok((rate, q)) => (Some(json!({"rate": rate, "quality": q, "window": window})), None),
        Err(x) => (None, Some(x.to_string())),
    };
    let reference = match (&root, e.xi_mod) {
        (Some(r), _) => Some(json!({"source": "dispersion", "method": r.method.as_str(), "rho_re": r.rho.re,
            "rho_im": r.rho.im, "rate": 2.0 * r.rho.re})),
        (None, 0.0) => Some(json!({"source": "heat", "rate": PI * PI / (2.0 * slab.ell * slab.ell)})),
        _ => None,
    };
    let cross = match (&fit, &reference) {
        (Some(f), Some(r)) => {
            let (a, b) = (f["rate"].as_f64().unwrap_or(f64::NAN), r["rate"].as_f64().unwrap_or(f64::NAN));
            Some((a - b).abs() / b.abs())
        }
        _ => None,
    };
    let summary = json!({
        "xi_mod": e.xi_mod,
        "dt": dt,
        "steps": ev.curve.len() - 1,
        "initial_energy": ev.curve.values.first(),
        "final_energy": ev.curve.values.last(),
        "max_relative_increase": ev.curve.max_relative_increase(),
        "max_divergence": ev.max_divergence,
        "projection": ev.projection,
        "max_identity_residual": ev.identity_residual.iter().map(|x| x.abs()).fold(0.0, f64::max),
        "fit": fit,
        "fit_error": fit_error,
        "reference": reference,
        "relative_difference": cross,
    });
    let conf = cfg.resolved_json();
    t.write(&out.join("evolve.csv"), &conf)?;
    write_json(&out.join("evolve_summary.json"), &summary, &conf)?;
    std::fs::write(out.join("final_state.json"), snapshot_json(&grid, e.xi_mod, &ev.final_state) + "\n")
        .context("writing final_state.json")?;
    match (&summary["fit"]["rate"], &summary["fit_error"]) {
        (Value::Number(r), _) => println!("evolve: {} steps, fitted rate {r}", ev.curve.len() - 1),
        (_, err) => println!("evolve: {} steps, {}", ev.curve.len() - 1, err.as_str().unwrap_or("no fit")),
    }
    Ok(())
}

pub fn synthesize(cfg: &RunConfig, out: &Path) -> Outcome {
    let s = &cfg.synthesis;
    let slab = cfg.slab_params()?;
    let o = cfg.synthesis_options();
    let res: SynthesisResult<f64> = match s.domain {
        Domain::Torus => synthesize_torus_with(&slab, &s.data, s.lattice_radius, s.t_end, s.dt, &o),
        Domain::Plane => synthesize_plane_with(&slab, &s.data, &s.quadrature, s.t_end, s.dt, &o),
    }
    .map_err(|e| anyhow::anyhow!("synthesis: {e}"))?;

    let mut curve = Table::new(&["t", "energy", "extrapolated"]);
    let ext = res.curve.meta.extrapolated_after;
    for (t, e) in res.curve.times.iter().zip(&res.curve.values) {
        curve.push(vec![num(*t), num(*e), u8::from(ext.is_some_and(|x| *t > x)).to_string()]);
    }
    let mut modes = Table::new(&[
        "xi_mod", "weight", "amplitude", "initial_energy", "rho_est", "dt", "n_cells", "tail_rate", "envelope", "extrapolated_after",
    ]);
    for m in &res.per_mode_cache {
        modes.push(vec![
            num(m.xi_mod),
            num(m.weight),
            num(m.amplitude),
            opt(m.curve.values.first().copied()),
            opt(m.rho_est),
            opt(m.dt),
            m.n_cells.map(|n| n.to_string()).unwrap_or_default(),
            opt(m.tail_rate),
            opt(theoretical_envelope(&slab, m.xi_mod).ok()),
            opt(m.curve.meta.extrapolated_after),
        ]);
    }
    let window = o.fit_window.unwrap_or((1.0f64.min(s.t_end), s.t_end));
    let laws: Vec<Value> = [Law::Exponential, Law::Algebraic, Law::StretchedExp { alpha: 1.0 }, Law::LogCorrectedExp { alpha: 1.0 }]
        .into_iter()
        .map(|law| match fit_decay_law(&res.curve, law, window) {
            Ok(f) => json!(f),
            Err(e) => json!({"law": law.tag(), "error": e.to_string()}),
        })
        .collect();
    let free = fit_stretched_free(&res.curve.times, &res.curve.values, window, (0.05, 1.5))
        .ok()
        .map(|(g, c, q)| json!({"exponent": g, "rate": c, "quality": q}));
    let report = json!({
        "domain": s.domain,
        "modes": res.per_mode_cache.len(),
        "fit": res.fit,
        "fit_error": res.fit_error,
        "laws": laws,
        "stretched_free": free,
        "tail_bound": res.tail_bound,
        "split": res.split,
        "extrapolated_after": ext,
        "initial_energy": res.curve.values.first(),
        "final_energy": res.curve.values.last(),
    });
    let conf = cfg.resolved_json();
    curve.write(&out.join("synthesis_curve.csv"), &conf)?;
    modes.write(&out.join("synthesis_modes.csv"), &conf)?;
    write_json(&out.join("synthesis_report.json"), &report, &conf)?;
    match &res.fit {
        Some(f) => println!("synthesize: {} modes, {} rate {:.6} (R^2 {:.6})", res.per_mode_cache.len(), f.law.tag(), f.rate, f.quality),
        None => println!("synthesize: {} modes, {}", res.per_mode_cache.len(), res.fit_error.as_deref().unwrap_or("no fit")),
    }
    Ok(())
}

pub fn verify(cfg: &RunConfig, out: &Path) -> Outcome {
    let results: Vec<Criterion> = run_suite(&cfg.verify, cfg.seed, |c| println!("{}", c.line()));
    let failed = results.iter().filter(|c| !c.passed).count();
    let report = json!({"passed": failed == 0, "failed": failed, "criteria": results});
    write_json(&out.join("verify.json"), &report, &cfg.resolved_json())?;
    println!("verify: {} of {} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        return Err(Failure::Acceptance(failed));
    }
    Ok(())
}

struct SweepRow {
    xi: f64,
    mu: Option<f64>,
    method: &'static str,
    rho: Option<C<f64>>,
    time_rate: Option<f64>,
    quality: Option<f64>,
    envelope: Option<f64>,
    error: String,
}

fn sweep_row(cfg: &RunConfig, slab: &SlabParams<f64>, xi: f64) -> SweepRow {
    let (mu, method, root) = root_at(xi, slab, &cfg.tolerances.dispersion);
    let mut row = SweepRow {
        xi,
        mu,
        method: method.as_str(),
        rho: root.as_ref().ok().map(|r| r.rho),
        time_rate: None,
        quality: None,
        envelope: theoretical_envelope(slab, xi).ok(),
        error: String::new(),
    };
    let rho_est = match (&root, row.envelope) {
        (Ok(r), _) if r.rho.re > 0.0 => r.rho.norm(),
        (_, Some(e)) if e > 0.0 => e,
        _ => {
            row.error = root.err().map(|e| e.to_string()).unwrap_or_else(|| "no rate estimate".into());
            return row;
        }
    };
    // surface data, run long enough for the slow mode to dominate
    let t_end = 6.0 / rho_est;
    let dt = 0.02 / rho_est;
    let n = 64usize.max((4.0 * 2.0 * PI * xi * slab.ell).ceil() as usize);
    let timed = Grid1D::new(n, slab.ell).and_then(|g| {
        evolve_with(slab, xi, &ModeState::surface(&g, C::new(1.0, 0.0)), t_end, dt, &cfg.tolerances.evolve)
    });
    match timed {
        Ok(ev) => match fit_decay_rate(&ev.curve, (t_end / 2.0, t_end)) {
            Ok((rate, q)) => {
                row.time_rate = Some(rate);
                row.quality = Some(q);
            }
            Err(e) => row.error = e.to_string(),
        },
        Err(e) => row.error = e.to_string(),
    }
    if let Err(e) = root {
        row.error = if row.error.is_empty() { e.to_string() } else { format!("{}; {e}", row.error) };
    }
    row
}

/// Root, time-domain rate and envelope per modulus.
pub fn sweep(cfg: &RunConfig, out: &Path) -> Outcome {
    let slab = cfg.slab_params()?;
    let moduli = &cfg.dispersion.moduli;
    if moduli.is_empty() || moduli.iter().any(|x| x.is_nan() || *x <= 0.0) {
        return Err(anyhow::anyhow!("dispersion.moduli must be nonempty and positive").into());
    }
    let rows: Vec<SweepRow> = moduli.par_iter().map(|&x| sweep_row(cfg, &slab, x)).collect();
    let mut t = Table::new(&[
        "xi_mod", "mu", "method", "rho_re", "rho_im", "time_rate", "fit_quality", "rate_over_2rho", "envelope",
        "rate_over_envelope", "error",
    ]);
    for r in &rows {
        let mut row = vec![num(r.xi), opt(r.mu), r.method.into()];
        row.extend(c_cols(r.rho));
        row.push(opt(r.time_rate));
        row.push(opt(r.quality));
        row.push(opt(r.time_rate.zip(r.rho).map(|(a, b)| a / (2.0 * b.re))));
        row.push(opt(r.envelope));
        row.push(opt(r.time_rate.zip(r.envelope).map(|(a, b)| a / b)));
        row.push(text(&r.error));
        t.push(row);
    }
    // empirical constant of the envelope: smallest rate/envelope over the sweep
    let c_emp = rows
        .iter()
        .filter_map(|r| r.time_rate.zip(r.envelope).map(|(a, b)| a / b))
        .fold(None, |m: Option<f64>, x| Some(m.map_or(x, |m| m.min(x))));
    let conf = cfg.resolved_json();
    t.write(&out.join("sweep.csv"), &conf)?;
    write_json(&out.join("sweep_summary.json"), &json!({"rows": rows.len(), "envelope_constant": c_emp}), &conf)?;
    println!("sweep: {} rows, envelope constant {}", rows.len(), c_emp.map_or("n/a".into(), |c| format!("{c:.4}")));
    Ok(())
}
