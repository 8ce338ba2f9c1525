//! Total energy curves from per-mode evolutions.
//!
//! Per-mode dynamics depend only on `|xi|` for radial symbols, so each distinct modulus is
//! evolved once from unit surface data and scaled by `|h0(xi)|^2`. The torus sums over the
//! lattice with multiplicities; the plane integrates radially on a geometric grid.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use num_complex::Complex;

use crate::dispersion::{reconstruct_mode_with, root_at, DispersionError, DispersionOptions};
use crate::fit::{fit_decay_law, FitRecord, Law};
use crate::real::{lit, Real};
use crate::stokes1d::{evolve_with, CurveMeta, EnergyCurve, EvolveError, EvolveOptions, Grid1D, ModeState};
use crate::symbols::SlabParams;

/// Margin added to the Sobolev profile exponent.
pub const SOBOLEV_EPS: f64 = 0.5;
/// Extra power in the Riesz profile so that `I_lambda h0` is square integrable.
pub const RIESZ_MARGIN: f64 = 0.05;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthesisError {
    #[error("invalid synthesis input: {0}")]
    Invalid(String),
    #[error("mode |xi| = {xi}: {source}")]
    Evolve { xi: f64, source: EvolveError },
    #[error("mode |xi| = {xi}: {source}")]
    Dispersion { xi: f64, source: DispersionError },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataFamily {
    SobolevH,
    RieszWeighted,
    FlatSpectrum,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VelocityMode {
    #[default]
    Zero,
    /// velocity of the slow dispersion mode with the same surface amplitude
    SurfaceMatched,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, bound = "")]
pub struct InitialDataSpec<T: Real> {
    pub family: DataFamily,
    #[serde(default)]
    pub s: T,
    #[serde(default = "one")]
    pub lambda: T,
    /// spectrum truncation radius
    #[serde(default)]
    pub cutoff: Option<T>,
    /// data vanish for `|xi|` below this radius
    #[serde(default)]
    pub inner_cutoff: Option<T>,
    #[serde(default)]
    pub velocity_mode: VelocityMode,
}

fn one<T: Real>() -> T {
    T::one()
}

impl<T: Real> InitialDataSpec<T> {
    pub fn sobolev(s: T) -> Self {
        Self { family: DataFamily::SobolevH, s, lambda: T::one(), cutoff: None, inner_cutoff: None, velocity_mode: VelocityMode::Zero }
    }

    pub fn riesz(lambda: T, cutoff: T) -> Self {
        Self { family: DataFamily::RieszWeighted, lambda, cutoff: Some(cutoff), ..Self::sobolev(T::zero()) }
    }

    pub fn flat(cutoff: T) -> Self {
        Self { family: DataFamily::FlatSpectrum, cutoff: Some(cutoff), ..Self::sobolev(T::zero()) }
    }

    pub fn check(&self) -> Result<(), SynthesisError> {
        let bad = |m: String| Err(SynthesisError::Invalid(m));
        if !(self.s >= T::zero()) {
            return bad(format!("s = {} must be >= 0", self.s));
        }
        if !(self.lambda > T::zero()) {
            return bad(format!("lambda = {} must be > 0", self.lambda));
        }
        if let Some(c) = self.cutoff {
            if !(c > T::zero()) {
                return bad(format!("cutoff = {c} must be > 0"));
            }
        }
        if self.family == DataFamily::FlatSpectrum && self.cutoff.is_none() {
            return bad("flat_spectrum needs a cutoff".into());
        }
        if let (Some(i), Some(c)) = (self.inner_cutoff, self.cutoff) {
            if !(i >= T::zero() && i < c) {
                return bad(format!("inner cutoff {i} must lie in [0, {c})"));
            }
        }
        Ok(())
    }

    /// `h0(xi)` as a function of the modulus (real and nonnegative).
    pub fn amplitude(&self, xi_mod: T, dim: usize) -> T {
        if self.cutoff.is_some_and(|c| xi_mod > c) || self.inner_cutoff.is_some_and(|c| xi_mod < c) {
            return T::zero();
        }
        let d = lit::<T>(dim as f64 - 1.0);
        match self.family {
            DataFamily::SobolevH => {
                let e = (lit::<T>(2.0) * self.s + d + lit(SOBOLEV_EPS)) / lit(4.0);
                (T::one() + xi_mod * xi_mod).powf(-e)
            }
            DataFamily::RieszWeighted => {
                if xi_mod <= T::zero() {
                    return T::zero();
                }
                xi_mod.powf(self.lambda - d / lit(2.0) + lit(RIESZ_MARGIN))
            }
            DataFamily::FlatSpectrum => T::one(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, bound = "")]
pub struct PlaneQuadrature<T: Real> {
    /// low/high split radius
    pub c0: T,
    pub nodes_per_decade: usize,
    /// smallest node is `lower_factor * c0`
    pub lower_factor: T,
}

impl<T: Real> Default for PlaneQuadrature<T> {
    fn default() -> Self {
        Self { c0: T::one(), nodes_per_decade: 24, lower_factor: lit(1e-3) }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, bound = "")]
pub struct SynthesisOptions<T: Real> {
    /// per-mode step is `min(dt_factor / rho_est, dt)`
    pub dt_factor: T,
    pub min_cells: usize,
    /// grid cells per unit of `2 pi |xi| l`
    pub cells_per_k: T,
    /// per-mode runs stop below this fraction of the initial energy
    pub stop_below: T,
    /// per-mode runs stop once the decay is exponential to this tolerance
    pub exponential_tol: T,
    /// log-spaced samples of the total energy
    pub samples: usize,
    pub first_sample: T,
    pub law: Law<T>,
    /// defaults to `[1, T]`
    pub fit_window: Option<(T, T)>,
    /// solver knobs are configured separately, not serialized here
    #[serde(skip)]
    pub evolve: EvolveOptions<T>,
    #[serde(skip)]
    pub dispersion: DispersionOptions<T>,
}

impl<T: Real> Default for SynthesisOptions<T> {
    fn default() -> Self {
        Self {
            dt_factor: lit(0.05),
            min_cells: 64,
            cells_per_k: lit(4.0),
            stop_below: lit(1e-14),
            exponential_tol: lit(1e-7),
            samples: 240,
            first_sample: lit(1e-2),
            law: Law::Auto,
            fit_window: None,
            evolve: EvolveOptions::default(),
            dispersion: DispersionOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct ModeEntry<T: Real> {
    pub xi_mod: T,
    /// lattice multiplicity or quadrature weight (including the radial measure)
    pub weight: T,
    pub amplitude: T,
    /// `E_xi(t)` for this data at the sample times
    pub curve: EnergyCurve<T>,
    pub rho_est: Option<T>,
    pub dt: Option<T>,
    pub n_cells: Option<usize>,
    /// slope of `log E_xi` at the end of the run, used beyond it
    pub tail_rate: Option<T>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct SynthesisResult<T: Real> {
    pub curve: EnergyCurve<T>,
    /// ascending in `|xi|`
    pub per_mode_cache: Vec<ModeEntry<T>>,
    pub fit: Option<FitRecord<T>>,
    pub fit_error: Option<String>,
    /// bound on the initial energy of the truncated modes (torus)
    pub tail_bound: Option<T>,
    /// low/high split radius and the initial energy below it (plane)
    pub split: Option<(T, T)>,
}

/// `|xi|^2 mu / (1+|xi|)^3`, and 1 at `xi = 0`.
pub fn theoretical_envelope<T: Real>(slab: &SlabParams<T>, xi_mod: T) -> Result<T, SynthesisError> {
    if !(xi_mod >= T::zero()) {
        return Err(SynthesisError::Invalid(format!("|xi| = {xi_mod}")));
    }
    if xi_mod.is_zero() {
        return Ok(T::one());
    }
    let mu = slab.mu(xi_mod).map_err(|e| SynthesisError::Invalid(e.to_string()))?;
    Ok(xi_mod * xi_mod * mu / (T::one() + xi_mod).powi(3))
}

/// `0` followed by `n` log-spaced times in `[first, t_end]`.
pub fn sample_times<T: Real>(first: T, t_end: T, n: usize) -> Vec<T> {
    let mut out = vec![T::zero()];
    if n == 0 || !(t_end > T::zero()) {
        return out;
    }
    let first = first.min(t_end);
    if n == 1 {
        out.push(t_end);
        return out;
    }
    let (a, b) = (first.ln(), t_end.ln());
    for i in 0..n {
        let t = (a + (b - a) * lit(i as f64) / lit((n - 1) as f64)).exp();
        if t > *out.last().unwrap() {
            out.push(t);
        }
    }
    *out.last_mut().unwrap() = t_end;
    out
}

/// Per-mode energy curve for surface amplitude `amp`, resampled at `times`.
pub fn mode_energy_curve<T: Real>(
    slab: &SlabParams<T>,
    xi_mod: T,
    amp: T,
    velocity: VelocityMode,
    times: &[T],
    dt_max: T,
    o: &SynthesisOptions<T>,
) -> Result<ModeEntry<T>, SynthesisError> {
    let xf = xi_mod.to_f64_lossy();
    let zero_entry = |meta: CurveMeta<T>| ModeEntry {
        xi_mod,
        weight: T::one(),
        amplitude: amp,
        curve: EnergyCurve::new(times.to_vec(), vec![T::zero(); times.len()], meta),
        rho_est: None,
        dt: None,
        n_cells: None,
        tail_rate: None,
    };
    let meta = CurveMeta { label: "mode".into(), xi_mod: Some(xi_mod), ..Default::default() };
    // zero surface data; the zero mode carries no surface (zero average)
    if amp.is_zero() || xi_mod.is_zero() {
        return Ok(zero_entry(meta));
    }
    let t_end = *times.last().unwrap_or(&T::zero());
    let k = T::TAU() * xi_mod;
    let n = o.min_cells.max((o.cells_per_k * k * slab.ell).ceil().to_usize().unwrap_or(o.min_cells));
    let grid = Grid1D::new(n, slab.ell).map_err(|e| SynthesisError::Evolve { xi: xf, source: e })?;
    let (mu, _, root) = root_at(xi_mod, slab, &o.dispersion);
    let mu = mu.ok_or_else(|| SynthesisError::Invalid(format!("symbol undefined at |xi| = {xf}")))?;
    let root = root.ok().filter(|r| r.rho.re > T::zero());
    let rho_est = match &root {
        Some(r) => r.rho.norm(),
        None => theoretical_envelope(slab, xi_mod)?,
    };
    let dt = (o.dt_factor / rho_est).min(dt_max);
    let init = match velocity {
        VelocityMode::Zero => ModeState::surface(&grid, Complex::new(amp, T::zero())),
        VelocityMode::SurfaceMatched => {
            let r = root.as_ref().ok_or(SynthesisError::Dispersion {
                xi: xf,
                source: DispersionError::NoRootOnGrid,
            })?;
            let prof = reconstruct_mode_with(r, xi_mod, mu, slab.ell, n, &o.dispersion)
                .map_err(|e| SynthesisError::Dispersion { xi: xf, source: e })?;
            ModeState::from_profile(&grid, &prof)
                .map_err(|e| SynthesisError::Evolve { xi: xf, source: e })?
                .scale(Complex::new(amp, T::zero()))
        }
    };
    let eo = EvolveOptions {
        stop_below: Some(o.stop_below),
        stop_when_exponential: Some(o.exponential_tol),
        ..o.evolve.clone()
    };
    let ev = evolve_with(slab, xi_mod, &init, t_end, dt, &eo).map_err(|e| SynthesisError::Evolve { xi: xf, source: e })?;
    let (ts, es) = (&ev.curve.times, &ev.curve.values);
    let last = ts.len() - 1;
    let t_last = ts[last];
    let tail_rate = if last >= 1 && es[last] > T::zero() && es[last - 1] > T::zero() {
        Some(((es[last - 1] / es[last]).ln() / (ts[last] - ts[last - 1])).max(T::zero()))
    } else {
        None
    };
    let mut values = Vec::with_capacity(times.len());
    let mut seg = 0usize;
    for &t in times {
        let v = if t >= t_last {
            match tail_rate {
                Some(r) => es[last] * (-(r * (t - t_last))).exp(),
                None => es[last],
            }
        } else {
            while seg + 1 < last && ts[seg + 1] < t {
                seg += 1;
            }
            let (t0, t1) = (ts[seg], ts[seg + 1]);
            let (e0, e1) = (es[seg], es[seg + 1]);
            let f = (t - t0) / (t1 - t0);
            if e0 > T::zero() && e1 > T::zero() {
                (e0.ln() + f * (e1.ln() - e0.ln())).exp()
            } else {
                e0 + f * (e1 - e0)
            }
        };
        values.push(v);
    }
    let extrapolated = if t_last + dt * lit(1e-6) < t_end { Some(t_last) } else { None };
    let meta = CurveMeta {
        label: "mode".into(),
        xi_mod: Some(xi_mod),
        mu: Some(mu),
        n_cells: Some(n),
        dt: Some(dt),
        extrapolated_after: extrapolated,
    };
    Ok(ModeEntry {
        xi_mod,
        weight: T::one(),
        amplitude: amp,
        curve: EnergyCurve::new(times.to_vec(), values, meta),
        rho_est: Some(rho_est),
        dt: Some(dt),
        n_cells: Some(n),
        tail_rate,
    })
}

/// Distinct squared moduli of `Z^d` with `0 < |m|^2 <= r^2` and their multiplicities.
pub fn lattice_shells(d: usize, radius: usize) -> Vec<(usize, usize)> {
    let r2 = radius * radius;
    let mut cnt = vec![0usize; r2 + 1];
    cnt[0] = 1;
    for _ in 0..d {
        let mut next = vec![0usize; r2 + 1];
        for (q, &c) in cnt.iter().enumerate() {
            if c == 0 {
                continue;
            }
            for m in 0..=radius {
                let q2 = q + m * m;
                if q2 > r2 {
                    break;
                }
                next[q2] += if m == 0 { c } else { 2 * c };
            }
        }
        cnt = next;
    }
    cnt.into_iter().enumerate().skip(1).filter(|&(_, c)| c > 0).collect()
}

/// Surface area of the unit sphere in `R^{d}`, i.e. `2 pi^{d/2} / Gamma(d/2)`.
pub fn sphere_area<T: Real>(d: usize) -> T {
    // Gamma at half-integers by recursion
    let mut g = if d.is_multiple_of(2) { T::one() } else { T::PI().sqrt() };
    let mut x = if d.is_multiple_of(2) { T::one() } else { lit::<T>(0.5) };
    let target = lit::<T>(d as f64 / 2.0);
    while x < target {
        g *= x;
        x += T::one();
    }
    lit::<T>(2.0) * T::PI().powf(target) / g
}

fn reduce<T: Real>(times: &[T], modes: &[ModeEntry<T>], label: &str) -> EnergyCurve<T> {
    let mut total = vec![T::zero(); times.len()];
    for m in modes {
        for (acc, &v) in total.iter_mut().zip(&m.curve.values) {
            *acc += m.weight * v;
        }
    }
    let ext = modes.iter().filter_map(|m| m.curve.meta.extrapolated_after).fold(None, |a: Option<T>, b| {
        Some(a.map_or(b, |a| a.min(b)))
    });
    EnergyCurve::new(
        times.to_vec(),
        total,
        CurveMeta { label: label.into(), extrapolated_after: ext, ..Default::default() },
    )
}

fn finish<T: Real>(
    curve: EnergyCurve<T>,
    modes: Vec<ModeEntry<T>>,
    t_end: T,
    o: &SynthesisOptions<T>,
) -> SynthesisResult<T> {
    let window = o.fit_window.unwrap_or((T::one().min(t_end), t_end));
    let (fit, fit_error) = match fit_decay_law(&curve, o.law, window) {
        Ok(f) => (Some(f), None),
        Err(e) => (None, Some(e.to_string())),
    };
    SynthesisResult { curve, per_mode_cache: modes, fit, fit_error, tail_bound: None, split: None }
}

fn check_common<T: Real>(slab: &SlabParams<T>, data: &InitialDataSpec<T>, t_end: T, dt: T) -> Result<(), SynthesisError> {
    slab.check().map_err(|e| SynthesisError::Invalid(e.to_string()))?;
    data.check()?;
    if !(t_end > T::zero()) || !(dt > T::zero()) {
        return Err(SynthesisError::Invalid(format!("T = {t_end}, dt = {dt} must be positive")));
    }
    Ok(())
}

pub fn synthesize_torus<T: Real>(
    slab: &SlabParams<T>,
    data: &InitialDataSpec<T>,
    lattice_radius: usize,
    t_end: T,
    dt: T,
) -> Result<SynthesisResult<T>, SynthesisError> {
    synthesize_torus_with(slab, data, lattice_radius, t_end, dt, &SynthesisOptions::default())
}

pub fn synthesize_torus_with<T: Real>(
    slab: &SlabParams<T>,
    data: &InitialDataSpec<T>,
    lattice_radius: usize,
    t_end: T,
    dt: T,
    o: &SynthesisOptions<T>,
) -> Result<SynthesisResult<T>, SynthesisError> {
    check_common(slab, data, t_end, dt)?;
    if lattice_radius < 1 {
        return Err(SynthesisError::Invalid("lattice_radius must be >= 1".into()));
    }
    let d = slab.dim - 1;
    let times = sample_times(o.first_sample, t_end, o.samples);
    let shells = lattice_shells(d, lattice_radius);
    let mut modes: Vec<ModeEntry<T>> = shells
        .par_iter()
        .map(|&(q, mult)| {
            let xi = lit::<T>(q as f64).sqrt();
            let amp = data.amplitude(xi, slab.dim);
            mode_energy_curve(slab, xi, amp, data.velocity_mode, &times, dt, o).map(|mut m| {
                m.weight = lit(mult as f64);
                m
            })
        })
        .collect::<Result<_, _>>()?;
    // zero mode: zero-average surface and no initial velocity
    modes.insert(0, mode_energy_curve(slab, T::zero(), T::zero(), data.velocity_mode, &times, dt, o)?);
    let curve = reduce(&times, &modes, "torus");
    let mut res = finish(curve, modes, t_end, o);
    res.tail_bound = Some(tail_energy(slab, data, lit(lattice_radius as f64)));
    Ok(res)
}

/// Initial energy of modes beyond `radius`, by radial quadrature.
fn tail_energy<T: Real>(slab: &SlabParams<T>, data: &InitialDataSpec<T>, radius: T) -> T {
    if data.cutoff.is_some_and(|c| c <= radius) {
        return T::zero();
    }
    let area = sphere_area::<T>(slab.dim - 1);
    let per_decade = 48usize;
    let decades = 6usize;
    let mut prev: Option<(T, T)> = None;
    let mut sum = T::zero();
    for i in 0..=per_decade * decades {
        let x = radius * lit::<T>(10.0).powf(lit::<T>(i as f64) / lit(per_decade as f64));
        let mu = slab.mu(x).unwrap_or(T::zero());
        let a = data.amplitude(x, slab.dim);
        let f = area * x.powi(slab.dim as i32 - 2) * mu * a * a / lit(2.0);
        if let Some((x0, f0)) = prev {
            sum += (x - x0) * (f + f0) / lit(2.0);
        }
        prev = Some((x, f));
    }
    sum
}

pub fn synthesize_plane<T: Real>(
    slab: &SlabParams<T>,
    data: &InitialDataSpec<T>,
    quad: &PlaneQuadrature<T>,
    t_end: T,
    dt: T,
) -> Result<SynthesisResult<T>, SynthesisError> {
    synthesize_plane_with(slab, data, quad, t_end, dt, &SynthesisOptions::default())
}

/// Geometric nodes and Simpson weights (in `ln r`) of `int_0^cutoff f(r) r^{d-1} dr` (measure included).
pub fn plane_nodes<T: Real>(
    quad: &PlaneQuadrature<T>,
    inner: Option<T>,
    cutoff: T,
    d: usize,
) -> Result<Vec<(T, T)>, SynthesisError> {
    if !(quad.c0 > T::zero()) || quad.nodes_per_decade < 1 || !(quad.lower_factor > T::zero()) {
        return Err(SynthesisError::Invalid("bad plane quadrature".into()));
    }
    let lo = inner.filter(|&i| i > T::zero()).unwrap_or(quad.lower_factor * quad.c0).min(cutoff);
    let decades = (cutoff / lo).log10();
    let mut m = (decades * lit(quad.nodes_per_decade as f64)).ceil().to_usize().unwrap_or(2).max(2);
    m += m % 2;
    let nodes: Vec<T> = (0..=m)
        .map(|i| lo * (cutoff / lo).powf(lit::<T>(i as f64) / lit(m as f64)))
        .collect();
    let area = sphere_area::<T>(d);
    let meas = |x: T| area * x.powi(d as i32 - 1);
    // composite Simpson in u = ln r, where dr = r du
    let h = (cutoff / lo).ln() / lit(m as f64);
    let mut w: Vec<T> = nodes
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let c = if i == 0 || i == m { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
            lit::<T>(c) * h / lit(3.0) * x
        })
        .collect();
    if inner.is_none_or(|i| i <= T::zero()) {
        // [0, r_1]: integrand ~ r^{d-1} times a smooth factor
        w[0] += nodes[0] / lit(d as f64);
    }
    Ok(nodes.into_iter().zip(w).map(|(x, wi)| (x, wi * meas(x))).collect())
}

pub fn synthesize_plane_with<T: Real>(
    slab: &SlabParams<T>,
    data: &InitialDataSpec<T>,
    quad: &PlaneQuadrature<T>,
    t_end: T,
    dt: T,
    o: &SynthesisOptions<T>,
) -> Result<SynthesisResult<T>, SynthesisError> {
    check_common(slab, data, t_end, dt)?;
    let cutoff = data
        .cutoff
        .ok_or_else(|| SynthesisError::Invalid("plane synthesis needs a data cutoff".into()))?;
    let nodes = plane_nodes(quad, data.inner_cutoff, cutoff, slab.dim - 1)?;
    let times = sample_times(o.first_sample, t_end, o.samples);
    let modes: Vec<ModeEntry<T>> = nodes
        .par_iter()
        .map(|&(xi, w)| {
            let amp = data.amplitude(xi, slab.dim);
            mode_energy_curve(slab, xi, amp, data.velocity_mode, &times, dt, o).map(|mut m| {
                m.weight = w;
                m
            })
        })
        .collect::<Result<_, _>>()?;
    let curve = reduce(&times, &modes, "plane");
    let low: T = modes.iter().filter(|m| m.xi_mod < quad.c0).map(|m| m.weight * m.curve.values[0]).sum();
    let mut res = finish(curve, modes, t_end, o);
    res.split = Some((quad.c0, low));
    Ok(res)
}
