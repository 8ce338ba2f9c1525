//! Time integration of one transformed Fourier mode.
//!
//! With `k = 2 pi |xi|` and the longitudinal horizontal velocity written as `i w`, the mode obeys
//!
//! ```text
//! -k w + v' = 0,   w_t + k p + k^2 w - w'' = 0,   v_t + p' + k^2 v - v'' = 0   on (0, l)
//! v = w = 0 at y = 0;   k v + w' = 0,   p - 2 v' = mu h,   h_t = v   at y = l
//! ```
//!
//! Velocities live at nodes `y_j = j dy`, pressure at midpoints. The top conditions use one
//! ghost node for `w` and `v` (and one ghost midpoint for `p`). Stepping is the theta scheme
//! (trapezoid at `theta = 1/2`) with the pressure taken at the half step and constraints
//! enforced at the new level; a few backward-Euler half steps damp stiff start-up transients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use num_complex::Complex;
use num_traits::Zero;

use crate::dispersion::ModeProfile;
use crate::linalg::{BandLu, BandMatrix, LinalgError};
use crate::real::{cr, lit, Real, C};
use crate::symbols::{SlabParams, SymbolError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvolveError {
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("singular system: {0}")]
    Singular(#[from] LinalgError),
    #[error(transparent)]
    Symbol(#[from] SymbolError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Grid1D<T: Real> {
    pub n_cells: usize,
    pub ell: T,
}

impl<T: Real> Grid1D<T> {
    pub fn new(n_cells: usize, ell: T) -> Result<Self, EvolveError> {
        if n_cells < 8 {
            return Err(EvolveError::Parameter(format!("n_cells = {n_cells} < 8")));
        }
        if !(ell > T::zero()) || !ell.is_finite() {
            return Err(EvolveError::Parameter(format!("ell = {ell}")));
        }
        Ok(Self { n_cells, ell })
    }

    pub fn dy(&self) -> T {
        self.ell / lit(self.n_cells as f64)
    }

    pub fn node(&self, j: usize) -> T {
        self.dy() * lit(j as f64)
    }

    pub fn nodes(&self) -> Vec<T> {
        (0..=self.n_cells).map(|j| self.node(j)).collect()
    }

    pub fn midpoints(&self) -> Vec<T> {
        (0..self.n_cells).map(|j| self.dy() * (lit::<T>(j as f64) + lit(0.5))).collect()
    }

    /// trapezoid weights at the nodes
    pub fn weights(&self) -> Vec<T> {
        let dy = self.dy();
        let mut w = vec![dy; self.n_cells + 1];
        w[0] = dy / lit(2.0);
        w[self.n_cells] = dy / lit(2.0);
        w
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct ModeState<T: Real> {
    pub w: Vec<C<T>>,
    pub v: Vec<C<T>>,
    /// midpoint pressure
    pub p: Vec<C<T>>,
    pub h: C<T>,
    pub t: T,
}

impl<T: Real> ModeState<T> {
    pub fn zeros(grid: &Grid1D<T>) -> Self {
        let n = grid.n_cells;
        Self { w: vec![C::zero(); n + 1], v: vec![C::zero(); n + 1], p: vec![C::zero(); n], h: C::zero(), t: T::zero() }
    }

    /// Pure surface perturbation: `u = 0`, `h` given.
    pub fn surface(grid: &Grid1D<T>, h: C<T>) -> Self {
        Self { h, ..Self::zeros(grid) }
    }

    /// Slowest heat mode of the `xi = 0` problem, `w = sin(pi y / 2l)`.
    pub fn heat_mode(grid: &Grid1D<T>) -> Self {
        let mut s = Self::zeros(grid);
        let c = T::PI() / (lit::<T>(2.0) * grid.ell);
        for (j, y) in grid.nodes().into_iter().enumerate() {
            s.w[j] = cr((c * y).sin());
        }
        s
    }

    /// Samples a reconstructed dispersion mode; its grid must match.
    pub fn from_profile(grid: &Grid1D<T>, prof: &ModeProfile<T>) -> Result<Self, EvolveError> {
        if prof.v.len() != grid.n_cells + 1 || prof.p_mid.len() != grid.n_cells {
            return Err(EvolveError::Parameter("profile grid does not match".into()));
        }
        Ok(Self { w: prof.w.clone(), v: prof.v.clone(), p: prof.p_mid.clone(), h: prof.h, t: T::zero() })
    }

    pub fn n_cells(&self) -> usize {
        self.w.len().saturating_sub(1)
    }

    pub fn scale(&self, a: C<T>) -> Self {
        let f = |x: &Vec<C<T>>| x.iter().map(|z| z * a).collect();
        Self { w: f(&self.w), v: f(&self.v), p: f(&self.p), h: self.h * a, t: self.t }
    }

    fn check(&self, grid: &Grid1D<T>) -> Result<(), EvolveError> {
        let n = grid.n_cells;
        if self.w.len() != n + 1 || self.v.len() != n + 1 || self.p.len() != n {
            return Err(EvolveError::Parameter("state arrays do not match the grid".into()));
        }
        let fin = |z: &C<T>| z.re.is_finite() && z.im.is_finite();
        if !(self.w.iter().all(fin) && self.v.iter().all(fin) && self.p.iter().all(fin) && fin(&self.h)) {
            return Err(EvolveError::Parameter("non-finite state".into()));
        }
        Ok(())
    }
}

/// Self-describing JSON record of a state; complex values are `[re, im]` pairs.
pub fn snapshot_json<T: Real>(grid: &Grid1D<T>, xi_mod: T, state: &ModeState<T>) -> String {
    #[derive(Serialize)]
    #[serde(bound = "")]
    struct Snap<'a, T: Real> {
        grid: &'a Grid1D<T>,
        xi_mod: T,
        nodes: Vec<T>,
        midpoints: Vec<T>,
        state: &'a ModeState<T>,
    }
    let s = Snap { grid, xi_mod, nodes: grid.nodes(), midpoints: grid.midpoints(), state };
    serde_json::to_string_pretty(&s).expect("state serializes")
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct CurveMeta<T: Real> {
    pub label: String,
    pub xi_mod: Option<T>,
    pub mu: Option<T>,
    pub n_cells: Option<usize>,
    pub dt: Option<T>,
    /// samples beyond this time come from an exponential tail fit
    pub extrapolated_after: Option<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct EnergyCurve<T: Real> {
    pub times: Vec<T>,
    pub values: Vec<T>,
    pub meta: CurveMeta<T>,
}

impl<T: Real> EnergyCurve<T> {
    pub fn new(times: Vec<T>, values: Vec<T>, meta: CurveMeta<T>) -> Self {
        debug_assert!(times.windows(2).all(|w| w[0] < w[1]));
        Self { times, values, meta }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Largest relative increase `E(t_{k+1})/E(t_k) - 1` between consecutive samples.
    pub fn max_relative_increase(&self) -> T {
        self.values
            .windows(2)
            .filter(|w| w[0] > T::zero())
            .map(|w| (w[1] - w[0]) / w[0])
            .fold(T::neg_infinity(), T::max)
    }
}

pub fn energy_xi<T: Real>(state: &ModeState<T>, mu: T, ell: T) -> T {
    let n = state.n_cells();
    if n == 0 {
        return mu * state.h.norm_sqr() / lit(2.0);
    }
    let dy = ell / lit(n as f64);
    let mut s = T::zero();
    for j in 0..=n {
        let wt = if j == 0 || j == n { dy / lit(2.0) } else { dy };
        s += wt * (state.w[j].norm_sqr() + state.v[j].norm_sqr());
    }
    (s + mu * state.h.norm_sqr()) / lit(2.0)
}

pub fn dissipation_xi<T: Real>(state: &ModeState<T>, xi_mod: T, ell: T) -> T {
    let n = state.n_cells();
    if n == 0 {
        return T::zero();
    }
    let k = T::TAU() * xi_mod;
    let dy = ell / lit(n as f64);
    let (two, four) = (lit::<T>(2.0), lit::<T>(4.0));
    let mut s = T::zero();
    for j in 0..n {
        let wm = (state.w[j] + state.w[j + 1]) / two;
        let vm = (state.v[j] + state.v[j + 1]) / two;
        let dw = (state.w[j + 1] - state.w[j]) / dy;
        let dv = (state.v[j + 1] - state.v[j]) / dy;
        s += four * k * k * wm.norm_sqr() + four * dv.norm_sqr() + two * (vm * k + dw).norm_sqr();
    }
    s * dy / two
}

/// `a(y) = sinh(|xi| y)/sinh(|xi| l)` and its derivative, without overflow.
fn test_profile<T: Real>(x: T, y: T, ell: T) -> (T, T) {
    let two = lit::<T>(2.0);
    let den = -(-two * x * ell).exp_m1();
    let e = (x * (y - ell)).exp();
    let a = e * -(-two * x * y).exp_m1() / den;
    let da = x * e * (T::one() + (-two * x * y).exp()) / den;
    (a, da)
}

pub fn lyapunov_beta<T: Real>(xi_mod: T, mu: T, c_beta: T) -> T {
    c_beta * xi_mod * xi_mod * mu / (T::one() + xi_mod).powi(3)
}

pub fn lyapunov_xi<T: Real>(state: &ModeState<T>, xi_mod: T, mu: T, ell: T, c_beta: T) -> T {
    let e = energy_xi(state, mu, ell);
    let n = state.n_cells();
    if xi_mod.is_zero() || n == 0 {
        return e;
    }
    let k = T::TAU() * xi_mod;
    let dy = ell / lit(n as f64);
    let mut cross = C::zero();
    for j in 0..=n {
        let wt = if j == 0 || j == n { dy / lit(2.0) } else { dy };
        let (a, da) = test_profile(xi_mod, dy * lit(j as f64), ell);
        cross += (state.w[j] * (da / k) + state.v[j] * a) * wt;
    }
    e + lyapunov_beta(xi_mod, mu, c_beta) * (state.h.conj() * cross).re
}

/// Largest midpoint divergence residual relative to the velocity-gradient scale.
pub fn divergence_residual<T: Real>(state: &ModeState<T>, xi_mod: T, ell: T) -> T {
    let n = state.n_cells();
    let k = T::TAU() * xi_mod;
    let dy = ell / lit(n as f64);
    let mut r = T::zero();
    let mut s = T::zero();
    for j in 0..n {
        let c = (state.v[j + 1] - state.v[j]) / dy - (state.w[j] + state.w[j + 1]) * (k / lit(2.0));
        r = r.max(c.norm());
        s = s.max(state.w[j].norm()).max(state.v[j].norm());
    }
    s = s.max(state.w[n].norm()).max(state.v[n].norm());
    if s.is_zero() {
        T::zero()
    } else {
        r / (s * (T::one() / dy + k))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, bound = "")]
pub struct EvolveOptions<T: Real> {
    pub theta: T,
    /// backward-Euler half steps before the theta scheme takes over
    pub startup_steps: usize,
    pub c_beta: T,
    /// stop once `E < stop_below * E(0)`
    pub stop_below: Option<T>,
    /// stop once the per-step log-decrement has been constant to this relative tolerance
    /// over the last few steps
    pub stop_when_exponential: Option<T>,
    /// initial divergence residual above which the state is projected
    pub project_tol: T,
}

impl<T: Real> Default for EvolveOptions<T> {
    fn default() -> Self {
        Self {
            theta: lit(0.5),
            startup_steps: 4,
            c_beta: lit(1e-2),
            stop_below: None,
            stop_when_exponential: None,
            project_tol: lit(1e-8),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Evolution<T: Real> {
    pub curve: EnergyCurve<T>,
    /// dissipation at each sample
    pub dissipation: Vec<T>,
    pub lyapunov: Vec<T>,
    /// `(E_{m+1} - E_m)/dt + D(midpoint state)` per step
    pub identity_residual: Vec<T>,
    pub max_divergence: T,
    /// relative change made by the initial projection, if one was needed
    pub projection: Option<T>,
    pub final_state: ModeState<T>,
}

struct Stepper<T: Real> {
    n: usize,
    lu: BandLu<T>,
    rhs: BandMatrix<T>,
}

#[inline]
fn iw(j: usize) -> usize {
    3 * j
}
#[inline]
fn iv(j: usize) -> usize {
    3 * j + 1
}
#[inline]
fn ip(j: usize) -> usize {
    3 * j + 2
}

impl<T: Real> Stepper<T> {
    fn new(n: usize, dy: T, k: T, mu: T, theta: T, dt: T) -> Result<Self, EvolveError> {
        let dim = 3 * n + 6;
        let mut l = BandMatrix::new(dim, 6, 3);
        let mut r = BandMatrix::new(dim, 6, 3);
        let one = T::one();
        let two = lit::<T>(2.0);
        let half = lit::<T>(0.5);
        let c = |x: T| cr(x);
        let ex = one - theta;
        let d2 = one / (dy * dy);
        let idt = one / dt;
        l.add(iw(0), iw(0), c(one));
        l.add(iv(0), iv(0), c(one));
        for j in 1..=n {
            // A = k^2 - laplacian
            for (row, var) in [(iw(j), iw as fn(usize) -> usize), (iv(j), iv as fn(usize) -> usize)] {
                l.add(row, var(j), c(idt + theta * (k * k + two * d2)));
                r.add(row, var(j), c(idt - ex * (k * k + two * d2)));
                for nb in [j - 1, j + 1] {
                    l.add(row, var(nb), c(-theta * d2));
                    r.add(row, var(nb), c(ex * d2));
                }
            }
            l.add(iw(j), ip(j - 1), c(k * half));
            l.add(iw(j), ip(j), c(k * half));
            l.add(iv(j), ip(j - 1), c(-one / dy));
            l.add(iv(j), ip(j), c(one / dy));
        }
        for j in 0..n {
            l.add(ip(j), iv(j + 1), c(one / dy));
            l.add(ip(j), iv(j), c(-one / dy));
            l.add(ip(j), iw(j), c(-k * half));
            l.add(ip(j), iw(j + 1), c(-k * half));
        }
        // node divergence at the top, central in the ghost
        l.add(ip(n), iv(n + 1), c(half / dy));
        l.add(ip(n), iv(n - 1), c(-half / dy));
        l.add(ip(n), iw(n), c(-k));
        // tangential stress
        l.add(iw(n + 1), iv(n), c(k));
        l.add(iw(n + 1), iw(n + 1), c(half / dy));
        l.add(iw(n + 1), iw(n - 1), c(-half / dy));
        // normal stress, pressure at the half step
        let hh = ip(n + 1);
        l.add(iv(n + 1), ip(n - 1), c(half));
        l.add(iv(n + 1), ip(n), c(half));
        l.add(iv(n + 1), iv(n + 1), c(-theta / dy));
        l.add(iv(n + 1), iv(n - 1), c(theta / dy));
        l.add(iv(n + 1), hh, c(-theta * mu));
        r.add(iv(n + 1), iv(n + 1), c(ex / dy));
        r.add(iv(n + 1), iv(n - 1), c(-ex / dy));
        r.add(iv(n + 1), hh, c(ex * mu));
        // kinematic
        l.add(hh, hh, c(idt));
        l.add(hh, iv(n), c(-theta));
        r.add(hh, hh, c(idt));
        r.add(hh, iv(n), c(ex));
        Ok(Self { n, lu: l.factor()?, rhs: r })
    }

    fn step(&self, x: &[C<T>]) -> Vec<C<T>> {
        let mut b = self.rhs.matvec(x);
        self.lu.solve_in_place(&mut b);
        b
    }

    fn pack(&self, s: &ModeState<T>, dy: T, k: T) -> Vec<C<T>> {
        let n = self.n;
        let mut x = vec![C::zero(); 3 * n + 6];
        for j in 0..=n {
            x[iw(j)] = s.w[j];
            x[iv(j)] = s.v[j];
        }
        for j in 0..n {
            x[ip(j)] = s.p[j];
        }
        let (wg, vg) = ghosts(s, dy, k);
        x[iw(n + 1)] = wg;
        x[iv(n + 1)] = vg;
        x[ip(n + 1)] = s.h;
        x
    }

    fn unpack(&self, x: &[C<T>], t: T) -> ModeState<T> {
        let n = self.n;
        ModeState {
            w: (0..=n).map(|j| x[iw(j)]).collect(),
            v: (0..=n).map(|j| x[iv(j)]).collect(),
            p: (0..n).map(|j| x[ip(j)]).collect(),
            h: x[ip(n + 1)],
            t,
        }
    }
}

/// Ghost values implied by the top divergence and tangential conditions.
fn ghosts<T: Real>(s: &ModeState<T>, dy: T, k: T) -> (C<T>, C<T>) {
    let n = s.n_cells();
    let two = lit::<T>(2.0);
    (s.w[n - 1] - s.v[n] * (two * dy * k), s.v[n - 1] + s.w[n] * (two * dy * k))
}

/// Weighted least-squares projection onto the discrete divergence constraint, with the
/// bottom values held at zero. Returns the projected state and the relative change.
pub fn project_divergence<T: Real>(
    grid: &Grid1D<T>,
    xi_mod: T,
    state: &ModeState<T>,
) -> Result<(ModeState<T>, T), EvolveError> {
    state.check(grid)?;
    let n = grid.n_cells;
    let dy = grid.dy();
    let k = T::TAU() * xi_mod;
    let wts = grid.weights();
    let half = lit::<T>(0.5);
    let dim = 3 * n + 2;
    let mut m = BandMatrix::new(dim, 3, 3);
    let mut b = vec![C::zero(); dim];
    m.add(0, 0, cr(T::one()));
    m.add(1, 1, cr(T::one()));
    for j in 1..=n {
        m.add(iw(j), iw(j), cr(wts[j]));
        m.add(iv(j), iv(j), cr(wts[j]));
        b[iw(j)] = state.w[j] * wts[j];
        b[iv(j)] = state.v[j] * wts[j];
        // gradient of the constraints c_{j-1}, c_j
        m.add(iw(j), ip(j - 1), cr(-k * half));
        m.add(iv(j), ip(j - 1), cr(T::one() / dy));
        if j < n {
            m.add(iw(j), ip(j), cr(-k * half));
            m.add(iv(j), ip(j), cr(-T::one() / dy));
        }
    }
    for j in 0..n {
        m.add(ip(j), iv(j + 1), cr(T::one() / dy));
        m.add(ip(j), iv(j), cr(-T::one() / dy));
        m.add(ip(j), iw(j), cr(-k * half));
        m.add(ip(j), iw(j + 1), cr(-k * half));
    }
    m.factor()?.solve_in_place(&mut b);
    let mut out = state.clone();
    let mut diff = T::zero();
    let mut size = T::zero();
    for j in 0..=n {
        let (w, v) = (b[iw(j)], b[iv(j)]);
        diff += wts[j] * ((w - state.w[j]).norm_sqr() + (v - state.v[j]).norm_sqr());
        size += wts[j] * (state.w[j].norm_sqr() + state.v[j].norm_sqr());
        out.w[j] = w;
        out.v[j] = v;
    }
    let rel = if size.is_zero() { T::zero() } else { (diff / size).sqrt() };
    Ok((out, rel))
}

pub fn evolve<T: Real>(
    slab: &SlabParams<T>,
    xi_mod: T,
    initial: &ModeState<T>,
    t_end: T,
    dt: T,
) -> Result<(EnergyCurve<T>, ModeState<T>), EvolveError> {
    let ev = evolve_with(slab, xi_mod, initial, t_end, dt, &EvolveOptions::default())?;
    Ok((ev.curve, ev.final_state))
}

pub fn evolve_with<T: Real>(
    slab: &SlabParams<T>,
    xi_mod: T,
    initial: &ModeState<T>,
    t_end: T,
    dt: T,
    o: &EvolveOptions<T>,
) -> Result<Evolution<T>, EvolveError> {
    if !(dt > T::zero()) || !dt.is_finite() {
        return Err(EvolveError::Parameter(format!("dt = {dt} must be positive")));
    }
    if !(t_end >= T::zero()) || !t_end.is_finite() {
        return Err(EvolveError::Parameter(format!("T = {t_end}")));
    }
    if !(xi_mod >= T::zero()) || !xi_mod.is_finite() {
        return Err(EvolveError::Parameter(format!("|xi| = {xi_mod}")));
    }
    if !(o.theta >= lit(0.5) && o.theta <= T::one()) {
        return Err(EvolveError::Parameter(format!("theta = {} outside [1/2, 1]", o.theta)));
    }
    let grid = Grid1D::new(initial.n_cells(), slab.ell)?;
    initial.check(&grid)?;
    let mu = slab.mu(xi_mod)?;
    let ell = slab.ell;
    let (n, dy, k) = (grid.n_cells, grid.dy(), T::TAU() * xi_mod);
    let mut s0 = initial.clone();
    s0.w[0] = C::zero();
    s0.v[0] = C::zero();
    let mut projection = None;
    if divergence_residual(&s0, xi_mod, ell) > o.project_tol {
        let (p, rel) = project_divergence(&grid, xi_mod, &s0)?;
        s0 = p;
        projection = Some(rel);
    }
    let main = Stepper::new(n, dy, k, mu, o.theta, dt)?;
    let start = if o.startup_steps > 0 {
        Some(Stepper::new(n, dy, k, mu, T::one(), dt / lit(2.0))?)
    } else {
        None
    };

    let e0 = energy_xi(&s0, mu, ell);
    let mut times = vec![s0.t];
    let mut values = vec![e0];
    let mut dissipation = vec![dissipation_xi(&s0, xi_mod, ell)];
    let mut lyapunov = vec![lyapunov_xi(&s0, xi_mod, mu, ell, o.c_beta)];
    let mut identity_residual = Vec::new();
    let mut max_div = divergence_residual(&s0, xi_mod, ell);

    let t_final = s0.t + t_end;
    let eps = dt * lit(1e-9);
    let mut x = main.pack(&s0, dy, k);
    let mut state = s0;
    let mut m = 0usize;
    const STABLE_WINDOW: usize = 8;
    let mut slopes: Vec<T> = Vec::new();
    while state.t + eps < t_final {
        let (stepper, h) = match &start {
            Some(st) if m < o.startup_steps => (st, dt / lit(2.0)),
            _ => (&main, dt),
        };
        let h = h.min(t_final - state.t);
        let fresh;
        let stepper = if (h - if std::ptr::eq(stepper, &main) { dt } else { dt / lit(2.0) }).abs() > eps {
            // shortened final step
            let th = if std::ptr::eq(stepper, &main) { o.theta } else { T::one() };
            fresh = Stepper::new(n, dy, k, mu, th, h)?;
            &fresh
        } else {
            stepper
        };
        let xn = stepper.step(&x);
        let t = state.t + h;
        let next = main.unpack(&xn, t);
        let e1 = energy_xi(&next, mu, ell);
        let mid = ModeState {
            w: state.w.iter().zip(&next.w).map(|(a, b)| (a + b) / lit::<T>(2.0)).collect(),
            v: state.v.iter().zip(&next.v).map(|(a, b)| (a + b) / lit::<T>(2.0)).collect(),
            p: next.p.clone(),
            h: (state.h + next.h) / lit::<T>(2.0),
            t: t - h / lit(2.0),
        };
        identity_residual.push((e1 - *values.last().unwrap()) / h + dissipation_xi(&mid, xi_mod, ell));
        max_div = max_div.max(divergence_residual(&next, xi_mod, ell));
        times.push(t);
        values.push(e1);
        dissipation.push(dissipation_xi(&next, xi_mod, ell));
        lyapunov.push(lyapunov_xi(&next, xi_mod, mu, ell, o.c_beta));
        x = xn;
        state = next;
        m += 1;
        if let Some(f) = o.stop_below {
            if e1 < f * e0 {
                break;
            }
        }
        if let Some(tol) = o.stop_when_exponential {
            let n_v = values.len();
            if m > o.startup_steps && values[n_v - 2] > T::zero() && e1 > T::zero() {
                slopes.push((values[n_v - 2] / e1).ln() / h);
                if slopes.len() > STABLE_WINDOW {
                    slopes.remove(0);
                }
                if slopes.len() == STABLE_WINDOW && m >= 2 * STABLE_WINDOW + o.startup_steps {
                    let lo = slopes.iter().copied().fold(T::infinity(), T::min);
                    let hi = slopes.iter().copied().fold(T::neg_infinity(), T::max);
                    if lo > T::zero() && hi - lo <= tol * lo {
                        break;
                    }
                }
            }
        }
    }
    let meta = CurveMeta {
        label: "mode".into(),
        xi_mod: Some(xi_mod),
        mu: Some(mu),
        n_cells: Some(n),
        dt: Some(dt),
        extrapolated_after: None,
    };
    Ok(Evolution {
        curve: EnergyCurve::new(times, values, meta),
        dissipation,
        lyapunov,
        identity_residual,
        max_divergence: max_div,
        projection,
        final_state: state,
    })
}

/// Decoupled transverse component: `w_t = w'' - k^2 w`, `w(0) = 0`, `w'(l) = 0`, trapezoid
/// in time. Returns `0.5 * int |w|^2` at every step.
pub fn evolve_transverse<T: Real>(
    grid: &Grid1D<T>,
    xi_mod: T,
    w0: &[C<T>],
    t_end: T,
    dt: T,
) -> Result<EnergyCurve<T>, EvolveError> {
    let n = grid.n_cells;
    if w0.len() != n + 1 {
        return Err(EvolveError::Parameter("profile length does not match the grid".into()));
    }
    if !(dt > T::zero()) {
        return Err(EvolveError::Parameter(format!("dt = {dt} must be positive")));
    }
    let (dy, k) = (grid.dy(), T::TAU() * xi_mod);
    let d2 = T::one() / (dy * dy);
    let half = lit::<T>(0.5);
    // unknowns w_1..w_n; the ghost w_{n+1} = w_{n-1}
    let mut l = BandMatrix::new(n, 1, 1);
    let mut r = BandMatrix::new(n, 1, 1);
    for i in 0..n {
        let diag = k * k + lit::<T>(2.0) * d2;
        l.add(i, i, cr(T::one() / dt + half * diag));
        r.add(i, i, cr(T::one() / dt - half * diag));
        if i > 0 {
            l.add(i, i - 1, cr(-half * d2 * if i == n - 1 { lit(2.0) } else { T::one() }));
            r.add(i, i - 1, cr(half * d2 * if i == n - 1 { lit(2.0) } else { T::one() }));
        }
        if i + 1 < n {
            l.add(i, i + 1, cr(-half * d2));
            r.add(i, i + 1, cr(half * d2));
        }
    }
    let lu = l.factor()?;
    let wts = grid.weights();
    let energy = |w: &[C<T>]| w.iter().zip(&wts[1..]).map(|(z, &c)| c * z.norm_sqr()).sum::<T>() / lit(2.0);
    let mut w: Vec<C<T>> = w0[1..].to_vec();
    let steps = (t_end / dt).round().to_usize().unwrap_or(0);
    let mut times = vec![T::zero()];
    let mut values = vec![energy(&w)];
    for m in 1..=steps {
        let mut b = r.matvec(&w);
        lu.solve_in_place(&mut b);
        w = b;
        times.push(dt * lit(m as f64));
        values.push(energy(&w));
    }
    let meta = CurveMeta {
        label: "transverse".into(),
        xi_mod: Some(xi_mod),
        n_cells: Some(n),
        dt: Some(dt),
        ..Default::default()
    };
    Ok(EnergyCurve::new(times, values, meta))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct InequalityReport<T: Real> {
    pub xi_mod: T,
    pub ell: T,
    pub trials: usize,
    /// worst `|phi(l)|^2 (1+|xi|) / ((1+l) |phi|_{H^1_xi}^2)`; the estimate holds when <= 1
    pub trace_worst: T,
    pub trace_violations: usize,
    /// worst `(1+|xi|) |phi|_{L^2} / |phi|_{H^1_xi}`
    pub poincare_worst: T,
    /// worst `|grad u|^2 / |D u|^2` over random mode states
    pub korn_worst: T,
}

/// P1-exact squared norms of a nodal profile: (L^2, derivative).
fn p1_norms<T: Real>(f: &[C<T>], dy: T) -> (T, T) {
    let mut l2 = T::zero();
    let mut d = T::zero();
    for c in f.windows(2) {
        l2 += (c[0].norm_sqr() + (c[0] * c[1].conj()).re + c[1].norm_sqr()) * dy / lit(3.0);
        d += (c[1] - c[0]).norm_sqr() / dy;
    }
    (l2, d)
}

fn random_profile<T: Real>(rng: &mut ChaCha8Rng, grid: &Grid1D<T>) -> Vec<C<T>> {
    let n = grid.n_cells;
    let mut f = vec![C::zero(); n + 1];
    let cplx = |rng: &mut ChaCha8Rng| Complex::new(lit::<T>(rng.gen_range(-1.0..1.0)), lit::<T>(rng.gen_range(-1.0..1.0)));
    match rng.gen_range(0..4) {
        0 => {
            // random walk
            for j in 1..=n {
                let z = cplx(rng);
                f[j] = f[j - 1] + z;
            }
        }
        1 => {
            // few sine modes
            let modes = rng.gen_range(1..6);
            for _ in 0..modes {
                let m = lit::<T>(rng.gen_range(1..(n / 2).max(2)) as f64 - 0.5);
                let a = cplx(rng);
                for (j, y) in grid.nodes().into_iter().enumerate() {
                    f[j] += a * (T::PI() * m * y / grid.ell).sin();
                }
            }
        }
        2 => {
            // concentrated near the top
            let width = lit::<T>(rng.gen_range(0.5..8.0)) * grid.dy();
            let a = cplx(rng);
            for (j, y) in grid.nodes().into_iter().enumerate() {
                f[j] = a * (-(grid.ell - y) / width).exp();
            }
        }
        _ => {
            for z in f.iter_mut().skip(1) {
                *z = cplx(rng);
            }
        }
    }
    f[0] = C::zero();
    f
}

/// Randomized checks of the trace, Poincare and Korn-type inequalities on the grid.
pub fn discrete_inequality_suite<T: Real>(grid: &Grid1D<T>, xi_mod: T, trials: usize, seed: u64) -> InequalityReport<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (dy, k, l) = (grid.dy(), T::TAU() * xi_mod, grid.ell);
    let one = T::one();
    let mut rep = InequalityReport {
        xi_mod,
        ell: l,
        trials,
        trace_worst: T::zero(),
        trace_violations: 0,
        poincare_worst: T::zero(),
        korn_worst: T::zero(),
    };
    for _ in 0..trials {
        let phi = random_profile(&mut rng, grid);
        let (l2, d) = p1_norms(&phi, dy);
        let h1 = d + k * k * l2;
        if h1.is_zero() {
            continue;
        }
        let trace = phi[grid.n_cells].norm_sqr() * (one + xi_mod) / ((one + l) * h1);
        rep.trace_worst = rep.trace_worst.max(trace);
        if trace > one + lit(1e-12) {
            rep.trace_violations += 1;
        }
        rep.poincare_worst = rep.poincare_worst.max((one + xi_mod) * (l2 / h1).sqrt());

        let w = random_profile(&mut rng, grid);
        let v = random_profile(&mut rng, grid);
        let (wl2, wd) = p1_norms(&w, dy);
        let (vl2, vd) = p1_norms(&v, dy);
        let grad = k * k * (wl2 + vl2) + wd + vd;
        // |kv + w'|^2 exactly for piecewise-linear v and piecewise-constant w'
        let mut cross = T::zero();
        for j in 0..grid.n_cells {
            let dw = (w[j + 1] - w[j]) / dy;
            let vint = (v[j] + v[j + 1]) * (dy / lit(2.0));
            cross += lit::<T>(2.0) * k * (dw.conj() * vint).re + dw.norm_sqr() * dy;
        }
        cross += k * k * vl2;
        let sym = lit::<T>(4.0) * k * k * wl2 + lit::<T>(4.0) * vd + lit::<T>(2.0) * cross;
        if sym > T::zero() {
            rep.korn_worst = rep.korn_worst.max(grad / sym);
        }
    }
    rep
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dispersion::{find_high_freq_root, reconstruct_mode};
    use crate::fit::fit_decay_rate;
    use crate::symbols::Symbol;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn slab(r: f64) -> SlabParams<f64> {
        SlabParams::new(1.0, 3, Symbol::fractional(1.0, 1.0, r)).unwrap()
    }

    fn c(re: f64) -> C<f64> {
        Complex::new(re, 0.0)
    }

    #[test]
    fn grid_basics() {
        assert!(Grid1D::new(7, 1.0).is_err());
        let g = Grid1D::new(8, 2.0).unwrap();
        assert_eq!(g.nodes().len(), 9);
        assert_eq!(g.midpoints()[0], 0.125);
        assert!((g.weights().iter().sum::<f64>() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn energy_examples() {
        let g = Grid1D::new(16, 1.0).unwrap();
        assert_eq!(energy_xi(&ModeState::zeros(&g), 3.0, 1.0), 0.0);
        assert_eq!(energy_xi(&ModeState::surface(&g, c(1.0)), 2.0, 1.0), 1.0);
        assert_eq!(dissipation_xi(&ModeState::surface(&g, c(5.0)), 3.0, 1.0), 0.0);
        assert_eq!(lyapunov_xi(&ModeState::zeros(&g), 2.0, 3.0, 1.0, 1e-2), 0.0);
    }

    #[test]
    fn zero_initial_data_stays_zero() {
        let g = Grid1D::new(32, 1.0).unwrap();
        let (curve, fin) = evolve(&slab(0.5), 2.0, &ModeState::zeros(&g), 1.0, 0.05).unwrap();
        assert!(curve.values.iter().all(|&e| e == 0.0));
        assert_eq!(fin.h, c(0.0));
    }

    #[test]
    fn parameter_errors() {
        let g = Grid1D::new(32, 1.0).unwrap();
        let s = ModeState::surface(&g, c(1.0));
        assert!(matches!(evolve(&slab(0.5), 2.0, &s, 1.0, 0.0), Err(EvolveError::Parameter(_))));
        assert!(matches!(evolve(&slab(0.5), 2.0, &s, 1.0, -1.0), Err(EvolveError::Parameter(_))));
    }

    #[test]
    fn heat_mode_rate() {
        let g = Grid1D::new(256, 1.0).unwrap();
        let ev = evolve_with(&slab(0.5), 0.0, &ModeState::heat_mode(&g), 1.0, 1e-3, &EvolveOptions::default()).unwrap();
        let (rate, q) = fit_decay_rate(&ev.curve, (0.1, 1.0)).unwrap();
        assert!((rate / (PI * PI / 2.0) - 1.0).abs() < 0.02, "{rate}");
        assert!(q > 0.9999);
        // v stays zero, h frozen
        assert!(ev.final_state.v.iter().all(|z| z.norm() < 1e-12));
    }

    #[test]
    fn eigenmode_decays_at_twice_the_root() {
        let (xi, mu) = (8.0, 1.0 + 16.0 * PI);
        let root = find_high_freq_root(xi, mu, 1.0).unwrap();
        let prof = reconstruct_mode(&root, xi, mu, 1.0, 256).unwrap();
        let g = Grid1D::new(256, 1.0).unwrap();
        let s0 = ModeState::from_profile(&g, &prof).unwrap();
        let dt = 1e-3 / root.rho.norm();
        let o = EvolveOptions { startup_steps: 0, ..Default::default() };
        let ev = evolve_with(&slab(0.5), xi, &s0, 2.0, dt, &o).unwrap();
        let (rate, _) = fit_decay_rate(&ev.curve, (0.0, 2.0)).unwrap();
        let want = 2.0 * root.rho.re;
        assert!((rate / want - 1.0).abs() < 0.01, "{rate} vs {want}");
        assert!(ev.max_divergence < 1e-8);
    }

    #[test]
    fn energy_is_monotone_and_identity_holds() {
        let g = Grid1D::new(128, 1.0).unwrap();
        for &(r, xi) in &[(0.0, 0.5), (0.5, 2.0), (1.0, 4.0)] {
            let dt = 0.01;
            let ev = evolve_with(&slab(r), xi, &ModeState::surface(&g, c(1.0)), 2.0, dt, &EvolveOptions::default()).unwrap();
            let inc = ev.curve.max_relative_increase();
            assert!(inc <= 1e-10, "r={r} xi={xi} inc={inc}");
            let ly = &ev.lyapunov;
            for (m, w) in ly.windows(2).enumerate() {
                assert!(w[1] <= w[0] * (1.0 + 1e-10), "lyapunov increased at step {m}");
            }
            for (l, e) in ly.iter().zip(&ev.curve.values) {
                assert!(*l >= 0.5 * e && *l <= 2.0 * e);
            }
        }
    }

    #[test]
    fn projection_enforces_divergence() {
        let g = Grid1D::new(32, 1.0).unwrap();
        let mut s = ModeState::zeros(&g);
        for (j, y) in g.nodes().into_iter().enumerate() {
            s.w[j] = c(y * (1.0 - y));
            s.v[j] = c(y * y);
        }
        s.w[0] = c(0.0);
        let (p, rel) = project_divergence(&g, 1.3, &s).unwrap();
        assert!(rel > 0.0);
        assert!(divergence_residual(&p, 1.3, 1.0) < 1e-12);
        // idempotent
        let (_, rel2) = project_divergence(&g, 1.3, &p).unwrap();
        assert!(rel2 < 1e-12);
    }

    #[test]
    fn transverse_heat_rate() {
        let g = Grid1D::new(256, 1.0).unwrap();
        let xi = 0.3;
        let w0: Vec<C<f64>> = g.nodes().iter().map(|y| c((PI * y / 2.0).sin())).collect();
        let curve = evolve_transverse(&g, xi, &w0, 0.2, 1e-4).unwrap();
        let (rate, _) = fit_decay_rate(&curve, (0.0, 0.2)).unwrap();
        let k = 2.0 * PI * xi;
        let want = 2.0 * (k * k + PI * PI / 4.0);
        assert!((rate / want - 1.0).abs() < 0.02, "{rate} {want}");
    }

    #[test]
    fn inequality_suite() {
        let g = Grid1D::new(64, 1.0).unwrap();
        let r: InequalityReport<f64> = discrete_inequality_suite(&g, 5.0, 1000, 11);
        assert_eq!(r.trace_violations, 0);
        assert!(r.trace_worst > 0.0 && r.korn_worst > 0.0 && r.korn_worst.is_finite(), "{r:?}");
        assert_eq!(r, discrete_inequality_suite(&g, 5.0, 1000, 11));
        // linear profile at xi = 0 gives l/(1+l)
        let phi: Vec<C<f64>> = g.nodes().iter().map(|&y| c(y)).collect();
        let (l2, d) = p1_norms(&phi, g.dy());
        assert!((l2 - 1.0 / 3.0).abs() < 1e-14);
        let ratio = phi[64].norm_sqr() / (2.0 * d);
        assert!((ratio - 0.5).abs() < 1e-14);
    }

    #[test]
    fn snapshot_roundtrip_fields() {
        let g = Grid1D::new(8, 1.0).unwrap();
        let js = snapshot_json(&g, 1.5, &ModeState::surface(&g, Complex::new(1.0, -2.0)));
        let v: serde_json::Value = serde_json::from_str(&js).unwrap();
        assert_eq!(v["state"]["h"], serde_json::json!([1.0, -2.0]));
        assert_eq!(v["nodes"].as_array().unwrap().len(), 9);
    }

    #[test]
    fn single_precision_runs() {
        let g = Grid1D::<f32>::new(32, 1.0).unwrap();
        let s = SlabParams::new(1.0f32, 3, Symbol::fractional(1.0, 1.0, 0.5)).unwrap();
        let (curve, _) = evolve(&s, 1.0, &ModeState::surface(&g, Complex::new(1.0, 0.0)), 1.0, 0.05).unwrap();
        assert!(curve.values.last().unwrap() < &curve.values[0]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn linear_scaling(alpha_re in -3.0f64..3.0, alpha_im in -3.0f64..3.0, xi in 0.1f64..4.0) {
            let g = Grid1D::new(32, 1.0).unwrap();
            let s = ModeState::surface(&g, c(1.0));
            let a = Complex::new(alpha_re, alpha_im);
            let (c1, _) = evolve(&slab(0.5), xi, &s, 0.5, 0.05).unwrap();
            let (c2, _) = evolve(&slab(0.5), xi, &s.scale(a), 0.5, 0.05).unwrap();
            for (e1, e2) in c1.values.iter().zip(&c2.values) {
                prop_assert!((e2 - a.norm_sqr() * e1).abs() <= 1e-12 * a.norm_sqr() * e1.max(1e-300));
            }
        }

        #[test]
        fn surface_data_energy_decreases(r in 0.0f64..1.0, xi in 0.05f64..6.0) {
            let g = Grid1D::new(48, 1.0).unwrap();
            let (curve, _) = evolve(&slab(r), xi, &ModeState::surface(&g, c(1.0)), 1.0, 0.02).unwrap();
            prop_assert!(curve.max_relative_increase() <= 1e-10);
        }
    }
}
