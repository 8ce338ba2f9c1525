//! Dispersion relation det A(rho, xi) = 0 for the separable ansatz `e^{-rho t}`.
//!
//! Mode j has vertical velocity `e^{a_j y}` with `a = (k, -k, s, -s)`, `k = 2 pi |xi|`,
//! `s = sqrt(k^2 - rho)`. Rows are: `v(0)`, `w(0)`, the tangential-stress condition and the
//! normal-stress condition combined with the kinematic one (`-rho h = v(l)`).
//!
//! The determinant is never formed from the raw exponentials. Two well-conditioned bases
//! span the same solution space:
//! * exponential (`k l > 1`): `e^{k(y-l)}`, `e^{-ky}`, and the differences
//!   `e^{s(y-l)} - e^{k(y-l)}`, `e^{-sy} - e^{-ky}`, written with `expm1`;
//! * entire (`k l <= 1`): `cosh ky`, `sinh(ky)/k`, and the divided differences of
//!   `cosh`, `sinh(.)/.` in the squared exponents, which are analytic in `rho`.
//!
//! Each reports the determinant of the column-scaled matrix through an explicit factor.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use num_complex::Complex;
use num_traits::Zero;

use crate::linalg::{det4, hadamard_ratio, matvec4, norm4, null_vector_of, LinalgError, Mat4};
use crate::real::{cexpm1, cr, lit, Real, C};
use crate::symbols::{SlabParams, SymbolError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DispersionError {
    #[error("rho equals 4 pi^2 |xi|^2: exponents are not distinct")]
    DegenerateExponent,
    #[error("largeness hypothesis not met: (1+1/(4 pi)) mu/|xi|^3 = {0:.4} >= 1")]
    HypothesisNotMet(f64),
    #[error("no sign change of det A in the bracket [{0:.6e}, {1:.6e}]")]
    NoRootInBracket(f64, f64),
    #[error("degenerate parameter: mu(0) l^3 = 3")]
    DegenerateParameter,
    #[error("low-frequency continuation failed at |xi| = {0:.4e}")]
    ContinuationFailed(f64),
    #[error("no sign change found on the rho scan grid")]
    NoRootOnGrid,
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Symbol(#[from] SymbolError),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, bound = "")]
pub struct DispersionOptions<T: Real> {
    #[serde(default = "d_bisect_rtol")]
    pub bisect_rtol: T,
    #[serde(default = "d_bisect_iter")]
    pub bisect_max_iter: usize,
    #[serde(default = "d_newton_tol")]
    pub newton_tol: T,
    #[serde(default = "d_newton_iter")]
    pub newton_max_iter: usize,
    /// Moduli below this use low-frequency continuation in sweeps.
    #[serde(default = "d_crossover")]
    pub crossover: T,
    #[serde(default = "d_scan_points")]
    pub scan_points: usize,
    /// Newton starts directly from kappa_0 below this modulus; above it, continuation.
    #[serde(default = "d_seed_radius")]
    pub seed_radius: T,
    #[serde(default = "d_null_tol")]
    pub null_tol: T,
    /// Test hook: flips the sign of the viscous term in Gamma_43.
    #[serde(default)]
    pub flip_gamma43: bool,
}

fn d_bisect_rtol<T: Real>() -> T {
    lit(1e-12)
}
fn d_bisect_iter() -> usize {
    200
}
fn d_newton_tol<T: Real>() -> T {
    lit(1e-12)
}
fn d_newton_iter() -> usize {
    50
}
fn d_crossover<T: Real>() -> T {
    T::one()
}
fn d_scan_points() -> usize {
    512
}
fn d_seed_radius<T: Real>() -> T {
    lit(0.05)
}
fn d_null_tol<T: Real>() -> T {
    lit(1e-8)
}

impl<T: Real> Default for DispersionOptions<T> {
    fn default() -> Self {
        DispersionOptions {
            bisect_rtol: d_bisect_rtol(),
            bisect_max_iter: d_bisect_iter(),
            newton_tol: d_newton_tol(),
            newton_max_iter: d_newton_iter(),
            crossover: d_crossover(),
            scan_points: d_scan_points(),
            seed_radius: d_seed_radius(),
            null_tol: d_null_tol(),
            flip_gamma43: false,
        }
    }
}


#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Basis {
    Exponential,
    Entire,
}

#[derive(Debug, Clone)]
pub struct DispersionMatrix<T: Real> {
    /// Column-scaled matrix: column j multiplied by `exp(-max(0, Re a_j) l)`.
    pub entries: Mat4<T>,
    pub scaling: [T; 4],
    pub rho: C<T>,
    pub xi_mod: T,
    pub mu: T,
    pub ell: T,
    pub basis: Basis,
    stable: Mat4<T>,
    /// det(entries) = det(stable) * factor
    factor: C<T>,
    /// maps stable-basis coefficients to coefficients of the scaled columns
    to_entries: Mat4<T>,
}

impl<T: Real> DispersionMatrix<T> {
    /// Wraps a raw matrix (no alternative basis); used for generic checks.
    pub fn from_raw(entries: Mat4<T>) -> Self {
        let mut id = [[Complex::zero(); 4]; 4];
        for (i, row) in id.iter_mut().enumerate() {
            row[i] = cr(T::one());
        }
        DispersionMatrix {
            entries,
            scaling: [T::one(); 4],
            rho: Complex::zero(),
            xi_mod: T::zero(),
            mu: T::one(),
            ell: T::one(),
            basis: Basis::Exponential,
            stable: entries,
            factor: cr(T::one()),
            to_entries: id,
        }
    }

    pub fn det(&self) -> C<T> {
        det4(&self.stable) * self.factor
    }

    /// |det| of the well-conditioned form over the product of its column norms.
    pub fn det_residual(&self) -> T {
        hadamard_ratio(&self.stable, det4(&self.stable))
    }

    pub fn stable(&self) -> &Mat4<T> {
        &self.stable
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Bracket,
    LowFreq,
    Scan,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Bracket => "bracket",
            Method::LowFreq => "low_freq",
            Method::Scan => "scan",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct DispersionResult<T: Real> {
    pub rho: C<T>,
    /// rho / (4 pi^2 |xi|^2)
    pub kappa: C<T>,
    pub bracket: Option<(T, T)>,
    pub det_residual: T,
    /// Coefficients of the scaled columns, unit norm.
    pub null_vector: [C<T>; 4],
    pub iterations: usize,
    pub method: Method,
    pub xi_mod: T,
    pub mu: T,
    pub ell: T,
}

struct Ctx<T: Real> {
    k: T,
    a: C<T>,
    rho: C<T>,
    mu: T,
    ell: T,
    visc: T,
    flip43: bool,
}

fn two<T: Real>() -> T {
    lit(2.0)
}

/// cosh, sinh(.)/., and their divided differences in the squared exponent, at depth y.
#[derive(Clone, Copy)]
struct Ent<T: Real> {
    ca: C<T>,
    sa: C<T>,
    ck: C<T>,
    sk: C<T>,
    dc: C<T>,
    ds: C<T>,
}

fn entire_at<T: Real>(a2: C<T>, k2: T, y: T) -> Ent<T> {
    let k2c = cr(k2);
    let big = lit::<T>(16.0);
    if a2.norm() * y * y <= big && k2 * y * y <= big {
        let y2 = y * y;
        let (mut ca, mut ck, mut dc) = (cr(T::one()), cr(T::one()), C::zero());
        let (mut sa, mut sk, mut ds) = (cr(y), cr(y), C::zero());
        let (mut pa, mut pk) = (cr(T::one()), T::one());
        let mut h = cr(T::one());
        let mut tc = T::one();
        let mut ts = y;
        for m in 1..80usize {
            let mf = m as f64;
            tc = tc * y2 / lit((2.0 * mf - 1.0) * (2.0 * mf));
            ts = ts * y2 / lit((2.0 * mf) * (2.0 * mf + 1.0));
            if m > 1 {
                h = a2 * h + cr(pk);
            }
            pa *= a2;
            pk *= k2;
            ca += pa * tc;
            ck += cr(pk * tc);
            sa += pa * ts;
            sk += cr(pk * ts);
            dc += h * tc;
            ds += h * ts;
            let bound = (a2.norm().max(k2)).powi(m as i32) * tc * lit((m + 1) as f64);
            if bound <= T::epsilon() * T::epsilon() * (T::one() + y2) {
                break;
            }
        }
        Ent { ca, sa, ck, sk, dc, ds }
    } else {
        let a = a2.sqrt();
        let k = k2.sqrt();
        let ca = (a * y).cosh();
        let sa = if a.is_zero() { cr(y) } else { (a * y).sinh() / a };
        let ck = cr((k * y).cosh());
        let sk = if k.is_zero() { cr(y) } else { cr((k * y).sinh() / k) };
        let d = a2 - k2c;
        Ent { ca, sa, ck, sk, dc: (ca - ck) / d, ds: (sa - sk) / d }
    }
}

fn principal_a<T: Real>(k: T, rho: C<T>) -> C<T> {
    let a = (cr(k * k) - rho).sqrt();
    if a.re < T::zero() {
        -a
    } else {
        a
    }
}

fn check_inputs<T: Real>(rho: C<T>, xi_mod: T, mu: T, ell: T) -> Result<T, DispersionError> {
    if !(xi_mod > T::zero()) || !xi_mod.is_finite() {
        return Err(DispersionError::Invalid("xi_mod must be positive".into()));
    }
    if !(mu > T::zero()) || !(ell > T::zero()) {
        return Err(DispersionError::Invalid("mu and ell must be positive".into()));
    }
    if !(rho.re.is_finite() && rho.im.is_finite()) {
        return Err(DispersionError::Invalid("rho must be finite".into()));
    }
    let k = T::TAU() * xi_mod;
    if (rho - cr(k * k)).norm() <= lit::<T>(1e-12) * k * k {
        return Err(DispersionError::DegenerateExponent);
    }
    Ok(k)
}

fn naive_entries<T: Real>(c: &Ctx<T>) -> (Mat4<T>, [T; 4]) {
    let (k, a, rho, mu, l) = (c.k, c.a, c.rho, c.mu, c.ell);
    let e = (-k * l).exp();
    let phase = Complex::new(T::zero(), a.im * l).exp();
    let inv = (-a * l).exp();
    let s3 = (-a.re * l).exp();
    let g23 = a / k;
    let g33 = cr(T::one()) - rho / (two::<T>() * k * k);
    let rm = rho / mu;
    let g41 = cr(T::one()) + rm * (rho / k - cr(c.visc * k));
    let g42 = cr(T::one()) + rm * (cr(c.visc * k) - rho / k);
    let g43 = if c.flip43 { cr(T::one()) + rm * a * c.visc } else { cr(T::one()) - rm * a * c.visc };
    let g44 = cr(T::one()) + rm * a * c.visc;
    let one = cr(T::one());
    let m = [
        [cr(e), one, cr(s3), one],
        [cr(e), -one, g23 * s3, -g23],
        [one, cr(e), g33 * phase, g33 * inv],
        [g41, g42 * e, g43 * phase, g44 * inv],
    ];
    (m, [e, T::one(), s3, T::one()])
}

fn exponential_form<T: Real>(c: &Ctx<T>) -> (Mat4<T>, C<T>, Mat4<T>) {
    let (k, a, rho, mu, l, s) = (c.k, c.a, c.rho, c.mu, c.ell, c.visc);
    let one = cr(T::one());
    let e = (-k * l).exp();
    let ec = cr(e);
    let delta = rho / (a + k);
    let em = cexpm1(delta * l);
    let q = ec * (delta * l).exp();
    let rm = rho / mu;
    let g41 = one + rm * (rho / k - cr(s * k));
    let g42 = one + rm * (cr(s * k) - rho / k);
    let is_two = s == two::<T>();
    let l4b3 = if c.flip43 {
        rm * ((a + k) * s - rho / k)
    } else if is_two {
        rho * rho * delta / (cr(mu * k) * (a + k))
    } else {
        rm * (delta * s - rho / k)
    };
    let l4b4 = if is_two {
        -(rho * rho * delta * q) / (cr(mu * k) * (a + k)) + g42 * ec * em
    } else {
        ec * em + rm * (rho / k * e - (cr(k * e) - a * q) * s)
    };
    let st = [
        [ec, one, ec * em, C::zero()],
        [ec, -one, ec * (-(delta / k) * (delta * l).exp() + em), delta / k],
        [one, ec, -rho / (two::<T>() * k * k), ec * em - rho * q / (two::<T>() * k * k)],
        [g41, g42 * ec, l4b3, l4b4],
    ];
    let phase = Complex::new(T::zero(), a.im * l).exp();
    let z = C::zero();
    // c = (y1 - y3, y2 - y4, y3 e^{-i Im(a) l}, y4)
    let to = [
        [one, z, -one, z],
        [z, one, z, -one],
        [z, z, phase.conj(), z],
        [z, z, z, one],
    ];
    (st, phase, to)
}

fn entire_form<T: Real>(c: &Ctx<T>) -> (Mat4<T>, C<T>, Mat4<T>) {
    let (k, a, rho, mu, l, s) = (c.k, c.a, c.rho, c.mu, c.ell, c.visc);
    let k2 = k * k;
    let a2 = cr(k2) - rho;
    let f = entire_at(a2, k2, l);
    let rm = rho / mu;
    let (one, z) = (cr(T::one()), C::zero());
    let t2 = cr(two::<T>() * k2);
    let r3 = [t2 * f.ck, t2 * f.sk, f.ca + t2 * f.dc, f.sa + t2 * f.ds];
    let mut r4 = [
        f.ck + rm * (rho * f.sk - f.sk * (s * k2)),
        f.sk + rm * (rho / k2 - cr(s)) * f.ck,
        f.dc + rm * (f.sk - (f.sa + f.ds * k2) * s),
        f.ds + rm * (f.ck / k2 - f.dc * s),
    ];
    if c.flip43 {
        // Gamma_43 acts on the e^{ay} part only: shift by 2 s a rho/mu times its coefficient
        let ea = (a * l).exp();
        r4[2] -= a * ea * s / mu;
        r4[3] -= ea * s / mu;
    }
    let st = [[one, z, z, z], [z, one, z, z], r3, r4];
    let scale = (-(k + a.re) * l).exp();
    let factor = a * rho * rho * two::<T>() / k2 * scale;
    // columns of psi in the exponentials (e^{ky}, e^{-ky}, e^{ay}, e^{-ay}), then / scaling
    let h = lit::<T>(0.5);
    let hk = h / k;
    let tr = [
        [cr(h), cr(hk), cr(h) / rho, cr(hk) / rho],
        [cr(h), cr(-hk), cr(h) / rho, -cr(hk) / rho],
        [z, z, -(cr(h) / rho), -(cr(h) / (a * rho))],
        [z, z, -(cr(h) / rho), cr(h) / (a * rho)],
    ];
    let sc = [(-k * l).exp(), T::one(), (-a.re * l).exp(), T::one()];
    let mut to = tr;
    for (i, row) in to.iter_mut().enumerate() {
        for v in row.iter_mut() {
            *v /= sc[i];
        }
    }
    (st, factor, to)
}

fn build<T: Real>(
    rho: C<T>,
    xi_mod: T,
    mu: T,
    ell: T,
    opts: &DispersionOptions<T>,
) -> Result<DispersionMatrix<T>, DispersionError> {
    let k = check_inputs(rho, xi_mod, mu, ell)?;
    let ctx = Ctx { k, a: principal_a(k, rho), rho, mu, ell, visc: two(), flip43: opts.flip_gamma43 };
    let (entries, scaling) = naive_entries(&ctx);
    let (basis, (stable, factor, to_entries)) = if k * ell > T::one() {
        (Basis::Exponential, exponential_form(&ctx))
    } else {
        (Basis::Entire, entire_form(&ctx))
    };
    Ok(DispersionMatrix { entries, scaling, rho, xi_mod, mu, ell, basis, stable, factor, to_entries })
}

pub fn build_matrix<T: Real>(rho: C<T>, xi_mod: T, mu: T, ell: T) -> Result<DispersionMatrix<T>, DispersionError> {
    build(rho, xi_mod, mu, ell, &DispersionOptions::default())
}

pub fn build_matrix_with<T: Real>(
    rho: C<T>,
    xi_mod: T,
    mu: T,
    ell: T,
    opts: &DispersionOptions<T>,
) -> Result<DispersionMatrix<T>, DispersionError> {
    build(rho, xi_mod, mu, ell, opts)
}

/// Determinant of the column-scaled matrix; its sign is faithful for real `rho < 4 pi^2 |xi|^2`.
pub fn det_dispersion<T: Real>(rho: C<T>, xi_mod: T, mu: T, ell: T) -> Result<C<T>, DispersionError> {
    Ok(build_matrix(rho, xi_mod, mu, ell)?.det())
}

pub fn null_vector<T: Real>(mat: &DispersionMatrix<T>, tol: T) -> Result<[C<T>; 4], DispersionError> {
    let y = null_vector_of(&mat.stable, tol)?;
    let mut c = matvec4(&mat.to_entries, &y);
    let n = norm4(&c);
    if !(n > T::zero()) || !n.is_finite() {
        return Err(LinalgError::NotARoot(f64::NAN).into());
    }
    let kmax = (0..4).fold(0, |b, i| if c[i].norm() > c[b].norm() { i } else { b });
    let ph = c[kmax].conj() / c[kmax].norm();
    for z in c.iter_mut() {
        *z = *z * ph / n;
    }
    Ok(c)
}

/// Bracket of the high-frequency root, as rho values.
pub fn high_freq_bracket<T: Real>(xi_mod: T, mu: T) -> (T, T) {
    let q = T::one() / (lit::<T>(4.0) * T::PI());
    (q * mu / xi_mod, (T::one() + q) * mu / xi_mod)
}

pub fn high_freq_precondition<T: Real>(xi_mod: T, mu: T) -> T {
    (T::one() + T::one() / (lit::<T>(4.0) * T::PI())) * mu / xi_mod.powi(3)
}

fn real_det<T: Real>(rho: T, xi: T, mu: T, ell: T, o: &DispersionOptions<T>) -> Result<T, DispersionError> {
    Ok(build(cr(rho), xi, mu, ell, o)?.det().re)
}

fn bisect<T: Real>(
    mut lo: T,
    mut hi: T,
    xi: T,
    mu: T,
    ell: T,
    o: &DispersionOptions<T>,
) -> Result<(T, usize), DispersionError> {
    let mut flo = real_det(lo, xi, mu, ell, o)?;
    let fhi = real_det(hi, xi, mu, ell, o)?;
    if flo == T::zero() {
        return Ok((lo, 0));
    }
    if fhi == T::zero() {
        return Ok((hi, 0));
    }
    if flo.signum() == fhi.signum() || flo.is_nan() || fhi.is_nan() {
        return Err(DispersionError::NoRootInBracket(lo.to_f64_lossy(), hi.to_f64_lossy()));
    }
    let mut it = 0;
    while it < o.bisect_max_iter {
        it += 1;
        let mid = lo + (hi - lo) / two();
        if mid <= lo || mid >= hi {
            break;
        }
        let fm = real_det(mid, xi, mu, ell, o)?;
        if fm == T::zero() {
            return Ok((mid, it));
        }
        if fm.signum() == flo.signum() {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
        if hi - lo <= o.bisect_rtol * hi {
            break;
        }
    }
    Ok((lo + (hi - lo) / two(), it))
}

fn finish<T: Real>(
    rho: C<T>,
    xi_mod: T,
    mu: T,
    ell: T,
    o: &DispersionOptions<T>,
    method: Method,
    bracket: Option<(T, T)>,
    iterations: usize,
) -> Result<DispersionResult<T>, DispersionError> {
    let m = build(rho, xi_mod, mu, ell, o)?;
    // a loose root tolerance cannot give a tighter null residual
    let tol = o.null_tol.max(lit::<T>(10.0) * o.bisect_rtol);
    let null_vector = null_vector(&m, tol)?;
    let k = T::TAU() * xi_mod;
    Ok(DispersionResult {
        rho,
        kappa: rho / (k * k),
        bracket,
        det_residual: m.det_residual(),
        null_vector,
        iterations,
        method,
        xi_mod,
        mu,
        ell,
    })
}

pub fn find_high_freq_root<T: Real>(xi_mod: T, mu: T, ell: T) -> Result<DispersionResult<T>, DispersionError> {
    find_high_freq_root_with(xi_mod, mu, ell, &DispersionOptions::default())
}

pub fn find_high_freq_root_with<T: Real>(
    xi_mod: T,
    mu: T,
    ell: T,
    o: &DispersionOptions<T>,
) -> Result<DispersionResult<T>, DispersionError> {
    check_inputs(C::zero(), xi_mod, mu, ell)?;
    let pre = high_freq_precondition(xi_mod, mu);
    if !(pre < T::one()) {
        return Err(DispersionError::HypothesisNotMet(pre.to_f64_lossy()));
    }
    let (lo, hi) = high_freq_bracket(xi_mod, mu);
    let (rho, it) = bisect(lo, hi, xi_mod, mu, ell, o)?;
    finish(cr(rho), xi_mod, mu, ell, o, Method::Bracket, Some((lo, hi)), it)
}

/// det of the entire-basis form as a function of kappa (analytic, even in a).
fn kappa_fn<T: Real>(kappa: C<T>, xi: T, mu: T, ell: T, o: &DispersionOptions<T>) -> (C<T>, T) {
    let k = T::TAU() * xi;
    let rho = kappa * (k * k);
    let ctx = Ctx { k, a: principal_a(k, rho), rho, mu, ell, visc: two(), flip43: o.flip_gamma43 };
    let (st, _, _) = entire_form(&ctx);
    let d = det4(&st);
    (d, hadamard_ratio(&st, d))
}

fn newton_kappa<T: Real>(
    seed: C<T>,
    xi: T,
    mu: T,
    ell: T,
    o: &DispersionOptions<T>,
) -> Option<(C<T>, usize)> {
    let mut kap = seed;
    for it in 1..=o.newton_max_iter {
        let (f, ratio) = kappa_fn(kap, xi, mu, ell, o);
        if ratio <= o.newton_tol {
            return Some((kap, it - 1));
        }
        let h = cr(lit::<T>(1e-6) * (T::one() + kap.norm()));
        let fp = (kappa_fn(kap + h, xi, mu, ell, o).0 - kappa_fn(kap - h, xi, mu, ell, o).0) / (h * two::<T>());
        if fp.is_zero() || !fp.re.is_finite() {
            return None;
        }
        let step = f / fp;
        kap -= step;
        if !(kap.re.is_finite() && kap.im.is_finite()) {
            return None;
        }
        if step.norm() <= lit::<T>(4.0) * T::epsilon() * kap.norm() {
            return Some((kap, it));
        }
    }
    let (_, ratio) = kappa_fn(kap, xi, mu, ell, o);
    (ratio <= o.newton_tol.sqrt() * o.newton_tol.sqrt().sqrt()).then_some((kap, o.newton_max_iter))
}

pub fn find_low_freq_root<T: Real>(xi_mod: T, slab: &SlabParams<T>) -> Result<DispersionResult<T>, DispersionError> {
    find_low_freq_root_with(xi_mod, slab, &DispersionOptions::default())
}

pub fn find_low_freq_root_with<T: Real>(
    xi_mod: T,
    slab: &SlabParams<T>,
    o: &DispersionOptions<T>,
) -> Result<DispersionResult<T>, DispersionError> {
    let ell = slab.ell;
    let mu0 = slab.mu(T::zero())?;
    let three = lit::<T>(3.0);
    if (mu0 * ell.powi(3) - three).abs() <= lit::<T>(1e-9) * three {
        return Err(DispersionError::DegenerateParameter);
    }
    let mu = slab.mu(xi_mod)?;
    check_inputs(C::zero(), xi_mod, mu, ell)?;
    let mut total = 0;
    let kappa = if xi_mod <= o.seed_radius {
        let seed = cr(mu * ell.powi(3) / three);
        let (kap, it) =
            newton_kappa(seed, xi_mod, mu, ell, o).ok_or(DispersionError::ContinuationFailed(xi_mod.to_f64_lossy()))?;
        total += it;
        kap
    } else {
        let start = o.seed_radius;
        let mu_s = slab.mu(start)?;
        let (mut kap, it) = newton_kappa(cr(mu_s * ell.powi(3) / three), start, mu_s, ell, o)
            .ok_or(DispersionError::ContinuationFailed(start.to_f64_lossy()))?;
        total += it;
        let steps = ((xi_mod / start).ln() / lit::<T>(1.2f64.ln())).ceil().to_usize().unwrap_or(1).max(1);
        for i in 1..=steps {
            let x = start * (xi_mod / start).powf(lit::<T>(i as f64 / steps as f64));
            let m = slab.mu(x)?;
            let (k2, it) =
                newton_kappa(kap, x, m, ell, o).ok_or(DispersionError::ContinuationFailed(x.to_f64_lossy()))?;
            kap = k2;
            total += it;
        }
        kap
    };
    let k = T::TAU() * xi_mod;
    let rho = kappa * (k * k);
    let mut r = finish(rho, xi_mod, mu, ell, o, Method::LowFreq, None, total)?;
    r.kappa = kappa;
    r.det_residual = kappa_fn(kappa, xi_mod, mu, ell, o).1;
    Ok(r)
}

/// First sign change of the real determinant on a log grid in (0, 4 pi^2 |xi|^2), then bisection.
pub fn find_scan_root_with<T: Real>(
    xi_mod: T,
    mu: T,
    ell: T,
    o: &DispersionOptions<T>,
) -> Result<DispersionResult<T>, DispersionError> {
    let k = check_inputs(C::zero(), xi_mod, mu, ell)?;
    let top = k * k * (T::one() - lit::<T>(1e-6));
    let bottom = k * k * lit::<T>(1e-9);
    let n = o.scan_points.max(2);
    let mut prev: Option<(T, T)> = None;
    for i in 0..n {
        let r = bottom * (top / bottom).powf(lit::<T>(i as f64 / (n - 1) as f64));
        let f = real_det(r, xi_mod, mu, ell, o)?;
        if let Some((rp, fp)) = prev {
            if fp.signum() != f.signum() && fp != T::zero() {
                let (rho, it) = bisect(rp, r, xi_mod, mu, ell, o)?;
                return finish(cr(rho), xi_mod, mu, ell, o, Method::Scan, Some((rp, r)), it + i);
            }
        }
        prev = Some((r, f));
    }
    Err(DispersionError::NoRootOnGrid)
}

/// Which method a sweep uses at this modulus.
pub fn select_method<T: Real>(xi_mod: T, mu: T, o: &DispersionOptions<T>) -> Method {
    if high_freq_precondition(xi_mod, mu) < T::one() {
        Method::Bracket
    } else if xi_mod < o.crossover {
        Method::LowFreq
    } else {
        Method::Scan
    }
}

#[derive(Debug, Clone)]
pub struct SweepRow<T: Real> {
    pub xi_mod: T,
    pub mu: Option<T>,
    pub method: Method,
    pub result: Result<DispersionResult<T>, DispersionError>,
}

pub fn root_at<T: Real>(
    xi_mod: T,
    slab: &SlabParams<T>,
    o: &DispersionOptions<T>,
) -> (Option<T>, Method, Result<DispersionResult<T>, DispersionError>) {
    let mu = match slab.mu(xi_mod) {
        Ok(m) => m,
        Err(e) => return (None, Method::Scan, Err(e.into())),
    };
    let method = select_method(xi_mod, mu, o);
    let res = match method {
        Method::Bracket => find_high_freq_root_with(xi_mod, mu, slab.ell, o),
        Method::LowFreq => find_low_freq_root_with(xi_mod, slab, o),
        Method::Scan => find_scan_root_with(xi_mod, mu, slab.ell, o),
    };
    (Some(mu), method, res)
}

pub fn sweep_dispersion<T: Real>(
    slab: &SlabParams<T>,
    xi_list: &[T],
    o: &DispersionOptions<T>,
) -> Result<Vec<SweepRow<T>>, DispersionError> {
    if xi_list.is_empty() {
        return Err(DispersionError::Invalid("empty modulus list".into()));
    }
    if let Some(x) = xi_list.iter().find(|x| !(**x > T::zero())) {
        return Err(DispersionError::Invalid(format!("nonpositive modulus {x}")));
    }
    Ok(xi_list
        .par_iter()
        .map(|&x| {
            let (mu, method, result) = root_at(x, slab, o);
            SweepRow { xi_mod: x, mu, method, result }
        })
        .collect())
}

/// Residuals of the transformed equations, relative to the profile scale.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct ModeResiduals<T: Real> {
    pub bulk: [T; 3],
    pub bottom_v: T,
    pub bottom_w: T,
    pub tangential: T,
    pub normal: T,
    pub kinematic: T,
    pub scale: T,
}

impl<T: Real> ModeResiduals<T> {
    pub fn max_bulk(&self) -> T {
        self.bulk.iter().fold(T::zero(), |a, &b| a.max(b))
    }
    pub fn max_boundary(&self) -> T {
        [self.bottom_v, self.bottom_w, self.tangential, self.normal, self.kinematic]
            .iter()
            .fold(T::zero(), |a, &b| a.max(b))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct ModeProfile<T: Real> {
    pub grid: Vec<T>,
    pub v: Vec<C<T>>,
    pub w: Vec<C<T>>,
    pub p: Vec<C<T>>,
    /// pressure at cell midpoints
    pub p_mid: Vec<C<T>>,
    pub h: C<T>,
    pub rho: C<T>,
    pub a: [C<T>; 4],
    /// (v_j, w_j, p_j): v = sum v_j e^{a_j y}
    pub coeffs: [(C<T>, C<T>, C<T>); 4],
    pub residuals: ModeResiduals<T>,
}

/// f, f', f'', f''', f'''' and pressure of the stable basis at depth y.
fn basis_eval<T: Real>(c: &Ctx<T>, basis: Basis, y: T) -> [[C<T>; 6]; 4] {
    let (k, a, rho, l) = (c.k, c.a, c.rho, c.ell);
    let one = cr(T::one());
    match basis {
        Basis::Exponential => {
            let delta = rho / (a + k);
            let e1 = (k * (y - l)).exp();
            let e2 = (-k * y).exp();
            let ea = (a * (y - l)).exp();
            let eb = (-a * y).exp();
            let b3 = cr(e1) * cexpm1(delta * (l - y));
            let b4 = cr(e2) * cexpm1(delta * y);
            // a^n - k^n without cancellation
            let d1 = -delta;
            let d2 = -rho;
            let d3 = -delta * (a * a + a * k + cr(k * k));
            let d4 = -rho * (a * a + cr(k * k));
            let kp = [T::one(), k, k * k, k * k * k, k * k * k * k];
            let rk = rho / k;
            let mut out = [[C::zero(); 6]; 4];
            for n in 0..5 {
                out[0][n] = cr(kp[n] * e1);
                let sg = if n % 2 == 0 { T::one() } else { -T::one() };
                out[1][n] = cr(sg * kp[n] * e2);
                let dn = [C::zero(), d1, d2, d3, d4][n];
                out[2][n] = dn * ea + b3 * kp[n];
                out[3][n] = (dn * eb + b4 * kp[n]) * sg;
            }
            out[0][5] = rk * e1;
            out[1][5] = -rk * e2;
            out[2][5] = -rk * e1;
            out[3][5] = rk * e2;
            let _ = one;
            out
        }
        Basis::Entire => {
            let k2 = k * k;
            let a2 = cr(k2) - rho;
            let f = entire_at(a2, k2, y);
            let k2c = cr(k2);
            // derivatives from the relations in the module docs
            let p3d1 = f.sa + f.ds * k2;
            let p3d2 = f.ca + f.dc * k2;
            let p3d3 = a2 * f.sa + k2c * p3d1;
            let p3d4 = a2 * f.ca + k2c * p3d2;
            [
                [f.ck, f.sk * k2, f.ck * k2, f.sk * (k2 * k2), f.ck * (k2 * k2), rho * f.sk],
                [f.sk, f.ck, f.sk * k2, f.ck * k2, f.sk * (k2 * k2), rho / k2 * f.ck],
                [f.dc, p3d1, p3d2, p3d3, p3d4, f.sk],
                [f.ds, f.dc, p3d1, p3d2, p3d3, f.ck / k2],
            ]
        }
    }
}

pub fn reconstruct_mode<T: Real>(
    result: &DispersionResult<T>,
    xi_mod: T,
    mu: T,
    ell: T,
    grid_size: usize,
) -> Result<ModeProfile<T>, DispersionError> {
    reconstruct_mode_with(result, xi_mod, mu, ell, grid_size, &DispersionOptions::default())
}

pub fn reconstruct_mode_with<T: Real>(
    result: &DispersionResult<T>,
    xi_mod: T,
    mu: T,
    ell: T,
    grid_size: usize,
    o: &DispersionOptions<T>,
) -> Result<ModeProfile<T>, DispersionError> {
    if grid_size < 1 {
        return Err(DispersionError::Invalid("grid_size must be positive".into()));
    }
    let rho = result.rho;
    let m = build(rho, xi_mod, mu, ell, o)?;
    // Null vectors are recomputed in the stable basis; tolerance is loose here because the
    // caller's root may come from a coarse solve.
    let y = null_vector_of(&m.stable, lit::<T>(1e-3))?;
    let k = T::TAU() * xi_mod;
    let ctx = Ctx { k, a: principal_a(k, rho), rho, mu, ell, visc: two(), flip43: o.flip_gamma43 };
    let eval = |yy: T| {
        let b = basis_eval(&ctx, m.basis, yy);
        let mut out = [C::zero(); 6];
        for (j, bj) in b.iter().enumerate() {
            for n in 0..6 {
                out[n] += y[j] * bj[n];
            }
        }
        out
    };
    let top = eval(ell);
    let mut h = -top[0] / rho;
    let n = grid_size;
    let dy = ell / lit(n as f64);
    let grid: Vec<T> = (0..=n).map(|j| lit::<T>(j as f64) * dy).collect();
    let vals: Vec<[C<T>; 6]> = grid.iter().map(|&g| eval(g)).collect();
    let mids: Vec<[C<T>; 6]> = (0..n).map(|j| eval((lit::<T>(j as f64) + lit(0.5)) * dy)).collect();
    let vmax = vals.iter().map(|f| f[0].norm().max(f[1].norm() / k)).fold(T::zero(), T::max);
    // normalise to a unit surface amplitude when the surface moves, else to unit velocity
    let norm = if h.norm() > lit::<T>(1e-8) * vmax / (mu.max(T::one())) {
        h
    } else {
        cr(vmax)
    };
    h /= norm;
    let sc = |z: C<T>| z / norm;
    let v: Vec<C<T>> = vals.iter().map(|f| sc(f[0])).collect();
    let w: Vec<C<T>> = vals.iter().map(|f| sc(f[1] / k)).collect();
    let p: Vec<C<T>> = vals.iter().map(|f| sc(f[5])).collect();
    let p_mid: Vec<C<T>> = mids.iter().map(|f| sc(f[5])).collect();

    // residuals from analytic derivatives of the combined profile
    let mut bulk = [T::zero(); 3];
    let mut scale = T::zero();
    let k2 = k * k;
    for f in &vals {
        let (vv, v1, v2, v3, v4, pp) = (sc(f[0]), sc(f[1]), sc(f[2]), sc(f[3]), sc(f[4]), sc(f[5]));
        let ww = v1 / k;
        let w2 = v3 / k;
        let p1 = (v4 - (cr(k2) - rho) * v2) / k2;
        scale = scale.max(vv.norm()).max(ww.norm()).max((pp / k).norm());
        bulk[0] = bulk[0].max((v1 - ww * k).norm());
        bulk[1] = bulk[1].max((-rho * ww + pp * k + ww * k2 - w2).norm());
        bulk[2] = bulk[2].max((-rho * vv + p1 + vv * k2 - v2).norm());
    }
    let term = k2.max(rho.norm()).max(T::one());
    for b in bulk.iter_mut() {
        *b /= scale * term;
    }
    let t = |z: C<T>| z / norm;
    let v0 = vals[0];
    let residuals = ModeResiduals {
        bulk,
        bottom_v: t(v0[0]).norm() / scale,
        bottom_w: (t(v0[1]) / k).norm() / scale,
        tangential: (t(top[0]) * k + t(top[2]) / k).norm() / (scale * k),
        normal: (t(top[5]) - t(top[1]) * two::<T>() - h * mu).norm() / (scale * k + mu * h.norm()),
        kinematic: (-rho * h - t(top[0])).norm() / scale.max(T::epsilon()),
        scale,
    };
    let a = [cr(k), cr(-k), ctx.a, -ctx.a];
    let mut coeffs = [(C::zero(), C::zero(), C::zero()); 4];
    let cvec = matvec4(&m.to_entries, &y);
    for j in 0..4 {
        let vj = cvec[j] * m.scaling[j] / norm;
        let wj = a[j] * vj / k;
        let pj = if j < 2 { -(cr(k2) - rho - a[j] * a[j]) * vj / a[j] } else { C::zero() };
        coeffs[j] = (vj, wj, pj);
    }
    Ok(ModeProfile { grid, v, w, p, p_mid, h, rho, a, coeffs, residuals })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::symbols::Symbol;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn mu_frac(r: f64, xi: f64) -> f64 {
        1.0 + (2.0 * PI * xi).powf(2.0 * r)
    }

    fn c(re: f64) -> C<f64> {
        Complex::new(re, 0.0)
    }

    #[test]
    fn zero_rho_gives_zero_det() {
        for &xi in &[1e-3, 0.05, 0.159, 0.16, 1.0, 8.0, 64.0] {
            assert_eq!(det_dispersion(c(0.0), xi, 2.0, 1.0).unwrap(), Complex::zero(), "xi={xi}");
        }
    }

    #[test]
    fn degenerate_rho_rejected() {
        let k = 2.0 * PI * 3.0;
        assert_eq!(det_dispersion(c(k * k), 3.0, 2.0, 1.0), Err(DispersionError::DegenerateExponent));
        assert!(build_matrix(c(k * k), 3.0, 2.0, 1.0).is_err());
    }

    #[test]
    fn deterministic_bits() {
        let a = det_dispersion(c(0.7), 4.0, 3.0, 1.0).unwrap();
        let b = det_dispersion(c(0.7), 4.0, 3.0, 1.0).unwrap();
        assert_eq!(a.re.to_bits(), b.re.to_bits());
        assert_eq!(a.im.to_bits(), b.im.to_bits());
    }

    #[test]
    fn stable_forms_agree_with_naive_where_naive_is_accurate() {
        // moderate k l, rho not small: plain GEPP on the scaled matrix is trustworthy
        for &(xi, rho) in &[(0.3, 1.5), (0.5, 4.0), (1.0, 20.0), (0.12, 0.3)] {
            let m = build_matrix(c(rho), xi, 2.5, 1.0).unwrap();
            let naive = det4(&m.entries);
            let stable = m.det();
            assert!((naive - stable).norm() <= 1e-9 * naive.norm().max(1e-300), "{xi} {rho} {naive} {stable}");
        }
    }

    #[test]
    fn both_bases_agree_across_the_switch() {
        let xi = 1.0 / (2.0 * PI);
        for &rho in &[0.05, 0.3, 0.9] {
            let ctx = |a| Ctx { k: 2.0 * PI * xi, a, rho: c(rho), mu: 1.7, ell: 1.0, visc: 2.0, flip43: false };
            let a = principal_a(2.0 * PI * xi, c(rho));
            let (s1, f1, _) = exponential_form(&ctx(a));
            let (s2, f2, _) = entire_form(&ctx(a));
            let d1 = det4(&s1) * f1;
            let d2 = det4(&s2) * f2;
            assert!((d1 - d2).norm() <= 1e-10 * d1.norm(), "{d1} {d2}");
        }
    }

    #[test]
    fn complex_rho_bases_agree() {
        let xi = 0.15;
        let rho = Complex::new(0.4, 0.3);
        let k = 2.0 * PI * xi;
        let a = principal_a(k, rho);
        let ctx = Ctx { k, a, rho, mu: 1.7, ell: 1.3, visc: 2.0, flip43: false };
        let (s1, f1, _) = exponential_form(&ctx);
        let (s2, f2, _) = entire_form(&ctx);
        let d1 = det4(&s1) * f1;
        let d2 = det4(&s2) * f2;
        assert!((d1 - d2).norm() <= 1e-10 * d1.norm());
    }

    #[test]
    fn scaling_factors_at_high_frequency() {
        let mu = mu_frac(0.5, 64.0);
        let m = build_matrix(c(1.0), 64.0, mu, 1.0).unwrap();
        let want = (-2.0 * PI * 64.0f64).exp();
        assert!((m.scaling[0] / want - 1.0).abs() < 1e-12);
        let a = ((2.0 * PI * 64.0f64).powi(2) - 1.0).sqrt();
        assert!((m.scaling[2] / (-a).exp() - 1.0).abs() < 1e-10);
        assert!(m.entries.iter().flatten().all(|z| z.re.is_finite() && z.im.is_finite()));
    }

    #[test]
    fn sign_matches_extended_precision_at_moderate_frequency() {
        // 60-digit reference signs of the unscaled determinant at |xi| = 4, r = 1/2, l = 1
        let mu = mu_frac(0.5, 4.0);
        let (lo, hi) = high_freq_bracket(4.0, mu);
        assert!(det_dispersion(c(lo), 4.0, mu, 1.0).unwrap().re < 0.0);
        assert!(det_dispersion(c(hi), 4.0, mu, 1.0).unwrap().re > 0.0);
    }

    #[test]
    fn high_freq_roots_match_reference() {
        // 900-digit reference roots, kappa = rho |xi| / mu
        let cases = [
            (0.0, 8.0, 0.0795779414915),
            (0.0, 32.0, 0.0795774788888),
            (0.25, 16.0, 0.0795777954109),
            (0.5, 64.0, 0.0795776565506),
            (1.0, 64.0, 0.0796518360529),
            (0.5, 8.0, 0.079589521434),
        ];
        for &(r, xi, kref) in &cases {
            let mu = mu_frac(r, xi);
            let res = find_high_freq_root(xi, mu, 1.0).unwrap();
            let kap = res.rho.re * xi / mu;
            assert!((kap - kref).abs() <= 1e-10 * kref, "r={r} xi={xi}: {kap} vs {kref}");
            assert!(res.det_residual <= 1e-8, "{}", res.det_residual);
            let (lo, hi) = res.bracket.unwrap();
            assert!(res.rho.re > lo && res.rho.re < hi);
        }
    }

    #[test]
    fn bracket_examples() {
        let (lo, hi) = high_freq_bracket(64.0, mu_frac(0.5, 64.0));
        // (1 + 1/(4 pi)) (1 + 128 pi)/64 = 6.8001
        assert!((lo - 0.5013).abs() < 1e-4 && (hi - 6.8001).abs() < 1e-3, "{lo} {hi}");
        let (lo, hi) = high_freq_bracket(8.0f64, 2.0);
        assert!((lo - 0.01989).abs() < 1e-5 && (hi - 0.2699).abs() < 1e-4);
    }

    #[test]
    fn precondition_violation() {
        let mu = mu_frac(1.0, 32.0);
        match find_high_freq_root(32.0, mu, 1.0) {
            // mu/|xi|^3 = 1.234; with the (1 + 1/(4 pi)) factor 1.332
            Err(DispersionError::HypothesisNotMet(v)) => assert!((v - 1.332).abs() < 0.001, "{v}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn published_kappa_interval_holds_no_root() {
        // kappa in [1/2, (2+4 pi)/(8 pi)] from the original expansion: det keeps one sign there
        let mu = mu_frac(0.5, 64.0);
        let s = mu / 64.0;
        let a = det_dispersion(c(0.5 * s), 64.0, mu, 1.0).unwrap().re;
        let b = det_dispersion(c((2.0 + 4.0 * PI) / (8.0 * PI) * s), 64.0, mu, 1.0).unwrap().re;
        assert_eq!(a.signum(), b.signum());
    }

    #[test]
    fn mutation_hook_breaks_bracket() {
        let o = DispersionOptions { flip_gamma43: true, ..Default::default() };
        for &(r, xi) in &[(0.0, 8.0), (0.5, 64.0), (1.0, 64.0)] {
            let mu = mu_frac(r, xi);
            assert!(find_high_freq_root_with(xi, mu, 1.0, &o).is_err(), "r={r} xi={xi}");
        }
    }

    fn slab(g: f64) -> SlabParams<f64> {
        SlabParams::new(1.0, 3, Symbol::fractional(g, 0.0, 0.5)).unwrap()
    }

    #[test]
    fn low_freq_kappa_reference() {
        let refs = [(0.1, 0.19946), (0.01, 0.331154), (0.001, 0.3333114)];
        for &(xi, kref) in &refs {
            let r = find_low_freq_root(xi, &slab(1.0)).unwrap();
            assert!((r.kappa.re - kref).abs() < 2e-5, "{xi}: {}", r.kappa);
            assert!(r.kappa.im.abs() < 1e-10);
            assert!(r.det_residual <= 1e-10);
        }
    }

    #[test]
    fn low_freq_degenerate_and_g4() {
        assert_eq!(find_low_freq_root(0.01, &slab(3.0)).unwrap_err(), DispersionError::DegenerateParameter);
        let r = find_low_freq_root(0.01, &slab(4.0)).unwrap();
        assert!((r.kappa.re - 1.32669).abs() < 1e-4, "{}", r.kappa);
        assert!(r.rho.re > 0.0);
        let a2 = Complex::new((2.0 * PI * 0.01f64).powi(2), 0.0) - r.rho;
        assert!(a2.re < 0.0, "a_3 is imaginary");
    }

    fn unscaled(rho: C<f64>, xi: f64, mu: f64, a: C<f64>) -> Mat4<f64> {
        let k = 2.0 * PI * xi;
        let one = c(1.0);
        let e = |x: C<f64>| x.exp();
        let g33 = one - rho / (2.0 * k * k);
        [
            [one, one, one, one],
            [one, -one, a / k, -a / k],
            [e(c(k)), e(c(-k)), g33 * e(a), g33 * e(-a)],
            [
                (one + rho / mu * (rho / k - 2.0 * k)) * e(c(k)),
                (one + rho / mu * (2.0 * k - rho / k)) * e(c(-k)),
                (one - 2.0 * a * rho / mu) * e(a),
                (one + 2.0 * a * rho / mu) * e(-a),
            ],
        ]
    }

    #[test]
    fn branch_swap_negates_det_and_keeps_roots() {
        for &(xi, rho) in &[(0.3, Complex::new(0.5, 0.2)), (0.8, Complex::new(3.0, 0.0)), (0.4, Complex::new(2.0, -1.0))] {
            let k = 2.0 * PI * xi;
            let a = principal_a(k, rho);
            let d = det4(&unscaled(rho, xi, 2.0, a));
            let s = det4(&unscaled(rho, xi, 2.0, -a));
            assert!((d + s).norm() <= 1e-10 * d.norm(), "{d} {s}");
            // the scaled determinant is the unscaled one times exp(-(k + Re a) l)
            let m = build_matrix(rho, xi, 2.0, 1.0).unwrap();
            let want = d * (-(k + a.re)).exp();
            assert!((m.det() - want).norm() <= 1e-9 * want.norm(), "{} {}", m.det(), want);
        }
        // the other branch vanishes at the same root
        let mu = mu_frac(0.5, 1.0);
        let r = find_scan_root_with(1.0, mu, 1.0, &DispersionOptions::default()).unwrap();
        let a = principal_a(2.0 * PI, r.rho);
        let at_root = det4(&unscaled(r.rho, 1.0, mu, -a)).norm();
        let away = det4(&unscaled(r.rho * 0.5, 1.0, mu, -principal_a(2.0 * PI, r.rho * 0.5))).norm();
        assert!(at_root < 1e-6 * away, "{at_root} {away}");
    }

    #[test]
    fn null_vector_residual_at_root() {
        let mu = mu_frac(0.5, 8.0);
        let res = find_high_freq_root(8.0, mu, 1.0).unwrap();
        let m = build_matrix(res.rho, 8.0, mu, 1.0).unwrap();
        let v = res.null_vector;
        let r = norm4(&matvec4(&m.entries, &v)) / crate::linalg::frobenius4(&m.entries);
        assert!(r <= 1e-8, "{r}");
        assert!((norm4(&v) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn null_direction_is_column_scaling_invariant() {
        let mu = 3.0;
        let res = find_scan_root_with(0.6, mu, 1.0, &DispersionOptions::default()).unwrap();
        let m = build_matrix(res.rho, 0.6, mu, 1.0).unwrap();
        let d = [2.0, 0.5, 7.0, 0.1];
        let mut scaled = m.entries;
        for row in scaled.iter_mut() {
            for j in 0..4 {
                row[j] *= d[j];
            }
        }
        let u = null_vector_of(&scaled, 1e-6).unwrap();
        let mut back = [Complex::zero(); 4];
        for j in 0..4 {
            back[j] = u[j] * d[j];
        }
        let nb = norm4(&back);
        let dot: C<f64> = (0..4).map(|j| back[j].conj() * res.null_vector[j]).sum();
        assert!((dot.norm() / nb - 1.0).abs() < 1e-6, "{}", dot.norm() / nb);
    }

    #[test]
    fn sweep_methods_and_duplicates() {
        let s = SlabParams::new(1.0, 3, Symbol::fractional(1.0, 1.0, 0.5)).unwrap();
        let rows = sweep_dispersion(&s, &[0.01, 1.0, 64.0, 64.0], &DispersionOptions::default()).unwrap();
        let methods: Vec<Method> = rows.iter().map(|r| r.method).collect();
        assert_eq!(methods, vec![Method::LowFreq, Method::Scan, Method::Bracket, Method::Bracket]);
        for r in &rows {
            assert!(r.result.is_ok(), "{:?}", r.result);
        }
        let a = rows[2].result.as_ref().unwrap().rho;
        let b = rows[3].result.as_ref().unwrap().rho;
        assert_eq!(a, b);
        assert!(sweep_dispersion(&s, &[], &DispersionOptions::default()).is_err());
    }

    #[test]
    fn scan_root_matches_reference_at_unit_modulus() {
        // r = 1/2, |xi| = 1: kappa = rho |xi| / mu = 0.0804208 (extended precision)
        let mu = mu_frac(0.5, 1.0);
        let r = find_scan_root_with(1.0, mu, 1.0, &DispersionOptions::default()).unwrap();
        assert!((r.rho.re - 0.585719645505).abs() < 1e-9, "{}", r.rho);
    }

    #[test]
    fn reconstructed_mode_satisfies_equations() {
        for &(xi, r) in &[(8.0, 0.5), (64.0, 0.5), (1.0, 0.5)] {
            let mu = mu_frac(r, xi);
            let res = if xi > 2.0 {
                find_high_freq_root(xi, mu, 1.0).unwrap()
            } else {
                find_scan_root_with(xi, mu, 1.0, &DispersionOptions::default()).unwrap()
            };
            let m = reconstruct_mode(&res, xi, mu, 1.0, 128).unwrap();
            assert!(m.residuals.max_bulk() <= 1e-6, "{xi}: {:?}", m.residuals);
            assert!(m.residuals.bottom_v <= 1e-10 && m.residuals.bottom_w <= 1e-10, "{:?}", m.residuals);
            assert!(m.residuals.max_boundary() <= 1e-6, "{xi}: {:?}", m.residuals);
            assert!((m.h - c(1.0)).norm() < 1e-12);
        }
        let res = find_low_freq_root(0.01, &slab(1.0)).unwrap();
        let m = reconstruct_mode(&res, 0.01, 1.0, 1.0, 64).unwrap();
        assert!(m.residuals.max_bulk() <= 1e-6, "{:?}", m.residuals);
        assert!(m.residuals.max_boundary() <= 1e-6, "{:?}", m.residuals);
    }

    #[test]
    fn residuals_shrink_with_root_tolerance() {
        let xi = 1.0;
        let mu = mu_frac(0.5, xi);
        let mut last = f64::INFINITY;
        for &tol in &[1e-4, 1e-6, 1e-8] {
            let o = DispersionOptions { bisect_rtol: tol, ..Default::default() };
            let r = find_scan_root_with(xi, mu, 1.0, &o).unwrap();
            let m = reconstruct_mode(&r, xi, mu, 1.0, 64).unwrap();
            let b = m.residuals.max_boundary();
            assert!(b < last, "{tol}: {b} vs {last}");
            last = b;
        }
    }

    #[test]
    fn f32_det_sign() {
        let mu = 1.0f32 + 2.0 * std::f32::consts::PI * 8.0;
        let (lo, hi) = high_freq_bracket(8.0f32, mu);
        let a = det_dispersion(Complex::new(lo, 0.0), 8.0f32, mu, 1.0).unwrap();
        let b = det_dispersion(Complex::new(hi, 0.0), 8.0f32, mu, 1.0).unwrap();
        assert!(a.re < 0.0 && b.re > 0.0);
    }

    proptest! {
        #[test]
        fn roots_lie_in_normalised_window(r in prop::sample::select(vec![0.0, 0.25, 0.5, 1.0]), lx in 0.3..2.0f64) {
            let xi = 10f64.powf(lx);
            let mu = mu_frac(r, xi);
            prop_assume!(high_freq_precondition(xi, mu) < 1.0);
            let res = find_high_freq_root(xi, mu, 1.0).unwrap();
            let kap = res.rho.re * xi / mu;
            prop_assert!((1.0 / (4.0 * PI)..=1.0 + 1.0 / (4.0 * PI)).contains(&kap));
            prop_assert!(res.rho.re > 0.0);
        }

        #[test]
        fn det_vanishes_at_zero(lx in -3.0..2.0f64, mu in 0.1..100.0f64, ell in 0.2..3.0f64) {
            let xi = 10f64.powf(lx);
            prop_assert_eq!(det_dispersion(c(0.0), xi, mu, ell).unwrap(), Complex::zero());
        }
    }
}
